use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use holotrain::experiment::{
    aggregate, evaluate, run_experiment, run_scheme, write_summary_csv, CodebookSet, ExperimentConfig, Profile,
    Scenario,
};
use holotrain::model::ArrayModel;
use holotrain::training::{overhead, raw_slots, substream, MeasurementModel, NoiseKey, Scheme};
use holotrain::{experiment, Error};

#[derive(Parser)]
#[command(name = "holotrain", version, about = "Holographic-surface multi-user beam training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the angular and single-beam codebooks and write them to disk.
    GenCodebook(Common),
    /// Run one trial of every selected scheme and print the transcripts as JSON.
    Train(TrainArgs),
    /// Run the full Monte-Carlo experiment and write summary.csv and trials.jsonl.
    Sweep(SweepArgs),
    /// Print the training overhead of every scheme.
    Overhead(OverheadArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with system keys and an optional [experiment] table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk", value_parser = parse::<Profile>)]
    profile: Profile,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Codebook directory (defaults to <out-dir>/codebooks).
    #[arg(long)]
    codebooks: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse::<Scheme>)]
    schemes: Option<Vec<Scheme>>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Number of users.
    #[arg(long, default_value_t = 3)]
    users: usize,
    #[arg(long, value_parser = parse::<Scenario>)]
    scenario: Option<Scenario>,
    /// SNR in dB (defaults to the configured noise variance).
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long, default_value_t = 64)]
    n_psi: usize,
    #[arg(long, default_value_t = 10)]
    n_mu: usize,
    #[arg(long, default_value_t = 10)]
    users: usize,
    #[arg(long, default_value_t = 3)]
    candidates: usize,
    /// Also print the slot count with both codewords of a layer counted.
    #[arg(long)]
    raw: bool,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_toml_str(&text, self.profile)?
            }
            None => ExperimentConfig::profile(self.profile),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(schemes) = &self.schemes {
            config.schemes = schemes.clone();
        }
        Ok(config)
    }

    fn codebook_dir(&self) -> PathBuf {
        self.codebooks.clone().unwrap_or_else(|| self.out_dir.join("codebooks"))
    }
}

fn gen_codebook(args: Common) -> Result<()> {
    let config = args.experiment()?;
    config.validate()?;
    let array = ArrayModel::new(config.system.clone())?;
    let start = Instant::now();
    let books = CodebookSet::generate(&config, &array)?;
    let paths = books.save(&args.codebook_dir())?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    let contrast = books.angular.coverage_contrast(&array);
    let worst = contrast.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "{} angular codewords, {} single-beam patterns, minimum coverage contrast {worst:.2} ({:.1} s)",
        books.angular.codewords().len(),
        books.single_beam.patterns().len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = args.common.experiment()?;
    if let Some(s) = args.scenario {
        config.scenario = s;
    }
    config.validate()?;
    let books = CodebookSet::load(&args.common.codebook_dir(), &config)?;
    let array = ArrayModel::new(config.system.clone())?;
    let grid = config.grid()?;
    let mut rng = substream("placement", &[config.seed, args.users as u64, args.trial]);
    let users = experiment::sample_users(config.scenario, args.users, &grid, &mut rng)?;
    let (noise, snr) = match args.snr_db {
        Some(snr) => (experiment::noise_variance_from_snr(snr), snr),
        None => (config.system.noise_variance_w, -10.0 * config.system.noise_variance_w.log10()),
    };
    let mm = MeasurementModel::new(noise, users.len())?;
    let key = NoiseKey {
        seed: config.seed,
        users: users.len(),
        trial: args.trial,
    };
    let mut outcomes = Vec::new();
    for &scheme in &config.schemes {
        let transcript = run_scheme(scheme, &users, &books, &array, &mm, key, config.candidates)?;
        outcomes.push(evaluate(transcript, &users, &books, &array, noise, snr, config.frame_slots)?);
    }
    let doc = serde_json::json!({
        "seed": config.seed,
        "trial": args.trial,
        "users": users,
        "outcomes": outcomes,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(o) = outcomes.iter().find(|o| o.degenerate) {
        return Err(Error::DegenerateGeometry {
            condition: f64::INFINITY,
            limit: holotrain::beamformer::CONDITION_LIMIT,
        })
        .with_context(|| format!("zero forcing failed for scheme {}", o.scheme));
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = args.common.experiment()?;
    if let Some(t) = args.trials {
        config.trials = t;
    }
    config.validate()?;
    let books = CodebookSet::load(&args.common.codebook_dir(), &config)?;
    let out = &args.common.out_dir;
    std::fs::create_dir_all(out)?;
    let mut jsonl = BufWriter::new(File::create(out.join("trials.jsonl"))?);
    let mut records = Vec::new();
    let start = Instant::now();
    run_experiment(&config, &books, args.workers, |record| {
        serde_json::to_writer(&mut jsonl, &record)?;
        jsonl.write_all(b"\n")?;
        records.push(record);
        Ok(())
    })?;
    jsonl.flush()?;
    let rows = aggregate(&records)?;
    write_csv(&rows, &config, &out.join("summary.csv"))?;
    let degenerate: usize = rows.iter().map(|r| r.degenerate).sum();
    println!(
        "{} trials, {} summary rows, {degenerate} degenerate evaluations ({:.1} s)",
        records.len(),
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn write_csv(rows: &[experiment::SummaryRow], config: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    write_summary_csv(rows, config, &mut file)?;
    file.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn print_overhead(args: OverheadArgs) -> Result<()> {
    if !args.n_psi.is_power_of_two() || args.n_mu == 0 || args.users == 0 || args.candidates == 0 {
        return Err(Error::Config("n-psi must be a power of two and all counts positive".into()).into());
    }
    for scheme in Scheme::ALL {
        let slots = overhead(scheme, args.n_psi, args.n_mu, args.users, args.candidates);
        if args.raw {
            let raw = raw_slots(scheme, args.n_psi, args.n_mu, args.users, args.candidates);
            println!("{:<14}{slots:>6}{raw:>6}", scheme.name());
        } else {
            println!("{:<14}{slots:>6}", scheme.name());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::DegenerateGeometry { .. }) => 3,
        Some(
            Error::Config(_)
            | Error::MissingCodebook(_)
            | Error::ConfigMismatch { .. }
            | Error::VersionMismatch { .. }
            | Error::CorruptCodebook(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCodebook(args) => gen_codebook(args),
        Command::Train(args) => train(args),
        Command::Sweep(args) => sweep(args),
        Command::Overhead(args) => print_overhead(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
