//! Monte-Carlo experiment harness: scenarios, codebook sets, trial
//! execution and aggregation.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamformer::{assemble_holographic, digital_beamformer, radiated_power, sum_rate, throughput, training_error};
use crate::codebook::{build_angular_codebook, build_single_beam_codebook, AngularCodebook, CodebookOptions, SingleBeamCodebook};
use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::model::{channel, psi_mu_from_polar, ArrayModel, PolarPosition, PsiMuPosition, SystemConfig, User};
use crate::model::digest_u64;
use crate::optimizer::SweepOptions;
use crate::training::{
    run_dft_distance, run_exhaustive, run_far_field, run_two_phase, run_two_stage, substream, MeasurementModel,
    NoiseKey, Scheme, TrainingTranscript,
};

/// Version of the summary CSV layout.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// `r ∈ [3, 20]` m.
    Near,
    /// `r ∈ [80, 150]` m.
    Far,
    /// `r ∈ [3, 150]` m.
    Hybrid,
    /// Users placed on distinct grid-cell centres.
    GridCenters,
}

impl Scenario {
    pub fn distance_range(self) -> Option<(f64, f64)> {
        match self {
            Scenario::Near => Some((3.0, 20.0)),
            Scenario::Far => Some((80.0, 150.0)),
            Scenario::Hybrid => Some((3.0, 150.0)),
            Scenario::GridCenters => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Near => "near",
            Scenario::Far => "far",
            Scenario::Hybrid => "hybrid",
            Scenario::GridCenters => "grid-centers",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Scenario::Near, Scenario::Far, Scenario::Hybrid, Scenario::GridCenters]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// Draws `k` users. Angles are uniform in `θ` over the directions whose
/// `ψ = cos θ` lies inside the grid, distances uniform in the scenario range.
pub fn sample_users(scenario: Scenario, k: usize, grid: &SampleGrid, rng: &mut impl Rng) -> Result<Vec<User>> {
    match scenario.distance_range() {
        Some((r0, r1)) => {
            if !(r0 > 0.0 && r0 <= r1) {
                return Err(Error::Config(format!("empty distance range [{r0}, {r1}]")));
            }
            let theta_lo = grid.psi_bounds.1.acos();
            let theta_hi = grid.psi_bounds.0.acos();
            (0..k)
                .map(|id| {
                    let theta = rng.random_range(theta_lo..=theta_hi);
                    let r = rng.random_range(r0..=r1);
                    Ok(User::new(id, psi_mu_from_polar(PolarPosition::new(r, theta)?)?))
                })
                .collect()
        }
        None => {
            if k > grid.len() {
                return Err(Error::Config(format!("{k} users do not fit on {} cells", grid.len())));
            }
            let cells: Vec<_> = grid.points().map(|(_, _, p)| p).collect();
            Ok(sample(rng, grid.len(), k)
                .into_iter()
                .enumerate()
                .map(|(id, c)| User::new(id, cells[c]))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub psi_bounds: (f64, f64),
    pub mu_bounds: (f64, f64),
    pub n_psi: usize,
    pub n_mu: usize,
    pub layers: usize,
    /// User counts to evaluate; every trial is repeated for each.
    pub users: Vec<usize>,
    pub scenario: Scenario,
    /// `10 log₁₀(1/σ²)`; `inf` means noiseless.
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    /// Candidate angles kept by the DFT-distance baseline.
    pub candidates: usize,
    pub frame_slots: usize,
    pub sweeps: SweepOptions,
    pub desired_gain: f64,
}

impl ExperimentConfig {
    /// Defaults for a profile. `Desk` is a 256-element array on a 32 × 5 grid;
    /// `Full` uses the 64 × 10 grid with six layers.
    pub fn profile(profile: Profile) -> Self {
        let (n_psi, n_mu, layers, max_users) = match profile {
            Profile::Desk => (32, 5, 5, 8),
            Profile::Full => (64, 10, 6, 10),
        };
        Self {
            system: SystemConfig::with_elements(256),
            psi_bounds: (-0.5, 0.5),
            mu_bounds: (0.005, 0.33),
            n_psi,
            n_mu,
            layers,
            users: (1..=max_users).collect(),
            scenario: Scenario::Hybrid,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 100,
            schemes: Scheme::ALL.to_vec(),
            seed: 1,
            candidates: 3,
            frame_slots: crate::beamformer::FRAME_SLOTS,
            sweeps: SweepOptions::default(),
            desired_gain: 1.0,
        }
    }

    /// Applies a configuration file on top of a profile: system keys at the
    /// top level and optional overrides in an `[experiment]` table.
    pub fn from_toml_str(text: &str, profile: Profile) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            experiment: Option<Overrides>,
        }
        let mut config = Self::profile(profile);
        config.system = SystemConfig::from_toml_str(text)?;
        let file: File = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(o) = file.experiment {
            o.apply(&mut config)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let grid = self.grid()?;
        if self.layers == 0 || self.layers >= usize::BITS as usize || grid.n_psi != 1 << self.layers {
            return Err(Error::Config(format!("n_psi = {} is not 2^{}", self.n_psi, self.layers)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.users.is_empty() || self.users.contains(&0) {
            return Err(Error::Config("user counts must be positive".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("SNR list must be non-empty and finite or +inf".into()));
        }
        if self.candidates == 0 || self.candidates > self.n_psi {
            return Err(Error::Config(format!("candidates must lie in 1..={}", self.n_psi)));
        }
        if self.frame_slots == 0 {
            return Err(Error::Config("frame_slots must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SampleGrid> {
        SampleGrid::new(self.psi_bounds, self.mu_bounds, self.n_psi, self.n_mu)
    }

    /// Angle grid on the smallest-μ row, used by the plane-wave baseline.
    pub fn far_angular_grid(&self) -> Result<SampleGrid> {
        self.grid()?.single_row(self.mu_bounds.0)
    }

    /// Angle grid at `μ = 0`, swept by the DFT-distance baseline.
    pub fn far_sweep_grid(&self) -> Result<SampleGrid> {
        self.grid()?.single_row(0.0)
    }

    pub fn codebook_options(&self) -> CodebookOptions {
        CodebookOptions {
            desired_gain: self.desired_gain,
            sweeps: self.sweeps,
        }
    }

    /// Digest of everything that influences the results.
    pub fn config_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serialises"));
        digest_u64(hasher)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    psi_min: Option<f64>,
    psi_max: Option<f64>,
    mu_min: Option<f64>,
    mu_max: Option<f64>,
    n_psi: Option<usize>,
    n_mu: Option<usize>,
    layers: Option<usize>,
    users: Option<Vec<usize>>,
    scenario: Option<String>,
    snr_db: Option<Vec<f64>>,
    trials: Option<usize>,
    schemes: Option<Vec<String>>,
    seed: Option<u64>,
    candidates: Option<usize>,
    frame_slots: Option<usize>,
    sweeps: Option<usize>,
    desired_gain: Option<f64>,
}

impl Overrides {
    fn apply(self, c: &mut ExperimentConfig) -> Result<()> {
        c.psi_bounds = (self.psi_min.unwrap_or(c.psi_bounds.0), self.psi_max.unwrap_or(c.psi_bounds.1));
        c.mu_bounds = (self.mu_min.unwrap_or(c.mu_bounds.0), self.mu_max.unwrap_or(c.mu_bounds.1));
        c.n_psi = self.n_psi.unwrap_or(c.n_psi);
        c.n_mu = self.n_mu.unwrap_or(c.n_mu);
        c.layers = self.layers.unwrap_or(c.layers);
        if let Some(u) = self.users {
            c.users = u;
        }
        if let Some(s) = self.scenario {
            c.scenario = s.parse()?;
        }
        if let Some(s) = self.snr_db {
            c.snr_db = s;
        }
        c.trials = self.trials.unwrap_or(c.trials);
        if let Some(s) = self.schemes {
            c.schemes = s.iter().map(|n| n.parse()).collect::<Result<_>>()?;
        }
        c.seed = self.seed.unwrap_or(c.seed);
        c.candidates = self.candidates.unwrap_or(c.candidates);
        c.frame_slots = self.frame_slots.unwrap_or(c.frame_slots);
        if let Some(s) = self.sweeps {
            c.sweeps.max_sweeps = s;
        }
        c.desired_gain = self.desired_gain.unwrap_or(c.desired_gain);
        Ok(())
    }
}

/// Noise variance for an SNR in dB (`+inf` gives zero).
pub fn noise_variance_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// The four codebooks the schemes draw on.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    pub angular: AngularCodebook,
    pub single_beam: SingleBeamCodebook,
    pub far_angular: AngularCodebook,
    pub far_single_beam: SingleBeamCodebook,
}

const FILES: [&str; 4] = ["angular.rhscb", "single_beam.rhscb", "far_angular.rhscb", "far_single_beam.rhscb"];

impl CodebookSet {
    pub fn generate(config: &ExperimentConfig, array: &ArrayModel) -> Result<Self> {
        let options = config.codebook_options();
        Ok(Self {
            angular: build_angular_codebook(&config.grid()?, array, config.layers, options)?,
            single_beam: build_single_beam_codebook(&config.grid()?, array, config.sweeps)?,
            far_angular: build_angular_codebook(&config.far_angular_grid()?, array, config.layers, options)?,
            far_single_beam: build_single_beam_codebook(&config.far_sweep_grid()?, array, config.sweeps)?,
        })
    }

    /// Writes the four files into `dir` and returns their paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let blobs = [
            self.angular.to_bytes(),
            self.single_beam.to_bytes(),
            self.far_angular.to_bytes(),
            self.far_single_beam.to_bytes(),
        ];
        FILES
            .iter()
            .zip(blobs)
            .map(|(name, bytes)| {
                let path = dir.join(name);
                std::fs::write(&path, bytes)?;
                Ok(path)
            })
            .collect()
    }

    pub fn load(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingCodebook(path),
                _ => e.into(),
            })
        };
        let sys = &config.system;
        Ok(Self {
            angular: AngularCodebook::from_bytes(&read(FILES[0])?, &config.grid()?, sys)?,
            single_beam: SingleBeamCodebook::from_bytes(&read(FILES[1])?, &config.grid()?, sys)?,
            far_angular: AngularCodebook::from_bytes(&read(FILES[2])?, &config.far_angular_grid()?, sys)?,
            far_single_beam: SingleBeamCodebook::from_bytes(&read(FILES[3])?, &config.far_sweep_grid()?, sys)?,
        })
    }
}

/// Runs one training scheme.
pub fn run_scheme(
    scheme: Scheme,
    users: &[User],
    books: &CodebookSet,
    array: &ArrayModel,
    mm: &MeasurementModel,
    key: NoiseKey,
    candidates: usize,
) -> Result<TrainingTranscript> {
    match scheme {
        Scheme::Proposed => run_two_phase(users, &books.angular, &books.single_beam, array, mm, key),
        Scheme::TwoStage => run_two_stage(users, &books.angular, &books.single_beam, array, mm, key),
        Scheme::Exhaustive => run_exhaustive(users, &books.single_beam, array, mm, key),
        Scheme::FarField => run_far_field(users, &books.far_angular, array, mm, key),
        Scheme::DftDistance => {
            run_dft_distance(users, &books.far_single_beam, &books.single_beam, array, mm, key, candidates)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub slots: usize,
    pub slots_raw: usize,
    /// Per-user `(ψ − ψ̂)² + (μ − μ̂)²`.
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub sum_rate: f64,
    pub throughput: f64,
    /// Zero forcing was impossible; rate and throughput are recorded as zero.
    pub degenerate: bool,
    /// `η tr(M V Vᴴ Mᴴ) ≤ P` held for the assembled beamformer.
    pub leaky_power_ok: bool,
    pub transcript: TrainingTranscript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub trial: u64,
    pub users: usize,
    pub placements: Vec<User>,
    pub outcomes: Vec<SchemeOutcome>,
}

/// Evaluates one trained scheme: training error, then the hybrid beamformer
/// built from each user's pattern at its estimated cell, zero-forced on the
/// true channels.
pub fn evaluate(
    transcript: TrainingTranscript,
    users: &[User],
    books: &CodebookSet,
    array: &ArrayModel,
    noise_variance: f64,
    snr_db: f64,
    frame_slots: usize,
) -> Result<SchemeOutcome> {
    let errors: Vec<f64> = transcript
        .users
        .iter()
        .zip(users)
        .map(|(t, u)| {
            training_error(
                u.position,
                PsiMuPosition {
                    psi: t.psi_hat,
                    mu: t.mu_hat,
                },
            )
        })
        .collect();
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;

    let patterns: Vec<&[f64]> = transcript
        .users
        .iter()
        .map(|t| match t.distance_index {
            Some(j) => books.single_beam.pattern(t.angle_index, j).amplitudes(),
            None => books.far_single_beam.pattern(t.angle_index, 1).amplitudes(),
        })
        .collect();
    let holo = assemble_holographic(&patterns, array)?;
    let channels: Vec<_> = users.iter().map(|u| channel(u, array)).collect();
    let power = array.config().power_w;
    let (sum, degenerate, leaky_power_ok) = match digital_beamformer(&channels, &holo, power, noise_variance) {
        Ok(d) => {
            let rate = sum_rate(&channels, &holo, &d.matrix, noise_variance)?.sum;
            let leaked = radiated_power(&holo, &d.matrix, array.config().element_efficiency);
            (rate, false, leaked <= power * (1.0 + 1e-12))
        }
        Err(Error::DegenerateGeometry { .. }) => (0.0, true, true),
        Err(e) => return Err(e),
    };
    Ok(SchemeOutcome {
        scheme: transcript.scheme,
        snr_db,
        slots: transcript.slots,
        slots_raw: transcript.slots_raw,
        errors,
        mean_error,
        sum_rate: sum,
        throughput: throughput(sum, transcript.slots, frame_slots),
        degenerate,
        leaky_power_ok,
        transcript,
    })
}

/// Runs trial `trial` with `k` users. Placements depend only on
/// `(seed, k, trial)` and the noise only on `(seed, k, trial, user)`, so every
/// scheme and SNR sees the same users and the same normalised noise draws.
pub fn run_trial(
    config: &ExperimentConfig,
    books: &CodebookSet,
    array: &ArrayModel,
    k: usize,
    trial: u64,
) -> Result<ExperimentRecord> {
    let grid = config.grid()?;
    let mut rng = substream("placement", &[config.seed, k as u64, trial]);
    let users = sample_users(config.scenario, k, &grid, &mut rng)?;
    let key = NoiseKey {
        seed: config.seed,
        users: k,
        trial,
    };
    let mut outcomes = Vec::with_capacity(config.snr_db.len() * config.schemes.len());
    for &snr in &config.snr_db {
        let noise = noise_variance_from_snr(snr);
        let mm = MeasurementModel::new(noise, k)?;
        for &scheme in &config.schemes {
            let transcript = run_scheme(scheme, &users, books, array, &mm, key, config.candidates)?;
            outcomes.push(evaluate(transcript, &users, books, array, noise, snr, config.frame_slots)?);
        }
    }
    Ok(ExperimentRecord {
        seed: config.seed,
        trial,
        users: k,
        placements: users,
        outcomes,
    })
}

/// Runs every `(K, trial)` job, in parallel chunks, handing records to `sink`
/// in job order. `workers` fixes the pool size; results do not depend on it.
pub fn run_experiment(
    config: &ExperimentConfig,
    books: &CodebookSet,
    workers: Option<usize>,
    mut sink: impl FnMut(ExperimentRecord) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    let array = ArrayModel::new(config.system.clone())?;
    let jobs: Vec<(usize, u64)> = config
        .users
        .iter()
        .flat_map(|&k| (0..config.trials as u64).map(move |t| (k, t)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let chunk = 4 * pool.current_num_threads().max(1);
    for batch in jobs.chunks(chunk) {
        let records: Vec<Result<ExperimentRecord>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&(k, t)| run_trial(config, books, &array, k, t))
                .collect()
        });
        for record in records {
            sink(record?)?;
        }
    }
    Ok(())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Contract("no values to summarise".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One aggregated row per `(scheme, K, SNR)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub users: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub slots: usize,
    pub slots_raw: usize,
    pub error_mean: f64,
    pub error_std: f64,
    pub rate_mean: f64,
    pub rate_std: f64,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub degenerate: usize,
}

/// Groups outcomes by scheme, user count and SNR. Statistics are taken over
/// trials of the per-trial mean error, sum rate and throughput.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::Contract("no records to aggregate".into()));
    }
    let mut groups: Vec<((Scheme, usize, f64), Vec<&SchemeOutcome>)> = Vec::new();
    for r in records {
        for o in &r.outcomes {
            let key = (o.scheme, r.users, o.snr_db);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(o),
                None => groups.push((key, vec![o])),
            }
        }
    }
    groups.sort_by(|a, b| {
        (a.0 .0, a.0 .1)
            .cmp(&(b.0 .0, b.0 .1))
            .then(a.0 .2.total_cmp(&b.0 .2))
    });
    groups
        .into_iter()
        .map(|((scheme, users, snr_db), outs)| {
            let pick = |f: fn(&SchemeOutcome) -> f64| outs.iter().map(|o| f(o)).collect::<Vec<_>>();
            let (error_mean, error_std) = mean_std(&pick(|o| o.mean_error))?;
            let (rate_mean, rate_std) = mean_std(&pick(|o| o.sum_rate))?;
            let (throughput_mean, throughput_std) = mean_std(&pick(|o| o.throughput))?;
            Ok(SummaryRow {
                scheme,
                users,
                snr_db,
                trials: outs.len(),
                slots: outs[0].slots,
                slots_raw: outs[0].slots_raw,
                error_mean,
                error_std,
                rate_mean,
                rate_std,
                throughput_mean,
                throughput_std,
                degenerate: outs.iter().filter(|o| o.degenerate).count(),
            })
        })
        .collect()
}

/// Writes the summary as CSV. Every row carries the schema version, the
/// experiment config hash and the scenario.
pub fn write_summary_csv(rows: &[SummaryRow], config: &ExperimentConfig, out: impl Write) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        schema_version: u32,
        config_hash: String,
        scenario: &'static str,
        scheme: Scheme,
        users: usize,
        snr_db: f64,
        trials: usize,
        slots: usize,
        slots_raw: usize,
        error_mean: f64,
        error_std: f64,
        rate_mean: f64,
        rate_std: f64,
        throughput_mean: f64,
        throughput_std: f64,
        degenerate: usize,
    }
    let mut writer = csv::Writer::from_writer(out);
    let hash = format!("{:016x}", config.config_hash());
    for r in rows {
        writer.serialize(Row {
            schema_version: CSV_SCHEMA_VERSION,
            config_hash: hash.clone(),
            scenario: config.scenario.name(),
            scheme: r.scheme,
            users: r.users,
            snr_db: r.snr_db,
            trials: r.trials,
            slots: r.slots,
            slots_raw: r.slots_raw,
            error_mean: r.error_mean,
            error_std: r.error_std,
            rate_mean: r.rate_mean,
            rate_std: r.rate_std,
            throughput_mean: r.throughput_mean,
            throughput_std: r.throughput_std,
            degenerate: r.degenerate,
        })?;
    }
    writer.flush()?;
    Ok(())
}
