//! Beam training protocols: the one-shot two-phase scheme and the four
//! baselines it is compared against.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::{AngularCodebook, DistanceAdaptiveCodebook, SingleBeamCodebook};
use crate::error::{Error, Result};
use crate::model::{channel, ArrayModel, User};
use crate::optimizer::Codeword;

/// Independent generator for one `(domain, parts…)` key.
pub fn substream(domain: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// What is broadcast during training: pilot `s` through the constant digital
/// weight `v = √(P/(LK))·1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementModel {
    pub pilot: Complex64,
    pub noise_variance: f64,
    /// Number of users sharing the power budget.
    pub users: usize,
}

impl MeasurementModel {
    pub fn new(noise_variance: f64, users: usize) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::Domain(format!("noise variance {noise_variance}")));
        }
        if users == 0 {
            return Err(Error::Contract("at least one user is required".into()));
        }
        Ok(Self {
            pilot: Complex64::new(1.0, 0.0),
            noise_variance,
            users,
        })
    }

    pub fn digital_weight(&self, array: &ArrayModel) -> Vec<Complex64> {
        let w = (array.config().power_w / (array.n_feeds() * self.users) as f64).sqrt();
        vec![Complex64::new(w, 0.0); array.n_feeds()]
    }
}

/// Unit-variance circularly symmetric complex Gaussian sample.
pub fn standard_complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `|h diag(m) F v s + n|²` with `n ~ CN(0, σ²)` drawn from `rng`.
pub fn measure_power(
    user: &User,
    codeword: &Codeword,
    array: &ArrayModel,
    mm: &MeasurementModel,
    rng: &mut impl Rng,
) -> f64 {
    let probe = Probe::new(user, array, mm);
    probe.power(codeword.amplitudes(), mm.noise_variance.sqrt() * standard_complex_normal(rng))
}

/// Per-user noise generators. Every user owns a stream keyed by
/// `(seed, K, trial, user)`, so draws do not depend on scheduling, and
/// each slot consumes one draw whatever the noise level.
pub struct NoiseStreams {
    streams: Vec<ChaCha8Rng>,
    sigma: f64,
}

/// Identifies the noise realisation of one Monte-Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub users: usize,
    pub trial: u64,
}

impl NoiseStreams {
    pub fn new(key: NoiseKey, noise_variance: f64) -> Self {
        let streams = (0..key.users)
            .map(|u| substream("noise", &[key.seed, key.users as u64, key.trial, u as u64]))
            .collect();
        Self {
            streams,
            sigma: noise_variance.sqrt(),
        }
    }

    pub fn draw(&mut self, user: usize) -> Complex64 {
        self.sigma * standard_complex_normal(&mut self.streams[user])
    }
}

/// A user's noiseless response coefficients `c_n = s h_n γ_n`.
struct Probe {
    coeffs: Vec<Complex64>,
}

impl Probe {
    fn new(user: &User, array: &ArrayModel, mm: &MeasurementModel) -> Self {
        let gamma = array.element_aggregate(mm.users);
        let coeffs = channel(user, array)
            .into_iter()
            .zip(gamma)
            .map(|(h, g)| h * g * mm.pilot)
            .collect();
        Self { coeffs }
    }

    fn power(&self, amplitudes: &[f64], noise: Complex64) -> f64 {
        let y: Complex64 = self.coeffs.iter().zip(amplitudes).map(|(c, m)| c * *m).sum();
        (y + noise).norm_sqr()
    }
}

struct Session {
    probes: Vec<Probe>,
    noise: NoiseStreams,
    powers: Vec<Vec<f64>>,
}

impl Session {
    fn new(users: &[User], array: &ArrayModel, mm: &MeasurementModel, key: NoiseKey) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Contract("training needs at least one user".into()));
        }
        if key.users != users.len() {
            return Err(Error::Contract(format!(
                "noise key is for {} users, got {}",
                key.users,
                users.len()
            )));
        }
        Ok(Self {
            probes: users.iter().map(|u| Probe::new(u, array, mm)).collect(),
            noise: NoiseStreams::new(key, mm.noise_variance),
            powers: vec![Vec::new(); users.len()],
        })
    }

    fn measure(&mut self, user: usize, codeword: &Codeword) -> f64 {
        let noise = self.noise.draw(user);
        let p = self.probes[user].power(codeword.amplitudes(), noise);
        self.powers[user].push(p);
        p
    }

    /// Every user listens to every codeword in turn (a broadcast sweep).
    fn broadcast<'a>(&mut self, codewords: impl Iterator<Item = &'a Codeword>) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.probes.len()];
        for cw in codewords {
            for (u, row) in out.iter_mut().enumerate() {
                row.push(self.measure(u, cw));
            }
        }
        out
    }
}

/// Index of the largest value; ties go to the earliest.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Bottom-layer index from per-layer feedback: `ν_s = 2(ν_{s−1} − 1) + τ_s`.
/// Returns every `ν_s`.
pub fn feedback_to_index(feedback: &[u8]) -> Result<Vec<usize>> {
    let mut nu = 1usize;
    feedback
        .iter()
        .map(|&tau| {
            if !(1..=2).contains(&tau) {
                return Err(Error::Contract(format!("feedback value {tau} is not 1 or 2")));
            }
            nu = 2 * (nu - 1) + tau as usize;
            Ok(nu)
        })
        .collect()
}

/// Centre of bottom-layer cell `ν` of `S` layers.
pub fn estimate_psi(nu: usize, layers: usize, bounds: (f64, f64)) -> f64 {
    let cells = (1u64 << layers) as f64;
    bounds.0 + (bounds.1 - bounds.0) / (2.0 * cells) * (2.0 * nu as f64 - 1.0)
}

/// Centre of distance cell `ζ` of `J`.
pub fn estimate_mu(zeta: usize, n_mu: usize, bounds: (f64, f64)) -> f64 {
    bounds.0 + (bounds.1 - bounds.0) / (2.0 * n_mu as f64) * (2.0 * zeta as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Proposed,
    TwoStage,
    DftDistance,
    Exhaustive,
    FarField,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::TwoStage,
        Scheme::DftDistance,
        Scheme::Exhaustive,
        Scheme::FarField,
        Scheme::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::TwoStage => "two-stage",
            Scheme::DftDistance => "dft-distance",
            Scheme::Exhaustive => "exhaustive",
            Scheme::FarField => "far-field",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Slot counts as tabulated for the schemes: two codewords per layer count as
/// one angle slot. `I` must be a power of two.
pub fn overhead(scheme: Scheme, n_psi: usize, n_mu: usize, users: usize, candidates: usize) -> usize {
    let s = n_psi.ilog2() as usize;
    match scheme {
        Scheme::Proposed => s + n_mu,
        Scheme::TwoStage => s + n_mu * users,
        Scheme::DftDistance => n_psi + candidates * n_mu * users,
        Scheme::Exhaustive => n_psi * n_mu,
        Scheme::FarField => s,
    }
}

/// Slots actually transmitted, with both codewords of a layer counted.
pub fn raw_slots(scheme: Scheme, n_psi: usize, n_mu: usize, users: usize, candidates: usize) -> usize {
    let s = n_psi.ilog2() as usize;
    match scheme {
        Scheme::Proposed => 2 * s + n_mu,
        Scheme::TwoStage => 2 * s + n_mu * users,
        Scheme::FarField => 2 * s,
        Scheme::DftDistance | Scheme::Exhaustive => overhead(scheme, n_psi, n_mu, users, candidates),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTranscript {
    pub user: usize,
    /// Per-layer choices `τ_s` (empty for schemes without an angular tree).
    pub feedback: Vec<u8>,
    /// `ν_s` for every layer.
    pub indices: Vec<usize>,
    /// Decided grid column.
    pub angle_index: usize,
    /// Decided distance row, absent for angle-only training.
    pub distance_index: Option<usize>,
    pub psi_hat: f64,
    pub mu_hat: f64,
    /// Power measured in every slot this user listened to, in order.
    pub powers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTranscript {
    pub scheme: Scheme,
    pub users: Vec<UserTranscript>,
    /// Codewords actually broadcast.
    pub slots_raw: usize,
    /// Overhead as tabulated by [`overhead`], one slot per layer pair.
    pub slots: usize,
}

fn angle_search(session: &mut Session, angular: &AngularCodebook) -> Vec<(Vec<u8>, Vec<usize>)> {
    let mut feedback = vec![Vec::with_capacity(angular.layers()); session.probes.len()];
    for s in 1..=angular.layers() {
        let pair = [angular.codeword(s, 1), angular.codeword(s, 2)];
        let powers = session.broadcast(pair.into_iter());
        for (fb, p) in feedback.iter_mut().zip(powers) {
            fb.push(if p[1] > p[0] { 2 } else { 1 });
        }
    }
    feedback
        .into_iter()
        .map(|fb| {
            let nu = feedback_to_index(&fb).expect("feedback is 1 or 2");
            (fb, nu)
        })
        .collect()
}

fn check_pair(angular: &AngularCodebook, sbc: &SingleBeamCodebook) -> Result<()> {
    let (a, b) = (angular.grid(), sbc.grid());
    if a.n_psi != b.n_psi || a.psi_bounds != b.psi_bounds {
        return Err(Error::Contract("angular and single-beam codebooks use different angle grids".into()));
    }
    Ok(())
}

/// One-shot training: a shared hierarchical angle sweep, then `J` multi-beam
/// codewords aimed at every decoded angle, one per distance row.
pub fn run_two_phase(
    users: &[User],
    angular: &AngularCodebook,
    sbc: &SingleBeamCodebook,
    array: &ArrayModel,
    mm: &MeasurementModel,
    key: NoiseKey,
) -> Result<TrainingTranscript> {
    check_pair(angular, sbc)?;
    let mut session = Session::new(users, array, mm, key)?;
    let angles = angle_search(&mut session, angular);

    let mut columns: Vec<usize> = angles.iter().map(|(_, nu)| *nu.last().expect("S ≥ 1")).collect();
    columns.sort_unstable();
    columns.dedup();
    let distance = DistanceAdaptiveCodebook::assemble(&columns, sbc)?;
    let sweep = session.broadcast(distance.codewords().iter());

    let grid = sbc.grid();
    let s = angular.layers();
    let transcripts = angles
        .into_iter()
        .zip(sweep)
        .enumerate()
        .map(|(u, ((feedback, indices), powers))| {
            let nu = *indices.last().expect("S ≥ 1");
            let zeta = argmax(&powers) + 1;
            UserTranscript {
                user: users[u].id,
                feedback,
                indices,
                angle_index: nu,
                distance_index: Some(zeta),
                psi_hat: estimate_psi(nu, s, grid.psi_bounds),
                mu_hat: estimate_mu(zeta, grid.n_mu, grid.mu_bounds),
                powers: std::mem::take(&mut session.powers[u]),
            }
        })
        .collect();
    Ok(TrainingTranscript {
        scheme: Scheme::Proposed,
        users: transcripts,
        slots_raw: raw_slots(Scheme::Proposed, grid.n_psi, grid.n_mu, users.len(), 0),
        slots: overhead(Scheme::Proposed, grid.n_psi, grid.n_mu, users.len(), 0),
    })
}

/// Sweeps every single-beam pattern; each user keeps its strongest cell.
pub fn run_exhaustive(
    users: &[User],
    sbc: &SingleBeamCodebook,
    array: &ArrayModel,
    mm: &MeasurementModel,
    key: NoiseKey,
) -> Result<TrainingTranscript> {
    let mut session = Session::new(users, array, mm, key)?;
    let grid = *sbc.grid();
    let sweep = session.broadcast(sbc.patterns().iter());
    let cells: Vec<(usize, usize)> = grid.points().map(|(i, j, _)| (i, j)).collect();
    let transcripts = sweep
        .into_iter()
        .enumerate()
        .map(|(u, powers)| {
            let (i, j) = cells[argmax(&powers)];
            UserTranscript {
                user: users[u].id,
                feedback: Vec::new(),
                indices: Vec::new(),
                angle_index: i,
                distance_index: Some(j),
                psi_hat: grid.psi(i),
                mu_hat: grid.mu(j),
                powers,
            }
        })
        .collect();
    let slots = overhead(Scheme::Exhaustive, grid.n_psi, grid.n_mu, users.len(), 0);
    Ok(TrainingTranscript {
        scheme: Scheme::Exhaustive,
        users: transcripts,
        slots_raw: slots,
        slots,
    })
}

/// Angle-only hierarchical training with a codebook built for plane waves;
/// the distance estimate is fixed at `μ̂ = 0`.
pub fn run_far_field(
    users: &[User],
    far_angular: &AngularCodebook,
    array: &ArrayModel,
    mm: &MeasurementModel,
    key: NoiseKey,
) -> Result<TrainingTranscript> {
    let mut session = Session::new(users, array, mm, key)?;
    let angles = angle_search(&mut session, far_angular);
    let grid = far_angular.grid();
    let s = far_angular.layers();
    let transcripts = angles
        .into_iter()
        .enumerate()
        .map(|(u, (feedback, indices))| {
            let nu = *indices.last().expect("S ≥ 1");
            UserTranscript {
                user: users[u].id,
                feedback,
                indices,
                angle_index: nu,
                distance_index: None,
                psi_hat: estimate_psi(nu, s, grid.psi_bounds),
                mu_hat: 0.0,
                powers: std::mem::take(&mut session.powers[u]),
            }
        })
        .collect();
    Ok(TrainingTranscript {
        scheme: Scheme::FarField,
        users: transcripts,
        slots_raw: raw_slots(Scheme::FarField, grid.n_psi, 1, users.len(), 0),
        slots: overhead(Scheme::FarField, grid.n_psi, 1, users.len(), 0),
    })
}

/// Shared angle sweep, then a per-user scan of the `J` single-beam patterns at
/// that user's decoded column, one user after another.
pub fn run_two_stage(
    users: &[User],
    angular: &AngularCodebook,
    sbc: &SingleBeamCodebook,
    array: &ArrayModel,
    mm: &MeasurementModel,
    key: NoiseKey,
) -> Result<TrainingTranscript> {
    check_pair(angular, sbc)?;
    let mut session = Session::new(users, array, mm, key)?;
    let angles = angle_search(&mut session, angular);
    let grid = *sbc.grid();
    let s = angular.layers();
    let mut transcripts = Vec::with_capacity(users.len());
    for (u, (feedback, indices)) in angles.into_iter().enumerate() {
        let nu = *indices.last().expect("S ≥ 1");
        let powers: Vec<f64> = (1..=grid.n_mu).map(|j| session.measure(u, sbc.pattern(nu, j))).collect();
        let zeta = argmax(&powers) + 1;
        transcripts.push(UserTranscript {
            user: users[u].id,
            feedback,
            indices,
            angle_index: nu,
            distance_index: Some(zeta),
            psi_hat: estimate_psi(nu, s, grid.psi_bounds),
            mu_hat: estimate_mu(zeta, grid.n_mu, grid.mu_bounds),
            powers: std::mem::take(&mut session.powers[u]),
        });
    }
    Ok(TrainingTranscript {
        scheme: Scheme::TwoStage,
        users: transcripts,
        slots_raw: raw_slots(Scheme::TwoStage, grid.n_psi, grid.n_mu, users.len(), 0),
        slots: overhead(Scheme::TwoStage, grid.n_psi, grid.n_mu, users.len(), 0),
    })
}

/// Far-field beam sweep over all `I` columns, then for each user an exhaustive
/// distance scan at its `Q` strongest columns.
pub fn run_dft_distance(
    users: &[User],
    far_sbc: &SingleBeamCodebook,
    sbc: &SingleBeamCodebook,
    array: &ArrayModel,
    mm: &MeasurementModel,
    key: NoiseKey,
    candidates: usize,
) -> Result<TrainingTranscript> {
    let grid = *sbc.grid();
    if candidates == 0 || candidates > grid.n_psi {
        return Err(Error::Config(format!(
            "candidate count {candidates} outside 1..={}",
            grid.n_psi
        )));
    }
    if far_sbc.grid().n_psi != grid.n_psi || far_sbc.grid().psi_bounds != grid.psi_bounds || far_sbc.grid().n_mu != 1 {
        return Err(Error::Contract("far-field sweep must be a single row over the same angles".into()));
    }
    let mut session = Session::new(users, array, mm, key)?;
    let sweep = session.broadcast(far_sbc.patterns().iter());
    let mut transcripts = Vec::with_capacity(users.len());
    for (u, angle_powers) in sweep.into_iter().enumerate() {
        let mut order: Vec<usize> = (0..grid.n_psi).collect();
        // Stable sort keeps lower columns first among equal powers.
        order.sort_by(|&a, &b| angle_powers[b].total_cmp(&angle_powers[a]));
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for &col in &order[..candidates] {
            for j in 1..=grid.n_mu {
                let p = session.measure(u, sbc.pattern(col + 1, j));
                if p > best.2 {
                    best = (col + 1, j, p);
                }
            }
        }
        let (i, j, _) = best;
        transcripts.push(UserTranscript {
            user: users[u].id,
            feedback: Vec::new(),
            indices: Vec::new(),
            angle_index: i,
            distance_index: Some(j),
            psi_hat: grid.psi(i),
            mu_hat: grid.mu(j),
            powers: std::mem::take(&mut session.powers[u]),
        });
    }
    let slots = overhead(Scheme::DftDistance, grid.n_psi, grid.n_mu, users.len(), candidates);
    Ok(TrainingTranscript {
        scheme: Scheme::DftDistance,
        users: transcripts,
        slots_raw: slots,
        slots,
    })
}
