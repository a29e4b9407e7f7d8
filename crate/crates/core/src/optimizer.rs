//! Amplitude pattern synthesis.
//!
//! Two engines live here:
//!
//! * [`optimize_codeword`] fits a multi-region gain target by cyclic
//!   coordinate descent. With every amplitude but `m_n` frozen, the squared
//!   gain at a sample is an exact quadratic in `m_n`; inside the coverage
//!   region the term `(|y| − D)²` is replaced by a second-order expansion of
//!   `|y|` around `m_n = 0`. Summing over samples gives `a m² + b m + c`,
//!   minimised in closed form on `[0, 1]`. Because the in-coverage terms are a
//!   surrogate, each candidate update is checked against the true objective
//!   and reverted if it would increase it.
//! * [`optimize_single_beam`] builds a binary pattern that maximises the gain
//!   toward a single point by greedily flipping elements.

use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::model::{steering_vector, ArrayModel, PsiMuPosition};

/// Lower bound applied to the frozen-part gain `c₀` before it is used as a
/// divisor in the in-coverage coefficients.
pub const GAIN_FLOOR: f64 = 1e-12;

static INVOCATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of optimizer runs started in this process.
pub fn invocation_count() -> u64 {
    INVOCATIONS.load(Ordering::Relaxed)
}

/// Desired gain on every grid sample: `D` inside the coverage set, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTarget {
    desired: f64,
    values: Vec<f64>,
    n_psi: usize,
    n_mu: usize,
}

impl GainTarget {
    pub fn from_coverage(grid: &SampleGrid, desired: f64, covered: impl Fn(usize, usize) -> bool) -> Self {
        let values = grid
            .points()
            .map(|(i, j, _)| if covered(i, j) { desired } else { 0.0 })
            .collect();
        Self {
            desired,
            values,
            n_psi: grid.n_psi,
            n_mu: grid.n_mu,
        }
    }

    /// `mask` is in grid storage order.
    pub fn from_mask(n_psi: usize, n_mu: usize, desired: f64, mask: &[bool]) -> Result<Self> {
        if mask.len() != n_psi * n_mu {
            return Err(Error::Contract(format!(
                "mask has {} entries for a {n_psi}×{n_mu} grid",
                mask.len()
            )));
        }
        Ok(Self {
            desired,
            values: mask.iter().map(|&c| if c { desired } else { 0.0 }).collect(),
            n_psi,
            n_mu,
        })
    }

    pub fn desired(&self) -> f64 {
        self.desired
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_psi, self.n_mu)
    }

    pub fn is_covered(&self, flat: usize) -> bool {
        self.desired > 0.0 && self.values[flat] > 0.0
    }
}

/// Coefficients of `f(x) = a x² + b x + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadCoeffs {
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }
}

impl std::ops::AddAssign for QuadCoeffs {
    fn add_assign(&mut self, o: Self) {
        self.a += o.a;
        self.b += o.b;
        self.c += o.c;
    }
}

/// Minimiser of a quadratic over `[0, 1]`.
///
/// Concave or flat (`a ≤ 0`): the endpoint farthest from the vertex. A purely
/// linear function picks the endpoint its slope favours and keeps `current`
/// when it is constant. Convex: the vertex clamped into the interval.
pub fn quadratic_min_unit_interval(q: QuadCoeffs, current: f64) -> f64 {
    if q.a > 0.0 {
        return (-q.b / (2.0 * q.a)).clamp(0.0, 1.0);
    }
    if q.a == 0.0 {
        return if q.b < 0.0 {
            1.0
        } else if q.b > 0.0 {
            0.0
        } else {
            current
        };
    }
    let vertex = -q.b / (2.0 * q.a);
    if vertex <= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Out-of-coverage coefficients for element `n` (0-based) at one sample,
/// evaluated from scratch: `|b m̃|² = a m_n² + b m_n + c` with
/// `m̃ = γ ⊙ m`, `a = |γ_n|² B[n,n]`, `b = 2 Re Σ_{n'≠n} γ̄_n γ_{n'} B[n,n'] m_{n'}`
/// and `c` the squared gain of the remaining elements.
pub fn case1_coeffs(steering: &[Complex64], aggregate: &[Complex64], amplitudes: &[f64], n: usize) -> QuadCoeffs {
    let own = steering[n] * aggregate[n];
    let rest: Complex64 = steering
        .iter()
        .zip(aggregate)
        .zip(amplitudes)
        .enumerate()
        .filter(|(k, _)| *k != n)
        .map(|(_, ((b, g), m))| b * g * *m)
        .sum();
    coeffs_from_parts(own, rest)
}

#[inline]
fn coeffs_from_parts(own: Complex64, rest: Complex64) -> QuadCoeffs {
    QuadCoeffs {
        a: own.norm_sqr(),
        b: 2.0 * (own.conj() * rest).re,
        c: rest.norm_sqr(),
    }
}

/// In-coverage coefficients for `(|y| − D)²`, obtained from the out-of-coverage
/// ones by expanding `|y| = √(a₀m² + b₀m + c₀)` to second order at `m = 0`.
pub fn case2_coeffs(base: QuadCoeffs, desired: f64) -> QuadCoeffs {
    if desired == 0.0 {
        return base;
    }
    let QuadCoeffs { a: a0, b: b0, c } = base;
    let c0 = c.max(GAIN_FLOOR);
    let root = c0.sqrt();
    QuadCoeffs {
        a: a0 - (4.0 * a0 * c0 - b0 * b0) * desired / (4.0 * c0 * root),
        b: b0 - b0 * desired / root,
        c: c0 - 2.0 * desired * root + desired * desired,
    }
}

/// Sweep budget shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub max_sweeps: usize,
    /// A sweep whose largest accepted amplitude change is at or below this
    /// ends the run.
    pub tolerance: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20,
            tolerance: 1e-6,
        }
    }
}

/// What a codeword was designed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodewordLabel {
    /// Codeword `p` (1 or 2) of layer `s` of a hierarchical codebook.
    Layer { layer: usize, index: usize },
    /// Single-beam pattern aimed at grid cell `(i, j)`.
    Cell { angle: usize, distance: usize },
    /// Superposition serving distance row `j` at a set of angles.
    Superposed { distance: usize },
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codeword {
    amplitudes: Vec<f64>,
    pub label: CodewordLabel,
    pub binary: bool,
}

impl Codeword {
    pub fn new(amplitudes: Vec<f64>, label: CodewordLabel) -> Result<Self> {
        if let Some(bad) = amplitudes.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Contract(format!("amplitude {bad} outside [0, 1]")));
        }
        let binary = amplitudes.iter().all(|&m| m == 0.0 || m == 1.0);
        Ok(Self {
            amplitudes,
            label,
            binary,
        })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }
}

/// Gain `|Σ_n b_n γ_n m_n|` of an amplitude pattern at one steering vector.
pub fn pattern_gain(steering: &[Complex64], aggregate: &[Complex64], amplitudes: &[f64]) -> f64 {
    steering
        .iter()
        .zip(aggregate)
        .zip(amplitudes)
        .map(|((b, g), m)| b * g * *m)
        .sum::<Complex64>()
        .norm()
}

/// RMS magnitude of the element aggregate, `‖γ‖₂/√N`. Normalised gain
/// targets are expressed in multiples of this value.
pub fn reference_gain(aggregate: &[Complex64]) -> f64 {
    let energy: f64 = aggregate.iter().map(|g| g.norm_sqr()).sum();
    (energy / aggregate.len() as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct CodewordDesign {
    pub codeword: Codeword,
    pub initial_objective: f64,
    /// True objective after every accepted coordinate update.
    pub objective_trace: Vec<f64>,
    /// Candidate updates rejected because they raised the true objective.
    pub reverts: usize,
    pub sweeps: usize,
}

impl CodewordDesign {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Element-major table of per-sample contributions `b_s,n γ_n`.
struct Contributions {
    samples: usize,
    data: Vec<Complex64>,
}

impl Contributions {
    fn new(grid: &SampleGrid, array: &ArrayModel, aggregate: &[Complex64]) -> Self {
        let n = array.n_elements();
        let samples = grid.len();
        let mut data = vec![Complex64::default(); n * samples];
        for (s, (_, _, point)) in grid.points().enumerate() {
            for (e, b) in steering_vector(point, array).into_iter().enumerate() {
                data[e * samples + s] = b * aggregate[e];
            }
        }
        Self { samples, data }
    }

    fn element(&self, e: usize) -> &[Complex64] {
        &self.data[e * self.samples..(e + 1) * self.samples]
    }
}

fn objective(fields: &[Complex64], targets: &[f64]) -> f64 {
    fields
        .iter()
        .zip(targets)
        .map(|(y, g)| {
            let r = y.norm() - g;
            r * r
        })
        .sum()
}

/// Coordinate-descent fit of `Σ (|b(ψ_i, μ_j) m̃| − G_ij)²` over `m ∈ [0, 1]^N`,
/// starting from `m = ½`.
pub fn optimize_codeword(
    grid: &SampleGrid,
    target: &GainTarget,
    array: &ArrayModel,
    options: SweepOptions,
) -> Result<CodewordDesign> {
    if target.shape() != (grid.n_psi, grid.n_mu) {
        return Err(Error::Contract(format!(
            "target shape {:?} does not match grid {}×{}",
            target.shape(),
            grid.n_psi,
            grid.n_mu
        )));
    }
    INVOCATIONS.fetch_add(1, Ordering::Relaxed);

    let n = array.n_elements();
    let aggregate = array.element_aggregate(1);
    let table = Contributions::new(grid, array, &aggregate);
    let targets = target.values();

    let mut m = vec![0.5; n];
    let mut fields = vec![Complex64::default(); grid.len()];
    for e in 0..n {
        for (y, g) in fields.iter_mut().zip(table.element(e)) {
            *y += g * m[e];
        }
    }
    let initial_objective = objective(&fields, targets);
    let mut current = initial_objective;
    let mut trace = Vec::new();
    let mut reverts = 0;
    let mut sweeps = 0;
    let mut candidate = fields.clone();

    while sweeps < options.max_sweeps {
        sweeps += 1;
        let mut largest_step: f64 = 0.0;
        for e in 0..n {
            let contrib = table.element(e);
            let mut total = QuadCoeffs::default();
            for (s, (g, y)) in contrib.iter().zip(&fields).enumerate() {
                let rest = y - g * m[e];
                let base = coeffs_from_parts(*g, rest);
                total += if targets[s] > 0.0 {
                    case2_coeffs(base, targets[s])
                } else {
                    base
                };
            }
            let proposal = quadratic_min_unit_interval(total, m[e]);
            let step = proposal - m[e];
            if step == 0.0 {
                continue;
            }
            for ((c, y), g) in candidate.iter_mut().zip(&fields).zip(contrib) {
                *c = y + g * step;
            }
            let value = objective(&candidate, targets);
            if value <= current {
                m[e] = proposal;
                std::mem::swap(&mut fields, &mut candidate);
                current = value;
                trace.push(value);
                largest_step = largest_step.max(step.abs());
            } else {
                reverts += 1;
            }
        }
        if largest_step <= options.tolerance {
            break;
        }
    }

    Ok(CodewordDesign {
        codeword: Codeword::new(m, CodewordLabel::Free)?,
        initial_objective,
        objective_trace: trace,
        reverts,
        sweeps,
    })
}

#[derive(Debug, Clone)]
pub struct SingleBeamDesign {
    pub codeword: Codeword,
    /// Gain toward the target after each per-element decision.
    pub gain_trace: Vec<f64>,
    pub sweeps: usize,
}

impl SingleBeamDesign {
    pub fn gain(&self) -> f64 {
        self.gain_trace.last().copied().unwrap_or(0.0)
    }
}

/// Greedy binary pattern maximising `|b(ψ, μ) diag(m) F v|`, starting from
/// all elements on. Each element is set to whichever of 0 or 1 gives the
/// larger gain with the others fixed (1 on ties); the run ends after a sweep
/// without flips or when the sweep budget is spent.
pub fn optimize_single_beam(pos: PsiMuPosition, array: &ArrayModel, options: SweepOptions) -> SingleBeamDesign {
    INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    let aggregate = array.element_aggregate(1);
    let contrib: Vec<Complex64> = steering_vector(pos, array)
        .into_iter()
        .zip(&aggregate)
        .map(|(b, g)| b * g)
        .collect();

    let (m, trace, sweeps) = greedy_binary(&contrib, options);
    SingleBeamDesign {
        codeword: Codeword::new(m, CodewordLabel::Free).expect("binary amplitudes"),
        gain_trace: trace,
        sweeps,
    }
}

/// Greedy on/off selection maximising `|Σ g_n m_n|`. Returns the pattern,
/// the gain after each decision and the number of sweeps run.
fn greedy_binary(contrib: &[Complex64], options: SweepOptions) -> (Vec<f64>, Vec<f64>, usize) {
    let mut m = vec![1.0; contrib.len()];
    let mut field: Complex64 = contrib.iter().sum();
    let mut trace = Vec::with_capacity(contrib.len() * 2);
    let mut sweeps = 0;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        let mut flipped = false;
        for (e, g) in contrib.iter().enumerate() {
            // Compare the current gain against the gain with element `e` toggled.
            let current = field.norm();
            let toggled = field + g * (1.0 - 2.0 * m[e]);
            let alternative = toggled.norm();
            let flip = if m[e] == 1.0 { alternative > current } else { alternative >= current };
            if flip {
                flipped = true;
                m[e] = 1.0 - m[e];
                field = toggled;
                trace.push(alternative);
            } else {
                trace.push(current);
            }
        }
        if !flipped {
            break;
        }
    }

    (m, trace, sweeps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(a: f64, b: f64) -> QuadCoeffs {
        QuadCoeffs { a, b, c: 0.0 }
    }

    #[test]
    fn unit_interval_minimiser() {
        assert!((quadratic_min_unit_interval(q(1.0, -0.6), 0.5) - 0.3).abs() < 1e-15);
        assert_eq!(quadratic_min_unit_interval(q(-1.0, 0.6), 0.5), 1.0);
        assert_eq!(quadratic_min_unit_interval(q(1.0, 0.4), 0.5), 0.0);
        assert_eq!(quadratic_min_unit_interval(q(1.0, -4.0), 0.5), 1.0);
        assert_eq!(quadratic_min_unit_interval(q(-1.0, 1.4), 0.5), 0.0);
        assert_eq!(quadratic_min_unit_interval(q(0.0, -1.0), 0.5), 1.0);
        assert_eq!(quadratic_min_unit_interval(q(0.0, 1.0), 0.5), 0.0);
        assert_eq!(quadratic_min_unit_interval(q(0.0, 0.0), 0.25), 0.25);
    }

    #[test]
    fn case1_single_element() {
        let b = [Complex64::new(1.0, 0.0)];
        let g = [Complex64::new(0.3, -0.4)];
        let c = case1_coeffs(&b, &g, &[0.7], 0);
        assert!((c.a - 0.25).abs() < 1e-15);
        assert_eq!((c.b, c.c), (0.0, 0.0));
    }

    #[test]
    fn case1_zero_state_has_no_cross_terms() {
        let array = ArrayModel::new(SystemConfig::with_elements(8)).unwrap();
        let b = steering_vector(PsiMuPosition::new(0.2, 0.1).unwrap(), &array);
        let g = array.element_aggregate(1);
        let c = case1_coeffs(&b, &g, &[0.0; 8], 3);
        assert_eq!((c.b, c.c), (0.0, 0.0));
        assert!((c.a - g[3].norm_sqr() / 8.0).abs() < 1e-15);
    }

    #[test]
    fn case2_examples() {
        let base = QuadCoeffs { a: 0.3, b: -0.2, c: 0.9 };
        assert_eq!(case2_coeffs(base, 0.0), base);

        let out = case2_coeffs(QuadCoeffs { a: 1.0, b: 0.0, c: 1.0 }, 1.0);
        assert!(out.a.abs() < 1e-15 && out.b.abs() < 1e-15 && out.c.abs() < 1e-15);

        let tiny = case2_coeffs(QuadCoeffs { a: 1.0, b: 0.5, c: 1e-30 }, 1.0);
        assert!(tiny.a.is_finite() && tiny.b.is_finite() && tiny.c.is_finite());
        let floored = case2_coeffs(QuadCoeffs { a: 1.0, b: 0.5, c: GAIN_FLOOR }, 1.0);
        assert_eq!(tiny, floored);
    }

    #[test]
    fn case2_matches_second_order_expansion_near_zero() {
        // (√f(x) − D)² and its surrogate agree to O(x³).
        let base = QuadCoeffs { a: 0.4, b: 0.3, c: 2.0 };
        let d = 0.8;
        let sur = case2_coeffs(base, d);
        for &x in &[1e-3, 2e-3] {
            let exact = (base.eval(x).sqrt() - d).powi(2);
            assert!((sur.eval(x) - exact).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_target_drives_pattern_to_zero() {
        // Half-wavelength spacing sampled over the whole visible range keeps
        // the quadratic form well conditioned.
        let mut config = SystemConfig::with_elements(8);
        config.element_spacing_m = config.wavelength() / 2.0;
        let array = ArrayModel::new(config).unwrap();
        let grid = SampleGrid::new((-1.0, 1.0), (0.0, 0.0), 16, 1).unwrap();
        let target = GainTarget::from_coverage(&grid, 1.0, |_, _| false);
        let design = optimize_codeword(&grid, &target, &array, SweepOptions::default()).unwrap();
        assert!(design.final_objective() <= 1e-6 * design.initial_objective);
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let array = ArrayModel::new(SystemConfig::with_elements(8)).unwrap();
        let grid = SampleGrid::new((-0.5, 0.5), (0.0, 0.1), 4, 2).unwrap();
        let target = GainTarget::from_mask(4, 3, 1.0, &[false; 12]).unwrap();
        assert!(matches!(
            optimize_codeword(&grid, &target, &array, SweepOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn random_target_beats_random_search() {
        let array = ArrayModel::new(SystemConfig::with_elements(8)).unwrap();
        let grid = SampleGrid::new((-0.5, 0.5), (0.005, 0.33), 4, 2).unwrap();
        let gamma = array.element_aggregate(1);
        let d = reference_gain(&gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mask: Vec<bool> = (0..8).map(|_| rng.random_bool(0.5)).collect();
        let target = GainTarget::from_mask(4, 2, d, &mask).unwrap();
        let design = optimize_codeword(&grid, &target, &array, SweepOptions::default()).unwrap();

        let steer: Vec<_> = grid.points().map(|(_, _, p)| steering_vector(p, &array)).collect();
        let eval = |m: &[f64]| -> f64 {
            steer
                .iter()
                .zip(target.values())
                .map(|(b, g)| (pattern_gain(b, &gamma, m) - g).powi(2))
                .sum()
        };
        let best_random = (0..1000)
            .map(|_| {
                let m: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
                eval(&m)
            })
            .fold(f64::INFINITY, f64::min);
        let final_obj = eval(design.codeword.amplitudes());
        assert!((final_obj - design.final_objective()).abs() < 1e-9);
        assert!(final_obj <= best_random, "{final_obj} > {best_random}");
    }

    #[test]
    fn single_element_beam_is_on() {
        let g = [Complex64::new(0.2, -0.7)];
        let (m, trace, _) = greedy_binary(&g, SweepOptions::default());
        assert_eq!(m, vec![1.0]);
        assert!((trace.last().unwrap() - g[0].norm()).abs() < 1e-15);
    }

    #[test]
    fn single_beam_trace_is_monotone() {
        let array = ArrayModel::new(SystemConfig::with_elements(64)).unwrap();
        let d = optimize_single_beam(PsiMuPosition::new(-0.3, 0.1).unwrap(), &array, SweepOptions::default());
        assert!(d.gain_trace.windows(2).all(|w| w[1] >= w[0]));
        let b = steering_vector(PsiMuPosition::new(-0.3, 0.1).unwrap(), &array);
        let g = pattern_gain(&b, &array.element_aggregate(1), d.codeword.amplitudes());
        assert!((g - d.gain()).abs() < 1e-9);
    }

    #[test]
    fn codeword_rejects_out_of_box() {
        assert!(Codeword::new(vec![0.0, 1.2], CodewordLabel::Free).is_err());
        assert!(Codeword::new(vec![0.0, 1.0], CodewordLabel::Free).unwrap().binary);
        assert!(!Codeword::new(vec![0.5], CodewordLabel::Free).unwrap().binary);
    }
}
