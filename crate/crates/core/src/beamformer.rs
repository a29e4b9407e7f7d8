//! Hybrid beamformer assembly after training, and the evaluation metrics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArrayModel, PsiMuPosition};

/// Largest tolerated condition number of `QQᴴ` before zero forcing gives up.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Frame length in slots: a 0.2 ms frame of 0.4 μs slots.
pub const FRAME_SLOTS: usize = 500;

/// Amplitude pattern `m` and the resulting `M = diag(m) F`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolographicBeamformer {
    amplitudes: Vec<f64>,
    matrix: DMatrix<Complex64>,
}

impl HolographicBeamformer {
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// The `N × L` matrix `M`.
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }
}

/// Averages the users' preferred patterns into one holographic beamformer.
pub fn assemble_holographic(patterns: &[&[f64]], array: &ArrayModel) -> Result<HolographicBeamformer> {
    let Some(first) = patterns.first() else {
        return Err(Error::Contract("no patterns to assemble".into()));
    };
    let n = array.n_elements();
    if patterns.iter().any(|p| p.len() != n) || first.len() != n {
        return Err(Error::Contract(format!("patterns must have {n} entries")));
    }
    let k = patterns.len() as f64;
    let amplitudes: Vec<f64> = (0..n)
        .map(|e| (patterns.iter().map(|p| p[e]).sum::<f64>() / k).clamp(0.0, 1.0))
        .collect();
    let mut matrix = array.feed_response().clone();
    for (mut row, m) in matrix.row_iter_mut().zip(&amplitudes) {
        row *= Complex64::new(*m, 0.0);
    }
    Ok(HolographicBeamformer { amplitudes, matrix })
}

fn channel_matrix(channels: &[Vec<Complex64>], n: usize) -> Result<DMatrix<Complex64>> {
    if channels.is_empty() || channels.iter().any(|h| h.len() != n) {
        return Err(Error::Contract(format!("need at least one channel of length {n}")));
    }
    Ok(DMatrix::from_fn(channels.len(), n, |k, e| channels[k][e]))
}

/// Unnormalised zero-forcing precoder `Ṽ = Qᴴ(QQᴴ)⁻¹` for the effective
/// channel `Q = H M`, evaluated as the pseudo-inverse of `Q` through its SVD
/// so the residual scales with `cond(Q)` rather than `cond(QQᴴ)`.
pub fn zero_forcing(channels: &[Vec<Complex64>], holo: &HolographicBeamformer) -> Result<DMatrix<Complex64>> {
    let h = channel_matrix(channels, holo.amplitudes.len())?;
    let q = h * &holo.matrix;
    let (k, l) = q.shape();
    let degenerate = |condition| Error::DegenerateGeometry {
        condition,
        limit: CONDITION_LIMIT,
    };
    if k > l {
        return Err(degenerate(f64::INFINITY));
    }
    let svd = q.svd(true, true);
    let largest = svd.singular_values.max();
    let smallest = svd.singular_values.min();
    let condition = if smallest > 0.0 { (largest / smallest).powi(2) } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(degenerate(condition));
    }
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let mut scaled = u.adjoint();
    for (mut row, s) in scaled.row_iter_mut().zip(svd.singular_values.iter()) {
        row *= Complex64::new(1.0 / s, 0.0);
    }
    Ok(v_t.adjoint() * scaled)
}

/// Water-filling over `K` parallel channels whose unit of delivered power
/// costs `g_k` of budget: `p_k = max{1/(ξ g_k) − σ², 0}` with
/// `Σ g_k p_k = P`. Solved exactly by sorting the floor levels `g_k σ²`.
pub fn water_fill(gains: &[f64], power: f64, noise_variance: f64) -> Result<Vec<f64>> {
    if gains.is_empty() || gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Domain("water-filling needs positive finite gains".into()));
    }
    if !(power.is_finite() && power > 0.0 && noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(Error::Domain(format!("budget {power} W, noise {noise_variance} W")));
    }
    let mut floors: Vec<f64> = gains.iter().map(|g| g * noise_variance).collect();
    floors.sort_by(f64::total_cmp);
    let mut level = 0.0;
    let mut partial = 0.0;
    for (n, &floor) in floors.iter().enumerate() {
        partial += floor;
        let candidate = (power + partial) / (n + 1) as f64;
        if n > 0 && candidate <= floor {
            break;
        }
        level = candidate;
    }
    Ok(gains
        .iter()
        .map(|g| ((level - g * noise_variance).max(0.0)) / g)
        .collect())
}

/// Powered zero-forcing precoder `V = Ṽ diag(√p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalBeamformer {
    pub unnormalized: DMatrix<Complex64>,
    pub powers: Vec<f64>,
    pub matrix: DMatrix<Complex64>,
}

/// Zero forcing on the true channels with water-filled powers under the
/// digital budget `Σ ‖v_k‖² = P`.
pub fn digital_beamformer(
    channels: &[Vec<Complex64>],
    holo: &HolographicBeamformer,
    power: f64,
    noise_variance: f64,
) -> Result<DigitalBeamformer> {
    let unnormalized = zero_forcing(channels, holo)?;
    let gains: Vec<f64> = unnormalized.column_iter().map(|c| c.norm_squared()).collect();
    let powers = water_fill(&gains, power, noise_variance)?;
    let mut matrix = unnormalized.clone();
    for (mut col, p) in matrix.column_iter_mut().zip(&powers) {
        col *= Complex64::new(p.sqrt(), 0.0);
    }
    Ok(DigitalBeamformer {
        unnormalized,
        powers,
        matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_user: Vec<f64>,
    pub sum: f64,
}

/// Received signal and interference powers for every user.
pub fn link_powers(
    channels: &[Vec<Complex64>],
    holo: &HolographicBeamformer,
    digital: &DMatrix<Complex64>,
) -> Result<Vec<(f64, f64)>> {
    let h = channel_matrix(channels, holo.amplitudes.len())?;
    let response = h * &holo.matrix * digital;
    Ok((0..channels.len())
        .map(|k| {
            let row = response.row(k);
            let signal = row[k].norm_sqr();
            let interference = row.iter().map(|x| x.norm_sqr()).sum::<f64>() - signal;
            (signal, interference.max(0.0))
        })
        .collect())
}

/// Per-user rate `log₂(1 + S_k/(σ² + I_k))` and their sum.
pub fn sum_rate(
    channels: &[Vec<Complex64>],
    holo: &HolographicBeamformer,
    digital: &DMatrix<Complex64>,
    noise_variance: f64,
) -> Result<RateReport> {
    let per_user: Vec<f64> = link_powers(channels, holo, digital)?
        .into_iter()
        .map(|(s, i)| (1.0 + s / (noise_variance + i)).log2())
        .collect();
    let sum = per_user.iter().sum();
    Ok(RateReport { per_user, sum })
}

/// Power radiated by the surface, `η tr(M V Vᴴ Mᴴ)`.
pub fn radiated_power(holo: &HolographicBeamformer, digital: &DMatrix<Complex64>, efficiency: f64) -> f64 {
    efficiency * (&holo.matrix * digital).norm_squared()
}

/// Squared distance between true and estimated positions in the `(ψ, μ)` plane.
pub fn training_error(truth: PsiMuPosition, estimate: PsiMuPosition) -> f64 {
    (truth.psi - estimate.psi).powi(2) + (truth.mu - estimate.mu).powi(2)
}

/// Sum rate discounted by the share of the frame spent training.
pub fn throughput(rate: f64, training_slots: usize, frame_slots: usize) -> f64 {
    let used = (training_slots as f64 / frame_slots as f64).min(1.0);
    (1.0 - used) * rate
}

/// Largest entry magnitude of `H M V − I`.
pub fn zf_residual(channels: &[Vec<Complex64>], holo: &HolographicBeamformer, v: &DMatrix<Complex64>) -> Result<f64> {
    let h = channel_matrix(channels, holo.amplitudes.len())?;
    let product = h * &holo.matrix * v;
    let k = product.nrows();
    let identity = DMatrix::<Complex64>::identity(k, k);
    Ok((product - identity).iter().map(|x| x.norm()).fold(0.0, f64::max))
}
