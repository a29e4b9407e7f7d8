//! Array geometry, feed response and user channels.
//!
//! The surface is a linear array of `N` amplitude-controlled elements centred
//! on the origin, element `n` (1-based) sitting at `δ_n · d` with
//! `δ_n = (2n − N − 1)/2`. `L` feeds inject a traveling reference wave; the
//! response of feed `l` at element `n` is
//!
//! ```text
//! F[n,l] = √η · exp(−α |δ_n d − x_l|) · exp(−j k_s (δ_n d − x_l))
//! ```
//!
//! Users are described in the `(ψ, μ)` domain, `ψ = cos θ` and
//! `μ = (1 − cos²θ)/r`, where the second-order expansion of the
//! element-to-user distance becomes linear in both coordinates.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Propagation speed used to derive the wavelength from the carrier.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Physical parameters of the surface and the link budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub carrier_frequency_hz: f64,
    pub n_elements: usize,
    pub element_spacing_m: f64,
    pub n_feeds: usize,
    /// Propagation constant of the reference wave along the surface (rad/m).
    pub propagation_constant: f64,
    /// Attenuation of the reference wave along the surface (1/m).
    pub loss_per_m: f64,
    /// Radiation efficiency of an element, in (0, 1].
    pub element_efficiency: f64,
    pub power_w: f64,
    pub noise_variance_w: f64,
}

impl SystemConfig {
    /// 30 GHz surface with `n_elements` at quarter-wavelength spacing,
    /// ten feeds, `k_s = 2√3π/λ`, `α = 2`, unit efficiency and power.
    pub fn with_elements(n_elements: usize) -> Self {
        let frequency = 30.0e9;
        let wavelength = SPEED_OF_LIGHT / frequency;
        Self {
            carrier_frequency_hz: frequency,
            n_elements,
            element_spacing_m: wavelength / 4.0,
            n_feeds: 10,
            propagation_constant: 2.0 * 3f64.sqrt() * PI / wavelength,
            loss_per_m: 2.0,
            element_efficiency: 1.0,
            power_w: 1.0,
            noise_variance_w: 0.01,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    pub fn aperture(&self) -> f64 {
        (self.n_elements as f64 - 1.0) * self.element_spacing_m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.carrier_frequency_hz.is_finite() && self.carrier_frequency_hz > 0.0) {
            return bad("frequency_hz must be positive");
        }
        if self.n_elements < 2 {
            return bad("n_elements must be at least 2");
        }
        if self.n_feeds < 1 {
            return bad("n_feeds must be at least 1");
        }
        if !(self.element_spacing_m.is_finite() && self.element_spacing_m > 0.0) {
            return bad("element_spacing_m must be positive");
        }
        if !(self.element_efficiency > 0.0 && self.element_efficiency <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if !(self.loss_per_m.is_finite() && self.loss_per_m >= 0.0) {
            return bad("alpha_per_m must be non-negative");
        }
        if !self.propagation_constant.is_finite() {
            return bad("k_s_rad_per_m must be finite");
        }
        if !(self.power_w.is_finite() && self.power_w > 0.0) {
            return bad("power_w must be positive");
        }
        if !(self.noise_variance_w.is_finite() && self.noise_variance_w >= 0.0) {
            return bad("noise_var_w must be non-negative");
        }
        Ok(())
    }

    /// Parses the key/value configuration format. Unknown top-level tables
    /// (such as `[experiment]`) are ignored here.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SystemConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_config()
    }

    /// Stable 64-bit digest of every field, used to tag codebook files.
    pub fn config_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        self.hash_into(&mut hasher);
        digest_u64(hasher)
    }

    pub(crate) fn hash_into(&self, hasher: &mut Sha256) {
        for v in [
            self.carrier_frequency_hz,
            self.element_spacing_m,
            self.propagation_constant,
            self.loss_per_m,
            self.element_efficiency,
            self.power_w,
        ] {
            hasher.update(v.to_le_bytes());
        }
        hasher.update((self.n_elements as u64).to_le_bytes());
        hasher.update((self.n_feeds as u64).to_le_bytes());
    }
}

pub(crate) fn digest_u64(hasher: Sha256) -> u64 {
    let out = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

/// On-disk form of [`SystemConfig`]; key names are part of the file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfigFile {
    pub frequency_hz: f64,
    pub n_elements: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_spacing_m: Option<f64>,
    pub n_feeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_s_rad_per_m: Option<f64>,
    pub alpha_per_m: f64,
    pub eta: f64,
    pub power_w: f64,
    pub noise_var_w: f64,
}

impl SystemConfigFile {
    pub fn into_config(self) -> Result<SystemConfig> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::Config("frequency_hz must be positive".into()));
        }
        let wavelength = SPEED_OF_LIGHT / self.frequency_hz;
        let config = SystemConfig {
            carrier_frequency_hz: self.frequency_hz,
            n_elements: self.n_elements,
            element_spacing_m: self.element_spacing_m.unwrap_or(wavelength / 4.0),
            n_feeds: self.n_feeds,
            propagation_constant: self
                .k_s_rad_per_m
                .unwrap_or(2.0 * 3f64.sqrt() * PI / wavelength),
            loss_per_m: self.alpha_per_m,
            element_efficiency: self.eta,
            power_w: self.power_w,
            noise_variance_w: self.noise_var_w,
        };
        config.validate()?;
        Ok(config)
    }
}

impl From<&SystemConfig> for SystemConfigFile {
    fn from(c: &SystemConfig) -> Self {
        Self {
            frequency_hz: c.carrier_frequency_hz,
            n_elements: c.n_elements,
            element_spacing_m: Some(c.element_spacing_m),
            n_feeds: c.n_feeds,
            k_s_rad_per_m: Some(c.propagation_constant),
            alpha_per_m: c.loss_per_m,
            eta: c.element_efficiency,
            power_w: c.power_w,
            noise_var_w: c.noise_variance_w,
        }
    }
}

/// User location in range/azimuth form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPosition {
    pub r: f64,
    pub theta: f64,
}

impl PolarPosition {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Domain(format!("range must be positive, got {r}")));
        }
        if !(theta > 0.0 && theta < PI) {
            return Err(Error::Domain(format!("azimuth must lie in (0, π), got {theta}")));
        }
        Ok(Self { r, theta })
    }
}

/// User location in the `(ψ, μ)` domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiMuPosition {
    pub psi: f64,
    pub mu: f64,
}

impl PsiMuPosition {
    pub fn new(psi: f64, mu: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&psi) {
            return Err(Error::Domain(format!("ψ must lie in [-1, 1], got {psi}")));
        }
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::Domain(format!("μ must be non-negative, got {mu}")));
        }
        Ok(Self { psi, mu })
    }

    /// Far-field point at angle `psi`.
    pub fn far(psi: f64) -> Result<Self> {
        Self::new(psi, 0.0)
    }
}

pub fn psi_mu_from_polar(p: PolarPosition) -> Result<PsiMuPosition> {
    let p = PolarPosition::new(p.r, p.theta)?;
    let psi = p.theta.cos();
    Ok(PsiMuPosition {
        psi,
        mu: (1.0 - psi * psi) / p.r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: usize,
    pub position: PsiMuPosition,
    pub path_gain: Complex64,
}

impl User {
    /// Unit path gain, the default used throughout the experiments.
    pub fn new(id: usize, position: PsiMuPosition) -> Self {
        Self {
            id,
            position,
            path_gain: Complex64::new(1.0, 0.0),
        }
    }

    pub fn with_path_gain(id: usize, position: PsiMuPosition, path_gain: Complex64) -> Result<Self> {
        if !(path_gain.norm() > 0.0) {
            return Err(Error::Domain("path gain must be non-zero".into()));
        }
        Ok(Self {
            id,
            position,
            path_gain,
        })
    }
}

/// Geometry plus the precomputed feed response of a surface.
#[derive(Debug, Clone)]
pub struct ArrayModel {
    config: SystemConfig,
    offsets: Vec<f64>,
    feed_positions: Vec<f64>,
    feed_response: DMatrix<Complex64>,
}

impl ArrayModel {
    /// Builds the array with `L` feeds evenly spread over the aperture,
    /// `x_l = (l − (L+1)/2) · N d / L`.
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let positions = default_feed_positions(&config);
        Self::with_feed_positions(config, positions)
    }

    pub fn with_feed_positions(config: SystemConfig, feed_positions: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if feed_positions.len() != config.n_feeds {
            return Err(Error::Config(format!(
                "expected {} feed positions, got {}",
                config.n_feeds,
                feed_positions.len()
            )));
        }
        if feed_positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("feed positions must be finite".into()));
        }
        let offsets = element_offsets(config.n_elements);
        let feed_response = feed_response_matrix(&config, &feed_positions);
        Ok(Self {
            config,
            offsets,
            feed_positions,
            feed_response,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn n_elements(&self) -> usize {
        self.config.n_elements
    }

    pub fn n_feeds(&self) -> usize {
        self.config.n_feeds
    }

    /// Half-integer offsets `δ_n`, so element `n` sits at `δ_n · d`.
    pub fn element_offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn feed_positions(&self) -> &[f64] {
        &self.feed_positions
    }

    /// The `N × L` matrix `F`.
    pub fn feed_response(&self) -> &DMatrix<Complex64> {
        &self.feed_response
    }

    /// Per-element aggregate `γ_n = Σ_l √(P/(LK)) F[n,l]`: the complex drive
    /// each element sees when every feed carries the constant training weight.
    pub fn element_aggregate(&self, users: usize) -> Vec<Complex64> {
        let users = users.max(1) as f64;
        let weight = (self.config.power_w / (self.config.n_feeds as f64 * users)).sqrt();
        self.feed_response
            .row_iter()
            .map(|row| row.iter().sum::<Complex64>() * weight)
            .collect()
    }

    pub fn rayleigh_distance(&self) -> f64 {
        rayleigh_distance(&self.config)
    }
}

/// `δ_n = (2n − N − 1)/2` for `n = 1..=N`.
pub fn element_offsets(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| (2.0 * i as f64 - n as f64 - 1.0) / 2.0)
        .collect()
}

pub fn default_feed_positions(config: &SystemConfig) -> Vec<f64> {
    let l = config.n_feeds as f64;
    let span = config.n_elements as f64 * config.element_spacing_m / l;
    (1..=config.n_feeds)
        .map(|i| (i as f64 - (l + 1.0) / 2.0) * span)
        .collect()
}

pub fn feed_response_matrix(config: &SystemConfig, feed_positions: &[f64]) -> DMatrix<Complex64> {
    let offsets = element_offsets(config.n_elements);
    let amp = config.element_efficiency.sqrt();
    DMatrix::from_fn(config.n_elements, feed_positions.len(), |n, l| {
        let displacement = offsets[n] * config.element_spacing_m - feed_positions[l];
        let magnitude = amp * (-config.loss_per_m * displacement.abs()).exp();
        Complex64::from_polar(magnitude, -config.propagation_constant * displacement)
    })
}

/// `2D²/λ` with aperture `D = (N − 1) d`.
pub fn rayleigh_distance(config: &SystemConfig) -> f64 {
    let aperture = config.aperture();
    2.0 * aperture * aperture / config.wavelength()
}

/// Unit-norm near-field steering vector under the second-order distance
/// expansion. The common phase `e^{−j2πr/λ}` is omitted.
pub fn steering_vector(pos: PsiMuPosition, array: &ArrayModel) -> Vec<Complex64> {
    let k = array.config.wavenumber();
    let d = array.config.element_spacing_m;
    let scale = 1.0 / (array.n_elements() as f64).sqrt();
    array
        .offsets
        .iter()
        .map(|&delta| {
            let x = delta * d;
            let path = -x * pos.psi + x * x * pos.mu / 2.0;
            Complex64::from_polar(scale, -k * path)
        })
        .collect()
}

/// Row channel `h = β √N b(ψ, μ)`.
pub fn channel(user: &User, array: &ArrayModel) -> Vec<Complex64> {
    let gain = user.path_gain * (array.n_elements() as f64).sqrt();
    steering_vector(user.position, array)
        .into_iter()
        .map(|b| b * gain)
        .collect()
}
