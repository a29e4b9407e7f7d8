use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{digest_u64, PsiMuPosition, SystemConfig};

/// Cell-centred `I × J` sampling of a rectangle in the `(ψ, μ)` domain.
///
/// Indices are 1-based throughout: `ψ_i = ψ_min + (ψ_max − ψ_min)(2i − 1)/(2I)`
/// and likewise for `μ_j`. Flattened storage is angle-major, `(i − 1)·J + (j − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub psi_bounds: (f64, f64),
    pub mu_bounds: (f64, f64),
    pub n_psi: usize,
    pub n_mu: usize,
}

impl SampleGrid {
    pub fn new(psi_bounds: (f64, f64), mu_bounds: (f64, f64), n_psi: usize, n_mu: usize) -> Result<Self> {
        let (p0, p1) = psi_bounds;
        let (m0, m1) = mu_bounds;
        if n_psi == 0 || n_mu == 0 {
            return Err(Error::Config("grid counts must be positive".into()));
        }
        if !(p0.is_finite() && p1.is_finite() && -1.0 <= p0 && p0 <= p1 && p1 <= 1.0) {
            return Err(Error::Config(format!("invalid ψ bounds [{p0}, {p1}]")));
        }
        if !(m0.is_finite() && m1.is_finite() && 0.0 <= m0 && m0 <= m1) {
            return Err(Error::Config(format!("invalid μ bounds [{m0}, {m1}]")));
        }
        Ok(Self {
            psi_bounds,
            mu_bounds,
            n_psi,
            n_mu,
        })
    }

    /// The same angular sampling collapsed onto a single distance row at `mu`.
    pub fn single_row(&self, mu: f64) -> Result<Self> {
        Self::new(self.psi_bounds, (mu, mu), self.n_psi, 1)
    }

    pub fn len(&self) -> usize {
        self.n_psi * self.n_mu
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn psi(&self, i: usize) -> f64 {
        debug_assert!((1..=self.n_psi).contains(&i));
        cell_center(self.psi_bounds, self.n_psi, i)
    }

    pub fn mu(&self, j: usize) -> f64 {
        debug_assert!((1..=self.n_mu).contains(&j));
        cell_center(self.mu_bounds, self.n_mu, j)
    }

    pub fn point(&self, i: usize, j: usize) -> PsiMuPosition {
        PsiMuPosition {
            psi: self.psi(i),
            mu: self.mu(j),
        }
    }

    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        (i - 1) * self.n_mu + (j - 1)
    }

    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        (1..=self.n_psi).contains(&i) && (1..=self.n_mu).contains(&j)
    }

    /// All `(i, j, point)` triples in storage order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize, PsiMuPosition)> + '_ {
        (1..=self.n_psi).flat_map(move |i| (1..=self.n_mu).map(move |j| (i, j, self.point(i, j))))
    }

    /// Digest of the generating system configuration together with this grid.
    pub fn codebook_hash(&self, config: &SystemConfig) -> u64 {
        let mut hasher = Sha256::new();
        config.hash_into(&mut hasher);
        for v in [self.psi_bounds.0, self.psi_bounds.1, self.mu_bounds.0, self.mu_bounds.1] {
            hasher.update(v.to_le_bytes());
        }
        hasher.update((self.n_psi as u64).to_le_bytes());
        hasher.update((self.n_mu as u64).to_le_bytes());
        digest_u64(hasher)
    }
}

pub(crate) fn cell_center(bounds: (f64, f64), count: usize, index: usize) -> f64 {
    bounds.0 + (bounds.1 - bounds.0) / (2.0 * count as f64) * (2.0 * index as f64 - 1.0)
}
