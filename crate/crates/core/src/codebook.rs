//! Hierarchical angular codebooks, single-beam codebooks and their
//! superposition into distance-sweeping multi-beam codewords.

mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::model::{steering_vector, ArrayModel};
use crate::optimizer::{
    optimize_codeword, optimize_single_beam, pattern_gain, reference_gain, Codeword, CodewordLabel, GainTarget,
    SweepOptions,
};

pub use io::{CodebookKind, HEADER_LEN, MAGIC};

/// Whether column `i` of an `I`-column grid lies in the coverage of codeword
/// `p` of layer `s`: `⌈i·2ˢ/I⌉` and `p` have the same parity.
pub fn coverage_membership(i: usize, s: usize, p: usize, n_columns: usize) -> Result<bool> {
    if n_columns == 0 || !(1..=n_columns).contains(&i) || s == 0 || !(1..=2).contains(&p) {
        return Err(Error::Contract(format!(
            "coverage query out of range: i={i}, s={s}, p={p}, I={n_columns}"
        )));
    }
    if s >= usize::BITS as usize {
        return Err(Error::Contract(format!("layer {s} is too deep")));
    }
    let scaled = i << s;
    let block = scaled.div_ceil(n_columns);
    Ok(block % 2 == p % 2)
}

/// Deepest layer whose beams are no narrower than the array resolution
/// `λ/(N d)`: `⌊log₂(range · N d / λ)⌋`.
pub fn num_layers(psi_range: f64, n_elements: usize, spacing: f64, wavelength: f64) -> Result<usize> {
    let ratio = psi_range * n_elements as f64 * spacing / wavelength;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Domain(format!("cannot size layers for ratio {ratio}")));
    }
    // The small offset keeps exact powers of two from rounding down.
    let layers = (ratio.log2() + 1e-9).floor();
    if layers < 1.0 {
        return Err(Error::Domain(format!(
            "ψ range {psi_range} is narrower than one beam of a {n_elements}-element array"
        )));
    }
    Ok(layers as usize)
}

/// Knobs for codebook generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookOptions {
    /// Desired in-coverage gain in units of the RMS element drive.
    pub desired_gain: f64,
    pub sweeps: SweepOptions,
}

impl Default for CodebookOptions {
    fn default() -> Self {
        Self {
            desired_gain: 1.0,
            sweeps: SweepOptions::default(),
        }
    }
}

/// `2S` codewords, two per layer, each covering half the columns of its layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularCodebook {
    grid: SampleGrid,
    layers: usize,
    codewords: Vec<Codeword>,
    hash: u64,
}

impl AngularCodebook {
    fn from_parts(grid: SampleGrid, layers: usize, amplitudes: Vec<Vec<f64>>, hash: u64) -> Result<Self> {
        check_layers(&grid, layers)?;
        if amplitudes.len() != 2 * layers {
            return Err(Error::Contract(format!(
                "{} codewords for {layers} layers",
                amplitudes.len()
            )));
        }
        let codewords = amplitudes
            .into_iter()
            .enumerate()
            .map(|(k, m)| {
                Codeword::new(
                    m,
                    CodewordLabel::Layer {
                        layer: k / 2 + 1,
                        index: k % 2 + 1,
                    },
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grid,
            layers,
            codewords,
            hash,
        })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Codeword `p` ∈ {1, 2} of layer `s` ∈ 1..=S.
    pub fn codeword(&self, s: usize, p: usize) -> &Codeword {
        assert!((1..=self.layers).contains(&s) && (1..=2).contains(&p), "no codeword ({s}, {p})");
        &self.codewords[(s - 1) * 2 + (p - 1)]
    }

    /// All codewords, layer-major.
    pub fn codewords(&self) -> &[Codeword] {
        &self.codewords
    }

    pub fn config_hash(&self) -> u64 {
        self.hash
    }

    /// Ratio of mean in-coverage to mean out-of-coverage gain on the sample
    /// grid, one value per codeword in storage order.
    pub fn coverage_contrast(&self, array: &ArrayModel) -> Vec<f64> {
        let aggregate = array.element_aggregate(1);
        let steering: Vec<_> = self.grid.points().map(|(i, _, p)| (i, steering_vector(p, array))).collect();
        self.codewords
            .iter()
            .map(|cw| {
                let CodewordLabel::Layer { layer, index } = cw.label else {
                    unreachable!("angular codewords carry layer labels")
                };
                let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
                for (i, b) in &steering {
                    let g = pattern_gain(b, &aggregate, cw.amplitudes());
                    if coverage_membership(*i, layer, index, self.grid.n_psi).expect("grid column") {
                        inside += g;
                        n_in += 1;
                    } else {
                        outside += g;
                        n_out += 1;
                    }
                }
                (inside / n_in as f64) / (outside / n_out as f64)
            })
            .collect()
    }
}

fn check_layers(grid: &SampleGrid, layers: usize) -> Result<()> {
    if layers == 0 || layers >= usize::BITS as usize || grid.n_psi != 1usize << layers {
        return Err(Error::Config(format!(
            "angular codebook needs I = 2^S, got I = {} and S = {layers}",
            grid.n_psi
        )));
    }
    Ok(())
}

/// Synthesises every layer's pair of codewords, covering the full μ range at
/// the selected columns.
pub fn build_angular_codebook(
    grid: &SampleGrid,
    array: &ArrayModel,
    layers: usize,
    options: CodebookOptions,
) -> Result<AngularCodebook> {
    check_layers(grid, layers)?;
    let desired = options.desired_gain * reference_gain(&array.element_aggregate(1));
    let amplitudes = (0..2 * layers)
        .into_par_iter()
        .map(|k| {
            let (s, p) = (k / 2 + 1, k % 2 + 1);
            let target = GainTarget::from_coverage(grid, desired, |i, _| {
                coverage_membership(i, s, p, grid.n_psi).expect("grid column")
            });
            optimize_codeword(grid, &target, array, options.sweeps).map(|d| d.codeword.amplitudes().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    AngularCodebook::from_parts(*grid, layers, amplitudes, grid.codebook_hash(array.config()))
}

/// One binary single-beam pattern per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleBeamCodebook {
    grid: SampleGrid,
    patterns: Vec<Codeword>,
    hash: u64,
}

impl SingleBeamCodebook {
    fn from_parts(grid: SampleGrid, amplitudes: Vec<Vec<f64>>, hash: u64) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::Contract(format!(
                "{} patterns for a grid of {} cells",
                amplitudes.len(),
                grid.len()
            )));
        }
        let patterns = amplitudes
            .into_iter()
            .zip(grid.points())
            .map(|(m, (i, j, _))| Codeword::new(m, CodewordLabel::Cell { angle: i, distance: j }))
            .collect::<Result<Vec<_>>>()?;
        if let Some(bad) = patterns.iter().find(|p| !p.binary) {
            return Err(Error::Contract(format!("pattern {:?} is not binary", bad.label)));
        }
        Ok(Self { grid, patterns, hash })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    /// Pattern aimed at cell `(i, j)`, 1-based.
    pub fn pattern(&self, i: usize, j: usize) -> &Codeword {
        assert!(self.grid.contains_cell(i, j), "no cell ({i}, {j})");
        &self.patterns[self.grid.flat_index(i, j)]
    }

    /// All patterns in grid storage order.
    pub fn patterns(&self) -> &[Codeword] {
        &self.patterns
    }

    pub fn config_hash(&self) -> u64 {
        self.hash
    }
}

pub fn build_single_beam_codebook(
    grid: &SampleGrid,
    array: &ArrayModel,
    options: SweepOptions,
) -> Result<SingleBeamCodebook> {
    let points: Vec<_> = grid.points().map(|(_, _, p)| p).collect();
    let amplitudes = points
        .into_par_iter()
        .map(|p| optimize_single_beam(p, array, options).codeword.amplitudes().to_vec())
        .collect();
    SingleBeamCodebook::from_parts(*grid, amplitudes, grid.codebook_hash(array.config()))
}

/// Mean of the single-beam patterns for distance row `j` at the given
/// columns. Pure arithmetic: no optimisation is run.
pub fn assemble_distance_adaptive(angles: &[usize], j: usize, sbc: &SingleBeamCodebook) -> Result<Codeword> {
    if angles.is_empty() {
        return Err(Error::Contract("no angles to superpose".into()));
    }
    if let Some(&bad) = angles.iter().find(|&&i| !sbc.grid.contains_cell(i, j)) {
        return Err(Error::Contract(format!("cell ({bad}, {j}) is outside the codebook grid")));
    }
    let n = sbc.patterns[0].len();
    let mut sum = vec![0.0; n];
    for &i in angles {
        for (acc, m) in sum.iter_mut().zip(sbc.pattern(i, j).amplitudes()) {
            *acc += m;
        }
    }
    let k = angles.len() as f64;
    let mean = sum.into_iter().map(|s| (s / k).clamp(0.0, 1.0)).collect();
    Codeword::new(mean, CodewordLabel::Superposed { distance: j })
}

/// `J` multi-beam codewords, one per distance row, serving a fixed angle set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceAdaptiveCodebook {
    angles: Vec<usize>,
    codewords: Vec<Codeword>,
}

impl DistanceAdaptiveCodebook {
    pub fn assemble(angles: &[usize], sbc: &SingleBeamCodebook) -> Result<Self> {
        let codewords = (1..=sbc.grid.n_mu)
            .map(|j| assemble_distance_adaptive(angles, j, sbc))
            .collect::<Result<_>>()?;
        Ok(Self {
            angles: angles.to_vec(),
            codewords,
        })
    }

    pub fn angles(&self) -> &[usize] {
        &self.angles
    }

    /// Codeword for distance row `j`, 1-based.
    pub fn codeword(&self, j: usize) -> &Codeword {
        &self.codewords[j - 1]
    }

    pub fn codewords(&self) -> &[Codeword] {
        &self.codewords
    }
}
