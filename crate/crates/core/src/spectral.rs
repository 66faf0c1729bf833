//! Hessian spectra: normalized index and energy-band labels.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spinglass::{riemannian_hessian, tangent_restriction, CouplingTensor};
use crate::theory::{ModelOrder, Thresholds};

/// Eigenvalues below this magnitude count as zero.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-3;

/// Largest Hessian side we are willing to eigensolve densely.
pub const MAX_DENSE_SIDE: usize = 4000;

/// Slack below `-e0` before a scaled loss is labelled below the ground state.
pub const GROUND_TOLERANCE: f64 = 0.05;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    if m.nrows() > MAX_DENSE_SIDE {
        return Err(Error::Capacity(format!(
            "dense eigensolve limited to side {MAX_DENSE_SIDE}, got {}",
            m.nrows()
        )));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::Shape(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigen_symmetric(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(eigen_decompose(m)?.0)
}

/// Ascending eigenvalues with matching unit eigenvectors as columns.
pub fn eigen_decompose(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_symmetric(m)?;
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub zero_threshold: f64,
    pub n_negative: usize,
    pub n_zeroed: usize,
    pub normalized_index: f64,
}

/// Zero out `|λ| < zero_threshold`, then count strictly negative values over the list length.
pub fn normalized_index(eigs: &[f64], zero_threshold: f64) -> SpectrumReport {
    let mut eigenvalues = eigs.to_vec();
    eigenvalues.sort_by(f64::total_cmp);
    let n_zeroed = eigenvalues.iter().filter(|x| x.abs() < zero_threshold).count();
    let n_negative = eigenvalues.iter().filter(|&&x| x < 0.0 && x.abs() >= zero_threshold).count();
    let normalized_index = if eigenvalues.is_empty() { 0.0 } else { n_negative as f64 / eigenvalues.len() as f64 };
    SpectrumReport { eigenvalues, zero_threshold, n_negative, n_zeroed, normalized_index }
}

/// Spectrum of the Riemannian Hessian restricted to the tangent space at `w`,
/// so the radial constraint direction is excluded.
pub fn spin_glass_spectrum(couplings: &CouplingTensor, w: &[f64], zero_threshold: f64) -> Result<SpectrumReport> {
    let h = riemannian_hessian(couplings, w)?;
    let tangent = tangent_restriction(&h, w)?;
    Ok(normalized_index(&eigen_symmetric(&tangent)?, zero_threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandLabel {
    BelowGround,
    MinimaBand,
    /// Between `-e_k` and `-e_{k+1}`.
    IndexBand(u32),
    AboveBarrier,
}

impl std::fmt::Display for BandLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BelowGround => write!(f, "below_ground"),
            Self::MinimaBand => write!(f, "minima_band"),
            Self::IndexBand(k) => write!(f, "index_band({k})"),
            Self::AboveBarrier => write!(f, "above_barrier"),
        }
    }
}

/// Band edges for one order: `e0 > e1 > ... > e_kmax > e_infinity`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandThresholds {
    pub thresholds: Thresholds,
    pub ground_tolerance: f64,
}

impl BandThresholds {
    pub fn new(order: ModelOrder, k_max: u32) -> Result<Self> {
        Ok(Self { thresholds: Thresholds::compute(order, k_max)?, ground_tolerance: GROUND_TOLERANCE })
    }

    /// Label a scaled loss (loss / Λ).
    ///
    /// Losses between `-e_kmax` and `-e_infinity` fall into the last tracked band.
    pub fn classify(&self, scaled_loss: f64) -> BandLabel {
        let t = &self.thresholds;
        if scaled_loss < -t.e_0 - self.ground_tolerance {
            return BandLabel::BelowGround;
        }
        if scaled_loss > -t.e_infinity {
            return BandLabel::AboveBarrier;
        }
        for (i, e) in t.e_k.iter().enumerate() {
            if scaled_loss < -e {
                return if i == 0 { BandLabel::MinimaBand } else { BandLabel::IndexBand(i as u32) };
            }
        }
        match t.e_k.len() {
            0 => BandLabel::MinimaBand,
            n => BandLabel::IndexBand(n as u32),
        }
    }
}

/// One-shot band label tracking indices up to `k_max`.
pub fn classify_band(scaled_loss: f64, order: ModelOrder, k_max: u32) -> Result<BandLabel> {
    Ok(BandThresholds::new(order, k_max)?.classify(scaled_loss))
}
