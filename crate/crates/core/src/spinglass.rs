//! The H-spin spherical spin-glass Hamiltonian
//!
//! ```text
//! L(w) = Λ^{-(H-1)/2} Σ_{i1..iH} X_{i1..iH} w_{i1} ... w_{iH},   (1/Λ) Σ w_i² = 1
//! ```
//!
//! with one independent standard normal coupling per *ordered* tuple (no
//! symmetrization). Tuples are laid out row-major, so the tensor is a stack of
//! `Λ^{H-1}` rows of length `Λ` indexed by the prefix `(i1..i_{H-1})`. All
//! contractions walk rows in that order with the same kernel regardless of
//! storage, which keeps dense and regenerated couplings bit-identical.

use std::ops::{Deref, Range};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, CounterRng};

/// Dense coupling storage limit: 512 MiB, i.e. 2^26 `f64` entries.
pub const DEFAULT_DENSE_BUDGET_BYTES: usize = 512 * 1024 * 1024;

/// Tolerance on `(1/Λ) Σ w² = 1`.
pub const SPHERE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    /// Materialise all `Λ^H` entries; fails beyond the memory budget.
    Dense,
    /// Regenerate entries from the counter-based stream on every pass.
    Virtual,
    /// Dense when it fits in the budget, otherwise virtual.
    Auto,
}

impl std::str::FromStr for StorageMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "virtual" => Ok(Self::Virtual),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Config(format!("unknown storage mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Storage {
    Dense(Vec<f64>),
    Virtual(CounterRng),
}

/// Couplings `X_{i1..iH}`; immutable once built and safe to share between threads.
#[derive(Clone, Debug)]
pub struct CouplingTensor {
    lambda: usize,
    order: usize,
    seed: Option<u64>,
    storage: Storage,
}

fn entry_count(lambda: usize, order: usize) -> Result<usize> {
    lambda
        .checked_pow(order as u32)
        .ok_or_else(|| Error::Capacity(format!("Λ^H = {lambda}^{order} overflows the address space")))
}

fn check_dims(lambda: usize, order: usize) -> Result<()> {
    if lambda < 2 {
        return Err(Error::Config(format!("Λ must be at least 2, got {lambda}")));
    }
    if order < 2 {
        return Err(Error::InvalidOrder { order: order as u32, reason: "order must be at least 2" });
    }
    Ok(())
}

/// Seeded couplings with the default dense budget.
pub fn sample_couplings(lambda: usize, order: usize, seed: u64, mode: StorageMode) -> Result<CouplingTensor> {
    CouplingTensor::sample(lambda, order, seed, mode, DEFAULT_DENSE_BUDGET_BYTES)
}

impl CouplingTensor {
    pub fn sample(lambda: usize, order: usize, seed: u64, mode: StorageMode, budget_bytes: usize) -> Result<Self> {
        check_dims(lambda, order)?;
        let entries = entry_count(lambda, order)?;
        let bytes = entries.saturating_mul(std::mem::size_of::<f64>());
        let rng = CounterRng::new(seed);
        let dense = match mode {
            StorageMode::Dense if bytes > budget_bytes => {
                return Err(Error::Capacity(format!(
                    "dense couplings need Λ^H = {lambda}^{order} = {entries} entries ({bytes} bytes), budget is {budget_bytes} bytes"
                )))
            }
            StorageMode::Dense => true,
            StorageMode::Virtual => false,
            StorageMode::Auto => bytes <= budget_bytes,
        };
        let storage = if dense {
            let mut values = vec![0.0; entries];
            rng.fill_normals(0, &mut values);
            Storage::Dense(values)
        } else {
            Storage::Virtual(rng)
        };
        Ok(Self { lambda, order, seed: Some(seed), storage })
    }

    /// Couplings from explicit row-major values.
    pub fn from_values(lambda: usize, order: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(lambda, order)?;
        let entries = entry_count(lambda, order)?;
        if values.len() != entries {
            return Err(Error::Shape(format!(
                "expected Λ^H = {entries} coupling values, got {}",
                values.len()
            )));
        }
        Ok(Self { lambda, order, seed: None, storage: Storage::Dense(values) })
    }

    pub fn zeros(lambda: usize, order: usize) -> Result<Self> {
        let entries = entry_count(lambda, order)?;
        Self::from_values(lambda, order, vec![0.0; entries])
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn len(&self) -> usize {
        self.lambda.pow(self.order as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value_at(&self, tuple_index: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[tuple_index],
            Storage::Virtual(rng) => rng.normal(tuple_index as u64),
        }
    }

    /// All entries in row-major tuple order.
    pub fn to_values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value_at(i)).collect()
    }

    /// `Λ^{-(H-1)/2}`.
    pub fn prefactor(&self) -> f64 {
        (self.lambda as f64).powf(-(self.order as f64 - 1.0) / 2.0)
    }

    fn n_rows(&self) -> usize {
        self.lambda.pow(self.order as u32 - 1)
    }

    fn check_vector(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.lambda {
            return Err(Error::Shape(format!(
                "configuration has length {}, couplings have Λ = {}",
                w.len(),
                self.lambda
            )));
        }
        Ok(())
    }

    /// Visit rows in order, passing the prefix indices and the row values.
    fn for_rows(&self, rows: Range<usize>, mut visit: impl FnMut(&[usize], &[f64])) {
        let lam = self.lambda;
        let prefix_len = self.order - 1;
        let mut prefix = vec![0usize; prefix_len];
        let mut r = rows.start;
        for slot in prefix.iter_mut().rev() {
            *slot = r % lam;
            r /= lam;
        }
        let mut buffer = vec![0.0; lam];
        for row in rows {
            match &self.storage {
                Storage::Dense(v) => visit(&prefix, &v[row * lam..(row + 1) * lam]),
                Storage::Virtual(rng) => {
                    rng.fill_normals((row * lam) as u64, &mut buffer);
                    visit(&prefix, &buffer);
                }
            }
            for slot in prefix.iter_mut().rev() {
                *slot += 1;
                if *slot < lam {
                    break;
                }
                *slot = 0;
            }
        }
    }

    /// Unscaled `Σ X Π w` over `rows`, optionally accumulating the unscaled gradient.
    fn contract_rows(&self, w: &[f64], rows: Range<usize>, mut grad: Option<&mut [f64]>) -> f64 {
        let prefix_len = self.order - 1;
        let mut excl = vec![0.0; prefix_len];
        let mut total = 0.0;
        self.for_rows(rows, |prefix, row| {
            let mut forward = 1.0;
            for (m, &i) in prefix.iter().enumerate() {
                excl[m] = forward;
                forward *= w[i];
            }
            let mut backward = 1.0;
            for m in (0..prefix_len).rev() {
                excl[m] *= backward;
                backward *= w[prefix[m]];
            }
            let prefix_product = forward;
            let dot: f64 = row.iter().zip(w).map(|(x, wi)| x * wi).sum();
            total += prefix_product * dot;
            if let Some(g) = grad.as_deref_mut() {
                for (gk, x) in g.iter_mut().zip(row) {
                    *gk += prefix_product * x;
                }
                for (m, &i) in prefix.iter().enumerate() {
                    g[i] += excl[m] * dot;
                }
            }
        });
        total
    }

    /// Hamiltonian value at any vector of length `Λ` (no constraint imposed).
    pub fn energy(&self, w: &[f64]) -> Result<f64> {
        self.check_vector(w)?;
        Ok(self.prefactor() * self.contract_rows(w, 0..self.n_rows(), None))
    }

    /// Value and Euclidean gradient in one pass over the couplings.
    pub fn energy_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_vector(w)?;
        let mut g = vec![0.0; self.lambda];
        let value = self.contract_rows(w, 0..self.n_rows(), Some(&mut g));
        let scale = self.prefactor();
        g.iter_mut().for_each(|x| *x *= scale);
        Ok((scale * value, g))
    }

    /// Unbiased estimate of value and gradient from the rows whose first index lies in `slabs`.
    pub fn energy_and_gradient_subsampled(&self, w: &[f64], slabs: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_vector(w)?;
        if slabs.is_empty() || slabs.iter().any(|&s| s >= self.lambda) {
            return Err(Error::Config("subsample slabs must be non-empty and < Λ".into()));
        }
        let per_slab = self.lambda.pow(self.order as u32 - 2);
        let mut g = vec![0.0; self.lambda];
        let mut value = 0.0;
        for &slab in slabs {
            value += self.contract_rows(w, slab * per_slab..(slab + 1) * per_slab, Some(&mut g));
        }
        let scale = self.prefactor() * self.lambda as f64 / slabs.len() as f64;
        g.iter_mut().for_each(|x| *x *= scale);
        Ok((scale * value, g))
    }

    /// Dense Euclidean Hessian; the `Λ×Λ` matrix counts against `budget_bytes`.
    pub fn euclidean_hessian_with_budget(&self, w: &[f64], budget_bytes: usize) -> Result<DMatrix<f64>> {
        self.check_vector(w)?;
        let n = self.lambda;
        let bytes = n.saturating_mul(n).saturating_mul(std::mem::size_of::<f64>());
        if bytes > budget_bytes {
            return Err(Error::Capacity(format!(
                "dense Hessian needs Λ² = {} entries ({bytes} bytes), budget is {budget_bytes} bytes",
                n * n
            )));
        }
        let prefix_len = self.order - 1;
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut excl = vec![0.0; prefix_len];
        self.for_rows(0..self.n_rows(), |prefix, row| {
            for (m, e) in excl.iter_mut().enumerate() {
                *e = prefix
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != m)
                    .map(|(_, &i)| w[i])
                    .product();
            }
            let dot: f64 = row.iter().zip(w).map(|(x, wi)| x * wi).sum();
            for m in 0..prefix_len {
                for q in (m + 1)..prefix_len {
                    let c: f64 = dot
                        * prefix
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != m && j != q)
                            .map(|(_, &i)| w[i])
                            .product::<f64>();
                    hess[(prefix[m], prefix[q])] += c;
                    hess[(prefix[q], prefix[m])] += c;
                }
                let e = excl[m];
                let a = prefix[m];
                for (k, x) in row.iter().enumerate() {
                    let c = e * x;
                    hess[(a, k)] += c;
                    hess[(k, a)] += c;
                }
            }
        });
        hess *= self.prefactor();
        Ok(hess)
    }

    pub fn euclidean_hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        self.euclidean_hessian_with_budget(w, DEFAULT_DENSE_BUDGET_BYTES)
    }
}

/// `L_{Λ,H}(w)`.
pub fn hamiltonian(couplings: &CouplingTensor, w: &[f64]) -> Result<f64> {
    couplings.energy(w)
}

pub fn euclidean_gradient(couplings: &CouplingTensor, w: &[f64]) -> Result<Vec<f64>> {
    couplings.energy_and_gradient(w).map(|(_, g)| g)
}

/// Remove the radial component: `g − ((g·w)/Λ) w`.
pub fn project_tangent(w: &[f64], g: &[f64]) -> Vec<f64> {
    let lam = w.len() as f64;
    let radial = dot(g, w) / lam;
    g.iter().zip(w).map(|(gi, wi)| gi - radial * wi).collect()
}

pub fn riemannian_gradient(couplings: &CouplingTensor, w: &[f64]) -> Result<Vec<f64>> {
    let g = euclidean_gradient(couplings, w)?;
    Ok(project_tangent(w, &g))
}

/// `P (∇²L − λ I) P` with `λ = (w·∇L)/Λ` and `P = I − w wᵀ/Λ`.
pub fn riemannian_hessian(couplings: &CouplingTensor, w: &[f64]) -> Result<DMatrix<f64>> {
    let (_, g) = couplings.energy_and_gradient(w)?;
    let mut m = couplings.euclidean_hessian(w)?;
    let n = w.len();
    let lam = n as f64;
    let multiplier = dot(w, &g) / lam;
    for i in 0..n {
        m[(i, i)] -= multiplier;
    }
    let wv = DVector::from_column_slice(w);
    let mw = &m * &wv;
    let wmw = wv.dot(&mw);
    // P M P = M − (Mw)wᵀ/Λ − w(Mw)ᵀ/Λ + (wᵀMw) w wᵀ/Λ²
    let mut out = m;
    out.ger(-1.0 / lam, &mw, &wv, 1.0);
    out.ger(-1.0 / lam, &wv, &mw, 1.0);
    out.ger(wmw / (lam * lam), &wv, &wv, 1.0);
    // Symmetrize away rounding.
    let sym = (&out + out.transpose()) * 0.5;
    Ok(sym)
}

/// Restrict a matrix to the tangent space at `w`, returning `(Λ−1)×(Λ−1)`.
///
/// Uses the Householder reflection that maps `w/|w|` onto a coordinate axis; its
/// remaining columns are an orthonormal basis of the tangent space.
pub fn tangent_restriction(m: &DMatrix<f64>, w: &[f64]) -> Result<DMatrix<f64>> {
    let n = w.len();
    if m.nrows() != n || m.ncols() != n || n < 2 {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, configuration has length {n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let norm = dot(w, w).sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("cannot restrict to the tangent space of a zero vector".into()));
    }
    let mut v = DVector::from_iterator(n, w.iter().map(|x| x / norm));
    let last = v[n - 1];
    v[n - 1] += if last >= 0.0 { 1.0 } else { -1.0 };
    let vv = v.dot(&v);
    // R = I − 2 v vᵀ / vv; compute R M R with two rank-one updates.
    let vt_m = v.transpose() * m;
    let mut rm = m.clone();
    rm.ger(-2.0 / vv, &v, &vt_m.transpose(), 1.0);
    let rm_v = &rm * &v;
    rm.ger(-2.0 / vv, &rm_v, &v, 1.0);
    let sub = rm.view((0, 0), (n - 1, n - 1)).into_owned();
    Ok((&sub + sub.transpose()) * 0.5)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A point `w` with `(1/Λ) Σ w_i² = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SphereConfiguration(Vec<f64>);

impl SphereConfiguration {
    /// Validate an existing vector against the constraint.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::Config("configurations need Λ >= 2".into()));
        }
        let config = Self(w);
        let dev = config.constraint_deviation();
        if !(dev <= SPHERE_TOLERANCE) {
            return Err(Error::Invariant(format!("(1/Λ)Σw² deviates from 1 by {dev:e}")));
        }
        Ok(config)
    }

    /// Metric projection `w ← sqrt(Λ) w / |w|`.
    pub fn retract(mut raw: Vec<f64>) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::Config("configurations need Λ >= 2".into()));
        }
        let norm = dot(&raw, &raw).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical(format!("cannot retract a vector of norm {norm}")));
        }
        let scale = (raw.len() as f64).sqrt() / norm;
        raw.iter_mut().for_each(|x| *x *= scale);
        Ok(Self(raw))
    }

    pub fn constraint_deviation(&self) -> f64 {
        (dot(&self.0, &self.0) / self.0.len() as f64 - 1.0).abs()
    }

    pub fn lambda(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SphereConfiguration {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Gaussian direction scaled onto the sphere of radius `sqrt(Λ)`.
pub fn sample_uniform_sphere(lambda: usize, seed: u64) -> Result<SphereConfiguration> {
    if lambda < 2 {
        return Err(Error::Config(format!("Λ must be at least 2, got {lambda}")));
    }
    let mut rng = seeded_rng(seed);
    loop {
        let raw: Vec<f64> = (0..lambda).map(|_| StandardNormal.sample(&mut rng)).collect();
        if dot(&raw, &raw) > 0.0 {
            return SphereConfiguration::retract(raw);
        }
    }
}

/// Value, gradient and multiplier at a point of the sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapePoint {
    pub config: SphereConfiguration,
    pub value: f64,
    pub euclidean_gradient: Vec<f64>,
    /// `(w·∇L)/Λ`.
    pub lagrange_multiplier: f64,
}

impl LandscapePoint {
    pub fn evaluate(couplings: &CouplingTensor, config: SphereConfiguration) -> Result<Self> {
        let (value, g) = couplings.energy_and_gradient(&config)?;
        let lagrange_multiplier = dot(&config, &g) / config.lambda() as f64;
        Ok(Self { config, value, euclidean_gradient: g, lagrange_multiplier })
    }

    pub fn riemannian_gradient(&self) -> Vec<f64> {
        project_tangent(&self.config, &self.euclidean_gradient)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Degenerate,
}

/// A critical point of `L` restricted to the circle `w = sqrt(2)(cos θ, sin θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirclePoint {
    pub angle: f64,
    pub value: f64,
    pub second_derivative: f64,
    pub kind: CriticalKind,
    /// Index on the circle: 1 for a maximum, 0 for a minimum.
    pub index: u32,
}

const CIRCLE_SAMPLES: usize = 4096;

fn circle_point(theta: f64) -> ([f64; 2], [f64; 2]) {
    let r = std::f64::consts::SQRT_2;
    ([r * theta.cos(), r * theta.sin()], [-r * theta.sin(), r * theta.cos()])
}

/// All critical points of `L` on the `Λ = 2` sphere, by dense sampling of
/// `dL/dθ` followed by bisection on each sign change.
///
/// Zeros of `dL/dθ` that touch the axis without a sign change, or whose second
/// derivative vanishes, are reported as [`CriticalKind::Degenerate`] rather than
/// merged or dropped.
pub fn enumerate_critical_points_circle(couplings: &CouplingTensor) -> Result<Vec<CirclePoint>> {
    if couplings.lambda() != 2 {
        return Err(Error::Config(format!(
            "circle enumeration needs Λ = 2, got {}",
            couplings.lambda()
        )));
    }
    let derivative = |theta: f64| -> Result<f64> {
        let (w, dw) = circle_point(theta);
        let g = euclidean_gradient(couplings, &w)?;
        Ok(dot(&g, &dw))
    };
    let step = std::f64::consts::TAU / CIRCLE_SAMPLES as f64;
    let samples: Vec<f64> = (0..CIRCLE_SAMPLES)
        .map(|i| derivative(step * i as f64))
        .collect::<Result<_>>()?;
    let scale = samples.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if scale == 0.0 {
        return Err(Error::Numerical("L is constant on the circle; every point is critical".into()));
    }
    let flat = 1e-9 * scale;
    let mut roots: Vec<(f64, bool)> = Vec::new();
    for i in 0..CIRCLE_SAMPLES {
        let (d0, d1) = (samples[i], samples[(i + 1) % CIRCLE_SAMPLES]);
        let t0 = step * i as f64;
        if d0 == 0.0 {
            roots.push((t0, false));
        } else if d0 * d1 < 0.0 {
            let (mut lo, mut hi, mut f_lo) = (t0, t0 + step, d0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let f_mid = derivative(mid)?;
                if f_mid == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (f_mid < 0.0) == (f_lo < 0.0) {
                    lo = mid;
                    f_lo = f_mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(((0.5 * (lo + hi)).rem_euclid(std::f64::consts::TAU), false));
        } else {
            // Tangential touch: |d| has a tiny local minimum without a sign change.
            let prev = samples[(i + CIRCLE_SAMPLES - 1) % CIRCLE_SAMPLES];
            if d0.abs() < flat && d0.abs() <= prev.abs() && d0.abs() <= d1.abs() {
                roots.push((t0, true));
            }
        }
    }
    roots
        .into_iter()
        .map(|(theta, touching)| {
            let (w, dw) = circle_point(theta);
            let (value, g) = couplings.energy_and_gradient(&w)?;
            let hess = couplings.euclidean_hessian(&w)?;
            let dwv = DVector::from_column_slice(&dw);
            // d²L/dθ² = w'ᵀ ∇²L w' + ∇L·w'' with w'' = −w.
            let second = dwv.dot(&(&hess * &dwv)) - dot(&g, &w);
            let kind = if touching || second.abs() < 1e-7 * scale.max(1.0) {
                CriticalKind::Degenerate
            } else if second > 0.0 {
                CriticalKind::Minimum
            } else {
                CriticalKind::Maximum
            };
            let index = u32::from(kind == CriticalKind::Maximum);
            Ok(CirclePoint { angle: theta, value, second_derivative: second, kind, index })
        })
        .collect()
}
