//! From a layered ReLU network to the spin-glass Hamiltonian.
//!
//! A network with `n0 = d` inputs, hidden widths `n1..n_{H-1}` and one output
//! is written as a sum over its `Ψ = Π n_i` input-to-output paths. Each path
//! carries the product of its `H` edge weights, an input value and an
//! activation indicator. The pieces here evaluate that path sum, build the
//! redundancy/uniformity reductions, and check numerically that the
//! correlations and loss relations used to arrive at the Hamiltonian hold.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::spinglass::{sample_couplings, StorageMode};

/// Layer widths `d, n1, ..., n_{H-1}` with a single output unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayeredNetSpec {
    pub d: u64,
    pub hidden: Vec<u64>,
}

impl LayeredNetSpec {
    pub fn new(d: u64, hidden: Vec<u64>) -> Result<Self> {
        if d == 0 || hidden.contains(&0) {
            return Err(Error::Config("all layer sizes must be at least 1".into()));
        }
        Ok(Self { d, hidden })
    }

    /// Number of weight layers `H`.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `n0, n1, ..., nH` with `nH = 1`.
    pub fn widths(&self) -> Vec<u64> {
        let mut w = Vec::with_capacity(self.depth() + 1);
        w.push(self.d);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSize {
    /// `Ψ = Π n_i`.
    pub psi: u128,
    /// `N = Σ n_i n_{i+1}`.
    pub big_n: u128,
    /// `Λ = Ψ^{1/H}`.
    pub lambda: f64,
}

pub fn mass_size_lambda(spec: &LayeredNetSpec) -> MassSize {
    let w = spec.widths();
    let psi: u128 = w.iter().map(|&n| n as u128).product();
    let big_n: u128 = w.windows(2).map(|p| p[0] as u128 * p[1] as u128).sum();
    let lambda = (psi as f64).powf(1.0 / spec.depth() as f64);
    MassSize { psi, big_n, lambda }
}

/// The chain `Ψ²H ≥ N ≥ Ψ^{2/H}·H/d^{1/H} ≥ Ψ^{1/H}` with the slack of each link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeBoundReport {
    pub upper: f64,
    pub size: f64,
    pub lower: f64,
    pub lambda: f64,
    /// `upper − size`, `size − lower`, `lower − lambda`.
    pub slacks: [f64; 3],
    pub holds: bool,
}

pub fn verify_size_bounds(spec: &LayeredNetSpec) -> SizeBoundReport {
    let ms = mass_size_lambda(spec);
    let h = spec.depth() as f64;
    let psi = ms.psi as f64;
    let upper = psi * psi * h;
    let size = ms.big_n as f64;
    let lower = psi.powf(2.0 / h) * h / (spec.d as f64).powf(1.0 / h);
    let lambda = ms.lambda;
    let slacks = [upper - size, size - lower, lower - lambda];
    // Equalities are attained (all widths 1), so allow rounding in the roots.
    let tol = |a: f64| 1e-12 * a.abs().max(1.0);
    let holds = slacks[0] >= -tol(upper) && slacks[1] >= -tol(size) && slacks[2] >= -tol(lower);
    SizeBoundReport { upper, size, lower, lambda, slacks, holds }
}

/// Every spec with `1 <= d, n_i <= max_width` and depth `2..=max_depth`.
pub fn enumerate_specs(max_width: u64, max_depth: usize) -> Vec<LayeredNetSpec> {
    let mut out = Vec::new();
    for depth in 2..=max_depth {
        let layers = depth; // d plus depth-1 hidden widths
        let total = (max_width as usize).pow(layers as u32);
        for code in 0..total {
            let mut rest = code;
            let mut widths = Vec::with_capacity(layers);
            for _ in 0..layers {
                widths.push((rest % max_width as usize) as u64 + 1);
                rest /= max_width as usize;
            }
            out.push(LayeredNetSpec { d: widths[0], hidden: widths[1..].to_vec() });
        }
    }
    out
}

/// A layered linear path model with per-edge weights and activation probability `ρ`.
///
/// `layers[k]` is the `n_{k+1} × n_k` weight matrix of layer `k+1`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathModel {
    pub spec: LayeredNetSpec,
    pub layers: Vec<Vec<f64>>,
    pub rho: f64,
}

impl PathModel {
    pub fn new(spec: LayeredNetSpec, layers: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        let w = spec.widths();
        if layers.len() != spec.depth() {
            return Err(Error::Shape(format!("expected {} weight layers, got {}", spec.depth(), layers.len())));
        }
        for (k, layer) in layers.iter().enumerate() {
            let want = (w[k] * w[k + 1]) as usize;
            if layer.len() != want {
                return Err(Error::Shape(format!("layer {} needs {want} weights, got {}", k + 1, layer.len())));
            }
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Domain(format!("ρ must lie in (0, 1], got {rho}")));
        }
        Ok(Self { spec, layers, rho })
    }

    /// Random normal edge weights.
    pub fn random(spec: LayeredNetSpec, rho: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let w = spec.widths();
        let layers = (0..spec.depth())
            .map(|k| (0..w[k] * w[k + 1]).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self::new(spec, layers, rho)
    }

    pub fn mass(&self) -> MassSize {
        mass_size_lambda(&self.spec)
    }

    /// `γ = n1 ... nH`, the number of paths leaving each input.
    pub fn gamma(&self) -> u64 {
        self.spec.widths()[1..].iter().product()
    }

    /// `q = Ψ^{-(H-1)/(2H)}`.
    pub fn q(&self) -> f64 {
        let h = self.spec.depth() as f64;
        (self.mass().psi as f64).powf(-(h - 1.0) / (2.0 * h))
    }

    /// Product of edge weights along every path, indexed `i·γ + j` where `i` is the
    /// input and `j` enumerates the hidden units `(i1, ..., i_{H-1})` row-major.
    pub fn path_weights(&self) -> Vec<f64> {
        let w = self.spec.widths();
        // Walk layer by layer, extending partial paths (ending unit, product).
        let mut partial: Vec<(usize, f64)> = (0..w[0] as usize).map(|i| (i, 1.0)).collect();
        for (k, layer) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (w[k] as usize, w[k + 1] as usize);
            let mut next = Vec::with_capacity(partial.len() * n_out);
            for &(unit, prod) in &partial {
                for out in 0..n_out {
                    next.push((out, prod * layer[out * n_in + unit]));
                }
            }
            partial = next;
        }
        partial.into_iter().map(|(_, p)| p).collect()
    }

    /// Per-path inputs from a length-`d` input vector (constant across a given input's paths).
    pub fn expand_inputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.d as usize {
            return Err(Error::Shape(format!("expected {} inputs, got {}", self.spec.d, x.len())));
        }
        let gamma = self.gamma() as usize;
        Ok(x.iter().flat_map(|&v| std::iter::repeat_n(v, gamma)).collect())
    }

    fn check_paths(&self, n: usize) -> Result<()> {
        let psi = self.mass().psi as usize;
        if n != psi {
            return Err(Error::Shape(format!("expected Ψ = {psi} path values, got {n}")));
        }
        Ok(())
    }

    /// `Y = q Σ_{i,j} X_{i,j} A_{i,j} Π_k w^{(k)}_{i,j}`.
    pub fn path_output(&self, x: &[f64], active: &[bool]) -> Result<f64> {
        self.check_paths(x.len())?;
        self.check_paths(active.len())?;
        let sum: f64 = self
            .path_weights()
            .iter()
            .zip(x)
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|((p, xi), _)| p * xi)
            .sum();
        Ok(self.q() * sum)
    }

    /// `E_A[Y]`, every activation replaced by `ρ`.
    pub fn expected_output_yn(&self, x: &[f64]) -> Result<f64> {
        self.check_paths(x.len())?;
        let sum: f64 = self.path_weights().iter().zip(x).map(|(p, xi)| p * xi).sum();
        Ok(self.q() * self.rho * sum)
    }

    /// Independent Bernoulli(ρ) path activations.
    pub fn sample_activations(&self, rng: &mut impl Rng) -> Vec<bool> {
        (0..self.mass().psi as usize).map(|_| rng.random::<f64>() < self.rho).collect()
    }
}

/// Multiplicities `t` of every ordered `H`-tuple over `s` unique weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformAssignment {
    pub s: usize,
    pub order: usize,
    /// Row-major over tuples, length `s^H`.
    pub t: Vec<u64>,
    pub c: f64,
}

impl UniformAssignment {
    pub fn new(s: usize, order: usize, t: Vec<u64>, c: f64) -> Result<Self> {
        if s == 0 || order == 0 {
            return Err(Error::Config("s and H must be positive".into()));
        }
        if !(c >= 1.0) {
            return Err(Error::Domain(format!("uniformity constant must be at least 1, got {c}")));
        }
        if t.len() != s.pow(order as u32) {
            return Err(Error::Shape(format!("expected s^H = {} multiplicities, got {}", s.pow(order as u32), t.len())));
        }
        let a = Self { s, order, t, c };
        let ideal = a.ideal();
        for &ti in &a.t {
            let ti = ti as f64;
            if ti * c < ideal * (1.0 - 1e-12) || ti > c * ideal * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!(
                    "multiplicity {ti} violates the c = {c} band around Ψ/s^H = {ideal}"
                )));
            }
        }
        Ok(a)
    }

    /// Every tuple appears exactly `Ψ/s^H` times.
    pub fn uniform(s: usize, order: usize, psi: u64) -> Result<Self> {
        let tuples = s.pow(order as u32) as u64;
        if !psi.is_multiple_of(tuples) {
            return Err(Error::Config(format!("Ψ = {psi} is not a multiple of s^H = {tuples}")));
        }
        Self::new(s, order, vec![psi / tuples; tuples as usize], 1.0)
    }

    /// A random assignment with `Σ t = Ψ` inside the `c` band, built from the most
    /// even split by random pairwise transfers.
    pub fn random(s: usize, order: usize, psi: u64, c: f64, seed: u64) -> Result<Self> {
        if !(c >= 1.0) {
            return Err(Error::Domain(format!("uniformity constant must be at least 1, got {c}")));
        }
        let tuples = s.pow(order as u32);
        let ideal = psi as f64 / tuples as f64;
        let lo = (ideal / c - 1e-9).ceil().max(0.0) as u64;
        let hi = (ideal * c + 1e-9).floor() as u64;
        let base = psi / tuples as u64;
        let extra = (psi % tuples as u64) as usize;
        if base < lo || (extra > 0 && base + 1 > hi) {
            return Err(Error::Config(format!("no integral assignment fits c = {c} around Ψ/s^H = {ideal}")));
        }
        let mut t: Vec<u64> = (0..tuples).map(|i| base + u64::from(i < extra)).collect();
        let mut rng = seeded_rng(seed);
        for _ in 0..4 * tuples {
            let a = rng.random_range(0..tuples);
            let b = rng.random_range(0..tuples);
            if a == b {
                continue;
            }
            let room = (t[a] - lo).min(hi - t[b]);
            if room == 0 {
                continue;
            }
            let delta = rng.random_range(1..=room);
            t[a] -= delta;
            t[b] += delta;
        }
        Self::new(s, order, t, c)
    }

    pub fn psi(&self) -> u64 {
        self.t.iter().sum()
    }

    /// `Ψ/s^H`.
    pub fn ideal(&self) -> f64 {
        self.psi() as f64 / self.t.len() as f64
    }

    /// Smallest `c` for which the multiplicities satisfy the band.
    pub fn induced_c(&self) -> f64 {
        let ideal = self.ideal();
        self.t
            .iter()
            .map(|&ti| {
                let ti = ti as f64;
                if ti == 0.0 {
                    f64::INFINITY
                } else {
                    (ti / ideal).max(ideal / ti)
                }
            })
            .fold(1.0, f64::max)
    }

    /// `Π_k w_{i_k}` for every tuple.
    fn tuple_products(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.s {
            return Err(Error::Shape(format!("expected s = {} weights, got {}", self.s, weights.len())));
        }
        Ok((0..self.t.len())
            .map(|mut idx| {
                let mut p = 1.0;
                for _ in 0..self.order {
                    p *= weights[idx % self.s];
                    idx /= self.s;
                }
                p
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrality {
    /// `Ψ/s^H` must be an integer.
    Strict,
    /// Round `Ψ/s^H` to the nearest positive integer and report the induced `c`.
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedOutputs {
    /// Output with the true multiplicities `t`.
    pub y_s: f64,
    /// Output with every multiplicity replaced by the uniform target.
    pub y_hat: f64,
    pub t_hat: u64,
    /// How far the rounded target sits from `Ψ/s^H`, as a uniformity constant.
    pub induced_c: f64,
}

/// `Y_s = qρ Σ_tuples Σ_{j<t} X^{(j)} Π w` and the same sum with `t̂ = Ψ/s^H` copies.
///
/// `x[tuple]` holds the input draws for that tuple; the first `t` (resp. `t̂`)
/// are used, so the two outputs share inputs wherever both count them.
pub fn reduced_outputs(
    assignment: &UniformAssignment,
    weights: &[f64],
    x: &[Vec<f64>],
    rho: f64,
    q: f64,
    mode: Integrality,
) -> Result<ReducedOutputs> {
    let ideal = assignment.ideal();
    let t_hat = match mode {
        Integrality::Strict => {
            if ideal.fract() != 0.0 {
                return Err(Error::Config(format!("Ψ/s^H = {ideal} is not an integer")));
            }
            ideal as u64
        }
        Integrality::Lenient => (ideal.round() as u64).max(1),
    };
    let induced_c = (t_hat as f64 / ideal).max(ideal / t_hat as f64);
    if x.len() != assignment.t.len() {
        return Err(Error::Shape(format!("expected {} input lists, got {}", assignment.t.len(), x.len())));
    }
    let prods = assignment.tuple_products(weights)?;
    let (mut y_s, mut y_hat) = (0.0, 0.0);
    for ((draws, &t), p) in x.iter().zip(&assignment.t).zip(&prods) {
        let need = t.max(t_hat) as usize;
        if draws.len() < need {
            return Err(Error::Shape(format!("a tuple needs {need} input draws, got {}", draws.len())));
        }
        y_s += draws[..t as usize].iter().sum::<f64>() * p;
        y_hat += draws[..t_hat as usize].iter().sum::<f64>() * p;
    }
    Ok(ReducedOutputs { y_s: q * rho * y_s, y_hat: q * rho * y_hat, t_hat, induced_c })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityCheck {
    pub corr: f64,
    /// `1/c²`.
    pub bound: f64,
    pub holds: bool,
}

/// Closed-form `corr(Ŷ_s, Y_s) = Σ min(Ψ/s^H, t) Πw² / sqrt(Σ Ψ/s^H Πw² · Σ t Πw²)`.
///
/// Unit weights are used when `weights` is `None`.
pub fn check_uniformity_correlation(assignment: &UniformAssignment, weights: Option<&[f64]>) -> Result<UniformityCheck> {
    if !(assignment.c >= 1.0) {
        return Err(Error::Domain(format!("uniformity constant must be at least 1, got {}", assignment.c)));
    }
    let ones = vec![1.0; assignment.s];
    let prods = assignment.tuple_products(weights.unwrap_or(&ones))?;
    let ideal = assignment.ideal();
    let (mut shared, mut var_hat, mut var_s) = (0.0, 0.0, 0.0);
    for (&t, p) in assignment.t.iter().zip(&prods) {
        let p2 = p * p;
        shared += ideal.min(t as f64) * p2;
        var_hat += ideal * p2;
        var_s += t as f64 * p2;
    }
    if var_hat == 0.0 || var_s == 0.0 {
        return Err(Error::UndefinedCorrelation("all weight products vanish".into()));
    }
    let corr = shared / (var_hat * var_s).sqrt();
    let bound = 1.0 / (assignment.c * assignment.c);
    Ok(UniformityCheck { corr, bound, holds: corr >= bound * (1.0 - 1e-12) })
}

/// How the disagreement mass `ε` is split between the two kinds of flips.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipSplit {
    /// `ε⁺ = ε⁻ = ε/2`.
    Symmetric,
    /// `ε⁺ = ε`: only points the first classifier calls −1 are flipped.
    AllPlus,
    /// `ε⁻ = ε`: only points the first classifier calls +1 are flipped.
    AllMinus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignCorrelation {
    pub p: f64,
    pub eps: f64,
    pub split: FlipSplit,
    pub estimate: f64,
    pub stderr: f64,
    /// Exact correlation of the constructed pair.
    pub exact: f64,
    pub bound: f64,
    pub samples: u64,
}

impl SignCorrelation {
    /// `estimate ≥ bound − 3·stderr`.
    pub fn holds(&self) -> bool {
        self.estimate >= self.bound - 3.0 * self.stderr - 1e-12
    }
}

/// `(1−2ε−(1−2p)²−2(1−2p)ε) / (4 sqrt(p(1−p)(p+ε)(1−p+ε)))`.
pub fn sign_correlation_bound(p: f64, eps: f64) -> f64 {
    let a = 1.0 - 2.0 * p;
    (1.0 - 2.0 * eps - a * a - 2.0 * a * eps) / (4.0 * (p * (1.0 - p) * (p + eps) * (1.0 - p + eps)).sqrt())
}

/// `(1−2ε)/(1+2ε)`, the balanced-classes case.
pub fn balanced_sign_bound(eps: f64) -> f64 {
    (1.0 - 2.0 * eps) / (1.0 + 2.0 * eps)
}

#[derive(Clone, Copy, Debug, Default)]
struct PairStats {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl PairStats {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    fn merge(mut self, o: Self) -> Self {
        self.n += o.n;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.sxy += o.sxy;
        self
    }

    fn pearson(&self) -> Result<f64> {
        let vx = self.sxx - self.sx * self.sx / self.n;
        let vy = self.syy - self.sy * self.sy / self.n;
        if !(vx > 0.0 && vy > 0.0) {
            return Err(Error::UndefinedCorrelation("one of the variables is constant".into()));
        }
        Ok(((self.sxy - self.sx * self.sy / self.n) / (vx * vy).sqrt()).clamp(-1.0, 1.0))
    }
}

const MC_BATCH: u64 = 10_000;

/// Sample the two-classifier construction and compare the sign correlation with the bound.
///
/// The first classifier says +1 with probability `p`; the second flips an `ε⁻`
/// mass of those to −1 and an `ε⁺` mass of the −1 points to +1.
pub fn check_reduction_correlation(p: f64, eps: f64, split: FlipSplit, n_samples: u64, seed: u64) -> Result<SignCorrelation> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::Domain(format!("p must lie in (0, 0.5], got {p}")));
    }
    if !(0.0..=p).contains(&eps) {
        return Err(Error::Domain(format!("ε must lie in [0, p], got ε = {eps}, p = {p}")));
    }
    if n_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let (eps_plus, eps_minus) = match split {
        FlipSplit::Symmetric => (eps / 2.0, eps / 2.0),
        FlipSplit::AllPlus => (eps, 0.0),
        FlipSplit::AllMinus => (0.0, eps),
    };
    let batches = n_samples.div_ceil(MC_BATCH);
    let stats = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeded_rng(derive_seed(seed, &[b]));
            let count = MC_BATCH.min(n_samples - b * MC_BATCH);
            let mut s = PairStats::default();
            for _ in 0..count {
                let u: f64 = rng.random();
                let (z1, z2) = if u < p {
                    (1.0, if u < eps_minus { -1.0 } else { 1.0 })
                } else {
                    (-1.0, if u < p + eps_plus { 1.0 } else { -1.0 })
                };
                s.push(z1, z2);
            }
            s
        })
        .reduce(PairStats::default, PairStats::merge);
    let estimate = stats.pearson()?;
    let stderr = (1.0 - estimate * estimate) / (stats.n - 1.0).sqrt();
    let p2 = p + eps_plus - eps_minus;
    let exact = (1.0 - 2.0 * eps - (2.0 * p - 1.0) * (2.0 * p2 - 1.0)) / (4.0 * (p * (1.0 - p) * p2 * (1.0 - p2)).sqrt());
    Ok(SignCorrelation {
        p,
        eps,
        split,
        estimate,
        stderr,
        exact,
        bound: sign_correlation_bound(p, eps),
        samples: n_samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Absolute,
    Hinge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Self::Absolute),
            "hinge" => Ok(Self::Hinge),
            other => Err(Error::Config(format!("unsupported loss kind '{other}'"))),
        }
    }
}

/// How the hinge's Bernoulli gate `M` is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Replace `M` by its mean `ρ'`.
    Analytic,
    /// Average `draws` independent Bernoulli(`ρ'`) gates per resample.
    Sampled { draws: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEquivalenceParams {
    /// `S`, the label magnitude of the absolute loss (forced to 1 for the hinge).
    pub s: f64,
    pub rho: f64,
    /// Gate probability `ρ'` of the hinge (forced to 1 for the absolute loss).
    pub rho_prime: f64,
    pub gate: GateMode,
    /// Raw weights `w`; a random vector off the sphere when `None`.
    pub weights: Option<Vec<f64>>,
}

impl Default for LossEquivalenceParams {
    fn default() -> Self {
        Self { s: 3.0, rho: 0.5, rho_prime: 0.7, gate: GateMode::Analytic, weights: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEquivalenceReport {
    pub kind: LossKind,
    pub resamples: u64,
    pub pearson: f64,
    /// Correlation implied by the gate noise (1 when the gate is marginalized).
    pub expected_pearson: f64,
    pub stderr: f64,
    /// Fitted intercept and slope of the loss against the Hamiltonian.
    pub c1_hat: f64,
    pub c2_hat: f64,
    /// `Sρ'` and `ρρ'C^{H/2}` with `C = (1/Λ)Σw²`.
    pub c1: f64,
    pub c2: f64,
    /// Largest `|loss − (c1 + c2·L)|` over the resamples.
    pub max_affine_residual: f64,
    /// `|(1/Λ)Σw̃² − 1|` for `w̃ = w/sqrt(C)`.
    pub sphere_deviation: f64,
}

impl LossEquivalenceReport {
    /// Pearson within `3·stderr` of its expected value.
    pub fn consistent(&self) -> bool {
        (self.pearson - self.expected_pearson).abs() <= 3.0 * self.stderr + 1e-12
    }
}

/// Compare the generalized absolute/hinge loss with the bare Hamiltonian over coupling resamples.
///
/// Each resample draws couplings `X` and a label sign `σ`. The loss is
/// `E_M[M(S − σŶ)]` with `Ŷ = qρ Σ X Π w`. Folding the sign into the couplings,
/// `X' = −σX` has the same law as `X` and gives `S − σŶ = S + ρ C^{H/2} L_{X'}(w̃)`,
/// so the Hamiltonian is evaluated on `X'` at the rescaled point `w̃ = w/sqrt(C)`.
pub fn loss_equivalence_check(
    lambda: usize,
    order: usize,
    seed: u64,
    kind: LossKind,
    n_resamples: u64,
    params: &LossEquivalenceParams,
) -> Result<LossEquivalenceReport> {
    if n_resamples < 3 {
        return Err(Error::Config("need at least three resamples".into()));
    }
    let (s, rho_prime) = match kind {
        LossKind::Absolute => (params.s, 1.0),
        LossKind::Hinge => (1.0, params.rho_prime),
    };
    if !(params.rho > 0.0 && params.rho <= 1.0) || !(rho_prime > 0.0 && rho_prime <= 1.0) || !(s > 0.0) {
        return Err(Error::Domain("need 0 < ρ, ρ' <= 1 and S > 0".into()));
    }
    let w: Vec<f64> = match &params.weights {
        Some(w) if w.len() == lambda => w.clone(),
        Some(w) => return Err(Error::Shape(format!("expected {lambda} weights, got {}", w.len()))),
        None => {
            let mut rng = seeded_rng(derive_seed(seed, &[u64::MAX]));
            (0..lambda).map(|_| 1.7 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>()
        }
    };
    let c = w.iter().map(|x| x * x).sum::<f64>() / lambda as f64;
    if !(c > 0.0) {
        return Err(Error::Domain("weights must not all vanish".into()));
    }
    let w_tilde: Vec<f64> = w.iter().map(|x| x / c.sqrt()).collect();
    let sphere_deviation = (w_tilde.iter().map(|x| x * x).sum::<f64>() / lambda as f64 - 1.0).abs();
    let c1 = s * rho_prime;
    let c2 = params.rho * rho_prime * c.powf(order as f64 / 2.0);

    let rows: Vec<(f64, f64)> = (0..n_resamples)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let couplings = sample_couplings(lambda, order, derive_seed(seed, &[r, 0]), StorageMode::Dense)?;
            let mut rng = seeded_rng(derive_seed(seed, &[r, 1]));
            let sigma = if rng.random::<bool>() { 1.0 } else { -1.0 };
            // q Σ X Π w is the Hamiltonian evaluated off the sphere.
            let y_hat = params.rho * couplings.energy(&w)?;
            let gate = match (kind, params.gate) {
                (LossKind::Absolute, _) | (_, GateMode::Analytic) => rho_prime,
                (LossKind::Hinge, GateMode::Sampled { draws }) => {
                    let draws = draws.max(1);
                    (0..draws).filter(|_| rng.random::<f64>() < rho_prime).count() as f64 / draws as f64
                }
            };
            let loss = gate * (s - sigma * y_hat);
            // L is linear in the couplings, so L_{X'} = −σ L_X.
            Ok((loss, -sigma * couplings.energy(&w_tilde)?))
        })
        .collect::<Result<_>>()?;

    let mut stats = PairStats::default();
    let mut residual = 0.0f64;
    for &(loss, ham) in &rows {
        stats.push(ham, loss);
        if let (LossKind::Absolute, _) | (_, GateMode::Analytic) = (kind, params.gate) {
            residual = residual.max((loss - (c1 + c2 * ham)).abs());
        }
    }
    let pearson = stats.pearson()?;
    let n = stats.n;
    let var_h = stats.sxx - stats.sx * stats.sx / n;
    let c2_hat = (stats.sxy - stats.sx * stats.sy / n) / var_h;
    let c1_hat = stats.sy / n - c2_hat * stats.sx / n;
    if let (LossKind::Hinge, GateMode::Sampled { .. }) = (kind, params.gate) {
        residual = rows.iter().map(|&(l, h)| (l - (c1 + c2 * h)).abs()).fold(0.0, f64::max);
    }

    let expected_pearson = match (kind, params.gate) {
        (LossKind::Hinge, GateMode::Sampled { draws }) => {
            // loss = M̄ (S + a Z) with Z = L_{X'}(w̃) of mean 0 and variance Λ.
            let v = rho_prime * (1.0 - rho_prime) / draws.max(1) as f64;
            let a = params.rho * c.powf(order as f64 / 2.0);
            let var_z = lambda as f64;
            let var_loss = (v + rho_prime * rho_prime) * (s * s + a * a * var_z) - (rho_prime * s).powi(2);
            rho_prime * a * var_z / (var_z * var_loss).sqrt()
        }
        _ => 1.0,
    };
    Ok(LossEquivalenceReport {
        kind,
        resamples: n_resamples,
        pearson,
        expected_pearson,
        stderr: (1.0 - pearson * pearson) / (n - 1.0).sqrt(),
        c1_hat,
        c2_hat,
        c1,
        c2,
        max_affine_residual: residual,
        sphere_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_examples() {
        let m = mass_size_lambda(&LayeredNetSpec::new(2, vec![2]).unwrap());
        assert_eq!((m.psi, m.big_n), (4, 6));
        assert!((m.lambda - 2.0).abs() < 1e-15);
        let m = mass_size_lambda(&LayeredNetSpec::new(100, vec![25]).unwrap());
        assert_eq!((m.psi, m.big_n), (2500, 2525));
        assert!((m.lambda - 50.0).abs() < 1e-12);
        let m = mass_size_lambda(&LayeredNetSpec::new(1, vec![1, 1]).unwrap());
        assert_eq!((m.psi, m.big_n, m.lambda), (1, 3, 1.0));
    }

    #[test]
    fn size_chain_example() {
        let r = verify_size_bounds(&LayeredNetSpec::new(2, vec![2]).unwrap());
        assert_eq!(r.upper, 32.0);
        assert_eq!(r.size, 6.0);
        assert!((r.lower - 4.0 * 2.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(r.holds);
        assert!(verify_size_bounds(&LayeredNetSpec::new(1, vec![1, 1]).unwrap()).holds);
    }

    #[test]
    fn single_path() {
        let spec = LayeredNetSpec::new(1, vec![1]).unwrap();
        let m = PathModel::new(spec, vec![vec![2.0], vec![3.0]], 0.5).unwrap();
        assert_eq!(m.q(), 1.0);
        assert_eq!(m.path_output(&[1.0], &[true]).unwrap(), 6.0);
        assert_eq!(m.path_output(&[1.0], &[false]).unwrap(), 0.0);
        assert_eq!(m.expected_output_yn(&[1.0]).unwrap(), 3.0);
    }

    #[test]
    fn path_sum_matches_linear_network() {
        let spec = LayeredNetSpec::new(3, vec![2, 4]).unwrap();
        let m = PathModel::random(spec, 1.0, 5).unwrap();
        let x = [0.3, -1.2, 0.8];
        // Nested matrix products without any gating.
        let mut h = x.to_vec();
        let widths = m.spec.widths();
        for (k, layer) in m.layers.iter().enumerate() {
            let (n_in, n_out) = (widths[k] as usize, widths[k + 1] as usize);
            h = (0..n_out).map(|o| (0..n_in).map(|i| layer[o * n_in + i] * h[i]).sum()).collect();
        }
        let xs = m.expand_inputs(&x).unwrap();
        let all = vec![true; xs.len()];
        let y = m.path_output(&xs, &all).unwrap();
        assert!((y - m.q() * h[0]).abs() < 1e-12);
        assert!((m.expected_output_yn(&xs).unwrap() - y).abs() < 1e-12);
    }

    #[test]
    fn closed_form_uniformity_example() {
        let a = UniformAssignment::new(2, 2, vec![1, 3, 1, 3], 2.0).unwrap();
        let r = check_uniformity_correlation(&a, None).unwrap();
        assert!((r.corr - 0.75).abs() < 1e-15);
        assert_eq!(r.bound, 0.25);
        assert!(r.holds);
        let u = UniformAssignment::uniform(3, 2, 90).unwrap();
        assert!((check_uniformity_correlation(&u, None).unwrap().corr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_validation() {
        assert!(UniformAssignment::new(2, 2, vec![0, 4, 2, 2], 2.0).is_err());
        assert!(UniformAssignment::new(2, 2, vec![1, 3, 1, 3], 0.5).is_err());
        assert!(UniformAssignment::uniform(2, 2, 10).is_err());
        for seed in 0..20 {
            let a = UniformAssignment::random(3, 2, 900, 1.5, seed).unwrap();
            assert_eq!(a.psi(), 900);
            assert!(a.induced_c() <= 1.5 + 1e-12);
        }
    }

    #[test]
    fn reduced_outputs_agree_when_tight() {
        let a = UniformAssignment::uniform(2, 2, 8).unwrap();
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 + 0.5, -1.0]).collect();
        let r = reduced_outputs(&a, &[0.7, -1.3], &x, 0.5, 0.25, Integrality::Strict).unwrap();
        assert_eq!(r.y_s, r.y_hat);
        let odd = UniformAssignment::new(2, 2, vec![2, 3, 2, 2], 1.5).unwrap();
        let x3: Vec<Vec<f64>> = (0..4).map(|_| vec![1.0; 3]).collect();
        assert!(reduced_outputs(&odd, &[1.0, 1.0], &x3, 1.0, 1.0, Integrality::Strict).is_err());
        let r = reduced_outputs(&odd, &[1.0, 1.0], &x3, 1.0, 1.0, Integrality::Lenient).unwrap();
        assert_eq!(r.t_hat, 2);
        assert!((r.induced_c - 2.25 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_form_at_s_equal_lambda() {
        // s = Λ and t ≡ 1: Ŷ = ρ·L(w) with q = Λ^{-(H-1)/2}.
        let (lambda, order) = (4usize, 3usize);
        let a = UniformAssignment::uniform(lambda, order, 64).unwrap();
        let couplings = sample_couplings(lambda, order, 3, StorageMode::Dense).unwrap();
        let x: Vec<Vec<f64>> = couplings.to_values().into_iter().map(|v| vec![v]).collect();
        let w = [1.2, -0.4, 0.9, -1.1];
        let q = (lambda as f64).powf(-1.0);
        let r = reduced_outputs(&a, &w, &x, 0.3, q, Integrality::Strict).unwrap();
        assert!((r.y_hat - 0.3 * couplings.energy(&w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sign_bounds() {
        assert!((sign_correlation_bound(0.3, 0.1) - 0.56 / (4.0 * 0.0672f64.sqrt())).abs() < 1e-15);
        assert!((sign_correlation_bound(0.3, 0.1) - 0.5401).abs() < 1e-4);
        assert!((sign_correlation_bound(0.5, 0.25) - 1.0 / 3.0).abs() < 1e-15);
        for eps in [0.0, 0.1, 0.3, 0.5] {
            assert!((sign_correlation_bound(0.5, eps) - balanced_sign_bound(eps)).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_classifiers() {
        let r = check_reduction_correlation(0.5, 0.0, FlipSplit::Symmetric, 10_000, 1).unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-12);
        assert_eq!(r.bound, 1.0);
        assert!(r.holds());
        assert!(check_reduction_correlation(0.3, 0.4, FlipSplit::Symmetric, 100, 1).is_err());
    }

    #[test]
    fn absolute_loss_is_affine() {
        let r = loss_equivalence_check(4, 3, 9, LossKind::Absolute, 50, &LossEquivalenceParams::default()).unwrap();
        assert!((r.pearson - 1.0).abs() < 1e-12);
        assert!(r.max_affine_residual < 1e-10);
        assert!((r.c1_hat - r.c1).abs() < 1e-9 && (r.c2_hat - r.c2).abs() < 1e-9);
        assert!(r.sphere_deviation < 1e-14);
    }

    #[test]
    fn loss_kind_parse() {
        assert!("squared".parse::<LossKind>().is_err());
        assert_eq!("hinge".parse::<LossKind>().unwrap(), LossKind::Hinge);
    }
}
