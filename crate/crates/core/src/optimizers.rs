//! Spherical gradient descent and simulated annealing.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::spinglass::{project_tangent, CouplingTensor, SphereConfiguration};

/// How many times a step may be halved before the run is declared stalled.
pub const MAX_HALVINGS: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GradientMode {
    /// Full Riemannian gradient of the Hamiltonian.
    Exact,
    /// `steps` iterations along an unbiased gradient estimate built from a random
    /// subset of first-index coupling slabs (redrawn every step, no line search),
    /// followed by exact descent to convergence.
    Subsampled { fraction: f64, steps: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub step0: f64,
    pub decay: f64,
    pub max_iters: u64,
    /// Stop once `|riemannian gradient| / sqrt(Λ)` falls below this.
    pub grad_tol: f64,
    pub seed: u64,
    pub backtracking: bool,
    pub gradient: GradientMode,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            step0: 0.5,
            decay: 1.0,
            max_iters: 10_000,
            grad_tol: 1e-6,
            seed: 0,
            backtracking: true,
            gradient: GradientMode::Exact,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(Error::Config(format!("step0 must be positive, got {}", self.step0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if let GradientMode::Subsampled { fraction, .. } = self.gradient {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!("subsample fraction must lie in (0, 1], got {fraction}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// No step size produced a decrease.
    Stalled,
    /// The loss became NaN or infinite.
    Diverged,
    /// An annealing schedule ran to the end.
    Completed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    Spinglass,
    Nn,
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One row of a campaign: the outcome of a single optimizer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub kind: TrialKind,
    pub trial_id: u64,
    pub seed: u64,
    /// Λ for spin-glass runs, n1 for networks.
    pub size_param: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(with = "nullable_f64")]
    pub final_loss: f64,
    #[serde(with = "nullable_f64")]
    pub normalized_loss: f64,
    pub iterations: u64,
    pub converged: bool,
    pub status: RunStatus,
    #[serde(default)]
    pub normalized_index: Option<f64>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_error: Option<f64>,
    /// Final configuration, kept only when a campaign asks for it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<Vec<f64>>,
}

impl TrialRecord {
    pub fn new(kind: TrialKind, trial_id: u64, seed: u64, size_param: u64) -> Self {
        Self {
            kind,
            trial_id,
            seed,
            size_param,
            order: None,
            final_loss: f64::NAN,
            normalized_loss: f64::NAN,
            iterations: 0,
            converged: false,
            status: RunStatus::MaxIterations,
            normalized_index: None,
            wall_ms: 0,
            train_loss: None,
            test_loss: None,
            train_error: None,
            test_error: None,
            solution: None,
        }
    }

    /// Equality ignoring the wall-clock field.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_ms = other.wall_ms;
        // NaN != NaN, so compare the serialized form.
        serde_json::to_string(&a).ok() == serde_json::to_string(other).ok()
    }
}

/// `loss / Λ`.
pub fn scale_loss_spin_glass(loss: f64, lambda: u64) -> Result<f64> {
    if lambda == 0 {
        return Err(Error::Domain("Λ must be at least 1".into()));
    }
    Ok(loss / lambda as f64)
}

/// Result of a descent run, including the full loss trace.
#[derive(Clone, Debug)]
pub struct DescentOutcome {
    pub config: SphereConfiguration,
    pub record: TrialRecord,
    /// Loss after every accepted iterate, starting with the initial point.
    pub losses: Vec<f64>,
    /// Largest `|(1/Λ)Σw² − 1|` seen over all iterates.
    pub max_sphere_deviation: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent on the sphere with metric-projection retraction.
///
/// Exact iterations start from `η_t = step0·decay^t`; with backtracking on, the
/// step is halved until the loss does not increase, so the loss trace of the
/// exact phase is monotone. The record's `trial_id` is 0; campaign drivers
/// overwrite it.
pub fn spherical_gradient_descent(
    couplings: &CouplingTensor,
    w0: &SphereConfiguration,
    cfg: &DescentConfig,
) -> Result<DescentOutcome> {
    cfg.validate()?;
    let lambda = couplings.lambda();
    if w0.lambda() != lambda {
        return Err(Error::Shape(format!(
            "initial point has length {}, couplings have Λ = {lambda}",
            w0.lambda()
        )));
    }
    let start = Instant::now();
    let mut w = w0.clone();
    let mut max_dev = w.constraint_deviation();
    let mut iterations = 0u64;

    if let GradientMode::Subsampled { fraction, steps } = cfg.gradient {
        let mut rng = seeded_rng(cfg.seed);
        let slab_count = ((fraction * lambda as f64).round() as usize).clamp(1, lambda);
        while iterations < steps.min(cfg.max_iters) {
            let slabs = sample_indices(&mut rng, lambda, slab_count).into_vec();
            let (_, g) = couplings.energy_and_gradient_subsampled(&w, &slabs)?;
            let direction = project_tangent(&w, &g);
            let eta = cfg.step0 * cfg.decay.powf(iterations as f64);
            let raw: Vec<f64> = w.iter().zip(&direction).map(|(wi, gi)| wi - eta * gi).collect();
            if raw.iter().any(|x| !x.is_finite()) {
                break;
            }
            w = SphereConfiguration::retract(raw)?;
            max_dev = max_dev.max(w.constraint_deviation());
            iterations += 1;
        }
    }

    let sqrt_lambda = (lambda as f64).sqrt();
    let (mut loss, mut full_grad) = couplings.energy_and_gradient(&w)?;
    let mut losses = vec![loss];
    let mut status = RunStatus::MaxIterations;
    let mut exact_iters = 0u64;
    while iterations < cfg.max_iters {
        if !loss.is_finite() {
            status = RunStatus::Diverged;
            break;
        }
        let direction = project_tangent(&w, &full_grad);
        if norm(&direction) / sqrt_lambda < cfg.grad_tol {
            status = RunStatus::Converged;
            break;
        }
        let mut eta = cfg.step0 * cfg.decay.powf(exact_iters as f64);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let raw: Vec<f64> = w.iter().zip(&direction).map(|(wi, gi)| wi - eta * gi).collect();
            let candidate = SphereConfiguration::retract(raw)?;
            let (c_loss, c_grad) = couplings.energy_and_gradient(&candidate)?;
            if !cfg.backtracking || c_loss <= loss || !c_loss.is_finite() {
                accepted = Some((candidate, c_loss, c_grad));
                break;
            }
            eta *= 0.5;
        }
        let Some((next, next_loss, next_grad)) = accepted else {
            status = RunStatus::Stalled;
            break;
        };
        iterations += 1;
        exact_iters += 1;
        max_dev = max_dev.max(next.constraint_deviation());
        w = next;
        loss = next_loss;
        full_grad = next_grad;
        losses.push(loss);
    }
    if !loss.is_finite() {
        status = RunStatus::Diverged;
    }

    let mut record = TrialRecord::new(TrialKind::Spinglass, 0, cfg.seed, lambda as u64);
    record.order = Some(couplings.order() as u32);
    record.final_loss = loss;
    record.normalized_loss = scale_loss_spin_glass(loss, lambda as u64)?;
    record.iterations = iterations;
    record.converged = status == RunStatus::Converged;
    record.status = status;
    record.wall_ms = start.elapsed().as_millis() as u64;
    Ok(DescentOutcome { config: w, record, losses, max_sphere_deviation: max_dev })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub t0: f64,
    pub cooling: f64,
    pub sweeps: u64,
    pub proposal_scale: f64,
    /// Quantization alphabet; proposals then move a coordinate to another allowed value.
    pub value_set: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self { t0: 1.0, cooling: 0.999, sweeps: 1000, proposal_scale: 0.1, value_set: None, seed: 0 }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::Config(format!("t0 must be positive, got {}", self.t0)));
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(Error::Config(format!("cooling must lie in (0, 1), got {}", self.cooling)));
        }
        if !(self.proposal_scale > 0.0) {
            return Err(Error::Config(format!("proposal_scale must be positive, got {}", self.proposal_scale)));
        }
        if let Some(set) = &self.value_set {
            if set.is_empty() {
                return Err(Error::Config("value_set must not be empty".into()));
            }
            if set.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("value_set entries must be finite".into()));
            }
        }
        Ok(())
    }

    /// `t_k = t0·cooling^k`.
    pub fn temperature(&self, sweep: u64) -> f64 {
        self.t0 * self.cooling.powf(sweep as f64)
    }
}

/// A state that supports single-coordinate moves with cheap energy differences.
pub trait AnnealState {
    fn coords(&self) -> &[f64];
    fn energy(&self) -> f64;
    /// Energy change if coordinate `i` were set to `value`.
    fn delta(&mut self, i: usize, value: f64) -> f64;
    fn commit(&mut self, i: usize, value: f64);
}

#[derive(Clone, Debug)]
pub struct AnnealOutcome {
    pub best: Vec<f64>,
    pub best_energy: f64,
    pub final_energy: f64,
    pub accepted: u64,
    pub accepted_uphill: u64,
    pub sweeps: u64,
    /// Every coordinate value ever accepted lies in the alphabet (always true without one).
    pub stayed_in_alphabet: bool,
}

/// Metropolis annealing with geometric cooling, one coordinate sweep per temperature.
pub fn anneal<S: AnnealState>(state: &mut S, cfg: &AnnealConfig) -> Result<AnnealOutcome> {
    cfg.validate()?;
    let n = state.coords().len();
    if let Some(set) = &cfg.value_set {
        if state.coords().iter().any(|x| !set.contains(x)) {
            return Err(Error::Config("initial point is not in the quantization alphabet".into()));
        }
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut energy = state.energy();
    let mut best = state.coords().to_vec();
    let mut best_energy = energy;
    let (mut accepted, mut accepted_uphill) = (0u64, 0u64);
    let mut stayed = true;
    for sweep in 0..cfg.sweeps {
        let t = cfg.temperature(sweep);
        for i in 0..n {
            let current = state.coords()[i];
            let proposal = match &cfg.value_set {
                Some(set) => {
                    if set.len() < 2 {
                        continue;
                    }
                    let mut pick = set[rng.random_range(0..set.len() - 1)];
                    if pick == current {
                        pick = set[set.len() - 1];
                    }
                    pick
                }
                None => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    current + cfg.proposal_scale * z
                }
            };
            let d = state.delta(i, proposal);
            if !d.is_finite() {
                continue;
            }
            let u: f64 = rng.random();
            if d <= 0.0 || u < (-d / t).exp() {
                state.commit(i, proposal);
                energy += d;
                accepted += 1;
                if d > 0.0 {
                    accepted_uphill += 1;
                }
                if let Some(set) = &cfg.value_set {
                    stayed &= set.contains(&proposal);
                }
                if energy < best_energy {
                    // Re-read the exact value to keep drift out of the reported best.
                    energy = state.energy();
                    best_energy = energy;
                    best.clear();
                    best.extend_from_slice(state.coords());
                }
            }
        }
    }
    Ok(AnnealOutcome {
        best,
        best_energy,
        final_energy: state.energy(),
        accepted,
        accepted_uphill,
        sweeps: cfg.sweeps,
        stayed_in_alphabet: stayed,
    })
}

/// Adapter that evaluates a plain objective from scratch for every move.
pub struct FullEvaluation<F> {
    objective: F,
    x: Vec<f64>,
    value: f64,
}

impl<F: FnMut(&[f64]) -> f64> FullEvaluation<F> {
    pub fn new(mut objective: F, x0: Vec<f64>) -> Self {
        let value = objective(&x0);
        Self { objective, x: x0, value }
    }
}

impl<F: FnMut(&[f64]) -> f64> AnnealState for FullEvaluation<F> {
    fn coords(&self) -> &[f64] {
        &self.x
    }

    fn energy(&self) -> f64 {
        self.value
    }

    fn delta(&mut self, i: usize, value: f64) -> f64 {
        let old = self.x[i];
        self.x[i] = value;
        let trial = (self.objective)(&self.x);
        self.x[i] = old;
        trial - self.value
    }

    fn commit(&mut self, i: usize, value: f64) {
        self.x[i] = value;
        self.value = (self.objective)(&self.x);
    }
}

/// Anneal an arbitrary objective over real vectors.
pub fn simulated_annealing<F: FnMut(&[f64]) -> f64>(
    objective: F,
    x0: Vec<f64>,
    cfg: &AnnealConfig,
) -> Result<(Vec<f64>, AnnealOutcome)> {
    let mut state = FullEvaluation::new(objective, x0);
    let outcome = anneal(&mut state, cfg)?;
    Ok((outcome.best.clone(), outcome))
}

/// Anneal the Hamiltonian on the sphere: a move perturbs one coordinate and retracts.
pub fn anneal_spin_glass(
    couplings: &CouplingTensor,
    w0: &SphereConfiguration,
    cfg: &AnnealConfig,
) -> Result<(SphereConfiguration, TrialRecord)> {
    if cfg.value_set.is_some() {
        return Err(Error::Config("quantized annealing is not defined on the sphere".into()));
    }
    let start = Instant::now();
    let lambda = couplings.lambda();
    let objective = |x: &[f64]| match SphereConfiguration::retract(x.to_vec()) {
        Ok(w) => couplings.energy(&w).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let (best, outcome) = simulated_annealing(objective, w0.to_vec(), cfg)?;
    let best = SphereConfiguration::retract(best)?;
    let loss = couplings.energy(&best)?;
    let mut record = TrialRecord::new(TrialKind::Spinglass, 0, cfg.seed, lambda as u64);
    record.order = Some(couplings.order() as u32);
    record.final_loss = loss;
    record.normalized_loss = scale_loss_spin_glass(loss, lambda as u64)?;
    record.iterations = outcome.sweeps;
    record.status = RunStatus::Completed;
    record.wall_ms = start.elapsed().as_millis() as u64;
    Ok((best, record))
}
