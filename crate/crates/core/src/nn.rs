//! A single hidden layer ReLU network trained by SGD or by annealing over quantized weights.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optimizers::{anneal, AnnealConfig, AnnealOutcome, AnnealState};
use crate::rng::seeded_rng;

/// Largest parameter count for which a dense Hessian is formed.
pub const HESSIAN_PARAM_CAP: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Softmax cross-entropy over all classes.
    Xent,
    /// One output, hinge loss on even (+1) versus odd (−1) labels.
    HingeBinary,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xent" => Ok(Self::Xent),
            "hinge-binary" => Ok(Self::HingeBinary),
            other => Err(Error::Config(format!("unknown loss mode '{other}'"))),
        }
    }
}

impl LossMode {
    pub fn outputs(self, classes: usize) -> usize {
        match self {
            Self::Xent => classes,
            Self::HingeBinary => 1,
        }
    }
}

/// `scores = W2·relu(W1·x + b1) + b2`; weights row-major, biases empty when disabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub d: usize,
    pub n1: usize,
    pub out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, n1: usize, out: usize, bias: bool) -> Self {
        let nb = usize::from(bias);
        Self { d, n1, out, w1: vec![0.0; n1 * d], b1: vec![0.0; n1 * nb], w2: vec![0.0; out * n1], b2: vec![0.0; out * nb] }
    }

    /// Every parameter uniform in `[0, scale)`; `scale = 1` is the unit cube.
    pub fn init_unit_cube(d: usize, n1: usize, out: usize, bias: bool, scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("init scale must lie in (0, 1], got {scale}")));
        }
        let mut p = Self::zeros(d, n1, out, bias);
        let mut rng = seeded_rng(seed);
        p.for_each_mut(|x| *x = scale * rng.random::<f64>());
        Ok(p)
    }

    /// Every parameter drawn uniformly from a finite alphabet.
    pub fn init_from_alphabet(d: usize, n1: usize, out: usize, bias: bool, alphabet: &[f64], seed: u64) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::Config("alphabet must not be empty".into()));
        }
        let mut p = Self::zeros(d, n1, out, bias);
        let mut rng = seeded_rng(seed);
        p.for_each_mut(|x| *x = alphabet[rng.random_range(0..alphabet.len())]);
        Ok(p)
    }

    pub fn has_bias(&self) -> bool {
        !self.b1.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn for_each_mut(&mut self, f: impl FnMut(&mut f64)) {
        self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).chain(&mut self.b2).for_each(f);
    }

    /// `w1, b1, w2, b2` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.param_count(), flat.len())));
        }
        let mut it = flat.iter().copied();
        self.for_each_mut(|x| *x = it.next().unwrap_or(0.0));
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    fn hidden_pre(&self, x: &[f64], j: usize) -> f64 {
        let row = &self.w1[j * self.d..(j + 1) * self.d];
        let b = if self.has_bias() { self.b1[j] } else { 0.0 };
        row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b
    }
}

/// Class scores for one input.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.d {
        return Err(Error::Shape(format!("input has {} features, network expects {}", x.len(), params.d)));
    }
    let hidden: Vec<f64> = (0..params.n1).map(|j| params.hidden_pre(x, j).max(0.0)).collect();
    Ok(output_scores(params, &hidden))
}

fn output_scores(params: &MlpParams, hidden: &[f64]) -> Vec<f64> {
    (0..params.out)
        .map(|k| {
            let row = &params.w2[k * params.n1..(k + 1) * params.n1];
            let b = if params.has_bias() { params.b2[k] } else { 0.0 };
            row.iter().zip(hidden).map(|(w, a)| w * a).sum::<f64>() + b
        })
        .collect()
}

fn hinge_target(label: usize) -> f64 {
    if label.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Per-example loss and its derivative with respect to the scores.
fn example_loss(scores: &[f64], label: usize, mode: LossMode, dscores: Option<&mut [f64]>) -> f64 {
    match mode {
        LossMode::Xent => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let log_z = max + sum.ln();
            if let Some(ds) = dscores {
                for (k, (d, s)) in ds.iter_mut().zip(scores).enumerate() {
                    *d = (s - log_z).exp() - f64::from(u8::from(k == label));
                }
            }
            log_z - scores[label]
        }
        LossMode::HingeBinary => {
            let y = hinge_target(label);
            let margin = y * scores[0];
            if let Some(ds) = dscores {
                ds[0] = if margin < 1.0 { -y } else { 0.0 };
            }
            (1.0 - margin).max(0.0)
        }
    }
}

fn check_mode(params: &MlpParams, data: &Dataset, mode: LossMode) -> Result<()> {
    if params.d != data.dim {
        return Err(Error::Shape(format!("network expects {} features, data has {}", params.d, data.dim)));
    }
    if params.out != mode.outputs(data.classes) {
        return Err(Error::Shape(format!(
            "network has {} outputs, loss mode needs {}",
            params.out,
            mode.outputs(data.classes)
        )));
    }
    Ok(())
}

/// Mean loss and its gradient over the rows `idx` (all rows when `None`).
pub fn loss_and_gradient(params: &MlpParams, data: &Dataset, idx: Option<&[usize]>, mode: LossMode) -> Result<(f64, Vec<f64>)> {
    check_mode(params, data, mode)?;
    let all: Vec<usize>;
    let rows = match idx {
        Some(r) => r,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    if rows.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let (d, n1, out) = (params.d, params.n1, params.out);
    let bias = params.has_bias();
    let mut gw1 = vec![0.0; n1 * d];
    let mut gb1 = vec![0.0; params.b1.len()];
    let mut gw2 = vec![0.0; out * n1];
    let mut gb2 = vec![0.0; params.b2.len()];
    let mut total = 0.0;
    let mut z = vec![0.0; n1];
    let mut a = vec![0.0; n1];
    let mut ds = vec![0.0; out];
    let mut da = vec![0.0; n1];
    for &r in rows {
        let x = data.row(r);
        for j in 0..n1 {
            z[j] = params.hidden_pre(x, j);
            a[j] = z[j].max(0.0);
        }
        let scores = output_scores(params, &a);
        total += example_loss(&scores, data.labels[r], mode, Some(&mut ds));
        da.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..out {
            if ds[k] == 0.0 {
                continue;
            }
            let row = &params.w2[k * n1..(k + 1) * n1];
            let grow = &mut gw2[k * n1..(k + 1) * n1];
            for j in 0..n1 {
                grow[j] += ds[k] * a[j];
                da[j] += ds[k] * row[j];
            }
            if bias {
                gb2[k] += ds[k];
            }
        }
        for j in 0..n1 {
            if z[j] <= 0.0 || da[j] == 0.0 {
                continue;
            }
            let grow = &mut gw1[j * d..(j + 1) * d];
            for (g, xi) in grow.iter_mut().zip(x) {
                *g += da[j] * xi;
            }
            if bias {
                gb1[j] += da[j];
            }
        }
    }
    let m = rows.len() as f64;
    let mut grad = [gw1, gb1, gw2, gb2].concat();
    grad.iter_mut().for_each(|g| *g /= m);
    Ok((total / m, grad))
}

pub fn mean_loss(params: &MlpParams, data: &Dataset, mode: LossMode) -> Result<f64> {
    check_mode(params, data, mode)?;
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        total += example_loss(&forward(params, data.row(i))?, data.labels[i], mode, None);
    }
    Ok(total / data.len() as f64)
}

fn predict(scores: &[f64], mode: LossMode) -> usize {
    match mode {
        // Ties go to the lowest class index.
        LossMode::Xent => scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &s)| if s > best.1 { (k, s) } else { best })
            .0,
        LossMode::HingeBinary => usize::from(scores[0] < 0.0),
    }
}

/// Fraction of correctly classified rows (even/odd for the hinge mode).
pub fn accuracy(params: &MlpParams, data: &Dataset, mode: LossMode) -> Result<f64> {
    check_mode(params, data, mode)?;
    let mut hits = 0usize;
    for i in 0..data.len() {
        let pred = predict(&forward(params, data.row(i))?, mode);
        let truth = match mode {
            LossMode::Xent => data.labels[i],
            LossMode::HingeBinary => data.labels[i] % 2,
        };
        hits += usize::from(pred == truth);
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 32, lr0: 0.05, lr_decay: 0.98, seed: 0, mode: LossMode::Xent }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be non-negative, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// The loss became NaN or infinite; `history` holds the epochs before that.
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Full training loss after each completed epoch.
    pub history: Vec<f64>,
    pub status: TrainStatus,
    pub train_loss: f64,
    pub train_error: f64,
    pub test_loss: Option<f64>,
    pub test_error: Option<f64>,
}

fn finish(params: MlpParams, history: Vec<f64>, status: TrainStatus, train: &Dataset, test: Option<&Dataset>, mode: LossMode) -> Result<TrainOutcome> {
    let train_loss = mean_loss(&params, train, mode)?;
    let train_error = 1.0 - accuracy(&params, train, mode)?;
    let (test_loss, test_error) = match test {
        Some(t) => (Some(mean_loss(&params, t, mode)?), Some(1.0 - accuracy(&params, t, mode)?)),
        None => (None, None),
    };
    Ok(TrainOutcome { params, history, status, train_loss, train_error, test_loss, test_error })
}

/// Mini-batch SGD with `lr_t = lr0·lr_decay^epoch`.
pub fn train_sgd(params0: &MlpParams, train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_mode(params0, train, cfg.mode)?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut params = params0.clone();
    let mut flat = params.to_flat();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grad) = loss_and_gradient(&params, train, Some(batch), cfg.mode)?;
            for (p, g) in flat.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            params.set_flat(&flat)?;
        }
        let loss = mean_loss(&params, train, cfg.mode)?;
        if !loss.is_finite() || !params.is_finite() {
            return Ok(TrainOutcome {
                params,
                history,
                status: TrainStatus::Aborted,
                train_loss: f64::NAN,
                train_error: f64::NAN,
                test_loss: None,
                test_error: None,
            });
        }
        history.push(loss);
    }
    finish(params, history, TrainStatus::Completed, train, test, cfg.mode)
}

/// Annealing state with cached pre-activations and scores so a single-weight move
/// costs `O(m·out)` instead of a full forward pass.
/// Proposed coordinate, value, and the scores, losses and hidden pre-activations it would give.
type PendingMove = (usize, f64, Vec<f64>, Vec<f64>, Vec<f64>);

struct NetAnnealState<'a> {
    params: MlpParams,
    flat: Vec<f64>,
    data: &'a Dataset,
    mode: LossMode,
    /// `m × n1` hidden pre-activations.
    z: Vec<f64>,
    /// `m × out` scores.
    scores: Vec<f64>,
    losses: Vec<f64>,
    total: f64,
    pending: Option<PendingMove>,
}

enum Slot {
    W1(usize, usize),
    B1(usize),
    W2(usize, usize),
    B2(usize),
}

impl<'a> NetAnnealState<'a> {
    fn new(params: MlpParams, data: &'a Dataset, mode: LossMode) -> Result<Self> {
        check_mode(&params, data, mode)?;
        if data.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let (m, n1) = (data.len(), params.n1);
        let mut z = vec![0.0; m * n1];
        let mut scores = Vec::with_capacity(m * params.out);
        let mut losses = Vec::with_capacity(m);
        for i in 0..m {
            let x = data.row(i);
            for j in 0..n1 {
                z[i * n1 + j] = params.hidden_pre(x, j);
            }
            let a: Vec<f64> = z[i * n1..(i + 1) * n1].iter().map(|v| v.max(0.0)).collect();
            let s = output_scores(&params, &a);
            losses.push(example_loss(&s, data.labels[i], mode, None));
            scores.extend(s);
        }
        let total = losses.iter().sum();
        let flat = params.to_flat();
        Ok(Self { params, flat, data, mode, z, scores, losses, total, pending: None })
    }

    fn slot(&self, i: usize) -> Slot {
        let p = &self.params;
        let (w1, b1, w2) = (p.w1.len(), p.b1.len(), p.w2.len());
        if i < w1 {
            Slot::W1(i / p.d, i % p.d)
        } else if i < w1 + b1 {
            Slot::B1(i - w1)
        } else if i < w1 + b1 + w2 {
            let k = i - w1 - b1;
            Slot::W2(k / p.n1, k % p.n1)
        } else {
            Slot::B2(i - w1 - b1 - w2)
        }
    }

    /// New scores, losses and (for hidden moves) pre-activations after setting coordinate `i`.
    fn propose(&self, i: usize, value: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (m, n1, out) = (self.data.len(), self.params.n1, self.params.out);
        let delta = value - self.flat[i];
        let mut scores = self.scores.clone();
        let mut new_z = Vec::new();
        match self.slot(i) {
            Slot::W1(j, _) | Slot::B1(j) => {
                let input = match self.slot(i) {
                    Slot::W1(_, c) => Some(c),
                    _ => None,
                };
                new_z = Vec::with_capacity(m);
                for e in 0..m {
                    let old = self.z[e * n1 + j];
                    let step = input.map_or(delta, |c| delta * self.data.row(e)[c]);
                    let new = old + step;
                    new_z.push(new);
                    let da = new.max(0.0) - old.max(0.0);
                    if da != 0.0 {
                        for k in 0..out {
                            scores[e * out + k] += self.params.w2[k * n1 + j] * da;
                        }
                    }
                }
            }
            Slot::W2(k, j) => {
                for e in 0..m {
                    scores[e * out + k] += delta * self.z[e * n1 + j].max(0.0);
                }
            }
            Slot::B2(k) => {
                for e in 0..m {
                    scores[e * out + k] += delta;
                }
            }
        }
        let losses = (0..m)
            .map(|e| example_loss(&scores[e * out..(e + 1) * out], self.data.labels[e], self.mode, None))
            .collect();
        (scores, losses, new_z)
    }
}

impl AnnealState for NetAnnealState<'_> {
    fn coords(&self) -> &[f64] {
        &self.flat
    }

    fn energy(&self) -> f64 {
        self.total / self.data.len() as f64
    }

    fn delta(&mut self, i: usize, value: f64) -> f64 {
        let (scores, losses, z) = self.propose(i, value);
        let new_total: f64 = losses.iter().sum();
        let d = (new_total - self.total) / self.data.len() as f64;
        self.pending = Some((i, value, scores, losses, z));
        d
    }

    fn commit(&mut self, i: usize, value: f64) {
        let pending = match self.pending.take() {
            Some(p) if p.0 == i && p.1 == value => p,
            _ => {
                let (s, l, z) = self.propose(i, value);
                (i, value, s, l, z)
            }
        };
        let (_, _, scores, losses, new_z) = pending;
        if let Slot::W1(j, _) | Slot::B1(j) = self.slot(i) {
            let n1 = self.params.n1;
            for (e, v) in new_z.into_iter().enumerate() {
                self.z[e * n1 + j] = v;
            }
        }
        self.scores = scores;
        self.total = losses.iter().sum();
        self.losses = losses;
        self.flat[i] = value;
        let flat = self.flat.clone();
        // set_flat only fails on a length mismatch, which cannot happen here.
        let _ = self.params.set_flat(&flat);
    }
}

#[derive(Clone, Debug)]
pub struct AnnealTrainOutcome {
    pub params: MlpParams,
    pub anneal: AnnealOutcome,
    pub train_loss: f64,
    pub train_error: f64,
    pub test_loss: Option<f64>,
    pub test_error: Option<f64>,
}

/// Simulated annealing over the network weights, minimizing the mean training loss.
///
/// With `cfg.value_set` present (e.g. `{-1, 0, 1}`) every weight stays in that
/// alphabet; `params0` must already be in it.
pub fn train_sa(params0: &MlpParams, train: &Dataset, test: Option<&Dataset>, mode: LossMode, cfg: &AnnealConfig) -> Result<AnnealTrainOutcome> {
    let mut state = NetAnnealState::new(params0.clone(), train, mode)?;
    let anneal_out = anneal(&mut state, cfg)?;
    let mut params = params0.clone();
    params.set_flat(&anneal_out.best)?;
    let out = finish(params, Vec::new(), TrainStatus::Completed, train, test, mode)?;
    Ok(AnnealTrainOutcome {
        params: out.params,
        anneal: anneal_out,
        train_loss: out.train_loss,
        train_error: out.train_error,
        test_loss: out.test_loss,
        test_error: out.test_error,
    })
}

/// Annealing restricted to the three-level alphabet `{-1, 0, 1}`.
pub fn train_quantized_sa(params0: &MlpParams, train: &Dataset, test: Option<&Dataset>, mode: LossMode, cfg: &AnnealConfig) -> Result<AnnealTrainOutcome> {
    let cfg = AnnealConfig { value_set: Some(cfg.value_set.clone().unwrap_or_else(|| vec![-1.0, 0.0, 1.0])), ..cfg.clone() };
    train_sa(params0, train, test, mode, &cfg)
}

/// Dense Hessian from central differences of a gradient, symmetrized as `(H + Hᵀ)/2`.
pub fn finite_difference_hessian(mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>, x: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    if n > HESSIAN_PARAM_CAP {
        return Err(Error::Capacity(format!(
            "dense Hessian limited to {HESSIAN_PARAM_CAP} parameters, got {n}"
        )));
    }
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + step;
        let gp = grad(&probe)?;
        probe[j] = x[j] - step;
        let gm = grad(&probe)?;
        probe[j] = x[j];
        if gp.len() != n || gm.len() != n {
            return Err(Error::Shape("gradient length differs from the point".into()));
        }
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Training-loss Hessian at a solution, by differences of the analytic gradient (step 1e-4).
pub fn hessian_at_solution(params: &MlpParams, data: &Dataset, mode: LossMode) -> Result<DMatrix<f64>> {
    let mut work = params.clone();
    finite_difference_hessian(
        |flat| {
            work.set_flat(flat)?;
            Ok(loss_and_gradient(&work, data, None, mode)?.1)
        },
        &params.to_flat(),
        1e-4,
    )
}

/// `log E[L] ≈ c + α·n^β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub beta: f64,
    pub intercept: f64,
    /// Residual sum of squares in log space.
    pub rss: f64,
    /// False when `α·n^β` is flat over the data, so `β` is not determined.
    pub beta_identified: bool,
}

impl PowerLawFit {
    /// `exp(α·n^β)`, the size-dependent factor removed by scaling.
    pub fn factor(&self, n: f64) -> f64 {
        (self.alpha * n.powf(self.beta)).exp()
    }

    /// `exp(c + α·n^β)`, the fitted mean loss at size `n`.
    pub fn fitted_mean(&self, n: f64) -> f64 {
        (self.intercept + self.alpha * n.powf(self.beta)).exp()
    }
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (slope, intercept, rss)
}

const BETA_RANGE: (f64, f64) = (0.01, 3.0);

/// Least-squares fit of `log L = c + α n^β`: grid search over `β` with a
/// closed-form linear fit inside, refined by golden-section search.
pub fn fit_power_law(sizes: &[f64], losses: &[f64]) -> Result<PowerLawFit> {
    if sizes.len() != losses.len() {
        return Err(Error::Shape("sizes and losses differ in length".into()));
    }
    let mut distinct = sizes.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Config("need at least three distinct sizes".into()));
    }
    if losses.iter().any(|&l| !(l > 0.0)) || sizes.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::Domain("sizes and losses must be positive".into()));
    }
    let ys: Vec<f64> = losses.iter().map(|l| l.ln()).collect();
    let eval = |beta: f64| {
        let xs: Vec<f64> = sizes.iter().map(|n| n.powf(beta)).collect();
        linear_fit(&xs, &ys)
    };
    let steps = 600;
    let (lo, hi) = BETA_RANGE;
    let grid = |i: usize| lo + (hi - lo) * i as f64 / steps as f64;
    let best_i = (0..=steps).min_by(|&a, &b| eval(grid(a)).2.total_cmp(&eval(grid(b)).2)).unwrap_or(0);
    let (mut a, mut b) = (grid(best_i.saturating_sub(1)), grid((best_i + 1).min(steps)));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if eval(c).2 < eval(d).2 {
            b = d;
        } else {
            a = c;
        }
    }
    let beta = 0.5 * (a + b);
    let (alpha, intercept, rss) = eval(beta);
    let spread = distinct.iter().map(|n| alpha * n.powf(beta)).fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), v| (mn.min(v), mx.max(v)));
    let beta_identified = (spread.1 - spread.0).abs() > 1e-9;
    Ok(PowerLawFit { alpha, beta, intercept, rss, beta_identified })
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape("need two equal-length samples of size >= 2".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_digits;

    fn tiny_data() -> Dataset {
        let inputs = vec![0.2, 0.9, 0.4, 0.1, 0.7, 0.3, 0.5, 0.8, 0.6];
        Dataset::new(inputs, vec![0, 2, 1], 3, 3).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_scores() {
        let mut p = MlpParams::init_unit_cube(3, 4, 2, true, 1.0, 1).unwrap();
        p.b1.iter_mut().for_each(|b| *b = 0.0);
        p.b2.iter_mut().for_each(|b| *b = 0.0);
        assert_eq!(forward(&p, &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        let mut q = p.clone();
        q.w1.iter_mut().for_each(|w| *w = -1.0);
        q.b2 = vec![0.3, -0.7];
        assert_eq!(forward(&q, &[0.5, 0.2, 0.9]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn uniform_scores_loss() {
        let p = MlpParams::zeros(100, 5, 10, true);
        let data = synthetic_digits(20, 10, 1, 0.1).unwrap();
        let (loss, _) = loss_and_gradient(&p, &data, None, LossMode::Xent).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = tiny_data();
        // d=3, n1=2, out=3: 6 + 2 + 6 + 3 = 17 parameters.
        let mut rng = seeded_rng(4);
        let mut p = MlpParams::zeros(3, 2, 3, true);
        p.for_each_mut(|x| *x = rng.random_range(-1.0..1.0));
        let (_, g) = loss_and_gradient(&p, &data, None, LossMode::Xent).unwrap();
        let flat = p.to_flat();
        for i in 0..flat.len() {
            let mut q = p.clone();
            let mut f = flat.clone();
            f[i] += 1e-5;
            q.set_flat(&f).unwrap();
            let up = mean_loss(&q, &data, LossMode::Xent).unwrap();
            f[i] -= 2e-5;
            q.set_flat(&f).unwrap();
            let down = mean_loss(&q, &data, LossMode::Xent).unwrap();
            let fd = (up - down) / 2e-5;
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn duplicated_batch_same_loss() {
        let data = tiny_data();
        let p = MlpParams::init_unit_cube(3, 2, 3, true, 0.5, 2).unwrap();
        let (a, _) = loss_and_gradient(&p, &data, Some(&[0, 1, 2]), LossMode::Xent).unwrap();
        let (b, _) = loss_and_gradient(&p, &data, Some(&[0, 1, 2, 0, 1, 2]), LossMode::Xent).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(loss_and_gradient(&p, &data, Some(&[]), LossMode::Xent).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = synthetic_digits(30, 3, 2, 0.1).unwrap();
        let p = MlpParams::init_unit_cube(100, 4, 3, true, 0.1, 3).unwrap();
        let cfg = TrainConfig { epochs: 2, lr0: 0.0, ..Default::default() };
        assert_eq!(train_sgd(&p, &data, None, &cfg).unwrap().params, p);
    }

    #[test]
    fn power_law_constant_losses() {
        let fit = fit_power_law(&[5.0, 10.0, 25.0, 50.0], &[0.3; 4]).unwrap();
        assert!(fit.alpha.abs() < 1e-9);
        assert!(!fit.beta_identified);
        assert!(fit_power_law(&[5.0, 10.0], &[1.0, 2.0]).is_err());
        assert!(fit_power_law(&[5.0, 10.0, 20.0], &[1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_basics() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&xs, &[1.0; 4]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn hessian_cap() {
        let x = vec![0.0; HESSIAN_PARAM_CAP + 1];
        assert!(matches!(finite_difference_hessian(|v| Ok(v.to_vec()), &x, 1e-4), Err(Error::Capacity(_))));
    }

    #[test]
    fn incremental_annealing_energy_is_exact() {
        let data = synthetic_digits(40, 4, 3, 0.1).unwrap();
        let p = MlpParams::init_from_alphabet(100, 3, 4, true, &[-1.0, 0.0, 1.0], 5).unwrap();
        let mut state = NetAnnealState::new(p, &data, LossMode::Xent).unwrap();
        for (i, v) in [(7usize, 1.0), (301, -1.0), (303, 0.0), (305, 1.0), (316, -1.0)] {
            let before = state.energy();
            let d = state.delta(i, v);
            state.commit(i, v);
            let exact = mean_loss(&state.params, &data, LossMode::Xent).unwrap();
            assert!((before + d - exact).abs() < 1e-9);
            assert!((state.energy() - exact).abs() < 1e-9);
        }
    }
}
