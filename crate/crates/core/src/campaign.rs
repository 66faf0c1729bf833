//! Seeded trial campaigns, record files and report tables.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{loss_equivalence_check, LossEquivalenceParams, LossEquivalenceReport, LossKind};
use crate::data::{load_idx_dir, synthetic_digits, Dataset};
use crate::error::{Error, Result};
use crate::format::sig12;
use crate::nn::{
    fit_power_law, hessian_at_solution, pearson, train_quantized_sa, train_sgd, LossMode, MlpParams, PowerLawFit,
    TrainConfig, HESSIAN_PARAM_CAP,
};
use crate::optimizers::{
    anneal_spin_glass, spherical_gradient_descent, AnnealConfig, DescentConfig, RunStatus, TrialKind, TrialRecord,
};
use crate::rng::derive_seed;
use crate::spectral::{eigen_symmetric, normalized_index, spin_glass_spectrum, BandLabel, BandThresholds, DEFAULT_ZERO_THRESHOLD};
use crate::spinglass::{hamiltonian, sample_couplings, sample_uniform_sphere, CouplingTensor, StorageMode};
use crate::theory::ModelOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    Spinglass,
    Nn,
    Approx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingPolicy {
    /// One coupling draw per size, shared by every trial (many starts on one landscape).
    Shared,
    /// A fresh draw for every trial.
    PerTrial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinOptimizer {
    Descent,
    Anneal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnOptimizer {
    Sgd,
    QuantizedSa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { train: usize, test: usize, classes: usize, noise: f64, seed: u64 },
    /// A directory holding the four standard IDX digit files.
    Idx { dir: PathBuf, train_limit: Option<usize>, test_limit: Option<usize> },
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synthetic { train: 500, test: 500, classes: 10, noise: 0.1, seed: 7 }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            Self::Synthetic { train, test, classes, noise, seed } => {
                let all = synthetic_digits(train + test, *classes, *seed, *noise)?;
                Ok(all.split_at(*train))
            }
            Self::Idx { dir, train_limit, test_limit } => {
                let (mut train, mut test) = load_idx_dir(dir)?;
                if let Some(n) = train_limit {
                    train = train.split_at((*n).min(train.len())).0;
                }
                if let Some(n) = test_limit {
                    test = test.split_at((*n).min(test.len())).0;
                }
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSettings {
    pub mode: LossMode,
    pub optimizer: NnOptimizer,
    pub train: TrainConfig,
    pub anneal: AnnealConfig,
    pub bias: bool,
    /// Initial parameters uniform in `[0, init_scale)`.
    pub init_scale: f64,
    pub data: DataSource,
}

impl Default for NnSettings {
    fn default() -> Self {
        Self {
            mode: LossMode::Xent,
            optimizer: NnOptimizer::Sgd,
            train: TrainConfig::default(),
            anneal: AnnealConfig { sweeps: 200, ..AnnealConfig::default() },
            bias: true,
            init_scale: 0.1,
            data: DataSource::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub kind: CampaignKind,
    /// Λ for spin-glass and loss-equivalence campaigns, n1 for networks.
    pub sizes: Vec<u64>,
    pub trials: u64,
    pub master_seed: u64,
    /// Record file; records are appended one JSON object per line.
    pub output: Option<PathBuf>,
    pub order: u32,
    pub couplings: CouplingPolicy,
    pub storage: StorageMode,
    pub optimizer: SpinOptimizer,
    pub descent: DescentConfig,
    pub anneal: AnnealConfig,
    pub compute_index: bool,
    pub zero_threshold: f64,
    pub save_solutions: bool,
    pub nn: NnSettings,
    pub loss_kind: LossKind,
    pub equivalence_resamples: u64,
    /// Run trials on the rayon pool; records are identical either way.
    pub parallel: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            kind: CampaignKind::Spinglass,
            sizes: vec![25, 50, 100, 150],
            trials: 200,
            master_seed: 0,
            output: None,
            order: 3,
            couplings: CouplingPolicy::Shared,
            storage: StorageMode::Auto,
            optimizer: SpinOptimizer::Descent,
            descent: DescentConfig::default(),
            anneal: AnnealConfig::default(),
            compute_index: false,
            zero_threshold: DEFAULT_ZERO_THRESHOLD,
            save_solutions: false,
            nn: NnSettings::default(),
            loss_kind: LossKind::Absolute,
            equivalence_resamples: 2000,
            parallel: true,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sizes.is_empty() {
            return Err(Error::Config("size list must not be empty".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Config("sizes must be positive".into()));
        }
        ModelOrder::new(self.order)?;
        match self.kind {
            CampaignKind::Spinglass => match self.optimizer {
                SpinOptimizer::Descent => self.descent.validate(),
                SpinOptimizer::Anneal => self.anneal.validate(),
            },
            CampaignKind::Nn => match self.nn.optimizer {
                NnOptimizer::Sgd => self.nn.train.validate(),
                NnOptimizer::QuantizedSa => self.nn.anneal.validate(),
            },
            CampaignKind::Approx => Ok(()),
        }
    }

    /// Seed of trial `trial` at size `size`.
    pub fn trial_seed(&self, size: u64, trial: u64) -> u64 {
        derive_seed(self.master_seed, &[size, trial])
    }

    fn shared_coupling_seed(&self, size: u64) -> u64 {
        derive_seed(self.master_seed, &[size, u64::MAX])
    }

    /// The couplings a spin-glass trial with seed `trial_seed` ran on.
    pub fn couplings_for(&self, size: u64, trial_seed: u64) -> Result<CouplingTensor> {
        let seed = match self.couplings {
            CouplingPolicy::Shared => self.shared_coupling_seed(size),
            CouplingPolicy::PerTrial => derive_seed(trial_seed, &[0]),
        };
        sample_couplings(size as usize, self.order as usize, seed, self.storage)
    }

    fn jobs(&self) -> Vec<(u64, u64)> {
        self.sizes.iter().flat_map(|&s| (0..self.trials).map(move |t| (s, t))).collect()
    }
}

/// Appends JSON lines, one writer for the whole campaign.
struct RecordSink(Option<Mutex<File>>);

impl RecordSink {
    fn open(path: Option<&Path>) -> Result<Self> {
        Ok(Self(match path {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        }))
    }

    fn append<T: Serialize>(&self, record: &T) -> Result<()> {
        if let Some(file) = &self.0 {
            let mut line = serde_json::to_string(record)?;
            line.push('\n');
            let mut f = file.lock().map_err(|_| Error::Invariant("record writer poisoned".into()))?;
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

fn run_jobs<T, F>(cfg: &CampaignConfig, sink: &RecordSink, job: F) -> Result<Vec<T>>
where
    T: Serialize + Send,
    F: Fn(u64, u64) -> Result<T> + Sync,
{
    let jobs = cfg.jobs();
    let work = |&(size, trial): &(u64, u64)| -> Result<T> {
        let rec = job(size, trial)?;
        sink.append(&rec)?;
        Ok(rec)
    };
    if cfg.parallel {
        jobs.par_iter().map(work).collect()
    } else {
        jobs.iter().map(work).collect()
    }
}

/// Run a spin-glass or network campaign. Records come back sorted by `(size, trial)`.
///
/// The output file is opened before any trial runs, so an unwritable path fails fast.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let sink = RecordSink::open(cfg.output.as_deref())?;
    let mut records = match cfg.kind {
        CampaignKind::Spinglass => run_spinglass(cfg, &sink)?,
        CampaignKind::Nn => run_nn(cfg, &sink)?,
        CampaignKind::Approx => {
            return Err(Error::Config("loss-equivalence campaigns produce equivalence records; use run_approx_campaign".into()))
        }
    };
    sort_records(&mut records);
    Ok(records)
}

fn run_spinglass(cfg: &CampaignConfig, sink: &RecordSink) -> Result<Vec<TrialRecord>> {
    let shared: BTreeMap<u64, _> = match cfg.couplings {
        CouplingPolicy::Shared => cfg.sizes.iter().map(|&s| Ok((s, cfg.couplings_for(s, 0)?))).collect::<Result<_>>()?,
        CouplingPolicy::PerTrial => BTreeMap::new(),
    };
    run_jobs(cfg, sink, |size, trial| {
        let seed = cfg.trial_seed(size, trial);
        let own;
        let couplings = match shared.get(&size) {
            Some(c) => c,
            None => {
                own = cfg.couplings_for(size, seed)?;
                &own
            }
        };
        let w0 = sample_uniform_sphere(size as usize, derive_seed(seed, &[1]))?;
        let (w, mut record) = match cfg.optimizer {
            SpinOptimizer::Descent => {
                let out = spherical_gradient_descent(couplings, &w0, &DescentConfig { seed, ..cfg.descent.clone() })?;
                (out.config, out.record)
            }
            SpinOptimizer::Anneal => anneal_spin_glass(couplings, &w0, &AnnealConfig { seed, ..cfg.anneal.clone() })?,
        };
        record.trial_id = trial;
        record.seed = seed;
        if cfg.compute_index && record.final_loss.is_finite() {
            record.normalized_index = Some(spin_glass_spectrum(couplings, &w, cfg.zero_threshold)?.normalized_index);
        }
        if cfg.save_solutions {
            record.solution = Some(w.into_inner());
        }
        Ok(record)
    })
}

fn run_nn(cfg: &CampaignConfig, sink: &RecordSink) -> Result<Vec<TrialRecord>> {
    let nn = &cfg.nn;
    let (train, test) = nn.data.load()?;
    let out_dim = nn.mode.outputs(train.classes);
    run_jobs(cfg, sink, |size, trial| {
        let seed = cfg.trial_seed(size, trial);
        let start = std::time::Instant::now();
        let n1 = size as usize;
        let (params, train_loss, test_loss, train_error, test_error, status, iterations) = match nn.optimizer {
            NnOptimizer::Sgd => {
                let p0 = MlpParams::init_unit_cube(train.dim, n1, out_dim, nn.bias, nn.init_scale, derive_seed(seed, &[1]))?;
                let out = train_sgd(&p0, &train, Some(&test), &TrainConfig { seed, mode: nn.mode, ..nn.train.clone() })?;
                let status = match out.status {
                    crate::nn::TrainStatus::Completed => RunStatus::Completed,
                    crate::nn::TrainStatus::Aborted => RunStatus::Diverged,
                };
                let iters = out.history.len() as u64;
                (out.params, out.train_loss, out.test_loss, out.train_error, out.test_error, status, iters)
            }
            NnOptimizer::QuantizedSa => {
                let alphabet = nn.anneal.value_set.clone().unwrap_or_else(|| vec![-1.0, 0.0, 1.0]);
                let p0 = MlpParams::init_from_alphabet(train.dim, n1, out_dim, nn.bias, &alphabet, derive_seed(seed, &[1]))?;
                let acfg = AnnealConfig { seed, value_set: Some(alphabet), ..nn.anneal.clone() };
                let out = train_quantized_sa(&p0, &train, Some(&test), nn.mode, &acfg)?;
                let sweeps = out.anneal.sweeps;
                (out.params, out.train_loss, out.test_loss, out.train_error, out.test_error, RunStatus::Completed, sweeps)
            }
        };
        let mut record = TrialRecord::new(TrialKind::Nn, trial, seed, size);
        record.final_loss = test_loss.unwrap_or(f64::NAN);
        record.iterations = iterations;
        record.status = status;
        record.converged = status == RunStatus::Completed;
        record.train_loss = Some(train_loss);
        record.test_loss = test_loss;
        record.train_error = Some(train_error);
        record.test_error = test_error;
        if cfg.compute_index && status == RunStatus::Completed && params.param_count() <= HESSIAN_PARAM_CAP {
            let h = hessian_at_solution(&params, &train, nn.mode)?;
            record.normalized_index = Some(normalized_index(&eigen_symmetric(&h)?, cfg.zero_threshold).normalized_index);
        }
        if cfg.save_solutions {
            record.solution = Some(params.to_flat());
        }
        record.wall_ms = start.elapsed().as_millis() as u64;
        Ok(record)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRecord {
    pub size_param: u64,
    pub trial_id: u64,
    pub seed: u64,
    pub report: LossEquivalenceReport,
}

/// Loss-equivalence checks, one per `(Λ, trial)`.
pub fn run_approx_campaign(cfg: &CampaignConfig) -> Result<Vec<EquivalenceRecord>> {
    cfg.validate()?;
    let sink = RecordSink::open(cfg.output.as_deref())?;
    let mut records = run_jobs(cfg, &sink, |size, trial| {
        let seed = cfg.trial_seed(size, trial);
        let report = loss_equivalence_check(
            size as usize,
            cfg.order as usize,
            seed,
            cfg.loss_kind,
            cfg.equivalence_resamples,
            &LossEquivalenceParams::default(),
        )?;
        Ok(EquivalenceRecord { size_param: size, trial_id: trial, seed, report })
    })?;
    records.sort_by_key(|r| (r.size_param, r.trial_id));
    Ok(records)
}

pub fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by_key(|r| (r.size_param, r.trial_id));
}

/// Read a record file, sorted by `(size, trial)` whatever order the lines were written in.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut offset = 0usize;
    for line in reader.lines() {
        let line = line?;
        let len = line.len() + 1;
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { offset, message: e.to_string() })?;
            records.push(rec);
        }
        offset += len;
    }
    sort_records(&mut records);
    Ok(records)
}

/// One row of the per-solution index table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub size: u64,
    pub trial_id: u64,
    pub loss: f64,
    pub normalized_index: f64,
    /// Band of `loss/Λ`; spin-glass records only.
    pub band: Option<BandLabel>,
}

/// Recompute loss and normalized index of every saved solution.
///
/// Records must carry their solution. The landscape each one was found on is
/// rebuilt from `cfg`, which must match the campaign that wrote them.
pub fn index_solutions(cfg: &CampaignConfig, records: &[TrialRecord], k_max: u32) -> Result<Vec<IndexRow>> {
    let thresholds = BandThresholds::new(ModelOrder::new(cfg.order)?, k_max)?;
    let data = match records.iter().any(|r| r.kind == TrialKind::Nn) {
        true => Some(cfg.nn.data.load()?.0),
        false => None,
    };
    records
        .iter()
        .map(|r| {
            let w = r
                .solution
                .as_ref()
                .ok_or_else(|| Error::Config(format!("record (size {}, trial {}) has no saved solution", r.size_param, r.trial_id)))?;
            let row = |loss: f64, idx: f64, band| IndexRow { size: r.size_param, trial_id: r.trial_id, loss, normalized_index: idx, band };
            match r.kind {
                TrialKind::Spinglass => {
                    let couplings = cfg.couplings_for(r.size_param, r.seed)?;
                    let loss = hamiltonian(&couplings, w)?;
                    let spectrum = spin_glass_spectrum(&couplings, w, cfg.zero_threshold)?;
                    Ok(row(loss, spectrum.normalized_index, Some(thresholds.classify(loss / r.size_param as f64))))
                }
                TrialKind::Nn => {
                    let train = data.as_ref().expect("loaded for network records");
                    let mut params =
                        MlpParams::zeros(train.dim, r.size_param as usize, cfg.nn.mode.outputs(train.classes), cfg.nn.bias);
                    params.set_flat(w)?;
                    let loss = crate::nn::mean_loss(&params, train, cfg.nn.mode)?;
                    let h = hessian_at_solution(&params, train, cfg.nn.mode)?;
                    Ok(row(loss, normalized_index(&eigen_symmetric(&h)?, cfg.zero_threshold).normalized_index, None))
                }
            }
        })
        .collect()
}

/// `size,trial,loss,normalized_index,band`.
pub fn index_csv(rows: &[IndexRow]) -> String {
    let mut s = String::from("size,trial,loss,normalized_index,band\n");
    for r in rows {
        let band = r.band.map(|b| b.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", r.size, r.trial_id, sig12(r.loss), sig12(r.normalized_index), band));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub size: u64,
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: u64,
    pub count: u64,
    pub mean: f64,
    /// Unbiased sample variance; zero for a single record.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub size: u64,
    /// Train/test loss correlation; `None` when it is undefined.
    pub pearson: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub size: u64,
    pub fractions: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub kind: TrialKind,
    pub histograms: Vec<Histogram>,
    pub summary: Vec<SizeSummary>,
    pub fit: Option<PowerLawFit>,
    pub correlations: Vec<CorrelationRow>,
    pub bands: Vec<BandRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// Fixed bin count; Freedman–Diaconis when absent.
    pub bins: Option<usize>,
    pub order: u32,
    pub k_max: u32,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { bins: None, order: 3, k_max: 5 }
    }
}

const MAX_AUTO_BINS: usize = 200;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: Option<usize>) -> (Vec<f64>, Vec<u64>) {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let range = hi - lo;
    if range == 0.0 {
        return (vec![lo, hi], vec![sorted.len() as u64]);
    }
    let n_bins = bins.unwrap_or_else(|| {
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
        if width > 0.0 {
            ((range / width).ceil() as usize).clamp(1, MAX_AUTO_BINS)
        } else {
            1
        }
    });
    let n_bins = n_bins.max(1);
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + range * i as f64 / n_bins as f64).collect();
    let mut counts = vec![0u64; n_bins];
    for v in sorted {
        let b = (((v - lo) / range) * n_bins as f64).floor() as usize;
        counts[b.min(n_bins - 1)] += 1;
    }
    (edges, counts)
}

fn summarize(size: u64, values: &[f64]) -> SizeSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    SizeSummary { size, count: values.len() as u64, mean, variance, min, max }
}

fn band_order(label: &BandLabel) -> u32 {
    match label {
        BandLabel::BelowGround => 0,
        BandLabel::MinimaBand => 1,
        BandLabel::IndexBand(k) => 1 + k,
        BandLabel::AboveBarrier => u32::MAX,
    }
}

/// Scale losses, histogram them per size and collect summary, fit, correlation and band tables.
///
/// Spin-glass losses are scaled by `1/Λ`. Network test losses are divided by the
/// fitted mean `exp(c + α n1^β)` of a power-law fit to the per-size means when at
/// least three sizes are present, and left unscaled otherwise. The constant `c`
/// only rescales every size alike and keeps the scaled values near 1.
pub fn build_report(records: &[TrialRecord], opts: &ReportOptions) -> Result<ReportBundle> {
    let first = records.first().ok_or_else(|| Error::Config("cannot report on an empty record set".into()))?;
    let kind = first.kind;
    if records.iter().any(|r| r.kind != kind) {
        return Err(Error::Config("records of different kinds cannot share a report".into()));
    }
    let mut by_size: BTreeMap<u64, Vec<&TrialRecord>> = BTreeMap::new();
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.size_param, r.trial_id));
    for r in sorted {
        by_size.entry(r.size_param).or_default().push(r);
    }

    let raw = |r: &TrialRecord| match kind {
        TrialKind::Spinglass => r.final_loss / r.size_param as f64,
        TrialKind::Nn => r.final_loss,
    };
    let fit = if kind == TrialKind::Nn && by_size.len() >= 3 {
        let sizes: Vec<f64> = by_size.keys().map(|&s| s as f64).collect();
        let means: Vec<f64> = by_size
            .values()
            .map(|rs| rs.iter().map(|r| raw(r)).sum::<f64>() / rs.len() as f64)
            .collect();
        Some(fit_power_law(&sizes, &means)?)
    } else {
        None
    };

    let mut histograms = Vec::new();
    let mut summary = Vec::new();
    let mut correlations = Vec::new();
    let mut bands = Vec::new();
    let thresholds = match kind {
        TrialKind::Spinglass => Some(BandThresholds::new(ModelOrder::new(opts.order)?, opts.k_max)?),
        TrialKind::Nn => None,
    };
    for (&size, rs) in &by_size {
        let scaled: Vec<f64> = rs
            .iter()
            .map(|r| raw(r) / fit.map_or(1.0, |f| f.fitted_mean(size as f64)))
            .filter(|v| v.is_finite())
            .collect();
        if scaled.is_empty() {
            return Err(Error::Config(format!("no finite losses at size {size}")));
        }
        let (edges, counts) = histogram(&scaled, opts.bins);
        histograms.push(Histogram { size, edges, counts });
        summary.push(summarize(size, &scaled));
        if kind == TrialKind::Nn {
            let pairs: Vec<(f64, f64)> = rs.iter().filter_map(|r| Some((r.train_loss?, r.test_loss?))).collect();
            let (tr, te): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            correlations.push(CorrelationRow { size, pearson: pearson(&tr, &te).ok() });
        }
        if let Some(t) = &thresholds {
            let mut counts: BTreeMap<(u32, String), u64> = BTreeMap::new();
            for v in &scaled {
                let label = t.classify(*v);
                *counts.entry((band_order(&label), label.to_string())).or_default() += 1;
            }
            let total = scaled.len() as f64;
            let fractions = counts.into_iter().map(|((_, name), c)| (name, c as f64 / total)).collect();
            bands.push(BandRow { size, fractions });
        }
    }
    Ok(ReportBundle { kind, histograms, summary, fit, correlations, bands })
}

impl ReportBundle {
    pub fn histograms_csv(&self) -> String {
        let mut s = String::from("size,bin_lo,bin_hi,count\n");
        for h in &self.histograms {
            for (i, c) in h.counts.iter().enumerate() {
                s.push_str(&format!("{},{},{},{}\n", h.size, sig12(h.edges[i]), sig12(h.edges[i + 1]), c));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("size,count,mean,variance,min,max\n");
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.size,
                r.count,
                sig12(r.mean),
                sig12(r.variance),
                sig12(r.min),
                sig12(r.max)
            ));
        }
        s
    }

    pub fn fit_csv(&self) -> String {
        let mut s = String::from("alpha,beta,intercept,rss,beta_identified\n");
        if let Some(f) = &self.fit {
            s.push_str(&format!("{},{},{},{},{}\n", sig12(f.alpha), sig12(f.beta), sig12(f.intercept), sig12(f.rss), f.beta_identified));
        }
        s
    }

    pub fn correlations_csv(&self) -> String {
        let mut s = String::from("size,pearson\n");
        for r in &self.correlations {
            s.push_str(&format!("{},{}\n", r.size, r.pearson.map_or("nan".into(), sig12)));
        }
        s
    }

    pub fn bands_csv(&self) -> String {
        let mut s = String::from("size,band,fraction\n");
        for r in &self.bands {
            for (name, f) in &r.fractions {
                s.push_str(&format!("{},{},{}\n", r.size, name, sig12(*f)));
            }
        }
        s
    }

    /// Write `histograms.csv`, `summary.csv`, `fit.csv`, `correlations.csv` and `bands.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let tables = [
            ("histograms.csv", self.histograms_csv()),
            ("summary.csv", self.summary_csv()),
            ("fit.csv", self.fit_csv()),
            ("correlations.csv", self.correlations_csv()),
            ("bands.csv", self.bands_csv()),
        ];
        let mut paths = Vec::new();
        for (name, body) in tables {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// Check count and fraction bookkeeping.
    pub fn check_invariants(&self) -> Result<()> {
        for (h, s) in self.histograms.iter().zip(&self.summary) {
            if h.counts.iter().sum::<u64>() != s.count {
                return Err(Error::Invariant(format!("histogram at size {} does not cover every record", h.size)));
            }
        }
        for b in &self.bands {
            let total: f64 = b.fractions.iter().map(|(_, f)| f).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!("band fractions at size {} sum to {total}", b.size)));
            }
        }
        Ok(())
    }
}
