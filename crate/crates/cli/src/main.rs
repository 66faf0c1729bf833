//! `landscape`: run theory tables, spin-glass and network campaigns, approximation checks and reports.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use landscape_core::approx::{
    check_reduction_correlation, check_uniformity_correlation, enumerate_specs,
    verify_size_bounds, FlipSplit, LossKind, UniformAssignment,
};
use landscape_core::campaign::{
    build_report, index_csv, index_solutions, read_records, run_approx_campaign, run_campaign, CampaignConfig,
    CampaignKind, CouplingPolicy, DataSource, NnOptimizer, ReportOptions, SpinOptimizer,
};
use landscape_core::format::sig12;
use landscape_core::nn::LossMode;
use landscape_core::optimizers::GradientMode;
use landscape_core::rng::derive_seed;
use landscape_core::spinglass::StorageMode;
use landscape_core::theory::{ComplexityCurve, ModelOrder, Thresholds};
use serde::Deserialize;

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "landscape", version, about = "Loss-landscape experiments on spherical spin glasses and small networks")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, or directory for `report`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the complexity functions and print the energy thresholds.
    Theory(TheoryArgs),
    /// Spin-glass descent or annealing campaign, one JSON record per trial.
    Spinglass(SpinArgs),
    /// Population of one-hidden-layer networks per hidden width.
    Nn(NnArgs),
    /// Numerical checks of the network-to-spin-glass approximation chain.
    Approx(ApproxArgs),
    /// Recompute loss, normalized index and band of saved solutions.
    Index(IndexArgs),
    /// Histograms, summaries, fits, correlations and band tables from a record file.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// Model order H.
    #[arg(long = "H", short = 'H')]
    order: Option<u32>,
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    u_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpinOpt {
    Descent,
    Anneal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Couplings {
    Shared,
    PerTrial,
}

#[derive(Args, Debug)]
struct SpinArgs {
    /// Dimensions Λ, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    #[arg(long)]
    trials: Option<u64>,
    /// Model order H.
    #[arg(long = "H", short = 'H')]
    order: Option<u32>,
    #[arg(long, value_enum)]
    optimizer: Option<SpinOpt>,
    #[arg(long, value_enum)]
    couplings: Option<Couplings>,
    /// dense, virtual or auto.
    #[arg(long)]
    storage: Option<StorageMode>,
    #[arg(long)]
    step0: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
    /// Start with this many stochastic steps on a random fraction of the couplings.
    #[arg(long, requires = "subsample_fraction")]
    subsample_steps: Option<u64>,
    #[arg(long)]
    subsample_fraction: Option<f64>,
    /// Compute the normalized Hessian index of each solution.
    #[arg(long)]
    index: bool,
    #[arg(long)]
    save_solutions: bool,
    /// Run trials one after another.
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NnOpt {
    Sgd,
    QuantizedSa,
}

#[derive(Args, Debug)]
struct NnArgs {
    /// Hidden widths n1, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    /// Networks per width.
    #[arg(long)]
    population: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    /// xent or hinge-binary.
    #[arg(long)]
    mode: Option<LossMode>,
    /// Directory with the four IDX files, or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long, value_enum)]
    optimizer: Option<NnOpt>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training and test set sizes (synthetic data) or caps (IDX data).
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    index: bool,
    #[arg(long)]
    save_solutions: bool,
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxCheck {
    Bounds,
    SignCorr,
    Uniformity,
    LossEquiv,
}

#[derive(Args, Debug)]
struct ApproxArgs {
    #[arg(long, value_enum)]
    check: Option<ApproxCheck>,
    /// Grid values: [max width, max depth] for bounds, p for sign-corr, c for uniformity, Λ for loss-equiv.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Monte Carlo samples, random assignments or coupling resamples.
    #[arg(long)]
    samples: Option<u64>,
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Record file written with --save-solutions.
    input: PathBuf,
    #[arg(long = "H", short = 'H')]
    order: Option<u32>,
    #[arg(long, value_enum)]
    couplings: Option<Couplings>,
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    mode: Option<LossMode>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Record file.
    input: PathBuf,
    /// Fixed bin count instead of Freedman–Diaconis.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long = "H", short = 'H')]
    order: Option<u32>,
    #[arg(long)]
    k_max: Option<u32>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every check passed.
fn run(cli: Cli) -> anyhow::Result<bool> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let seed = cli.seed.or(file.seed);
    let out = cli.out.clone().or_else(|| file.out.clone());
    match cli.command {
        Command::Theory(a) => theory(a, &file, out.as_deref()),
        Command::Spinglass(a) => spinglass(a, &file, seed, out),
        Command::Nn(a) => nn(a, &file, seed, out),
        Command::Approx(a) => approx(a, &file, seed, out.as_deref()),
        Command::Index(a) => index(a, &file, seed, out.as_deref()),
        Command::Report(a) => report(a, &file, out),
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn theory(a: TheoryArgs, file: &FileConfig, out: Option<&Path>) -> anyhow::Result<bool> {
    let f = file.theory.as_ref();
    let order = ModelOrder::new(a.order.or(f.and_then(|t| t.order)).unwrap_or(3))?;
    let k_max = a.k_max.or(f.and_then(|t| t.k_max)).unwrap_or(5);
    let u_min = a.u_min.or(f.and_then(|t| t.u_min)).unwrap_or(-2.0);
    let u_max = a.u_max.or(f.and_then(|t| t.u_max)).unwrap_or(0.0);
    let points = a.points.or(f.and_then(|t| t.points)).unwrap_or(401);
    let curve = ComplexityCurve::tabulate(order, k_max, u_min, u_max, points)?;
    let mut text = format!("# H={}\n", order.get());
    // E_k needs H >= 3; for H = 2 only the barrier is defined.
    match Thresholds::compute(order, k_max) {
        Ok(t) => {
            text.push_str(&format!("# E_inf={}\n# E_0={}\n", sig12(t.e_infinity), sig12(t.e_0)));
            for (k, e) in t.e_k.iter().enumerate() {
                text.push_str(&format!("# E_{}={}\n", k + 1, sig12(*e)));
            }
        }
        Err(_) => text.push_str(&format!("# E_inf={}\n", sig12(landscape_core::theory::e_infinity(order)))),
    }
    text.push_str("u,theta_H");
    for k in 0..=k_max {
        text.push_str(&format!(",theta_{k}"));
    }
    text.push('\n');
    for p in &curve.points {
        text.push_str(&format!("{},{}", sig12(p.u), sig12(p.theta_h)));
        for v in &p.theta_k {
            text.push_str(&format!(",{}", sig12(*v)));
        }
        text.push('\n');
    }
    emit(out, &text)?;
    Ok(true)
}

fn base_campaign(file: &FileConfig, kind: CampaignKind, seed: Option<u64>, out: Option<PathBuf>) -> CampaignConfig {
    let mut cfg = file.campaign.clone().unwrap_or_else(|| match kind {
        CampaignKind::Nn => CampaignConfig { sizes: vec![5, 10, 25, 50], trials: 100, ..CampaignConfig::default() },
        _ => CampaignConfig::default(),
    });
    cfg.kind = kind;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if out.is_some() {
        cfg.output = out;
    }
    cfg
}

fn print_summary(records: &[landscape_core::optimizers::TrialRecord], order: u32) -> anyhow::Result<bool> {
    let report = build_report(records, &ReportOptions { order, ..ReportOptions::default() })?;
    print!("{}", report.summary_csv());
    if !report.correlations.is_empty() {
        print!("{}", report.correlations_csv());
    }
    if !report.bands.is_empty() {
        print!("{}", report.bands_csv());
    }
    report.check_invariants()?;
    Ok(true)
}

fn spinglass(a: SpinArgs, file: &FileConfig, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let mut cfg = base_campaign(file, CampaignKind::Spinglass, seed, out);
    if let Some(v) = a.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.order {
        cfg.order = v;
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer = match v {
            SpinOpt::Descent => SpinOptimizer::Descent,
            SpinOpt::Anneal => SpinOptimizer::Anneal,
        };
    }
    if let Some(v) = a.couplings {
        cfg.couplings = coupling_policy(v);
    }
    if let Some(v) = a.storage {
        cfg.storage = v;
    }
    if let Some(v) = a.step0 {
        cfg.descent.step0 = v;
    }
    if let Some(v) = a.decay {
        cfg.descent.decay = v;
    }
    if let Some(v) = a.max_iters {
        cfg.descent.max_iters = v;
    }
    if let (Some(steps), Some(fraction)) = (a.subsample_steps, a.subsample_fraction) {
        cfg.descent.gradient = GradientMode::Subsampled { fraction, steps };
    }
    cfg.compute_index |= a.index;
    cfg.save_solutions |= a.save_solutions;
    cfg.parallel &= !a.serial;
    let records = run_campaign(&cfg)?;
    print_summary(&records, cfg.order)
}

fn coupling_policy(c: Couplings) -> CouplingPolicy {
    match c {
        Couplings::Shared => CouplingPolicy::Shared,
        Couplings::PerTrial => CouplingPolicy::PerTrial,
    }
}

fn data_source(spec: &str, train: Option<usize>, test: Option<usize>, current: &DataSource) -> DataSource {
    if spec == "synthetic" {
        let mut src = match current {
            DataSource::Synthetic { .. } => current.clone(),
            DataSource::Idx { .. } => DataSource::default(),
        };
        if let DataSource::Synthetic { train: tr, test: te, .. } = &mut src {
            *tr = train.unwrap_or(*tr);
            *te = test.unwrap_or(*te);
        }
        src
    } else {
        DataSource::Idx { dir: PathBuf::from(spec), train_limit: train, test_limit: test }
    }
}

fn nn(a: NnArgs, file: &FileConfig, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let mut cfg = base_campaign(file, CampaignKind::Nn, seed, out);
    if let Some(v) = a.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = a.population {
        cfg.trials = v;
    }
    if let Some(v) = a.epochs {
        cfg.nn.train.epochs = v;
    }
    if let Some(v) = a.mode {
        cfg.nn.mode = v;
    }
    if let Some(v) = a.optimizer {
        cfg.nn.optimizer = match v {
            NnOpt::Sgd => NnOptimizer::Sgd,
            NnOpt::QuantizedSa => NnOptimizer::QuantizedSa,
        };
    }
    if let Some(v) = a.lr0 {
        cfg.nn.train.lr0 = v;
    }
    if let Some(v) = a.batch_size {
        cfg.nn.train.batch_size = v;
    }
    match &a.data {
        Some(spec) => cfg.nn.data = data_source(spec, a.train_size, a.test_size, &cfg.nn.data),
        None if a.train_size.is_some() || a.test_size.is_some() => {
            cfg.nn.data = data_source("synthetic", a.train_size, a.test_size, &cfg.nn.data)
        }
        None => {}
    }
    cfg.compute_index |= a.index;
    cfg.save_solutions |= a.save_solutions;
    cfg.parallel &= !a.serial;
    let records = run_campaign(&cfg)?;
    print_summary(&records, cfg.order)
}

fn approx(a: ApproxArgs, file: &FileConfig, seed: Option<u64>, out: Option<&Path>) -> anyhow::Result<bool> {
    let f = file.approx.as_ref();
    let Some(check) = a.check.or(f.and_then(|x| x.check)) else {
        bail!("--check is required (bounds, sign-corr, uniformity or loss-equiv)");
    };
    let grid = a.grid.or_else(|| f.and_then(|x| x.grid.clone()));
    let samples = a.samples.or(f.and_then(|x| x.samples));
    let seed = seed.unwrap_or(0);
    let mut all_hold = true;
    let mut text = String::new();
    match check {
        ApproxCheck::Bounds => {
            let g = grid.unwrap_or_else(|| vec![6.0, 4.0]);
            if g.len() != 2 || g.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                bail!("bounds grid is `max_width,max_depth`, two positive integers");
            }
            text.push_str("d,hidden,upper,size,lower,holds\n");
            for spec in enumerate_specs(g[0] as u64, g[1] as usize) {
                let r = verify_size_bounds(&spec);
                all_hold &= r.holds;
                let hidden: Vec<String> = spec.hidden.iter().map(u64::to_string).collect();
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    spec.d,
                    hidden.join(" "),
                    sig12(r.upper),
                    sig12(r.size),
                    sig12(r.lower),
                    r.holds
                ));
            }
        }
        ApproxCheck::SignCorr => {
            let ps = grid.unwrap_or_else(|| vec![0.1, 0.2, 0.3, 0.4, 0.5]);
            let n = samples.unwrap_or(100_000);
            text.push_str("p,eps,split,estimate,stderr,exact,bound,holds\n");
            let mut cell = 0u64;
            for p in ps {
                for frac in [0.0, 0.25, 0.5, 0.75] {
                    for split in [FlipSplit::Symmetric, FlipSplit::AllPlus, FlipSplit::AllMinus] {
                        let r = check_reduction_correlation(p, p * frac, split, n, derive_seed(seed, &[cell]))?;
                        cell += 1;
                        all_hold &= r.holds();
                        text.push_str(&format!(
                            "{},{},{:?},{},{},{},{},{}\n",
                            sig12(p),
                            sig12(r.eps),
                            split,
                            sig12(r.estimate),
                            sig12(r.stderr),
                            sig12(r.exact),
                            sig12(r.bound),
                            r.holds()
                        ));
                    }
                }
            }
        }
        ApproxCheck::Uniformity => {
            let cs = grid.unwrap_or_else(|| vec![1.0, 1.5, 2.0]);
            let n = samples.unwrap_or(100);
            text.push_str("c,draw,corr,bound,holds\n");
            for c in cs {
                for draw in 0..n {
                    let a = UniformAssignment::random(3, 3, 27 * 8, c, derive_seed(seed, &[c.to_bits(), draw]))?;
                    let r = check_uniformity_correlation(&a, None)?;
                    all_hold &= r.holds;
                    text.push_str(&format!("{},{},{},{},{}\n", sig12(c), draw, sig12(r.corr), sig12(r.bound), r.holds));
                }
            }
        }
        ApproxCheck::LossEquiv => {
            let lambdas = grid.unwrap_or_else(|| vec![6.0, 8.0]);
            let cfg = CampaignConfig {
                kind: CampaignKind::Approx,
                sizes: lambdas.iter().map(|l| *l as u64).collect(),
                trials: 1,
                master_seed: seed,
                equivalence_resamples: samples.unwrap_or(2000),
                ..file.campaign.clone().unwrap_or_default()
            };
            text.push_str("lambda,kind,pearson,expected_pearson,stderr,c1,c1_hat,c2,c2_hat,max_affine_residual,consistent\n");
            for kind in [LossKind::Absolute, LossKind::Hinge] {
                for rec in run_approx_campaign(&CampaignConfig { loss_kind: kind, output: None, ..cfg.clone() })? {
                    let r = rec.report;
                    let ok = r.consistent() && (kind == LossKind::Hinge || r.max_affine_residual <= 1e-12);
                    all_hold &= ok;
                    text.push_str(&format!(
                        "{},{:?},{},{},{},{},{},{},{},{},{}\n",
                        rec.size_param,
                        kind,
                        sig12(r.pearson),
                        sig12(r.expected_pearson),
                        sig12(r.stderr),
                        sig12(r.c1),
                        sig12(r.c1_hat),
                        sig12(r.c2),
                        sig12(r.c2_hat),
                        sig12(r.max_affine_residual),
                        ok
                    ));
                }
            }
        }
    }
    emit(out, &text)?;
    if !all_hold {
        eprintln!("some {check:?} checks failed");
    }
    Ok(all_hold)
}

fn index(a: IndexArgs, file: &FileConfig, seed: Option<u64>, out: Option<&Path>) -> anyhow::Result<bool> {
    let mut cfg = file.campaign.clone().unwrap_or_default();
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(v) = a.order {
        cfg.order = v;
    }
    if let Some(v) = a.couplings {
        cfg.couplings = coupling_policy(v);
    }
    if let Some(v) = a.mode {
        cfg.nn.mode = v;
    }
    if let Some(spec) = &a.data {
        cfg.nn.data = data_source(spec, None, None, &cfg.nn.data);
    }
    let records = read_records(&a.input)?;
    let rows = index_solutions(&cfg, &records, a.k_max.unwrap_or(5))?;
    emit(out, &index_csv(&rows))?;
    Ok(true)
}

fn report(a: ReportArgs, file: &FileConfig, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let mut opts = file.report.unwrap_or_default();
    if a.bins.is_some() {
        opts.bins = a.bins;
    }
    if let Some(v) = a.order {
        opts.order = v;
    }
    if let Some(v) = a.k_max {
        opts.k_max = v;
    }
    let records = read_records(&a.input)?;
    let bundle = build_report(&records, &opts)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("report"));
    for p in bundle.write_csv(&dir)? {
        println!("{}", p.display());
    }
    bundle.check_invariants()?;
    Ok(true)
}
