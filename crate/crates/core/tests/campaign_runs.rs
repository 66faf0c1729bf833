use landscape_core::campaign::*;
use landscape_core::nn::TrainConfig;
use landscape_core::optimizers::{DescentConfig, TrialKind, TrialRecord};
use landscape_core::theory::{ModelOrder, Thresholds};

fn spin(sizes: Vec<u64>, trials: u64) -> CampaignConfig {
    CampaignConfig {
        sizes,
        trials,
        master_seed: 3,
        descent: DescentConfig { max_iters: 2000, ..DescentConfig::default() },
        ..CampaignConfig::default()
    }
}

fn nn(sizes: Vec<u64>, trials: u64) -> CampaignConfig {
    CampaignConfig {
        kind: CampaignKind::Nn,
        sizes,
        trials,
        master_seed: 5,
        nn: NnSettings {
            train: TrainConfig { epochs: 5, ..TrainConfig::default() },
            data: DataSource::Synthetic { train: 60, test: 60, classes: 4, noise: 0.3, seed: 2 },
            ..NnSettings::default()
        },
        ..CampaignConfig::default()
    }
}

#[test]
fn reruns_are_identical() {
    for cfg in [spin(vec![10, 12], 4), nn(vec![3, 4], 3)] {
        let a = run_campaign(&cfg).unwrap();
        let b = run_campaign(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));
        let serial = run_campaign(&CampaignConfig { parallel: false, ..cfg }).unwrap();
        assert!(a.iter().zip(&serial).all(|(x, y)| x.same_outcome(y)));
    }
}

#[test]
fn record_file_round_trips_in_any_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let cfg = CampaignConfig { output: Some(path.clone()), ..spin(vec![10, 14], 5) };
    let recs = run_campaign(&cfg).unwrap();
    let read = read_records(&path).unwrap();
    assert_eq!(read.len(), 10);
    for (a, b) in recs.iter().zip(&read) {
        assert!(a.same_outcome(b), "{a:?}\n{b:?}");
    }

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.reverse();
    let shuffled = dir.path().join("reversed.jsonl");
    std::fs::write(&shuffled, lines.join("\n")).unwrap();
    let again = read_records(&shuffled).unwrap();
    assert!(read.iter().zip(&again).all(|(a, b)| a == b));

    std::fs::write(&shuffled, format!("{}\n{{broken\n", lines[0])).unwrap();
    match read_records(&shuffled) {
        Err(landscape_core::Error::Parse { offset, .. }) => assert_eq!(offset, lines[0].len() + 1),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let recs = run_campaign(&spin(vec![10, 12], 8)).unwrap();
    let report = build_report(&recs, &ReportOptions::default()).unwrap();
    report.check_invariants().unwrap();
    let first = report.write_csv(&dir.path().join("a")).unwrap();
    let mut reversed = recs.clone();
    reversed.reverse();
    let second = build_report(&reversed, &ReportOptions::default()).unwrap().write_csv(&dir.path().join("b")).unwrap();
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
    let summary = std::fs::read_to_string(&first[1]).unwrap();
    assert!(summary.starts_with("size,count,mean,variance,min,max\n"));
}

#[test]
fn single_record_report() {
    let mut r = TrialRecord::new(TrialKind::Spinglass, 0, 0, 25);
    r.final_loss = -40.0;
    let report = build_report(&[r], &ReportOptions::default()).unwrap();
    assert_eq!(report.histograms[0].counts, vec![1]);
    assert_eq!(report.summary[0].variance, 0.0);
    report.check_invariants().unwrap();
}

#[test]
fn spin_glass_report_has_nothing_below_ground() {
    let recs = run_campaign(&spin(vec![20, 30], 20)).unwrap();
    let report = build_report(&recs, &ReportOptions::default()).unwrap();
    report.check_invariants().unwrap();
    let e0 = Thresholds::compute(ModelOrder::new(3).unwrap(), 1).unwrap().e_0;
    for s in &report.summary {
        assert!(s.min >= -e0 - 0.05, "size {}: {}", s.size, s.min);
    }
    for b in &report.bands {
        assert!(b.fractions.iter().all(|(name, f)| name != "below_ground" || *f == 0.0));
    }
}

#[test]
fn network_report_scales_by_fit() {
    let recs = run_campaign(&nn(vec![2, 4, 8], 4)).unwrap();
    assert!(recs.iter().all(|r| r.train_loss.is_some() && r.test_error.is_some()));
    let report = build_report(&recs, &ReportOptions::default()).unwrap();
    report.check_invariants().unwrap();
    let fit = report.fit.expect("three sizes give a fit");
    for s in &report.summary {
        assert!(s.mean > 0.5 && s.mean < 2.0, "{s:?} with {fit:?}");
    }
    assert_eq!(report.correlations.len(), 3);
    assert!(report.bands.is_empty());
}

#[test]
fn approx_campaign_records() {
    let cfg = CampaignConfig { kind: CampaignKind::Approx, sizes: vec![4, 5], trials: 2, equivalence_resamples: 50, ..CampaignConfig::default() };
    let recs = run_approx_campaign(&cfg).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.report.max_affine_residual < 1e-12));
    assert!(run_campaign(&cfg).is_err());
}

#[test]
fn invalid_configs_rejected() {
    assert!(run_campaign(&spin(vec![], 1)).is_err());
    assert!(run_campaign(&spin(vec![10], 0)).is_err());
}
