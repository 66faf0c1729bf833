use std::path::Path;
use std::process::{Command, Output};

fn landscape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landscape")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn theory_table_has_threshold_header() {
    let o = landscape(&["theory", "--H", "3", "--k-max", "2", "--u-min", "-2", "--u-max", "0", "--points", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("# E_inf=1.63299316186\n"));
    let e0: f64 = text.lines().find_map(|l| l.strip_prefix("# E_0=")).unwrap().parse().unwrap();
    assert!((e0 - 1.656998363527).abs() < 1e-9);
    assert!(text.contains("# E_2="));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "u,theta_H,theta_0,theta_1,theta_2");
    assert_eq!(rows.len(), 6);
    assert!(rows[5].starts_with("0.00000000000,0.346573590280,"));
}

#[test]
fn spinglass_records_report_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("spin.jsonl");
    let r = records.to_str().unwrap();
    let o = landscape(&["spinglass", "--sizes", "8,10", "--trials", "3", "--save-solutions", "--seed", "4", "--out", r]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&records), 6);
    assert!(stdout(&o).starts_with("size,count,mean,variance,min,max\n"));

    let report_dir = dir.path().join("report");
    let o = landscape(&["report", r, "--out", report_dir.to_str().unwrap()]);
    assert!(o.status.success());
    for name in ["histograms.csv", "summary.csv", "fit.csv", "correlations.csv", "bands.csv"] {
        assert!(report_dir.join(name).exists(), "{name}");
    }
    let first = std::fs::read(report_dir.join("histograms.csv")).unwrap();
    landscape(&["report", r, "--out", report_dir.to_str().unwrap()]);
    assert_eq!(first, std::fs::read(report_dir.join("histograms.csv")).unwrap());

    let index_csv = dir.path().join("index.csv");
    let o = landscape(&["index", r, "--seed", "4", "--out", index_csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&index_csv).unwrap();
    assert!(text.starts_with("size,trial,loss,normalized_index,band\n"));
    assert_eq!(text.lines().count(), 7);

    // Losses recomputed from the saved solution agree with the records.
    let rec: Vec<serde_json::Value> =
        std::fs::read_to_string(&records).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let (size, trial): (u64, u64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        let r = rec.iter().find(|r| r["size_param"] == size && r["trial_id"] == trial).unwrap();
        let loss: f64 = f[2].parse().unwrap();
        assert!((loss - r["final_loss"].as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn nn_campaign_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("nn.jsonl");
    let o = landscape(&[
        "nn", "--sizes", "2,3,4", "--population", "2", "--epochs", "3", "--data", "synthetic", "--train-size", "40",
        "--test-size", "40", "--mode", "hinge-binary", "--out", records.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&records), 6);
    assert!(stdout(&o).contains("size,pearson\n"));
}

#[test]
fn approx_checks_pass() {
    for args in [
        vec!["approx", "--check", "bounds", "--grid", "3,3"],
        vec!["approx", "--check", "sign-corr", "--grid", "0.2,0.5", "--samples", "20000"],
        vec!["approx", "--check", "uniformity", "--grid", "1,2", "--samples", "5"],
        vec!["approx", "--check", "loss-equiv", "--grid", "5", "--samples", "300"],
    ] {
        let o = landscape(&args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).lines().count() > 1);
    }
    assert!(!landscape(&["approx"]).status.success());
}

#[test]
fn config_file_supplies_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("cfg.jsonl");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 9\nout = {:?}\n[campaign]\nsizes = [6]\ntrials = 4\n[campaign.descent]\nmax_iters = 500\n",
            records.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = landscape(&["spinglass", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&records), 4);
    // Flags win over the file.
    let o = landscape(&["spinglass", "--config", cfg.to_str().unwrap(), "--trials", "2"]);
    assert!(o.status.success());
    assert_eq!(lines(&records), 6);

    std::fs::write(&cfg, "[campaign]\nsizez = [6]\n").unwrap();
    let o = landscape(&["spinglass", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn precondition_failures_exit_nonzero() {
    assert_eq!(landscape(&["spinglass", "--sizes", "5", "--trials", "0"]).status.code(), Some(1));
    let o = landscape(&["spinglass", "--sizes", "5", "--trials", "1", "--out", "/nonexistent-dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(landscape(&["theory", "--H", "1"]).status.code(), Some(1));
}
