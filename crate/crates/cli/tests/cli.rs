use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mesosde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesosde"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("`{key}` missing from:\n{out}"))
        .trim()
        .to_string()
}

/// ABM run plus polarization series in `dir`.
fn polarization_data(dir: &Path, t_end: &str) {
    let o = mesosde(
        dir,
        &["simulate-abm", "--n", "30", "--r1", "1", "--r2", "1", "--t-end", t_end, "--seed", "7"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mesosde(dir, &["polarization", "--input", "abm.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

const QUICK_FIT: [&str; 8] = [
    "--hidden-layers",
    "2",
    "--hidden-width",
    "16",
    "--max-epochs",
    "3",
    "--lr",
    "0.003",
];

#[test]
fn simulate_abm_writes_all_agents_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate-abm", "--n", "30", "--r1", "1", "--r2", "1", "--t-end", "50", "--seed", "7"];
    let o = mesosde(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(field(&out, "events").parse::<u64>().unwrap() > 0);
    assert!(field(&out, "mean |m|").parse::<f64>().unwrap() > 0.0);

    let first = fs::read(dir.path().join("abm.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().next(), Some("t,agent_id,theta"));
    let ids: std::collections::BTreeSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(ids.len(), 30);

    assert!(mesosde(dir.path(), &args).status.success());
    assert_eq!(fs::read(dir.path().join("abm.csv")).unwrap(), first);
}

#[test]
fn invalid_rates_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = mesosde(
        dir.path(),
        &["simulate-abm", "--n", "30", "--r1", "0", "--r2", "0", "--r3", "0", "--t-end", "10"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("all rates zero"));
    let o = mesosde(dir.path(), &["simulate-abm", "--n", "30"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_writes_model_and_report() {
    let dir = tempfile::tempdir().unwrap();
    polarization_data(dir.path(), "300");
    let mut args = vec!["fit", "--input", "polarization.csv"];
    args.extend(QUICK_FIT);
    let o = mesosde(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = fs::read_to_string(dir.path().join("model.txt")).unwrap();
    assert!(model.contains("MESO-SDE-MLP v1"));

    let report = fs::read_to_string(dir.path().join("train_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("epoch,train_nll,val_nll"));
    let val: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(val.len(), 3);
    assert!(val.iter().all(|v| v.is_finite()));
    let best: Vec<f64> = val
        .iter()
        .scan(f64::INFINITY, |b, &v| {
            *b = b.min(v);
            Some(*b)
        })
        .collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn no_augment_uses_one_nineteenth_of_the_pairs() {
    let dir = tempfile::tempdir().unwrap();
    polarization_data(dir.path(), "200");
    let pairs = |extra: &[&str]| {
        let mut args = vec!["fit", "--input", "polarization.csv", "--max-epochs", "1", "--hidden-width", "4"];
        args.extend(extra);
        let o = mesosde(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        field(&stdout(&o), "training pairs").parse::<usize>().unwrap()
    };
    let with = pairs(&[]);
    let without = pairs(&["--no-augment"]);
    assert_eq!(with, 19 * without);
}

#[test]
fn fit_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mesosde(dir.path(), &["fit", "--input", "missing.csv"]);
    assert_eq!(o.status.code(), Some(3));

    fs::write(dir.path().join("tiny.csv"), "t,mx,my\n0,0,0\n0.1,0.1,0\n0.2,0.1,0.1\n").unwrap();
    let o = mesosde(dir.path(), &["fit", "--input", "tiny.csv"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn validate_reports_fit_metrics() {
    let dir = tempfile::tempdir().unwrap();
    polarization_data(dir.path(), "300");
    let o = mesosde(dir.path(), &["validate", "--reference", "polarization.csv", "--self-compare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("fit_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("w1,tau_real,tau_sim,t_rel"));
    let values: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values[0], 0.0);
    assert_eq!(values[3], 0.0);

    let mut args = vec!["fit", "--input", "polarization.csv"];
    args.extend(QUICK_FIT);
    assert!(mesosde(dir.path(), &args).status.success());
    let o = mesosde(
        dir.path(),
        &["validate", "--model", "model.txt", "--reference", "polarization.csv", "--sim-out", "sim.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(field(&out, "w1").parse::<f64>().unwrap().is_finite());
    assert!(field(&out, "t_rel").parse::<f64>().unwrap().is_finite());
    for f in ["histogram.csv", "acf.csv", "sim.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let acf = fs::read_to_string(dir.path().join("acf.csv")).unwrap();
    assert!(acf.lines().nth(1).unwrap().starts_with("0,0,1,1"));
}

#[test]
fn analytic_pairwise_fields_point_inward() {
    let dir = tempfile::tempdir().unwrap();
    let o = mesosde(
        dir.path(),
        &["fields", "--analytic", "pairwise", "--r1", "1", "--r2", "1", "--n", "30"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("fields.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(!rows.is_empty() && rows.len() <= 441);
    for r in &rows {
        if r[0] != 0.0 || r[1] != 0.0 {
            assert!(r[0] * r[2] + r[1] * r[3] < 0.0, "{r:?}");
        }
    }
    let svg = fs::read_to_string(dir.path().join("drift.svg")).unwrap();
    assert!(svg.starts_with("<?xml") && svg.contains("<svg"));
    assert!(dir.path().join("diffusion.svg").exists());
}

#[test]
fn fields_from_model_file() {
    let dir = tempfile::tempdir().unwrap();
    polarization_data(dir.path(), "200");
    let mut args = vec!["fit", "--input", "polarization.csv", "--model-out", "fit.bin"];
    args.extend(QUICK_FIT);
    assert!(mesosde(dir.path(), &args).status.success());
    let o = mesosde(dir.path(), &["fields", "--model", "fit.bin", "--colormap", "gray"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["drift.svg", "diffusion.svg", "fields.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn bad_field_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let o = mesosde(dir.path(), &["fields", "--analytic", "quaternary", "--n", "30"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mesosde(dir.path(), &["fields", "--analytic", "ternary", "--n", "30", "--r1", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = mesosde(dir.path(), &["fields", "--model", "absent.txt"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_sde_from_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate-sde", "--analytic", "ternary", "--n", "30", "--r1", "1", "--r3", "2", "--n-steps", "500",
        "--m0", "0.5,0", "--seed", "4",
    ];
    let o = mesosde(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sde.csv")).unwrap();
    assert_eq!(text.lines().count(), 502);
    assert_eq!(text.lines().nth(1), Some("0,0.5,0"));
    assert!(mesosde(dir.path(), &args).status.success());
    assert_eq!(fs::read_to_string(dir.path().join("sde.csv")).unwrap(), text);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "# pairwise run\nn = 12\nr1 = 1\nr2 = 1\nt-end = 100\nout = from_config.csv\n",
    )
    .unwrap();
    let o = mesosde(dir.path(), &["simulate-abm", "--config", "run.cfg", "--t-end", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("from_config.csv")).unwrap();
    let last_t: f64 = text.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(last_t <= 5.0 && last_t > 4.5);
    assert_eq!(field(&stdout(&o), "frames"), "42");

    fs::write(dir.path().join("bad.cfg"), "n = 12\nseeed = 3\n").unwrap();
    let o = mesosde(dir.path(), &["simulate-abm", "--config", "bad.cfg", "--t-end", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `seeed`"));

    let o = mesosde(dir.path(), &["simulate-abm", "--config", "absent.cfg"]);
    assert_eq!(o.status.code(), Some(3));
}
