use std::path::PathBuf;
use std::process::Command;

use condreg::model::{fit_least_squares, Dataset, ModelKind};
use condreg::stats::normal_quantile;
use condreg::SeedTree;
use condreg_cli::run_args;
use serde_json::Value;

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("condreg-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn file(&self, name: &str, contents: &str) -> String {
        let p = self.0.join(name);
        std::fs::write(&p, contents).unwrap();
        p.to_str().unwrap().to_string()
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn location_csv(y: &[f64]) -> String {
    let mut s = String::from("y,x1\n");
    for v in y {
        s.push_str(&format!("{v:?},1\n"));
    }
    s
}

fn run(args: &[&str]) -> String {
    let mut full = vec!["condreg"];
    full.extend_from_slice(args);
    run_args(full).unwrap_or_else(|e| panic!("{e}"))
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&run(args)).unwrap()
}

fn exit_code(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_condreg"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn fit_three_point_location() {
    let t = TempDir::new("fit3");
    let path = t.file("d.csv", "y,x1\n1,1\n2,1\n3,1\n");
    let v = json(&["fit", "--data", &path]);
    assert_eq!(floats(&v["beta_hat"]), [2.0]);
    let s = v["sigma_hat"].as_f64().unwrap();
    assert!((s * s - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(floats(&v["residuals"]), [-1.0, 0.0, 1.0]);
    assert_eq!(v["condition"]["n"], 3);
}

#[test]
fn fit_matches_library_exactly() {
    let t = TempDir::new("fitp2");
    let mut st = SeedTree::new(17).stream();
    let n = 25;
    let x2 = st.normals(n);
    let e = st.normals(n);
    let mut csv = String::from("y,x1,x2\n");
    let mut ys = Vec::new();
    for i in 0..n {
        let y = 1.0 + 0.5 * x2[i] + e[i];
        ys.push(y);
        csv.push_str(&format!("{y:?},1,{:?}\n", x2[i]));
    }
    let path = t.file("p2.csv", &csv);
    let out = json(&["fit", "--data", &path]);
    let x = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x2[i] });
    let lib = fit_least_squares(&Dataset::new(x, nalgebra::DVector::from_vec(ys)).unwrap(), ModelKind::RegressionScale).unwrap();
    assert_eq!(floats(&out["beta_hat"]), lib.beta_hat.as_slice());
    assert_eq!(out["sigma_hat"].as_f64().unwrap(), lib.sigma_hat);
    assert_eq!(floats(&out["residuals"]), lib.residuals_raw.as_slice());
    assert_eq!(
        floats(&out["studentized_residuals"]),
        lib.residuals_studentized.unwrap().as_slice()
    );
}

#[test]
fn npi_with_normal_score_is_the_z_interval() {
    let t = TempDir::new("npi");
    let y = SeedTree::new(3).stream().normals(40);
    let path = t.file("d.csv", &location_csv(&y));
    let v = json(&["interval", "--data", &path, "--method", "npi", "--oracle", "--dist", "normal", "--seed", "1"]);
    let beta = v["beta_hat"][0].as_f64().unwrap();
    let sigma = v["sigma_hat"].as_f64().unwrap();
    let ci = &v["intervals"][0];
    let (lo, hi) = (ci["lower"][0].as_f64().unwrap(), ci["upper"][0].as_f64().unwrap());
    assert!((0.5 * (lo + hi) - beta).abs() < 1e-10);
    let half = normal_quantile(0.975) * sigma / 40f64.sqrt();
    assert!((0.5 * (hi - lo) - half).abs() < 1e-10);
}

#[test]
fn interval_reruns_are_identical() {
    let t = TempDir::new("rerun");
    let y = SeedTree::new(4).stream().normals(20);
    let path = t.file("d.csv", &location_csv(&y));
    for m in ["rb", "pi", "npi"] {
        let args = ["interval", "--data", &path, "--method", m, "--seed", "9", "--levels", "0.9,0.95"];
        assert_eq!(run(&args), run(&args));
    }
}

/// Largest endpoint gap between a PI variant and the exact interval, as a
/// fraction of the exact width.
fn pi_exact_gap(path: &str, pi_flags: &[&str]) -> f64 {
    let ends = |m: &str, extra: &[&str]| {
        let base = ["interval", "--data", path, "--method", m, "--dist", "normal", "--seed", "2"];
        let v = json(&[&base[..], extra].concat());
        let ci = &v["intervals"][0];
        (ci["lower"][0].as_f64().unwrap(), ci["upper"][0].as_f64().unwrap())
    };
    let (pl, pu) = ends("pi", pi_flags);
    let (el, eu) = ends("exact", &[]);
    (pl - el).abs().max((pu - eu).abs()) / (eu - el)
}

fn normal_fixtures(t: &TempDir) -> Vec<String> {
    (1..=10u64)
        .map(|s| {
            let y: Vec<f64> = SeedTree::new(s).stream().normals(100).iter().map(|e| 2.0 + e).collect();
            t.file(&format!("d{s}.csv"), &location_csv(&y))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
}

#[test]
fn pi_and_exact_agree_for_normal_errors_at_n_100() {
    let t = TempDir::new("piexact");
    let mut smooth = Vec::new();
    for path in normal_fixtures(&t) {
        // the true density leaves only Monte Carlo error
        let oracle = pi_exact_gap(&path, &["--oracle"]);
        assert!(oracle <= 0.1, "{path}: oracle gap {oracle}");
        // normal-reference bandwidth 1.06 n^(-1/5) on studentized residuals
        smooth.push(pi_exact_gap(&path, &["--h", "0.42"]));
    }
    assert!(median(smooth.clone()) <= 0.1, "h=0.42 gaps {smooth:?}");
}

/// At the rate-default bandwidth the kernel estimate is rough enough to
/// overstate Fisher information, so PI runs narrower than exact; the gap
/// exceeds 10% of the width on about half of these samples.
#[test]
#[ignore = "fails: rate-default plug-in gaps have median near 0.14 at n = 100"]
fn pi_at_rate_default_bandwidth_agrees_with_exact_at_n_100() {
    let t = TempDir::new("pirate");
    let gaps: Vec<f64> = normal_fixtures(&t).iter().map(|p| pi_exact_gap(p, &[])).collect();
    assert!(gaps.iter().all(|g| *g <= 0.1), "rate-default gaps {gaps:?}");
}

#[test]
fn rb_draws_are_raised_to_the_quantile_floor() {
    let t = TempDir::new("rbfloor");
    let y = SeedTree::new(6).stream().normals(15);
    let path = t.file("d.csv", &location_csv(&y));
    // 0.99 needs 2000 resamples; the default 1000 is raised, an explicit 1000 is refused
    run(&["interval", "--data", &path, "--method", "rb", "--levels", "0.99", "--seed", "1"]);
    assert_eq!(
        exit_code(&["interval", "--data", &path, "--method", "rb", "--levels", "0.99", "--B", "1000", "--seed", "1"]),
        6
    );
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn coverage_emits_ten_levels_per_method_and_ignores_workers() {
    let args = ["coverage", "--n", "10", "--method", "pi,npi", "--R", "300", "--seed", "8"];
    let one = run(&[&["--workers", "1"], &args[..]].concat());
    let two = run(&[&["--workers", "2"], &args[..]].concat());
    assert_eq!(one, two);
    let (header, rows) = csv_rows(&one);
    assert_eq!(rows.len(), 20);
    assert!(header.iter().any(|h| h == "seed") && header.iter().any(|h| h == "ancillary_hash"));
    assert!(rows.iter().all(|r| r.last().unwrap() == "8"));
    let json: Value = serde_json::from_str(&run(&[&args[..], &["--format", "json"]].concat())).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 20);
}

#[test]
fn polysample_rows_and_schema() {
    let out = run(&["polysample", "--confrontation", "i,iii", "--dist", "t(1),cbeta(0.5,0.5)", "--R", "200", "--seed", "3"]);
    let (header, rows) = csv_rows(&out);
    assert_eq!(
        header,
        ["confrontation", "params", "estimator", "error_dist", "n", "R", "v", "cmse", "mc_se", "failures", "seed"]
    );
    // one least-squares baseline per distribution plus two rules each
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r[0] == "ls").count(), 2);
    assert!(rows.iter().all(|r| r[8].parse::<f64>().unwrap() > 0.0));
    assert!(rows.iter().all(|r| r[4] == "15" && r[10] == "3"));
}

#[test]
fn polysample_bioptimal_and_data_configuration() {
    let t = TempDir::new("poly");
    let y = SeedTree::new(12).stream().normals(12);
    let path = t.file("d.csv", &location_csv(&y));
    let out = run(&[
        "polysample", "--data", &path, "--confrontation", "ii", "--C", "1", "--rule", "minimax,bioptimal", "--prices", "2,1",
        "--dist", "normal", "--R", "100", "--seed", "1",
    ]);
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][2], "bioptimal");
    assert!(rows[2][1].contains("PF=2"));
    assert!(rows.iter().all(|r| r[4] == "12"));
}

fn darwin_fixture() -> String {
    // symmetric about 20
    let offs = [0.0, 1.0, -1.0, 2.5, -2.5, 4.0, -4.0, 6.0, -6.0, 9.0, -9.0, 13.0, -13.0, 20.0, -20.0];
    offs.iter().map(|o| format!("{}", 20.0 + o)).collect::<Vec<_>>().join("\n")
}

#[test]
fn darwin_workflow() {
    let t = TempDir::new("darwin");
    let path = t.file("darwin.txt", &format!("y\n{}", darwin_fixture()));
    let v = json(&["darwin", "--data", &path, "--B", "50000", "--draws", "2000", "--seed", "4"]);
    let cases = v["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 2);
    let center = |c: &Value| c["beta_hat"].as_f64().unwrap();
    let sigma = cases[0]["sigma_hat"].as_f64().unwrap();
    assert!((center(&cases[0]) - center(&cases[1])).abs() <= sigma / 15f64.sqrt());
    for c in cases {
        assert_eq!(c["rb_resamples"], 50000);
        let widths: Vec<f64> = c["intervals"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|i| i["method"] == "pi")
            .map(|i| i["upper"].as_f64().unwrap() - i["lower"].as_f64().unwrap())
            .collect();
        assert_eq!(widths.len(), 6);
        assert!(widths.windows(2).all(|w| w[1] >= w[0]), "{widths:?}");
    }
}

#[test]
fn darwin_rejects_wrong_row_count() {
    let t = TempDir::new("darwin14");
    let path = t.file("d.txt", "1 2 3 4 5 6 7 8 9 10 11 12 13 14");
    assert_eq!(exit_code(&["darwin", "--data", &path, "--seed", "1"]), 3);
}

#[test]
fn exit_codes_partition_error_classes() {
    let t = TempDir::new("codes");
    let bad = t.file("bad.csv", "y,x1\n1,1\nfoo,1\n");
    assert_eq!(exit_code(&["fit", "--data", &bad]), 3);
    let singular = t.file("sing.csv", "y,x1,x2\n1,1,1\n2,1,1\n4,1,1\n");
    assert_eq!(exit_code(&["fit", "--data", &singular]), 4);
    let perfect = t.file("perfect.csv", "y,x1,x2\n1,1,0\n3,1,1\n5,1,2\n7,1,3\n");
    assert_eq!(exit_code(&["fit", "--data", &perfect]), 5);
    let ok = t.file("ok.csv", "y,x1\n1,1\n2,1\n4,1\n7,1\n");
    assert_eq!(exit_code(&["interval", "--data", &ok, "--method", "bogus", "--seed", "1"]), 7);
    assert_eq!(exit_code(&["interval", "--data", &ok, "--method", "exact", "--seed", "1"]), 7);
    assert_eq!(exit_code(&["fit", "--data", &ok, "--unknown-key", "1"]), 7);
    assert_eq!(exit_code(&["interval", "--data", &ok, "--method", "rb"]), 7, "seed is required");
    assert_eq!(exit_code(&["fit", "--data", &t.0.join("missing.csv").to_string_lossy()]), 8);
    assert_eq!(exit_code(&["fit", "--data", &ok]), 0);
}

#[test]
fn out_flag_writes_the_report() {
    let t = TempDir::new("out");
    let data = t.file("d.csv", "y,x1\n1,1\n2,1\n4,1\n");
    let out = t.0.join("report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_condreg"))
        .args(["fit", "--data", &data, "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["n"], 3);
}
