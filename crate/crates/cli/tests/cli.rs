use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const GALAXIES: &str = r#"
seed = 7
k = 5
[data]
builtin = "galaxies"
[prior]
preset = "galaxies"
[anchors]
method = "em"
per_component = 1
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_anchormix")).args(args).arg("--config").arg(&cfg).output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn galaxies_selection_is_reported_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(dir.path(), GALAXIES, &["select-anchors", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let report = json(a.join("anchors.json"));
    assert_eq!(report["schema"], "anchormix.anchors/v1");
    assert_eq!(report["anchors"].as_array().unwrap().len(), 5);
    assert!(report["diagnostics"]["alpha_hat"].as_f64().unwrap() >= 0.99);
    assert_eq!(report["em"]["starts"].as_array().unwrap().len(), 25);
    for f in ["anchors.json", "diagnostics.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GALAXIES.replace("per_component = 1", "per_component = 1\nn_starts = 3");
    let o = run(
        dir.path(),
        &cfg,
        &["select-anchors", "--seed", "99", "--workers", "1", "--out", dir.path().join("x").to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(dir.path(), &cfg, &["select-anchors", "--out", dir.path().join("y").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let x = json(dir.path().join("x/anchors.json"));
    let y = json(dir.path().join("y/anchors.json"));
    assert_ne!(x["em"], y["em"]);
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let overlapping = GALAXIES
        .replace("method = \"em\"\nper_component = 1", "method = \"explicit\"\nsets = [[1], [2], [3], [4], [1]]");
    let o = run(dir.path(), &overlapping, &["select-anchors", "--out", out]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("anchored more than once"));
    let unknown = format!("{GALAXIES}\nmystery = 1\n");
    assert_eq!(code(&run(dir.path(), &unknown, &["select-anchors", "--out", out])), 2);
    let no_prior = "k = 2\n[data]\nbuiltin = \"galaxies\"\n";
    assert_eq!(code(&run(dir.path(), no_prior, &["fit", "--out", out])), 2);
    let missing = "k = 2\n[data]\npath = \"/nonexistent/data.csv\"\n[prior]\npreset = \"galaxies\"\n";
    assert_eq!(code(&run(dir.path(), missing, &["fit", "--out", out])), 1);
}

#[test]
fn numerical_failures_exit_with_code_three() {
    // A sparse Dirichlet leaves the unanchored component with too little mass
    // for its weight MAP.
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "y\n-5.1\n-4.9\n-5.0\n5.0\n5.2\n4.8\n").unwrap();
    let cfg = format!(
        "k = 3\n[data]\npath = {csv:?}\n[prior]\ndirichlet = 0.1\n[prior.normal_gamma]\nmean = 0.0\nkappa = 0.01\nshape = 2.0\nrate = 0.1\n\
         [anchors]\nmethod = \"explicit\"\nsets = [[1], [4], []]\n"
    );
    let o = run(dir.path(), &cfg, &["select-anchors", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fully_anchored_fit_has_one_hot_allocations() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    std::fs::write(&csv, "id,y\na,-1.0\nb,-1.2\nc,2.0\nd,2.4\n").unwrap();
    let cfg = format!(
        "seed = 2\nk = 2\n[data]\npath = {csv:?}\n[prior]\n[prior.normal_gamma]\nmean = \"mean\"\nkappa = 0.1\nshape = 2.0\nrate = 1.0\n\
         [anchors]\nmethod = \"explicit\"\nsets = [[1, 2], [3, 4]]\n[sampler]\nchains = 2\niterations = 400\nburn_in = 100\ntarget_draws = 200\n"
    );
    let out = dir.path().join("o");
    let o = run(dir.path(), &cfg, &["fit", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(out.join("summary.json"));
    assert_eq!(summary["allocation"]["groups"], serde_json::json!(["a", "b", "c", "d"]));
    let probs = summary["allocation"]["probs"].as_array().unwrap();
    let expect = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
    for (row, e) in probs.iter().zip(expect) {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(row, e);
    }
    let draws = std::fs::read_to_string(out.join("draws.csv")).unwrap();
    assert!(draws.starts_with("# schema: anchormix.draws/v1"));
    assert_eq!(draws.lines().count(), 2 + 200);
}

#[test]
fn scale_mixture_fit_orders_the_variances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 1\nk = 2\n[data]\nbuiltin = \"scale_mixture\"\n[prior]\npreset = \"scale_mixture\"\n\
               [anchors]\nper_component = 2\n[sampler]\nchains = 4\niterations = 3000\nburn_in = 500\ntarget_draws = 2000\n";
    let out = dir.path().join("o");
    let o = run(dir.path(), cfg, &["fit", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(out.join("summary.json"));
    let spread: Vec<f64> = summary["anchors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["points"].as_array().unwrap().iter().map(|p| p[0].as_f64().unwrap().abs()).sum())
        .collect();
    let wide = usize::from(spread[1] > spread[0]);
    let sigma: Vec<f64> =
        summary["table"].as_array().unwrap().iter().map(|r| r["sigma_mean"][0].as_f64().unwrap()).collect();
    assert!(sigma[wide] > sigma[1 - wide], "{sigma:?}");
    assert!(json(out.join("anchors.json"))["diagnostics"]["alpha_hat"].as_f64().unwrap() > 0.999);
}

#[test]
fn diagnose_from_anchor_file_and_draws() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let fit_cfg = format!("{GALAXIES}\n[sampler]\nchains = 2\niterations = 1500\nburn_in = 500\ntarget_draws = 500\n");
    assert_eq!(code(&run(dir.path(), &fit_cfg, &["fit", "--out", out.to_str().unwrap()])), 0);
    let from_file = GALAXIES.replace(
        "method = \"em\"\nper_component = 1",
        &format!("method = \"file\"\nfile = {:?}", out.join("anchors.json")),
    );
    let diag_out = dir.path().join("d");
    let draws = out.join("draws.csv");
    let o = run(
        dir.path(),
        &from_file,
        &["diagnose", "--draws", draws.to_str().unwrap(), "--out", diag_out.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = json(diag_out.join("diagnostics.json"));
    assert_eq!(d["diagnostics"]["gamma0_source"], "posterior_mean");
    assert!(d["diagnostics"]["alpha_hat"].as_f64().unwrap() > 0.9);
    let o = run(dir.path(), &from_file, &["diagnose", "--out", diag_out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let d = json(diag_out.join("diagnostics.json"));
    let em = json(out.join("anchors.json"));
    assert_eq!(d["diagnostics"], em["diagnostics"]);
}

#[test]
fn simulate_writes_every_cell_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 4\n[simulation]\ndeltas = [0.25, 2.75]\nsigmas = [1.0]\ndatasets = 3\nn = 6\nreplicates = 5\nposterior_draws = 20\nm_min = 2\nm_max = 4\n";
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(dir.path(), cfg, &["simulate", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = std::fs::read_to_string(a.join("sim_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 3);
    assert_eq!(csv, std::fs::read_to_string(b.join("sim_results.csv")).unwrap());
    assert_eq!(json(a.join("sim_summary.json"))["cells"].as_array().unwrap().len(), 6);
}

#[test]
fn extract_features_single_trial() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials");
    std::fs::create_dir(&trials).unwrap();
    std::fs::write(trials.join("D07_SA01_R01.txt"), "1,0,0,9;\n0,2,0,9;\n0,0,4,9;\n").unwrap();
    std::fs::write(trials.join("notes.md"), "ignored").unwrap();
    let out = dir.path().join("o");
    let o = run(dir.path(), "", &["extract-features", trials.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("features.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,activity,f1,f2,f3");
    let f: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&f[..2], &["D07_SA01_R01", "D07"]);
    let v: Vec<f64> = f[2..].iter().map(|x| x.parse().unwrap()).collect();
    assert_eq!(v, vec![4f64.ln(), 0.0, 2f64.ln()]);
    let flat = std::fs::write(trials.join("D01_SA01_R01.txt"), "3,4,0;\n0,0,5;\n");
    flat.unwrap();
    let o = run(dir.path(), "", &["extract-features", trials.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
