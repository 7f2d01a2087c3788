use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nonholo"));
    c.env_remove("NONHOLO_SEED");
    c
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn nonholo")
}

const SHORT: &str = "
[scenario]
name = short

[model]
id = rolling-body
mass = 1
gravity = 1
inertia = 0.4, 0.5, 0.6
kappa = 1
shape = ellipsoid
semi_axes = 1, 0.8, 0.6

[initial]
gamma = 0.2, 0.3, 0.932
omega = 0.4, -0.3, 0.5

[integrator]
h = 1e-2
t_end = 1

[output]
observables = moving_energy, energy, x_norm

[diagnostics]
drift = moving_energy
maxima = x_norm
";

const BLOWUP: &str = "
[model]
id = chaplygin-3d
mass = 1
radius = 1
inertia = 1, 1.3, 1.7
kappa = 1

[initial]
gamma = 0.1, 0.5, 0.86
omega = 60, -40, 30

[integrator]
h = 0.2
t_end = 50
";

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn list_models_names_every_model() {
    let out = bin().arg("list-models").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in [
        "veselova-3d",
        "lr-son",
        "rolling-body",
        "chaplygin-3d",
        "chaplygin-nd",
        "chaplygin-nd-reduced",
    ] {
        assert!(text.lines().any(|l| l.starts_with(id)), "{id} missing from\n{text}");
    }
}

#[test]
fn bundled_scenarios_pass_check() {
    for entry in fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let out = bin().arg("check").arg(&path).output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn unknown_key_is_a_config_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.cfg", &SHORT.replace("kappa = 1", "kappa = 1\nspin = 3"));
    let out = run(dir.path(), &["check", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 11") && err.contains("`spin`"), "{err}");
}

#[test]
fn bad_value_and_bad_flag_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.cfg", &SHORT.replace("mass = 1", "mass = heavy"));
    assert_eq!(run(dir.path(), &["run", p.to_str().unwrap()]).status.code(), Some(2));
    let p = write(dir.path(), "ok.cfg", SHORT);
    assert_eq!(
        run(dir.path(), &["run", p.to_str().unwrap(), "--method", "euler"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(dir.path(), &["run", p.to_str().unwrap(), "--h", "-1"]).status.code(),
        Some(2)
    );
    assert_eq!(run(dir.path(), &["run", "missing.cfg"]).status.code(), Some(2));
}

#[test]
fn run_writes_csv_and_report_with_defaults_named_after_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "short.cfg", SHORT);
    let out = run(dir.path(), &["run", p.to_str().unwrap(), "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("short.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[..4], ["t", "K1", "K2", "K3"]);
    assert_eq!(header[header.len() - 3..], ["moving_energy", "energy", "x_norm"]);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(
        first[1]
            .trim_start_matches('-')
            .split('e')
            .next()
            .unwrap()
            .replace('.', "")
            .len(),
        17
    );

    let report = fs::read_to_string(dir.path().join("short.report")).unwrap();
    assert!(report.contains("[drift]\nobservable = moving_energy"));
    for record in report
        .split("\n\n")
        .filter(|r| r.starts_with("[drift]") || r.starts_with("[maximum]"))
    {
        assert!(record.contains("tolerance = "), "{record}");
        assert!(record.contains("seed = 5"), "{record}");
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let src = scenario("veselova-affine.cfg");
    let a = run(
        dir.path(),
        &[
            "run",
            src.to_str().unwrap(),
            "--t-end",
            "2",
            "--csv",
            "a.csv",
            "--report",
            "a.txt",
        ],
    );
    let b = run(
        dir.path(),
        &[
            "run",
            src.to_str().unwrap(),
            "--t-end",
            "2",
            "--csv",
            "b.csv",
            "--report",
            "b.txt",
        ],
    );
    assert!(a.status.success() && b.status.success());
    assert_eq!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a.txt")).unwrap(),
        fs::read(dir.path().join("b.txt")).unwrap()
    );
}

#[test]
fn seed_precedence_flag_then_file_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "s.cfg", SHORT);
    let seed_of = |extra: &[&str], env: Option<&str>| {
        let mut c = bin();
        c.current_dir(dir.path())
            .args(["run", p.to_str().unwrap(), "--report", "r.txt"])
            .args(extra);
        if let Some(v) = env {
            c.env("NONHOLO_SEED", v);
        }
        assert!(c.output().unwrap().status.success());
        let r = fs::read_to_string(dir.path().join("r.txt")).unwrap();
        r.lines().find(|l| l.starts_with("seed = ")).unwrap().to_string()
    };
    assert_eq!(seed_of(&[], None), "seed = 0");
    assert_eq!(seed_of(&[], Some("42")), "seed = 42");
    assert_eq!(seed_of(&["--seed", "9"], Some("42")), "seed = 9");
    let with_file_seed = write(dir.path(), "s.cfg", &SHORT.replace("name = short", "name = short\nseed = 3"));
    assert_eq!(with_file_seed, p);
    assert_eq!(seed_of(&[], Some("42")), "seed = 3");
}

#[test]
fn numerical_failure_exits_3_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "blowup.cfg", BLOWUP);
    let out = run(dir.path(), &["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let csv = fs::read_to_string(dir.path().join("blowup.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    let report = fs::read_to_string(dir.path().join("blowup.report")).unwrap();
    assert!(report.contains("status = failed") && report.contains("class = numerical"));
}

#[test]
fn batch_reports_the_worst_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("scenarios");
    fs::create_dir(&sc).unwrap();
    write(&sc, "a.cfg", SHORT);
    write(&sc, "b.cfg", &SHORT.replace("t_end = 1", "t_end = 0.5"));
    let out = run(dir.path(), &["batch", "scenarios"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("a.csv").exists() && dir.path().join("b.report").exists());

    assert_eq!(
        run(dir.path(), &["batch", "scenarios", "--csv", "x.csv"]).status.code(),
        Some(2)
    );

    write(&sc, "c.cfg", &SHORT.replace("mass = 1", "mass = -1"));
    assert_eq!(run(dir.path(), &["batch", "scenarios"]).status.code(), Some(2));
    write(&sc, "d.cfg", BLOWUP);
    assert_eq!(run(dir.path(), &["batch", "scenarios"]).status.code(), Some(3));
}

#[test]
fn projection_flag_disables_projection() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "s.cfg", SHORT);
    let out = run(
        dir.path(),
        &["run", p.to_str().unwrap(), "--project", "false", "--report", "r.txt"],
    );
    assert!(out.status.success());
    assert!(fs::read_to_string(dir.path().join("r.txt"))
        .unwrap()
        .contains("project = false"));
}
