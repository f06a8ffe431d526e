use std::path::Path;
use std::process::{Command, Output};

fn tomo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomo"))
        .args(args)
        .env("TOMO_OUT_DIR", out)
        .output()
        .expect("spawn tomo")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = tomo::preset("bell-n2").unwrap();
    cfg.name = "cli-bell".into();
    cfg.sampling.seeds = vec![3, 5];
    cfg.bme.chain_length = 800;
    cfg.bme.burn_in = 200;
    cfg.bme.thinning = 4;
    let path = dir.join("bell.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

#[test]
fn run_writes_report_files_and_report_reads_them_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = tomo(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("cli-bell");
    for f in ["report.json", "angular_profiles.csv", "empirical_profiles.csv", "density_bars.csv", "q_matrix.csv"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    assert!(run_dir.join("records/record_seed3.json").exists());
    assert!(run_dir.join("bme/bme_seed5.json").exists());

    let profiles = std::fs::read_to_string(run_dir.join("angular_profiles.csv")).unwrap();
    let header = profiles.lines().next().unwrap();
    assert_eq!(header, "theta_rad,p0,p1,p2,p3,p4,p5,p6,p7");
    assert_eq!(profiles.lines().count(), 21);

    let summary = tomo(&["report", run_dir.to_str().unwrap()], dir.path());
    assert!(summary.status.success());
    let text = String::from_utf8_lossy(&summary.stdout);
    assert!(text.contains("pseudoinverse") && text.contains("bme"), "{text}");
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("elsewhere");
    let out = tomo(
        &["run", cfg.to_str().unwrap(), "--seed", "9", "--shots", "300", "--estimator", "pseudoinverse", "--out", out_dir.to_str().unwrap(), "--parallel", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = tomo::load_report(&out_dir.join("cli-bell")).unwrap();
    assert_eq!(report.config.sampling.shots, 300);
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.runs[0].seed, 9);
    assert!(report.runs[0].bme.is_none() && report.summary.bme.is_none());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = 3\n").unwrap();
    assert_eq!(tomo(&["validate", bad.to_str().unwrap()], dir.path()).status.code(), Some(2));
    assert_eq!(tomo(&["validate", "no-such-preset"], dir.path()).status.code(), Some(2));

    let mut cfg = tomo::preset("bell-n2").unwrap();
    cfg.ancilla.arrangements = Some(1);
    let under = dir.path().join("under.toml");
    std::fs::write(&under, cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(tomo(&["run", under.to_str().unwrap()], dir.path()).status.code(), Some(3));

    assert_eq!(tomo(&["run", "bell-n2", "--parallel", "0"], dir.path()).status.code(), Some(2));
    assert_eq!(tomo(&["report", dir.path().join("missing").to_str().unwrap()], dir.path()).status.code(), Some(1));
}

#[test]
fn validate_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = tomo(&["presets"], dir.path());
    let listed = String::from_utf8_lossy(&out.stdout);
    for name in tomo::preset_names() {
        assert!(listed.contains(name));
        let v = tomo(&["validate", name], dir.path());
        assert!(v.status.success(), "{name}: {}", String::from_utf8_lossy(&v.stderr));
    }
}

#[test]
fn rank_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tomo::RandomGraphConfig::standard(2, vec![1, 3], 4);
    let path = dir.path().join("graph.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let out = tomo(&["rank-study", path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("rank_n2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}
