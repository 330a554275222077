use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfy_core::io::write_path_csv;
use mfy_core::{SamplePath, TimeGrid};

const BASE: &str = r#"
kernel = "power_law:-1"
eps_cells = 4.0
hurst = 0.1
n_steps = 32
half_width = 4.0
n_cells = 128
particle_counts = [8]
seeds = [0]
noise_seed = 3
"#;

fn mfy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfy"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("MFY_SEED")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn success_writes_the_listed_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    for (args, files) in [
        (vec!["gen-fbm", "--hurst", "0.2", "--steps", "64"], vec!["fbm.csv", "fbm.bin"]),
        (vec!["--config", &cfg, "averaged-field"], vec!["averaged_field.bin", "gamma_norm.csv"]),
        (vec!["--config", &cfg, "averaged-field", "--convolution"], vec!["averaged_field.bin"]),
        (vec!["--config", &cfg, "sewing-study", "--atoms", "4", "--max-level", "4"], vec!["sewing.csv", "sewing_summary.csv"]),
        (vec!["--config", &cfg, "solve-mkv", "--atoms", "16"], vec!["mkv_flow.bin", "picard_gaps.csv", "growth.csv"]),
        (vec!["--config", &cfg, "particles", "--n", "8"], vec!["particles.bin", "marginals.csv"]),
        (vec!["besov-check", "--cells", "1024", "--k-max", "5", "--eps", "0.0625"], vec!["besov.csv", "hurst_threshold.csv"]),
    ] {
        let out = mfy(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let listed = String::from_utf8(out.stdout).unwrap();
        for f in files {
            assert!(dir.path().join(f).exists(), "{f}");
            assert!(listed.contains(f), "{f}");
        }
    }
    let thr = fs::read_to_string(dir.path().join("hurst_threshold.csv")).unwrap();
    assert!(thr.contains("1.6666666666666666e-1"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mfy(dir.path(), &["solve-mkv"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(mfy(dir.path(), &["--config", missing.to_str().unwrap(), "particles"]).status.code(), Some(2));
    let bad = write_config(dir.path(), &BASE.replace("hurst = 0.1", "hurst = -0.1"));
    assert_eq!(mfy(dir.path(), &["--config", &bad, "particles"]).status.code(), Some(2));
    assert_eq!(mfy(dir.path(), &["besov-check", "--p", "3"]).status.code(), Some(2));
}

#[test]
fn non_convergence_exits_with_three_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}\n[solver]\nmax_iters = 1\npicard_tol = 1e-15\n"));
    let out = mfy(dir.path(), &["--config", &cfg, "solve-mkv", "--atoms", "16"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let gaps = fs::read_to_string(dir.path().join("picard_gaps.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 2);
}

#[test]
fn blow_up_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("half_width = 4.0", "half_width = 0.5").replace("n_cells = 128", "n_cells = 4096").replace("eps_cells = 4.0", "eps_cells = 2.0");
    let cfg = write_config(dir.path(), &text);
    let tg = TimeGrid::new(1.0, 32).unwrap();
    let eps = 2.0 / 4096.0;
    let mut paths = Vec::new();
    for (name, x) in [("a.csv", -eps / 2.0), ("b.csv", eps / 2.0), ("z.csv", 0.0)] {
        let p = dir.path().join(name);
        let mut w = fs::File::create(&p).unwrap();
        write_path_csv(&SamplePath::constant(tg, &[x]), &mut w).unwrap();
        paths.push(p.to_str().unwrap().to_string());
    }
    let out = mfy(dir.path(), &["--config", &cfg, "particles", "--paths", &paths[0], &paths[1], "--z", &paths[2]]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_flag_and_environment_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(mfy(&a, &["--config", &cfg, "--seed", "11", "particles"]).status.success());
    let env = Command::new(env!("CARGO_BIN_EXE_mfy"))
        .args(["--config", &cfg, "particles", "--out"])
        .arg(&b)
        .env("MFY_SEED", "11")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert!(mfy(&c, &["--config", &cfg, "particles"]).status.success());
    let read = |d: &Path| fs::read(d.join("marginals.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(mfy(&a, &["--config", &cfg, "--threads", "1", "solve-mkv", "--atoms", "32"]).status.success());
    assert!(mfy(&b, &["--config", &cfg, "--threads", "3", "solve-mkv", "--atoms", "32"]).status.success());
    for f in ["mkv_flow.bin", "picard_gaps.csv", "growth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
