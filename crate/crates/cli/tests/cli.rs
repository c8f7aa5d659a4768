use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rwpot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwpot")).args(args).output().expect("binary runs")
}

fn run_config(name: &str, out: &Path, threads: &str) -> Output {
    let cfg = configs_dir().join(format!("{name}.toml"));
    rwpot(&[name, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

const EXPERIMENTS: [&str; 11] = [
    "solve",
    "lyapunov",
    "tails",
    "compare",
    "truncate",
    "perturb",
    "entropy",
    "psi",
    "animals",
    "chi",
    "oracle-check",
];

#[test]
fn thread_count_does_not_change_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    for name in EXPERIMENTS {
        let (a, b) = (tmp.path().join(format!("{name}-1")), tmp.path().join(format!("{name}-8")));
        for (dir, threads) in [(&a, "1"), (&b, "8")] {
            let out = run_config(name, dir, threads);
            assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        }
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty(), "{name} wrote no CSV");
        assert_eq!(fa, fb, "{name} CSVs differ between thread counts");
    }
}

#[test]
fn trivial_solve_reports_a_quarter() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("trivial.toml");
    fs::write(
        &cfg,
        "experiment = \"solve\"\nseed = 1\n[spec]\nkind = \"constant\"\nvalue = 0.0\n[geometry]\nx = [1, 0]\nsites = [[0, 0], [1, 0]]\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = rwpot(&["solve", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = fs::read_to_string(out_dir.join("solve.csv")).unwrap();
    assert!(csv.contains("0,0,2.5000000000000000e-1"), "{csv}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("solve.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, seed) in [(&a, "5"), (&b, "6")] {
        let out = rwpot(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success());
    }
    assert_ne!(fs::read(a.join("solve.csv")).unwrap(), fs::read(b.join("solve.csv")).unwrap());
}

#[test]
fn missing_config_is_an_error() {
    let out = rwpot(&["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn mismatched_subcommand_is_an_error() {
    let cfg = configs_dir().join("solve.toml");
    let out = rwpot(&["tails", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hypothesis_refusal_and_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("ln.toml");
    fs::write(
        &cfg,
        "experiment = \"truncate\"\nseed = 2\n[spec]\nkind = \"log_normal\"\nmu = 0.0\nsigma = 1.0\n\
         [geometry]\nx = [3, 0]\ngamma = 0.5\nbox_factor = 1.0\n[sampling]\nsamples = 5\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let refused = rwpot(&["truncate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("A1"));
    let forced = rwpot(&[
        "truncate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--override-assumptions",
    ]);
    assert!(forced.status.success(), "{}", String::from_utf8_lossy(&forced.stderr));
    assert!(String::from_utf8_lossy(&forced.stderr).contains("overridden"));
}

#[test]
fn fault_injection_fails_the_battery() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("fault.toml");
    fs::write(
        &cfg,
        "experiment = \"oracle-check\"\nseed = 3\n[spec]\nkind = \"two_point\"\nv_lo = 0.2\nv_hi = 1.0\np_hi = 0.5\n\
         [oracle]\nbattery = [\"hand_values\"]\nfault_injection = true\n",
    )
    .unwrap();
    let out =
        rwpot(&["oracle-check", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL]"));
}
