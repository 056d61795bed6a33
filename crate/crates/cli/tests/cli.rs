use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Run {
    out: Output,
    dir: PathBuf,
}

impl Run {
    fn code(&self) -> i32 {
        self.out.status.code().unwrap_or(-1)
    }
    fn stdout(&self) -> String {
        String::from_utf8_lossy(&self.out.stdout).into_owned()
    }
    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.out.stderr).into_owned()
    }
    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.dir.join(name)).unwrap()
    }
}

fn plateid(tmp: &Path, name: &str, cmd: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = tmp.join(format!("{name}.toml"));
    fs::write(&cfg, config).unwrap();
    let dir = tmp.join(name);
    let out = Command::new(env!("CARGO_BIN_EXE_plateid"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    Run { out, dir }
}

/// `(freq, re, im, amp)` rows of an AFC file.
fn afc(text: &str) -> Vec<[f64; 4]> {
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "freq_hz,re,im,amp,phase_rad");
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3]]
        })
        .collect()
}

fn peaks(rows: &[[f64; 4]]) -> Vec<f64> {
    rows.windows(3)
        .filter(|w| w[1][3] > w[0][3] && w[1][3] > w[2][3])
        .map(|w| w[1][0])
        .collect()
}

fn modes_table(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|s| s.parse().unwrap()).collect())
        .collect()
}

const COARSE: &str = "[geometry]\nnx = 24\nny = 6\n";

#[test]
fn mesh_command() {
    let tmp = tempfile::tempdir().unwrap();
    let r = plateid(tmp.path(), "mesh", "mesh", "", &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    assert!(r.stdout().contains("1000 triangles"), "{}", r.stdout());
    let text = r.read("mesh.txt");
    let accel = text
        .lines()
        .find(|l| l.starts_with("accel_triangles"))
        .expect("accel_triangles section");
    let count: usize = accel.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(count > 0);

    let bad = plateid(tmp.path(), "bad", "mesh", "[geometry]\nwidth = 0.0\n", &[]);
    assert_eq!(bad.code(), 2);
    assert!(bad.stderr().contains("width"), "{}", bad.stderr());
}

#[test]
fn forward_static_row_and_peaks() {
    let tmp = tempfile::tempdir().unwrap();
    let r = plateid(
        tmp.path(),
        "fwd",
        "forward",
        "[frequencies]\nf_max = 200.0\ncount = 201\n",
        &[],
    );
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let rows = afc(&r.read("afc.csv"));
    assert_eq!(rows.len(), 201);
    assert!(
        (rows[0][1] - 1.0).abs() <= 1e-10 && rows[0][2] == 0.0,
        "{:?}",
        rows[0]
    );
    assert_eq!(peaks(&rows).len(), 1);
}

#[test]
fn forward_accelerometer_modes_move_first_peak() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[frequencies]\nf_max = 200.0\ncount = 401\n";
    let first = |mode: &str| {
        let r = plateid(tmp.path(), mode, "forward", cfg, &["--accel-mode", mode]);
        assert_eq!(r.code(), 0, "{}", r.stderr());
        peaks(&afc(&r.read("afc.csv")))[0]
    };
    let (correct, ignore, smear) = (first("correct"), first("ignore"), first("smear"));
    assert!(
        (ignore - correct).abs() / correct > 0.01,
        "{correct} {ignore}"
    );
    assert!(
        smear != correct && smear != ignore,
        "{correct} {ignore} {smear}"
    );
}

#[test]
fn forward_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = plateid(tmp.path(), "a", "forward", COARSE, &["--threads", "1"]);
    let b = plateid(tmp.path(), "b", "forward", COARSE, &[]);
    assert_eq!(a.code(), 0, "{}", a.stderr());
    assert_eq!(a.read("afc.csv"), b.read("afc.csv"));
}

#[test]
fn modes_command() {
    let tmp = tempfile::tempdir().unwrap();
    let r = plateid(
        tmp.path(),
        "free",
        "modes",
        "[geometry]\nplacement = \"none\"\n",
        &[],
    );
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let f1 = modes_table(&r.read("modes.csv"))[0][1];
    assert!((80.0..=88.0).contains(&f1), "{f1}");

    let r = plateid(
        tmp.path(),
        "undamped",
        "modes",
        &format!("{COARSE}[material]\nloss_factor = 0.0\n"),
        &[],
    );
    assert_eq!(r.code(), 0, "{}", r.stderr());
    assert!(modes_table(&r.read("modes.csv"))
        .iter()
        .all(|row| row[3] == 0.0));

    let sym = plateid(
        tmp.path(),
        "sym",
        "modes",
        "[geometry]\nplacement = \"symmetric\"\n",
        &[],
    );
    let shf = plateid(
        tmp.path(),
        "shf",
        "modes",
        "[geometry]\nplacement = \"shifted\"\n",
        &[],
    );
    assert_eq!(sym.code(), 0, "{}", sym.stderr());
    assert_ne!(sym.read("modes.csv"), shf.read("modes.csv"));
}

#[test]
fn synth_command() {
    let tmp = tempfile::tempdir().unwrap();
    let fwd = plateid(tmp.path(), "fwd", "forward", COARSE, &[]);
    let clean = plateid(tmp.path(), "clean", "synth", COARSE, &[]);
    assert_eq!(clean.code(), 0, "{}", clean.stderr());
    assert_eq!(clean.read("data.csv"), fwd.read("afc.csv"));
    assert!(clean.read("data.meta.toml").contains("theta_ref"));

    let noisy = format!("{COARSE}[noise]\nlevel = 3.0\nseed = 11\n");
    let a = plateid(tmp.path(), "a", "synth", &noisy, &[]);
    let b = plateid(tmp.path(), "b", "synth", &noisy, &[]);
    assert_eq!(a.read("data.csv"), b.read("data.csv"));
    assert_eq!(a.read("data.meta.toml"), b.read("data.meta.toml"));
    let c = plateid(tmp.path(), "c", "synth", &noisy, &["--seed", "12"]);
    assert_ne!(a.read("data.csv"), c.read("data.csv"));

    let base = afc(&fwd.read("afc.csv"));
    let data = afc(&a.read("data.csv"));
    let peak = base.iter().fold(0.0f64, |m, r| m.max(r[3]));
    let sigma = 0.03 * peak;
    let deviations: Vec<f64> = base
        .iter()
        .zip(&data)
        .flat_map(|(x, y)| [y[1] - x[1], y[2] - x[2]])
        .collect();
    let std = (deviations.iter().map(|d| d * d).sum::<f64>() / deviations.len() as f64).sqrt();
    assert!(
        (std - sigma).abs() <= 0.2 * sigma,
        "std {std} nominal {sigma}"
    );
}

#[test]
fn fit_local_reports_and_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{COARSE}[frequencies]\nf_max = 600.0\ncount = 61\n[fit]\ninitial_relative_error = [0.05, 0.05, 1.0]\nthresholds = [1e-6, 1e-6, 1e-6]\n"
    );
    let r = plateid(tmp.path(), "ok", "fit-local", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}\n{}", r.stdout(), r.stderr());
    assert!(r.stdout().contains("PASS"));
    let report = r.read("report.toml");
    assert!(
        report.contains("relative_errors") && report.contains("pass = true"),
        "{report}"
    );
    let trace = r.read("trace.csv");
    assert!(trace.starts_with("iter,loss,theta_1,theta_2,theta_3,delta_or_spread\n"));

    let strict = format!("{cfg}[trust_region]\nmax_iter = 1\n");
    let r = plateid(tmp.path(), "strict", "fit-local", &strict, &[]);
    assert_eq!(r.code(), 4, "{}", r.stderr());
    assert!(r.read("report.toml").contains("pass = false"));

    let missing = format!("{COARSE}[fit]\nthresholds = [1.0, 1.0, 1.0]\n");
    assert_eq!(
        plateid(tmp.path(), "missing", "fit-local", &missing, &[]).code(),
        2
    );
}

#[test]
fn fit_local_from_data_file() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = plateid(
        tmp.path(),
        "synth",
        "synth",
        &format!("{COARSE}[frequencies]\nf_max = 600.0\ncount = 61\n"),
        &[],
    );
    assert_eq!(synth.code(), 0, "{}", synth.stderr());
    let data = synth.dir.join("data.csv");
    let cfg = format!(
        "{COARSE}[fit]\ninitial = [18.5, 0.3, 0.004]\nthresholds = [1e-6, 1e-6, 1e-6]\n[paths]\ndata = \"{}\"\n",
        data.display()
    );
    let r = plateid(tmp.path(), "fit", "fit-local", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}\n{}", r.stdout(), r.stderr());
}

#[test]
fn fit_global_single_peak_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[geometry]\nnx = 12\nny = 3\n[frequencies]\nf_max = 200.0\n[de]\nmax_fev = 300\n";
    let r = plateid(tmp.path(), "g200", "fit-global", cfg, &["--seed", "3"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let report = r.read("report.toml");
    assert!(
        report.contains("[global]") && report.contains("restart_losses"),
        "{report}"
    );
    let trace = r.read("trace.csv");
    assert!(trace.lines().count() > 2);
}

#[test]
fn check_grad_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{COARSE}[noise]\nlevel = 1.0\nseed = 3\n");
    let r = plateid(tmp.path(), "ok", "check-grad", &cfg, &[]);
    assert_eq!(r.code(), 0, "{}\n{}", r.stdout(), r.stderr());
    let report = r.read("check_grad.toml");
    let value = |key: &str| -> f64 {
        let line = report.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    assert!(value("gradient_discrepancy") < 1e-5);
    assert!(value("hessian_asymmetry") < 1e-10);

    let r = plateid(
        tmp.path(),
        "bad",
        "check-grad",
        &cfg,
        &["--theta", "17.97,0.9999,0.003"],
    );
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("infeasible"), "{}", r.stderr());
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        plateid(tmp.path(), "syntax", "forward", "[geometry\n", &[]).code(),
        2
    );
    assert_eq!(
        plateid(
            tmp.path(),
            "unknown",
            "forward",
            "[geometry]\nfoo = 1\n",
            &[]
        )
        .code(),
        2
    );
    assert_eq!(
        plateid(
            tmp.path(),
            "coarse",
            "forward",
            "[geometry]\nnx = 5\nny = 2\n",
            &[]
        )
        .code(),
        2
    );
}
