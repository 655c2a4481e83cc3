use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const COHERENT: &str = r#""omega_up_MHz": 8, "omega_down_MHz": 8, "gamma_MHz": 3, "od_c": 35,
    "dressing": {"mode": "ratio", "xi": 0.01, "rc_um": 12, "delta_over_omega": 10},
    "r_perp_um": 4, "waist_um": 2"#;

const DISSIPATIVE: &str = r#""omega_up_MHz": 3, "omega_down_MHz": 3, "gamma_MHz": 3, "od_c": 100,
    "dressing": {"mode": "ratio", "xi": 0.5, "rc_um": 9, "delta_over_omega": 10},
    "r_perp_um": 4, "waist_um": 2"#;

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn exec(&self, cmd: &str, config: &str, extra: &[&str]) -> Output {
        let cfg = self.dir.path().join("config.json");
        fs::write(&cfg, config).unwrap();
        Command::new(env!("CARGO_BIN_EXE_rydex"))
            .arg(cmd)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(self.out())
            .args(extra)
            .output()
            .unwrap()
    }

    fn ok(&self, cmd: &str, config: &str, extra: &[&str]) {
        let o = self.exec(cmd, config, extra);
        assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn text(&self, name: &str) -> String {
        fs::read_to_string(self.out().join(name)).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.text(name)).unwrap()
    }

    fn column(&self, name: &str, col: &str) -> Vec<f64> {
        let text = self.text(name);
        let mut lines = text.lines();
        let k = lines.next().unwrap().split(',').position(|h| h == col).unwrap();
        lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
    }
}

fn code(o: &Output) -> Option<i32> {
    o.status.code()
}

#[test]
fn coherent_sweep_peaks_near_od_75() {
    let run = Run::new();
    let cfg = format!(r#"{{"params": {{{COHERENT}}}, "sweep": {{"quantity": "od_c", "min": 60, "max": 90, "points": 31}}}}"#);
    run.ok("scatter-sweep", &cfg, &[]);
    let od = run.column("scatter_1d.csv", "od_c");
    let r2 = run.column("scatter_1d.csv", "|R|2");
    let (k, peak) = r2.iter().enumerate().fold((0, 0.0), |a, (k, &r)| if r > a.1 { (k, r) } else { a });
    assert!(peak > 0.95, "peak |R|^2 {peak}");
    assert!((70.0..=80.0).contains(&od[k]), "peak at OD {}", od[k]);
    let j = run.json("scatter_sweep.json");
    assert_eq!(j["command"], "scatter-sweep");
    assert!(j["config"]["params"].is_object());
    assert!(j["derived"]["eit_bandwidth"].as_f64().unwrap() > 0.0);
}

#[test]
fn dissipative_sweep_splits_evenly_at_high_od() {
    let run = Run::new();
    let cfg = format!(r#"{{"params": {{{DISSIPATIVE}}}, "sweep": {{"quantity": "od_c", "min": 150, "max": 151, "points": 2}}}}"#);
    run.ok("scatter-sweep", &cfg, &[]);
    let t2 = run.column("scatter_1d.csv", "|T|2")[0];
    let r2 = run.column("scatter_1d.csv", "|R|2")[0];
    assert!((t2 - 0.25).abs() < 0.03 && (r2 - 0.25).abs() < 0.03, "|T|^2 {t2} |R|^2 {r2}");
}

#[test]
fn empty_sweep_is_a_config_error() {
    let run = Run::new();
    let cfg = format!(r#"{{"params": {{{COHERENT}}}, "sweep": {{"quantity": "od_c", "min": 40, "max": 40, "points": 2}}}}"#);
    let o = run.exec("scatter-sweep", &cfg, &[]);
    assert_eq!(code(&o), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep"));
}

#[test]
fn malformed_config_exits_2() {
    let run = Run::new();
    assert_eq!(code(&run.exec("feasibility", r#"{"params": {"od_c": 1}, "bogus": 1}"#, &[])), Some(2));
    assert_eq!(code(&run.exec("feasibility", "not json", &[])), Some(2));
}

#[test]
fn pulse_without_exchange_leaves_up_channel_dark() {
    let run = Run::new();
    let cfg = format!(r#"{{"params": {{{}}}}}"#, COHERENT.replace(r#""xi": 0.01"#, r#""xi": 0"#));
    run.ok("pulse", &cfg, &[]);
    let r = &run.json("pulse.json")["results"];
    assert_eq!(r["up"]["energy_synthesis"].as_f64(), Some(0.0));
    assert_eq!(r["up"]["energy_polariton"].as_f64(), Some(0.0));
    assert!((r["down"]["energy_synthesis"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let up = run.column("trace_synthesis.csv", "up_re");
    assert!(up.iter().all(|&x| x == 0.0));
}

#[test]
fn narrowband_pulse_keeps_its_shape_better() {
    let fidelity = |dt: f64| {
        let run = Run::new();
        let cfg = format!(r#"{{"params": {{{COHERENT}}}, "pulse": {{"dt_times_Gamma": {dt}}}}}"#);
        run.ok("pulse", &cfg, &[]);
        run.json("pulse.json")["results"]["up"]["overlap_fidelity_synthesis"].as_f64().unwrap()
    };
    let (matched, mismatched) = (fidelity(10.0), fidelity(1.0));
    assert!(matched > 0.99 && matched > mismatched, "matched {matched} mismatched {mismatched}");
}

#[test]
fn subtract_tradeoff_endpoints() {
    let run = Run::new();
    let cfg = r#"{"sweep": {"quantity": "r2", "min": 1e-8, "max": 0.99999999, "points": 11},
        "subtract": {"statistics": {"kind": "fock", "n": 2}, "density_r2": [0.5]}}"#;
    run.ok("subtract", cfg, &[]);
    let eta = run.column("tradeoff.csv", "eta");
    let pur = run.column("tradeoff.csv", "purity");
    let n = eta.len() - 1;
    assert!(eta[0] < 1e-3 && (pur[0] - 1.0).abs() < 1e-3, "low end {} {}", eta[0], pur[0]);
    assert!((eta[n] - 1.0).abs() < 1e-3 && (pur[n] - 2.0 / 3.0).abs() < 1e-3, "high end {} {}", eta[n], pur[n]);
    assert!(run.out().join("rho_abs_r2_0.500.csv").exists());
}

#[test]
fn feasibility_conditions() {
    let run = Run::new();
    let cfg = format!(r#"{{"params": {{{COHERENT}}}}}"#);
    run.ok("feasibility", &cfg, &[]);
    let s = run.column("feasibility.csv", "spinwave_condition")[0];
    let c = run.column("feasibility.csv", "control_condition")[0];
    assert!((s - 0.66).abs() < 0.01 && (c - 0.06).abs() < 0.01, "{s} {c}");
}

#[test]
fn repeater_pattern_probabilities_sum_to_one() {
    let run = Run::new();
    run.ok("repeater", "{}", &[]);
    let text = run.text("repeater_patterns.csv");
    for stage in ["elementary", "connection"] {
        let total: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|f| f[0] == stage)
            .map(|f| f[3].parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "{stage} sums to {total}");
    }
}

#[test]
fn optimize_without_crossing_is_a_numerical_failure() {
    let run = Run::new();
    let cfg = r#"{"sweep": {"quantity": "alpha2", "min": 0.1, "max": 0.9, "points": 3}}"#;
    assert_eq!(code(&run.exec("optimize", cfg, &[])), Some(3));
}

#[test]
fn two_photon_writes_three_density_matrices() {
    let run = Run::new();
    let cfg = r#"{"sweep": {"quantity": "r2", "min": 0.1, "max": 0.9, "points": 2},
        "two_photon": {"n_eff": 0.5, "rho_r2": [0.1, 0.5, 0.9], "grid": {"bins_per_pulse": 16, "line_bins_per_pulse": 16}}}"#;
    run.ok("two-photon", cfg, &[]);
    for r2 in ["0.100", "0.500", "0.900"] {
        for stem in ["rho_r2_", "rho_abs_r2_", "rho_abs_exact_r2_"] {
            assert!(run.out().join(format!("{stem}{r2}.csv")).exists(), "{stem}{r2}");
        }
    }
    let eta = run.column("two_photon.csv", "eta");
    let pur = run.column("two_photon.csv", "purity");
    assert!(eta.iter().chain(&pur).all(|x| (0.0..=1.0 + 1e-9).contains(x)));
}

fn csv_files(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn output_is_deterministic_across_runs_and_thread_counts() {
    let cfg = format!(r#"{{"params": {{{COHERENT}}}, "sweep": {{"quantity": "od_c", "min": 20, "max": 60, "points": 5}}}}"#);
    let [a, b, c] = [&[][..], &[][..], &["--jobs", "2"][..]].map(|extra| {
        let run = Run::new();
        run.ok("scatter-sweep", &cfg, extra);
        csv_files(&run.out())
    });
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.iter().all(|(_, t)| !t.contains('\r')));
}

#[test]
fn plot_flag_writes_svg() {
    let run = Run::new();
    run.ok("subtract", r#"{"sweep": {"quantity": "r2", "min": 0.1, "max": 0.9, "points": 5}}"#, &["--plot"]);
    let svg = run.text("tradeoff.svg");
    assert!(svg.contains("<svg"));
    let run = Run::new();
    run.ok("subtract", r#"{"sweep": {"quantity": "r2", "min": 0.1, "max": 0.9, "points": 5}}"#, &[]);
    assert!(!run.out().join("tradeoff.svg").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(v.is_object(), "{}", path.display());
        n += 1;
    }
    assert!(n >= 7);
    let run = Run::new();
    let cfg = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pulse.json")).unwrap();
    run.ok("feasibility", &cfg, &[]);
    let cfg = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/repeater.json")).unwrap();
    run.ok("repeater", &cfg, &[]);
}
