use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use paragate::calibration::predict_resonance;
use paragate::device::DeviceParams;
use paragate::hamiltonian::Transition;
use paragate::units::angular_to_mhz;
use serde_json::Value;
use tempfile::TempDir;

fn paragate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paragate")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = paragate(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn run_in(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut full: Vec<&str> = args.to_vec();
    let s = out.to_str().unwrap();
    full.extend(["--out", s]);
    ok(&full);
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// CSV as header plus rows of optional floats (blank cells are `None`).
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse().ok()).collect()).collect();
    (header, rows)
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

struct Recipes {
    _dir: TempDir,
    iswap: PathBuf,
    cz02: PathBuf,
}

fn recipes() -> &'static Recipes {
    static R: OnceLock<Recipes> = OnceLock::new();
    R.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let iswap = run_in(dir.path(), "iswap", &["calibrate", "--gate", "iswap", "--amp", "0.317"]);
        let cz02 = run_in(dir.path(), "cz02", &["calibrate", "--gate", "cz02", "--amp", "0.245"]);
        Recipes { iswap: iswap.join("recipe.json"), cz02: cz02.join("recipe.json"), _dir: dir }
    })
}

#[test]
fn resonance_map_matches_predictions_and_is_monotone() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), "map", &["resonance-map", "--amp-min", "0", "--amp-max", "0.35", "--amp-steps", "36"]);
    let (header, rows) = read_csv(&out.join("resonance_map.csv"));
    assert_eq!(header.len(), 1 + 3 * 2 * 2);
    assert_eq!(rows.len(), 36);
    let device = DeviceParams::paper();
    for row in &rows {
        let amp = row[0].unwrap();
        let mut col = 1;
        for t in Transition::ALL {
            for n in [1, 2] {
                match predict_resonance(&device, t, amp, n) {
                    Ok(p) => {
                        assert!((row[col].unwrap() - angular_to_mhz(p.omega_p_star)).abs() < 1e-5);
                        assert!((row[col + 1].unwrap() - angular_to_mhz(p.g_eff)).abs() < 1e-5);
                    }
                    // the cz02 line reaches zero frequency just below 0.35 Phi0
                    Err(_) => assert!(row[col].is_none() && row[col + 1].is_none()),
                }
                col += 2;
            }
        }
    }
    // omega_bar falls with amplitude, so every line moves down
    for col in (1..header.len()).step_by(2) {
        let line: Vec<f64> = rows.iter().map_while(|r| r[col]).collect();
        assert!(line.len() >= 30, "{} too short", header[col]);
        assert!(line.windows(2).all(|w| w[1] < w[0]), "{} not monotone", header[col]);
    }
}

#[test]
fn resonance_map_at_zero_amplitude() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), "zero", &["resonance-map", "--amps", "0"]);
    let (header, rows) = read_csv(&out.join("resonance_map.csv"));
    assert_eq!(rows.len(), 1);
    let get = |name: &str| rows[0][header.iter().position(|h| h == name).unwrap()].unwrap();
    // f_max - f_F = 642 MHz; the iswap line sits at half of it
    assert!((get("iswap_n1_f_p_MHz") - 321.0).abs() < 1e-9);
    assert!((get("cz20_n1_f_p_MHz") - 411.0).abs() < 1e-9);
    assert!((get("iswap_n2_f_p_MHz") - 160.5).abs() < 1e-9);
    assert_eq!(get("iswap_n1_g_eff_MHz"), 0.0);
}

#[test]
fn empty_grid_fails_without_output() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("empty");
    let r = paragate(&["resonance-map", "--amp-steps", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());
    assert!(!out.exists());
}

#[test]
fn unknown_gate_is_a_usage_error() {
    let r = paragate(&["calibrate", "--gate", "cnot", "--dry-run"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("cnot"));
}

#[test]
fn dry_run_prints_parameters_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("dry");
    let s = out.to_str().unwrap();
    let cases: [&[&str]; 4] = [
        &["resonance-map", "--amp-steps", "5"],
        &["chevron", "--gate", "cz02", "--amp", "0.245"],
        &["calibrate", "--gate", "cz20"],
        &["rb", "--inject", "0.05"],
    ];
    for args in cases {
        let mut full = args.to_vec();
        full.extend(["--dry-run", "--out", s]);
        let r = ok(&full);
        let v: Value = serde_json::from_slice(&r.stdout).expect("dry run prints JSON");
        assert_eq!(v["command"], args[0]);
        assert_eq!(v["device"]["g_MHz"], 6.3);
        assert!(!out.exists());
    }
}

#[test]
fn custom_device_file_is_used() {
    let tmp = TempDir::new().unwrap();
    let mut dev: Value = serde_json::from_str(paragate::device::PAPER_DEVICE_JSON).unwrap();
    dev["fixed"]["f_MHz"] = Value::from(4000.0);
    let path = tmp.path().join("device.json");
    fs::write(&path, dev.to_string()).unwrap();
    let out = run_in(tmp.path(), "map", &["resonance-map", "--amps", "0", "--device", path.to_str().unwrap()]);
    let (_, rows) = read_csv(&out.join("resonance_map.csv"));
    assert!((rows[0][1].unwrap() - 291.0).abs() < 1e-9);

    let missing = paragate(&["resonance-map", "--device", "/nonexistent/device.json", "--dry-run"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn one_cell_chevron_on_resonance_transfers() {
    let device = DeviceParams::paper();
    for (gate, t, amp) in [("iswap", Transition::Iswap, "0.317"), ("cz02", Transition::Cz02, "0.245")] {
        let p = predict_resonance(&device, t, amp.parse().unwrap(), 1).unwrap();
        let tau_ns = std::f64::consts::PI / (2.0 * p.g_eff.abs()) * 1e9;
        let tmp = TempDir::new().unwrap();
        let tau = format!("{tau_ns}");
        let out = run_in(
            tmp.path(),
            "cell",
            &[
                "chevron",
                "--gate",
                gate,
                "--amp",
                amp,
                "--f-steps",
                "1",
                "--t-steps",
                "1",
                "--t-max-ns",
                &tau,
                "--noiseless",
            ],
        );
        let (_, rows) = read_csv(&out.join("chevron.csv"));
        assert_eq!(rows.len(), 1);
        assert!(rows[0][2].unwrap() >= 0.95, "{gate}: transfer {}", rows[0][2].unwrap());
    }
}

#[test]
fn zero_amplitude_chevron_is_flat() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(
        tmp.path(),
        "flat",
        &[
            "chevron",
            "--gate",
            "iswap",
            "--amp",
            "0",
            "--f-steps",
            "5",
            "--t-steps",
            "6",
            "--t-max-ns",
            "300",
            "--noiseless",
        ],
    );
    let (_, rows) = read_csv(&out.join("chevron.csv"));
    assert_eq!(rows.len(), 30);
    // only the off-resonant static exchange, (2g / Delta)^2 ~ 1e-3, remains
    assert!(rows.iter().all(|r| r[2].unwrap() < 2e-3));
}

#[test]
fn chevron_is_centred_on_the_prediction() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(
        tmp.path(),
        "cz02",
        &[
            "chevron",
            "--gate",
            "cz02",
            "--amp",
            "0.245",
            "--f-span-mhz",
            "8",
            "--f-steps",
            "17",
            "--t-max-ns",
            "240",
            "--t-steps",
            "25",
            "--noiseless",
        ],
    );
    let side = read_json(&out.join("chevron.json"));
    let peak = side["max_transfer_f_p_MHz"].as_f64().unwrap();
    let predicted = side["predicted_f_p_MHz"].as_f64().unwrap();
    let width = side["predicted_g_eff_MHz"].as_f64().unwrap().abs();
    assert!((peak - predicted).abs() <= width, "peak {peak} vs {predicted}");
    assert_eq!(side["failures"].as_array().unwrap().len(), 0);
}

#[test]
fn calibrated_operating_points() {
    let r = recipes();
    let iswap = read_json(&r.iswap);
    let f_p = iswap["pulse"]["omega_p"].as_f64().unwrap() / (2.0 * std::f64::consts::PI) / 1e6;
    assert!((f_p - 122.0).abs() < 10.0, "iswap f_p {f_p}");
    let cz = read_json(&r.cz02);
    let g = cz["g_eff"].as_f64().unwrap().abs() / (2.0 * std::f64::consts::PI) / 1e6;
    assert!((g - 4.0).abs() < 0.8, "cz02 g_eff {g}");
    let summary = fs::read_to_string(r.cz02.with_file_name("summary.txt")).unwrap();
    assert!(summary.contains("f_p [MHz]") && summary.contains("g_eff/2pi [MHz]"));
}

#[test]
fn noiseless_qpt_of_calibrated_cz() {
    let tmp = TempDir::new().unwrap();
    let recipe = recipes().cz02.to_str().unwrap();
    let out =
        run_in(tmp.path(), "qpt", &["characterize", "--recipe", recipe, "--qpt", "--noiseless", "--shots", "10000"]);
    let report = read_json(&out.join("report.json"));
    let f = report["QPT fidelity"].as_f64().unwrap();
    assert!(f >= 0.99, "QPT fidelity {f}");
    assert!(report["IRB fidelity"].is_null());
    let (_, counts) = read_csv(&out.join("tomography_counts.csv"));
    assert_eq!(counts.len(), 16 * 9 * 4);
}

#[test]
fn noisy_characterization_is_self_consistent() {
    let tmp = TempDir::new().unwrap();
    let recipe = recipes().iswap.to_str().unwrap();
    let native = recipes().cz02.to_str().unwrap();
    let out =
        run_in(tmp.path(), "both", &["characterize", "--recipe", recipe, "--native-recipe", native, "--seed", "3"]);
    let report = read_json(&out.join("report.json"));
    let qpt = read_json(&out.join("qpt.json"));
    let truth = qpt["true_fidelity"].as_f64().unwrap();
    let irb = report["IRB fidelity"].as_f64().unwrap();
    let q = report["QPT fidelity"].as_f64().unwrap();
    assert!((irb - truth).abs() < 0.01, "IRB {irb} vs true {truth}");
    assert!((q - truth).abs() < 0.01, "QPT {q} vs true {truth}");
    assert!(report["unitarity bound"].as_f64().unwrap() >= q);
    assert!(report["interferometric bound"].as_f64().unwrap() >= q);
    assert!(report["notes"].as_array().unwrap().is_empty());
    for f in ["rb_reference.csv", "rb_interleaved.csv", "rb_fit.json", "tomography_counts.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn zero_shots_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let recipe = recipes().cz02.to_str().unwrap();
    let out = tmp.path().join("x");
    let r = paragate(&["characterize", "--recipe", recipe, "--qpt", "--shots", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    let r = paragate(&["rb", "--rb-shots", "0", "--dry-run"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn rb_recovers_injected_error() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), "rb", &["rb", "--gate", "cz02", "--inject", "0.05", "--seed", "11"]);
    let fit = read_json(&out.join("rb_fit.json"));
    let r = 1.0 - fit["irb_fidelity"].as_f64().unwrap();
    assert!((r - 0.05).abs() < 0.2 * 0.05, "recovered {r}");
    assert!((fit["clifford_fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn manifest_lists_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), "m", &["resonance-map", "--amp-steps", "3", "--seed", "42"]);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["tool"], "paragate");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["files"], serde_json::json!(["config.json", "resonance_map.csv"]));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let r = recipes();
    let (iswap, cz) = (r.iswap.to_str().unwrap(), r.cz02.to_str().unwrap());
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("map", vec!["resonance-map", "--amp-steps", "8"]),
        (
            "chevron",
            vec![
                "chevron",
                "--gate",
                "iswap",
                "--amp",
                "0.317",
                "--f-steps",
                "4",
                "--t-steps",
                "5",
                "--risetime-ns",
                "20",
            ],
        ),
        ("calibrate", vec!["calibrate", "--gate", "cz20"]),
        (
            "characterize",
            vec![
                "characterize",
                "--recipe",
                cz,
                "--native-recipe",
                iswap,
                "--shots",
                "500",
                "--sequences",
                "4",
                "--bootstrap",
                "20",
            ],
        ),
        ("rb", vec!["rb", "--inject", "0.02", "--sequences", "5", "--iswap-recipe", iswap, "--cz-recipe", cz]),
    ];
    for (name, args) in cases {
        let tmp = TempDir::new().unwrap();
        let mut runs = Vec::new();
        for workers in ["1", "4", "4"] {
            let mut full = args.clone();
            full.extend(["--seed", "1234", "--workers", workers]);
            runs.push(dir_contents(&run_in(tmp.path(), &format!("{name}-{}", runs.len()), &full)));
        }
        assert!(runs.iter().all(|r| r == &runs[0]), "{name}: outputs differ across worker counts");
    }
}
