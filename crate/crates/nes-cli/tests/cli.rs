use nes_cli::io::Table;
use nes_core::pricing::{bs_price, implied_vol};
use nes_core::{synthetic_quotes, MarketEnv, NesParams, NesPricer, OptionKind};
use std::path::Path;
use std::process::{Command, Output};

const MARKET: &str = r#"{"spot": 1.0, "r_f": 0.0005, "q_div": 0.013, "y0": 0.0}"#;

fn nes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nes")).args(args).env_remove("NES_SEED").output().unwrap()
}

fn stdout_table(o: &Output) -> Table {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    Table::from_csv(&String::from_utf8(o.stdout.clone()).unwrap()).unwrap()
}

fn golden_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden"))
}

#[test]
fn potential_matches_golden() {
    let params = golden_dir().join("symmetric_double_well.json");
    let o = nes(&["potential", "--params", params.to_str().unwrap(), "--grid", "-1:1:201"]);
    let got = stdout_table(&o);
    let want = Table::from_csv(&std::fs::read_to_string(golden_dir().join("symmetric_double_well_potential.csv")).unwrap()).unwrap();
    assert_eq!(got.header, want.header);
    assert_eq!(got.rows.len(), want.rows.len());
    for (a, b) in got.rows.iter().zip(&want.rows) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-3), "{x} vs {y}");
        }
    }
}

#[test]
fn csv_output_round_trips() {
    let o = nes(&["kramers", "--params", r#"{"mu": 0.2, "sigma1": 0.2, "sigma2": 0.2, "a": 0.2, "h": 0.1, "T": 1.0}"#,
        "--y0-grid", "-0.15:0.6:16", "--threshold", "-0.2"]);
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let t = stdout_table(&o);
    assert_eq!(t.to_csv(), text);
    // the escape rate falls as y0 moves deeper into the right well
    assert!(t.rows.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn single_component_price_is_black_scholes() {
    let params = r#"{"mu1": 0.05, "mu2": -0.05, "sigma1": 0.3, "sigma2": 0.5, "a": 0.0, "h": 0.2, "T": 0.75}"#;
    let o = nes(&["price", "--params", params, "--market", MARKET, "--strikes", "0.8,1,1.25", "--T", "0.75", "--kind", "call"]);
    let t = stdout_table(&o);
    let m = MarketEnv { spot: 1.0, r_f: 0.0005, q_div: 0.013 };
    let p = NesParams::new(0.05, -0.05, 0.3, 0.5, 0.0, 0.2, 0.75).unwrap();
    let q0 = NesPricer::new(&p, &m).unwrap().dividends.q[0];
    let vol = (0.5f64 * 0.3 * 0.3).sqrt();
    for row in &t.rows {
        assert_eq!(row[1], bs_price(1.0, row[0], 0.75, vol, m.r_f, q0, OptionKind::Call));
        // implied vols are quoted against the market dividend yield, not q0
        assert_eq!(row[2], implied_vol(row[1], 1.0, row[0], 0.75, m.r_f, m.q_div, OptionKind::Call).unwrap());
    }
}

#[test]
fn calibrate_round_trip_from_priced_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (mu, s1, s2, a, h, t) = (0.092, 0.09, 0.461, 0.505, 0.159, 28.0 / 365.0);
    let truth = NesParams::symmetric(mu, s1, s2, a, h, t).unwrap();
    let m = MarketEnv { spot: 1.0, r_f: 0.0005, q_div: 0.013 };
    // strikes at |delta| 0.02..0.5, priced through the CLI
    let strikes: Vec<String> =
        synthetic_quotes(&truth, &m, OptionKind::Put, 10, 0.02, 0.5).unwrap().iter().map(|q| format!("{:.16e}", q.strike)).collect();
    let params = format!(r#"{{"mu": {mu}, "sigma1": {s1}, "sigma2": {s2}, "a": {a}, "h": {h}, "T": {t}}}"#);
    let t_arg = format!("{t:.16e}");
    let priced = stdout_table(&nes(&["price", "--params", &params, "--market", MARKET, "--strikes", &strikes.join(","), "--T", &t_arg, "--kind", "put"]));
    let mut fixture = String::from("expiry_T,strike,kind,mid,implied_vol\n");
    for r in &priced.rows {
        fixture.push_str(&format!("{t_arg},{:.16e},put,{:.16e},{:.16e}\n", r[0], r[1], r[2]));
    }
    let quotes = dir.path().join("quotes.csv");
    std::fs::write(&quotes, fixture).unwrap();
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_nes"))
        .args(["calibrate", "--quotes", quotes.to_str().unwrap(), "--market", MARKET, "--kind", "put", "--out-dir", out.to_str().unwrap()])
        .env("NES_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    let p: NesParams = serde_json::from_value(res["result"]["params"].clone()).unwrap();
    for (x, y) in [(p.mu1, mu), (p.sigma1, s1), (p.sigma2, s2), (p.a, a), (p.h, h)] {
        assert!((x - y).abs() < 1e-3, "{p:?}");
    }
    assert!(res["result"]["mape"].as_f64().unwrap() < 1e-6);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["command"], "calibrate");
    let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(listed, ["calibration.json", "implied_potential.csv"]);
    for f in listed {
        assert!(out.join(f).exists());
    }
}

#[test]
fn simulate_is_deterministic_and_seed_overridable() {
    let params = r#"{"mu": 0.3, "sigma1": 0.2, "sigma2": 0.2, "a": 0.3, "h": 0.1, "T": 1.0}"#;
    let sim = r#"{"dt": 0.05, "n_paths": 200, "horizon": 5.0, "seed": 9, "y0": 0.3}"#;
    let a = nes(&["simulate", "--params", params, "--sim", sim]);
    let b = nes(&["--threads", "1", "simulate", "--params", params, "--sim", sim]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout_table(&a).rows.len(), 200);
    let c = Command::new(env!("CARGO_BIN_EXE_nes")).args(["simulate", "--params", params, "--sim", sim]).env("NES_SEED", "10").output().unwrap();
    assert!(c.status.success());
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn every_subcommand_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let params = r#"{"mu": 0.4, "sigma1": 0.2, "sigma2": 0.3, "a": 0.3, "h": 0.1, "T": 1.0}"#;
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("potential", vec!["--params", params, "--grid", "-1:1:11"]),
        ("kramers", vec!["--params", params, "--y0-grid", "0.1:0.5:5"]),
        ("susy", vec!["--params", params, "--grid", "-1:1:11"]),
        ("density", vec!["--params", params, "--measure", "real", "--y0", "-0.1", "--grid", "-1:1:11"]),
        ("density", vec!["--params", params, "--measure", "rn", "--market", MARKET, "--grid", "-1:1:11"]),
        ("price", vec!["--params", params, "--market", MARKET, "--strikes", "0.9,1.1", "--T", "0.5", "--kind", "call"]),
        ("simulate", vec!["--params", params, "--sim", r#"{"dt": 0.1, "n_paths": 10, "horizon": 1.0, "seed": 1, "y0": 0.0}"#]),
    ];
    for (i, (cmd, args)) in runs.into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let mut all = vec!["--out-dir", out.to_str().unwrap(), cmd];
        all.extend(args);
        let o = nes(&all);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["command"], cmd);
        let outputs = manifest["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty());
        let mut on_disk: Vec<String> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "manifest.json")
            .collect();
        on_disk.sort();
        let mut listed: Vec<String> = outputs.iter().map(|v| v.as_str().unwrap().to_string()).collect();
        listed.sort();
        assert_eq!(on_disk, listed);
    }
}

#[test]
fn exit_codes() {
    let usage = nes(&["price", "--params", "{}"]);
    assert_eq!(usage.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&usage.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    let bad = nes(&["potential", "--params", r#"{"mu": 0.4, "sigma1": -1, "sigma2": 0.3, "a": 0.3, "h": 0.1, "T": 1}"#, "--grid", "0:1:3"]);
    assert_eq!(bad.status.code(), Some(3));

    // a single well has no default absorbing point
    let single = nes(&["kramers", "--params", r#"{"mu": 0.05, "sigma1": 0.2, "sigma2": 0.2, "a": 0.5, "h": 0.1, "T": 1}"#, "--y0-grid", "0:0.2:3"]);
    assert_eq!(single.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&single.stderr).unwrap();
    assert_eq!(err["error"], "invalid_input");

    assert_eq!(nes(&["--help"]).status.code(), Some(0));
}
