use std::path::Path;
use std::process::{Command, Output};

fn tpqi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpqi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// `value` column of the row whose delay is `tau_ns`.
fn value_at(table: &str, tau_ns: &str) -> f64 {
    table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .find_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0] == tau_ns).then(|| f[1].parse().unwrap())
        })
        .expect("row present")
}

#[test]
fn throughput_prints_budget() {
    let o = tpqi(&["throughput", "--rate", "1e7", "--collect", "0.5", "--detect", "0.1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "25000");
}

#[test]
fn simulate_distinguishable_scenario_gives_half() {
    let o = tpqi(&["simulate", "fig2b.scenario"]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.contains("# scenario_hash = "));
    assert!(table.contains("# seed = 42"));
    let g0 = value_at(&table, "0");
    assert!((0.45..=0.55).contains(&g0), "{g0}");
}

#[test]
fn simulate_resonant_dip_is_deeper() {
    let a = value_at(&stdout(&tpqi(&["simulate", "fig2a"])), "0");
    let b = value_at(&stdout(&tpqi(&["simulate", "fig2b"])), "0");
    assert!(a < b - 0.1, "{a} vs {b}");
}

#[test]
fn monte_carlo_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, seed: &str| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let phts = dir.path().join(format!("{tag}.phts"));
        let o = tpqi(&[
            "mc",
            "fig2c",
            "--seed",
            seed,
            "--duration",
            "0.2 s",
            "--quiet",
            "--out",
            csv.to_str().unwrap(),
            "--timestamps",
            phts.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(csv).unwrap(), std::fs::read(phts).unwrap())
    };
    let first = run("a", "42");
    let second = run("b", "42");
    assert_eq!(first, second);
    let other = run("c", "43");
    assert_ne!(first.1, other.1);
    let text = String::from_utf8(first.0).unwrap();
    assert!(text.contains("# seed = 42"));
}

#[test]
fn histogram_of_written_timestamps_reproduces_mc_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mc.csv");
    let phts = dir.path().join("mc.phts");
    let again = dir.path().join("again.csv");
    let o = tpqi(&[
        "mc", "fig2d", "--duration", "0.2 s", "--quiet", "--out", csv.to_str().unwrap(), "--timestamps",
        phts.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = tpqi(&["histogram", phts.to_str().unwrap(), "--scenario", "fig2d", "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(csv).unwrap(), std::fs::read(again).unwrap());
}

#[test]
fn fit_recovers_beat_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let o = tpqi(&["mc", "fig2d", "--duration", "20 s", "--quiet", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let o = tpqi(&["fit", csv.to_str().unwrap(), "--scenario", "fig2d"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("# converged = true"));
    let detuning: f64 = report
        .lines()
        .find(|l| l.starts_with("detuning,free,"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    let truth = std::f64::consts::TAU * 300e6;
    assert!((detuning / truth - 1.0).abs() < 0.05, "{detuning}");
}

#[test]
fn figures_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let o = tpqi(&["figures", "--quiet", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = ["fig1d.csv", "fig2a_eta0.5.csv", "fig2d_eta1.csv", "fig3a.csv", "fig3b_300mhz.csv", "fig3c.csv"];
    for name in names {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        assert!(String::from_utf8(x).unwrap().contains("# scenario_hash = "));
    }
}

#[test]
fn exit_codes() {
    assert_eq!(tpqi(&["simulate"]).status.code(), Some(1));
    assert_eq!(tpqi(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(tpqi(&["--help"]).status.code(), Some(0));
    assert_eq!(tpqi(&["simulate", "missing.scenario"]).status.code(), Some(2));
    assert_eq!(
        tpqi(&["throughput", "--rate", "1e7", "--collect", "1.5", "--detect", "0.1"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    std::fs::write(
        &bad,
        "[emitter_1]\nlinewidth = \"1 MHz\"\nlifetime = \"9.5 ns\"\nsignal_rate = \"1e5 /s\"\nbackground_rate = \"0 /s\"\n",
    )
    .unwrap();
    let o = tpqi(&["simulate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let flat = dir.path().join("flat.csv");
    let mut table = String::from("# normalization = plateau_normalized\n# bin_width_ns = 0.1\ntau_ns,value,sigma\n");
    for k in -300..=300 {
        table.push_str(&format!("{},1,0.01\n", k as f64 / 10.0));
    }
    std::fs::write(&flat, table).unwrap();
    let o = tpqi(&["fit", flat.to_str().unwrap(), "--scenario", "fig2a", "--free", "colour"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(Path::new(&flat).exists());
}

#[test]
fn scenario_parse_errors_name_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.scenario");
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/fig2a.scenario"))
        .unwrap()
        .replace("irf_fwhm = \"800 ps\"", "irf_fwhm = 800");
    std::fs::write(&path, &text).unwrap();
    let o = tpqi(&["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = text.lines().position(|l| l.starts_with("irf_fwhm")).unwrap() + 1;
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!(":{line}: scenario.irf_fwhm")), "{err}");
}
