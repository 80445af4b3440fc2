use std::path::Path;
use std::process::Command;

fn nsda(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nsda")).args(args).output().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL_RATES: &str = r#"
scenario = "rate_fast"
seed = 3

[model]
k_max = 3
generation_k_max = 4
dt = 5e-3

[design]
time_groups = 2

[chain]
n_steps = 40
burn_in = 10

[rates]
replications = 1
prediction_times = [0.2, 0.8]
"#;

#[test]
fn solve_taylor_green_matches_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tg.toml");
    write(
        &cfg,
        "scenario = \"solve\"\n[truth]\nkind = \"taylor_green\"\n[model]\nnu = 0.5\nk_max = 8\nforcing = []\n[solve]\ntimes = [0.5, 1.0]\n",
    );
    let out = dir.path().join("out");
    let o = nsda(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let times = m["results"]["times"].as_array().unwrap();
    let energy = m["results"]["energy"].as_array().unwrap();
    let e0 = energy[0].as_f64().unwrap();
    for (t, e) in times.iter().zip(energy) {
        let want = (-4.0 * 0.5 * t.as_f64().unwrap()).exp() * e0;
        assert!((e.as_f64().unwrap() - want).abs() <= 1e-6 * want);
    }
    assert!(m["config_hash"].as_str().unwrap().len() == 64);
    assert!(out.join("trajectory/state_0002.nsf").exists());
}

#[test]
fn rates_grid_override_gives_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("r.toml");
    write(&cfg, SMALL_RATES);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = nsda(&[
            "rates",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            "250,1000,4000",
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
        out
    };
    let a = run("a");
    let table = std::fs::read_to_string(a.join("rate_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(a.join("rate_plot.svg").exists());
    let b = run("b");
    let strip = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a.join("rate_cells.csv")), strip(&b.join("rate_cells.csv")));
    let resolved = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(resolved.contains("n_grid = [250, 1000, 4000]"));
}

#[test]
fn stability_heat_planted_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = nsda(&["stability", "--scenario", "heat-planted", "--j", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("heat_planted_j4: pass"), "{text}");
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("check pointwise : pass"));
    assert!(out.join("heat_planted_j4_log_stability.csv").exists());
}

#[test]
fn minimax_and_sample_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    write(&cfg, "scenario = \"minimax\"\n[minimax]\nn = 200\nreplications = 5\n");
    let o = nsda(&["minimax", "--config", cfg.to_str().unwrap(), "--j", "1", "--out", dir.path().join("m").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("j = 1"));

    let cfg = dir.path().join("s.toml");
    write(&cfg, &SMALL_RATES.replace("rate_fast", "sample"));
    let synth = dir.path().join("syn");
    let o = nsda(&["synthesize", "--config", cfg.to_str().unwrap(), "--grid", "30", "--out", synth.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = synth.join("observations.csv");
    let o = nsda(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("chain").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("chain/chain/posterior_mean.nsf").exists());
}

#[test]
fn bad_input_exits_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(&cfg, "scenario = \"rate_fast\"\n\n[chain]\nn_steps = \"many\"\n");
    let o = nsda(&["rates", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4") && err.contains("n_steps"), "{err}");

    let o = nsda(&["solve", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));

    write(&cfg, "scenario = \"solve\"\n[model]\nk_max = 4\ngeneration_k_max = 2\n");
    let o = nsda(&["solve", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.generation_k_max"));

    let o = nsda(&["sample", "--data", dir.path().join("nope.csv").to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn divergent_solve_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    write(
        &cfg,
        "scenario = \"solve\"\n[truth]\nkind = \"taylor_green\"\namplitude = 1e12\n[model]\nk_max = 4\nforcing = []\n",
    );
    let o = nsda(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("diverge"));
}
