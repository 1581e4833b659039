use std::fs;
use std::process::{Command, Output};

fn cspt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cspt"))
        .args(args)
        .env_remove("CSPT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn indices_of_catalog_states() {
    for (name, row) in [
        ("psi0", "-1 -1 -1 -1"),
        ("psix", "-1 +1 -1 +1"),
        ("psiy", "-1 +1 +1 +1"),
        ("psiz", "-1 +1 +1 -1"),
    ] {
        let o = cspt(&["indices", name]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).lines().any(|l| l == row), "{name}: {}", stdout(&o));
    }
}

#[test]
fn indices_json_parses() {
    let o = cspt(&["indices", "psi0", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["omega"]["sign"], -1);
}

#[test]
fn missing_inputs_are_usage_errors() {
    assert_eq!(cspt(&["sweep", "--config", "missing.file"]).status.code(), Some(2));
    assert_eq!(cspt(&["plot", "--input", "missing.csv"]).status.code(), Some(2));
    assert_eq!(cspt(&["indices", "no-such-state"]).status.code(), Some(2));
    assert_eq!(cspt(&["ed", "--n", "4", "--lambda", "0"]).status.code(), Some(2));
    assert_eq!(cspt(&["parent", "--lambda", "0", "--u", "0", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        cspt(&["evolve", "--lambda", "0", "--u", "0", "--trotter", "fourth"]).status.code(),
        Some(2)
    );
}

#[test]
fn help_succeeds_for_every_subcommand() {
    for sub in ["indices", "parent", "ed", "evolve", "sweep", "plot"] {
        let o = cspt(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn computation_errors_exit_one() {
    let o = cspt(&["ed", "--n", "12", "--lambda", "0", "--u", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ed_zero_mode_on_six_sites() {
    let o = cspt(&["ed", "--n", "6", "--lambda", "0", "--u", "0", "--pbc"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("E0 =")).unwrap();
    let re: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(re.abs() < 1e-9, "{out}");
}

#[test]
fn parent_dump_is_json() {
    let o = cspt(&["parent", "--lambda", "0.5", "--u", "0.2", "--dump"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[test]
fn evolve_saves_states_that_indices_reads() {
    let dir = tempfile::tempdir().unwrap();
    let right = dir.path().join("right.mps");
    let res = dir.path().join("res.csv");
    let o = cspt(&[
        "evolve",
        "--lambda",
        "0",
        "--u",
        "0",
        "--init",
        "psi0",
        "--bond-dim",
        "4",
        "--save-right",
        right.to_str().unwrap(),
        "--residuals",
        res.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("label = Haldane"));
    assert!(fs::read_to_string(&res).unwrap().starts_with("step,e_left,e_right"));
    let o = cspt(&["indices", right.to_str().unwrap()]);
    assert!(stdout(&o).lines().any(|l| l == "-1 -1 -1 -1"));
}

#[test]
fn sweep_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        format!(
            "parallelism = 1\n[grid]\nlambda = [0.0]\nu = [0.0]\n\
             [evolution]\nbond_dim = 4\ninit = \"psi0\"\n\
             [output]\ndir = \"{}\"\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let o = cspt(&["sweep", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("out/phase.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with("Haldane"));
    assert!(dir.path().join("out/phase.svg").is_file());

    let plots = dir.path().join("plots");
    let o = cspt(&["plot", "--input", csv.to_str().unwrap(), "--output", plots.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let svg = fs::read_to_string(plots.join("phase.svg")).unwrap();
    assert!(svg.contains("#666666"));
}

#[test]
fn output_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        "[grid]\nlambda = [0.0]\nu = [0.0]\n[evolution]\nbond_dim = 4\ninit = \"psi0\"\n\
         [output]\ndir = \"/nonexistent/never\"\nemit_svg = false\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cspt"))
        .args(["sweep", "--config", config.to_str().unwrap()])
        .env("CSPT_OUTPUT_DIR", dir.path().join("env"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("env/phase.json").is_file());
    assert!(!dir.path().join("env/phase.svg").exists());
}
