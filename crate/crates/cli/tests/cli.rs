use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn defactor(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defactor"))
        .args(args)
        .arg("--set")
        .arg(format!("out_dir={}", dir.display()))
        .env_remove("DEFACTOR_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = defactor(&["frobnicate"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = defactor(&["ingest", "--set", "colour=red"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));

    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "seed = 1\nwidth = 3\n").unwrap();
    let o = defactor(&["ingest", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn bad_smiles_reports_line_and_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mols.smi");
    fs::write(&data, "CCO\nC1CC\nc1ccccc1\n").unwrap();
    let o = defactor(&["ingest", "--set", &format!("data_path={}", data.display())], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = defactor(&["train", "--set", "corpus_size=4"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pretrain"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = defactor(&["gradcheck"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
    let report = fs::read_to_string(dir.path().join("gradcheck.jsonl")).unwrap();
    assert!(report.lines().last().unwrap().contains("\"summary\":true"));
}

#[test]
fn seed_environment_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_defactor"))
        .args(["ingest", "--set", "corpus_size=3", "--set"])
        .arg(format!("out_dir={}", dir.path().display()))
        .env("DEFACTOR_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l == "seed = 42"), "{cfg}");
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.conf");
    fs::write(
        &cfg,
        "corpus_size = 8\nlatent_size = 8\nhidden = 12\nembed_dim = 12\ngcn_layers = 2\n\
         epochs_pretrain = 2\nepochs_e1 = 1\nepochs_e2 = 1\nepochs_e3 = 1\n\
         epochs_disc = 2\nepochs_cond = 1\nsweep_molecules = 2\nsweep_points = 4\nopt_molecules = 3\nopt_steps = 2\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    for step in ["ingest", "pretrain", "train", "train-cond", "reconstruct", "generate", "optimize"] {
        let o = defactor(&[step, "--config", c], dir.path());
        assert_eq!(code(&o), 0, "{step}: {}", stderr(&o));
    }
    for file in ["dataset.smi", "pretrain.ckpt", "model.ckpt", "cond.ckpt", "sweep.tsv", "train.jsonl", "reconstruct.jsonl"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let opt = fs::read_to_string(dir.path().join("optimize.jsonl")).unwrap();
    let lines: Vec<&str> = opt.lines().collect();
    assert_eq!(lines.len(), 3 * 4 + 1);
    assert!(lines.last().unwrap().contains("\"summary\":true"));
    assert!(fs::read_to_string(dir.path().join("sweep.tsv")).unwrap().starts_with("y_star\ty_achieved"));

    // training again resumes from the finished checkpoint and runs no epochs
    let o = defactor(&["train", "--config", c], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.path().join("train.jsonl")).unwrap().lines().count(), 1);
}
