use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crupl::cli::output::{read_decisions, Manifest};
use crupl::cli::{cmd_eval, cmd_label, cmd_run, cmd_synth, exit_code, EvalArgs, LabelArgs, RunArgs, SynthArgs};
use crupl::data::{load_csv, synth_generate, write_csv, CsvSchema, SynthConfig};
use crupl::metrics::MetricsReport;
use crupl::Error;

fn synth_args(out_dir: &Path, per_class: usize, seed: u64) -> SynthArgs {
    SynthArgs {
        config: None,
        seed: Some(seed),
        out_dir: out_dir.to_path_buf(),
        classes: None,
        per_class: Some(per_class),
        channels: None,
        length: None,
        margin: None,
        name: "synth".into(),
    }
}

/// Synthesizes a small dataset and a fast run config next to it.
fn prepare(dir: &Path) -> PathBuf {
    cmd_synth(&synth_args(dir, 40, 5)).unwrap();
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "seed = 5\n[data]\npath = \"synth.csv\"\n[split]\nlabeled_fraction = 0.1\n[model]\nepochs = 12\n[curriculum]\nfinetune_epochs = 3\n",
    )
    .unwrap();
    cfg
}

fn run(cfg: &Path, out: &Path, cap: Option<usize>) {
    cmd_run(&RunArgs {
        config: cfg.to_path_buf(),
        seed: None,
        out_dir: out.to_path_buf(),
        curriculum_cap: cap,
    })
    .unwrap();
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn synth_writes_identical_files_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_synth(&synth_args(a.path(), 200, 1)).unwrap();
    cmd_synth(&synth_args(b.path(), 200, 1)).unwrap();
    for f in ["synth.csv", "synth.schema.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(data_lines(&a.path().join("synth.csv")).len(), 1401);
    let schema = CsvSchema::load(&a.path().join("synth.schema.toml")).unwrap();
    let ds = load_csv(&a.path().join("synth.csv"), &schema).unwrap();
    let direct = synth_generate(&SynthConfig {
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(ds.ids(), direct.ids());
    assert_eq!(ds.labels(), direct.labels());
    assert_eq!(ds.x(), direct.x());
}

#[test]
fn missing_required_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\npath = \"x.csv\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_crupl"))
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed"), "{stderr}");
}

#[test]
fn missing_data_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n[data]\npath = \"absent.csv\"\nschema = \"absent.schema.toml\"\n").unwrap();
    let err = cmd_run(&RunArgs {
        config: cfg,
        seed: None,
        out_dir: dir.path().join("out"),
        curriculum_cap: None,
    })
    .unwrap_err();
    assert_eq!(exit_code(&err), 1, "{err}");
}

#[test]
fn run_label_and_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let out = dir.path().join("out");
    run(&cfg, &out, None);

    let manifest = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.curriculum.len(), 5);
    assert_eq!(manifest.data.mode, "evaluation");
    let hash_line = format!("# config_hash: {}", manifest.config_hash);
    for f in ["pseudo_labels.csv", "hidden_truth.csv", "metrics.csv", "unlabeled.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(text.lines().next(), Some(hash_line.as_str()), "{f}");
    }

    // the stored pool relabeled from the checkpoint gives the same decisions
    let relabeled = dir.path().join("relabeled.csv");
    cmd_label(&LabelArgs {
        run_dir: out.clone(),
        input: out.join("unlabeled.csv"),
        schema: None,
        output: Some(relabeled.clone()),
    })
    .unwrap();
    let a = read_decisions(&out.join("pseudo_labels.csv")).unwrap();
    let b = read_decisions(&relabeled).unwrap();
    assert_eq!(a.ids, b.ids);
    assert_eq!(a.decisions, b.decisions);

    // eval of the run's own files reproduces the run's metrics
    let ev = dir.path().join("eval");
    cmd_eval(&EvalArgs {
        decisions: out.join("pseudo_labels.csv"),
        truth: out.join("hidden_truth.csv"),
        out_dir: ev.clone(),
        micro: false,
    })
    .unwrap();
    let from_run: MetricsReport = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let from_eval: MetricsReport = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(from_run, from_eval);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(ev.join("metrics.csv")).unwrap());
}

#[test]
fn zero_cap_is_warmup_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let out = dir.path().join("out");
    run(&cfg, &out, Some(0));
    let manifest = Manifest::load(&out.join("manifest.json")).unwrap();
    assert!(manifest.curriculum.is_empty());
    assert_eq!(manifest.config.curriculum.max_iterations, 0);
    assert!(data_lines(&out.join("pseudo_labels.csv"))
        .iter()
        .skip(1)
        .all(|l| l.ends_with(',')));

    // the same cap written in the file gives the same hash and outputs
    let cfg2 = prepare(&dir.path().join("b"));
    let text = fs::read_to_string(&cfg2).unwrap().replace("finetune_epochs = 3\n", "finetune_epochs = 3\nmax_iterations = 0\n");
    fs::write(&cfg2, text).unwrap();
    let out2 = dir.path().join("out2");
    run(&cfg2, &out2, None);
    assert_eq!(
        fs::read(out.join("pseudo_labels.csv")).unwrap(),
        fs::read(out2.join("pseudo_labels.csv")).unwrap()
    );
}

#[test]
fn label_of_empty_input_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepare(dir.path());
    let out = dir.path().join("out");
    run(&cfg, &out, Some(1));
    let schema = CsvSchema::load(&dir.path().join("synth.schema.toml")).unwrap();
    let ds = load_csv(&dir.path().join("synth.csv"), &schema).unwrap();
    let empty = dir.path().join("empty.csv");
    write_csv(&ds.subset(&[]), &empty, &[]).unwrap();
    let labels = dir.path().join("labels.csv");
    cmd_label(&LabelArgs {
        run_dir: out,
        input: empty,
        schema: None,
        output: Some(labels.clone()),
    })
    .unwrap();
    let lines = data_lines(&labels);
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("sample_id,p_normal,"));
}

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

#[test]
fn eval_of_perfect_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let decisions = write(
        &dir.path().join("d.csv"),
        "# config_hash: abc\nsample_id,p_a,p_b,decision,confidence,first_selected\nx,0.9,0.1,a,0.9,\ny,0.2,0.8,b,0.8,1\nz,0.3,0.7,b,0.7,\n",
    );
    let truth = write(&dir.path().join("t.csv"), "sample_id,label\nz,b\nx,a\ny,b\nw,a\n");
    let ev = dir.path().join("ev");
    cmd_eval(&EvalArgs {
        decisions,
        truth,
        out_dir: ev.clone(),
        micro: true,
    })
    .unwrap();
    assert_eq!(
        fs::read_to_string(ev.join("metrics.csv")).unwrap(),
        "# config_hash: abc\nPrecision,Recall,TPR,FPR,F1-score,Accuracy\n1,1,1,0,1,1\n"
    );
}

#[test]
fn eval_with_disjoint_ids_is_a_join_error() {
    let dir = tempfile::tempdir().unwrap();
    let decisions = write(
        &dir.path().join("d.csv"),
        "sample_id,p_a,p_b,decision,confidence,first_selected\nx,0.9,0.1,a,0.9,\n",
    );
    let truth = write(&dir.path().join("t.csv"), "sample_id,label\nq,a\n");
    let err = cmd_eval(&EvalArgs {
        decisions,
        truth,
        out_dir: dir.path().join("ev"),
        micro: false,
    })
    .unwrap_err();
    assert!(matches!(err, Error::Join(_)), "{err}");
    assert_eq!(exit_code(&err), 3);
}

#[test]
fn eval_rejects_unknown_truth_class() {
    let dir = tempfile::tempdir().unwrap();
    let decisions = write(
        &dir.path().join("d.csv"),
        "sample_id,p_a,p_b,decision,confidence,first_selected\nx,0.9,0.1,a,0.9,\n",
    );
    let truth = write(&dir.path().join("t.csv"), "sample_id,label\nx,c\n");
    let err = cmd_eval(&EvalArgs {
        decisions,
        truth,
        out_dir: dir.path().join("ev"),
        micro: false,
    })
    .unwrap_err();
    assert!(matches!(err, Error::Schema(_)), "{err}");
}
