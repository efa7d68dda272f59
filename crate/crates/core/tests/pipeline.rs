mod common;

use std::path::Path;
use std::process::Command;

use ictdst::corpus::{Fraction, SplitMode};
use ictdst::evaluation::{EvalReport, SelectionAnalysis};
use ictdst::generation::{RetrievalLog, TurnState};
use ictdst::io::{read_json, read_jsonl};
use ictdst::pipeline::{run_experiment, seed_dir, Manifest, RunConfig};
use ictdst::prompting::PromptInstance;
use ictdst::retriever::Strategy;
use ictdst::{Error, ErrorKind};

const DOMAINS: [&str; 3] = ["hotel", "taxi", "train"];

fn config(files: &common::Files, out: &str) -> RunConfig {
    let mut c = RunConfig::new(files.corpus.clone(), files.ontology.clone(), files.dir.path().join(out));
    c.split = SplitMode::ZeroShot;
    c.target_domain = Some("hotel".into());
    c
}

fn fixture() -> common::Files {
    common::write_files(&common::corpus(&DOMAINS, 40, 4, 5), &common::ontology(&DOMAINS))
}

#[test]
fn zero_shot_run_writes_every_artifact() {
    let files = fixture();
    let mut c = config(&files, "out");
    c.seeds = vec![1, 2];
    let outcome = run_experiment(&c).unwrap();
    assert_eq!(outcome.report.jga, 1.0);
    assert_eq!(outcome.report.seed_runs, vec![1.0, 1.0]);
    assert_eq!(outcome.report.std, 0.0);
    for seed in [1, 2] {
        let dir = seed_dir(&c.output, seed);
        for f in [
            "split.json",
            "bank.jsonl",
            "index.bin",
            "index.ids.jsonl",
            "train_pairs.jsonl",
            "predictions.jsonl",
            "retrievals.jsonl",
            "report.json",
            "selection_domain.json",
            "selection_domain.csv",
            "selection_slot.json",
            "selection_slot.csv",
        ] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let pairs: Vec<PromptInstance> = read_jsonl(&dir.join("train_pairs.jsonl")).unwrap();
        assert!(pairs.iter().flat_map(|p| &p.meta.retrieved).all(|id| !id.contains("#hotel-")));
        assert!(pairs
            .iter()
            .filter(|p| p.meta.slot.domain() == "hotel")
            .all(|p| p.target == "none"));
        let logs: Vec<RetrievalLog> = read_jsonl(&dir.join("retrievals.jsonl")).unwrap();
        assert!(logs.iter().all(|l| l.slot.domain() == "hotel"));
    }
    let manifest: Manifest = read_json(&c.output.join("manifest.json")).unwrap();
    assert_eq!(manifest.config, c);
    assert_eq!(manifest.inputs.len(), 2);
    assert!(manifest.artifacts.contains_key("seed-1/predictions.jsonl"));
    assert!(manifest.artifacts.contains_key("report.json"));
}

#[test]
fn k_only_changes_prompts() {
    let files = fixture();
    let mut reports = Vec::new();
    let mut pairs = Vec::new();
    for (k, out) in [(0, "k0"), (3, "k3")] {
        let mut c = config(&files, out);
        c.k = k;
        c.oracle_accuracy = 0.7;
        c.retriever = Strategy::Bm25;
        run_experiment(&c).unwrap();
        let dir = seed_dir(&c.output, 0);
        reports.push(common::read(&dir.join("report.json")));
        let p: Vec<PromptInstance> = read_jsonl(&dir.join("train_pairs.jsonl")).unwrap();
        pairs.push(p);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(pairs[0].len(), pairs[1].len());
    assert!(pairs[0].iter().all(|p| p.meta.retrieved.is_empty()));
    assert!(pairs[1].iter().any(|p| p.meta.retrieved.len() == 3));
    assert_ne!(pairs[0], pairs[1]);
}

#[test]
fn imperfect_oracle_scores_below_one() {
    let files = fixture();
    let mut c = config(&files, "out");
    c.split = SplitMode::MultiDomainFewShot;
    c.target_domain = None;
    c.fraction = Fraction::new(1, 2).unwrap();
    c.oracle_accuracy = 0.5;
    let report = run_experiment(&c).unwrap().report;
    assert!(report.jga < 1.0);
    let preds: Vec<TurnState> = read_jsonl(&seed_dir(&c.output, 0).join("predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), report.turn_count);
}

#[test]
fn stage_errors_name_the_stage() {
    let files = fixture();
    let mut c = config(&files, "out");
    c.target_domain = Some("restaurant".into());
    match run_experiment(&c).unwrap_err() {
        Error::Stage { stage, .. } => assert_eq!(stage, "split"),
        other => panic!("unexpected {other}"),
    }
    c.corpus = files.dir.path().join("missing.json");
    let err = run_experiment(&c).unwrap_err();
    assert!(err.to_string().contains("missing.json"), "{err}");
    assert_eq!(err.kind(), ErrorKind::Data);
}

fn ictdst(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ictdst"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: std::process::Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stages_chain_through_the_cli() {
    let files = fixture();
    let d = files.dir.path();
    let ont = ["--ontology", "ontology.json"];
    let run = |args: &[&[&str]]| ok(ictdst(&args.concat(), d));
    run(&[&["ingest", "--corpus", "corpus.json"], &ont]);
    run(&[
        &["split", "--corpus", "corpus.json", "--mode", "zero-shot", "--target-domain", "hotel", "--out", "split"],
        &ont,
    ]);
    run(&[&["bank", "--train", "split/train.json", "--out", "bank.jsonl"], &ont]);
    run(&[&["index", "--bank", "bank.jsonl", "--out", "index.bin"]]);
    let retrieval = ["--bank", "bank.jsonl", "--index", "index.bin", "--k", "3"];
    run(&[&["export-train", "--train", "split/train.json", "--out", "pairs.jsonl"], &ont, &retrieval]);
    run(&[
        &["predict", "--dialogues", "split/heldout.json", "--domain-filter", "hotel", "--exclude-domain", "hotel"],
        &["--out", "preds.jsonl", "--log", "log.jsonl"],
        &ont,
        &retrieval,
    ]);
    let stdout = run(&[
        &["eval", "--predictions", "preds.jsonl", "--dialogues", "split/heldout.json", "--slot-scope", "hotel"],
        &["--out", "report.json"],
        &ont,
    ]);
    let report: EvalReport = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report.jga, 1.0);
    run(&[&["analyze", "--log", "log.jsonl", "--out", "analysis"]]);
    let analysis: SelectionAnalysis = read_json(&d.join("analysis/selection_domain.json")).unwrap();
    assert!(analysis.matrix.diagonal().all(|c| c == 0));
    assert!(analysis.matrix.total() > 0);
    let csv = String::from_utf8(common::read(&d.join("analysis/selection_domain.csv"))).unwrap();
    assert_eq!(csv, analysis.matrix.to_csv().unwrap());

    // The staged artifacts equal the composite run's.
    run(&[
        &["run", "--corpus", "corpus.json", "--split", "zero_shot", "--target-domain", "hotel", "--output", "run"],
        &ont,
    ]);
    for (staged, composite) in [
        ("bank.jsonl", "bank.jsonl"),
        ("index.bin", "index.bin"),
        ("pairs.jsonl", "train_pairs.jsonl"),
        ("preds.jsonl", "predictions.jsonl"),
        ("log.jsonl", "retrievals.jsonl"),
    ] {
        assert_eq!(
            common::read(&d.join(staged)),
            common::read(&d.join("run/seed-0").join(composite)),
            "{staged}"
        );
    }
}

#[test]
fn run_reads_a_config_file_and_flags_win() {
    let files = fixture();
    let d = files.dir.path();
    std::fs::write(
        d.join("run.toml"),
        "corpus = \"corpus.json\"\nontology = \"ontology.json\"\noutput = \"cfg-out\"\nsplit = \"zero_shot\"\n\
         target_domain = \"hotel\"\nretriever = \"bm25\"\nk = 2\nseeds = [3, 4]\n",
    )
    .unwrap();
    let stdout = ok(ictdst(&["run", "--config", "run.toml", "--k", "1"], d));
    assert!(stdout.contains("seed 3") && stdout.contains("seed 4"), "{stdout}");
    let manifest: Manifest = read_json(&d.join("cfg-out/manifest.json")).unwrap();
    assert_eq!(manifest.config.k, 1);
    assert_eq!(manifest.config.retriever, Strategy::Bm25);
}

#[test]
fn exit_codes() {
    let files = fixture();
    let d = files.dir.path();
    let code = |args: &[&str]| ictdst(args, d).status.code().unwrap();
    assert_eq!(code(&["run", "--corpus", "corpus.json"]), 2);
    assert_eq!(code(&["run", "--bogus"]), 2);
    std::fs::write(d.join("bad.json"), "[{").unwrap();
    assert_eq!(code(&["ingest", "--corpus", "bad.json", "--ontology", "ontology.json"]), 3);
    assert_eq!(
        code(&[
            "run", "--corpus", "corpus.json", "--ontology", "ontology.json", "--output", "o", "--generator", "remote",
            "--endpoint", "http://127.0.0.1:9", "--retriever", "bm25",
        ]),
        4
    );
}
