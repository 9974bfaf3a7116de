use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coevo_cli::commands::{cmd_calibrate, cmd_filter, cmd_select, cmd_train, CalibrationRecord, SelectionRecord, TrainRecord};
use coevo_cli::run_dir::{directory_digest, load};
use coevo_cli::{run, Cli};
use coevo_core::calibration::{calibrate, CalibrationInstance, PriorGrid};
use coevo_core::execenv::{Archetype, SolutionArtifact, SyntheticWorld, TestArtifact, TestKind, WorldConfig};
use coevo_core::matrix::{rank, PassingMatrix};
use coevo_core::selectors::{select_b4, select_codet, PriorConfig};
use coevo_testkit::random_matrix;
use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: &str = r#"
[train]
steps = 4
batch_size = 4
rollouts = 6
noise_sample = 20
noise_every = 2
quality_sample = 5
calibration_rollouts = 2
selector = "dyb4"
seed = 3

[world]
problems = 60
"#;

fn coevo(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coevo"));
    for (k, _) in std::env::vars() {
        if k.starts_with("COEVO_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).output().expect("binary runs")
}

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("coevo").chain(args.iter().copied())).unwrap()
}

fn run_lib(args: &[&str]) -> Result<String, coevo_cli::CliError> {
    let mut out = Vec::new();
    run(&parse(args), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn write_matrices(path: &Path, ms: &[PassingMatrix]) {
    let text: String = ms
        .iter()
        .map(|m| serde_json::to_string(&m.to_record()).unwrap() + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

fn random_matrices(seed: u64, n: usize) -> Vec<PassingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let m = random_matrix(&mut rng, 6, 6);
            PassingMatrix::from_rows(format!("q{i}"), m.solution_ids().to_vec(), m.test_ids().to_vec(), &rows(&m)).unwrap()
        })
        .collect()
}

fn rows(m: &PassingMatrix) -> Vec<Vec<bool>> {
    coevo_testkit::matrix_rows(m)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn select_output_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.jsonl");
    let ms = random_matrices(1, 40);
    write_matrices(&file, &ms);

    let out = run_lib(&["select", path_str(&file), "--selector", "b4", "--beta0-exp", "2", "--alpha-xy-exp", "1"]).unwrap();
    let recs: Vec<SelectionRecord> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), ms.len());
    for (m, r) in ms.iter().zip(&recs) {
        let sel = select_b4(m, &PriorConfig::from_exponents(2, 1));
        assert_eq!(r, &SelectionRecord::new(m, &sel));
    }

    let mut buf = Vec::new();
    let Cli { command: coevo_cli::Command::Select(args), .. } = parse(&["select", path_str(&file)]) else { unreachable!() };
    cmd_select(&args, &mut buf).unwrap();
    for (m, line) in ms.iter().zip(String::from_utf8(buf).unwrap().lines()) {
        let r: SelectionRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.solution_indices, select_codet(m).solution_indices);
    }
}

#[test]
fn filter_output_matches_rank() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.jsonl");
    let ms = random_matrices(2, 60);
    write_matrices(&file, &ms);
    for tau in [0, 1, 2, 3, 5] {
        let mut buf = Vec::new();
        let Cli { command: coevo_cli::Command::Filter(args), .. } =
            parse(&["filter", path_str(&file), "--tau", &tau.to_string()])
        else {
            unreachable!()
        };
        cmd_filter(&args, &mut buf).unwrap();
        let want: Vec<&str> = ms.iter().filter(|m| rank(m) >= tau).map(|m| m.problem_id()).collect();
        assert_eq!(String::from_utf8(buf).unwrap().lines().collect::<Vec<_>>(), want);
    }
}

/// Matrices with self-describing artifact ids plus a labeled record per
/// problem, drawn from the default world at `seed`.
pub fn calibration_workspace(dir: &Path, seed: u64, count: usize) -> (PathBuf, PathBuf, Vec<PassingMatrix>, Vec<Vec<bool>>) {
    let world = SyntheticWorld::generate(seed, WorldConfig::default());
    let mut ms = Vec::new();
    let mut verdicts = Vec::new();
    let mut records = String::new();
    for p in world.problems().iter().take(count) {
        let pid = &p.problem_id;
        let sols: Vec<SolutionArtifact> = (0..5)
            .map(|i| {
                let a = if i % 2 == 0 { Archetype::Correct } else { Archetype::Wrong(p.wrong_archetypes[i % p.wrong_archetypes.len()]) };
                SolutionArtifact::new(format!("s{i}"), a, pid)
            })
            .collect();
        let tests: Vec<TestArtifact> = [TestKind::Weak, TestKind::Trivial, TestKind::WrongSemantics, TestKind::Strong]
            .iter()
            .enumerate()
            .map(|(j, &k)| TestArtifact::new(format!("t{j}"), k, pid))
            .collect();
        let grid: Vec<Vec<bool>> = sols
            .iter()
            .map(|s| tests.iter().map(|t| world.execute(s, t).unwrap().is_pass()).collect())
            .collect();
        let m = PassingMatrix::from_rows(
            pid.clone(),
            sols.iter().map(|s| s.tagged_id()).collect(),
            tests.iter().map(|t| t.tagged_id()).collect(),
            &grid,
        )
        .unwrap();
        let reference: Vec<TestArtifact> = (0..3).map(|j| TestArtifact::new(format!("ref{j}"), TestKind::Strong, pid)).collect();
        verdicts.push(
            sols.iter()
                .map(|s| reference.iter().all(|t| world.execute(s, t).unwrap().is_pass()))
                .collect(),
        );
        let inst = CalibrationInstance {
            problem_id: pid.clone(),
            reference_solution_id: format!("ref@{}", Archetype::Correct),
            reference_test_ids: reference.iter().map(|t| t.tagged_id()).collect(),
        };
        records.push_str(&(serde_json::to_string(&inst).unwrap() + "\n"));
        ms.push(m);
    }
    let mpath = dir.join("cal_matrices.jsonl");
    let hpath = dir.join("calibration.jsonl");
    write_matrices(&mpath, &ms);
    fs::write(&hpath, records).unwrap();
    (mpath, hpath, ms, verdicts)
}

#[test]
fn calibrate_output_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (mpath, hpath, ms, verdicts) = calibration_workspace(dir.path(), 5, 10);
    let surface = dir.path().join("surface.csv");
    let mut buf = Vec::new();
    let Cli { command: coevo_cli::Command::Calibrate(args), .. } = parse(&[
        "calibrate",
        "--matrices",
        path_str(&mpath),
        "--calibration-set",
        path_str(&hpath),
        "--seed",
        "5",
        "--surface",
        path_str(&surface),
    ]) else {
        unreachable!()
    };
    cmd_calibrate(&args, &mut buf).unwrap();
    let rec: CalibrationRecord = serde_json::from_str(String::from_utf8(buf).unwrap().trim()).unwrap();
    let index: std::collections::HashMap<&str, usize> = ms.iter().enumerate().map(|(i, m)| (m.problem_id(), i)).collect();
    let want = calibrate(&PriorGrid::default(), &ms, |pid: &str, i: usize| verdicts[index[pid]][i]).unwrap();
    assert_eq!((rec.beta0_exp, rec.alpha_xy_exp), (want.cell.beta0_exp, want.cell.alpha_xy_exp));
    assert_eq!(rec.accuracy, want.accuracy);
    assert_eq!(rec.instances, 10);
    assert_eq!(fs::read_to_string(&surface).unwrap().lines().count(), 81);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(coevo(&["select", path_str(&bad)]).status.code(), Some(2));
    assert_eq!(coevo(&["filter", path_str(&dir.path().join("absent.jsonl"))]).status.code(), Some(2));

    let good = dir.path().join("m.jsonl");
    write_matrices(&good, &random_matrices(3, 3));
    assert_eq!(coevo(&["select", path_str(&good), "--selector", "dyb4"]).status.code(), Some(3));
    let ok = coevo(&["select", path_str(&good)]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8(ok.stdout).unwrap().lines().count(), 3);

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nrollouts = 0\n").unwrap();
    let out = coevo(&["train", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("train.rollouts"));
    fs::write(&cfg, "[train]\nno_such_key = 1\n").unwrap();
    let out = coevo(&["train", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("no_such_key"));

    assert_eq!(coevo(&["report", path_str(&dir.path().join("nothing"))]).status.code(), Some(4));
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, TrainRecord) {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.join(name);
    let mut args = vec!["train", "--config", path_str(&cfg), "--out", path_str(&out)];
    args.extend_from_slice(extra);
    let mut buf = Vec::new();
    let Cli { command: coevo_cli::Command::Train(a), .. } = parse(&args) else { unreachable!() };
    cmd_train(&a, &mut buf).unwrap();
    let rec = serde_json::from_str(String::from_utf8(buf).unwrap().trim()).unwrap();
    (out, rec)
}

#[test]
fn training_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, ra) = train(dir.path(), "a", &[]);
    let (b, rb) = train(dir.path(), "b", &[]);
    assert_eq!(directory_digest(&a).unwrap(), directory_digest(&b).unwrap());
    assert_eq!(ra.config_digest, rb.config_digest);

    let (c, _) = train(dir.path(), "c", &["--seed", "4"]);
    assert_ne!(directory_digest(&a).unwrap(), directory_digest(&c).unwrap());

    // one noise row per measured step: steps 0 and 2, plus the last step
    let run = load(&a).unwrap();
    assert_eq!(run.steps.iter().filter(|s| s.noise.is_some()).count(), 3);
    let noise_csv = fs::read_to_string(a.join("noise.csv")).unwrap();
    assert_eq!(noise_csv.lines().count(), 1 + 3);
    assert!(run.steps.iter().all(|s| s.prior.is_some()));

    let r1 = dir.path().join("rep1");
    let r2 = dir.path().join("rep2");
    run_lib(&["report", path_str(&a), "--out", path_str(&r1)]).unwrap();
    run_lib(&["report", path_str(&a), "--out", path_str(&r2)]).unwrap();
    assert_eq!(directory_digest(&r1).unwrap(), directory_digest(&r2).unwrap());
    let lambda = fs::read_to_string(r1.join("lambda.csv")).unwrap();
    let lines: Vec<&str> = lambda.lines().collect();
    assert_eq!(lines.len(), 1 + 5);
    assert_eq!(lines[1], "0,1");
    assert_eq!(lines[5], "4,1.5");
}

#[test]
fn worker_count_does_not_change_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    run_lib(&["--jobs", "1", "train", "--config", path_str(&cfg), "--out", path_str(&one)]).unwrap();
    run_lib(&["--jobs", "4", "train", "--config", path_str(&cfg), "--out", path_str(&many)]).unwrap();
    assert_eq!(directory_digest(&one).unwrap(), directory_digest(&many).unwrap());
}

#[test]
fn offline_baseline_run_reports_frozen_tester() {
    let dir = tempfile::tempdir().unwrap();
    let (_, rec) = train(dir.path(), "off", &["--baseline", "offline", "--selector", "codet"]);
    assert!(rec.tester_frozen);
}

#[test]
fn truncated_run_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = train(dir.path(), "a", &[]);
    let steps = fs::read_to_string(a.join("steps.jsonl")).unwrap();
    let first: String = steps.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(a.join("steps.jsonl"), first).unwrap();
    assert_eq!(coevo(&["report", path_str(&a)]).status.code(), Some(4));
}
