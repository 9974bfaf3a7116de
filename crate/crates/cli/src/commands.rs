use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use coevo_core::calibration::{calibrate, read_calibration_file, CalibrationInstance, PriorGrid};
use coevo_core::coevo::{CoEvolution, TrainError};
use coevo_core::execenv::{
    ExecError, Executor, ExternalExecutor, Outcome, SolutionArtifact, SyntheticWorld, TestArtifact, WorldConfig,
};
use coevo_core::matrix::{rank, read_matrix_file, PassingMatrix};
use coevo_core::rewards::{lambda_weight, CurriculumSchedule};
use coevo_core::selectors::{ConsensusSelection, PriorConfig, Selector, SelectorKind};
use serde::{Deserialize, Serialize};

use crate::args::{CalibrateArgs, Command, ExecutorSpec, FilterArgs, PriorArgs, ReportArgs, SelectArgs, TrainArgs};
use crate::config::ExperimentConfig;
use crate::run_dir::{self, RunWriter};
use crate::{Cli, CliError};

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Select(a) => cmd_select(a, out),
        Command::Filter(a) => cmd_filter(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Parse(format!("opening {}: {e}", path.display())))
}

pub fn load_matrices(path: &Path) -> Result<Vec<PassingMatrix>, CliError> {
    read_matrix_file(open(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string(value).expect("record serializes");
    s.push('\n');
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// One line of `select` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub problem_id: String,
    pub selector: String,
    pub solutions: Vec<String>,
    pub tests: Vec<String>,
    pub solution_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub score: f64,
}

impl SelectionRecord {
    pub fn new(matrix: &PassingMatrix, sel: &ConsensusSelection) -> Self {
        Self {
            problem_id: matrix.problem_id().to_owned(),
            selector: sel.selector_name.clone(),
            solutions: sel.solution_indices.iter().map(|&i| matrix.solution_ids()[i].clone()).collect(),
            tests: sel.test_indices.iter().map(|&j| matrix.test_ids()[j].clone()).collect(),
            solution_indices: sel.solution_indices.clone(),
            test_indices: sel.test_indices.clone(),
            score: sel.score,
        }
    }
}

fn prior_from(args: &PriorArgs) -> Result<PriorConfig, CliError> {
    let defaults = coevo_core::coevo::TrainConfig::default();
    let (b, a) = (
        args.beta0_exp.unwrap_or(defaults.beta0_exp),
        args.alpha_xy_exp.unwrap_or(defaults.alpha_xy_exp),
    );
    let prior = PriorConfig::from_exponents(b, a);
    if !(prior.beta0.is_finite() && prior.beta0 > 0.0 && prior.alpha_xy.is_finite() && prior.alpha_xy > 0.0) {
        return Err(CliError::Config(format!("prior exponents ({b}, {a}) are out of range")));
    }
    Ok(prior)
}

pub fn cmd_select(args: &SelectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let selector = match args.selector {
        SelectorKind::MaxPass => Selector::MaxPass,
        SelectorKind::CodeT => Selector::CodeT,
        SelectorKind::B4 => Selector::B4(prior_from(&args.prior)?),
        SelectorKind::DyB4 => {
            return Err(CliError::Config(
                "selector dyb4 needs a labeled calibration set; run `calibrate` and pass the chosen exponents to b4".into(),
            ))
        }
    };
    for m in load_matrices(&args.matrices)? {
        json_line(out, &SelectionRecord::new(&m, &selector.select(&m)))?;
    }
    Ok(())
}

pub fn cmd_filter(args: &FilterArgs, out: &mut dyn Write) -> Result<(), CliError> {
    for m in load_matrices(&args.matrices)? {
        if rank(&m) >= args.tau {
            writeln!(out, "{}", m.problem_id())?;
        }
    }
    Ok(())
}

/// Calibration summary printed by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub beta0_exp: i32,
    pub alpha_xy_exp: i32,
    pub beta0: f64,
    pub alpha_xy: f64,
    pub accuracy: f64,
    pub instances: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceRecord {
    id: String,
    text: String,
}

fn load_sources(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SourceRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Parse(format!("{} line {}: {e}", path.display(), i + 1)))?;
        map.insert(rec.id, rec.text);
    }
    Ok(map)
}

/// Per matrix, which solutions pass every reference test.
fn reference_verdicts(
    args: &CalibrateArgs,
    matrices: &[PassingMatrix],
    instances: &BTreeMap<String, CalibrationInstance>,
) -> Result<BTreeMap<String, Vec<bool>>, CliError> {
    let exec_err = |e: ExecError| match e {
        ExecError::BadArtifactId(_) | ExecError::UnknownProblem(_) => CliError::Parse(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    };
    let mut verdicts = BTreeMap::new();
    match &args.executor {
        ExecutorSpec::Synthetic => {
            let world_config = match &args.config {
                Some(p) => ExperimentConfig::load(p)?.world,
                None => WorldConfig::default(),
            };
            world_config.validate().map_err(CliError::Config)?;
            let world = SyntheticWorld::generate(args.seed, world_config);
            for m in matrices {
                let inst = &instances[m.problem_id()];
                let tests = inst
                    .reference_test_ids
                    .iter()
                    .map(|t| TestArtifact::from_tagged(&inst.problem_id, t))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(exec_err)?;
                let mut row = Vec::with_capacity(m.n_solutions());
                for sid in m.solution_ids() {
                    let s = SolutionArtifact::from_tagged(&inst.problem_id, sid).map_err(exec_err)?;
                    let mut ok = true;
                    for t in &tests {
                        ok &= world.execute(&s, t).map_err(exec_err)? == Outcome::Pass;
                    }
                    row.push(ok);
                }
                verdicts.insert(m.problem_id().to_owned(), row);
            }
        }
        ExecutorSpec::External(command) => {
            let sources_path = args
                .sources
                .as_ref()
                .ok_or_else(|| CliError::Config("an external executor needs --sources".into()))?;
            let sources = load_sources(sources_path)?;
            let text = |id: &str| {
                sources
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CliError::Parse(format!("no source text for artifact `{id}`")))
            };
            let executor = ExternalExecutor::spawn(command, args.timeout_ms).map_err(exec_err)?;
            for m in matrices {
                let inst = &instances[m.problem_id()];
                let tests = inst
                    .reference_test_ids
                    .iter()
                    .map(|t| text(t))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut row = Vec::with_capacity(m.n_solutions());
                for sid in m.solution_ids() {
                    let s = text(sid)?;
                    let mut ok = true;
                    for t in &tests {
                        ok &= executor.execute(&s, t).map_err(exec_err)? == Outcome::Pass;
                    }
                    row.push(ok);
                }
                verdicts.insert(m.problem_id().to_owned(), row);
            }
        }
    }
    Ok(verdicts)
}

pub fn cmd_calibrate(args: &CalibrateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let matrices = load_matrices(&args.matrices)?;
    let instances: BTreeMap<String, CalibrationInstance> = read_calibration_file(open(&args.calibration_set)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", args.calibration_set.display())))?
        .into_iter()
        .map(|i| (i.problem_id.clone(), i))
        .collect();
    if let Some(m) = matrices.iter().find(|m| !instances.contains_key(m.problem_id())) {
        return Err(CliError::Parse(format!(
            "matrix `{}` has no record in {}",
            m.problem_id(),
            args.calibration_set.display()
        )));
    }
    let verdicts = reference_verdicts(args, &matrices, &instances)?;
    let result = calibrate(&PriorGrid::default(), &matrices, |pid: &str, i: usize| verdicts[pid][i])
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = &args.surface {
        let mut w = File::create(path).map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))?;
        writeln!(w, "beta0_exp,alpha_xy_exp,accuracy")?;
        for (cell, acc) in &result.surface {
            writeln!(w, "{},{},{acc}", cell.beta0_exp, cell.alpha_xy_exp)?;
        }
    }
    json_line(
        out,
        &CalibrationRecord {
            beta0_exp: result.cell.beta0_exp,
            alpha_xy_exp: result.cell.alpha_xy_exp,
            beta0: result.prior.beta0,
            alpha_xy: result.prior.alpha_xy,
            accuracy: result.accuracy,
            instances: matrices.len(),
        },
    )
}

/// Resolves and validates the experiment configuration for `train`.
pub fn resolve_train_config(args: &TrainArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.apply(args);
    config.validate()?;
    if let ExecutorSpec::External(_) = args.executor {
        return Err(CliError::Config(
            "train measures noise against latent correctness and needs the synthetic executor".into(),
        ));
    }
    Ok(config)
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::SampleTooLarge { .. } | TrainError::EmptyPool => {
            CliError::Config(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub run_dir: String,
    pub config_digest: String,
    pub final_noise: f64,
    pub final_coder_correct_rate: f64,
    pub tester_frozen: bool,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_train_config(args)?;
    let world = SyntheticWorld::generate(config.train.seed, config.world.clone());
    let mut state = CoEvolution::new(world, config.train.clone()).map_err(train_error)?;
    let mut writer = RunWriter::create(&args.out, &config)?;
    let summary = state
        .run_with(|log| writer.step(log).map_err(|e| TrainError::Sink(e.to_string())))
        .map_err(train_error)?;
    let manifest = writer.finish(&config, &summary)?;
    json_line(
        out,
        &TrainRecord {
            run_dir: args.out.display().to_string(),
            config_digest: manifest.config_digest,
            final_noise: summary.final_noise,
            final_coder_correct_rate: summary.final_coder_correct_rate,
            tester_frozen: summary.tester_frozen,
        },
    )
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let run = run_dir::load(&args.run_dir)?;
    let dir = args.out.clone().unwrap_or_else(|| args.run_dir.join("report"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;

    let mut noise = String::from("step,noise\n");
    let mut coder = String::from("step,coder_correct_rate\n");
    for s in &run.steps {
        if let Some(n) = s.noise {
            noise.push_str(&format!("{},{n}\n", s.step));
        }
        coder.push_str(&format!("{},{}\n", s.step, s.coder_correct_rate));
    }
    let k_total = run.config.train.steps;
    let mut lambda = String::from("step,lambda\n");
    for k in 0..=k_total {
        let schedule = CurriculumSchedule::new(k, k_total).map_err(|e| CliError::Runtime(e.to_string()))?;
        lambda.push_str(&format!("{k},{}\n", lambda_weight(&schedule)));
    }
    let mut quality = Vec::new();
    coevo_core::metrics::write_quality_csv(&mut quality, &run.summary.test_quality)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let files: [(&str, &[u8]); 4] = [
        ("noise.csv", noise.as_bytes()),
        ("lambda.csv", lambda.as_bytes()),
        ("coder.csv", coder.as_bytes()),
        ("quality.csv", &quality),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}
