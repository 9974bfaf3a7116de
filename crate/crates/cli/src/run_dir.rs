//! Run-directory layout.
//!
//! | file            | contents                                             |
//! |-----------------|------------------------------------------------------|
//! | `config.toml`   | resolved experiment configuration                    |
//! | `steps.jsonl`   | one `StepLog` per line                               |
//! | `rewards.jsonl` | one reward record per candidate per step             |
//! | `noise.csv`     | `step,noise,coder_correct_rate,beta0_exp,alpha_xy_exp` |
//! | `quality.csv`   | per-problem test accuracy and mutation score         |
//! | `summary.json`  | final `RunSummary`                                   |
//! | `manifest.json` | seed, config digest, sha256 of every other file      |
//!
//! Nothing time- or host-dependent is written, so identical configurations
//! produce byte-identical directories.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use coevo_core::coevo::{RunSummary, StepLog};
use coevo_core::rewards::RewardReportRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const CONFIG: &str = "config.toml";
pub const STEPS: &str = "steps.jsonl";
pub const REWARDS: &str = "rewards.jsonl";
pub const NOISE: &str = "noise.csv";
pub const QUALITY: &str = "quality.csv";
pub const SUMMARY: &str = "summary.json";
pub const MANIFEST: &str = "manifest.json";

const ARTIFACTS: [&str; 6] = [CONFIG, STEPS, REWARDS, NOISE, QUALITY, SUMMARY];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_digest: String,
    pub version: String,
    pub files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Streams step logs as they are produced; one writer owns every file.
pub struct RunWriter {
    dir: PathBuf,
    steps: BufWriter<File>,
    rewards: BufWriter<File>,
    noise: BufWriter<File>,
}

impl RunWriter {
    pub fn create(dir: &Path, config: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
        fs::write(dir.join(CONFIG), config.to_toml())?;
        let mut noise = create(&dir.join(NOISE))?;
        writeln!(noise, "step,noise,coder_correct_rate,beta0_exp,alpha_xy_exp")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            steps: create(&dir.join(STEPS))?,
            rewards: create(&dir.join(REWARDS))?,
            noise,
        })
    }

    pub fn step(&mut self, log: &StepLog) -> std::io::Result<()> {
        json_line(&mut self.steps, log)?;
        for p in &log.problems {
            for r in &p.rewards {
                json_line(&mut self.rewards, &RewardReportRecord::new(log.step, &p.problem_id, r))?;
            }
        }
        if let Some(noise) = log.noise {
            let (b, a) = log
                .prior
                .map_or((String::new(), String::new()), |c| (c.beta0_exp.to_string(), c.alpha_xy_exp.to_string()));
            writeln!(self.noise, "{},{},{},{b},{a}", log.step, noise, log.coder_correct_rate)?;
        }
        Ok(())
    }

    pub fn finish(mut self, config: &ExperimentConfig, summary: &RunSummary) -> Result<Manifest, CliError> {
        self.steps.flush()?;
        self.rewards.flush()?;
        self.noise.flush()?;
        coevo_core::metrics::write_quality_csv(create(&self.dir.join(QUALITY))?, &summary.test_quality)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
        s.push('\n');
        fs::write(self.dir.join(SUMMARY), s)?;

        let mut files = BTreeMap::new();
        for name in ARTIFACTS {
            files.insert(name.to_owned(), sha256_file(&self.dir.join(name))?);
        }
        let manifest = Manifest {
            seed: config.train.seed,
            config_digest: config.digest(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            files,
        };
        let mut m = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        m.push('\n');
        fs::write(self.dir.join(MANIFEST), m)?;
        Ok(manifest)
    }
}

/// SHA-256 over every regular file in `dir` (sorted by name, names included).
pub fn directory_digest(dir: &Path) -> Result<String, CliError> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0]);
        h.update(sha256_file(&dir.join(&n))?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn require(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::Missing(format!("{} not found", p.display())))
    }
}

/// A finished run, loaded back for reporting.
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub steps: Vec<StepLog>,
    pub summary: RunSummary,
}

pub fn load(dir: &Path) -> Result<RunArtifacts, CliError> {
    let config_path = require(dir, CONFIG)?;
    let steps_path = require(dir, STEPS)?;
    let summary_path = require(dir, SUMMARY)?;
    require(dir, MANIFEST)?;

    let config = ExperimentConfig::load(&config_path)?;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(File::open(&steps_path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: StepLog = serde_json::from_str(&line)
            .map_err(|e| CliError::Parse(format!("{} line {}: {e}", steps_path.display(), i + 1)))?;
        steps.push(log);
    }
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(&summary_path)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", summary_path.display())))?;
    if steps.len() != config.train.steps {
        return Err(CliError::Missing(format!(
            "{} holds {} of {} steps",
            steps_path.display(),
            steps.len(),
            config.train.steps
        )));
    }
    Ok(RunArtifacts { config, steps, summary })
}
