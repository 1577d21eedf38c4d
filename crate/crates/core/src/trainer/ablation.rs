//! Cross product of conditions and seeds, run on a bounded worker pool.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{Condition, ExperimentConfig};
use super::run::{train, StopReason, TrainReport};
use super::TrainError;
use crate::transition::QSpec;

/// One condition of an ablation: a training condition and, for the
/// complementary condition, its transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationArm {
    pub name: String,
    pub condition: Condition,
    #[serde(default)]
    pub q: Option<QSpec>,
}

impl AblationArm {
    pub fn new(name: &str, condition: Condition, q: Option<&str>) -> Self {
        Self { name: name.into(), condition, q: q.map(|s| QSpec::Preset(s.into())) }
    }

    pub fn apply(&self, base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.condition = self.condition;
        if self.q.is_some() {
            cfg.q = self.q.clone();
        }
        cfg.seed = seed;
        cfg
    }
}

/// Baseline, complementary with each MNIST matrix, and the fully supervised
/// upper bound.
pub fn standard_arms() -> Vec<AblationArm> {
    vec![
        AblationArm::new("baseline", Condition::Baseline, None),
        AblationArm::new("q1", Condition::Complementary, Some("mnist-q1")),
        AblationArm::new("q2", Condition::Complementary, Some("mnist-q2")),
        AblationArm::new("full", Condition::FullySupervised, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub condition: Condition,
    pub seed: u64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub mean_macro_f1: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFailure {
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<ArmSummary>,
    pub failures: Vec<AblationFailure>,
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationTable {
    /// Builds summaries in the order arms first appear in `rows`.
    pub fn from_rows(rows: Vec<AblationRow>, failures: Vec<AblationFailure>) -> Self {
        let mut names: Vec<&str> = Vec::new();
        for r in &rows {
            if !names.contains(&r.arm.as_str()) {
                names.push(&r.arm);
            }
        }
        let summary = names
            .iter()
            .map(|&name| {
                let values: Vec<f64> = rows.iter().filter(|r| r.arm == name).map(|r| r.macro_f1).collect();
                let (mean, std) = mean_and_sample_std(&values);
                ArmSummary { arm: name.to_string(), runs: values.len(), mean_macro_f1: mean, std_macro_f1: std }
            })
            .collect();
        Self { rows, summary, failures }
    }

    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == name)
    }

    pub fn rows_csv(&self) -> String {
        let k = self.rows.first().map_or(0, |r| r.per_class_f1.len());
        let mut out = String::from("arm,condition,seed,macro_f1");
        for c in 0..k {
            out.push_str(&format!(",f1_class{c}"));
        }
        out.push_str(",best_epoch,epochs_run,stop_reason\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}", r.arm, r.condition.as_str(), r.seed, r.macro_f1));
            for v in &r.per_class_f1 {
                out.push_str(&format!(",{v}"));
            }
            let stop = match r.stop_reason {
                StopReason::Patience => "patience",
                StopReason::MaxEpochs => "max-epochs",
            };
            out.push_str(&format!(",{},{},{}\n", r.best_epoch, r.epochs_run, stop));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("arm,runs,mean_macro_f1,std_macro_f1\n");
        for s in &self.summary {
            out.push_str(&format!("{},{},{},{}\n", s.arm, s.runs, s.mean_macro_f1, s.std_macro_f1));
        }
        out
    }
}

fn row_from(arm: &AblationArm, report: &TrainReport) -> AblationRow {
    let (macro_f1, per_class_f1) = match &report.final_scores {
        Some(s) => (s.macro_f1, s.per_class_f1.clone()),
        None => (f64::NAN, Vec::new()),
    };
    AblationRow {
        arm: arm.name.clone(),
        condition: arm.condition,
        seed: report.seed,
        macro_f1,
        per_class_f1,
        best_epoch: report.best_epoch,
        epochs_run: report.last_epoch(),
        stop_reason: report.stop_reason,
    }
}

/// Trains every (arm, seed) pair on up to `jobs` threads. Rows come back in
/// arm-major, seed-minor order regardless of completion order. `on_done` is
/// called from the worker as each run finishes, so callers can persist
/// partial results; failed runs are collected rather than aborting the rest.
pub fn run_ablation<F>(
    base: &ExperimentConfig,
    arms: &[AblationArm],
    seeds: &[u64],
    jobs: usize,
    on_done: F,
) -> Result<AblationTable, TrainError>
where
    F: Fn(&AblationArm, u64, &Result<TrainReport, TrainError>) + Sync,
{
    if arms.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("an ablation needs at least one condition and one seed".into()));
    }
    for arm in arms {
        arm.apply(base, seeds[0]).validate().map_err(|e| TrainError::Config(format!("arm {}: {e}", arm.name)))?;
    }
    let tasks: Vec<(usize, u64)> = (0..arms.len()).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let results: Mutex<Vec<Option<Result<TrainReport, TrainError>>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, tasks.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(a, seed)) = tasks.get(t) else { break };
                let arm = &arms[a];
                let result = train(&arm.apply(base, seed)).map(|(_, report)| report);
                on_done(arm, seed, &result);
                results.lock().expect("no worker panicked")[t] = Some(result);
            });
        }
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(a, seed), result) in tasks.iter().zip(results.into_inner().expect("no worker panicked")) {
        match result.expect("every task ran") {
            Ok(report) => rows.push(row_from(&arms[a], &report)),
            Err(e) => failures.push(AblationFailure { arm: arms[a].name.clone(), seed, error: e.to_string() }),
        }
    }
    Ok(AblationTable::from_rows(rows, failures))
}

/// Blanks every line of `[ablation]` tables, keeping line numbers intact.
fn blank_ablation_tables(text: &str) -> String {
    let mut inside = false;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let t = line.trim_start();
        if t.starts_with('[') {
            let name = t.trim_start_matches('[').trim_start();
            inside = name.starts_with("ablation") && name[8..].trim_start().starts_with([']', '.']);
        }
        if !inside {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// `[ablation]` section of an ablation config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "standard_arms")]
    pub arms: Vec<AblationArm>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { seeds: default_seeds(), arms: standard_arms() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub base: ExperimentConfig,
    pub ablation: AblationSection,
}

impl AblationConfig {
    /// An experiment config plus an optional `[ablation]` table.
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        let ablation = match value.remove("ablation") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| TrainError::Config(format!("[ablation]: {e}")))?,
            None => AblationSection::default(),
        };
        // Parsing the text itself keeps line and column numbers in errors.
        let base: ExperimentConfig = match toml::from_str(&blank_ablation_tables(text)) {
            Ok(base) => base,
            Err(spanned) => toml::Value::Table(value)
                .try_into()
                .map_err(|_: toml::de::Error| TrainError::Config(spanned.to_string()))?,
        };
        if base.condition == Condition::Complementary && base.q.is_none() {
            // Arms carry their own matrices; fall back to Q1 for the base.
            let mut base = base;
            base.q = Some(QSpec::Preset("mnist-q1".into()));
            return Self::checked(base, ablation);
        }
        Self::checked(base, ablation)
    }

    fn checked(base: ExperimentConfig, ablation: AblationSection) -> Result<Self, TrainError> {
        base.validate()?;
        if ablation.seeds.is_empty() || ablation.arms.is_empty() {
            return Err(TrainError::Config("[ablation] needs at least one seed and one arm".into()));
        }
        Ok(Self { base, ablation })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            TrainError::Config(m) => TrainError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
