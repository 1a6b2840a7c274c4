use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mcbandit::bandit::{PolicyConfig, PolicyKind};
use mcbandit::harness::{Combiner, Method, Scenario};
use mcbandit::presets::{AisToyExperiment, CirExperiment, CIR_STRIKES, SYNTHETIC_SCALES};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SyntheticGrid,
    Cir,
    Ais,
    Custom,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::SyntheticGrid => "synthetic-grid",
            Experiment::Cir => "cir",
            Experiment::Ais => "ais",
            Experiment::Custom => "custom",
        }
    }
}

/// Policy parameters shared by every bandit method of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tuning {
    pub ucbv_zeta: f64,
    pub ucbv_c: f64,
    pub klucb_tolerance: f64,
    pub ts_prior: (f64, f64),
}

impl Default for Tuning {
    fn default() -> Self {
        let d = PolicyConfig::new(PolicyKind::Ucb1);
        Self {
            ucbv_zeta: d.ucbv_zeta,
            ucbv_c: d.ucbv_c,
            klucb_tolerance: d.klucb_tolerance,
            ts_prior: d.ts_prior,
        }
    }
}

impl Tuning {
    fn policy(&self, kind: PolicyKind) -> PolicyConfig {
        PolicyConfig {
            kind,
            ucbv_zeta: self.ucbv_zeta,
            ucbv_c: self.ucbv_c,
            klucb_tolerance: self.klucb_tolerance,
            ts_prior: self.ts_prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub scales: Vec<f64>,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            scales: SYNTHETIC_SCALES.to_vec(),
        }
    }
}

/// Everything a run needs; parsed from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replicates: Option<u64>,
    /// `ucb1`, `ucbv`, `klucb`, `ts`, `uniform`, `pmc` or `fixed-<arm>`.
    #[serde(default)]
    pub policies: Option<Vec<String>>,
    /// Draw budget.
    #[serde(default)]
    pub n: Option<u64>,
    /// Time budget for cost-aware runs.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default)]
    pub combiner: Combiner,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Write the first replicate's per-draw trace for each method.
    #[serde(default = "default_traces")]
    pub traces: bool,
    #[serde(default = "default_population")]
    pub pmc_population: usize,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub cir: CirExperiment,
    #[serde(default)]
    pub ais: AisToyExperiment,
    #[serde(default)]
    pub custom: Option<Scenario>,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_traces() -> bool {
    true
}

fn default_population() -> usize {
    mcbandit::pmc::DEFAULT_POPULATION
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            replicates: None,
            policies: None,
            n: None,
            budget: None,
            checkpoints: None,
            combiner: Combiner::default(),
            out: default_out(),
            workers: None,
            traces: default_traces(),
            pmc_population: default_population(),
            tuning: Tuning::default(),
            grid: GridSettings::default(),
            cir: CirExperiment::default(),
            ais: AisToyExperiment::default(),
            custom: None,
        }
    }

    pub fn replicates(&self) -> u64 {
        self.replicates.unwrap_or(match self.experiment {
            Experiment::SyntheticGrid => 100,
            Experiment::Cir => 20,
            Experiment::Ais => 50,
            Experiment::Custom => 100,
        })
    }

    pub fn policy_labels(&self) -> Vec<String> {
        self.policies
            .clone()
            .unwrap_or_else(|| PolicyKind::ALL.iter().map(|k| k.label().to_string()).collect())
    }

    /// Resolve method labels.
    pub fn methods(&self) -> Result<Vec<Method>, ConfigError> {
        let labels = self.policy_labels();
        if labels.is_empty() {
            return Err(ConfigError::at_key("policies", "at least one policy is required"));
        }
        labels
            .iter()
            .map(|label| {
                if let Some(kind) = PolicyKind::ALL.iter().find(|k| k.label() == label) {
                    return Ok(Method::Policy(self.tuning.policy(*kind)));
                }
                match label.as_str() {
                    "uniform" => Ok(Method::Uniform),
                    "pmc" => Ok(Method::Pmc {
                        population: self.pmc_population,
                    }),
                    other => other
                        .strip_prefix("fixed-")
                        .and_then(|k| k.parse().ok())
                        .map(|arm| Method::Fixed { arm })
                        .ok_or_else(|| {
                            ConfigError::at_key(
                                "policies",
                                format!(
                                    "unknown policy {other:?}; expected ucb1, ucbv, klucb, ts, uniform, pmc or fixed-<arm>"
                                ),
                            )
                        }),
                }
            })
            .collect()
    }

    /// Bandit policies only, as the grid compares.
    pub fn bandit_policies(&self) -> Result<Vec<PolicyConfig>, ConfigError> {
        self.methods()?
            .into_iter()
            .map(|m| match m {
                Method::Policy(c) => Ok(c),
                other => Err(ConfigError::at_key(
                    "policies",
                    format!("the grid compares bandit policies only, not {}", other.label()),
                )),
            })
            .collect()
    }

    /// The scenario for single-scenario experiments.
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let mut s = match self.experiment {
            Experiment::SyntheticGrid => {
                return Err(ConfigError::at_key(
                    "experiment",
                    "the grid has no single scenario",
                ))
            }
            Experiment::Cir => {
                if !CIR_STRIKES.contains(&self.cir.strike) {
                    return Err(ConfigError::at_key(
                        "strike",
                        format!("strike must be one of {CIR_STRIKES:?}, got {}", self.cir.strike),
                    ));
                }
                if self.budget.is_some() {
                    return Err(ConfigError::at_key(
                        "budget",
                        "the cir experiment uses a draw budget (n)",
                    ));
                }
                self.cir.scenario(self.n.unwrap_or(10_000))
            }
            Experiment::Ais => {
                if self.n.is_some() {
                    return Err(ConfigError::at_key(
                        "n",
                        "the ais experiment uses a time budget (budget)",
                    ));
                }
                if self.ais.steps.len() != self.ais.cost_means.len() {
                    return Err(ConfigError::at_key(
                        "cost_means",
                        "ais.steps and ais.cost_means must have the same length",
                    ));
                }
                self.ais.scenario(self.budget.unwrap_or(500_000.0))
            }
            Experiment::Custom => {
                let mut s = self.custom.clone().ok_or_else(|| {
                    ConfigError::at_key("experiment", "the custom experiment needs a [custom] table")
                })?;
                use mcbandit::harness::Budget;
                match (&mut s.budget, self.n, self.budget) {
                    (Budget::Rounds { n }, Some(v), None) => *n = v,
                    (Budget::Time { budget, .. }, None, Some(v)) => *budget = v,
                    (_, None, None) => {}
                    (Budget::Rounds { .. }, _, Some(_)) => {
                        return Err(ConfigError::at_key(
                            "budget",
                            "the custom scenario uses a draw budget (n)",
                        ))
                    }
                    (Budget::Time { .. }, Some(_), _) => {
                        return Err(ConfigError::at_key(
                            "n",
                            "the custom scenario uses a time budget (budget)",
                        ))
                    }
                }
                s
            }
        };
        if let Some(c) = &self.checkpoints {
            s.checkpoints = c.clone();
        }
        Ok(s)
    }

    /// Hash of everything that affects results (output path and worker
    /// count excluded).
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.workers = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A configuration problem; `line` points into the config file when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            path: None,
            line: None,
            column: None,
            key: None,
            message: message.into(),
        }
    }

    pub fn at_key(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.to_string()),
            ..Self::new(message)
        }
    }

    /// Attach the config file, locating `key` in `source` if no line is set.
    pub fn in_file(mut self, path: &Path, source: &str) -> Self {
        if self.line.is_none() {
            if let Some(key) = &self.key {
                self.line = find_key_line(source, key);
                self.column = self.line.map(|_| 1);
            }
        }
        self.path = Some(path.to_path_buf());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{}:{}: ", p.display(), l, self.column.unwrap_or(1))?,
            (Some(p), None) => write!(f, "{}: ", p.display())?,
            (None, _) => {}
        }
        write!(f, "{}", self.message)
    }
}

/// First line whose key is `key` (`key = ...`), 1-based.
fn find_key_line(source: &str, key: &str) -> Option<usize> {
    source
        .lines()
        .position(|line| {
            let t = line.trim_start();
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

/// Parse TOML text into a config.
pub fn parse_config(path: &Path, source: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(source).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(source, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        ConfigError {
            path: Some(path.to_path_buf()),
            line,
            column,
            key: None,
            message: e.message().trim().to_string(),
        }
    })
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), ConfigError> {
    let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: Some(path.to_path_buf()),
        ..ConfigError::new(format!("cannot read config: {e}"))
    })?;
    Ok((parse_config(path, &source)?, source))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config(Path::new("x.toml"), src)
    }

    #[test]
    fn minimal_config() {
        let c = parse("experiment = \"cir\"\n").unwrap();
        assert_eq!(c.experiment, Experiment::Cir);
        assert_eq!(c.cir.strike, 0.06);
        assert_eq!(c.methods().unwrap().len(), 4);
    }

    #[test]
    fn unknown_field_is_line_anchored() {
        let e = parse("experiment = \"cir\"\nseed = 3\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().starts_with("x.toml:3:1: "), "{e}");
        let e = parse("experiment = \"cir\"\n[cir]\nstrik = 0.06\n").unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn validation_errors_find_their_key() {
        let src = "experiment = \"cir\"\n\n[cir]\nstrike = 0.05\n";
        let c = parse(src).unwrap();
        let e = c.scenario().unwrap_err().in_file(Path::new("x.toml"), src);
        assert_eq!(e.line, Some(4));
        let src = "experiment = \"cir\"\npolicies = [\"ucb1\", \"nope\"]\n";
        let e = parse(src)
            .unwrap()
            .methods()
            .unwrap_err()
            .in_file(Path::new("x.toml"), src);
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn method_labels() {
        let mut c = ExperimentConfig::new(Experiment::Cir);
        c.policies = Some(vec![
            "ts".into(),
            "uniform".into(),
            "pmc".into(),
            "fixed-3".into(),
        ]);
        let labels: Vec<String> = c.methods().unwrap().iter().map(|m| m.label()).collect();
        assert_eq!(labels, vec!["ts", "uniform", "pmc", "fixed-3"]);
        assert!(c.bandit_policies().is_err());
    }

    #[test]
    fn hash_ignores_output_location_and_workers() {
        let mut a = ExperimentConfig::new(Experiment::Ais);
        let h = a.config_hash();
        a.out = PathBuf::from("elsewhere");
        a.workers = Some(3);
        assert_eq!(a.config_hash(), h);
        a.seed = 1;
        assert_ne!(a.config_hash(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn custom_scenario_round_trips() {
        let src = r#"
experiment = "custom"
[custom]
name = "two-arms"
checkpoints = [100.0]
[custom.budget]
mode = "rounds"
n = 1000
[[custom.arms]]
range = [0.0, 1.0]
[custom.arms.estimator]
type = "scaled-bernoulli"
midpoint = 0.5
scale = 0.2
p = 0.5
[[custom.arms]]
[custom.arms.estimator]
type = "constant"
value = 0.5
"#;
        let c = parse(src).unwrap();
        let s = c.scenario().unwrap();
        assert_eq!(s.arms.len(), 2);
        assert_eq!(s.checkpoints, vec![100.0]);
    }
}
