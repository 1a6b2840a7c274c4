use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mcbandit::bandit::PolicyConfig;
use mcbandit::estimators::EstimatorError;
use mcbandit::harness::{
    policy_grid, write_grid_csv, write_report_csv, Budget, EvalSettings, Execution, HarnessError, Method,
    MethodReport, PreparedScenario, ReportMetadata,
};
use serde::Serialize;

use crate::config::{ConfigError, Experiment, ExperimentConfig};

enum Work {
    Grid {
        policies: Vec<PolicyConfig>,
        n: u64,
    },
    Scenario {
        prepared: PreparedScenario,
        methods: Vec<Method>,
    },
}

/// A validated run, ready to execute.
pub struct Plan {
    cfg: ExperimentConfig,
    work: Work,
}

fn prepare_error(e: HarnessError) -> ConfigError {
    match e {
        HarnessError::Arm {
            arm,
            source: EstimatorError::InvalidSpec(msg),
        } => ConfigError::at_key("arms", format!("arm {arm}: {msg}")),
        HarnessError::Arm {
            arm,
            source: EstimatorError::Dataset(msg),
        } => ConfigError::at_key("path", format!("arm {arm}: {msg}")),
        HarnessError::Arm { arm, source } => ConfigError::new(format!("arm {arm}: {source}")),
        HarnessError::Invalid(msg) => ConfigError::at_key("checkpoints", msg),
        other => ConfigError::new(other.to_string()),
    }
}

impl Plan {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, ConfigError> {
        if cfg.replicates() < 2 {
            return Err(ConfigError::at_key(
                "replicates",
                "at least 2 replicates are required",
            ));
        }
        if cfg.workers == Some(0) {
            return Err(ConfigError::at_key("workers", "workers must be positive"));
        }
        let work = match cfg.experiment {
            Experiment::SyntheticGrid => {
                let policies = cfg.bandit_policies()?;
                for p in &policies {
                    p.validate()
                        .map_err(|e| ConfigError::at_key("tuning", e.to_string()))?;
                }
                if cfg.budget.is_some() {
                    return Err(ConfigError::at_key("budget", "the grid uses a draw budget (n)"));
                }
                if cfg.grid.scales.is_empty() || cfg.grid.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
                    return Err(ConfigError::at_key("scales", "grid scales must lie in (0, 1]"));
                }
                let n = cfg.n.unwrap_or(10_000);
                if n < 2 {
                    return Err(ConfigError::at_key("n", "n must be at least 2"));
                }
                Work::Grid { policies, n }
            }
            _ => {
                let methods = cfg.methods()?;
                for m in &methods {
                    if let Method::Policy(p) = m {
                        p.validate()
                            .map_err(|e| ConfigError::at_key("tuning", e.to_string()))?;
                    }
                }
                let scenario = cfg.scenario()?;
                let prepared = scenario.prepare(cfg.seed).map_err(prepare_error)?;
                for m in &methods {
                    match m {
                        Method::Fixed { arm } if *arm >= prepared.n_arms() => {
                            return Err(ConfigError::at_key(
                                "policies",
                                format!("fixed-{arm}: there are {} arms", prepared.n_arms()),
                            ))
                        }
                        Method::Pmc { population } if *population == 0 => {
                            return Err(ConfigError::at_key(
                                "pmc_population",
                                "population must be positive",
                            ))
                        }
                        Method::Pmc { .. } if matches!(prepared.budget, Budget::Time { .. }) => {
                            return Err(ConfigError::at_key("policies", "pmc runs on a draw budget only"))
                        }
                        _ => {}
                    }
                }
                Work::Scenario { prepared, methods }
            }
        };
        Ok(Self { cfg, work })
    }

    fn settings(&self) -> EvalSettings {
        EvalSettings::new(self.cfg.replicates(), self.cfg.seed).with_execution(Execution::Parallel {
            workers: self.cfg.workers,
        })
    }

    fn metadata(&self, reference_mean: f64) -> ReportMetadata {
        ReportMetadata {
            experiment: self.cfg.experiment.label().to_string(),
            config_hash: self.cfg.config_hash(),
            seed: self.cfg.seed,
            replicates: self.cfg.replicates(),
            reference_mean,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn execute(&self) -> Result<()> {
        let out = &self.cfg.out;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        match &self.work {
            Work::Grid { policies, n } => self.run_grid(policies, *n, out),
            Work::Scenario { prepared, methods } => self.run_scenario(prepared, methods, out),
        }
    }

    fn run_grid(&self, policies: &[PolicyConfig], n: u64, out: &Path) -> Result<()> {
        let cells = policy_grid(&self.cfg.grid.scales, policies, n, &self.settings())?;
        let meta = self.metadata(0.5);
        let path = out.join("grid.csv");
        write_grid_csv(create(&path)?, &meta, &cells)?;
        for c in &cells {
            println!(
                "s1={:<4} s2={:<4} winner={:<6} margin={:.2} SE",
                c.s1,
                c.s2,
                c.winner.as_deref().unwrap_or("tie"),
                c.margin_se
            );
        }
        self.write_sidecar(out, &meta, &[], vec![path])
    }

    fn run_scenario(&self, prepared: &PreparedScenario, methods: &[Method], out: &Path) -> Result<()> {
        let settings = self.settings();
        let mut reports = Vec::with_capacity(methods.len());
        for m in methods {
            reports.push(
                prepared
                    .evaluate(m, &settings)
                    .with_context(|| format!("evaluating {}", m.label()))?,
            );
        }
        let losses = prepared
            .single_arm_losses(&settings)
            .context("computing single-arm baselines")?;
        for r in &mut reports {
            r.attach_baseline(&losses);
        }
        let meta = self.metadata(prepared.reference_mean);
        let report_path = out.join("report.csv");
        write_report_csv(create(&report_path)?, &meta, &reports, self.cfg.combiner)?;
        let mut files = vec![report_path];
        if self.cfg.traces {
            for m in methods {
                if matches!(m, Method::Pmc { .. }) {
                    continue;
                }
                let (_, run) = prepared.run_replicate(m, self.cfg.seed, 0, true)?;
                let run = run.expect("trace requested");
                let path = out.join(format!("trace_{}.csv", m.label()));
                let mut w = create(&path)?;
                writeln!(w, "{} replicate=0 method={}", meta.header_line(), m.label())?;
                run.write_trace_csv(&mut w)?;
                w.flush()?;
                files.push(path);
            }
        }
        for r in &reports {
            let row = r.final_row();
            println!(
                "{:<10} mse={:.6e} se={:.2e} weighted_mse={:.6e} regret={}",
                r.method,
                row.mse,
                row.mse_se,
                row.weighted_mse,
                row.regret.map_or("-".into(), |x| format!("{x:.4}"))
            );
        }
        self.write_sidecar(out, &meta, &reports, files)
    }

    fn write_sidecar(
        &self,
        out: &Path,
        meta: &ReportMetadata,
        reports: &[MethodReport],
        files: Vec<PathBuf>,
    ) -> Result<()> {
        #[derive(Serialize)]
        struct MethodSummary<'a> {
            method: &'a str,
            clamp_events: u64,
            saturations: u64,
            mean_draws: f64,
        }
        #[derive(Serialize)]
        struct Sidecar<'a> {
            #[serde(flatten)]
            meta: &'a ReportMetadata,
            files: Vec<String>,
            methods: Vec<MethodSummary<'a>>,
            config: ExperimentConfig,
        }
        let mut config = self.cfg.clone();
        config.out = PathBuf::new();
        config.workers = None;
        let sidecar = Sidecar {
            meta,
            files: files
                .iter()
                .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
                .collect(),
            methods: reports
                .iter()
                .map(|r| MethodSummary {
                    method: &r.method,
                    clamp_events: r.clamp_events,
                    saturations: r.saturations,
                    mean_draws: r.mean_draws,
                })
                .collect(),
            config,
        };
        let path = out.join("metadata.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &sidecar)?;
        writeln!(w)?;
        w.flush()?;
        println!("wrote {} files to {}", sidecar.files.len() + 1, out.display());
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}
