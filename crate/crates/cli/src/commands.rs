//! The `run`, `compare` and `trace` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedaq::allocation::{alpha_joint, AllocationPolicy, EnergyParams};
use fedaq::data::{idx_load, synth_generate, Dataset};
use fedaq::energy::{energy_to_reach, Crossing};
use fedaq::engine::{oracle_alpha, run_federated, RunOutput};
use fedaq::model::ModelSpec;
use fedaq::rng::derive_seed;

use crate::config::{ConfigError, DatasetKind, ExperimentConfig, LoadedConfig, OracleSource};
use crate::report::{self, Summary};
use crate::trend::{least_squares_slope, spearman};
use crate::CliError;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Loads a config and applies overrides.
pub fn load(path: &Path, ov: &Overrides) -> Result<LoadedConfig, CliError> {
    let mut loaded = ExperimentConfig::load(path)?;
    if let Some(out) = &ov.out_dir {
        loaded.config.run.out_dir = out.clone();
    }
    if let Some(seed) = ov.seed {
        loaded.config.run.seed = seed;
    }
    Ok(loaded)
}

/// Train and test sets of a config. Synthetic sets are drawn from seeds
/// derived from `run.seed`.
pub fn load_datasets(at: &LoadedConfig) -> Result<(Dataset, Dataset), CliError> {
    let ds = &at.config.dataset;
    match ds.kind {
        DatasetKind::Synthetic => {
            let seed = at.config.run.seed;
            let train = synth_generate(
                ds.train_samples,
                ds.features,
                ds.classes,
                ds.spread,
                derive_seed(&[seed, 1]),
            )?;
            let test = synth_generate(
                ds.test_samples,
                ds.features,
                ds.classes,
                ds.spread,
                derive_seed(&[seed, 2]),
            )?;
            Ok((train, test))
        }
        DatasetKind::Idx => {
            let path = |p: &Option<PathBuf>| at.resolve(p.as_deref().unwrap_or(Path::new("")));
            let train = idx_load(&path(&ds.train_images), &path(&ds.train_labels))?;
            let test = idx_load(&path(&ds.test_images), &path(&ds.test_labels))?;
            Ok((train, test))
        }
    }
}

/// A finished run and how its policy was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub output: RunOutput,
    pub policy: AllocationPolicy,
    pub spec: ModelSpec,
    pub oracle_alpha: Option<f64>,
}

/// Runs a loaded config without writing anything. `policy` replaces the
/// configured policy when given.
pub fn execute(at: &LoadedConfig, policy: Option<AllocationPolicy>) -> Result<Outcome, CliError> {
    let cfg = &at.config;
    let (train, test) = load_datasets(at)?;
    let spec = cfg.model_spec(
        train.num_features(),
        train.num_classes().max(test.num_classes()),
    );
    let mut oracle = None;
    let policy = match policy.or_else(|| cfg.policy()) {
        Some(p) => p,
        None => {
            let budget = cfg
                .energy
                .budget
                .expect("validated: oracle mode has a budget");
            let base = cfg.fl_config(AllocationPolicy::Lossless);
            let alpha = match cfg.oracle_source(at) {
                Some(OracleSource::Trace(path)) => {
                    let trace = report::read_ranges(&path)?;
                    if trace.rounds() != cfg.training.rounds
                        || trace.clients() != cfg.training.clients
                    {
                        return Err(ConfigError {
                            path: at.path.clone(),
                            line: None,
                            message: format!(
                                "trace {} has {} rounds x {} clients, config needs {} x {}",
                                path.display(),
                                trace.rounds(),
                                trace.clients(),
                                cfg.training.rounds,
                                cfg.training.clients
                            ),
                        }
                        .into());
                    }
                    let ep = EnergyParams {
                        e1: cfg.energy.e1,
                        e2: cfg.energy.e2,
                        budget,
                        d: spec.param_count(),
                        n: cfg.training.clients,
                        k: cfg.training.rounds,
                    };
                    alpha_joint(&trace, &ep)?
                }
                _ => oracle_alpha(&base, spec, &train, &test, budget)?.0,
            };
            oracle = Some(alpha);
            AllocationPolicy::JointAdaptive { alpha }
        }
    };
    let output = run_federated(&cfg.fl_config(policy.clone()), spec, &train, &test)?;
    Ok(Outcome {
        output,
        policy,
        spec,
        oracle_alpha: oracle,
    })
}

pub fn summarize(at: &LoadedConfig, o: &Outcome) -> Summary {
    let last = o.output.history.last();
    let totals = o.output.ledger.total(None);
    Summary {
        policy: report::describe_policy(&o.policy),
        oracle_alpha: o.oracle_alpha,
        energy_budget_pj: at.config.energy.budget,
        rounds: o.output.history.len(),
        clients: at.config.training.clients,
        params: o.spec.param_count(),
        final_train_loss: last.map(|r| r.train_loss),
        final_test_accuracy: last.map(|r| r.test_accuracy),
        final_test_loss: last.map(|r| r.test_loss),
        best_test_accuracy: o
            .output
            .history
            .iter()
            .map(|r| r.test_accuracy)
            .reduce(f64::max),
        energy_uplink_pj: totals.uplink,
        energy_downlink_pj: totals.downlink,
        energy_total_pj: totals.total,
        clamp_events: o.output.history.iter().map(|r| r.clamp_events).sum(),
        batch_clamped: o.output.history.iter().any(|r| r.batch_clamped),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes metrics.csv, ledger.csv, config.toml and summary.json into `dir`.
pub fn write_run(dir: &Path, at: &LoadedConfig, o: &Outcome) -> Result<Summary, CliError> {
    create_dir(dir)?;
    report::write_metrics(&dir.join("metrics.csv"), &o.output)?;
    report::write_ledger(&dir.join("ledger.csv"), &o.output)?;
    report::write_text(&dir.join("config.toml"), &at.config.echo())?;
    let summary = summarize(at, o);
    report::write_summary(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `run <config>`.
pub fn cmd_run(path: &Path, ov: &Overrides) -> Result<Summary, CliError> {
    let at = load(path, ov)?;
    let outcome = execute(&at, None)?;
    write_run(&at.config.run.out_dir, &at, &outcome)
}

/// Target metric for `compare`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Test accuracy at least this value.
    Accuracy(f64),
    /// Test loss at most this value.
    Loss(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub policy: String,
    pub final_accuracy: Option<f64>,
    /// First round meeting the threshold.
    pub round: Option<usize>,
    pub energy_to_threshold: Option<f64>,
    /// `(E_base - E) / E_base` against the first config.
    pub saving: Option<f64>,
    pub total_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: Threshold,
    pub rows: Vec<ComparisonRow>,
}

fn same_setup(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.model == b.model && a.dataset == b.dataset && a.run.seed == b.run.seed
}

/// Builds the comparison table from finished runs; the first is the baseline.
pub fn compare_outcomes(
    labels: &[String],
    outcomes: &[Outcome],
    threshold: Option<Threshold>,
) -> Comparison {
    let threshold = threshold.unwrap_or_else(|| {
        let weakest = outcomes
            .iter()
            .map(|o| {
                o.output
                    .history
                    .iter()
                    .map(|r| r.test_accuracy)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        Threshold::Accuracy(weakest)
    });
    let reach = |o: &Outcome| -> (Option<usize>, Option<f64>) {
        let (series, value, crossing): (Vec<f64>, f64, Crossing) = match threshold {
            Threshold::Accuracy(t) => (
                o.output.history.iter().map(|r| r.test_accuracy).collect(),
                t,
                Crossing::AtLeast,
            ),
            Threshold::Loss(t) => (
                o.output.history.iter().map(|r| r.test_loss).collect(),
                t,
                Crossing::AtMost,
            ),
        };
        let round = series.iter().position(|&v| match crossing {
            Crossing::AtLeast => v >= value,
            Crossing::AtMost => v <= value,
        });
        (
            round,
            energy_to_reach(&o.output.ledger, &series, value, crossing),
        )
    };
    let base = outcomes.first().map(|o| reach(o).1).unwrap_or(None);
    let rows = labels
        .iter()
        .zip(outcomes)
        .map(|(label, o)| {
            let (round, energy) = reach(o);
            let saving = match (base, energy) {
                (Some(b), Some(e)) if b > 0.0 => Some((b - e) / b),
                _ => None,
            };
            ComparisonRow {
                label: label.clone(),
                policy: report::describe_policy(&o.policy),
                final_accuracy: o.output.history.last().map(|r| r.test_accuracy),
                round,
                energy_to_threshold: energy,
                saving,
                total_energy: o.output.ledger.total(None).total,
            }
        })
        .collect();
    Comparison { threshold, rows }
}

const NOT_REACHED: &str = "not reached";

impl Comparison {
    fn threshold_text(&self) -> String {
        match self.threshold {
            Threshold::Accuracy(t) => format!("test accuracy >= {t}"),
            Threshold::Loss(t) => format!("test loss <= {t}"),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
        let wrap = |e| CliError::csv(path, e);
        let (metric, value) = match self.threshold {
            Threshold::Accuracy(t) => ("test_acc", t),
            Threshold::Loss(t) => ("test_loss", t),
        };
        w.write_record([
            "config",
            "policy",
            "final_test_acc",
            "threshold_metric",
            "threshold",
            "threshold_round",
            "energy_to_threshold_pj",
            "saving_pct",
            "total_energy_pj",
        ])
        .map_err(wrap)?;
        let opt = |v: Option<String>| v.unwrap_or_else(|| NOT_REACHED.to_string());
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.policy.clone(),
                r.final_accuracy.map_or(String::new(), |a| a.to_string()),
                metric.to_string(),
                value.to_string(),
                opt(r.round.map(|m| m.to_string())),
                opt(r.energy_to_threshold.map(|e| e.to_string())),
                opt(r.saving.map(|s| (100.0 * s).to_string())),
                r.total_energy.to_string(),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    /// Fixed-width table for the terminal.
    pub fn render(&self) -> String {
        let mut s = format!("threshold: {}\n", self.threshold_text());
        let _ = writeln!(
            s,
            "{:<20} {:<28} {:>9} {:>12} {:>16} {:>12}",
            "config", "policy", "final_acc", "round", "energy_pJ", "saving"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:<28} {:>9} {:>12} {:>16} {:>12}",
                r.label,
                r.policy,
                r.final_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                r.round.map_or(NOT_REACHED.into(), |m| m.to_string()),
                r.energy_to_threshold
                    .map_or(NOT_REACHED.into(), |e| format!("{e:.4e}")),
                r.saving
                    .map_or(NOT_REACHED.into(), |v| format!("{:.2}%", 100.0 * v)),
            );
        }
        s
    }
}

/// `compare <config>...`: runs every config into `<out>/<index>-<stem>/` and
/// writes `<out>/comparison.csv`. `<out>` defaults to the first config's
/// `out_dir`.
pub fn cmd_compare(
    paths: &[PathBuf],
    threshold: Option<Threshold>,
    ov: &Overrides,
) -> Result<Comparison, CliError> {
    if paths.len() < 2 {
        return Err(CliError::Input("compare needs at least two configs".into()));
    }
    let loaded = paths
        .iter()
        .map(|p| load(p, ov))
        .collect::<Result<Vec<_>, _>>()?;
    for at in &loaded[1..] {
        if !same_setup(&loaded[0].config, &at.config) {
            return Err(ConfigError {
                path: at.path.clone(),
                line: None,
                message: format!(
                    "model, dataset and seed must match {} to be compared",
                    loaded[0].path.display()
                ),
            }
            .into());
        }
    }
    let out = loaded[0].config.run.out_dir.clone();
    let mut labels = Vec::new();
    let mut outcomes = Vec::new();
    for (i, at) in loaded.iter().enumerate() {
        let stem = at
            .path
            .file_stem()
            .map_or("config".into(), |s| s.to_string_lossy().into_owned());
        let outcome = execute(at, None)?;
        write_run(&out.join(format!("{i}-{stem}")), at, &outcome)?;
        labels.push(stem);
        outcomes.push(outcome);
    }
    let cmp = compare_outcomes(&labels, &outcomes, threshold);
    create_dir(&out)?;
    cmp.write_csv(&out.join("comparison.csv"))?;
    Ok(cmp)
}

/// Trend of one range series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    pub slope: f64,
    pub spearman: Option<f64>,
}

impl Trend {
    pub fn of(rounds: &[f64], values: &[f64]) -> Self {
        Trend {
            slope: least_squares_slope(rounds, values),
            spearman: spearman(rounds, values),
        }
    }

    pub fn direction(&self) -> &'static str {
        if self.slope > 0.0 {
            "increasing"
        } else if self.slope < 0.0 {
            "decreasing"
        } else {
            "flat"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    pub output: RunOutput,
    pub uplink: Trend,
    pub downlink: Trend,
}

/// Trends of the mean uplink range and the downlink range over rounds
/// `skip..`.
pub fn range_trends(output: &RunOutput, skip: usize) -> (Trend, Trend) {
    let h = output.history.get(skip..).unwrap_or(&[]);
    let rounds: Vec<f64> = h.iter().map(|r| r.round as f64).collect();
    let up: Vec<f64> = h.iter().map(|r| r.mean_uplink_range()).collect();
    let dn: Vec<f64> = h.iter().map(|r| r.downlink_range).collect();
    (Trend::of(&rounds, &up), Trend::of(&rounds, &dn))
}

/// `trace <config>`: a lossless run whose ranges go to `<out>/ranges.csv`.
pub fn cmd_trace(path: &Path, skip: usize, ov: &Overrides) -> Result<TraceReport, CliError> {
    let at = load(path, ov)?;
    let outcome = execute(&at, Some(AllocationPolicy::Lossless))?;
    let dir = &at.config.run.out_dir;
    create_dir(dir)?;
    report::write_ranges(&dir.join("ranges.csv"), &outcome.output.history)?;
    let (uplink, downlink) = range_trends(&outcome.output, skip);
    Ok(TraceReport {
        output: outcome.output,
        uplink,
        downlink,
    })
}
