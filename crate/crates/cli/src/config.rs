//! Experiment configuration files.
//!
//! A config is a TOML document with six optional sections:
//!
//! ```toml
//! [model]
//! kind = "mlp"          # logistic | mlp
//! hidden = 32
//!
//! [dataset]
//! kind = "synthetic"    # synthetic | idx
//! train_samples = 2000
//! test_samples = 500
//! features = 10
//! classes = 2
//! spread = 1.0
//!
//! [training]
//! clients = 4
//! rounds = 30
//! tau = 5
//! eta = 0.01
//! batch_size = 64
//! momentum = 0.5
//!
//! [policy]
//! kind = "joint"        # lossless | fixed | joint | uplink-only | downlink-only | schedule | oracle
//! alpha = 0.004
//!
//! [energy]
//! e1 = 1.0
//! e2 = 1.0
//!
//! [run]
//! seed = 0
//! out_dir = "out"
//! ```
//!
//! Every key has a default. Input file paths (IDX files, oracle traces) are
//! resolved against the directory holding the config; `out_dir` is resolved
//! against the working directory.

use std::fmt;
use std::path::{Path, PathBuf};

use fedaq::allocation::AllocationPolicy;
use fedaq::engine::{FlConfig, LocalTrainConfig};
use fedaq::model::ModelSpec;
use serde::{Deserialize, Serialize};

/// Bit width used by `fixed` policies without an explicit `bits`.
pub const DEFAULT_FIXED_BITS: u8 = 8;
/// Range-to-bins ratio used by adaptive policies without an explicit value.
pub const DEFAULT_ALPHA: f64 = 0.004;

/// A configuration problem, located in its source file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path.display(), line, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKindName {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKindName,
    /// Hidden width of the MLP; ignored for logistic regression.
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKindName::Logistic,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub train_samples: usize,
    pub test_samples: usize,
    pub features: usize,
    pub classes: usize,
    pub spread: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: DatasetKind::Synthetic,
            train_samples: 2000,
            test_samples: 500,
            features: 10,
            classes: 2,
            spread: 1.0,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub clients: usize,
    pub rounds: usize,
    pub tau: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            clients: 4,
            rounds: 30,
            tau: 5,
            eta: 0.01,
            batch_size: 64,
            momentum: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Lossless,
    Fixed,
    Joint,
    UplinkOnly,
    DownlinkOnly,
    Schedule,
    /// Joint allocation whose `alpha` is solved from `energy.budget` and a
    /// recorded range trace.
    Oracle,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Lossless => "lossless",
            PolicyKind::Fixed => "fixed",
            PolicyKind::Joint => "joint",
            PolicyKind::UplinkOnly => "uplink-only",
            PolicyKind::DownlinkOnly => "downlink-only",
            PolicyKind::Schedule => "schedule",
            PolicyKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uplink_bits: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downlink_bits: Option<Vec<u8>>,
    /// ranges.csv from `trace`; without it, oracle mode runs a lossless pilot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::Joint,
            alpha: None,
            beta: None,
            bits: None,
            uplink_bits: None,
            downlink_bits: None,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    /// Uplink pJ per bit.
    pub e1: f64,
    /// Downlink pJ per bit.
    pub e2: f64,
    /// Total budget in pJ; oracle mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection {
            e1: 1.0,
            e2: 1.0,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub dataset: DatasetSection,
    pub training: TrainingSection,
    pub policy: PolicySection,
    pub energy: EnergySection,
    pub run: RunSection,
}

/// Where policy `alpha` comes from once the config is resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSource {
    Pilot,
    Trace(PathBuf),
}

/// A validated config ready to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// File the config was read from.
    pub path: PathBuf,
    /// Directory relative input paths are resolved against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// 1-based line of `key` inside `[section]`, or of the section header when the
/// key is absent.
pub fn locate(source: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(key) = key {
            let Some(rest) = line.strip_prefix(key) else {
                continue;
            };
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    header
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses TOML text; syntax and type errors carry the offending line.
    pub fn parse(source: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(source, s.start)),
            message: e.message().trim().to_string(),
        })
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        let config = Self::parse(&source, path)?;
        let loaded = LoadedConfig {
            config,
            path: path.to_path_buf(),
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        loaded.config.validate(&loaded, Some(&source))?;
        Ok(loaded)
    }

    /// Serialized form written next to results. Parsing it yields `self`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks every semantic constraint and that input files exist.
    pub fn validate(&self, at: &LoadedConfig, source: Option<&str>) -> Result<(), ConfigError> {
        let fail = |section: &str, key: Option<&str>, message: String| ConfigError {
            path: at.path.clone(),
            line: source.and_then(|s| locate(s, section, key)),
            message: match key {
                Some(k) => format!("{section}.{k}: {message}"),
                None => format!("[{section}]: {message}"),
            },
        };

        if self.model.kind == ModelKindName::Mlp && self.model.hidden == 0 {
            return Err(fail("model", Some("hidden"), "must be at least 1".into()));
        }

        let t = &self.training;
        if t.clients == 0 {
            return Err(fail(
                "training",
                Some("clients"),
                "must be at least 1".into(),
            ));
        }
        if t.tau == 0 {
            return Err(fail("training", Some("tau"), "must be at least 1".into()));
        }
        if !(t.eta.is_finite() && t.eta > 0.0) {
            return Err(fail(
                "training",
                Some("eta"),
                format!("must be positive, got {}", t.eta),
            ));
        }
        if t.batch_size == 0 {
            return Err(fail(
                "training",
                Some("batch_size"),
                "must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(fail(
                "training",
                Some("momentum"),
                format!("must be in [0, 1), got {}", t.momentum),
            ));
        }

        let ds = &self.dataset;
        match ds.kind {
            DatasetKind::Synthetic => {
                if ds.features == 0 {
                    return Err(fail(
                        "dataset",
                        Some("features"),
                        "must be at least 1".into(),
                    ));
                }
                if ds.classes < 2 {
                    return Err(fail(
                        "dataset",
                        Some("classes"),
                        "must be at least 2".into(),
                    ));
                }
                if !(ds.spread.is_finite() && ds.spread > 0.0) {
                    return Err(fail(
                        "dataset",
                        Some("spread"),
                        format!("must be positive, got {}", ds.spread),
                    ));
                }
                if ds.train_samples < t.clients.max(ds.classes) {
                    return Err(fail(
                        "dataset",
                        Some("train_samples"),
                        format!(
                            "{} samples cannot cover {} clients and {} classes",
                            ds.train_samples, t.clients, ds.classes
                        ),
                    ));
                }
                if ds.test_samples < ds.classes {
                    return Err(fail(
                        "dataset",
                        Some("test_samples"),
                        format!("must be at least {}", ds.classes),
                    ));
                }
            }
            DatasetKind::Idx => {
                for (key, p) in [
                    ("train_images", &ds.train_images),
                    ("train_labels", &ds.train_labels),
                    ("test_images", &ds.test_images),
                    ("test_labels", &ds.test_labels),
                ] {
                    let Some(p) = p else {
                        return Err(fail("dataset", None, format!("idx datasets need `{key}`")));
                    };
                    let full = at.resolve(p);
                    if !full.is_file() {
                        return Err(fail(
                            "dataset",
                            Some(key),
                            format!("file not found: {}", full.display()),
                        ));
                    }
                }
            }
        }

        self.validate_policy(at, &fail)?;

        let e = &self.energy;
        for (key, v) in [("e1", e.e1), ("e2", e.e2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(fail(
                    "energy",
                    Some(key),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if let Some(b) = e.budget {
            if !(b.is_finite() && b > 0.0) {
                return Err(fail(
                    "energy",
                    Some("budget"),
                    format!("must be positive, got {b}"),
                ));
            }
            if self.policy.kind != PolicyKind::Oracle {
                return Err(fail(
                    "energy",
                    Some("budget"),
                    "is only used by the oracle policy".into(),
                ));
            }
        }
        Ok(())
    }

    fn validate_policy(
        &self,
        at: &LoadedConfig,
        fail: &dyn Fn(&str, Option<&str>, String) -> ConfigError,
    ) -> Result<(), ConfigError> {
        let p = &self.policy;
        let kind = p.kind;
        let allowed: &[&str] = match kind {
            PolicyKind::Lossless => &[],
            PolicyKind::Fixed => &["bits"],
            PolicyKind::Joint | PolicyKind::UplinkOnly => &["alpha"],
            PolicyKind::DownlinkOnly => &["beta"],
            PolicyKind::Schedule => &["uplink_bits", "downlink_bits"],
            PolicyKind::Oracle => &["trace"],
        };
        let present = [
            ("alpha", p.alpha.is_some()),
            ("beta", p.beta.is_some()),
            ("bits", p.bits.is_some()),
            ("uplink_bits", p.uplink_bits.is_some()),
            ("downlink_bits", p.downlink_bits.is_some()),
            ("trace", p.trace.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(fail(
                    "policy",
                    Some(key),
                    format!("is not used by policy kind `{}`", kind.name()),
                ));
            }
        }
        let positive = |key: &str, v: Option<f64>| match v {
            Some(v) if !(v.is_finite() && v > 0.0) => Err(fail(
                "policy",
                Some(key),
                format!("must be positive, got {v}"),
            )),
            _ => Ok(()),
        };
        positive("alpha", p.alpha)?;
        positive("beta", p.beta)?;
        let width = |key: &str, b: u8| {
            if (1..=32).contains(&b) {
                Ok(())
            } else {
                Err(fail(
                    "policy",
                    Some(key),
                    format!("bit widths must be in 1..=32, got {b}"),
                ))
            }
        };
        if let Some(b) = p.bits {
            width("bits", b)?;
        }
        match kind {
            PolicyKind::DownlinkOnly if p.beta.is_none() => {
                return Err(fail(
                    "policy",
                    None,
                    "downlink-only policy needs `beta`".into(),
                ));
            }
            PolicyKind::Schedule => {
                for (key, list) in [
                    ("uplink_bits", &p.uplink_bits),
                    ("downlink_bits", &p.downlink_bits),
                ] {
                    let Some(list) = list else {
                        return Err(fail(
                            "policy",
                            None,
                            format!("schedule policy needs `{key}`"),
                        ));
                    };
                    if list.len() != self.training.rounds {
                        return Err(fail(
                            "policy",
                            Some(key),
                            format!(
                                "has {} entries, expected one per round ({})",
                                list.len(),
                                self.training.rounds
                            ),
                        ));
                    }
                    for &b in list {
                        width(key, b)?;
                    }
                }
            }
            PolicyKind::Oracle => {
                if self.energy.budget.is_none() {
                    return Err(fail(
                        "energy",
                        Some("budget"),
                        "oracle policy needs an energy budget".into(),
                    ));
                }
                if let Some(trace) = &p.trace {
                    let full = at.resolve(trace);
                    if !full.is_file() {
                        return Err(fail(
                            "policy",
                            Some("trace"),
                            format!("file not found: {}", full.display()),
                        ));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn model_spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        match self.model.kind {
            ModelKindName::Logistic => ModelSpec::logistic(input_dim, classes),
            ModelKindName::Mlp => ModelSpec::mlp(input_dim, self.model.hidden, classes),
        }
    }

    /// Allocation policy for every kind except oracle, which needs a solved
    /// `alpha` and returns `None`.
    pub fn policy(&self) -> Option<AllocationPolicy> {
        let p = &self.policy;
        Some(match p.kind {
            PolicyKind::Lossless => AllocationPolicy::Lossless,
            PolicyKind::Fixed => AllocationPolicy::Fixed {
                bits: p.bits.unwrap_or(DEFAULT_FIXED_BITS),
            },
            PolicyKind::Joint => AllocationPolicy::JointAdaptive {
                alpha: p.alpha.unwrap_or(DEFAULT_ALPHA),
            },
            PolicyKind::UplinkOnly => AllocationPolicy::UplinkOnlyAdaptive {
                alpha: p.alpha.unwrap_or(DEFAULT_ALPHA),
            },
            PolicyKind::DownlinkOnly => AllocationPolicy::DownlinkOnlyAdaptive { beta: p.beta? },
            PolicyKind::Schedule => AllocationPolicy::Schedule {
                uplink_bits: p.uplink_bits.clone()?,
                downlink_bits: p.downlink_bits.clone()?,
            },
            PolicyKind::Oracle => return None,
        })
    }

    pub fn oracle_source(&self, at: &LoadedConfig) -> Option<OracleSource> {
        (self.policy.kind == PolicyKind::Oracle).then(|| match &self.policy.trace {
            Some(p) => OracleSource::Trace(at.resolve(p)),
            None => OracleSource::Pilot,
        })
    }

    /// Engine config with `policy` substituted.
    pub fn fl_config(&self, policy: AllocationPolicy) -> FlConfig {
        let t = &self.training;
        FlConfig {
            rounds: t.rounds,
            clients: t.clients,
            local: LocalTrainConfig {
                tau: t.tau,
                eta: t.eta,
                batch_size: t.batch_size,
                momentum: t.momentum,
            },
            policy,
            e1: self.energy.e1,
            e2: self.energy.e2,
            seed: self.run.seed,
            quantizer_seed: None,
        }
    }
}
