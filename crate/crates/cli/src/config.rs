//! Run configuration read from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use epfens::learner::LearnerConfig;
use epfens::market::{ProfitCheck, RiskConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown averaging method '{0}' (expected qEns or CRPS)")]
    UnknownAveraging(String),
    #[error("ensemble '{ensemble}' lists expert '{expert}' more than once")]
    DuplicateExpert { ensemble: String, expert: String },
    #[error("ensemble '{ensemble}' references unknown expert '{expert}'")]
    UnknownExpert { ensemble: String, expert: String },
    #[error("ensemble '{0}' has no experts")]
    EmptyEnsemble(String),
    #[error("ensemble '{0}' needs at least 2 experts for CRPS learning")]
    TooFewExperts(String),
    #[error("duplicate ensemble name '{0}'")]
    DuplicateEnsemble(String),
    #[error("invalid ensemble name '{0}' (use letters, digits, '_', '-' or '.')")]
    BadName(String),
    #[error("alpha {0} is not on the percentile grid")]
    BadAlpha(f64),
    #[error("invalid naive hours {0}..{1} (need 1 <= buy < sell <= 24)")]
    BadHours(usize, usize),
    #[error("reference model '{0}' is neither an ensemble nor one of its experts")]
    UnknownReference(String),
    #[error("no price file: set `prices` or `data_dir`")]
    NoPrices,
    #[error("'{0}' names both an ensemble and an expert")]
    NameClash(String),
    #[error("invalid date '{0}' (expected YYYY-MM-DD)")]
    BadDate(String),
    #[error("empty period {0}..{1}")]
    EmptyPeriod(NaiveDate, NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    QEns,
    Crps,
}

impl FromStr for Averaging {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qens" => Ok(Averaging::QEns),
            "crps" => Ok(Averaging::Crps),
            _ => Err(ConfigError::UnknownAveraging(s.to_string())),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::QEns => "qEns",
            Averaging::Crps => "CRPS",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub name: String,
    pub averaging: Averaging,
    pub experts: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    name: String,
    averaging: String,
    experts: Vec<String>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}

fn default_naive_hours() -> [usize; 2] {
    [3, 19]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data_dir: Option<PathBuf>,
    prices: Option<PathBuf>,
    start: Option<String>,
    end: Option<String>,
    #[serde(default)]
    experts: BTreeMap<String, PathBuf>,
    #[serde(default)]
    ensembles: Vec<RawEnsemble>,
    #[serde(default)]
    standard_ensembles: bool,
    #[serde(default = "default_alphas")]
    alpha_grid: Vec<f64>,
    #[serde(default)]
    profit_check: ProfitCheck,
    reference: Option<String>,
    #[serde(default = "default_naive_hours")]
    naive_hours: [usize; 2],
    #[serde(default)]
    learner: LearnerConfig,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default = "yes")]
    write_weight_history: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub prices: PathBuf,
    /// Inclusive bounds applied to all inputs.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// Every expert referenced by an ensemble, with its file.
    pub experts: BTreeMap<String, PathBuf>,
    pub ensembles: Vec<EnsembleSpec>,
    pub alpha_grid: Vec<f64>,
    pub profit_check: ProfitCheck,
    pub reference: Option<String>,
    pub naive_hours: (usize, usize),
    pub learner: LearnerConfig,
    pub out_dir: PathBuf,
    /// Seed for the synthetic dataset generator.
    pub seed: u64,
    pub write_weight_history: bool,
}

pub const DDNN_N: [&str; 4] = ["DDNN_N_1", "DDNN_N_2", "DDNN_N_3", "DDNN_N_4"];
pub const DDNN_JSU: [&str; 4] = ["DDNN_JSU_1", "DDNN_JSU_2", "DDNN_JSU_3", "DDNN_JSU_4"];
pub const LEAR: [&str; 2] = ["LEAR_QRA", "LEAR_QRM"];
pub const DNN: [&str; 2] = ["DNN_QRA", "DNN_QRM"];

/// The twelve experts of the standard pool.
pub fn standard_experts() -> Vec<&'static str> {
    [&DDNN_N[..], &DDNN_JSU[..], &LEAR[..], &DNN[..]].concat()
}

/// Ensembles named `DDNN_{distribution}_{averaging}[_{extra}]`: four DDNN
/// forecasts of one distribution, optionally with the two LEAR or the two
/// DNN quantile-regression forecasts.
pub fn standard_ensembles() -> Vec<EnsembleSpec> {
    let mut out = Vec::new();
    for (dist, ddnn) in [("N", &DDNN_N), ("JSU", &DDNN_JSU)] {
        for averaging in [Averaging::QEns, Averaging::Crps] {
            for (suffix, extra) in [("", &[][..]), ("_LEAR", &LEAR[..]), ("_DNN", &DNN[..])] {
                out.push(EnsembleSpec {
                    name: format!("DDNN_{dist}_{averaging}{suffix}"),
                    averaging,
                    experts: [&ddnn[..], extra].concat().into_iter().map(String::from).collect(),
                });
            }
        }
    }
    out
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses a config; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let data_dir = raw.data_dir.as_deref().map(resolve);

        let mut ensembles = Vec::new();
        if raw.standard_ensembles {
            ensembles.extend(standard_ensembles());
        }
        for e in raw.ensembles {
            ensembles.push(EnsembleSpec {
                averaging: e.averaging.parse()?,
                name: e.name,
                experts: e.experts,
            });
        }

        let listed: BTreeMap<String, PathBuf> = raw.experts.into_iter().map(|(name, p)| (name, resolve(&p))).collect();
        let mut experts = BTreeMap::new();
        let mut names = BTreeSet::new();
        for e in &ensembles {
            if !valid_name(&e.name) {
                return Err(ConfigError::BadName(e.name.clone()));
            }
            if !names.insert(e.name.clone()) {
                return Err(ConfigError::DuplicateEnsemble(e.name.clone()));
            }
            if e.experts.is_empty() {
                return Err(ConfigError::EmptyEnsemble(e.name.clone()));
            }
            if e.averaging == Averaging::Crps && e.experts.len() < 2 {
                return Err(ConfigError::TooFewExperts(e.name.clone()));
            }
            let mut seen = BTreeSet::new();
            for x in &e.experts {
                if !seen.insert(x) {
                    return Err(ConfigError::DuplicateExpert {
                        ensemble: e.name.clone(),
                        expert: x.clone(),
                    });
                }
                let path = match (listed.get(x), &data_dir) {
                    (Some(p), _) => p.clone(),
                    (None, Some(dir)) => dir.join(format!("{x}.csv")),
                    (None, None) => {
                        return Err(ConfigError::UnknownExpert {
                            ensemble: e.name.clone(),
                            expert: x.clone(),
                        })
                    }
                };
                experts.insert(x.clone(), path);
            }
        }

        if let Some(clash) = names.iter().find(|n| experts.contains_key(*n)) {
            return Err(ConfigError::NameClash(clash.clone()));
        }
        for &a in &raw.alpha_grid {
            RiskConfig::new(a).map_err(|_| ConfigError::BadAlpha(a))?;
        }
        let [buy, sell] = raw.naive_hours;
        if !(1 <= buy && buy < sell && sell <= 24) {
            return Err(ConfigError::BadHours(buy, sell));
        }
        if let Some(r) = &raw.reference {
            if !names.contains(r) && !experts.contains_key(r) {
                return Err(ConfigError::UnknownReference(r.clone()));
            }
        }
        let prices = match (raw.prices, &data_dir) {
            (Some(p), _) => resolve(&p),
            (None, Some(dir)) => dir.join("prices.csv"),
            (None, None) => return Err(ConfigError::NoPrices),
        };
        let date = |s: Option<String>| {
            s.map(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d").map_err(|_| ConfigError::BadDate(s)))
                .transpose()
        };
        let (start, end) = (date(raw.start)?, date(raw.end)?);
        if let (Some(a), Some(b)) = (start, end) {
            if a > b {
                return Err(ConfigError::EmptyPeriod(a, b));
            }
        }
        Ok(Self {
            data_dir,
            prices,
            start,
            end,
            experts,
            ensembles,
            alpha_grid: raw.alpha_grid,
            profit_check: raw.profit_check,
            reference: raw.reference,
            naive_hours: (buy, sell),
            learner: raw.learner,
            out_dir: resolve(&raw.out_dir),
            seed: raw.seed,
            write_weight_history: raw.write_weight_history,
        })
    }

    /// Experts in first-use order across ensembles.
    pub fn expert_names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.ensembles
            .iter()
            .flat_map(|e| e.experts.iter())
            .filter(|x| seen.insert(x.as_str()))
            .cloned()
            .collect()
    }
}
