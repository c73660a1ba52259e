//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::synth::{SyntheticDriftSpec, WINDOW_LENGTH};
use crate::error::{Error, Result};
use crate::iem::Design;
use crate::models::ModelConfig;
use crate::train::{Strategy, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticDriftSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// `0` disables k-core filtering.
    pub k_core: usize,
    pub warmup_end: i64,
    pub period_length: i64,
    pub periods: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Evaluation cutoffs; the first drives early stopping and the report.
    pub ks: Vec<usize>,
    pub out: PathBuf,
}

const KEYS: &[&str] = &[
    "data",
    "k_core",
    "warmup_end",
    "period_length",
    "periods",
    "model",
    "layers",
    "dim",
    "leaky_relu_slope",
    "learning_rate",
    "l2",
    "lambda",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "design",
    "aggregation",
    "strategy",
    "k",
    "exclude_seen",
    "out",
    "synth_users",
    "synth_items",
    "synth_dim",
    "synth_phases",
    "synth_drift",
    "synth_stable",
    "synth_strength",
    "synth_interactions",
];

fn config_err(key: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {message}"))
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| config_err(key, format!("cannot parse `{raw}`: {e}")))
}

fn design_from(raw: &str) -> Result<Design> {
    match raw {
        "1" => Ok(Design::Gated),
        "2" => Ok(Design::Linear),
        other => Err(config_err("design", format!("expected 1 or 2, got `{other}`"))),
    }
}

fn design_name(d: Design) -> &'static str {
    match d {
        Design::Gated => "1",
        Design::Linear => "2",
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !KEYS.contains(&key) {
                return Err(config_err(key, "unknown key"));
            }
            if pairs.iter().any(|(k, _)| k == key) {
                return Err(config_err(key, "given more than once"));
            }
            pairs.push((key.to_string(), raw.to_string()));
        }
        let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

        let mut train = TrainConfig::default();
        let mut model = ModelConfig::default();
        macro_rules! set {
            ($target:expr, $key:literal) => {
                if let Some(raw) = get($key) {
                    $target = value($key, raw)?;
                }
            };
        }
        set!(model.kind, "model");
        set!(model.layers, "layers");
        set!(model.dim, "dim");
        set!(model.leaky_relu_slope, "leaky_relu_slope");
        set!(train.learning_rate, "learning_rate");
        set!(train.l2, "l2");
        set!(train.lambda, "lambda");
        set!(train.batch_size, "batch_size");
        set!(train.max_epochs, "max_epochs");
        set!(train.patience, "patience");
        set!(train.seed, "seed");
        set!(train.aggregation, "aggregation");
        set!(train.strategy, "strategy");
        set!(train.exclude_seen, "exclude_seen");
        if let Some(raw) = get("design") {
            train.design = design_from(raw)?;
        }
        let ks: Vec<usize> = match get("k") {
            Some(raw) => raw
                .split(',')
                .map(|p| value("k", p.trim()))
                .collect::<Result<_>>()?,
            None => vec![20],
        };
        if ks.is_empty() || ks.contains(&0) {
            return Err(config_err("k", "cutoffs must be positive"));
        }
        train.validation_k = ks[0];

        let mut periods = 6;
        set!(periods, "periods");
        let data = match get("data") {
            None => return Err(config_err("data", "missing (give a TSV path or `synthetic`)")),
            Some("synthetic") => {
                let mut spec = SyntheticDriftSpec {
                    periods,
                    phases: periods + 1,
                    seed: train.seed,
                    ..SyntheticDriftSpec::default()
                };
                set!(spec.user_count, "synth_users");
                set!(spec.item_count, "synth_items");
                set!(spec.dim, "synth_dim");
                set!(spec.phases, "synth_phases");
                set!(spec.drift, "synth_drift");
                set!(spec.stable_weight, "synth_stable");
                set!(spec.strength, "synth_strength");
                set!(spec.interactions_per_period, "synth_interactions");
                DataSource::Synthetic(spec)
            }
            Some(path) => {
                if let Some(k) = KEYS.iter().find(|k| k.starts_with("synth_") && get(k).is_some()) {
                    return Err(config_err(k, "only valid with `data = synthetic`"));
                }
                DataSource::File(PathBuf::from(path))
            }
        };
        let synthetic = matches!(data, DataSource::Synthetic(_));
        let mut warmup_end = if synthetic { WINDOW_LENGTH } else { 0 };
        let mut period_length = if synthetic { WINDOW_LENGTH } else { 0 };
        set!(warmup_end, "warmup_end");
        set!(period_length, "period_length");
        if !synthetic && get("warmup_end").is_none() {
            return Err(config_err("warmup_end", "required for file data"));
        }
        if !synthetic && get("period_length").is_none() {
            return Err(config_err("period_length", "required for file data"));
        }
        let mut k_core = 0;
        set!(k_core, "k_core");
        let mut out = PathBuf::from("runs/default");
        set!(out, "out");

        let config = ExperimentConfig {
            data,
            k_core,
            warmup_end,
            period_length,
            periods,
            model,
            train,
            ks,
            out,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Err(msg) = self.model.validate() {
            let key = ["layers", "dim", "leaky_relu_slope"]
                .into_iter()
                .find(|k| msg.starts_with(k))
                .unwrap_or("model");
            return Err(config_err(key, msg));
        }
        self.train.validate().map_err(|(key, msg)| config_err(key, msg))?;
        if self.periods < 3 {
            return Err(config_err("periods", "need at least 3 (retrain, validate, test)"));
        }
        if self.period_length <= 0 {
            return Err(config_err("period_length", "must be > 0"));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|(key, msg)| config_err(key, msg))?;
            if spec.periods != self.periods {
                return Err(config_err("periods", "must match the synthetic period count"));
            }
        }
        Ok(())
    }

    /// Effective configuration, one key per line; parses back to `self`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.data {
            DataSource::File(p) => line("data", p.display().to_string()),
            DataSource::Synthetic(_) => line("data", "synthetic".into()),
        }
        line("k_core", self.k_core.to_string());
        line("warmup_end", self.warmup_end.to_string());
        line("period_length", self.period_length.to_string());
        line("periods", self.periods.to_string());
        line("model", self.model.kind.to_string());
        line("layers", self.model.layers.to_string());
        line("dim", self.model.dim.to_string());
        line("leaky_relu_slope", self.model.leaky_relu_slope.to_string());
        let t = &self.train;
        line("learning_rate", t.learning_rate.to_string());
        line("l2", t.l2.to_string());
        line("lambda", t.lambda.to_string());
        line("batch_size", t.batch_size.to_string());
        line("max_epochs", t.max_epochs.to_string());
        line("patience", t.patience.to_string());
        line("seed", t.seed.to_string());
        line("design", design_name(t.design).into());
        line("aggregation", t.aggregation.to_string());
        line("strategy", t.strategy.to_string());
        line(
            "k",
            self.ks.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        line("exclude_seen", t.exclude_seen.to_string());
        line("out", self.out.display().to_string());
        if let DataSource::Synthetic(spec) = &self.data {
            line("synth_users", spec.user_count.to_string());
            line("synth_items", spec.item_count.to_string());
            line("synth_dim", spec.dim.to_string());
            line("synth_phases", spec.phases.to_string());
            line("synth_drift", spec.drift.to_string());
            line("synth_stable", spec.stable_weight.to_string());
            line("synth_strength", spec.strength.to_string());
            line("synth_interactions", spec.interactions_per_period.to_string());
        }
        s
    }

    /// SHA-256 of the echo, excluding the output directory.
    pub fn hash(&self) -> String {
        let echo: String = self
            .echo()
            .lines()
            .filter(|l| !l.starts_with("out ="))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(echo.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies a seed override to training and synthetic data alike.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        if let DataSource::Synthetic(spec) = &mut self.data {
            spec.seed = seed;
        }
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.train.strategy = strategy;
        self
    }

    pub fn with_out(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = out.into();
        self
    }
}
