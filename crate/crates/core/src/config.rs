//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys and duplicate keys
//! are errors. Every key is optional; missing keys keep their defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{Clusterer, Extractor};
use crate::error::{Error, Result};
use crate::metrics::NmiNormalization;
use crate::pipeline::TrainConfig;
use crate::synthetic::SyntheticSpec;

/// Parses the text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = k.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if pairs.iter().any(|(seen, _)| *seen == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
        pairs.push((key, v.trim().to_owned()));
    }
    Ok(pairs)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Applies one setting. Returns `false` if the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => {
                let e = parse(key, value)?;
                self.pretrain_epochs = e;
                self.finetune_epochs = e;
            }
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "finetune_lr" => self.finetune_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "num_embeddings" => self.num_embeddings = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "discriminator_hidden" => self.discriminator_hidden = parse(key, value)?,
            "commitment_cost" | "beta" => self.commitment_cost = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "prune_threshold" => {
                self.prune_threshold = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "freeze_generator" => self.freeze_generator = parse_bool(key, value)?,
            "cold_start" => self.cold_start = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every field, one per line, in a form [`TrainConfig::from_text`] reads
    /// back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("pretrain_epochs", self.pretrain_epochs.to_string());
        put("finetune_epochs", self.finetune_epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("pretrain_lr", self.pretrain_lr.to_string());
        put("finetune_lr", self.finetune_lr.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("num_embeddings", self.num_embeddings.to_string());
        put("latent_dim", self.latent_dim.to_string());
        put("encoder_hidden", self.encoder_hidden.to_string());
        put("discriminator_hidden", self.discriminator_hidden.to_string());
        put("commitment_cost", self.commitment_cost.to_string());
        put("dropout", self.dropout.to_string());
        put("alpha", self.alpha.to_string());
        put("lambda", self.lambda.to_string());
        put("num_classes", self.num_classes.to_string());
        put(
            "prune_threshold",
            self.prune_threshold.map_or("auto".into(), |v| v.to_string()),
        );
        put("freeze_generator", self.freeze_generator.to_string());
        put("cold_start", self.cold_start.to_string());
        put("seed", self.seed.to_string());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown training key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SyntheticSpec {
    /// Applies one setting. Returns `false` if the key is not a synthetic-data key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "clusters" => self.num_clusters = parse(key, value)?,
            "samples_per_cluster" => self.samples_per_cluster = parse(key, value)?,
            "planted_dim" => self.latent_dim = parse(key, value)?,
            "features" => self.output_dim = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "nonlinear" => self.nonlinear = parse_bool(key, value)?,
            "hazards" => self.hazards = parse_list(key, value)?,
            "censoring_rate" => self.censoring_rate = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// What a run clusters with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    VqRim,
    Baseline(Extractor, Clusterer),
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::VqRim => f.write_str("vq-rim"),
            Self::Baseline(e, c) => write!(f, "{e}+{c}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "vq-rim" || s == "vq+rim" {
            return Ok(Self::VqRim);
        }
        let (e, c) = s
            .split_once('+')
            .ok_or_else(|| Error::Config(format!("method `{s}` is neither `vq-rim` nor `extractor+clusterer`")))?;
        Ok(Self::Baseline(e.parse()?, c.parse()?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        expression: PathBuf,
        survival: Option<PathBuf>,
        labels: Option<PathBuf>,
    },
}

/// Everything `run_experiment` needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub method: Method,
    /// Z-score each feature before training.
    pub normalize: bool,
    /// Fixed K for classic clusterers; otherwise chosen by the elbow.
    pub k: Option<usize>,
    pub k_candidates: Vec<usize>,
    pub nmi_normalization: NmiNormalization,
    pub plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            method: Method::VqRim,
            normalize: true,
            k: None,
            k_candidates: crate::experiment::DEFAULT_K_CANDIDATES.to_vec(),
            nmi_normalization: NmiNormalization::Arithmetic,
            plots: true,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_pairs(&parse_pairs(&text)?, base)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?, Path::new("."))
    }

    fn from_pairs(pairs: &[(String, String)], base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut spec = SyntheticSpec::default();
        let mut expression = None;
        let mut survival = None;
        let mut labels = None;
        for (k, v) in pairs {
            let (k, v) = (k.as_str(), v.as_str());
            if cfg.train.set(k, v)? || spec.set(k, v)? {
                continue;
            }
            match k {
                "data" => {
                    if v != "synthetic" {
                        expression = Some(base.join(v));
                    }
                }
                "survival" => survival = Some(base.join(v)),
                "labels" => labels = Some(base.join(v)),
                "method" => cfg.method = v.parse()?,
                "normalize" => cfg.normalize = parse_bool(k, v)?,
                "k" => {
                    cfg.k = match v {
                        "" | "auto" => None,
                        v => Some(parse(k, v)?),
                    }
                }
                "k_candidates" => cfg.k_candidates = parse_list(k, v)?,
                "nmi_normalization" => {
                    cfg.nmi_normalization = match v {
                        "arithmetic" => NmiNormalization::Arithmetic,
                        "geometric" => NmiNormalization::Geometric,
                        "min" => NmiNormalization::Min,
                        "max" => NmiNormalization::Max,
                        _ => return Err(Error::Config(format!("unknown NMI normalization `{v}`"))),
                    }
                }
                "plots" => cfg.plots = parse_bool(k, v)?,
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        spec.seed = cfg.train.seed;
        cfg.data = match expression {
            Some(expression) => DataSource::Csv {
                expression,
                survival,
                labels,
            },
            None if survival.is_some() || labels.is_some() => {
                return Err(Error::Config("survival and labels files need an expression `data` file".into()))
            }
            None => DataSource::Synthetic(spec),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if self.k == Some(0) {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.k.is_none() && matches!(self.method, Method::Baseline(_, c) if c != Clusterer::Rim) && self.k_candidates.len() < 3 {
            return Err(Error::Config("elbow selection needs at least three k_candidates".into()));
        }
        Ok(())
    }

    /// Rewrites the config as text (paths as given).
    pub fn to_text(&self) -> String {
        let mut s = self.train.to_text();
        match &self.data {
            DataSource::Synthetic(spec) => {
                let _ = writeln!(s, "data = synthetic");
                let _ = writeln!(s, "clusters = {}", spec.num_clusters);
                let _ = writeln!(s, "samples_per_cluster = {}", spec.samples_per_cluster);
                let _ = writeln!(s, "planted_dim = {}", spec.latent_dim);
                let _ = writeln!(s, "features = {}", spec.output_dim);
                let _ = writeln!(s, "separation = {}", spec.separation);
                let _ = writeln!(s, "noise = {}", spec.noise);
                let _ = writeln!(s, "nonlinear = {}", spec.nonlinear);
                let _ = writeln!(s, "hazards = {}", join(&spec.hazards));
                let _ = writeln!(s, "censoring_rate = {}", spec.censoring_rate);
            }
            DataSource::Csv {
                expression,
                survival,
                labels,
            } => {
                let _ = writeln!(s, "data = {}", expression.display());
                if let Some(p) = survival {
                    let _ = writeln!(s, "survival = {}", p.display());
                }
                if let Some(p) = labels {
                    let _ = writeln!(s, "labels = {}", p.display());
                }
            }
        }
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "normalize = {}", self.normalize);
        let _ = writeln!(s, "k = {}", self.k.map_or("auto".into(), |k| k.to_string()));
        let _ = writeln!(s, "k_candidates = {}", join(&self.k_candidates));
        let norm = match self.nmi_normalization {
            NmiNormalization::Arithmetic => "arithmetic",
            NmiNormalization::Geometric => "geometric",
            NmiNormalization::Min => "min",
            NmiNormalization::Max => "max",
        };
        let _ = writeln!(s, "nmi_normalization = {norm}");
        let _ = writeln!(s, "plots = {}", self.plots);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_case() {
        let pairs = parse_pairs("# header\n\nAlpha = 2 # trailing\n lambda=0.5\n").unwrap();
        assert_eq!(
            pairs,
            vec![("alpha".into(), "2".into()), ("lambda".into(), "0.5".into())]
        );
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_pairs("alpha 2").is_err());
        assert!(parse_pairs("= 2").is_err());
        assert!(parse_pairs("alpha = 1\nalpha = 2").is_err());
    }

    #[test]
    fn training_text_round_trips() {
        let cfg = TrainConfig {
            finetune_lr: 1e-3 / 3.0,
            prune_threshold: Some(0.0123),
            freeze_generator: true,
            seed: 99,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainConfig::from_text("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn epochs_sets_both_phases() {
        let cfg = TrainConfig::from_text("epochs = 7").unwrap();
        assert_eq!((cfg.pretrain_epochs, cfg.finetune_epochs), (7, 7));
    }

    #[test]
    fn typed_validation() {
        assert!(TrainConfig::from_text("dropout = 1.0").is_err());
        assert!(TrainConfig::from_text("batch_size = -3").is_err());
        assert!(TrainConfig::from_text("freeze_generator = maybe").is_err());
        assert!(TrainConfig::from_text("colour = red").is_err());
        assert!(ExperimentConfig::from_text("method = pca+kmeans").is_err());
        assert!(ExperimentConfig::from_text("censoring_rate = 1.5").is_err());
    }

    #[test]
    fn experiment_defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_text("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let text = "method = vae+gmm\nclusters = 4\nseed = 5\nk = 4\nhazards = 1, 0.5, 0.25, 0.1\n";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.method, Method::Baseline(Extractor::Vae, Clusterer::Gmm));
        let DataSource::Synthetic(spec) = &cfg.data else { panic!("expected synthetic data") };
        assert_eq!((spec.num_clusters, spec.seed), (4, 5));
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn method_names() {
        assert_eq!("vq-rim".parse::<Method>().unwrap(), Method::VqRim);
        assert_eq!(
            "AE+Spectral".parse::<Method>().unwrap(),
            Method::Baseline(Extractor::Ae, Clusterer::Spectral)
        );
        assert_eq!(Method::Baseline(Extractor::Vq, Clusterer::KMeans).to_string(), "vq+kmeans");
    }
}
