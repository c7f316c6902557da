//! Experiment configuration in a flat `key = value` text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, EncoderKind, Pooling};
use crate::error::{Error, Result};
use crate::net::DamfConfig;
use crate::objective::{LossHyperParams, ScheduleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Damf,
    Baseline,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "damf" => Ok(Self::Damf),
            "baseline" => Ok(Self::Baseline),
            other => Err(format!("unknown model '{other}' (expected damf or baseline)")),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Damf => "damf",
            Self::Baseline => "baseline",
        }
    }
}

/// When the frozen reference encoder for the reconstruction target is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// Encoder weights at initialization.
    Initial,
    /// Encoder weights after the warm-up phase.
    WarmupEnd,
}

impl FromStr for ReferencePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "initial" => Ok(Self::Initial),
            "warmup_end" => Ok(Self::WarmupEnd),
            other => Err(format!("unknown reference '{other}' (expected initial or warmup_end)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub train_corpora: Vec<String>,
    pub target_corpus: Option<String>,
    pub hp: LossHyperParams,
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub lr_init: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Fraction of each training corpus used for training; the rest validates.
    pub train_fraction: f64,
    pub weighted_loss: bool,
    /// `false` keeps the domain head out of the objective entirely.
    pub adversary: bool,
    pub reference: ReferencePolicy,
    pub encoder: EncoderConfig,
    pub head_hidden: Option<usize>,
    pub dropout: f64,
    pub transform_init_noise: f64,
    /// Held-out documents per domain used to log domain-classifier accuracy.
    pub monitor_docs: usize,
    /// Explicit corpus file locations; other corpora resolve through the data
    /// directory.
    pub corpus_paths: BTreeMap<String, PathBuf>,
}

impl ExperimentConfig {
    pub fn damf(train: &[&str], target: &str) -> Self {
        Self {
            model: ModelKind::Damf,
            train_corpora: train.iter().map(|s| s.to_string()).collect(),
            target_corpus: Some(target.to_string()),
            hp: LossHyperParams::default(),
            total_epochs: 60,
            warmup_epochs: 15,
            batch_size: 64,
            seeds: vec![1, 2, 3, 4, 5],
            lr_init: 5e-5,
            alpha: 10.0,
            beta: 0.25,
            train_fraction: 0.8,
            weighted_loss: true,
            adversary: true,
            reference: ReferencePolicy::WarmupEnd,
            encoder: EncoderConfig::tiny(),
            head_hidden: None,
            dropout: 0.3,
            transform_init_noise: 0.01,
            monitor_docs: 100,
            corpus_paths: BTreeMap::new(),
        }
    }

    pub fn baseline(train: &[&str]) -> Self {
        Self {
            model: ModelKind::Baseline,
            target_corpus: None,
            total_epochs: 20,
            warmup_epochs: 0,
            weighted_loss: false,
            adversary: false,
            ..Self::damf(train, "")
        }
    }

    pub fn schedule(&self) -> ScheduleState {
        ScheduleState {
            current_epoch: 0,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.total_epochs,
            lr_init: self.lr_init,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn damf_config(&self) -> DamfConfig {
        DamfConfig {
            head_hidden: self.head_hidden,
            dropout: self.dropout,
            use_transform: self.hp.lambda_trans.is_some(),
            transform_init_noise: self.transform_init_noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.train_corpora.is_empty() {
            errs.push("train: at least one training corpus is required".to_string());
        }
        match (&self.target_corpus, self.model) {
            (None, ModelKind::Damf) => errs.push("target: DAMF needs a target corpus".to_string()),
            (Some(t), _) if self.train_corpora.contains(t) => {
                errs.push(format!("target: '{t}' is also a training corpus"))
            }
            _ => {}
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.train_corpora {
            if !seen.insert(c) {
                errs.push(format!("train: '{c}' listed twice"));
            }
        }
        if self.total_epochs == 0 {
            errs.push("epochs: must be > 0".to_string());
        }
        if self.warmup_epochs >= self.total_epochs && self.model == ModelKind::Damf {
            errs.push("warmup: must be smaller than epochs".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size: must be > 0".to_string());
        }
        let domains = self.train_corpora.len() + usize::from(self.model == ModelKind::Damf);
        if self.batch_size < domains {
            errs.push(format!("batch_size: must be at least the number of domains ({domains})"));
        }
        if self.seeds.is_empty() {
            errs.push("seeds: at least one seed is required".to_string());
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            errs.push("lr: must be > 0".to_string());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errs.push("train_fraction: must lie in (0, 1)".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push("dropout: must lie in [0, 1)".to_string());
        }
        if let Err(Error::Config(e)) = self.hp.validate() {
            errs.extend(e);
        }
        if let Err(Error::Config(e)) = self.encoder.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Reads the text format. Unset keys keep the defaults of the selected
    /// model kind. Every bad field is reported.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        let mut errs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => pairs.push((i + 1, k.trim().to_string(), v.trim().to_string())),
                None => errs.push(format!("line {}: expected 'key = value'", i + 1)),
            }
        }
        let model = pairs
            .iter()
            .find(|(_, k, _)| k == "model")
            .map(|(_, _, v)| v.parse::<ModelKind>())
            .transpose()
            .unwrap_or_else(|e| {
                errs.push(format!("model: {e}"));
                None
            })
            .unwrap_or(ModelKind::Damf);
        let mut cfg = match model {
            ModelKind::Damf => Self::damf(&[], ""),
            ModelKind::Baseline => Self::baseline(&[]),
        };
        cfg.target_corpus = None;
        for (line, k, v) in &pairs {
            if let Err(e) = cfg.set(k, v) {
                errs.push(format!("{k} (line {line}): {e}"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        fn boolean(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("expected true/false, got '{v}'")),
            }
        }
        let list = |v: &str| -> Vec<String> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
        };
        match key {
            "model" => self.model = value.parse()?,
            "train" => self.train_corpora = list(value),
            "target" => self.target_corpus = (!value.is_empty() && value != "none").then(|| value.to_string()),
            "lambda_rec" => self.hp.lambda_rec = num(value)?,
            "lambda_trans" => {
                self.hp.lambda_trans = match value {
                    "none" | "no_trans" | "off" => None,
                    v => Some(num(v)?),
                }
            }
            "gamma" => self.hp.gamma = num(value)?,
            "epochs" => self.total_epochs = num(value)?,
            "warmup" => self.warmup_epochs = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "seeds" => {
                self.seeds = list(value).iter().map(|s| num(s)).collect::<std::result::Result<_, _>>()?;
            }
            "lr" => self.lr_init = num(value)?,
            "alpha" => self.alpha = num(value)?,
            "beta" => self.beta = num(value)?,
            "train_fraction" => self.train_fraction = num(value)?,
            "weighted_loss" => self.weighted_loss = boolean(value)?,
            "adversary" => self.adversary = boolean(value)?,
            "reference" => self.reference = value.parse()?,
            "head_hidden" => {
                self.head_hidden = match value {
                    "auto" => None,
                    v => Some(num(v)?),
                }
            }
            "dropout" => self.dropout = num(value)?,
            "transform_init_noise" => self.transform_init_noise = num(value)?,
            "monitor_docs" => self.monitor_docs = num(value)?,
            "encoder.kind" => {
                self.encoder.kind = match value {
                    "tiny_transformer" => EncoderKind::TinyTransformer,
                    "pretrained_transformer" => EncoderKind::PretrainedTransformer,
                    v => return Err(format!("unknown encoder kind '{v}'")),
                }
            }
            "encoder.hidden_size" => self.encoder.hidden_size = num(value)?,
            "encoder.max_len" => self.encoder.max_len = num(value)?,
            "encoder.layers" => self.encoder.num_layers = num(value)?,
            "encoder.heads" => self.encoder.num_heads = num(value)?,
            "encoder.ffn_size" => self.encoder.ffn_size = num(value)?,
            "encoder.pooling" => {
                self.encoder.pooling = match value {
                    "first_token" => Pooling::FirstToken,
                    "mean" => Pooling::Mean,
                    v => return Err(format!("unknown pooling '{v}'")),
                }
            }
            "encoder.checkpoint" => self.encoder.checkpoint = Some(PathBuf::from(value)),
            "encoder.vocab" => self.encoder.vocab = Some(PathBuf::from(value)),
            k if k.starts_with("corpus.") => {
                let name = &k["corpus.".len()..];
                if name.is_empty() {
                    return Err("empty corpus name".to_string());
                }
                self.corpus_paths.insert(name.to_string(), PathBuf::from(value));
            }
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "train = {}", self.train_corpora.join(","));
        let _ = writeln!(s, "target = {}", self.target_corpus.as_deref().unwrap_or("none"));
        let _ = writeln!(s, "lambda_rec = {}", self.hp.lambda_rec);
        let _ = writeln!(s, "lambda_trans = {}", opt(self.hp.lambda_trans));
        let _ = writeln!(s, "gamma = {}", self.hp.gamma);
        let _ = writeln!(s, "epochs = {}", self.total_epochs);
        let _ = writeln!(s, "warmup = {}", self.warmup_epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "lr = {}", self.lr_init);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "train_fraction = {}", self.train_fraction);
        let _ = writeln!(s, "weighted_loss = {}", self.weighted_loss);
        let _ = writeln!(s, "adversary = {}", self.adversary);
        let reference = match self.reference {
            ReferencePolicy::Initial => "initial",
            ReferencePolicy::WarmupEnd => "warmup_end",
        };
        let _ = writeln!(s, "reference = {reference}");
        let _ = writeln!(s, "head_hidden = {}", self.head_hidden.map_or("auto".to_string(), |h| h.to_string()));
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "transform_init_noise = {}", self.transform_init_noise);
        let _ = writeln!(s, "monitor_docs = {}", self.monitor_docs);
        let e = &self.encoder;
        let kind = match e.kind {
            EncoderKind::TinyTransformer => "tiny_transformer",
            EncoderKind::PretrainedTransformer => "pretrained_transformer",
        };
        let _ = writeln!(s, "encoder.kind = {kind}");
        let _ = writeln!(s, "encoder.hidden_size = {}", e.hidden_size);
        let _ = writeln!(s, "encoder.max_len = {}", e.max_len);
        let _ = writeln!(s, "encoder.layers = {}", e.num_layers);
        let _ = writeln!(s, "encoder.heads = {}", e.num_heads);
        let _ = writeln!(s, "encoder.ffn_size = {}", e.ffn_size);
        let pooling = match e.pooling {
            Pooling::FirstToken => "first_token",
            Pooling::Mean => "mean",
        };
        let _ = writeln!(s, "encoder.pooling = {pooling}");
        if let Some(p) = &e.checkpoint {
            let _ = writeln!(s, "encoder.checkpoint = {}", p.display());
        }
        if let Some(p) = &e.vocab {
            let _ = writeln!(s, "encoder.vocab = {}", p.display());
        }
        for (name, path) in &self.corpus_paths {
            let _ = writeln!(s, "corpus.{name} = {}", path.display());
        }
        s
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
