//! Run configuration: a flat `key = value` text format with `#` comments and
//! dotted section keys, mapping onto the model, training, analysis, and toy
//! corpus settings.

use crate::cvae::LossMode;
use crate::model::{Arch, ModelConfig};
use crate::train::TrainConfig;
use crate::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DspConfig {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig { frame_len: crate::dsp::FRAME_LEN, hop: crate::dsp::HOP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub duration_s: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { n_train: 40, n_dev: 8, n_test: 8, duration_s: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dsp: DspConfig,
    pub corpus: CorpusConfig,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for key {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {v:?} for key {key} (expected true/false)"))),
    }
}

impl RunConfig {
    /// Parses the line-based format. Later assignments override earlier ones;
    /// unknown keys are rejected by name.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)));
            };
            let key = key.trim();
            let v = value.trim();
            match key {
                "model.input_dim" => cfg.model.input_dim = parse_num(key, v)?,
                "model.frames_per_step" => cfg.model.frames_per_step = parse_num(key, v)?,
                "model.gru_units" => cfg.model.gru_units = parse_num(key, v)?,
                "model.latent_dim" => cfg.model.latent_dim = parse_num(key, v)?,
                "model.arch" => {
                    cfg.model.arch = match v {
                        "recurrent" => Arch::Recurrent,
                        "feedforward" => Arch::Feedforward,
                        _ => {
                            return Err(Error::Config(format!(
                                "invalid value {v:?} for key {key} (expected recurrent/feedforward)"
                            )))
                        }
                    }
                }
                "model.constrain_all_recurrences" => {
                    cfg.model.constrain_all_recurrences = parse_bool(key, v)?
                }
                "model.loss_mode" => {
                    cfg.model.loss_mode = match v {
                        "l1_composite" => LossMode::L1Composite,
                        "l2_gaussian" => LossMode::L2Gaussian,
                        _ => {
                            return Err(Error::Config(format!(
                                "invalid value {v:?} for key {key} (expected l1_composite/l2_gaussian)"
                            )))
                        }
                    }
                }
                "model.kl_weight" => cfg.model.kl_weight = parse_num(key, v)?,
                "train.lr" => cfg.train.lr = parse_num(key, v)?,
                "train.beta1" => cfg.train.beta1 = parse_num(key, v)?,
                "train.beta2" => cfg.train.beta2 = parse_num(key, v)?,
                "train.adam_eps" => cfg.train.adam_eps = parse_num(key, v)?,
                "train.max_epochs" => cfg.train.max_epochs = parse_num(key, v)?,
                "train.patience" => cfg.train.patience = parse_num(key, v)?,
                "train.batch_size" => cfg.train.batch_size = parse_num(key, v)?,
                "train.segment_len" => cfg.train.segment_len = parse_num(key, v)?,
                "train.grad_clip" => cfg.train.grad_clip = parse_num(key, v)?,
                "train.seed" => cfg.train.seed = parse_num(key, v)?,
                "dsp.frame_len" => cfg.dsp.frame_len = parse_num(key, v)?,
                "dsp.hop" => cfg.dsp.hop = parse_num(key, v)?,
                "corpus.n_train" => cfg.corpus.n_train = parse_num(key, v)?,
                "corpus.n_dev" => cfg.corpus.n_dev = parse_num(key, v)?,
                "corpus.n_test" => cfg.corpus.n_test = parse_num(key, v)?,
                "corpus.duration_s" => cfg.corpus.duration_s = parse_num(key, v)?,
                _ => return Err(Error::Config(format!("unknown configuration key: {key}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.dsp.hop == 0 || self.dsp.frame_len < self.dsp.hop {
            return Err(Error::Config("dsp: need frame_len >= hop > 0".into()));
        }
        if self.model.input_dim != self.dsp.frame_len / 2 {
            return Err(Error::Config(format!(
                "model.input_dim {} must equal dsp.frame_len/2 = {}",
                self.model.input_dim,
                self.dsp.frame_len / 2
            )));
        }
        if !(self.corpus.duration_s > 0.0) {
            return Err(Error::Config("corpus.duration_s must be positive".into()));
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let arch = match self.model.arch {
            Arch::Recurrent => "recurrent",
            Arch::Feedforward => "feedforward",
        };
        let loss = match self.model.loss_mode {
            LossMode::L1Composite => "l1_composite",
            LossMode::L2Gaussian => "l2_gaussian",
        };
        format!(
            "model.input_dim = {}\n\
             model.frames_per_step = {}\n\
             model.gru_units = {}\n\
             model.latent_dim = {}\n\
             model.arch = {}\n\
             model.constrain_all_recurrences = {}\n\
             model.loss_mode = {}\n\
             model.kl_weight = {}\n\
             train.lr = {}\n\
             train.beta1 = {}\n\
             train.beta2 = {}\n\
             train.adam_eps = {}\n\
             train.max_epochs = {}\n\
             train.patience = {}\n\
             train.batch_size = {}\n\
             train.segment_len = {}\n\
             train.grad_clip = {}\n\
             train.seed = {}\n\
             dsp.frame_len = {}\n\
             dsp.hop = {}\n\
             corpus.n_train = {}\n\
             corpus.n_dev = {}\n\
             corpus.n_test = {}\n\
             corpus.duration_s = {}\n",
            self.model.input_dim,
            self.model.frames_per_step,
            self.model.gru_units,
            self.model.latent_dim,
            arch,
            self.model.constrain_all_recurrences,
            loss,
            self.model.kl_weight,
            self.train.lr,
            self.train.beta1,
            self.train.beta2,
            self.train.adam_eps,
            self.train.max_epochs,
            self.train.patience,
            self.train.batch_size,
            self.train.segment_len,
            self.train.grad_clip,
            self.train.seed,
            self.dsp.frame_len,
            self.dsp.hop,
            self.corpus.n_train,
            self.corpus.n_dev,
            self.corpus.n_test,
            self.corpus.duration_s,
        )
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::atomic_write(path, self.serialize().as_bytes())
    }
}
