//! Run configuration: defaults per dataset, the flat `key = value` config
//! file format, and flag overrides.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::learning::TraceHyper;
use crate::network::{ErrorMode, FeedbackInit, NeuronHyper};
use crate::quant::QuantConfig;
use crate::sleep::SleepHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Mnist,
    Nmnist,
}

impl std::str::FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Dataset::Mnist),
            "nmnist" => Ok(Dataset::Nmnist),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    BioGrad,
    StbpSgd,
    StbpAdam,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biograd" => Ok(Method::BioGrad),
            "stbp-sgd" => Ok(Method::StbpSgd),
            "stbp-adam" => Ok(Method::StbpAdam),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub arch: Vec<usize>,
    pub method: Method,
    pub feedback_init: FeedbackInit,
    pub sleep_enabled: bool,
    pub sleep: SleepHyper,
    pub error_mode: ErrorMode,
    pub bits: u32,
    pub weight_range: f64,
    pub trace_range: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub neuron: NeuronHyper,
    /// Learning rate; None resolves to the per-method default.
    pub lr: Option<f64>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Cap on training samples after the validation split (0 = all).
    pub train_subset: usize,
    pub val_size: usize,
}

impl RunConfig {
    pub fn default_for(dataset: Dataset) -> Self {
        let (arch, neuron) = match dataset {
            Dataset::Mnist => (vec![784, 500, 100, 10], NeuronHyper::mnist()),
            Dataset::Nmnist => (vec![2312, 500, 100, 10], NeuronHyper::nmnist()),
        };
        RunConfig {
            dataset,
            arch,
            method: Method::BioGrad,
            feedback_init: FeedbackInit::FwdInit,
            sleep_enabled: true,
            sleep: SleepHyper::default(),
            error_mode: ErrorMode::Bernoulli,
            bits: 32,
            weight_range: 1.0,
            trace_range: 8.0,
            epochs: 100,
            batch_size: 128,
            seed: 0,
            neuron,
            lr: None,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            train_subset: 0,
            val_size: 10_000,
        }
    }

    /// Per-method default learning rates.
    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or(match (self.method, self.dataset) {
            (Method::BioGrad, _) => 1e-3,
            (Method::StbpSgd, _) => 0.9e-2,
            (Method::StbpAdam, Dataset::Mnist) => 5e-4,
            (Method::StbpAdam, Dataset::Nmnist) => 1e-4,
        })
    }

    pub fn trace_hyper(&self) -> TraceHyper {
        TraceHyper {
            eta: self.effective_lr(),
            batch_size: self.batch_size,
        }
    }

    pub fn quant(&self) -> Result<QuantConfig> {
        QuantConfig::new(self.bits, self.weight_range, self.trace_range)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch.len() < 2 {
            return Err(Error::Config("architecture needs at least two layers".into()));
        }
        let expect_in = match self.dataset {
            Dataset::Mnist => 784,
            Dataset::Nmnist => 2312,
        };
        if self.arch[0] != expect_in {
            return Err(Error::Config(format!(
                "input layer must have {expect_in} units for this dataset, got {}",
                self.arch[0]
            )));
        }
        if *self.arch.last().unwrap() != 10 {
            return Err(Error::Config("output layer must have 10 units".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.neuron.t_steps <= self.neuron.t_error {
            return Err(Error::Config(format!(
                "presentation steps {} must exceed the error start {}",
                self.neuron.t_steps, self.neuron.t_error
            )));
        }
        self.sleep.validate()?;
        self.quant()?;
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("malformed value '{value}' for key '{key}'")))
        }
        match key {
            "dataset" => self.dataset = value.parse()?,
            "arch" => {
                self.arch = value
                    .split('-')
                    .map(|p| num::<usize>(key, p))
                    .collect::<Result<Vec<_>>>()?;
            }
            "method" => self.method = value.parse()?,
            "feedback_init" => self.feedback_init = value.parse()?,
            "sleep" => {
                self.sleep_enabled = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(Error::Config(format!("sleep must be on/off, got '{value}'"))),
                }
            }
            "sleep_every" => self.sleep.batches_per_phase = num(key, value)?,
            "sleep_lr" => self.sleep.beta = num(key, value)?,
            "sleep_steps" => self.sleep.t_sleep = num(key, value)?,
            "sleep_p_spike" => self.sleep.p_spike = num(key, value)?,
            "sleep_batch" => self.sleep.batch = num(key, value)?,
            "sleep_error_encoding" => {
                self.sleep.signed_error = match value {
                    "signed" => true,
                    "counts" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "sleep_error_encoding must be `signed` or `counts`, got `{other}`"
                        )))
                    }
                }
            }
            "error_mode" => self.error_mode = value.parse()?,
            "bits" => {
                let bits: u32 = num(key, value)?;
                if !matches!(bits, 8 | 16 | 32) {
                    return Err(Error::Config(format!("bits must be one of 8, 16, 32, got {bits}")));
                }
                self.bits = bits;
            }
            "weight_range" => self.weight_range = num(key, value)?,
            "trace_range" => self.trace_range = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lr" => self.lr = Some(num(key, value)?),
            "voltage_decay" => self.neuron.d_v = num(key, value)?,
            "threshold" => self.neuron.v_th = num(key, value)?,
            "pseudo_window" => self.neuron.window = num(key, value)?,
            "pseudo_amp" => self.neuron.amp = num(key, value)?,
            "t_steps" => self.neuron.t_steps = num(key, value)?,
            "t_error" => self.neuron.t_error = num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "train_subset" => self.train_subset = num(key, value)?,
            "val_size" => self.val_size = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", ln + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds a config from defaults, then file values, then flag overrides.
/// The dataset key is resolved first so the remaining defaults mirror the
/// chosen dataset.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        pairs.extend(parse_lines(&text)?);
    }
    pairs.extend(overrides.iter().cloned());

    let dataset = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "dataset")
        .map(|(_, v)| v.parse())
        .transpose()?
        .unwrap_or(Dataset::Mnist);

    let mut cfg = RunConfig::default_for(dataset);
    for (k, v) in &pairs {
        cfg.apply(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
