//! Training loops: the online three-factor rule with optional sleep phases,
//! plus unrolled-gradient baselines (SGD and Adam) over the same spiking
//! forward pass. Batches are evaluated in parallel but reduced in sample
//! order, so results are identical at any thread count.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{Dataset, Method, RunConfig};
use crate::data::{encode_poisson, make_batches, EventDataset, ImageDataset, SpikeTrain};
use crate::error::{Error, Result};
use crate::metrics::alignment_angle;
use crate::network::{forward_sample, ForwardOptions, NetworkParams, SampleRun};
use crate::oracle::{sgd_step, stbp_gradient, AdamState};
use crate::quant::QuantConfig;
use crate::rng::{sample_rng, stream_rng, Stream};
use crate::sleep::{run_sleep_phase, sleep_scheduler};

/// A training corpus already split into train / validation / test and able
/// to produce the spike train for any sample deterministically.
pub enum Corpus {
    Images {
        train: ImageDataset,
        val: ImageDataset,
        test: ImageDataset,
    },
    Events {
        train: EventDataset,
        val: EventDataset,
        test: EventDataset,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train = 1,
    Val = 2,
    Test = 3,
}

impl Corpus {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        match cfg.dataset {
            Dataset::Mnist => {
                let dir = &cfg.data_dir;
                let full = crate::data::load_mnist_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let test = crate::data::load_mnist_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                let (mut train, val) = full.split_tail(cfg.val_size)?;
                if cfg.train_subset > 0 {
                    train.truncate(cfg.train_subset);
                }
                Ok(Corpus::Images { train, val, test })
            }
            Dataset::Nmnist => {
                let full = crate::data::load_nmnist_dir(&cfg.data_dir.join("Train"), None)?;
                let test = crate::data::load_nmnist_dir(&cfg.data_dir.join("Test"), None)?;
                let (mut train, val) = full.split_tail(cfg.val_size)?;
                if cfg.train_subset > 0 {
                    train.truncate(cfg.train_subset);
                }
                Ok(Corpus::Events { train, val, test })
            }
        }
    }

    pub fn train_len(&self) -> usize {
        self.split_len(Split::Train)
    }

    pub fn split_len(&self, split: Split) -> usize {
        match (self, split) {
            (Corpus::Images { train, .. }, Split::Train) => train.len(),
            (Corpus::Images { val, .. }, Split::Val) => val.len(),
            (Corpus::Images { test, .. }, Split::Test) => test.len(),
            (Corpus::Events { train, .. }, Split::Train) => train.len(),
            (Corpus::Events { val, .. }, Split::Val) => val.len(),
            (Corpus::Events { test, .. }, Split::Test) => test.len(),
        }
    }

    pub fn label(&self, split: Split, index: usize) -> usize {
        let l = match (self, split) {
            (Corpus::Images { train, .. }, Split::Train) => train.labels[index],
            (Corpus::Images { val, .. }, Split::Val) => val.labels[index],
            (Corpus::Images { test, .. }, Split::Test) => test.labels[index],
            (Corpus::Events { train, .. }, Split::Train) => train.labels[index],
            (Corpus::Events { val, .. }, Split::Val) => val.labels[index],
            (Corpus::Events { test, .. }, Split::Test) => test.labels[index],
        };
        l as usize
    }

    /// Spike train for one sample. Rate-coded images are re-drawn from a
    /// per-sample stream each epoch; event data is fixed per sample.
    pub fn spikes(
        &self,
        split: Split,
        index: usize,
        t_steps: usize,
        master: u64,
        epoch: u64,
    ) -> SpikeTrain {
        match self {
            Corpus::Images { train, val, test } => {
                let ds = match split {
                    Split::Train => train,
                    Split::Val => val,
                    Split::Test => test,
                };
                let (stream, salt) = match split {
                    Split::Train => (Stream::Encode, epoch),
                    // Evaluation draws don't vary with epoch.
                    s => (Stream::EncodeEval, s as u64),
                };
                let mut rng = sample_rng(master, stream, salt, index as u64);
                encode_poisson(&ds.images[index], t_steps, &mut rng)
            }
            Corpus::Events { train, val, test } => {
                let ds = match split {
                    Split::Train => train,
                    Split::Val => val,
                    Split::Test => test,
                };
                ds.trains[index].clone()
            }
        }
    }
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Angle in degrees between each feedback matrix and the transposed
    /// product of downstream forward weights.
    pub align_deg: Vec<f64>,
}

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochStats>,
    pub best_val: f64,
    pub best_epoch: usize,
    pub test_acc: f64,
}

/// Classification accuracy over a whole split. The apical pathway never
/// feeds back into the soma within a presentation, so the true label is
/// passed through without affecting the prediction.
pub fn evaluate(
    params: &NetworkParams,
    corpus: &Corpus,
    split: Split,
    cfg: &RunConfig,
) -> Result<f64> {
    let n = corpus.split_len(split);
    if n == 0 {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    let correct = (0..n)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let spikes = corpus.spikes(split, i, cfg.neuron.t_steps, cfg.seed, 0);
            let mut rng = sample_rng(cfg.seed, Stream::ErrorSpikes, 0, i as u64);
            let run = forward_sample(
                params,
                &spikes,
                corpus.label(split, i),
                &cfg.neuron,
                cfg.error_mode,
                &ForwardOptions::default(),
                &mut rng,
            )?;
            Ok(usize::from(run.prediction == corpus.label(split, i)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / n as f64)
}

struct SampleDelta {
    dw: Vec<Array2<f64>>,
    correct: bool,
}

/// Forward pass plus the online weight deltas for one labelled sample.
fn biograd_sample(
    params: &NetworkParams,
    spikes: &SpikeTrain,
    label: usize,
    cfg: &RunConfig,
    quant: &QuantConfig,
    epoch: u64,
    index: u64,
) -> Result<SampleDelta> {
    let opts = ForwardOptions {
        traces: true,
        trace_quant: (!quant.traces.is_passthrough()).then_some(quant.traces),
        ..ForwardOptions::default()
    };
    let mut rng = sample_rng(cfg.seed, Stream::ErrorSpikes, epoch, index);
    let run = forward_sample(params, spikes, label, &cfg.neuron, cfg.error_mode, &opts, &mut rng)?;
    let eta = cfg.effective_lr();
    let mut dw: Vec<Array2<f64>> = params.w.iter().map(|w| Array2::zeros(w.dim())).collect();
    for (l, tr) in run.traces.iter().enumerate() {
        let tr = tr
            .as_ref()
            .ok_or_else(|| Error::Invalid("trace missing from training pass".into()))?;
        tr.accumulate_delta(&run.v_a[l], &cfg.neuron, eta, &mut dw[l]);
    }
    Ok(SampleDelta { dw, correct: run.prediction == label })
}

fn apply_quant_weights(params: &mut NetworkParams, quant: &QuantConfig) {
    if quant.weights.is_passthrough() {
        return;
    }
    for w in &mut params.w {
        quant.weights.quantize_matrix(w);
    }
    for b in &mut params.b {
        quant.weights.quantize_matrix(b);
    }
}

/// Full training run for the configured method. Writes nothing itself;
/// callers handle logging and checkpoints via the `on_epoch` hook.
pub fn train(
    cfg: &RunConfig,
    corpus: &Corpus,
    mut on_epoch: impl FnMut(&EpochStats, &NetworkParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let quant = cfg.quant()?;
    let mut rng_w = stream_rng(cfg.seed, Stream::WeightInit);
    let mut rng_b = stream_rng(cfg.seed, Stream::FeedbackInit);
    let mut params = NetworkParams::init(&cfg.arch, cfg.feedback_init, &mut rng_w, &mut rng_b);
    apply_quant_weights(&mut params, &quant);
    // Rounding-residual carries for the quantized grids: batch-mean updates
    // are routinely smaller than half a grid step, and plain round-to-nearest
    // would discard them outright. The carries accumulate the rounding error
    // so sub-step updates still move weights; W and B themselves stay
    // on-grid after every update.
    let mut carry_w: Vec<Array2<f64>> = if quant.is_passthrough() {
        Vec::new()
    } else {
        params.w.iter().map(|w| Array2::zeros(w.dim())).collect()
    };
    let mut carry_b: Vec<Array2<f64>> = if quant.is_passthrough() {
        Vec::new()
    } else {
        params.b.iter().map(|b| Array2::zeros(b.dim())).collect()
    };

    let mut adam = AdamState::new(&params.w.iter().collect::<Vec<_>>());
    let n_train = corpus.train_len();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    // Training-sample counter feeding the sleep scheduler; global across
    // epochs so the phase cadence is unaffected by epoch boundaries, and
    // counted in samples so it is unaffected by batch size.
    let mut samples_seen: usize = 0;
    let mut sleep_rng = stream_rng(cfg.seed, Stream::SleepSpikes);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = sample_rng(cfg.seed, Stream::Shuffle, epoch as u64, 0);
        let batches = make_batches(n_train, cfg.batch_size, &mut shuffle_rng)?;
        let mut train_correct = 0usize;

        for batch in &batches {
            let prev_samples = samples_seen;
            samples_seen += batch.len();
            match cfg.method {
                Method::BioGrad => {
                    let deltas: Vec<SampleDelta> = batch
                        .par_iter()
                        .map(|&i| {
                            let spikes = corpus.spikes(
                                Split::Train,
                                i,
                                cfg.neuron.t_steps,
                                cfg.seed,
                                epoch as u64,
                            );
                            biograd_sample(
                                &params,
                                &spikes,
                                corpus.label(Split::Train, i),
                                cfg,
                                &quant,
                                epoch as u64,
                                i as u64,
                            )
                        })
                        .collect::<Result<_>>()?;
                    let scale = 1.0 / batch.len() as f64;
                    for d in &deltas {
                        train_correct += usize::from(d.correct);
                        for (w, dw) in params.w.iter_mut().zip(&d.dw) {
                            w.scaled_add(scale, dw);
                        }
                    }
                    if !quant.is_passthrough() {
                        for (w, r) in params.w.iter_mut().zip(&mut carry_w) {
                            quant.weights.quantize_matrix_carry(w, r);
                        }
                    }
                    if cfg.sleep_enabled {
                        let cycles =
                            sleep_scheduler(prev_samples, samples_seen, cfg.sleep.batches_per_phase);
                        if cycles > 0 {
                            run_sleep_phase(
                                &mut params,
                                cycles,
                                &cfg.neuron,
                                &cfg.sleep,
                                &mut sleep_rng,
                                (!quant.is_passthrough())
                                    .then(|| (&quant.weights, carry_b.as_mut_slice())),
                            )?;
                        }
                    }
                }
                Method::StbpSgd | Method::StbpAdam => {
                    let runs: Vec<(SampleRun, Vec<Array2<f64>>)> = batch
                        .par_iter()
                        .map(|&i| {
                            let spikes = corpus.spikes(
                                Split::Train,
                                i,
                                cfg.neuron.t_steps,
                                cfg.seed,
                                epoch as u64,
                            );
                            let opts = ForwardOptions {
                                record_history: true,
                                ..ForwardOptions::default()
                            };
                            let mut rng =
                                sample_rng(cfg.seed, Stream::ErrorSpikes, epoch as u64, i as u64);
                            let run = forward_sample(
                                &params,
                                &spikes,
                                corpus.label(Split::Train, i),
                                &cfg.neuron,
                                cfg.error_mode,
                                &opts,
                                &mut rng,
                            )?;
                            let grads = stbp_gradient(
                                run.history.as_ref().unwrap(),
                                &params,
                                &cfg.neuron,
                            )?;
                            Ok((run, grads))
                        })
                        .collect::<Result<_>>()?;
                    let scale = 1.0 / batch.len() as f64;
                    let mut grad_sum: Vec<Array2<f64>> =
                        params.w.iter().map(|w| Array2::zeros(w.dim())).collect();
                    for (k, (run, grads)) in runs.iter().enumerate() {
                        train_correct +=
                            usize::from(run.prediction == corpus.label(Split::Train, batch[k]));
                        for (g, gs) in grads.iter().zip(&mut grad_sum) {
                            gs.scaled_add(scale, g);
                        }
                    }
                    let lr = cfg.effective_lr();
                    match cfg.method {
                        Method::StbpSgd => {
                            for (w, g) in params.w.iter_mut().zip(&grad_sum) {
                                sgd_step(w, g, lr)?;
                            }
                        }
                        Method::StbpAdam => adam.step(&mut params.w, &grad_sum, lr)?,
                        Method::BioGrad => unreachable!(),
                    }
                }
            }
        }

        let train_acc = train_correct as f64 / n_train as f64;
        let val_acc = evaluate(&params, corpus, Split::Val, cfg)?;
        let align_deg = (0..params.layers())
            .map(|l| alignment_angle(&params.b[l], &params.w, l).unwrap_or(f64::NAN))
            .collect();
        let stats = EpochStats { epoch: epoch + 1, train_acc, val_acc, align_deg };
        on_epoch(&stats, &params)?;
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch + 1;
            best_params = params.clone();
        }
        history.push(stats);
    }

    let test_acc = evaluate(&best_params, corpus, Split::Test, cfg)?;
    Ok(TrainOutcome { params: best_params, history, best_val, best_epoch, test_acc })
}

/// Writes the per-epoch log as CSV: epoch, accuracies, and one alignment
/// column per layer.
pub fn write_epoch_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let layers = history.first().map_or(0, |h| h.align_deg.len());
    let mut header = String::from("epoch,train_acc,val_acc");
    for l in 0..layers {
        header.push_str(&format!(",align_deg_l{}", l + 1));
    }
    writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    for h in history {
        let mut row = format!("{},{:.6},{:.6}", h.epoch, h.train_acc, h.val_acc);
        for a in &h.align_deg {
            row.push_str(&format!(",{a:.4}"));
        }
        writeln!(f, "{row}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Per-sample spike counts of every non-input layer over an evaluation
/// split, as CSV with a label column; used for activity analyses.
pub fn export_hidden_counts(
    path: &Path,
    params: &NetworkParams,
    corpus: &Corpus,
    split: Split,
    cfg: &RunConfig,
    limit: usize,
) -> Result<()> {
    let n = corpus
        .split_len(split)
        .min(if limit == 0 { usize::MAX } else { limit });
    let rows = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(usize, Vec<f64>)> {
            let spikes = corpus.spikes(split, i, cfg.neuron.t_steps, cfg.seed, 0);
            let mut rng = sample_rng(cfg.seed, Stream::ErrorSpikes, 0, i as u64);
            let run = forward_sample(
                params,
                &spikes,
                corpus.label(split, i),
                &cfg.neuron,
                cfg.error_mode,
                &ForwardOptions::default(),
                &mut rng,
            )?;
            let counts = run.spike_counts.iter().map(|c| c.sum()).collect();
            Ok((corpus.label(split, i), counts))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut header = String::from("label");
    for l in 0..params.layers() {
        header.push_str(&format!(",spikes_l{}", l + 1));
    }
    writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    for (label, counts) in rows {
        let mut row = label.to_string();
        for c in counts {
            row.push_str(&format!(",{c}"));
        }
        writeln!(f, "{row}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
