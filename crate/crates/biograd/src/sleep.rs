//! Sleep phase: unsupervised feedback-weight alignment from zero-mean
//! random spike probes and an Oja-like local update.

use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::network::{lif_step_active, LayerState, NetworkParams, NeuronHyper};
use crate::quant::PrecisionSpec;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub struct SleepHyper {
    /// Sleep-phase learning rate.
    pub beta: f64,
    /// Presentation steps for the random probes.
    pub t_sleep: usize,
    /// Probability of a + (and, independently exclusive, a -) spike per
    /// unit per step.
    pub p_spike: f64,
    /// Sleep every `x` batches, running `x` cycles per phase.
    pub batches_per_phase: usize,
    /// Probe presentations per sleep cycle; the feedback update applied at
    /// the end of a cycle is the mean of the per-probe updates, mirroring
    /// the batched wake updates.
    pub batch: usize,
    /// Error-neuron encoding during sleep. `false`: a single nonnegative
    /// error neuron per output unit counts positive threshold crossings.
    /// `true`: a positive/negative error-neuron pair emits +1 when the
    /// output voltage exceeds +v_th and -1 when it falls below -v_th, so
    /// the error record is zero-mean like the probe drive. The signed
    /// encoding removes the common-mode component from the trace product,
    /// and its Oja equilibrium preserves the feedforward weight scale; the
    /// nonnegative encoding equilibrates to a much smaller feedback
    /// magnitude, which weakens the wake-phase error signal.
    pub signed_error: bool,
}

impl Default for SleepHyper {
    fn default() -> Self {
        SleepHyper {
            beta: 1e-4 / 3.0,
            t_sleep: 50,
            p_spike: 0.25,
            batches_per_phase: 1,
            batch: 128,
            signed_error: true,
        }
    }
}

impl SleepHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_spike >= 0.0 && self.p_spike <= 0.5) {
            return Err(Error::Config(format!(
                "sleep spike probability {} must lie in [0, 0.5]",
                self.p_spike
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("sleep learning rate must be nonnegative".into()));
        }
        if self.batches_per_phase == 0 {
            return Err(Error::Config("sleep frequency must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("sleep batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Probe traces of one hidden layer over a sleep cycle.
#[derive(Clone)]
pub struct SleepTraces {
    /// Signed sum of the layer's random probe spikes.
    pub tr_hid: Array1<f64>,
    /// Error-neuron spike record seen at the layer's apical inputs:
    /// nonnegative counts, or the signed sum when the positive/negative
    /// error-neuron pair encoding is selected.
    pub tr_err: Array1<f64>,
}

/// Each unit emits exactly one of {+spike, -spike, nothing} with
/// probabilities {p, p, 1-2p}, so the drive is zero-mean.
pub fn gen_random_spikes(n: usize, p_spike: f64, rng: &mut Rng) -> Result<(Array1<f64>, Array1<f64>)> {
    if p_spike > 0.5 {
        return Err(Error::Config(format!("p_spike {p_spike} exceeds 0.5")));
    }
    let mut pos = Array1::zeros(n);
    let mut neg = Array1::zeros(n);
    for j in 0..n {
        let u: f64 = rng.gen();
        if u < p_spike {
            pos[j] = 1.0;
        } else if u < 2.0 * p_spike {
            neg[j] = 1.0;
        }
    }
    Ok((pos, neg))
}

/// Drives hidden layer `layer` (0-based, < K-1) with random +- spikes for
/// `t_sleep` steps, propagates them through the downstream layers, feeds
/// the output spikes back through the error neurons, and accumulates the
/// probe traces.
pub fn sleep_propagate(
    params: &NetworkParams,
    layer: usize,
    hyper: &NeuronHyper,
    sleep: &SleepHyper,
    rng: &mut Rng,
) -> Result<SleepTraces> {
    let k = params.layers();
    if layer + 1 >= k {
        return Err(Error::Invalid(format!(
            "sleep layer {layer} out of range for {k} layers"
        )));
    }
    let n_hid = params.dims[layer + 1];
    let n_out = params.n_out();
    let mut states: Vec<LayerState> = (layer + 1..k)
        .map(|m| LayerState::zeros(params.dims[m + 1]))
        .collect();
    let mut v_a = Array1::zeros(n_hid);
    let mut tr_hid = Array1::zeros(n_hid);
    let mut tr_err = Array1::zeros(n_out);

    for _ in 0..sleep.t_sleep {
        let (pos, neg) = gen_random_spikes(n_hid, sleep.p_spike, rng)?;
        tr_hid += &pos;
        tr_hid -= &neg;

        // First downstream layer integrates the signed probe drive; deeper
        // layers follow the ordinary spike dynamics.
        {
            let st = &mut states[0];
            let w = &params.w[layer + 1];
            for i in 0..st.v.len() {
                let mut drive = 0.0;
                let row = w.row(i);
                let row = row.as_slice().unwrap();
                for j in 0..n_hid {
                    drive += row[j] * (pos[j] - neg[j]);
                }
                // The probe-driven layer integrates without the spike
                // reset; only the deeper layers follow the ordinary
                // reset-on-spike dynamics.
                let nv = hyper.d_v * st.v[i] + drive;
                st.v[i] = nv;
                st.o[i] = if nv > hyper.v_th { 1.0 } else { 0.0 };
            }
        }
        for m in 1..states.len() {
            let active: Vec<u32> = states[m - 1]
                .o
                .iter()
                .enumerate()
                .filter(|(_, &s)| s != 0.0)
                .map(|(j, _)| j as u32)
                .collect();
            let (_, rest) = states.split_at_mut(m);
            lif_step_active(&mut rest[0], &params.w[layer + 1 + m], &active, hyper);
        }

        // Output activity drives the error neurons directly; their spikes
        // return to the layer's apical compartments and are counted as the
        // presynaptic error record.
        let last = states.last().unwrap();
        let o_e = if sleep.signed_error {
            last.v.mapv(|v| {
                if v > hyper.v_th {
                    1.0
                } else if v < -hyper.v_th {
                    -1.0
                } else {
                    0.0
                }
            })
        } else {
            last.o.clone()
        };
        v_a += &params.b[layer].dot(&o_e);
        tr_err += &o_e;
    }
    Ok(SleepTraces { tr_hid, tr_err })
}

/// Oja-like update: dB_jk = beta * Tr_err_k * (Tr_hid_j - Tr_err_k * B_jk).
pub fn feedback_delta(
    tr_hid: &Array1<f64>,
    tr_err: &Array1<f64>,
    b: &Array2<f64>,
    beta: f64,
) -> Result<Array2<f64>> {
    if b.nrows() != tr_hid.len() || b.ncols() != tr_err.len() {
        return Err(Error::Shape(format!(
            "feedback_delta: B is {:?}, traces are {}/{}",
            b.shape(),
            tr_hid.len(),
            tr_err.len()
        )));
    }
    Ok(Array2::from_shape_fn(b.raw_dim(), |(j, kk)| {
        beta * tr_err[kk] * (tr_hid[j] - tr_err[kk] * b[[j, kk]])
    }))
}

/// Runs `n_cycles` sleep cycles: per cycle each hidden layer gets a batch
/// of fresh probe propagations followed by its batch-mean feedback update,
/// in layer order. Feedforward weights are never touched.
pub fn run_sleep_phase(
    params: &mut NetworkParams,
    n_cycles: usize,
    hyper: &NeuronHyper,
    sleep: &SleepHyper,
    rng: &mut Rng,
    weight_quant: Option<(&PrecisionSpec, &mut [Array2<f64>])>,
) -> Result<()> {
    let k = params.layers();
    let mut weight_quant = weight_quant;
    for _ in 0..n_cycles {
        for layer in 0..k.saturating_sub(1) {
            let mut delta = Array2::zeros(params.b[layer].raw_dim());
            for _ in 0..sleep.batch {
                let traces = sleep_propagate(params, layer, hyper, sleep, rng)?;
                delta += &feedback_delta(&traces.tr_hid, &traces.tr_err, &params.b[layer], sleep.beta)?;
            }
            delta /= sleep.batch as f64;
            params.b[layer] += &delta;
            if let Some((spec, carry)) = weight_quant.as_mut() {
                spec.quantize_matrix_carry(&mut params.b[layer], &mut carry[layer]);
            }
        }
    }
    Ok(())
}

/// Sample count one scheduling "batch" stands for. The sleep cadence is
/// defined against this reference so that smaller training batch sizes do
/// not multiply the number of sleep phases: whatever the batch size, `x`
/// cycles fire per `x * 128` training samples.
pub const SCHEDULER_REF_BATCH: usize = 128;

/// Returns the number of cycles to run once `samples_seen` training samples
/// have been processed (global counter, not reset per epoch), given
/// `prev_samples` at the previous call: `x` cycles per crossing of a
/// multiple of `x * SCHEDULER_REF_BATCH` samples. The total cycle count per
/// epoch is invariant across both frequencies and batch sizes.
pub fn sleep_scheduler(prev_samples: usize, samples_seen: usize, batches_per_phase: usize) -> usize {
    if batches_per_phase == 0 {
        return 0;
    }
    let period = batches_per_phase * SCHEDULER_REF_BATCH;
    batches_per_phase * (samples_seen / period - prev_samples / period)
}
