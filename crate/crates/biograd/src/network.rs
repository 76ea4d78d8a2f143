//! Multi-compartment neuron dynamics: somatic LIF forward pass, output and
//! error accumulation, error-neuron spike encoding, apical integration, and
//! feedback-weight initialization.

use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::data::SpikeTrain;
use crate::error::{Error, Result};
use crate::learning::TraceState;
use crate::quant::PrecisionSpec;
use crate::rng::Rng;

/// Neuron and presentation hyperparameters shared by every layer.
#[derive(Clone, Copy, Debug)]
pub struct NeuronHyper {
    /// Somatic voltage decay factor.
    pub d_v: f64,
    /// Spike threshold.
    pub v_th: f64,
    /// Rectangular pseudo-gradient window.
    pub window: f64,
    /// Pseudo-gradient amplification factor.
    pub amp: f64,
    /// Presentation steps per sample.
    pub t_steps: usize,
    /// First step at which spike-encoded errors reach the error neurons.
    pub t_error: usize,
}

impl NeuronHyper {
    pub fn mnist() -> Self {
        NeuronHyper {
            d_v: 0.6,
            v_th: 0.3,
            window: 0.3,
            amp: 1.0,
            t_steps: 20,
            t_error: 5,
        }
    }

    pub fn nmnist() -> Self {
        NeuronHyper {
            d_v: 0.3,
            v_th: 0.3,
            window: 0.3,
            amp: 1.0,
            t_steps: 60,
            t_error: 19,
        }
    }
}

/// Rectangular surrogate for the spike derivative: `amp` inside the window
/// around threshold, 0 outside (strict inequality at the boundary).
#[inline]
pub fn pseudo_grad(v: f64, hyper: &NeuronHyper) -> f64 {
    if (v - hyper.v_th).abs() < hyper.window {
        hyper.amp
    } else {
        0.0
    }
}

/// How the error signal reaches the apical compartments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorMode {
    /// Per-step Bernoulli spikes with probability |e_j| on the positive or
    /// negative error neuron, matching the sign of e_j.
    Bernoulli,
    /// Deterministic injection of B*e(t); used by the equivalence oracles.
    Exact,
}

impl std::str::FromStr for ErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(ErrorMode::Bernoulli),
            "exact" => Ok(ErrorMode::Exact),
            other => Err(Error::Config(format!("unknown error mode '{other}'"))),
        }
    }
}

/// Feedback-weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackInit {
    /// Products of transposed downstream feedforward weights.
    FwdInit,
    /// Same distribution as the feedforward initialization.
    RandInit,
}

impl std::str::FromStr for FeedbackInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fwd" => Ok(FeedbackInit::FwdInit),
            "rand" => Ok(FeedbackInit::RandInit),
            other => Err(Error::Config(format!("unknown feedback init '{other}'"))),
        }
    }
}

/// Layer dimensions plus feedforward and feedback weights.
///
/// `w[l]` has shape (dims[l+1] x dims[l]); `b[l]` has shape
/// (dims[l+1] x n_out) and carries the error signal to layer l+1. The
/// output layer's feedback is the identity.
#[derive(Clone)]
pub struct NetworkParams {
    pub dims: Vec<usize>,
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array2<f64>>,
}

fn uniform_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// Feedforward init: uniform in +-sqrt(1/fan_in).
pub fn init_weights(dims: &[usize], rng: &mut Rng) -> Vec<Array2<f64>> {
    dims.windows(2)
        .map(|d| uniform_matrix(d[1], d[0], (1.0 / d[0] as f64).sqrt(), rng))
        .collect()
}

/// Feedback init per the chosen scheme; the output layer always gets the
/// identity (the empty downstream product).
pub fn init_feedback(w: &[Array2<f64>], mode: FeedbackInit, rng: &mut Rng) -> Vec<Array2<f64>> {
    let k = w.len();
    let n_out = w[k - 1].nrows();
    let mut b: Vec<Array2<f64>> = vec![Array2::eye(n_out)];
    match mode {
        FeedbackInit::FwdInit => {
            for l in (0..k - 1).rev() {
                let next = &b[b.len() - 1];
                b.push(w[l + 1].t().dot(next));
            }
            b.reverse();
        }
        FeedbackInit::RandInit => {
            let mut rest: Vec<Array2<f64>> = (0..k - 1)
                .map(|l| uniform_matrix(w[l].nrows(), n_out, (1.0 / n_out as f64).sqrt(), rng))
                .collect();
            rest.push(b.pop().unwrap());
            b = rest;
        }
    }
    b
}

impl NetworkParams {
    pub fn init(dims: &[usize], mode: FeedbackInit, rng_w: &mut Rng, rng_b: &mut Rng) -> Self {
        let w = init_weights(dims, rng_w);
        let b = init_feedback(&w, mode, rng_b);
        NetworkParams {
            dims: dims.to_vec(),
            w,
            b,
        }
    }

    /// Number of weight layers.
    pub fn layers(&self) -> usize {
        self.w.len()
    }

    pub fn n_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Shape("need at least input and output layers".into()));
        }
        if self.w.len() != self.dims.len() - 1 || self.b.len() != self.w.len() {
            return Err(Error::Shape("layer count mismatch".into()));
        }
        for (l, w) in self.w.iter().enumerate() {
            if w.shape() != [self.dims[l + 1], self.dims[l]] {
                return Err(Error::Shape(format!("w[{l}] has shape {:?}", w.shape())));
            }
            if self.b[l].shape() != [self.dims[l + 1], self.n_out()] {
                return Err(Error::Shape(format!("b[{l}] has shape {:?}", self.b[l].shape())));
            }
        }
        Ok(())
    }
}

/// Per-layer dynamical state. The stored somatic voltage is the un-reset
/// value; the reset factor (1 - o(t-1)) is applied at the next step.
#[derive(Clone)]
pub struct LayerState {
    pub v: Array1<f64>,
    pub o: Array1<f64>,
    pub v_a: Array1<f64>,
}

impl LayerState {
    pub fn zeros(n: usize) -> Self {
        LayerState {
            v: Array1::zeros(n),
            o: Array1::zeros(n),
            v_a: Array1::zeros(n),
        }
    }
}

/// One somatic LIF step: v(t) = d_v * v(t-1) * (1 - o(t-1)) + W * o_pre(t),
/// spike when v(t) > V_th. Returns the new spike vector.
pub fn lif_step(
    state: &mut LayerState,
    w: &Array2<f64>,
    o_pre: &Array1<f64>,
    hyper: &NeuronHyper,
) -> Result<Array1<f64>> {
    if w.ncols() != o_pre.len() || w.nrows() != state.v.len() {
        return Err(Error::Shape(format!(
            "lif_step: W is {:?}, o_pre has {}, state has {}",
            w.shape(),
            o_pre.len(),
            state.v.len()
        )));
    }
    let active: Vec<u32> = o_pre
        .iter()
        .enumerate()
        .filter(|(_, &s)| s != 0.0)
        .map(|(j, _)| j as u32)
        .collect();
    lif_step_active(state, w, &active, hyper);
    Ok(state.o.clone())
}

/// LIF step with the presynaptic spikes given as active-column indices.
pub(crate) fn lif_step_active(
    state: &mut LayerState,
    w: &Array2<f64>,
    active: &[u32],
    hyper: &NeuronHyper,
) {
    let v = state.v.as_slice_mut().unwrap();
    let o = state.o.as_slice_mut().unwrap();
    for i in 0..v.len() {
        let mut drive = 0.0;
        let row = w.row(i);
        let row = row.as_slice().unwrap();
        for &j in active {
            drive += row[j as usize];
        }
        let nv = hyper.d_v * v[i] * (1.0 - o[i]) + drive;
        v[i] = nv;
        o[i] = if nv > hyper.v_th { 1.0 } else { 0.0 };
    }
}

/// Accumulated output spike counts and the running softmax error.
#[derive(Clone)]
pub struct ErrorState {
    pub output: Array1<f64>,
    pub e: Array1<f64>,
}

impl ErrorState {
    pub fn zeros(n: usize) -> Self {
        ErrorState {
            output: Array1::zeros(n),
            e: Array1::zeros(n),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = x.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Adds the output spikes to the running counts and recomputes
/// e = softmax(Output) - onehot(label).
pub fn accumulate_output_and_error(err: &mut ErrorState, o_out: &Array1<f64>, label: usize) {
    err.output += o_out;
    err.e = softmax(&err.output);
    err.e[label] -= 1.0;
}

/// Encodes the error vector into positive/negative error-neuron spikes.
/// Before `t_error` both streams are silent. In `Exact` mode no spikes are
/// emitted; the apical compartments receive B*e directly.
pub fn encode_error_spikes(
    e: &Array1<f64>,
    t: usize,
    hyper: &NeuronHyper,
    mode: ErrorMode,
    rng: &mut Rng,
) -> (Array1<f64>, Array1<f64>) {
    let n = e.len();
    let mut pos = Array1::zeros(n);
    let mut neg = Array1::zeros(n);
    if t < hyper.t_error || mode == ErrorMode::Exact {
        return (pos, neg);
    }
    for j in 0..n {
        let ej = e[j];
        if ej > 0.0 {
            if rng.gen::<f64>() < ej.min(1.0) {
                pos[j] = 1.0;
            }
        } else if ej < 0.0 && rng.gen::<f64>() < (-ej).min(1.0) {
            neg[j] = 1.0;
        }
    }
    (pos, neg)
}

/// Apical integration: v_a(t) = v_a(t-1) + B*o_pos - B*o_neg. No decay and
/// no reset.
pub fn apical_step(
    v_a: &mut Array1<f64>,
    b: &Array2<f64>,
    o_pos: &Array1<f64>,
    o_neg: &Array1<f64>,
) -> Result<()> {
    if b.nrows() != v_a.len() || b.ncols() != o_pos.len() || o_pos.len() != o_neg.len() {
        return Err(Error::Shape(format!(
            "apical_step: B is {:?}, v_a has {}, spikes have {}/{}",
            b.shape(),
            v_a.len(),
            o_pos.len(),
            o_neg.len()
        )));
    }
    let diff = o_pos - o_neg;
    *v_a += &b.dot(&diff);
    Ok(())
}

fn apical_add_active(v_a: &mut Array1<f64>, b: &Array2<f64>, active: &[u32], sign: f64) {
    let va = v_a.as_slice_mut().unwrap();
    for (i, va_i) in va.iter_mut().enumerate() {
        let row = b.row(i);
        let row = row.as_slice().unwrap();
        let mut acc = 0.0;
        for &j in active {
            acc += row[j as usize];
        }
        *va_i += sign * acc;
    }
}

/// Per-step record of a forward pass, consumed by the gradient oracles.
#[derive(Clone)]
pub struct RecordedHistory {
    pub t_steps: usize,
    /// Input spikes, dense (T x n_0).
    pub input: Array2<f64>,
    /// Per layer: spikes, (T x n_l).
    pub o: Vec<Array2<f64>>,
    /// Per layer: un-reset somatic voltage, (T x n_l).
    pub v: Vec<Array2<f64>>,
    /// Final error e(T) = softmax(Output(T)) - onehot.
    pub e_final: Array1<f64>,
}

impl RecordedHistory {
    /// Presynaptic spike row feeding layer `l` at step `t`.
    pub fn o_pre(&self, l: usize, t: usize) -> ndarray::ArrayView1<'_, f64> {
        if l == 0 {
            self.input.row(t)
        } else {
            self.o[l - 1].row(t)
        }
    }
}

/// What a forward pass should compute besides the prediction.
#[derive(Clone, Default)]
pub struct ForwardOptions {
    /// Maintain eligibility traces (required for learning).
    pub traces: bool,
    /// Record spikes and voltages for the gradient oracles.
    pub record_history: bool,
    /// Additionally record the dense presynaptic trace after every step.
    pub record_trace_history: bool,
    /// Hold the injected error at a fixed vector instead of e(t)
    /// (equivalence tests only; implies exact injection).
    pub held_error: Option<Array1<f64>>,
    /// Quantize traces after every mutation.
    pub trace_quant: Option<PrecisionSpec>,
}

/// Outcome of one sample presentation.
pub struct SampleRun {
    pub prediction: usize,
    pub output: Array1<f64>,
    pub e_final: Array1<f64>,
    /// Per layer: final apical voltage.
    pub v_a: Vec<Array1<f64>>,
    /// Per layer: final traces (column-compacted), when requested.
    pub traces: Vec<Option<TraceState>>,
    /// Per layer: spike counts over the presentation.
    pub spike_counts: Vec<Array1<f64>>,
    pub history: Option<RecordedHistory>,
    /// Per layer, per step: dense presynaptic trace snapshots.
    pub trace_history: Option<Vec<Vec<Array2<f64>>>>,
}

/// Lowest-index argmax.
pub fn argmax(x: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Runs one sample for `T` steps: per-layer LIF dynamics, output/error
/// accumulation, error-spike feedback into every apical compartment, and
/// (optionally) the eligibility traces of the learning rule.
pub fn forward_sample(
    params: &NetworkParams,
    train: &SpikeTrain,
    label: usize,
    hyper: &NeuronHyper,
    mode: ErrorMode,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<SampleRun> {
    let k = params.layers();
    if train.units() != params.dims[0] {
        return Err(Error::Shape(format!(
            "input train has {} units, network expects {}",
            train.units(),
            params.dims[0]
        )));
    }
    if label >= params.n_out() {
        return Err(Error::Invalid(format!("label {label} out of range")));
    }
    let t_steps = hyper.t_steps;
    let n_out = params.n_out();

    let mut states: Vec<LayerState> = (1..=k).map(|l| LayerState::zeros(params.dims[l])).collect();
    let mut traces: Vec<Option<TraceState>> = (0..k)
        .map(|l| {
            opts.traces.then(|| {
                let cols = if l == 0 {
                    train.ever_active()
                } else {
                    (0..params.dims[l] as u32).collect()
                };
                TraceState::new(params.dims[l + 1], cols)
            })
        })
        .collect();
    // Input-unit id -> compact column index for layer 0.
    let col_lookup: Vec<u32> = traces
        .first()
        .and_then(|t| t.as_ref())
        .map(|t| {
            let mut lk = vec![u32::MAX; params.dims[0]];
            for (c, &j) in t.cols.iter().enumerate() {
                lk[j as usize] = c as u32;
            }
            lk
        })
        .unwrap_or_default();

    let mut err = ErrorState::zeros(n_out);
    let mut spike_counts: Vec<Array1<f64>> = (1..=k).map(|l| Array1::zeros(params.dims[l])).collect();
    let mut history = opts.record_history.then(|| RecordedHistory {
        t_steps,
        input: Array2::zeros((t_steps, params.dims[0])),
        o: (1..=k).map(|l| Array2::zeros((t_steps, params.dims[l]))).collect(),
        v: (1..=k).map(|l| Array2::zeros((t_steps, params.dims[l]))).collect(),
        e_final: Array1::zeros(n_out),
    });
    let mut trace_history: Option<Vec<Vec<Array2<f64>>>> =
        opts.record_trace_history.then(|| vec![Vec::new(); k]);

    for t in 0..t_steps {
        // Active presynaptic units, in original and compact indexing.
        let mut active: Vec<u32> = train.active_at(t);
        let mut active_compact: Vec<u32> = if col_lookup.is_empty() {
            active.clone()
        } else {
            active.iter().map(|&j| col_lookup[j as usize]).collect()
        };
        if let Some(h) = history.as_mut() {
            for &j in &active {
                h.input[[t, j as usize]] = 1.0;
            }
        }

        for l in 0..k {
            if let Some(tr) = traces[l].as_mut() {
                tr.step(&states[l], &active_compact, hyper, opts.trace_quant.as_ref());
                if let Some(th) = trace_history.as_mut() {
                    th[l].push(tr.dense_tr_pre(params.dims[l]));
                }
            }
            lif_step_active(&mut states[l], &params.w[l], &active, hyper);
            spike_counts[l] += &states[l].o;
            if let Some(h) = history.as_mut() {
                h.o[l].row_mut(t).assign(&states[l].o);
                h.v[l].row_mut(t).assign(&states[l].v);
            }
            active = states[l]
                .o
                .iter()
                .enumerate()
                .filter(|(_, &s)| s != 0.0)
                .map(|(j, _)| j as u32)
                .collect();
            active_compact = active.clone();
        }

        accumulate_output_and_error(&mut err, &states[k - 1].o, label);

        if t >= hyper.t_error {
            match mode {
                ErrorMode::Bernoulli => {
                    let (pos, neg) = encode_error_spikes(&err.e, t, hyper, mode, rng);
                    let pos_active: Vec<u32> = (0..n_out).filter(|&j| pos[j] != 0.0).map(|j| j as u32).collect();
                    let neg_active: Vec<u32> = (0..n_out).filter(|&j| neg[j] != 0.0).map(|j| j as u32).collect();
                    for l in 0..k {
                        if !pos_active.is_empty() {
                            apical_add_active(&mut states[l].v_a, &params.b[l], &pos_active, 1.0);
                        }
                        if !neg_active.is_empty() {
                            apical_add_active(&mut states[l].v_a, &params.b[l], &neg_active, -1.0);
                        }
                    }
                }
                ErrorMode::Exact => {
                    let e_used = opts.held_error.as_ref().unwrap_or(&err.e);
                    for l in 0..k {
                        states[l].v_a += &params.b[l].dot(e_used);
                    }
                }
            }
        }
    }

    if let Some(h) = history.as_mut() {
        h.e_final = err.e.clone();
    }
    Ok(SampleRun {
        prediction: argmax(&err.output),
        output: err.output,
        e_final: err.e,
        v_a: states.iter().map(|s| s.v_a.clone()).collect(),
        traces,
        spike_counts,
        history,
        trace_history,
    })
}
