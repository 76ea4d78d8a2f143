//! The online local learning rule: state-dependent trace decay, presynaptic
//! and correlation eligibility traces, end-of-sample weight delta, and the
//! batch reduction.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{pseudo_grad, LayerState, NeuronHyper};
use crate::quant::PrecisionSpec;

/// Learning-rate hyperparameters for the feedforward weights.
#[derive(Clone, Copy, Debug)]
pub struct TraceHyper {
    pub eta: f64,
    pub batch_size: usize,
}

impl Default for TraceHyper {
    fn default() -> Self {
        TraceHyper {
            eta: 1e-3,
            batch_size: 128,
        }
    }
}

/// Decay = 1 - o(t-1) - v(t-1) * z(v(t-1)), elementwise; may be negative.
/// `v_prev` is the stored un-reset voltage.
pub fn decay_factor(o_prev: &Array1<f64>, v_prev: &Array1<f64>, hyper: &NeuronHyper) -> Array1<f64> {
    Array1::from_shape_fn(o_prev.len(), |i| {
        1.0 - o_prev[i] - v_prev[i] * pseudo_grad(v_prev[i], hyper)
    })
}

/// Tr_pre(t) = d_v * Decay(t) (per row) * Tr_pre(t-1) + o_pre(t) (per column).
pub fn update_pre_trace(
    tr_pre: &mut Array2<f64>,
    decay: &Array1<f64>,
    o_pre: &Array1<f64>,
    hyper: &NeuronHyper,
) -> Result<()> {
    if tr_pre.nrows() != decay.len() || tr_pre.ncols() != o_pre.len() {
        return Err(Error::Shape(format!(
            "update_pre_trace: trace is {:?}, decay has {}, o_pre has {}",
            tr_pre.shape(),
            decay.len(),
            o_pre.len()
        )));
    }
    for (i, mut row) in tr_pre.outer_iter_mut().enumerate() {
        let a = hyper.d_v * decay[i];
        for (x, &o) in row.iter_mut().zip(o_pre.iter()) {
            *x = a * *x + o;
        }
    }
    Ok(())
}

/// Tr_corr(t) = Tr_corr(t-1) + z(v(t-1)) (per row) * Tr_pre(t). Note the
/// one-step lag: the pseudo-gradient is evaluated on the previous un-reset
/// postsynaptic voltage.
pub fn update_corr_trace(
    tr_corr: &mut Array2<f64>,
    tr_pre: &Array2<f64>,
    v_prev: &Array1<f64>,
    hyper: &NeuronHyper,
) -> Result<()> {
    if tr_corr.shape() != tr_pre.shape() || tr_corr.nrows() != v_prev.len() {
        return Err(Error::Shape(format!(
            "update_corr_trace: corr is {:?}, pre is {:?}, v has {}",
            tr_corr.shape(),
            tr_pre.shape(),
            v_prev.len()
        )));
    }
    for (i, (mut row, pre)) in tr_corr.outer_iter_mut().zip(tr_pre.outer_iter()).enumerate() {
        let z = pseudo_grad(v_prev[i], hyper);
        if z == 0.0 {
            continue;
        }
        for (x, &p) in row.iter_mut().zip(pre.iter()) {
            *x += z * p;
        }
    }
    Ok(())
}

/// End-of-sample update: dW_ij = -eta * (v_a_i / (T - t_error)) * Tr_corr_ij.
pub fn weight_delta(
    v_a: &Array1<f64>,
    tr_corr: &Array2<f64>,
    hyper: &NeuronHyper,
    trace_hyper: &TraceHyper,
) -> Result<Array2<f64>> {
    if hyper.t_steps <= hyper.t_error {
        return Err(Error::Config(format!(
            "presentation steps {} must exceed the error start {}",
            hyper.t_steps, hyper.t_error
        )));
    }
    if v_a.len() != tr_corr.nrows() {
        return Err(Error::Shape(format!(
            "weight_delta: v_a has {}, corr is {:?}",
            v_a.len(),
            tr_corr.shape()
        )));
    }
    let window = (hyper.t_steps - hyper.t_error) as f64;
    let mut delta = tr_corr.clone();
    for (i, mut row) in delta.outer_iter_mut().enumerate() {
        let f = -trace_hyper.eta * v_a[i] / window;
        row.mapv_inplace(|x| f * x);
    }
    Ok(delta)
}

/// W' = W + mean of the per-sample deltas, summed in the given order.
pub fn apply_batch_update(w: &mut Array2<f64>, deltas: &[Array2<f64>]) -> Result<()> {
    let first = deltas
        .first()
        .ok_or_else(|| Error::Invalid("empty batch delta list".into()))?;
    if first.shape() != w.shape() {
        return Err(Error::Shape(format!(
            "batch delta {:?} does not match weights {:?}",
            first.shape(),
            w.shape()
        )));
    }
    let mut sum = Array2::zeros(w.raw_dim());
    for d in deltas {
        sum += d;
    }
    *w += &(sum / deltas.len() as f64);
    Ok(())
}

/// Eligibility traces of one layer, stored over a compacted column set.
///
/// Only columns that can ever see a presynaptic spike carry nonzero trace
/// values, so the per-step work is restricted to those columns. `cols[c]`
/// is the original presynaptic index of compact column c.
#[derive(Clone)]
pub struct TraceState {
    pub cols: Vec<u32>,
    pub tr_pre: Array2<f64>,
    pub tr_corr: Array2<f64>,
}

impl TraceState {
    pub fn new(rows: usize, cols: Vec<u32>) -> Self {
        let n = cols.len();
        TraceState {
            cols,
            tr_pre: Array2::zeros((rows, n)),
            tr_corr: Array2::zeros((rows, n)),
        }
    }

    /// One fused trace step, taken from the layer state at t-1 before the
    /// somatic update for t runs. `active` holds compact column indices of
    /// the presynaptic spikes at t.
    pub fn step(
        &mut self,
        prev: &LayerState,
        active: &[u32],
        hyper: &NeuronHyper,
        quant: Option<&PrecisionSpec>,
    ) {
        let rows = self.tr_pre.nrows();
        let v = prev.v.as_slice().unwrap();
        let o = prev.o.as_slice().unwrap();
        for i in 0..rows {
            let z = pseudo_grad(v[i], hyper);
            let a = hyper.d_v * (1.0 - o[i] - v[i] * z);
            let mut pre = self.tr_pre.row_mut(i);
            let pre = pre.as_slice_mut().unwrap();
            if a == 0.0 {
                pre.fill(0.0);
            } else {
                for x in pre.iter_mut() {
                    *x *= a;
                }
            }
            for &c in active {
                pre[c as usize] += 1.0;
            }
            if let Some(spec) = quant {
                for x in pre.iter_mut() {
                    *x = spec.quantize(*x);
                }
            }
            if z != 0.0 {
                let mut corr = self.tr_corr.row_mut(i);
                let corr = corr.as_slice_mut().unwrap();
                for (x, &p) in corr.iter_mut().zip(pre.iter()) {
                    *x += z * p;
                }
                if let Some(spec) = quant {
                    for x in corr.iter_mut() {
                        *x = spec.quantize(*x);
                    }
                }
            }
        }
    }

    pub fn dense_tr_pre(&self, n_cols: usize) -> Array2<f64> {
        self.scatter(&self.tr_pre, n_cols)
    }

    pub fn dense_tr_corr(&self, n_cols: usize) -> Array2<f64> {
        self.scatter(&self.tr_corr, n_cols)
    }

    fn scatter(&self, compact: &Array2<f64>, n_cols: usize) -> Array2<f64> {
        let mut dense = Array2::zeros((compact.nrows(), n_cols));
        for (c, &j) in self.cols.iter().enumerate() {
            for i in 0..compact.nrows() {
                dense[[i, j as usize]] = compact[[i, c]];
            }
        }
        dense
    }

    /// Accumulates this sample's weight delta into a dense per-batch sum.
    pub fn accumulate_delta(
        &self,
        v_a: &Array1<f64>,
        hyper: &NeuronHyper,
        eta: f64,
        accum: &mut Array2<f64>,
    ) {
        let window = (hyper.t_steps - hyper.t_error) as f64;
        for (i, corr) in self.tr_corr.outer_iter().enumerate() {
            let f = -eta * v_a[i] / window;
            if f == 0.0 {
                continue;
            }
            let corr = corr.as_slice().unwrap();
            let mut out = accum.row_mut(i);
            let out = out.as_slice_mut().unwrap();
            for (c, &j) in self.cols.iter().enumerate() {
                out[j as usize] += f * corr[c];
            }
        }
    }
}
