//! Reference gradients: full spatiotemporal backprop over a recorded
//! history (recursive and closed-form routes), the feedback-approximated
//! gradient, a brute-force unrolled trace oracle, and the SGD/Adam steps
//! used by the baseline trainers.
//!
//! The pseudo-gradient of a spike at step t is evaluated on the previous
//! un-reset voltage, the same convention the online correlation trace
//! uses, so the gradient chain (online rule -> approximated gradient ->
//! backprop at the top layer) closes exactly.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{pseudo_grad, NetworkParams, NeuronHyper, RecordedHistory};

fn check_history(history: &RecordedHistory, dims: &[usize]) -> Result<()> {
    if history.o.len() != dims.len() - 1 || history.v.len() != history.o.len() {
        return Err(Error::Shape("history layer count mismatch".into()));
    }
    for (l, o) in history.o.iter().enumerate() {
        if o.nrows() != history.t_steps || o.ncols() != dims[l + 1] {
            return Err(Error::Shape(format!("history layer {l} shape {:?}", o.shape())));
        }
    }
    Ok(())
}

/// z evaluated on the voltage one step before `t` (zero before the first
/// step).
#[inline]
fn z_lagged(v: &Array2<f64>, i: usize, t: usize, hyper: &NeuronHyper) -> f64 {
    if t == 0 {
        pseudo_grad(0.0, hyper)
    } else {
        pseudo_grad(v[[t - 1, i]], hyper)
    }
}

/// State-consistent decay linearization at step t:
/// 1 - o(t) - v(t) * z(v(t)). Multiplied by d_v it carries the voltage
/// gradient from t+1 back to t.
#[inline]
fn decay_at(o: &Array2<f64>, v: &Array2<f64>, i: usize, t: usize, hyper: &NeuronHyper) -> f64 {
    let vv = v[[t, i]];
    1.0 - o[[t, i]] - vv * pseudo_grad(vv, hyper)
}

/// Exact spatiotemporal backprop: the recursive backward sweep over time
/// and layers, with cross-entropy loss on the accumulated output counts.
pub fn stbp_gradient(
    history: &RecordedHistory,
    params: &NetworkParams,
    hyper: &NeuronHyper,
) -> Result<Vec<Array2<f64>>> {
    check_history(history, &params.dims)?;
    let k = params.layers();
    let t_steps = history.t_steps;
    let mut grads: Vec<Array2<f64>> = (0..k)
        .map(|l| Array2::zeros((params.dims[l + 1], params.dims[l])))
        .collect();
    // delta[l] holds dL/dv at t+1 from the previous (later) step.
    let mut delta_next: Vec<Array1<f64>> = (0..k).map(|l| Array1::zeros(params.dims[l + 1])).collect();

    for t in (0..t_steps).rev() {
        let mut delta_cur: Vec<Array1<f64>> = Vec::with_capacity(k);
        for l in (0..k).rev() {
            let n = params.dims[l + 1];
            // Spatial gradient entering through this layer's spikes.
            let s: Array1<f64> = if l == k - 1 {
                history.e_final.clone()
            } else {
                // delta_cur currently holds layers (l+1..k), top first.
                let upstream = &delta_cur[delta_cur.len() - 1];
                params.w[l + 1].t().dot(upstream)
            };
            let mut d = Array1::zeros(n);
            for i in 0..n {
                d[i] = s[i] * z_lagged(&history.v[l], i, t, hyper)
                    + delta_next[l][i] * hyper.d_v * decay_at(&history.o[l], &history.v[l], i, t, hyper);
            }
            let o_pre = history.o_pre(l, t);
            for i in 0..n {
                if d[i] == 0.0 {
                    continue;
                }
                let mut row = grads[l].row_mut(i);
                for (g, &o) in row.iter_mut().zip(o_pre.iter()) {
                    *g += d[i] * o;
                }
            }
            delta_cur.push(d);
        }
        delta_cur.reverse();
        delta_next = delta_cur;
    }
    Ok(grads)
}

/// The same loss gradient evaluated through the explicit nested sums (the
/// non-recursive closed form), used to cross-check the recursion.
pub fn stbp_gradient_closed_form(
    history: &RecordedHistory,
    params: &NetworkParams,
    hyper: &NeuronHyper,
) -> Result<Vec<Array2<f64>>> {
    check_history(history, &params.dims)?;
    let k = params.layers();
    let t_steps = history.t_steps;
    // deltas[l][(t, i)] = dL/dv_i^{(l)}(t), computed top-down.
    let mut deltas: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); k];
    for l in (0..k).rev() {
        let n = params.dims[l + 1];
        // Spatial input per step.
        let mut s = Array2::zeros((t_steps, n));
        for t in 0..t_steps {
            let row: Array1<f64> = if l == k - 1 {
                history.e_final.clone()
            } else {
                params.w[l + 1].t().dot(&deltas[l + 1].row(t).to_owned())
            };
            s.row_mut(t).assign(&row);
        }
        let mut d = Array2::zeros((t_steps, n));
        for i in 0..n {
            for t in 0..t_steps {
                let mut acc = 0.0;
                for x in t..t_steps {
                    let mut prod = 1.0;
                    for y in t..x {
                        prod *= hyper.d_v * decay_at(&history.o[l], &history.v[l], i, y, hyper);
                    }
                    acc += s[[x, i]] * z_lagged(&history.v[l], i, x, hyper) * prod;
                }
                d[[t, i]] = acc;
            }
        }
        deltas[l] = d;
    }
    let mut grads: Vec<Array2<f64>> = Vec::with_capacity(k);
    for l in 0..k {
        let mut g = Array2::zeros((params.dims[l + 1], params.dims[l]));
        for t in 0..t_steps {
            let o_pre = history.o_pre(l, t);
            for i in 0..params.dims[l + 1] {
                let d = deltas[l][[t, i]];
                if d == 0.0 {
                    continue;
                }
                let mut row = g.row_mut(i);
                for (gv, &o) in row.iter_mut().zip(o_pre.iter()) {
                    *gv += d * o;
                }
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Brute-force evaluation of the unrolled eligibility sums for one layer:
/// the presynaptic trace at every step and the final correlation trace.
pub struct UnrolledTraces {
    /// tr_pre[t] is the dense presynaptic trace after step t.
    pub tr_pre: Vec<Array2<f64>>,
    pub tr_corr_final: Array2<f64>,
}

/// Evaluates the explicit sums
/// Tr_pre(t) = sum_x o_pre(x) * prod_{y=x+1..t} d_v * Decay(y) and
/// Tr_corr(T) = sum_t z(v(t-1)) * Tr_pre(t) directly from history.
pub fn unrolled_trace_oracle(
    history: &RecordedHistory,
    dims: &[usize],
    hyper: &NeuronHyper,
) -> Result<Vec<UnrolledTraces>> {
    check_history(history, dims)?;
    let t_steps = history.t_steps;
    let mut out = Vec::new();
    for l in 0..dims.len() - 1 {
        let (n, m) = (dims[l + 1], dims[l]);
        // a(y) = d_v * (1 - o(y-1) - v(y-1) z(v(y-1))), the factor applied
        // when advancing the trace into step y.
        let a = |i: usize, y: usize| -> f64 {
            if y == 0 {
                hyper.d_v
            } else {
                let vv = history.v[l][[y - 1, i]];
                hyper.d_v * (1.0 - history.o[l][[y - 1, i]] - vv * pseudo_grad(vv, hyper))
            }
        };
        let mut tr_pre = Vec::with_capacity(t_steps);
        for t in 0..t_steps {
            let mut m_t = Array2::zeros((n, m));
            for i in 0..n {
                for j in 0..m {
                    let mut acc = 0.0;
                    for x in 0..=t {
                        let o = history.o_pre(l, x)[j];
                        if o == 0.0 {
                            continue;
                        }
                        let mut prod = 1.0;
                        for y in x + 1..=t {
                            prod *= a(i, y);
                        }
                        acc += o * prod;
                    }
                    m_t[[i, j]] = acc;
                }
            }
            tr_pre.push(m_t);
        }
        let mut corr = Array2::zeros((n, m));
        for t in 0..t_steps {
            for i in 0..n {
                let z = z_lagged(&history.v[l], i, t, hyper);
                if z == 0.0 {
                    continue;
                }
                for j in 0..m {
                    corr[[i, j]] += z * tr_pre[t][[i, j]];
                }
            }
        }
        out.push(UnrolledTraces {
            tr_pre,
            tr_corr_final: corr,
        });
    }
    Ok(out)
}

/// The feedback-approximated gradient: the loss gradient at the output is
/// carried by the feedback weights, the temporal part by the unrolled
/// correlation sum. No online state is used.
pub fn approx_gradient(
    history: &RecordedHistory,
    b: &[Array2<f64>],
    dims: &[usize],
    hyper: &NeuronHyper,
) -> Result<Vec<Array2<f64>>> {
    check_history(history, dims)?;
    let unrolled = unrolled_trace_oracle(history, dims, hyper)?;
    let mut grads = Vec::with_capacity(b.len());
    for (l, tr) in unrolled.iter().enumerate() {
        let g = b[l].dot(&history.e_final);
        let mut grad = tr.tr_corr_final.clone();
        for (i, mut row) in grad.outer_iter_mut().enumerate() {
            row.mapv_inplace(|x| g[i] * x);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Plain gradient step.
pub fn sgd_step(w: &mut Array2<f64>, g: &Array2<f64>, lr: f64) -> Result<()> {
    if w.shape() != g.shape() {
        return Err(Error::Shape("sgd_step shape mismatch".into()));
    }
    w.scaled_add(-lr, g);
    Ok(())
}

/// Bias-corrected first/second moment state for a list of parameters.
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[&Array2<f64>]) -> Self {
        AdamState {
            m: shapes.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v: shapes.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update over all parameters at once (one shared step count).
    pub fn step(&mut self, ws: &mut [Array2<f64>], gs: &[Array2<f64>], lr: f64) -> Result<()> {
        if ws.len() != self.m.len() || gs.len() != ws.len() {
            return Err(Error::Shape("adam_step parameter count mismatch".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((w, g), (m, v)) in ws.iter_mut().zip(gs).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if w.shape() != g.shape() {
                return Err(Error::Shape("adam_step shape mismatch".into()));
            }
            for ((wv, &gv), (mv, vv)) in w.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *wv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
