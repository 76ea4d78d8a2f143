//! Deterministic fixed-point simulation of low-precision weights and traces.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Symmetric fixed-point grid: step = range_max / 2^(bits-1), clamped to
/// +-(2^(bits-1) - 1) * step. 32 bits means pass-through.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionSpec {
    pub bits: u32,
    pub range_max: f64,
}

impl PrecisionSpec {
    pub fn new(bits: u32, range_max: f64) -> Result<Self> {
        if !matches!(bits, 8 | 16 | 32) {
            return Err(Error::Config(format!("bits must be 8, 16, or 32, got {bits}")));
        }
        if range_max <= 0.0 {
            return Err(Error::Config("range_max must be positive".into()));
        }
        Ok(PrecisionSpec { bits, range_max })
    }

    pub fn is_passthrough(&self) -> bool {
        self.bits == 32
    }

    pub fn step(&self) -> f64 {
        self.range_max / (1u64 << (self.bits - 1)) as f64
    }

    /// Round-to-nearest with ties-to-even on the grid, then clamp.
    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        if self.bits == 32 {
            return x;
        }
        let step = self.step();
        let max_code = ((1u64 << (self.bits - 1)) - 1) as f64;
        let code = (x / step).round_ties_even().clamp(-max_code, max_code);
        code * step
    }

    pub fn quantize_matrix(&self, m: &mut Array2<f64>) {
        if self.bits == 32 {
            return;
        }
        m.mapv_inplace(|x| self.quantize(x));
    }

    /// Quantize with a rounding-residual carry. Each entry is rounded after
    /// adding back the residual left by its previous rounding, so updates
    /// smaller than the grid step accumulate across steps instead of being
    /// discarded, while the stored matrix stays on-grid. The carry is
    /// bounded by half a step; rounding stays deterministic.
    pub fn quantize_matrix_carry(&self, m: &mut Array2<f64>, carry: &mut Array2<f64>) {
        if self.bits == 32 {
            return;
        }
        let half = 0.5 * self.step();
        ndarray::Zip::from(m).and(carry).for_each(|x, r| {
            let t = *x + *r;
            let q = self.quantize(t);
            *r = (t - q).clamp(-half, half);
            *x = q;
        });
    }

    /// True when every entry lies on the grid.
    pub fn on_grid(&self, m: &Array2<f64>) -> bool {
        if self.bits == 32 {
            return true;
        }
        m.iter().all(|&x| x == self.quantize(x))
    }
}

/// Precision applied per tensor class.
#[derive(Clone, Copy, Debug)]
pub struct QuantConfig {
    pub weights: PrecisionSpec,
    pub traces: PrecisionSpec,
}

impl QuantConfig {
    pub fn new(bits: u32, weight_range: f64, trace_range: f64) -> Result<Self> {
        Ok(QuantConfig {
            weights: PrecisionSpec::new(bits, weight_range)?,
            traces: PrecisionSpec::new(bits, trace_range)?,
        })
    }

    pub fn is_passthrough(&self) -> bool {
        self.weights.is_passthrough()
    }
}
