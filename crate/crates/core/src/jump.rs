//! Discrete integral operator `AJ`.
//!
//! Grid values are interpolated bilinearly onto a uniform log-price grid,
//! correlated there with the sampled jump density via FFT, and the result is
//! interpolated back to the price grid. All three factors have nonnegative
//! entries.

use statrs::function::erf::erfc;

use crate::error::{check_len, Error, Result};
use crate::grid::{locate_in, Axis, SpatialGrid};
use crate::model::{Asset, ModelParams};
use crate::xcorr::CirculantCorrelator;

/// Largest power of two accepted for `M_q`.
pub const DEFAULT_MAX_LOG_NODES: usize = 1 << 12;

/// Uniform log-price axis with nodes `x_k = k dx` for `k = -M+1, ..., M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAxis {
    pub m: usize,
    pub dx: f64,
}

impl LogAxis {
    pub fn len(&self) -> usize {
        2 * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Node at storage position `p`, i.e. `k = p - M + 1`.
    pub fn node(&self, p: usize) -> f64 {
        (p as f64 - self.m as f64 + 1.0) * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|p| self.node(p)).collect()
    }
}

/// Smallest gap `ln(s_{j+1} / s_j)` over `j >= 1`.
pub fn min_log_width(axis: &Axis) -> f64 {
    axis.nodes[1..]
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub axes: [LogAxis; 2],
}

impl LogGrid {
    /// Picks, per direction, the smallest power of two `M` such that
    /// `safety * ln(s_max) / M` is below the smallest log mesh width.
    pub fn build(grid: &SpatialGrid, safety: f64, max_m: usize) -> Result<Self> {
        if !(safety >= 1.0) {
            return Err(Error::Invalid("log grid safety factor must be >= 1".into()));
        }
        let mut axes = [LogAxis { m: 0, dx: 0.0 }; 2];
        for (out, axis) in axes.iter_mut().zip(&grid.axes) {
            let span = log_span(axis)?;
            let target = min_log_width(axis);
            let mut m = 1usize;
            while safety * span / m as f64 >= target {
                m *= 2;
                if m > max_m {
                    return Err(Error::Capacity(format!(
                        "log grid needs more than {max_m} nodes per half axis"
                    )));
                }
            }
            *out = LogAxis {
                m,
                dx: span / m as f64,
            };
        }
        Ok(LogGrid { axes })
    }

    /// Log grid with prescribed `M` per direction.
    pub fn with_sizes(grid: &SpatialGrid, m: [usize; 2]) -> Result<Self> {
        let mut axes = [LogAxis { m: 0, dx: 0.0 }; 2];
        for ((out, axis), &mq) in axes.iter_mut().zip(&grid.axes).zip(&m) {
            if mq == 0 {
                return Err(Error::Invalid("log grid size must be positive".into()));
            }
            *out = LogAxis {
                m: mq,
                dx: log_span(axis)? / mq as f64,
            };
        }
        Ok(LogGrid { axes })
    }
}

fn log_span(axis: &Axis) -> Result<f64> {
    let span = axis.s_max().ln();
    if span > 0.0 {
        Ok(span)
    } else {
        Err(Error::Invalid("log grid needs s_max > 1".into()))
    }
}

/// Linear interpolation weights `(j, w)`: value `(1 - w) u[j] + w u[j + 1]`.
pub type Weights = Vec<(usize, f64)>;

/// Bilinear transfer maps between the price grid and the log grid, stored
/// per direction (the 2-D maps are tensor products).
#[derive(Debug, Clone, PartialEq)]
pub struct InterpOperators {
    /// For each log node, the bracketing price cell at `exp(x)`.
    pub forward: [Weights; 2],
    /// For each price node, the bracketing log cell at `ln(s)`, clamped to
    /// the lowest log node for `s` below `exp(x_min)` (including `s = 0`).
    pub backward: [Weights; 2],
}

impl InterpOperators {
    pub fn build(grid: &SpatialGrid, log: &LogGrid) -> Self {
        let mut forward: [Weights; 2] = Default::default();
        let mut backward: [Weights; 2] = Default::default();
        for q in 0..2 {
            let axis = &grid.axes[q];
            let lax = log.axes[q];
            forward[q] = (0..lax.len())
                .map(|p| locate_in(&axis.nodes, lax.node(p).exp()))
                .collect();
            let xs = lax.nodes();
            backward[q] = axis
                .nodes
                .iter()
                .map(|&s| {
                    if s <= 0.0 {
                        (0, 0.0)
                    } else {
                        locate_in(&xs, s.ln())
                    }
                })
                .collect();
        }
        InterpOperators { forward, backward }
    }
}

/// Applies a separable pair of 1-D interpolations to `src` (`rows x cols`,
/// column index fastest) giving `w2.len() x w1.len()`.
fn tensor_interp(src: &[f64], cols: usize, w1: &[(usize, f64)], w2: &[(usize, f64)]) -> Vec<f64> {
    let rows = src.len() / cols;
    let n1 = w1.len();
    let mut tmp = vec![0.0; rows * n1];
    for (row, t) in src.chunks_exact(cols).zip(tmp.chunks_exact_mut(n1)) {
        for (ti, &(j, w)) in t.iter_mut().zip(w1) {
            *ti = if w == 0.0 {
                row[j]
            } else {
                (1.0 - w) * row[j] + w * row[j + 1]
            };
        }
    }
    let mut out = vec![0.0; w2.len() * n1];
    for (o, &(j, w)) in out.chunks_exact_mut(n1).zip(w2) {
        let a = &tmp[j * n1..(j + 1) * n1];
        if w == 0.0 {
            o.copy_from_slice(a);
        } else {
            let b = &tmp[(j + 1) * n1..(j + 2) * n1];
            for ((oi, ai), bi) in o.iter_mut().zip(a).zip(b) {
                *oi = (1.0 - w) * ai + w * bi;
            }
        }
    }
    out
}

/// Sampled jump kernel `lambda * fbar(p dx1, r dx2) dx1 dx2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToeplitzKernel {
    pub params: ModelParams,
    pub dx: [f64; 2],
    pub m: [usize; 2],
}

impl ToeplitzKernel {
    pub fn sample(&self, p: isize, r: isize) -> f64 {
        let eta1 = p as f64 * self.dx[0];
        let eta2 = r as f64 * self.dx[1];
        self.params.lambda * self.params.normal_density_log(eta1, eta2) * self.dx[0] * self.dx[1]
    }

    /// Sum of all samples over the offset window `|p| < 2 M1`, `|r| < 2 M2`.
    pub fn total(&self) -> f64 {
        let (a, b) = (2 * self.m[0] as isize, 2 * self.m[1] as isize);
        let mut acc = 0.0;
        for r in -b + 1..b {
            for p in -a + 1..a {
                acc += self.sample(p, r);
            }
        }
        acc
    }

    /// Upper bound on the jump-size probability mass outside the sampled
    /// window (sum of the two marginal tail masses).
    pub fn tail_mass(&self) -> f64 {
        Asset::BOTH
            .iter()
            .map(|&q| {
                let k = q.index();
                let half = (2 * self.m[k]) as f64 - 1.0;
                let (lo, hi) = (-half * self.dx[k], half * self.dx[k]);
                let (g, d) = (self.params.gamma(q), self.params.delta(q));
                let z = |x: f64| (x - g) / (d * std::f64::consts::SQRT_2);
                0.5 * erfc(-z(lo)) + 0.5 * erfc(z(hi))
            })
            .sum::<f64>()
            .min(1.0)
    }
}

/// The composite operator `AJ = P_back * T * P_fwd`.
#[derive(Debug)]
pub struct JumpOperator {
    pub log_grid: LogGrid,
    pub interp: InterpOperators,
    pub kernel: ToeplitzKernel,
    correlator: Option<CirculantCorrelator>,
    n1: usize,
    n2: usize,
}

impl JumpOperator {
    pub fn build(params: &ModelParams, grid: &SpatialGrid, log_grid: LogGrid) -> Result<Self> {
        let interp = InterpOperators::build(grid, &log_grid);
        let kernel = ToeplitzKernel {
            params: *params,
            dx: [log_grid.axes[0].dx, log_grid.axes[1].dx],
            m: [log_grid.axes[0].m, log_grid.axes[1].m],
        };
        let correlator = if params.lambda > 0.0 {
            Some(CirculantCorrelator::new(
                log_grid.axes[0].len(),
                log_grid.axes[1].len(),
                |p, r| kernel.sample(p, r),
            )?)
        } else {
            None
        };
        let (n1, n2) = grid.shape();
        Ok(JumpOperator {
            log_grid,
            interp,
            kernel,
            correlator,
            n1,
            n2,
        })
    }

    pub fn size(&self) -> usize {
        self.n1 * self.n2
    }

    /// Price-grid values to log-grid values.
    pub fn to_log_grid(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        Ok(tensor_interp(v, self.n1, &self.interp.forward[0], &self.interp.forward[1]))
    }

    /// Log-grid values to price-grid values.
    pub fn from_log_grid(&self, vbar: &[f64]) -> Result<Vec<f64>> {
        let cols = self.log_grid.axes[0].len();
        check_len(cols * self.log_grid.axes[1].len(), vbar.len())?;
        Ok(tensor_interp(vbar, cols, &self.interp.backward[0], &self.interp.backward[1]))
    }

    /// Cross-correlation with the kernel on the log grid.
    pub fn correlate(&self, vbar: &[f64]) -> Result<Vec<f64>> {
        let n = self.log_grid.axes[0].len() * self.log_grid.axes[1].len();
        check_len(n, vbar.len())?;
        match &self.correlator {
            Some(c) => c.apply(vbar),
            None => Ok(vec![0.0; n]),
        }
    }

    /// `AJ v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.correlator.is_none() {
            check_len(self.size(), v.len())?;
            return Ok(vec![0.0; v.len()]);
        }
        let mut vbar = self.to_log_grid(v)?;
        if let Some(c) = &self.correlator {
            c.apply_in_place(&mut vbar)?;
        }
        self.from_log_grid(&vbar)
    }

    /// Maximum absolute row sum of `AJ`, obtained from `AJ 1` since every
    /// factor is entrywise nonnegative.
    pub fn norm_bound(&self) -> Result<f64> {
        let ones = vec![1.0; self.size()];
        Ok(self
            .apply(&ones)?
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs())))
    }
}

/// Summary of the kernel quadrature for diagnostics output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDiagnostics {
    pub m1: usize,
    pub m2: usize,
    pub dx1: f64,
    pub dx2: f64,
    pub lambda: f64,
    pub kernel_sum: f64,
    pub tail_mass: f64,
    pub norm_bound: f64,
}

impl JumpOperator {
    pub fn diagnostics(&self) -> Result<KernelDiagnostics> {
        Ok(KernelDiagnostics {
            m1: self.kernel.m[0],
            m2: self.kernel.m[1],
            dx1: self.kernel.dx[0],
            dx2: self.kernel.dx[1],
            lambda: self.kernel.params.lambda,
            kernel_sum: self.kernel.total(),
            tail_mass: self.kernel.tail_mass(),
            norm_bound: self.norm_bound()?,
        })
    }
}
