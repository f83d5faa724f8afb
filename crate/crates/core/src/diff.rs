//! Finite difference discretisation of the convection-diffusion-reaction
//! part: one-directional operators `A1`, `A2` and the mixed derivative
//! operator `AM`, with `AD = AM + A1 + A2`.

use crate::error::{check_len, Result};
use crate::grid::{Axis, SpatialGrid};
use crate::model::{Asset, ModelParams};

/// Three-point weights for the first (`alpha`) and second (`beta`)
/// derivative at each node of an axis, ordered `(j-1, j, j+1)`.
///
/// Node `0` carries no stencil. Node `m` uses the two-point backward
/// difference for the first derivative and no second derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilCoeffs {
    pub alpha: Vec<[f64; 3]>,
    pub beta: Vec<[f64; 3]>,
}

impl StencilCoeffs {
    pub fn build(axis: &Axis) -> Self {
        let m = axis.cells();
        let mut alpha = vec![[0.0; 3]; m + 1];
        let mut beta = vec![[0.0; 3]; m + 1];
        for j in 1..m {
            let (h0, h1) = (axis.h(j), axis.h(j + 1));
            alpha[j] = [
                -h1 / (h0 * (h0 + h1)),
                (h1 - h0) / (h0 * h1),
                h0 / (h1 * (h0 + h1)),
            ];
            beta[j] = [
                2.0 / (h0 * (h0 + h1)),
                -2.0 / (h0 * h1),
                2.0 / (h1 * (h0 + h1)),
            ];
        }
        let hm = axis.h(m);
        alpha[m] = [-1.0 / hm, 1.0 / hm, 0.0];
        StencilCoeffs { alpha, beta }
    }
}

/// Tridiagonal matrix stored by bands; `lower[0]` and `upper[n-1]` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `I - c * self`.
    pub fn shifted_identity(&self, c: f64) -> Tridiagonal {
        Tridiagonal {
            lower: self.lower.iter().map(|a| -c * a).collect(),
            diag: self.diag.iter().map(|a| 1.0 - c * a).collect(),
            upper: self.upper.iter().map(|a| -c * a).collect(),
        }
    }
}

/// One-directional operator `A_q`: convection, diffusion and half the
/// reaction term along direction `q`, identical on every grid line.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalOperator {
    pub direction: Asset,
    pub band: Tridiagonal,
    n1: usize,
    n2: usize,
}

impl DirectionalOperator {
    pub fn assemble(params: &ModelParams, grid: &SpatialGrid, q: Asset) -> Self {
        let axis = grid.axis(q);
        let st = StencilCoeffs::build(axis);
        let sigma = params.sigma(q);
        let drift = params.r - params.lambda * params.expected_relative_jump(q);
        let half_reaction = -0.5 * (params.r + params.lambda);
        let n = axis.len();
        let mut band = Tridiagonal {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        };
        for (j, &s) in axis.nodes.iter().enumerate() {
            let diff = 0.5 * sigma * sigma * s * s;
            let conv = drift * s;
            let (a, b) = (st.alpha[j], st.beta[j]);
            band.lower[j] = diff * b[0] + conv * a[0];
            band.diag[j] = diff * b[1] + conv * a[1] + half_reaction;
            band.upper[j] = diff * b[2] + conv * a[2];
        }
        let (n1, n2) = grid.shape();
        DirectionalOperator {
            direction: q,
            band,
            n1,
            n2,
        }
    }

    /// `out += scale * A_q v`.
    pub fn apply_add(&self, scale: f64, v: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        let b = &self.band;
        match self.direction {
            Asset::First => {
                for (line, o) in v.chunks_exact(n1).zip(out.chunks_exact_mut(n1)) {
                    o[0] += scale * (b.diag[0] * line[0] + b.upper[0] * line[1]);
                    for i in 1..n1 - 1 {
                        o[i] += scale
                            * (b.lower[i] * line[i - 1] + b.diag[i] * line[i] + b.upper[i] * line[i + 1]);
                    }
                    let l = n1 - 1;
                    o[l] += scale * (b.lower[l] * line[l - 1] + b.diag[l] * line[l]);
                }
            }
            Asset::Second => {
                for j in 0..n2 {
                    let o = &mut out[j * n1..(j + 1) * n1];
                    let (lo, di, up) = (scale * b.lower[j], scale * b.diag[j], scale * b.upper[j]);
                    let cur = &v[j * n1..(j + 1) * n1];
                    for (oi, ci) in o.iter_mut().zip(cur) {
                        *oi += di * ci;
                    }
                    if j > 0 {
                        let prev = &v[(j - 1) * n1..j * n1];
                        for (oi, pi) in o.iter_mut().zip(prev) {
                            *oi += lo * pi;
                        }
                    }
                    if j + 1 < n2 {
                        let next = &v[(j + 1) * n1..(j + 2) * n1];
                        for (oi, ni) in o.iter_mut().zip(next) {
                            *oi += up * ni;
                        }
                    }
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_add(1.0, v, &mut out);
        out
    }
}

/// Mixed derivative operator `rho sigma1 sigma2 s1 s2 d^2/ds1 ds2`, built as
/// the product of the first-derivative stencils in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedOperator {
    pub alpha1: Vec<[f64; 3]>,
    pub alpha2: Vec<[f64; 3]>,
    /// `rho sigma1 sigma2 s1_i s2_j`, row-major with `i` fastest.
    pub coeff: Vec<f64>,
    n1: usize,
    n2: usize,
}

impl MixedOperator {
    pub fn assemble(params: &ModelParams, grid: &SpatialGrid) -> Self {
        let alpha1 = StencilCoeffs::build(&grid.axes[0]).alpha;
        let alpha2 = StencilCoeffs::build(&grid.axes[1]).alpha;
        let scale = params.rho * params.sigma1 * params.sigma2;
        let coeff = grid.sample(|s1, s2| scale * s1 * s2);
        let (n1, n2) = grid.shape();
        MixedOperator {
            alpha1,
            alpha2,
            coeff,
            n1,
            n2,
        }
    }

    /// Weight coupling node `(i, j)` to `(i + a - 1, j + b - 1)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.coeff[i + self.n1 * j] * self.alpha1[i][a] * self.alpha2[j][b]
    }

    /// `out += scale * AM v`.
    pub fn apply_add(&self, scale: f64, v: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        // first derivative in direction 1 on every line
        let mut d1 = vec![0.0; v.len()];
        for (line, o) in v.chunks_exact(n1).zip(d1.chunks_exact_mut(n1)) {
            for i in 1..n1 {
                let a = self.alpha1[i];
                let right = if i + 1 < n1 { line[i + 1] } else { 0.0 };
                o[i] = a[0] * line[i - 1] + a[1] * line[i] + a[2] * right;
            }
        }
        for j in 1..n2 {
            let a = self.alpha2[j];
            for i in 1..n1 {
                let k = i + n1 * j;
                let mut acc = a[0] * d1[k - n1] + a[1] * d1[k];
                if j + 1 < n2 {
                    acc += a[2] * d1[k + n1];
                }
                out[k] += scale * self.coeff[k] * acc;
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_add(1.0, v, &mut out);
        out
    }
}

/// The discrete differential operators on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSet {
    pub a1: DirectionalOperator,
    pub a2: DirectionalOperator,
    pub mixed: MixedOperator,
}

impl OperatorSet {
    pub fn assemble(params: &ModelParams, grid: &SpatialGrid) -> Self {
        OperatorSet {
            a1: DirectionalOperator::assemble(params, grid, Asset::First),
            a2: DirectionalOperator::assemble(params, grid, Asset::Second),
            mixed: MixedOperator::assemble(params, grid),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.a1.n1, self.a1.n2)
    }

    pub fn size(&self) -> usize {
        self.a1.n1 * self.a1.n2
    }

    pub fn directional(&self, q: Asset) -> &DirectionalOperator {
        match q {
            Asset::First => &self.a1,
            Asset::Second => &self.a2,
        }
    }

    /// `out += scale * AD v`.
    pub fn apply_ad_add(&self, scale: f64, v: &[f64], out: &mut [f64]) {
        self.a1.apply_add(scale, v, out);
        self.a2.apply_add(scale, v, out);
        self.mixed.apply_add(scale, v, out);
    }

    /// `AD v` with a length check.
    pub fn apply_ad(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        let mut out = vec![0.0; v.len()];
        self.apply_ad_add(1.0, v, &mut out);
        Ok(out)
    }
}
