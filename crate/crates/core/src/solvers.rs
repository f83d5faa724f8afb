//! Linear solves for the implicit stages: line-wise tridiagonal systems
//! `(I - c A_q) x = b`, the nine-point system `(I - c AD + D) x = b`, and a
//! projected SOR solver for small linear complementarity problems.

use std::collections::HashMap;

use crate::diff::{DirectionalOperator, OperatorSet};
use crate::error::{check_len, Error, Result};
use crate::model::Asset;

const RESIDUAL_TOL: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 3;
/// Target for the Krylov path, tighter than the acceptance bound so both
/// paths agree closely.
const KRYLOV_TOL: f64 = 1e-13;
const KRYLOV_MAX_ITER: usize = 500;
/// Band storage (in entries) above which the nine-point system is solved
/// iteratively; 2^25 entries is 256 MiB.
pub const DEFAULT_DIRECT_LIMIT: usize = 1 << 25;

/// Thomas factors of `I - c A_q`, shared by all grid lines in direction `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFactorization {
    pub direction: Asset,
    pub c: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
    n1: usize,
    n2: usize,
}

fn thomas_factors(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let mut up = vec![0.0; n];
    let mut inv = vec![0.0; n];
    for i in 0..n {
        let pivot = diag[i] - if i > 0 { lower[i] * up[i - 1] } else { 0.0 };
        if pivot.abs() < f64::EPSILON * diag[i].abs().max(1.0) {
            return Err(Error::Solver(format!("zero pivot in tridiagonal factorisation at row {i}")));
        }
        inv[i] = 1.0 / pivot;
        up[i] = upper[i] * inv[i];
    }
    Ok((up, inv))
}

impl LineFactorization {
    pub fn new(op: &DirectionalOperator, c: f64, shape: (usize, usize)) -> Result<Self> {
        let m = op.band.shifted_identity(c);
        let (upper, inv_pivot) = thomas_factors(&m.lower, &m.diag, &m.upper)?;
        Ok(LineFactorization {
            direction: op.direction,
            c,
            lower: m.lower,
            upper,
            inv_pivot,
            n1: shape.0,
            n2: shape.1,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_len(self.n1 * self.n2, x.len())?;
        let (lo, up, inv) = (&self.lower, &self.upper, &self.inv_pivot);
        match self.direction {
            Asset::First => {
                let n = self.n1;
                for line in x.chunks_exact_mut(n) {
                    line[0] *= inv[0];
                    for i in 1..n {
                        line[i] = (line[i] - lo[i] * line[i - 1]) * inv[i];
                    }
                    for i in (0..n - 1).rev() {
                        line[i] -= up[i] * line[i + 1];
                    }
                }
            }
            Asset::Second => {
                let (n1, n2) = (self.n1, self.n2);
                x[..n1].iter_mut().for_each(|v| *v *= inv[0]);
                for j in 1..n2 {
                    let (prev, cur) = x[(j - 1) * n1..(j + 1) * n1].split_at_mut(n1);
                    for (c, p) in cur.iter_mut().zip(prev.iter()) {
                        *c = (*c - lo[j] * p) * inv[j];
                    }
                }
                for j in (0..n2 - 1).rev() {
                    let (cur, next) = x[j * n1..(j + 2) * n1].split_at_mut(n1);
                    for (c, nx) in cur.iter_mut().zip(next.iter()) {
                        *c -= up[j] * nx;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Solves `(I - c A_q + diag(extra)) x = rhs` line by line; `extra` varies
/// per node, so the factors are formed on the fly.
pub fn solve_directional_with_diag(
    op: &DirectionalOperator,
    c: f64,
    extra: &[f64],
    rhs: &[f64],
    shape: (usize, usize),
) -> Result<Vec<f64>> {
    let (n1, n2) = shape;
    check_len(n1 * n2, rhs.len())?;
    check_len(n1 * n2, extra.len())?;
    let m = op.band.shifted_identity(c);
    let mut x = rhs.to_vec();
    match op.direction {
        Asset::First => {
            let mut diag = vec![0.0; n1];
            for (line, e) in x.chunks_exact_mut(n1).zip(extra.chunks_exact(n1)) {
                for i in 0..n1 {
                    diag[i] = m.diag[i] + e[i];
                }
                let (up, inv) = thomas_factors(&m.lower, &diag, &m.upper)?;
                line[0] *= inv[0];
                for i in 1..n1 {
                    line[i] = (line[i] - m.lower[i] * line[i - 1]) * inv[i];
                }
                for i in (0..n1 - 1).rev() {
                    line[i] -= up[i] * line[i + 1];
                }
            }
        }
        Asset::Second => {
            // all lines advance together, j outer
            let mut up = vec![0.0; n1 * n2];
            let mut prev_up: Option<usize> = None;
            for j in 0..n2 {
                for i in 0..n1 {
                    let k = j * n1 + i;
                    let mut pivot = m.diag[j] + extra[k];
                    let mut val = x[k];
                    if let Some(pj) = prev_up {
                        let kp = pj * n1 + i;
                        pivot -= m.lower[j] * up[kp];
                        val -= m.lower[j] * x[kp];
                    }
                    if pivot.abs() < f64::EPSILON * (m.diag[j] + extra[k]).abs().max(1.0) {
                        return Err(Error::Solver(format!("zero pivot at node ({i}, {j})")));
                    }
                    up[k] = m.upper[j] / pivot;
                    x[k] = val / pivot;
                }
                prev_up = Some(j);
            }
            for j in (0..n2 - 1).rev() {
                for i in 0..n1 {
                    let k = j * n1 + i;
                    x[k] -= up[k] * x[k + n1];
                }
            }
        }
    }
    Ok(x)
}

/// Nine-point representation of `AD`: for every node the weights of the
/// neighbours at offsets `(a - 1, b - 1)`, stored at `3 b + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct NinePoint {
    pub n1: usize,
    pub n2: usize,
    pub weights: Vec<[f64; 9]>,
}

impl NinePoint {
    pub fn from_operators(ops: &OperatorSet) -> Self {
        let (n1, n2) = ops.shape();
        let mut weights = vec![[0.0; 9]; n1 * n2];
        let (b1, b2) = (&ops.a1.band, &ops.a2.band);
        for j in 0..n2 {
            for i in 0..n1 {
                let w = &mut weights[i + n1 * j];
                w[3] += b1.lower[i];
                w[4] += b1.diag[i] + b2.diag[j];
                w[5] += b1.upper[i];
                w[1] += b2.lower[j];
                w[7] += b2.upper[j];
                for b in 0..3 {
                    for a in 0..3 {
                        w[3 * b + a] += ops.mixed.weight(i, j, a, b);
                    }
                }
            }
        }
        NinePoint { n1, n2, weights }
    }

    pub fn size(&self) -> usize {
        self.n1 * self.n2
    }

    /// Neighbour index for offset slot `t`, if inside the grid.
    fn neighbour(&self, i: usize, j: usize, t: usize) -> Option<usize> {
        let (a, b) = (t % 3, t / 3);
        let ii = (i + a).checked_sub(1)?;
        let jj = (j + b).checked_sub(1)?;
        (ii < self.n1 && jj < self.n2).then(|| ii + self.n1 * jj)
    }

    /// `(I - c AD + diag(extra)) x`.
    pub fn apply_shifted(&self, c: f64, extra: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for j in 0..self.n2 {
            for i in 0..self.n1 {
                let k = i + self.n1 * j;
                let w = &self.weights[k];
                let mut acc = 0.0;
                for (t, &wt) in w.iter().enumerate() {
                    if wt != 0.0 {
                        if let Some(nb) = self.neighbour(i, j, t) {
                            acc += wt * x[nb];
                        }
                    }
                }
                out[k] -= c * acc;
                if let Some(e) = extra {
                    out[k] += e[k] * x[k];
                }
            }
        }
        out
    }
}

/// LU factors of a banded matrix with equal lower and upper bandwidth `b`,
/// without pivoting. Row `i` stores columns `i - b ..= i + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLu {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl BandLu {
    /// Factors `I - c AD + diag(extra)`.
    pub fn shifted(ad: &NinePoint, c: f64, extra: Option<&[f64]>) -> Result<Self> {
        let n = ad.size();
        let b = ad.n1 + 1;
        let w = 2 * b + 1;
        let mut data = vec![0.0; n * w];
        for j in 0..ad.n2 {
            for i in 0..ad.n1 {
                let k = i + ad.n1 * j;
                let row = &mut data[k * w..(k + 1) * w];
                for (t, &wt) in ad.weights[k].iter().enumerate() {
                    if let Some(nb) = ad.neighbour(i, j, t) {
                        row[nb + b - k] -= c * wt;
                    }
                }
                row[b] += 1.0 + extra.map_or(0.0, |e| e[k]);
            }
        }
        for k in 0..n {
            let pivot = data[k * w + b];
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(Error::Solver(format!("zero pivot in banded factorisation at row {k}")));
            }
            let last = (k + b).min(n - 1);
            let (head, tail) = data.split_at_mut((k + 1) * w);
            let prow = &head[k * w..];
            // entries k+1 ..= k+b of row k
            let urow = &prow[b + 1..];
            for i in k + 1..=last {
                let r = &mut tail[(i - k - 1) * w..(i - k) * w];
                let off = b - (i - k);
                let l = r[off];
                if l == 0.0 {
                    continue;
                }
                let l = l / pivot;
                r[off] = l;
                let span = last.min(k + b) - k;
                for (x, u) in r[off + 1..off + 1 + span].iter_mut().zip(&urow[..span]) {
                    *x -= l * u;
                }
            }
        }
        Ok(BandLu { n, b, data })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b) = (self.n, self.b);
        let w = 2 * b + 1;
        for i in 0..n {
            let row = &self.data[i * w..(i + 1) * w];
            let lo = i.saturating_sub(b);
            let mut acc = x[i];
            for (c, xv) in (lo..i).zip(&x[lo..i]) {
                acc -= row[c + b - i] * xv;
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let row = &self.data[i * w..(i + 1) * w];
            let hi = (i + b).min(n - 1);
            let mut acc = x[i];
            for (c, xv) in (i + 1..=hi).zip(&x[i + 1..=hi]) {
                acc -= row[c + b - i] * xv;
            }
            x[i] = acc / row[b];
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solver for `(I - c AD + diag(extra)) x = rhs` with factorisations cached
/// per `c` (no extra diagonal) and for the most recent extra diagonal.
#[derive(Debug)]
pub struct StencilSolver {
    pub ad: NinePoint,
    lines: [DirectionalOperator; 2],
    direct_limit: usize,
    plain: HashMap<u64, BandLu>,
    shifted: Option<(u64, Vec<f64>, BandLu)>,
    second: HashMap<u64, LineFactorization>,
    factorizations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl StencilSolver {
    pub fn new(ops: &OperatorSet) -> Self {
        Self::with_direct_limit(ops, DEFAULT_DIRECT_LIMIT)
    }

    /// Banded LU when the band storage fits in `limit` entries, otherwise
    /// BiCGSTAB preconditioned by the two directional factors.
    pub fn with_direct_limit(ops: &OperatorSet, limit: usize) -> Self {
        StencilSolver {
            ad: NinePoint::from_operators(ops),
            lines: [ops.a1.clone(), ops.a2.clone()],
            direct_limit: limit,
            plain: HashMap::new(),
            shifted: None,
            second: HashMap::new(),
            factorizations: 0,
        }
    }

    /// Number of factorisations computed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Whether systems are solved by banded LU.
    pub fn is_direct(&self) -> bool {
        let n = self.ad.size();
        let band = 2 * (self.ad.n1 + 1) + 1;
        n.saturating_mul(band) <= self.direct_limit
    }

    pub fn solve(&mut self, c: f64, rhs: &[f64], extra: Option<&[f64]>) -> Result<Vec<f64>> {
        check_len(self.ad.size(), rhs.len())?;
        if !(c >= 0.0) {
            return Err(Error::Invalid(format!("implicit weight must be nonnegative, got {c}")));
        }
        if let Some(e) = extra {
            check_len(self.ad.size(), e.len())?;
            if e.iter().any(|&d| !(d >= 0.0)) {
                return Err(Error::Invalid("extra diagonal must be nonnegative".into()));
            }
        }
        let extra = extra.filter(|e| e.iter().any(|&d| d != 0.0));
        if c == 0.0 && extra.is_none() {
            return Ok(rhs.to_vec());
        }
        if self.is_direct() {
            self.solve_direct(c, rhs, extra)
        } else {
            self.solve_krylov(c, rhs, extra)
        }
    }

    fn solve_direct(&mut self, c: f64, rhs: &[f64], extra: Option<&[f64]>) -> Result<Vec<f64>> {
        let key = c.to_bits();
        let lu = match extra {
            None => {
                if !self.plain.contains_key(&key) {
                    if self.plain.len() >= 4 {
                        self.plain.clear();
                    }
                    let lu = BandLu::shifted(&self.ad, c, None)?;
                    self.factorizations += 1;
                    self.plain.insert(key, lu);
                }
                &self.plain[&key]
            }
            Some(e) => {
                let hit = matches!(&self.shifted, Some((k, d, _)) if *k == key && d.as_slice() == e);
                if !hit {
                    let lu = BandLu::shifted(&self.ad, c, Some(e))?;
                    self.factorizations += 1;
                    self.shifted = Some((key, e.to_vec(), lu));
                }
                &self.shifted.as_ref().map(|s| &s.2).ok_or_else(|| Error::Solver("missing factorisation".into()))?
            }
        };
        let mut x = rhs.to_vec();
        lu.solve_in_place(&mut x);
        let bound = RESIDUAL_TOL * max_abs(rhs);
        for _ in 0..=REFINEMENT_STEPS {
            let ax = self.ad.apply_shifted(c, extra, &x);
            let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            if max_abs(&r) <= bound {
                return Ok(x);
            }
            lu.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
        Err(Error::NoConvergence {
            what: "iterative refinement of the nine-point solve".into(),
            iterations: REFINEMENT_STEPS,
        })
    }

    /// `(I - c A2)^{-1} (I - c A1 + E)^{-1} x`.
    fn precondition(&mut self, c: f64, extra: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let shape = (self.ad.n1, self.ad.n2);
        let mut y = solve_directional_with_diag(&self.lines[0], c, extra, x, shape)?;
        let key = c.to_bits();
        if !self.second.contains_key(&key) {
            if self.second.len() >= 4 {
                self.second.clear();
            }
            self.second.insert(key, LineFactorization::new(&self.lines[1], c, shape)?);
            self.factorizations += 1;
        }
        self.second[&key].solve_in_place(&mut y)?;
        Ok(y)
    }

    fn solve_krylov(&mut self, c: f64, rhs: &[f64], extra: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = rhs.len();
        let zeros;
        let e = match extra {
            Some(e) => e,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        let scale = max_abs(rhs);
        if scale == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let target = KRYLOV_TOL * scale;
        let mut x = self.precondition(c, e, rhs)?;
        let ax = self.ad.apply_shifted(c, extra, &x);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        for _ in 0..KRYLOV_MAX_ITER {
            if max_abs(&r) <= target {
                return Ok(x);
            }
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            let y = self.precondition(c, e, &p)?;
            v = self.ad.apply_shifted(c, extra, &y);
            let denom = dot(&r0, &v);
            if denom == 0.0 {
                break;
            }
            alpha = rho / denom;
            let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
            if max_abs(&s) <= target {
                x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi += alpha * yi);
                return Ok(x);
            }
            let z = self.precondition(c, e, &s)?;
            let t = self.ad.apply_shifted(c, extra, &z);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
        }
        // accept a stagnated iterate if it still meets the direct-path bound
        let ax = self.ad.apply_shifted(c, extra, &x);
        let res = rhs.iter().zip(&ax).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
        if res <= RESIDUAL_TOL * scale {
            Ok(x)
        } else {
            Err(Error::NoConvergence {
                what: format!("preconditioned BiCGSTAB for the nine-point solve (residual {res:.2e})"),
                iterations: KRYLOV_MAX_ITER,
            })
        }
    }
}

/// Settings for the projected SOR iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsorSettings {
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PsorSettings {
    fn default() -> Self {
        PsorSettings {
            omega: 1.2,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Solves the complementarity problem
/// `(I - c AD) V = rhs + c lambda`, `V >= lower`, `lambda >= 0`,
/// `(V - lower)' lambda = 0`, returning `(V, lambda)`.
pub fn solve_lcp_psor(
    ad: &NinePoint,
    c: f64,
    rhs: &[f64],
    lower: &[f64],
    settings: PsorSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ad.size();
    check_len(n, rhs.len())?;
    check_len(n, lower.len())?;
    if !(c > 0.0) {
        return Err(Error::Invalid("complementarity solve needs a positive step".into()));
    }
    let mut v: Vec<f64> = rhs.iter().zip(lower).map(|(r, l)| r.max(*l)).collect();
    let mut converged = false;
    for _ in 0..settings.max_iter {
        let mut change = 0.0f64;
        for j in 0..ad.n2 {
            for i in 0..ad.n1 {
                let k = i + ad.n1 * j;
                let w = &ad.weights[k];
                let diag = 1.0 - c * w[4];
                let mut off = 0.0;
                for (t, &wt) in w.iter().enumerate() {
                    if t != 4 && wt != 0.0 {
                        if let Some(nb) = ad.neighbour(i, j, t) {
                            off -= c * wt * v[nb];
                        }
                    }
                }
                let gs = (rhs[k] - off) / diag;
                let next = (v[k] + settings.omega * (gs - v[k])).max(lower[k]);
                change = change.max((next - v[k]).abs());
                v[k] = next;
            }
        }
        if change < settings.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "projected SOR".into(),
            iterations: settings.max_iter,
        });
    }
    let av = ad.apply_shifted(c, None, &v);
    let lambda = av
        .iter()
        .zip(rhs)
        .zip(v.iter().zip(lower))
        .map(|((a, r), (vi, li))| if vi > li { 0.0 } else { ((a - r) / c).max(0.0) })
        .collect();
    Ok((v, lambda))
}
