//! Smooth nonuniform price grids with the strike placed midway between two
//! nodes.
//!
//! Each direction is built from a uniform grid in an auxiliary variable
//! `xi` mapped through the piecewise function
//!
//! ```text
//! psi(xi) = s_left  + d sinh(xi)           xi_min <= xi <= 0
//!         = s_left  + d xi                 0 < xi <= xi_int
//!         = s_right + d sinh(xi - xi_int)  xi_int < xi <= xi_max
//! ```
//!
//! so that the mesh is uniform on `[s_left, s_right]` and coarsens smoothly
//! towards `0` and `s_max`.

use crate::error::{Error, Result};
use crate::model::Asset;

/// Default number of cells allowed in one direction.
pub const DEFAULT_MAX_CELLS: usize = 4096;

/// Default truncation bound as a multiple of the strike. Jumps carry the
/// far-boundary error inward, so this is larger than diffusion alone needs.
pub const S_MAX_FACTOR: f64 = 16.0;

/// Construction parameters shared by both directions, with a cell count
/// `nu` for the uniform zone per direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nu: [usize; 2],
    pub d: f64,
    pub s_left: f64,
    pub s_right: f64,
    /// Truncation bound before it is reset to the last grid node.
    pub s_max: f64,
    pub max_cells: usize,
}

impl GridSpec {
    /// Standard choice: `d = K/3`, uniform zone `[0.8K, 1.2K]`, `s_max = 16K`.
    pub fn for_strike(strike: f64, nu: usize) -> Self {
        GridSpec {
            nu: [nu, nu],
            d: strike / 3.0,
            s_left: 0.8 * strike,
            s_right: 1.2 * strike,
            s_max: S_MAX_FACTOR * strike,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }

    /// Standard grid whose uniform-zone width `d * dxi` is as close as
    /// possible to `width`, with `nu` odd.
    pub fn with_interior_width(strike: f64, width: f64) -> Self {
        GridSpec::for_strike(strike, 1).targeting_width(width)
    }

    /// Standard grid with odd `nu` whose cell count `m` is closest to
    /// `target` (ties go to the smaller `m`).
    pub fn with_target_cells(strike: f64, target: usize) -> Self {
        GridSpec::for_strike(strike, 1).targeting_cells(target)
    }

    /// Same zone and stretching, odd `nu` giving the uniform-zone width
    /// closest to `width`.
    pub fn targeting_width(self, width: f64) -> Self {
        let x = self.xi_params_unchecked();
        let exact = (x.xi_int - 2.0 * x.xi_min) * self.d / width;
        let nu = nearest_odd(exact);
        GridSpec { nu: [nu, nu], ..self }
    }

    /// Same zone and stretching, odd `nu` giving the cell count closest to
    /// `target` (ties go to the smaller count).
    pub fn targeting_cells(self, target: usize) -> Self {
        let mut best = (usize::MAX, 1);
        let mut nu = 1;
        loop {
            let m = self.cells_for(nu);
            let miss = m.abs_diff(target);
            if miss < best.0 {
                best = (miss, nu);
            }
            if m > target || m > self.max_cells {
                break;
            }
            nu += 2;
        }
        GridSpec {
            nu: [best.1, best.1],
            ..self
        }
    }

    /// Strike implied by the symmetric uniform zone.
    pub fn strike(&self) -> f64 {
        0.5 * (self.s_left + self.s_right)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d > 0.0
            && self.s_left > 0.0
            && self.s_left < self.s_right
            && self.s_right < self.s_max
            && self.s_max.is_finite()
            && self.d.is_finite();
        if !ok {
            return Err(Error::Invalid(format!(
                "grid spec needs d > 0 and 0 < s_left < s_right < s_max, got d={}, [{}, {}], s_max={}",
                self.d, self.s_left, self.s_right, self.s_max
            )));
        }
        if self.nu.iter().any(|&nu| nu == 0) {
            return Err(Error::Invalid("nu must be at least 1".into()));
        }
        Ok(())
    }

    fn xi_params_unchecked(&self) -> XiParams {
        let xi_min = (-self.s_left / self.d).asinh();
        let xi_int = (self.s_right - self.s_left) / self.d;
        let xi_max = xi_int + ((self.s_max - self.s_right) / self.d).asinh();
        XiParams {
            xi_min,
            xi_int,
            xi_max,
            dxi: f64::NAN,
        }
    }

    /// Number of cells `m` produced for a given `nu`.
    pub fn cells_for(&self, nu: usize) -> usize {
        let x = self.xi_params_unchecked();
        let dxi = (x.xi_int - 2.0 * x.xi_min) / nu as f64;
        let ratio = (x.xi_max - x.xi_min) / dxi;
        // guard against ratio landing a hair above an integer
        let mut m = ratio.ceil() as usize;
        if m > 0 && (m as f64 - 1.0) * dxi >= (x.xi_max - x.xi_min) * (1.0 - 1e-14) {
            m -= 1;
        }
        m.max(nu + 1)
    }

    fn psi(&self, x: &XiParams, xi: f64) -> f64 {
        if xi <= 0.0 {
            self.s_left + self.d * xi.sinh()
        } else if xi <= x.xi_int {
            self.s_left + self.d * xi
        } else {
            self.s_right + self.d * (xi - x.xi_int).sinh()
        }
    }
}

fn nearest_odd(x: f64) -> usize {
    let lower = ((x - 1.0) / 2.0).floor().max(0.0) as usize * 2 + 1;
    let upper = lower + 2;
    if (x - lower as f64).abs() <= (upper as f64 - x).abs() {
        lower
    } else {
        upper
    }
}

/// Parameters of the uniform auxiliary grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiParams {
    pub xi_min: f64,
    pub xi_int: f64,
    /// Upper end after the reset to `xi_min + m * dxi`.
    pub xi_max: f64,
    pub dxi: f64,
}

/// Nodes of one direction, `0 = s_0 < s_1 < ... < s_m = s_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub nodes: Vec<f64>,
    pub xi: XiParams,
    pub nu: usize,
    /// Width of the cells inside the uniform zone.
    pub interior_width: f64,
}

impl Axis {
    /// Number of cells `m`.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn s_max(&self) -> f64 {
        *self.nodes.last().expect("axis has nodes")
    }

    /// Mesh width `h_j = s_j - s_{j-1}` for `1 <= j <= m`.
    pub fn h(&self, j: usize) -> f64 {
        self.nodes[j] - self.nodes[j - 1]
    }

    /// Cell index `j` and weight `w` with `s = (1 - w) s_j + w s_{j+1}`,
    /// clamped to the grid.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        locate_in(&self.nodes, s)
    }
}

/// Bracketing cell and linear weight for `x` in the sorted `nodes`, clamped
/// to the end points.
pub(crate) fn locate_in(nodes: &[f64], x: f64) -> (usize, f64) {
    let last = nodes.len() - 1;
    if x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[last] {
        return (last - 1, 1.0);
    }
    // first index with nodes[idx] > x
    let idx = nodes.partition_point(|&n| n <= x);
    let j = idx - 1;
    let w = (x - nodes[j]) / (nodes[j + 1] - nodes[j]);
    (j, w)
}

/// Tensor grid on `[0, s_max]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub axes: [Axis; 2],
}

impl SpatialGrid {
    pub fn build(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let axes = [build_axis(spec, spec.nu[0])?, build_axis(spec, spec.nu[1])?];
        Ok(SpatialGrid { axes })
    }

    pub fn axis(&self, q: Asset) -> &Axis {
        &self.axes[q.index()]
    }

    /// Nodes per direction `(m1 + 1, m2 + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.axes[0].len(), self.axes[1].len())
    }

    /// Total number of grid points.
    pub fn size(&self) -> usize {
        let (n1, n2) = self.shape();
        n1 * n2
    }

    /// Flat index of node `(i, j)`; the first direction runs fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.axes[0].len() * j
    }

    /// Smallest mesh width over both directions.
    pub fn min_width(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| (1..a.len()).map(move |j| a.h(j)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples `f(s1, s2)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size());
        for &s2 in &self.axes[1].nodes {
            for &s1 in &self.axes[0].nodes {
                out.push(f(s1, s2));
            }
        }
        out
    }

    /// Bilinear interpolation of a grid vector at `(s1, s2)`.
    pub fn interpolate(&self, values: &[f64], s1: f64, s2: f64) -> Result<f64> {
        crate::error::check_len(self.size(), values.len())?;
        let (i, w1) = self.axes[0].locate(s1);
        let (j, w2) = self.axes[1].locate(s2);
        let at = |a: usize, b: usize| values[self.index(a, b)];
        Ok((1.0 - w2) * ((1.0 - w1) * at(i, j) + w1 * at(i + 1, j))
            + w2 * ((1.0 - w1) * at(i, j + 1) + w1 * at(i + 1, j + 1)))
    }

    /// True when, in every direction, `strike` sits halfway between two
    /// successive nodes (to `1e-10` relative).
    pub fn strike_midway(&self, strike: f64) -> bool {
        self.axes.iter().all(|a| {
            a.nodes.windows(2).any(|w| {
                w[0] < strike
                    && strike < w[1]
                    && ((strike - w[0]) - (w[1] - strike)).abs() <= 1e-10 * strike
            })
        })
    }
}

fn build_axis(spec: &GridSpec, nu: usize) -> Result<Axis> {
    let mut xi = spec.xi_params_unchecked();
    xi.dxi = (xi.xi_int - 2.0 * xi.xi_min) / nu as f64;
    let m = spec.cells_for(nu);
    if m > spec.max_cells {
        return Err(Error::Capacity(format!(
            "grid would need {m} cells per direction (cap {})",
            spec.max_cells
        )));
    }
    xi.xi_max = xi.xi_min + m as f64 * xi.dxi;
    let mut nodes: Vec<f64> = (0..=m)
        .map(|j| spec.psi(&xi, xi.xi_min + j as f64 * xi.dxi))
        .collect();
    nodes[0] = 0.0;
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("grid nodes are not strictly increasing".into()));
    }
    Ok(Axis {
        nodes,
        xi,
        nu,
        interior_width: spec.d * xi.dxi,
    })
}

/// Writes `q,j,s` rows for every node.
pub fn node_rows(grid: &SpatialGrid) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    grid.axes
        .iter()
        .enumerate()
        .flat_map(|(q, a)| a.nodes.iter().enumerate().map(move |(j, &s)| (q + 1, j, s)))
}
