//! Convergence studies and price tables: reference solutions, temporal
//! errors on a region of interest, order fits, early exercise regions.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};
use crate::grid::{GridSpec, SpatialGrid};
use crate::model::{ParameterSet, PayoffKind};
use crate::problem::Problem;
use crate::steppers::{Method, MethodConfig, RunDiagnostics, Stepper};

/// Open square `(s_lower, s_upper)^2` on which errors are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSpec {
    pub s_lower: f64,
    pub s_upper: f64,
}

impl RoiSpec {
    pub fn new(s_lower: f64, s_upper: f64) -> Result<Self> {
        let roi = RoiSpec { s_lower, s_upper };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_lower > 0.0 && self.s_lower < self.s_upper && self.s_upper.is_finite() {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "region of interest needs 0 < s_lower < s_upper, got ({}, {})",
                self.s_lower, self.s_upper
            )))
        }
    }

    pub fn contains(&self, s: f64) -> bool {
        self.s_lower < s && s < self.s_upper
    }

    /// Indices `(i, j)` of the grid nodes strictly inside the region.
    pub fn nodes<'g>(&self, grid: &'g SpatialGrid) -> impl Iterator<Item = (usize, usize)> + 'g {
        let roi = *self;
        let (a1, a2) = (&grid.axes[0], &grid.axes[1]);
        a2.nodes.iter().enumerate().filter(move |(_, s)| roi.contains(**s)).flat_map(move |(j, _)| {
            a1.nodes
                .iter()
                .enumerate()
                .filter(move |(_, s)| roi.contains(**s))
                .map(move |(i, _)| (i, j))
        })
    }
}

/// The two standard regions of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoiKind {
    /// `[K/2, 3K/2]`.
    Large,
    /// `[7K/8, 9K/8]` for the put-on-min, `[9K/10, 11K/10]` for the
    /// put-on-average.
    Small,
}

impl RoiKind {
    pub const ALL: [RoiKind; 2] = [RoiKind::Large, RoiKind::Small];

    pub fn name(self) -> &'static str {
        match self {
            RoiKind::Large => "large",
            RoiKind::Small => "small",
        }
    }

    pub fn spec(self, strike: f64, payoff: PayoffKind) -> RoiSpec {
        let (lo, hi) = match (self, payoff) {
            (RoiKind::Large, _) => (0.5, 1.5),
            (RoiKind::Small, PayoffKind::PutOnMin) => (7.0 / 8.0, 9.0 / 8.0),
            (RoiKind::Small, PayoffKind::PutOnAverage) => (0.9, 1.1),
        };
        RoiSpec {
            s_lower: lo * strike,
            s_upper: hi * strike,
        }
    }
}

impl fmt::Display for RoiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "large" => Ok(RoiKind::Large),
            "small" => Ok(RoiKind::Small),
            _ => Err(Error::Invalid(format!("unknown region '{s}', expected large or small"))),
        }
    }
}

/// Method used for the reference solution, always with `10 N` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceBackend {
    CnfiP,
    /// MCS2-IT(2).
    Mcs2It,
}

impl ReferenceBackend {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceBackend::CnfiP => "CNFI-P",
            ReferenceBackend::Mcs2It => "MCS2-IT",
        }
    }

    pub fn config(self, n: usize) -> MethodConfig {
        match self {
            ReferenceBackend::CnfiP => MethodConfig::new(Method::CnfiP, 1, 10 * n),
            ReferenceBackend::Mcs2It => MethodConfig::new(Method::Mcs2It, 2, 10 * n),
        }
    }
}

impl FromStr for ReferenceBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match Method::from_str(s)? {
            Method::CnfiP => Ok(ReferenceBackend::CnfiP),
            Method::Mcs2It => Ok(ReferenceBackend::Mcs2It),
            other => Err(Error::Invalid(format!(
                "reference backend must be CNFI-P or MCS2-IT, got {other}"
            ))),
        }
    }
}

/// Step count matched on jump operator applications; see
/// [`Method::matched_steps`].
pub fn matched_steps(method: Method, kappa: usize, n: usize) -> usize {
    method.matched_steps(kappa, n)
}

/// Reference solution at maturity with `10 N` steps of the chosen backend.
pub fn reference_solution(problem: &Problem, n: usize, backend: ReferenceBackend) -> Result<Vec<f64>> {
    Ok(Stepper::new(problem, backend.config(n))?.run()?.values)
}

/// Maximum absolute difference over the nodes inside `roi`.
pub fn temporal_error(values: &[f64], reference: &[f64], grid: &SpatialGrid, roi: &RoiSpec) -> Result<f64> {
    check_len(grid.size(), values.len())?;
    check_len(grid.size(), reference.len())?;
    let mut err = 0.0f64;
    let mut any = false;
    for (i, j) in roi.nodes(grid) {
        let k = grid.index(i, j);
        err = err.max((values[k] - reference[k]).abs());
        any = true;
    }
    if any {
        Ok(err)
    } else {
        Err(Error::Invalid("region of interest contains no grid nodes".into()))
    }
}

/// Least-squares slope of `log(error)` against `log(1/m)` over the ten
/// largest `m`.
pub fn convergence_order(ms: &[usize], errors: &[f64]) -> Result<f64> {
    check_len(ms.len(), errors.len())?;
    let mut pts: Vec<(usize, f64)> = ms.iter().copied().zip(errors.iter().copied()).collect();
    pts.sort_by_key(|p| std::cmp::Reverse(p.0));
    pts.truncate(10);
    if pts.len() < 2 {
        return Err(Error::Invalid("order fit needs at least two points".into()));
    }
    if pts.iter().any(|&(m, e)| m == 0 || !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Invalid("order fit needs positive m and positive finite errors".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|&(m, _)| -(m as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("order fit needs distinct m values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Nodes where the value is within `tol * max(1, K)` of the payoff.
pub fn extract_eer(values: &[f64], payoff: &[f64], tol: f64, strike: f64) -> Result<Vec<bool>> {
    check_len(values.len(), payoff.len())?;
    let bound = tol * strike.max(1.0);
    Ok(values.iter().zip(payoff).map(|(v, p)| v - p <= bound).collect())
}

/// Default tolerance for [`extract_eer`].
pub const EER_TOL: f64 = 1e-4;

/// Whether any node of the mask lies inside the region.
pub fn roi_intersects(mask: &[bool], grid: &SpatialGrid, roi: &RoiSpec) -> Result<bool> {
    check_len(grid.size(), mask.len())?;
    Ok(roi.nodes(grid).any(|(i, j)| mask[grid.index(i, j)]))
}

/// Grid for a sweep point: nearest available cell count to `m`.
pub fn sweep_grid(strike: f64, m: usize) -> GridSpec {
    GridSpec::with_target_cells(strike, m)
}

/// One measured temporal error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub method: Method,
    pub kappa: usize,
    pub m: usize,
    pub n: usize,
    pub n_prime: usize,
    pub roi: RoiKind,
    pub error: f64,
}

/// Everything computed at one sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub m: usize,
    pub records: Vec<ErrorRecord>,
    pub reference: Vec<f64>,
    /// Runs in the order of the requested methods, with their diagnostics.
    pub runs: Vec<(Method, usize, Vec<f64>, Vec<f64>, RunDiagnostics)>,
    pub grid: SpatialGrid,
    pub payoff: Vec<f64>,
}

/// Builds the problem with about `m_target` cells per direction, takes
/// `N = m`, and measures each method against the reference on both
/// standard regions of interest.
pub fn sweep_point(
    set: ParameterSet,
    payoff: PayoffKind,
    m_target: usize,
    methods: &[(Method, usize)],
    backend: ReferenceBackend,
) -> Result<SweepPoint> {
    let option = set.option(payoff);
    let problem = Problem::build(&set.params(), &option, &sweep_grid(option.strike, m_target))?;
    let n = problem.grid.axes[0].cells();
    let configs: Vec<MethodConfig> = methods
        .iter()
        .map(|&(method, kappa)| MethodConfig::new(method, kappa, method.matched_steps(kappa, n)))
        .collect();
    measure_point(problem, &configs, backend)
}

/// Runs every configuration on `problem` and measures it against the
/// reference with `10 N` steps, where `N` is the cell count.
pub fn measure_point(problem: Problem, configs: &[MethodConfig], backend: ReferenceBackend) -> Result<SweepPoint> {
    let m = problem.grid.axes[0].cells();
    let n = m;
    let reference = reference_solution(&problem, n, backend)?;
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for cfg in configs {
        let out = Stepper::new(&problem, *cfg)?.run()?;
        for roi in RoiKind::ALL {
            let spec = roi.spec(problem.option.strike, problem.option.payoff);
            records.push(ErrorRecord {
                method: cfg.method,
                kappa: cfg.kappa,
                m,
                n,
                n_prime: cfg.steps,
                roi,
                error: temporal_error(&out.values, &reference, &problem.grid, &spec)?,
            });
        }
        runs.push((cfg.method, cfg.kappa, out.values, out.lambda, out.diagnostics));
    }
    Ok(SweepPoint {
        m,
        records,
        reference,
        runs,
        payoff: problem.initial.clone(),
        grid: problem.grid,
    })
}

/// Prices at the nine standard spot pairs; `values[row][col]` with rows
/// indexed by the second asset and columns by the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub set: ParameterSet,
    pub payoff: PayoffKind,
    pub spots: [f64; 3],
    pub values: [[f64; 3]; 3],
    pub m: usize,
    pub steps: usize,
    pub matvecs: usize,
}

/// Uniform-zone mesh width used for the price tables.
pub const TABLE_WIDTH: f64 = 0.40;
/// Time step used for the price tables.
pub const TABLE_DT: f64 = 0.01;

/// Prices by MCS2-IT(2) with step `dt` on the grid with uniform-zone
/// width closest to `width`, interpolated bilinearly at the spot pairs.
pub fn value_table(set: ParameterSet, payoff: PayoffKind, width: f64, dt: f64) -> Result<ValueTable> {
    if !(width > 0.0) {
        return Err(Error::Invalid("table width must be positive".into()));
    }
    let option = set.option(payoff);
    value_table_on(set, payoff, &GridSpec::with_interior_width(option.strike, width), dt)
}

/// As [`value_table`] on a given grid.
pub fn value_table_on(set: ParameterSet, payoff: PayoffKind, spec: &GridSpec, dt: f64) -> Result<ValueTable> {
    if !(dt > 0.0) {
        return Err(Error::Invalid("table time step must be positive".into()));
    }
    let option = set.option(payoff);
    let problem = Problem::build(&set.params(), &option, spec)?;
    let steps = ((option.maturity / dt).round() as usize).max(1);
    let out = Stepper::new(&problem, MethodConfig::new(Method::Mcs2It, 2, steps))?.run()?;
    let spots = set.table_spots();
    let mut values = [[0.0; 3]; 3];
    for (row, &s2) in spots.iter().enumerate() {
        for (col, &s1) in spots.iter().enumerate() {
            values[row][col] = problem.grid.interpolate(&out.values, s1, s2)?;
        }
    }
    Ok(ValueTable {
        set,
        payoff,
        spots,
        values,
        m: problem.grid.axes[0].cells(),
        steps,
        matvecs: out.diagnostics.matvecs,
    })
}
