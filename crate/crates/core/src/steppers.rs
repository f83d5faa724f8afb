//! Time stepping for the semidiscrete complementarity problem: six splitting
//! schemes combined with iterated Ikonen-Toivanen (IT) splitting, two
//! penalty methods, backward Euler damping, and the IMEX Euler pair.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};
use crate::model::Asset;
use crate::problem::Problem;
use crate::solvers::{solve_directional_with_diag, solve_lcp_psor, LineFactorization, PsorSettings, StencilSolver};

pub const PENALTY_TOL: f64 = 1e-7;
pub const PENALTY_LARGE: f64 = 1e7;
pub const MAX_PENALTY_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CnfiIt,
    IetrIt,
    CnabIt,
    McsIt,
    Mcs2It,
    Sc2aIt,
    CnfiP,
    McsP,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::CnfiIt,
        Method::IetrIt,
        Method::CnabIt,
        Method::McsIt,
        Method::Mcs2It,
        Method::Sc2aIt,
        Method::CnfiP,
        Method::McsP,
    ];
    pub const IT: [Method; 6] = [
        Method::CnfiIt,
        Method::IetrIt,
        Method::CnabIt,
        Method::McsIt,
        Method::Mcs2It,
        Method::Sc2aIt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CnfiIt => "CNFI-IT",
            Method::IetrIt => "IETR-IT",
            Method::CnabIt => "CNAB-IT",
            Method::McsIt => "MCS-IT",
            Method::Mcs2It => "MCS2-IT",
            Method::Sc2aIt => "SC2A-IT",
            Method::CnfiP => "CNFI-P",
            Method::McsP => "MCS-P",
        }
    }

    pub fn is_penalty(self) -> bool {
        matches!(self, Method::CnfiP | Method::McsP)
    }

    pub fn default_theta(self) -> f64 {
        match self {
            Method::McsIt | Method::Mcs2It | Method::McsP => 1.0 / 3.0,
            Method::Sc2aIt => 0.75,
            _ => 0.5,
        }
    }

    pub fn default_time_grid(self) -> TimeGrid {
        match self {
            Method::CnfiP => TimeGrid::Quadratic,
            _ => TimeGrid::Uniform,
        }
    }

    /// Number of steps giving roughly the same count of jump operator
    /// applications as `2N` for the one-evaluation methods.
    pub fn matched_steps(self, kappa: usize, n: usize) -> usize {
        let k = kappa.max(1);
        match self {
            Method::CnfiIt => (2 * n).div_ceil(k),
            Method::IetrIt | Method::McsIt => (2 * n).div_ceil(k + 1),
            Method::CnabIt | Method::Mcs2It | Method::Sc2aIt => 2 * n,
            Method::McsP => n,
            Method::CnfiP => n.div_ceil(2),
        }
    }

    /// Jump operator applications per regular step; `None` when the count
    /// depends on the penalty iteration.
    pub fn matvecs_per_step(self, kappa: usize) -> Option<usize> {
        match self {
            Method::CnfiIt => Some(kappa),
            Method::IetrIt | Method::McsIt => Some(kappa + 1),
            Method::CnabIt | Method::Mcs2It | Method::Sc2aIt => Some(1),
            Method::McsP => Some(2),
            Method::CnfiP => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Invalid(format!("unknown method '{s}', expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeGrid {
    Uniform,
    /// `t_n = (n / N)^2 T`.
    Quadratic,
}

impl TimeGrid {
    pub fn name(self) -> &'static str {
        match self {
            TimeGrid::Uniform => "uniform",
            TimeGrid::Quadratic => "quadratic",
        }
    }
}

impl FromStr for TimeGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(TimeGrid::Uniform),
            "quadratic" => Ok(TimeGrid::Quadratic),
            _ => Err(Error::Invalid(format!("unknown time grid '{s}', expected uniform or quadratic"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    pub kappa: usize,
    pub theta: f64,
    pub steps: usize,
    pub tol: f64,
    pub large: f64,
    pub max_penalty_iterations: usize,
    pub time_grid: TimeGrid,
    /// Replace the first two steps by four backward Euler half-steps.
    pub damping: bool,
}

impl MethodConfig {
    pub fn new(method: Method, kappa: usize, steps: usize) -> Self {
        MethodConfig {
            method,
            kappa,
            theta: method.default_theta(),
            steps,
            tol: PENALTY_TOL,
            large: PENALTY_LARGE,
            max_penalty_iterations: MAX_PENALTY_ITERATIONS,
            time_grid: method.default_time_grid(),
            damping: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 {
            return Err(Error::Invalid("kappa must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Invalid("number of time steps must be positive".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Invalid(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if !(self.tol > 0.0) || !(self.large > 0.0) || self.max_penalty_iterations == 0 {
            return Err(Error::Invalid("penalty tol, large and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn time_points(&self, maturity: f64) -> Vec<f64> {
        let n = self.steps as f64;
        (0..=self.steps)
            .map(|k| match self.time_grid {
                TimeGrid::Uniform => maturity * k as f64 / n,
                TimeGrid::Quadratic => maturity * (k as f64 / n).powi(2),
            })
            .collect()
    }
}

/// Current approximation `V^n`, multiplier `lambda^n` and the previous
/// value `V^{n-1}` needed by the two-step schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperState {
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub prev: Vec<f64>,
    pub n: usize,
    pub t: f64,
}

impl StepperState {
    pub fn initial(problem: &Problem) -> Self {
        StepperState {
            v: problem.initial.clone(),
            lambda: vec![0.0; problem.size()],
            prev: problem.initial.clone(),
            n: 0,
            t: 0.0,
        }
    }

    fn advance(&mut self, v: Vec<f64>, lambda: Vec<f64>, dt: f64) {
        self.prev = std::mem::replace(&mut self.v, v);
        self.lambda = lambda;
        self.n += 1;
        self.t += dt;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunDiagnostics {
    /// Total jump operator applications.
    pub matvecs: usize,
    pub damping_matvecs: usize,
    pub damping_steps: usize,
    pub steps: usize,
    /// Penalty iterations of each damping half-step (penalty methods only).
    pub damping_penalty_iterations: Vec<usize>,
    /// Penalty iterations of each regular step (penalty methods only).
    pub penalty_iterations: Vec<usize>,
}

impl RunDiagnostics {
    pub fn mean_penalty_iterations(&self) -> Option<f64> {
        (!self.penalty_iterations.is_empty()).then(|| {
            self.penalty_iterations.iter().sum::<usize>() as f64 / self.penalty_iterations.len() as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub values: Vec<f64>,
    pub lambda: Vec<f64>,
    pub diagnostics: RunDiagnostics,
}

fn comb(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

fn add_scaled(out: &mut [f64], a: f64, x: &[f64]) {
    out.iter_mut().zip(x).for_each(|(o, v)| *o += a * v);
}

/// `max(z - dt * lambda, obstacle)`.
fn project(z: &[f64], lambda: &[f64], dt: f64, obstacle: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(lambda)
        .zip(obstacle)
        .map(|((zi, li), oi)| (zi - dt * li).max(*oi))
        .collect()
}

/// `max(0, lambda + (obstacle - z) / dt)`.
fn multiplier(z: &[f64], lambda: &[f64], dt: f64, obstacle: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(lambda)
        .zip(obstacle)
        .map(|((zi, li), oi)| (li + (oi - zi) / dt).max(0.0))
        .collect()
}

/// Directional values `A_1 v`, `A_2 v` reused by the stabilising corrections.
struct Directional {
    a1: Vec<f64>,
    a2: Vec<f64>,
}

pub struct Stepper<'a> {
    problem: &'a Problem,
    pub config: MethodConfig,
    lines: HashMap<(Asset, u64), LineFactorization>,
    stencil: StencilSolver,
    matvecs: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a Problem, config: MethodConfig) -> Result<Self> {
        config.validate()?;
        Ok(Stepper {
            problem,
            config,
            lines: HashMap::new(),
            stencil: StencilSolver::new(&problem.ops),
            matvecs: 0,
        })
    }

    /// Jump operator applications so far.
    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    fn aj(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.matvecs += 1;
        self.problem.jump.apply(v)
    }

    fn ad(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.problem.ops.apply_ad_add(1.0, v, &mut out);
        out
    }

    fn directional(&self, v: &[f64]) -> Directional {
        Directional {
            a1: self.problem.ops.a1.apply(v),
            a2: self.problem.ops.a2.apply(v),
        }
    }

    /// Solves `(I - c A_q) x = rhs` in place.
    fn solve_line(&mut self, q: Asset, c: f64, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
        let key = (q, c.to_bits());
        if !self.lines.contains_key(&key) {
            if self.lines.len() >= 8 {
                self.lines.clear();
            }
            let f = LineFactorization::new(self.problem.ops.directional(q), c, self.problem.ops.shape())?;
            self.lines.insert(key, f);
        }
        self.lines[&key].solve_in_place(&mut rhs)?;
        Ok(rhs)
    }

    /// Stabilising correction `Y_j = Y_{j-1} + c A_j (Y_j - V)`.
    fn correction(&mut self, q: Asset, c: f64, y: &[f64], av: &Directional) -> Result<Vec<f64>> {
        let avq = match q {
            Asset::First => &av.a1,
            Asset::Second => &av.a2,
        };
        self.solve_line(q, c, comb(1.0, y, -c, avq))
    }

    /// Runs the configured method over the whole time interval.
    pub fn run(&mut self) -> Result<RunOutput> {
        let cfg = self.config;
        let times = cfg.time_points(self.problem.option.maturity);
        let mut state = StepperState::initial(self.problem);
        let mut diag = RunDiagnostics::default();
        let damped = if cfg.damping { cfg.steps.min(2) } else { 0 };
        let start = self.matvecs;
        for n in 1..=damped {
            let dt = times[n] - times[n - 1];
            let h = 0.5 * dt;
            let (mut v, mut lambda) = (state.v.clone(), state.lambda.clone());
            for _ in 0..2 {
                if cfg.method.is_penalty() {
                    let (z, k) = self.befi_p_step(&v, h)?;
                    diag.damping_penalty_iterations.push(k);
                    v = z;
                } else {
                    (v, lambda) = self.befi_it_step(&v, &lambda, h, cfg.kappa)?;
                }
            }
            state.advance(v, lambda, dt);
            diag.damping_steps += 2;
        }
        diag.damping_matvecs = self.matvecs - start;
        for n in damped + 1..=cfg.steps {
            let dt = times[n] - times[n - 1];
            if let Some(k) = self.step(&mut state, dt)? {
                diag.penalty_iterations.push(k);
            }
        }
        diag.steps = cfg.steps;
        diag.matvecs = self.matvecs - start;
        Ok(RunOutput {
            values: state.v,
            lambda: state.lambda,
            diagnostics: diag,
        })
    }

    /// One regular step of the configured method. Returns the number of
    /// penalty iterations for the penalty methods.
    pub fn step(&mut self, state: &mut StepperState, dt: f64) -> Result<Option<usize>> {
        let n = self.problem.size();
        check_len(n, state.v.len())?;
        check_len(n, state.lambda.len())?;
        check_len(n, state.prev.len())?;
        let k = self.config.kappa;
        let theta = self.config.theta;
        let (v, lambda, iterations) = match self.config.method {
            Method::CnfiIt => {
                let (v, l) = self.cnfi_it(&state.v, &state.lambda, dt, k)?;
                (v, l, None)
            }
            Method::IetrIt => {
                let (v, l) = self.ietr_it(&state.v, &state.lambda, dt, k)?;
                (v, l, None)
            }
            Method::CnabIt => {
                let (v, l) = self.cnab_it(&state.v, &state.prev, &state.lambda, dt, k)?;
                (v, l, None)
            }
            Method::McsIt => {
                let (v, l) = self.mcs_it(&state.v, &state.lambda, dt, k, theta)?;
                (v, l, None)
            }
            Method::Mcs2It => {
                let (v, l) = self.mcs2_it(&state.v, &state.prev, &state.lambda, dt, k, theta)?;
                (v, l, None)
            }
            Method::Sc2aIt => {
                let (v, l) = self.sc2a_it(&state.v, &state.prev, &state.lambda, dt, k, theta)?;
                (v, l, None)
            }
            Method::CnfiP => {
                let (v, it) = self.cnfi_p(&state.v, dt)?;
                (v, vec![0.0; n], Some(it))
            }
            Method::McsP => {
                let (v, it) = self.mcs_p(&state.v, dt, theta)?;
                (v, vec![0.0; n], Some(it))
            }
        };
        state.advance(v, lambda, dt);
        Ok(iterations)
    }

    /// Backward Euler with fixed-point iteration for the jump part and
    /// IT(kappa) splitting.
    pub fn befi_it_step(&mut self, v: &[f64], lambda: &[f64], dt: f64, kappa: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let mut zhat = v.to_vec();
        let mut lam = lambda.to_vec();
        for _ in 0..kappa {
            let aj = self.aj(&zhat)?;
            let mut rhs = v.to_vec();
            add_scaled(&mut rhs, dt, &aj);
            add_scaled(&mut rhs, dt, &lam);
            let z = self.stencil.solve(dt, &rhs, None)?;
            zhat = project(&z, &lam, dt, obstacle);
            lam = multiplier(&z, &lam, dt, obstacle);
        }
        Ok((zhat, lam))
    }

    pub fn cnfi_it(&mut self, v: &[f64], lambda: &[f64], dt: f64, kappa: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let ajv = self.aj(v)?;
        let mut base = v.to_vec();
        add_scaled(&mut base, 0.5 * dt, &self.ad(v));
        add_scaled(&mut base, 0.5 * dt, &ajv);
        let mut zhat = v.to_vec();
        let mut lam = lambda.to_vec();
        for k in 1..=kappa {
            let ajz = if k == 1 { ajv.clone() } else { self.aj(&zhat)? };
            let mut rhs = base.clone();
            add_scaled(&mut rhs, 0.5 * dt, &ajz);
            add_scaled(&mut rhs, dt, &lam);
            let z = self.stencil.solve(0.5 * dt, &rhs, None)?;
            zhat = project(&z, &lam, dt, obstacle);
            lam = multiplier(&z, &lam, dt, obstacle);
        }
        Ok((zhat, lam))
    }

    pub fn ietr_it(&mut self, v: &[f64], lambda: &[f64], dt: f64, kappa: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let adv = self.ad(v);
        let ajv = self.aj(v)?;
        let mut lam = lambda.to_vec();
        let mut out = (Vec::new(), Vec::new());
        for _ in 0..kappa {
            let mut y0 = v.to_vec();
            add_scaled(&mut y0, dt, &adv);
            add_scaled(&mut y0, dt, &ajv);
            add_scaled(&mut y0, dt, &lam);
            let mut ybar = y0.clone();
            add_scaled(&mut ybar, 0.5 * dt, &self.aj(&comb(1.0, &y0, -1.0, v))?);
            add_scaled(&mut ybar, -0.5 * dt, &adv);
            let z = self.stencil.solve(0.5 * dt, &ybar, None)?;
            let next = multiplier(&z, &lam, dt, obstacle);
            out = (project(&z, &lam, dt, obstacle), next.clone());
            lam = next;
        }
        Ok(out)
    }

    pub fn cnab_it(
        &mut self,
        v: &[f64],
        prev: &[f64],
        lambda: &[f64],
        dt: f64,
        kappa: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let mut base = v.to_vec();
        add_scaled(&mut base, 0.5 * dt, &self.ad(v));
        add_scaled(&mut base, 0.5 * dt, &self.aj(&comb(3.0, v, -1.0, prev))?);
        let mut lam = lambda.to_vec();
        let mut out = (Vec::new(), Vec::new());
        for _ in 0..kappa {
            let mut rhs = base.clone();
            add_scaled(&mut rhs, dt, &lam);
            let z = self.stencil.solve(0.5 * dt, &rhs, None)?;
            let next = multiplier(&z, &lam, dt, obstacle);
            out = (project(&z, &lam, dt, obstacle), next.clone());
            lam = next;
        }
        Ok(out)
    }

    /// From `Y0`: the two corrections, the explicit trapezoidal update of the
    /// mixed (and optionally jump) terms, and the corrections again, up to
    /// and including direction `last`.
    #[allow(clippy::too_many_arguments)]
    fn mcs_ladder(
        &mut self,
        y0: &[f64],
        v: &[f64],
        av: &Directional,
        dt: f64,
        theta: f64,
        with_jump: bool,
        last: Asset,
    ) -> Result<Vec<f64>> {
        let c = theta * dt;
        let y1 = self.correction(Asset::First, c, y0, av)?;
        let y2 = self.correction(Asset::Second, c, &y1, av)?;
        let d = comb(1.0, &y2, -1.0, v);
        let mut ytil = y0.to_vec();
        let mut amd = vec![0.0; d.len()];
        self.problem.ops.mixed.apply_add(1.0, &d, &mut amd);
        add_scaled(&mut ytil, theta * dt, &amd);
        add_scaled(&mut ytil, (0.5 - theta) * dt, &self.ad(&d));
        if with_jump {
            let ajd = self.aj(&d)?;
            add_scaled(&mut ytil, 0.5 * dt, &ajd);
        }
        let ytil1 = self.correction(Asset::First, c, &ytil, av)?;
        match last {
            Asset::First => Ok(ytil1),
            Asset::Second => self.correction(Asset::Second, c, &ytil1, av),
        }
    }

    pub fn mcs_it(
        &mut self,
        v: &[f64],
        lambda: &[f64],
        dt: f64,
        kappa: usize,
        theta: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let adv = self.ad(v);
        let ajv = self.aj(v)?;
        let av = self.directional(v);
        let mut lam = lambda.to_vec();
        let mut out = (Vec::new(), Vec::new());
        for _ in 0..kappa {
            let mut y0 = v.to_vec();
            add_scaled(&mut y0, dt, &adv);
            add_scaled(&mut y0, dt, &ajv);
            add_scaled(&mut y0, dt, &lam);
            let z = self.mcs_ladder(&y0, v, &av, dt, theta, true, Asset::Second)?;
            let next = multiplier(&z, &lam, dt, obstacle);
            out = (project(&z, &lam, dt, obstacle), next.clone());
            lam = next;
        }
        Ok(out)
    }

    pub fn mcs2_it(
        &mut self,
        v: &[f64],
        prev: &[f64],
        lambda: &[f64],
        dt: f64,
        kappa: usize,
        theta: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let adv = self.ad(v);
        let ajab = self.aj(&comb(3.0, v, -1.0, prev))?;
        let av = self.directional(v);
        let mut lam = lambda.to_vec();
        let mut out = (Vec::new(), Vec::new());
        for _ in 0..kappa {
            let mut y0 = v.to_vec();
            add_scaled(&mut y0, dt, &adv);
            add_scaled(&mut y0, dt, &lam);
            add_scaled(&mut y0, 0.5 * dt, &ajab);
            let z = self.mcs_ladder(&y0, v, &av, dt, theta, false, Asset::Second)?;
            let next = multiplier(&z, &lam, dt, obstacle);
            out = (project(&z, &lam, dt, obstacle), next.clone());
            lam = next;
        }
        Ok(out)
    }

    pub fn sc2a_it(
        &mut self,
        v: &[f64],
        prev: &[f64],
        lambda: &[f64],
        dt: f64,
        kappa: usize,
        theta: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let obstacle = &self.problem.obstacle;
        let ops = &self.problem.ops;
        let w0 = comb(1.5 - theta, v, theta - 0.5, prev);
        let w1 = comb(1.5, v, -0.5, prev);
        let mut explicit = vec![0.0; v.len()];
        ops.a1.apply_add(dt, &w0, &mut explicit);
        ops.a2.apply_add(dt, &w0, &mut explicit);
        ops.mixed.apply_add(dt, &w1, &mut explicit);
        add_scaled(&mut explicit, dt, &self.aj(&w1)?);
        let av = self.directional(v);
        let c = theta * dt;
        let mut lam = lambda.to_vec();
        let mut out = (Vec::new(), Vec::new());
        for _ in 0..kappa {
            let mut y0 = comb(1.0, v, 1.0, &explicit);
            add_scaled(&mut y0, dt, &lam);
            let y1 = self.correction(Asset::First, c, &y0, &av)?;
            let z = self.correction(Asset::Second, c, &y1, &av)?;
            let next = multiplier(&z, &lam, dt, obstacle);
            out = (project(&z, &lam, dt, obstacle), next.clone());
            lam = next;
        }
        Ok(out)
    }

    /// Penalty iteration from `start`; `solve(self, z_prev, penalty)`
    /// returns the next iterate. Returns the converged iterate and the
    /// number of iterations used.
    fn penalty_iterate<F>(&mut self, start: &[f64], mut solve: F) -> Result<(Vec<f64>, usize)>
    where
        F: FnMut(&mut Self, &[f64], &[f64]) -> Result<Vec<f64>>,
    {
        let problem = self.problem;
        let (tol, large, cap) = (self.config.tol, self.config.large, self.config.max_penalty_iterations);
        let mut z_prev = start.to_vec();
        for k in 1..=cap {
            let pen: Vec<f64> = z_prev
                .iter()
                .zip(&problem.obstacle)
                .map(|(z, o)| if z < o { large } else { 0.0 })
                .collect();
            let z = solve(self, &z_prev, &pen)?;
            let done = z
                .iter()
                .zip(&z_prev)
                .all(|(a, b)| (a - b).abs() / a.abs().max(1.0) < tol);
            if done {
                return Ok((z, k));
            }
            z_prev = z;
        }
        Err(Error::NoConvergence {
            what: "penalty iteration".into(),
            iterations: cap,
        })
    }

    /// `P V0` restricted to penalised entries.
    fn penalty_target(&self, pen: &[f64]) -> Vec<f64> {
        pen.iter()
            .zip(&self.problem.obstacle)
            .map(|(p, o)| if *p > 0.0 { p * o } else { 0.0 })
            .collect()
    }

    /// Backward Euler with the penalty method:
    /// `(I - dt AD + P) Z_k = V + dt AJ Z_{k-1} + P V0`.
    pub fn befi_p_step(&mut self, v: &[f64], dt: f64) -> Result<(Vec<f64>, usize)> {
        self.penalty_iterate(v, |s, z_prev, pen| {
            let mut rhs = v.to_vec();
            add_scaled(&mut rhs, dt, &s.aj(z_prev)?);
            add_scaled(&mut rhs, 1.0, &s.penalty_target(pen));
            s.stencil.solve(dt, &rhs, Some(pen))
        })
    }

    pub fn cnfi_p(&mut self, v: &[f64], dt: f64) -> Result<(Vec<f64>, usize)> {
        let ajv = self.aj(v)?;
        let mut base = v.to_vec();
        add_scaled(&mut base, 0.5 * dt, &self.ad(v));
        add_scaled(&mut base, 0.5 * dt, &ajv);
        let mut first = true;
        self.penalty_iterate(v, |s, z_prev, pen| {
            let ajz = if first { ajv.clone() } else { s.aj(z_prev)? };
            first = false;
            let mut rhs = base.clone();
            add_scaled(&mut rhs, 0.5 * dt, &ajz);
            add_scaled(&mut rhs, 1.0, &s.penalty_target(pen));
            s.stencil.solve(0.5 * dt, &rhs, Some(pen))
        })
    }

    pub fn mcs_p(&mut self, v: &[f64], dt: f64, theta: f64) -> Result<(Vec<f64>, usize)> {
        let mut y0 = v.to_vec();
        add_scaled(&mut y0, dt, &self.ad(v));
        add_scaled(&mut y0, dt, &self.aj(v)?);
        let av = self.directional(v);
        let ytil1 = self.mcs_ladder(&y0, v, &av, dt, theta, true, Asset::First)?;
        let c = theta * dt;
        let base = comb(1.0, &ytil1, -c, &av.a2);
        let shape = self.problem.ops.shape();
        self.penalty_iterate(v, |s, _, pen| {
            let rhs = comb(1.0, &base, 1.0, &s.penalty_target(pen));
            solve_directional_with_diag(&s.problem.ops.a2, c, pen, &rhs, shape)
        })
    }
}

/// Result of running the split and the unsplit IMEX Euler methods side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct ImexGap {
    pub steps: usize,
    /// `max_n |V^n - Vhat^n|_inf`.
    pub max_gap: f64,
    pub split: Vec<f64>,
    pub unsplit: Vec<f64>,
}

/// Runs the IMEX Euler-IT method and the IMEX Euler method (complementarity
/// problem solved by projected SOR) with `steps` uniform steps.
pub fn imex_euler_pair(problem: &Problem, steps: usize, psor: PsorSettings) -> Result<ImexGap> {
    if steps == 0 {
        return Err(Error::Invalid("number of time steps must be positive".into()));
    }
    let dt = problem.option.maturity / steps as f64;
    let mut solver = StencilSolver::new(&problem.ops);
    let obstacle = &problem.obstacle;
    let mut vhat = problem.initial.clone();
    let mut lam = vec![0.0; problem.size()];
    let mut v = problem.initial.clone();
    let mut gap = 0.0f64;
    for _ in 0..steps {
        let mut rhs = vhat.clone();
        add_scaled(&mut rhs, dt, &problem.jump.apply(&vhat)?);
        add_scaled(&mut rhs, dt, &lam);
        let z = solver.solve(dt, &rhs, None)?;
        vhat = project(&z, &lam, dt, obstacle);
        lam = multiplier(&z, &lam, dt, obstacle);

        let mut lcp_rhs = v.clone();
        add_scaled(&mut lcp_rhs, dt, &problem.jump.apply(&v)?);
        v = solve_lcp_psor(&solver.ad, dt, &lcp_rhs, obstacle, psor)?.0;
        let g = v.iter().zip(&vhat).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        gap = gap.max(g);
    }
    Ok(ImexGap {
        steps,
        max_gap: gap,
        split: vhat,
        unsplit: v,
    })
}
