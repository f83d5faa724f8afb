//! Flat TOML run configuration: parsing, defaults, validation and
//! serialisation back to TOML.

use std::fmt;
use std::str::FromStr;

use pidcp::experiments::{ReferenceBackend, RoiKind, EER_TOL, TABLE_DT, TABLE_WIDTH};
use pidcp::grid::{GridSpec, DEFAULT_MAX_CELLS, S_MAX_FACTOR};
use pidcp::model::{ModelParams, OptionSpec, ParameterSet, PayoffKind};
use pidcp::steppers::{
    Method, MethodConfig, TimeGrid, MAX_PENALTY_ITERATIONS, PENALTY_LARGE, PENALTY_TOL,
};
use serde::{Deserialize, Serialize};

/// Problem with one configuration key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key '{}': {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    Converge,
    Table,
    Eer,
    Diagnose,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Price,
        Command::Converge,
        Command::Table,
        Command::Eer,
        Command::Diagnose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::Converge => "converge",
            Command::Table => "table",
            Command::Eer => "eer",
            Command::Diagnose => "diagnose",
        }
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
                bad("command", format!("unknown command '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// How the number of cells per direction is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridChoice {
    Nu(usize),
    Cells(usize),
    Width(f64),
}

/// Regions reported by `converge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiChoice {
    One(RoiKind),
    Both,
}

impl RoiChoice {
    pub fn kinds(self) -> Vec<RoiKind> {
        match self {
            RoiChoice::One(k) => vec![k],
            RoiChoice::Both => RoiKind::ALL.to_vec(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            RoiChoice::One(k) => k.name(),
            RoiChoice::Both => "both",
        }
    }
}

/// Time stepping settings; the step count is per run, see [`RunConfig::steps`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSettings {
    pub method: Method,
    pub kappa: usize,
    pub theta: f64,
    pub tol: f64,
    pub large: f64,
    pub max_penalty_iterations: usize,
    pub time_grid: TimeGrid,
    pub damping: bool,
}

impl MethodSettings {
    pub fn config(&self, method: Method, steps: usize) -> MethodConfig {
        let mut cfg = MethodConfig::new(method, self.kappa, steps);
        if method == self.method {
            cfg.theta = self.theta;
            cfg.time_grid = self.time_grid;
        }
        cfg.tol = self.tol;
        cfg.large = self.large;
        cfg.max_penalty_iterations = self.max_penalty_iterations;
        cfg.damping = self.damping;
        cfg
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub preset: Option<ParameterSet>,
    pub params: ModelParams,
    pub option: OptionSpec,
    pub grid_choice: GridChoice,
    pub d: f64,
    pub s_left: f64,
    pub s_right: f64,
    pub s_max: f64,
    pub max_cells: usize,
    pub settings: MethodSettings,
    /// Extra methods for `converge`; the configured method always comes first.
    pub methods: Vec<Method>,
    pub steps: Option<usize>,
    pub dt: f64,
    pub spots: Vec<[f64; 2]>,
    pub m_values: Vec<usize>,
    pub roi: RoiChoice,
    pub reference: ReferenceBackend,
    pub eer_tol: f64,
}

/// Key-value document as written on disk; every key optional except
/// `command`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub command: Option<String>,
    pub preset: Option<String>,
    pub payoff: Option<String>,
    pub strike: Option<f64>,
    pub maturity: Option<f64>,
    pub r: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub rho_hat: Option<f64>,
    pub nu: Option<usize>,
    pub cells: Option<usize>,
    pub width: Option<f64>,
    pub d: Option<f64>,
    pub s_left: Option<f64>,
    pub s_right: Option<f64>,
    pub s_max: Option<f64>,
    pub max_cells: Option<usize>,
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub kappa: Option<usize>,
    pub theta: Option<f64>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub tol: Option<f64>,
    pub large: Option<f64>,
    pub max_penalty_iterations: Option<usize>,
    pub time_grid: Option<String>,
    pub damping: Option<bool>,
    pub spots: Option<Vec<[f64; 2]>>,
    pub m_values: Option<Vec<usize>>,
    pub roi: Option<String>,
    pub reference: Option<String>,
    pub eer_tol: Option<f64>,
}

const DEFAULT_CELLS: usize = 50;

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

fn parse_method(key: &str, s: &str) -> Result<Method, ConfigError> {
    Method::from_str(s).map_err(|e| bad(key, e.to_string()))
}

fn preset_name(set: ParameterSet) -> &'static str {
    set.name()
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        // prefer the key on the offending line, then a quoted field name
        let from_line = e.span().and_then(|span| {
            let start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
            let line = &text[start..];
            let line = line.split('\n').next().unwrap_or(line);
            line.split_once('=').map(|(k, _)| k.trim().to_string())
        });
        let key = from_line
            .filter(|k| !k.is_empty())
            .or_else(|| msg.split('`').nth(1).map(str::to_string))
            .unwrap_or_else(|| "<document>".to_string());
        bad(&key, msg)
    })?;
    resolve(&raw)
}

/// Applies defaults and validates every key.
pub fn resolve(raw: &RawConfig) -> Result<RunConfig, ConfigError> {
    let command: Command = raw
        .command
        .as_deref()
        .ok_or_else(|| bad("command", "missing"))?
        .parse()?;

    let preset = raw
        .preset
        .as_deref()
        .map(|p| ParameterSet::from_str(p).map_err(|e| bad("preset", e.to_string())))
        .transpose()?;
    let payoff = match raw.payoff.as_deref() {
        Some(p) => PayoffKind::from_str(p).map_err(|e| bad("payoff", e.to_string()))?,
        None => PayoffKind::PutOnMin,
    };

    let base = preset.map(|p| p.params());
    let pick = |key: &str, value: Option<f64>, from: Option<f64>| -> Result<f64, ConfigError> {
        value
            .or(from)
            .ok_or_else(|| bad(key, "required when no preset is given"))
    };
    let params = ModelParams {
        r: pick("r", raw.r, base.map(|b| b.r))?,
        sigma1: pick("sigma1", raw.sigma1, base.map(|b| b.sigma1))?,
        sigma2: pick("sigma2", raw.sigma2, base.map(|b| b.sigma2))?,
        rho: pick("rho", raw.rho, base.map(|b| b.rho))?,
        lambda: pick("lambda", raw.lambda, base.map(|b| b.lambda))?,
        gamma1: pick("gamma1", raw.gamma1, base.map(|b| b.gamma1))?,
        gamma2: pick("gamma2", raw.gamma2, base.map(|b| b.gamma2))?,
        delta1: pick("delta1", raw.delta1, base.map(|b| b.delta1))?,
        delta2: pick("delta2", raw.delta2, base.map(|b| b.delta2))?,
        rho_hat: pick("rho_hat", raw.rho_hat, base.map(|b| b.rho_hat))?,
    };
    let check = |key: &str, ok: bool, msg: &str| if ok { Ok(()) } else { Err(bad(key, msg)) };
    check("sigma1", params.sigma1 > 0.0, "must be positive")?;
    check("sigma2", params.sigma2 > 0.0, "must be positive")?;
    check("delta1", params.delta1 > 0.0, "must be positive")?;
    check("delta2", params.delta2 > 0.0, "must be positive")?;
    check("rho", params.rho.abs() < 1.0, "must lie in (-1, 1)")?;
    check("rho_hat", params.rho_hat.abs() < 1.0, "must lie in (-1, 1)")?;
    check("lambda", params.lambda >= 0.0, "must be nonnegative")?;
    params.validate().map_err(|e| bad("r", e.to_string()))?;

    let contract = preset.map(|p| p.contract());
    let strike = positive("strike", pick("strike", raw.strike, contract.map(|c| c.0))?)?;
    let maturity = positive("maturity", pick("maturity", raw.maturity, contract.map(|c| c.1))?)?;
    let option = OptionSpec {
        strike,
        maturity,
        payoff,
    };

    let grid_choice = match (raw.nu, raw.cells, raw.width) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) | (_, Some(_), Some(_)) => {
            return Err(bad("nu", "give at most one of nu, cells, width"))
        }
        (Some(0), _, _) => return Err(bad("nu", "must be at least 1")),
        (Some(nu), _, _) => GridChoice::Nu(nu),
        (_, Some(c), _) if c < 2 => return Err(bad("cells", "must be at least 2")),
        (_, Some(c), _) => GridChoice::Cells(c),
        (_, _, Some(w)) => GridChoice::Width(positive("width", w)?),
        _ if command == Command::Table => GridChoice::Width(TABLE_WIDTH),
        _ => GridChoice::Cells(DEFAULT_CELLS),
    };
    let d = positive("d", raw.d.unwrap_or(strike / 3.0))?;
    let s_left = positive("s_left", raw.s_left.unwrap_or(0.8 * strike))?;
    let s_right = positive("s_right", raw.s_right.unwrap_or(1.2 * strike))?;
    let s_max = positive("s_max", raw.s_max.unwrap_or(S_MAX_FACTOR * strike))?;
    check("s_right", s_left < s_right, "must exceed s_left")?;
    check("s_max", s_right < s_max, "must exceed s_right")?;
    check(
        "s_left",
        ((s_left + s_right) - 2.0 * strike).abs() <= 1e-9 * strike,
        "s_left + s_right must equal twice the strike",
    )?;
    let max_cells = raw.max_cells.unwrap_or(DEFAULT_MAX_CELLS);
    check("max_cells", max_cells >= 2, "must be at least 2")?;

    let method = parse_method("method", raw.method.as_deref().unwrap_or("MCS2-IT"))?;
    let mut methods = vec![method];
    for name in raw.methods.iter().flatten() {
        let m = parse_method("methods", name)?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let kappa = raw.kappa.unwrap_or(2);
    check("kappa", kappa >= 1, "must be at least 1")?;
    let theta = raw.theta.unwrap_or_else(|| method.default_theta());
    check("theta", theta > 0.0 && theta <= 1.0, "must lie in (0, 1]")?;
    let tol = positive("tol", raw.tol.unwrap_or(PENALTY_TOL))?;
    let large = positive("large", raw.large.unwrap_or(PENALTY_LARGE))?;
    let max_penalty_iterations = raw.max_penalty_iterations.unwrap_or(MAX_PENALTY_ITERATIONS);
    check("max_penalty_iterations", max_penalty_iterations >= 1, "must be at least 1")?;
    let time_grid = match raw.time_grid.as_deref() {
        Some(t) => TimeGrid::from_str(t).map_err(|e| bad("time_grid", e.to_string()))?,
        None => method.default_time_grid(),
    };
    let settings = MethodSettings {
        method,
        kappa,
        theta,
        tol,
        large,
        max_penalty_iterations,
        time_grid,
        damping: raw.damping.unwrap_or(true),
    };

    if raw.steps.is_some() && raw.dt.is_some() {
        return Err(bad("steps", "give at most one of steps, dt"));
    }
    if let Some(0) = raw.steps {
        return Err(bad("steps", "must be at least 1"));
    }
    let dt = positive("dt", raw.dt.unwrap_or(TABLE_DT))?;

    let spots = match &raw.spots {
        Some(s) if s.is_empty() => return Err(bad("spots", "must not be empty")),
        Some(s) => {
            for p in s {
                check("spots", p.iter().all(|x| x.is_finite() && *x >= 0.0), "spot prices must be nonnegative")?;
            }
            s.clone()
        }
        None => vec![[strike, strike]],
    };
    let m_values = match &raw.m_values {
        Some(v) if v.len() < 2 => return Err(bad("m_values", "need at least two values")),
        Some(v) if v.iter().any(|&m| m < 2) => return Err(bad("m_values", "values must be at least 2")),
        Some(v) => v.clone(),
        None => (3..=20).map(|k| 5 * k).collect(),
    };
    let roi = match raw.roi.as_deref() {
        None => RoiChoice::Both,
        Some(s) if s.trim().eq_ignore_ascii_case("both") => RoiChoice::Both,
        Some(s) => RoiChoice::One(RoiKind::from_str(s).map_err(|e| bad("roi", format!("{e} or both")))?),
    };
    let reference = match raw.reference.as_deref() {
        Some(s) => ReferenceBackend::from_str(s).map_err(|e| bad("reference", e.to_string()))?,
        None => ReferenceBackend::CnfiP,
    };
    let eer_tol = positive("eer_tol", raw.eer_tol.unwrap_or(EER_TOL))?;
    if command == Command::Table && preset.is_none() {
        return Err(bad("preset", "the table command needs a preset for its spot prices"));
    }

    Ok(RunConfig {
        command,
        preset,
        params,
        option,
        grid_choice,
        d,
        s_left,
        s_right,
        s_max,
        max_cells,
        settings,
        methods,
        steps: raw.steps,
        dt,
        spots,
        m_values,
        roi,
        reference,
        eer_tol,
    })
}

impl RunConfig {
    /// Label used in CSV `set` columns.
    pub fn set_label(&self) -> &'static str {
        self.preset.map_or("custom", preset_name)
    }

    fn base_grid(&self) -> GridSpec {
        GridSpec {
            nu: [1, 1],
            d: self.d,
            s_left: self.s_left,
            s_right: self.s_right,
            s_max: self.s_max,
            max_cells: self.max_cells,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        let base = self.base_grid();
        match self.grid_choice {
            GridChoice::Nu(nu) => GridSpec { nu: [nu, nu], ..base },
            GridChoice::Cells(c) => base.targeting_cells(c),
            GridChoice::Width(w) => base.targeting_width(w),
        }
    }

    pub fn grid_spec_for_cells(&self, cells: usize) -> GridSpec {
        self.base_grid().targeting_cells(cells)
    }

    /// Steps for single runs: `steps` if given, otherwise `T / dt` rounded.
    pub fn steps(&self) -> usize {
        self.steps
            .unwrap_or_else(|| ((self.option.maturity / self.dt).round() as usize).max(1))
    }

    pub fn method_config(&self) -> MethodConfig {
        self.settings.config(self.settings.method, self.steps())
    }

    /// Every key written out explicitly.
    pub fn to_raw(&self) -> RawConfig {
        let p = &self.params;
        let s = &self.settings;
        let (nu, cells, width) = match self.grid_choice {
            GridChoice::Nu(n) => (Some(n), None, None),
            GridChoice::Cells(c) => (None, Some(c), None),
            GridChoice::Width(w) => (None, None, Some(w)),
        };
        RawConfig {
            command: Some(self.command.name().into()),
            preset: self.preset.map(|x| preset_name(x).into()),
            payoff: Some(self.option.payoff.name().into()),
            strike: Some(self.option.strike),
            maturity: Some(self.option.maturity),
            r: Some(p.r),
            sigma1: Some(p.sigma1),
            sigma2: Some(p.sigma2),
            rho: Some(p.rho),
            lambda: Some(p.lambda),
            gamma1: Some(p.gamma1),
            gamma2: Some(p.gamma2),
            delta1: Some(p.delta1),
            delta2: Some(p.delta2),
            rho_hat: Some(p.rho_hat),
            nu,
            cells,
            width,
            d: Some(self.d),
            s_left: Some(self.s_left),
            s_right: Some(self.s_right),
            s_max: Some(self.s_max),
            max_cells: Some(self.max_cells),
            method: Some(s.method.name().into()),
            methods: Some(self.methods[1..].iter().map(|m| m.name().to_string()).collect()),
            kappa: Some(s.kappa),
            theta: Some(s.theta),
            steps: self.steps,
            dt: self.steps.is_none().then_some(self.dt),
            tol: Some(s.tol),
            large: Some(s.large),
            max_penalty_iterations: Some(s.max_penalty_iterations),
            time_grid: Some(s.time_grid.name().into()),
            damping: Some(s.damping),
            spots: Some(self.spots.clone()),
            m_values: Some(self.m_values.clone()),
            roi: Some(self.roi.name().into()),
            reference: Some(self.reference.name().into()),
            eer_tol: Some(self.eer_tol),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("plain key-value document serialises")
    }
}
