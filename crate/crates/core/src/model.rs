//! Two-asset Merton jump-diffusion model: parameters, payoffs and the jump
//! size density.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One of the two underlying assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Asset {
    First,
    Second,
}

impl Asset {
    pub const BOTH: [Asset; 2] = [Asset::First, Asset::Second];

    /// Zero-based position, handy for indexing per-direction arrays.
    pub fn index(self) -> usize {
        match self {
            Asset::First => 0,
            Asset::Second => 1,
        }
    }
}

/// Market and jump parameters of the two-asset Merton model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub r: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Correlation of the Brownian drivers.
    pub rho: f64,
    /// Poisson jump intensity.
    pub lambda: f64,
    /// Means of the log jump sizes.
    pub gamma1: f64,
    pub gamma2: f64,
    /// Standard deviations of the log jump sizes.
    pub delta1: f64,
    pub delta2: f64,
    /// Correlation of the log jump sizes.
    pub rho_hat: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Invalid(msg.to_string()));
        let finite = [
            self.r,
            self.sigma1,
            self.sigma2,
            self.rho,
            self.lambda,
            self.gamma1,
            self.gamma2,
            self.delta1,
            self.delta2,
            self.rho_hat,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return fail("model parameters must be finite");
        }
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return fail("volatilities must be positive");
        }
        if self.delta1 <= 0.0 || self.delta2 <= 0.0 {
            return fail("log-jump standard deviations must be positive");
        }
        if self.rho.abs() >= 1.0 {
            return fail("|rho| must be below 1");
        }
        if self.rho_hat.abs() >= 1.0 {
            return fail("|rho_hat| must be below 1");
        }
        if self.lambda < 0.0 {
            return fail("jump intensity must be nonnegative");
        }
        Ok(())
    }

    pub fn sigma(&self, q: Asset) -> f64 {
        match q {
            Asset::First => self.sigma1,
            Asset::Second => self.sigma2,
        }
    }

    pub fn gamma(&self, q: Asset) -> f64 {
        match q {
            Asset::First => self.gamma1,
            Asset::Second => self.gamma2,
        }
    }

    pub fn delta(&self, q: Asset) -> f64 {
        match q {
            Asset::First => self.delta1,
            Asset::Second => self.delta2,
        }
    }

    /// Expected relative jump size `exp(gamma_q + delta_q^2 / 2) - 1`.
    pub fn expected_relative_jump(&self, q: Asset) -> f64 {
        let (g, d) = (self.gamma(q), self.delta(q));
        (g + 0.5 * d * d).exp_m1()
    }

    /// Natural log of the bivariate normal density of the log jump sizes.
    pub fn log_normal_density_log(&self, eta1: f64, eta2: f64) -> f64 {
        let z1 = (eta1 - self.gamma1) / self.delta1;
        let z2 = (eta2 - self.gamma2) / self.delta2;
        let one_minus = 1.0 - self.rho_hat * self.rho_hat;
        let quad = (z1 * z1 + z2 * z2 - 2.0 * self.rho_hat * z1 * z2) / (2.0 * one_minus);
        -quad - (2.0 * PI * self.delta1 * self.delta2 * one_minus.sqrt()).ln()
    }

    /// Density of the log jump sizes `(ln y1, ln y2)` at `(eta1, eta2)`.
    ///
    /// This is the bivariate normal with means `gamma_q`, standard
    /// deviations `delta_q` and correlation `rho_hat`.
    pub fn normal_density_log(&self, eta1: f64, eta2: f64) -> f64 {
        self.log_normal_density_log(eta1, eta2).exp()
    }

    /// Bivariate lognormal density of the jump multipliers `(y1, y2)`.
    pub fn lognormal_density(&self, y1: f64, y2: f64) -> Result<f64> {
        if !(y1 > 0.0 && y2 > 0.0) {
            return Err(Error::Invalid(format!(
                "lognormal density needs positive arguments, got ({y1}, {y2})"
            )));
        }
        let (l1, l2) = (y1.ln(), y2.ln());
        Ok((self.log_normal_density_log(l1, l2) - l1 - l2).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayoffKind {
    PutOnMin,
    PutOnAverage,
}

impl PayoffKind {
    pub const ALL: [PayoffKind; 2] = [PayoffKind::PutOnMin, PayoffKind::PutOnAverage];

    pub fn name(self) -> &'static str {
        match self {
            PayoffKind::PutOnMin => "put-on-min",
            PayoffKind::PutOnAverage => "put-on-average",
        }
    }
}

impl fmt::Display for PayoffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PayoffKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "put-on-min" | "putonmin" | "min" => Ok(PayoffKind::PutOnMin),
            "put-on-average" | "putonaverage" | "average" | "avg" => Ok(PayoffKind::PutOnAverage),
            other => Err(Error::Invalid(format!(
                "unknown payoff '{other}' (expected put-on-min or put-on-average)"
            ))),
        }
    }
}

/// Contract terms of the American option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
    pub payoff: PayoffKind,
}

impl OptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::Invalid("strike must be positive".into()));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::Invalid("maturity must be positive".into()));
        }
        Ok(())
    }

    pub fn payoff(&self, s1: f64, s2: f64) -> f64 {
        let k = self.strike;
        match self.payoff {
            PayoffKind::PutOnMin => (k - s1.min(s2)).max(0.0),
            PayoffKind::PutOnAverage => (k - 0.5 * (s1 + s2)).max(0.0),
        }
    }
}

/// The three parameter sets of the reference study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParameterSet {
    Set1,
    Set2,
    Set3,
}

impl ParameterSet {
    pub const ALL: [ParameterSet; 3] = [ParameterSet::Set1, ParameterSet::Set2, ParameterSet::Set3];

    pub fn name(self) -> &'static str {
        match self {
            ParameterSet::Set1 => "set1",
            ParameterSet::Set2 => "set2",
            ParameterSet::Set3 => "set3",
        }
    }

    pub fn params(self) -> ModelParams {
        match self {
            ParameterSet::Set1 => ModelParams {
                r: 0.05,
                sigma1: 0.12,
                sigma2: 0.15,
                rho: 0.30,
                lambda: 0.60,
                gamma1: -0.10,
                gamma2: 0.10,
                delta1: 0.17,
                delta2: 0.13,
                rho_hat: -0.20,
            },
            ParameterSet::Set2 => ModelParams {
                r: 0.05,
                sigma1: 0.30,
                sigma2: 0.30,
                rho: 0.50,
                lambda: 2.0,
                gamma1: -0.50,
                gamma2: 0.30,
                delta1: 0.40,
                delta2: 0.10,
                rho_hat: -0.60,
            },
            ParameterSet::Set3 => ModelParams {
                r: 0.05,
                sigma1: 0.20,
                sigma2: 0.30,
                rho: 0.70,
                lambda: 8.0,
                gamma1: -0.05,
                gamma2: -0.20,
                delta1: 0.45,
                delta2: 0.06,
                rho_hat: 0.50,
            },
        }
    }

    /// Strike and maturity of the set.
    pub fn contract(self) -> (f64, f64) {
        match self {
            ParameterSet::Set1 => (100.0, 1.0),
            ParameterSet::Set2 => (40.0, 0.5),
            ParameterSet::Set3 => (40.0, 1.0),
        }
    }

    pub fn option(self, payoff: PayoffKind) -> OptionSpec {
        let (strike, maturity) = self.contract();
        OptionSpec {
            strike,
            maturity,
            payoff,
        }
    }

    /// Spot prices per asset used by the value tables.
    pub fn table_spots(self) -> [f64; 3] {
        match self {
            ParameterSet::Set1 => [90.0, 100.0, 110.0],
            ParameterSet::Set2 | ParameterSet::Set3 => [36.0, 40.0, 44.0],
        }
    }
}

impl fmt::Display for ParameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParameterSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace([' ', '_', '-'], "").as_str() {
            "set1" | "1" => Ok(ParameterSet::Set1),
            "set2" | "2" => Ok(ParameterSet::Set2),
            "set3" | "3" => Ok(ParameterSet::Set3),
            other => Err(Error::Invalid(format!(
                "unknown preset '{other}' (expected set1, set2 or set3)"
            ))),
        }
    }
}
