//! A fully assembled semidiscrete problem: grid, operators, payoff vector.

use crate::diff::OperatorSet;
use crate::error::Result;
use crate::grid::{GridSpec, SpatialGrid};
use crate::jump::{JumpOperator, LogGrid, DEFAULT_MAX_LOG_NODES};
use crate::model::{ModelParams, OptionSpec};

#[derive(Debug)]
pub struct Problem {
    pub params: ModelParams,
    pub option: OptionSpec,
    pub grid: SpatialGrid,
    pub ops: OperatorSet,
    pub jump: JumpOperator,
    /// Payoff on the grid; the initial value of every method.
    pub initial: Vec<f64>,
    /// Lower bound imposed on the solution. Equal to `initial` for the
    /// American problem, `-inf` everywhere when the constraint is dropped.
    pub obstacle: Vec<f64>,
}

impl Problem {
    /// Assembles the problem with the log grid chosen by the mesh-width rule.
    pub fn build(params: &ModelParams, option: &OptionSpec, spec: &GridSpec) -> Result<Self> {
        params.validate()?;
        option.validate()?;
        let grid = SpatialGrid::build(spec)?;
        let log = LogGrid::build(&grid, 1.0, DEFAULT_MAX_LOG_NODES)?;
        Self::assemble(params, option, grid, log)
    }

    pub fn assemble(
        params: &ModelParams,
        option: &OptionSpec,
        grid: SpatialGrid,
        log: LogGrid,
    ) -> Result<Self> {
        let ops = OperatorSet::assemble(params, &grid);
        let jump = JumpOperator::build(params, &grid, log)?;
        let initial = grid.sample(|a, b| option.payoff(a, b));
        Ok(Problem {
            params: *params,
            option: *option,
            grid,
            ops,
            jump,
            obstacle: initial.clone(),
            initial,
        })
    }

    /// Drops the early exercise constraint (European problem).
    pub fn without_constraint(mut self) -> Self {
        self.obstacle = vec![f64::NEG_INFINITY; self.initial.len()];
        self
    }

    pub fn size(&self) -> usize {
        self.initial.len()
    }
}
