//! Flocking cost, normalization against the expert, and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::comm_graph::CommModel;
use crate::controllers::Controller;
use crate::dynamics::SwarmState;
use crate::error::{Error, Result};
use crate::parallel::{self, ExecMode};
use crate::perception::Degradation;
use crate::training::{rollout, RolloutOptions, Scenario, Trajectory};

/// Normalized costs strictly below this count as a flock.
pub const SUCCESS_THRESHOLD: f64 = 3.0;

/// `(1/N)·Σ_i ‖v_i − v̄‖²` for one state.
pub fn velocity_variance(state: &SwarmState) -> f64 {
    let n = state.len();
    if n == 0 {
        return 0.0;
    }
    let mean = state.mean_velocity();
    state.agents.iter().map(|a| (a.velocity - mean).norm_sq()).sum::<f64>() / n as f64
}

/// Sum of [`velocity_variance`] over the given states.
pub fn cost_of_states<'a>(states: impl IntoIterator<Item = &'a SwarmState>) -> f64 {
    states.into_iter().map(velocity_variance).sum()
}

/// Cost over every recorded step of the trajectory.
pub fn velocity_variance_cost(trajectory: &Trajectory) -> f64 {
    cost_of_states(trajectory.records.iter().map(|r| &r.state))
}

pub fn normalized_cost(controller_cost: f64, expert_cost: f64) -> Result<f64> {
    if !(expert_cost > 0.0) {
        return Err(Error::DegenerateExpertCost);
    }
    Ok(controller_cost / expert_cost)
}

pub fn flocking_success(normalized: f64) -> bool {
    normalized < SUCCESS_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub controller: String,
    pub seed: u64,
    pub config_hash: String,
    pub raw_cost: f64,
    pub expert_cost: f64,
    pub normalized_cost: f64,
    pub success: bool,
    /// Set when the rollout became non-finite; costs are then infinite.
    pub diverged: bool,
    pub variance_series: Vec<f64>,
}

impl CostReport {
    pub fn from_trajectories(trajectory: &Trajectory, expert: &Trajectory, config_hash: &str) -> Result<Self> {
        let variance_series: Vec<f64> = trajectory.records.iter().map(|r| velocity_variance(&r.state)).collect();
        let raw_cost = variance_series.iter().sum();
        let expert_cost = velocity_variance_cost(expert);
        let normalized_cost = normalized_cost(raw_cost, expert_cost)?;
        Ok(CostReport {
            controller: trajectory.controller.clone(),
            seed: trajectory.seed,
            config_hash: config_hash.to_string(),
            raw_cost,
            expert_cost,
            normalized_cost,
            success: flocking_success(normalized_cost),
            diverged: false,
            variance_series,
        })
    }
}

/// Rolls out `controller` and the expert from the same initialization and
/// reports the normalized cost.
pub fn evaluate(
    controller: &Controller,
    scenario: &Scenario,
    seed: u64,
    degradation: Option<Degradation>,
    config_hash: &str,
) -> Result<CostReport> {
    let expert = rollout(
        &Controller::Expert(scenario.expert.clone()),
        scenario,
        seed,
        &RolloutOptions::default(),
    )?;
    let options = RolloutOptions {
        degradation,
        ..RolloutOptions::default()
    };
    match rollout(controller, scenario, seed, &options) {
        Ok(tr) => CostReport::from_trajectories(&tr, &expert, config_hash),
        Err(Error::NonFinite(_)) | Err(Error::Coincident(..)) => {
            let expert_cost = velocity_variance_cost(&expert);
            normalized_cost(1.0, expert_cost)?;
            Ok(CostReport {
                controller: controller.name(),
                seed,
                config_hash: config_hash.to_string(),
                raw_cost: f64::INFINITY,
                expert_cost,
                normalized_cost: f64::INFINITY,
                success: false,
                diverged: true,
                variance_series: Vec::new(),
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Filter taps `K` (communication exchanges `K−1`).
    Taps,
    /// Encoder feature dimension.
    Features,
    VInit,
    /// Disk communication radius.
    Radius,
    /// Neighbors per agent in the KNN model.
    Knn,
    /// Team size at test time.
    TeamSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Taps => "taps",
            SweepAxis::Features => "features",
            SweepAxis::VInit => "v_init",
            SweepAxis::Radius => "radius",
            SweepAxis::Knn => "knn",
            SweepAxis::TeamSize => "team_size",
        }
    }

    /// The scenario for one cell. Axes that change the controller rather
    /// than the world return the base scenario.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        match self {
            SweepAxis::Taps | SweepAxis::Features => {}
            SweepAxis::VInit => s.sim.v_init = value,
            SweepAxis::Radius => s.comm = CommModel::Disk { radius: value },
            SweepAxis::Knn => s.comm = CommModel::Knn { k: as_count(value)? },
            SweepAxis::TeamSize => s.sim.n_agents = as_count(value)?,
        }
        s.validate()?;
        Ok(s)
    }
}

fn as_count(value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!("sweep value {value} must be a positive integer")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub degradation: Option<Degradation>,
}

/// One column of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: f64,
    pub scenario: Scenario,
}

impl SweepCell {
    pub fn key(&self) -> String {
        format!("{}={}", self.axis.name(), self.value)
    }
}

/// Supplies the controller evaluated in each sweep cell.
pub trait ControllerSource: Sync {
    fn controller(&self, cell: &SweepCell) -> Result<Controller>;
}

/// The same controller in every cell, as in team-size transfer.
pub struct Shared(pub Controller);

impl ControllerSource for Shared {
    fn controller(&self, _: &SweepCell) -> Result<Controller> {
        Ok(self.0.clone())
    }
}

/// Controllers keyed by [`SweepCell::key`].
pub struct PerCell(pub BTreeMap<String, Controller>);

impl ControllerSource for PerCell {
    fn controller(&self, cell: &SweepCell) -> Result<Controller> {
        self.0
            .get(&cell.key())
            .cloned()
            .ok_or_else(|| Error::MissingCheckpoint(cell.key()))
    }
}

impl<F> ControllerSource for F
where
    F: Fn(&SweepCell) -> Result<Controller> + Sync,
{
    fn controller(&self, cell: &SweepCell) -> Result<Controller> {
        self(cell)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub success: bool,
    pub reports: Vec<CostReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub controller: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\tcontroller\tmedian\tq1\tq3\tsuccess\tseeds\n", self.axis.name());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.value,
                self.controller,
                r.median,
                r.q1,
                r.q3,
                r.success,
                r.reports.len()
            );
        }
        out
    }

    pub fn medians(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.median).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Evaluates every (cell, seed) pair, concurrently when `exec` allows, and
/// summarizes each cell by median and interquartile range.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &Scenario,
    source: &dyn ControllerSource,
    config_hash: &str,
    exec: ExecMode,
) -> Result<SweepTable> {
    if spec.values.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let cells: Vec<SweepCell> = spec
        .values
        .iter()
        .map(|&value| {
            Ok(SweepCell {
                axis: spec.axis,
                value,
                scenario: spec.axis.apply(base, value)?,
            })
        })
        .collect::<Result<_>>()?;
    let controllers: Vec<Controller> = cells.iter().map(|c| source.controller(c)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let reports = parallel::map(exec, &jobs, |&(c, seed)| {
        evaluate(&controllers[c], &cells[c].scenario, seed, spec.degradation, config_hash)
    });
    let mut by_cell: Vec<Vec<CostReport>> = vec![Vec::new(); cells.len()];
    for (&(c, _), r) in jobs.iter().zip(reports) {
        by_cell[c].push(r?);
    }
    let rows = cells
        .iter()
        .zip(by_cell)
        .map(|(cell, reports)| {
            let mut costs: Vec<f64> = reports.iter().map(|r| r.normalized_cost).collect();
            costs.sort_by(f64::total_cmp);
            let median = quantile(&costs, 0.5);
            SweepRow {
                value: cell.value,
                median,
                q1: quantile(&costs, 0.25),
                q3: quantile(&costs, 0.75),
                success: flocking_success(median),
                reports,
            }
        })
        .collect();
    Ok(SweepTable {
        axis: spec.axis,
        controller: controllers.first().map(Controller::name).unwrap_or_default(),
        rows,
    })
}
