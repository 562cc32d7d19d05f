//! Sampling-based receding-horizon planner.
//!
//! One planning step draws `K` noise trajectories, rolls out `U_bar + V` for
//! each, scores the rollouts and averages the noises with exponential
//! weights `exp(-(S - min S) / lambda)`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{min_scaled_distance, total_cost, CostBreakdown, CostContext, CostWeights, EllipseParams};
use crate::dynamics::{realized_inputs, rollout, rollout_into, step, ControlInput, InputTrajectory, ModelParams, VehicleState};
use crate::error::{Error, Result};
use crate::rng::StreamSeed;
use crate::sampling::Sampler;
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Samples per planning step.
    pub samples: usize,
    /// Horizon length in steps.
    pub horizon: usize,
    /// Inverse temperature.
    pub lambda: f64,
    pub model: ModelParams,
    pub weights: CostWeights,
    pub ellipse: EllipseParams,
    /// Local path window kept behind the vehicle [m].
    #[serde(default = "default_behind")]
    pub path_behind: f64,
    /// Extra local path length beyond the horizon reach [m].
    #[serde(default = "default_ahead")]
    pub path_margin: f64,
}

fn default_behind() -> f64 {
    10.0
}

fn default_ahead() -> f64 {
    40.0
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            horizon: 80,
            lambda: 5.0,
            model: ModelParams::default(),
            weights: CostWeights::default(),
            ellipse: EllipseParams::default(),
            path_behind: default_behind(),
            path_margin: default_ahead(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.horizon < 2 {
            return Err(Error::InvalidParameter(format!(
                "need K >= 1 and N >= 2 (K={}, N={})",
                self.samples, self.horizon
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.model.validate()?;
        self.weights.validate()?;
        self.ellipse.validate()
    }

    /// Horizon duration [s].
    pub fn horizon_time(&self) -> f64 {
        self.horizon as f64 * self.model.dt
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    /// Total cost of every sample, in sample order.
    pub costs: Vec<f64>,
    /// `sum(w) / max(w) / K`, in `(0, 1]`.
    pub ess: f64,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub best_index: usize,
    /// Cost of the returned plan `(X*, U*)`.
    pub plan: CostBreakdown,
    /// Weights were unusable and the best sample was returned instead.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub u_star: InputTrajectory,
    pub x_star: Vec<VehicleState>,
    pub diagnostics: PlanDiagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedUpdate {
    pub u_star: InputTrajectory,
    pub weights: Vec<f64>,
    pub fallback: bool,
}

/// `u* = u_bar + sum_k w_k V_k / sum_k w_k` with `w_k = exp(-(S_k - b) / lambda)`,
/// where `b = min S` when `baseline` is set and 0 otherwise. Non-finite costs
/// get zero weight. When no weight is usable the lowest-cost sample is
/// returned.
pub fn weighted_update(
    u_bar: &InputTrajectory,
    noises: &[InputTrajectory],
    costs: &[f64],
    lambda: f64,
    baseline: bool,
) -> Result<WeightedUpdate> {
    if noises.len() != costs.len() || noises.is_empty() {
        return Err(Error::LengthMismatch {
            what: "sample costs",
            expected: noises.len(),
            actual: costs.len(),
        });
    }
    let best = costs
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(Error::NonFinite { what: "every sample cost" });
    };
    let b = if baseline { costs[best] } else { 0.0 };
    let weights: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - b) / lambda).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let n = u_bar.len();
    let mut u_star = u_bar.clone();
    if !(total > 0.0 && total.is_finite()) {
        for c in 0..2 {
            for i in 0..n {
                u_star.channels[c][i] += noises[best].channels[c][i];
            }
        }
        let mut w = vec![0.0; costs.len()];
        w[best] = 1.0;
        return Ok(WeightedUpdate {
            u_star,
            weights: w,
            fallback: true,
        });
    }
    for c in 0..2 {
        for i in 0..n {
            // fixed summation order keeps results independent of threading
            let mut acc = 0.0;
            for (w, v) in weights.iter().zip(noises) {
                acc += w * v.channels[c][i];
            }
            u_star.channels[c][i] += acc / total;
        }
    }
    Ok(WeightedUpdate {
        u_star,
        weights,
        fallback: false,
    })
}

/// Scores `U_bar + V` for every noise trajectory. Evaluated in parallel;
/// each result depends only on its own sample.
pub fn score_samples(
    x0: &VehicleState,
    u_bar: &InputTrajectory,
    noises: &[InputTrajectory],
    model: &ModelParams,
    ctx: &CostContext,
) -> Vec<f64> {
    noises
        .par_iter()
        .map_init(Vec::new, |states, v| {
            let u = u_bar.add(v);
            rollout_into(x0, &u, model, states);
            if states.iter().any(|x| !x.is_finite()) {
                return f64::INFINITY;
            }
            let c = total_cost(states, &u, ctx).total;
            if c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// One planning step.
pub fn plan_step(
    x0: &VehicleState,
    u_bar: &InputTrajectory,
    cfg: &PlannerConfig,
    sampler: &Sampler,
    ctx: &CostContext,
    seed: &StreamSeed,
) -> Result<PlanResult> {
    if u_bar.len() != cfg.horizon {
        return Err(Error::LengthMismatch {
            what: "warm start",
            expected: cfg.horizon,
            actual: u_bar.len(),
        });
    }
    let noises = sampler.sample(cfg.horizon, cfg.samples, seed)?;
    let costs = score_samples(x0, u_bar, &noises, &cfg.model, ctx);
    let mut upd = weighted_update(u_bar, &noises, &costs, cfg.lambda, true)?;
    // keeps the warm start from winding up against the steering clamp
    upd.u_star = realized_inputs(x0, &upd.u_star, &cfg.model);
    let x_star = rollout(x0, &upd.u_star, cfg.horizon, &cfg.model)?;
    let plan = total_cost(&x_star, &upd.u_star, ctx);

    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    let (best_index, best) = costs
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("K >= 1");
    let wmax = upd.weights.iter().copied().fold(0.0, f64::max);
    let ess = upd.weights.iter().sum::<f64>() / wmax / costs.len() as f64;
    Ok(PlanResult {
        u_star: upd.u_star,
        x_star,
        diagnostics: PlanDiagnostics {
            ess,
            best,
            mean: finite.iter().sum::<f64>() / finite.len() as f64,
            worst: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            best_index,
            plan,
            fallback: upd.fallback,
            costs,
        },
    })
}

/// Drops the first input and repeats the last one.
pub fn shift_warm_start(u_star: &InputTrajectory) -> InputTrajectory {
    let mut next = u_star.clone();
    for ch in next.channels.iter_mut() {
        if let Some(&last) = ch.last() {
            ch.rotate_left(1);
            *ch.last_mut().unwrap() = last;
        }
    }
    next
}

/// Cost context for a planning step at time `t` from state `x`.
///
/// The local path is a window of the road around the vehicle; the goal is
/// the road point `v_des * T` ahead of the vehicle's projection.
pub fn step_context(scenario: &Scenario, x: &VehicleState, t: f64, cfg: &PlannerConfig) -> Result<CostContext> {
    let road = &scenario.road;
    let s = road.project(x.position()).arc;
    let horizon_t = cfg.horizon_time();
    let reach = scenario.v_des().max(x.v.abs()) * horizon_t;
    let path = road.window(s - cfg.path_behind, s + reach + cfg.path_margin)?;
    Ok(CostContext {
        goal: road.point_at(s + scenario.v_des() * horizon_t),
        path,
        v_des: scenario.v_des(),
        traffic: scenario.traffic_prediction(t, cfg.horizon, cfg.model.dt),
        ellipse: cfg.ellipse,
        weights: cfg.weights,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    /// State at the start of the step.
    pub state: VehicleState,
    /// Input applied over the step.
    pub input: ControlInput,
    /// Unweighted cost terms of the plan.
    pub terms: [f64; 5],
    /// Weighted total of the plan.
    pub total: f64,
    pub ess: f64,
    pub fallback: bool,
    /// Smallest scaled distance to traffic along the plan.
    pub plan_min_d_e: f64,
    /// Scaled distance to the nearest traffic vehicle at time `t`.
    pub d_e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub sampler: String,
    pub seed: u64,
    pub steps: usize,
    pub aborted: Option<String>,
    /// Mean over planning steps of the plan's unweighted cost terms.
    pub mean_terms: [f64; 5],
    /// Mean over planning steps of the plan's weighted total.
    pub mean_total: f64,
    /// Smallest scaled distance to traffic along the driven trajectory.
    pub min_d_e: f64,
    pub final_state: VehicleState,
    pub mean_ess: f64,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line<'a> {
    Step(&'a StepRecord),
    Summary(&'a RunSummary),
}

impl RunLog {
    pub fn aborted(&self) -> bool {
        self.summary.aborted.is_some()
    }

    /// JSON lines: one `step` record per control step, then a `summary`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line::Step(r)).expect("serializable"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Line::Summary(&self.summary)).expect("serializable"));
        out.push('\n');
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(tag = "type", rename_all = "lowercase")]
        enum Owned {
            Step(StepRecord),
            Summary(RunSummary),
        }
        let mut records = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<Owned>(line).map_err(|e| Error::Parse(format!("run log line {}: {e}", i + 1)))? {
                Owned::Step(r) => records.push(r),
                Owned::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| Error::Parse("run log has no summary line".into()))?;
        Ok(Self { records, summary })
    }
}

/// Number of control steps to cover `t_end`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    let r = t_end / dt;
    // absorb floating error such as 4.5 / 0.1 = 45.000000000000007
    let nearest = r.round();
    if (r - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        r.ceil() as usize
    }
}

fn nearest_d_e(scenario: &Scenario, x: &VehicleState, t: f64, e: &EllipseParams) -> f64 {
    scenario
        .traffic_poses_at(t)
        .iter()
        .map(|p| e.scaled_distance(crate::costs::traffic_frame_offset(x.position(), p)))
        .fold(f64::INFINITY, f64::min)
}

/// Closed-loop run from the scenario's initial state with `U_bar = 0`.
///
/// Every step plans, applies the first input for one `dt`, and shifts the
/// plan as the next warm start. A non-finite state or plan ends the run with
/// `summary.aborted` set.
pub fn run_receding_horizon(scenario: &Scenario, cfg: &PlannerConfig, sampler: &Sampler, seed: u64) -> Result<RunLog> {
    cfg.validate()?;
    let dt = cfg.model.dt;
    let steps = step_count(scenario.t_end(), dt);
    let mut x = scenario.x0();
    let mut u_bar = InputTrajectory::zeros(cfg.horizon);
    let mut records = Vec::with_capacity(steps);
    let mut aborted = None;
    for k in 0..steps {
        let t = k as f64 * dt;
        let planned = step_context(scenario, &x, t, cfg)
            .and_then(|ctx| plan_step(&x, &u_bar, cfg, sampler, &ctx, &StreamSeed::new(seed, k as u64)).map(|p| (p, ctx)));
        let (plan, ctx) = match planned {
            Ok(p) => p,
            Err(e) => {
                aborted = Some(Error::RunAborted { step: k, reason: e.to_string() }.to_string());
                break;
            }
        };
        let u0 = plan.u_star.get(0);
        let d = &plan.diagnostics;
        records.push(StepRecord {
            step: k,
            t,
            state: x,
            input: u0,
            terms: d.plan.terms,
            total: d.plan.total,
            ess: d.ess,
            fallback: d.fallback,
            plan_min_d_e: min_scaled_distance(&plan.x_star, &ctx.traffic, &cfg.ellipse),
            d_e: nearest_d_e(scenario, &x, t, &cfg.ellipse),
        });
        match step(&x, &u0, &cfg.model) {
            Ok(next) if next.is_finite() => x = next,
            Ok(_) | Err(_) => {
                aborted = Some(
                    Error::RunAborted {
                        step: k,
                        reason: "vehicle state became non-finite".into(),
                    }
                    .to_string(),
                );
                break;
            }
        }
        u_bar = shift_warm_start(&plan.u_star);
    }
    let n = records.len().max(1) as f64;
    let mut mean_terms = [0.0; 5];
    for r in &records {
        for (m, t) in mean_terms.iter_mut().zip(r.terms) {
            *m += t / n;
        }
    }
    let final_d_e = nearest_d_e(scenario, &x, steps as f64 * dt, &cfg.ellipse);
    let summary = RunSummary {
        scenario: scenario.name().to_string(),
        sampler: sampler.kind().name().to_string(),
        seed,
        steps: records.len(),
        aborted,
        mean_total: records.iter().map(|r| r.total).sum::<f64>() / n,
        mean_terms,
        min_d_e: records.iter().map(|r| r.d_e).fold(final_d_e, f64::min),
        final_state: x,
        mean_ess: records.iter().map(|r| r.ess).sum::<f64>() / n,
        fallbacks: records.iter().filter(|r| r.fallback).count(),
    };
    Ok(RunLog { records, summary })
}
