//! Entry points behind the command-line tool: flow training, single runs,
//! Monte-Carlo benchmarks and trajectory export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::flow::{self, FlowModel, LossCurve, TrainConfig};
use crate::mppi::{run_receding_horizon, PlannerConfig, RunLog};
use crate::rng::{hash_str, hash_words};
use crate::sampling::{Sampler, SamplerConfig, SamplerKind};
use crate::scenario::Scenario;
use crate::trainingdata::{generate_a2df, generate_ail, HeuristicParams, Provenance, TrainingBatch};

/// How benchmark costs are aggregated; written into every report.
pub const COST_SEMANTICS: &str = "per run: mean over control steps of the executed plan's cost terms; \
per sampler: mean over completed runs; S = alpha . (c1..c5)";

/// Sampling covariances (diagonal variances per channel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub bg_sigma: [f64; 2],
    pub il_sigma: [f64; 2],
    pub two_df_sigma1: [f64; 2],
    pub two_df_sigma2: [f64; 2],
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            bg_sigma: [0.1, 2.0],
            il_sigma: [0.045, 1.1],
            two_df_sigma1: [0.03, 0.075],
            two_df_sigma2: [0.045, 0.09],
        }
    }
}

/// Dataset generation for one flow-based sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Drawing variance per input channel.
    pub eps_draw: [f64; 2],
    pub eps_switch: f64,
    /// Trajectories generated per channel.
    pub batch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub a2df: DatasetSection,
    pub ail: DatasetSection,
    pub train: TrainConfig,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            a2df: DatasetSection {
                eps_draw: [0.03, 0.9],
                eps_switch: 220.0,
                batch: 400,
                seed: 1,
            },
            ail: DatasetSection {
                eps_draw: [0.045, 1.1],
                eps_switch: 350.0,
                batch: 400,
                seed: 2,
            },
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub runs: usize,
    pub scenarios: Vec<String>,
    pub samplers: Vec<SamplerKind>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            runs: 10,
            scenarios: vec!["static:1".into()],
            samplers: SamplerKind::ALL.to_vec(),
        }
    }
}

/// Every tunable constant of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub planner: PlannerConfig,
    pub samplers: SamplerSection,
    pub flows: FlowSection,
    pub benchmark: BenchmarkSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            planner: PlannerConfig {
                model: ModelParams {
                    delta_max: Some(0.6),
                    ..ModelParams::default()
                },
                ..PlannerConfig::default()
            },
            samplers: SamplerSection::default(),
            flows: FlowSection::default(),
            benchmark: BenchmarkSection::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.flows.train.validate()?;
        for d in [&self.flows.a2df, &self.flows.ail] {
            if d.batch < 2 {
                return Err(Error::InvalidParameter(format!("dataset batch must be >= 2, got {}", d.batch)));
            }
            HeuristicParams::single(d.eps_draw[0], d.eps_switch).validate()?;
            HeuristicParams::single(d.eps_draw[1], d.eps_switch).validate()?;
        }
        if self.benchmark.runs == 0 {
            return Err(Error::InvalidParameter("benchmark needs at least one run".into()));
        }
        for kind in SamplerKind::ALL {
            self.sampler_config(kind).validate()?;
        }
        Ok(())
    }

    /// Short stable digest of the full configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn sampler_config(&self, kind: SamplerKind) -> SamplerConfig {
        let s = &self.samplers;
        let dt = self.planner.model.dt;
        match kind {
            SamplerKind::Bg => SamplerConfig::new(kind, s.bg_sigma, dt),
            SamplerKind::Il => SamplerConfig::new(kind, s.il_sigma, dt),
            SamplerKind::TwoDf => SamplerConfig::two_df(s.two_df_sigma1, s.two_df_sigma2, dt),
            // flows carry their own scale
            SamplerKind::NfA2df | SamplerKind::NfAil => SamplerConfig::new(kind, [1.0, 1.0], dt),
        }
    }

    fn dataset(&self, provenance: Provenance) -> &DatasetSection {
        match provenance {
            Provenance::A2df => &self.flows.a2df,
            Provenance::Ail => &self.flows.ail,
        }
    }
}

fn provenance_of(kind: SamplerKind) -> Option<Provenance> {
    match kind {
        SamplerKind::NfA2df => Some(Provenance::A2df),
        SamplerKind::NfAil => Some(Provenance::Ail),
        _ => None,
    }
}

/// Generates the training batch for one channel (1 or 2).
pub fn training_batch(cfg: &Config, provenance: Provenance, channel: u8, seed: Option<u64>) -> Result<TrainingBatch> {
    if !(1..=2).contains(&channel) {
        return Err(Error::InvalidParameter(format!("channel must be 1 or 2, got {channel}")));
    }
    let d = cfg.dataset(provenance);
    let eps = d.eps_draw[channel as usize - 1];
    let seed = hash_words(&[seed.unwrap_or(d.seed), channel as u64]);
    let n = cfg.planner.horizon;
    match provenance {
        Provenance::A2df => generate_a2df(d.batch, n, &HeuristicParams::single(eps, d.eps_switch), cfg.planner.model.dt, seed),
        Provenance::Ail => generate_ail(d.batch, n, eps, d.eps_switch, seed),
    }
}

/// Key recorded in a model's metadata that ties it to the dataset and
/// training settings it came from.
fn flow_key(cfg: &Config, provenance: Provenance, channel: u8, seed: Option<u64>) -> String {
    let d = cfg.dataset(provenance);
    let json = serde_json::json!({
        "provenance": provenance.name(),
        "channel": channel,
        "horizon": cfg.planner.horizon,
        "dt": cfg.planner.model.dt,
        "dataset": d,
        "seed": seed,
        "train": cfg.flows.train,
    });
    hex::encode(&Sha256::digest(json.to_string().as_bytes())[..8])
}

#[derive(Clone, Debug)]
pub struct TrainedFlow {
    pub model: FlowModel,
    pub curve: LossCurve,
    pub best_step: usize,
}

/// Generates the dataset for `channel` and trains a flow on it.
pub fn cmd_train_flow(cfg: &Config, provenance: Provenance, channel: u8, seed: Option<u64>) -> Result<TrainedFlow> {
    let batch = training_batch(cfg, provenance, channel, seed)?;
    let out = flow::train(&batch.rows, &cfg.flows.train)?;
    let mut model = out.model;
    model.metadata.channel = Some(channel);
    model.metadata.provenance = Some(provenance.name().into());
    model.metadata.generation = Some(flow_key(cfg, provenance, channel, seed));
    Ok(TrainedFlow {
        model,
        curve: out.curve,
        best_step: out.best_step,
    })
}

/// Writes `model` to `path` and its loss curve next to it.
pub fn save_trained(t: &TrainedFlow, path: &Path) -> Result<PathBuf> {
    flow::save(&t.model, path)?;
    let csv = path.with_extension("loss.csv");
    flow::write_loss_csv(&t.curve, &csv)?;
    Ok(csv)
}

pub fn flow_file_name(provenance: Provenance, channel: u8) -> String {
    format!("{}-u{channel}.flow", provenance.name())
}

/// Flow models for `kind`, taken from `dir` when present there and trained
/// otherwise. Freshly trained models are written to `dir` if one is given.
/// A stored model trained under different settings is rejected.
pub fn flows_for(cfg: &Config, kind: SamplerKind, dir: Option<&Path>) -> Result<Option<[Arc<FlowModel>; 2]>> {
    let Some(provenance) = provenance_of(kind) else {
        return Ok(None);
    };
    let mut models = Vec::with_capacity(2);
    for channel in 1..=2u8 {
        let expected = flow_key(cfg, provenance, channel, None);
        let path = dir.map(|d| d.join(flow_file_name(provenance, channel)));
        let model = match &path {
            Some(p) if p.exists() => {
                let m = flow::load_with_dim(p, cfg.planner.horizon)?;
                if m.metadata.generation.as_deref() != Some(expected.as_str()) {
                    return Err(Error::MissingFlow {
                        kind: kind.name().into(),
                        reason: format!(
                            "{} was trained with different settings; delete it or point to another directory",
                            p.display()
                        ),
                    });
                }
                m
            }
            _ => {
                log::info!("training {} flow for channel {channel}", provenance.name());
                let t = cmd_train_flow(cfg, provenance, channel, None)?;
                if let Some(p) = &path {
                    save_trained(&t, p)?;
                }
                t.model
            }
        };
        models.push(Arc::new(model));
    }
    let b = models.pop().expect("two models");
    let a = models.pop().expect("two models");
    Ok(Some([a, b]))
}

pub fn build_sampler(cfg: &Config, kind: SamplerKind, flow_dir: Option<&Path>) -> Result<Sampler> {
    Sampler::new(cfg.sampler_config(kind), flows_for(cfg, kind, flow_dir)?)
}

/// One closed-loop run.
pub fn cmd_run(cfg: &Config, scenario: &Scenario, sampler: &Sampler, seed: u64) -> Result<RunLog> {
    run_receding_horizon(scenario, &cfg.planner, sampler, seed)
}

/// Seed of run `r` for a (scenario, sampler) cell.
pub fn run_seed(master: u64, scenario: &str, sampler: SamplerKind, r: usize) -> u64 {
    hash_words(&[master, hash_str(scenario), hash_str(sampler.name()), r as u64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub aborted: Option<String>,
    pub mean_terms: [f64; 5],
    pub mean_total: f64,
    pub min_d_e: f64,
    pub mean_ess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerRow {
    pub scenario: String,
    pub sampler: SamplerKind,
    pub runs: usize,
    pub completed: usize,
    /// Unweighted mean cost terms over completed runs.
    pub c: [f64; 5],
    /// `alpha_i * c_i`.
    pub wc: [f64; 5],
    pub s: f64,
    /// `(S_bg - S) / S_bg` within the same scenario.
    pub reduction_vs_bg: Option<f64>,
    /// Smallest realized scaled distance to traffic over all runs.
    pub min_d_e: f64,
    pub mean_ess: f64,
    pub outcomes: Vec<RunOutcome>,
}

impl SamplerRow {
    pub fn aborted(&self) -> usize {
        self.runs - self.completed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cost_semantics: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub runs: usize,
    pub alpha: [f64; 5],
    pub rows: Vec<SamplerRow>,
}

impl BenchmarkReport {
    pub fn row(&self, scenario: &str, sampler: SamplerKind) -> Option<&SamplerRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.sampler == sampler)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {COST_SEMANTICS}");
        let _ = writeln!(out, "# config_hash={} master_seed={} runs={}", self.config_hash, self.master_seed, self.runs);
        out.push_str("scenario,sampler,runs,completed,aborted,c1,c2,c3,c4,c5,wc1,wc2,wc3,wc4,wc5,S,reduction_vs_bg,min_d_e,mean_ess\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{},{}", r.scenario, r.sampler.name(), r.runs, r.completed, r.aborted());
            for v in r.c.iter().chain(&r.wc) {
                let _ = write!(out, ",{v}");
            }
            let red = r.reduction_vs_bg.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, ",{},{red},{},{}", r.s, r.min_d_e, r.mean_ess);
        }
        out
    }

    /// Writes `<prefix>.csv` and `<prefix>.json`.
    pub fn write(&self, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
        let csv = with_suffix(prefix, "csv");
        let json = with_suffix(prefix, "json");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        Ok((csv, json))
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkRequest {
    /// Scenario ids or files; empty means the configured list.
    pub scenarios: Vec<String>,
    /// Empty means the configured list.
    pub samplers: Vec<SamplerKind>,
    pub runs: Option<usize>,
    pub master_seed: u64,
    pub flow_dir: Option<PathBuf>,
}

/// Runs every (scenario, sampler) cell `runs` times. Aborted runs are kept
/// in the outcomes and left out of the means.
pub fn cmd_benchmark(cfg: &Config, req: &BenchmarkRequest) -> Result<BenchmarkReport> {
    let scenarios = if req.scenarios.is_empty() { &cfg.benchmark.scenarios } else { &req.scenarios };
    let samplers = if req.samplers.is_empty() { &cfg.benchmark.samplers } else { &req.samplers };
    let runs = req.runs.unwrap_or(cfg.benchmark.runs);
    if runs == 0 {
        return Err(Error::InvalidParameter("benchmark needs at least one run".into()));
    }
    let alpha = cfg.planner.weights.alpha;
    let mut rows = Vec::new();
    for sc in scenarios {
        let scenario = Scenario::resolve(sc)?;
        let mut cell_rows = Vec::new();
        for &kind in samplers {
            let sampler = build_sampler(cfg, kind, req.flow_dir.as_deref())?;
            let mut outcomes = Vec::with_capacity(runs);
            for r in 0..runs {
                let seed = run_seed(req.master_seed, sc, kind, r);
                let log = cmd_run(cfg, &scenario, &sampler, seed)?;
                let s = log.summary;
                log::info!("{sc} {} run {r}: S={:.2} aborted={:?}", kind.name(), s.mean_total, s.aborted);
                outcomes.push(RunOutcome {
                    seed,
                    aborted: s.aborted,
                    mean_terms: s.mean_terms,
                    mean_total: s.mean_total,
                    min_d_e: s.min_d_e,
                    mean_ess: s.mean_ess,
                });
            }
            cell_rows.push(aggregate(sc, kind, outcomes, &alpha));
        }
        let bg = cell_rows.iter().find(|r| r.sampler == SamplerKind::Bg).map(|r| r.s);
        if let Some(bg) = bg.filter(|v| v.is_finite() && *v != 0.0) {
            for r in &mut cell_rows {
                r.reduction_vs_bg = Some((bg - r.s) / bg);
            }
        }
        rows.extend(cell_rows);
    }
    Ok(BenchmarkReport {
        cost_semantics: COST_SEMANTICS.into(),
        config_hash: cfg.digest(),
        master_seed: req.master_seed,
        runs,
        alpha,
        rows,
    })
}

fn aggregate(scenario: &str, sampler: SamplerKind, outcomes: Vec<RunOutcome>, alpha: &[f64; 5]) -> SamplerRow {
    let done: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.aborted.is_none()).collect();
    let n = done.len() as f64;
    let mut c = [f64::NAN; 5];
    let mut mean_ess = f64::NAN;
    if !done.is_empty() {
        // summed in run order so the result does not depend on scheduling
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = done.iter().map(|o| o.mean_terms[i]).sum::<f64>() / n;
        }
        mean_ess = done.iter().map(|o| o.mean_ess).sum::<f64>() / n;
    }
    let mut wc = c;
    for (w, a) in wc.iter_mut().zip(alpha) {
        *w *= a;
    }
    SamplerRow {
        scenario: scenario.into(),
        sampler,
        runs: outcomes.len(),
        completed: done.len(),
        c,
        wc,
        s: wc.iter().sum(),
        reduction_vs_bg: None,
        min_d_e: outcomes.iter().map(|o| o.min_d_e).fold(f64::INFINITY, f64::min),
        mean_ess,
        outcomes,
    }
}

pub const SPATIAL_HEADER: &str = "t,s_x,s_y,v,psi";

/// Driven trajectory as CSV, one row per control step.
pub fn cmd_export_spatial(log: &RunLog) -> String {
    let mut out = String::from(SPATIAL_HEADER);
    out.push('\n');
    for r in &log.records {
        let x = &r.state;
        let _ = writeln!(out, "{},{},{},{},{}", r.t, x.s_x, x.s_y, x.v, x.psi);
    }
    out
}

/// Parses CSV written by [`cmd_export_spatial`].
pub fn parse_spatial(text: &str) -> Result<Vec<[f64; 5]>> {
    let mut lines = text.lines();
    if lines.next() != Some(SPATIAL_HEADER) {
        return Err(Error::Parse(format!("expected header `{SPATIAL_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let vals: Vec<f64> = l
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
            <[f64; 5]>::try_from(vals).map_err(|v| Error::Parse(format!("row {}: {} columns", i + 1, v.len())))
        })
        .collect()
}
