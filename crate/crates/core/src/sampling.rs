//! Noise-trajectory samplers.
//!
//! Every (sample, channel) slot draws from its own counter-based stream, so
//! the output does not depend on evaluation order. Samplers that integrate
//! use the `Derivative` role and samplers that add draws directly use the
//! `Direct` role. The composite sampler therefore reproduces either parent
//! bit for bit when one of its covariances is zero.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::NoiseTrajectory;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::rng::{StreamRole, StreamSeed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "bg")]
    Bg,
    #[serde(rename = "il")]
    Il,
    #[serde(rename = "2df")]
    TwoDf,
    #[serde(rename = "nf-a2df")]
    NfA2df,
    #[serde(rename = "nf-ail")]
    NfAil,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::Bg,
        SamplerKind::Il,
        SamplerKind::TwoDf,
        SamplerKind::NfA2df,
        SamplerKind::NfAil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Bg => "bg",
            SamplerKind::Il => "il",
            SamplerKind::TwoDf => "2df",
            SamplerKind::NfA2df => "nf-a2df",
            SamplerKind::NfAil => "nf-ail",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, SamplerKind::NfA2df | SamplerKind::NfAil)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::Parse(format!("unknown sampler {s:?} (expected one of bg, il, 2df, nf-a2df, nf-ail)")))
    }
}

/// Diagonal variances per input channel `[steer_rate, accel]`.
///
/// `sigma` is used by `bg` and `il`; `sigma1` (integrated) and `sigma2`
/// (direct) by `2df`. Flow samplers ignore all three.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub sigma: [f64; 2],
    pub sigma1: [f64; 2],
    pub sigma2: [f64; 2],
    pub dt: f64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, sigma: [f64; 2], dt: f64) -> Self {
        Self {
            kind,
            sigma,
            sigma1: [0.0; 2],
            sigma2: [0.0; 2],
            dt,
        }
    }

    pub fn two_df(sigma1: [f64; 2], sigma2: [f64; 2], dt: f64) -> Self {
        Self {
            kind: SamplerKind::TwoDf,
            sigma: [0.0; 2],
            sigma1,
            sigma2,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.sigma.iter().chain(&self.sigma1).chain(&self.sigma2) {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("variances must be finite and >= 0, got {v}")));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Discrete integration with zero start: `out[0] = 0`, `out[i] = out[i-1] + rates[i-1] * dt`.
pub fn integrate_rates(rates: &[f64], dt: f64, out: &mut [f64]) {
    assert_eq!(rates.len(), out.len());
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rates) {
        *o = acc;
        acc += r * dt;
    }
}

fn fill_normal<R: Rng>(rng: &mut R, sd: f64, out: &mut [f64]) {
    for o in out.iter_mut() {
        *o = sd * rng.sample::<f64, _>(StandardNormal);
    }
}

/// A configured sampler. Flow kinds carry one model per channel.
#[derive(Clone, Debug)]
pub struct Sampler {
    cfg: SamplerConfig,
    flows: Option<[Arc<FlowModel>; 2]>,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig, flows: Option<[Arc<FlowModel>; 2]>) -> Result<Self> {
        cfg.validate()?;
        match (cfg.kind.is_flow(), &flows) {
            (true, None) => {
                return Err(Error::MissingFlow {
                    kind: cfg.kind.name().into(),
                    reason: "no flow models supplied".into(),
                })
            }
            (false, Some(_)) => {
                return Err(Error::InvalidParameter(format!(
                    "sampler {} does not take flow models",
                    cfg.kind
                )))
            }
            _ => {}
        }
        Ok(Self { cfg, flows })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn kind(&self) -> SamplerKind {
        self.cfg.kind
    }

    /// Draws `k` noise trajectories of length `n`.
    pub fn sample(&self, n: usize, k: usize, seed: &StreamSeed) -> Result<Vec<NoiseTrajectory>> {
        let mut out: Vec<NoiseTrajectory> = (0..k).map(|_| NoiseTrajectory::zeros(n)).collect();
        let dt = self.cfg.dt;
        match self.cfg.kind {
            SamplerKind::Bg => {
                for (s, v) in out.iter_mut().enumerate() {
                    for c in 0..2 {
                        let mut rng = seed.stream(s, c, StreamRole::Direct);
                        fill_normal(&mut rng, self.cfg.sigma[c].sqrt(), &mut v.channels[c]);
                    }
                }
            }
            SamplerKind::Il => {
                let mut rates = vec![0.0; n];
                for (s, v) in out.iter_mut().enumerate() {
                    for c in 0..2 {
                        let mut rng = seed.stream(s, c, StreamRole::Derivative);
                        fill_normal(&mut rng, self.cfg.sigma[c].sqrt(), &mut rates);
                        integrate_rates(&rates, dt, &mut v.channels[c]);
                    }
                }
            }
            SamplerKind::TwoDf => {
                let mut rates = vec![0.0; n];
                let mut direct = vec![0.0; n];
                for (s, v) in out.iter_mut().enumerate() {
                    for c in 0..2 {
                        let mut r1 = seed.stream(s, c, StreamRole::Derivative);
                        fill_normal(&mut r1, self.cfg.sigma1[c].sqrt(), &mut rates);
                        let mut r2 = seed.stream(s, c, StreamRole::Direct);
                        fill_normal(&mut r2, self.cfg.sigma2[c].sqrt(), &mut direct);
                        let ch = &mut v.channels[c];
                        integrate_rates(&rates, dt, ch);
                        for (o, d) in ch.iter_mut().zip(&direct) {
                            *o += d;
                        }
                    }
                }
            }
            SamplerKind::NfA2df | SamplerKind::NfAil => self.sample_flow(n, seed, &mut out)?,
        }
        Ok(out)
    }

    fn sample_flow(&self, n: usize, seed: &StreamSeed, out: &mut [NoiseTrajectory]) -> Result<()> {
        let flows = self.flows.as_ref().expect("checked at construction");
        let (role, lift) = match self.cfg.kind {
            SamplerKind::NfA2df => (StreamRole::Direct, false),
            _ => (StreamRole::Derivative, true),
        };
        let k = out.len();
        for (c, flow) in flows.iter().enumerate() {
            if flow.dim() != n {
                return Err(Error::MissingFlow {
                    kind: self.cfg.kind.name().into(),
                    reason: format!("channel {} model has dimension {}, horizon is {n}", c + 1, flow.dim()),
                });
            }
            let mut z = Array2::zeros((k, n));
            for (s, mut row) in z.rows_mut().into_iter().enumerate() {
                let mut rng = seed.stream(s, c, role);
                fill_normal(&mut rng, 1.0, row.as_slice_mut().unwrap());
            }
            let (x, _) = flow.forward_batch(&z)?;
            for (s, v) in out.iter_mut().enumerate() {
                let row = x.row(s);
                let row = row.as_slice().expect("row-major output");
                if lift {
                    integrate_rates(row, self.cfg.dt, &mut v.channels[c]);
                } else {
                    v.channels[c].copy_from_slice(row);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "flow sample" });
        }
        Ok(())
    }
}
