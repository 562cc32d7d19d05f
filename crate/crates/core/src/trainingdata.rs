//! Training sets for the learned samplers.
//!
//! Both generators draw Gaussian groups, sort them by trajectory sum in
//! opposite directions and pair rows with a noisy index heuristic, so joined
//! trajectories tend to change direction.

use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sampling::integrate_rates;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    A2df,
    Ail,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::A2df => "a2df",
            Provenance::Ail => "ail",
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2df" => Ok(Provenance::A2df),
            "ail" => Ok(Provenance::Ail),
            _ => Err(Error::Parse(format!("unknown dataset kind {s:?} (expected a2df or ail)"))),
        }
    }
}

/// Variances used by the generators. For the lifting generator only
/// `eps_draw_1` is used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicParams {
    pub eps_switch: f64,
    pub eps_draw_1: f64,
    pub eps_draw_2: f64,
}

impl HeuristicParams {
    /// Same drawing variance for both groups.
    pub fn single(eps_draw: f64, eps_switch: f64) -> Self {
        Self {
            eps_switch,
            eps_draw_1: eps_draw,
            eps_draw_2: eps_draw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_switch", self.eps_switch),
            ("eps_draw_1", self.eps_draw_1),
            ("eps_draw_2", self.eps_draw_2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    /// `B x N`, one channel.
    pub rows: Array2<f64>,
    pub provenance: Provenance,
    pub seed: u64,
    pub params: HeuristicParams,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn horizon(&self) -> usize {
        self.rows.ncols()
    }

    /// Row-major CSV without header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.rows.len() * 24);
        for row in self.rows.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn trajectory_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortDirection {
    Ascending,
    Descending,
}

/// Reorders rows by `rho`; ties keep their original order.
pub fn sort_by_measure(m: &Array2<f64>, rho: &Array1<f64>, dir: SortDirection) -> Array2<f64> {
    assert_eq!(m.nrows(), rho.len(), "one measure per row");
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    match dir {
        SortDirection::Ascending => order.sort_by(|&a, &b| rho[a].total_cmp(&rho[b])),
        SortDirection::Descending => order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a])),
    }
    m.select(Axis(0), &order)
}

/// Draws a 1-based index pair: `b1` uniform, `b2 = clip(ceil(N(b1, eps_switch)), 1, B)`.
pub fn draw_via_heuristic<R: Rng + ?Sized>(b: usize, eps_switch: f64, rng: &mut R) -> (usize, usize) {
    assert!(b >= 1, "need at least one row");
    let b1 = rng.gen_range(1..=b);
    let z: f64 = rng.sample(StandardNormal);
    let b2 = (b1 as f64 + eps_switch.sqrt() * z).ceil().clamp(1.0, b as f64);
    (b1, b2 as usize)
}

fn draw_pairs<R: Rng + ?Sized>(b: usize, eps_switch: f64, rng: &mut R) -> Vec<(usize, usize)> {
    (0..b).map(|_| draw_via_heuristic(b, eps_switch, rng)).collect()
}

fn sort_pair(a: &Array2<f64>, c: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    (
        sort_by_measure(a, &trajectory_sums(a), SortDirection::Ascending),
        sort_by_measure(c, &trajectory_sums(c), SortDirection::Descending),
    )
}

/// Concatenates already-sorted rows for the given 1-based index pairs.
pub fn join_with_pairs(a_sorted: &Array2<f64>, c_sorted: &Array2<f64>, pairs: &[(usize, usize)]) -> Array2<f64> {
    let left: Vec<usize> = pairs.iter().map(|p| p.0 - 1).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1 - 1).collect();
    concatenate![Axis(1), a_sorted.select(Axis(0), &left), c_sorted.select(Axis(0), &right)]
}

/// Sorts `a` ascending and `c` descending by trajectory sum, then
/// concatenates heuristic pairs row by row.
pub fn join_trajectories<R: Rng + ?Sized>(
    a: &Array2<f64>,
    c: &Array2<f64>,
    eps_switch: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if a.nrows() != c.nrows() {
        return Err(Error::LengthMismatch {
            what: "joined groups (rows)",
            expected: a.nrows(),
            actual: c.nrows(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidParameter("cannot join empty groups".into()));
    }
    let (a, c) = sort_pair(a, c);
    Ok(join_with_pairs(&a, &c, &draw_pairs(a.nrows(), eps_switch, rng)))
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, variance: f64, rng: &mut R) -> Array2<f64> {
    let sd = variance.sqrt();
    Array2::from_shape_simple_fn((rows, cols), || sd * rng.sample::<f64, _>(StandardNormal))
}

fn check_sizes(b: usize, n: usize) -> Result<()> {
    if b == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!("batch size and horizon must be positive (B={b}, N={n})")));
    }
    Ok(())
}

/// Everything the adaptive two-degree-of-freedom generator produced, for
/// inspection.
#[derive(Clone, Debug)]
pub struct A2dfTrace {
    pub batch: TrainingBatch,
    pub group1_sorted: Array2<f64>,
    pub group2_sorted: Array2<f64>,
    pub pairs: Vec<(usize, usize)>,
}

pub fn generate_a2df_traced(b: usize, n: usize, h: &HeuristicParams, dt: f64, seed: u64) -> Result<A2dfTrace> {
    check_sizes(b, n)?;
    h.validate()?;
    let mut rng = rng_from_seed(seed);
    let g1 = gaussian(b, n, h.eps_draw_1, &mut rng);
    let g2 = gaussian(b, n, h.eps_draw_2, &mut rng);
    let (g1, g2) = sort_pair(&g1, &g2);
    let pairs = draw_pairs(b, h.eps_switch, &mut rng);
    let mut rows = Array2::zeros((b, n));
    let mut lifted = vec![0.0; n];
    for (mut row, &(b1, b2)) in rows.rows_mut().into_iter().zip(&pairs) {
        integrate_rates(g1.row(b1 - 1).as_slice().unwrap(), dt, &mut lifted);
        for ((o, l), d) in row.iter_mut().zip(&lifted).zip(g2.row(b2 - 1)) {
            *o = l + d;
        }
    }
    Ok(A2dfTrace {
        batch: TrainingBatch {
            rows,
            provenance: Provenance::A2df,
            seed,
            params: *h,
        },
        group1_sorted: g1,
        group2_sorted: g2,
        pairs,
    })
}

/// Adaptive two-degree-of-freedom training set: integrated group-1 rows plus
/// oppositely sorted group-2 rows.
pub fn generate_a2df(b: usize, n: usize, h: &HeuristicParams, dt: f64, seed: u64) -> Result<TrainingBatch> {
    generate_a2df_traced(b, n, h, dt, seed).map(|t| t.batch)
}

/// Adaptive input lifting training set (derivative level): four segments of
/// length `N/4` joined three times.
pub fn generate_ail(b: usize, n: usize, eps_draw: f64, eps_switch: f64, seed: u64) -> Result<TrainingBatch> {
    check_sizes(b, n)?;
    if n % 4 != 0 {
        return Err(Error::InvalidParameter(format!("horizon {n} is not divisible by 4")));
    }
    let params = HeuristicParams::single(eps_draw, eps_switch);
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let groups: Vec<Array2<f64>> = (0..4).map(|_| gaussian(b, n / 4, eps_draw, &mut rng)).collect();
    let mut joined = groups[0].clone();
    for g in &groups[1..] {
        joined = join_trajectories(&joined, g, eps_switch, &mut rng)?;
    }
    Ok(TrainingBatch {
        rows: joined,
        provenance: Provenance::Ail,
        seed,
        params,
    })
}
