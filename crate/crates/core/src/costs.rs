//! The five-term trajectory cost `S(X, U) = sum_i alpha_i * c_i`.
//!
//! | term | meaning |
//! |------|---------|
//! | c1 | squared deviation from the desired speed |
//! | c2 | distance of the final point from the desired end position |
//! | c3 | squared step-to-step input differences |
//! | c4 | squared lateral offset from the local path |
//! | c5 | inverse squared ellipsoidal distance to traffic |

use serde::{Deserialize, Serialize};

use crate::dynamics::{InputTrajectory, VehicleState};
use crate::error::{Error, Result};
use crate::path::{LocalPath, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostWeights {
    pub alpha: [f64; 5],
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            alpha: [0.5, 10.0, 0.06, 1.0, 4.5],
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cost weights must be finite and non-negative: {:?}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseParams {
    /// Longitudinal semi-axis [m].
    pub a_e: f64,
    /// Lateral semi-axis [m].
    pub b_e: f64,
    /// Lower bound applied to the scaled distance before inversion.
    pub d_floor: f64,
}

impl Default for EllipseParams {
    fn default() -> Self {
        Self {
            a_e: 6.0,
            b_e: 2.0,
            d_floor: 1e-3,
        }
    }
}

impl EllipseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_e > 0.0 && self.b_e > 0.0 && self.d_floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ellipse parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Scaled ellipsoidal distance of a traffic-frame offset.
    #[inline]
    pub fn scaled_distance(&self, offset: (f64, f64)) -> f64 {
        let (dx, dy) = offset;
        (dx / self.a_e).powi(2) + (dy / self.b_e).powi(2)
    }
}

/// Per-term costs, unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terms: [f64; 5],
    /// Weighted total `alpha . terms`.
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(terms: [f64; 5], weights: &CostWeights) -> Self {
        let total = terms.iter().zip(&weights.alpha).map(|(c, a)| a * c).sum();
        Self { terms, total }
    }

    pub fn weighted(&self, weights: &CostWeights) -> [f64; 5] {
        let mut w = self.terms;
        for (c, a) in w.iter_mut().zip(&weights.alpha) {
            *c *= a;
        }
        w
    }
}

/// Everything the cost needs beyond the trajectory itself.
#[derive(Clone, Debug)]
pub struct CostContext {
    pub path: LocalPath,
    pub v_des: f64,
    pub goal: [f64; 2],
    /// One predicted pose per horizon step for every traffic vehicle.
    pub traffic: Vec<Vec<Pose>>,
    pub ellipse: EllipseParams,
    pub weights: CostWeights,
}

/// c1: `sum_i (v_i - v_des)^2`.
pub fn velocity_cost(states: &[VehicleState], v_des: f64) -> f64 {
    states.iter().map(|x| (x.v - v_des).powi(2)).sum()
}

/// c2: Euclidean distance of the last point from `goal`.
pub fn terminal_cost(states: &[VehicleState], goal: [f64; 2]) -> f64 {
    match states.last() {
        Some(x) => (x.s_x - goal[0]).hypot(x.s_y - goal[1]),
        None => 0.0,
    }
}

/// c3: squared first differences of both input channels.
pub fn smoothness_cost(inputs: &InputTrajectory) -> f64 {
    inputs
        .channels
        .iter()
        .map(|ch| ch.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>())
        .sum()
}

/// c4: `sum_i tau_i^2` with `tau` the signed lateral offset to `path`.
pub fn path_cost(states: &[VehicleState], path: &LocalPath) -> f64 {
    states
        .iter()
        .map(|x| path.project(x.position()).offset.powi(2))
        .sum()
}

/// World-frame difference `ego - traffic` rotated into the traffic frame.
#[inline]
pub fn traffic_frame_offset(ego: [f64; 2], traffic: &Pose) -> (f64, f64) {
    let (dx, dy) = (ego[0] - traffic.s_x, ego[1] - traffic.s_y);
    let (s, c) = traffic.psi.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// c5: `sum_i sum_vehicles 1 / max(d_e, d_floor)^2`.
///
/// Each traffic trajectory is indexed like `states`; shorter ones contribute
/// only for the steps they cover.
pub fn traffic_cost(states: &[VehicleState], traffic: &[Vec<Pose>], e: &EllipseParams) -> f64 {
    let mut total = 0.0;
    for poses in traffic {
        for (x, pose) in states.iter().zip(poses) {
            let d = e.scaled_distance(traffic_frame_offset(x.position(), pose));
            total += 1.0 / d.max(e.d_floor).powi(2);
        }
    }
    total
}

/// Smallest scaled distance between the trajectory and any traffic vehicle.
pub fn min_scaled_distance(states: &[VehicleState], traffic: &[Vec<Pose>], e: &EllipseParams) -> f64 {
    traffic
        .iter()
        .flat_map(|poses| {
            states
                .iter()
                .zip(poses)
                .map(|(x, p)| e.scaled_distance(traffic_frame_offset(x.position(), p)))
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn total_cost(states: &[VehicleState], inputs: &InputTrajectory, ctx: &CostContext) -> CostBreakdown {
    let terms = [
        velocity_cost(states, ctx.v_des),
        terminal_cost(states, ctx.goal),
        smoothness_cost(inputs),
        path_cost(states, &ctx.path),
        traffic_cost(states, &ctx.traffic, &ctx.ellipse),
    ];
    CostBreakdown::new(terms, &ctx.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn at(x: f64, y: f64, v: f64) -> VehicleState {
        VehicleState::new(x, y, 0.0, v, 0.0)
    }

    #[test]
    fn velocity_cost_cases() {
        assert_eq!(velocity_cost(&vec![at(0.0, 0.0, 6.0); 80], 6.0), 0.0);
        assert_eq!(velocity_cost(&vec![at(0.0, 0.0, 0.0); 80], 6.0), 2880.0);
        // ramp v_i = 0.1 i, i = 1..=80, v_des = 4
        let ramp: Vec<_> = (1..=80).map(|i| at(0.0, 0.0, 0.1 * i as f64)).collect();
        let mut oracle = 0.0;
        for i in 1..=80 {
            let d = 0.1 * i as f64 - 4.0;
            oracle += d * d;
        }
        assert!((velocity_cost(&ramp, 4.0) - oracle).abs() < 1e-9);
    }

    #[test]
    fn terminal_cost_cases() {
        let traj = vec![at(0.0, 0.0, 0.0), at(3.0, 4.0, 0.0)];
        assert_eq!(terminal_cost(&traj, [3.0, 4.0]), 0.0);
        assert_eq!(terminal_cost(&traj, [0.0, 0.0]), 5.0);
        let traj = vec![at(1.25, -7.5, 0.0)];
        let oracle = ((1.25f64 - 2.0).powi(2) + (-7.5f64 - 1.0).powi(2)).sqrt();
        assert!((terminal_cost(&traj, [2.0, 1.0]) - oracle).abs() < 1e-14);
    }

    #[test]
    fn smoothness_cost_cases() {
        let c = InputTrajectory::from_channels(vec![0.3; 80], vec![-1.0; 80]).unwrap();
        assert_eq!(smoothness_cost(&c), 0.0);
        let alt: Vec<f64> = (0..80).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let u = InputTrajectory::from_channels(vec![0.0; 80], alt).unwrap();
        assert_eq!(smoothness_cost(&u), 316.0);
    }

    #[test]
    fn path_cost_cases() {
        let path = LocalPath::new(vec![[-10.0, 0.0], [200.0, 0.0]]).unwrap();
        let on: Vec<_> = (0..80).map(|i| at(i as f64, 0.0, 0.0)).collect();
        assert!(path_cost(&on, &path) < 1e-20);
        let off: Vec<_> = (0..80).map(|i| at(i as f64, 1.0, 0.0)).collect();
        assert_eq!(path_cost(&off, &path), 80.0);
        let mixed: Vec<_> = (0..10).map(|i| at(i as f64, 0.5 * i as f64 - 2.0, 0.0)).collect();
        let oracle: f64 = (0..10).map(|i| (0.5 * i as f64 - 2.0).powi(2)).sum();
        assert!((path_cost(&mixed, &path) - oracle).abs() < 1e-12);
    }

    #[test]
    fn traffic_frame_cases() {
        let pose = Pose::new(3.0, -2.0, 0.7);
        assert_eq!(traffic_frame_offset([3.0, -2.0], &pose), (0.0, 0.0));
        assert_eq!(
            traffic_frame_offset([5.0, 1.0], &Pose::new(1.0, 1.5, 0.0)),
            (4.0, -0.5)
        );
        let (dx, dy) = traffic_frame_offset([1.0, 0.0], &Pose::new(0.0, 0.0, FRAC_PI_2));
        assert!(dx.abs() < 1e-15 && (dy + 1.0).abs() < 1e-15);
    }

    #[test]
    fn traffic_cost_cases() {
        let e = EllipseParams::default();
        let tfc = vec![vec![Pose::new(0.0, 0.0, 0.0)]];
        assert_eq!(traffic_cost(&[at(6.0, 0.0, 0.0)], &tfc, &e), 1.0);
        assert_eq!(traffic_cost(&[at(0.0, 2.0, 0.0)], &tfc, &e), 1.0);
        assert!(traffic_cost(&[at(1e9, 0.0, 0.0)], &tfc, &e) < 1e-30);
        // coincident: floored
        assert_eq!(traffic_cost(&[at(0.0, 0.0, 0.0)], &tfc, &e), 1e6);
        // two vehicles sum
        let two = vec![tfc[0].clone(), vec![Pose::new(12.0, 0.0, 0.0)]];
        assert_eq!(traffic_cost(&[at(6.0, 0.0, 0.0)], &two, &e), 2.0);
    }

    #[test]
    fn total_cost_cases() {
        let w = CostWeights::default();
        assert_eq!(CostBreakdown::new([0.0; 5], &w).total, 0.0);
        assert_eq!(CostBreakdown::new([0.0, 5.0, 0.0, 0.0, 0.0], &w).total, 50.0);
    }

    #[test]
    fn total_cost_matches_independent_recomputation() {
        let path = LocalPath::new(vec![[0.0, 0.0], [50.0, 0.0], [90.0, 20.0]]).unwrap();
        let states: Vec<_> = (1..=40)
            .map(|i| VehicleState::new(2.0 * i as f64, 0.1 * i as f64, 0.0, 4.0 + 0.05 * i as f64, 0.0))
            .collect();
        let u = InputTrajectory::from_channels(
            (0..40).map(|i| (i as f64 * 0.3).sin()).collect(),
            (0..40).map(|i| (i as f64 * 0.2).cos()).collect(),
        )
        .unwrap();
        let traffic = vec![(0..40).map(|i| Pose::new(30.0 + 0.4 * i as f64, 1.0, 0.1)).collect::<Vec<_>>()];
        let ctx = CostContext {
            path: path.clone(),
            v_des: 6.0,
            goal: [80.0, 10.0],
            traffic: traffic.clone(),
            ellipse: EllipseParams::default(),
            weights: CostWeights::default(),
        };
        let got = total_cost(&states, &u, &ctx);

        // independent evaluation straight from the definitions
        let mut c = [0.0f64; 5];
        for x in &states {
            c[0] += (x.v - 6.0) * (x.v - 6.0);
        }
        let last = states.last().unwrap();
        c[1] = ((last.s_x - 80.0).powi(2) + (last.s_y - 10.0).powi(2)).sqrt();
        for ch in &u.channels {
            for i in 0..39 {
                c[2] += (ch[i + 1] - ch[i]).powi(2);
            }
        }
        for x in &states {
            // closest point by dense sampling of both segments
            let mut best = f64::INFINITY;
            for k in 0..=200_000 {
                let t = k as f64 / 200_000.0;
                let (px, py) = if t < 0.5 {
                    (100.0 * t, 0.0)
                } else {
                    (50.0 + 80.0 * (t - 0.5), 40.0 * (t - 0.5))
                };
                best = best.min((x.s_x - px).hypot(x.s_y - py));
            }
            c[3] += best * best;
        }
        for (x, p) in states.iter().zip(&traffic[0]) {
            let (dx, dy) = (x.s_x - p.s_x, x.s_y - p.s_y);
            let lx = p.psi.cos() * dx + p.psi.sin() * dy;
            let ly = -p.psi.sin() * dx + p.psi.cos() * dy;
            let d = (lx / 6.0).powi(2) + (ly / 2.0).powi(2);
            c[4] += 1.0 / d.max(1e-3).powi(2);
        }
        for i in [0, 1, 2, 4] {
            assert!((got.terms[i] - c[i]).abs() <= 1e-9 * c[i].max(1.0), "term {i}");
        }
        assert!((got.terms[3] - c[3]).abs() < 1e-2, "{} vs {}", got.terms[3], c[3]);
        let s: f64 = got.terms.iter().zip(&ctx.weights.alpha).map(|(a, b)| a * b).sum();
        assert!((got.total - s).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn smoothness_is_translation_invariant(
            a in prop::collection::vec(-2.0..2.0f64, 2..40),
            shift in -5.0..5.0f64,
        ) {
            let n = a.len();
            let b: Vec<f64> = a.iter().map(|x| x * 0.5).collect();
            let u = InputTrajectory::from_channels(a.clone(), b.clone()).unwrap();
            let shifted = InputTrajectory::from_channels(a.iter().map(|x| x + shift).collect(), b).unwrap();
            prop_assert_eq!(u.len(), n);
            let (c0, c1) = (smoothness_cost(&u), smoothness_cost(&shifted));
            prop_assert!((c0 - c1).abs() <= 1e-9 * c0.max(1.0));
        }

        #[test]
        fn traffic_cost_monotone_in_distance(dx in -20.0..20.0f64, dy in -6.0..6.0f64, scale in 1.0..4.0f64) {
            let e = EllipseParams::default();
            let tfc = vec![vec![Pose::new(0.0, 0.0, 0.3)]];
            let near = traffic_cost(&[at(dx, dy, 0.0)], &tfc, &e);
            let far = traffic_cost(&[at(dx * scale, dy * scale, 0.0)], &tfc, &e);
            prop_assert!(far <= near);
            prop_assert!(near >= 0.0);
        }

        #[test]
        fn all_terms_non_negative(
            xs in prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, -5.0..15.0f64), 1..30),
            gx in -30.0..30.0f64,
        ) {
            let states: Vec<_> = xs.iter().map(|&(x, y, v)| at(x, y, v)).collect();
            let n = states.len();
            let ctx = CostContext {
                path: LocalPath::new(vec![[-40.0, 0.0], [40.0, 5.0]]).unwrap(),
                v_des: 6.0,
                goal: [gx, 0.0],
                traffic: vec![vec![Pose::new(1.0, 1.0, 0.0); n]],
                ellipse: EllipseParams::default(),
                weights: CostWeights::default(),
            };
            let b = total_cost(&states, &InputTrajectory::zeros(n), &ctx);
            prop_assert!(b.terms.iter().all(|c| *c >= 0.0));
            prop_assert!(b.total >= 0.0);
        }
    }
}
