//! Kinematic single-track vehicle model, explicit Euler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position east [m].
    pub s_x: f64,
    /// Position north [m].
    pub s_y: f64,
    /// Steering angle [rad].
    pub delta: f64,
    /// Longitudinal speed [m/s].
    pub v: f64,
    /// Heading [rad].
    pub psi: f64,
}

impl VehicleState {
    pub fn new(s_x: f64, s_y: f64, delta: f64, v: f64, psi: f64) -> Self {
        Self {
            s_x,
            s_y,
            delta,
            v,
            psi,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.s_x.is_finite()
            && self.s_y.is_finite()
            && self.delta.is_finite()
            && self.v.is_finite()
            && self.psi.is_finite()
    }

    pub fn position(&self) -> [f64; 2] {
        [self.s_x, self.s_y]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Steering rate [rad/s].
    pub v_delta: f64,
    /// Longitudinal acceleration [m/s^2].
    pub a: f64,
}

impl ControlInput {
    pub fn new(v_delta: f64, a: f64) -> Self {
        Self { v_delta, a }
    }

    pub fn is_finite(&self) -> bool {
        self.v_delta.is_finite() && self.a.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub wheelbase: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            dt: 0.1,
            delta_max: None,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wheelbase must be positive, got {}",
                self.wheelbase
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if let Some(m) = self.delta_max {
            if !(m > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "delta_max must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// Two-channel input sequence stored channel-major: `[steer_rate, accel]`.
///
/// Also used for noise trajectories, which have the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputTrajectory {
    pub channels: [Vec<f64>; 2],
}

pub type NoiseTrajectory = InputTrajectory;

impl InputTrajectory {
    pub fn zeros(n: usize) -> Self {
        Self {
            channels: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_channels(steer_rate: Vec<f64>, accel: Vec<f64>) -> Result<Self> {
        if steer_rate.len() != accel.len() {
            return Err(Error::LengthMismatch {
                what: "input channels",
                expected: steer_rate.len(),
                actual: accel.len(),
            });
        }
        Ok(Self {
            channels: [steer_rate, accel],
        })
    }

    pub fn from_inputs(inputs: &[ControlInput]) -> Self {
        Self {
            channels: [
                inputs.iter().map(|u| u.v_delta).collect(),
                inputs.iter().map(|u| u.a).collect(),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> ControlInput {
        ControlInput::new(self.channels[0][i], self.channels[1][i])
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().flatten().all(|x| x.is_finite())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &InputTrajectory) -> InputTrajectory {
        let ch = |c: usize| -> Vec<f64> {
            self.channels[c]
                .iter()
                .zip(&other.channels[c])
                .map(|(a, b)| a + b)
                .collect()
        };
        InputTrajectory {
            channels: [ch(0), ch(1)],
        }
    }
}

/// One explicit Euler step of the kinematic single-track model.
pub fn step(x: &VehicleState, u: &ControlInput, p: &ModelParams) -> Result<VehicleState> {
    if !x.is_finite() {
        return Err(Error::NonFinite { what: "vehicle state" });
    }
    if !u.is_finite() {
        return Err(Error::NonFinite { what: "control input" });
    }
    Ok(step_unchecked(x, u, p))
}

#[inline]
pub(crate) fn step_unchecked(x: &VehicleState, u: &ControlInput, p: &ModelParams) -> VehicleState {
    let dt = p.dt;
    let mut delta = x.delta + u.v_delta * dt;
    if let Some(m) = p.delta_max {
        delta = delta.clamp(-m, m);
    }
    VehicleState {
        s_x: x.s_x + x.v * x.psi.cos() * dt,
        s_y: x.s_y + x.v * x.psi.sin() * dt,
        delta,
        v: x.v + u.a * dt,
        psi: x.psi + x.v / p.wheelbase * x.delta.tan() * dt,
    }
}

/// Integrates `inputs` from `x0`, returning `x_1 .. x_N`.
pub fn rollout(
    x0: &VehicleState,
    inputs: &InputTrajectory,
    horizon: usize,
    p: &ModelParams,
) -> Result<Vec<VehicleState>> {
    if inputs.len() != horizon {
        return Err(Error::LengthMismatch {
            what: "input trajectory",
            expected: horizon,
            actual: inputs.len(),
        });
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite { what: "initial state" });
    }
    if !inputs.is_finite() {
        return Err(Error::NonFinite { what: "input trajectory" });
    }
    let mut out = Vec::with_capacity(horizon);
    rollout_into(x0, inputs, p, &mut out);
    Ok(out)
}

/// Allocation-free rollout for the sampling hot path; no validation.
pub(crate) fn rollout_into(
    x0: &VehicleState,
    inputs: &InputTrajectory,
    p: &ModelParams,
    out: &mut Vec<VehicleState>,
) {
    out.clear();
    let mut x = *x0;
    for i in 0..inputs.len() {
        x = step_unchecked(&x, &inputs.get(i), p);
        out.push(x);
    }
}

/// The inputs the model actually applies along `inputs`: wherever the
/// steering clamp cuts a step short, the steering rate is replaced by the
/// rate that lands exactly on the limit. Identity without a clamp.
pub fn realized_inputs(x0: &VehicleState, inputs: &InputTrajectory, p: &ModelParams) -> InputTrajectory {
    let mut out = inputs.clone();
    let Some(m) = p.delta_max else {
        return out;
    };
    let mut delta = x0.delta;
    for rate in out.channels[0].iter_mut() {
        let free = delta + *rate * p.dt;
        let next = free.clamp(-m, m);
        if next != free {
            *rate = (next - delta) / p.dt;
        }
        delta = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn realized_inputs_respect_the_clamp() {
        let u = InputTrajectory::from_channels(vec![1.0, 3.0, 3.0, -2.0], vec![0.0; 4]).unwrap();
        assert_eq!(realized_inputs(&VehicleState::default(), &u, &params()), u);
        let p = ModelParams {
            delta_max: Some(0.35),
            ..params()
        };
        let r = realized_inputs(&VehicleState::default(), &u, &p);
        let expect = [1.0, 2.5, 0.0, -2.0];
        for (a, b) in r.channels[0].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let xs = rollout(&VehicleState::default(), &u, 4, &p).unwrap();
        let xr = rollout(&VehicleState::default(), &r, 4, &p).unwrap();
        for (a, b) in xs.iter().zip(&xr) {
            assert!((a.delta - b.delta).abs() < 1e-12);
        }
    }

    #[test]
    fn accelerating_from_rest() {
        let x = step(&VehicleState::default(), &ControlInput::new(0.0, 1.0), &params()).unwrap();
        assert_eq!(x.v, 0.1);
        assert_eq!((x.s_x, x.s_y, x.delta, x.psi), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn straight_motion() {
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let x = step(&x0, &ControlInput::default(), &params()).unwrap();
        assert_eq!(x.s_x, 0.1);
        assert_eq!((x.s_y, x.delta, x.v, x.psi), (0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn yaw_rate_from_steering() {
        // 0.5 * tan(0.1) / 2.7 evaluated with a 30-term Taylor series of sin/cos.
        fn tan_series(x: f64) -> f64 {
            let (mut s, mut c) = (0.0, 0.0);
            let (mut ts, mut tc) = (x, 1.0);
            for k in 0..30 {
                s += ts;
                c += tc;
                let k = k as f64;
                ts *= -x * x / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
                tc *= -x * x / ((2.0 * k + 1.0) * (2.0 * k + 2.0));
            }
            s / c
        }
        let expected = 0.5 * tan_series(0.1) / 2.7;
        assert!((expected - 0.018_580_494_830_639).abs() < 1e-15);
        let x0 = VehicleState::new(0.0, 0.0, 0.1, 5.0, 0.0);
        let x = step(&x0, &ControlInput::default(), &params()).unwrap();
        assert!((x.psi - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        let bad = VehicleState::new(f64::NAN, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            step(&bad, &ControlInput::default(), &params()),
            Err(Error::NonFinite { .. })
        ));
        assert!(step(
            &VehicleState::default(),
            &ControlInput::new(f64::INFINITY, 0.0),
            &params()
        )
        .is_err());
    }

    #[test]
    fn rollout_single_step_and_rest() {
        let x0 = VehicleState::new(1.0, 2.0, 0.05, 3.0, 0.3);
        let u = InputTrajectory::from_inputs(&[ControlInput::new(0.2, -0.5)]);
        let traj = rollout(&x0, &u, 1, &params()).unwrap();
        assert_eq!(traj, vec![step(&x0, &u.get(0), &params()).unwrap()]);

        let rest = rollout(&VehicleState::default(), &InputTrajectory::zeros(80), 80, &params())
            .unwrap();
        assert!(rest.iter().all(|x| *x == VehicleState::default()));
    }

    #[test]
    fn rollout_constant_acceleration() {
        let u = InputTrajectory::from_channels(vec![0.0; 80], vec![1.0; 80]).unwrap();
        let traj = rollout(&VehicleState::default(), &u, 80, &params()).unwrap();
        assert!((traj[79].v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rollout_length_mismatch() {
        let err = rollout(&VehicleState::default(), &InputTrajectory::zeros(5), 6, &params());
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn steering_clamp() {
        let p = ModelParams {
            delta_max: Some(0.2),
            ..params()
        };
        let x = step(&VehicleState::default(), &ControlInput::new(10.0, 0.0), &p).unwrap();
        assert_eq!(x.delta, 0.2);
    }

    #[test]
    fn invalid_params() {
        assert!(ModelParams { wheelbase: 0.0, ..params() }.validate().is_err());
        assert!(ModelParams { dt: -0.1, ..params() }.validate().is_err());
        assert!(params().validate().is_ok());
    }

    fn arb_state() -> impl Strategy<Value = VehicleState> {
        (-50.0..50.0, -50.0..50.0, -0.4..0.4, -5.0..15.0, -3.0..3.0)
            .prop_map(|(a, b, c, d, e)| VehicleState::new(a, b, c, d, e))
    }

    fn arb_inputs(n: usize) -> impl Strategy<Value = InputTrajectory> {
        (
            prop::collection::vec(-0.5..0.5, n),
            prop::collection::vec(-3.0..3.0, n),
        )
            .prop_map(|(a, b)| InputTrajectory::from_channels(a, b).unwrap())
    }

    proptest! {
        #[test]
        fn rollout_is_composition_of_steps(x0 in arb_state(), u in arb_inputs(20)) {
            let traj = rollout(&x0, &u, 20, &params()).unwrap();
            let mut x = x0;
            for i in 0..20 {
                x = step(&x, &u.get(i), &params()).unwrap();
                prop_assert_eq!(x, traj[i]);
            }
        }

        #[test]
        fn zero_steering_keeps_heading(x0 in arb_state(), accel in prop::collection::vec(-3.0..3.0f64, 30)) {
            let x0 = VehicleState { delta: 0.0, ..x0 };
            let u = InputTrajectory::from_channels(vec![0.0; 30], accel).unwrap();
            let traj = rollout(&x0, &u, 30, &params()).unwrap();
            for x in &traj {
                prop_assert_eq!(x.psi.to_bits(), x0.psi.to_bits());
            }
        }

        #[test]
        fn speed_is_sum_of_accelerations(x0 in arb_state(), u in arb_inputs(80)) {
            let traj = rollout(&x0, &u, 80, &params()).unwrap();
            let expected = x0.v + 0.1 * u.channels[1].iter().sum::<f64>();
            let got = traj[79].v;
            prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }
}
