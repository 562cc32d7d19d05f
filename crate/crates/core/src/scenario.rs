//! Driving scenarios: road, traffic and goal speed.
//!
//! Traffic vehicles follow the road at a fixed lateral offset and constant
//! speed. Positions along the road are arc lengths measured from the road
//! start.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::path::{LocalPath, Pose};

/// Road centre line, either as curvature pieces or explicit waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RoadSpec {
    Profile {
        start: Pose,
        /// Waypoint spacing [m].
        spacing: f64,
        pieces: Vec<RoadPiece>,
    },
    Waypoints {
        points: Vec<[f64; 2]>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadPiece {
    /// [m]
    pub length: f64,
    /// [1/m], positive turns left
    pub curvature: f64,
}

impl RoadSpec {
    pub fn build(&self) -> Result<LocalPath> {
        match self {
            RoadSpec::Profile { start, spacing, pieces } => {
                let p: Vec<(f64, f64)> = pieces.iter().map(|p| (p.length, p.curvature)).collect();
                LocalPath::from_curvature_profile(*start, &p, *spacing)
            }
            RoadSpec::Waypoints { points } => LocalPath::new(points.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficVehicle {
    /// Initial position along the road [m].
    pub arc: f64,
    /// Lateral offset from the road centre line, left positive [m].
    pub lane_offset: f64,
    /// [m/s], 0 for parked vehicles.
    pub speed: f64,
}

impl TrafficVehicle {
    pub fn parked(arc: f64, lane_offset: f64) -> Self {
        Self {
            arc,
            lane_offset,
            speed: 0.0,
        }
    }

    pub fn pose_at(&self, road: &LocalPath, t: f64) -> Pose {
        road.offset_pose_at(self.arc + self.speed * t, self.lane_offset)
    }
}

/// Predicted poses at `t0 + i * dt` for `i = 1..=n`, aligned with the
/// planned states `x_1 .. x_n`.
pub fn traffic_trajectory(v: &TrafficVehicle, road: &LocalPath, t0: f64, n: usize, dt: f64) -> Vec<Pose> {
    (1..=n).map(|i| v.pose_at(road, t0 + i as f64 * dt)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioFamily {
    Static,
    Dynamic,
    Custom,
}

/// Serialized form of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub family: ScenarioFamily,
    pub variant: u8,
    /// Desired speed [m/s].
    pub v_des: f64,
    /// Simulated duration [s].
    pub t_end: f64,
    /// Nominal driving distance the traffic layout is designed for [m].
    pub total_distance: f64,
    pub x0: VehicleState,
    pub road: RoadSpec,
    #[serde(default)]
    pub traffic: Vec<TrafficVehicle>,
}

/// A validated scenario with its road built.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub road: LocalPath,
}

impl Scenario {
    pub fn from_spec(spec: ScenarioSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("scenario {}: {m}", spec.name)));
        if !(spec.t_end > 0.0 && spec.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", spec.t_end));
        }
        if !(spec.v_des >= 0.0 && spec.v_des.is_finite()) {
            return bad(format!("v_des must be >= 0, got {}", spec.v_des));
        }
        if !spec.x0.is_finite() {
            return bad("initial state is not finite".into());
        }
        if let Some(v) = spec.traffic.iter().find(|v| !(v.speed >= 0.0) || !v.arc.is_finite() || !v.lane_offset.is_finite()) {
            return bad(format!("invalid traffic vehicle {v:?}"));
        }
        let road = spec.road.build()?;
        if road.length() < spec.total_distance {
            return bad(format!(
                "road is {:.1} m long, shorter than the driving distance {:.1} m",
                road.length(),
                spec.total_distance
            ));
        }
        Ok(Self { spec, road })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn v_des(&self) -> f64 {
        self.spec.v_des
    }

    pub fn t_end(&self) -> f64 {
        self.spec.t_end
    }

    pub fn x0(&self) -> VehicleState {
        self.spec.x0
    }

    pub fn traffic(&self) -> &[TrafficVehicle] {
        &self.spec.traffic
    }

    /// Traffic predictions for a planning step starting at `t0`.
    pub fn traffic_prediction(&self, t0: f64, n: usize, dt: f64) -> Vec<Vec<Pose>> {
        self.spec
            .traffic
            .iter()
            .map(|v| traffic_trajectory(v, &self.road, t0, n, dt))
            .collect()
    }

    pub fn traffic_poses_at(&self, t: f64) -> Vec<Pose> {
        self.spec.traffic.iter().map(|v| v.pose_at(&self.road, t)).collect()
    }

    /// Built-in scenario by id, e.g. `static:1` or `dynamic:3`.
    pub fn builtin(id: &str) -> Result<Self> {
        let (family, variant) = id
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("scenario id {id:?} is not of the form family:variant")))?;
        let variant: u8 = variant
            .parse()
            .map_err(|_| Error::Parse(format!("bad variant in scenario id {id:?}")))?;
        match family {
            "static" => build_static_scenario(variant),
            "dynamic" => build_dynamic_scenario(variant),
            _ => Err(Error::Parse(format!("unknown scenario family {family:?} (static or dynamic)"))),
        }
    }

    /// Loads a scenario file, or a built-in when `arg` names one.
    pub fn resolve(arg: &str) -> Result<Self> {
        if arg.starts_with("static:") || arg.starts_with("dynamic:") {
            Self::builtin(arg)
        } else {
            load_scenario(Path::new(arg))
        }
    }
}

fn road(length: f64) -> RoadSpec {
    // two gentle curves, then straight to the end
    let pieces = vec![
        RoadPiece { length: 40.0, curvature: 0.0 },
        RoadPiece { length: 60.0, curvature: 1.0 / 150.0 },
        RoadPiece { length: 50.0, curvature: 0.0 },
        RoadPiece { length: 70.0, curvature: -1.0 / 120.0 },
        RoadPiece { length: (length - 220.0).max(0.0), curvature: 0.0 },
    ];
    RoadSpec::Profile {
        start: Pose::default(),
        spacing: 2.0,
        pieces,
    }
}

/// Road length covering the drive, the planning horizon and traffic motion.
const ROAD_LENGTH: f64 = 500.0;

/// Four parked vehicles alternating left and right of the path.
pub fn build_static_scenario(variant: u8) -> Result<Scenario> {
    let (v_des, t_end) = match variant {
        1 => (6.0, 45.0),
        2 => (8.0, 35.0),
        3 => (10.0, 28.0),
        _ => return Err(Error::InvalidParameter(format!("static variant must be 1, 2 or 3, got {variant}"))),
    };
    let traffic = vec![
        TrafficVehicle::parked(45.0, 1.5),
        TrafficVehicle::parked(95.0, -1.5),
        TrafficVehicle::parked(145.0, 1.5),
        TrafficVehicle::parked(195.0, -1.5),
    ];
    Scenario::from_spec(ScenarioSpec {
        name: format!("static:{variant}"),
        family: ScenarioFamily::Static,
        variant,
        v_des,
        t_end,
        total_distance: 250.0,
        x0: VehicleState::default(),
        road: road(ROAD_LENGTH),
        traffic,
    })
}

/// Two slower vehicles ahead, one on each side of the path.
pub fn build_dynamic_scenario(variant: u8) -> Result<Scenario> {
    let (v_des, speeds, t_end) = match variant {
        1 => (8.0, [4.0, 5.0], 30.0),
        2 => (10.0, [4.0, 5.0], 18.0),
        3 => (10.0, [5.0, 6.0], 18.0),
        _ => return Err(Error::InvalidParameter(format!("dynamic variant must be 1, 2 or 3, got {variant}"))),
    };
    let traffic = vec![
        TrafficVehicle {
            arc: 25.0,
            lane_offset: 1.2,
            speed: speeds[0],
        },
        TrafficVehicle {
            arc: 55.0,
            lane_offset: -1.2,
            speed: speeds[1],
        },
    ];
    Scenario::from_spec(ScenarioSpec {
        name: format!("dynamic:{variant}"),
        family: ScenarioFamily::Dynamic,
        variant,
        v_des,
        t_end,
        total_distance: 130.0,
        x0: VehicleState::default(),
        road: road(ROAD_LENGTH),
        traffic,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Scenario::from_spec(spec)
}

pub fn scenario_to_toml(s: &Scenario) -> Result<String> {
    toml::to_string_pretty(&s.spec).map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_toml(s)?).map_err(|e| Error::io(path, e))
}
