//! Polyline reference paths: projection, arc-length lookup, windowing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D pose: position plus heading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub s_x: f64,
    pub s_y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(s_x: f64, s_y: f64, psi: f64) -> Self {
        Self { s_x, s_y, psi }
    }
}

/// Result of projecting a point onto a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Signed lateral offset, positive to the left of the path direction.
    pub offset: f64,
    /// Arc length of the closest point.
    pub arc: f64,
    pub segment: usize,
    pub closest: [f64; 2],
}

/// Ordered waypoint polyline with cached arc lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathRepr", into = "PathRepr")]
pub struct LocalPath {
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PathRepr {
    waypoints: Vec<[f64; 2]>,
}

impl TryFrom<PathRepr> for LocalPath {
    type Error = Error;
    fn try_from(r: PathRepr) -> Result<Self> {
        LocalPath::new(r.waypoints)
    }
}

impl From<LocalPath> for PathRepr {
    fn from(p: LocalPath) -> Self {
        PathRepr { waypoints: p.points }
    }
}

impl LocalPath {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegeneratePath(format!(
                "need at least 2 waypoints, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::DegeneratePath("non-finite waypoint".into()));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if len == 0.0 {
                return Err(Error::DegeneratePath(format!(
                    "waypoints {i} and {} coincide",
                    i + 1
                )));
            }
            arc.push(arc[i] + len);
        }
        Ok(Self { points, arc })
    }

    /// Integrates a sequence of `(length, curvature)` pieces from a start pose,
    /// emitting a waypoint every `spacing` meters.
    pub fn from_curvature_profile(
        start: Pose,
        pieces: &[(f64, f64)],
        spacing: f64,
    ) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidParameter("waypoint spacing must be positive".into()));
        }
        let substeps = 20;
        let h = spacing / substeps as f64;
        let (mut x, mut y, mut psi) = (start.s_x, start.s_y, start.psi);
        let mut points = vec![[x, y]];
        for &(length, kappa) in pieces {
            let n = (length / spacing).round() as usize;
            for _ in 0..n {
                for _ in 0..substeps {
                    // midpoint heading keeps arcs accurate
                    let mid = psi + 0.5 * kappa * h;
                    x += h * mid.cos();
                    y += h * mid.sin();
                    psi += kappa * h;
                }
                points.push([x, y]);
            }
        }
        Self::new(points)
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn segment_heading(&self, seg: usize) -> f64 {
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Nearest point on the polyline (segments clamped at their ends).
    pub fn project(&self, p: [f64; 2]) -> Projection {
        let mut best_d2 = f64::INFINITY;
        let mut best = Projection {
            offset: 0.0,
            arc: 0.0,
            segment: 0,
            closest: self.points[0],
        };
        let mut best_cross = 0.0;
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let (px, py) = (p[0] - a[0], p[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
            let (ex, ey) = (p[0] - cx, p[1] - cy);
            let d2 = ex * ex + ey * ey;
            if d2 < best_d2 {
                best_d2 = d2;
                best_cross = dx * ey - dy * ex;
                best = Projection {
                    offset: 0.0,
                    arc: self.arc[i] + t * len2.sqrt(),
                    segment: i,
                    closest: [cx, cy],
                };
            }
        }
        let d = best_d2.sqrt();
        best.offset = if best_cross < 0.0 { -d } else { d };
        best
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let pose = self.pose_at(s);
        [pose.s_x, pose.s_y]
    }

    /// Pose at arc length `s` (clamped); heading is that of the containing segment.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let seg = match self.arc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let seg_len = self.arc[seg + 1] - self.arc[seg];
        let t = (s - self.arc[seg]) / seg_len;
        Pose::new(
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            self.segment_heading(seg),
        )
    }

    /// Point at arc length `s` shifted laterally by `offset` (left positive).
    pub fn offset_pose_at(&self, s: f64, offset: f64) -> Pose {
        let p = self.pose_at(s);
        Pose::new(
            p.s_x - offset * p.psi.sin(),
            p.s_y + offset * p.psi.cos(),
            p.psi,
        )
    }

    /// Sub-path between arc lengths `from` and `to` (clamped), with
    /// interpolated end points.
    pub fn window(&self, from: f64, to: f64) -> Result<LocalPath> {
        let from = from.clamp(0.0, self.length());
        let to = to.clamp(0.0, self.length());
        if to <= from {
            return Err(Error::DegeneratePath(format!("empty window [{from}, {to}]")));
        }
        let mut pts = vec![self.point_at(from)];
        for (p, &s) in self.points.iter().zip(&self.arc) {
            if s > from && s < to {
                let last = *pts.last().unwrap();
                if last != *p {
                    pts.push(*p);
                }
            }
        }
        let end = self.point_at(to);
        if *pts.last().unwrap() != end {
            pts.push(end);
        }
        LocalPath::new(pts)
    }
}

/// Signed lateral offset of `p` from `path`.
pub fn project_to_path(p: [f64; 2], path: &LocalPath) -> f64 {
    path.project(p).offset
}
