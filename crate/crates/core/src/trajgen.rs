//! Ground-truth poses and the timed waypoint paths that drive the simulator.
//!
//! A [`Trajectory`] is a list of timed waypoints joined by linear
//! interpolation in all four pose fields; [`resample`] turns it into the dense
//! [`TimedPoseSeries`] consumed by [`crate::sim::simulate`].

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_TILT_DEG: f64 = 15.0;

/// Waypoints laid down per spiral revolution.
pub const SPIRAL_WAYPOINTS_PER_TURN: usize = 64;

/// Sites whose cross-axis coordinates differ by less than this are visited as
/// one row of a vertical-compression grid.
pub const GRID_ROW_BAND_MM: f64 = 2.0;

const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("pose {pose:?} lies outside the workspace (z_max {z_max} mm, r_work {r_work} mm)")]
    OutOfWorkspace { pose: Pose, z_max: f64, r_work: f64 },
    #[error("depth {0} mm must be positive and within the workspace")]
    BadDepth(f64),
    #[error("offset {0} mm must be non-negative and within the workspace")]
    BadOffset(f64),
    #[error("unknown test profile {0}; expected 1..=7")]
    UnknownTest(u32),
    #[error("spiral needs at least one turn")]
    NonPositiveTurns,
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("vertical grid needs at least one site")]
    EmptySites,
    #[error("tilt {0} deg exceeds the +/-15 deg range")]
    TiltOutOfRange(f64),
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("trajectory needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoint times must start at 0 and strictly increase (index {0})")]
    BadTimes(usize),
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Bladder-top state. `z` is compression depth (0 = uncompressed), `tilt_y`
/// rotation of the top about the y-axis in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tilt_y: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose { x: 0.0, y: 0.0, z: 0.0, tilt_y: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Pose { x, y, z, tilt_y: 0.0 }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn lerp(&self, to: &Pose, s: f64) -> Pose {
        Pose {
            x: self.x + s * (to.x - self.x),
            y: self.y + s * (to.y - self.y),
            z: self.z + s * (to.z - self.z),
            tilt_y: self.tilt_y + s * (to.tilt_y - self.tilt_y),
        }
    }

    fn distance(&self, to: &Pose) -> f64 {
        ((to.x - self.x).powi(2) + (to.y - self.y).powi(2) + (to.z - self.z).powi(2)).sqrt()
    }
}

/// Reachable region of the bladder top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workspace {
    pub z_max: f64,
    pub r_work: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace { z_max: 25.0, r_work: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Lateral direction of a transit between two grid sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitAxis {
    X,
    Y,
    /// Equal lateral travel along both axes.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    label: String,
    waypoints: Vec<Waypoint>,
}

impl Trajectory {
    /// Builds a trajectory, checking that times start at 0 and strictly increase.
    pub fn new(label: impl Into<String>, waypoints: Vec<Waypoint>) -> Result<Self, TrajError> {
        if waypoints.len() < 2 {
            return Err(TrajError::TooFewWaypoints(waypoints.len()));
        }
        if waypoints[0].t != 0.0 {
            return Err(TrajError::BadTimes(0));
        }
        for (i, pair) in waypoints.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) || !pair[1].t.is_finite() {
                return Err(TrajError::BadTimes(i + 1));
            }
        }
        Ok(Trajectory { label: label.into(), waypoints })
    }

    /// Pairs poses with absolute waypoint times.
    fn from_segments(label: impl Into<String>, poses: &[Pose], times: &[f64]) -> Result<Self, TrajError> {
        let waypoints = poses
            .iter()
            .zip(times)
            .map(|(&pose, &t)| Waypoint { t, pose })
            .collect();
        Trajectory::new(label, waypoints)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    /// Pose at time `t`, clamped to the trajectory's time span.
    pub fn pose_at(&self, t: f64) -> Pose {
        let wps = &self.waypoints;
        if t <= wps[0].t {
            return wps[0].pose;
        }
        let last = wps[wps.len() - 1];
        if t >= last.t {
            return last.pose;
        }
        // segment k with t_k <= t < t_{k+1}
        let k = wps.partition_point(|w| w.t <= t) - 1;
        let (a, b) = (&wps[k], &wps[k + 1]);
        a.pose.lerp(&b.pose, (t - a.t) / (b.t - a.t))
    }

    pub fn check_workspace(&self, ws: &Workspace) -> Result<(), TrajError> {
        self.waypoints.iter().try_for_each(|w| ws.check(&w.pose))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TrajError> {
        let mut w = csv::Writer::from_writer(writer);
        for wp in &self.waypoints {
            w.serialize(TrajectoryRow::from(wp))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(label: impl Into<String>, reader: R) -> Result<Self, TrajError> {
        let mut r = csv::Reader::from_reader(reader);
        let waypoints = r
            .deserialize::<TrajectoryRow>()
            .map(|row| row.map(Waypoint::from))
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::new(label, waypoints)
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    time_s: f64,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    tilt_y_deg: f64,
}

impl From<&Waypoint> for TrajectoryRow {
    fn from(w: &Waypoint) -> Self {
        TrajectoryRow {
            time_s: w.t,
            x_mm: w.pose.x,
            y_mm: w.pose.y,
            z_mm: w.pose.z,
            tilt_y_deg: w.pose.tilt_y,
        }
    }
}

impl From<TrajectoryRow> for Waypoint {
    fn from(r: TrajectoryRow) -> Self {
        Waypoint {
            t: r.time_s,
            pose: Pose { x: r.x_mm, y: r.y_mm, z: r.z_mm, tilt_y: r.tilt_y_deg },
        }
    }
}

/// Dense, uniformly sampled pose sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPoseSeries {
    pub label: String,
    pub rate_hz: f64,
    pub poses: Vec<Pose>,
}

impl TimedPoseSeries {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.rate_hz
    }

    pub fn duration(&self) -> f64 {
        self.time(self.poses.len().saturating_sub(1))
    }

    /// Treats every sample as a waypoint.
    pub fn to_trajectory(&self) -> Result<Trajectory, TrajError> {
        let waypoints = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, &pose)| Waypoint { t: self.time(i), pose })
            .collect();
        Trajectory::new(self.label.clone(), waypoints)
    }
}

impl Workspace {
    pub fn contains(&self, p: &Pose) -> bool {
        p.z >= -BOUND_SLACK
            && p.z <= self.z_max + BOUND_SLACK
            && p.radius() <= self.r_work + BOUND_SLACK
            && p.tilt_y.abs() <= MAX_TILT_DEG
    }

    fn check(&self, p: &Pose) -> Result<(), TrajError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(TrajError::OutOfWorkspace { pose: *p, z_max: self.z_max, r_work: self.r_work })
        }
    }

    fn check_depth(&self, depth: f64) -> Result<(), TrajError> {
        if depth > 0.0 && depth <= self.z_max {
            Ok(())
        } else {
            Err(TrajError::BadDepth(depth))
        }
    }

    /// One of the seven evaluation profiles, including its mirrored release.
    ///
    /// | id | path |
    /// |----|------|
    /// | 1 | vertical compression at the centre |
    /// | 2, 3 | diagonal ramp to (+offset, 0) / (-offset, 0) at depth |
    /// | 4, 5 | diagonal ramp to (0, +offset) / (0, -offset) at depth |
    /// | 6, 7 | lateral move to (+offset, 0) / (0, +offset), then vertical compression |
    pub fn test_profile(&self, test_id: u32, depth: f64, offset: f64, duration: f64) -> Result<Trajectory, TrajError> {
        self.check_depth(depth)?;
        if !(0.0..=self.r_work + BOUND_SLACK).contains(&offset) {
            return Err(TrajError::BadOffset(offset));
        }
        if !(duration > 0.0) {
            return Err(TrajError::BadDuration(duration));
        }
        let o = Pose::ORIGIN;
        let label = format!("test{test_id}");
        let ramp = |x: f64, y: f64| {
            let poses = [o, Pose::new(x, y, depth), o];
            Trajectory::from_segments(label.clone(), &poses, &[0.0, duration / 2.0, duration])
        };
        let offset_then_press = |x: f64, y: f64| {
            let poses = [o, Pose::new(x, y, 0.0), Pose::new(x, y, depth), Pose::new(x, y, 0.0), o];
            let q = duration / 4.0;
            Trajectory::from_segments(label.clone(), &poses, &[0.0, q, 2.0 * q, 3.0 * q, duration])
        };
        match test_id {
            1 => ramp(0.0, 0.0),
            2 => ramp(offset, 0.0),
            3 => ramp(-offset, 0.0),
            4 => ramp(0.0, offset),
            5 => ramp(0.0, -offset),
            6 => offset_then_press(offset, 0.0),
            7 => offset_then_press(0.0, offset),
            other => Err(TrajError::UnknownTest(other)),
        }
    }

    /// Helical descent at constant radius `r_max` starting from `(r_max, 0, 0)`,
    /// reaching `depth` after `turns` revolutions at time `duration`, followed
    /// by a straight return to the origin at the same vertical speed.
    pub fn spiral(&self, r_max: f64, depth: f64, turns: u32, duration: f64) -> Result<Trajectory, TrajError> {
        if turns == 0 {
            return Err(TrajError::NonPositiveTurns);
        }
        self.check_depth(depth)?;
        if !(0.0..=self.r_work + BOUND_SLACK).contains(&r_max) {
            return Err(TrajError::BadOffset(r_max));
        }
        if !(duration > 0.0) {
            return Err(TrajError::BadDuration(duration));
        }
        let segments = turns as usize * SPIRAL_WAYPOINTS_PER_TURN;
        let mut waypoints = Vec::with_capacity(segments + 2);
        for k in 0..=segments {
            let s = k as f64 / segments as f64;
            let theta = 2.0 * PI * turns as f64 * s;
            waypoints.push(Waypoint {
                t: duration * s,
                pose: Pose::new(r_max * theta.cos(), r_max * theta.sin(), depth * s),
            });
        }
        waypoints.push(Waypoint { t: 2.0 * duration, pose: Pose::ORIGIN });
        Trajectory::new(format!("spiral-r{r_max}-t{turns}"), waypoints)
    }

    /// Series of vertical compressions at `sites`. Each compression descends
    /// vertically; the path then rises diagonally to the top of the next site.
    /// Sites are visited row by row (rows perpendicular to `return_axis`) in
    /// serpentine order so transits run predominantly along `return_axis`.
    /// Segment times are proportional to path length.
    pub fn vertical_grid(
        &self,
        sites: &[(f64, f64)],
        depth: f64,
        return_axis: Axis,
        duration: f64,
    ) -> Result<Trajectory, TrajError> {
        if sites.is_empty() {
            return Err(TrajError::EmptySites);
        }
        self.check_depth(depth)?;
        if !(duration > 0.0) {
            return Err(TrajError::BadDuration(duration));
        }
        for &(x, y) in sites {
            self.check(&Pose::new(x, y, 0.0))?;
        }
        let ordered = order_sites(sites, return_axis);
        // top0, bottom0, top1, bottom1, ..., bottom(n-1), top(n-1)
        let mut poses = Vec::with_capacity(2 * ordered.len() + 1);
        poses.push(Pose::new(ordered[0].0, ordered[0].1, 0.0));
        for (i, &(x, y)) in ordered.iter().enumerate() {
            poses.push(Pose::new(x, y, depth));
            let (nx, ny) = ordered.get(i + 1).copied().unwrap_or((x, y));
            poses.push(Pose::new(nx, ny, 0.0));
        }
        let lengths: Vec<f64> = poses.windows(2).map(|p| p[0].distance(&p[1])).collect();
        let total: f64 = lengths.iter().sum();
        let mut times = Vec::with_capacity(poses.len());
        let mut acc = 0.0;
        times.push(0.0);
        for (i, len) in lengths.iter().enumerate() {
            acc += len;
            times.push(if i + 1 == lengths.len() { duration } else { duration * acc / total });
        }
        let axis = match return_axis {
            Axis::X => "x",
            Axis::Y => "y",
        };
        Trajectory::from_segments(format!("grid-{axis}"), &poses, &times)
    }

    /// Default grid: the nine points of {-r, 0, r}^2 with corners pulled in to radius r.
    pub fn default_grid_sites(&self) -> Vec<(f64, f64)> {
        let r = self.r_work;
        let mut sites = Vec::with_capacity(9);
        for gy in [-1.0, 0.0, 1.0] {
            for gx in [-1.0, 0.0, 1.0] {
                let (x, y) = (gx * r, gy * r);
                let rad = f64::hypot(x, y);
                if rad > r {
                    sites.push((x * r / rad, y * r / rad));
                } else {
                    sites.push((x, y));
                }
            }
        }
        sites
    }
}

/// Visiting order used by [`Workspace::vertical_grid`].
pub fn order_sites(sites: &[(f64, f64)], return_axis: Axis) -> Vec<(f64, f64)> {
    let key = |s: &(f64, f64)| match return_axis {
        Axis::X => (s.1, s.0),
        Axis::Y => (s.0, s.1),
    };
    let mut sorted: Vec<(f64, f64)> = sites.to_vec();
    sorted.sort_by(|a, b| {
        let (ca, la) = key(a);
        let (cb, lb) = key(b);
        ca.total_cmp(&cb).then(la.total_cmp(&lb))
    });
    let mut rows: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut last_cross = f64::NEG_INFINITY;
    for s in sorted {
        let cross = key(&s).0;
        if rows.is_empty() || cross - last_cross > GRID_ROW_BAND_MM {
            rows.push(Vec::new());
        }
        last_cross = cross;
        rows.last_mut().expect("row pushed above").push(s);
    }
    let mut ordered = Vec::with_capacity(sites.len());
    for (i, mut row) in rows.into_iter().enumerate() {
        row.sort_by(|a, b| key(a).1.total_cmp(&key(b).1));
        if i % 2 == 1 {
            row.reverse();
        }
        ordered.extend(row);
    }
    ordered
}

/// Lateral orientation of every transit between consecutive sites of a grid.
pub fn grid_transits(sites: &[(f64, f64)], return_axis: Axis) -> Vec<TransitAxis> {
    order_sites(sites, return_axis)
        .windows(2)
        .map(|p| {
            let dx = (p[1].0 - p[0].0).abs();
            let dy = (p[1].1 - p[0].1).abs();
            if dx > dy {
                TransitAxis::X
            } else if dy > dx {
                TransitAxis::Y
            } else {
                TransitAxis::Diagonal
            }
        })
        .collect()
}

/// Copy of `traj` with every waypoint tilted by `angle` degrees about y.
pub fn apply_tilt(traj: &Trajectory, angle: f64) -> Result<Trajectory, TrajError> {
    if !(angle.abs() <= MAX_TILT_DEG) {
        return Err(TrajError::TiltOutOfRange(angle));
    }
    let waypoints = traj
        .waypoints
        .iter()
        .map(|w| Waypoint { t: w.t, pose: Pose { tilt_y: angle, ..w.pose } })
        .collect();
    let label = if angle == 0.0 { traj.label.clone() } else { format!("{}@tilt{angle}", traj.label) };
    Ok(Trajectory { label, waypoints })
}

/// Uniform resampling at `rate_hz`; yields `floor(duration * rate) + 1` poses.
pub fn resample(traj: &Trajectory, rate_hz: f64) -> Result<TimedPoseSeries, TrajError> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(TrajError::BadRate(rate_hz));
    }
    if traj.waypoints.len() < 2 {
        return Err(TrajError::TooFewWaypoints(traj.waypoints.len()));
    }
    // slack absorbs durations like 0.3 * 10 that land a hair below an integer
    let n = (traj.duration() * rate_hz + 1e-9).floor() as usize + 1;
    let wps = &traj.waypoints;
    let mut poses = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 / rate_hz;
        while k + 1 < wps.len() && wps[k + 1].t <= t {
            k += 1;
        }
        let pose = if k + 1 >= wps.len() {
            wps[wps.len() - 1].pose
        } else {
            let (a, b) = (&wps[k], &wps[k + 1]);
            a.pose.lerp(&b.pose, (t - a.t) / (b.t - a.t))
        };
        poses.push(pose);
    }
    Ok(TimedPoseSeries { label: traj.label.clone(), rate_hz, poses })
}
