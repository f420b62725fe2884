//! Square waypoint mission with dwell-based acceptance and per-leg timeouts.

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MissionPlan {
    pub center: Vector3<f64>,
    /// m
    pub side: f64,
    pub waypoints: Vec<Vector3<f64>>,
    /// m
    pub accept_radius: f64,
    /// s
    pub dwell: f64,
    /// s, per leg
    pub timeout: f64,
}

/// Center, the four corners counterclockwise (seen from above) from
/// front-right, then center again.
pub fn square_mission(
    center: Vector3<f64>,
    side: f64,
    accept_radius: f64,
    dwell: f64,
    timeout: f64,
) -> Result<MissionPlan> {
    if !(side.is_finite() && side > 0.0) {
        return Err(Error::Parameter(format!("mission side must be > 0, got {side}")));
    }
    if !(accept_radius > 0.0 && dwell >= 0.0 && timeout > dwell) {
        return Err(Error::Parameter(
            "mission needs accept_radius > 0, dwell ≥ 0 and timeout > dwell".into(),
        ));
    }
    if !center.iter().all(|c| c.is_finite()) {
        return Err(Error::Parameter("mission center must be finite".into()));
    }
    let h = side / 2.0;
    let corners = [(h, h), (-h, h), (-h, -h), (h, -h)];
    let mut waypoints = vec![center];
    waypoints.extend(corners.iter().map(|&(x, y)| center + Vector3::new(x, y, 0.0)));
    waypoints.push(center);
    Ok(MissionPlan {
        center,
        side,
        waypoints,
        accept_radius,
        dwell,
        timeout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegEnd {
    Reached,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegRecord {
    pub waypoint: usize,
    /// s
    pub start: f64,
    pub end: f64,
    pub outcome: LegEnd,
}

/// Progress through a plan. The waypoint index only moves forward.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub index: usize,
    leg_start: Option<f64>,
    inside_since: Option<f64>,
    pub legs: Vec<LegRecord>,
}

impl MissionState {
    pub fn new() -> Self {
        Self {
            index: 0,
            leg_start: None,
            inside_since: None,
            legs: Vec::new(),
        }
    }

    pub fn finished(&self, plan: &MissionPlan) -> bool {
        self.index >= plan.waypoints.len()
    }
}

impl Default for MissionState {
    fn default() -> Self {
        Self::new()
    }
}

/// Returns the setpoint to hold and whether the mission is complete. Time
/// `now` is in seconds and must not decrease between calls.
pub fn mission_tick(
    plan: &MissionPlan,
    progress: &mut MissionState,
    position: &Vector3<f64>,
    now: f64,
) -> (Vector3<f64>, bool) {
    let last = *plan.waypoints.last().expect("plan has waypoints");
    if progress.finished(plan) {
        return (last, true);
    }
    let start = *progress.leg_start.get_or_insert(now);
    let target = plan.waypoints[progress.index];
    if (position - target).norm() <= plan.accept_radius {
        progress.inside_since.get_or_insert(now);
    } else {
        progress.inside_since = None;
    }
    let dwelt = progress.inside_since.is_some_and(|t| now - t >= plan.dwell);
    let timed_out = now - start >= plan.timeout;
    if dwelt || timed_out {
        progress.legs.push(LegRecord {
            waypoint: progress.index,
            start,
            end: now,
            outcome: if dwelt { LegEnd::Reached } else { LegEnd::TimedOut },
        });
        progress.index += 1;
        progress.leg_start = Some(now);
        progress.inside_since = None;
        if progress.finished(plan) {
            return (last, true);
        }
    }
    (plan.waypoints[progress.index], false)
}
