//! Rule-based behavioral layer producing per-step kinematic constraints.
//!
//! The ego is compared against the immediate same-lane lead and rear actors.
//! A gap below the safety gap tightens the velocity bounds toward that
//! actor's speed and doubles the matching acceleration bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frenet::FrenetState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Task {
    /// Drive through traffic.
    Dtt,
    /// Follow a specific path and speed.
    Fsps,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BehaviorError {
    #[error("{which} gap {gap} breaches the safety gap but the actor velocity is missing")]
    MissingNeighborVelocity { which: &'static str, gap: f64 },
    #[error("invalid safety parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub s_safe: f64,
    pub a_max_long: f64,
    pub a_max_lat: f64,
    pub v_max: f64,
    pub v_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_rec: Option<f64>,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            s_safe: 10.0,
            a_max_long: 2.0,
            a_max_lat: 1.5,
            v_max: 25.0,
            v_min: 15.0,
            v_rec: None,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        let positive = [
            ("s_safe", self.s_safe),
            ("a_max_long", self.a_max_long),
            ("a_max_lat", self.a_max_lat),
            ("v_max", self.v_max),
            ("v_min", self.v_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(BehaviorError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.v_min > self.v_max {
            return Err(BehaviorError::InvalidParams(format!(
                "v_min {} exceeds v_max {}",
                self.v_min, self.v_max
            )));
        }
        if let Some(v) = self.v_rec {
            if !(self.v_min..=self.v_max).contains(&v) {
                return Err(BehaviorError::InvalidParams(format!(
                    "v_rec {v} outside [{}, {}]",
                    self.v_min, self.v_max
                )));
            }
        }
        Ok(())
    }
}

/// Gaps and speeds of the immediate same-lane neighbours. An absent actor
/// has an infinite gap and no velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborState {
    pub s_lead: f64,
    pub s_rear: f64,
    pub v_lead: Option<f64>,
    pub v_rear: Option<f64>,
    /// Index of the lead actor in the slice given to [`identify_neighbors`].
    pub lead: Option<usize>,
    pub rear: Option<usize>,
}

impl Default for NeighborState {
    fn default() -> Self {
        Self {
            s_lead: f64::INFINITY,
            s_rear: f64::INFINITY,
            v_lead: None,
            v_rear: None,
            lead: None,
            rear: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicConstraints {
    pub s_ddot_dec_max: f64,
    pub s_ddot_acc_max: f64,
    pub s_dot_max: f64,
    pub s_dot_min: f64,
    pub d_ddot_max: f64,
    /// Recommended speed; only produced for [`Task::Fsps`].
    pub v_rec: Option<f64>,
    pub lead_breach: bool,
    pub rear_breach: bool,
}

/// Kinematic constraints for one planning step.
///
/// Follows the rule table line by line; the comfort bounds are the starting
/// point for every field so each later rule only overrides what it names.
/// When a lead breach leaves `s_dot_min > s_dot_max` (a lead slower than the
/// road minimum) the floor drops to the lead speed; a rear breach alone
/// lifts the ceiling instead.
pub fn kinematic_constraints(
    params: &SafetyParams,
    nbr: &NeighborState,
    task: Task,
) -> Result<KinematicConstraints, BehaviorError> {
    let lead_breach = nbr.s_lead < params.s_safe;
    let rear_breach = nbr.s_rear < params.s_safe;
    let fsps = task == Task::Fsps;

    // comfort bounds
    let mut kc = KinematicConstraints {
        s_ddot_dec_max: params.a_max_long,
        s_ddot_acc_max: params.a_max_long,
        s_dot_max: params.v_max,
        s_dot_min: params.v_min,
        d_ddot_max: params.a_max_lat,
        v_rec: fsps.then(|| params.v_rec.unwrap_or(params.v_max)),
        lead_breach,
        rear_breach,
    };

    // lead breach
    if lead_breach {
        let v_lead = nbr.v_lead.ok_or(BehaviorError::MissingNeighborVelocity {
            which: "lead",
            gap: nbr.s_lead,
        })?;
        // a lead above the road limit does not lift the ceiling
        let v_lead = v_lead.min(params.v_max);
        kc.s_ddot_dec_max = 2.0 * params.a_max_long;
        kc.s_dot_max = v_lead;
        if fsps {
            kc.v_rec = Some(v_lead);
        }
    }

    // rear breach
    if rear_breach {
        let v_rear = nbr.v_rear.ok_or(BehaviorError::MissingNeighborVelocity {
            which: "rear",
            gap: nbr.s_rear,
        })?;
        kc.s_ddot_acc_max = 2.0 * params.a_max_long;
        kc.s_dot_min = v_rear;
        if let Some(v_rec) = kc.v_rec.as_mut() {
            if *v_rec < kc.s_dot_min {
                *v_rec = kc.s_dot_min;
            }
        }
    }

    // both breached
    if lead_breach && rear_breach {
        kc.d_ddot_max = 2.0 * params.a_max_lat;
        if kc.s_dot_min > kc.s_dot_max {
            kc.s_dot_max = kc.s_dot_min;
        }
    }

    if kc.s_dot_min > kc.s_dot_max {
        if lead_breach {
            kc.s_dot_min = kc.s_dot_max;
        } else {
            kc.s_dot_max = kc.s_dot_min;
        }
    }
    Ok(kc)
}

/// Lane index of lateral offset `d`, counting from `d_lower`.
pub fn lane_index(d: f64, d_lower: f64, lane_width: f64) -> i64 {
    ((d - d_lower) / lane_width).floor() as i64
}

/// Lead and rear actors sharing the ego's lane.
///
/// `actors` holds `(s, d, s_dot)` for each actor at the current step. Gaps
/// are centre-to-centre along `s`; an actor level with the ego counts as
/// lead.
pub fn identify_neighbors(
    ego: &FrenetState,
    actors: &[(f64, f64, f64)],
    lane_of: impl Fn(f64) -> i64,
) -> NeighborState {
    let ego_lane = lane_of(ego.d);
    let mut out = NeighborState::default();
    for (i, &(s, d, v)) in actors.iter().enumerate() {
        if lane_of(d) != ego_lane {
            continue;
        }
        let gap = s - ego.s;
        if gap >= 0.0 {
            if gap < out.s_lead {
                out.s_lead = gap;
                out.v_lead = Some(v);
                out.lead = Some(i);
            }
        } else if -gap < out.s_rear {
            out.s_rear = -gap;
            out.v_rear = Some(v);
            out.rear = Some(i);
        }
    }
    out
}
