//! Obstacle and velocity potentials forming the planning loss.
//!
//! Every function has a plain `f64` form (used by the baseline and the
//! metrics) and a tape form (used by the planner).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("velocity potential needs a positive speed, got {0}")]
    Domain(f64),
    #[error("expected {expected} steps, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid potential parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub eps1: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps2: f64,
    /// Speeds below this are raised to it before entering the velocity
    /// potential's exponent.
    pub speed_floor: f64,
    /// Treat `U_o` as a constant inside the velocity potential, so the
    /// gradient of `U_v` never rewards a higher obstacle potential. With
    /// `false` the tape differentiates the loss exactly.
    pub detach_obstacle: bool,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            b1: 1.0,
            b2: 0.5,
            b3: 1.0,
            b4: 1.0,
            eps1: 0.5,
            c1: 1.0,
            c2: 1.0,
            eps2: 0.1,
            speed_floor: 0.1,
            detach_obstacle: true,
        }
    }
}

impl PotentialParams {
    pub fn validate(&self) -> Result<(), PotentialError> {
        let fields = [
            ("b1", self.b1),
            ("b2", self.b2),
            ("b3", self.b3),
            ("b4", self.b4),
            ("eps1", self.eps1),
            ("c1", self.c1),
            ("c2", self.c2),
            ("eps2", self.eps2),
            ("speed_floor", self.speed_floor),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(PotentialError::InvalidParam { name, value });
            }
        }
        Ok(())
    }
}

pub fn u_long(ds: f64, p: &PotentialParams) -> f64 {
    let q = p.b2 * ds.abs() + p.eps1;
    p.b1 / (q * q)
}

pub fn u_lat(ds: f64, dd: f64, p: &PotentialParams) -> f64 {
    let q = p.b4 * dd.abs() + p.eps1;
    p.b3 * u_long(ds, p) / (q * q)
}

/// Sum of [`u_lat`] over actors, with differences taken ego minus actor.
pub fn u_obstacles(ego: (f64, f64), actors: &[(f64, f64)], p: &PotentialParams) -> f64 {
    actors
        .iter()
        .map(|&(s, d)| u_lat(ego.0 - s, ego.1 - d, p))
        .sum()
}

/// `c1 (c2 / (u_o + eps2)) ^ (s_dot_max / s_dot)`.
pub fn u_velocity(u_o: f64, s_dot: f64, s_dot_max: f64, p: &PotentialParams) -> Result<f64, PotentialError> {
    if !(s_dot > 0.0) {
        return Err(PotentialError::Domain(s_dot));
    }
    if !(s_dot_max > 0.0) {
        return Err(PotentialError::Domain(s_dot_max));
    }
    let base = p.c2 / (u_o + p.eps2);
    Ok(p.c1 * base.powf(s_dot_max / s_dot))
}

/// [`u_velocity`] after raising `s_dot` to the configured floor.
pub fn u_velocity_floored(u_o: f64, s_dot: f64, s_dot_max: f64, p: &PotentialParams) -> Result<f64, PotentialError> {
    u_velocity(u_o, s_dot.max(p.speed_floor), s_dot_max, p)
}

/// Sum of `U_o + U_v` over a rollout of `n` steps.
pub fn u_total(steps: &[(f64, f64)], n: usize) -> Result<f64, PotentialError> {
    if steps.len() != n {
        return Err(PotentialError::LengthMismatch {
            expected: n,
            found: steps.len(),
        });
    }
    Ok(steps.iter().map(|(o, v)| o + v).sum())
}

/// Obstacle potential of a differentiable ego position against fixed actor
/// positions. Returns a constant zero with no actors.
pub fn tape_u_obstacles(
    tape: &mut Tape,
    s: Var,
    d: Var,
    actors: &[(f64, f64)],
    p: &PotentialParams,
) -> Result<Var, PotentialError> {
    if actors.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let n = actors.len();
    let s_act = tape.leaf(Tensor::row(actors.iter().map(|a| -a.0).collect()));
    let d_act = tape.leaf(Tensor::row(actors.iter().map(|a| -a.1).collect()));
    let ds = tape.add_scalar(s_act, s)?;
    let dd = tape.add_scalar(d_act, d)?;

    let ads = tape.abs(ds);
    let qs = tape.scale(ads, p.b2);
    let qs = tape.offset(qs, p.eps1);
    let qs2 = tape.mul(qs, qs)?;
    let b1 = tape.leaf(Tensor::row(vec![p.b1; n]));
    let long = tape.div(b1, qs2)?;

    let add = tape.abs(dd);
    let qd = tape.scale(add, p.b4);
    let qd = tape.offset(qd, p.eps1);
    let qd2 = tape.mul(qd, qd)?;
    let num = tape.scale(long, p.b3);
    let lat = tape.div(num, qd2)?;
    Ok(tape.sum(lat))
}

/// Velocity potential; see [`PotentialParams::detach_obstacle`].
pub fn tape_u_velocity(
    tape: &mut Tape,
    u_o: Var,
    s_dot: Var,
    s_dot_max: f64,
    p: &PotentialParams,
) -> Result<Var, PotentialError> {
    if !(s_dot_max > 0.0) {
        return Err(PotentialError::Domain(s_dot_max));
    }
    let floor = tape.scalar(p.speed_floor);
    let v = tape.max(s_dot, floor)?;
    let inv = tape.powf(v, -1.0)?;
    let exponent = tape.scale(inv, s_dot_max);
    let log_term = if p.detach_obstacle {
        let base = p.c2 / (tape.item(u_o) + p.eps2);
        tape.scale(exponent, base.ln())
    } else {
        let shifted = tape.offset(u_o, p.eps2);
        let ln_den = tape.log(shifted)?;
        let ln_base = tape.offset(ln_den, -p.c2.ln());
        let neg = tape.neg(ln_base);
        tape.mul(exponent, neg)?
    };
    let e = tape.exp(log_term);
    Ok(tape.scale(e, p.c1))
}
