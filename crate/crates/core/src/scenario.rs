//! Driving scenarios: road layout, ego start, actor predictions.
//!
//! Scenario files are JSON. A minimal example:
//!
//! ```json
//! {
//!   "name": "example",
//!   "path": [{"x": 0.0, "y": 0.0}, {"x": 300.0, "y": 0.0}],
//!   "lane_width": 3.6,
//!   "lanes": 3,
//!   "ego": {"s": 0.0, "d": 1.8, "s_dot": 20.0, "d_dot": 0.0},
//!   "actors": [
//!     {"id": 1, "motion": {"type": "constant_velocity", "s0": 30.0, "d0": 1.8, "s_dot": 18.0}}
//!   ],
//!   "regs": {"s_safe": 10.0, "a_max_long": 2.0, "a_max_lat": 1.5, "v_max": 25.0, "v_min": 15.0},
//!   "task": "DTT",
//!   "duration": 5.0
//! }
//! ```
//!
//! `lane_origin` (default 0) is the offset of the right road edge; lane 0
//! is the rightmost lane. The ego-centre corridor is the road shrunk by half
//! the vehicle width, optionally overridden along `s` by linear tapers.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{lane_index, BehaviorError, SafetyParams, Task};
use crate::diff::{DiffError, Tape, Var};
use crate::frenet::{FrenetError, FrenetState, ReferencePath};
use crate::graph::RoadBounds;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("actor {id}: time {t} outside its track")]
    OutOfRange { id: u32, t: f64 },
    #[error("could not place {wanted} vehicles after {attempts} attempts")]
    PlacementFailure { wanted: usize, attempts: usize },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Frenet(#[from] FrenetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub length: f64,
    pub width: f64,
}

impl Default for Vehicle {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 1.8,
        }
    }
}

/// Linear ramp from `from` at `s_start` to `to` at `s_end`, constant
/// outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Taper {
    pub s_start: f64,
    pub s_end: f64,
    pub from: f64,
    pub to: f64,
}

impl Taper {
    pub fn value(&self, s: f64) -> f64 {
        let u = ((s - self.s_start) / (self.s_end - self.s_start)).clamp(0.0, 1.0);
        self.from + u * (self.to - self.from)
    }

    /// [`Taper::value`] with `s` on the tape.
    pub fn on_tape(&self, tape: &mut Tape, s: Var) -> Result<Var, DiffError> {
        let u = tape.offset(s, -self.s_start);
        let u = tape.scale(u, 1.0 / (self.s_end - self.s_start));
        let one = tape.scalar(1.0);
        let zero = tape.scalar(0.0);
        let u = tape.min(u, one)?;
        let u = tape.max(u, zero)?;
        let ramp = tape.scale(u, self.to - self.from);
        Ok(tape.offset(ramp, self.from))
    }

    /// Largest change of the taper per metre of `s`.
    pub fn slope(&self) -> f64 {
        ((self.to - self.from) / (self.s_end - self.s_start)).abs()
    }
}

/// One piece of a scripted track: constant `s_dot` for `duration` seconds,
/// with an optional linear lateral move to `d_target` over the piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub s_dot: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    ConstantVelocity {
        s0: f64,
        d0: f64,
        s_dot: f64,
        #[serde(default)]
        d_dot: f64,
    },
    /// Piecewise-constant speed; the last piece's speed holds afterwards.
    Scripted { s0: f64, d0: f64, segments: Vec<Segment> },
    /// `(s, d)` samples every `dt` seconds, linearly interpolated.
    Sampled { dt: f64, samples: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorTrack {
    pub id: u32,
    pub motion: Motion,
}

impl ActorTrack {
    pub fn constant_velocity(id: u32, s0: f64, d0: f64, s_dot: f64) -> Self {
        Self {
            id,
            motion: Motion::ConstantVelocity {
                s0,
                d0,
                s_dot,
                d_dot: 0.0,
            },
        }
    }

    /// Time span covered by the track.
    pub fn horizon(&self) -> f64 {
        match &self.motion {
            Motion::Sampled { dt, samples } => dt * samples.len().saturating_sub(1) as f64,
            _ => f64::INFINITY,
        }
    }

    /// `(s, d, s_dot)` at time `t`.
    pub fn state_at(&self, t: f64) -> Result<(f64, f64, f64), ScenarioError> {
        let out_of_range = || ScenarioError::OutOfRange { id: self.id, t };
        if !(t >= 0.0) || t > self.horizon() + 1e-9 {
            return Err(out_of_range());
        }
        match &self.motion {
            Motion::ConstantVelocity { s0, d0, s_dot, d_dot } => Ok((s0 + s_dot * t, d0 + d_dot * t, *s_dot)),
            Motion::Scripted { s0, d0, segments } => {
                let (mut s, mut d, mut v) = (*s0, *d0, 0.0);
                let mut t0 = 0.0;
                for seg in segments {
                    v = seg.s_dot;
                    let target = seg.d_target.unwrap_or(d);
                    if t <= t0 + seg.duration {
                        let tau = t - t0;
                        let u = if seg.duration > 0.0 { tau / seg.duration } else { 1.0 };
                        return Ok((s + v * tau, d + u * (target - d), v));
                    }
                    s += v * seg.duration;
                    d = target;
                    t0 += seg.duration;
                }
                Ok((s + v * (t - t0), d, v))
            }
            Motion::Sampled { dt, samples } => {
                let last = samples.len() - 1;
                if last == 0 {
                    return Ok((samples[0].0, samples[0].1, 0.0));
                }
                let x = t / dt;
                let i = (x.floor() as usize).min(last - 1);
                let u = x - i as f64;
                let (a, b) = (samples[i], samples[i + 1]);
                if u == 0.0 {
                    return Ok((a.0, a.1, (b.0 - a.0) / dt));
                }
                if u == 1.0 {
                    return Ok((b.0, b.1, (b.0 - a.0) / dt));
                }
                Ok((a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1), (b.0 - a.0) / dt))
            }
        }
    }

    /// `(s, d)` at step `k` of period `t_s`.
    pub fn position(&self, k: usize, t_s: f64) -> Result<(f64, f64), ScenarioError> {
        let (s, d, _) = self.state_at(k as f64 * t_s)?;
        Ok((s, d))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(format!("actor {}: {m}", self.id)));
        match &self.motion {
            Motion::ConstantVelocity { s0, d0, s_dot, d_dot } => {
                if ![s0, d0, s_dot, d_dot].iter().all(|v| v.is_finite()) {
                    return bad("non-finite state".into());
                }
            }
            Motion::Scripted { s0, d0, segments } => {
                if !s0.is_finite() || !d0.is_finite() || segments.is_empty() {
                    return bad("scripted track needs a finite start and at least one segment".into());
                }
                for seg in segments {
                    if !(seg.duration >= 0.0) || !seg.s_dot.is_finite() || seg.d_target.is_some_and(|d| !d.is_finite()) {
                        return bad("bad segment".into());
                    }
                }
            }
            Motion::Sampled { dt, samples } => {
                if !(*dt > 0.0) || samples.is_empty() {
                    return bad("sampled track needs dt > 0 and samples".into());
                }
                if samples.iter().any(|(s, d)| !s.is_finite() || !d.is_finite()) {
                    return bad("non-finite sample".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub path: ReferencePath,
    pub lane_width: f64,
    pub lanes: usize,
    #[serde(default)]
    pub lane_origin: f64,
    #[serde(default)]
    pub vehicle: Vehicle,
    /// Overrides the lower ego-centre bound along `s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_taper: Option<Taper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_taper: Option<Taper>,
    pub ego: FrenetState,
    pub actors: Vec<ActorTrack>,
    pub regs: SafetyParams,
    pub task: Task,
    pub duration: f64,
}

impl Scenario {
    /// Ego-centre corridor ignoring tapers.
    pub fn static_bounds(&self) -> RoadBounds {
        let half = 0.5 * self.vehicle.width;
        RoadBounds {
            d_lower: self.lane_origin + half,
            d_upper: self.lane_origin + self.lanes as f64 * self.lane_width - half,
        }
    }

    /// Ego-centre corridor at arc length `s`.
    pub fn bounds_at(&self, s: f64) -> RoadBounds {
        let mut b = self.static_bounds();
        if let Some(t) = &self.lower_taper {
            b.d_lower = t.value(s);
        }
        if let Some(t) = &self.upper_taper {
            b.d_upper = t.value(s);
        }
        b
    }

    pub fn lane_of(&self, d: f64) -> i64 {
        lane_index(d, self.lane_origin, self.lane_width)
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        self.lane_origin + (lane as f64 + 0.5) * self.lane_width
    }

    pub fn actor_positions(&self, k: usize, t_s: f64) -> Result<Vec<(f64, f64)>, ScenarioError> {
        self.actors.iter().map(|a| a.position(k, t_s)).collect()
    }

    pub fn actor_states(&self, k: usize, t_s: f64) -> Result<Vec<(f64, f64, f64)>, ScenarioError> {
        self.actors.iter().map(|a| a.state_at(k as f64 * t_s)).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.lanes == 0 || !(self.lane_width > 0.0) || !self.lane_origin.is_finite() {
            return invalid("need at least one lane of positive width".into());
        }
        if !(self.vehicle.length > 0.0 && self.vehicle.width > 0.0 && self.vehicle.width < self.lane_width) {
            return invalid("vehicle must be positive and narrower than a lane".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration must be positive, got {}", self.duration));
        }
        if !self.ego.is_finite() {
            return invalid("ego state is not finite".into());
        }
        for t in self.lower_taper.iter().chain(&self.upper_taper) {
            if !(t.s_end > t.s_start) || !t.from.is_finite() || !t.to.is_finite() {
                return invalid("taper needs s_end > s_start and finite values".into());
            }
        }
        self.regs.validate()?;
        let b = self.bounds_at(self.ego.s);
        if !b.contains(self.ego.d, 1e-9) {
            return invalid(format!(
                "ego d = {} outside [{}, {}]",
                self.ego.d, b.d_lower, b.d_upper
            ));
        }
        for a in &self.actors {
            a.validate()?;
            if a.horizon() + 1e-9 < self.duration {
                return invalid(format!("actor {} track ends before the scenario", a.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ScenarioError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Self = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

const KMH: f64 = 1.0 / 3.6;

fn highway_path(length: f64) -> ReferencePath {
    ReferencePath::straight(crate::frenet::Point::new(0.0, 0.0), 0.0, length).expect("straight path")
}

/// Highway entry: the ego's lane (lane 0) ends about 100 m ahead and the
/// corridor's lower edge tapers into lane 1.
pub fn builtin_merging() -> Scenario {
    let w = 3.6;
    let half = 0.9;
    Scenario {
        name: "merging".into(),
        path: highway_path(400.0),
        lane_width: w,
        lanes: 3,
        lane_origin: 0.0,
        vehicle: Vehicle::default(),
        lower_taper: Some(Taper {
            s_start: 15.0,
            s_end: 100.0,
            from: half,
            to: w + half,
        }),
        upper_taper: None,
        ego: FrenetState::new(0.0, 0.5 * w, 50.0 * KMH, 0.0),
        actors: vec![
            ActorTrack::constant_velocity(1, -5.0, 1.5 * w, 70.0 * KMH),
            ActorTrack::constant_velocity(2, 5.0, 2.5 * w, 75.0 * KMH),
        ],
        regs: SafetyParams {
            s_safe: 10.0,
            a_max_long: 2.0,
            a_max_lat: 10.0,
            v_max: 80.0 * KMH,
            v_min: 40.0 * KMH,
            v_rec: Some(60.0 * KMH),
        },
        task: Task::Fsps,
        duration: 5.0,
    }
}

/// Highway exit: the corridor's upper edge tapers from lane 1 into the exit
/// lane (lane 0). The lead slows to the recommended speed and moves into the
/// exit lane; the adjacent actor stays on the highway.
pub fn builtin_exit() -> Scenario {
    let w = 3.6;
    let half = 0.9;
    Scenario {
        name: "exit".into(),
        path: highway_path(400.0),
        lane_width: w,
        lanes: 3,
        lane_origin: 0.0,
        vehicle: Vehicle::default(),
        lower_taper: None,
        upper_taper: Some(Taper {
            s_start: 10.0,
            s_end: 75.0,
            from: 2.0 * w - half,
            to: w - half,
        }),
        ego: FrenetState::new(0.0, 1.5 * w, 80.0 * KMH, 0.0),
        actors: vec![
            ActorTrack {
                id: 1,
                motion: Motion::Scripted {
                    s0: 25.0,
                    d0: 1.5 * w,
                    segments: vec![
                        Segment {
                            duration: 1.0,
                            s_dot: 55.0 * KMH,
                            d_target: None,
                        },
                        Segment {
                            duration: 2.0,
                            s_dot: 55.0 * KMH,
                            d_target: Some(0.5 * w),
                        },
                        Segment {
                            duration: 1.0,
                            s_dot: 50.0 * KMH,
                            d_target: None,
                        },
                    ],
                },
            },
            ActorTrack::constant_velocity(2, 10.0, 2.5 * w, 75.0 * KMH),
        ],
        regs: SafetyParams {
            s_safe: 10.0,
            a_max_long: 2.0,
            a_max_lat: 15.0,
            v_max: 80.0 * KMH,
            v_min: 40.0 * KMH,
            v_rec: Some(50.0 * KMH),
        },
        task: Task::Fsps,
        duration: 5.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Low,
    Medium,
    High,
}

impl Density {
    /// Inclusive actor-count band.
    pub fn band(self) -> (usize, usize) {
        match self {
            Density::Low => (1, 5),
            Density::Medium => (10, 14),
            Density::High => (15, 20),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::Low => "low",
            Density::Medium => "medium",
            Density::High => "high",
        }
    }
}

impl std::str::FromStr for Density {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Density::Low),
            "medium" => Ok(Density::Medium),
            "high" => Ok(Density::High),
            other => Err(format!("unknown density {other}; expected low, medium or high")),
        }
    }
}

/// Generated traffic layout; the defaults match the three-lane highway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub lanes: usize,
    pub lane_width: f64,
    /// Vehicles spawn with `s` in `[0, spawn_length]`.
    pub spawn_length: f64,
    pub duration: f64,
    pub max_attempts: usize,
    pub regs: SafetyParams,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            lanes: 3,
            lane_width: 3.6,
            spawn_length: 150.0,
            duration: 5.0,
            max_attempts: 1000,
            regs: SafetyParams::default(),
        }
    }
}

/// Random highway traffic. One extra vehicle is placed and a random one of
/// them becomes the ego; the rest drive at constant speed in their lanes.
pub fn gen_traffic(density: Density, seed: u64) -> Result<Scenario, ScenarioError> {
    gen_traffic_with(density, seed, &TrafficConfig::default())
}

pub fn gen_traffic_with(density: Density, seed: u64, cfg: &TrafficConfig) -> Result<Scenario, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = density.band();
    let n_actors = rng.gen_range(lo..=hi);
    let wanted = n_actors + 1;
    let regs = cfg.regs;

    let mut placed: Vec<(usize, f64, f64)> = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while placed.len() < wanted {
        if attempts >= cfg.max_attempts {
            return Err(ScenarioError::PlacementFailure { wanted, attempts });
        }
        attempts += 1;
        let lane = rng.gen_range(0..cfg.lanes);
        let s = rng.gen_range(0.0..cfg.spawn_length);
        let v = rng.gen_range(regs.v_min..=regs.v_max);
        if placed.iter().all(|&(l, s2, _)| l != lane || (s - s2).abs() >= regs.s_safe) {
            placed.push((lane, s, v));
        }
    }
    let ego_idx = rng.gen_range(0..wanted);
    let curvature_sign = *[-1.0, 1.0].choose(&mut rng).unwrap();

    let center = |lane: usize| (lane as f64 + 0.5) * cfg.lane_width;
    let (ego_lane, ego_s, ego_v) = placed[ego_idx];
    let actors = placed
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != ego_idx)
        .enumerate()
        .map(|(id, (_, &(lane, s, v)))| ActorTrack::constant_velocity(id as u32 + 1, s, center(lane), v))
        .collect();

    let radius = 1500.0;
    let length = cfg.spawn_length + regs.v_max * cfg.duration + 100.0;
    let path = ReferencePath::arc(radius, -curvature_sign * std::f64::consts::FRAC_PI_2, curvature_sign * length / radius, 200)?;

    let sc = Scenario {
        name: format!("{}-{seed}", density.name()),
        path,
        lane_width: cfg.lane_width,
        lanes: cfg.lanes,
        lane_origin: 0.0,
        vehicle: Vehicle::default(),
        lower_taper: None,
        upper_taper: None,
        ego: FrenetState::new(ego_s, center(ego_lane), ego_v, 0.0),
        actors,
        regs,
        task: Task::Dtt,
        duration: cfg.duration,
    };
    sc.validate()?;
    Ok(sc)
}
