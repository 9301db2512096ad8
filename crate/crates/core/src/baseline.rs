//! Polynomial Frenet planner used for comparison.
//!
//! Candidates pair a quintic lateral move to a lane centre with a quartic
//! longitudinal speed change, both over a duration `T` and held afterwards.
//! Candidates that break the kinematic bounds, leave the road or come near an
//! actor are dropped; the cheapest survivor under the planner's potential
//! cost wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{identify_neighbors, kinematic_constraints, BehaviorError, KinematicConstraints, Task};
use crate::frenet::{FrenetError, FrenetState};
use crate::planner::{StepLimits, Trajectory};
use crate::potential::{u_obstacles, u_velocity_floored, PotentialError, PotentialParams};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("all {0} candidates were pruned")]
    Infeasible(usize),
    #[error("invalid baseline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Frenet(#[from] FrenetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub durations: Vec<f64>,
    pub speed_step: f64,
    /// Added to both vehicle half-dimensions in the collision check.
    pub margin: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            durations: vec![2.0, 3.0, 4.0, 5.0],
            speed_step: 1.0,
            margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub d: f64,
    pub s_dot: f64,
    pub duration: f64,
}

/// Frenet sample with accelerations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub s: f64,
    pub d: f64,
    pub s_dot: f64,
    pub d_dot: f64,
    pub s_ddot: f64,
    pub d_ddot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub target: Target,
    /// `d(t) = sum lat[i] t^i`.
    pub lat: [f64; 6],
    /// `s(t) = sum lon[i] t^i`.
    pub lon: [f64; 5],
    pub samples: Vec<Sample>,
}

/// Quintic through position, velocity and acceleration at both ends.
pub fn quintic(x0: f64, v0: f64, a0: f64, x1: f64, v1: f64, a1: f64, t: f64) -> [f64; 6] {
    let c0 = x0;
    let c1 = v0;
    let c2 = 0.5 * a0;
    let dx = x1 - (c0 + c1 * t + c2 * t * t);
    let dv = v1 - (c1 + 2.0 * c2 * t);
    let da = a1 - 2.0 * c2;
    let t2 = t * t;
    let t3 = t2 * t;
    let c3 = (20.0 * dx - 8.0 * dv * t + da * t2) / (2.0 * t3);
    let c4 = (-30.0 * dx + 14.0 * dv * t - 2.0 * da * t2) / (2.0 * t3 * t);
    let c5 = (12.0 * dx - 6.0 * dv * t + da * t2) / (2.0 * t3 * t2);
    [c0, c1, c2, c3, c4, c5]
}

/// Quartic through position, velocity and acceleration at the start and
/// velocity and acceleration at the end.
pub fn quartic(x0: f64, v0: f64, a0: f64, v1: f64, a1: f64, t: f64) -> [f64; 5] {
    let c0 = x0;
    let c1 = v0;
    let c2 = 0.5 * a0;
    let dv = v1 - (c1 + 2.0 * c2 * t);
    let da = a1 - 2.0 * c2;
    let c3 = (3.0 * dv - da * t) / (3.0 * t * t);
    let c4 = (da * t - 2.0 * dv) / (4.0 * t * t * t);
    [c0, c1, c2, c3, c4]
}

/// Value and first two derivatives of a polynomial.
pub fn eval_poly(c: &[f64], t: f64) -> (f64, f64, f64) {
    let (mut x, mut v, mut a) = (0.0, 0.0, 0.0);
    for (i, &ci) in c.iter().enumerate().rev() {
        x = x * t + ci;
        if i >= 1 {
            v = v * t + i as f64 * ci;
        }
        if i >= 2 {
            a = a * t + (i * (i - 1)) as f64 * ci;
        }
    }
    (x, v, a)
}

impl Candidate {
    /// State at time `t`; after the target duration the lateral offset and
    /// the speed are held.
    pub fn at(&self, t: f64) -> Sample {
        let big_t = self.target.duration;
        if t <= big_t {
            let (s, s_dot, s_ddot) = eval_poly(&self.lon, t);
            let (d, d_dot, d_ddot) = eval_poly(&self.lat, t);
            return Sample {
                s,
                d,
                s_dot,
                d_dot,
                s_ddot,
                d_ddot,
            };
        }
        let end = self.at(big_t);
        Sample {
            s: end.s + end.s_dot * (t - big_t),
            d: end.d,
            s_dot: end.s_dot,
            d_dot: 0.0,
            s_ddot: 0.0,
            d_ddot: 0.0,
        }
    }
}

/// One candidate per target, sampled at `k t_s` for `k = 0..=horizon`.
/// The ego starts with zero acceleration.
pub fn generate_candidates(ego: &FrenetState, targets: &[Target], t_s: f64, horizon: usize) -> Vec<Candidate> {
    targets
        .iter()
        .map(|&target| {
            let lat = quintic(ego.d, ego.d_dot, 0.0, target.d, 0.0, 0.0, target.duration);
            let lon = quartic(ego.s, ego.s_dot, 0.0, target.s_dot, 0.0, target.duration);
            let mut c = Candidate {
                target,
                lat,
                lon,
                samples: Vec::new(),
            };
            c.samples = (0..=horizon).map(|k| c.at(k as f64 * t_s)).collect();
            c
        })
        .collect()
}

/// Lane centres inside the static corridor, speeds from `s_dot_min` to
/// `s_dot_max` in `speed_step` increments (the maximum always included), and
/// every configured duration.
pub fn target_grid(scenario: &Scenario, kc: &KinematicConstraints, cfg: &BaselineConfig) -> Vec<Target> {
    let bounds = scenario.static_bounds();
    let lanes: Vec<f64> = (0..scenario.lanes)
        .map(|l| scenario.lane_center(l))
        .filter(|&d| bounds.contains(d, 1e-9))
        .collect();
    let mut speeds = Vec::new();
    let mut v = kc.s_dot_min;
    while v < kc.s_dot_max - 1e-9 {
        speeds.push(v);
        v += cfg.speed_step;
    }
    speeds.push(kc.s_dot_max);
    let mut out = Vec::with_capacity(lanes.len() * speeds.len() * cfg.durations.len());
    for &d in &lanes {
        for &s_dot in &speeds {
            for &duration in &cfg.durations {
                out.push(Target { d, s_dot, duration });
            }
        }
    }
    out
}

/// Everything a candidate is checked against.
pub struct PruneContext<'a> {
    pub scenario: &'a Scenario,
    pub kc: KinematicConstraints,
    /// Actor positions for steps `0..=horizon`.
    pub actors: Vec<Vec<(f64, f64)>>,
    pub potential: PotentialParams,
    pub margin: f64,
    pub tol: f64,
}

impl PruneContext<'_> {
    fn speed_cap(&self) -> f64 {
        match (self.scenario.task, self.kc.v_rec) {
            (Task::Fsps, Some(v)) => v.min(self.kc.s_dot_max),
            _ => self.kc.s_dot_max,
        }
    }

    /// First reason the candidate is rejected, if any.
    pub fn rejection(&self, c: &Candidate) -> Option<String> {
        let kc = &self.kc;
        let tol = self.tol;
        let veh = self.scenario.vehicle;
        let semi_s = 2.0 * (0.5 * veh.length + self.margin);
        let semi_d = 2.0 * (0.5 * veh.width + self.margin);
        for (k, x) in c.samples.iter().enumerate().skip(1) {
            if x.s_dot < kc.s_dot_min - tol || x.s_dot > kc.s_dot_max + tol {
                return Some(format!("speed {} at step {k}", x.s_dot));
            }
            if x.s_ddot < -kc.s_ddot_dec_max - tol || x.s_ddot > kc.s_ddot_acc_max + tol {
                return Some(format!("acceleration {} at step {k}", x.s_ddot));
            }
            if x.d_ddot.abs() > kc.d_ddot_max + tol {
                return Some(format!("lateral acceleration {} at step {k}", x.d_ddot));
            }
            if !self.scenario.bounds_at(x.s).contains(x.d, tol) {
                return Some(format!("off road at step {k}"));
            }
            for &(s, d) in &self.actors[k] {
                let q = ((x.s - s) / semi_s).powi(2) + ((x.d - d) / semi_d).powi(2);
                if q < 1.0 {
                    return Some(format!("collision at step {k}"));
                }
            }
        }
        None
    }

    /// Sum over steps `1..` of obstacle plus velocity potential.
    pub fn cost(&self, c: &Candidate) -> Result<f64, PotentialError> {
        let cap = self.speed_cap();
        let mut total = 0.0;
        for (k, x) in c.samples.iter().enumerate().skip(1) {
            let u_o = u_obstacles((x.s, x.d), &self.actors[k], &self.potential);
            let u_v = u_velocity_floored(u_o, x.s_dot, cap, &self.potential)?;
            total += u_o + u_v;
        }
        Ok(total)
    }

    /// Cost of every candidate, `None` for pruned ones, in candidate order.
    pub fn evaluate(&self, cands: &[Candidate]) -> Result<Vec<Option<f64>>, PotentialError> {
        let one = |c: &Candidate| -> Result<Option<f64>, PotentialError> {
            if self.rejection(c).is_some() {
                Ok(None)
            } else {
                self.cost(c).map(Some)
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            cands.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            cands.iter().map(one).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub cost: f64,
    pub costs: Vec<Option<f64>>,
}

/// Cheapest surviving candidate; ties go to the lower index.
pub fn prune_and_select(cands: &[Candidate], ctx: &PruneContext) -> Result<Selection, BaselineError> {
    let costs = ctx.evaluate(cands)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in costs.iter().enumerate() {
        if let Some(c) = *c {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((i, c));
            }
        }
    }
    let (index, cost) = best.ok_or(BaselineError::Infeasible(cands.len()))?;
    Ok(Selection { index, cost, costs })
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub trajectory: Trajectory,
    pub candidate: Candidate,
    pub selection: Selection,
}

/// Plans once from the scenario start.
pub fn plan_baseline(
    scenario: &Scenario,
    cfg: &BaselineConfig,
    potential: &PotentialParams,
    t_s: f64,
    horizon: usize,
) -> Result<BaselineOutcome, BaselineError> {
    if cfg.durations.is_empty() || cfg.durations.iter().any(|&d| !(d > 0.0)) || !(cfg.speed_step > 0.0) {
        return Err(BaselineError::Config("durations and speed step must be positive".into()));
    }
    let ego = scenario.ego;
    let nbr = identify_neighbors(&ego, &scenario.actor_states(0, t_s)?, |d| scenario.lane_of(d));
    let kc = kinematic_constraints(&scenario.regs, &nbr, scenario.task)?;
    let targets = target_grid(scenario, &kc, cfg);
    let cands = generate_candidates(&ego, &targets, t_s, horizon);
    let actors = (0..=horizon)
        .map(|k| scenario.actor_positions(k, t_s))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = PruneContext {
        scenario,
        kc,
        actors,
        potential: *potential,
        margin: cfg.margin,
        tol: 1e-9,
    };
    let selection = prune_and_select(&cands, &ctx)?;
    let cand = cands[selection.index].clone();

    let states: Vec<FrenetState> = cand
        .samples
        .iter()
        .map(|x| FrenetState::new(x.s, x.d, x.s_dot, x.d_dot))
        .collect();
    let cap = ctx.speed_cap();
    let mut potentials = Vec::with_capacity(horizon);
    let mut limits = Vec::with_capacity(horizon);
    for (k, x) in cand.samples.iter().enumerate().skip(1) {
        let u_o = u_obstacles((x.s, x.d), &ctx.actors[k], potential);
        potentials.push((u_o, u_velocity_floored(u_o, x.s_dot, cap, potential)?));
        let road = scenario.bounds_at(x.s);
        limits.push(StepLimits {
            s_dot_lower: kc.s_dot_min,
            s_dot_upper: kc.s_dot_max,
            d_lower: road.d_lower,
            d_upper: road.d_upper,
            kc,
        });
    }
    let cartesian = states
        .iter()
        .map(|st| scenario.path.to_cartesian(st.s, st.d))
        .collect::<Result<_, _>>()?;
    Ok(BaselineOutcome {
        trajectory: Trajectory {
            t0: 0.0,
            t_s,
            states,
            cartesian,
            potentials,
            limits,
            attention: Vec::new(),
        },
        candidate: cand,
        selection,
    })
}
