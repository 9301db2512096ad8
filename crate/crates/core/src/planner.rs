//! Online planning loop.
//!
//! A rollout chains `N` graph steps: the position read out at step `k`
//! becomes the ego node of step `k + 1`, and ego velocities are finite
//! differences of consecutive positions. The summed potentials are
//! differentiated with respect to the network parameters through the whole
//! chain, including the virtual-node construction, and Adam updates the
//! parameters. [`Planner::plan`] keeps the lowest-loss rollout it saw.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{identify_neighbors, kinematic_constraints, BehaviorError, KinematicConstraints, Task};
use crate::diff::{adam_step, AdamConfig, AdamState, DiffError, Tape, Tensor, Var};
use crate::frenet::{FrenetError, FrenetState, Point};
use crate::gat::{BoundParams, GatConfig, GatParams, StgNetwork};
use crate::graph::{
    build_graph, lateral_virtual_nodes, longitudinal_virtual_nodes, EgoNode, GraphError, LateralBounds, SpeedWindow,
};
use crate::potential::{tape_u_obstacles, tape_u_velocity, PotentialError, PotentialParams};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("loss is not finite at iteration {iter}, step {step}: {detail}")]
    NonFiniteLoss { iter: usize, step: usize, detail: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Frenet(#[from] FrenetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Planned steps `N`.
    pub horizon: usize,
    pub t_s: f64,
    pub n_virtual: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            t_s: 0.1,
            n_virtual: 5,
            iters: 200,
            lr: 0.01,
            seed: 0,
            warm_start: false,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon == 0 {
            return Err(PlanError::Config("horizon must be at least 1".into()));
        }
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return Err(PlanError::Config(format!("t_s must be positive, got {}", self.t_s)));
        }
        if self.n_virtual < 2 {
            return Err(PlanError::Config("need at least 2 virtual nodes".into()));
        }
        if self.iters == 0 {
            return Err(PlanError::Config("iters must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PlanError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Bounds in force for one planned step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLimits {
    pub s_dot_lower: f64,
    pub s_dot_upper: f64,
    pub d_lower: f64,
    pub d_upper: f64,
    pub kc: KinematicConstraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Time of `states[0]`.
    pub t0: f64,
    pub t_s: f64,
    /// `N + 1` states; index 0 is the start. Velocities after the start are
    /// backward differences of positions.
    pub states: Vec<FrenetState>,
    pub cartesian: Vec<Point>,
    /// `(U_o, U_v)` for steps `1..=N`.
    pub potentials: Vec<(f64, f64)>,
    pub limits: Vec<StepLimits>,
    /// Ego attention on each actor, `(actor id, alpha)`, for steps `0..N`.
    pub attention: Vec<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Speed { step: usize, s_dot: f64, lower: f64, upper: f64 },
    Road { step: usize, d: f64, lower: f64, upper: f64 },
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn u_total(&self) -> f64 {
        self.potentials.iter().map(|(o, v)| o + v).sum()
    }

    /// One row per state: `t,s,d,x,y,s_dot,d_dot,U_o,U_v`. The start row has
    /// no potentials; `x`, `y` are empty when Cartesian points are missing.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,s,d,x,y,s_dot,d_dot,U_o,U_v\n");
        for (k, st) in self.states.iter().enumerate() {
            let t = self.t0 + k as f64 * self.t_s;
            let (x, y) = self
                .cartesian
                .get(k)
                .map_or((String::new(), String::new()), |p| (p.x.to_string(), p.y.to_string()));
            let (uo, uv) = match k.checked_sub(1).and_then(|i| self.potentials.get(i)) {
                Some((o, v)) => (o.to_string(), v.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{t},{},{},{x},{y},{},{},{uo},{uv}\n",
                st.s, st.d, st.s_dot, st.d_dot
            ));
        }
        out
    }

    /// Checks every planned step against its speed window and the road
    /// corridor at the planned `s`.
    pub fn violations(&self, scenario: &Scenario, tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        for (k, lim) in self.limits.iter().enumerate() {
            let st = &self.states[k + 1];
            if st.s_dot < lim.s_dot_lower - tol || st.s_dot > lim.s_dot_upper + tol {
                out.push(Violation::Speed {
                    step: k + 1,
                    s_dot: st.s_dot,
                    lower: lim.s_dot_lower,
                    upper: lim.s_dot_upper,
                });
            }
            let road = scenario.bounds_at(st.s);
            let (lo, hi) = (road.d_lower.max(lim.d_lower), road.d_upper.min(lim.d_upper));
            if st.d < lo - tol || st.d > hi + tol {
                out.push(Violation::Road {
                    step: k + 1,
                    d: st.d,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        out
    }
}

/// Where a plan starts: global step index and ego state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanStart {
    pub k0: usize,
    pub state: FrenetState,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub u_total: f64,
    /// Rollout loss at every iteration, before that iteration's update.
    pub history: Vec<f64>,
    pub best_iter: usize,
    /// Parameters that produced `trajectory`.
    pub params: GatParams,
}

/// Differentiable rollout on a tape.
pub struct Rollout {
    pub loss: Var,
    pub positions: Vec<(Var, Var)>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub cfg: PlanConfig,
    pub net: StgNetwork,
    pub potential: PotentialParams,
}

impl Planner {
    pub fn new(cfg: PlanConfig, gat: GatConfig, potential: PotentialParams) -> Result<Self, PlanError> {
        cfg.validate()?;
        potential.validate()?;
        if gat.n_virtual != cfg.n_virtual {
            return Err(PlanError::Config(format!(
                "network expects {} virtual nodes, planner uses {}",
                gat.n_virtual, cfg.n_virtual
            )));
        }
        if gat.r == 0 {
            return Err(PlanError::Config("embedding size must be positive".into()));
        }
        Ok(Self {
            cfg,
            net: StgNetwork::new(gat),
            potential,
        })
    }

    pub fn with_defaults(cfg: PlanConfig) -> Result<Self, PlanError> {
        let gat = GatConfig {
            n_virtual: cfg.n_virtual,
            ..GatConfig::default()
        };
        Self::new(cfg, gat, PotentialParams::default())
    }

    pub fn init_params(&self) -> GatParams {
        self.net.init_params(self.cfg.seed)
    }

    pub fn start_of(scenario: &Scenario) -> PlanStart {
        PlanStart {
            k0: 0,
            state: scenario.ego,
        }
    }

    /// Speed window for one step: acceleration limits around the current
    /// speed intersected with the behavioural bounds. If the two do not
    /// overlap the window collapses onto its upper edge.
    fn speed_window(&self, tape: &mut Tape, s_dot: Var, kc: &KinematicConstraints, task: Task) -> Result<SpeedWindow, DiffError> {
        let t_s = self.cfg.t_s;
        let acc = tape.offset(s_dot, kc.s_ddot_acc_max * t_s);
        let dec = tape.offset(s_dot, -kc.s_ddot_dec_max * t_s);
        let cap = tape.scalar(kc.s_dot_max);
        let floor = tape.scalar(kc.s_dot_min);
        let mut upper = tape.min(acc, cap)?;
        let mut lower = tape.max(dec, floor)?;
        if let (Task::Fsps, Some(v_rec)) = (task, kc.v_rec) {
            let rec = tape.scalar(v_rec);
            let target = tape.max(rec, lower)?;
            upper = tape.min(upper, target)?;
        }
        if tape.item(lower) > tape.item(upper) {
            lower = upper;
        }
        Ok(SpeedWindow { lower, upper })
    }

    /// Speed the velocity potential treats as maximal for this step.
    fn speed_cap(kc: &KinematicConstraints, task: Task) -> f64 {
        match (task, kc.v_rec) {
            (Task::Fsps, Some(v)) => v.min(kc.s_dot_max),
            _ => kc.s_dot_max,
        }
    }

    fn lateral_bounds(&self, tape: &mut Tape, scenario: &Scenario, s_lo: Var, s_hi: Var) -> Result<LateralBounds, DiffError> {
        let base = scenario.static_bounds();
        let lower = match &scenario.lower_taper {
            Some(t) => {
                let a = t.on_tape(tape, s_lo)?;
                let b = t.on_tape(tape, s_hi)?;
                tape.max(a, b)?
            }
            None => tape.scalar(base.d_lower),
        };
        let upper = match &scenario.upper_taper {
            Some(t) => {
                let a = t.on_tape(tape, s_lo)?;
                let b = t.on_tape(tape, s_hi)?;
                tape.min(a, b)?
            }
            None => tape.scalar(base.d_upper),
        };
        Ok(LateralBounds { lower, upper })
    }

    /// Builds the full rollout on `tape`. The loss is the sum over steps of
    /// obstacle plus velocity potential.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        scenario: &Scenario,
        start: &PlanStart,
    ) -> Result<Rollout, PlanError> {
        let cfg = &self.cfg;
        let t_s = cfg.t_s;
        let n = cfg.horizon;
        let lane_of = |d: f64| scenario.lane_of(d);

        let mut ego = EgoNode::constant(tape, &start.state);
        let mut state = start.state;
        let mut states = Vec::with_capacity(n + 1);
        states.push(state);
        let mut positions = Vec::with_capacity(n + 1);
        positions.push((ego.s, ego.d));
        let mut terms = Vec::with_capacity(n);
        let mut potentials = Vec::with_capacity(n);
        let mut limits = Vec::with_capacity(n);
        let mut attention = Vec::with_capacity(n);

        for k in 0..n {
            let g = start.k0 + k;
            let actors_k = scenario.actor_states(g, t_s)?;
            let nbr = identify_neighbors(&state, &actors_k, lane_of);
            let kc = kinematic_constraints(&scenario.regs, &nbr, scenario.task)?;

            let window = self.speed_window(tape, ego.s_dot, &kc, scenario.task)?;
            let (w_lo, w_hi) = (tape.item(window.lower), tape.item(window.upper));
            let v_long = longitudinal_virtual_nodes(tape, ego.s, window, t_s, cfg.n_virtual)?;
            let lat = self.lateral_bounds(tape, scenario, v_long.lower, v_long.upper)?;
            let v_lat = lateral_virtual_nodes(tape, ego.d, kc.d_ddot_max, lat, t_s, cfg.n_virtual)?;
            let (d_lo, d_hi) = (tape.item(v_lat.lower), tape.item(v_lat.upper));

            let actors_k1 = scenario.actor_positions(g + 1, t_s)?;
            let graph = build_graph(tape, &ego, &actors_k1, v_long, v_lat, t_s)?;
            let out = self.net.forward(tape, bound, &graph)?;

            let ds = tape.sub(out.s, ego.s)?;
            let s_dot = tape.scale(ds, 1.0 / t_s);
            let dd = tape.sub(out.d, ego.d)?;
            let d_dot = tape.scale(dd, 1.0 / t_s);

            let u_o = tape_u_obstacles(tape, out.s, out.d, &actors_k1, &self.potential)?;
            let u_v = tape_u_velocity(tape, u_o, s_dot, Self::speed_cap(&kc, scenario.task), &self.potential)?;
            let term = tape.add(u_o, u_v)?;
            terms.push(term);

            ego = EgoNode {
                s: out.s,
                d: out.d,
                s_dot,
                d_dot,
            };
            state = FrenetState::new(tape.item(out.s), tape.item(out.d), tape.item(s_dot), tape.item(d_dot));
            states.push(state);
            positions.push((out.s, out.d));
            potentials.push((tape.item(u_o), tape.item(u_v)));
            limits.push(StepLimits {
                s_dot_lower: w_lo,
                s_dot_upper: w_hi,
                d_lower: d_lo,
                d_upper: d_hi,
                kc,
            });
            attention.push(
                scenario
                    .actors
                    .iter()
                    .zip(&out.attention)
                    .map(|(a, &alpha)| (a.id, alpha))
                    .collect(),
            );
        }

        let stacked = tape.concat(&terms);
        let loss = tape.sum(stacked);
        Ok(Rollout {
            loss,
            positions,
            trajectory: Trajectory {
                t0: start.k0 as f64 * t_s,
                t_s,
                states,
                cartesian: Vec::new(),
                potentials,
                limits,
                attention,
            },
        })
    }

    fn finish(&self, scenario: &Scenario, mut traj: Trajectory) -> Result<Trajectory, PlanError> {
        traj.cartesian = traj
            .states
            .iter()
            .map(|st| scenario.path.to_cartesian(st.s, st.d))
            .collect::<Result<_, _>>()?;
        Ok(traj)
    }

    /// Trains fresh parameters (or `warm`) on one planning snapshot and
    /// returns the best rollout observed.
    pub fn plan_from(
        &self,
        scenario: &Scenario,
        start: &PlanStart,
        warm: Option<GatParams>,
    ) -> Result<PlanOutcome, PlanError> {
        let mut params = warm.unwrap_or_else(|| self.init_params());
        let adam = AdamConfig {
            lr: self.cfg.lr,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new();
        let mut tape = Tape::new();
        let mut history = Vec::with_capacity(self.cfg.iters);
        let mut best: Option<(f64, usize, Trajectory, GatParams)> = None;

        for iter in 0..self.cfg.iters {
            tape.clear();
            let bound = self.net.bind(&mut tape, &params);
            let ro = self.rollout(&mut tape, &bound, scenario, start)?;
            let loss = tape.item(ro.loss);
            if !loss.is_finite() {
                return Err(non_finite(iter, &ro.trajectory));
            }
            history.push(loss);
            if best.as_ref().is_none_or(|b| loss < b.0) {
                best = Some((loss, iter, ro.trajectory, params.clone()));
            }
            if iter + 1 == self.cfg.iters {
                break;
            }
            let grads = tape.backward(ro.loss)?;
            let g: Vec<Tensor> = bound.vars.iter().map(|&v| grads.wrt(v)).collect();
            if let Some(bad) = g.iter().position(|t| !t.is_finite()) {
                return Err(PlanError::NonFiniteLoss {
                    iter,
                    step: 0,
                    detail: format!("gradient of parameter {} is not finite", params.names()[bad]),
                });
            }
            adam_step(params.tensors_mut(), &g, &mut state, &adam)?;
        }

        let (u_total, best_iter, traj, params) = best.expect("at least one iteration");
        Ok(PlanOutcome {
            trajectory: self.finish(scenario, traj)?,
            u_total,
            history,
            best_iter,
            params,
        })
    }

    pub fn plan(&self, scenario: &Scenario) -> Result<PlanOutcome, PlanError> {
        self.plan_from(scenario, &Self::start_of(scenario), None)
    }

    /// Forward rollout with fixed parameters, no training.
    pub fn evaluate(&self, scenario: &Scenario, params: &GatParams) -> Result<Trajectory, PlanError> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, params);
        let ro = self.rollout(&mut tape, &bound, scenario, &Self::start_of(scenario))?;
        self.finish(scenario, ro.trajectory)
    }

    /// Receding-horizon loop: execute the first `shift` steps of each plan,
    /// then replan from the reached state. Parameters carry over between
    /// cycles when `warm_start` is set.
    pub fn replan_loop(&self, scenario: &Scenario, shift: usize) -> Result<Vec<PlanOutcome>, PlanError> {
        let n = self.cfg.horizon;
        if shift == 0 || shift > n {
            return Err(PlanError::Config(format!("shift must be in 1..={n}, got {shift}")));
        }
        let total = (scenario.duration / self.cfg.t_s).round() as usize;
        if total < n {
            return Err(PlanError::Config(format!(
                "scenario covers {total} steps, horizon needs {n}"
            )));
        }
        let cycles = (total - n) / shift + 1;
        let mut out: Vec<PlanOutcome> = Vec::with_capacity(cycles);
        let mut start = Self::start_of(scenario);
        for _ in 0..cycles {
            let warm = if self.cfg.warm_start {
                out.last().map(|o| o.params.clone())
            } else {
                None
            };
            let outcome = self.plan_from(scenario, &start, warm)?;
            start = PlanStart {
                k0: start.k0 + shift,
                state: outcome.trajectory.states[shift],
            };
            out.push(outcome);
        }
        Ok(out)
    }
}

/// Executed path of a receding-horizon run: the first `shift` steps of every
/// plan followed by the whole of the last plan.
pub fn stitch(plans: &[Trajectory], shift: usize) -> Option<Trajectory> {
    let (last, rest) = plans.split_last()?;
    let mut out = Trajectory {
        t0: plans[0].t0,
        t_s: last.t_s,
        states: Vec::new(),
        cartesian: Vec::new(),
        potentials: Vec::new(),
        limits: Vec::new(),
        attention: Vec::new(),
    };
    for p in rest {
        out.states.extend_from_slice(&p.states[..shift]);
        out.cartesian.extend_from_slice(&p.cartesian[..shift.min(p.cartesian.len())]);
        out.potentials.extend_from_slice(&p.potentials[..shift]);
        out.limits.extend_from_slice(&p.limits[..shift]);
        out.attention.extend_from_slice(&p.attention[..shift]);
    }
    out.states.extend_from_slice(&last.states);
    out.cartesian.extend_from_slice(&last.cartesian);
    out.potentials.extend_from_slice(&last.potentials);
    out.limits.extend_from_slice(&last.limits);
    out.attention.extend_from_slice(&last.attention);
    Some(out)
}

fn non_finite(iter: usize, traj: &Trajectory) -> PlanError {
    let step = traj
        .potentials
        .iter()
        .position(|(o, v)| !o.is_finite() || !v.is_finite())
        .map_or(0, |k| k + 1);
    let detail = match (traj.states.get(step), traj.potentials.get(step.wrapping_sub(1))) {
        (Some(st), Some((o, v))) => format!(
            "s = {}, d = {}, s_dot = {}, U_o = {o}, U_v = {v}",
            st.s, st.d, st.s_dot
        ),
        _ => "no step potentials".into(),
    };
    PlanError::NonFiniteLoss { iter, step, detail }
}
