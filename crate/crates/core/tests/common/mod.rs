//! Oracles and checks shared by the integration tests.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stg_core::baseline::{
    generate_candidates, prune_and_select, target_grid, BaselineConfig, BaselineError, PruneContext,
};
use stg_core::batch::{run_batch, traffic_jobs, PlannerKind};
use stg_core::behavior::{identify_neighbors, kinematic_constraints, NeighborState, SafetyParams, Task};
use stg_core::config::Config;
use stg_core::diff::{Tape, Tensor, Var};
use stg_core::frenet::{FrenetState, Point, ReferencePath};
use stg_core::gat::decode_and_readout;
use stg_core::graph::{lateral_virtual_nodes, longitudinal_virtual_nodes, LateralBounds, SpeedWindow};
use stg_core::metrics::{discomfort, risk};
use stg_core::planner::{PlanConfig, Planner, Trajectory};
use stg_core::potential::{u_obstacles, PotentialParams};
use stg_core::scenario::{builtin_exit, builtin_merging, gen_traffic, ActorTrack, Density, Scenario};

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------------------
// Gradients

type OpFn = fn(&mut Tape, &[Var]) -> Var;

fn weighted_loss(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.leaf(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn eval_op(f: OpFn, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let loss = weighted_loss(&mut tape, out, weights);
    tape.item(loss)
}

/// Largest error between tape gradients and central differences of
/// `sum(w * op(inputs))` over every input element.
pub fn op_gradient_error(f: OpFn, inputs: &[Tensor], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let shape = tape.value(out).shape();
    let weights = Tensor::new(shape.0, shape.1, (0..shape.0 * shape.1).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let loss = weighted_loss(&mut tape, out, &weights);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let fd = (eval_op(f, &plus, &weights) - eval_op(f, &minus, &weights)) / (2.0 * h);
            worst = worst.max((g.data()[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Values bounded away from zero with a random sign.
fn rand_signed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.gen_range(0.2..2.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

/// Finite-difference check of every tape operation; returns the worst
/// error and the op it came from.
pub fn all_op_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = rand_tensor(&mut rng, 3, 4, 0.5, 2.0);
    let b = rand_tensor(&mut rng, 3, 4, 0.5, 2.0);
    let sa = rand_signed(&mut rng, 3, 4);
    let m = rand_tensor(&mut rng, 4, 2, -1.0, 1.0);
    let s = Tensor::scalar(rng.gen_range(0.5..1.5));
    let row = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
    let col3 = rand_tensor(&mut rng, 3, 1, -1.0, 1.0);
    let col7 = rand_tensor(&mut rng, 7, 1, -2.0, 2.0);
    let r5 = rand_tensor(&mut rng, 1, 5, -1.0, 1.0);
    let r5b = rand_tensor(&mut rng, 1, 5, -1.0, 1.0);
    let rows7 = rand_tensor(&mut rng, 7, 3, -1.0, 1.0);
    // min/max need distinct arguments
    let mut c = sa.clone();
    for (x, y) in c.data_mut().iter_mut().zip(sa.data()) {
        *x = y + if rng.gen_bool(0.5) { 0.3 } else { -0.3 };
    }

    let cases: Vec<(&'static str, OpFn, Vec<Tensor>)> = vec![
        ("add", |t, v| t.add(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()]),
        ("sub", |t, v| t.sub(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()]),
        ("mul", |t, v| t.mul(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()]),
        ("div", |t, v| t.div(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()]),
        ("neg", |t, v| t.neg(v[0]), vec![a.clone()]),
        ("scale", |t, v| t.scale(v[0], -1.7), vec![a.clone()]),
        ("offset", |t, v| t.offset(v[0], 0.3), vec![a.clone()]),
        ("add_scalar", |t, v| t.add_scalar(v[0], v[1]).unwrap(), vec![a.clone(), s.clone()]),
        ("mul_scalar", |t, v| t.mul_scalar(v[0], v[1]).unwrap(), vec![a.clone(), s.clone()]),
        ("pow", |t, v| t.pow(v[0], v[1]).unwrap(), vec![a.clone(), b.clone()]),
        ("powf", |t, v| t.powf(v[0], -1.5).unwrap(), vec![a.clone()]),
        ("exp", |t, v| t.exp(v[0]), vec![sa.clone()]),
        ("log", |t, v| t.log(v[0]).unwrap(), vec![a.clone()]),
        ("sqrt", |t, v| t.sqrt(v[0]).unwrap(), vec![a.clone()]),
        ("abs", |t, v| t.abs(v[0]), vec![sa.clone()]),
        ("min", |t, v| t.min(v[0], v[1]).unwrap(), vec![sa.clone(), c.clone()]),
        ("max", |t, v| t.max(v[0], v[1]).unwrap(), vec![sa.clone(), c.clone()]),
        ("matmul", |t, v| t.matmul(v[0], v[1]).unwrap(), vec![a.clone(), m.clone()]),
        ("transpose", |t, v| t.transpose(v[0]), vec![a.clone()]),
        ("reshape", |t, v| t.reshape(v[0], 2, 6).unwrap(), vec![a.clone()]),
        ("concat", |t, v| t.concat(&[v[0], v[1]]), vec![a.clone(), row.clone()]),
        ("slice", |t, v| t.slice(v[0], 3, 5).unwrap(), vec![a.clone()]),
        ("element", |t, v| t.element(v[0], 7).unwrap(), vec![a.clone()]),
        ("gather_rows", |t, v| t.gather_rows(v[0], &[2, 0, 2, 1]).unwrap(), vec![a.clone()]),
        ("add_row", |t, v| t.add_row(v[0], v[1]).unwrap(), vec![a.clone(), row.clone()]),
        ("scale_rows", |t, v| t.scale_rows(v[0], v[1]).unwrap(), vec![a.clone(), col3.clone()]),
        ("sum", |t, v| t.sum(v[0]), vec![a.clone()]),
        ("dot", |t, v| t.dot(v[0], v[1]).unwrap(), vec![r5.clone(), r5b.clone()]),
        ("softmax", |t, v| t.softmax(v[0]), vec![r5.clone()]),
        (
            "segment_softmax",
            |t, v| t.segment_softmax(v[0], &[0, 3, 3, 7]).unwrap(),
            vec![col7.clone()],
        ),
        (
            "segment_sum_rows",
            |t, v| t.segment_sum_rows(v[0], &[0, 2, 2, 7]).unwrap(),
            vec![rows7.clone()],
        ),
        ("leaky_relu", |t, v| t.leaky_relu(v[0], 0.2), vec![sa.clone()]),
        ("elu", |t, v| t.elu(v[0], 1.0), vec![sa.clone()]),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, f, inputs))| (name, op_gradient_error(f, &inputs, 100 + i as u64)))
        .collect()
}

fn rollout_loss(planner: &Planner, params: &stg_core::gat::GatParams, sc: &Scenario) -> f64 {
    let mut tape = Tape::new();
    let bound = planner.net.bind(&mut tape, params);
    let ro = planner.rollout(&mut tape, &bound, sc, &Planner::start_of(sc)).unwrap();
    tape.item(ro.loss)
}

/// Tape gradient of the summed potentials of an `N = 5` rollout against
/// central differences for `count` random parameter entries. Returns the
/// relative errors.
pub fn rollout_gradient_errors(sc: &Scenario, potential: PotentialParams, seed: u64, count: usize) -> Vec<f64> {
    let cfg = PlanConfig {
        horizon: 5,
        seed,
        ..PlanConfig::default()
    };
    let gat = stg_core::gat::GatConfig {
        n_virtual: cfg.n_virtual,
        ..Default::default()
    };
    let planner = Planner::new(cfg, gat, potential).unwrap();
    let params = planner.init_params();
    let mut tape = Tape::new();
    let bound = planner.net.bind(&mut tape, &params);
    let ro = planner.rollout(&mut tape, &bound, sc, &Planner::start_of(sc)).unwrap();
    let grads = tape.backward(ro.loss).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let h = 1e-5;
    (0..count)
        .map(|_| {
            let ti = rng.gen_range(0..params.tensors().len());
            let ei = rng.gen_range(0..params.tensors()[ti].len());
            let ad = grads.wrt(bound.vars[ti]).data()[ei];
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data_mut()[ei] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data_mut()[ei] -= h;
            let fd = (rollout_loss(&planner, &plus, sc) - rollout_loss(&planner, &minus, sc)) / (2.0 * h);
            rel_err(ad, fd, 1e-3)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Readout

/// Random virtual-node rows and logits; returns the number of draws whose
/// readout left the node range or whose weights did not sum to one.
pub fn readout_convexity_failures(draws: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..draws {
        let n_v = rng.gen_range(2..9);
        let mut tape = Tape::new();
        let s_k = tape.scalar(rng.gen_range(-100.0..100.0));
        let lo = rng.gen_range(0.0..30.0);
        let hi = lo + rng.gen_range(0.0..10.0);
        let window = SpeedWindow {
            lower: tape.scalar(lo),
            upper: tape.scalar(hi),
        };
        let v_long = longitudinal_virtual_nodes(&mut tape, s_k, window, 0.1, n_v).unwrap();
        let d_k = rng.gen_range(-5.0..5.0);
        let dv = tape.scalar(d_k);
        let bounds = LateralBounds {
            lower: tape.scalar(d_k - rng.gen_range(0.0..3.0)),
            upper: tape.scalar(d_k + rng.gen_range(0.0..3.0)),
        };
        let v_lat = lateral_virtual_nodes(&mut tape, dv, rng.gen_range(0.5..20.0), bounds, 0.1, n_v).unwrap();
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let logits = tape.leaf(Tensor::row(
            (0..2 * n_v).map(|_| scale * rng.gen_range(-1.0..1.0)).collect(),
        ));
        let (s, d, ws, wd) = decode_and_readout(&mut tape, logits, &v_long, &v_lat).unwrap();
        let inside = |v: f64, nodes: &[f64]| {
            let lo = nodes.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = nodes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            v >= lo - 1e-12 * lo.abs().max(1.0) && v <= hi + 1e-12 * hi.abs().max(1.0)
        };
        let ok = inside(tape.item(s), v_long.positions(&tape))
            && inside(tape.item(d), v_lat.positions(&tape))
            && (tape.value(ws).data().iter().sum::<f64>() - 1.0).abs() <= 1e-9
            && (tape.value(wd).data().iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if !ok {
            failures += 1;
        }
    }
    failures
}

// ---------------------------------------------------------------------------
// Behavioural truth table

/// `(lead breach, rear breach, rear faster, task)` and the expected
/// `(dec, acc, s_dot_max, s_dot_min, d_ddot_max, v_rec)`, worked out by hand
/// from the rule table with a_long = 2, a_lat = 1, v_max = 30, v_min = 15,
/// v_rec = 25 and speeds 18 / 22 for the slower / faster neighbour.
pub fn behavior_table() -> Vec<((bool, bool, bool, Task), (f64, f64, f64, f64, f64, Option<f64>))> {
    use Task::{Dtt, Fsps};
    vec![
        ((false, false, false, Dtt), (2.0, 2.0, 30.0, 15.0, 1.0, None)),
        ((false, false, true, Dtt), (2.0, 2.0, 30.0, 15.0, 1.0, None)),
        ((true, false, false, Dtt), (4.0, 2.0, 22.0, 15.0, 1.0, None)),
        ((true, false, true, Dtt), (4.0, 2.0, 18.0, 15.0, 1.0, None)),
        ((false, true, false, Dtt), (2.0, 4.0, 30.0, 18.0, 1.0, None)),
        ((false, true, true, Dtt), (2.0, 4.0, 30.0, 22.0, 1.0, None)),
        ((true, true, false, Dtt), (4.0, 4.0, 22.0, 18.0, 2.0, None)),
        ((true, true, true, Dtt), (4.0, 4.0, 22.0, 22.0, 2.0, None)),
        ((false, false, false, Fsps), (2.0, 2.0, 30.0, 15.0, 1.0, Some(25.0))),
        ((false, false, true, Fsps), (2.0, 2.0, 30.0, 15.0, 1.0, Some(25.0))),
        ((true, false, false, Fsps), (4.0, 2.0, 22.0, 15.0, 1.0, Some(22.0))),
        ((true, false, true, Fsps), (4.0, 2.0, 18.0, 15.0, 1.0, Some(18.0))),
        ((false, true, false, Fsps), (2.0, 4.0, 30.0, 18.0, 1.0, Some(25.0))),
        ((false, true, true, Fsps), (2.0, 4.0, 30.0, 22.0, 1.0, Some(25.0))),
        ((true, true, false, Fsps), (4.0, 4.0, 22.0, 18.0, 2.0, Some(22.0))),
        ((true, true, true, Fsps), (4.0, 4.0, 22.0, 22.0, 2.0, Some(22.0))),
    ]
}

pub fn behavior_table_mismatches() -> Vec<String> {
    let params = SafetyParams {
        s_safe: 10.0,
        a_max_long: 2.0,
        a_max_lat: 1.0,
        v_max: 30.0,
        v_min: 15.0,
        v_rec: Some(25.0),
    };
    let mut out = Vec::new();
    for ((lead, rear, rear_faster, task), expected) in behavior_table() {
        let (v_lead, v_rear) = if rear_faster { (18.0, 22.0) } else { (22.0, 18.0) };
        let nbr = NeighborState {
            s_lead: if lead { 5.0 } else { 50.0 },
            s_rear: if rear { 5.0 } else { 50.0 },
            v_lead: Some(v_lead),
            v_rear: Some(v_rear),
            ..NeighborState::default()
        };
        let kc = kinematic_constraints(&params, &nbr, task).unwrap();
        let got = (
            kc.s_ddot_dec_max,
            kc.s_ddot_acc_max,
            kc.s_dot_max,
            kc.s_dot_min,
            kc.d_ddot_max,
            kc.v_rec,
        );
        if got != expected {
            out.push(format!(
                "lead={lead} rear={rear} rear_faster={rear_faster} {task:?}: got {got:?}, want {expected:?}"
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Scenario checks

/// Smallest centre-to-centre `s` gap to an actor in the ego's lane.
pub fn min_same_lane_gap(sc: &Scenario, traj: &Trajectory) -> f64 {
    let k0 = (traj.t0 / traj.t_s).round() as usize;
    let mut gap = f64::INFINITY;
    for (k, st) in traj.states.iter().enumerate() {
        for (s, d) in sc.actor_positions(k0 + k, traj.t_s).unwrap() {
            if sc.lane_of(d) == sc.lane_of(st.d) {
                gap = gap.min((s - st.s).abs());
            }
        }
    }
    gap
}

pub fn merging_check() -> (Check, Trajectory) {
    let sc = builtin_merging();
    let planner = Planner::with_defaults(PlanConfig::default()).unwrap();
    let t0 = Instant::now();
    let out = planner.plan(&sc).unwrap();
    let elapsed = t0.elapsed();
    let traj = out.trajectory;
    let lane_end = sc.lower_taper.unwrap().s_end;
    let v_rec = sc.regs.v_rec.unwrap();
    let reached = traj
        .states
        .iter()
        .position(|st| (st.s_dot - v_rec).abs() <= 0.1 * v_rec);
    let reached_before_end = reached.is_some_and(|k| traj.states[k].s < lane_end);
    let last = traj.states.last().unwrap();
    let final_lane = sc.lane_of(last.d);
    let gap = min_same_lane_gap(&sc, &traj);
    let violations = traj.violations(&sc, 1e-9).len();
    let passed = reached_before_end
        && final_lane >= 1
        && gap >= sc.regs.s_safe
        && violations == 0
        && elapsed <= Duration::from_secs(60);
    let detail = format!(
        "60 km/h band reached at step {:?} (s = {:.1} m, lane ends at {lane_end} m); final lane {final_lane}; \
         min same-lane gap {gap:.2} m; final speed {:.1} km/h; {:.2?}",
        reached,
        reached.map_or(f64::NAN, |k| traj.states[k].s),
        last.s_dot * 3.6,
        elapsed
    );
    (Check::new(passed, detail), traj)
}

pub fn exit_check() -> (Check, Trajectory) {
    let sc = builtin_exit();
    let planner = Planner::with_defaults(PlanConfig::default()).unwrap();
    let out = planner.plan(&sc).unwrap();
    let traj = out.trajectory;
    let v_rec = sc.regs.v_rec.unwrap();
    let first = traj.states[0];
    let last = *traj.states.last().unwrap();
    let decelerates = last.s_dot < first.s_dot
        && traj.states.windows(2).skip(1).all(|w| w[1].s_dot <= w[0].s_dot + 1e-9);
    let speed_ok = (last.s_dot - v_rec).abs() <= 0.1 * v_rec;
    let lane = sc.lane_of(last.d);
    let gap = min_same_lane_gap(&sc, &traj);
    let violations = traj.violations(&sc, 1e-9).len();
    let passed = decelerates && speed_ok && lane == 0 && gap >= sc.regs.s_safe && violations == 0;
    let detail = format!(
        "speed {:.1} -> {:.1} km/h (monotone: {decelerates}); final lane {lane}; min same-lane gap {gap:.2} m",
        first.s_dot * 3.6,
        last.s_dot * 3.6
    );
    (Check::new(passed, detail), traj)
}

/// Attention on the exiting lead over the last `tail` steps for several
/// seeds. Returns per-seed series.
pub fn exit_attention(seeds: &[u64], tail: usize) -> Vec<(u64, Vec<f64>)> {
    let sc = builtin_exit();
    seeds
        .iter()
        .map(|&seed| {
            let planner = Planner::with_defaults(PlanConfig {
                seed,
                ..PlanConfig::default()
            })
            .unwrap();
            let traj = planner.plan(&sc).unwrap().trajectory;
            let series: Vec<f64> = traj
                .attention
                .iter()
                .map(|step| step.iter().find(|(id, _)| *id == 1).unwrap().1)
                .collect();
            (seed, series[series.len() - tail..].to_vec())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Metrics

fn states_from(f: impl Fn(f64) -> (f64, f64), n: usize, h: f64) -> Vec<FrenetState> {
    (0..n)
        .map(|k| {
            let (s, d) = f(k as f64 * h);
            FrenetState::new(s, d, 0.0, 0.0)
        })
        .collect()
}

/// Random smooth ego motion among constant-velocity actors; relative error of
/// the risk score on the `t_s = 0.1` grid against a trapezoid rule on a
/// grid ten times finer. Also reports whether the ego passes an actor (the
/// sign of the `s` gap changes), where `U_o` has its cusp.
pub fn risk_quadrature_error(seed: u64, p: &PotentialParams) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, a) = (rng.gen_range(12.0..25.0), rng.gen_range(-1.0..1.0));
    let (d0, amp, w) = (rng.gen_range(0.0..7.2), rng.gen_range(0.0..1.5), rng.gen_range(0.2..1.5));
    let ego = move |t: f64| (v * t + 0.5 * a * t * t, d0 + amp * (w * t).sin());
    let tracks: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..6))
        .map(|_| {
            (
                rng.gen_range(-40.0..40.0),
                1.8 + 3.6 * rng.gen_range(0..3) as f64,
                rng.gen_range(10.0..28.0),
            )
        })
        .collect();
    let actors = |t: f64| -> Vec<(f64, f64)> { tracks.iter().map(|&(s0, d, sv)| (s0 + sv * t, d)).collect() };

    let (h, n) = (0.1, 50);
    let coarse: Vec<FrenetState> = states_from(ego, n + 1, h);
    let coarse_actors: Vec<Vec<(f64, f64)>> = (0..=n).map(|k| actors(k as f64 * h)).collect();
    let r = risk(&coarse, &coarse_actors, p, h).unwrap();
    let fine_h = h / 10.0;
    let fine: Vec<f64> = (0..=10 * n)
        .map(|k| {
            let t = k as f64 * fine_h;
            u_obstacles(ego(t), &actors(t), p)
        })
        .collect();
    let integral: f64 = fine.windows(2).map(|w| 0.5 * (w[0] + w[1]) * fine_h).sum();
    let gap = |t: f64| -> Vec<f64> { actors(t).iter().map(|a| ego(t).0 - a.0).collect() };
    let passes = gap(0.0).iter().zip(gap(n as f64 * h)).any(|(a, b)| a.signum() != b.signum());
    (rel_err(r, integral / (n as f64 * h), 1e-12), passes)
}

/// `(discomfort of s = t^3, worst risk error vs a 10x finer grid over
/// random trajectories, the same restricted to draws without a pass, zero
/// cases exact)`.
pub fn metric_oracles() -> (f64, f64, f64, bool) {
    let cubic = states_from(|t| (t * t * t, 0.0), 51, 0.1);
    let j = discomfort(&cubic, 0.1).unwrap();

    let p = PotentialParams::default();
    let draws: Vec<(f64, bool)> = (0..20).map(|seed| risk_quadrature_error(seed, &p)).collect();
    let risk_err = draws.iter().map(|d| d.0).fold(0.0, f64::max);
    let no_pass_err = draws.iter().filter(|d| !d.1).map(|d| d.0).fold(0.0, f64::max);

    let h = 0.125;
    let still = states_from(|_| (7.0, 1.5), 41, h);
    let cruise = states_from(|t| (16.0 * t, 1.5), 41, h);
    let no_actors = vec![Vec::new(); 41];
    let zero_ok = discomfort(&still, h).unwrap() == 0.0
        && discomfort(&cruise, h).unwrap() == 0.0
        && risk(&cruise, &no_actors, &p, h).unwrap() == 0.0
        && stg_core::metrics::longitudinal_distance(&still) == 0.0;
    (j, risk_err, no_pass_err, zero_ok)
}

// ---------------------------------------------------------------------------
// Frenet

pub fn s_curve() -> ReferencePath {
    let pts = (0..=400)
        .map(|i| {
            let x = i as f64 * 0.5;
            Point::new(x, 10.0 * (x / 30.0).sin())
        })
        .collect();
    ReferencePath::new(pts).unwrap()
}

/// `(worst round-trip error, worst distance error vs dense sampling)`.
pub fn frenet_errors(samples: usize, seed: u64) -> (f64, f64) {
    let path = s_curve();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = path.length();

    let pts = path.points();
    let mut dense = Vec::new();
    for w in pts.windows(2) {
        let steps = (w[0].distance(w[1]) / 1e-3).ceil() as usize;
        for j in 0..steps {
            let u = j as f64 / steps as f64;
            dense.push(Point::new(w[0].x + u * (w[1].x - w[0].x), w[0].y + u * (w[1].y - w[0].y)));
        }
    }
    dense.push(*pts.last().unwrap());

    let mut round_trip: f64 = 0.0;
    let mut projection: f64 = 0.0;
    for _ in 0..samples {
        let s = rng.gen_range(5.0..len - 5.0);
        let d = rng.gen_range(-4.0..4.0);
        let p = path.to_cartesian(s, d).unwrap();
        let (s2, d2) = path.to_frenet(p).unwrap();
        round_trip = round_trip.max((s2 - s).abs()).max((d2 - d).abs());
        let nearest = dense.iter().map(|q| q.distance(p)).fold(f64::INFINITY, f64::min);
        projection = projection.max((d2.abs() - nearest).abs());
    }
    (round_trip, projection)
}

// ---------------------------------------------------------------------------
// Baseline

/// Checks exhaustive minimality and kinematic soundness of the selected
/// candidate on generated traffic. Returns the number of scenarios checked
/// and a list of problems.
pub fn baseline_soundness(seeds: std::ops::Range<u64>) -> (usize, usize, Vec<String>) {
    let cfg = BaselineConfig::default();
    let p = PotentialParams::default();
    let mut problems = Vec::new();
    let mut selected = 0;
    let mut checked = 0;
    for seed in seeds {
        let sc = gen_traffic(Density::Medium, seed).unwrap();
        checked += 1;
        let nbr = identify_neighbors(&sc.ego, &sc.actor_states(0, 0.1).unwrap(), |d| sc.lane_of(d));
        let kc = kinematic_constraints(&sc.regs, &nbr, sc.task).unwrap();
        let cands = generate_candidates(&sc.ego, &target_grid(&sc, &kc, &cfg), 0.1, 50);
        let actors = (0..=50).map(|k| sc.actor_positions(k, 0.1).unwrap()).collect();
        let ctx = PruneContext {
            scenario: &sc,
            kc,
            actors,
            potential: p,
            margin: cfg.margin,
            tol: 1e-9,
        };
        match prune_and_select(&cands, &ctx) {
            Ok(sel) => {
                selected += 1;
                for (i, c) in cands.iter().enumerate() {
                    if ctx.rejection(c).is_none() {
                        let cost = ctx.cost(c).unwrap();
                        if cost < sel.cost || (cost == sel.cost && i < sel.index) {
                            problems.push(format!("seed {seed}: candidate {i} beats the selection"));
                        }
                    }
                }
                for (k, x) in cands[sel.index].samples.iter().enumerate().skip(1) {
                    let ok = x.s_dot >= kc.s_dot_min - 1e-9
                        && x.s_dot <= kc.s_dot_max + 1e-9
                        && x.s_ddot >= -kc.s_ddot_dec_max - 1e-9
                        && x.s_ddot <= kc.s_ddot_acc_max + 1e-9
                        && x.d_ddot.abs() <= kc.d_ddot_max + 1e-9
                        && sc.bounds_at(x.s).contains(x.d, 1e-9);
                    if !ok {
                        problems.push(format!("seed {seed}: selection breaks bounds at step {k}"));
                    }
                }
            }
            Err(BaselineError::Infeasible(_)) => {
                if cands.iter().any(|c| ctx.rejection(c).is_none()) {
                    problems.push(format!("seed {seed}: infeasible with survivors"));
                }
            }
            Err(e) => problems.push(format!("seed {seed}: {e}")),
        }
    }
    (checked, selected, problems)
}

/// Stationary actors on every lane centre just ahead of the ego.
pub fn blocked_scenario() -> Scenario {
    let mut sc = builtin_merging();
    sc.name = "blocked".into();
    sc.lower_taper = None;
    sc.task = Task::Dtt;
    sc.regs.v_rec = None;
    sc.actors = (0..sc.lanes)
        .map(|l| ActorTrack::constant_velocity(l as u32 + 1, 18.0, sc.lane_center(l), 0.0))
        .collect();
    sc
}

// ---------------------------------------------------------------------------
// Batches

/// STG feasibility over generated traffic. Returns `(runs, feasible,
/// elapsed, first failure)`.
pub fn stg_feasibility(density: Density, count: usize, seed: u64) -> (usize, usize, Duration, Option<String>) {
    let cfg = Config::default();
    let jobs = traffic_jobs(density, count, seed, &cfg).unwrap();
    let t0 = Instant::now();
    let out = run_batch(&jobs, &[PlannerKind::Stg], &cfg);
    let elapsed = t0.elapsed();
    let feasible = out.iter().filter(|o| o.metrics.feasible).count();
    let first = out
        .iter()
        .find_map(|o| o.error.as_ref().map(|e| format!("{}: {e}", o.metrics.scenario_id)));
    (out.len(), feasible, elapsed, first)
}
