//! Spatial-temporal graph for one planning step.
//!
//! Nodes: the ego at step `k`, every actor at its predicted step `k + 1`
//! position, and two rows of virtual nodes marking the longitudinal and
//! lateral positions reachable at step `k + 1`. Virtual-node positions are
//! built on the tape so the planning loss differentiates through them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::KinematicConstraints;
use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::frenet::FrenetState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("need at least 2 virtual nodes, got {0}")]
    TooFewVirtualNodes(usize),
    #[error("sampling period must be positive, got {0}")]
    BadSamplingPeriod(f64),
    #[error("lateral corridor is empty: lower {lower} above upper {upper}")]
    CorridorInverted { lower: f64, upper: f64 },
    #[error("speed window is inverted: lower {lower} above upper {upper}")]
    WindowInverted { lower: f64, upper: f64 },
}

/// Lateral road corridor for the ego centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadBounds {
    pub d_lower: f64,
    pub d_upper: f64,
}

impl RoadBounds {
    pub fn new(d_lower: f64, d_upper: f64) -> Option<Self> {
        (d_lower < d_upper).then_some(Self { d_lower, d_upper })
    }

    pub fn contains(&self, d: f64, tol: f64) -> bool {
        d >= self.d_lower - tol && d <= self.d_upper + tol
    }
}

/// Tape-resident lateral bounds (they may depend on the ego position).
#[derive(Debug, Clone, Copy)]
pub struct LateralBounds {
    pub lower: Var,
    pub upper: Var,
}

impl LateralBounds {
    pub fn constant(tape: &mut Tape, bounds: &RoadBounds) -> Self {
        Self {
            lower: tape.scalar(bounds.d_lower),
            upper: tape.scalar(bounds.d_upper),
        }
    }
}

/// Tape-resident longitudinal velocity window for one step.
#[derive(Debug, Clone, Copy)]
pub struct SpeedWindow {
    pub lower: Var,
    pub upper: Var,
}

impl SpeedWindow {
    pub fn from_constraints(tape: &mut Tape, kc: &KinematicConstraints) -> Self {
        Self {
            lower: tape.scalar(kc.s_dot_min),
            upper: tape.scalar(kc.s_dot_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VirtualKind {
    Longitudinal,
    Lateral,
}

/// Equally spaced reachable positions for step `k + 1`.
#[derive(Debug, Clone)]
pub struct VirtualNodes {
    pub kind: VirtualKind,
    /// `1 x N_V` absolute positions, ascending.
    pub values: Var,
    pub lower: Var,
    pub upper: Var,
    pub spacing: Var,
    /// Lower and upper coincide; all nodes share one position.
    pub degenerate: bool,
}

impl VirtualNodes {
    pub fn len(&self, tape: &Tape) -> usize {
        tape.value(self.values).len()
    }

    pub fn positions<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        tape.value(self.values).data()
    }
}

fn check_common(t_s: f64, n_v: usize) -> Result<(), GraphError> {
    if n_v < 2 {
        return Err(GraphError::TooFewVirtualNodes(n_v));
    }
    if !(t_s > 0.0) {
        return Err(GraphError::BadSamplingPeriod(t_s));
    }
    Ok(())
}

fn layer(
    tape: &mut Tape,
    kind: VirtualKind,
    lower: Var,
    upper: Var,
    n_v: usize,
) -> Result<VirtualNodes, GraphError> {
    let width = tape.sub(upper, lower)?;
    let spacing = tape.scale(width, 1.0 / (n_v - 1) as f64);
    let steps = tape.leaf(Tensor::row((0..n_v).map(|j| j as f64).collect()));
    let offsets = tape.mul_scalar(steps, spacing)?;
    let values = tape.add_scalar(offsets, lower)?;
    Ok(VirtualNodes {
        kind,
        values,
        lower,
        upper,
        spacing,
        degenerate: tape.item(width) == 0.0,
    })
}

/// Lateral nodes: reach per step `d_ddot_max * t_s * t_s`, clipped to the
/// road corridor.
pub fn lateral_virtual_nodes(
    tape: &mut Tape,
    d_k: Var,
    d_ddot_max: f64,
    bounds: LateralBounds,
    t_s: f64,
    n_v: usize,
) -> Result<VirtualNodes, GraphError> {
    check_common(t_s, n_v)?;
    let d_dot_max = d_ddot_max * t_s;
    let reach = d_dot_max * t_s;
    let up = tape.offset(d_k, reach);
    let down = tape.offset(d_k, -reach);
    let upper = tape.min(bounds.upper, up)?;
    let lower = tape.max(bounds.lower, down)?;
    let (lo, hi) = (tape.item(lower), tape.item(upper));
    if lo > hi {
        return Err(GraphError::CorridorInverted { lower: lo, upper: hi });
    }
    layer(tape, VirtualKind::Lateral, lower, upper, n_v)
}

/// Longitudinal nodes between `s_k + lower * t_s` and `s_k + upper * t_s`.
pub fn longitudinal_virtual_nodes(
    tape: &mut Tape,
    s_k: Var,
    window: SpeedWindow,
    t_s: f64,
    n_v: usize,
) -> Result<VirtualNodes, GraphError> {
    check_common(t_s, n_v)?;
    let (lo, hi) = (tape.item(window.lower), tape.item(window.upper));
    if lo > hi {
        return Err(GraphError::WindowInverted { lower: lo, upper: hi });
    }
    let far = tape.scale(window.upper, t_s);
    let near = tape.scale(window.lower, t_s);
    let upper = tape.add(s_k, far)?;
    let lower = tape.add(s_k, near)?;
    layer(tape, VirtualKind::Longitudinal, lower, upper, n_v)
}

/// Ego state as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct EgoNode {
    pub s: Var,
    pub d: Var,
    pub s_dot: Var,
    pub d_dot: Var,
}

impl EgoNode {
    pub fn constant(tape: &mut Tape, state: &FrenetState) -> Self {
        Self {
            s: tape.scalar(state.s),
            d: tape.scalar(state.d),
            s_dot: tape.scalar(state.s_dot),
            d_dot: tape.scalar(state.d_dot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Ego and actor, both directions; attribute is their distance.
    Interaction,
    /// Ego to a virtual node; attribute is the sampling period.
    Transition,
    /// Adjacent virtual nodes, both directions; attribute is their spacing.
    Spacing,
}

/// Directed edge: `dst` aggregates messages from `src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Ego,
    Actor,
    Virtual,
}

#[derive(Debug, Clone)]
pub struct STGraph {
    pub n_actors: usize,
    pub n_virtual: usize,
    /// `1 x 4`: ego-relative `s`, `d` (both zero) then `s_dot`, `d_dot`.
    pub ego_features: Var,
    /// `N_A x 2` ego-relative actor positions; `None` without actors.
    pub actor_features: Option<Var>,
    /// `2 N_V x 1`: longitudinal then lateral virtual nodes, ego-relative.
    pub virtual_features: Var,
    pub v_long: VirtualNodes,
    pub v_lat: VirtualNodes,
    pub edges: Vec<Edge>,
    /// `E x 1` attributes aligned with `edges`.
    pub edge_attr: Var,
    /// Ego-actor distances, `1 x N_A`.
    pub actor_distance: Option<Var>,
}

impl STGraph {
    pub fn node_count(&self) -> usize {
        1 + self.n_actors + 2 * self.n_virtual
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_kind(&self, i: usize) -> NodeKind {
        match i {
            0 => NodeKind::Ego,
            i if i <= self.n_actors => NodeKind::Actor,
            _ => NodeKind::Virtual,
        }
    }

    pub fn actor_node(&self, actor: usize) -> usize {
        1 + actor
    }

    pub fn long_node(&self, j: usize) -> usize {
        1 + self.n_actors + j
    }

    pub fn lat_node(&self, j: usize) -> usize {
        1 + self.n_actors + self.n_virtual + j
    }

    pub fn feature_count(&self, i: usize) -> usize {
        match self.node_kind(i) {
            NodeKind::Ego => 4,
            NodeKind::Actor => 2,
            NodeKind::Virtual => 1,
        }
    }
}

/// Assembles the graph from the ego node, actor predictions for step
/// `k + 1`, and the two rows of virtual nodes.
pub fn build_graph(
    tape: &mut Tape,
    ego: &EgoNode,
    actors_k1: &[(f64, f64)],
    v_long: VirtualNodes,
    v_lat: VirtualNodes,
    t_s: f64,
) -> Result<STGraph, GraphError> {
    let n_a = actors_k1.len();
    let n_v = v_long.len(tape);
    if n_v != v_lat.len(tape) || n_v < 2 {
        return Err(GraphError::TooFewVirtualNodes(n_v.min(v_lat.len(tape))));
    }

    let zero = tape.scalar(0.0);
    let ego_features = tape.concat(&[zero, zero, ego.s_dot, ego.d_dot]);

    let neg_s = tape.neg(ego.s);
    let neg_d = tape.neg(ego.d);

    let (actor_features, actor_distance) = if n_a > 0 {
        let s_abs = tape.leaf(Tensor::row(actors_k1.iter().map(|a| a.0).collect()));
        let d_abs = tape.leaf(Tensor::row(actors_k1.iter().map(|a| a.1).collect()));
        let ds = tape.add_scalar(s_abs, neg_s)?;
        let dd = tape.add_scalar(d_abs, neg_d)?;
        let stacked = tape.concat(&[ds, dd]);
        let by_feature = tape.reshape(stacked, 2, n_a)?;
        let features = tape.transpose(by_feature);
        let ds2 = tape.mul(ds, ds)?;
        let dd2 = tape.mul(dd, dd)?;
        let sq = tape.add(ds2, dd2)?;
        let sq = tape.offset(sq, 1e-12);
        let dist = tape.sqrt(sq)?;
        (Some(features), Some(dist))
    } else {
        (None, None)
    };

    let vs_rel = tape.add_scalar(v_long.values, neg_s)?;
    let vd_rel = tape.add_scalar(v_lat.values, neg_d)?;
    let v_cat = tape.concat(&[vs_rel, vd_rel]);
    let virtual_features = tape.reshape(v_cat, 2 * n_v, 1)?;

    let long0 = 1 + n_a;
    let lat0 = 1 + n_a + n_v;
    let mut edges = Vec::with_capacity(2 * n_a + 2 * n_v + 4 * (n_v - 1));
    for i in 0..n_a {
        edges.push(Edge { src: 0, dst: 1 + i, kind: EdgeKind::Interaction });
    }
    for i in 0..n_a {
        edges.push(Edge { src: 1 + i, dst: 0, kind: EdgeKind::Interaction });
    }
    for j in 0..2 * n_v {
        edges.push(Edge { src: 0, dst: long0 + j, kind: EdgeKind::Transition });
    }
    for base in [long0, lat0] {
        for j in 0..n_v - 1 {
            edges.push(Edge { src: base + j, dst: base + j + 1, kind: EdgeKind::Spacing });
            edges.push(Edge { src: base + j + 1, dst: base + j, kind: EdgeKind::Spacing });
        }
    }

    let mut attr_parts: Vec<Var> = Vec::with_capacity(6);
    if let Some(dist) = actor_distance {
        attr_parts.push(dist);
        attr_parts.push(dist);
    }
    let transition = tape.leaf(Tensor::row(vec![t_s; 2 * n_v]));
    attr_parts.push(transition);
    let pairs = 2 * (n_v - 1);
    attr_parts.extend(std::iter::repeat_n(v_long.spacing, pairs));
    attr_parts.extend(std::iter::repeat_n(v_lat.spacing, pairs));
    let attr_row = tape.concat(&attr_parts);
    let edge_attr = tape.reshape(attr_row, edges.len(), 1)?;

    Ok(STGraph {
        n_actors: n_a,
        n_virtual: n_v,
        ego_features,
        actor_features,
        virtual_features,
        v_long,
        v_lat,
        edges,
        edge_attr,
        actor_distance,
    })
}

/// Builds the step graph from constant inputs; convenient outside the
/// planner's differentiable rollout.
pub fn build_graph_from_state(
    tape: &mut Tape,
    ego: &FrenetState,
    actors_k1: &[(f64, f64)],
    kc: &KinematicConstraints,
    bounds: &RoadBounds,
    t_s: f64,
    n_v: usize,
) -> Result<STGraph, GraphError> {
    let node = EgoNode::constant(tape, ego);
    let window = SpeedWindow::from_constraints(tape, kc);
    let v_long = longitudinal_virtual_nodes(tape, node.s, window, t_s, n_v)?;
    let lat = LateralBounds::constant(tape, bounds);
    let v_lat = lateral_virtual_nodes(tape, node.d, kc.d_ddot_max, lat, t_s, n_v)?;
    build_graph(tape, &node, actors_k1, v_long, v_lat, t_s)
}
