//! The STG network: per-type input projections, one graph attention layer,
//! sum pooling over actors, an MLP decoder and the softmax readout over
//! virtual nodes.
//!
//! The readout is a convex combination of virtual-node positions, so the
//! planned position always lies inside the reachable window whatever the
//! parameter values are.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::graph::{EdgeKind, STGraph, VirtualNodes};

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("parameter {0} missing")]
    Missing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    /// Softmax-normalised attention over neighbours (with self-loops).
    Attention,
    /// Neighbour mean plus a separate self transform.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    /// Embedding size per node.
    pub r: usize,
    pub n_virtual: usize,
    pub hidden: Vec<usize>,
    pub aggregator: Aggregator,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    /// Positions and distances are divided by this before entering the network.
    pub length_scale: f64,
    pub speed_scale: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            r: 8,
            n_virtual: 5,
            hidden: vec![64],
            aggregator: Aggregator::Attention,
            leaky_slope: 0.2,
            elu_alpha: 1.0,
            length_scale: 10.0,
            speed_scale: 10.0,
        }
    }
}

impl GatConfig {
    /// Length of the pooled, concatenated encoding.
    pub fn encoding_len(&self) -> usize {
        2 * self.r + 2 * self.r * self.n_virtual
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl GatParams {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// One line per tensor: `name rows cols v0 v1 ...`. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# stg-params v1\n");
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let _ = write!(out, "{name} {} {}", t.rows(), t.cols());
            for v in t.data() {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`GatParams::to_text`] output, checking every shape against
    /// the layout `cfg` implies.
    pub fn from_text(text: &str, cfg: &GatConfig) -> Result<Self, ParamsError> {
        let template = layout(cfg);
        let mut found: Vec<Option<Tensor>> = vec![None; template.len()];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ParamsError::Parse { line: ln + 1, msg };
            let mut it = line.split_whitespace();
            let name = it.next().ok_or_else(|| err("empty".into()))?;
            let rows: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad row count".into()))?;
            let cols: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad column count".into()))?;
            let data: Vec<f64> = it
                .map(|v| v.parse::<f64>().map_err(|e| err(format!("{v}: {e}"))))
                .collect::<Result<_, _>>()?;
            if data.len() != rows * cols {
                return Err(err(format!("expected {} values, found {}", rows * cols, data.len())));
            }
            let Some(k) = template.iter().position(|(n, _)| n == name) else {
                return Err(err(format!("unknown parameter {name}")));
            };
            if template[k].1 != (rows, cols) {
                return Err(ParamsError::Shape {
                    name: name.to_string(),
                    expected: template[k].1,
                    found: (rows, cols),
                });
            }
            found[k] = Some(Tensor::new(rows, cols, data));
        }
        let mut tensors = Vec::with_capacity(template.len());
        for ((name, _), t) in template.iter().zip(found) {
            tensors.push(t.ok_or_else(|| ParamsError::Missing(name.clone()))?);
        }
        Ok(Self {
            names: template.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, cfg: &GatConfig) -> Result<Self, ParamsError> {
        Self::from_text(&std::fs::read_to_string(path)?, cfg)
    }
}

/// Parameter names and shapes in storage order.
fn layout(cfg: &GatConfig) -> Vec<(String, (usize, usize))> {
    let r = cfg.r;
    let mut out = vec![
        ("proj_ego.w".to_string(), (4, r)),
        ("proj_ego.b".to_string(), (1, r)),
        ("proj_actor.w".to_string(), (2, r)),
        ("proj_actor.b".to_string(), (1, r)),
        ("proj_virtual.w".to_string(), (1, r)),
        ("proj_virtual.b".to_string(), (1, r)),
        ("gat.w".to_string(), (r, r)),
        ("gat.att".to_string(), (1, 2 * r + 1)),
        ("gat.b".to_string(), (1, r)),
    ];
    if cfg.aggregator == Aggregator::Mean {
        out.push(("gat.self".to_string(), (r, r)));
    }
    let mut fan_in = cfg.encoding_len();
    let widths: Vec<usize> = cfg.hidden.iter().copied().chain([2 * cfg.n_virtual]).collect();
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("mlp.{i}.w"), (fan_in, w)));
        out.push((format!("mlp.{i}.b"), (1, w)));
        fan_in = w;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Slots {
    proj_ego: (usize, usize),
    proj_actor: (usize, usize),
    proj_virtual: (usize, usize),
    gat_w: usize,
    gat_att: usize,
    gat_b: usize,
    gat_self: Option<usize>,
    mlp_start: usize,
}

/// Parameters bound to one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub s: Var,
    pub d: Var,
    pub weights_s: Var,
    pub weights_d: Var,
    pub logits: Var,
    /// Attention of the ego on each actor, in actor order.
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StgNetwork {
    cfg: GatConfig,
    slots: Slots,
}

/// Incoming edges grouped by destination, self-loops first when present.
struct Incidence {
    src: Vec<usize>,
    dst: Vec<usize>,
    /// Index into the graph's edge attributes; `edges.len()` marks a self-loop.
    attr: Vec<usize>,
    offsets: Vec<usize>,
}

fn incidence(graph: &STGraph, self_loops: bool) -> Incidence {
    let n = graph.node_count();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, e) in graph.edges.iter().enumerate() {
        incoming[e.dst].push(k);
    }
    let total = graph.edges.len() + if self_loops { n } else { 0 };
    let mut inc = Incidence {
        src: Vec::with_capacity(total),
        dst: Vec::with_capacity(total),
        attr: Vec::with_capacity(total),
        offsets: Vec::with_capacity(n + 1),
    };
    inc.offsets.push(0);
    for (p, edges) in incoming.iter().enumerate() {
        if self_loops {
            inc.src.push(p);
            inc.dst.push(p);
            inc.attr.push(graph.edges.len());
        }
        for &k in edges {
            inc.src.push(graph.edges[k].src);
            inc.dst.push(p);
            inc.attr.push(k);
        }
        inc.offsets.push(inc.src.len());
    }
    inc
}

impl StgNetwork {
    pub fn new(cfg: GatConfig) -> Self {
        let names: Vec<String> = layout(&cfg).into_iter().map(|(n, _)| n).collect();
        let pos = |n: &str| names.iter().position(|x| x == n).unwrap();
        let slots = Slots {
            proj_ego: (pos("proj_ego.w"), pos("proj_ego.b")),
            proj_actor: (pos("proj_actor.w"), pos("proj_actor.b")),
            proj_virtual: (pos("proj_virtual.w"), pos("proj_virtual.b")),
            gat_w: pos("gat.w"),
            gat_att: pos("gat.att"),
            gat_b: pos("gat.b"),
            gat_self: names.iter().position(|x| x == "gat.self"),
            mlp_start: pos("mlp.0.w"),
        };
        Self { cfg, slots }
    }

    pub fn config(&self) -> &GatConfig {
        &self.cfg
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation. A bias
    /// shares the fan-in of the weight it follows.
    pub fn init_params(&self, seed: u64) -> GatParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(&self.cfg);
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        let mut last_fan_in = 1;
        for (name, (rows, cols)) in entries {
            let fan_in = if name.ends_with(".b") {
                last_fan_in
            } else if name == "gat.att" {
                cols
            } else {
                rows
            };
            last_fan_in = fan_in;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            names.push(name);
            tensors.push(Tensor::new(rows, cols, data));
        }
        GatParams { names, tensors }
    }

    pub fn bind(&self, tape: &mut Tape, params: &GatParams) -> BoundParams {
        BoundParams {
            vars: params.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Per-node embeddings (`n x r`) and, for the attention aggregator, the
    /// normalised coefficient of every incoming edge with its incidence.
    pub fn gat_layer(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        graph: &STGraph,
    ) -> Result<(Var, Vec<f64>, Vec<(usize, usize)>), DiffError> {
        let cfg = &self.cfg;
        let r = cfg.r;
        let n = graph.node_count();
        let v = &p.vars;

        let ego_scale = tape.leaf(Tensor::row(vec![
            1.0 / cfg.length_scale,
            1.0 / cfg.length_scale,
            1.0 / cfg.speed_scale,
            1.0 / cfg.speed_scale,
        ]));
        let ego_x = tape.mul(graph.ego_features, ego_scale)?;
        let ego_h = tape.matmul(ego_x, v[self.slots.proj_ego.0])?;
        let ego_h = tape.add_row(ego_h, v[self.slots.proj_ego.1])?;
        let mut rows = vec![ego_h];
        if let Some(actors) = graph.actor_features {
            let x = tape.scale(actors, 1.0 / cfg.length_scale);
            let h = tape.matmul(x, v[self.slots.proj_actor.0])?;
            rows.push(tape.add_row(h, v[self.slots.proj_actor.1])?);
        }
        let vh = tape.matmul(graph.virtual_features, v[self.slots.proj_virtual.0])?;
        rows.push(tape.add_row(vh, v[self.slots.proj_virtual.1])?);
        let flat = tape.concat(&rows);
        let h = tape.reshape(flat, n, r)?;
        let z = tape.matmul(h, v[self.slots.gat_w])?;

        match cfg.aggregator {
            Aggregator::Attention => {
                let inc = incidence(graph, true);
                let scale: Vec<f64> = graph
                    .edges
                    .iter()
                    .map(|e| match e.kind {
                        EdgeKind::Interaction => 1.0 / cfg.length_scale,
                        _ => 1.0,
                    })
                    .chain([0.0])
                    .collect();
                let zero = tape.leaf(Tensor::zeros(1, 1));
                let pool = tape.concat(&[graph.edge_attr, zero]);
                let pool = tape.reshape(pool, scale.len(), 1)?;
                let scale = tape.leaf(Tensor::column(scale));
                let pool = tape.mul(pool, scale)?;
                let attr = tape.gather_rows(pool, &inc.attr)?;

                let att = v[self.slots.gat_att];
                let a_dst = tape.slice(att, 0, r)?;
                let a_dst = tape.reshape(a_dst, r, 1)?;
                let a_src = tape.slice(att, r, r)?;
                let a_src = tape.reshape(a_src, r, 1)?;
                let a_edge = tape.slice(att, 2 * r, 1)?;

                let score_dst = tape.matmul(z, a_dst)?;
                let score_src = tape.matmul(z, a_src)?;
                let e_dst = tape.gather_rows(score_dst, &inc.dst)?;
                let e_src = tape.gather_rows(score_src, &inc.src)?;
                let e_attr = tape.mul_scalar(attr, a_edge)?;
                let e = tape.add(e_dst, e_src)?;
                let e = tape.add(e, e_attr)?;
                let e = tape.leaky_relu(e, cfg.leaky_slope);
                let alpha = tape.segment_softmax(e, &inc.offsets)?;

                let msgs = tape.gather_rows(z, &inc.src)?;
                let msgs = tape.scale_rows(msgs, alpha)?;
                let agg = tape.segment_sum_rows(msgs, &inc.offsets)?;
                let out = tape.add_row(agg, v[self.slots.gat_b])?;
                let out = tape.elu(out, cfg.elu_alpha);
                let alphas = tape.value(alpha).data().to_vec();
                let pairs = inc.dst.into_iter().zip(inc.src).collect();
                Ok((out, alphas, pairs))
            }
            Aggregator::Mean => {
                let inc = incidence(graph, false);
                let weights: Vec<f64> = inc
                    .offsets
                    .windows(2)
                    .flat_map(|w| {
                        let deg = (w[1] - w[0]) as f64;
                        std::iter::repeat_n(1.0 / deg, w[1] - w[0])
                    })
                    .collect();
                let w = tape.leaf(Tensor::column(weights.clone()));
                let msgs = tape.gather_rows(z, &inc.src)?;
                let msgs = tape.scale_rows(msgs, w)?;
                let agg = tape.segment_sum_rows(msgs, &inc.offsets)?;
                let own = tape.matmul(h, v[self.slots.gat_self.expect("mean aggregator slot")])?;
                let out = tape.add(agg, own)?;
                let out = tape.add_row(out, v[self.slots.gat_b])?;
                let out = tape.elu(out, cfg.elu_alpha);
                let pairs = inc.dst.into_iter().zip(inc.src).collect();
                Ok((out, weights, pairs))
            }
        }
    }

    /// Ego embedding, summed actor embeddings, then the flattened
    /// longitudinal and lateral virtual-node embeddings.
    pub fn encode(&self, tape: &mut Tape, embeddings: Var, graph: &STGraph) -> Result<Var, DiffError> {
        let n_a = graph.n_actors;
        let n_v = graph.n_virtual;
        let ego = tape.gather_rows(embeddings, &[0])?;
        let actor_rows: Vec<usize> = (1..=n_a).collect();
        let actors = tape.gather_rows(embeddings, &actor_rows)?;
        let pooled = tape.segment_sum_rows(actors, &[0, n_a])?;
        let long: Vec<usize> = (0..n_v).map(|j| graph.long_node(j)).collect();
        let lat: Vec<usize> = (0..n_v).map(|j| graph.lat_node(j)).collect();
        let vs = tape.gather_rows(embeddings, &long)?;
        let vd = tape.gather_rows(embeddings, &lat)?;
        Ok(tape.concat(&[ego, pooled, vs, vd]))
    }

    /// MLP decoder to `2 N_V` logits.
    pub fn decode(&self, tape: &mut Tape, p: &BoundParams, encoding: Var) -> Result<Var, DiffError> {
        let layers = self.cfg.hidden.len() + 1;
        let mut x = encoding;
        for i in 0..layers {
            let w = p.vars[self.slots.mlp_start + 2 * i];
            let b = p.vars[self.slots.mlp_start + 2 * i + 1];
            x = tape.matmul(x, w)?;
            x = tape.add_row(x, b)?;
            if i + 1 < layers {
                x = tape.elu(x, self.cfg.elu_alpha);
            }
        }
        Ok(x)
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, graph: &STGraph) -> Result<NetworkOutput, DiffError> {
        let (emb, alphas, pairs) = self.gat_layer(tape, p, graph)?;
        let encoding = self.encode(tape, emb, graph)?;
        let logits = self.decode(tape, p, encoding)?;
        let (s, d, weights_s, weights_d) = decode_and_readout(tape, logits, &graph.v_long, &graph.v_lat)?;
        let mut attention = vec![0.0; graph.n_actors];
        for ((dst, src), a) in pairs.into_iter().zip(alphas) {
            if dst == 0 && src != 0 {
                attention[src - 1] = a;
            }
        }
        Ok(NetworkOutput {
            s,
            d,
            weights_s,
            weights_d,
            logits,
            attention,
        })
    }
}

/// Splits `2 N_V` logits into longitudinal and lateral softmax weights and
/// returns `(s, d, weights_s, weights_d)` as inner products with the
/// virtual-node positions.
pub fn decode_and_readout(
    tape: &mut Tape,
    logits: Var,
    v_long: &VirtualNodes,
    v_lat: &VirtualNodes,
) -> Result<(Var, Var, Var, Var), DiffError> {
    let n_v = tape.value(v_long.values).len();
    if tape.value(logits).len() != 2 * n_v || tape.value(v_lat.values).len() != n_v {
        return Err(DiffError::ShapeMismatch {
            op: "readout",
            left: tape.value(logits).shape(),
            right: (2, n_v),
        });
    }
    let ls = tape.slice(logits, 0, n_v)?;
    let ld = tape.slice(logits, n_v, n_v)?;
    let ws = tape.softmax(ls);
    let wd = tape.softmax(ld);
    let s = tape.dot(ws, v_long.values)?;
    let d = tape.dot(wd, v_lat.values)?;
    Ok((s, d, ws, wd))
}
