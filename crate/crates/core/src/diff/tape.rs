//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation appends a node to the [`Tape`] holding its forward value
//! and the handles of its operands. [`Tape::backward`] sweeps the nodes in
//! reverse creation order, which is a valid reverse topological order
//! because an operand always exists before the node that consumes it.
//!
//! Non-smooth operations (`min`, `max`, `abs`) propagate the gradient
//! through the selected branch only; ties select the first argument.

use super::tensor::Tensor;
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    Pow(Var, Var),
    Powf(Var, f64),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Min(Var, Var),
    Max(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    GatherRows(Var, Vec<usize>),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Sum(Var),
    Dot(Var, Var),
    Softmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentSumRows(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Adjoint of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.grads[v.0].as_ref().map_or(0.0, Tensor::item)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn expect_scalar(op: &'static str, t: &Tensor, other: &Tensor) -> Result<(), DiffError> {
    if t.shape() != (1, 1) {
        return Err(DiffError::ShapeMismatch {
            op,
            left: other.shape(),
            right: t.shape(),
        });
    }
    Ok(())
}

fn check_segments(op: &'static str, offsets: &[usize], rows: usize) -> Result<(), DiffError> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&rows)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if !ok {
        return Err(DiffError::BadSegments { op, rows });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(capacity),
        }
    }

    /// Drops every node while keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    /// Copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = va.zip_map(vb, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Element-wise quotient. Zero denominators are the caller's concern.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("div", va, vb)?;
        let out = va.zip_map(vb, |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a))
    }

    /// Adds the scalar node `s` to every element of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var, DiffError> {
        let (va, vs) = (self.value(a), self.value(s));
        expect_scalar("add_scalar", vs, va)?;
        let k = vs.item();
        let out = va.map(|x| x + k);
        Ok(self.push(out, Op::AddScalar(a, s)))
    }

    /// Multiplies every element of `a` by the scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, DiffError> {
        let (va, vs) = (self.value(a), self.value(s));
        expect_scalar("mul_scalar", vs, va)?;
        let k = vs.item();
        let out = va.map(|x| x * k);
        Ok(self.push(out, Op::MulScalar(a, s)))
    }

    /// Element-wise `a^b`; `a` must be non-negative.
    pub fn pow(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("pow", va, vb)?;
        if let Some(&bad) = va.data().iter().find(|&&x| x < 0.0) {
            return Err(DiffError::Domain {
                op: "pow",
                value: bad,
            });
        }
        let out = va.zip_map(vb, f64::powf);
        Ok(self.push(out, Op::Pow(a, b)))
    }

    /// Element-wise `a^c` for a constant exponent.
    pub fn powf(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let va = self.value(a);
        if c.fract() != 0.0 {
            if let Some(&bad) = va.data().iter().find(|&&x| x < 0.0) {
                return Err(DiffError::Domain {
                    op: "powf",
                    value: bad,
                });
            }
        }
        let out = va.map(|x| x.powf(c));
        Ok(self.push(out, Op::Powf(a, c)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        if let Some(&bad) = va.data().iter().find(|&&x| x <= 0.0) {
            return Err(DiffError::Domain { op: "log", value: bad });
        }
        let out = va.map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        if let Some(&bad) = va.data().iter().find(|&&x| x < 0.0) {
            return Err(DiffError::Domain {
                op: "sqrt",
                value: bad,
            });
        }
        let out = va.map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("min", va, vb)?;
        let out = va.zip_map(vb, |x, y| if x <= y { x } else { y });
        Ok(self.push(out, Op::Min(a, b)))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("max", va, vb)?;
        let out = va.zip_map(vb, |x, y| if x >= y { x } else { y });
        Ok(self.push(out, Op::Max(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let va = self.value(a);
        if va.len() != rows * cols {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                left: va.shape(),
                right: (rows, cols),
            });
        }
        let out = Tensor::new(rows, cols, va.data().to_vec());
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Flattens every operand in order into a single `1 x n` row.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.value(p).len()).sum();
        let mut data = Vec::with_capacity(total);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::row(data), Op::Concat(parts.to_vec()))
    }

    /// Flat elements `start..start + len` as a `1 x len` row.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let va = self.value(a);
        if start + len > va.len() {
            return Err(DiffError::ShapeMismatch {
                op: "slice",
                left: va.shape(),
                right: (start, len),
            });
        }
        let out = Tensor::row(va.data()[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice(a, start)))
    }

    /// Single flat element as a scalar node.
    pub fn element(&mut self, a: Var, index: usize) -> Result<Var, DiffError> {
        let s = self.slice(a, index, 1)?;
        Ok(s)
    }

    /// Rows of `a` selected (with repetition) by `indices`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let va = self.value(a);
        let cols = va.cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= va.rows()) {
            return Err(DiffError::ShapeMismatch {
                op: "gather_rows",
                left: va.shape(),
                right: (bad, cols),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(va.row_slice(i));
        }
        let out = Tensor::new(indices.len(), cols, data);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let cols = va.cols();
        let mut out = va.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += vb.data()[i % cols];
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// Scales row `i` of `a` by element `i` of `weights`.
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var, DiffError> {
        let (va, vw) = (self.value(a), self.value(weights));
        if vw.len() != va.rows() {
            return Err(DiffError::ShapeMismatch {
                op: "scale_rows",
                left: va.shape(),
                right: vw.shape(),
            });
        }
        let cols = va.cols();
        let mut out = va.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x *= vw.data()[i / cols];
        }
        Ok(self.push(out, Op::ScaleRows(a, weights)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Inner product of two equally sized tensors, read flat.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(DiffError::ShapeMismatch {
                op: "dot",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let s = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Softmax over all elements.
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        softmax_in_place(out.data_mut());
        self.push(out, Op::Softmax(a))
    }

    /// Softmax of a column over consecutive segments
    /// `offsets[i]..offsets[i + 1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var, DiffError> {
        let va = self.value(a);
        if va.cols() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "segment_softmax",
                left: va.shape(),
                right: (va.rows(), 1),
            });
        }
        check_segments("segment_softmax", offsets, va.rows())?;
        let mut out = va.clone();
        for w in offsets.windows(2) {
            softmax_in_place(&mut out.data_mut()[w[0]..w[1]]);
        }
        Ok(self.push(out, Op::SegmentSoftmax(a, offsets.to_vec())))
    }

    /// Sums the rows of each segment; an empty segment yields a zero row.
    pub fn segment_sum_rows(&mut self, a: Var, offsets: &[usize]) -> Result<Var, DiffError> {
        let va = self.value(a);
        check_segments("segment_sum_rows", offsets, va.rows())?;
        let cols = va.cols();
        let segments = offsets.len() - 1;
        let mut data = vec![0.0; segments * cols];
        for (seg, w) in offsets.windows(2).enumerate() {
            let dst = &mut data[seg * cols..(seg + 1) * cols];
            for r in w[0]..w[1] {
                for (d, &x) in dst.iter_mut().zip(va.row_slice(r)) {
                    *d += x;
                }
            }
        }
        let out = Tensor::new(segments, cols, data);
        Ok(self.push(out, Op::SegmentSumRows(a, offsets.to_vec())))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { alpha * x.exp_m1() });
        self.push(out, Op::Elu(a, alpha))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(DiffError::NonScalarOutput { shape: out_shape });
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
        let (r, c) = self.nodes[v.0].value.shape();
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(r, c))
            .data_mut()
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), gd);
                add_into(self.slot(grads, *b), gd);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(grads, *a), gd);
                for (d, &x) in self.slot(grads, *b).iter_mut().zip(gd) {
                    *d -= x;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for ((d, &x), &o) in self.slot(grads, *a).iter_mut().zip(gd).zip(vb) {
                    *d += x * o;
                }
                for ((d, &x), &o) in self.slot(grads, *b).iter_mut().zip(gd).zip(va) {
                    *d += x * o;
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                for ((d, &x), &o) in self.slot(grads, *a).iter_mut().zip(gd).zip(vb) {
                    *d += x / o;
                }
                for (((d, &x), &o), &q) in self.slot(grads, *b).iter_mut().zip(gd).zip(vb).zip(y) {
                    *d -= x * q / o;
                }
            }
            Op::Neg(a) => {
                for (d, &x) in self.slot(grads, *a).iter_mut().zip(gd) {
                    *d -= x;
                }
            }
            Op::Scale(a, c) => {
                for (d, &x) in self.slot(grads, *a).iter_mut().zip(gd) {
                    *d += c * x;
                }
            }
            Op::Offset(a) => add_into(self.slot(grads, *a), gd),
            Op::AddScalar(a, s) => {
                add_into(self.slot(grads, *a), gd);
                self.slot(grads, *s)[0] += gd.iter().sum::<f64>();
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item();
                let va = self.value(*a).data();
                for (d, &x) in self.slot(grads, *a).iter_mut().zip(gd) {
                    *d += k * x;
                }
                self.slot(grads, *s)[0] += gd.iter().zip(va).map(|(x, v)| x * v).sum::<f64>();
            }
            Op::Pow(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for (i, d) in self.slot(grads, *a).iter_mut().enumerate() {
                    *d += gd[i] * vb[i] * va[i].powf(vb[i] - 1.0);
                }
                for (i, d) in self.slot(grads, *b).iter_mut().enumerate() {
                    if va[i] > 0.0 {
                        *d += gd[i] * y[i] * va[i].ln();
                    }
                }
            }
            Op::Powf(a, c) => {
                let va = self.value(*a).data();
                for ((d, &x), &v) in self.slot(grads, *a).iter_mut().zip(gd).zip(va) {
                    *d += x * c * v.powf(c - 1.0);
                }
            }
            Op::Exp(a) => {
                for ((d, &x), &o) in self.slot(grads, *a).iter_mut().zip(gd).zip(y) {
                    *d += x * o;
                }
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                for ((d, &x), &v) in self.slot(grads, *a).iter_mut().zip(gd).zip(va) {
                    *d += x / v;
                }
            }
            Op::Sqrt(a) => {
                for ((d, &x), &o) in self.slot(grads, *a).iter_mut().zip(gd).zip(y) {
                    *d += x * 0.5 / o;
                }
            }
            Op::Abs(a) => {
                let va = self.value(*a).data();
                for ((d, &x), &v) in self.slot(grads, *a).iter_mut().zip(gd).zip(va) {
                    *d += if v >= 0.0 { x } else { -x };
                }
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let first: Vec<bool> = va
                    .iter()
                    .zip(vb)
                    .map(|(&x, &z)| if is_min { x <= z } else { x >= z })
                    .collect();
                for (i, d) in self.slot(grads, *a).iter_mut().enumerate() {
                    if first[i] {
                        *d += gd[i];
                    }
                }
                for (i, d) in self.slot(grads, *b).iter_mut().enumerate() {
                    if !first[i] {
                        *d += gd[i];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.matmul(&vb.transpose());
                add_into(self.slot(grads, *a), ga.data());
                let gb = va.transpose().matmul(g);
                add_into(self.slot(grads, *b), gb.data());
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                add_into(self.slot(grads, *a), gt.data());
            }
            Op::Reshape(a) => add_into(self.slot(grads, *a), gd),
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    add_into(self.slot(grads, *p), &gd[at..at + len]);
                    at += len;
                }
            }
            Op::Slice(a, start) => {
                let dst = self.slot(grads, *a);
                add_into(&mut dst[*start..*start + gd.len()], gd);
            }
            Op::GatherRows(a, indices) => {
                let cols = g.cols();
                let dst = self.slot(grads, *a);
                for (k, &i) in indices.iter().enumerate() {
                    add_into(&mut dst[i * cols..(i + 1) * cols], g.row_slice(k));
                }
            }
            Op::AddRow(a, bias) => {
                add_into(self.slot(grads, *a), gd);
                let cols = g.cols();
                let dst = self.slot(grads, *bias);
                for (i, &x) in gd.iter().enumerate() {
                    dst[i % cols] += x;
                }
            }
            Op::ScaleRows(a, w) => {
                let (va, vw) = (self.value(*a).data(), self.value(*w).data());
                let cols = g.cols();
                for (i, d) in self.slot(grads, *a).iter_mut().enumerate() {
                    *d += gd[i] * vw[i / cols];
                }
                let dst = self.slot(grads, *w);
                for (i, (&x, &v)) in gd.iter().zip(va).enumerate() {
                    dst[i / cols] += x * v;
                }
            }
            Op::Sum(a) => {
                let x = gd[0];
                for d in self.slot(grads, *a).iter_mut() {
                    *d += x;
                }
            }
            Op::Dot(a, b) => {
                let x = gd[0];
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for (d, &o) in self.slot(grads, *a).iter_mut().zip(vb) {
                    *d += x * o;
                }
                for (d, &o) in self.slot(grads, *b).iter_mut().zip(va) {
                    *d += x * o;
                }
            }
            Op::Softmax(a) => softmax_backward(self.slot(grads, *a), gd, y),
            Op::SegmentSoftmax(a, offsets) => {
                let dst = self.slot(grads, *a);
                for w in offsets.windows(2) {
                    let r = w[0]..w[1];
                    softmax_backward(&mut dst[r.clone()], &gd[r.clone()], &y[r]);
                }
            }
            Op::SegmentSumRows(a, offsets) => {
                let cols = g.cols();
                let dst = self.slot(grads, *a);
                for (seg, w) in offsets.windows(2).enumerate() {
                    let src = g.row_slice(seg);
                    for r in w[0]..w[1] {
                        add_into(&mut dst[r * cols..(r + 1) * cols], src);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                for ((d, &x), &v) in self.slot(grads, *a).iter_mut().zip(gd).zip(va) {
                    *d += if v > 0.0 { x } else { slope * x };
                }
            }
            Op::Elu(a, alpha) => {
                let va = self.value(*a).data();
                for (((d, &x), &v), &o) in self.slot(grads, *a).iter_mut().zip(gd).zip(va).zip(y) {
                    *d += if v > 0.0 { x } else { x * (o + alpha) };
                }
            }
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn softmax_backward(dst: &mut [f64], g: &[f64], y: &[f64]) {
    let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(y) {
        *d += yi * (gi - inner);
    }
}
