//! Dense tensor values and recorded-operation reverse-mode differentiation.
//!
//! A [`Tensor`] is a plain value: shape plus a flat `f64` buffer. All
//! computation happens on a [`Tape`], which records every operation into a
//! topologically ordered node list; [`Tape::backward`] replays the list in
//! reverse to produce exact reverse-mode gradients.
//!
//! Shapes are restricted to vectors `[n]` and row-major matrices `[r, c]`;
//! scalars are 1-vectors. Broadcasting is deliberately narrow: elementwise
//! ops accept equal shapes, or a scalar paired with a tensor. Every
//! operation checks its result for NaN/Inf and fails rather than propagate.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&e| e == 0) {
        return Err(Error::Dim(format!("invalid shape {shape:?}")));
    }
    Ok(())
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense n-dimensional value. `data` is shared so that binding a large
/// parameter onto a tape never copies the buffer.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    pub requires_grad: bool,
    /// Accumulated gradient, same layout as `data`.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::Dim(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = numel(&shape);
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        Rc::make_mut(&mut self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Add `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, &v) in grad.iter_mut().zip(g) {
            *gi += v;
        }
    }

    pub(crate) fn shared_data(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    /// `aᵀ · b` without materializing the transpose.
    MatmulTn { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Relu { a: Var },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Square { a: Var },
    Ln { a: Var },
    Softmax { a: Var },
    Concat { parts: Vec<Var> },
    MeanRows { parts: Vec<Var> },
    StackCols { parts: Vec<Var> },
    SumAll { a: Var },
    Pick { a: Var, index: usize },
    Slice { a: Var, start: usize, len: usize },
    Col { m: Var, col: usize },
}

struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Nodes are appended in execution order, so the
/// list is always a valid topological order and backward is a single
/// reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    /// Persistent per-node gradients; repeated backward calls accumulate
    /// until [`Tape::zero_grads`].
    grads: RefCell<Vec<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Result<Var> {
        self.push_shared(shape, Rc::new(value), op, needs_grad)
    }

    fn push_shared(
        &self,
        shape: Vec<usize>,
        value: Rc<Vec<f64>>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var> {
        let name = op_name(&op);
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Value of a scalar (1-element) node.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        if n.value.len() != 1 {
            return Err(Error::Contract(format!(
                "expected scalar, got shape {:?}",
                n.shape
            )));
        }
        Ok(n.value[0])
    }

    // ---- inputs -------------------------------------------------------

    /// Record a tensor as a leaf; gradient participation follows
    /// `t.requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> Result<Var> {
        self.push_shared(t.shape.clone(), t.shared_data(), Op::Leaf, t.requires_grad)
    }

    pub fn input(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::Dim("input data length mismatch".into()));
        }
        self.push(shape, data, Op::Leaf, requires_grad)
    }

    pub fn constant_vector(&self, data: Vec<f64>) -> Result<Var> {
        let n = data.len();
        self.input(vec![n], data, false)
    }

    // ---- operations ---------------------------------------------------

    /// Matrix product `a · b`; `b` may be a vector (treated as a column).
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 {
            return Err(Error::Dim(format!("matmul lhs must be a matrix, got {sa:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n, vec_out) = match sb.len() {
            1 => (sb[0], 1, true),
            _ => (sb[0], sb[1], false),
        };
        if k != kb {
            return Err(Error::Dim(format!(
                "matmul inner dims disagree: {sa:?} vs {sb:?}"
            )));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &va[i * k..(i + 1) * k];
            for (kk, &aik) in row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &vb[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        let shape = if vec_out { vec![m] } else { vec![m, n] };
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, Op::Matmul { a, b }, needs)
    }

    /// `aᵀ · b` where `a` is `[k, m]` and `b` is `[k, n]` or `[k]`.
    pub fn matmul_tn(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 {
            return Err(Error::Dim(format!(
                "matmul_tn lhs must be a matrix, got {sa:?}"
            )));
        }
        let (k, m) = (sa[0], sa[1]);
        let (kb, n, vec_out) = match sb.len() {
            1 => (sb[0], 1, true),
            _ => (sb[0], sb[1], false),
        };
        if k != kb {
            return Err(Error::Dim(format!(
                "matmul_tn inner dims disagree: {sa:?}ᵀ vs {sb:?}"
            )));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for kk in 0..k {
            let arow = &va[kk * m..(kk + 1) * m];
            let brow = &vb[kk * n..(kk + 1) * n];
            for (i, &aki) in arow.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aki * bkj;
                }
            }
        }
        let shape = if vec_out { vec![m] } else { vec![m, n] };
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, Op::MatmulTn { a, b }, needs)
    }

    fn broadcast_pair(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (numel(&sa), numel(&sb));
        if sa == sb {
            Ok(sa)
        } else if na == 1 {
            Ok(sb)
        } else if nb == 1 {
            Ok(sa)
        } else {
            Err(Error::Dim(format!(
                "{what}: shapes {sa:?} and {sb:?} are neither equal nor scalar-broadcastable"
            )))
        }
    }

    fn elementwise_pair(
        &self,
        a: Var,
        b: Var,
        what: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.broadcast_pair(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = numel(&shape);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let x = if va.len() == 1 { va[0] } else { va[i] };
            let y = if vb.len() == 1 { vb[0] } else { vb[i] };
            *o = f(x, y);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, op, needs)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let needs = self.needs(a);
        self.push(self.shape(a), out, Op::Scale { a, c }, needs)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let needs = self.needs(a);
        self.push(self.shape(a), out, op, needs)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu { a })
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh { a })
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid { a })
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square { a })
    }

    pub fn ln(&self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Ln { a })
    }

    /// Numerically stable softmax over a vector.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 {
            return Err(Error::Dim(format!("softmax expects a vector, got {s:?}")));
        }
        let v = self.value(a);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out = exps.iter().map(|&e| e / sum).collect();
        let needs = self.needs(a);
        self.push(s, out, Op::Softmax { a }, needs)
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dim("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        let mut needs = false;
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::Dim("concat parts must be vectors".into()));
            }
            out.extend_from_slice(&self.value(p));
            needs |= self.needs(p);
        }
        let n = out.len();
        self.push(
            vec![n],
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    /// Arithmetic mean of equally shaped vectors.
    pub fn mean_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("mean_rows over an empty list".into()));
        }
        let shape = self.shape(parts[0]);
        if shape.len() != 1 {
            return Err(Error::Dim("mean_rows parts must be vectors".into()));
        }
        let mut out = vec![0.0; shape[0]];
        let mut needs = false;
        for &p in parts {
            if self.shape(p) != shape {
                return Err(Error::Dim("mean_rows parts disagree in dimension".into()));
            }
            for (o, &v) in out.iter_mut().zip(self.value(p).iter()) {
                *o += v;
            }
            needs |= self.needs(p);
        }
        let inv = 1.0 / parts.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        self.push(
            shape,
            out,
            Op::MeanRows {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    /// Stack M d-vectors into a `[d, M]` matrix (each vector a column).
    pub fn stack_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dim("stack_cols of zero parts".into()));
        }
        let shape = self.shape(parts[0]);
        if shape.len() != 1 {
            return Err(Error::Dim("stack_cols parts must be vectors".into()));
        }
        let (d, m) = (shape[0], parts.len());
        let mut out = vec![0.0; d * m];
        let mut needs = false;
        for (j, &p) in parts.iter().enumerate() {
            if self.shape(p) != shape {
                return Err(Error::Dim("stack_cols parts disagree in dimension".into()));
            }
            for (i, &v) in self.value(p).iter().enumerate() {
                out[i * m + j] = v;
            }
            needs |= self.needs(p);
        }
        self.push(
            vec![d, m],
            out,
            Op::StackCols {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![1], vec![s], Op::SumAll { a }, needs)
    }

    /// Scalar dot product of two equal-length vectors.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) || self.shape(a).len() != 1 {
            return Err(Error::Dim("dot expects equal-length vectors".into()));
        }
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }

    /// Select element `index` of a vector as a scalar.
    pub fn pick(&self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || index >= s[0] {
            return Err(Error::Dim(format!(
                "pick index {index} out of range for shape {s:?}"
            )));
        }
        let v = self.value(a)[index];
        let needs = self.needs(a);
        self.push(vec![1], vec![v], Op::Pick { a, index }, needs)
    }

    /// Contiguous sub-vector `a[start..start+len]`.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || start + len > s[0] || len == 0 {
            return Err(Error::Dim(format!(
                "slice [{start}, {start}+{len}) out of range for shape {s:?}"
            )));
        }
        let out = self.value(a)[start..start + len].to_vec();
        let needs = self.needs(a);
        self.push(vec![len], out, Op::Slice { a, start, len }, needs)
    }

    /// Column `col` of a matrix, as a vector. Realizes a one-hot matmul
    /// as a lookup; backward scatters into the column.
    pub fn col(&self, m: Var, col: usize) -> Result<Var> {
        let s = self.shape(m);
        if s.len() != 2 || col >= s[1] {
            return Err(Error::Dim(format!(
                "col {col} out of range for shape {s:?}"
            )));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(m);
        let out = (0..r).map(|i| v[i * c + col]).collect();
        let needs = self.needs(m);
        self.push(vec![r], out, Op::Col { m, col }, needs)
    }

    // ---- backward -----------------------------------------------------

    /// Reverse-mode sweep from a scalar output. Gradients accumulate into
    /// the tape's per-node grad store across calls.
    pub fn backward(&self, out: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[out.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                nodes[out.0].shape
            )));
        }
        let n = nodes.len();
        // Fresh sweep buffers; persistent grads only receive the result.
        let mut sweep: Vec<Vec<f64>> = vec![Vec::new(); n];
        sweep[out.0] = vec![1.0];

        fn get(sweep: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            if sweep[v.0].is_empty() {
                sweep[v.0] = vec![0.0; len];
            }
            &mut sweep[v.0]
        }

        for idx in (0..n).rev() {
            if sweep[idx].is_empty() || !nodes[idx].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut sweep[idx]);
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                    let (m, k) = (sa[0], sa[1]);
                    let nn = if sb.len() == 1 { 1 } else { sb[1] };
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let ga = get(&mut sweep, *a, m * k);
                        for i in 0..m {
                            for kk in 0..k {
                                let mut s = 0.0;
                                for j in 0..nn {
                                    s += g[i * nn + j] * vb[kk * nn + j];
                                }
                                ga[i * k + kk] += s;
                            }
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let gb = get(&mut sweep, *b, k * nn);
                        for kk in 0..k {
                            for j in 0..nn {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += va[i * k + kk] * g[i * nn + j];
                                }
                                gb[kk * nn + j] += s;
                            }
                        }
                    }
                }
                Op::MatmulTn { a, b } => {
                    let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                    let (k, m) = (sa[0], sa[1]);
                    let nn = if sb.len() == 1 { 1 } else { sb[1] };
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let ga = get(&mut sweep, *a, k * m);
                        for kk in 0..k {
                            for i in 0..m {
                                let mut s = 0.0;
                                for j in 0..nn {
                                    s += vb[kk * nn + j] * g[i * nn + j];
                                }
                                ga[kk * m + i] += s;
                            }
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let gb = get(&mut sweep, *b, k * nn);
                        for kk in 0..k {
                            for j in 0..nn {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += va[kk * m + i] * g[i * nn + j];
                                }
                                gb[kk * nn + j] += s;
                            }
                        }
                    }
                }
                Op::Add { a, b } | Op::Sub { a, b } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) {
                        -1.0
                    } else {
                        1.0
                    };
                    for (operand, sgn) in [(a, 1.0), (b, sign)] {
                        if !nodes[operand.0].needs_grad {
                            continue;
                        }
                        let len = nodes[operand.0].value.len();
                        let go = get(&mut sweep, *operand, len);
                        if len == 1 && g.len() > 1 {
                            go[0] += sgn * g.iter().sum::<f64>();
                        } else {
                            for (o, &gi) in go.iter_mut().zip(&g) {
                                *o += sgn * gi;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    for (operand, other) in [(a, b), (b, a)] {
                        if !nodes[operand.0].needs_grad {
                            continue;
                        }
                        let vo = &nodes[other.0].value;
                        let len = nodes[operand.0].value.len();
                        let go = get(&mut sweep, *operand, len);
                        if len == 1 && g.len() > 1 {
                            let mut s = 0.0;
                            for (i, &gi) in g.iter().enumerate() {
                                let ov = if vo.len() == 1 { vo[0] } else { vo[i] };
                                s += gi * ov;
                            }
                            go[0] += s;
                        } else {
                            for (i, (o, &gi)) in go.iter_mut().zip(&g).enumerate() {
                                let ov = if vo.len() == 1 { vo[0] } else { vo[i] };
                                *o += gi * ov;
                            }
                        }
                    }
                }
                Op::Scale { a, c } => {
                    let len = nodes[a.0].value.len();
                    let ga = get(&mut sweep, *a, len);
                    for (o, &gi) in ga.iter_mut().zip(&g) {
                        *o += c * gi;
                    }
                }
                Op::Relu { a } => {
                    // Subgradient 0 at the kink.
                    let va = Rc::clone(&nodes[a.0].value);
                    let ga = get(&mut sweep, *a, va.len());
                    for (i, (o, &gi)) in ga.iter_mut().zip(&g).enumerate() {
                        if va[i] > 0.0 {
                            *o += gi;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let vy = Rc::clone(&node.value);
                    let ga = get(&mut sweep, *a, vy.len());
                    for (i, (o, &gi)) in ga.iter_mut().zip(&g).enumerate() {
                        *o += gi * (1.0 - vy[i] * vy[i]);
                    }
                }
                Op::Sigmoid { a } => {
                    let vy = Rc::clone(&node.value);
                    let ga = get(&mut sweep, *a, vy.len());
                    for (i, (o, &gi)) in ga.iter_mut().zip(&g).enumerate() {
                        *o += gi * vy[i] * (1.0 - vy[i]);
                    }
                }
                Op::Square { a } => {
                    let va = Rc::clone(&nodes[a.0].value);
                    let ga = get(&mut sweep, *a, va.len());
                    for (i, (o, &gi)) in ga.iter_mut().zip(&g).enumerate() {
                        *o += gi * 2.0 * va[i];
                    }
                }
                Op::Ln { a } => {
                    let va = Rc::clone(&nodes[a.0].value);
                    let ga = get(&mut sweep, *a, va.len());
                    for (i, (o, &gi)) in ga.iter_mut().zip(&g).enumerate() {
                        *o += gi / va[i];
                    }
                }
                Op::Softmax { a } => {
                    let vy = Rc::clone(&node.value);
                    let dot: f64 = vy.iter().zip(&g).map(|(&y, &gi)| y * gi).sum();
                    let ga = get(&mut sweep, *a, vy.len());
                    for (i, o) in ga.iter_mut().enumerate() {
                        *o += vy[i] * (g[i] - dot);
                    }
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if nodes[p.0].needs_grad {
                            let gp = get(&mut sweep, p, len);
                            for (o, &gi) in gp.iter_mut().zip(&g[off..off + len]) {
                                *o += gi;
                            }
                        }
                        off += len;
                    }
                }
                Op::MeanRows { parts } => {
                    let parts = parts.clone();
                    let inv = 1.0 / parts.len() as f64;
                    for p in parts {
                        if !nodes[p.0].needs_grad {
                            continue;
                        }
                        let len = nodes[p.0].value.len();
                        let gp = get(&mut sweep, p, len);
                        for (o, &gi) in gp.iter_mut().zip(&g) {
                            *o += inv * gi;
                        }
                    }
                }
                Op::StackCols { parts } => {
                    let parts = parts.clone();
                    let m = parts.len();
                    for (j, p) in parts.into_iter().enumerate() {
                        if !nodes[p.0].needs_grad {
                            continue;
                        }
                        let len = nodes[p.0].value.len();
                        let gp = get(&mut sweep, p, len);
                        for (i, o) in gp.iter_mut().enumerate() {
                            *o += g[i * m + j];
                        }
                    }
                }
                Op::SumAll { a } => {
                    let len = nodes[a.0].value.len();
                    let ga = get(&mut sweep, *a, len);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
                Op::Pick { a, index } => {
                    let (a, index) = (*a, *index);
                    let len = nodes[a.0].value.len();
                    let ga = get(&mut sweep, a, len);
                    ga[index] += g[0];
                }
                Op::Slice { a, start, len } => {
                    let (a, start, len) = (*a, *start, *len);
                    let alen = nodes[a.0].value.len();
                    let ga = get(&mut sweep, a, alen);
                    for (o, &gi) in ga[start..start + len].iter_mut().zip(&g) {
                        *o += gi;
                    }
                }
                Op::Col { m, col } => {
                    let (m, col) = (*m, *col);
                    let s = &nodes[m.0].shape;
                    let (r, c) = (s[0], s[1]);
                    let gm = get(&mut sweep, m, r * c);
                    for (i, &gi) in g.iter().enumerate() {
                        gm[i * c + col] += gi;
                    }
                }
            }
            // Keep this node's own grad available for queries.
            sweep[idx] = g;
        }

        // Merge the sweep into the persistent accumulator.
        let mut grads = self.grads.borrow_mut();
        grads.resize(n, Vec::new());
        for (acc, s) in grads.iter_mut().zip(sweep) {
            if s.is_empty() {
                continue;
            }
            if acc.is_empty() {
                *acc = s;
            } else {
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a node; zeros if it never influenced a
    /// backward output.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let grads = self.grads.borrow();
        match grads.get(v.0) {
            Some(g) if !g.is_empty() => g.clone(),
            _ => vec![0.0; self.nodes.borrow()[v.0].value.len()],
        }
    }

    pub fn zero_grads(&self) {
        self.grads.borrow_mut().clear();
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::MatmulTn { .. } => "matmul_tn",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Relu { .. } => "relu",
        Op::Tanh { .. } => "tanh",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Square { .. } => "square",
        Op::Ln { .. } => "ln",
        Op::Softmax { .. } => "softmax",
        Op::Concat { .. } => "concat",
        Op::MeanRows { .. } => "mean_rows",
        Op::StackCols { .. } => "stack_cols",
        Op::SumAll { .. } => "sum_all",
        Op::Pick { .. } => "pick",
        Op::Slice { .. } => "slice",
        Op::Col { .. } => "col",
    }
}
