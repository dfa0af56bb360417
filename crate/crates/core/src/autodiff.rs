//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s in execution
//! order. [`Tape::backward`] walks the tape from the root towards the leaves
//! and accumulates exact partials. The tape is rebuilt for every forward pass.
//!
//! Broadcasting exists only for [`Tape::bias_add`]; every other shape
//! mismatch is an error.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {expected} entries, got {got}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} has a zero or missing dimension")]
    EmptyShape(Vec<usize>),
    #[error("non-finite tensor entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("{op}: input {value} at index {index} outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Validated constructor: positive dimensions, matching length, finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(AutodiffError::EmptyShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::BadLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![1], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    // Op outputs skip validation; forward values may legitimately overflow and
    // callers (e.g. training) check the final loss.
    fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single entry of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    MatVec,
    Scale,
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    Dot,
    NormSq,
    BiasAdd,
}

#[derive(Debug)]
struct TapeNode {
    value: Tensor,
    op: OpTag,
    parents: [usize; 2],
    n_parents: u8,
    // Scale factor for `Scale`; unused otherwise.
    factor: f64,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

/// Gradient of a scalar root with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::raw(self.shapes[v.0].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => Tensor::raw(self.shapes[v.0].clone(), g),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> OpTag {
        self.nodes[v.0].op
    }

    pub fn parents(&self, v: Var) -> &[usize] {
        let n = &self.nodes[v.0];
        &n.parents[..n.n_parents as usize]
    }

    fn push(&mut self, value: Tensor, op: OpTag, parents: &[Var], factor: f64) -> Var {
        let mut p = [0usize; 2];
        for (slot, v) in p.iter_mut().zip(parents) {
            *slot = v.0;
        }
        self.nodes.push(TapeNode {
            value,
            op,
            parents: p,
            n_parents: parents.len() as u8,
            factor,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(AutodiffError::UnknownVar(v.0))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, OpTag::Leaf, &[], 0.0)
    }

    fn zip_same(
        &mut self,
        op: OpTag,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape != tb.shape {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::raw(ta.shape.clone(), data);
        Ok(self.push(out, op, &[a, b], 0.0))
    }

    fn map(&mut self, op: OpTag, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.check(a)?;
        let out = Tensor::raw(ta.shape.clone(), ta.data.iter().map(|&x| f(x)).collect());
        Ok(self.push(out, op, &[a], 0.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(OpTag::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(OpTag::Sub, "sub", a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(OpTag::Mul, "mul", a, b, |x, y| x * y)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, &ta.data, (k, 1), &tb.data, (n, 1), &mut c, false);
        let out = Tensor::raw(vec![m, n], c);
        Ok(self.push(out, OpTag::MatMul, &[a, b], 0.0))
    }

    /// `[m, k] x [k] -> [m]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ta, tx) = (self.check(a)?, self.check(x)?);
        if ta.shape.len() != 2 || tx.shape.len() != 1 || ta.shape[1] != tx.shape[0] {
            return Err(mismatch("matvec", ta, tx));
        }
        let k = ta.shape[1];
        let data = ta
            .data
            .chunks_exact(k)
            .map(|row| row.iter().zip(&tx.data).map(|(p, q)| p * q).sum())
            .collect();
        let out = Tensor::raw(vec![ta.shape[0]], data);
        Ok(self.push(out, OpTag::MatVec, &[a, x], 0.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.check(a)?;
        let out = Tensor::raw(ta.shape.clone(), ta.data.iter().map(|&x| c * x).collect());
        Ok(self.push(out, OpTag::Scale, &[a], c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(OpTag::Relu, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(OpTag::Exp, a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ta = self.check(a)?;
        if let Some((index, &value)) = ta.data.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(AutodiffError::Domain {
                op: "log",
                index,
                value,
            });
        }
        self.map(OpTag::Log, a, f64::ln)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.data.iter().sum();
        Ok(self.push(Tensor::raw(vec![1], vec![s]), OpTag::Sum, &[a], 0.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.check(a)?;
        let s = ta.data.iter().sum::<f64>() / ta.len() as f64;
        Ok(self.push(Tensor::raw(vec![1], vec![s]), OpTag::Mean, &[a], 0.0))
    }

    /// Inner product of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape != tb.shape {
            return Err(mismatch("dot", ta, tb));
        }
        let s = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::raw(vec![1], vec![s]), OpTag::Dot, &[a, b], 0.0))
    }

    pub fn norm_sq(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.data.iter().map(|x| x * x).sum();
        Ok(self.push(Tensor::raw(vec![1], vec![s]), OpTag::NormSq, &[a], 0.0))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn bias_add(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(bias)?);
        if ta.shape.len() != 2 || tb.shape.len() != 1 || ta.shape[1] != tb.shape[0] {
            return Err(mismatch("bias_add", ta, tb));
        }
        let mut data = ta.data.clone();
        kernels::add_bias(&mut data, &tb.data);
        let out = Tensor::raw(ta.shape.clone(), data);
        Ok(self.push(out, OpTag::BiasAdd, &[a, bias], 0.0))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.check(root)?;
        if !root_val.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_val.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let p = node.parents;
            match node.op {
                OpTag::Leaf => {}
                OpTag::Add => {
                    accumulate(&mut grads, p[0], &g);
                    accumulate(&mut grads, p[1], &g);
                }
                OpTag::Sub => {
                    accumulate(&mut grads, p[0], &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, p[1], &neg);
                }
                OpTag::Mul => {
                    let (a, b) = (&self.nodes[p[0]].value.data, &self.nodes[p[1]].value.data);
                    let ga: Vec<f64> = g.iter().zip(b).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(a).map(|(g, a)| g * a).collect();
                    accumulate(&mut grads, p[0], &ga);
                    accumulate(&mut grads, p[1], &gb);
                }
                OpTag::MatMul => {
                    let (ta, tb) = (&self.nodes[p[0]].value, &self.nodes[p[1]].value);
                    let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                    // dA = G B^T, dB = A^T G
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, &g, (n, 1), &tb.data, (1, n), &mut ga, false);
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, &ta.data, (1, k), &g, (n, 1), &mut gb, false);
                    accumulate(&mut grads, p[0], &ga);
                    accumulate(&mut grads, p[1], &gb);
                }
                OpTag::MatVec => {
                    let (ta, tx) = (&self.nodes[p[0]].value, &self.nodes[p[1]].value);
                    let k = ta.shape[1];
                    let ga: Vec<f64> = g
                        .iter()
                        .flat_map(|&gi| tx.data.iter().map(move |&xj| gi * xj))
                        .collect();
                    let mut gx = vec![0.0; k];
                    for (row, &gi) in ta.data.chunks_exact(k).zip(&g) {
                        for (acc, &a) in gx.iter_mut().zip(row) {
                            *acc += a * gi;
                        }
                    }
                    accumulate(&mut grads, p[0], &ga);
                    accumulate(&mut grads, p[1], &gx);
                }
                OpTag::Scale => {
                    let c = node.factor;
                    let ga: Vec<f64> = g.iter().map(|v| c * v).collect();
                    accumulate(&mut grads, p[0], &ga);
                }
                OpTag::Relu => {
                    let x = &self.nodes[p[0]].value.data;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, p[0], &ga);
                }
                OpTag::Exp => {
                    let y = &node.value.data;
                    let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads, p[0], &ga);
                }
                OpTag::Log => {
                    let x = &self.nodes[p[0]].value.data;
                    let ga: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads, p[0], &ga);
                }
                OpTag::Sum => {
                    let n = self.nodes[p[0]].value.len();
                    accumulate(&mut grads, p[0], &vec![g[0]; n]);
                }
                OpTag::Mean => {
                    let n = self.nodes[p[0]].value.len();
                    accumulate(&mut grads, p[0], &vec![g[0] / n as f64; n]);
                }
                OpTag::Dot => {
                    let (a, b) = (&self.nodes[p[0]].value.data, &self.nodes[p[1]].value.data);
                    let ga: Vec<f64> = b.iter().map(|b| g[0] * b).collect();
                    let gb: Vec<f64> = a.iter().map(|a| g[0] * a).collect();
                    accumulate(&mut grads, p[0], &ga);
                    accumulate(&mut grads, p[1], &gb);
                }
                OpTag::NormSq => {
                    let x = &self.nodes[p[0]].value.data;
                    let ga: Vec<f64> = x.iter().map(|x| 2.0 * g[0] * x).collect();
                    accumulate(&mut grads, p[0], &ga);
                }
                OpTag::BiasAdd => {
                    let n = self.nodes[p[1]].value.len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, p[0], &g);
                    accumulate(&mut grads, p[1], &gb);
                }
            }
            // Leaves keep their gradient for the caller.
            if node.op == OpTag::Leaf {
                grads[i] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Max over coordinates of `|analytic - central_fd| / max(1, |analytic|)`.
///
/// Returns `f64::INFINITY` when any evaluation is non-finite.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point);
        let out = f(&mut tape, v)?;
        let val = tape.value(out);
        if !val.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(val.shape.clone()));
        }
        Ok(val.item())
    };

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(&mut tape, v)?;
    let analytic = tape.backward(out)?.take(v);

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data[i] += h;
        let mut minus = x.clone();
        minus.data[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data[i];
        let err = (a - fd).abs() / a.abs().max(1.0);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Dense kernels shared by the tape and tape-free inference paths.
pub(crate) mod kernels {
    /// `c = a * b` (or `c += a * b` when `accumulate`), with explicit
    /// (row, col) strides so transposed operands need no copy.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        a_strides: (usize, usize),
        b: &[f64],
        b_strides: (usize, usize),
        c: &mut [f64],
        accumulate: bool,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: bounds asserted above; strides describe in-bounds views of
        // `a` ([m, k]) and `b` ([k, n]); `c` is a dense [m, n] row-major block.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                a_strides.0 as isize,
                a_strides.1 as isize,
                b.as_ptr(),
                b_strides.0 as isize,
                b_strides.1 as isize,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    pub fn add_bias(rows: &mut [f64], bias: &[f64]) {
        for row in rows.chunks_exact_mut(bias.len()) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    pub fn relu_inplace(xs: &mut [f64]) {
        for v in xs {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[-1.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn matvec_identity() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::identity(2));
        let x = t.leaf(v(&[3.0, 4.0]));
        let y = t.matvec(a, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn norm_sq_forward() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0]));
        let y = t.norm_sq(x).unwrap();
        assert_eq!(t.value(y).item(), 5.0);
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0).unwrap());
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn norm_sq_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0]));
        let y = t.norm_sq(x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn log_sum_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.0, 0.0]));
        let two = t.leaf(Tensor::scalar(2.0).unwrap());
        let s = t.sum(x).unwrap();
        let s2 = t.add(s, two).unwrap();
        let y = t.log(s2).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x).data(), &[0.5, 0.5]);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0]));
        let unused = t.leaf(v(&[5.0, 6.0, 7.0]));
        let _side = t.exp(unused).unwrap();
        let y = t.norm_sq(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[1.0, 2.0]));
        let b = t.leaf(v(&[1.0, 2.0, 3.0]));
        assert!(matches!(
            t.add(a, b),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            t.matmul(a, b),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
        let z = t.leaf(v(&[1.0, 0.0]));
        assert!(matches!(
            t.log(z),
            Err(AutodiffError::Domain { index: 1, .. })
        ));
        assert!(matches!(
            t.backward(a),
            Err(AutodiffError::NonScalarRoot(_))
        ));
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::vector(vec![f64::NAN]).is_err());
    }

    #[test]
    fn tape_is_topological() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0]));
        let y = t.exp(x).unwrap();
        let z = t.mul(x, y).unwrap();
        let s = t.sum(z).unwrap();
        for node in [y, z, s] {
            assert!(t.parents(node).iter().all(|&p| p < node.id()));
        }
    }

    #[test]
    fn grad_check_examples() {
        let x = v(&[1.0, 2.0]);
        let e = grad_check(|t, x| t.norm_sq(x), &x, 1e-5).unwrap();
        assert!(e <= 1e-8, "{e}");

        let x = v(&[0.3, -0.1]);
        let e = grad_check(
            |t, x| {
                let s = t.sum(x)?;
                let two = t.leaf(Tensor::scalar(2.0)?);
                let s2 = t.add(s, two)?;
                t.log(s2)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(e <= 1e-6, "{e}");
    }
}
