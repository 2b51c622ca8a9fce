//! Reverse-mode differentiation over a linear recording of matrix ops.
//!
//! A `Tape` is created for a single loss evaluation, values are pushed onto it
//! as constants or trainable leaves, and every op appends one node. `backward`
//! walks the nodes in reverse and accumulates vector-Jacobian products into
//! the leaves that requested gradients.

use super::mlp::{Activation, Mlp, MlpGrads};
use super::{GradError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Act { x: Var, kind: Activation },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Square(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Hcat(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Leaves bound for one pass of an [`Mlp`] through a tape.
#[derive(Clone, Debug)]
pub struct MlpBinding {
    layers: Vec<(Var, Var)>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c`, with arbitrary strides on a and b.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every index addressed through the given
    // strides (checked by callers constructing shapes), and c is exclusively
    // borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x[n×in]·wᵀ + b` for `w` stored `[out×in]`.
pub(crate) fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    let (n, inp) = (x.rows(), x.cols());
    let (out, w_in) = (w.rows(), w.cols());
    if inp != w_in || b.len() != out {
        return Err(GradError::ShapeMismatch(format!(
            "linear: input width {inp}, weight {out}x{w_in}, bias {}",
            b.len()
        )));
    }
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    gemm(n, inp, out, x.data(), inp, 1, w.data(), 1, inp, 1.0, &mut y);
    Tensor::matrix(n, out, y)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by `backward`.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, GradError> {
        let y = linear_forward(self.value(x), self.value(w), self.value(b))?;
        let r = self.req(x) || self.req(w) || self.req(b);
        Ok(self.push(y, Op::Linear { x, w, b }, r))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
        let r = self.req(x);
        self.push(y, Op::Act { x, kind }, r)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(GradError::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let y = self.binary(a, b, "add", |x, y| x + y)?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(y, Op::Add(a, b), r))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let y = self.binary(a, b, "sub", |x, y| x - y)?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(y, Op::Sub(a, b), r))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let y = self.binary(a, b, "mul", |x, y| x * y)?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(y, Op::Mul(a, b), r))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let mut y = self.value(a).clone();
        y.data_mut().iter_mut().for_each(|v| *v *= c);
        let r = self.req(a);
        self.push(y, Op::Scale(a, c), r)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        y.data_mut().iter_mut().for_each(|v| *v *= *v);
        let r = self.req(a);
        self.push(y, Op::Square(a), r)
    }

    /// Per-row sum: `[n, c] -> [n, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let sums: Vec<f32> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let n = sums.len();
        let y = Tensor::matrix(n, 1, sums).expect("row sums match row count");
        let r = self.req(a);
        self.push(y, Op::SumRows(a), r)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).data().iter().sum();
        let r = self.req(a);
        self.push(Tensor::scalar(s), Op::Sum(a), r)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f32 = t.data().iter().sum::<f32>() / t.len().max(1) as f32;
        let r = self.req(a);
        self.push(Tensor::scalar(s), Op::Mean(a), r)
    }

    /// Column-wise concatenation.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let y = Tensor::hcat(&tensors)?;
        let r = parts.iter().any(|&v| self.req(v));
        Ok(self.push(y, Op::Hcat(parts.to_vec()), r))
    }

    /// Records a forward pass of `params` on `input`. With `trainable`, the
    /// weights become gradient-receiving leaves; otherwise they are constants
    /// and only the input path is differentiated.
    pub fn mlp(
        &mut self,
        params: &Mlp,
        input: Var,
        trainable: bool,
    ) -> Result<(Var, MlpBinding), GradError> {
        if self.value(input).cols() != params.in_dim() {
            return Err(GradError::ShapeMismatch(format!(
                "mlp expects input width {}, got {}",
                params.in_dim(),
                self.value(input).cols()
            )));
        }
        let mut h = input;
        let mut layers = Vec::with_capacity(params.layers().len());
        for layer in params.layers() {
            let (w, b) = if trainable {
                (
                    self.variable(layer.weight.clone()),
                    self.variable(layer.bias.clone()),
                )
            } else {
                (
                    self.constant(layer.weight.clone()),
                    self.constant(layer.bias.clone()),
                )
            };
            let z = self.linear(h, w, b)?;
            h = self.activation(z, layer.activation);
            layers.push((w, b));
        }
        self.value(h).ensure_finite("mlp output")?;
        Ok((h, MlpBinding { layers }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        if loss.0 >= self.nodes.len() {
            return Err(GradError::NotRecorded);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(GradError::NotScalar(lv.shape().to_vec()));
        }
        lv.ensure_finite("loss")?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (n, inp, out) = (tx.rows(), tx.cols(), tw.rows());
                    if self.req(*x) {
                        let mut dx = vec![0.0; n * inp];
                        gemm(n, out, inp, g.data(), out, 1, tw.data(), inp, 1, 0.0, &mut dx);
                        accumulate(&mut grads, *x, Tensor::new(tx.shape().to_vec(), dx)?);
                    }
                    if self.req(*w) {
                        let mut dw = vec![0.0; out * inp];
                        gemm(out, n, inp, g.data(), 1, out, tx.data(), inp, 1, 0.0, &mut dw);
                        accumulate(&mut grads, *w, Tensor::new(tw.shape().to_vec(), dw)?);
                    }
                    if self.req(*b) {
                        let mut db = vec![0.0; out];
                        for row in g.data().chunks(out) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        accumulate(&mut grads, *b, Tensor::new(shape, db)?);
                    }
                }
                Op::Act { x, kind } => {
                    let tx = self.value(*x);
                    let dx = tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * kind.derivative(v))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(tx.shape().to_vec(), dx)?);
                }
                Op::Add(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.req(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.req(*b) {
                        let mut neg = g;
                        neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                        accumulate(&mut grads, *b, neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.req(*a) {
                        let d = elementwise(&g, self.value(*b), |gv, o| gv * o)?;
                        accumulate(&mut grads, *a, d);
                    }
                    if self.req(*b) {
                        let d = elementwise(&g, self.value(*a), |gv, o| gv * o)?;
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Scale(a, c) => {
                    let mut d = g;
                    d.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = elementwise(&g, self.value(*a), |gv, x| 2.0 * gv * x)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::SumRows(a) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut d = Vec::with_capacity(ta.len());
                    for &gv in g.data() {
                        d.extend(std::iter::repeat_n(gv, c));
                    }
                    accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), d)?);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    let d = Tensor::full(ta.shape(), g.data()[0]);
                    accumulate(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    let d = Tensor::full(ta.shape(), g.data()[0] / ta.len().max(1) as f32);
                    accumulate(&mut grads, *a, d);
                }
                Op::Hcat(parts) => {
                    let rows = g.rows();
                    let width = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let c = tp.cols();
                        if self.req(*p) {
                            let mut d = Vec::with_capacity(rows * c);
                            for i in 0..rows {
                                let start = i * width + offset;
                                d.extend_from_slice(&g.data()[start..start + c]);
                            }
                            accumulate(&mut grads, *p, Tensor::new(tp.shape().to_vec(), d)?);
                        }
                        offset += c;
                    }
                }
            }
        }

        for g in grads.iter().flatten() {
            g.ensure_finite("gradient")?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn elementwise(
    g: &Tensor,
    other: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor, GradError> {
    let d = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape().to_vec(), d)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(d.data())
            .for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d),
    }
}

/// Gradients of one scalar with respect to every leaf that asked for one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn mlp(&self, binding: &MlpBinding) -> MlpGrads {
        MlpGrads {
            layers: binding
                .layers
                .iter()
                .map(|&(w, b)| (self.wrt(w), self.wrt(b)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient_is_outer_product() {
        // loss = sum(W x) for a single input row: dL/dW[i, j] = x[j].
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[0.5, -2.0, 3.0]]).unwrap());
        let w = tape.variable(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
        let b = tape.variable(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, b).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[0.5, -2.0, 3.0, 0.5, -2.0, 3.0]);
        assert_eq!(g.wrt(b).data(), &[1.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::full(&[2, 2], 3.0));
        let c = tape.constant(Tensor::scalar(4.0));
        let loss = tape.mean(c);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.wrt(w).data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.variable(Tensor::full(&[2, 2], 3.0));
        let sq = tape.square(w);
        assert!(matches!(tape.backward(sq), Err(GradError::NotScalar(_))));
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut other = Tape::new();
        for _ in 0..4 {
            other.constant(Tensor::scalar(1.0));
        }
        let stray = other.constant(Tensor::scalar(1.0));
        let tape = Tape::new();
        assert!(matches!(tape.backward(stray), Err(GradError::NotRecorded)));
    }

    #[test]
    fn hcat_and_mul_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.variable(Tensor::from_rows(&[[1.0], [2.0]]).unwrap());
        let b = tape.variable(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap());
        let m = tape.constant(Tensor::from_rows(&[[2.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap());
        let c = tape.hcat(&[a, b]).unwrap();
        let p = tape.mul(c, m).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[2.0, 1.0]);
        assert_eq!(g.wrt(b).data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
