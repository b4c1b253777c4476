//! Matrix-level reverse-mode tape.
//!
//! Nodes hold 2-D values; the tape is generic over the value type so the
//! same loss definition can be run on plain matrices (gradients) or on
//! [`Dual`] matrices carrying a tangent (forward-over-reverse HVPs). Every
//! backward rule is written with [`Value`] operations, so the reverse sweep
//! itself propagates tangents.
//!
//! Binary elementwise operations broadcast `(1, c)`, `(r, 1)` and `(1, 1)`
//! operands; the backward pass sums gradients back to the operand shape.

use ndarray::{s, Array2, Axis, Zip};

/// A 2-D value the tape can compute with.
pub trait Value: Clone + Send + Sync {
    fn constant(a: Array2<f64>) -> Self;
    fn primal(&self) -> &Array2<f64>;
    fn matmul(&self, rhs: &Self, lhs_t: bool, rhs_t: bool) -> Self;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn tanh(&self) -> Self;
    fn exp(&self) -> Self;
    fn sum_all(&self) -> Self;
    /// `(r, c) -> (r, 1)`.
    fn sum_rows(&self) -> Self;
    /// Sums broadcast axes away until the shape is `shape`.
    fn reduce_to(self, shape: (usize, usize)) -> Self;
    /// `self += rhs` for equal shapes.
    fn add_assign(&mut self, rhs: &Self);
    /// `self · (1 − y²)`: the backward rule of `y = tanh(x)`.
    fn tanh_backward(&self, y: &Self) -> Self;
    fn broadcast_to(&self, shape: (usize, usize)) -> Self;
    /// Reads `rows * cols` entries starting at `offset` from a `(1, n)` row.
    fn slice_flat(&self, offset: usize, rows: usize, cols: usize) -> Self;
    /// Inverse of [`Value::slice_flat`]: writes into a zero `(1, len)` row.
    fn embed_flat(&self, len: usize, offset: usize) -> Self;
    fn all_finite(&self) -> bool;

    fn shape(&self) -> (usize, usize) {
        self.primal().dim()
    }
}

fn mm(a: &Array2<f64>, b: &Array2<f64>, at: bool, bt: bool) -> Array2<f64> {
    match (at, bt) {
        (false, false) => a.dot(b),
        (true, false) => a.t().dot(b),
        (false, true) => a.dot(&b.t()),
        (true, true) => a.t().dot(&b.t()),
    }
}

fn reduce(a: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = a;
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    debug_assert_eq!(out.dim(), shape);
    out
}

fn broadcast(a: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    a.broadcast(shape)
        .expect("incompatible broadcast shape")
        .to_owned()
}

fn slice(a: &Array2<f64>, offset: usize, rows: usize, cols: usize) -> Array2<f64> {
    debug_assert_eq!(a.nrows(), 1);
    a.slice(s![0, offset..offset + rows * cols])
        .to_owned()
        .into_shape_with_order((rows, cols))
        .expect("contiguous slice")
}

fn embed(a: &Array2<f64>, len: usize, offset: usize) -> Array2<f64> {
    let mut out = Array2::zeros((1, len));
    let flat = a.iter().copied();
    for (dst, src) in out.slice_mut(s![0, offset..offset + a.len()]).iter_mut().zip(flat) {
        *dst = src;
    }
    out
}

impl Value for Array2<f64> {
    fn constant(a: Array2<f64>) -> Self {
        a
    }
    fn primal(&self) -> &Array2<f64> {
        self
    }
    fn matmul(&self, rhs: &Self, lhs_t: bool, rhs_t: bool) -> Self {
        mm(self, rhs, lhs_t, rhs_t)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn tanh(&self) -> Self {
        self.mapv(super::tanh)
    }
    fn exp(&self) -> Self {
        self.mapv(f64::exp)
    }
    fn sum_all(&self) -> Self {
        Array2::from_elem((1, 1), self.sum())
    }
    fn sum_rows(&self) -> Self {
        self.sum_axis(Axis(1)).insert_axis(Axis(1))
    }
    fn reduce_to(self, shape: (usize, usize)) -> Self {
        reduce(self, shape)
    }
    fn add_assign(&mut self, rhs: &Self) {
        *self += rhs;
    }
    fn tanh_backward(&self, y: &Self) -> Self {
        Zip::from(self).and(y).map_collect(|g, y| g * (1.0 - y * y))
    }
    fn broadcast_to(&self, shape: (usize, usize)) -> Self {
        broadcast(self, shape)
    }
    fn slice_flat(&self, offset: usize, rows: usize, cols: usize) -> Self {
        slice(self, offset, rows, cols)
    }
    fn embed_flat(&self, len: usize, offset: usize) -> Self {
        embed(self, len, offset)
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// A matrix with a directional derivative attached. `tangent == None` means
/// an exactly-zero tangent and lets constant operands skip work.
#[derive(Debug, Clone)]
pub struct Dual {
    pub value: Array2<f64>,
    pub tangent: Option<Array2<f64>>,
}

impl Dual {
    pub fn new(value: Array2<f64>, tangent: Array2<f64>) -> Self {
        debug_assert_eq!(value.dim(), tangent.dim());
        Dual {
            value,
            tangent: Some(tangent),
        }
    }

    /// Tangent materialized at the value's shape.
    pub fn tangent_or_zero(&self) -> Array2<f64> {
        self.tangent
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.value.dim()))
    }

    fn map_tangent(&self, value: Array2<f64>, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Self {
        Dual {
            value,
            tangent: self.tangent.as_ref().map(f),
        }
    }
}

fn add_opt(a: Option<Array2<f64>>, b: Option<Array2<f64>>) -> Option<Array2<f64>> {
    match (a, b) {
        (None, None) => None,
        (Some(a), None) | (None, Some(a)) => Some(a),
        (Some(a), Some(b)) => Some(&a + &b),
    }
}

impl Value for Dual {
    fn constant(a: Array2<f64>) -> Self {
        Dual {
            value: a,
            tangent: None,
        }
    }
    fn primal(&self) -> &Array2<f64> {
        &self.value
    }
    fn matmul(&self, rhs: &Self, lhs_t: bool, rhs_t: bool) -> Self {
        let value = mm(&self.value, &rhs.value, lhs_t, rhs_t);
        let left = self.tangent.as_ref().map(|t| mm(t, &rhs.value, lhs_t, rhs_t));
        let right = rhs.tangent.as_ref().map(|t| mm(&self.value, t, lhs_t, rhs_t));
        Dual {
            value,
            tangent: add_opt(left, right),
        }
    }
    fn add(&self, rhs: &Self) -> Self {
        let value = &self.value + &rhs.value;
        let shape = value.dim();
        let tangent = add_opt(
            self.tangent.as_ref().map(|t| broadcast(t, shape)),
            rhs.tangent.as_ref().map(|t| broadcast(t, shape)),
        );
        Dual { value, tangent }
    }
    fn sub(&self, rhs: &Self) -> Self {
        let value = &self.value - &rhs.value;
        let shape = value.dim();
        let tangent = add_opt(
            self.tangent.as_ref().map(|t| broadcast(t, shape)),
            rhs.tangent.as_ref().map(|t| -broadcast(t, shape)),
        );
        Dual { value, tangent }
    }
    fn mul(&self, rhs: &Self) -> Self {
        let value = &self.value * &rhs.value;
        let tangent = add_opt(
            self.tangent.as_ref().map(|t| t * &rhs.value),
            rhs.tangent.as_ref().map(|t| &self.value * t),
        );
        Dual { value, tangent }
    }
    fn scale(&self, c: f64) -> Self {
        self.map_tangent(&self.value * c, |t| t * c)
    }
    fn tanh(&self) -> Self {
        let value = self.value.mapv(super::tanh);
        let tangent = self.tangent.as_ref().map(|t| {
            let mut d = value.mapv(|y| 1.0 - y * y);
            d *= t;
            d
        });
        Dual { value, tangent }
    }
    fn exp(&self) -> Self {
        let value = self.value.mapv(f64::exp);
        let tangent = self.tangent.as_ref().map(|t| t * &value);
        Dual { value, tangent }
    }
    fn sum_all(&self) -> Self {
        self.map_tangent(Array2::from_elem((1, 1), self.value.sum()), |t| {
            Array2::from_elem((1, 1), t.sum())
        })
    }
    fn sum_rows(&self) -> Self {
        let f = |a: &Array2<f64>| a.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.map_tangent(f(&self.value), f)
    }
    fn reduce_to(self, shape: (usize, usize)) -> Self {
        Dual {
            value: reduce(self.value, shape),
            tangent: self.tangent.map(|t| reduce(t, shape)),
        }
    }
    fn add_assign(&mut self, rhs: &Self) {
        self.value += &rhs.value;
        self.tangent = match (self.tangent.take(), &rhs.tangent) {
            (t, None) => t,
            (None, Some(r)) => Some(r.clone()),
            (Some(mut t), Some(r)) => {
                t += r;
                Some(t)
            }
        };
    }
    fn tanh_backward(&self, y: &Self) -> Self {
        let value = Zip::from(&self.value).and(&y.value).map_collect(|g, y| g * (1.0 - y * y));
        // d[g (1 − y²)] = dg (1 − y²) − 2 g y dy
        let tangent = match (&self.tangent, &y.tangent) {
            (None, None) => None,
            (Some(dg), None) => Some(Zip::from(dg).and(&y.value).map_collect(|d, y| d * (1.0 - y * y))),
            (None, Some(dy)) => Some(
                Zip::from(&self.value)
                    .and(&y.value)
                    .and(dy)
                    .map_collect(|g, y, d| -2.0 * g * y * d),
            ),
            (Some(dg), Some(dy)) => Some(
                Zip::from(dg)
                    .and(&self.value)
                    .and(&y.value)
                    .and(dy)
                    .map_collect(|dg, g, y, dy| dg * (1.0 - y * y) - 2.0 * g * y * dy),
            ),
        };
        Dual { value, tangent }
    }
    fn broadcast_to(&self, shape: (usize, usize)) -> Self {
        self.map_tangent(broadcast(&self.value, shape), |t| broadcast(t, shape))
    }
    fn slice_flat(&self, offset: usize, rows: usize, cols: usize) -> Self {
        self.map_tangent(slice(&self.value, offset, rows, cols), |t| {
            slice(t, offset, rows, cols)
        })
    }
    fn embed_flat(&self, len: usize, offset: usize) -> Self {
        self.map_tangent(embed(&self.value, len, offset), |t| embed(t, len, offset))
    }
    fn all_finite(&self) -> bool {
        self.value.iter().all(|x| x.is_finite())
            && self
                .tangent
                .as_ref()
                .is_none_or(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    Const,
    Slice(usize, usize),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Exp(usize),
    SumAll(usize),
    SumRows(usize),
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Const => "constant",
            Op::Slice(..) => "slice",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::SumAll(_) => "sum",
            Op::SumRows(_) => "sum_rows",
        }
    }
}

struct Node<V> {
    value: V,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<V> {
    nodes: Vec<Node<V>>,
    non_finite: Option<&'static str>,
}

impl<V: Value> Default for Graph<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Value> Graph<V> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    fn push(&mut self, value: V, op: Op, needs_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Name of the first operation that produced a NaN or infinity.
    pub fn non_finite_op(&self) -> Option<&'static str> {
        self.non_finite
    }

    pub fn value(&self, v: Var) -> &V {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: V) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(V::constant(value), Op::Const, false)
    }

    pub fn scalar(&mut self, c: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), c))
    }

    /// `rows x cols` block (row-major) of a `(1, n)` node starting at `offset`.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let value = self.value(src).slice_flat(offset, rows, cols);
        let g = self.grad_of(src.0);
        self.push(value, Op::Slice(src.0, offset), g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b), false, false);
        let g = self.grad_of(a.0) || self.grad_of(b.0);
        self.push(value, Op::MatMul(a.0, b.0), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let g = self.grad_of(a.0) || self.grad_of(b.0);
        self.push(value, Op::Add(a.0, b.0), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let g = self.grad_of(a.0) || self.grad_of(b.0);
        self.push(value, Op::Sub(a.0, b.0), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).mul(self.value(b));
        let g = self.grad_of(a.0) || self.grad_of(b.0);
        self.push(value, Op::Mul(a.0, b.0), g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let g = self.grad_of(a.0);
        self.push(value, Op::Scale(a.0, c), g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        let g = self.grad_of(a.0);
        self.push(value, Op::Tanh(a.0), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).exp();
        let g = self.grad_of(a.0);
        self.push(value, Op::Exp(a.0), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_all();
        let g = self.grad_of(a.0);
        self.push(value, Op::SumAll(a.0), g)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_rows();
        let g = self.grad_of(a.0);
        self.push(value, Op::SumRows(a.0), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let total = self.sum(a);
        self.scale(total, 1.0 / (r * c) as f64)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Reverse sweep from the `(1, 1)` node `output`; returns d output / d `wrt`.
    pub fn backward(&self, output: Var, wrt: Var) -> V {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let n = self.nodes.len();
        let mut grads: Vec<Option<V>> = vec![None; n];
        grads[output.0] = Some(V::constant(Array2::ones((1, 1))));

        fn accumulate<V: Value>(grads: &mut [Option<V>], i: usize, c: V) {
            grads[i] = Some(match grads[i].take() {
                None => c,
                Some(mut prev) => {
                    prev.add_assign(&c);
                    prev
                }
            });
        }

        for i in (wrt.0 + 1..=output.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let needs = |j: usize| self.nodes[j].needs_grad;
            let val = |j: usize| &self.nodes[j].value;
            match node.op {
                Op::Input | Op::Const => {
                    grads[i] = Some(gy);
                }
                Op::Slice(src, offset) => {
                    let len = val(src).shape().1;
                    accumulate(&mut grads, src, gy.embed_flat(len, offset));
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, a, gy.matmul(val(b), false, true));
                    }
                    if needs(b) {
                        accumulate(&mut grads, b, val(a).matmul(&gy, true, false));
                    }
                }
                Op::Add(a, b) => match (needs(a), needs(b)) {
                    (true, true) => {
                        accumulate(&mut grads, a, gy.clone().reduce_to(val(a).shape()));
                        accumulate(&mut grads, b, gy.reduce_to(val(b).shape()));
                    }
                    (true, false) => accumulate(&mut grads, a, gy.reduce_to(val(a).shape())),
                    (false, true) => accumulate(&mut grads, b, gy.reduce_to(val(b).shape())),
                    (false, false) => {}
                },
                Op::Sub(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, a, gy.clone().reduce_to(val(a).shape()));
                    }
                    if needs(b) {
                        accumulate(&mut grads, b, gy.scale(-1.0).reduce_to(val(b).shape()));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, a, gy.mul(val(b)).reduce_to(val(a).shape()));
                    }
                    if needs(b) {
                        accumulate(&mut grads, b, gy.mul(val(a)).reduce_to(val(b).shape()));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, gy.scale(c)),
                Op::Tanh(a) => accumulate(&mut grads, a, gy.tanh_backward(&node.value)),
                Op::Exp(a) => accumulate(&mut grads, a, gy.mul(&node.value)),
                Op::SumAll(a) | Op::SumRows(a) => {
                    let shape = val(a).shape();
                    accumulate(&mut grads, a, gy.broadcast_to(shape));
                }
            }
        }

        grads[wrt.0]
            .take()
            .unwrap_or_else(|| V::constant(Array2::zeros(self.shape(wrt))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn product_rule_through_broadcast() {
        // f(x) = sum((x * row) + 1), x: 2x2, row: 1x2
        let mut g = Graph::<Array2<f64>>::new();
        let x = g.input(array![[1.0, 2.0], [3.0, 4.0]]);
        let row = g.constant(array![[10.0, 20.0]]);
        let p = g.mul(x, row);
        let one = g.scalar(1.0);
        let q = g.add(p, one);
        let out = g.sum(q);
        assert_eq!(g.value(out)[[0, 0]], 10.0 + 40.0 + 30.0 + 80.0 + 4.0);
        let grad = g.backward(out, x);
        assert_eq!(grad, array![[10.0, 20.0], [10.0, 20.0]]);
    }

    #[test]
    fn dual_tangent_matches_directional_derivative() {
        // f(x) = sum(tanh(x))^2 evaluated with tangent direction d.
        let x = array![[0.3, -0.7, 1.1]];
        let d = array![[1.0, 0.5, -2.0]];
        let mut g = Graph::<Dual>::new();
        let xv = g.input(Dual::new(x.clone(), d.clone()));
        let t = g.tanh(xv);
        let s = g.sum(t);
        let out = g.square(s);
        let fwd = g.value(out).tangent_or_zero()[[0, 0]];

        let f = |x: &Array2<f64>| x.mapv(f64::tanh).sum().powi(2);
        let h = 1e-6;
        let fd = (f(&(&x + &(&d * h))) - f(&(&x - &(&d * h)))) / (2.0 * h);
        assert!((fwd - fd).abs() < 1e-8, "{fwd} vs {fd}");
    }

    #[test]
    fn non_finite_is_reported_with_op_name() {
        let mut g = Graph::<Array2<f64>>::new();
        let x = g.input(array![[800.0]]);
        let y = g.exp(x);
        let _ = g.mul(y, y);
        assert_eq!(g.non_finite_op(), Some("exp"));
    }

    #[test]
    fn slice_and_embed_are_adjoint() {
        let mut g = Graph::<Array2<f64>>::new();
        let flat = g.input(Array2::from_shape_fn((1, 7), |(_, j)| j as f64));
        let block = g.slice(flat, 2, 2, 2);
        assert_eq!(g.value(block), &array![[2.0, 3.0], [4.0, 5.0]]);
        let out = g.sum(block);
        let grad = g.backward(out, flat);
        assert_eq!(grad, array![[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]]);
    }
}
