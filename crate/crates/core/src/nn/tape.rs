//! A small reverse-mode tape over `f64` vectors.
//!
//! Nodes are vectors; scalars are length-1 vectors. Dense weights are read
//! straight from the borrowed parameter slice, so building a graph never
//! copies a weight matrix. [`Tape::backward`] accumulates parameter gradients
//! into a caller-provided buffer and returns the adjoint of every node.

use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Fixed sparse linear map: `out[i] = sum_j w_ij * in[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    pub in_len: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMap {
    pub fn out_len(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_len);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * x[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { offset: usize },
    Linear { x: Var, w: usize, b: Option<usize>, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum { w: Var, items: Vec<Var> },
    Sparse { x: Var, map: Arc<SparseMap> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

/// Adjoints of every node after a backward pass.
pub struct Adjoints {
    grads: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// A constant input; its adjoint is still recorded.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, offset: usize, len: usize) -> Var {
        let value = self.params[offset..offset + len].to_vec();
        self.push(value, Op::Param { offset })
    }

    /// `W x + b` with `W` stored row-major (`rows x cols`) at `w`.
    pub fn linear(&mut self, x: Var, w: usize, b: Option<usize>, rows: usize, cols: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "linear: input length mismatch");
        let wm = &self.params[w..w + rows * cols];
        let mut out = match b {
            Some(b) => self.params[b..b + rows].to_vec(),
            None => vec![0.0; rows],
        };
        for (o, row) in out.iter_mut().zip(wm.chunks_exact(cols)) {
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Linear { x, w, b, cols })
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "elementwise op on mismatched lengths");
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.map(x, |v| v.clamp(lo, hi));
        self.push(v, Op::Clamp { x, lo, hi })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.zip_with(a, b, |x, y| x * y).iter().sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    /// Squared Euclidean norm.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        self.dot(a, a)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let m = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let v = e.into_iter().map(|v| v / z).collect();
        self.push(v, Op::Softmax(x))
    }

    /// `sum_j w[j] * items[j]`.
    pub fn weighted_sum(&mut self, w: Var, items: &[Var]) -> Var {
        let wv = &self.nodes[w.0].value;
        assert_eq!(wv.len(), items.len(), "weighted_sum: weight count mismatch");
        let len = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; len];
        for (wj, item) in wv.iter().zip(items) {
            for (o, v) in out.iter_mut().zip(&self.nodes[item.0].value) {
                *o += wj * v;
            }
        }
        self.push(out, Op::WeightedSum { w, items: items.to_vec() })
    }

    /// Arithmetic mean of equally sized vectors.
    pub fn mean_of(&mut self, items: &[Var]) -> Var {
        let mut acc = items[0];
        for &v in &items[1..] {
            acc = self.add(acc, v);
        }
        self.scale(acc, 1.0 / items.len() as f64)
    }

    pub fn sparse(&mut self, x: Var, map: Arc<SparseMap>) -> Var {
        assert_eq!(self.nodes[x.0].value.len(), map.in_len, "sparse: input length mismatch");
        let v = map.apply(&self.nodes[x.0].value);
        self.push(v, Op::Sparse { x, map })
    }

    /// Reverse pass from `out` seeded with `seed`. Parameter gradients are
    /// added into `param_grads`.
    pub fn backward(&self, out: Var, seed: &[f64], param_grads: &mut [f64]) -> Adjoints {
        assert_eq!(seed.len(), self.nodes[out.0].value.len(), "backward: seed length mismatch");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed.to_vec());

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl Fn(usize) -> f64) {
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += f(i);
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    for (pg, gi) in param_grads[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *pg += gi;
                    }
                }
                Op::Linear { x, w, b, cols } => {
                    let xv = val(*x);
                    let rows = g.len();
                    let wm = &self.params[*w..*w + rows * cols];
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        let gw = &mut param_grads[*w + i * cols..*w + (i + 1) * cols];
                        for (gwj, xj) in gw.iter_mut().zip(xv) {
                            *gwj += gi * xj;
                        }
                    }
                    if let Some(b) = b {
                        for (gb, gi) in param_grads[*b..*b + rows].iter_mut().zip(&g) {
                            *gb += gi;
                        }
                    }
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; *cols]);
                    for (row, gi) in wm.chunks_exact(*cols).zip(&g) {
                        for (gxj, wij) in gx.iter_mut().zip(row) {
                            *gxj += gi * wij;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.len(), |i| g[i]);
                    acc(&mut grads, *b, g.len(), |i| g[i]);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.len(), |i| g[i]);
                    acc(&mut grads, *b, g.len(), |i| -g[i]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(&mut grads, *a, g.len(), |i| g[i] * bv[i]);
                    acc(&mut grads, *b, g.len(), |i| g[i] * av[i]);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.len(), |i| c * g[i]),
                Op::Gelu(a) => {
                    let av = val(*a);
                    acc(&mut grads, *a, g.len(), |i| g[i] * gelu_grad(av[i]));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, g.len(), |i| g[i] * (1.0 - y[i] * y[i]));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, g.len(), |i| g[i] * y[i]);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = val(*x);
                    acc(&mut grads, *x, g.len(), |i| {
                        if xv[i] > *lo && xv[i] < *hi {
                            g[i]
                        } else {
                            0.0
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let len = val(*p).len();
                        acc(&mut grads, *p, len, |i| g[start + i]);
                        start += len;
                    }
                }
                Op::Slice { x, start } => {
                    let len = val(*x).len();
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; len]);
                    for (i, gi) in g.iter().enumerate() {
                        gx[start + i] += gi;
                    }
                }
                Op::Sum(x) => {
                    let len = val(*x).len();
                    acc(&mut grads, *x, len, |_| g[0]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let len = av.len();
                    if a == b {
                        acc(&mut grads, *a, len, |i| 2.0 * g[0] * av[i]);
                    } else {
                        acc(&mut grads, *a, len, |i| g[0] * bv[i]);
                        acc(&mut grads, *b, len, |i| g[0] * av[i]);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *x, g.len(), |i| y[i] * (g[i] - inner));
                }
                Op::WeightedSum { w, items } => {
                    let wv = val(*w);
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| val(*it).iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(&mut grads, *w, gw.len(), |j| gw[j]);
                    for (j, it) in items.iter().enumerate() {
                        acc(&mut grads, *it, g.len(), |i| wv[j] * g[i]);
                    }
                }
                Op::Sparse { x, map } => {
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; map.in_len]);
                    for (row, gi) in map.rows.iter().zip(&g) {
                        for &(j, w) in row {
                            gx[j] += w * gi;
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Adjoints { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of a scalar function of one input vector.
    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn check(build: impl Fn(&mut Tape, Var) -> Var, x: Vec<f64>) {
        let eval = |x: &[f64]| {
            let mut t = Tape::new(&[]);
            let v = t.constant(x.to_vec());
            let y = build(&mut t, v);
            t.scalar(y)
        };
        let mut t = Tape::new(&[]);
        let v = t.constant(x.clone());
        let y = build(&mut t, v);
        let adj = t.backward(y, &[1.0], &mut []);
        let analytic = adj.get(v).unwrap().to_vec();
        let numeric = numeric_grad(eval, &x);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-7 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = vec![0.3, -1.2, 2.0, 0.7];
        check(|t, v| { let g = t.gelu(v); t.sum(g) }, x.clone());
        check(|t, v| { let g = t.tanh(v); let e = t.exp(g); t.sq_norm(e) }, x.clone());
        check(|t, v| { let s = t.softmax(v); let w = t.mul(s, v); t.sum(w) }, x.clone());
        check(|t, v| { let a = t.slice(v, 1, 2); let b = t.slice(v, 2, 2); let c = t.concat(&[a, b, v]); t.sq_norm(c) }, x.clone());
        check(|t, v| { let a = t.slice(v, 0, 2); let b = t.slice(v, 2, 2); let w = t.softmax(a); let s = t.weighted_sum(w, &[a, b]); t.dot(s, b) }, x.clone());
        check(|t, v| { let c = t.clamp(v, -1.0, 1.0); let d = t.sub(c, v); let m = t.mean_of(&[d, v]); t.sq_norm(m) }, x.clone());
        let map = Arc::new(SparseMap { in_len: 4, rows: vec![vec![(0, 0.5), (1, 0.5)], vec![(3, 2.0)], vec![(2, 1.0), (0, -1.0)]] });
        check(move |t, v| { let s = t.sparse(v, map.clone()); let q = t.scale(s, 3.0); t.sq_norm(q) }, x);
    }

    #[test]
    fn linear_gradients_are_outer_products() {
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5];
        let mut t = Tape::new(&params);
        let x = t.constant(vec![1.0, -1.0, 2.0]);
        let y = t.linear(x, 0, Some(6), 2, 3);
        assert_eq!(t.value(y), &[1.0 - 2.0 + 6.0 + 0.5, 4.0 - 5.0 + 12.0 - 0.5]);
        let mut grads = vec![0.0; 8];
        let adj = t.backward(y, &[1.0, 10.0], &mut grads);
        assert_eq!(&grads[..6], &[1.0, -1.0, 2.0, 10.0, -10.0, 20.0]);
        assert_eq!(&grads[6..], &[1.0, 10.0]);
        assert_eq!(adj.get(x).unwrap(), &[41.0, 52.0, 63.0]);
    }
}
