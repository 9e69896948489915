//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] owns an append-only arena of nodes; [`Var`] is an index into
//! it. Each op records its output value plus a closure that, given the
//! upstream gradient, accumulates into its parents' gradient slots. A single
//! [`Graph::backward`] sweep from a scalar loss visits nodes in reverse
//! creation order (a valid reverse topological order, since parents always
//! precede children) and returns named gradients for every registered
//! parameter.
//!
//! Shape rules are strict: elementwise ops require identical shapes, and the
//! few broadcasts (bias rows, scalars) have dedicated ops. Shape violations
//! are programmer errors and panic.

use indexmap::IndexMap;

use crate::backend;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type Back = Box<dyn Fn(&Tensor, &mut [Option<Tensor>])>;

struct Node {
    value: Tensor,
    back: Option<Back>,
}

/// Computation tape. Build a fresh one per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: IndexMap<String, usize>,
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(cur) => cur.add_assign(&t),
        None => *slot = Some(t),
    }
}

fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_raw(a.shape().to_vec(), data)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, back: Option<Back>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    /// Named leaf whose gradient is reported by [`Graph::backward`].
    ///
    /// Registering the same name twice returns the original node, so a
    /// parameter used by several heads accumulates one gradient.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&idx) = self.params.get(name) {
            return Var(idx);
        }
        let v = self.push(value.clone(), None);
        self.params.insert(name.to_string(), v.0);
        v
    }

    // ---- elementwise binary ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = ew(self.value(a), self.value(b), |x, y| x + y);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], g.clone());
                acc(&mut slots[b.0], g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = ew(self.value(a), self.value(b), |x, y| x - y);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], g.clone());
                acc(&mut slots[b.0], g.map(|v| -v));
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = ew(&av, &bv, |x, y| x * y);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], ew(g, &bv, |gv, y| gv * y));
                acc(&mut slots[b.0], ew(g, &av, |gv, x| gv * x));
            })),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = ew(&av, &bv, |x, y| x / y);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], ew(g, &bv, |gv, y| gv / y));
                let da = ew(g, &av, |gv, x| gv * x);
                acc(&mut slots[b.0], ew(&da, &bv, |t, y| -t / (y * y)));
            })),
        )
    }

    // ---- elementwise unary ----

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, dfdx: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let av = self.value(a).clone();
        let out = av.map(&f);
        let ov = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                let shape = av.shape().to_vec();
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .zip(ov.data())
                    .map(|((&gv, &x), &y)| gv * dfdx(x, y))
                    .collect();
                acc(&mut slots[a.0], Tensor::from_raw(shape, data));
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, |_, _| -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, |x, _| -x.sin())
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus_scalar, |x, _| sigmoid_scalar(x))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    // ---- broadcasts ----

    /// Add row vector `r` (`[k]`) to every row of `m` (`[n, k]`).
    pub fn add_row(&mut self, m: Var, r: Var) -> Var {
        let mv = self.value(m);
        let rv = self.value(r);
        let (n, k) = (mv.rows(), mv.cols());
        assert_eq!(rv.numel(), k, "add_row width");
        let rdata = rv.data().to_vec();
        let mut out = mv.data().to_vec();
        for row in out.chunks_mut(k) {
            for (o, &b) in row.iter_mut().zip(&rdata) {
                *o += b;
            }
        }
        self.push(
            Tensor::from_raw(vec![n, k], out),
            Some(Box::new(move |g, slots| {
                acc(&mut slots[m.0], g.clone());
                let mut dr = vec![0.0; k];
                for row in g.data().chunks(k) {
                    for (d, &gv) in dr.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                acc(&mut slots[r.0], Tensor::from_raw(vec![k], dr));
            })),
        )
    }

    // ---- matrix ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = backend::matmul_nn(&av, &bv);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], backend::matmul_nt(g, &bv));
                acc(&mut slots[b.0], backend::matmul_tn(&av, g));
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let s: f64 = av.data().iter().sum();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], Tensor::filled(shape.clone(), g.item()));
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let n = av.numel() as f64;
        let s: f64 = av.data().iter().sum();
        self.push(
            Tensor::scalar(s / n),
            Some(Box::new(move |g, slots| {
                acc(&mut slots[a.0], Tensor::filled(shape.clone(), g.item() / n));
            })),
        )
    }

    /// Per-row sum: `[n, k] -> [n]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, k) = (av.rows(), av.cols());
        let out: Vec<f64> = av.data().chunks(k).map(|r| r.iter().sum()).collect();
        self.push(
            Tensor::from_raw(vec![n], out),
            Some(Box::new(move |g, slots| {
                let mut da = vec![0.0; n * k];
                for (row, &gv) in da.chunks_mut(k).zip(g.data()) {
                    for d in row.iter_mut() {
                        *d += gv;
                    }
                }
                acc(&mut slots[a.0], Tensor::from_raw(vec![n, k], da));
            })),
        )
    }

    /// `sum_i w[i] * x[i]` for vector `x` and fixed weights `w`.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), w.numel(), "weighted_sum length");
        let wdata = w.data().to_vec();
        let s: f64 = xv.data().iter().zip(&wdata).map(|(&a, &b)| a * b).sum();
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |g, slots| {
                let gv = g.item();
                let data = wdata.iter().map(|&wv| gv * wv).collect();
                acc(&mut slots[x.0], Tensor::from_raw(shape.clone(), data));
            })),
        )
    }

    /// `out[j] = sum_i w[i] * x[i, j]` with fixed weights: weighted column
    /// sums, e.g. a group mean when `w` is `1/|group|` on member rows.
    pub fn weighted_colsum(&mut self, x: Var, w: &Tensor) -> Var {
        let xv = self.value(x);
        let (n, k) = (xv.rows(), xv.cols());
        assert_eq!(w.numel(), n, "weighted_colsum weight length");
        let wdata = w.data().to_vec();
        let mut out = vec![0.0; k];
        for (row, &wv) in xv.data().chunks(k).zip(&wdata) {
            if wv == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(row) {
                *o += wv * v;
            }
        }
        self.push(
            Tensor::from_raw(vec![k], out),
            Some(Box::new(move |g, slots| {
                let mut dx = vec![0.0; n * k];
                for (row, &wv) in dx.chunks_mut(k).zip(&wdata) {
                    for (d, &gv) in row.iter_mut().zip(g.data()) {
                        *d += wv * gv;
                    }
                }
                acc(&mut slots[x.0], Tensor::from_raw(vec![n, k], dx));
            })),
        )
    }

    // ---- row-wise softmax family ----

    /// Per-row log-sum-exp: `[n, k] -> [n]`.
    pub fn lse_rows(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let (n, k) = (av.rows(), av.cols());
        let out: Vec<f64> = av.data().chunks(k).map(lse_slice).collect();
        let ov = out.clone();
        self.push(
            Tensor::from_raw(vec![n], out),
            Some(Box::new(move |g, slots| {
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let gv = g.data()[i];
                    let arow = &av.data()[i * k..(i + 1) * k];
                    for (d, &x) in da[i * k..(i + 1) * k].iter_mut().zip(arow) {
                        *d += gv * (x - ov[i]).exp();
                    }
                }
                acc(&mut slots[a.0], Tensor::from_raw(vec![n, k], da));
            })),
        )
    }

    /// Per-row log-softmax: `[n, k] -> [n, k]`.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, k) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(n * k);
        for row in av.data().chunks(k) {
            let l = lse_slice(row);
            out.extend(row.iter().map(|&x| x - l));
        }
        let ov = out.clone();
        self.push(
            Tensor::from_raw(vec![n, k], out),
            Some(Box::new(move |g, slots| {
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let grow = &g.data()[i * k..(i + 1) * k];
                    let yrow = &ov[i * k..(i + 1) * k];
                    let gsum: f64 = grow.iter().sum();
                    for ((d, &gv), &y) in da[i * k..(i + 1) * k].iter_mut().zip(grow).zip(yrow) {
                        *d += gv - y.exp() * gsum;
                    }
                }
                acc(&mut slots[a.0], Tensor::from_raw(vec![n, k], da));
            })),
        )
    }

    /// Per-row softmax: `[n, k] -> [n, k]`.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, k) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(n * k);
        for row in av.data().chunks(k) {
            let l = lse_slice(row);
            out.extend(row.iter().map(|&x| (x - l).exp()));
        }
        let ov = out.clone();
        self.push(
            Tensor::from_raw(vec![n, k], out),
            Some(Box::new(move |g, slots| {
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let grow = &g.data()[i * k..(i + 1) * k];
                    let yrow = &ov[i * k..(i + 1) * k];
                    let dot: f64 = grow.iter().zip(yrow).map(|(&gv, &y)| gv * y).sum();
                    for ((d, &gv), &y) in da[i * k..(i + 1) * k].iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gv - dot);
                    }
                }
                acc(&mut slots[a.0], Tensor::from_raw(vec![n, k], da));
            })),
        )
    }

    /// `out[i] = x[i, idx[i]]`: pick one column per row.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let (n, k) = (xv.rows(), xv.cols());
        assert_eq!(idx.len(), n, "gather_cols index length");
        assert!(idx.iter().all(|&j| j < k), "gather_cols index out of range");
        let idx = idx.to_vec();
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| xv.row(i)[j]).collect();
        self.push(
            Tensor::from_raw(vec![n], out),
            Some(Box::new(move |g, slots| {
                let mut dx = vec![0.0; n * k];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * k + j] += g.data()[i];
                }
                acc(&mut slots[x.0], Tensor::from_raw(vec![n, k], dx));
            })),
        )
    }

    // ---- structural ----

    /// Horizontal concatenation `[n, p] ++ [n, q] -> [n, p+q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.rows();
        assert_eq!(bv.rows(), n, "concat_cols row count");
        let (p, q) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        self.push(
            Tensor::from_raw(vec![n, p + q], out),
            Some(Box::new(move |g, slots| {
                let mut da = Vec::with_capacity(n * p);
                let mut db = Vec::with_capacity(n * q);
                for row in g.data().chunks(p + q) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                acc(&mut slots[a.0], Tensor::from_raw(vec![n, p], da));
                acc(&mut slots[b.0], Tensor::from_raw(vec![n, q], db));
            })),
        )
    }

    /// Stack `k` vectors of length `n` as the columns of an `[n, k]` matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Var {
        assert!(!cols.is_empty(), "stack_cols needs at least one column");
        let n = self.value(cols[0]).numel();
        let k = cols.len();
        let mut out = vec![0.0; n * k];
        for (j, &c) in cols.iter().enumerate() {
            let cv = self.value(c);
            assert_eq!(cv.numel(), n, "stack_cols column length");
            for (i, &v) in cv.data().iter().enumerate() {
                out[i * k + j] = v;
            }
        }
        let cols = cols.to_vec();
        self.push(
            Tensor::from_raw(vec![n, k], out),
            Some(Box::new(move |g, slots| {
                for (j, c) in cols.iter().enumerate() {
                    let data: Vec<f64> = (0..n).map(|i| g.data()[i * k + j]).collect();
                    acc(&mut slots[c.0], Tensor::from_raw(vec![n], data));
                }
            })),
        )
    }

    /// Gather rows by index; duplicates accumulate their gradients.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let (n, k) = (xv.rows(), xv.cols());
        assert!(idx.iter().all(|&i| i < n), "select_rows index out of range");
        let out = xv.select_rows(idx);
        let idx = idx.to_vec();
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                let mut dx = vec![0.0; n * k];
                for (r, &src) in idx.iter().enumerate() {
                    let grow = &g.data()[r * k..(r + 1) * k];
                    for (d, &gv) in dx[src * k..(src + 1) * k].iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
                acc(&mut slots[x.0], Tensor::from_raw(vec![n, k], dx));
            })),
        )
    }

    // ---- fused pairwise ops ----

    /// `out[i, j] = ||a_i - b_j||^2`.
    pub fn pairwise_sqdist(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = backend::pairwise_sqdist(&av, &bv);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                // d/da_i = sum_j 2 g_ij (a_i - b_j); d/db_j symmetric.
                let row_tot: Vec<f64> = g.data().chunks(bv.rows()).map(|r| r.iter().sum()).collect();
                let gb = backend::matmul_nn(g, &bv);
                let mut da = gb.data().to_vec();
                for (i, row) in da.chunks_mut(av.cols()).enumerate() {
                    for (d, &x) in row.iter_mut().zip(av.row(i)) {
                        *d = 2.0 * (row_tot[i] * x - *d);
                    }
                }
                acc(&mut slots[a.0], Tensor::from_raw(av.shape().to_vec(), da));

                let m = bv.rows();
                let mut col_tot = vec![0.0; m];
                for grow in g.data().chunks(m) {
                    for (c, &gv) in col_tot.iter_mut().zip(grow) {
                        *c += gv;
                    }
                }
                let ga = backend::matmul_tn(g, &av);
                let mut db = ga.data().to_vec();
                for (j, row) in db.chunks_mut(bv.cols()).enumerate() {
                    for (d, &x) in row.iter_mut().zip(bv.row(j)) {
                        *d = 2.0 * (col_tot[j] * x - *d);
                    }
                }
                acc(&mut slots[b.0], Tensor::from_raw(bv.shape().to_vec(), db));
            })),
        )
    }

    /// `out[i, k] = ln N(z_i; mu_k, diag(sigma_k^2))`: each row of `z`
    /// scored under each diagonal-Gaussian component.
    pub fn pairwise_gauss_logpdf(&mut self, z: Var, mu: Var, sigma: Var) -> Var {
        let (zv, mv, sv) = (
            self.value(z).clone(),
            self.value(mu).clone(),
            self.value(sigma).clone(),
        );
        let out = backend::pairwise_gauss_logpdf(&zv, &mv, &sv);
        self.push(
            out,
            Some(Box::new(move |g, slots| {
                acc(&mut slots[z.0], backend::pairwise_gauss_logpdf_grad_z(g, &zv, &mv, &sv));
                let (dmu, dsig) = backend::pairwise_gauss_logpdf_grad_comp(g, &zv, &mv, &sv);
                acc(&mut slots[mu.0], dmu);
                acc(&mut slots[sigma.0], dsig);
            })),
        )
    }

    // ---- backward ----

    /// Reverse sweep from scalar `loss`; returns `(name, gradient)` for every
    /// registered parameter in registration order (zeros if unreached).
    pub fn backward(&self, loss: Var) -> Result<Vec<(String, Tensor)>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::shape("backward loss", "scalar", format!("{:?}", lv.shape())));
        }
        let l = lv.item();
        if !l.is_finite() {
            return Err(Error::non_finite_at("backward loss", format!("loss = {l}")));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            // Interior nodes free their gradient once propagated; leaves
            // (params, constants) have no `back` and keep theirs for
            // collection below.
            if let Some(back) = &self.nodes[i].back {
                let g = grads[i].take().unwrap();
                back(&g, &mut grads);
            }
        }
        let out = self
            .params
            .iter()
            .map(|(name, &idx)| {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[idx].value.shape().to_vec()));
                (name.clone(), g)
            })
            .collect();
        Ok(out)
    }
}

fn lse_slice(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{gradcheck, mk_params};

    #[test]
    fn elementwise_chain_grads() {
        let params = mk_params(&[("a", vec![3, 4]), ("b", vec![3, 4])], 1);
        gradcheck(&params, |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let m = g.mul(a, b);
            let s = g.sigmoid(m);
            let t = g.tanh(a);
            let u = g.add(s, t);
            let sq = g.square(u);
            g.mean_all(sq)
        });
    }

    #[test]
    fn exp_ln_softplus_div_grads() {
        let mut params = mk_params(&[("a", vec![2, 3]), ("b", vec![2, 3])], 2);
        // keep ln and div away from zero
        for v in params["b"].data_mut() {
            *v = 1.5 + v.abs();
        }
        gradcheck(&params, |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let e = g.exp(a);
            let d = g.div(e, b);
            let l = g.ln(b);
            let sp = g.softplus(a);
            let c = g.cos(sp);
            let s1 = g.add(d, l);
            let s2 = g.add(s1, c);
            g.sum_all(s2)
        });
    }

    #[test]
    fn matmul_bias_relu_grads() {
        let params = mk_params(&[("w", vec![4, 3]), ("b", vec![3]), ("x", vec![5, 4])], 3);
        gradcheck(&params, |g, p| {
            let x = g.param("x", &p["x"]);
            let w = g.param("w", &p["w"]);
            let b = g.param("b", &p["b"]);
            let h = g.matmul(x, w);
            let hb = g.add_row(h, b);
            let r = g.relu(hb);
            let sq = g.square(r);
            g.mean_all(sq)
        });
    }

    #[test]
    fn softmax_family_grads() {
        let params = mk_params(&[("a", vec![4, 5])], 4);
        gradcheck(&params, |g, p| {
            let a = g.param("a", &p["a"]);
            let ls = g.log_softmax_rows(a);
            let sm = g.softmax_rows(a);
            let lse = g.lse_rows(a);
            let picked = g.gather_cols(ls, &[0, 3, 1, 4]);
            let m = g.mul(ls, sm);
            let s1 = g.sum_all(m);
            let s2 = g.sum_all(lse);
            let s3 = g.sum_all(picked);
            let t = g.add(s1, s2);
            g.add(t, s3)
        });
    }

    #[test]
    fn structural_op_grads() {
        let params = mk_params(&[("a", vec![3, 2]), ("b", vec![3, 4]), ("c", vec![3])], 5);
        gradcheck(&params, |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let c = g.param("c", &p["c"]);
            let cat = g.concat_cols(a, b);
            let sel = g.select_rows(cat, &[2, 0, 2, 1]);
            let rs = g.row_sum(sel);
            let st = g.stack_cols(&[rs, rs]);
            let w = Tensor::vector(vec![0.3, 0.7, 0.1, 1.2]);
            let sq = g.square(st);
            let rs2 = g.row_sum(sq);
            let ws = g.weighted_sum(rs2, &w);
            let cs = g.weighted_colsum(b, &Tensor::vector(vec![0.2, 0.5, 0.3]));
            let cs2 = g.square(cs);
            let s = g.sum_all(cs2);
            let t = g.add(ws, s);
            let c2 = g.square(c);
            let cc = g.sum_all(c2);
            g.add(t, cc)
        });
    }

    #[test]
    fn pairwise_op_grads() {
        let mut params = mk_params(
            &[("z", vec![4, 3]), ("mu", vec![2, 3]), ("sigma", vec![2, 3])],
            6,
        );
        for v in params["sigma"].data_mut() {
            *v = 0.7 + v.abs();
        }
        gradcheck(&params, |g, p| {
            let z = g.param("z", &p["z"]);
            let mu = g.param("mu", &p["mu"]);
            let sigma = g.param("sigma", &p["sigma"]);
            let d = g.pairwise_sqdist(z, mu);
            let k = g.mul_scalar(d, -0.25);
            let ek = g.exp(k);
            let s1 = g.mean_all(ek);
            let lp = g.pairwise_gauss_logpdf(z, mu, sigma);
            let l = g.lse_rows(lp);
            let s2 = g.mean_all(l);
            g.add(s1, s2)
        });
    }

    #[test]
    fn shared_param_accumulates_both_paths() {
        // f(a) = sum(a*a) via two registrations of the same leaf: df/da = 2a.
        let a = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        let mut g = Graph::new();
        let v1 = g.param("a", &a);
        let v2 = g.param("a", &a);
        let m = g.mul(v1, v2);
        let loss = g.sum_all(m);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        let da = &grads[0].1;
        for (d, x) in da.data().iter().zip(a.data()) {
            assert!((d - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut g = Graph::new();
        let a = g.param("a", &Tensor::vector(vec![1.0, 2.0]));
        let _unused = g.param("unused", &Tensor::vector(vec![5.0]));
        let s = g.sum_all(a);
        let grads = g.backward(s).unwrap();
        let unused = grads.iter().find(|(n, _)| n == "unused").unwrap();
        assert_eq!(unused.1.data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_non_finite() {
        let mut g = Graph::new();
        let a = g.param("a", &Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(a).is_err());

        let mut g = Graph::new();
        let a = g.param("a", &Tensor::vector(vec![0.0]));
        let l = g.ln(a); // ln(0) = -inf
        let s = g.sum_all(l);
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn gradient_is_deterministic() {
        let params = mk_params(&[("w", vec![6, 6]), ("x", vec![8, 6])], 7);
        let run = || {
            let mut g = Graph::new();
            let x = g.param("x", &params["x"]);
            let w = g.param("w", &params["w"]);
            let h = g.matmul(x, w);
            let t = g.tanh(h);
            let loss = g.mean_all(t);
            g.backward(loss).unwrap()
        };
        let (a, b) = (run(), run());
        for ((n1, g1), (n2, g2)) in a.iter().zip(&b) {
            assert_eq!(n1, n2);
            assert_eq!(g1, g2);
        }
    }
}
