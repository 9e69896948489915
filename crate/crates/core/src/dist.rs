//! Probability primitives: diagonal Gaussians, Bernoulli and categorical
//! likelihoods, KL divergences, equal-weight Gaussian mixtures, and concrete
//! (Gumbel-softmax) relaxations.
//!
//! Each quantity comes in two forms: a tape-free function on [`Tensor`]s for
//! evaluation and test oracles, and a `g_`-prefixed composite that builds the
//! same computation on a [`Graph`] so gradients flow. Log-density functions
//! reduce over feature dimensions and return one value per row.

use crate::backend;
use crate::error::{Error, Result};
use crate::graph::{softplus_scalar, Graph, Var};
use crate::tensor::Tensor;

pub use crate::backend::LN_2PI;

/// A Gaussian with diagonal covariance, stored as per-dimension standard
/// deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Tensor,
    sigma: Tensor,
}

impl DiagGaussian {
    pub fn new(mean: Tensor, sigma: Tensor) -> Result<Self> {
        if mean.shape() != sigma.shape() {
            return Err(Error::shape(
                "DiagGaussian::new",
                format!("{:?}", mean.shape()),
                format!("{:?}", sigma.shape()),
            ));
        }
        if let Some(bad) = sigma.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Invalid(format!(
                "DiagGaussian::new: sigma entry {bad} is not strictly positive"
            )));
        }
        Ok(DiagGaussian { mean, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian { mean: Tensor::zeros(vec![dim]), sigma: Tensor::filled(vec![dim], 1.0) }
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn sigma(&self) -> &Tensor {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mean.numel()
    }

    /// Reparameterized draw `mean + sigma * eps`.
    pub fn sample(&self, eps: &Tensor) -> Tensor {
        assert_eq!(eps.shape(), self.mean.shape(), "DiagGaussian::sample eps shape");
        let data = self
            .mean
            .data()
            .iter()
            .zip(self.sigma.data())
            .zip(eps.data())
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        Tensor::from_raw(self.mean.shape().to_vec(), data)
    }

    pub fn logpdf(&self, z: &Tensor) -> f64 {
        assert_eq!(z.shape(), self.mean.shape(), "DiagGaussian::logpdf shape");
        z.data()
            .iter()
            .zip(self.mean.data())
            .zip(self.sigma.data())
            .map(|((&zv, &m), &s)| gaussian_logpdf_scalar(zv, m, s))
            .sum()
    }

    pub fn kl_to(&self, other: &DiagGaussian) -> f64 {
        assert_eq!(self.dim(), other.dim(), "DiagGaussian::kl_to dims");
        self.mean
            .data()
            .iter()
            .zip(self.sigma.data())
            .zip(other.mean.data().iter().zip(other.sigma.data()))
            .map(|((&m1, &s1), (&m2, &s2))| kl_gaussian_scalar(m1, s1, m2, s2))
            .sum()
    }
}

/// A finite categorical distribution over `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invalid("CategoricalDist::new: no classes".into()));
        }
        if let Some(bad) = probs.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Invalid(format!(
                "CategoricalDist::new: probability {bad} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "CategoricalDist::new: probabilities sum to {total}, expected 1"
            )));
        }
        Ok(CategoricalDist { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        CategoricalDist { probs: vec![1.0 / classes as f64; classes] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn logpdf(&self, class: usize) -> f64 {
        assert!(class < self.probs.len(), "class {class} out of range");
        self.probs[class].max(1e-12).ln()
    }

    pub fn kl_to(&self, other: &CategoricalDist) -> f64 {
        kl_categorical(&self.probs, &other.probs)
    }
}

/// Equal-weight mixture of diagonal Gaussians (component `k` has weight
/// `1/K`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGaussian {
    mu: Tensor,
    sigma: Tensor,
}

impl MixtureGaussian {
    /// Build from stacked component parameters, `[K, dim]` each.
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::shape(
                "MixtureGaussian::new",
                format!("{:?}", mu.shape()),
                format!("{:?}", sigma.shape()),
            ));
        }
        if mu.rank() != 2 || mu.rows() == 0 {
            return Err(Error::Invalid(
                "MixtureGaussian::new: expected a [K, dim] component matrix with K >= 1".into(),
            ));
        }
        if let Some(bad) = sigma.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Invalid(format!(
                "MixtureGaussian::new: sigma entry {bad} is not strictly positive"
            )));
        }
        Ok(MixtureGaussian { mu, sigma })
    }

    pub fn from_components(components: &[DiagGaussian]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("MixtureGaussian::from_components: K = 0".into()));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Invalid(
                "MixtureGaussian::from_components: component dims differ".into(),
            ));
        }
        let k = components.len();
        let mut mu = Vec::with_capacity(k * dim);
        let mut sigma = Vec::with_capacity(k * dim);
        for c in components {
            mu.extend_from_slice(c.mean().data());
            sigma.extend_from_slice(c.sigma().data());
        }
        Ok(MixtureGaussian {
            mu: Tensor::from_raw(vec![k, dim], mu),
            sigma: Tensor::from_raw(vec![k, dim], sigma),
        })
    }

    pub fn num_components(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    /// `ln (1/K) sum_k N(z; mu_k, sigma_k^2)` for a single point `z`.
    pub fn logpdf(&self, z: &Tensor) -> f64 {
        assert_eq!(z.numel(), self.dim(), "MixtureGaussian::logpdf dim");
        let zrow = Tensor::from_raw(vec![1, z.numel()], z.data().to_vec());
        mixture_logpdf_rows(&zrow, &self.mu, &self.sigma).item()
    }
}

// ---- tape-free ----

/// `ln N(x; mu, sigma^2)` for scalars.
pub fn gaussian_logpdf_scalar(x: f64, mu: f64, sigma: f64) -> f64 {
    let t = (x - mu) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * t * t
}

/// Per-row log-density of `x` under independent Gaussians, summed over
/// columns. All inputs `[n, d]` (or `[d]` for a single row).
pub fn gaussian_logpdf_rows(x: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
    assert_eq!(x.shape(), mu.shape(), "gaussian_logpdf_rows shapes");
    assert_eq!(x.shape(), sigma.shape(), "gaussian_logpdf_rows shapes");
    let n = x.rows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let acc: f64 = x
            .row(i)
            .iter()
            .zip(mu.row(i))
            .zip(sigma.row(i))
            .map(|((&xv, &mv), &sv)| gaussian_logpdf_scalar(xv, mv, sv))
            .sum();
        out.push(acc);
    }
    Tensor::vector(out)
}

/// `KL(N(m1, s1^2) || N(m2, s2^2))` for scalars.
pub fn kl_gaussian_scalar(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let r = s1 / s2;
    let d = (m1 - m2) / s2;
    (s2 / s1).ln() + 0.5 * (r * r + d * d) - 0.5
}

/// Per-row KL between diagonal Gaussians, summed over columns.
pub fn kl_gaussian_rows(m1: &Tensor, s1: &Tensor, m2: &Tensor, s2: &Tensor) -> Tensor {
    assert_eq!(m1.shape(), s1.shape(), "kl_gaussian_rows shapes");
    assert_eq!(m1.shape(), m2.shape(), "kl_gaussian_rows shapes");
    assert_eq!(m1.shape(), s2.shape(), "kl_gaussian_rows shapes");
    let (n, d) = (m1.rows(), m1.cols());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..d {
            acc += kl_gaussian_scalar(m1.row(i)[j], s1.row(i)[j], m2.row(i)[j], s2.row(i)[j]);
        }
        out.push(acc);
    }
    Tensor::vector(out)
}

/// Per-row `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_std_normal_rows(mu: &Tensor, sigma: &Tensor) -> Tensor {
    assert_eq!(mu.shape(), sigma.shape(), "kl_std_normal_rows shapes");
    let (n, d) = (mu.rows(), mu.cols());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..d {
            let (m, s) = (mu.row(i)[j], sigma.row(i)[j]);
            acc += -s.ln() + 0.5 * (s * s + m * m) - 0.5;
        }
        out.push(acc);
    }
    Tensor::vector(out)
}

/// Per-row Bernoulli log-likelihood `sum_d [x ln p + (1-x) ln (1-p)]` with
/// `p = sigmoid(logits)`, in the overflow-safe form `x*l - softplus(l)`.
/// Every entry of `x` must be exactly 0 or 1.
pub fn bernoulli_loglik_rows(x: &Tensor, logits: &Tensor) -> Result<Tensor> {
    if x.shape() != logits.shape() {
        return Err(Error::shape(
            "bernoulli_loglik_rows",
            format!("{:?}", x.shape()),
            format!("{:?}", logits.shape()),
        ));
    }
    if let Some(bad) = x.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid(format!(
            "bernoulli_loglik_rows: observation {bad} is not binary (expected 0 or 1)"
        )));
    }
    let n = x.rows();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let acc: f64 = x
            .row(i)
            .iter()
            .zip(logits.row(i))
            .map(|(&xv, &lv)| xv * lv - softplus_scalar(lv))
            .sum();
        out.push(acc);
    }
    Ok(Tensor::vector(out))
}

/// `ln softmax(logits)[label]` per row.
pub fn categorical_logpdf_rows(logits: &Tensor, labels: &[usize]) -> Tensor {
    let (n, k) = (logits.rows(), logits.cols());
    assert_eq!(labels.len(), n, "categorical_logpdf_rows labels");
    let mut out = Vec::with_capacity(n);
    for (i, &lab) in labels.iter().enumerate() {
        assert!(lab < k, "label {lab} out of range for {k} classes");
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        out.push(row[lab] - lse);
    }
    Tensor::vector(out)
}

/// `KL(p || q)` between two finite categorical distributions, with both
/// sides floored at 1e-12 so empirical zeros stay finite.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_categorical lengths");
    p.iter()
        .zip(q)
        .map(|(&pv, &qv)| {
            let pv = pv.max(1e-12);
            let qv = qv.max(1e-12);
            pv * (pv / qv).ln()
        })
        .sum()
}

/// Concrete / Gumbel-softmax relaxation: `softmax((logits + gumbel) / tau)`
/// per row. `gumbel` holds pre-drawn standard Gumbel noise.
pub fn concrete_sample(logits: &Tensor, gumbel: &Tensor, temperature: f64) -> Tensor {
    assert_eq!(logits.shape(), gumbel.shape(), "concrete_sample shapes");
    assert!(temperature > 0.0, "temperature must be positive");
    let k = logits.cols();
    let mut out = Vec::with_capacity(logits.numel());
    for (lrow, grow) in logits.data().chunks(k).zip(gumbel.data().chunks(k)) {
        let scaled: Vec<f64> = lrow
            .iter()
            .zip(grow)
            .map(|(&l, &g)| (l + g) / temperature)
            .collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::from_raw(logits.shape().to_vec(), out)
}

/// Per-row log-density under an equal-weight mixture of `K` diagonal
/// Gaussians: `ln (1/K) sum_k N(x_i; mu_k, sigma_k^2)`.
pub fn mixture_logpdf_rows(x: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
    let comp = backend::pairwise_gauss_logpdf(x, mu, sigma);
    let (n, k) = (comp.rows(), comp.cols());
    let lnk = (k as f64).ln();
    let mut out = Vec::with_capacity(n);
    for row in comp.data().chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        out.push(lse - lnk);
    }
    Tensor::vector(out)
}

// ---- graph composites ----

/// Reparameterized draw `mu + sigma * eps` with fixed noise `eps`.
pub fn g_gaussian_sample(g: &mut Graph, mu: Var, sigma: Var, eps: &Tensor) -> Var {
    let e = g.constant(eps.clone());
    let se = g.mul(sigma, e);
    g.add(mu, se)
}

/// Per-row Gaussian log-density; see [`gaussian_logpdf_rows`].
pub fn g_gaussian_logpdf_rows(g: &mut Graph, x: Var, mu: Var, sigma: Var) -> Var {
    let d = g.value(x).cols() as f64;
    let diff = g.sub(x, mu);
    let t = g.div(diff, sigma);
    let sq = g.square(t);
    let half = g.mul_scalar(sq, 0.5);
    let lns = g.ln(sigma);
    let per_dim = g.add(half, lns);
    let rs = g.row_sum(per_dim);
    let neg = g.mul_scalar(rs, -1.0);
    g.add_scalar(neg, -0.5 * LN_2PI * d)
}

/// Per-row analytic KL between diagonal Gaussians; see [`kl_gaussian_rows`].
pub fn g_kl_gaussian_rows(g: &mut Graph, m1: Var, s1: Var, m2: Var, s2: Var) -> Var {
    let ln1 = g.ln(s1);
    let ln2 = g.ln(s2);
    let lnr = g.sub(ln2, ln1);
    let r = g.div(s1, s2);
    let r2 = g.square(r);
    let dm = g.sub(m1, m2);
    let dn = g.div(dm, s2);
    let d2 = g.square(dn);
    let quad = g.add(r2, d2);
    let half = g.mul_scalar(quad, 0.5);
    let per_dim0 = g.add(lnr, half);
    let per_dim = g.add_scalar(per_dim0, -0.5);
    g.row_sum(per_dim)
}

/// Per-row `KL(N(mu, sigma^2) || N(0, I))`.
pub fn g_kl_std_normal_rows(g: &mut Graph, mu: Var, sigma: Var) -> Var {
    let lns = g.ln(sigma);
    let s2 = g.square(sigma);
    let m2 = g.square(mu);
    let quad = g.add(s2, m2);
    let half = g.mul_scalar(quad, 0.5);
    let t = g.sub(half, lns);
    let per_dim = g.add_scalar(t, -0.5);
    g.row_sum(per_dim)
}

/// Per-row Bernoulli log-likelihood with binary observations `x` held fixed.
pub fn g_bernoulli_loglik_rows(g: &mut Graph, x: &Tensor, logits: Var) -> Var {
    assert_eq!(x.shape(), g.value(logits).shape(), "g_bernoulli_loglik_rows shapes");
    debug_assert!(x.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let xc = g.constant(x.clone());
    let xl = g.mul(xc, logits);
    let sp = g.softplus(logits);
    let diff = g.sub(xl, sp);
    g.row_sum(diff)
}

/// Per-row `ln softmax(logits)[label]`.
pub fn g_categorical_logpdf_rows(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let ls = g.log_softmax_rows(logits);
    g.gather_cols(ls, labels)
}

/// Per-row `KL(softmax(logits) || prior)` for a fixed prior with strictly
/// positive entries.
pub fn g_kl_categorical_rows(g: &mut Graph, logits: Var, prior: &[f64]) -> Var {
    assert!(prior.iter().all(|&p| p > 0.0), "prior entries must be positive");
    assert_eq!(g.value(logits).cols(), prior.len(), "g_kl_categorical_rows prior length");
    let ls = g.log_softmax_rows(logits);
    let p = g.exp(ls);
    let neg_ln_prior: Vec<f64> = prior.iter().map(|&v| -v.ln()).collect();
    let shifted = {
        let c = g.constant(Tensor::vector(neg_ln_prior));
        g.add_row(ls, c)
    };
    let prod = g.mul(p, shifted);
    g.row_sum(prod)
}

/// Differentiable concrete relaxation; see [`concrete_sample`].
pub fn g_concrete_sample_rows(g: &mut Graph, logits: Var, gumbel: &Tensor, temperature: f64) -> Var {
    assert!(temperature > 0.0, "temperature must be positive");
    let noise = g.constant(gumbel.clone());
    let sum = g.add(logits, noise);
    let scaled = g.mul_scalar(sum, 1.0 / temperature);
    g.softmax_rows(scaled)
}

/// Per-row log-density under an equal-weight mixture whose component means
/// and deviations are graph values (so gradients reach them).
pub fn g_mixture_logpdf_rows(g: &mut Graph, x: Var, mu: Var, sigma: Var) -> Var {
    let k = g.value(mu).rows() as f64;
    let comp = g.pairwise_gauss_logpdf(x, mu, sigma);
    let lse = g.lse_rows(comp);
    g.add_scalar(lse, -k.ln())
}
