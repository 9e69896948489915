//! Penalties that push the first-layer representation toward carrying no
//! information about the sensitive attribute: a kernel two-sample statistic
//! (exact unbiased form and a random-feature approximation that scales
//! linearly and tolerates degenerate groups) and a mutual-information bound
//! built from the model's own densities.

use crate::backend;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Positive-definite kernel choice for the exact two-sample statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `k(a, b) = exp(-||a - b||^2 / (2 bandwidth^2))`.
    Rbf { bandwidth: f64 },
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KernelSpec::Rbf { bandwidth })
    }

    /// The bandwidth for which `k(a, b) = exp(-||a - b||^2 / gamma)`.
    pub fn rbf_from_gamma(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("kernel scale must be positive, got {gamma}")));
        }
        Self::rbf((gamma / 2.0).sqrt())
    }
}

/// Unbiased squared maximum mean discrepancy between the rows of `a` and
/// `b`: within-group kernel means over distinct pairs, minus twice the
/// cross-group mean.
pub fn mmd_unbiased(a: &Tensor, b: &Tensor, kernel: &KernelSpec) -> Result<f64> {
    let KernelSpec::Rbf { bandwidth } = *kernel;
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
    }
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape(
            "two-sample statistic",
            "two matrices with matching column counts".to_string(),
            format!("{:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.rows(), b.rows());
    if n < 2 || m < 2 {
        return Err(Error::Invalid(format!(
            "the unbiased estimator needs at least two rows in each group (got {n} and {m}); \
             fall back to the random-feature estimator for tiny groups"
        )));
    }
    let gamma = 2.0 * bandwidth * bandwidth;
    let within = |x: &Tensor| {
        let d2 = backend::pairwise_sqdist(x, x);
        let r = x.rows();
        let mut sum = 0.0;
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    sum += (-d2.data()[i * r + j] / gamma).exp();
                }
            }
        }
        sum / (r * (r - 1)) as f64
    };
    let cross = {
        let d2 = backend::pairwise_sqdist(a, b);
        let sum: f64 = d2.data().iter().map(|&v| (-v / gamma).exp()).sum();
        sum / (n * m) as f64
    };
    Ok(within(a) + within(b) - 2.0 * cross)
}

/// A frozen random-feature map for the RBF kernel
/// `k(a, b) = exp(-||a - b||^2 / gamma)`: `num_features` cosine features
/// with standard-normal directions and uniform phases.
#[derive(Debug, Clone)]
pub struct RffProjection {
    w: Tensor,
    b: Tensor,
    gamma: f64,
}

impl RffProjection {
    /// Scale heuristic used throughout: `gamma = 2 * dim`.
    pub fn default_gamma(dim: usize) -> f64 {
        2.0 * dim as f64
    }

    pub fn sample(dim: usize, num_features: usize, gamma: f64, rng: &mut RandomStream) -> Result<Self> {
        let w = rng.standard_normal(vec![dim, num_features]);
        let b = rng.uniform_tensor(vec![num_features], 0.0, std::f64::consts::TAU);
        Self::from_parts(w, b, gamma)
    }

    /// Assemble from explicit directions and phases (mostly for tests).
    pub fn from_parts(w: Tensor, b: Tensor, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("feature-map scale must be positive, got {gamma}")));
        }
        if w.rank() != 2 || w.rows() == 0 || w.cols() == 0 {
            return Err(Error::shape("feature directions", "[dim >= 1, features >= 1]", format!("{:?}", w.shape())));
        }
        if b.shape() != [w.cols()] {
            return Err(Error::shape("feature phases", format!("[{}]", w.cols()), format!("{:?}", b.shape())));
        }
        Ok(RffProjection { w, b, gamma })
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn num_features(&self) -> usize {
        self.w.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

fn check_rff_input(z: &Tensor, proj: &RffProjection) -> Result<()> {
    if z.rank() != 2 || z.cols() != proj.dim() {
        return Err(Error::shape(
            "feature-map input",
            format!("[n, {}]", proj.dim()),
            format!("{:?}", z.shape()),
        ));
    }
    Ok(())
}

/// `sqrt(2/K) cos(sqrt(2/gamma) z W + b)`, one feature row per input row, so
/// that `phi(a) . phi(b)` approximates `exp(-||a - b||^2 / gamma)`.
pub fn rff_expand(z: &Tensor, proj: &RffProjection) -> Result<Tensor> {
    check_rff_input(z, proj)?;
    let scale = (2.0 / proj.gamma).sqrt();
    let zw = backend::matmul_nn(&z.map(|v| v * scale), &proj.w);
    let k = proj.num_features();
    let amp = (2.0 / k as f64).sqrt();
    let mut out = zw;
    for i in 0..out.rows() {
        let start = i * k;
        for j in 0..k {
            let v = out.data()[start + j] + proj.b.data()[j];
            out.data_mut()[start + j] = amp * v.cos();
        }
    }
    Ok(out)
}

/// Graph version of [`rff_expand`], with the projection held constant so
/// gradients flow only into `z`.
pub fn g_rff_expand(g: &mut Graph, z: Var, proj: &RffProjection) -> Result<Var> {
    check_rff_input(g.value(z), proj)?;
    let scale = (2.0 / proj.gamma).sqrt();
    let amp = (2.0 / proj.num_features() as f64).sqrt();
    let w = g.constant(proj.w.clone());
    let b = g.constant(proj.b.clone());
    let zs = g.mul_scalar(z, scale);
    let zw = g.matmul(zs, w);
    let shifted = g.add_row(zw, b);
    let cosed = g.cos(shifted);
    Ok(g.mul_scalar(cosed, amp))
}

/// Random-feature approximation of the squared maximum mean discrepancy:
/// the squared distance between the two groups' mean feature vectors.
/// An empty group contributes no evidence, so the estimate is defined as
/// zero (with a warning) instead of an error.
pub fn mmd_fast(a: &Tensor, b: &Tensor, proj: &RffProjection) -> Result<f64> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape(
            "two-sample statistic",
            "two matrices with matching column counts".to_string(),
            format!("{:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    if a.rows() == 0 || b.rows() == 0 {
        log::warn!(
            "two-sample statistic over groups of {} and {} rows: treating it as zero",
            a.rows(),
            b.rows()
        );
        return Ok(0.0);
    }
    let fa = rff_expand(a, proj)?;
    let fb = rff_expand(b, proj)?;
    let k = proj.num_features();
    let mut total = 0.0;
    for j in 0..k {
        let mut ma = 0.0;
        for i in 0..fa.rows() {
            ma += fa.data()[i * k + j];
        }
        ma /= fa.rows() as f64;
        let mut mb = 0.0;
        for i in 0..fb.rows() {
            mb += fb.data()[i * k + j];
        }
        mb /= fb.rows() as f64;
        total += (ma - mb) * (ma - mb);
    }
    Ok(total)
}

/// Squared distance between two weighted column sums of a feature matrix:
/// with weights `1/|A|` over group A rows and `1/|B|` over group B rows this
/// is the random-feature two-sample statistic, differentiable in `feat`.
pub fn g_mmd_fast_weighted(g: &mut Graph, feat: Var, wa: &Tensor, wb: &Tensor) -> Var {
    let ma = g.weighted_colsum(feat, wa);
    let mb = g.weighted_colsum(feat, wb);
    let diff = g.sub(ma, mb);
    let sq = g.square(diff);
    g.sum_all(sq)
}

fn lse(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// Per-row mutual-information penalty
/// `ln q(z1|x,s) - ln sum_{s'} q(s'|x) q(z1|x,s')`, evaluated at the drawn
/// `z1`. `chosen` holds the log-density of the branch the row actually used
/// (`[n]`), `branch_logpdfs` the log-density under every branch (`[n, S]`),
/// and `s_probs` the classifier weights (`[n, S]`, rows on the simplex).
pub fn mi_penalty_rows(chosen: &Tensor, branch_logpdfs: &Tensor, s_probs: &Tensor) -> Result<Tensor> {
    let n = chosen.numel();
    if chosen.rank() != 1 {
        return Err(Error::shape("chosen-branch densities", "[n]", format!("{:?}", chosen.shape())));
    }
    if branch_logpdfs.rank() != 2 || branch_logpdfs.rows() != n {
        return Err(Error::shape(
            "branch densities",
            format!("[{n}, classes]"),
            format!("{:?}", branch_logpdfs.shape()),
        ));
    }
    let s = branch_logpdfs.cols();
    if s_probs.shape() != [n, s] {
        return Err(Error::shape(
            "branch weights",
            format!("[{n}, {s}]"),
            format!("{:?}", s_probs.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n);
    let mut terms = vec![0.0; s];
    for i in 0..n {
        let row = s_probs.row(i);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!(
                "branch weights in row {i} are not a distribution: {row:?}"
            )));
        }
        for (t, (&p, &lp)) in terms.iter_mut().zip(row.iter().zip(branch_logpdfs.row(i))) {
            *t = if p > 0.0 { p.ln() + lp } else { f64::NEG_INFINITY };
        }
        out.push(chosen.data()[i] - lse(&terms));
    }
    Tensor::new(vec![n], out)
}

/// Graph version of [`mi_penalty_rows`] taking classifier logits, so the
/// penalty backpropagates into the densities and the classifier alike.
pub fn g_mi_rows(g: &mut Graph, chosen: Var, branch_logpdfs: Var, s_logits: Var) -> Var {
    let log_probs = g.log_softmax_rows(s_logits);
    let weighted = g.add(log_probs, branch_logpdfs);
    let denom = g.lse_rows(weighted);
    g.sub(chosen, denom)
}
