//! Dense compute kernels with a sequential implementation and a rayon
//! data-parallel one behind the `parallel` feature.
//!
//! Both variants compute every output element with the same sequential
//! accumulation order, so results are bit-identical regardless of thread
//! count. The public free functions dispatch to `par` when the feature is
//! enabled and the problem is large enough to amortize the fork/join cost,
//! falling back to `seq` otherwise.

use crate::tensor::Tensor;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Work threshold (inner-loop flops) below which dispatch stays sequential.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1 << 15;

macro_rules! dispatch {
    ($work:expr, $par:expr, $seq:expr) => {{
        #[cfg(feature = "parallel")]
        {
            if $work >= PAR_THRESHOLD {
                return $par;
            }
        }
        let _ = $work;
        $seq
    }};
}

/// `C[n,m] = A[n,k] * B[k,m]`.
pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let (kb, m) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_nn inner dims: {k} vs {kb}");
    dispatch!(n * k * m, par::matmul_nn(a, b), seq::matmul_nn(a, b))
}

/// `C[n,k] = A[n,m] * B[k,m]^T`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), a.cols());
    let (k, mb) = (b.rows(), b.cols());
    assert_eq!(m, mb, "matmul_nt inner dims: {m} vs {mb}");
    dispatch!(n * k * m, par::matmul_nt(a, b), seq::matmul_nt(a, b))
}

/// `C[k,m] = A[n,k]^T * B[n,m]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.rows(), a.cols());
    let (nb, m) = (b.rows(), b.cols());
    assert_eq!(n, nb, "matmul_tn inner dims: {n} vs {nb}");
    dispatch!(n * k * m, par::matmul_tn(a, b), seq::matmul_tn(a, b))
}

/// `D[i,j] = ||a_i - b_j||^2` for row sets `a[n,d]`, `b[m,d]`.
pub fn pairwise_sqdist(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "pairwise_sqdist feature dims");
    let work = a.rows() * b.rows() * a.cols();
    dispatch!(work, par::pairwise_sqdist(a, b), seq::pairwise_sqdist(a, b))
}

/// `L[i,k] = sum_d [ -0.5 ln(2pi) - ln sigma[k,d] - (z[i,d]-mu[k,d])^2 / (2 sigma[k,d]^2) ]`:
/// log-density of each row of `z` under each diagonal Gaussian component.
pub fn pairwise_gauss_logpdf(z: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
    assert_eq!(z.cols(), mu.cols(), "pairwise_gauss_logpdf dims");
    assert_eq!(mu.shape(), sigma.shape(), "pairwise_gauss_logpdf component shapes");
    let work = z.rows() * mu.rows() * z.cols();
    dispatch!(
        work,
        par::pairwise_gauss_logpdf(z, mu, sigma),
        seq::pairwise_gauss_logpdf(z, mu, sigma)
    )
}

/// Gradient of `pairwise_gauss_logpdf` w.r.t. `z` given upstream `g[n,k]`.
pub fn pairwise_gauss_logpdf_grad_z(g: &Tensor, z: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
    let work = z.rows() * mu.rows() * z.cols();
    dispatch!(
        work,
        par::pairwise_gauss_logpdf_grad_z(g, z, mu, sigma),
        seq::pairwise_gauss_logpdf_grad_z(g, z, mu, sigma)
    )
}

/// Gradients of `pairwise_gauss_logpdf` w.r.t. `mu` and `sigma`.
pub fn pairwise_gauss_logpdf_grad_comp(
    g: &Tensor,
    z: &Tensor,
    mu: &Tensor,
    sigma: &Tensor,
) -> (Tensor, Tensor) {
    let work = z.rows() * mu.rows() * z.cols();
    dispatch!(
        work,
        par::pairwise_gauss_logpdf_grad_comp(g, z, mu, sigma),
        seq::pairwise_gauss_logpdf_grad_comp(g, z, mu, sigma)
    )
}

/// Sequential reference kernels.
pub mod seq {
    use super::*;

    pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; n * m];
        for (i, orow) in out.chunks_mut(m).enumerate() {
            nn_row(a.row(i), b.data(), k, m, orow);
        }
        Tensor::from_raw(vec![n, m], out)
    }

    pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, k) = (a.rows(), b.rows());
        let mut out = vec![0.0; n * k];
        for (i, orow) in out.chunks_mut(k).enumerate() {
            nt_row(a.row(i), b, orow);
        }
        Tensor::from_raw(vec![n, k], out)
    }

    pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; k * m];
        for (i, orow) in out.chunks_mut(m).enumerate() {
            tn_row(i, a, b, n, k, m, orow);
        }
        Tensor::from_raw(vec![k, m], out)
    }

    pub fn pairwise_sqdist(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, m) = (a.rows(), b.rows());
        let mut out = vec![0.0; n * m];
        for (i, orow) in out.chunks_mut(m).enumerate() {
            sqdist_row(a.row(i), b, orow);
        }
        Tensor::from_raw(vec![n, m], out)
    }

    pub fn pairwise_gauss_logpdf(z: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
        let (n, k) = (z.rows(), mu.rows());
        let mut out = vec![0.0; n * k];
        for (i, orow) in out.chunks_mut(k).enumerate() {
            gauss_logpdf_row(z.row(i), mu, sigma, orow);
        }
        Tensor::from_raw(vec![n, k], out)
    }

    pub fn pairwise_gauss_logpdf_grad_z(
        g: &Tensor,
        z: &Tensor,
        mu: &Tensor,
        sigma: &Tensor,
    ) -> Tensor {
        let (n, d) = (z.rows(), z.cols());
        let mut out = vec![0.0; n * d];
        for (i, orow) in out.chunks_mut(d).enumerate() {
            grad_z_row(g.row(i), z.row(i), mu, sigma, orow);
        }
        Tensor::from_raw(vec![n, d], out)
    }

    pub fn pairwise_gauss_logpdf_grad_comp(
        g: &Tensor,
        z: &Tensor,
        mu: &Tensor,
        sigma: &Tensor,
    ) -> (Tensor, Tensor) {
        let (k, d) = (mu.rows(), mu.cols());
        let mut dmu = vec![0.0; k * d];
        let mut dsig = vec![0.0; k * d];
        for kk in 0..k {
            grad_comp_row(kk, g, z, mu.row(kk), sigma.row(kk), &mut dmu[kk * d..(kk + 1) * d], &mut dsig[kk * d..(kk + 1) * d]);
        }
        (
            Tensor::from_raw(vec![k, d], dmu),
            Tensor::from_raw(vec![k, d], dsig),
        )
    }
}

#[cfg(feature = "parallel")]
pub mod par {
    use super::*;
    use rayon::prelude::*;

    pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; n * m];
        out.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, orow)| nn_row(a.row(i), b.data(), k, m, orow));
        Tensor::from_raw(vec![n, m], out)
    }

    pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, k) = (a.rows(), b.rows());
        let mut out = vec![0.0; n * k];
        out.par_chunks_mut(k)
            .enumerate()
            .for_each(|(i, orow)| nt_row(a.row(i), b, orow));
        Tensor::from_raw(vec![n, k], out)
    }

    pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; k * m];
        out.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, orow)| tn_row(i, a, b, n, k, m, orow));
        Tensor::from_raw(vec![k, m], out)
    }

    pub fn pairwise_sqdist(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, m) = (a.rows(), b.rows());
        let mut out = vec![0.0; n * m];
        out.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, orow)| sqdist_row(a.row(i), b, orow));
        Tensor::from_raw(vec![n, m], out)
    }

    pub fn pairwise_gauss_logpdf(z: &Tensor, mu: &Tensor, sigma: &Tensor) -> Tensor {
        let (n, k) = (z.rows(), mu.rows());
        let mut out = vec![0.0; n * k];
        out.par_chunks_mut(k)
            .enumerate()
            .for_each(|(i, orow)| gauss_logpdf_row(z.row(i), mu, sigma, orow));
        Tensor::from_raw(vec![n, k], out)
    }

    pub fn pairwise_gauss_logpdf_grad_z(
        g: &Tensor,
        z: &Tensor,
        mu: &Tensor,
        sigma: &Tensor,
    ) -> Tensor {
        let (n, d) = (z.rows(), z.cols());
        let mut out = vec![0.0; n * d];
        out.par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, orow)| grad_z_row(g.row(i), z.row(i), mu, sigma, orow));
        Tensor::from_raw(vec![n, d], out)
    }

    pub fn pairwise_gauss_logpdf_grad_comp(
        g: &Tensor,
        z: &Tensor,
        mu: &Tensor,
        sigma: &Tensor,
    ) -> (Tensor, Tensor) {
        let (k, d) = (mu.rows(), mu.cols());
        let mut dmu = vec![0.0; k * d];
        let mut dsig = vec![0.0; k * d];
        dmu.par_chunks_mut(d)
            .zip(dsig.par_chunks_mut(d))
            .enumerate()
            .for_each(|(kk, (mrow, srow))| {
                grad_comp_row(kk, g, z, mu.row(kk), sigma.row(kk), mrow, srow)
            });
        (
            Tensor::from_raw(vec![k, d], dmu),
            Tensor::from_raw(vec![k, d], dsig),
        )
    }
}

// Per-output-row worker routines shared by both variants. Each writes one
// output row with a fixed accumulation order.

fn nn_row(arow: &[f64], b: &[f64], k: usize, m: usize, orow: &mut [f64]) {
    for (l, &av) in arow.iter().enumerate().take(k) {
        if av == 0.0 {
            continue;
        }
        let brow = &b[l * m..(l + 1) * m];
        for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
            *o += av * bv;
        }
    }
}

fn nt_row(arow: &[f64], b: &Tensor, orow: &mut [f64]) {
    for (j, o) in orow.iter_mut().enumerate() {
        let brow = b.row(j);
        let mut acc = 0.0;
        for (&av, &bv) in arow.iter().zip(brow.iter()) {
            acc += av * bv;
        }
        *o = acc;
    }
}

fn tn_row(i: usize, a: &Tensor, b: &Tensor, n: usize, k: usize, m: usize, orow: &mut [f64]) {
    let ad = a.data();
    let bd = b.data();
    for l in 0..n {
        let av = ad[l * k + i];
        if av == 0.0 {
            continue;
        }
        let brow = &bd[l * m..(l + 1) * m];
        for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
            *o += av * bv;
        }
    }
}

fn sqdist_row(arow: &[f64], b: &Tensor, orow: &mut [f64]) {
    for (j, o) in orow.iter_mut().enumerate() {
        let brow = b.row(j);
        let mut acc = 0.0;
        for (&av, &bv) in arow.iter().zip(brow.iter()) {
            let diff = av - bv;
            acc += diff * diff;
        }
        *o = acc;
    }
}

fn gauss_logpdf_row(zrow: &[f64], mu: &Tensor, sigma: &Tensor, orow: &mut [f64]) {
    let d = zrow.len();
    for (k, o) in orow.iter_mut().enumerate() {
        let mrow = mu.row(k);
        let srow = sigma.row(k);
        let mut acc = -0.5 * LN_2PI * d as f64;
        for ((&zv, &mv), &sv) in zrow.iter().zip(mrow.iter()).zip(srow.iter()) {
            let t = (zv - mv) / sv;
            acc -= sv.ln() + 0.5 * t * t;
        }
        *o = acc;
    }
}

fn grad_z_row(grow: &[f64], zrow: &[f64], mu: &Tensor, sigma: &Tensor, orow: &mut [f64]) {
    for (k, &gv) in grow.iter().enumerate() {
        if gv == 0.0 {
            continue;
        }
        let mrow = mu.row(k);
        let srow = sigma.row(k);
        for (dd, o) in orow.iter_mut().enumerate() {
            let s2 = srow[dd] * srow[dd];
            *o += gv * (-(zrow[dd] - mrow[dd]) / s2);
        }
    }
}

fn grad_comp_row(
    k: usize,
    g: &Tensor,
    z: &Tensor,
    mrow: &[f64],
    srow: &[f64],
    dmu: &mut [f64],
    dsig: &mut [f64],
) {
    let n = z.rows();
    for i in 0..n {
        let gv = g.row(i)[k];
        if gv == 0.0 {
            continue;
        }
        let zrow = z.row(i);
        for dd in 0..mrow.len() {
            let s = srow[dd];
            let diff = zrow[dd] - mrow[dd];
            dmu[dd] += gv * (diff / (s * s));
            dsig[dd] += gv * (-1.0 / s + diff * diff / (s * s * s));
        }
    }
}
