//! The two generative models. Both put the sensitive attribute `s` next to
//! the first latent layer `z1` (encoder input and decoder input), classify
//! `y` from `z1`, and tie `z1` to a second latent layer `z2` through a
//! learned conditional prior `p(z1|z2,y)`. They differ in how `z2` is
//! inferred and what prior it is matched against:
//!
//! * [`ModelVariant::Vfae`] encodes `z2` from `(z1, y)` and always uses a
//!   standard-normal prior on `z2`.
//! * [`ModelVariant::Hvfae`] encodes `z2` straight from `x`, which lets the
//!   `z2` prior be swapped for a learned mixture over pseudo-inputs
//!   ([`PriorKind::VampPrior`]): each pseudo-input is pushed through the same
//!   `q(z2|x)` encoder and the prior is the uniform mixture of the resulting
//!   Gaussians.
//!
//! A separate classifier `q(s|x)` is part of the model so that partially
//! observed sensitive attributes can be marginalized out; it is constructed
//! (and trained) regardless of the supervision level.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{
    g_bernoulli_loglik_rows, g_categorical_logpdf_rows, g_gaussian_logpdf_rows, g_gaussian_sample,
    g_kl_gaussian_rows, g_kl_std_normal_rows, g_mixture_logpdf_rows, mixture_logpdf_rows,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{sigmoid_tensor, softmax_tensor, Activation, Head, MlpSpec, ParamStore};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Name of the pseudo-input parameter block under the mixture prior.
pub const PSEUDO_PARAM: &str = "pseudo.u";

/// Variance threshold below which a latent dimension counts as collapsed in
/// [`FairModel::active_units`].
pub const DEFAULT_ACTIVE_UNIT_THRESHOLD: f64 = 0.01;

/// Which inference factorization the model uses for its second latent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// `q(z2 | z1, y)`: the second layer sees only the first-layer sample.
    Vfae,
    /// `q(z2 | x)`: the second layer is encoded directly from the features.
    Hvfae,
}

/// Prior over the second latent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// `p(z2) = N(0, I)`, with a closed-form KL term.
    StandardGaussian,
    /// Uniform mixture of the `q(z2|x)` posteriors at learned pseudo-inputs,
    /// with a single-sample Monte-Carlo KL estimate. Requires
    /// [`ModelVariant::Hvfae`].
    VampPrior,
}

/// Architecture and objective hyperparameters shared by both variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub prior: PriorKind,
    /// Number of (binary) feature columns.
    pub input_dim: usize,
    /// Width of the first latent layer `z1`.
    pub latent1: usize,
    /// Width of the second latent layer `z2`.
    pub latent2: usize,
    pub y_classes: usize,
    pub s_classes: usize,
    /// Hidden widths for the encoder, decoder, and conditional-prior
    /// networks.
    pub hidden: Vec<usize>,
    /// Hidden widths for the `q(y|z1)` and `q(s|x)` classifiers.
    pub classifier_hidden: Vec<usize>,
    pub activation: Activation,
    /// Weight on the label log-likelihood term in the objective.
    pub alpha: f64,
    /// Number of pseudo-inputs backing the mixture prior (ignored under the
    /// standard prior).
    pub pseudo_count: usize,
    /// Monte-Carlo samples per latent layer when estimating the bound.
    pub mc_samples: usize,
}

impl ModelConfig {
    /// A config with one hidden layer everywhere and single-sample
    /// estimation; callers adjust fields from there.
    pub fn new(
        variant: ModelVariant,
        prior: PriorKind,
        input_dim: usize,
        y_classes: usize,
        s_classes: usize,
    ) -> Self {
        ModelConfig {
            variant,
            prior,
            input_dim,
            latent1: 50,
            latent2: 50,
            y_classes,
            s_classes,
            hidden: vec![100],
            classifier_hidden: vec![100],
            activation: Activation::Softplus,
            alpha: 1.0,
            pseudo_count: 50,
            mc_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        need(self.input_dim >= 1, "input_dim must be at least 1")?;
        need(self.latent1 >= 1, "latent1 must be at least 1")?;
        need(self.latent2 >= 1, "latent2 must be at least 1")?;
        need(self.y_classes >= 2, "y_classes must be at least 2")?;
        need(self.s_classes >= 2, "s_classes must be at least 2")?;
        need(
            self.alpha.is_finite() && self.alpha >= 0.0,
            "alpha must be finite and non-negative",
        )?;
        need(self.mc_samples >= 1, "mc_samples must be at least 1")?;
        need(
            self.hidden.iter().chain(&self.classifier_hidden).all(|&h| h >= 1),
            "hidden widths must be at least 1",
        )?;
        if self.prior == PriorKind::VampPrior {
            need(
                self.variant == ModelVariant::Hvfae,
                "the mixture prior needs q(z2|x), so it requires the hierarchical variant",
            )?;
            need(self.pseudo_count >= 1, "pseudo_count must be at least 1")?;
        }
        Ok(())
    }
}

/// Mean objective pieces over a batch. `total` always equals
/// `recon - kl_z2 - z1_term + alpha * class_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    /// Mean Bernoulli log-likelihood of the features.
    pub recon: f64,
    /// Mean divergence of `q(z2|·)` from its prior (closed form for the
    /// standard prior, single-sample estimate for the mixture prior).
    pub kl_z2: f64,
    /// Mean `KL(q(z1|x,s) || p(z1|z2,y))` at the sampled `z2`.
    pub z1_term: f64,
    /// Mean label log-likelihood under `q(y|z1)`.
    pub class_term: f64,
    pub total: f64,
}

/// Reparameterization noise for one Monte-Carlo draw of both latent layers.
#[derive(Debug, Clone)]
pub struct LatentNoise {
    pub eps_z1: Tensor,
    pub eps_z2: Tensor,
}

/// A pre-sampled second-level code and its prior term. Under the
/// hierarchical variant `q(z2|x)` ignores `s`, so enumeration over `s`
/// branches can share one of these per noise draw.
#[derive(Debug, Clone, Copy)]
pub struct Z2Context {
    pub z2: Var,
    pub kl_z2: Var,
}

/// Per-row objective pieces for one batch under a fixed sensitive
/// representation, plus the posterior pieces downstream penalties need.
/// All term fields are `[n]` vectors already averaged over noise draws.
pub struct ElboRows {
    pub recon: Var,
    pub kl_z2: Var,
    pub z1_term: Var,
    pub class_term: Var,
    /// `recon - kl_z2 - z1_term + alpha * class_term`, per row.
    pub total: Var,
    /// Mean of `q(z1|x,s)` for this branch, `[n, latent1]`.
    pub mu1: Var,
    /// Standard deviation of `q(z1|x,s)` for this branch, `[n, latent1]`.
    pub sigma1: Var,
    /// One first-layer sample per noise draw, each `[n, latent1]`.
    pub z1: Vec<Var>,
}

/// Parameters plus the network shapes needed to rebuild every computation on
/// a fresh graph.
#[derive(Debug, Clone)]
pub struct FairModel {
    config: ModelConfig,
    pub params: ParamStore,
    enc_z1: MlpSpec,
    cls_y: MlpSpec,
    enc_z2: MlpSpec,
    prior_z1: MlpSpec,
    dec_x: MlpSpec,
    cls_s: MlpSpec,
}

impl FairModel {
    fn build_specs(c: &ModelConfig) -> [MlpSpec; 6] {
        let enc_z2_in = match c.variant {
            ModelVariant::Vfae => c.latent1 + c.y_classes,
            ModelVariant::Hvfae => c.input_dim,
        };
        [
            MlpSpec::new(
                "enc_z1",
                c.input_dim + c.s_classes,
                c.hidden.clone(),
                c.latent1,
                c.activation,
                Head::Gaussian,
            ),
            MlpSpec::new(
                "cls_y",
                c.latent1,
                c.classifier_hidden.clone(),
                c.y_classes,
                c.activation,
                Head::Linear,
            ),
            MlpSpec::new("enc_z2", enc_z2_in, c.hidden.clone(), c.latent2, c.activation, Head::Gaussian),
            MlpSpec::new(
                "prior_z1",
                c.latent2 + c.y_classes,
                c.hidden.clone(),
                c.latent1,
                c.activation,
                Head::Gaussian,
            ),
            MlpSpec::new(
                "dec_x",
                c.latent1 + c.s_classes,
                c.hidden.clone(),
                c.input_dim,
                c.activation,
                Head::Linear,
            ),
            MlpSpec::new(
                "cls_s",
                c.input_dim,
                c.classifier_hidden.clone(),
                c.s_classes,
                c.activation,
                Head::Linear,
            ),
        ]
    }

    /// Fresh model with fan-in-uniform weights. Pseudo-inputs (mixture prior
    /// only) start uniform in `±0.05`; see
    /// [`FairModel::init_pseudo_from_data`] for the data-driven alternative.
    pub fn new(config: ModelConfig, rng: &mut RandomStream) -> Result<Self> {
        config.validate()?;
        let [enc_z1, cls_y, enc_z2, prior_z1, dec_x, cls_s] = Self::build_specs(&config);
        let mut params = ParamStore::new();
        for spec in [&enc_z1, &cls_y, &enc_z2, &prior_z1, &dec_x, &cls_s] {
            spec.init_into(&mut params, rng);
        }
        if config.prior == PriorKind::VampPrior {
            let shape = vec![config.pseudo_count, config.input_dim];
            params.insert(PSEUDO_PARAM, rng.uniform_tensor(shape, -0.05, 0.05));
        }
        Ok(FairModel { config, params, enc_z1, cls_y, enc_z2, prior_z1, dec_x, cls_s })
    }

    /// Rebuild a model around an existing parameter store, verifying that it
    /// holds exactly the tensors the config's architecture calls for.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let [enc_z1, cls_y, enc_z2, prior_z1, dec_x, cls_s] = Self::build_specs(&config);
        let model = FairModel { config, params, enc_z1, cls_y, enc_z2, prior_z1, dec_x, cls_s };
        model.check_param_shapes()?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for spec in [&self.enc_z1, &self.cls_y, &self.enc_z2, &self.prior_z1, &self.dec_x, &self.cls_s] {
            out.extend(spec.param_shapes());
        }
        if self.config.prior == PriorKind::VampPrior {
            out.push((PSEUDO_PARAM.to_string(), vec![self.config.pseudo_count, self.config.input_dim]));
        }
        out
    }

    fn check_param_shapes(&self) -> Result<()> {
        let expected = self.expected_shapes();
        if expected.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter store holds {} tensors but the architecture needs {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            if !self.params.contains(name) {
                return Err(Error::Config(format!("parameter store is missing {name}")));
            }
            let got = self.params.get(name);
            if got.shape() != shape.as_slice() {
                return Err(Error::shape(
                    format!("parameter {name}"),
                    format!("{shape:?}"),
                    format!("{:?}", got.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Re-seed the mixture-prior pseudo-inputs with randomly drawn rows of
    /// `x` plus Gaussian jitter of scale `noise_scale`.
    pub fn init_pseudo_from_data(
        &mut self,
        x: &Tensor,
        noise_scale: f64,
        rng: &mut RandomStream,
    ) -> Result<()> {
        if self.config.prior != PriorKind::VampPrior {
            return Err(Error::Config(
                "pseudo-inputs only exist under the mixture prior".to_string(),
            ));
        }
        if x.rank() != 2 || x.cols() != self.config.input_dim || x.rows() == 0 {
            return Err(Error::shape(
                "pseudo-input seeding",
                format!("[n >= 1, {}]", self.config.input_dim),
                format!("{:?}", x.shape()),
            ));
        }
        let k = self.config.pseudo_count;
        let picks: Vec<usize> = (0..k).map(|_| rng.index(x.rows())).collect();
        let mut u = x.select_rows(&picks);
        if noise_scale != 0.0 {
            let jitter = rng.standard_normal(vec![k, self.config.input_dim]);
            for (v, j) in u.data_mut().iter_mut().zip(jitter.data()) {
                *v += noise_scale * j;
            }
        }
        *self.params.get_mut(PSEUDO_PARAM) = u;
        Ok(())
    }

    /// Draw `config.mc_samples` noise sets for a batch of `n` rows.
    pub fn draw_noise(&self, n: usize, rng: &mut RandomStream) -> Vec<LatentNoise> {
        (0..self.config.mc_samples)
            .map(|_| LatentNoise {
                eps_z1: rng.standard_normal(vec![n, self.config.latent1]),
                eps_z2: rng.standard_normal(vec![n, self.config.latent2]),
            })
            .collect()
    }

    /// Log-density of the learned mixture prior at each row of `z2`, with
    /// gradients flowing into the pseudo-inputs and the `z2` encoder.
    pub fn g_vamp_prior_logpdf_rows(&self, g: &mut Graph, z2: Var) -> Result<Var> {
        if self.config.prior != PriorKind::VampPrior {
            return Err(Error::Config(
                "the mixture-prior log-density is only defined when prior = vamp_prior".to_string(),
            ));
        }
        let u = g.param(PSEUDO_PARAM, self.params.get(PSEUDO_PARAM));
        let (mu, sigma) = self.enc_z2.forward_gaussian(g, &self.params, u);
        Ok(g_mixture_logpdf_rows(g, z2, mu, sigma))
    }

    /// Plain evaluation of the mixture-prior log-density, one value per row
    /// of `z2`.
    pub fn vamp_prior_logpdf(&self, z2: &Tensor) -> Result<Tensor> {
        if self.config.prior != PriorKind::VampPrior {
            return Err(Error::Config(
                "the mixture-prior log-density is only defined when prior = vamp_prior".to_string(),
            ));
        }
        if z2.rank() != 2 || z2.cols() != self.config.latent2 {
            return Err(Error::shape(
                "mixture-prior evaluation",
                format!("[n, {}]", self.config.latent2),
                format!("{:?}", z2.shape()),
            ));
        }
        let (mu, sigma) = self.enc_z2.eval_forward_gaussian(&self.params, self.params.get(PSEUDO_PARAM));
        Ok(mixture_logpdf_rows(z2, &mu, &sigma))
    }

    /// Per-row divergence of `q(z2|·) = N(mu2, sigma2)` from the prior:
    /// closed-form KL against `N(0, I)`, or `ln q(z2) - ln p(z2)` at the
    /// given sample under the mixture prior.
    fn z2_prior_term(&self, g: &mut Graph, z2: Var, mu2: Var, sigma2: Var) -> Result<Var> {
        match self.config.prior {
            PriorKind::StandardGaussian => Ok(g_kl_std_normal_rows(g, mu2, sigma2)),
            PriorKind::VampPrior => {
                let logq = g_gaussian_logpdf_rows(g, z2, mu2, sigma2);
                let logp = self.g_vamp_prior_logpdf_rows(g, z2)?;
                Ok(g.sub(logq, logp))
            }
        }
    }

    /// Build `q(z2|x)` once and sample it with each noise set, so that
    /// enumeration branches over `s` can share the draws. Hierarchical
    /// variant only: the other variant's `z2` encoder needs the
    /// branch-specific `z1`.
    pub fn z2_contexts(&self, g: &mut Graph, xc: Var, noise: &[LatentNoise]) -> Result<Vec<Z2Context>> {
        if self.config.variant != ModelVariant::Hvfae {
            return Err(Error::Config(
                "shared z2 draws require the hierarchical variant".to_string(),
            ));
        }
        let (mu2, sigma2) = self.enc_z2.forward_gaussian(g, &self.params, xc);
        noise
            .iter()
            .map(|nz| {
                let z2 = g_gaussian_sample(g, mu2, sigma2, &nz.eps_z2);
                let kl_z2 = self.z2_prior_term(g, z2, mu2, sigma2)?;
                Ok(Z2Context { z2, kl_z2 })
            })
            .collect()
    }

    /// Posterior parameters of `q(z1|x,s)` on the graph, given constant
    /// features `xc` and a `[n, s_classes]` sensitive representation.
    pub fn g_encode_z1(&self, g: &mut Graph, xc: Var, s_rep: Var) -> (Var, Var) {
        let input = g.concat_cols(xc, s_rep);
        self.enc_z1.forward_gaussian(g, &self.params, input)
    }

    /// Logits of `q(s|x)` on the graph.
    pub fn g_classify_s_logits(&self, g: &mut Graph, xc: Var) -> Var {
        self.cls_s.forward(g, &self.params, xc)
    }

    /// Per-row variational lower bound for rows whose sensitive attribute is
    /// represented by `s_rep` — a `[n, s_classes]` row-stochastic matrix,
    /// one-hot when `s` is observed, a relaxed sample otherwise.
    ///
    /// `noise` supplies one entry per Monte-Carlo draw; terms are averaged
    /// over draws. `z2ctx`, when present, must line up with `noise` and
    /// supplies shared second-level draws (hierarchical variant only).
    pub fn supervised_elbo_rows(
        &self,
        g: &mut Graph,
        x: &Tensor,
        y: &[usize],
        s_rep: Var,
        noise: &[LatentNoise],
        z2ctx: Option<&[Z2Context]>,
    ) -> Result<ElboRows> {
        let c = &self.config;
        let n = x.rows();
        if x.rank() != 2 || x.cols() != c.input_dim {
            return Err(Error::shape(
                "bound evaluation features",
                format!("[n, {}]", c.input_dim),
                format!("{:?}", x.shape()),
            ));
        }
        if let Some(&bad) = x.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!(
                "the reconstruction term needs binary features, found {bad}"
            )));
        }
        if y.len() != n {
            return Err(Error::shape("bound evaluation labels", format!("[{n}]"), format!("[{}]", y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&cl| cl >= c.y_classes) {
            return Err(Error::Data(format!(
                "label {bad} is out of range for {} classes",
                c.y_classes
            )));
        }
        if g.value(s_rep).shape() != [n, c.s_classes] {
            return Err(Error::shape(
                "sensitive representation",
                format!("[{n}, {}]", c.s_classes),
                format!("{:?}", g.value(s_rep).shape()),
            ));
        }
        if noise.is_empty() {
            return Err(Error::Config("at least one noise draw is required".to_string()));
        }
        for nz in noise {
            if nz.eps_z1.shape() != [n, c.latent1] || nz.eps_z2.shape() != [n, c.latent2] {
                return Err(Error::shape(
                    "latent noise",
                    format!("[{n}, {}] and [{n}, {}]", c.latent1, c.latent2),
                    format!("{:?} and {:?}", nz.eps_z1.shape(), nz.eps_z2.shape()),
                ));
            }
        }
        if let Some(ctx) = z2ctx {
            if c.variant != ModelVariant::Hvfae {
                return Err(Error::Config(
                    "shared z2 draws require the hierarchical variant".to_string(),
                ));
            }
            if ctx.len() != noise.len() {
                return Err(Error::Config(format!(
                    "{} shared z2 draws for {} noise sets",
                    ctx.len(),
                    noise.len()
                )));
            }
        }

        let xc = g.constant(x.clone());
        let (mu1, sigma1) = self.g_encode_z1(g, xc, s_rep);
        let y1h = g.constant(Tensor::one_hot(y, c.y_classes));

        let draws = noise.len();
        let mut recon_d = Vec::with_capacity(draws);
        let mut kl_z2_d = Vec::with_capacity(draws);
        let mut z1_term_d = Vec::with_capacity(draws);
        let mut class_d = Vec::with_capacity(draws);
        let mut z1_samples = Vec::with_capacity(draws);
        for (i, nz) in noise.iter().enumerate() {
            let z1 = g_gaussian_sample(g, mu1, sigma1, &nz.eps_z1);
            z1_samples.push(z1);

            let y_logits = self.cls_y.forward(g, &self.params, z1);
            class_d.push(g_categorical_logpdf_rows(g, y_logits, y));

            let (z2, kl_z2) = match z2ctx {
                Some(ctx) => (ctx[i].z2, ctx[i].kl_z2),
                None => {
                    let enc_in = match c.variant {
                        ModelVariant::Vfae => g.concat_cols(z1, y1h),
                        ModelVariant::Hvfae => xc,
                    };
                    let (mu2, sigma2) = self.enc_z2.forward_gaussian(g, &self.params, enc_in);
                    let z2 = g_gaussian_sample(g, mu2, sigma2, &nz.eps_z2);
                    let kl = self.z2_prior_term(g, z2, mu2, sigma2)?;
                    (z2, kl)
                }
            };
            kl_z2_d.push(kl_z2);

            let prior_in = g.concat_cols(z2, y1h);
            let (pmu, psigma) = self.prior_z1.forward_gaussian(g, &self.params, prior_in);
            z1_term_d.push(g_kl_gaussian_rows(g, mu1, sigma1, pmu, psigma));

            let dec_in = g.concat_cols(z1, s_rep);
            let x_logits = self.dec_x.forward(g, &self.params, dec_in);
            recon_d.push(g_bernoulli_loglik_rows(g, x, x_logits));
        }

        let recon = mc_average(g, &recon_d);
        let kl_z2 = mc_average(g, &kl_z2_d);
        let z1_term = mc_average(g, &z1_term_d);
        let class_term = mc_average(g, &class_d);
        let total = {
            let a = g.sub(recon, kl_z2);
            let b = g.sub(a, z1_term);
            let weighted = g.mul_scalar(class_term, c.alpha);
            g.add(b, weighted)
        };
        for (v, name) in [
            (recon, "recon"),
            (kl_z2, "kl_z2"),
            (z1_term, "z1_term"),
            (class_term, "class_term"),
            (total, "total"),
        ] {
            ensure_finite(g, v, name)?;
        }
        Ok(ElboRows { recon, kl_z2, z1_term, class_term, total, mu1, sigma1, z1: z1_samples })
    }

    /// Batch-mean bound terms for a fully observed batch, with fresh noise
    /// from `rng`.
    pub fn elbo_terms(
        &self,
        x: &Tensor,
        y: &[usize],
        s: &[usize],
        rng: &mut RandomStream,
    ) -> Result<ElboTerms> {
        let s_hot = self.one_hot_s(x.rows(), s)?;
        let mut g = Graph::new();
        let s_rep = g.constant(s_hot);
        let noise = self.draw_noise(x.rows(), rng);
        let rows = self.supervised_elbo_rows(&mut g, x, y, s_rep, &noise, None)?;
        Ok(batch_means(&g, &rows))
    }

    fn one_hot_s(&self, n: usize, s: &[usize]) -> Result<Tensor> {
        if s.len() != n {
            return Err(Error::shape("sensitive labels", format!("[{n}]"), format!("[{}]", s.len())));
        }
        if let Some(&bad) = s.iter().find(|&&cl| cl >= self.config.s_classes) {
            return Err(Error::Data(format!(
                "sensitive label {bad} is out of range for {} classes",
                self.config.s_classes
            )));
        }
        Ok(Tensor::one_hot(s, self.config.s_classes))
    }

    /// Posterior `(mean, sigma)` of `q(z1|x,s)` without building a graph.
    pub fn encode_z1(&self, x: &Tensor, s: &[usize]) -> Result<(Tensor, Tensor)> {
        if x.rank() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "encoder features",
                format!("[n, {}]", self.config.input_dim),
                format!("{:?}", x.shape()),
            ));
        }
        let s_hot = self.one_hot_s(x.rows(), s)?;
        let input = Tensor::hcat(x, &s_hot);
        Ok(self.enc_z1.eval_forward_gaussian(&self.params, &input))
    }

    /// Posterior mean of `q(z1|x,s)` per row.
    pub fn encode_z1_mean(&self, x: &Tensor, s: &[usize]) -> Result<Tensor> {
        Ok(self.encode_z1(x, s)?.0)
    }

    /// Label probabilities `q(y|z1)` per row of `z1`.
    pub fn classify_y_probs(&self, z1: &Tensor) -> Result<Tensor> {
        if z1.rank() != 2 || z1.cols() != self.config.latent1 {
            return Err(Error::shape(
                "label classifier input",
                format!("[n, {}]", self.config.latent1),
                format!("{:?}", z1.shape()),
            ));
        }
        Ok(softmax_tensor(&self.cls_y.eval_forward(&self.params, z1)))
    }

    /// Sensitive-attribute probabilities `q(s|x)` per row.
    pub fn classify_s_probs(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "sensitive classifier input",
                format!("[n, {}]", self.config.input_dim),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(softmax_tensor(&self.cls_s.eval_forward(&self.params, x)))
    }

    /// Per-feature Bernoulli means of `p(x|z1,s)`.
    pub fn decode_x_probs(&self, z1: &Tensor, s: &[usize]) -> Result<Tensor> {
        if z1.rank() != 2 || z1.cols() != self.config.latent1 {
            return Err(Error::shape(
                "decoder input",
                format!("[n, {}]", self.config.latent1),
                format!("{:?}", z1.shape()),
            ));
        }
        let s_hot = self.one_hot_s(z1.rows(), s)?;
        let input = Tensor::hcat(z1, &s_hot);
        Ok(sigmoid_tensor(&self.dec_x.eval_forward(&self.params, &input)))
    }

    /// Count latent dimensions per layer whose posterior mean varies across
    /// the dataset: `(active_z1, active_z2)`, where a dimension is active
    /// when the variance of its posterior mean exceeds `threshold`.
    pub fn active_units(
        &self,
        x: &Tensor,
        y: &[usize],
        s: &[usize],
        threshold: f64,
    ) -> Result<(usize, usize)> {
        let (z1_mean, _) = self.encode_z1(x, s)?;
        if y.len() != x.rows() {
            return Err(Error::shape("labels", format!("[{}]", x.rows()), format!("[{}]", y.len())));
        }
        let z2_input = match self.config.variant {
            ModelVariant::Hvfae => x.clone(),
            ModelVariant::Vfae => {
                if let Some(&bad) = y.iter().find(|&&cl| cl >= self.config.y_classes) {
                    return Err(Error::Data(format!(
                        "label {bad} is out of range for {} classes",
                        self.config.y_classes
                    )));
                }
                Tensor::hcat(&z1_mean, &Tensor::one_hot(y, self.config.y_classes))
            }
        };
        let (z2_mean, _) = self.enc_z2.eval_forward_gaussian(&self.params, &z2_input);
        Ok((count_active(&z1_mean, threshold), count_active(&z2_mean, threshold)))
    }

    /// Write config and parameters to a binary checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, t) in self.params.iter() {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u64).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild a model from [`FairModel::save`] output, verifying that the
    /// stored tensors match the stored config's architecture.
    pub fn load(path: &Path) -> Result<FairModel> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Data(format!("{} is not a model checkpoint", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let cfg_len = read_len(&mut r, 1 << 20, "config block")?;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config: ModelConfig = serde_json::from_slice(&cfg)?;
        let count = read_len(&mut r, 1 << 16, "parameter count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = read_len(&mut r, 4096, "parameter name")?;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Data("parameter name is not valid UTF-8".to_string()))?;
            if params.contains(&name) {
                return Err(Error::Data(format!("duplicate parameter {name} in checkpoint")));
            }
            let rank = read_len(&mut r, 8, "tensor rank")?;
            let mut shape = Vec::with_capacity(rank);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = read_len(&mut r, 1 << 28, "tensor dimension")?;
                numel = numel
                    .checked_mul(d)
                    .filter(|&m| m <= (1 << 28))
                    .ok_or_else(|| Error::Data(format!("tensor {name} is implausibly large")))?;
                shape.push(d);
            }
            let mut data = vec![0.0f64; numel];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            params.insert(name, Tensor::new(shape, data)?);
        }
        FairModel::from_parts(config, params)
    }
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"FVAE";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, cap: usize, what: &str) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let v = u64::from_le_bytes(b);
    if v > cap as u64 {
        return Err(Error::Data(format!("checkpoint {what} {v} exceeds the limit {cap}")));
    }
    Ok(v as usize)
}

/// Mean of per-draw `[n]` vectors.
fn mc_average(g: &mut Graph, draws: &[Var]) -> Var {
    let mut acc = draws[0];
    for v in &draws[1..] {
        acc = g.add(acc, *v);
    }
    if draws.len() > 1 {
        g.mul_scalar(acc, 1.0 / draws.len() as f64)
    } else {
        acc
    }
}

fn ensure_finite(g: &Graph, v: Var, term: &str) -> Result<()> {
    match g.value(v).first_non_finite() {
        None => Ok(()),
        Some((i, val)) => Err(Error::non_finite_at(format!("bound term {term}"), format!("row {i} is {val}"))),
    }
}

fn batch_means(g: &Graph, rows: &ElboRows) -> ElboTerms {
    let mean = |v: Var| {
        let t = g.value(v);
        t.data().iter().sum::<f64>() / t.numel() as f64
    };
    ElboTerms {
        recon: mean(rows.recon),
        kl_z2: mean(rows.kl_z2),
        z1_term: mean(rows.z1_term),
        class_term: mean(rows.class_term),
        total: mean(rows.total),
    }
}

fn count_active(means: &Tensor, threshold: f64) -> usize {
    let (n, d) = (means.rows(), means.cols());
    (0..d)
        .filter(|&j| {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for i in 0..n {
                let v = means.data()[i * d + j];
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / n as f64;
            sumsq / n as f64 - mean * mean > threshold
        })
        .count()
}
