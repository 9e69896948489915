//! Training objective for batches where the sensitive attribute is observed
//! on some rows and missing on the rest. Observed rows contribute their
//! supervised bound plus the classifier's log-likelihood `ln q(s|x)`;
//! unobserved rows marginalize the bound over `q(s|x)` (exact enumeration by
//! default, a relaxed one-hot sample as the scalable alternative) minus a
//! divergence from the prior over `s`. A representation penalty on the drawn
//! `z1` is subtracted with weight `lambda_reg`.

use serde::{Deserialize, Serialize};

use crate::dist::{
    g_categorical_logpdf_rows, g_concrete_sample_rows, g_gaussian_logpdf_rows,
    g_kl_categorical_rows,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{ElboRows, ElboTerms, FairModel, LatentNoise, ModelVariant};
use crate::regularizers::{g_mi_rows, g_rff_expand, RffProjection};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Which rows of a dataset (or batch) have an observed sensitive attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionMask {
    observed: Vec<bool>,
}

impl SupervisionMask {
    pub fn full(n: usize) -> Self {
        SupervisionMask { observed: vec![true; n] }
    }

    pub fn from_flags(observed: Vec<bool>) -> Self {
        SupervisionMask { observed }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn fraction_observed(&self) -> f64 {
        if self.observed.is_empty() {
            0.0
        } else {
            self.count_observed() as f64 / self.len() as f64
        }
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.observed[i]).collect()
    }

    pub fn unobserved_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.observed[i]).collect()
    }

    /// The mask restricted to (and reordered by) the given row indices, for
    /// carving minibatch masks out of a dataset-level mask.
    pub fn select(&self, idx: &[usize]) -> Self {
        SupervisionMask { observed: idx.iter().map(|&i| self.observed[i]).collect() }
    }
}

/// Choose `round(fraction * n)` rows to mark as observed, stratified by the
/// sensitive value so every class keeps at least one observed row and class
/// proportions carry over (largest-remainder rounding). Deterministic in
/// `seed`.
pub fn make_mask(n: usize, fraction: f64, s: &[usize], seed: u64) -> Result<SupervisionMask> {
    if s.len() != n {
        return Err(Error::shape("supervision mask", format!("[{n}]"), format!("[{}]", s.len())));
    }
    if n == 0 {
        return Err(Error::Data("cannot build a mask over zero rows".to_string()));
    }
    if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
        return Err(Error::Config(format!("observed fraction must lie in [0, 1], got {fraction}")));
    }
    let classes = s.iter().copied().max().unwrap() + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in s.iter().enumerate() {
        members[c].push(i);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| !members[c].is_empty()).collect();
    let target = (fraction * n as f64).round() as usize;
    if target < present.len() {
        return Err(Error::Config(format!(
            "observing {target} of {n} rows cannot cover all {} sensitive classes; raise the fraction",
            present.len()
        )));
    }

    // Floor quotas per class, then hand out the shortfall by largest
    // fractional remainder (ties broken by class index).
    let mut quota = vec![0usize; classes];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0;
    for &c in &present {
        let raw = fraction * members[c].len() as f64;
        quota[c] = raw.floor() as usize;
        assigned += quota[c];
        remainders.push((raw - raw.floor(), c));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut iter = remainders.iter().cycle();
    while assigned < target {
        let &(_, c) = iter.next().unwrap();
        if quota[c] < members[c].len() {
            quota[c] += 1;
            assigned += 1;
        }
    }
    // Every class needs at least one observed row; pay for each bump by
    // docking the largest quota.
    for &c in &present {
        if quota[c] == 0 {
            let donor = *present
                .iter()
                .max_by_key(|&&d| quota[d])
                .expect("at least one class is present");
            debug_assert!(quota[donor] > 1, "target >= class count guarantees a donor");
            quota[donor] -= 1;
            quota[c] = 1;
        }
    }

    let mut rng = RandomStream::seed(seed);
    let mut observed = vec![false; n];
    for &c in &present {
        let mut rows = members[c].clone();
        rng.shuffle(&mut rows);
        for &i in rows.iter().take(quota[c]) {
            observed[i] = true;
        }
    }
    Ok(SupervisionMask { observed })
}

/// Relative frequency of each sensitive class among the observed rows.
/// Errors when a class never appears there (the divergence term needs a
/// strictly positive prior; use a uniform one instead).
pub fn empirical_s_prior(s: &[usize], mask: &SupervisionMask, s_classes: usize) -> Result<Vec<f64>> {
    if mask.len() != s.len() {
        return Err(Error::shape("prior estimation", format!("[{}]", s.len()), format!("[{}]", mask.len())));
    }
    let mut counts = vec![0usize; s_classes];
    let mut total = 0usize;
    for (i, &c) in s.iter().enumerate() {
        if mask.is_observed(i) {
            if c >= s_classes {
                return Err(Error::Data(format!("sensitive label {c} out of range for {s_classes} classes")));
            }
            counts[c] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("no observed rows to estimate the sensitive prior from".to_string()));
    }
    if let Some(missing) = counts.iter().position(|&k| k == 0) {
        return Err(Error::Data(format!(
            "sensitive class {missing} has no observed rows; use a uniform prior instead"
        )));
    }
    Ok(counts.into_iter().map(|k| k as f64 / total as f64).collect())
}

/// How the expectation over the unobserved sensitive attribute is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SExpectation {
    /// Sum the bound over every class, weighted by `q(s|x)`. Exact; cost
    /// scales with the class count.
    Enumerate,
    /// One relaxed one-hot sample per row through the Gumbel-softmax
    /// reparameterization.
    ConcreteSample { temperature: f64 },
}

impl SExpectation {
    /// The relaxed-sample mode at its usual temperature.
    pub fn concrete_default() -> Self {
        SExpectation::ConcreteSample { temperature: 0.66 }
    }
}

impl Default for SExpectation {
    fn default() -> Self {
        SExpectation::Enumerate
    }
}

/// Representation penalty subtracted from the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    /// Random-feature two-sample statistic between the two sensitive groups'
    /// drawn `z1`, observed rows only (unobserved rows have no group).
    Mmd,
    /// Bound on the information the drawn `z1` carries about `s`, from the
    /// model's own densities; covers all rows, enumerating branches for
    /// unobserved ones.
    Mi,
}

/// Weights and choices assembled once per training run.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub lambda_reg: f64,
    pub penalty: PenaltyKind,
    /// Prior over the sensitive attribute for the unobserved rows'
    /// divergence term; strictly positive, sums to one.
    pub prior_s: Vec<f64>,
    pub s_expectation: SExpectation,
    /// Frozen feature map for the two-sample penalty; required when
    /// `penalty = Mmd`.
    pub rff: Option<RffProjection>,
}

impl ObjectiveConfig {
    /// Penalty-free objective with a uniform sensitive prior and exact
    /// enumeration.
    pub fn plain(s_classes: usize) -> Self {
        ObjectiveConfig {
            lambda_reg: 0.0,
            penalty: PenaltyKind::None,
            prior_s: vec![1.0 / s_classes as f64; s_classes],
            s_expectation: SExpectation::Enumerate,
            rff: None,
        }
    }

    pub fn validate(&self, s_classes: usize) -> Result<()> {
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!(
                "penalty weight must be finite and non-negative, got {}",
                self.lambda_reg
            )));
        }
        if self.prior_s.len() != s_classes {
            return Err(Error::Config(format!(
                "sensitive prior has {} entries for {s_classes} classes",
                self.prior_s.len()
            )));
        }
        let sum: f64 = self.prior_s.iter().sum();
        if self.prior_s.iter().any(|&p| !(p.is_finite() && p > 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "sensitive prior must be strictly positive and sum to one, got {:?}",
                self.prior_s
            )));
        }
        if let SExpectation::ConcreteSample { temperature } = self.s_expectation {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::Config(format!(
                    "relaxation temperature must be positive, got {temperature}"
                )));
            }
        }
        match self.penalty {
            PenaltyKind::Mmd => {
                if self.rff.is_none() {
                    return Err(Error::Config(
                        "the two-sample penalty needs a frozen feature map (rff)".to_string(),
                    ));
                }
                if s_classes != 2 {
                    return Err(Error::Config(format!(
                        "the two-sample penalty compares exactly two groups, got {s_classes} classes"
                    )));
                }
            }
            PenaltyKind::None | PenaltyKind::Mi => {}
        }
        Ok(())
    }
}

/// One sensitive-class branch of the marginalized bound.
pub struct BranchRows {
    /// `q(s = c | x)` per row, differentiable through the classifier.
    pub weight: Var,
    pub rows: ElboRows,
}

/// The marginalized bound for rows with unobserved `s`, plus the pieces a
/// penalty or a diagnostic needs.
pub struct UnsupRows {
    /// Per-row bound: the branch expectation minus the prior divergence.
    pub total: Var,
    /// Constant feature matrix these rows were built from.
    pub xc: Var,
    /// `q(s|x)` logits.
    pub s_logits: Var,
    /// `KL(q(s|x) || p(s))` per row.
    pub prior_kl: Var,
    /// One branch per class under enumeration; empty in relaxed mode.
    pub branches: Vec<BranchRows>,
    /// The single relaxed branch when sampling instead of enumerating.
    pub relaxed: Option<ElboRows>,
}

/// Per-row bound for rows whose sensitive attribute is missing:
/// `E_{q(s|x)}[bound(x, y, s)] - KL(q(s|x) || p(s))`, with the expectation
/// enumerated or replaced by one relaxed sample according to `mode` (the
/// relaxed path draws its Gumbel noise from `rng`).
pub fn unsup_bound_rows(
    g: &mut Graph,
    model: &FairModel,
    x: &Tensor,
    y: &[usize],
    noise: &[LatentNoise],
    prior_s: &[f64],
    mode: SExpectation,
    rng: &mut RandomStream,
) -> Result<UnsupRows> {
    let s_classes = model.config().s_classes;
    if prior_s.len() != s_classes
        || prior_s.iter().any(|&p| !(p.is_finite() && p > 0.0))
        || (prior_s.iter().sum::<f64>() - 1.0).abs() > 1e-6
    {
        return Err(Error::Config(format!(
            "sensitive prior must be a strictly positive distribution over {s_classes} classes, got {prior_s:?}"
        )));
    }
    let n = x.rows();
    let xc = g.constant(x.clone());
    let s_logits = model.g_classify_s_logits(g, xc);
    let prior_kl = g_kl_categorical_rows(g, s_logits, prior_s);
    let ctx = match model.config().variant {
        ModelVariant::Hvfae => Some(model.z2_contexts(g, xc, noise)?),
        ModelVariant::Vfae => None,
    };
    match mode {
        SExpectation::Enumerate => {
            let probs = g.softmax_rows(s_logits);
            let mut branches = Vec::with_capacity(s_classes);
            let mut expected: Option<Var> = None;
            for c in 0..s_classes {
                let s_rep = g.constant(Tensor::one_hot(&vec![c; n], s_classes));
                let rows = model.supervised_elbo_rows(g, x, y, s_rep, noise, ctx.as_deref())?;
                let weight = g.gather_cols(probs, &vec![c; n]);
                let contrib = g.mul(weight, rows.total);
                expected = Some(match expected {
                    None => contrib,
                    Some(acc) => g.add(acc, contrib),
                });
                branches.push(BranchRows { weight, rows });
            }
            let total = g.sub(expected.expect("at least two classes"), prior_kl);
            Ok(UnsupRows { total, xc, s_logits, prior_kl, branches, relaxed: None })
        }
        SExpectation::ConcreteSample { temperature } => {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::Config(format!(
                    "relaxation temperature must be positive, got {temperature}"
                )));
            }
            let gumbel = rng.gumbel(vec![n, s_classes]);
            let s_rep = g_concrete_sample_rows(g, s_logits, &gumbel, temperature);
            let rows = model.supervised_elbo_rows(g, x, y, s_rep, noise, ctx.as_deref())?;
            let total = g.sub(rows.total, prior_kl);
            Ok(UnsupRows { total, xc, s_logits, prior_kl, branches: Vec::new(), relaxed: Some(rows) })
        }
    }
}

/// Everything the training loop needs from one objective evaluation.
pub struct ObjectiveParts {
    /// Scalar to maximize.
    pub objective: Var,
    /// Aggregated generative-bound breakdown (excludes the classifier
    /// log-likelihood, the prior divergence, and the penalty).
    pub terms: ElboTerms,
    /// Value of the penalty before weighting (zero when absent or skipped).
    pub penalty: f64,
    /// Mean `ln q(s|x)` over observed rows (zero when none).
    pub s_loglik: f64,
    /// Mean `KL(q(s|x) || p(s))` over unobserved rows (zero when none).
    pub prior_kl: f64,
}

/// The full training objective over a mixed batch:
/// mean over observed rows of `bound + ln q(s|x)`, plus the mean over
/// unobserved rows of the marginalized bound, minus `lambda_reg` times the
/// representation penalty evaluated at the drawn `z1`.
///
/// `s` entries at unobserved rows are never read. Noise consumption is fixed
/// at one full-batch draw per Monte-Carlo sample regardless of the mask, so
/// seed-matched runs that differ only in the penalty weight see identical
/// randomness; the relaxed mode afterwards draws Gumbel noise for the
/// unobserved rows.
pub fn combined_objective(
    g: &mut Graph,
    model: &FairModel,
    x: &Tensor,
    y: &[usize],
    s: &[usize],
    mask: &SupervisionMask,
    cfg: &ObjectiveConfig,
    rng: &mut RandomStream,
) -> Result<ObjectiveParts> {
    let c = model.config().clone();
    let n = x.rows();
    if n == 0 {
        return Err(Error::Data("cannot evaluate the objective on an empty batch".to_string()));
    }
    if mask.len() != n || s.len() != n {
        return Err(Error::shape(
            "objective batch",
            format!("mask and s of length {n}"),
            format!("[{}] and [{}]", mask.len(), s.len()),
        ));
    }
    cfg.validate(c.s_classes)?;
    let obs_idx = mask.observed_indices();
    let unobs_idx = mask.unobserved_indices();
    if let Some(&bad) = obs_idx.iter().map(|&i| &s[i]).find(|&&v| v >= c.s_classes) {
        return Err(Error::Data(format!(
            "observed sensitive label {bad} out of range for {} classes",
            c.s_classes
        )));
    }

    let noise = model.draw_noise(n, rng);

    let mut obs_pack: Option<(ElboRows, Var, Var, Vec<usize>)> = None;
    let mut objective: Option<Var> = None;
    let mut s_loglik = 0.0;
    if !obs_idx.is_empty() {
        let x_o = x.select_rows(&obs_idx);
        let y_o: Vec<usize> = obs_idx.iter().map(|&i| y[i]).collect();
        let s_o: Vec<usize> = obs_idx.iter().map(|&i| s[i]).collect();
        let noise_o = select_noise(&noise, &obs_idx);
        let s_rep = g.constant(Tensor::one_hot(&s_o, c.s_classes));
        let rows = model.supervised_elbo_rows(g, &x_o, &y_o, s_rep, &noise_o, None)?;
        let xc_o = g.constant(x_o);
        let s_logits = model.g_classify_s_logits(g, xc_o);
        let s_ll = g_categorical_logpdf_rows(g, s_logits, &s_o);
        let with_ll = g.add(rows.total, s_ll);
        let mean = g.mean_all(with_ll);
        objective = Some(mean);
        s_loglik = tensor_mean(g.value(s_ll));
        obs_pack = Some((rows, s_logits, xc_o, s_o));
    }

    let mut unobs_pack: Option<UnsupRows> = None;
    let mut prior_kl = 0.0;
    if !unobs_idx.is_empty() {
        let x_u = x.select_rows(&unobs_idx);
        let y_u: Vec<usize> = unobs_idx.iter().map(|&i| y[i]).collect();
        let noise_u = select_noise(&noise, &unobs_idx);
        let u = unsup_bound_rows(g, model, &x_u, &y_u, &noise_u, &cfg.prior_s, cfg.s_expectation, rng)?;
        let mean = g.mean_all(u.total);
        objective = Some(match objective {
            None => mean,
            Some(o) => g.add(o, mean),
        });
        prior_kl = tensor_mean(g.value(u.prior_kl));
        unobs_pack = Some(u);
    }
    let mut objective = objective.expect("a non-empty batch has at least one subset");

    let penalty_var = match cfg.penalty {
        PenaltyKind::None => None,
        PenaltyKind::Mmd => {
            let proj = cfg.rff.as_ref().expect("validated above");
            two_sample_penalty(g, obs_pack.as_ref().map(|(rows, ..)| rows), obs_pack.as_ref().map(|p| p.3.as_slice()), proj)?
        }
        PenaltyKind::Mi => Some(information_penalty(
            g,
            model,
            n,
            obs_pack.as_ref().map(|(rows, s_logits, xc, _)| (rows, *s_logits, *xc)),
            unobs_pack.as_ref(),
        )),
    };
    let penalty = penalty_var.map(|p| g.value(p).item()).unwrap_or(0.0);
    if let Some(p) = penalty_var {
        let scaled = g.mul_scalar(p, cfg.lambda_reg);
        objective = g.sub(objective, scaled);
    }

    let terms = aggregate_terms(g, &c, obs_pack.as_ref().map(|(rows, ..)| rows), unobs_pack.as_ref());
    Ok(ObjectiveParts { objective, terms, penalty, s_loglik, prior_kl })
}

fn select_noise(noise: &[LatentNoise], idx: &[usize]) -> Vec<LatentNoise> {
    noise
        .iter()
        .map(|nz| LatentNoise {
            eps_z1: nz.eps_z1.select_rows(idx),
            eps_z2: nz.eps_z2.select_rows(idx),
        })
        .collect()
}

fn tensor_mean(t: &Tensor) -> f64 {
    t.data().iter().sum::<f64>() / t.numel() as f64
}

/// Mean of per-draw vars.
fn average_draws(g: &mut Graph, draws: &[Var]) -> Var {
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

/// Random-feature two-sample statistic between the sensitive groups' drawn
/// `z1`, observed rows only, averaged over Monte-Carlo draws. `None` (with a
/// log line) when either group is empty.
fn two_sample_penalty(
    g: &mut Graph,
    obs_rows: Option<&ElboRows>,
    s_obs: Option<&[usize]>,
    proj: &RffProjection,
) -> Result<Option<Var>> {
    let (rows, s_obs) = match (obs_rows, s_obs) {
        (Some(r), Some(s)) => (r, s),
        _ => {
            log::warn!("two-sample penalty skipped: no observed rows in the batch");
            return Ok(None);
        }
    };
    let a_idx: Vec<usize> = (0..s_obs.len()).filter(|&i| s_obs[i] == 0).collect();
    let b_idx: Vec<usize> = (0..s_obs.len()).filter(|&i| s_obs[i] == 1).collect();
    if a_idx.is_empty() || b_idx.is_empty() {
        log::warn!(
            "two-sample penalty skipped: observed groups have {} and {} rows",
            a_idx.len(),
            b_idx.len()
        );
        return Ok(None);
    }
    let wa = group_mean_weights(s_obs.len(), &a_idx);
    let wb = group_mean_weights(s_obs.len(), &b_idx);
    let mut per_draw = Vec::with_capacity(rows.z1.len());
    for &z1 in &rows.z1 {
        let feat = g_rff_expand(g, z1, proj)?;
        let ma = g.weighted_colsum(feat, &wa);
        let mb = g.weighted_colsum(feat, &wb);
        let diff = g.sub(ma, mb);
        let sq = g.square(diff);
        per_draw.push(g.sum_all(sq));
    }
    Ok(Some(average_draws(g, &per_draw)))
}

fn group_mean_weights(n: usize, idx: &[usize]) -> Tensor {
    let mut w = vec![0.0; n];
    for &i in idx {
        w[i] = 1.0 / idx.len() as f64;
    }
    Tensor::vector(w)
}

/// Densities of `q(z1|x,s')` for every class branch of one subset.
struct MiBranches {
    mus: Vec<Var>,
    sigmas: Vec<Var>,
}

fn mi_branches(g: &mut Graph, model: &FairModel, xc: Var, n: usize) -> MiBranches {
    let s_classes = model.config().s_classes;
    let mut mus = Vec::with_capacity(s_classes);
    let mut sigmas = Vec::with_capacity(s_classes);
    for c in 0..s_classes {
        let s_rep = g.constant(Tensor::one_hot(&vec![c; n], s_classes));
        let (mu, sigma) = model.g_encode_z1(g, xc, s_rep);
        mus.push(mu);
        sigmas.push(sigma);
    }
    MiBranches { mus, sigmas }
}

/// Per-row information penalty at one drawn `z1`, with the chosen branch's
/// own posterior `(mu, sigma)`.
fn mi_rows_at(
    g: &mut Graph,
    branches: &MiBranches,
    own: (Var, Var),
    z1: Var,
    s_logits: Var,
) -> Var {
    let lps: Vec<Var> = branches
        .mus
        .iter()
        .zip(&branches.sigmas)
        .map(|(&mu, &sigma)| g_gaussian_logpdf_rows(g, z1, mu, sigma))
        .collect();
    let stack = g.stack_cols(&lps);
    let chosen = g_gaussian_logpdf_rows(g, z1, own.0, own.1);
    g_mi_rows(g, chosen, stack, s_logits)
}

/// Information penalty over the whole batch: observed rows at their drawn
/// `z1`, unobserved rows as a `q(s|x)`-weighted sum over branch draws (or
/// the single relaxed draw), summed and divided by the batch size, averaged
/// over Monte-Carlo draws.
fn information_penalty(
    g: &mut Graph,
    model: &FairModel,
    batch_size: usize,
    obs: Option<(&ElboRows, Var, Var)>,
    unobs: Option<&UnsupRows>,
) -> Var {
    let mut per_draw_sums: Vec<Vec<Var>> = Vec::new();
    let draws = model.config().mc_samples;
    per_draw_sums.resize_with(draws, Vec::new);

    if let Some((rows, s_logits, xc)) = obs {
        let n_o = rows.z1.first().map(|&z| g.value(z).rows()).unwrap_or(0);
        let branches = mi_branches(g, model, xc, n_o);
        for (k, &z1) in rows.z1.iter().enumerate() {
            let pen = mi_rows_at(g, &branches, (rows.mu1, rows.sigma1), z1, s_logits);
            per_draw_sums[k].push(g.sum_all(pen));
        }
    }
    if let Some(u) = unobs {
        if let Some(rows) = &u.relaxed {
            let n_u = g.value(rows.z1[0]).rows();
            let branches = mi_branches(g, model, u.xc, n_u);
            for (k, &z1) in rows.z1.iter().enumerate() {
                let pen = mi_rows_at(g, &branches, (rows.mu1, rows.sigma1), z1, u.s_logits);
                per_draw_sums[k].push(g.sum_all(pen));
            }
        } else {
            let branches = MiBranches {
                mus: u.branches.iter().map(|b| b.rows.mu1).collect(),
                sigmas: u.branches.iter().map(|b| b.rows.sigma1).collect(),
            };
            for branch in &u.branches {
                for (k, &z1) in branch.rows.z1.iter().enumerate() {
                    let pen = mi_rows_at(
                        g,
                        &branches,
                        (branch.rows.mu1, branch.rows.sigma1),
                        z1,
                        u.s_logits,
                    );
                    let weighted = g.mul(branch.weight, pen);
                    per_draw_sums[k].push(g.sum_all(weighted));
                }
            }
        }
    }

    let per_draw: Vec<Var> = per_draw_sums
        .into_iter()
        .map(|parts| {
            let mut acc: Option<Var> = None;
            for p in parts {
                acc = Some(match acc {
                    None => p,
                    Some(a) => g.add(a, p),
                });
            }
            let total = acc.expect("penalty over a non-empty batch");
            g.mul_scalar(total, 1.0 / batch_size as f64)
        })
        .collect();
    average_draws(g, &per_draw)
}

/// Batch-level term breakdown mirroring the objective's structure: subset
/// means added together, with unobserved branches weighted by `q(s|x)`.
fn aggregate_terms(
    g: &Graph,
    config: &crate::models::ModelConfig,
    obs: Option<&ElboRows>,
    unobs: Option<&UnsupRows>,
) -> ElboTerms {
    let mut recon = 0.0;
    let mut kl_z2 = 0.0;
    let mut z1_term = 0.0;
    let mut class_term = 0.0;
    if let Some(rows) = obs {
        recon += tensor_mean(g.value(rows.recon));
        kl_z2 += tensor_mean(g.value(rows.kl_z2));
        z1_term += tensor_mean(g.value(rows.z1_term));
        class_term += tensor_mean(g.value(rows.class_term));
    }
    if let Some(u) = unobs {
        if let Some(rows) = &u.relaxed {
            recon += tensor_mean(g.value(rows.recon));
            kl_z2 += tensor_mean(g.value(rows.kl_z2));
            z1_term += tensor_mean(g.value(rows.z1_term));
            class_term += tensor_mean(g.value(rows.class_term));
        } else {
            let weighted_mean = |g: &Graph, field: &dyn Fn(&ElboRows) -> Var| -> f64 {
                let mut acc = 0.0;
                let mut n = 0usize;
                for b in &u.branches {
                    let w = g.value(b.weight);
                    let v = g.value(field(&b.rows));
                    n = w.numel();
                    acc += w.data().iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>();
                }
                acc / n as f64
            };
            recon += weighted_mean(g, &|r| r.recon);
            kl_z2 += weighted_mean(g, &|r| r.kl_z2);
            z1_term += weighted_mean(g, &|r| r.z1_term);
            class_term += weighted_mean(g, &|r| r.class_term);
        }
    }
    let total = recon - kl_z2 - z1_term + config.alpha * class_term;
    ElboTerms { recon, kl_z2, z1_term, class_term, total }
}
