//! Release gate: nine end-to-end criteria, one printed line each.
//!
//! Criteria 5–7 exercise the two tabular benchmarks and skip with an
//! explanation when the raw files are absent (run `scripts/fetch_data.sh`
//! or point `FAIRVAE_DATA` at a directory that has them). Everything else
//! runs unconditionally. Run with `--nocapture` to watch the lines appear.

use std::time::Instant;

use fairvae::dist::{
    bernoulli_loglik_rows, kl_categorical, kl_gaussian_scalar, mixture_logpdf_rows,
};
use fairvae::eval::discrimination_score;
use fairvae::experiment::{self, DatasetSpec, ExperimentConfig};
use fairvae::graph::Graph;
use fairvae::models::{FairModel, ModelConfig, ModelVariant, PriorKind, PSEUDO_PARAM};
use fairvae::regularizers::{
    mi_penalty_rows, mmd_fast, mmd_unbiased, rff_expand, KernelSpec, RffProjection,
};
use fairvae::rng::RandomStream;
use fairvae::semisup::{
    combined_objective, ObjectiveConfig, PenaltyKind, SExpectation, SupervisionMask,
};
use fairvae::tensor::Tensor;

#[derive(Default)]
struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, id: usize, outcome: Result<String, String>) {
        match outcome {
            Ok(msg) => println!("criterion {id}: PASS — {msg}"),
            Err(msg) => {
                println!("criterion {id}: FAIL — {msg}");
                self.failures.push(format!("criterion {id}: {msg}"));
            }
        }
    }

    fn skip(&mut self, id: usize, reason: String) {
        println!("criterion {id}: SKIP — {reason}");
    }
}

#[test]
fn acceptance_criteria() {
    let mut gate = Gate::default();
    gate.record(1, criterion_1());
    gate.record(2, criterion_2());
    gate.record(3, criterion_3());
    gate.record(4, criterion_4());
    match adult_files() {
        Ok(()) => gate.record(5, criterion_5()),
        Err(reason) => gate.skip(5, reason),
    }
    match german_file() {
        Ok(()) => gate.record(6, criterion_6()),
        Err(reason) => gate.skip(6, reason),
    }
    match german_file().and(adult_files()) {
        Ok(()) => gate.record(7, criterion_7()),
        Err(reason) => gate.skip(7, reason),
    }
    gate.record(8, criterion_8());
    gate.record(9, criterion_9());
    assert!(
        gate.failures.is_empty(),
        "acceptance failures:\n{}",
        gate.failures.join("\n")
    );
}

fn german_file() -> Result<(), String> {
    let path = experiment::data_dir().join("german.data");
    if path.exists() {
        Ok(())
    } else {
        Err(format!("{} not present (run scripts/fetch_data.sh)", path.display()))
    }
}

fn adult_files() -> Result<(), String> {
    let dir = experiment::data_dir();
    if dir.join("adult.data").exists() && dir.join("adult.test").exists() {
        Ok(())
    } else {
        Err(format!(
            "adult.data / adult.test not present under {} (run scripts/fetch_data.sh)",
            dir.display()
        ))
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle: the full training objective (both model variants, both
//    penalties, mixed supervision) against central finite differences.
// ---------------------------------------------------------------------------

fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let scenarios = [
        (ModelVariant::Vfae, PriorKind::StandardGaussian, PenaltyKind::Mmd),
        (ModelVariant::Vfae, PriorKind::StandardGaussian, PenaltyKind::Mi),
        (ModelVariant::Hvfae, PriorKind::VampPrior, PenaltyKind::Mmd),
        (ModelVariant::Hvfae, PriorKind::VampPrior, PenaltyKind::Mi),
    ];
    let mut worst = 0.0f64;
    for (variant, prior, penalty) in scenarios {
        worst = worst.max(gradcheck_objective(variant, prior, penalty)?);
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("finite-difference sweep took {secs:.1} s (budget 10 s)"));
    }
    Ok(format!(
        "objective gradients match finite differences over 4 scenarios (max rel err {worst:.1e}, {secs:.1} s)"
    ))
}

fn gradcheck_objective(
    variant: ModelVariant,
    prior: PriorKind,
    penalty: PenaltyKind,
) -> Result<f64, String> {
    let mut cfg = ModelConfig::new(variant, prior, 6, 2, 2);
    cfg.latent1 = 2;
    cfg.latent2 = 3;
    cfg.hidden = vec![3];
    cfg.classifier_hidden = vec![3];
    cfg.pseudo_count = 3;
    cfg.alpha = 1.3;
    let mut rng = RandomStream::seed(7);
    let mut model = FairModel::new(cfg, &mut rng).map_err(|e| e.to_string())?;

    let mut batch_rng = RandomStream::seed(8);
    let x_bits: Vec<f64> =
        (0..4 * 6).map(|_| f64::from(batch_rng.uniform(0.0, 1.0) > 0.5)).collect();
    let x = Tensor::new(vec![4, 6], x_bits).map_err(|e| e.to_string())?;
    let y = vec![0usize, 1, 1, 0];
    let s = vec![0usize, 1, 0, 1];
    let mask = SupervisionMask::from_flags(vec![true, false, false, true]);
    let rff = match penalty {
        PenaltyKind::Mmd => Some(
            RffProjection::sample(2, 7, RffProjection::default_gamma(2), &mut RandomStream::seed(3))
                .map_err(|e| e.to_string())?,
        ),
        _ => None,
    };
    let ocfg = ObjectiveConfig {
        lambda_reg: 2.0,
        penalty,
        prior_s: vec![0.6, 0.4],
        s_expectation: SExpectation::Enumerate,
        rff,
    };

    // The noise stream is re-seeded per evaluation so finite differences see
    // a deterministic objective.
    let eval = |model: &FairModel| -> Result<f64, String> {
        let mut g = Graph::new();
        let parts =
            combined_objective(&mut g, model, &x, &y, &s, &mask, &ocfg, &mut RandomStream::seed(17))
                .map_err(|e| e.to_string())?;
        Ok(g.value(parts.objective).item())
    };
    let grads = {
        let mut g = Graph::new();
        let parts =
            combined_objective(&mut g, &model, &x, &y, &s, &mask, &ocfg, &mut RandomStream::seed(17))
                .map_err(|e| e.to_string())?;
        g.backward(parts.objective).map_err(|e| e.to_string())?
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (name, grad) in &grads {
        let base = model.params.get(name).clone();
        for i in 0..base.data().len() {
            let mut bumped = base.data().to_vec();
            bumped[i] += h;
            *model.params.get_mut(name) =
                Tensor::new(base.shape().to_vec(), bumped).map_err(|e| e.to_string())?;
            let up = eval(&model)?;
            let mut bumped = base.data().to_vec();
            bumped[i] -= h;
            *model.params.get_mut(name) =
                Tensor::new(base.shape().to_vec(), bumped).map_err(|e| e.to_string())?;
            let down = eval(&model)?;
            let fd = (up - down) / (2.0 * h);
            let analytic = grad.data()[i];
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0);
            if rel > 1e-4 {
                return Err(format!(
                    "{variant:?}/{penalty:?}: {name}[{i}] analytic {analytic:.6e} vs fd {fd:.6e} (rel {rel:.1e})"
                ));
            }
            worst = worst.max(rel);
        }
        *model.params.get_mut(name) = base;
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// 2. Closed-form unit suite: the frozen hand-derived values.
// ---------------------------------------------------------------------------

fn criterion_2() -> Result<String, String> {
    let tol = 1e-6;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();

    checks.push(("gaussian kl unit-shift", kl_gaussian_scalar(1.0, 1.0, 0.0, 1.0), 0.5));
    checks.push((
        "gaussian kl doubled scale",
        kl_gaussian_scalar(0.0, 2.0, 0.0, 1.0),
        0.5 * (3.0 - 4.0f64.ln()),
    ));

    let one = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
    let zero_logit = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let ll1 = bernoulli_loglik_rows(&one, &zero_logit).map_err(|e| e.to_string())?;
    checks.push(("bernoulli loglik single", ll1.data()[0], 0.5f64.ln()));
    let x2 = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let logits2 = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let ll2 = bernoulli_loglik_rows(&x2, &logits2).map_err(|e| e.to_string())?;
    checks.push(("bernoulli loglik pair", ll2.data()[0], 2.0 * 0.5f64.ln()));

    checks.push(("categorical kl point mass", kl_categorical(&[1.0, 0.0], &[0.5, 0.5]), 2.0f64.ln()));

    let z = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let mu = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
    let sigma = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let mix = mixture_logpdf_rows(&z, &mu, &sigma);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    checks.push(("mixture log-density midpoint", mix.data()[0], -0.5 - half_ln_2pi));

    let ds = discrimination_score(&[1.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    checks.push(("discrimination score", ds, 50.0));

    // One row with q(s|x) = (1/2, 1/2), conditionals N(0,1) and N(2,1),
    // latent sampled at 0 under the first branch.
    let at_zero = -half_ln_2pi;
    let shifted = -half_ln_2pi - 2.0;
    let chosen = Tensor::vector(vec![at_zero]);
    let branches = Tensor::new(vec![1, 2], vec![at_zero, shifted]).unwrap();
    let weights = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    let mi = mi_penalty_rows(&chosen, &branches, &weights).map_err(|e| e.to_string())?;
    checks.push(("information penalty pointwise", mi.data()[0], 0.5662191695169727));

    for (label, got, want) in &checks {
        if (got - want).abs() >= tol {
            return Err(format!("{label}: got {got:.10}, want {want:.10}"));
        }
    }
    Ok(format!("{} closed-form values reproduced within 1e-6", checks.len()))
}

// ---------------------------------------------------------------------------
// 3. Kernel approximation: random features vs the closed-form kernel, and
//    the feature-space statistic vs the exact unbiased one.
// ---------------------------------------------------------------------------

fn criterion_3() -> Result<String, String> {
    let dim = 5;
    let gamma = RffProjection::default_gamma(dim);
    let pairs = 50;
    let mut data_rng = RandomStream::seed(100);
    let za = data_rng.standard_normal(vec![pairs, dim]);
    let zb = data_rng.standard_normal(vec![pairs, dim]);
    let exact_kernel: Vec<f64> = (0..pairs)
        .map(|i| {
            let d2: f64 = za
                .row(i)
                .iter()
                .zip(zb.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-d2 / gamma).exp()
        })
        .collect();

    let draws = 20;
    let mut good = 0;
    let mut worst_sup = 0.0f64;
    for k in 0..draws {
        let mut rng = RandomStream::seed(200 + k);
        let proj =
            RffProjection::sample(dim, 5000, gamma, &mut rng).map_err(|e| e.to_string())?;
        let fa = rff_expand(&za, &proj).map_err(|e| e.to_string())?;
        let fb = rff_expand(&zb, &proj).map_err(|e| e.to_string())?;
        let sup = (0..pairs)
            .map(|i| {
                let dot: f64 = fa.row(i).iter().zip(fb.row(i)).map(|(a, b)| a * b).sum();
                (dot - exact_kernel[i]).abs()
            })
            .fold(0.0f64, f64::max);
        worst_sup = worst_sup.max(sup);
        if sup <= 0.05 {
            good += 1;
        }
    }
    if good < 19 {
        return Err(format!(
            "only {good}/{draws} projection draws stayed within 0.05 sup-error (worst {worst_sup:.4})"
        ));
    }

    // Exact vs feature-space two-sample statistic on mean-shifted groups.
    let n = 100;
    let a = data_rng.standard_normal(vec![n, dim]);
    let shifted: Vec<f64> =
        data_rng.standard_normal(vec![n, dim]).data().iter().map(|v| v + 0.5).collect();
    let b = Tensor::new(vec![n, dim], shifted).map_err(|e| e.to_string())?;
    let kernel = KernelSpec::rbf_from_gamma(gamma).map_err(|e| e.to_string())?;
    let exact = mmd_unbiased(&a, &b, &kernel).map_err(|e| e.to_string())?;
    let fasts: Vec<f64> = (0..draws)
        .map(|k| {
            let mut rng = RandomStream::seed(300 + k);
            let proj = RffProjection::sample(dim, 200, gamma, &mut rng)?;
            mmd_fast(&a, &b, &proj)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mean = fasts.iter().sum::<f64>() / fasts.len() as f64;
    let sd = (fasts.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (fasts.len() - 1) as f64)
        .sqrt();
    let gap = (mean - exact).abs();
    if gap > 3.0 * sd {
        return Err(format!(
            "feature statistic mean {mean:.5} vs exact {exact:.5} differs by {gap:.5} (> 3 sd = {:.5})",
            3.0 * sd
        ));
    }
    Ok(format!(
        "kernel approximated within 0.05 in {good}/{draws} draws; statistics agree ({gap:.1e} <= 3 sd {:.1e})",
        3.0 * sd
    ))
}

// ---------------------------------------------------------------------------
// 4. Fairness mechanism on synthetic data with a fully leaked sensitive bit.
// ---------------------------------------------------------------------------

fn criterion_4() -> Result<String, String> {
    let started = Instant::now();
    let base = ExperimentConfig {
        dataset: DatasetSpec::Synth { n: 800, d: 4, leak: 1.0 },
        variant: ModelVariant::Hvfae,
        prior: PriorKind::VampPrior,
        alpha: 2.0,
        penalty: PenaltyKind::Mmd,
        lambda_reg: 0.0,
        pseudo_count: 8,
        epochs: 160,
        batch_size: 100,
        lr: 3e-3,
        latent1: 4,
        latent2: 4,
        hidden: vec![16],
        classifier_hidden: vec![8],
        rff_features: 128,
        eval_every: 10,
        ..ExperimentConfig::default()
    };
    let unreg = experiment::run(&base).map_err(|e| e.to_string())?;
    let mut strong = base.clone();
    strong.lambda_reg = 1200.0;
    let reg = experiment::run(&strong).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();

    let u = &unreg.report;
    let r = &reg.report;
    if u.s_audit_acc <= u.s_majority + 10.0 {
        return Err(format!(
            "unregularized probe should exploit the leaked bit: audit {:.1} vs majority {:.1}",
            u.s_audit_acc, u.s_majority
        ));
    }
    if (r.s_audit_acc - r.s_majority).abs() > 3.0 {
        return Err(format!(
            "penalty failed to scrub the leak: audit {:.1} vs majority {:.1}",
            r.s_audit_acc, r.s_majority
        ));
    }
    if r.y_acc < 0.9 * u.y_acc {
        return Err(format!(
            "target accuracy collapsed under the penalty: {:.1} vs unregularized {:.1}",
            r.y_acc, u.y_acc
        ));
    }
    if secs >= 120.0 {
        return Err(format!("both runs took {secs:.0} s (budget 120 s)"));
    }
    Ok(format!(
        "audit {:.1}->{:.1} (majority {:.1}) while target {:.1}->{:.1}, {secs:.0} s",
        u.s_audit_acc, r.s_audit_acc, r.s_majority, u.y_acc, r.y_acc
    ))
}

// ---------------------------------------------------------------------------
// 5. Census benchmark, full supervision: reference accuracy bands and the
//    regularizer's discrimination drop.
// ---------------------------------------------------------------------------

fn adult_base() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Adult,
        epochs: 50,
        batch_size: 100,
        lr: 1e-3,
        ..ExperimentConfig::default()
    }
}

fn criterion_5() -> Result<String, String> {
    let unreg = experiment::run(&adult_base()).map_err(|e| e.to_string())?;
    let mut cfg = adult_base();
    cfg.variant = ModelVariant::Hvfae;
    cfg.prior = PriorKind::VampPrior;
    cfg.penalty = PenaltyKind::Mmd;
    cfg.lambda_reg = 100.0;
    let reg = experiment::run(&cfg).map_err(|e| e.to_string())?;

    let mut problems = Vec::new();
    if (unreg.report.y_acc - 82.0).abs() > 2.0 {
        problems.push(format!("plain target accuracy {:.1} outside 82.0±2.0", unreg.report.y_acc));
    }
    if (reg.report.y_acc - 82.2).abs() > 2.0 {
        problems.push(format!("regularized target accuracy {:.1} outside 82.2±2.0", reg.report.y_acc));
    }
    if reg.report.ds >= unreg.report.ds {
        problems.push(format!(
            "discrimination did not drop: {:.1} (regularized) vs {:.1}",
            reg.report.ds, unreg.report.ds
        ));
    }
    if !(63.5..=70.5).contains(&reg.report.s_audit_acc) {
        problems.push(format!("sensitive audit {:.1} outside [63.5, 70.5]", reg.report.s_audit_acc));
    }
    for (label, run) in [("plain", &unreg), ("regularized", &reg)] {
        if run.wall_clock_secs >= 600.0 {
            problems.push(format!("{label} run took {:.0} s (budget 600 s)", run.wall_clock_secs));
        }
    }
    if problems.is_empty() {
        Ok(format!(
            "target {:.1}/{:.1}, discrimination {:.1}->{:.1}, audit {:.1}",
            unreg.report.y_acc,
            reg.report.y_acc,
            unreg.report.ds,
            reg.report.ds,
            reg.report.s_audit_acc
        ))
    } else {
        Err(problems.join("; "))
    }
}

// ---------------------------------------------------------------------------
// 6. Credit benchmark, full supervision: accuracy band, audit at the
//    majority rate, discrimination drop under the penalty.
// ---------------------------------------------------------------------------

fn german_base() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::German,
        variant: ModelVariant::Hvfae,
        prior: PriorKind::VampPrior,
        epochs: 500,
        batch_size: 100,
        lr: 1e-3,
        ..ExperimentConfig::default()
    }
}

fn criterion_6() -> Result<String, String> {
    let unreg = experiment::run(&german_base()).map_err(|e| e.to_string())?;
    let mut cfg = german_base();
    cfg.penalty = PenaltyKind::Mmd;
    cfg.lambda_reg = 100.0;
    let reg = experiment::run(&cfg).map_err(|e| e.to_string())?;

    let mut problems = Vec::new();
    if !(70.0..=77.0).contains(&reg.report.y_acc) {
        problems.push(format!("regularized target accuracy {:.1} outside [70, 77]", reg.report.y_acc));
    }
    if (reg.report.s_audit_acc - reg.report.s_majority).abs() > 2.0 {
        problems.push(format!(
            "sensitive audit {:.1} not at the majority rate {:.1}±2",
            reg.report.s_audit_acc, reg.report.s_majority
        ));
    }
    if reg.report.ds >= unreg.report.ds {
        problems.push(format!(
            "discrimination did not drop: {:.1} (regularized) vs {:.1}",
            reg.report.ds, unreg.report.ds
        ));
    }
    for (label, run) in [("plain", &unreg), ("regularized", &reg)] {
        if run.wall_clock_secs >= 120.0 {
            problems.push(format!("{label} run took {:.0} s (budget 120 s)", run.wall_clock_secs));
        }
    }
    if problems.is_empty() {
        Ok(format!(
            "target {:.1}, audit {:.1} (majority {:.1}), discrimination {:.1}->{:.1}",
            reg.report.y_acc,
            reg.report.s_audit_acc,
            reg.report.s_majority,
            unreg.report.ds,
            reg.report.ds
        ))
    } else {
        Err(problems.join("; "))
    }
}

// ---------------------------------------------------------------------------
// 7. Partial supervision (5% observed, heavy classification weight):
//    penalties must cut discrimination; the penalty ordering is reported
//    over five seeds but only flagged.
// ---------------------------------------------------------------------------

fn criterion_7() -> Result<String, String> {
    let mut notes = Vec::new();
    for (label, mut base, budget) in [
        ("credit", german_base(), 500usize),
        ("census", adult_base(), 50usize),
    ] {
        base.variant = ModelVariant::Vfae;
        base.prior = PriorKind::StandardGaussian;
        base.fraction_observed = 0.05;
        base.alpha = 20.0;
        base.epochs = budget;

        let plain = experiment::run(&base).map_err(|e| e.to_string())?;
        let run_with = |penalty: PenaltyKind, seed: u64| -> Result<f64, String> {
            let mut cfg = base.clone();
            cfg.penalty = penalty;
            cfg.lambda_reg = 50.0;
            cfg.seeds.init = seed;
            cfg.seeds.mask = 10 + seed;
            experiment::run(&cfg).map(|r| r.report.ds).map_err(|e| e.to_string())
        };

        let mmd_first = run_with(PenaltyKind::Mmd, 1)?;
        let mi_first = run_with(PenaltyKind::Mi, 1)?;
        if mmd_first >= plain.report.ds || mi_first >= plain.report.ds {
            return Err(format!(
                "{label}: penalties failed to cut discrimination (plain {:.1}, mmd {mmd_first:.1}, mi {mi_first:.1})",
                plain.report.ds
            ));
        }

        let mut mmd_all = vec![mmd_first];
        let mut mi_all = vec![mi_first];
        for seed in 2..=5 {
            mmd_all.push(run_with(PenaltyKind::Mmd, seed)?);
            mi_all.push(run_with(PenaltyKind::Mi, seed)?);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mmd_mean, mi_mean) = (mean(&mmd_all), mean(&mi_all));
        let flag = if mi_mean < mmd_mean { "" } else { " [flag: ordering reversed]" };
        notes.push(format!(
            "{label} ds plain {:.1}, mmd {mmd_mean:.1}, mi {mi_mean:.1} over 5 seeds{flag}",
            plain.report.ds
        ));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// 8. Equivalence oracle: a mixture prior whose components all sit at N(0, I)
//    reproduces the fixed-prior bound, and a fully observed batch reproduces
//    the supervised objective bitwise.
// ---------------------------------------------------------------------------

fn criterion_8() -> Result<String, String> {
    // Shared hierarchical config; the mixture model reuses the fixed-prior
    // model's parameters plus pseudo-inputs.
    let mut cfg = ModelConfig::new(ModelVariant::Hvfae, PriorKind::StandardGaussian, 6, 2, 2);
    cfg.latent1 = 2;
    cfg.latent2 = 3;
    cfg.hidden = vec![4];
    cfg.classifier_hidden = vec![3];
    let mut rng = RandomStream::seed(23);
    let mut fixed = FairModel::new(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;

    // Freeze the second-level encoder at N(0, I): zero mean head, bias the
    // scale head so softplus(b) + floor = 1 for every input — data rows and
    // pseudo-inputs alike.
    let latent2 = 3;
    let hidden = 4;
    *fixed.params.get_mut("enc_z2.w_mean") = Tensor::zeros(vec![hidden, latent2]);
    *fixed.params.get_mut("enc_z2.b_mean") = Tensor::zeros(vec![latent2]);
    *fixed.params.get_mut("enc_z2.w_sigma") = Tensor::zeros(vec![hidden, latent2]);
    let raw = ((1.0f64 - 1e-4).exp() - 1.0).ln();
    *fixed.params.get_mut("enc_z2.b_sigma") = Tensor::new(vec![latent2], vec![raw; latent2]).unwrap();

    let mut vamp_cfg = cfg;
    vamp_cfg.prior = PriorKind::VampPrior;
    vamp_cfg.pseudo_count = 4;
    let mut params = fixed.params.clone();
    params.insert(PSEUDO_PARAM, RandomStream::seed(29).uniform_tensor(vec![4, 6], -1.0, 1.0));
    let vamp = FairModel::from_parts(vamp_cfg, params).map_err(|e| e.to_string())?;

    // The frozen mixture density must equal the standard normal everywhere.
    let probe = RandomStream::seed(31).standard_normal(vec![8, latent2]);
    let mix = vamp.vamp_prior_logpdf(&probe).map_err(|e| e.to_string())?;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for i in 0..probe.rows() {
        let std_normal: f64 =
            probe.row(i).iter().map(|z| -0.5 * z * z - half_ln_2pi).sum::<f64>();
        let got = mix.data()[i];
        if (got - std_normal).abs() > 1e-6 {
            return Err(format!(
                "frozen mixture density {got:.9} vs standard normal {std_normal:.9} at row {i}"
            ));
        }
    }

    let mut batch_rng = RandomStream::seed(33);
    let bits: Vec<f64> = (0..4 * 6).map(|_| f64::from(batch_rng.uniform(0.0, 1.0) > 0.5)).collect();
    let x = Tensor::new(vec![4, 6], bits).unwrap();
    let y = vec![0usize, 1, 0, 1];
    let s = vec![1usize, 0, 0, 1];
    let fixed_terms = fixed.elbo_terms(&x, &y, &s, &mut RandomStream::seed(37)).map_err(|e| e.to_string())?;
    let vamp_terms = vamp.elbo_terms(&x, &y, &s, &mut RandomStream::seed(37)).map_err(|e| e.to_string())?;
    let gap = (fixed_terms.total - vamp_terms.total).abs();
    if gap > 1e-8 {
        return Err(format!(
            "bounds disagree by {gap:.2e}: fixed {:.10} vs mixture {:.10}",
            fixed_terms.total, vamp_terms.total
        ));
    }

    // Fully observed batches must reduce to the supervised objective bitwise.
    let mut sup_cfg = ModelConfig::new(ModelVariant::Vfae, PriorKind::StandardGaussian, 6, 2, 2);
    sup_cfg.latent1 = 2;
    sup_cfg.latent2 = 2;
    sup_cfg.hidden = vec![3];
    sup_cfg.classifier_hidden = vec![3];
    let model = FairModel::new(sup_cfg, &mut RandomStream::seed(41)).map_err(|e| e.to_string())?;
    let mask = SupervisionMask::full(4);
    let ocfg = ObjectiveConfig::plain(2);
    let mut g = Graph::new();
    let parts = combined_objective(&mut g, &model, &x, &y, &s, &mask, &ocfg, &mut RandomStream::seed(43))
        .map_err(|e| e.to_string())?;
    let combined = g.value(parts.objective).item();

    let mut g2 = Graph::new();
    let mut rng2 = RandomStream::seed(43);
    let noise = model.draw_noise(4, &mut rng2);
    let s_rep = g2.constant(Tensor::one_hot(&s, 2));
    let rows = model
        .supervised_elbo_rows(&mut g2, &x, &y, s_rep, &noise, None)
        .map_err(|e| e.to_string())?;
    let xc = g2.constant(x.clone());
    let logits = model.g_classify_s_logits(&mut g2, xc);
    let s_ll = fairvae::dist::g_categorical_logpdf_rows(&mut g2, logits, &s);
    let with_ll = g2.add(rows.total, s_ll);
    let mean = g2.mean_all(with_ll);
    let supervised = g2.value(mean).item();
    if combined.to_bits() != supervised.to_bits() {
        return Err(format!(
            "fully observed objective {combined:.17} differs from supervised {supervised:.17}"
        ));
    }

    Ok(format!(
        "frozen-mixture bound matches fixed prior within {gap:.1e}; fully observed batch is bitwise supervised"
    ))
}

// ---------------------------------------------------------------------------
// 9. Determinism: identical seeds reproduce every reported metric exactly.
// ---------------------------------------------------------------------------

fn criterion_9() -> Result<String, String> {
    let config = ExperimentConfig {
        dataset: DatasetSpec::Synth { n: 240, d: 4, leak: 0.3 },
        variant: ModelVariant::Hvfae,
        prior: PriorKind::VampPrior,
        penalty: PenaltyKind::Mmd,
        lambda_reg: 10.0,
        fraction_observed: 0.5,
        epochs: 6,
        batch_size: 60,
        latent1: 4,
        latent2: 4,
        hidden: vec![8],
        classifier_hidden: vec![8],
        pseudo_count: 5,
        rff_features: 64,
        eval_every: 3,
        ..ExperimentConfig::default()
    };
    let a = experiment::run(&config).map_err(|e| e.to_string())?;
    let b = experiment::run(&config).map_err(|e| e.to_string())?;
    if a.report != b.report {
        return Err(format!("reports diverged:\n{:?}\n{:?}", a.report, b.report));
    }
    if a.trace != b.trace {
        return Err("per-epoch traces diverged".to_string());
    }
    if a.active_units != b.active_units {
        return Err(format!("active units diverged: {:?} vs {:?}", a.active_units, b.active_units));
    }
    Ok(format!(
        "repeated run reproduced every metric exactly (target {:.2}, audit {:.2}, discrimination {:.2})",
        a.report.y_acc, a.report.s_audit_acc, a.report.ds
    ))
}
