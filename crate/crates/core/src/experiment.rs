//! Experiment orchestration: a declarative run configuration (TOML-friendly),
//! the minibatch training loop with validation-based model selection, run
//! records that capture everything needed to reproduce a run, sweep execution
//! with per-run failure isolation, and the benchmark-table formatter.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    self, PreprocessRecipe, Provenance, Split, TabularDataset,
};
use crate::error::{Error, Result};
use crate::eval::{self, ConfigEcho, EvalReport};
use crate::graph::Graph;
use crate::models::{FairModel, ModelConfig, DEFAULT_ACTIVE_UNIT_THRESHOLD};
use crate::nn::Activation;
use crate::regularizers::RffProjection;
use crate::rng::RandomStream;
use crate::semisup::{combined_objective, empirical_s_prior, make_mask, ObjectiveConfig};

// Re-export the enums that appear as config fields so callers of this module
// don't have to reach into the lower layers.
pub use crate::models::{ModelVariant, PriorKind};
pub use crate::semisup::{PenaltyKind, SExpectation};

/// Jitter scale when seeding mixture-prior pseudo-inputs from data rows.
const PSEUDO_JITTER: f64 = 0.05;

/// Which dataset a run trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    /// The 1000-row credit file (`german.data` in the data directory).
    German,
    /// The census-income pair (`adult.data` + `adult.test`).
    Adult,
    /// Synthetic testbed; see [`data::synth_fair`].
    Synth { n: usize, d: usize, leak: f64 },
    /// Externally preprocessed CSV with its own split column.
    Csv { path: String },
}

impl DatasetSpec {
    /// Label used in result tables and file names.
    pub fn label(&self) -> &'static str {
        match self {
            DatasetSpec::German => "german",
            DatasetSpec::Adult => "adult",
            DatasetSpec::Synth { .. } => "synth",
            DatasetSpec::Csv { .. } => "csv",
        }
    }
}

/// Every random choice a run makes, pinned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Parameter init, pseudo-input seeding, training noise, and batch order.
    pub init: u64,
    /// Which rows observe the sensitive attribute.
    pub mask: u64,
    /// The frozen random-feature projection for the two-sample penalty.
    pub rff: u64,
    /// Train/valid/test assignment.
    pub split: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { init: 1, mask: 2, rff: 3, split: 4 }
    }
}

/// Declarative description of one training run. Serialized verbatim into
/// every report so results are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub variant: ModelVariant,
    pub prior: PriorKind,
    /// Classification weight in the bound.
    pub alpha: f64,
    /// Fairness penalty weight.
    pub lambda_reg: f64,
    pub penalty: PenaltyKind,
    /// Fraction of training rows whose sensitive attribute is observed.
    pub fraction_observed: f64,
    /// Mixture components under the mixture prior.
    pub pseudo_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub latent1: usize,
    pub latent2: usize,
    pub hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub mc_samples: usize,
    /// Exact enumeration of the unobserved sensitive value, or one relaxed
    /// sample per row.
    pub s_expectation: SExpectation,
    /// Feature count for the random-feature two-sample penalty.
    pub rff_features: usize,
    /// Validation evaluation cadence in epochs.
    pub eval_every: usize,
    /// Age cut for the credit data's sensitive attribute.
    pub german_age_cut: f64,
    /// Dump 2-D latent coordinates into the run record.
    pub dump_latents: bool,
    pub seeds: Seeds,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synth { n: 400, d: 4, leak: 0.5 },
            variant: ModelVariant::Vfae,
            prior: PriorKind::StandardGaussian,
            alpha: 1.0,
            lambda_reg: 0.0,
            penalty: PenaltyKind::None,
            fraction_observed: 1.0,
            pseudo_count: 50,
            epochs: 30,
            batch_size: 100,
            lr: 1e-3,
            latent1: 50,
            latent2: 50,
            hidden: vec![100],
            classifier_hidden: vec![100],
            mc_samples: 1,
            s_expectation: SExpectation::Enumerate,
            rff_features: 500,
            eval_every: 5,
            german_age_cut: 25.0,
            dump_latents: false,
            seeds: Seeds::default(),
            output_dir: "runs".to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".to_string()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.fraction_observed > 0.0 && self.fraction_observed <= 1.0) {
            return Err(Error::Config(format!(
                "observed fraction must lie in (0, 1], got {}",
                self.fraction_observed
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".to_string()));
        }
        if self.dump_latents && self.latent1 < 2 {
            return Err(Error::Config(
                "latent dumps need at least two z1 dimensions".to_string(),
            ));
        }
        // Model-level constraints (prior/variant pairing, widths) with a
        // placeholder input width; the real one is known only after loading.
        self.model_config(1).validate()
    }

    fn model_config(&self, input_dim: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.variant, self.prior, input_dim, 2, 2);
        cfg.alpha = self.alpha;
        cfg.pseudo_count = self.pseudo_count;
        cfg.latent1 = self.latent1;
        cfg.latent2 = self.latent2;
        cfg.hidden = self.hidden.clone();
        cfg.classifier_hidden = self.classifier_hidden.clone();
        cfg.mc_samples = self.mc_samples;
        cfg.activation = Activation::Softplus;
        cfg
    }

    /// Row identity in tables: model variant (with prior) plus penalty.
    pub fn model_id(&self) -> String {
        let variant = match (self.variant, self.prior) {
            (ModelVariant::Vfae, _) => "vfae",
            (ModelVariant::Hvfae, PriorKind::StandardGaussian) => "hvfae",
            (ModelVariant::Hvfae, PriorKind::VampPrior) => "hvfae_vamp",
        };
        format!("{variant}+{}", penalty_label(self.penalty))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn penalty_label(penalty: PenaltyKind) -> &'static str {
    match penalty {
        PenaltyKind::None => "none",
        PenaltyKind::Mmd => "mmd",
        PenaltyKind::Mi => "mi",
    }
}

/// Data directory: `$FAIRVAE_DATA` or `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var("FAIRVAE_DATA").map(PathBuf::from).unwrap_or_else(|_| PathBuf::from("data"))
}

fn fetch_hint(file: &str) -> Error {
    Error::Data(format!(
        "{file} not found under {} — run scripts/fetch_data.sh (or set FAIRVAE_DATA to a directory containing the raw files)",
        data_dir().display()
    ))
}

/// Load and partition the dataset a config asks for. Credit data splits
/// 50/20/30; the census pair keeps its official test file and carves 20%
/// validation out of train; synthetic data splits 60/20/20; CSVs keep their
/// own split column.
pub fn load_dataset(config: &ExperimentConfig) -> Result<TabularDataset> {
    match &config.dataset {
        DatasetSpec::German => {
            let path = data_dir().join("german.data");
            if !path.exists() {
                return Err(fetch_hint("german.data"));
            }
            let raw = data::load_german(&path, &PreprocessRecipe::german_default(config.german_age_cut))?;
            data::split(&raw, (0.5, 0.2, 0.3), config.seeds.split)
        }
        DatasetSpec::Adult => {
            let train = data_dir().join("adult.data");
            let test = data_dir().join("adult.test");
            if !train.exists() || !test.exists() {
                return Err(fetch_hint("adult.data / adult.test"));
            }
            let raw = data::load_adult(&train, &test, &PreprocessRecipe::adult_default())?;
            data::carve_validation(&raw, 0.2, config.seeds.split)
        }
        DatasetSpec::Synth { n, d, leak } => {
            let raw = data::synth_fair(*n, *d, *leak, config.seeds.split)?;
            data::split(&raw, (0.6, 0.2, 0.2), config.seeds.split)
        }
        DatasetSpec::Csv { path } => {
            let path = Path::new(path);
            if !path.exists() {
                return Err(Error::Data(format!("{} not found", path.display())));
            }
            data::from_csv(path)
        }
    }
}

/// One epoch's aggregate numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Batch-size-weighted mean training objective.
    pub objective: f64,
    pub recon: f64,
    pub kl_z2: f64,
    pub z1_term: f64,
    pub class_term: f64,
    pub bound: f64,
    pub penalty: f64,
    /// Validation target accuracy, present on evaluation epochs.
    pub val_y_acc: Option<f64>,
    /// Validation probe accuracy for the sensitive attribute, present on
    /// evaluation epochs.
    pub val_s_audit: Option<f64>,
}

/// One 2-D latent coordinate for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub z1_dim0: f64,
    pub z1_dim1: f64,
    pub s: usize,
    /// True for rows that are mixture-component means (encoded
    /// pseudo-inputs) rather than data rows.
    pub is_pseudo_component_mean: bool,
}

/// Everything one run produced: the verbatim config, where the data came
/// from, the per-epoch trace, the final audit, and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub trace: Vec<EpochTrace>,
    pub report: EvalReport,
    pub wall_clock_secs: f64,
    /// Latent dimensions whose posterior mean still varies across the data,
    /// per layer.
    pub active_units: (usize, usize),
    /// Epoch whose parameters were selected by validation (None when the
    /// dataset has no validation split, in which case the final epoch
    /// ships).
    pub selected_epoch: Option<usize>,
    /// Note on how the shipped parameters were chosen.
    pub selection_rule: String,
    pub latents: Option<Vec<LatentPoint>>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV dump of the latent coordinates, or None when the run kept none.
    pub fn latents_csv(&self) -> Option<String> {
        let points = self.latents.as_ref()?;
        let mut out = String::from("z1_dim0,z1_dim1,s,is_pseudo_component_mean\n");
        for p in points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.z1_dim0, p.z1_dim1, p.s, u8::from(p.is_pseudo_component_mean)
            ));
        }
        Some(out)
    }
}

/// Train one model per the config and audit it. Deterministic in the
/// config's seeds.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    run_on(config, &dataset)
}

/// [`run`] against an already loaded dataset (the sweep and the tests reuse
/// one load).
pub fn run_on(config: &ExperimentConfig, dataset: &TabularDataset) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();

    let train_rows = dataset.rows_in(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::Data("dataset has no training rows".to_string()));
    }
    let n_train = train_rows.len();
    let (x_train, y_train, s_train) = dataset.gather(&train_rows);

    // Model, mask, and objective assembly. The init stream covers parameter
    // init, pseudo seeding, training noise, and batch order, in that order.
    let mut rng = RandomStream::seed(config.seeds.init);
    let model_cfg = config.model_config(dataset.dim());
    model_cfg.validate()?;
    let mut model = FairModel::new(model_cfg, &mut rng)?;
    if config.prior == PriorKind::VampPrior {
        model.init_pseudo_from_data(&x_train, PSEUDO_JITTER, &mut rng)?;
    }

    let mask = make_mask(n_train, config.fraction_observed, &s_train, config.seeds.mask)?;
    let prior_s = match empirical_s_prior(&s_train, &mask, 2) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("falling back to a uniform sensitive prior: {e}");
            vec![0.5, 0.5]
        }
    };
    let rff = match config.penalty {
        PenaltyKind::Mmd => {
            let mut rff_rng = RandomStream::seed(config.seeds.rff);
            Some(RffProjection::sample(
                config.latent1,
                config.rff_features,
                RffProjection::default_gamma(config.latent1),
                &mut rff_rng,
            )?)
        }
        _ => None,
    };
    let objective_cfg = ObjectiveConfig {
        lambda_reg: config.lambda_reg,
        penalty: config.penalty,
        prior_s,
        s_expectation: config.s_expectation,
        rff,
    };
    objective_cfg.validate(2)?;

    let valid_rows = dataset.rows_in(Split::Valid);
    let penalty_active = config.lambda_reg > 0.0 && config.penalty != PenaltyKind::None;

    let mut opt = crate::optim::Adam::new(config.lr);
    let mut trace: Vec<EpochTrace> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, crate::nn::ParamStore)> = None;
    let mut fallback: Option<(usize, f64, crate::nn::ParamStore)> = None;
    let batch = config.batch_size.min(n_train);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        rng.shuffle(&mut order);

        let mut sums = EpochSums::default();
        for chunk in order.chunks(batch) {
            let global: Vec<usize> = chunk.iter().map(|&p| train_rows[p]).collect();
            let (xb, yb, sb) = dataset.gather(&global);
            let mb = mask.select(chunk);
            let mut g = Graph::new();
            let parts = combined_objective(&mut g, &model, &xb, &yb, &sb, &mb, &objective_cfg, &mut rng)
                .map_err(|e| Error::Invalid(format!("epoch {epoch}: {e}")))?;
            let value = g.value(parts.objective).item();
            if !value.is_finite() {
                return Err(Error::non_finite_at(
                    "training objective",
                    format!("epoch {epoch}, value {value}"),
                ));
            }
            let loss = g.neg(parts.objective);
            let grads = g.backward(loss).map_err(|e| Error::Invalid(format!("epoch {epoch}: {e}")))?;
            opt.step(&mut model.params, &grads)
                .map_err(|e| Error::Invalid(format!("epoch {epoch}: {e}")))?;
            sums.add(chunk.len(), value, &parts);
        }

        let mut row = sums.finish(epoch);
        if !valid_rows.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let (val_y, val_s, s_major) = validation_metrics(&model, dataset, &train_rows, &valid_rows)?;
            row.val_y_acc = Some(val_y);
            row.val_s_audit = Some(val_s);
            let eligible = !penalty_active || val_s <= s_major + 2.0;
            if eligible && best.as_ref().is_none_or(|(_, acc, _)| val_y > *acc) {
                best = Some((epoch, val_y, model.params.clone()));
            }
            if fallback.as_ref().is_none_or(|(_, acc, _)| val_y > *acc) {
                fallback = Some((epoch, val_y, model.params.clone()));
            }
        }
        trace.push(row);
    }

    // Ship the selected parameters (constraint-satisfying if any epoch
    // qualified, otherwise best unconstrained, otherwise final). The recorded
    // rule names the branch that actually supplied the parameters.
    let (selected_epoch, selection_rule) = match (best, fallback) {
        (Some((epoch, _, params)), _) => {
            model = FairModel::from_parts(model.config().clone(), params)?;
            let rule = if penalty_active {
                "best validation y-accuracy with validation s-audit at most 2 points over majority"
            } else {
                "best validation y-accuracy"
            };
            (Some(epoch), rule.to_string())
        }
        (None, Some((epoch, _, params))) => {
            model = FairModel::from_parts(model.config().clone(), params)?;
            (
                Some(epoch),
                "best validation y-accuracy (no epoch met the s-audit constraint)".to_string(),
            )
        }
        (None, None) => (None, "final epoch (no validation split)".to_string()),
    };

    let echo = ConfigEcho {
        alpha: config.alpha,
        lambda_reg: config.lambda_reg,
        penalty: penalty_label(config.penalty).to_string(),
        components: if config.prior == PriorKind::VampPrior { config.pseudo_count } else { 0 },
        seed_init: config.seeds.init,
        seed_mask: config.seeds.mask,
        seed_rff: config.seeds.rff,
        seed_split: config.seeds.split,
    };
    let report = eval::evaluate(&model, dataset, &config.model_id(), echo)?;
    let active_units =
        model.active_units(&x_train, &y_train, &s_train, DEFAULT_ACTIVE_UNIT_THRESHOLD)?;
    let latents = if config.dump_latents { Some(dump_latents(&model, dataset)?) } else { None };

    Ok(RunRecord {
        config: config.clone(),
        provenance: dataset.provenance().clone(),
        trace,
        report,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        active_units,
        selected_epoch,
        selection_rule,
        latents,
    })
}

#[derive(Default)]
struct EpochSums {
    rows: usize,
    objective: f64,
    recon: f64,
    kl_z2: f64,
    z1_term: f64,
    class_term: f64,
    bound: f64,
    penalty: f64,
}

impl EpochSums {
    fn add(&mut self, batch_rows: usize, objective: f64, parts: &crate::semisup::ObjectiveParts) {
        let w = batch_rows as f64;
        self.rows += batch_rows;
        self.objective += w * objective;
        self.recon += w * parts.terms.recon;
        self.kl_z2 += w * parts.terms.kl_z2;
        self.z1_term += w * parts.terms.z1_term;
        self.class_term += w * parts.terms.class_term;
        self.bound += w * parts.terms.total;
        self.penalty += w * parts.penalty;
    }

    fn finish(&self, epoch: usize) -> EpochTrace {
        let inv = 1.0 / self.rows as f64;
        EpochTrace {
            epoch,
            objective: self.objective * inv,
            recon: self.recon * inv,
            kl_z2: self.kl_z2 * inv,
            z1_term: self.z1_term * inv,
            class_term: self.class_term * inv,
            bound: self.bound * inv,
            penalty: self.penalty * inv,
            val_y_acc: None,
            val_s_audit: None,
        }
    }
}

/// Validation target accuracy, validation probe accuracy, and the
/// validation majority baseline for `s`.
fn validation_metrics(
    model: &FairModel,
    dataset: &TabularDataset,
    train_rows: &[usize],
    valid_rows: &[usize],
) -> Result<(f64, f64, f64)> {
    let (x_tr, _, s_tr) = dataset.gather(train_rows);
    let (x_va, y_va, s_va) = dataset.gather(valid_rows);
    let z_tr = model.encode_z1_mean(&x_tr, &s_tr)?;
    let z_va = model.encode_z1_mean(&x_va, &s_va)?;

    let probe = eval::train_probe(&z_tr, &s_tr)?;
    let s_audit = probe.accuracy(&z_va, &s_va)?;

    let probs = model.classify_y_probs(&z_va)?;
    let hits = (0..y_va.len())
        .filter(|&i| {
            let row = probs.row(i);
            usize::from(row[1] > row[0]) == y_va[i]
        })
        .count();
    let y_acc = 100.0 * hits as f64 / y_va.len() as f64;

    let ones = s_va.iter().filter(|&&v| v == 1).count();
    let s_major = 100.0 * ones.max(s_va.len() - ones) as f64 / s_va.len() as f64;
    Ok((y_acc, s_audit, s_major))
}

/// Posterior-mean coordinates of the test rows (first two z1 dimensions)
/// plus, under the mixture prior, the encoded pseudo-inputs (sensitive
/// input fixed to group 0 for visualization).
fn dump_latents(model: &FairModel, dataset: &TabularDataset) -> Result<Vec<LatentPoint>> {
    let rows = dataset.rows_in(Split::Test);
    let (x, _, s) = dataset.gather(&rows);
    let z = model.encode_z1_mean(&x, &s)?;
    let mut points: Vec<LatentPoint> = (0..z.rows())
        .map(|i| LatentPoint {
            z1_dim0: z.row(i)[0],
            z1_dim1: z.row(i)[1],
            s: s[i],
            is_pseudo_component_mean: false,
        })
        .collect();
    if model.config().prior == PriorKind::VampPrior {
        let pseudo = model.params.get(crate::models::PSEUDO_PARAM).clone();
        let k = pseudo.rows();
        let zp = model.encode_z1_mean(&pseudo, &vec![0; k])?;
        points.extend((0..k).map(|i| LatentPoint {
            z1_dim0: zp.row(i)[0],
            z1_dim1: zp.row(i)[1],
            s: 0,
            is_pseudo_component_mean: true,
        }));
    }
    Ok(points)
}

/// Result of one sweep entry: the config plus either its record or the
/// error that stopped it.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub config: ExperimentConfig,
    pub record: std::result::Result<RunRecord, String>,
}

/// Run every config, isolating failures: a bad entry produces a failed row
/// and the sweep continues.
pub fn sweep(configs: &[ExperimentConfig]) -> Result<Vec<SweepOutcome>> {
    if configs.is_empty() {
        return Err(Error::Config("sweep needs at least one config".to_string()));
    }
    Ok(configs
        .iter()
        .map(|config| SweepOutcome {
            config: config.clone(),
            record: run(config).map_err(|e| e.to_string()),
        })
        .collect())
}

/// Aggregate CSV over sweep outcomes, one row per run, stable-ordered by
/// model, penalty, then dataset. Failed runs keep their row with empty
/// metrics and the error in `status`.
pub fn sweep_csv(outcomes: &[SweepOutcome]) -> String {
    let mut rows: Vec<(String, String, String, String)> = outcomes
        .iter()
        .map(|o| {
            let model = o.config.model_id();
            let (variant, penalty) = match model.split_once('+') {
                Some((v, p)) => (v.to_string(), p.to_string()),
                None => (model.clone(), String::new()),
            };
            let dataset = o.config.dataset.label().to_string();
            let body = match &o.record {
                Ok(r) => format!(
                    "{},{},{},{},{:.4},{:.4},{:.4},ok",
                    model,
                    dataset,
                    o.config.lambda_reg,
                    o.config.fraction_observed,
                    r.report.y_acc,
                    r.report.s_audit_acc,
                    r.report.ds
                ),
                Err(e) => {
                    let flat = e.split_whitespace().collect::<Vec<_>>().join(" ").replace(',', ";");
                    format!(
                        "{},{},{},{},,,,failed: {}",
                        model, dataset, o.config.lambda_reg, o.config.fraction_observed, flat
                    )
                }
            };
            (variant, penalty, dataset, body)
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = String::from("model,dataset,lambda_reg,fraction_observed,y_acc,s_audit_acc,ds,status\n");
    for (_, _, _, body) in rows {
        out.push_str(&body);
        out.push('\n');
    }
    out
}

/// Benchmark-shaped table over run reports: one row per model+penalty,
/// columns `German Y | Adult Y | German S | Adult S | German DS | Adult DS`.
/// Reports from other datasets are ignored; missing cells stay blank.
pub fn format_table(entries: &[(String, String, EvalReport)]) -> String {
    let mut models: Vec<String> = entries
        .iter()
        .filter(|(_, dataset, _)| dataset == "german" || dataset == "adult")
        .map(|(model, _, _)| model.clone())
        .collect();
    models.sort();
    models.dedup();

    let mut out = String::new();
    let header = format!(
        "{:<18} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}",
        "model", "german_y", "adult_y", "german_s", "adult_s", "german_ds", "adult_ds"
    );
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for model in &models {
        let cell = |dataset: &str, pick: fn(&EvalReport) -> f64| -> String {
            entries
                .iter()
                .find(|(m, d, _)| m == model && d == dataset)
                .map(|(_, _, r)| format!("{:.1}", pick(r)))
                .unwrap_or_default()
        };
        out.push_str(&format!(
            "{:<18} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}\n",
            model,
            cell("german", |r| r.y_acc),
            cell("adult", |r| r.y_acc),
            cell("german", |r| r.s_audit_acc),
            cell("adult", |r| r.s_audit_acc),
            cell("german", |r| r.ds),
            cell("adult", |r| r.ds),
        ));
    }
    out
}
