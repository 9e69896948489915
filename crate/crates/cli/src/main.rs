//! Command-line front end: train single runs from TOML configs (with flag
//! overrides), execute config sweeps with per-run failure isolation,
//! pivot finished runs into the benchmark table, and fetch the raw
//! datasets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fairvae::experiment::{self, DatasetSpec, ExperimentConfig, RunRecord, SweepOutcome};
use fairvae::models::{ModelVariant, PriorKind};
use fairvae::semisup::PenaltyKind;

#[derive(Parser)]
#[command(
    name = "fairvae",
    version,
    about = "Train and audit fair latent representations of tabular data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run record.
    Run(RunArgs),
    /// Train every config in a list; failures become rows, not aborts.
    Sweep(SweepArgs),
    /// Pivot finished run records into the benchmark table.
    Table(TableArgs),
    /// Download the raw benchmark datasets into the data directory.
    FetchData(FetchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; omitted fields take defaults, flags below override.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `german`, `adult`, `synth`, or a path to a preprocessed CSV.
    #[arg(long)]
    dataset: Option<String>,
    /// `vfae`, `hvfae`, or `hvfae_vamp`.
    #[arg(long)]
    model: Option<String>,
    /// Classification weight in the bound.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fairness penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// `none`, `mmd`, or `mi`.
    #[arg(long)]
    penalty: Option<String>,
    /// Fraction of training rows whose sensitive attribute is observed.
    #[arg(long)]
    fraction_observed: Option<f64>,
    /// Mixture components under the mixture prior.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_mask: Option<u64>,
    #[arg(long)]
    seed_rff: Option<u64>,
    #[arg(long)]
    seed_split: Option<u64>,
    /// Directory receiving the run record (and latent CSV if dumped).
    #[arg(long)]
    output_dir: Option<String>,
    /// Also dump 2-D latent coordinates for plotting.
    #[arg(long)]
    dump_latents: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// One or more TOML config files.
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    /// Where the aggregate CSV lands.
    #[arg(long, default_value = "sweep.csv")]
    csv: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// Directory of run-record JSON files.
    dir: PathBuf,
    /// Which supervision regime to tabulate.
    #[arg(long, value_enum, default_value_t = Mode::Supervised)]
    mode: Mode,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Runs that observed the sensitive attribute on every training row.
    Supervised,
    /// Runs that observed it on a strict fraction of rows.
    Partial,
}

#[derive(Args)]
struct FetchArgs {
    /// Target directory (defaults to $FAIRVAE_DATA, then ./data).
    #[arg(long)]
    dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match Cli::parse().command {
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
        Command::Table(args) => table_command(args),
        Command::FetchData(args) => fetch_command(args),
    }
}

fn run_command(args: RunArgs) -> Result<()> {
    let config = resolve_config(&args)?;
    let record = experiment::run(&config)?;
    let path = persist_record(&record)?;
    print_summary(&record, &path);
    Ok(())
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_toml(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(name) = &args.dataset {
        config.dataset = parse_dataset(name, &config.dataset)?;
    }
    if let Some(name) = &args.model {
        let (variant, prior) = parse_model(name)?;
        config.variant = variant;
        config.prior = prior;
    }
    if let Some(name) = &args.penalty {
        config.penalty = parse_penalty(name)?;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.lambda {
        config.lambda_reg = v;
    }
    if let Some(v) = args.fraction_observed {
        config.fraction_observed = v;
    }
    if let Some(v) = args.components {
        config.pseudo_count = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = args.seed_init {
        config.seeds.init = v;
    }
    if let Some(v) = args.seed_mask {
        config.seeds.mask = v;
    }
    if let Some(v) = args.seed_rff {
        config.seeds.rff = v;
    }
    if let Some(v) = args.seed_split {
        config.seeds.split = v;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if args.dump_latents {
        config.dump_latents = true;
    }
    config.validate()?;
    Ok(config)
}

fn parse_dataset(name: &str, current: &DatasetSpec) -> Result<DatasetSpec> {
    match name {
        "german" => Ok(DatasetSpec::German),
        "adult" => Ok(DatasetSpec::Adult),
        // Keep the config file's synthetic shape when only the name is given.
        "synth" => Ok(match current {
            DatasetSpec::Synth { .. } => current.clone(),
            _ => DatasetSpec::Synth { n: 400, d: 4, leak: 0.5 },
        }),
        path if path.ends_with(".csv") => Ok(DatasetSpec::Csv { path: path.to_string() }),
        other => bail!("unknown dataset {other:?}; expected german, adult, synth, or a .csv path"),
    }
}

fn parse_model(name: &str) -> Result<(ModelVariant, PriorKind)> {
    match name {
        "vfae" => Ok((ModelVariant::Vfae, PriorKind::StandardGaussian)),
        "hvfae" => Ok((ModelVariant::Hvfae, PriorKind::StandardGaussian)),
        "hvfae_vamp" => Ok((ModelVariant::Hvfae, PriorKind::VampPrior)),
        other => bail!("unknown model {other:?}; expected vfae, hvfae, or hvfae_vamp"),
    }
}

fn parse_penalty(name: &str) -> Result<PenaltyKind> {
    match name {
        "none" => Ok(PenaltyKind::None),
        "mmd" => Ok(PenaltyKind::Mmd),
        "mi" => Ok(PenaltyKind::Mi),
        other => bail!("unknown penalty {other:?}; expected none, mmd, or mi"),
    }
}

/// Write the record (and latent CSV, if any) under the config's output
/// directory. Files are append-only: each run claims the next free index.
fn persist_record(record: &RunRecord) -> Result<PathBuf> {
    let dir = PathBuf::from(&record.config.output_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let next = next_run_index(&dir)?;
    let stem = format!(
        "run_{next:04}_{}_{}",
        record.config.model_id(),
        record.config.dataset.label()
    );
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, record.to_json()).with_context(|| format!("writing {}", path.display()))?;
    if let Some(csv) = record.latents_csv() {
        fs::write(dir.join(format!("{stem}_latents.csv")), csv)?;
    }
    Ok(path)
}

fn next_run_index(dir: &Path) -> Result<usize> {
    let mut max = 0usize;
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix("run_") {
            if let Ok(idx) = rest.chars().take_while(char::is_ascii_digit).collect::<String>().parse::<usize>() {
                max = max.max(idx);
            }
        }
    }
    Ok(max + 1)
}

fn print_summary(record: &RunRecord, path: &Path) {
    let r = &record.report;
    println!("model {} on {}", r.model_id, record.config.dataset.label());
    println!("  target accuracy     {:>7.2} %   (majority {:.2} %)", r.y_acc, r.y_majority);
    println!("  sensitive audit     {:>7.2} %   (majority {:.2} %)", r.s_audit_acc, r.s_majority);
    println!("  discrimination      {:>7.2}", r.ds);
    println!("  probe converged     {}", r.probe_converged);
    match record.selected_epoch {
        Some(epoch) => println!("  selected epoch      {epoch} ({})", record.selection_rule),
        None => println!("  selected epoch      - ({})", record.selection_rule),
    }
    println!("  active units        z1 {} / z2 {}", record.active_units.0, record.active_units.1);
    println!("  wall clock          {:.1} s", record.wall_clock_secs);
    println!("record: {}", path.display());
}

fn sweep_command(args: SweepArgs) -> Result<()> {
    let mut outcomes: Vec<SweepOutcome> = Vec::new();
    let mut malformed: Vec<(PathBuf, String)> = Vec::new();
    for path in &args.configs {
        let parsed = fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|text| ExperimentConfig::from_toml(&text).map_err(|e| e.to_string()));
        match parsed {
            Ok(config) => {
                println!("running {} ({} on {})", path.display(), config.model_id(), config.dataset.label());
                let record = experiment::run(&config).map_err(|e| e.to_string());
                if let Ok(r) = &record {
                    let written = persist_record(r)?;
                    println!("  ok: y {:.1}, s {:.1}, ds {:.1} -> {}",
                        r.report.y_acc, r.report.s_audit_acc, r.report.ds, written.display());
                } else if let Err(e) = &record {
                    println!("  failed: {e}");
                }
                outcomes.push(SweepOutcome { config, record });
            }
            Err(e) => {
                println!("skipping {}: {e}", path.display());
                malformed.push((path.clone(), e));
            }
        }
    }

    let mut csv = experiment::sweep_csv(&outcomes);
    for (path, e) in &malformed {
        // Parse errors span lines (they quote the config); keep the row flat.
        let flat = e.split_whitespace().collect::<Vec<_>>().join(" ").replace(',', ";");
        csv.push_str(&format!("{},,,,,,,failed: {flat}\n", path.display()));
    }
    fs::write(&args.csv, &csv).with_context(|| format!("writing {}", args.csv.display()))?;
    println!("wrote {}", args.csv.display());
    report_ds_trends(&outcomes);

    let failures = outcomes.iter().filter(|o| o.record.is_err()).count() + malformed.len();
    if failures > 0 {
        println!("{failures} of {} entries failed (see status column)", outcomes.len() + malformed.len());
    }
    Ok(())
}

/// When a sweep varies the penalty weight within one model+dataset group,
/// say what the discrimination score did (observed, never enforced).
fn report_ds_trends(outcomes: &[SweepOutcome]) {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for o in outcomes {
        let Ok(record) = &o.record else { continue };
        let key = format!("{} on {}", o.config.model_id(), o.config.dataset.label());
        let pair = (o.config.lambda_reg, record.report.ds);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(pair),
            None => groups.push((key, vec![pair])),
        }
    }
    for (key, mut points) in groups {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.dedup_by(|a, b| a.0 == b.0);
        if points.len() < 2 {
            continue;
        }
        let steps: Vec<String> =
            points.iter().map(|(l, ds)| format!("lambda {l} -> ds {ds:.2}")).collect();
        let monotone = points.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
        println!(
            "ds trend for {key}: {} ({})",
            steps.join(", "),
            if monotone { "non-increasing" } else { "not monotone" }
        );
    }
}

fn table_command(args: TableArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.dir)
        .with_context(|| format!("reading {}", args.dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();

    // Newest record wins per (model, dataset): later run indices overwrite.
    let mut entries: Vec<(String, String, fairvae::eval::EvalReport)> = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path)?;
        let record = RunRecord::from_json(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        let keep = match args.mode {
            Mode::Supervised => record.config.fraction_observed == 1.0,
            Mode::Partial => record.config.fraction_observed < 1.0,
        };
        if !keep {
            continue;
        }
        let key = (record.config.model_id(), record.config.dataset.label().to_string());
        entries.retain(|(m, d, _)| (m, d) != (&key.0, &key.1));
        entries.push((key.0, key.1, record.report));
    }
    print!("{}", experiment::format_table(&entries));
    Ok(())
}

const DATA_FILES: &[(&str, &str)] = &[
    (
        "german.data",
        "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data",
    ),
    (
        "adult.data",
        "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data",
    ),
    (
        "adult.test",
        "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.test",
    ),
];

fn fetch_command(args: FetchArgs) -> Result<()> {
    let dir = args.dir.unwrap_or_else(experiment::data_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, url) in DATA_FILES {
        let target = dir.join(name);
        if target.exists() {
            println!("{} already present, skipping", target.display());
            continue;
        }
        println!("fetching {url}");
        let status = std::process::Command::new("curl")
            .args(["--fail", "--silent", "--show-error", "--location"])
            .args(["--connect-timeout", "10", "--max-time", "120"])
            .arg("--output")
            .arg(&target)
            .arg(*url)
            .status();
        let ok = matches!(status, Ok(s) if s.success());
        if !ok {
            let _ = fs::remove_file(&target);
            eprintln!("download failed; fetch the files manually:");
            for (name, url) in DATA_FILES {
                eprintln!("  curl -L -o {} {url}", dir.join(name).display());
            }
            bail!(
                "could not download {name}; place the files under {} (or set FAIRVAE_DATA)",
                dir.display()
            );
        }
        println!("wrote {}", target.display());
    }
    println!("data ready under {}", dir.display());
    Ok(())
}
