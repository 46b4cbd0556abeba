use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use vqrim::baselines::{Clusterer, Extractor};
use vqrim::config::{DataSource, ExperimentConfig};
use vqrim::dataset::{load_expression_csv, load_labels_csv, load_survival_csv};
use vqrim::experiment::{ablate, evaluate, load_dataset, run_experiment, write_ablation_csv, write_evaluation};
use vqrim::export::{km_svg, read_assignments, write_expression_csv, write_km_curves, write_labels_csv, write_survival_csv};
use vqrim::metrics::NmiNormalization;
use vqrim::survival::{by_group, km_curve};
use vqrim::synthetic::generate_synthetic;

/// Clustering with a vector-quantized autoencoder and an
/// information-maximizing discriminator, with baselines and survival analysis.
#[derive(Parser, Debug)]
#[command(name = "vqrim", version, about)]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for all outputs.
    #[arg(long, global = true, default_value = "vqrim-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model (or a baseline) and write assignments, metrics, plots and a checkpoint.
    Fit(FitArgs),
    /// Write a planted-partition dataset with labels and survival times as CSV.
    Synth(SynthArgs),
    /// Score an existing assignments file.
    Evaluate(EvaluateArgs),
    /// Run the extractor × clusterer comparison grid.
    Ablate(AblateArgs),
    /// Kaplan-Meier curves per cluster, as CSV and SVG.
    KmPlot(KmPlotArgs),
}

/// Overrides for training fields; unset flags keep the config-file value.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// Sets both pretraining and fine-tuning epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Codebook size M.
    #[arg(long)]
    num_embeddings: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    encoder_hidden: Option<usize>,
    #[arg(long)]
    discriminator_hidden: Option<usize>,
    /// Commitment cost β.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Discriminator outputs K̃.
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    freeze_generator: bool,
    #[arg(long)]
    cold_start: bool,
}

/// Overrides for the synthetic generator.
#[derive(Args, Debug, Default)]
struct SynthFlags {
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    samples_per_cluster: Option<usize>,
    /// Dimension the clusters are planted in.
    #[arg(long)]
    planted_dim: Option<usize>,
    /// Output feature count.
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    nonlinear: bool,
    /// Comma-separated hazard per cluster.
    #[arg(long)]
    hazards: Option<String>,
    #[arg(long)]
    censoring_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct DataFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expression CSV; synthetic data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    survival: Option<PathBuf>,
    /// `sample_id,label` reference labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Skip per-feature z-scoring.
    #[arg(long)]
    no_normalize: bool,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// `vq-rim` or `extractor+clusterer`, e.g. `ae+kmeans`.
    #[arg(long)]
    method: Option<String>,
    /// Fixed K for classic clusterers.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    no_plots: bool,
    #[command(flatten)]
    data: DataFlags,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    assignments: PathBuf,
    /// Expression CSV the assignments refer to.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    survival: Option<PathBuf>,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Number of consecutive seeds, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    data: DataFlags,
}

#[derive(Args, Debug)]
struct KmPlotArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    survival: PathBuf,
}

fn pairs_from_flags(t: &TrainFlags, s: &SynthFlags) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    macro_rules! push {
        ($src:ident . $field:ident => $key:literal) => {
            if let Some(v) = &$src.$field {
                out.push(($key, v.to_string()));
            }
        };
    }
    push!(t.epochs => "epochs");
    push!(t.pretrain_epochs => "pretrain_epochs");
    push!(t.finetune_epochs => "finetune_epochs");
    push!(t.batch_size => "batch_size");
    push!(t.pretrain_lr => "pretrain_lr");
    push!(t.finetune_lr => "finetune_lr");
    push!(t.weight_decay => "weight_decay");
    push!(t.num_embeddings => "num_embeddings");
    push!(t.latent_dim => "latent_dim");
    push!(t.encoder_hidden => "encoder_hidden");
    push!(t.discriminator_hidden => "discriminator_hidden");
    push!(t.beta => "commitment_cost");
    push!(t.dropout => "dropout");
    push!(t.alpha => "alpha");
    push!(t.lambda => "lambda");
    push!(t.num_classes => "num_classes");
    push!(t.prune_threshold => "prune_threshold");
    if t.freeze_generator {
        out.push(("freeze_generator", "true".into()));
    }
    if t.cold_start {
        out.push(("cold_start", "true".into()));
    }
    push!(s.clusters => "clusters");
    push!(s.samples_per_cluster => "samples_per_cluster");
    push!(s.planted_dim => "planted_dim");
    push!(s.features => "features");
    push!(s.separation => "separation");
    push!(s.noise => "noise");
    push!(s.hazards => "hazards");
    push!(s.censoring_rate => "censoring_rate");
    if s.nonlinear {
        out.push(("nonlinear", "true".into()));
    }
    out
}

/// Config file, then flags, then `--set`, then `--seed`. Pairs are applied
/// in order, so a later `pretrain_epochs` refines an earlier `epochs`.
fn build_config(cli_seed: Option<u64>, d: &DataFlags, extra: &[(&str, String)]) -> Result<ExperimentConfig> {
    let mut text = match &d.config {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let base = d.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
    // later keys override earlier ones
    let mut settings: Vec<(String, String)> = vqrim::config::parse_pairs(&text)?
        .into_iter()
        .map(|(k, v)| match k.as_str() {
            "data" | "survival" | "labels" if v != "synthetic" => (k, base.join(v).display().to_string()),
            _ => (k, v),
        })
        .collect();
    let mut put = |k: &str, v: String| {
        settings.retain(|(key, _)| key != k);
        settings.push((k.to_owned(), v));
    };
    for (k, v) in pairs_from_flags(&d.train, &d.synth) {
        put(k, v);
    }
    for (k, v) in extra {
        put(k, v.clone());
    }
    if let Some(p) = &d.data {
        put("data", p.display().to_string());
    }
    if let Some(p) = &d.survival {
        put("survival", p.display().to_string());
    }
    if let Some(p) = &d.labels {
        put("labels", p.display().to_string());
    }
    if d.no_normalize {
        put("normalize", "false".into());
    }
    for kv in &d.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        put(&k.trim().to_ascii_lowercase(), v.trim().to_owned());
    }
    if let Some(seed) = cli_seed {
        put("seed", seed.to_string());
    }
    text = settings.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    Ok(ExperimentConfig::from_text(&text)?)
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(m) = &args.method {
        extra.push(("method", m.clone()));
    }
    if let Some(k) = args.k {
        extra.push(("k", k.to_string()));
    }
    if args.no_plots {
        extra.push(("plots", "false".into()));
    }
    let config = build_config(cli.seed, &args.data, &extra)?;
    let out = run_experiment(&config, &cli.out_dir)?;
    let r = &out.report;
    println!(
        "{}: K={} NMI={} silhouette={} log-rank p={}",
        r.method,
        r.k,
        fmt_opt(r.nmi),
        fmt_opt(r.silhouette),
        fmt_opt(r.logrank.as_ref().map(|l| l.p_value))
    );
    println!("artifacts in {}", cli.out_dir.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec = vqrim::synthetic::SyntheticSpec::default();
    for (k, v) in pairs_from_flags(&TrainFlags::default(), &args.synth) {
        spec.set(k, &v)?;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    let dir = &cli.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let ds = &data.dataset;
    write_expression_csv(dir.join("expression.csv"), ds)?;
    write_labels_csv(dir.join("labels.csv"), &ds.sample_ids, ds.labels.as_deref().unwrap_or_default())?;
    write_survival_csv(dir.join("survival.csv"), ds.survival.as_deref().unwrap_or_default())?;
    println!(
        "{} samples × {} features in {} clusters written to {}",
        ds.len(),
        ds.num_features(),
        spec.num_clusters,
        dir.display()
    );
    Ok(())
}

fn evaluate_cmd(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let table = read_assignments(&args.assignments)?;
    let mut data = load_expression_csv(&args.data, !args.no_normalize)?;
    if let Some(p) = &args.labels {
        let l = load_labels_csv(p, &data)?;
        data = data.with_labels(l)?;
    }
    if let Some(p) = &args.survival {
        data.attach_survival(load_survival_csv(p)?);
    }
    let index: HashMap<&str, usize> = table
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels = data
        .sample_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| table.labels[i])
                .with_context(|| format!("sample `{id}` has no assignment"))
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = evaluate(&data, &labels, "assignments", cli.seed.unwrap_or(0), NmiNormalization::Arithmetic)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    write_evaluation(&cli.out_dir, &data.sample_ids, &labels, &eval, !args.no_plots)?;
    let r = &eval.report;
    println!(
        "K={} NMI={} silhouette={} log-rank p={}",
        r.k,
        fmt_opt(r.nmi),
        fmt_opt(r.silhouette),
        fmt_opt(r.logrank.as_ref().map(|l| l.p_value))
    );
    Ok(())
}

fn ablate_cmd(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let base = build_config(cli.seed, &args.data, &[])?;
    let first = base.train.seed;
    let mut runs = Vec::new();
    let mut leads = 0;
    for seed in first..first + args.seeds {
        let mut cfg = base.clone();
        cfg.train.seed = seed;
        if let DataSource::Synthetic(spec) = &mut cfg.data {
            spec.seed = seed;
        }
        let data = load_dataset(&cfg)?;
        info!("seed {seed}: {} samples", data.len());
        let table = ablate(&data, &cfg.train, &cfg.k_candidates)?;
        println!("seed {seed}");
        for c in &table.cells {
            println!("  {:<14} K={:<3} NMI={}", c.method(), c.scores.k, fmt_opt(c.scores.nmi));
        }
        if table.leads_on_nmi(Extractor::Vq, Clusterer::Rim, 1e-9) {
            leads += 1;
        }
        runs.push((seed, table));
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join("ablation.csv");
    write_ablation_csv(&path, &runs)?;
    println!("vq+rim ranks first on NMI in {leads} of {} seeds; table in {}", args.seeds, path.display());
    Ok(())
}

fn km_plot(cli: &Cli, args: &KmPlotArgs) -> Result<()> {
    let table = read_assignments(&args.assignments)?;
    let labels: HashMap<&str, usize> = table
        .sample_ids
        .iter()
        .map(String::as_str)
        .zip(table.labels.iter().copied())
        .collect();
    let mut records = load_survival_csv(&args.survival)?;
    let before = records.len();
    records.retain(|r| labels.contains_key(r.sample_id.as_str()));
    if records.len() < before {
        log::warn!("{} survival records have no assignment and were dropped", before - records.len());
    }
    for r in &mut records {
        r.group = labels[r.sample_id.as_str()];
    }
    let mut curves = BTreeMap::new();
    for (g, recs) in by_group(&records) {
        curves.insert(g, km_curve(&recs)?);
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    write_km_curves(cli.out_dir.join("km_curves.csv"), &curves)?;
    let svg_path = cli.out_dir.join("km.svg");
    std::fs::write(&svg_path, km_svg(&curves, "Kaplan-Meier"))?;
    println!("{} curves written to {}", curves.len(), cli.out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Fit(a) => fit(&cli, a),
        Command::Synth(a) => synth(&cli, a),
        Command::Evaluate(a) => evaluate_cmd(&cli, a),
        Command::Ablate(a) => ablate_cmd(&cli, a),
        Command::KmPlot(a) => km_plot(&cli, a),
    }
}
