//! End-to-end experiments: load data, cluster, score, write artifacts; and
//! the extractor × clusterer comparison grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::baselines::{cluster, train_ae, train_vae, Clusterer, ExtractorConfig, Extractor};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{DataSource, ExperimentConfig, Method};
use crate::dataset::{load_expression_csv, load_labels_csv, load_survival_csv, ExpressionDataset, SurvivalRecord};
use crate::error::{Error, Result, StageExt};
use crate::export::{km_svg, pca_svg, write_assignments, write_flow, write_km_curves, write_pca, AssignmentTable};
use crate::linalg::Matrix;
use crate::metrics::{label_flow, nmi, nmi_with, silhouette, FlowTable, NmiNormalization};
use crate::pca::Pca;
use crate::pipeline::{TrainConfig, Trainer};
use crate::survival::{by_group, km_curve, logrank_test, median_survival, KmCurve, LogRankResult};
use crate::synthetic::generate_synthetic;

/// Candidate cluster counts for elbow selection in the comparison grid.
pub const DEFAULT_K_CANDIDATES: [usize; 9] = [2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Quality of one clustering. Fields are `None` where undefined: no
/// reference labels, a single cluster, or no survival data.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub k: usize,
    pub nmi: Option<f64>,
    /// On the input features.
    pub silhouette: Option<f64>,
    pub logrank: Option<LogRankResult>,
}

/// Survival records regrouped by cluster label.
pub fn regroup(records: &[SurvivalRecord], labels: &[usize]) -> Vec<SurvivalRecord> {
    records
        .iter()
        .zip(labels)
        .map(|(r, &g)| SurvivalRecord { group: g, ..r.clone() })
        .collect()
}

pub fn score(
    x: &Matrix,
    labels: &[usize],
    truth: Option<&[usize]>,
    survival: Option<&[SurvivalRecord]>,
) -> Result<Scores> {
    let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let nmi = truth.map(|t| nmi(labels, t)).transpose()?;
    let (silhouette, logrank) = if k < 2 {
        (None, None)
    } else {
        let lr = survival
            .map(|s| logrank_test(&regroup(s, labels)))
            .transpose()?;
        (Some(silhouette(x, labels)?), lr)
    };
    Ok(Scores {
        k,
        nmi,
        silhouette,
        logrank,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub extractor: Extractor,
    pub clusterer: Clusterer,
    pub labels: Vec<usize>,
    pub scores: Scores,
}

impl AblationCell {
    pub fn method(&self) -> String {
        format!("{}+{}", self.extractor, self.clusterer)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    /// Extractor-major order.
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, extractor: Extractor, clusterer: Clusterer) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.extractor == extractor && c.clusterer == clusterer)
    }

    /// Whether the given cell's NMI is at or above every other cell's, within
    /// `tol`.
    pub fn leads_on_nmi(&self, extractor: Extractor, clusterer: Clusterer, tol: f64) -> bool {
        let Some(own) = self.get(extractor, clusterer).and_then(|c| c.scores.nmi) else {
            return false;
        };
        self.cells
            .iter()
            .filter_map(|c| c.scores.nmi)
            .all(|v| v <= own + tol)
    }
}

/// Trains each extractor once with the pretraining budget of `config` and
/// runs every clusterer on its latents. The VQ row uses the pretrained
/// encoder output; its RIM cell is the full fine-tuned model.
pub fn ablate(data: &ExpressionDataset, config: &TrainConfig, candidates: &[usize]) -> Result<AblationTable> {
    let x = &data.values;
    let truth = data.label_indices();
    let survival = data.survival.as_deref();

    let mut trainer = Trainer::new(x.cols(), config.clone()).stage("vq pretraining")?;
    trainer.run_until(x, config.pretrain_epochs).stage("vq pretraining")?;
    let vq_features = trainer.model.encode(x)?;
    trainer.run(x).stage("vq fine-tuning")?;
    let vq_rim = trainer.assignment(x).stage("vq fine-tuning")?;

    let ex_cfg = ExtractorConfig::from(config);
    let ae_features = train_ae(x, &ex_cfg).stage("autoencoder training")?.encode(x)?;
    let vae_features = train_vae(x, &ex_cfg).stage("vae training")?.encode(x)?;

    let mut cells = Vec::with_capacity(12);
    for extractor in Extractor::ALL {
        let features = match extractor {
            Extractor::Ae => &ae_features,
            Extractor::Vae => &vae_features,
            Extractor::Vq => &vq_features,
        };
        for clusterer in Clusterer::ALL {
            let labels = if (extractor, clusterer) == (Extractor::Vq, Clusterer::Rim) {
                vq_rim.compact_labels()
            } else {
                cluster(features, extractor, clusterer, None, candidates, config)
                    .stage("baseline clustering")?
                    .labels
            };
            let scores = score(x, &labels, truth.as_deref(), survival)?;
            info!(
                "{extractor}+{clusterer}: K={} NMI={:?}",
                scores.k, scores.nmi
            );
            cells.push(AblationCell {
                extractor,
                clusterer,
                labels,
                scores,
            });
        }
    }
    Ok(AblationTable { cells })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Rows `seed,method,k,nmi,silhouette,logrank_p`; undefined scores are empty.
pub fn write_ablation_csv(path: impl AsRef<Path>, runs: &[(u64, AblationTable)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["seed", "method", "k", "nmi", "silhouette", "logrank_p"])
        .map_err(|e| Error::csv(path, e))?;
    for (seed, table) in runs {
        for c in &table.cells {
            w.write_record([
                seed.to_string(),
                c.method(),
                c.scores.k.to_string(),
                opt(c.scores.nmi),
                opt(c.scores.silhouette),
                opt(c.scores.logrank.as_ref().map(|l| l.p_value)),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Log-rank summary as reported.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRankSummary {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// The `metrics.json` document.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub method: String,
    pub seed: u64,
    pub samples: usize,
    pub features: usize,
    /// Clusters found.
    pub k: usize,
    /// Discriminator outputs, for VQ-RIM.
    pub num_classes: Option<usize>,
    pub nmi: Option<f64>,
    pub silhouette: Option<f64>,
    pub logrank: Option<LogRankSummary>,
    /// Per cluster; `None` where the curve stays above one half.
    pub median_survival: BTreeMap<usize, Option<f64>>,
    pub pca_explained_variance_ratio: Vec<f64>,
}

/// What a finished run produced, besides the files.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: Report,
    pub assignments: AssignmentTable,
    /// VQ-RIM only.
    pub checkpoint: Option<Checkpoint>,
}

/// The dataset a config describes, normalized if requested.
pub fn load_dataset(config: &ExperimentConfig) -> Result<ExpressionDataset> {
    let mut data = match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec)?.dataset,
        DataSource::Csv {
            expression,
            survival,
            labels,
        } => {
            let mut data = load_expression_csv(expression, false)?;
            if let Some(path) = labels {
                let l = load_labels_csv(path, &data)?;
                data = data.with_labels(l)?;
            }
            if let Some(path) = survival {
                data.attach_survival(load_survival_csv(path)?);
            }
            data
        }
    };
    if config.normalize {
        data.z_score();
    }
    Ok(data)
}

/// Clusters the dataset with the configured method.
pub fn run_method(data: &ExpressionDataset, config: &ExperimentConfig) -> Result<(AssignmentTable, Option<Checkpoint>)> {
    let x = &data.values;
    let (labels, probs, checkpoint) = match config.method {
        Method::VqRim => {
            let mut trainer = Trainer::new(x.cols(), config.train.clone()).stage("training")?;
            trainer.run(x).stage("training")?;
            let assign = trainer.assignment(x).stage("assignment")?;
            let ck = Checkpoint::from_trainer(&trainer);
            (assign.hard_labels, Some(assign.probs), Some(ck))
        }
        Method::Baseline(extractor, clusterer) => {
            let ex_cfg = ExtractorConfig::from(&config.train);
            let features = match extractor {
                Extractor::Ae => train_ae(x, &ex_cfg).stage("autoencoder training")?.encode(x)?,
                Extractor::Vae => train_vae(x, &ex_cfg).stage("vae training")?.encode(x)?,
                Extractor::Vq => {
                    let mut cfg = config.train.clone();
                    cfg.finetune_epochs = 0;
                    let mut trainer = Trainer::new(x.cols(), cfg).stage("vq pretraining")?;
                    trainer.run(x).stage("vq pretraining")?;
                    trainer.model.encode(x)?
                }
            };
            let r = cluster(&features, extractor, clusterer, config.k, &config.k_candidates, &config.train)
                .stage("clustering")?;
            (r.labels, r.probs, None)
        }
    };
    Ok((
        AssignmentTable {
            sample_ids: data.sample_ids.clone(),
            labels,
            probs,
        },
        checkpoint,
    ))
}

/// Scores and derived tables for one clustering of a dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: Report,
    pub curves: BTreeMap<usize, KmCurve>,
    /// First two principal component scores of the input features.
    pub pca_scores: Option<Matrix>,
    /// Reference labels (rows) against clusters (columns).
    pub flow: Option<FlowTable>,
}

/// Scores `labels` against whatever the dataset carries: reference labels
/// give NMI and a flow table, survival data give Kaplan-Meier curves and the
/// log-rank test.
pub fn evaluate(
    data: &ExpressionDataset,
    labels: &[usize],
    method: &str,
    seed: u64,
    norm: NmiNormalization,
) -> Result<Evaluation> {
    let x = &data.values;
    if labels.len() != x.rows() {
        return Err(Error::Input(format!("{} labels for {} samples", labels.len(), x.rows())));
    }
    let truth = data.label_indices();
    let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let nmi = truth.as_deref().map(|t| nmi_with(labels, t, norm)).transpose()?;
    let silhouette = if k > 1 && k < x.rows() { Some(silhouette(x, labels)?) } else { None };
    let regrouped = data.survival.as_deref().map(|s| regroup(s, labels));
    let logrank = match &regrouped {
        Some(r) if k > 1 => Some(logrank_test(r)?),
        _ => None,
    };
    let mut curves = BTreeMap::new();
    if let Some(r) = &regrouped {
        for (g, recs) in by_group(r) {
            curves.insert(g, km_curve(&recs)?);
        }
    }
    let components = 2.min(x.cols()).min(x.rows().saturating_sub(1));
    let pca = if components > 0 { Some(Pca::fit(x, components)?) } else { None };
    let pca_scores = pca.as_ref().map(|p| p.transform(x)).transpose()?;
    let flow = truth.as_deref().map(|t| label_flow(t, labels)).transpose()?;
    let report = Report {
        method: method.to_owned(),
        seed,
        samples: x.rows(),
        features: x.cols(),
        k,
        num_classes: None,
        nmi,
        silhouette,
        logrank: logrank.map(|l| LogRankSummary {
            statistic: l.statistic,
            df: l.df,
            p_value: l.p_value,
        }),
        median_survival: curves.iter().map(|(&g, c)| (g, median_survival(c))).collect(),
        pca_explained_variance_ratio: pca.map(|p| p.explained_variance_ratio).unwrap_or_default(),
    };
    Ok(Evaluation {
        report,
        curves,
        pca_scores,
        flow,
    })
}

/// Writes `metrics.json`, `km_curves.csv`, `pca.csv`, `flow.csv` and, with
/// `plots`, `km.svg` and `pca.svg` into `dir`. Files that do not apply are
/// skipped.
pub fn write_evaluation(dir: &Path, sample_ids: &[String], labels: &[usize], eval: &Evaluation, plots: bool) -> Result<()> {
    let json = serde_json::to_string_pretty(&eval.report)
        .map_err(|e| Error::Numeric(format!("report serialization: {e}")))?;
    let path = dir.join("metrics.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    if let Some(s) = &eval.pca_scores {
        write_pca(dir.join("pca.csv"), sample_ids, labels, s)?;
    }
    if !eval.curves.is_empty() {
        write_km_curves(dir.join("km_curves.csv"), &eval.curves)?;
    }
    if let Some(f) = &eval.flow {
        write_flow(dir.join("flow.csv"), f)?;
    }
    if plots {
        if !eval.curves.is_empty() {
            let path = dir.join("km.svg");
            let svg = km_svg(&eval.curves, &format!("Kaplan-Meier, {}", eval.report.method));
            std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        }
        if let Some(s) = &eval.pca_scores {
            let path = dir.join("pca.svg");
            let svg = pca_svg(s, labels, &format!("PCA, {}", eval.report.method));
            std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Runs one configured experiment and writes its artifacts to `out_dir`.
/// Files are staged in a sibling directory that replaces `out_dir` only once
/// everything has been written.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    config.validate()?;
    let data = load_dataset(config).stage("loading data")?;
    let (assignments, checkpoint) = run_method(&data, config)?;
    let labels = &assignments.labels;
    let mut eval = evaluate(
        &data,
        labels,
        &config.method.to_string(),
        config.train.seed,
        config.nmi_normalization,
    )
    .stage("evaluation")?;
    eval.report.num_classes = checkpoint.as_ref().map(|c| c.config.num_classes);

    let staging = stage_dir(out_dir)?;
    let write = || -> Result<()> {
        let path = staging.join("config.txt");
        std::fs::write(&path, config.to_text()).map_err(|e| Error::io(&path, e))?;
        write_assignments(staging.join("assignments.csv"), &assignments)?;
        write_evaluation(&staging, &data.sample_ids, labels, &eval, config.plots)?;
        if let Some(ck) = &checkpoint {
            save_checkpoint(staging.join("checkpoint.bin"), ck)?;
        }
        Ok(())
    };
    if let Err(e) = write().stage("writing artifacts") {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    publish(&staging, out_dir)?;
    info!("wrote {}", out_dir.display());
    Ok(ExperimentOutput {
        report: eval.report,
        assignments,
        checkpoint,
    })
}

fn stage_dir(out_dir: &Path) -> Result<PathBuf> {
    let parent = out_dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = out_dir
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a directory name", out_dir.display())))?
        .to_string_lossy()
        .into_owned();
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    Ok(staging)
}

/// Moves the staged directory into place, replacing any previous results.
fn publish(staging: &Path, out_dir: &Path) -> Result<()> {
    if out_dir.exists() {
        let old = staging.with_extension("old");
        std::fs::rename(out_dir, &old).map_err(|e| Error::io(out_dir, e))?;
        std::fs::rename(staging, out_dir).map_err(|e| Error::io(out_dir, e))?;
        std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        std::fs::rename(staging, out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    Ok(())
}
