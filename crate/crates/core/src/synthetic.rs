//! Planted-partition expression data with cluster-specific survival.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::dataset::{ExpressionDataset, SurvivalRecord};
use crate::error::{Error, Result};
use crate::linalg::{euclidean_distance, Matrix};
use crate::rng::{substream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_clusters: usize,
    pub samples_per_cluster: usize,
    /// Dimension of the space the clusters are planted in.
    pub latent_dim: usize,
    /// Number of features after the random linear lift.
    pub output_dim: usize,
    /// Minimum pairwise distance between cluster centers (attained exactly by
    /// the closest pair).
    pub separation: f64,
    /// Standard deviation of the isotropic within-cluster noise.
    pub noise: f64,
    /// Apply an elementwise `tanh` squashing after the lift.
    pub nonlinear: bool,
    /// Exponential hazard per cluster; empty means `2^-k` for cluster `k`.
    pub hazards: Vec<f64>,
    /// Fraction of subjects censored.
    pub censoring_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_clusters: 3,
            samples_per_cluster: 200,
            latent_dim: 10,
            output_dim: 200,
            separation: 8.0,
            noise: 1.0,
            nonlinear: false,
            hazards: Vec::new(),
            censoring_rate: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn hazards(&self) -> Vec<f64> {
        if self.hazards.is_empty() {
            (0..self.num_clusters).map(|k| 0.5f64.powi(k as i32)).collect()
        } else {
            self.hazards.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.samples_per_cluster == 0 {
            return Err(Error::Config("synthetic data needs at least one cluster and sample".into()));
        }
        if self.latent_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        if !(self.separation >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("separation and noise must be non-negative".into()));
        }
        let hazards = self.hazards();
        if hazards.len() != self.num_clusters {
            return Err(Error::Config(format!(
                "{} hazards given for {} clusters",
                hazards.len(),
                self.num_clusters
            )));
        }
        if hazards.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Config("hazards must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return Err(Error::Config(format!(
                "censoring rate {} outside [0, 1)",
                self.censoring_rate
            )));
        }
        Ok(())
    }
}

/// Generated data together with the planted structure.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: ExpressionDataset,
    /// Planted cluster per sample.
    pub truth: Vec<usize>,
    /// Samples before the lift to `output_dim`.
    pub latent: Matrix,
    pub centers: Matrix,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = substream(spec.seed, Stream::Synthetic);
    let k = spec.num_clusters;
    let p = spec.latent_dim;
    let gauss = |rng: &mut crate::rng::Rng| -> f64 { StandardNormal.sample(rng) };

    let mut centers = Matrix::from_fn(k, p, |_, _| gauss(&mut rng));
    if k > 1 {
        let mut min_dist = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                min_dist = min_dist.min(euclidean_distance(centers.row(i), centers.row(j)));
            }
        }
        if min_dist <= 0.0 {
            return Err(Error::Numeric("coincident cluster centers".into()));
        }
        centers.scale_in_place(spec.separation / min_dist);
    }

    let n = k * spec.samples_per_cluster;
    let mut truth = Vec::with_capacity(n);
    let mut latent = Matrix::zeros(n, p);
    for c in 0..k {
        for s in 0..spec.samples_per_cluster {
            let i = c * spec.samples_per_cluster + s;
            truth.push(c);
            for (v, m) in latent.row_mut(i).iter_mut().zip(centers.row(c)) {
                *v = m + spec.noise * gauss(&mut rng);
            }
        }
    }

    let lift_scale = 1.0 / (p as f64).sqrt();
    let lift = Matrix::from_fn(p, spec.output_dim, |_, _| gauss(&mut rng) * lift_scale);
    let mut values = latent.matmul(&lift)?;
    if spec.nonlinear {
        let tau = spec.separation.max(1.0);
        values = values.map(|v| tau * (v / tau).tanh());
    }

    let sample_ids: Vec<String> = (0..n).map(|i| format!("S{i:05}")).collect();
    let feature_ids: Vec<String> = (0..spec.output_dim).map(|j| format!("G{j:05}")).collect();

    let hazards = spec.hazards();
    let survival = (0..n)
        .map(|i| {
            let event_time = Exp::new(hazards[truth[i]])
                .expect("validated hazard")
                .sample(&mut rng);
            let censored = rng.random::<f64>() < spec.censoring_rate;
            let time = if censored {
                rng.random::<f64>() * event_time
            } else {
                event_time
            };
            SurvivalRecord {
                sample_id: sample_ids[i].clone(),
                time,
                event: !censored,
                group: truth[i],
            }
        })
        .collect();

    let labels = truth.iter().map(|c| format!("C{c}")).collect();
    let mut dataset = ExpressionDataset::new(sample_ids, feature_ids, values)?.with_labels(labels)?;
    dataset.survival = Some(survival);
    Ok(SyntheticData {
        dataset,
        truth,
        latent,
        centers,
    })
}
