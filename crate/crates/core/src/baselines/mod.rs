//! Comparison methods: continuous-latent extractors, classic clusterers, a
//! RIM head on fixed features, and elbow-based choice of K.

pub mod autoencoder;
pub mod gmm;
pub mod kmeans;
pub mod spectral;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{leading_std, Matrix};
use crate::optim::OptimizerState;
use crate::pipeline::TrainConfig;
use crate::rim::{self, prune_inactive, ClusterAssignment, Discriminator};
use crate::rng::{permutation, substream, Stream};

pub use autoencoder::{kl_divergence, train_ae, train_vae, Autoencoder, ExtractorConfig, Vae};
pub use gmm::{gmm_em, GmmResult};
pub use kmeans::{kmeans, KMeansResult};
pub use spectral::{spectral, SpectralResult};

/// Feature extractor feeding a clusterer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Extractor {
    Ae,
    Vae,
    Vq,
}

/// Clustering step applied to extracted features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Clusterer {
    KMeans,
    Spectral,
    Gmm,
    Rim,
}

impl Extractor {
    pub const ALL: [Self; 3] = [Self::Ae, Self::Vae, Self::Vq];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Ae => "ae",
            Self::Vae => "vae",
            Self::Vq => "vq",
        }
    }
}

impl Clusterer {
    pub const ALL: [Self; 4] = [Self::KMeans, Self::Spectral, Self::Gmm, Self::Rim];

    pub fn tag(self) -> &'static str {
        match self {
            Self::KMeans => "kmeans",
            Self::Spectral => "spectral",
            Self::Gmm => "gmm",
            Self::Rim => "rim",
        }
    }
}

macro_rules! tagged {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.tag())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .into_iter()
                    .find(|v| v.tag() == s.to_ascii_lowercase())
                    .ok_or_else(|| Error::Config(format!("unknown {} `{s}`", $what)))
            }
        }
    };
}

tagged!(Extractor, "extractor");
tagged!(Clusterer, "clusterer");

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    /// `extractor+clusterer`, e.g. `ae+kmeans`.
    pub method: String,
    pub k: usize,
    /// In `0..k`.
    pub labels: Vec<usize>,
    pub probs: Option<Matrix>,
    /// Score per candidate K used to choose `k`, if it was chosen.
    pub selection_scores: Vec<(usize, f64)>,
}

/// The candidate with the largest perpendicular distance to the chord
/// joining the first and last points, after scaling both axes to `[0, 1]`.
/// Ties go to the smallest K.
pub fn elbow_select(ks: &[usize], scores: &[f64]) -> Result<usize> {
    if ks.len() != scores.len() {
        return Err(Error::Input(format!("{} candidates but {} scores", ks.len(), scores.len())));
    }
    if ks.len() < 3 {
        return Err(Error::Input("elbow selection needs at least three candidates".into()));
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let ((k0, kw), (s0, sw)) = (span(&kf), span(scores));
    let pts: Vec<(f64, f64)> = kf
        .iter()
        .zip(scores)
        .map(|(k, s)| ((k - k0) / kw, (s - s0) / sw))
        .collect();
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    let mut best = (ks[0], 0.0);
    for (&k, p) in ks.iter().zip(&pts) {
        let dist = if len > 0.0 {
            (dx * (p.1 - a.1) - dy * (p.0 - a.0)).abs() / len
        } else {
            0.0
        };
        if dist > best.1 + 1e-12 {
            best = (k, dist);
        }
    }
    Ok(best.0)
}

/// k-means SSE for every K in `candidates`, then the elbow.
pub fn select_k(x: &Matrix, candidates: &[usize], seed: u64) -> Result<(usize, Vec<(usize, f64)>)> {
    let scores: Vec<(usize, f64)> = candidates
        .iter()
        .filter(|&&k| k <= x.rows())
        .map(|&k| Ok((k, kmeans(x, k, seed, 300)?.sse)))
        .collect::<Result<_>>()?;
    let (ks, ss): (Vec<usize>, Vec<f64>) = scores.iter().copied().unzip();
    Ok((elbow_select(&ks, &ss)?, scores))
}

/// Trains a softmax head with the regularized information objective on fixed
/// features, scaled by their leading principal standard deviation, using the
/// fine-tuning settings of `config`.
pub fn rim_head(features: &Matrix, config: &TrainConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    if features.rows() == 0 {
        return Err(Error::Input("no samples to cluster".into()));
    }
    let hidden: Vec<usize> = if config.discriminator_hidden == 0 {
        vec![]
    } else {
        vec![config.discriminator_hidden]
    };
    let mut init = substream(config.seed, Stream::Init);
    let mut disc = Discriminator::new(features.cols(), &hidden, config.num_classes, config.dropout, &mut init)?;
    let scale = leading_std(features)?;
    let z = if scale > 0.0 { features.scale(1.0 / scale) } else { features.clone() };
    let mut opt = OptimizerState::adamw(config.finetune_lr, config.weight_decay);
    let mut shuffle = substream(config.seed, Stream::Shuffle);
    let mut dropout = substream(config.seed, Stream::Dropout);
    for epoch in 0..config.finetune_epochs {
        for (b, idx) in permutation(z.rows(), &mut shuffle).chunks(config.batch_size).enumerate() {
            let batch = z.select_rows(idx);
            let (terms, grads, _) = rim::rim_backward(&mut disc, &batch, config.alpha, config.lambda, Some(&mut dropout))?;
            if !terms.objective.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: "rim head",
                    epoch,
                    batch: b,
                });
            }
            opt.step(&mut disc.net.param_refs(&grads, "discriminator"))?;
        }
    }
    disc.net.clear_cache();
    let probs = rim::predict_proba(&disc, &z)?;
    let mut assign = ClusterAssignment::new(probs, vec![0; z.rows()]);
    prune_inactive(&mut assign, config.prune_threshold())?;
    Ok(assign)
}

/// Runs one clusterer on extracted features. Classic clusterers use `k`
/// when given, otherwise the elbow over `candidates`; the RIM head finds K
/// itself.
pub fn cluster(
    features: &Matrix,
    extractor: Extractor,
    clusterer: Clusterer,
    k: Option<usize>,
    candidates: &[usize],
    config: &TrainConfig,
) -> Result<BaselineResult> {
    let method = format!("{extractor}+{clusterer}");
    let seed = config.seed;
    if clusterer == Clusterer::Rim {
        let assign = rim_head(features, config)?;
        let labels = assign.compact_labels();
        return Ok(BaselineResult {
            method,
            k: assign.num_active(),
            labels,
            probs: Some(assign.probs),
            selection_scores: vec![],
        });
    }
    let (k, selection_scores) = match k {
        Some(k) => (k, vec![]),
        None => select_k(features, candidates, seed)?,
    };
    let (labels, probs) = match clusterer {
        Clusterer::KMeans => (kmeans(features, k, seed, 300)?.labels, None),
        Clusterer::Spectral => (
            spectral(features, k, spectral::DEFAULT_NEIGHBORS, seed)?.labels,
            None,
        ),
        Clusterer::Gmm => {
            let g = gmm_em(features, k, seed, 300, 1e-8)?;
            (g.labels(), Some(g.responsibilities))
        }
        Clusterer::Rim => unreachable!("handled above"),
    };
    Ok(BaselineResult {
        method,
        k,
        labels,
        probs,
        selection_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbow_examples() {
        assert_eq!(elbow_select(&[1, 2, 3, 4, 5], &[100.0, 40.0, 12.0, 10.0, 9.0]).unwrap(), 3);
        assert_eq!(elbow_select(&[1, 2, 3, 4], &[4.0, 3.0, 2.0, 1.0]).unwrap(), 1);
        assert_eq!(elbow_select(&[1, 2, 3, 4, 5], &[100.0, 20.0, 15.0, 12.0, 10.0]).unwrap(), 2);
        assert!(elbow_select(&[1, 2], &[3.0, 1.0]).is_err());
        assert!(elbow_select(&[1, 2, 3], &[3.0, 1.0]).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for e in Extractor::ALL {
            assert_eq!(e.tag().parse::<Extractor>().unwrap(), e);
        }
        for c in Clusterer::ALL {
            assert_eq!(c.to_string().parse::<Clusterer>().unwrap(), c);
        }
        assert!("tsne".parse::<Clusterer>().is_err());
    }
}
