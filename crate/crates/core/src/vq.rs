//! Codebook lookup, the straight-through estimator, and the generator losses.
//!
//! The quantizer is a deterministic posterior: each latent snaps to its
//! nearest code, so `q(z = k | x)` is one-hot on the argmin index.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    /// `M × l`, one code per row.
    pub vectors: Matrix,
    /// Per-code counts from the most recent call to [`quantize`].
    pub usage_counts: Vec<u64>,
}

impl Codebook {
    /// Uniform init in `±1/M`.
    pub fn new(num_embeddings: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if num_embeddings == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "codebook needs positive size, got {num_embeddings}x{dim}"
            )));
        }
        let bound = 1.0 / num_embeddings as f64;
        let vectors = Matrix::from_fn(num_embeddings, dim, |_, _| rng.random_range(-bound..bound));
        Ok(Self::from_vectors(vectors))
    }

    pub fn from_vectors(vectors: Matrix) -> Self {
        let usage_counts = vec![0; vectors.rows()];
        Self {
            vectors,
            usage_counts,
        }
    }

    pub fn num_embeddings(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Nearest code for one latent; ties go to the lowest index.
    pub fn nearest(&self, z: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, code) in self.vectors.row_iter().enumerate() {
            let d = squared_distance(z, code);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Quantizes without touching usage statistics.
    pub fn lookup(&self, z_e: &Matrix) -> Result<QuantizationResult> {
        if self.num_embeddings() == 0 {
            return Err(Error::Config("empty codebook".into()));
        }
        if z_e.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "latent width {} does not match codebook dimension {}",
                z_e.cols(),
                self.dim()
            )));
        }
        let mut indices = Vec::with_capacity(z_e.rows());
        let mut distances = Vec::with_capacity(z_e.rows());
        let mut quantized = Matrix::zeros(z_e.rows(), self.dim());
        for (i, z) in z_e.row_iter().enumerate() {
            let (k, d) = self.nearest(z);
            quantized.row_mut(i).copy_from_slice(self.vectors.row(k));
            indices.push(k);
            distances.push(d);
        }
        Ok(QuantizationResult {
            indices,
            quantized,
            latents: z_e.clone(),
            distances,
        })
    }

    pub fn active_codes(&self) -> usize {
        self.usage_counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult {
    /// Selected code per sample.
    pub indices: Vec<usize>,
    /// `z_q`: rows copied from the codebook.
    pub quantized: Matrix,
    /// `z_e`: the encoder outputs that were quantized.
    pub latents: Matrix,
    /// Squared distance from each latent to its selected code.
    pub distances: Vec<f64>,
}

/// Nearest-code assignment for every row of `z_e`; resets the codebook's
/// usage counts to this pass.
pub fn quantize(z_e: &Matrix, book: &mut Codebook) -> Result<QuantizationResult> {
    let result = book.lookup(z_e)?;
    book.usage_counts.iter_mut().for_each(|c| *c = 0);
    for &k in &result.indices {
        book.usage_counts[k] += 1;
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqLosses {
    /// `mean_i ||sg[z_e] − e||²`; trains the codebook only.
    pub codebook: f64,
    /// `β · mean_i ||z_e − sg[e]||²`; trains the encoder only.
    pub commitment: f64,
}

fn check_pair(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Per-sample squared distances are averaged over the batch (summed over
/// latent dimensions).
pub fn vq_losses(z_e: &Matrix, z_q: &Matrix, commitment_cost: f64) -> Result<VqLosses> {
    check_pair(z_e, z_q, "vq_losses")?;
    let n = z_e.rows().max(1) as f64;
    let mean_sq = z_e
        .row_iter()
        .zip(z_q.row_iter())
        .map(|(a, b)| squared_distance(a, b))
        .sum::<f64>()
        / n;
    Ok(VqLosses {
        codebook: mean_sq,
        commitment: commitment_cost * mean_sq,
    })
}

/// Gradient of the codebook loss with respect to the codebook, with `z_e`
/// held constant. Only codes selected in `quant` receive gradient.
pub fn codebook_loss_grad(quant: &QuantizationResult, num_embeddings: usize) -> Matrix {
    let n = quant.latents.rows().max(1) as f64;
    let mut grad = Matrix::zeros(num_embeddings, quant.latents.cols());
    for (i, &k) in quant.indices.iter().enumerate() {
        let ze = quant.latents.row(i);
        let e = quant.quantized.row(i);
        for ((g, a), b) in grad.row_mut(k).iter_mut().zip(ze).zip(e) {
            *g -= 2.0 * (a - b) / n;
        }
    }
    grad
}

/// Gradient of the commitment loss with respect to `z_e`, with codes held
/// constant.
pub fn commitment_loss_grad(quant: &QuantizationResult, commitment_cost: f64) -> Matrix {
    let n = quant.latents.rows().max(1) as f64;
    let mut g = quant
        .latents
        .sub(&quant.quantized)
        .expect("quantization keeps shapes aligned");
    g.scale_in_place(2.0 * commitment_cost / n);
    g
}

/// Decoder input whose forward value is `z_q` and whose backward pass copies
/// the decoder-input gradient onto `z_e` unchanged.
#[derive(Clone, Debug)]
pub struct StraightThrough {
    value: Matrix,
}

pub fn straight_through(z_e: &Matrix, z_q: &Matrix) -> Result<StraightThrough> {
    check_pair(z_e, z_q, "straight_through")?;
    Ok(StraightThrough { value: z_q.clone() })
}

impl StraightThrough {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    /// Identity Jacobian through the quantizer.
    pub fn backward(&self, decoder_input_grad: &Matrix) -> Result<Matrix> {
        check_pair(&self.value, decoder_input_grad, "straight_through backward")?;
        Ok(decoder_input_grad.clone())
    }
}

/// Mean squared error over all entries: the negative unit-variance Gaussian
/// log-likelihood up to constants.
pub fn reconstruction_loss(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    check_pair(x, x_hat, "reconstruction_loss")?;
    let count = x.as_slice().len().max(1) as f64;
    Ok(x.as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / count)
}

/// Gradient of [`reconstruction_loss`] with respect to `x_hat`.
pub fn reconstruction_grad(x: &Matrix, x_hat: &Matrix) -> Result<Matrix> {
    check_pair(x, x_hat, "reconstruction_grad")?;
    let count = x.as_slice().len().max(1) as f64;
    let mut g = x_hat.sub(x)?;
    g.scale_in_place(2.0 / count);
    Ok(g)
}
