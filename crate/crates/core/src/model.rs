//! The VQ-RIM network: encoder, codebook, decoder, and a discriminator head
//! reading the encoder output.

use crate::error::{Error, Result};
use crate::linalg::{leading_std, Matrix};
use crate::nn::{Activation, FeedForwardNet, NetGradients};
use crate::optim::ParamRef;
use crate::rim::{self, ClusterAssignment, Discriminator, RimTerms};
use crate::rng::Rng;
use crate::vq::{self, Codebook, QuantizationResult};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub num_embeddings: usize,
    pub num_classes: usize,
    pub discriminator_hidden: Vec<usize>,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqRimModel {
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
    pub codebook: Codebook,
    pub discriminator: Discriminator,
    /// Set once the generator has been through pretraining.
    pub pretrained: bool,
    /// The discriminator reads `z_e / latent_scale`. Fixed once calibrated.
    pub latent_scale: Option<f64>,
}

/// Every term of the joint objective for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub codebook: f64,
    /// Already weighted by the commitment cost.
    pub commitment: f64,
    pub marginal_entropy: f64,
    pub conditional_entropy: f64,
    pub penalty: f64,
    /// Generator losses minus the regularized information objective.
    pub total: f64,
}

impl LossBreakdown {
    pub fn generator(&self) -> f64 {
        self.reconstruction + self.codebook + self.commitment
    }
}

/// Which terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub commitment_cost: f64,
    /// `None` during pretraining: the discriminator is not involved.
    pub rim: Option<RimWeights>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RimWeights {
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct ModelGradients {
    pub encoder: NetGradients,
    pub decoder: NetGradients,
    pub codebook: Matrix,
    pub discriminator: Option<NetGradients>,
}

impl VqRimModel {
    pub fn new(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        if arch.latent_dim >= arch.input_dim {
            return Err(Error::Config(format!(
                "latent dimension {} must be smaller than the input dimension {}",
                arch.latent_dim, arch.input_dim
            )));
        }
        let mut enc_widths = vec![arch.input_dim];
        enc_widths.extend_from_slice(&arch.encoder_hidden);
        enc_widths.push(arch.latent_dim);
        let dec_widths: Vec<usize> = enc_widths.iter().rev().copied().collect();
        let encoder = FeedForwardNet::new(&enc_widths, Activation::Relu, Activation::Linear, arch.dropout, rng)?;
        let codebook = Codebook::new(arch.num_embeddings, arch.latent_dim, rng)?;
        let decoder = FeedForwardNet::new(&dec_widths, Activation::Relu, Activation::Linear, arch.dropout, rng)?;
        let discriminator = Discriminator::new(
            arch.latent_dim,
            &arch.discriminator_hidden,
            arch.num_classes,
            arch.dropout,
            rng,
        )?;
        Ok(Self {
            encoder,
            decoder,
            codebook,
            discriminator,
            pretrained: false,
            latent_scale: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.discriminator.num_classes()
    }

    /// Encoder outputs `z_e` in inference mode.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.predict(x)
    }

    /// Decoded reconstruction of the quantized latents.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        let q = self.codebook.lookup(&self.encode(x)?)?;
        self.decoder.predict(&q.quantized)
    }

    /// Inference-mode quantization; refreshes codebook usage counts.
    pub fn quantize(&mut self, x: &Matrix) -> Result<QuantizationResult> {
        let z = self.encode(x)?;
        vq::quantize(&z, &mut self.codebook)
    }

    /// Standard deviation of the latents along their leading principal axis.
    pub fn latent_spread(&self, x: &Matrix) -> Result<f64> {
        leading_std(&self.encode(x)?)
    }

    /// Fixes the discriminator input scale from `x` if not yet set.
    pub fn calibrate_latent_scale(&mut self, x: &Matrix) -> Result<f64> {
        if let Some(s) = self.latent_scale {
            return Ok(s);
        }
        let spread = self.latent_spread(x)?;
        let s = if spread > 0.0 && spread.is_finite() { spread } else { 1.0 };
        self.latent_scale = Some(s);
        Ok(s)
    }

    fn discriminator_input(&self, z_e: &Matrix) -> Matrix {
        match self.latent_scale {
            Some(s) => z_e.scale(1.0 / s),
            None => z_e.clone(),
        }
    }

    /// Discriminator probabilities for inputs `x`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        rim::predict_proba(&self.discriminator, &self.discriminator_input(&self.encode(x)?))
    }

    /// Soft predictions of the discriminator plus nearest-code indices, all
    /// classes active.
    pub fn assign(&mut self, x: &Matrix) -> Result<ClusterAssignment> {
        let quant = self.quantize(x)?;
        let probs = rim::predict_proba(&self.discriminator, &self.discriminator_input(&quant.latents))?;
        Ok(ClusterAssignment::new(probs, quant.indices))
    }

    /// Inference-mode loss terms without gradients.
    pub fn evaluate(&self, x: &Matrix, objective: &Objective) -> Result<LossBreakdown> {
        let z_e = self.encode(x)?;
        let quant = self.codebook.lookup(&z_e)?;
        let x_hat = self.decoder.predict(&quant.quantized)?;
        let reconstruction = vq::reconstruction_loss(x, &x_hat)?;
        let vq_terms = vq::vq_losses(&z_e, &quant.quantized, objective.commitment_cost)?;
        let rim_terms = match objective.rim {
            Some(w) => {
                let probs = rim::predict_proba(&self.discriminator, &self.discriminator_input(&z_e))?;
                Some(rim::rim_objective(&probs, w.alpha, &self.discriminator.net, w.lambda))
            }
            None => None,
        };
        Ok(assemble(reconstruction, vq_terms, rim_terms))
    }

    /// Forward and backward pass over one batch. Dropout is active when
    /// `dropout_rng` is supplied.
    pub fn loss_and_gradients(
        &mut self,
        x: &Matrix,
        objective: &Objective,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<(LossBreakdown, ModelGradients)> {
        let z_e = self.encoder.forward(x, dropout_rng.as_deref_mut())?;
        let quant = self.codebook.lookup(&z_e)?;
        let passthrough = vq::straight_through(&z_e, &quant.quantized)?;
        let x_hat = self.decoder.forward(passthrough.value(), dropout_rng.as_deref_mut())?;

        let reconstruction = vq::reconstruction_loss(x, &x_hat)?;
        let vq_terms = vq::vq_losses(&z_e, &quant.quantized, objective.commitment_cost)?;

        let (decoder, decoder_input_grad) = self.decoder.backward(&vq::reconstruction_grad(x, &x_hat)?)?;
        let mut latent_grad = passthrough.backward(&decoder_input_grad)?;
        latent_grad.add_assign(&vq::commitment_loss_grad(&quant, objective.commitment_cost))?;
        let codebook = vq::codebook_loss_grad(&quant, self.codebook.num_embeddings());

        let (rim_terms, discriminator) = match objective.rim {
            Some(w) => {
                let input = self.discriminator_input(&z_e);
                let (terms, grads, dz) =
                    rim::rim_backward(&mut self.discriminator, &input, w.alpha, w.lambda, dropout_rng)?;
                let inv = self.latent_scale.map_or(1.0, |s| 1.0 / s);
                latent_grad.axpy(inv, &dz)?;
                (Some(terms), Some(grads))
            }
            None => (None, None),
        };
        let (encoder, _) = self.encoder.backward(&latent_grad)?;
        Ok((
            assemble(reconstruction, vq_terms, rim_terms),
            ModelGradients {
                encoder,
                decoder,
                codebook,
                discriminator,
            },
        ))
    }

    /// Parameter/gradient pairs in a fixed order: encoder, decoder, codebook,
    /// then (if present) discriminator. `generator` toggles the first three.
    pub fn param_refs<'a>(&'a mut self, grads: &'a ModelGradients, generator: bool) -> Vec<ParamRef<'a>> {
        let mut out = Vec::new();
        if generator {
            out.extend(self.encoder.param_refs(&grads.encoder, "encoder"));
            out.extend(self.decoder.param_refs(&grads.decoder, "decoder"));
            out.push(ParamRef {
                name: "codebook".into(),
                value: self.codebook.vectors.as_mut_slice(),
                grad: grads.codebook.as_slice(),
            });
        }
        if let Some(g) = &grads.discriminator {
            out.extend(self.discriminator.net.param_refs(g, "discriminator"));
        }
        out
    }

    pub fn clear_caches(&mut self) {
        self.encoder.clear_cache();
        self.decoder.clear_cache();
        self.discriminator.net.clear_cache();
    }
}

fn assemble(reconstruction: f64, vq_terms: vq::VqLosses, rim_terms: Option<RimTerms>) -> LossBreakdown {
    let rim_terms = rim_terms.unwrap_or(RimTerms {
        marginal_entropy: 0.0,
        conditional_entropy: 0.0,
        penalty: 0.0,
        objective: 0.0,
    });
    LossBreakdown {
        reconstruction,
        codebook: vq_terms.codebook,
        commitment: vq_terms.commitment,
        marginal_entropy: rim_terms.marginal_entropy,
        conditional_entropy: rim_terms.conditional_entropy,
        penalty: rim_terms.penalty,
        total: reconstruction + vq_terms.codebook + vq_terms.commitment - rim_terms.objective,
    }
}
