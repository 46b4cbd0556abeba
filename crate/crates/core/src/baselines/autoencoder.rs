//! Continuous-latent feature extractors: a deterministic autoencoder and a
//! Gaussian VAE, built from the same layers as the VQ model.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, FeedForwardNet, NetGradients};
use crate::optim::OptimizerState;
use crate::pipeline::TrainConfig;
use crate::rng::{permutation, substream, Rng, Stream};
use crate::vq::{reconstruction_grad, reconstruction_loss};

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub latent_dim: usize,
    /// Hidden width of encoder and decoder; 0 gives purely linear maps.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self::from(&TrainConfig::default())
    }
}

/// Mirrors the pretraining half of a VQ-RIM configuration so extractors are
/// compared at equal capacity and budget.
impl From<&TrainConfig> for ExtractorConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            latent_dim: c.latent_dim,
            hidden: c.encoder_hidden,
            epochs: c.pretrain_epochs,
            batch_size: c.batch_size,
            learning_rate: c.pretrain_lr,
            dropout: c.dropout,
            seed: c.seed,
        }
    }
}

impl ExtractorConfig {
    fn validate(&self, x: &Matrix) -> Result<()> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Input("dataset is empty".into()));
        }
        if self.latent_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("latent_dim and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self, from: usize, to: usize) -> Vec<usize> {
        if self.hidden == 0 {
            vec![from, to]
        } else {
            vec![from, self.hidden, to]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

impl Autoencoder {
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.predict(x)
    }

    pub fn reconstruction_error(&self, x: &Matrix) -> Result<f64> {
        reconstruction_loss(x, &self.decoder.predict(&self.encode(x)?)?)
    }
}

fn for_each_batch(
    n: usize,
    cfg: &ExtractorConfig,
    mut step: impl FnMut(usize, &[usize]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut shuffle = substream(cfg.seed, Stream::Shuffle);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = permutation(n, &mut shuffle);
        let mut sum = 0.0;
        let mut count = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let loss = step(epoch, idx)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: "extractor training",
                    epoch,
                    batch: b,
                });
            }
            sum += loss;
            count += 1;
        }
        history.push(sum / count as f64);
    }
    Ok(history)
}

/// Trains a bottleneck autoencoder on mean squared reconstruction error.
pub fn train_ae(x: &Matrix, cfg: &ExtractorConfig) -> Result<Autoencoder> {
    cfg.validate(x)?;
    let d = x.cols();
    let mut init = substream(cfg.seed, Stream::Init);
    let mut encoder =
        FeedForwardNet::new(&cfg.widths(d, cfg.latent_dim), Activation::Relu, Activation::Linear, cfg.dropout, &mut init)?;
    let mut decoder =
        FeedForwardNet::new(&cfg.widths(cfg.latent_dim, d), Activation::Relu, Activation::Linear, cfg.dropout, &mut init)?;
    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let mut dropout = substream(cfg.seed, Stream::Dropout);
    let history = for_each_batch(x.rows(), cfg, |_, idx| {
        let batch = x.select_rows(idx);
        let z = encoder.forward(&batch, Some(&mut dropout))?;
        let x_hat = decoder.forward(&z, Some(&mut dropout))?;
        let loss = reconstruction_loss(&batch, &x_hat)?;
        let (dec_g, dz) = decoder.backward(&reconstruction_grad(&batch, &x_hat)?)?;
        let (enc_g, _) = encoder.backward(&dz)?;
        let mut params = encoder.param_refs(&enc_g, "encoder");
        params.extend(decoder.param_refs(&dec_g, "decoder"));
        opt.step(&mut params)?;
        Ok(loss)
    })?;
    encoder.clear_cache();
    decoder.clear_cache();
    Ok(Autoencoder {
        encoder,
        decoder,
        history,
    })
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` for one sample, from `μ` and `ln σ²`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VaeLoss {
    /// Batch mean of `½‖x − x̂‖²`, the unit-variance Gaussian negative
    /// log-likelihood up to a constant.
    pub reconstruction: f64,
    pub kl: f64,
    /// Negative ELBO.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    /// Emits `[μ | ln σ²]`.
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
    pub history: Vec<f64>,
}

impl Vae {
    pub fn new(input_dim: usize, cfg: &ExtractorConfig, rng: &mut Rng) -> Result<Self> {
        let encoder = FeedForwardNet::new(
            &cfg.widths(input_dim, 2 * cfg.latent_dim),
            Activation::Relu,
            Activation::Linear,
            cfg.dropout,
            rng,
        )?;
        let decoder = FeedForwardNet::new(
            &cfg.widths(cfg.latent_dim, input_dim),
            Activation::Relu,
            Activation::Linear,
            cfg.dropout,
            rng,
        )?;
        Ok(Self {
            encoder,
            decoder,
            history: Vec::new(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    /// Posterior means.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let out = self.encoder.predict(x)?;
        let l = self.latent_dim();
        Ok(Matrix::from_fn(x.rows(), l, |i, j| out[(i, j)]))
    }

    /// Negative ELBO at a fixed noise draw, without dropout.
    pub fn loss(&self, x: &Matrix, noise: &Matrix) -> Result<VaeLoss> {
        let out = self.encoder.predict(x)?;
        let z = self.sample(&out, noise)?;
        let x_hat = self.decoder.predict(&z)?;
        Ok(self.assemble(x, &out, &x_hat))
    }

    fn sample(&self, enc_out: &Matrix, noise: &Matrix) -> Result<Matrix> {
        let l = self.latent_dim();
        if noise.shape() != (enc_out.rows(), l) {
            return Err(Error::Shape(format!(
                "noise is {:?}, expected ({}, {l})",
                noise.shape(),
                enc_out.rows()
            )));
        }
        Ok(Matrix::from_fn(enc_out.rows(), l, |i, j| {
            enc_out[(i, j)] + (0.5 * enc_out[(i, l + j)]).exp() * noise[(i, j)]
        }))
    }

    fn assemble(&self, x: &Matrix, enc_out: &Matrix, x_hat: &Matrix) -> VaeLoss {
        let l = self.latent_dim();
        let n = x.rows() as f64;
        let reconstruction = 0.5 * x_hat.sub(x).expect("decoder output matches input").sum_of_squares() / n;
        let kl = enc_out
            .row_iter()
            .map(|r| kl_divergence(&r[..l], &r[l..]))
            .sum::<f64>()
            / n;
        VaeLoss {
            reconstruction,
            kl,
            total: reconstruction + kl,
        }
    }

    /// Reparameterized forward and backward pass.
    pub fn loss_and_gradients(
        &mut self,
        x: &Matrix,
        noise: &Matrix,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<(VaeLoss, NetGradients, NetGradients)> {
        let l = self.latent_dim();
        let n = x.rows() as f64;
        let out = self.encoder.forward(x, dropout_rng.as_deref_mut())?;
        let z = self.sample(&out, noise)?;
        let x_hat = self.decoder.forward(&z, dropout_rng)?;
        let loss = self.assemble(x, &out, &x_hat);
        let mut upstream = x_hat.sub(x)?;
        upstream.scale_in_place(1.0 / n);
        let (dec_g, dz) = self.decoder.backward(&upstream)?;
        let d_out = Matrix::from_fn(x.rows(), 2 * l, |i, j| {
            if j < l {
                dz[(i, j)] + out[(i, j)] / n
            } else {
                let k = j - l;
                let sigma = (0.5 * out[(i, j)]).exp();
                dz[(i, k)] * noise[(i, k)] * 0.5 * sigma + 0.5 * (sigma * sigma - 1.0) / n
            }
        });
        let (enc_g, _) = self.encoder.backward(&d_out)?;
        Ok((loss, enc_g, dec_g))
    }
}

/// Trains a diagonal-Gaussian VAE with a standard-normal prior.
pub fn train_vae(x: &Matrix, cfg: &ExtractorConfig) -> Result<Vae> {
    cfg.validate(x)?;
    let mut init = substream(cfg.seed, Stream::Init);
    let mut vae = Vae::new(x.cols(), cfg, &mut init)?;
    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let mut dropout = substream(cfg.seed, Stream::Dropout);
    let mut sampling = substream(cfg.seed, Stream::Sampling);
    let l = cfg.latent_dim;
    let history = for_each_batch(x.rows(), cfg, |_, idx| {
        let batch = x.select_rows(idx);
        let noise = Matrix::from_fn(idx.len(), l, |_, _| StandardNormal.sample(&mut sampling));
        let (loss, enc_g, dec_g) = vae.loss_and_gradients(&batch, &noise, Some(&mut dropout))?;
        let mut params = vae.encoder.param_refs(&enc_g, "encoder");
        params.extend(vae.decoder.param_refs(&dec_g, "decoder"));
        opt.step(&mut params)?;
        Ok(loss.total)
    })?;
    vae.encoder.clear_cache();
    vae.decoder.clear_cache();
    vae.history = history;
    Ok(vae)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_divergence(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        // σ = 2, μ = 0: ½(4 − 1 − ln 4)
        let v = kl_divergence(&[0.0], &[4f64.ln()]);
        assert!((v - 0.5 * (3.0 - 4f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let cfg = ExtractorConfig {
            latent_dim: 3,
            hidden: 5,
            dropout: 0.0,
            ..ExtractorConfig::default()
        };
        let mut rng = substream(11, Stream::Init);
        let vae = Vae::new(6, &cfg, &mut rng).unwrap();
        let x = Matrix::from_fn(4, 6, |_, _| StandardNormal.sample(&mut rng));
        let noise = Matrix::from_fn(4, 3, |_, _| StandardNormal.sample(&mut rng));
        let mut work = vae.clone();
        let (_, enc_g, dec_g) = work.loss_and_gradients(&x, &noise, None).unwrap();

        let mut probe = vae.clone();
        let report = check_gradient(
            |p| {
                probe.encoder.set_flat_parameters(p).unwrap();
                probe.loss(&x, &noise).unwrap().total
            },
            &vae.encoder.flat_parameters(),
            &enc_g.flatten(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");

        let mut probe = vae.clone();
        let report = check_gradient(
            |p| {
                probe.decoder.set_flat_parameters(p).unwrap();
                probe.loss(&x, &noise).unwrap().total
            },
            &vae.decoder.flat_parameters(),
            &dec_g.flatten(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn linear_autoencoder_with_enough_capacity_reconstructs() {
        // rank-2 data in 5 dimensions
        let mut rng = substream(2, Stream::Synthetic);
        let basis = Matrix::from_fn(2, 5, |_, _| StandardNormal.sample(&mut rng));
        let coef = Matrix::from_fn(100, 2, |_, _| StandardNormal.sample(&mut rng));
        let x = coef.matmul(&basis).unwrap();
        let cfg = ExtractorConfig {
            latent_dim: 2,
            hidden: 0,
            dropout: 0.0,
            epochs: 400,
            learning_rate: 1e-2,
            batch_size: 20,
            seed: 0,
        };
        let ae = train_ae(&x, &cfg).unwrap();
        let err = ae.reconstruction_error(&x).unwrap();
        let var = x.total_variance() / 5.0;
        assert!(err < 1e-3 * var, "err {err} var {var}");
        assert_eq!(ae.encode(&x).unwrap().shape(), (100, 2));
    }

    #[test]
    fn training_is_deterministic() {
        let x = Matrix::from_fn(20, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let cfg = ExtractorConfig {
            latent_dim: 2,
            hidden: 8,
            epochs: 3,
            batch_size: 8,
            ..ExtractorConfig::default()
        };
        assert_eq!(train_vae(&x, &cfg).unwrap(), train_vae(&x, &cfg).unwrap());
        assert_eq!(train_ae(&x, &cfg).unwrap(), train_ae(&x, &cfg).unwrap());
    }
}
