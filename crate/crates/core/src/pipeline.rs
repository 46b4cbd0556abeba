//! Two-phase training: plain-Adam pretraining of the VQ autoencoder, then
//! AdamW fine-tuning of the joint objective with the discriminator.

use log::{debug, info};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Architecture, LossBreakdown, Objective, RimWeights, VqRimModel};
use crate::optim::OptimizerState;
use crate::rim::{prune_inactive, ClusterAssignment};
use crate::rng::{permutation, substream, Rng, Stream};

/// `e × 10⁻⁵`, read with `e` as Euler's number.
pub const DEFAULT_FINETUNE_LR: f64 = std::f64::consts::E * 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    /// Decoupled AdamW decay used while fine-tuning.
    pub weight_decay: f64,
    pub num_embeddings: usize,
    pub latent_dim: usize,
    /// Width of the encoder's hidden layer (mirrored by the decoder); 0 for none.
    pub encoder_hidden: usize,
    /// Width of the discriminator's hidden layer; 0 for a linear head.
    pub discriminator_hidden: usize,
    pub commitment_cost: f64,
    pub dropout: f64,
    /// Weight of the conditional entropy.
    pub alpha: f64,
    /// Weight of the `(λ/2)·Σw²` penalty on the discriminator.
    pub lambda: f64,
    /// `K̃`, the number of discriminator outputs.
    pub num_classes: usize,
    /// Mass below which a class is pruned; defaults to `1/(2K̃)`.
    pub prune_threshold: Option<f64>,
    /// Train only the discriminator while fine-tuning.
    pub freeze_generator: bool,
    /// Allow fine-tuning a model that was never pretrained.
    pub cold_start: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 200,
            finetune_epochs: 200,
            batch_size: 32,
            pretrain_lr: 1e-4,
            finetune_lr: DEFAULT_FINETUNE_LR,
            weight_decay: 0.01,
            num_embeddings: 64,
            latent_dim: 64,
            encoder_hidden: 512,
            discriminator_hidden: 0,
            commitment_cost: 1.0,
            dropout: 0.5,
            alpha: 1.0,
            lambda: 0.0,
            num_classes: 64,
            prune_threshold: None,
            freeze_generator: false,
            cold_start: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("num_embeddings", self.num_embeddings),
            ("latent_dim", self.latent_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("pretrain_lr", self.pretrain_lr),
            ("finetune_lr", self.finetune_lr),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("weight_decay", self.weight_decay),
            ("commitment_cost", self.commitment_cost),
            ("alpha", self.alpha),
            ("lambda", self.lambda),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(eps) = self.prune_threshold {
            if !(0.0..1.0).contains(&eps) {
                return Err(Error::Config(format!("prune_threshold {eps} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn prune_threshold(&self) -> f64 {
        self.prune_threshold
            .unwrap_or(1.0 / (2.0 * self.num_classes as f64))
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        let hidden = |w: usize| if w == 0 { vec![] } else { vec![w] };
        Architecture {
            input_dim,
            encoder_hidden: hidden(self.encoder_hidden),
            latent_dim: self.latent_dim,
            num_embeddings: self.num_embeddings,
            num_classes: self.num_classes,
            discriminator_hidden: hidden(self.discriminator_hidden),
            dropout: self.dropout,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.finetune_epochs
    }

    fn pretrain_objective(&self) -> Objective {
        Objective {
            commitment_cost: self.commitment_cost,
            rim: None,
        }
    }

    fn finetune_objective(&self) -> Objective {
        Objective {
            commitment_cost: self.commitment_cost,
            rim: Some(RimWeights {
                alpha: self.alpha,
                lambda: self.lambda,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrain => "pretraining",
            Self::Finetune => "fine-tuning",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Batch-averaged loss terms.
    pub loss: LossBreakdown,
}

/// Resumable training state. Epochs `0..pretrain_epochs` pretrain; the
/// remaining epochs fine-tune.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: VqRimModel,
    pub epoch: usize,
    pub shuffle_rng: Rng,
    pub dropout_rng: Rng,
    pub pretrain_optimizer: OptimizerState,
    pub finetune_optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
}

fn check_data(data: &Matrix, input_dim: Option<usize>) -> Result<()> {
    if data.rows() == 0 || data.cols() == 0 {
        return Err(Error::Input("dataset is empty".into()));
    }
    if let Some(d) = input_dim {
        if data.cols() != d {
            return Err(Error::Input(format!(
                "dataset has {} features, model expects {d}",
                data.cols()
            )));
        }
    }
    if !data.is_finite() {
        return Err(Error::Input("dataset contains non-finite values".into()));
    }
    Ok(())
}

impl Trainer {
    pub fn new(input_dim: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = substream(config.seed, Stream::Init);
        let model = VqRimModel::new(&config.architecture(input_dim), &mut init_rng)?;
        Ok(Self::with_model(model, config, 0))
    }

    /// Wraps an existing model, starting the schedule at `epoch`.
    pub fn with_model(model: VqRimModel, config: TrainConfig, epoch: usize) -> Self {
        Self {
            shuffle_rng: substream(config.seed, Stream::Shuffle),
            dropout_rng: substream(config.seed, Stream::Dropout),
            pretrain_optimizer: OptimizerState::adam(config.pretrain_lr),
            finetune_optimizer: OptimizerState::adamw(config.finetune_lr, config.weight_decay),
            model,
            epoch,
            history: Vec::new(),
            config,
        }
    }

    pub fn phase(&self) -> Phase {
        if self.epoch < self.config.pretrain_epochs {
            Phase::Pretrain
        } else {
            Phase::Finetune
        }
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    /// One pass over shuffled minibatches.
    pub fn train_epoch(&mut self, data: &Matrix) -> Result<LossBreakdown> {
        check_data(data, Some(self.model.input_dim()))?;
        let phase = self.phase();
        if phase == Phase::Finetune && !self.model.pretrained && !self.config.cold_start {
            return Err(Error::State(
                "fine-tuning requires a pretrained model (set cold_start to override)".into(),
            ));
        }
        let (objective, train_generator) = match phase {
            Phase::Pretrain => (self.config.pretrain_objective(), true),
            Phase::Finetune => (self.config.finetune_objective(), !self.config.freeze_generator),
        };
        if phase == Phase::Finetune {
            self.model.calibrate_latent_scale(data)?;
        }
        let order = permutation(data.rows(), &mut self.shuffle_rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch = data.select_rows(idx);
            let (loss, grads) =
                self.model
                    .loss_and_gradients(&batch, &objective, Some(&mut self.dropout_rng))?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: phase.name(),
                    epoch: self.epoch,
                    batch: b,
                });
            }
            let optimizer = match phase {
                Phase::Pretrain => &mut self.pretrain_optimizer,
                Phase::Finetune => &mut self.finetune_optimizer,
            };
            let mut params = self.model.param_refs(&grads, train_generator);
            optimizer.step(&mut params)?;
            accumulate(&mut sum, &loss);
            batches += 1;
        }
        self.model.clear_caches();
        let mean = scale(&sum, 1.0 / batches as f64);
        debug!("{} epoch {}: {:?}", phase.name(), self.epoch, mean);
        self.history.push(EpochRecord {
            epoch: self.epoch,
            phase,
            loss: mean,
        });
        self.epoch += 1;
        if phase == Phase::Pretrain && self.epoch == self.config.pretrain_epochs {
            self.model.pretrained = true;
        }
        Ok(mean)
    }

    /// Trains until the global epoch counter reaches `epoch` (capped at the
    /// end of the schedule).
    pub fn run_until(&mut self, data: &Matrix, epoch: usize) -> Result<()> {
        let stop = epoch.min(self.config.total_epochs());
        if self.config.pretrain_epochs == 0 && self.epoch == 0 {
            // nothing to pretrain: the generator is used as initialized
            self.model.pretrained = true;
        }
        while self.epoch < stop {
            self.train_epoch(data)?;
        }
        Ok(())
    }

    pub fn run(&mut self, data: &Matrix) -> Result<()> {
        self.run_until(data, self.config.total_epochs())
    }

    /// Final soft assignments with inactive classes pruned.
    pub fn assignment(&mut self, data: &Matrix) -> Result<ClusterAssignment> {
        check_data(data, Some(self.model.input_dim()))?;
        let mut assign = self.model.assign(data)?;
        let k = prune_inactive(&mut assign, self.config.prune_threshold())?;
        info!(
            "{k} active classes of {}, {} codes in use",
            self.config.num_classes,
            self.model.codebook.active_codes()
        );
        Ok(assign)
    }
}

fn accumulate(sum: &mut LossBreakdown, x: &LossBreakdown) {
    sum.reconstruction += x.reconstruction;
    sum.codebook += x.codebook;
    sum.commitment += x.commitment;
    sum.marginal_entropy += x.marginal_entropy;
    sum.conditional_entropy += x.conditional_entropy;
    sum.penalty += x.penalty;
    sum.total += x.total;
}

fn scale(x: &LossBreakdown, s: f64) -> LossBreakdown {
    LossBreakdown {
        reconstruction: x.reconstruction * s,
        codebook: x.codebook * s,
        commitment: x.commitment * s,
        marginal_entropy: x.marginal_entropy * s,
        conditional_entropy: x.conditional_entropy * s,
        penalty: x.penalty * s,
        total: x.total * s,
    }
}

/// Pretrains the VQ autoencoder on `data`. The discriminator is untouched.
pub fn pretrain(data: &Matrix, config: &TrainConfig) -> Result<VqRimModel> {
    check_data(data, None)?;
    let mut cfg = config.clone();
    cfg.finetune_epochs = 0;
    let mut trainer = Trainer::new(data.cols(), cfg)?;
    trainer.run(data)?;
    trainer.model.pretrained = true;
    trainer.model.quantize(data)?;
    Ok(trainer.model)
}

/// Fine-tunes the joint objective and returns the pruned assignment.
pub fn finetune(
    model: VqRimModel,
    data: &Matrix,
    config: &TrainConfig,
) -> Result<(VqRimModel, ClusterAssignment)> {
    check_data(data, Some(model.input_dim()))?;
    config.validate()?;
    let mut trainer = Trainer::with_model(model, config.clone(), config.pretrain_epochs);
    trainer.run(data)?;
    let assign = trainer.assignment(data)?;
    Ok((trainer.model, assign))
}

/// Pretraining followed by fine-tuning from one seed.
pub fn fit(data: &Matrix, config: &TrainConfig) -> Result<(VqRimModel, ClusterAssignment)> {
    check_data(data, None)?;
    let mut trainer = Trainer::new(data.cols(), config.clone())?;
    trainer.run(data)?;
    let assign = trainer.assignment(data)?;
    Ok((trainer.model, assign))
}
