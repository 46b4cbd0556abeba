//! Binary checkpoints of a training run.
//!
//! Layout: an 8-byte magic, a little-endian `u32` version, the training
//! config as `key = value` text, then the body: model weights, optimizer
//! moments, generator positions and the epoch history. All numbers are
//! little-endian; floats are IEEE-754 doubles. A trailing FNV-1a hash of
//! everything before it detects corruption.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{LossBreakdown, VqRimModel};
use crate::nn::{Activation, Dense, FeedForwardNet};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::pipeline::{EpochRecord, Phase, TrainConfig, Trainer};
use crate::rim::Discriminator;
use crate::rng::RngState;
use crate::vq::Codebook;

pub const MAGIC: &[u8; 8] = b"VQRIMCKP";
pub const VERSION: u32 = 1;

/// A resumable snapshot of a [`Trainer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: VqRimModel,
    pub epoch: usize,
    pub pretrain_optimizer: OptimizerState,
    pub finetune_optimizer: OptimizerState,
    pub shuffle_rng: RngState,
    pub dropout_rng: RngState,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut model = t.model.clone();
        model.clear_caches();
        Self {
            config: t.config.clone(),
            model,
            epoch: t.epoch,
            pretrain_optimizer: t.pretrain_optimizer.clone(),
            finetune_optimizer: t.finetune_optimizer.clone(),
            shuffle_rng: RngState::capture(&t.shuffle_rng),
            dropout_rng: RngState::capture(&t.dropout_rng),
            history: t.history.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            config: self.config,
            model: self.model,
            epoch: self.epoch,
            shuffle_rng: self.shuffle_rng.restore(),
            dropout_rng: self.dropout_rng.restore(),
            pretrain_optimizer: self.pretrain_optimizer,
            finetune_optimizer: self.finetune_optimizer,
            history: self.history,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config.to_text().as_bytes());
        w.usize(self.epoch);
        write_model(&mut w, &self.model);
        write_optimizer(&mut w, &self.pretrain_optimizer);
        write_optimizer(&mut w, &self.finetune_optimizer);
        write_rng(&mut w, &self.shuffle_rng);
        write_rng(&mut w, &self.dropout_rng);
        w.usize(self.history.len());
        for rec in &self.history {
            w.usize(rec.epoch);
            w.u8(match rec.phase {
                Phase::Pretrain => 0,
                Phase::Finetune => 1,
            });
            let l = &rec.loss;
            for v in [
                l.reconstruction,
                l.codebook,
                l.commitment,
                l.marginal_entropy,
                l.conditional_entropy,
                l.penalty,
                l.total,
            ] {
                w.f64(v);
            }
        }
        let hash = fnv1a(&w.0);
        w.u64(hash);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing checkpoint header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 20 {
            return Err(corrupt("file is truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let text = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| corrupt("config is not UTF-8"))?;
        let config = TrainConfig::from_text(&text)?;
        let epoch = r.usize()?;
        let model = read_model(&mut r)?;
        let pretrain_optimizer = read_optimizer(&mut r)?;
        let finetune_optimizer = read_optimizer(&mut r)?;
        let shuffle_rng = read_rng(&mut r)?;
        let dropout_rng = read_rng(&mut r)?;
        let n = r.len_prefix(8 + 1 + 7 * 8)?;
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            let epoch = r.usize()?;
            let phase = match r.u8()? {
                0 => Phase::Pretrain,
                1 => Phase::Finetune,
                t => return Err(corrupt(&format!("unknown phase tag {t}"))),
            };
            let mut v = [0.0; 7];
            for x in &mut v {
                *x = r.f64()?;
            }
            history.push(EpochRecord {
                epoch,
                phase,
                loss: LossBreakdown {
                    reconstruction: v[0],
                    codebook: v[1],
                    commitment: v[2],
                    marginal_entropy: v[3],
                    conditional_entropy: v[4],
                    penalty: v[5],
                    total: v[6],
                },
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after the last record"));
        }
        Ok(Self {
            config,
            model,
            epoch,
            pretrain_optimizer,
            finetune_optimizer,
            shuffle_rng,
            dropout_rng,
            history,
        })
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptCheckpoint(msg.to_owned())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.usize(v.len());
        self.0.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length does not fit in memory"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count of items at least `item_size` bytes each, checked against the
    /// remaining input before anything is allocated.
    fn len_prefix(&mut self, item_size: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_size) > self.buf.len() - self.pos {
            return Err(corrupt("length prefix exceeds the file"));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len_prefix(1)?;
        self.take(n)
    }
}

fn write_matrix(w: &mut Writer, m: &Matrix) {
    w.usize(m.rows());
    w.usize(m.cols());
    w.f64s(m.as_slice());
}

fn read_matrix(r: &mut Reader) -> Result<Matrix> {
    let rows = r.usize()?;
    let cols = r.usize()?;
    let data = r.f64s()?;
    Matrix::from_vec(rows, cols, data).map_err(|_| corrupt("matrix shape disagrees with its data"))
}

fn write_net(w: &mut Writer, net: &FeedForwardNet) {
    w.f64(net.dropout_rate());
    w.usize(net.layers.len());
    for l in &net.layers {
        w.u8(l.activation.tag());
        write_matrix(w, &l.weight);
        w.f64s(&l.bias);
    }
}

fn read_net(r: &mut Reader) -> Result<FeedForwardNet> {
    let dropout = r.f64()?;
    let n = r.len_prefix(1)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u8()?;
        let activation = Activation::from_tag(tag).ok_or_else(|| corrupt(&format!("unknown activation tag {tag}")))?;
        let weight = read_matrix(r)?;
        let bias = r.f64s()?;
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
    }
    FeedForwardNet::from_layers(layers, dropout).map_err(|e| corrupt(&format!("invalid network: {e}")))
}

fn write_model(w: &mut Writer, m: &VqRimModel) {
    write_net(w, &m.encoder);
    write_net(w, &m.decoder);
    write_matrix(w, &m.codebook.vectors);
    w.usize(m.codebook.usage_counts.len());
    for &c in &m.codebook.usage_counts {
        w.u64(c);
    }
    write_net(w, &m.discriminator.net);
    w.u8(m.pretrained as u8);
    match m.latent_scale {
        Some(s) => {
            w.u8(1);
            w.f64(s);
        }
        None => w.u8(0),
    }
}

fn read_model(r: &mut Reader) -> Result<VqRimModel> {
    let encoder = read_net(r)?;
    let decoder = read_net(r)?;
    let mut codebook = Codebook::from_vectors(read_matrix(r)?);
    let n = r.len_prefix(8)?;
    if n != codebook.vectors.rows() {
        return Err(corrupt("codebook usage counts disagree with its size"));
    }
    codebook.usage_counts = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    let discriminator = Discriminator { net: read_net(r)? };
    let pretrained = r.u8()? != 0;
    let latent_scale = match r.u8()? {
        0 => None,
        _ => Some(r.f64()?),
    };
    if encoder.output_dim() != codebook.vectors.cols()
        || decoder.input_dim() != codebook.vectors.cols()
        || discriminator.net.input_dim() != codebook.vectors.cols()
    {
        return Err(corrupt("layer widths do not fit together"));
    }
    Ok(VqRimModel {
        encoder,
        decoder,
        codebook,
        discriminator,
        pretrained,
        latent_scale,
    })
}

fn write_optimizer(w: &mut Writer, o: &OptimizerState) {
    w.u8(match o.kind {
        OptimizerKind::Adam => 0,
        OptimizerKind::AdamW => 1,
    });
    for v in [o.learning_rate, o.weight_decay, o.beta1, o.beta2, o.epsilon] {
        w.f64(v);
    }
    w.u64(o.step_count);
    w.usize(o.first_moments.len());
    for (m, v) in o.first_moments.iter().zip(&o.second_moments) {
        w.f64s(m);
        w.f64s(v);
    }
}

fn read_optimizer(r: &mut Reader) -> Result<OptimizerState> {
    let kind = match r.u8()? {
        0 => OptimizerKind::Adam,
        1 => OptimizerKind::AdamW,
        t => return Err(corrupt(&format!("unknown optimizer tag {t}"))),
    };
    let mut o = OptimizerState::new(kind, r.f64()?, r.f64()?);
    o.beta1 = r.f64()?;
    o.beta2 = r.f64()?;
    o.epsilon = r.f64()?;
    o.step_count = r.u64()?;
    let n = r.len_prefix(16)?;
    for _ in 0..n {
        o.first_moments.push(r.f64s()?);
        o.second_moments.push(r.f64s()?);
    }
    Ok(o)
}

fn write_rng(w: &mut Writer, s: &RngState) {
    w.0.extend_from_slice(&s.seed);
    w.u64(s.stream);
    w.0.extend_from_slice(&s.word_pos.to_le_bytes());
}

fn read_rng(r: &mut Reader) -> Result<RngState> {
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    Ok(RngState {
        seed,
        stream,
        word_pos,
    })
}
