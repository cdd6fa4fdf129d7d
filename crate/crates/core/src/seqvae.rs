//! Conditional temporal VAE with one trainable Gaussian mode per class.
//!
//! The encoder reads `frame ⧺ onehot(label) ⧺ t/T` per step and maps the
//! final top-layer state to a posterior mean and log-std. The decoder reads
//! `z ⧺ onehot(label) ⧺ t/T` at every step and emits one frame per step.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::checkpoint::{check_scalar, export_params, import_params, param_hash, NamedTensor, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, FRAME_DIM};
use crate::nn::{map_affine, Bind, GruStack, Linear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bounds applied to every log-std.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub layers: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl ModelConfig {
    /// 8-layer, 256-unit GRUs with a 256-dim latent.
    pub fn full(num_classes: usize) -> Self {
        Self {
            num_classes,
            layers: 8,
            hidden: 256,
            latent: 256,
        }
    }

    /// 2-layer, 32-unit GRUs with a 16-dim latent.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            num_classes,
            layers: 2,
            hidden: 32,
            latent: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.layers == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::validation(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn encoder_input(&self) -> usize {
        FRAME_DIM + self.num_classes + 1
    }

    pub fn decoder_input(&self) -> usize {
        self.latent + self.num_classes + 1
    }
}

/// Per-class latent means and log-stds, one row per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmmBank {
    pub mean: ParamId,
    pub log_std: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSource {
    Encoded,
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample<T> {
    pub z: Vec<T>,
    pub source: LatentSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqVae<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: GruStack,
    enc_mean: Linear,
    enc_log_std: Linear,
    decoder: GruStack,
    dec_head: Linear,
    gmm: GmmBank,
}

/// Step inputs `[x_t ⧺ onehot(label) ⧺ t/T]` for a batch of equal-length rows.
pub(crate) fn conditioning<T: Scalar>(labels: &[usize], num_classes: usize, t: usize, len: usize) -> Tensor<T> {
    let mut c = Tensor::zeros(labels.len(), num_classes + 1);
    let time = T::lit((t + 1) as f64 / len as f64);
    for (r, &a) in labels.iter().enumerate() {
        c.set(r, a, T::one());
        c.set(r, num_classes, time);
    }
    c
}

/// Per-step `B × FRAME_DIM` frame tensors of equal-length sequences.
pub(crate) fn frame_batches<T: Scalar>(batch: &[&MotionSequence<T>]) -> Result<Vec<Tensor<T>>> {
    let len = check_equal_lengths(batch)?;
    Ok((0..len)
        .map(|t| {
            let mut x = Tensor::zeros(batch.len(), FRAME_DIM);
            for (r, s) in batch.iter().enumerate() {
                let f = &s.frames[t];
                let row = x.row_mut(r);
                for (j, rot) in f.joint_rot6d.iter().enumerate() {
                    row[j * 6..j * 6 + 6].copy_from_slice(rot);
                }
                row[FRAME_DIM - 3..].copy_from_slice(&f.root_disp);
            }
            x
        })
        .collect())
}

pub(crate) fn check_equal_lengths<T: Scalar>(batch: &[&MotionSequence<T>]) -> Result<usize> {
    let len = batch
        .first()
        .map(|s| s.len())
        .ok_or_else(|| Error::validation("empty batch"))?;
    if len == 0 {
        return Err(Error::validation("sequences need at least one frame"));
    }
    if let Some(s) = batch.iter().find(|s| s.len() != len) {
        return Err(Error::validation(format!(
            "batch mixes sequence lengths {len} and {}",
            s.len()
        )));
    }
    Ok(len)
}

impl<T: Scalar> SeqVae<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = GruStack::new(&mut params, "encoder", config.encoder_input(), config.hidden, config.layers, &mut rng);
        let enc_mean = Linear::new(&mut params, "encoder.mean", config.hidden, config.latent, &mut rng);
        let enc_log_std = Linear::new(&mut params, "encoder.log_std", config.hidden, config.latent, &mut rng);
        let decoder = GruStack::new(&mut params, "decoder", config.decoder_input(), config.hidden, config.layers, &mut rng);
        let dec_head = Linear::new(&mut params, "decoder.head", config.hidden, FRAME_DIM, &mut rng);
        let normal = Normal::new(0.0, 0.1f64.sqrt()).expect("valid std");
        let means = (0..config.num_classes * config.latent)
            .map(|_| T::lit(normal.sample(&mut rng)))
            .collect();
        let gmm = GmmBank {
            mean: params.add("gmm.mean", Tensor::from_vec(config.num_classes, config.latent, means)?),
            log_std: params.add("gmm.log_std", Tensor::zeros(config.num_classes, config.latent)),
        };
        Ok(Self {
            config,
            params,
            encoder,
            enc_mean,
            enc_log_std,
            decoder,
            dec_head,
            gmm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn gmm(&self) -> &GmmBank {
        &self.gmm
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Ids of the class-mode parameters.
    pub fn gmm_params(&self) -> [ParamId; 2] {
        [self.gmm.mean, self.gmm.log_std]
    }

    pub fn class_mean(&self, a: usize) -> &[T] {
        self.params.get(self.gmm.mean).row(a)
    }

    pub fn class_log_std(&self, a: usize) -> &[T] {
        self.params.get(self.gmm.log_std).row(a)
    }

    /// Zero the weights of both encoder heads (their biases are kept).
    pub fn zero_encoder_head_weights(&mut self) {
        for id in [self.enc_mean.w, self.enc_log_std.w] {
            self.params.get_mut(id).data_mut().fill(T::zero());
        }
    }

    pub fn hash(&self) -> String {
        param_hash(&self.params)
    }

    fn check_label(&self, a: usize) -> Result<()> {
        if a >= self.config.num_classes {
            return Err(Error::validation(format!(
                "class {a} out of range for a model with {} classes",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Posterior mean and (clamped) log-std nodes for a batch of equal-length sequences.
    pub fn encode_graph(
        &self,
        g: &mut Graph<T>,
        batch: &[&MotionSequence<T>],
        mode: Bind,
    ) -> Result<(Var, Var)> {
        for s in batch {
            self.check_label(s.label)?;
        }
        let frames = frame_batches(batch)?;
        let len = frames.len();
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let inputs: Vec<Var> = frames
            .iter()
            .enumerate()
            .map(|(t, x)| {
                let cond = conditioning(&labels, self.config.num_classes, t, len);
                g.constant(Tensor::hcat(&[x, &cond]).expect("equal rows"))
            })
            .collect();
        let tops = self.encoder.run(g, &self.params, &inputs, mode)?;
        let last = *tops.last().expect("len >= 1");
        let mean = self.enc_mean.forward(g, &self.params, last, mode)?;
        let raw = self.enc_log_std.forward(g, &self.params, last, mode)?;
        let log_std = g.clamp(raw, T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        Ok((mean, log_std))
    }

    /// `z = mean + exp(log_std) ⊙ eps` as graph nodes.
    pub fn reparameterize_graph(g: &mut Graph<T>, mean: Var, log_std: Var, eps: Tensor<T>) -> Result<Var> {
        let std = g.exp(log_std);
        let e = g.constant(eps);
        let noise = g.mul(std, e)?;
        g.add(mean, noise)
    }

    /// One `B × FRAME_DIM` node per decoded step.
    pub fn decode_graph(&self, g: &mut Graph<T>, z: Var, labels: &[usize], len: usize, mode: Bind) -> Result<Vec<Var>> {
        if len == 0 {
            return Err(Error::validation("decode length must be at least 1"));
        }
        for &a in labels {
            self.check_label(a)?;
        }
        if g.value(z).shape() != (labels.len(), self.config.latent) {
            return Err(Error::Dimension {
                context: "decode",
                expected: format!("{}×{}", labels.len(), self.config.latent),
                actual: format!("{:?}", g.value(z).shape()),
            });
        }
        let inputs = (0..len)
            .map(|t| {
                let cond = g.constant(conditioning(labels, self.config.num_classes, t, len));
                g.concat(&[z, cond])
            })
            .collect::<Result<Vec<_>>>()?;
        let tops = self.decoder.run(g, &self.params, &inputs, mode)?;
        map_affine(g, &self.params, &self.dec_head, &tops, mode)
    }

    /// Class-mode mean and clamped log-std rows for `labels`.
    pub fn class_modes_graph(&self, g: &mut Graph<T>, labels: &[usize], mode: Bind) -> Result<(Var, Var)> {
        let (mean, log_std) = match mode {
            Bind::Train => (g.param(&self.params, self.gmm.mean), g.param(&self.params, self.gmm.log_std)),
            Bind::Frozen => (g.frozen(&self.params, self.gmm.mean), g.frozen(&self.params, self.gmm.log_std)),
        };
        let mu = g.gather_rows(mean, labels)?;
        let ls = g.gather_rows(log_std, labels)?;
        let ls = g.clamp(ls, T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        Ok((mu, ls))
    }

    /// Posterior `(mean, log_std)` of one sequence.
    pub fn encode(&self, seq: &MotionSequence<T>) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = Graph::new();
        let (m, s) = self.encode_graph(&mut g, &[seq], Bind::Frozen)?;
        Ok((g.value(m).data().to_vec(), g.value(s).data().to_vec()))
    }

    /// Decode a latent into `len` frames labelled `a`.
    pub fn decode(&self, z: &LatentSample<T>, a: usize, len: usize) -> Result<MotionSequence<T>> {
        self.check_label(a)?;
        if z.z.len() != self.config.latent {
            return Err(Error::Dimension {
                context: "decode",
                expected: self.config.latent.to_string(),
                actual: z.z.len().to_string(),
            });
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::row_vector(z.z.clone()));
        let steps = self.decode_graph(&mut g, zv, &[a], len, Bind::Frozen)?;
        let rows: Vec<Vec<T>> = steps.iter().map(|&v| g.value(v).row(0).to_vec()).collect();
        MotionSequence::from_vectors(&rows, a)
    }

    pub fn sample_class_latent<R: Rng + ?Sized>(&self, a: usize, rng: &mut R) -> Result<LatentSample<T>> {
        self.check_label(a)?;
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        let z = self
            .class_mean(a)
            .iter()
            .zip(self.class_log_std(a))
            .map(|(&m, &ls)| {
                let e: f64 = StandardNormal.sample(rng);
                m + ls.max(lo).min(hi).exp() * T::lit(e)
            })
            .collect();
        Ok(LatentSample {
            z,
            source: LatentSource::Class(a),
        })
    }

    /// Sample the class mode of `a` and decode `len` frames.
    pub fn generate<R: Rng + ?Sized>(&self, a: usize, len: usize, rng: &mut R) -> Result<MotionSequence<T>> {
        let z = self.sample_class_latent(a, rng)?;
        self.decode(&z, a, len)
    }

    /// Batched [`SeqVae::generate`]; latents are drawn in label order.
    pub fn generate_batch<R: Rng + ?Sized>(&self, labels: &[usize], len: usize, rng: &mut R) -> Result<Vec<MotionSequence<T>>> {
        if labels.is_empty() {
            return Ok(Vec::new());
        }
        let mut z = Tensor::zeros(labels.len(), self.config.latent);
        for (r, &a) in labels.iter().enumerate() {
            z.row_mut(r).copy_from_slice(&self.sample_class_latent(a, rng)?.z);
        }
        let mut g = Graph::new();
        let zv = g.constant(z);
        let steps = self.decode_graph(&mut g, zv, labels, len, Bind::Frozen)?;
        labels
            .iter()
            .enumerate()
            .map(|(r, &a)| {
                let rows: Vec<Vec<T>> = steps.iter().map(|&v| g.value(v).row(r).to_vec()).collect();
                MotionSequence::from_vectors(&rows, a)
            })
            .collect()
    }

    pub fn to_checkpoint(&self, class_names: &[String], rng_state: Option<ChaCha8Rng>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.to_string(),
            config: self.config.clone(),
            class_names: class_names.to_vec(),
            rng_state,
            params: export_params(&self.params),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {}", ck.version)));
        }
        check_scalar::<T>(&ck.scalar)?;
        if ck.class_names.len() != ck.config.num_classes {
            return Err(Error::validation("class_names length differs from num_classes"));
        }
        let mut model = Self::new(ck.config.clone(), 0)?;
        import_params(&mut model.params, &ck.params)?;
        Ok(model)
    }
}

/// `z = mean + exp(log_std) ⊙ eps`.
pub fn reparameterize<T: Scalar>(mean: &[T], log_std: &[T], eps: &[T]) -> Result<LatentSample<T>> {
    if mean.len() != log_std.len() || mean.len() != eps.len() {
        return Err(Error::Dimension {
            context: "reparameterize",
            expected: format!("three vectors of length {}", mean.len()),
            actual: format!("{}, {}, {}", mean.len(), log_std.len(), eps.len()),
        });
    }
    Ok(LatentSample {
        z: mean
            .iter()
            .zip(log_std)
            .zip(eps)
            .map(|((&m, &s), &e)| m + s.exp() * e)
            .collect(),
        source: LatentSource::Encoded,
    })
}

/// Serialized generator: parameters, class names and the training RNG state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub scalar: String,
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub rng_state: Option<ChaCha8Rng>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
