//! GRU action classifier used for the auxiliary loss and for evaluation.
//!
//! Features are the final top-layer GRU state; logits are an affine map of
//! the features. Once frozen, the parameters can no longer be trained.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::batch::bucket_by_length;
use crate::checkpoint::{check_scalar, export_params, import_params, NamedTensor, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::motion::{Dataset, MotionSequence, FRAME_DIM};
use crate::nn::{Bind, GruStack, Linear};
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::seqvae::frame_batches;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of each class held out for the accuracy check.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            hidden: 32,
            epochs: 40,
            lr: 3e-3,
            batch_size: 16,
            holdout: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Scalar> {
    num_classes: usize,
    params: ParamStore<T>,
    gru: GruStack,
    head: Linear,
    frozen: bool,
    heldout_accuracy: Option<f64>,
}

/// Output of [`Classifier::predict`], in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub labels: Vec<usize>,
    pub features: Vec<Vec<T>>,
    pub logits: Vec<Vec<T>>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(num_classes: usize, layers: usize, hidden: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 || layers == 0 || hidden == 0 {
            return Err(Error::validation(format!(
                "classifier needs >= 2 classes and positive sizes (classes {num_classes}, layers {layers}, hidden {hidden})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let gru = GruStack::new(&mut params, "classifier.gru", FRAME_DIM, hidden, layers, &mut rng);
        let head = Linear::new(&mut params, "classifier.head", hidden, num_classes, &mut rng);
        Ok(Self {
            num_classes,
            params,
            gru,
            head,
            frozen: false,
            heldout_accuracy: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.gru.hidden()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn heldout_accuracy(&self) -> Option<f64> {
        self.heldout_accuracy
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// `(features, logits)` for per-step `B × FRAME_DIM` inputs. A frozen
    /// classifier always enters the graph as constants.
    pub fn forward_graph(&self, g: &mut Graph<T>, steps: &[Var], mode: Bind) -> Result<(Var, Var)> {
        let mode = if self.frozen { Bind::Frozen } else { mode };
        for &s in steps {
            if g.value(s).cols() != FRAME_DIM {
                return Err(Error::Dimension {
                    context: "classifier input",
                    expected: FRAME_DIM.to_string(),
                    actual: g.value(s).cols().to_string(),
                });
            }
        }
        let tops = self.gru.run(g, &self.params, steps, mode)?;
        let features = *tops.last().expect("non-empty steps");
        let logits = self.head.forward(g, &self.params, features, mode)?;
        Ok((features, logits))
    }

    fn forward_batch(&self, g: &mut Graph<T>, batch: &[&MotionSequence<T>], mode: Bind) -> Result<(Var, Var)> {
        let steps: Vec<Var> = frame_batches(batch)?
            .into_iter()
            .map(|x| g.constant(x))
            .collect();
        self.forward_graph(g, &steps, mode)
    }

    /// Argmax labels, features and logits per sequence.
    pub fn predict(&self, seqs: &[MotionSequence<T>]) -> Result<Prediction<T>> {
        let n = seqs.len();
        let lengths: Vec<usize> = seqs.iter().map(MotionSequence::len).collect();
        let order: Vec<usize> = (0..n).collect();
        let mut features = vec![Vec::new(); n];
        let mut logits = vec![Vec::new(); n];
        for bucket in bucket_by_length(&order, &lengths, 256) {
            let batch: Vec<&MotionSequence<T>> = bucket.iter().map(|&i| &seqs[i]).collect();
            let mut g = Graph::new();
            let (f, l) = self.forward_batch(&mut g, &batch, Bind::Frozen)?;
            for (r, &i) in bucket.iter().enumerate() {
                features[i] = g.value(f).row(r).to_vec();
                logits[i] = g.value(l).row(r).to_vec();
            }
        }
        let labels = logits.iter().map(|l| argmax(l)).collect();
        Ok(Prediction {
            labels,
            features,
            logits,
        })
    }

    /// Cross-entropy training; returns the mean loss per epoch.
    pub fn train(&mut self, data: &[MotionSequence<T>], cfg: &ClassifierConfig) -> Result<Vec<f64>> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if data.is_empty() {
            return Err(Error::validation("classifier training set is empty"));
        }
        if let Some(s) = data.iter().find(|s| s.label >= self.num_classes) {
            return Err(Error::validation(format!("label {} out of range", s.label)));
        }
        let mut opt = AdamW::new(
            &self.params,
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC1A5_51F1);
        let lengths: Vec<usize> = data.iter().map(MotionSequence::len).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let mut batches = bucket_by_length(&order, &lengths, cfg.batch_size);
            batches.shuffle(&mut rng);
            let mut total = 0.0;
            for bucket in batches {
                let batch: Vec<&MotionSequence<T>> = bucket.iter().map(|&i| &data[i]).collect();
                let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
                let mut g = Graph::new();
                let (_, logits) = self.forward_batch(&mut g, &batch, Bind::Train)?;
                let ce = g.cross_entropy(logits, &labels)?;
                let loss = g.scale(ce, T::one() / T::lit(batch.len() as f64));
                let value = g.value(ce).item().to_f64_lossless();
                if !value.is_finite() {
                    return Err(Error::Numeric("classifier loss is not finite".into()));
                }
                total += value;
                let grads = g.backward(loss)?;
                let grads = grads.for_store(&self.params);
                opt.step(&mut self.params, &grads)?;
            }
            curve.push(total / data.len() as f64);
        }
        Ok(curve)
    }

    pub fn to_file(&self) -> ClassifierFile {
        ClassifierFile {
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.to_string(),
            num_classes: self.num_classes,
            layers: self.gru.layers.len(),
            hidden: self.gru.hidden(),
            frozen: self.frozen,
            heldout_accuracy: self.heldout_accuracy,
            params: export_params(&self.params),
        }
    }

    pub fn from_file(f: &ClassifierFile) -> Result<Self> {
        check_scalar::<T>(&f.scalar)?;
        let mut c = Self::new(f.num_classes, f.layers, f.hidden, 0)?;
        import_params(&mut c.params, &f.params)?;
        c.frozen = f.frozen;
        c.heldout_accuracy = f.heldout_accuracy;
        Ok(c)
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub version: u32,
    pub scalar: String,
    pub num_classes: usize,
    pub layers: usize,
    pub hidden: usize,
    pub frozen: bool,
    pub heldout_accuracy: Option<f64>,
    pub params: Vec<NamedTensor>,
}

impl ClassifierFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Train on a stratified split of `dataset`, record held-out accuracy, freeze.
pub fn pretrain_classifier<T: Scalar>(dataset: &Dataset<T>, cfg: &ClassifierConfig) -> Result<Classifier<T>> {
    let present = dataset.count_per_class().iter().filter(|&&c| c > 0).count();
    if dataset.num_classes() < 2 || present < 2 {
        return Err(Error::validation("classifier pretraining needs at least two populated classes"));
    }
    let (train, held_out) = dataset.stratified_split(cfg.holdout, cfg.seed);
    let mut clf = Classifier::new(dataset.num_classes(), cfg.layers, cfg.hidden, cfg.seed)?;
    clf.train(&train, cfg)?;
    if !held_out.is_empty() {
        let pred = clf.predict(&held_out)?;
        let correct = pred
            .labels
            .iter()
            .zip(&held_out)
            .filter(|(p, s)| **p == s.label)
            .count();
        clf.heldout_accuracy = Some(correct as f64 / held_out.len() as f64);
    }
    clf.freeze();
    Ok(clf)
}
