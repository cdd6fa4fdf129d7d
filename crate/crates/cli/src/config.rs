//! Flat key-value run configuration and the `--synth` mini-language.

use std::path::Path;

use cl2gen_core::classifier::ClassifierConfig;
use cl2gen_core::metrics::EvalProtocol;
use cl2gen_core::replay::{ReplayConfig, ReplaySource};
use cl2gen_core::seqvae::ModelConfig;
use cl2gen_core::synth::SynthSpec;
use cl2gen_core::trainer::TrainConfig;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every tunable of a run. Field names follow the library config types;
/// replay and evaluation seeds get a prefix where names would collide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub precision: Precision,

    pub layers: usize,
    pub hidden: usize,
    pub latent: usize,

    pub classes_per_task: usize,
    pub class_order: Option<Vec<usize>>,

    pub lr: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub lambda_latent: f64,
    pub lambda_aux: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,

    /// `"none"` or a fraction such as `"1/5"`.
    pub replay_ratio: String,
    pub replay_length: usize,
    pub replay_source: ReplaySource,

    pub samples_per_class: usize,
    pub eval_length: usize,
    pub repetitions: usize,
    pub diversity_pairs: usize,
    pub multimodality_pairs_per_class: usize,
    pub eval_seed: u64,

    pub classifier_layers: usize,
    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_batch_size: usize,
    pub classifier_holdout: f64,
    pub classifier_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::desk(0);
        let train = TrainConfig::desk();
        let replay = ReplayConfig::default();
        let eval = EvalProtocol::default();
        let clf = ClassifierConfig::default();
        Self {
            precision: Precision::F32,
            layers: model.layers,
            hidden: model.hidden,
            latent: model.latent,
            classes_per_task: 2,
            class_order: None,
            lr: train.lr,
            epochs_per_task: train.epochs_per_task,
            batch_size: train.batch_size,
            lambda_latent: train.lambda_latent,
            lambda_aux: train.lambda_aux,
            weight_decay: train.weight_decay,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.adam_eps,
            seed: train.seed,
            replay_ratio: replay.ratio.to_string(),
            replay_length: replay.replay_length,
            replay_source: replay.source,
            samples_per_class: eval.samples_per_class,
            eval_length: eval.eval_length,
            repetitions: eval.repetitions,
            diversity_pairs: eval.diversity_pairs,
            multimodality_pairs_per_class: eval.multimodality_pairs_per_class,
            eval_seed: eval.seed,
            classifier_layers: clf.layers,
            classifier_hidden: clf.hidden,
            classifier_epochs: clf.epochs,
            classifier_lr: clf.lr,
            classifier_batch_size: clf.batch_size,
            classifier_holdout: clf.holdout,
            classifier_seed: clf.seed,
        }
    }
}

/// Parse a fraction such as `1/5`, or a bare integer.
pub fn parse_ratio(text: &str) -> CliResult<Ratio<u64>> {
    let bad = || CliError::Config(format!("replay ratio `{text}` is not a fraction like 1/5"));
    let (n, d) = match text.trim().split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (text.trim(), "1"),
    };
    let n: u64 = n.parse().map_err(|_| bad())?;
    let d: u64 = d.parse().map_err(|_| bad())?;
    if d == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(n, d))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_classes,
            layers: self.layers,
            hidden: self.hidden,
            latent: self.latent,
        }
    }

    pub fn replay(&self) -> CliResult<Option<ReplayConfig>> {
        let r = self.replay_ratio.trim();
        if r.eq_ignore_ascii_case("none") || r == "0" {
            return Ok(None);
        }
        Ok(Some(ReplayConfig {
            ratio: parse_ratio(r)?,
            replay_length: self.replay_length,
            source: self.replay_source,
        }))
    }

    pub fn train(&self) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            lr: self.lr,
            epochs_per_task: self.epochs_per_task,
            batch_size: self.batch_size,
            lambda_latent: self.lambda_latent,
            lambda_aux: self.lambda_aux,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            replay: self.replay()?,
        })
    }

    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            samples_per_class: self.samples_per_class,
            eval_length: self.eval_length,
            repetitions: self.repetitions,
            diversity_pairs: self.diversity_pairs,
            multimodality_pairs_per_class: self.multimodality_pairs_per_class,
            seed: self.eval_seed,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            layers: self.classifier_layers,
            hidden: self.classifier_hidden,
            epochs: self.classifier_epochs,
            lr: self.classifier_lr,
            batch_size: self.classifier_batch_size,
            holdout: self.classifier_holdout,
            seed: self.classifier_seed,
        }
    }

    /// Check everything that can be checked without data.
    pub fn validate(&self) -> CliResult<()> {
        self.model(1).validate()?;
        self.train()?.validate()?;
        self.protocol().validate()?;
        if self.classes_per_task == 0 {
            return Err(CliError::Config("classes_per_task must be at least 1".into()));
        }
        let c = self.classifier();
        if c.layers == 0 || c.hidden == 0 || c.epochs == 0 || c.batch_size == 0 || !(c.lr > 0.0) {
            return Err(CliError::Config("classifier sizes, epochs and lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&c.holdout) {
            return Err(CliError::Config("classifier_holdout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `classes=4,per_class=50,seed=7[,min_len=..,max_len=..,noise=..,fps=..]`.
pub fn parse_synth(text: &str) -> CliResult<SynthSpec> {
    let mut spec = SynthSpec::new(4, 50, (60, 100), 0);
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("synth item `{item}` is not key=value")))?;
        let int = || {
            v.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("synth `{k}` needs an integer, got `{v}`")))
        };
        match k.trim() {
            "classes" => spec.num_classes = int()? as usize,
            "per_class" => spec.seqs_per_class = int()? as usize,
            "seed" => spec.seed = int()?,
            "min_len" => spec.t_range.0 = int()? as usize,
            "max_len" => spec.t_range.1 = int()? as usize,
            "fps" => spec.fps = int()? as u32,
            "noise" => {
                spec.noise = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("synth `noise` needs a number, got `{v}`")))?
            }
            other => return Err(CliError::Config(format!("unknown synth key `{other}`"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}
