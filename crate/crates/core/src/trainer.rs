//! Training loop and the task-by-task continual runner.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::batch::bucket_by_length;
use crate::body::Skeleton;
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::losses::{aux_node, reconstruction_node, total_loss, vertex_node, LossBreakdown, LossParts, DEFAULT_LAMBDA_AUX, DEFAULT_LAMBDA_LATENT};
use crate::metrics::{class_accuracies, evaluate, extract_features, EvalProtocol, EvalReport};
use crate::motion::{Dataset, MotionSequence, TaskSchedule};
use crate::nn::Bind;
use crate::optim::{AdamW, AdamWConfig};
use crate::replay::{build_real_replay, build_replay_set, mix, per_class_count, replay_counts, MixedTrainingSet, ReplayConfig, ReplaySource};
use crate::scalar::Scalar;
use crate::seqvae::{frame_batches, ModelConfig, SeqVae};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
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
    /// `None` trains every task on its real data only.
    pub replay: Option<ReplayConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self {
            lr: opt.lr,
            epochs_per_task: 5000,
            batch_size: 32,
            lambda_latent: DEFAULT_LAMBDA_LATENT,
            lambda_aux: DEFAULT_LAMBDA_AUX,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            adam_eps: opt.eps,
            seed: 0,
            replay: Some(ReplayConfig::default()),
        }
    }
}

impl TrainConfig {
    /// Small-model settings that finish in minutes on a CPU.
    pub fn desk() -> Self {
        Self {
            lr: 2e-3,
            epochs_per_task: 100,
            ..Self::default()
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        if self.epochs_per_task == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs_per_task and batch_size must be at least 1"));
        }
        if !(self.lambda_latent >= 0.0 && self.lambda_aux >= 0.0) {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        if let Some(r) = &self.replay {
            r.validate()?;
        }
        Ok(())
    }
}

/// What a batch loss needs besides the model and data.
#[derive(Clone, Copy)]
pub struct LossContext<'a, T: Scalar> {
    pub skeleton: &'a Arc<Skeleton<T>>,
    /// Required when `lambda_aux > 0`.
    pub classifier: Option<&'a Classifier<T>>,
    pub lambda_latent: f64,
    pub lambda_aux: f64,
}

/// Per-sample mean loss of an equal-length batch, built on `g`. `eps` is the
/// `B × latent` reparameterization noise.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &SeqVae<T>,
    ctx: &LossContext<'_, T>,
    batch: &[&MotionSequence<T>],
    eps: Tensor<T>,
) -> Result<(Var, LossBreakdown)> {
    let b = batch.len();
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let (mean, log_std) = model.encode_graph(g, batch, Bind::Train)?;
    let z = SeqVae::reparameterize_graph(g, mean, log_std, eps)?;
    let frames = frame_batches(batch)?;
    let recon = model.decode_graph(g, z, &labels, frames.len(), Bind::Train)?;
    let targets: Vec<Var> = frames.into_iter().map(|f| g.constant(f)).collect();
    let target_vertices = targets
        .iter()
        .map(|&t| g.fk(t, Arc::clone(ctx.skeleton)))
        .collect::<Result<Vec<_>>>()?;

    let vertex = vertex_node(g, &target_vertices, &recon, ctx.skeleton)?;
    let reconstruction = reconstruction_node(g, &targets, &recon)?;
    let (mu_a, ls_a) = model.class_modes_graph(g, &labels, Bind::Train)?;
    let latent = g.kl_diag(mean, log_std, mu_a, ls_a)?;

    let mut total = g.add(vertex, reconstruction)?;
    let lat_w = g.scale(latent, T::lit(ctx.lambda_latent));
    total = g.add(total, lat_w)?;
    let mut aux_value = 0.0;
    if ctx.lambda_aux > 0.0 {
        let clf = ctx
            .classifier
            .ok_or_else(|| Error::validation("lambda_aux > 0 needs a classifier"))?;
        if clf.num_classes() != model.num_classes() {
            return Err(Error::validation(format!(
                "classifier has {} classes, model has {}",
                clf.num_classes(),
                model.num_classes()
            )));
        }
        let aux = aux_node(g, clf, &recon, &labels)?;
        aux_value = g.value(aux).item().to_f64_lossless();
        let aux_w = g.scale(aux, T::lit(ctx.lambda_aux));
        total = g.add(total, aux_w)?;
    }
    let loss = g.scale(total, T::one() / T::lit(b as f64));
    let per = |v: Var| g.value(v).item().to_f64_lossless() / b as f64;
    let parts = LossParts {
        vertex: per(vertex),
        reconstruction: per(reconstruction),
        latent: per(latent),
        aux: aux_value / b as f64,
    };
    Ok((loss, total_loss(parts, ctx.lambda_latent, ctx.lambda_aux)))
}

/// Standard-normal noise for a batch.
pub fn sample_eps<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, latent: usize) -> Tensor<T> {
    let data = (0..rows * latent)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(rows, latent, data).expect("sized by construction")
}

/// A fresh optimizer over all model parameters; class modes are not decayed.
pub fn new_optimizer<T: Scalar>(model: &SeqVae<T>, cfg: &TrainConfig) -> Result<AdamW<T>> {
    Ok(AdamW::new(model.params(), cfg.optimizer())?.without_decay(&model.gmm_params()))
}

/// One forward, backward and optimizer update; returns the pre-update loss.
pub fn train_step<T: Scalar>(
    model: &mut SeqVae<T>,
    opt: &mut AdamW<T>,
    ctx: &LossContext<'_, T>,
    batch: &[&MotionSequence<T>],
    eps: Tensor<T>,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let (loss, parts) = batch_loss(&mut g, model, ctx, batch, eps)?;
    if !parts.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {:?}", parts)));
    }
    let grads = g.backward(loss)?.for_store(model.params());
    opt.step(model.params_mut(), &grads)?;
    Ok(parts)
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    acc.vertex += w * b.vertex;
    acc.reconstruction += w * b.reconstruction;
    acc.latent += w * b.latent;
    acc.aux += w * b.aux;
    acc.total += w * b.total;
}

/// Train on one mixed set; returns the sample-weighted mean loss per epoch.
pub fn train_task<T: Scalar>(
    model: &mut SeqVae<T>,
    data: &MixedTrainingSet<T>,
    ctx: &LossContext<'_, T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let seqs = data.sequences();
    let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let latent = model.config().latent;
    let mut opt = new_optimizer(model, cfg)?;
    let mut curve = Vec::with_capacity(cfg.epochs_per_task);
    for epoch in 0..cfg.epochs_per_task {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(rng);
        let mut batches = bucket_by_length(&order, &lengths, cfg.batch_size);
        batches.shuffle(rng);
        let mut mean = LossBreakdown {
            lambda_latent: cfg.lambda_latent,
            lambda_aux: cfg.lambda_aux,
            ..Default::default()
        };
        for idx in batches {
            let batch: Vec<&MotionSequence<T>> = idx.iter().map(|&i| seqs[i]).collect();
            let eps = sample_eps(rng, batch.len(), latent);
            let parts = train_step(model, &mut opt, ctx, &batch, eps)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            accumulate(&mut mean, &parts, batch.len() as f64 / seqs.len() as f64);
        }
        curve.push(mean);
    }
    Ok(curve)
}

/// Replay bookkeeping of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayAudit {
    pub source: ReplaySource,
    /// Hash of the generator snapshot the samples came from.
    pub generator_hash: Option<String>,
    pub counts: BTreeMap<usize, usize>,
    pub length: usize,
    pub total: usize,
    /// Distinct labels present in the replay set.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub classes: Vec<usize>,
    /// All classes seen once this task is done.
    pub seen_classes: Vec<usize>,
    pub real_samples: usize,
    pub replay: Option<ReplayAudit>,
    pub loss_curve: Vec<LossBreakdown>,
    /// Parameter hash after training this task.
    pub snapshot_hash: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub class_names: Vec<String>,
    pub schedule: TaskSchedule,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: EvalProtocol,
    pub tasks: Vec<TaskRecord>,
    /// Row `k`: generative accuracy of every class after task `k`.
    pub accuracy_matrix: Vec<Vec<f64>>,
}

impl RunLog {
    /// Final-task accuracy averaged over `classes`.
    pub fn final_accuracy(&self, classes: &[usize]) -> Option<f64> {
        let row = self.accuracy_matrix.last()?;
        if classes.is_empty() {
            return None;
        }
        Some(classes.iter().map(|&c| row[c]).sum::<f64>() / classes.len() as f64)
    }

    /// Accuracy of `class` after each task.
    pub fn class_curve(&self, class: usize) -> Vec<f64> {
        self.accuracy_matrix.iter().map(|r| r[class]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything needed to run a schedule.
pub struct RunSetup<'a, T: Scalar> {
    pub dataset: &'a Dataset<T>,
    pub schedule: &'a TaskSchedule,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: EvalProtocol,
    pub classifier: &'a Classifier<T>,
}

/// State handed to the per-task observer.
pub struct TaskEnd<'a, T: Scalar> {
    pub task: usize,
    pub model: &'a SeqVae<T>,
    pub record: &'a TaskRecord,
}

pub struct RunOutput<T: Scalar> {
    pub log: RunLog,
    pub model: SeqVae<T>,
}

fn derived_seed(seed: u64, purpose: u64, task: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.set_word_pos(task as u128 * 16);
    rng.random()
}

/// The single-task schedule that trains on every class at once.
pub fn offline_schedule<T: Scalar>(dataset: &Dataset<T>) -> TaskSchedule {
    let n = dataset.num_classes();
    TaskSchedule {
        tasks: vec![(0..n).collect()],
        classes_per_task: n,
    }
}

fn validate_setup<T: Scalar>(s: &RunSetup<'_, T>) -> Result<()> {
    s.train.validate()?;
    s.protocol.validate()?;
    s.model.validate()?;
    s.dataset.validate()?;
    let n = s.dataset.num_classes();
    if s.model.num_classes != n || s.classifier.num_classes() != n {
        return Err(Error::validation(format!(
            "dataset has {n} classes, model {} and classifier {}",
            s.model.num_classes,
            s.classifier.num_classes()
        )));
    }
    if s.schedule.tasks.is_empty() {
        return Err(Error::validation("schedule has no tasks"));
    }
    let mut all = s.schedule.all_classes();
    all.sort_unstable();
    let len = all.len();
    all.dedup();
    if all.len() != len || all.iter().any(|&c| c >= n) {
        return Err(Error::validation("schedule classes must be distinct dataset classes"));
    }
    let counts = s.dataset.count_per_class();
    if let Some(&c) = all.iter().find(|&&c| counts[c] == 0) {
        return Err(Error::validation(format!("class {c} has no samples")));
    }
    Ok(())
}

/// Train the tasks of `setup.schedule` in order, replaying earlier classes
/// from the previous task's snapshot, evaluating after every task.
pub fn run_cl2gen<T: Scalar>(
    setup: &RunSetup<'_, T>,
    observer: &mut dyn FnMut(&TaskEnd<'_, T>) -> Result<()>,
) -> Result<RunOutput<T>> {
    validate_setup(setup)?;
    let cfg = &setup.train;
    let skeleton = Arc::new(setup.dataset.skeleton.clone());
    let ctx = LossContext {
        skeleton: &skeleton,
        classifier: Some(setup.classifier),
        lambda_latent: cfg.lambda_latent,
        lambda_aux: cfg.lambda_aux,
    };
    let all_classes: Vec<usize> = (0..setup.dataset.num_classes()).collect();
    let mut model = SeqVae::new(setup.model.clone(), cfg.seed)?;
    let mut log = RunLog {
        class_names: setup.dataset.class_names.clone(),
        schedule: setup.schedule.clone(),
        model: setup.model.clone(),
        train: cfg.clone(),
        protocol: setup.protocol.clone(),
        tasks: Vec::new(),
        accuracy_matrix: Vec::new(),
    };

    for (k, classes) in setup.schedule.tasks.iter().enumerate() {
        let seen_before = setup.schedule.seen_before(k);
        let real = setup.dataset.of_classes(classes);
        let (replay, audit) = match (&cfg.replay, seen_before.is_empty()) {
            (Some(rc), false) => {
                let counts = replay_counts(&seen_before, per_class_count(&real, classes), rc.ratio)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, 2, k));
                let (set, generator_hash) = match rc.source {
                    ReplaySource::Generated => {
                        let snapshot = model.clone();
                        let hash = snapshot.hash();
                        let expected = &log.tasks[k - 1].snapshot_hash;
                        if &hash != expected {
                            return Err(Error::Numeric(format!(
                                "replay generator {hash} differs from the task {} snapshot {expected}",
                                k - 1
                            )));
                        }
                        let set = build_replay_set(&snapshot, &seen_before, &counts, rc.replay_length, &mut rng)?;
                        (set, Some(hash))
                    }
                    ReplaySource::Real => {
                        let pool = setup.dataset.of_classes(&seen_before);
                        (build_real_replay(&pool, &seen_before, &counts, rc.replay_length, &mut rng)?, None)
                    }
                };
                let mut labels: Vec<usize> = set.iter().map(|s| s.label).collect();
                labels.dedup();
                let audit = ReplayAudit {
                    source: rc.source,
                    generator_hash,
                    total: set.len(),
                    counts,
                    length: rc.replay_length,
                    labels,
                };
                (set, Some(audit))
            }
            _ => (Vec::new(), None),
        };
        let real_samples = real.len();
        let mixed = mix(real, replay, k);

        let last_good = log
            .tasks
            .last()
            .map_or("the initial model".to_string(), |r| format!("the task {} snapshot {}", r.task, r.snapshot_hash));
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, 1, k));
        let loss_curve = train_task(&mut model, &mixed, &ctx, cfg, &mut rng)
            .map_err(|e| Error::Numeric(format!("task {k}: {e}; last good checkpoint is {last_good}")))?;
        drop(mixed);

        let seen: Vec<usize> = setup.schedule.tasks[..=k].iter().flatten().copied().collect();
        let reference = extract_features(setup.classifier, &setup.dataset.of_classes(&seen))?.1;
        let protocol = EvalProtocol {
            seed: derived_seed(setup.protocol.seed, 3, k),
            ..setup.protocol.clone()
        };
        let report = evaluate(&model, setup.classifier, &protocol, &seen, &reference)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(setup.protocol.seed, 4, k));
        log.accuracy_matrix.push(class_accuracies(
            &model,
            setup.classifier,
            &all_classes,
            setup.protocol.samples_per_class,
            setup.protocol.eval_length,
            &mut rng,
        )?);
        log.tasks.push(TaskRecord {
            task: k,
            classes: classes.clone(),
            seen_classes: seen,
            real_samples,
            replay: audit,
            loss_curve,
            snapshot_hash: model.hash(),
            report,
        });
        observer(&TaskEnd {
            task: k,
            model: &model,
            record: log.tasks.last().expect("just pushed"),
        })?;
    }
    Ok(RunOutput { log, model })
}

/// Per-epoch loss curve as CSV.
pub fn loss_csv(curve: &[LossBreakdown]) -> String {
    let mut out = String::from("epoch,vertex,recon,latent,aux,total\n");
    for (e, b) in curve.iter().enumerate() {
        out.push_str(&format!(
            "{e},{},{},{},{},{}\n",
            b.vertex, b.reconstruction, b.latent, b.aux, b.total
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_generate, SynthSpec};

    fn tiny() -> (Dataset<f64>, SeqVae<f64>, Classifier<f64>) {
        let ds = synth_generate::<f64>(&SynthSpec::new(2, 2, (10, 10), 0), &Skeleton::smpl()).unwrap();
        let cfg = ModelConfig {
            num_classes: 2,
            layers: 1,
            hidden: 6,
            latent: 3,
        };
        (ds, SeqVae::new(cfg, 1).unwrap(), Classifier::new(2, 1, 5, 2).unwrap())
    }

    #[test]
    fn aux_weight_zero_drops_the_term() {
        let (ds, model, clf) = tiny();
        let skel = Arc::new(ds.skeleton.clone());
        let batch: Vec<&MotionSequence<f64>> = ds.sequences[..1].iter().collect();
        let eps = Tensor::zeros(1, 3);
        let mut ctx = LossContext {
            skeleton: &skel,
            classifier: Some(&clf),
            lambda_latent: 0.1,
            lambda_aux: 0.0,
        };
        let (_, without) = batch_loss(&mut Graph::new(), &model, &ctx, &batch, eps.clone()).unwrap();
        assert_eq!(without.aux, 0.0);
        assert_eq!(without.total, without.vertex + without.reconstruction + 0.1 * without.latent);
        ctx.lambda_aux = 0.5;
        let (_, with) = batch_loss(&mut Graph::new(), &model, &ctx, &batch, eps).unwrap();
        assert!(with.aux > 0.0);
        assert!((with.total - without.total - 0.5 * with.aux).abs() < 1e-9);
        ctx.classifier = None;
        assert!(batch_loss(&mut Graph::new(), &model, &ctx, &batch, Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn batch_loss_is_the_per_sample_mean() {
        let (ds, model, clf) = tiny();
        let skel = Arc::new(ds.skeleton.clone());
        let ctx = LossContext {
            skeleton: &skel,
            classifier: Some(&clf),
            lambda_latent: 0.3,
            lambda_aux: 0.2,
        };
        let eps = sample_eps::<f64, _>(&mut ChaCha8Rng::seed_from_u64(0), 2, 3);
        let both: Vec<&MotionSequence<f64>> = ds.sequences[..2].iter().collect();
        let (_, joint) = batch_loss(&mut Graph::new(), &model, &ctx, &both, eps.clone()).unwrap();
        let single = |i: usize| {
            let e = Tensor::row_vector(eps.row(i).to_vec());
            batch_loss(&mut Graph::new(), &model, &ctx, &both[i..=i], e).unwrap().1
        };
        let (a, b) = (single(0), single(1));
        assert!((joint.total - 0.5 * (a.total + b.total)).abs() < 1e-9);
    }

    #[test]
    fn single_steps_usually_descend() {
        let (ds, _, clf) = tiny();
        let skel = Arc::new(ds.skeleton.clone());
        let ctx = LossContext {
            skeleton: &skel,
            classifier: Some(&clf),
            lambda_latent: DEFAULT_LAMBDA_LATENT,
            lambda_aux: DEFAULT_LAMBDA_AUX,
        };
        let cfg = TrainConfig {
            lr: 1e-4,
            ..TrainConfig::default()
        };
        let mut down = 0;
        for seed in 0..20 {
            let mut model = SeqVae::<f64>::new(tiny().1.config().clone(), seed).unwrap();
            let mut opt = new_optimizer(&model, &cfg).unwrap();
            let batch = [&ds.sequences[0]];
            let eps = sample_eps::<f64, _>(&mut ChaCha8Rng::seed_from_u64(seed), 1, 3);
            let before = train_step(&mut model, &mut opt, &ctx, &batch, eps.clone()).unwrap().total;
            let after = batch_loss(&mut Graph::new(), &model, &ctx, &batch, eps).unwrap().1.total;
            down += usize::from(after < before);
        }
        assert!(down >= 18, "{down} of 20 seeds descended");
    }

    fn small_run(seed: u64, replay: Option<ReplayConfig>) -> RunOutput<f64> {
        let ds = synth_generate::<f64>(&SynthSpec::new(4, 5, (12, 14), 3), &Skeleton::smpl()).unwrap();
        let clf = Classifier::new(4, 1, 8, 0).unwrap();
        let schedule = crate::motion::split_tasks(&ds, 2, None).unwrap();
        let setup = RunSetup {
            dataset: &ds,
            schedule: &schedule,
            model: ModelConfig {
                num_classes: 4,
                layers: 1,
                hidden: 8,
                latent: 4,
            },
            train: TrainConfig {
                lr: 1e-3,
                epochs_per_task: 2,
                seed,
                replay: replay.map(|r| ReplayConfig { replay_length: 12, ..r }),
                ..TrainConfig::default()
            },
            protocol: EvalProtocol {
                samples_per_class: 3,
                eval_length: 12,
                repetitions: 2,
                ..Default::default()
            },
            classifier: &clf,
        };
        let mut hashes = Vec::new();
        let out = run_cl2gen(&setup, &mut |end| {
            assert_eq!(end.model.hash(), end.record.snapshot_hash);
            hashes.push(end.record.snapshot_hash.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(hashes.len(), 2);
        out
    }

    #[test]
    fn runs_are_deterministic_and_audited() {
        let a = small_run(5, Some(ReplayConfig::default()));
        let b = small_run(5, Some(ReplayConfig::default()));
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.to_json().unwrap(), b.log.to_json().unwrap());
        assert_eq!(a.log.accuracy_matrix.len(), 2);
        assert!(a.log.accuracy_matrix.iter().all(|r| r.len() == 4));

        let audit = a.log.tasks[1].replay.as_ref().unwrap();
        assert_eq!(audit.generator_hash.as_deref(), Some(a.log.tasks[0].snapshot_hash.as_str()));
        assert_eq!(audit.counts.values().copied().collect::<Vec<_>>(), vec![1, 1]);
        assert!(audit.labels.iter().all(|l| [0, 1].contains(l)));
        assert!(a.log.tasks[0].replay.is_none());

        let c = small_run(6, None);
        assert!(c.log.tasks[1].replay.is_none());
        assert_ne!(a.log.tasks[0].snapshot_hash, c.log.tasks[0].snapshot_hash);
    }

    #[test]
    fn class_modes_move_only_for_trained_classes() {
        let (ds, _, clf) = tiny();
        let skel = Arc::new(ds.skeleton.clone());
        let cfg = ModelConfig {
            num_classes: 3,
            layers: 1,
            hidden: 6,
            latent: 3,
        };
        let mut model = SeqVae::<f64>::new(cfg, 4).unwrap();
        let before: Vec<Vec<f64>> = (0..3).map(|a| model.class_mean(a).to_vec()).collect();
        let data = mix(ds.of_classes(&[0, 1]), Vec::new(), 0);
        let ctx = LossContext {
            skeleton: &skel,
            classifier: Some(&clf),
            lambda_latent: 1.0,
            lambda_aux: 0.0,
        };
        let tc = TrainConfig {
            lr: 1e-2,
            epochs_per_task: 3,
            ..TrainConfig::default()
        };
        train_task(&mut model, &data, &ctx, &tc, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_ne!(model.class_mean(0), &before[0][..]);
        assert_ne!(model.class_mean(1), &before[1][..]);
        assert_eq!(model.class_mean(2), &before[2][..]);
        assert_eq!(model.class_log_std(2), &[0.0; 3][..]);
    }

    #[test]
    fn loss_csv_has_header_and_rows() {
        let csv = loss_csv(&[LossBreakdown::default(); 2]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,vertex,recon,latent,aux,total"));
    }
}
