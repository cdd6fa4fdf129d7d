//! Classifier-based generative metrics: accuracy, FID, diversity, multimodality.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::Ratio;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::scalar::Scalar;
use crate::seqvae::SeqVae;

/// Diagonal shrinkage added to rank-deficient covariances.
pub const FID_SHRINKAGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub samples_per_class: usize,
    pub eval_length: usize,
    pub repetitions: usize,
    pub diversity_pairs: usize,
    pub multimodality_pairs_per_class: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            samples_per_class: 100,
            eval_length: 60,
            repetitions: 20,
            diversity_pairs: 200,
            multimodality_pairs_per_class: 20,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("samples_per_class", self.samples_per_class),
            ("eval_length", self.eval_length),
            ("repetitions", self.repetitions),
            ("diversity_pairs", self.diversity_pairs),
            ("multimodality_pairs_per_class", self.multimodality_pairs_per_class),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be at least 1")));
            }
        }
        if self.samples_per_class < 2 {
            return Err(Error::validation("samples_per_class must be at least 2 for multimodality"));
        }
        Ok(())
    }
}

/// Mean and normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub ci95: f64,
}

impl MetricStat {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, ci95: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            ci95: 1.96 * var.sqrt() / (n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: MetricStat,
    pub fid: MetricStat,
    pub diversity: MetricStat,
    pub multimodality: MetricStat,
    /// Classes evaluated, aligned with `per_class_accuracy`.
    pub classes: Vec<usize>,
    pub per_class_accuracy: Vec<f64>,
    pub repetitions: usize,
    /// Set when a single repetition makes every `ci95` zero by convention.
    pub ci_degenerate: bool,
}

/// Single-repetition scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScores {
    pub accuracy: f64,
    pub fid: f64,
    pub diversity: f64,
    pub multimodality: f64,
    pub per_class_accuracy: Vec<f64>,
}

/// Predicted labels and penultimate features of each motion.
pub fn extract_features<T: Scalar>(
    classifier: &Classifier<T>,
    motions: &[MotionSequence<T>],
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if motions.is_empty() {
        return Err(Error::validation("no motions to extract features from"));
    }
    if let Some(s) = motions.iter().find(|s| s.label >= classifier.num_classes()) {
        return Err(Error::validation(format!(
            "motion labelled {} but the classifier knows {} classes",
            s.label,
            classifier.num_classes()
        )));
    }
    let pred = classifier.predict(motions)?;
    let feats = pred
        .features
        .into_iter()
        .map(|f| f.into_iter().map(Scalar::to_f64_lossless).collect())
        .collect();
    Ok((pred.labels, feats))
}

/// Exact fraction of matching labels.
pub fn accuracy_ratio(predicted: &[usize], truth: &[usize]) -> Result<Ratio<u64>> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            context: "accuracy",
            expected: format!("{} labels", truth.len()),
            actual: format!("{} labels", predicted.len()),
        });
    }
    if truth.is_empty() {
        return Err(Error::validation("accuracy of an empty label set"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(Ratio::new(hits as u64, truth.len() as u64))
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    let r = accuracy_ratio(predicted, truth)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || d == 0 {
        return Err(Error::validation(format!("{what} feature set is empty")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            context: "feature matrix",
            expected: d.to_string(),
            actual: r.len().to_string(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

fn mean_and_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n as f64);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.transpose() * &centered / denom;
    (mean, cov)
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(symmetric(m), 1e-14, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = eigen(m)?;
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let s = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    let residual = (&s * &s - symmetric(m)).norm();
    let scale = m.norm().max(1.0);
    if residual > 1e-6 * scale {
        return Err(Error::Numeric(format!(
            "matrix square root residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(s)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigen(m)?.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let (a, b) = (to_matrix(real, "real")?, to_matrix(generated, "generated")?);
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            context: "fid",
            expected: a.ncols().to_string(),
            actual: b.ncols().to_string(),
        });
    }
    let (m1, mut s1) = mean_and_cov(&a);
    let (m2, mut s2) = mean_and_cov(&b);
    let d = s1.nrows();
    if min_eigenvalue(&s1)? <= FID_SHRINKAGE || min_eigenvalue(&s2)? <= FID_SHRINKAGE {
        s1 += DMatrix::identity(d, d) * FID_SHRINKAGE;
        s2 += DMatrix::identity(d, d) * FID_SHRINKAGE;
    }
    let r1 = sqrt_psd(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let cross: f64 = eigen(&inner)?.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let value = (&m1 - &m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    if value < -1e-6 {
        return Err(Error::Numeric(format!("fid evaluated to {value:.3e}")));
    }
    Ok(value.max(0.0))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance over `num_pairs` random pairs, or over all pairs when that
/// is no more than `num_pairs`.
fn mean_pair_distance<R: Rng + ?Sized>(rows: &[Vec<f64>], num_pairs: usize, rng: &mut R) -> f64 {
    let n = rows.len();
    let all = n * (n - 1) / 2;
    if num_pairs >= all {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += dist(&rows[i], &rows[j]);
            }
        }
        return s / all as f64;
    }
    let mut s = 0.0;
    for _ in 0..num_pairs {
        let p = sample(rng, n, 2);
        s += dist(&rows[p.index(0)], &rows[p.index(1)]);
    }
    s / num_pairs as f64
}

pub fn diversity<R: Rng + ?Sized>(features: &[Vec<f64>], num_pairs: usize, rng: &mut R) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::validation("diversity needs at least two feature rows"));
    }
    if num_pairs == 0 {
        return Err(Error::validation("diversity needs at least one pair"));
    }
    Ok(mean_pair_distance(features, num_pairs, rng))
}

/// Within-class [`diversity`] averaged over classes.
pub fn multimodality<R: Rng + ?Sized>(
    by_class: &BTreeMap<usize, Vec<Vec<f64>>>,
    pairs_per_class: usize,
    rng: &mut R,
) -> Result<f64> {
    if by_class.is_empty() {
        return Err(Error::validation("multimodality needs at least one class"));
    }
    if pairs_per_class == 0 {
        return Err(Error::validation("multimodality needs at least one pair per class"));
    }
    let mut total = 0.0;
    for (c, rows) in by_class {
        if rows.len() < 2 {
            return Err(Error::validation(format!(
                "class {c} has {} feature rows; multimodality needs at least two",
                rows.len()
            )));
        }
        total += mean_pair_distance(rows, pairs_per_class, rng);
    }
    Ok(total / by_class.len() as f64)
}

/// Scores of one labelled sample set against reference features.
pub fn score_samples<T: Scalar, R: Rng + ?Sized>(
    classifier: &Classifier<T>,
    samples: &[MotionSequence<T>],
    reference: &[Vec<f64>],
    protocol: &EvalProtocol,
    rng: &mut R,
) -> Result<SampleScores> {
    let (pred, feats) = extract_features(classifier, samples)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for ((f, &p), &t) in feats.iter().zip(&pred).zip(&truth) {
        by_class.entry(t).or_default().push(f.clone());
        let h = hits.entry(t).or_default();
        h.0 += usize::from(p == t);
        h.1 += 1;
    }
    Ok(SampleScores {
        accuracy: accuracy(&pred, &truth)?,
        fid: fid(reference, &feats)?,
        diversity: diversity(&feats, protocol.diversity_pairs, rng)?,
        multimodality: multimodality(&by_class, protocol.multimodality_pairs_per_class, rng)?,
        per_class_accuracy: hits.values().map(|&(h, n)| h as f64 / n as f64).collect(),
    })
}

fn repetition_seed(base: u64, rep: usize) -> u64 {
    base ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn aggregate(classes: Vec<usize>, reps: Vec<SampleScores>) -> EvalReport {
    let col = |f: fn(&SampleScores) -> f64| MetricStat::from_values(&reps.iter().map(f).collect::<Vec<_>>());
    let per_class_accuracy = (0..classes.len())
        .map(|i| reps.iter().map(|r| r.per_class_accuracy[i]).sum::<f64>() / reps.len() as f64)
        .collect();
    EvalReport {
        accuracy: col(|r| r.accuracy),
        fid: col(|r| r.fid),
        diversity: col(|r| r.diversity),
        multimodality: col(|r| r.multimodality),
        classes,
        per_class_accuracy,
        repetitions: reps.len(),
        ci_degenerate: reps.len() == 1,
    }
}

fn sorted_classes(classes: &[usize]) -> Result<Vec<usize>> {
    let mut c = classes.to_vec();
    c.sort_unstable();
    c.dedup();
    if c.is_empty() {
        return Err(Error::validation("no classes to evaluate"));
    }
    Ok(c)
}

/// Generate `samples_per_class` motions per class for every repetition and
/// score them against `reference` features. Repetitions run in parallel with
/// per-repetition seeds; results do not depend on the thread count.
pub fn evaluate<T: Scalar>(
    model: &SeqVae<T>,
    classifier: &Classifier<T>,
    protocol: &EvalProtocol,
    seen_classes: &[usize],
    reference: &[Vec<f64>],
) -> Result<EvalReport> {
    protocol.validate()?;
    if classifier.num_classes() != model.num_classes() {
        return Err(Error::validation(format!(
            "classifier has {} classes, model has {}",
            classifier.num_classes(),
            model.num_classes()
        )));
    }
    let classes = sorted_classes(seen_classes)?;
    let labels: Vec<usize> = classes
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, protocol.samples_per_class))
        .collect();
    let reps = (0..protocol.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(repetition_seed(protocol.seed, rep));
            let samples = model.generate_batch(&labels, protocol.eval_length, &mut rng)?;
            score_samples(classifier, &samples, reference, protocol, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(classes, reps))
}

/// Generative accuracy of every class in `classes` from `n` samples each.
pub fn class_accuracies<T: Scalar, R: Rng + ?Sized>(
    model: &SeqVae<T>,
    classifier: &Classifier<T>,
    classes: &[usize],
    n: usize,
    length: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::validation("need at least one sample per class"));
    }
    let labels: Vec<usize> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, n)).collect();
    let samples = model.generate_batch(&labels, length, rng)?;
    let (pred, _) = extract_features(classifier, &samples)?;
    Ok(pred
        .chunks(n)
        .zip(classes)
        .map(|(p, &c)| p.iter().filter(|&&x| x == c).count() as f64 / n as f64)
        .collect())
}

/// Scores real data as if it were generated: each repetition draws
/// `samples_per_class` motions per class with replacement.
pub fn evaluate_ground_truth<T: Scalar>(
    classifier: &Classifier<T>,
    data: &[MotionSequence<T>],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    let classes = sorted_classes(&data.iter().map(|s| s.label).collect::<Vec<_>>())?;
    let (_, reference) = extract_features(classifier, data)?;
    let reps = (0..protocol.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(repetition_seed(protocol.seed, rep));
            let mut picked = Vec::new();
            for &c in &classes {
                let members: Vec<&MotionSequence<T>> = data.iter().filter(|s| s.label == c).collect();
                for _ in 0..protocol.samples_per_class {
                    picked.push(members[rng.random_range(0..members.len())].clone());
                }
            }
            score_samples(classifier, &picked, &reference, protocol, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(classes, reps))
}
