//! Mixture replay: regenerate earlier classes and mix them with new real data.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::scalar::Scalar;
use crate::seqvae::SeqVae;

pub const DEFAULT_REPLAY_LENGTH: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplaySource {
    /// Sampled from the previous-task generator.
    Generated,
    /// Drawn from earlier tasks' real training data.
    Real,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub ratio: Ratio<u64>,
    pub replay_length: usize,
    pub source: ReplaySource,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            ratio: Ratio::new(1, 5),
            replay_length: DEFAULT_REPLAY_LENGTH,
            source: ReplaySource::Generated,
        }
    }
}

impl ReplayConfig {
    pub fn new(ratio: Ratio<u64>) -> Self {
        Self {
            ratio,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if *self.ratio.numer() == 0 || self.ratio > Ratio::from_integer(1) {
            return Err(Error::validation(format!(
                "replay ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        if self.replay_length == 0 {
            return Err(Error::validation("replay_length must be at least 1"));
        }
        Ok(())
    }
}

/// Floor of the mean per-class sample count of `sequences` over `classes`.
pub fn per_class_count<T: Scalar>(sequences: &[MotionSequence<T>], classes: &[usize]) -> usize {
    if classes.is_empty() {
        return 0;
    }
    let n = sequences.iter().filter(|s| classes.contains(&s.label)).count();
    n / classes.len()
}

/// `max(1, floor(ratio * new_task_count))` for every seen class.
pub fn replay_counts(seen_classes: &[usize], new_task_count: usize, ratio: Ratio<u64>) -> Result<BTreeMap<usize, usize>> {
    if seen_classes.is_empty() {
        return Err(Error::validation("replay needs at least one previously seen class"));
    }
    if new_task_count == 0 {
        return Err(Error::validation("new task has no samples per class"));
    }
    let scaled = ratio * Ratio::from_integer(new_task_count as u64);
    let per = (scaled.to_integer() as usize).max(1);
    Ok(seen_classes.iter().map(|&c| (c, per)).collect())
}

fn check_counts(seen_classes: &[usize], counts: &BTreeMap<usize, usize>) -> Result<()> {
    match counts.keys().find(|c| !seen_classes.contains(c)) {
        Some(c) => Err(Error::validation(format!(
            "class {c} has not been seen by the schedule; replay is limited to {seen_classes:?}"
        ))),
        None => Ok(()),
    }
}

/// Sample `counts[a]` sequences of `length` frames for each class from a
/// frozen generator snapshot, ordered by class then sample index.
pub fn build_replay_set<T: Scalar, R: Rng + ?Sized>(
    snapshot: &SeqVae<T>,
    seen_classes: &[usize],
    counts: &BTreeMap<usize, usize>,
    length: usize,
    rng: &mut R,
) -> Result<Vec<MotionSequence<T>>> {
    check_counts(seen_classes, counts)?;
    let mut out = Vec::with_capacity(counts.values().sum());
    for (&a, &n) in counts {
        out.extend(snapshot.generate_batch(&vec![a; n], length, rng)?);
    }
    Ok(out)
}

/// Uniform draws without replacement from earlier real data, cut to `length`.
pub fn build_real_replay<T: Scalar, R: Rng + ?Sized>(
    pool: &[MotionSequence<T>],
    seen_classes: &[usize],
    counts: &BTreeMap<usize, usize>,
    length: usize,
    rng: &mut R,
) -> Result<Vec<MotionSequence<T>>> {
    check_counts(seen_classes, counts)?;
    let mut out = Vec::new();
    for (&a, &n) in counts {
        let members: Vec<&MotionSequence<T>> = pool.iter().filter(|s| s.label == a).collect();
        if members.len() < n {
            return Err(Error::validation(format!(
                "class {a} has {} real samples, {n} requested for replay",
                members.len()
            )));
        }
        for i in sample(rng, members.len(), n) {
            let s = members[i];
            if s.len() < length {
                return Err(Error::validation(format!(
                    "real replay sample of class {a} has {} frames, shorter than {length}",
                    s.len()
                )));
            }
            out.push(s.truncated(length));
        }
    }
    Ok(out)
}

/// Real data of the current task plus replayed earlier classes.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedTrainingSet<T> {
    pub real: Vec<MotionSequence<T>>,
    pub replay: Vec<MotionSequence<T>>,
    /// Task whose training this set feeds.
    pub task: usize,
}

impl<T: Scalar> MixedTrainingSet<T> {
    pub fn len(&self) -> usize {
        self.real.len() + self.replay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every entry with its replay flag; real data first.
    pub fn iter(&self) -> impl Iterator<Item = (&MotionSequence<T>, bool)> {
        self.real
            .iter()
            .map(|s| (s, false))
            .chain(self.replay.iter().map(|s| (s, true)))
    }

    pub fn sequences(&self) -> Vec<&MotionSequence<T>> {
        self.iter().map(|(s, _)| s).collect()
    }
}

pub fn mix<T: Scalar>(real: Vec<MotionSequence<T>>, replay: Vec<MotionSequence<T>>, task: usize) -> MixedTrainingSet<T> {
    MixedTrainingSet { real, replay, task }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::PoseFrame;
    use crate::seqvae::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_follow_floor_then_minimum_rule() {
        let c = replay_counts(&[0, 1], 320, Ratio::new(1, 16)).unwrap();
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![20, 20]);
        assert_eq!(replay_counts(&[3], 100, Ratio::new(1, 5)).unwrap()[&3], 20);
        assert_eq!(replay_counts(&[3], 10, Ratio::new(1, 16)).unwrap()[&3], 1);
        assert!(replay_counts(&[], 10, Ratio::new(1, 5)).is_err());
        assert!(replay_counts(&[0], 0, Ratio::new(1, 5)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ReplayConfig::default().validate().is_ok());
        assert!(ReplayConfig::new(Ratio::new(0, 1)).validate().is_err());
        assert!(ReplayConfig::new(Ratio::new(3, 2)).validate().is_err());
        let c = ReplayConfig {
            replay_length: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unbalanced_classes_use_floored_mean() {
        let s = |l| MotionSequence::new(vec![PoseFrame::<f64>::identity()], l).unwrap();
        let seqs = vec![s(2), s(2), s(2), s(3), s(3), s(0)];
        assert_eq!(per_class_count(&seqs, &[2, 3]), 2);
    }

    #[test]
    fn generated_replay_is_ordered_sized_and_reproducible() {
        let model = SeqVae::<f64>::new(ModelConfig::desk(4), 1).unwrap();
        let counts = replay_counts(&[0, 1], 100, Ratio::new(1, 5)).unwrap();
        let a = build_replay_set(&model, &[0, 1], &counts, 60, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|s| s.len() == 60));
        assert!(a[..20].iter().all(|s| s.label == 0) && a[20..].iter().all(|s| s.label == 1));
        let b = build_replay_set(&model, &[0, 1], &counts, 60, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let bad = replay_counts(&[2], 100, Ratio::new(1, 5)).unwrap();
        assert!(build_replay_set(&model, &[0, 1], &bad, 60, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn real_replay_draws_without_replacement() {
        let pool: Vec<MotionSequence<f64>> = (0..10)
            .map(|i| {
                let mut f = PoseFrame::identity();
                f.root_disp[0] = i as f64;
                MotionSequence::new(vec![f; 5], i % 2).unwrap()
            })
            .collect();
        let counts = replay_counts(&[0, 1], 25, Ratio::new(1, 5)).unwrap();
        let r = build_real_replay(&pool, &[0, 1], &counts, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.len(), 10);
        let mut ids: Vec<i64> = r.iter().map(|s| s.frames[0].root_disp[0] as i64).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        assert!(r.iter().all(|s| s.len() == 3));
        let too_many = replay_counts(&[0], 30, Ratio::new(1, 5)).unwrap();
        assert!(build_real_replay(&pool, &[0], &too_many, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn mixing_flags_provenance() {
        let s = |l| MotionSequence::new(vec![PoseFrame::<f64>::identity()], l).unwrap();
        let m = mix(vec![s(2); 200], vec![s(0); 40], 1);
        assert_eq!(m.len(), 240);
        assert_eq!(m.iter().filter(|(_, r)| *r).count(), 40);
        let only = mix(vec![s(0); 3], Vec::new(), 0);
        assert_eq!(only.sequences().len(), 3);
    }
}
