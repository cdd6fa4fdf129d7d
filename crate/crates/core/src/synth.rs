//! Synthetic skeletal-motion datasets for desk-scale experiments.
//!
//! Every class is a fixed parametric motion family: a handful of joints swing
//! sinusoidally about class-specific axes, the body turns at a class-specific
//! rate and the root follows a class-specific drift with a vertical bob. The
//! family parameters depend only on the class index; the seed controls the
//! per-sample jitter (amplitude, tempo, phase, sensor noise, length).

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::Skeleton;
use crate::error::{Error, Result};
use crate::motion::{Dataset, MotionSequence, PoseFrame, NUM_JOINTS};
use crate::rotation::{axis_angle, mat_mul, rotmat_to_sixd, Vec3};
use crate::scalar::Scalar;

pub const MIN_FRAMES: usize = 10;
pub const MAX_FRAMES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub seqs_per_class: usize,
    /// Inclusive range of sequence lengths.
    pub t_range: (usize, usize),
    pub fps: u32,
    pub seed: u64,
    /// Standard deviation of per-frame joint-angle noise, radians.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(num_classes: usize, seqs_per_class: usize, t_range: (usize, usize), seed: u64) -> Self {
        Self {
            num_classes,
            seqs_per_class,
            t_range,
            fps: 20,
            seed,
            noise: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("synthetic datasets need at least 2 classes"));
        }
        if self.seqs_per_class == 0 {
            return Err(Error::validation("seqs_per_class must be positive"));
        }
        let (lo, hi) = self.t_range;
        if lo > hi || lo < MIN_FRAMES || hi > MAX_FRAMES {
            return Err(Error::validation(format!(
                "frame range {lo}..={hi} must lie within {MIN_FRAMES}..={MAX_FRAMES}"
            )));
        }
        if self.fps == 0 {
            return Err(Error::validation("fps must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::validation("noise must be a finite non-negative number"));
        }
        Ok(())
    }
}

struct Swing {
    joint: usize,
    axis: Vec3<f64>,
    rest: f64,
    amplitude: f64,
    freq_hz: f64,
    phase: f64,
}

struct Family {
    swings: Vec<Swing>,
    turn_rate: f64,
    lean: f64,
    velocity: [f64; 2],
    bob_amplitude: f64,
    bob_hz: f64,
}

const SWINGS_PER_CLASS: usize = 5;

fn random_axis(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let a = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = crate::rotation::norm(&a);
        if n > 0.2 && n <= 1.0 {
            return a.map(|v| v / n);
        }
    }
}

fn family(class: usize) -> Family {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_C1A5 ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut joints: Vec<usize> = (1..NUM_JOINTS).collect();
    let mut swings = Vec::with_capacity(SWINGS_PER_CLASS);
    for _ in 0..SWINGS_PER_CLASS {
        let joint = joints.swap_remove(rng.random_range(0..joints.len()));
        swings.push(Swing {
            joint,
            axis: random_axis(&mut rng),
            rest: rng.random_range(-0.6..0.6),
            amplitude: rng.random_range(0.4..1.0),
            freq_hz: rng.random_range(0.4..1.6),
            phase: rng.random_range(0.0..TAU),
        });
    }
    let heading = rng.random_range(0.0..TAU);
    let speed = rng.random_range(0.0..1.2);
    Family {
        swings,
        turn_rate: rng.random_range(-0.8..0.8),
        lean: rng.random_range(-0.3..0.3),
        velocity: [speed * heading.cos(), speed * heading.sin()],
        bob_amplitude: rng.random_range(0.0..0.25),
        bob_hz: rng.random_range(0.5..2.0),
    }
}

fn to_sixd<T: Scalar>(r: &crate::rotation::Mat3<f64>) -> [T; 6] {
    rotmat_to_sixd(r)
        .expect("generated matrices are rotations")
        .map(T::lit)
}

fn sample_sequence<T: Scalar>(
    fam: &Family,
    label: usize,
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> MotionSequence<T> {
    let len = rng.random_range(spec.t_range.0..=spec.t_range.1);
    let amp_scale = rng.random_range(0.85..1.15);
    let tempo = rng.random_range(0.9..1.1);
    let shift = rng.random_range(-0.6..0.6);
    let speed_scale = rng.random_range(0.9..1.1);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut frames = Vec::with_capacity(len);
    for t in 0..len {
        let s = t as f64 / spec.fps as f64;
        let mut f = PoseFrame::<T>::identity();
        for sw in &fam.swings {
            let angle = sw.rest
                + amp_scale * sw.amplitude * (TAU * sw.freq_hz * tempo * s + sw.phase + shift).sin()
                + noise.sample(rng);
            f.joint_rot6d[sw.joint] = to_sixd(&axis_angle(&sw.axis, angle));
        }
        let yaw = axis_angle(&[0.0, 1.0, 0.0], fam.turn_rate * s + noise.sample(rng));
        let lean = axis_angle(&[1.0, 0.0, 0.0], fam.lean);
        f.joint_rot6d[0] = to_sixd(&mat_mul(&yaw, &lean));
        f.root_disp = [
            fam.velocity[0] * speed_scale * s,
            fam.bob_amplitude * (TAU * fam.bob_hz * tempo * s + shift).sin(),
            fam.velocity[1] * speed_scale * s,
        ]
        .map(T::lit);
        frames.push(f);
    }
    let mut seq = MotionSequence::new(frames, label).expect("len >= MIN_FRAMES");
    seq.fps = spec.fps;
    seq.recenter();
    seq
}

/// Deterministic synthetic dataset: `seqs_per_class` sequences per class,
/// stored class by class.
pub fn synth_generate<T: Scalar>(spec: &SynthSpec, skeleton: &Skeleton<T>) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sequences = Vec::with_capacity(spec.num_classes * spec.seqs_per_class);
    for c in 0..spec.num_classes {
        let fam = family(c);
        for _ in 0..spec.seqs_per_class {
            sequences.push(sample_sequence(&fam, c, spec, &mut rng));
        }
    }
    let class_names = (0..spec.num_classes).map(|c| format!("motion_{c:02}")).collect();
    Dataset::new(sequences, class_names, skeleton.clone(), spec.fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{dataset_from_json, dataset_to_json};

    #[test]
    fn counts_and_balance() {
        let ds = synth_generate::<f64>(&SynthSpec::new(4, 10, (60, 100), 7), &Skeleton::smpl()).unwrap();
        assert_eq!(ds.sequences.len(), 40);
        assert_eq!(ds.count_per_class(), vec![10; 4]);
        assert!(ds.sequences.iter().all(|s| (60..=100).contains(&s.len())));
        assert!(ds.sequences.iter().all(|s| s.frames[0].root_disp == [0.0; 3]));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = SynthSpec::new(3, 4, (10, 20), 99);
        let a = synth_generate::<f64>(&spec, &Skeleton::smpl()).unwrap();
        let b = synth_generate::<f64>(&spec, &Skeleton::smpl()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate::<f64>(&SynthSpec { seed: 100, ..spec }, &Skeleton::smpl()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_invalid_specs() {
        let sk = Skeleton::<f64>::smpl();
        assert!(synth_generate(&SynthSpec::new(1, 4, (10, 20), 0), &sk).is_err());
        assert!(synth_generate(&SynthSpec::new(2, 4, (5, 20), 0), &sk).is_err());
        assert!(synth_generate(&SynthSpec::new(2, 4, (30, 20), 0), &sk).is_err());
        assert!(synth_generate(&SynthSpec::new(2, 4, (30, 201), 0), &sk).is_err());
        assert!(synth_generate(&SynthSpec::new(2, 0, (30, 40), 0), &sk).is_err());
    }

    #[test]
    fn written_then_reloaded_is_identical() {
        let ds = synth_generate::<f64>(&SynthSpec::new(2, 3, (10, 12), 1), &Skeleton::smpl()).unwrap();
        let back: Dataset<f64> = dataset_from_json(&dataset_to_json(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
        let ds32 = ds.cast::<f32>();
        let back32: Dataset<f32> = dataset_from_json(&dataset_to_json(&ds32).unwrap()).unwrap();
        assert_eq!(back32, ds32);
    }
}
