//! Loss terms of the sequence VAE, as plain values and as graph nodes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_diag_value, log_sum_exp, Graph, Var};
use crate::body::{body_vertices, Skeleton};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::motion::{frame_to_vector, MotionSequence};
use crate::nn::Bind;
use crate::scalar::Scalar;

pub const DEFAULT_LAMBDA_LATENT: f64 = 1e-5;
pub const DEFAULT_LAMBDA_AUX: f64 = 1e-4;

/// Unweighted loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub vertex: f64,
    pub reconstruction: f64,
    pub latent: f64,
    pub aux: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vertex: f64,
    pub reconstruction: f64,
    pub latent: f64,
    pub aux: f64,
    pub total: f64,
    pub lambda_latent: f64,
    pub lambda_aux: f64,
}

/// Weighted sum of the four terms.
pub fn total_loss(parts: LossParts, lambda_latent: f64, lambda_aux: f64) -> LossBreakdown {
    LossBreakdown {
        vertex: parts.vertex,
        reconstruction: parts.reconstruction,
        latent: parts.latent,
        aux: parts.aux,
        total: parts.vertex + parts.reconstruction + lambda_latent * parts.latent + lambda_aux * parts.aux,
        lambda_latent,
        lambda_aux,
    }
}

/// `KL(N(mu_m, e^{2 ls_m}) || N(mu_a, e^{2 ls_a}))` summed over dimensions.
pub fn latent_loss<T: Scalar>(mu_m: &[T], ls_m: &[T], mu_a: &[T], ls_a: &[T]) -> Result<T> {
    let n = mu_m.len();
    if ls_m.len() != n || mu_a.len() != n || ls_a.len() != n {
        return Err(Error::Dimension {
            context: "latent_loss",
            expected: format!("four vectors of length {n}"),
            actual: format!("{}, {}, {}, {}", n, ls_m.len(), mu_a.len(), ls_a.len()),
        });
    }
    Ok(kl_diag_value(mu_m, ls_m, mu_a, ls_a))
}

fn check_same_length<T: Scalar>(a: &MotionSequence<T>, b: &MotionSequence<T>, context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context,
            expected: format!("{} frames", a.len()),
            actual: format!("{} frames", b.len()),
        });
    }
    Ok(())
}

/// Sum over frames and joints of squared position differences.
pub fn vertex_loss<T: Scalar>(seq: &MotionSequence<T>, recon: &MotionSequence<T>, skeleton: &Skeleton<T>) -> Result<T> {
    check_same_length(seq, recon, "vertex_loss")?;
    let a = body_vertices(seq, skeleton)?;
    let b = body_vertices(recon, skeleton)?;
    Ok(a.iter()
        .zip(&b)
        .flat_map(|(va, vb)| va.positions.iter().zip(&vb.positions))
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum::<T>())
        .sum())
}

/// Sum over frames of squared frame-vector differences.
pub fn reconstruction_loss<T: Scalar>(seq: &MotionSequence<T>, recon: &MotionSequence<T>) -> Result<T> {
    check_same_length(seq, recon, "reconstruction_loss")?;
    Ok(seq
        .frames
        .iter()
        .zip(&recon.frames)
        .flat_map(|(f, g)| frame_to_vector(f).into_iter().zip(frame_to_vector(g)))
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Cross-entropy of the classifier's prediction on `recon` against class `a`.
pub fn aux_loss<T: Scalar>(classifier: &Classifier<T>, recon: &MotionSequence<T>, a: usize) -> Result<T> {
    if a >= classifier.num_classes() {
        return Err(Error::validation(format!(
            "class {a} out of range for a classifier over {} classes",
            classifier.num_classes()
        )));
    }
    let pred = classifier.predict(std::slice::from_ref(recon))?;
    let logits = &pred.logits[0];
    Ok(log_sum_exp(logits) - logits[a])
}

fn sum_scalars<T: Scalar>(g: &mut Graph<T>, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::validation("empty loss sum"))?;
    it.try_fold(first, |acc, v| g.add(acc, v))
}

/// Graph node for the summed squared error between per-step target and output rows.
pub fn reconstruction_node<T: Scalar>(g: &mut Graph<T>, targets: &[Var], recon: &[Var]) -> Result<Var> {
    if targets.len() != recon.len() {
        return Err(Error::Dimension {
            context: "reconstruction_node",
            expected: format!("{} steps", targets.len()),
            actual: format!("{} steps", recon.len()),
        });
    }
    let terms = targets
        .iter()
        .zip(recon)
        .map(|(&t, &r)| {
            let d = g.sub(r, t)?;
            Ok(g.sum_squares(d))
        })
        .collect::<Result<Vec<_>>>()?;
    sum_scalars(g, terms)
}

/// Graph node for the vertex loss; `target_vertices` hold `B × 72` positions per step.
pub fn vertex_node<T: Scalar>(
    g: &mut Graph<T>,
    target_vertices: &[Var],
    recon: &[Var],
    skeleton: &Arc<Skeleton<T>>,
) -> Result<Var> {
    let positions = recon
        .iter()
        .map(|&r| g.fk(r, Arc::clone(skeleton)))
        .collect::<Result<Vec<_>>>()?;
    reconstruction_node(g, target_vertices, &positions)
}

/// Graph node for the summed auxiliary cross-entropy; the classifier enters frozen.
pub fn aux_node<T: Scalar>(g: &mut Graph<T>, classifier: &Classifier<T>, recon: &[Var], labels: &[usize]) -> Result<Var> {
    let (_, logits) = classifier.forward_graph(g, recon, Bind::Frozen)?;
    g.cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::PoseFrame;
    use crate::rotation::{axis_angle, rotmat_to_sixd};
    use crate::synth::{synth_generate, SynthSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-s..s)).collect()
    }

    #[test]
    fn identical_gaussians_have_zero_latent_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mu = rand_vec(&mut rng, 256, 3.0);
            let ls = rand_vec(&mut rng, 256, 2.0);
            assert_eq!(latent_loss(&mu, &ls, &mu, &ls).unwrap(), 0.0);
        }
    }

    #[test]
    fn unit_shift_is_one_half() {
        let v = latent_loss(&[1.0], &[0.0], &[0.0], &[0.0]).unwrap();
        assert!((v - 0.5f64).abs() < 1e-12);
    }

    #[test]
    fn latent_loss_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 16;
        let (mm, lm) = (rand_vec(&mut rng, d, 1.0), rand_vec(&mut rng, d, 0.5));
        let (ma, la) = (rand_vec(&mut rng, d, 1.0), rand_vec(&mut rng, d, 0.5));
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut diff = 0.0;
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let z = mm[j] + lm[j].exp() * e;
                let log_q = -lm[j] - 0.5 * e * e;
                let u = (z - ma[j]) / la[j].exp();
                let log_p = -la[j] - 0.5 * u * u;
                diff += log_q - log_p;
            }
            s += diff;
            s2 += diff * diff;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let kl = latent_loss(&mm, &lm, &ma, &la).unwrap();
        assert!((kl - mean).abs() < 3.0 * se, "kl {kl} mc {mean} se {se}");
    }

    #[test]
    fn latent_loss_rejects_ragged_inputs() {
        assert!(latent_loss(&[0.0, 1.0], &[0.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    fn random_sequence(rng: &mut ChaCha8Rng, len: usize) -> MotionSequence<f64> {
        let frames = (0..len)
            .map(|_| {
                let mut f = PoseFrame::identity();
                for r in f.joint_rot6d.iter_mut() {
                    let axis = [rng.random_range(-1.0..1.0), 1.0, rng.random_range(-1.0..1.0)];
                    *r = rotmat_to_sixd(&axis_angle(&axis, rng.random_range(-1.5..1.5))).unwrap();
                }
                f.root_disp = [rng.random(), rng.random(), rng.random()];
                f
            })
            .collect();
        MotionSequence::new(frames, 0).unwrap()
    }

    #[test]
    fn vertex_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let skel = Skeleton::smpl();
        let a = random_sequence(&mut rng, 4);
        assert_eq!(vertex_loss(&a, &a, &skel).unwrap(), 0.0);

        let mut offsets = vec![[0.5, 0.0, 0.0]; 24];
        offsets[0] = [0.0; 3];
        let chain = Skeleton::new((0..24).map(|j| j - 1).collect(), offsets).unwrap();
        let one = MotionSequence::new(vec![PoseFrame::identity()], 0).unwrap();
        let mut moved = one.clone();
        moved.frames[0].joint_rot6d[22] = rotmat_to_sixd(&axis_angle(&[0.0, 0.0, 1.0], std::f64::consts::PI)).unwrap();
        assert!((vertex_loss(&one, &moved, &chain).unwrap() - 1.0).abs() < 1e-12);

        let b = random_sequence(&mut rng, 4);
        let (va, vb) = (body_vertices(&a, &skel).unwrap(), body_vertices(&b, &skel).unwrap());
        let mut brute = 0.0;
        for t in 0..4 {
            for j in 0..24 {
                for k in 0..3 {
                    let d = va[t].positions[j][k] - vb[t].positions[j][k];
                    brute += d * d;
                }
            }
        }
        assert!((vertex_loss(&a, &b, &skel).unwrap() - brute).abs() < 1e-10);
        assert!(vertex_loss(&a, &b.truncated(3), &skel).is_err());
    }

    #[test]
    fn reconstruction_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_sequence(&mut rng, 5);
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.frames[2].root_disp[1] += 1.0;
        assert!((reconstruction_loss(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        let c = random_sequence(&mut rng, 5);
        let mut brute = 0.0;
        for t in 0..5 {
            let (x, y) = (frame_to_vector(&a.frames[t]), frame_to_vector(&c.frames[t]));
            for i in 0..x.len() {
                brute += (x[i] - y[i]) * (x[i] - y[i]);
            }
        }
        assert!((reconstruction_loss(&a, &c).unwrap() - brute).abs() < 1e-10);
        assert!(reconstruction_loss(&a, &c.truncated(2)).is_err());
    }

    fn head_ids(clf: &Classifier<f64>) -> (crate::autodiff::ParamId, crate::autodiff::ParamId) {
        let p = clf.params();
        (p.find("classifier.head.weight").unwrap(), p.find("classifier.head.bias").unwrap())
    }

    #[test]
    fn aux_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = random_sequence(&mut rng, 6);

        let mut clf = Classifier::<f64>::new(5, 1, 8, 0).unwrap();
        let (w, b) = head_ids(&clf);
        clf.params_mut().get_mut(w).data_mut().fill(0.0);
        clf.params_mut().get_mut(b).data_mut().fill(0.0);
        assert!((aux_loss(&clf, &seq, 2).unwrap() - 5f64.ln()).abs() < 1e-12);

        clf.params_mut().get_mut(b).data_mut()[3] = 60.0;
        assert!(aux_loss(&clf, &seq, 3).unwrap() < 1e-20);

        let clf = Classifier::<f64>::new(5, 2, 8, 9).unwrap();
        let logits = clf.predict(std::slice::from_ref(&seq)).unwrap().logits[0].clone();
        let direct = logits.iter().map(|v| v.exp()).sum::<f64>().ln() - logits[1];
        assert!((aux_loss(&clf, &seq, 1).unwrap() - direct).abs() < 1e-10);
        assert!(aux_loss(&clf, &seq, 5).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(DEFAULT_LAMBDA_LATENT, 1e-5);
        assert_eq!(DEFAULT_LAMBDA_AUX, 1e-4);
        assert_eq!(total_loss(LossParts::default(), 0.1, 0.5).total, 0.0);
        let parts = LossParts {
            vertex: 1.0,
            reconstruction: 2.0,
            latent: 3.0,
            aux: 4.0,
        };
        let b = total_loss(parts, 0.1, 0.5);
        assert!((b.total - 5.3).abs() < 1e-12);
        assert_eq!(total_loss(parts, 0.1, 0.0).total, 1.0 + 2.0 + 0.1 * 3.0);
    }

    #[test]
    fn graph_nodes_agree_with_value_losses() {
        let skel = Arc::new(Skeleton::<f64>::smpl());
        let ds = synth_generate::<f64>(&SynthSpec::new(2, 2, (10, 10), 6), &skel).unwrap();
        let (a, b) = (&ds.sequences[0], &ds.sequences[1]);
        let mut g = Graph::new();
        let mut steps = |s: &MotionSequence<f64>| -> Vec<Var> {
            s.to_vectors()
                .into_iter()
                .map(|v| g.constant(crate::tensor::Tensor::row_vector(v)))
                .collect()
        };
        let (sa, sb) = (steps(a), steps(b));
        let rec = reconstruction_node(&mut g, &sa, &sb).unwrap();
        let verts: Vec<Var> = sa.iter().map(|&v| g.fk(v, Arc::clone(&skel)).unwrap()).collect();
        let vert = vertex_node(&mut g, &verts, &sb, &skel).unwrap();
        assert!((g.value(rec).item() - reconstruction_loss(a, b).unwrap()).abs() < 1e-10);
        assert!((g.value(vert).item() - vertex_loss(a, b, &skel).unwrap()).abs() < 1e-10);

        let clf = Classifier::<f64>::new(2, 1, 8, 1).unwrap();
        let aux = aux_node(&mut g, &clf, &sb, &[0]).unwrap();
        assert!((g.value(aux).item() - aux_loss(&clf, b, 0).unwrap()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn latent_loss_is_nonnegative(
            v in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0, -3.0f64..3.0, -2.0f64..2.0), 1..32)
        ) {
            let (mm, lm): (Vec<f64>, Vec<f64>) = v.iter().map(|x| (x.0, x.1)).unzip();
            let (ma, la): (Vec<f64>, Vec<f64>) = v.iter().map(|x| (x.2, x.3)).unzip();
            prop_assert!(latent_loss(&mm, &lm, &ma, &la).unwrap() >= -1e-12);
        }

        #[test]
        fn total_is_affine_in_each_part(
            v in 0.0f64..10.0, p in 0.0f64..10.0, l in -5.0f64..5.0, a in 0.0f64..10.0,
            ll in 0.0f64..1.0, la in 0.0f64..1.0, dv in 0.0f64..1.0,
        ) {
            let base = LossParts { vertex: v, reconstruction: p, latent: l, aux: a };
            let t0 = total_loss(base, ll, la).total;
            let t1 = total_loss(LossParts { latent: l + dv, ..base }, ll, la).total;
            let t2 = total_loss(LossParts { aux: a + dv, ..base }, ll, la).total;
            prop_assert!((t1 - t0 - ll * dv).abs() < 1e-9);
            prop_assert!((t2 - t0 - la * dv).abs() < 1e-9);
        }
    }
}
