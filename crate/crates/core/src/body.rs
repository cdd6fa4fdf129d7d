//! Forward-kinematics body model used by the vertex loss.
//!
//! Joint positions stand in for mesh vertices. Positions are root-centered,
//! so the root displacement of a frame never reaches the vertex loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, PoseFrame, NUM_JOINTS};
use crate::rotation::{mat_mul, mat_vec, transpose, GramSchmidt, Mat3, Vec3};
use crate::scalar::Scalar;

/// Number of coordinates produced per frame (joints × 3).
pub const VERTEX_DIM: usize = NUM_JOINTS * 3;

/// Kinematic tree of the 24-joint SMPL skeleton.
pub const SMPL_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Approximate SMPL rest-pose bone offsets in meters (y up).
pub const SMPL_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.14, 0.02],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.0, 0.06, 0.0],
    [0.03, -0.06, 0.12],
    [-0.03, -0.06, 0.12],
    [0.0, 0.21, -0.03],
    [0.08, 0.12, -0.02],
    [-0.08, 0.12, -0.02],
    [0.0, 0.09, 0.05],
    [0.12, 0.05, -0.01],
    [-0.12, 0.05, -0.01],
    [0.26, -0.01, -0.02],
    [-0.26, -0.01, -0.02],
    [0.25, 0.01, 0.0],
    [-0.25, 0.01, 0.0],
    [0.08, -0.01, -0.01],
    [-0.08, -0.01, -0.01],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonRepr", into = "SkeletonRepr", bound = "")]
pub struct Skeleton<T: Scalar> {
    parents: Vec<i32>,
    offsets: Vec<Vec3<T>>,
}

impl<T: Scalar> Skeleton<T> {
    pub fn new(parents: Vec<i32>, offsets: Vec<Vec3<T>>) -> Result<Self> {
        if parents.len() != NUM_JOINTS || offsets.len() != NUM_JOINTS {
            return Err(Error::Dimension {
                context: "Skeleton::new",
                expected: format!("{NUM_JOINTS} parents and offsets"),
                actual: format!("{} parents, {} offsets", parents.len(), offsets.len()),
            });
        }
        if parents[0] != -1 {
            return Err(Error::validation("joint 0 must be the root (parent -1)"));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::validation(format!(
                    "joint {j} has parent {p}; parents must precede children and only joint 0 may be a root"
                )));
            }
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("skeleton offsets must be finite"));
        }
        Ok(Self { parents, offsets })
    }

    /// SMPL-like default skeleton.
    pub fn smpl() -> Self {
        let offsets = SMPL_OFFSETS
            .iter()
            .map(|o| o.map(T::lit))
            .collect();
        Self::new(SMPL_PARENTS.to_vec(), offsets).expect("built-in skeleton is valid")
    }

    /// Straight chain: joint `j` hangs off `j - 1` with the given offset.
    pub fn chain(offset: Vec3<T>) -> Self {
        let parents = (0..NUM_JOINTS as i32).map(|j| j - 1).collect();
        let mut offsets = vec![offset; NUM_JOINTS];
        offsets[0] = [T::zero(); 3];
        Self::new(parents, offsets).expect("chain skeleton is valid")
    }

    pub fn parents(&self) -> &[i32] {
        &self.parents
    }

    pub fn offsets(&self) -> &[Vec3<T>] {
        &self.offsets
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        usize::try_from(self.parents[j]).ok()
    }

    /// `true` if `j` is `root` or one of its descendants.
    pub fn in_subtree(&self, root: usize, mut j: usize) -> bool {
        loop {
            if j == root {
                return true;
            }
            match self.parent(j) {
                Some(p) => j = p,
                None => return false,
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Skeleton<U> {
        Skeleton {
            parents: self.parents.clone(),
            offsets: self
                .offsets
                .iter()
                .map(|o| o.map(|v| U::from_f64_lossy(v.to_f64_lossless())))
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SkeletonRepr {
    parents: Vec<i32>,
    offsets: Vec<[f64; 3]>,
}

impl<T: Scalar> TryFrom<SkeletonRepr> for Skeleton<T> {
    type Error = Error;

    fn try_from(r: SkeletonRepr) -> Result<Self> {
        Skeleton::new(r.parents, r.offsets.iter().map(|o| o.map(T::lit)).collect())
    }
}

impl<T: Scalar> From<Skeleton<T>> for SkeletonRepr {
    fn from(s: Skeleton<T>) -> Self {
        SkeletonRepr {
            parents: s.parents,
            offsets: s
                .offsets
                .iter()
                .map(|o| o.map(Scalar::to_f64_lossless))
                .collect(),
        }
    }
}

/// Root-centered joint positions for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexSet<T> {
    pub positions: Vec<Vec3<T>>,
}

impl<T: Scalar> VertexSet<T> {
    pub fn flat(&self) -> Vec<T> {
        self.positions.iter().flatten().copied().collect()
    }
}

/// Per-joint quantities kept for the backward pass.
pub(crate) struct FkCache<T> {
    frames: Vec<GramSchmidt<T>>,
    globals: Vec<Mat3<T>>,
}

/// Forward kinematics on the first 144 entries of a frame vector.
///
/// Writes `VERTEX_DIM` root-centered coordinates into `out`.
pub(crate) fn fk_forward<T: Scalar>(
    rot6d: &[T],
    skeleton: &Skeleton<T>,
    out: &mut [T],
) -> Result<FkCache<T>> {
    debug_assert!(rot6d.len() >= NUM_JOINTS * 6 && out.len() == VERTEX_DIM);
    let mut frames = Vec::with_capacity(NUM_JOINTS);
    let mut globals: Vec<Mat3<T>> = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let gs = GramSchmidt::new(&rot6d[j * 6..j * 6 + 6]).map_err(|e| match e {
            Error::DegenerateRotation(m) => Error::DegenerateRotation(format!("joint {j}: {m}")),
            other => other,
        })?;
        let local = gs.matrix();
        let global = match skeleton.parent(j) {
            None => {
                out[..3].fill(T::zero());
                local
            }
            Some(p) => {
                let step = mat_vec(&globals[p], &skeleton.offsets[j]);
                for k in 0..3 {
                    out[j * 3 + k] = out[p * 3 + k] + step[k];
                }
                mat_mul(&globals[p], &local)
            }
        };
        frames.push(gs);
        globals.push(global);
    }
    Ok(FkCache { frames, globals })
}

/// Gradient of a scalar w.r.t. the 144 rotation entries given its gradient
/// w.r.t. the positions written by [`fk_forward`].
pub(crate) fn fk_backward<T: Scalar>(
    rot6d: &[T],
    skeleton: &Skeleton<T>,
    cache: &FkCache<T>,
    d_pos: &[T],
    d_rot6d: &mut [T],
) {
    let zero = [[T::zero(); 3]; 3];
    let mut d_pos_acc: Vec<Vec3<T>> = (0..NUM_JOINTS)
        .map(|j| [d_pos[j * 3], d_pos[j * 3 + 1], d_pos[j * 3 + 2]])
        .collect();
    let mut d_global = vec![zero; NUM_JOINTS];
    for j in (0..NUM_JOINTS).rev() {
        let gs = &cache.frames[j];
        let d_local = match skeleton.parent(j) {
            None => d_global[j],
            Some(p) => {
                let dp = d_pos_acc[j];
                let off = skeleton.offsets[j];
                let local = gs.matrix();
                // G_j = G_p R_j  =>  dG_p += dG_j R_jᵀ,  dR_j = G_pᵀ dG_j
                let via_child = mat_mul(&d_global[j], &transpose(&local));
                let d_local = mat_mul(&transpose(&cache.globals[p]), &d_global[j]);
                for r in 0..3 {
                    d_pos_acc[p][r] += dp[r];
                    for c in 0..3 {
                        d_global[p][r][c] += dp[r] * off[c] + via_child[r][c];
                    }
                }
                d_local
            }
        };
        let g = gs.backward(&rot6d[j * 6..j * 6 + 6], &d_local);
        for k in 0..6 {
            d_rot6d[j * 6 + k] += g[k];
        }
    }
}

/// Root-centered joint positions of one frame.
pub fn fk_vertices<T: Scalar>(frame: &PoseFrame<T>, skeleton: &Skeleton<T>) -> Result<VertexSet<T>> {
    let flat: Vec<T> = frame.joint_rot6d.iter().flatten().copied().collect();
    let mut out = vec![T::zero(); VERTEX_DIM];
    fk_forward(&flat, skeleton, &mut out)?;
    Ok(VertexSet {
        positions: out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Framewise [`fk_vertices`].
pub fn body_vertices<T: Scalar>(
    seq: &MotionSequence<T>,
    skeleton: &Skeleton<T>,
) -> Result<Vec<VertexSet<T>>> {
    seq.frames.iter().map(|f| fk_vertices(f, skeleton)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{axis_angle, norm, rotmat_to_sixd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng) -> PoseFrame<f64> {
        let mut f = PoseFrame::identity();
        for row in f.joint_rot6d.iter_mut() {
            let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5];
            *row = rotmat_to_sixd(&axis_angle(&axis, rng.random_range(-2.0..2.0))).unwrap();
        }
        f.root_disp = [rng.random(), rng.random(), rng.random()];
        f
    }

    #[test]
    fn identity_chain_stacks_offsets() {
        let sk = Skeleton::chain([0.0, 0.0, 1.0]);
        let v = fk_vertices(&PoseFrame::<f64>::identity(), &sk).unwrap();
        for (j, p) in v.positions.iter().enumerate() {
            assert_eq!(*p, [0.0, 0.0, j as f64]);
        }
    }

    #[test]
    fn rotated_root_moves_child() {
        let mut parents = vec![-1, 0];
        parents.extend(1..(NUM_JOINTS as i32 - 1));
        let mut offsets = vec![[0.0; 3]; NUM_JOINTS];
        offsets[1] = [1.0, 0.0, 0.0];
        let sk = Skeleton::new(parents, offsets).unwrap();
        let mut f = PoseFrame::<f64>::identity();
        f.joint_rot6d[0] = rotmat_to_sixd(&axis_angle(&[0.0, 0.0, 1.0], std::f64::consts::PI)).unwrap();
        let v = fk_vertices(&f, &sk).unwrap();
        let c = v.positions[1];
        assert!((c[0] + 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn bones_keep_their_length_and_root_stays_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sk = Skeleton::<f64>::smpl();
        for _ in 0..20 {
            let v = fk_vertices(&random_frame(&mut rng), &sk).unwrap();
            assert_eq!(v.positions[0], [0.0; 3]);
            for j in 1..NUM_JOINTS {
                let p = sk.parent(j).unwrap();
                let d: Vec3<f64> = std::array::from_fn(|k| v.positions[j][k] - v.positions[p][k]);
                assert!((norm(&d) - norm(&sk.offsets()[j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn global_rotation_rotates_every_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sk = Skeleton::<f64>::smpl();
        let f = random_frame(&mut rng);
        let q = axis_angle(&[0.3, -0.2, 0.9], 0.8);
        let mut g = f.clone();
        let r0 = crate::rotation::sixd_to_rotmat(&f.joint_rot6d[0]).unwrap();
        g.joint_rot6d[0] = rotmat_to_sixd(&mat_mul(&q, &r0)).unwrap();
        let a = fk_vertices(&f, &sk).unwrap();
        let b = fk_vertices(&g, &sk).unwrap();
        for (pa, pb) in a.positions.iter().zip(&b.positions) {
            let qa = mat_vec(&q, pa);
            for k in 0..3 {
                assert!((qa[k] - pb[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sk = Skeleton::<f64>::smpl();
        let frame = random_frame(&mut rng);
        let flat: Vec<f64> = frame.joint_rot6d.iter().flatten().copied().collect();
        let energy = |x: &[f64]| {
            let mut out = vec![0.0; VERTEX_DIM];
            fk_forward(x, &sk, &mut out).unwrap();
            out.iter().map(|v| v * v).sum::<f64>()
        };
        let mut pos = vec![0.0; VERTEX_DIM];
        let cache = fk_forward(&flat, &sk, &mut pos).unwrap();
        let d_pos: Vec<f64> = pos.iter().map(|v| 2.0 * v).collect();
        let mut grad = vec![0.0; NUM_JOINTS * 6];
        fk_backward(&flat, &sk, &cache, &d_pos, &mut grad);
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            let mut m = flat.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (energy(&p) - energy(&m)) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(
                (fd - grad[k]).abs() / denom < 1e-4 || (fd - grad[k]).abs() < 1e-9,
                "entry {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn sequence_vertices_are_framewise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sk = Skeleton::<f64>::smpl();
        let f = random_frame(&mut rng);
        let one = MotionSequence::new(vec![f.clone()], 0).unwrap();
        assert_eq!(body_vertices(&one, &sk).unwrap(), vec![fk_vertices(&f, &sk).unwrap()]);
        let five = MotionSequence::new(vec![f; 5], 0).unwrap();
        let vs = body_vertices(&five, &sk).unwrap();
        assert_eq!(vs.len(), 5);
        assert!(vs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn perturbing_a_joint_only_moves_its_subtree() {
        let sk = Skeleton::<f64>::smpl();
        let base = PoseFrame::<f64>::identity();
        let mut bent = base.clone();
        bent.joint_rot6d[3] = rotmat_to_sixd(&axis_angle(&[1.0, 0.0, 0.0], 0.7)).unwrap();
        let a = fk_vertices(&base, &sk).unwrap();
        let b = fk_vertices(&bent, &sk).unwrap();
        for j in 0..NUM_JOINTS {
            // joint 3's own position depends only on its parent; its children move
            let moved = a.positions[j] != b.positions[j];
            let expected = j != 3 && sk.in_subtree(3, j);
            assert_eq!(moved, expected, "joint {j}");
        }
    }

    #[test]
    fn degenerate_rows_name_the_joint() {
        let mut f = PoseFrame::<f64>::identity();
        f.joint_rot6d[7] = [0.0; 6];
        let err = fk_vertices(&f, &Skeleton::smpl()).unwrap_err().to_string();
        assert!(err.contains("joint 7"), "{err}");
    }

    #[test]
    fn skeleton_validation() {
        let mut parents = SMPL_PARENTS.to_vec();
        parents[5] = 6;
        assert!(Skeleton::<f64>::new(parents, vec![[0.0; 3]; NUM_JOINTS]).is_err());
        let mut parents = SMPL_PARENTS.to_vec();
        parents[4] = -1;
        assert!(Skeleton::<f64>::new(parents, vec![[0.0; 3]; NUM_JOINTS]).is_err());
    }

    #[test]
    fn random_rows_are_valid_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        assert!(crate::rotation::sixd_to_rotmat(&s).is_ok());
    }
}
