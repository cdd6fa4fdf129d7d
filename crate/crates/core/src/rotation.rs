//! Continuous 6D rotation representation.
//!
//! A rotation is stored as the first two columns of its matrix. Decoding runs
//! Gram-Schmidt on the two 3-vectors and completes the frame with a cross
//! product, so any non-degenerate 6-vector maps to a proper rotation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major 3×3 matrix, `m[row][col]`.
pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

/// Minimum norm accepted for either Gram-Schmidt input.
pub const DEGENERATE_TOL: f64 = 1e-9;

/// Orthonormality tolerance for matrices handed to [`rotmat_to_sixd`].
pub fn orthonormal_tol<T: Scalar>() -> T {
    T::lit(1e-6).max(T::epsilon() * T::lit(64.0))
}

#[inline]
pub fn dot<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Scalar>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn mat_vec<T: Scalar>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn transpose<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c][r] = v;
        }
    }
    out
}

pub fn identity<T: Scalar>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn det<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rodrigues' formula; `axis` need not be normalized but must be nonzero.
pub fn axis_angle<T: Scalar>(axis: &Vec3<T>, angle: T) -> Mat3<T> {
    let n = norm(axis);
    let k = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = T::one() - c;
    [
        [
            c + k[0] * k[0] * t,
            k[0] * k[1] * t - k[2] * s,
            k[0] * k[2] * t + k[1] * s,
        ],
        [
            k[1] * k[0] * t + k[2] * s,
            c + k[1] * k[1] * t,
            k[1] * k[2] * t - k[0] * s,
        ],
        [
            k[2] * k[0] * t - k[1] * s,
            k[2] * k[1] * t + k[0] * s,
            c + k[2] * k[2] * t,
        ],
    ]
}

/// First two columns of `r`, column-major.
pub fn rotmat_to_sixd<T: Scalar>(r: &Mat3<T>) -> Result<[T; 6]> {
    let tol = orthonormal_tol::<T>();
    let cols: [Vec3<T>; 3] = [
        [r[0][0], r[1][0], r[2][0]],
        [r[0][1], r[1][1], r[2][1]],
        [r[0][2], r[1][2], r[2][2]],
    ];
    for i in 0..3 {
        for j in i..3 {
            let d = dot(&cols[i], &cols[j]);
            let expected = if i == j { T::one() } else { T::zero() };
            if (d - expected).abs() > tol {
                let what = if i == j {
                    format!("squared norm of column {i} is {d}")
                } else {
                    format!("dot product of columns {i} and {j} is {d}")
                };
                return Err(Error::validation(format!("matrix is not orthonormal: {what}")));
            }
        }
    }
    let d = det(r);
    if (d - T::one()).abs() > tol {
        return Err(Error::validation(format!(
            "matrix is not a proper rotation: determinant {d}"
        )));
    }
    Ok([
        cols[0][0], cols[0][1], cols[0][2], cols[1][0], cols[1][1], cols[1][2],
    ])
}

/// Intermediate Gram-Schmidt quantities, reused by the backward pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GramSchmidt<T> {
    pub b1: Vec3<T>,
    pub b2: Vec3<T>,
    pub b3: Vec3<T>,
    a1_norm: T,
    w_norm: T,
    proj: T,
}

impl<T: Scalar> GramSchmidt<T> {
    pub fn new(s: &[T]) -> Result<Self> {
        debug_assert!(s.len() >= 6);
        let a1 = [s[0], s[1], s[2]];
        let a2 = [s[3], s[4], s[5]];
        let tol = T::lit(DEGENERATE_TOL);
        if !s[..6].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateRotation(format!(
                "non-finite entries {:?}",
                &s[..6]
            )));
        }
        let a1_norm = norm(&a1);
        if !(a1_norm > tol) {
            return Err(Error::DegenerateRotation(format!(
                "first column has norm {a1_norm}"
            )));
        }
        let b1 = [a1[0] / a1_norm, a1[1] / a1_norm, a1[2] / a1_norm];
        let proj = dot(&b1, &a2);
        let w = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
        let w_norm = norm(&w);
        if !(w_norm > tol) {
            return Err(Error::DegenerateRotation(format!(
                "second column is parallel to the first (residual norm {w_norm})"
            )));
        }
        let b2 = [w[0] / w_norm, w[1] / w_norm, w[2] / w_norm];
        let b3 = cross(&b1, &b2);
        Ok(Self {
            b1,
            b2,
            b3,
            a1_norm,
            w_norm,
            proj,
        })
    }

    pub fn matrix(&self) -> Mat3<T> {
        let (b1, b2, b3) = (self.b1, self.b2, self.b3);
        [
            [b1[0], b2[0], b3[0]],
            [b1[1], b2[1], b3[1]],
            [b1[2], b2[2], b3[2]],
        ]
    }

    /// Pull a gradient w.r.t. the output matrix back onto the 6D input `s`.
    pub fn backward(&self, s: &[T], d_r: &Mat3<T>) -> [T; 6] {
        let col = |c: usize| [d_r[0][c], d_r[1][c], d_r[2][c]];
        let g3 = col(2);
        let mut g1 = col(0);
        let mut g2 = col(1);
        // b3 = b1 × b2
        let c1 = cross(&self.b2, &g3);
        let c2 = cross(&g3, &self.b1);
        for i in 0..3 {
            g1[i] += c1[i];
            g2[i] += c2[i];
        }
        // b2 = w / |w|
        let t2 = dot(&self.b2, &g2);
        let dw: Vec3<T> = std::array::from_fn(|i| (g2[i] - self.b2[i] * t2) / self.w_norm);
        // w = a2 - (b1·a2) b1
        let a2 = [s[3], s[4], s[5]];
        let dproj = -dot(&self.b1, &dw);
        let mut da2 = dw;
        for i in 0..3 {
            g1[i] += -self.proj * dw[i] + dproj * a2[i];
            da2[i] += dproj * self.b1[i];
        }
        // b1 = a1 / |a1|
        let t1 = dot(&self.b1, &g1);
        let da1: Vec3<T> = std::array::from_fn(|i| (g1[i] - self.b1[i] * t1) / self.a1_norm);
        [da1[0], da1[1], da1[2], da2[0], da2[1], da2[2]]
    }
}

/// Gram-Schmidt decoding of a 6D rotation.
pub fn sixd_to_rotmat<T: Scalar>(s: &[T; 6]) -> Result<Mat3<T>> {
    GramSchmidt::new(s).map(|gs| gs.matrix())
}
