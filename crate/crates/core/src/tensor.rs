use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix. Rows are batch entries throughout the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "Tensor::from_vec",
                expected: format!("{} elements", rows * cols),
                actual: format!("{}", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "Tensor::from_rows",
                    expected: format!("{cols} columns"),
                    actual: format!("{} in row {i}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    /// `self · other`, optionally transposing either operand.
    pub fn matmul_t(&self, ta: bool, other: &Self, tb: bool) -> Self {
        let (m, k) = if ta {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        let (k2, n) = if tb {
            (other.cols, other.rows)
        } else {
            (other.rows, other.cols)
        };
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = Self::zeros(m, n);
        gemm_acc(self, ta, other, tb, &mut out, T::zero());
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(false, other, false)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn hcat(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |t| t.rows);
        if let Some(bad) = parts.iter().find(|t| t.rows != rows) {
            return Err(Error::Dimension {
                context: "Tensor::hcat",
                expected: format!("{rows} rows"),
                actual: format!("{}", bad.rows),
            });
        }
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }
}

/// `out <- op(a) · op(b) + beta * out`.
pub(crate) fn gemm_acc<T: Scalar>(
    a: &Tensor<T>,
    ta: bool,
    b: &Tensor<T>,
    tb: bool,
    out: &mut Tensor<T>,
    beta: T,
) {
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1, a.cols as isize)
    } else {
        (a.rows, a.cols, a.cols as isize, 1)
    };
    let (n, rsb, csb) = if tb {
        (b.rows, 1, b.cols as isize)
    } else {
        (b.cols, b.cols as isize, 1)
    };
    debug_assert_eq!(out.shape(), (m, n));
    if m.min(k) <= SMALL_DIM || m * k * n <= SMALL_VOLUME {
        small_gemm(a, ta, b, tb, out, beta, (m, k, n));
        return;
    }
    let ldc = out.cols as isize;
    T::gemm(
        m,
        k,
        n,
        T::one(),
        &a.data,
        rsa,
        csa,
        &b.data,
        rsb,
        csb,
        beta,
        &mut out.data,
        ldc,
        1,
    );
}

const SMALL_DIM: usize = 8;
const SMALL_VOLUME: usize = 32 * 1024;

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: T = xc.remainder().iter().zip(yc.remainder()).map(|(&a, &b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Direct loops for thin products, where packing would dominate.
fn small_gemm<T: Scalar>(
    a: &Tensor<T>,
    ta: bool,
    b: &Tensor<T>,
    tb: bool,
    out: &mut Tensor<T>,
    beta: T,
    (m, k, n): (usize, usize, usize),
) {
    if beta == T::zero() {
        out.data.fill(T::zero());
    } else if beta != T::one() {
        out.data.iter_mut().for_each(|v| *v *= beta);
    }
    let at = |i: usize, p: usize| if ta { a.data[p * a.cols + i] } else { a.data[i * a.cols + p] };
    if tb {
        for i in 0..m {
            let row = &mut out.data[i * n..(i + 1) * n];
            if ta {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += (0..k).map(|p| at(i, p) * b.data[j * b.cols + p]).sum::<T>();
                }
            } else {
                let ar = &a.data[i * a.cols..i * a.cols + k];
                for (j, o) in row.iter_mut().enumerate() {
                    let br = &b.data[j * b.cols..j * b.cols + k];
                    *o += dot(ar, br);
                }
            }
        }
    } else {
        for i in 0..m {
            let row = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = at(i, p);
                if aip == T::zero() {
                    continue;
                }
                let br = &b.data[p * b.cols..p * b.cols + n];
                for (o, &y) in row.iter_mut().zip(br) {
                    *o += aip * y;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_with_transposes_matches_naive() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = a.matmul(&b);
        assert_eq!(ab.data(), &[58.0, 64.0, 139.0, 154.0]);
        let at_t = a.transpose().matmul_t(true, &b.transpose(), true);
        assert_eq!(at_t, ab);
    }

    #[test]
    fn thin_and_blocked_paths_agree_with_naive() {
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(m, k, n) in &[(2, 152, 96), (40, 50, 60), (3, 4, 5), (64, 2, 64), (30, 30, 30)] {
            for ta in [false, true] {
                for tb in [false, true] {
                    let a0 = Tensor::from_vec(m, k, (0..m * k).map(|_| next()).collect()).unwrap();
                    let b0 = Tensor::from_vec(k, n, (0..k * n).map(|_| next()).collect()).unwrap();
                    let a = if ta { a0.transpose() } else { a0.clone() };
                    let b = if tb { b0.transpose() } else { b0.clone() };
                    let got = a.matmul_t(ta, &b, tb);
                    for i in 0..m {
                        for j in 0..n {
                            let want: f64 = (0..k).map(|p| a0.get(i, p) * b0.get(p, j)).sum();
                            assert!((got.get(i, j) - want).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hcat_rejects_ragged_rows() {
        let a = Tensor::<f64>::zeros(2, 1);
        let b = Tensor::<f64>::zeros(3, 1);
        assert!(Tensor::hcat(&[&a, &b]).is_err());
        let c = Tensor::hcat(&[&a, &Tensor::zeros(2, 2)]).unwrap();
        assert_eq!(c.shape(), (2, 3));
    }
}
