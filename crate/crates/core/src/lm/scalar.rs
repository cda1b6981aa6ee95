use std::fmt::Debug;

use num_traits::{Float, NumAssign};

use super::Precision;

/// Floating-point element type the model can be instantiated with.
pub trait Scalar: Float + NumAssign + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    const PRECISION: Precision;
    const BYTES: usize;

    /// `c = a * b + beta * c` with arbitrary element strides (see `matrixmultiply`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    fn of(x: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;
    const BYTES: usize = 4;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        (rsa, csa): (isize, isize),
        b: &[f32],
        (rsb, csb): (isize, isize),
        beta: f32,
        c: &mut [f32],
    ) {
        check_extent(m, k, a.len(), rsa, csa);
        check_extent(k, n, b.len(), rsb, csb);
        assert!(c.len() >= m * n);
        // SAFETY: the extents of a, b and c were checked against their strides above.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }

    fn of(x: f64) -> Self {
        x as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;
    const BYTES: usize = 8;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        (rsa, csa): (isize, isize),
        b: &[f64],
        (rsb, csb): (isize, isize),
        beta: f64,
        c: &mut [f64],
    ) {
        check_extent(m, k, a.len(), rsa, csa);
        check_extent(k, n, b.len(), rsb, csb);
        assert!(c.len() >= m * n);
        // SAFETY: the extents of a, b and c were checked against their strides above.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }

    fn of(x: f64) -> Self {
        x
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

fn check_extent(rows: usize, cols: usize, len: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

/// `c[m,n] (+)= a[m,k] * b[k,n]`, all row-major.
pub(crate) fn mm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), beta, c);
}

/// `c[m,n] (+)= a^T * b` where `a` is stored `[k, m]` and `b` is `[k, n]`.
pub(crate) fn mm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, a, (1, m as isize), b, (n as isize, 1), beta, c);
}

/// `c[m,n] (+)= a * b^T` where `a` is `[m, k]` and `b` is stored `[n, k]`.
pub(crate) fn mm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, a, (k as isize, 1), b, (1, k as isize), beta, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_naive() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 + 1.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5 - 2.0).collect(); // [3,4]
        let mut c = vec![0.0; 8];
        mm(2, 3, 4, &a, &b, &mut c, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|t| a[i * 3 + t] * b[t * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // a^T [3,2] * a [2,3]
        let mut g = vec![0.0; 9];
        mm_tn(3, 2, 3, &a, &a, &mut g, false);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|t| a[t * 3 + i] * a[t * 3 + j]).sum();
                assert_eq!(g[i * 3 + j], want);
            }
        }
        // a [2,3] * a^T [3,2]
        let mut h = vec![1.0; 4];
        mm_nt(2, 3, 2, &a, &a, &mut h, true);
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = 1.0 + (0..3).map(|t| a[i * 3 + t] * a[j * 3 + t]).sum::<f64>();
                assert_eq!(h[i * 2 + j], want);
            }
        }
    }
}
