//! Scalar abstraction and the dense kernels the transformer is built from.
//!
//! Matrices are flat row-major slices. Training runs at `f32`; gradient
//! checks run the same code at `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |r: usize, rs: isize, cc: usize, cs: isize| {
                    (r.saturating_sub(1) as isize * rs + cc.saturating_sub(1) as isize * cs) as usize
                };
                assert!(k == 0 || last(m, rsa, k, csa) < a.len(), "gemm: lhs out of bounds");
                assert!(k == 0 || last(k, rsb, n, csb) < b.len(), "gemm: rhs out of bounds");
                assert!(last(m, rsc, n, csc) < c.len(), "gemm: output out of bounds");
                // SAFETY: bounds of all three operands are checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `c (m x n) [+]= a (m x k) * b (k x n)`
pub fn matmul<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c (k x n) += a^T * b` where `a` is `m x k` and `b` is `m x n`.
pub fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(k, m, n, T::one(), a, 1, k as isize, b, n as isize, 1, T::one(), c, n as isize, 1);
}

/// `c (m x k) [+]= a (m x n) * b^T` where `b` is `k x n`.
pub fn matmul_a_bt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, n, k, T::one(), a, n as isize, 1, b, 1, n as isize, beta, c, k as isize, 1);
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// d/dx [x * sigmoid(x)]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive_products() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n, false);
        assert_eq!(c.len(), naive(&a, &b, m, k, n).len());
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
        // a^T * c  vs naive with explicit transpose
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut g = vec![0.0; k * n];
        matmul_at_b_acc(&a, &c, &mut g, m, k, n);
        for (x, y) in g.iter().zip(naive(&at, &c, k, m, n)) {
            assert!((x - y).abs() < 1e-9);
        }
        // c * b^T
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut h = vec![0.0; m * k];
        matmul_a_bt(&c, &b, &mut h, m, n, k, false);
        for (x, y) in h.iter().zip(naive(&c, &bt, m, n, k)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
