//! Minimal dense layers with hand-written backward passes, generic over
//! `f32` (training) and `f64` (gradient checks). Activations are stored
//! position-major: a `rows × cols` row-major matrix.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static {
    /// `C ← A·B + beta·C` with row/column strides as in BLAS.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

impl Scalar for f32 {
    fn gemm_raw(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: the asserts above bound every index the strides can reach.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    fn gemm_raw(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: as for f32.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

#[inline]
pub fn cast<F: Scalar>(x: f64) -> F {
    F::from(x).expect("representable")
}

/// `C (m×n) = op(A) · op(B)`, accumulating into `C` when `acc`.
/// `A` is stored `m×k` (or `k×m` when `ta`), `B` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn matmul<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], ta: bool, b: &[F], tb: bool, c: &mut [F], acc: bool) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if acc { F::one() } else { F::zero() };
    if k == 0 {
        if !acc {
            c[..m * n].iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    F::gemm_raw(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
pub fn silu<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

/// Derivative of `silu` at `x`.
#[inline]
pub fn silu_grad<F: Scalar>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

/// Column sums of a `rows × cols` matrix added into `out`.
pub fn add_col_sums<F: Scalar>(x: &[F], cols: usize, out: &mut [F]) {
    for row in x.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

/// Add `v` to every row.
pub fn add_row<F: Scalar>(x: &mut [F], v: &[F]) {
    for row in x.chunks_exact_mut(v.len()) {
        for (a, b) in row.iter_mut().zip(v) {
            *a += *b;
        }
    }
}

/// `out += a ⊗ b`, with `out` stored `a.len() × b.len()`.
pub fn add_outer<F: Scalar>(a: &[F], b: &[F], out: &mut [F]) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == F::zero() {
            continue;
        }
        for (o, &bj) in out[i * b.len()..(i + 1) * b.len()].iter_mut().zip(b) {
            *o += ai * bj;
        }
    }
}

/// Affine map `y = x·W + b` with `W` stored `n_in × n_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<F>,
    pub b: Vec<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![F::zero(); n_in * n_out],
            b: vec![F::zero(); n_out],
        }
    }

    /// Normal weights with variance `gain / n_in`, zero bias.
    pub fn init(n_in: usize, n_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let std = (gain / n_in.max(1) as f64).sqrt();
        let mut l = Self::zeros(n_in, n_out);
        for w in &mut l.w {
            let z: f64 = StandardNormal.sample(rng);
            *w = cast(z * std);
        }
        l
    }

    pub fn forward(&self, x: &[F], rows: usize) -> Vec<F> {
        debug_assert_eq!(x.len(), rows * self.n_in);
        let mut y = vec![F::zero(); rows * self.n_out];
        for row in y.chunks_exact_mut(self.n_out) {
            row.copy_from_slice(&self.b);
        }
        matmul(rows, self.n_in, self.n_out, x, false, &self.w, false, &mut y, true);
        y
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx` when
    /// `want_dx`.
    pub fn backward(&self, x: &[F], dy: &[F], rows: usize, grad: &mut Linear<F>, want_dx: bool) -> Option<Vec<F>> {
        matmul(self.n_in, rows, self.n_out, x, true, dy, false, &mut grad.w, true);
        add_col_sums(dy, self.n_out, &mut grad.b);
        want_dx.then(|| {
            let mut dx = vec![F::zero(); rows * self.n_in];
            matmul(rows, self.n_out, self.n_in, dy, false, &self.w, true, &mut dx, false);
            dx
        })
    }

    pub fn convert<G: Scalar>(&self) -> Linear<G> {
        Linear {
            n_in: self.n_in,
            n_out: self.n_out,
            w: self.w.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
            b: self.b.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
        }
    }
}

/// 3×3, stride-1, zero-padded patches of an `h × w × c` grid:
/// `(h·w) × (9·c)`, tap-major.
pub fn im2col<F: Scalar>(x: &[F], h: usize, w: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); h * w * 9 * c];
    for i in 0..h {
        for j in 0..w {
            let row = &mut out[(i * w + j) * 9 * c..(i * w + j + 1) * 9 * c];
            for di in 0..3 {
                for dj in 0..3 {
                    let (y, x_) = (i + di, j + dj);
                    if y == 0 || x_ == 0 || y > h || x_ > w {
                        continue;
                    }
                    let src = ((y - 1) * w + (x_ - 1)) * c;
                    let tap = (di * 3 + dj) * c;
                    row[tap..tap + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back to the grid.
pub fn col2im<F: Scalar>(cols: &[F], h: usize, w: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); h * w * c];
    for i in 0..h {
        for j in 0..w {
            let row = &cols[(i * w + j) * 9 * c..(i * w + j + 1) * 9 * c];
            for di in 0..3 {
                for dj in 0..3 {
                    let (y, x_) = (i + di, j + dj);
                    if y == 0 || x_ == 0 || y > h || x_ > w {
                        continue;
                    }
                    let dst = ((y - 1) * w + (x_ - 1)) * c;
                    let tap = (di * 3 + dj) * c;
                    for (o, v) in out[dst..dst + c].iter_mut().zip(&row[tap..tap + c]) {
                        *o += *v;
                    }
                }
            }
        }
    }
    out
}
