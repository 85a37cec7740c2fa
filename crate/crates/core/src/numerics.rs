//! Dense complex linear-algebra kernels shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Hermitian positive-definite
//! systems go through a hand-rolled Cholesky factorization so that a
//! breakdown can report the offending leading minor; unitary
//! factorizations (QR) are delegated to nalgebra.
//!
//! Inner products and gradients use the real inner product
//! `<A, B> = Re tr(A^H B)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;

/// Tolerance for structural checks (Hermitian, unitary inputs).
pub const STRUCTURE_TOL: f64 = 1e-10;
/// Tolerance for numerical agreement after iterative work.
pub const NUMERIC_TOL: f64 = 1e-9;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Checks that a matrix has positive dimensions and only finite entries.
pub fn checked(m: CMat) -> Result<CMat> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Validation(format!(
            "matrix must have positive dimensions, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(pos) = m.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Validation(format!("non-finite entry at linear index {pos}")));
    }
    Ok(m)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `Re tr(A^H B)`.
pub fn real_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn fro_norm_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `||A - A^H||_F / ||A||_F` (absolute when `A = 0`).
pub fn hermitian_deviation(a: &CMat) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    let dev = (a - a.adjoint()).norm();
    let scale = a.norm();
    if scale > 0.0 {
        dev / scale
    } else {
        dev
    }
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// `||U^H U - I||_F`.
pub fn unitary_deviation(u: &CMat) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    (u.adjoint() * u - identity(u.nrows())).norm()
}

/// `||A - A^T||_F`.
pub fn symmetry_deviation(a: &CMat) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    (a - a.transpose()).norm()
}

/// Lower-triangular Cholesky factor `L` with `A = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMat,
}

impl Cholesky {
    /// Factors `A`, reading only its lower triangle.
    pub fn factor(a: &CMat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Validation(format!(
                "Cholesky needs a nonempty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for p in 0..j {
                d -= l[(j, p)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular { minor: j + 1, size: n });
            }
            let djj = d.sqrt();
            l[(j, j)] = C64::new(djj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_l(&self) -> &CMat {
        &self.l
    }

    /// Solves `A X = B` by forward then backward substitution.
    pub fn solve(&self, b: &CMat) -> CMat {
        let n = self.l.nrows();
        assert_eq!(b.nrows(), n, "right-hand side row count mismatch");
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for p in 0..i {
                    s -= self.l[(i, p)] * x[(p, c)];
                }
                x[(i, c)] = s / self.l[(i, i)].re;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for p in (i + 1)..n {
                    s -= self.l[(p, i)].conj() * x[(p, c)];
                }
                x[(i, c)] = s / self.l[(i, i)].re;
            }
        }
        x
    }

    /// Natural log-determinant of the factored matrix.
    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.l.nrows()).map(|j| self.l[(j, j)].re.ln()).sum::<f64>()
    }
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn hermitian_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Validation(format!(
            "hermitian_solve dimension mismatch: A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let dev = hermitian_deviation(a);
    if dev > STRUCTURE_TOL {
        return Err(Error::Validation(format!(
            "matrix is not Hermitian (relative deviation {dev:.3e})"
        )));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

/// `log2 det(A)` of a Hermitian positive-definite matrix.
pub fn logdet2_hpd(a: &CMat) -> Result<f64> {
    let dev = hermitian_deviation(a);
    if dev > STRUCTURE_TOL {
        return Err(Error::Validation(format!(
            "matrix is not Hermitian (relative deviation {dev:.3e})"
        )));
    }
    Ok(Cholesky::factor(a)?.ln_det() / std::f64::consts::LN_2)
}

/// Symmetric unitary `U U^T` built from a unitary Takagi factor.
pub fn takagi_from_unitary(u: &CMat) -> Result<CMat> {
    let dev = unitary_deviation(u);
    if dev > STRUCTURE_TOL {
        return Err(Error::Validation(format!(
            "Takagi factor is not unitary (||U^H U - I||_F = {dev:.3e})"
        )));
    }
    Ok(u * u.transpose())
}

/// Central difference `(f(X + hD) - f(X - hD)) / 2h`.
pub fn directional_derivative<F>(mut f: F, x: &CMat, d: &CMat, h: f64) -> Result<f64>
where
    F: FnMut(&CMat) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Validation(format!("step must be positive, got {h}")));
    }
    let plus = f(&(x + d.scale(h)))?;
    let minus = f(&(x - d.scale(h)))?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!("f(X+hD) = {plus}, f(X-hD) = {minus}")));
    }
    Ok((plus - minus) / (2.0 * h))
}

/// Matrix of i.i.d. circularly-symmetric complex Gaussians with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// Unitary factor of a QR decomposition with the phases of `R`'s diagonal
/// absorbed into `Q`, so the result is unique for full-rank input.
pub fn qr_unitary(m: &CMat) -> CMat {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        let rjj = r[(j, j)];
        let mag = rjj.norm();
        let phase = if mag > 0.0 { rjj / mag } else { ONE };
        for i in 0..q.nrows() {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Haar-distributed unitary matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    qr_unitary(&complex_gaussian(n, n, rng))
}

/// Copies rows `[r0, r0 + nr)` and columns `[c0, c0 + nc)`.
pub fn block(m: &CMat, r0: usize, c0: usize, nr: usize, nc: usize) -> CMat {
    m.view((r0, c0), (nr, nc)).into_owned()
}
