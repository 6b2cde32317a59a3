//! Dense linear-algebra and transform kernels.
//!
//! Matrices are `nalgebra` column-major complex matrices. An image of size
//! `n1 x n2` is vectorized column-major, so pixel `(i, j)` lives at index
//! `i + n1 * j`. All transforms are unitary.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);

/// Relative tolerance on `|U^H U - I|_F / sqrt(r)` accepted for an orthonormal basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

pub(crate) fn all_finite(data: &[C64]) -> bool {
    data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub(crate) fn ensure_finite(data: &[C64], what: &'static str) -> Result<()> {
    if all_finite(data) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Largest entry magnitude.
pub fn max_abs(data: &[C64]) -> f64 {
    data.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// `sum_i conj(a_i) b_i`
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Seeded generator for one `(purpose, index)` stream under a user seed.
pub(crate) fn seeded_rng(seed: u64, purpose: u32, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) ^ index);
    rng
}

/// Cached unitary 2D FFT plan for one grid size.
#[derive(Clone)]
pub struct Fft2 {
    n1: usize,
    n2: usize,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n1", &self.n1).field("n2", &self.n2).finish()
    }
}

impl Fft2 {
    pub fn new(n1: usize, n2: usize) -> Self {
        assert!(n1 >= 1 && n2 >= 1, "grid dimensions must be positive");
        let mut planner = FftPlanner::new();
        Fft2 {
            n1,
            n2,
            col_fwd: planner.plan_fft_forward(n1),
            col_inv: planner.plan_fft_inverse(n1),
            row_fwd: planner.plan_fft_forward(n2),
            row_inv: planner.plan_fft_inverse(n2),
            scale: 1.0 / ((n1 * n2) as f64).sqrt(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Pixel count `n1 * n2`.
    pub fn pixels(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, true)
    }

    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, false)
    }

    fn transform(&self, data: &mut [C64], forward: bool) {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(data.len(), n1 * n2, "buffer length does not match grid");
        let (cols, rows) = if forward {
            (&self.col_fwd, &self.row_fwd)
        } else {
            (&self.col_inv, &self.row_inv)
        };
        // columns are contiguous
        cols.process(data);
        if n2 > 1 {
            let mut t = vec![ZERO; n1 * n2];
            for j in 0..n2 {
                for i in 0..n1 {
                    t[j + n2 * i] = data[i + n1 * j];
                }
            }
            rows.process(&mut t);
            for i in 0..n1 {
                for j in 0..n2 {
                    data[i + n1 * j] = t[j + n2 * i];
                }
            }
        }
        for z in data.iter_mut() {
            *z *= self.scale;
        }
    }
}

/// Unitary 2D DFT of an `n1 x n2` image.
pub fn fft2_unitary(image: &CMatrix) -> Result<CMatrix> {
    ensure_finite(image.as_slice(), "image")?;
    let mut out = image.clone();
    Fft2::new(image.nrows(), image.ncols()).forward(out.as_mut_slice());
    Ok(out)
}

/// Inverse of [`fft2_unitary`].
pub fn ifft2_unitary(kspace: &CMatrix) -> Result<CMatrix> {
    ensure_finite(kspace.as_slice(), "k-space")?;
    let mut out = kspace.clone();
    Fft2::new(kspace.nrows(), kspace.ncols()).inverse(out.as_mut_slice());
    Ok(out)
}

fn row_dft(m: &CMatrix, forward: bool) -> CMatrix {
    let (n, q) = m.shape();
    if n == 0 || q == 0 {
        return m.clone();
    }
    let mut planner = FftPlanner::new();
    let fft = if forward {
        planner.plan_fft_forward(q)
    } else {
        planner.plan_fft_inverse(q)
    };
    // transpose so each row becomes a contiguous column
    let mut t = m.transpose();
    fft.process(t.as_mut_slice());
    let scale = 1.0 / (q as f64).sqrt();
    t.iter_mut().for_each(|z| *z *= scale);
    t.transpose()
}

/// Unitary 1D DFT along each row of an `n x q` matrix (temporal DFT per pixel).
pub fn row_dft_unitary(m: &CMatrix) -> CMatrix {
    row_dft(m, true)
}

/// Inverse (= adjoint) of [`row_dft_unitary`].
pub fn row_idft_unitary(m: &CMatrix) -> CMatrix {
    row_dft(m, false)
}

/// An `n x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis(CMatrix);

impl OrthonormalBasis {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.ncols() == 0 || m.nrows() < m.ncols() {
            return Err(Error::Dimension(format!(
                "orthonormal basis must be n x r with n >= r >= 1, got {} x {}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(m.as_slice(), "basis")?;
        let dev = orthonormality_error(&m);
        if dev > ORTHONORMAL_TOL * (m.ncols() as f64).sqrt() {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(OrthonormalBasis(m))
    }

    pub(crate) fn from_trusted(m: CMatrix) -> Self {
        debug_assert!(orthonormality_error(&m) <= 1e-8 * (m.ncols() as f64).sqrt());
        OrthonormalBasis(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }
}

/// `|M^H M - I|_F`
pub fn orthonormality_error(m: &CMatrix) -> f64 {
    let g = m.adjoint() * m;
    let r = g.nrows();
    (g - CMatrix::identity(r, r)).norm()
}

/// Thin QR with the diagonal of `R` real and positive.
pub fn thin_qr(m: &CMatrix) -> Result<(OrthonormalBasis, CMatrix)> {
    let (n, r) = m.shape();
    if r == 0 || n < r {
        return Err(Error::Dimension(format!("thin QR needs n >= r >= 1, got {n} x {r}")));
    }
    ensure_finite(m.as_slice(), "QR input")?;
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut rm = qr.r();
    let rmax = (0..r).fold(0.0f64, |a, i| a.max(rm[(i, i)].norm()));
    for i in 0..r {
        let d = rm[(i, i)];
        let mag = d.norm();
        if !(mag > 1e-12 * rmax) || rmax == 0.0 {
            return Err(Error::RankDeficient(format!(
                "|R[{i},{i}]| = {mag:e} relative to max {rmax:e}"
            )));
        }
        let phase = d / mag;
        q.column_mut(i).iter_mut().for_each(|z| *z *= phase);
        rm.row_mut(i).iter_mut().for_each(|z| *z *= phase.conj());
        rm[(i, i)] = C64::new(mag, 0.0);
    }
    Ok((OrthonormalBasis::from_trusted(q), rm))
}

/// Left singular vectors (thin) and singular values, sorted descending.
pub fn left_singular_sorted(m: &CMatrix) -> Result<(CMatrix, Vec<f64>)> {
    ensure_finite(m.as_slice(), "SVD input")?;
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    Ok((u.select_columns(order.iter()), sigma))
}

/// Orthonormal basis from the first `r` columns of sorted left singular vectors.
pub(crate) fn leading_basis(u: &CMatrix, r: usize) -> Result<OrthonormalBasis> {
    let lead = u.columns(0, r).clone_owned();
    // re-orthonormalize to remove accumulated drift in the returned factor
    Ok(thin_qr(&lead)?.0)
}

/// Top-`r` left singular vectors and the full descending singular spectrum.
pub fn top_r_left_singular(m: &CMatrix, r: usize) -> Result<(OrthonormalBasis, Vec<f64>)> {
    let (n, q) = m.shape();
    let k = n.min(q);
    if r == 0 || r > k {
        return Err(Error::InvalidParameter(format!(
            "requested {r} singular vectors from a {n} x {q} matrix"
        )));
    }
    let (u, sigma) = left_singular_sorted(m)?;
    Ok((leading_basis(&u, r)?, sigma))
}

/// Subspace distance `|(I - U1 U1^H) U2|_F`.
pub fn subspace_distance(u1: &OrthonormalBasis, u2: &OrthonormalBasis) -> Result<f64> {
    if u1.dim() != u2.dim() {
        return Err(Error::Dimension(format!(
            "subspace distance between bases of dimension {} and {}",
            u1.dim(),
            u2.dim()
        )));
    }
    let (a, b) = (u1.matrix(), u2.matrix());
    let proj = a * (a.adjoint() * b);
    Ok((b - proj).norm())
}

/// Spectral norm estimate by power iteration on `M^H M` from a fixed start vector.
pub fn spectral_norm_power(m: &CMatrix, iters: usize) -> f64 {
    let c = m.ncols();
    if c == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mut v = CVector::from_element(c, C64::new(1.0 / (c as f64).sqrt(), 0.0));
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let w = m * &v;
        est = w.norm();
        let z = m.adjoint() * w;
        let zn = z.norm();
        if zn == 0.0 {
            // start vector in the null space; fall back to the largest column
            return (0..c).map(|j| m.column(j).norm()).fold(est, f64::max);
        }
        v = z / C64::new(zn, 0.0);
    }
    let w = m * &v;
    est.max(w.norm())
}
