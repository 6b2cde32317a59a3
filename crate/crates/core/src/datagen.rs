//! Synthetic ground truth: three-level sequences, low-rank matrices and a
//! moving-disk dynamic phantom.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{left_singular_sorted, row_idft_unitary, seeded_rng, thin_qr, CMatrix, CVector, C64};

const STREAM_MEAN: u32 = 10;
const STREAM_LEFT: u32 = 11;
const STREAM_RIGHT: u32 = 12;
const STREAM_RESIDUAL: u32 = 13;
const STREAM_PHANTOM: u32 = 14;
const STREAM_DRIFT: u32 = 15;

/// Bound on the incoherence of generated low-rank factors.
pub const MAX_INCOHERENCE: f64 = 3.0;
const MAX_REDRAWS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ResidualKind {
    DenseSmall,
    /// Each row of `E` has `s` nonzero temporal DFT coefficients.
    TemporalFourierSparse { s: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n1: usize,
    pub n2: usize,
    pub q: usize,
    pub r: usize,
    /// Frobenius norms of `zbar 1^T`, `X` and `E`.
    #[serde(default = "default_ratios")]
    pub energy_ratios: [f64; 3],
    #[serde(default = "default_residual")]
    pub residual: ResidualKind,
    /// Condition number of the geometric singular spectrum of `X`.
    #[serde(default = "default_condition")]
    pub condition: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratios() -> [f64; 3] {
    [100.0, 10.0, 1.0]
}
fn default_residual() -> ResidualKind {
    ResidualKind::DenseSmall
}
fn default_condition() -> f64 {
    5.0
}

impl SyntheticSpec {
    pub fn new(n1: usize, n2: usize, q: usize, r: usize, seed: u64) -> Self {
        SyntheticSpec {
            n1,
            n2,
            q,
            r,
            energy_ratios: default_ratios(),
            residual: default_residual(),
            condition: default_condition(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n1 * self.n2;
        if n == 0 || self.q == 0 {
            return Err(Error::Generator("image size and frame count must be positive".into()));
        }
        if self.r == 0 || self.r > n.min(self.q) {
            return Err(Error::Generator(format!("rank {} infeasible for n = {n}, q = {}", self.r, self.q)));
        }
        let [a, b, c] = self.energy_ratios;
        if !(a >= 0.0 && b >= 0.0 && c >= 0.0) || !(a + b + c > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Generator("energy ratios must be finite, nonnegative and not all zero".into()));
        }
        if b > a || c > b {
            return Err(Error::Generator("energy ratios must be descending (mean >= low-rank >= residual)".into()));
        }
        if !(self.condition >= 1.0) {
            return Err(Error::Generator("condition number must be >= 1".into()));
        }
        if let ResidualKind::TemporalFourierSparse { s } = self.residual {
            if s == 0 || s > self.q {
                return Err(Error::Generator(format!("residual sparsity {s} outside 1..={}", self.q)));
            }
        }
        Ok(())
    }
}

/// `Z = zbar 1^T + X + E` with its components.
#[derive(Debug, Clone)]
pub struct ThreeLevel {
    pub z: CMatrix,
    pub mean: CVector,
    pub lowrank: CMatrix,
    pub residual: CMatrix,
    /// Incoherence of `lowrank` (0 when it is zero).
    pub mu: f64,
}

impl ThreeLevel {
    pub fn mean_matrix(&self) -> CMatrix {
        broadcast(&self.mean, self.z.ncols())
    }
}

pub(crate) fn broadcast(v: &CVector, q: usize) -> CMatrix {
    CMatrix::from_fn(v.len(), q, |i, _| v[i])
}

/// Smooth positive image: a few Gaussian blobs on a constant floor.
fn smooth_image(n1: usize, n2: usize, seed: u64) -> CVector {
    let mut rng = seeded_rng(seed, STREAM_MEAN, 0);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let ci = rng.random::<f64>() * n1 as f64;
            let cj = rng.random::<f64>() * n2 as f64;
            let w = (0.1 + 0.2 * rng.random::<f64>()) * n1.max(n2) as f64;
            let a = 0.5 + 0.5 * rng.random::<f64>();
            (ci, cj, w, a)
        })
        .collect();
    CVector::from_fn(n1 * n2, |p, _| {
        let (i, j) = ((p % n1) as f64, (p / n1) as f64);
        let v: f64 = blobs
            .iter()
            .map(|&(ci, cj, w, a)| a * (-((i - ci).powi(2) + (j - cj).powi(2)) / (2.0 * w * w)).exp())
            .sum();
        C64::new(0.2 + v, 0.0)
    })
}

fn gaussian_cmat(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// A rank-`r` matrix `U diag(sigma) V^H` with its factors.
#[derive(Debug, Clone)]
pub struct LowRank {
    pub x: CMatrix,
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
    pub mu: f64,
}

/// Geometric spectrum from 1 down to `1 / condition`.
pub fn geometric_spectrum(r: usize, condition: f64) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    (0..r).map(|i| condition.powf(-(i as f64) / (r - 1) as f64)).collect()
}

/// Random rank-`r` matrix with geometric spectrum and incoherence at most
/// [`MAX_INCOHERENCE`]; the right factor is redrawn until the bound holds.
pub fn low_rank_matrix(n: usize, q: usize, r: usize, condition: f64, seed: u64) -> Result<LowRank> {
    if r == 0 || r > n.min(q) {
        return Err(Error::Generator(format!("rank {r} infeasible for {n} x {q}")));
    }
    let mut rng = seeded_rng(seed, STREAM_LEFT, 0);
    let (u, _) = thin_qr(&gaussian_cmat(n, r, &mut rng))?;
    let u = u.into_matrix();
    let sigma = geometric_spectrum(r, condition);
    let s = CMatrix::from_diagonal(&CVector::from_iterator(r, sigma.iter().map(|&v| C64::new(v, 0.0))));
    for attempt in 0..MAX_REDRAWS {
        let mut rng = seeded_rng(seed, STREAM_RIGHT, attempt);
        // unit-modulus entries keep row energies flat before orthonormalization
        let raw = CMatrix::from_fn(q, r, |_, _| C64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()));
        let Ok((v, _)) = thin_qr(&raw) else { continue };
        let v = v.into_matrix();
        let x = &u * &s * v.adjoint();
        let mu = incoherence(&x)?;
        if mu <= MAX_INCOHERENCE {
            return Ok(LowRank { x, u, sigma, v, mu });
        }
    }
    Err(Error::Generator(format!(
        "no right factor with incoherence <= {MAX_INCOHERENCE} after {MAX_REDRAWS} draws"
    )))
}

fn scale_to(m: &mut CMatrix, target: f64) {
    let nm = m.norm();
    if target == 0.0 || nm == 0.0 {
        m.fill(C64::new(0.0, 0.0));
    } else {
        *m *= C64::new(target / nm, 0.0);
    }
}

/// Generate a three-level sequence with the requested Frobenius norms.
pub fn gen_three_level(spec: &SyntheticSpec) -> Result<ThreeLevel> {
    spec.validate()?;
    let (n, q) = (spec.n1 * spec.n2, spec.q);
    let [mean_norm, lr_norm, res_norm] = spec.energy_ratios;

    let mut mean = smooth_image(spec.n1, spec.n2, spec.seed);
    // |zbar 1^T|_F = sqrt(q) |zbar|
    let target = mean_norm / (q as f64).sqrt();
    if target == 0.0 {
        mean.fill(C64::new(0.0, 0.0));
    } else {
        mean *= C64::new(target / mean.norm(), 0.0);
    }

    let (mut lowrank, mu) = if lr_norm > 0.0 {
        let lr = low_rank_matrix(n, q, spec.r, spec.condition, spec.seed)?;
        (lr.x, lr.mu)
    } else {
        (CMatrix::zeros(n, q), 0.0)
    };
    scale_to(&mut lowrank, lr_norm);

    let mut rng = seeded_rng(spec.seed, STREAM_RESIDUAL, 0);
    let mut residual = match spec.residual {
        ResidualKind::DenseSmall => gaussian_cmat(n, q, &mut rng),
        ResidualKind::TemporalFourierSparse { s } => {
            let mut spec_rows = CMatrix::zeros(n, q);
            for i in 0..n {
                for f in rand::seq::index::sample(&mut rng, q, s).iter() {
                    spec_rows[(i, f)] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                }
            }
            row_idft_unitary(&spec_rows)
        }
    };
    scale_to(&mut residual, res_norm);

    let z = broadcast(&mean, q) + &lowrank + &residual;
    Ok(ThreeLevel {
        z,
        mean,
        lowrank,
        residual,
        mu,
    })
}

/// Stream whose rank-`r` subspace rotates slowly: frame `k` uses the basis
/// `orth(U0 + (k / q) * drift * W)` with a fixed random direction `W`.
/// `drift = 0` gives a stationary subspace.
pub fn drifting_subspace_stream(n: usize, q: usize, r: usize, drift: f64, seed: u64) -> Result<CMatrix> {
    if r == 0 || r > n {
        return Err(Error::Generator(format!("rank {r} infeasible for n = {n}")));
    }
    let mut rng = seeded_rng(seed, STREAM_DRIFT, 0);
    let (u0, _) = thin_qr(&gaussian_cmat(n, r, &mut rng))?;
    let w = gaussian_cmat(n, r, &mut rng) / C64::new((n as f64).sqrt(), 0.0);
    let sigma = geometric_spectrum(r, 2.0);
    let mut out = CMatrix::zeros(n, q);
    for k in 0..q {
        let t = k as f64 / q as f64;
        let basis = if drift == 0.0 {
            u0.matrix().clone()
        } else {
            thin_qr(&(u0.matrix() + &w * C64::new(drift * t, 0.0)))?.0.into_matrix()
        };
        let coeff = CVector::from_fn(r, |i, _| {
            C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sigma[i]
        });
        out.set_column(k, &(basis * coeff));
    }
    Ok(out)
}

/// `mu = max_k |x_k|^2 q / (r |X|^2)`, `r` the numerical rank at relative tolerance 1e-8.
pub fn incoherence(x: &CMatrix) -> Result<f64> {
    let (_, sigma) = left_singular_sorted(x)?;
    let top = sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Err(Error::InvalidParameter("incoherence of an all-zero matrix".into()));
    }
    let rank = sigma.iter().filter(|&&s| s > 1e-8 * top).count();
    let q = x.ncols() as f64;
    let max_col = (0..x.ncols()).map(|k| x.column(k).norm_squared()).fold(0.0, f64::max);
    Ok(max_col * q / (rank as f64 * top * top))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    /// Peak displacement of the moving disk along the second image axis, in pixels.
    pub amplitude: f64,
    /// Motion period in frames.
    pub period: f64,
    pub disk_radius: f64,
    /// Edge width of the `tanh` disk profiles, in pixels.
    pub edge: f64,
    pub disk_intensity: f64,
    pub uptake_max: f64,
    /// Uptake time constant in frames.
    pub uptake_tau: f64,
    pub uptake_radius: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            amplitude: 4.0,
            period: 20.0,
            disk_radius: 4.0,
            edge: 1.0,
            disk_intensity: 1.0,
            uptake_max: 0.8,
            uptake_tau: 15.0,
            uptake_radius: 3.0,
            seed: 0,
        }
    }
}

fn uptake_offset(p: &PhantomParams) -> f64 {
    p.disk_radius + p.uptake_radius + 3.0 * p.edge
}

fn soft_disk(dist: f64, radius: f64, edge: f64) -> f64 {
    0.5 * (1.0 - ((dist - radius) / edge).tanh())
}

/// Uptake curve `u(k) = u_max (1 - exp(-k / tau))`.
pub fn uptake_curve(params: &PhantomParams, k: usize) -> f64 {
    params.uptake_max * (1.0 - (-(k as f64) / params.uptake_tau).exp())
}

/// Largest frame-to-frame change any pixel can see:
/// disk slope `I / (2 w)` times peak displacement `A 2 pi / P`, plus the
/// largest uptake increment `u_max (1 - exp(-1 / tau))`.
pub fn phantom_motion_bound(params: &PhantomParams) -> f64 {
    params.disk_intensity / (2.0 * params.edge) * params.amplitude * 2.0 * PI / params.period
        + params.uptake_max * (1.0 - (-1.0 / params.uptake_tau).exp())
}

/// Static ellipse background, a sinusoidally translating disk and a
/// perfusion-like region with monotone uptake. Returns `n x q` (real-valued).
pub fn gen_moving_disk_phantom(n1: usize, n2: usize, q: usize, params: &PhantomParams) -> Result<CMatrix> {
    if n1 == 0 || n2 == 0 || q == 0 {
        return Err(Error::Generator("phantom dimensions must be positive".into()));
    }
    let p = params;
    if !(p.edge > 0.0 && p.period > 0.0 && p.uptake_tau > 0.0 && p.disk_radius > 0.0 && p.amplitude >= 0.0) {
        return Err(Error::Generator("phantom edge, period, tau and radius must be positive".into()));
    }
    let (ci, cj) = ((n1 as f64 - 1.0) / 2.0, (n2 as f64 - 1.0) / 2.0);
    let reach = p.amplitude + p.disk_radius + 2.0 * p.edge;
    if reach > ci.min(cj) {
        return Err(Error::Generator(format!(
            "moving disk (reach {reach:.1} px) leaves the {n1} x {n2} field of view"
        )));
    }
    // uptake region sits off the motion track, toward the first axis
    let ui = ci - uptake_offset(p);
    let uj = cj;
    if ui - p.uptake_radius < 0.0 {
        return Err(Error::Generator("uptake region does not fit beside the moving disk".into()));
    }
    let mut rng = seeded_rng(p.seed, STREAM_PHANTOM, 0);
    let phase = 2.0 * PI * rng.random::<f64>();
    let (ai, aj) = (0.45 * n1 as f64, 0.45 * n2 as f64);

    let n = n1 * n2;
    let background: Vec<f64> = (0..n)
        .map(|idx| {
            let (i, j) = ((idx % n1) as f64, (idx / n1) as f64);
            let rho = (((i - ci) / ai).powi(2) + ((j - cj) / aj).powi(2)).sqrt();
            0.5 * soft_disk(rho * ai.min(aj), ai.min(aj), p.edge)
        })
        .collect();
    let region: Vec<f64> = (0..n)
        .map(|idx| {
            let (i, j) = ((idx % n1) as f64, (idx / n1) as f64);
            soft_disk(((i - ui).powi(2) + (j - uj).powi(2)).sqrt(), p.uptake_radius, p.edge)
        })
        .collect();

    let mut out = CMatrix::zeros(n, q);
    for k in 0..q {
        let dj = cj + p.amplitude * (2.0 * PI * k as f64 / p.period + phase).sin();
        let u = uptake_curve(p, k);
        for idx in 0..n {
            let (i, j) = ((idx % n1) as f64, (idx / n1) as f64);
            let disk = p.disk_intensity * soft_disk(((i - ci).powi(2) + (j - dj).powi(2)).sqrt(), p.disk_radius, p.edge);
            out[(idx, k)] = C64::new(background[idx] + disk + u * region[idx], 0.0);
        }
    }
    Ok(out)
}
