//! Automated alternating GD and minimization (auto-altGDmin) for
//! low-rank column-wise compressive sensing.
//!
//! Given per-frame measurements `y_k = A_k x_k` of the columns of a low-rank
//! `n x q` matrix `X = U B`, the solver
//!
//! 1. truncates unusually large measurements and forms the scaled
//!    back-projection `X0`,
//! 2. picks the rank `r` from the energy of `X0`'s spectrum and takes its
//!    top-`r` left singular vectors as `U0`,
//! 3. alternates an exact column-wise least-squares update of `B` with a
//!    projected (QR) gradient step on `U`, until the subspace stops moving.
//!
//! All transposes are conjugate transposes. The gradient omits the factor 2
//! of the squared loss; the step size absorbs it.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{nsmse, IterationRecord};
use crate::numerics::{
    leading_basis, left_singular_sorted, orthonormality_error, spectral_norm_power, subspace_distance, thin_qr, CMatrix, CVector,
    OrthonormalBasis, C64,
};
use crate::operators::{check_measurements, FrameOperator, LinearOperator, MeasurementSet};

/// Step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EtaMode {
    /// `eta = eta_numerator / |grad_U f(U0, B0)|` (spectral norm), set once at `t = 1`.
    GradientScaled,
    /// `eta = c / (m |U0 B0|^2)` with `m` the mean per-frame measurement count.
    Conservative { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AltGdminConfig {
    pub t_max: usize,
    pub eps_exit: f64,
    /// Energy percentage `b` of the rank rule.
    pub energy_pct: f64,
    pub eta_numerator: f64,
    pub eta_mode: EtaMode,
    /// Truncation level is `truncation_factor` times the mean squared measurement magnitude.
    pub truncation_factor: f64,
    /// Power-iteration steps for the spectral norm in the step-size rule.
    pub power_iters: usize,
}

impl Default for AltGdminConfig {
    fn default() -> Self {
        AltGdminConfig {
            t_max: 70,
            eps_exit: 0.01,
            energy_pct: 85.0,
            eta_numerator: 0.14,
            eta_mode: EtaMode::GradientScaled,
            truncation_factor: 36.0,
            power_iters: 30,
        }
    }
}

impl AltGdminConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.t_max == 0 {
            bad.push("t_max must be >= 1");
        }
        if !(self.eps_exit > 0.0) {
            bad.push("eps_exit must be > 0");
        }
        if !(self.energy_pct > 0.0 && self.energy_pct <= 100.0) {
            bad.push("energy_pct must lie in (0, 100]");
        }
        if !(self.eta_numerator > 0.0) {
            bad.push("eta_numerator must be > 0");
        }
        if let EtaMode::Conservative { c } = self.eta_mode {
            if !(c > 0.0) {
                bad.push("conservative step constant must be > 0");
            }
        }
        if !(self.truncation_factor >= 0.0) {
            bad.push("truncation_factor must be >= 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub y: MeasurementSet,
    /// Squared magnitude threshold; entries with `|y| > sqrt(gamma)` were zeroed.
    pub gamma: f64,
    pub zeroed: usize,
}

/// Zero measurements whose magnitude exceeds `sqrt(gamma)`,
/// `gamma = factor * sum |y|^2 / (total measurement count)`.
pub fn truncate_with(y: &MeasurementSet, factor: f64) -> Result<Truncation> {
    let total = y.total_len();
    if total == 0 {
        return Err(Error::InvalidParameter("truncation needs at least one measurement".into()));
    }
    let gamma = factor * y.norm_sqr() / total as f64;
    let limit = gamma.sqrt();
    let mut zeroed = 0;
    let frames = y
        .frames
        .iter()
        .map(|f| {
            f.map(|z| {
                if z.norm() <= limit {
                    z
                } else {
                    zeroed += 1;
                    C64::new(0.0, 0.0)
                }
            })
        })
        .collect();
    Ok(Truncation {
        y: MeasurementSet::new(frames),
        gamma,
        zeroed,
    })
}

/// [`truncate_with`] at the default factor 36 (threshold six times the rms magnitude).
pub fn truncate(y: &MeasurementSet) -> Result<Truncation> {
    truncate_with(y, 36.0)
}

/// `X0[:, k] = A_k^H y_k / sqrt(m_k * mbar)` with `m_k` the per-frame cell count.
pub fn build_x0(y_tnc: &MeasurementSet, ops: &[FrameOperator]) -> Result<CMatrix> {
    check_measurements(ops, y_tnc)?;
    let q = ops.len();
    let mbar = ops.iter().map(|op| op.m_cells() as f64).sum::<f64>() / q as f64;
    let n = ops[0].n();
    let cols: Vec<CVector> = ops
        .par_iter()
        .zip(y_tnc.frames.par_iter())
        .map(|(op, y)| {
            let s = 1.0 / (op.m_cells() as f64 * mbar).sqrt();
            op.backward(y) * C64::new(s, 0.0)
        })
        .collect();
    let mut x0 = CMatrix::zeros(n, q);
    for (k, c) in cols.iter().enumerate() {
        x0.set_column(k, c);
    }
    Ok(x0)
}

/// `J = floor(min(n, q, mc * min_k m_k) / 10)`.
pub fn rank_cutoff(n: usize, q: usize, mc: usize, min_m: usize) -> Result<usize> {
    let lim = n.min(q).min(mc * min_m);
    let j = lim / 10;
    if j < 1 {
        return Err(Error::RankCutoff {
            value: lim as f64 / 10.0,
        });
    }
    Ok(j)
}

/// Smallest `r` with `sum_{j<=r} s_j^2 >= (b/100) sum_{j<=J} s_j^2`.
pub fn estimate_rank(sigma: &[f64], n: usize, q: usize, mc: usize, min_m: usize, energy_pct: f64) -> Result<usize> {
    let cutoff = rank_cutoff(n, q, mc, min_m)?.min(sigma.len());
    if cutoff == 0 {
        return Err(Error::InvalidParameter("empty singular spectrum".into()));
    }
    let energy: Vec<f64> = sigma[..cutoff].iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    let target = energy_pct / 100.0 * total;
    let mut acc = 0.0;
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(cutoff)
}

/// Spectral initialization.
#[derive(Debug, Clone)]
pub struct InitResult {
    pub x0: CMatrix,
    pub gamma: f64,
    pub zeroed: usize,
    pub rank: usize,
    pub u0: OrthonormalBasis,
    pub sigma: Vec<f64>,
}

fn frame_dims(ops: &[FrameOperator]) -> (usize, usize, usize) {
    let mc = ops[0].coils();
    let min_m = ops.iter().map(|op| op.m_cells()).min().unwrap_or(0);
    (ops[0].n(), mc, min_m)
}

pub fn spectral_init(y: &MeasurementSet, ops: &[FrameOperator], cfg: &AltGdminConfig) -> Result<InitResult> {
    check_measurements(ops, y)?;
    let tr = truncate_with(y, cfg.truncation_factor)?;
    let x0 = build_x0(&tr.y, ops)?;
    let (n, mc, min_m) = frame_dims(ops);
    let q = ops.len();
    let (u_all, sigma) = left_singular_sorted(&x0)?;
    let rank = estimate_rank(&sigma, n, q, mc, min_m, cfg.energy_pct)?;
    let u0 = if sigma[0] == 0.0 {
        // no signal; any orthonormal basis will do
        OrthonormalBasis::from_trusted(CMatrix::identity(n, rank))
    } else {
        leading_basis(&u_all, rank)?
    };
    Ok(InitResult {
        x0,
        gamma: tr.gamma,
        zeroed: tr.zeroed,
        rank,
        u0,
        sigma,
    })
}

struct FrameSolve {
    b: CVector,
    /// `A_k^H (A_k U b_k - y_k)`
    back_residual: CVector,
}

fn solve_frame(k: usize, op: &FrameOperator, u: &CMatrix, y: &CVector) -> Result<FrameSolve> {
    let r = u.ncols();
    let m_total = op.m_total();
    if m_total < r {
        return Err(Error::FrameRankDeficient { frame: k, m_total, rank: r });
    }
    let au = op.apply_columns(u);
    let qr = au.clone().qr();
    let rm = qr.r();
    let rmax = (0..r).fold(0.0f64, |a, i| a.max(rm[(i, i)].norm()));
    if rmax == 0.0 || (0..r).any(|i| rm[(i, i)].norm() <= 1e-12 * rmax) {
        return Err(Error::FrameRankDeficient { frame: k, m_total, rank: r });
    }
    let qty = qr.q().ad_mul(y);
    let b = rm
        .solve_upper_triangular(&qty)
        .ok_or(Error::FrameRankDeficient { frame: k, m_total, rank: r })?;
    let resid = &au * &b - y;
    Ok(FrameSolve {
        back_residual: op.backward(&resid),
        b,
    })
}

fn solve_all(u: &CMatrix, y: &MeasurementSet, ops: &[FrameOperator]) -> Result<(CMatrix, CMatrix)> {
    let solves: Vec<FrameSolve> = ops
        .par_iter()
        .zip(y.frames.par_iter())
        .enumerate()
        .map(|(k, (op, yk))| solve_frame(k, op, u, yk))
        .collect::<Result<_>>()?;
    let (n, r, q) = (u.nrows(), u.ncols(), ops.len());
    let mut b = CMatrix::zeros(r, q);
    let mut back = CMatrix::zeros(n, q);
    for (k, s) in solves.iter().enumerate() {
        b.set_column(k, &s.b);
        back.set_column(k, &s.back_residual);
    }
    // sum_k A_k^H (A_k U b_k - y_k) b_k^H, reduced in a fixed order
    let grad = &back * b.adjoint();
    Ok((b, grad))
}

fn check_basis(u: &OrthonormalBasis, ops: &[FrameOperator]) -> Result<()> {
    if u.dim() != ops[0].n() {
        return Err(Error::Dimension(format!("basis has {} rows, images have {} pixels", u.dim(), ops[0].n())));
    }
    Ok(())
}

/// `b_k = (A_k U)^+ y_k` for every frame.
pub fn update_b(u: &OrthonormalBasis, y: &MeasurementSet, ops: &[FrameOperator]) -> Result<CMatrix> {
    check_measurements(ops, y)?;
    check_basis(u, ops)?;
    let bs: Vec<CVector> = ops
        .par_iter()
        .zip(y.frames.par_iter())
        .enumerate()
        .map(|(k, (op, yk))| solve_frame(k, op, u.matrix(), yk).map(|s| s.b))
        .collect::<Result<_>>()?;
    let mut b = CMatrix::zeros(u.rank(), ops.len());
    for (k, c) in bs.iter().enumerate() {
        b.set_column(k, c);
    }
    Ok(b)
}

/// `sum_k A_k^H (A_k U b_k - y_k) b_k^H`.
pub fn gradient_u(u: &CMatrix, b: &CMatrix, y: &MeasurementSet, ops: &[FrameOperator]) -> Result<CMatrix> {
    check_measurements(ops, y)?;
    if u.nrows() != ops[0].n() || b.nrows() != u.ncols() || b.ncols() != ops.len() {
        return Err(Error::Dimension(format!(
            "gradient: U is {:?}, B is {:?}, {} frames",
            u.shape(),
            b.shape(),
            ops.len()
        )));
    }
    let back: Vec<CVector> = ops
        .par_iter()
        .zip(y.frames.par_iter())
        .enumerate()
        .map(|(k, (op, yk))| {
            let x = u * b.column(k);
            op.backward(&(op.forward(&x) - yk))
        })
        .collect();
    let mut m = CMatrix::zeros(u.nrows(), ops.len());
    for (k, c) in back.iter().enumerate() {
        m.set_column(k, c);
    }
    Ok(m * b.adjoint())
}

/// Where the U iterations start.
#[derive(Debug, Clone)]
pub enum Init {
    Spectral,
    Warm(OrthonormalBasis),
}

#[derive(Debug, Clone)]
pub struct AltGdminOutput {
    /// Final subspace estimate.
    pub u: OrthonormalBasis,
    /// Coefficients from the last least-squares update.
    pub b: CMatrix,
    /// Low-rank estimate from the last update of `B`.
    pub x: CMatrix,
    pub eta: f64,
    pub iterations: usize,
    pub exited_early: bool,
    pub trace: Vec<IterationRecord>,
    /// Present for spectral starts.
    pub init: Option<InitResult>,
}

impl AltGdminOutput {
    pub fn rank(&self) -> usize {
        self.u.rank()
    }
}

/// Run auto-altGDmin. `truth`, when given, is used only to fill the error trace.
pub fn altgdmin_run(
    y: &MeasurementSet,
    ops: &[FrameOperator],
    cfg: &AltGdminConfig,
    init: Init,
    truth: Option<&CMatrix>,
) -> Result<AltGdminOutput> {
    cfg.validate()?;
    check_measurements(ops, y)?;
    let start = Instant::now();
    let (mut u, init_result) = match init {
        Init::Spectral => {
            let ir = spectral_init(y, ops, cfg)?;
            (ir.u0.clone(), Some(ir))
        }
        Init::Warm(u0) => {
            check_basis(&u0, ops)?;
            (u0, None)
        }
    };
    let r = u.rank();
    let mbar_total = ops.iter().map(|op| op.m_total() as f64).sum::<f64>() / ops.len() as f64;

    let mut eta = 0.0;
    let mut trace = Vec::new();
    let mut last_b = CMatrix::zeros(r, ops.len());
    let mut last_x = CMatrix::zeros(u.dim(), ops.len());
    let mut iterations = 0;
    let mut exited_early = false;

    for t in 1..=cfg.t_max {
        let (b, grad) = solve_all(u.matrix(), y, ops)?;
        let x = u.matrix() * &b;
        let error = match truth {
            Some(tr) if tr.norm_squared() > 0.0 => Some(nsmse(tr, &x)?),
            _ => None,
        };
        last_b = b;
        last_x = x;
        if t == 1 {
            eta = match cfg.eta_mode {
                EtaMode::GradientScaled => {
                    let gnorm = spectral_norm_power(&grad, cfg.power_iters);
                    if !(gnorm > 0.0) {
                        // already stationary: keep the initialization
                        exited_early = true;
                        break;
                    }
                    cfg.eta_numerator / gnorm
                }
                EtaMode::Conservative { c } => {
                    let xn = spectral_norm_power(&last_b, cfg.power_iters);
                    if !(xn > 0.0) {
                        exited_early = true;
                        break;
                    }
                    c / (mbar_total * xn * xn)
                }
            };
        }
        let stepped = u.matrix() - grad * C64::new(eta, 0.0);
        let (u_next, _) = thin_qr(&stepped)?;
        let sd = subspace_distance(&u, &u_next)? / (r as f64).sqrt();
        iterations = t;
        trace.push(IterationRecord {
            iteration: t,
            sd_step: sd,
            error,
            orthonormality: orthonormality_error(u_next.matrix()),
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        u = u_next;
        if sd < cfg.eps_exit {
            exited_early = t < cfg.t_max;
            break;
        }
    }

    Ok(AltGdminOutput {
        u,
        b: last_b,
        x: last_x,
        eta,
        iterations,
        exited_early,
        trace,
        init: init_result,
    })
}
