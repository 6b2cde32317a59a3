//! The three-level pipeline: mean image, low-rank part, modeling-error correction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::altgdmin::{altgdmin_run, AltGdminConfig, AltGdminOutput, Init};
use crate::cgls::{cgls_solve, CglsConfig, CglsOutcome};
use crate::datagen::broadcast;
use crate::error::{Error, Result, Stage};
use crate::metrics::{nsmse, ReconReport, StageTimer};
use crate::numerics::{ensure_finite, max_abs, row_dft_unitary, row_idft_unitary, CMatrix, CVector, OrthonormalBasis, C64};
use crate::operators::{adjoint_seq, apply_seq, check_measurements, FrameOperator, MeasurementSet, Stacked};

/// `Z = zbar 1^T + X + E`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub mean: CVector,
    pub lowrank: CMatrix,
    pub residual: CMatrix,
}

impl HierarchicalModel {
    pub fn new(mean: CVector, lowrank: CMatrix, residual: CMatrix) -> Result<Self> {
        if lowrank.shape() != residual.shape() || lowrank.nrows() != mean.len() {
            return Err(Error::Dimension(format!(
                "model parts disagree: mean {}, low-rank {:?}, residual {:?}",
                mean.len(),
                lowrank.shape(),
                residual.shape()
            )));
        }
        Ok(HierarchicalModel { mean, lowrank, residual })
    }

    pub fn q(&self) -> usize {
        self.lowrank.ncols()
    }

    /// `zbar 1^T`
    pub fn mean_part(&self) -> CMatrix {
        broadcast(&self.mean, self.q())
    }

    /// `zbar 1^T + X`
    pub fn mean_plus_lowrank(&self) -> CMatrix {
        self.mean_part() + &self.lowrank
    }

    /// `(zbar 1^T + X) + E`, always evaluated in this order.
    pub fn reconstruct(&self) -> CMatrix {
        self.mean_plus_lowrank() + &self.residual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MecVariant {
    /// Per-frame CGLS with a fixed iteration count.
    Unstructured,
    /// ISTA with rows sparse in the temporal DFT.
    TemporalFourierSparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MecConfig {
    pub variant: MecVariant,
    pub ista_max: usize,
    pub ista_relchange: f64,
    pub ista_omega_factor: f64,
    pub cgls_iters: usize,
}

impl Default for MecConfig {
    fn default() -> Self {
        MecConfig {
            variant: MecVariant::Unstructured,
            ista_max: 10,
            ista_relchange: 0.0025,
            ista_omega_factor: 0.001,
            cgls_iters: 3,
        }
    }
}

impl MecConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.ista_max == 0 {
            bad.push("ista_max must be >= 1".to_string());
        }
        if !(self.ista_relchange > 0.0) {
            bad.push(format!("ista_relchange must be > 0 (got {})", self.ista_relchange));
        }
        if !(self.ista_omega_factor > 0.0) {
            bad.push(format!("ista_omega_factor must be > 0 (got {})", self.ista_omega_factor));
        }
        if self.cgls_iters == 0 {
            bad.push("cgls_iters must be >= 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }
}

/// Least-squares mean image, `min_z sum_k |y_k - A_k z|^2`, by CGLS from zero.
pub fn estimate_mean_with(y: &MeasurementSet, ops: &[FrameOperator], cfg: &CglsConfig) -> Result<CglsOutcome> {
    check_measurements(ops, y)?;
    let stacked = Stacked::new(ops)?;
    cgls_solve(&stacked, &stacked.stack(y), cfg, None)
}

/// Mean image with tolerance 1e-3 and at most 10 iterations.
pub fn estimate_mean(y: &MeasurementSet, ops: &[FrameOperator]) -> Result<CVector> {
    Ok(estimate_mean_with(y, ops, &CglsConfig::mean_default())?.x)
}

/// `y_k - A_k zbar`
pub fn residual_1(y: &MeasurementSet, ops: &[FrameOperator], mean: &CVector) -> Result<MeasurementSet> {
    check_measurements(ops, y)?;
    if mean.len() != ops[0].n() {
        return Err(Error::Dimension(format!("mean has {} pixels, images have {}", mean.len(), ops[0].n())));
    }
    let frames = ops
        .par_iter()
        .zip(y.frames.par_iter())
        .map(|(op, yk)| yk - op.apply(mean).expect("length checked"))
        .collect();
    Ok(MeasurementSet::new(frames))
}

/// `y_k - A_k zbar - A_k x_k`
pub fn residual_2(y: &MeasurementSet, ops: &[FrameOperator], mean: &CVector, x: &CMatrix) -> Result<MeasurementSet> {
    let r1 = residual_1(y, ops, mean)?;
    r1.sub(&apply_seq(ops, x)?)
}

/// Per-frame CGLS from zero with a fixed iteration count.
pub fn mec_unstructured(y: &MeasurementSet, ops: &[FrameOperator], iters: usize) -> Result<CMatrix> {
    check_measurements(ops, y)?;
    let cfg = CglsConfig::fixed(iters);
    let cols: Vec<CVector> = ops
        .par_iter()
        .zip(y.frames.par_iter())
        .map(|(op, yk)| cgls_solve(op, yk, &cfg, None).map(|o| o.x))
        .collect::<Result<_>>()?;
    let mut e = CMatrix::zeros(ops[0].n(), ops.len());
    for (k, c) in cols.iter().enumerate() {
        e.set_column(k, c);
    }
    Ok(e)
}

/// Complex soft threshold: `s / |s| * (|s| - omega)` when `|s| > omega`, else 0.
pub fn soft_threshold(s: C64, omega: f64) -> C64 {
    let a = s.norm();
    if a > omega {
        s * ((a - omega) / a)
    } else {
        C64::new(0.0, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct IstaOutcome {
    pub e: CMatrix,
    pub iterations: usize,
    pub omega: f64,
    /// `|M_t - M_{t-1}|_F / |M_{t-1}|_F` for t = 1, 2, ...
    pub rel_changes: Vec<f64>,
    pub converged: bool,
}

/// ISTA for a residual whose rows are sparse in the temporal DFT.
pub fn mec_ista(y: &MeasurementSet, ops: &[FrameOperator], cfg: &MecConfig) -> Result<IstaOutcome> {
    cfg.validate()?;
    check_measurements(ops, y)?;
    let (n, q) = (ops[0].n(), ops.len());
    let mut e = CMatrix::zeros(n, q);
    let mut prev: Option<CMatrix> = None;
    let mut omega = 0.0;
    let mut rel_changes = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for tau in 0..cfg.ista_max {
        let resid = y.sub(&apply_seq(ops, &e)?)?;
        let m = row_dft_unitary(&(&e + adjoint_seq(ops, &resid)?));
        iterations = tau + 1;
        if tau == 0 {
            let top = max_abs(m.as_slice());
            if top == 0.0 {
                converged = true;
                break;
            }
            omega = cfg.ista_omega_factor * top;
        }
        e = row_idft_unitary(&m.map(|s| soft_threshold(s, omega)));
        ensure_finite(e.as_slice(), "ISTA iterate")?;
        if let Some(p) = &prev {
            let pn = p.norm();
            let rel = if pn > 0.0 { (&m - p).norm() / pn } else { 0.0 };
            rel_changes.push(rel);
            if rel < cfg.ista_relchange {
                converged = true;
                break;
            }
        }
        prev = Some(m);
    }
    Ok(IstaOutcome {
        e,
        iterations,
        omega,
        rel_changes,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Unstructured residual, per-frame CGLS.
    Mri1,
    /// Temporal-Fourier-sparse residual, ISTA.
    Mri2,
}

impl Method {
    pub fn mec_variant(self) -> MecVariant {
        match self {
            Method::Mri1 => MecVariant::Unstructured,
            Method::Mri2 => MecVariant::TemporalFourierSparse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mri1 => "altgdmin-mri1",
            Method::Mri2 => "altgdmin-mri2",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mean: CglsConfig,
    pub altgdmin: AltGdminConfig,
    pub mec: MecConfig,
    /// Zero wall-clock fields in the report so identical runs give identical reports.
    pub reproducible: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let problems: Vec<String> = [self.mean.validate(), self.altgdmin.validate(), self.mec.validate()]
            .into_iter()
            .filter_map(|r| r.err().map(|e| e.to_string()))
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    fn echo(&self, method: Method) -> BTreeMap<String, String> {
        let a = &self.altgdmin;
        let m = &self.mec;
        [
            ("method", method.name().to_string()),
            ("mean_tol", self.mean.tol.to_string()),
            ("mean_max_iter", self.mean.max_iter.to_string()),
            ("t_max", a.t_max.to_string()),
            ("eps_exit", a.eps_exit.to_string()),
            ("energy_pct", a.energy_pct.to_string()),
            ("eta_numerator", a.eta_numerator.to_string()),
            ("eta_mode", format!("{:?}", a.eta_mode)),
            ("truncation_factor", a.truncation_factor.to_string()),
            ("mec_variant", format!("{:?}", method.mec_variant())),
            ("cgls_iters", m.cgls_iters.to_string()),
            ("ista_max", m.ista_max.to_string()),
            ("ista_relchange", m.ista_relchange.to_string()),
            ("ista_omega_factor", m.ista_omega_factor.to_string()),
            ("reproducible", self.reproducible.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Residual correction with the configured variant; returns `E` and the iteration count.
pub fn mec_correct(y: &MeasurementSet, ops: &[FrameOperator], cfg: &MecConfig) -> Result<(CMatrix, usize)> {
    match cfg.variant {
        MecVariant::Unstructured => Ok((mec_unstructured(y, ops, cfg.cgls_iters)?, cfg.cgls_iters)),
        MecVariant::TemporalFourierSparse => {
            let out = mec_ista(y, ops, cfg)?;
            Ok((out.e, out.iterations))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub z: CMatrix,
    pub model: HierarchicalModel,
    pub report: ReconReport,
    pub lowrank: AltGdminOutput,
}

impl Reconstruction {
    pub fn basis(&self) -> &OrthonormalBasis {
        &self.lowrank.u
    }
}

/// Mean, then low-rank part, then residual correction.
///
/// `init` selects spectral or warm-started subspace iterations; `truth`
/// (the full `n x q` sequence) only feeds the error fields of the report.
pub fn reconstruct(
    y: &MeasurementSet,
    ops: &[FrameOperator],
    method: Method,
    cfg: &PipelineConfig,
    init: Init,
    truth: Option<&CMatrix>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    check_measurements(ops, y)?;
    if let Some(t) = truth {
        if t.shape() != (ops[0].n(), ops.len()) {
            return Err(Error::Dimension(format!(
                "truth is {:?}, expected {:?}",
                t.shape(),
                (ops[0].n(), ops.len())
            )));
        }
    }
    let mut timer = StageTimer::new();
    let mut report = ReconReport::new(method.name());

    let (mean, mean_iters) = timer
        .time("mean", || estimate_mean_with(y, ops, &cfg.mean).map(|o| (o.x, o.iterations)))
        .map_err(|e| e.at(Stage::Mean))?;
    let mean_part = broadcast(&mean, ops.len());
    report.config = cfg.echo(method);
    report.config.insert("mean_iterations".into(), mean_iters.to_string());

    let lowrank = timer
        .time("lowrank", || -> Result<AltGdminOutput> {
            let y1 = residual_1(y, ops, &mean)?;
            let target = truth.map(|t| t - &mean_part);
            altgdmin_run(&y1, ops, &cfg.altgdmin, init, target.as_ref())
        })
        .map_err(|e| e.at(Stage::LowRank))?;

    let mut mec = cfg.mec.clone();
    mec.variant = method.mec_variant();
    let (residual, mec_iters) = timer
        .time("correction", || {
            let y2 = residual_2(y, ops, &mean, &lowrank.x)?;
            mec_correct(&y2, ops, &mec)
        })
        .map_err(|e| e.at(Stage::Correction))?;

    let model = HierarchicalModel::new(mean, lowrank.x.clone(), residual)?;
    let z = model.reconstruct();

    if let Some(t) = truth {
        if t.norm_squared() > 0.0 {
            report.stage_errors.insert("mean".into(), nsmse(t, &mean_part)?);
            report.stage_errors.insert("mean+lowrank".into(), nsmse(t, &model.mean_plus_lowrank())?);
            let full = nsmse(t, &z)?;
            report.stage_errors.insert("full".into(), full);
            report.nsmse = Some(full);
        }
    }
    report.rank = lowrank.rank();
    report.eta = lowrank.eta;
    report.gamma = lowrank.init.as_ref().map_or(0.0, |i| i.gamma);
    report.lowrank_iterations = lowrank.iterations;
    report.mec_iterations = mec_iters;
    report.trace = lowrank.trace.clone();
    report.stage_seconds = timer.stage_map();
    report.total_seconds = timer.total();
    if cfg.reproducible {
        report.strip_timings();
    }
    Ok(Reconstruction {
        z,
        model,
        report,
        lowrank,
    })
}

/// Zero-filled baseline `A_k^H y_k` per frame.
pub fn zero_filled(y: &MeasurementSet, ops: &[FrameOperator]) -> Result<CMatrix> {
    adjoint_seq(ops, y)
}
