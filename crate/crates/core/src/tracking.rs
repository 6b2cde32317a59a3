//! Subspace tracking over a frame stream: mini-batches with a warm-started
//! subspace, or a fully online pass with the subspace frozen after the first batch.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::altgdmin::{update_b, Init};
use crate::cgls::{cgls_solve, CglsConfig};
use crate::error::{Error, Result, Stage};
use crate::hierarchical::{reconstruct, Method, PipelineConfig};
use crate::metrics::{nsmse, ReconReport};
use crate::numerics::{CMatrix, CVector, OrthonormalBasis};
use crate::operators::{check_measurements, FrameOperator, MeasurementSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackMode {
    /// Mini-batches with the unstructured residual correction.
    MinibatchSt1,
    /// Mini-batches with the temporal-Fourier-sparse residual correction.
    MinibatchSt2,
    /// First batch in full, then one frame at a time against a frozen subspace.
    Online,
}

impl TrackMode {
    fn method(self) -> Method {
        match self {
            TrackMode::MinibatchSt2 => Method::Mri2,
            _ => Method::Mri1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrackMode::MinibatchSt1 => "altgdmin-st1",
            TrackMode::MinibatchSt2 => "altgdmin-st2",
            TrackMode::Online => "altgdmin-online",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub mode: TrackMode,
    /// Size of the first batch.
    pub alpha1: usize,
    /// Size of later batches.
    pub alpha: usize,
    pub t_max1: usize,
    pub t_maxj: usize,
    pub pipeline: PipelineConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            mode: TrackMode::MinibatchSt1,
            alpha1: 64,
            alpha: 64,
            t_max1: 70,
            t_maxj: 5,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha1 == 0 || self.alpha == 0 || self.t_max1 == 0 || self.t_maxj == 0 {
            return Err(Error::InvalidParameter(format!(
                "tracker needs alpha1, alpha, t_max1, t_maxj >= 1 (got {}, {}, {}, {})",
                self.alpha1, self.alpha, self.t_max1, self.t_maxj
            )));
        }
        self.pipeline.validate()
    }
}

/// What the tracker carries between batches or frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub mean: CVector,
    pub u: OrthonormalBasis,
    /// Number of batches processed so far.
    pub batch_index: usize,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub z: CMatrix,
    pub report: ReconReport,
}

/// Reconstruct one mini-batch. The first batch (`state == None`) uses a
/// spectral start and `t_max1`; later ones warm-start from the previous
/// subspace and run at most `t_maxj` iterations.
pub fn minibatch_step(
    state: Option<&TrackerState>,
    y: &MeasurementSet,
    ops: &[FrameOperator],
    cfg: &TrackerConfig,
    truth: Option<&CMatrix>,
) -> Result<(BatchOutput, TrackerState)> {
    let mut pipe = cfg.pipeline.clone();
    let (init, index) = match state {
        None => {
            pipe.altgdmin.t_max = cfg.t_max1;
            (Init::Spectral, 1)
        }
        Some(s) => {
            pipe.altgdmin.t_max = cfg.t_maxj;
            (Init::Warm(s.u.clone()), s.batch_index + 1)
        }
    };
    let rec = reconstruct(y, ops, cfg.mode.method(), &pipe, init, truth)?;
    let next = TrackerState {
        mean: rec.model.mean.clone(),
        u: rec.lowrank.u.clone(),
        batch_index: index,
    };
    Ok((
        BatchOutput {
            z: rec.z,
            report: rec.report,
        },
        next,
    ))
}

/// Reconstruct frame `k` against the frozen mean and subspace:
/// `x_k = zbar + U b_k + e_k`, with `b_k` by least squares and `e_k` from
/// `cgls_iters` CGLS iterations on what remains.
pub fn online_step(state: &TrackerState, y: &CVector, op: &FrameOperator, k: usize, cgls_iters: usize) -> Result<CVector> {
    if op.n() != state.mean.len() || y.len() != op.m_total() {
        return Err(Error::Dimension(format!(
            "frame {k}: operator {} -> {}, measurements {}, mean {}",
            op.n(),
            op.m_total(),
            y.len(),
            state.mean.len()
        )));
    }
    let y1 = y - op.apply(&state.mean)?;
    let single = MeasurementSet::new(vec![y1.clone()]);
    let b = update_b(&state.u, &single, std::slice::from_ref(op)).map_err(|e| match e {
        Error::FrameRankDeficient { m_total, rank, .. } => Error::FrameRankDeficient { frame: k, m_total, rank },
        other => other,
    })?;
    let ub = state.u.matrix() * b.column(0);
    let y2 = y1 - op.apply(&ub)?;
    let e = cgls_solve(op, &y2, &CglsConfig::fixed(cgls_iters), None)?.x;
    Ok(&state.mean + ub + e)
}

#[derive(Debug, Clone)]
pub struct TrackerOutput {
    pub z: CMatrix,
    pub report: ReconReport,
    pub batches: usize,
    pub state: TrackerState,
}

/// Drive the tracker over the whole sequence. A short final batch is
/// processed as it is.
pub fn run_tracker(
    y: &MeasurementSet,
    ops: &[FrameOperator],
    cfg: &TrackerConfig,
    truth: Option<&CMatrix>,
) -> Result<TrackerOutput> {
    cfg.validate()?;
    check_measurements(ops, y)?;
    let (n, q) = (ops[0].n(), ops.len());
    let start = Instant::now();
    let mut z = CMatrix::zeros(n, q);
    let mut report = ReconReport::new(cfg.mode.name());

    let first = cfg.alpha1.min(q);
    let t0 = Instant::now();
    let (out, mut state) = minibatch_step(None, &y.slice(0..first), &ops[..first], cfg, None)?;
    report.latencies.push(t0.elapsed().as_secs_f64());
    z.columns_mut(0, first).copy_from(&out.z);
    report.rank = state.u.rank();
    report.eta = out.report.eta;
    report.gamma = out.report.gamma;
    report.lowrank_iterations = out.report.lowrank_iterations;
    report.mec_iterations = out.report.mec_iterations;
    report.trace = out.report.trace;
    report.config = out.report.config;
    let mut batches = 1;

    match cfg.mode {
        TrackMode::Online => {
            let iters = cfg.pipeline.mec.cgls_iters;
            for (k, (yk, op)) in y.frames.iter().zip(ops).enumerate().skip(first) {
                let t = Instant::now();
                let xk = online_step(&state, yk, op, k, iters).map_err(|e| e.at(Stage::Tracking))?;
                report.latencies.push(t.elapsed().as_secs_f64());
                z.set_column(k, &xk);
            }
        }
        TrackMode::MinibatchSt1 | TrackMode::MinibatchSt2 => {
            let mut lo = first;
            while lo < q {
                let hi = (lo + cfg.alpha).min(q);
                let t = Instant::now();
                let (out, next) = minibatch_step(Some(&state), &y.slice(lo..hi), &ops[lo..hi], cfg, None)?;
                report.latencies.push(t.elapsed().as_secs_f64());
                z.columns_mut(lo, hi - lo).copy_from(&out.z);
                report.lowrank_iterations += out.report.lowrank_iterations;
                state = next;
                batches += 1;
                lo = hi;
            }
        }
    }

    report.config.insert("mode".into(), cfg.mode.name().into());
    report.config.insert("alpha1".into(), cfg.alpha1.to_string());
    report.config.insert("alpha".into(), cfg.alpha.to_string());
    report.config.insert("t_max1".into(), cfg.t_max1.to_string());
    report.config.insert("t_maxj".into(), cfg.t_maxj.to_string());
    if let Some(t) = truth {
        if t.shape() != z.shape() {
            return Err(Error::Dimension(format!("truth is {:?}, expected {:?}", t.shape(), z.shape())));
        }
        if t.norm_squared() > 0.0 {
            report.nsmse = Some(nsmse(t, &z)?);
        }
    }
    report.total_seconds = start.elapsed().as_secs_f64();
    if cfg.pipeline.reproducible {
        report.strip_timings();
    }
    Ok(TrackerOutput {
        z,
        report,
        batches,
        state,
    })
}
