//! Reconstruction error and timing.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, C64};

/// Normalized scale-invariant MSE.
///
/// `sum_k |x*_k - c_k xhat_k|^2 / |X*|_F^2` where `c_k = xhat_k^H x*_k / |xhat_k|^2`
/// is the best complex scale for each column. A zero estimate column
/// contributes `|x*_k|^2`.
pub fn nsmse(truth: &CMatrix, estimate: &CMatrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::Dimension(format!(
            "nsmse: truth is {:?}, estimate is {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let total = truth.norm_squared();
    if total == 0.0 {
        return Err(Error::InvalidParameter("nsmse is undefined for an all-zero truth".into()));
    }
    let mut acc = 0.0;
    for k in 0..truth.ncols() {
        let t = truth.column(k);
        let e = estimate.column(k);
        let ee = e.norm_squared();
        if ee == 0.0 {
            acc += t.norm_squared();
            continue;
        }
        let c: C64 = e.dotc(&t) / ee;
        let d2: f64 = t.iter().zip(e.iter()).map(|(a, b)| (a - b * c).norm_sqr()).sum();
        acc += d2;
    }
    Ok(acc / total)
}

/// Wall-clock timing of named pipeline stages.
#[derive(Debug)]
pub struct StageTimer {
    start: Instant,
    stages: Vec<(String, f64)>,
}

impl Default for StageTimer {
    fn default() -> Self {
        Self::new()
    }
}

impl StageTimer {
    pub fn new() -> Self {
        StageTimer {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }

    /// Run `f`, recording its duration under `name`.
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.stages.push((name.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    pub fn stages(&self) -> &[(String, f64)] {
        &self.stages
    }

    pub fn stage_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in &self.stages {
            *m.entry(k.clone()).or_insert(0.0) += v;
        }
        m
    }

    pub fn total(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// One record of the altGDmin iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `SD(U_{t-1}, U_t) / sqrt(r)`.
    pub sd_step: f64,
    /// N-S-MSE of the current low-rank estimate, when ground truth is supplied.
    pub error: Option<f64>,
    /// `|U_t^H U_t - I|_F`.
    pub orthonormality: f64,
    pub elapsed_s: f64,
}

/// Summary of one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconReport {
    pub method: String,
    /// N-S-MSE of the final output against the truth, when known.
    pub nsmse: Option<f64>,
    /// N-S-MSE after each stage (`mean`, `mean+lowrank`, `full`), when the truth is known.
    pub stage_errors: BTreeMap<String, f64>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub total_seconds: f64,
    pub rank: usize,
    pub eta: f64,
    pub gamma: f64,
    pub lowrank_iterations: usize,
    pub mec_iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Per-batch or per-frame wall times from the trackers.
    pub latencies: Vec<f64>,
    pub config: BTreeMap<String, String>,
}

impl ReconReport {
    pub fn new(method: &str) -> Self {
        ReconReport {
            method: method.to_string(),
            nsmse: None,
            stage_errors: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
            total_seconds: 0.0,
            rank: 0,
            eta: 0.0,
            gamma: 0.0,
            lowrank_iterations: 0,
            mec_iterations: 0,
            trace: Vec::new(),
            latencies: Vec::new(),
            config: BTreeMap::new(),
        }
    }

    /// Zero all wall-clock fields so reports from identical runs compare equal.
    pub fn strip_timings(&mut self) {
        self.stage_seconds.values_mut().for_each(|v| *v = 0.0);
        self.total_seconds = 0.0;
        self.trace.iter_mut().for_each(|r| r.elapsed_s = 0.0);
        self.latencies.iter_mut().for_each(|v| *v = 0.0);
    }
}
