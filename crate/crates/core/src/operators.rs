//! Per-frame measurement operators `A_k` and the sequence maps built from them.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, CMatrix, CVector, Fft2, C64, ZERO};
use crate::sampling::{CoilMaps, FrameMask, SamplingPlan, Scheme};

pub(crate) const STREAM_GAUSSIAN: u32 = 5;

/// A linear map with an exact adjoint.
pub trait LinearOperator: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// Caller guarantees `x.len() == input_len()`.
    fn forward(&self, x: &CVector) -> CVector;
    /// Caller guarantees `y.len() == output_len()`.
    fn backward(&self, y: &CVector) -> CVector;
}

impl LinearOperator for CMatrix {
    fn input_len(&self) -> usize {
        self.ncols()
    }
    fn output_len(&self) -> usize {
        self.nrows()
    }
    fn forward(&self, x: &CVector) -> CVector {
        self * x
    }
    fn backward(&self, y: &CVector) -> CVector {
        self.ad_mul(y)
    }
}

/// Undersampled multi-coil Fourier encoding `[H F D_1; ...; H F D_mc]`.
#[derive(Debug, Clone)]
pub struct MaskedFourier {
    mask: FrameMask,
    gather: Vec<usize>,
    coils: Arc<CoilMaps>,
    fft: Arc<Fft2>,
}

impl MaskedFourier {
    pub fn new(mask: FrameMask, coils: Arc<CoilMaps>, fft: Arc<Fft2>) -> Result<Self> {
        if mask.dims() != coils.dims() || mask.dims() != fft.dims() {
            return Err(Error::Dimension("mask, coil maps and FFT plan disagree on grid size".into()));
        }
        let gather = mask.raster_indices();
        Ok(MaskedFourier {
            mask,
            gather,
            coils,
            fft,
        })
    }

    pub fn mask(&self) -> &FrameMask {
        &self.mask
    }

    pub fn coils(&self) -> &CoilMaps {
        &self.coils
    }

    fn apply(&self, x: &CVector) -> CVector {
        let m = self.gather.len();
        let maps = self.coils.maps();
        let mut out = CVector::zeros(m * maps.len());
        let mut buf = vec![ZERO; x.len()];
        for (c, d) in maps.iter().enumerate() {
            for ((b, xi), di) in buf.iter_mut().zip(x.iter()).zip(d.iter()) {
                *b = xi * di;
            }
            self.fft.forward(&mut buf);
            for (t, &p) in self.gather.iter().enumerate() {
                out[c * m + t] = buf[p];
            }
        }
        out
    }

    fn adjoint(&self, y: &CVector) -> CVector {
        let m = self.gather.len();
        let n = self.fft.pixels();
        let mut acc = CVector::zeros(n);
        let mut buf = vec![ZERO; n];
        for (c, d) in self.coils.maps().iter().enumerate() {
            buf.fill(ZERO);
            for (t, &p) in self.gather.iter().enumerate() {
                buf[p] = y[c * m + t];
            }
            self.fft.inverse(&mut buf);
            for ((a, b), di) in acc.iter_mut().zip(buf.iter()).zip(d.iter()) {
                *a += di.conj() * b;
            }
        }
        acc
    }
}

/// One frame's measurement operator `A_k`.
#[derive(Debug, Clone)]
pub enum FrameOperator {
    /// Explicit `m_k x n` matrix (random Gaussian ensembles, test fixtures).
    Dense(CMatrix),
    MaskedFourier(MaskedFourier),
}

impl FrameOperator {
    /// Pixel count `n`.
    pub fn n(&self) -> usize {
        match self {
            FrameOperator::Dense(a) => a.ncols(),
            FrameOperator::MaskedFourier(f) => f.fft.pixels(),
        }
    }

    /// `m_k`: rows for a dense operator, sampled cells for a Fourier operator.
    pub fn m_cells(&self) -> usize {
        match self {
            FrameOperator::Dense(a) => a.nrows(),
            FrameOperator::MaskedFourier(f) => f.mask.count(),
        }
    }

    pub fn coils(&self) -> usize {
        match self {
            FrameOperator::Dense(_) => 1,
            FrameOperator::MaskedFourier(f) => f.coils.coils(),
        }
    }

    /// Length of `y_k`: `m_k * mc`.
    pub fn m_total(&self) -> usize {
        self.m_cells() * self.coils()
    }

    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!("apply: vector of length {} for n = {}", x.len(), self.n())));
        }
        Ok(self.forward(x))
    }

    pub fn adjoint(&self, y: &CVector) -> Result<CVector> {
        if y.len() != self.m_total() {
            return Err(Error::Dimension(format!(
                "adjoint: vector of length {} for m_total = {}",
                y.len(),
                self.m_total()
            )));
        }
        Ok(self.backward(y))
    }

    /// `A_k M`, column by column.
    pub fn apply_columns(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.m_total(), m.ncols());
        for j in 0..m.ncols() {
            out.set_column(j, &self.forward(&m.column(j).clone_owned()));
        }
        out
    }
}

impl LinearOperator for FrameOperator {
    fn input_len(&self) -> usize {
        self.n()
    }
    fn output_len(&self) -> usize {
        self.m_total()
    }
    fn forward(&self, x: &CVector) -> CVector {
        match self {
            FrameOperator::Dense(a) => a * x,
            FrameOperator::MaskedFourier(f) => f.apply(x),
        }
    }
    fn backward(&self, y: &CVector) -> CVector {
        match self {
            FrameOperator::Dense(a) => a.ad_mul(y),
            FrameOperator::MaskedFourier(f) => f.adjoint(y),
        }
    }
}

/// Per-frame measurements `y_k`; frames may have different lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub frames: Vec<CVector>,
}

impl MeasurementSet {
    pub fn new(frames: Vec<CVector>) -> Self {
        MeasurementSet { frames }
    }

    pub fn zeros_like(ops: &[FrameOperator]) -> Self {
        MeasurementSet {
            frames: ops.iter().map(|op| CVector::zeros(op.m_total())).collect(),
        }
    }

    pub fn q(&self) -> usize {
        self.frames.len()
    }

    /// Total scalar measurement count.
    pub fn total_len(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.frames.iter().map(|f| f.norm_squared()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|f| crate::numerics::all_finite(f.as_slice()))
    }

    /// `self - other`, frame by frame.
    pub fn sub(&self, other: &MeasurementSet) -> Result<MeasurementSet> {
        check_lengths(self, other)?;
        Ok(MeasurementSet {
            frames: self.frames.iter().zip(&other.frames).map(|(a, b)| a - b).collect(),
        })
    }

    /// Select a contiguous range of frames.
    pub fn slice(&self, range: std::ops::Range<usize>) -> MeasurementSet {
        MeasurementSet {
            frames: self.frames[range].to_vec(),
        }
    }
}

fn check_lengths(a: &MeasurementSet, b: &MeasurementSet) -> Result<()> {
    if a.q() != b.q() || a.frames.iter().zip(&b.frames).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Dimension("measurement sets have different shapes".into()));
    }
    Ok(())
}

/// Check that `y` has one frame of the right length per operator.
pub fn check_measurements(ops: &[FrameOperator], y: &MeasurementSet) -> Result<()> {
    if ops.len() != y.q() {
        return Err(Error::Dimension(format!("{} operators for {} measurement frames", ops.len(), y.q())));
    }
    for (k, (op, f)) in ops.iter().zip(&y.frames).enumerate() {
        if op.m_total() != f.len() {
            return Err(Error::Dimension(format!(
                "frame {k}: {} measurements, operator expects {}",
                f.len(),
                op.m_total()
            )));
        }
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("measurements"));
    }
    Ok(())
}

fn common_n(ops: &[FrameOperator]) -> Result<usize> {
    let n = ops.first().map(|op| op.n()).ok_or_else(|| Error::Dimension("no frame operators".into()))?;
    if ops.iter().any(|op| op.n() != n) {
        return Err(Error::Dimension("frame operators disagree on n".into()));
    }
    Ok(n)
}

/// `A(X)`: apply `A_k` to column `k` of `X`.
pub fn apply_seq(ops: &[FrameOperator], x: &CMatrix) -> Result<MeasurementSet> {
    let n = common_n(ops)?;
    if x.nrows() != n || x.ncols() != ops.len() {
        return Err(Error::Dimension(format!(
            "apply_seq: {} x {} matrix for {} frames of n = {n}",
            x.nrows(),
            x.ncols(),
            ops.len()
        )));
    }
    let frames = ops
        .par_iter()
        .enumerate()
        .map(|(k, op)| op.forward(&x.column(k).clone_owned()))
        .collect();
    Ok(MeasurementSet { frames })
}

/// `A^H(Y)`: the `n x q` matrix of per-frame adjoints.
pub fn adjoint_seq(ops: &[FrameOperator], y: &MeasurementSet) -> Result<CMatrix> {
    let n = common_n(ops)?;
    check_measurements(ops, y)?;
    let cols: Vec<CVector> = ops
        .par_iter()
        .zip(y.frames.par_iter())
        .map(|(op, f)| op.backward(f))
        .collect();
    let mut out = CMatrix::zeros(n, ops.len());
    for (k, c) in cols.iter().enumerate() {
        out.set_column(k, c);
    }
    Ok(out)
}

/// The stacked map `z -> (A_1 z, ..., A_q z)` used to estimate the mean image.
pub struct Stacked<'a> {
    ops: &'a [FrameOperator],
    offsets: Vec<usize>,
    n: usize,
}

impl<'a> Stacked<'a> {
    pub fn new(ops: &'a [FrameOperator]) -> Result<Self> {
        let n = common_n(ops)?;
        let mut offsets = Vec::with_capacity(ops.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for op in ops {
            acc += op.m_total();
            offsets.push(acc);
        }
        Ok(Stacked { ops, offsets, n })
    }

    pub fn stack(&self, y: &MeasurementSet) -> CVector {
        CVector::from_iterator(self.offsets[self.ops.len()], y.frames.iter().flat_map(|f| f.iter().copied()))
    }
}

impl LinearOperator for Stacked<'_> {
    fn input_len(&self) -> usize {
        self.n
    }
    fn output_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn forward(&self, x: &CVector) -> CVector {
        let parts: Vec<CVector> = self.ops.par_iter().map(|op| op.forward(x)).collect();
        CVector::from_iterator(self.output_len(), parts.iter().flat_map(|p| p.iter().copied()))
    }
    fn backward(&self, y: &CVector) -> CVector {
        let parts: Vec<CVector> = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(k, op)| {
                let seg = y.rows(self.offsets[k], self.offsets[k + 1] - self.offsets[k]).clone_owned();
                op.backward(&seg)
            })
            .collect();
        // fixed summation order
        let mut acc = CVector::zeros(self.n);
        for p in &parts {
            acc += p;
        }
        acc
    }
}

/// `q` dense operators with i.i.d. real standard Gaussian entries.
pub fn gaussian_frame_ops(n: usize, m: usize, q: usize, seed: u64) -> Result<Vec<FrameOperator>> {
    if n == 0 || m == 0 || q == 0 {
        return Err(Error::InvalidParameter("gaussian ensemble needs n, m, q >= 1".into()));
    }
    Ok((0..q)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeded_rng(seed, STREAM_GAUSSIAN, k as u64);
            // fill row-major so the draw order does not depend on storage layout
            let vals: Vec<C64> = (0..m * n)
                .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
                .collect();
            FrameOperator::Dense(CMatrix::from_row_slice(m, n, &vals))
        })
        .collect())
}

/// Build the operators a sampling plan describes.
pub fn frame_ops_from_plan(plan: &SamplingPlan) -> Result<Vec<FrameOperator>> {
    match plan.scheme {
        Scheme::Gaussian { m } => gaussian_frame_ops(plan.n(), m, plan.q, plan.seed),
        _ => {
            let coils = Arc::new(plan.coils.clone());
            let fft = Arc::new(Fft2::new(plan.n1, plan.n2));
            plan.masks
                .iter()
                .map(|mask| {
                    MaskedFourier::new(mask.clone(), coils.clone(), fft.clone()).map(FrameOperator::MaskedFourier)
                })
                .collect()
        }
    }
}
