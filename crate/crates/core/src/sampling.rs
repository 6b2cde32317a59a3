//! k-space sampling masks and synthetic coil sensitivity maps.
//!
//! k-space is unshifted: the DC cell is grid index `(0, 0)` and negative
//! frequencies wrap around to the end of each axis. Masks are stored
//! column-major like images.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, CVector, C64};

/// Angular increment between successive radial spokes, in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.25;

/// Number of central phase-encode lines always acquired by the variable-density Cartesian mask.
pub const VD_CENTER_LINES: usize = 8;

pub(crate) const STREAM_VD: u32 = 2;
pub(crate) const STREAM_UNIFORM: u32 = 3;
pub(crate) const STREAM_COILS: u32 = 4;

/// Sampling pattern of one frame, `H_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    n1: usize,
    n2: usize,
    cells: Vec<bool>,
    count: usize,
}

impl FrameMask {
    /// Build from column-major cells. At least one cell must be set.
    pub fn new(n1: usize, n2: usize, cells: Vec<bool>) -> Result<Self> {
        if n1 == 0 || n2 == 0 || cells.len() != n1 * n2 {
            return Err(Error::Dimension(format!(
                "mask of {} cells for a {n1} x {n2} grid",
                cells.len()
            )));
        }
        let count = cells.iter().filter(|&&c| c).count();
        if count == 0 {
            return Err(Error::InvalidParameter("mask selects no k-space cells".into()));
        }
        Ok(FrameMask { n1, n2, cells, count })
    }

    pub fn full(n1: usize, n2: usize) -> Self {
        FrameMask {
            n1,
            n2,
            cells: vec![true; n1 * n2],
            count: n1 * n2,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// `m_k`, the number of sampled cells.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i + self.n1 * j]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Column-major indices of sampled cells, listed in row-major raster order.
    pub fn raster_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count);
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let p = i + self.n1 * j;
                if self.cells[p] {
                    out.push(p);
                }
            }
        }
        out
    }
}

fn wrap(v: f64, n: usize) -> usize {
    (v.round() as i64).rem_euclid(n as i64) as usize
}

/// Mark one spoke through DC at angle `theta` (radians).
fn rasterize_spoke(cells: &mut [bool], n1: usize, n2: usize, theta: f64) {
    let len = n1.max(n2);
    let half = (len / 2) as f64;
    let (s, c) = theta.sin_cos();
    for t in 0..len {
        let rho = t as f64 - half;
        let i = wrap(rho * c * n1 as f64 / len as f64, n1);
        let j = wrap(rho * s * n2 as f64 / len as f64, n2);
        cells[i + n1 * j] = true;
    }
}

/// Golden-angle pseudo-radial mask for frame `k`.
///
/// Spoke `i` of frame `k` sits at `(k + i) * 111.25` degrees and is rasterized
/// by nearest-grid-point sampling of `max(n1, n2)` equispaced points across
/// the full diameter. Requests of at least `n1 * n2` lines saturate to the
/// full grid. The construction is deterministic; `_seed` is accepted so all
/// mask generators share one signature.
pub fn golden_angle_pseudo_radial(
    n1: usize,
    n2: usize,
    lines: usize,
    frame: usize,
    _seed: u64,
) -> Result<FrameMask> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidParameter("grid dimensions must be positive".into()));
    }
    if lines == 0 {
        return Err(Error::InvalidParameter("radial mask needs at least one line".into()));
    }
    if lines >= n1 * n2 {
        return Ok(FrameMask::full(n1, n2));
    }
    let mut cells = vec![false; n1 * n2];
    let step = GOLDEN_ANGLE_DEG.to_radians();
    let start = frame as f64 * step;
    for i in 0..lines {
        rasterize_spoke(&mut cells, n1, n2, start + i as f64 * step);
    }
    cells[0] = true;
    FrameMask::new(n1, n2, cells)
}

fn centered_distance(j: usize, n: usize) -> usize {
    j.min(n - j)
}

/// Variable-density random Cartesian mask: whole phase-encode columns.
///
/// Selects `round(n2 / R)` columns. Up to [`VD_CENTER_LINES`] center columns
/// (at most half the budget) are always taken; the rest are drawn without
/// replacement with weight `exp(-(d / (n2 / 6))^2)` in the distance `d` from DC.
pub fn cartesian_vd_mask(
    n1: usize,
    n2: usize,
    reduction: f64,
    frame: usize,
    seed: u64,
) -> Result<FrameMask> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidParameter("grid dimensions must be positive".into()));
    }
    if !(reduction >= 1.0) || !reduction.is_finite() {
        return Err(Error::InvalidParameter(format!("reduction factor {reduction} must be >= 1")));
    }
    if reduction > n2 as f64 {
        return Err(Error::InvalidParameter(format!(
            "reduction factor {reduction} exceeds the {n2} phase-encode lines"
        )));
    }
    let budget = ((n2 as f64 / reduction).round() as usize).clamp(1, n2);
    let mut cols = vec![false; n2];
    if budget == n2 {
        cols.fill(true);
    } else {
        let center = VD_CENTER_LINES.min(budget / 2).max(1);
        let lo = center as i64 / 2;
        for off in -lo..(center as i64 - lo) {
            cols[off.rem_euclid(n2 as i64) as usize] = true;
        }
        let pool: Vec<usize> = (0..n2).filter(|&j| !cols[j]).collect();
        let width = n2 as f64 / 6.0;
        let mut rng = seeded_rng(seed, STREAM_VD, frame as u64);
        let picks = index::sample_weighted(
            &mut rng,
            pool.len(),
            |t| {
                let d = centered_distance(pool[t], n2) as f64 / width;
                (-d * d).exp()
            },
            budget - center,
        )
        .map_err(|e| Error::InvalidParameter(format!("variable-density weights: {e}")))?;
        for t in picks.iter() {
            cols[pool[t]] = true;
        }
    }
    let mut cells = vec![false; n1 * n2];
    for (j, _) in cols.iter().enumerate().filter(|(_, &on)| on) {
        cells[n1 * j..n1 * (j + 1)].fill(true);
    }
    FrameMask::new(n1, n2, cells)
}

/// `m` k-space cells chosen uniformly at random without replacement.
pub fn uniform_fourier_mask(n1: usize, n2: usize, m: usize, frame: usize, seed: u64) -> Result<FrameMask> {
    let n = n1 * n2;
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("m = {m} outside 1..={n}")));
    }
    let mut rng = seeded_rng(seed, STREAM_UNIFORM, frame as u64);
    let mut cells = vec![false; n];
    for p in index::sample(&mut rng, n, m).iter() {
        cells[p] = true;
    }
    FrameMask::new(n1, n2, cells)
}

/// Receiver coil sensitivities `d_j`, sum-of-squares normalized per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    n1: usize,
    n2: usize,
    maps: Vec<CVector>,
}

impl CoilMaps {
    pub fn new(n1: usize, n2: usize, maps: Vec<CVector>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidParameter("at least one coil map is required".into()));
        }
        if maps.iter().any(|m| m.len() != n1 * n2) {
            return Err(Error::Dimension(format!("coil map length differs from {n1} x {n2}")));
        }
        for p in 0..n1 * n2 {
            let sos: f64 = maps.iter().map(|m| m[p].norm_sqr()).sum();
            if (sos - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "coil maps not sum-of-squares normalized at pixel {p} (sum = {sos})"
                )));
            }
        }
        Ok(CoilMaps { n1, n2, maps })
    }

    /// A single coil of all ones (single-coil acquisition).
    pub fn single(n1: usize, n2: usize) -> Self {
        CoilMaps {
            n1,
            n2,
            maps: vec![CVector::from_element(n1 * n2, C64::new(1.0, 0.0))],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn coils(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[CVector] {
        &self.maps
    }
}

/// Width (pixels) of the Gaussian coil profiles for a grid.
pub fn coil_bump_width(n1: usize, n2: usize) -> f64 {
    n1.max(n2) as f64 / 3.0
}

/// Radius (pixels) of the ring on which coil centers sit.
pub fn coil_ring_radius(n1: usize, n2: usize) -> f64 {
    n1.max(n2) as f64 / 2.0
}

/// Smooth synthetic coil maps: Gaussian bumps on a ring around the FOV center.
///
/// Coil `j` has constant phase `2 pi j / mc`; magnitudes are normalized so
/// that `sum_j |d_j(p)|^2 = 1` at every pixel.
pub fn synth_coil_maps(n1: usize, n2: usize, mc: usize, seed: u64) -> Result<CoilMaps> {
    if mc == 0 {
        return Err(Error::InvalidParameter("mc must be >= 1".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidParameter("grid dimensions must be positive".into()));
    }
    let mut rng = seeded_rng(seed, STREAM_COILS, 0);
    let rotation: f64 = rng.random::<f64>() * 2.0 * PI / mc as f64;
    let w = coil_bump_width(n1, n2);
    let ring = coil_ring_radius(n1, n2);
    let (ci, cj) = ((n1 as f64 - 1.0) / 2.0, (n2 as f64 - 1.0) / 2.0);
    let centers: Vec<(f64, f64)> = (0..mc)
        .map(|j| {
            let a = rotation + 2.0 * PI * j as f64 / mc as f64;
            (ci + ring * a.cos(), cj + ring * a.sin())
        })
        .collect();
    let n = n1 * n2;
    let mut mags = vec![vec![0.0f64; n]; mc];
    for j in 0..n2 {
        for i in 0..n1 {
            let p = i + n1 * j;
            for (c, &(a, b)) in centers.iter().enumerate() {
                let d2 = (i as f64 - a).powi(2) + (j as f64 - b).powi(2);
                mags[c][p] = (-d2 / (2.0 * w * w)).exp();
            }
        }
    }
    for p in 0..n {
        let s = mags.iter().map(|m| m[p] * m[p]).sum::<f64>().sqrt();
        for m in mags.iter_mut() {
            m[p] /= s;
        }
    }
    let maps = mags
        .into_iter()
        .enumerate()
        .map(|(c, m)| {
            let phase = C64::from_polar(1.0, 2.0 * PI * c as f64 / mc as f64);
            CVector::from_iterator(n, m.into_iter().map(|v| phase * v))
        })
        .collect();
    Ok(CoilMaps { n1, n2, maps })
}

/// Sampling scheme tag, with the parameter each scheme needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Scheme {
    PseudoRadial { lines: usize },
    CartesianVd { reduction: f64 },
    UniformFourier { m: usize },
    Gaussian { m: usize },
}

/// Everything needed to build the per-frame operators `A_k`.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub n1: usize,
    pub n2: usize,
    pub q: usize,
    pub scheme: Scheme,
    pub seed: u64,
    /// Empty for the Gaussian scheme.
    pub masks: Vec<FrameMask>,
    pub coils: CoilMaps,
}

impl SamplingPlan {
    pub fn generate(n1: usize, n2: usize, q: usize, mc: usize, scheme: Scheme, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParameter("q must be >= 1".into()));
        }
        let masks = (0..q)
            .map(|k| match scheme {
                Scheme::PseudoRadial { lines } => golden_angle_pseudo_radial(n1, n2, lines, k, seed).map(Some),
                Scheme::CartesianVd { reduction } => cartesian_vd_mask(n1, n2, reduction, k, seed).map(Some),
                Scheme::UniformFourier { m } => uniform_fourier_mask(n1, n2, m, k, seed).map(Some),
                Scheme::Gaussian { .. } => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let coils = match scheme {
            Scheme::Gaussian { .. } => {
                if mc != 1 {
                    return Err(Error::InvalidParameter("Gaussian ensembles are single-coil".into()));
                }
                CoilMaps::single(n1, n2)
            }
            _ => synth_coil_maps(n1, n2, mc, seed)?,
        };
        Self::from_parts(n1, n2, q, scheme, seed, masks, coils)
    }

    /// Assemble a plan from stored masks and coil maps.
    pub fn from_parts(
        n1: usize,
        n2: usize,
        q: usize,
        scheme: Scheme,
        seed: u64,
        masks: Vec<FrameMask>,
        coils: CoilMaps,
    ) -> Result<Self> {
        let gaussian = matches!(scheme, Scheme::Gaussian { .. });
        if !gaussian && masks.len() != q {
            return Err(Error::Dimension(format!("{} masks for {q} frames", masks.len())));
        }
        if masks.iter().any(|m| m.dims() != (n1, n2)) || coils.dims() != (n1, n2) {
            return Err(Error::Dimension("masks and coil maps must share the grid".into()));
        }
        Ok(SamplingPlan {
            n1,
            n2,
            q,
            scheme,
            seed,
            masks,
            coils,
        })
    }

    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent rasterizer: walks the same spoke geometry with explicit
    // signed coordinates and a set, then folds into the wrapped grid.
    fn oracle_radial(n1: usize, n2: usize, lines: usize, k: usize) -> Vec<bool> {
        let mut set = std::collections::BTreeSet::new();
        let len = n1.max(n2) as i64;
        for l in 0..lines {
            let deg = (k + l) as f64 * 111.25;
            let th = deg * PI / 180.0;
            for t in -(len / 2)..(len - len / 2) {
                let u = (t as f64 * th.cos() * n1 as f64 / len as f64).round() as i64;
                let v = (t as f64 * th.sin() * n2 as f64 / len as f64).round() as i64;
                let i = ((u % n1 as i64) + n1 as i64) % n1 as i64;
                let j = ((v % n2 as i64) + n2 as i64) % n2 as i64;
                set.insert((i as usize, j as usize));
            }
        }
        set.insert((0, 0));
        let mut cells = vec![false; n1 * n2];
        for (i, j) in set {
            cells[i + n1 * j] = true;
        }
        cells
    }

    #[test]
    fn radial_saturates_to_full_grid() {
        let m = golden_angle_pseudo_radial(4, 5, 20, 3, 0).unwrap();
        assert_eq!(m.count(), 20);
    }

    #[test]
    fn radial_contains_dc_and_respects_bound() {
        for (n1, n2, lines, k) in [(16, 16, 4, 0), (12, 20, 3, 7), (9, 9, 1, 2), (32, 24, 8, 5)] {
            let m = golden_angle_pseudo_radial(n1, n2, lines, k, 1).unwrap();
            assert!(m.get(0, 0));
            assert!(m.count() <= lines * n1.max(n2));
            assert_eq!(m.count(), m.cells().iter().filter(|&&c| c).count());
        }
    }

    #[test]
    fn radial_masks_vary_by_frame_and_match_oracle() {
        let a = golden_angle_pseudo_radial(16, 16, 4, 0, 0).unwrap();
        let b = golden_angle_pseudo_radial(16, 16, 4, 1, 0).unwrap();
        assert_eq!(a.cells(), oracle_radial(16, 16, 4, 0).as_slice());
        assert_eq!(b.cells(), oracle_radial(16, 16, 4, 1).as_slice());
        assert_ne!(a, b);
    }

    #[test]
    fn radial_rejects_zero_lines() {
        assert!(golden_angle_pseudo_radial(8, 8, 0, 0, 0).is_err());
    }

    #[test]
    fn cartesian_full_at_r1_and_counts() {
        assert_eq!(cartesian_vd_mask(8, 16, 1.0, 0, 3).unwrap().count(), 128);
        for r in [2.0, 3.0, 4.0, 5.5, 8.0] {
            for k in 0..4 {
                let m = cartesian_vd_mask(6, 32, r, k, 9).unwrap();
                let cols = (0..32).filter(|&j| m.get(0, j)).count();
                assert!((cols as f64 - 32.0 / r).abs() <= 1.0, "R={r}: {cols} columns");
                assert_eq!(m.count(), 6 * cols);
                // whole columns
                for j in 0..32 {
                    assert!((0..6).all(|i| m.get(i, j) == m.get(0, j)));
                }
                assert!(m.get(0, 0));
            }
        }
    }

    #[test]
    fn cartesian_deterministic_and_frame_varying() {
        let a = cartesian_vd_mask(8, 32, 4.0, 0, 42).unwrap();
        let a2 = cartesian_vd_mask(8, 32, 4.0, 0, 42).unwrap();
        let b = cartesian_vd_mask(8, 32, 4.0, 1, 42).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn cartesian_keeps_center_lines() {
        let m = cartesian_vd_mask(4, 64, 4.0, 2, 5).unwrap();
        for j in [0usize, 1, 2, 3, 60, 61, 62, 63] {
            assert!(m.get(0, j), "center column {j} missing");
        }
    }

    #[test]
    fn cartesian_rejects_excess_reduction() {
        assert!(cartesian_vd_mask(8, 16, 17.0, 0, 0).is_err());
        assert!(cartesian_vd_mask(8, 16, 0.5, 0, 0).is_err());
    }

    #[test]
    fn uniform_mask_extremes() {
        assert_eq!(uniform_fourier_mask(5, 6, 30, 0, 1).unwrap().count(), 30);
        assert_eq!(uniform_fourier_mask(5, 6, 1, 0, 1).unwrap().count(), 1);
        assert_eq!(uniform_fourier_mask(5, 6, 13, 4, 1).unwrap().count(), 13);
        assert!(uniform_fourier_mask(5, 6, 0, 0, 1).is_err());
        assert!(uniform_fourier_mask(5, 6, 31, 0, 1).is_err());
    }

    #[test]
    fn uniform_mask_inclusion_frequency() {
        let (n1, n2, m) = (4, 5, 6);
        let trials = 10_000;
        let p = m as f64 / (n1 * n2) as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let mut hits = vec![0usize; n1 * n2];
        for seed in 0..trials {
            let mask = uniform_fourier_mask(n1, n2, m, 0, seed as u64).unwrap();
            for (c, &on) in mask.cells().iter().enumerate() {
                hits[c] += on as usize;
            }
        }
        for cell in [0, 7, 19] {
            let dev = (hits[cell] as f64 - trials as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "cell {cell}: {} hits", hits[cell]);
        }
    }

    #[test]
    fn single_coil_is_all_ones() {
        let c = synth_coil_maps(7, 5, 1, 3).unwrap();
        assert!(c.maps()[0].iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn coil_maps_are_sos_normalized_and_smooth() {
        let (n1, n2) = (32, 24);
        let c = synth_coil_maps(n1, n2, 4, 11).unwrap();
        for p in 0..n1 * n2 {
            let s: f64 = c.maps().iter().map(|m| m[p].norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // |grad (g_j / S)| <= 2 D / w^2, D = farthest pixel from any coil center
        let w = n1.max(n2) as f64 / 3.0;
        let half_diag = (((n1 - 1) as f64).powi(2) + ((n2 - 1) as f64).powi(2)).sqrt() / 2.0;
        let d = n1.max(n2) as f64 / 2.0 + half_diag;
        let bound = 2.0 * d / (w * w);
        for m in c.maps() {
            for j in 0..n2 {
                for i in 0..n1 {
                    let p = i + n1 * j;
                    if i + 1 < n1 {
                        assert!((m[p + 1] - m[p]).norm() <= bound);
                    }
                    if j + 1 < n2 {
                        assert!((m[p + n1] - m[p]).norm() <= bound);
                    }
                }
            }
        }
        assert_eq!(c, synth_coil_maps(n1, n2, 4, 11).unwrap());
    }

    #[test]
    fn plan_generation() {
        let plan = SamplingPlan::generate(16, 16, 5, 2, Scheme::PseudoRadial { lines: 4 }, 1).unwrap();
        assert_eq!(plan.masks.len(), 5);
        assert_eq!(plan.coils.coils(), 2);
        let g = SamplingPlan::generate(4, 4, 3, 1, Scheme::Gaussian { m: 5 }, 1).unwrap();
        assert!(g.masks.is_empty());
        assert!(SamplingPlan::generate(4, 4, 3, 2, Scheme::Gaussian { m: 5 }, 1).is_err());
    }
}
