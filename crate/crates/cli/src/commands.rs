//! Command implementations.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use lrcs::altgdmin::{altgdmin_run, Init};
use lrcs::datagen::{
    gen_moving_disk_phantom, gen_three_level, low_rank_matrix, PhantomParams, ResidualKind, SyntheticSpec,
};
use lrcs::hierarchical::{reconstruct, zero_filled};
use lrcs::metrics::{nsmse, ReconReport};
use lrcs::numerics::Fft2;
use lrcs::operators::{apply_seq, frame_ops_from_plan, gaussian_frame_ops, MaskedFourier};
use lrcs::sampling::{
    cartesian_vd_mask, golden_angle_pseudo_radial, uniform_fourier_mask, CoilMaps, FrameMask, SamplingPlan, Scheme,
};
use lrcs::tracking::run_tracker;
use lrcs::{CMatrix, CVector, FrameOperator, MeasurementSet};
use serde::Serialize;

use crate::cli::{Cli, Command, MaskScheme, Suite};
use crate::config::{DataSpec, MethodName, Plan, RunConfig, SamplingRecord, Source};
use crate::container::{self, Frame, Header, Kind};
use crate::error::CliError;

pub const TRUTH: &str = "truth.lrcs";
pub const KSPACE: &str = "kspace.lrcs";
pub const MASKS: &str = "masks.lrcs";
pub const COILS: &str = "coils.lrcs";
pub const DATASET: &str = "dataset.json";
pub const SAMPLING: &str = "sampling.json";
pub const RECON: &str = "recon.lrcs";
pub const REPORT: &str = "report.json";

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(&DataSpec::load(&spec)?, &out),
        Command::GenMask {
            scheme,
            n1,
            n2,
            q,
            lines,
            reduction,
            m,
            seed,
            out,
        } => {
            let masks = gen_masks(scheme, n1, n2, q, lines, reduction, m, seed)?;
            write_masks(&out, &masks)?;
            let mean = masks.iter().map(|m| m.count()).sum::<usize>() as f64 / q as f64;
            println!("wrote {q} masks ({mean:.1} cells per frame) to {}", out.display());
            Ok(())
        }
        Command::Recon {
            input,
            method,
            alpha,
            alpha1,
            config,
            reproducible,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if let Some(a) = alpha1 {
                cfg.alpha1 = a;
            }
            cfg.reproducible |= reproducible;
            cfg.validate()?;
            let report = recon(&input, &cfg, &out)?;
            match report.nsmse {
                Some(e) => println!("{}: N-S-MSE {e:.4e}, rank {}", report.method, report.rank),
                None => println!("{}: rank {}", report.method, report.rank),
            }
            Ok(())
        }
        Command::Bench { suite, config, seed } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rows = bench(suite, &cfg)?;
            print!("{}", format_table(&rows));
            Ok(())
        }
        Command::Eval { truth, recon } => {
            let (_, _, t) = read_image_seq(&truth)?;
            let (_, _, r) = read_image_seq(&recon)?;
            if t.shape() != r.shape() {
                return Err(CliError::Data(format!(
                    "truth is {} x {}, reconstruction is {} x {}",
                    t.nrows(),
                    t.ncols(),
                    r.nrows(),
                    r.ncols()
                )));
            }
            let e = nsmse(&t, &r).map_err(|e| CliError::Data(e.to_string()))?;
            println!("{e:e}");
            Ok(())
        }
    }
}

fn data_err(e: lrcs::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn config_err(e: lrcs::Error) -> CliError {
    CliError::Config(e.to_string())
}

// ---- container helpers ----

pub fn write_image_seq(path: &Path, n1: usize, n2: usize, z: &CMatrix) -> Result<(), CliError> {
    let wrap = |e| CliError::container(path, e);
    if z.nrows() != n1 * n2 {
        return Err(CliError::Data(format!("{} rows for a {n1} x {n2} grid", z.nrows())));
    }
    let header = Header::new(Kind::ImageSeq, n1, n2, z.ncols(), 1).map_err(wrap)?;
    let frames: Vec<Frame> = z.column_iter().map(|c| Frame::Complex(c.iter().copied().collect())).collect();
    container::write_all(path, header, &frames).map_err(wrap)
}

/// Returns `(n1, n2, Z)` with one vectorized frame per column.
pub fn read_image_seq(path: &Path) -> Result<(usize, usize, CMatrix), CliError> {
    let (h, frames) = read_kind(path, Kind::ImageSeq)?;
    let mut z = CMatrix::zeros(h.n(), frames.len());
    for (k, f) in frames.into_iter().enumerate() {
        if let Frame::Complex(v) = f {
            z.set_column(k, &CVector::from_vec(v));
        }
    }
    Ok((h.n1 as usize, h.n2 as usize, z))
}

pub fn write_kspace(path: &Path, n1: usize, n2: usize, mc: usize, y: &MeasurementSet) -> Result<(), CliError> {
    let wrap = |e| CliError::container(path, e);
    let m: Vec<usize> = y.frames.iter().map(|f| f.len() / mc).collect();
    if y.frames.iter().any(|f| f.len() % mc != 0) {
        return Err(CliError::Data(format!("k-space frame lengths are not multiples of mc = {mc}")));
    }
    let header = Header::kspace(n1, n2, mc, &m).map_err(wrap)?;
    let frames: Vec<Frame> = y.frames.iter().map(|f| Frame::Complex(f.iter().copied().collect())).collect();
    container::write_all(path, header, &frames).map_err(wrap)
}

pub fn read_kspace(path: &Path) -> Result<(Header, MeasurementSet), CliError> {
    let (h, frames) = read_kind(path, Kind::Kspace)?;
    let frames = frames
        .into_iter()
        .filter_map(|f| match f {
            Frame::Complex(v) => Some(CVector::from_vec(v)),
            Frame::Mask(_) => None,
        })
        .collect();
    Ok((h, MeasurementSet::new(frames)))
}

pub fn write_masks(path: &Path, masks: &[FrameMask]) -> Result<(), CliError> {
    let wrap = |e| CliError::container(path, e);
    let Some(first) = masks.first() else {
        return Err(CliError::Data("no masks to write".into()));
    };
    let (n1, n2) = first.dims();
    let header = Header::new(Kind::Masks, n1, n2, masks.len(), 1).map_err(wrap)?;
    let frames: Vec<Frame> = masks.iter().map(|m| Frame::Mask(m.cells().to_vec())).collect();
    container::write_all(path, header, &frames).map_err(wrap)
}

pub fn read_masks(path: &Path) -> Result<Vec<FrameMask>, CliError> {
    let (h, frames) = read_kind(path, Kind::Masks)?;
    frames
        .into_iter()
        .enumerate()
        .map(|(k, f)| match f {
            Frame::Mask(cells) => FrameMask::new(h.n1 as usize, h.n2 as usize, cells)
                .map_err(|e| CliError::Data(format!("{} frame {k}: {e}", path.display()))),
            Frame::Complex(_) => unreachable!("mask files decode to mask frames"),
        })
        .collect()
}

pub fn write_coils(path: &Path, coils: &CoilMaps) -> Result<(), CliError> {
    let wrap = |e| CliError::container(path, e);
    let (n1, n2) = coils.dims();
    let header = Header::new(Kind::CoilMaps, n1, n2, 1, coils.coils()).map_err(wrap)?;
    let frames: Vec<Frame> = coils
        .maps()
        .iter()
        .map(|m| Frame::Complex(m.iter().copied().collect()))
        .collect();
    container::write_all(path, header, &frames).map_err(wrap)
}

pub fn read_coils(path: &Path) -> Result<CoilMaps, CliError> {
    let (h, frames) = read_kind(path, Kind::CoilMaps)?;
    let maps = frames
        .into_iter()
        .filter_map(|f| match f {
            Frame::Complex(v) => Some(CVector::from_vec(v)),
            Frame::Mask(_) => None,
        })
        .collect();
    CoilMaps::new(h.n1 as usize, h.n2 as usize, maps).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_kind(path: &Path, kind: Kind) -> Result<(Header, Vec<Frame>), CliError> {
    let (h, frames) = container::read_all(path).map_err(|e| CliError::container(path, e))?;
    if h.kind != kind {
        return Err(CliError::Data(format!("{}: expected a {kind:?} file, found {:?}", path.display(), h.kind)));
    }
    Ok((h, frames))
}

// ---- gen-mask ----

#[allow(clippy::too_many_arguments)]
pub fn gen_masks(
    scheme: MaskScheme,
    n1: usize,
    n2: usize,
    q: usize,
    lines: usize,
    reduction: f64,
    m: Option<usize>,
    seed: u64,
) -> Result<Vec<FrameMask>, CliError> {
    if q == 0 {
        return Err(CliError::Config("q must be >= 1".into()));
    }
    (0..q)
        .map(|k| match scheme {
            MaskScheme::Radial => golden_angle_pseudo_radial(n1, n2, lines, k, seed),
            MaskScheme::Cartesian => cartesian_vd_mask(n1, n2, reduction, k, seed),
            MaskScheme::Uniform => uniform_fourier_mask(n1, n2, m.unwrap_or((n1 * n2 / 10).max(1)), k, seed),
        })
        .collect::<lrcs::Result<Vec<_>>>()
        .map_err(config_err)
}

// ---- gen-data ----

#[derive(Serialize)]
struct DatasetInfo<'a> {
    source: &'a Source,
    sampling: &'a crate::config::SamplingSpec,
    /// Incoherence of the low-rank component (three-level data only).
    incoherence: Option<f64>,
    truth_norm: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    container::write_atomic(path, |w| {
        use std::io::Write;
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
    .map_err(|e| CliError::container(path, e))
}

pub fn gen_data(spec: &DataSpec, out: &Path) -> Result<(), CliError> {
    let (n1, n2, q) = spec.source.dims();
    let (z, mu) = match &spec.source {
        Source::ThreeLevel(s) => {
            let d = gen_three_level(s).map_err(config_err)?;
            (d.z, Some(d.mu))
        }
        Source::Phantom(p) => (gen_moving_disk_phantom(p.n1, p.n2, p.q, &p.params).map_err(config_err)?, None),
    };
    let s = &spec.sampling;
    let plan = SamplingPlan::generate(n1, n2, q, s.mc, s.scheme, s.seed).map_err(config_err)?;
    let ops = frame_ops_from_plan(&plan).map_err(config_err)?;
    let y = apply_seq(&ops, &z).map_err(data_err)?;

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_image_seq(&out.join(TRUTH), n1, n2, &z)?;
    write_kspace(&out.join(KSPACE), n1, n2, s.mc, &y)?;
    if plan.masks.is_empty() {
        for stale in [MASKS, COILS] {
            let p = out.join(stale);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
    } else {
        write_masks(&out.join(MASKS), &plan.masks)?;
        write_coils(&out.join(COILS), &plan.coils)?;
    }
    write_json(
        &out.join(SAMPLING),
        &SamplingRecord {
            n1,
            n2,
            q,
            scheme: s.scheme,
            mc: s.mc,
            seed: s.seed,
        },
    )?;
    write_json(
        &out.join(DATASET),
        &DatasetInfo {
            source: &spec.source,
            sampling: s,
            incoherence: mu,
            truth_norm: z.norm(),
        },
    )?;
    println!("wrote {n1} x {n2} x {q} dataset ({} coils) to {}", s.mc, out.display());
    Ok(())
}

// ---- recon ----

/// Operators, measurements and (if present) the truth of a dataset directory.
pub struct Dataset {
    pub n1: usize,
    pub n2: usize,
    pub ops: Vec<FrameOperator>,
    pub y: MeasurementSet,
    pub truth: Option<CMatrix>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let (h, y) = read_kspace(&dir.join(KSPACE))?;
    let (n1, n2, q, mc) = (h.n1 as usize, h.n2 as usize, h.q as usize, h.mc as usize);
    let masks_path = dir.join(MASKS);
    let ops = if masks_path.exists() {
        let masks = read_masks(&masks_path)?;
        let coils_path = dir.join(COILS);
        let coils = if coils_path.exists() {
            read_coils(&coils_path)?
        } else if mc == 1 {
            CoilMaps::single(n1, n2)
        } else {
            return Err(CliError::Data(format!("{} is missing and the k-space has {mc} coils", coils_path.display())));
        };
        if masks.len() != q || masks[0].dims() != (n1, n2) || coils.dims() != (n1, n2) || coils.coils() != mc {
            return Err(CliError::Data(format!(
                "masks ({} frames of {:?}) and coils ({} of {:?}) do not match the k-space ({q} frames of ({n1}, {n2}), {mc} coils)",
                masks.len(),
                masks[0].dims(),
                coils.coils(),
                coils.dims()
            )));
        }
        let coils = Arc::new(coils);
        let fft = Arc::new(Fft2::new(n1, n2));
        masks
            .into_iter()
            .map(|m| MaskedFourier::new(m, coils.clone(), fft.clone()).map(FrameOperator::MaskedFourier))
            .collect::<lrcs::Result<Vec<_>>>()
            .map_err(data_err)?
    } else {
        let path = dir.join(SAMPLING);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let rec: SamplingRecord =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let Scheme::Gaussian { m } = rec.scheme else {
            return Err(CliError::Data(format!("{} is missing", masks_path.display())));
        };
        if (rec.n1, rec.n2, rec.q, rec.mc) != (n1, n2, q, mc) {
            return Err(CliError::Data(format!("{} does not match the k-space header", path.display())));
        }
        gaussian_frame_ops(n1 * n2, m, q, rec.seed).map_err(data_err)?
    };
    for (k, (op, f)) in ops.iter().zip(&y.frames).enumerate() {
        if op.m_total() != f.len() {
            return Err(CliError::Data(format!(
                "frame {k}: the sampling pattern gives {} values, the k-space has {}",
                op.m_total(),
                f.len()
            )));
        }
    }
    let truth_path = dir.join(TRUTH);
    let truth = if truth_path.exists() {
        let (t1, t2, t) = read_image_seq(&truth_path)?;
        if (t1, t2, t.ncols()) != (n1, n2, q) {
            return Err(CliError::Data(format!("{} does not match the k-space grid", truth_path.display())));
        }
        Some(t)
    } else {
        None
    };
    Ok(Dataset { n1, n2, ops, y, truth })
}

/// Run `cfg.method` on a dataset; returns the reconstruction and its report.
pub fn run_method(data: &Dataset, cfg: &RunConfig) -> Result<(CMatrix, ReconReport), CliError> {
    let truth = data.truth.as_ref();
    Ok(match cfg.plan() {
        Plan::Batch(method, pipe) => {
            let r = reconstruct(&data.y, &data.ops, method, &pipe, Init::Spectral, truth)?;
            (r.z, r.report)
        }
        Plan::Track(tc) => {
            let r = run_tracker(&data.y, &data.ops, &tc, truth)?;
            (r.z, r.report)
        }
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    run: &'a RunConfig,
    report: &'a ReconReport,
}

pub fn recon(input: &Path, cfg: &RunConfig, out: &Path) -> Result<ReconReport, CliError> {
    let data = load_dataset(input)?;
    let (z, report) = run_method(&data, cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_image_seq(&out.join(RECON), data.n1, data.n2, &z)?;
    write_json(&out.join(REPORT), &ReportFile { run: cfg, report: &report })?;
    Ok(report)
}

// ---- bench ----

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub nsmse: f64,
    pub seconds: f64,
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  {:>10}  {:>8}\n", "method", "N-S-MSE", "seconds");
    for r in rows {
        s += &format!("{:<width$}  {:>10.3e}  {:>8.2}\n", r.method, r.nsmse, r.seconds);
    }
    s
}

fn timed(method: &str, truth: &CMatrix, f: impl FnOnce() -> Result<CMatrix, CliError>) -> Result<BenchRow, CliError> {
    let t = Instant::now();
    let z = f()?;
    let seconds = t.elapsed().as_secs_f64();
    Ok(BenchRow {
        method: method.to_string(),
        nsmse: nsmse(truth, &z)?,
        seconds,
    })
}

fn bench_rows(data: &Dataset, cfg: &RunConfig, methods: &[MethodName]) -> Result<Vec<BenchRow>, CliError> {
    let truth = data.truth.as_ref().expect("bench data carries its truth");
    let mut rows = vec![
        timed("zero-filled", truth, || Ok(zero_filled(&data.y, &data.ops)?))?,
        timed("altgdmin", truth, || {
            Ok(altgdmin_run(&data.y, &data.ops, &cfg.altgdmin, Init::Spectral, None)?.x)
        })?,
    ];
    for &m in methods {
        let c = RunConfig { method: m, ..cfg.clone() };
        let name = match c.plan() {
            Plan::Batch(method, _) => method.name(),
            Plan::Track(t) => t.mode.name(),
        };
        rows.push(timed(name, truth, || Ok(run_method(data, &c)?.0))?);
    }
    Ok(rows)
}

pub fn bench(suite: Suite, cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    let seed = cfg.seed;
    let batch = [MethodName::Mri1, MethodName::Mri2];
    match suite {
        Suite::Table1Gaussian => {
            let (n1, n2, q, m, r) = (30, 30, 50, 90, 4);
            let ops = gaussian_frame_ops(n1 * n2, m, q, seed)?;
            let x = low_rank_matrix(n1 * n2, q, r, 1.0, seed)?.x;
            let y = apply_seq(&ops, &x)?;
            let data = Dataset {
                n1,
                n2,
                ops,
                y,
                truth: Some(x),
            };
            // the unit-step ISTA of mri2 needs |A_k| <= 1, which raw Gaussian ensembles violate
            bench_rows(&data, cfg, &[MethodName::Mri1])
        }
        Suite::Table1Fourier => {
            let (n1, n2, q) = (30, 30, 50);
            let spec = SyntheticSpec {
                residual: ResidualKind::DenseSmall,
                ..SyntheticSpec::new(n1, n2, q, 4, seed)
            };
            let z = gen_three_level(&spec)?.z;
            let plan = SamplingPlan::generate(n1, n2, q, 1, Scheme::UniformFourier { m: n1 * n2 / 10 }, seed)?;
            let ops = frame_ops_from_plan(&plan)?;
            let y = apply_seq(&ops, &z)?;
            let data = Dataset {
                n1,
                n2,
                ops,
                y,
                truth: Some(z),
            };
            bench_rows(&data, cfg, &batch)
        }
        Suite::PhantomRadial => {
            let (n1, n2, q) = (48, 48, 60);
            let params = PhantomParams {
                seed,
                ..Default::default()
            };
            let z = gen_moving_disk_phantom(n1, n2, q, &params)?;
            let plan = SamplingPlan::generate(n1, n2, q, 4, Scheme::PseudoRadial { lines: 8 }, seed)?;
            let ops = frame_ops_from_plan(&plan)?;
            let y = apply_seq(&ops, &z)?;
            let data = Dataset {
                n1,
                n2,
                ops,
                y,
                truth: Some(z),
            };
            let mut c = cfg.clone();
            c.alpha1 = c.alpha1.min(q / 2);
            c.alpha = c.alpha.min(q / 4);
            bench_rows(
                &data,
                &c,
                &[MethodName::Mri1, MethodName::Mri2, MethodName::St1, MethodName::St2, MethodName::Online],
            )
        }
    }
}

