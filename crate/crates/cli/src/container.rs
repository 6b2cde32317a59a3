//! `LRCS1` container files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "LRCS1" kind n1 n2 q mc dtype [m_1 .. m_q]   (m table only for k-space)
//! payload, frame after frame
//! ```
//!
//! Complex payloads are interleaved `f64` real/imaginary pairs, each image
//! column-major. K-space frame `k` holds `mc * m_k` values, coil-major, with
//! the sampled cells in row-major raster order. Masks use one byte (0 or 1)
//! per cell. Coil-map files store `mc` images and set `q = 1`.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use lrcs::C64 as Complex64;

pub const MAGIC: &[u8; 5] = b"LRCS1";
const HEADER_FIELDS: usize = 6;
/// Guard against absurd headers before allocating a frame buffer.
const MAX_FRAME_VALUES: u64 = 1 << 31;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(offset: u64, message: impl Into<String>) -> ContainerError {
    ContainerError::Parse {
        offset,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    ImageSeq = 0,
    Kspace = 1,
    Masks = 2,
    CoilMaps = 3,
}

impl Kind {
    fn from_u32(v: u32) -> Option<Kind> {
        Some(match v {
            0 => Kind::ImageSeq,
            1 => Kind::Kspace,
            2 => Kind::Masks,
            3 => Kind::CoilMaps,
            _ => return None,
        })
    }

    fn dtype(self) -> Dtype {
        match self {
            Kind::Masks => Dtype::MaskU8,
            _ => Dtype::ComplexF64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    ComplexF64 = 0,
    MaskU8 = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub kind: Kind,
    pub n1: u32,
    pub n2: u32,
    pub q: u32,
    pub mc: u32,
    /// Per-frame sampled cell counts (k-space only).
    pub m: Vec<u32>,
}

impl Header {
    pub fn new(kind: Kind, n1: usize, n2: usize, q: usize, mc: usize) -> Result<Self, ContainerError> {
        Self::build(kind, n1, n2, q, mc, &[])
    }

    pub fn kspace(n1: usize, n2: usize, mc: usize, m: &[usize]) -> Result<Self, ContainerError> {
        Self::build(Kind::Kspace, n1, n2, m.len(), mc, m)
    }

    fn build(kind: Kind, n1: usize, n2: usize, q: usize, mc: usize, m: &[usize]) -> Result<Self, ContainerError> {
        let to32 = |v: usize, name: &str| {
            u32::try_from(v).map_err(|_| ContainerError::Usage(format!("{name} = {v} does not fit the header")))
        };
        let h = Header {
            kind,
            n1: to32(n1, "n1")?,
            n2: to32(n2, "n2")?,
            q: to32(q, "q")?,
            mc: to32(mc, "mc")?,
            m: m.iter().map(|&v| to32(v, "m_k")).collect::<Result<_, _>>()?,
        };
        h.check().map_err(ContainerError::Usage)?;
        Ok(h)
    }

    pub fn n(&self) -> usize {
        self.n1 as usize * self.n2 as usize
    }

    pub fn frame_count(&self) -> usize {
        match self.kind {
            Kind::CoilMaps => self.mc as usize,
            _ => self.q as usize,
        }
    }

    /// Number of values (complex numbers or mask bytes) in frame `k`.
    pub fn frame_len(&self, k: usize) -> usize {
        match self.kind {
            Kind::Kspace => self.mc as usize * self.m[k] as usize,
            _ => self.n(),
        }
    }

    fn value_bytes(&self) -> usize {
        match self.kind.dtype() {
            Dtype::ComplexF64 => 16,
            Dtype::MaskU8 => 1,
        }
    }

    /// Total payload size in bytes.
    pub fn payload_len(&self) -> u64 {
        (0..self.frame_count()).map(|k| self.frame_len(k) as u64 * self.value_bytes() as u64).sum()
    }

    fn check(&self) -> Result<(), String> {
        if self.n1 == 0 || self.n2 == 0 || self.q == 0 || self.mc == 0 {
            return Err(format!(
                "dimensions must be positive (n1 = {}, n2 = {}, q = {}, mc = {})",
                self.n1, self.n2, self.q, self.mc
            ));
        }
        if self.kind == Kind::CoilMaps && self.q != 1 {
            return Err(format!("coil-map files have q = 1, found {}", self.q));
        }
        if self.kind == Kind::Kspace {
            if self.m.len() != self.q as usize {
                return Err(format!("k-space table has {} entries for q = {}", self.m.len(), self.q));
            }
            if let Some(k) = self.m.iter().position(|&m| m == 0 || m as usize > self.n()) {
                return Err(format!("frame {k}: m_k = {} outside 1..={}", self.m[k], self.n()));
            }
        }
        if (self.n() as u64) * self.mc as u64 > MAX_FRAME_VALUES {
            return Err("frame size exceeds the supported maximum".into());
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 4 * (HEADER_FIELDS + self.m.len()));
        out.extend_from_slice(MAGIC);
        for v in [self.kind as u32, self.n1, self.n2, self.q, self.mc, self.kind.dtype() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.m {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// One frame of payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Complex(Vec<Complex64>),
    Mask(Vec<bool>),
}

/// Sequential reader; frames are decoded one at a time.
pub struct ContainerReader<R: Read> {
    inner: R,
    offset: u64,
    header: Header,
    next: usize,
}

impl<R: Read> ContainerReader<R> {
    pub fn new(mut inner: R) -> Result<Self, ContainerError> {
        let mut offset = 0u64;
        let mut magic = [0u8; 5];
        read_exact_at(&mut inner, &mut magic, &mut offset, "magic")?;
        if &magic != MAGIC {
            return Err(parse_err(0, format!("bad magic {:?}, expected \"LRCS1\"", String::from_utf8_lossy(&magic))));
        }
        let mut fields = [0u32; HEADER_FIELDS];
        let names = ["kind", "n1", "n2", "q", "mc", "dtype"];
        for (f, name) in fields.iter_mut().zip(names) {
            *f = read_u32(&mut inner, &mut offset, name)?;
        }
        let kind = Kind::from_u32(fields[0]).ok_or_else(|| parse_err(5, format!("unknown kind {}", fields[0])))?;
        if fields[5] != kind.dtype() as u32 {
            return Err(parse_err(25, format!("dtype {} does not match kind {:?}", fields[5], kind)));
        }
        let mut header = Header {
            kind,
            n1: fields[1],
            n2: fields[2],
            q: fields[3],
            mc: fields[4],
            m: Vec::new(),
        };
        if kind == Kind::Kspace {
            if header.q as u64 > MAX_FRAME_VALUES {
                return Err(parse_err(17, "frame count too large"));
            }
            for k in 0..header.q {
                header.m.push(read_u32(&mut inner, &mut offset, &format!("m_{k}"))?);
            }
        }
        header.check().map_err(|m| parse_err(5, format!("invalid header: {m}")))?;
        Ok(ContainerReader {
            inner,
            offset,
            header,
            next: 0,
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    /// Byte offset of the next unread byte.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, ContainerError> {
        if self.next == self.header.frame_count() {
            return Ok(None);
        }
        let k = self.next;
        let len = self.header.frame_len(k);
        let what = format!("frame {k}");
        let frame = match self.header.kind.dtype() {
            Dtype::ComplexF64 => {
                let mut buf = vec![0u8; len * 16];
                read_exact_at(&mut self.inner, &mut buf, &mut self.offset, &what)?;
                Frame::Complex(
                    buf.chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..].try_into().unwrap()),
                            )
                        })
                        .collect(),
                )
            }
            Dtype::MaskU8 => {
                let start = self.offset;
                let mut buf = vec![0u8; len];
                read_exact_at(&mut self.inner, &mut buf, &mut self.offset, &what)?;
                if let Some(p) = buf.iter().position(|&b| b > 1) {
                    return Err(parse_err(start + p as u64, format!("mask byte {} is not 0 or 1", buf[p])));
                }
                Frame::Mask(buf.into_iter().map(|b| b == 1).collect())
            }
        };
        self.next += 1;
        Ok(Some(frame))
    }

    /// Check that every frame was read and nothing follows the payload.
    pub fn finish(mut self) -> Result<(), ContainerError> {
        if self.next != self.header.frame_count() {
            return Err(ContainerError::Usage(format!(
                "{} of {} frames read",
                self.next,
                self.header.frame_count()
            )));
        }
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(parse_err(self.offset, "trailing bytes after payload")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<(), ContainerError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(parse_err(
                    *offset + filled as u64,
                    format!("unexpected end of file in {what} ({} of {} bytes)", filled, buf.len()),
                ))
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64, what: &str) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, offset, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Sequential writer; `finish` checks that the header's frame count was met.
pub struct ContainerWriter<W: Write> {
    inner: W,
    header: Header,
    written: usize,
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(mut inner: W, header: Header) -> Result<Self, ContainerError> {
        inner.write_all(&header.encode())?;
        Ok(ContainerWriter {
            inner,
            header,
            written: 0,
        })
    }

    fn expect_frame(&self, len: usize, dtype: Dtype) -> Result<(), ContainerError> {
        if self.written == self.header.frame_count() {
            return Err(ContainerError::Usage("all frames already written".into()));
        }
        if dtype != self.header.kind.dtype() {
            return Err(ContainerError::Usage(format!("wrong value type for a {:?} file", self.header.kind)));
        }
        let want = self.header.frame_len(self.written);
        if len != want {
            return Err(ContainerError::Usage(format!(
                "frame {} has {len} values, header says {want}",
                self.written
            )));
        }
        Ok(())
    }

    pub fn write_complex(&mut self, values: &[Complex64]) -> Result<(), ContainerError> {
        self.expect_frame(values.len(), Dtype::ComplexF64)?;
        let mut buf = Vec::with_capacity(values.len() * 16);
        for v in values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn write_mask(&mut self, cells: &[bool]) -> Result<(), ContainerError> {
        self.expect_frame(cells.len(), Dtype::MaskU8)?;
        let buf: Vec<u8> = cells.iter().map(|&c| c as u8).collect();
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, ContainerError> {
        if self.written != self.header.frame_count() {
            return Err(ContainerError::Usage(format!(
                "{} of {} frames written",
                self.written,
                self.header.frame_count()
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Write `path` through a sibling temporary file and rename it into place.
pub fn write_atomic<T>(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<T, ContainerError>,
) -> Result<T, ContainerError> {
    let name = path
        .file_name()
        .ok_or_else(|| ContainerError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let out = body(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(out)
    })();
    match result {
        Ok(out) => {
            fs::rename(&tmp, path)?;
            Ok(out)
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn open(path: &Path) -> Result<ContainerReader<BufReader<File>>, ContainerError> {
    ContainerReader::new(BufReader::new(File::open(path)?))
}

/// Header plus every frame, then the trailing-bytes check.
pub fn read_all(path: &Path) -> Result<(Header, Vec<Frame>), ContainerError> {
    let mut r = open(path)?;
    let header = r.header().clone();
    let mut frames = Vec::with_capacity(header.frame_count());
    while let Some(f) = r.next_frame()? {
        frames.push(f);
    }
    r.finish()?;
    Ok((header, frames))
}

/// Write a header and frames atomically.
pub fn write_all(path: &Path, header: Header, frames: &[Frame]) -> Result<(), ContainerError> {
    write_atomic(path, |w| {
        let mut cw = ContainerWriter::new(w, header)?;
        for f in frames {
            match f {
                Frame::Complex(v) => cw.write_complex(v)?,
                Frame::Mask(m) => cw.write_mask(m)?,
            }
        }
        cw.finish()?;
        Ok(())
    })
}
