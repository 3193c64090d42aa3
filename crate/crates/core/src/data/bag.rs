use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::DataError;
use crate::fsutil::write_atomic;

pub const BAG_MAGIC: &[u8; 4] = b"DSB1";
pub const BAG_VERSION: u32 = 1;

/// Grid position of one low-resolution patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub wsi: u32,
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub fn new(wsi: u32, x: u32, y: u32) -> Self {
        Self { wsi, x, y }
    }
}

/// One patient's dual-resolution token bag.
///
/// `high_tokens` holds `lambda² · m` rows: rows `[j·λ², (j+1)·λ²)` are the
/// square aligned with low-resolution token `j`, row-major within the
/// `λ × λ` grid. `censor == 1` means alive at last follow-up.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientBag {
    pub patient_id: String,
    pub lambda: usize,
    pub d: usize,
    pub coords: Vec<Coord>,
    pub low_tokens: Vec<f32>,
    pub high_tokens: Vec<f32>,
    pub time: f64,
    pub censor: u8,
}

impl PatientBag {
    /// Number of low-resolution tokens.
    pub fn m(&self) -> usize {
        self.coords.len()
    }

    pub fn square_len(&self) -> usize {
        self.lambda * self.lambda
    }

    pub fn high_rows(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.high_tokens.len() / self.d
        }
    }

    pub fn is_event(&self) -> bool {
        self.censor == 0
    }

    pub fn low_row(&self, j: usize) -> &[f32] {
        &self.low_tokens[j * self.d..(j + 1) * self.d]
    }

    pub fn square(&self, j: usize) -> &[f32] {
        let s = self.square_len() * self.d;
        &self.high_tokens[j * s..(j + 1) * s]
    }

    /// Checks every structural invariant of the bag.
    pub fn validate(&self) -> Result<(), DataError> {
        let m = self.m();
        if m == 0 {
            return Err(DataError::InvalidBag("bag has no tokens (m = 0)".into()));
        }
        if self.lambda == 0 || self.d == 0 {
            return Err(DataError::InvalidBag(format!(
                "lambda = {} and d = {} must both be >= 1",
                self.lambda, self.d
            )));
        }
        if self.low_tokens.len() != m * self.d {
            return Err(DataError::InvalidBag(format!(
                "low_tokens has {} values, expected m * d = {}",
                self.low_tokens.len(),
                m * self.d
            )));
        }
        if self.high_tokens.len() % self.d != 0 || self.high_rows() != self.square_len() * m {
            return Err(DataError::AlignmentViolation {
                high_rows: self.high_tokens.len() / self.d,
                expected: self.square_len() * m,
            });
        }
        let mut seen = HashSet::with_capacity(m);
        for c in &self.coords {
            if !seen.insert(*c) {
                return Err(DataError::DuplicateCoordinate { wsi: c.wsi, x: c.x, y: c.y });
            }
        }
        if !self.low_tokens.iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFiniteToken("low_tokens"));
        }
        if !self.high_tokens.iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFiniteToken("high_tokens"));
        }
        if !(self.time.is_finite() && self.time >= 0.0) || self.censor > 1 {
            return Err(DataError::InvalidBag(format!(
                "bad label time = {}, censor = {}",
                self.time, self.censor
            )));
        }
        Ok(())
    }
}

/// Sorts tokens (and their high-resolution squares) by
/// `(wsi_index, grid_y, grid_x)`.
pub fn canonical_order(bag: &PatientBag) -> PatientBag {
    let mut order: Vec<usize> = (0..bag.m()).collect();
    order.sort_by_key(|&j| {
        let c = bag.coords[j];
        (c.wsi, c.y, c.x)
    });
    let mut out = bag.clone();
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return out;
    }
    let d = bag.d;
    let sq = bag.square_len() * d;
    out.coords = order.iter().map(|&j| bag.coords[j]).collect();
    out.low_tokens = order.iter().flat_map(|&j| bag.low_tokens[j * d..(j + 1) * d].iter().copied()).collect();
    out.high_tokens = order.iter().flat_map(|&j| bag.high_tokens[j * sq..(j + 1) * sq].iter().copied()).collect();
    out
}

/// Serializes the bag payload. Labels and the patient id live in the cohort
/// manifest, not in the bag file.
pub fn save_bag(bag: &PatientBag, path: &Path) -> Result<(), DataError> {
    bag.validate()?;
    let coord_max = i32::MAX as u32;
    if bag.coords.iter().any(|c| c.wsi > coord_max || c.x > coord_max || c.y > coord_max) {
        return Err(DataError::InvalidBag("coordinate exceeds i32 range".into()));
    }
    let mut buf = Vec::with_capacity(20 + 12 * bag.m() + 4 * (bag.low_tokens.len() + bag.high_tokens.len()));
    buf.extend_from_slice(BAG_MAGIC);
    for v in [BAG_VERSION, bag.m() as u32, bag.lambda as u32, bag.d as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in &bag.coords {
        for v in [c.wsi as i32, c.x as i32, c.y as i32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in bag.low_tokens.iter().chain(&bag.high_tokens) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf).map_err(|e| DataError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::TruncatedFile {
                path: self.path.to_path_buf(),
                needed: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32, DataError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DataError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| DataError::InvalidBag("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect())
    }
}

/// Reads a bag file. The patient id is taken from the file stem; time and
/// censor are zero until filled in from a manifest.
///
/// The high-resolution section size is inferred from the remaining bytes,
/// so a file whose high-resolution row count disagrees with `lambda² · m`
/// is reported as an [`DataError::AlignmentViolation`].
pub fn load_bag(path: &Path) -> Result<PatientBag, DataError> {
    let buf = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(4).map_err(|_| DataError::BadMagic { path: path.to_path_buf() })? != BAG_MAGIC {
        return Err(DataError::BadMagic { path: path.to_path_buf() });
    }
    let version = r.u32()?;
    if version != BAG_VERSION {
        return Err(DataError::UnsupportedVersion { path: path.to_path_buf(), version });
    }
    let m = r.u32()? as usize;
    let lambda = r.u32()? as usize;
    let d = r.u32()? as usize;
    if d == 0 || lambda == 0 || m == 0 {
        return Err(DataError::InvalidBag(format!("header m = {m}, lambda = {lambda}, d = {d}")));
    }
    let mut coords = Vec::with_capacity(m.min(1 << 20));
    for _ in 0..m {
        let (w, x, y) = (r.i32()?, r.i32()?, r.i32()?);
        if w < 0 || x < 0 || y < 0 {
            return Err(DataError::InvalidBag(format!("negative coordinate ({w}, {x}, {y})")));
        }
        coords.push(Coord::new(w as u32, x as u32, y as u32));
    }
    let low_tokens = r.f32s(m * d)?;
    let rest = buf.len() - r.pos;
    let row_bytes = 4 * d;
    let expected = lambda * lambda * m;
    if rest % row_bytes != 0 {
        if rest / row_bytes < expected {
            return Err(DataError::TruncatedFile {
                path: path.to_path_buf(),
                needed: r.pos + expected * row_bytes,
                found: buf.len(),
            });
        }
        return Err(DataError::InvalidBag(format!("{} trailing bytes", rest % row_bytes)));
    }
    if rest / row_bytes != expected {
        return Err(DataError::AlignmentViolation { high_rows: rest / row_bytes, expected });
    }
    let high_tokens = r.f32s(expected * d)?;
    let patient_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bag = PatientBag { patient_id, lambda, d, coords, low_tokens, high_tokens, time: 0.0, censor: 0 };
    bag.validate()?;
    Ok(bag)
}
