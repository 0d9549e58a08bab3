//! Dense matrix and index-mask storage.
//!
//! Matrices are stored in the LTP1 binary layout:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "LTPRUNE1"
//! 8       4           rows (u32, little endian)
//! 12      4           cols (u32, little endian)
//! 16      1           role tag (0 visual, 1 text, 2 cls, 3 projection)
//! 17      4*rows*cols row-major f32, little endian
//! ```
//!
//! Small hand-written fixtures may instead be CSV (one row per line, no
//! header). Masks are text: a `total=N` line followed by one kept index per
//! line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LTPRUNE1";
const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RoleTag {
    #[default]
    Visual,
    Text,
    Cls,
    Projection,
}

impl RoleTag {
    pub fn to_byte(self) -> u8 {
        match self {
            RoleTag::Visual => 0,
            RoleTag::Text => 1,
            RoleTag::Cls => 2,
            RoleTag::Projection => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(RoleTag::Visual),
            1 => Some(RoleTag::Text),
            2 => Some(RoleTag::Cls),
            3 => Some(RoleTag::Projection),
            _ => None,
        }
    }
}

/// Row-major `rows x cols` matrix of finite f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    role: RoleTag,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, role: RoleTag) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!(
                "shape {rows}x{cols} has an empty dimension"
            )));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidMatrix(format!("shape {rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::InvalidMatrix(format!(
                "shape {rows}x{cols} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite value {} at row {}, col {}",
                data[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            role,
        })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], role: RoleTag) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data, role)
    }

    pub fn identity(dim: usize, role: RoleTag) -> Result<Self> {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, data, role)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn role(&self) -> RoleTag {
        self.role
    }

    pub fn with_role(mut self, role: RoleTag) -> Self {
        self.role = role;
        self
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// New matrix holding the given rows, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, data, self.role)
    }

    /// `self (n x k) * rhs (k x m)`, accumulated in f64.
    pub fn matmul(&self, rhs: &EmbeddingMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Vec::with_capacity(self.rows * rhs.cols);
        let mut acc = vec![0.0f64; rhs.cols];
        for row in self.iter_rows() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&x, weights) in row.iter().zip(rhs.iter_rows()) {
                for (a, &w) in acc.iter_mut().zip(weights) {
                    // zero weights are skipped so an identity projection is bit-exact
                    if w != 0.0 {
                        *a += f64::from(x) * f64::from(w);
                    }
                }
            }
            out.extend(acc.iter().map(|&a| a as f32));
        }
        Self::new(self.rows, rhs.cols, out, self.role)
    }

    /// Stacks `self` above `other`.
    pub fn vstack(&self, other: &EmbeddingMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {} columns on {} columns",
                other.cols, self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self::new(self.rows + other.rows, self.cols, data, self.role)
    }

    pub fn to_ltp1_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u32).to_le_bytes());
        buf.push(self.role.to_byte());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_ltp1_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt_err = |offset: usize, message: String| Error::Format { offset, message };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(fmt_err(0, "missing LTPRUNE1 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(fmt_err(
                bytes.len(),
                format!("header truncated: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let rows = u32_at(8) as usize;
        let cols = u32_at(12) as usize;
        if rows == 0 || cols == 0 {
            return Err(fmt_err(8, format!("empty shape {rows}x{cols}")));
        }
        let role = RoleTag::from_byte(bytes[16])
            .ok_or_else(|| fmt_err(16, format!("unknown role tag {}", bytes[16])))?;
        let payload = &bytes[HEADER_LEN..];
        let expected = (rows as u64) * (cols as u64) * 4;
        if payload.len() as u64 != expected {
            return Err(fmt_err(
                HEADER_LEN,
                format!(
                    "header declares {rows}x{cols} ({expected} payload bytes) but {} bytes follow",
                    payload.len()
                ),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(fmt_err(
                    HEADER_LEN + 4 * k,
                    format!("non-finite value {v} at row {}, col {}", k / cols, k % cols),
                ));
            }
            data.push(v);
        }
        Self::new(rows, cols, data, role)
    }

    /// Parses comma-separated rows. Blank lines are ignored.
    pub fn from_csv_str(text: &str, role: RoleTag) -> Result<Self> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
            if line.is_empty() {
                continue;
            }
            let mut count = 0;
            for (c, field) in line.split(',').enumerate() {
                let field = field.trim();
                let v: f32 = field.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("column {}: '{field}' is not a number", c + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("column {}: non-finite value '{field}'", c + 1),
                    });
                }
                data.push(v);
                count += 1;
            }
            match cols {
                None => cols = Some(count),
                Some(expected) if expected != count => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("{count} columns, expected {expected}"),
                    })
                }
                _ => {}
            }
            rows += 1;
        }
        let cols = cols.ok_or(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        })?;
        Self::new(rows, cols, data, role)
    }
}

/// Loads an LTP1 file, or a CSV file when the magic is absent. CSV
/// matrices are tagged [`RoleTag::Visual`].
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return EmbeddingMatrix::from_ltp1_bytes(&bytes);
    }
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to(),
        message: "neither LTP1 nor UTF-8 CSV".into(),
    })?;
    EmbeddingMatrix::from_csv_str(text, RoleTag::Visual)
}

pub fn save_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_ltp1_bytes()).map_err(|e| Error::io(path, e))
}

/// Retained token indices out of `total`, strictly increasing and nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    total: usize,
    kept: Vec<usize>,
}

impl IndexMask {
    pub fn new(total: usize, kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::InvalidMask("no kept indices".into()));
        }
        for (pos, w) in kept.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::InvalidMask(format!(
                    "index {} at position {} does not increase on {}",
                    w[1],
                    pos + 1,
                    w[0]
                )));
            }
        }
        let last = *kept.last().unwrap();
        if last >= total {
            return Err(Error::InvalidMask(format!(
                "index {last} out of range for total {total}"
            )));
        }
        Ok(Self { total, kept })
    }

    pub fn full(total: usize) -> Result<Self> {
        Self::new(total, (0..total).collect())
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn pruned(&self) -> usize {
        self.total - self.kept.len()
    }

    pub fn is_full(&self) -> bool {
        self.kept.len() == self.total
    }

    pub fn contains(&self, index: usize) -> bool {
        self.kept.binary_search(&index).is_ok()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("total={}\n", self.total);
        for i in &self.kept {
            let _ = writeln!(s, "{i}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty mask file".into(),
        })?;
        let total = header
            .trim()
            .strip_prefix("total=")
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("expected 'total=N' header, found '{header}'"),
            })?;
        let mut kept: Vec<usize> = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let v: usize = line.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("'{}' is not an index", line.trim()),
            })?;
            if v >= total {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("index {v} out of range for total {total}"),
                });
            }
            if let Some(&prev) = kept.last() {
                if v == prev {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("duplicate index {v}"),
                    });
                }
                if v < prev {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("index {v} is not greater than {prev}"),
                    });
                }
            }
            kept.push(v);
        }
        Self::new(total, kept)
    }
}

pub fn save_mask(mask: &IndexMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mask.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<IndexMask> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    IndexMask::from_text(&text)
}
