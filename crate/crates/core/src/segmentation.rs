//! Head/tail split of a descending similarity curve.
//!
//! For a curve `d_1 >= ... >= d_n` the split objective is
//!
//! ```text
//! f(i) = (n - i) * (d_1 - d_i) / (d_1 - d_n),   i = 1..n-1
//! ```
//!
//! and the split point `i*` is its first maximizer. Indices `i` are 1-based
//! here; masks leaving this module are 0-based.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::similarity::SimilarityCurve;
use crate::tensor_io::IndexMask;

/// How the split point becomes a kept-token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingMode {
    /// `k = round(alpha * i*)`
    #[default]
    Multiply,
    /// `k = i*`
    Identity,
    /// `k = round((1 + alpha) * i*)`
    Expand,
}

impl FromStr for SmoothingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multiply" => Ok(SmoothingMode::Multiply),
            "identity" => Ok(SmoothingMode::Identity),
            "expand" => Ok(SmoothingMode::Expand),
            other => Err(Error::InvalidArgument(format!(
                "unknown smoothing mode '{other}' (expected multiply, identity or expand)"
            ))),
        }
    }
}

impl fmt::Display for SmoothingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoothingMode::Multiply => "multiply",
            SmoothingMode::Identity => "identity",
            SmoothingMode::Expand => "expand",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    /// `f(1)..f(n-1)`; `objective[0]` is `f(1)`. Empty when no split was made.
    pub objective: Vec<f64>,
    /// 1-based split point, `None` for flat curves and single-token curves.
    pub i_star: Option<usize>,
    pub kept_count: usize,
    pub alpha: f64,
    pub mode: SmoothingMode,
}

impl SplitResult {
    /// True when the curve carried no split signal and every token is kept.
    pub fn keeps_all(&self) -> bool {
        self.i_star.is_none()
    }

    /// Writes `i,f_i` rows.
    pub fn write_objective_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,f_i")?;
        for (k, f) in self.objective.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, f)?;
        }
        Ok(())
    }
}

fn check_descending(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite curve value at position {i}"
        )));
    }
    if let Some(i) = values.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument(format!(
            "curve is not descending at position {}",
            i + 1
        )));
    }
    Ok(())
}

/// `f(i)` for `i = 1..n-1` over a descending curve.
pub fn split_objective(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::CurveTooShort(n));
    }
    check_descending(values)?;
    let first = values[0];
    let c = first - values[n - 1];
    if c == 0.0 {
        return Err(Error::DegenerateCurve(n));
    }
    Ok(values[..n - 1]
        .iter()
        .enumerate()
        .map(|(k, &d)| ((n - 1 - k) as f64) * (first - d) / c)
        .collect())
}

/// Index of the first maximum, 1-based.
fn first_argmax(objective: &[f64]) -> usize {
    let mut best = 0;
    for (k, &f) in objective.iter().enumerate().skip(1) {
        if f > objective[best] {
            best = k;
        }
    }
    best + 1
}

/// Smallest `i` in `1..n-1` maximizing `f(i)`.
pub fn find_split(values: &[f64]) -> Result<usize> {
    split_objective(values).map(|f| first_argmax(&f))
}

/// Rounds half away from zero, then clamps to `[1, n]`.
pub fn apply_smoothing(i_star: usize, alpha: f64, n: usize, mode: SmoothingMode) -> Result<usize> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing coefficient must be positive, got {alpha}"
        )));
    }
    if n < 2 || i_star < 1 || i_star > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "split point {i_star} outside 1..{}",
            n.saturating_sub(1)
        )));
    }
    let scaled = match mode {
        SmoothingMode::Identity => return Ok(i_star),
        SmoothingMode::Multiply => alpha * i_star as f64,
        SmoothingMode::Expand => (1.0 + alpha) * i_star as f64,
    };
    Ok((scaled.round() as usize).clamp(1, n))
}

/// Full stage-1 split over a curve. Flat curves and single-token curves keep
/// every token.
pub fn segment(curve: &SimilarityCurve, alpha: f64, mode: SmoothingMode) -> Result<SplitResult> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing coefficient must be positive, got {alpha}"
        )));
    }
    let n = curve.n();
    let keep_all = SplitResult {
        objective: Vec::new(),
        i_star: None,
        kept_count: n,
        alpha,
        mode,
    };
    match split_objective(curve.values()) {
        Ok(objective) => {
            let i_star = first_argmax(&objective);
            let kept_count = apply_smoothing(i_star, alpha, n, mode)?;
            Ok(SplitResult {
                objective,
                i_star: Some(i_star),
                kept_count,
                alpha,
                mode,
            })
        }
        Err(Error::CurveTooShort(_)) | Err(Error::DegenerateCurve(_)) => Ok(keep_all),
        Err(e) => Err(e),
    }
}

/// Original indices of the top-`k` curve entries, ascending.
pub fn stage1_mask(curve: &SimilarityCurve, k: usize) -> Result<IndexMask> {
    let n = curve.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!(
            "kept count {k} outside 1..{n}"
        )));
    }
    let mut kept = curve.source_index()[..k].to_vec();
    kept.sort_unstable();
    IndexMask::new(n, kept)
}
