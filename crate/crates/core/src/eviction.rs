//! Streaming heavy/recent budget eviction.
//!
//! Tokens arrive one at a time. Each arrival attends causally to the live
//! tokens and to itself; every live token's importance accumulates the
//! attention it receives, and the arrival starts with its self-weight. Once
//! more than `M + N` tokens are live, the lowest-scoring token outside the
//! last `M` arrivals is dropped. Evicted tokens neither receive nor
//! contribute attention afterwards.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::similarity::{dot, softmax};
use crate::tensor_io::{EmbeddingMatrix, IndexMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvictionConfig {
    /// N: tokens retained by accumulated importance.
    pub heavy_budget: usize,
    /// M: newest arrivals that are never evicted.
    pub recent_budget: usize,
    /// Credit an arriving token with its own attention weight.
    pub include_self: bool,
}

impl EvictionConfig {
    pub fn new(heavy_budget: usize, recent_budget: usize) -> Result<Self> {
        if heavy_budget < 1 {
            return Err(Error::InvalidArgument(
                "heavy budget must be at least 1".into(),
            ));
        }
        Ok(Self {
            heavy_budget,
            recent_budget,
            include_self: true,
        })
    }

    /// `M = round(recent_ratio * budget)`, `N = max(1, round(heavy_ratio * budget))`.
    pub fn from_ratios(heavy_ratio: f64, recent_ratio: f64, budget: usize) -> Result<Self> {
        for (name, r) in [("heavy", heavy_ratio), ("recent", recent_ratio)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} ratio must lie in (0, 1], got {r}"
                )));
            }
        }
        let heavy = ((heavy_ratio * budget as f64).round() as usize).max(1);
        let recent = (recent_ratio * budget as f64).round() as usize;
        Self::new(heavy, recent)
    }

    pub fn with_include_self(mut self, include_self: bool) -> Self {
        self.include_self = include_self;
        self
    }

    pub fn capacity(&self) -> usize {
        self.heavy_budget + self.recent_budget
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eviction {
    /// Arrival index of the token whose step caused the eviction.
    pub step: usize,
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvictionState {
    /// Accumulated importance of each live token, keyed by arrival index.
    scores: BTreeMap<usize, f64>,
    processed: usize,
    evicted: Vec<Eviction>,
}

impl EvictionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tokens seen so far (X).
    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn live(&self) -> impl Iterator<Item = usize> + '_ {
        self.scores.keys().copied()
    }

    pub fn live_len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_live(&self, index: usize) -> bool {
        self.scores.contains_key(&index)
    }

    pub fn score(&self, index: usize) -> Option<f64> {
        self.scores.get(&index).copied()
    }

    pub fn scores(&self) -> &BTreeMap<usize, f64> {
        &self.scores
    }

    pub fn evicted(&self) -> &[Eviction] {
        &self.evicted
    }

    /// First arrival index inside the recent window.
    pub fn recent_start(&self, config: &EvictionConfig) -> usize {
        self.processed.saturating_sub(config.recent_budget)
    }

    /// Feeds one arrival. `row` holds the arrival's attention to each live
    /// token in ascending index order, followed by its self-weight.
    pub fn step(&mut self, row: &[f64], config: &EvictionConfig) -> Result<Option<Eviction>> {
        if row.len() != self.scores.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "attention row has {} weights, expected {} live + 1 self",
                row.len(),
                self.scores.len()
            )));
        }
        if let Some(i) = row.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "attention weight {} at position {i} is negative or non-finite",
                row[i]
            )));
        }
        let (self_weight, to_live) = row.split_last().unwrap();
        for (score, w) in self.scores.values_mut().zip(to_live) {
            *score += w;
        }
        let arriving = self.processed;
        let initial = if config.include_self {
            *self_weight
        } else {
            0.0
        };
        self.scores.insert(arriving, initial);
        self.processed += 1;

        if self.scores.len() <= config.capacity() {
            return Ok(None);
        }
        let recent_start = self.recent_start(config);
        let mut victim: Option<(usize, f64)> = None;
        for (&idx, &score) in self.scores.range(..recent_start) {
            if victim.is_none_or(|(_, best)| score < best) {
                victim = Some((idx, score));
            }
        }
        // over capacity implies at least N + 1 >= 2 tokens precede the window
        let (index, score) = victim.expect("no eviction candidate outside the recent window");
        self.scores.remove(&index);
        let ev = Eviction {
            step: arriving,
            index,
            score,
        };
        self.evicted.push(ev);
        Ok(Some(ev))
    }

    pub fn mask(&self) -> Result<IndexMask> {
        IndexMask::new(self.processed, self.live().collect())
    }

    /// Writes `step,evicted_index,score_at_eviction` rows.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,evicted_index,score_at_eviction")?;
        for e in &self.evicted {
            writeln!(w, "{},{},{}", e.step, e.index, e.score)?;
        }
        Ok(())
    }
}

/// Replays recorded attention rows from an empty state.
pub fn replay<R: AsRef<[f64]>>(rows: &[R], config: &EvictionConfig) -> Result<EvictionState> {
    let mut state = EvictionState::new();
    for row in rows {
        state.step(row.as_ref(), config)?;
    }
    Ok(state)
}

/// Eviction over embeddings: computes each arrival's causal attention row
/// (`softmax(q . k / sqrt(d))` over live keys plus itself) and steps the
/// state. Can be resumed with more tokens at any time.
#[derive(Debug, Clone)]
pub struct Evictor {
    config: EvictionConfig,
    state: EvictionState,
    keys: BTreeMap<usize, Vec<f32>>,
    dim: Option<usize>,
    trace: Option<Vec<Vec<f64>>>,
}

impl Evictor {
    pub fn new(config: EvictionConfig) -> Self {
        Self {
            config,
            state: EvictionState::new(),
            keys: BTreeMap::new(),
            dim: None,
            trace: None,
        }
    }

    /// Records every attention row fed to the state.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &EvictionConfig {
        &self.config
    }

    pub fn state(&self) -> &EvictionState {
        &self.state
    }

    pub fn trace(&self) -> Option<&[Vec<f64>]> {
        self.trace.as_deref()
    }

    pub fn into_state(self) -> EvictionState {
        self.state
    }

    pub fn push(&mut self, token: &[f32]) -> Result<Option<Eviction>> {
        match self.dim {
            None if token.is_empty() => {
                return Err(Error::InvalidArgument("empty token embedding".into()))
            }
            None => self.dim = Some(token.len()),
            Some(d) if d != token.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "token has {} dims, stream has {d}",
                    token.len()
                )))
            }
            _ => {}
        }
        let scale = (token.len() as f64).sqrt();
        let mut logits: Vec<f64> = self.keys.values().map(|k| dot(token, k) / scale).collect();
        logits.push(dot(token, token) / scale);
        let row = softmax(&logits);
        let arriving = self.state.processed();
        let ev = self.state.step(&row, &self.config)?;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(row);
        }
        self.keys.insert(arriving, token.to_vec());
        if let Some(ev) = ev {
            self.keys.remove(&ev.index);
        }
        Ok(ev)
    }

    pub fn extend(&mut self, tokens: &EmbeddingMatrix) -> Result<()> {
        for row in tokens.iter_rows() {
            self.push(row)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StreamResult {
    pub mask: IndexMask,
    pub state: EvictionState,
    /// First text token; earlier indices are visual.
    pub boundary: usize,
}

impl StreamResult {
    pub fn kept_visual(&self) -> usize {
        self.mask.kept().partition_point(|&i| i < self.boundary)
    }

    pub fn kept_text(&self) -> usize {
        self.mask.len() - self.kept_visual()
    }
}

/// Streams every row of `tokens` through a fresh [`Evictor`].
pub fn run_stream(
    tokens: &EmbeddingMatrix,
    boundary: usize,
    config: EvictionConfig,
) -> Result<StreamResult> {
    if boundary > tokens.rows() {
        return Err(Error::InvalidArgument(format!(
            "boundary {boundary} beyond {} tokens",
            tokens.rows()
        )));
    }
    let mut evictor = Evictor::new(config);
    evictor.extend(tokens)?;
    let state = evictor.into_state();
    Ok(StreamResult {
        mask: state.mask()?,
        state,
        boundary,
    })
}
