//! Stage-1 prune, projection, concatenation and stage-2 eviction.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eviction::{run_stream, EvictionConfig, EvictionState};
use crate::segmentation::{segment, stage1_mask, SmoothingMode, SplitResult};
use crate::similarity::{cls_similarity, sort_descending};
use crate::tensor_io::{EmbeddingMatrix, IndexMask, RoleTag};

pub const DEFAULT_ALPHA: f64 = 0.24;
pub const DEFAULT_HEAVY_RATIO: f64 = 0.5;
pub const DEFAULT_RECENT_RATIO: f64 = 0.5;

/// Stage-2 budgets, either fixed or derived from the concatenated length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvictionBudget {
    Fixed(EvictionConfig),
    Ratios {
        heavy_ratio: f64,
        recent_ratio: f64,
        /// Cache budget B; `None` means half the stage-2 input length.
        cache_budget: Option<usize>,
        include_self: bool,
    },
}

impl Default for EvictionBudget {
    fn default() -> Self {
        EvictionBudget::Ratios {
            heavy_ratio: DEFAULT_HEAVY_RATIO,
            recent_ratio: DEFAULT_RECENT_RATIO,
            cache_budget: None,
            include_self: true,
        }
    }
}

impl EvictionBudget {
    /// Resolves budgets for a stage-2 input of `len` tokens.
    pub fn resolve(&self, len: usize) -> Result<EvictionConfig> {
        match *self {
            EvictionBudget::Fixed(c) => Ok(c),
            EvictionBudget::Ratios {
                heavy_ratio,
                recent_ratio,
                cache_budget,
                include_self,
            } => {
                let budget = cache_budget.unwrap_or_else(|| len.div_ceil(2));
                Ok(
                    EvictionConfig::from_ratios(heavy_ratio, recent_ratio, budget)?
                        .with_include_self(include_self),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub smoothing_mode: SmoothingMode,
    pub eviction: EvictionBudget,
    /// `d_visual x d_text`; identity when absent.
    pub projection: Option<EmbeddingMatrix>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            smoothing_mode: SmoothingMode::Multiply,
            eviction: EvictionBudget::default(),
            projection: None,
        }
    }
}

/// Token counts at each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineCounts {
    pub visual_in: usize,
    pub text_in: usize,
    pub visual_after_stage1: usize,
    pub visual_after_stage2: usize,
    pub text_after_stage2: usize,
}

impl PipelineCounts {
    pub fn total_in(&self) -> usize {
        self.visual_in + self.text_in
    }

    pub fn total_after_concat(&self) -> usize {
        self.visual_after_stage1 + self.text_in
    }

    pub fn total_after_stage2(&self) -> usize {
        self.visual_after_stage2 + self.text_after_stage2
    }

    /// Retained over original token count.
    pub fn compression_ratio(&self) -> f64 {
        self.total_after_stage2() as f64 / self.total_in() as f64
    }

    /// Two-column `metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    /// Aligned human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "visual tokens:   {} -> {} (stage 1) -> {} (stage 2)",
            self.visual_in, self.visual_after_stage1, self.visual_after_stage2
        );
        let _ = writeln!(
            s,
            "text tokens:     {} -> {} (stage 2)",
            self.text_in, self.text_after_stage2
        );
        let _ = writeln!(
            s,
            "total tokens:    {} -> {} (concat) -> {} (stage 2)",
            self.total_in(),
            self.total_after_concat(),
            self.total_after_stage2()
        );
        let _ = writeln!(s, "compression:     {:.4}", self.compression_ratio());
        s
    }

    fn rows(&self) -> [(&'static str, String); 9] {
        [
            ("visual_in", self.visual_in.to_string()),
            ("text_in", self.text_in.to_string()),
            ("visual_after_stage1", self.visual_after_stage1.to_string()),
            ("total_after_concat", self.total_after_concat().to_string()),
            ("visual_after_stage2", self.visual_after_stage2.to_string()),
            ("text_after_stage2", self.text_after_stage2.to_string()),
            ("total_after_stage2", self.total_after_stage2().to_string()),
            ("total_in", self.total_in().to_string()),
            ("compression_ratio", self.compression_ratio().to_string()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub counts: PipelineCounts,
    pub split: SplitResult,
    /// Over the original visual tokens.
    pub stage1_mask: IndexMask,
    /// Over the concatenated `[visual kept; text]` sequence.
    pub stage2_mask: IndexMask,
    pub eviction: EvictionState,
    pub eviction_config: EvictionConfig,
}

impl PipelineReport {
    /// Stage-2 survivors mapped back to original visual indices.
    pub fn surviving_visual(&self) -> Vec<usize> {
        let vis = self.counts.visual_after_stage1;
        self.stage2_mask
            .kept()
            .iter()
            .take_while(|&&i| i < vis)
            .map(|&i| self.stage1_mask.kept()[i])
            .collect()
    }

    /// Stage-2 surviving text token indices, relative to the text input.
    pub fn surviving_text(&self) -> Vec<usize> {
        let vis = self.counts.visual_after_stage1;
        self.stage2_mask
            .kept()
            .iter()
            .filter(|&&i| i >= vis)
            .map(|&i| i - vis)
            .collect()
    }
}

/// Stage 1 alone: CLS similarity, split, smoothing, top-k mask.
pub fn prune_visual(
    cls: &EmbeddingMatrix,
    visual: &EmbeddingMatrix,
    alpha: f64,
    mode: SmoothingMode,
) -> Result<(SplitResult, IndexMask)> {
    let curve = sort_descending(&cls_similarity(cls, visual)?)?;
    let split = segment(&curve, alpha, mode)?;
    let mask = stage1_mask(&curve, split.kept_count)?;
    Ok((split, mask))
}

/// Projects kept visual rows into text space and appends the text rows.
pub fn project_and_concat(
    visual_kept: &EmbeddingMatrix,
    text: Option<&EmbeddingMatrix>,
    projection: Option<&EmbeddingMatrix>,
) -> Result<EmbeddingMatrix> {
    let projected = match projection {
        Some(p) => visual_kept.matmul(p).map_err(|_| {
            Error::DimensionMismatch(format!(
                "projection is {}x{} but visual tokens have {} dims",
                p.rows(),
                p.cols(),
                visual_kept.cols()
            ))
        })?,
        None => visual_kept.clone(),
    };
    match text {
        Some(t) => projected.vstack(t).map_err(|_| {
            Error::DimensionMismatch(format!(
                "projected visual tokens have {} dims but text tokens have {}",
                projected.cols(),
                t.cols()
            ))
        }),
        None => Ok(projected),
    }
    .map(|m| m.with_role(RoleTag::Text))
}

pub fn run_pipeline(
    cls: &EmbeddingMatrix,
    visual: &EmbeddingMatrix,
    text: Option<&EmbeddingMatrix>,
    config: &PipelineConfig,
) -> Result<PipelineReport> {
    let (split, stage1) = prune_visual(cls, visual, config.alpha, config.smoothing_mode)?;
    let visual_kept = visual.select_rows(stage1.kept())?;
    let sequence = project_and_concat(&visual_kept, text, config.projection.as_ref())?;

    let eviction_config = config.eviction.resolve(sequence.rows())?;
    let stream = run_stream(&sequence, stage1.len(), eviction_config)?;

    let counts = PipelineCounts {
        visual_in: visual.rows(),
        text_in: text.map_or(0, EmbeddingMatrix::rows),
        visual_after_stage1: stage1.len(),
        visual_after_stage2: stream.kept_visual(),
        text_after_stage2: stream.kept_text(),
    };
    Ok(PipelineReport {
        counts,
        split,
        stage1_mask: stage1,
        stage2_mask: stream.mask,
        eviction: stream.state,
        eviction_config,
    })
}
