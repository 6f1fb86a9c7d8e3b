//! Parameter counting for the byte-level transformer, the budgeted depth-width
//! solver, and the distance of an aspect ratio to the efficient interval.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOCAB: usize = 256;
pub const CONTEXT: usize = 256;
pub const HEAD_DIM: usize = 4;
pub const MAX_PADDING: f64 = 0.20;
/// Depths scanned per budget.
pub const DEFAULT_DEPTHS: [usize; 12] = [1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 24];

/// Embeddings, untied head, `L` pre-norm blocks with bias-free linears and
/// affine norms, and a final norm.
pub fn param_count(layers: usize, d: usize, vocab: usize, context: usize) -> usize {
    vocab * d + context * d + vocab * d + layers * (12 * d * d + 4 * d) + 2 * d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub id: String,
    pub target_n: usize,
    pub depth: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub active_n: usize,
    pub depth_width_ratio: f64,
    pub vocab: usize,
    pub context: usize,
}

impl ShapeConfig {
    pub fn d_head(&self) -> usize {
        HEAD_DIM
    }

    pub fn alpha(&self) -> f64 {
        self.depth_width_ratio
    }

    pub fn padding_ratio(&self) -> f64 {
        (self.target_n as f64 - self.active_n as f64) / self.target_n as f64
    }

    /// A shape outside the budget grid, e.g. for tests and demos.
    pub fn custom(depth: usize, d_model: usize, vocab: usize, context: usize) -> Result<Self> {
        if depth == 0 || d_model == 0 || !d_model.is_multiple_of(HEAD_DIM) {
            return Err(Error::InvalidArgument(format!(
                "depth {depth}, width {d_model} (width must be a positive multiple of {HEAD_DIM})"
            )));
        }
        let active_n = param_count(depth, d_model, vocab, context);
        Ok(ShapeConfig {
            id: format!("L{depth}-d{d_model}"),
            target_n: active_n,
            depth,
            d_model,
            n_heads: d_model / HEAD_DIM,
            d_ff: 4 * d_model,
            active_n,
            depth_width_ratio: depth as f64 / d_model as f64,
            vocab,
            context,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ShapeOutcome {
    Shape(ShapeConfig),
    Skip { depth: usize, reason: String },
}

/// Budget label in the `0.3M` / `1M` / `2.7M` style.
pub fn budget_id(target_n: usize) -> String {
    let millions = target_n as f64 / 1e6;
    let s = format!("{millions:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}M")
}

/// Widest multiple of the head size that fits `target_n` at depth `layers`.
pub fn solve_shape(target_n: usize, layers: usize) -> ShapeOutcome {
    solve_shape_with(target_n, layers, VOCAB, CONTEXT)
}

pub fn solve_shape_with(target_n: usize, layers: usize, vocab: usize, context: usize) -> ShapeOutcome {
    let skip = |reason: String| ShapeOutcome::Skip { depth: layers, reason };
    if layers == 0 {
        return skip("depth must be at least 1".into());
    }
    if param_count(layers, HEAD_DIM, vocab, context) > target_n {
        return skip(format!("even width {HEAD_DIM} exceeds the budget {target_n}"));
    }
    let mut d = HEAD_DIM;
    while param_count(layers, d + HEAD_DIM, vocab, context) <= target_n {
        d += HEAD_DIM;
    }
    let active_n = param_count(layers, d, vocab, context);
    let padding = (target_n - active_n) as f64 / target_n as f64;
    if padding > MAX_PADDING {
        return skip(format!(
            "padding {:.1}% at width {d} exceeds {:.0}%",
            padding * 100.0,
            MAX_PADDING * 100.0
        ));
    }
    ShapeOutcome::Shape(ShapeConfig {
        id: format!("{}-{layers}", budget_id(target_n)),
        target_n,
        depth: layers,
        d_model: d,
        n_heads: d / HEAD_DIM,
        d_ff: 4 * d,
        active_n,
        depth_width_ratio: layers as f64 / d as f64,
        vocab,
        context,
    })
}

pub fn enumerate_shapes(target_n: usize, depths: &[usize]) -> Vec<ShapeConfig> {
    enumerate_shapes_with(target_n, depths, VOCAB, CONTEXT)
}

pub fn enumerate_shapes_with(target_n: usize, depths: &[usize], vocab: usize, context: usize) -> Vec<ShapeConfig> {
    depths
        .iter()
        .filter_map(|&l| match solve_shape_with(target_n, l, vocab, context) {
            ShapeOutcome::Shape(s) => Some(s),
            ShapeOutcome::Skip { depth, reason } => {
                log::info!("budget {target_n}, depth {depth} skipped: {reason}");
                None
            }
        })
        .collect()
}

/// One row per shape; the ratio is printed to four decimals.
pub fn write_shapes_csv<W: Write>(shapes: &[ShapeConfig], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "id",
        "target_n",
        "depth",
        "d_model",
        "n_heads",
        "d_ff",
        "active_n",
        "depth_width_ratio",
    ])?;
    for s in shapes {
        out.write_record([
            s.id.clone(),
            s.target_n.to_string(),
            s.depth.to_string(),
            s.d_model.to_string(),
            s.n_heads.to_string(),
            s.d_ff.to_string(),
            s.active_n.to_string(),
            format!("{:.4}", s.depth_width_ratio),
        ])?;
    }
    out.flush().map_err(|e| Error::io("shape csv", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyInterval {
    pub lo: f64,
    pub hi: f64,
}

impl Default for EfficiencyInterval {
    fn default() -> Self {
        EfficiencyInterval { lo: 0.023, hi: 0.047 }
    }
}

impl EfficiencyInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 < lo && lo < hi) {
            return Err(Error::InvalidArgument(format!("interval [{lo}, {hi}]")));
        }
        Ok(EfficiencyInterval { lo, hi })
    }

    pub fn contains(&self, alpha: f64) -> bool {
        self.lo <= alpha && alpha <= self.hi
    }

    pub fn distance(&self, alpha: f64) -> f64 {
        (alpha - self.hi).max(self.lo - alpha).max(0.0)
    }
}

pub fn delta_alpha(layers: usize, d: usize, interval: &EfficiencyInterval) -> f64 {
    interval.distance(layers as f64 / d as f64)
}

/// Distance to the interval expressed in layers at the given width.
pub fn layer_gap(layers: usize, d: usize, interval: &EfficiencyInterval) -> f64 {
    delta_alpha(layers, d, interval) * d as f64
}
