//! Browser bindings. Every export takes plain numbers or strings and returns a
//! JSON string; the `*_json` functions hold the logic so native tests can call them.

use nilab_core::estimators::Dataset;
use nilab_core::lmshape::{delta_alpha, layer_gap, solve_shape_with, EfficiencyInterval, ShapeConfig, ShapeOutcome};
use nilab_core::metrics::{aofe, aofe_ratio};
use nilab_core::toymodel::{generate_sparse_data, train_toy_on, SparseDataSpec, ToyTrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest toy input dimension the page will train.
pub const MAX_TOY_DIM: usize = 128;

#[derive(Serialize)]
struct Skip {
    depth: usize,
    reason: String,
}

#[derive(Serialize)]
struct Shapes {
    shapes: Vec<ShapeConfig>,
    skipped: Vec<Skip>,
}

fn parse_depths(depths: &str) -> Result<Vec<usize>, String> {
    depths
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad depth {s:?}")))
        .collect()
}

pub fn solve_shapes_json(target_n: usize, depths: &str, vocab: usize, context: usize) -> Result<String, String> {
    let depths = parse_depths(depths)?;
    if depths.is_empty() {
        return Err("no depths given".into());
    }
    let mut out = Shapes {
        shapes: vec![],
        skipped: vec![],
    };
    for l in depths {
        match solve_shape_with(target_n, l, vocab, context) {
            ShapeOutcome::Shape(s) => out.shapes.push(s),
            ShapeOutcome::Skip { depth, reason } => out.skipped.push(Skip { depth, reason }),
        }
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Distance {
    alpha: f64,
    inside: bool,
    delta_alpha: f64,
    layer_gap: f64,
}

pub fn interval_distance_json(layers: usize, d_model: usize, lo: f64, hi: f64) -> Result<String, String> {
    if layers == 0 || d_model == 0 {
        return Err("layers and width must be positive".into());
    }
    let interval = EfficiencyInterval::new(lo, hi).map_err(|e| e.to_string())?;
    let alpha = layers as f64 / d_model as f64;
    let out = Distance {
        alpha,
        inside: interval.contains(alpha),
        delta_alpha: delta_alpha(layers, d_model, &interval),
        layer_gap: layer_gap(layers, d_model, &interval),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Heatmap {
    d: usize,
    n: usize,
    train_loss: f64,
    test_loss: f64,
    aofe: f64,
    aofe_ratio: Option<f64>,
    /// Row-major `d x d` output-space AGOP.
    agop: Vec<f64>,
}

/// Trains the tied autoencoder on `n` sparse samples and returns its closed-form AGOP.
pub fn toy_heatmap_json(d: usize, m: usize, n: usize, steps: u64, seed: u64) -> Result<String, String> {
    if !(2..=MAX_TOY_DIM).contains(&d) || m == 0 || m >= d || n == 0 || steps == 0 {
        return Err(format!("need 2 <= d <= {MAX_TOY_DIM}, 1 <= m < d, n >= 1, steps >= 1"));
    }
    let cfg = ToyTrainConfig {
        d,
        m,
        steps,
        test_size: 1000,
        ..ToyTrainConfig::default()
    };
    let data =
        |spec: SparseDataSpec| -> Result<Dataset, String> { generate_sparse_data(&spec).map_err(|e| e.to_string()) };
    let train = data(SparseDataSpec::train(n, d))?;
    let test = data(SparseDataSpec::test(cfg.test_size, d))?;
    let (_, result) = train_toy_on(&train, &test, seed, &cfg).map_err(|e| e.to_string())?;
    let g = result.agop.ok_or("training diverged")?;
    let out = Heatmap {
        d,
        n,
        train_loss: result.train_loss,
        test_loss: result.test_loss,
        aofe: aofe(&g),
        aofe_ratio: aofe_ratio(&g).ok(),
        agop: g.values().to_vec(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn solve_shapes(target_n: u32, depths: &str, vocab: u32, context: u32) -> Result<String, JsError> {
    solve_shapes_json(target_n as usize, depths, vocab as usize, context as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn interval_distance(layers: u32, d_model: u32, lo: f64, hi: f64) -> Result<String, JsError> {
    interval_distance_json(layers as usize, d_model as usize, lo, hi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn toy_heatmap(d: u32, m: u32, n: u32, steps: u32, seed: u32) -> Result<String, JsError> {
    toy_heatmap_json(d as usize, m as usize, n as usize, steps as u64, seed as u64).map_err(|e| JsError::new(&e))
}
