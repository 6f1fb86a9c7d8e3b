//! Bundled result tables, checked against `SHA256SUMS` whenever they are loaded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::lmtrain::TrialRecord;
use crate::{Error, Result};

pub const TOY: &str = "toy_double_descent.csv";
pub const CROSS_CNN: &str = "cross_cnn.csv";
pub const CROSS_VIT: &str = "cross_vit.csv";
pub const CROSS_RNN: &str = "cross_rnn.csv";
pub const LLM_SHAPES: &str = "llm_shape_distance.csv";
pub const LM_RANGES: [&str; 3] = ["0.3M-1.3M", "1.6M-2.7M", "3.0M-10M"];

const SUMS: &str = include_str!("../../fixtures/SHA256SUMS");

macro_rules! embed {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../fixtures/", $name)))),*]
    };
}

const EMBEDDED: &[(&str, &str)] = embed!(
    "toy_double_descent.csv",
    "cross_cnn.csv",
    "cross_vit.csv",
    "cross_rnn.csv",
    "llm_shape_distance.csv",
    "lm_shapes_0.3M-1.3M.csv",
    "lm_metrics_0.3M-1.3M.csv",
    "lm_shapes_1.6M-2.7M.csv",
    "lm_metrics_1.6M-2.7M.csv",
    "lm_shapes_3.0M-10M.csv",
    "lm_metrics_3.0M-10M.csv",
);

fn expected_sums() -> BTreeMap<&'static str, &'static str> {
    SUMS.lines()
        .filter_map(|l| {
            let (hash, name) = l.split_once(char::is_whitespace)?;
            Some((name.trim_start_matches([' ', '*']), hash))
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// A verified set of fixture tables.
#[derive(Clone, Debug)]
pub struct FixtureSet {
    files: BTreeMap<String, String>,
}

impl FixtureSet {
    pub fn embedded() -> Result<Self> {
        Self::verified(EMBEDDED.iter().map(|(n, c)| (n.to_string(), c.to_string())).collect())
    }

    /// Loads the tables from a directory (e.g. an edited copy) and checks them against the bundled sums.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        for name in expected_sums().keys() {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    files.insert(name.to_string(), text);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        Self::verified(files)
    }

    fn verified(files: BTreeMap<String, String>) -> Result<Self> {
        for (name, hash) in expected_sums() {
            let text = files.get(name).ok_or_else(|| Error::Fixture {
                name: name.into(),
                reason: "missing".into(),
            })?;
            let got = sha256_hex(text.as_bytes());
            if got != hash {
                return Err(Error::Fixture {
                    name: name.into(),
                    reason: format!("checksum mismatch: expected {hash}, found {got}"),
                });
            }
        }
        Ok(FixtureSet { files })
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        self.files.get(name).map(String::as_str).ok_or_else(|| Error::Fixture {
            name: name.into(),
            reason: "missing".into(),
        })
    }

    fn rows<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<T>> {
        let mut rdr = csv::Reader::from_reader(self.text(name)?.as_bytes());
        rdr.deserialize().map(|r| r.map_err(|e| fixture_err(name, e))).collect()
    }

    pub fn toy(&self) -> Result<Vec<ToyRow>> {
        self.rows(TOY)
    }

    pub fn cross(&self, name: &str) -> Result<Vec<CrossRow>> {
        self.rows(name)
    }

    /// Published shape rows of every budget range, in file order.
    pub fn lm_shapes(&self) -> Result<Vec<ShapeRow>> {
        let mut out = Vec::new();
        for range in LM_RANGES {
            out.extend(self.rows::<ShapeRow>(&format!("lm_shapes_{range}.csv"))?);
        }
        Ok(out)
    }

    /// Shape and metric rows joined into trial records; rows without a test loss count as diverged.
    pub fn lm_records(&self) -> Result<Vec<TrialRecord>> {
        let mut out = Vec::new();
        for range in LM_RANGES {
            let shapes_name = format!("lm_shapes_{range}.csv");
            let metrics_name = format!("lm_metrics_{range}.csv");
            let shapes: Vec<ShapeRow> = self.rows(&shapes_name)?;
            let metrics: Vec<MetricRow> = self.rows(&metrics_name)?;
            if shapes.len() != metrics.len() {
                return Err(Error::Fixture {
                    name: metrics_name,
                    reason: format!("{} metric rows for {} shapes", metrics.len(), shapes.len()),
                });
            }
            for (s, m) in shapes.into_iter().zip(metrics) {
                if s.id != m.id {
                    return Err(Error::Fixture {
                        name: metrics_name,
                        reason: format!("row {} does not match shape {}", m.id, s.id),
                    });
                }
                out.push(TrialRecord {
                    depth_width_ratio: s.depth_width_ratio.parse().unwrap_or(f64::NAN),
                    id: s.id,
                    target_n: s.target_n,
                    depth: s.depth,
                    d_model: s.d_model,
                    n_heads: s.n_heads,
                    d_ff: s.d_ff,
                    active_n: s.active_n,
                    seed: 0,
                    initial_loss: f64::NAN,
                    train_loss: m.train_loss,
                    val_loss: m.val_loss,
                    test_loss: m.test_loss,
                    aofe: m.aofe,
                    aofe_ratio: m.aofe_ratio,
                    steps: 0,
                    best_step: 0,
                    diverged: !m.test_loss.is_finite(),
                    note: String::new(),
                });
            }
        }
        Ok(out)
    }
}

fn fixture_err(name: &str, e: csv::Error) -> Error {
    Error::Fixture {
        name: name.into(),
        reason: e.to_string(),
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct ToyRow {
    pub data_size: usize,
    pub test_loss_mean: f64,
    pub aofe_ratio: f64,
    pub aofe: f64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CrossRow {
    pub p_target: usize,
    pub depth: usize,
    pub width: usize,
    pub r_dw: f64,
    pub aofe: f64,
    pub l_train: f64,
    pub l_val: f64,
    pub l_test: f64,
    pub aofe_ratio: f64,
}

/// Published shape row; the ratio stays text so it can be compared digit for digit.
#[derive(Clone, Debug, Deserialize)]
pub struct ShapeRow {
    pub id: String,
    pub target_n: usize,
    pub depth: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub active_n: usize,
    pub depth_width_ratio: String,
}

#[derive(Clone, Debug, Deserialize)]
struct MetricRow {
    id: String,
    train_loss: f64,
    val_loss: f64,
    test_loss: f64,
    aofe: f64,
    aofe_ratio: f64,
}
