use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::agop::tied_autoencoder_agop;
use super::data::{generate_sparse_data, SparseDataSpec};
use super::TiedAutoencoder;
use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::metrics::{aofe, aofe_ratio, AgopMatrix};
use crate::numkernel::linalg::gemm;
use crate::numkernel::{adamw_step, lr_at, rng, AdamWConfig, LrSchedule, OptimState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub d: usize,
    pub m: usize,
    pub steps: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_cap: usize,
    pub test_size: usize,
    /// Standard deviation of the initial weights; `None` means Xavier-normal, `sqrt(2 / (m + d))`.
    pub init_std: Option<f64>,
    pub agop_chunk: usize,
}

impl ToyTrainConfig {
    pub fn effective_init_std(&self) -> f64 {
        self.init_std.unwrap_or_else(|| (2.0 / (self.m + self.d) as f64).sqrt())
    }
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            d: 1000,
            m: 2,
            steps: 3000,
            lr: 5e-3,
            weight_decay: 1e-2,
            warmup_fraction: 0.25,
            batch_cap: 2048,
            test_size: 5000,
            init_std: None,
            agop_chunk: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTrialResult {
    pub n: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub aofe: f64,
    pub aofe_ratio: f64,
    pub diverged: bool,
    #[serde(skip)]
    pub agop: Option<AgopMatrix>,
}

/// Mean over samples of `sum_i (x_i - |xhat_i|)^2`.
pub fn toy_loss(xhat: &Tensor, x: &Tensor) -> Result<f64> {
    if xhat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let rows = if x.shape().len() == 2 { x.rows() } else { 1 };
    Ok(loss_flat(xhat.data(), x.data(), rows))
}

fn loss_flat(xhat: &[f64], x: &[f64], rows: usize) -> f64 {
    let s: f64 = xhat
        .iter()
        .zip(x)
        .map(|(h, v)| {
            let r = v - h.abs();
            r * r
        })
        .sum();
    s / rows.max(1) as f64
}

pub(crate) fn dataset_loss(model: &TiedAutoencoder, data: &Dataset) -> f64 {
    let d = data.point_len();
    let mut total = 0.0;
    for block in data.flat().chunks(1024 * d) {
        let rows = block.len() / d;
        total += loss_flat(&model.reconstruct_batch(block, rows), block, 1);
    }
    total / data.len() as f64
}

/// Loss and parameter gradient `[dW, db]` on a batch of `rows` inputs.
pub(crate) fn loss_and_grad(model: &TiedAutoencoder, x: &[f64], rows: usize, grad: &mut [f64]) -> f64 {
    let (m, d) = (model.bottleneck(), model.dim());
    let (h, mut z) = model.preact_batch(x, rows);
    let scale = 2.0 / rows as f64;
    let mut sq = 0.0;
    // z becomes dL/dz; |xhat| = xhat because xhat >= 0, and the kink at 0 gets 0.
    for (zv, &xv) in z.iter_mut().zip(x) {
        if *zv > 0.0 {
            let r = *zv - xv;
            sq += r * r;
            *zv = scale * r;
        } else {
            sq += xv * xv;
            *zv = 0.0;
        }
    }
    let delta = z;
    let (gw, gb) = grad.split_at_mut(m * d);
    gb.iter_mut().for_each(|v| *v = 0.0);
    for row in delta.chunks(d) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    gemm(m, rows, d, 1.0, &h, true, &delta, false, 0.0, gw);
    let mut dh = vec![0.0; rows * m];
    gemm(rows, d, m, 1.0, &delta, false, model.w.data(), true, 0.0, &mut dh);
    gemm(m, rows, d, 1.0, &dh, true, x, false, 1.0, gw);
    sq / rows as f64
}

fn unpack(params: &[f64], m: usize, d: usize) -> TiedAutoencoder {
    TiedAutoencoder {
        w: Tensor::matrix(m, d, params[..m * d].to_vec()).expect("sized"),
        b: params[m * d..].to_vec(),
    }
}

/// Trains on `train` from seed `seed`, then scores loss and closed-form AGOP on `test`.
/// The returned result carries the AGOP matrix; drop it if not needed.
pub fn train_toy_on(
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    cfg: &ToyTrainConfig,
) -> Result<(TiedAutoencoder, ToyTrialResult)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.point_len() != cfg.d || test.point_len() != cfg.d {
        return Err(Error::Shape(format!(
            "data width {} / {} for model width {}",
            train.point_len(),
            test.point_len(),
            cfg.d
        )));
    }
    if cfg.batch_cap == 0 {
        return Err(Error::InvalidArgument("batch cap must be positive".into()));
    }
    let (m, d, n) = (cfg.m, cfg.d, train.len());
    let init = TiedAutoencoder::random(m, d, cfg.effective_init_std(), seed);
    let mut params = init.w.data().to_vec();
    params.extend_from_slice(&init.b);
    let mut grad = vec![0.0; params.len()];
    let mut state = OptimState::new(
        params.len(),
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let schedule = LrSchedule::with_warmup_fraction(cfg.lr, cfg.warmup_fraction, cfg.steps)?;

    let batch = n.min(cfg.batch_cap);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut shuffle = rng::named_stream(seed, &format!("toy-batches:{n}"));
    let mut buf = vec![0.0; if batch < n { batch * d } else { 0 }];

    let mut result = ToyTrialResult {
        n,
        seed,
        train_loss: f64::NAN,
        test_loss: f64::NAN,
        aofe: f64::NAN,
        aofe_ratio: f64::NAN,
        diverged: false,
        agop: None,
    };

    for step in 0..cfg.steps {
        let model = unpack(&params, m, d);
        let x: &[f64] = if batch == n {
            train.flat()
        } else {
            // epoch-wise shuffled minibatches, dropping the ragged tail
            if cursor + batch > n {
                order.shuffle(&mut shuffle);
                cursor = 0;
            }
            for (slot, &i) in buf.chunks_mut(d).zip(&order[cursor..cursor + batch]) {
                slot.copy_from_slice(train.get(i));
            }
            cursor += batch;
            &buf
        };
        let loss = loss_and_grad(&model, x, batch, &mut grad);
        if !loss.is_finite() {
            result.diverged = true;
            return Ok((model, result));
        }
        result.train_loss = loss;
        match adamw_step(&mut params, &mut grad, &mut state, lr_at(&schedule, step + 1)) {
            Ok(_) => {}
            Err(Error::Diverged(_)) => {
                result.diverged = true;
                return Ok((model, result));
            }
            Err(e) => return Err(e),
        }
    }

    let model = unpack(&params, m, d);
    result.train_loss = dataset_loss(&model, train);
    result.test_loss = dataset_loss(&model, test);
    if !result.test_loss.is_finite() {
        result.diverged = true;
        return Ok((model, result));
    }
    match tied_autoencoder_agop(&model, test, cfg.agop_chunk) {
        Ok(a) => {
            result.aofe = aofe(&a);
            // all gates off leaves the ratio undefined; it stays NaN
            result.aofe_ratio = aofe_ratio(&a).unwrap_or(f64::NAN);
            result.agop = Some(a);
        }
        Err(Error::Diverged(_)) => result.diverged = true,
        Err(e) => return Err(e),
    }
    Ok((model, result))
}

/// One trial on the standard sparse data for training size `n`.
pub fn train_toy(n: usize, seed: u64, cfg: &ToyTrainConfig) -> Result<(TiedAutoencoder, ToyTrialResult)> {
    let train = generate_sparse_data(&SparseDataSpec::train(n, cfg.d))?;
    let test = generate_sparse_data(&SparseDataSpec::test(cfg.test_size, cfg.d))?;
    train_toy_on(&train, &test, seed, cfg)
}
