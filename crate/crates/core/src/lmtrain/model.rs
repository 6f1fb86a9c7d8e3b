//! Pre-norm byte-level decoder: token + learned position embeddings, `L` blocks
//! of causal multi-head attention and a GELU MLP (bias-free linears, affine
//! layer norms), a final norm and an untied head.
//!
//! Activations are rows of a `(batch * seq) x d` matrix. Weights are stored
//! `in x out`, so a linear layer is `y = x W`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmshape::ShapeConfig;
use crate::numkernel::linalg::gemm;
use crate::numkernel::model::gelu_with_grad;
use crate::numkernel::rng;

const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub vocab: usize,
    pub context: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl TinyConfig {
    pub fn from_shape(s: &ShapeConfig) -> Self {
        TinyConfig {
            vocab: s.vocab,
            context: s.context,
            d_model: s.d_model,
            n_layers: s.depth,
            n_heads: s.n_heads,
            d_ff: s.d_ff,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn validate(&self) -> Result<()> {
        if self.vocab == 0
            || self.context == 0
            || self.d_model == 0
            || self.n_layers == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || !self.d_model.is_multiple_of(self.n_heads)
        {
            return Err(Error::Config(format!("invalid transformer shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockOffsets {
    ln1_g: usize,
    ln1_b: usize,
    qkv: usize,
    proj: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc: usize,
    fc_out: usize,
}

#[derive(Clone, Debug)]
struct Offsets {
    tok: usize,
    pos: usize,
    blocks: Vec<BlockOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head: usize,
}

fn build_layout(cfg: &TinyConfig) -> (Vec<ParamSpec>, Offsets, usize) {
    let mut layout = Vec::new();
    let mut next = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let offset = next;
        next += shape.iter().product::<usize>();
        layout.push(ParamSpec { name, shape, offset });
        offset
    };
    let (v, t, d, ff) = (cfg.vocab, cfg.context, cfg.d_model, cfg.d_ff);
    let tok = push("tok_emb".into(), vec![v, d]);
    let pos = push("pos_emb".into(), vec![t, d]);
    let blocks = (0..cfg.n_layers)
        .map(|l| BlockOffsets {
            ln1_g: push(format!("blocks.{l}.ln1.weight"), vec![d]),
            ln1_b: push(format!("blocks.{l}.ln1.bias"), vec![d]),
            qkv: push(format!("blocks.{l}.attn.qkv"), vec![d, 3 * d]),
            proj: push(format!("blocks.{l}.attn.proj"), vec![d, d]),
            ln2_g: push(format!("blocks.{l}.ln2.weight"), vec![d]),
            ln2_b: push(format!("blocks.{l}.ln2.bias"), vec![d]),
            fc: push(format!("blocks.{l}.mlp.fc"), vec![d, ff]),
            fc_out: push(format!("blocks.{l}.mlp.proj"), vec![ff, d]),
        })
        .collect();
    let lnf_g = push("ln_f.weight".into(), vec![d]);
    let lnf_b = push("ln_f.bias".into(), vec![d]);
    let head = push("head".into(), vec![d, v]);
    (
        layout,
        Offsets {
            tok,
            pos,
            blocks,
            lnf_g,
            lnf_b,
            head,
        },
        next,
    )
}

#[derive(Clone, Debug)]
pub struct TinyTransformer {
    pub config: TinyConfig,
    params: Vec<f64>,
    layout: Vec<ParamSpec>,
    offs: Offsets,
}

/// Attention weights are kept for backward only while all layers together stay under this many entries.
const PROBS_CACHE_LIMIT: usize = 1 << 24;

struct BlockCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    // packed attention weights; empty when over the cache limit
    probs: Vec<f64>,
    att: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    h2: Vec<f64>,
    act: Vec<f64>,
    act_grad: Vec<f64>,
}

pub(crate) struct ForwardCache {
    batch: usize,
    seq: usize,
    blocks: Vec<BlockCache>,
    xhatf: Vec<f64>,
    rstdf: Vec<f64>,
    hf: Vec<f64>,
}

impl TinyTransformer {
    /// Normal(0, 0.02) weights; residual output projections use 0.02 / sqrt(2L); norms start at identity.
    pub fn new(config: TinyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, offs, total) = build_layout(&config);
        let mut params = vec![0.0; total];
        let mut r = rng::named_stream(seed, "transformer-init");
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        for spec in &layout {
            let slice = &mut params[spec.range()];
            if spec.name.ends_with(".weight") {
                slice.iter_mut().for_each(|v| *v = 1.0);
            } else if spec.name.ends_with(".bias") {
                // zeros
            } else if spec.name.ends_with("attn.proj") || spec.name.ends_with("mlp.proj") {
                rng::fill_normal(&mut r, slice, resid_std);
            } else {
                rng::fill_normal(&mut r, slice, INIT_STD);
            }
        }
        Ok(TinyTransformer {
            config,
            params,
            layout,
            offs,
        })
    }

    pub fn from_params(config: TinyConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, offs, total) = build_layout(&config);
        if params.len() != total {
            return Err(Error::Shape(format!(
                "{} parameters for a shape needing {total}",
                params.len()
            )));
        }
        Ok(TinyTransformer {
            config,
            params,
            layout,
            offs,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|s| s.name == name)?.range();
        Some(&mut self.params[range])
    }

    fn p(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    pub fn check_tokens(&self, tokens: &[u8]) -> Result<()> {
        if self.config.vocab < 256 {
            if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
                return Err(Error::InvalidArgument(format!(
                    "token {t} outside a vocabulary of {}",
                    self.config.vocab
                )));
            }
        }
        Ok(())
    }

    /// Token plus position embedding of `batch` sequences of length `seq`.
    pub fn embed(&self, tokens: &[u8], batch: usize, seq: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let mut x = vec![0.0; batch * seq * d];
        for (row, (&t, out)) in tokens.iter().zip(x.chunks_mut(d)).enumerate() {
            let tok = self.p(self.offs.tok + t as usize * d, d);
            let pos = self.p(self.offs.pos + (row % seq) * d, d);
            for ((o, a), b) in out.iter_mut().zip(tok).zip(pos) {
                *o = a + b;
            }
        }
        x
    }

    /// Logits (`rows x vocab`) from embedded inputs, plus the activations backward needs.
    pub(crate) fn forward_embedded(&self, mut x: Vec<f64>, batch: usize, seq: usize) -> (Vec<f64>, ForwardCache) {
        let cfg = self.config;
        let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab);
        let n = batch * seq;
        debug_assert_eq!(x.len(), n * d);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        let cache_probs = probs_len(batch, seq, cfg.n_heads) * cfg.n_layers <= PROBS_CACHE_LIMIT;
        for b in &self.offs.blocks {
            let mut h1 = vec![0.0; n * d];
            let mut xhat1 = vec![0.0; n * d];
            let mut rstd1 = vec![0.0; n];
            ln_forward(
                &x,
                self.p(b.ln1_g, d),
                self.p(b.ln1_b, d),
                d,
                &mut h1,
                &mut xhat1,
                &mut rstd1,
            );
            let mut qkv = vec![0.0; n * 3 * d];
            gemm(
                n,
                d,
                3 * d,
                1.0,
                &h1,
                false,
                self.p(b.qkv, d * 3 * d),
                false,
                0.0,
                &mut qkv,
            );
            let mut att = vec![0.0; n * d];
            let mut probs = vec![
                0.0;
                if cache_probs {
                    probs_len(batch, seq, cfg.n_heads)
                } else {
                    0
                }
            ];
            attn_forward(&qkv, batch, seq, &cfg, &mut att, &mut probs);
            gemm(n, d, d, 1.0, &att, false, self.p(b.proj, d * d), false, 1.0, &mut x);

            let mut h2 = vec![0.0; n * d];
            let mut xhat2 = vec![0.0; n * d];
            let mut rstd2 = vec![0.0; n];
            ln_forward(
                &x,
                self.p(b.ln2_g, d),
                self.p(b.ln2_b, d),
                d,
                &mut h2,
                &mut xhat2,
                &mut rstd2,
            );
            let mut act = vec![0.0; n * ff];
            gemm(n, d, ff, 1.0, &h2, false, self.p(b.fc, d * ff), false, 0.0, &mut act);
            let mut act_grad = vec![0.0; n * ff];
            for (a, g) in act.iter_mut().zip(act_grad.iter_mut()) {
                (*a, *g) = gelu_with_grad(*a);
            }
            gemm(n, ff, d, 1.0, &act, false, self.p(b.fc_out, ff * d), false, 1.0, &mut x);
            blocks.push(BlockCache {
                xhat1,
                rstd1,
                h1,
                qkv,
                probs,
                att,
                xhat2,
                rstd2,
                h2,
                act,
                act_grad,
            });
        }
        let mut hf = vec![0.0; n * d];
        let mut xhatf = vec![0.0; n * d];
        let mut rstdf = vec![0.0; n];
        let o = &self.offs;
        ln_forward(
            &x,
            self.p(o.lnf_g, d),
            self.p(o.lnf_b, d),
            d,
            &mut hf,
            &mut xhatf,
            &mut rstdf,
        );
        let mut logits = vec![0.0; n * v];
        gemm(n, d, v, 1.0, &hf, false, self.p(o.head, d * v), false, 0.0, &mut logits);
        (
            logits,
            ForwardCache {
                batch,
                seq,
                blocks,
                xhatf,
                rstdf,
                hf,
            },
        )
    }

    /// Gradient with respect to the embedded input; accumulates weight gradients into `grads` if given.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &[f64], mut grads: Option<&mut [f64]>) -> Vec<f64> {
        let cfg = self.config;
        let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab);
        let (batch, seq) = (cache.batch, cache.seq);
        let n = batch * seq;
        let o = &self.offs;
        if let Some(g) = grads.as_deref_mut() {
            gemm(
                d,
                n,
                v,
                1.0,
                &cache.hf,
                true,
                dlogits,
                false,
                1.0,
                &mut g[o.head..o.head + d * v],
            );
        }
        let mut dh = vec![0.0; n * d];
        gemm(n, v, d, 1.0, dlogits, false, self.p(o.head, d * v), true, 0.0, &mut dh);
        let mut dx = vec![0.0; n * d];
        ln_backward(
            &dh,
            &cache.xhatf,
            &cache.rstdf,
            self.p(o.lnf_g, d),
            d,
            &mut dx,
            grads.as_deref_mut().map(|g| split_pair(g, o.lnf_g, o.lnf_b, d)),
        );

        let mut dact = vec![0.0; n * ff];
        let mut datt = vec![0.0; n * d];
        let mut dqkv = vec![0.0; n * 3 * d];
        for (b, c) in o.blocks.iter().zip(&cache.blocks).rev() {
            // MLP
            if let Some(g) = grads.as_deref_mut() {
                gemm(
                    ff,
                    n,
                    d,
                    1.0,
                    &c.act,
                    true,
                    &dx,
                    false,
                    1.0,
                    &mut g[b.fc_out..b.fc_out + ff * d],
                );
            }
            gemm(
                n,
                d,
                ff,
                1.0,
                &dx,
                false,
                self.p(b.fc_out, ff * d),
                true,
                0.0,
                &mut dact,
            );
            for (a, g) in dact.iter_mut().zip(&c.act_grad) {
                *a *= g;
            }
            if let Some(g) = grads.as_deref_mut() {
                gemm(
                    d,
                    n,
                    ff,
                    1.0,
                    &c.h2,
                    true,
                    &dact,
                    false,
                    1.0,
                    &mut g[b.fc..b.fc + d * ff],
                );
            }
            gemm(n, ff, d, 1.0, &dact, false, self.p(b.fc, d * ff), true, 0.0, &mut dh);
            ln_backward(
                &dh,
                &c.xhat2,
                &c.rstd2,
                self.p(b.ln2_g, d),
                d,
                &mut dx,
                grads.as_deref_mut().map(|g| split_pair(g, b.ln2_g, b.ln2_b, d)),
            );

            // attention
            if let Some(g) = grads.as_deref_mut() {
                gemm(
                    d,
                    n,
                    d,
                    1.0,
                    &c.att,
                    true,
                    &dx,
                    false,
                    1.0,
                    &mut g[b.proj..b.proj + d * d],
                );
            }
            gemm(n, d, d, 1.0, &dx, false, self.p(b.proj, d * d), true, 0.0, &mut datt);
            attn_backward(&c.qkv, &c.probs, &datt, batch, seq, &cfg, &mut dqkv);
            if let Some(g) = grads.as_deref_mut() {
                gemm(
                    d,
                    n,
                    3 * d,
                    1.0,
                    &c.h1,
                    true,
                    &dqkv,
                    false,
                    1.0,
                    &mut g[b.qkv..b.qkv + 3 * d * d],
                );
            }
            gemm(
                n,
                3 * d,
                d,
                1.0,
                &dqkv,
                false,
                self.p(b.qkv, 3 * d * d),
                true,
                0.0,
                &mut dh,
            );
            ln_backward(
                &dh,
                &c.xhat1,
                &c.rstd1,
                self.p(b.ln1_g, d),
                d,
                &mut dx,
                grads.as_deref_mut().map(|g| split_pair(g, b.ln1_g, b.ln1_b, d)),
            );
        }
        dx
    }

    /// Scatters an embedded-input gradient into the embedding tables.
    pub(crate) fn embedding_backward(&self, tokens: &[u8], seq: usize, dx: &[f64], grads: &mut [f64]) {
        let d = self.config.d_model;
        for (row, (&t, g)) in tokens.iter().zip(dx.chunks(d)).enumerate() {
            let tok = self.offs.tok + t as usize * d;
            for (a, b) in grads[tok..tok + d].iter_mut().zip(g) {
                *a += b;
            }
            let pos = self.offs.pos + (row % seq) * d;
            for (a, b) in grads[pos..pos + d].iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    /// Forward-mode derivative of the last-position logits of one sequence for
    /// `count` tangents of the embedded input (stacked row-wise, `seq x d` each).
    pub(crate) fn jvp_last(&self, x: &[f64], seq: usize, tangents: &[f64], count: usize) -> Vec<f64> {
        let cfg = self.config;
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let (_, cache) = self.forward_embedded(x.to_vec(), 1, seq);
        let rows = count * seq;
        let mut tx = tangents[..rows * d].to_vec();
        let mut th = vec![0.0; rows * d];
        let mut tqkv = vec![0.0; rows * 3 * d];
        let mut tatt = vec![0.0; rows * d];
        let n_blocks = self.offs.blocks.len();
        for (l, (b, c)) in self.offs.blocks.iter().zip(&cache.blocks).enumerate() {
            ln_tangent(&tx, &c.xhat1, &c.rstd1, self.p(b.ln1_g, d), d, seq, &mut th);
            gemm(
                rows,
                d,
                3 * d,
                1.0,
                &th,
                false,
                self.p(b.qkv, 3 * d * d),
                false,
                0.0,
                &mut tqkv,
            );
            if l + 1 == n_blocks {
                // the final block only matters at the last position
                attn_tangent(&c.qkv, &c.probs, &tqkv, count, seq, seq - 1, &cfg, &mut tatt);
                let mut ta = vec![0.0; count * d];
                let mut tl = vec![0.0; count * d];
                for k in 0..count {
                    let at = (k * seq + seq - 1) * d;
                    ta[k * d..(k + 1) * d].copy_from_slice(&tatt[at..at + d]);
                    tl[k * d..(k + 1) * d].copy_from_slice(&tx[at..at + d]);
                }
                gemm(count, d, d, 1.0, &ta, false, self.p(b.proj, d * d), false, 1.0, &mut tl);
                let last = seq - 1;
                let mut th2 = vec![0.0; count * d];
                for k in 0..count {
                    ln_tangent(
                        &tl[k * d..(k + 1) * d],
                        &c.xhat2[last * d..(last + 1) * d],
                        &c.rstd2[last..last + 1],
                        self.p(b.ln2_g, d),
                        d,
                        1,
                        &mut th2[k * d..(k + 1) * d],
                    );
                }
                let mut tact = vec![0.0; count * ff];
                gemm(
                    count,
                    d,
                    ff,
                    1.0,
                    &th2,
                    false,
                    self.p(b.fc, d * ff),
                    false,
                    0.0,
                    &mut tact,
                );
                let g = &c.act_grad[last * ff..(last + 1) * ff];
                for row in tact.chunks_mut(ff) {
                    row.iter_mut().zip(g).for_each(|(t, g)| *t *= g);
                }
                gemm(
                    count,
                    ff,
                    d,
                    1.0,
                    &tact,
                    false,
                    self.p(b.fc_out, ff * d),
                    false,
                    1.0,
                    &mut tl,
                );
                return self.head_tangent(&cache, &tl, seq, count);
            }
            attn_tangent(&c.qkv, &c.probs, &tqkv, count, seq, 0, &cfg, &mut tatt);
            gemm(
                rows,
                d,
                d,
                1.0,
                &tatt,
                false,
                self.p(b.proj, d * d),
                false,
                1.0,
                &mut tx,
            );
            ln_tangent(&tx, &c.xhat2, &c.rstd2, self.p(b.ln2_g, d), d, seq, &mut th);
            let mut tact = vec![0.0; rows * ff];
            gemm(
                rows,
                d,
                ff,
                1.0,
                &th,
                false,
                self.p(b.fc, d * ff),
                false,
                0.0,
                &mut tact,
            );
            for row in tact.chunks_mut(seq * ff) {
                row.iter_mut().zip(&c.act_grad).for_each(|(t, g)| *t *= g);
            }
            gemm(
                rows,
                ff,
                d,
                1.0,
                &tact,
                false,
                self.p(b.fc_out, ff * d),
                false,
                1.0,
                &mut tx,
            );
        }
        unreachable!("validated configs have at least one block")
    }

    /// Final norm and head applied to `count` last-position residual tangents.
    fn head_tangent(&self, cache: &ForwardCache, tl: &[f64], seq: usize, count: usize) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.config.vocab);
        let last = (seq - 1) * d;
        let mut tlast = vec![0.0; count * d];
        for k in 0..count {
            ln_tangent(
                &tl[k * d..(k + 1) * d],
                &cache.xhatf[last..last + d],
                &cache.rstdf[seq - 1..seq],
                self.p(self.offs.lnf_g, d),
                d,
                1,
                &mut tlast[k * d..(k + 1) * d],
            );
        }
        let mut out = vec![0.0; count * v];
        gemm(
            count,
            d,
            v,
            1.0,
            &tlast,
            false,
            self.p(self.offs.head, d * v),
            false,
            0.0,
            &mut out,
        );
        out
    }
}

fn split_pair(g: &mut [f64], gamma: usize, beta: usize, d: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(beta, gamma + d);
    let (a, b) = g[gamma..beta + d].split_at_mut(d);
    (a, b)
}

fn ln_forward(x: &[f64], gamma: &[f64], beta: &[f64], d: usize, out: &mut [f64], xhat: &mut [f64], rstd: &mut [f64]) {
    for (((row, o), xh), r) in x
        .chunks(d)
        .zip(out.chunks_mut(d))
        .zip(xhat.chunks_mut(d))
        .zip(rstd.iter_mut())
    {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        *r = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..d {
            xh[i] = (row[i] - mean) * *r;
            o[i] = xh[i] * gamma[i] + beta[i];
        }
    }
}

/// Accumulates `dx += J^T dy`; parameter gradients go to `dparams = (dgamma, dbeta)`.
fn ln_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    d: usize,
    dx: &mut [f64],
    mut dparams: Option<(&mut [f64], &mut [f64])>,
) {
    let mut g = vec![0.0; d];
    for (((dyr, xh), &r), dxr) in dy.chunks(d).zip(xhat.chunks(d)).zip(rstd).zip(dx.chunks_mut(d)) {
        if let Some((dg, db)) = dparams.as_mut() {
            for i in 0..d {
                dg[i] += dyr[i] * xh[i];
                db[i] += dyr[i];
            }
        }
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..d {
            g[i] = dyr[i] * gamma[i];
            m1 += g[i];
            m2 += g[i] * xh[i];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for i in 0..d {
            dxr[i] += r * (g[i] - m1 - xh[i] * m2);
        }
    }
}

/// Tangent of the norm output; tangent row `i` pairs with primal row `i % seq`.
fn ln_tangent(tx: &[f64], xhat: &[f64], rstd: &[f64], gamma: &[f64], d: usize, seq: usize, out: &mut [f64]) {
    for (i, (t, o)) in tx.chunks(d).zip(out.chunks_mut(d)).enumerate() {
        let p = i % seq;
        let xh = &xhat[p * d..(p + 1) * d];
        let r = rstd[p];
        let m1 = t.iter().sum::<f64>() / d as f64;
        let m2 = t.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for k in 0..d {
            o[k] = gamma[k] * r * (t[k] - m1 - xh[k] * m2);
        }
    }
}

/// Copies head `h` of the q, k and v column blocks for one sequence into contiguous `seq x dh` buffers.
#[allow(clippy::too_many_arguments)]
fn gather_head(qkv: &[f64], seq: usize, d: usize, h: usize, dh: usize, q: &mut [f64], k: &mut [f64], v: &mut [f64]) {
    for t in 0..seq {
        let row = &qkv[t * 3 * d..(t + 1) * 3 * d];
        q[t * dh..(t + 1) * dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
        k[t * dh..(t + 1) * dh].copy_from_slice(&row[d + h * dh..d + (h + 1) * dh]);
        v[t * dh..(t + 1) * dh].copy_from_slice(&row[2 * d + h * dh..2 * d + (h + 1) * dh]);
    }
}

/// Packed causal softmax weights of one head: row `i` sits at offset `i(i+1)/2`.
fn causal_probs(q: &[f64], k: &[f64], seq: usize, dh: usize, scale: f64, probs: &mut [f64]) {
    for i in 0..seq {
        let qi = &q[i * dh..(i + 1) * dh];
        let p = &mut probs[tri(i)..tri(i) + i + 1];
        let mut max = f64::NEG_INFINITY;
        for (j, pj) in p.iter_mut().enumerate() {
            let kj = &k[j * dh..(j + 1) * dh];
            let mut s = 0.0;
            for c in 0..dh {
                s += qi[c] * kj[c];
            }
            *pj = scale * s;
            max = max.max(*pj);
        }
        let mut sum = 0.0;
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        let inv = 1.0 / sum;
        p.iter_mut().for_each(|pj| *pj *= inv);
    }
}

#[inline]
fn tri(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Size of the packed weights for every (sequence, head) pair.
fn probs_len(batch: usize, seq: usize, heads: usize) -> usize {
    batch * heads * tri(seq)
}

/// Writes the attention output; `probs` receives the weights when it has room for them.
fn attn_forward(qkv: &[f64], batch: usize, seq: usize, cfg: &TinyConfig, out: &mut [f64], probs: &mut [f64]) {
    let (d, heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let keep = probs.len() == probs_len(batch, seq, heads);
    let (mut q, mut k, mut v) = (vec![0.0; seq * dh], vec![0.0; seq * dh], vec![0.0; seq * dh]);
    let mut local = if keep { vec![] } else { vec![0.0; tri(seq)] };
    for b in 0..batch {
        let qkv_b = &qkv[b * seq * 3 * d..(b + 1) * seq * 3 * d];
        let out_b = &mut out[b * seq * d..(b + 1) * seq * d];
        for h in 0..heads {
            gather_head(qkv_b, seq, d, h, dh, &mut q, &mut k, &mut v);
            let pr: &mut [f64] = if keep {
                let at = (b * heads + h) * tri(seq);
                &mut probs[at..at + tri(seq)]
            } else {
                &mut local
            };
            causal_probs(&q, &k, seq, dh, scale, pr);
            for i in 0..seq {
                let p = &pr[tri(i)..tri(i) + i + 1];
                let o = &mut out_b[i * d + h * dh..i * d + (h + 1) * dh];
                o.iter_mut().for_each(|x| *x = 0.0);
                for (j, &pj) in p.iter().enumerate() {
                    for (x, vj) in o.iter_mut().zip(&v[j * dh..(j + 1) * dh]) {
                        *x += pj * vj;
                    }
                }
            }
        }
    }
}

/// Overwrites `dqkv` with the gradient of the attention output; weights are recomputed if not cached.
fn attn_backward(
    qkv: &[f64],
    probs: &[f64],
    dout: &[f64],
    batch: usize,
    seq: usize,
    cfg: &TinyConfig,
    dqkv: &mut [f64],
) {
    let (d, heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let cached = probs.len() == probs_len(batch, seq, heads);
    let (mut q, mut k, mut v) = (vec![0.0; seq * dh], vec![0.0; seq * dh], vec![0.0; seq * dh]);
    let (mut dq, mut dk, mut dv) = (vec![0.0; seq * dh], vec![0.0; seq * dh], vec![0.0; seq * dh]);
    let mut local = if cached { vec![] } else { vec![0.0; tri(seq)] };
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        let qkv_b = &qkv[b * seq * 3 * d..(b + 1) * seq * 3 * d];
        let dout_b = &dout[b * seq * d..(b + 1) * seq * d];
        let dqkv_b = &mut dqkv[b * seq * 3 * d..(b + 1) * seq * 3 * d];
        for h in 0..heads {
            gather_head(qkv_b, seq, d, h, dh, &mut q, &mut k, &mut v);
            let pr: &[f64] = if cached {
                let at = (b * heads + h) * tri(seq);
                &probs[at..at + tri(seq)]
            } else {
                causal_probs(&q, &k, seq, dh, scale, &mut local);
                &local
            };
            dq.iter_mut()
                .chain(dk.iter_mut())
                .chain(dv.iter_mut())
                .for_each(|x| *x = 0.0);
            for i in 0..seq {
                let p = &pr[tri(i)..tri(i) + i + 1];
                let go = &dout_b[i * d + h * dh..i * d + (h + 1) * dh];
                let mut s = 0.0;
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &v[j * dh..(j + 1) * dh];
                    let mut dpj = 0.0;
                    for c in 0..dh {
                        dpj += go[c] * vj[c];
                    }
                    dp[j] = dpj;
                    s += pj * dpj;
                    for (x, g) in dv[j * dh..(j + 1) * dh].iter_mut().zip(go) {
                        *x += pj * g;
                    }
                }
                let qi = &q[i * dh..(i + 1) * dh];
                let (dqi, dk_head) = (&mut dq[i * dh..(i + 1) * dh], &mut dk[..]);
                for (j, &pj) in p.iter().enumerate() {
                    let ds = scale * pj * (dp[j] - s);
                    for c in 0..dh {
                        dqi[c] += ds * k[j * dh + c];
                        dk_head[j * dh + c] += ds * qi[c];
                    }
                }
            }
            for t in 0..seq {
                let row = &mut dqkv_b[t * 3 * d..(t + 1) * 3 * d];
                row[h * dh..(h + 1) * dh].copy_from_slice(&dq[t * dh..(t + 1) * dh]);
                row[d + h * dh..d + (h + 1) * dh].copy_from_slice(&dk[t * dh..(t + 1) * dh]);
                row[2 * d + h * dh..2 * d + (h + 1) * dh].copy_from_slice(&dv[t * dh..(t + 1) * dh]);
            }
        }
    }
}

/// Tangents of one sequence's attention output for `count` stacked qkv tangents.
/// Only rows `first..seq` of each output are written.
#[allow(clippy::too_many_arguments)]
fn attn_tangent(
    qkv: &[f64],
    probs: &[f64],
    tqkv: &[f64],
    count: usize,
    seq: usize,
    first: usize,
    cfg: &TinyConfig,
    out: &mut [f64],
) {
    let (d, heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let cached = probs.len() == probs_len(1, seq, heads);
    let (mut q, mut k, mut v) = (vec![0.0; seq * dh], vec![0.0; seq * dh], vec![0.0; seq * dh]);
    let (mut tq, mut tk, mut tv) = (vec![0.0; seq * dh], vec![0.0; seq * dh], vec![0.0; seq * dh]);
    let mut local = if cached { vec![] } else { vec![0.0; tri(seq)] };
    let mut ds = vec![0.0; seq];
    for h in 0..heads {
        gather_head(qkv, seq, d, h, dh, &mut q, &mut k, &mut v);
        let pr: &[f64] = if cached {
            &probs[h * tri(seq)..(h + 1) * tri(seq)]
        } else {
            causal_probs(&q, &k, seq, dh, scale, &mut local);
            &local
        };
        for c in 0..count {
            let t_c = &tqkv[c * seq * 3 * d..(c + 1) * seq * 3 * d];
            gather_head(t_c, seq, d, h, dh, &mut tq, &mut tk, &mut tv);
            let out_c = &mut out[c * seq * d..(c + 1) * seq * d];
            for i in first..seq {
                let p = &pr[tri(i)..tri(i) + i + 1];
                let qi = &q[i * dh..(i + 1) * dh];
                let tqi = &tq[i * dh..(i + 1) * dh];
                let mut mean = 0.0;
                for (j, &pj) in p.iter().enumerate() {
                    let mut s = 0.0;
                    for c2 in 0..dh {
                        s += tqi[c2] * k[j * dh + c2] + qi[c2] * tk[j * dh + c2];
                    }
                    ds[j] = scale * s;
                    mean += pj * ds[j];
                }
                let o = &mut out_c[i * d + h * dh..i * d + (h + 1) * dh];
                o.iter_mut().for_each(|x| *x = 0.0);
                for (j, &pj) in p.iter().enumerate() {
                    let w = pj * (ds[j] - mean);
                    for c2 in 0..dh {
                        o[c2] += w * v[j * dh + c2] + pj * tv[j * dh + c2];
                    }
                }
            }
        }
    }
}

/// Mean next-byte cross-entropy over all positions and `dloss/dlogits`.
pub(crate) fn cross_entropy(logits: &[f64], targets: &[u8], vocab: usize, want_grad: bool) -> (f64, Vec<f64>) {
    let n = targets.len();
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; logits.len()] } else { vec![] };
    for (i, (row, &t)) in logits.chunks(vocab).zip(targets).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if want_grad {
            let g = &mut grad[i * vocab..(i + 1) * vocab];
            let mut sum = 0.0;
            for (gv, lv) in g.iter_mut().zip(row) {
                *gv = (lv - max).exp();
                sum += *gv;
            }
            total += max + sum.ln() - row[t as usize];
            let scale = 1.0 / (sum * n as f64);
            g.iter_mut().for_each(|gv| *gv *= scale);
            g[t as usize] -= 1.0 / n as f64;
        } else {
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            total += max + sum.ln() - row[t as usize];
        }
    }
    (total / n as f64, grad)
}

impl TinyTransformer {
    /// Windows of `seq + 1` bytes, concatenated: inputs are the first `seq`, targets the last `seq`.
    fn split_windows(windows: &[u8], seq: usize) -> (Vec<u8>, Vec<u8>) {
        let mut inputs = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len());
        for w in windows.chunks(seq + 1) {
            inputs.extend_from_slice(&w[..seq]);
            targets.extend_from_slice(&w[1..]);
        }
        (inputs, targets)
    }

    /// Mean cross-entropy of a window batch; accumulates the parameter gradient into `grads`.
    pub fn loss_and_grad(&self, windows: &[u8], seq: usize, grads: &mut [f64]) -> Result<f64> {
        let batch = self.check_windows(windows, seq)?;
        let (inputs, targets) = Self::split_windows(windows, seq);
        let x = self.embed(&inputs, batch, seq);
        let (logits, cache) = self.forward_embedded(x, batch, seq);
        let (loss, dlogits) = cross_entropy(&logits, &targets, self.config.vocab, true);
        let dx = self.backward(&cache, &dlogits, Some(grads));
        self.embedding_backward(&inputs, seq, &dx, grads);
        Ok(loss)
    }

    /// Mean cross-entropy over all positions of the given windows.
    pub fn loss(&self, windows: &[u8], seq: usize) -> Result<f64> {
        let batch = self.check_windows(windows, seq)?;
        let (inputs, targets) = Self::split_windows(windows, seq);
        let x = self.embed(&inputs, batch, seq);
        let (logits, _) = self.forward_embedded(x, batch, seq);
        Ok(cross_entropy(&logits, &targets, self.config.vocab, false).0)
    }

    fn check_windows(&self, windows: &[u8], seq: usize) -> Result<usize> {
        if seq == 0 || seq > self.config.context || windows.is_empty() || !windows.len().is_multiple_of(seq + 1) {
            return Err(Error::Shape(format!(
                "{} bytes are not whole windows of {} (context {})",
                windows.len(),
                seq + 1,
                self.config.context
            )));
        }
        self.check_tokens(windows)?;
        Ok(windows.len() / (seq + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> TinyConfig {
        TinyConfig {
            vocab: 16,
            context: 9,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::numkernel::rng::named_stream(seed, "attn-test");
        (0..n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()
    }

    #[test]
    fn cached_and_recomputed_attention_agree() {
        let cfg = config();
        let (batch, seq, d) = (3, 9, cfg.d_model);
        let qkv = noise(batch * seq * 3 * d, 1);
        let dout = noise(batch * seq * d, 2);
        let mut probs = vec![0.0; probs_len(batch, seq, cfg.n_heads)];
        let (mut a, mut b) = (vec![0.0; batch * seq * d], vec![0.0; batch * seq * d]);
        attn_forward(&qkv, batch, seq, &cfg, &mut a, &mut probs);
        attn_forward(&qkv, batch, seq, &cfg, &mut b, &mut []);
        assert_eq!(a, b);
        let (mut ga, mut gb) = (vec![0.0; qkv.len()], vec![0.0; qkv.len()]);
        attn_backward(&qkv, &probs, &dout, batch, seq, &cfg, &mut ga);
        attn_backward(&qkv, &[], &dout, batch, seq, &cfg, &mut gb);
        assert_eq!(ga, gb);

        let one = &qkv[..seq * 3 * d];
        let tq = noise(2 * seq * 3 * d, 3);
        let mut p1 = vec![0.0; probs_len(1, seq, cfg.n_heads)];
        attn_forward(one, 1, seq, &cfg, &mut vec![0.0; seq * d], &mut p1);
        let (mut ta, mut tb) = (vec![0.0; 2 * seq * d], vec![0.0; 2 * seq * d]);
        attn_tangent(one, &p1, &tq, 2, seq, 0, &cfg, &mut ta);
        attn_tangent(one, &[], &tq, 2, seq, 0, &cfg, &mut tb);
        assert_eq!(ta, tb);
    }

    #[test]
    fn fused_gelu_matches_separate_forms() {
        use crate::numkernel::model::{gelu, gelu_grad};
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            let (v, g) = gelu_with_grad(x);
            assert!((v - gelu(x)).abs() < 1e-14, "x={x}");
            assert!((g - gelu_grad(x)).abs() < 1e-14, "x={x}");
        }
    }
}
