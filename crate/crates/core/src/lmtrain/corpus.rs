use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkernel::rng;

#[derive(Clone, Debug, Default)]
pub struct CorpusPaths {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Byte-level train/valid/test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct ByteCorpus {
    pub train: Vec<u8>,
    pub valid: Vec<u8>,
    pub test: Vec<u8>,
    pub sources: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Corpus(format!("{} is empty", path.display())));
    }
    Ok(bytes)
}

impl ByteCorpus {
    /// Contiguous 98/1/1 split of one byte stream.
    pub fn split(bytes: Vec<u8>) -> Result<Self> {
        let n = bytes.len();
        if n < 3 {
            return Err(Error::Corpus(format!("{n} bytes cannot be split three ways")));
        }
        let n_valid = (n / 100).max(1);
        let n_test = (n / 100).max(1);
        let n_train = n - n_valid - n_test;
        Ok(ByteCorpus {
            train: bytes[..n_train].to_vec(),
            valid: bytes[n_train..n_train + n_valid].to_vec(),
            test: bytes[n_train + n_valid..].to_vec(),
            sources: vec![],
        })
    }

    /// SHA-256 over the three splits, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.train, &self.valid, &self.test] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        format!("{:x}", h.finalize())
    }

    pub fn check_context(&self, context: usize) -> Result<()> {
        for (name, part) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            if part.len() < context + 1 {
                return Err(Error::Corpus(format!(
                    "{name} split has {} bytes, fewer than one window of {}",
                    part.len(),
                    context + 1
                )));
            }
        }
        Ok(())
    }
}

/// Reads explicit split files, or splits a single training file 98/1/1.
pub fn load_corpus(paths: &CorpusPaths, context: usize) -> Result<ByteCorpus> {
    let corpus = match (&paths.valid, &paths.test) {
        (Some(v), Some(t)) => ByteCorpus {
            train: read(&paths.train)?,
            valid: read(v)?,
            test: read(t)?,
            sources: vec![paths.train.clone(), v.clone(), t.clone()],
        },
        (None, None) => {
            let mut c = ByteCorpus::split(read(&paths.train)?)?;
            c.sources = vec![paths.train.clone()];
            c
        }
        _ => return Err(Error::Corpus("give both validation and test files, or neither".into())),
    };
    corpus.check_context(context)?;
    log::info!("corpus {} ({} train bytes)", corpus.content_hash(), corpus.train.len());
    Ok(corpus)
}

fn window_stream(seed: u64, step: u64) -> rng::Rng {
    rng::stream(rng::derive_seed(&format!("train-windows:{seed}")), step)
}

/// `batch` random windows of `context + 1` bytes for one optimizer step, concatenated.
pub fn sample_train_batch(corpus: &ByteCorpus, context: usize, batch: usize, seed: u64, step: u64) -> Vec<u8> {
    let mut r = window_stream(seed, step);
    let span = corpus.train.len() - context;
    let mut out = Vec::with_capacity(batch * (context + 1));
    for _ in 0..batch {
        let start = r.gen_range(0..span);
        out.extend_from_slice(&corpus.train[start..start + context + 1]);
    }
    out
}

/// The first window of the batch for `(seed, step)`.
pub fn sample_train_window(corpus: &ByteCorpus, context: usize, seed: u64, step: u64) -> Vec<u8> {
    sample_train_batch(corpus, context, 1, seed, step)
}

/// Non-overlapping windows of `context + 1` bytes at stride `context`; the remainder is dropped.
pub fn eval_windows(split: &[u8], context: usize) -> Vec<&[u8]> {
    if split.len() < context + 1 || context == 0 {
        return vec![];
    }
    let count = (split.len() - 1) / context;
    (0..count)
        .map(|i| &split[i * context..i * context + context + 1])
        .collect()
}
