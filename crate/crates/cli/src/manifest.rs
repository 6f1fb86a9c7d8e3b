//! Run directories: a manifest written before the first trial and append-only trial logs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const CODE_VERSION: &str = env!("NILAB_SOURCE_HASH");
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config: RunConfig,
    /// Keys set by the config file rather than the profile.
    pub overrides: Vec<String>,
    /// Content hashes of corpora and tables the run reads.
    pub inputs: BTreeMap<String, String>,
    pub code_version: String,
    pub trial_log: String,
}

impl RunManifest {
    pub fn new(experiment: &str, config: &RunConfig, overrides: &[String]) -> Self {
        RunManifest {
            experiment: experiment.into(),
            config: config.clone(),
            overrides: overrides.to_vec(),
            inputs: BTreeMap::new(),
            code_version: CODE_VERSION.into(),
            trial_log: "trials.csv".into(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn same_run(&self, other: &RunManifest) -> bool {
        self.experiment == other.experiment && self.config == other.config && self.inputs == other.inputs
    }
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Creates the directory and manifest, or reopens a matching run when `resume` is set.
    pub fn open(root: &Path, manifest: RunManifest, resume: bool) -> Result<Self> {
        if root.join(MANIFEST).exists() {
            let existing = RunManifest::read(root)?;
            if !resume {
                bail!("{} already holds a run; pass --resume to continue it", root.display());
            }
            if !existing.same_run(&manifest) {
                bail!(
                    "{} holds a run with a different configuration or inputs",
                    root.display()
                );
            }
            if existing.code_version != manifest.code_version {
                log::warn!(
                    "resuming a run started by code version {} with {}",
                    existing.code_version,
                    manifest.code_version
                );
            }
            return Ok(RunDir {
                root: root.to_path_buf(),
                manifest: existing,
            });
        }
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        write_atomic(
            &root.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn trial_log<T: Serialize + DeserializeOwned>(&self) -> Result<TrialLog<T>> {
        TrialLog::open(&self.path(&self.manifest.trial_log))
    }
}

/// Append-only CSV of completed trials. A torn final line from an interrupted run is discarded.
pub struct TrialLog<T> {
    path: PathBuf,
    file: File,
    has_header: bool,
    pub rows: Vec<T>,
    _row: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> TrialLog<T> {
    pub fn open(path: &Path) -> Result<Self> {
        let mut text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        if keep < text.len() {
            log::warn!("{}: dropping a partial trailing record", path.display());
            text.truncate(keep);
            std::fs::write(path, &text)?;
        }
        let mut rows = Vec::new();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for (i, r) in rdr.deserialize().enumerate() {
            rows.push(r.with_context(|| format!("{}: record {}", path.display(), i + 1))?);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(TrialLog {
            path: path.to_path_buf(),
            file,
            has_header: !text.is_empty(),
            rows,
            _row: PhantomData,
        })
    }

    pub fn append(&mut self, row: T) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(!self.has_header)
            .from_writer(Vec::new());
        w.serialize(&row)?;
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.file.write_all(&bytes)?;
        self.file
            .sync_data()
            .with_context(|| format!("syncing {}", self.path.display()))?;
        self.has_header = true;
        self.rows.push(row);
        Ok(())
    }
}
