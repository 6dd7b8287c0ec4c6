//! On-disk dataset layout.
//!
//! One directory per campaign:
//!
//! ```text
//! dataset.toml          target_id, augmenter_id, rng_seed
//! samples.idx           <seq> <born_at_ms> <verdict> <input-file> <trace-file>
//! inputs/<seq>.bin
//! traces/<seq>.trace
//! ```
//!
//! Paths in the index are relative to the dataset directory.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, Sample};
use crate::trace::{Trace, TraceError};

pub const INDEX_FILE: &str = "samples.idx";
pub const META_FILE: &str = "dataset.toml";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Meta { path: PathBuf, message: String },
    #[error("{INDEX_FILE} line {line}: {message}")]
    Index { line: usize, message: String },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    target_id: String,
    augmenter_id: String,
    rng_seed: u64,
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), StoreError> {
    for sub in ["inputs", "traces"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let meta = Meta {
        target_id: dataset.target_id.clone(),
        augmenter_id: dataset.augmenter_id.clone(),
        rng_seed: dataset.rng_seed,
    };
    let meta_path = dir.join(META_FILE);
    let meta_text = toml::to_string(&meta).map_err(|e| StoreError::Meta {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&meta_path, meta_text).map_err(io_err(&meta_path))?;

    let index_path = dir.join(INDEX_FILE);
    let file = fs::File::create(&index_path).map_err(io_err(&index_path))?;
    let mut index = BufWriter::new(file);
    for (seq, sample) in dataset.samples().iter().enumerate() {
        let input_rel = format!("inputs/{seq:06}.bin");
        let trace_rel = format!("traces/{seq:06}.trace");
        let input_path = dir.join(&input_rel);
        fs::write(&input_path, &sample.input).map_err(io_err(&input_path))?;
        let trace_path = dir.join(&trace_rel);
        fs::write(&trace_path, sample.trace.to_string()).map_err(io_err(&trace_path))?;
        writeln!(
            index,
            "{seq} {} {} {input_rel} {trace_rel}",
            sample.born_at, sample.verdict
        )
        .map_err(io_err(&index_path))?;
    }
    index.flush().map_err(io_err(&index_path))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, StoreError> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: Meta = toml::from_str(&meta_text).map_err(|e| StoreError::Meta {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    let mut dataset = Dataset::new(meta.target_id, meta.augmenter_id, meta.rng_seed);

    let index_path = dir.join(INDEX_FILE);
    let index = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    for (i, line) in index.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| StoreError::Index {
            line: i + 1,
            message: format!("{message}: {line:?}"),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [seq, born_at, verdict, input_rel, trace_rel] = fields.as_slice() else {
            return Err(bad("expected 5 fields"));
        };
        let seq: usize = seq.parse().map_err(|_| bad("bad sequence number"))?;
        if seq != dataset.len() {
            return Err(bad("sequence numbers must be consecutive from 0"));
        }
        let born_at = born_at.parse().map_err(|_| bad("bad born_at"))?;
        let verdict = verdict.parse().map_err(|e: String| bad(&e))?;
        let input_path = dir.join(input_rel);
        let input = fs::read(&input_path).map_err(io_err(&input_path))?;
        let trace_path = dir.join(trace_rel);
        let trace_text = fs::read_to_string(&trace_path).map_err(io_err(&trace_path))?;
        let trace = Trace::parse_partial(&trace_text).map_err(|source| StoreError::Trace {
            path: trace_path.clone(),
            source,
        })?;
        dataset.push(Sample {
            input,
            trace,
            verdict,
            born_at,
        });
    }
    Ok(dataset)
}
