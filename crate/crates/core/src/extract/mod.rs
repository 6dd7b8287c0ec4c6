//! Feature extraction: rank source locations by how well they separate
//! crashing from non-crashing samples.

use thiserror::Error;

use crate::manifest::TargetSpec;
use crate::model::{Dataset, ModelError, Ranking};

pub mod aurora;
pub mod vulnloc;

pub use aurora::Aurora;
pub use vulnloc::VulnLoc;

/// Candidate list length used when nothing else is configured.
pub const DEFAULT_CAP: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("dataset needs crashing and non-crashing samples (have {n_crash} crash, {n_noncrash} noncrash)")]
    DegenerateDataset { n_crash: usize, n_noncrash: usize },
    #[error(transparent)]
    Ranking(#[from] ModelError),
}

/// A feature extraction method.
pub trait Extractor: Send + Sync {
    fn id(&self) -> &'static str;

    /// Ranks locations of `spec` using the crash and non-crash samples of
    /// `dataset`; timeouts and harness errors are ignored.
    fn rank(&self, dataset: &Dataset, spec: &TargetSpec, cap: usize) -> Result<Ranking, ExtractError>;
}

/// Labelled samples split by class, or `DegenerateDataset` if either class
/// is empty.
pub(crate) fn class_sizes(dataset: &Dataset) -> Result<(usize, usize), ExtractError> {
    let (mut n_crash, mut n_noncrash) = (0, 0);
    for s in dataset.labelled() {
        if s.verdict.is_crash() {
            n_crash += 1;
        } else {
            n_noncrash += 1;
        }
    }
    if n_crash == 0 || n_noncrash == 0 {
        return Err(ExtractError::DegenerateDataset { n_crash, n_noncrash });
    }
    Ok((n_crash, n_noncrash))
}

pub const EXTRACTOR_IDS: [&str; 2] = ["vulnloc", "aurora"];

pub fn by_id(id: &str) -> Option<Box<dyn Extractor>> {
    match id {
        "vulnloc" => Some(Box::new(VulnLoc)),
        "aurora" => Some(Box::new(Aurora)),
        _ => None,
    }
}
