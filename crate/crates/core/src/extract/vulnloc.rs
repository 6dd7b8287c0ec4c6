//! Spectrum-based extraction with Ochiai suspiciousness.
//!
//! This follows the spirit of VulnLoc's statistical localization but uses
//! the standard Ochiai formula; it does not reproduce VulnLoc's own scoring.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{class_sizes, ExtractError, Extractor};
use crate::manifest::TargetSpec;
use crate::model::{Dataset, Location, Ranking};

/// Execution tallies for one location.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpectrumCounts {
    /// Executed by crashing samples.
    pub a_ef: u64,
    /// Executed by non-crashing samples.
    pub a_ep: u64,
    pub a_nf: u64,
    pub a_np: u64,
}

/// Counts, for every block location of `spec`, how many crashing and
/// non-crashing samples executed it at least once.
pub fn spectrum_counts(dataset: &Dataset, spec: &TargetSpec) -> Result<BTreeMap<Location, SpectrumCounts>, ExtractError> {
    let (n_crash, n_noncrash) = class_sizes(dataset)?;
    let loc_of: HashMap<u32, &Location> = spec.block_map.iter().map(|b| (b.id, &b.location)).collect();
    let mut counts: BTreeMap<Location, SpectrumCounts> = spec
        .block_locations()
        .into_iter()
        .map(|l| (l, SpectrumCounts::default()))
        .collect();

    let mut executed: HashSet<&Location> = HashSet::new();
    for sample in dataset.labelled() {
        executed.clear();
        executed.extend(sample.trace.blocks().filter_map(|id| loc_of.get(&id).copied()));
        let crash = sample.verdict.is_crash();
        for loc in &executed {
            let c = counts.get_mut(*loc).expect("block locations are pre-seeded");
            if crash {
                c.a_ef += 1;
            } else {
                c.a_ep += 1;
            }
        }
    }
    for c in counts.values_mut() {
        c.a_nf = n_crash as u64 - c.a_ef;
        c.a_np = n_noncrash as u64 - c.a_ep;
    }
    Ok(counts)
}

/// Ochiai: `a_ef / sqrt((a_ef + a_nf) * (a_ef + a_ep))`, and 0 when the
/// location never ran in a crash.
pub fn score(c: &SpectrumCounts) -> f64 {
    if c.a_ef == 0 {
        return 0.0;
    }
    let denom = ((c.a_ef + c.a_nf) as f64 * (c.a_ef + c.a_ep) as f64).sqrt();
    c.a_ef as f64 / denom
}

pub fn rank(dataset: &Dataset, spec: &TargetSpec, cap: usize) -> Result<Ranking, ExtractError> {
    let scored = spectrum_counts(dataset, spec)?
        .into_iter()
        .map(|(loc, c)| (loc, score(&c)))
        .collect();
    Ok(Ranking::from_scores(scored, cap)?)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VulnLoc;

impl Extractor for VulnLoc {
    fn id(&self) -> &'static str {
        "vulnloc"
    }

    fn rank(&self, dataset: &Dataset, spec: &TargetSpec, cap: usize) -> Result<Ranking, ExtractError> {
        rank(dataset, spec, cap)
    }
}
