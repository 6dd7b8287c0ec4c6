//! Directed augmentation that stays close to the crashing path.
//!
//! This is a stand-in for the ConcFuzz idea of exploring the neighborhood of
//! a crashing execution, not a port of the original tool. It works in two
//! phases:
//!
//! 1. A sensitivity pass replaces each seed byte in turn with random values
//!    and notes which conditional blocks on the crashing path react.
//! 2. Mutation rounds visit those branch points one after another and mutate
//!    only the bytes that influence the current point, preferring bytes that
//!    do not also influence an earlier point, so the prefix of the path tends
//!    to stay intact.
//!
//! Every mutant is derived from the seed itself, never from another mutant.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{AugmentError, Augmenter, Budget, Campaign, CampaignStats};
use crate::harness::classify;
use crate::manifest::TargetSpec;
use crate::model::{BlockSite, SampleSink};
use crate::trace::{Event, Trace};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("branch points are only defined for crashing traces")]
pub struct NonCrashTrace;

/// A conditional block hit on the crashing path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchPoint {
    pub trace_index: usize,
    pub site: BlockSite,
    /// Value of the nearest `V` event before the block, if any.
    pub observed_value: Option<i64>,
    /// Which hit of `site` this is, counting from 0.
    occurrence: usize,
}

impl BranchPoint {
    /// Whether `trace` still reaches this point with the same observed value.
    pub fn holds_in(&self, trace: &Trace) -> bool {
        let mut last_value = None;
        let mut seen = 0;
        for event in &trace.events {
            match *event {
                Event::Value { value, .. } => last_value = Some(value),
                Event::Block(id) if id == self.site.id => {
                    if seen == self.occurrence {
                        return self.observed_value.is_none() || last_value == self.observed_value;
                    }
                    seen += 1;
                }
                Event::Block(_) => {}
            }
        }
        false
    }
}

/// The conditional block hits of a crashing trace, in trace order. Blocks the
/// manifest does not mark `cond` are skipped.
pub fn branch_sequence(trace: &Trace, spec: &TargetSpec) -> Result<Vec<BranchPoint>, NonCrashTrace> {
    match trace.terminal {
        Some(t) if classify(spec, t).is_crash() => {}
        _ => return Err(NonCrashTrace),
    }
    let mut points = Vec::new();
    let mut last_value = None;
    let mut hits = std::collections::HashMap::new();
    for (i, event) in trace.events.iter().enumerate() {
        match *event {
            Event::Value { value, .. } => last_value = Some(value),
            Event::Block(id) => {
                let occurrence = hits.entry(id).or_insert(0usize);
                match spec.block(id) {
                    Some(site) if site.conditional => points.push(BranchPoint {
                        trace_index: i,
                        site: site.clone(),
                        observed_value: last_value,
                        occurrence: *occurrence,
                    }),
                    _ => {}
                }
                *occurrence += 1;
            }
        }
    }
    Ok(points)
}

/// Influential byte indices, one set per branch point.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SensitivityMap {
    pub influential: Vec<BTreeSet<usize>>,
}

impl SensitivityMap {
    pub fn is_empty(&self) -> bool {
        self.influential.iter().all(BTreeSet::is_empty)
    }
}

/// Runs `probes_per_byte` single-byte substitutions per input byte and
/// records which points each byte disturbs. Probes go to the campaign's
/// sink; the pass stops early if the budget runs out.
pub fn sensitivity_map(
    campaign: &mut Campaign,
    input: &[u8],
    points: &[BranchPoint],
    probes_per_byte: u32,
    rng: &mut impl Rng,
) -> SensitivityMap {
    let mut map = SensitivityMap {
        influential: vec![BTreeSet::new(); points.len()],
    };
    let mut probe = input.to_vec();
    'bytes: for i in 0..input.len() {
        for _ in 0..probes_per_byte {
            probe[i] = input[i].wrapping_add(rng.gen_range(1..=255));
            let Some(sample) = campaign.exec(&probe) else {
                break 'bytes;
            };
            for (p, point) in points.iter().enumerate() {
                if !point.holds_in(&sample.trace) {
                    map.influential[p].insert(i);
                }
            }
        }
        probe[i] = input[i];
    }
    map
}

#[derive(Debug, Clone)]
pub struct ConcFuzz {
    pub probes_per_byte: u32,
    /// Mutants per branch point per round.
    pub execs_per_point: u32,
    /// Largest step of the `±` arithmetic mutation.
    pub max_arith: u8,
}

impl Default for ConcFuzz {
    fn default() -> Self {
        ConcFuzz {
            probes_per_byte: 8,
            execs_per_point: 16,
            max_arith: 8,
        }
    }
}

/// The bytes to mutate for each point: those influential for it and for no
/// earlier point, or all of its influential bytes when none are exclusive.
fn target_bytes(map: &SensitivityMap) -> Vec<Vec<usize>> {
    let mut earlier: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::with_capacity(map.influential.len());
    for set in &map.influential {
        let exclusive: Vec<usize> = set.difference(&earlier).copied().collect();
        out.push(if exclusive.is_empty() {
            set.iter().copied().collect()
        } else {
            exclusive
        });
        earlier.extend(set);
    }
    out
}

impl ConcFuzz {
    fn mutant(&self, seed: &[u8], bytes: &[usize], rng: &mut impl Rng) -> Vec<u8> {
        let mut out = seed.to_vec();
        let n = rng.gen_range(1..=bytes.len().min(4));
        for &i in bytes.choose_multiple(rng, n) {
            out[i] = if rng.gen_bool(0.5) {
                out[i].wrapping_add(rng.gen_range(1..=255))
            } else {
                let delta = rng.gen_range(1..=self.max_arith.max(1));
                if rng.gen() {
                    out[i].wrapping_add(delta)
                } else {
                    out[i].wrapping_sub(delta)
                }
            };
        }
        out
    }
}

impl Augmenter for ConcFuzz {
    fn id(&self) -> &'static str {
        "concfuzz"
    }

    fn run(
        &self,
        spec: &TargetSpec,
        seed: &[u8],
        budget: Budget,
        rng_seed: u64,
        sink: &mut dyn SampleSink,
    ) -> Result<CampaignStats, AugmentError> {
        let mut campaign = Campaign::new(spec, budget, sink)?;
        let seed_sample = campaign.exec_seed(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let points = branch_sequence(&seed_sample.trace, spec).unwrap_or_default();

        while !campaign.exhausted() {
            let before = campaign.executions();
            let map = sensitivity_map(&mut campaign, seed, &points, self.probes_per_byte, &mut rng);
            if map.is_empty() {
                if campaign.executions() == before {
                    // Nothing to probe: an empty seed or no probes configured.
                    break;
                }
                continue;
            }
            let targets = target_bytes(&map);
            'rounds: loop {
                for bytes in targets.iter().filter(|b| !b.is_empty()) {
                    for _ in 0..self.execs_per_point {
                        let input = self.mutant(seed, bytes, &mut rng);
                        if campaign.exec(&input).is_none() {
                            break 'rounds;
                        }
                    }
                }
            }
        }
        Ok(campaign.stats())
    }
}
