//! Crash-exploration mutational fuzzing.
//!
//! Starting from one crashing seed, the fuzzer keeps a queue of crashing
//! inputs and mutates each in turn. A mutant joins the queue only when it
//! also crashes and its edge coverage shows a hit-count class not seen
//! before. Every execution, crashing or not, goes into the dataset.
//!
//! Each queue entry is processed in three stages the first time it is
//! picked: walking single-bit flips, walking byte arithmetic, then a round
//! of stacked random "havoc" mutations. Later picks run havoc only. Energy is
//! uniform and there is no splicing, so a campaign is a pure function of
//! `(rng_seed, seed, target, execution budget)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AugmentError, Augmenter, Budget, Campaign, CampaignStats};
use crate::manifest::TargetSpec;
use crate::model::SampleSink;
use crate::trace::Trace;

pub const MAP_SIZE: usize = 1 << 16;
pub const DEFAULT_MAX_LEN: usize = 1 << 20;
pub const ARITH_MAX: u8 = 35;
const HAVOC_MAX_STACK: u32 = 64;
const HAVOC_BLOCK_MAX: usize = 32;

/// One edge together with its hit-count class bit.
pub type EdgeClass = (u16, u8);

/// Per-run edge hit counters.
pub struct CoverageMap {
    counts: Vec<u8>,
    touched: Vec<u16>,
}

impl Default for CoverageMap {
    fn default() -> Self {
        CoverageMap {
            counts: vec![0; MAP_SIZE],
            touched: Vec::new(),
        }
    }
}

fn block_slot(id: u32) -> u16 {
    (id.wrapping_mul(0x9E37_79B1) >> 16) as u16
}

/// Maps a raw hit count to one of eight class bits:
/// 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128+.
pub fn count_class(count: u8) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 1 << 1,
        3 => 1 << 2,
        4..=7 => 1 << 3,
        8..=15 => 1 << 4,
        16..=31 => 1 << 5,
        32..=127 => 1 << 6,
        128..=255 => 1 << 7,
    }
}

impl CoverageMap {
    pub fn record(&mut self, trace: &Trace) {
        let mut prev: u16 = 0;
        for block in trace.blocks() {
            let cur = block_slot(block);
            let edge = prev ^ cur.rotate_left(1);
            let slot = &mut self.counts[edge as usize];
            if *slot == 0 {
                self.touched.push(edge);
            }
            *slot = slot.saturating_add(1);
            prev = cur;
        }
    }

    /// The sorted `(edge, class)` set of the recorded run.
    pub fn signature(&self) -> Vec<EdgeClass> {
        let mut sig: Vec<EdgeClass> = self
            .touched
            .iter()
            .map(|&e| (e, count_class(self.counts[e as usize])))
            .collect();
        sig.sort_unstable();
        sig
    }

    pub fn reset(&mut self) {
        for &e in &self.touched {
            self.counts[e as usize] = 0;
        }
        self.touched.clear();
    }

    pub fn signature_of(&mut self, trace: &Trace) -> Vec<EdgeClass> {
        self.reset();
        self.record(trace);
        self.signature()
    }
}

/// Every `(edge, class)` pair admitted so far.
pub struct VirginMap {
    seen: Vec<u8>,
}

impl Default for VirginMap {
    fn default() -> Self {
        VirginMap { seen: vec![0; MAP_SIZE] }
    }
}

impl VirginMap {
    /// Marks `signature` as seen; true if any pair was new.
    pub fn admit(&mut self, signature: &[EdgeClass]) -> bool {
        let mut novel = false;
        for &(edge, class) in signature {
            let seen = &mut self.seen[edge as usize];
            if *seen & class == 0 {
                *seen |= class;
                novel = true;
            }
        }
        novel
    }

    pub fn len(&self) -> usize {
        self.seen.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Flip bit `step % 8` (most significant first) of byte `step / 8`.
    DetBitflip { step: usize },
    /// Add or subtract 1..=35 on byte `step / 70`; even steps add, odd
    /// steps subtract, magnitude `(step % 70) / 2 + 1`.
    DetArith { step: usize },
    Havoc,
}

impl Stage {
    pub fn bitflip_steps(len: usize) -> usize {
        len * 8
    }

    pub fn arith_steps(len: usize) -> usize {
        len * 2 * ARITH_MAX as usize
    }
}

/// Produces one mutant of `input`. Deterministic stages ignore `rng`. The
/// result is never empty and never longer than `max_len`; an empty input is
/// treated as a single zero byte.
pub fn mutate(input: &[u8], rng: &mut impl Rng, stage: Stage, max_len: usize) -> Vec<u8> {
    let mut out = if input.is_empty() { vec![0] } else { input.to_vec() };
    out.truncate(max_len.max(1));
    match stage {
        Stage::DetBitflip { step } => {
            if let Some(byte) = out.get_mut(step / 8) {
                *byte ^= 0x80 >> (step % 8);
            }
        }
        Stage::DetArith { step } => {
            let per_byte = 2 * ARITH_MAX as usize;
            let delta = ((step % per_byte) / 2 + 1) as u8;
            if let Some(byte) = out.get_mut(step / per_byte) {
                *byte = if step % 2 == 0 {
                    byte.wrapping_add(delta)
                } else {
                    byte.wrapping_sub(delta)
                };
            }
        }
        Stage::Havoc => {
            let ops = rng.gen_range(1..=HAVOC_MAX_STACK);
            for _ in 0..ops {
                havoc_op(&mut out, rng, max_len.max(1));
            }
        }
    }
    out
}

fn havoc_op(buf: &mut Vec<u8>, rng: &mut impl Rng, max_len: usize) {
    let len = buf.len();
    match rng.gen_range(0..5) {
        0 => {
            let bit = rng.gen_range(0..len * 8);
            buf[bit / 8] ^= 0x80 >> (bit % 8);
        }
        1 => {
            let at = rng.gen_range(0..len);
            buf[at] = rng.gen();
        }
        2 => {
            let at = rng.gen_range(0..len);
            let delta = rng.gen_range(1..=ARITH_MAX);
            buf[at] = if rng.gen() {
                buf[at].wrapping_add(delta)
            } else {
                buf[at].wrapping_sub(delta)
            };
        }
        3 if len > 1 => {
            let n = rng.gen_range(1..=(len - 1).min(HAVOC_BLOCK_MAX));
            let at = rng.gen_range(0..=len - n);
            buf.drain(at..at + n);
        }
        4 if len < max_len => {
            let n = rng.gen_range(1..=len.min(HAVOC_BLOCK_MAX).min(max_len - len));
            let from = rng.gen_range(0..=len - n);
            let to = rng.gen_range(0..=len);
            let block: Vec<u8> = buf[from..from + n].to_vec();
            buf.splice(to..to, block);
        }
        _ => {
            // Length-changing op not applicable: fall back to a byte set.
            let at = rng.gen_range(0..len);
            buf[at] = rng.gen();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub input: Vec<u8>,
    pub coverage_signature: Vec<EdgeClass>,
    pub energy: u32,
    deterministic_done: bool,
}

/// What a campaign leaves behind besides its dataset.
#[derive(Debug, Clone)]
pub struct AflCemReport {
    pub stats: CampaignStats,
    pub queue: Vec<QueueEntry>,
    /// Size of the admitted `(edge, class)` set after each queue admission.
    pub coverage_growth: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AflCem {
    pub max_len: usize,
    /// Havoc mutants per queue pick, multiplied by the entry's energy.
    pub havoc_rounds: u32,
}

impl Default for AflCem {
    fn default() -> Self {
        AflCem {
            max_len: DEFAULT_MAX_LEN,
            havoc_rounds: 256,
        }
    }
}

struct State {
    queue: Vec<QueueEntry>,
    virgin: VirginMap,
    coverage: CoverageMap,
    growth: Vec<usize>,
}

impl State {
    /// Executes a mutant; `false` once the budget is spent.
    fn try_input(&mut self, campaign: &mut Campaign, input: Vec<u8>) -> bool {
        let Some(sample) = campaign.exec(&input) else {
            return false;
        };
        if sample.verdict.is_crash() {
            let sig = self.coverage.signature_of(&sample.trace);
            if self.virgin.admit(&sig) {
                self.queue.push(QueueEntry {
                    input,
                    coverage_signature: sig,
                    energy: 1,
                    deterministic_done: false,
                });
                self.growth.push(self.virgin.len());
            }
        }
        true
    }
}

impl AflCem {
    pub fn run_campaign(
        &self,
        spec: &TargetSpec,
        seed: &[u8],
        budget: Budget,
        rng_seed: u64,
        sink: &mut dyn SampleSink,
    ) -> Result<AflCemReport, AugmentError> {
        let mut campaign = Campaign::new(spec, budget, sink)?;
        let seed_sample = campaign.exec_seed(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

        let mut state = State {
            queue: Vec::new(),
            virgin: VirginMap::default(),
            coverage: CoverageMap::default(),
            growth: Vec::new(),
        };
        let sig = state.coverage.signature_of(&seed_sample.trace);
        state.virgin.admit(&sig);
        state.growth.push(state.virgin.len());
        state.queue.push(QueueEntry {
            input: seed.to_vec(),
            coverage_signature: sig,
            energy: 1,
            deterministic_done: false,
        });

        let mut cursor = 0;
        'fuzz: loop {
            let entry = state.queue[cursor].clone();
            if !entry.deterministic_done {
                let len = entry.input.len().max(1);
                for step in 0..Stage::bitflip_steps(len) {
                    let mutant = mutate(&entry.input, &mut rng, Stage::DetBitflip { step }, self.max_len);
                    if !state.try_input(&mut campaign, mutant) {
                        break 'fuzz;
                    }
                }
                for step in 0..Stage::arith_steps(len) {
                    let mutant = mutate(&entry.input, &mut rng, Stage::DetArith { step }, self.max_len);
                    if !state.try_input(&mut campaign, mutant) {
                        break 'fuzz;
                    }
                }
                state.queue[cursor].deterministic_done = true;
            }
            for _ in 0..self.havoc_rounds * entry.energy {
                let mutant = mutate(&entry.input, &mut rng, Stage::Havoc, self.max_len);
                if !state.try_input(&mut campaign, mutant) {
                    break 'fuzz;
                }
            }
            if campaign.exhausted() {
                break;
            }
            cursor = (cursor + 1) % state.queue.len();
        }

        Ok(AflCemReport {
            stats: campaign.stats(),
            queue: state.queue,
            coverage_growth: state.growth,
        })
    }
}

impl Augmenter for AflCem {
    fn id(&self) -> &'static str {
        "aflcem"
    }

    fn run(
        &self,
        spec: &TargetSpec,
        seed: &[u8],
        budget: Budget,
        rng_seed: u64,
        sink: &mut dyn SampleSink,
    ) -> Result<CampaignStats, AugmentError> {
        self.run_campaign(spec, seed, budget, rng_seed, sink)
            .map(|report| report.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocks;
    use crate::model::{Dataset, VerdictKind};
    use crate::trace::{Event, Terminal};
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn bitflip_is_msb_first() {
        let out = mutate(&[0x00], &mut rng(0), Stage::DetBitflip { step: 0 }, DEFAULT_MAX_LEN);
        assert_eq!(out, vec![0x80]);
        let out = mutate(&[0x00, 0x00], &mut rng(0), Stage::DetBitflip { step: 15 }, DEFAULT_MAX_LEN);
        assert_eq!(out, vec![0x00, 0x01]);
    }

    #[test]
    fn arith_steps_alternate_sign() {
        let out = mutate(&[0x04], &mut rng(0), Stage::DetArith { step: 1 }, DEFAULT_MAX_LEN);
        assert_eq!(out, vec![0x03]);
        let out = mutate(&[0x04], &mut rng(0), Stage::DetArith { step: 0 }, DEFAULT_MAX_LEN);
        assert_eq!(out, vec![0x05]);
        let out = mutate(&[0x04], &mut rng(0), Stage::DetArith { step: 69 }, DEFAULT_MAX_LEN);
        assert_eq!(out, vec![0x04u8.wrapping_sub(35)]);
        assert_eq!(Stage::arith_steps(1), 70);
    }

    #[test]
    fn havoc_is_reproducible() {
        let a = mutate(&[4], &mut rng(7), Stage::Havoc, DEFAULT_MAX_LEN);
        let b = mutate(&[4], &mut rng(7), Stage::Havoc, DEFAULT_MAX_LEN);
        assert_eq!(a, b);
    }

    #[test]
    fn count_classes() {
        let classes: Vec<u8> = [1u8, 2, 3, 4, 7, 8, 15, 16, 31, 32, 127, 128, 255]
            .iter()
            .map(|&c| count_class(c).trailing_zeros() as u8)
            .collect();
        assert_eq!(classes, vec![0, 1, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7]);
    }

    #[test]
    fn loop_hit_counts_change_signature() {
        let trace = |n: usize| {
            let mut events = vec![Event::Block(1)];
            events.extend(std::iter::repeat(Event::Block(2)).take(n));
            Trace::new(events, Terminal::Exit(0))
        };
        let mut map = CoverageMap::default();
        let mut virgin = VirginMap::default();
        assert!(virgin.admit(&map.signature_of(&trace(2))));
        assert!(!virgin.admit(&map.signature_of(&trace(2))));
        // Repeating 2->2 more often moves the self-edge into a new class.
        assert!(virgin.admit(&map.signature_of(&trace(9))));
        assert!(!virgin.admit(&map.signature_of(&trace(10))));
    }

    #[test]
    fn m1_campaign_is_deterministic_and_mixed() {
        let spec = mocks::m1();
        let run = || {
            let mut d = Dataset::new("m1", "aflcem", 1);
            AflCem::default()
                .run(&spec, &[4], Budget::Execs(2000), 1, &mut d)
                .unwrap();
            d
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        assert!(a.samples()[0].verdict.is_crash());
        assert!(a.samples().iter().any(|s| s.verdict.kind == VerdictKind::NonCrash));
        assert!(a.samples().windows(2).all(|w| w[0].born_at <= w[1].born_at));
    }

    #[test]
    fn noncrash_appears_within_256_execs() {
        let spec = mocks::m1();
        let mut d = Dataset::new("m1", "aflcem", 1);
        AflCem::default()
            .run(&spec, &[4], Budget::Execs(256), 9, &mut d)
            .unwrap();
        assert!(d.samples().iter().any(|s| s.verdict.kind == VerdictKind::NonCrash));
    }

    #[test]
    fn seed_must_crash() {
        let spec = mocks::m1();
        let mut d = Dataset::new("m1", "aflcem", 1);
        let err = AflCem::default()
            .run(&spec, &[0], Budget::Execs(100), 1, &mut d)
            .unwrap_err();
        assert!(matches!(err, AugmentError::SeedNotCrashing(_)));
        assert!(d.is_empty());
        let err = AflCem::default()
            .run(&spec, &[4], Budget::Execs(0), 1, &mut d)
            .unwrap_err();
        assert!(matches!(err, AugmentError::BudgetZero));
    }

    #[test]
    fn queue_holds_only_crashers_and_coverage_grows() {
        let spec = mocks::two_branch();
        let mut d = Dataset::new("two", "aflcem", 3);
        let report = AflCem::default()
            .run_campaign(&spec, &spec.seeds[0].load().unwrap(), Budget::Execs(3000), 3, &mut d)
            .unwrap();
        for entry in &report.queue {
            assert!(crate::harness::execute(&spec, &entry.input, std::time::Duration::from_secs(1))
                .unwrap()
                .verdict
                .is_crash());
        }
        assert!(report.coverage_growth.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn mutants_respect_length_bounds(
            input in prop::collection::vec(any::<u8>(), 0..64),
            seed in any::<u64>(),
            max_len in 1usize..80,
        ) {
            let out = mutate(&input, &mut rng(seed), Stage::Havoc, max_len);
            prop_assert!(!out.is_empty());
            prop_assert!(out.len() <= max_len);
        }
    }
}
