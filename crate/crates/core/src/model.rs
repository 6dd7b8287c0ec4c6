//! Shared domain types: locations, samples, datasets, rankings, and the
//! measurements every experiment reports (rank of the ground truth, the
//! snapshot schedule, and dataset balance).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::trace::{Terminal, Trace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("location file must be non-empty")]
    EmptyFile,
    #[error("location line must be >= 1")]
    ZeroLine,
    #[error("expected `<file>:<line>`, got {0:?}")]
    BadLocation(String),
    #[error("ground truth needs at least one candidate location")]
    EmptyGroundTruth,
    #[error("ranking has {len} entries but cap is {cap}")]
    OverCap { len: usize, cap: usize },
    #[error("ranking cap must be positive")]
    ZeroCap,
    #[error("ranking score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error("ranking is not sorted by descending score at position {0}")]
    Unsorted(usize),
}

/// A source coordinate. Root-cause ground truth and every ranking are
/// expressed at line granularity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    file: String,
    line: u32,
}

impl Location {
    pub fn new(file: impl Into<String>, line: u32) -> Result<Self, ModelError> {
        let file = file.into();
        if file.is_empty() {
            return Err(ModelError::EmptyFile);
        }
        if line == 0 {
            return Err(ModelError::ZeroLine);
        }
        Ok(Location { file, line })
    }

    pub fn file(&self) -> &str {
        &self.file
    }

    pub fn line(&self) -> u32 {
        self.line
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

impl FromStr for Location {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (file, line) = s
            .rsplit_once(':')
            .ok_or_else(|| ModelError::BadLocation(s.to_owned()))?;
        let line = line
            .parse()
            .map_err(|_| ModelError::BadLocation(s.to_owned()))?;
        Location::new(file, line)
    }
}

/// A traced program point. Block sites and value sites use separate id
/// spaces; both resolve to a [`Location`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockSite {
    pub id: u32,
    pub location: Location,
    /// Whether reaching this block depends on a branch outcome.
    pub conditional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerdictKind {
    Crash,
    NonCrash,
    Timeout,
    HarnessError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub signal: Option<i32>,
    pub exit_code: Option<i32>,
}

impl Verdict {
    pub fn crash_signal(signal: i32) -> Self {
        Verdict {
            kind: VerdictKind::Crash,
            signal: Some(signal),
            exit_code: None,
        }
    }

    pub fn crash_exit(code: i32) -> Self {
        Verdict {
            kind: VerdictKind::Crash,
            signal: None,
            exit_code: Some(code),
        }
    }

    pub fn non_crash(code: i32) -> Self {
        Verdict {
            kind: VerdictKind::NonCrash,
            signal: None,
            exit_code: Some(code),
        }
    }

    pub fn timeout() -> Self {
        Verdict {
            kind: VerdictKind::Timeout,
            signal: None,
            exit_code: None,
        }
    }

    pub fn harness_error() -> Self {
        Verdict {
            kind: VerdictKind::HarnessError,
            signal: None,
            exit_code: None,
        }
    }

    pub fn is_crash(&self) -> bool {
        self.kind == VerdictKind::Crash
    }

    /// Crash and NonCrash samples take part in extraction; the others are
    /// kept only for audit.
    pub fn is_labelled(&self) -> bool {
        matches!(self.kind, VerdictKind::Crash | VerdictKind::NonCrash)
    }

    /// The terminal trace line this verdict corresponds to, if any.
    pub fn terminal(&self) -> Option<Terminal> {
        match (self.kind, self.signal, self.exit_code) {
            (VerdictKind::Crash, Some(sig), _) => Some(Terminal::Signal(sig)),
            (VerdictKind::Crash | VerdictKind::NonCrash, None, Some(code)) => {
                Some(Terminal::Exit(code))
            }
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.signal, self.exit_code) {
            (VerdictKind::Crash, Some(sig), _) => write!(f, "crash:S{sig}"),
            (VerdictKind::Crash, None, Some(code)) => write!(f, "crash:X{code}"),
            (VerdictKind::NonCrash, _, Some(code)) => write!(f, "noncrash:X{code}"),
            (VerdictKind::Timeout, ..) => f.write_str("timeout"),
            _ => f.write_str("harness-error"),
        }
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unrecognized verdict {s:?}");
        match s {
            "timeout" => return Ok(Verdict::timeout()),
            "harness-error" => return Ok(Verdict::harness_error()),
            _ => {}
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let number = |prefix: char| -> Result<i32, String> {
            rest.strip_prefix(prefix)
                .and_then(|n| n.parse().ok())
                .ok_or_else(bad)
        };
        match (kind, rest.chars().next()) {
            ("crash", Some('S')) => Ok(Verdict::crash_signal(number('S')?)),
            ("crash", Some('X')) => Ok(Verdict::crash_exit(number('X')?)),
            ("noncrash", Some('X')) => Ok(Verdict::non_crash(number('X')?)),
            _ => Err(bad()),
        }
    }
}

/// One executed input.
///
/// `born_at` is measured in campaign ticks: milliseconds since augmentation
/// start under a wall-clock budget, or the 1-based execution ordinal under an
/// execution-count budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub input: Vec<u8>,
    pub trace: Trace,
    pub verdict: Verdict,
    pub born_at: u64,
}

/// Anything an augmenter can stream samples into.
pub trait SampleSink {
    fn record(&mut self, sample: Sample);
}

/// Append-only collection of samples produced by one augmentation campaign.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub target_id: String,
    pub augmenter_id: String,
    pub rng_seed: u64,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(target_id: impl Into<String>, augmenter_id: impl Into<String>, rng_seed: u64) -> Self {
        Dataset {
            target_id: target_id.into(),
            augmenter_id: augmenter_id.into(),
            rng_seed,
            samples: Vec::new(),
        }
    }

    /// Appends a sample. A `born_at` earlier than the last sample's is raised
    /// to it so the sequence stays non-decreasing.
    pub fn push(&mut self, mut sample: Sample) {
        if let Some(last) = self.samples.last() {
            sample.born_at = sample.born_at.max(last.born_at);
        }
        self.samples.push(sample);
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples eligible for extraction statistics.
    pub fn labelled(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(|s| s.verdict.is_labelled())
    }

    /// A frozen copy holding exactly the samples born at or before `tick`.
    pub fn snapshot(&self, tick: u64) -> Dataset {
        let end = self.samples.partition_point(|s| s.born_at <= tick);
        Dataset {
            target_id: self.target_id.clone(),
            augmenter_id: self.augmenter_id.clone(),
            rng_seed: self.rng_seed,
            samples: self.samples[..end].to_vec(),
        }
    }
}

impl SampleSink for Dataset {
    fn record(&mut self, sample: Sample) {
        self.push(sample);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Balance {
    pub n_crash: usize,
    pub n_noncrash: usize,
    pub ratio: f64,
}

pub fn dataset_balance(dataset: &Dataset) -> Balance {
    let n_crash = dataset.labelled().filter(|s| s.verdict.is_crash()).count();
    let n_noncrash = dataset.labelled().count() - n_crash;
    Balance {
        n_crash,
        n_noncrash,
        ratio: n_crash as f64 / n_noncrash.max(1) as f64,
    }
}

/// Every location at which a valid fix could be applied, with a short note
/// for each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    candidates: BTreeMap<Location, String>,
}

impl GroundTruth {
    pub fn new(candidates: impl IntoIterator<Item = (Location, String)>) -> Result<Self, ModelError> {
        let candidates: BTreeMap<_, _> = candidates.into_iter().collect();
        if candidates.is_empty() {
            return Err(ModelError::EmptyGroundTruth);
        }
        Ok(GroundTruth { candidates })
    }

    pub fn contains(&self, location: &Location) -> bool {
        self.candidates.contains_key(location)
    }

    pub fn locations(&self) -> impl Iterator<Item = &Location> + '_ {
        self.candidates.keys()
    }

    pub fn note(&self, location: &Location) -> Option<&str> {
        self.candidates.get(location).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Root-cause candidates in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    entries: Vec<(Location, f64)>,
    cap: usize,
}

impl Ranking {
    pub fn new(entries: Vec<(Location, f64)>, cap: usize) -> Result<Self, ModelError> {
        if cap == 0 {
            return Err(ModelError::ZeroCap);
        }
        if entries.len() > cap {
            return Err(ModelError::OverCap {
                len: entries.len(),
                cap,
            });
        }
        for (i, (_, score)) in entries.iter().enumerate() {
            if !score.is_finite() {
                return Err(ModelError::NonFiniteScore(i));
            }
            if i > 0 && entries[i - 1].1 < *score {
                return Err(ModelError::Unsorted(i));
            }
        }
        Ok(Ranking { entries, cap })
    }

    /// Sorts scored locations by descending score, breaking ties by
    /// `(file, line)`, and keeps the first `cap`.
    pub fn from_scores(mut scored: Vec<(Location, f64)>, cap: usize) -> Result<Self, ModelError> {
        if let Some(i) = scored.iter().position(|(_, s)| !s.is_finite()) {
            return Err(ModelError::NonFiniteScore(i));
        }
        scored.sort_by(|(la, sa), (lb, sb)| sb.total_cmp(sa).then_with(|| la.cmp(lb)));
        scored.truncate(cap);
        Ranking::new(scored, cap)
    }

    pub fn entries(&self) -> &[(Location, f64)] {
        &self.entries
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// 1-based rank of the best-scored ground-truth candidate, or `None` when no
/// candidate appears in the ranking.
///
/// Ties are pessimistic: every entry sharing the ground truth's score counts
/// as ranked ahead of it.
pub fn rank_of_ground_truth(ranking: &Ranking, ground_truth: &GroundTruth) -> Option<usize> {
    let best = ranking
        .entries
        .iter()
        .filter(|(loc, _)| ground_truth.contains(loc))
        .map(|(_, score)| *score)
        .max_by(f64::total_cmp)?;
    Some(ranking.entries.iter().filter(|(_, s)| *s >= best).count())
}

/// Minute marks at which the first snapshots are taken; after these, one
/// snapshot per hour.
pub const EARLY_SNAPSHOT_MINUTES: [u64; 4] = [5, 15, 30, 45];

/// Snapshot points for a campaign of `limit` ticks, where one schedule
/// minute lasts `minute` ticks. Points are at 5, 15, 30, and 45 minutes and
/// then every hour, up to and including `limit`. A limit shorter than the
/// first point yields a single snapshot at the limit.
pub fn snapshot_schedule(limit: u64, minute: u64) -> Vec<u64> {
    assert!(limit > 0, "snapshot limit must be positive");
    assert!(minute > 0, "schedule minute must be positive");
    let hourly = (1u64..).map(|h| h * 60);
    let points: Vec<u64> = EARLY_SNAPSHOT_MINUTES
        .into_iter()
        .chain(hourly)
        .map(|m| m.saturating_mul(minute))
        .take_while(|&t| t <= limit)
        .collect();
    if points.is_empty() {
        vec![limit]
    } else {
        points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn loc(line: u32) -> Location {
        Location::new("m.c", line).unwrap()
    }

    fn gt(lines: &[u32]) -> GroundTruth {
        GroundTruth::new(lines.iter().map(|&l| (loc(l), String::new()))).unwrap()
    }

    #[test]
    fn location_validation() {
        assert_eq!(Location::new("", 1), Err(ModelError::EmptyFile));
        assert_eq!(Location::new("a.c", 0), Err(ModelError::ZeroLine));
        let parsed: Location = "src/a:b.c:12".parse().unwrap();
        assert_eq!(parsed.file(), "src/a:b.c");
        assert_eq!(parsed.line(), 12);
        assert!("a.c".parse::<Location>().is_err());
    }

    #[test]
    fn verdict_tokens_round_trip() {
        for v in [
            Verdict::crash_signal(11),
            Verdict::crash_exit(134),
            Verdict::non_crash(0),
            Verdict::non_crash(-3),
            Verdict::timeout(),
            Verdict::harness_error(),
        ] {
            assert_eq!(v.to_string().parse::<Verdict>().unwrap(), v);
        }
        assert!("crash:Q1".parse::<Verdict>().is_err());
    }

    #[test]
    fn rank_breaks_ties_pessimistically() {
        let ranking = Ranking::new(vec![(loc(3), 0.9), (loc(7), 0.9), (loc(1), 0.5)], 200).unwrap();
        assert_eq!(rank_of_ground_truth(&ranking, &gt(&[7])), Some(2));
        // The ground truth listed first in its tie group is still ranked last.
        assert_eq!(rank_of_ground_truth(&ranking, &gt(&[3])), Some(2));
        assert_eq!(rank_of_ground_truth(&ranking, &gt(&[1])), Some(3));
    }

    #[test]
    fn rank_unique_maximum_and_absent() {
        let ranking = Ranking::new(vec![(loc(7), 1.0), (loc(3), 0.2)], 200).unwrap();
        assert_eq!(rank_of_ground_truth(&ranking, &gt(&[7])), Some(1));
        let ranking = Ranking::new(vec![(loc(3), 0.9)], 200).unwrap();
        assert_eq!(rank_of_ground_truth(&ranking, &gt(&[7])), None);
    }

    #[test]
    fn best_ground_truth_member_counts() {
        let ranking = Ranking::new(vec![(loc(1), 0.9), (loc(2), 0.8), (loc(3), 0.1)], 200).unwrap();
        assert_eq!(rank_of_ground_truth(&ranking, &gt(&[3, 2])), Some(2));
    }

    #[test]
    fn ranking_rejects_bad_shapes() {
        assert_eq!(
            Ranking::new(vec![(loc(1), 0.1), (loc(2), 0.5)], 5),
            Err(ModelError::Unsorted(1))
        );
        assert_eq!(
            Ranking::new(vec![(loc(1), f64::NAN)], 5),
            Err(ModelError::NonFiniteScore(0))
        );
        assert_eq!(
            Ranking::new(vec![(loc(1), 0.1), (loc(2), 0.0)], 1),
            Err(ModelError::OverCap { len: 2, cap: 1 })
        );
        assert_eq!(Ranking::new(vec![], 0), Err(ModelError::ZeroCap));
    }

    #[test]
    fn from_scores_sorts_and_truncates() {
        let r = Ranking::from_scores(vec![(loc(9), 0.5), (loc(2), 0.5), (loc(4), 0.7)], 2).unwrap();
        assert_eq!(r.entries(), &[(loc(4), 0.7), (loc(2), 0.5)]);
    }

    #[test]
    fn ground_truth_is_non_empty() {
        assert_eq!(GroundTruth::new(vec![]), Err(ModelError::EmptyGroundTruth));
    }

    const MIN: u64 = 60_000;

    #[test]
    fn schedule_four_hours() {
        let minutes: Vec<u64> = snapshot_schedule(240 * MIN, MIN).iter().map(|t| t / MIN).collect();
        assert_eq!(minutes, vec![5, 15, 30, 45, 60, 120, 180, 240]);
    }

    #[test]
    fn schedule_twelve_hours() {
        let minutes: Vec<u64> = snapshot_schedule(720 * MIN, MIN).iter().map(|t| t / MIN).collect();
        let mut expected = vec![5, 15, 30, 45];
        expected.extend((1..=12).map(|h| h * 60));
        assert_eq!(minutes, expected);
    }

    #[test]
    fn schedule_shorter_than_first_point() {
        assert_eq!(snapshot_schedule(3 * MIN, MIN), vec![3 * MIN]);
    }

    #[test]
    fn schedule_scaled_to_executions() {
        // One schedule minute = 10 executions, 200-execution budget.
        assert_eq!(snapshot_schedule(200, 10), vec![50, 150]);
    }

    fn sample(verdict: Verdict, born_at: u64) -> Sample {
        Sample {
            input: vec![],
            trace: Trace::default(),
            verdict,
            born_at,
        }
    }

    #[test]
    fn balance_examples() {
        let mut d = Dataset::new("t", "a", 0);
        assert_eq!(dataset_balance(&d), Balance { n_crash: 0, n_noncrash: 0, ratio: 0.0 });
        for i in 0..10 {
            d.push(sample(Verdict::crash_signal(11), i));
        }
        for i in 0..40 {
            d.push(sample(Verdict::non_crash(0), 10 + i));
        }
        d.push(sample(Verdict::timeout(), 60));
        d.push(sample(Verdict::harness_error(), 61));
        assert_eq!(dataset_balance(&d), Balance { n_crash: 10, n_noncrash: 40, ratio: 0.25 });

        let mut crashes = Dataset::new("t", "a", 0);
        for i in 0..7 {
            crashes.push(sample(Verdict::crash_exit(1), i));
        }
        assert_eq!(dataset_balance(&crashes), Balance { n_crash: 7, n_noncrash: 0, ratio: 7.0 });
    }

    #[test]
    fn snapshot_takes_born_at_prefix() {
        let mut d = Dataset::new("t", "a", 0);
        for t in [1, 2, 2, 5, 9] {
            d.push(sample(Verdict::non_crash(0), t));
        }
        assert_eq!(d.snapshot(2).len(), 3);
        assert_eq!(d.snapshot(0).len(), 0);
        assert_eq!(d.snapshot(100).len(), 5);
        // born_at never goes backwards.
        d.push(sample(Verdict::non_crash(0), 3));
        assert_eq!(d.samples().last().unwrap().born_at, 9);
    }

    proptest! {
        #[test]
        fn schedule_strictly_increasing_and_bounded(limit in 1u64..100_000, minute in 1u64..500) {
            let points = snapshot_schedule(limit, minute);
            prop_assert!(!points.is_empty());
            prop_assert!(points.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(points.iter().all(|&p| p <= limit));
        }

        #[test]
        fn rank_invariant_under_monotone_transform(
            scores in prop::collection::vec(0u32..20, 1..30),
            gt_idx in prop::collection::vec(any::<prop::sample::Index>(), 1..3),
        ) {
            let scored: Vec<_> = scores.iter().enumerate()
                .map(|(i, &s)| (loc(i as u32 + 1), s as f64 / 20.0)).collect();
            let truth = gt(&gt_idx.iter().map(|ix| ix.index(scores.len()) as u32 + 1).collect::<Vec<_>>());
            let base = Ranking::from_scores(scored.clone(), 1000).unwrap();
            let transformed = Ranking::from_scores(
                scored.iter().map(|(l, s)| (l.clone(), (3.0 * s).exp() - 7.0)).collect(), 1000).unwrap();
            prop_assert_eq!(rank_of_ground_truth(&base, &truth), rank_of_ground_truth(&transformed, &truth));
        }

        #[test]
        fn rank_ignores_order_within_tie_group(
            scores in prop::collection::vec(0u32..5, 2..20),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let scored: Vec<_> = scores.iter().enumerate()
                .map(|(i, &s)| (loc(i as u32 + 1), s as f64)).collect();
            let truth = gt(&[1]);
            let mut entries = Ranking::from_scores(scored, 1000).unwrap().entries().to_vec();
            let reference = rank_of_ground_truth(&Ranking::new(entries.clone(), 1000).unwrap(), &truth);
            // Shuffle every tie group in place.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut start = 0;
            while start < entries.len() {
                let end = start + entries[start..].iter().take_while(|(_, s)| *s == entries[start].1).count();
                entries[start..end].shuffle(&mut rng);
                start = end;
            }
            let shuffled = rank_of_ground_truth(&Ranking::new(entries, 1000).unwrap(), &truth);
            prop_assert_eq!(reference, shuffled);
        }
    }
}
