//! Predicate-based extraction in the style of Aurora.
//!
//! For each block site we try "was executed" and "hit at least τ times";
//! for each value site "some recorded value ≥ τ" and, for sites with few
//! distinct values, "some recorded value == k". A predicate is scored by
//! balanced accuracy against the crash label, taking whichever polarity
//! scores higher, and a location scores as its best predicate.
//!
//! Value predicates hold when any value recorded at the site in that run
//! satisfies them; a run that never records the site satisfies neither.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use super::{class_sizes, ExtractError, Extractor};
use crate::manifest::TargetSpec;
use crate::model::{BlockSite, Dataset, Location, Ranking, Sample};
use crate::trace::Event;

/// Largest number of distinct values for which `ValueEQ` predicates are
/// generated.
pub const MAX_EQ_VALUES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    Block,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Form {
    Executed,
    HitCountGE(u64),
    ValueGE(i64),
    ValueEQ(i64),
}

impl Form {
    pub fn name(&self) -> &'static str {
        match self {
            Form::Executed => "executed",
            Form::HitCountGE(_) => "hit_count_ge",
            Form::ValueGE(_) => "value_ge",
            Form::ValueEQ(_) => "value_eq",
        }
    }

    pub fn threshold(&self) -> Option<i128> {
        match *self {
            Form::Executed => None,
            Form::HitCountGE(t) => Some(t as i128),
            Form::ValueGE(t) | Form::ValueEQ(t) => Some(t as i128),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    AsIs,
    Negated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub kind: SiteKind,
    pub site: BlockSite,
    pub form: Form,
    pub polarity: Polarity,
}

impl Predicate {
    fn new(kind: SiteKind, site: &BlockSite, form: Form) -> Self {
        Predicate {
            kind,
            site: site.clone(),
            form,
            polarity: Polarity::AsIs,
        }
    }

    /// Evaluates the predicate on one sample by scanning its trace.
    pub fn holds(&self, sample: &Sample) -> bool {
        let id = self.site.id;
        let raw = match (self.kind, self.form) {
            (SiteKind::Block, Form::Executed) => sample.trace.contains_block(id),
            (SiteKind::Block, Form::HitCountGE(t)) => sample.trace.blocks().filter(|&b| b == id).count() as u64 >= t,
            (SiteKind::Value, form) => sample.trace.events.iter().any(|e| match (*e, form) {
                (Event::Value { site, value }, Form::ValueGE(t)) if site == id => value >= t,
                (Event::Value { site, value }, Form::ValueEQ(k)) if site == id => value == k,
                (Event::Value { site, .. }, Form::Executed) if site == id => true,
                _ => false,
            }),
            (SiteKind::Block, _) => false,
        };
        raw != (self.polarity == Polarity::Negated)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.polarity == Polarity::Negated {
            f.write_str("not ")?;
        }
        let what = match self.kind {
            SiteKind::Block => "block",
            SiteKind::Value => "value",
        };
        write!(f, "{} {what} {}", self.form.name(), self.site.id)?;
        if let Some(t) = self.form.threshold() {
            write!(f, " {t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateScore {
    pub predicate: Predicate,
    pub score: f64,
}

/// Balanced accuracy of a predicate satisfied by `sat_crash` of `n_crash`
/// crashing and `sat_non` of `n_non` non-crashing samples, maximised over
/// polarity. Returns the score and the winning polarity.
pub fn balanced_accuracy(sat_crash: usize, n_crash: usize, sat_non: usize, n_non: usize) -> (f64, Polarity) {
    let asis = 0.5 * (sat_crash as f64 / n_crash as f64 + (n_non - sat_non) as f64 / n_non as f64);
    let negated = 0.5 * ((n_crash - sat_crash) as f64 / n_crash as f64 + sat_non as f64 / n_non as f64);
    if negated > asis {
        (negated, Polarity::Negated)
    } else {
        (asis, Polarity::AsIs)
    }
}

/// Smallest integer strictly above `a` and at or below the midpoint of `a`
/// and `b` rounded up; every threshold in `(a, b]` splits the data the same
/// way.
pub fn midpoint(a: i64, b: i64) -> i64 {
    debug_assert!(a < b);
    (a as i128 + (b as i128 - a as i128 + 1) / 2) as i64
}

/// Per-sample observations, gathered once per dataset.
struct Observed {
    crash: bool,
    hits: HashMap<u32, u64>,
    /// Distinct values per value site.
    values: HashMap<u32, BTreeSet<i64>>,
}

fn observe(sample: &Sample) -> Observed {
    let mut hits = HashMap::new();
    let mut values: HashMap<u32, BTreeSet<i64>> = HashMap::new();
    for event in &sample.trace.events {
        match *event {
            Event::Block(id) => *hits.entry(id).or_insert(0) += 1,
            Event::Value { site, value } => {
                values.entry(site).or_default().insert(value);
            }
        }
    }
    Observed {
        crash: sample.verdict.is_crash(),
        hits,
        values,
    }
}

/// Counts of crashing and non-crashing samples whose key is `>= t`, for
/// every `t` in `thresholds`.
fn sweep_ge<T: Ord + Copy>(mut keyed: Vec<(T, bool)>, thresholds: &[T]) -> Vec<(usize, usize)> {
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mut suffix = vec![(0usize, 0usize); keyed.len() + 1];
    for i in (0..keyed.len()).rev() {
        let (c, n) = suffix[i + 1];
        suffix[i] = if keyed[i].1 { (c + 1, n) } else { (c, n + 1) };
    }
    thresholds
        .iter()
        .map(|t| suffix[keyed.partition_point(|(k, _)| k < t)])
        .collect()
}

/// Enumerates and scores every candidate predicate.
pub fn score_all(dataset: &Dataset, spec: &TargetSpec) -> Result<Vec<PredicateScore>, ExtractError> {
    let (n_crash, n_non) = class_sizes(dataset)?;
    let observed: Vec<Observed> = dataset.labelled().map(observe).collect();
    let mut out = Vec::new();
    let mut push = |kind, site: &BlockSite, form, (sat_c, sat_n): (usize, usize)| {
        let (score, polarity) = balanced_accuracy(sat_c, n_crash, sat_n, n_non);
        let mut predicate = Predicate::new(kind, site, form);
        predicate.polarity = polarity;
        out.push(PredicateScore { predicate, score });
    };

    for site in &spec.block_map {
        let counts: Vec<(u64, bool)> = observed
            .iter()
            .map(|o| (o.hits.get(&site.id).copied().unwrap_or(0), o.crash))
            .collect();
        let distinct: BTreeSet<u64> = counts.iter().map(|&(c, _)| c).filter(|&c| c >= 2).collect();
        let mut thresholds = vec![1];
        thresholds.extend(distinct);
        let sats = sweep_ge(counts, &thresholds);
        push(SiteKind::Block, site, Form::Executed, sats[0]);
        for (&t, &sat) in thresholds[1..].iter().zip(&sats[1..]) {
            push(SiteKind::Block, site, Form::HitCountGE(t), sat);
        }
    }

    for site in &spec.value_map {
        let mut distinct = BTreeSet::new();
        let mut maxima = Vec::new();
        for o in &observed {
            if let Some(vals) = o.values.get(&site.id) {
                distinct.extend(vals.iter().copied());
                maxima.push((*vals.last().expect("non-empty value set"), o.crash));
            }
        }
        let distinct: Vec<i64> = distinct.into_iter().collect();
        // The smallest value separates "recorded at all" from "never recorded".
        let thresholds: Vec<i64> = distinct
            .first()
            .copied()
            .into_iter()
            .chain(distinct.windows(2).map(|w| midpoint(w[0], w[1])))
            .collect();
        for (&t, sat) in thresholds.iter().zip(sweep_ge(maxima, &thresholds)) {
            push(SiteKind::Value, site, Form::ValueGE(t), sat);
        }
        if distinct.len() <= MAX_EQ_VALUES {
            for &k in &distinct {
                let mut sat = (0, 0);
                for o in &observed {
                    if o.values.get(&site.id).is_some_and(|v| v.contains(&k)) {
                        if o.crash {
                            sat.0 += 1;
                        } else {
                            sat.1 += 1;
                        }
                    }
                }
                push(SiteKind::Value, site, Form::ValueEQ(k), sat);
            }
        }
    }
    Ok(out)
}

/// The candidate predicates of `dataset`, all with `AsIs` polarity.
pub fn synthesize(dataset: &Dataset, spec: &TargetSpec) -> Result<Vec<Predicate>, ExtractError> {
    Ok(score_all(dataset, spec)?
        .into_iter()
        .map(|mut s| {
            s.predicate.polarity = Polarity::AsIs;
            s.predicate
        })
        .collect())
}

/// Scores one predicate by evaluating it on every labelled sample. The
/// returned predicate carries the better polarity.
pub fn score_predicate(predicate: &Predicate, dataset: &Dataset) -> Result<PredicateScore, ExtractError> {
    let (n_crash, n_non) = class_sizes(dataset)?;
    let mut asis = predicate.clone();
    asis.polarity = Polarity::AsIs;
    let (mut sat_c, mut sat_n) = (0, 0);
    for s in dataset.labelled() {
        if asis.holds(s) {
            if s.verdict.is_crash() {
                sat_c += 1;
            } else {
                sat_n += 1;
            }
        }
    }
    let (score, polarity) = balanced_accuracy(sat_c, n_crash, sat_n, n_non);
    asis.polarity = polarity;
    Ok(PredicateScore { predicate: asis, score })
}

/// Each location scores as its best predicate.
pub fn rank_locations(scores: &[PredicateScore], cap: usize) -> Result<Ranking, ExtractError> {
    let mut best: BTreeMap<&Location, f64> = BTreeMap::new();
    for s in scores {
        let slot = best.entry(&s.predicate.site.location).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(s.score);
    }
    let scored = best.into_iter().map(|(l, s)| (l.clone(), s)).collect();
    Ok(Ranking::from_scores(scored, cap)?)
}

/// Predicate scores sorted for reporting: descending score, then location,
/// then form.
pub fn sorted_for_report(mut scores: Vec<PredicateScore>) -> Vec<PredicateScore> {
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.predicate.site.location.cmp(&b.predicate.site.location))
            .then_with(|| a.predicate.kind.cmp(&b.predicate.kind))
            .then_with(|| a.predicate.site.id.cmp(&b.predicate.site.id))
            .then_with(|| a.predicate.form.cmp(&b.predicate.form))
    });
    scores
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Aurora;

impl Aurora {
    /// The ranking together with every scored predicate.
    pub fn rank_with_predicates(
        &self,
        dataset: &Dataset,
        spec: &TargetSpec,
        cap: usize,
    ) -> Result<(Ranking, Vec<PredicateScore>), ExtractError> {
        let scores = score_all(dataset, spec)?;
        let ranking = rank_locations(&scores, cap)?;
        Ok((ranking, scores))
    }
}

impl Extractor for Aurora {
    fn id(&self) -> &'static str {
        "aurora"
    }

    fn rank(&self, dataset: &Dataset, spec: &TargetSpec, cap: usize) -> Result<Ranking, ExtractError> {
        rank_locations(&score_all(dataset, spec)?, cap)
    }
}
