//! Test helpers: seed-neighbourhood dataset generation and brute-force
//! extraction oracles that work from the on-disk dataset files.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rcab_core::harness::Runner;
use rcab_core::manifest::TargetSpec;
use rcab_core::model::{Dataset, Location};

/// Copies `seed`, pads it with up to `pad` random bytes, then overwrites one
/// or two random positions with random bytes.
pub fn neighbour(seed: &[u8], pad: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut input = seed.to_vec();
    for _ in 0..rng.gen_range(0..=pad) {
        input.push(rng.gen());
    }
    if input.is_empty() {
        return input;
    }
    for _ in 0..rng.gen_range(1..=2) {
        let i = rng.gen_range(0..input.len());
        input[i] = rng.gen();
    }
    input
}

/// Runs seed neighbours until exactly `n_crash` crashing and `n_non`
/// non-crashing samples have been collected. The seed itself is the first
/// crashing sample.
pub fn balanced_dataset(spec: &TargetSpec, n_crash: usize, n_non: usize, rng_seed: u64) -> Dataset {
    let seed = spec.seeds[0].load().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut runner = Runner::new(spec).unwrap();
    let mut d = Dataset::new(spec.id.clone(), "neighbourhood", rng_seed);
    let (mut c, mut n) = (0, 0);
    let mut input = seed.clone();
    for attempt in 0..1_000_000u64 {
        if c == n_crash && n == n_non {
            return d;
        }
        let mut s = runner.execute(&input, Duration::from_secs(1));
        s.born_at = attempt + 1;
        let keep = match (s.verdict.is_crash(), s.verdict.is_labelled()) {
            (true, _) if c < n_crash => {
                c += 1;
                true
            }
            (false, true) if n < n_non => {
                n += 1;
                true
            }
            _ => false,
        };
        if keep {
            d.push(s);
        }
        input = neighbour(&seed, 2, &mut rng);
    }
    panic!("{}: could not fill {n_crash}+{n_non} samples (got {c}+{n})", spec.id);
}

/// A labelled sample as read back from disk.
pub struct RawSample {
    pub crash: bool,
    pub blocks: Vec<u32>,
    pub values: Vec<(u32, i64)>,
}

/// Reads `samples.idx` and the trace files directly, keeping only crash and
/// non-crash samples.
pub fn read_raw(dir: &Path) -> Vec<RawSample> {
    let index = fs::read_to_string(dir.join("samples.idx")).unwrap();
    let mut out = Vec::new();
    for line in index.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let crash = if f[2].starts_with("crash:") {
            true
        } else if f[2].starts_with("noncrash:") {
            false
        } else {
            continue;
        };
        let text = fs::read_to_string(dir.join(f[4])).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("RCAB1"));
        let mut s = RawSample {
            crash,
            blocks: Vec::new(),
            values: Vec::new(),
        };
        for l in lines {
            let parts: Vec<&str> = l.split(' ').collect();
            match parts[0] {
                "B" => s.blocks.push(parts[1].parse().unwrap()),
                "V" => s.values.push((parts[1].parse().unwrap(), parts[2].parse().unwrap())),
                "X" | "S" => {}
                other => panic!("unexpected trace line {other:?}"),
            }
        }
        out.push(s);
    }
    out
}

fn block_location(spec: &TargetSpec, id: u32) -> Location {
    spec.block_map.iter().find(|b| b.id == id).unwrap().location.clone()
}

/// Ochiai score of every block location, counted sample by sample.
pub fn ochiai_oracle(spec: &TargetSpec, samples: &[RawSample]) -> BTreeMap<Location, f64> {
    let total_fail = samples.iter().filter(|s| s.crash).count() as f64;
    let mut out = BTreeMap::new();
    for loc in spec.block_map.iter().map(|b| b.location.clone()) {
        let (mut ef, mut ep) = (0.0, 0.0);
        for s in samples {
            if s.blocks.iter().any(|&b| block_location(spec, b) == loc) {
                if s.crash {
                    ef += 1.0;
                } else {
                    ep += 1.0;
                }
            }
        }
        let score = if ef == 0.0 {
            0.0
        } else {
            ef / (total_fail * (ef + ep)).sqrt()
        };
        out.insert(loc, score);
    }
    out
}

fn balanced(sat: impl Fn(&RawSample) -> bool, samples: &[RawSample]) -> f64 {
    let (mut tp, mut fail, mut tn, mut pass) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let v = sat(s);
        if s.crash {
            fail += 1.0;
            tp += v as u8 as f64;
        } else {
            pass += 1.0;
            tn += !v as u8 as f64;
        }
    }
    let asis = 0.5 * (tp / fail + tn / pass);
    let negated = 0.5 * ((fail - tp) / fail + (pass - tn) / pass);
    asis.max(negated)
}

/// Best balanced accuracy per location over every predicate and every
/// integer threshold in the observed range.
pub fn aurora_oracle(spec: &TargetSpec, samples: &[RawSample]) -> BTreeMap<Location, f64> {
    let mut out: BTreeMap<Location, f64> = BTreeMap::new();
    let mut bump = |loc: &Location, score: f64| {
        let e = out.entry(loc.clone()).or_insert(f64::NEG_INFINITY);
        *e = e.max(score);
    };
    for site in &spec.block_map {
        let hits = |s: &RawSample| s.blocks.iter().filter(|&&b| b == site.id).count() as u64;
        let max = samples.iter().map(hits).max().unwrap_or(0);
        for tau in 1..=max + 1 {
            bump(&site.location, balanced(|s| hits(s) >= tau, samples));
        }
    }
    for site in &spec.value_map {
        let vals = |s: &RawSample| -> Vec<i64> {
            s.values.iter().filter(|v| v.0 == site.id).map(|v| v.1).collect()
        };
        let distinct: BTreeSet<i64> = samples.iter().flat_map(vals).collect();
        let (Some(&lo), Some(&hi)) = (distinct.first(), distinct.last()) else {
            continue;
        };
        for tau in lo - 1..=hi + 1 {
            bump(&site.location, balanced(|s| vals(s).iter().any(|&v| v >= tau), samples));
        }
        if distinct.len() <= 16 {
            for &k in &distinct {
                bump(&site.location, balanced(|s| vals(s).contains(&k), samples));
            }
        }
    }
    out
}

/// Pessimistic 1-based rank of the ground truth within the top `cap`
/// locations of `scores`.
pub fn oracle_rank(spec: &TargetSpec, scores: &BTreeMap<Location, f64>, cap: usize) -> Option<usize> {
    let mut sorted: Vec<(&Location, f64)> = scores.iter().map(|(l, &s)| (l, s)).collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    sorted.truncate(cap);
    let best = sorted
        .iter()
        .filter(|(l, _)| spec.ground_truth.contains(l))
        .map(|&(_, s)| s)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))?;
    Some(sorted.iter().filter(|&&(_, s)| s >= best).count())
}

/// Checks that `ranking` lists exactly the top `cap` locations of `oracle`,
/// in descending score order with ties broken by location, and that scores
/// agree to within `tol`.
pub fn ranking_agrees(
    ranking: &rcab_core::model::Ranking,
    oracle: &BTreeMap<Location, f64>,
    cap: usize,
    tol: f64,
) -> Result<(), String> {
    let mut expected: Vec<(&Location, f64)> = oracle.iter().map(|(l, &s)| (l, s)).collect();
    expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    expected.truncate(cap);
    if ranking.len() != expected.len() {
        return Err(format!("ranking has {} entries, oracle {}", ranking.len(), expected.len()));
    }
    for (i, ((loc, score), (want_loc, want))) in ranking.entries().iter().zip(&expected).enumerate() {
        if loc != *want_loc {
            return Err(format!("position {}: {loc} ({score}) vs oracle {want_loc} ({want})", i + 1));
        }
        if (score - want).abs() > tol {
            return Err(format!("{loc}: {score} vs oracle {want}"));
        }
    }
    Ok(())
}

/// A random dataset of at most `max` samples drawn from the neighbourhood of
/// a random built-in mock's seed, together with that mock.
pub fn random_mock_dataset(rng: &mut ChaCha8Rng, max: usize) -> (TargetSpec, Dataset) {
    let specs = [
        rcab_core::mocks::m1(),
        rcab_core::mocks::two_branch(),
        rcab_core::mocks::value_threshold(),
        rcab_core::mocks::imbalanced(),
        rcab_core::mocks::missnull(),
        rcab_core::mocks::wide(60),
    ];
    let spec = specs[rng.gen_range(0..specs.len())].clone();
    let total = rng.gen_range(4..=max);
    let n_crash = rng.gen_range(1..total);
    let d = balanced_dataset(&spec, n_crash, total - n_crash, rng.gen());
    (spec, d)
}
