//! Experiment planning and execution.
//!
//! A bench configuration is a TOML file:
//!
//! ```toml
//! targets = ["m1", "corpus/offbyone/offbyone.manifest"]
//! augmenters = ["aflcem", "concfuzz"]
//! extractors = ["vulnloc", "aurora"]
//! trials = 5                    # default 5
//! budget = "4h"                 # or an execution count such as "2000execs"
//! schedule_scale = "1m"         # length of one schedule minute
//! base_rng = 0                  # trial i uses rng seed base_rng + i
//! cap = 200                     # candidate list length
//! workers = 3                   # default: physical cores - 1
//! probes_per_byte = 8
//! extraction_timeout = "30m"    # optional; slower extractions report NODATA
//! max_snapshot_samples = 500000 # optional; larger snapshots report NODATA
//! out = "bench-out"
//!
//! [seeds]                       # optional per-target seed lists
//! m1 = ["hex:04", "hex:0400"]
//! ```
//!
//! Targets are built-in mock ids or manifest paths relative to the config
//! file. Seeds default to those listed in each manifest.
//!
//! `schedule_scale` must use the same unit as `budget`. Without it a wall
//! budget uses real minutes and an execution budget maps the whole budget
//! onto four schedule hours (one minute = budget / 240 executions).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::augment::{self, Budget};
use crate::extract;
use crate::manifest::{load_manifest, ManifestError, SeedRef, TargetSpec};
use crate::mocks;
use crate::model::snapshot_schedule;

mod run;

pub use run::{run_bench, run_plan, BenchOutput};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("bad config: {0}")]
    Config(String),
    #[error("target {name}: {source}")]
    Manifest { name: String, source: ManifestError },
    #[error("unknown target {0:?} (not a built-in mock and no such manifest)")]
    UnknownTarget(String),
    #[error("unknown augmenter {0:?}")]
    UnknownAugmenter(String),
    #[error("unknown extractor {0:?}")]
    UnknownExtractor(String),
    #[error("writing results: {0}")]
    Csv(#[from] csv::Error),
}

fn default_trials() -> u32 {
    5
}

fn default_cap() -> usize {
    extract::DEFAULT_CAP
}

fn default_probes() -> u32 {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub targets: Vec<String>,
    pub augmenters: Vec<String>,
    pub extractors: Vec<String>,
    #[serde(default)]
    pub seeds: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    pub budget: String,
    pub schedule_scale: Option<String>,
    #[serde(default)]
    pub base_rng: u64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    pub workers: Option<usize>,
    #[serde(default = "default_probes")]
    pub probes_per_byte: u32,
    pub extraction_timeout: Option<String>,
    pub max_snapshot_samples: Option<usize>,
    pub out: Option<PathBuf>,
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }
}

/// One seed of one target.
#[derive(Debug, Clone)]
pub struct PlannedSeed {
    pub seed: SeedRef,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct PlannedTarget {
    pub spec: TargetSpec,
    pub seeds: Vec<PlannedSeed>,
}

/// The full experiment matrix, validated and with every input loaded.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub targets: Vec<PlannedTarget>,
    pub augmenters: Vec<String>,
    pub extractors: Vec<String>,
    pub trials: u32,
    pub budget: Budget,
    /// Campaign ticks per schedule minute.
    pub minute: u64,
    pub base_rng: u64,
    pub cap: usize,
    pub workers: usize,
    pub probes_per_byte: u32,
    pub extraction_timeout: Option<Duration>,
    pub max_snapshot_samples: Option<usize>,
}

/// Coordinates of one augmentation campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignKey {
    pub target: usize,
    pub seed: usize,
    pub augmenter: usize,
    pub trial: u32,
}

pub fn default_workers() -> usize {
    num_cpus::get_physical().saturating_sub(1).max(1)
}

/// A built-in mock id, or a manifest path relative to `base`.
pub fn resolve_target(name: &str, base: &Path) -> Result<TargetSpec, BenchError> {
    if let Some(spec) = mocks::by_id(name) {
        return Ok(spec);
    }
    let path = base.join(name);
    if !path.is_file() {
        return Err(BenchError::UnknownTarget(name.to_owned()));
    }
    load_manifest(&path).map_err(|source| BenchError::Manifest {
        name: name.to_owned(),
        source,
    })
}

fn nonempty<T>(items: &[T], what: &str) -> Result<(), BenchError> {
    if items.is_empty() {
        return Err(BenchError::Config(format!("`{what}` must not be empty")));
    }
    Ok(())
}

/// Validates a configuration and loads every target and seed. Relative paths
/// resolve against `base`.
pub fn plan(config: &BenchConfig, base: &Path) -> Result<ExperimentPlan, BenchError> {
    nonempty(&config.targets, "targets")?;
    nonempty(&config.augmenters, "augmenters")?;
    nonempty(&config.extractors, "extractors")?;
    if config.trials == 0 {
        return Err(BenchError::Config("`trials` must be at least 1".into()));
    }
    if config.cap == 0 {
        return Err(BenchError::Config("`cap` must be positive".into()));
    }
    if let Some(a) = config.augmenters.iter().find(|a| augment::by_id(a, 1).is_none()) {
        return Err(BenchError::UnknownAugmenter(a.clone()));
    }
    if let Some(e) = config.extractors.iter().find(|e| extract::by_id(e).is_none()) {
        return Err(BenchError::UnknownExtractor(e.clone()));
    }

    let budget: Budget = config.budget.parse().map_err(BenchError::Config)?;
    if budget.is_zero() {
        return Err(BenchError::Config("`budget` must be positive".into()));
    }
    let minute = match &config.schedule_scale {
        Some(s) => {
            let scale: Budget = s.parse().map_err(BenchError::Config)?;
            if scale.is_execs() != budget.is_execs() {
                return Err(BenchError::Config(
                    "`schedule_scale` must use the same unit as `budget`".into(),
                ));
            }
            scale.ticks()
        }
        None if budget.is_execs() => budget.ticks() / 240,
        None => 60_000,
    };
    let minute = minute.max(1);

    let mut targets = Vec::new();
    for name in &config.targets {
        let spec = resolve_target(name, base)?;
        if targets.iter().any(|t: &PlannedTarget| t.spec.id == spec.id) {
            return Err(BenchError::Config(format!("target {} listed twice", spec.id)));
        }
        let refs = match config.seeds.get(&spec.id) {
            Some(list) => list
                .iter()
                .map(|s| SeedRef::parse(s, base).map_err(BenchError::Config))
                .collect::<Result<Vec<_>, _>>()?,
            None => spec.seeds.clone(),
        };
        nonempty(&refs, &format!("seeds.{}", spec.id))?;
        let mut seeds = Vec::new();
        for seed in refs {
            let bytes = seed.load().map_err(|source| BenchError::Io {
                path: PathBuf::from(&seed.id),
                source,
            })?;
            if seeds.iter().any(|s: &PlannedSeed| s.seed.id == seed.id) {
                return Err(BenchError::Config(format!("seed id {} repeated for {}", seed.id, spec.id)));
            }
            seeds.push(PlannedSeed { seed, bytes });
        }
        targets.push(PlannedTarget { spec, seeds });
    }
    if let Some(unused) = config.seeds.keys().find(|k| !targets.iter().any(|t| &t.spec.id == *k)) {
        return Err(BenchError::Config(format!("[seeds] names unknown target {unused}")));
    }

    let parse_duration = |s: &String| {
        humantime::parse_duration(s).map_err(|e| BenchError::Config(format!("bad extraction_timeout: {e}")))
    };

    Ok(ExperimentPlan {
        targets,
        augmenters: config.augmenters.clone(),
        extractors: config.extractors.clone(),
        trials: config.trials,
        budget,
        minute,
        base_rng: config.base_rng,
        cap: config.cap,
        workers: config.workers.unwrap_or_else(default_workers).max(1),
        probes_per_byte: config.probes_per_byte,
        extraction_timeout: config.extraction_timeout.as_ref().map(parse_duration).transpose()?,
        max_snapshot_samples: config.max_snapshot_samples,
    })
}

impl ExperimentPlan {
    /// Snapshot points in campaign ticks.
    pub fn schedule(&self) -> Vec<u64> {
        snapshot_schedule(self.budget.ticks(), self.minute)
    }

    /// Every campaign in plan order: target, seed, augmenter, trial.
    pub fn campaigns(&self) -> Vec<CampaignKey> {
        let mut out = Vec::new();
        for (t, target) in self.targets.iter().enumerate() {
            for s in 0..target.seeds.len() {
                for a in 0..self.augmenters.len() {
                    for trial in 0..self.trials {
                        out.push(CampaignKey {
                            target: t,
                            seed: s,
                            augmenter: a,
                            trial,
                        });
                    }
                }
            }
        }
        out
    }

    /// Number of (campaign, extractor) pairings.
    pub fn pairings(&self) -> usize {
        self.campaigns().len() * self.extractors.len()
    }

    pub fn rng_for_trial(&self, trial: u32) -> u64 {
        self.base_rng.wrapping_add(trial as u64)
    }

    /// A snapshot point in schedule minutes, for reporting.
    pub fn format_snapshot(&self, tick: u64) -> String {
        format_minutes(tick, self.minute)
    }
}

/// `ticks / minute` written as an integer when exact, else with up to three
/// decimals.
pub fn format_minutes(ticks: u64, minute: u64) -> String {
    if ticks % minute == 0 {
        return (ticks / minute).to_string();
    }
    let s = format!("{:.3}", ticks as f64 / minute as f64);
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

/// Rank outcome of one extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankCell {
    Rank(usize),
    /// No ground-truth location in the candidate list.
    Absent,
    /// The extractor produced no ranking for this snapshot.
    NoData,
}

impl fmt::Display for RankCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankCell::Rank(n) => write!(f, "{n}"),
            RankCell::Absent => f.write_str("ABSENT"),
            RankCell::NoData => f.write_str("NODATA"),
        }
    }
}

impl FromStr for RankCell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ABSENT" => Ok(RankCell::Absent),
            "NODATA" => Ok(RankCell::NoData),
            _ => s
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .map(RankCell::Rank)
                .ok_or_else(|| format!("bad rank {s:?}")),
        }
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotResult {
    pub target: String,
    pub augmenter: String,
    pub extractor: String,
    pub seed_id: String,
    pub trial: u32,
    /// Snapshot point in schedule minutes.
    pub snapshot: String,
    pub rank: RankCell,
    pub n_crash: usize,
    pub n_noncrash: usize,
    /// Extraction wall time; always 0 under execution budgets so results are
    /// reproducible byte for byte.
    pub wall_ms: u64,
}

pub const RESULTS_HEADER: [&str; 10] = [
    "target",
    "augmenter",
    "extractor",
    "seed_id",
    "trial",
    "snapshot",
    "rank",
    "n_crash",
    "n_noncrash",
    "wall_ms",
];

impl SnapshotResult {
    pub fn record(&self) -> [String; 10] {
        [
            self.target.clone(),
            self.augmenter.clone(),
            self.extractor.clone(),
            self.seed_id.clone(),
            self.trial.to_string(),
            self.snapshot.clone(),
            self.rank.to_string(),
            self.n_crash.to_string(),
            self.n_noncrash.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> BenchConfig {
        toml::from_str(text).unwrap()
    }

    const BASIC: &str = r#"
targets = ["m1"]
augmenters = ["aflcem", "concfuzz"]
extractors = ["vulnloc", "aurora"]
budget = "200execs"
schedule_scale = "10execs"
"#;

    #[test]
    fn cross_product_counts() {
        let p = plan(&config(BASIC), Path::new(".")).unwrap();
        assert_eq!(p.trials, 5);
        assert_eq!(p.campaigns().len(), 10);
        assert_eq!(p.pairings(), 20);
        assert_eq!(p.schedule(), vec![50, 150]);
        assert_eq!(p.rng_for_trial(3), 3);

        let one = config(&format!("{BASIC}trials = 1\n"));
        let p = plan(&one, Path::new(".")).unwrap();
        assert_eq!(p.campaigns().len(), 2);
    }

    #[test]
    fn rejects_bad_plans() {
        let empty = BASIC.replace(r#"["vulnloc", "aurora"]"#, "[]");
        assert!(matches!(plan(&config(&empty), Path::new(".")), Err(BenchError::Config(_))));
        let unknown = BASIC.replace("\"aflcem\"", "\"afl\"");
        assert!(matches!(plan(&config(&unknown), Path::new(".")), Err(BenchError::UnknownAugmenter(_))));
        let unknown = BASIC.replace("\"aurora\"", "\"sbfl\"");
        assert!(matches!(plan(&config(&unknown), Path::new(".")), Err(BenchError::UnknownExtractor(_))));
        let unknown = BASIC.replace("\"m1\"", "\"nowhere.manifest\"");
        assert!(matches!(plan(&config(&unknown), Path::new(".")), Err(BenchError::UnknownTarget(_))));
        let mixed = BASIC.replace("\"10execs\"", "\"1m\"");
        assert!(matches!(plan(&config(&mixed), Path::new(".")), Err(BenchError::Config(_))));
        let zero = format!("{BASIC}trials = 0\n");
        assert!(matches!(plan(&config(&zero), Path::new(".")), Err(BenchError::Config(_))));
        assert!(toml::from_str::<BenchConfig>(&format!("{BASIC}bogus = 1\n")).is_err());
    }

    #[test]
    fn seeds_override_manifest() {
        let text = format!("{BASIC}[seeds]\nm1 = [\"hex:04\", \"hex:0400\"]\n");
        let p = plan(&config(&text), Path::new(".")).unwrap();
        assert_eq!(p.targets[0].seeds.len(), 2);
        assert_eq!(p.targets[0].seeds[1].bytes, vec![4, 0]);
        assert_eq!(p.campaigns().len(), 20);
    }

    #[test]
    fn default_scale_spans_four_hours() {
        let text = BASIC.replace("schedule_scale = \"10execs\"\n", "").replace("200execs", "2400execs");
        let p = plan(&config(&text), Path::new(".")).unwrap();
        assert_eq!(p.minute, 10);
        assert_eq!(p.schedule().last(), Some(&2400));
        assert_eq!(p.format_snapshot(2400), "240");
        assert_eq!(format_minutes(25, 10), "2.5");
        assert_eq!(format_minutes(1, 3), "0.333");
    }

    #[test]
    fn rank_cells_round_trip() {
        for cell in [RankCell::Rank(1), RankCell::Rank(42), RankCell::Absent, RankCell::NoData] {
            assert_eq!(cell.to_string().parse::<RankCell>(), Ok(cell));
        }
        assert!("0".parse::<RankCell>().is_err());
        assert!("--".parse::<RankCell>().is_err());
    }
}
