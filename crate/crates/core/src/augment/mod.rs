//! Data augmentation: fuzz a crashing seed into a dataset of crashing and
//! non-crashing samples.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::harness::Runner;
use crate::manifest::TargetSpec;
use crate::model::{Sample, SampleSink, Verdict};

pub mod aflcem;
pub mod concfuzz;

pub use aflcem::AflCem;
pub use concfuzz::ConcFuzz;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("seed does not crash the target (verdict {0})")]
    SeedNotCrashing(Verdict),
    #[error("augmentation budget is zero")]
    BudgetZero,
    #[error("cannot prepare target runner: {0}")]
    Io(#[from] io::Error),
}

/// How long a campaign may run: wall-clock time for benchmarking, or an
/// execution count for reproducible runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Execs(u64),
    Wall(Duration),
}

impl Budget {
    /// The budget in campaign ticks (executions, or milliseconds).
    pub fn ticks(&self) -> u64 {
        match *self {
            Budget::Execs(n) => n,
            Budget::Wall(d) => d.as_millis().try_into().unwrap_or(u64::MAX),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.ticks() == 0
    }

    pub fn is_execs(&self) -> bool {
        matches!(self, Budget::Execs(_))
    }
}

impl FromStr for Budget {
    type Err = String;

    /// `<N>execs` (or `<N>x`) for an execution count, otherwise a duration
    /// such as `4h`, `90s`, or `1m 30s`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let count = s.strip_suffix("execs").or_else(|| s.strip_suffix('x'));
        if let Some(n) = count {
            return n
                .trim()
                .parse()
                .map(Budget::Execs)
                .map_err(|_| format!("bad execution count {s:?}"));
        }
        humantime::parse_duration(s)
            .map(Budget::Wall)
            .map_err(|e| format!("bad budget {s:?}: {e}"))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Execs(n) => write!(f, "{n}execs"),
            Budget::Wall(d) => write!(f, "{}", humantime::format_duration(*d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CampaignStats {
    pub executions: u64,
}

/// A data augmentation method.
pub trait Augmenter: Send + Sync {
    fn id(&self) -> &'static str;

    /// Fuzzes `seed` until `budget` is spent, recording every execution in
    /// `sink` in order.
    fn run(
        &self,
        spec: &TargetSpec,
        seed: &[u8],
        budget: Budget,
        rng_seed: u64,
        sink: &mut dyn SampleSink,
    ) -> Result<CampaignStats, AugmentError>;
}

pub const AUGMENTER_IDS: [&str; 2] = ["aflcem", "concfuzz"];

/// Builds an augmenter by id. `probes_per_byte` only affects `concfuzz`.
pub fn by_id(id: &str, probes_per_byte: u32) -> Option<Box<dyn Augmenter>> {
    match id {
        "aflcem" => Some(Box::new(AflCem::default())),
        "concfuzz" => Some(Box::new(ConcFuzz {
            probes_per_byte,
            ..ConcFuzz::default()
        })),
        _ => None,
    }
}

/// Budget accounting and sample stamping shared by the augmenters.
pub struct Campaign<'a> {
    runner: Runner<'a>,
    budget: Budget,
    start: Instant,
    executions: u64,
    sink: &'a mut dyn SampleSink,
}

impl<'a> Campaign<'a> {
    pub fn new(spec: &'a TargetSpec, budget: Budget, sink: &'a mut dyn SampleSink) -> Result<Self, AugmentError> {
        if budget.is_zero() {
            return Err(AugmentError::BudgetZero);
        }
        Ok(Campaign {
            runner: Runner::new(spec)?,
            budget,
            start: Instant::now(),
            executions: 0,
            sink,
        })
    }

    pub fn spec(&self) -> &'a TargetSpec {
        self.runner.spec()
    }

    pub fn executions(&self) -> u64 {
        self.executions
    }

    pub fn exhausted(&self) -> bool {
        match self.budget {
            Budget::Execs(n) => self.executions >= n,
            Budget::Wall(d) => self.start.elapsed() >= d,
        }
    }

    /// Runs one input and records it, or returns `None` once the budget is
    /// spent.
    pub fn exec(&mut self, input: &[u8]) -> Option<Sample> {
        if self.exhausted() {
            return None;
        }
        let sample = self.run_unrecorded(input);
        self.sink.record(sample.clone());
        Some(sample)
    }

    /// Runs the seed first. A crashing seed is recorded as the campaign's
    /// first sample; any other verdict aborts the campaign with nothing
    /// recorded.
    pub fn exec_seed(&mut self, seed: &[u8]) -> Result<Sample, AugmentError> {
        let sample = self.run_unrecorded(seed);
        if !sample.verdict.is_crash() {
            return Err(AugmentError::SeedNotCrashing(sample.verdict));
        }
        self.sink.record(sample.clone());
        Ok(sample)
    }

    fn run_unrecorded(&mut self, input: &[u8]) -> Sample {
        let deadline = Duration::from_millis(self.spec().timeout_ms);
        let mut sample = self.runner.execute(input, deadline);
        self.executions += 1;
        sample.born_at = match self.budget {
            Budget::Execs(_) => self.executions,
            Budget::Wall(_) => self.start.elapsed().as_millis().try_into().unwrap_or(u64::MAX),
        };
        sample
    }

    pub fn stats(&self) -> CampaignStats {
        CampaignStats {
            executions: self.executions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_parsing() {
        assert_eq!("2000execs".parse::<Budget>(), Ok(Budget::Execs(2000)));
        assert_eq!("500x".parse::<Budget>(), Ok(Budget::Execs(500)));
        assert_eq!("4h".parse::<Budget>(), Ok(Budget::Wall(Duration::from_secs(4 * 3600))));
        assert_eq!("250ms".parse::<Budget>(), Ok(Budget::Wall(Duration::from_millis(250))));
        assert!("lots".parse::<Budget>().is_err());
        assert_eq!(Budget::Wall(Duration::from_secs(90)).ticks(), 90_000);
        assert_eq!(Budget::Execs(7).to_string(), "7execs");
    }
}
