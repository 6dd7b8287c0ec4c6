use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Sender};
use std::thread;
use std::time::Instant;

use log::{debug, info, warn};

use super::{plan, BenchConfig, BenchError, CampaignKey, ExperimentPlan, RankCell, SnapshotResult, RESULTS_HEADER};
use crate::augment;
use crate::extract;
use crate::model::{dataset_balance, rank_of_ground_truth, Dataset, Sample, SampleSink};

/// Forwards samples into a dataset and hands a frozen copy to the
/// extraction thread as soon as each snapshot point has passed.
struct SnapshottingSink<'a> {
    data: Dataset,
    points: &'a [u64],
    next: usize,
    tx: Sender<Dataset>,
}

impl SnapshottingSink<'_> {
    fn freeze_next(&mut self) {
        let snapshot = self.data.snapshot(self.points[self.next]);
        // The receiver only goes away if extraction panicked; join reports it.
        let _ = self.tx.send(snapshot);
        self.next += 1;
    }

    /// Freezes the points the campaign did not reach.
    fn finish(mut self) {
        while self.next < self.points.len() {
            self.freeze_next();
        }
    }
}

impl SampleSink for SnapshottingSink<'_> {
    fn record(&mut self, sample: Sample) {
        while self.next < self.points.len() && sample.born_at > self.points[self.next] {
            self.freeze_next();
        }
        self.data.push(sample);
    }
}

struct Row {
    result: SnapshotResult,
    elapsed_ms: u64,
}

fn extract_snapshot(plan: &ExperimentPlan, key: CampaignKey, tick: u64, snapshot: &Dataset) -> Vec<Row> {
    let target = &plan.targets[key.target];
    let balance = dataset_balance(snapshot);
    plan.extractors
        .iter()
        .map(|id| {
            let extractor = extract::by_id(id).expect("extractors are validated by plan()");
            let start = Instant::now();
            let rank = if plan.max_snapshot_samples.is_some_and(|max| snapshot.len() > max) {
                debug!("{}: snapshot of {} samples over the limit", target.spec.id, snapshot.len());
                RankCell::NoData
            } else {
                match extractor.rank(snapshot, &target.spec, plan.cap) {
                    Ok(_) if plan.extraction_timeout.is_some_and(|t| start.elapsed() > t) => RankCell::NoData,
                    Ok(ranking) => match rank_of_ground_truth(&ranking, &target.spec.ground_truth) {
                        Some(n) => RankCell::Rank(n),
                        None => RankCell::Absent,
                    },
                    Err(e) => {
                        debug!("{} {id} at {tick}: {e}", target.spec.id);
                        RankCell::NoData
                    }
                }
            };
            let elapsed_ms = start.elapsed().as_millis() as u64;
            Row {
                result: SnapshotResult {
                    target: target.spec.id.clone(),
                    augmenter: plan.augmenters[key.augmenter].clone(),
                    extractor: id.clone(),
                    seed_id: target.seeds[key.seed].seed.id.clone(),
                    trial: key.trial,
                    snapshot: plan.format_snapshot(tick),
                    rank,
                    n_crash: balance.n_crash,
                    n_noncrash: balance.n_noncrash,
                    wall_ms: if plan.budget.is_execs() { 0 } else { elapsed_ms },
                },
                elapsed_ms,
            }
        })
        .collect()
}

fn run_campaign(plan: &ExperimentPlan, key: CampaignKey, schedule: &[u64]) -> Vec<Row> {
    let target = &plan.targets[key.target];
    let seed = &target.seeds[key.seed];
    let aug_id = &plan.augmenters[key.augmenter];
    let augmenter = augment::by_id(aug_id, plan.probes_per_byte).expect("augmenters are validated by plan()");
    let (tx, rx) = mpsc::channel::<Dataset>();

    thread::scope(|s| {
        let extraction = s.spawn(move || {
            let mut rows = Vec::new();
            for (i, snapshot) in rx.iter().enumerate() {
                rows.extend(extract_snapshot(plan, key, schedule[i], &snapshot));
            }
            rows
        });
        let mut sink = SnapshottingSink {
            data: Dataset::new(target.spec.id.clone(), aug_id.clone(), plan.rng_for_trial(key.trial)),
            points: schedule,
            next: 0,
            tx,
        };
        if let Err(e) = augmenter.run(
            &target.spec,
            &seed.bytes,
            plan.budget,
            plan.rng_for_trial(key.trial),
            &mut sink,
        ) {
            warn!(
                "{} / {aug_id} / seed {} / trial {}: {e}",
                target.spec.id, seed.seed.id, key.trial
            );
        }
        sink.finish();
        extraction.join().expect("extraction thread panicked")
    })
}

/// Runs every campaign of `plan` on a worker pool and passes each result to
/// `emit` in plan order, together with the measured extraction time in
/// milliseconds. Stops scheduling new campaigns after `emit` fails.
pub fn run_plan<E>(plan: &ExperimentPlan, mut emit: impl FnMut(&SnapshotResult, u64) -> Result<(), E>) -> Result<(), E> {
    let campaigns = plan.campaigns();
    let schedule = plan.schedule();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Vec<Row>)>();
    let mut outcome = Ok(());

    thread::scope(|s| {
        for _ in 0..plan.workers.min(campaigns.len()) {
            let tx = tx.clone();
            let (next, stop, campaigns, schedule) = (&next, &stop, &campaigns, &schedule);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= campaigns.len() || stop.load(Ordering::Relaxed) {
                    break;
                }
                let rows = run_campaign(plan, campaigns[i], schedule);
                if tx.send((i, rows)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut want = 0;
        for (i, rows) in rx {
            pending.insert(i, rows);
            while let Some(rows) = pending.remove(&want) {
                info!("campaign {}/{} done", want + 1, campaigns.len());
                want += 1;
                if outcome.is_err() {
                    continue;
                }
                for row in rows {
                    if let Err(e) = emit(&row.result, row.elapsed_ms) {
                        outcome = Err(e);
                        stop.store(true, Ordering::Relaxed);
                        break;
                    }
                }
            }
        }
    });
    outcome
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub dir: PathBuf,
    pub rows: usize,
}

/// Loads a configuration, runs it, and writes `results.csv`, `timings.csv`
/// and `seeds.csv` into the output directory. `out` overrides the
/// configured directory. An existing `results.csv` is replaced.
pub fn run_bench(config_path: &Path, out: Option<&Path>) -> Result<BenchOutput, BenchError> {
    let config = BenchConfig::load(config_path)?;
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let plan = plan(&config, &base)?;
    let dir = match (out, &config.out) {
        (Some(dir), _) => dir.to_owned(),
        (None, Some(dir)) => base.join(dir),
        (None, None) => base.join("bench-out"),
    };
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| BenchError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut seeds = csv::Writer::from_path(dir.join("seeds.csv"))?;
    seeds.write_record(["target", "seed_id", "bytes"])?;
    for t in &plan.targets {
        for s in &t.seeds {
            seeds.write_record([t.spec.id.as_str(), s.seed.id.as_str(), &s.bytes.len().to_string()])?;
        }
    }
    seeds.flush().map_err(io_err(&dir))?;

    let mut results = csv::Writer::from_path(dir.join("results.csv"))?;
    let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
    results.write_record(RESULTS_HEADER)?;
    timings.write_record(["target", "augmenter", "extractor", "seed_id", "trial", "snapshot", "extract_ms"])?;
    info!(
        "{} campaigns, {} snapshots each, {} workers",
        plan.campaigns().len(),
        plan.schedule().len(),
        plan.workers
    );

    let mut rows = 0;
    run_plan(&plan, |r, elapsed| -> Result<(), BenchError> {
        let record = r.record();
        results.write_record(&record)?;
        let mut timing = record[..6].to_vec();
        timing.push(elapsed.to_string());
        timings.write_record(&timing)?;
        rows += 1;
        Ok(())
    })?;
    results.flush().map_err(io_err(&dir))?;
    timings.flush().map_err(io_err(&dir))?;
    Ok(BenchOutput { dir, rows })
}
