//! Tables and figures from `results.csv`.
//!
//! Everything here is a pure function of the results file (plus the
//! optional `seeds.csv` written next to it), so regenerating a report gives
//! byte-identical output.
//!
//! Trial aggregates use the lower median with ABSENT ordered after every
//! rank. NODATA entries are left out; a cell with nothing else is `N/A`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Deserialize;
use thiserror::Error;

use crate::bench::RankCell;

mod svg;

use svg::{color, Chart};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed results: {0}")]
    Csv(#[from] csv::Error),
    #[error("results line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("results file has no rows")]
    Empty,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    target: String,
    augmenter: String,
    extractor: String,
    seed_id: String,
    trial: u32,
    snapshot: String,
    rank: String,
    n_crash: usize,
    n_noncrash: usize,
    wall_ms: u64,
}

/// One parsed row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub target: String,
    pub augmenter: String,
    pub extractor: String,
    pub seed_id: String,
    pub trial: u32,
    pub snapshot: String,
    /// `snapshot` as a number of schedule minutes.
    pub minutes: f64,
    pub rank: RankCell,
    pub n_crash: usize,
    pub n_noncrash: usize,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn technique(&self) -> String {
        technique(&self.augmenter, &self.extractor)
    }
}

pub fn technique(augmenter: &str, extractor: &str) -> String {
    format!("{augmenter}+{extractor}")
}

pub fn parse_results(reader: impl Read) -> Result<Vec<ResultRow>, ReportError> {
    let mut rows = Vec::new();
    for (i, raw) in csv::Reader::from_reader(reader).deserialize::<RawRow>().enumerate() {
        let raw = raw?;
        let line = i + 2;
        let invalid = |message: String| ReportError::Invalid { line, message };
        let minutes: f64 = raw
            .snapshot
            .parse()
            .ok()
            .filter(|m: &f64| m.is_finite() && *m >= 0.0)
            .ok_or_else(|| invalid(format!("bad snapshot {:?}", raw.snapshot)))?;
        let rank = raw.rank.parse().map_err(invalid)?;
        rows.push(ResultRow {
            target: raw.target,
            augmenter: raw.augmenter,
            extractor: raw.extractor,
            seed_id: raw.seed_id,
            trial: raw.trial,
            snapshot: raw.snapshot,
            minutes,
            rank,
            n_crash: raw.n_crash,
            n_noncrash: raw.n_noncrash,
            wall_ms: raw.wall_ms,
        });
    }
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    let file = fs::File::open(path).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_results(file)
}

/// A table cell: the `--` and `N/A` conventions of rank tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cell {
    Rank(usize),
    Absent,
    NoData,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Rank(n) => write!(f, "{n}"),
            Cell::Absent => f.write_str("--"),
            Cell::NoData => f.write_str("N/A"),
        }
    }
}

/// Ranks with NODATA removed and ABSENT sorted last.
fn ordered(ranks: impl IntoIterator<Item = RankCell>) -> Vec<Cell> {
    let mut cells: Vec<Cell> = ranks
        .into_iter()
        .filter_map(|r| match r {
            RankCell::Rank(n) => Some(Cell::Rank(n)),
            RankCell::Absent => Some(Cell::Absent),
            RankCell::NoData => None,
        })
        .collect();
    cells.sort();
    cells
}

/// Lower median; `N/A` when nothing but NODATA is given.
pub fn median_cell(ranks: impl IntoIterator<Item = RankCell>) -> Cell {
    let cells = ordered(ranks);
    if cells.is_empty() {
        return Cell::NoData;
    }
    cells[(cells.len() - 1) / 2]
}

fn lower_median(mut values: Vec<usize>) -> usize {
    values.sort_unstable();
    values.get(values.len().saturating_sub(1) / 2).copied().unwrap_or(0)
}

/// Distinct values of `key` in order of first appearance.
fn first_seen<'a, T: PartialEq>(rows: &'a [ResultRow], key: impl Fn(&'a ResultRow) -> T) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for r in rows {
        let k = key(r);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Snapshot labels of `rows`, in ascending time.
fn snapshots(rows: &[&ResultRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !out.iter().any(|(s, _)| *s == r.snapshot) {
            out.push((r.snapshot.clone(), r.minutes));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// The three rows per target of a rank table: 15 minutes, then 2 hours for
/// campaigns of up to four hours or 4 hours for longer ones, then the final
/// snapshot. Each point maps to the latest available snapshot at or before
/// it; duplicates collapse.
pub fn reporting_points(available: &[(String, f64)]) -> Vec<String> {
    let Some(last) = available.last() else {
        return Vec::new();
    };
    let mid = if last.1 <= 240.0 { 120.0 } else { 240.0 };
    let mut out: Vec<String> = Vec::new();
    for want in [15.0, mid, last.1] {
        let pick = available
            .iter()
            .rev()
            .find(|(_, m)| *m <= want)
            .unwrap_or(&available[0]);
        if !out.contains(&pick.0) {
            out.push(pick.0.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub techniques: Vec<String>,
    /// `(target, snapshot, one cell per technique)`.
    pub rows: Vec<(String, String, Vec<Cell>)>,
}

impl RankTable {
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["target".to_owned(), "snapshot".to_owned()];
        header.extend(self.techniques.iter().cloned());
        w.write_record(&header)?;
        for (target, snapshot, cells) in &self.rows {
            let mut rec = vec![target.clone(), snapshot.clone()];
            rec.extend(cells.iter().map(Cell::to_string));
            w.write_record(&rec)?;
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// The seed each target's headline numbers use: the first one in the file.
fn baseline_seeds(rows: &[ResultRow]) -> HashMap<&str, &str> {
    let mut out = HashMap::new();
    for r in rows {
        out.entry(r.target.as_str()).or_insert(r.seed_id.as_str());
    }
    out
}

/// Median rank across trials per (target, snapshot, technique), on each
/// target's baseline seed. `points` overrides the reporting snapshots.
pub fn rank_table(rows: &[ResultRow], points: Option<&[String]>) -> RankTable {
    let techniques = first_seen(rows, ResultRow::technique);
    let baseline = baseline_seeds(rows);
    let mut table_rows = Vec::new();
    for target in first_seen(rows, |r| r.target.as_str()) {
        let mine: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.target == target && baseline[target] == r.seed_id)
            .collect();
        let available = snapshots(&mine);
        let chosen = match points {
            Some(p) => p
                .iter()
                .filter(|p| available.iter().any(|(s, _)| s == *p))
                .cloned()
                .collect(),
            None => reporting_points(&available),
        };
        for snapshot in chosen {
            let cells = techniques
                .iter()
                .map(|t| {
                    median_cell(
                        mine.iter()
                            .filter(|r| r.snapshot == snapshot && &r.technique() == t)
                            .map(|r| r.rank),
                    )
                })
                .collect();
            table_rows.push((target.to_owned(), snapshot, cells));
        }
    }
    RankTable {
        techniques,
        rows: table_rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub target: String,
    pub technique: String,
    pub seed_id: String,
    pub snapshot: String,
    pub minutes: f64,
    /// Trials contributing a rank or ABSENT.
    pub trials: usize,
    pub min: Cell,
    pub median: Cell,
    pub max: Cell,
}

/// Min, median, and max rank over trials for every other coordinate.
pub fn variance_summary(rows: &[ResultRow]) -> Vec<VarianceRow> {
    let mut groups: BTreeMap<(usize, usize, usize, u64), (&ResultRow, Vec<RankCell>)> = BTreeMap::new();
    let targets = first_seen(rows, |r| r.target.as_str());
    let techniques = first_seen(rows, ResultRow::technique);
    let seeds = first_seen(rows, |r| (r.target.as_str(), r.seed_id.as_str()));
    let mut max_trials = 0;
    for r in rows {
        let key = (
            targets.iter().position(|t| *t == r.target).unwrap(),
            techniques.iter().position(|t| *t == r.technique()).unwrap(),
            seeds.iter().position(|s| *s == (r.target.as_str(), r.seed_id.as_str())).unwrap(),
            r.minutes.to_bits(),
        );
        let entry = groups.entry(key).or_insert_with(|| (r, Vec::new()));
        entry.1.push(r.rank);
        max_trials = max_trials.max(entry.1.len());
    }
    if max_trials < 2 {
        warn!("only one trial per coordinate; variance bands are degenerate");
    }
    let mut out: Vec<VarianceRow> = groups
        .into_values()
        .map(|(r, ranks)| {
            let cells = ordered(ranks);
            let (min, median, max) = if cells.is_empty() {
                (Cell::NoData, Cell::NoData, Cell::NoData)
            } else {
                (cells[0], cells[(cells.len() - 1) / 2], cells[cells.len() - 1])
            };
            VarianceRow {
                target: r.target.clone(),
                technique: r.technique(),
                seed_id: r.seed_id.clone(),
                snapshot: r.snapshot.clone(),
                minutes: r.minutes,
                trials: cells.len(),
                min,
                median,
                max,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (targets.iter().position(|t| *t == a.target), techniques.iter().position(|t| *t == a.technique))
            .cmp(&(targets.iter().position(|t| *t == b.target), techniques.iter().position(|t| *t == b.technique)))
            .then_with(|| {
                seeds
                    .iter()
                    .position(|s| *s == (a.target.as_str(), a.seed_id.as_str()))
                    .cmp(&seeds.iter().position(|s| *s == (b.target.as_str(), b.seed_id.as_str())))
            })
            .then_with(|| a.minutes.total_cmp(&b.minutes))
    });
    out
}

/// Reads `seeds.csv` next to the results, if present: seed byte lengths by
/// `(target, seed_id)`.
fn seed_lengths(results_dir: &Path) -> HashMap<(String, String), String> {
    #[derive(Deserialize)]
    struct SeedRow {
        target: String,
        seed_id: String,
        bytes: String,
    }
    let Ok(mut reader) = csv::Reader::from_path(results_dir.join("seeds.csv")) else {
        return HashMap::new();
    };
    reader
        .deserialize::<SeedRow>()
        .filter_map(Result::ok)
        .map(|s| ((s.target, s.seed_id), s.bytes))
        .collect()
}

/// Plot y value for a cell; ABSENT sits on the ceiling line.
fn plot_value(cell: Cell, ceiling: f64) -> Option<f64> {
    match cell {
        Cell::Rank(n) => Some(n as f64),
        Cell::Absent => Some(ceiling),
        Cell::NoData => None,
    }
}

fn rank_ceiling(rows: &[&ResultRow]) -> f64 {
    let worst = rows
        .iter()
        .filter_map(|r| match r.rank {
            RankCell::Rank(n) => Some(n),
            _ => None,
        })
        .max()
        .unwrap_or(1);
    let mut c = 10.0;
    while c <= worst as f64 {
        c *= 10.0;
    }
    c
}

struct Figure {
    name: String,
    csv: String,
    svg: String,
}

fn accuracy_figure(target: &str, mine: &[&ResultRow], techniques: &[String]) -> Result<Figure, ReportError> {
    let times = snapshots(mine);
    let x_max = times.last().map_or(1.0, |t| t.1);
    let ceiling = rank_ceiling(mine);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["technique", "snapshot", "rank"])?;
    let mut chart = Chart::new(
        &format!("{target}: rank of the root cause over augmentation time"),
        "schedule minutes",
        "rank (log, lower is better)",
        x_max,
        ceiling,
        true,
    );
    chart.marker_line(ceiling, "-- not listed");
    for (i, t) in techniques.iter().enumerate() {
        let mut points = Vec::new();
        for (snapshot, minutes) in &times {
            let ranks: Vec<RankCell> = mine
                .iter()
                .filter(|r| &r.snapshot == snapshot && &r.technique() == t)
                .map(|r| r.rank)
                .collect();
            if ranks.is_empty() {
                continue;
            }
            let cell = median_cell(ranks);
            w.write_record([t.as_str(), snapshot.as_str(), &cell.to_string()])?;
            if let Some(y) = plot_value(cell, ceiling) {
                points.push((*minutes, y));
            }
        }
        chart.step_line(Some(t), color(i), &points, false);
    }
    Ok(Figure {
        name: format!("fig_accuracy_{target}"),
        csv: csv_string(w)?,
        svg: chart.finish(),
    })
}

fn balance_figure(target: &str, mine: &[&ResultRow]) -> Result<Figure, ReportError> {
    let times = snapshots(mine);
    let augmenters = first_seen_refs(mine, |r| r.augmenter.as_str());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["augmenter", "snapshot", "n_crash", "n_noncrash"])?;
    let mut series = Vec::new();
    let mut y_max: f64 = 1.0;
    for aug in &augmenters {
        // Balance is per campaign, so one extractor's rows suffice.
        let extractor = mine.iter().find(|r| r.augmenter == *aug).map(|r| r.extractor.as_str());
        let mut points = Vec::new();
        for (snapshot, minutes) in &times {
            let picked: Vec<&&ResultRow> = mine
                .iter()
                .filter(|r| r.augmenter == *aug && Some(r.extractor.as_str()) == extractor && &r.snapshot == snapshot)
                .collect();
            if picked.is_empty() {
                continue;
            }
            let crash = lower_median(picked.iter().map(|r| r.n_crash).collect());
            let non = lower_median(picked.iter().map(|r| r.n_noncrash).collect());
            w.write_record([aug, snapshot.as_str(), &crash.to_string(), &non.to_string()])?;
            y_max = y_max.max((crash + non) as f64);
            points.push((*minutes, crash, non));
        }
        series.push((aug, points));
    }
    let x_max = times.last().map_or(1.0, |t| t.1);
    let mut chart = Chart::new(
        &format!("{target}: generated inputs over time"),
        "schedule minutes",
        "inputs (median over trials)",
        x_max * 1.05,
        y_max * 1.05,
        false,
    );
    let n = series.len().max(1) as f64;
    let bar = (300.0 / (times.len().max(1) as f64 * n)).clamp(2.0, 18.0);
    for (i, (aug, points)) in series.iter().enumerate() {
        let offset = (i as f64 - (n - 1.0) / 2.0) * bar;
        for &(m, crash, non) in points {
            let x = m + offset * (x_max * 1.05) / 426.0;
            chart.bar(x, bar - 1.0, 0.0, crash as f64, color(2 * i));
            chart.bar(x, bar - 1.0, crash as f64, (crash + non) as f64, color(2 * i + 1));
        }
        chart.legend_entry(&format!("{aug} crash"), color(2 * i));
        chart.legend_entry(&format!("{aug} noncrash"), color(2 * i + 1));
    }
    Ok(Figure {
        name: format!("fig_balance_{target}"),
        csv: csv_string(w)?,
        svg: chart.finish(),
    })
}

fn first_seen_refs<'a>(rows: &[&'a ResultRow], key: impl Fn(&'a ResultRow) -> &'a str) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for r in rows {
        let k = key(r);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn seeds_figure(
    target: &str,
    all: &[&ResultRow],
    techniques: &[String],
    lengths: &HashMap<(String, String), String>,
) -> Result<Figure, ReportError> {
    let times = snapshots(all);
    let x_max = times.last().map_or(1.0, |t| t.1);
    let ceiling = rank_ceiling(all);
    let seeds = first_seen_refs(all, |r| r.seed_id.as_str());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["technique", "seed_id", "seed_bytes", "snapshot", "rank"])?;
    let mut chart = Chart::new(
        &format!("{target}: rank by initial seed"),
        "schedule minutes",
        "rank (log, lower is better)",
        x_max,
        ceiling,
        true,
    );
    chart.marker_line(ceiling, "-- not listed");
    for (i, t) in techniques.iter().enumerate() {
        for (j, seed) in seeds.iter().enumerate() {
            let bytes = lengths
                .get(&(target.to_owned(), (*seed).to_owned()))
                .cloned()
                .unwrap_or_default();
            let mut points = Vec::new();
            for (snapshot, minutes) in &times {
                let ranks: Vec<RankCell> = all
                    .iter()
                    .filter(|r| &r.snapshot == snapshot && &r.technique() == t && r.seed_id == *seed)
                    .map(|r| r.rank)
                    .collect();
                if ranks.is_empty() {
                    continue;
                }
                let cell = median_cell(ranks);
                w.write_record([t.as_str(), seed, &bytes, snapshot.as_str(), &cell.to_string()])?;
                if let Some(y) = plot_value(cell, ceiling) {
                    points.push((*minutes, y));
                }
            }
            let label = if bytes.is_empty() {
                format!("{t} {seed}")
            } else {
                format!("{t} {seed} ({bytes}B)")
            };
            chart.step_line(Some(&label), color(i), &points, j > 0);
        }
    }
    Ok(Figure {
        name: format!("fig_seeds_{target}"),
        csv: csv_string(w)?,
        svg: chart.finish(),
    })
}

fn variance_figure(
    target: &str,
    mine: &[&ResultRow],
    summary: &[VarianceRow],
    techniques: &[String],
    baseline: &str,
) -> Result<Figure, ReportError> {
    let times = snapshots(mine);
    let x_max = times.last().map_or(1.0, |t| t.1);
    let ceiling = rank_ceiling(mine);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["technique", "seed_id", "snapshot", "trials", "min", "median", "max"])?;
    for v in summary.iter().filter(|v| v.target == target) {
        w.write_record([
            v.technique.as_str(),
            v.seed_id.as_str(),
            v.snapshot.as_str(),
            &v.trials.to_string(),
            &v.min.to_string(),
            &v.median.to_string(),
            &v.max.to_string(),
        ])?;
    }
    let mut chart = Chart::new(
        &format!("{target}: spread over trials (seed {baseline})"),
        "schedule minutes",
        "rank (log, lower is better)",
        x_max,
        ceiling,
        true,
    );
    chart.marker_line(ceiling, "-- not listed");
    for (i, t) in techniques.iter().enumerate() {
        let rows: Vec<&VarianceRow> = summary
            .iter()
            .filter(|v| v.target == target && &v.technique == t && v.seed_id == baseline)
            .collect();
        let band: Vec<(f64, f64, f64)> = rows
            .iter()
            .filter_map(|v| Some((v.minutes, plot_value(v.min, ceiling)?, plot_value(v.max, ceiling)?)))
            .collect();
        let low: Vec<(f64, f64)> = band.iter().map(|&(x, lo, _)| (x, lo)).collect();
        let high: Vec<(f64, f64)> = band.iter().map(|&(x, _, hi)| (x, hi)).collect();
        chart.band(color(i), &low, &high);
        let mut per_trial: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        for r in mine.iter().filter(|r| &r.technique() == t) {
            if let Some(y) = plot_value(median_cell([r.rank]), ceiling) {
                per_trial.entry(r.trial).or_default().push((r.minutes, y));
            }
        }
        for points in per_trial.values_mut() {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            chart.step_line(None, color(i), points, true);
        }
        let median: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|v| Some((v.minutes, plot_value(v.median, ceiling)?)))
            .collect();
        chart.step_line(Some(t), color(i), &median, false);
    }
    Ok(Figure {
        name: format!("fig_variance_{target}"),
        csv: csv_string(w)?,
        svg: chart.finish(),
    })
}

/// Writes per-target figure data and images into `out_dir`. Returns the
/// written paths. `seed_info_dir` is searched for `seeds.csv`.
pub fn emit_plots(rows: &[ResultRow], out_dir: &Path, seed_info_dir: Option<&Path>) -> Result<Vec<PathBuf>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let techniques = first_seen(rows, ResultRow::technique);
    let baseline = baseline_seeds(rows);
    let summary = variance_summary(rows);
    let lengths = seed_info_dir.map(seed_lengths).unwrap_or_default();
    let mut figures = Vec::new();
    for target in first_seen(rows, |r| r.target.as_str()) {
        let all: Vec<&ResultRow> = rows.iter().filter(|r| r.target == target).collect();
        let mine: Vec<&ResultRow> = all.iter().copied().filter(|r| r.seed_id == baseline[target]).collect();
        figures.push(accuracy_figure(target, &mine, &techniques)?);
        figures.push(balance_figure(target, &mine)?);
        figures.push(seeds_figure(target, &all, &techniques, &lengths)?);
        figures.push(variance_figure(target, &mine, &summary, &techniques, baseline[target])?);
    }
    let mut written = Vec::new();
    for f in figures {
        for (ext, body) in [("csv", &f.csv), ("svg", &f.svg)] {
            let path = out_dir.join(format!("{}.{ext}", f.name));
            write_file(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_file(path: &Path, body: &str) -> Result<(), ReportError> {
    fs::write(path, body).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads `results` and writes `table2.csv` plus every figure into `out_dir`.
/// Nothing is written when the results have no rows.
pub fn write_report(results: &Path, out_dir: &Path, points: Option<&[String]>) -> Result<Vec<PathBuf>, ReportError> {
    let rows = read_results(results)?;
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let table = rank_table(&rows, points);
    let table_path = out_dir.join("table2.csv");
    write_file(&table_path, &table.to_csv()?)?;
    let mut written = vec![table_path];
    written.extend(emit_plots(&rows, out_dir, results.parent())?);
    Ok(written)
}
