use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rcab_core::augment::{self, Budget};
use rcab_core::bench::{self, resolve_target};
use rcab_core::extract::{self, aurora, Aurora};
use rcab_core::manifest::{SeedRef, TargetSpec};
use rcab_core::model::{dataset_balance, rank_of_ground_truth, Dataset};
use rcab_core::{harness, report, store};

#[derive(Parser)]
#[command(name = "rcab", version, about = "Benchmark crash root cause analysis techniques")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a target once and print its verdict and trace.
    Exec {
        /// Manifest path or built-in mock id.
        #[arg(long)]
        target: String,
        /// Input file, or `hex:<bytes>`.
        #[arg(long)]
        input: String,
    },
    /// Fuzz a crashing seed into a dataset directory.
    Augment {
        #[arg(long)]
        method: String,
        #[arg(long)]
        target: String,
        /// Seed file or `hex:<bytes>`; defaults to the target's first seed.
        #[arg(long)]
        seed: Option<String>,
        /// Wall-clock duration (`4h`) or execution count (`2000execs`).
        #[arg(long)]
        budget: Budget,
        #[arg(long, default_value_t = 0)]
        rng: u64,
        #[arg(long, default_value_t = 8)]
        probes_per_byte: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank root-cause candidates from a dataset directory.
    Extract {
        #[arg(long)]
        method: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = extract::DEFAULT_CAP)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment matrix from a TOML configuration.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build tables and figures from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Snapshot rows for the rank table, e.g. `15,120,240`.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<String>>,
    },
}

fn target(name: &str) -> Result<TargetSpec> {
    resolve_target(name, Path::new(".")).with_context(|| format!("loading target {name}"))
}

fn load_input(reference: &str) -> Result<Vec<u8>> {
    let seed = SeedRef::parse(reference, Path::new(".")).map_err(anyhow::Error::msg)?;
    seed.load().with_context(|| format!("reading {reference}"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Exec { target: name, input } => {
            let spec = target(&name)?;
            let input = load_input(&input)?;
            let sample = harness::execute(&spec, &input, Duration::from_millis(spec.timeout_ms))?;
            let mut out = io::stdout().lock();
            writeln!(out, "verdict {}", sample.verdict)?;
            write!(out, "{}", sample.trace)?;
        }
        Command::Augment {
            method,
            target: name,
            seed,
            budget,
            rng,
            probes_per_byte,
            out,
        } => {
            let spec = target(&name)?;
            let Some(augmenter) = augment::by_id(&method, probes_per_byte) else {
                bail!("unknown augmentation method {method:?}");
            };
            let seed = match seed {
                Some(s) => load_input(&s)?,
                None => spec.seeds[0].load().context("reading the target's first seed")?,
            };
            let mut dataset = Dataset::new(spec.id.clone(), augmenter.id(), rng);
            let stats = augmenter.run(&spec, &seed, budget, rng, &mut dataset)?;
            store::write_dataset(&dataset, &out)?;
            let b = dataset_balance(&dataset);
            println!(
                "{} executions: {} crash, {} noncrash -> {}",
                stats.executions,
                b.n_crash,
                b.n_noncrash,
                out.display()
            );
        }
        Command::Extract {
            method,
            dataset,
            target: name,
            cap,
            out,
        } => {
            let spec = target(&name)?;
            let data = store::read_dataset(&dataset)?;
            let ranking = match method.as_str() {
                "aurora" => {
                    let (ranking, scores) = Aurora.rank_with_predicates(&data, &spec, cap)?;
                    let path = out.with_file_name("predicates.csv");
                    let mut w = csv::Writer::from_path(&path)?;
                    w.write_record(["score", "file", "line", "form", "threshold"])?;
                    for s in aurora::sorted_for_report(scores) {
                        let p = &s.predicate;
                        let form = match p.polarity {
                            aurora::Polarity::AsIs => p.form.name().to_owned(),
                            aurora::Polarity::Negated => format!("not_{}", p.form.name()),
                        };
                        let threshold = p.form.threshold().map(|t| t.to_string()).unwrap_or_default();
                        w.write_record([
                            &s.score.to_string(),
                            p.site.location.file(),
                            &p.site.location.line().to_string(),
                            &form,
                            &threshold,
                        ])?;
                    }
                    w.flush()?;
                    ranking
                }
                other => match extract::by_id(other) {
                    Some(e) => e.rank(&data, &spec, cap)?,
                    None => bail!("unknown extraction method {other:?}"),
                },
            };
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["rank", "score", "file", "line"])?;
            for (i, (loc, score)) in ranking.entries().iter().enumerate() {
                w.write_record([
                    &(i + 1).to_string(),
                    &score.to_string(),
                    loc.file(),
                    &loc.line().to_string(),
                ])?;
            }
            w.flush()?;
            match rank_of_ground_truth(&ranking, &spec.ground_truth) {
                Some(r) => println!("ground truth at rank {r}"),
                None => println!("ground truth not in the top {cap}"),
            }
        }
        Command::Bench { config, out } => {
            let result = bench::run_bench(&config, out.as_deref())?;
            println!("{} results -> {}", result.rows, result.dir.join("results.csv").display());
        }
        Command::Report { results, out, points } => {
            let written = report::write_report(&results, &out, points.as_deref())?;
            for path in &written {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
