use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use semgate_bench::dataset::{self, CATEGORIES, TABLE1_FRACTIONS};
use semgate_bench::replay::{self, ReplayOptions};
use semgate_bench::{BenchError, EmbeddedTarget, Format, GenerateOptions, HttpTarget, Target};
use serde_json::json;

#[derive(Parser)]
#[command(name = "semgate-bench", version, about = "Hit-rate, accuracy and latency benchmarks for the semantic cache")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic seeds.jsonl / tests.jsonl fixture.
    Generate {
        /// Seed Q/A pairs per category.
        #[arg(long)]
        seeds: usize,
        /// Test queries per category.
        #[arg(long)]
        tests: usize,
        /// One fraction, four comma-separated fractions, or `table1`.
        #[arg(long, default_value = "table1")]
        paraphrase_fraction: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Store every seed record in the target.
    Populate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Flush, populate from --dataset, then replay the test queries.
    Replay {
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Replay once per threshold in [from, to].
    Sweep {
        #[arg(long, default_value_t = 0.6)]
        from: f64,
        #[arg(long, default_value_t = 0.9)]
        to: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct TargetArgs {
    /// `embedded` for an in-process engine over mock providers, or a gateway base URL.
    #[arg(long, default_value = "embedded")]
    target: String,
    /// Upstream delay of the embedded mock LLM.
    #[arg(long, default_value_t = 0)]
    mock_delay_ms: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    tests: PathBuf,
    /// Seed file used to populate the cache before each replay.
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: u16,
    /// Skip the lookup-bypassed latency pass.
    #[arg(long)]
    no_uncached: bool,
    /// Omit latency from the report so it is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

impl RunArgs {
    fn options(&self) -> ReplayOptions {
        ReplayOptions {
            parallel: usize::from(self.parallel),
            uncached_arm: !self.no_uncached && !self.no_timing,
            timing: !self.no_timing,
        }
    }
}

fn open_target(args: &TargetArgs) -> Result<Box<dyn Target>, BenchError> {
    if args.target == "embedded" {
        let t = EmbeddedTarget::default_mock(
            semgate_core::engine::DEFAULT_THRESHOLD,
            Duration::from_millis(args.mock_delay_ms),
        )?;
        Ok(Box::new(t))
    } else if args.target.starts_with("http://") || args.target.starts_with("https://") {
        Ok(Box::new(HttpTarget::new(&args.target)))
    } else {
        Err(BenchError::Validation(format!(
            "--target must be `embedded` or an http(s) URL, got {:?}",
            args.target
        )))
    }
}

fn parse_fractions(raw: &str) -> Result<Vec<f64>, BenchError> {
    if raw == "table1" {
        return Ok(TABLE1_FRACTIONS.to_vec());
    }
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| BenchError::Validation(format!("bad paraphrase fraction {p:?}")))
        })
        .collect()
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), BenchError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load(run: &RunArgs) -> Result<(Vec<semgate_bench::SeedRecord>, Vec<semgate_bench::TestRecord>), BenchError> {
    let seeds = dataset::read_seeds(&run.dataset)?;
    let tests = dataset::read_tests(&run.tests)?;
    dataset::check_sources(&seeds, &tests)?;
    Ok((seeds, tests))
}

async fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Generate {
            seeds,
            tests,
            paraphrase_fraction,
            seed,
            out,
        } => {
            let opts = GenerateOptions {
                seeds_per_category: seeds,
                tests_per_category: tests,
                paraphrase_fractions: parse_fractions(&paraphrase_fraction)?,
                seed,
            };
            let d = semgate_bench::generate_synthetic(&opts)?;
            d.save(&out)?;
            let counts = d.paraphrase_counts();
            let fixture = json!({
                "seed": seed,
                "seeds_per_category": seeds,
                "tests_per_category": tests,
                "paraphrase_counts": counts,
            });
            std::fs::write(out.join("fixture.json"), serde_json::to_string_pretty(&fixture).unwrap() + "\n")?;
            for (name, _) in CATEGORIES {
                println!("{name}: {} paraphrases / {tests}", counts.get(name).copied().unwrap_or(0));
            }
            println!("wrote {} seeds and {} tests to {}", d.seeds.len(), d.tests.len(), out.display());
        }
        Command::Populate { dataset, target } => {
            let seeds = dataset::read_seeds(&dataset)?;
            let t = open_target(&target)?;
            let p = replay::populate(&seeds, t.as_ref()).await?;
            println!("inserted {} (target now holds {} entries)", p.inserted, t.entry_count().await?);
        }
        Command::Replay { threshold, run } => {
            let (seeds, tests) = load(&run)?;
            let t = open_target(&run.target)?;
            let threshold = threshold.unwrap_or(semgate_core::engine::DEFAULT_THRESHOLD);
            let r = replay::prepare_and_replay(&seeds, &tests, t.as_ref(), threshold, &replay::offline, run.options())
                .await?;
            emit(run.report.as_deref(), &semgate_bench::render(&[r.report], run.format))?;
        }
        Command::Sweep { from, to, step, run } => {
            let (seeds, tests) = load(&run)?;
            let t = open_target(&run.target)?;
            let thresholds = replay::threshold_range(from, to, step)?;
            let reports =
                replay::sweep_threshold(&seeds, &tests, t.as_ref(), &thresholds, &replay::offline, run.options())
                    .await?;
            emit(run.report.as_deref(), &semgate_bench::render(&reports, run.format))?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semgate-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
