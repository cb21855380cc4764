//! `coreset`: score signal records, select a coreset, generate synthetic
//! corpora and report planted-skill coverage.
//!
//! Exit codes: 0 success, 1 usage/config/IO failure, 2 budget not reachable,
//! 3 invalid input data.

mod settings;
mod stream;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use coreset_core::par::{self, Exec};
use coreset_core::record::{reduce_to_compact, Format, Record};
use coreset_core::selection::{top_by_quality, Population, Stage};
use coreset_core::synth::{coverage_report, generate_one, manifest_coverage, GroundTruth, SynthSpec};
use coreset_core::{run_selection, CoresetManifest, Error, ScoreRow, SelectionConfig};

use settings::{pick, RunFile, SelectionFlags};

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::config(format!("{}: {err}", path.display()))
    }

    /// An error tied to one input line.
    pub fn data(path: &Path, line: usize, err: Error) -> Self {
        let code = Self::from(err.clone()).code;
        Self {
            code,
            message: format!("{}:{line}: {err}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::InsufficientEligible { .. } => 2,
            Error::Config(_) => 1,
            _ => 3,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "coreset", version, about = "Training-free coreset selection from signal records")]
struct Cli {
    /// Flat JSON run file: selection knobs plus IO settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score signal records into scores.jsonl.
    Score {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        format: Option<Format>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionFlags,
    },
    /// Select a coreset from scores (or from records, scored on the fly).
    Select {
        #[arg(long, conflicts_with = "records")]
        scores: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        format: Option<Format>,
        /// Output prefix for .manifest.jsonl, .ids.txt and .scores.csv.
        #[arg(long)]
        out_prefix: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionFlags,
    },
    /// Generate a synthetic corpus with planted ground truth.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// JSON file with generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Emit full activation vectors instead of ranked lists.
        #[arg(long)]
        ffn_full: bool,
        /// Write compact records instead of raw ones.
        #[arg(long)]
        compact: bool,
    },
    /// Planted-skill coverage of a manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "coverage.csv")]
        out: PathBuf,
        /// Number of planted skills; defaults to the largest skill in truth.
        #[arg(long)]
        n_skills: Option<usize>,
        /// Also report the pure top-quality baseline over these scores.
        #[arg(long)]
        baseline_scores: Option<PathBuf>,
    },
    /// Compare the library against brute-force oracles on random instances.
    Check {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let file = RunFile::load(cli.config.as_deref())?;
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(Failure::config("--threads must be at least 1"));
    }
    let exec = if threads == Some(1) { Exec::Serial } else { Exec::Parallel };
    with_threads(threads, || run(cli.command, file, exec))
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<R, Failure> + Send) -> Result<R, Failure> {
    match threads {
        Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?
            .install(f),
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(_threads: Option<usize>, f: impl FnOnce() -> Result<R, Failure>) -> Result<R, Failure> {
    f()
}

fn run(command: Command, file: RunFile, exec: Exec) -> Result<(), Failure> {
    match command {
        Command::Score {
            input,
            format,
            output,
            selection,
        } => {
            let cfg = selection.apply(file.selection.clone())?;
            let input = pick(input, file.input.clone(), "--input")?;
            let output = output.or(file.output.clone()).unwrap_or_else(|| PathBuf::from("scores.jsonl"));
            let format = format.or(file.format).unwrap_or_default();
            score(&input, format, &output, &cfg, exec)
        }
        Command::Select {
            scores,
            records,
            format,
            out_prefix,
            selection,
        } => {
            let cfg = selection.apply(file.selection.clone())?;
            let prefix = pick(out_prefix, file.out_prefix.clone(), "--out-prefix")?;
            let rows = match (scores.or(file.scores.clone()), records.or(file.records.clone())) {
                (Some(s), None) => stream::read_scores(&s, exec)?,
                (None, Some(r)) => {
                    let format = format.or(file.format).unwrap_or_default();
                    let mut rows = Vec::new();
                    stream::score_file(&r, format, &cfg, exec, |row| {
                        rows.push(row);
                        Ok(())
                    })?;
                    rows
                }
                (Some(_), Some(_)) => return Err(Failure::config("give either scores or records, not both")),
                (None, None) => return Err(Failure::config("missing --scores or --records")),
            };
            select(rows, &cfg, &prefix, exec)
        }
        Command::Synth {
            out_dir,
            spec,
            n_samples,
            seed,
            ffn_full,
            compact,
        } => {
            let mut synth = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Failure::io(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| Failure::io(&p, e))?
                }
                None => file.synth.clone().unwrap_or_default(),
            };
            if let Some(n) = n_samples {
                synth.n_samples = n;
            }
            if let Some(s) = seed {
                synth.seed = s;
            }
            synth.ffn_full |= ffn_full;
            let cfg = compact.then_some(&file.selection);
            synthesize(&synth, &out_dir, cfg, exec)
        }
        Command::Report {
            manifest,
            truth,
            out,
            n_skills,
            baseline_scores,
        } => report(&manifest, &truth, &out, n_skills, baseline_scores.as_deref(), exec),
        Command::Check { instances, seed } => check(instances, seed),
    }
}

fn score(input: &Path, format: Format, output: &Path, cfg: &SelectionConfig, exec: Exec) -> Result<(), Failure> {
    let start = Instant::now();
    let mut w = stream::create(output)?;
    let n = stream::score_file(input, format, cfg, exec, |row| {
        let mut line = row.to_line();
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Failure::io(output, e))
    })?;
    w.flush().map_err(|e| Failure::io(output, e))?;
    let secs = start.elapsed().as_secs_f64();
    if n == 0 {
        eprintln!("warning: {} holds no records", input.display());
    }
    eprintln!(
        "scored {n} records in {secs:.2}s ({:.0} records/s, {} threads)",
        n as f64 / secs.max(1e-9),
        if exec == Exec::Serial { 1 } else { par::num_threads() }
    );
    Ok(())
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn select(rows: Vec<ScoreRow>, cfg: &SelectionConfig, prefix: &Path, exec: Exec) -> Result<(), Failure> {
    let out = run_selection(&rows, cfg, exec)?;
    let manifest = &out.manifest;
    stream::write_all(&suffixed(prefix, ".manifest.jsonl"), &manifest.to_jsonl())?;
    stream::write_all(&suffixed(prefix, ".ids.txt"), &manifest.ids_text())?;

    let mut chosen = vec![None; out.population.len()];
    let index: std::collections::HashMap<&str, usize> = out
        .population
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    for e in &manifest.entries {
        chosen[index[e.sample_id.as_str()]] = Some((e.stage, e.rank_within_stage));
    }
    let csv_path = suffixed(prefix, ".scores.csv");
    let mut csv = csv::Writer::from_writer(stream::create(&csv_path)?);
    let csv_err = |e: csv::Error| Failure::io(&csv_path, e);
    csv.write_record(["sample_id", "g", "b", "g_hat", "b_hat", "q", "signature", "stage", "rank_within_stage"])
        .map_err(csv_err)?;
    for (r, c) in out.population.rows.iter().zip(&chosen) {
        let (stage, rank) = match c {
            Some((s, k)) => (s.as_str().to_string(), k.to_string()),
            None => (String::new(), String::new()),
        };
        csv.write_record([
            r.sample_id.clone(),
            r.g.to_string(),
            r.b.to_string(),
            r.g_hat.to_string(),
            r.b_hat.to_string(),
            r.q.to_string(),
            r.signature.clone(),
            stage,
            rank,
        ])
        .map_err(csv_err)?;
    }
    csv.flush().map_err(|e| Failure::io(&csv_path, e))?;

    let h = &manifest.header;
    eprintln!("{:<20}{:>10}", "stage", "count");
    for stage in Stage::ALL {
        eprintln!("{:<20}{:>10}", stage.as_str(), h.counts.get(stage));
    }
    eprintln!("{:<20}{:>10}", "total", manifest.entries.len());
    eprintln!(
        "rows {}  eligible {}  shortlist {}  buckets {}  cap {}  cap_hits {}",
        h.n_rows, h.n_eligible, h.n_shortlist, h.n_buckets, h.bucket_cap, h.cap_hits
    );
    Ok(())
}

fn synthesize(spec: &SynthSpec, out_dir: &Path, compact: Option<&SelectionConfig>, exec: Exec) -> Result<(), Failure> {
    spec.validate()?;
    let name = if compact.is_some() { "records.compact.jsonl" } else { "records.raw.jsonl" };
    let rec_path = out_dir.join(name);
    let truth_path = out_dir.join("truth.jsonl");
    let mut rec_w = stream::create(&rec_path)?;
    let mut truth = GroundTruth::default();
    const CHUNK: usize = 4096;
    for start in (0..spec.n_samples).step_by(CHUNK) {
        let len = CHUNK.min(spec.n_samples - start);
        let lines = par::map_range(exec, len, |k| -> Result<_, Error> {
            let (rec, row) = generate_one(spec, start + k);
            let line = match compact {
                Some(cfg) => reduce_to_compact(&Record::Raw(rec), cfg)?.to_line(),
                None => rec.to_line(),
            };
            Ok((line, row))
        });
        for r in lines {
            let (line, row) = r?;
            rec_w.write_all(line.as_bytes()).map_err(|e| Failure::io(&rec_path, e))?;
            rec_w.write_all(b"\n").map_err(|e| Failure::io(&rec_path, e))?;
            truth.rows.push(row);
        }
    }
    rec_w.flush().map_err(|e| Failure::io(&rec_path, e))?;
    stream::write_all(&truth_path, &truth.to_jsonl())?;
    eprintln!("wrote {} samples to {}", spec.n_samples, rec_path.display());
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn report(
    manifest: &Path,
    truth: &Path,
    out: &Path,
    n_skills: Option<usize>,
    baseline: Option<&Path>,
    exec: Exec,
) -> Result<(), Failure> {
    let manifest = CoresetManifest::parse(&read_text(manifest)?)?;
    let truth = GroundTruth::parse(&read_text(truth)?)?;
    let n_skills = n_skills.unwrap_or_else(|| truth.n_skills());
    let report = manifest_coverage(&manifest.entries, &truth, n_skills)?;
    let mut csv = report.to_csv();
    eprintln!(
        "coverage {:.4} ({}/{} skills), gini {:.4}",
        report.coverage, report.skills_covered, n_skills, report.gini
    );
    if let Some(path) = baseline {
        let rows = stream::read_scores(path, exec)?;
        let cfg = &manifest.header.config;
        let pop = Population::new(&rows, cfg, exec)?;
        let top = top_by_quality(&pop, manifest.header.budget, exec);
        let base = coverage_report(
            top.iter().map(|&i| (pop.rows[i].sample_id.as_str(), Some(pop.rows[i].q))),
            &truth,
            n_skills,
        )?;
        eprintln!("baseline coverage {:.4} ({}/{} skills)", base.coverage, base.skills_covered, n_skills);
        for line in base.to_csv().lines().skip(1) {
            csv += &format!("baseline_{line}\n");
        }
    }
    stream::write_all(out, &csv)
}

fn check(instances: usize, seed: u64) -> Result<(), Failure> {
    let start = Instant::now();
    let report = coreset_oracle::run_check(instances, seed);
    for f in report.failures.iter().take(20) {
        eprintln!("{f}");
    }
    let matched = report
        .selection_matches
        .min(report.scoring_matches)
        .min(report.invariant_passes);
    println!("{matched}/{instances} match");
    eprintln!(
        "selection {}/{instances}, scoring {}/{instances}, invariants {}/{instances} in {:.1}s",
        report.selection_matches,
        report.scoring_matches,
        report.invariant_passes,
        start.elapsed().as_secs_f64()
    );
    if report.all_match() {
        Ok(())
    } else {
        Err(Failure::config(format!("{} mismatches", report.failures.len())))
    }
}
