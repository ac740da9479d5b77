// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgx_symex::corpus::{analyze_path, default_corpus_dir, verify_corpus, AnalyzeOptions};
use sgx_symex::detectors::FindingKind;
use sgx_symex::executor::Limits;
use sgx_symex::report::{explain, Report, ReportOptions};

#[derive(Parser)]
#[command(name = "sgx-symex", version, about = "Symbolic vulnerability analysis of enclave ECALL interfaces")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one enclave package. Exit status: 0 clean, 1 findings, 2 error.
    Analyze {
        /// Package directory (manifest.json + enclave.eir).
        package: PathBuf,
        /// Only analyze this ECALL (index or name); repeatable.
        #[arg(long = "ecall")]
        ecalls: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
        /// Emit the JSON report instead of the text digest.
        #[arg(long)]
        json: bool,
        /// Write the report to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep complete provenance chains.
        #[arg(long)]
        verbose_provenance: bool,
    },
    /// Analyze the bundled corpus and check it against the expected findings.
    CorpusVerify {
        /// Corpus directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Turn a detector off (negative control for the harness).
        #[arg(long = "disable-detector", hide = true)]
        disable: Vec<String>,
    },
    /// Print trace, provenance, constraints and witness of one finding.
    Explain {
        /// Finding id, e.g. `0.1`.
        id: String,
        /// JSON report produced by `analyze --json`.
        report: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Wall-clock limit per ECALL.
    #[arg(long, default_value_t = Limits::default().timeout_sec)]
    timeout_sec: u64,
    /// States created per ECALL.
    #[arg(long, default_value_t = Limits::default().max_states)]
    max_states: u64,
    /// Steps per path.
    #[arg(long, default_value_t = Limits::default().max_steps)]
    max_steps: u64,
    /// Visits of one branch per path.
    #[arg(long, default_value_t = Limits::default().loop_bound)]
    loop_bound: u32,
    /// ECALLs analyzed concurrently (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn options(&self) -> AnalyzeOptions {
        let mut o = AnalyzeOptions::default();
        o.limits.timeout_sec = self.timeout_sec;
        o.limits.max_states = self.max_states;
        o.limits.max_steps = self.max_steps;
        o.limits.loop_bound = self.loop_bound;
        o.seed = self.seed;
        if let Some(w) = self.workers {
            o.workers = w.max(1);
        }
        o
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Command::Analyze {
            package,
            ecalls,
            run,
            json,
            out,
            verbose_provenance,
        } => {
            let mut opts = run.options();
            opts.ecalls = ecalls;
            opts.report = ReportOptions { verbose_provenance };
            let (pkg, report) = match analyze_path(&package, &opts) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            for w in &pkg.warnings {
                log::warn!("{}: {w}", pkg.name);
            }
            let doc = if json { report.to_json() + "\n" } else { report.to_text() };
            match out {
                Some(path) => {
                    if let Err(e) = fs::write(&path, doc) {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{doc}"),
            }
            ExitCode::from(if report.finding_count() > 0 { 1 } else { 0 })
        }
        Command::CorpusVerify { corpus, run, disable } => {
            let mut opts = run.options();
            for name in &disable {
                match FindingKind::from_name(name) {
                    Some(k) => {
                        opts.disabled.insert(k);
                    }
                    None => {
                        eprintln!("error: unknown detector '{name}'");
                        return ExitCode::from(2);
                    }
                }
            }
            let dir = corpus.unwrap_or_else(default_corpus_dir);
            let verdicts = match verify_corpus(&dir, &opts) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {}: {e}", dir.display());
                    return ExitCode::from(2);
                }
            };
            let mut failed = 0;
            for v in &verdicts {
                println!(
                    "{:<4} {:<28} findings {:>2} (high {:>2}), replays {}/{}",
                    if v.ok() { "ok" } else { "FAIL" },
                    v.name,
                    v.findings,
                    v.high,
                    v.replays_confirmed,
                    v.replays_total
                );
                for p in &v.problems {
                    println!("       {p}");
                }
                if !v.ok() {
                    failed += 1;
                }
            }
            println!("{} package(s), {failed} failed", verdicts.len());
            if verdicts.is_empty() || failed > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Explain { id, report } => {
            let text = match fs::read_to_string(&report) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", report.display());
                    return ExitCode::from(2);
                }
            };
            let result = Report::from_json(&text).and_then(|r| explain(&r, &id));
            match result {
                Ok(s) => {
                    print!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
