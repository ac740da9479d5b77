// SPDX-License-Identifier: Apache-2.0

//! Running packages end to end and checking the bundled corpus against its
//! expected findings.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::detectors::FindingKind;
use crate::executor::{explore_package, HookRegistry, Limits, RunConfig};
use crate::loader::{load_package, EnclavePackage, LoadError};
use crate::report::{build_report, replay_witness, Report, ReportOptions, ReplayOutcome};

/// Directory of the corpus shipped with the source tree.
pub fn default_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Package directories under `dir`, sorted by name.
pub fn list_packages(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub limits: Limits,
    pub seed: u64,
    pub workers: usize,
    /// ECALL indices or names to analyze; all when empty.
    pub ecalls: Vec<String>,
    pub disabled: BTreeSet<FindingKind>,
    pub report: ReportOptions,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            limits: Limits::default(),
            seed: 0,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            ecalls: Vec::new(),
            disabled: BTreeSet::new(),
            report: ReportOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("unknown ECALL '{0}'")]
    UnknownEcall(String),
    #[error("hook registration: {0}")]
    Hook(#[from] crate::executor::HookError),
}

pub fn run_config(pkg: &EnclavePackage, opts: &AnalyzeOptions) -> RunConfig {
    let mut cfg = RunConfig::new(pkg);
    cfg.limits = opts.limits;
    cfg.seed = opts.seed;
    for k in &opts.disabled {
        cfg.detectors.disable(*k);
    }
    cfg
}

/// Explore the selected ECALLs of a loaded package and build the report.
pub fn analyze_package(pkg: &EnclavePackage, opts: &AnalyzeOptions) -> Result<Report, AnalyzeError> {
    let only = if opts.ecalls.is_empty() {
        None
    } else {
        let mut idx = Vec::new();
        for key in &opts.ecalls {
            let e = pkg.ecall(key).ok_or_else(|| AnalyzeError::UnknownEcall(key.clone()))?;
            idx.push(e.index);
        }
        Some(idx)
    };
    let hooks = HookRegistry::for_package(pkg)?;
    let cfg = run_config(pkg, opts);
    let runs = explore_package(pkg, &hooks, &cfg, only.as_deref(), opts.workers);
    Ok(build_report(pkg, &cfg, &runs, opts.report))
}

/// Load and analyze the package in `dir`.
pub fn analyze_path(dir: &Path, opts: &AnalyzeOptions) -> Result<(EnclavePackage, Report), AnalyzeError> {
    let pkg = load_package(dir)?;
    let report = analyze_package(&pkg, opts)?;
    Ok((pkg, report))
}

/// Outcome of checking one package.
#[derive(Debug, Clone)]
pub struct PackageVerdict {
    pub name: String,
    pub findings: usize,
    pub high: usize,
    pub replays_confirmed: usize,
    pub replays_total: usize,
    /// Empty when the package matches its expectations.
    pub problems: Vec<String>,
    pub report: Option<Report>,
}

impl PackageVerdict {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Compare a report with the package's expected findings and replay every
/// exact witness.
pub fn check_report(pkg: &EnclavePackage, report: &Report) -> PackageVerdict {
    let mut problems = Vec::new();
    let mut confirmed = 0;
    let mut total = 0;
    let label_pc = |label: &str| pkg.program.symbol(label).map(|(a, _)| a);
    let expected = pkg.expected.clone().unwrap_or_else(|| crate::loader::ExpectedFindings {
        exhaustive: true,
        findings: Vec::new(),
    });
    for exp in &expected.findings {
        let hit = report.findings().any(|(e, f)| {
            e.name == exp.ecall && f.kind == exp.kind && f.severity == exp.severity && Some(f.pc) == label_pc(&exp.pc)
        });
        if !hit {
            problems.push(format!(
                "missing expected {} {} at {} in {}",
                exp.severity, exp.kind, exp.pc, exp.ecall
            ));
        }
    }
    for (e, f) in report.findings() {
        if expected.exhaustive && f.severity == "high" {
            let listed = expected.findings.iter().any(|exp| {
                e.name == exp.ecall && f.kind == exp.kind && f.severity == exp.severity && Some(f.pc) == label_pc(&exp.pc)
            });
            if !listed {
                problems.push(format!("unexpected high {} at {} in {}", f.kind, f.location, e.name));
            }
        }
        if f.confidence != "exact" {
            continue;
        }
        total += 1;
        let Some(ecall) = pkg.ecalls.iter().find(|x| x.index == e.index) else {
            problems.push(format!("finding {} names an unknown ECALL", f.id));
            continue;
        };
        match replay_witness(pkg, ecall, f) {
            Ok(ReplayOutcome::Confirmed) => confirmed += 1,
            Ok(ReplayOutcome::Diverged(step)) => {
                problems.push(format!("finding {} ({} at {}): replay diverged at step {step}", f.id, f.kind, f.location))
            }
            Err(err) => problems.push(format!("finding {}: {err}", f.id)),
        }
    }
    for e in &report.ecalls {
        if let Some(err) = &e.error {
            problems.push(format!("ecall {}: {err}", e.name));
        }
    }
    PackageVerdict {
        name: pkg.name.clone(),
        findings: report.finding_count(),
        high: report.findings().filter(|(_, f)| f.severity == "high").count(),
        replays_confirmed: confirmed,
        replays_total: total,
        problems,
        report: Some(report.clone()),
    }
}

/// Analyze and check every package under `dir`.
pub fn verify_corpus(dir: &Path, opts: &AnalyzeOptions) -> std::io::Result<Vec<PackageVerdict>> {
    let mut out = Vec::new();
    for path in list_packages(dir)? {
        let verdict = match analyze_path(&path, opts) {
            Ok((pkg, report)) => check_report(&pkg, &report),
            Err(e) => PackageVerdict {
                name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                findings: 0,
                high: 0,
                replays_confirmed: 0,
                replays_total: 0,
                problems: vec![e.to_string()],
                report: None,
            },
        };
        out.push(verdict);
    }
    Ok(out)
}
