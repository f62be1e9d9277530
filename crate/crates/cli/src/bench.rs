//! The `benchmark` subcommand.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};

use tomobench::dataio::{build_manifest, Split};
use tomobench::metrics::{summary_markdown, write_csv, CsvRow, SummaryEntry};
use tomobench::registry::{Category, ExternalConfig, ReconstructorDescriptor};
use tomobench::tasks::{build_task, run_experiment, tune_lambda, write_params, RunOptions, TaskName};

use crate::config::Overrides;
use crate::BenchmarkArgs;

fn parse_external(spec: &str, timeout_s: f64) -> Result<ReconstructorDescriptor> {
    let (name, cmd) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("--external expects name=program [args], got '{spec}'"))?;
    let mut words = cmd.split_whitespace();
    let program = words.next().ok_or_else(|| anyhow!("--external '{name}' has no program"))?;
    Ok(ReconstructorDescriptor::external(
        name.trim(),
        Category::External,
        ExternalConfig {
            program: program.into(),
            args: words.map(String::from).collect(),
            timeout_s,
        },
    ))
}

struct Outputs<'a> {
    dir: &'a Path,
    rows: Vec<CsvRow>,
    entries: Vec<SummaryEntry>,
    failures: Vec<String>,
}

impl Outputs<'_> {
    /// Rewrites every table from scratch, so an interrupted run leaves
    /// complete files for the finished (task, method) pairs.
    fn flush(&self) -> Result<()> {
        let mut csv = Vec::new();
        write_csv(&mut csv, &self.rows)?;
        write_atomic(&self.dir.join("results.csv"), &csv)?;
        write_atomic(&self.dir.join("summary.md"), summary_markdown(&self.entries).as_bytes())?;
        if !self.failures.is_empty() {
            write_atomic(&self.dir.join("failures.txt"), (self.failures.join("\n") + "\n").as_bytes())?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

pub fn run(a: &BenchmarkArgs, seed: Option<u64>) -> Result<ExitCode> {
    let manifest = build_manifest(&a.data_root)?;
    let base = a.common.resolve_base(seed, Some(&a.data_root.join("params.toml")))?;
    let split: Split = a.split.parse()?;
    let mut tasks = Overrides::list(&a.common.task)
        .iter()
        .map(|t| t.parse::<TaskName>())
        .collect::<Result<Vec<_>, _>>()?;
    if tasks.is_empty() {
        tasks.push(base.task.name);
    }
    let mut methods = Overrides::list(&a.common.method);
    if methods.is_empty() {
        methods.push(base.method.clone());
    }
    let externals = a
        .external
        .iter()
        .map(|s| parse_external(s, a.timeout))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_params(&a.out.join("effective_params.toml"), &base)?;
    let mut out = Outputs {
        dir: &a.out,
        rows: Vec::new(),
        entries: Vec::new(),
        failures: Vec::new(),
    };
    let opts = RunOptions {
        jobs: a.jobs,
        keep_images: false,
    };

    for &task in &tasks {
        for method in &methods {
            let mut p = base.clone();
            p.task = build_task(task);
            p.method = method.clone();
            let result = (|| -> Result<()> {
                let mut d = match externals.iter().find(|d| &d.name == method) {
                    Some(d) => d.clone(),
                    None => p.descriptor()?,
                };
                if d.external.is_none() && method == "chp_tv" && d.solver.tv_lambda.is_none() {
                    let search = tune_lambda(&p, &manifest, &d, a.jobs)?;
                    for (l, s) in &search.table {
                        eprintln!("  {task} chp_tv lambda {l:.4e}: validation SSIM {s:.4}");
                    }
                    eprintln!("{task} chp_tv: lambda {:.4e} (validation SSIM {:.4})", search.lambda, search.mean_ssim);
                    d.solver.tv_lambda = Some(search.lambda);
                    p.solver.tv_lambda = Some(search.lambda);
                }
                write_params(&a.out.join("params").join(format!("{task}__{method}.toml")), &p)?;
                let run = run_experiment(&p, &manifest, split, &d, opts)?;
                for (id, msg) in run.failures() {
                    eprintln!("{task} {method} slice {id}: {msg}");
                    out.failures.push(format!("{task}\t{method}\t{id}\t{msg}"));
                }
                out.rows.extend(run.records().into_iter().map(|record| CsvRow {
                    task: task.to_string(),
                    method: method.clone(),
                    record,
                }));
                match run.summary {
                    Some(summary) => {
                        eprintln!("{task} {method}: SSIM {}", summary.ssim.cell());
                        out.entries.push(SummaryEntry {
                            task: task.to_string(),
                            method: method.clone(),
                            summary,
                        });
                    }
                    None => eprintln!("{task} {method}: every slice failed"),
                }
                Ok(())
            })();
            out.flush()?;
            result.with_context(|| format!("{task} / {method}"))?;
        }
    }

    print!("{}", summary_markdown(&out.entries));
    if !out.failures.is_empty() {
        bail!(
            "{} slice reconstructions failed (see {})",
            out.failures.len(),
            a.out.join("failures.txt").display()
        );
    }
    Ok(ExitCode::SUCCESS)
}
