//! Flags shared by several subcommands, layered over a parameter file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;

use tomobench::solvers::FilterKind;
use tomobench::tasks::{build_task, read_params, ExperimentParams, TaskName};

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Parameter file; flags given here take precedence over it
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Task name (benchmark: comma-separated list)
    #[arg(long)]
    pub task: Option<String>,
    /// Method name: fbp, agd or chp_tv (benchmark: comma-separated list)
    #[arg(long)]
    pub method: Option<String>,
    /// TV weight for chp_tv
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Iteration budget for agd and chp_tv
    #[arg(long)]
    pub iters: Option<usize>,
    /// FBP ramp filter: ram_lak or hann
    #[arg(long)]
    pub filter: Option<String>,
}

impl Overrides {
    /// Flags over `--params` over `fallback` (if it exists) over defaults.
    pub fn resolve(&self, seed: Option<u64>, fallback: Option<&Path>) -> Result<ExperimentParams> {
        let mut p = self.base(fallback)?;
        if let Some(t) = &self.task {
            if t.contains(',') {
                bail!("--task takes a single name here, got '{t}'");
            }
            p.task = build_task(t.parse::<TaskName>()?);
        }
        if let Some(m) = &self.method {
            if m.contains(',') {
                bail!("--method takes a single name here, got '{m}'");
            }
            p.method = m.clone();
        }
        self.apply_solver(&mut p, seed)?;
        Ok(p)
    }

    /// Like [`Overrides::resolve`] but leaves task and method to the caller.
    pub fn resolve_base(&self, seed: Option<u64>, fallback: Option<&Path>) -> Result<ExperimentParams> {
        let mut p = self.base(fallback)?;
        self.apply_solver(&mut p, seed)?;
        Ok(p)
    }

    fn base(&self, fallback: Option<&Path>) -> Result<ExperimentParams> {
        Ok(match (&self.params, fallback) {
            (Some(path), _) => read_params(path)?,
            (None, Some(path)) if path.is_file() => read_params(path)?,
            _ => ExperimentParams::new(TaskName::FullData, "fbp"),
        })
    }

    fn apply_solver(&self, p: &mut ExperimentParams, seed: Option<u64>) -> Result<()> {
        if let Some(s) = seed {
            p.seed = s;
        }
        if let Some(l) = self.lambda {
            p.solver.tv_lambda = Some(l);
        }
        if let Some(n) = self.iters {
            p.solver.max_iters = n;
        }
        if let Some(f) = &self.filter {
            p.solver.filter = f.parse::<FilterKind>()?;
        }
        p.solver.validate()?;
        Ok(())
    }

    pub fn list(value: &Option<String>) -> Vec<String> {
        value
            .iter()
            .flat_map(|v| v.split(','))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }
}
