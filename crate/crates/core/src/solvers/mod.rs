//! Classical reconstruction baselines: filtered backprojection, Nesterov
//! accelerated gradient descent on least squares, and Chambolle-Pock with an
//! isotropic total-variation penalty.

mod agd;
mod chambolle_pock;
mod fbp;
pub mod tv;

use serde::{Deserialize, Serialize};

pub use agd::agd;
pub use chambolle_pock::chambolle_pock_tv;
pub use fbp::{fbp, FilterKind};

use crate::error::{Error, Result};
use crate::projector::{LinearOperator, Sinogram, Stage};

/// Relative safety margin added to power-iteration norm estimates before
/// they set step sizes.
pub const NORM_MARGIN: f64 = 0.02;

/// Objective growth (relative to the initial value) treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Fraction of the largest stable step, in (0, 1].
    pub step_scale: f64,
    /// Ramp filter apodization (FBP only).
    pub filter: FilterKind,
    /// Stops early once `||x_k+1 - x_k|| <= tolerance * ||x_k+1||`; 0 runs
    /// all `max_iters`.
    pub tolerance: f64,
    /// Seeds the power iteration, the only randomness in the solvers.
    pub seed: u64,
    /// Power-iteration steps for norm estimates.
    pub norm_iters: usize,
    /// Project iterates onto `x >= 0`.
    pub nonnegativity: bool,
    /// Start iterative solvers from the FBP image instead of zero.
    pub warm_start_fbp: bool,
    /// TV weight for Chambolle-Pock. `None` means "choose by validation".
    pub tv_lambda: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 100,
            step_scale: 1.0,
            filter: FilterKind::RamLak,
            tolerance: 0.0,
            seed: 0,
            norm_iters: 50,
            nonnegativity: false,
            warm_start_fbp: false,
            tv_lambda: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step_scale must lie in (0, 1], got {}",
                self.step_scale
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be non-negative".into()));
        }
        if let Some(l) = self.tv_lambda {
            if !(l >= 0.0) {
                return Err(Error::InvalidConfig(format!("TV weight must be non-negative, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    LeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    Tv { lambda: f64 },
}

/// `min_x D(Ax, y) + R(x)`.
#[derive(Clone, Debug)]
pub struct VariationalProblem {
    pub operator: LinearOperator,
    pub data: Sinogram,
    pub fidelity: Fidelity,
    pub regularizer: Regularizer,
}

impl VariationalProblem {
    pub fn new(operator: LinearOperator, data: Sinogram, regularizer: Regularizer) -> Result<Self> {
        data.expect_stage(Stage::LineIntegral)?;
        if data.geometry != operator.geometry {
            return Err(Error::Dimension("data geometry does not match operator geometry".into()));
        }
        if let Regularizer::Tv { lambda } = regularizer {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidConfig(format!("TV weight must be non-negative, got {lambda}")));
            }
        }
        Ok(VariationalProblem {
            operator,
            data,
            fidelity: Fidelity::LeastSquares,
            regularizer,
        })
    }

    /// `1/2 ||Ax - y||^2 (+ lambda TV(x))` for image values `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.operator.range_len()];
        self.operator.forward_into(x, &mut ax);
        let fit = half_sq_dist(&ax, &self.data.values);
        match self.regularizer {
            Regularizer::None => fit,
            Regularizer::Tv { lambda } => {
                fit + lambda * tv::tv_value_raw(x, self.operator.grid.width, self.operator.grid.height)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations_run: usize,
    /// Objective at the initial point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub primal_dual_gap_trace: Option<Vec<f64>>,
    /// Objective of the running average of the iterates (Chambolle-Pock).
    pub ergodic_objective_trace: Option<Vec<f64>>,
    pub wall_time_s: f64,
    pub config_echo: SolverConfig,
}

pub(crate) fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
}

pub(crate) fn relative_step(new: &[f64], old: &[f64]) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = new.iter().map(|a| a * a).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Largest absolute data value, the scale TV weights are expressed against.
pub fn data_scale(y: &Sinogram) -> f64 {
    y.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// TV weights searched during validation: half decades from `1e-4` to
/// `1e1`, times `scale`.
pub fn lambda_grid(scale: f64) -> Vec<f64> {
    (0..=10).map(|i| scale * 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

/// Picks the candidate with the highest score; ties go to the earlier one.
pub fn select_best<T: Copy>(candidates: &[T], mut score: impl FnMut(T) -> Result<f64>) -> Result<(T, f64)> {
    let mut best: Option<(T, f64)> = None;
    for &c in candidates {
        let s = score(c)?;
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.ok_or_else(|| Error::EmptyInput("no candidates".into()))
}

/// Wall-clock timer that degrades to zero on targets without a clock.
pub(crate) struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub(crate) fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}
