//! Browser demo. A [`Session`] holds one random phantom and its latest
//! simulated scan; [`Demo`] is the thin wasm-bindgen wrapper around it.

use tomobench::geometry::{AngularSelection, FanBeamGeometry, ImageGrid};
use tomobench::metrics::{psnr, ssim, RangeRule};
use tomobench::phantoms::EllipsePhantom;
use tomobench::preprocess::{counts_to_line_integrals, simulate_counts, subset_sinogram, DetectorCalibration, PreprocessOptions};
use tomobench::projector::{Image, Sinogram};
use tomobench::registry::{reconstruct, ReconstructorDescriptor};
use tomobench::solvers::{data_scale, FilterKind, SolverConfig};
use wasm_bindgen::prelude::*;

const FOV_MM: f64 = 48.0;
const PHANTOM_RADIUS_MM: f64 = 20.0;
const PHANTOM_MU: f64 = 0.02;

/// Gray RGBA pixels plus the scores of a reconstruction.
#[derive(Clone, Debug)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<u8>,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub struct Session {
    grid: ImageGrid,
    phantom: EllipsePhantom,
    reference: Image,
    scan: Option<Sinogram>,
    seed: u64,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Maps `values` linearly from `[lo, hi]` to 0..=255, clamping outside.
pub fn to_rgba(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .flat_map(|&v| {
            let g = (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

impl Session {
    pub fn new(size: usize, seed: u64) -> Result<Self, String> {
        if !(16..=256).contains(&size) {
            return Err(format!("image size must lie in 16..=256, got {size}"));
        }
        let grid = ImageGrid::square(size, FOV_MM / size as f64);
        let phantom = EllipsePhantom::random(seed, PHANTOM_RADIUS_MM, PHANTOM_MU);
        let reference = phantom.rasterize(&grid, 2);
        Ok(Session {
            grid,
            phantom,
            reference,
            scan: None,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.grid.width
    }

    pub fn reference_rgba(&self) -> Vec<u8> {
        let (lo, hi) = min_max(&self.reference.values);
        to_rgba(&self.reference.values, lo, hi)
    }

    /// Simulates `n_angles` projections over the full circle with Poisson
    /// noise at `photons` per unattenuated ray (0 means noise-free), then
    /// keeps the first `wedge_deg` degrees. Returns the line-integral
    /// sinogram as RGBA, one row per kept angle.
    pub fn simulate(&mut self, n_angles: usize, photons: f64, wedge_deg: f64) -> Result<Frame, String> {
        if n_angles < 2 || n_angles > 1440 {
            return Err(format!("angle count must lie in 2..=1440, got {n_angles}"));
        }
        let n_det = self.grid.width * 3 / 2;
        let geometry = FanBeamGeometry::desk_scale(n_det, n_angles, FOV_MM * 1.5);
        let ell = self.phantom.analytic_sinogram(&geometry);
        let y = if photons > 0.0 {
            let cal = DetectorCalibration::uniform(n_det, 0.0, 1.0).map_err(err)?;
            let counts = simulate_counts(&ell, &cal, photons, self.seed, true).map_err(err)?;
            counts_to_line_integrals(&counts, &cal, &PreprocessOptions::default()).map_err(err)?
        } else {
            ell
        };
        let kept = ((wedge_deg / 360.0) * n_angles as f64).round() as usize;
        let sel = if kept >= n_angles {
            AngularSelection::Full
        } else {
            AngularSelection::LimitedWedge { first_k_rows: kept }
        };
        let y = subset_sinogram(&y, &sel).map_err(err)?;
        let (lo, hi) = min_max(&y.values);
        let frame = Frame {
            width: y.n_detector(),
            height: y.n_angles(),
            rgba: to_rgba(&y.values, lo.max(0.0), hi),
            psnr_db: f64::NAN,
            ssim: f64::NAN,
        };
        self.scan = Some(y);
        Ok(frame)
    }

    fn run(&self, d: ReconstructorDescriptor) -> Result<Frame, String> {
        let y = self.scan.as_ref().ok_or("simulate a scan first")?;
        let x = reconstruct(&d, y, &self.grid).map_err(err)?;
        let rule = RangeRule::RefMinMax;
        let (lo, hi) = min_max(&self.reference.values);
        Ok(Frame {
            width: x.width(),
            height: x.height(),
            rgba: to_rgba(&x.values, lo, hi),
            psnr_db: psnr(&x, &self.reference, rule).map_err(err)?,
            ssim: ssim(&x, &self.reference, rule).map_err(err)?,
        })
    }

    pub fn fbp(&self, hann: bool) -> Result<Frame, String> {
        let solver = SolverConfig {
            filter: if hann { FilterKind::Hann } else { FilterKind::RamLak },
            ..Default::default()
        };
        self.run(ReconstructorDescriptor::classical("fbp", solver).map_err(err)?)
    }

    /// TV-regularized reconstruction; the weight is `lambda_rel` times the
    /// largest line integral of the current scan.
    pub fn tv(&self, lambda_rel: f64, iters: usize) -> Result<Frame, String> {
        let y = self.scan.as_ref().ok_or("simulate a scan first")?;
        let solver = SolverConfig {
            max_iters: iters,
            tv_lambda: Some(lambda_rel * data_scale(y)),
            seed: self.seed,
            norm_iters: 30,
            ..Default::default()
        };
        self.run(ReconstructorDescriptor::classical("chp_tv", solver).map_err(err)?)
    }
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
    last: Option<Frame>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u32) -> Result<Demo, JsError> {
        let session = Session::new(size, seed as u64).map_err(|e| JsError::new(&e))?;
        Ok(Demo { session, last: None })
    }

    pub fn size(&self) -> usize {
        self.session.size()
    }

    pub fn reference(&self) -> Vec<u8> {
        self.session.reference_rgba()
    }

    pub fn simulate(&mut self, n_angles: usize, photons: f64, wedge_deg: f64) -> Result<Vec<u8>, JsError> {
        let r = self.session.simulate(n_angles, photons, wedge_deg);
        self.keep(r)
    }

    pub fn fbp(&mut self, hann: bool) -> Result<Vec<u8>, JsError> {
        let r = self.session.fbp(hann);
        self.keep(r)
    }

    pub fn tv(&mut self, lambda_rel: f64, iters: usize) -> Result<Vec<u8>, JsError> {
        let r = self.session.tv(lambda_rel, iters);
        self.keep(r)
    }

    /// Width of the last returned frame.
    pub fn width(&self) -> usize {
        self.last.as_ref().map_or(0, |f| f.width)
    }

    pub fn height(&self) -> usize {
        self.last.as_ref().map_or(0, |f| f.height)
    }

    pub fn psnr(&self) -> f64 {
        self.last.as_ref().map_or(f64::NAN, |f| f.psnr_db)
    }

    pub fn ssim(&self) -> f64 {
        self.last.as_ref().map_or(f64::NAN, |f| f.ssim)
    }
}

impl Demo {
    fn keep(&mut self, r: Result<Frame, String>) -> Result<Vec<u8>, JsError> {
        let f = r.map_err(|e| JsError::new(&e))?;
        let rgba = f.rgba.clone();
        self.last = Some(f);
        Ok(rgba)
    }
}
