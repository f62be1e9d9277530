//! Raw counts to line integrals: dark/flat correction, negative log, and
//! angular subsetting. Also a count simulator for desk-scale experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AngularSelection;
use crate::projector::{Sinogram, Stage};

/// Smallest transmission passed to the logarithm by default.
pub const DEFAULT_TRANSMISSION_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Lower clamp for transmission values; `None` disables clamping, in
    /// which case non-positive transmissions are a domain error.
    pub transmission_floor: Option<f64>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            transmission_floor: Some(DEFAULT_TRANSMISSION_FLOOR),
        }
    }
}

/// Detector offset (dark) and sensitivity (flat) frames.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorCalibration {
    /// One value per detector pixel.
    pub dark: Vec<f64>,
    /// One value per detector pixel, or a full `[angle][detector]` map.
    pub flat: Vec<f64>,
}

impl DetectorCalibration {
    pub fn new(dark: Vec<f64>, flat: Vec<f64>) -> Result<Self> {
        let cal = DetectorCalibration { dark, flat };
        cal.validate()?;
        Ok(cal)
    }

    /// Averages several flat frames into one per-pixel flat field.
    pub fn from_flat_frames(dark: Vec<f64>, flats: &[Vec<f64>]) -> Result<Self> {
        let first = flats
            .first()
            .ok_or_else(|| Error::CalibrationInvalid("no flat frames".into()))?;
        if flats.iter().any(|f| f.len() != first.len()) {
            return Err(Error::CalibrationInvalid("flat frames differ in length".into()));
        }
        let n = flats.len() as f64;
        let flat = (0..first.len())
            .map(|j| flats.iter().map(|f| f[j]).sum::<f64>() / n)
            .collect();
        DetectorCalibration::new(dark, flat)
    }

    /// Uniform calibration: every pixel has the same dark and flat level.
    pub fn uniform(n_detector: usize, dark: f64, flat: f64) -> Result<Self> {
        DetectorCalibration::new(vec![dark; n_detector], vec![flat; n_detector])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dark.len();
        if n == 0 {
            return Err(Error::CalibrationInvalid("empty dark frame".into()));
        }
        if self.flat.len() % n != 0 || self.flat.is_empty() {
            return Err(Error::CalibrationInvalid(format!(
                "flat field length {} is not a multiple of detector count {n}",
                self.flat.len()
            )));
        }
        for (i, &f) in self.flat.iter().enumerate() {
            let d = self.dark[i % n];
            if !(f - d > 0.0) {
                return Err(Error::CalibrationInvalid(format!(
                    "flat ({f}) <= dark ({d}) at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    fn check_shape(&self, n_angles: usize, n_det: usize) -> Result<()> {
        if self.dark.len() != n_det
            || (self.flat.len() != n_det && self.flat.len() != n_det * n_angles)
        {
            return Err(Error::Dimension(format!(
                "calibration (dark {}, flat {}) does not fit a {n_angles}x{n_det} sinogram",
                self.dark.len(),
                self.flat.len()
            )));
        }
        Ok(())
    }

    fn flat_at(&self, i: usize, j: usize) -> f64 {
        let n = self.dark.len();
        if self.flat.len() == n {
            self.flat[j]
        } else {
            self.flat[i * n + j]
        }
    }
}

/// `(raw - dark) / (flat - dark)`, clamped below at the transmission floor.
pub fn flat_dark_correct(
    raw: &Sinogram,
    cal: &DetectorCalibration,
    opts: &PreprocessOptions,
) -> Result<Sinogram> {
    raw.expect_stage(Stage::Counts)?;
    cal.validate()?;
    let (na, nd) = (raw.n_angles(), raw.n_detector());
    cal.check_shape(na, nd)?;
    let mut values = Vec::with_capacity(raw.values.len());
    for i in 0..na {
        for j in 0..nd {
            let d = cal.dark[j];
            let t = (raw.values[i * nd + j] - d) / (cal.flat_at(i, j) - d);
            values.push(match opts.transmission_floor {
                Some(floor) => t.max(floor),
                None => t,
            });
        }
    }
    Ok(Sinogram {
        geometry: raw.geometry.clone(),
        stage: Stage::Transmission,
        values,
        noise_note: raw.noise_note.clone(),
    })
}

/// Beer-Lambert inversion: `-ln(t)`.
pub fn neg_log(t: &Sinogram) -> Result<Sinogram> {
    t.expect_stage(Stage::Transmission)?;
    if let Some(i) = t.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!(
            "transmission {} at index {i} is not positive",
            t.values[i]
        )));
    }
    Ok(Sinogram {
        geometry: t.geometry.clone(),
        stage: Stage::LineIntegral,
        values: t.values.iter().map(|v| -v.ln()).collect(),
        noise_note: t.noise_note.clone(),
    })
}

/// Correction followed by the negative log.
pub fn counts_to_line_integrals(
    raw: &Sinogram,
    cal: &DetectorCalibration,
    opts: &PreprocessOptions,
) -> Result<Sinogram> {
    neg_log(&flat_dark_correct(raw, cal, opts)?)
}

/// Keeps the rows chosen by `sel` and attaches the matching sub-geometry.
pub fn subset_sinogram(y: &Sinogram, sel: &AngularSelection) -> Result<Sinogram> {
    let (geometry, rows) = y.geometry.apply_selection(sel)?;
    let mut values = Vec::with_capacity(rows.len() * y.n_detector());
    for &r in &rows {
        values.extend_from_slice(y.row(r));
    }
    Ok(Sinogram {
        geometry,
        stage: y.stage,
        values,
        noise_note: y.noise_note.clone(),
    })
}

/// Same as [`subset_sinogram`] for a per-angle flat map; per-pixel
/// calibrations are returned unchanged.
pub fn subset_calibration(
    cal: &DetectorCalibration,
    n_angles: usize,
    sel: &AngularSelection,
) -> Result<DetectorCalibration> {
    let n = cal.dark.len();
    if cal.flat.len() == n {
        return Ok(cal.clone());
    }
    let rows = sel.row_indices(n_angles)?;
    let mut flat = Vec::with_capacity(rows.len() * n);
    for r in rows {
        flat.extend_from_slice(&cal.flat[r * n..(r + 1) * n]);
    }
    Ok(DetectorCalibration {
        dark: cal.dark.clone(),
        flat,
    })
}

/// Simulated detector counts for line integrals `ell`.
///
/// `photons_i0` is the expected number of photons per unattenuated ray. The
/// noise-free count is `dark + (flat - dark) * exp(-ell)`; with `poisson`
/// set, the photon number `N ~ Poisson(I0 exp(-ell))` is drawn and the count
/// becomes `dark + (flat - dark) * N / I0`.
pub fn simulate_counts(
    ell: &Sinogram,
    cal: &DetectorCalibration,
    photons_i0: f64,
    seed: u64,
    poisson: bool,
) -> Result<Sinogram> {
    ell.expect_stage(Stage::LineIntegral)?;
    cal.validate()?;
    if !(photons_i0 > 0.0) {
        return Err(Error::Domain(format!("photon count I0 must be positive, got {photons_i0}")));
    }
    let (na, nd) = (ell.n_angles(), ell.n_detector());
    cal.check_shape(na, nd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(ell.values.len());
    for i in 0..na {
        for j in 0..nd {
            let l = ell.values[i * nd + j];
            if !l.is_finite() {
                return Err(Error::Domain(format!("line integral at ({i}, {j}) is not finite")));
            }
            let d = cal.dark[j];
            let gain = cal.flat_at(i, j) - d;
            let transmission = (-l).exp();
            let t = if poisson {
                let mean = photons_i0 * transmission;
                let n = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::Domain(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                n / photons_i0
            } else {
                transmission
            };
            values.push(d + gain * t);
        }
    }
    let mut out = Sinogram::from_values(ell.geometry.clone(), Stage::Counts, values)?;
    out.noise_note = if poisson {
        format!("Poisson photon noise, I0 = {photons_i0}, seed {seed}")
    } else {
        "noise-free".into()
    };
    Ok(out)
}
