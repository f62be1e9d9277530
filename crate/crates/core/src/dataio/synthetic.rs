//! Phantom-generated datasets in the on-disk layout, for tests and demos.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{save_matrix, FileFormat, Mode, SplitTable, RAW_EXTENSION};
use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, ImageGrid};
use crate::phantoms::EllipsePhantom;
use crate::preprocess::{simulate_counts, DetectorCalibration};
use crate::projector::{Sinogram, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiniDatasetSpec {
    pub n_validation: usize,
    pub n_test: usize,
    pub geometry: FanBeamGeometry,
    pub reference_grid: ImageGrid,
    pub seed: u64,
    pub phantom_radius_mm: f64,
    pub mu: f64,
    /// Photons per unattenuated ray for modes 1, 2 and 3.
    pub photons: [f64; 3],
    /// Mode-3 line integrals are distorted to `ln(1 + b l) / b`.
    pub beam_hardening: f64,
    pub dark_level: f64,
}

impl Default for MiniDatasetSpec {
    fn default() -> Self {
        MiniDatasetSpec {
            n_validation: 2,
            n_test: 10,
            geometry: FanBeamGeometry::desk_scale(128, 720, 48.0),
            reference_grid: ImageGrid::square(64, 0.5),
            seed: 0,
            phantom_radius_mm: 14.0,
            mu: 0.02,
            photons: [2.0e3, 1.0e5, 2.0e4],
            beam_hardening: 1.5,
            dark_level: 100.0,
        }
    }
}

impl MiniDatasetSpec {
    /// Slice ids, validation first, placed at the start of the canonical
    /// validation and test ranges.
    pub fn ids(&self) -> Vec<(u32, bool)> {
        let table = SplitTable::canonical();
        let first = |i: usize| table.ranges[i].first;
        (0..self.n_validation)
            .map(|k| (first(1) + k as u32, true))
            .chain((0..self.n_test).map(|k| (first(2) + k as u32, false)))
            .collect()
    }

    pub fn phantom(&self, id: u32) -> EllipsePhantom {
        EllipsePhantom::random(self.seed.wrapping_mul(1_000_003).wrapping_add(id as u64), self.phantom_radius_mm, self.mu)
    }
}

fn f32_round(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Writes every slice of `spec` below `root` and returns the ids in order.
/// Sinogram files carry one extra closing projection (a copy of the first
/// row), as full-circle scans often do. Only mode 2 has a reference image,
/// the rasterized phantom.
pub fn write_mini_dataset(root: &Path, spec: &MiniDatasetSpec) -> Result<Vec<u32>> {
    spec.geometry.validate()?;
    spec.reference_grid.validate()?;
    let g = &spec.geometry;
    let n_det = g.detector_pixel_count;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let raw = |p: &Path, rows: usize, cols: usize, v: &[f64]| save_matrix(p, rows, cols, v, FileFormat::RawF32LE);
    let ext = RAW_EXTENSION;

    let mut ids = Vec::new();
    for (id, _) in spec.ids() {
        let phantom = spec.phantom(id);
        let slice_dir = root.join(format!("slice{id:05}"));
        fs::create_dir_all(&slice_dir).map_err(|e| Error::io(&slice_dir, e))?;
        fs::write(slice_dir.join("phantom.txt"), phantom.to_text()).map_err(|e| Error::io(&slice_dir, e))?;
        let ell = phantom.analytic_sinogram(g);

        for (m, mode) in Mode::ALL.into_iter().enumerate() {
            let i0 = spec.photons[m];
            let seed = spec.seed ^ ((id as u64) << 8) ^ m as u64;
            let dir = slice_dir.join(mode.dir_name());
            let mut dark: Vec<f64> = (0..n_det)
                .map(|k| spec.dark_level * (1.0 + 0.05 * (k as f64 * 0.37).sin()))
                .collect();
            f32_round(&mut dark);
            let gain = |k: usize| 1.0 + 0.08 * ((k as f64 / n_det as f64) * std::f64::consts::PI).sin() - 0.04;
            let flat_frame = |drift: f64| {
                let mut f: Vec<f64> = (0..n_det).map(|k| dark[k] + gain(k) * i0 * (1.0 + drift)).collect();
                f32_round(&mut f);
                f
            };
            let flats = [flat_frame(0.005), flat_frame(-0.005)];
            let cal = DetectorCalibration::from_flat_frames(dark.clone(), &flats)?;

            let measured = if mode == Mode::Mode3 {
                let b = spec.beam_hardening;
                let v = ell.values.iter().map(|&l| (1.0 + b * l).ln() / b).collect();
                Sinogram::from_values(g.clone(), Stage::LineIntegral, v)?
            } else {
                ell.clone()
            };
            let counts = simulate_counts(&measured, &cal, i0, seed, true)?;
            let mut rows = counts.values.clone();
            rows.extend_from_slice(&counts.values[..n_det]);
            raw(&dir.join(format!("sinogram.{ext}")), g.n_angles() + 1, n_det, &rows)?;
            raw(&dir.join(format!("dark.{ext}")), 1, n_det, &dark)?;
            for (k, f) in flats.iter().enumerate() {
                raw(&dir.join(format!("flat{}.{ext}", k + 1)), 1, n_det, f)?;
            }
            if mode == Mode::Mode2 {
                let reference = phantom.rasterize(&spec.reference_grid, 4);
                let grid = &spec.reference_grid;
                raw(&dir.join(format!("reconstruction.{ext}")), grid.height, grid.width, &reference.values)?;
            }
        }
        ids.push(id);
    }
    Ok(ids)
}
