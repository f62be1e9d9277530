//! Flat-detector fan-beam acquisition geometry, reconstruction grids and the
//! angular sub-selections used by the limited- and sparse-angle tasks.
//!
//! Conventions: the source sits at `SOD * (cos b, sin b)` for rotation angle
//! `b` (counterclockwise from +x). The flat detector is perpendicular to the
//! source-origin ray, centred on it at distance `SDD` from the source, with
//! its coordinate axis `u` along `(-sin b, cos b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scanner description; defines the forward operator together with an
/// [`ImageGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    #[serde(rename = "source_object_dist_mm")]
    pub source_object_dist: f64,
    #[serde(rename = "source_detector_dist_mm")]
    pub source_detector_dist: f64,
    pub detector_pixel_count: usize,
    #[serde(rename = "detector_pixel_size_mm")]
    pub detector_pixel_size: f64,
    #[serde(rename = "detector_center_offset_mm", default)]
    pub detector_center_offset: f64,
    #[serde(rename = "angles_deg", with = "angle_list")]
    pub angles: Vec<f64>,
}

pub const CANONICAL_SOD_MM: f64 = 431.020;
pub const CANONICAL_SDD_MM: f64 = 529.000;
pub const CANONICAL_DETECTOR_PIXELS: usize = 956;
pub const CANONICAL_DETECTOR_PIXEL_MM: f64 = 0.1496;
pub const CANONICAL_ANGLE_STEP_DEG: f64 = 0.1;
pub const CANONICAL_ANGLE_COUNT: usize = 3600;

/// The 2DeteCT scanner: 956 binned pixels of 149.6 um, SOD 431.020 mm,
/// SDD 529.000 mm, 3600 projections at 0.1 deg. The 3601st projection at
/// 360 deg duplicates the first one and is not part of the geometry.
pub fn canonical_2detect_geometry() -> FanBeamGeometry {
    FanBeamGeometry {
        source_object_dist: CANONICAL_SOD_MM,
        source_detector_dist: CANONICAL_SDD_MM,
        detector_pixel_count: CANONICAL_DETECTOR_PIXELS,
        detector_pixel_size: CANONICAL_DETECTOR_PIXEL_MM,
        detector_center_offset: 0.0,
        angles: uniform_angles(0.0, CANONICAL_ANGLE_STEP_DEG, CANONICAL_ANGLE_COUNT),
    }
}

/// `count` angles `start + i * step`, in degrees.
pub fn uniform_angles(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + i as f64 * step).collect()
}

impl FanBeamGeometry {
    /// Canonical distances with a reduced detector and angle count: `n_det`
    /// pixels sized so the isocenter field of view is `fov_mm`, and
    /// `n_angles` views evenly spread over the full circle.
    pub fn desk_scale(n_det: usize, n_angles: usize, fov_mm: f64) -> Self {
        let mag = CANONICAL_SDD_MM / CANONICAL_SOD_MM;
        FanBeamGeometry {
            source_object_dist: CANONICAL_SOD_MM,
            source_detector_dist: CANONICAL_SDD_MM,
            detector_pixel_count: n_det,
            detector_pixel_size: fov_mm * mag / n_det as f64,
            detector_center_offset: 0.0,
            angles: uniform_angles(0.0, 360.0 / n_angles as f64, n_angles),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if !(self.source_object_dist > 0.0) || !self.source_object_dist.is_finite() {
            return bad(format!(
                "source_object_dist must be positive, got {}",
                self.source_object_dist
            ));
        }
        // Equality is allowed: a detector through the isocenter.
        if !(self.source_detector_dist >= self.source_object_dist)
            || !self.source_detector_dist.is_finite()
        {
            return bad(format!(
                "source_detector_dist ({}) must not be smaller than source_object_dist ({})",
                self.source_detector_dist, self.source_object_dist
            ));
        }
        if self.detector_pixel_count == 0 {
            return bad("detector_pixel_count must be at least 1".into());
        }
        if !(self.detector_pixel_size > 0.0) || !self.detector_pixel_size.is_finite() {
            return bad(format!(
                "detector_pixel_size must be positive, got {}",
                self.detector_pixel_size
            ));
        }
        if !self.detector_center_offset.is_finite() {
            return bad("detector_center_offset must be finite".into());
        }
        if self.angles.is_empty() {
            return bad("angle list is empty".into());
        }
        for (i, &a) in self.angles.iter().enumerate() {
            if !(0.0..360.0).contains(&a) {
                return bad(format!("angle {i} = {a} deg outside [0, 360)"));
            }
            if i > 0 && a <= self.angles[i - 1] {
                return bad(format!("angles not strictly increasing at index {i}"));
            }
        }
        Ok(())
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn magnification(&self) -> f64 {
        self.source_detector_dist / self.source_object_dist
    }

    /// Source position for angle index `i` (mm).
    pub fn source_position(&self, i: usize) -> [f64; 2] {
        let b = self.angles[i].to_radians();
        [
            self.source_object_dist * b.cos(),
            self.source_object_dist * b.sin(),
        ]
    }

    /// Detector coordinate (mm, along the detector axis) of the centre of
    /// pixel `k`, shifted by `sub` pixel widths.
    pub fn detector_coordinate(&self, k: usize, sub: f64) -> f64 {
        let n = self.detector_pixel_count as f64;
        (k as f64 + sub - (n - 1.0) / 2.0) * self.detector_pixel_size + self.detector_center_offset
    }

    /// Fractional detector index of detector coordinate `u`; inverse of
    /// [`Self::detector_coordinate`].
    pub fn detector_index(&self, u: f64) -> f64 {
        let n = self.detector_pixel_count as f64;
        (u - self.detector_center_offset) / self.detector_pixel_size + (n - 1.0) / 2.0
    }

    /// World position of detector coordinate `u` at angle index `i`.
    pub fn detector_point(&self, i: usize, u: f64) -> [f64; 2] {
        let b = self.angles[i].to_radians();
        let (s, c) = b.sin_cos();
        let back = self.source_detector_dist - self.source_object_dist;
        [-back * c - u * s, -back * s + u * c]
    }

    /// Sub-geometry for `sel` plus the sinogram rows it keeps.
    pub fn apply_selection(&self, sel: &AngularSelection) -> Result<(FanBeamGeometry, Vec<usize>)> {
        let rows = sel.row_indices(self.n_angles())?;
        let mut g = self.clone();
        g.angles = rows.iter().map(|&r| self.angles[r]).collect();
        Ok((g, rows))
    }

    /// `n x n` grid centred on the rotation axis with the isocenter-projected
    /// detector pixel as its pixel size.
    pub fn default_grid(&self, n: usize) -> ImageGrid {
        ImageGrid::square(n, self.detector_pixel_size / self.magnification())
    }

    /// Angular step in radians, taken from the first two angles.
    pub fn angular_step_rad(&self) -> Option<f64> {
        (self.angles.len() >= 2).then(|| (self.angles[1] - self.angles[0]).to_radians())
    }
}

/// Reconstruction pixel lattice. Row 0 is the top (largest y) row; pixel
/// `(r, c)` has its centre at `center + ((c - (w-1)/2) * s, ((h-1)/2 - r) * s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    #[serde(rename = "width_px")]
    pub width: usize,
    #[serde(rename = "height_px")]
    pub height: usize,
    #[serde(rename = "pixel_size_mm")]
    pub pixel_size: f64,
    #[serde(rename = "center_mm", default)]
    pub center: [f64; 2],
}

impl ImageGrid {
    pub fn square(n: usize, pixel_size: f64) -> Self {
        ImageGrid {
            width: n,
            height: n,
            pixel_size,
            center: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size > 0.0) || !self.pixel_size.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "pixel_size must be positive, got {}",
                self.pixel_size
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// x of column 0's centre.
    pub fn x0(&self) -> f64 {
        self.center[0] - (self.width as f64 - 1.0) / 2.0 * self.pixel_size
    }

    /// y of row 0's centre.
    pub fn y0(&self) -> f64 {
        self.center[1] + (self.height as f64 - 1.0) / 2.0 * self.pixel_size
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x0() + col as f64 * self.pixel_size,
            self.y0() - row as f64 * self.pixel_size,
        ]
    }

    pub fn field_of_view(&self) -> [f64; 2] {
        [
            self.width as f64 * self.pixel_size,
            self.height as f64 * self.pixel_size,
        ]
    }
}

/// Which sinogram rows a task keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularSelection {
    Full,
    /// The first `first_k_rows` projections (a contiguous wedge).
    LimitedWedge { first_k_rows: usize },
    /// `n_kept` projections evenly spread over all rows.
    SparseStride { n_kept: usize },
}

impl AngularSelection {
    /// Re-expresses a wedge defined on `from_total` rows for a scan with
    /// `to_total` rows over the same full circle, keeping its angular span.
    /// Sparse and full selections are independent of the row count.
    pub fn rescaled(&self, from_total: usize, to_total: usize) -> Result<Self> {
        match *self {
            AngularSelection::LimitedWedge { first_k_rows: k } if from_total != to_total => {
                if from_total == 0 || (k * to_total) % from_total != 0 {
                    return Err(Error::InvalidSelection(format!(
                        "wedge of {k}/{from_total} rows has no exact equivalent on {to_total} rows"
                    )));
                }
                Ok(AngularSelection::LimitedWedge {
                    first_k_rows: k * to_total / from_total,
                })
            }
            other => Ok(other),
        }
    }

    pub fn row_indices(&self, total: usize) -> Result<Vec<usize>> {
        match *self {
            AngularSelection::Full => Ok((0..total).collect()),
            AngularSelection::LimitedWedge { first_k_rows: k } => {
                if k == 0 || k > total {
                    return Err(Error::InvalidSelection(format!(
                        "wedge of {k} rows out of range 1..={total}"
                    )));
                }
                Ok((0..k).collect())
            }
            AngularSelection::SparseStride { n_kept: n } => {
                if n == 0 || n > total || total % n != 0 {
                    return Err(Error::InvalidSelection(format!(
                        "{n} projections do not evenly divide {total} rows"
                    )));
                }
                let stride = total / n;
                Ok((0..n).map(|i| i * stride).collect())
            }
        }
    }
}

/// Serializes uniformly spaced angle lists compactly as `{start, step,
/// count}`, and anything else as an explicit list. Compaction only happens
/// when the expansion reproduces every value bit-exactly.
mod angle_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Uniform { start: f64, step: f64, count: usize },
        Explicit(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(angles: &[f64], s: S) -> Result<S::Ok, S::Error> {
        if angles.len() >= 2 {
            let start = angles[0];
            let step = angles[1] - angles[0];
            let expanded = super::uniform_angles(start, step, angles.len());
            if expanded
                .iter()
                .zip(angles)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            {
                return Repr::Uniform {
                    start,
                    step,
                    count: angles.len(),
                }
                .serialize(s);
            }
        }
        Repr::Explicit(angles.to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Uniform { start, step, count } => super::uniform_angles(start, step, count),
            Repr::Explicit(v) => v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn canonical_values() {
        let g = canonical_2detect_geometry();
        g.validate().unwrap();
        assert_eq!(g.source_object_dist, 431.020);
        assert_eq!(g.source_detector_dist, 529.000);
        assert_eq!(g.detector_pixel_count, 956);
        assert_eq!(g.detector_pixel_size, 0.1496);
        assert_eq!(g.n_angles(), 3600);
        assert_relative_eq!(g.angles[1] - g.angles[0], 0.1, epsilon = 1e-12);
        assert!(*g.angles.last().unwrap() < 360.0);
    }

    #[test]
    fn magnification_cases() {
        let g = canonical_2detect_geometry();
        assert_relative_eq!(g.magnification(), 529.0 / 431.02);
        assert!((g.magnification() - 1.2273).abs() < 1e-4);

        let mut h = g.clone();
        h.source_object_dist = 100.0;
        h.source_detector_dist = 100.0;
        assert_eq!(h.magnification(), 1.0);
        h.source_detector_dist = 200.0;
        assert_eq!(h.magnification(), 2.0);
    }

    #[test]
    fn default_grid_pixel_size() {
        let g = canonical_2detect_geometry();
        let grid = g.default_grid(1024);
        assert!((grid.pixel_size - 0.1219).abs() < 1e-4);
        assert!((grid.field_of_view()[0] - 124.8).abs() < 0.1);
        assert_eq!(g.default_grid(2048).width, 2048);

        let mut unit = g.clone();
        unit.source_detector_dist = unit.source_object_dist;
        assert_eq!(unit.default_grid(10).pixel_size, unit.detector_pixel_size);
    }

    #[test]
    fn limited_wedge_120() {
        let g = canonical_2detect_geometry();
        let (sub, rows) = g
            .apply_selection(&AngularSelection::LimitedWedge { first_k_rows: 1200 })
            .unwrap();
        assert_eq!(sub.n_angles(), 1200);
        assert_eq!(rows, (0..1200).collect::<Vec<_>>());
        assert_eq!(sub.angles[0], 0.0);
        assert!(*sub.angles.last().unwrap() < 120.0);
        assert!(*sub.angles.last().unwrap() > 119.8);
    }

    #[test]
    fn sparse_stride_60() {
        let g = canonical_2detect_geometry();
        let (sub, rows) = g
            .apply_selection(&AngularSelection::SparseStride { n_kept: 60 })
            .unwrap();
        assert_eq!(rows.len(), 60);
        assert!(rows.windows(2).all(|w| w[1] - w[0] == 60));
        for w in sub.angles.windows(2) {
            assert_relative_eq!(w[1] - w[0], 6.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn full_is_identity() {
        let g = canonical_2detect_geometry();
        let (sub, rows) = g.apply_selection(&AngularSelection::Full).unwrap();
        assert_eq!(sub, g);
        assert_eq!(rows, (0..3600).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_selections() {
        let g = canonical_2detect_geometry();
        for sel in [
            AngularSelection::LimitedWedge { first_k_rows: 0 },
            AngularSelection::LimitedWedge { first_k_rows: 3601 },
            AngularSelection::SparseStride { n_kept: 7 },
            AngularSelection::SparseStride { n_kept: 0 },
        ] {
            assert!(matches!(
                g.apply_selection(&sel),
                Err(Error::InvalidSelection(_))
            ));
        }
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut g = canonical_2detect_geometry();
        g.angles.swap(3, 4);
        assert!(g.validate().is_err());
        let mut g = canonical_2detect_geometry();
        g.angles.push(360.0);
        assert!(g.validate().is_err());
        let mut g = canonical_2detect_geometry();
        g.source_detector_dist = 100.0;
        assert!(g.validate().is_err());
        let mut g = canonical_2detect_geometry();
        g.detector_pixel_count = 0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn detector_index_inverts_coordinate() {
        let mut g = canonical_2detect_geometry();
        g.detector_center_offset = 0.37;
        for k in [0, 1, 477, 955] {
            assert_relative_eq!(
                g.detector_index(g.detector_coordinate(k, 0.0)),
                k as f64,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn detector_is_perpendicular_at_sdd() {
        let g = FanBeamGeometry::desk_scale(64, 7, 50.0);
        for i in 0..g.n_angles() {
            let s = g.source_position(i);
            let d0 = g.detector_point(i, 0.0);
            let d1 = g.detector_point(i, 10.0);
            let dist = ((s[0] - d0[0]).powi(2) + (s[1] - d0[1]).powi(2)).sqrt();
            assert_relative_eq!(dist, g.source_detector_dist, epsilon = 1e-9);
            let dot = (d1[0] - d0[0]) * (d0[0] - s[0]) + (d1[1] - d0[1]) * (d0[1] - s[1]);
            assert!(dot.abs() < 1e-6);
        }
    }

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Wrap {
        geometry: FanBeamGeometry,
    }

    #[test]
    fn toml_round_trip() {
        let sparse = canonical_2detect_geometry()
            .apply_selection(&AngularSelection::SparseStride { n_kept: 120 })
            .unwrap()
            .0;
        for g in [canonical_2detect_geometry(), sparse] {
            let w = Wrap { geometry: g };
            let text = toml::to_string(&w).unwrap();
            let back: Wrap = toml::from_str(&text).unwrap();
            assert_eq!(back, w);
        }
        let text = toml::to_string(&Wrap {
            geometry: canonical_2detect_geometry(),
        })
        .unwrap();
        assert!(text.contains("source_object_dist_mm = 431.02"));
        assert!(text.len() < 400, "uniform angles should be compact:\n{text}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[test]
    fn wedge_rescaling_keeps_span() {
        let w = AngularSelection::LimitedWedge { first_k_rows: 1200 };
        assert_eq!(w.rescaled(3600, 720).unwrap(), AngularSelection::LimitedWedge { first_k_rows: 240 });
        assert!(w.rescaled(3600, 100).is_err());
        let s = AngularSelection::SparseStride { n_kept: 60 };
        assert_eq!(s.rescaled(3600, 720).unwrap(), s);
    }

    proptest! {
            #[test]
            fn wedge_is_prefix(k in 1usize..=3600) {
                let g = canonical_2detect_geometry();
                let (sub, _) = g.apply_selection(&AngularSelection::LimitedWedge { first_k_rows: k }).unwrap();
                prop_assert_eq!(&sub.angles[..], &g.angles[..k]);
            }

            #[test]
            fn sparse_spacing(idx in 0usize..8) {
                let n = [1usize, 2, 60, 120, 360, 720, 900, 3600][idx];
                let g = canonical_2detect_geometry();
                let (sub, _) = g.apply_selection(&AngularSelection::SparseStride { n_kept: n }).unwrap();
                let (via_full, _) = g.apply_selection(&AngularSelection::Full).unwrap();
                let (composed, _) = via_full.apply_selection(&AngularSelection::SparseStride { n_kept: n }).unwrap();
                prop_assert_eq!(&composed, &sub);
                for w in sub.angles.windows(2) {
                    prop_assert!((w[1] - w[0] - 360.0 / n as f64).abs() < 1e-9);
                }
            }
        }
    }
}
