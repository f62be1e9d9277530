//! Ellipse phantoms with exact fan-beam line integrals.
//!
//! Text format, one ellipse per line, whitespace separated:
//!
//! ```text
//! # cx_mm cy_mm semi_a_mm semi_b_mm rotation_deg attenuation_per_mm [+|-]
//! 0.0 0.0 20.0 20.0 0.0 0.01 +
//! ```
//!
//! A trailing `-` marks a subtractive ellipse (its attenuation is removed
//! where it overlaps); `+` or nothing is additive. `#` starts a comment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, ImageGrid};
use crate::par;
use crate::projector::{Image, Sinogram, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub rotation_deg: f64,
    pub attenuation: f64,
    pub additive: bool,
}

impl Ellipse {
    pub fn disk(center: [f64; 2], radius: f64, attenuation: f64) -> Self {
        Ellipse {
            center,
            semi_axes: [radius, radius],
            rotation_deg: 0.0,
            attenuation,
            additive: true,
        }
    }

    fn signed_attenuation(&self) -> f64 {
        if self.additive {
            self.attenuation
        } else {
            -self.attenuation
        }
    }

    /// Maps a world point into the frame where the ellipse is the unit disk.
    fn to_unit(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [
            (c * dx + s * dy) / self.semi_axes[0],
            (-s * dx + c * dy) / self.semi_axes[1],
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let q = self.to_unit(p);
        q[0] * q[0] + q[1] * q[1] <= 1.0
    }

    /// Length of the part of segment `a -> b` inside the ellipse.
    pub fn chord(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if len == 0.0 {
            return 0.0;
        }
        let p = self.to_unit(a);
        let q = self.to_unit(b);
        // |p + t (q - p)|^2 = 1 for t in [0, 1].
        let d = [q[0] - p[0], q[1] - p[1]];
        let qa = d[0] * d[0] + d[1] * d[1];
        let qb = p[0] * d[0] + p[1] * d[1];
        let qc = p[0] * p[0] + p[1] * p[1] - 1.0;
        let disc = qb * qb - qa * qc;
        if disc <= 0.0 || qa == 0.0 {
            return 0.0;
        }
        let root = disc.sqrt();
        let t0 = ((-qb - root) / qa).max(0.0);
        let t1 = ((-qb + root) / qa).min(1.0);
        if t1 <= t0 {
            0.0
        } else {
            (t1 - t0) * len
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EllipsePhantom {
    pub components: Vec<Ellipse>,
}

impl EllipsePhantom {
    pub fn new(components: Vec<Ellipse>) -> Result<Self> {
        for (i, e) in components.iter().enumerate() {
            if !(e.semi_axes[0] > 0.0 && e.semi_axes[1] > 0.0) {
                return Err(Error::Domain(format!(
                    "ellipse {i} has non-positive semi-axes {:?}",
                    e.semi_axes
                )));
            }
        }
        Ok(EllipsePhantom { components })
    }

    /// A single centred disk.
    pub fn disk(radius: f64, attenuation: f64) -> Self {
        EllipsePhantom {
            components: vec![Ellipse::disk([0.0, 0.0], radius, attenuation)],
        }
    }

    /// Modified Shepp-Logan head phantom scaled to fit a disk of radius
    /// `radius_mm`, with the body attenuation set to `mu` (1/mm).
    pub fn shepp_logan(radius_mm: f64, mu: f64) -> Self {
        #[rustfmt::skip]
        const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
            // value, a, b, x0, y0, phi
            ( 1.0,  0.69,   0.92,   0.0,   0.0,     0.0),
            (-0.8,  0.6624, 0.8740, 0.0,  -0.0184,  0.0),
            (-0.2,  0.11,   0.31,   0.22,  0.0,   -18.0),
            (-0.2,  0.16,   0.41,  -0.22,  0.0,    18.0),
            ( 0.1,  0.21,   0.25,   0.0,   0.35,    0.0),
            ( 0.1,  0.046,  0.046,  0.0,   0.1,     0.0),
            ( 0.1,  0.046,  0.046,  0.0,  -0.1,     0.0),
            ( 0.1,  0.046,  0.023, -0.08, -0.605,   0.0),
            ( 0.1,  0.023,  0.023,  0.0,  -0.606,   0.0),
            ( 0.1,  0.023,  0.046,  0.06, -0.605,   0.0),
        ];
        let components = TABLE
            .iter()
            .map(|&(v, a, b, x, y, phi)| Ellipse {
                center: [x * radius_mm, y * radius_mm],
                semi_axes: [a * radius_mm, b * radius_mm],
                rotation_deg: phi,
                attenuation: v.abs() * mu,
                additive: v > 0.0,
            })
            .collect();
        EllipsePhantom { components }
    }

    /// Seeded random phantom inside a disk of radius `radius_mm`: a
    /// cylindrical container of attenuation `mu` filled with 4 to 8
    /// overlapping ellipses, some of them hollow (subtractive).
    pub fn random(seed: u64, radius_mm: f64, mu: f64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let wall = 0.08 * radius_mm;
        let mut components = vec![
            Ellipse::disk([0.0, 0.0], radius_mm, mu),
            Ellipse {
                additive: false,
                ..Ellipse::disk([0.0, 0.0], radius_mm - wall, 0.8 * mu)
            },
        ];
        let inner = radius_mm - wall;
        for _ in 0..rng.random_range(4..=8) {
            let a = rng.random_range(0.12..0.35) * inner;
            let b = rng.random_range(0.5..1.0) * a;
            let reach = inner - a;
            let r = reach * rng.random::<f64>().sqrt();
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let center = [r * t.cos(), r * t.sin()];
            let rotation_deg = rng.random_range(0.0..180.0);
            let attenuation = rng.random_range(0.3..1.0) * mu;
            components.push(Ellipse {
                center,
                semi_axes: [a, b],
                rotation_deg,
                attenuation,
                additive: true,
            });
            if rng.random_bool(0.3) {
                components.push(Ellipse {
                    center,
                    semi_axes: [0.5 * a, 0.5 * b],
                    rotation_deg,
                    attenuation: 0.7 * attenuation,
                    additive: false,
                });
            }
        }
        EllipsePhantom { components }
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.components
            .iter()
            .filter(|e| e.contains(p))
            .map(Ellipse::signed_attenuation)
            .sum()
    }

    /// Samples the phantom on `grid`. `supersample = 1` takes the pixel
    /// centre; `supersample = s` averages an `s x s` sub-grid.
    pub fn rasterize(&self, grid: &ImageGrid, supersample: usize) -> Image {
        let mut img = Image::zeros(grid.clone());
        let s = supersample.max(1);
        let ps = grid.pixel_size;
        par::for_each_chunk_mut(&mut img.values, grid.width, |r, row| {
            for (c, v) in row.iter_mut().enumerate() {
                let [x, y] = grid.pixel_center(r, c);
                if s == 1 {
                    *v = self.value_at([x, y]);
                } else {
                    let mut acc = 0.0;
                    for i in 0..s {
                        for j in 0..s {
                            let ox = ((j as f64 + 0.5) / s as f64 - 0.5) * ps;
                            let oy = ((i as f64 + 0.5) / s as f64 - 0.5) * ps;
                            acc += self.value_at([x + ox, y - oy]);
                        }
                    }
                    *v = acc / (s * s) as f64;
                }
            }
        });
        img
    }

    /// Exact line integral along the segment `a -> b`.
    pub fn line_integral(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.components
            .iter()
            .map(|e| e.signed_attenuation() * e.chord(a, b))
            .sum()
    }

    /// Exact sinogram on `geometry`: one ray from the source to each detector
    /// pixel centre.
    pub fn analytic_sinogram(&self, geometry: &FanBeamGeometry) -> Sinogram {
        let mut out = Sinogram::zeros(geometry.clone(), Stage::LineIntegral);
        par::for_each_chunk_mut(&mut out.values, geometry.detector_pixel_count, |i, row| {
            let src = geometry.source_position(i);
            for (k, v) in row.iter_mut().enumerate() {
                let dst = geometry.detector_point(i, geometry.detector_coordinate(k, 0.0));
                *v = self.line_integral(src, dst);
            }
        });
        out.noise_note = "noise-free analytic line integrals".into();
        out
    }

    /// Copy with every ellipse rotated by `deg` about the origin.
    pub fn rotated(&self, deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        EllipsePhantom {
            components: self
                .components
                .iter()
                .map(|e| Ellipse {
                    center: [
                        c * e.center[0] - s * e.center[1],
                        s * e.center[0] + c * e.center[1],
                    ],
                    rotation_deg: e.rotation_deg + deg,
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut components = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::Params(format!("phantom line {}: {m}", lineno + 1));
            if fields.len() != 6 && fields.len() != 7 {
                return Err(bad("expected 6 numbers and an optional +/- flag"));
            }
            let mut nums = [0.0; 6];
            for (n, f) in nums.iter_mut().zip(&fields) {
                *n = f.parse().map_err(|_| bad(&format!("'{f}' is not a number")))?;
            }
            let additive = match fields.get(6) {
                None | Some(&"+") => true,
                Some(&"-") => false,
                Some(other) => return Err(bad(&format!("unknown flag '{other}'"))),
            };
            components.push(Ellipse {
                center: [nums[0], nums[1]],
                semi_axes: [nums[2], nums[3]],
                rotation_deg: nums[4],
                attenuation: nums[5],
                additive,
            });
        }
        EllipsePhantom::new(components)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# cx_mm cy_mm semi_a_mm semi_b_mm rotation_deg attenuation_per_mm flag\n");
        for e in &self.components {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                e.center[0],
                e.center[1],
                e.semi_axes[0],
                e.semi_axes[1],
                e.rotation_deg,
                e.attenuation,
                if e.additive { "+" } else { "-" }
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{uniform_angles, FanBeamGeometry};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_phantom_is_seeded_and_contained() {
        let a = EllipsePhantom::random(7, 20.0, 0.02);
        assert_eq!(a, EllipsePhantom::random(7, 20.0, 0.02));
        assert_ne!(a, EllipsePhantom::random(8, 20.0, 0.02));
        for e in &a.components {
            let reach = e.center[0].hypot(e.center[1]) + e.semi_axes[0].max(e.semi_axes[1]);
            assert!(reach <= 20.0 + 1e-12);
        }
        assert!(a.value_at([25.0, 0.0]) == 0.0);
        assert!(a.value_at([19.5, 0.0]) > 0.0);
    }

    #[test]
    fn empty_phantom_rasterizes_to_zero() {
        let img = EllipsePhantom::default().rasterize(&ImageGrid::square(8, 1.0), 1);
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covering_ellipse_gives_ones() {
        let p = EllipsePhantom::disk(100.0, 1.0);
        let img = p.rasterize(&ImageGrid::square(16, 1.0), 4);
        assert!(img.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn overlap_adds() {
        let p = EllipsePhantom::new(vec![
            Ellipse::disk([-1.0, 0.0], 3.0, 0.5),
            Ellipse::disk([1.0, 0.0], 3.0, 0.5),
        ])
        .unwrap();
        let grid = ImageGrid::square(9, 1.0);
        let img = p.rasterize(&grid, 1);
        assert_eq!(img.get(4, 4), 1.0);
        assert_eq!(img.get(4, 0), 0.5);
    }

    #[test]
    fn subtractive_flag() {
        let p = EllipsePhantom::parse("0 0 5 5 0 1.0\n0 0 2 2 0 0.25 -\n").unwrap();
        assert_eq!(p.value_at([0.0, 0.0]), 0.75);
        assert_eq!(p.value_at([3.0, 0.0]), 1.0);
    }

    #[test]
    fn centred_disk_chord() {
        let mut g = FanBeamGeometry::desk_scale(101, 1, 60.0);
        g.angles = vec![17.0];
        let (r, mu) = (20.0, 0.01);
        let s = EllipsePhantom::disk(r, mu).analytic_sinogram(&g);
        let src = g.source_position(0);
        for k in 0..101 {
            let dst = g.detector_point(0, g.detector_coordinate(k, 0.0));
            let dir = [dst[0] - src[0], dst[1] - src[1]];
            let d = (src[0] * dir[1] - src[1] * dir[0]).abs() / (dir[0].hypot(dir[1]));
            let expect = if d < r { 2.0 * mu * (r * r - d * d).sqrt() } else { 0.0 };
            assert_relative_eq!(s.values[k], expect, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn missing_ray_is_zero() {
        let e = Ellipse::disk([0.0, 0.0], 1.0, 1.0);
        assert_eq!(e.chord([-10.0, 5.0], [10.0, 5.0]), 0.0);
    }

    /// Brute-force chord: bracket boundary crossings with a fine step along
    /// the ray, then bisect each crossing.
    fn brute_chord(e: &Ellipse, a: [f64; 2], b: [f64; 2], step: f64) -> f64 {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let at = |t: f64| [a[0] + (b[0] - a[0]) * t / len, a[1] + (b[1] - a[1]) * t / len];
        // Only the stretch within the bounding circle can be inside.
        let reach = e.semi_axes[0].max(e.semi_axes[1]) + step;
        let tc = ((e.center[0] - a[0]) * (b[0] - a[0]) + (e.center[1] - a[1]) * (b[1] - a[1])) / len;
        let (t_lo, t_hi) = ((tc - reach).max(0.0), (tc + reach).min(len));
        if t_lo >= t_hi {
            return 0.0;
        }
        let n = ((t_hi - t_lo) / step).ceil() as usize;
        let mut total = 0.0;
        let mut entered: Option<f64> = if e.contains(at(t_lo)) { Some(t_lo) } else { None };
        let mut prev_t = t_lo;
        for i in 1..=n {
            let t = (t_lo + i as f64 * step).min(t_hi);
            let inside = e.contains(at(t));
            if inside != entered.is_some() {
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if e.contains(at(mid)) == inside {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let cross = 0.5 * (lo + hi);
                match entered.take() {
                    Some(t0) => total += cross - t0,
                    None => entered = Some(cross),
                }
            }
            prev_t = t;
        }
        if let Some(t0) = entered {
            total += t_hi - t0;
        }
        total
    }

    #[test]
    fn analytic_matches_bracketed_quadrature() {
        let p = EllipsePhantom::shepp_logan(30.0, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let off: f64 = rng.random_range(-25.0..25.0);
            let n = [theta.cos(), theta.sin()];
            let a = [off * -n[1] - 200.0 * n[0], off * n[0] - 200.0 * n[1]];
            let b = [off * -n[1] + 200.0 * n[0], off * n[0] + 200.0 * n[1]];
            let exact = p.line_integral(a, b);
            let brute: f64 = p
                .components
                .iter()
                .map(|e| {
                    let r = e.semi_axes[0].min(e.semi_axes[1]);
                    e.signed_attenuation() * brute_chord(e, a, b, r / 1000.0)
                })
                .sum();
            assert!(
                (exact - brute).abs() <= 1e-6 * exact.abs().max(1e-12),
                "exact {exact} vs brute {brute}"
            );
        }
    }

    #[test]
    fn rotation_equivariance() {
        let p = EllipsePhantom::shepp_logan(25.0, 0.01);
        let mut g = FanBeamGeometry::desk_scale(64, 1, 60.0);
        g.angles = uniform_angles(0.0, 10.0, 36);
        let base = p.analytic_sinogram(&g);
        let rot = p.rotated(30.0).analytic_sinogram(&g);
        // Rotating the object by 30 deg equals viewing it from 30 deg earlier.
        for i in 0..36 {
            let j = (i + 3) % 36;
            for k in 0..64 {
                assert_relative_eq!(rot.row(j)[k], base.row(i)[k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let p = EllipsePhantom::shepp_logan(40.0, 0.02);
        let back = EllipsePhantom::parse(&p.to_text()).unwrap();
        assert_eq!(back, p);
        assert!(EllipsePhantom::parse("1 2 3").is_err());
        assert!(EllipsePhantom::parse("0 0 0 1 0 1").is_err());
    }
}
