//! Forward-difference gradient with Neumann boundary, its negative adjoint
//! (divergence), and isotropic total variation.

use crate::geometry::ImageGrid;
use crate::projector::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub grid: ImageGrid,
    /// Difference to the right neighbour; zero in the last column.
    pub dx: Vec<f64>,
    /// Difference to the neighbour below; zero in the last row.
    pub dy: Vec<f64>,
}

pub fn grad(x: &Image) -> GradientField {
    let (w, h) = (x.width(), x.height());
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    grad_into(&x.values, w, h, &mut dx, &mut dy);
    GradientField {
        grid: x.grid.clone(),
        dx,
        dy,
    }
}

pub fn div(field: &GradientField) -> Image {
    let (w, h) = (field.grid.width, field.grid.height);
    let mut out = Image::zeros(field.grid.clone());
    div_into(&field.dx, &field.dy, w, h, &mut out.values);
    out
}

pub fn tv_value(x: &Image) -> f64 {
    tv_value_raw(&x.values, x.width(), x.height())
}

pub fn grad_into(x: &[f64], w: usize, h: usize, dx: &mut [f64], dy: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            dx[i] = if c + 1 < w { x[i + 1] - x[i] } else { 0.0 };
            dy[i] = if r + 1 < h { x[i + w] - x[i] } else { 0.0 };
        }
    }
}

/// `out = div(dx, dy)`, satisfying `<grad x, p> = -<x, div p>`.
pub fn div_into(dx: &[f64], dy: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut v = 0.0;
            if c + 1 < w {
                v += dx[i];
            }
            if c > 0 {
                v -= dx[i - 1];
            }
            if r + 1 < h {
                v += dy[i];
            }
            if r > 0 {
                v -= dy[i - w];
            }
            out[i] = v;
        }
    }
}

pub fn tv_value_raw(x: &[f64], w: usize, h: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let gx = if c + 1 < w { x[i + 1] - x[i] } else { 0.0 };
            let gy = if r + 1 < h { x[i + w] - x[i] } else { 0.0 };
            total += gx.hypot(gy);
        }
    }
    total
}

/// Projects each `(dx, dy)` pair onto the disk of radius `radius`.
pub(crate) fn project_ball(dx: &mut [f64], dy: &mut [f64], radius: f64) {
    for (a, b) in dx.iter_mut().zip(dy.iter_mut()) {
        let n = a.hypot(*b);
        if n > radius {
            let s = if n > 0.0 { radius / n } else { 0.0 };
            *a *= s;
            *b *= s;
        }
    }
}
