//! `check adjoint|oracle|convergence`.

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tomobench::geometry::{FanBeamGeometry, ImageGrid};
use tomobench::phantoms::{Ellipse, EllipsePhantom};
use tomobench::projector::{LinearOperator, Sinogram};
use tomobench::solvers::{agd, chambolle_pock_tv, Regularizer, SolverConfig, VariationalProblem};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Suite {
    Adjoint,
    Oracle,
    Convergence,
}

fn line(ok: bool, what: &str, measured: String) -> bool {
    println!("{} {what}: {measured}", if ok { "PASS" } else { "FAIL" });
    ok
}

pub fn run(suite: Suite, seed: u64) -> bool {
    match suite {
        Suite::Adjoint => adjoint(seed),
        Suite::Oracle => oracle(),
        Suite::Convergence => convergence(seed),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adjoint(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = true;
    for n in [32, 64, 128] {
        for angles in [30, 90, 360] {
            let fov = 40.0;
            let g = FanBeamGeometry::desk_scale(n * 3 / 2, angles, fov * 1.5);
            let op = LinearOperator::new(g, ImageGrid::square(n, fov / n as f64)).expect("valid operator");
            let mut worst: f64 = 0.0;
            let mut ax = vec![0.0; op.range_len()];
            let mut aty = vec![0.0; op.domain_len()];
            for _ in 0..20 {
                let x: Vec<f64> = (0..op.domain_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..op.range_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                op.forward_into(&x, &mut ax);
                op.adjoint_into(&y, &mut aty);
                let r = (dot(&ax, &y) - dot(&x, &aty)).abs() / (dot(&ax, &ax).sqrt() * dot(&y, &y).sqrt());
                worst = worst.max(r);
            }
            all &= line(
                worst <= 1e-6,
                &format!("adjoint {n}x{n}, {angles} angles, 20 pairs"),
                format!("max residual {worst:.3e} (limit 1e-6)"),
            );
        }
    }
    all
}

fn three_ellipses() -> EllipsePhantom {
    let e = |center, semi_axes, rotation_deg, attenuation, additive| Ellipse {
        center,
        semi_axes,
        rotation_deg,
        attenuation,
        additive,
    };
    EllipsePhantom::new(vec![
        e([0.0, 0.0], [24.0, 18.0], 10.0, 0.02, true),
        e([6.0, 4.0], [7.0, 4.0], -30.0, 0.01, true),
        e([-8.0, -5.0], [4.0, 4.0], 0.0, 0.015, false),
    ])
    .expect("valid phantom")
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (num / dot(b, b)).sqrt()
}

fn oracle() -> bool {
    let fov = 64.0;
    let g = FanBeamGeometry::desk_scale(256, 180, fov);
    let p = three_ellipses();
    let analytic = p.analytic_sinogram(&g);
    let errs: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| {
            let grid = ImageGrid::square(n, fov / n as f64);
            let op = LinearOperator::new(g.clone(), grid.clone()).expect("valid operator");
            let s = op.forward_project(&p.rasterize(&grid, 1)).expect("matching grid");
            rel_l2(&s.values, &analytic.values)
        })
        .collect();
    let a = line(
        errs[1] <= 0.02,
        "forward(rasterize) vs analytic sinogram at 256x256",
        format!("relative L2 {:.4} (limit 0.02)", errs[1]),
    );
    let b = line(
        errs[0] > errs[1] && errs[1] > errs[2],
        "discretization error decreases 128 -> 256 -> 512",
        format!("{:.4} -> {:.4} -> {:.4}", errs[0], errs[1], errs[2]),
    );
    a && b
}

fn convergence(seed: u64) -> bool {
    let g = FanBeamGeometry::desk_scale(64, 60, 20.0);
    let grid = ImageGrid::square(32, 0.5);
    let op = LinearOperator::new(g.clone(), grid.clone()).expect("valid operator");
    let x_true = EllipsePhantom::random(seed, 7.0, 0.02).rasterize(&grid, 2);
    let y: Sinogram = op.forward_project(&x_true).expect("matching grid");
    let problem = VariationalProblem::new(op, y, Regularizer::None).expect("consistent problem");

    let run = |iters| SolverConfig {
        max_iters: iters,
        seed,
        ..Default::default()
    };
    let (xa, rep) = agd(&problem, &run(2000)).expect("agd runs");
    let t = &rep.objective_trace;
    let ratio = t[..=500].iter().cloned().fold(f64::INFINITY, f64::min) / t[0];
    let a = line(
        ratio <= 1e-6,
        "AGD objective within 500 iterations",
        format!("{ratio:.3e} x initial (limit 1e-6)"),
    );
    let (xc, _) = chambolle_pock_tv(&problem, &run(1000)).expect("chambolle-pock runs");
    let d = rel_l2(&xc.values, &xa.values);
    let b = line(
        d <= 1e-3,
        "Chambolle-Pock (lambda 0, 1000 iterations) vs AGD (2000 iterations)",
        format!("relative L2 {d:.3e} (limit 1e-3)"),
    );
    a && b
}
