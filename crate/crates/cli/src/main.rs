//! `tomobench` command line.

mod bench;
mod checks;
mod config;

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tomobench::dataio::{
    encode_png16, load_matrix, save_image, save_sinogram, write_mini_dataset, FileFormat, MiniDatasetSpec,
};
use tomobench::geometry::{FanBeamGeometry, ImageGrid};
use tomobench::phantoms::EllipsePhantom;
use tomobench::preprocess::{counts_to_line_integrals, subset_sinogram, DetectorCalibration};
use tomobench::projector::{Sinogram, Stage};
use tomobench::registry::serve;
use tomobench::tasks::{read_params, write_params, ExperimentParams, TaskName};

use config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "tomobench", version, about = "Fan-beam CT reconstruction benchmark")]
struct Cli {
    /// Seed for every random choice (phantoms, noise, power iteration)
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Phantom fixtures and synthetic datasets
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Raw counts + dark/flat frames -> line-integral sinogram
    Preprocess(PreprocessArgs),
    /// Line-integral sinogram -> image (+ PNG preview)
    Reconstruct(ReconstructArgs),
    /// Run tasks x methods over a dataset split; writes CSV and Markdown tables
    Benchmark(BenchmarkArgs),
    /// Built-in property checks with measured residuals
    Check {
        #[arg(value_enum)]
        suite: checks::Suite,
    },
    /// Parameter-file tooling
    #[command(subcommand)]
    Params(ParamsCmd),
    /// Act as an external reconstructor: sinogram on stdin, image on stdout
    ServeExternal {
        #[command(flatten)]
        common: Overrides,
    },
}

#[derive(Subcommand, Debug)]
enum PhantomCmd {
    /// Phantom image and its analytic sinogram on the parameter-file geometry
    Gen {
        #[arg(long, value_enum, default_value = "shepp-logan")]
        kind: PhantomKind,
        /// Phantom radius in mm; defaults to 40% of the grid width
        #[arg(long)]
        radius: Option<f64>,
        /// Attenuation scale in 1/mm
        #[arg(long, default_value_t = 0.02)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Overrides,
    },
    /// Write a phantom-generated dataset in the on-disk slice layout
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_test: usize,
        #[arg(long, default_value_t = 2)]
        n_validation: usize,
        #[arg(long, default_value_t = 128)]
        detectors: usize,
        #[arg(long, default_value_t = 720)]
        angles: usize,
        /// Reference image size in pixels
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhantomKind {
    SheppLogan,
    Disk,
    Random,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw counts, one row per angle (a trailing closing row is dropped)
    #[arg(long)]
    sinogram: PathBuf,
    #[arg(long)]
    dark: PathBuf,
    /// Flat frames; several are averaged
    #[arg(long, required = true)]
    flat: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Full-scan line-integral sinogram; the task selects its rows
    #[arg(long)]
    input: PathBuf,
    /// Output image (.tbnk raw or .png); a .png preview is written next to it
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    data_root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Method backed by a program, `name=program arg1 arg2 ...`; list the
    /// name in --method to run it
    #[arg(long)]
    external: Vec<String>,
    /// Worker threads for slice-level parallelism (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// External program timeout in seconds
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Subcommand, Debug)]
enum ParamsCmd {
    /// Print the effective parameters after applying flags
    Show {
        #[command(flatten)]
        common: Overrides,
    },
    /// Parse and check a parameter file
    Validate { path: PathBuf },
    /// Write a parameter file with defaults and flags applied
    Init {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Overrides,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Phantom(PhantomCmd::Gen {
            kind,
            radius,
            mu,
            out,
            common,
        }) => {
            let p = common.resolve(seed, None)?;
            phantom_gen(&p, kind, radius, mu, &out)?;
        }
        Command::Phantom(PhantomCmd::Dataset {
            out,
            n_test,
            n_validation,
            detectors,
            angles,
            size,
        }) => phantom_dataset(&out, seed.unwrap_or(0), n_test, n_validation, detectors, angles, size)?,
        Command::Preprocess(a) => {
            let p = a.common.resolve(seed, None)?;
            preprocess(&p, &a)?;
        }
        Command::Reconstruct(a) => {
            let p = a.common.resolve(seed, None)?;
            reconstruct(&p, &a.input, &a.out)?;
        }
        Command::Benchmark(a) => return bench::run(&a, seed),
        Command::Check { suite } => {
            let ok = checks::run(suite, seed.unwrap_or(0));
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Params(cmd) => params(cmd, seed)?,
        Command::ServeExternal { common } => {
            let p = common.resolve(seed, None)?;
            let d = p.descriptor()?;
            let stdout = io::stdout();
            serve(&d, io::stdin().lock(), BufWriter::new(stdout.lock()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn phantom_gen(p: &ExperimentParams, kind: PhantomKind, radius: Option<f64>, mu: f64, out: &Path) -> Result<()> {
    let r = radius.unwrap_or(0.4 * p.grid.width as f64 * p.grid.pixel_size);
    let phantom = match kind {
        PhantomKind::SheppLogan => EllipsePhantom::shepp_logan(r, mu),
        PhantomKind::Disk => EllipsePhantom::disk(r, mu),
        PhantomKind::Random => EllipsePhantom::random(p.seed, r, mu),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let img = phantom.rasterize(&p.grid, 4);
    let y = phantom.analytic_sinogram(&p.geometry);
    save_image(&out.join("phantom.tbnk"), &img, FileFormat::RawF32LE)?;
    save_image(&out.join("phantom.png"), &img, FileFormat::Png16)?;
    save_sinogram(&out.join("sinogram.tbnk"), &y, FileFormat::RawF32LE)?;
    save_sinogram(&out.join("sinogram.png"), &y, FileFormat::Png16)?;
    fs::write(out.join("phantom.txt"), phantom.to_text())?;
    write_params(&out.join("params.toml"), p)?;
    println!("wrote phantom ({} x {}) and sinogram ({} x {}) to {}", img.height(), img.width(), y.n_angles(), y.n_detector(), out.display());
    Ok(())
}

fn phantom_dataset(
    out: &Path,
    seed: u64,
    n_test: usize,
    n_validation: usize,
    detectors: usize,
    angles: usize,
    size: usize,
) -> Result<()> {
    let defaults = MiniDatasetSpec::default();
    // Field of view and phantom scale follow the default spec.
    let fov = 48.0;
    let spec = MiniDatasetSpec {
        n_test,
        n_validation,
        seed,
        geometry: FanBeamGeometry::desk_scale(detectors, angles, fov),
        reference_grid: ImageGrid::square(size, 32.0 / size as f64),
        ..defaults
    };
    let ids = write_mini_dataset(out, &spec)?;
    let mut p = ExperimentParams::new(TaskName::FullData, "fbp");
    p.seed = seed;
    p.geometry = spec.geometry.clone();
    p.grid = spec.reference_grid.clone();
    write_params(&out.join("params.toml"), &p)?;
    fs::write(out.join("dataset.toml"), toml::to_string(&spec)?)?;
    println!("wrote {} slices and params.toml to {}", ids.len(), out.display());
    Ok(())
}

/// Drops one trailing row when the file has exactly one more than the
/// geometry has angles.
fn load_rows(path: &Path, geometry: &FanBeamGeometry, stage: Stage) -> Result<Sinogram> {
    let m = load_matrix(path)?;
    let (na, nd) = (geometry.n_angles(), geometry.detector_pixel_count);
    if m.cols != nd || !(m.rows == na || m.rows == na + 1) {
        bail!(
            "{}: sinogram is {}x{}, parameters describe {na}x{nd}",
            path.display(),
            m.rows,
            m.cols
        );
    }
    let mut values = m.values;
    values.truncate(na * nd);
    Ok(Sinogram::from_values(geometry.clone(), stage, values)?)
}

fn frame(path: &Path, n_det: usize) -> Result<Vec<f64>> {
    let m = load_matrix(path)?;
    if m.cols != n_det {
        bail!("{}: frame has {} columns, expected {n_det}", path.display(), m.cols);
    }
    Ok(m.column_mean())
}

fn preprocess(p: &ExperimentParams, a: &PreprocessArgs) -> Result<()> {
    let raw = load_rows(&a.sinogram, &p.geometry, Stage::Counts)?;
    let n_det = p.geometry.detector_pixel_count;
    let dark = frame(&a.dark, n_det)?;
    let flats = a.flat.iter().map(|f| frame(f, n_det)).collect::<Result<Vec<_>>>()?;
    let cal = DetectorCalibration::from_flat_frames(dark, &flats)?;
    let mut y = counts_to_line_integrals(&raw, &cal, &p.preprocessing)?;
    y.quantize_f32();
    save_sinogram(&a.out, &y, FileFormat::from_path(&a.out))?;
    println!("wrote {} x {} line integrals to {}", y.n_angles(), y.n_detector(), a.out.display());
    Ok(())
}

fn reconstruct(p: &ExperimentParams, input: &Path, out: &Path) -> Result<()> {
    let full = load_rows(input, &p.geometry, Stage::LineIntegral)?;
    let sel = p.task.selection_for(p.geometry.n_angles())?;
    let y = subset_sinogram(&full, &sel)?;
    let d = p.descriptor()?;
    let mut x = tomobench::registry::reconstruct(&d, &y, &p.grid)?;
    x.quantize_f32();
    save_image(out, &x, FileFormat::from_path(out))?;
    let preview = out.with_extension("png");
    if preview != out {
        fs::write(&preview, encode_png16(x.height(), x.width(), &x.values)?)
            .with_context(|| format!("writing {}", preview.display()))?;
    }
    let echo = out.with_extension("params.toml");
    write_params(&echo, p)?;
    println!(
        "{} on {} ({} angles) -> {}",
        d.name,
        p.task.name,
        y.n_angles(),
        out.display()
    );
    Ok(())
}

fn params(cmd: ParamsCmd, seed: Option<u64>) -> Result<()> {
    match cmd {
        ParamsCmd::Show { common } => print!("{}", common.resolve(seed, None)?.to_toml()?),
        ParamsCmd::Validate { path } => {
            let p = read_params(&path)?;
            p.validate()?;
            println!(
                "{}: ok ({}, task {}, method {})",
                path.display(),
                p.format_version,
                p.task.name,
                p.method
            );
        }
        ParamsCmd::Init { out, common } => {
            let p = common.resolve(seed, None)?;
            p.validate()?;
            write_params(&out, &p)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
