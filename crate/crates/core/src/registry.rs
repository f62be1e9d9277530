//! Named reconstructors: the built-in solvers plus external programs that
//! speak a byte protocol over standard streams.
//!
//! External protocol, one reconstruction per child process:
//!
//! 1. The parent writes one RawF32LE block (the line-integral sinogram,
//!    `angles x detector pixels`) to the child's stdin, followed by a TOML
//!    text block with `format_version`, `[geometry]` and `[grid]` sections
//!    in the parameter-file schema, then closes stdin.
//! 2. The child writes exactly one RawF32LE block (`height x width` image)
//!    to stdout and exits with status 0.
//!
//! A child that exceeds the timeout is killed. Nonzero exit, malformed or
//! trailing output, and a block whose shape differs from the requested grid
//! are errors; the child's stderr is included in the message.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataio::{encode_raw, read_raw};
use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, ImageGrid};
use crate::projector::{Image, LinearOperator, Sinogram, Stage};
use crate::solvers::{agd, chambolle_pock_tv, fbp, Regularizer, SolverConfig, VariationalProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Classical,
    PostProcessing,
    Unrolled,
    LearnedRegularizer,
    PlugAndPlay,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    600.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructorDescriptor {
    pub name: String,
    pub category: Category,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub external: Option<ExternalConfig>,
    pub provenance: String,
}

/// Names of the built-in solvers.
pub const CLASSICAL_METHODS: [&str; 3] = ["fbp", "agd", "chp_tv"];

impl ReconstructorDescriptor {
    pub fn classical(name: &str, solver: SolverConfig) -> Result<Self> {
        if !CLASSICAL_METHODS.contains(&name) {
            return Err(Error::UnknownMethod(name.to_string()));
        }
        Ok(ReconstructorDescriptor {
            name: name.to_string(),
            category: Category::Classical,
            solver,
            external: None,
            provenance: format!("tomobench {}", env!("CARGO_PKG_VERSION")),
        })
    }

    /// An external program in any category (learned methods usually).
    pub fn external(name: &str, category: Category, cfg: ExternalConfig) -> Self {
        ReconstructorDescriptor {
            name: name.to_string(),
            category,
            solver: SolverConfig::default(),
            external: Some(cfg),
            provenance: "external".into(),
        }
    }
}

/// Uniform entry point used by the benchmark harness.
pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &str;
    fn reconstruct(&self, y: &Sinogram, grid: &ImageGrid) -> Result<Image>;
}

impl Reconstructor for ReconstructorDescriptor {
    fn name(&self) -> &str {
        &self.name
    }

    fn reconstruct(&self, y: &Sinogram, grid: &ImageGrid) -> Result<Image> {
        reconstruct(self, y, grid)
    }
}

pub fn reconstruct(d: &ReconstructorDescriptor, y: &Sinogram, grid: &ImageGrid) -> Result<Image> {
    y.expect_stage(Stage::LineIntegral)?;
    if let Some(ext) = &d.external {
        return run_external(ext, y, grid);
    }
    if d.category != Category::Classical {
        return Err(Error::InvalidConfig(format!(
            "'{}' is a {:?} method without an external program",
            d.name, d.category
        )));
    }
    let cfg = &d.solver;
    match d.name.as_str() {
        "fbp" => Ok(fbp(y, grid, cfg)?.0),
        "agd" => {
            let op = LinearOperator::new(y.geometry.clone(), grid.clone())?;
            let p = VariationalProblem::new(op, y.clone(), Regularizer::None)?;
            Ok(agd(&p, cfg)?.0)
        }
        "chp_tv" => {
            let lambda = cfg.tv_lambda.ok_or_else(|| {
                Error::InvalidConfig("chp_tv needs a TV weight; set one or tune it on the validation split".into())
            })?;
            let op = LinearOperator::new(y.geometry.clone(), grid.clone())?;
            let p = VariationalProblem::new(op, y.clone(), Regularizer::Tv { lambda })?;
            Ok(chambolle_pock_tv(&p, cfg)?.0)
        }
        other => Err(Error::UnknownMethod(other.to_string())),
    }
}

/// Name-keyed, read-only after construction.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    methods: BTreeMap<String, ReconstructorDescriptor>,
}

impl Registry {
    /// The three built-in solvers sharing one solver configuration.
    pub fn classical(solver: &SolverConfig) -> Self {
        let mut r = Registry::default();
        for name in CLASSICAL_METHODS {
            r.register(ReconstructorDescriptor::classical(name, solver.clone()).expect("built-in name"))
                .expect("built-in names are unique");
        }
        r
    }

    pub fn register(&mut self, d: ReconstructorDescriptor) -> Result<()> {
        if self.methods.contains_key(&d.name) {
            return Err(Error::DuplicateMethod(d.name));
        }
        self.methods.insert(d.name.clone(), d);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ReconstructorDescriptor> {
        self.methods.get(name).ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.methods.keys().map(String::as_str)
    }
}

pub const PROTOCOL_VERSION: &str = "tomobench-protocol/1";

/// The text block following the sinogram on the child's stdin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRequest {
    pub format_version: String,
    pub geometry: FanBeamGeometry,
    pub grid: ImageGrid,
}

pub fn encode_request(y: &Sinogram, grid: &ImageGrid) -> Vec<u8> {
    let mut bytes = encode_raw(y.n_angles(), y.n_detector(), &y.values);
    let text = toml::to_string(&ProtocolRequest {
        format_version: PROTOCOL_VERSION.into(),
        geometry: y.geometry.clone(),
        grid: grid.clone(),
    })
    .expect("request serializes");
    bytes.extend_from_slice(text.as_bytes());
    bytes
}

/// Child side: parses a request stream into a sinogram and target grid.
pub fn decode_request<R: Read>(input: &mut R) -> Result<(Sinogram, ImageGrid)> {
    let block = read_raw(input)?;
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::Protocol(format!("reading parameter block: {e}")))?;
    let req: ProtocolRequest =
        toml::from_str(&text).map_err(|e| Error::Protocol(format!("parameter block: {e}")))?;
    if req.format_version != PROTOCOL_VERSION {
        return Err(Error::Migration {
            found: req.format_version,
            expected: PROTOCOL_VERSION.into(),
        });
    }
    if (block.rows, block.cols) != (req.geometry.n_angles(), req.geometry.detector_pixel_count) {
        return Err(Error::ShapeMismatch {
            expected_rows: req.geometry.n_angles(),
            expected_cols: req.geometry.detector_pixel_count,
            actual_rows: block.rows,
            actual_cols: block.cols,
        });
    }
    let y = Sinogram::from_values(req.geometry, Stage::LineIntegral, block.values)?;
    Ok((y, req.grid))
}

/// Child side of the protocol for a built-in method.
pub fn serve<R: Read, W: Write>(method: &dyn Reconstructor, mut input: R, mut output: W) -> Result<()> {
    let (y, grid) = decode_request(&mut input)?;
    let img = method.reconstruct(&y, &grid)?;
    output
        .write_all(&encode_raw(img.height(), img.width(), &img.values))
        .and_then(|_| output.flush())
        .map_err(|e| Error::Protocol(format!("writing image block: {e}")))
}

pub fn run_external(cfg: &ExternalConfig, y: &Sinogram, grid: &ImageGrid) -> Result<Image> {
    let mut child = Command::new(&cfg.program)
        .args(&cfg.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::io(&cfg.program, e))?;

    let request = encode_request(y, grid);
    let mut stdin = child.stdin.take().expect("piped stdin");
    // A child that exits early closes the pipe; that shows up as its exit
    // status below, so write errors are ignored here.
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(&request);
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    });

    let start = Instant::now();
    let status = loop {
        match child.try_wait().map_err(|e| Error::io(&cfg.program, e))? {
            Some(status) => break status,
            None if start.elapsed().as_secs_f64() > cfg.timeout_s => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout(cfg.timeout_s));
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    let _ = writer.join();
    let out = reader
        .join()
        .expect("stdout reader thread")
        .map_err(|e| Error::Protocol(format!("reading child output: {e}")))?;
    let diagnostics = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::Protocol(format!(
            "child exited with {status}; stderr: {}",
            diagnostics.trim()
        )));
    }

    let mut cursor = &out[..];
    let block = read_raw(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Protocol(format!("{} trailing bytes after the image block", cursor.len())));
    }
    if (block.rows, block.cols) != (grid.height, grid.width) {
        return Err(Error::ShapeMismatch {
            expected_rows: grid.height,
            expected_cols: grid.width,
            actual_rows: block.rows,
            actual_cols: block.cols,
        });
    }
    Image::from_values(grid.clone(), block.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantoms::EllipsePhantom;

    fn data() -> (Sinogram, ImageGrid) {
        let g = FanBeamGeometry::desk_scale(48, 40, 30.0);
        let mut y = EllipsePhantom::shepp_logan(12.0, 0.02).analytic_sinogram(&g);
        y.quantize_f32();
        (y, ImageGrid::square(24, 1.0))
    }

    #[test]
    fn dispatch_is_transparent() {
        let (y, grid) = data();
        let cfg = SolverConfig {
            max_iters: 15,
            tv_lambda: Some(1e-3),
            ..Default::default()
        };
        let reg = Registry::classical(&cfg);
        let direct = fbp(&y, &grid, &cfg).unwrap().0;
        assert_eq!(reg.get("fbp").unwrap().reconstruct(&y, &grid).unwrap(), direct);

        let op = LinearOperator::new(y.geometry.clone(), grid.clone()).unwrap();
        let p = VariationalProblem::new(op, y.clone(), Regularizer::Tv { lambda: 1e-3 }).unwrap();
        let direct = chambolle_pock_tv(&p, &cfg).unwrap().0;
        assert_eq!(reg.get("chp_tv").unwrap().reconstruct(&y, &grid).unwrap(), direct);
    }

    #[test]
    fn names_are_unique_and_known() {
        let mut reg = Registry::classical(&SolverConfig::default());
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["agd", "chp_tv", "fbp"]);
        let dup = ReconstructorDescriptor::classical("fbp", SolverConfig::default()).unwrap();
        assert!(matches!(reg.register(dup), Err(Error::DuplicateMethod(_))));
        assert!(matches!(reg.get("unet"), Err(Error::UnknownMethod(_))));
        assert!(ReconstructorDescriptor::classical("sirt", SolverConfig::default()).is_err());
    }

    #[test]
    fn chp_without_weight_is_a_config_error() {
        let (y, grid) = data();
        let d = ReconstructorDescriptor::classical("chp_tv", SolverConfig::default()).unwrap();
        assert!(matches!(d.reconstruct(&y, &grid), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn request_round_trip_and_serve() {
        let (y, grid) = data();
        let bytes = encode_request(&y, &grid);
        let (y2, grid2) = decode_request(&mut &bytes[..]).unwrap();
        assert_eq!(y2.values, y.values);
        assert_eq!(y2.geometry, y.geometry);
        assert_eq!(grid2, grid);

        let d = ReconstructorDescriptor::classical("fbp", SolverConfig::default()).unwrap();
        let mut out = Vec::new();
        serve(&d, &bytes[..], &mut out).unwrap();
        let img = read_raw(&mut &out[..]).unwrap();
        let mut direct = d.reconstruct(&y, &grid).unwrap();
        direct.quantize_f32();
        assert_eq!(img.values, direct.values);
    }

    #[cfg(unix)]
    mod subprocess {
        use super::*;
        use std::fs;

        fn shell(script: &str, timeout_s: f64) -> ExternalConfig {
            ExternalConfig {
                program: "/bin/sh".into(),
                args: vec!["-c".into(), script.into()],
                timeout_s,
            }
        }

        #[test]
        fn echo_child_returns_stored_image() {
            let (y, grid) = data();
            let dir = tempfile::tempdir().unwrap();
            let stored: Vec<f64> = (0..grid.len()).map(|i| (i as f32 * 0.25) as f64).collect();
            let path = dir.path().join("img.tbnk");
            fs::write(&path, encode_raw(grid.height, grid.width, &stored)).unwrap();
            let cfg = shell(&format!("cat > /dev/null; cat '{}'", path.display()), 30.0);
            let img = run_external(&cfg, &y, &grid).unwrap();
            assert_eq!(img.values, stored);
        }

        #[test]
        fn wrong_dims_are_a_shape_mismatch() {
            let (y, grid) = data();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("small.tbnk");
            fs::write(&path, encode_raw(3, 5, &[0.0; 15])).unwrap();
            let cfg = shell(&format!("cat > /dev/null; cat '{}'", path.display()), 30.0);
            match run_external(&cfg, &y, &grid) {
                Err(Error::ShapeMismatch {
                    expected_rows: 24,
                    expected_cols: 24,
                    actual_rows: 3,
                    actual_cols: 5,
                }) => {}
                other => panic!("unexpected {other:?}"),
            }
        }

        #[test]
        fn slow_child_times_out() {
            let (y, grid) = data();
            let t = Instant::now();
            let err = run_external(&shell("sleep 5", 0.3), &y, &grid).unwrap_err();
            assert!(matches!(err, Error::Timeout(_)));
            assert!(t.elapsed().as_secs_f64() < 4.0);
        }

        #[test]
        fn failing_child_reports_stderr() {
            let (y, grid) = data();
            let err = run_external(&shell("cat > /dev/null; echo broken model >&2; exit 3", 30.0), &y, &grid)
                .unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains("broken model"), "{msg}");
        }

        #[test]
        fn garbage_output_is_a_protocol_error() {
            let (y, grid) = data();
            let err = run_external(&shell("cat > /dev/null; echo hello", 30.0), &y, &grid).unwrap_err();
            assert!(matches!(err, Error::Protocol(_)));
        }
    }
}
