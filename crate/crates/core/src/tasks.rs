//! The nine standard reconstruction tasks, the versioned parameter file, and
//! the per-slice benchmark loop.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{load_reference, load_slice, DatasetManifest, Mode, Split, SplitTable};
use crate::error::{Error, Result};
use crate::geometry::{canonical_2detect_geometry, AngularSelection, FanBeamGeometry, ImageGrid};
use crate::metrics::{aggregate, score, MetricRecord, RangeRule, StdKind, Summary};
use crate::par;
use crate::preprocess::{counts_to_line_integrals, subset_sinogram, PreprocessOptions};
use crate::projector::{Image, Sinogram};
use crate::registry::{Reconstructor, ReconstructorDescriptor};
use crate::solvers::{data_scale, lambda_grid, select_best, SolverConfig};

/// Row count the task selections are written against (0.1 deg over 360 deg).
pub const CANONICAL_ROWS: usize = 3600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskName {
    FullData,
    LimitedAngle120,
    LimitedAngle90,
    LimitedAngle60,
    SparseAngle360,
    SparseAngle120,
    SparseAngle60,
    LowDose,
    BeamHardening,
}

impl TaskName {
    pub const ALL: [TaskName; 9] = [
        TaskName::FullData,
        TaskName::LimitedAngle120,
        TaskName::LimitedAngle90,
        TaskName::LimitedAngle60,
        TaskName::SparseAngle360,
        TaskName::SparseAngle120,
        TaskName::SparseAngle60,
        TaskName::LowDose,
        TaskName::BeamHardening,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskName::FullData => "full_data",
            TaskName::LimitedAngle120 => "limited_angle_120",
            TaskName::LimitedAngle90 => "limited_angle_90",
            TaskName::LimitedAngle60 => "limited_angle_60",
            TaskName::SparseAngle360 => "sparse_angle_360",
            TaskName::SparseAngle120 => "sparse_angle_120",
            TaskName::SparseAngle60 => "sparse_angle_60",
            TaskName::LowDose => "low_dose",
            TaskName::BeamHardening => "beam_hardening",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts `limited_angle_90`, `limited-angle-90` and `LimitedAngle90`.
impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        TaskName::ALL
            .into_iter()
            .find(|t| t.name().replace('_', "") == key)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

impl From<TaskName> for String {
    fn from(t: TaskName) -> String {
        t.name().into()
    }
}

impl TryFrom<String> for TaskName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Mode2Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    pub source_mode: Mode,
    /// Expressed against [`CANONICAL_ROWS`] rows.
    pub selection: AngularSelection,
    #[serde(default)]
    pub target: Target,
}

impl TaskSpec {
    /// The selection for a scan of `total_rows` rows over the full circle.
    pub fn selection_for(&self, total_rows: usize) -> Result<AngularSelection> {
        self.selection.rescaled(CANONICAL_ROWS, total_rows)
    }
}

pub fn build_task(name: TaskName) -> TaskSpec {
    use AngularSelection::*;
    let (source_mode, selection) = match name {
        TaskName::FullData => (Mode::Mode2, Full),
        TaskName::LimitedAngle120 => (Mode::Mode2, LimitedWedge { first_k_rows: 1200 }),
        TaskName::LimitedAngle90 => (Mode::Mode2, LimitedWedge { first_k_rows: 900 }),
        TaskName::LimitedAngle60 => (Mode::Mode2, LimitedWedge { first_k_rows: 600 }),
        TaskName::SparseAngle360 => (Mode::Mode2, SparseStride { n_kept: 360 }),
        TaskName::SparseAngle120 => (Mode::Mode2, SparseStride { n_kept: 120 }),
        TaskName::SparseAngle60 => (Mode::Mode2, SparseStride { n_kept: 60 }),
        TaskName::LowDose => (Mode::Mode1, Full),
        TaskName::BeamHardening => (Mode::Mode3, Full),
    };
    TaskSpec {
        name,
        source_mode,
        selection,
        target: Target::Mode2Reference,
    }
}

pub const PARAMS_VERSION: &str = "tomobench-params/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    /// Must match the manifest's split table.
    pub split_table_version: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub range: RangeRule,
    pub std: StdKind,
}

/// Everything needed to rerun one benchmark experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub format_version: String,
    pub artifact_version: String,
    pub seed: u64,
    pub method: String,
    pub task: TaskSpec,
    pub solver: SolverConfig,
    pub preprocessing: PreprocessOptions,
    pub metrics: MetricParams,
    pub dataset: DatasetParams,
    /// Full scan geometry of the stored sinograms, before angle selection.
    pub geometry: FanBeamGeometry,
    /// Reconstruction grid, equal to the reference grid.
    pub grid: ImageGrid,
    /// Free-form settings for external methods, carried through untouched.
    #[serde(default)]
    pub extra: toml::Table,
}

impl ExperimentParams {
    /// The canonical scanner with 1024 x 1024 isocenter-sampled images.
    pub fn new(task: TaskName, method: &str) -> Self {
        let geometry = canonical_2detect_geometry();
        let grid = geometry.default_grid(1024);
        ExperimentParams {
            format_version: PARAMS_VERSION.into(),
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            seed: 0,
            method: method.into(),
            task: build_task(task),
            solver: SolverConfig::default(),
            preprocessing: PreprocessOptions::default(),
            metrics: MetricParams::default(),
            dataset: DatasetParams {
                split_table_version: SplitTable::canonical().version,
            },
            geometry,
            grid,
            extra: toml::Table::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.grid.validate()?;
        self.solver.validate()?;
        self.task.selection_for(self.geometry.n_angles())?.row_indices(self.geometry.n_angles())?;
        Ok(())
    }

    /// Built-in descriptor for `method`, seeded from `seed`.
    pub fn descriptor(&self) -> Result<ReconstructorDescriptor> {
        let mut solver = self.solver.clone();
        solver.seed = self.seed;
        ReconstructorDescriptor::classical(&self.method, solver)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Params(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Params(e.to_string()))?;
        match table.get("format_version").and_then(|v| v.as_str()) {
            Some(PARAMS_VERSION) => {}
            Some(other) => {
                return Err(Error::Migration {
                    found: other.into(),
                    expected: PARAMS_VERSION.into(),
                })
            }
            None => return Err(Error::Params("missing format_version".into())),
        }
        toml::from_str(text).map_err(|e| Error::Params(e.to_string()))
    }
}

pub fn write_params(path: &Path, p: &ExperimentParams) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, p.to_toml()?).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<ExperimentParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentParams::from_toml(&text)
}

/// Loads one slice and turns it into the task's line-integral sinogram,
/// rounded to f32 like every stored sinogram. Also returns the reference.
pub fn prepare_slice(params: &ExperimentParams, manifest: &DatasetManifest, id: u32) -> Result<(Sinogram, Image)> {
    let mode = params.task.source_mode;
    let rec = load_slice(manifest, id, mode, &params.geometry, &params.grid)?;
    let reference = match rec.reference {
        Some(r) if mode == Mode::Mode2 => r,
        _ => load_reference(manifest, id, &params.grid)?,
    };
    let ell = counts_to_line_integrals(&rec.raw, &rec.calibration, &params.preprocessing)?;
    let sel = params.task.selection_for(params.geometry.n_angles())?;
    let mut y = subset_sinogram(&ell, &sel)?;
    y.quantize_f32();
    Ok((y, reference))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceOutcome {
    pub slice_id: u32,
    /// The error message for a failed slice.
    pub result: std::result::Result<(Option<Image>, MetricRecord), String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    /// Manifest order.
    pub outcomes: Vec<SliceOutcome>,
    /// `None` when every slice failed.
    pub summary: Option<Summary>,
}

impl ExperimentRun {
    pub fn records(&self) -> Vec<MetricRecord> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|(_, r)| r.clone()))
            .collect()
    }

    pub fn failures(&self) -> Vec<(u32, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.slice_id, e.as_str())))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Keep reconstructed images in the outcomes.
    pub keep_images: bool,
}

/// Reconstructs and scores every slice of `split`. A failing slice is
/// recorded and the run continues.
pub fn run_experiment(
    params: &ExperimentParams,
    manifest: &DatasetManifest,
    split: Split,
    method: &dyn Reconstructor,
    opts: RunOptions,
) -> Result<ExperimentRun> {
    run_with(params, manifest, split, opts, |y, grid| method.reconstruct(y, grid))
}

fn run_with(
    params: &ExperimentParams,
    manifest: &DatasetManifest,
    split: Split,
    opts: RunOptions,
    recon: impl Fn(&Sinogram, &ImageGrid) -> Result<Image> + Sync + Send,
) -> Result<ExperimentRun> {
    params.validate()?;
    if manifest.split_table.version != params.dataset.split_table_version {
        return Err(Error::Params(format!(
            "parameters expect split table '{}', dataset uses '{}'",
            params.dataset.split_table_version, manifest.split_table.version
        )));
    }
    let ids = manifest.ids(split);
    if ids.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let one = |id: u32| -> Result<(Option<Image>, MetricRecord)> {
        let (y, reference) = prepare_slice(params, manifest, id)?;
        let mut x = recon(&y, &params.grid)?;
        x.quantize_f32();
        let m = score(id, &x, &reference, params.metrics.range)?;
        Ok((opts.keep_images.then_some(x), m))
    };
    let outcomes = par::with_jobs(opts.jobs, || {
        par::map_range(ids.len(), |i| SliceOutcome {
            slice_id: ids[i],
            result: one(ids[i]).map_err(|e| e.to_string()),
        })
    });
    let records: Vec<MetricRecord> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|(_, r)| r.clone()))
        .collect();
    let summary = if records.is_empty() {
        None
    } else {
        Some(aggregate(&records, params.metrics.std)?)
    };
    Ok(ExperimentRun { outcomes, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub mean_ssim: f64,
    /// `(lambda, mean validation SSIM)` for every candidate.
    pub table: Vec<(f64, f64)>,
}

/// Picks the TV weight with the best mean SSIM on the validation split. The
/// candidates are [`lambda_grid`] scaled by the largest data value of the
/// first validation slice.
pub fn tune_lambda(
    params: &ExperimentParams,
    manifest: &DatasetManifest,
    base: &ReconstructorDescriptor,
    jobs: Option<usize>,
) -> Result<LambdaSearch> {
    let ids = manifest.ids(Split::Validation);
    let first = *ids.first().ok_or_else(|| Error::EmptySplit(Split::Validation.to_string()))?;
    let (y, _) = prepare_slice(params, manifest, first)?;
    let candidates = lambda_grid(data_scale(&y));
    let mut table = Vec::new();
    let (lambda, mean_ssim) = select_best(&candidates, |lambda| {
        let mut d = base.clone();
        d.solver.tv_lambda = Some(lambda);
        let opts = RunOptions { jobs, keep_images: false };
        let run = run_experiment(params, manifest, Split::Validation, &d, opts)?;
        // A failed slice counts as SSIM 0 so it cannot win by omission.
        let n = run.outcomes.len() as f64;
        let s = run.records().iter().map(|r| r.ssim).sum::<f64>() / n;
        table.push((lambda, s));
        Ok(s)
    })?;
    Ok(LambdaSearch {
        lambda,
        mean_ssim,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{build_manifest, write_mini_dataset, MiniDatasetSpec};
    use crate::geometry::FanBeamGeometry;
    use crate::projector::Stage;

    #[test]
    fn task_table_is_complete() {
        use AngularSelection::*;
        let expected = [
            ("full_data", Mode::Mode2, Full),
            ("limited_angle_120", Mode::Mode2, LimitedWedge { first_k_rows: 1200 }),
            ("limited_angle_90", Mode::Mode2, LimitedWedge { first_k_rows: 900 }),
            ("limited_angle_60", Mode::Mode2, LimitedWedge { first_k_rows: 600 }),
            ("sparse_angle_360", Mode::Mode2, SparseStride { n_kept: 360 }),
            ("sparse_angle_120", Mode::Mode2, SparseStride { n_kept: 120 }),
            ("sparse_angle_60", Mode::Mode2, SparseStride { n_kept: 60 }),
            ("low_dose", Mode::Mode1, Full),
            ("beam_hardening", Mode::Mode3, Full),
        ];
        assert_eq!(TaskName::ALL.len(), expected.len());
        for (t, (name, mode, sel)) in TaskName::ALL.into_iter().zip(expected) {
            let spec = build_task(t);
            assert_eq!(t.name(), name);
            assert_eq!(spec.source_mode, mode);
            assert_eq!(spec.selection, sel);
            assert_eq!(spec.target, Target::Mode2Reference);
            assert_eq!(name.parse::<TaskName>().unwrap(), t);
        }
        assert_eq!("LimitedAngle90".parse::<TaskName>().unwrap(), TaskName::LimitedAngle90);
        assert!(matches!("limited_angle_45".parse::<TaskName>(), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn wedge_spans_match_on_the_canonical_scan() {
        let g = canonical_2detect_geometry();
        for (t, span) in [
            (TaskName::LimitedAngle120, 120.0),
            (TaskName::LimitedAngle90, 90.0),
            (TaskName::LimitedAngle60, 60.0),
        ] {
            let sel = build_task(t).selection_for(g.n_angles()).unwrap();
            let (sub, _) = g.apply_selection(&sel).unwrap();
            let last = *sub.angles.last().unwrap();
            assert!((last + 0.1 - span).abs() < 1e-9, "{t}: {last}");
        }
    }

    #[test]
    fn subsets_never_read_other_rows() {
        let g = FanBeamGeometry::desk_scale(8, 720, 20.0);
        for t in TaskName::ALL {
            let sel = build_task(t).selection_for(720).unwrap();
            let keep = sel.row_indices(720).unwrap();
            let values = (0..720 * 8)
                .map(|i| if keep.contains(&(i / 8)) { (i / 8) as f64 } else { f64::NAN })
                .collect();
            let y = Sinogram::from_values(g.clone(), Stage::LineIntegral, values).unwrap();
            let s = subset_sinogram(&y, &sel).unwrap();
            assert!(s.values.iter().all(|v| v.is_finite()), "{t}");
            assert_eq!(s.n_angles(), keep.len());
        }
    }

    #[test]
    fn params_round_trip() {
        let mut p = ExperimentParams::new(TaskName::SparseAngle60, "chp_tv");
        p.seed = 17;
        p.solver.tv_lambda = Some(3.25e-3);
        p.solver.max_iters = 250;
        p.metrics.range = RangeRule::Fixed { value: 0.07 };
        p.extra.insert("epochs".into(), toml::Value::Integer(40));
        let text = p.to_toml().unwrap();
        assert_eq!(ExperimentParams::from_toml(&text).unwrap(), p);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.toml");
        write_params(&path, &p).unwrap();
        assert_eq!(read_params(&path).unwrap(), p);

        let edited = text.replace("tv_lambda = 0.00325", "tv_lambda = 0.5");
        assert_ne!(edited, text);
        assert_eq!(ExperimentParams::from_toml(&edited).unwrap().solver.tv_lambda, Some(0.5));
    }

    #[test]
    fn unknown_version_names_both() {
        let text = ExperimentParams::new(TaskName::FullData, "fbp")
            .to_toml()
            .unwrap()
            .replace(PARAMS_VERSION, "tomobench-params/0");
        let err = ExperimentParams::from_toml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Migration { .. }));
        assert!(msg.contains("tomobench-params/0") && msg.contains(PARAMS_VERSION), "{msg}");
    }

    fn mini(n_test: usize) -> (tempfile::TempDir, ExperimentParams, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let spec = MiniDatasetSpec {
            n_validation: 1,
            n_test,
            geometry: FanBeamGeometry::desk_scale(48, 120, 36.0),
            reference_grid: ImageGrid::square(24, 1.25),
            ..Default::default()
        };
        write_mini_dataset(dir.path(), &spec).unwrap();
        let m = build_manifest(dir.path()).unwrap();
        let mut p = ExperimentParams::new(TaskName::FullData, "fbp");
        p.geometry = spec.geometry;
        p.grid = spec.reference_grid;
        (dir, p, m)
    }

    #[test]
    fn five_slice_run_summarizes_and_repeats() {
        let (_dir, p, m) = mini(5);
        let d = p.descriptor().unwrap();
        let opts = RunOptions { jobs: Some(2), keep_images: true };
        let run = run_experiment(&p, &m, Split::Test, &d, opts).unwrap();
        assert_eq!(run.outcomes.len(), 5);
        let ids: Vec<u32> = run.outcomes.iter().map(|o| o.slice_id).collect();
        assert_eq!(ids, m.ids(Split::Test));
        let recs = run.records();
        let mean = recs.iter().map(|r| r.ssim).sum::<f64>() / 5.0;
        let s = run.summary.clone().unwrap();
        assert!((s.ssim.mean - mean).abs() < 1e-15);
        assert!(s.ssim.mean > 0.5, "{}", s.ssim.mean);

        let again = run_experiment(&p, &m, Split::Test, &d, RunOptions { jobs: Some(1), keep_images: true }).unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn failing_slice_is_recorded() {
        let (dir, p, m) = mini(3);
        fs::remove_file(dir.path().join("slice04482/mode2/dark.tbnk")).unwrap();
        let m2 = build_manifest(dir.path()).unwrap();
        let d = p.descriptor().unwrap();
        let run = run_experiment(&p, &m2, Split::Test, &d, RunOptions::default()).unwrap();
        assert_eq!(run.failures().len(), 1);
        assert_eq!(run.failures()[0].0, 4482);
        assert_eq!(run.summary.unwrap().count, 2);
        drop(m);
    }

    #[test]
    fn empty_split_and_split_table_mismatch() {
        let (_dir, mut p, m) = mini(1);
        let d = p.descriptor().unwrap();
        let err = run_experiment(&p, &m, Split::Train, &d, RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySplit(_)));
        p.dataset.split_table_version = "other".into();
        assert!(matches!(
            run_experiment(&p, &m, Split::Test, &d, RunOptions::default()),
            Err(Error::Params(_))
        ));
    }

    #[test]
    fn lambda_search_covers_the_grid() {
        let (_dir, mut p, m) = mini(1);
        p.method = "chp_tv".into();
        p.task = build_task(TaskName::SparseAngle60);
        p.solver.max_iters = 20;
        let d = p.descriptor().unwrap();
        let s = tune_lambda(&p, &m, &d, None).unwrap();
        assert_eq!(s.table.len(), 11);
        let best = s.table.iter().map(|t| t.1).fold(f64::MIN, f64::max);
        assert_eq!(s.mean_ssim, best);
    }
}
