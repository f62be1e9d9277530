//! Dataset layout scanning, the split table and slice loading.
//!
//! Layout: `root/sliceNNNNN/modeM/{sinogram,dark,flat1,flat2,...,reconstruction}.EXT`
//! with `EXT` one of `tbnk`, `tif`, `tiff`. An optional `root/splits.toml`
//! replaces the built-in split table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DefaultDecoder, Matrix, RasterDecoder};
use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, ImageGrid};
use crate::preprocess::DetectorCalibration;
use crate::projector::{Image, Sinogram, Stage};

pub const SPLIT_FILE: &str = "splits.toml";
const EXTENSIONS: [&str; 3] = ["tbnk", "tif", "tiff"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mode1,
    Mode2,
    Mode3,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Mode1, Mode::Mode2, Mode::Mode3];

    pub fn dir_name(self) -> &'static str {
        match self {
            Mode::Mode1 => "mode1",
            Mode::Mode2 => "mode2",
            Mode::Mode3 => "mode3",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.dir_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Params(format!("unknown acquisition mode '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Params(format!("unknown split '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRange {
    pub split: Split,
    pub first: u32,
    pub last: u32,
}

/// Versioned assignment of slice ids to splits by inclusive id ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTable {
    pub version: String,
    pub ranges: Vec<SplitRange>,
}

impl SplitTable {
    /// Slices 1-3930 train, 3931-4480 validation, 4481-4950 test.
    pub fn canonical() -> Self {
        SplitTable {
            version: "canonical-v1".into(),
            ranges: vec![
                SplitRange { split: Split::Train, first: 1, last: 3930 },
                SplitRange { split: Split::Validation, first: 3931, last: 4480 },
                SplitRange { split: Split::Test, first: 4481, last: 4950 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.ranges.clone();
        sorted.sort_by_key(|r| r.first);
        for r in &sorted {
            if r.first > r.last {
                return Err(Error::Params(format!("split range {}..={} is empty", r.first, r.last)));
            }
        }
        for w in sorted.windows(2) {
            if w[1].first <= w[0].last {
                return Err(Error::Params(format!(
                    "split ranges {}..={} ({}) and {}..={} ({}) overlap",
                    w[0].first, w[0].last, w[0].split, w[1].first, w[1].last, w[1].split
                )));
            }
        }
        Ok(())
    }

    pub fn assign(&self, id: u32) -> Option<Split> {
        self.ranges
            .iter()
            .find(|r| (r.first..=r.last).contains(&id))
            .map(|r| r.split)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("split table serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: SplitTable = toml::from_str(text).map_err(|e| Error::Params(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFiles {
    pub sinogram: Option<PathBuf>,
    pub dark: Option<PathBuf>,
    pub flats: Vec<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub id: u32,
    /// `None` for ids outside every split range.
    pub split: Option<Split>,
    pub modes: BTreeMap<Mode, ModeFiles>,
    /// Missing-file notes; a non-empty list flags a gap, not a failure.
    pub problems: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split_table: SplitTable,
    /// Sorted by id.
    pub entries: Vec<SliceEntry>,
}

impl DatasetManifest {
    pub fn entry(&self, id: u32) -> Result<&SliceEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .map(|i| &self.entries[i])
            .map_err(|_| Error::UnknownSlice(id))
    }

    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| e.id)
            .collect()
    }

    /// Entry counts for train, validation and test.
    pub fn split_counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.entries.iter().filter(|e| e.split == Some(s)).count())
    }

    /// Builds a manifest from in-memory entries (ids must be unique),
    /// assigning splits with `table`.
    pub fn from_entries(root: PathBuf, table: SplitTable, mut entries: Vec<SliceEntry>) -> Result<Self> {
        table.validate()?;
        entries.sort_by_key(|e| e.id);
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Params(format!("slice id {} listed twice", w[0].id)));
            }
        }
        for e in &mut entries {
            e.split = table.assign(e.id);
        }
        let m = DatasetManifest {
            root,
            split_table: table,
            entries,
        };
        m.assert_no_leakage();
        Ok(m)
    }

    fn assert_no_leakage(&self) {
        let sets: Vec<BTreeSet<u32>> = Split::ALL.iter().map(|&s| self.ids(s).into_iter().collect()).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(
                    sets[i].is_disjoint(&sets[j]),
                    "slice ids shared between {} and {}",
                    Split::ALL[i],
                    Split::ALL[j]
                );
            }
        }
    }
}

fn parse_slice_dir(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("slice")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn scan_mode(dir: &Path) -> Result<ModeFiles> {
    let mut flats: Vec<PathBuf> = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        let ok_ext = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        let is_flat = path
            .file_stem()
            .and_then(|s| s.to_str())
            .is_some_and(|s| s.starts_with("flat"));
        if ok_ext && is_flat && path.is_file() {
            flats.push(path);
        }
    }
    flats.sort();
    Ok(ModeFiles {
        sinogram: find_file(dir, "sinogram"),
        dark: find_file(dir, "dark"),
        flats,
        reference: find_file(dir, "reconstruction"),
    })
}

/// Scans `root`. Deterministic: the same tree always gives the same
/// manifest. Slices with missing files are kept and flagged.
pub fn build_manifest(root: &Path) -> Result<DatasetManifest> {
    let listing = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let split_path = root.join(SPLIT_FILE);
    let table = if split_path.is_file() {
        let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        SplitTable::from_toml(&text)?
    } else {
        SplitTable::canonical()
    };

    let mut entries = Vec::new();
    for item in listing {
        let path = item.map_err(|e| Error::io(root, e))?.path();
        let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(parse_slice_dir) else {
            continue;
        };
        if !path.is_dir() {
            continue;
        }
        let mut modes = BTreeMap::new();
        let mut problems = Vec::new();
        for mode in Mode::ALL {
            let dir = path.join(mode.dir_name());
            if !dir.is_dir() {
                continue;
            }
            let files = scan_mode(&dir)?;
            if files.sinogram.is_none() {
                problems.push(format!("{mode}: no sinogram file"));
            }
            if files.dark.is_none() {
                problems.push(format!("{mode}: no dark frame"));
            }
            if files.flats.is_empty() {
                problems.push(format!("{mode}: no flat frames"));
            }
            modes.insert(mode, files);
        }
        if modes.is_empty() {
            problems.push("no mode directories".into());
        }
        entries.push(SliceEntry {
            id,
            split: None,
            modes,
            problems,
        });
    }
    DatasetManifest::from_entries(root.to_path_buf(), table, entries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub id: u32,
    pub mode: Mode,
    pub raw: Sinogram,
    pub calibration: DetectorCalibration,
    pub reference: Option<Image>,
}

fn mode_files<'a>(m: &'a DatasetManifest, id: u32, mode: Mode) -> Result<&'a ModeFiles> {
    m.entry(id)?.modes.get(&mode).ok_or(Error::MissingMode {
        id,
        mode: mode.to_string(),
    })
}

fn required<'a>(p: &'a Option<PathBuf>, id: u32, mode: Mode, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::MissingMode {
        id,
        mode: format!("{mode} {what}"),
    })
}

fn detector_frame(path: &Path, m: Matrix, n_det: usize) -> Result<Vec<f64>> {
    if m.cols != n_det || m.rows == 0 {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("calibration frame is {}x{}, expected n x {n_det}", m.rows, m.cols),
        });
    }
    Ok(m.column_mean())
}

pub fn load_slice(m: &DatasetManifest, id: u32, mode: Mode, geometry: &FanBeamGeometry, grid: &ImageGrid) -> Result<SliceRecord> {
    load_slice_with(&DefaultDecoder, m, id, mode, geometry, grid)
}

/// Loads counts and calibration for one slice and mode, and the reference
/// image stored with that mode if there is one. A sinogram with one row more
/// than `geometry` has angles (a closing projection at 360 deg) loses its
/// last row.
pub fn load_slice_with(
    decoder: &dyn RasterDecoder,
    m: &DatasetManifest,
    id: u32,
    mode: Mode,
    geometry: &FanBeamGeometry,
    grid: &ImageGrid,
) -> Result<SliceRecord> {
    let files = mode_files(m, id, mode)?;
    let n_det = geometry.detector_pixel_count;
    let n_ang = geometry.n_angles();

    let sino_path = required(&files.sinogram, id, mode, "sinogram")?;
    let mut sino = decoder.decode(sino_path)?;
    if sino.cols != n_det || !(sino.rows == n_ang || sino.rows == n_ang + 1) {
        return Err(Error::CorruptFile {
            path: sino_path.clone(),
            reason: format!("sinogram is {}x{}, expected {n_ang}x{n_det}", sino.rows, sino.cols),
        });
    }
    sino.values.truncate(n_ang * n_det);
    let raw = Sinogram::from_values(geometry.clone(), Stage::Counts, sino.values).map_err(|e| Error::CorruptFile {
        path: sino_path.clone(),
        reason: e.to_string(),
    })?;

    let dark_path = required(&files.dark, id, mode, "dark frame")?;
    let dark = detector_frame(dark_path, decoder.decode(dark_path)?, n_det)?;
    if files.flats.is_empty() {
        return Err(Error::MissingMode {
            id,
            mode: format!("{mode} flat frames"),
        });
    }
    let flats = files
        .flats
        .iter()
        .map(|p| detector_frame(p, decoder.decode(p)?, n_det))
        .collect::<Result<Vec<_>>>()?;
    let calibration = DetectorCalibration::from_flat_frames(dark, &flats)?;

    let reference = match &files.reference {
        Some(p) => Some(load_reference_file(decoder, p, grid)?),
        None => None,
    };
    Ok(SliceRecord {
        id,
        mode,
        raw,
        calibration,
        reference,
    })
}

fn load_reference_file(decoder: &dyn RasterDecoder, path: &Path, grid: &ImageGrid) -> Result<Image> {
    let r = decoder.decode(path)?;
    if (r.rows, r.cols) != (grid.height, grid.width) {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!(
                "reference is {}x{}, expected {}x{}",
                r.rows, r.cols, grid.height, grid.width
            ),
        });
    }
    Image::from_values(grid.clone(), r.values)
}

/// The mode-2 reference reconstruction, the target for every task.
pub fn load_reference(m: &DatasetManifest, id: u32, grid: &ImageGrid) -> Result<Image> {
    let files = mode_files(m, id, Mode::Mode2)?;
    let path = required(&files.reference, id, Mode::Mode2, "reference reconstruction")?;
    load_reference_file(&DefaultDecoder, path, grid)
}
