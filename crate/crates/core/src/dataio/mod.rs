//! Array files, dataset manifests and slice loading.
//!
//! RawF32LE block layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "TBNK"
//!      4     4  version (u32) = 1
//!      8     4  rows (u32)
//!     12     4  cols (u32)
//!     16  4*r*c values, f32 little-endian, row-major
//! ```
//!
//! Images are stored as `height x width` with row 0 at the top; sinograms as
//! `angles x detector pixels`.

mod manifest;
mod synthetic;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, ImageGrid};
use crate::projector::{Image, Sinogram, Stage};

pub use manifest::{
    build_manifest, load_reference, load_slice, load_slice_with, DatasetManifest, Mode, ModeFiles, SliceEntry,
    SliceRecord, Split, SplitRange, SplitTable, SPLIT_FILE,
};
pub use synthetic::{write_mini_dataset, MiniDatasetSpec};

pub const RAW_MAGIC: [u8; 4] = *b"TBNK";
pub const RAW_VERSION: u32 = 1;
pub const RAW_HEADER_LEN: usize = 16;

/// Extension used for RawF32LE files.
pub const RAW_EXTENSION: &str = "tbnk";

/// A row-major 2-D array as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Column means; used to collapse stacks of calibration frames.
    pub fn column_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.rows.max(1) as f64);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    RawF32LE,
    /// 16-bit grayscale preview, min-max windowed.
    Png16,
}

impl FileFormat {
    /// `.png` means a preview; anything else is RawF32LE.
    pub fn from_path(path: &Path) -> Self {
        match extension(path).as_deref() {
            Some("png") => FileFormat::Png16,
            _ => FileFormat::RawF32LE,
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

pub fn write_raw<W: Write>(w: &mut W, rows: usize, cols: usize, values: &[f64]) -> std::io::Result<()> {
    w.write_all(&encode_raw(rows, cols, values))
}

pub fn encode_raw(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols, "raw block shape does not match data length");
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn parse_header(h: &[u8]) -> std::result::Result<(usize, usize), String> {
    if h[0..4] != RAW_MAGIC {
        return Err(format!("bad magic {:?}", &h[0..4]));
    }
    let word = |i: usize| u32::from_le_bytes([h[i], h[i + 1], h[i + 2], h[i + 3]]);
    let version = word(4);
    if version != RAW_VERSION {
        return Err(format!("unsupported block version {version}"));
    }
    Ok((word(8) as usize, word(12) as usize))
}

fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

/// Reads one block from a stream; malformed input is a protocol error.
pub fn read_raw<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut header = [0u8; RAW_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Protocol(format!("reading block header: {e}")))?;
    let (rows, cols) = parse_header(&header).map_err(Error::Protocol)?;
    let mut body = vec![0u8; 4 * rows * cols];
    r.read_exact(&mut body)
        .map_err(|e| Error::Protocol(format!("reading {rows}x{cols} block body: {e}")))?;
    Ok(Matrix {
        rows,
        cols,
        values: f32_values(&body),
    })
}

/// Decodes a whole file's bytes; the block must fill the file exactly.
pub fn decode_raw(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < RAW_HEADER_LEN {
        return Err(corrupt(format!(
            "{} bytes is shorter than the {RAW_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let (rows, cols) = parse_header(&bytes[..RAW_HEADER_LEN]).map_err(corrupt)?;
    let expected = RAW_HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "header says {rows}x{cols} ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    Ok(Matrix {
        rows,
        cols,
        values: f32_values(&bytes[RAW_HEADER_LEN..]),
    })
}

/// Maps values to `u16` with the window `[min, max]`. A constant input has
/// no window and maps to mid-gray.
pub fn window_u16(values: &[f64]) -> Vec<u16> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return vec![32768; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            (t * 65535.0).round() as u16
        })
        .collect()
}

pub fn encode_png16(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, cols as u32, rows as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::Encode(e.to_string()))?;
        let data: Vec<u8> = window_u16(values).iter().flat_map(|v| v.to_be_bytes()).collect();
        writer.write_image_data(&data).map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn save_matrix(path: &Path, rows: usize, cols: usize, values: &[f64], format: FileFormat) -> Result<()> {
    let bytes = match format {
        FileFormat::RawF32LE => encode_raw(rows, cols, values),
        FileFormat::Png16 => encode_png16(rows, cols, values)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_image(path: &Path, img: &Image, format: FileFormat) -> Result<()> {
    save_matrix(path, img.height(), img.width(), &img.values, format)
}

pub fn save_sinogram(path: &Path, y: &Sinogram, format: FileFormat) -> Result<()> {
    save_matrix(path, y.n_angles(), y.n_detector(), &y.values, format)
}

/// Turns single-channel raster files into matrices. Swappable so dataset
/// quirks stay out of the pipeline.
pub trait RasterDecoder: Send + Sync {
    fn decode(&self, path: &Path) -> Result<Matrix>;
}

/// RawF32LE by default; `.tif`/`.tiff` through a grayscale TIFF reader
/// (8/16/32-bit integer or 32/64-bit float samples).
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultDecoder;

impl RasterDecoder for DefaultDecoder {
    fn decode(&self, path: &Path) -> Result<Matrix> {
        match extension(path).as_deref() {
            Some("tif") | Some("tiff") => decode_tiff(path),
            _ => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                decode_raw(path, &bytes)
            }
        }
    }
}

fn decode_tiff(path: &Path) -> Result<Matrix> {
    use tiff::decoder::{Decoder, DecodingResult};
    let corrupt = |e: tiff::TiffError| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(std::io::BufReader::new(file)).map_err(corrupt)?;
    let (w, h) = dec.dimensions().map_err(corrupt)?;
    let values: Vec<f64> = match dec.read_image().map_err(corrupt)? {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        _ => {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                reason: "unsupported TIFF sample format".into(),
            })
        }
    };
    let (rows, cols) = (h as usize, w as usize);
    if values.len() != rows * cols {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("{} samples for a {rows}x{cols} single-channel image", values.len()),
        });
    }
    Ok(Matrix { rows, cols, values })
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    DefaultDecoder.decode(path)
}

pub fn load_image(path: &Path, grid: &ImageGrid) -> Result<Image> {
    let m = load_matrix(path)?;
    if (m.rows, m.cols) != (grid.height, grid.width) {
        return Err(Error::ShapeMismatch {
            expected_rows: grid.height,
            expected_cols: grid.width,
            actual_rows: m.rows,
            actual_cols: m.cols,
        });
    }
    Image::from_values(grid.clone(), m.values)
}

pub fn load_sinogram(path: &Path, geometry: &FanBeamGeometry, stage: Stage) -> Result<Sinogram> {
    let m = load_matrix(path)?;
    if (m.rows, m.cols) != (geometry.n_angles(), geometry.detector_pixel_count) {
        return Err(Error::ShapeMismatch {
            expected_rows: geometry.n_angles(),
            expected_cols: geometry.detector_pixel_count,
            actual_rows: m.rows,
            actual_cols: m.cols,
        });
    }
    Sinogram::from_values(geometry.clone(), stage, m.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode_raw(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&bytes[0..4], b"TBNK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 32);
        assert_eq!(f32::from_le_bytes(bytes[28..32].try_into().unwrap()), 4.0);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/img.tbnk");
        let grid = ImageGrid {
            width: 3,
            height: 2,
            pixel_size: 1.0,
            center: [0.0, 0.0],
        };
        let values: Vec<f64> = [0.1f32, -2.5, 1e-30, 7.0, f32::MAX, 0.0].iter().map(|&v| v as f64).collect();
        let img = Image::from_values(grid.clone(), values.clone()).unwrap();
        save_image(&path, &img, FileFormat::RawF32LE).unwrap();
        let back = load_image(&path, &grid).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.values), bits(&values));
    }

    #[test]
    fn truncated_file_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.tbnk");
        let mut bytes = encode_raw(4, 4, &[1.0; 16]);
        bytes.truncate(50);
        fs::write(&path, bytes).unwrap();
        let err = load_matrix(&path).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::CorruptFile { .. }));
        assert!(msg.contains("80 bytes") && msg.contains("50 bytes") && msg.contains("cut.tbnk"), "{msg}");
    }

    #[test]
    fn wrong_shape_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tbnk");
        fs::write(&path, encode_raw(2, 3, &[0.0; 6])).unwrap();
        let err = load_image(&path, &ImageGrid::square(2, 1.0)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { actual_cols: 3, .. }));
    }

    #[test]
    fn stream_errors_are_protocol_errors() {
        let mut bad = &b"NOPE\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0"[..];
        assert!(matches!(read_raw(&mut bad), Err(Error::Protocol(_))));
        let block = encode_raw(1, 2, &[1.0, 2.0]);
        let mut short = &block[..20];
        assert!(matches!(read_raw(&mut short), Err(Error::Protocol(_))));
        let mut ok = &block[..];
        assert_eq!(read_raw(&mut ok).unwrap().values, vec![1.0, 2.0]);
    }

    fn decode_png(bytes: &[u8]) -> (u32, u32, Vec<u16>) {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(info.bit_depth, png::BitDepth::Sixteen);
        let px = buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        (info.width, info.height, px)
    }

    #[test]
    fn constant_preview_is_mid_gray() {
        let bytes = encode_png16(3, 4, &[0.7; 12]).unwrap();
        let (w, h, px) = decode_png(&bytes);
        assert_eq!((w, h), (4, 3));
        assert!(px.iter().all(|&p| p == 32768));
    }

    #[test]
    fn preview_window_spans_full_range() {
        let bytes = encode_png16(1, 3, &[-1.0, 0.0, 1.0]).unwrap();
        let (_, _, px) = decode_png(&bytes);
        assert_eq!(px, vec![0, 32768, 65535]);
    }

    #[test]
    fn tiff_float_and_u16_decode() {
        use tiff::encoder::{colortype, TiffEncoder};
        let dir = tempfile::tempdir().unwrap();
        let p32 = dir.path().join("f.tif");
        let mut enc = TiffEncoder::new(fs::File::create(&p32).unwrap()).unwrap();
        enc.write_image::<colortype::Gray32Float>(3, 2, &[1.5, 2.0, -3.0, 0.0, 4.25, 9.0])
            .unwrap();
        let m = load_matrix(&p32).unwrap();
        assert_eq!((m.rows, m.cols), (2, 3));
        assert_eq!(m.values, vec![1.5, 2.0, -3.0, 0.0, 4.25, 9.0]);

        let p16 = dir.path().join("u.tiff");
        let mut enc = TiffEncoder::new(fs::File::create(&p16).unwrap()).unwrap();
        enc.write_image::<colortype::Gray16>(2, 1, &[7u16, 65535]).unwrap();
        assert_eq!(load_matrix(&p16).unwrap().values, vec![7.0, 65535.0]);
    }

    proptest! {
        #[test]
        fn raw_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f32>() as f64 * 100.0 - 50.0).collect();
            let values: Vec<f64> = values.iter().map(|&v| v as f32 as f64).collect();
            let bytes = encode_raw(rows, cols, &values);
            let m = decode_raw(Path::new("mem"), &bytes).unwrap();
            prop_assert_eq!((m.rows, m.cols), (rows, cols));
            prop_assert_eq!(m.values, values);
        }
    }
}
