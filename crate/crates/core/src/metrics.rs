//! PSNR and SSIM against a reference image, and their aggregation into
//! `mean ± std` tables.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::Image;

/// How the data range entering PSNR and the SSIM constants is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RangeRule {
    /// `max(ref) - min(ref)` of each slice.
    #[default]
    RefMinMax,
    /// `max(ref)` of each slice.
    RefMax,
    /// A fixed value shared by all slices.
    Fixed { value: f64 },
}

impl RangeRule {
    pub fn data_range(&self, reference: &Image) -> f64 {
        let (lo, hi) = reference
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        match *self {
            RangeRule::RefMinMax => hi - lo,
            RangeRule::RefMax => hi,
            RangeRule::Fixed { value } => value,
        }
    }
}

fn check_shapes(x: &Image, reference: &Image) -> Result<()> {
    if x.width() != reference.width() || x.height() != reference.height() {
        return Err(Error::ShapeMismatch {
            expected_rows: reference.height(),
            expected_cols: reference.width(),
            actual_rows: x.height(),
            actual_cols: x.width(),
        });
    }
    Ok(())
}

pub fn mse(x: &Image, reference: &Image) -> Result<f64> {
    check_shapes(x, reference)?;
    let n = x.values.len() as f64;
    Ok(x.values
        .iter()
        .zip(&reference.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `10 log10(range^2 / MSE)` in dB; `+inf` when the images are identical.
pub fn psnr(x: &Image, reference: &Image, rule: RangeRule) -> Result<f64> {
    let err = mse(x, reference)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let range = rule.data_range(reference);
    Ok(10.0 * (range * range / err).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean SSIM and the means of its two factors over all window positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimComponents {
    pub ssim: f64,
    /// `(2 mu_x mu_y + C1) / (mu_x^2 + mu_y^2 + C1)`.
    pub luminance: f64,
    /// `(2 s_xy + C2) / (s_x^2 + s_y^2 + C2)`.
    pub contrast_structure: f64,
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = k.iter().zip(&row[c..c + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    out
}

pub fn ssim_components(x: &Image, reference: &Image, rule: RangeRule, params: &SsimParams) -> Result<SsimComponents> {
    check_shapes(x, reference)?;
    let (w, h) = (x.width(), x.height());
    if w < params.window || h < params.window {
        return Err(Error::Dimension(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let range = rule.data_range(reference);
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let k = gaussian_kernel(params.window, params.sigma);
    let a = &x.values;
    let b = &reference.values;
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), w, h, &k);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), w, h, &k);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), w, h, &k);
    let n = mu_a.len() as f64;
    let (mut s_sum, mut l_sum, mut cs_sum) = (0.0, 0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let l_num = 2.0 * ma * mb + c1;
        let l_den = ma * ma + mb * mb + c1;
        let cs_num = 2.0 * cov + c2;
        let cs_den = va + vb + c2;
        let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
        s_sum += ratio(l_num * cs_num, l_den * cs_den);
        l_sum += ratio(l_num, l_den);
        cs_sum += ratio(cs_num, cs_den);
    }
    Ok(SsimComponents {
        ssim: s_sum / n,
        luminance: l_sum / n,
        contrast_structure: cs_sum / n,
    })
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, over every window position fully inside the image.
pub fn ssim(x: &Image, reference: &Image, rule: RangeRule) -> Result<f64> {
    Ok(ssim_components(x, reference, rule, &SsimParams::default())?.ssim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub slice_id: u32,
    pub psnr: f64,
    pub ssim: f64,
    pub data_range: f64,
}

pub fn score(slice_id: u32, x: &Image, reference: &Image, rule: RangeRule) -> Result<MetricRecord> {
    Ok(MetricRecord {
        slice_id,
        psnr: psnr(x, reference, rule)?,
        ssim: ssim(x, reference, rule)?,
        data_range: rule.data_range(reference),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divides by `N - 1`.
    #[default]
    Sample,
    /// Divides by `N`.
    Population,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and standard deviation; a single value has std 0.
    pub fn of(values: &[f64], kind: StdKind) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let dof = match kind {
            StdKind::Sample => n - 1.0,
            StdKind::Population => n,
        };
        let std = if values.len() == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dof).sqrt()
        };
        Some(MeanStd { mean, std })
    }

    /// `mean ± std` with four decimals.
    pub fn cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    /// `None` when every PSNR was infinite.
    pub psnr: Option<MeanStd>,
    pub ssim: MeanStd,
    /// Records whose PSNR was infinite and therefore left out of the mean.
    pub psnr_infinite_excluded: usize,
}

pub fn aggregate(records: &[MetricRecord], kind: StdKind) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no metric records to aggregate".into()));
    }
    let finite: Vec<f64> = records.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
    let ssims: Vec<f64> = records.iter().map(|r| r.ssim).collect();
    Ok(Summary {
        count: records.len(),
        psnr: MeanStd::of(&finite, kind),
        ssim: MeanStd::of(&ssims, kind).expect("non-empty"),
        psnr_infinite_excluded: records.len() - finite.len(),
    })
}

/// One line of the per-slice results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub task: String,
    pub method: String,
    pub record: MetricRecord,
}

pub const CSV_HEADER: [&str; 6] = ["task", "method", "slice_id", "psnr_db", "ssim", "data_range"];

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::Encode(e.to_string());
    w.write_record(CSV_HEADER).map_err(map)?;
    for r in rows {
        w.write_record([
            r.task.clone(),
            r.method.clone(),
            r.record.slice_id.to_string(),
            fmt_f64(r.record.psnr),
            fmt_f64(r.record.ssim),
            fmt_f64(r.record.data_range),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| Error::Encode(e.to_string()))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let map = |e: csv::Error| Error::Encode(e.to_string());
    let num = |s: &str| -> Result<f64> {
        if s == "inf" {
            Ok(f64::INFINITY)
        } else {
            s.parse().map_err(|_| Error::Encode(format!("bad number '{s}'")))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(map)?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Encode(format!("expected 6 columns, got {}", rec.len())));
        }
        rows.push(CsvRow {
            task: rec[0].to_string(),
            method: rec[1].to_string(),
            record: MetricRecord {
                slice_id: rec[2].parse().map_err(|_| Error::Encode(format!("bad slice id '{}'", &rec[2])))?,
                psnr: num(&rec[3])?,
                ssim: num(&rec[4])?,
                data_range: num(&rec[5])?,
            },
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryEntry {
    pub task: String,
    pub method: String,
    pub summary: Summary,
}

/// Methods as row pairs (SSIM, PSNR), tasks as columns, cells as
/// `mean ± std`. Rows and columns keep first-appearance order.
pub fn summary_markdown(entries: &[SummaryEntry]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for e in entries {
        if !tasks.contains(&e.task.as_str()) {
            tasks.push(&e.task);
        }
        if !methods.contains(&e.method.as_str()) {
            methods.push(&e.method);
        }
    }
    let find = |m: &str, t: &str| entries.iter().find(|e| e.method == m && e.task == t);
    let mut s = String::new();
    let _ = writeln!(s, "| Method | Metric | {} |", tasks.join(" | "));
    let _ = writeln!(s, "|---|---|{}", "---|".repeat(tasks.len()));
    for m in &methods {
        for (label, first) in [("SSIM", true), ("PSNR", false)] {
            let cells: Vec<String> = tasks
                .iter()
                .map(|t| match find(m, t) {
                    None => "n/a".into(),
                    Some(e) if first => e.summary.ssim.cell(),
                    Some(e) => e.summary.psnr.map(|p| p.cell()).unwrap_or_else(|| "inf".into()),
                })
                .collect();
            let name = if first { *m } else { "" };
            let _ = writeln!(s, "| {name} | {label} | {} |", cells.join(" | "));
        }
    }
    s
}
