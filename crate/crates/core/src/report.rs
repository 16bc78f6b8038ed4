//! Leaderboards, classwise tables, per-image histograms and colormap diffs.
//!
//! Values are kept as fractions at full precision; percentages are rounded
//! half-to-even to two decimals only when rendered for humans.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_rgb_png, Condition};
use crate::error::{Error, Result};
use crate::hierarchy::LabelHierarchy;
use crate::labelmap::{LabelMap, IGNORE};
use crate::metrics::{MetricSummary, SubsetPenalty};

/// Formats a fraction as a percentage with two decimals, ties to even.
pub fn percent(value: f64) -> String {
    let hundredths = (value * 10_000.0).round_ties_even();
    // avoid "-0.00"
    let hundredths = if hundredths == 0.0 { 0.0 } else { hundredths };
    format!("{:.2}", hundredths / 100.0)
}

fn percent_or_na(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), percent)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub name: String,
    pub miou: f64,
    pub smiou: f64,
    pub subset_smiou: Option<f64>,
}

fn desc(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Ranks by SmIoU (descending), then by the `tie_subset` column, then by name.
pub fn build_leaderboard(
    results: &[(String, MetricSummary)],
    tie_subset: &str,
) -> Result<Vec<LeaderboardEntry>> {
    if results.is_empty() {
        return Err(Error::InvalidArgument(
            "leaderboard needs at least one result".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for (name, _) in results {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    let mut entries: Vec<LeaderboardEntry> = results
        .iter()
        .map(|(name, s)| LeaderboardEntry {
            rank: 0,
            name: name.clone(),
            miou: s.miou,
            smiou: s.smiou,
            subset_smiou: s.subset(tie_subset),
        })
        .collect();
    entries.sort_by(|a, b| {
        b.smiou
            .total_cmp(&a.smiou)
            .then_with(|| desc(a.subset_smiou, b.subset_smiou))
            .then_with(|| a.name.cmp(&b.name))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}

pub fn leaderboard_table(entries: &[LeaderboardEntry], subset_label: &str) -> String {
    let name_width = entries
        .iter()
        .map(|e| e.name.chars().count())
        .max()
        .unwrap_or(4)
        .max(4);
    let sub_header = format!("SmIoU({subset_label})");
    let mut out = format!(
        "{:<4}  {:<name_width$}  {:>6}  {:>6}  {:>w$}\n",
        "Rank",
        "Name",
        "mIoU",
        "SmIoU",
        sub_header,
        w = sub_header.len()
    );
    for e in entries {
        let _ = writeln!(
            out,
            "{:<4}  {:<name_width$}  {:>6}  {:>6}  {:>w$}",
            e.rank,
            e.name,
            percent(e.miou),
            percent(e.smiou),
            percent_or_na(e.subset_smiou),
            w = sub_header.len()
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseRow {
    pub name: String,
    pub iou: Option<f64>,
    pub safe_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseTable {
    pub rows: Vec<ClasswiseRow>,
}

/// One row per selected class, in selection order.
pub fn build_classwise<S: AsRef<str>>(
    summary: &MetricSummary,
    selection: &[S],
) -> Result<ClasswiseTable> {
    let rows = selection
        .iter()
        .map(|name| {
            let name = name.as_ref();
            let m = summary
                .per_class
                .iter()
                .find(|m| m.name == name)
                .ok_or_else(|| Error::UnknownClass(name.to_string()))?;
            Ok(ClasswiseRow {
                name: m.name.clone(),
                iou: m.iou,
                safe_iou: m.safe_iou,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClasswiseTable { rows })
}

impl ClasswiseTable {
    pub fn all(summary: &MetricSummary) -> Self {
        ClasswiseTable {
            rows: summary
                .per_class
                .iter()
                .map(|m| ClasswiseRow {
                    name: m.name.clone(),
                    iou: m.iou,
                    safe_iou: m.safe_iou,
                })
                .collect(),
        }
    }

    /// Display cells: `(name, iou%, safe_iou%)`.
    pub fn cells(&self) -> Vec<(String, String, String)> {
        self.rows
            .iter()
            .map(|r| {
                (
                    r.name.clone(),
                    percent_or_na(r.iou),
                    percent_or_na(r.safe_iou),
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou,safe_iou\n");
        for (name, iou, safe) in self.cells() {
            let quoted = if name.contains(',') || name.contains('"') {
                format!("\"{}\"", name.replace('"', "\"\""))
            } else {
                name
            };
            let _ = writeln!(out, "{quoted},{iou},{safe}");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.name.chars().count())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<w$}  {:>7}  {:>7}\n", "Class", "mIoU", "SmIoU");
        for (name, iou, safe) in self.cells() {
            let _ = writeln!(out, "{name:<w$}  {iou:>7}  {safe:>7}");
        }
        out
    }
}

pub const BIN_WIDTHS: [u32; 5] = [1, 2, 4, 5, 10];

/// Per-image score histograms over `[-100, 100]` percent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width: u32,
    pub miou_counts: Vec<u64>,
    pub smiou_counts: Vec<u64>,
}

impl HistogramSpec {
    pub fn bins(&self) -> usize {
        self.miou_counts.len()
    }

    /// `[start, end)` of bin `i` in percent; the top bin also holds 100.
    pub fn bin_range(&self, i: usize) -> (i32, i32) {
        let start = -100 + (i as i32) * self.bin_width as i32;
        (start, start + self.bin_width as i32)
    }

    pub fn bin_of(&self, fraction: f64) -> usize {
        bin_index(fraction, self.bin_width, self.bins())
    }

    pub fn series_csv(&self, counts: &[u64]) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, c) in counts.iter().enumerate() {
            let (a, b) = self.bin_range(i);
            let _ = writeln!(out, "{a},{b},{c}");
        }
        out
    }
}

fn bin_index(fraction: f64, width: u32, bins: usize) -> usize {
    let position = (fraction * 100.0 + 100.0) / f64::from(width);
    // Snap values that are an edge up to float noise (e.g. 0.29 * 100).
    let nearest = position.round();
    let position = if (position - nearest).abs() < 1e-9 {
        nearest
    } else {
        position
    };
    (position.floor().max(0.0) as usize).min(bins - 1)
}

/// Bins `(miou, smiou)` pairs, given as fractions, with left-closed bins.
pub fn build_histogram(
    scores: impl IntoIterator<Item = (f64, f64)>,
    bin_width: u32,
) -> Result<HistogramSpec> {
    if !BIN_WIDTHS.contains(&bin_width) {
        return Err(Error::InvalidArgument(format!(
            "bin width {bin_width} not one of {BIN_WIDTHS:?}"
        )));
    }
    let bins = (200 / bin_width) as usize;
    let mut spec = HistogramSpec {
        bin_width,
        miou_counts: vec![0; bins],
        smiou_counts: vec![0; bins],
    };
    for (miou, smiou) in scores {
        spec.miou_counts[bin_index(miou, bin_width, bins)] += 1;
        spec.smiou_counts[bin_index(smiou, bin_width, bins)] += 1;
    }
    Ok(spec)
}

pub const HIGHLIGHT: [u8; 3] = [255, 0, 0];
const IGNORE_COLOR: [u8; 3] = [0, 0, 0];

/// Ground truth, prediction and disagreement overlay as RGB rasters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorDiff {
    pub width: u32,
    pub height: u32,
    pub gt: Vec<u8>,
    pub pred: Vec<u8>,
    pub overlay: Vec<u8>,
    /// Pixels with `gt != pred` and `gt != ignore`.
    pub highlighted: u64,
}

impl ColorDiff {
    /// Writes the three panels side by side.
    pub fn save(&self, path: &Path) -> Result<()> {
        let w = self.width as usize;
        let mut canvas = Vec::with_capacity(self.gt.len() * 3);
        for y in 0..self.height as usize {
            for panel in [&self.gt, &self.pred, &self.overlay] {
                canvas.extend_from_slice(&panel[y * w * 3..(y + 1) * w * 3]);
            }
        }
        write_rgb_png(path, self.width * 3, self.height, &canvas)
    }
}

pub fn render_colormap_diff(
    gt: &LabelMap,
    pred: &LabelMap,
    h: &LabelHierarchy,
) -> Result<ColorDiff> {
    LabelMap::check_shape(gt, pred)?;
    let palette: Vec<[u8; 3]> = h
        .class_ids()
        .map(|c| {
            h.color(c)
                .ok_or_else(|| Error::PaletteGap(h.leaf_name(c).to_string()))
        })
        .collect::<Result<_>>()?;
    let color = |v: u16| -> Result<[u8; 3]> {
        if v == IGNORE {
            Ok(IGNORE_COLOR)
        } else {
            palette
                .get(v as usize)
                .copied()
                .ok_or(Error::InvalidClassId {
                    id: u32::from(v),
                    classes: palette.len(),
                })
        }
    };

    let n = gt.len();
    let mut out = ColorDiff {
        width: gt.width(),
        height: gt.height(),
        gt: Vec::with_capacity(n * 3),
        pred: Vec::with_capacity(n * 3),
        overlay: Vec::with_capacity(n * 3),
        highlighted: 0,
    };
    for (&g, &p) in gt.pixels().iter().zip(pred.pixels()) {
        let gc = color(g)?;
        let pc = color(p)?;
        out.gt.extend_from_slice(&gc);
        out.pred.extend_from_slice(&pc);
        if g != IGNORE && g != p {
            out.highlighted += 1;
            out.overlay.extend_from_slice(&HIGHLIGHT);
        } else {
            out.overlay
                .extend(pc.iter().map(|&v| (u16::from(v) * 2 / 5) as u8));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub key: String,
    pub condition: Option<Condition>,
    /// `None` when the image has no labelled pixels.
    pub miou: Option<f64>,
    pub smiou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub hierarchy: String,
    pub important: String,
    pub subsets: Vec<String>,
    pub subset_penalty: SubsetPenalty,
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub pairs: usize,
    pub scored_images: usize,
    pub unscored_images: usize,
    pub counted_pixels: u64,
    pub ignored_pixels: u64,
    pub unmatched_predictions: usize,
}

/// The `report.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineReport {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub run: RunInfo,
    pub counts: RunCounts,
    pub summary: MetricSummary,
    pub per_image: Vec<ImageScore>,
}

impl MachineReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn scored(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.per_image
            .iter()
            .filter_map(|s| Some((s.miou?, s.smiou?)))
    }
}

/// SHA-256 of the hierarchy's canonical JSON, hex encoded.
pub fn config_hash(h: &LabelHierarchy) -> String {
    let digest = Sha256::digest(h.to_json().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Machine and human outputs for one evaluation run.
pub fn emit_run(
    out_dir: &Path,
    report: &MachineReport,
    bin_width: u32,
    tie_subset: &str,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("report.json"), &report.to_json())?;
    write_file(
        &out_dir.join("report.csv"),
        &ClasswiseTable::all(&report.summary).to_csv(),
    )?;
    let board = build_leaderboard(
        &[(report.run.name.clone(), report.summary.clone())],
        tie_subset,
    )?;
    emit_leaderboard(out_dir, &board, tie_subset)?;
    emit_histogram(out_dir, &build_histogram(report.scored(), bin_width)?)
}

pub fn emit_leaderboard(
    out_dir: &Path,
    entries: &[LeaderboardEntry],
    subset_label: &str,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(
        &out_dir.join("leaderboard.txt"),
        &leaderboard_table(entries, subset_label),
    )?;
    let mut json = serde_json::to_string_pretty(entries).expect("leaderboard serializes");
    json.push('\n');
    write_file(&out_dir.join("leaderboard.json"), &json)
}

pub fn emit_histogram(out_dir: &Path, hist: &HistogramSpec) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(
        &out_dir.join("hist_miou.csv"),
        &hist.series_csv(&hist.miou_counts),
    )?;
    write_file(
        &out_dir.join("hist_smiou.csv"),
        &hist.series_csv(&hist.smiou_counts),
    )
}

/// Writes `diff/<key>.png`, creating nested folders for keys with `/`.
pub fn emit_diff(out_dir: &Path, key: &str, diff: &ColorDiff) -> Result<()> {
    let path = out_dir.join("diff").join(format!("{key}.png"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    diff.save(&path)
}
