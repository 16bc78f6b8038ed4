//! Label-map rasters, ground-truth/prediction pairing and submission checks.
//!
//! Label maps are single-channel PNGs (8- or 16-bit grayscale, or 8-bit
//! indexed) whose raw values are the hierarchy's `pixel_ids`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{ClassId, LabelHierarchy};
use crate::labelmap::{LabelMap, IGNORE};

/// Undecoded raster values straight from the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRaster {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
}

fn decode_err(path: &Path, reason: impl fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Decodes a single-channel PNG and hands each row of raw values to `sink`.
fn decode_rows(bytes: &[u8], path: &Path, mut sink: impl FnMut(RowData<'_>)) -> Result<(u32, u32)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let (color, depth) = reader.output_color_type();
    let channels = color.samples();
    if channels != 1 {
        return Err(Error::MultiChannel {
            path: path.to_path_buf(),
            channels,
        });
    }
    let wide = match depth {
        png::BitDepth::Eight => false,
        png::BitDepth::Sixteen => true,
        other => return Err(decode_err(path, format!("unsupported bit depth {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(path, e))?;
    for row in buf.chunks_exact(info.line_size).take(info.height as usize) {
        let row = &row[..info.width as usize * if wide { 2 } else { 1 }];
        sink(if wide {
            RowData::Wide(row)
        } else {
            RowData::Narrow(row)
        });
    }
    Ok((info.width, info.height))
}

enum RowData<'a> {
    Narrow(&'a [u8]),
    /// Big-endian 16-bit samples.
    Wide(&'a [u8]),
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<RawRaster> {
    let mut values = Vec::new();
    let (width, height) = decode_rows(bytes, path, |row| match row {
        RowData::Narrow(r) => values.extend(r.iter().map(|&v| u16::from(v))),
        RowData::Wide(r) => {
            values.extend(r.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])))
        }
    })?;
    Ok(RawRaster {
        width,
        height,
        values,
    })
}

pub fn read_raw(path: &Path) -> Result<RawRaster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

/// Decodes a label map and remaps raw pixel ids to dense class ids.
pub fn decode_label_map(bytes: &[u8], path: &Path, h: &LabelHierarchy) -> Result<LabelMap> {
    let mut pixels = Vec::new();
    let mut unknown: Option<u16> = None;
    let mut push = |raw: u16, pixels: &mut Vec<u16>| match h.map_pixel(raw) {
        Some(v) => pixels.push(v),
        None => {
            unknown.get_or_insert(raw);
            pixels.push(IGNORE);
        }
    };
    let (width, height) = decode_rows(bytes, path, |row| match row {
        RowData::Narrow(r) => {
            pixels.reserve(r.len());
            for &v in r {
                push(u16::from(v), &mut pixels);
            }
        }
        RowData::Wide(r) => {
            for b in r.chunks_exact(2) {
                push(u16::from_be_bytes([b[0], b[1]]), &mut pixels);
            }
        }
    })?;
    if let Some(value) = unknown {
        return Err(Error::UnknownPixelId {
            path: path.to_path_buf(),
            value,
        });
    }
    LabelMap::new(width, height, pixels).map_err(|e| decode_err(path, e))
}

pub fn load_label_map(path: &Path, h: &LabelHierarchy) -> Result<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_label_map(&bytes, path, h)
}

/// Writes raw values as an 8-bit grayscale PNG when they all fit, else 16-bit.
pub fn write_raw_png(path: &Path, width: u32, height: u32, values: &[u16]) -> Result<()> {
    let bytes = encode_raw_png(width, height, values)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_raw_png(width: u32, height: u32, values: &[u16]) -> Result<Vec<u8>> {
    if values.len() != width as usize * height as usize {
        return Err(Error::InvalidArgument(
            "raster size does not match dimensions".into(),
        ));
    }
    let wide = values.iter().any(|&v| v > 255);
    let data: Vec<u8> = if wide {
        values.iter().flat_map(|v| v.to_be_bytes()).collect()
    } else {
        values.iter().map(|&v| v as u8).collect()
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(if wide {
            png::BitDepth::Sixteen
        } else {
            png::BitDepth::Eight
        });
        encoder.set_compression(png::Compression::Fast);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(out)
}

/// Encodes a label map using the hierarchy's raw pixel ids.
pub fn encode_label_map(map: &LabelMap, h: &LabelHierarchy) -> Result<Vec<u8>> {
    let raw = raw_values(map, h)?;
    encode_raw_png(map.width(), map.height(), &raw)
}

pub fn save_label_map(map: &LabelMap, h: &LabelHierarchy, path: &Path) -> Result<()> {
    let bytes = encode_label_map(map, h)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn raw_values(map: &LabelMap, h: &LabelHierarchy) -> Result<Vec<u16>> {
    map.pixels()
        .iter()
        .map(|&v| {
            if v == IGNORE {
                Ok(h.ignore_id())
            } else {
                h.check_class(ClassId(v))?;
                Ok(h.pixel_id(ClassId(v)))
            }
        })
        .collect()
}

/// RGB raster written as an 8-bit PNG.
pub fn write_rgb_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Fast);
    let mut writer = encoder.write_header().map_err(|e| decode_err(path, e))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| decode_err(path, e))?;
    writer.finish().map_err(|e| decode_err(path, e))
}

/// Weather condition inferred from the ground-truth folder layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Rain,
    Fog,
    Lowlight,
    Snow,
}

impl Condition {
    fn from_dir(name: &str) -> Option<Self> {
        match name
            .to_ascii_lowercase()
            .replace(['_', '-', ' '], "")
            .as_str()
        {
            "rain" | "rainy" => Some(Condition::Rain),
            "fog" | "foggy" => Some(Condition::Fog),
            "lowlight" => Some(Condition::Lowlight),
            "snow" | "snowy" => Some(Condition::Snow),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub key: String,
    pub gt: PathBuf,
    pub pred: PathBuf,
    pub condition: Option<Condition>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairList {
    /// Sorted by key.
    pub entries: Vec<PairEntry>,
    pub unmatched_gt: Vec<String>,
    pub unmatched_pred: Vec<String>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MatchRule {
    /// `Stem` when the prediction folder is flat, `RelativePath` otherwise.
    #[default]
    Auto,
    /// Key is the path relative to the root, without extension.
    RelativePath,
    /// Key is the file name without extension; folders only supply the condition tag.
    Stem,
}

#[derive(Clone, Debug)]
struct LabelFile {
    rel_key: String,
    stem: String,
    dirs: Vec<String>,
    path: PathBuf,
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn scan(root: &Path) -> Result<Vec<LabelFile>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<LabelFile>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let kind = entry.file_type().map_err(|e| Error::io(&path, e))?;
            if kind.is_dir() {
                walk(root, &path, out)?;
            } else if is_png(&path) {
                let rel = path.strip_prefix(root).expect("walked under root");
                let dirs: Vec<String> = rel
                    .parent()
                    .into_iter()
                    .flat_map(|p| p.components())
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect();
                let stem = rel
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let mut rel_key = dirs.join("/");
                if !rel_key.is_empty() {
                    rel_key.push('/');
                }
                rel_key.push_str(&stem);
                out.push(LabelFile {
                    rel_key,
                    stem,
                    dirs,
                    path,
                });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn index_by(
    files: &[LabelFile],
    key: impl Fn(&LabelFile) -> &str,
) -> Result<BTreeMap<String, &LabelFile>> {
    let mut map: BTreeMap<String, &LabelFile> = BTreeMap::new();
    for f in files {
        if let Some(prev) = map.insert(key(f).to_string(), f) {
            return Err(Error::DuplicateKey {
                key: key(f).to_string(),
                first: prev.path.clone(),
                second: f.path.clone(),
            });
        }
    }
    Ok(map)
}

/// Pairs ground-truth and prediction label maps. With `strict`, any ground
/// truth lacking a prediction is an error naming the missing keys.
pub fn pair_datasets(
    gt_root: &Path,
    pred_root: &Path,
    rule: MatchRule,
    strict: bool,
) -> Result<PairList> {
    let gt_files = scan(gt_root)?;
    let pred_files = scan(pred_root)?;
    let rule = match rule {
        MatchRule::Auto if pred_files.iter().all(|f| f.dirs.is_empty()) => MatchRule::Stem,
        MatchRule::Auto => MatchRule::RelativePath,
        other => other,
    };
    let key_of = |f: &LabelFile| -> String {
        match rule {
            MatchRule::Stem => f.stem.clone(),
            _ => f.rel_key.clone(),
        }
    };
    let gt = match rule {
        MatchRule::Stem => index_by(&gt_files, |f| &f.stem)?,
        _ => index_by(&gt_files, |f| &f.rel_key)?,
    };
    let mut pred = match rule {
        MatchRule::Stem => index_by(&pred_files, |f| &f.stem)?,
        _ => index_by(&pred_files, |f| &f.rel_key)?,
    };

    let mut list = PairList::default();
    for (key, g) in &gt {
        match pred.remove(key) {
            Some(p) => list.entries.push(PairEntry {
                key: key_of(g),
                gt: g.path.clone(),
                pred: p.path.clone(),
                condition: g.dirs.iter().find_map(|d| Condition::from_dir(d)),
            }),
            None => list.unmatched_gt.push(key.clone()),
        }
    }
    list.unmatched_pred = pred.into_keys().collect();
    if strict && !list.unmatched_gt.is_empty() {
        return Err(Error::MissingPrediction {
            keys: list.unmatched_gt,
        });
    }
    Ok(list)
}

/// Expected submission contents: one line per image, `key<TAB>width<TAB>height`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubmissionManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: String,
    pub width: u32,
    pub height: u32,
}

impl SubmissionManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || {
                Error::InvalidArgument(format!(
                    "manifest line {}: expected key<TAB>width<TAB>height",
                    n + 1
                ))
            };
            let mut fields = line.split('\t');
            let (Some(key), Some(w), Some(h), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            let width = w.trim().parse().map_err(|_| bad())?;
            let height = h.trim().parse().map_err(|_| bad())?;
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidArgument(format!(
                    "manifest line {}: duplicate key `{key}`",
                    n + 1
                )));
            }
            entries.push(ManifestEntry {
                key: key.to_string(),
                width,
                height,
            });
        }
        Ok(SubmissionManifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.key, e.width, e.height))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    Missing,
    Duplicate {
        paths: Vec<PathBuf>,
    },
    Unreadable {
        reason: String,
    },
    Dimensions {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    IllegalValues {
        values: Vec<u16>,
    },
    IgnorePixels {
        count: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub key: String,
    #[serde(flatten)]
    pub problem: Problem,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.key)?;
        match &self.problem {
            Problem::Missing => write!(f, "missing prediction"),
            Problem::Duplicate { paths } => write!(f, "{} files share this key", paths.len()),
            Problem::Unreadable { reason } => write!(f, "unreadable ({reason})"),
            Problem::Dimensions { expected, actual } => write!(
                f,
                "expected {}x{}, found {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            Problem::IllegalValues { values } => {
                let list: Vec<String> = values.iter().map(u16::to_string).collect();
                write!(f, "illegal pixel values {}", list.join(", "))
            }
            Problem::IgnorePixels { count } => write!(f, "{count} pixels carry the ignore id"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checked: usize,
    pub diagnostics: Vec<Diagnostic>,
}

fn check_file(
    entry: &ManifestEntry,
    path: &Path,
    h: &LabelHierarchy,
    strict: bool,
) -> Vec<Diagnostic> {
    let diag = |problem| Diagnostic {
        key: entry.key.clone(),
        problem,
    };
    let raster = match read_raw(path) {
        Ok(r) => r,
        Err(e) => {
            return vec![diag(Problem::Unreadable {
                reason: e.to_string(),
            })]
        }
    };
    let mut out = Vec::new();
    if (raster.width, raster.height) != (entry.width, entry.height) {
        out.push(diag(Problem::Dimensions {
            expected: (entry.width, entry.height),
            actual: (raster.width, raster.height),
        }));
    }
    let mut illegal = BTreeSet::new();
    let mut ignored = 0u64;
    for &v in &raster.values {
        match h.map_pixel(v) {
            Some(IGNORE) => ignored += 1,
            Some(_) => {}
            None => {
                illegal.insert(v);
            }
        }
    }
    if !illegal.is_empty() {
        out.push(diag(Problem::IllegalValues {
            values: illegal.into_iter().collect(),
        }));
    }
    if strict && ignored > 0 {
        out.push(diag(Problem::IgnorePixels { count: ignored }));
    }
    out
}

/// Checks a prediction folder against a manifest. Only an unreadable root is
/// a hard error; every other failure becomes a diagnostic.
pub fn validate_submission(
    manifest: &SubmissionManifest,
    pred_root: &Path,
    h: &LabelHierarchy,
    strict: bool,
) -> Result<ValidationReport> {
    let files = scan(pred_root)?;
    let mut by_key: BTreeMap<&str, Vec<&LabelFile>> = BTreeMap::new();
    for f in &files {
        by_key.entry(f.rel_key.as_str()).or_default().push(f);
    }

    let per_entry: Vec<Vec<Diagnostic>> = manifest
        .entries
        .par_iter()
        .map(
            |entry| match by_key.get(entry.key.as_str()).map(Vec::as_slice) {
                None | Some([]) => vec![Diagnostic {
                    key: entry.key.clone(),
                    problem: Problem::Missing,
                }],
                Some([file]) => check_file(entry, &file.path, h, strict),
                Some(many) => vec![Diagnostic {
                    key: entry.key.clone(),
                    problem: Problem::Duplicate {
                        paths: many.iter().map(|f| f.path.clone()).collect(),
                    },
                }],
            },
        )
        .collect();
    let diagnostics: Vec<Diagnostic> = per_entry.into_iter().flatten().collect();
    Ok(ValidationReport {
        passed: diagnostics.is_empty(),
        checked: manifest.entries.len(),
        diagnostics,
    })
}
