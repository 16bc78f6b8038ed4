//! Pixel-level ground-truth/prediction co-occurrence counts.
//!
//! Row = ground-truth class, column = predicted class. Matrices built over
//! disjoint batches of images merge by elementwise addition, so any
//! partitioning across workers yields identical totals.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hierarchy::ClassId;
use crate::labelmap::{LabelMap, IGNORE};

/// What to do with ignore-id pixels found in a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IgnorePolicy {
    /// Reject the prediction.
    #[default]
    Strict,
    /// Count such pixels as predictions of the given leaf.
    Remap(ClassId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    ignored_pixels: u64,
    image_count: u64,
}

/// Set sizes for one class: `|gt_c|`, `|pred_c|` and `|gt_c ∪ pred_c|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SetSizes {
    pub gt: u64,
    pub pred: u64,
    pub union: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            ignored_pixels: 0,
            image_count: 0,
        }
    }

    /// Builds a matrix from explicit row-major counts.
    pub fn from_counts(
        classes: usize,
        counts: Vec<u64>,
        ignored_pixels: u64,
        image_count: u64,
    ) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::DimensionMismatch {
                expected: classes * classes,
                actual: counts.len(),
            });
        }
        Ok(ConfusionMatrix {
            classes,
            counts,
            ignored_pixels,
            image_count,
        })
    }

    /// Single-image matrix.
    pub fn from_pair(
        classes: usize,
        gt: &LabelMap,
        pred: &LabelMap,
        policy: IgnorePolicy,
    ) -> Result<Self> {
        let mut m = Self::new(classes);
        m.accumulate(gt, pred, policy)?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn ignored_pixels(&self) -> u64 {
        self.ignored_pixels
    }

    pub fn image_count(&self) -> u64 {
        self.image_count
    }

    #[inline]
    pub fn get(&self, gt: ClassId, pred: ClassId) -> u64 {
        self.counts[gt.index() * self.classes + pred.index()]
    }

    pub fn set(&mut self, gt: ClassId, pred: ClassId, value: u64) {
        self.counts[gt.index() * self.classes + pred.index()] = value;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, gt: ClassId) -> &[u64] {
        let start = gt.index() * self.classes;
        &self.counts[start..start + self.classes]
    }

    /// Sum of all counted (non-ignored) pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Pixels whose prediction disagrees with the ground truth.
    pub fn off_diagonal_total(&self) -> u64 {
        self.total()
            - (0..self.classes)
                .map(|i| self.counts[i * self.classes + i])
                .sum::<u64>()
    }

    /// Adds one image pair. Leaves `self` untouched on error.
    pub fn accumulate(
        &mut self,
        gt: &LabelMap,
        pred: &LabelMap,
        policy: IgnorePolicy,
    ) -> Result<()> {
        LabelMap::check_shape(gt, pred)?;
        let k = self.classes;
        let fallback = match policy {
            IgnorePolicy::Strict => None,
            IgnorePolicy::Remap(c) => {
                if c.index() >= k {
                    return Err(Error::InvalidClassId {
                        id: u32::from(c.0),
                        classes: k,
                    });
                }
                Some(c.0)
            }
        };

        let mut local = vec![0u64; k * k];
        let mut ignored = 0u64;
        for (index, (&g, &p)) in gt.pixels().iter().zip(pred.pixels()).enumerate() {
            let p = if p == IGNORE {
                match fallback {
                    Some(f) => f,
                    None => return Err(Error::IgnoreInPrediction { index }),
                }
            } else {
                p
            };
            if p as usize >= k {
                return Err(Error::InvalidClassId {
                    id: u32::from(p),
                    classes: k,
                });
            }
            if g == IGNORE {
                ignored += 1;
                continue;
            }
            if g as usize >= k {
                return Err(Error::InvalidClassId {
                    id: u32::from(g),
                    classes: k,
                });
            }
            local[g as usize * k + p as usize] += 1;
        }

        for (dst, src) in self.counts.iter_mut().zip(&local) {
            *dst += src;
        }
        self.ignored_pixels += ignored;
        self.image_count += 1;
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: other.classes,
            });
        }
        for (dst, src) in self.counts.iter_mut().zip(&other.counts) {
            *dst += src;
        }
        self.ignored_pixels += other.ignored_pixels;
        self.image_count += other.image_count;
        Ok(())
    }

    pub fn set_sizes(&self, c: ClassId) -> SetSizes {
        let k = self.classes;
        let i = c.index();
        let gt: u64 = self.row(c).iter().sum();
        let pred: u64 = (0..k).map(|r| self.counts[r * k + i]).sum();
        SetSizes {
            gt,
            pred,
            union: gt + pred - self.counts[i * k + i],
        }
    }

    /// Tab-separated dump: a header of class names, one row per ground-truth
    /// class, then `ignored` and `images` trailer lines.
    pub fn to_text<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> String {
        let names: Vec<&str> = names.into_iter().collect();
        let mut out = String::from("gt\\pred");
        for n in &names {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for (r, row) in self.counts.chunks(self.classes.max(1)).enumerate() {
            out.push_str(names.get(r).copied().unwrap_or("?"));
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "ignored\t{}", self.ignored_pixels);
        let _ = writeln!(out, "images\t{}", self.image_count);
        out
    }

    /// Parses [`Self::to_text`] output, returning the class names and matrix.
    pub fn from_text(text: &str) -> Result<(Vec<String>, ConfusionMatrix)> {
        let bad = |msg: &str| Error::InvalidArgument(format!("confusion dump: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let names: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
        let k = names.len();
        let mut counts = Vec::with_capacity(k * k);
        for name in &names {
            let line = lines.next().ok_or_else(|| bad("missing rows"))?;
            let mut fields = line.split('\t');
            if fields.next() != Some(name.as_str()) {
                return Err(bad("row label does not match header"));
            }
            let row: Vec<u64> = fields
                .map(|f| f.parse::<u64>().map_err(|_| bad("non-integer count")))
                .collect::<Result<_>>()?;
            if row.len() != k {
                return Err(bad("ragged row"));
            }
            counts.extend(row);
        }
        let mut trailer = |label: &str| -> Result<u64> {
            let line = lines.next().ok_or_else(|| bad("missing trailer"))?;
            match line.split_once('\t') {
                Some((l, v)) if l == label => v.parse().map_err(|_| bad("non-integer trailer")),
                _ => Err(bad("malformed trailer")),
            }
        };
        let ignored = trailer("ignored")?;
        let images = trailer("images")?;
        Ok((
            names,
            ConfusionMatrix::from_counts(k, counts, ignored, images)?,
        ))
    }
}
