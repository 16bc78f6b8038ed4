//! IoU, safe IoU and their means, computed from a [`ConfusionMatrix`].
//!
//! Safe IoU subtracts from a class's IoU the share of its ground-truth pixels
//! predicted as other classes, each weighted by `td(c, s) / n`. Important
//! classes are penalized for every confusion; other classes only for
//! confusions into the important set.
//!
//! Penalties are accumulated as integers (`td = edges / 2`, so the weight is
//! `edges / 2n`) and divided once, which makes every per-class value exact up
//! to a single rounding.

pub mod loss;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::confusion::{ConfusionMatrix, IgnorePolicy};
use crate::error::{Error, Result};
use crate::hierarchy::{ClassId, ImportantSet, LabelHierarchy};
use crate::labelmap::LabelMap;

pub use loss::{combined_loss, cross_entropy_loss, dice_loss, EPSILON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub name: String,
    pub iou: Option<f64>,
    pub safe_iou: Option<f64>,
    pub present: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_class: Vec<ClassMetrics>,
    pub miou: f64,
    pub smiou: f64,
    /// Mean safe IoU over the present classes of each named subset; `None`
    /// when no class of the subset is present.
    pub subset_smiou: BTreeMap<String, Option<f64>>,
    pub important_set_used: String,
}

impl MetricSummary {
    pub fn class(&self, c: ClassId) -> &ClassMetrics {
        &self.per_class[c.index()]
    }

    pub fn subset(&self, name: &str) -> Option<f64> {
        self.subset_smiou.get(name).copied().flatten()
    }

    pub fn present_count(&self) -> usize {
        self.per_class.iter().filter(|m| m.present).count()
    }
}

/// How subset SmIoU columns (e.g. `tp`) treat penalties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetPenalty {
    /// Keep the run's important set; only restrict the mean to the subset.
    #[default]
    Restrict,
    /// Recompute each subset's safe IoUs with the subset as the important set.
    Recompute,
}

/// `|gt_c ∩ pred_c| / |gt_c ∪ pred_c|`, undefined when the union is empty.
pub fn iou_per_class(m: &ConfusionMatrix, c: ClassId) -> Option<f64> {
    let union = m.set_sizes(c).union;
    (union > 0).then(|| m.get(c, c) as f64 / union as f64)
}

/// `|gt_c ∩ pred_s| / |gt_c ∪ pred_c|`, undefined when the union is empty.
pub fn safe_intersection(m: &ConfusionMatrix, c: ClassId, s: ClassId) -> Option<f64> {
    let union = m.set_sizes(c).union;
    (union > 0).then(|| m.get(c, s) as f64 / union as f64)
}

fn check_dims(m: &ConfusionMatrix, h: &LabelHierarchy) -> Result<()> {
    if m.num_classes() == h.num_classes() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: h.num_classes(),
            actual: m.num_classes(),
        })
    }
}

/// Exact numerator and denominator of the safe IoU of `c`, scaled by `2n`.
fn safe_ratio(
    m: &ConfusionMatrix,
    h: &LabelHierarchy,
    important: &[bool],
    c: ClassId,
) -> Option<(i128, i128)> {
    let union = m.set_sizes(c).union;
    if union == 0 {
        return None;
    }
    let scale = 2 * i128::from(h.depth());
    let row = m.row(c);
    let penalty: i128 = if important[c.index()] {
        row.iter()
            .enumerate()
            .filter(|&(s, _)| s != c.index())
            .map(|(s, &n)| i128::from(h.path_edges(c, ClassId(s as u16))) * i128::from(n))
            .sum()
    } else {
        row.iter()
            .enumerate()
            .filter(|&(s, _)| important[s])
            .map(|(s, &n)| i128::from(h.path_edges(c, ClassId(s as u16))) * i128::from(n))
            .sum()
    };
    Some((
        scale * i128::from(m.get(c, c)) - penalty,
        scale * i128::from(union),
    ))
}

pub fn safe_iou_per_class(
    m: &ConfusionMatrix,
    h: &LabelHierarchy,
    imp: &ImportantSet,
    c: ClassId,
) -> Result<Option<f64>> {
    check_dims(m, h)?;
    h.check_class(c)?;
    let mask = imp.mask(h.num_classes());
    Ok(safe_ratio(m, h, &mask, c).map(|(num, den)| num as f64 / den as f64))
}

/// Mean that does not depend on the order of `values`.
fn order_free_mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    Some(values.into_iter().sum::<f64>() / n)
}

fn safe_values(m: &ConfusionMatrix, h: &LabelHierarchy, imp: &ImportantSet) -> Vec<Option<f64>> {
    let mask = imp.mask(h.num_classes());
    h.class_ids()
        .map(|c| safe_ratio(m, h, &mask, c).map(|(num, den)| num as f64 / den as f64))
        .collect()
}

pub fn summarize(
    m: &ConfusionMatrix,
    h: &LabelHierarchy,
    imp: &ImportantSet,
    subsets: &[ImportantSet],
) -> Result<MetricSummary> {
    summarize_with(m, h, imp, subsets, SubsetPenalty::Restrict)
}

pub fn summarize_with(
    m: &ConfusionMatrix,
    h: &LabelHierarchy,
    imp: &ImportantSet,
    subsets: &[ImportantSet],
    mode: SubsetPenalty,
) -> Result<MetricSummary> {
    check_dims(m, h)?;
    let safe = safe_values(m, h, imp);
    let per_class: Vec<ClassMetrics> = h
        .class_ids()
        .map(|c| {
            let iou = iou_per_class(m, c);
            ClassMetrics {
                class: c,
                name: h.leaf_name(c).to_string(),
                iou,
                safe_iou: safe[c.index()],
                present: iou.is_some(),
            }
        })
        .collect();

    let miou = order_free_mean(per_class.iter().filter_map(|x| x.iou).collect())
        .ok_or(Error::NoPresentClass)?;
    let smiou = order_free_mean(per_class.iter().filter_map(|x| x.safe_iou).collect())
        .ok_or(Error::NoPresentClass)?;

    let mut subset_smiou = BTreeMap::new();
    for subset in subsets {
        let values = match mode {
            SubsetPenalty::Restrict => safe.clone(),
            SubsetPenalty::Recompute => safe_values(m, h, subset),
        };
        let mean = order_free_mean(subset.members().filter_map(|c| values[c.index()]).collect());
        subset_smiou.insert(subset.name().to_string(), mean);
    }

    Ok(MetricSummary {
        per_class,
        miou,
        smiou,
        subset_smiou,
        important_set_used: imp.name().to_string(),
    })
}

/// Metrics for a single image; class presence is judged within that image.
pub fn per_image_metrics(
    gt: &LabelMap,
    pred: &LabelMap,
    h: &LabelHierarchy,
    imp: &ImportantSet,
    subsets: &[ImportantSet],
    policy: IgnorePolicy,
) -> Result<MetricSummary> {
    let m = ConfusionMatrix::from_pair(h.num_classes(), gt, pred, policy)?;
    summarize(&m, h, imp, subsets)
}
