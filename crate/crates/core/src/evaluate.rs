//! End-to-end evaluation of a paired dataset on the current rayon pool.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::confusion::{ConfusionMatrix, IgnorePolicy};
use crate::dataset::{load_label_map, PairList};
use crate::error::{Error, Result};
use crate::hierarchy::{ImportantSet, LabelHierarchy};
use crate::metrics::{summarize, summarize_with, MetricSummary, SubsetPenalty};
use crate::report::{
    config_hash, emit_diff, render_colormap_diff, ImageScore, MachineReport, RunCounts, RunInfo,
};

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub important: ImportantSet,
    pub subsets: Vec<ImportantSet>,
    pub policy: IgnorePolicy,
    pub subset_penalty: SubsetPenalty,
    /// Write `diff/<key>.png` under this folder for every pair.
    pub diff_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub total: ConfusionMatrix,
    pub summary: MetricSummary,
    pub images: Vec<ImageScore>,
}

fn score_pair(
    entry: &crate::dataset::PairEntry,
    h: &LabelHierarchy,
    opts: &EvalOptions,
) -> Result<(ConfusionMatrix, ImageScore)> {
    let gt = load_label_map(&entry.gt, h)?;
    let pred = load_label_map(&entry.pred, h)?;
    let m = ConfusionMatrix::from_pair(h.num_classes(), &gt, &pred, opts.policy)?;
    if let Some(dir) = &opts.diff_dir {
        let diff = render_colormap_diff(&gt, &pred, h)?;
        emit_diff(dir, &entry.key, &diff)?;
    }
    let (miou, smiou) = match summarize(&m, h, &opts.important, &[]) {
        Ok(s) => (Some(s.miou), Some(s.smiou)),
        Err(Error::NoPresentClass) => (None, None),
        Err(e) => return Err(e),
    };
    Ok((
        m,
        ImageScore {
            key: entry.key.clone(),
            condition: entry.condition,
            miou,
            smiou,
        },
    ))
}

/// Loads, accumulates and scores every pair in parallel. The merged matrix
/// and the image order (by key) do not depend on the number of workers.
pub fn evaluate_pairs(
    pairs: &PairList,
    h: &LabelHierarchy,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let results: Vec<Result<(ConfusionMatrix, ImageScore)>> = pairs
        .entries
        .par_iter()
        .map(|e| score_pair(e, h, opts))
        .collect();

    let mut total = ConfusionMatrix::new(h.num_classes());
    let mut images = Vec::with_capacity(results.len());
    for r in results {
        let (m, score) = r?;
        total.merge_from(&m)?;
        images.push(score);
    }
    let summary = summarize_with(
        &total,
        h,
        &opts.important,
        &opts.subsets,
        opts.subset_penalty,
    )?;
    Ok(Evaluation {
        total,
        summary,
        images,
    })
}

pub fn build_machine_report(
    name: &str,
    h: &LabelHierarchy,
    opts: &EvalOptions,
    pairs: &PairList,
    eval: &Evaluation,
) -> MachineReport {
    let scored = eval.images.iter().filter(|s| s.miou.is_some()).count();
    MachineReport {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(h),
        run: RunInfo {
            name: name.to_string(),
            hierarchy: h.name().to_string(),
            important: opts.important.name().to_string(),
            subsets: opts.subsets.iter().map(|s| s.name().to_string()).collect(),
            subset_penalty: opts.subset_penalty,
            strict: opts.policy == IgnorePolicy::Strict,
        },
        counts: RunCounts {
            pairs: pairs.len(),
            scored_images: scored,
            unscored_images: eval.images.len() - scored,
            counted_pixels: eval.total.total(),
            ignored_pixels: eval.total.ignored_pixels(),
            unmatched_predictions: pairs.unmatched_pred.len(),
        },
        summary: eval.summary.clone(),
        per_image: eval.images.clone(),
    }
}
