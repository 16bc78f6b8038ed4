//! Slow, literal reference evaluator and a seeded random-instance generator.
//!
//! The evaluator builds explicit pixel sets per class and evaluates the safe
//! IoU definition term by term in floating point. It shares nothing with the
//! confusion-matrix path except the parsed hierarchy; tree distances are
//! recomputed here from parent links.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hierarchy::{ClassId, HierarchyConfig, ImportantSet, LabelHierarchy, NodeId, TreeNode};
use crate::labelmap::{LabelMap, IGNORE};
use crate::metrics::{ClassMetrics, MetricSummary};

fn ancestors(h: &LabelHierarchy, mut node: NodeId) -> Vec<NodeId> {
    let mut out = vec![node];
    while let Some(p) = h.parent(node) {
        out.push(p);
        node = p;
    }
    out
}

/// Half the number of edges between two leaves, via their ancestor chains.
pub fn oracle_tree_distance(h: &LabelHierarchy, c: ClassId, s: ClassId) -> f64 {
    let a = ancestors(h, h.leaf_node(c));
    let b = ancestors(h, h.leaf_node(s));
    for (i, node) in a.iter().enumerate() {
        if let Some(j) = b.iter().position(|x| x == node) {
            return (i + j) as f64 / 2.0;
        }
    }
    unreachable!("leaves of one tree share the root")
}

pub fn brute_force_metrics(
    gt: &LabelMap,
    pred: &LabelMap,
    h: &LabelHierarchy,
    imp: &ImportantSet,
    subsets: &[ImportantSet],
) -> Result<MetricSummary> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::ShapeMismatch {
            gt_width: gt.width(),
            gt_height: gt.height(),
            pred_width: pred.width(),
            pred_height: pred.height(),
        });
    }
    let k = h.num_classes();
    let mut gt_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    let mut pred_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for (i, (&g, &p)) in gt.pixels().iter().zip(pred.pixels()).enumerate() {
        if p == IGNORE {
            return Err(Error::IgnoreInPrediction { index: i });
        }
        if p as usize >= k {
            return Err(Error::InvalidClassId {
                id: u32::from(p),
                classes: k,
            });
        }
        if g == IGNORE {
            continue;
        }
        if g as usize >= k {
            return Err(Error::InvalidClassId {
                id: u32::from(g),
                classes: k,
            });
        }
        gt_sets[g as usize].insert(i);
        pred_sets[p as usize].insert(i);
    }

    let n = f64::from(h.depth());
    let safe_for = |important: &ImportantSet| -> Vec<Option<f64>> {
        (0..k)
            .map(|c| {
                let union = gt_sets[c].union(&pred_sets[c]).count();
                if union == 0 {
                    return None;
                }
                let union = union as f64;
                let own = gt_sets[c].intersection(&pred_sets[c]).count() as f64 / union;
                let cid = ClassId(c as u16);
                let mut penalty = 0.0;
                for (s, pred_s) in pred_sets.iter().enumerate() {
                    let sid = ClassId(s as u16);
                    let counted = if important.contains(cid) {
                        s != c
                    } else {
                        important.contains(sid)
                    };
                    if !counted {
                        continue;
                    }
                    let safe_cs = gt_sets[c].intersection(pred_s).count() as f64 / union;
                    penalty += oracle_tree_distance(h, cid, sid) / n * safe_cs;
                }
                Some(own - penalty)
            })
            .collect()
    };

    let safe = safe_for(imp);
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let union = gt_sets[c].union(&pred_sets[c]).count();
            let iou = (union > 0)
                .then(|| gt_sets[c].intersection(&pred_sets[c]).count() as f64 / union as f64);
            ClassMetrics {
                class: ClassId(c as u16),
                name: h.leaf_name(ClassId(c as u16)).to_string(),
                iou,
                safe_iou: safe[c],
                present: union > 0,
            }
        })
        .collect();

    let mean = |values: Vec<f64>| -> Option<f64> {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let miou =
        mean(per_class.iter().filter_map(|m| m.iou).collect()).ok_or(Error::NoPresentClass)?;
    let smiou = mean(safe.iter().flatten().copied().collect()).ok_or(Error::NoPresentClass)?;
    let subset_smiou: BTreeMap<String, Option<f64>> = subsets
        .iter()
        .map(|s| {
            (
                s.name().to_string(),
                mean(s.members().filter_map(|c| safe[c.index()]).collect()),
            )
        })
        .collect();

    Ok(MetricSummary {
        per_class,
        miou,
        smiou,
        subset_smiou,
        important_set_used: imp.name().to_string(),
    })
}

/// Size ranges for [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub min_depth: u32,
    pub max_depth: u32,
    pub min_leaves: usize,
    pub max_leaves: usize,
    pub max_width: u32,
    pub max_height: u32,
    /// Probability that a ground-truth pixel is the ignore id.
    pub ignore_prob: f64,
    /// Probability that a labelled pixel is predicted correctly.
    pub correct_prob: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            min_depth: 2,
            max_depth: 4,
            min_leaves: 4,
            max_leaves: 12,
            max_width: 64,
            max_height: 64,
            ignore_prob: 0.1,
            correct_prob: 0.6,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.min_depth == 0 || self.min_depth > self.max_depth {
            return bad("depth range must satisfy 1 <= min <= max");
        }
        if self.min_leaves < 2 || self.min_leaves > self.max_leaves {
            return bad("leaf range must satisfy 2 <= min <= max (distances need two leaves)");
        }
        if self.max_leaves > 1000 {
            return bad("at most 1000 leaves");
        }
        if self.max_width == 0 || self.max_height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..=1.0).contains(&self.ignore_prob) || !(0.0..=1.0).contains(&self.correct_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomInstance {
    pub seed: u64,
    pub config: HierarchyConfig,
    pub hierarchy: LabelHierarchy,
    pub important: ImportantSet,
    pub subsets: Vec<ImportantSet>,
    pub gt: LabelMap,
    pub pred: LabelMap,
}

/// Splits `total` into `parts` positive integers with uniformly drawn cut points.
fn random_composition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (1..total).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

struct TreeGen<'a> {
    rng: &'a mut ChaCha8Rng,
    depth: u32,
    inner: usize,
    leaves: Vec<String>,
}

impl TreeGen<'_> {
    /// Node at `level` owning `count` leaves; single-child chains pad short branches.
    fn node(&mut self, level: u32, count: usize) -> TreeNode {
        if level == self.depth {
            let name = format!("c{}", self.leaves.len());
            self.leaves.push(name.clone());
            return TreeNode::leaf(name);
        }
        let name = if level == 0 {
            "root".to_string()
        } else {
            self.inner += 1;
            format!("g{}", self.inner)
        };
        let parts = if level + 1 == self.depth {
            vec![1; count]
        } else {
            let m = self.rng.gen_range(1..=count);
            random_composition(self.rng, count, m)
        };
        let children = parts.into_iter().map(|p| self.node(level + 1, p)).collect();
        TreeNode::branch(name, children)
    }
}

fn random_subset(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut members: Vec<usize> = (0..k).filter(|_| rng.gen_bool(0.5)).collect();
    if members.is_empty() {
        members.push(rng.gen_range(0..k));
    }
    members
}

/// Random hierarchy config with uniform leaf depth, an `imp` set and a `sub` subset.
pub fn generate_hierarchy(rng: &mut ChaCha8Rng, params: &GenParams) -> Result<HierarchyConfig> {
    params.validate()?;
    let depth = rng.gen_range(params.min_depth..=params.max_depth);
    let count = rng.gen_range(params.min_leaves..=params.max_leaves);
    let mut gen = TreeGen {
        rng: &mut *rng,
        depth,
        inner: 0,
        leaves: Vec::new(),
    };
    let tree = gen.node(0, count);
    let leaves = gen.leaves;

    let imp = random_subset(rng, count);
    let sub = random_subset(rng, count);
    let names = |ids: Vec<usize>| {
        ids.into_iter()
            .map(|i| leaves[i].clone())
            .collect::<Vec<_>>()
    };
    let important_sets = BTreeMap::from([
        ("imp".to_string(), names(imp)),
        ("sub".to_string(), names(sub)),
    ]);
    let palette = leaves
        .iter()
        .map(|l| (l.clone(), rng.gen::<[u8; 3]>()))
        .collect();
    Ok(HierarchyConfig {
        name: "random".to_string(),
        levels: depth,
        tree,
        pixel_ids: leaves
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u16))
            .collect(),
        leaves,
        aliases: BTreeMap::new(),
        ignore_id: 255,
        important_sets,
        palette,
    })
}

/// Random ground-truth/prediction pair for `h`. Predictions never carry the ignore id.
pub fn generate_pair(
    rng: &mut ChaCha8Rng,
    h: &LabelHierarchy,
    params: &GenParams,
) -> Result<(LabelMap, LabelMap)> {
    params.validate()?;
    let width = rng.gen_range(1..=params.max_width);
    let height = rng.gen_range(1..=params.max_height);
    let k = h.num_classes() as u16;
    let n = width as usize * height as usize;
    let mut gt = Vec::with_capacity(n);
    let mut pred = Vec::with_capacity(n);
    for _ in 0..n {
        let g = if rng.gen_bool(params.ignore_prob) {
            IGNORE
        } else {
            rng.gen_range(0..k)
        };
        let p = if g != IGNORE && rng.gen_bool(params.correct_prob) {
            g
        } else {
            rng.gen_range(0..k)
        };
        gt.push(g);
        pred.push(p);
    }
    Ok((
        LabelMap::new(width, height, gt)?,
        LabelMap::new(width, height, pred)?,
    ))
}

/// Deterministic instance: same seed and params give an identical instance.
pub fn generate(seed: u64, params: &GenParams) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = generate_hierarchy(&mut rng, params)?;
    let hierarchy = LabelHierarchy::from_config(&config)?;
    let important = hierarchy.resolve_important_str("imp")?;
    let subsets = vec![hierarchy.resolve_important_str("sub")?];
    let (gt, pred) = generate_pair(&mut rng, &hierarchy, params)?;
    Ok(RandomInstance {
        seed,
        config,
        hierarchy,
        important,
        subsets,
        gt,
        pred,
    })
}
