#![allow(dead_code)]

use std::path::Path;

use safeseg::hierarchy::{HierarchyConfig, TreeNode};
use safeseg::metrics::summarize;
use safeseg::{ClassId, ConfusionMatrix, ImportantSet, LabelHierarchy, LabelMap};

pub const ROAD: ClassId = ClassId(0);
pub const PARKING: ClassId = ClassId(1);
pub const PERSON: ClassId = ClassId(2);
pub const RIDER: ClassId = ClassId(3);

/// {drivable: {road, parking}, human: {person, rider}}, important = {person, rider}.
pub fn fixture_config() -> HierarchyConfig {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    HierarchyConfig {
        name: "fixture".into(),
        levels: 2,
        tree: TreeNode::branch(
            "root",
            vec![
                TreeNode::branch(
                    "drivable",
                    vec![TreeNode::leaf("road"), TreeNode::leaf("parking")],
                ),
                TreeNode::branch(
                    "human",
                    vec![TreeNode::leaf("person"), TreeNode::leaf("rider")],
                ),
            ],
        ),
        leaves: names(&["road", "parking", "person", "rider"]),
        aliases: Default::default(),
        pixel_ids: [("road", 0), ("parking", 1), ("person", 7), ("rider", 8)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        ignore_id: 255,
        important_sets: [
            ("default".to_string(), names(&["person", "rider"])),
            ("tp".to_string(), names(&["person", "rider"])),
        ]
        .into_iter()
        .collect(),
        palette: [
            ("road", [128, 64, 128]),
            ("parking", [250, 170, 160]),
            ("person", [220, 20, 60]),
            ("rider", [255, 0, 0]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    }
}

pub fn fixture_tree() -> LabelHierarchy {
    LabelHierarchy::from_config(&fixture_config()).unwrap()
}

pub fn fixture_important(h: &LabelHierarchy) -> ImportantSet {
    h.resolve_important_str("default").unwrap()
}

/// Four pixels: gt [person, person, road, road], pred [person, road, road, road].
pub fn worked_fixture() -> (LabelMap, LabelMap) {
    let gt = LabelMap::from_classes(2, 2, &[PERSON, PERSON, ROAD, ROAD]).unwrap();
    let pred = LabelMap::from_classes(2, 2, &[PERSON, ROAD, ROAD, ROAD]).unwrap();
    (gt, pred)
}

/// Confusion matrix over the fixture tree whose mIoU and SmIoU land on the
/// given fractions to within one pixel step.
///
/// Every class has `T` ground-truth pixels. `x` person pixels go to road
/// (distance 2 = n, so each costs a full unit of penalty) and `y` road
/// pixels go to parking (unpenalized). Then
/// `miou - smiou = x / (4T)` and mIoU falls monotonically in `y`.
pub fn inversion_matrix(miou: f64, smiou: f64) -> ConfusionMatrix {
    const T: u64 = 1_000_000;
    let h = fixture_tree();
    let imp = fixture_important(&h);
    let x = ((miou - smiou) * 4.0 * T as f64).round() as u64;
    let build = |y: u64| {
        let mut m = ConfusionMatrix::new(4);
        m.set(PERSON, PERSON, T - x);
        m.set(PERSON, ROAD, x);
        m.set(ROAD, ROAD, T - y);
        m.set(ROAD, PARKING, y);
        m.set(PARKING, PARKING, T);
        m.set(RIDER, RIDER, T);
        m
    };
    let miou_at = |y: u64| summarize(&build(y), &h, &imp, &[]).unwrap().miou;
    let (mut lo, mut hi) = (0u64, T);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if miou_at(mid) > miou {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    build(lo)
}

/// Writes `hierarchy.json`, `gt/<key>.png` and `pred/<key>.png` under `dir`.
pub fn write_dataset(dir: &Path, h: &LabelHierarchy, pairs: &[(&str, &LabelMap, &LabelMap)]) {
    std::fs::write(dir.join("hierarchy.json"), h.to_json()).unwrap();
    for (key, gt, pred) in pairs {
        let g = dir.join("gt").join(format!("{key}.png"));
        let p = dir.join("pred").join(format!("{key}.png"));
        std::fs::create_dir_all(g.parent().unwrap()).unwrap();
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        safeseg::dataset::save_label_map(gt, h, &g).unwrap();
        safeseg::dataset::save_label_map(pred, h, &p).unwrap();
    }
}
