//! Exit criteria. Runs every criterion and prints one
//! `criterion N: PASS|FAIL (...)` line each; exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safeseg::dataset::{pair_datasets, save_label_map, MatchRule};
use safeseg::evaluate::{evaluate_pairs, EvalOptions};
use safeseg::hierarchy::HierarchyConfig;
use safeseg::metrics::{combined_loss, cross_entropy_loss, dice_loss, summarize, MetricSummary};
use safeseg::oracle::{brute_force_metrics, generate, GenParams, RandomInstance};
use safeseg::report::{build_histogram, build_leaderboard, render_colormap_diff, BIN_WIDTHS};
use safeseg::{
    ClassId, ConfusionMatrix, IgnorePolicy, LabelHierarchy, LabelMap, SubsetPenalty, IGNORE,
};

use common::*;

const INSTANCES: u64 = 500;
const ORACLE_TOL: f64 = 1e-12;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn instances() -> Vec<RandomInstance> {
    let params = GenParams::default();
    (0..INSTANCES)
        .map(|seed| generate(seed, &params).unwrap())
        .collect()
}

fn matrix(inst: &RandomInstance) -> ConfusionMatrix {
    ConfusionMatrix::from_pair(
        inst.hierarchy.num_classes(),
        &inst.gt,
        &inst.pred,
        IgnorePolicy::Strict,
    )
    .unwrap()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= ORACLE_TOL,
        (None, None) => true,
        _ => false,
    }
}

fn agrees(fast: &MetricSummary, slow: &MetricSummary) -> bool {
    fast.per_class.len() == slow.per_class.len()
        && fast.per_class.iter().zip(&slow.per_class).all(|(f, s)| {
            f.present == s.present && close(f.iou, s.iou) && close(f.safe_iou, s.safe_iou)
        })
        && close(Some(fast.miou), Some(slow.miou))
        && close(Some(fast.smiou), Some(slow.smiou))
        && fast.subset_smiou.len() == slow.subset_smiou.len()
        && fast
            .subset_smiou
            .iter()
            .all(|(k, v)| slow.subset_smiou.get(k).is_some_and(|w| close(*v, *w)))
}

fn criterion_1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut skipped = 0;
    for inst in instances() {
        let m = matrix(&inst);
        let fast = summarize(&m, &inst.hierarchy, &inst.important, &inst.subsets);
        let slow = brute_force_metrics(
            &inst.gt,
            &inst.pred,
            &inst.hierarchy,
            &inst.important,
            &inst.subsets,
        );
        match (fast, slow) {
            (Ok(f), Ok(s)) => {
                if !agrees(&f, &s) {
                    mismatches.push(inst.seed);
                }
            }
            (Err(_), Err(_)) => skipped += 1,
            _ => mismatches.push(inst.seed),
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches.is_empty() && elapsed < Duration::from_secs(60);
    outcome(
        ok,
        format!(
            "{INSTANCES} instances, {} mismatches, {skipped} with no labelled pixel, {:.1}s",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// The same hierarchy with its leaves listed in `order` (old ids).
fn relabel(config: &HierarchyConfig, order: &[usize]) -> HierarchyConfig {
    let mut out = config.clone();
    out.leaves = order.iter().map(|&i| config.leaves[i].clone()).collect();
    out
}

fn check_bounds(s: &MetricSummary) -> bool {
    s.per_class.iter().all(|c| match (c.iou, c.safe_iou) {
        (Some(iou), Some(safe)) => -1.0 <= safe && safe <= iou && iou <= 1.0,
        (None, None) => true,
        _ => false,
    }) && s.smiou <= s.miou
}

fn check_identity(inst: &RandomInstance) -> bool {
    let pixels: Vec<u16> = inst
        .gt
        .pixels()
        .iter()
        .map(|&v| if v == IGNORE { 0 } else { v })
        .collect();
    let pred = LabelMap::new(inst.gt.width(), inst.gt.height(), pixels).unwrap();
    let m = ConfusionMatrix::from_pair(
        inst.hierarchy.num_classes(),
        &inst.gt,
        &pred,
        IgnorePolicy::Strict,
    )
    .unwrap();
    match summarize(&m, &inst.hierarchy, &inst.important, &inst.subsets) {
        Ok(s) => {
            s.miou == 1.0
                && s.smiou == 1.0
                && s.per_class
                    .iter()
                    .all(|c| !c.present || (c.iou == Some(1.0) && c.safe_iou == Some(1.0)))
                && s.subset_smiou.values().all(|v| v.is_none_or(|v| v == 1.0))
        }
        Err(_) => inst.gt.pixels().iter().all(|&v| v == IGNORE),
    }
}

/// Moves all of `counts[c][s1]` to a farther `s2` for the first eligible triple.
/// Returns `None` when the instance offers no such move.
fn check_monotonicity(inst: &RandomInstance, m: &ConfusionMatrix) -> Option<bool> {
    let h = &inst.hierarchy;
    let n = f64::from(h.depth());
    for c in inst.important.members() {
        let union = m.set_sizes(c).union;
        if union == 0 {
            continue;
        }
        for s1 in h.class_ids().filter(|&s| s != c && m.get(c, s) > 0) {
            let d1 = h.tree_distance(c, s1).unwrap().value();
            let Some(s2) = h
                .class_ids()
                .find(|&s| s != c && h.tree_distance(c, s).unwrap().value() > d1)
            else {
                continue;
            };
            let d2 = h.tree_distance(c, s2).unwrap().value();
            let k = m.get(c, s1);
            let mut moved = m.clone();
            moved.set(c, s1, 0);
            moved.set(c, s2, m.get(c, s2) + k);

            let before = summarize(m, h, &inst.important, &[]).unwrap();
            let after = summarize(&moved, h, &inst.important, &[]).unwrap();
            let (b, a) = (before.class(c), after.class(c));
            let delta = k as f64 * (d2 - d1) / (n * union as f64);
            let drop = b.safe_iou.unwrap() - a.safe_iou.unwrap();
            return Some(
                a.safe_iou < b.safe_iou && (drop - delta).abs() <= ORACLE_TOL && a.iou == b.iou,
            );
        }
    }
    None
}

fn check_relabeling(inst: &RandomInstance, m: &ConfusionMatrix, seed: u64) -> bool {
    let h = &inst.hierarchy;
    let k = h.num_classes();
    let mut order: Vec<usize> = (0..k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let h2 = LabelHierarchy::from_config(&relabel(&inst.config, &order)).unwrap();
    let mut new_id = vec![ClassId(0); k];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = ClassId(new as u16);
    }
    let mut m2 = ConfusionMatrix::new(k);
    for c in h.class_ids() {
        for s in h.class_ids() {
            m2.set(new_id[c.index()], new_id[s.index()], m.get(c, s));
        }
    }
    let imp2 = h2.resolve_important_str(inst.important.name()).unwrap();
    let subs2: Vec<_> = inst
        .subsets
        .iter()
        .map(|s| h2.resolve_important_str(s.name()).unwrap())
        .collect();
    match (
        summarize(m, h, &inst.important, &inst.subsets),
        summarize(&m2, &h2, &imp2, &subs2),
    ) {
        (Ok(a), Ok(b)) => {
            a.miou == b.miou && a.smiou == b.smiou && a.subset_smiou == b.subset_smiou
        }
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

fn criterion_2_metric_invariants() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut moves = 0;
    for inst in instances() {
        let m = matrix(&inst);
        if let Ok(s) = summarize(&m, &inst.hierarchy, &inst.important, &inst.subsets) {
            if !check_bounds(&s) {
                failures.push(format!("bounds, seed {}", inst.seed));
            }
        }
        if !check_identity(&inst) {
            failures.push(format!("identity, seed {}", inst.seed));
        }
        match check_monotonicity(&inst, &m) {
            Some(true) => moves += 1,
            Some(false) => failures.push(format!("monotonicity, seed {}", inst.seed)),
            None => {}
        }
        if !check_relabeling(&inst, &m, inst.seed ^ 0x5eed) {
            failures.push(format!("relabeling, seed {}", inst.seed));
        }
    }
    let ok = failures.is_empty() && moves > 0;
    outcome(
        ok,
        format!(
            "{INSTANCES} instances, {moves} monotonicity moves, {} failures",
            failures.len()
        ),
    )
}

fn criterion_3_worked_fixture() -> Outcome {
    let h = fixture_tree();
    let imp = fixture_important(&h);
    let (gt, pred) = worked_fixture();
    let s = safeseg::metrics::per_image_metrics(&gt, &pred, &h, &imp, &[], IgnorePolicy::Strict)
        .unwrap();
    let near = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= ORACLE_TOL);
    let ok = near(s.class(PERSON).iou, 0.5)
        && near(s.class(PERSON).safe_iou, 0.0)
        && near(s.class(ROAD).iou, 2.0 / 3.0)
        && near(s.class(ROAD).safe_iou, 2.0 / 3.0)
        && s.class(PARKING).iou.is_none()
        && s.class(RIDER).iou.is_none()
        && near(Some(s.miou), 7.0 / 12.0)
        && near(Some(s.smiou), 1.0 / 3.0);
    outcome(ok, format!("mIoU {} SmIoU {}", s.miou, s.smiou))
}

fn criterion_4_bundled_tree_distances() -> Outcome {
    let h = LabelHierarchy::iddaw();
    let td = |a: &str, b: &str| {
        h.tree_distance(h.class_id(a).unwrap(), h.class_id(b).unwrap())
            .unwrap()
            .value()
    };
    let matrix = h.distance_matrix();
    let symmetric =
        (0..matrix.len()).all(|i| (0..matrix.len()).all(|j| matrix[i][j] == matrix[j][i]));
    let max = matrix
        .iter()
        .flatten()
        .map(|d| d.value())
        .fold(0.0, f64::max);
    let ok = td("truck", "bus") == 1.0
        && td("sidewalk", "motorcycle") == 3.0
        && h.depth() == 4
        && h.num_classes() == 30
        && symmetric
        && max <= 4.0;
    outcome(
        ok,
        format!(
            "td(truck,bus)={} td(sidewalk,motorcycle)={} n={} max={max}",
            td("truck", "bus"),
            td("sidewalk", "motorcycle"),
            h.depth()
        ),
    )
}

fn criterion_5_ranking_inversion() -> Outcome {
    let h = fixture_tree();
    let imp = fixture_important(&h);
    let tp = vec![h.resolve_important_str("tp").unwrap()];
    let a = summarize(&inversion_matrix(0.6854, 0.6352), &h, &imp, &tp).unwrap();
    let b = summarize(&inversion_matrix(0.6832, 0.6473), &h, &imp, &tp).unwrap();
    let within = |v: f64, target: f64| (100.0 * v - target).abs() <= 0.01;
    let targets_hit = within(a.miou, 68.54)
        && within(a.smiou, 63.52)
        && within(b.miou, 68.32)
        && within(b.smiou, 64.73);
    let board = build_leaderboard(
        &[("A".to_string(), a.clone()), ("B".to_string(), b.clone())],
        "tp",
    )
    .unwrap();
    let ok = targets_hit
        && a.miou > b.miou
        && a.smiou < b.smiou
        && board[0].name == "B"
        && board[0].rank == 1;
    outcome(
        ok,
        format!(
            "A {:.4}/{:.4}, B {:.4}/{:.4}, leader {}",
            100.0 * a.miou,
            100.0 * a.smiou,
            100.0 * b.miou,
            100.0 * b.smiou,
            board[0].name
        ),
    )
}

fn safeseg_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safeseg"))
}

fn criterion_6_thread_count_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen = safeseg_cmd()
        .args(["gen", "--seed", "2024", "--images", "50", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));

    let mut reports = Vec::new();
    for threads in ["1", "4", "8"] {
        let out = dir.path().join(format!("out{threads}"));
        let output = safeseg_cmd()
            .arg("evaluate")
            .arg("--hierarchy")
            .arg(data.join("hierarchy.json"))
            .arg("--gt")
            .arg(data.join("gt"))
            .arg("--pred")
            .arg(data.join("pred"))
            .args([
                "--important",
                "imp",
                "--subset",
                "sub",
                "--threads",
                threads,
                "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    let ok = reports.windows(2).all(|w| w[0] == w[1]);
    outcome(
        ok,
        format!(
            "50 images, report.json of {} bytes for 1/4/8 threads",
            reports[0].len()
        ),
    )
}

const PERF_PAIRS: usize = 1000;
const PERF_WIDTH: u32 = 1920;
const PERF_HEIGHT: u32 = 1080;
const PERF_DISTINCT: usize = 16;

/// Blocky scene-like map: 48×48 tiles of random classes, a few ignore tiles.
fn scene(rng: &mut ChaCha8Rng, classes: u16) -> LabelMap {
    const TILE: u32 = 48;
    let tiles_x = PERF_WIDTH.div_ceil(TILE);
    let tiles_y = PERF_HEIGHT.div_ceil(TILE);
    let tiles: Vec<u16> = (0..tiles_x * tiles_y)
        .map(|_| {
            if rng.gen_bool(0.05) {
                IGNORE
            } else {
                rng.gen_range(0..classes)
            }
        })
        .collect();
    let mut pixels = Vec::with_capacity((PERF_WIDTH * PERF_HEIGHT) as usize);
    for y in 0..PERF_HEIGHT {
        for x in 0..PERF_WIDTH {
            pixels.push(tiles[((y / TILE) * tiles_x + x / TILE) as usize]);
        }
    }
    LabelMap::new(PERF_WIDTH, PERF_HEIGHT, pixels).unwrap()
}

/// Prediction: ground truth with some tiles and scattered pixels relabelled.
fn perturb(rng: &mut ChaCha8Rng, gt: &LabelMap, classes: u16) -> LabelMap {
    let mut pred = gt.clone();
    for v in pred.pixels_mut() {
        if *v == IGNORE || rng.gen_bool(0.02) {
            *v = rng.gen_range(0..classes);
        }
    }
    pred
}

fn write_perf_dataset(root: &Path, h: &LabelHierarchy) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let classes = h.num_classes() as u16;
    let distinct = root.join("distinct");
    std::fs::create_dir_all(&distinct).unwrap();
    std::fs::create_dir_all(root.join("gt")).unwrap();
    std::fs::create_dir_all(root.join("pred")).unwrap();
    for i in 0..PERF_DISTINCT {
        let gt = scene(&mut rng, classes);
        let pred = perturb(&mut rng, &gt, classes);
        save_label_map(&gt, h, &distinct.join(format!("gt{i}.png"))).unwrap();
        save_label_map(&pred, h, &distinct.join(format!("pred{i}.png"))).unwrap();
    }
    for i in 0..PERF_PAIRS {
        let j = i % PERF_DISTINCT;
        for side in ["gt", "pred"] {
            let src = distinct.join(format!("{side}{j}.png"));
            let dst = root.join(side).join(format!("img_{i:04}.png"));
            if std::fs::hard_link(&src, &dst).is_err() {
                std::fs::copy(&src, &dst).unwrap();
            }
        }
    }
}

fn timed_run(
    threads: usize,
    root: &Path,
    h: &LabelHierarchy,
    opts: &EvalOptions,
) -> (Duration, ConfusionMatrix) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let start = Instant::now();
    let eval = pool.install(|| {
        let pairs =
            pair_datasets(&root.join("gt"), &root.join("pred"), MatchRule::Auto, true).unwrap();
        evaluate_pairs(&pairs, h, opts).unwrap()
    });
    (start.elapsed(), eval.total)
}

fn criterion_7_throughput() -> Outcome {
    let h = LabelHierarchy::iddaw();
    let dir = tempfile::tempdir().unwrap();
    write_perf_dataset(dir.path(), &h);
    let opts = EvalOptions {
        important: h.resolve_important_str("default").unwrap(),
        subsets: vec![h.resolve_important_str("tp").unwrap()],
        policy: IgnorePolicy::Strict,
        subset_penalty: SubsetPenalty::Restrict,
        diff_dir: None,
    };
    let (t8, m8) = timed_run(8, dir.path(), &h, &opts);
    let (t1, m1) = timed_run(1, dir.path(), &h, &opts);
    let speedup = t1.as_secs_f64() / t8.as_secs_f64();
    let hardware = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pixels = (PERF_PAIRS as u64) * u64::from(PERF_WIDTH * PERF_HEIGHT);
    let consistent = m1 == m8 && m1.total() + m1.ignored_pixels() == pixels;
    let ok = consistent && t8 <= Duration::from_secs(90) && speedup >= 3.0;
    outcome(ok,
        format!(
            "{PERF_PAIRS} pairs {PERF_WIDTH}x{PERF_HEIGHT}: 8 threads {:.1}s (limit 90s), 1 thread {:.1}s, \
             speedup {speedup:.2}x (need 3x) on {hardware} hardware threads, matrices agree: {consistent}",
            t8.as_secs_f64(),
            t1.as_secs_f64()
        ))
}

fn criterion_8_loss_ops() -> Outcome {
    let mut ok = true;
    for classes in [2usize, 3, 10, 30] {
        let probs = vec![vec![1.0 / classes as f64; classes]; 5];
        let targets: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..classes)
                    .map(|c| if c == i % classes { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let ce = cross_entropy_loss(&probs, &targets).unwrap();
        ok &= (ce - (classes as f64).ln()).abs() <= 1e-9;
    }
    let y = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let dice = dice_loss(&y, &y).unwrap();
    ok &= dice <= 1e-6;
    for (ce, d) in [
        (0.0, 0.0),
        (1.0, 0.0),
        (std::f64::consts::LN_2, 1.0 / 3.0),
        (2.5, 0.75),
    ] {
        ok &= combined_loss(ce, d) == 0.5 * ce + 0.5 * d;
    }
    outcome(ok, format!("dice(perfect) = {dice:e}"))
}

fn criterion_9_report_conservation() -> Outcome {
    let mut scores = Vec::new();
    let mut overlay_mismatches = 0;
    for inst in instances() {
        let m = matrix(&inst);
        let diff = render_colormap_diff(&inst.gt, &inst.pred, &inst.hierarchy).unwrap();
        if diff.highlighted != m.off_diagonal_total() {
            overlay_mismatches += 1;
        }
        if let Ok(s) = summarize(&m, &inst.hierarchy, &inst.important, &[]) {
            scores.push((s.miou, s.smiou));
        }
    }
    let mut conserved = true;
    for width in BIN_WIDTHS {
        let hist = build_histogram(scores.iter().copied(), width).unwrap();
        let n = scores.len() as u64;
        conserved &=
            hist.miou_counts.iter().sum::<u64>() == n && hist.smiou_counts.iter().sum::<u64>() == n;
    }
    let ok = conserved && overlay_mismatches == 0;
    outcome(
        ok,
        format!(
            "{} images over bin widths {BIN_WIDTHS:?}, {overlay_mismatches} overlay mismatches",
            scores.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1_oracle_equivalence),
        (2, criterion_2_metric_invariants),
        (3, criterion_3_worked_fixture),
        (4, criterion_4_bundled_tree_distances),
        (5, criterion_5_ranking_inversion),
        (6, criterion_6_thread_count_determinism),
        (7, criterion_7_throughput),
        (8, criterion_8_loss_ops),
        (9, criterion_9_report_conservation),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (n, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let status = if result.ok { "PASS" } else { "FAIL" };
        println!("criterion {n}: {status} ({})", result.detail);
        if !result.ok {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
