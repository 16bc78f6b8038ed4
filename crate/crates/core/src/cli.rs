//! Command-line front end.
//!
//! Exit codes: 0 success, 2 validation failure (bad or missing predictions),
//! 3 I/O error, 4 configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::confusion::IgnorePolicy;
use crate::dataset::{self, pair_datasets, MatchRule, SubmissionManifest};
use crate::error::Error;
use crate::evaluate::{build_machine_report, evaluate_pairs, EvalOptions};
use crate::hierarchy::{ImportantSet, LabelHierarchy};
use crate::metrics::SubsetPenalty;
use crate::oracle::{generate_hierarchy, generate_pair, GenParams};
use crate::report::{self, MachineReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "safeseg",
    version,
    about = "Segmentation evaluation with mIoU and safe mIoU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a prediction folder against ground truth and write the report set.
    Evaluate(EvaluateArgs),
    /// Check a submission folder against a manifest.
    Validate(ValidateArgs),
    /// Print tree distances between leaves.
    Distances(DistancesArgs),
    /// Build a leaderboard (and optional classwise tables) from saved reports.
    Report(ReportArgs),
    /// Regenerate per-image histograms from a saved report.
    Histogram(HistogramArgs),
    /// Render colormap diffs for label-map pairs.
    Diff(DiffArgs),
    /// Write a random hierarchy and label-map dataset.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct HierarchyArg {
    /// Hierarchy config (JSON). Defaults to the bundled IDD-AW hierarchy.
    #[arg(long)]
    hierarchy: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MatchArg {
    Auto,
    Path,
    Stem,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PenaltyArg {
    Restrict,
    Recompute,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Important-class set: a set name from the config or comma-separated leaves.
    #[arg(long, default_value = "default")]
    important: String,
    /// Extra SmIoU columns; defaults to `tp` when the config defines it.
    #[arg(long, num_args = 1..)]
    subset: Vec<String>,
    #[arg(long, value_enum, default_value = "restrict")]
    subset_penalty: PenaltyArg,
    /// Reject predictions containing the ignore id (default).
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,
    /// Reassign ignore-id predictions to `--fallback`.
    #[arg(long, requires = "fallback")]
    lenient: bool,
    #[arg(long)]
    fallback: Option<String>,
    #[arg(long, env = "SAFESEG_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    bin_width: u32,
    /// Name used in the report and leaderboard.
    #[arg(long, default_value = "submission")]
    name: String,
    #[arg(long = "match", value_enum, default_value = "auto")]
    match_rule: MatchArg,
    /// Also write `diff/<key>.png` for every pair.
    #[arg(long)]
    diffs: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Allow the ignore id in predictions.
    #[arg(long)]
    lenient: bool,
    /// Write the machine-readable validation report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    /// Two leaf names; without them the full matrix is printed.
    #[arg(num_args = 0..=2)]
    pair: Vec<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Saved `report.json` files, one per submission.
    #[arg(long = "result", required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Classes for the classwise tables, comma separated.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value = "tp")]
    tie_subset: String,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 5)]
    bin_width: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiffArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    /// Ground-truth file or folder.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction file or folder.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    images: usize,
    #[arg(long, default_value_t = 2)]
    min_depth: u32,
    #[arg(long, default_value_t = 4)]
    max_depth: u32,
    #[arg(long, default_value_t = 4)]
    min_leaves: usize,
    #[arg(long, default_value_t = 12)]
    max_leaves: usize,
    #[arg(long, default_value_t = 64)]
    max_size: u32,
    #[arg(long, default_value_t = 0.1)]
    ignore_prob: f64,
}

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Parse(_)
        | Error::Structure(_)
        | Error::UnknownClass(_)
        | Error::UnknownSet(_)
        | Error::EmptySet(_)
        | Error::PaletteGap(_)
        | Error::DuplicateName(_)
        | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::InvalidClassId { .. }
        | Error::ShapeMismatch { .. }
        | Error::IgnoreInPrediction { .. }
        | Error::DimensionMismatch { .. }
        | Error::NoPresentClass
        | Error::Decode { .. }
        | Error::UnknownPixelId { .. }
        | Error::MultiChannel { .. }
        | Error::MissingPrediction { .. }
        | Error::DuplicateKey { .. } => EXIT_VALIDATION,
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn config_failure(e: Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn load_hierarchy(arg: &HierarchyArg) -> std::result::Result<LabelHierarchy, Failure> {
    match &arg.hierarchy {
        None => Ok(LabelHierarchy::iddaw()),
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| config_failure(Error::io(path, e)))?;
            LabelHierarchy::from_json(&text).map_err(config_failure)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Distances(a) => cmd_distances(a),
        Command::Report(a) => cmd_report(a),
        Command::Histogram(a) => cmd_histogram(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn thread_pool(threads: Option<u32>) -> std::result::Result<rayon::ThreadPool, Failure> {
    let n = threads
        .map(|t| t as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| config_failure(Error::InvalidArgument(e.to_string())))
}

fn summary_line(summary: &crate::metrics::MetricSummary) -> String {
    let mut line = format!(
        "mIoU {} SmIoU {}",
        report::percent(summary.miou),
        report::percent(summary.smiou)
    );
    for (name, value) in &summary.subset_smiou {
        line.push_str(&format!(
            " SmIoU({name}) {}",
            value.map_or_else(|| "n/a".to_string(), report::percent)
        ));
    }
    line
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let h = load_hierarchy(&a.hierarchy)?;
    let important = h
        .resolve_important_str(&a.important)
        .map_err(config_failure)?;
    let subset_names: Vec<String> = if a.subset.is_empty() {
        h.important_set_names()
            .filter(|n| *n == "tp")
            .map(str::to_string)
            .collect()
    } else {
        a.subset.clone()
    };
    let subsets: Vec<ImportantSet> = subset_names
        .iter()
        .map(|s| h.resolve_important_str(s))
        .collect::<Result<_, _>>()
        .map_err(config_failure)?;
    let policy = match (&a.lenient, &a.fallback) {
        (true, Some(name)) => IgnorePolicy::Remap(h.class_id(name).map_err(config_failure)?),
        _ => IgnorePolicy::Strict,
    };
    if !report::BIN_WIDTHS.contains(&a.bin_width) {
        return Err(config_failure(Error::InvalidArgument(format!(
            "--bin-width must be one of {:?}",
            report::BIN_WIDTHS
        ))));
    }
    let pool = thread_pool(a.threads)?;
    let rule = match a.match_rule {
        MatchArg::Auto => MatchRule::Auto,
        MatchArg::Path => MatchRule::RelativePath,
        MatchArg::Stem => MatchRule::Stem,
    };

    let pairs = pair_datasets(&a.gt, &a.pred, rule, policy == IgnorePolicy::Strict)?;
    if pairs.is_empty() {
        return Err(Failure {
            code: EXIT_VALIDATION,
            message: "no ground-truth/prediction pairs found".into(),
        });
    }
    for key in &pairs.unmatched_gt {
        eprintln!("warning: {key}: no prediction, skipped");
    }
    let opts = EvalOptions {
        important,
        subsets,
        policy,
        subset_penalty: match a.subset_penalty {
            PenaltyArg::Restrict => SubsetPenalty::Restrict,
            PenaltyArg::Recompute => SubsetPenalty::Recompute,
        },
        diff_dir: a.diffs.then(|| a.out.clone()),
    };
    let eval = pool.install(|| evaluate_pairs(&pairs, &h, &opts))?;
    let machine = build_machine_report(&a.name, &h, &opts, &pairs, &eval);
    let tie = subset_names.first().map_or("tp", String::as_str);
    report::emit_run(&a.out, &machine, a.bin_width, tie)?;
    println!("{}", summary_line(&eval.summary));
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CmdResult {
    let h = load_hierarchy(&a.hierarchy)?;
    let manifest = SubmissionManifest::load(&a.manifest).map_err(|e| match e {
        Error::Io { .. } => Failure::from(e),
        other => config_failure(other),
    })?;
    let report = dataset::validate_submission(&manifest, &a.pred, &h, !a.lenient)?;
    for d in &report.diagnostics {
        eprintln!("{d}");
    }
    if let Some(path) = &a.report {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Failure::from(Error::io(path, e)))?;
    }
    if report.passed {
        println!("ok: {} files checked", report.checked);
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VALIDATION,
            message: format!(
                "{} problems in {} files",
                report.diagnostics.len(),
                report.checked
            ),
        })
    }
}

fn cmd_distances(a: DistancesArgs) -> CmdResult {
    let h = load_hierarchy(&a.hierarchy)?;
    match a.pair.as_slice() {
        [x, y] => {
            let c = h.class_id(x).map_err(config_failure)?;
            let s = h.class_id(y).map_err(config_failure)?;
            println!("{}", h.tree_distance(c, s).map_err(config_failure)?);
        }
        [] => {
            let names: Vec<&str> = h.leaf_names().collect();
            println!("\t{}", names.join("\t"));
            for (name, row) in names.iter().zip(h.distance_matrix()) {
                let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
                println!("{name}\t{}", cells.join("\t"));
            }
        }
        _ => {
            return Err(config_failure(Error::InvalidArgument(
                "give two class names or none".into(),
            )))
        }
    }
    Ok(())
}

fn load_report(path: &Path) -> std::result::Result<MachineReport, Failure> {
    MachineReport::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::from(e),
        other => config_failure(other),
    })
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let reports: Vec<MachineReport> = a
        .results
        .iter()
        .map(|p| load_report(p))
        .collect::<Result<_, _>>()?;
    let results: Vec<(String, crate::metrics::MetricSummary)> = reports
        .iter()
        .map(|r| (r.run.name.clone(), r.summary.clone()))
        .collect();
    let board = report::build_leaderboard(&results, &a.tie_subset)?;
    report::emit_leaderboard(&a.out, &board, &a.tie_subset)?;
    print!("{}", report::leaderboard_table(&board, &a.tie_subset));
    if !a.classes.is_empty() {
        for r in &reports {
            let table = report::build_classwise(&r.summary, &a.classes)?;
            let path = a
                .out
                .join(format!("classwise_{}.csv", sanitize(&r.run.name)));
            std::fs::write(&path, table.to_csv())
                .map_err(|e| Failure::from(Error::io(&path, e)))?;
            println!("\n{}", r.run.name);
            print!("{}", table.to_table());
        }
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_histogram(a: HistogramArgs) -> CmdResult {
    let r = load_report(&a.report)?;
    let hist = report::build_histogram(r.scored(), a.bin_width)?;
    report::emit_histogram(&a.out, &hist)?;
    println!(
        "{} images binned at width {}",
        hist.miou_counts.iter().sum::<u64>(),
        hist.bin_width
    );
    Ok(())
}

fn cmd_diff(a: DiffArgs) -> CmdResult {
    let h = load_hierarchy(&a.hierarchy)?;
    let jobs: Vec<(String, PathBuf, PathBuf)> = if a.gt.is_file() {
        let key =
            a.gt.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "diff".into());
        vec![(key, a.gt.clone(), a.pred.clone())]
    } else {
        pair_datasets(&a.gt, &a.pred, MatchRule::Auto, true)?
            .entries
            .into_iter()
            .map(|e| (e.key, e.gt, e.pred))
            .collect()
    };
    let highlighted: Vec<u64> = jobs
        .par_iter()
        .map(|(key, gt, pred)| {
            let gt = dataset::load_label_map(gt, &h)?;
            let pred = dataset::load_label_map(pred, &h)?;
            let diff = report::render_colormap_diff(&gt, &pred, &h)?;
            report::emit_diff(&a.out, key, &diff)?;
            Ok(diff.highlighted)
        })
        .collect::<Result<_, Error>>()?;
    for ((key, _, _), n) in jobs.iter().zip(&highlighted) {
        println!("{key}\t{n}");
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let params = GenParams {
        min_depth: a.min_depth,
        max_depth: a.max_depth,
        min_leaves: a.min_leaves,
        max_leaves: a.max_leaves,
        max_width: a.max_size,
        max_height: a.max_size,
        ignore_prob: a.ignore_prob,
        ..GenParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let config = generate_hierarchy(&mut rng, &params).map_err(config_failure)?;
    let h = LabelHierarchy::from_config(&config).map_err(config_failure)?;
    let io = |path: &Path, e: std::io::Error| Failure::from(Error::io(path, e));
    for dir in [a.out.join("gt"), a.out.join("pred")] {
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    }
    let hpath = a.out.join("hierarchy.json");
    std::fs::write(&hpath, h.to_json()).map_err(|e| io(&hpath, e))?;
    let width = a.images.saturating_sub(1).to_string().len().max(4);
    for i in 0..a.images {
        let (gt, pred) = generate_pair(&mut rng, &h, &params).map_err(config_failure)?;
        let name = format!("img_{i:0width$}.png");
        dataset::save_label_map(&gt, &h, &a.out.join("gt").join(&name))?;
        dataset::save_label_map(&pred, &h, &a.out.join("pred").join(&name))?;
    }
    println!("wrote {} pairs to {}", a.images, a.out.display());
    Ok(())
}
