//! `pseudolabel`: every pipeline stage as a subcommand, plus `run` for the
//! whole chain. Verbosity comes from the `PSEUDOLABEL_LOG` variable
//! (env_logger syntax, default `warn`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pseudolabel::cbr::refine_labels;
use pseudolabel::cproto::build_cproto_set;
use pseudolabel::css::score_labels;
use pseudolabel::cst::{all_losses, parse_proposal_pairs};
use pseudolabel::eval::{evaluate, group_by_frame, validate_thresholds, MetricsReport};
use pseudolabel::io;
use pseudolabel::pipeline::{
    label_sequence, load_inputs, refinement_errors, run_pipeline, sequence_dir_name, PipelineConfig, PipelineReport,
    CLUSTERS_DIR, GT_FILE, LABELS_FILE, METRICS_CSV, METRICS_JSON, SCORED_FILE,
};
use pseudolabel::IouMode;

pub const LOG_ENV: &str = "PSEUDOLABEL_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "pseudolabel",
    version,
    about = "Unsupervised 3D pseudo-label generation and refinement"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline config JSON; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sequences with ground truth.
    Synth {
        /// Frames per sequence.
        #[arg(long)]
        frames: Option<usize>,
        /// Number of sequences.
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-frame clustering: initial labels and their cluster points.
    Label {
        /// Manifest file or sequence directory.
        sequence: PathBuf,
        /// Past/future frames aggregated around each frame (0 = single frame).
        #[arg(long)]
        frames: Option<usize>,
        /// Output directory for labels and cluster points.
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach CSS scores to labels.
    Score {
        labels: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the distance, MLO and size components as CSV.
        #[arg(long, value_name = "CSV")]
        dump_components: Option<PathBuf>,
    },
    /// Build the prototype set from scored sequence directories.
    Proto {
        /// Directories holding a manifest, scored labels and cluster points.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Scored label file name inside each directory.
        #[arg(long, default_value = SCORED_FILE)]
        labels_file: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resize and relocalize labels against a prototype set.
    Refine {
        labels: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        protos: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write per-step error changes as CSV (needs --gt).
        #[arg(long, value_name = "CSV", requires = "gt")]
        report: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Compare predictions with ground truth.
    Eval {
        /// Prediction label files, one per sequence.
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        /// Ground-truth label files, in the same order.
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        /// Comma-separated IoU thresholds (default from the config).
        #[arg(long, value_delimiter = ',')]
        iou: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-training losses of a JSON list of proposal pairs.
    Losses { pairs: PathBuf },
    /// Every stage end to end, writing all artifacts.
    Run {
        /// Past/future frames aggregated around each frame.
        #[arg(long)]
        frames: Option<usize>,
        /// Output directory (default: the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
            PipelineConfig::from_json(&bytes, &path.display().to_string())?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn with_stage<T>(stage: &str, r: pseudolabel::Result<T>) -> Result<T> {
    r.with_context(|| format!("stage {stage} failed"))
}

fn summary_line(name: &str, m: &MetricsReport) -> String {
    let mut s = format!("{name:8}");
    for t in m.thresholds.iter().filter(|t| t.mode == IouMode::Bev) {
        s.push_str(&format!(
            "  R@{:.2}={:.3} P={:.3} AP={:.3}",
            t.iou, t.recall, t.precision, t.ap
        ));
    }
    if let Some(e) = &m.errors {
        s.push_str(&format!("  size_mae={:.3} pos_mae={:.3}", e.size, e.position));
    }
    s
}

fn print_report(r: &PipelineReport) {
    let c = &r.counts;
    println!(
        "sequences={} frames={} labels={} prototypes={} flagged={}",
        c.sequences, c.frames, c.initial_labels, c.prototypes, c.flagged_labels
    );
    if let Some(m) = &r.initial {
        println!("{}", summary_line("initial", m));
    }
    if let Some(m) = &r.refined {
        println!("{}", summary_line("refined", m));
    }
    if let Some(f) = &r.css {
        println!(
            "css spearman={:.3} (distance {:.3})  ap@{}={:.3} (distance {:.3})",
            f.spearman_css, f.spearman_distance, f.ap_iou, f.ap_css, f.ap_distance
        );
    }
}

fn synth(mut cfg: PipelineConfig, frames: Option<usize>, sequences: Option<usize>, out: &Path) -> Result<()> {
    if let Some(f) = frames {
        cfg.synth.num_frames = f;
    }
    if let Some(n) = sequences {
        cfg.sequences = n;
    }
    cfg.inputs.clear();
    with_stage("synth", cfg.validate())?;
    let scenes = with_stage("synth", load_inputs(&cfg))?;
    for (i, (seq, gt)) in scenes.iter().enumerate() {
        let dir = out.join(sequence_dir_name(i));
        with_stage("synth", io::write_sequence(seq, &dir))?;
        if let Some(gt) = gt {
            with_stage("synth", io::write_labels(gt, &dir.join(GT_FILE)))?;
        }
        println!("{}", dir.display());
    }
    Ok(())
}

fn label(mut cfg: PipelineConfig, sequence: &Path, frames: Option<usize>, out: &Path) -> Result<()> {
    if let Some(n) = frames {
        cfg.mfc.n = n;
    }
    with_stage("label", cfg.mfc.validate())?;
    let seq = with_stage("label", io::read_sequence(sequence))?;
    let (labels, clusters, stats) = with_stage("label", label_sequence(&seq, &cfg.mfc_seeded()))?;
    with_stage("label", io::write_labels(&labels, &out.join(LABELS_FILE)))?;
    with_stage("label", io::write_clusters(&out.join(CLUSTERS_DIR), &labels, &clusters))?;
    println!(
        "labels={} small_clusters_skipped={}",
        labels.len(),
        stats.small_clusters_skipped
    );
    Ok(())
}

fn score(cfg: PipelineConfig, labels: &Path, clusters: &Path, out: &Path, dump: Option<&Path>) -> Result<()> {
    with_stage("score", cfg.css.validate())?;
    let labels = with_stage("score", io::read_labels(labels))?;
    let clouds = with_stage("score", io::read_clusters(clusters, &labels))?;
    let (scored, components) = with_stage("score", score_labels(&labels, &clouds, &cfg.css))?;
    with_stage("score", io::write_labels(&scored, out))?;
    if let Some(path) = dump {
        let mut csv = String::from("frame,tau,beta,distance,mlo,size_similarity,css\n");
        for (l, c) in scored.iter().zip(&components) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                l.frame_index,
                l.tau,
                l.beta,
                c[0],
                c[1],
                c[2],
                l.score()
            ));
        }
        with_stage("score", io::write_text(path, &csv))?;
    }
    println!("scored={}", scored.len());
    Ok(())
}

fn proto(cfg: PipelineConfig, runs: &[PathBuf], labels_file: &str, out: &Path) -> Result<()> {
    with_stage("proto", cfg.cproto.validate())?;
    let mut protos = Vec::new();
    let mut skipped = 0;
    for dir in runs {
        let seq = with_stage("proto", io::read_sequence(dir))?;
        let labels = with_stage("proto", io::read_labels(&dir.join(labels_file)))?;
        let clouds = with_stage("proto", io::read_clusters(&dir.join(CLUSTERS_DIR), &labels))?;
        let built = with_stage("proto", build_cproto_set(&labels, &clouds, Some(&seq), &cfg.cproto))
            .with_context(|| format!("in {}", dir.display()))?;
        skipped += built.skipped_tracks;
        protos.extend(built.protos);
    }
    with_stage("proto", io::write_cproto_set(&protos, out))?;
    println!("prototypes={} tracks_without_prototype={skipped}", protos.len());
    Ok(())
}

struct RefineArgs<'a> {
    labels: &'a Path,
    clusters: &'a Path,
    protos: &'a Path,
    out: &'a Path,
    report: Option<&'a Path>,
    gt: Option<&'a Path>,
}

fn refine(cfg: PipelineConfig, a: RefineArgs<'_>) -> Result<()> {
    with_stage("refine", cfg.cbr.validate())?;
    let labels = with_stage("refine", io::read_labels(a.labels))?;
    let clouds = with_stage("refine", io::read_clusters(a.clusters, &labels))?;
    let protos = with_stage("refine", io::read_cproto_set(a.protos))?;
    let refined = with_stage("refine", refine_labels(&labels, &clouds, &protos, &cfg.cbr))?;
    with_stage("refine", io::write_labels(&refined.labels, a.out))?;
    if let (Some(path), Some(gt)) = (a.report, a.gt) {
        let gt = with_stage("refine", io::read_labels(gt))?;
        let lowest = cfg.eval.iou_thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        let errs = with_stage(
            "refine",
            refinement_errors(&labels, &clouds, &protos, &gt, &cfg.cbr, lowest),
        )?;
        with_stage("refine", io::write_text(path, &errs.to_csv()))?;
    }
    println!("refined={} flagged={}", refined.labels.len(), refined.flagged());
    Ok(())
}

fn eval(cfg: PipelineConfig, preds: &[PathBuf], gts: &[PathBuf], iou: Option<Vec<f64>>, out: &Path) -> Result<()> {
    if preds.len() != gts.len() {
        bail!("{} prediction files but {} ground-truth files", preds.len(), gts.len());
    }
    let thresholds = iou.unwrap_or(cfg.eval.iou_thresholds);
    with_stage("eval", validate_thresholds(&thresholds))?;
    let mut groups = Vec::new();
    for (p, g) in preds.iter().zip(gts) {
        let p = with_stage("eval", io::read_labels(p))?;
        let g = with_stage("eval", io::read_labels(g))?;
        groups.extend(group_by_frame(&p, &g));
    }
    let report = with_stage("eval", evaluate(&groups, &thresholds))?;
    with_stage("eval", io::write_json(&out.join(METRICS_JSON), &report))?;
    with_stage("eval", io::write_text(&out.join(METRICS_CSV), &report.to_csv()))?;
    println!("{}", summary_line("eval", &report));
    Ok(())
}

fn losses(pairs: &Path) -> Result<()> {
    let bytes = std::fs::read(pairs).with_context(|| format!("reading {}", pairs.display()))?;
    let pairs = with_stage("losses", parse_proposal_pairs(&bytes, &pairs.display().to_string()))?;
    let report = with_stage("losses", all_losses(&pairs))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(mut cfg: PipelineConfig, frames: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    if let Some(n) = frames {
        cfg.mfc.n = n;
    }
    let Some(out) = out.or_else(|| cfg.output_dir.clone()) else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    let report = with_stage("run", run_pipeline(&cfg, &out))?;
    print_report(&report);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { frames, sequences, out } => synth(cfg, frames, sequences, &out),
        Command::Label { sequence, frames, out } => label(cfg, &sequence, frames, &out),
        Command::Score {
            labels,
            clusters,
            out,
            dump_components,
        } => score(cfg, &labels, &clusters, &out, dump_components.as_deref()),
        Command::Proto { runs, labels_file, out } => proto(cfg, &runs, &labels_file, &out),
        Command::Refine {
            labels,
            clusters,
            protos,
            out,
            report,
            gt,
        } => refine(
            cfg,
            RefineArgs {
                labels: &labels,
                clusters: &clusters,
                protos: &protos,
                out: &out,
                report: report.as_deref(),
                gt: gt.as_deref(),
            },
        ),
        Command::Eval { pred, gt, iou, out } => eval(cfg, &pred, &gt, iou, &out),
        Command::Losses { pairs } => losses(&pairs),
        Command::Run { frames, out } => run(cfg, frames, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
