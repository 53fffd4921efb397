//! End-to-end orchestration: synthesize (or load) sequences, generate
//! initial labels, score them, build prototypes, refine, evaluate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbr::{associate_cproto, refine_labels, relocalize, resize_to_cproto, CbrConfig};
use crate::cproto::{build_cproto_set, CProto, CProtoConfig};
use crate::css::{distance_score, score_labels, CssConfig};
use crate::cst::{css_weight, CstConfig};
use crate::error::{Error, Result};
use crate::eval::{
    best_iou_per_prediction, evaluate, group_by_frame, matched_errors, spearman, validate_thresholds, ErrorStats,
    FrameGroup, MetricsReport,
};
use crate::geometry::{IouMode, Point};
use crate::io;
use crate::mfc::{generate_initial_labels, MfcConfig, MfcStats};
use crate::scene::{Label, Sequence};
use crate::synth::{generate_scene, SynthConfig};

pub const SEQUENCE_DIR_PREFIX: &str = "seq_";
pub const GT_FILE: &str = "gt.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const SCORED_FILE: &str = "scored.jsonl";
pub const REFINED_FILE: &str = "refined.jsonl";
pub const CLUSTERS_DIR: &str = "clusters";
pub const PROTOS_DIR: &str = "protos";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Ground-truth objects with fewer points over the whole sequence are
    /// left out of evaluation.
    pub gt_min_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.3, 0.5, 0.7],
            gt_min_points: 10,
        }
    }
}

/// A recorded sequence with optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSequence {
    /// Manifest file or its directory.
    pub path: PathBuf,
    #[serde(default)]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Derives every per-sequence synthesis seed and the ground-removal
    /// seed.
    pub seed: u64,
    /// Synthetic sequences to generate when `inputs` is empty.
    pub sequences: usize,
    pub inputs: Vec<InputSequence>,
    pub output_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub mfc: MfcConfig,
    pub css: CssConfig,
    pub cproto: CProtoConfig,
    pub cbr: CbrConfig,
    pub cst: CstConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sequences: 4,
            inputs: Vec::new(),
            output_dir: None,
            synth: SynthConfig::default(),
            mfc: MfcConfig::default(),
            css: CssConfig::default(),
            cproto: CProtoConfig::default(),
            cbr: CbrConfig::default(),
            cst: CstConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.mfc.validate()?;
        self.css.validate()?;
        self.cproto.validate()?;
        self.cbr.validate()?;
        self.cst.validate()?;
        validate_thresholds(&self.eval.iou_thresholds)?;
        if self.inputs.is_empty() {
            if self.sequences == 0 {
                return Err(Error::Config("no inputs and zero synthetic sequences".into()));
            }
            self.synth
                .validate(&self.mfc.class_thresholds)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8], source_name: &str) -> Result<Self> {
        let cfg: Self = io::parse_json(bytes, source_name)?;
        Ok(cfg)
    }

    /// Synthesis config for sequence `i` under the global seed.
    pub fn synth_for(&self, i: usize) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, i as u64),
            ..self.synth.clone()
        }
    }

    pub fn mfc_seeded(&self) -> MfcConfig {
        MfcConfig {
            seed: self.seed,
            ..self.mfc.clone()
        }
    }
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sequence_dir_name(i: usize) -> String {
    format!("{SEQUENCE_DIR_PREFIX}{i:03}")
}

/// Emits one structured log line for a finished stage.
pub fn log_stage(stage: &str, started: Instant, fields: serde_json::Value) {
    let mut obj = serde_json::json!({
        "stage": stage,
        "millis": started.elapsed().as_millis() as u64,
    });
    if let (Some(o), serde_json::Value::Object(extra)) = (obj.as_object_mut(), fields) {
        o.extend(extra);
    }
    info!(target: "pseudolabel::stage", "{obj}");
}

/// One sequence with its labels at every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    pub sequence: Sequence,
    pub gt: Option<Vec<Label>>,
    pub initial: Vec<Label>,
    pub clusters: Vec<Vec<Point>>,
    pub scored: Vec<Label>,
    pub components: Vec<[f64; 3]>,
    pub refined: Vec<Label>,
    pub flagged: usize,
    pub mfc_stats: MfcStats,
}

/// Initial labels with cluster points rounded as they would be on disk.
pub fn label_sequence(sequence: &Sequence, config: &MfcConfig) -> Result<(Vec<Label>, Vec<Vec<Point>>, MfcStats)> {
    let mut out = generate_initial_labels(sequence, config)?;
    for c in &mut out.clusters {
        io::quantize_points(c);
    }
    Ok((out.labels, out.clusters, out.stats))
}

/// Prototypes of every sequence, in sequence order.
pub fn build_protos(runs: &[SequenceRun], config: &CProtoConfig) -> Result<(Vec<CProto>, usize)> {
    let mut protos = Vec::new();
    let mut skipped = 0;
    for r in runs {
        let b = build_cproto_set(&r.scored, &r.clusters, Some(&r.sequence), config)?;
        skipped += b.skipped_tracks;
        protos.extend(b.protos);
    }
    Ok((protos, skipped))
}

/// Frame groups over all sequences with ground truth, for a chosen stage.
pub fn frame_groups(runs: &[SequenceRun], stage: impl Fn(&SequenceRun) -> &[Label]) -> Vec<FrameGroup> {
    runs.iter()
        .filter_map(|r| r.gt.as_ref().map(|gt| group_by_frame(stage(r), gt)))
        .flatten()
        .collect()
}

/// How well the CSS score tracks label quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssFidelity {
    /// Rank correlation of score and best BEV IoU with ground truth.
    pub spearman_css: f64,
    pub spearman_distance: f64,
    /// BEV AP at the middle threshold, labels ranked by CSS.
    pub ap_css: f64,
    /// Same labels ranked by the distance score alone.
    pub ap_distance: f64,
    pub ap_iou: f64,
    /// Mean CSS-derived training weight.
    pub mean_weight: f64,
}

pub fn css_fidelity(runs: &[SequenceRun], css: &CssConfig, cst: &CstConfig, ap_iou: f64) -> Result<CssFidelity> {
    let groups = frame_groups(runs, |r| &r.scored);
    let ious = best_iou_per_prediction(&groups, IouMode::Bev);
    let css_scores: Vec<f64> = groups.iter().flat_map(|g| g.preds.iter().map(Label::score)).collect();
    let dist_scores: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.preds.iter().map(|l| distance_score(&l.bbox, css)))
        .collect();
    let by_distance: Vec<FrameGroup> = groups
        .iter()
        .map(|g| FrameGroup {
            preds: g
                .preds
                .iter()
                .map(|l| Label {
                    css: Some(distance_score(&l.bbox, css)),
                    ..*l
                })
                .collect(),
            gts: g.gts.clone(),
        })
        .collect();
    let n = css_scores.len().max(1) as f64;
    Ok(CssFidelity {
        spearman_css: spearman(&css_scores, &ious)?,
        spearman_distance: spearman(&dist_scores, &ious)?,
        ap_css: crate::eval::average_precision(&groups, ap_iou, IouMode::Bev),
        ap_distance: crate::eval::average_precision(&by_distance, ap_iou, IouMode::Bev),
        ap_iou,
        mean_weight: css_scores.iter().map(|s| css_weight(*s, cst)).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub sequences: usize,
    pub frames: usize,
    pub initial_labels: usize,
    pub prototypes: usize,
    pub tracks_without_prototype: usize,
    pub flagged_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub counts: StageCounts,
    /// Absent when no sequence has ground truth.
    pub initial: Option<MetricsReport>,
    pub refined: Option<MetricsReport>,
    pub css: Option<CssFidelity>,
}

/// Everything `run_pipeline` computes, kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub runs: Vec<SequenceRun>,
    pub protos: Vec<CProto>,
    pub report: PipelineReport,
}

/// Synthesizes `config.sequences` scenes, or reads the configured inputs.
pub fn load_inputs(config: &PipelineConfig) -> Result<Vec<(Sequence, Option<Vec<Label>>)>> {
    if config.inputs.is_empty() {
        return (0..config.sequences)
            .into_par_iter()
            .map(|i| {
                let scene = generate_scene(&config.synth_for(i), &config.mfc.class_thresholds)?;
                let gt = scene.ground_truth.labels(config.eval.gt_min_points);
                Ok((scene.sequence, Some(gt)))
            })
            .collect();
    }
    config
        .inputs
        .iter()
        .map(|inp| {
            let seq = io::read_sequence(&inp.path)?;
            let gt = inp.gt.as_deref().map(io::read_labels).transpose()?;
            Ok((seq, gt))
        })
        .collect()
}

/// Runs every stage in memory.
pub fn compute_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let t = Instant::now();
    let inputs = load_inputs(config)?;
    log_stage(
        "load",
        t,
        serde_json::json!({"sequences": inputs.len(), "frames": inputs.iter().map(|s| s.0.frames.len()).sum::<usize>()}),
    );

    let t = Instant::now();
    let mfc = config.mfc_seeded();
    let mut runs: Vec<SequenceRun> = inputs
        .into_par_iter()
        .map(|(sequence, gt)| {
            let (initial, clusters, stats) = label_sequence(&sequence, &mfc)?;
            let (scored, components) = score_labels(&initial, &clusters, &config.css)?;
            Ok(SequenceRun {
                sequence,
                gt,
                initial,
                clusters,
                scored,
                components,
                refined: Vec::new(),
                flagged: 0,
                mfc_stats: stats,
            })
        })
        .collect::<Result<_>>()?;
    log_stage(
        "label+score",
        t,
        serde_json::json!({"labels": runs.iter().map(|r| r.initial.len()).sum::<usize>()}),
    );

    let t = Instant::now();
    let (protos, skipped) = build_protos(&runs, &config.cproto)?;
    log_stage(
        "proto",
        t,
        serde_json::json!({"prototypes": protos.len(), "skipped_tracks": skipped}),
    );

    let t = Instant::now();
    for r in &mut runs {
        let refined = refine_labels(&r.scored, &r.clusters, &protos, &config.cbr)?;
        r.flagged = refined.flagged();
        r.refined = refined.labels;
    }
    log_stage(
        "refine",
        t,
        serde_json::json!({"flagged": runs.iter().map(|r| r.flagged).sum::<usize>()}),
    );

    let t = Instant::now();
    let has_gt = runs.iter().any(|r| r.gt.is_some());
    let thresholds = &config.eval.iou_thresholds;
    let (initial, refined, css) = if has_gt {
        let mid = thresholds[thresholds.len() / 2];
        (
            Some(evaluate(&frame_groups(&runs, |r| &r.scored), thresholds)?),
            Some(evaluate(&frame_groups(&runs, |r| &r.refined), thresholds)?),
            css_fidelity(&runs, &config.css, &config.cst, mid).ok(),
        )
    } else {
        (None, None, None)
    };
    log_stage("eval", t, serde_json::json!({"with_ground_truth": has_gt}));

    let counts = StageCounts {
        sequences: runs.len(),
        frames: runs.iter().map(|r| r.sequence.frames.len()).sum(),
        initial_labels: runs.iter().map(|r| r.initial.len()).sum(),
        prototypes: protos.len(),
        tracks_without_prototype: skipped,
        flagged_labels: runs.iter().map(|r| r.flagged).sum(),
    };
    Ok(PipelineOutput {
        runs,
        protos,
        report: PipelineReport {
            counts,
            initial,
            refined,
            css,
        },
    })
}

/// Label errors against ground truth after each refinement step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementErrors {
    pub initial: ErrorStats,
    pub resized: ErrorStats,
    pub relocalized: ErrorStats,
}

impl RefinementErrors {
    /// One row per step plus the change from the initial labels.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("stage,pairs,size_mae,position_mae,angle_mae,size_delta,position_delta,angle_delta\n");
        for (name, e) in [
            ("initial", &self.initial),
            ("resized", &self.resized),
            ("relocalized", &self.relocalized),
        ] {
            out.push_str(&format!(
                "{name},{},{},{},{},{},{},{}\n",
                e.pairs,
                e.size,
                e.position,
                e.angle,
                e.size - self.initial.size,
                e.position - self.initial.position,
                e.angle - self.initial.angle
            ));
        }
        out
    }
}

/// Errors of `labels` before refinement, after resizing only, and after
/// relocalization, each matched to `gt` in BEV at `iou_min`. Labels without
/// an eligible prototype stay as they are in every step.
pub fn refinement_errors(
    labels: &[Label],
    clouds: &[Vec<Point>],
    protos: &[CProto],
    gt: &[Label],
    config: &CbrConfig,
    iou_min: f64,
) -> Result<RefinementErrors> {
    let mut resized = labels.to_vec();
    let mut relocalized = labels.to_vec();
    if !protos.is_empty() {
        for (i, l) in labels.iter().enumerate() {
            if let Some(k) = associate_cproto(l, protos, config.class_restricted)? {
                resized[i] = resize_to_cproto(l, &protos[k]);
                relocalized[i] = relocalize(&resized[i], &clouds[i], config);
            }
        }
    }
    let stats = |preds: &[Label]| matched_errors(&group_by_frame(preds, gt), iou_min, IouMode::Bev);
    Ok(RefinementErrors {
        initial: stats(labels)?,
        resized: stats(&resized)?,
        relocalized: stats(&relocalized)?,
    })
}

/// Runs every stage and writes all artifacts under `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineReport> {
    let output = compute_pipeline(config)?;
    write_outputs(&output, config, out_dir)?;
    Ok(output.report)
}

pub fn write_outputs(output: &PipelineOutput, config: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let t = Instant::now();
    io::write_json(&out_dir.join("config.json"), config)?;
    output
        .runs
        .par_iter()
        .enumerate()
        .try_for_each(|(i, r)| -> Result<()> {
            let dir = out_dir.join(sequence_dir_name(i));
            io::write_sequence(&r.sequence, &dir)?;
            if let Some(gt) = &r.gt {
                io::write_labels(gt, &dir.join(GT_FILE))?;
            }
            io::write_labels(&r.initial, &dir.join(LABELS_FILE))?;
            io::write_clusters(&dir.join(CLUSTERS_DIR), &r.initial, &r.clusters)?;
            io::write_labels(&r.scored, &dir.join(SCORED_FILE))?;
            io::write_labels(&r.refined, &dir.join(REFINED_FILE))?;
            Ok(())
        })?;
    io::write_cproto_set(&output.protos, &out_dir.join(PROTOS_DIR))?;
    io::write_json(&out_dir.join(METRICS_JSON), &output.report)?;
    let mut csv = String::from("stage,mode,iou,matched,recall,precision,ap\n");
    for (stage, m) in [("initial", &output.report.initial), ("refined", &output.report.refined)] {
        if let Some(m) = m {
            for line in m.to_csv().lines().skip(1) {
                csv.push_str(&format!("{stage},{line}\n"));
            }
        }
    }
    io::write_text(&out_dir.join(METRICS_CSV), &csv)?;
    log_stage("write", t, serde_json::json!({"dir": out_dir.display().to_string()}));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_eta_rejected_before_work() {
        let cfg = PipelineConfig {
            cproto: CProtoConfig {
                eta: 1.5,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(compute_pipeline(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..8).map(|i| derive_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text, "cfg").unwrap(), cfg);
        assert!(PipelineConfig::from_json(br#"{"mfc": {"bogus": 1}}"#, "cfg").is_err());
        let partial = PipelineConfig::from_json(br#"{"sequences": 2, "mfc": {"n": 3}}"#, "cfg").unwrap();
        assert_eq!(
            (partial.sequences, partial.mfc.n, partial.mfc.dbscan_min_pts),
            (2, 3, 5)
        );
    }
}
