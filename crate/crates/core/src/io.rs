//! On-disk formats.
//!
//! * Sequence: `manifest.json` plus one little-endian `f32` quadruple file
//!   (`x y z intensity`) per frame, paths relative to the manifest.
//! * Labels: JSON Lines with a header line, one object per label.
//! * Cluster points: one point file per label, keyed by frame and track.
//! * Prototype sets: `index.json` plus one point file per prototype.
//!
//! Writers are not synchronized; callers must not write the same path from
//! two places at once.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cproto::CProto;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, Point, Pose};
use crate::scene::{Class, Frame, Label, Sequence};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROTO_INDEX_FILE: &str = "index.json";
pub const LABEL_FORMAT: &str = "pseudolabel/labels";
pub const LABEL_FORMAT_VERSION: u32 = 1;

const POINT_RECORD_BYTES: usize = 16;
/// Rotation drift above this is repaired and logged.
const POSE_REPAIR_LOG_DRIFT: f64 = 1e-6;
/// Rotation drift above this is rejected.
const POSE_MAX_DRIFT: f64 = 1e-3;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Byte offset of a serde_json error inside `bytes`.
fn json_error_offset(bytes: &[u8], err: &serde_json::Error) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    let mut current = 1;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            offset = i;
            break;
        }
        if *b == b'\n' {
            current += 1;
            offset = i + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

// ---------------------------------------------------------------------------
// point files

/// Decodes a point file. A trailing partial record is a parse error at the
/// offset where it starts.
pub fn decode_points(bytes: &[u8], source_name: &str) -> Result<Vec<Point>> {
    let whole = bytes.len() - bytes.len() % POINT_RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::parse(
            source_name,
            whole,
            format!("truncated point record ({} trailing bytes)", bytes.len() - whole),
        ));
    }
    bytes
        .chunks_exact(POINT_RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let f = |k: usize| f32::from_le_bytes([rec[4 * k], rec[4 * k + 1], rec[4 * k + 2], rec[4 * k + 3]]) as f64;
            let p = Point::new(f(0), f(1), f(2), f(3));
            if p.is_finite() {
                Ok(p)
            } else {
                Err(Error::Validity(format!(
                    "{source_name}: non-finite point {i} at byte {}",
                    i * POINT_RECORD_BYTES
                )))
            }
        })
        .collect()
}

pub fn encode_points(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Rounds every coordinate to the nearest `f32`, so the points survive a
/// write/read cycle unchanged.
pub fn quantize_points(points: &mut [Point]) {
    for p in points {
        *p = Point::new(
            p.x as f32 as f64,
            p.y as f32 as f64,
            p.z as f32 as f64,
            p.intensity as f32 as f64,
        );
    }
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    decode_points(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    write_bytes(path, &encode_points(points))
}

// ---------------------------------------------------------------------------
// sequences

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub index: u32,
    pub timestamp: f64,
    /// Row-major 3x4 `[R | t]`, ego to global.
    pub pose: [f64; 12],
    /// Point file, relative to the manifest.
    pub points: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub id: String,
    pub frames: Vec<ManifestFrame>,
}

/// Referenced files must stay beneath the directory of the index naming them.
fn check_relative_path(path: &str) -> std::result::Result<(), String> {
    use std::path::Component;
    if path.is_empty() {
        return Err("empty point path".into());
    }
    if Path::new(path)
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
    {
        Ok(())
    } else {
        Err(format!("point path {path:?} must be relative without '..'"))
    }
}

/// Parses and validates a manifest without touching point files. Frames
/// come back sorted by index; poses are checked but not repaired here.
pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let mut manifest: Manifest = serde_json::from_slice(bytes)
        .map_err(|e| Error::parse(MANIFEST_FILE, json_error_offset(bytes, &e), e.to_string()))?;
    if manifest.frames.is_empty() {
        return Err(Error::Validity(format!("sequence {:?} has no frames", manifest.id)));
    }
    manifest.frames.sort_by_key(|f| f.index);
    for pair in manifest.frames.windows(2) {
        if pair[0].index == pair[1].index {
            return Err(Error::Validity(format!("duplicate frame index {}", pair[0].index)));
        }
        if pair[1].timestamp < pair[0].timestamp {
            return Err(Error::Validity(format!(
                "timestamps decrease between frames {} and {}",
                pair[0].index, pair[1].index
            )));
        }
    }
    for f in &manifest.frames {
        if !f.timestamp.is_finite() {
            return Err(Error::Validity(format!("frame {} has non-finite timestamp", f.index)));
        }
        let (r, t) = Pose::row_major_parts(&f.pose);
        Pose::orthonormalized(r, t, POSE_MAX_DRIFT).map_err(|e| Error::Validity(format!("frame {}: {e}", f.index)))?;
        check_relative_path(&f.points).map_err(|e| Error::Validity(format!("frame {}: {e}", f.index)))?;
    }
    Ok(manifest)
}

/// Reads a sequence from a manifest path (or a directory containing
/// `manifest.json`).
pub fn read_sequence(path: &Path) -> Result<Sequence> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&read_bytes(&manifest_path)?)?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in manifest.frames {
        let (r, t) = Pose::row_major_parts(&mf.pose);
        let (pose, drift) = Pose::orthonormalized(r, t, POSE_MAX_DRIFT)?;
        if drift > POSE_REPAIR_LOG_DRIFT {
            warn!(
                "sequence {}: frame {} pose re-orthonormalized (drift {drift:.2e})",
                manifest.id, mf.index
            );
        }
        let points = read_points(&base.join(&mf.points))?;
        frames.push(Frame {
            index: mf.index,
            timestamp: mf.timestamp,
            pose,
            points,
        });
    }
    Ok(Sequence {
        id: manifest.id,
        frames,
    })
}

pub fn frame_file_name(index: u32) -> String {
    format!("frames/{index:06}.bin")
}

/// Writes `manifest.json` and one point file per frame under `dir`.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<PathBuf> {
    seq.validate()?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        let rel = frame_file_name(f.index);
        write_points(&dir.join(&rel), &f.points)?;
        frames.push(ManifestFrame {
            index: f.index,
            timestamp: f.timestamp,
            pose: f.pose.to_row_major(),
            points: rel,
        });
    }
    let manifest = Manifest {
        id: seq.id.clone(),
        frames,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_bytes(&path, &bytes)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// labels

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    frame: u32,
    x: f64,
    y: f64,
    z: f64,
    l: f64,
    w: f64,
    h: f64,
    alpha: f64,
    beta: Class,
    tau: u64,
    css: Option<f64>,
}

impl From<&Label> for LabelRecord {
    fn from(l: &Label) -> Self {
        let b = &l.bbox;
        Self {
            frame: l.frame_index,
            x: b.x,
            y: b.y,
            z: b.z,
            l: b.l,
            w: b.w,
            h: b.h,
            alpha: b.alpha,
            beta: l.beta,
            tau: l.tau,
            css: l.css,
        }
    }
}

pub fn encode_labels(labels: &[Label]) -> Vec<u8> {
    let mut out = Vec::new();
    let header = LabelHeader {
        format: LABEL_FORMAT.into(),
        version: LABEL_FORMAT_VERSION,
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for l in labels {
        serde_json::to_writer(&mut out, &LabelRecord::from(l)).expect("label serializes");
        out.push(b'\n');
    }
    out
}

/// Parses a label file. Blank lines are skipped; the first non-blank line
/// must be the header.
pub fn parse_labels(bytes: &[u8], source_name: &str) -> Result<Vec<Label>> {
    let mut labels = Vec::new();
    let mut saw_header = false;
    let mut offset = 0;
    for line in bytes.split_inclusive(|b| *b == b'\n') {
        let start = offset;
        offset += line.len();
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let at = |e: &serde_json::Error| start + json_error_offset(line, e);
        if !saw_header {
            let header: LabelHeader = serde_json::from_slice(line)
                .map_err(|e| Error::parse(source_name, at(&e), format!("bad header: {e}")))?;
            if header.format != LABEL_FORMAT || header.version != LABEL_FORMAT_VERSION {
                return Err(Error::parse(
                    source_name,
                    start,
                    format!("unsupported label format {:?} v{}", header.format, header.version),
                ));
            }
            saw_header = true;
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_slice(line).map_err(|e| Error::parse(source_name, at(&e), e.to_string()))?;
        let bbox = Box3D::new(rec.x, rec.y, rec.z, rec.l, rec.w, rec.h, rec.alpha)
            .map_err(|e| Error::parse(source_name, start, e.to_string()))?;
        let label = Label {
            frame_index: rec.frame,
            bbox: Box3D {
                alpha: normalize_angle(rec.alpha),
                ..bbox
            },
            beta: rec.beta,
            tau: rec.tau,
            css: rec.css,
        };
        label
            .validate()
            .map_err(|e| Error::parse(source_name, start, e.to_string()))?;
        labels.push(label);
    }
    if !saw_header {
        return Err(Error::parse(source_name, 0, "missing label header line"));
    }
    Ok(labels)
}

pub fn write_labels(labels: &[Label], path: &Path) -> Result<()> {
    for l in labels {
        l.validate()?;
    }
    write_bytes(path, &encode_labels(labels))
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    parse_labels(&read_bytes(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// per-label cluster points

pub fn cluster_file_name(label: &Label) -> String {
    format!("f{:06}_t{:06}.bin", label.frame_index, label.tau)
}

/// Writes one point file per label; `clouds[i]` belongs to `labels[i]`.
pub fn write_clusters(dir: &Path, labels: &[Label], clouds: &[Vec<Point>]) -> Result<()> {
    if labels.len() != clouds.len() {
        return Err(Error::Validity(format!(
            "{} labels but {} cluster clouds",
            labels.len(),
            clouds.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (l, c) in labels.iter().zip(clouds) {
        write_points(&dir.join(cluster_file_name(l)), c)?;
    }
    Ok(())
}

pub fn read_clusters(dir: &Path, labels: &[Label]) -> Result<Vec<Vec<Point>>> {
    labels
        .iter()
        .map(|l| read_points(&dir.join(cluster_file_name(l))))
        .collect()
}

// ---------------------------------------------------------------------------
// prototype sets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtoIndexEntry {
    pub file: String,
    pub class: Class,
    pub source_tau: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    #[serde(rename = "box")]
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtoIndex {
    pub prototypes: Vec<ProtoIndexEntry>,
}

pub fn parse_proto_index(bytes: &[u8]) -> Result<ProtoIndex> {
    let index: ProtoIndex = serde_json::from_slice(bytes)
        .map_err(|e| Error::parse(PROTO_INDEX_FILE, json_error_offset(bytes, &e), e.to_string()))?;
    for (i, e) in index.prototypes.iter().enumerate() {
        e.bbox
            .validate()
            .map_err(|err| Error::Validity(format!("prototype {i}: {err}")))?;
        check_relative_path(&e.file).map_err(|err| Error::Validity(format!("prototype {i}: {err}")))?;
    }
    Ok(index)
}

pub fn write_cproto_set(protos: &[CProto], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(protos.len());
    for (i, p) in protos.iter().enumerate() {
        let file = format!("proto_{i:04}.bin");
        write_points(&dir.join(&file), &p.points)?;
        entries.push(ProtoIndexEntry {
            file,
            class: p.class,
            source_tau: p.source_tau,
            sequence: p.sequence.clone(),
            bbox: p.bbox,
        });
    }
    let mut bytes = serde_json::to_vec_pretty(&ProtoIndex { prototypes: entries }).expect("index serializes");
    bytes.push(b'\n');
    write_bytes(&dir.join(PROTO_INDEX_FILE), &bytes)
}

pub fn read_cproto_set(dir: &Path) -> Result<Vec<CProto>> {
    let index = parse_proto_index(&read_bytes(&dir.join(PROTO_INDEX_FILE))?)?;
    index
        .prototypes
        .into_iter()
        .map(|e| {
            Ok(CProto {
                bbox: e.bbox,
                points: read_points(&dir.join(&e.file))?,
                source_tau: e.source_tau,
                class: e.class,
                sequence: e.sequence,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// generic JSON helpers

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], source_name: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse(source_name, json_error_offset(bytes, &e), e.to_string()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    parse_json(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// Appends to a file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
