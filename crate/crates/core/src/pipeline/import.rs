//! Loader for externally captured scene-motion-caption datasets.
//!
//! Expected layout:
//! - a captions file in JSON Lines, one `{"id", "captions", "split"?}` object
//!   per record (`split` defaults to `train`);
//! - `<scenes>/<id>.ply` for every record, ASCII PLY with `x y z`, optional
//!   `red green blue` and optional `nx ny nz` (estimated when absent), plus
//!   optional per-frame interactor clouds `<scenes>/<id>_fNN.ply`;
//! - `<motions>/<id>.json`: `{"fps", "translations": [[x,y,z]; N],
//!   "rotations": [[[ax,ay,az]; J]; N]}` with axis-angle joint rotations of
//!   the default eight-joint chain.
//!
//! Any deviation is an error naming the offending record ids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Manifest, ManifestRecord, Split, MANIFEST};
use super::PipelineError;
use crate::motion::{ContactThresholds, MotionSequence, Skeleton, Vec3};
use crate::scene::{read_ply, write_ply};

/// Root translations and joint rotations as provided by a capture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMotion {
    pub fps: u32,
    pub translations: Vec<Vec3>,
    pub rotations: Vec<Vec<Vec3>>,
}

impl RawMotion {
    pub fn from_sequence(m: &MotionSequence) -> Self {
        Self {
            fps: m.fps,
            translations: m.translations.clone(),
            rotations: m.rotations.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("raw motion serializes")
    }

    pub fn to_sequence(&self) -> Result<MotionSequence, PipelineError> {
        Ok(MotionSequence::new(self.fps, self.translations.clone(), self.rotations.clone())?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionEntry {
    id: String,
    #[serde(default)]
    captions: Vec<String>,
    #[serde(default)]
    split: Option<Split>,
}

#[derive(Clone, Debug)]
pub struct ImportOutcome {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

fn frame_files(scenes: &Path, id: &str) -> Result<Vec<String>, PipelineError> {
    let mut names = Vec::new();
    let Ok(dir) = fs::read_dir(scenes) else {
        return Ok(names);
    };
    let prefix = format!("{id}_f");
    for entry in dir {
        let entry = entry.map_err(|e| PipelineError::io(scenes, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".ply")) {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                names.push(name);
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Validates and converts an export into a manifest directory under `out`.
pub fn import_laserhuman(
    scenes: &Path,
    motions: &Path,
    captions: &Path,
    thresholds: ContactThresholds,
    out: &Path,
) -> Result<ImportOutcome, PipelineError> {
    let text = match fs::read_to_string(captions) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(PipelineError::io(captions, e)),
    };
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: CaptionEntry = serde_json::from_str(line)
            .map_err(|e| PipelineError::Manifest(format!("{} line {}: {e}", captions.display(), n + 1)))?;
        entries.push(e);
    }
    let missing: Vec<&str> = entries
        .iter()
        .filter(|e| e.captions.is_empty() || e.captions.iter().any(|c| c.trim().is_empty()))
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Manifest(format!("records without captions: {}", missing.join(", "))));
    }

    let mut warnings = Vec::new();
    if entries.is_empty() {
        warnings.push(format!("no records found in {}", captions.display()));
    }
    for d in ["scenes", "motions"] {
        fs::create_dir_all(out.join(d)).map_err(|e| PipelineError::io(out, e))?;
    }
    let skeleton = Skeleton::default_chain();
    let mut records = Vec::with_capacity(entries.len());
    let mut failures = Vec::new();
    for e in entries {
        let result = (|| -> Result<ManifestRecord, PipelineError> {
            let map = read_ply(&scenes.join(format!("{}.ply", e.id)))?;
            let scene_rel = format!("scenes/{}.ply", e.id);
            write_ply(&map, &out.join(&scene_rel))?;
            let mut dynamic_frames = Vec::new();
            for name in frame_files(scenes, &e.id)? {
                let cloud = read_ply(&scenes.join(&name))?;
                let rel = format!("scenes/{name}");
                write_ply(&cloud, &out.join(&rel))?;
                dynamic_frames.push(rel);
            }
            let path = motions.join(format!("{}.json", e.id));
            let raw_text = fs::read_to_string(&path).map_err(|err| PipelineError::io(&path, err))?;
            let raw: RawMotion =
                serde_json::from_str(&raw_text).map_err(|err| PipelineError::Manifest(err.to_string()))?;
            let clip = raw.to_sequence()?.encode(&skeleton, thresholds)?;
            let motion_rel = format!("motions/{}.json", e.id);
            clip.write(&out.join(&motion_rel))?;
            Ok(ManifestRecord {
                id: e.id.clone(),
                scene: scene_rel,
                dynamic_frames,
                motion: motion_rel,
                captions: e.captions.clone(),
                split: e.split.unwrap_or(Split::Train),
                scene_kind: None,
                label: None,
            })
        })();
        match result {
            Ok(r) => records.push(r),
            Err(err) => failures.push(format!("{}: {err}", e.id)),
        }
    }
    if !failures.is_empty() {
        return Err(PipelineError::Manifest(format!("invalid records: {}", failures.join("; "))));
    }
    let manifest = Manifest { records };
    manifest.validate()?;
    manifest.write(&out.join(MANIFEST))?;
    Ok(ImportOutcome { manifest, warnings })
}
