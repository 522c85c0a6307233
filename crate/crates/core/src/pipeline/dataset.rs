use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::import::RawMotion;
use super::runtime::derive_seed;
use super::scripts::{scene_spec_for, scripted_motion, Combo, COMBOS};
use super::{PipelineError, RunConfig};
use crate::motion::{MotionClip, Skeleton};
use crate::scene::{crop_and_normalize, read_ply, synth_scene, write_ply, PointCloud, Scene, SceneKind};
use crate::text::{parse_caption, synth_caption};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One line of the manifest. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub scene: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dynamic_frames: Vec<String>,
    pub motion: String,
    pub captions: Vec<String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_kind: Option<SceneKind>,
    /// Semantic tag shared by every caption of the record, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Parses and checks the structural rules: unique ids and at least one
    /// caption per record.
    pub fn from_jsonl(text: &str) -> Result<Self, PipelineError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord =
                serde_json::from_str(line).map_err(|e| PipelineError::Manifest(format!("line {}: {e}", n + 1)))?;
            records.push(r);
        }
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(PipelineError::Manifest(format!("duplicate id {}", w[0])));
        }
        let bad: Vec<&str> = self
            .records
            .iter()
            .filter(|r| r.captions.is_empty() || r.captions.iter().any(|c| c.trim().is_empty()))
            .map(|r| r.id.as_str())
            .collect();
        if !bad.is_empty() {
            return Err(PipelineError::Manifest(format!("records without captions: {}", bad.join(", "))));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_jsonl()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// A manifest record with its files loaded.
#[derive(Clone, Debug)]
pub struct Record {
    pub meta: ManifestRecord,
    pub scene: Scene,
    pub clip: MotionClip,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Loads a manifest file, or `manifest.jsonl` inside a directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Manifest::read(&file)?;
        let records = manifest
            .records
            .into_par_iter()
            .map(|meta| {
                let ctx = |e: PipelineError| PipelineError::Manifest(format!("record {}: {e}", meta.id));
                let map = read_ply(&root.join(&meta.scene)).map_err(|e| ctx(e.into()))?;
                let frames = meta
                    .dynamic_frames
                    .iter()
                    .map(|f| read_ply(&root.join(f)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ctx(e.into()))?;
                let clip = MotionClip::read(&root.join(&meta.motion)).map_err(|e| ctx(e.into()))?;
                Ok(Record {
                    scene: Scene { map, frames },
                    clip,
                    meta,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(Self { root, records })
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.meta.split == split).collect()
    }
}

/// Split rule: every fifth record goes to the test set.
fn split_of(i: usize) -> Split {
    if i % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

/// Two differently worded captions for a record.
fn record_captions(combo: Combo, seed: u64) -> Vec<String> {
    let first = synth_caption(combo.kind, &combo.script, 1 + seed % 997);
    let second = (0..)
        .map(|k| synth_caption(combo.kind, &combo.script, 1 + (seed / 997 + k) % 997))
        .find(|c| *c != first)
        .expect("every script has several wordings");
    vec![first, second]
}

/// Writes a synthetic corpus of `size` records under `out`: scenes as PLY,
/// motions as `motion-json-v1`, the manifest, and the same corpus in the
/// importer's raw format under `raw/`.
pub fn gen_dataset(config: &RunConfig, size: usize, seed: u64, out: &Path) -> Result<Manifest, PipelineError> {
    let data = &config.data;
    for d in ["scenes", "motions", "raw/motions"] {
        mkdir(&out.join(d))?;
    }
    let skeleton = Skeleton::default_chain();
    let records = (0..size)
        .into_par_iter()
        .map(|i| -> Result<(ManifestRecord, String), PipelineError> {
            let combo = COMBOS[i % COMBOS.len()];
            let rs = derive_seed(seed, i as u64);
            let id = format!("rec{i:04}");
            let spec = scene_spec_for(combo, rs);
            let scene = synth_scene(&spec)?;
            let motion = scripted_motion(combo, &spec, rs, data.frames, data.fps)?;
            let clip = motion.encode(&skeleton, data.thresholds())?;

            // Place the scene somewhere in a larger map, then crop it back
            // around the motion start.
            let mut rng = ChaCha8Rng::seed_from_u64(rs);
            let anchor = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-1.0..1.0)];
            let crop = |c: &PointCloud| crop_and_normalize(&c.translated(anchor), anchor, data.crop_radius);
            let map = crop(&scene.map)?;
            let scene_rel = format!("scenes/{id}.ply");
            write_ply(&map, &out.join(&scene_rel))?;
            let mut dynamic_frames = Vec::with_capacity(scene.frames.len());
            for (f, cloud) in scene.frames.iter().enumerate() {
                let rel = format!("scenes/{id}_f{f:02}.ply");
                write_ply(&crop(cloud)?, &out.join(&rel))?;
                dynamic_frames.push(rel);
            }
            let motion_rel = format!("motions/{id}.json");
            clip.write(&out.join(&motion_rel))?;
            let raw = RawMotion::from_sequence(&motion);
            write_text(&out.join(format!("raw/motions/{id}.json")), &raw.to_json())?;

            let captions = record_captions(combo, rs);
            let label = parse_caption(&captions[0]).map(|l| l.tag());
            let record = ManifestRecord {
                id,
                scene: scene_rel,
                dynamic_frames,
                motion: motion_rel,
                captions,
                split: split_of(i),
                scene_kind: Some(combo.kind),
                label,
            };
            let raw_caption = serde_json::json!({
                "id": record.id,
                "captions": record.captions,
                "split": record.split,
            });
            Ok((record, raw_caption.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let raw_lines: String = records.iter().map(|(_, l)| format!("{l}\n")).collect();
    write_text(&out.join("raw/captions.jsonl"), &raw_lines)?;
    let manifest = Manifest {
        records: records.into_iter().map(|(r, _)| r).collect(),
    };
    manifest.write(&out.join(MANIFEST))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_eighty_twenty_for_ten() {
        let test = (0..10).filter(|&i| split_of(i) == Split::Test).count();
        assert_eq!(test, 2);
    }

    #[test]
    fn record_captions_differ_in_wording_only() {
        for s in 0..500 {
            for c in COMBOS {
                let caps = record_captions(c, s);
                assert_ne!(caps[0], caps[1]);
                assert_eq!(parse_caption(&caps[0]), parse_caption(&caps[1]));
            }
        }
    }

    #[test]
    fn manifest_rejects_missing_captions_with_id() {
        let line = r#"{"id":"x7","scene":"s.ply","motion":"m.json","captions":[],"split":"train"}"#;
        let err = Manifest::from_jsonl(line).unwrap_err().to_string();
        assert!(err.contains("x7"), "{err}");
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let line = r#"{"id":"a","scene":"s.ply","motion":"m.json","captions":["c"],"split":"test"}"#;
        assert!(Manifest::from_jsonl(&format!("{line}\n{line}\n")).is_err());
        assert_eq!(Manifest::from_jsonl(line).unwrap().records.len(), 1);
    }
}
