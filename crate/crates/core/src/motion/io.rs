use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{decode_features, Decoded, FeatureLayout, RootState, LAYOUT_NAME};
use super::MotionError;
use crate::tensor::Tensor;

/// A motion in feature space: what the denoiser produces and what the
/// `motion-json-v1` file stores.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub fps: u32,
    pub features: Tensor,
    pub root_init: RootState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionFile {
    layout: String,
    fps: u32,
    num_frames: usize,
    num_joints: usize,
    features: Vec<Vec<f64>>,
    root_init: RootState,
}

impl MotionClip {
    pub fn new(fps: u32, features: Tensor, root_init: RootState) -> Result<Self, MotionError> {
        if fps == 0 {
            return Err(MotionError::Invalid("fps must be positive".into()));
        }
        FeatureLayout::from_dim(features.cols())?;
        if features.rows() == 0 {
            return Err(MotionError::TooFewFrames(0));
        }
        Ok(Self {
            fps,
            features,
            root_init,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::from_dim(self.features.cols()).expect("validated")
    }

    pub fn decode(&self) -> Result<Decoded, MotionError> {
        decode_features(&self.features, self.root_init)
    }

    pub fn to_json(&self) -> String {
        let file = MotionFile {
            layout: LAYOUT_NAME.to_string(),
            fps: self.fps,
            num_frames: self.num_frames(),
            num_joints: self.layout().num_joints,
            features: (0..self.num_frames())
                .map(|r| self.features.row_slice(r).to_vec())
                .collect(),
            root_init: self.root_init,
        };
        serde_json::to_string(&file).expect("motion serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MotionError> {
        let file: MotionFile =
            serde_json::from_str(text).map_err(|e| MotionError::Format(e.to_string()))?;
        if file.layout != LAYOUT_NAME {
            return Err(MotionError::Format(format!("unsupported layout {:?}", file.layout)));
        }
        let layout = FeatureLayout::new(file.num_joints);
        if file.num_joints == 0 {
            return Err(MotionError::Format("num_joints must be positive".into()));
        }
        if file.features.len() != file.num_frames {
            return Err(MotionError::Format(format!(
                "num_frames {} but {} feature rows",
                file.num_frames,
                file.features.len()
            )));
        }
        for row in &file.features {
            if row.len() != layout.dim() {
                return Err(MotionError::FeatureWidth {
                    expected: Some(layout.dim()),
                    got: row.len(),
                });
            }
        }
        let n = file.num_frames;
        let data = file.features.into_iter().flatten().collect();
        Self::new(file.fps, Tensor::matrix(n, layout.dim(), data), file.root_init)
    }

    pub fn write(&self, path: &Path) -> Result<(), MotionError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| MotionError::Io(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, MotionError> {
        let text = std::fs::read_to_string(path).map_err(|e| MotionError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip() -> MotionClip {
        let data = (0..2 * 51).map(|i| (i as f64 * 0.37).sin()).collect();
        MotionClip::new(
            10,
            Tensor::matrix(2, 51, data),
            RootState {
                pos: [0.5, -1.0, 0.9],
                yaw: 0.25,
            },
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = clip();
        let text = c.to_json();
        assert!(text.starts_with(r#"{"layout":"hml-lite-v1","fps":10,"num_frames":2,"num_joints":8,"features":"#));
        let back = MotionClip::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn reader_validates_width() {
        let text = clip().to_json().replace("\"num_joints\":8", "\"num_joints\":7");
        assert!(matches!(
            MotionClip::from_json(&text),
            Err(MotionError::FeatureWidth { .. })
        ));
        let text = clip().to_json().replace("hml-lite-v1", "hml-v2");
        assert!(MotionClip::from_json(&text).is_err());
    }
}
