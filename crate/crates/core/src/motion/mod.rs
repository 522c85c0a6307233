//! Skeleton kinematics and the `hml-lite-v1` pose feature layout.

mod features;
mod io;
pub mod skeleton;

pub use features::{
    decode_features, decode_on_tape, encode_features, foot_contact_flags, ContactThresholds, Decoded,
    FeatureLayout, JointVars, RootState, LAYOUT_NAME,
};
pub use io::MotionClip;
pub use skeleton::Skeleton;

use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("malformed skeleton: {0}")]
    MalformedTree(String),
    #[error("expected {expected} joint rotations, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("feature encoding needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("feature width {got} does not match layout (expected {expected:?})")]
    FeatureWidth { expected: Option<usize>, got: usize },
    #[error("skeleton has no designated foot joints")]
    NoFeet,
    #[error("motion file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

/// Root translation and per-joint axis-angle rotations for every frame.
/// Body shape is the canonical zero vector and is not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub fps: u32,
    pub translations: Vec<Vec3>,
    pub rotations: Vec<Vec<Vec3>>,
}

impl MotionSequence {
    pub fn new(fps: u32, translations: Vec<Vec3>, rotations: Vec<Vec<Vec3>>) -> Result<Self, MotionError> {
        if fps == 0 {
            return Err(MotionError::Invalid("fps must be positive".into()));
        }
        if translations.is_empty() {
            return Err(MotionError::Invalid("motion has no frames".into()));
        }
        if translations.len() != rotations.len() {
            return Err(MotionError::Invalid(format!(
                "{} translations but {} rotation frames",
                translations.len(),
                rotations.len()
            )));
        }
        let j = rotations[0].len();
        if rotations.iter().any(|r| r.len() != j) {
            return Err(MotionError::Invalid("ragged rotation frames".into()));
        }
        let finite = translations.iter().flatten().all(|v| v.is_finite())
            && rotations.iter().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(MotionError::Invalid("non-finite motion values".into()));
        }
        Ok(Self {
            fps,
            translations,
            rotations,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.translations.len()
    }

    /// World joint positions of every frame (`N × J`).
    pub fn markers(&self, skeleton: &Skeleton) -> Result<Vec<Vec<Vec3>>, MotionError> {
        self.translations
            .iter()
            .zip(&self.rotations)
            .map(|(t, r)| skeleton.forward_kinematics(*t, r))
            .collect()
    }

    pub fn foot_contact_flags(
        &self,
        skeleton: &Skeleton,
        thresholds: ContactThresholds,
    ) -> Result<Vec<[bool; 2]>, MotionError> {
        foot_contact_flags(skeleton, &self.markers(skeleton)?, thresholds)
    }

    pub fn encode(&self, skeleton: &Skeleton, thresholds: ContactThresholds) -> Result<MotionClip, MotionError> {
        let (features, root) = encode_features(skeleton, self, thresholds)?;
        MotionClip::new(self.fps, features, root)
    }
}
