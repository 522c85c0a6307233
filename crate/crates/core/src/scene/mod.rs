//! Scene point clouds: spatial queries, cropping, downsampling, normal
//! estimation, PLY files and procedural scene synthesis.

mod index;
mod normals;
mod ops;
mod ply;
mod synth;

pub use index::{VoxelIndex, CELL};
pub use normals::estimate_normals;
pub use ops::{crop_and_normalize, downsample, farthest_point_sample, random_subset, Downsample};
pub use ply::{read_ply, write_ply, ply_string, parse_ply};
pub use synth::{synth_scene, SceneKind, SceneSpec, StairParams, WalkerParams};

use std::sync::OnceLock;

use thiserror::Error;

use crate::motion::Vec3;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("crop around {anchor:?} with radius {radius} contains no points")]
    EmptyCrop { anchor: Vec3, radius: f64 },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("ply line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

/// Result of a nearest-point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
    /// `dot(query - p, n)` with `p`, `n` the nearest point and its normal.
    pub signed: f64,
}

/// Oriented, coloured points with a lazily built voxel index.
#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    colors: Vec<Vec3>,
    normals: Vec<Vec3>,
    index: OnceLock<VoxelIndex>,
}

impl PartialEq for PointCloud {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.colors == other.colors && self.normals == other.normals
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, colors: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self, SceneError> {
        let n = points.len();
        if colors.len() != n || normals.len() != n {
            return Err(SceneError::Invalid(format!(
                "{n} points, {} colors, {} normals",
                colors.len(),
                normals.len()
            )));
        }
        if !points.iter().flatten().all(|v| v.is_finite()) {
            return Err(SceneError::Invalid("non-finite point".into()));
        }
        if !colors.iter().flatten().all(|v| (0.0..=1.0).contains(v)) {
            return Err(SceneError::Invalid("colors must lie in [0, 1]".into()));
        }
        if let Some(i) = normals
            .iter()
            .position(|v| (crate::motion::skeleton::norm(*v) - 1.0).abs() > 1e-4)
        {
            return Err(SceneError::Invalid(format!("normal {i} is not unit length")));
        }
        Ok(Self {
            points,
            colors,
            normals,
            index: OnceLock::new(),
        })
    }

    /// Builds a cloud whose normals come from local plane fits.
    pub fn with_estimated_normals(points: Vec<Vec3>, colors: Vec<Vec3>) -> Result<Self, SceneError> {
        let normals = estimate_normals(&points, normals::DEFAULT_K);
        Self::new(points, colors, normals)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> &[Vec3] {
        &self.colors
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn index(&self) -> &VoxelIndex {
        self.index.get_or_init(|| VoxelIndex::new(&self.points))
    }

    pub fn nearest(&self, q: Vec3) -> Result<Nearest, SceneError> {
        if self.is_empty() {
            return Err(SceneError::EmptyCloud);
        }
        let (i, d2) = self
            .index()
            .nearest(q)
            .ok_or_else(|| SceneError::Invalid("non-finite query".into()))?;
        Ok(self.describe(q, i, d2))
    }

    fn describe(&self, q: Vec3, i: usize, d2: f64) -> Nearest {
        let p = self.points[i];
        let n = self.normals[i];
        Nearest {
            index: i,
            distance: d2.sqrt(),
            signed: (q[0] - p[0]) * n[0] + (q[1] - p[1]) * n[1] + (q[2] - p[2]) * n[2],
        }
    }

    /// Indices of the `k` nearest points, ascending by distance then index.
    pub fn knn(&self, q: Vec3, k: usize) -> Vec<usize> {
        self.index().knn(q, k).into_iter().map(|(_, i)| i).collect()
    }

    /// `M × 6` matrix of `(x, y, z, r, g, b)` rows.
    pub fn features(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * 6);
        for (p, c) in self.points.iter().zip(&self.colors) {
            data.extend_from_slice(p);
            data.extend_from_slice(c);
        }
        Tensor::matrix(self.len(), 6, data)
    }

    pub fn subset(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
            index: OnceLock::new(),
        }
    }

    pub fn translated(&self, v: Vec3) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]])
                .collect(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
            index: OnceLock::new(),
        }
    }

    pub fn concat(parts: &[&PointCloud]) -> PointCloud {
        let mut out = PointCloud::default();
        for p in parts {
            out.points.extend_from_slice(&p.points);
            out.colors.extend_from_slice(&p.colors);
            out.normals.extend_from_slice(&p.normals);
        }
        out
    }
}

/// A static map plus, for dynamic scenes, one interactor cloud per motion
/// frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub map: PointCloud,
    pub frames: Vec<PointCloud>,
}

/// Frames whose interactor points are merged into the encoder input.
pub const DYNAMIC_SNAPSHOTS: [usize; 4] = [0, 10, 20, 30];

impl Scene {
    pub fn new_static(map: PointCloud) -> Self {
        Self {
            map,
            frames: Vec::new(),
        }
    }

    pub fn is_dynamic(&self) -> bool {
        !self.frames.is_empty()
    }

    /// Nearest point among the static map and the interactor at `frame`
    /// (clamped to the last available frame). Interactor indices follow the
    /// map's.
    pub fn nearest_at(&self, frame: usize, q: Vec3) -> Result<Nearest, SceneError> {
        let Some(last) = self.frames.len().checked_sub(1) else {
            return self.map.nearest(q);
        };
        let dynamic = &self.frames[frame.min(last)];
        let a = (!self.map.is_empty()).then(|| self.map.nearest(q)).transpose()?;
        let b = (!dynamic.is_empty()).then(|| dynamic.nearest(q)).transpose()?;
        match (a, b) {
            (None, None) => Err(SceneError::EmptyCloud),
            (Some(a), None) => Ok(a),
            (None, Some(mut b)) => {
                b.index += self.map.len();
                Ok(b)
            }
            (Some(a), Some(mut b)) => {
                let da = dist_sq(&self.map, a.index, q);
                let db = dist_sq(dynamic, b.index, q);
                if db < da {
                    b.index += self.map.len();
                    Ok(b)
                } else {
                    Ok(a)
                }
            }
        }
    }

    /// Cloud fed to the scene encoder: the map plus interactor snapshots,
    /// downsampled to `n_p` points.
    pub fn encoder_cloud(&self, n_p: usize, method: Downsample, seed: u64) -> Result<PointCloud, SceneError> {
        let mut parts = vec![&self.map];
        for &f in DYNAMIC_SNAPSHOTS.iter() {
            if let Some(c) = self.frames.get(f) {
                parts.push(c);
            }
        }
        let merged = PointCloud::concat(&parts);
        downsample(&merged, n_p, method, seed)
    }
}

fn dist_sq(c: &PointCloud, i: usize, q: Vec3) -> f64 {
    index::dist2(q, c.points()[i])
}
