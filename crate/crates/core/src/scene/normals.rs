use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::VoxelIndex;
use crate::motion::Vec3;

pub const DEFAULT_K: usize = 16;

/// Unit normals from a plane fit to each point's `k` nearest neighbours
/// (itself included). Near-horizontal surfaces are oriented up; the rest
/// point away from the cloud centroid.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Vec<Vec3> {
    if points.len() < 3 {
        return vec![[0.0, 0.0, 1.0]; points.len()];
    }
    let index = VoxelIndex::new(points);
    let n = points.len() as f64;
    let centroid = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p))
        / n;
    points
        .iter()
        .map(|p| {
            let nbrs = index.knn(*p, k.max(3));
            let m = nbrs.len() as f64;
            let mean = nbrs
                .iter()
                .fold(Vector3::zeros(), |acc, &(_, i)| acc + Vector3::from(points[i]))
                / m;
            let mut cov = Matrix3::zeros();
            for &(_, i) in &nbrs {
                let d = Vector3::from(points[i]) - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov / m);
            let mut smallest = 0;
            for j in 1..3 {
                if eig.eigenvalues[j] < eig.eigenvalues[smallest] {
                    smallest = j;
                }
            }
            let mut v: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned();
            let len = v.norm();
            if !(len > 0.0) || !len.is_finite() {
                return [0.0, 0.0, 1.0];
            }
            v /= len;
            let flip = if v.z.abs() > 0.5 {
                v.z < 0.0
            } else {
                v.dot(&(Vector3::from(*p) - centroid)) < 0.0
            };
            if flip {
                v = -v;
            }
            [v.x, v.y, v.z]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals_point_up() {
        let pts: Vec<Vec3> = (0..100)
            .map(|i| [(i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.3])
            .collect();
        for n in estimate_normals(&pts, 16) {
            assert!((n[2] - 1.0).abs() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn wall_normals_point_outward() {
        // Two vertical walls at x = +-1; normals should face away from x = 0.
        let mut pts = Vec::new();
        for s in [-1.0, 1.0] {
            for i in 0..10 {
                for j in 0..10 {
                    pts.push([s, i as f64 * 0.1, j as f64 * 0.1]);
                }
            }
        }
        let normals = estimate_normals(&pts, 16);
        for (p, n) in pts.iter().zip(&normals) {
            assert!((n[0] - p[0]).abs() < 1e-9, "{p:?} {n:?}");
        }
    }
}
