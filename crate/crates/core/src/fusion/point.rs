use super::FusionError;
use crate::motion::Vec3;
use crate::scene::{farthest_point_sample, VoxelIndex};
use crate::tensor::nn::{EncoderLayer, LayerNorm, Linear, ParamBuilder};
use crate::tensor::{Tape, Tensor, Var};

/// Neighbourhood structure of one scene cloud, computed once and reused by
/// every forward pass over that cloud.
///
/// Points are put into a canonical (lexicographic) order first, so every
/// quantity derived from the geometry is independent of the input order.
#[derive(Clone, Debug)]
pub struct SceneGeometry {
    /// `M × 6` features in canonical order.
    pub features: Tensor,
    /// `perm[c]` is the input row placed at canonical position `c`.
    pub perm: Vec<usize>,
    /// Inverse of `perm`.
    pub inv_perm: Vec<usize>,
    pub k: usize,
    /// `M × k` neighbour rows, self first.
    pub neighbors: Vec<usize>,
    /// Canonical rows of the global-attention subset.
    pub subset: Vec<usize>,
    /// For each point, the position within `subset` of its nearest subset point.
    pub assign: Vec<usize>,
}

impl SceneGeometry {
    pub fn new(features: &Tensor, k: usize, subset_size: usize) -> Result<Self, FusionError> {
        let m = features.rows();
        if m == 0 {
            return Err(FusionError::EmptyScene);
        }
        if features.cols() != 6 {
            return Err(FusionError::Shape(format!("point features need 6 columns, got {}", features.cols())));
        }
        if !features.is_finite() {
            return Err(FusionError::Shape("non-finite point features".into()));
        }
        let mut perm: Vec<usize> = (0..m).collect();
        perm.sort_by(|&a, &b| {
            let (ra, rb) = (features.row_slice(a), features.row_slice(b));
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut inv_perm = vec![0; m];
        for (c, &i) in perm.iter().enumerate() {
            inv_perm[i] = c;
        }
        let mut data = Vec::with_capacity(m * 6);
        for &i in &perm {
            data.extend_from_slice(features.row_slice(i));
        }
        let features = Tensor::matrix(m, 6, data);
        let xyz: Vec<Vec3> = (0..m)
            .map(|r| {
                let row = features.row_slice(r);
                [row[0], row[1], row[2]]
            })
            .collect();

        let k = k.clamp(1, m);
        let index = VoxelIndex::new(&xyz);
        let mut neighbors = Vec::with_capacity(m * k);
        for (i, p) in xyz.iter().enumerate() {
            let mut nn: Vec<usize> = index.knn(*p, k).into_iter().map(|(_, j)| j).collect();
            // Duplicate points can push the point itself out of first place.
            if let Some(pos) = nn.iter().position(|&j| j == i) {
                nn[..=pos].rotate_right(1);
            } else {
                nn.pop();
                nn.insert(0, i);
            }
            neighbors.extend(nn);
        }

        let subset = farthest_point_sample(&xyz, subset_size.max(1));
        let sub_pts: Vec<Vec3> = subset.iter().map(|&i| xyz[i]).collect();
        let sub_index = VoxelIndex::new(&sub_pts);
        let assign = xyz
            .iter()
            .map(|p| sub_index.nearest(*p).map(|(j, _)| j).unwrap_or(0))
            .collect();
        Ok(Self {
            features,
            perm,
            inv_perm,
            k,
            neighbors,
            subset,
            assign,
        })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Simplified point attention encoder: shared pointwise MLP, attention over
/// each point's k nearest neighbours, then one global self-attention layer
/// over a farthest-point subset whose outputs flow back to every point
/// through its nearest subset member.
#[derive(Clone, Debug)]
pub struct PointEncoder {
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln_local: LayerNorm,
    pub global: EncoderLayer,
    pub ln_out: LayerNorm,
    pub d: usize,
}

impl PointEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize, heads: usize) -> Self {
        let mut pb = pb.sub(name);
        Self {
            mlp_in: Linear::new(&mut pb, "mlp_in", 6, d),
            mlp_out: Linear::new(&mut pb, "mlp_out", d, d),
            q: Linear::new(&mut pb, "local_q", d, d),
            k: Linear::new(&mut pb, "local_k", d, d),
            v: Linear::new(&mut pb, "local_v", d, d),
            o: Linear::new(&mut pb, "local_o", d, d),
            ln_local: LayerNorm::new(&mut pb, "ln_local", d),
            global: EncoderLayer::new(&mut pb, "global", d, 2 * d, heads),
            ln_out: LayerNorm::new(&mut pb, "ln_out", d),
            d,
        }
    }

    /// Per-point features in canonical order, `M × d`.
    pub fn forward_canonical(&self, t: &mut Tape, geom: &SceneGeometry) -> Var {
        let f = t.constant(geom.features.clone());
        let h = self.mlp_in.forward(t, f);
        let h = t.gelu(h);
        let h0 = self.mlp_out.forward(t, h);

        let q = self.q.forward(t, h0);
        let k = self.k.forward(t, h0);
        let v = self.v.forward(t, h0);
        let a = t.neighbor_attention(q, k, v, &geom.neighbors, geom.k);
        let a = self.o.forward(t, a);
        let h1 = t.add(h0, a);
        let h1 = self.ln_local.forward(t, h1);

        let s = t.gather_rows(h1, &geom.subset);
        let g = self.global.forward(t, s);
        let back = t.gather_rows(g, &geom.assign);
        let out = t.add(h1, back);
        self.ln_out.forward(t, out)
    }

    /// Per-point features in the caller's row order.
    pub fn forward(&self, t: &mut Tape, geom: &SceneGeometry) -> Var {
        let y = self.forward_canonical(t, geom);
        t.gather_rows(y, &geom.inv_perm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_self_first_neighbours() {
        let f = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.5],
            vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5],
            vec![0.0, 1.0, 0.0, 0.5, 0.5, 0.5],
            vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5],
        ]);
        let g = SceneGeometry::new(&f, 3, 2).unwrap();
        assert_eq!(g.perm, vec![1, 3, 2, 0]);
        for (c, &i) in g.perm.iter().enumerate() {
            assert_eq!(g.inv_perm[i], c);
        }
        for i in 0..4 {
            assert_eq!(g.neighbors[i * 3], i);
        }
        assert_eq!(g.subset.len(), 2);
        assert_eq!(g.assign.len(), 4);
    }

    #[test]
    fn rejects_empty_and_bad_width() {
        assert!(matches!(
            SceneGeometry::new(&Tensor::matrix(0, 6, vec![]), 16, 256),
            Err(FusionError::EmptyScene)
        ));
        assert!(SceneGeometry::new(&Tensor::matrix(1, 3, vec![0.0; 3]), 16, 256).is_err());
    }
}
