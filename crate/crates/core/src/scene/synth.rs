use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PointCloud, Scene, SceneError};
use crate::motion::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Flat,
    Stairs,
    BoxRoom,
    Corridor,
    DynamicWalker,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::Flat,
        SceneKind::Stairs,
        SceneKind::BoxRoom,
        SceneKind::Corridor,
        SceneKind::DynamicWalker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Flat => "flat",
            SceneKind::Stairs => "stairs",
            SceneKind::BoxRoom => "box_room",
            SceneKind::Corridor => "corridor",
            SceneKind::DynamicWalker => "dynamic_walker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// A straight flight of stairs climbing along +X, centred on y = 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StairParams {
    /// x of the first riser.
    pub start: f64,
    pub rise: f64,
    pub run: f64,
    pub steps: usize,
    pub width: f64,
    /// Length of the flat landing after the last step.
    pub landing: f64,
}

impl Default for StairParams {
    fn default() -> Self {
        Self {
            start: 1.2,
            rise: 0.15,
            run: 0.3,
            steps: 5,
            width: 1.6,
            landing: 1.5,
        }
    }
}

impl StairParams {
    /// Surface height at horizontal position `x` (on the stairs' footprint).
    pub fn height_at(&self, x: f64) -> f64 {
        if x < self.start {
            return 0.0;
        }
        let i = ((x - self.start) / self.run).floor() as usize + 1;
        i.min(self.steps) as f64 * self.rise
    }

    pub fn end(&self) -> f64 {
        self.start + self.steps as f64 * self.run + self.landing
    }
}

/// A cylinder-shaped person crossing the scene at constant velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkerParams {
    pub start: [f64; 2],
    /// Metres per second.
    pub velocity: [f64; 2],
    pub radius: f64,
    pub height: f64,
    pub fps: u32,
    pub frames: usize,
}

impl Default for WalkerParams {
    fn default() -> Self {
        Self {
            start: [3.0, -2.0],
            velocity: [0.0, 1.0],
            radius: 0.2,
            height: 1.7,
            fps: 10,
            frames: 40,
        }
    }
}

impl WalkerParams {
    pub fn position(&self, frame: usize) -> [f64; 2] {
        let t = frame as f64 / self.fps as f64;
        [self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
    /// Side of the square ground patch centred on the origin.
    pub extent: f64,
    /// Ground points per square metre.
    pub ground_density: f64,
    /// Point spacing on object surfaces.
    pub spacing: f64,
    /// Pillar centre (flat) or box centre (box_room).
    pub object: Option<[f64; 2]>,
    pub pillar: [f64; 2],
    pub box_size: Vec3,
    pub stairs: StairParams,
    pub corridor_half_width: f64,
    pub wall_height: f64,
    pub walker: WalkerParams,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            extent: 10.0,
            ground_density: 25.0,
            spacing: 0.1,
            object: (kind == SceneKind::BoxRoom).then_some([2.0, 0.0]),
            pillar: [0.15, 1.2],
            box_size: [0.5, 0.5, 0.45],
            stairs: StairParams::default(),
            corridor_half_width: 0.8,
            wall_height: 2.0,
            walker: WalkerParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SceneError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.extent, "extent")?;
        pos(self.ground_density, "ground_density")?;
        pos(self.spacing, "spacing")?;
        match self.kind {
            SceneKind::Flat => {
                if self.object.is_some() {
                    pos(self.pillar[0], "pillar radius")?;
                    pos(self.pillar[1], "pillar height")?;
                }
            }
            SceneKind::BoxRoom => {
                if self.object.is_none() {
                    return Err(SceneError::Invalid("box_room needs a box position".into()));
                }
                for v in self.box_size {
                    pos(v, "box size")?;
                }
            }
            SceneKind::Stairs => {
                let s = &self.stairs;
                pos(s.rise, "stair rise")?;
                pos(s.run, "stair run")?;
                pos(s.width, "stair width")?;
                if s.steps == 0 || s.landing < 0.0 || !s.start.is_finite() {
                    return Err(SceneError::Invalid("stairs need >= 1 step and a landing >= 0".into()));
                }
            }
            SceneKind::Corridor => {
                pos(self.corridor_half_width, "corridor half width")?;
                pos(self.wall_height, "wall height")?;
            }
            SceneKind::DynamicWalker => {
                let w = &self.walker;
                pos(w.radius, "walker radius")?;
                pos(w.height, "walker height")?;
                if w.fps == 0 || w.frames == 0 {
                    return Err(SceneError::Invalid("walker needs fps > 0 and frames > 0".into()));
                }
                if !w.start.iter().chain(&w.velocity).all(|v| v.is_finite()) {
                    return Err(SceneError::Invalid("walker path must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

struct Builder {
    rng: ChaCha8Rng,
    points: Vec<Vec3>,
    colors: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl Builder {
    fn push(&mut self, p: Vec3, base: Vec3, n: Vec3) {
        let c = base.map(|v| (v + self.rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
        self.points.push(p);
        self.colors.push(c);
        self.normals.push(n);
    }

    fn finish(self) -> Result<PointCloud, SceneError> {
        PointCloud::new(self.points, self.colors, self.normals)
    }
}

/// Cell-centred samples covering `[a, b)` at roughly `step` spacing.
fn grid(a: f64, b: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((b - a) / step).round().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..n).map(move |i| a + (i as f64 + 0.5) * h)
}

const GROUND: Vec3 = [0.55, 0.55, 0.5];
const CARPET: Vec3 = [0.6, 0.45, 0.35];
const TILE: Vec3 = [0.5, 0.5, 0.58];
const PILLAR: Vec3 = [0.8, 0.2, 0.2];
const BOX: Vec3 = [0.2, 0.35, 0.8];
const WOOD: Vec3 = [0.65, 0.5, 0.3];
const WALL: Vec3 = [0.85, 0.85, 0.8];
const PERSON: Vec3 = [0.2, 0.7, 0.3];

fn cylinder(b: &mut Builder, centre: [f64; 2], radius: f64, height: f64, spacing: f64, color: Vec3) {
    let n_theta = ((TAU * radius / spacing).round() as usize).max(6);
    for z in grid(0.0, height, spacing) {
        for k in 0..n_theta {
            let a = TAU * k as f64 / n_theta as f64;
            let (s, c) = a.sin_cos();
            b.push([centre[0] + radius * c, centre[1] + radius * s, z], color, [c, s, 0.0]);
        }
    }
    b.push([centre[0], centre[1], height], color, [0.0, 0.0, 1.0]);
}

/// Procedural scene in the motion's start frame: the person starts at the
/// origin facing +X with the floor at z = 0.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        points: Vec::new(),
        colors: Vec::new(),
        normals: Vec::new(),
    };
    let half = spec.extent / 2.0;
    let sp = spec.spacing;
    let up = [0.0, 0.0, 1.0];

    // Footprint excluded from the floor so no floor point sits inside a solid.
    let stairs = spec.stairs;
    let occupied = |x: f64, y: f64| -> bool {
        match (spec.kind, spec.object) {
            (SceneKind::Stairs, _) => x >= stairs.start && x < stairs.end() && y.abs() <= stairs.width / 2.0,
            (SceneKind::BoxRoom, Some(o)) => {
                (x - o[0]).abs() <= spec.box_size[0] / 2.0 && (y - o[1]).abs() <= spec.box_size[1] / 2.0
            }
            (SceneKind::Flat, Some(o)) => (x - o[0]).hypot(y - o[1]) <= spec.pillar[0],
            _ => false,
        }
    };
    let floor = match spec.kind {
        SceneKind::BoxRoom => CARPET,
        SceneKind::Corridor => TILE,
        _ => GROUND,
    };
    let per_side = (spec.extent * spec.ground_density.sqrt()).round().max(1.0);
    for y in grid(-half, half, spec.extent / per_side) {
        for x in grid(-half, half, spec.extent / per_side) {
            if !occupied(x, y) {
                b.push([x, y, 0.0], floor, up);
            }
        }
    }

    match spec.kind {
        SceneKind::Flat => {
            if let Some(o) = spec.object {
                cylinder(&mut b, o, spec.pillar[0], spec.pillar[1], sp, PILLAR);
            }
        }
        SceneKind::BoxRoom => {
            let o = spec.object.expect("validated");
            let [sx, sy, sz] = spec.box_size;
            let (x0, x1, y0, y1) = (o[0] - sx / 2.0, o[0] + sx / 2.0, o[1] - sy / 2.0, o[1] + sy / 2.0);
            for y in grid(y0, y1, sp) {
                for x in grid(x0, x1, sp) {
                    b.push([x, y, sz], BOX, up);
                }
            }
            for z in grid(0.0, sz, sp) {
                for y in grid(y0, y1, sp) {
                    b.push([x0, y, z], BOX, [-1.0, 0.0, 0.0]);
                    b.push([x1, y, z], BOX, [1.0, 0.0, 0.0]);
                }
                for x in grid(x0, x1, sp) {
                    b.push([x, y0, z], BOX, [0.0, -1.0, 0.0]);
                    b.push([x, y1, z], BOX, [0.0, 1.0, 0.0]);
                }
            }
        }
        SceneKind::Stairs => {
            let s = stairs;
            let w = s.width / 2.0;
            for i in 0..s.steps {
                let x0 = s.start + i as f64 * s.run;
                let x1 = if i + 1 == s.steps { s.end() } else { x0 + s.run };
                let top = (i + 1) as f64 * s.rise;
                for y in grid(-w, w, sp) {
                    for x in grid(x0, x1, sp) {
                        b.push([x, y, top], WOOD, up);
                    }
                    // Riser samples stay strictly inside the vertical span
                    // so the tread owns the edge.
                    for z in grid(i as f64 * s.rise, top, sp) {
                        b.push([x0, y, z], WOOD, [-1.0, 0.0, 0.0]);
                    }
                }
            }
        }
        SceneKind::Corridor => {
            let w = spec.corridor_half_width;
            for z in grid(0.0, spec.wall_height, sp) {
                for x in grid(-half, half, sp) {
                    b.push([x, w, z], WALL, [0.0, -1.0, 0.0]);
                    b.push([x, -w, z], WALL, [0.0, 1.0, 0.0]);
                }
            }
        }
        SceneKind::DynamicWalker => {}
    }
    let map = b.finish()?;

    let mut frames = Vec::new();
    if spec.kind == SceneKind::DynamicWalker {
        let w = spec.walker;
        for f in 0..w.frames {
            let mut fb = Builder {
                rng: ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9 + f as u64)),
                points: Vec::new(),
                colors: Vec::new(),
                normals: Vec::new(),
            };
            cylinder(&mut fb, w.position(f), w.radius, w.height, sp, PERSON);
            frames.push(fb.finish()?);
        }
    }
    Ok(Scene { map, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_grid_count() {
        let mut spec = SceneSpec::new(SceneKind::Flat, 1);
        spec.ground_density = 100.0;
        let s = synth_scene(&spec).unwrap();
        assert_eq!(s.map.len(), 10_000);
        assert!(s.map.points().iter().all(|p| p[2] == 0.0));
        assert!(s.map.normals().iter().all(|n| *n == [0.0, 0.0, 1.0]));
        assert!(!s.is_dynamic());
    }

    #[test]
    fn stairs_reach_expected_height() {
        let s = synth_scene(&SceneSpec::new(SceneKind::Stairs, 2)).unwrap();
        let top = s.map.points().iter().map(|p| p[2]).fold(f64::MIN, f64::max);
        assert!((top - 0.75).abs() < 1e-12);
        let spec = StairParams::default();
        assert_eq!(spec.height_at(0.0), 0.0);
        assert!((spec.height_at(1.25) - 0.15).abs() < 1e-12);
        assert!((spec.height_at(3.9) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SceneSpec::new(SceneKind::Stairs, 0);
        spec.stairs.rise = -1.0;
        assert!(synth_scene(&spec).is_err());
        let mut spec = SceneSpec::new(SceneKind::BoxRoom, 0);
        spec.object = None;
        assert!(synth_scene(&spec).is_err());
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::new(SceneKind::Corridor, 5);
        assert_eq!(synth_scene(&spec).unwrap(), synth_scene(&spec).unwrap());
    }
}
