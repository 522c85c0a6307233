//! Scene-consistent scripted motions for the synthetic corpus.
//!
//! Every script starts at the origin facing +X. Legs are single pendulums
//! hanging 0.9 m from the hips, and the pelvis height is chosen per frame so
//! the lower foot rests exactly on the walkable surface under it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::motion::{MotionError, MotionSequence, Vec3};
use crate::scene::{SceneKind, SceneSpec};
use crate::text::{Action, Direction, MotionScript};

const LEG: f64 = 0.9;
const HIP_Y: f64 = 0.1;
/// Skeleton joint indices of `Skeleton::default_chain`.
const SPINE: usize = 1;
const LEFT_HIP: usize = 3;
const RIGHT_HIP: usize = 5;
const JOINTS: usize = 8;

/// A (scene kind, script) pair the generator knows how to realise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Combo {
    pub kind: SceneKind,
    pub script: MotionScript,
}

const fn combo(kind: SceneKind, action: Action, direction: Option<Direction>) -> Combo {
    Combo {
        kind,
        script: MotionScript { action, direction },
    }
}

pub const COMBOS: [Combo; 12] = [
    combo(SceneKind::Flat, Action::WalkTo, Some(Direction::Left)),
    combo(SceneKind::Flat, Action::WalkTo, Some(Direction::Right)),
    combo(SceneKind::Flat, Action::WalkTo, Some(Direction::Ahead)),
    combo(SceneKind::Flat, Action::Circle, Some(Direction::Left)),
    combo(SceneKind::Flat, Action::Circle, Some(Direction::Right)),
    combo(SceneKind::Flat, Action::Wave, None),
    combo(SceneKind::Stairs, Action::ClimbStairs, None),
    combo(SceneKind::BoxRoom, Action::SitOn, None),
    combo(SceneKind::BoxRoom, Action::WalkTo, Some(Direction::Left)),
    combo(SceneKind::Corridor, Action::WalkTo, Some(Direction::Ahead)),
    combo(SceneKind::DynamicWalker, Action::WalkTo, Some(Direction::Left)),
    combo(SceneKind::DynamicWalker, Action::Wave, None),
];

fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> f64 {
    rng.random_range(-amount..=amount)
}

/// Scene layout for a combo with the referent object placed to match the
/// script's direction.
pub fn scene_spec_for(c: Combo, seed: u64) -> SceneSpec {
    let mut spec = SceneSpec::new(c.kind, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7e);
    let mut at = |x: f64, y: f64| Some([x + jitter(&mut rng, 0.2), y + jitter(&mut rng, 0.2)]);
    spec.object = match (c.kind, c.script.action, c.script.direction) {
        (SceneKind::Flat, Action::WalkTo, Some(Direction::Left)) => at(2.6, 1.6),
        (SceneKind::Flat, Action::WalkTo, Some(Direction::Right)) => at(2.6, -1.6),
        (SceneKind::Flat, Action::WalkTo, _) => at(3.2, 0.0),
        (SceneKind::BoxRoom, Action::WalkTo, _) => at(2.4, 1.6),
        (SceneKind::BoxRoom, _, _) => Some([2.0 + jitter(&mut rng, 0.1), 0.0]),
        _ => spec.object,
    };
    spec
}

#[derive(Clone, Copy, Debug, Default)]
struct Pose {
    xy: [f64; 2],
    yaw: f64,
    swing: [f64; 2],
    spine: f64,
    /// Forces the pelvis height instead of resting the feet on the surface.
    height: Option<f64>,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

/// Walks from the origin to `target` along a quadratic curve whose initial
/// tangent is +X, easing in and out over `frames`.
fn curve_walk(target: [f64; 2], frames: usize) -> Vec<Pose> {
    let ctrl = [0.5 * target[0].max(0.6), 0.0];
    (0..frames)
        .map(|f| {
            let u = smoothstep(f as f64 / (frames.max(2) - 1) as f64);
            let b = |i: usize| 2.0 * (1.0 - u) * u * ctrl[i] + u * u * target[i];
            let d = |i: usize| 2.0 * (1.0 - u) * ctrl[i] + 2.0 * u * (target[i] - ctrl[i]);
            Pose {
                xy: [b(0), b(1)],
                yaw: d(1).atan2(d(0)),
                ..Pose::default()
            }
        })
        .collect()
}

fn stop_before(target: [f64; 2], gap: f64) -> [f64; 2] {
    let r = target[0].hypot(target[1]);
    let s = (r - gap).max(0.0) / r;
    [target[0] * s, target[1] * s]
}

/// Fills in leg swing from the distance covered, so legs stop when the body
/// stops.
fn add_gait(poses: &mut [Pose], amplitude: f64) {
    let stride = 2.0 * LEG * amplitude.sin();
    let mut phase = 0.0;
    for i in 0..poses.len() {
        if i > 0 {
            let (a, b) = (poses[i - 1].xy, poses[i].xy);
            phase += PI * (b[0] - a[0]).hypot(b[1] - a[1]) / stride;
        }
        let s = amplitude * phase.sin();
        poses[i].swing = [s, -s];
    }
}

/// Height of the walkable surface below a horizontal position.
fn surface(spec: &SceneSpec, xy: [f64; 2]) -> f64 {
    match spec.kind {
        SceneKind::Stairs if xy[1].abs() <= spec.stairs.width / 2.0 && xy[0] <= spec.stairs.end() => {
            spec.stairs.height_at(xy[0])
        }
        _ => 0.0,
    }
}

fn foot_xy(p: &Pose, side: usize) -> [f64; 2] {
    let fwd = -LEG * p.swing[side].sin();
    let lat = if side == 0 { HIP_Y } else { -HIP_Y };
    let (s, c) = p.yaw.sin_cos();
    [p.xy[0] + c * fwd - s * lat, p.xy[1] + s * fwd + c * lat]
}

fn to_sequence(spec: &SceneSpec, poses: &[Pose], fps: u32) -> Result<MotionSequence, MotionError> {
    let mut translations = Vec::with_capacity(poses.len());
    let mut rotations = Vec::with_capacity(poses.len());
    for p in poses {
        let z = p.height.unwrap_or_else(|| {
            (0..2)
                .map(|side| surface(spec, foot_xy(p, side)) + LEG * p.swing[side].cos())
                .fold(f64::NEG_INFINITY, f64::max)
        });
        translations.push([p.xy[0], p.xy[1], z]);
        let mut theta: Vec<Vec3> = vec![[0.0; 3]; JOINTS];
        theta[0] = [0.0, 0.0, p.yaw];
        theta[SPINE] = [p.spine, 0.0, 0.0];
        theta[LEFT_HIP] = [0.0, p.swing[0], 0.0];
        theta[RIGHT_HIP] = [0.0, p.swing[1], 0.0];
        rotations.push(theta);
    }
    MotionSequence::new(fps, translations, rotations)
}

/// The motion a combo prescribes in the scene laid out by `spec`. `seed`
/// varies pace, gait and end points.
pub fn scripted_motion(
    c: Combo,
    spec: &SceneSpec,
    seed: u64,
    frames: usize,
    fps: u32,
) -> Result<MotionSequence, MotionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a17);
    let amplitude = (20.0 + jitter(&mut rng, 2.0)).to_radians();
    let dt = 1.0 / f64::from(fps);
    let object = spec.object.unwrap_or([3.0, 0.0]);
    let mut poses = match (c.script.action, c.kind) {
        (Action::WalkTo, SceneKind::Corridor) => {
            let len = 3.5 + jitter(&mut rng, 0.3);
            curve_walk([len, 0.0], frames)
        }
        (Action::WalkTo, SceneKind::DynamicWalker) => {
            let end = spec.walker.position(frames.saturating_sub(1));
            let target = [end[0] - 0.6 + jitter(&mut rng, 0.15), end[1] - 0.6 + jitter(&mut rng, 0.15)];
            curve_walk(target, frames)
        }
        (Action::WalkTo, _) => {
            let gap = 0.6 + jitter(&mut rng, 0.05);
            curve_walk(stop_before(object, gap), frames)
        }
        (Action::ClimbStairs, _) => {
            let len = spec.stairs.start + spec.stairs.steps as f64 * spec.stairs.run + 0.6 + jitter(&mut rng, 0.2);
            curve_walk([len, 0.0], frames)
        }
        (Action::Circle, _) => {
            let radius = 1.0 + jitter(&mut rng, 0.1);
            let speed = 1.0 + jitter(&mut rng, 0.1);
            let sign = if c.script.direction == Some(Direction::Right) { -1.0 } else { 1.0 };
            (0..frames)
                .map(|f| {
                    let ang = speed * f as f64 * dt / radius;
                    Pose {
                        xy: [radius * ang.sin(), sign * radius * (1.0 - ang.cos())],
                        yaw: sign * ang,
                        ..Pose::default()
                    }
                })
                .collect()
        }
        (Action::Wave, _) => {
            let freq = 1.0 + jitter(&mut rng, 0.2);
            let amp = 0.35 + jitter(&mut rng, 0.05);
            (0..frames)
                .map(|f| Pose {
                    spine: amp * (2.0 * PI * freq * f as f64 * dt).sin(),
                    ..Pose::default()
                })
                .collect()
        }
        (Action::SitOn, _) => sit_on(object, spec.box_size, frames, &mut rng),
    };
    if !matches!(c.script.action, Action::Wave | Action::SitOn) {
        add_gait(&mut poses, amplitude);
    }
    to_sequence(spec, &poses, fps)
}

/// Approach, turn round, and lower onto the box top with the feet kept on
/// the floor in front of it.
fn sit_on(object: [f64; 2], box_size: Vec3, frames: usize, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let front = object[0] - box_size[0] / 2.0;
    let stand = front - 0.45 + jitter(rng, 0.05);
    let seat_x = object[0] - 0.05;
    let knee = -(56.0f64 + jitter(rng, 2.0)).to_radians();
    let walk_end = frames / 2;
    let turn_end = walk_end + frames / 5;
    let mut poses = curve_walk([stand, object[1]], walk_end);
    add_gait(&mut poses, 20f64.to_radians());
    let last = poses.last().copied().unwrap_or_default();
    for f in walk_end..frames {
        let mut p = Pose {
            xy: last.xy,
            ..Pose::default()
        };
        if f < turn_end {
            p.yaw = PI * smoothstep((f - walk_end + 1) as f64 / (turn_end - walk_end) as f64);
        } else {
            let u = smoothstep((f - turn_end + 1) as f64 / (frames - turn_end) as f64);
            p.yaw = PI;
            p.xy[0] = lerp(last.xy[0], seat_x, u);
            let s = lerp(0.0, knee, u);
            p.swing = [s, s];
            p.height = Some(LEG * s.cos());
        }
        poses.push(p);
    }
    poses
}
