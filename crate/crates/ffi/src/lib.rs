//! C ABI over `stmd`: load a trained checkpoint, sample motions for a scene
//! and caption, read and write motion and scene files, and score motions.
//!
//! Every fallible call returns an [`StmdStatus`]; on failure the message is
//! available from [`stmd_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use stmd::diffusion::{Checkpoint, DiffusionError};
use stmd::metrics::{frechet_distance, gaussian_moments, non_collision, MetricsError};
use stmd::motion::{MotionClip, MotionError};
use stmd::pipeline::{sample_seed, LoadedModel, PipelineError, RunConfig};
use stmd::scene::{read_ply, write_ply, PointCloud, Scene, SceneError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StmdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Runtime = 5,
    Panic = 6,
}

/// A trained model ready to sample.
pub struct StmdSampler {
    model: LoadedModel,
}

/// One motion clip in the hml-lite-v1 layout.
pub struct StmdMotion {
    clip: MotionClip,
}

/// A static scene point cloud.
pub struct StmdScene {
    scene: Scene,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(StmdStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(StmdStatus::InvalidArgument, msg.into())
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        let code = match e {
            SceneError::Io(_) => StmdStatus::Io,
            SceneError::Format { .. } => StmdStatus::Format,
            _ => StmdStatus::InvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

impl From<MotionError> for Failure {
    fn from(e: MotionError) -> Self {
        let code = match e {
            MotionError::Io(_) => StmdStatus::Io,
            MotionError::Format(_) => StmdStatus::Format,
            _ => StmdStatus::InvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::NotPsd(_) | MetricsError::Degenerate(_) => StmdStatus::Runtime,
            _ => StmdStatus::InvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

impl From<DiffusionError> for Failure {
    fn from(e: DiffusionError) -> Self {
        let code = match e {
            DiffusionError::Io(_) => StmdStatus::Io,
            DiffusionError::Checkpoint(_) => StmdStatus::Format,
            DiffusionError::Config(_) => StmdStatus::InvalidArgument,
            _ => StmdStatus::Runtime,
        };
        Failure(code, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io { .. } => Failure(StmdStatus::Io, e.to_string()),
            PipelineError::Scene(s) => s.into(),
            PipelineError::Motion(m) => m.into(),
            PipelineError::Diffusion(d) => d.into(),
            e if e.is_validation() => Failure(StmdStatus::InvalidArgument, e.to_string()),
            e => Failure(StmdStatus::Runtime, e.to_string()),
        }
    }
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StmdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StmdStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            StmdStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(StmdStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid("string argument is not UTF-8"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    str_arg(p).map(PathBuf::from)
}

unsafe fn obj<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = v;
    Ok(())
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stmd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stmd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a checkpoint. `config_path` may be null for the default
/// configuration; otherwise it must match the one used for training.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmd_sampler_open(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut StmdSampler,
) -> StmdStatus {
    guard(|| {
        let config = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(&path_arg(config_path)?)?
        };
        let ckpt = Checkpoint::load(&path_arg(checkpoint_path)?)?;
        let model = LoadedModel::from_checkpoint(&config, &ckpt)?;
        put(out, StmdSampler { model })
    })
}

/// Draws sample `index` for a scene and caption. The same
/// `(seed, index)` gives the same motion as `stmd sample`.
///
/// # Safety
/// Handles must come from this library; `caption` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stmd_sampler_sample(
    sampler: *const StmdSampler,
    scene: *const StmdScene,
    caption: *const c_char,
    seed: u64,
    index: u64,
    out: *mut *mut StmdMotion,
) -> StmdStatus {
    guard(|| {
        let m = &obj(sampler)?.model;
        let scene = &obj(scene)?.scene;
        let caption = str_arg(caption)?;
        if caption.trim().is_empty() {
            return Err(Failure::invalid("caption is empty"));
        }
        let z = m.condition_value(&m.condition(scene, caption)?)?;
        let clip = m.sample_clip(&z, sample_seed(seed, index))?;
        put(out, StmdMotion { clip })
    })
}

/// Frames produced by every sample of this model.
///
/// # Safety
/// `sampler` must come from [`stmd_sampler_open`].
#[no_mangle]
pub unsafe extern "C" fn stmd_sampler_num_frames(sampler: *const StmdSampler) -> usize {
    sampler.as_ref().map_or(0, |s| s.model.config.data.frames)
}

/// # Safety
/// `sampler` must come from [`stmd_sampler_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stmd_sampler_free(sampler: *mut StmdSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Reads an ASCII PLY scene.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmd_scene_read_ply(path: *const c_char, out: *mut *mut StmdScene) -> StmdStatus {
    guard(|| {
        let map = read_ply(&path_arg(path)?)?;
        put(out, StmdScene { scene: Scene::new_static(map) })
    })
}

/// Builds a scene from `n` xyz triples; colors are grey and normals are
/// estimated from the points.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn stmd_scene_from_points(xyz: *const f64, n: usize, out: *mut *mut StmdScene) -> StmdStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null());
        }
        let flat = std::slice::from_raw_parts(xyz, 3 * n);
        let points: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let map = PointCloud::with_estimated_normals(points, vec![[0.5; 3]; n])?;
        put(out, StmdScene { scene: Scene::new_static(map) })
    })
}

/// # Safety
/// `scene` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn stmd_scene_write_ply(scene: *const StmdScene, path: *const c_char) -> StmdStatus {
    guard(|| {
        let s = obj(scene)?;
        Ok(write_ply(&s.scene.map, &path_arg(path)?)?)
    })
}

/// # Safety
/// `scene` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn stmd_scene_num_points(scene: *const StmdScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.map.len())
}

/// # Safety
/// `scene` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn stmd_scene_free(scene: *mut StmdScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Reads a motion-json-v1 file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmd_motion_read(path: *const c_char, out: *mut *mut StmdMotion) -> StmdStatus {
    guard(|| {
        let clip = MotionClip::read(&path_arg(path)?)?;
        put(out, StmdMotion { clip })
    })
}

/// # Safety
/// `motion` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stmd_motion_write(motion: *const StmdMotion, path: *const c_char) -> StmdStatus {
    guard(|| {
        let m = obj(motion)?;
        Ok(m.clip.write(&path_arg(path)?)?)
    })
}

/// # Safety
/// `motion` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn stmd_motion_num_frames(motion: *const StmdMotion) -> usize {
    motion.as_ref().map_or(0, |m| m.clip.num_frames())
}

/// # Safety
/// `motion` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn stmd_motion_num_joints(motion: *const StmdMotion) -> usize {
    motion.as_ref().map_or(0, |m| m.clip.layout().num_joints)
}

/// Writes world joint positions, frame-major then joint then xyz, into
/// `buf`, which must hold `frames * joints * 3` doubles (`len` of them).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn stmd_motion_joint_positions(motion: *const StmdMotion, buf: *mut f64, len: usize) -> StmdStatus {
    guard(|| {
        let m = obj(motion)?;
        if buf.is_null() {
            return Err(null());
        }
        let joints = m.clip.decode()?.joints;
        let need = joints.iter().map(|f| f.len() * 3).sum::<usize>();
        if len != need {
            return Err(Failure::invalid(format!("buffer holds {len} values, need {need}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for (dst, v) in out.iter_mut().zip(joints.iter().flatten().flatten()) {
            *dst = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `motion` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn stmd_motion_free(motion: *mut StmdMotion) {
    if !motion.is_null() {
        drop(Box::from_raw(motion));
    }
}

/// Fraction of joint-frame queries whose signed distance to the scene is at
/// least `-tau`.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmd_non_collision(
    motion: *const StmdMotion,
    scene: *const StmdScene,
    tau: f64,
    out: *mut f64,
) -> StmdStatus {
    guard(|| {
        let m = obj(motion)?;
        let s = obj(scene)?;
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Failure::invalid("tau must be finite and non-negative"));
        }
        let v = non_collision(&m.clip.decode()?.joints, &s.scene, tau)?;
        put_value(out, v)
    })
}

/// Fréchet distance between Gaussian fits of two row-major sample sets of
/// width `dim`: `a` has `na` rows, `b` has `nb`.
///
/// # Safety
/// `a` and `b` must point to `na * dim` and `nb * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn stmd_frechet_distance(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    out: *mut f64,
) -> StmdStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null());
        }
        if dim == 0 {
            return Err(Failure::invalid("dim must be positive"));
        }
        let rows = |p: *const f64, n: usize| -> Vec<Vec<f64>> {
            std::slice::from_raw_parts(p, n * dim).chunks_exact(dim).map(<[f64]>::to_vec).collect()
        };
        let (m1, s1) = gaussian_moments(&rows(a, na))?;
        let (m2, s2) = gaussian_moments(&rows(b, nb))?;
        put_value(out, frechet_distance(&m1, &s1, &m2, &s2)?)
    })
}
