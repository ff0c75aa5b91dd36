//! C interface to `nff-core`.
//!
//! Every fallible function returns an [`NffStatus`]. On failure,
//! [`nff_last_error`] returns a message for the calling thread. Scenes,
//! generators and renders are opaque handles released with their `_free`
//! function; passing a freed handle is undefined behavior.
//!
//! Pointer rules for all functions: handles must come from this library,
//! strings must be NUL-terminated UTF-8, and `out` pointers must be writable.
//! Null pointers are reported as `NFF_STATUS_NULL_POINTER`.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nff_core::compositor::image::write_ppm;
use nff_core::compositor::{render, RenderOptions, RenderOutput};
use nff_core::fixtures::{make_scene, ScenePreset};
use nff_core::generators::Generator;
use nff_core::optim::checkpoint;
use nff_core::scene::edit::apply_script;
use nff_core::scene::io::{load_scene, save_scene};
use nff_core::scene::Scene;
use nff_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

pub struct NffScene {
    scene: Scene,
}

pub struct NffGenerator {
    generator: Generator,
}

pub struct NffRender {
    output: RenderOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NffStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => NffStatus::Io,
            Error::Format { .. } | Error::Json(_) | Error::EditScript { .. } => NffStatus::Format,
            Error::NonFinite { .. } | Error::Diverged { .. } => NffStatus::Numeric,
            _ => NffStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NffStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NffStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NffStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            NffStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(NffStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn nff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a procedural scene from a named preset.
#[no_mangle]
pub unsafe extern "C" fn nff_scene_make(preset: *const c_char, seed: u64, out: *mut *mut NffScene) -> NffStatus {
    guard(|| {
        let preset = ScenePreset::by_name(text(preset, "preset")?)?;
        put(out, NffScene { scene: make_scene(&preset, seed)? })
    })
}

/// Loads a scene JSON file and the grid it references.
#[no_mangle]
pub unsafe extern "C" fn nff_scene_load(json_path: *const c_char, out: *mut *mut NffScene) -> NffStatus {
    guard(|| {
        let (scene, _) = load_scene(Path::new(text(json_path, "json_path")?))?;
        put(out, NffScene { scene })
    })
}

#[no_mangle]
pub unsafe extern "C" fn nff_scene_save(scene: *const NffScene, json_path: *const c_char, grid_path: *const c_char) -> NffStatus {
    guard(|| {
        let s = get(scene, "scene")?;
        let (json, grid) = (text(json_path, "json_path")?, text(grid_path, "grid_path")?);
        Ok(save_scene(&s.scene, Path::new(json), Path::new(grid))?)
    })
}

/// Changes the output resolution; both sizes must be even.
#[no_mangle]
pub unsafe extern "C" fn nff_scene_set_resolution(scene: *mut NffScene, width: usize, height: usize) -> NffStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| null("scene"))?;
        s.scene.camera = s.scene.camera.with_resolution(width, height)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nff_scene_resolution(scene: *const NffScene, width: *mut usize, height: *mut usize) -> NffStatus {
    guard(|| {
        let s = get(scene, "scene")?;
        write(width, s.scene.camera.width(), "width")?;
        write(height, s.scene.camera.height(), "height")
    })
}

#[no_mangle]
pub unsafe extern "C" fn nff_scene_object_count(scene: *const NffScene, count: *mut usize) -> NffStatus {
    guard(|| write(count, get(scene, "scene")?.scene.layout.live_count(), "count"))
}

/// Applies an edit script to a copy of `scene`. The input is left unchanged.
#[no_mangle]
pub unsafe extern "C" fn nff_scene_edit(
    scene: *const NffScene,
    script: *const c_char,
    seed: u64,
    out: *mut *mut NffScene,
) -> NffStatus {
    guard(|| {
        let edited = apply_script(&get(scene, "scene")?.scene, text(script, "script")?, seed)?;
        put(out, NffScene { scene: edited })
    })
}

#[no_mangle]
pub unsafe extern "C" fn nff_scene_free(scene: *mut NffScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Freshly initialized generator parameters sized for `scene`'s labels.
#[no_mangle]
pub unsafe extern "C" fn nff_generator_init(scene: *const NffScene, seed: u64, out: *mut *mut NffGenerator) -> NffStatus {
    guard(|| {
        let s = &get(scene, "scene")?.scene;
        let generator = Generator::init(&s.arch, s.grid.num_labels() as usize, seed)?;
        put(out, NffGenerator { generator })
    })
}

/// Loads a parameter checkpoint written by `fit` or [`nff_generator_save`].
#[no_mangle]
pub unsafe extern "C" fn nff_generator_load(
    scene: *const NffScene,
    path: *const c_char,
    out: *mut *mut NffGenerator,
) -> NffStatus {
    guard(|| {
        let s = &get(scene, "scene")?.scene;
        let store = checkpoint::load(Path::new(text(path, "path")?))?;
        let generator = Generator::from_params(&s.arch, s.grid.num_labels() as usize, store)?;
        put(out, NffGenerator { generator })
    })
}

#[no_mangle]
pub unsafe extern "C" fn nff_generator_save(generator: *const NffGenerator, path: *const c_char) -> NffStatus {
    guard(|| Ok(checkpoint::save(&get(generator, "generator")?.generator.params, Path::new(text(path, "path")?))?))
}

#[no_mangle]
pub unsafe extern "C" fn nff_generator_free(generator: *mut NffGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Renders `scene` from its own camera. With `jitter` false, samples sit at
/// stratum starts and `seed` is ignored.
#[no_mangle]
pub unsafe extern "C" fn nff_render(
    generator: *const NffGenerator,
    scene: *const NffScene,
    seed: u64,
    jitter: bool,
    out: *mut *mut NffRender,
) -> NffStatus {
    guard(|| {
        let (g, s) = (&get(generator, "generator")?.generator, &get(scene, "scene")?.scene);
        let opts = if jitter { RenderOptions::seeded(seed) } else { RenderOptions::unjittered() };
        put(out, NffRender { output: render(g, s, &opts)? })
    })
}

/// Borrowed pointer to the `[3, height, width]` RGB image in `[0, 1]`,
/// valid until the render is freed.
#[no_mangle]
pub unsafe extern "C" fn nff_render_rgb(
    render: *const NffRender,
    data: *mut *const f64,
    height: *mut usize,
    width: *mut usize,
) -> NffStatus {
    guard(|| {
        let rgb = &get(render, "render")?.output.rgb;
        write(data, rgb.data().as_ptr(), "data")?;
        write(height, rgb.shape()[1], "height")?;
        write(width, rgb.shape()[2], "width")
    })
}

/// Borrowed pointer to the `[channels, height, width]` feature image.
#[no_mangle]
pub unsafe extern "C" fn nff_render_features(
    render: *const NffRender,
    data: *mut *const f64,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> NffStatus {
    guard(|| {
        let f = &get(render, "render")?.output.feature_image;
        write(data, f.data().as_ptr(), "data")?;
        write(channels, f.shape()[0], "channels")?;
        write(height, f.shape()[1], "height")?;
        write(width, f.shape()[2], "width")
    })
}

#[no_mangle]
pub unsafe extern "C" fn nff_render_write_ppm(render: *const NffRender, path: *const c_char) -> NffStatus {
    guard(|| Ok(write_ppm(&get(render, "render")?.output.rgb, Path::new(text(path, "path")?))?))
}

#[no_mangle]
pub unsafe extern "C" fn nff_render_free(render: *mut NffRender) {
    if !render.is_null() {
        drop(Box::from_raw(render));
    }
}
