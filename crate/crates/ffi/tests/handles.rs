use std::ffi::{CStr, CString};
use std::ptr;

use nff_ffi::*;

fn last_error() -> String {
    let p = nff_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn scene_generator_render_round_trip() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(nff_scene_make(c("clevr-w").as_ptr(), 4, &mut scene), NffStatus::Ok);
        assert_eq!(nff_scene_set_resolution(scene, 16, 12), NffStatus::Ok);
        let (mut w, mut h, mut n) = (0, 0, 0);
        assert_eq!(nff_scene_resolution(scene, &mut w, &mut h), NffStatus::Ok);
        assert_eq!((w, h), (16, 12));
        assert_eq!(nff_scene_object_count(scene, &mut n), NffStatus::Ok);
        assert!(n >= 1);

        let mut gen = ptr::null_mut();
        assert_eq!(nff_generator_init(scene, 1, &mut gen), NffStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(nff_render(gen, scene, 0, false, &mut r), NffStatus::Ok);
        let mut data = ptr::null();
        assert_eq!(nff_render_rgb(r, &mut data, &mut h, &mut w), NffStatus::Ok);
        assert_eq!((w, h), (16, 12));
        let rgb = std::slice::from_raw_parts(data, 3 * w * h);
        assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
        let mut ch = 0;
        assert_eq!(nff_render_features(r, &mut data, &mut ch, &mut h, &mut w), NffStatus::Ok);
        assert_eq!((h, w), (6, 8));
        assert!(ch > 0);

        let dir = tempfile::tempdir().unwrap();
        let path = |name: &str| c(dir.path().join(name).to_str().unwrap());
        assert_eq!(nff_render_write_ppm(r, path("v.ppm").as_ptr()), NffStatus::Ok);
        assert!(std::fs::read(dir.path().join("v.ppm")).unwrap().starts_with(b"P6\n16 12\n255\n"));

        // checkpoints store f32, so the reloaded render agrees to f32 precision
        assert_eq!(nff_scene_save(scene, path("s.json").as_ptr(), path("g.uvgx").as_ptr()), NffStatus::Ok);
        assert_eq!(nff_generator_save(gen, path("p.nfck").as_ptr()), NffStatus::Ok);
        let (mut scene2, mut gen2, mut r2) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(nff_scene_load(path("s.json").as_ptr(), &mut scene2), NffStatus::Ok);
        assert_eq!(nff_generator_load(scene2, path("p.nfck").as_ptr(), &mut gen2), NffStatus::Ok);
        assert_eq!(nff_render(gen2, scene2, 0, false, &mut r2), NffStatus::Ok);
        let (mut a, mut b) = (ptr::null(), ptr::null());
        nff_render_rgb(r, &mut a, &mut h, &mut w);
        nff_render_rgb(r2, &mut b, &mut h, &mut w);
        let (a, b) = (std::slice::from_raw_parts(a, 3 * w * h), std::slice::from_raw_parts(b, 3 * w * h));
        let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");

        nff_render_free(r);
        nff_render_free(r2);
        nff_generator_free(gen);
        nff_generator_free(gen2);
        nff_scene_free(scene);
        nff_scene_free(scene2);
    }
}

#[test]
fn edits_return_a_new_scene() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(nff_scene_make(c("clevr-w").as_ptr(), 2, &mut scene), NffStatus::Ok);
        let (mut before, mut after) = (0, 0);
        nff_scene_object_count(scene, &mut before);
        let mut edited = ptr::null_mut();
        assert_eq!(nff_scene_edit(scene, c("obj-del 0\n").as_ptr(), 0, &mut edited), NffStatus::Ok);
        nff_scene_object_count(edited, &mut after);
        assert_eq!(after + 1, before);
        nff_scene_object_count(scene, &mut after);
        assert_eq!(after, before);

        let mut bad = ptr::null_mut();
        assert_eq!(nff_scene_edit(scene, c("obj-del 0\nwarp 1\n").as_ptr(), 0, &mut bad), NffStatus::Format);
        assert!(bad.is_null());
        assert!(last_error().contains("line 2"), "{}", last_error());
        nff_scene_free(edited);
        nff_scene_free(scene);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(nff_scene_make(ptr::null(), 0, &mut scene), NffStatus::NullPointer);
        assert!(last_error().contains("preset"));
        assert_eq!(nff_scene_make(c("atlantis").as_ptr(), 0, &mut scene), NffStatus::InvalidArgument);
        assert!(last_error().contains("atlantis"));
        assert_eq!(nff_scene_load(c("/nonexistent/scene.json").as_ptr(), &mut scene), NffStatus::Io);
        assert!(scene.is_null());

        assert_eq!(nff_scene_make(c("tiny").as_ptr(), 0, &mut scene), NffStatus::Ok);
        assert_eq!(nff_scene_set_resolution(scene, 15, 16), NffStatus::InvalidArgument);
        assert_eq!(nff_scene_object_count(scene, ptr::null_mut()), NffStatus::NullPointer);
        let mut r = ptr::null_mut();
        assert_eq!(nff_render(ptr::null(), scene, 0, true, &mut r), NffStatus::NullPointer);
        nff_scene_free(scene);
        nff_scene_free(ptr::null_mut());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(nff_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
