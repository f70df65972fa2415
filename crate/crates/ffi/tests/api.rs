use std::ffi::{CStr, CString};
use std::ptr;

use hairsynth::imagecore::{save_mask_png, save_png, MaskImage, RasterImage};
use hairsynth::pipeline::{PipelineState, Schedule, TrainingConfig};
use hairsynth::synthdata::{generate_samples, Domain};
use hairsynth_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(hs_last_error()) }.to_string_lossy().into_owned()
}

fn fibers(size: usize) -> Vec<f32> {
    let mut v = Vec::new();
    for y in 0..size {
        for x in 0..size {
            let g = 0.5 + 0.4 * (y as f32 * 1.3 + (x as f32 * 0.07).sin()).sin();
            v.extend([g, 0.6 * g, 0.3 * g]);
        }
    }
    v
}

fn disk(size: usize) -> Vec<u8> {
    let c = size as f32 / 2.0;
    (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f32, (i / size) as f32);
            ((x - c).powi(2) + (y - c).powi(2) < (0.35 * size as f32).powi(2)) as u8
        })
        .collect()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(hs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut img = ptr::null_mut();
    let st = unsafe { hs_image_new(4, 4, 3, ptr::null(), &mut img) };
    assert_eq!(st, HsStatus::NullPointer);
    assert!(last_error().contains("data"));
    assert!(img.is_null());
    let st = unsafe { hs_synthesize(ptr::null(), ptr::null(), ptr::null(), ptr::null(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, HsStatus::NullPointer);
    unsafe {
        hs_image_free(ptr::null_mut());
        assert_eq!(hs_image_width(ptr::null()), 0);
    }
}

#[test]
fn image_and_mask_handles() {
    let data = fibers(16);
    let mut img = ptr::null_mut();
    unsafe {
        assert_eq!(hs_image_new(16, 16, 3, data.as_ptr(), &mut img), HsStatus::Ok);
        assert_eq!(last_error(), "");
        assert_eq!((hs_image_width(img), hs_image_height(img), hs_image_channels(img)), (16, 16, 3));
        let px = std::slice::from_raw_parts(hs_image_data(img), 16 * 16 * 3);
        assert_eq!(px, &data[..]);
        hs_image_free(img);

        let mut bad = ptr::null_mut();
        assert_eq!(hs_image_new(4, 4, 2, data.as_ptr(), &mut bad), HsStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        let m = disk(16);
        let mut mask = ptr::null_mut();
        assert_eq!(hs_mask_new(16, 16, m.as_ptr(), &mut mask), HsStatus::Ok);
        assert_eq!(hs_mask_count(mask), m.iter().filter(|b| **b != 0).count());
        hs_mask_free(mask);
    }
}

#[test]
fn strokes_extract_and_parse() {
    let (data, m) = (fibers(48), disk(48));
    unsafe {
        let (mut img, mut mask, mut strokes) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(hs_image_new(48, 48, 3, data.as_ptr(), &mut img), HsStatus::Ok);
        assert_eq!(hs_mask_new(48, 48, m.as_ptr(), &mut mask), HsStatus::Ok);
        assert_eq!(hs_strokes_extract(img, mask, 3, &mut strokes), HsStatus::Ok);
        assert!(hs_strokes_len(strokes) > 0);

        let dir = tempfile::tempdir().unwrap();
        let file = CString::new(dir.path().join("s.json").to_str().unwrap()).unwrap();
        assert_eq!(hs_strokes_save(strokes, file.as_ptr()), HsStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(hs_strokes_load(file.as_ptr(), &mut back), HsStatus::Ok);
        assert_eq!(hs_strokes_len(back), hs_strokes_len(strokes));

        let junk = CString::new("{not json").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(hs_strokes_from_json(junk.as_ptr(), &mut none), HsStatus::Format);
        for p in [strokes, back] {
            hs_strokes_free(p);
        }
        hs_image_free(img);
        hs_mask_free(mask);
    }
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let p = CString::new("/nonexistent/run.hsck").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { hs_pipeline_load(p.as_ptr(), &mut out) }, HsStatus::Io);
    assert!(last_error().contains("nonexistent"));
}

#[test]
fn synthesize_through_the_c_interface() {
    let cfg = TrainingConfig {
        size: 32,
        base_width: 4,
        depth: 3,
        batch: 2,
        stage1: Schedule::stage(1),
        stage2: Schedule::stage(1),
        ..TrainingConfig::desk()
    };
    let samples = generate_samples(4, 32, 5, Domain::Synthetic, &cfg.annotation).unwrap();
    let mut state = PipelineState::new(cfg).unwrap();
    state.pretrain(&samples).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("p.hsck");
    state.save(&ck).unwrap();
    let s = &samples[0];
    let (ip, mp) = (dir.path().join("i.png"), dir.path().join("m.png"));
    save_png(&s.image, &ip).unwrap();
    save_mask_png(&s.mask, &mp).unwrap();
    s.strokes.save(dir.path().join("s.json")).unwrap();
    let c = |p: std::path::PathBuf| CString::new(p.to_str().unwrap()).unwrap();
    unsafe {
        let (mut p, mut img, mut mask, mut strokes, mut out) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(hs_pipeline_load(c(ck).as_ptr(), &mut p), HsStatus::Ok, "{}", last_error());
        assert_eq!(hs_pipeline_size(p), 32);
        assert_eq!(hs_image_load_png(c(ip).as_ptr(), &mut img), HsStatus::Ok);
        assert_eq!(hs_mask_load_png(c(mp).as_ptr(), &mut mask), HsStatus::Ok);
        assert_eq!(hs_strokes_load(c(dir.path().join("s.json")).as_ptr(), &mut strokes), HsStatus::Ok);
        let mut ms = 0.0;
        assert_eq!(hs_synthesize(p, img, mask, strokes, &mut out, &mut ms), HsStatus::Ok, "{}", last_error());
        assert!(ms > 0.0);
        assert_eq!((hs_image_width(out), hs_image_height(out), hs_image_channels(out)), (32, 32, 3));
        let expected: RasterImage = state.synthesize(&s.image, &s.mask, &s.strokes).unwrap();
        let got = std::slice::from_raw_parts(hs_image_data(out), 32 * 32 * 3);
        let png_round_trip_tol = 1.0 / 255.0;
        let worst = got.iter().zip(expected.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= png_round_trip_tol * 40.0, "{worst}");
        assert_eq!(hs_image_save_png(out, c(dir.path().join("o.png")).as_ptr()), HsStatus::Ok);

        // the init network was never trained
        let rgb = [0.3f32, 0.2, 0.1];
        let mut init = ptr::null_mut();
        assert_eq!(hs_synthesize_init(p, img, mask, rgb.as_ptr(), &mut init), HsStatus::Untrained);
        assert!(init.is_null());

        let empty = MaskImage::new(32, 32);
        let bits = vec![0u8; 32 * 32];
        let mut em = ptr::null_mut();
        assert_eq!(hs_mask_new(32, 32, bits.as_ptr(), &mut em), HsStatus::Ok);
        assert_eq!(hs_mask_count(em), empty.count());
        let mut none = ptr::null_mut();
        assert_eq!(hs_synthesize(p, img, em, strokes, &mut none, ptr::null_mut()), HsStatus::EmptyMask);

        hs_mask_free(em);
        hs_image_free(out);
        hs_strokes_free(strokes);
        hs_mask_free(mask);
        hs_image_free(img);
        hs_pipeline_free(p);
    }
}
