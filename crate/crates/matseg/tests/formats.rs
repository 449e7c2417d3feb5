use std::fs;

use matseg::exec::Rayon;
use matseg::io::*;
use matseg_core::brdf::{AngleSample, BandMap, BrdfAxes, BrdfDictionary, BrdfEntry, BrdfModel, TabulatedBrdf};
use matseg_core::classifier::{predict_tile, Network, NetworkConfig, ProbabilityGrid};
use matseg_core::encoder::{EncodingMode, ModeKind, TileEncoder};
use matseg_core::exec::Sequential;
use matseg_core::imagery::{ImageStack, LabelMask, MultispectralImage, PixelKind, SegmentMask, UNLABELED};
use matseg_core::synth::{block_material_map, default_bands, default_dictionary, orbit_views, render, NoiseSpec, SceneSpec};
use matseg::Error;

fn scene(w: usize, h: usize, n: usize, sigma: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        region_id: "fmt".into(),
        width: w,
        height: h,
        material_map: block_material_map(w, h, 4, 5, seed).unwrap(),
        views: orbit_views(n),
        bands: default_bands(),
        noise: NoiseSpec {
            gaussian_sigma: vec![sigma; 8],
            gain_jitter: 0.0,
        },
        rng_seed: seed,
    }
}

fn bundle(w: usize, h: usize, n: usize) -> matseg_core::synth::SceneBundle {
    render(&scene(w, h, n, 0.03, 4), &default_dictionary().unwrap(), &Sequential).unwrap()
}

#[test]
fn stack_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(16, 8, 3);
    save_stack(&b.stack, dir.path()).unwrap();
    assert_eq!(load_stack(dir.path()).unwrap(), b.stack);
}

#[test]
fn eight_band_stack_file_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(64, 64, 8);
    save_stack(&b.stack, dir.path()).unwrap();
    let planes: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    assert_eq!(planes.len(), 64);
    assert!(planes.iter().all(|p| fs::metadata(p).unwrap().len() == 16384));
}

#[test]
fn one_pixel_stack_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = bundle(1, 1, 1);
    let img = &mut b.stack.images[0];
    img.bands.truncate(1);
    img.planes.truncate(1);
    b.stack.region_id = String::new();
    save_stack(&b.stack, dir.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["img000_b00.f32", "stack.json"]);
    assert_eq!(fs::metadata(dir.path().join("img000_b00.f32")).unwrap().len(), 4);
    assert_eq!(load_stack(dir.path()).unwrap(), b.stack);
}

#[test]
fn missing_band_file_names_the_image() {
    let dir = tempfile::tempdir().unwrap();
    save_stack(&bundle(4, 4, 3).stack, dir.path()).unwrap();
    fs::remove_file(dir.path().join("img002_b05.f32")).unwrap();
    match load_stack(dir.path()) {
        Err(Error::Image { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected an image error, got {other:?}"),
    }
}

#[test]
fn truncated_band_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_stack(&bundle(4, 4, 2).stack, dir.path()).unwrap();
    fs::write(dir.path().join("img001_b00.f32"), [0u8; 12]).unwrap();
    let err = load_stack(dir.path()).unwrap_err().to_string();
    assert!(err.contains("image 1"), "{err}");
}

#[test]
fn inconsistent_images_are_rejected() {
    let b = bundle(4, 4, 2);
    let mut images: Vec<MultispectralImage> = b.stack.images.clone();
    images[1].geometry.sun_zenith = 95.0;
    assert!(ImageStack::new("x", images).is_err());
}

#[test]
fn masks_and_segments_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(9, 7, 1);
    let mut truth = b.truth.clone();
    truth.labels[3] = UNLABELED;
    save_mask(&truth, &dir.path().join("truth.json")).unwrap();
    save_segments(&b.segments, &dir.path().join("seg.json")).unwrap();
    assert_eq!(load_mask(&dir.path().join("truth.json")).unwrap(), truth);
    assert_eq!(load_segments(&dir.path().join("seg.json")).unwrap(), b.segments);
    assert_eq!(fs::metadata(dir.path().join("truth.u8")).unwrap().len(), 63);
    assert_eq!(fs::metadata(dir.path().join("seg.u32")).unwrap().len(), 63 * 4);
}

#[test]
fn mask_with_bad_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = LabelMask::new(2, 1, vec![0, 1], vec!["a".into(), "b".into()]).unwrap();
    save_mask(&m, &dir.path().join("m.json")).unwrap();
    fs::write(dir.path().join("m.u8"), [0u8, 7]).unwrap();
    assert!(load_mask(&dir.path().join("m.json")).is_err());
}

#[test]
fn features_and_predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(8, 8, 4);
    let grid = TileEncoder::new(&b.stack, None, EncodingMode::Msma { k: 3, seed: 9 })
        .unwrap()
        .encode(&Sequential);
    save_features(&grid, &dir.path().join("f.json")).unwrap();
    let back = load_features(&dir.path().join("f.json")).unwrap();
    assert_eq!(back, grid);
    assert_eq!(back.mode, ModeKind::Msma);

    let pred = ProbabilityGrid {
        width: 2,
        height: 1,
        palette: vec!["a".into(), "b".into(), "c".into()],
        data: vec![0.25, 0.5, 0.25, 0.1, 0.2, 0.7],
    };
    save_prediction(&pred, &dir.path().join("p.json")).unwrap();
    assert_eq!(load_prediction(&dir.path().join("p.json")).unwrap(), pred);
}

#[test]
fn dictionary_round_trip_with_table() {
    let dir = tempfile::tempdir().unwrap();
    let axes = BrdfAxes {
        view_zenith: vec![0.0, 30.0, 60.0],
        view_azimuth: vec![0.0, 180.0],
        illum_zenith: vec![20.0, 40.0],
        illum_azimuth: vec![0.0, 90.0, 270.0],
    };
    let wavelengths = vec![450.0, 650.0];
    let len = TabulatedBrdf::expected_len(&axes, wavelengths.len());
    let values: Vec<f32> = (0..len).map(|i| 0.01 * (i % 17) as f32).collect();
    let mut entries = default_dictionary().unwrap().entries;
    entries.push(BrdfEntry {
        name: "measured".into(),
        wavelengths,
        model: BrdfModel::Tabulated(TabulatedBrdf { axes, values }),
    });
    let map = BandMap::nearest_wavelength(&entries, &[427.0, 478.0, 546.0, 608.0, 659.0, 724.0, 833.0, 949.0], &[]).unwrap();
    let dict = BrdfDictionary::new(entries, map).unwrap();
    let path = dir.path().join("dict.json");
    save_dictionary(&dict, &path).unwrap();
    assert!(dir.path().join("dict_5.f32").exists());
    let back = load_dictionary(&path).unwrap();
    assert_eq!(back, dict);
    let a = AngleSample::new(17.0, 200.0, 31.0, 300.0);
    assert_eq!(back.sample(5, &a, 2).unwrap(), dict.sample(5, &a, 2).unwrap());
}

#[test]
fn dictionary_with_short_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    fs::write(
        &path,
        r#"{"entries": [{"kind": "tabulated", "name": "t", "wavelengths": [500.0],
            "axes": {"view_zenith": [0.0], "view_azimuth": [0.0], "illum_zenith": [0.0, 10.0], "illum_azimuth": [0.0]},
            "table_file": "t.f32"}],
            "band_map": {"rows": [[0]]}}"#,
    )
    .unwrap();
    fs::write(dir.path().join("t.f32"), [0u8; 4]).unwrap();
    assert!(load_dictionary(&path).is_err());
}

#[test]
fn model_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(8, 8, 3);
    let grid = TileEncoder::new(&b.stack, None, EncodingMode::Mssa { image: 1 })
        .unwrap()
        .encode(&Sequential);
    let mut net = Network::new(NetworkConfig::desk_default(grid.feature_len, 5), 3).unwrap();
    net.set_palette(b.truth.palette.clone()).unwrap();
    net.set_normalization(vec![0.1; grid.feature_len], vec![2.0; grid.feature_len]).unwrap();
    net.round_to_f32();
    let path = dir.path().join("model.json");
    save_model(&net, &ModelMetadata::default(), &path).unwrap();
    let (back, meta) = load_model(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(meta, ModelMetadata::default());
    let exec = Rayon::new(2).unwrap();
    assert_eq!(predict_tile(&back, &grid, &exec).unwrap(), predict_tile(&net, &grid, &Sequential).unwrap());
}

#[test]
fn model_with_wrong_tensor_shape_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let net = Network::new(NetworkConfig::desk_default(8, 3), 0).unwrap();
    let path = dir.path().join("m.json");
    save_model(&net, &ModelMetadata::default(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap().replacen("\"input_len\": 8", "\"input_len\": 9", 1);
    fs::write(&path, text).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn raw_dn_kind_survives_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dn = matseg_core::synth::to_dn(&bundle(4, 4, 2).stack).unwrap();
    save_stack(&dn, dir.path()).unwrap();
    assert_eq!(load_stack(dir.path()).unwrap().pixel_kind(), PixelKind::RawDn);
}

#[test]
fn segments_reject_wrong_size() {
    let dir = tempfile::tempdir().unwrap();
    let s = SegmentMask::new(2, 2, vec![1, 1, 2, 2]).unwrap();
    save_segments(&s, &dir.path().join("s.json")).unwrap();
    fs::write(dir.path().join("s.u32"), [0u8; 12]).unwrap();
    assert!(load_segments(&dir.path().join("s.json")).is_err());
}
