use matseg_core::calibration::calibrate_stack;
use matseg_core::classifier::{predict_tile, train, Dataset, Network, NetworkConfig, TrainConfig};
use matseg_core::encoder::{compute_residual, EncodingMode, PixelSampleSet, TileEncoder};
use matseg_core::exec::Sequential;
use matseg_core::fusion::{segment_vote, softmax_fuse, PredictionStack};
use matseg_core::imagery::LabelMask;
use matseg_core::metrics::evaluate;
use matseg_core::synth::*;

fn spec(sigma: f64, n: usize) -> SceneSpec {
    SceneSpec {
        region_id: "e2e".into(),
        width: 24,
        height: 24,
        material_map: block_material_map(24, 24, 6, 5, 1).unwrap(),
        views: orbit_views(n),
        bands: default_bands(),
        noise: NoiseSpec {
            gaussian_sigma: vec![sigma; 8],
            gain_jitter: 0.0,
        },
        rng_seed: 2,
    }
}

#[test]
fn noise_free_render_is_identified_by_residual() {
    let dict = default_dictionary().unwrap();
    let b = render(&spec(0.0, 7), &dict, &Sequential).unwrap();
    for p in 0..24 * 24 {
        let r = compute_residual(&PixelSampleSet::from_stack(&b.stack, p).unwrap(), &dict).unwrap();
        assert_eq!(r.best_entry(), b.truth.labels[p] as usize);
        assert!(r.entry_totals()[r.best_entry()] < 1e-9);
    }
}

#[test]
fn dn_stack_calibrates_back_to_render() {
    let dict = default_dictionary().unwrap();
    let (bundle, dn) = render_dn(&spec(0.02, 3), &dict, &Sequential).unwrap();
    let (back, report) = calibrate_stack(&dn).unwrap();
    assert_eq!(report.total_pixels, 24 * 24 * 3);
    for (a, b) in back.images.iter().zip(&bundle.stack.images) {
        for (pa, pb) in a.planes.iter().zip(&b.planes) {
            assert!(pa.iter().zip(pb).all(|(x, y)| (x - y).abs() <= 1e-6));
        }
    }
}

#[test]
fn encode_train_fuse_vote_evaluate() {
    let dict = default_dictionary().unwrap();
    let b = render(&spec(0.03, 6), &dict, &Sequential).unwrap();
    let grids: Vec<_> = (0..3)
        .map(|t| {
            TileEncoder::new(&b.stack, None, EncodingMode::Msma { k: 3, seed: t })
                .unwrap()
                .encode(&Sequential)
        })
        .collect();
    let len = grids[0].feature_len;
    let mut data = Dataset::new(len);
    for g in &grids {
        for p in (0..g.pixel_count()).step_by(3) {
            let x: Vec<f64> = g.feature(p).iter().map(|&v| f64::from(v)).collect();
            data.push(&x, b.truth.labels[p] as usize).unwrap();
        }
    }
    let cfg = NetworkConfig {
        hidden_widths: vec![32],
        conv_blocks: 0,
        ..NetworkConfig::desk_default(len, 5)
    };
    let mut net = Network::new(cfg, 3).unwrap();
    net.set_palette(b.truth.palette.clone()).unwrap();
    let tc = TrainConfig {
        epochs: 40,
        batch_size: 32,
        learning_rate: 1e-2,
        ..TrainConfig::desk(4)
    };
    let (net, history) = train(net, &data, &tc).unwrap();
    assert!(history.epoch_loss.last().unwrap() < &history.epoch_loss[0]);

    let preds: Vec<_> = grids
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("trial{i}"), predict_tile(&net, g, &Sequential).unwrap()))
        .collect();
    let single = evaluate(
        &LabelMask::new(24, 24, preds[0].1.argmax_labels(), b.truth.palette.clone()).unwrap(),
        &b.truth,
    )
    .unwrap();
    let fused = softmax_fuse(&PredictionStack::new(preds).unwrap()).unwrap();
    let voted = segment_vote(&fused, &b.segments).unwrap();
    let fused_acc = evaluate(&fused, &b.truth).unwrap().pix_acc;
    let voted_acc = evaluate(&voted, &b.truth).unwrap().pix_acc;
    assert!(single.pix_acc > 0.8, "{}", single.pix_acc);
    assert!(voted_acc >= fused_acc);
    assert_eq!(voted_acc, 1.0);
}
