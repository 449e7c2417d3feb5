//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use matseg::exec::Rayon;
use matseg::pipeline::{run_pipeline, NetworkShape, PipelineConfig, PipelineInputs, PipelineReport};
use matseg_core::brdf::{AngleSample, BandMap, BrdfAxes, BrdfDictionary, BrdfEntry, BrdfModel, TabulatedBrdf};
use matseg_core::calibration::{calibrate_stack, radiance};
use matseg_core::classifier::{loss_and_gradients, Network, NetworkConfig, ProbabilityGrid};
use matseg_core::encoder::{compute_residual, ModeKind, PixelSampleSet};
use matseg_core::exec::Sequential;
use matseg_core::fusion::{segment_vote, softmax_fuse, PredictionStack};
use matseg_core::imagery::{LabelMask, SegmentMask, ViewGeometry, UNLABELED};
use matseg_core::metrics::confusion;
use matseg_core::synth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scene(w: usize, h: usize, views: Vec<ViewGeometry>, sigma: f64, map: Vec<u8>, seed: u64) -> SceneSpec {
    SceneSpec {
        region_id: "acceptance".into(),
        width: w,
        height: h,
        material_map: map,
        views,
        bands: default_bands(),
        noise: NoiseSpec {
            gaussian_sigma: vec![sigma; 8],
            gain_jitter: 0.0,
        },
        rng_seed: seed,
    }
}

fn random_views(n: usize, rng: &mut ChaCha8Rng) -> Vec<ViewGeometry> {
    (0..n)
        .map(|_| ViewGeometry {
            view_zenith: rng.random_range(0.0..60.0),
            view_azimuth: rng.random_range(0.0..360.0),
            sun_zenith: rng.random_range(10.0..70.0),
            sun_azimuth: rng.random_range(0.0..360.0),
            earth_sun_distance: rng.random_range(0.983..1.017),
            acquisition_time: String::new(),
        })
        .collect()
}

fn zero_residual() -> Outcome {
    let dict = default_dictionary().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut wrong, mut cases) = (0.0f64, 0, 0);
    for n in [1, 4, 15] {
        let mut sets = vec![orbit_views(n)];
        sets.extend((0..10).map(|_| random_views(n, &mut rng)));
        for views in sets {
            let map: Vec<u8> = (0..5).collect();
            let b = render(&scene(5, 1, views, 0.0, map, 0), &dict, &Sequential).unwrap();
            for k in 0..5 {
                let r = compute_residual(&PixelSampleSet::from_stack(&b.stack, k).unwrap(), &dict).unwrap();
                let totals = r.entry_totals();
                worst = worst.max(totals[k]);
                wrong += usize::from(r.best_entry() != k);
                cases += 1;
            }
        }
    }
    outcome(
        wrong == 0 && worst < 1e-9,
        format!("{cases} pixels (d=5, 8 bands, N in 1/4/15), {wrong} misidentified, max true-entry residual {worst:.2e} (< 1e-9)"),
    )
}

fn round_trip() -> Outcome {
    let dict = default_dictionary().unwrap();
    let mut spec = scene(64, 64, orbit_views(4), 0.02, block_material_map(64, 64, 8, 5, 2).unwrap(), 3);
    spec.noise.gain_jitter = 0.03;
    let (bundle, dn) = render_dn(&spec, &dict, &Sequential).unwrap();
    let (back, _) = calibrate_stack(&dn).unwrap();
    let mut worst = 0.0f32;
    for (a, b) in back.images.iter().zip(&bundle.stack.images) {
        for (pa, pb) in a.planes.iter().zip(&b.planes) {
            for (x, y) in pa.iter().zip(pb) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(worst <= 1e-6, format!("64x64, N=4: max |calibrated - rendered| = {worst:.2e} (<= 1e-6)"))
}

fn constant_dict(m: f32) -> BrdfDictionary {
    let axes = BrdfAxes {
        view_zenith: vec![0.0],
        view_azimuth: vec![0.0],
        illum_zenith: vec![0.0],
        illum_azimuth: vec![0.0],
    };
    let entry = BrdfEntry {
        name: "constant".into(),
        wavelengths: vec![500.0],
        model: BrdfModel::Tabulated(TabulatedBrdf { axes, values: vec![m] }),
    };
    BrdfDictionary::new(vec![entry], BandMap { rows: vec![vec![0]] }).unwrap()
}

fn hand_values() -> Outcome {
    let mut band = default_bands().remove(0);
    band.gain = 0.95;
    band.abscal_factor = 0.012;
    band.effective_bandwidth = 0.06;
    band.offset = -2.5;
    let l = radiance(&band, 100.0).unwrap();
    let dict = constant_dict(0.5);
    let a = AngleSample::new(10.0, 20.0, 30.0, 40.0);
    let r1 = compute_residual(&PixelSampleSet::new(1, vec![0.7], vec![a]).unwrap(), &dict).unwrap().get(0, 0);
    let r2 = compute_residual(&PixelSampleSet::new(1, vec![0.7, 0.3], vec![a, a]).unwrap(), &dict)
        .unwrap()
        .get(0, 0);
    let pass = (l - 16.5).abs() < 1e-12 && (r1 - 0.08).abs() < 1e-12 && (r2 - 0.08).abs() < 1e-12;
    outcome(pass, format!("L = {l:.15}, r(N=1) = {r1:.15}, r(N=2) = {r2:.15}"))
}

fn gradients() -> Outcome {
    let configs = [
        (6, vec![5], 2, 3),
        (5, vec![4, 4], 0, 4),
        (7, vec![], 1, 2),
    ];
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut instances = 0;
    for (input_len, hidden, blocks, classes) in configs {
        for seed in 0..20u64 {
            let cfg = NetworkConfig {
                input_len,
                hidden_widths: hidden.clone(),
                conv_blocks: blocks,
                conv_channels: 3,
                kernel_size: 3,
                classes,
            };
            let mut net = Network::new(cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            for p in net.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            let n = 4;
            let x: Vec<f64> = (0..n * input_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let w: Vec<f64> = (0..classes).map(|_| rng.random_range(0.5..2.0)).collect();
            let (_, grads) = loss_and_gradients(&net, &x, &y, &w).unwrap();
            let h = 1e-6;
            let tensors = net.tensors().to_vec();
            for t in &tensors {
                let kind = match t.name.split('.').next().unwrap() {
                    "stem" => "conv stem",
                    s if s.starts_with("block") => "residual conv",
                    s if s.starts_with("dense") => "dense hidden",
                    _ => "output",
                };
                for i in t.range.clone() {
                    let orig = net.params()[i];
                    net.params_mut()[i] = orig + h;
                    let (lp, _) = loss_and_gradients(&net, &x, &y, &w).unwrap();
                    net.params_mut()[i] = orig - h;
                    let (lm, _) = loss_and_gradients(&net, &x, &y, &w).unwrap();
                    net.params_mut()[i] = orig;
                    let numeric = (lp - lm) / (2.0 * h);
                    let rel = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-6);
                    let e = worst.entry(kind).or_insert(0.0);
                    *e = e.max(rel);
                }
            }
            instances += 1;
        }
    }
    let pass = worst.len() == 4 && worst.values().all(|&e| e < 1e-3);
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(pass, format!("{instances} networks (20 seeds x 3 layouts), worst relative error: {}", summary.join(", ")))
}

fn experiment_inputs(sigma: f64) -> PipelineInputs {
    let dict = default_dictionary().unwrap();
    let spec = scene(64, 64, orbit_views(15), sigma, block_material_map(64, 64, 8, 5, 3).unwrap(), 5);
    let b = render(&spec, &dict, &Rayon::new(0).unwrap()).unwrap();
    PipelineInputs {
        stack: b.stack,
        dictionary: Some(dict),
        truth: b.truth,
        segments: Some(b.segments),
    }
}

fn experiment_config(mode: ModeKind) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(mode, 11);
    cfg.k = 5;
    cfg.trials = 10;
    cfg.network = NetworkShape {
        hidden_widths: vec![32],
        conv_blocks: 0,
        conv_channels: 8,
        kernel_size: 3,
    };
    cfg
}

fn run(inputs: &PipelineInputs, mode: ModeKind) -> PipelineReport {
    run_pipeline(inputs, &experiment_config(mode), &Rayon::new(0).unwrap())
        .unwrap()
        .report
}

fn encoder_ordering() -> Outcome {
    let inputs = experiment_inputs(0.02);
    let [mssa, msma, rr] = [ModeKind::Mssa, ModeKind::Msma, ModeKind::Rr].map(|m| run(&inputs, m));
    let (a, b, c) = (mssa.single_mean.pix_acc, msma.single_mean.pix_acc, rr.single_mean.pix_acc);
    let pass = c >= b && b >= a && (c - a) >= 0.05;
    outcome(
        pass,
        format!(
            "64x64, N=15, sigma 0.02, per-instance pixel accuracy: rr {:.2} >= msma {:.2} >= mssa {:.2}, rr - mssa = {:.2} points (>= 5); after fusion {:.2}/{:.2}/{:.2}",
            100.0 * c,
            100.0 * b,
            100.0 * a,
            100.0 * (c - a),
            100.0 * rr.fused.pix_acc,
            100.0 * msma.fused.pix_acc,
            100.0 * mssa.fused.pix_acc
        ),
    )
}

fn post_processing() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for sigma in [0.02, 0.05] {
        let r = run(&experiment_inputs(sigma), ModeKind::Msma);
        let (single, fused, voted) = (r.single_mean.pix_acc, r.fused.pix_acc, r.voted.as_ref().unwrap().pix_acc);
        pass &= r.instances == 10 && fused >= single && voted >= fused;
        if sigma == 0.05 {
            pass &= fused - single >= 0.02;
        }
        lines.push(format!(
            "sigma {sigma}: mean single {:.2}, fused {:.2}, voted {:.2}",
            100.0 * single,
            100.0 * fused,
            100.0 * voted
        ));
    }
    outcome(pass, format!("MSMA T=10, k=5: {} (fusion gain >= 2 points at 0.05)", lines.join("; ")))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut iou_violations = 0;
    for _ in 0..100 {
        let c = rng.random_range(2..=6usize);
        let truth: Vec<u8> = (0..256)
            .map(|_| if rng.random_bool(0.1) { UNLABELED } else { rng.random_range(0..c as u8) })
            .collect();
        let pred: Vec<u8> = (0..256).map(|_| rng.random_range(0..c as u8)).collect();
        let palette: Vec<String> = (0..c).map(|i| format!("m{i}")).collect();
        let t = LabelMask::new(16, 16, truth.clone(), palette.clone()).unwrap();
        let p = LabelMask::new(16, 16, pred.clone(), palette).unwrap();
        let cm = confusion(&p, &t).unwrap();

        let labeled: Vec<usize> = (0..256).filter(|&i| truth[i] != UNLABELED).collect();
        let mut ok = true;
        for a in 0..c {
            for b in 0..c {
                let n = labeled.iter().filter(|&&i| truth[i] as usize == a && pred[i] as usize == b).count();
                ok &= cm.get(a, b) == n as u64;
            }
        }
        let correct = labeled.iter().filter(|&&i| truth[i] == pred[i]).count();
        ok &= cm.pix_acc().unwrap() == correct as f64 / labeled.len() as f64;
        let (mut f1s, mut ious) = (Vec::new(), Vec::new());
        for k in 0..c as u8 {
            let support = labeled.iter().filter(|&&i| truth[i] == k).count();
            if support == 0 {
                ok &= cm.class_f1(k as usize).is_none();
                continue;
            }
            let tp = labeled.iter().filter(|&&i| truth[i] == k && pred[i] == k).count() as u64;
            let fp = labeled.iter().filter(|&&i| truth[i] != k && pred[i] == k).count() as u64;
            let fn_ = labeled.iter().filter(|&&i| truth[i] == k && pred[i] != k).count() as u64;
            let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            let iou = tp as f64 / (tp + fp + fn_) as f64;
            ok &= cm.class_f1(k as usize) == Some(f1) && cm.class_iou(k as usize) == Some(iou);
            iou_violations += usize::from(iou > f1);
            f1s.push(f1);
            ious.push(iou);
        }
        ok &= cm.mean_f1().unwrap() == f1s.iter().sum::<f64>() / f1s.len() as f64;
        ok &= cm.mean_iou().unwrap() == ious.iter().sum::<f64>() / ious.len() as f64;
        mismatches += usize::from(!ok);
    }
    outcome(
        mismatches == 0 && iou_violations == 0,
        format!("100 random 16x16 pairs: {mismatches} differ from brute force, {iou_violations} classes with IoU > F1"),
    )
}

fn matseg(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_matseg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("scene.json"),
        r#"{"width": 32, "height": 32, "material_map": {"block": 8, "seed": 1}, "views": {"orbit": 8},
            "noise": {"gaussian_sigma": [0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03], "gain_jitter": 0.02},
            "rng_seed": 4}"#,
    )
    .unwrap();
    fs::write(
        d.join("run.json"),
        r#"{"network": {"hidden_widths": [16], "conv_blocks": 1, "conv_channels": 4, "kernel_size": 3},
            "train": {"epochs": 8, "batch_size": 64, "rng_seed": 0}}"#,
    )
    .unwrap();
    assert!(matseg(&["synth", "--spec", "scene.json", "--out", "scene"], d).status.success());
    let mut compared = 0;
    let mut differing = Vec::new();
    for (mode, threads) in [("msma", ["1", "4"]), ("mssa", ["2", "3"]), ("rr", ["1", "8"])] {
        for t in threads {
            let out = format!("{mode}-{t}");
            let status = matseg(
                &[
                    "--threads", t, "pipeline", "--mode", mode, "--stack", "scene/dn", "--dict", "scene/dict.json",
                    "--truth", "scene/truth.json", "--segments", "scene/segments.json", "--seed", "21", "--k", "4",
                    "--trials", "4", "--config", "run.json", "--out", &out,
                ],
                d,
            );
            if !status.status.success() {
                return outcome(false, format!("pipeline {mode} --threads {t} failed"));
            }
        }
        for f in ["mask.json", "mask.u8", "fused.json", "fused.u8", "report.json", "model.json"] {
            let a = fs::read(d.join(format!("{mode}-{}", threads[0])).join(f)).unwrap();
            let b = fs::read(d.join(format!("{mode}-{}", threads[1])).join(f)).unwrap();
            compared += 1;
            if a != b {
                differing.push(format!("{mode}/{f}"));
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!("3 modes x 2 thread counts, {compared} output files compared, differing: {differing:?}"),
    )
}

fn compositions() -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for a in 0..=4u8 {
        for b in 0..=4 - a {
            out.push([a, b, 4 - a - b]);
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_argmax(sums: &[u32]) -> u8 {
    let max = *sums.iter().max().unwrap();
    sums.iter().position(|&s| s == max).unwrap() as u8
}

fn fusion_properties() -> (usize, usize) {
    let dists = compositions();
    let palette: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
    let (mut checked, mut failures) = (0, 0);
    for n in 1..=3usize {
        let tuples: Vec<Vec<usize>> = (0..dists.len().pow(n as u32))
            .map(|mut code| {
                (0..n)
                    .map(|_| {
                        let d = code % dists.len();
                        code /= dists.len();
                        d
                    })
                    .collect()
            })
            .collect();
        for chunk in tuples.chunks(9) {
            let pixel = |p: usize| &chunk[p % chunk.len()];
            let grids: Vec<ProbabilityGrid> = (0..n)
                .map(|s| ProbabilityGrid {
                    width: 3,
                    height: 3,
                    palette: palette.clone(),
                    data: (0..9).flat_map(|p| dists[pixel(p)[s]].map(|q| f32::from(q) / 4.0)).collect(),
                })
                .collect();
            let expected: Vec<u8> = (0..9)
                .map(|p| {
                    let sums: Vec<u32> = (0..3).map(|c| pixel(p).iter().map(|&d| u32::from(dists[d][c])).sum()).collect();
                    brute_argmax(&sums)
                })
                .collect();
            for perm in permutations(n) {
                let sources = perm.iter().map(|&s| (format!("s{s}"), grids[s].clone())).collect();
                let fused = softmax_fuse(&PredictionStack::new(sources).unwrap()).unwrap();
                checked += 1;
                failures += usize::from(fused.labels != expected);
            }
        }
    }
    (checked, failures)
}

fn segmentations() -> Vec<Vec<u32>> {
    vec![
        vec![1; 9],
        vec![1, 1, 1, 2, 2, 2, 3, 3, 3],
        vec![1, 2, 3, 1, 2, 3, 1, 2, 3],
        (1..=9).collect(),
        vec![0, 1, 0, 1, 1, 1, 0, 1, 0],
        vec![1, 1, 0, 1, 0, 2, 0, 2, 2],
        vec![0; 9],
        vec![5, 5, 7, 5, 7, 7, 5, 5, 7],
    ]
}

fn brute_vote(labels: &[u8], seg: &[u32]) -> Vec<u8> {
    let mut out = labels.to_vec();
    let ids: Vec<u32> = seg.iter().copied().filter(|&s| s != 0).collect();
    for id in ids {
        let mut counts = [0u32; 3];
        for p in 0..9 {
            if seg[p] == id && labels[p] != UNLABELED {
                counts[labels[p] as usize] += 1;
            }
        }
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let winner = brute_argmax(&counts);
        for p in 0..9 {
            if seg[p] == id {
                out[p] = winner;
            }
        }
    }
    out
}

fn voting_properties() -> (usize, usize) {
    let palette: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
    let values = [0u8, 1, 2, UNLABELED];
    let segs: Vec<SegmentMask> = segmentations()
        .into_iter()
        .map(|s| SegmentMask::new(3, 3, s).unwrap())
        .collect();
    let (mut checked, mut failures) = (0, 0);
    for code in 0..4usize.pow(9) {
        let labels: Vec<u8> = (0..9).map(|i| values[(code >> (2 * i)) & 3]).collect();
        let mask = LabelMask::new(3, 3, labels.clone(), palette.clone()).unwrap();
        for seg in &segs {
            let once = segment_vote(&mask, seg).unwrap();
            let twice = segment_vote(&once, seg).unwrap();
            let expected = brute_vote(&labels, &seg.segment_ids);
            // the winner of each segment must already occur in it
            let introduced = (0..9).any(|p| {
                once.labels[p] != labels[p]
                    && !(0..9).any(|q| seg.segment_ids[q] == seg.segment_ids[p] && labels[q] == once.labels[p])
            });
            checked += 1;
            failures += usize::from(once.labels != expected || twice != once || introduced);
        }
    }
    (checked, failures)
}

fn fusion_and_voting() -> Outcome {
    let (fc, ff) = fusion_properties();
    let (vc, vf) = voting_properties();
    outcome(
        ff == 0 && vf == 0,
        format!(
            "fusion: {fc} source orderings of all N<=3 tuples over 15 distributions, {ff} failures; voting: {vc} mask/segment pairs (4^9 masks x 8 segmentations), {vf} failures"
        ),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Duration, Check); 9] = [
        ("zero-residual identification", Duration::from_secs(5), zero_residual),
        ("DN -> reflectance round trip", Duration::from_secs(5), round_trip),
        ("hand values", Duration::from_secs(5), hand_values),
        ("gradient check", Duration::from_secs(30), gradients),
        ("encoder ordering rr >= msma >= mssa", Duration::from_secs(300), encoder_ordering),
        ("fusion and voting gains", Duration::from_secs(300), post_processing),
        ("metrics vs brute force", Duration::from_secs(60), metrics_oracle),
        ("pipeline determinism across thread counts", Duration::from_secs(300), determinism),
        ("fusion/voting exhaustive properties", Duration::from_secs(300), fusion_and_voting),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *limit;
        failed += usize::from(!pass);
        println!(
            "[{}] {} {}: {} ({:.2} s, limit {} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
