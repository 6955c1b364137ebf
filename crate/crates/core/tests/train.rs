mod common;

use std::collections::HashMap;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vdgns::gns::{predict_accelerations, NormStats};
use vdgns::graph::{build_graph, NoiseConfig};
use vdgns::mpm::MaterialKind;
use vdgns::nn::{gradient_check, GradCheckOptions, ParameterSet, Tape, Tensor};
use vdgns::train::*;
use vdgns::video::{one_hot_encoding, stack_windows};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_cfg(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        window_n: 3,
        total_steps: 3,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn batch_items_pair_states_with_same_class_videos() {
    let data = synthetic_data(30, 2, 500, 2, 30);
    let cfg = TrainConfig::default();
    let mut r = rng(0);
    let (mut same, mut total) = (0usize, 0usize);
    let mut per_class = [0usize; 4];
    while total < 10_000 {
        for item in sample_batch(&data, &mut r, &cfg).unwrap() {
            let VideoSource::Clip { class_index, clip, start, len } = item.video else { panic!("no clip") };
            let c = &data.classes[class_index];
            assert_eq!(c.clips[clip].class, item.class);
            assert_eq!(c.kind, item.class);
            assert!((103..499).contains(&item.t));
            assert!(start + len <= 30 && len == 20);
            same += (item.video_trajectory_id == Some(item.trajectory_id)) as usize;
            per_class[class_index] += 1;
            total += 1;
        }
    }
    let p = 1.0 / 30.0;
    let sigma = (total as f64 * p * (1.0 - p)).sqrt();
    assert!((same as f64 - total as f64 * p).abs() <= 3.0 * sigma, "{same} of {total}");
    for c in per_class {
        assert!((c as f64 - 2500.0).abs() < 4.0 * (10_000.0f64 * 0.25 * 0.75).sqrt());
    }
}

#[test]
fn state_and_video_trajectories_are_independent_within_a_class() {
    let data = synthetic_data(5, 2, 130, 2, 10);
    let cfg = TrainConfig { window_n: 4, ..TrainConfig::default() };
    let mut r = rng(1);
    let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
    let mut n = 0;
    while n < 10_000 {
        for it in sample_batch(&data, &mut r, &cfg).unwrap() {
            *counts.entry((it.trajectory_id, it.video_trajectory_id.unwrap())).or_default() += 1.0;
            n += 1;
        }
    }
    // 4 classes × 5 × 5 cells, each with probability 1/100.
    assert_eq!(counts.len(), 100);
    let expected = n as f64 / 100.0;
    let chi2: f64 = counts.values().map(|o| (o - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
    assert!(p_value > 0.001, "chi2 {chi2}, p {p_value}");
}

#[test]
fn classes_without_data_are_dataset_errors() {
    let mut data = synthetic_data(2, 3, 130, 2, 10);
    data.classes[2].clips.clear();
    let err = sample_batch(&data, &mut rng(0), &small_cfg(Mode::Vdgns, 0)).unwrap_err();
    assert!(matches!(err, vdgns::Error::Dataset(_)), "{err}");
    // Baseline does not need clips.
    assert!(sample_batch(&data, &mut rng(0), &small_cfg(Mode::Baseline, 0)).is_ok());
    data.classes[1].trajectories.clear();
    assert!(matches!(TrainingData::new(data.classes), Err(vdgns::Error::Dataset(_))));
}

#[test]
fn baseline_batches_carry_no_video() {
    let data = synthetic_data(2, 3, 130, 2, 10);
    for it in sample_batch(&data, &mut rng(2), &small_cfg(Mode::Baseline, 0)).unwrap() {
        assert_eq!(it.video, VideoSource::OneHot);
        assert_eq!(it.video_trajectory_id, None);
    }
    let t = Trainer::new(&data, small_cfg(Mode::Baseline, 0)).unwrap();
    assert!(t.models.video.is_none());
    assert_eq!(t.models.mode(), Mode::Baseline);
}

#[test]
fn perfect_predictions_give_zero_loss() {
    let data = synthetic_data(2, 6, 130, 2, 10);
    let cfg = small_cfg(Mode::Baseline, 3);
    let trainer = Trainer::new(&data, cfg).unwrap();
    let mut batch = sample_batch(&data, &mut rng(4), &cfg).unwrap();
    for it in &mut batch {
        let code = one_hot_encoding(it.class.id() as usize).unwrap();
        let g = build_graph(&it.positions, &it.history, &code, 0.12).unwrap();
        it.target = predict_accelerations(&trainer.models.gns, &trainer.models.stats, &g).unwrap();
    }
    let out = compute_loss(&trainer.models, &data, &batch, &NoiseConfig::disabled(), &mut rng(5), LossOptions::default()).unwrap();
    assert!(out.loss < 1e-25, "{}", out.loss);
}

#[test]
fn loss_is_finite_at_initialisation() {
    let data = synthetic_data(2, 6, 130, 4, 10);
    for seed in 0..100 {
        let mode = if seed % 2 == 0 { Mode::Vdgns } else { Mode::Baseline };
        let cfg = small_cfg(mode, seed);
        let trainer = Trainer::new(&data, cfg).unwrap();
        let mut r = rng(seed);
        let batch = sample_batch(&data, &mut r, &cfg).unwrap();
        let out = compute_loss(&trainer.models, &data, &batch, &cfg.noise, &mut r, LossOptions::default()).unwrap();
        assert!(out.loss.is_finite() && out.loss > 0.0);
    }
}

#[test]
fn freezing_the_video_encoder_stops_its_gradients_only() {
    let data = synthetic_data(2, 6, 130, 4, 10);
    let cfg = small_cfg(Mode::Vdgns, 7);
    let trainer = Trainer::new(&data, cfg).unwrap();
    let batch = sample_batch(&data, &mut rng(8), &cfg).unwrap();
    let live = compute_loss(&trainer.models, &data, &batch, &cfg.noise, &mut rng(9), LossOptions::default()).unwrap();
    let frozen = compute_loss(&trainer.models, &data, &batch, &cfg.noise, &mut rng(9), LossOptions { freeze_video: true }).unwrap();
    assert!(live.video_grad_norm() > 0.0);
    assert_eq!(frozen.video_grad_norm(), 0.0);
    assert!(frozen.gns_grad_norm() > 0.0);
    assert_eq!(live.loss, frozen.loss);
    assert_eq!(live.gns_grads, frozen.gns_grads);
}

/// The two-phase backward equals a single tape over both networks.
#[test]
fn split_backward_matches_single_tape_gradients() {
    let data = synthetic_data(2, 5, 130, 4, 10);
    let cfg = small_cfg(Mode::Vdgns, 11);
    let trainer = Trainer::new(&data, cfg).unwrap();
    let batch = sample_batch(&data, &mut rng(12), &cfg).unwrap();
    let out = compute_loss(&trainer.models, &data, &batch, &NoiseConfig::disabled(), &mut rng(0), LossOptions::default()).unwrap();

    let mut merged = trainer.models.gns.clone();
    merged.extend(trainer.models.video.clone().unwrap());
    let mut want: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut loss = 0.0;
    for it in &batch {
        let VideoSource::Clip { class_index, clip, start, len } = it.video else { unreachable!() };
        let frames = &data.classes[class_index].clips[clip].frames[start..start + len];
        let pixels = stack_windows(&[frames]).unwrap();
        let g = build_graph(&it.positions, &it.history, &[0.0; 4], 0.12).unwrap();
        let target = Tensor::from_vec(g.num_vertices(), 2, it.target.iter().flat_map(|a| trainer.models.stats.normalize(*a)).collect()).unwrap();
        let mut tape = Tape::new();
        let l = composite_loss(&mut tape, &merged, &pixels, &g, &target).unwrap();
        loss += tape.value(l).item() / batch.len() as f64;
        for (k, v) in tape.backward(l).unwrap().into_params() {
            let slot = want.entry(k).or_insert_with(|| vec![0.0; v.len()]);
            slot.iter_mut().zip(&v).for_each(|(a, b)| *a += b / batch.len() as f64);
        }
    }
    assert!((loss - out.loss).abs() < 1e-12 * loss);
    let got: Vec<_> = out.gns_grads.iter().chain(out.video_grads.as_ref().unwrap()).collect();
    assert_eq!(got.len(), want.len());
    for (name, g) in got {
        let w = &want[name];
        let scale = w.iter().map(|x| x.abs()).fold(1e-12, f64::max);
        let dev = g.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-10 * scale, "{name}: {dev} vs scale {scale}");
    }
}

#[test]
fn composite_model_passes_gradient_check() {
    let data = synthetic_data(1, 5, 130, 8, 10);
    let cfg = TrainConfig { window_n: 2, ..small_cfg(Mode::Vdgns, 13) };
    let trainer = Trainer::new(&data, cfg).unwrap();
    let it = &sample_batch(&data, &mut rng(14), &cfg).unwrap()[0];
    let VideoSource::Clip { class_index, clip, start, len } = it.video else { unreachable!() };
    let pixels = stack_windows(&[&data.classes[class_index].clips[clip].frames[start..start + len]]).unwrap();
    let g = build_graph(&it.positions, &it.history, &[0.0; 4], 0.12).unwrap();
    assert!(g.num_edges() > 0);
    let target = Tensor::from_vec(5, 2, (0..10).map(|k| (k as f64).cos()).collect()).unwrap();
    let mut merged = trainer.models.gns.clone();
    merged.extend(trainer.models.video.clone().unwrap());
    let report = gradient_check(
        |tape, p| composite_loss(tape, p, &pixels, &g, &target),
        &merged,
        &GradCheckOptions { sample_size: 3000, ..Default::default() },
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn one_step_updates_every_tensor_with_gradient() {
    let data = synthetic_data(2, 6, 130, 4, 10);
    for mode in [Mode::Vdgns, Mode::Baseline] {
        let cfg = small_cfg(mode, 21);
        let mut trainer = Trainer::new(&data, cfg).unwrap();
        let before = trainer.models.clone();
        // Re-derive the gradients of the first step from the same rng stream.
        let mut probe = Trainer::new(&data, cfg).unwrap().checkpoint().rng.restore();
        let batch = sample_batch(&data, &mut probe, &cfg).unwrap();
        let out = compute_loss(&before, &data, &batch, &cfg.noise, &mut probe, LossOptions::default()).unwrap();
        let loss = trainer.train_step().unwrap();
        assert_eq!(loss, out.loss);
        let check = |a: &ParameterSet, b: &ParameterSet, grads: &std::collections::BTreeMap<String, Vec<f64>>| {
            for (name, t) in a.iter() {
                if grads[name].iter().any(|g| *g != 0.0) {
                    assert_ne!(t.values(), b.get(name).unwrap().values(), "{name} unchanged");
                }
            }
        };
        check(&before.gns, &trainer.models.gns, &out.gns_grads);
        if let Some(v) = &before.video {
            check(v, trainer.models.video.as_ref().unwrap(), out.video_grads.as_ref().unwrap());
        }
    }
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let data = synthetic_data(2, 6, 130, 4, 10);
    let cfg = TrainConfig { total_steps: 5, ..small_cfg(Mode::Vdgns, 31) };
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&data, cfg, a.path(), |_, _| {}).unwrap();
    let rb = train(&data, cfg, b.path(), |_, _| {}).unwrap();
    let bytes = std::fs::read(&ra.final_checkpoint).unwrap();
    assert_eq!(bytes, std::fs::read(&rb.final_checkpoint).unwrap());
    assert_eq!(ra.losses, rb.losses);
    for step in [0, 2, 4] {
        assert!(checkpoint_path(a.path(), step).exists());
    }
    let log = std::fs::read_to_string(a.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss,seconds"));
    assert_eq!(log.lines().count(), 6);

    // Two steps, then resume to five.
    let short = TrainConfig { total_steps: 2, ..cfg };
    let rc = train(&data, short, c.path(), |_, _| {}).unwrap();
    let resumed = resume(&data, &rc.final_checkpoint, Some(5), c.path(), |_, _| {}).unwrap();
    assert_eq!(std::fs::read(&resumed.final_checkpoint).unwrap(), bytes);
    assert_eq!(&ra.losses[2..], &resumed.losses[..]);
    assert_eq!(std::fs::read_to_string(c.path().join(LOSS_LOG)).unwrap().lines().count(), 6);
}

#[test]
fn checkpoints_round_trip_exactly() {
    let data = synthetic_data(2, 6, 130, 4, 10);
    for mode in [Mode::Vdgns, Mode::Baseline] {
        let cfg = small_cfg(mode, 41);
        let mut trainer = Trainer::new(&data, cfg).unwrap();
        trainer.train_step().unwrap();
        let ckpt = trainer.checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.vdck");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());

        // Probe predictions before and after the round trip.
        let it = &sample_batch(&data, &mut rng(1), &TrainConfig { mode: Mode::Baseline, ..cfg }).unwrap()[0];
        let g = build_graph(&it.positions, &it.history, &[0.1, 0.2, 0.3, 0.4], 0.12).unwrap();
        assert_eq!(
            predict_accelerations(&ckpt.models.gns, &ckpt.models.stats, &g).unwrap(),
            predict_accelerations(&back.models.gns, &back.models.stats, &g).unwrap()
        );
        let mut t2 = Trainer::from_checkpoint(&data, back).unwrap();
        assert_eq!(t2.train_step().unwrap(), trainer.train_step().unwrap());
    }
}

#[test]
fn corrupted_checkpoints_are_parse_errors() {
    let data = synthetic_data(1, 4, 130, 2, 10);
    let bytes = Trainer::new(&data, small_cfg(Mode::Baseline, 0)).unwrap().checkpoint().to_bytes();
    assert_eq!(&bytes[..4], b"VDCK");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let e = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
    assert!(e.contains("magic") && e.contains("byte 0"), "{e}");
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));
    let e = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(matches!(e, vdgns::Error::Parse { .. }));
    let mut bad = bytes.clone();
    bad[10] ^= 1; // inside the stored config: hash no longer matches
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn config_hash_ignores_run_length_only() {
    let a = TrainConfig::default();
    assert_eq!(a.hash(), TrainConfig { total_steps: 7, checkpoint_every: 3, ..a }.hash());
    assert_ne!(a.hash(), TrainConfig { lr: 2e-4, ..a }.hash());
    assert_ne!(a.hash(), TrainConfig { mode: Mode::Baseline, ..a }.hash());
}

#[test]
fn non_finite_loss_aborts_with_last_checkpoint() {
    let data = synthetic_data(1, 4, 130, 2, 10);
    let cfg = small_cfg(Mode::Baseline, 0);
    let mut ckpt = Trainer::new(&data, cfg).unwrap().checkpoint();
    ckpt.models.stats = NormStats { mean: [0.0; 2], std: [0.0, 1.0] };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.vdck");
    ckpt.save(&path).unwrap();
    let err = resume(&data, &path, None, dir.path(), |_, _| {}).unwrap_err();
    match err {
        vdgns::Error::TrainingDiverged { step, last_good } => {
            assert_eq!(step, 1);
            assert_eq!(last_good.as_deref(), Some(path.as_path()));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn vdgns_inference_ignores_class_ids() {
    let data = synthetic_data(1, 4, 130, 4, 10);
    let t = Trainer::new(&data, small_cfg(Mode::Vdgns, 0)).unwrap();
    let frames = &data.classes[0].clips[0].frames[..3];
    assert_eq!(t.models.encoding(frames, MaterialKind::Water).unwrap(), t.models.encoding(frames, MaterialKind::Elastic).unwrap());
    let b = Trainer::new(&data, small_cfg(Mode::Baseline, 0)).unwrap();
    assert_eq!(b.models.encoding(&[], MaterialKind::Snow).unwrap(), [0.0, 0.0, 1.0, 0.0]);
}

/// Probe-batch loss after 50 steps is no higher than at step 0 in most seeds.
#[test]
fn probe_loss_does_not_rise_over_fifty_steps() {
    let data = synthetic_data(2, 6, 130, 4, 10);
    let mut ok = 0;
    for seed in 0..10 {
        let cfg = TrainConfig { total_steps: 50, ..small_cfg(Mode::Vdgns, seed) };
        let mut trainer = Trainer::new(&data, cfg).unwrap();
        let probe = sample_batch(&data, &mut rng(1000 + seed), &cfg).unwrap();
        let probe_loss = |m: &Models| compute_loss(m, &data, &probe, &NoiseConfig::disabled(), &mut rng(0), LossOptions::default()).unwrap().loss;
        let start = probe_loss(&trainer.models);
        for _ in 0..50 {
            trainer.train_step().unwrap();
        }
        ok += (probe_loss(&trainer.models) <= start) as usize;
    }
    assert!(ok >= 8, "{ok}/10 seeds");
}
