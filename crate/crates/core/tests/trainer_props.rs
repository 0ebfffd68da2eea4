mod common;

use std::cell::Cell;
use std::fs;
use std::rc::Rc;

use common::fixtures::*;
use common::oracles;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsr_core::backbone::{BicubicStub, BoxStub, Generator, WindowModel};
use vsr_core::data::Frame;
use vsr_core::resample::area_down_map;
use vsr_core::trainer::{
    discriminator_phase, generator_phase, prepare_clip, recurrent_rollout, teacher_forced_rollout, train,
    train_step, Alignment, ClipFlows, FlowAlignment, NoAlignment, SlotOrigin, TrainState, WindowSample,
};
use vsr_core::VsrError;
use vsr_tensor::{Graph, SpatialMap, Tensor, Var};

fn anchor_output(model: &dyn WindowModel, lr: &[Frame], a: usize, align: &dyn Alignment) -> Tensor {
    recurrent_rollout(model, lr, a, align).unwrap().sr_anchor
}

#[test]
fn anchor_ignores_frames_beyond_its_window() {
    let (k, a) = (1, 4);
    let lr = random_frames(1, 7, 8, 8);
    let mut mutated = lr.clone();
    mutated[a + k + 1] = random_frame(&mut ChaCha8Rng::seed_from_u64(99), 8, 8);
    let generator = Generator::new(&tiny_model(k), 3).unwrap();
    let bicubic = BicubicStub { context_radius: k, scale: 4 };
    let models: [&dyn WindowModel; 2] = [&bicubic, &generator];
    for model in models {
        assert_eq!(
            anchor_output(model, &lr, a, &NoAlignment),
            anchor_output(model, &mutated, a, &NoAlignment)
        );
        let flows = ClipFlows::estimate(&lr).unwrap();
        let mflows = ClipFlows::estimate(&mutated).unwrap();
        assert_eq!(
            anchor_output(model, &lr, a, &FlowAlignment { items: vec![&flows] }),
            anchor_output(model, &mutated, a, &FlowAlignment { items: vec![&mflows] })
        );
    }
    // the last frame inside the window does matter for a real generator
    let mut inside = lr.clone();
    inside[a + k] = random_frame(&mut ChaCha8Rng::seed_from_u64(98), 8, 8);
    assert_ne!(
        anchor_output(&generator, &lr, a, &NoAlignment),
        anchor_output(&generator, &inside, a, &NoAlignment)
    );
}

/// Runs `perturbed` on the `target`-th call and `base` otherwise.
struct PerturbOnce<'a> {
    base: &'a Generator,
    perturbed: &'a Generator,
    target: usize,
    calls: Cell<usize>,
}

impl WindowModel for PerturbOnce<'_> {
    fn context_radius(&self) -> usize {
        self.base.context_radius()
    }

    fn upscale(&self) -> usize {
        self.base.upscale()
    }

    fn forward_window(
        &self,
        g: &mut Graph,
        window: &[Var],
        warps: &[Option<Vec<Rc<SpatialMap>>>],
    ) -> vsr_core::Result<Var> {
        let i = self.calls.get();
        self.calls.set(i + 1);
        let m = if i == self.target { self.perturbed } else { self.base };
        m.forward_window(g, window, warps)
    }
}

#[test]
fn anchor_consumes_the_previous_prediction() {
    let (k, a) = (1, 4);
    let lr = random_frames(2, 7, 8, 8);
    let base = Generator::new(&tiny_model(k), 5).unwrap();
    let mut perturbed = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids: Vec<_> = perturbed.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in perturbed.store_mut().value_mut(id).data_mut() {
            *v += 0.05 * rng.random_range(-1.0..1.0);
        }
    }
    let reference = anchor_output(&base, &lr, a, &NoAlignment);
    // calls run t = k, k+1, ..., a; the one for t = a-1 has index a-1-k
    let wrapped = PerturbOnce {
        base: &base,
        perturbed: &perturbed,
        target: a - 1 - k,
        calls: Cell::new(0),
    };
    let out = anchor_output(&wrapped, &lr, a, &NoAlignment);
    assert_eq!(wrapped.calls.get(), a - k + 1);
    assert!(out.max_abs_diff(&reference) > 1e-6);
    // the same perturbation at the anchor step itself also changes it, while
    // a perturbation on a call that never happens changes nothing
    let never = PerturbOnce {
        base: &base,
        perturbed: &perturbed,
        target: 100,
        calls: Cell::new(0),
    };
    assert_eq!(anchor_output(&never, &lr, a, &NoAlignment), reference);
}

#[test]
fn bicubic_stub_rollout_matches_closed_pipeline() {
    let (k, a, s) = (2, 5, 4);
    let lr = random_frames(3, 8, 6, 7);
    let stub = BicubicStub { context_radius: k, scale: s };
    let r = recurrent_rollout(&stub, &lr, a, &NoAlignment).unwrap();
    for t in 0..lr.len() {
        let slot = r.buffer.frame(t, 0).unwrap();
        if (k..=a).contains(&t) {
            let expect = oracles::area_down(&oracles::bicubic_up(&lr[t], s), s);
            assert!(oracles::max_diff(&slot, &expect) < 1e-12, "slot {t}");
            // the same pipeline through the resampling operators is bit-exact
            let up = Frame::from_tensor(&teacher_forced_rollout(&stub, &lr, t.max(k), &NoAlignment).unwrap().sr_anchor)
                .unwrap();
            let (h, w, c) = up.shape();
            let down = area_down_map(h, w, s).apply(&up.to_tensor().into_data(), c);
            assert_eq!(slot.data(), down.as_slice(), "slot {t}");
        } else {
            assert_eq!(&slot, &lr[t]);
        }
    }
    let anchor = Frame::from_tensor(&r.sr_anchor).unwrap();
    assert!(oracles::max_diff(&anchor, &oracles::bicubic_up(&lr[a], s)) < 1e-12);
    assert_eq!(r.sr_context.len(), a - k);
    for (i, sr) in r.sr_context.iter().enumerate() {
        let f = Frame::from_tensor(sr).unwrap();
        assert!(oracles::max_diff(&f, &oracles::bicubic_up(&lr[k + i], s)) < 1e-12);
    }
}

#[test]
fn origin_tags_follow_the_sweep() {
    let (k, a) = (2, 4);
    let lr = random_frames(4, 8, 4, 4);
    let r = recurrent_rollout(&BoxStub { context_radius: k, scale: 2 }, &lr, a, &NoAlignment).unwrap();
    for (t, o) in r.buffer.origins().iter().enumerate() {
        let expect = if (k..=a).contains(&t) { SlotOrigin::SrDownsampled } else { SlotOrigin::Lr };
        assert_eq!(*o, expect, "slot {t}");
    }
    let tf = teacher_forced_rollout(&BoxStub { context_radius: k, scale: 2 }, &lr, a, &NoAlignment).unwrap();
    assert!(tf.buffer.origins().iter().all(|o| *o == SlotOrigin::Lr));
}

#[test]
fn box_stub_teacher_forced_equals_recurrent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // piecewise-constant frames of dyadic values, so block means are exact
    let lr: Vec<Frame> = (0..9)
        .map(|_| {
            let mut f = Frame::filled(8, 8, 3, 0.0).unwrap();
            for by in 0..4 {
                for bx in 0..4 {
                    for c in 0..3 {
                        let v = rng.random_range(0..=256) as f64 / 256.0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                f.set(2 * by + dy, 2 * bx + dx, c, v);
                            }
                        }
                    }
                }
            }
            f
        })
        .collect();
    for (k, scale) in [(0, 2), (1, 4), (2, 2)] {
        let stub = BoxStub { context_radius: k, scale };
        for a in k..lr.len() - k {
            let rec = recurrent_rollout(&stub, &lr, a, &NoAlignment).unwrap();
            let tf = teacher_forced_rollout(&stub, &lr, a, &NoAlignment).unwrap();
            assert_eq!(rec.sr_anchor, tf.sr_anchor);
            assert_eq!(rec.sr_context, tf.sr_context);
            for (t, f) in lr.iter().enumerate() {
                assert_eq!(&rec.buffer.frame(t, 0).unwrap(), f);
            }
        }
    }
}

#[test]
fn zero_radius_rollout_is_per_frame_inference() {
    let lr = random_frames(6, 5, 8, 8);
    let generator = Generator::new(&tiny_model(0), 8).unwrap();
    for a in 0..lr.len() {
        let rec = recurrent_rollout(&generator, &lr, a, &NoAlignment).unwrap();
        let alone = recurrent_rollout(&generator, &lr[a..a + 1], 0, &NoAlignment).unwrap();
        assert_eq!(rec.sr_anchor, alone.sr_anchor);
        let tf = teacher_forced_rollout(&generator, &lr, a, &NoAlignment).unwrap();
        assert_eq!(rec.sr_context, tf.sr_context);
    }
}

#[test]
fn anchor_outside_valid_range_is_a_contract_error() {
    let lr = random_frames(7, 5, 4, 4);
    let stub = BoxStub { context_radius: 2, scale: 2 };
    for a in [0, 1, 3, 9] {
        assert!(matches!(
            recurrent_rollout(&stub, &lr, a, &NoAlignment),
            Err(VsrError::Contract(_))
        ));
    }
    assert!(matches!(
        recurrent_rollout(&stub, &lr[..4], 2, &NoAlignment),
        Err(VsrError::Contract(_))
    ));
}

fn tiny_state_and_batch(cfg: &vsr_core::trainer::TrainConfig) -> (TrainState, Vec<WindowSample>) {
    let clips: Vec<_> = tiny_clips(2, 32, 8, 11).into_iter().map(|c| prepare_clip(c).unwrap()).collect();
    let frames: Vec<Frame> = clips[0].clip.hr.frames().to_vec();
    let held: Vec<Frame> = clips[1].clip.hr.frames().to_vec();
    let mut state = TrainState::new(cfg, &frames, &held).unwrap();
    let batch = state.sample_batch(&clips).unwrap();
    (state, batch)
}

#[test]
fn phases_touch_only_their_own_weights() {
    let cfg = tiny_train_config();
    let (mut state, batch) = tiny_state_and_batch(&cfg);
    let gen0 = state.generator.store().clone();
    let latent0 = state.latent.clone().unwrap();
    let pixel0 = state.pixel.clone().unwrap();

    let a = generator_phase(&mut state, &batch).unwrap();
    assert_ne!(state.generator.store(), &gen0);
    let latent = state.latent.as_ref().unwrap();
    assert_eq!(latent.encoder.store(), latent0.encoder.store());
    assert_eq!(latent.denoiser.store(), latent0.denoiser.store());
    assert_eq!(state.pixel.as_ref().unwrap().store(), pixel0.store());

    let gen1 = state.generator.store().clone();
    let (dp, dl) = discriminator_phase(&mut state, &a.real, &a.fake, a.lr).unwrap();
    assert!(dp.unwrap().is_finite() && dl.unwrap().is_finite());
    assert_eq!(state.generator.store(), &gen1);
    // only trainable tensors move; frozen ones stay bit-identical
    let pairs = [
        (state.pixel.as_ref().unwrap().store(), pixel0.store()),
        (state.latent.as_ref().unwrap().encoder.store(), latent0.encoder.store()),
        (state.latent.as_ref().unwrap().denoiser.store(), latent0.denoiser.store()),
    ];
    for (after, before) in pairs {
        let mut moved = 0;
        for ((_, p), (_, q)) in after.iter().zip(before.iter()) {
            if p.trainable {
                moved += usize::from(p.value != q.value);
            } else {
                assert_eq!(p.value, q.value, "{}", p.name);
            }
        }
        assert!(moved > 0);
    }
}

#[test]
fn updates_alternate_one_to_one() {
    let cfg = tiny_train_config();
    let (mut state, batch) = tiny_state_and_batch(&cfg);
    for s in 0..3 {
        let r = train_step(&mut state, &batch).unwrap();
        assert_eq!(r.step, s);
        assert!(r.loss.terms().iter().all(|(_, v)| v.is_finite()));
    }
    assert_eq!(state.step, 3);
    assert_eq!(state.counters.generator, 3);
    assert_eq!(state.counters.pixel_disc, 3);
    assert_eq!(state.counters.latent_disc, 3);
}

#[test]
fn supervised_regression_loss_decreases() {
    let mut cfg = tiny_train_config();
    cfg.ablation.latent_disc = false;
    cfg.ablation.pixel_disc = false;
    cfg.loss.lambda_temp = 0.0;
    cfg.loss.lambda_adv_latent = 0.0;
    cfg.loss.lambda_adv_pixel = 0.0;
    cfg.lr_halving_period_epochs = 50;
    let (mut state, batch) = tiny_state_and_batch(&cfg);
    let totals: Vec<f64> = (0..50).map(|_| train_step(&mut state, &batch).unwrap().loss.total).collect();
    let head: f64 = totals[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = totals[40..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.9 * head, "head {head} tail {tail}");
    assert_eq!(state.counters.pixel_disc, 0);
    assert_eq!(state.counters.latent_disc, 0);
}

#[test]
fn non_finite_loss_names_the_term() {
    let cfg = tiny_train_config();
    let (mut state, batch) = tiny_state_and_batch(&cfg);
    let pixel = state.pixel.as_mut().unwrap();
    let (id, _) = pixel.store().iter().last().unwrap();
    pixel.store_mut().value_mut(id).data_mut()[0] = f64::NAN;
    let err = train_step(&mut state, &batch).unwrap_err();
    assert!(
        matches!(&err, VsrError::NonFinite { term, step: 0 } if term == "adv_pixel"),
        "{err:?}"
    );

    let (mut state, batch) = tiny_state_and_batch(&cfg);
    let (id, _) = state.generator.store().iter().next().unwrap();
    state.generator.store_mut().value_mut(id).data_mut()[0] = f64::NAN;
    let err = train_step(&mut state, &batch).unwrap_err();
    assert!(matches!(&err, VsrError::NonFinite { term, .. } if term == "rec"), "{err:?}");
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_tiny_dataset(&data, 2, 32, 8, 21);
    let mut cfg = tiny_train_config();
    cfg.total_epochs = 0;
    let out = tmp.path().join("run");
    let summary = train(&cfg, &data, &out, None).unwrap();
    assert_eq!(summary.steps_run, 0);
    assert!(out.join("ckpt_epoch_0000/state.json").exists());
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.contains("header"));
}

#[test]
fn missing_data_dir_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let err = train(&tiny_train_config(), &tmp.path().join("absent"), &out, None).unwrap_err();
    assert!(matches!(err, VsrError::Config(_)), "{err:?}");
    assert!(!out.exists());
}

#[test]
fn runs_are_deterministic_and_resume_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_tiny_dataset(&data, 2, 32, 8, 31);
    let cfg = tiny_train_config();
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    let sa = train(&cfg, &data, &run_a, None).unwrap();
    train(&cfg, &data, &run_b, None).unwrap();
    assert_eq!(sa.steps_run, 4);
    let metrics_a = fs::read(run_a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics_a, fs::read(run_b.join("metrics.jsonl")).unwrap());
    let final_weights = fs::read(sa.checkpoint.join("generator/weights.bin")).unwrap();
    assert_eq!(final_weights, fs::read(run_b.join("ckpt_epoch_0002/generator/weights.bin")).unwrap());
    let lines: Vec<_> = std::str::from_utf8(&metrics_a).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(lines.len(), 4);
    // second epoch logs the halved rate
    assert!(lines[2].contains("\"lr\":0.0005"));

    // resume run b from the middle: metrics and weights come out identical
    let resumed = train(&cfg, &data, &run_b, Some(&run_b.join("ckpt_epoch_0001"))).unwrap();
    assert_eq!(resumed.steps_run, 2);
    assert_eq!(fs::read(run_b.join("metrics.jsonl")).unwrap(), metrics_a);
    assert_eq!(fs::read(run_b.join("ckpt_epoch_0002/generator/weights.bin")).unwrap(), final_weights);
    assert_eq!(
        fs::read(run_b.join("ckpt_epoch_0002/state.json")).unwrap(),
        fs::read(run_a.join("ckpt_epoch_0002/state.json")).unwrap()
    );

    // resuming a finished run does nothing
    let done = train(&cfg, &data, &run_b, Some(&run_b.join("ckpt_epoch_0002"))).unwrap();
    assert_eq!(done.steps_run, 0);
    assert_eq!(fs::read(run_b.join("metrics.jsonl")).unwrap(), metrics_a);
}
