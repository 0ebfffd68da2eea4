mod common;

use common::oracles;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsr_core::data::{generate_synthetic_clip, Frame, Occluder, Pattern, SceneSpec, SceneTemplate, Sprite};
use vsr_core::flow::{
    backward_warp, estimate_flow, motion_weight, occlusion_mask, FlowField, VisibilityMask,
};

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(h, w, 3, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn warp_matches_brute_force_bicubic_sampler() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let f = random_frame(&mut rng, 8, 8);
        let u: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let flow = FlowField::new(8, 8, u, v).unwrap();
        let out = backward_warp(&f, &flow).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (du, dv) = flow.at(y, x);
                for c in 0..3 {
                    let want = oracles::bicubic_sample(&f, c, x as f64 + du, y as f64 + dv).clamp(0.0, 1.0);
                    assert!((out.get(y, x, c) - want).abs() <= 1e-6);
                }
            }
        }
    }
}

#[test]
fn warp_is_linear_in_the_frame_for_interior_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random_frame(&mut rng, 12, 12), random_frame(&mut rng, 12, 12));
    let flow = FlowField::uniform(12, 12, 0.3, -0.6);
    // 0.4·a + 0.5·b stays inside [0, 1]; check on the linear (unclamped) operator
    let map = flow.warp_operator();
    let mix: Vec<f64> = a.data().iter().zip(b.data()).map(|(p, q)| 0.4 * p + 0.5 * q).collect();
    let lhs = map.apply(&mix, 3);
    let (wa, wb) = (map.apply(a.data(), 3), map.apply(b.data(), 3));
    for i in 0..lhs.len() {
        assert!((lhs[i] - (0.4 * wa[i] + 0.5 * wb[i])).abs() < 1e-12);
    }
}

#[test]
fn identical_and_constant_frames_give_zero_flow() {
    let spec = SceneTemplate { height: 48, width: 48, num_frames: 1, ..Default::default() }.sample(1);
    let f = generate_synthetic_clip(&spec).unwrap().clip.frame(0).clone();
    let flow = estimate_flow(&f, &f, 3).unwrap();
    assert!(flow.u().iter().chain(flow.v()).all(|x| x.abs() <= 0.1));
    let gray = Frame::filled(32, 32, 3, 0.4).unwrap();
    let flow = estimate_flow(&gray, &gray, 3).unwrap();
    assert!(flow.u().iter().chain(flow.v()).all(|&x| x == 0.0));
}

fn translation_pair(velocity: [f64; 2], seed: u64) -> (Frame, Frame, FlowField) {
    let spec = SceneSpec {
        pattern: Pattern::SinusoidTexture,
        height: 64,
        width: 64,
        num_frames: 2,
        background_velocity: velocity,
        sprites: vec![],
        occluders: vec![],
        seed,
        fps: 30.0,
    };
    let s = generate_synthetic_clip(&spec).unwrap();
    (s.clip.frame(0).clone(), s.clip.frame(1).clone(), s.gt_flows[0].clone())
}

#[test]
fn lucas_kanade_recovers_global_translation() {
    for seed in 0..4 {
        let (src, dst, gt) = translation_pair([2.0, 1.0], seed);
        let est = estimate_flow(&src, &dst, 3).unwrap();
        let mut us: Vec<f64> = est.u().to_vec();
        let mut vs: Vec<f64> = est.v().to_vec();
        us.sort_by(f64::total_cmp);
        vs.sort_by(f64::total_cmp);
        let (mu, mv) = (us[us.len() / 2], vs[vs.len() / 2]);
        assert!((mu + 2.0).abs() <= 0.25 && (mv + 1.0).abs() <= 0.25, "seed {seed}: median ({mu}, {mv})");

        // endpoint error on pixels that stay inside the frame
        let mut good = 0;
        let mut total = 0;
        for y in 1..64 {
            for x in 2..64 {
                let (eu, ev) = est.at(y, x);
                let (gu, gv) = gt.at(y, x);
                total += 1;
                if (eu - gu).hypot(ev - gv) <= 0.5 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.9 * total as f64, "seed {seed}: {good}/{total}");
    }
}

#[test]
fn lucas_kanade_handles_fractional_motion() {
    let (src, dst, _) = translation_pair([-1.5, 0.5], 9);
    let est = estimate_flow(&src, &dst, 3).unwrap();
    let n = est.u().len() as f64;
    let mu = est.u().iter().sum::<f64>() / n;
    let mv = est.v().iter().sum::<f64>() / n;
    assert!((mu - 1.5).abs() < 0.2 && (mv + 0.5).abs() < 0.2, "mean ({mu}, {mv})");
}

#[test]
fn occlusion_check_agrees_with_z_order_oracle() {
    let agree = oracles::occlusion_agreement(12);
    assert!(agree >= 0.95, "agreement {agree}");
}

#[test]
fn occlusion_mask_relabels_consistently_under_flip() {
    let spec = SceneSpec {
        pattern: Pattern::Checker,
        height: 32,
        width: 32,
        num_frames: 2,
        background_velocity: [0.0, 0.0],
        sprites: vec![Sprite { x: 4.0, y: 6.0, width: 10.0, height: 12.0, velocity: [3.0, 1.0] }],
        occluders: vec![Occluder { x: 16.0, y: 0.0, width: 6.0, height: 32.0, velocity: [0.0, 0.0], color: [0.2; 3] }],
        seed: 5,
        fps: 30.0,
    };
    let s = generate_synthetic_clip(&spec).unwrap();
    let m = occlusion_mask(&s.forward_flows[0], &s.gt_flows[0], 0.01, 0.5).unwrap();
    let mf = occlusion_mask(
        &s.forward_flows[0].flip_horizontal(),
        &s.gt_flows[0].flip_horizontal(),
        0.01,
        0.5,
    )
    .unwrap();
    assert_eq!(mf, m.flip_horizontal());
}

#[test]
fn motion_weight_is_monotone_and_masked() {
    let mags = [0.0, 0.5, 1.0, 3.0, 10.0];
    let u: Vec<f64> = mags.to_vec();
    let flow = FlowField::new(1, 5, u, vec![0.0; 5]).unwrap();
    let w = motion_weight(&flow, 8.0, &VisibilityMask::all_visible(1, 5)).unwrap();
    assert!(w.windows(2).all(|p| p[0] >= p[1]));
    assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
    let half = VisibilityMask::new(1, 5, vec![true, false, true, false, true]).unwrap();
    let wm = motion_weight(&flow, 8.0, &half).unwrap();
    for i in 0..5 {
        assert_eq!(wm[i], if half.as_slice()[i] { w[i] } else { 0.0 });
    }
}
