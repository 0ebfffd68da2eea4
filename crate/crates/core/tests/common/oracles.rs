//! Brute-force reference implementations, written independently of the
//! library, that the integration tests and the acceptance target compare
//! against.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsr_core::data::{Frame, VideoClip};
use vsr_core::flow::FlowField;

/// Catmull-Rom kernel (a = −0.5).
pub fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// 16-tap bicubic sample with replicate padding, unclamped.
pub fn bicubic_sample(frame: &Frame, c: usize, x: f64, y: f64) -> f64 {
    let (h, w) = (frame.height() as i64, frame.width() as i64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let mut acc = 0.0;
    for j in y0 - 1..=y0 + 2 {
        for i in x0 - 1..=x0 + 2 {
            let px = frame.get(j.clamp(0, h - 1) as usize, i.clamp(0, w - 1) as usize, c);
            acc += catmull_rom(x - i as f64) * catmull_rom(y - j as f64) * px;
        }
    }
    acc
}

/// `out(p) = frame(p + flow(p))`, one pixel at a time.
pub fn warp(frame: &Frame, flow: &FlowField) -> Frame {
    let (h, w, c) = frame.shape();
    let mut out = Frame::filled(h, w, c, 0.0).unwrap();
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            for ch in 0..c {
                out.set(y, x, ch, bicubic_sample(frame, ch, x as f64 + u, y as f64 + v).clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn mean_abs(a: &Frame, b: &Frame) -> f64 {
    let (h, w, c) = a.shape();
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                acc += (a.get(y, x, ch) - b.get(y, x, ch)).abs();
            }
        }
    }
    acc / (h * w * c) as f64
}

pub fn e_warp(clip: &VideoClip, flows: &[FlowField]) -> f64 {
    let pairs = clip.len() - 1;
    (0..pairs).map(|t| mean_abs(&warp(clip.frame(t), &flows[t]), clip.frame(t + 1))).sum::<f64>() / pairs as f64
}

pub fn e_tc(clip: &VideoClip) -> f64 {
    let pairs = clip.len() - 1;
    (0..pairs).map(|t| mean_abs(clip.frame(t), clip.frame(t + 1))).sum::<f64>() / pairs as f64
}

pub fn psnr(a: &Frame, b: &Frame) -> f64 {
    let (h, w, c) = a.shape();
    let mut se = 0.0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let d = a.get(y, x, ch) - b.get(y, x, ch);
                se += d * d;
            }
        }
    }
    10.0 * ((h * w * c) as f64 / se).log10()
}

/// Bicubic upscaling by `s` with pixel-centre alignment, clamped to [0, 1].
pub fn bicubic_up(f: &Frame, s: usize) -> Frame {
    let (h, w, c) = f.shape();
    let mut out = Frame::filled(h * s, w * s, c, 0.0).unwrap();
    for ch in 0..c {
        for y in 0..h * s {
            for x in 0..w * s {
                let sx = (x as f64 + 0.5) / s as f64 - 0.5;
                let sy = (y as f64 + 0.5) / s as f64 - 0.5;
                out.set(y, x, ch, bicubic_sample(f, ch, sx, sy).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Mean over each `s × s` block.
pub fn area_down(f: &Frame, s: usize) -> Frame {
    let (h, w, c) = f.shape();
    let mut out = Frame::filled(h / s, w / s, c, 0.0).unwrap();
    for ch in 0..c {
        for y in 0..h / s {
            for x in 0..w / s {
                let mut acc = 0.0;
                for dy in 0..s {
                    for dx in 0..s {
                        acc += f.get(y * s + dy, x * s + dx, ch);
                    }
                }
                out.set(y, x, ch, acc / (s * s) as f64);
            }
        }
    }
    out
}

pub fn max_diff(a: &Frame, b: &Frame) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_clip(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> VideoClip {
    let frames = (0..n)
        .map(|_| Frame::new(h, w, 3, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect();
    VideoClip::new(frames, 30.0, "random").unwrap()
}

pub fn random_flows(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, max: f64) -> Vec<FlowField> {
    (0..n)
        .map(|_| {
            let u = (0..h * w).map(|_| rng.random_range(-max..max)).collect();
            let v = (0..h * w).map(|_| rng.random_range(-max..max)).collect();
            FlowField::new(h, w, u, v).unwrap()
        })
        .collect()
}

/// Worst deviations of e_warp, e_tc and psnr from the loop oracles over
/// `instances` random clips.
pub fn metric_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..6);
        let (h, w) = (rng.random_range(4..12), rng.random_range(4..12));
        let clip = random_clip(&mut rng, n, h, w);
        let flows = random_flows(&mut rng, n - 1, h, w, 2.5);
        let (a, b) = (clip.frame(0), clip.frame(1));
        worst = worst
            .max((vsr_core::eval::e_warp(&clip, &flows).unwrap() - e_warp(&clip, &flows)).abs())
            .max((vsr_core::eval::e_tc(&clip).unwrap() - e_tc(&clip)).abs())
            .max((vsr_core::eval::psnr(a, b).unwrap() - psnr(a, b)).abs());
    }
    worst
}

/// Worst deviation of `backward_warp` from the per-pixel sampler on random
/// 8×8 frames and flows.
pub fn warp_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let clip = random_clip(&mut rng, 1, 8, 8);
        let flow = random_flows(&mut rng, 1, 8, 8, 3.0).remove(0);
        let out = vsr_core::flow::backward_warp(clip.frame(0), &flow).unwrap();
        worst = worst.max(max_diff(&out, &warp(clip.frame(0), &flow)));
    }
    worst
}

/// Lowest per-pair agreement between `occlusion_mask` and the renderer's
/// z-order visibility over `scenes` occluder scenes.
pub fn occlusion_agreement(scenes: u64) -> f64 {
    use vsr_core::data::{generate_synthetic_clip, SceneTemplate};
    use vsr_core::flow::{occlusion_mask, DEFAULT_ALPHA, DEFAULT_BETA};
    let template = SceneTemplate {
        height: 64,
        width: 64,
        num_frames: 3,
        sprites: [1, 2],
        sprite_size: [14.0, 24.0],
        occluders: [1, 2],
        occluder_size: [10.0, 18.0],
        max_speed: 3.0,
        max_background_speed: 0.0,
        ..Default::default()
    };
    let mut worst: f64 = 1.0;
    for seed in 0..scenes {
        let s = generate_synthetic_clip(&template.sample(seed)).unwrap();
        for i in 0..s.gt_flows.len() {
            let m = occlusion_mask(&s.forward_flows[i], &s.gt_flows[i], DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
            worst = worst.min(m.agreement(&s.gt_visibility[i]));
        }
    }
    worst
}
