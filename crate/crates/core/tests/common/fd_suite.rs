//! Randomised finite-difference checks shared by the integration tests and
//! the acceptance target. Each runner returns the worst relative error seen.

#![allow(dead_code)]

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsr_core::backbone::{build_input, Generator, ModelConfig};
use vsr_core::data::Frame;
use vsr_core::flow::FlowField;
use vsr_core::losses::{self, LossConfig};
use vsr_tensor::gradcheck::relative_errors;
use vsr_tensor::{Graph, Tensor};

pub const H: f64 = 1e-4;

/// Charbonnier curvature is ~1/ε near zero, where a step of `H` no longer
/// resolves it; residuals are therefore kept at least 0.05 away from zero.
fn offset(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.05..0.15);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// `warp(src) + offsets`, so the temporal residual is bounded away from zero.
fn displaced(rng: &mut ChaCha8Rng, src: &Tensor, flow: &FlowField) -> Tensor {
    let c = src.shape()[1];
    let w = flow.warp_operator().apply(src.data(), c);
    Tensor::from_vec(src.shape(), w.into_iter().map(|v| v + offset(rng)).collect()).unwrap()
}

/// A smooth ramp plus small noise: values stay inside (0.15, 0.85) and
/// neighbouring pixels always differ, keeping |·| and clamp away from kinks.
pub fn textured(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let (ax, ay) = (rng.random_range(0.012..0.02), rng.random_range(0.012..0.02));
    let sign: Vec<f64> = (0..c).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::from_fn(&[1, c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let r = sign[ch] * (ax * x as f64 + ay * y as f64);
        0.5 + r - sign[ch] * 0.1 + (i as f64 * 0.37).sin() * 0.003
    })
}

fn smooth_flow(rng: &mut ChaCha8Rng, h: usize, w: usize) -> FlowField {
    let (u0, v0) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let (su, sv) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let u = (0..h * w).map(|i| u0 + su * (i % w) as f64).collect();
    let v = (0..h * w).map(|i| v0 + sv * (i / w) as f64).collect();
    FlowField::new(h, w, u, v).unwrap()
}

pub fn charbonnier(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    (0..instances)
        .map(|_| {
            let x = Tensor::from_fn(&[2, 3, 4, 4], |_| offset(&mut rng) * 3.0);
            relative_errors(&[x], H, |g, v| losses::charbonnier_g(g, v[0], 1e-3))[0]
        })
        .fold(0.0, f64::max)
}

pub fn reconstruction(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    (0..instances)
        .map(|_| {
            let sr = textured(&mut rng, 3, 6, 6);
            let gt = Tensor::from_vec(sr.shape(), sr.data().iter().map(|v| v + offset(&mut rng)).collect()).unwrap();
            relative_errors(&[sr], H, |g, v| {
                let t = g.constant(gt.clone());
                losses::reconstruction_loss_g(g, v[0], t, 1e-3)
            })[0]
        })
        .fold(0.0, f64::max)
}

pub fn temporal(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = LossConfig::default();
    let (h, w) = (8, 8);
    (0..instances)
        .map(|_| {
            let b = textured(&mut rng, 3, h, w);
            let flow = smooth_flow(&mut rng, h, w);
            let a = displaced(&mut rng, &b, &flow);
            let weights = losses::temporal_weights(&flow, Some(&flow.negated()), &cfg).unwrap();
            let wt = losses::expand_channels(&weights, 1, 3, h, w);
            let warp = vec![Rc::new(flow.warp_operator())];
            relative_errors(&[a, b], H, |g, v| {
                let wv = g.constant(wt.clone());
                losses::temporal_loss_g(g, v[0], v[1], warp.clone(), wv, cfg.eps)
            })
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn multi_frame_temporal(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let cfg = LossConfig::default();
    let (h, w) = (8, 8);
    (0..instances)
        .map(|_| {
            let fwd: Vec<FlowField> = (0..2).map(|_| smooth_flow(&mut rng, h, w)).collect();
            let bwd: Vec<FlowField> = fwd.iter().map(|f| f.negated()).collect();
            let planned = losses::temporal_terms(&fwd, Some(&bwd), 2, &cfg).unwrap();
            let last = textured(&mut rng, 3, h, w);
            let frames = vec![
                displaced(&mut rng, &last, &planned[1].flow),
                displaced(&mut rng, &last, &planned[0].flow),
                last,
            ];
            relative_errors(&frames, H, |g, v| {
                let terms: Vec<_> = planned
                    .iter()
                    .map(|t| {
                        let wt = g.constant(losses::expand_channels(&t.weights, 1, 3, h, w));
                        (t.lag, vec![Rc::new(t.flow.warp_operator())], wt)
                    })
                    .collect();
                losses::multi_frame_temporal_loss_g(g, v, &terms, cfg.gamma, cfg.eps).unwrap()
            })
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn region_aware_tv(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    (0..instances)
        .map(|_| {
            let sr = textured(&mut rng, 3, 8, 8);
            let gt = Frame::new(8, 8, 3, (0..192).map(|_| rng.random::<f64>()).collect()).unwrap();
            let wt = losses::expand_channels(&losses::tv_weights(&gt, 0.05).unwrap(), 1, 3, 8, 8);
            relative_errors(&[sr], H, |g, v| {
                let w = g.constant(wt.clone());
                losses::region_aware_tv_g(g, v[0], w)
            })[0]
        })
        .fold(0.0, f64::max)
}

/// Probe loss on one output pixel, differentiated w.r.t. a few coordinates of
/// every weight tensor of a small generator.
pub fn generator_probe(instances: usize) -> f64 {
    let cfg = ModelConfig {
        context_radius: 1,
        base_channels: 4,
        channel_multipliers: vec![1, 2],
        norm_groups: 2,
        use_cross_attention: true,
        use_timestep_embedding: true,
        ..ModelConfig::pruned()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let gen = Generator::new(&cfg, 1000 + inst as u64).unwrap();
        let window: Vec<Frame> = (0..cfg.window_len())
            .map(|_| Frame::new(8, 8, 3, (0..192).map(|_| rng.random_range(0.3..0.7)).collect()).unwrap())
            .collect();
        let flows = vec![FlowField::uniform(8, 8, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)); 2];
        let stack = build_input(&window, &flows, &cfg).unwrap();
        let probe = rng.random_range(0..3 * 32 * 32);
        let eval = |gen: &Generator| {
            let mut g = Graph::inference();
            let x = g.constant(stack.tensor.clone());
            let y = gen.forward_stack(&mut g, x).unwrap();
            g.value(y).data()[probe]
        };
        let mut g = Graph::new();
        let x = g.constant(stack.tensor.clone());
        let y = gen.forward_stack(&mut g, x).unwrap();
        let mask = g.constant(Tensor::from_fn(g.shape(y), |i| if i == probe { 1.0 } else { 0.0 }));
        let m = g.mul(y, mask);
        let loss = g.sum(m);
        let v = g.value(loss).item();
        if !(v > 1e-3 && v < 1.0 - 1e-3) {
            continue;
        }
        let grads = g.backward(loss).params(&g, gen.store());
        let (mut an, mut nu) = (Vec::new(), Vec::new());
        for (id, grad) in &grads {
            let numel = grad.numel();
            for j in 0..numel.min(2) {
                let i = (j * 7919 + inst * 31) % numel;
                let mut plus = gen.clone();
                plus.store_mut().value_mut(*id).data_mut()[i] += H;
                let mut minus = gen.clone();
                minus.store_mut().value_mut(*id).data_mut()[i] -= H;
                an.push(grad.data()[i]);
                nu.push((eval(&plus) - eval(&minus)) / (2.0 * H));
            }
        }
        let diff = an.iter().zip(&nu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = an.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

fn small_denoiser(seed: u64) -> vsr_core::adversarial::LatentDenoiser {
    use vsr_core::adversarial::{DenoiserConfig, LatentDenoiser};
    let cfg = DenoiserConfig { channels: 8, blocks: 1, ..DenoiserConfig::default() };
    LatentDenoiser::new(&cfg, 4, seed).unwrap()
}

/// Gradient of the latent adversarial loss w.r.t. `z_gen`.
pub fn latent_adv(instances: usize) -> f64 {
    use vsr_core::adversarial::{latent_adv_loss_g, normal_tensor, sample_sigma};
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    (0..instances)
        .map(|i| {
            let den = small_denoiser(200 + i as u64);
            let zg = normal_tensor(&[2, 4, 4, 4], &mut rng);
            let zr = normal_tensor(&[2, 4, 4, 4], &mut rng);
            let noise = normal_tensor(&[2, 4, 4, 4], &mut rng);
            let sigma = vec![sample_sigma(&mut rng, 0.02, 1.0), sample_sigma(&mut rng, 0.02, 1.0)];
            relative_errors(&[zg], H, |g, v| {
                let r = g.constant(zr.clone());
                let n = g.constant(noise.clone());
                latent_adv_loss_g(g, &den, v[0], r, &sigma, n).unwrap()
            })[0]
        })
        .fold(0.0, f64::max)
}

/// Gradient of the pixel generator loss w.r.t. the fake frames.
pub fn pixel_gen(instances: usize) -> f64 {
    use vsr_core::adversarial::{pixel_gen_loss_g, PixelDiscConfig, PixelDiscriminator};
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let cfg = PixelDiscConfig { stem_channels: [4, 8, 8], head_channels: 8, ..PixelDiscConfig::default() };
    (0..instances)
        .map(|i| {
            let disc = PixelDiscriminator::new(&cfg, 300 + i as u64).unwrap();
            let fake = Tensor::from_fn(&[1, 3, 8, 8], |_| rng.random::<f64>());
            relative_errors(&[fake], H, |g, v| pixel_gen_loss_g(g, &disc, v[0]).unwrap())[0]
        })
        .fold(0.0, f64::max)
}
