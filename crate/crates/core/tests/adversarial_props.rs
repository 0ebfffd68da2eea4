use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsr_core::adversarial::{
    gen_loss_from_scores_g, hinge_loss_g, latent_adv_loss, latent_score, normal_tensor, pixel_disc_loss_g,
    pretrain_latent_encoder, AdversarialConfig, AutoencoderConfig, Denoiser, DenoiserConfig, LatentAutoencoder,
    LatentDenoiser, LatentDiscriminator, PixelDiscConfig, PixelDiscriminator,
};
use vsr_core::data::{generate_synthetic_clip, Frame, SceneTemplate};
use vsr_core::{Result, VsrError};
use vsr_tensor::{Adam, Graph, ParamStore, Tensor, Var};

struct Identity;

impl Denoiser for Identity {
    fn denoise_g(&self, _g: &mut Graph, x: Var, _sigma: &[f64]) -> Result<Var> {
        Ok(x)
    }
}

/// `D(x) = x − σ·noise`, i.e. a perfect denoiser for the known noise.
struct Oracle(Tensor);

impl Denoiser for Oracle {
    fn denoise_g(&self, g: &mut Graph, x: Var, sigma: &[f64]) -> Result<Var> {
        let n = g.constant(self.0.clone());
        let sn = g.scale(n, sigma[0]);
        Ok(g.sub(x, sn))
    }
}

/// Linear channel mixing `D(x) = A·x` per pixel.
struct Linear([[f64; 2]; 2]);

impl Denoiser for Linear {
    fn denoise_g(&self, g: &mut Graph, x: Var, _sigma: &[f64]) -> Result<Var> {
        let a = self.0;
        let w = g.constant(Tensor::from_vec(&[2, 2, 1, 1], vec![a[0][0], a[0][1], a[1][0], a[1][1]]).unwrap());
        Ok(g.conv2d(x, w, None, 1, 0))
    }
}

fn frames(n: usize, seed: u64) -> Vec<Frame> {
    let tpl = SceneTemplate { height: 32, width: 32, num_frames: 2, ..SceneTemplate::default() };
    (0..n)
        .map(|i| {
            let spec = tpl.sample(seed + i as u64);
            generate_synthetic_clip(&spec).unwrap().clip.frames()[0].clone()
        })
        .collect()
}

#[test]
fn score_stubs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = normal_tensor(&[1, 2, 3, 3], &mut rng);
    let noise = normal_tensor(&[1, 2, 3, 3], &mut rng);
    let s = latent_score(&Identity, &z, 0.5, &noise).unwrap();
    for (a, b) in s.data().iter().zip(noise.data()) {
        assert!((a - b / 0.5).abs() < 1e-12);
    }
    let s = latent_score(&Oracle(noise.clone()), &z, 0.5, &noise).unwrap();
    assert!(s.data().iter().all(|v| v.abs() < 1e-12));
    assert!(matches!(latent_score(&Identity, &z, 0.0, &noise), Err(VsrError::Config(_))));
    assert!(matches!(latent_score(&Identity, &z, -1.0, &noise), Err(VsrError::Config(_))));
    let bad = normal_tensor(&[1, 2, 3, 4], &mut rng);
    assert!(matches!(latent_score(&Identity, &z, 0.5, &bad), Err(VsrError::Dimension(_))));
}

#[test]
fn adv_loss_closed_form_with_linear_stub() {
    let a = [[1.5, -0.5], [0.25, 0.75]];
    let zg = Tensor::from_vec(&[1, 2, 2, 2], vec![0.1, 0.4, -0.3, 0.2, 0.7, -0.1, 0.0, 0.5]).unwrap();
    let zr = Tensor::from_vec(&[1, 2, 2, 2], vec![-0.2, 0.3, 0.1, 0.6, 0.2, 0.2, -0.4, 0.1]).unwrap();
    let noise = Tensor::from_fn(&[1, 2, 2, 2], |i| (i as f64 * 0.7).sin());
    let sigma = 0.3;
    let l = latent_adv_loss(&Linear(a), &zg, &zr, sigma, &noise).unwrap();
    let mut expect = 0.0;
    for p in 0..4 {
        let d = [zg.data()[p] - zr.data()[p], zg.data()[4 + p] - zr.data()[4 + p]];
        for r in 0..2 {
            let v = a[r][0] * d[0] + a[r][1] * d[1] - d[r];
            expect += v * v / sigma.powi(4);
        }
    }
    expect /= 8.0;
    assert!((l - expect).abs() < 1e-12 * expect.max(1.0), "{l} vs {expect}");
    let shift = |t: &Tensor| Tensor::from_vec(t.shape(), t.data().iter().map(|v| v + 0.37).collect()).unwrap();
    let shifted = latent_adv_loss(&Linear(a), &shift(&zg), &shift(&zr), sigma, &noise).unwrap();
    assert!((shifted - l).abs() < 1e-9 * l);
    assert_eq!(latent_adv_loss(&Linear(a), &zg, &zg, sigma, &noise).unwrap(), 0.0);
    let other = Tensor::zeros(&[1, 2, 2, 3]);
    assert!(matches!(latent_adv_loss(&Linear(a), &zg, &other, sigma, &noise), Err(VsrError::Dimension(_))));
}

#[test]
fn zero_adapters_preserve_frozen_outputs_bit_exactly() {
    let cfg = AdversarialConfig::default();
    let ae = LatentAutoencoder::new(&cfg.autoencoder, 3).unwrap();
    let den = LatentDenoiser::new(&cfg.denoiser, 4, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frame = &frames(1, 9)[0];
    let z0 = ae.encode(frame).unwrap();
    let noise = normal_tensor(z0.shape(), &mut rng);
    let s0 = latent_score(&den, &z0, 1.0, &noise).unwrap();
    let disc = LatentDiscriminator::new(ae, den, &cfg, 6).unwrap();
    assert!(disc.adapter_params > 0);
    assert!(disc.encoder.has_adapters() && disc.denoiser.has_adapters());
    let z1 = disc.encoder.encode(frame).unwrap();
    assert_eq!(z0.data(), z1.data());
    let s1 = latent_score(&disc.denoiser, &z1, 1.0, &noise).unwrap();
    assert_eq!(s0.data(), s1.data());
    assert_eq!(latent_adv_loss(&disc.denoiser, &z1, &z1, 0.1, &noise).unwrap(), 0.0);
    // only adapters are trainable
    for store in [disc.encoder.store(), disc.denoiser.store()] {
        for (_, p) in store.iter() {
            assert_eq!(p.trainable, p.name.contains("lora"), "{}", p.name);
        }
    }
}

#[test]
fn hinge_and_generator_losses_on_stub_scores() {
    let eval = |real: f64, fake: f64| {
        let mut g = Graph::inference();
        let r = g.constant(Tensor::full(&[2, 1, 3, 3], real));
        let f = g.constant(Tensor::full(&[2, 1, 3, 3], fake));
        let l = hinge_loss_g(&mut g, r, f);
        g.value(l).item()
    };
    assert_eq!(eval(1.0, -1.0), 0.0);
    assert_eq!(eval(0.0, 0.0), 2.0);
    assert_eq!(eval(-1.0, 1.0), 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for c in [-0.7, 0.0, 2.5] {
        let mut g = Graph::inference();
        let s = g.constant(Tensor::full(&[1, 1, 4, 4], c));
        let l = gen_loss_from_scores_g(&mut g, s);
        assert!((g.value(l).item() + c).abs() < 1e-15);
    }
    let scores = Tensor::from_fn(&[2, 1, 5, 5], |_| rng.random_range(-3.0..3.0));
    let mut g = Graph::inference();
    let s = g.constant(scores.clone());
    let l = gen_loss_from_scores_g(&mut g, s);
    let brute = -scores.data().iter().sum::<f64>() / scores.numel() as f64;
    assert!((g.value(l).item() - brute).abs() < 1e-10);
}

#[test]
fn discriminator_phase_sends_no_gradient_to_the_generator() {
    let disc = PixelDiscriminator::new(&PixelDiscConfig::default(), 0).unwrap();
    let mut gen_store = ParamStore::new();
    let gid = gen_store.insert("fake", Tensor::full(&[1, 3, 8, 8], 0.3), true);
    let mut g = Graph::new();
    let fake = g.param(&gen_store, gid);
    let real = g.constant(Tensor::full(&[1, 3, 8, 8], 0.7));
    let loss = pixel_disc_loss_g(&mut g, &disc, real, fake).unwrap();
    let grads = g.backward(loss);
    assert!(grads.params(&g, &gen_store).is_empty());
    assert!(!grads.params(&g, disc.store()).is_empty());
    for (id, _) in grads.params(&g, disc.store()) {
        assert!(disc.store().get(id).name.starts_with("head"));
    }
}

#[test]
fn pixel_discriminator_separates_toy_distributions() {
    let mut disc = PixelDiscriminator::new(&PixelDiscConfig::default(), 1).unwrap();
    let mut opt = Adam::new(disc.store());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut last = f64::INFINITY;
    for _ in 0..150 {
        // real: bright smooth frames, fake: dark noisy frames
        let real = Tensor::from_fn(&[2, 3, 16, 16], |_| 0.7 + 0.05 * rng.random::<f64>());
        let fake = Tensor::from_fn(&[2, 3, 16, 16], |_| 0.3 * rng.random::<f64>());
        let mut g = Graph::new();
        let r = g.constant(real);
        let f = g.constant(fake);
        let loss = pixel_disc_loss_g(&mut g, &disc, r, f).unwrap();
        last = g.value(loss).item();
        let grads = g.backward(loss).params(&g, disc.store());
        let lr = disc.config.learning_rate;
        opt.step(disc.store_mut(), &grads, lr).unwrap();
    }
    assert!(last < 0.5, "hinge {last}");
}

#[test]
fn autoencoder_contracts() {
    let cfg = AutoencoderConfig::default();
    let data = frames(4, 20);
    let fresh = pretrain_latent_encoder(&data, &[], 0, &cfg, 7).unwrap();
    assert!(fresh.metadata.untrained);
    assert_eq!(fresh.metadata.psnr_db, None);
    let z = fresh.encode(&data[0]).unwrap();
    assert_eq!(z.shape(), &[1, 4, 8, 8]);
    assert!(matches!(pretrain_latent_encoder(&[], &[], 5, &cfg, 7), Err(VsrError::Contract(_))));

    let fixed = Tensor::stack_batch(&data.iter().map(|f| f.to_tensor()).collect::<Vec<_>>()).unwrap();
    let loss_of = |ae: &LatentAutoencoder| {
        let mut g = Graph::inference();
        let x = g.constant(fixed.clone());
        let z = ae.encode_g(&mut g, x).unwrap();
        let y = ae.decode_g(&mut g, z).unwrap();
        let d = g.sub(y, x);
        let sq = g.square(d);
        let m = g.mean(sq);
        g.value(m).item()
    };
    let trained = pretrain_latent_encoder(&data, &data, 60, &cfg, 7).unwrap();
    assert!(!trained.metadata.untrained);
    assert!(trained.metadata.psnr_db.is_some());
    assert!(loss_of(&trained) <= loss_of(&fresh));
    let again = pretrain_latent_encoder(&data, &data, 60, &cfg, 7).unwrap();
    assert_eq!(again.metadata, trained.metadata);

    let dir = tempfile::tempdir().unwrap();
    trained.save(dir.path()).unwrap();
    let back = LatentAutoencoder::load(dir.path()).unwrap();
    assert_eq!(back.encode(&data[1]).unwrap(), trained.encode(&data[1]).unwrap());
}

#[test]
fn adapter_training_leaves_frozen_weights_untouched() {
    let cfg = AdversarialConfig {
        denoiser: DenoiserConfig { channels: 8, blocks: 1, ..DenoiserConfig::default() },
        ..AdversarialConfig::default()
    };
    let ae = LatentAutoencoder::new(&cfg.autoencoder, 1).unwrap();
    let den = LatentDenoiser::new(&cfg.denoiser, 4, 2).unwrap();
    let mut disc = LatentDiscriminator::new(ae, den, &cfg, 3).unwrap();
    let frozen: Vec<Tensor> = disc
        .denoiser
        .store()
        .iter()
        .filter(|(_, p)| !p.trainable)
        .map(|(_, p)| p.value.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = normal_tensor(&[2, 4, 4, 4], &mut rng);
    let noise_before = normal_tensor(z.shape(), &mut ChaCha8Rng::seed_from_u64(9));
    let before = latent_score(&disc.denoiser, &z, 0.5, &noise_before).unwrap();
    let mut opt = Adam::new(disc.denoiser.store());
    for _ in 0..2 {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let loss = disc.denoiser.dsm_loss_g(&mut g, zv, &mut rng).unwrap();
        let grads = g.backward(loss).params(&g, disc.denoiser.store());
        opt.step(disc.denoiser.store_mut(), &grads, 1e-2).unwrap();
    }
    let after_frozen: Vec<Tensor> = disc
        .denoiser
        .store()
        .iter()
        .filter(|(_, p)| !p.trainable)
        .map(|(_, p)| p.value.clone())
        .collect();
    assert_eq!(frozen, after_frozen);
    let after = latent_score(&disc.denoiser, &z, 0.5, &noise_before).unwrap();
    assert_ne!(before.data(), after.data());
}
