use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vsr_tensor::{Adam, Graph, Tensor, Var};

use super::config::{lr_at, TrainConfig};
use super::rollout::{check_anchor, rollout_range, rollout_step, ClipFlows, FlowAlignment, FrameBuffer};
use crate::adversarial::{
    latent_adv_loss_g, normal_tensor, pixel_disc_loss_g, pixel_gen_loss_g, sample_sigma, LatentDiscriminator,
    PixelDiscriminator,
};
use crate::backbone::Generator;
use crate::data::io::{read_json, write_json};
use crate::data::{list_clip_dirs, load_training_clip, Frame, TrainingClip};
use crate::error::{Result, VsrError};
use crate::flow::FlowField;
use crate::losses::{self, LossReport};

/// A training clip with its LR alignment flows estimated once.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub clip: TrainingClip,
    pub lr_flows: ClipFlows,
}

pub fn prepare_clip(clip: TrainingClip) -> Result<PreparedClip> {
    let lr_flows = ClipFlows::estimate(clip.lr.frames())?;
    Ok(PreparedClip { clip, lr_flows })
}

/// `len` consecutive frames of a prepared clip starting at `start`.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub lr: Vec<Frame>,
    pub hr: Vec<Frame>,
    pub hr_fwd: Vec<FlowField>,
    pub hr_bwd: Vec<FlowField>,
    pub lr_flows: ClipFlows,
}

impl WindowSample {
    pub fn from_clip(p: &PreparedClip, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > p.clip.len() {
            return Err(VsrError::Contract(format!(
                "window {start}..{} outside a {}-frame clip",
                start + len,
                p.clip.len()
            )));
        }
        let end = start + len;
        Ok(Self {
            lr: p.clip.lr.frames()[start..end].to_vec(),
            hr: p.clip.hr.frames()[start..end].to_vec(),
            hr_fwd: p.clip.flows_fwd[start..end - 1].to_vec(),
            hr_bwd: p.clip.flows_bwd[start..end - 1].to_vec(),
            lr_flows: p.lr_flows.slice(start, len),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounters {
    pub generator: u64,
    pub pixel_disc: u64,
    pub latent_disc: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
    pub disc_pixel: Option<f64>,
    pub disc_latent: Option<f64>,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub rec: f64,
    pub temp: f64,
    pub tv: f64,
    pub adv_latent: f64,
    pub adv_pixel: f64,
    pub total: f64,
    pub disc_pixel: Option<f64>,
    pub disc_latent: Option<f64>,
}

impl From<&StepReport> for MetricsRecord {
    fn from(r: &StepReport) -> Self {
        Self {
            step: r.step,
            epoch: r.epoch,
            lr: r.lr,
            rec: r.loss.rec,
            temp: r.loss.temp,
            tv: r.loss.tv,
            adv_latent: r.loss.adv_latent,
            adv_pixel: r.loss.adv_pixel,
            total: r.loss.total,
            disc_pixel: r.disc_pixel,
            disc_latent: r.disc_latent,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || VsrError::Config("corrupt RNG state in checkpoint".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRecord {
    epoch: usize,
    step: u64,
    counters: UpdateCounters,
    rng: RngState,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator,
    pub latent: Option<LatentDiscriminator>,
    pub pixel: Option<PixelDiscriminator>,
    pub epoch: usize,
    pub step: u64,
    pub counters: UpdateCounters,
    gen_opt: Adam,
    pixel_opt: Option<Adam>,
    encoder_opt: Option<Adam>,
    denoiser_opt: Option<Adam>,
    rng: ChaCha8Rng,
}

const GENERATOR_SEED: u64 = 0;
const LATENT_SEED: u64 = 1_000;
const PIXEL_SEED: u64 = 2_000;
const RNG_SEED: u64 = 0x5eed;

impl TrainState {
    /// Fresh state; the latent discriminator is pretrained on `frames`.
    pub fn new(cfg: &TrainConfig, frames: &[Frame], held_out: &[Frame]) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(&cfg.model, cfg.seed.wrapping_add(GENERATOR_SEED))?;
        let latent = if cfg.ablation.latent_disc {
            Some(LatentDiscriminator::pretrain(
                frames,
                held_out,
                &cfg.adversarial,
                cfg.seed.wrapping_add(LATENT_SEED),
            )?)
        } else {
            None
        };
        let pixel = if cfg.ablation.pixel_disc {
            Some(PixelDiscriminator::new(&cfg.adversarial.pixel, cfg.seed.wrapping_add(PIXEL_SEED))?)
        } else {
            None
        };
        Ok(Self::assemble(cfg, generator, latent, pixel))
    }

    fn assemble(
        cfg: &TrainConfig,
        generator: Generator,
        latent: Option<LatentDiscriminator>,
        pixel: Option<PixelDiscriminator>,
    ) -> Self {
        Self {
            gen_opt: Adam::new(generator.store()),
            pixel_opt: pixel.as_ref().map(|p| Adam::new(p.store())),
            encoder_opt: latent.as_ref().map(|l| Adam::new(l.encoder.store())),
            denoiser_opt: latent.as_ref().map(|l| Adam::new(l.denoiser.store())),
            config: cfg.clone(),
            generator,
            latent,
            pixel,
            epoch: 0,
            step: 0,
            counters: UpdateCounters::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ RNG_SEED),
        }
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.epoch, &self.config)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
        self.generator.save(&dir.join("generator"))?;
        save_adam(&dir.join("optim_generator.bin"), &self.gen_opt)?;
        if let Some(l) = &self.latent {
            l.save(&dir.join("latent"))?;
        }
        if let Some(p) = &self.pixel {
            crate::adversarial::write_archive(&dir.join("pixel.bin"), p.store())?;
        }
        for (name, opt) in [
            ("optim_pixel.bin", &self.pixel_opt),
            ("optim_encoder.bin", &self.encoder_opt),
            ("optim_denoiser.bin", &self.denoiser_opt),
        ] {
            if let Some(o) = opt {
                save_adam(&dir.join(name), o)?;
            }
        }
        write_json(
            &dir.join("state.json"),
            &StateRecord {
                epoch: self.epoch,
                step: self.step,
                counters: self.counters,
                rng: RngState::capture(&self.rng),
            },
        )
    }

    pub fn load(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let record: StateRecord = read_json(&dir.join("state.json"))?;
        let generator = Generator::load(&dir.join("generator"))?;
        if generator.config() != &cfg.model {
            return Err(VsrError::Config("checkpoint model config differs from the run config".into()));
        }
        let latent = if cfg.ablation.latent_disc {
            Some(LatentDiscriminator::load(
                &dir.join("latent"),
                &cfg.adversarial,
                cfg.seed.wrapping_add(LATENT_SEED),
            )?)
        } else {
            None
        };
        let pixel = if cfg.ablation.pixel_disc {
            let mut p = PixelDiscriminator::new(&cfg.adversarial.pixel, cfg.seed.wrapping_add(PIXEL_SEED))?;
            p.store_mut()
                .load_values_from(&crate::adversarial::read_archive(&dir.join("pixel.bin"))?)?;
            Some(p)
        } else {
            None
        };
        let mut state = Self::assemble(cfg, generator, latent, pixel);
        state.gen_opt = load_adam(&dir.join("optim_generator.bin"))?;
        if state.pixel_opt.is_some() {
            state.pixel_opt = Some(load_adam(&dir.join("optim_pixel.bin"))?);
        }
        if state.latent.is_some() {
            state.encoder_opt = Some(load_adam(&dir.join("optim_encoder.bin"))?);
            state.denoiser_opt = Some(load_adam(&dir.join("optim_denoiser.bin"))?);
        }
        state.epoch = record.epoch;
        state.step = record.step;
        state.counters = record.counters;
        state.rng = record.rng.restore()?;
        Ok(state)
    }

    /// Draws a batch of windows from `clips`.
    pub fn sample_batch(&mut self, clips: &[PreparedClip]) -> Result<Vec<WindowSample>> {
        let len = self.config.window_frames();
        (0..self.config.batch_size)
            .map(|_| {
                let c = &clips[self.rng.random_range(0..clips.len())];
                let start = self.rng.random_range(0..=c.clip.len() - len);
                WindowSample::from_clip(c, start, len)
            })
            .collect()
    }
}

fn save_adam(path: &Path, opt: &Adam) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| VsrError::io(path, e))?;
    opt.write_state(BufWriter::new(f)).map_err(|e| VsrError::io(path, e))
}

fn load_adam(path: &Path) -> Result<Adam> {
    let f = fs::File::open(path).map_err(|e| VsrError::io(path, e))?;
    Adam::read_state(BufReader::new(f)).map_err(|e| VsrError::io(path, e))
}

fn stack(frames: impl Iterator<Item = Tensor>) -> Result<Tensor> {
    Ok(Tensor::stack_batch(&frames.collect::<Vec<_>>())?)
}

fn non_finite(term: &str, step: u64) -> VsrError {
    VsrError::NonFinite {
        term: term.into(),
        step,
    }
}

/// Output of the generator update that the discriminator update consumes.
#[derive(Debug, Clone)]
pub struct GeneratorPhase {
    pub lr: f64,
    pub loss: LossReport,
    /// Ground-truth anchor frames, `[N, C, H, W]`.
    pub real: Tensor,
    /// Anchor predictions made before the update, `[N, C, H, W]`.
    pub fake: Tensor,
}

/// One generator update (phase A) followed by one update of each enabled
/// discriminator (phase B).
pub fn train_step(state: &mut TrainState, batch: &[WindowSample]) -> Result<StepReport> {
    let step = state.step;
    let a = generator_phase(state, batch)?;
    let (disc_pixel, disc_latent) = discriminator_phase(state, &a.real, &a.fake, a.lr)?;
    state.step += 1;
    Ok(StepReport {
        step,
        epoch: state.epoch,
        lr: a.lr,
        loss: a.loss,
        disc_pixel,
        disc_latent,
    })
}

/// Rolls the batch out to the anchor and applies one generator update.
/// Discriminator weights are read but never written.
pub fn generator_phase(state: &mut TrainState, batch: &[WindowSample]) -> Result<GeneratorPhase> {
    let cfg = state.config.clone();
    let lcfg = &cfg.loss;
    let k = cfg.model.context_radius;
    let a = cfg.anchor_index();
    let len = cfg.window_frames();
    if batch.is_empty() {
        return Err(VsrError::Contract("empty batch".into()));
    }
    for s in batch {
        if s.lr.len() != len {
            return Err(VsrError::Contract(format!("window of {} frames, expected {len}", s.lr.len())));
        }
    }
    check_anchor(len, k, a)?;
    let lr = state.lr();
    let step = state.step;
    let n = batch.len();
    let temporal = cfg.ablation.temporal_loss;
    let d_max = lcfg.window_d;

    // rollout up to the anchor; predictions before it are constants
    let windows: Vec<&[Frame]> = batch.iter().map(|s| s.lr.as_slice()).collect();
    let mut buffer = FrameBuffer::from_windows(&windows)?;
    let align = FlowAlignment {
        items: batch.iter().map(|s| &s.lr_flows).collect(),
    };
    let start = if cfg.ablation.recurrent {
        k
    } else if temporal {
        a - d_max
    } else {
        a
    };
    let mut context = rollout_range(&state.generator, &mut buffer, start, a, &align, cfg.ablation.recurrent)?;
    if cfg.ablation.recurrent && cfg.second_sweep {
        context = rollout_range(&state.generator, &mut buffer, start, a, &align, true)?;
    }

    // phase A
    let mut g = Graph::new();
    let sr = rollout_step(&mut g, &state.generator, &buffer, a, &align)?;
    let (_, c, hh, ww) = g.value(sr).dims4()?;
    let gt_t = stack(batch.iter().map(|s| s.hr[a].to_tensor()))?;
    if gt_t.shape() != g.shape(sr) {
        return Err(VsrError::Dimension(format!(
            "prediction {:?} vs ground truth {:?}",
            g.shape(sr),
            gt_t.shape()
        )));
    }
    let gt = g.constant(gt_t.clone());
    let rec = losses::reconstruction_loss_g(&mut g, sr, gt, lcfg.eps);
    let mut weighted = g.scale(rec, lcfg.lambda_rec);

    let temp = if temporal {
        let planned: Vec<Vec<losses::TemporalTerm>> = batch
            .iter()
            .map(|s| losses::temporal_terms(&s.hr_fwd[..a], Some(&s.hr_bwd[..a]), d_max, lcfg))
            .collect::<Result<_>>()?;
        let mut terms = Vec::with_capacity(d_max);
        for d in 0..d_max {
            let warps: Vec<Rc<vsr_tensor::SpatialMap>> =
                planned.iter().map(|p| Rc::new(p[d].flow.warp_operator())).collect();
            let weights: Vec<f64> = planned.iter().flat_map(|p| p[d].weights.iter().copied()).collect();
            let wv = g.constant(losses::expand_channels(&weights, n, c, hh, ww));
            terms.push((d + 1, warps, wv));
        }
        let mut srs: Vec<Var> = (1..=d_max)
            .rev()
            .map(|d| g.constant(context[context.len() - d].clone()))
            .collect();
        srs.push(sr);
        let t = losses::multi_frame_temporal_loss_g(&mut g, &srs, &terms, lcfg.gamma, lcfg.eps)?;
        let s = g.scale(t, lcfg.lambda_temp);
        weighted = g.add(weighted, s);
        Some(t)
    } else {
        None
    };

    let tv_w: Vec<f64> = batch
        .iter()
        .map(|s| losses::tv_weights(&s.hr[a], lcfg.tau))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let tv_wv = g.constant(losses::expand_channels(&tv_w, n, c, hh, ww));
    let tv = losses::region_aware_tv_g(&mut g, sr, tv_wv);
    let s = g.scale(tv, lcfg.lambda_tv);
    weighted = g.add(weighted, s);

    let adv_latent = match &state.latent {
        Some(disc) => {
            let z_gen = disc.encoder.encode_g(&mut g, sr)?;
            let z_real = disc.encoder.encode_g(&mut g, gt)?;
            let dcfg = &disc.denoiser.config;
            let sigma: Vec<f64> = (0..n)
                .map(|_| sample_sigma(&mut state.rng, dcfg.sigma_min, dcfg.sigma_max))
                .collect();
            let noise = g.constant(normal_tensor(g.shape(z_gen), &mut state.rng));
            let l = latent_adv_loss_g(&mut g, &disc.denoiser, z_gen, z_real, &sigma, noise)?;
            let s = g.scale(l, lcfg.lambda_adv_latent);
            weighted = g.add(weighted, s);
            Some(l)
        }
        None => None,
    };
    let adv_pixel = match &state.pixel {
        Some(disc) => {
            let l = pixel_gen_loss_g(&mut g, disc, sr)?;
            let s = g.scale(l, lcfg.lambda_adv_pixel);
            weighted = g.add(weighted, s);
            Some(l)
        }
        None => None,
    };

    let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let report = LossReport::new(
        lcfg,
        g.value(rec).item(),
        val(temp),
        g.value(tv).item(),
        val(adv_latent),
        val(adv_pixel),
    );
    if let Some(term) = report.non_finite_term() {
        return Err(non_finite(term, step));
    }
    let grads = g.backward(weighted).params(&g, state.generator.store());
    state.gen_opt.step(state.generator.store_mut(), &grads, lr)?;
    state.counters.generator += 1;
    Ok(GeneratorPhase {
        lr,
        loss: report,
        real: gt_t,
        fake: g.value(sr).clone(),
    })
}

/// Applies one update to each enabled discriminator. Generator weights are
/// never touched; `lr` is the generator's scheduled rate for this step.
pub fn discriminator_phase(
    state: &mut TrainState,
    real: &Tensor,
    fake: &Tensor,
    lr: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    let cfg = state.config.clone();
    let step = state.step;
    let disc_scale = lr / cfg.lr;
    let disc_pixel = match (&mut state.pixel, &mut state.pixel_opt) {
        (Some(disc), Some(opt)) => {
            let mut g = Graph::new();
            let real = g.constant(real.clone());
            let fake = g.constant(fake.clone());
            let loss = pixel_disc_loss_g(&mut g, disc, real, fake)?;
            let v = g.value(loss).item();
            if !v.is_finite() {
                return Err(non_finite("disc_pixel", step));
            }
            let grads = g.backward(loss).params(&g, disc.store());
            let plr = disc.config.learning_rate * disc_scale;
            opt.step(disc.store_mut(), &grads, plr)?;
            state.counters.pixel_disc += 1;
            Some(v)
        }
        _ => None,
    };
    let disc_latent = match (&mut state.latent, &mut state.encoder_opt, &mut state.denoiser_opt) {
        (Some(disc), Some(eopt), Some(dopt)) => {
            let mut g = Graph::new();
            let real = g.constant(real.clone());
            let z = disc.encoder.encode_g(&mut g, real)?;
            let dsm = disc.denoiser.dsm_loss_g(&mut g, z, &mut state.rng)?;
            let recon = disc.encoder.decode_g(&mut g, z)?;
            let diff = g.sub(recon, real);
            let sq = g.square(diff);
            let mse = g.mean(sq);
            let mse = g.scale(mse, cfg.adversarial.adapter_reconstruction_weight);
            let loss = g.add(dsm, mse);
            let v = g.value(loss).item();
            if !v.is_finite() {
                return Err(non_finite("disc_latent", step));
            }
            let grads = g.backward(loss);
            let alr = cfg.adversarial.adapter_learning_rate * disc_scale;
            let eg = grads.params(&g, disc.encoder.store());
            let dg = grads.params(&g, disc.denoiser.store());
            eopt.step(disc.encoder.store_mut(), &eg, alr)?;
            dopt.step(disc.denoiser.store_mut(), &dg, alr)?;
            state.counters.latent_disc += 1;
            Some(v)
        }
        _ => None,
    };
    Ok((disc_pixel, disc_latent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps_run: u64,
    pub final_step: u64,
    pub final_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsHeader {
    header: HeaderBody,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderBody {
    format: String,
    version: u32,
    seed: u64,
    steps_per_epoch: usize,
    total_epochs: usize,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch:04}")
}

fn load_prepared(data_dir: &Path, cfg: &TrainConfig) -> Result<Vec<PreparedClip>> {
    let dirs = list_clip_dirs(data_dir)?;
    if dirs.is_empty() {
        return Err(VsrError::Config(format!("no clip_* directories in {}", data_dir.display())));
    }
    let need = cfg.window_frames();
    dirs.iter()
        .map(|d| {
            let clip = load_training_clip(d)?;
            if clip.len() < need {
                return Err(VsrError::Config(format!(
                    "{} holds {} frames; training windows need {need}",
                    d.display(),
                    clip.len()
                )));
            }
            prepare_clip(clip)
        })
        .collect()
}

/// Keeps the header and the records of steps before `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let f = fs::File::open(path).map_err(|e| VsrError::io(path, e))?;
    let mut kept = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| VsrError::io(path, e))?;
        if i == 0 {
            kept.push(line);
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line).map_err(|e| VsrError::io(path, e))?;
        if rec.step < step {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| VsrError::io(path, e))
}

/// Trains on every clip under `data_dir`, writing `config.json`,
/// `metrics.jsonl` and `ckpt_epoch_%04d` checkpoints to `out_dir`.
pub fn train(cfg: &TrainConfig, data_dir: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let clips = load_prepared(data_dir, cfg)?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut state = match resume {
        Some(ckpt) => {
            let state = TrainState::load(ckpt, cfg)?;
            if state.epoch >= cfg.total_epochs {
                return Ok(TrainSummary {
                    checkpoint: ckpt.to_path_buf(),
                    steps_run: 0,
                    final_step: state.step,
                    final_epoch: state.epoch,
                });
            }
            truncate_metrics(&metrics_path, state.step)?;
            state
        }
        None => {
            let mut frames = Vec::new();
            let mut held_out = Vec::new();
            for (i, c) in clips.iter().enumerate() {
                if clips.len() > 1 && i + 1 == clips.len() {
                    held_out.extend(c.clip.hr.frames().iter().cloned());
                } else {
                    frames.extend(c.clip.hr.frames().iter().cloned());
                }
            }
            let state = TrainState::new(cfg, &frames, &held_out)?;
            fs::create_dir_all(out_dir).map_err(|e| VsrError::io(out_dir, e))?;
            write_json(&out_dir.join("config.json"), cfg)?;
            let header = MetricsHeader {
                header: HeaderBody {
                    format: "vsr-metrics".into(),
                    version: 1,
                    seed: cfg.seed,
                    steps_per_epoch: cfg.steps_per_epoch,
                    total_epochs: cfg.total_epochs,
                },
            };
            let line = serde_json::to_string(&header).map_err(|e| VsrError::io(&metrics_path, e))?;
            fs::write(&metrics_path, line + "\n").map_err(|e| VsrError::io(&metrics_path, e))?;
            state.save(&out_dir.join(checkpoint_name(0)))?;
            state
        }
    };
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| VsrError::io(&metrics_path, e))?;
    let first_step = state.step;
    let mut last_ckpt = out_dir.join(checkpoint_name(state.epoch));
    while state.epoch < cfg.total_epochs {
        for _ in 0..cfg.steps_per_epoch {
            let batch = state.sample_batch(&clips)?;
            let report = train_step(&mut state, &batch)?;
            let line = serde_json::to_string(&MetricsRecord::from(&report)).map_err(|e| VsrError::io(&metrics_path, e))?;
            writeln!(log, "{line}").map_err(|e| VsrError::io(&metrics_path, e))?;
        }
        state.epoch += 1;
        if state.epoch % cfg.checkpoint_every_epochs == 0 || state.epoch == cfg.total_epochs {
            log.flush().map_err(|e| VsrError::io(&metrics_path, e))?;
            last_ckpt = out_dir.join(checkpoint_name(state.epoch));
            state.save(&last_ckpt)?;
        }
    }
    Ok(TrainSummary {
        checkpoint: last_ckpt,
        steps_run: state.step - first_step,
        final_step: state.step,
        final_epoch: state.epoch,
    })
}
