use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vsr_tensor::{Graph, ParamStore, SpatialMap, Tensor, Var};

use super::layers::{timestep_embedding, AttnBlock, Conv, Norm, ResBlock};
use super::window::{check_window, WindowModel};
use super::{InputStack, ModelConfig};
use crate::data::io::{read_json, write_json};
use crate::data::Frame;
use crate::error::{Result, VsrError};
use crate::resample;

/// Diffusion timestep the reference trunk is conditioned on (one-step regime).
const FIXED_TIMESTEP: f64 = 999.0;

#[derive(Debug, Clone)]
struct Stage {
    down: Option<Conv>,
    blocks: Vec<(ResBlock, Option<AttnBlock>)>,
}

#[derive(Debug, Clone)]
struct UpStage {
    up: Conv,
    blocks: Vec<(ResBlock, Option<AttnBlock>)>,
}

/// Encoder–decoder trunk with a pixel-shuffle head and a bicubic global
/// residual from the centre LR frame.
#[derive(Debug, Clone)]
pub struct Generator {
    config: ModelConfig,
    store: ParamStore,
    stem: Conv,
    time_embed: Option<(Conv, Conv)>,
    encoder: Vec<Stage>,
    bottleneck: Vec<(ResBlock, Option<AttnBlock>)>,
    decoder: Vec<UpStage>,
    head_norm: Norm,
    head: Conv,
}

impl Generator {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths: Vec<usize> = cfg.channel_multipliers.iter().map(|m| m * cfg.base_channels).collect();
        let groups = cfg.norm_groups;

        // Stem: one frame's worth of random weights, replicated over the
        // window and divided by its length.
        let per_frame = cfg.in_channels * cfg.unshuffle_factor * cfg.unshuffle_factor;
        let n = cfg.window_len();
        let std = (2.0 / (per_frame * 9) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let block: Vec<f64> = (0..widths[0] * per_frame * 9).map(|_| normal.sample(&mut rng)).collect();
        let stem_w = Tensor::from_fn(&[widths[0], n * per_frame, 3, 3], |i| {
            let o = i / (n * per_frame * 9);
            let rest = i % (n * per_frame * 9);
            let ci = (rest / 9) % per_frame;
            block[(o * per_frame + ci) * 9 + rest % 9] / n as f64
        });
        let stem = Conv {
            w: store.insert("stem.weight", stem_w, true),
            b: Some(store.insert("stem.bias", Tensor::zeros(&[widths[0]]), true)),
            stride: 1,
            pad: 1,
        };

        let tdim = 4 * cfg.base_channels;
        let time_embed = cfg.use_timestep_embedding.then(|| {
            (
                Conv::new(&mut store, "time_embed.0", cfg.base_channels, tdim, 1, 1, true, 1.0, &mut rng),
                Conv::new(&mut store, "time_embed.2", tdim, tdim, 1, 1, true, 1.0, &mut rng),
            )
        });
        let time_dim = cfg.use_timestep_embedding.then_some(tdim);
        let ctx_dim = 4 * cfg.base_channels;

        let make_blocks = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, count: usize| {
            (0..count)
                .map(|j| {
                    let bin = if j == 0 { cin } else { cout };
                    let res = ResBlock::new(store, &format!("{name}.res{j}"), bin, cout, groups, time_dim, rng);
                    let attn = cfg
                        .use_cross_attention
                        .then(|| AttnBlock::new(store, &format!("{name}.attn{j}"), cout, groups, ctx_dim, rng));
                    (res, attn)
                })
                .collect::<Vec<_>>()
        };

        let mut encoder = Vec::new();
        for (l, &c) in widths.iter().enumerate() {
            let down = (l > 0).then(|| {
                Conv::new(&mut store, &format!("enc{l}.down"), widths[l - 1], c, 3, 2, true, 1.0, &mut rng)
            });
            let blocks = make_blocks(&mut store, &mut rng, &format!("enc{l}"), c, c, cfg.num_res_blocks_per_level);
            encoder.push(Stage { down, blocks });
        }
        let top = *widths.last().unwrap();
        let bottleneck = make_blocks(&mut store, &mut rng, "mid", top, top, cfg.bottleneck_blocks);
        let mut decoder = Vec::new();
        for l in (0..widths.len() - 1).rev() {
            let up = Conv::new(&mut store, &format!("dec{l}.up"), widths[l + 1], widths[l], 3, 1, true, 1.0, &mut rng);
            let blocks = make_blocks(
                &mut store,
                &mut rng,
                &format!("dec{l}"),
                2 * widths[l],
                widths[l],
                cfg.num_res_blocks_per_level,
            );
            decoder.push(UpStage { up, blocks });
        }
        let head_norm = Norm::new(&mut store, "head.norm", widths[0], groups.min(widths[0]));
        let su = cfg.upscale_factor * cfg.unshuffle_factor;
        let head = Conv::new(
            &mut store,
            "head.conv",
            widths[0],
            cfg.in_channels * su * su,
            3,
            1,
            true,
            0.1,
            &mut rng,
        );
        Ok(Self {
            config: cfg,
            store,
            stem,
            time_embed,
            encoder,
            bottleneck,
            decoder,
            head_norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    fn run_blocks(
        &self,
        g: &mut Graph,
        blocks: &[(ResBlock, Option<AttnBlock>)],
        mut h: Var,
        temb: Option<Var>,
    ) -> Var {
        for (res, attn) in blocks {
            h = res.forward(g, &self.store, h, temb);
            if let Some(a) = attn {
                h = a.forward(g, &self.store, h);
            }
        }
        h
    }

    /// Runs the trunk on an unshuffled input stack `[N, (2k+1)·C·u², h/u, w/u]`
    /// and returns the SR batch `[N, C, s·h, s·w]`.
    pub fn forward_stack(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let (_, c, fh, fw) = g.value(x).dims4()?;
        if c != cfg.input_channels() {
            return Err(VsrError::Config(format!(
                "input stack has {c} channels, model expects {}",
                cfg.input_channels()
            )));
        }
        let levels = cfg.channel_multipliers.len();
        let m = 1usize << (levels - 1);
        if fh % m != 0 || fw % m != 0 {
            return Err(VsrError::Dimension(format!(
                "LR size must be a multiple of {} (got {}x{})",
                cfg.size_multiple(),
                fh * cfg.unshuffle_factor,
                fw * cfg.unshuffle_factor
            )));
        }
        let u = cfg.unshuffle_factor;
        let per_frame = cfg.in_channels * u * u;
        let centre = g.slice_channels(x, cfg.context_radius * per_frame, per_frame);
        let centre = g.pixel_shuffle(centre, u);
        let (lh, lw) = (fh * u, fw * u);
        let s = cfg.upscale_factor;
        let skip = g.spatial(centre, vec![Rc::new(resample::resize_map(lh, lw, lh * s, lw * s))]);

        let temb = match &self.time_embed {
            Some((a, b)) => {
                let t = g.constant(timestep_embedding(FIXED_TIMESTEP, cfg.base_channels));
                let t = a.forward(g, &self.store, t);
                let t = g.silu(t);
                Some(b.forward(g, &self.store, t))
            }
            None => None,
        };

        let mut h = self.stem.forward(g, &self.store, x);
        let mut skips = Vec::with_capacity(levels);
        for stage in &self.encoder {
            if let Some(d) = &stage.down {
                h = d.forward(g, &self.store, h);
            }
            h = self.run_blocks(g, &stage.blocks, h, temb);
            skips.push(h);
        }
        h = self.run_blocks(g, &self.bottleneck, h, temb);
        for (stage, l) in self.decoder.iter().zip((0..levels - 1).rev()) {
            let (_, _, hh, ww) = g.value(h).dims4()?;
            h = g.spatial(h, vec![Rc::new(resample::nearest_up_map(hh, ww, 2))]);
            h = stage.up.forward(g, &self.store, h);
            h = g.concat_channels(&[h, skips[l]]);
            h = self.run_blocks(g, &stage.blocks, h, temb);
        }
        let h = self.head_norm.forward(g, &self.store, h);
        let h = g.silu(h);
        let h = self.head.forward(g, &self.store, h);
        let h = g.pixel_shuffle(h, s * u);
        let out = g.add(h, skip);
        Ok(g.clamp(out, 0.0, 1.0))
    }

    /// Single deterministic forward pass on one input stack.
    pub fn infer(&self, stack: &InputStack) -> Result<Frame> {
        let mut g = Graph::inference();
        let x = g.constant(stack.tensor.clone());
        let y = self.forward_stack(&mut g, x)?;
        Frame::from_tensor(g.value(y))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
        let wpath = dir.join("weights.bin");
        let f = File::create(&wpath).map_err(|e| VsrError::io(&wpath, e))?;
        self.store
            .write_archive(BufWriter::new(f))
            .map_err(|e| VsrError::io(&wpath, e))?;
        write_json(&dir.join("config.json"), &self.config)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = read_json(&dir.join("config.json"))?;
        let mut g = Generator::new(&config, 0)?;
        let wpath = dir.join("weights.bin");
        let f = File::open(&wpath).map_err(|e| VsrError::io(&wpath, e))?;
        let stored = ParamStore::read_archive(BufReader::new(f)).map_err(|e| VsrError::io(&wpath, e))?;
        g.store
            .load_values_from(&stored)
            .map_err(|e| VsrError::io(&wpath, format!("weights do not match config.json: {e}")))?;
        Ok(g)
    }
}

impl WindowModel for Generator {
    fn context_radius(&self) -> usize {
        self.config.context_radius
    }

    fn upscale(&self) -> usize {
        self.config.upscale_factor
    }

    fn forward_window(&self, g: &mut Graph, window: &[Var], warps: &[Option<Vec<Rc<SpatialMap>>>]) -> Result<Var> {
        check_window(self.config.context_radius, window, warps)?;
        let aligned: Vec<Var> = window
            .iter()
            .zip(warps)
            .map(|(&f, w)| match w {
                Some(maps) => {
                    let moved = g.spatial(f, maps.clone());
                    g.clamp(moved, 0.0, 1.0)
                }
                None => f,
            })
            .collect();
        let stacked = g.concat_channels(&aligned);
        let x = g.pixel_unshuffle(stacked, self.config.unshuffle_factor);
        self.forward_stack(g, x)
    }
}

/// Parameters of a freshly instantiated generator for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(Generator::new(cfg, 0)?.param_count())
}

/// `1 − count(pruned) / count(reference)`.
pub fn reduction_ratio(pruned: &ModelConfig, reference: &ModelConfig) -> Result<f64> {
    Ok(1.0 - param_count(pruned)? as f64 / param_count(reference)? as f64)
}
