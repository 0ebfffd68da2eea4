use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, VideoClip};
use crate::error::{Result, VsrError};
use crate::flow::{FlowField, VisibilityMask};

/// Background texture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Checker,
    SinusoidTexture,
    /// Smooth low-contrast background; texture is carried by the sprites.
    TexturedSprites,
}

/// Axis-aligned textured rectangle moving at constant velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    /// Pixels per frame, `[dx, dy]`.
    pub velocity: [f64; 2],
}

/// Opaque flat-coloured rectangle drawn above all sprites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub velocity: [f64; 2],
    pub color: [f64; 3],
}

/// Fully determined piecewise-rigid scene.
///
/// Layers are drawn back to front: background, sprites in order, occluders
/// in order. Pixel `(x, y)` samples the scene at its integer coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub pattern: Pattern,
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    #[serde(default)]
    pub background_velocity: [f64; 2],
    #[serde(default)]
    pub sprites: Vec<Sprite>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    30.0
}

/// A rendered clip with exact ground-truth motion for every consecutive pair.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub clip: VideoClip,
    /// `gt_flows[i]` lives on frame `i+1` and points into frame `i`.
    pub gt_flows: Vec<FlowField>,
    /// Pixels of frame `i+1` that are visible in frame `i`.
    pub gt_visibility: Vec<VisibilityMask>,
    /// `forward_flows[i]` lives on frame `i` and points into frame `i+1`.
    pub forward_flows: Vec<FlowField>,
    /// Pixels of frame `i` that are visible in frame `i+1`.
    pub forward_visibility: Vec<VisibilityMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Background,
    Sprite(usize),
    Occluder(usize),
}

#[derive(Debug, Clone)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

#[derive(Debug, Clone)]
enum Texture {
    Checker { cell: f64, a: [f64; 3], b: [f64; 3] },
    Waves { base: [f64; 3], waves: Vec<Wave> },
}

impl Texture {
    fn random_waves(rng: &mut ChaCha8Rng, count: usize, freq: (f64, f64), amp: f64) -> Texture {
        let base = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
        let waves = (0..count)
            .map(|_| {
                let f = rng.random_range(freq.0..freq.1);
                let theta = rng.random_range(0.0..TAU);
                Wave {
                    fx: f * theta.cos(),
                    fy: f * theta.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amp: [
                        rng.random_range(-amp..amp),
                        rng.random_range(-amp..amp),
                        rng.random_range(-amp..amp),
                    ],
                }
            })
            .collect();
        Texture::Waves { base, waves }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Texture::Checker { cell, a, b } => {
                let cx = (x / cell).floor() as i64;
                let cy = (y / cell).floor() as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Waves { base, waves } => {
                let mut c = *base;
                for wv in waves {
                    let s = (TAU * (wv.fx * x + wv.fy * y) + wv.phase).sin();
                    for k in 0..3 {
                        c[k] += wv.amp[k] * s;
                    }
                }
                c.map(|v| v.clamp(0.0, 1.0))
            }
        }
    }
}

struct Renderer<'a> {
    spec: &'a SceneSpec,
    background: Texture,
    sprite_tex: Vec<Texture>,
}

impl<'a> Renderer<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let background = match spec.pattern {
            Pattern::Checker => {
                let cell = rng.random_range(4..=10) as f64;
                let lo = rng.random_range(0.1..0.35);
                let hi = rng.random_range(0.65..0.9);
                Texture::Checker {
                    cell,
                    a: [lo, lo + 0.05, lo],
                    b: [hi, hi, hi - 0.05],
                }
            }
            Pattern::SinusoidTexture => Texture::random_waves(&mut rng, 4, (0.03, 0.18), 0.15),
            Pattern::TexturedSprites => Texture::random_waves(&mut rng, 2, (0.005, 0.02), 0.1),
        };
        let sprite_tex = spec
            .sprites
            .iter()
            .map(|_| Texture::random_waves(&mut rng, 3, (0.06, 0.22), 0.2))
            .collect();
        Self {
            spec,
            background,
            sprite_tex,
        }
    }

    fn origin(&self, layer: Layer, t: f64) -> (f64, f64) {
        let (x, y, v) = match layer {
            Layer::Background => (0.0, 0.0, self.spec.background_velocity),
            Layer::Sprite(i) => {
                let s = &self.spec.sprites[i];
                (s.x, s.y, s.velocity)
            }
            Layer::Occluder(i) => {
                let o = &self.spec.occluders[i];
                (o.x, o.y, o.velocity)
            }
        };
        (x + v[0] * t, y + v[1] * t)
    }

    fn velocity(&self, layer: Layer) -> [f64; 2] {
        match layer {
            Layer::Background => self.spec.background_velocity,
            Layer::Sprite(i) => self.spec.sprites[i].velocity,
            Layer::Occluder(i) => self.spec.occluders[i].velocity,
        }
    }

    /// Topmost layer covering scene point `(x, y)` at time `t`.
    fn top(&self, t: f64, x: f64, y: f64) -> Layer {
        let inside = |ox: f64, oy: f64, w: f64, h: f64| x >= ox && x < ox + w && y >= oy && y < oy + h;
        for (i, o) in self.spec.occluders.iter().enumerate().rev() {
            let (ox, oy) = self.origin(Layer::Occluder(i), t);
            if inside(ox, oy, o.width, o.height) {
                return Layer::Occluder(i);
            }
        }
        for (i, s) in self.spec.sprites.iter().enumerate().rev() {
            let (ox, oy) = self.origin(Layer::Sprite(i), t);
            if inside(ox, oy, s.width, s.height) {
                return Layer::Sprite(i);
            }
        }
        Layer::Background
    }

    fn color(&self, t: f64, x: f64, y: f64) -> [f64; 3] {
        let layer = self.top(t, x, y);
        let (ox, oy) = self.origin(layer, t);
        match layer {
            Layer::Background => self.background.color(x - ox, y - oy),
            Layer::Sprite(i) => self.sprite_tex[i].color(x - ox, y - oy),
            Layer::Occluder(i) => self.spec.occluders[i].color,
        }
    }

    fn render(&self, t: usize) -> Result<Frame> {
        let (h, w) = (self.spec.height, self.spec.width);
        let mut data = vec![0.0; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let c = self.color(t as f64, x as f64, y as f64);
                for k in 0..3 {
                    data[(k * h + y) * w + x] = c[k];
                }
            }
        }
        Frame::new(h, w, 3, data)
    }

    /// Flow on frame `on` pointing into frame `into`, plus visibility.
    fn motion(&self, on: usize, into: usize) -> Result<(FlowField, VisibilityMask)> {
        let (h, w) = (self.spec.height, self.spec.width);
        let dt = into as f64 - on as f64;
        let mut u = vec![0.0; h * w];
        let mut v = vec![0.0; h * w];
        let mut vis = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let layer = self.top(on as f64, x as f64, y as f64);
                let vel = self.velocity(layer);
                let (du, dv) = (vel[0] * dt, vel[1] * dt);
                let (qx, qy) = (x as f64 + du, y as f64 + dv);
                let i = y * w + x;
                u[i] = du;
                v[i] = dv;
                let in_bounds = qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f64 && qy <= (h - 1) as f64;
                vis[i] = in_bounds && self.top(into as f64, qx, qy) == layer;
            }
        }
        Ok((FlowField::new(h, w, u, v)?, VisibilityMask::new(h, w, vis)?))
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.num_frames == 0 {
            return Err(VsrError::Config(format!(
                "scene dimensions must be positive (got {}x{}, {} frames)",
                self.height, self.width, self.num_frames
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(VsrError::Config("scene fps must be positive".into()));
        }
        let finite = |v: &[f64; 2]| v.iter().all(|x| x.is_finite());
        if !finite(&self.background_velocity) {
            return Err(VsrError::Config("background velocity must be finite".into()));
        }
        for s in &self.sprites {
            if !finite(&s.velocity) || !(s.width > 0.0 && s.height > 0.0) || !s.x.is_finite() || !s.y.is_finite() {
                return Err(VsrError::Config(format!("invalid sprite {s:?}")));
            }
        }
        for o in &self.occluders {
            if !finite(&o.velocity) || !(o.width > 0.0 && o.height > 0.0) || !o.x.is_finite() || !o.y.is_finite() {
                return Err(VsrError::Config(format!("invalid occluder {o:?}")));
            }
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(VsrError::Config("occluder colour must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Renders the scene and its exact per-pair motion ground truth.
pub fn generate_synthetic_clip(spec: &SceneSpec) -> Result<SyntheticClip> {
    spec.validate()?;
    let r = Renderer::new(spec);
    let frames = (0..spec.num_frames).map(|t| r.render(t)).collect::<Result<Vec<_>>>()?;
    let clip = VideoClip::new(frames, spec.fps, format!("scene_{:016x}", spec.seed))?;
    let mut out = SyntheticClip {
        clip,
        gt_flows: Vec::new(),
        gt_visibility: Vec::new(),
        forward_flows: Vec::new(),
        forward_visibility: Vec::new(),
    };
    for i in 0..spec.num_frames.saturating_sub(1) {
        let (fb, vb) = r.motion(i + 1, i)?;
        let (ff, vf) = r.motion(i, i + 1)?;
        out.gt_flows.push(fb);
        out.gt_visibility.push(vb);
        out.forward_flows.push(ff);
        out.forward_visibility.push(vf);
    }
    Ok(out)
}

/// Distribution over random scenes, used to build datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneTemplate {
    pub patterns: Vec<Pattern>,
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub sprites: [usize; 2],
    pub sprite_size: [f64; 2],
    /// Largest per-axis sprite speed (px/frame).
    pub max_speed: f64,
    pub occluders: [usize; 2],
    pub occluder_size: [f64; 2],
    pub max_background_speed: f64,
    /// Round velocities and positions to whole pixels.
    pub integer_motion: bool,
    pub fps: f64,
}

impl Default for SceneTemplate {
    fn default() -> Self {
        Self {
            patterns: vec![Pattern::Checker, Pattern::SinusoidTexture, Pattern::TexturedSprites],
            height: 128,
            width: 128,
            num_frames: 16,
            sprites: [1, 3],
            sprite_size: [24.0, 48.0],
            max_speed: 4.0,
            occluders: [0, 1],
            occluder_size: [16.0, 32.0],
            max_background_speed: 1.0,
            integer_motion: true,
            fps: 30.0,
        }
    }
}

impl SceneTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(VsrError::Config("scene template needs at least one pattern".into()));
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0] > 0.0;
        if self.sprites[0] > self.sprites[1] || self.occluders[0] > self.occluders[1] {
            return Err(VsrError::Config("count ranges must be ordered".into()));
        }
        if !ordered(self.sprite_size) || !ordered(self.occluder_size) {
            return Err(VsrError::Config("size ranges must be positive and ordered".into()));
        }
        if !(self.max_speed >= 0.0 && self.max_background_speed >= 0.0) {
            return Err(VsrError::Config("speeds must be non-negative".into()));
        }
        Ok(())
    }

    /// Draws one scene; deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0000);
        let round = |v: f64| if self.integer_motion { v.round() } else { v };
        let speed = |rng: &mut ChaCha8Rng, max: f64| -> [f64; 2] {
            if max <= 0.0 {
                return [0.0, 0.0];
            }
            [round(rng.random_range(-max..=max)), round(rng.random_range(-max..=max))]
        };
        let pattern = self.patterns[rng.random_range(0..self.patterns.len())];
        let background_velocity = speed(&mut rng, self.max_background_speed);
        let (w, h) = (self.width as f64, self.height as f64);
        let n_sprites = rng.random_range(self.sprites[0]..=self.sprites[1]);
        let sprites = (0..n_sprites)
            .map(|_| {
                let sw = round(rng.random_range(self.sprite_size[0]..=self.sprite_size[1]));
                let sh = round(rng.random_range(self.sprite_size[0]..=self.sprite_size[1]));
                Sprite {
                    x: round(rng.random_range(0.0..(w - sw).max(1.0))),
                    y: round(rng.random_range(0.0..(h - sh).max(1.0))),
                    width: sw,
                    height: sh,
                    velocity: speed(&mut rng, self.max_speed),
                }
            })
            .collect();
        let n_occ = rng.random_range(self.occluders[0]..=self.occluders[1]);
        let occluders = (0..n_occ)
            .map(|_| {
                let ow = round(rng.random_range(self.occluder_size[0]..=self.occluder_size[1]));
                let oh = round(rng.random_range(self.occluder_size[0]..=self.occluder_size[1]));
                Occluder {
                    x: round(rng.random_range(0.0..(w - ow).max(1.0))),
                    y: round(rng.random_range(0.0..(h - oh).max(1.0))),
                    width: ow,
                    height: oh,
                    velocity: speed(&mut rng, self.max_speed),
                    color: [
                        rng.random_range(0.05..0.95),
                        rng.random_range(0.05..0.95),
                        rng.random_range(0.05..0.95),
                    ],
                }
            })
            .collect();
        SceneSpec {
            pattern,
            height: self.height,
            width: self.width,
            num_frames: self.num_frames,
            background_velocity,
            sprites,
            occluders,
            seed,
            fps: self.fps,
        }
    }
}
