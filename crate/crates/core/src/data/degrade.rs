use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, VideoClip};
use crate::error::{Result, VsrError};
use crate::resample;

/// First-order synthetic degradation: blur, bicubic downscale, Gaussian
/// noise, then JPEG-style DCT quantization. One parameter draw per clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub blur_sigma_range: [f64; 2],
    pub downscale_factor: usize,
    pub noise_sigma_range: [f64; 2],
    pub jpeg_quality_range: [u8; 2],
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_sigma_range: [0.2, 1.2],
            downscale_factor: 4,
            noise_sigma_range: [0.0, 0.02],
            jpeg_quality_range: [60, 95],
            seed: 0,
        }
    }
}

impl DegradationConfig {
    /// No-op configuration at scale factor 1.
    pub fn identity() -> Self {
        Self {
            blur_sigma_range: [0.0, 0.0],
            downscale_factor: 1,
            noise_sigma_range: [0.0, 0.0],
            jpeg_quality_range: [100, 100],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if !ordered(self.blur_sigma_range) {
            return Err(VsrError::Config(format!("bad blur_sigma_range {:?}", self.blur_sigma_range)));
        }
        if !ordered(self.noise_sigma_range) {
            return Err(VsrError::Config(format!("bad noise_sigma_range {:?}", self.noise_sigma_range)));
        }
        let [qlo, qhi] = self.jpeg_quality_range;
        if qlo == 0 || qlo > qhi || qhi > 100 {
            return Err(VsrError::Config(format!("bad jpeg_quality_range {:?}", self.jpeg_quality_range)));
        }
        if self.downscale_factor == 0 {
            return Err(VsrError::Config("downscale_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters drawn once for a whole clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub jpeg_quality: u8,
}

fn clip_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the clip id keeps distinct clips independent under one seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Degrades every frame of `hr` with a single parameter draw.
pub fn degrade_clip(hr: &VideoClip, cfg: &DegradationConfig) -> Result<VideoClip> {
    Ok(degrade_clip_with_params(hr, cfg)?.0)
}

/// As [`degrade_clip`], also returning the drawn parameters.
pub fn degrade_clip_with_params(hr: &VideoClip, cfg: &DegradationConfig) -> Result<(VideoClip, DegradationParams)> {
    cfg.validate()?;
    let (h, w, c) = hr.shape();
    let s = cfg.downscale_factor;
    if h % s != 0 || w % s != 0 {
        return Err(VsrError::Dimension(format!(
            "clip {h}x{w} is not divisible by downscale factor {s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(cfg.seed, hr.id()));
    let params = DegradationParams {
        blur_sigma: draw(&mut rng, cfg.blur_sigma_range),
        noise_sigma: draw(&mut rng, cfg.noise_sigma_range),
        jpeg_quality: if cfg.jpeg_quality_range[0] == cfg.jpeg_quality_range[1] {
            cfg.jpeg_quality_range[0]
        } else {
            rng.random_range(cfg.jpeg_quality_range[0]..=cfg.jpeg_quality_range[1])
        },
    };
    let (lh, lw) = (h / s, w / s);
    let down = (s > 1).then(|| resample::resize_map(h, w, lh, lw));
    let kernel = gaussian_kernel(params.blur_sigma);
    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| VsrError::Config(e.to_string()))?;

    let mut frames = Vec::with_capacity(hr.len());
    for f in hr.frames() {
        let mut data = f.data().to_vec();
        if let Some(k) = &kernel {
            for plane in data.chunks_mut(h * w) {
                let out = blur_plane(plane, h, w, k);
                plane.copy_from_slice(&out);
            }
        }
        if let Some(map) = &down {
            data = map.apply(&data, c);
        }
        if params.noise_sigma > 0.0 {
            for v in data.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if params.jpeg_quality < 100 {
            data = jpeg_roundtrip(&data, lh, lw, c, params.jpeg_quality);
        }
        frames.push(Frame::from_clamped(lh, lw, c, data)?);
    }
    Ok((VideoClip::new(frames, hr.fps(), hr.id())?, params))
}

fn gaussian_kernel(sigma: f64) -> Option<Vec<f64>> {
    if sigma <= 0.0 {
        return None;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Some(k)
}

fn blur_plane(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * p[y * w + (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize * w + x])
                .sum();
        }
    }
    out
}

const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29,
    51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120,
    101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_Q: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

fn scaled_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    base.map(|b| ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64)
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// Quantizes each 8×8 block of one plane (values on a 0–255 scale) in place.
fn quantize_plane(p: &mut [f64], h: usize, w: usize, table: &[f64; 64], basis: &[[f64; 8]; 8]) {
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [[0.0; 8]; 8];
            for (i, row) in block.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    let y = (by + i).min(h - 1);
                    let x = (bx + j).min(w - 1);
                    *v = p[y * w + x] - 128.0;
                }
            }
            let mut coef = [[0.0; 8]; 8];
            for u in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for i in 0..8 {
                        for j in 0..8 {
                            acc += basis[u][i] * basis[v][j] * block[i][j];
                        }
                    }
                    let q = table[u * 8 + v];
                    coef[u][v] = (acc / q).round() * q;
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    let (y, x) = (by + i, bx + j);
                    if y >= h || x >= w {
                        continue;
                    }
                    let mut acc = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            acc += basis[u][i] * basis[v][j] * coef[u][v];
                        }
                    }
                    p[y * w + x] = acc + 128.0;
                }
            }
        }
    }
}

fn jpeg_roundtrip(data: &[f64], h: usize, w: usize, c: usize, quality: u8) -> Vec<f64> {
    let basis = dct_basis();
    let luma_t = scaled_table(&LUMA_Q, quality);
    let chroma_t = scaled_table(&CHROMA_Q, quality);
    let n = h * w;
    if c == 1 {
        let mut p: Vec<f64> = data.iter().map(|v| v * 255.0).collect();
        quantize_plane(&mut p, h, w, &luma_t, &basis);
        return p.into_iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect();
    }
    let (mut yp, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (r, g, b) = (data[i] * 255.0, data[n + i] * 255.0, data[2 * n + i] * 255.0);
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = -0.168_735_892 * r - 0.331_264_108 * g + 0.5 * b + 128.0;
        cr[i] = 0.5 * r - 0.418_687_589 * g - 0.081_312_411 * b + 128.0;
    }
    quantize_plane(&mut yp, h, w, &luma_t, &basis);
    quantize_plane(&mut cb, h, w, &chroma_t, &basis);
    quantize_plane(&mut cr, h, w, &chroma_t, &basis);
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let (y, u, v) = (yp[i], cb[i] - 128.0, cr[i] - 128.0);
        out[i] = (y + 1.402 * v) / 255.0;
        out[n + i] = (y - 0.344_136_286 * u - 0.714_136_286 * v) / 255.0;
        out[2 * n + i] = (y + 1.772 * u) / 255.0;
    }
    out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_clip(h: usize, w: usize, n: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|_| Frame::new(h, w, 3, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        VideoClip::new(frames, 24.0, "rand").unwrap()
    }

    #[test]
    fn identity_config_is_pixel_identical() {
        let clip = random_clip(16, 24, 3, 1);
        let out = degrade_clip(&clip, &DegradationConfig::identity()).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn factor_four_gives_quarter_resolution() {
        let clip = random_clip(128, 128, 2, 2);
        let out = degrade_clip(&clip, &DegradationConfig::default()).unwrap();
        assert_eq!(out.shape(), (32, 32, 3));
        assert_eq!(out.len(), 2);
        assert_eq!(out.fps(), 24.0);
    }

    #[test]
    fn indivisible_dimensions_are_rejected() {
        let clip = random_clip(30, 32, 1, 3);
        assert!(matches!(
            degrade_clip(&clip, &DegradationConfig::default()),
            Err(VsrError::Dimension(_))
        ));
    }

    #[test]
    fn parameters_are_shared_across_frames_but_noise_differs() {
        let f = Frame::filled(32, 32, 3, 0.5).unwrap();
        let clip = VideoClip::new(vec![f.clone(), f], 30.0, "flat").unwrap();
        let cfg = DegradationConfig {
            blur_sigma_range: [0.5, 1.5],
            downscale_factor: 2,
            noise_sigma_range: [0.05, 0.1],
            jpeg_quality_range: [100, 100],
            seed: 11,
        };
        let (out, params) = degrade_clip_with_params(&clip, &cfg).unwrap();
        assert!((0.05..=0.1).contains(&params.noise_sigma));
        assert_ne!(out.frame(0), out.frame(1));
        // A flat frame isolates the noise: both frames show the drawn σ.
        for f in out.frames() {
            let n = f.data().len() as f64;
            let var = f.data().iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / n;
            assert!((var.sqrt() - params.noise_sigma).abs() < 0.15 * params.noise_sigma);
        }
        // Same config is deterministic; different clip ids draw different parameters.
        assert_eq!(degrade_clip_with_params(&clip, &cfg).unwrap(), (out, params));
        let other = VideoClip::new(clip.frames().to_vec(), 30.0, "flat2").unwrap();
        assert_ne!(degrade_clip_with_params(&other, &cfg).unwrap().1, params);
    }

    #[test]
    fn jpeg_quantization_is_close_at_high_quality() {
        let clip = random_clip(16, 16, 1, 5);
        let smooth = degrade_clip(
            &clip,
            &DegradationConfig {
                blur_sigma_range: [2.0, 2.0],
                jpeg_quality_range: [100, 100],
                ..DegradationConfig::identity()
            },
        )
        .unwrap();
        let q = jpeg_roundtrip(smooth.frame(0).data(), 16, 16, 3, 95);
        let err = q.iter().zip(smooth.frame(0).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.05, "max error {err}");
        assert!(err > 0.0);
    }

    #[test]
    fn bad_ranges_are_config_errors() {
        let clip = random_clip(8, 8, 1, 0);
        let cfg = DegradationConfig {
            blur_sigma_range: [1.0, 0.5],
            ..DegradationConfig::default()
        };
        assert!(matches!(degrade_clip(&clip, &cfg), Err(VsrError::Config(_))));
    }
}
