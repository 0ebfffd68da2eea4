use super::FlowField;
use crate::data::Frame;
use crate::error::{Result, VsrError};
use crate::resample;

/// Pyramid levels are never built smaller than this; tiny levels alias
/// periodic texture into spurious large matches.
const MIN_LEVEL_SIZE: usize = 24;

/// Dense coarse-to-fine Lucas–Kanade.
#[derive(Debug, Clone, PartialEq)]
pub struct LucasKanade {
    /// Maximum number of pyramid levels.
    pub levels: usize,
    /// Gauss–Newton iterations per pyramid level.
    pub iterations: usize,
    /// Standard deviation of the Gaussian integration window (px).
    pub window_sigma: f64,
    /// Updates are skipped where the smaller structure-tensor eigenvalue is below this.
    pub min_eigen: f64,
}

impl Default for LucasKanade {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 6,
            window_sigma: 1.5,
            min_eigen: 1e-6,
        }
    }
}

/// Estimates the backward flow from `dst` to `src`: the returned field lives
/// on `dst` and satisfies `dst(p) ≈ src(p + flow(p))`.
pub fn estimate_flow(src: &Frame, dst: &Frame, levels: usize) -> Result<FlowField> {
    LucasKanade {
        levels,
        ..Default::default()
    }
    .estimate(src, dst)
}

struct Gray {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Gray {
    fn downsample(&self) -> Gray {
        let blurred = separable(&self.px, self.h, self.w, &[1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0]);
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut px = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                px.push(blurred[(2 * y) * self.w + 2 * x]);
            }
        }
        Gray { h, w, px }
    }
}

/// Separable symmetric filter with replicate borders.
fn separable(px: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * px[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (2.5 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Gaussian-windowed squared residual of `dst − warp(src, flow)`.
fn residual_energy(s: &Gray, d: &Gray, window: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
    let w = s.w;
    let warped = resample::warp_map(s.h, w, |y, x| (u[y * w + x], v[y * w + x])).apply(&s.px, 1);
    let sq: Vec<f64> = warped.iter().zip(&d.px).map(|(a, b)| (a - b) * (a - b)).collect();
    separable(&sq, s.h, w, window)
}

/// 3×3 median filter with replicate borders; removes isolated outliers.
fn median3(px: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut n = [0.0; 9];
            let mut k = 0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    n[k] = px[yy * w + xx];
                    k += 1;
                }
            }
            n.sort_by(f64::total_cmp);
            out[y * w + x] = n[4];
        }
    }
    out
}

fn is_constant(px: &[f64]) -> bool {
    let (lo, hi) = px
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo <= 1e-12
}

impl LucasKanade {
    pub fn estimate(&self, src: &Frame, dst: &Frame) -> Result<FlowField> {
        if src.shape() != dst.shape() {
            return Err(VsrError::Dimension(format!(
                "flow inputs differ in shape: {:?} vs {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        if self.levels == 0 {
            return Err(VsrError::Config("flow estimation needs at least one level".into()));
        }
        let (h, w) = (dst.height(), dst.width());
        let s0 = Gray { h, w, px: src.luma() };
        let d0 = Gray { h, w, px: dst.luma() };
        if is_constant(&s0.px) || is_constant(&d0.px) {
            return Ok(FlowField::zeros(h, w));
        }

        let mut src_pyr = vec![s0];
        let mut dst_pyr = vec![d0];
        while src_pyr.len() < self.levels {
            let last = src_pyr.last().unwrap();
            if last.h < 2 * MIN_LEVEL_SIZE || last.w < 2 * MIN_LEVEL_SIZE {
                break;
            }
            let next_s = last.downsample();
            let next_d = dst_pyr.last().unwrap().downsample();
            src_pyr.push(next_s);
            dst_pyr.push(next_d);
        }

        let window = gaussian_kernel(self.window_sigma);
        let top = src_pyr.len() - 1;
        let mut u = vec![0.0; src_pyr[top].h * src_pyr[top].w];
        let mut v = u.clone();
        for level in (0..=top).rev() {
            let (s, d) = (&src_pyr[level], &dst_pyr[level]);
            if level != top {
                let coarse = &src_pyr[level + 1];
                let up = resample::resize_map(coarse.h, coarse.w, s.h, s.w);
                let kx = s.w as f64 / coarse.w as f64;
                let ky = s.h as f64 / coarse.h as f64;
                u = up.apply(&u, 1).into_iter().map(|x| x * kx).collect();
                v = up.apply(&v, 1).into_iter().map(|x| x * ky).collect();
            }
            let (u0, v0) = (u.clone(), v.clone());
            for _ in 0..self.iterations {
                self.refine(s, d, &window, &mut u, &mut v);
                u = separable(&u, s.h, s.w, &window);
                v = separable(&v, s.h, s.w, &window);
            }
            u = median3(&u, s.h, s.w);
            v = median3(&v, s.h, s.w);
            // Keep the incoming estimate wherever refinement made the local fit worse.
            let e0 = residual_energy(s, d, &window, &u0, &v0);
            let e1 = residual_energy(s, d, &window, &u, &v);
            for i in 0..u.len() {
                if e0[i] < e1[i] {
                    u[i] = u0[i];
                    v[i] = v0[i];
                }
            }
        }
        FlowField::new(h, w, u, v)
    }

    fn refine(&self, s: &Gray, d: &Gray, window: &[f64], u: &mut [f64], v: &mut [f64]) {
        let (h, w) = (s.h, s.w);
        let map = resample::warp_map(h, w, |y, x| (u[y * w + x], v[y * w + x]));
        let warped = map.apply(&s.px, 1);
        let mut ix = vec![0.0; h * w];
        let mut iy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(h - 1);
                ix[y * w + x] = (warped[y * w + xr] - warped[y * w + xl]) / (xr - xl).max(1) as f64;
                iy[y * w + x] = (warped[yd * w + x] - warped[yu * w + x]) / (yd - yu).max(1) as f64;
            }
        }
        let it: Vec<f64> = warped.iter().zip(&d.px).map(|(a, b)| a - b).collect();
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> {
            let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            separable(&p, h, w, window)
        };
        let sxx = prod(&ix, &ix);
        let sxy = prod(&ix, &iy);
        let syy = prod(&iy, &iy);
        let sxt = prod(&ix, &it);
        let syt = prod(&iy, &it);
        for i in 0..h * w {
            let (a, b, c) = (sxx[i], sxy[i], syy[i]);
            let tr = a + c;
            let det = a * c - b * b;
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            let min_eig = 0.5 * (tr - disc);
            if min_eig < self.min_eigen || det <= 0.0 {
                continue;
            }
            // [a b; b c] · δ = −[sxt; syt]
            let du = -(c * sxt[i] - b * syt[i]) / det;
            let dv = -(a * syt[i] - b * sxt[i]) / det;
            let step = du.hypot(dv);
            let k = if step > 1.0 { 1.0 / step } else { 1.0 };
            u[i] += du * k;
            v[i] += dv * k;
        }
    }
}
