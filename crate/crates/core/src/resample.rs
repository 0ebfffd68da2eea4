//! Fixed linear resampling operators built as [`SpatialMap`]s.
//!
//! All bicubic sampling uses the Catmull–Rom kernel (`a = -0.5`) with
//! replicate border handling.

use vsr_tensor::SpatialMap;

/// Catmull–Rom coefficient.
pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel `w(x)` with `a = -0.5`.
///
/// Exact at the integers: `w(0) = 1` and `w(±1) = w(±2) = 0`.
pub fn cubic_weight(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// The four `(index, weight)` taps for sampling position `s` along an axis
/// of length `n`, with indices clamped to the border.
pub fn cubic_taps(s: f64, n: usize) -> [(usize, f64); 4] {
    let x0 = s.floor();
    let t = s - x0;
    let x0 = x0 as i64;
    let last = n as i64 - 1;
    let mut out = [(0, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let off = k as i64 - 1;
        let idx = (x0 + off).clamp(0, last) as usize;
        *slot = (idx, cubic_weight(t - off as f64));
    }
    out
}

/// Bicubic sample of one plane at fractional `(x, y)` with replicate padding.
pub fn sample_bicubic(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let tx = cubic_taps(x, w);
    let ty = cubic_taps(y, h);
    let mut acc = 0.0;
    for &(iy, wy) in &ty {
        if wy == 0.0 {
            continue;
        }
        for &(ix, wx) in &tx {
            if wx != 0.0 {
                acc += wy * wx * plane[iy * w + ix];
            }
        }
    }
    acc
}

/// Backward-warp operator: output pixel `(x, y)` samples the input at
/// `(x + du, y + dv)`. `displacement` yields `(du, dv)` per output pixel.
pub fn warp_map(h: usize, w: usize, displacement: impl Fn(usize, usize) -> (f64, f64)) -> SpatialMap {
    let mut b = SpatialMap::builder(h, w, h, w);
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = displacement(y, x);
            let tx = cubic_taps(x as f64 + du, w);
            let ty = cubic_taps(y as f64 + dv, h);
            for &(iy, wy) in &ty {
                if wy == 0.0 {
                    continue;
                }
                for &(ix, wx) in &tx {
                    b.tap(iy * w + ix, wy * wx);
                }
            }
            b.finish_pixel();
        }
    }
    b.build()
}

/// 1-D bicubic resize weights (pixel-centre aligned). Downscaling widens
/// the kernel by the scale factor so it also low-pass filters.
fn resize_axis(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_out as f64 / n_in as f64;
    (0..n_out)
        .map(|o| {
            let centre = (o as f64 + 0.5) / scale - 0.5;
            if scale >= 1.0 {
                cubic_taps(centre, n_in)
                    .into_iter()
                    .filter(|t| t.1 != 0.0)
                    .collect()
            } else {
                let support = 2.0 / scale;
                let lo = (centre - support).floor() as i64;
                let hi = (centre + support).ceil() as i64;
                let mut taps: Vec<(usize, f64)> = (lo..=hi)
                    .map(|i| {
                        let w = cubic_weight((i as f64 - centre) * scale);
                        (i.clamp(0, n_in as i64 - 1) as usize, w)
                    })
                    .filter(|t| t.1 != 0.0)
                    .collect();
                let total: f64 = taps.iter().map(|t| t.1).sum();
                taps.iter_mut().for_each(|t| t.1 /= total);
                taps
            }
        })
        .collect()
}

/// Separable bicubic resize from `in_h×in_w` to `out_h×out_w`.
pub fn resize_map(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> SpatialMap {
    let ry = resize_axis(in_h, out_h);
    let rx = resize_axis(in_w, out_w);
    let mut b = SpatialMap::builder(in_h, in_w, out_h, out_w);
    for ty in &ry {
        for tx in &rx {
            for &(iy, wy) in ty {
                for &(ix, wx) in tx {
                    b.tap(iy * in_w + ix, wy * wx);
                }
            }
            b.finish_pixel();
        }
    }
    b.build()
}

/// Mean over non-overlapping `s×s` blocks.
pub fn area_down_map(h: usize, w: usize, s: usize) -> SpatialMap {
    let (oh, ow) = (h / s, w / s);
    let k = 1.0 / (s * s) as f64;
    let mut b = SpatialMap::builder(h, w, oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            for dy in 0..s {
                for dx in 0..s {
                    b.tap((y * s + dy) * w + x * s + dx, k);
                }
            }
            b.finish_pixel();
        }
    }
    b.build()
}

/// Replicates every pixel into an `s×s` block.
pub fn nearest_up_map(h: usize, w: usize, s: usize) -> SpatialMap {
    let mut b = SpatialMap::builder(h, w, h * s, w * s);
    for y in 0..h * s {
        for x in 0..w * s {
            b.tap((y / s) * w + x / s, 1.0);
            b.finish_pixel();
        }
    }
    b.build()
}

/// Forward difference along x with replicate padding (last column is 0).
pub fn diff_x_map(h: usize, w: usize) -> SpatialMap {
    let mut b = SpatialMap::builder(h, w, h, w);
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                b.tap(y * w + x + 1, 1.0);
                b.tap(y * w + x, -1.0);
            }
            b.finish_pixel();
        }
    }
    b.build()
}

/// Forward difference along y with replicate padding (last row is 0).
pub fn diff_y_map(h: usize, w: usize) -> SpatialMap {
    let mut b = SpatialMap::builder(h, w, h, w);
    for y in 0..h {
        for x in 0..w {
            if y + 1 < h {
                b.tap((y + 1) * w + x, 1.0);
                b.tap(y * w + x, -1.0);
            }
            b.finish_pixel();
        }
    }
    b.build()
}
