use crate::TensorError;

/// A fixed linear resampling operator on one image plane.
///
/// Each output pixel is a weighted sum of input pixels of the same channel.
/// Warps, resizes and finite-difference stencils are all expressed this way,
/// so a single graph op covers them and its adjoint is an exact scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMap {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl SpatialMap {
    /// Starts an empty map; push taps for every output pixel in row-major order.
    pub fn builder(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> SpatialMapBuilder {
        SpatialMapBuilder {
            map: SpatialMap {
                in_h,
                in_w,
                out_h,
                out_w,
                offsets: vec![0],
                index: Vec::with_capacity(out_h * out_w * 4),
                weight: Vec::with_capacity(out_h * out_w * 4),
            },
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Taps of output pixel `o` as `(input_index, weight)` pairs.
    pub fn taps(&self, o: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[o]..self.offsets[o + 1];
        self.index[range.clone()]
            .iter()
            .zip(&self.weight[range])
            .map(|(&i, &w)| (i as usize, w))
    }

    /// Applies the map to one plane.
    pub fn apply_plane(&self, input: &[f64], output: &mut [f64]) {
        for (o, out) in output.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.offsets[o]..self.offsets[o + 1] {
                acc += self.weight[k] * input[self.index[k] as usize];
            }
            *out = acc;
        }
    }

    /// Accumulates the adjoint: `grad_in += Mᵀ grad_out`.
    pub fn apply_plane_transpose(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for k in self.offsets[o]..self.offsets[o + 1] {
                grad_in[self.index[k] as usize] += self.weight[k] * g;
            }
        }
    }

    /// Applies the map to every plane of a flat `planes × in_h × in_w` buffer.
    pub fn apply(&self, input: &[f64], planes: usize) -> Vec<f64> {
        let (isz, osz) = (self.in_h * self.in_w, self.out_h * self.out_w);
        let mut out = vec![0.0; planes * osz];
        for p in 0..planes {
            self.apply_plane(&input[p * isz..(p + 1) * isz], &mut out[p * osz..(p + 1) * osz]);
        }
        out
    }

    /// Composes `self ∘ inner`: applying the result equals applying `inner` then `self`.
    pub fn compose(&self, inner: &SpatialMap) -> Result<SpatialMap, TensorError> {
        if inner.out_dims() != self.in_dims() {
            return Err(TensorError::ShapeMismatch {
                op: "SpatialMap::compose",
                expected: vec![self.in_h, self.in_w],
                got: vec![inner.out_h, inner.out_w],
            });
        }
        let mut b = SpatialMap::builder(inner.in_h, inner.in_w, self.out_h, self.out_w);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for o in 0..self.out_h * self.out_w {
            acc.clear();
            for (mid, w1) in self.taps(o) {
                for (src, w2) in inner.taps(mid) {
                    acc.push((src, w1 * w2));
                }
            }
            acc.sort_by_key(|t| t.0);
            let mut i = 0;
            while i < acc.len() {
                let idx = acc[i].0;
                let mut w = 0.0;
                while i < acc.len() && acc[i].0 == idx {
                    w += acc[i].1;
                    i += 1;
                }
                b.tap(idx, w);
            }
            b.finish_pixel();
        }
        Ok(b.build())
    }
}

pub struct SpatialMapBuilder {
    map: SpatialMap,
}

impl SpatialMapBuilder {
    pub fn tap(&mut self, input_index: usize, weight: f64) {
        debug_assert!(input_index < self.map.in_h * self.map.in_w);
        if weight != 0.0 {
            self.map.index.push(input_index as u32);
            self.map.weight.push(weight);
        }
    }

    pub fn finish_pixel(&mut self) {
        self.map.offsets.push(self.map.index.len());
    }

    pub fn build(self) -> SpatialMap {
        assert_eq!(
            self.map.offsets.len(),
            self.map.out_h * self.map.out_w + 1,
            "every output pixel needs finish_pixel"
        );
        self.map
    }
}
