use std::io::{Read, Write};

use crate::{ParamId, ParamStore, Tensor, TensorError};

/// Adaptive-moment optimiser without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_betas(store, 0.9, 0.999)
    }

    pub fn with_betas(store: &ParamStore, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Serialises hyper-parameters, step count and both moment buffers.
    pub fn write_state<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"VSRADAM1")?;
        for v in [self.beta1, self.beta2, self.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.first.len() as u64).to_le_bytes())?;
        for (m, v) in self.first.iter().zip(&self.second) {
            w.write_all(&(m.len() as u64).to_le_bytes())?;
            for x in m.iter().chain(v) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_state<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"VSRADAM1" {
            return Err(TensorError::Archive("bad optimizer magic".into()));
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> std::io::Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let beta1 = f64::from_le_bytes(next(&mut r)?);
        let beta2 = f64::from_le_bytes(next(&mut r)?);
        let eps = f64::from_le_bytes(next(&mut r)?);
        let step = u64::from_le_bytes(next(&mut r)?);
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        let mut first = Vec::with_capacity(count);
        let mut second = Vec::with_capacity(count);
        for _ in 0..count {
            let n = u64::from_le_bytes(next(&mut r)?) as usize;
            let mut read_vec = |r: &mut R| -> std::io::Result<Vec<f64>> {
                (0..n).map(|_| next(r).map(f64::from_le_bytes)).collect()
            };
            first.push(read_vec(&mut r)?);
            second.push(read_vec(&mut r)?);
        }
        Ok(Self { beta1, beta2, eps, step, first, second })
    }

    /// Applies one update. Frozen parameters are never touched even if a
    /// gradient is supplied for them.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Tensor)],
        lr: f64,
    ) -> Result<(), TensorError> {
        if self.first.len() != store.len() {
            return Err(TensorError::Archive(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let w = store.value_mut(*id).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
