//! Named parameter tensors with paired gradient buffers, adaptive-moment
//! optimizer state, and checkpoint serialization.
//!
//! Checkpoint layout: `manifest.json` (tensor names, shapes, optimizer step)
//! plus `data.bin`, the little-endian f64 blobs of every tensor (value,
//! first moment, second moment) concatenated in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Result, SaftError};

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<Entry>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter `{name}`"
        );
        let n = value.len();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        assert_eq!(e.grad.len(), grad.len(), "gradient shape mismatch for `{name}`");
        for (g, d) in e.grad.iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn grad(&self, name: &str) -> &[f64] {
        &self
            .entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    /// Bias-corrected adaptive-moment update. Refuses the whole step if any
    /// gradient is non-finite, naming the offending tensor.
    pub fn adam_step(&mut self, lr: f64) -> Result<()> {
        for e in &self.entries {
            if e.grad.iter().any(|g| !g.is_finite()) {
                return Err(SaftError::NonFinite(format!("gradient of `{}`", e.name)));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for e in &mut self.entries {
            for i in 0..e.grad.len() {
                let g = e.grad[i];
                e.m[i] = ADAM_BETA1 * e.m[i] + (1.0 - ADAM_BETA1) * g;
                e.v[i] = ADAM_BETA2 * e.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.value.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SaftError::io(dir.display().to_string(), e))?;
        let manifest = Manifest {
            step: self.step,
            tensors: self
                .entries
                .iter()
                .map(|e| TensorMeta {
                    name: e.name.clone(),
                    rows: e.value.rows,
                    cols: e.value.cols,
                })
                .collect(),
        };
        let manifest_path = dir.join("manifest.json");
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| SaftError::io(manifest_path.display().to_string(), e))?;

        let data_path = dir.join("data.bin");
        let mut f = std::fs::File::create(&data_path)
            .map_err(|e| SaftError::io(data_path.display().to_string(), e))?;
        let mut write_blob = |xs: &[f64]| -> Result<()> {
            let mut bytes = Vec::with_capacity(xs.len() * 8);
            for x in xs {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            f.write_all(&bytes)
                .map_err(|e| SaftError::io(data_path.display().to_string(), e))
        };
        for e in &self.entries {
            write_blob(&e.value.data)?;
            write_blob(&e.m)?;
            write_blob(&e.v)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| SaftError::io(manifest_path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;

        let data_path = dir.join("data.bin");
        let mut bytes = Vec::new();
        std::fs::File::open(&data_path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| SaftError::io(data_path.display().to_string(), e))?;

        let mut offset = 0usize;
        let mut read_blob = |n: usize| -> Result<Vec<f64>> {
            let need = n * 8;
            if offset + need > bytes.len() {
                return Err(SaftError::Checkpoint("data.bin truncated".into()));
            }
            let out = bytes[offset..offset + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += need;
            Ok(out)
        };

        let mut store = ParamStore::new();
        store.step = manifest.step;
        for meta in &manifest.tensors {
            let n = meta.rows * meta.cols;
            let value = Tensor::new(meta.rows, meta.cols, read_blob(n)?);
            let m = read_blob(n)?;
            let v = read_blob(n)?;
            store.entries.push(Entry {
                name: meta.name.clone(),
                value,
                grad: vec![0.0; n],
                m,
                v,
            });
        }
        Ok(store)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    step: u64,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vec(vec![1.0, -2.0, 3.0]));
        let before = store.get("w").clone();
        store.adam_step(0.1).unwrap();
        assert_eq!(store.get("w"), &before);
    }

    #[test]
    fn scalar_quadratic_converges() {
        // minimize (w-3)^2 from w=0
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(0.0));
        for _ in 0..500 {
            store.zero_grads();
            let w = store.get("w").data[0];
            store.accumulate_grad("w", &[2.0 * (w - 3.0)]);
            store.adam_step(0.1).unwrap();
        }
        assert!((store.get("w").data[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn nan_gradient_refused() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        store.accumulate_grad("w", &[f64::NAN]);
        let err = store.adam_step(0.1).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(store.get("w").data[0], 1.0);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add("a", super::super::init_dense(&mut rng, 4, 7));
        store.add("b", Tensor::row_vec(vec![0.1, 0.2]));
        // make the moments non-trivial
        store.accumulate_grad("a", &vec![0.5; 28]);
        store.accumulate_grad("b", &[0.25, -0.25]);
        store.adam_step(0.01).unwrap();
        let grad_a: Vec<f64> = (0..28).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.zero_grads();
        store.accumulate_grad("a", &grad_a);
        store.adam_step(0.01).unwrap();

        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let loaded = ParamStore::load(dir.path()).unwrap();
        assert_eq!(loaded.step, store.step);
        for name in store.names() {
            assert_eq!(
                loaded.get(&name).data, store.get(&name).data,
                "tensor `{name}` not bit-exact"
            );
        }
    }
}
