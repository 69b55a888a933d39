//! Named parameter containers, gradients and the checkpoint format.
//!
//! A checkpoint is two files: `<stem>.bin` holding every parameter as
//! little-endian `f64`s in store order, and `<stem>.manifest` with one line
//! per tensor: `name offset rows cols`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Fan-in scaled uniform initialisation, `U(-1/√fan_in, 1/√fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Schema(format!(
                "flat parameter vector has {} entries, store expects {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let mut offset = 0;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.push_str(&format!("{name} {offset} {} {}\n", t.rows(), t.cols()));
            offset += t.len();
        }
        out
    }

    pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("bin"), stem.with_extension("manifest"))
    }

    pub fn save_checkpoint(&self, stem: &Path) -> Result<()> {
        let (bin, manifest) = Self::checkpoint_paths(stem);
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        for v in self.flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin, bytes)?;
        let mut f = fs::File::create(manifest)?;
        f.write_all(self.manifest().as_bytes())?;
        Ok(())
    }

    /// Loads values into an already-constructed store. The manifest must match
    /// this store's layout exactly.
    pub fn load_checkpoint(&mut self, stem: &Path) -> Result<()> {
        let (bin, manifest) = Self::checkpoint_paths(stem);
        let text = fs::read_to_string(manifest)?;
        if text != self.manifest() {
            return Err(Error::Schema(format!(
                "checkpoint manifest at {} does not match the model layout",
                stem.display()
            )));
        }
        let bytes = fs::read(bin)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Schema(
                "checkpoint byte length is not a multiple of 8".into(),
            ));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.load_flat(&flat)
    }
}

/// Gradients aligned with a [`ParamStore`]; `None` for parameters that did
/// not take part in the loss.
#[derive(Clone, Debug)]
pub struct Grads {
    pub(crate) tensors: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.tensors[id.0].as_ref()
    }

    pub fn accumulate(&mut self, other: &Grads, weight: f64) {
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if let Some(src) = src {
                let mut scaled = src.clone();
                scaled.scale_assign(weight);
                match dst {
                    Some(d) => d.add_assign(&scaled),
                    None => *dst = Some(scaled),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.iter_mut().flatten() {
            t.scale_assign(c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(Tensor::sq_norm)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(Tensor::all_finite)
    }

    /// Flattened in store order with zeros for missing entries.
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.num_scalars());
        for (g, t) in self.tensors.iter().zip(store.tensors()) {
            match g {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        out
    }
}
