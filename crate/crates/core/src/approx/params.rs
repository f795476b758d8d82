use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seeding::Rng;

/// Index of a parameter inside its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::ConfigMismatch(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Adds a `[fan_in, fan_out]`-shaped (or bias) tensor drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
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

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Copies every tensor of `other` into `self`; both must share a layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ShapeMismatch("parameter layouts differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if !dst.same_shape(src) {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", dst.shape(), src.shape())));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Text manifest: one `name<TAB>d0xd1<TAB>offset` line per parameter,
    /// offsets counted in 8-byte values.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let mut offset = 0;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            out.push_str(&format!("{name}\t{}\t{offset}\n", dims.join("x")));
            offset += t.len();
        }
        out
    }

    /// Flat little-endian f64 payload in manifest order.
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_scalars() * 8);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_parts(manifest: &str, payload: &[u8]) -> Result<Self> {
        if payload.len() % 8 != 0 {
            return Err(Error::Format("payload length is not a multiple of 8".into()));
        }
        let values: Vec<f64> =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        let mut store = ParamStore::new();
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, dims, offset] = fields[..] else {
                return Err(Error::Format(format!("bad manifest line {line:?}")));
            };
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("bad shape {dims:?}: {e}")))?;
            let offset: usize = offset.parse().map_err(|e| Error::Format(format!("bad offset {offset:?}: {e}")))?;
            let n: usize = shape.iter().product();
            let data = values
                .get(offset..offset + n)
                .ok_or_else(|| Error::Format(format!("{name} runs past the payload")))?
                .to_vec();
            store.add(name, Tensor::new(shape, data)?)?;
        }
        if store.n_scalars() != values.len() {
            return Err(Error::Format("payload has unreferenced values".into()));
        }
        Ok(store)
    }

    /// Writes `<base>.manifest` and `<base>.bin`.
    pub fn save(&self, base: &Path) -> Result<()> {
        fs::write(base.with_extension("manifest"), self.manifest())?;
        let mut f = fs::File::create(base.with_extension("bin"))?;
        f.write_all(&self.payload())?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(base.with_extension("manifest"))?;
        let payload = fs::read(base.with_extension("bin"))?;
        Self::from_parts(&manifest, &payload)
    }
}
