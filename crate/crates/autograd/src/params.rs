//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "CAFW" | version u16 | count u32 |
//!   count x { name_len u16 | name utf-8 | rank u8 | dims u32 x rank | data f32 x prod(dims) }
//! ```
//!
//! Buffers (batch-norm running statistics) are stored alongside trainable
//! parameters so that a reloaded model reproduces eval-mode outputs exactly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AutogradError, Result};
use crate::real::Real;
use crate::tape::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CAFW";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Trainable weight, counted by `count_params`.
    Param,
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
struct Entry<F> {
    name: String,
    value: Tensor<F>,
    kind: EntryKind,
    frozen: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    fn insert(&mut self, name: impl Into<String>, value: Tensor<F>, kind: EntryKind) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, value, kind, frozen: false });
        ParamId(id)
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.insert(name, value, EntryKind::Param)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.insert(name, value, EntryKind::Buffer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Trainable parameters only, in registration order.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().enumerate().filter(|(_, e)| e.kind == EntryKind::Param).map(|(i, _)| ParamId(i))
    }

    pub fn get(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> EntryKind {
        self.entries[id.0].kind
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    /// Whether a tape should track gradients for this entry.
    pub fn is_trainable(&self, id: ParamId) -> bool {
        let e = &self.entries[id.0];
        e.kind == EntryKind::Param && !e.frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Sum of element counts over trainable parameters.
    pub fn count_params(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param).map(|e| e.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: e.value.cast(), kind: e.kind, frozen: e.frozen })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Serialise every entry (parameters and buffers) as f32.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.value.shape.len() as u8);
            for &d in &e.value.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in &e.value.data {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Load values from checkpoint bytes, validating names, count and shapes.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = bytes;
        let bad = |m: &str| AutogradError::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u16(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(AutogradError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        if count != self.entries.len() {
            return Err(AutogradError::Checkpoint(format!(
                "checkpoint has {count} entries, model expects {}",
                self.entries.len()
            )));
        }
        let mut staged: Vec<(usize, Vec<F>)> = Vec::with_capacity(count);
        let mut seen = vec![false; count];
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name is not utf-8"))?;
            let idx = *self
                .by_name
                .get(&name)
                .ok_or_else(|| AutogradError::Checkpoint(format!("unknown entry '{name}'")))?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(AutogradError::Checkpoint(format!("duplicate entry '{name}'")));
            }
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(|_| bad("truncated rank"))?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(&mut r)? as usize);
            }
            if shape != self.entries[idx].value.shape {
                return Err(AutogradError::Checkpoint(format!(
                    "entry '{name}' has shape {shape:?}, model expects {:?}",
                    self.entries[idx].value.shape
                )));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
                data.push(F::from_f64_lossy(f32::from_le_bytes(buf) as f64));
            }
            staged.push((idx, data));
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        for (idx, data) in staged {
            self.entries[idx].value.data = data;
        }
        Ok(())
    }

    /// Write the checkpoint through a temporary file and rename.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.load_checkpoint_bytes(&bytes)
    }
}

fn read_u16(r: &mut &[u8]) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|_| AutogradError::Checkpoint("truncated".into()))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| AutogradError::Checkpoint("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
