//! Binary checkpoints.
//!
//! Layout, all little-endian: `C2FK`, `u32` version, `u32` entry count, then
//! per entry `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims and
//! `f32` payload; finally a trailer of four `u64`: completed epochs, steps,
//! seed and optimizer step count. Optimizer moments are stored as ordinary
//! entries named `opt.m.<param>` and `opt.v.<param>`.

use std::path::Path;

use super::optim::AdamState;
use super::TrainError;
use crate::params::ParamStore;
use crate::tensor::Shape;

pub const MAGIC: &[u8; 4] = b"C2FK";
pub const VERSION: u32 = 1;
const M_PREFIX: &str = "opt.m.";
const V_PREFIX: &str = "opt.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    pub adam_t: u64,
}

fn dims(s: Shape) -> Vec<usize> {
    vec![s.n, s.c, s.h, s.w]
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, adam: Option<&AdamState>, epoch: u64, step: u64, seed: u64) -> Self {
        let mut entries: Vec<Entry> = store
            .entries()
            .iter()
            .map(|e| Entry { name: e.name.clone(), dims: dims(e.tensor.shape()), data: to_f32(e.tensor.data()) })
            .collect();
        if let Some(a) = adam {
            for (prefix, moments) in [(M_PREFIX, &a.m), (V_PREFIX, &a.v)] {
                for (name, m) in moments {
                    let shape = store.get(name).map(|t| dims(t.shape())).unwrap_or_else(|_| vec![m.len()]);
                    entries.push(Entry { name: format!("{prefix}{name}"), dims: shape, data: to_f32(m) });
                }
            }
        }
        Checkpoint { entries, epoch, step, seed, adam_t: adam.map_or(0, |a| a.t) }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Entries that are not optimizer state.
    pub fn param_entries(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| !e.name.starts_with(M_PREFIX) && !e.name.starts_with(V_PREFIX))
    }

    /// Copies every parameter of `store` (and optimizer moments, if asked
    /// for) from this checkpoint. Names and sizes must match exactly.
    pub fn restore(&self, store: &mut ParamStore, adam: Option<&mut AdamState>) -> Result<(), TrainError> {
        let mismatch = |d: String| TrainError::Checkpoint(d);
        if self.param_entries().count() != store.len() {
            return Err(mismatch(format!("checkpoint has {} parameters, network {}", self.param_entries().count(), store.len())));
        }
        let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
        for name in &names {
            let e = self.get(name).ok_or_else(|| mismatch(format!("missing parameter `{name}`")))?;
            let have = dims(store.get(name)?.shape());
            if e.dims != have {
                return Err(mismatch(format!("`{name}` has dims {:?}, network needs {have:?}", e.dims)));
            }
            let data: Vec<f64> = e.data.iter().map(|&x| f64::from(x)).collect();
            store.set_data(name, &data)?;
        }
        if let Some(a) = adam {
            for (prefix, moments) in [(M_PREFIX, &mut a.m), (V_PREFIX, &mut a.v)] {
                for (name, m) in moments.iter_mut() {
                    let key = format!("{prefix}{name}");
                    let e = self.get(&key).ok_or_else(|| mismatch(format!("missing optimizer state `{key}`")))?;
                    if e.data.len() != m.len() {
                        return Err(mismatch(format!("`{key}` has {} values, expected {}", e.data.len(), m.len())));
                    }
                    m.iter_mut().zip(&e.data).for_each(|(d, &s)| *d = f64::from(s));
                }
            }
            a.t = self.adam_t;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            b.extend_from_slice(e.name.as_bytes());
            b.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in &e.data {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        for v in [self.epoch, self.step, self.seed, self.adam_t] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TrainError::Corrupt { offset: 0, detail: "bad magic".into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TrainError::Corrupt { offset: 4, detail: format!("unsupported version {version}") });
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| TrainError::Corrupt { offset: at, detail: "name is not UTF-8".into() })?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let at = r.pos;
            let raw = r.take(n.checked_mul(4).ok_or(TrainError::Corrupt { offset: at, detail: "entry too large".into() })?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push(Entry { name, dims, data });
        }
        let (epoch, step, seed, adam_t) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        if r.pos != bytes.len() {
            return Err(TrainError::Corrupt { offset: r.pos, detail: format!("{} trailing bytes", bytes.len() - r.pos) });
        }
        Ok(Checkpoint { entries, epoch, step, seed, adam_t })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// A parameter store holding this checkpoint's parameters; every entry
    /// is marked learnable.
    pub fn to_store(&self) -> Result<ParamStore, TrainError> {
        let mut store = ParamStore::new();
        for e in self.param_entries() {
            if e.dims.len() != 4 {
                return Err(TrainError::Checkpoint(format!("`{}` has rank {}, expected 4", e.name, e.dims.len())));
            }
            let data = e.data.iter().map(|&x| f64::from(x)).collect();
            let t = crate::tensor::Tensor::from_vec([e.dims[0], e.dims[1], e.dims[2], e.dims[3]], data)?;
            store.insert(e.name.clone(), crate::params::ParamKind::Learnable, t)?;
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(TrainError::Corrupt { offset: self.pos, detail: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos) }),
        }
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        let s = self.take(8)?;
        let mut a = [0; 8];
        a.copy_from_slice(s);
        Ok(u64::from_le_bytes(a))
    }
}
