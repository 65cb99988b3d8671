use std::collections::HashMap;

use crate::numerics::Tensor2D;

pub type ParamId = usize;

/// Named parameter blocks in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2D>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, value: Tensor2D) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2D {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2D {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor2D)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (i, n.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    /// FNV-1a over names, shapes and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (_, name, v) in self.iter() {
            eat(name.as_bytes());
            eat(&(v.rows() as u64).to_le_bytes());
            eat(&(v.cols() as u64).to_le_bytes());
            for x in v.data() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Fingerprint restricted to blocks whose name starts with `prefix`.
    pub fn fingerprint_prefix(&self, prefix: &str) -> u64 {
        let mut sub = ParamStore::default();
        for (_, name, v) in self.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            sub.insert(name, v.clone());
        }
        sub.fingerprint()
    }
}

/// Per-block gradients, `None` where no gradient reached the block.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    blocks: Vec<Option<Tensor2D>>,
}

impl Grads {
    pub fn zeros_like_count(n: usize) -> Self {
        Self {
            blocks: (0..n).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor2D> {
        self.blocks.get(id).and_then(|b| b.as_ref())
    }

    pub fn set(&mut self, id: ParamId, g: Tensor2D) {
        self.blocks[id] = Some(g);
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn add(&mut self, other: &Grads) {
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks.iter_mut().flatten() {
            for v in b.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|b| b.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|b| b.is_finite())
    }
}
