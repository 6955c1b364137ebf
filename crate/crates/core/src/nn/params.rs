use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"VDGN";
const VERSION: u32 = 1;

/// Named trainable tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts (or replaces) a parameter and marks it trainable.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) {
        tensor.set_requires_grad(true);
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::clear_grad);
    }

    /// Adds every parameter gradient found in `grads` into the matching tensors.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, g) in grads {
            self.get_mut(name)?.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Euclidean norm of all accumulated gradients (missing gradients count as zero).
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Moves every tensor of `other` into `self` unchanged.
    pub fn extend(&mut self, other: ParameterSet) {
        self.tensors.extend(other.tensors);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.rows() as u32);
            w.u32(t.cols() as u32);
            w.f64s(t.values());
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("parameter set", bytes);
        let set = Self::decode(&mut r)?;
        r.finish()?;
        Ok(set)
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32()? as usize;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let at = r.offset();
            let name = r.str()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let values = r.f64s(rows * cols)?;
            if set.contains(&name) {
                return Err(Error::parse("parameter set", at, format!("duplicate entry `{name}`")));
            }
            set.insert(name, Tensor::from_vec(rows, cols, values)?);
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_order_and_lookup() {
        let mut p = ParameterSet::new();
        p.insert("b", Tensor::zeros(1, 1));
        p.insert("a", Tensor::zeros(2, 1));
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert!(p.get("a").unwrap().requires_grad());
        assert!(matches!(p.get("zz"), Err(Error::MissingParam(_))));
    }

    #[test]
    fn header_layout() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::from_rows(&[&[1.5, -2.0]]));
        let b = p.to_bytes();
        assert_eq!(&b[0..4], b"VDGN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(&b[16..17], b"w");
        assert_eq!(b.len(), 17 + 8 + 16);
        assert_eq!(f64::from_le_bytes(b[25..33].try_into().unwrap()), 1.5);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::filled(3, 3, 0.25));
        let b = p.to_bytes();
        assert!(matches!(
            ParameterSet::from_bytes(&b[..b.len() - 1]),
            Err(Error::Parse { .. })
        ));
        let mut bad = b.clone();
        bad[0] = b'X';
        match ParameterSet::from_bytes(&bad) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
