//! Named, freezable parameter collection and its binding onto a tape.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamFilter {
    Trainable,
    Frozen,
    All,
}

/// Parameters keyed by dotted path, iterated in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

/// `path` equals `prefix` or continues it at a `.` boundary. An empty prefix matches all.
pub fn path_matches(path: &str, prefix: &str) -> bool {
    prefix.is_empty()
        || path == prefix
        || (path.starts_with(prefix) && path.as_bytes().get(prefix.len()) == Some(&b'.'))
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        path: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::contract(format!(
                "duplicate parameter path `{path}`"
            )));
        }
        self.entries.insert(path, Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Param> {
        self.entries.get(path)
    }

    pub fn value(&self, path: &str) -> Result<&Tensor> {
        self.entries
            .get(path)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Path(path.to_string()))
    }

    pub fn value_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(path)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Path(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self, prefix: &str) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|k| path_matches(k, prefix))
            .map(String::as_str)
            .collect()
    }

    fn set_trainable(&mut self, prefix: &str, trainable: bool) -> Result<usize> {
        let mut hits = 0;
        for (path, p) in self.entries.iter_mut() {
            if path_matches(path, prefix) {
                p.trainable = trainable;
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(Error::Path(prefix.to_string()));
        }
        Ok(hits)
    }

    /// Marks every path under `prefix` frozen. Values are untouched.
    pub fn freeze(&mut self, prefix: &str) -> Result<usize> {
        self.set_trainable(prefix, false)
    }

    pub fn unfreeze(&mut self, prefix: &str) -> Result<usize> {
        self.set_trainable(prefix, true)
    }

    /// Total element count over entries matching `filter` and `prefix`.
    pub fn count(&self, filter: ParamFilter, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(path, p)| {
                path_matches(path, prefix)
                    && match filter {
                        ParamFilter::Trainable => p.trainable,
                        ParamFilter::Frozen => !p.trainable,
                        ParamFilter::All => true,
                    }
            })
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// FNV-1a digest over paths and value bits under `prefix`.
    pub fn digest(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (path, p) in self.entries.iter().filter(|(k, _)| path_matches(k, prefix)) {
            feed(path.as_bytes());
            feed(&p.value.to_le_bytes());
        }
        h
    }
}

/// Lazily binds store entries onto a tape; frozen entries become constants.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: BTreeMap<&'a str, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            vars: BTreeMap::new(),
        }
    }

    pub fn get(&mut self, tape: &mut Tape, path: &str) -> Result<Var> {
        let (key, param) = self
            .store
            .entries
            .get_key_value(path)
            .ok_or_else(|| Error::Path(path.to_string()))?;
        Ok(*self
            .vars
            .entry(key.as_str())
            .or_insert_with(|| tape.leaf(param.value.clone(), param.trainable)))
    }

    pub fn bound(&self) -> impl Iterator<Item = (&'a str, Var)> + '_ {
        self.vars.iter().map(|(k, v)| (*k, *v))
    }

    /// Gradients of every bound trainable parameter, in path order.
    pub fn collect(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(path, var)| grads.take(*var).map(|g| (path.to_string(), g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("encoder.a", Tensor::zeros(&[2, 3]), true).unwrap();
        s.insert("encoder.b", Tensor::zeros(&[4]), true).unwrap();
        s.insert("encoderx.c", Tensor::zeros(&[1]), true).unwrap();
        s.insert("decoder.d", Tensor::zeros(&[5]), true).unwrap();
        s
    }

    #[test]
    fn counting() {
        assert_eq!(ParamStore::new().count(ParamFilter::All, ""), 0);
        let s = store();
        assert_eq!(s.count(ParamFilter::All, "encoder"), 10);
        assert_eq!(s.count(ParamFilter::All, ""), 16);
    }

    #[test]
    fn freeze_respects_dot_boundary() {
        let mut s = store();
        assert_eq!(s.freeze("encoder").unwrap(), 2);
        assert_eq!(s.count(ParamFilter::Trainable, ""), 6);
        assert_eq!(s.count(ParamFilter::Frozen, ""), 10);
        let before = s.clone();
        s.unfreeze("encoder").unwrap();
        s.freeze("encoder").unwrap();
        assert_eq!(s, before);
        assert!(matches!(s.freeze("nope"), Err(Error::Path(_))));
    }

    #[test]
    fn duplicate_rejected() {
        let mut s = store();
        assert!(s.insert("decoder.d", Tensor::zeros(&[1]), true).is_err());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut s = store();
        s.freeze("encoder").unwrap();
        let mut tape = Tape::new();
        let mut b = Binder::new(&s);
        let a = b.get(&mut tape, "encoder.b").unwrap();
        let d = b.get(&mut tape, "decoder.d").unwrap();
        let la = tape.sum(a);
        let ld = tape.sum(d);
        let l = tape.add(la, ld).unwrap();
        let mut g = tape.backward(l).unwrap();
        assert!(g.get(a).is_none());
        let grads = b.collect(&mut g);
        assert_eq!(grads.keys().collect::<Vec<_>>(), vec!["decoder.d"]);
    }

    #[test]
    fn digest_tracks_values() {
        let mut s = store();
        let d0 = s.digest("encoder");
        s.value_mut("decoder.d").unwrap().data_mut()[0] = 1.0;
        assert_eq!(s.digest("encoder"), d0);
        s.value_mut("encoder.b").unwrap().data_mut()[0] = 1.0;
        assert_ne!(s.digest("encoder"), d0);
    }
}
