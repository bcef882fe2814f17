//! Name-keyed registries for interchangeable strategies.
//!
//! Every pluggable family in the crate (smoothing kernels, covariance
//! tapers, sampling densities, moving-average kernels, random measures,
//! mean functions) registers its variants here under a stable name so a
//! JSON config or command-line flag can select them at runtime.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// An ordered map from strategy name to a value (a shared trait object or
/// a constructor).
pub struct Registry<T> {
    kind: &'static str,
    entries: BTreeMap<&'static str, T>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, value: T) -> &mut Self {
        self.entries.insert(name, value);
        self
    }

    pub fn with(mut self, name: &'static str, value: T) -> Self {
        self.register(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
