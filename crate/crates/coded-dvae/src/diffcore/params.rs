//! Named dense parameter arrays with a flat view for the optimizer and for
//! finite-difference sweeps.

use std::collections::HashMap;

use super::DiffError;

/// One named array. Vectors are stored with `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    offset: usize,
    data: Vec<f64>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Start of this entry in the store's flat layout.
    pub fn offset(&self) -> usize {
        self.offset
    }
}

/// Ordered collection of named parameter arrays. The flat layout concatenates
/// entries in registration order and is the coordinate system shared by
/// [`GradBuffer`], the optimizer, and finite-difference sweeps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
    flat_len: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<(), DiffError> {
        if self.by_name.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        if data.len() != rows * cols {
            return Err(DiffError::ShapeMismatch {
                what: format!("{name}: {rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { where_: format!("parameter '{name}'") });
        }
        let offset = self.flat_len;
        self.flat_len += data.len();
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), rows, cols, offset, data });
        Ok(())
    }

    pub fn add_vector(&mut self, name: &str, data: Vec<f64>) -> Result<(), DiffError> {
        let rows = data.len();
        self.add_matrix(name, rows, 1, data)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry, DiffError> {
        self.by_name
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    /// Overwrite one entry's values, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<(), DiffError> {
        let idx = *self
            .by_name
            .get(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
        let entry = &mut self.entries[idx];
        if values.len() != entry.data.len() {
            return Err(DiffError::ShapeMismatch {
                what: format!("{name} holds {} values, got {}", entry.data.len(), values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { where_: format!("parameter '{name}'") });
        }
        entry.data.copy_from_slice(values);
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn flat_len(&self) -> usize {
        self.flat_len
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len);
        for e in &self.entries {
            out.extend_from_slice(&e.data);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), DiffError> {
        if flat.len() != self.flat_len {
            return Err(DiffError::ShapeMismatch {
                what: format!("flat view has {} values, got {}", self.flat_len, flat.len()),
            });
        }
        for e in &mut self.entries {
            let len = e.data.len();
            e.data.copy_from_slice(&flat[e.offset..e.offset + len]);
        }
        Ok(())
    }

    pub fn flat_at(&self, i: usize) -> f64 {
        let e = self.entry_for_flat(i);
        e.data[i - e.offset]
    }

    pub fn set_flat_at(&mut self, i: usize, v: f64) {
        let idx = self
            .entries
            .iter()
            .position(|e| i >= e.offset && i < e.offset + e.data.len())
            .expect("flat index in range");
        let offset = self.entries[idx].offset;
        self.entries[idx].data[i - offset] = v;
    }

    /// Entry owning flat coordinate `i`.
    pub fn entry_for_flat(&self, i: usize) -> &ParamEntry {
        self.entries
            .iter()
            .find(|e| i >= e.offset && i < e.offset + e.data.len())
            .expect("flat index in range")
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient values aligned with a store's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    flat: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros(len: usize) -> Self {
        Self { flat: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn accumulate(&mut self, offset: usize, seed: &[f64]) {
        for (slot, s) in self.flat[offset..offset + seed.len()].iter_mut().zip(seed) {
            *slot += s;
        }
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        assert_eq!(self.flat.len(), other.flat.len(), "gradient buffers must align");
        for (a, b) in self.flat.iter_mut().zip(&other.flat) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.flat {
            *v *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }

    /// Slice of gradients for one named entry of `store`.
    pub fn for_entry<'a>(&'a self, store: &ParamStore, name: &str) -> Result<&'a [f64], DiffError> {
        let e = store.entry(name)?;
        Ok(&self.flat[e.offset()..e.offset() + e.len()])
    }
}
