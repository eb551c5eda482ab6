use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one tensor inside a flat parameter (or gradient) buffer.
/// Vectors have `rows == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot shape")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()]).expect("slot shape")
    }

    pub fn vec<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range()])
    }

    pub fn vec_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.range()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered named tensors stored back to back in one `Vec<f64>`.
/// Gradients use the same layout in a plain buffer of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, shape: Vec<usize>, rows: usize, cols: usize) -> Slot {
        let offset = self.data.len();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry { name, shape, offset });
        self.data.resize(offset + rows * cols, 0.0);
        Slot { offset, rows, cols }
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        self.push(name.into(), vec![rows, cols], rows, cols)
    }

    pub fn add_vector(&mut self, name: impl Into<String>, len: usize) -> Slot {
        self.push(name.into(), vec![len], 1, len)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn fill(&mut self, slot: Slot, value: f64) {
        self.data[slot.range()].fill(value);
    }

    pub fn fill_uniform<R: Rng>(&mut self, slot: Slot, bound: f64, rng: &mut R) {
        for v in &mut self.data[slot.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Name of the tensor holding flat index `k`.
    pub fn name_of(&self, k: usize) -> &str {
        let i = self.entries.partition_point(|e| e.offset <= k);
        &self.entries[i.saturating_sub(1)].name
    }

    /// Scalars enumerated entry by entry.
    pub fn count(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }

    /// Replace the values, keeping the layout.
    pub fn load(&mut self, entries: &[ParamEntry], data: Vec<f64>) -> Result<()> {
        if entries != self.entries.as_slice() {
            return Err(Error::Config("parameter layout does not match the model".into()));
        }
        if data.len() != self.data.len() {
            return Err(Error::shape("parameter buffer", self.data.len(), data.len()));
        }
        self.data = data;
        Ok(())
    }
}
