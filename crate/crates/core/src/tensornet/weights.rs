use super::real::Real;
use super::TensorError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Trainable parameter or running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: EntryKind,
    pub data: Vec<T>,
}

/// Named, ordered flat tensors. Arithmetic helpers touch `Param` entries only
/// unless stated otherwise; buffers are carried along unchanged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> WeightVector<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], kind: EntryKind, data: Vec<T>) -> Result<usize, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::Shape(format!("{name}: {} values for shape {shape:?}", data.len())));
        }
        if self.index.contains_key(name) {
            return Err(TensorError::Schema(format!("duplicate entry {name}")));
        }
        let i = self.entries.len();
        self.entries.push(Entry { name: name.to_string(), shape: shape.to_vec(), kind, data });
        self.index.insert(name.to_string(), i);
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &Entry<T> {
        &self.entries[i]
    }

    pub fn data(&self, i: usize) -> &[T] {
        &self.entries[i].data
    }

    pub fn data_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.entries[i].data
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Entry<T>> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Entry<T>> {
        self.index_of(name).map(move |i| &mut self.entries[i])
    }

    pub fn is_param(&self, i: usize) -> bool {
        self.entries[i].kind == EntryKind::Param
    }

    /// Number of scalar parameters (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param).map(|e| e.data.len()).sum()
    }

    /// Same names, shapes and kinds in the same order.
    pub fn same_schema<U>(&self, other: &WeightVector<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.name == b.name && a.shape == b.shape && a.kind == b.kind)
    }

    pub fn check_schema<U>(&self, other: &WeightVector<U>) -> Result<(), TensorError> {
        if self.same_schema(other) {
            return Ok(());
        }
        let first = self
            .entries
            .iter()
            .zip(&other.entries)
            .find(|(a, b)| a.name != b.name || a.shape != b.shape || a.kind != b.kind)
            .map(|(a, b)| format!("{} {:?} vs {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("{} vs {} entries", self.entries.len(), other.entries.len()));
        Err(TensorError::Schema(first))
    }

    /// All-zero copy with the same schema.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.data.iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for e in &mut self.entries {
            e.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `self += alpha * other` on parameters.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        debug_assert!(self.same_schema(other));
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.kind == EntryKind::Param {
                for (x, y) in a.data.iter_mut().zip(&b.data) {
                    *x += alpha * *y;
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for e in self.entries.iter_mut().filter(|e| e.kind == EntryKind::Param) {
            e.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.entries
            .iter()
            .zip(&other.entries)
            .filter(|(a, _)| a.kind == EntryKind::Param)
            .map(|(a, b)| a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).sum::<T>())
            .sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// `(1 - alpha) * a + alpha * b` on every entry, buffers included;
    /// exactly `a` at 0 and exactly `b` at 1.
    pub fn lerp(a: &Self, b: &Self, alpha: T) -> Self {
        debug_assert!(a.same_schema(b));
        let mut out = a.clone();
        let keep = T::one() - alpha;
        for (o, e) in out.entries.iter_mut().zip(&b.entries) {
            for (x, &y) in o.data.iter_mut().zip(&e.data) {
                *x = keep * *x + alpha * y;
            }
        }
        out
    }

    /// Convert to another precision.
    pub fn cast<U: Real>(&self) -> WeightVector<U> {
        WeightVector {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    kind: e.kind,
                    data: e.data.iter().map(|&v| U::of(v.f64())).collect(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copy values of every entry whose name also exists in `src` with the same shape.
    /// Returns how many entries were copied.
    pub fn copy_matching(&mut self, src: &Self) -> usize {
        let mut copied = 0;
        for e in &mut self.entries {
            if let Some(s) = src.get(&e.name) {
                if s.shape == e.shape {
                    e.data.copy_from_slice(&s.data);
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Parameter values flattened in entry order.
    pub fn flat_params(&self) -> Vec<T> {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param).flat_map(|e| e.data.iter().copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightVector<f64> {
        let mut w = WeightVector::new();
        w.push("a", &[2, 2], EntryKind::Param, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        w.push("m", &[2], EntryKind::Buffer, vec![5.0, 6.0]).unwrap();
        w
    }

    #[test]
    fn arithmetic_skips_buffers() {
        let mut w = sample();
        let g = w.clone();
        w.add_scaled(&g, -1.0);
        assert_eq!(w.data(0), &[0.0; 4]);
        assert_eq!(w.data(1), &[5.0, 6.0]);
        assert_eq!(g.dot(&g), 30.0);
        assert_eq!(g.param_count(), 4);
    }

    #[test]
    fn lerp_endpoints_and_cast() {
        let a = sample();
        let mut b = a.clone();
        b.scale(3.0);
        assert_eq!(WeightVector::lerp(&a, &b, 0.0), a);
        assert_eq!(WeightVector::lerp(&a, &b, 1.0), b);
        let single: WeightVector<f32> = a.cast();
        assert!(a.same_schema(&single));
        assert_eq!(single.data(0)[3], 4.0f32);
    }

    #[test]
    fn duplicate_and_bad_shape_rejected() {
        let mut w = sample();
        assert!(w.push("a", &[1], EntryKind::Param, vec![0.0]).is_err());
        assert!(w.push("b", &[3], EntryKind::Param, vec![0.0]).is_err());
    }
}
