use std::collections::HashMap;

use super::{NumericsError, Scalar, Tensor};

/// Named parameter tensors in insertion order. Shapes are fixed once a name
/// is registered.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRegistry<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamRegistry<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        ParamRegistry {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<(), NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<T>, NumericsError> {
        self.get(name)
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))
    }

    /// Replaces the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), NumericsError> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))?;
        if self.entries[i].1.shape() != value.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "param set",
                expected: self.entries[i].1.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        self.entries[i].1 = value;
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamRegistry<U> {
        ParamRegistry {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.insert("w", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        assert!(reg.insert("w", Tensor::zeros(&[1]).unwrap()).is_err());
        assert!(reg.set("w", Tensor::zeros(&[4]).unwrap()).is_err());
        reg.set("w", Tensor::full(&[2, 2], 1.0).unwrap()).unwrap();
        assert_eq!(reg.get("w").unwrap().sum(), 4.0);
        assert!(reg.expect("missing").is_err());
    }
}
