use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A named tensor with its gradient buffer. Non-trainable tensors hold
/// running statistics and never receive gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("tensor {name}: shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { name, shape, grad: vec![T::zero(); n], data, trainable })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, tensor: Tensor<T>) -> Result<usize> {
        if self.index.contains_key(&tensor.name) {
            return Err(Error::Parameter(format!("duplicate tensor name '{}'", tensor.name)));
        }
        let id = self.tensors.len();
        self.index.insert(tensor.name.clone(), id);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Wiring(format!("missing tensor '{name}'")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.tensors[self.id(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.id(name)?;
        Ok(&mut self.tensors[id])
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::of(v.to_f64())).collect(),
                    grad: t.grad.iter().map(|&v| U::of(v.to_f64())).collect(),
                    trainable: t.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Trainable values concatenated in store order.
    pub fn flat_values(&self) -> Vec<T> {
        self.tensors.iter().filter(|t| t.trainable).flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.tensors.iter().filter(|t| t.trainable).flat_map(|t| t.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape("flat parameter vector has the wrong length".into()));
        }
        let mut rest = values;
        for t in self.tensors.iter_mut().filter(|t| t.trainable) {
            let (head, tail) = rest.split_at(t.len());
            t.data.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }
}
