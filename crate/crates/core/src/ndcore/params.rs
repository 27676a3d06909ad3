use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ndcore::tensor::{Element, Tensor};

/// Index of a named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered collection of uniquely named tensors.
///
/// Used both for trainable parameters and for non-trainable buffers such
/// as batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T = f32> {
    entries: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid("param", format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Parameter { name, tensor });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Entries sorted lexicographically by name (serialization order).
    pub fn sorted(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrite an entry's value, keeping its shape.
    pub fn assign(&mut self, name: &str, value: &Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::invalid("param", format!("no parameter named {name}")))?;
        let slot = &mut self.entries[id.0].tensor;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "param",
                0,
                format!("{name}: {:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        slot.data_mut().copy_from_slice(value.data());
        Ok(())
    }
}
