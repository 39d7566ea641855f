//! Registry of named trainable tensors.

use std::collections::HashMap;

use crate::tensor::Tensor;

/// Every learnable weight of a model, registered once under a unique name.
/// The registry preserves registration order, which fixes the optimizer's
/// update order and the checkpoint layout.
#[derive(Default)]
pub struct ModelParameters {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ModelParameters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under `name`. Panics on a duplicate name: that is
    /// a construction bug, not a runtime condition.
    pub fn register(&mut self, name: &str, t: Tensor) -> Tensor {
        assert!(
            !self.index.contains_key(name),
            "parameter `{name}` registered twice"
        );
        assert!(t.requires_grad(), "parameter `{name}` must require grad");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t.clone()));
        t
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar count across all parameters.
    pub fn total_numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Named handles, cloned; the layout expected by `grad_check`.
    pub fn named_handles(&self) -> Vec<(String, Tensor)> {
        self.entries.clone()
    }
}
