use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;

use crate::params::ParamStore;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward closure: given all tape values and the output gradient, produce
/// one gradient array per parent, in parent order.
pub(crate) type BackFn = Box<dyn Fn(&[ArrayD<f64>], &ArrayD<f64>) -> Vec<ArrayD<f64>>>;

pub(crate) enum Back {
    /// Inputs, constants and parameters.
    Leaf,
    Op { parents: Vec<usize>, f: BackFn },
}

/// Dynamic computation tape.
pub struct Graph {
    pub(crate) values: Vec<ArrayD<f64>>,
    pub(crate) backs: Vec<Back>,
    grads: Vec<Option<ArrayD<f64>>>,
    /// Node id of each named parameter loaded into this graph.
    param_nodes: BTreeMap<String, usize>,
    /// Nodes that need a gradient (params and anything requested explicitly).
    wanted: Vec<bool>,
    /// While set, `param` loads snapshot as anonymous constants: values flow,
    /// gradients stop there and the name is not registered.
    frozen: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            backs: Vec::new(),
            grads: Vec::new(),
            param_nodes: BTreeMap::new(),
            wanted: Vec::new(),
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn push_leaf(&mut self, value: ArrayD<f64>, wanted: bool) -> Var {
        debug_assert!(value.is_standard_layout(), "tape values must be standard layout");
        self.values.push(value);
        self.backs.push(Back::Leaf);
        self.grads.push(None);
        self.wanted.push(wanted);
        Var(self.values.len() - 1)
    }

    pub(crate) fn push_op(&mut self, value: ArrayD<f64>, parents: Vec<usize>, f: BackFn) -> Var {
        debug_assert!(value.is_standard_layout(), "tape values must be standard layout");
        self.values.push(value);
        self.backs.push(Back::Op { parents, f });
        self.grads.push(None);
        self.wanted.push(false);
        Var(self.values.len() - 1)
    }

    /// Like `push_op`, but the backward factory receives the output node id,
    /// for ops whose derivative is cheapest in terms of their own output.
    pub(crate) fn push_op_self(
        &mut self,
        value: ArrayD<f64>,
        parents: Vec<usize>,
        make: impl FnOnce(usize) -> BackFn,
    ) -> Var {
        let id = self.values.len();
        let f = make(id);
        self.values.push(value);
        self.backs.push(Back::Op { parents, f });
        self.grads.push(None);
        self.wanted.push(false);
        Var(id)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf input whose gradient is retained after `backward`.
    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        self.push_leaf(value, true)
    }

    /// Toggle frozen-parameter mode (see `param`).
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Load a named parameter from the store. Repeated requests for the same
    /// name return the same node, so gradients accumulate in one place.
    /// In frozen mode the value is loaded as an anonymous constant instead.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if self.frozen {
            let value = store
                .get(name)
                .unwrap_or_else(|| panic!("parameter `{name}` not found in store"))
                .clone();
            return self.constant(value);
        }
        if let Some(&id) = self.param_nodes.get(name) {
            return Var(id);
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not found in store"))
            .clone();
        let v = self.push_leaf(value, true);
        self.param_nodes.insert(name.to_string(), v.0);
        v
    }

    /// Scalar constant with shape `[]`.
    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Scalar value of a 0-d (or single-element) node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = &self.values[v.0];
        assert_eq!(a.len(), 1, "scalar_value on node of {} elements", a.len());
        *a.iter().next().unwrap()
    }

    pub fn grad(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Keep this node's gradient around after `backward` (leaves always do).
    pub fn retain_grad(&mut self, v: Var) {
        self.wanted[v.0] = true;
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.values[loss.0].len(),
            1,
            "backward requires a scalar loss node"
        );
        for g in self.grads.iter_mut() {
            *g = None;
        }
        let seed = ArrayD::from_elem(self.values[loss.0].raw_dim(), 1.0);
        self.grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let Some(out_grad) = self.grads[i].clone() else {
                continue;
            };
            let parent_grads = match &self.backs[i] {
                Back::Leaf => continue,
                Back::Op { parents, f } => {
                    let gs = f(&self.values, &out_grad);
                    debug_assert_eq!(gs.len(), parents.len());
                    parents.clone().into_iter().zip(gs).collect::<Vec<_>>()
                }
            };
            for (p, g) in parent_grads {
                debug_assert_eq!(
                    g.shape(),
                    self.values[p].shape(),
                    "gradient shape mismatch flowing into node {p}"
                );
                // Closures may hand back contiguous-but-transposed arrays
                // (to_owned preserves such layouts); normalize so downstream
                // closures can rely on standard layout.
                let g = if g.is_standard_layout() {
                    g
                } else {
                    g.as_standard_layout().to_owned()
                };
                match &mut self.grads[p] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
            // Free intermediate gradients once consumed; keep leaves and
            // explicitly wanted nodes.
            if !self.wanted[i] {
                self.grads[i] = None;
            }
        }
    }

    /// Gradients of all named parameters touched by this graph.
    /// Parameters never reached by the loss get zero gradients.
    pub fn param_grads(&self) -> BTreeMap<String, ArrayD<f64>> {
        self.param_nodes
            .iter()
            .map(|(name, &id)| {
                let g = self.grads[id]
                    .clone()
                    .unwrap_or_else(|| ArrayD::zeros(self.values[id].raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }
}
