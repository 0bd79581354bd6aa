use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Maps the gradient of an op's output to gradients of its parents, in parent order.
/// `None` marks a parent that receives no gradient.
pub type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Define-by-run recording of a computation. Every op appends a node; `backward`
/// walks the nodes in reverse creation order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value: Rc::new(value), parents, backward, requires_grad });
        Var { tape: self, id }
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Vec::new(), None, false)
    }

    /// An unnamed leaf that accumulates gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Binds a named trainable parameter. Binding the same name twice returns the same
    /// leaf, so shared weights accumulate gradient from every use.
    pub fn param(&self, store: &ParamStore, name: &str) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Var { tape: self, id };
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not in the store"))
            .clone();
        let var = self.leaf(value);
        self.params.borrow_mut().insert(name.to_string(), var.id);
        var
    }

    /// Binds a parameter as a constant (frozen network).
    pub fn frozen(&self, store: &ParamStore, name: &str) -> Var<'_> {
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not in the store"))
            .clone();
        self.constant(value)
    }

    /// Records a custom op. The backward closure is dropped when no parent needs gradient.
    pub fn op<'t>(&'t self, value: Tensor, parents: &[Var<'t>], backward: BackwardFn) -> Var<'t> {
        let nodes = self.nodes.borrow();
        let requires_grad = parents.iter().any(|p| {
            assert!(std::ptr::eq(p.tape, self), "var belongs to a different tape");
            nodes[p.id].requires_grad
        });
        drop(nodes);
        let ids = parents.iter().map(|p| p.id).collect();
        if requires_grad {
            self.push_node(value, ids, Some(backward), true)
        } else {
            self.push_node(value, ids, None, false)
        }
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let shape = root.shape();
        assert_eq!(shape.iter().product::<usize>(), 1, "backward root must be a scalar, got {shape:?}");
        self.backward_with(root, Tensor::full(&shape, 1.0))
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, root: Var<'_>, seed: Tensor) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.shape(), seed.shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let mut out: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[pid].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), nodes[pid].value.shape(), "gradient shape mismatch");
                    match &mut grads[pid] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if node.requires_grad && node.parents.is_empty() {
                out[id] = Some(g);
            }
        }
        let params = self.params.borrow().iter().map(|(k, &v)| (k.clone(), v)).collect();
        Gradients { leaves: out, params }
    }
}

/// Leaf gradients produced by a reverse pass.
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<(String, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of every parameter of `store` bound on the tape; parameters the root does
    /// not depend on get zeros. Parameters bound from other stores are skipped.
    pub fn params(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, id)| {
                let value = store.get(name)?;
                let g = self.leaves[*id].clone().unwrap_or_else(|| Tensor::zeros(value.shape()));
                Some((name.clone(), g))
            })
            .collect()
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    #[inline]
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.numel(), 1, "item() on non-scalar of shape {:?}", v.shape());
        v.data()[0]
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }
}
