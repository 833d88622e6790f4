//! Dynamic computation graph and reverse-mode differentiation.
//!
//! Every backward rule is written in terms of [`Var`] operations, so running the
//! backward pass with `create_graph = true` records a differentiable graph of the
//! gradient itself. This is what second-order terms such as input-gradient penalties
//! need.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::element::DType;
use crate::tensor::Tensor;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) struct BackwardArgs<'a> {
    pub grad: &'a Var,
    pub parents: &'a [Var],
    pub output: &'a Tensor,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Var>>>;

struct Node {
    id: usize,
    value: Tensor,
    requires_grad: bool,
    op: &'static str,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

impl Drop for Node {
    // Unlink long parent chains iteratively so deep graphs cannot overflow the stack.
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(v) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(v.0) {
                stack.append(&mut node.parents);
            }
        }
    }
}

/// A tensor-valued node in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

/// Whether operations currently record graph edges on this thread.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` with graph recording set to `enabled`, restoring the previous mode after.
pub fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

impl Var {
    fn new_node(
        value: Tensor,
        requires_grad: bool,
        op: &'static str,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
    ) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
            parents,
            backward,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Var::new_node(value, false, "constant", Vec::new(), None)
    }

    /// A leaf that gradients are accumulated for (a parameter or an input of interest).
    pub fn leaf(value: Tensor) -> Var {
        Var::new_node(value, true, "leaf", Vec::new(), None)
    }

    pub fn scalar(value: f64, dtype: DType) -> Var {
        Var::constant(Tensor::scalar(value, dtype))
    }

    /// Record the result of an operation. Edges are kept only when recording is
    /// enabled and some parent participates in differentiation.
    pub(crate) fn from_op(
        value: Tensor,
        op: &'static str,
        parents: Vec<Var>,
        backward: impl Fn(&BackwardArgs<'_>) -> Vec<Option<Var>> + 'static,
    ) -> Var {
        if is_grad_enabled() && parents.iter().any(|p| p.requires_grad()) {
            Var::new_node(value, true, op, parents, Some(Box::new(backward)))
        } else {
            Var::new_node(value, false, op, Vec::new(), None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn dtype(&self) -> DType {
        self.0.value.dtype()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Name of the operation that produced this node.
    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    /// Names of every operation in the recorded graph that produced `self`.
    pub fn graph_ops(&self) -> Vec<&'static str> {
        topo_order(self).iter().map(|v| v.op_name()).collect()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}[{}]({:?})", self.0.id, self.0.op, self.0.value)
    }
}

/// Nodes reachable from `root` that require grad, parents before children.
fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    if !root.requires_grad() {
        return order;
    }
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !seen.insert(v.id()) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in v.0.parents.iter().rev() {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

fn accumulate(grads: &mut HashMap<usize, Var>, id: usize, g: Var) {
    match grads.remove(&id) {
        Some(prev) => {
            grads.insert(id, prev.add(&g));
        }
        None => {
            grads.insert(id, g);
        }
    }
}

fn run_backward(root: &Var, seed: Var, keep: &HashSet<usize>) -> HashMap<usize, Var> {
    let order = topo_order(root);
    let mut grads: HashMap<usize, Var> = HashMap::new();
    let mut out = HashMap::new();
    grads.insert(root.id(), seed);
    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else { continue };
        if keep.contains(&node.id()) || node.is_leaf() {
            out.insert(node.id(), g.clone());
        }
        if let Some(bw) = &node.0.backward {
            let parent_grads =
                bw(&BackwardArgs { grad: &g, parents: &node.0.parents, output: &node.0.value });
            assert_eq!(parent_grads.len(), node.0.parents.len());
            for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if p.requires_grad() {
                        assert_eq!(pg.shape(), p.shape(), "gradient shape for {}", node.op_name());
                        accumulate(&mut grads, p.id(), pg);
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a scalar `output` with respect to `inputs`.
///
/// With `create_graph` the returned gradients are themselves differentiable.
/// Inputs that `output` does not depend on yield `None`.
pub fn grad(output: &Var, inputs: &[&Var], create_graph: bool) -> Vec<Option<Var>> {
    assert_eq!(output.value().numel(), 1, "grad() needs a scalar output, got {:?}", output.shape());
    let keep: HashSet<usize> = inputs.iter().map(|v| v.id()).collect();
    let seed = Var::constant(output.value().full_like(1.0));
    let mut g = with_grad_mode(create_graph, || run_backward(output, seed, &keep));
    inputs.iter().map(|v| g.remove(&v.id())).collect()
}

/// Gradient tensors for every leaf reached from a scalar loss.
pub struct Gradients {
    by_id: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.by_id.get(&v.id())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

pub fn backward(output: &Var) -> Gradients {
    assert_eq!(output.value().numel(), 1, "backward() needs a scalar output");
    let seed = Var::constant(output.value().full_like(1.0));
    let g = no_grad(|| run_backward(output, seed, &HashSet::new()));
    Gradients { by_id: g.into_iter().map(|(k, v)| (k, v.value().clone())).collect() }
}
