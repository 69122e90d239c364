//! The autodiff tape: op records in topological order.

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

pub(crate) struct Node<T> {
    pub tensor: Tensor<T>,
    pub leaf: bool,
    /// False only for constant leaves; their gradients are never computed.
    pub active: bool,
}

struct Record<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    output: NodeId,
}

/// Records ops during a forward pass and replays them backward.
///
/// Values referenced by the tape are snapshots by sharing: callers must not
/// mutate tensor data between forward and backward on the same graph.
pub struct Graph<T> {
    recording: bool,
    nodes: Vec<Node<T>>,
    records: Vec<Record<T>>,
    node_of: HashMap<usize, NodeId>,
}

impl<T: Scalar> Graph<T> {
    /// Graph that records every op touching a differentiable input.
    pub fn recording() -> Self {
        Graph { recording: true, nodes: Vec::new(), records: Vec::new(), node_of: HashMap::new() }
    }

    /// Graph that records nothing; forwards run without tape overhead.
    pub fn inference() -> Self {
        Graph { recording: false, nodes: Vec::new(), records: Vec::new(), node_of: HashMap::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub(crate) fn should_record(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording
            && inputs
                .iter()
                .any(|t| t.requires_grad() || self.node_of.contains_key(&t.ptr_id()))
    }

    fn node_for(&mut self, t: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.node_of.get(&t.ptr_id()) {
            return id;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { tensor: t.clone(), leaf: true, active: t.requires_grad() });
        self.node_of.insert(t.ptr_id(), id);
        id
    }

    pub(crate) fn record(&mut self, op: Op<T>, inputs: &[&Tensor<T>], output: &Tensor<T>) {
        let input_ids: Vec<NodeId> = inputs.iter().map(|t| self.node_for(t)).collect();
        let out_id = NodeId(self.nodes.len());
        output.set_requires_grad(true);
        self.nodes.push(Node { tensor: output.clone(), leaf: false, active: true });
        self.node_of.insert(output.ptr_id(), out_id);
        self.records.push(Record { op, inputs: input_ids, output: out_id });
    }

    /// Backpropagates from a scalar loss, accumulating into the `grad` buffer
    /// of every differentiable leaf. Consumes the tape.
    pub fn backward(self, loss: &Tensor<T>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss { shape: loss.shape() });
        }
        let loss_id = *self.node_of.get(&loss.ptr_id()).ok_or_else(|| {
            Error::ShapeMismatch { op: "backward", detail: "loss is not part of this graph".into() }
        })?;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss_id.0] = Some(vec![T::one()]);

        for rec in self.records.iter().rev() {
            let Some(out_grad) = grads[rec.output.0].take() else { continue };
            let contributions = rec.op.backward(&self.nodes, &rec.inputs, rec.output, &out_grad)?;
            debug_assert_eq!(contributions.len(), rec.inputs.len());
            for (slot, contribution) in rec.inputs.iter().zip(contributions) {
                let Some(g) = contribution else { continue };
                match grads[slot.0].as_mut() {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(&g) {
                            *b = *b + *v;
                        }
                    }
                    None => grads[slot.0] = Some(g),
                }
            }
        }

        for (node, grad) in self.nodes.iter().zip(grads.into_iter()) {
            if node.leaf && node.active {
                if let Some(g) = grad {
                    node.tensor.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }
}
