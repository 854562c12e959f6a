//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a shape + row-major value buffer. Operations live on
//! [`Graph`]: a dynamic tape that records each executed op together with a
//! backward rule. Running a graph in inference mode executes the same
//! arithmetic without recording anything.

pub mod check;
pub mod graph;
pub mod kernels;

pub use graph::{Graph, NodeId};

use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense tensor of f64 values in row-major order.
///
/// Cloning is cheap: the value buffer is shared. A tensor created by a graph
/// op carries the id of its node on that graph; plain tensors carry none.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<NodeId>,
    requires_grad: bool,
}

impl Tensor {
    /// Untracked tensor from raw parts.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor_new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data: Rc::new(data),
            node: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Rc::new(vec![0.0; numel]),
            node: None,
            requires_grad: false,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Rc::new(vec![value; numel]),
            node: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: Rc::new(vec![value]),
            node: None,
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() requires a scalar tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub(crate) fn from_rc(shape: Vec<usize>, data: Rc<Vec<f64>>, node: Option<NodeId>, requires_grad: bool) -> Self {
        Self {
            shape,
            data,
            node,
            requires_grad,
        }
    }

    pub(crate) fn shared_data(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }
}

/// Max |a - b| over two equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
