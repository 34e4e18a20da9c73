//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends one node holding its value and the local partial
//! derivative toward each input. Nodes are appended in evaluation order, so a
//! single reverse sweep over the tape is a valid topological order.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{sigmoid_f64, Real};
use crate::error::{Result, SyncError};

#[derive(Debug, Clone, Copy)]
struct Node {
    edge_start: u32,
    edge_len: u32,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    edges: Vec<(u32, f64)>,
}

#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("edges", &inner.edges.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(edges),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.inner.borrow().edges.len()
    }

    fn push(&self, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let edge_start = inner.edges.len() as u32;
        inner.edges.extend(edges);
        let edge_len = inner.edges.len() as u32 - edge_start;
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node { edge_start, edge_len });
        Var { tape: self, idx, value }
    }

    /// A leaf variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [])
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(value, [])
    }

    /// Reverse sweep from `output`, returning d(output)/d(node) for every node
    /// recorded up to and including `output`.
    pub fn gradients(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(SyncError::Tape("output was recorded on a different tape".into()));
        }
        let inner = self.inner.borrow();
        let out = output.idx as usize;
        if out >= inner.nodes.len() {
            return Err(SyncError::Tape(format!("output node {out} is not on the tape")));
        }
        let mut adjoints = vec![0.0; out + 1];
        adjoints[out] = 1.0;
        for i in (0..=out).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = inner.nodes[i];
            let start = node.edge_start as usize;
            for &(parent, partial) in &inner.edges[start..start + node.edge_len as usize] {
                adjoints[parent as usize] += adj * partial;
            }
        }
        Ok(Gradients { adjoints })
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoints.get(var.idx as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.idx as usize
    }

    fn unary(self, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(value, [(self.idx, partial)])
    }

    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing tapes");
        self.tape.push(value, [(self.idx, da), (other.idx, db)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        self.value
    }

    fn constant_like(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.value);
        self.unary(s, s * (1.0 - s))
    }

    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let value = weights
            .iter()
            .zip(inputs)
            .fold(bias.value, |acc, (w, x)| acc + w.value * x.value);
        let edges = std::iter::once((bias.idx, 1.0)).chain(
            weights
                .iter()
                .zip(inputs)
                .flat_map(|(w, x)| [(w.idx, x.value), (x.idx, w.value)]),
        );
        bias.tape.push(value, edges)
    }

    fn sum(items: &[Self]) -> Self {
        let first = items.first().expect("sum of empty slice");
        let value = items.iter().map(|v| v.value).sum();
        first.tape.push(value, items.iter().map(|v| (v.idx, 1.0)))
    }
}
