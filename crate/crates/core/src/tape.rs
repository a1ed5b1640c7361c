//! Scalar reverse-mode tape for loss heads.
//!
//! The model's parameter gradients are produced in closed form by
//! [`crate::model::Model`]; the tape differentiates the scalar expression that
//! turns sequence log-probabilities into a loss. [`Tape::detach`] records a
//! value that takes part in the forward computation but passes no adjoint back,
//! which is how stop-gradient factors are expressed.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    /// Position of this node in the adjoint vector returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Detach,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    /// A differentiable input. Constants are inputs whose adjoint is ignored.
    pub fn input(&mut self, value: f64) -> Var {
        self.push(Op::Input, value)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(Op::Div(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(Op::Neg(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = math::sigmoid(self.value(a));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = math::log_sigmoid(self.value(a));
        self.push(Op::LogSigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = math::exp(self.value(a));
        self.push(Op::Exp(a), v)
    }

    /// Same value as `a`, no gradient through it.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a);
        self.push(Op::Detach, v)
    }

    /// Adjoints `∂root/∂v` for every recorded node.
    pub fn backward(&self, root: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.ops.len()];
        adj[root.0] = 1.0;
        for i in (0..=root.0).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Input | Op::Detach => {}
                Op::Add(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a.0] += g * self.values[b.0];
                    adj[b.0] += g * self.values[a.0];
                }
                Op::Div(a, b) => {
                    let vb = self.values[b.0];
                    adj[a.0] += g / vb;
                    adj[b.0] -= g * self.values[a.0] / (vb * vb);
                }
                Op::Scale(a, c) => adj[a.0] += g * c,
                Op::Neg(a) => adj[a.0] -= g,
                Op::Sigmoid(a) => {
                    let s = self.values[i];
                    adj[a.0] += g * s * (1.0 - s);
                }
                Op::Exp(a) => adj[a.0] += g * self.values[i],
                Op::LogSigmoid(a) => {
                    // d/dz log σ(z) = σ(-z)
                    adj[a.0] += g * math::sigmoid(-self.values[a.0]);
                }
            }
        }
        adj
    }
}
