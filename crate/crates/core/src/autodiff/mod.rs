//! Nested differentiation for PINN residuals.
//!
//! Derivatives of the network output with respect to one input axis are
//! carried forward as second-order Taylor jets ([`Jet2`]). When the jet
//! arithmetic runs on a [`Tape`], every jet component becomes a scalar tape
//! node, so a reverse sweep over the tape differentiates any scalar built
//! from `u`, `u'` and `u''` with respect to the network parameters.
//!
//! The scalar tape is the reference route. Training uses the layer-level
//! batched engine in [`batch`], which is checked against it in the tests.

pub mod batch;

use std::ops::{Add, Deref, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::network::{self, NetworkParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("division by zero in {op:?}")]
    DivisionByZero { op: OpKind },
    #[error("non-finite result from {op:?}")]
    NonFinite { op: OpKind },
    #[error("node {node} is not on the tape (tape length {len})")]
    DanglingNode { node: usize, len: usize },
    #[error("{op:?} expects {expected} operand(s), got {got}")]
    Arity {
        op: OpKind,
        expected: usize,
        got: usize,
    },
    #[error("direction {axis} out of range for input width {width}")]
    AxisOutOfRange { axis: usize, width: usize },
    #[error("tape holds {tape} parameter leaves but the network has {network}")]
    ParamCountMismatch { tape: usize, network: usize },
    #[error(transparent)]
    Network(#[from] Box<network::NetworkError>),
}

/// Elementary operation kinds understood by the tape and by [`Jet2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sin,
    Cos,
    Exp,
    Square,
    /// Multiplication by a constant that is not itself differentiated.
    Scale(f64),
}

impl OpKind {
    fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            _ => 1,
        }
    }
}

/// Value, first and second derivative of a scalar along one input direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub val: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const fn new(val: f64, d1: f64, d2: f64) -> Self {
        Self { val, d1, d2 }
    }

    /// The differentiated input variable itself.
    pub const fn seed(x: f64) -> Self {
        Self::new(x, 1.0, 0.0)
    }

    pub const fn constant(c: f64) -> Self {
        Self::new(c, 0.0, 0.0)
    }

    /// Composition with a scalar function given its value and first two derivatives.
    #[inline]
    pub fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            val: f,
            d1: df * self.d1,
            d2: df * self.d2 + ddf * self.d1 * self.d1,
        }
    }

    pub fn tanh(self) -> Self {
        let y = self.val.tanh();
        let s = 1.0 - y * y;
        self.chain(y, s, -2.0 * y * s)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e, e)
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(c * self.val, c * self.d1, c * self.d2)
    }

    pub fn is_finite(&self) -> bool {
        self.val.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }

    /// Applies `op` to `args`, checking arity, zero denominators and finiteness.
    pub fn apply(op: OpKind, args: &[Jet2]) -> Result<Jet2, AutodiffError> {
        if args.len() != op.arity() {
            return Err(AutodiffError::Arity {
                op,
                expected: op.arity(),
                got: args.len(),
            });
        }
        let a = args[0];
        let out = match op {
            OpKind::Add => a + args[1],
            OpKind::Sub => a - args[1],
            OpKind::Mul => a * args[1],
            OpKind::Div => {
                if args[1].val == 0.0 {
                    return Err(AutodiffError::DivisionByZero { op });
                }
                a / args[1]
            }
            OpKind::Neg => -a,
            OpKind::Tanh => a.tanh(),
            OpKind::Sin => a.sin(),
            OpKind::Cos => a.cos(),
            OpKind::Exp => a.exp(),
            OpKind::Square => a.square(),
            OpKind::Scale(c) => a.scale(c),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(AutodiffError::NonFinite { op })
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2::new(self.val + rhs.val, self.d1 + rhs.d1, self.d2 + rhs.d2)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2::new(self.val - rhs.val, self.d1 - rhs.d1, self.d2 - rhs.d2)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2::new(
            self.val * rhs.val,
            self.d1 * rhs.val + self.val * rhs.d1,
            self.d2 * rhs.val + 2.0 * self.d1 * rhs.d1 + self.val * rhs.d2,
        )
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        let q = self.val / rhs.val;
        let q1 = (self.d1 - q * rhs.d1) / rhs.val;
        let q2 = (self.d2 - 2.0 * q1 * rhs.d1 - q * rhs.d2) / rhs.val;
        Jet2::new(q, q1, q2)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        Jet2::new(-self.val, -self.d1, -self.d2)
    }
}

/// Handle to a scalar node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A jet whose three components live on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetVar {
    pub val: Var,
    pub d1: Var,
    pub d2: Var,
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Constant,
    Param(usize),
    Unary(OpKind),
    Binary(OpKind),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: NodeKind,
    args: [usize; 2],
    partials: [f64; 2],
    value: f64,
}

/// Append-only record of scalar operations.
///
/// Parameter leaves occupy nodes `0..n_params` and map one-to-one onto the
/// flat parameter vector. [`backward`] only reads the tape, so one tape can
/// be swept several times; the trainer builds a fresh tape per loss
/// evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

/// Gradient of a scalar with respect to the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape without parameter leaves.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            n_params: 0,
        }
    }

    /// A tape whose first `params.len()` nodes are parameter leaves.
    pub fn for_params(params: &[f64]) -> Self {
        let nodes = params
            .iter()
            .enumerate()
            .map(|(slot, &value)| Node {
                kind: NodeKind::Param(slot),
                args: [0; 2],
                partials: [0.0; 2],
                value,
            })
            .collect();
        Self {
            nodes,
            n_params: params.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn param(&self, slot: usize) -> Var {
        assert!(slot < self.n_params, "parameter slot {slot} out of range");
        Var(slot)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    /// Operation that produced `v`, or `None` for leaves.
    pub fn op(&self, v: Var) -> Option<OpKind> {
        match self.nodes[v.0].kind {
            NodeKind::Unary(op) | NodeKind::Binary(op) => Some(op),
            NodeKind::Constant | NodeKind::Param(_) => None,
        }
    }

    pub fn jet(&self, j: JetVar) -> Jet2 {
        Jet2::new(self.value(j.val), self.value(j.d1), self.value(j.d2))
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(NodeKind::Constant, [0; 2], [0.0; 2], value)
    }

    pub fn jet_constant(&mut self, j: Jet2) -> JetVar {
        JetVar {
            val: self.constant(j.val),
            d1: self.constant(j.d1),
            d2: self.constant(j.d2),
        }
    }

    /// A parameter used as a jet: it does not vary along input directions.
    pub fn jet_param(&mut self, slot: usize) -> JetVar {
        let zero = self.constant(0.0);
        JetVar {
            val: self.param(slot),
            d1: zero,
            d2: zero,
        }
    }

    fn push(&mut self, kind: NodeKind, args: [usize; 2], partials: [f64; 2], value: f64) -> Var {
        self.nodes.push(Node {
            kind,
            args,
            partials,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, op: OpKind, value: f64, kind: NodeKind, args: [usize; 2], partials: [f64; 2]) -> Result<Var, AutodiffError> {
        if !value.is_finite() || partials.iter().any(|p| !p.is_finite()) {
            return Err(AutodiffError::NonFinite { op });
        }
        Ok(self.push(kind, args, partials, value))
    }

    /// Records a scalar unary operation.
    pub fn unary(&mut self, op: OpKind, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (value, partial) = match op {
            OpKind::Neg => (-x, -1.0),
            OpKind::Tanh => {
                let y = x.tanh();
                (y, 1.0 - y * y)
            }
            OpKind::Sin => (x.sin(), x.cos()),
            OpKind::Cos => (x.cos(), -x.sin()),
            OpKind::Exp => {
                let e = x.exp();
                (e, e)
            }
            OpKind::Square => (x * x, 2.0 * x),
            OpKind::Scale(c) => (c * x, c),
            _ => {
                return Err(AutodiffError::Arity {
                    op,
                    expected: 2,
                    got: 1,
                })
            }
        };
        self.checked(op, value, NodeKind::Unary(op), [a.0, 0], [partial, 0.0])
    }

    /// Records a scalar binary operation.
    pub fn binary(&mut self, op: OpKind, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        let (value, partials) = match op {
            OpKind::Add => (x + y, [1.0, 1.0]),
            OpKind::Sub => (x - y, [1.0, -1.0]),
            OpKind::Mul => (x * y, [y, x]),
            OpKind::Div => {
                if y == 0.0 {
                    return Err(AutodiffError::DivisionByZero { op });
                }
                let q = x / y;
                (q, [1.0 / y, -q / y])
            }
            _ => {
                return Err(AutodiffError::Arity {
                    op,
                    expected: 1,
                    got: 2,
                })
            }
        };
        self.checked(op, value, NodeKind::Binary(op), [a.0, b.0], partials)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(OpKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary(OpKind::Scale(c), a)
    }

    /// Applies `op` with truncated Taylor algebra, recording every jet
    /// component as scalar nodes so the result is differentiable in reverse.
    pub fn jet_elementary(&mut self, op: OpKind, args: &[JetVar]) -> Result<JetVar, AutodiffError> {
        if args.len() != op.arity() {
            return Err(AutodiffError::Arity {
                op,
                expected: op.arity(),
                got: args.len(),
            });
        }
        let a = args[0];
        match op {
            OpKind::Add | OpKind::Sub => {
                let b = args[1];
                Ok(JetVar {
                    val: self.binary(op, a.val, b.val)?,
                    d1: self.binary(op, a.d1, b.d1)?,
                    d2: self.binary(op, a.d2, b.d2)?,
                })
            }
            OpKind::Neg | OpKind::Scale(_) => Ok(JetVar {
                val: self.unary(op, a.val)?,
                d1: self.unary(op, a.d1)?,
                d2: self.unary(op, a.d2)?,
            }),
            OpKind::Mul => self.jet_mul(a, args[1]),
            OpKind::Div => self.jet_div(a, args[1]),
            OpKind::Square => self.jet_mul(a, a),
            OpKind::Tanh => {
                let y = self.unary(OpKind::Tanh, a.val)?;
                let y2 = self.unary(OpKind::Square, y)?;
                let one = self.constant(1.0);
                let s = self.sub(one, y2)?;
                let ys = self.mul(y, s)?;
                let curvature = self.scale(ys, -2.0)?;
                self.jet_chain(a, y, s, curvature)
            }
            OpKind::Sin => {
                let y = self.unary(OpKind::Sin, a.val)?;
                let c = self.unary(OpKind::Cos, a.val)?;
                let neg_y = self.unary(OpKind::Neg, y)?;
                self.jet_chain(a, y, c, neg_y)
            }
            OpKind::Cos => {
                let y = self.unary(OpKind::Cos, a.val)?;
                let s = self.unary(OpKind::Sin, a.val)?;
                let neg_s = self.unary(OpKind::Neg, s)?;
                let neg_y = self.unary(OpKind::Neg, y)?;
                self.jet_chain(a, y, neg_s, neg_y)
            }
            OpKind::Exp => {
                let y = self.unary(OpKind::Exp, a.val)?;
                self.jet_chain(a, y, y, y)
            }
        }
    }

    fn jet_chain(&mut self, a: JetVar, f: Var, df: Var, ddf: Var) -> Result<JetVar, AutodiffError> {
        let d1 = self.mul(df, a.d1)?;
        let first = self.mul(df, a.d2)?;
        let a1_sq = self.unary(OpKind::Square, a.d1)?;
        let second = self.mul(ddf, a1_sq)?;
        let d2 = self.add(first, second)?;
        Ok(JetVar { val: f, d1, d2 })
    }

    fn jet_mul(&mut self, a: JetVar, b: JetVar) -> Result<JetVar, AutodiffError> {
        let val = self.mul(a.val, b.val)?;
        let p = self.mul(a.d1, b.val)?;
        let q = self.mul(a.val, b.d1)?;
        let d1 = self.add(p, q)?;
        let r = self.mul(a.d2, b.val)?;
        let cross = self.mul(a.d1, b.d1)?;
        let cross2 = self.scale(cross, 2.0)?;
        let s = self.mul(a.val, b.d2)?;
        let rs = self.add(r, cross2)?;
        let d2 = self.add(rs, s)?;
        Ok(JetVar { val, d1, d2 })
    }

    fn jet_div(&mut self, a: JetVar, b: JetVar) -> Result<JetVar, AutodiffError> {
        let val = self.binary(OpKind::Div, a.val, b.val)?;
        let qb1 = self.mul(val, b.d1)?;
        let num1 = self.sub(a.d1, qb1)?;
        let d1 = self.binary(OpKind::Div, num1, b.val)?;
        let t1 = self.mul(d1, b.d1)?;
        let t1 = self.scale(t1, 2.0)?;
        let t2 = self.mul(val, b.d2)?;
        let num2 = self.sub(a.d2, t1)?;
        let num2 = self.sub(num2, t2)?;
        let d2 = self.binary(OpKind::Div, num2, b.val)?;
        Ok(JetVar { val, d1, d2 })
    }
}

/// Reverse sweep from `output`, returning d(output)/d(parameter) for every
/// parameter leaf. The tape is not modified.
pub fn backward(tape: &Tape, output: Var) -> Result<GradientVector, AutodiffError> {
    let len = tape.nodes.len();
    if output.0 >= len {
        return Err(AutodiffError::DanglingNode { node: output.0, len });
    }
    let mut adjoint = vec![0.0; output.0 + 1];
    adjoint[output.0] = 1.0;
    let mut grad = GradientVector::zeros(tape.n_params);
    for i in (0..=output.0).rev() {
        let a = adjoint[i];
        if a == 0.0 {
            continue;
        }
        let node = &tape.nodes[i];
        match node.kind {
            NodeKind::Constant => {}
            NodeKind::Param(slot) => grad.values[slot] += a,
            NodeKind::Unary(_) => adjoint[node.args[0]] += node.partials[0] * a,
            NodeKind::Binary(_) => {
                adjoint[node.args[0]] += node.partials[0] * a;
                adjoint[node.args[1]] += node.partials[1] * a;
            }
        }
    }
    Ok(grad)
}

/// Network output at `input` as a jet along input coordinate `axis`,
/// recorded on `tape` (which must carry the network's parameter leaves).
pub fn nested_second_derivative(
    net: &NetworkParams,
    input: &[f64],
    axis: usize,
    tape: &mut Tape,
) -> Result<JetVar, AutodiffError> {
    let width = net.input_width();
    if axis >= width {
        return Err(AutodiffError::AxisOutOfRange { axis, width });
    }
    let inputs: Vec<JetVar> = input
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let j = if i == axis { Jet2::seed(x) } else { Jet2::constant(x) };
            tape.jet_constant(j)
        })
        .collect();
    network::forward_jet(net, &inputs, tape).map_err(|e| match e {
        network::NetworkError::Autodiff(inner) => inner,
        other => AutodiffError::Network(Box::new(other)),
    })
}
