//! Scalar reverse-mode tape.
//!
//! Every elementary operation appends one node holding its forward value
//! and the indices of its operands. [`Tape::backward`] sweeps the nodes in
//! reverse recording order, which is a reverse topological order because
//! operands are always recorded before their users.
//!
//! Jet components are ordinary scalars here, so losses that depend on
//! `d/dx` and `d²/dx²` of the network are differentiated with respect to
//! the parameters in a single sweep. The batched network engine in
//! [`crate::network`] is the fast path; this tape is the reference it is
//! checked against.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::jet::Jet3;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a scalar recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Param(usize),
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize, f64),
    Tanh(usize),
    Exp(usize),
    Abs(usize),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    value: f64,
}

/// Wengert list over scalars with parameter-slot bindings.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    num_params: usize,
    nodes: Vec<Node>,
}

impl Tape {
    /// A tape whose parameters occupy slots `0..num_params`.
    pub fn new(num_params: usize) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            num_params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        debug_assert_eq!(v.tape, self.id, "variable recorded on another tape");
        v.index
    }

    /// Leaf bound to parameter slot `slot`.
    pub fn param(&mut self, slot: usize, value: f64) -> Var {
        assert!(slot < self.num_params, "parameter slot {slot} out of range");
        self.push(Op::Param(slot), value)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, value)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[self.idx(v)].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let value = self.nodes[i].value + self.nodes[j].value;
        self.push(Op::Add(i, j), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let value = self.nodes[i].value - self.nodes[j].value;
        self.push(Op::Sub(i, j), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (i, j) = (self.idx(a), self.idx(b));
        let value = self.nodes[i].value * self.nodes[j].value;
        self.push(Op::Mul(i, j), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let i = self.idx(a);
        let value = self.nodes[i].value * c;
        self.push(Op::Scale(i, c), value)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let i = self.idx(a);
        let value = self.nodes[i].value + c;
        self.push(Op::Offset(i, c), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        let value = crate::jet::tanh(self.nodes[i].value);
        self.push(Op::Tanh(i), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        let value = self.nodes[i].value.exp();
        self.push(Op::Exp(i), value)
    }

    /// `|a|`, with derivative `sign(a)` and 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        let value = self.nodes[i].value.abs();
        self.push(Op::Abs(i), value)
    }

    /// Sum in index order.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter();
        match iter.next() {
            None => self.constant(0.0),
            Some(&first) => iter.fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Gradient of `output` with respect to every parameter slot.
    pub fn backward(&self, output: Var) -> Result<Vec<f64>> {
        if output.tape != self.id || output.index >= self.nodes.len() {
            return Err(Error::usage("backward: output variable is not on this tape"));
        }
        let mut adj = vec![0.0; output.index + 1];
        let mut grad = vec![0.0; self.num_params];
        adj[output.index] = 1.0;
        for k in (0..=output.index).rev() {
            let g = adj[k];
            if g == 0.0 {
                continue;
            }
            let node = self.nodes[k];
            match node.op {
                Op::Param(slot) => grad[slot] += g,
                Op::Const => {}
                Op::Add(i, j) => {
                    adj[i] += g;
                    adj[j] += g;
                }
                Op::Sub(i, j) => {
                    adj[i] += g;
                    adj[j] -= g;
                }
                Op::Mul(i, j) => {
                    let (a, b) = (self.nodes[i].value, self.nodes[j].value);
                    adj[i] += g * b;
                    adj[j] += g * a;
                }
                Op::Scale(i, c) => adj[i] += g * c,
                Op::Offset(i, _) => adj[i] += g,
                Op::Tanh(i) => adj[i] += g * (1.0 - node.value * node.value),
                Op::Exp(i) => adj[i] += g * node.value,
                Op::Abs(i) => {
                    let a = self.nodes[i].value;
                    if a > 0.0 {
                        adj[i] += g;
                    } else if a < 0.0 {
                        adj[i] -= g;
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Re-run the recorded program with new parameter values and return
    /// every node's value. With the recording parameters this reproduces
    /// the stored forward values exactly.
    pub fn replay(&self, params: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.num_params {
            return Err(Error::usage(format!(
                "replay: expected {} parameters, got {}",
                self.num_params,
                params.len()
            )));
        }
        let mut vals: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Param(slot) => params[slot],
                Op::Const => node.value,
                Op::Add(i, j) => vals[i] + vals[j],
                Op::Sub(i, j) => vals[i] - vals[j],
                Op::Mul(i, j) => vals[i] * vals[j],
                Op::Scale(i, c) => vals[i] * c,
                Op::Offset(i, c) => vals[i] + c,
                Op::Tanh(i) => crate::jet::tanh(vals[i]),
                Op::Exp(i) => vals[i].exp(),
                Op::Abs(i) => vals[i].abs(),
            };
            vals.push(v);
        }
        Ok(vals)
    }

    pub fn recorded_values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.value).collect()
    }
}

/// A [`Jet3`] whose components live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeJet {
    pub v: Var,
    pub d1: Var,
    pub d2: Var,
}

impl TapeJet {
    pub fn seed(tape: &mut Tape, x: f64) -> Self {
        TapeJet {
            v: tape.constant(x),
            d1: tape.constant(1.0),
            d2: tape.constant(0.0),
        }
    }

    pub fn value(&self, tape: &Tape) -> Jet3 {
        Jet3::new(tape.value(self.v), tape.value(self.d1), tape.value(self.d2))
    }
}

/// Tape version of [`crate::jet::jet_affine`] with trainable weights.
pub fn tape_jet_affine(tape: &mut Tape, inputs: &[TapeJet], weights: &[Var], bias: Var) -> Result<TapeJet> {
    if inputs.len() != weights.len() || inputs.is_empty() {
        return Err(Error::config(
            "weights",
            format!("{} inputs but {} weights", inputs.len(), weights.len()),
        ));
    }
    let mut v = Vec::with_capacity(inputs.len() + 1);
    let mut d1 = Vec::with_capacity(inputs.len());
    let mut d2 = Vec::with_capacity(inputs.len());
    for (u, &w) in inputs.iter().zip(weights) {
        v.push(tape.mul(w, u.v));
        d1.push(tape.mul(w, u.d1));
        d2.push(tape.mul(w, u.d2));
    }
    v.push(bias);
    Ok(TapeJet {
        v: tape.sum(&v),
        d1: tape.sum(&d1),
        d2: tape.sum(&d2),
    })
}

/// Tape version of [`crate::jet::jet_tanh`].
pub fn tape_jet_tanh(tape: &mut Tape, u: TapeJet) -> TapeJet {
    let t = tape.tanh(u.v);
    let t2 = tape.square(t);
    let s = tape.scale(t2, -1.0);
    let s = tape.offset(s, 1.0);
    let d1 = tape.mul(s, u.d1);
    let a = tape.mul(s, u.d2);
    let ts = tape.mul(t, s);
    let u1sq = tape.square(u.d1);
    let b = tape.mul(ts, u1sq);
    let b = tape.scale(b, 2.0);
    let d2 = tape.sub(a, b);
    TapeJet { v: t, d1, d2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_gradient() {
        let mut tape = Tape::new(1);
        let w = tape.param(0, 0.7);
        let f = tape.scale(w, 3.0);
        assert_eq!(tape.backward(f).unwrap(), vec![3.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut tape = Tape::new(1);
        let w = tape.param(0, 0.0);
        let x = tape.constant(2.0);
        let wx = tape.mul(w, x);
        let f = tape.tanh(wx);
        assert_eq!(tape.backward(f).unwrap(), vec![2.0]);
    }

    #[test]
    fn foreign_output_is_rejected() {
        let mut a = Tape::new(1);
        let mut b = Tape::new(1);
        let _ = a.param(0, 1.0);
        let vb = b.param(0, 1.0);
        let vb = b.exp(vb);
        assert!(a.backward(vb).is_err());
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut tape = Tape::new(2);
        let a = tape.param(0, 0.3);
        let b = tape.param(1, -1.7);
        let p = tape.mul(a, b);
        let q = tape.tanh(p);
        let r = tape.exp(q);
        let s = tape.abs(b);
        let _ = tape.add(r, s);
        let replayed = tape.replay(&[0.3, -1.7]).unwrap();
        let recorded = tape.recorded_values();
        assert_eq!(
            replayed.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            recorded.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn tape_jets_match_plain_jets() {
        use crate::jet::{jet_affine, jet_tanh};
        let mut tape = Tape::new(3);
        let x = TapeJet::seed(&mut tape, 0.4);
        let w = [tape.param(0, 1.3), tape.param(1, -0.6)];
        let b = tape.param(2, 0.2);
        let h = tape_jet_tanh(&mut tape, x);
        let z = tape_jet_affine(&mut tape, &[x, h], &w, b).unwrap();
        let out = tape_jet_tanh(&mut tape, z);

        let xj = Jet3::seed(0.4);
        let hj = jet_tanh(xj);
        let zj = jet_affine(&[xj, hj], &[1.3, -0.6], 0.2).unwrap();
        let expect = jet_tanh(zj);
        let got = out.value(&tape);
        assert_relative_eq!(got.v, expect.v, max_relative = 1e-14);
        assert_relative_eq!(got.d1, expect.d1, max_relative = 1e-14);
        assert_relative_eq!(got.d2, expect.d2, max_relative = 1e-14);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut tape = Tape::new(2);
            let a = tape.param(0, 0.9);
            let b = tape.param(1, 0.1);
            let x = TapeJet::seed(&mut tape, -0.3);
            let z = tape_jet_affine(&mut tape, &[x], &[a], b).unwrap();
            let h = tape_jet_tanh(&mut tape, z);
            let out = tape.add(h.d2, h.v);
            tape.backward(out).unwrap()
        };
        let g1 = build();
        let g2 = build();
        assert_eq!(g1[0].to_bits(), g2[0].to_bits());
        assert_eq!(g1[1].to_bits(), g2[1].to_bits());
    }
}
