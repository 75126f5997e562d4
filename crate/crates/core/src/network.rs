//! The main multilayer perceptron and the affine energy network.
//!
//! One `tanh` trunk feeds linear heads: `main_outputs` wavefunction
//! channels (one for real ψ, two for Re ψ / Im ψ) followed by the auxiliary
//! running-integral output ν. All parameters, including the two scalars of
//! the energy network, live in one flat vector so that optimizers,
//! checkpoints and finite-difference checks can treat them uniformly.
//!
//! Two evaluation paths exist. [`NetworkParams::forward_jet`] pushes a
//! single point through the jet rules of [`crate::jet`]. The batched path
//! ([`NetworkParams::forward_batch`] / [`NetworkParams::backward_batch`])
//! stacks the value, first and second derivative blocks of a whole batch
//! side by side so each layer is a single matrix product, and runs the
//! reverse sweep by hand. Training uses the batched path.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{jet_affine, jet_tanh, Jet3};
use crate::tape::{tape_jet_affine, tape_jet_tanh, Tape, TapeJet, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    XavierUniform,
    KaimingNormal,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::XavierUniform => f.write_str("xavier-uniform"),
            InitScheme::KaimingNormal => f.write_str("kaiming-normal"),
        }
    }
}

/// Shape of the main network. Input is the scalar position and the
/// activation is always `tanh`; there is exactly one auxiliary output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub main_outputs: usize,
    pub init: InitScheme,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 {
            return Err(Error::config("network.hidden_layers", "must be at least 1"));
        }
        if self.hidden_width < 1 {
            return Err(Error::config("network.hidden_width", "must be at least 1"));
        }
        if !(1..=2).contains(&self.main_outputs) {
            return Err(Error::config("network.main_outputs", "must be 1 or 2"));
        }
        Ok(())
    }

    /// Total heads of the output layer (ψ channels plus ν).
    pub fn heads(&self) -> usize {
        self.main_outputs + 1
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = 1;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.heads()));
        dims
    }

    /// Number of trainable scalars including the energy network.
    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * i + o).sum::<usize>() + 2
    }
}

/// Position of one dense layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

fn layer_slots(spec: &NetworkSpec) -> Vec<LayerSlot> {
    let mut offset = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let slot = LayerSlot {
                fan_in,
                fan_out,
                weight: offset,
                bias: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            slot
        })
        .collect()
}

/// Weights and biases of the main network followed by the energy
/// network's weight and bias.
///
/// Dense layer `k` stores its `fan_out × fan_in` weight matrix row-major,
/// then its bias vector. The last two entries are `energy_weight` and
/// `energy_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    spec: NetworkSpec,
    slots: Vec<LayerSlot>,
    data: Vec<f64>,
}

/// ψ channels and ν at one input point.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputJets {
    pub psi: Vec<Jet3>,
    pub nu: Jet3,
}

impl NetworkParams {
    /// Randomly initialized parameters; biases start at zero.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = params.slots.clone();
        for slot in &slots {
            let w = &mut params.data[slot.weight..slot.bias];
            fill_weights(w, slot.fan_in, slot.fan_out, spec.init, &mut rng);
        }
        let n = params.data.len();
        let mut ew = [0.0];
        fill_weights(&mut ew, 1, 1, spec.init, &mut rng);
        params.data[n - 2] = ew[0];
        Ok(params)
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(NetworkParams {
            spec: spec.clone(),
            slots: layer_slots(spec),
            data: vec![0.0; spec.num_params()],
        })
    }

    pub fn from_vec(spec: &NetworkSpec, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if data.len() != spec.num_params() {
            return Err(Error::usage(format!(
                "parameter vector has {} entries, network needs {}",
                data.len(),
                spec.num_params()
            )));
        }
        Ok(NetworkParams {
            spec: spec.clone(),
            slots: layer_slots(spec),
            data,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_layers(&self) -> usize {
        self.slots.len()
    }

    /// `(fan_in, fan_out)` of dense layer `k`.
    pub fn layer_shape(&self, k: usize) -> (usize, usize) {
        (self.slots[k].fan_in, self.slots[k].fan_out)
    }

    pub fn weights(&self, k: usize) -> &[f64] {
        let s = self.slots[k];
        &self.data[s.weight..s.bias]
    }

    pub fn weights_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.slots[k];
        &mut self.data[s.weight..s.bias]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        let s = self.slots[k];
        &self.data[s.bias..s.bias + s.fan_out]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.slots[k];
        &mut self.data[s.bias..s.bias + s.fan_out]
    }

    /// Flat index of the energy network's weight; its bias follows.
    pub fn energy_slot(&self) -> usize {
        self.data.len() - 2
    }

    pub fn energy_weight(&self) -> f64 {
        self.data[self.data.len() - 2]
    }

    pub fn energy_bias(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn set_energy(&mut self, weight: f64, bias: f64) {
        let n = self.data.len();
        self.data[n - 2] = weight;
        self.data[n - 1] = bias;
    }

    /// Output of the energy network: a linear map applied to the constant 1.
    pub fn energy(&self) -> f64 {
        self.energy_weight() * 1.0 + self.energy_bias()
    }

    /// Jet evaluation at one point.
    pub fn forward_jet(&self, x: f64) -> Result<OutputJets> {
        if !x.is_finite() {
            return Err(Error::NonFinite { layer: 0, what: "input" });
        }
        let mut act = vec![Jet3::seed(x)];
        let last = self.slots.len() - 1;
        for (k, slot) in self.slots.iter().enumerate() {
            let w = self.weights(k);
            let b = self.bias(k);
            let mut next = Vec::with_capacity(slot.fan_out);
            for u in 0..slot.fan_out {
                let row = &w[u * slot.fan_in..(u + 1) * slot.fan_in];
                let z = jet_affine(&act, row, b[u])?;
                let h = if k == last { z } else { jet_tanh(z) };
                if !h.is_finite() {
                    return Err(Error::NonFinite { layer: k, what: "activation" });
                }
                next.push(h);
            }
            act = next;
        }
        let nu = act.pop().expect("output layer has an auxiliary head");
        Ok(OutputJets { psi: act, nu })
    }

    /// Record the forward jet pass on `tape`, binding parameter `i` of the
    /// flat vector to tape slot `i`. Returns the ψ channels, ν and E.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: f64) -> Result<(Vec<TapeJet>, TapeJet, Var)> {
        if tape.num_params() != self.len() {
            return Err(Error::usage("tape parameter count does not match the network"));
        }
        let mut act = vec![TapeJet::seed(tape, x)];
        let last = self.slots.len() - 1;
        for (k, slot) in self.slots.iter().enumerate() {
            let mut next = Vec::with_capacity(slot.fan_out);
            for u in 0..slot.fan_out {
                let weights: Vec<Var> = (0..slot.fan_in)
                    .map(|j| {
                        let idx = slot.weight + u * slot.fan_in + j;
                        tape.param(idx, self.data[idx])
                    })
                    .collect();
                let bidx = slot.bias + u;
                let bias = tape.param(bidx, self.data[bidx]);
                let z = tape_jet_affine(tape, &act, &weights, bias)?;
                next.push(if k == last { z } else { tape_jet_tanh(tape, z) });
            }
            act = next;
        }
        let nu = act.pop().expect("output layer has an auxiliary head");
        let e = self.energy_on_tape(tape);
        Ok((act, nu, e))
    }

    pub fn energy_on_tape(&self, tape: &mut Tape) -> Var {
        let slot = self.energy_slot();
        let w = tape.param(slot, self.data[slot]);
        let b = tape.param(slot + 1, self.data[slot + 1]);
        let one = tape.constant(1.0);
        let wx = tape.mul(w, one);
        tape.add(wx, b)
    }
}

fn fill_weights(w: &mut [f64], fan_in: usize, fan_out: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) {
    match scheme {
        InitScheme::XavierUniform => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        InitScheme::KaimingNormal => {
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in w.iter_mut() {
                *v = normal.sample(rng);
            }
        }
    }
}

/// Which derivative blocks a batch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Values only.
    Value,
    /// Values, first and second input derivatives.
    Jet,
}

impl Order {
    pub fn blocks(self) -> usize {
        match self {
            Order::Value => 1,
            Order::Jet => 3,
        }
    }
}

/// Forward cache of a batched evaluation.
///
/// Every stored matrix is row-major with one row per unit and
/// `blocks × n` columns: first the values of all points, then (for
/// [`Order::Jet`]) all first derivatives, then all second derivatives.
#[derive(Clone, Debug)]
pub struct Batch {
    order: Order,
    n: usize,
    heads: usize,
    xs: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl Batch {
    pub fn order(&self) -> Order {
        self.order
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    fn cols(&self) -> usize {
        self.order.blocks() * self.n
    }

    pub fn value(&self, head: usize, i: usize) -> f64 {
        self.out[head * self.cols() + i]
    }

    pub fn d1(&self, head: usize, i: usize) -> f64 {
        debug_assert_eq!(self.order, Order::Jet);
        self.out[head * self.cols() + self.n + i]
    }

    pub fn d2(&self, head: usize, i: usize) -> f64 {
        debug_assert_eq!(self.order, Order::Jet);
        self.out[head * self.cols() + 2 * self.n + i]
    }

    pub fn jet(&self, head: usize, i: usize) -> Jet3 {
        match self.order {
            Order::Jet => Jet3::new(self.value(head, i), self.d1(head, i), self.d2(head, i)),
            Order::Value => Jet3::constant(self.value(head, i)),
        }
    }

    /// Point `i` as [`OutputJets`]; the last head is ν.
    pub fn outputs(&self, i: usize) -> OutputJets {
        let psi = (0..self.heads - 1).map(|h| self.jet(h, i)).collect();
        OutputJets {
            psi,
            nu: self.jet(self.heads - 1, i),
        }
    }

    /// A zeroed upstream-gradient buffer shaped like this batch's outputs.
    pub fn grad_buffer(&self) -> OutputGrad {
        OutputGrad {
            order: self.order,
            n: self.n,
            heads: self.heads,
            data: vec![0.0; self.heads * self.cols()],
        }
    }
}

/// Gradient of a scalar with respect to every output component of a
/// [`Batch`], in the same layout.
#[derive(Clone, Debug)]
pub struct OutputGrad {
    order: Order,
    n: usize,
    heads: usize,
    data: Vec<f64>,
}

impl OutputGrad {
    fn cols(&self) -> usize {
        self.order.blocks() * self.n
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn value_mut(&mut self, head: usize, i: usize) -> &mut f64 {
        let c = self.cols();
        &mut self.data[head * c + i]
    }

    pub fn d1_mut(&mut self, head: usize, i: usize) -> &mut f64 {
        assert_eq!(self.order, Order::Jet, "value-only batch has no d1 block");
        let (c, n) = (self.cols(), self.n);
        &mut self.data[head * c + n + i]
    }

    pub fn d2_mut(&mut self, head: usize, i: usize) -> &mut f64 {
        assert_eq!(self.order, Order::Jet, "value-only batch has no d2 block");
        let (c, n) = (self.cols(), self.n);
        &mut self.data[head * c + 2 * n + i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// `C = alpha·A·B + beta·C` on strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access within the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl NetworkParams {
    /// Evaluate a whole batch of points, keeping what the reverse sweep needs.
    pub fn forward_batch(&self, xs: &[f64], order: Order) -> Result<Batch> {
        if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::usage(format!("batch point {i} is not finite")));
        }
        let n = xs.len();
        let blocks = order.blocks();
        let cols = blocks * n;
        let hidden = self.slots.len() - 1;
        let mut pre = Vec::with_capacity(hidden);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(hidden);

        for k in 0..hidden {
            let slot = self.slots[k];
            let w = self.weights(k);
            let b = self.bias(k);
            let mut z = vec![0.0; slot.fan_out * cols];
            if k == 0 {
                for u in 0..slot.fan_out {
                    let row = &mut z[u * cols..(u + 1) * cols];
                    for (i, &x) in xs.iter().enumerate() {
                        row[i] = w[u] * x + b[u];
                    }
                    if order == Order::Jet {
                        row[n..2 * n].iter_mut().for_each(|v| *v = w[u]);
                    }
                }
            } else {
                let h = &post[k - 1];
                gemm(slot.fan_out, slot.fan_in, cols, 1.0, w, (slot.fan_in, 1), h, (cols, 1), 0.0, &mut z, (cols, 1));
                for u in 0..slot.fan_out {
                    z[u * cols..u * cols + n].iter_mut().for_each(|v| *v += b[u]);
                }
            }
            let h = tanh_jet_rows(&z, slot.fan_out, n, order);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: k, what: "activation" });
            }
            pre.push(z);
            post.push(h);
        }

        let slot = self.slots[hidden];
        let w = self.weights(hidden);
        let b = self.bias(hidden);
        let mut out = vec![0.0; slot.fan_out * cols];
        gemm(slot.fan_out, slot.fan_in, cols, 1.0, w, (slot.fan_in, 1), &post[hidden - 1], (cols, 1), 0.0, &mut out, (cols, 1));
        for u in 0..slot.fan_out {
            out[u * cols..u * cols + n].iter_mut().for_each(|v| *v += b[u]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: hidden, what: "output" });
        }
        Ok(Batch {
            order,
            n,
            heads: slot.fan_out,
            xs: xs.to_vec(),
            pre,
            post,
            out,
        })
    }

    /// Reverse sweep: accumulate into `grad` the parameter gradient of a
    /// scalar whose gradient with respect to the batch outputs is `upstream`.
    /// Energy-network entries of `grad` are left untouched.
    pub fn backward_batch(&self, batch: &Batch, upstream: &OutputGrad, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.len(), "gradient buffer length");
        assert_eq!(upstream.n, batch.n, "upstream gradient batch size");
        assert_eq!(upstream.order, batch.order, "upstream gradient order");
        let n = batch.n;
        let order = batch.order;
        let cols = batch.cols();
        let hidden = self.slots.len() - 1;

        // Output layer (linear).
        let slot = self.slots[hidden];
        let h = &batch.post[hidden - 1];
        let g = &upstream.data;
        {
            let (gw, rest) = grad[slot.weight..].split_at_mut(slot.fan_in * slot.fan_out);
            gemm(slot.fan_out, cols, slot.fan_in, 1.0, g, (cols, 1), h, (1, cols), 1.0, gw, (slot.fan_in, 1));
            for u in 0..slot.fan_out {
                rest[u] += g[u * cols..u * cols + n].iter().sum::<f64>();
            }
        }
        let mut g_h = vec![0.0; slot.fan_in * cols];
        gemm(slot.fan_in, slot.fan_out, cols, 1.0, self.weights(hidden), (1, slot.fan_in), g, (cols, 1), 0.0, &mut g_h, (cols, 1));

        for k in (0..hidden).rev() {
            let slot = self.slots[k];
            let g_z = tanh_jet_backward(&batch.pre[k], &batch.post[k], &g_h, slot.fan_out, n, order);
            let (gw, rest) = grad[slot.weight..].split_at_mut(slot.fan_in * slot.fan_out);
            let gb = &mut rest[..slot.fan_out];
            for u in 0..slot.fan_out {
                gb[u] += g_z[u * cols..u * cols + n].iter().sum::<f64>();
            }
            if k == 0 {
                for u in 0..slot.fan_out {
                    let row = &g_z[u * cols..(u + 1) * cols];
                    let mut acc: f64 = row[..n].iter().zip(&batch.xs).map(|(g, x)| g * x).sum();
                    if order == Order::Jet {
                        acc += row[n..2 * n].iter().sum::<f64>();
                    }
                    gw[u] += acc;
                }
            } else {
                let h_prev = &batch.post[k - 1];
                gemm(slot.fan_out, cols, slot.fan_in, 1.0, &g_z, (cols, 1), h_prev, (1, cols), 1.0, gw, (slot.fan_in, 1));
                let mut next = vec![0.0; slot.fan_in * cols];
                gemm(slot.fan_in, slot.fan_out, cols, 1.0, self.weights(k), (1, slot.fan_in), &g_z, (cols, 1), 0.0, &mut next, (cols, 1));
                g_h = next;
            }
        }
    }
}

/// Apply the `tanh` jet rule to every row of a stacked pre-activation matrix.
fn tanh_jet_rows(z: &[f64], rows: usize, n: usize, order: Order) -> Vec<f64> {
    let cols = order.blocks() * n;
    let mut h = vec![0.0; z.len()];
    for u in 0..rows {
        let zr = &z[u * cols..(u + 1) * cols];
        let hr = &mut h[u * cols..(u + 1) * cols];
        match order {
            Order::Value => {
                for i in 0..n {
                    hr[i] = crate::jet::tanh(zr[i]);
                }
            }
            Order::Jet => {
                for i in 0..n {
                    let t = crate::jet::tanh(zr[i]);
                    let s = 1.0 - t * t;
                    let z1 = zr[n + i];
                    hr[i] = t;
                    hr[n + i] = s * z1;
                    hr[2 * n + i] = s * zr[2 * n + i] - 2.0 * t * s * z1 * z1;
                }
            }
        }
    }
    h
}

/// Pull a gradient with respect to `tanh` jet outputs back to the
/// pre-activation jets.
fn tanh_jet_backward(z: &[f64], h: &[f64], g_h: &[f64], rows: usize, n: usize, order: Order) -> Vec<f64> {
    let cols = order.blocks() * n;
    let mut g_z = vec![0.0; z.len()];
    for u in 0..rows {
        let r = u * cols..(u + 1) * cols;
        let (zr, hr, gr) = (&z[r.clone()], &h[r.clone()], &g_h[r.clone()]);
        let out = &mut g_z[r];
        match order {
            Order::Value => {
                for i in 0..n {
                    let t = hr[i];
                    out[i] = gr[i] * (1.0 - t * t);
                }
            }
            Order::Jet => {
                for i in 0..n {
                    let t = hr[i];
                    let s = 1.0 - t * t;
                    let ts = t * s;
                    let (z1, z2) = (zr[n + i], zr[2 * n + i]);
                    let (gv, g1, g2) = (gr[i], gr[n + i], gr[2 * n + i]);
                    out[i] = gv * s
                        - 2.0 * ts * (g1 * z1 + g2 * z2)
                        - 2.0 * s * (1.0 - 3.0 * t * t) * g2 * z1 * z1;
                    out[n + i] = g1 * s - 4.0 * ts * g2 * z1;
                    out[2 * n + i] = g2 * s;
                }
            }
        }
    }
    g_z
}
