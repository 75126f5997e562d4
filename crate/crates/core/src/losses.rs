//! Partial losses of the unsupervised Schrödinger PINN.
//!
//! Every loss returns its unweighted value. When a [`Grad`] sink is passed,
//! the derivative of the loss with respect to each network output component
//! is added to the sink, multiplied by the sink's scale. The trainer passes
//! the loss weight as the scale and then runs a single reverse sweep.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::OutputJets;
use crate::wavefunction::GridWavefunction;

/// Reduction applied to a residual vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Sse,
    Mae,
    Sae,
}

impl Metric {
    pub fn reduce(self, residuals: &[f64]) -> Result<f64> {
        if residuals.is_empty() {
            return Err(Error::usage("cannot reduce an empty residual list"));
        }
        let n = residuals.len() as f64;
        Ok(match self {
            Metric::Mse => residuals.iter().map(|r| r * r).sum::<f64>() / n,
            Metric::Sse => residuals.iter().map(|r| r * r).sum(),
            Metric::Mae => residuals.iter().map(|r| r.abs()).sum::<f64>() / n,
            Metric::Sae => residuals.iter().map(|r| r.abs()).sum(),
        })
    }

    /// Partial derivative of the reduction with respect to each residual.
    /// The absolute value has derivative 0 at 0.
    pub fn derivative(self, residuals: &[f64]) -> Vec<f64> {
        let n = residuals.len() as f64;
        residuals
            .iter()
            .map(|&r| match self {
                Metric::Mse => 2.0 * r / n,
                Metric::Sse => 2.0 * r,
                Metric::Mae => sign(r) / n,
                Metric::Sae => sign(r),
            })
            .collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mse => "MSE",
            Metric::Sse => "SSE",
            Metric::Mae => "MAE",
            Metric::Sae => "SAE",
        })
    }
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Free-function form of [`Metric::reduce`].
pub fn reduce(residuals: &[f64], metric: Metric) -> Result<f64> {
    metric.reduce(residuals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// Infinite square well on `[-L/2, L/2]` with Dirichlet walls.
    Well,
    /// Particle on a ring of radius `L`, angle in `[0, 2π]`, periodic.
    Ring,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Well => "well",
            SystemKind::Ring => "ring",
        })
    }
}

/// Parity targeted by the symmetry bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// `s` in `ψ(x) - s·ψ(-x)`.
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// The physical system one network is trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDef {
    pub kind: SystemKind,
    /// Well width, or ring radius.
    pub length: f64,
    pub domain: (f64, f64),
    pub symmetry: Option<Parity>,
    /// Reference energy of the energy-minimization loss.
    pub e_init: f64,
    /// Rate `a` of the energy-minimization exponential.
    pub a_exp: f64,
}

impl SystemDef {
    pub fn well(length: f64, a_exp: f64) -> Self {
        SystemDef {
            kind: SystemKind::Well,
            length,
            domain: (-length / 2.0, length / 2.0),
            symmetry: Some(Parity::Even),
            e_init: 0.0,
            a_exp,
        }
    }

    pub fn ring(radius: f64, a_exp: f64) -> Self {
        SystemDef {
            kind: SystemKind::Ring,
            length: radius,
            domain: (0.0, 2.0 * PI),
            symmetry: None,
            e_init: 0.0,
            a_exp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.domain;
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::config("system.length", "must be positive and finite"));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::config("system.domain", format!("[{a}, {b}] is not an interval")));
        }
        if self.kind == SystemKind::Well
            && ((a + self.length / 2.0).abs() > 1e-12 || (b - self.length / 2.0).abs() > 1e-12)
        {
            return Err(Error::config("system.domain", "a well must span [-L/2, L/2]"));
        }
        if self.kind == SystemKind::Ring && self.symmetry.is_some() {
            return Err(Error::config("system.symmetry", "the ring has no parity bias"));
        }
        if !self.a_exp.is_finite() || !self.e_init.is_finite() {
            return Err(Error::config("system.a_exp", "must be finite"));
        }
        Ok(())
    }

    /// Number of real output channels needed for ψ.
    pub fn channels(&self) -> usize {
        match self.kind {
            SystemKind::Well => 1,
            SystemKind::Ring => 2,
        }
    }

    /// Coefficient `k` of `-k·ψ''` in the Hamiltonian on this coordinate.
    pub fn kinetic_prefactor(&self) -> f64 {
        match self.kind {
            SystemKind::Well => 0.5,
            SystemKind::Ring => 0.5 / (self.length * self.length),
        }
    }
}

/// Named partial losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossTerm {
    Integral,
    Normalization,
    Boundary,
    Periodicity,
    Symmetry,
    EqualNorm,
    EnergyMin,
    Orthogonality,
    Pde,
}

impl LossTerm {
    pub const ALL: [LossTerm; 9] = [
        LossTerm::Integral,
        LossTerm::Normalization,
        LossTerm::Boundary,
        LossTerm::Periodicity,
        LossTerm::Symmetry,
        LossTerm::EqualNorm,
        LossTerm::EnergyMin,
        LossTerm::Orthogonality,
        LossTerm::Pde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Integral => "integral",
            LossTerm::Normalization => "normalization",
            LossTerm::Boundary => "boundary",
            LossTerm::Periodicity => "periodicity",
            LossTerm::Symmetry => "symmetry",
            LossTerm::EqualNorm => "equal_norm",
            LossTerm::EnergyMin => "energy_min",
            LossTerm::Orthogonality => "orthogonality",
            LossTerm::Pde => "pde",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Unweighted partial losses of one evaluation. Terms that were not
/// computed read as zero and are flagged absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    values: [f64; 9],
    present: [bool; 9],
}

impl LossBreakdown {
    pub fn set(&mut self, term: LossTerm, value: f64) {
        self.values[term.index()] = value;
        self.present[term.index()] = true;
    }

    pub fn get(&self, term: LossTerm) -> Option<f64> {
        self.present[term.index()].then_some(self.values[term.index()])
    }

    /// Value, or 0 when the term is absent.
    pub fn value(&self, term: LossTerm) -> f64 {
        self.values[term.index()]
    }

    pub fn is_present(&self, term: LossTerm) -> bool {
        self.present[term.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (LossTerm, Option<f64>)> + '_ {
        LossTerm::ALL.iter().map(move |&t| (t, self.get(t)))
    }

    /// `Σ weight(term) · value(term)` over present terms.
    pub fn weighted_total(&self, weight: impl Fn(LossTerm) -> f64) -> f64 {
        LossTerm::ALL
            .iter()
            .filter(|t| self.is_present(**t))
            .map(|&t| weight(t) * self.value(t))
            .sum()
    }
}

/// Destination for output gradients.
pub struct Grad<'a> {
    pub out: &'a mut [OutputJets],
    pub scale: f64,
}

impl<'a> Grad<'a> {
    pub fn new(out: &'a mut [OutputJets], scale: f64) -> Self {
        Grad { out, scale }
    }
}

/// Zeroed gradient buffer shaped like `jets`.
pub fn zeros_like(jets: &[OutputJets]) -> Vec<OutputJets> {
    jets.iter()
        .map(|j| OutputJets {
            psi: vec![Default::default(); j.psi.len()],
            nu: Default::default(),
        })
        .collect()
}

fn check_nonempty(jets: &[OutputJets], what: &str) -> Result<()> {
    if jets.is_empty() {
        return Err(Error::usage(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `ν'(x) = |ψ(x)|²` at every collocation point.
pub fn integral_loss(jets: &[OutputJets], metric: Metric, grad: Option<Grad<'_>>) -> Result<f64> {
    check_nonempty(jets, "integral loss")?;
    let residuals: Vec<f64> = jets
        .iter()
        .map(|j| j.nu.d1 - j.psi.iter().map(|p| p.v * p.v).sum::<f64>())
        .collect();
    let value = metric.reduce(&residuals)?;
    if let Some(g) = grad {
        for ((dr, j), out) in metric.derivative(&residuals).into_iter().zip(jets).zip(g.out.iter_mut()) {
            let d = g.scale * dr;
            out.nu.d1 += d;
            for (p, op) in j.psi.iter().zip(out.psi.iter_mut()) {
                op.v -= d * 2.0 * p.v;
            }
        }
    }
    Ok(value)
}

/// Residuals `ν(a)` and `ν(b) - 1` from the outputs at the two domain
/// endpoints, reduced with `metric` (SAE in the presets).
pub fn normalization_loss(endpoints: &[OutputJets], metric: Metric, grad: Option<Grad<'_>>) -> Result<f64> {
    let [ja, jb] = endpoints else {
        return Err(Error::usage("normalization loss needs exactly the two endpoints"));
    };
    let residuals = [ja.nu.v, jb.nu.v - 1.0];
    let value = metric.reduce(&residuals)?;
    if let Some(g) = grad {
        let d = metric.derivative(&residuals);
        g.out[0].nu.v += g.scale * d[0];
        g.out[1].nu.v += g.scale * d[1];
    }
    Ok(value)
}

/// Dirichlet walls for the well (`ψ(a)`, `ψ(b)` per channel), `ψ(0) - ψ(2π)`
/// per channel for the ring; reduced with `metric` (SAE in the presets).
pub fn boundary_loss(system: &SystemDef, endpoints: &[OutputJets], metric: Metric, grad: Option<Grad<'_>>) -> Result<f64> {
    let [ja, jb] = endpoints else {
        return Err(Error::usage("boundary loss needs exactly the two endpoints"));
    };
    let channels = ja.psi.len();
    let residuals: Vec<f64> = match system.kind {
        SystemKind::Well => (0..channels).flat_map(|c| [ja.psi[c].v, jb.psi[c].v]).collect(),
        SystemKind::Ring => (0..channels).map(|c| ja.psi[c].v - jb.psi[c].v).collect(),
    };
    let value = metric.reduce(&residuals)?;
    if let Some(g) = grad {
        let d = metric.derivative(&residuals);
        for c in 0..channels {
            match system.kind {
                SystemKind::Well => {
                    g.out[0].psi[c].v += g.scale * d[2 * c];
                    g.out[1].psi[c].v += g.scale * d[2 * c + 1];
                }
                SystemKind::Ring => {
                    g.out[0].psi[c].v += g.scale * d[c];
                    g.out[1].psi[c].v -= g.scale * d[c];
                }
            }
        }
    }
    Ok(value)
}

/// Shared body of the two pairwise biases: SSE of `ψ(p) - s·ψ(q)`.
fn paired_sse(
    points: &[OutputJets],
    partners: &[OutputJets],
    s: f64,
    grad_points: Option<Grad<'_>>,
    grad_partners: Option<Grad<'_>>,
) -> Result<f64> {
    if points.len() != partners.len() {
        return Err(Error::usage("paired loss: batches differ in length"));
    }
    let mut value = 0.0;
    let (mut gp, mut gq) = (grad_points, grad_partners);
    for (i, (p, q)) in points.iter().zip(partners).enumerate() {
        for c in 0..p.psi.len() {
            let r = p.psi[c].v - s * q.psi[c].v;
            value += r * r;
            if let Some(g) = gp.as_mut() {
                g.out[i].psi[c].v += g.scale * 2.0 * r;
            }
            if let Some(g) = gq.as_mut() {
                g.out[i].psi[c].v -= g.scale * 2.0 * r * s;
            }
        }
    }
    Ok(value)
}

/// SSE of `ψ(θ) - ψ(θ + 2π)`; `shifted[i]` is evaluated at `θ_i + 2π`.
pub fn periodicity_loss(
    system: &SystemDef,
    points: &[OutputJets],
    shifted: &[OutputJets],
    grad_points: Option<Grad<'_>>,
    grad_shifted: Option<Grad<'_>>,
) -> Result<f64> {
    if system.kind != SystemKind::Ring {
        return Err(Error::usage("periodicity loss only applies to the ring"));
    }
    paired_sse(points, shifted, 1.0, grad_points, grad_shifted)
}

/// SSE of `ψ(x) - s·ψ(-x)`; `mirrored[i]` is evaluated at `-x_i`.
pub fn symmetry_loss(
    points: &[OutputJets],
    mirrored: &[OutputJets],
    parity: Parity,
    grad_points: Option<Grad<'_>>,
    grad_mirrored: Option<Grad<'_>>,
) -> Result<f64> {
    paired_sse(points, mirrored, parity.sign(), grad_points, grad_mirrored)
}

/// `|mean(Re ψ²) - mean(Im ψ²)|` over the batch.
pub fn equal_norm_loss(jets: &[OutputJets], grad: Option<Grad<'_>>) -> Result<f64> {
    check_nonempty(jets, "equal-norm loss")?;
    if jets[0].psi.len() != 2 {
        return Err(Error::usage("equal-norm loss needs real and imaginary channels"));
    }
    let n = jets.len() as f64;
    let d: f64 = jets
        .iter()
        .map(|j| j.psi[0].v * j.psi[0].v - j.psi[1].v * j.psi[1].v)
        .sum::<f64>()
        / n;
    if let Some(g) = grad {
        let k = g.scale * sign(d) * 2.0 / n;
        for (j, out) in jets.iter().zip(g.out.iter_mut()) {
            out.psi[0].v += k * j.psi[0].v;
            out.psi[1].v -= k * j.psi[1].v;
        }
    }
    Ok(d.abs())
}

/// Largest exponent evaluated by the energy-minimization loss.
pub const ENERGY_EXPONENT_CLAMP: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyMinLoss {
    pub value: f64,
    /// Derivative with respect to the predicted energy.
    pub d_energy: f64,
    /// The exponent exceeded [`ENERGY_EXPONENT_CLAMP`] and was clamped.
    pub clamped: bool,
}

/// `exp(a·(E - E_init))`.
pub fn energy_min_loss(energy: f64, system: &SystemDef) -> EnergyMinLoss {
    let exponent = system.a_exp * (energy - system.e_init);
    let clamped = exponent > ENERGY_EXPONENT_CLAMP;
    let value = exponent.min(ENERGY_EXPONENT_CLAMP).exp();
    EnergyMinLoss {
        value,
        d_energy: system.a_exp * value,
        clamped,
    }
}

/// Overlap moduli `|⟨ψ_i|ψ⟩|` with previously found states, both sides
/// normalized on the shared evaluation grid, reduced by `metric` (SAE gives
/// `Σ_i |⟨ψ_i|ψ⟩|`).
///
/// `grad`, when given, receives `scale · ∂loss/∂ψ` per channel and grid
/// point (unnormalized ψ). The modulus has a zero subgradient at 0.
pub fn orthogonality_loss(
    psi: &GridWavefunction,
    prior: &[GridWavefunction],
    metric: Metric,
    grad: Option<(&mut [Vec<f64>], f64)>,
) -> Result<f64> {
    if prior.is_empty() {
        return Ok(0.0);
    }
    let norm = psi.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::usage("orthogonality loss: ψ has zero norm on the grid"));
    }
    let m = psi.len();
    let zero = vec![0.0; m];
    let (ur, ui) = (psi.re(), psi.im().unwrap_or(&zero));
    let mut overlaps = Vec::with_capacity(prior.len());
    for state in prior {
        if state.len() != m {
            return Err(Error::usage(format!(
                "orthogonality loss: stored state has {} grid points, ψ has {m}",
                state.len()
            )));
        }
        let state = state.normalized()?;
        let (sr, si) = state.inner(psi)?;
        overlaps.push((state, sr / norm, si / norm));
    }
    let moduli: Vec<f64> = overlaps.iter().map(|(_, sr, si)| sr.hypot(*si)).collect();
    let value = metric.reduce(&moduli)?;
    if let Some((out, scale)) = grad {
        // d|S|/du for S = ⟨p|u⟩/‖u‖: (Re(S̄ p)/|S| − |S| u/‖u‖) / ‖u‖.
        let dl = metric.derivative(&moduli);
        let mut d_re = vec![0.0; m];
        let mut d_im = vec![0.0; m];
        let mut radial = 0.0;
        for (((state, sr, si), &abs), &g) in overlaps.iter().zip(&moduli).zip(&dl) {
            if abs == 0.0 || g == 0.0 {
                continue;
            }
            let (pr, pi) = (state.re(), state.im().unwrap_or(&zero));
            let c = g / abs;
            for j in 0..m {
                d_re[j] += c * (sr * pr[j] - si * pi[j]);
                d_im[j] += c * (sr * pi[j] + si * pr[j]);
            }
            radial += g * abs;
        }
        for j in 0..m {
            out[0][j] += scale * (d_re[j] - radial * ur[j] / norm) / norm;
            if out.len() > 1 {
                out[1][j] += scale * (d_im[j] - radial * ui[j] / norm) / norm;
            }
        }
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeLoss {
    pub value: f64,
    /// Derivative with respect to the predicted energy.
    pub d_energy: f64,
}

/// Stationary Schrödinger residual `-k·ψ'' - E·ψ` per point and channel.
pub fn pde_loss(
    jets: &[OutputJets],
    energy: f64,
    system: &SystemDef,
    metric: Metric,
    grad: Option<Grad<'_>>,
) -> Result<PdeLoss> {
    check_nonempty(jets, "pde loss")?;
    let k = system.kinetic_prefactor();
    let channels = jets[0].psi.len();
    let mut residuals = Vec::with_capacity(jets.len() * channels);
    for j in jets {
        for p in &j.psi {
            residuals.push(-k * p.d2 - energy * p.v);
        }
    }
    let value = metric.reduce(&residuals)?;
    let dr = metric.derivative(&residuals);
    let mut d_energy = 0.0;
    for (i, j) in jets.iter().enumerate() {
        for (c, p) in j.psi.iter().enumerate() {
            d_energy -= dr[i * channels + c] * p.v;
        }
    }
    if let Some(g) = grad {
        for (i, out) in g.out.iter_mut().enumerate() {
            for c in 0..channels {
                let d = g.scale * dr[i * channels + c];
                out.psi[c].d2 -= d * k;
                out.psi[c].v -= d * energy;
            }
        }
    }
    Ok(PdeLoss { value, d_energy })
}
