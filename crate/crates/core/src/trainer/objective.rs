//! One evaluation of the composite loss and its gradient.

use std::f64::consts::PI;

use crate::config::LossMetrics;
use crate::error::Result;
use crate::losses::{self, Grad, LossBreakdown, LossTerm, SystemDef, SystemKind};
use crate::network::{Batch, NetworkParams, Order, OutputJets};
use crate::wavefunction::GridWavefunction;

/// Everything a loss evaluation needs besides the parameters and the batch.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub system: &'a SystemDef,
    pub metrics: &'a LossMetrics,
    /// Previously found states, sampled on `eval_grid`.
    pub prior: &'a [GridWavefunction],
    pub eval_grid: &'a [f64],
}

/// Result of [`Objective::evaluate`].
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub losses: LossBreakdown,
    /// Weighted sum of the present terms.
    pub total: f64,
    pub energy: f64,
    /// The energy-minimization exponent hit its clamp.
    pub energy_clamped: bool,
}

/// Layout of the value-only companion batch.
struct ValueLayout {
    partners: usize,
    grid: usize,
}

fn to_outputs(batch: &Batch, range: std::ops::Range<usize>) -> Vec<OutputJets> {
    range.map(|i| batch.outputs(i)).collect()
}

impl Objective<'_> {
    /// Terms that this system evaluates.
    pub fn active_terms(&self) -> Vec<LossTerm> {
        let mut terms = vec![LossTerm::Integral, LossTerm::Normalization, LossTerm::Boundary];
        match self.system.kind {
            SystemKind::Well => {
                if self.system.symmetry.is_some() {
                    terms.push(LossTerm::Symmetry);
                }
            }
            SystemKind::Ring => {
                terms.push(LossTerm::Periodicity);
                terms.push(LossTerm::EqualNorm);
            }
        }
        terms.extend([LossTerm::EnergyMin, LossTerm::Orthogonality, LossTerm::Pde]);
        terms
    }

    /// Partner points for the pairwise bias: `-x` (parity) or `θ + 2π`.
    fn partners(&self, xs: &[f64]) -> Vec<f64> {
        match self.system.kind {
            SystemKind::Well if self.system.symmetry.is_some() => xs.iter().map(|x| -x).collect(),
            SystemKind::Well => Vec::new(),
            SystemKind::Ring => xs.iter().map(|x| x + 2.0 * PI).collect(),
        }
    }

    /// Evaluate all partial losses on the collocation points `xs`.
    ///
    /// When `grad` is given, `∂total/∂params` is added to it, with the
    /// total weighted by `weight`.
    pub fn evaluate(
        &self,
        params: &NetworkParams,
        xs: &[f64],
        weight: &dyn Fn(LossTerm) -> f64,
        grad: Option<&mut [f64]>,
    ) -> Result<Evaluation> {
        let n = xs.len();
        let (a, b) = self.system.domain;
        let mut jet_points = xs.to_vec();
        jet_points.extend([a, b]);
        let jet_batch = params.forward_batch(&jet_points, Order::Jet)?;

        let mut value_points = self.partners(xs);
        let layout = ValueLayout {
            partners: value_points.len(),
            grid: if self.prior.is_empty() { 0 } else { self.eval_grid.len() },
        };
        if layout.grid > 0 {
            value_points.extend_from_slice(self.eval_grid);
        }
        let value_batch = if value_points.is_empty() {
            None
        } else {
            Some(params.forward_batch(&value_points, Order::Value)?)
        };

        let jets = to_outputs(&jet_batch, 0..n);
        let ends = to_outputs(&jet_batch, n..n + 2);
        let (partners, grid_out) = match &value_batch {
            Some(vb) => (
                to_outputs(vb, 0..layout.partners),
                to_outputs(vb, layout.partners..layout.partners + layout.grid),
            ),
            None => (Vec::new(), Vec::new()),
        };

        let want_grad = grad.is_some();
        let mut g_jets = losses::zeros_like(&jets);
        let mut g_ends = losses::zeros_like(&ends);
        let mut g_partners = losses::zeros_like(&partners);
        let channels = self.system.channels();
        let mut g_grid = vec![vec![0.0; layout.grid]; channels];

        let mut lb = LossBreakdown::default();
        let energy = params.energy();
        let mut d_energy = 0.0;

        lb.set(
            LossTerm::Integral,
            losses::integral_loss(&jets, self.metrics.integral, sink(want_grad, weight, &mut g_jets, LossTerm::Integral))?,
        );
        lb.set(
            LossTerm::Normalization,
            losses::normalization_loss(&ends, self.metrics.normalization, sink(want_grad, weight, &mut g_ends, LossTerm::Normalization))?,
        );
        lb.set(
            LossTerm::Boundary,
            losses::boundary_loss(self.system, &ends, self.metrics.boundary, sink(want_grad, weight, &mut g_ends, LossTerm::Boundary))?,
        );
        match self.system.kind {
            SystemKind::Well => {
                if let Some(parity) = self.system.symmetry {
                    let v = losses::symmetry_loss(
                        &jets,
                        &partners,
                        parity,
                        sink(want_grad, weight, &mut g_jets, LossTerm::Symmetry),
                        sink(want_grad, weight, &mut g_partners, LossTerm::Symmetry),
                    )?;
                    lb.set(LossTerm::Symmetry, v);
                }
            }
            SystemKind::Ring => {
                let v = losses::periodicity_loss(
                    self.system,
                    &jets,
                    &partners,
                    sink(want_grad, weight, &mut g_jets, LossTerm::Periodicity),
                    sink(want_grad, weight, &mut g_partners, LossTerm::Periodicity),
                )?;
                lb.set(LossTerm::Periodicity, v);
                let v = losses::equal_norm_loss(&jets, sink(want_grad, weight, &mut g_jets, LossTerm::EqualNorm))?;
                lb.set(LossTerm::EqualNorm, v);
            }
        }

        let em = losses::energy_min_loss(energy, self.system);
        lb.set(LossTerm::EnergyMin, em.value);
        d_energy += weight(LossTerm::EnergyMin) * em.d_energy;

        let ortho = if layout.grid > 0 {
            let psi = GridWavefunction::new(
                (0..channels)
                    .map(|c| grid_out.iter().map(|o| o.psi[c].v).collect())
                    .collect(),
            )?;
            let w = weight(LossTerm::Orthogonality);
            losses::orthogonality_loss(&psi, self.prior, self.metrics.orthogonality, want_grad.then_some((g_grid.as_mut_slice(), w)))?
        } else {
            0.0
        };
        lb.set(LossTerm::Orthogonality, ortho);

        let pde = losses::pde_loss(&jets, energy, self.system, self.metrics.pde, sink(want_grad, weight, &mut g_jets, LossTerm::Pde))?;
        lb.set(LossTerm::Pde, pde.value);
        d_energy += weight(LossTerm::Pde) * pde.d_energy;

        if let Some(grad) = grad {
            let heads = jet_batch.heads();
            let mut up = jet_batch.grad_buffer();
            for (i, g) in g_jets.iter().chain(&g_ends).enumerate() {
                scatter(&mut up, i, g, heads, true);
            }
            params.backward_batch(&jet_batch, &up, grad);
            if let Some(vb) = &value_batch {
                let mut up = vb.grad_buffer();
                for (i, g) in g_partners.iter().enumerate() {
                    scatter(&mut up, i, g, heads, false);
                }
                for c in 0..channels {
                    for (j, &g) in g_grid[c].iter().enumerate() {
                        *up.value_mut(c, layout.partners + j) += g;
                    }
                }
                params.backward_batch(vb, &up, grad);
            }
            let slot = params.energy_slot();
            // E = w·1 + b
            grad[slot] += d_energy;
            grad[slot + 1] += d_energy;
        }

        let total = lb.weighted_total(weight);
        Ok(Evaluation {
            losses: lb,
            total,
            energy,
            energy_clamped: em.clamped,
        })
    }
}

fn sink<'b>(want: bool, weight: &dyn Fn(LossTerm) -> f64, buf: &'b mut [OutputJets], term: LossTerm) -> Option<Grad<'b>> {
    want.then(|| Grad::new(buf, weight(term)))
}

fn scatter(up: &mut crate::network::OutputGrad, i: usize, g: &OutputJets, heads: usize, jet: bool) {
    for (h, j) in g.psi.iter().chain(std::iter::once(&g.nu)).enumerate().take(heads) {
        *up.value_mut(h, i) += j.v;
        if jet {
            *up.d1_mut(h, i) += j.d1;
            *up.d2_mut(h, i) += j.d2;
        }
    }
}
