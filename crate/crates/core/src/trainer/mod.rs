//! Adam training of one eigenstate and sequential discovery of a spectrum.
//!
//! Each state gets a fresh network. The energy-minimization reference of
//! state `k` is the energy found for state `k - 1`, every earlier state
//! enters the orthogonality loss, and for the well the parity bias
//! alternates even/odd starting from even.

mod adam;
mod objective;
mod schedule;

pub use adam::Adam;
pub use objective::{Evaluation, Objective};
pub use schedule::WeightSchedule;

use serde::{Deserialize, Serialize};

use crate::config::SolveConfig;
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossTerm, Parity, SystemDef, SystemKind};
use crate::network::{NetworkParams, Order};
use crate::sampler::{eval_grid, MeshSampler};
use crate::wavefunction::GridWavefunction;

/// One row of the loss history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: u64,
    pub losses: LossBreakdown,
    /// Weights in [`LossTerm::ALL`] order.
    pub weights: [f64; 9],
    pub total: f64,
    pub energy: f64,
    /// Fidelity reported by the optional monitor.
    pub fidelity: Option<f64>,
}

/// A trained eigenpair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateRecord {
    /// Position in the discovered sequence, from 0.
    pub index: usize,
    /// Evaluation grid the samples live on.
    pub grid: Vec<f64>,
    /// ψ on `grid`, normalized to unit discrete norm.
    pub psi: GridWavefunction,
    pub energy: f64,
    pub symmetry: Option<Parity>,
    pub e_init: f64,
    pub losses: LossBreakdown,
    pub total_loss: f64,
    pub epochs_used: u64,
    /// Epoch whose parameters were kept.
    pub best_epoch: u64,
    pub converged: bool,
    pub seed: u64,
    /// `ν(b) - ν(a)` of the kept network.
    pub nu_span: f64,
    /// Trapezoid integral of `|ψ|²` of the kept network over `grid`.
    pub density_integral: f64,
    /// Checkpoint file name, relative to the run directory.
    pub checkpoint: Option<String>,
    #[serde(skip)]
    pub params: Option<NetworkParams>,
    #[serde(skip)]
    pub history: Vec<HistoryRow>,
}

/// Fidelity (or any scalar) tracked during training from the sampled ψ.
pub type Monitor<'a> = &'a (dyn Fn(&GridWavefunction) -> f64 + Sync);

/// Sample the raw network ψ on `grid`.
pub fn sample_psi(params: &NetworkParams, grid: &[f64]) -> Result<GridWavefunction> {
    let batch = params.forward_batch(grid, Order::Value)?;
    let channels = params.spec().main_outputs;
    GridWavefunction::new(
        (0..channels)
            .map(|c| (0..grid.len()).map(|i| batch.value(c, i)).collect())
            .collect(),
    )
}

/// Trapezoid rule for samples `ys` at increasing positions `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Consecutive gradient failures tolerated before a run is abandoned.
const MAX_BAD_STEPS: u32 = 100;

/// Train one network for the state described by `system`, orthogonal to
/// `prior`. A run that exhausts `max_epochs` returns a record with
/// `converged == false`.
pub fn train_state(
    config: &SolveConfig,
    system: &SystemDef,
    prior: &[StateRecord],
    seed: u64,
    monitor: Option<Monitor<'_>>,
) -> Result<StateRecord> {
    config.validate()?;
    system.validate()?;
    let grid = eval_grid(system.domain, config.sampler.eval_points);
    for p in prior {
        if p.grid.len() != grid.len() {
            return Err(Error::usage(format!(
                "prior state {} was sampled on {} points, this run uses {}",
                p.index,
                p.grid.len(),
                grid.len()
            )));
        }
    }
    let prior_psi: Vec<GridWavefunction> = prior.iter().map(|r| r.psi.clone()).collect();
    let objective = Objective {
        system,
        metrics: &config.metrics,
        prior: &prior_psi,
        eval_grid: &grid,
    };
    let sampler = match config.sampler.sigma {
        Some(sigma) => MeshSampler::with_sigma(system.domain, config.sampler.batch_size, sigma, seed)?,
        None => MeshSampler::new(system.domain, config.sampler.batch_size, seed)?,
    };
    let criteria = &config.convergence;
    let schedule = WeightSchedule::new(config.weights.clone(), config.schedule.clone(), criteria.max_epochs);

    let mut params = NetworkParams::init(&config.network, seed)?;
    let mut adam = Adam::new(params.len(), config.optimizer.clone());
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::new();
    let mut best: Option<(f64, u64, NetworkParams, LossBreakdown)> = None;
    let mut converged = false;
    let mut epochs_used = 0;
    let mut bad_steps = 0;

    for epoch in 0..criteria.max_epochs {
        epochs_used = epoch + 1;
        let xs = sampler.sample_batch(epoch);
        let weights = schedule.weights_at(epoch);
        let weight = |t: LossTerm| weights[t.index()];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let eval = match objective.evaluate(&params, &xs, &weight, Some(&mut grad)) {
            Ok(eval) => eval,
            Err(Error::NonFinite { layer, what }) => {
                log::warn!("state {}: epoch {epoch}: non-finite {what} at layer {layer}", prior.len());
                bad_steps += 1;
                if bad_steps > MAX_BAD_STEPS {
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if eval.energy_clamped && epoch % config.log_interval == 0 {
            log::warn!("state {}: epoch {epoch}: energy-min exponent clamped (E = {})", prior.len(), eval.energy);
        }

        if best.as_ref().is_none_or(|b| eval.total < b.0) {
            best = Some((eval.total, epoch, params.clone(), eval.losses.clone()));
        }

        let pde = eval.losses.value(LossTerm::Pde);
        let done = criteria.is_met(eval.total, pde);
        if epoch % config.log_interval == 0 || done {
            let fidelity = match monitor {
                Some(m) => Some(m(&sample_psi(&params, &grid)?.normalized()?)),
                None => None,
            };
            log::debug!(
                "state {} epoch {epoch}: total {:.4e} pde {:.4e} E {:.6}{}",
                prior.len(),
                eval.total,
                pde,
                eval.energy,
                fidelity.map(|f| format!(" F {f:.6}")).unwrap_or_default()
            );
            history.push(HistoryRow {
                epoch,
                losses: eval.losses.clone(),
                weights,
                total: eval.total,
                energy: eval.energy,
                fidelity,
            });
        }
        if done {
            converged = true;
            break;
        }

        adam.set_lr(config.optimizer.lr_at(epoch, criteria.max_epochs));
        match adam.step(params.as_mut_slice(), &grad) {
            Ok(()) => bad_steps = 0,
            Err(e) => {
                log::warn!("state {}: epoch {epoch}: skipped update: {e}", prior.len());
                bad_steps += 1;
                if bad_steps > MAX_BAD_STEPS {
                    break;
                }
            }
        }
    }

    let Some((total_loss, best_epoch, params, losses)) = best else {
        return Err(Error::NonFinite {
            layer: 0,
            what: "loss at every epoch",
        });
    };
    let raw = sample_psi(&params, &grid)?;
    let density_integral = trapezoid(&grid, &raw.density());
    let ends = params.forward_batch(&[system.domain.0, system.domain.1], Order::Value)?;
    let nu_head = ends.heads() - 1;
    let nu_span = ends.value(nu_head, 1) - ends.value(nu_head, 0);
    let psi = raw.normalized()?;
    log::info!(
        "state {}: {} after {epochs_used} epochs, E = {:.6}, total loss {:.3e}",
        prior.len(),
        if converged { "converged" } else { "NOT converged" },
        params.energy(),
        total_loss
    );
    Ok(StateRecord {
        index: prior.len(),
        grid,
        psi,
        energy: params.energy(),
        symmetry: system.symmetry,
        e_init: system.e_init,
        losses,
        total_loss,
        epochs_used,
        best_epoch,
        converged,
        seed,
        nu_span,
        density_integral,
        checkpoint: None,
        params: Some(params),
        history,
    })
}

/// Outcome of [`solve_spectrum`].
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub records: Vec<StateRecord>,
    /// Every requested state converged.
    pub complete: bool,
}

/// SplitMix64 finalizer, used to derive independent per-state seeds.
fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of attempt `attempt` for state `index` of a run seeded with `base`.
pub fn state_seed(base: u64, index: usize, attempt: usize) -> u64 {
    mix_seed(base ^ mix_seed(((index as u64) << 32) | attempt as u64))
}

/// System definition for state `index` given the states found so far.
pub fn state_system(config: &SolveConfig, found: &[StateRecord]) -> SystemDef {
    let mut system = config.system_def();
    if let Some(prev) = found.last() {
        system.e_init = prev.energy;
    }
    if system.kind == SystemKind::Well {
        if let Some(p) = system.symmetry {
            system.symmetry = Some(if found.len() % 2 == 0 { p } else { p.flipped() });
        }
    }
    system
}

/// Train `n_states` networks in order of increasing energy. Stops at the
/// first state that fails to converge; the partial list is returned with
/// `complete == false`.
pub fn solve_spectrum(config: &SolveConfig, n_states: usize, seed: u64) -> Result<Spectrum> {
    solve_spectrum_with(config, n_states, seed, None, &mut |_| Ok(()))
}

/// Per-state fidelity monitor factory for [`solve_spectrum_with`].
pub type MonitorFactory<'m> = dyn Fn(usize) -> Option<Box<dyn Fn(&GridWavefunction) -> f64 + Sync + 'm>> + 'm;

/// [`solve_spectrum`] with an optional fidelity monitor per state and a hook
/// called on each chosen record before the next state starts (for example
/// to save it and fill in `checkpoint`).
pub fn solve_spectrum_with<'m>(
    config: &SolveConfig,
    n_states: usize,
    seed: u64,
    monitor_for: Option<&MonitorFactory<'m>>,
    on_state: &mut dyn FnMut(&mut StateRecord) -> Result<()>,
) -> Result<Spectrum> {
    if n_states == 0 {
        return Err(Error::config("n_states", "must be at least 1"));
    }
    config.validate()?;
    let mut records: Vec<StateRecord> = Vec::with_capacity(n_states);
    for k in 0..n_states {
        let system = state_system(config, &records);
        let monitor = monitor_for.and_then(|f| f(k));
        let attempts = config.attempts;
        let results: Vec<Result<StateRecord>> = if attempts == 1 {
            vec![train_state(config, &system, &records, state_seed(seed, k, 0), monitor.as_deref())]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..attempts)
                    .map(|a| {
                        let (system, records, monitor) = (&system, &records, monitor.as_deref());
                        scope.spawn(move || train_state(config, system, records, state_seed(seed, k, a), monitor))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
            })
        };
        let mut candidates = Vec::with_capacity(results.len());
        for r in results {
            candidates.push(r?);
        }
        // Converged attempts first, then lowest loss; ties keep attempt order.
        let chosen = candidates
            .into_iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| {
                b.converged
                    .cmp(&a.converged)
                    .then(a.total_loss.total_cmp(&b.total_loss))
                    .then(ia.cmp(ib))
            })
            .map(|(_, r)| r)
            .expect("at least one attempt");
        let mut chosen = chosen;
        on_state(&mut chosen)?;
        let converged = chosen.converged;
        records.push(chosen);
        if !converged {
            return Ok(Spectrum { records, complete: false });
        }
    }
    Ok(Spectrum { records, complete: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let xs = [0.0, 0.5, 2.0];
        let ys = [1.0, 2.0, 5.0];
        assert!((trapezoid(&xs, &ys) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for k in 0..6 {
            for a in 0..4 {
                assert!(seen.insert(state_seed(0, k, a)));
            }
        }
    }

    #[test]
    fn parity_alternates_and_energy_chains() {
        let cfg = SolveConfig::well();
        assert_eq!(state_system(&cfg, &[]).symmetry, Some(Parity::Even));
        let rec = |energy: f64| StateRecord {
            index: 0,
            grid: vec![],
            psi: GridWavefunction::real(vec![1.0]),
            energy,
            symmetry: None,
            e_init: 0.0,
            losses: LossBreakdown::default(),
            total_loss: 0.0,
            epochs_used: 0,
            best_epoch: 0,
            converged: true,
            seed: 0,
            nu_span: 1.0,
            density_integral: 1.0,
            checkpoint: None,
            params: None,
            history: vec![],
        };
        let one = vec![rec(0.55)];
        let sys = state_system(&cfg, &one);
        assert_eq!(sys.symmetry, Some(Parity::Odd));
        assert_eq!(sys.e_init, 0.55);
        let two = vec![rec(0.55), rec(2.2)];
        assert_eq!(state_system(&cfg, &two).symmetry, Some(Parity::Even));
        assert_eq!(state_system(&SolveConfig::ring(), &two).symmetry, None);
    }

    #[test]
    fn infinite_thresholds_stop_after_one_epoch() {
        let mut cfg = SolveConfig::well();
        cfg.network.hidden_layers = 1;
        cfg.network.hidden_width = 4;
        cfg.sampler.batch_size = 16;
        cfg.sampler.eval_points = 16;
        cfg.convergence.total_threshold = f64::INFINITY;
        cfg.convergence.pde_threshold = f64::INFINITY;
        let rec = train_state(&cfg, &cfg.system_def(), &[], 1, None).unwrap();
        assert!(rec.converged);
        assert_eq!(rec.epochs_used, 1);
        assert_eq!(rec.losses.get(LossTerm::Orthogonality), Some(0.0));
    }
}
