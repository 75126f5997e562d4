//! Finite-difference checks shared by the gradient suite and the
//! acceptance run.

#![allow(dead_code)]

use qpinn::config::LossMetrics;
use qpinn::losses::{LossTerm, Metric, Parity, SystemDef};
use qpinn::network::{InitScheme, NetworkParams, NetworkSpec};
use qpinn::trainer::Objective;
use qpinn::wavefunction::GridWavefunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DRAWS: u64 = 100;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_TOL: f64 = 1e-8;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_TOL || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Richardson-extrapolated central difference, fourth order in `h`.
pub fn derivative(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    let coarse = d(f, h);
    let fine = d(f, h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

struct Case {
    system: SystemDef,
    metrics: LossMetrics,
    outputs: usize,
}

fn case_for(term: LossTerm, rng: &mut ChaCha8Rng) -> Case {
    let endpoint = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { Metric::Sae } else { Metric::Sse };
    let mut metrics = LossMetrics {
        integral: Metric::Mse,
        pde: Metric::Mse,
        normalization: endpoint(rng),
        boundary: endpoint(rng),
        orthogonality: endpoint(rng),
    };
    let ring = match term {
        LossTerm::Periodicity | LossTerm::EqualNorm => true,
        LossTerm::Symmetry => false,
        _ => rng.random_bool(0.3),
    };
    let mut system = if ring {
        metrics = LossMetrics {
            integral: Metric::Sse,
            pde: Metric::Sse,
            ..metrics
        };
        SystemDef::ring(0.95, 0.4)
    } else {
        let mut s = SystemDef::well(3.0, 0.8);
        s.symmetry = Some(if rng.random_bool(0.5) { Parity::Even } else { Parity::Odd });
        s
    };
    system.e_init = rng.random_range(-1.0..1.0);
    Case {
        outputs: system.channels(),
        system,
        metrics,
    }
}

fn random_params(outputs: usize, rng: &mut ChaCha8Rng) -> NetworkParams {
    let spec = NetworkSpec {
        hidden_layers: 2,
        hidden_width: 6,
        main_outputs: outputs,
        init: InitScheme::XavierUniform,
    };
    let mut params = NetworkParams::init(&spec, rng.random()).unwrap();
    // Move off the initializer's distribution so heads are not near zero.
    for v in params.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    params
}

/// Compare every parameter gradient of `term` with finite differences over
/// [`DRAWS`] random draws. Returns the number of components checked, or
/// the first mismatch.
pub fn check_term(term: LossTerm) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + term.index() as u64);
    let mut checked = 0;
    for draw in 0..DRAWS {
        let case = case_for(term, &mut rng);
        let (a, b) = case.system.domain;
        let xs: Vec<f64> = (0..7).map(|_| rng.random_range(a..b)).collect();
        let grid: Vec<f64> = (0..12).map(|j| a + (b - a) * j as f64 / 11.0).collect();
        let prior: Vec<GridWavefunction> = (0..2)
            .map(|_| {
                GridWavefunction::new(
                    (0..case.outputs)
                        .map(|_| (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                )
                .unwrap()
                .normalized()
                .unwrap()
            })
            .collect();
        let objective = Objective {
            system: &case.system,
            metrics: &case.metrics,
            prior: &prior,
            eval_grid: &grid,
        };
        let mut params = random_params(case.outputs, &mut rng);
        let weight = move |t: LossTerm| if t == term { 1.0 } else { 0.0 };
        let mut grad = vec![0.0; params.len()];
        let eval = objective.evaluate(&params, &xs, &weight, Some(&mut grad)).unwrap();
        assert!(eval.losses.is_present(term), "{term:?} not evaluated");

        for i in 0..params.len() {
            let base = params.as_slice()[i];
            let mut f = |dx: f64| {
                params.as_mut_slice()[i] = base + dx;
                let v = objective.evaluate(&params, &xs, &weight, None).unwrap().total;
                params.as_mut_slice()[i] = base;
                v
            };
            let numeric = derivative(&mut f, 1e-4);
            if !close(grad[i], numeric) {
                return Err(format!(
                    "{term:?} draw {draw} param {i}: autodiff {} vs finite difference {numeric}",
                    grad[i]
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Jet d1/d2 of every head against finite differences of the value and d1.
pub fn check_jets() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for draw in 0..DRAWS {
        let outputs = 1 + (draw % 2) as usize;
        let params = random_params(outputs, &mut rng);
        let x: f64 = rng.random_range(-2.0..2.0);
        let jets = params.forward_jet(x).unwrap();
        for c in 0..=outputs {
            let pick = |x: f64| {
                let out = params.forward_jet(x).unwrap();
                if c < outputs {
                    out.psi[c]
                } else {
                    out.nu
                }
            };
            let jet = pick(x);
            assert_eq!(jet, if c < outputs { jets.psi[c] } else { jets.nu });
            let d1 = derivative(&mut |h| pick(x + h).v, 1e-3);
            let d2 = derivative(&mut |h| pick(x + h).d1, 1e-3);
            if !close(jet.d1, d1) || !close(jet.d2, d2) {
                return Err(format!("draw {draw} head {c}: d1 {} vs {d1}, d2 {} vs {d2}", jet.d1, jet.d2));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
