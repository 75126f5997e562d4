//! Ground truth: closed-form eigenpairs, a finite-difference baseline, and
//! the fidelity / energy-error metrics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet3;
use crate::losses::{SystemDef, SystemKind};
use crate::wavefunction::GridWavefunction;

/// An eigenpair sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    /// Quantum number: `n ≥ 1` for the well, signed `n` for the ring. Zero
    /// for finite-difference states, whose degenerate partners have no sign.
    pub n: i64,
    pub energy: f64,
    /// Grid-normalized samples.
    pub psi: GridWavefunction,
}

/// `E_n = n²π²/(2L²)` of the infinite well.
pub fn well_energy(n: u32, length: f64) -> f64 {
    let n = f64::from(n);
    n * n * PI * PI / (2.0 * length * length)
}

/// `E_n = n²/(2L²)` of the ring of radius `L`.
pub fn ring_energy(n: i64, radius: f64) -> f64 {
    let n = n as f64;
    n * n / (2.0 * radius * radius)
}

/// `√(2/L)·sin(nπ/L·(x + L/2))` with its first two x-derivatives.
pub fn well_jet(n: u32, length: f64, x: f64) -> Jet3 {
    let k = f64::from(n) * PI / length;
    let amp = (2.0 / length).sqrt();
    let (s, c) = (k * (x + length / 2.0)).sin_cos();
    Jet3::new(amp * s, amp * k * c, -amp * k * k * s)
}

/// `e^{inθ}/√(2π)` as (real, imaginary) jets in θ.
pub fn ring_jets(n: i64, theta: f64) -> [Jet3; 2] {
    let k = n as f64;
    let amp = 1.0 / (2.0 * PI).sqrt();
    let (s, c) = (k * theta).sin_cos();
    [
        Jet3::new(amp * c, -amp * k * s, -amp * k * k * c),
        Jet3::new(amp * s, amp * k * c, -amp * k * k * s),
    ]
}

/// Closed-form well eigenpair on `grid`.
pub fn well_exact(n: u32, length: f64, grid: &[f64]) -> Result<EigenPair> {
    if n < 1 {
        return Err(Error::usage("well quantum numbers start at 1"));
    }
    let half = length / 2.0;
    if let Some(x) = grid.iter().find(|x| x.abs() > half * (1.0 + 1e-12)) {
        return Err(Error::usage(format!("grid point {x} lies outside the well [-{half}, {half}]")));
    }
    let samples = grid.iter().map(|&x| well_jet(n, length, x).v).collect();
    Ok(EigenPair {
        n: i64::from(n),
        energy: well_energy(n, length),
        psi: GridWavefunction::real(samples).normalized()?,
    })
}

/// Closed-form ring eigenpair on `grid`, with channels (cos nθ, sin nθ).
pub fn ring_exact(n: i64, radius: f64, grid: &[f64]) -> Result<EigenPair> {
    let (re, im) = grid
        .iter()
        .map(|&t| {
            let [r, i] = ring_jets(n, t);
            (r.v, i.v)
        })
        .unzip();
    Ok(EigenPair {
        n,
        energy: ring_energy(n, radius),
        psi: GridWavefunction::complex(re, im)?.normalized()?,
    })
}

/// Exact candidates for the `index`-th state (from 0) of `system`. The ring
/// returns both members of a degenerate pair, since either is correct.
pub fn exact_candidates(system: &SystemDef, index: usize, grid: &[f64]) -> Result<Vec<EigenPair>> {
    match system.kind {
        SystemKind::Well => Ok(vec![well_exact(index as u32 + 1, system.length, grid)?]),
        SystemKind::Ring => {
            let n = index.div_ceil(2) as i64;
            if n == 0 {
                Ok(vec![ring_exact(0, system.length, grid)?])
            } else {
                Ok(vec![ring_exact(n, system.length, grid)?, ring_exact(-n, system.length, grid)?])
            }
        }
    }
}

/// `|⟨a|b⟩|²` after normalizing both.
pub fn fidelity(a: &GridWavefunction, b: &GridWavefunction) -> Result<f64> {
    if a.num_channels() != b.num_channels() {
        return Err(Error::usage(format!(
            "channel mismatch: {} vs {}",
            a.num_channels(),
            b.num_channels()
        )));
    }
    let (re, im) = a.normalized()?.inner(&b.normalized()?)?;
    Ok(re * re + im * im)
}

/// Result of [`phase_align`].
#[derive(Clone, Debug, PartialEq)]
pub struct Aligned {
    pub psi: GridWavefunction,
    /// Channels whose overlap with the reference was exactly zero and were
    /// left unchanged.
    pub zero_overlap: Vec<usize>,
    /// The per-channel flips would have lowered the fidelity, so the input
    /// was returned unchanged.
    pub rejected: bool,
}

/// Flip the sign of each channel of `pred` whose overlap with the matching
/// channel of `exact` is negative.
///
/// For a complex state the per-channel flips are not a global phase, so they
/// can lower the fidelity (take `pred = i·exact`). In that case the input is
/// kept and `rejected` is set.
pub fn phase_align(pred: &GridWavefunction, exact: &GridWavefunction) -> Result<Aligned> {
    if pred.len() != exact.len() || pred.num_channels() != exact.num_channels() {
        return Err(Error::usage("phase_align needs matching grids and channel counts"));
    }
    let mut zero_overlap = Vec::new();
    let mut channels = pred.channels.clone();
    for (c, (p, e)) in channels.iter_mut().zip(&exact.channels).enumerate() {
        let overlap: f64 = p.iter().zip(e).map(|(a, b)| a * b).sum();
        if overlap == 0.0 {
            zero_overlap.push(c);
        } else if overlap < 0.0 {
            p.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let flipped = GridWavefunction::new(channels)?;
    let rejected = match (fidelity(&flipped, exact), fidelity(pred, exact)) {
        (Ok(after), Ok(before)) => after < before,
        _ => false,
    };
    Ok(Aligned {
        psi: if rejected { pred.clone() } else { flipped },
        zero_overlap,
        rejected,
    })
}

/// The candidate with the highest fidelity to `pred` after alignment, with
/// that fidelity and the aligned prediction.
pub fn best_match<'a>(
    pred: &GridWavefunction,
    candidates: &'a [EigenPair],
) -> Result<(&'a EigenPair, f64, GridWavefunction)> {
    let mut best: Option<(&EigenPair, f64, GridWavefunction)> = None;
    for cand in candidates {
        let aligned = phase_align(pred, &cand.psi)?.psi;
        let f = fidelity(&aligned, &cand.psi)?;
        if best.as_ref().is_none_or(|b| f > b.1) {
            best = Some((cand, f, aligned));
        }
    }
    best.ok_or_else(|| Error::usage("no exact candidates"))
}

/// Energy error of a prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnergyError {
    /// `(E_ex - E_pinn) / E_ex`.
    Relative(f64),
    /// `E_ex = 0`: the raw predicted energy.
    Raw(f64),
}

impl EnergyError {
    pub fn value(self) -> f64 {
        match self {
            EnergyError::Relative(v) | EnergyError::Raw(v) => v,
        }
    }
}

pub fn energy_rel_error(e_exact: f64, e_pinn: f64) -> EnergyError {
    if e_exact == 0.0 {
        EnergyError::Raw(e_pinn)
    } else {
        EnergyError::Relative((e_exact - e_pinn) / e_exact)
    }
}

/// Lowest eigenpairs of a finite-difference Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct FdSpectrum {
    /// Grid points: the interior nodes for the well, all nodes for the ring.
    pub grid: Vec<f64>,
    /// Eigenpairs by increasing energy.
    pub pairs: Vec<EigenPair>,
}

/// Diagonalize the three-point central-difference Hamiltonian of `system`
/// on `grid_n` nodes and return the lowest `count` eigenpairs.
///
/// The well uses Dirichlet walls with `grid_n` interior nodes. The ring uses
/// `grid_n` nodes with cyclic wrap; the reflection θ → -θ splits it into two
/// tridiagonal blocks, so both systems reduce to Sturm bisection plus
/// inverse iteration.
pub fn fd_diagonalize(system: &SystemDef, grid_n: usize, count: usize) -> Result<FdSpectrum> {
    if grid_n < 16 {
        return Err(Error::usage("fd_diagonalize needs at least 16 grid points"));
    }
    if count == 0 || count > grid_n {
        return Err(Error::usage(format!("cannot take {count} eigenpairs of a {grid_n}-point grid")));
    }
    let k = system.kinetic_prefactor();
    match system.kind {
        SystemKind::Well => {
            let (a, b) = system.domain;
            let h = (b - a) / (grid_n + 1) as f64;
            let grid: Vec<f64> = (1..=grid_n).map(|j| a + j as f64 * h).collect();
            let t = Tridiagonal::laplacian(grid_n, k / (h * h));
            let pairs = (0..count)
                .map(|i| {
                    let (energy, v) = t.eigenpair(i);
                    Ok(EigenPair {
                        n: 0,
                        energy,
                        psi: GridWavefunction::real(v).normalized()?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(FdSpectrum { grid, pairs })
        }
        SystemKind::Ring => {
            let h = 2.0 * PI / grid_n as f64;
            let grid: Vec<f64> = (0..grid_n).map(|j| j as f64 * h).collect();
            let c = k / (h * h);
            let (even, odd) = Tridiagonal::cyclic_sectors(grid_n, c);
            let mut pairs = Vec::with_capacity(2 * count);
            for i in 0..count.min(even.len()) {
                let (energy, w) = even.eigenpair(i);
                pairs.push((energy, unfold_even(grid_n, &w)));
            }
            for i in 0..count.min(odd.len()) {
                let (energy, w) = odd.eigenpair(i);
                pairs.push((energy, unfold_odd(grid_n, &w)));
            }
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            let pairs = pairs
                .into_iter()
                .take(count)
                .map(|(energy, v)| {
                    Ok(EigenPair {
                        n: 0,
                        energy,
                        psi: GridWavefunction::complex(v, vec![0.0; grid_n])?.normalized()?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(FdSpectrum { grid, pairs })
        }
    }
}

/// Even cyclic vector from its values at nodes `0..=⌊N/2⌋`, where the first
/// (and for even N the last) entry carries the √2 symmetrizing scale.
fn unfold_even(n: usize, w: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    let m = w.len();
    for (j, &wj) in w.iter().enumerate() {
        let edge = j == 0 || (n % 2 == 0 && j == m - 1);
        let val = if edge { wj * std::f64::consts::SQRT_2 } else { wj };
        v[j] = val;
        v[(n - j) % n] = val;
    }
    v
}

/// Odd cyclic vector from its values at nodes `1..` up to the mirror point.
fn unfold_odd(n: usize, w: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for (i, &wj) in w.iter().enumerate() {
        let j = i + 1;
        v[j] = wj;
        v[n - j] = -wj;
    }
    v
}

/// Symmetric tridiagonal matrix.
struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    off: Vec<f64>,
}

impl Tridiagonal {
    /// `c·tridiag(-1, 2, -1)` of size `n`.
    fn laplacian(n: usize, c: f64) -> Self {
        Tridiagonal {
            diag: vec![2.0 * c; n],
            off: vec![-c; n - 1],
        }
    }

    /// Even and odd blocks of `c·(2I - S - Sᵀ)` for the cyclic shift `S` on
    /// `n` nodes. The even block is symmetrized by scaling its end rows.
    fn cyclic_sectors(n: usize, c: f64) -> (Self, Self) {
        let r2 = std::f64::consts::SQRT_2;
        let half = n / 2;
        let (even, odd);
        if n % 2 == 0 {
            // Even: nodes 0..=half, both ends reflect onto themselves.
            let mut off = vec![-c; half];
            off[0] = -r2 * c;
            off[half - 1] = -r2 * c;
            even = Tridiagonal { diag: vec![2.0 * c; half + 1], off };
            // Odd: nodes 1..half, zero at 0 and at half.
            odd = Tridiagonal::laplacian(half - 1, c);
        } else {
            // Even: nodes 0..=half; node half couples to its mirror half + 1.
            let mut diag = vec![2.0 * c; half + 1];
            diag[half] = c;
            let mut off = vec![-c; half];
            off[0] = -r2 * c;
            even = Tridiagonal { diag, off };
            // Odd: nodes 1..=half; the mirror of node half carries -v.
            let mut odd_t = Tridiagonal::laplacian(half, c);
            odd_t.diag[half - 1] = 3.0 * c;
            odd = odd_t;
        }
        (even, odd)
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly below `lambda` (Sturm sequence).
    fn count_below(&self, lambda: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.len() {
            let coupling = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] / q };
            q = self.diag[i] - lambda - coupling;
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + lambda.abs()).max(f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `i`-th smallest eigenvalue by bisection.
    fn eigenvalue(&self, i: usize) -> f64 {
        let n = self.len();
        let radius = |j: usize| {
            let left = if j > 0 { self.off[j - 1].abs() } else { 0.0 };
            let right = if j + 1 < n { self.off[j].abs() } else { 0.0 };
            left + right
        };
        let mut lo = (0..n).map(|j| self.diag[j] - radius(j)).fold(f64::INFINITY, f64::min);
        let mut hi = (0..n).map(|j| self.diag[j] + radius(j)).fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > i {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `i`-th eigenpair; the vector comes from inverse iteration.
    fn eigenpair(&self, i: usize) -> (f64, Vec<f64>) {
        let lambda = self.eigenvalue(i);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + i as u64);
        let mut v: Vec<f64> = (0..self.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..4 {
            v = self.shifted_solve(lambda, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
        (lambda, v)
    }

    /// Solve `(T - λI)x = rhs` by Gaussian elimination with partial pivoting.
    fn shifted_solve(&self, lambda: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let tiny = f64::EPSILON * self.diag.iter().map(|d| d.abs()).fold(1.0, f64::max);
        let guard = |p: f64| if p.abs() < tiny { tiny.copysign(p) } else { p };
        if n == 1 {
            return vec![rhs[0] / guard(self.diag[0] - lambda)];
        }
        // Upper factor rows: entries at columns i, i + 1, i + 2.
        let mut u = vec![[0.0; 3]; n];
        let mut y = vec![0.0; n];
        let mut cur = [self.diag[0] - lambda, self.off[0]];
        let mut cur_rhs = rhs[0];
        for i in 0..n - 1 {
            let next = [
                self.off[i],
                self.diag[i + 1] - lambda,
                if i + 2 < n { self.off[i + 1] } else { 0.0 },
            ];
            let (pivot, other, p_rhs, o_rhs) = if next[0].abs() > cur[0].abs() {
                (next, [cur[0], cur[1], 0.0], rhs[i + 1], cur_rhs)
            } else {
                ([cur[0], cur[1], 0.0], next, cur_rhs, rhs[i + 1])
            };
            let p0 = guard(pivot[0]);
            let m = other[0] / p0;
            u[i] = [p0, pivot[1], pivot[2]];
            y[i] = p_rhs;
            cur = [other[1] - m * pivot[1], other[2] - m * pivot[2]];
            cur_rhs = o_rhs - m * p_rhs;
        }
        u[n - 1] = [guard(cur[0]), 0.0, 0.0];
        y[n - 1] = cur_rhs;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= u[i][1] * x[i + 1];
            }
            if i + 2 < n {
                s -= u[i][2] * x[i + 2];
            }
            x[i] = s / u[i][0];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::eval_grid;

    #[test]
    fn well_ground_energy() {
        assert!((well_energy(1, 3.0) - 0.548_311_355_616_075_5).abs() < 1e-15);
    }

    #[test]
    fn well_states_vanish_at_walls_and_have_parity() {
        let grid = eval_grid((-1.5, 1.5), 101);
        for n in 1..=4 {
            let e = well_exact(n, 3.0, &grid).unwrap();
            let psi = e.psi.re();
            assert!(psi[0].abs() < 1e-12 && psi[100].abs() < 1e-12);
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            for j in 0..101 {
                assert!((psi[j] - sign * psi[100 - j]).abs() < 1e-12);
            }
        }
        assert!(well_exact(0, 3.0, &grid).is_err());
        assert!(well_exact(1, 2.0, &grid).is_err());
    }

    #[test]
    fn ring_energies_and_orthogonality() {
        assert!((ring_energy(1, 0.95) - 0.554_016_620_498_614_9).abs() < 1e-15);
        assert_eq!(ring_energy(0, 0.95), 0.0);
        let grid: Vec<f64> = (0..256).map(|j| 2.0 * PI * j as f64 / 256.0).collect();
        let p = ring_exact(1, 0.95, &grid).unwrap();
        let m = ring_exact(-1, 0.95, &grid).unwrap();
        let (re, im) = p.psi.inner(&m.psi).unwrap();
        assert!(re.hypot(im) < 1e-10);
        let z = ring_exact(0, 0.95, &grid).unwrap();
        assert!(z.psi.im().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn analytic_jets_match_finite_differences() {
        let h = 1e-4;
        for &x in &[-1.2, 0.1, 0.9] {
            let j = well_jet(3, 3.0, x);
            let f = |x| well_jet(3, 3.0, x).v;
            assert!((j.d1 - (f(x + h) - f(x - h)) / (2.0 * h)).abs() < 1e-6);
            assert!((j.d2 - (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)).abs() < 1e-5);
        }
    }

    #[test]
    fn fidelity_basics() {
        let grid = eval_grid((-1.5, 1.5), 200);
        let a = well_exact(1, 3.0, &grid).unwrap().psi;
        let b = well_exact(2, 3.0, &grid).unwrap().psi;
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-14);
        assert!(fidelity(&a, &b).unwrap() <= 1e-6);
        let neg = GridWavefunction::real(a.re().iter().map(|v| -v).collect());
        assert!((fidelity(&neg, &a).unwrap() - 1.0).abs() < 1e-14);
        assert!(fidelity(&GridWavefunction::real(vec![0.0; 200]), &a).is_err());
    }

    #[test]
    fn energy_error() {
        assert_eq!(energy_rel_error(0.5, 0.5), EnergyError::Relative(0.0));
        let e = energy_rel_error(0.54831, 0.54831 * (1.0 - 2.68e-4)).value();
        assert!((e - 2.68e-4).abs() < 1e-12);
        assert_eq!(energy_rel_error(0.0, 2.54e-3), EnergyError::Raw(2.54e-3));
    }

    #[test]
    fn phase_align_flips_sign() {
        let grid = eval_grid((-1.5, 1.5), 50);
        let e = well_exact(2, 3.0, &grid).unwrap().psi;
        let neg = GridWavefunction::real(e.re().iter().map(|v| -v).collect());
        let out = phase_align(&neg, &e).unwrap();
        assert_eq!(out.psi, e);
        assert_eq!(phase_align(&e, &e).unwrap().psi, e);
    }

    #[test]
    fn phase_align_maps_conjugate_ring_state() {
        let grid: Vec<f64> = (0..64).map(|j| 2.0 * PI * j as f64 / 64.0).collect();
        let p = ring_exact(1, 0.95, &grid).unwrap().psi;
        let m = ring_exact(-1, 0.95, &grid).unwrap().psi;
        let aligned = phase_align(&m, &p).unwrap();
        assert!((fidelity(&aligned.psi, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_well_matches_closed_form() {
        let sys = SystemDef::well(3.0, 0.8);
        let spec = fd_diagonalize(&sys, 2000, 6).unwrap();
        let e1 = spec.pairs[0].energy;
        assert!(((e1 - well_energy(1, 3.0)) / well_energy(1, 3.0)).abs() < 1e-6);
        for (i, p) in spec.pairs.iter().enumerate() {
            let exact = well_exact(i as u32 + 1, 3.0, &spec.grid).unwrap();
            assert!(fidelity(&p.psi, &exact.psi).unwrap() > 1.0 - 1e-8);
        }
    }

    #[test]
    fn fd_ring_pairs_are_degenerate() {
        for n in [2048, 255] {
            let sys = SystemDef::ring(0.95, 0.4);
            let spec = fd_diagonalize(&sys, n, 5).unwrap();
            let e: Vec<f64> = spec.pairs.iter().map(|p| p.energy).collect();
            assert!(e[0].abs() < 1e-9);
            for pair in [(1, 2), (3, 4)] {
                assert!(((e[pair.0] - e[pair.1]) / e[pair.0]).abs() < 1e-8);
            }
            assert!(((e[1] - ring_energy(1, 0.95)) / ring_energy(1, 0.95)).abs() < 1e-3);
            // Eigenvectors are orthonormal.
            for a in 0..5 {
                for b in 0..5 {
                    let (re, im) = spec.pairs[a].psi.inner(&spec.pairs[b].psi).unwrap();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((re - want).abs() < 1e-8 && im.abs() < 1e-12, "{n} {a} {b} {re}");
                }
            }
        }
    }
}
