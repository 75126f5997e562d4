//! The three commands behind the `qpinn` binary: solve, evaluate and
//! export-plots, each working on a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::SolveConfig;
use crate::error::Result;
use crate::io::{self, Checkpoint, Manifest, ManifestState, MetricsRow};
use crate::losses::SystemKind;
use crate::oracles::{best_match, energy_rel_error, exact_candidates};
use crate::plot::{Plot, Series, Style};
use crate::sampler::eval_grid;
use crate::trainer::{solve_spectrum_with, StateRecord};
use crate::wavefunction::GridWavefunction;

/// Result of [`solve`].
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub records: Vec<StateRecord>,
    /// Every requested state converged.
    pub complete: bool,
    pub manifest: Manifest,
}

/// Train `config.n_states` states and write the run directory `out`.
///
/// During training each state's fidelity against the closed-form solution
/// is recorded in its loss history.
pub fn solve(config: &SolveConfig, out: &Path) -> Result<SolveOutcome> {
    config.validate()?;
    let started = Instant::now();
    let system = config.system_def();
    let grid = eval_grid(system.domain, config.sampler.eval_points);
    let monitor_for = |k: usize| -> Option<Box<dyn Fn(&GridWavefunction) -> f64 + Sync>> {
        let candidates = exact_candidates(&system, k, &grid).ok()?;
        Some(Box::new(move |psi: &GridWavefunction| {
            best_match(psi, &candidates).map(|(_, f, _)| f).unwrap_or(f64::NAN)
        }))
    };
    let mut manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        n_states: config.n_states,
        seed: config.seed,
        complete: false,
        wall_clock_seconds: 0.0,
        states: Vec::new(),
    };
    let mut last = Instant::now();
    let mut on_state = |record: &mut StateRecord| -> Result<()> {
        if let Some(params) = &record.params {
            let rel = io::checkpoint_file(record.index);
            Checkpoint::new(params, record.seed, record.best_epoch).save(&out.join(&rel))?;
            record.checkpoint = Some(rel.to_string_lossy().into_owned());
        }
        io::save_record(out, record)?;
        io::write_file(&out.join(io::history_csv(record.index)), &io::history_csv_text(&record.history))?;
        manifest.states.push(ManifestState {
            index: record.index,
            seed: record.seed,
            energy: record.energy,
            converged: record.converged,
            epochs_used: record.epochs_used,
            total_loss: record.total_loss,
            seconds: last.elapsed().as_secs_f64(),
        });
        last = Instant::now();
        manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
        manifest.save(out)
    };
    let spectrum = solve_spectrum_with(config, config.n_states, config.seed, Some(&monitor_for), &mut on_state)?;
    manifest.complete = spectrum.complete;
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.save(out)?;
    Ok(SolveOutcome {
        records: spectrum.records,
        complete: spectrum.complete,
        manifest,
    })
}

/// Compare every stored state with its closed-form counterpart and write
/// `metrics.csv`. For the ring the better-matching member of each
/// degenerate ±n pair is used.
pub fn evaluate(run_dir: &Path) -> Result<Vec<MetricsRow>> {
    let (manifest, records) = io::load_records(run_dir)?;
    let system = manifest.config.system_def();
    let mut rows = Vec::with_capacity(records.len());
    for record in &records {
        let candidates = exact_candidates(&system, record.index, &record.grid)?;
        let (exact, fidelity, _) = best_match(&record.psi, &candidates)?;
        rows.push(MetricsRow {
            system: system.kind.to_string(),
            n: exact.n,
            e_pinn: record.energy,
            e_exact: exact.energy,
            err_e: energy_rel_error(exact.energy, record.energy).value(),
            fidelity,
        });
    }
    io::write_file(&run_dir.join(io::METRICS), &io::metrics_csv(&rows))?;
    Ok(rows)
}

/// Human-readable table of [`evaluate`] output.
pub fn metrics_summary(rows: &[MetricsRow]) -> String {
    let mut out = format!("{:>6} {:>4} {:>12} {:>12} {:>12} {:>12}\n", "system", "n", "E_pinn", "E_exact", "err_E", "fidelity");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6} {:>4} {:>12.6} {:>12.6} {:>12.3e} {:>12.8}",
            r.system, r.n, r.e_pinn, r.e_exact, r.err_e, r.fidelity
        );
    }
    out
}

/// Write overlay CSV/SVG, loss SVG and fidelity SVG for every state into
/// `run_dir/plots`. Returns the files written.
pub fn export_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let (manifest, records) = io::load_records(run_dir)?;
    let system = manifest.config.system_def();
    let plots = run_dir.join("plots");
    let mut written = Vec::new();
    let x_name = match system.kind {
        SystemKind::Well => "x",
        SystemKind::Ring => "θ",
    };
    for record in &records {
        let k = record.index;
        let candidates = exact_candidates(&system, k, &record.grid)?;
        let (exact, fidelity, aligned) = best_match(&record.psi, &candidates)?;

        let path = plots.join(format!("overlay_{k}.csv"));
        io::write_file(&path, &overlay_csv(&record.grid, &aligned, &exact.psi))?;
        written.push(path);

        let title = format!("state {k} ({system} n = {}), fidelity {fidelity:.6}", exact.n, system = system.kind);
        let mut plot = Plot::new(title, x_name, "ψ");
        let parts = [("Re", "blue", "red"), ("Im", "green", "orange")];
        for (c, (part, exact_color, pinn_color)) in parts.iter().enumerate().take(aligned.num_channels()) {
            let pts = |psi: &GridWavefunction| record.grid.iter().copied().zip(psi.channels[c].iter().copied()).collect();
            plot = plot
                .with(Series::new(format!("{part} exact"), exact_color, Style::Line, pts(&exact.psi)))
                .with(Series::new(format!("{part} PINN"), pinn_color, Style::Dots, pts(&aligned)));
        }
        let path = plots.join(format!("overlay_{k}.svg"));
        io::write_file(&path, &plot.to_svg())?;
        written.push(path);

        let history = io::read_history(&run_dir.join(io::history_csv(k)))?;
        let loss = Plot::new(format!("state {k}: total loss"), "epoch", "loss")
            .log_y()
            .with(Series::new(
                "total",
                "black",
                Style::Line,
                history.iter().map(|&(e, t, _)| (e as f64, t)).collect(),
            ));
        let path = plots.join(format!("loss_{k}.svg"));
        io::write_file(&path, &loss.to_svg())?;
        written.push(path);

        let fid: Vec<(f64, f64)> = history.iter().filter_map(|&(e, _, f)| f.map(|f| (e as f64, f))).collect();
        if !fid.is_empty() {
            let plot = Plot::new(format!("state {k}: fidelity"), "epoch", "fidelity")
                .with(Series::new("fidelity", "purple", Style::Line, fid));
            let path = plots.join(format!("fidelity_{k}.svg"));
            io::write_file(&path, &plot.to_svg())?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `x, psi_pinn_re[, psi_pinn_im], psi_exact_re[, psi_exact_im]`.
pub fn overlay_csv(grid: &[f64], pinn: &GridWavefunction, exact: &GridWavefunction) -> String {
    let complex = pinn.num_channels() == 2;
    let mut out = String::from(if complex {
        "x,psi_pinn_re,psi_pinn_im,psi_exact_re,psi_exact_im\n"
    } else {
        "x,psi_pinn_re,psi_exact_re\n"
    });
    for (j, x) in grid.iter().enumerate() {
        let _ = write!(out, "{x}");
        for psi in [pinn, exact] {
            for c in &psi.channels {
                let _ = write!(out, ",{}", c[j]);
            }
        }
        out.push('\n');
    }
    out
}
