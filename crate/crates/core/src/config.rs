//! Run configuration and the two built-in presets.
//!
//! A [`SolveConfig`] is read from TOML. Every field has a default, so a
//! config file only needs the keys it changes; `system.kind` selects which
//! preset the defaults come from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossTerm, Metric, Parity, SystemDef, SystemKind};
use crate::network::{InitScheme, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Well width or ring radius.
    pub length: f64,
    /// Rate of the energy-minimization exponential.
    pub a_exp: f64,
    /// Reference energy for the first state.
    pub e_init: f64,
    /// Apply the parity bias (well only).
    pub symmetry_bias: bool,
}

/// Base weight of every partial loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub integral: f64,
    pub normalization: f64,
    pub boundary: f64,
    pub periodicity: f64,
    pub symmetry: f64,
    pub equal_norm: f64,
    /// Starting value; decays to zero.
    pub energy_min: f64,
    pub orthogonality: f64,
    /// Starting value; ramps up.
    pub pde: f64,
}

impl LossWeights {
    pub fn base(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Integral => self.integral,
            LossTerm::Normalization => self.normalization,
            LossTerm::Boundary => self.boundary,
            LossTerm::Periodicity => self.periodicity,
            LossTerm::Symmetry => self.symmetry,
            LossTerm::EqualNorm => self.equal_norm,
            LossTerm::EnergyMin => self.energy_min,
            LossTerm::Orthogonality => self.orthogonality,
            LossTerm::Pde => self.pde,
        }
    }
}

/// Shape of the two time-dependent weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Fraction of `max_epochs` over which the energy-min weight falls
    /// linearly to zero.
    pub energy_decay_fraction: f64,
    /// Fraction of `max_epochs` over which the PDE weight rises linearly.
    pub pde_ramp_fraction: f64,
    /// Final PDE weight as a multiple of its base weight.
    pub pde_ramp_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossMetrics {
    pub integral: Metric,
    pub pde: Metric,
    #[serde(default = "sae")]
    pub normalization: Metric,
    #[serde(default = "sae")]
    pub boundary: Metric,
    #[serde(default = "sae")]
    pub orthogonality: Metric,
}

fn sae() -> Metric {
    Metric::Sae
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate at `max_epochs` as a fraction of `lr`, reached by
    /// exponential decay. 1 keeps the rate constant.
    #[serde(default = "one")]
    pub final_lr_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl AdamConfig {
    /// Learning rate at `epoch` of a run of `max_epochs`.
    pub fn lr_at(&self, epoch: u64, max_epochs: u64) -> f64 {
        if self.final_lr_factor == 1.0 || max_epochs == 0 {
            return self.lr;
        }
        self.lr * self.final_lr_factor.powf(epoch as f64 / max_epochs as f64)
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_lr_factor: 1.0,
        }
    }
}

/// When a state counts as found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceCriteria {
    /// Weighted total loss must fall below this.
    pub total_threshold: f64,
    /// Unweighted PDE loss must fall below this.
    pub pde_threshold: f64,
    pub max_epochs: u64,
}

impl ConvergenceCriteria {
    pub fn is_met(&self, total: f64, pde: f64) -> bool {
        total < self.total_threshold && pde < self.pde_threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub batch_size: usize,
    /// Jitter standard deviation; `None` means half the mesh spacing.
    pub sigma: Option<f64>,
    /// Points of the fixed grid used for stored states and overlaps.
    pub eval_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub system: SystemConfig,
    pub network: NetworkSpec,
    pub weights: LossWeights,
    pub schedule: ScheduleConfig,
    pub metrics: LossMetrics,
    pub optimizer: AdamConfig,
    pub convergence: ConvergenceCriteria,
    pub sampler: SamplerConfig,
    pub n_states: usize,
    pub seed: u64,
    /// Epochs between loss-history rows.
    pub log_interval: u64,
    /// Independent seeds tried per state; the converged attempt with the
    /// lowest loss is kept.
    pub attempts: usize,
    /// Run directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Well,
    Ring,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "well" => Ok(Preset::Well),
            "ring" => Ok(Preset::Ring),
            other => Err(Error::config("preset", format!("unknown preset {other:?} (expected well or ring)"))),
        }
    }
}

impl SolveConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Well => Self::well(),
            Preset::Ring => Self::ring(),
        }
    }

    /// Infinite well of width 3 with a 6×64 network and 512 points.
    pub fn well() -> Self {
        SolveConfig {
            system: SystemConfig {
                kind: SystemKind::Well,
                length: 3.0,
                a_exp: 0.8,
                e_init: 0.0,
                symmetry_bias: true,
            },
            network: NetworkSpec {
                hidden_layers: 6,
                hidden_width: 64,
                main_outputs: 1,
                init: InitScheme::XavierUniform,
            },
            weights: LossWeights {
                integral: 5000.0,
                normalization: 1000.0,
                boundary: 1000.0,
                periodicity: 0.0,
                symmetry: 1000.0,
                equal_norm: 0.0,
                energy_min: 10.0,
                orthogonality: 1000.0,
                pde: 1.0,
            },
            schedule: ScheduleConfig {
                energy_decay_fraction: 0.2,
                pde_ramp_fraction: 0.5,
                pde_ramp_factor: 10.0,
            },
            metrics: LossMetrics {
                integral: Metric::Mse,
                pde: Metric::Mse,
                normalization: Metric::Sse,
                boundary: Metric::Sse,
                orthogonality: Metric::Sae,
            },
            optimizer: AdamConfig {
                lr: 3e-3,
                final_lr_factor: 0.01,
                ..AdamConfig::default()
            },
            convergence: ConvergenceCriteria {
                total_threshold: 1e-1,
                pde_threshold: 5e-3,
                max_epochs: 30_000,
            },
            sampler: SamplerConfig {
                batch_size: 512,
                sigma: None,
                eval_points: 512,
            },
            n_states: 6,
            seed: 0,
            log_interval: 100,
            attempts: 1,
            output_dir: None,
        }
    }

    /// Particle on a ring of radius 0.95 with a 10×256 network and 1024 points.
    pub fn ring() -> Self {
        SolveConfig {
            system: SystemConfig {
                kind: SystemKind::Ring,
                length: 0.95,
                a_exp: 0.4,
                e_init: 0.0,
                symmetry_bias: false,
            },
            network: NetworkSpec {
                hidden_layers: 10,
                hidden_width: 256,
                main_outputs: 2,
                init: InitScheme::XavierUniform,
            },
            weights: LossWeights {
                integral: 5000.0,
                normalization: 1000.0,
                boundary: 1000.0,
                periodicity: 1000.0,
                symmetry: 0.0,
                equal_norm: 1000.0,
                energy_min: 10.0,
                orthogonality: 1000.0,
                pde: 1.0,
            },
            schedule: ScheduleConfig {
                energy_decay_fraction: 0.2,
                pde_ramp_fraction: 0.5,
                pde_ramp_factor: 10.0,
            },
            metrics: LossMetrics {
                integral: Metric::Sse,
                pde: Metric::Sse,
                normalization: Metric::Sse,
                boundary: Metric::Sse,
                orthogonality: Metric::Sae,
            },
            optimizer: AdamConfig {
                lr: 3e-3,
                final_lr_factor: 0.01,
                ..AdamConfig::default()
            },
            convergence: ConvergenceCriteria {
                total_threshold: 1e-1,
                pde_threshold: 5e-3,
                max_epochs: 60_000,
            },
            sampler: SamplerConfig {
                batch_size: 1024,
                sigma: None,
                eval_points: 1024,
            },
            n_states: 3,
            seed: 0,
            log_interval: 100,
            attempts: 1,
            output_dir: None,
        }
    }

    /// Parse TOML. Missing keys take the defaults of the preset named by
    /// `system.kind` (`well` when absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_preset(text, None)
    }

    /// Parse TOML on top of `preset`. A `system.kind` in the file that names
    /// a different system is an error.
    pub fn from_toml_with_preset(text: &str, preset: Option<Preset>) -> Result<Self> {
        let overlay: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let kind = overlay
            .get("system")
            .and_then(|s| s.get("kind"))
            .map(|k| k.as_str().ok_or_else(|| Error::config("system.kind", "must be a string")))
            .transpose()?
            .map(str::parse::<Preset>)
            .transpose()?;
        let preset = match (kind, preset) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::config(
                    "system.kind",
                    format!("file says {a:?} but the {b:?} preset was requested"),
                ))
            }
            (a, b) => a.or(b).unwrap_or(Preset::Well),
        };
        let base = Self::preset(preset);
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config("config", e.to_string()))?;
        merge_tables(&mut merged, overlay);
        let cfg: SolveConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_preset(&text, preset)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.system_def().validate()?;
        self.network.validate()?;
        if self.network.main_outputs != self.system_def().channels() {
            return Err(Error::config(
                "network.main_outputs",
                format!("{} system needs {} ψ channel(s)", self.system.kind, self.system_def().channels()),
            ));
        }
        for term in LossTerm::ALL {
            let w = self.weights.base(term);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("weights.{}", term.name()), "must be a finite non-negative number"));
            }
        }
        let s = &self.schedule;
        for (name, f) in [
            ("schedule.energy_decay_fraction", s.energy_decay_fraction),
            ("schedule.pde_ramp_fraction", s.pde_ramp_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(name, "must be in (0, 1]"));
            }
        }
        if !(s.pde_ramp_factor >= 1.0 && s.pde_ramp_factor.is_finite()) {
            return Err(Error::config("schedule.pde_ramp_factor", "must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::config("optimizer", "need lr > 0, beta1/beta2 in [0, 1), eps > 0"));
        }
        if !(o.final_lr_factor > 0.0 && o.final_lr_factor <= 1.0) {
            return Err(Error::config("optimizer.final_lr_factor", "must be in (0, 1]"));
        }
        let c = &self.convergence;
        if !(c.total_threshold > 0.0) || !(c.pde_threshold > 0.0) {
            return Err(Error::config("convergence", "thresholds must be positive"));
        }
        if c.max_epochs == 0 {
            return Err(Error::config("convergence.max_epochs", "must be at least 1"));
        }
        if self.sampler.batch_size < 2 {
            return Err(Error::config("sampler.batch_size", "must be at least 2"));
        }
        if let Some(sigma) = self.sampler.sigma {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::config("sampler.sigma", "must be positive"));
            }
        }
        if self.sampler.eval_points < 2 {
            return Err(Error::config("sampler.eval_points", "must be at least 2"));
        }
        if self.n_states == 0 {
            return Err(Error::config("n_states", "must be at least 1"));
        }
        if self.log_interval == 0 {
            return Err(Error::config("log_interval", "must be at least 1"));
        }
        if self.attempts == 0 {
            return Err(Error::config("attempts", "must be at least 1"));
        }
        Ok(())
    }

    /// System definition for the first state.
    pub fn system_def(&self) -> SystemDef {
        let s = &self.system;
        let mut def = match s.kind {
            SystemKind::Well => SystemDef::well(s.length, s.a_exp),
            SystemKind::Ring => SystemDef::ring(s.length, s.a_exp),
        };
        def.e_init = s.e_init;
        def.symmetry = match (s.kind, s.symmetry_bias) {
            (SystemKind::Well, true) => Some(Parity::Even),
            _ => None,
        };
        def
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        SolveConfig::well().validate().unwrap();
        SolveConfig::ring().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SolveConfig::ring();
        let text = cfg.to_toml_string();
        assert_eq!(SolveConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_overrides_preset() {
        let cfg = SolveConfig::from_toml_str(
            r#"
            n_states = 2
            [network]
            hidden_width = 32
            [convergence]
            max_epochs = 500
            "#,
        )
        .unwrap();
        assert_eq!(cfg.n_states, 2);
        assert_eq!(cfg.network.hidden_width, 32);
        assert_eq!(cfg.network.hidden_layers, 6);
        assert_eq!(cfg.convergence.max_epochs, 500);
        assert_eq!(cfg.weights.integral, 5000.0);

        let ring = SolveConfig::from_toml_str("[system]\nkind = \"ring\"\n").unwrap();
        assert_eq!(ring, SolveConfig::ring());
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = SolveConfig::from_toml_str("[weights]\nintegral = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("weights.integral"), "{err}");
        let err = SolveConfig::from_toml_str("[network]\nmain_outputs = 2\n").unwrap_err();
        assert!(err.to_string().contains("network.main_outputs"), "{err}");
        assert!(SolveConfig::from_toml_str("bogus_key = 1\n").is_err());
    }

    #[test]
    fn preset_and_file_kind_must_agree() {
        let cfg = SolveConfig::from_toml_with_preset("n_states = 1\n", Some(Preset::Ring)).unwrap();
        assert_eq!(cfg.system.kind, SystemKind::Ring);
        let err = SolveConfig::from_toml_with_preset("[system]\nkind = \"well\"\n", Some(Preset::Ring)).unwrap_err();
        assert!(err.to_string().contains("system.kind"), "{err}");
    }

    #[test]
    fn output_dir_round_trips() {
        let mut cfg = SolveConfig::well();
        cfg.output_dir = Some("runs/a".into());
        let text = cfg.to_toml_string();
        assert_eq!(SolveConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
