use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kagome_gibbs::channel::ChannelConfig;
use kagome_gibbs::lattice::{build_kagome, KagomeLattice, KagomeSpec};
use kagome_gibbs::operators::{build_afhm_chain, build_afim_chain, build_tfim_chain, InitialKind, SpinModel};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    KagomeAfim {
        lattice: KagomeSpec,
        gx: f64,
        gz: f64,
    },
    KagomeAfhm {
        lattice: KagomeSpec,
    },
    TfimChain {
        n: usize,
        j: f64,
        g: f64,
        #[serde(default)]
        periodic: bool,
    },
    AfimChain {
        n: usize,
        gx: f64,
        gz: f64,
        #[serde(default)]
        periodic: bool,
    },
    AfhmChain {
        n: usize,
        #[serde(default)]
        periodic: bool,
    },
}

impl ModelConfig {
    pub fn lattice(&self) -> Result<Option<KagomeLattice>, CliError> {
        match self {
            ModelConfig::KagomeAfim { lattice, .. } | ModelConfig::KagomeAfhm { lattice } => {
                Ok(Some(build_kagome(lattice)?))
            }
            _ => Ok(None),
        }
    }

    pub fn build(&self) -> Result<SpinModel, CliError> {
        let model = match self {
            ModelConfig::KagomeAfim { lattice, gx, gz } => SpinModel::kagome_afim(&build_kagome(lattice)?, *gx, *gz),
            ModelConfig::KagomeAfhm { lattice } => SpinModel::kagome_afhm(&build_kagome(lattice)?),
            ModelConfig::TfimChain { n, j, g, periodic } => {
                SpinModel::chain("tfim", *n, *periodic, build_tfim_chain(*n, *j, *g, *periodic))
            }
            ModelConfig::AfimChain { n, gx, gz, periodic } => {
                SpinModel::chain("afim", *n, *periodic, build_afim_chain(*n, *gx, *gz, *periodic))
            }
            ModelConfig::AfhmChain { n, periodic } => {
                SpinModel::chain("afhm", *n, *periodic, build_afhm_chain(*n, *periodic))
            }
        };
        if model.n_sites == 0 {
            return Err(CliError::Config("model has no sites".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_traj: usize,
    pub n_resets: usize,
    #[serde(default = "default_initial")]
    pub initial: InitialKind,
    /// Cycle at which the steady-state energy is reported.
    #[serde(default)]
    pub report_cycle: Option<usize>,
    #[serde(default = "yes")]
    pub write_trajectories: bool,
    /// In an `n_env` sweep, scale `n_resets` and `report_cycle` so the
    /// rescaled horizon stays fixed.
    #[serde(default)]
    pub hold_rescaled: bool,
}

fn default_initial() -> InitialKind {
    InitialKind::RandomProduct
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "one")]
    pub every: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

fn default_cutoff() -> f64 {
    kagome_gibbs::oracle::DEFAULT_CUTOFF
}

fn one() -> usize {
    1
}

fn default_thresholds() -> Vec<f64> {
    vec![0.5, 0.8]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    NEnv,
    P1,
    Alpha,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Beta => "beta",
            SweepParam::NEnv => "n_env",
            SweepParam::P1 => "p1",
            SweepParam::Alpha => "alpha",
        })
    }
}

/// A real that may be written as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Real(#[serde(with = "kagome_gibbs::extended")] pub f64);

impl std::str::FromStr for Real {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(Real(f64::INFINITY)),
            t => t.parse().map(Real).map_err(|_| format!("not a number: {s}")),
        }
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub channel: ChannelConfig,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Config("configuration is empty".into()));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("invalid run name `{}`", self.name)));
        }
        self.channel.validate()?;
        if self.run.n_traj == 0 {
            return Err(CliError::Config("n_traj must be positive".into()));
        }
        if let Some(c) = self.run.report_cycle {
            if c > self.run.n_resets {
                return Err(CliError::Config(format!("report_cycle {c} exceeds n_resets")));
            }
        }
        if let Some(f) = &self.fidelity {
            if f.every == 0 || !(f.cutoff > 0.0) {
                return Err(CliError::Config("fidelity needs every >= 1 and cutoff > 0".into()));
            }
        }
        Ok(())
    }

    /// Canonical text of everything that determines the results.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }

    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self, CliError> {
        let mut c = self.clone();
        match param {
            SweepParam::Beta => c.channel.beta = value,
            SweepParam::Alpha => c.channel.alpha = value,
            SweepParam::P1 => c.channel.noise.local_depolarizing_rate = value,
            SweepParam::NEnv => {
                if value < 1.0 || value.fract() != 0.0 || !value.is_finite() {
                    return Err(CliError::Config(format!("n_env must be a positive integer, got {value}")));
                }
                let ne = value as usize;
                if self.run.hold_rescaled {
                    let scale = |k: usize| (k * self.channel.n_env).div_ceil(ne);
                    c.run.n_resets = scale(self.run.n_resets);
                    c.run.report_cycle = self.run.report_cycle.map(scale);
                }
                c.channel.n_env = ne;
            }
        }
        c.name = format!("{}-{}{}", self.name, param, Real(value));
        c.sweep = None;
        c.validate()?;
        Ok(c)
    }
}

/// First 16 hex digits of the SHA-256 digest.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

pub fn lattice_hash(model: &ModelConfig) -> Option<String> {
    match model {
        ModelConfig::KagomeAfim { lattice, .. } | ModelConfig::KagomeAfhm { lattice } => {
            Some(short_hash(lattice.to_toml().as_bytes()))
        }
        _ => None,
    }
}

pub struct Preset {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! preset {
    ($name:literal) => {
        Preset { name: $name, text: include_str!(concat!("../../../presets/", $name, ".toml")) }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("table1-ns12-binf"),
    preset!("table1-ns12-b0.5"),
    preset!("table1-ns12-b0.25"),
    preset!("fig2b-afim-beta3"),
    preset!("fig2b-afim-beta2"),
    preset!("fig2b-afim-beta1.4"),
    preset!("ne-collapse"),
    preset!("tfim-depolarizing"),
    preset!("tfim-env-count"),
];

pub const LATTICE_PRESETS: &[Preset] =
    &[Preset { name: "ns79-open", text: include_str!("../../../presets/lattices/ns79-open.toml") }];

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let p = PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Config(format!("unknown preset `{name}`; available: {}", names.join(", ")))
    })?;
    ExperimentConfig::parse(p.text)
}

pub fn lattice_preset(name: &str) -> Result<KagomeSpec, CliError> {
    let p = LATTICE_PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CliError::Config(format!("unknown lattice preset `{name}`")))?;
    Ok(KagomeSpec::from_toml(p.text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for p in PRESETS {
            let cfg = preset(p.name).unwrap();
            assert_eq!(cfg.name, p.name);
            cfg.model.build().unwrap();
        }
        let spec = lattice_preset("ns79-open").unwrap();
        assert_eq!(build_kagome(&spec).unwrap().n_sites, 79);
    }

    #[test]
    fn hash_tracks_content() {
        let a = preset("table1-ns12-binf").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.channel.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn empty_and_unknown() {
        assert!(matches!(ExperimentConfig::parse("  \n"), Err(CliError::Config(_))));
        assert!(matches!(preset("nope"), Err(CliError::Config(_))));
        let text = preset("table1-ns12-binf").unwrap().canonical().replace("n_traj", "n_trajectories");
        assert!(matches!(ExperimentConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn sweep_variants() {
        let base = preset("ne-collapse").unwrap();
        let v = base.with_param(SweepParam::NEnv, 4.0).unwrap();
        assert_eq!(v.channel.n_env, 4);
        assert_eq!(v.run.n_resets * 4, base.run.n_resets);
        assert!(base.with_param(SweepParam::NEnv, 1.5).is_err());
        let b = base.with_param(SweepParam::Beta, f64::INFINITY).unwrap();
        assert!(b.name.ends_with("betainf"));
    }
}
