//! TOML run configuration and the bundled fixture models.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::elliptic::DriftScheme;
use crate::error::{Error, Result};
use crate::grid::BallDomain;
use crate::mc::{SimulationParams, Start};
use crate::resolvent::Exhaustion;
use crate::model::{DiffusionModel, FieldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default = "one")]
    pub radius_scale: f64,
    pub max_index: usize,
    pub spacing: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Discarded prefix for stationary statistics.
    pub burn_in: f64,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    /// Time at which the generating function is taken; defaults to the horizon.
    pub gf_time: Option<f64>,
    /// Spread of an isotropic Gaussian start around `x0`; a point start if unset.
    pub start_std: Option<f64>,
    /// Histogram bins are blocks of this many grid nodes per axis.
    pub bins: usize,
    /// Brownian-bridge correction for absorption between steps.
    pub bridge: bool,
    /// Negative control: simulate `dx = +b dt + Γ dW`.
    pub flip_drift: bool,
    /// Functional fed to the generating function.
    pub observable: McObservable,
    /// Number of paths written out in full (thinned by `keep_stride` steps).
    pub keep_paths: usize,
    pub keep_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McObservable {
    #[default]
    Heat,
    /// Heat plus the boundary term `log θ(x₀) − log θ(x_t)`.
    EntropyProduction,
}

/// Right-hand side `f` for resolvent and backward-evolution runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rhs {
    #[default]
    One,
    /// `exp(−|x|²)`.
    Gaussian,
}

impl Rhs {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Rhs::One => 1.0,
            Rhs::Gaussian => (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
        }
    }
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            dt: 0.005,
            horizon: 10.0,
            burn_in: 2.0,
            seed: 20_240_607,
            lambdas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            gf_time: None,
            start_std: None,
            bins: 4,
            bridge: true,
            flip_drift: false,
            observable: McObservable::Heat,
            keep_paths: 0,
            keep_stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub lambda: f64,
    /// Observation half-width; defaults to half the scale.
    pub window: Option<f64>,
    pub tol: f64,
    pub t: f64,
    pub t_list: Vec<f64>,
    pub x0: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub kernel_cap: usize,
    /// Spacing for full-kernel work; defaults to the domain spacing.
    pub kernel_spacing: Option<f64>,
    pub omega_sweep: Vec<f64>,
    pub pairs: usize,
    pub rhs: Rhs,
    pub mc: McConfig,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            window: None,
            tol: 1e-6,
            t: 0.5,
            t_list: vec![0.1, 0.5, 1.0, 2.0],
            x0: None,
            steps: None,
            kernel_cap: 10_000,
            kernel_spacing: None,
            omega_sweep: Vec::new(),
            pairs: 10,
            rhs: Rhs::One,
            mc: McConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dim: usize,
    pub mu0: f64,
    #[serde(default)]
    pub ellipticity_r: Option<f64>,
    pub drift: FieldSpec,
    pub diffusion: FieldSpec,
    pub domain: DomainConfig,
    #[serde(default)]
    pub scheme: DriftScheme,
    #[serde(default)]
    pub experiment: Experiment,
}

const REQUIRED: [&str; 5] = ["dim", "mu0", "drift", "diffusion", "domain"];

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for key in REQUIRED {
            if !table.contains_key(key) {
                return Err(Error::MissingKey(key.into()));
            }
        }
        for field in ["drift", "diffusion"] {
            if table[field].as_table().is_some_and(|t| !t.contains_key("kind")) {
                return Err(Error::MissingKey(format!("{field}.kind")));
            }
        }
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let d = &self.domain;
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(d.spacing > 0.0 && d.radius_scale > 0.0 && d.spacing.is_finite() && d.radius_scale.is_finite()) {
            return Err(Error::Config("domain.spacing and domain.radius_scale must be positive".into()));
        }
        if d.max_index == 0 {
            return Err(Error::Config("domain.max_index must be at least 1".into()));
        }
        let e = &self.experiment;
        if !(e.lambda > 0.0 && e.tol > 0.0 && e.t > 0.0) {
            return Err(Error::Config("experiment.lambda, tol and t must be positive".into()));
        }
        let mc = &e.mc;
        if mc.paths == 0 || !(mc.dt > 0.0) || !(mc.horizon > 0.0) || mc.bins == 0 || mc.keep_stride == 0 {
            return Err(Error::Config(
                "experiment.mc needs paths, bins, keep_stride >= 1 and dt, horizon > 0".into(),
            ));
        }
        if !(mc.burn_in >= 0.0 && mc.burn_in < mc.horizon) {
            return Err(Error::Config("experiment.mc.burn_in must lie in [0, horizon)".into()));
        }
        if mc.gf_time.is_some_and(|t| !(t > 0.0 && t <= mc.horizon)) {
            return Err(Error::Config("experiment.mc.gf_time must lie in (0, horizon]".into()));
        }
        if mc.start_std.is_some_and(|s| !(s >= 0.0)) || mc.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("experiment.mc.start_std and lambdas must be finite".into()));
        }
        if let Some(x0) = &e.x0 {
            if x0.len() != self.dim {
                return Err(Error::Config(format!("experiment.x0 must have {} entries", self.dim)));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<DiffusionModel> {
        DiffusionModel::new(
            self.dim,
            self.drift.clone(),
            self.diffusion.clone(),
            self.mu0,
            self.ellipticity_r,
        )
    }

    /// The largest ball, `B_{max_index}`.
    pub fn domain(&self) -> Result<BallDomain> {
        BallDomain::new(self.dim, self.domain.radius_scale, self.domain.max_index, self.domain.spacing)
    }

    /// Largest ball at the kernel spacing.
    pub fn kernel_domain(&self) -> Result<BallDomain> {
        let h = self.experiment.kernel_spacing.unwrap_or(self.domain.spacing);
        BallDomain::new(self.dim, self.domain.radius_scale, self.domain.max_index, h)
    }

    pub fn exhaustion(&self) -> Exhaustion {
        Exhaustion {
            scale: self.domain.radius_scale,
            spacing: self.domain.spacing,
            max_index: self.domain.max_index,
            scheme: self.scheme,
            window: self.window(),
            tol: self.experiment.tol,
        }
    }

    /// Simulation settings absorbed at the largest radius, recording the
    /// experiment times, the burn-in and the generating-function times.
    pub fn mc_params(&self) -> SimulationParams {
        let mc = &self.experiment.mc;
        let x0 = self.x0();
        let mut p = SimulationParams::new(x0.clone(), mc.dt, mc.horizon, mc.paths, mc.seed);
        if let Some(std) = mc.start_std {
            p.start = Start::Gaussian { mean: x0, std };
        }
        p.absorb_radius = Some(self.domain.radius_scale * self.domain.max_index as f64);
        p.bridge = mc.bridge;
        p.flip_drift = mc.flip_drift;
        p.keep_paths = mc.keep_paths.min(mc.paths);
        p.keep_stride = mc.keep_stride;
        let gf = self.gf_time();
        let mut rec: Vec<f64> = self.experiment.t_list.clone();
        rec.extend([self.experiment.t, mc.burn_in, gf, 0.9 * gf]);
        // snap to the step grid and keep what the horizon covers
        p.record_times = rec
            .into_iter()
            .map(|t| (t / mc.dt).round() * mc.dt)
            .filter(|&t| t <= mc.horizon)
            .collect();
        p
    }

    pub fn gf_time(&self) -> f64 {
        let mc = &self.experiment.mc;
        let t = mc.gf_time.unwrap_or(mc.horizon);
        (t / mc.dt).round() * mc.dt
    }

    pub fn x0(&self) -> Vec<f64> {
        self.experiment.x0.clone().unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn window(&self) -> f64 {
        self.experiment.window.unwrap_or(0.5 * self.domain.radius_scale)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub mod fixtures {
    use super::*;

    pub const OU1D: &str = include_str!("../fixtures/ou1d.toml");
    pub const ROT2D: &str = include_str!("../fixtures/rot2d.toml");
    pub const DOUBLEWELL1D: &str = include_str!("../fixtures/doublewell1d.toml");
    pub const BROWNIAN1D: &str = include_str!("../fixtures/brownian1d.toml");

    pub const NAMES: [&str; 4] = ["ou1d", "rot2d", "doublewell1d", "brownian1d"];

    pub fn text(name: &str) -> Option<&'static str> {
        match name {
            "ou1d" => Some(OU1D),
            "rot2d" => Some(ROT2D),
            "doublewell1d" => Some(DOUBLEWELL1D),
            "brownian1d" => Some(BROWNIAN1D),
            _ => None,
        }
    }

    pub fn load(name: &str) -> Config {
        Config::parse(text(name).unwrap_or_else(|| panic!("no fixture `{name}`"))).expect("bundled fixture parses")
    }

    pub fn rot2d(omega: f64) -> Config {
        let mut c = load("rot2d");
        c.drift.params.insert("omega".into(), Value::from(omega));
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse_and_build() {
        for name in fixtures::NAMES {
            let c = fixtures::load(name);
            c.model().unwrap();
            c.domain().unwrap();
        }
        assert_eq!(fixtures::load("ou1d").domain().unwrap().grid().len(), 241);
    }

    #[test]
    fn missing_diffusion_is_named() {
        let text = fixtures::OU1D.replace("[diffusion]", "[unused]");
        match Config::parse(&text) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "diffusion"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\nbogus = 3\n", fixtures::OU1D);
        assert!(matches!(Config::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_through_toml() {
        let c = fixtures::rot2d(0.5);
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }
}
