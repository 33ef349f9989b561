//! TOML configuration for the actuator and the optimization problem.
//!
//! Actuator keys: `R N m k_s z_s c_f k_1 k_2 k_ec z_min z_max` and an
//! optional `gap_slope`. A `[tabulated]` section with `gap_z gap_r
//! core_alpha core_r` replaces `k_1 k_2 gap_slope`.
//!
//! Optimization keys: `mode u_minus u_plus z_0 z_f t_f mu_z sigma_z2` and an
//! optional `motion` (`making` or `breaking`), plus `[weights]`, `[bounce]`,
//! `[solver]` and `[supply]` sections. `[supply]` (`u_min u_max r_min
//! r_max`) derives the saturation bounds and replaces `u_minus u_plus`.
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actuator::{ActuatorParams, Reluctance, TabulatedReluctance, DEFAULT_GAP_SLOPE};
use crate::contact::{BounceConfig, BounceRule, ContactModel, MotionSign};
use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::ocp::{control_bounds, ContinuationStage, Mode, OcpSpec, SolverOptions};

/// Actuator of the examples.
pub const REFERENCE_ACTUATOR: &str = include_str!("../configs/valve.toml");
/// Soft-landing problem of the examples.
pub const REFERENCE_OPTIMIZATION: &str = include_str!("../configs/soft_landing.toml");

/// Source label used in errors for the bundled configs.
pub const BUNDLED: &str = "<bundled>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorConfig {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "N")]
    pub n: f64,
    pub m: f64,
    pub k_s: f64,
    pub z_s: f64,
    pub c_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_2: Option<f64>,
    pub k_ec: f64,
    pub z_min: f64,
    pub z_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabulated: Option<TabulatedConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedConfig {
    pub gap_z: Vec<f64>,
    pub gap_r: Vec<f64>,
    pub core_alpha: Vec<f64>,
    pub core_r: Vec<f64>,
}

impl ActuatorConfig {
    pub fn to_params(&self) -> Result<ActuatorParams> {
        let reluctance = match (&self.tabulated, self.k_1, self.k_2) {
            (Some(t), None, None) if self.gap_slope.is_none() => {
                Reluctance::Tabulated(TabulatedReluctance::new(&t.gap_z, &t.gap_r, &t.core_alpha, &t.core_r)?)
            }
            (Some(_), _, _) => return Err(Error::invalid("[tabulated] replaces k_1, k_2 and gap_slope; give one or the other")),
            (None, Some(k1), Some(k2)) => {
                Reluctance::SaturableCore { k1, k2, gap_slope: self.gap_slope.unwrap_or(DEFAULT_GAP_SLOPE) }
            }
            (None, _, _) => return Err(Error::invalid("k_1 and k_2 are required without a [tabulated] section")),
        };
        let p = ActuatorParams {
            resistance: self.r,
            coil_turns: self.n,
            mass: self.m,
            spring_stiffness: self.k_s,
            spring_rest: self.z_s,
            friction: self.c_f,
            eddy: self.k_ec,
            z_min: self.z_min,
            z_max: self.z_max,
            reluctance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_params(p: &ActuatorParams) -> Self {
        let (k_1, k_2, gap_slope, tabulated) = match &p.reluctance {
            Reluctance::SaturableCore { k1, k2, gap_slope } => (Some(*k1), Some(*k2), Some(*gap_slope), None),
            Reluctance::Tabulated(t) => {
                let (gap_z, gap_r) = t.gap_table();
                let (core_alpha, core_r) = t.core_table();
                let tab = TabulatedConfig {
                    gap_z: gap_z.to_vec(),
                    gap_r: gap_r.to_vec(),
                    core_alpha: core_alpha.to_vec(),
                    core_r: core_r.to_vec(),
                };
                (None, None, None, Some(tab))
            }
        };
        Self {
            r: p.resistance,
            n: p.coil_turns,
            m: p.mass,
            k_s: p.spring_stiffness,
            z_s: p.spring_rest,
            c_f: p.friction,
            k_1,
            k_2,
            k_ec: p.eddy,
            z_min: p.z_min,
            z_max: p.z_max,
            gap_slope,
            tabulated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Making,
    Breaking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BounceRuleName {
    WorstCase,
    Argmax,
    Restitution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BounceSection {
    pub rule: BounceRuleName,
    #[serde(default)]
    pub restitution: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_mesh: Option<usize>,
    pub newton_damping: Option<f64>,
    pub initial_nodes: Option<usize>,
    pub clamp_sharpness_beta: Option<f64>,
    pub continuation: Option<Vec<ContinuationStage>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplySection {
    pub u_min: f64,
    pub u_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    pub mode: Mode,
    #[serde(default)]
    pub u_minus: Option<f64>,
    #[serde(default)]
    pub u_plus: Option<f64>,
    pub z_0: f64,
    pub z_f: f64,
    pub t_f: f64,
    pub mu_z: f64,
    pub sigma_z2: f64,
    #[serde(default)]
    pub motion: Option<Motion>,
    #[serde(default)]
    pub weights: Option<CostWeights>,
    #[serde(default)]
    pub bounce: Option<BounceSection>,
    #[serde(default)]
    pub solver: Option<SolverSection>,
    #[serde(default)]
    pub supply: Option<SupplySection>,
}

impl OptimizationConfig {
    pub fn to_spec(&self, params: ActuatorParams) -> Result<OcpSpec> {
        let (u_minus, u_plus) = match (self.supply, self.u_minus, self.u_plus) {
            (Some(s), None, None) => control_bounds(s.u_min, s.u_max, params.resistance, s.r_min, s.r_max)?,
            (None, Some(lo), Some(hi)) => (lo, hi),
            (Some(_), _, _) => return Err(Error::invalid("[supply] derives u_minus and u_plus; give one or the other")),
            (None, _, _) => return Err(Error::invalid("u_minus and u_plus are required without a [supply] section")),
        };
        if !(self.sigma_z2 > 0.0) {
            return Err(Error::invalid(format!("sigma_z2 must be positive, got {}", self.sigma_z2)));
        }
        let sign = match self.motion {
            Some(Motion::Making) => MotionSign::Making,
            Some(Motion::Breaking) => MotionSign::Breaking,
            None if self.z_f < self.z_0 => MotionSign::Making,
            None => MotionSign::Breaking,
        };
        let contact = ContactModel::gaussian(self.mu_z, self.sigma_z2.sqrt(), sign, self.z_0, self.z_f, self.t_f)?;
        let mut bounce = BounceConfig::default();
        if let Some(b) = &self.bounce {
            bounce.rule = match (b.rule, b.restitution) {
                (BounceRuleName::WorstCase, None) => BounceRule::WorstCaseZero,
                (BounceRuleName::Argmax, None) => BounceRule::ArgmaxSearch,
                (BounceRuleName::Restitution, Some(e)) => BounceRule::Restitution(e),
                (BounceRuleName::Restitution, None) => return Err(Error::invalid("rule = \"restitution\" needs a restitution value")),
                (_, Some(_)) => return Err(Error::invalid("restitution is only used with rule = \"restitution\"")),
            };
            if let Some(k) = b.kappa {
                bounce.kappa = k;
            }
        }
        let mut solver = SolverOptions::default();
        if let Some(s) = &self.solver {
            solver.rel_tol = s.rel_tol.unwrap_or(solver.rel_tol);
            solver.abs_tol = s.abs_tol.unwrap_or(solver.abs_tol);
            solver.max_mesh = s.max_mesh.unwrap_or(solver.max_mesh);
            solver.newton_damping = s.newton_damping.unwrap_or(solver.newton_damping);
            solver.initial_nodes = s.initial_nodes.unwrap_or(solver.initial_nodes);
            solver.clamp_sharpness_beta = s.clamp_sharpness_beta.unwrap_or(solver.clamp_sharpness_beta);
            if let Some(c) = &s.continuation {
                solver.continuation = c.clone();
            }
        }
        let spec = OcpSpec {
            mode: self.mode,
            params,
            contact,
            weights: self.weights.unwrap_or_default(),
            u_minus,
            u_plus,
            z_0: self.z_0,
            z_f: self.z_f,
            t_f: self.t_f,
            bounce,
            solver,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config { path: path.to_path_buf(), message: e.to_string() }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| config_error(path, e))
}

/// Semantic errors (bad values) are reported against the file as well.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => config_error(path, other),
    })
}

pub fn parse_actuator(text: &str, path: &Path) -> Result<ActuatorParams> {
    let cfg: ActuatorConfig = toml::from_str(text).map_err(|e| config_error(path, e))?;
    in_file(path, cfg.to_params())
}

pub fn parse_optimization(text: &str, path: &Path, params: ActuatorParams) -> Result<OcpSpec> {
    let cfg: OptimizationConfig = toml::from_str(text).map_err(|e| config_error(path, e))?;
    in_file(path, cfg.to_spec(params))
}

pub fn load_actuator(path: &Path) -> Result<ActuatorParams> {
    parse_actuator(&read(path)?, path)
}

pub fn load_optimization(path: &Path, params: ActuatorParams) -> Result<OcpSpec> {
    parse_optimization(&read(path)?, path, params)
}

/// Loads the actuator and the problem, falling back to the bundled configs.
pub fn load(actuator: Option<&Path>, optimization: Option<&Path>) -> Result<OcpSpec> {
    let bundled = PathBuf::from(BUNDLED);
    let params = match actuator {
        Some(p) => load_actuator(p)?,
        None => parse_actuator(REFERENCE_ACTUATOR, &bundled)?,
    };
    match optimization {
        Some(p) => load_optimization(p, params),
        None => parse_optimization(REFERENCE_OPTIMIZATION, &bundled, params),
    }
}

/// Actuator parameters as config text.
pub fn actuator_toml(p: &ActuatorParams) -> String {
    toml::to_string(&ActuatorConfig::from_params(p)).expect("actuator config serializes")
}
