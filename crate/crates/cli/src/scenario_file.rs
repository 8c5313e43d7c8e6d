//! Versioned TOML scenario files.

use std::fs;
use std::path::Path;

use cbf_shaping::models::{ClassKappa, SystemKind};
use cbf_shaping::nominal::NominalGains;
use cbf_shaping::scenario::Scenario;
use cbf_shaping::shaped::ShapedGains;
use cbf_shaping::sim::{ring, SimConfig};
use cbf_shaping::{linalg::vector, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: u32,
    /// `integrator`, `f1`, `f2` or `synthetic`.
    pub system: String,
    #[serde(default = "default_dim")]
    pub n: usize,
    pub clf: ClfSection,
    pub obstacle: ObstacleSection,
    #[serde(default)]
    pub nominal: NominalSection,
    #[serde(default)]
    pub shaped: ShapedSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub initial_conditions: InitialConditions,
}

fn default_dim() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClfSection {
    /// Eigenvalues of the reference CLF Hessian.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSection {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Gains of the unmodified CLF-CBF QP. Class-K functions are linear with the
/// given slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalSection {
    pub p: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Use extended class-K functions (linear on all of ℝ).
    #[serde(default = "default_true")]
    pub extended: bool,
}

impl Default for NominalSection {
    fn default() -> Self {
        NominalSection { p: 5.0, gamma: 1.0, alpha: 1.0, extended: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapedSection {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Length scale of `σ(h) = exp(−h/ℓ)`.
    pub sigma_scale: f64,
    #[serde(default = "default_true")]
    pub extended: bool,
}

impl Default for ShapedSection {
    fn default() -> Self {
        ShapedSection { p: 5.0, q: 5.0, gamma: 1.0, alpha: 1.0, beta: 1.0, epsilon: 0.1, sigma_scale: 1.0, extended: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_final: f64,
    pub convergence_radius: f64,
    pub convergence_hold: f64,
    pub monitors_tolerance: f64,
    pub output_stride: usize,
    pub sample_and_hold: bool,
    pub stop_on_convergence: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection::from(&SimConfig::default())
    }
}

impl From<&SimConfig> for SimSection {
    fn from(c: &SimConfig) -> Self {
        SimSection {
            dt: c.dt,
            t_final: c.t_final,
            convergence_radius: c.convergence_radius,
            convergence_hold: c.convergence_hold,
            monitors_tolerance: c.monitors_tolerance,
            output_stride: c.output_stride,
            sample_and_hold: c.sample_and_hold,
            stop_on_convergence: c.stop_on_convergence,
        }
    }
}

impl From<&SimSection> for SimConfig {
    fn from(s: &SimSection) -> Self {
        SimConfig {
            dt: s.dt,
            t_final: s.t_final,
            convergence_radius: s.convergence_radius,
            convergence_hold: s.convergence_hold,
            monitors_tolerance: s.monitors_tolerance,
            output_stride: s.output_stride,
            sample_and_hold: s.sample_and_hold,
            stop_on_convergence: s.stop_on_convergence,
        }
    }
}

/// Explicit points followed by the points of an optional ring.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<RingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub count: usize,
    #[serde(default)]
    pub phase_deg: f64,
}

impl InitialConditions {
    pub fn expand(&self) -> Vec<Vector> {
        let mut out: Vec<Vector> = self.points.iter().map(|p| vector(p)).collect();
        if let Some(r) = &self.ring {
            out.extend(ring(&vector(&r.center), r.radius, r.count, r.phase_deg.to_radians()));
        }
        out
    }
}

fn class_k(gain: f64, extended: bool) -> cbf_shaping::Result<ClassKappa> {
    let k = ClassKappa::linear(gain)?;
    Ok(if extended { k } else { k.non_extended() })
}

impl ScenarioFile {
    /// The benchmark CLF, obstacle and gains for `system`, with the default
    /// twelve-point ring of initial conditions.
    pub fn benchmark(system: SystemKind) -> Self {
        ScenarioFile {
            format_version: FORMAT_VERSION,
            system: system.name().to_string(),
            n: 2,
            clf: ClfSection { lambda: vec![6.0, 1.0] },
            obstacle: ObstacleSection { center: vec![0.0, 3.0], radius: 1.5 },
            nominal: NominalSection::default(),
            shaped: ShapedSection::default(),
            sim: SimSection::default(),
            initial_conditions: InitialConditions {
                points: Vec::new(),
                ring: Some(RingSpec { center: vec![0.0, 0.0], radius: 6.0, count: 12, phase_deg: 15.0 }),
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {} (this build reads version {FORMAT_VERSION})",
                file.format_version
            ));
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files contain only finite numbers and strings")
    }

    /// Reads, parses and validates a scenario file.
    pub fn load(path: &Path) -> CliResult<(Self, Scenario)> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: format!("cannot read scenario file: {e}"),
        })?;
        let config = |message: String| CliError::Config { path: path.to_path_buf(), message };
        let file = Self::parse(&text).map_err(config)?;
        let scenario = file.to_scenario().map_err(config)?;
        Ok((file, scenario))
    }

    pub fn to_scenario(&self) -> Result<Scenario, String> {
        let system: SystemKind = self.system.parse().map_err(|e| format!("system: {e}"))?;
        let nominal = {
            let s = &self.nominal;
            NominalGains::new(s.p, class_k(s.gamma, s.extended).map_err(|e| format!("[nominal] gamma: {e}"))?, class_k(s.alpha, s.extended).map_err(|e| format!("[nominal] alpha: {e}"))?)
                .map_err(|e| format!("[nominal] {e}"))?
        };
        let s = &self.shaped;
        let k = |name: &str, gain: f64| class_k(gain, s.extended).map_err(|e| format!("[shaped] {name}: {e}"));
        let shaped = ShapedGains {
            p: s.p,
            q: s.q,
            gamma: k("gamma", s.gamma)?,
            alpha: k("alpha", s.alpha)?,
            beta: k("beta", s.beta)?,
            epsilon: s.epsilon,
            sigma_scale: s.sigma_scale,
        };
        shaped.validate().map_err(|e| format!("[shaped] {e}"))?;
        let sim = SimConfig::from(&self.sim);
        sim.validate().map_err(|e| format!("[sim] {e}"))?;
        if let Some(r) = &self.initial_conditions.ring {
            if r.center.len() != self.n {
                return Err(format!("[initial_conditions.ring] center must have {} entries", self.n));
            }
        }
        let scenario = Scenario {
            system,
            n: self.n,
            clf_lambda: self.clf.lambda.clone(),
            obstacle_center: self.obstacle.center.clone(),
            obstacle_radius: self.obstacle.radius,
            nominal,
            shaped,
            sim,
            initial_conditions: self.initial_conditions.expand(),
        };
        scenario.validate().map_err(|e| e.to_string())?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_file_matches_benchmark_scenario() {
        let scenario = ScenarioFile::benchmark(SystemKind::Integrator).to_scenario().unwrap();
        assert_eq!(scenario, Scenario::benchmark(SystemKind::Integrator));
    }

    #[test]
    fn round_trips_through_toml() {
        let file = ScenarioFile::benchmark(SystemKind::F2);
        let text = file.to_toml();
        assert_eq!(ScenarioFile::parse(&text).unwrap(), file);
    }

    #[test]
    fn unknown_key_is_reported_with_its_line() {
        let mut text = ScenarioFile::benchmark(SystemKind::Integrator).to_toml();
        text = text.replace("[obstacle]\n", "[obstacle]\nradious = 2.0\n");
        let err = ScenarioFile::parse(&text).unwrap_err();
        assert!(err.contains("radious"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = ScenarioFile::benchmark(SystemKind::Integrator).to_toml().replace("format_version = 1", "format_version = 2");
        assert!(ScenarioFile::parse(&text).unwrap_err().contains("format_version"));
    }

    #[test]
    fn optional_sections_default_to_benchmark_gains() {
        let text = "format_version = 1\nsystem = \"integrator\"\n[clf]\nlambda = [6.0, 1.0]\n[obstacle]\ncenter = [0.0, 3.0]\nradius = 1.5\n";
        let scenario = ScenarioFile::parse(text).unwrap().to_scenario().unwrap();
        assert_eq!(scenario.nominal, NominalGains::benchmark());
        assert_eq!(scenario.shaped, ShapedGains::benchmark());
        assert!(scenario.initial_conditions.is_empty());
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let mut file = ScenarioFile::benchmark(SystemKind::Integrator);
        file.shaped.epsilon = -1.0;
        assert!(file.to_scenario().unwrap_err().contains("[shaped]"));
        let mut file = ScenarioFile::benchmark(SystemKind::Integrator);
        file.system = "pendulum".into();
        assert!(file.to_scenario().unwrap_err().contains("pendulum"));
    }
}
