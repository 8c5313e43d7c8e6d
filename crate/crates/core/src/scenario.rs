//! Benchmark scenarios: a system, the obstacle, gains and initial conditions.

use std::fmt;
use std::str::FromStr;

use crate::equilibria::{find_boundary_equilibria, find_interior_equilibria, SearchBox};
use crate::linalg::vector;
use crate::models::{builtin_system, BuiltinSystem, CircularObstacleCbf, QuadraticClf, SystemKind};
use crate::nominal::{NominalController, NominalGains};
use crate::shaped::{ShapedController, ShapedGains};
use crate::sim::{ring, simulate_nominal, simulate_shaped, SimConfig, TrajectoryRecord};
use crate::{Error, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Nominal,
    Shaped,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Nominal => "nominal",
            ControllerKind::Shaped => "shaped",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(ControllerKind::Nominal),
            "shaped" => Ok(ControllerKind::Shaped),
            _ => Err(Error::InvalidParameter(format!("unknown controller `{s}` (expected nominal or shaped)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: SystemKind,
    pub n: usize,
    pub clf_lambda: Vec<f64>,
    pub obstacle_center: Vec<f64>,
    pub obstacle_radius: f64,
    pub nominal: NominalGains,
    pub shaped: ShapedGains,
    pub sim: SimConfig,
    pub initial_conditions: Vec<Vector>,
}

/// Twelve points on the radius-6 circle about the origin, starting at 15°.
///
/// The offset keeps every point off the symmetry axis `x₁ = 0`, where the
/// shaped controller has no reason to rotate `Q`.
pub fn benchmark_ring() -> Vec<Vector> {
    ring(&Vector::zeros(2), 6.0, 12, 15f64.to_radians())
}

impl Scenario {
    /// `λ = (6, 1)`, obstacle at `(0, 3)` with `r = 1.5`, benchmark gains.
    pub fn benchmark(system: SystemKind) -> Self {
        Scenario {
            system,
            n: 2,
            clf_lambda: vec![6.0, 1.0],
            obstacle_center: vec![0.0, 3.0],
            obstacle_radius: 1.5,
            nominal: NominalGains::benchmark(),
            shaped: ShapedGains::benchmark(),
            sim: SimConfig::default(),
            initial_conditions: benchmark_ring(),
        }
    }

    pub fn build_system(&self) -> Result<BuiltinSystem> {
        builtin_system(self.system, self.n)
    }

    pub fn clf(&self) -> Result<QuadraticClf> {
        QuadraticClf::new(&self.clf_lambda)
    }

    pub fn cbf(&self) -> Result<CircularObstacleCbf> {
        CircularObstacleCbf::new(&self.obstacle_center, self.obstacle_radius)
    }

    pub fn nominal_controller(&self) -> Result<NominalController<BuiltinSystem>> {
        NominalController::new(self.build_system()?, self.clf()?, self.cbf()?, self.nominal)
    }

    pub fn shaped_controller(&self) -> Result<ShapedController<BuiltinSystem>> {
        ShapedController::new(self.build_system()?, self.clf()?, self.cbf()?, self.shaped)
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal_controller()?;
        self.shaped.validate()?;
        self.sim.validate()?;
        for ic in &self.initial_conditions {
            if ic.len() != self.n {
                return Err(Error::Dimension(format!("initial condition {ic:?} does not have {} entries", self.n)));
            }
        }
        Ok(())
    }

    /// Locations of the nominal closed loop's boundary and interior equilibria
    /// (planar scenarios only; empty otherwise).
    pub fn known_equilibria(&self) -> Result<Vec<Vector>> {
        if self.n != 2 {
            return Ok(Vec::new());
        }
        let ctrl = self.nominal_controller()?;
        let mut points: Vec<Vector> = find_boundary_equilibria(&ctrl)?
            .into_iter()
            .filter(|r| !r.continuum)
            .map(|r| r.location)
            .collect();
        let search = SearchBox::square(self.search_half_width());
        points.extend(find_interior_equilibria(&ctrl, &search)?.into_iter().map(|r| r.location));
        Ok(points)
    }

    /// Half-width of the interior-equilibrium search box: large enough to
    /// hold the obstacle and every initial condition, at least 6.
    pub fn search_half_width(&self) -> f64 {
        let obstacle = self.obstacle_center.iter().fold(0.0f64, |m, c| m.max(c.abs())) + self.obstacle_radius;
        self.initial_conditions.iter().flat_map(|x| x.iter()).fold(obstacle.max(6.0), |m, v| m.max(v.abs()))
    }

    pub fn simulate(&self, kind: ControllerKind, x0: &Vector, known: &[Vector]) -> Result<TrajectoryRecord> {
        match kind {
            ControllerKind::Nominal => simulate_nominal(&self.nominal_controller()?, x0, &self.sim, known),
            ControllerKind::Shaped => simulate_shaped(&self.shaped_controller()?, x0, &self.sim, known),
        }
    }
}

/// The four initial conditions used for the shaped integrator runs.
pub fn shaped_demo_ics() -> Vec<Vector> {
    vec![vector(&[4.0, 4.0]), vector(&[-4.0, 4.0]), vector(&[0.5, 6.0]), vector(&[-0.5, 6.0])]
}
