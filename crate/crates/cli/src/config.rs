use std::path::{Path, PathBuf};

use pellet::model::{Geometry, ModelParams};
use pellet::periodic::ShootingSettings;
use pellet::simulate::{ProbeCriteria, SimulationOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Model constants; any field left out of the JSON takes its default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    /// 0 slab, 1 cylinder, 2 sphere.
    pub a: Geometry,
    pub n: f64,
    pub beta_star: f64,
    pub gamma: f64,
    pub lewis: f64,
    pub theta0: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        let p = ModelParams::default();
        ModelBlock {
            a: p.a,
            n: p.n,
            beta_star: p.beta_star,
            gamma: p.gamma,
            lewis: p.lewis,
            theta0: p.theta0,
        }
    }
}

impl From<ModelBlock> for ModelParams {
    fn from(m: ModelBlock) -> Self {
        ModelParams {
            a: m.a,
            n: m.n,
            beta_star: m.beta_star,
            gamma: m.gamma,
            lewis: m.lewis,
            theta0: m.theta0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchBlock {
    /// Start and end of the steady branch; the start may exceed the end.
    pub theta0_range: [f64; 2],
    /// Temperature of the flat starting guess.
    pub seed_z: f64,
    /// Follow cycle branches out of every Hopf point.
    pub cycles: bool,
    pub hopf_epsilon: f64,
    pub max_orbits: usize,
}

impl Default for BranchBlock {
    fn default() -> Self {
        BranchBlock {
            theta0_range: [0.3, 0.8],
            seed_z: 1.0,
            cycles: true,
            hopf_epsilon: 1e-3,
            max_orbits: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclesBlock {
    /// Half width of the bracket searched by the manifold method when the
    /// period fit fails at the end of a cycle branch.
    pub fallback_half_width: f64,
    /// Extra `theta0` brackets searched by the manifold method.
    pub brackets: Vec<[f64; 2]>,
}

impl Default for CyclesBlock {
    fn default() -> Self {
        CyclesBlock {
            fallback_half_width: 1e-3,
            brackets: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LociBlock {
    pub gamma_range: [f64; 2],
    /// Range for homoclinic curves; `gamma_range` when absent.
    pub hcl_gamma_range: Option<[f64; 2]>,
    pub lp: bool,
    pub hb: bool,
    pub hcl: bool,
    pub stop_at_cusp: bool,
}

impl Default for LociBlock {
    fn default() -> Self {
        LociBlock {
            gamma_range: [7.0, 9.0],
            hcl_gamma_range: None,
            lp: true,
            hb: true,
            hcl: true,
            stop_at_cusp: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seed {
    /// Target average concentration of the starting profile.
    pub eta: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub seeds: Vec<Seed>,
    pub tau_end: f64,
    pub sample_step: f64,
    pub criteria: ProbeCriteria,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            seeds: vec![],
            tau_end: 400.0,
            sample_step: SimulationOptions::default().sample_step,
            criteria: ProbeCriteria::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub grid_n: usize,
    /// Relative tolerance of every time integration, shooting included.
    pub rtol: f64,
    pub out: PathBuf,
    pub branch: BranchBlock,
    pub cycles: CyclesBlock,
    pub loci: LociBlock,
    pub simulate: SimulateBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelBlock::default(),
            grid_n: 8,
            rtol: 1e-10,
            out: PathBuf::from("out"),
            branch: BranchBlock::default(),
            cycles: CyclesBlock::default(),
            loci: LociBlock::default(),
            simulate: SimulateBlock::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub grid_n: Option<usize>,
    pub rtol: Option<f64>,
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn check_interval(field: &str, r: [f64; 2], allow_point: bool) -> Result<(), CliError> {
    if !(r[0].is_finite() && r[1].is_finite()) {
        return Err(invalid(field, "bounds must be finite"));
    }
    if r[0] == r[1] && !allow_point {
        return Err(invalid(field, "interval is empty"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(n) = o.grid_n {
            self.grid_n = n;
        }
        if let Some(r) = o.rtol {
            self.rtol = r;
        }
        self
    }

    pub fn params(&self) -> ModelParams {
        self.model.into()
    }

    pub fn shooting(&self) -> ShootingSettings {
        ShootingSettings {
            rtol: self.rtol,
            atol: self.rtol * 1e-2,
            max_orbits: self.branch.max_orbits,
            ..ShootingSettings::default()
        }
    }

    pub fn simulation(&self) -> SimulationOptions {
        SimulationOptions {
            sample_step: self.simulate.sample_step,
            ..SimulationOptions::with_rtol(self.rtol)
        }
    }

    pub fn hcl_gamma_range(&self) -> [f64; 2] {
        self.loci.hcl_gamma_range.unwrap_or(self.loci.gamma_range)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.params().validate().map_err(|e| invalid("model", e.to_string()))?;
        if self.grid_n == 0 || self.grid_n > 64 {
            return Err(invalid("grid_n", format!("must lie in 1..=64, got {}", self.grid_n)));
        }
        if !(1e-12..=1e-4).contains(&self.rtol) {
            return Err(invalid("rtol", format!("must lie in [1e-12, 1e-4], got {}", self.rtol)));
        }
        let b = &self.branch;
        check_interval("branch.theta0_range", b.theta0_range, false)?;
        if b.theta0_range.iter().any(|t| *t <= 0.0) {
            return Err(invalid("branch.theta0_range", "theta0 must be positive"));
        }
        if !(b.seed_z > 0.0) {
            return Err(invalid("branch.seed_z", "must be positive"));
        }
        if !(b.hopf_epsilon > 0.0) {
            return Err(invalid("branch.hopf_epsilon", "must be positive"));
        }
        if !(self.cycles.fallback_half_width > 0.0) {
            return Err(invalid("cycles.fallback_half_width", "must be positive"));
        }
        for (i, r) in self.cycles.brackets.iter().enumerate() {
            check_interval(&format!("cycles.brackets[{i}]"), *r, false)?;
        }
        let l = &self.loci;
        check_interval("loci.gamma_range", l.gamma_range, true)?;
        if l.gamma_range[0] > l.gamma_range[1] {
            return Err(invalid("loci.gamma_range", "lower bound exceeds upper bound"));
        }
        if let Some(r) = l.hcl_gamma_range {
            check_interval("loci.hcl_gamma_range", r, true)?;
            if r[0] > r[1] {
                return Err(invalid("loci.hcl_gamma_range", "lower bound exceeds upper bound"));
            }
        }
        let s = &self.simulate;
        if !(s.tau_end > 0.0 && s.tau_end.is_finite()) {
            return Err(invalid("simulate.tau_end", "must be positive"));
        }
        if !(s.sample_step > 0.0) {
            return Err(invalid("simulate.sample_step", "must be positive"));
        }
        for (i, seed) in s.seeds.iter().enumerate() {
            if !(seed.eta > 0.0 && seed.eta <= 1.0) {
                return Err(invalid(&format!("simulate.seeds[{i}].eta"), "must lie in (0, 1]"));
            }
            if !(seed.z > 0.0 && seed.z.is_finite()) {
                return Err(invalid(&format!("simulate.seeds[{i}].z"), "must be positive"));
            }
        }
        Ok(())
    }

    /// The config as echoed into output headers. The output location is
    /// left out so a re-run elsewhere reproduces the files exactly.
    pub fn provenance(&self) -> String {
        let mut c = self.clone();
        c.out = RunConfig::default().out;
        serde_json::to_string(&c).expect("config serializes")
    }
}
