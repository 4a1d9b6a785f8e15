//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spacelike_core::estimates::BarrierParams;
use spacelike_core::solver::SubsolutionRoute;
use spacelike_core::{DomainSpec, Equation, Expr, ProblemSpec, SolverConfig};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub subsolution: SubsolutionRoute,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            subsolution: SubsolutionRoute::LorentzGauss,
        }
    }
}

/// Barrier parameters; `delta`, `t` and `N` fall back to the sweep and
/// η₀-based defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub theta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default, rename = "N")]
    pub n_coef: Option<f64>,
    /// Direction from the center towards the base point; defaults to `−e_n`.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    #[serde(default = "default_equation")]
    pub equation: Equation,
    pub psi: String,
    pub phi: String,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub h_list: Vec<f64>,
    /// Closed-form solution for convergence studies.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub phi_tilde: Option<String>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub barriers: Option<BarrierConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "yes")]
    pub cache: bool,
}

fn default_equation() -> Equation {
    Equation::KEta
}

fn yes() -> bool {
    true
}

fn parse_expr(what: &str, src: &str) -> Result<Expr, Failure> {
    Expr::parse(src).map_err(|e| Failure::config(format!("{what}: {e}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.domain.validate().map_err(Failure::from_core)?;
        self.solver.validate().map_err(Failure::from_core)?;
        self.problem()?;
        if let Some(h) = self.h {
            if !(h.is_finite() && h > 0.0) {
                return Err(Failure::config(format!("h must be positive, got {h}")));
            }
        }
        if self.h_list.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Failure::config("h_list entries must be positive"));
        }
        if self.h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Failure::config("h_list must be strictly decreasing"));
        }
        for (what, src) in [
            ("reference", &self.reference),
            ("phi_tilde", &self.phi_tilde),
        ] {
            if let Some(s) = src {
                parse_expr(what, s)?;
            }
        }
        Ok(())
    }

    pub fn psi(&self) -> Result<Expr, Failure> {
        parse_expr("psi", &self.psi)
    }

    pub fn phi(&self) -> Result<Expr, Failure> {
        parse_expr("phi", &self.phi)
    }

    pub fn problem(&self) -> Result<ProblemSpec, Failure> {
        ProblemSpec::new(self.domain.clone(), self.equation, self.psi()?, self.phi()?)
            .map_err(Failure::from_core)
    }

    pub fn grid_step(&self) -> Result<f64, Failure> {
        self.h
            .or_else(|| self.h_list.last().copied())
            .ok_or_else(|| Failure::config("config needs h (or h_list)"))
    }

    pub fn barrier_params(&self) -> Option<(f64, f64, Option<BarrierParams>)> {
        let b = self.barriers.as_ref()?;
        let full = match (b.delta, b.t, b.n_coef) {
            (Some(delta), Some(t), Some(n_coef)) => Some(BarrierParams {
                theta: b.theta,
                k: b.k,
                delta,
                t,
                n_coef,
            }),
            _ => None,
        };
        Some((b.theta, b.k, full))
    }

    /// Content hash of everything that determines solver outputs.
    pub fn cache_key(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut keyed = self.clone();
        keyed.output = None;
        keyed.cache = true;
        let value = serde_json::to_value(&keyed).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
        hasher.update(
            serde_json::to_string(&value)
                .expect("value serializes")
                .as_bytes(),
        );
        hex::encode(hasher.finalize())
    }
}
