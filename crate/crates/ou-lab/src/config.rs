//! Experiment configuration: TOML-backed description of a model plus
//! per-command parameter sections, validated before any computation starts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::kernel::TestFunction;
use crate::model::OUModel;
use crate::sim::{PathSpec, Start};

fn cfg_err(msg: impl Into<String>) -> OuError {
    OuError::ConfigParse(msg.into())
}

/// One experiment: a model and the parameters of whichever command runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Default seed; the --seed flag overrides it.
    pub seed: Option<u64>,
    pub kernel: Option<KernelParams>,
    pub semigroup: Option<SemigroupParams>,
    pub polar: Option<PolarParams>,
    pub tube: Option<TubeParams>,
    pub bounds: Option<BoundsParams>,
    pub weaktype: Option<ScanParams>,
    pub refine_large_t: Option<ScanParams>,
    pub sharpness: Option<SharpnessParams>,
    pub zones: Option<ZonesParams>,
    pub simulate: Option<SimulateParams>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Row-major matrices Q (covariance) and B (drift).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub q: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

fn parse_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(cfg_err(format!("{name} must be a nonempty square matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

fn parse_vector(v: &[f64], n: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(cfg_err(format!(
            "{name} has {} entries, model dimension is {n}",
            v.len()
        )));
    }
    Ok(DVector::from_row_slice(v))
}

impl ModelConfig {
    pub fn build(&self) -> Result<OUModel> {
        let q = parse_matrix(&self.q, "model.q")?;
        let b = parse_matrix(&self.b, "model.b")?;
        if q.nrows() != b.nrows() {
            return Err(cfg_err("model.q and model.b have different dimensions"));
        }
        OUModel::build(q, b)
    }
}

/// A test function described in the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    GaussianBump { center: Vec<f64>, width: f64 },
    IndicatorBall { center: Vec<f64>, radius: f64 },
    Polynomial { direction: Vec<f64>, coeffs: Vec<f64> },
    DiracApprox { center: Vec<f64>, width: f64 },
    ConstantOne,
}

impl FunctionSpec {
    pub fn build(&self, n: usize) -> Result<TestFunction> {
        match self {
            FunctionSpec::GaussianBump { center, width } => {
                if !(*width > 0.0) {
                    return Err(cfg_err("gaussian_bump width must be positive"));
                }
                Ok(TestFunction::gaussian_bump(
                    parse_vector(center, n, "center")?,
                    *width,
                ))
            }
            FunctionSpec::IndicatorBall { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(cfg_err("indicator_ball radius must be positive"));
                }
                Ok(TestFunction::indicator_ball(
                    parse_vector(center, n, "center")?,
                    *radius,
                ))
            }
            FunctionSpec::Polynomial { direction, coeffs } => {
                if coeffs.is_empty() || coeffs.len() > 5 {
                    return Err(cfg_err("polynomial needs 1 to 5 coefficients"));
                }
                Ok(TestFunction::polynomial(
                    parse_vector(direction, n, "direction")?,
                    coeffs.clone(),
                ))
            }
            FunctionSpec::DiracApprox { center, width } => {
                if !(*width > 0.0) {
                    return Err(cfg_err("dirac_approx width must be positive"));
                }
                Ok(TestFunction::dirac_approx(
                    parse_vector(center, n, "center")?,
                    *width,
                ))
            }
            FunctionSpec::ConstantOne => Ok(TestFunction::constant_one(n)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            FunctionSpec::GaussianBump { width, .. } => format!("bump(w={width})"),
            FunctionSpec::IndicatorBall { radius, .. } => format!("ball(r={radius})"),
            FunctionSpec::Polynomial { coeffs, .. } => format!("poly(deg={})", coeffs.len() - 1),
            FunctionSpec::DiracApprox { width, .. } => format!("dirac(w={width})"),
            FunctionSpec::ConstantOne => "one".into(),
        }
    }
}

/// Kernel table: K_t(x, u) for every t and every paired (x, u) row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl KernelParams {
    pub fn validate(&self, n: usize) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
        if self.t.is_empty() || self.t.iter().any(|&t| !(t > 0.0)) {
            return Err(cfg_err("kernel.t must be a nonempty list of positive times"));
        }
        if self.x.len() != self.u.len() || self.x.is_empty() {
            return Err(cfg_err("kernel.x and kernel.u must pair up nonempty"));
        }
        self.x
            .iter()
            .zip(&self.u)
            .map(|(x, u)| Ok((parse_vector(x, n, "kernel.x")?, parse_vector(u, n, "kernel.u")?)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupParams {
    pub f: FunctionSpec,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// "kolmogorov" | "kernel-gamma" | "monte-carlo"
    #[serde(default = "default_route")]
    pub route: String,
    #[serde(default = "default_mc_count")]
    pub mc_count: usize,
}

fn default_route() -> String {
    "kolmogorov".into()
}

fn default_mc_count() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarParams {
    pub beta: f64,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeParams {
    pub beta: f64,
    /// Direction whose polar projection onto E_beta centers the tube.
    pub direction: Vec<f64>,
    pub aperture: f64,
    #[serde(default = "default_mc_count")]
    pub mc_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundsParams {
    /// Samples per claim; the acceptance scale is 10^4.
    pub samples: Option<usize>,
    /// Level for the global small-t claims.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    pub functions: Vec<FunctionSpec>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_mc_count")]
    pub mc_count: usize,
    /// "full" | "local" | "global" (weaktype command only)
    #[serde(default = "default_variant")]
    pub variant: String,
}

fn default_variant() -> String {
    "full".into()
}

impl ScanParams {
    pub fn validate(&self, n: usize) -> Result<Vec<(String, TestFunction)>> {
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 1.0)) {
            return Err(cfg_err("alphas must be a nonempty list of values > 1"));
        }
        if self.functions.is_empty() {
            return Err(cfg_err("functions must be nonempty"));
        }
        self.functions
            .iter()
            .map(|s| Ok((s.label(), s.build(n)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessParams {
    pub t: f64,
    pub alphas: Vec<f64>,
    #[serde(default = "default_mc_count")]
    pub mc_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSpec {
    pub location: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonesParams {
    pub masses: Vec<MassSpec>,
    pub alpha: f64,
    #[serde(default)]
    pub shells: Vec<u32>,
    #[serde(default = "default_aperture_const")]
    pub aperture_const: f64,
}

fn default_aperture_const() -> f64 {
    8.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    /// Start point; empty list means a stationary start from gamma_inf.
    #[serde(default)]
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub path_count: usize,
}

impl SimulateParams {
    pub fn to_path_spec(&self, n: usize, seed: u64) -> Result<PathSpec> {
        let start = if self.x0.is_empty() {
            Start::Invariant
        } else {
            Start::Point(parse_vector(&self.x0, n, "simulate.x0")?)
        };
        let spec = PathSpec {
            start,
            horizon: self.horizon,
            step: self.step,
            path_count: self.path_count,
            seed,
        };
        spec.step_count()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JORDAN: &str = r#"
        [model]
        q = [[1.0, 0.0], [0.0, 1.0]]
        b = [[-1.0, 1.0], [0.0, -1.0]]
    "#;

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = ExperimentConfig::from_toml(JORDAN).unwrap();
        let model = cfg.model.build().unwrap();
        assert_eq!(model.n, 2);
        assert!(cfg.seed.is_none() && cfg.kernel.is_none());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let text = format!(
            "seed = 42
            {JORDAN}
            [semigroup]
            t = [0.5]
            x = [[0.0, 0.0]]
            [semigroup.f]
            kind = \"gaussian_bump\"
            center = [0.3, -0.1]
            width = 0.8
            "
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let echoed = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(echoed.seed, Some(42));
        let sg = echoed.semigroup.unwrap();
        assert_eq!(sg.route, "kolmogorov");
        assert!(sg.f.build(2).is_ok());
    }

    #[test]
    fn bad_shapes_are_config_errors() {
        let ragged = "[model]\nq = [[1.0, 0.0], [0.0]]\nb = [[-1.0]]";
        let cfg = ExperimentConfig::from_toml(ragged).unwrap();
        assert!(matches!(cfg.model.build(), Err(OuError::ConfigParse(_))));

        let cfg = ExperimentConfig::from_toml(JORDAN).unwrap();
        let f = FunctionSpec::GaussianBump {
            center: vec![0.0],
            width: 1.0,
        };
        assert!(matches!(
            f.build(cfg.model.q.len()),
            Err(OuError::ConfigParse(_))
        ));
        let f = FunctionSpec::DiracApprox {
            center: vec![0.0, 0.0],
            width: -1.0,
        };
        assert!(matches!(f.build(2), Err(OuError::ConfigParse(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{JORDAN}\nnot_a_key = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn simulate_params_validate_through_path_spec() {
        let p = SimulateParams {
            x0: vec![1.0, 0.0],
            horizon: 1.0,
            step: 0.3,
            path_count: 10,
        };
        assert!(matches!(p.to_path_spec(2, 1), Err(OuError::ConfigParse(_))));
        let ok = SimulateParams {
            x0: vec![],
            horizon: 1.0,
            step: 0.5,
            path_count: 10,
        };
        assert!(matches!(
            ok.to_path_spec(2, 1).unwrap().start,
            Start::Invariant
        ));
    }
}
