//! Experiment configuration: strict JSON plus command-line overrides,
//! resolved into ready-to-run core objects.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use regula_core::{
    build_operator, default_rate, residual, theta_constant, BallSampler, DivergenceRate, Operator, OperatorSpec,
    PointSampler, RateSource, ScheduleSpec, StepSchedule, Vector,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RUN_HORIZON: u64 = 100;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_OUT_DIR: &str = "regula-out";
pub const SEED_ENV: &str = "REGULA_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: OperatorSpec,
    pub schedule: ScheduleSpec,
    /// Claimed strictness constant; replaces the one derived from the operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub theta: ThetaSpec,
    #[serde(default)]
    pub x0: X0Spec,
    #[serde(default)]
    pub b: BSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<EpsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    /// Number of steps for `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    /// Steps past `Φ` for `certify`; negative values are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_extra: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Sample count for sampled checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default)]
    pub record_points: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaName {
    /// Closed form for constant schedules, computed otherwise.
    Auto,
    ClosedForm,
    Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Named(ThetaName),
    Explicit(ExplicitTheta),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitTheta {
    pub coefficient: u64,
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Named(ThetaName::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum X0Rule {
    /// `(1, …, 1)`.
    Ones,
    /// First standard basis vector.
    Unit,
    /// Uniform in the unit ball, from the seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Literal(Vec<f64>),
    Rule(X0Rule),
}

impl Default for X0Spec {
    fn default() -> Self {
        X0Spec::Rule(X0Rule::Unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BSpec {
    Value(f64),
    Auto(AutoTag),
}

impl Default for BSpec {
    fn default() -> Self {
        BSpec::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    One(f64),
    Many(Vec<f64>),
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub eps: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub dim: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn parse(text: &str) -> anyhow::Result<ExperimentConfig> {
    Ok(serde_json::from_str(text)?)
}

/// Everything a subcommand needs, validated.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub operator: Operator,
    pub schedule: Arc<StepSchedule>,
    pub rate: DivergenceRate,
    pub x0: Vector,
    pub eps: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub samples: usize,
    pub horizon_extra: Option<u64>,
    pub out_dir: PathBuf,
    pub warnings: Vec<String>,
}

impl Resolved {
    /// The neighbourhood radius: explicit, or for `"auto"` the larger of
    /// the initial residual and the distance to the known fixed point.
    pub fn b(&self) -> anyhow::Result<f64> {
        let b = match self.config.b {
            BSpec::Value(b) => b,
            BSpec::Auto(_) => {
                let r0 = residual(&self.operator, &self.x0)?;
                match self.operator.known_fixed_point() {
                    Some(p) => r0.max(self.x0.dist(p)),
                    None => r0,
                }
            }
        };
        if !(b > 0.0 && b.is_finite()) {
            bail!("b resolves to {b}; give a positive b explicitly");
        }
        Ok(b)
    }

    pub fn rate_for(&self, schedule: &Arc<StepSchedule>) -> anyhow::Result<DivergenceRate> {
        resolve_rate(&self.config.theta, schedule)
    }
}

fn resolve_rate(spec: &ThetaSpec, schedule: &Arc<StepSchedule>) -> anyhow::Result<DivergenceRate> {
    Ok(match spec {
        ThetaSpec::Named(ThetaName::Auto) => default_rate(schedule)?,
        ThetaSpec::Named(ThetaName::ClosedForm) => match schedule.constant_lambda() {
            Some(l) => theta_constant(l, schedule.kappa())?,
            None => bail!("theta \"closed-form\" needs a constant schedule"),
        },
        ThetaSpec::Named(ThetaName::Computed) => DivergenceRate::computed(Arc::clone(schedule)),
        ThetaSpec::Explicit(e) => DivergenceRate::linear(e.coefficient, RateSource::Explicit),
    })
}

fn positive_finite(name: &str, v: f64) -> anyhow::Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be positive and finite, got {v}");
    }
    Ok(())
}

pub fn resolve(mut config: ExperimentConfig, ov: &Overrides) -> anyhow::Result<Resolved> {
    if let Some(d) = ov.dim {
        config.operator = config.operator.with_dim(d)?;
    }
    if let Some(k) = ov.kappa {
        config.kappa = Some(k);
    }
    if let Some(eps) = &ov.eps {
        config.eps = Some(EpsSpec::Many(eps.clone()));
    }
    match ov.lambda.as_deref() {
        Some([l]) => config.schedule = ScheduleSpec::Constant { lambda: *l },
        Some(grid) if !grid.is_empty() => config.lambda_grid = Some(grid.to_vec()),
        _ => {}
    }
    if let Some(s) = ov.seed {
        config.seed = Some(s);
    }

    let mut operator = build_operator(&config.operator)?;
    if let Some(k) = config.kappa {
        operator = operator.with_claimed_kappa(k)?;
    }
    let schedule = Arc::new(StepSchedule::new(config.schedule.clone(), operator.kappa())?);
    let rate = resolve_rate(&config.theta, &schedule)?;

    let seed = match config.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an integer"))?,
            Err(_) => 0,
        },
    };
    let dim = operator.dim();
    let x0 = match &config.x0 {
        X0Spec::Literal(v) => Vector::new(v.clone())?,
        X0Spec::Rule(X0Rule::Ones) => Vector::new(vec![1.0; dim])?,
        X0Spec::Rule(X0Rule::Unit) => Vector::unit(dim, 0),
        X0Spec::Rule(X0Rule::Random) => BallSampler::new(Vector::zeros(dim), 1.0, seed).points(1).remove(0),
    };
    if x0.dim() != dim {
        bail!("x0 has dimension {} but the operator has dimension {dim}", x0.dim());
    }
    if !operator.domain().contains(&x0) {
        bail!("x0 lies outside the operator's domain");
    }

    let eps = match &config.eps {
        None => vec![DEFAULT_EPS],
        Some(EpsSpec::One(e)) => vec![*e],
        Some(EpsSpec::Many(v)) => v.clone(),
    };
    if eps.is_empty() {
        bail!("eps list is empty");
    }
    for &e in &eps {
        positive_finite("eps", e)?;
    }
    if let BSpec::Value(b) = config.b {
        positive_finite("b", b)?;
    }
    let lambda_grid = match &config.lambda_grid {
        Some(g) if g.is_empty() => bail!("lambda_grid is empty"),
        Some(g) => g.clone(),
        None => match schedule.constant_lambda() {
            Some(l) => vec![l],
            None => Vec::new(),
        },
    };
    let samples = config.samples.unwrap_or(DEFAULT_SAMPLES);
    if samples == 0 {
        bail!("samples must be at least 1");
    }
    let horizon_extra = match config.horizon_extra {
        Some(h) if h < 0 => bail!("horizon_extra must be nonnegative, got {h}"),
        Some(h) => Some(h as u64),
        None => None,
    };
    let out_dir = ov
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    let mut warnings = Vec::new();
    if matches!(config.b, BSpec::Auto(_)) && operator.known_fixed_point().is_none() {
        warnings.push(
            "b=\"auto\" without a known fixed point uses the initial residual; \
             approximate fixed points within b are only probed"
                .to_string(),
        );
    }
    Ok(Resolved {
        config,
        operator,
        schedule,
        rate,
        x0,
        eps,
        lambda_grid,
        seed,
        samples,
        horizon_extra,
        out_dir,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"operator":{"kind":"scaling","a":-2.0,"dim":1},"schedule":{"kind":"constant","lambda":0.6666666666666666}}"#;

    #[test]
    fn defaults() {
        let r = resolve(parse(BASE).unwrap(), &Overrides { seed: Some(1), ..Default::default() }).unwrap();
        assert_eq!(r.x0.as_slice(), &[1.0]);
        assert_eq!(r.b().unwrap(), 3.0);
        assert_eq!(r.eps, vec![DEFAULT_EPS]);
        assert_eq!(r.lambda_grid, vec![0.6666666666666666]);
        assert_eq!(r.rate.coefficient(), Some(9));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("\"dim\":1", "\"dim\":1,\"lamda\":0.5");
        assert!(parse(&text).is_err());
        let text = BASE.replace('}', ",\"kapa\":0.2}");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn theta_and_b_forms() {
        let c: ExperimentConfig =
            parse(&BASE.replacen('{', r#"{"theta":{"coefficient":12},"b":2.5,"eps":[0.5,0.25],"#, 1)).unwrap();
        assert_eq!(c.theta, ThetaSpec::Explicit(ExplicitTheta { coefficient: 12 }));
        assert_eq!(c.b, BSpec::Value(2.5));
        assert_eq!(c.eps, Some(EpsSpec::Many(vec![0.5, 0.25])));
        let c = parse(&BASE.replacen('{', r#"{"theta":"computed","x0":"ones","#, 1)).unwrap();
        assert_eq!(c.theta, ThetaSpec::Named(ThetaName::Computed));
        assert!(parse(&BASE.replacen('{', r#"{"theta":"fast","#, 1)).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = |prefix: &str| {
            let c = parse(&BASE.replacen('{', prefix, 1)).unwrap();
            resolve(c, &Overrides::default()).is_err()
        };
        assert!(bad(r#"{"samples":0,"#));
        assert!(bad(r#"{"horizon_extra":-1,"#));
        assert!(bad(r#"{"eps":[],"#));
        assert!(bad(r#"{"x0":[1.0,2.0],"#));
        assert!(bad(r#"{"kappa":0.7,"#));
    }

    #[test]
    fn overrides_apply() {
        let ov = Overrides { lambda: Some(vec![0.5]), kappa: Some(0.2), dim: Some(3), ..Default::default() };
        let r = resolve(parse(BASE).unwrap(), &ov).unwrap();
        assert_eq!(r.operator.dim(), 3);
        assert_eq!(r.operator.kappa(), 0.2);
        assert_eq!(r.schedule.constant_lambda(), Some(0.5));
        let ov = Overrides { lambda: Some(vec![0.4, 0.5]), ..Default::default() };
        assert_eq!(resolve(parse(BASE).unwrap(), &ov).unwrap().lambda_grid, vec![0.4, 0.5]);
    }
}
