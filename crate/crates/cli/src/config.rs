//! JSON composition configs.
//!
//! ```json
//! {
//!   "mechanisms": [
//!     {"kind": "subsampled_gaussian", "sigma": 0.8, "sampling_prob": "1e-3", "count": 2000}
//!   ],
//!   "query": {"delta_target": "1e-7"},
//!   "eps_error": 0.1
//! }
//! ```
//!
//! Every real may be given as a JSON number or as a decimal string.

use std::path::Path;

use prv_core::{
    approx_dp_prv, gaussian_prv, invert_direction, laplace_prv, subsample_prv, MechanismPrv, SubsampleParams,
    DELTA_FLOOR,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A real number written either as a JSON number or a string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Real(pub f64);

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Text(s) => s
                .trim()
                .parse::<f64>()
                .map(Real)
                .map_err(|_| serde::de::Error::custom(format!("`{s}` is not a decimal number"))),
        }
    }
}

fn one() -> Real {
    Real(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    Gaussian {
        sigma: Real,
        #[serde(default = "one")]
        sensitivity: Real,
    },
    Laplace {
        scale: Real,
        #[serde(default = "one")]
        sensitivity: Real,
    },
    ApproxDp {
        eps: Real,
        delta: Real,
    },
    SubsampledGaussian {
        sigma: Real,
        sampling_prob: Real,
        #[serde(default = "one")]
        sensitivity: Real,
    },
}

impl Mechanism {
    pub fn kind(&self) -> &'static str {
        match self {
            Mechanism::Gaussian { .. } => "gaussian",
            Mechanism::Laplace { .. } => "laplace",
            Mechanism::ApproxDp { .. } => "approx_dp",
            Mechanism::SubsampledGaussian { .. } => "subsampled_gaussian",
        }
    }

    pub fn build(&self) -> CliResult<MechanismPrv> {
        let prv = match *self {
            Mechanism::Gaussian { sigma, sensitivity } => gaussian_prv(sigma.0, sensitivity.0)?,
            Mechanism::Laplace { scale, sensitivity } => {
                if !(scale.0 > 0.0) {
                    return Err(CliError::Validation(format!(
                        "laplace scale must be positive, got {}",
                        scale.0
                    )));
                }
                laplace_prv(sensitivity.0 / scale.0)?
            }
            Mechanism::ApproxDp { eps, delta } => approx_dp_prv(eps.0, delta.0)?,
            Mechanism::SubsampledGaussian {
                sigma,
                sampling_prob,
                sensitivity,
            } => subsample_prv(
                &gaussian_prv(sigma.0, sensitivity.0)?,
                SubsampleParams::new(sampling_prob.0)?,
            )?,
        };
        Ok(prv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismEntry {
    #[serde(flatten)]
    pub mechanism: Mechanism,
    pub count: u64,
    #[serde(default)]
    pub inverted_direction: bool,
}

impl MechanismEntry {
    pub fn build(&self) -> CliResult<MechanismPrv> {
        let prv = self.mechanism.build()?;
        Ok(if self.inverted_direction {
            invert_direction(&prv)
        } else {
            prv
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveQuery {
    pub eps_min: Real,
    pub eps_max: Real,
    pub num_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    DeltaTarget(Real),
    EpsTarget(Real),
    Curve(CurveQuery),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeConfig {
    pub mechanisms: Vec<MechanismEntry>,
    pub query: Query,
    pub eps_error: Real,
    #[serde(default)]
    pub delta_error: Option<Real>,
    #[serde(default)]
    pub eps_upper_override: Option<Real>,
}

impl ComposeConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: ComposeConfig =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// δ_error as given, or the default for the query: `δ_target / 1000`
    /// floored at the supported minimum, and the minimum itself otherwise.
    pub fn effective_delta_error(&self) -> f64 {
        match (self.delta_error, self.query) {
            (Some(d), _) => d.0,
            (None, Query::DeltaTarget(t)) => (t.0 / 1000.0).max(DELTA_FLOOR),
            (None, _) => DELTA_FLOOR,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.mechanisms.is_empty() {
            return Err(CliError::Validation("config lists no mechanisms".into()));
        }
        if self.mechanisms.iter().any(|m| m.count == 0) {
            return Err(CliError::Validation("every mechanism count must be at least 1".into()));
        }
        if !(self.eps_error.0 > 0.0) || !self.eps_error.0.is_finite() {
            return Err(CliError::Validation(format!(
                "eps_error must be positive, got {}",
                self.eps_error.0
            )));
        }
        match self.query {
            Query::DeltaTarget(t) => check_delta("delta_target", t.0)?,
            Query::EpsTarget(e) => {
                if !(e.0 >= 0.0) || !e.0.is_finite() {
                    return Err(CliError::Validation(format!(
                        "eps_target must be nonnegative, got {}",
                        e.0
                    )));
                }
            }
            Query::Curve(c) => {
                if !(c.eps_min.0 >= 0.0) || !(c.eps_max.0 >= c.eps_min.0) || !c.eps_max.0.is_finite() {
                    return Err(CliError::Validation(format!(
                        "curve needs 0 <= eps_min <= eps_max, got [{}, {}]",
                        c.eps_min.0, c.eps_max.0
                    )));
                }
                if c.num_points == 0 {
                    return Err(CliError::Validation("curve needs at least one point".into()));
                }
            }
        }
        if let Some(d) = self.delta_error {
            check_delta("delta_error", d.0)?;
        }
        if let Some(e) = self.eps_upper_override {
            if !(e.0 >= 0.0) || !e.0.is_finite() {
                return Err(CliError::Validation(format!(
                    "eps_upper_override must be nonnegative, got {}",
                    e.0
                )));
            }
        }
        Ok(())
    }
}

/// Probabilities must lie in `[DELTA_FLOOR, 1)`; values below the floor get
/// their own error class.
pub fn check_delta(name: &str, v: f64) -> CliResult<()> {
    if !(v < 1.0) || !(v > 0.0) {
        return Err(CliError::Validation(format!("{name} must lie in (0, 1), got {v}")));
    }
    if v < DELTA_FLOOR {
        return Err(CliError::Precision(format!(
            "{name} = {v:e} is below the supported floor {DELTA_FLOOR:e}"
        )));
    }
    Ok(())
}
