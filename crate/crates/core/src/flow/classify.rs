use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FlowStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Periodic,
    Sporadic,
    Unclassified,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Periodic => "periodic",
            Pattern::Sporadic => "sporadic",
            Pattern::Unclassified => "unclassified",
        })
    }
}

/// Timing verdict of a flow. `lambda` (events per second) is set exactly
/// when the flow is sporadic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowClass {
    pattern: Pattern,
    lambda: Option<f64>,
}

impl FlowClass {
    pub fn periodic() -> Self {
        Self {
            pattern: Pattern::Periodic,
            lambda: None,
        }
    }

    pub fn sporadic(tau: f64) -> Self {
        Self {
            pattern: Pattern::Sporadic,
            lambda: Some(1.0 / tau),
        }
    }

    pub fn unclassified() -> Self {
        Self {
            pattern: Pattern::Unclassified,
            lambda: None,
        }
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub min_samples: u64,
    /// sigma below this fraction of tau is periodic.
    pub periodic_ratio: f64,
    /// sigma within [low, high] times tau is sporadic.
    pub sporadic_low: f64,
    pub sporadic_high: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            min_samples: 10,
            periodic_ratio: 0.2,
            sporadic_low: 0.5,
            sporadic_high: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("sporadic_low ({low}) must be below sporadic_high ({high})")]
    SporadicBand { low: f64, high: f64 },
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("periodic_ratio", self.periodic_ratio),
            ("sporadic_low", self.sporadic_low),
            ("sporadic_high", self.sporadic_high),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.sporadic_low >= self.sporadic_high {
            return Err(ConfigError::SporadicBand {
                low: self.sporadic_low,
                high: self.sporadic_high,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("flow has {count} packets, {required} required for classification")]
pub struct InsufficientData {
    pub count: u64,
    pub required: u64,
}

/// Classify a flow from the ratio of its inter-arrival deviation to its mean.
pub fn classify(stats: &FlowStats, cfg: &ClassifyConfig) -> Result<FlowClass, InsufficientData> {
    let required = cfg.min_samples.max(2);
    let (tau, sigma) = match (stats.tau(), stats.sigma()) {
        (Some(t), Some(s)) if stats.count >= required => (t, s),
        _ => {
            return Err(InsufficientData {
                count: stats.count,
                required,
            })
        }
    };
    Ok(classify_timing(tau, sigma, cfg))
}

/// Classification from (tau, sigma) alone.
pub fn classify_timing(tau: f64, sigma: f64, cfg: &ClassifyConfig) -> FlowClass {
    // All-zero gaps (pure bursts) have no usable rate.
    if tau.is_nan() || tau <= 0.0 {
        return FlowClass::unclassified();
    }
    if sigma < cfg.periodic_ratio * tau {
        FlowClass::periodic()
    } else if sigma >= cfg.sporadic_low * tau && sigma <= cfg.sporadic_high * tau {
        FlowClass::sporadic(tau)
    } else {
        FlowClass::unclassified()
    }
}
