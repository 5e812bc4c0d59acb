use thiserror::Error;

/// A configuration value that violates a type invariant.
///
/// `field` is the dotted path as it appears in the JSON run config
/// (e.g. `sim.tick_divisor`), so messages can point straight at the key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure(cond: bool, field: &str, reason: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::new(field, reason))
    }
}

/// True when `value` is within `1e-9` (relative) of an integer multiple of `step`.
pub(crate) fn is_multiple_of(value: f64, step: f64) -> bool {
    let ratio = value / step;
    (ratio - ratio.round()).abs() <= 1e-9 * ratio.abs().max(1.0)
}
