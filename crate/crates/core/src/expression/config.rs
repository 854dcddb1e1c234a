use serde::{Deserialize, Serialize};

use super::Primitive;
use crate::error::ConfigError;

/// Relative weights of the three mutation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationWeights {
    pub subtree: f64,
    pub point: f64,
    pub constant: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        MutationWeights {
            subtree: 0.5,
            point: 0.25,
            constant: 0.25,
        }
    }
}

/// Primitives, terminals and size limits for tree generation and variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExprConfig {
    pub variables: Vec<String>,
    pub functions: Vec<Primitive>,
    /// Range of ephemeral random constants, `lo < hi`.
    pub constant_range: (f64, f64),
    /// Inclusive depth range for freshly generated trees.
    pub init_depth: (usize, usize),
    /// Hard cap enforced by every variation operator.
    pub max_depth: usize,
    /// Chance that a generated terminal is a constant rather than a variable.
    pub constant_probability: f64,
    pub mutation: MutationWeights,
}

impl Default for ExprConfig {
    fn default() -> Self {
        ExprConfig {
            variables: vec!["H".to_string()],
            functions: Primitive::ALL.to_vec(),
            constant_range: (-2.0, 2.0),
            init_depth: (2, 4),
            max_depth: 10,
            constant_probability: 0.5,
            mutation: MutationWeights::default(),
        }
    }
}

impl ExprConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (lo, hi) = self.constant_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ConfigError::invalid(
                "constant_range",
                format!("need finite lo < hi, got [{lo}, {hi}]"),
            ));
        }
        let (dmin, dmax) = self.init_depth;
        if !(1 <= dmin && dmin <= dmax && dmax <= self.max_depth) {
            return Err(ConfigError::invalid(
                "init_depth",
                format!(
                    "need 1 <= min <= max <= max_depth, got [{dmin}, {dmax}] with cap {}",
                    self.max_depth
                ),
            ));
        }
        if self.functions.is_empty() {
            return Err(ConfigError::invalid("functions", "function set is empty"));
        }
        if self.variables.is_empty() && self.constant_probability <= 0.0 {
            return Err(ConfigError::invalid(
                "variables",
                "no variables and constant_probability = 0 leaves no terminals",
            ));
        }
        if !(0.0..=1.0).contains(&self.constant_probability) {
            return Err(ConfigError::invalid("constant_probability", "must lie in [0, 1]"));
        }
        let w = self.mutation;
        if [w.subtree, w.point, w.constant]
            .iter()
            .any(|x| *x < 0.0 || !x.is_finite())
            || w.subtree + w.point + w.constant <= 0.0
        {
            return Err(ConfigError::invalid(
                "mutation",
                "weights must be non-negative with a positive sum",
            ));
        }
        Ok(())
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.variables.iter().map(String::as_str).collect()
    }

    pub(crate) fn unary_ops(&self) -> Vec<super::UnaryOp> {
        use super::UnaryOp;
        self.functions
            .iter()
            .filter_map(|p| match p {
                Primitive::Neg => Some(UnaryOp::Neg),
                Primitive::Exp => Some(UnaryOp::Exp),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn binary_ops(&self) -> Vec<super::BinaryOp> {
        use super::BinaryOp;
        self.functions
            .iter()
            .filter_map(|p| match p {
                Primitive::Add => Some(BinaryOp::Add),
                Primitive::Sub => Some(BinaryOp::Sub),
                Primitive::Mul => Some(BinaryOp::Mul),
                Primitive::Div => Some(BinaryOp::Div),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ExprConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut c = ExprConfig::default();
        c.constant_range = (1.0, 1.0);
        assert!(c.validate().is_err());

        let mut c = ExprConfig::default();
        c.init_depth = (3, 2);
        assert!(c.validate().is_err());

        let mut c = ExprConfig::default();
        c.init_depth = (2, 12);
        assert!(c.validate().is_err());

        let mut c = ExprConfig::default();
        c.functions.clear();
        assert!(c.validate().is_err());
    }
}
