//! Named pass/fail checks attached to run reports.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `value < bound`
    Below,
    /// `value <= bound`
    AtMost,
    /// `value >= bound`
    AtLeast,
    /// `|value - target| <= bound`
    Within,
    /// `value == bound`
    Equals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<f64>,
}

impl Check {
    pub fn below(name: &str, value: f64, bound: f64) -> Self {
        Self::make(name, value, Relation::Below, bound, None, value < bound)
    }

    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self::make(name, value, Relation::AtMost, bound, None, value <= bound)
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self::make(name, value, Relation::AtLeast, bound, None, value >= bound)
    }

    pub fn within(name: &str, value: f64, target: f64, tolerance: f64) -> Self {
        let ok = (value - target).abs() <= tolerance;
        Self::make(name, value, Relation::Within, tolerance, Some(target), ok)
    }

    pub fn equals(name: &str, value: f64, expected: f64) -> Self {
        Self::make(name, value, Relation::Equals, expected, None, value == expected)
    }

    fn make(name: &str, value: f64, relation: Relation, bound: f64, target: Option<f64>, passed: bool) -> Self {
        Check {
            name: name.to_string(),
            passed: passed && value.is_finite(),
            value,
            relation,
            bound,
            target,
        }
    }

    pub fn summary(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match (self.relation, self.target) {
            (Relation::Within, Some(t)) => format!(
                "{verdict} {}: {:.6e} within {:.3e} of {:.6e}",
                self.name, self.value, self.bound, t
            ),
            (r, _) => {
                let op = match r {
                    Relation::Below => "<",
                    Relation::AtMost => "<=",
                    Relation::AtLeast => ">=",
                    Relation::Equals | Relation::Within => "==",
                };
                format!("{verdict} {}: {:.6e} {op} {:.6e}", self.name, self.value, self.bound)
            }
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}
