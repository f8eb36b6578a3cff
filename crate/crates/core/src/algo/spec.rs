use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vdn,
    Qmix,
    Qtran,
    Qtranpp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Vdn => "vdn",
            Family::Qmix => "qmix",
            Family::Qtran => "qtran",
            Family::Qtranpp => "qtranpp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vdn" => Ok(Family::Vdn),
            "qmix" => Ok(Family::Qmix),
            "qtran" => Ok(Family::Qtran),
            "qtranpp" | "qtran++" => Ok(Family::Qtranpp),
            other => Err(Error::InvalidSpec(format!(
                "unknown algorithm `{other}` (expected vdn, qmix, qtran, qtranpp)"
            ))),
        }
    }

    /// Whether the family trains a transformed estimator with opt/nopt losses.
    pub fn has_transformed(self) -> bool {
        matches!(self, Family::Qtran | Family::Qtranpp)
    }
}

/// QTRAN++ ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    None,
    /// Single-head monotonic mixer in place of the multi-head estimator.
    Mix,
    /// Feed-forward true estimator in place of the semi-monotonic mixer.
    Fc,
    /// The original QTRAN opt/nopt losses on the QTRAN++ architecture.
    Lb,
    /// True estimator frozen inside the opt/nopt losses.
    Fix,
}

/// How the opt/nopt losses use the transformed-estimator heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Average over every head for every sample.
    All,
    /// One uniformly drawn head per sample.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSpec {
    pub family: Family,
    pub ablation: Ablation,
    pub lambda_opt: f64,
    pub lambda_nopt: f64,
    pub gamma: f64,
    /// Hard target sync every this many train steps.
    pub target_update_period: usize,
    pub head_mode: HeadMode,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        Self {
            family: Family::Qtranpp,
            ablation: Ablation::None,
            lambda_opt: 2.0,
            lambda_nopt: 1.0,
            gamma: 0.99,
            target_update_period: 200,
            head_mode: HeadMode::All,
        }
    }
}

impl AlgorithmSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ablation != Ablation::None && self.family != Family::Qtranpp {
            return Err(Error::InvalidSpec(format!(
                "ablation {:?} only applies to qtranpp, not {}",
                self.ablation,
                self.family.name()
            )));
        }
        if !(self.lambda_opt > 0.0 && self.lambda_nopt > 0.0) {
            return Err(Error::InvalidSpec(
                "lambda_opt and lambda_nopt must be > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidSpec(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if self.target_update_period == 0 {
            return Err(Error::InvalidSpec("target_update_period must be >= 1".into()));
        }
        Ok(())
    }

    /// Short label such as `qtranpp`, `fix-qtranpp`.
    pub fn label(&self) -> String {
        match self.ablation {
            Ablation::None => self.family.name().to_string(),
            a => format!("{}-{}", format!("{a:?}").to_lowercase(), self.family.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        AlgorithmSpec::default().validate().unwrap();
        assert_eq!(AlgorithmSpec::default().lambda_opt, 2.0);
        assert_eq!(AlgorithmSpec::default().lambda_nopt, 1.0);
    }

    #[test]
    fn ablation_on_vdn_is_inconsistent() {
        let spec = AlgorithmSpec::new(Family::Vdn).with_ablation(Ablation::Fix);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn bad_gamma_and_lambdas() {
        let mut s = AlgorithmSpec::default();
        s.gamma = 1.0;
        assert!(s.validate().is_err());
        let mut s = AlgorithmSpec::default();
        s.lambda_nopt = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(
            AlgorithmSpec::default().with_ablation(Ablation::Lb).label(),
            "lb-qtranpp"
        );
        assert_eq!(Family::parse("QTRAN++").unwrap(), Family::Qtranpp);
    }
}
