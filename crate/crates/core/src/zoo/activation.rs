use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Pointwise;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sine,
    Identity,
}

/// One-dimensional multipliers `a` with `σ(a·z) = a·σ(z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// `a > 0` (ReLU).
    Positive,
    /// `a ∈ {−1, 1}` (odd activations).
    Sign,
    /// Only `a = 1`.
    Trivial,
}

impl GroupKind {
    pub fn contains(self, a: f64) -> bool {
        match self {
            GroupKind::Positive => a > 0.0 && a.is_finite(),
            GroupKind::Sign => a == 1.0 || a == -1.0,
            GroupKind::Trivial => a == 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Positive => "positive",
            GroupKind::Sign => "sign",
            GroupKind::Trivial => "trivial",
        }
    }
}

/// How vectors acted on by a group are mapped to an invariant representative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CanonMode {
    NormDivide,
    SignSymmetrize,
    SignAbs,
    Identity,
}

impl CanonMode {
    /// Default mode for a group.
    pub fn for_group(g: GroupKind) -> Self {
        match g {
            GroupKind::Positive => CanonMode::NormDivide,
            GroupKind::Sign => CanonMode::SignSymmetrize,
            GroupKind::Trivial => CanonMode::Identity,
        }
    }
}

/// A pointwise activation together with its scaling group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationDescriptor {
    pub kind: ActivationKind,
    /// Frequency for sine; 1 otherwise.
    pub omega0: f64,
}

impl ActivationDescriptor {
    pub fn relu() -> Self {
        Self {
            kind: ActivationKind::Relu,
            omega0: 1.0,
        }
    }

    pub fn tanh() -> Self {
        Self {
            kind: ActivationKind::Tanh,
            omega0: 1.0,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: ActivationKind::Identity,
            omega0: 1.0,
        }
    }

    /// `sin(omega0 · z)`. Multiples of π are rejected: there the sign
    /// symmetry is joined by extra ones.
    pub fn sine(omega0: f64) -> Result<Self> {
        let d = Self {
            kind: ActivationKind::Sine,
            omega0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ActivationKind::Sine {
            let k = self.omega0 / PI;
            if !self.omega0.is_finite() || (k - k.round()).abs() < 1e-9 {
                return Err(Error::InvalidNetwork(format!(
                    "sine frequency {} is a multiple of pi",
                    self.omega0
                )));
            }
        }
        Ok(())
    }

    pub fn from_name(name: &str, omega0: f64) -> Result<Self> {
        match name {
            "relu" => Ok(Self::relu()),
            "tanh" => Ok(Self::tanh()),
            "identity" | "linear" => Ok(Self::identity()),
            "sine" | "sin" => Self::sine(omega0),
            other => Err(Error::InvalidNetwork(format!("unknown activation {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sine => "sine",
            ActivationKind::Identity => "identity",
        }
    }

    pub fn group(&self) -> GroupKind {
        match self.kind {
            ActivationKind::Relu => GroupKind::Positive,
            ActivationKind::Tanh | ActivationKind::Sine => GroupKind::Sign,
            ActivationKind::Identity => GroupKind::Trivial,
        }
    }

    /// Induced map on the output side; the identity for every supported group.
    pub fn phi1(&self, a: f64) -> f64 {
        a
    }

    pub fn pointwise(&self) -> Pointwise {
        match self.kind {
            ActivationKind::Relu => Pointwise::Relu,
            ActivationKind::Tanh => Pointwise::Tanh,
            ActivationKind::Sine => Pointwise::Sine(self.omega0),
            ActivationKind::Identity => Pointwise::Identity,
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.pointwise().eval(z)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.pointwise().derivative(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_frequency_must_avoid_multiples_of_pi() {
        assert!(ActivationDescriptor::sine(PI).is_err());
        assert!(ActivationDescriptor::sine(-2.0 * PI).is_err());
        assert!(ActivationDescriptor::sine(0.0).is_err());
        assert!(ActivationDescriptor::sine(30.0).is_ok());
    }

    #[test]
    fn group_equation_holds() {
        for act in [
            ActivationDescriptor::relu(),
            ActivationDescriptor::tanh(),
            ActivationDescriptor::sine(3.0).unwrap(),
        ] {
            let qs: &[f64] = match act.group() {
                GroupKind::Positive => &[0.1, 2.0, 7.5],
                _ => &[-1.0, 1.0],
            };
            for &q in qs {
                assert!(act.group().contains(q));
                for z in [-1.3, -0.2, 0.0, 0.4, 2.2] {
                    let lhs = act.eval(q * z);
                    let rhs = act.phi1(q) * act.eval(z);
                    assert!((lhs - rhs).abs() < 1e-14, "{act:?} q={q} z={z}");
                }
            }
        }
        assert!(!GroupKind::Positive.contains(0.0));
        assert!(!GroupKind::Sign.contains(2.0));
    }
}
