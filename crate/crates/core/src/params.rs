use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether rates are given as radian frequencies or as cycle frequencies.
///
/// Cyclic rates are multiplied by 2π before entering any phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyConvention {
    #[default]
    Angular,
    Cyclic,
}

impl FrequencyConvention {
    pub fn to_radians(self, rate: f64) -> f64 {
        match self {
            FrequencyConvention::Angular => rate,
            FrequencyConvention::Cyclic => TAU * rate,
        }
    }
}

impl fmt::Display for FrequencyConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrequencyConvention::Angular => "angular",
            FrequencyConvention::Cyclic => "cyclic",
        })
    }
}

impl std::str::FromStr for FrequencyConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angular" => Ok(FrequencyConvention::Angular),
            "cyclic" => Ok(FrequencyConvention::Cyclic),
            other => Err(Error::InvalidParameter(format!(
                "unknown frequency convention `{other}` (expected angular|cyclic)"
            ))),
        }
    }
}

/// Coupling constants of the `e <-> f` and `f <-> g` transitions and the
/// common one-photon detuning.
///
/// All three rates share one unit system. With times in μs, rates are read
/// as MHz; [`FrequencyConvention`] states whether that means rad/μs or
/// cycles/μs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    g1: f64,
    g2: f64,
    delta: f64,
    convention: FrequencyConvention,
}

impl PhysicalParams {
    pub fn new(g1: f64, g2: f64, delta: f64, convention: FrequencyConvention) -> Result<Self> {
        if !(g1.is_finite() && g1 >= 0.0) {
            return Err(Error::InvalidParameter(format!("g1 must be finite and >= 0, got {g1}")));
        }
        if !(g2.is_finite() && g2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("g2 must be finite and >= 0, got {g2}")));
        }
        if !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be finite, got {delta}")));
        }
        Ok(PhysicalParams { g1, g2, delta, convention })
    }

    /// Angular rates in natural units (rad per unit time).
    pub fn angular(g1: f64, g2: f64, delta: f64) -> Result<Self> {
        Self::new(g1, g2, delta, FrequencyConvention::Angular)
    }

    /// The `nominal` preset: g1 = g2 = 17.5 MHz, δ = 30 g.
    pub fn nominal(convention: FrequencyConvention) -> Self {
        const G: f64 = 17.5;
        PhysicalParams { g1: G, g2: G, delta: 30.0 * G, convention }
    }

    pub fn convention(&self) -> FrequencyConvention {
        self.convention
    }

    /// Raw `g1` in the user's unit convention.
    pub fn g1_raw(&self) -> f64 {
        self.g1
    }

    pub fn g2_raw(&self) -> f64 {
        self.g2
    }

    pub fn delta_raw(&self) -> f64 {
        self.delta
    }

    /// `g1` as a radian frequency.
    pub fn g1(&self) -> f64 {
        self.convention.to_radians(self.g1)
    }

    /// `g2` as a radian frequency.
    pub fn g2(&self) -> f64 {
        self.convention.to_radians(self.g2)
    }

    /// Detuning as a radian frequency.
    pub fn delta(&self) -> f64 {
        self.convention.to_radians(self.delta)
    }

    pub fn with_convention(self, convention: FrequencyConvention) -> Self {
        PhysicalParams { convention, ..self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_couplings() {
        assert!(PhysicalParams::angular(-1.0, 1.0, 0.0).is_err());
        assert!(PhysicalParams::angular(1.0, -1.0, 0.0).is_err());
        assert!(PhysicalParams::angular(1.0, 1.0, f64::NAN).is_err());
        assert!(PhysicalParams::angular(0.0, 0.0, -4.0).is_ok());
    }

    #[test]
    fn cyclic_rates_scale_by_two_pi() {
        let p = PhysicalParams::new(1.0, 2.0, -3.0, FrequencyConvention::Cyclic).unwrap();
        assert_eq!(p.g1(), TAU);
        assert_eq!(p.g2(), 2.0 * TAU);
        assert_eq!(p.delta(), -3.0 * TAU);
        assert_eq!(p.g1_raw(), 1.0);
    }

    #[test]
    fn nominal_preset() {
        let p = PhysicalParams::nominal(FrequencyConvention::Angular);
        assert_eq!(p.g1(), 17.5);
        assert_eq!(p.g2(), 17.5);
        assert_eq!(p.delta(), 525.0);
    }

    #[test]
    fn convention_parses() {
        assert_eq!("cyclic".parse::<FrequencyConvention>().unwrap(), FrequencyConvention::Cyclic);
        assert!("degrees".parse::<FrequencyConvention>().is_err());
    }
}
