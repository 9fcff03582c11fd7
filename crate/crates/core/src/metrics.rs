//! Target states, success probability and fidelity.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{project_atom, AtomLevel, JointState, Photons};
use crate::C64;

const NORM_TOL: f64 = 1e-12;

/// Which labels the keys of a [`TargetState`] carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetBasis {
    /// Keys are photon numbers per cavity.
    PhotonNumber,
    /// Keys are qubit labels 0/1 per party.
    Qubit,
}

/// Normalized pure state of the cavity fields (or of abstract qubits).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub label: String,
    pub basis: TargetBasis,
    pub amplitudes: BTreeMap<Photons, C64>,
}

impl TargetState {
    pub fn new(
        label: impl Into<String>,
        basis: TargetBasis,
        amplitudes: impl IntoIterator<Item = (Photons, C64)>,
    ) -> Result<Self> {
        let amplitudes: BTreeMap<_, _> = amplitudes.into_iter().collect();
        let width = amplitudes.keys().next().map(Vec::len).unwrap_or(0);
        if width == 0 || amplitudes.keys().any(|k| k.len() != width) {
            return Err(Error::InvalidParameter("target kets must share a nonzero width".into()));
        }
        let t = TargetState { label: label.into(), basis, amplitudes };
        let norm = t.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!("target `{}` has norm^2 {norm}", t.label)));
        }
        Ok(t)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Number of parties (cavities or qubits).
    pub fn width(&self) -> usize {
        self.amplitudes.keys().next().map(Vec::len).unwrap_or(0)
    }

    pub fn amplitude(&self, key: &[u32]) -> C64 {
        self.amplitudes.get(key).copied().unwrap_or_default()
    }

    /// `<self | field>` for unnormalized field amplitudes.
    pub fn overlap(&self, field: &BTreeMap<Photons, C64>) -> C64 {
        self.amplitudes
            .iter()
            .filter_map(|(k, t)| field.get(k).map(|a| t.conj() * a))
            .sum()
    }

    /// Map a qubit-basis target onto photon numbers, `|0> -> 0` and `|1> -> 2`
    /// photons. Photon-number targets are returned unchanged.
    pub fn to_two_photon_encoding(&self) -> TargetState {
        match self.basis {
            TargetBasis::PhotonNumber => self.clone(),
            TargetBasis::Qubit => TargetState {
                label: format!("{} (0/2 photon encoding)", self.label),
                basis: TargetBasis::PhotonNumber,
                amplitudes: self
                    .amplitudes
                    .iter()
                    .map(|(k, &a)| (k.iter().map(|&q| 2 * q).collect(), a))
                    .collect(),
            },
        }
    }

    fn check_field(&self, n_cavities: usize) -> Result<()> {
        if self.basis != TargetBasis::PhotonNumber {
            return Err(Error::BasisMismatch(format!(
                "target `{}` is in the qubit basis; convert it with to_two_photon_encoding",
                self.label
            )));
        }
        if self.width() != n_cavities {
            return Err(Error::BasisMismatch(format!(
                "target `{}` spans {} cavities, state has {}",
                self.label,
                self.width(),
                n_cavities
            )));
        }
        Ok(())
    }
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `(|02> + |20>)/√2`.
pub fn target_epr() -> TargetState {
    TargetState {
        label: "epr".into(),
        basis: TargetBasis::PhotonNumber,
        amplitudes: [(vec![0, 2], real(FRAC_1_SQRT_2)), (vec![2, 0], real(FRAC_1_SQRT_2))].into(),
    }
}

/// `(|002> + |020> + √2|200>)/2`.
pub fn target_w_two_photon() -> TargetState {
    TargetState {
        label: "w".into(),
        basis: TargetBasis::PhotonNumber,
        amplitudes: [
            (vec![0, 0, 2], real(0.5)),
            (vec![0, 2, 0], real(0.5)),
            (vec![2, 0, 0], real(FRAC_1_SQRT_2)),
        ]
        .into(),
    }
}

/// `(|001> + √ζ e^{iγ}|010> + √(ζ+1) e^{iφ}|100>) / √(2+2ζ)` in the qubit basis.
pub fn target_w_zeta(zeta: f64, gamma: f64, delta_phase: f64) -> Result<TargetState> {
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(Error::InvalidParameter(format!("zeta must be finite and >= 0, got {zeta}")));
    }
    let scale = (2.0 + 2.0 * zeta).sqrt().recip();
    Ok(TargetState {
        label: format!("w_zeta(zeta={zeta}, gamma={gamma}, delta={delta_phase})"),
        basis: TargetBasis::Qubit,
        amplitudes: [
            (vec![0, 0, 1], real(scale)),
            (vec![0, 1, 0], C64::from_polar(scale * zeta.sqrt(), gamma)),
            (vec![1, 0, 0], C64::from_polar(scale * (zeta + 1.0).sqrt(), delta_phase)),
        ]
        .into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub fidelity: f64,
    pub probability: f64,
}

/// Fidelity of the field left after detecting the atom in `detect`, together
/// with the probability of that outcome.
pub fn fidelity_post_selected(state: &JointState, detect: AtomLevel, target: &TargetState) -> Result<Fidelity> {
    target.check_field(state.n_cavities())?;
    let collapsed = project_atom(state, detect)?;
    let fidelity = target.overlap(&collapsed.field_amplitudes).norm_sqr().min(1.0);
    Ok(Fidelity { fidelity, probability: collapsed.probability })
}

/// `<target| Tr_atom(ρ) |target>`: fidelity when the atom is discarded unmeasured.
pub fn fidelity_no_detection(state: &JointState, target: &TargetState) -> Result<f64> {
    target.check_field(state.n_cavities())?;
    let f = AtomLevel::ALL
        .iter()
        .map(|&l| target.overlap(&state.branch(l)).norm_sqr())
        .sum::<f64>();
    Ok(f.min(1.0))
}

/// Success probability and fidelity written out directly in terms of
/// single-pass coefficients `C_{ij}^{(kl)}` for the sequential EPR and W
/// protocols (atom starts in `|e>`, cavities in vacuum, detection in `|g>`).
pub mod closed_form {
    use super::*;
    use crate::dynamics::{manifold_propagator, ManifoldIndex};
    use crate::params::PhysicalParams;

    /// The five coefficients a single pass can produce from `|e,0>` or `|f,0>`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct PassCoefficients {
        /// `|e,0> -> |e,0>`
        pub e0_e0: C64,
        /// `|e,0> -> |f,1>`
        pub f1_e0: C64,
        /// `|e,0> -> |g,2>`
        pub g2_e0: C64,
        /// `|f,0> -> |f,0>`
        pub f0_f0: C64,
        /// `|f,0> -> |g,1>`
        pub g1_f0: C64,
    }

    impl PassCoefficients {
        pub fn at(params: &PhysicalParams, t: f64) -> Result<Self> {
            use AtomLevel::*;
            let ladder = manifold_propagator(params, ManifoldIndex::new(0)?, t)?;
            let lower = manifold_propagator(params, ManifoldIndex::new(-1)?, t)?;
            let pick = |u: &crate::dynamics::ManifoldPropagator, to, from| {
                u.coefficient(to, from).expect("level present in manifold")
            };
            Ok(PassCoefficients {
                e0_e0: pick(&ladder, E, E),
                f1_e0: pick(&ladder, F, E),
                g2_e0: pick(&ladder, G, E),
                f0_f0: pick(&lower, F, F),
                g1_f0: pick(&lower, G, F),
            })
        }
    }

    pub fn epr_probability(c1: &PassCoefficients, c2: &PassCoefficients) -> f64 {
        c1.e0_e0.norm_sqr() * c2.g2_e0.norm_sqr() + c1.f1_e0.norm_sqr() * c2.g1_f0.norm_sqr() + c1.g2_e0.norm_sqr()
    }

    fn epr_overlap_sq(c1: &PassCoefficients, c2: &PassCoefficients) -> f64 {
        (c1.e0_e0 * c2.g2_e0 + c1.g2_e0).norm_sqr()
    }

    pub fn epr_fidelity(c1: &PassCoefficients, c2: &PassCoefficients) -> f64 {
        epr_overlap_sq(c1, c2) / (2.0 * epr_probability(c1, c2))
    }

    pub fn epr_fidelity_no_detection(c1: &PassCoefficients, c2: &PassCoefficients) -> f64 {
        0.5 * epr_overlap_sq(c1, c2)
    }

    pub fn w_probability(c1: &PassCoefficients, c2: &PassCoefficients, c3: &PassCoefficients) -> f64 {
        let a1 = c1.e0_e0.norm_sqr();
        let b1 = c1.f1_e0.norm_sqr();
        a1 * c2.e0_e0.norm_sqr() * c3.g2_e0.norm_sqr()
            + a1 * c2.f1_e0.norm_sqr() * c3.g1_f0.norm_sqr()
            + a1 * c2.g2_e0.norm_sqr()
            + b1 * c2.f0_f0.norm_sqr() * c3.g1_f0.norm_sqr()
            + b1 * c2.g1_f0.norm_sqr()
            + c1.g2_e0.norm_sqr()
    }

    pub fn w_fidelity(c1: &PassCoefficients, c2: &PassCoefficients, c3: &PassCoefficients) -> f64 {
        let amp = c1.e0_e0 * c2.e0_e0 * c3.g2_e0 + c1.e0_e0 * c2.g2_e0 + c1.g2_e0 * std::f64::consts::SQRT_2;
        amp.norm_sqr() / (4.0 * w_probability(c1, c2, c3))
    }
}
