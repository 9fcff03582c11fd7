//! Joint atom ⊗ multi-cavity states and the sequential-pass protocol.
//!
//! Each cavity pass couples the atom to one cavity for a given time, starting
//! that cavity's interaction clock at zero. Flight between cavities is
//! instantaneous and adds no phase. Detection is an ideal projective
//! measurement of the atomic level.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{manifold_propagator, ManifoldIndex, ManifoldPropagator};
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::C64;

/// Probability below which a detection branch is treated as empty.
pub const EMPTY_BRANCH_THRESHOLD: f64 = 1e-14;

/// Per-cavity truncation used on construction.
pub const DEFAULT_N_MAX: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomLevel {
    E,
    F,
    G,
}

impl AtomLevel {
    pub const ALL: [AtomLevel; 3] = [AtomLevel::E, AtomLevel::F, AtomLevel::G];

    /// Photons the atom can still emit on its way down to `|g>`.
    pub fn excitation(self) -> u32 {
        match self {
            AtomLevel::E => 2,
            AtomLevel::F => 1,
            AtomLevel::G => 0,
        }
    }
}

impl fmt::Display for AtomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AtomLevel::E => "e",
            AtomLevel::F => "f",
            AtomLevel::G => "g",
        })
    }
}

impl FromStr for AtomLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" => Ok(AtomLevel::E),
            "f" => Ok(AtomLevel::F),
            "g" => Ok(AtomLevel::G),
            other => Err(Error::InvalidParameter(format!("unknown atom level `{other}`"))),
        }
    }
}

/// Photon numbers, one entry per cavity.
pub type Photons = Vec<u32>;

/// Sparse pure state over `(atom level, photon tuple)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    n_cavities: usize,
    n_max: u32,
    amplitudes: BTreeMap<(AtomLevel, Photons), C64>,
}

/// Atom prepared in `atom`, every cavity in vacuum.
pub fn make_initial_state(atom: AtomLevel, n_cavities: usize) -> JointState {
    let mut amplitudes = BTreeMap::new();
    amplitudes.insert((atom, vec![0; n_cavities]), C64::new(1.0, 0.0));
    JointState { n_cavities, n_max: DEFAULT_N_MAX, amplitudes }
}

impl JointState {
    /// Build from explicit amplitudes. Entries must be within `n_cavities`.
    pub fn from_amplitudes(
        n_cavities: usize,
        amplitudes: impl IntoIterator<Item = ((AtomLevel, Photons), C64)>,
    ) -> Result<Self> {
        let amplitudes: BTreeMap<_, _> = amplitudes.into_iter().collect();
        let mut n_max = DEFAULT_N_MAX;
        for (_, photons) in amplitudes.keys() {
            if photons.len() != n_cavities {
                return Err(Error::InvalidParameter(format!(
                    "photon tuple {photons:?} does not have {n_cavities} entries"
                )));
            }
            n_max = n_max.max(photons.iter().copied().max().unwrap_or(0));
        }
        Ok(JointState { n_cavities, n_max, amplitudes })
    }

    pub fn n_cavities(&self) -> usize {
        self.n_cavities
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn amplitudes(&self) -> &BTreeMap<(AtomLevel, Photons), C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, atom: AtomLevel, photons: &[u32]) -> C64 {
        self.amplitudes.get(&(atom, photons.to_vec())).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Unnormalized field amplitudes conditioned on the atom being in `level`.
    pub fn branch(&self, level: AtomLevel) -> BTreeMap<Photons, C64> {
        self.amplitudes
            .iter()
            .filter(|((l, _), _)| *l == level)
            .map(|((_, photons), &a)| (photons.clone(), a))
            .collect()
    }

    pub fn scaled(&self, factor: C64) -> JointState {
        JointState {
            amplitudes: self.amplitudes.iter().map(|(k, &a)| (k.clone(), a * factor)).collect(),
            ..self.clone()
        }
    }

    /// Largest value of `atom excitation + total photons` over populated kets.
    pub fn max_excitation(&self) -> u32 {
        self.amplitudes
            .keys()
            .map(|(l, photons)| l.excitation() + photons.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Outcome distribution of an atomic measurement, in `e, f, g` order.
    pub fn level_probabilities(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for ((l, _), a) in &self.amplitudes {
            out[*l as usize] += a.norm_sqr();
        }
        out
    }

    /// Let the atom interact with `cavity` for `duration`.
    pub fn apply_cavity_pass(&self, params: &PhysicalParams, cavity: usize, duration: f64) -> Result<JointState> {
        apply_cavity_pass(self, params, cavity, duration)
    }
}

/// Evolve the atom and one cavity through a single interaction, leaving the
/// other cavities as spectators.
pub fn apply_cavity_pass(
    state: &JointState,
    params: &PhysicalParams,
    cavity: usize,
    duration: f64,
) -> Result<JointState> {
    if cavity >= state.n_cavities {
        return Err(Error::CavityOutOfRange { cavity, n_cavities: state.n_cavities });
    }
    if duration < 0.0 || duration.is_nan() {
        return Err(Error::NegativeTime(duration));
    }

    // (spectator photons with the target slot zeroed, manifold) -> input vector
    let mut blocks: BTreeMap<(Photons, ManifoldIndex), [C64; 3]> = BTreeMap::new();
    for ((level, photons), &amp) in &state.amplitudes {
        let n = ManifoldIndex::containing(*level, photons[cavity]);
        let mut spectators = photons.clone();
        spectators[cavity] = 0;
        let slot = n.position(*level).expect("level belongs to its own manifold");
        blocks.entry((spectators, n)).or_default()[slot] += amp;
    }

    let mut propagators: BTreeMap<ManifoldIndex, ManifoldPropagator> = BTreeMap::new();
    let mut amplitudes = BTreeMap::new();
    let mut n_max = state.n_max;
    for ((spectators, n), input) in blocks {
        let u = match propagators.get(&n) {
            Some(u) => *u,
            None => {
                let u = manifold_propagator(params, n, duration)?;
                propagators.insert(n, u);
                u
            }
        };
        let output = u.apply(&input[..n.dim()]);
        for (&level, amp) in n.levels().iter().zip(output) {
            if amp == C64::default() {
                continue;
            }
            let k = n.photons_for(level).expect("manifold levels have nonnegative photon numbers");
            n_max = n_max.max(k);
            let mut photons = spectators.clone();
            photons[cavity] = k;
            *amplitudes.entry((level, photons)).or_default() += amp;
        }
    }
    Ok(JointState { n_cavities: state.n_cavities, n_max, amplitudes })
}

/// Field state left behind after the atom is found in a given level.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedState {
    pub level: AtomLevel,
    pub field_amplitudes: BTreeMap<Photons, C64>,
    pub probability: f64,
    /// `1/√probability`.
    pub normalization: f64,
}

impl CollapsedState {
    pub fn amplitude(&self, photons: &[u32]) -> C64 {
        self.field_amplitudes.get(photons).copied().unwrap_or_default()
    }
}

/// Project the atom onto `level` and renormalize the remaining field.
pub fn project_atom(state: &JointState, level: AtomLevel) -> Result<CollapsedState> {
    let branch = state.branch(level);
    let probability: f64 = branch.values().map(|a| a.norm_sqr()).sum();
    if probability < EMPTY_BRANCH_THRESHOLD {
        return Err(Error::EmptyBranch { level, probability });
    }
    let normalization = probability.sqrt().recip();
    let field_amplitudes = branch.into_iter().map(|(k, a)| (k, a * normalization)).collect();
    Ok(CollapsedState { level, field_amplitudes, probability, normalization })
}

/// One interaction: cavity index (zero-based) and duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pass {
    pub cavity: usize,
    pub duration: f64,
}

/// Ordered sequence of cavity passes plus optional terminal detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub initial_atom: AtomLevel,
    pub n_cavities: usize,
    pub passes: Vec<Pass>,
    pub detection: Option<AtomLevel>,
    pub params: PhysicalParams,
}

impl ProtocolSpec {
    /// Two cavities crossed in order for `t1` then `t2`, atom detected in `|g>`.
    pub fn epr(params: PhysicalParams, t1: f64, t2: f64) -> Self {
        Self::sequential(params, &[t1, t2])
    }

    /// Three cavities crossed in order, atom detected in `|g>`.
    pub fn w(params: PhysicalParams, t1: f64, t2: f64, t3: f64) -> Self {
        Self::sequential(params, &[t1, t2, t3])
    }

    /// Atom starts in `|e>` and visits cavity `i` for `durations[i]`.
    pub fn sequential(params: PhysicalParams, durations: &[f64]) -> Self {
        ProtocolSpec {
            initial_atom: AtomLevel::E,
            n_cavities: durations.len(),
            passes: durations.iter().enumerate().map(|(cavity, &duration)| Pass { cavity, duration }).collect(),
            detection: Some(AtomLevel::G),
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cavities == 0 {
            return Err(Error::InvalidParameter("at least one cavity is required".into()));
        }
        for pass in &self.passes {
            if pass.cavity >= self.n_cavities {
                return Err(Error::CavityOutOfRange { cavity: pass.cavity, n_cavities: self.n_cavities });
            }
            if !(pass.duration >= 0.0 && pass.duration.is_finite()) {
                return Err(Error::NegativeTime(pass.duration));
            }
        }
        Ok(())
    }

    /// Same protocol with pass durations replaced, in pass order.
    pub fn with_durations(&self, durations: &[f64]) -> Result<ProtocolSpec> {
        if durations.len() != self.passes.len() {
            return Err(Error::InvalidParameter(format!(
                "{} durations given for {} passes",
                durations.len(),
                self.passes.len()
            )));
        }
        let mut spec = self.clone();
        for (pass, &d) in spec.passes.iter_mut().zip(durations) {
            pass.duration = d;
        }
        Ok(spec)
    }

    pub fn durations(&self) -> Vec<f64> {
        self.passes.iter().map(|p| p.duration).collect()
    }

    /// Sum of interaction times, in the time unit of the parameters.
    pub fn total_interaction_time(&self) -> f64 {
        self.passes.iter().map(|p| p.duration).sum()
    }

    /// State after all passes, before any detection.
    pub fn evolve(&self) -> Result<JointState> {
        self.validate()?;
        let mut state = make_initial_state(self.initial_atom, self.n_cavities);
        for pass in &self.passes {
            state = apply_cavity_pass(&state, &self.params, pass.cavity, pass.duration)?;
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub state: JointState,
    pub collapsed: Option<CollapsedState>,
}

/// Evolve through every pass, then post-select if the spec asks for it.
pub fn run_protocol(spec: &ProtocolSpec) -> Result<ProtocolOutcome> {
    let state = spec.evolve()?;
    let collapsed = match spec.detection {
        Some(level) => Some(project_atom(&state, level)?),
        None => None,
    };
    Ok(ProtocolOutcome { state, collapsed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::FrequencyConvention;
    use proptest::prelude::*;

    fn nominal() -> PhysicalParams {
        PhysicalParams::nominal(FrequencyConvention::Angular)
    }

    fn coeff(params: &PhysicalParams, n: i64, to: AtomLevel, from: AtomLevel, t: f64) -> C64 {
        manifold_propagator(params, ManifoldIndex::new(n).unwrap(), t)
            .unwrap()
            .coefficient(to, from)
            .unwrap()
    }

    #[test]
    fn initial_states() {
        let s = make_initial_state(AtomLevel::E, 2);
        assert_eq!(s.amplitude(AtomLevel::E, &[0, 0]), C64::new(1.0, 0.0));
        assert_eq!(s.amplitudes().len(), 1);
        assert_eq!(s.norm_sqr(), 1.0);
        let s = make_initial_state(AtomLevel::G, 3);
        assert_eq!(s.amplitude(AtomLevel::G, &[0, 0, 0]), C64::new(1.0, 0.0));
    }

    #[test]
    fn zero_duration_pass_is_identity() {
        let s = make_initial_state(AtomLevel::E, 2);
        let s1 = s.apply_cavity_pass(&nominal(), 0, 1.3).unwrap();
        assert_eq!(s1.apply_cavity_pass(&nominal(), 1, 0.0).unwrap(), s1);
    }

    #[test]
    fn pass_validation() {
        let s = make_initial_state(AtomLevel::E, 2);
        assert_eq!(
            s.apply_cavity_pass(&nominal(), 2, 1.0),
            Err(Error::CavityOutOfRange { cavity: 2, n_cavities: 2 })
        );
        assert_eq!(s.apply_cavity_pass(&nominal(), 0, -1.0), Err(Error::NegativeTime(-1.0)));
    }

    #[test]
    fn first_pass_populates_the_single_cavity_ladder() {
        let p = nominal();
        let t1 = 3.0;
        let s = make_initial_state(AtomLevel::E, 2).apply_cavity_pass(&p, 0, t1).unwrap();
        assert_eq!(s.amplitudes().len(), 3);
        assert_eq!(s.amplitude(AtomLevel::E, &[0, 0]), coeff(&p, 0, AtomLevel::E, AtomLevel::E, t1));
        assert_eq!(s.amplitude(AtomLevel::F, &[1, 0]), coeff(&p, 0, AtomLevel::F, AtomLevel::E, t1));
        assert_eq!(s.amplitude(AtomLevel::G, &[2, 0]), coeff(&p, 0, AtomLevel::G, AtomLevel::E, t1));
    }

    #[test]
    fn projections() {
        let s = make_initial_state(AtomLevel::E, 2);
        let c = project_atom(&s, AtomLevel::E).unwrap();
        assert_eq!(c.probability, 1.0);
        assert_eq!(c.amplitude(&[0, 0]), C64::new(1.0, 0.0));
        assert!(matches!(project_atom(&s, AtomLevel::G), Err(Error::EmptyBranch { .. })));
    }

    #[test]
    fn zero_time_protocol_has_empty_g_branch() {
        let spec = ProtocolSpec::epr(nominal(), 0.0, 0.0);
        assert!(matches!(run_protocol(&spec), Err(Error::EmptyBranch { level: AtomLevel::G, .. })));
    }

    #[test]
    fn epr_success_probability_matches_expansion() {
        let p = nominal();
        let (t1, t2) = (2.2, 4.1);
        let c = |n, to, from, t| coeff(&p, n, to, from, t);
        use AtomLevel::*;
        let expect = c(0, E, E, t1).norm_sqr() * c(0, G, E, t2).norm_sqr()
            + c(0, F, E, t1).norm_sqr() * c(-1, G, F, t2).norm_sqr()
            + c(0, G, E, t1).norm_sqr();
        let out = run_protocol(&ProtocolSpec::epr(p, t1, t2)).unwrap();
        assert!((out.collapsed.unwrap().probability - expect).abs() < 1e-12);
    }

    #[test]
    fn truncation_grows_when_needed() {
        // |g,0> plus a |e> atom already holding two photons in cavity 0
        let state = JointState::from_amplitudes(1, [((AtomLevel::E, vec![2]), C64::new(1.0, 0.0))]).unwrap();
        let out = state.apply_cavity_pass(&nominal(), 0, 0.7).unwrap();
        assert_eq!(out.n_max(), 4);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ProtocolSpec::epr(nominal(), 1.0, 1.0);
        spec.passes[1].cavity = 5;
        assert!(spec.validate().is_err());
        let spec = ProtocolSpec::epr(nominal(), 1.0, -1.0);
        assert!(spec.validate().is_err());
        assert!(ProtocolSpec::epr(nominal(), 1.0, 1.0).with_durations(&[1.0]).is_err());
    }

    fn arb_passes() -> impl Strategy<Value = (usize, Vec<(usize, f64)>)> {
        (1usize..4).prop_flat_map(|nc| (Just(nc), prop::collection::vec((0..nc, 0.0f64..40.0), 0..6)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn norm_branches_and_excitation((nc, passes) in arb_passes()) {
            let p = nominal();
            let mut s = make_initial_state(AtomLevel::E, nc);
            for (cavity, t) in passes {
                let before = s.clone();
                s = s.apply_cavity_pass(&p, cavity, t).unwrap();
                prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
                prop_assert!(s.max_excitation() <= 2);
                prop_assert!(s.n_max() <= 2);
                // marginal over the other cavities is unchanged
                let marginal = |st: &JointState| {
                    let mut m: BTreeMap<Photons, f64> = BTreeMap::new();
                    for ((_, ph), a) in st.amplitudes() {
                        let mut key = ph.clone();
                        key[cavity] = 0;
                        *m.entry(key).or_default() += a.norm_sqr();
                    }
                    m
                };
                let (a, b) = (marginal(&before), marginal(&s));
                for (k, v) in &a {
                    prop_assert!((v - b.get(k).copied().unwrap_or(0.0)).abs() < 1e-10);
                }
            }
            let total: f64 = s.level_probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
