//! Self-check suite behind the `validate` command.
//!
//! Every check reports its maximal residual against a fixed tolerance. The
//! random draws come from a seeded generator, so the report is reproducible.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{lambda_n, manifold_propagator, max_abs_diff, ManifoldIndex, ManifoldPropagator};
use crate::error::Result;
use crate::metrics::closed_form::{self, PassCoefficients};
use crate::metrics::{fidelity_no_detection, fidelity_post_selected, target_epr, target_w_two_photon};
use crate::ode::{default_max_step, integrate_manifold, integrate_propagator, ManifoldAmplitudes};
use crate::params::{FrequencyConvention, PhysicalParams};
use crate::protocol::{AtomLevel, ProtocolSpec};
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_residual: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub seed: u64,
    pub oracle_samples: usize,
    pub unitarity_samples: usize,
    pub protocol_samples: usize,
    /// Added to entry (0, 0) of every propagator in the unitarity check.
    pub perturbation: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            seed: 2009,
            oracle_samples: 30,
            unitarity_samples: 2000,
            protocol_samples: 300,
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

const MANIFOLDS: [i64; 5] = [-1, 0, 1, 2, 5];

fn random_params(rng: &mut impl Rng) -> PhysicalParams {
    let g1 = rng.gen_range(0.1..50.0);
    let g2 = rng.gen_range(0.1..50.0);
    let g = 0.5 * (g1 + g2);
    let delta = rng.gen_range(-50.0 * g..50.0 * g);
    PhysicalParams::angular(g1, g2, delta).expect("valid ranges")
}

fn random_manifold(rng: &mut impl Rng) -> ManifoldIndex {
    ManifoldIndex::new(MANIFOLDS[rng.gen_range(0..MANIFOLDS.len())]).expect("valid manifold")
}

/// Closed-form columns against RK4. `Λ_n · t` is drawn up to `max_phase`.
pub fn check_oracle(rng: &mut impl Rng, samples: usize, max_phase: f64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let params = random_params(rng);
        let n = random_manifold(rng);
        let t = rng.gen_range(0.0..max_phase) / lambda_n(&params, n)?;
        let numeric = integrate_propagator(&params, n, t, default_max_step(&params, n))?;
        let exact = manifold_propagator(&params, n, t)?;
        worst = worst.max(max_abs_diff(&numeric, &exact.to_rows()));
    }
    Ok(CheckResult { name: "oracle_equivalence", max_residual: worst, tolerance: 1e-8, samples })
}

pub fn check_unitarity(rng: &mut impl Rng, samples: usize, perturbation: f64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let params = random_params(rng);
        let n = random_manifold(rng);
        let t = rng.gen_range(0.0..1e3) / lambda_n(&params, n)?;
        let mut u = manifold_propagator(&params, n, t)?;
        if perturbation != 0.0 {
            u = u.perturbed(0, 0, C64::new(perturbation, 0.0));
        }
        worst = worst.max(u.unitarity_residual());
    }
    Ok(CheckResult { name: "unitarity", max_residual: worst, tolerance: 1e-10, samples })
}

/// `U(t1 + t2) = R(t1) U(t2) R(t1)† · U(t1)`.
pub fn check_two_time_composition(rng: &mut impl Rng, samples: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let params = random_params(rng);
        let n = random_manifold(rng);
        let lam = lambda_n(&params, n)?;
        let t1 = rng.gen_range(0.0..500.0) / lam;
        let t2 = rng.gen_range(0.0..500.0) / lam;
        let first = manifold_propagator(&params, n, t1)?;
        let second = ManifoldPropagator::between(&params, n, t1, t1 + t2)?;
        let whole = manifold_propagator(&params, n, t1 + t2)?;
        worst = worst.max(max_abs_diff(&second.compose(&first), &whole.to_rows()));
    }
    Ok(CheckResult { name: "two_time_composition", max_residual: worst, tolerance: 1e-10, samples })
}

/// Resonant population `|C_{g,2}|² = 8/9` at `√3 g t = π`, by both routes.
pub fn check_resonance() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for g in [0.5, 1.0, 17.5] {
        let params = PhysicalParams::angular(g, g, 0.0)?;
        let n = ManifoldIndex::new(0)?;
        let t = PI / (3f64.sqrt() * g);
        let closed = manifold_propagator(&params, n, t)?.coefficient(AtomLevel::G, AtomLevel::E).expect("present");
        worst = worst.max((closed.norm_sqr() - 8.0 / 9.0).abs());
        let numeric = integrate_manifold(&params, n, &ManifoldAmplitudes::unit(n, 0), t, default_max_step(&params, n))?;
        worst = worst.max((numeric.c_g.expect("present").norm_sqr() - 8.0 / 9.0).abs());
    }
    Ok(CheckResult { name: "resonant_population", max_residual: worst, tolerance: 1e-8, samples: 3 })
}

/// Norm, branch completeness and the excitation bound over random EPR and W runs.
/// The excitation residual is the amount by which the bound is exceeded.
pub fn check_branches(rng: &mut impl Rng, samples: usize) -> Result<Vec<CheckResult>> {
    let params = PhysicalParams::nominal(FrequencyConvention::Angular);
    let mut completeness: f64 = 0.0;
    let mut excess: f64 = 0.0;
    for i in 0..samples {
        let k = if i % 2 == 0 { 2 } else { 3 };
        let times: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..40.0)).collect();
        let state = ProtocolSpec::sequential(params, &times).evolve()?;
        let total: f64 = state.level_probabilities().iter().sum();
        completeness = completeness.max((total - 1.0).abs());
        excess = excess.max(state.max_excitation().saturating_sub(2) as f64);
    }
    Ok(vec![
        CheckResult { name: "branch_completeness", max_residual: completeness, tolerance: 1e-10, samples },
        CheckResult { name: "excitation_bound", max_residual: excess, tolerance: 0.0, samples },
    ])
}

/// Overlap-based metrics against the closed-form coefficient expressions.
pub fn check_structural_identity(rng: &mut impl Rng, samples: usize) -> Result<Vec<CheckResult>> {
    let params = PhysicalParams::nominal(FrequencyConvention::Angular);
    let (epr, w) = (target_epr(), target_w_two_photon());
    let mut post: f64 = 0.0;
    let mut nodet: f64 = 0.0;
    let mut wpost: f64 = 0.0;
    for _ in 0..samples {
        let t: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..40.0)).collect();
        let c: Vec<PassCoefficients> = t.iter().map(|&ti| PassCoefficients::at(&params, ti)).collect::<Result<_>>()?;

        let s = ProtocolSpec::epr(params, t[0], t[1]).evolve()?;
        let f = fidelity_post_selected(&s, AtomLevel::G, &epr)?;
        post = post
            .max((f.fidelity - closed_form::epr_fidelity(&c[0], &c[1])).abs())
            .max((f.probability - closed_form::epr_probability(&c[0], &c[1])).abs());
        let nd = fidelity_no_detection(&s, &epr)?;
        nodet = nodet.max((nd - closed_form::epr_fidelity_no_detection(&c[0], &c[1])).abs());

        let s = ProtocolSpec::w(params, t[0], t[1], t[2]).evolve()?;
        let f = fidelity_post_selected(&s, AtomLevel::G, &w)?;
        wpost = wpost
            .max((f.fidelity - closed_form::w_fidelity(&c[0], &c[1], &c[2])).abs())
            .max((f.probability - closed_form::w_probability(&c[0], &c[1], &c[2])).abs());
    }
    Ok(vec![
        CheckResult { name: "epr_post_selected_identity", max_residual: post, tolerance: 1e-10, samples },
        CheckResult { name: "epr_no_detection_identity", max_residual: nodet, tolerance: 1e-10, samples },
        CheckResult { name: "w_post_selected_identity", max_residual: wpost, tolerance: 1e-10, samples },
    ])
}

pub fn run_validation(opts: &ValidationOptions) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = vec![
        check_oracle(&mut rng, opts.oracle_samples, 200.0)?,
        check_unitarity(&mut rng, opts.unitarity_samples, opts.perturbation)?,
        check_two_time_composition(&mut rng, opts.unitarity_samples)?,
        check_resonance()?,
    ];
    checks.extend(check_branches(&mut rng, opts.protocol_samples)?);
    checks.extend(check_structural_identity(&mut rng, opts.protocol_samples)?);
    Ok(ValidationReport { checks })
}
