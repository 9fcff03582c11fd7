//! Brute-force integration of the coupled amplitude equations of one
//! manifold, with the explicit `e^{±iδt}` phases kept in the right-hand side.
//!
//! Nothing here depends on the closed-form solution in [`crate::dynamics`];
//! the two are meant to be compared against each other.

use crate::dynamics::ManifoldIndex;
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::C64;

/// Default step rule: `max_step · Λ_n` is held at this value.
pub const DEFAULT_STEP_PHASE: f64 = 2e-3;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Amplitudes `(c_e, c_f, c_g)` of one manifold at time `t`. Components that
/// do not exist in the manifold are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldAmplitudes {
    pub n: ManifoldIndex,
    pub t: f64,
    pub c_e: Option<C64>,
    pub c_f: Option<C64>,
    pub c_g: Option<C64>,
}

impl ManifoldAmplitudes {
    /// Amplitudes in manifold basis order (`e, f, g` restricted to the levels present).
    pub fn from_slice(n: ManifoldIndex, t: f64, amps: &[C64]) -> Result<Self> {
        if amps.len() != n.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} amplitudes given for a {}-dimensional manifold",
                amps.len(),
                n.dim()
            )));
        }
        let mut full = [None; 3];
        for (slot, &a) in full[3 - n.dim()..].iter_mut().zip(amps) {
            *slot = Some(a);
        }
        Ok(ManifoldAmplitudes { n, t, c_e: full[0], c_f: full[1], c_g: full[2] })
    }

    /// Unit amplitude on basis state `k` of the manifold at `t = 0`.
    pub fn unit(n: ManifoldIndex, k: usize) -> Self {
        let mut v = vec![C64::default(); n.dim()];
        v[k] = C64::new(1.0, 0.0);
        Self::from_slice(n, 0.0, &v).expect("length matches")
    }

    pub fn to_vec(&self) -> Vec<C64> {
        [self.c_e, self.c_f, self.c_g].into_iter().flatten().collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.to_vec().iter().map(|a| a.norm_sqr()).sum()
    }

    fn padded(&self) -> [C64; 3] {
        [self.c_e.unwrap_or_default(), self.c_f.unwrap_or_default(), self.c_g.unwrap_or_default()]
    }
}

struct Rhs {
    k1: f64,
    k2: f64,
    delta: f64,
}

impl Rhs {
    fn new(params: &PhysicalParams, n: ManifoldIndex) -> Self {
        let n = n.value() as f64;
        Rhs {
            k1: params.g1() * (n + 1.0).max(0.0).sqrt(),
            k2: params.g2() * (n + 2.0).max(0.0).sqrt(),
            delta: params.delta(),
        }
    }

    fn eval(&self, t: f64, c: &[C64; 3]) -> [C64; 3] {
        let minus_i = C64::new(0.0, -1.0);
        let up = C64::from_polar(1.0, self.delta * t);
        let down = up.conj();
        [
            minus_i * self.k1 * c[1] * down,
            minus_i * (self.k1 * c[0] + self.k2 * c[2]) * up,
            minus_i * self.k2 * c[1] * down,
        ]
    }

    fn rabi(&self) -> f64 {
        (0.5 * self.delta).hypot(self.k1.hypot(self.k2))
    }
}

fn axpy(y: &[C64; 3], h: f64, k: &[C64; 3]) -> [C64; 3] {
    [y[0] + k[0] * h, y[1] + k[1] * h, y[2] + k[2] * h]
}

/// Step size satisfying `max_step · Λ_n = phase`, or `None` when nothing
/// evolves (`Λ_n = 0`).
pub fn step_for_phase(params: &PhysicalParams, n: ManifoldIndex, phase: f64) -> Option<f64> {
    let rabi = Rhs::new(params, n).rabi();
    (rabi > 0.0).then(|| phase / rabi)
}

/// Step size from [`DEFAULT_STEP_PHASE`].
pub fn default_max_step(params: &PhysicalParams, n: ManifoldIndex) -> f64 {
    step_for_phase(params, n, DEFAULT_STEP_PHASE).unwrap_or(f64::INFINITY)
}

/// Integrate from `initial.t` to `t_final` with fixed-step classical RK4.
///
/// Steps are at most `max_step` long; the final step is shortened to land on
/// `t_final`. `t_final < initial.t` integrates backwards.
pub fn integrate_manifold(
    params: &PhysicalParams,
    n: ManifoldIndex,
    initial: &ManifoldAmplitudes,
    t_final: f64,
    max_step: f64,
) -> Result<ManifoldAmplitudes> {
    if max_step.is_nan() || max_step <= 0.0 {
        return Err(Error::InvalidStep(max_step));
    }
    if initial.n != n {
        return Err(Error::InvalidParameter(format!("amplitudes belong to {} not {}", initial.n, n)));
    }
    let norm = initial.norm_sqr();
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(norm));
    }

    let rhs = Rhs::new(params, n);
    let span = t_final - initial.t;
    let steps = if span == 0.0 { 0 } else { (span.abs() / max_step).ceil().max(1.0) as u64 };
    let h_full = if steps == 0 { 0.0 } else { span.signum() * max_step.min(span.abs()) };

    let mut y = initial.padded();
    let mut t = initial.t;
    for step in 0..steps {
        let h = if step + 1 == steps { t_final - t } else { h_full };
        let k1 = rhs.eval(t, &y);
        let k2 = rhs.eval(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs.eval(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs.eval(t + h, &axpy(&y, h, &k3));
        for i in 0..3 {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
        t = initial.t + h_full * (step + 1) as f64;
    }

    let off = 3 - n.dim();
    ManifoldAmplitudes::from_slice(n, t_final, &y[off..])
}

/// Numerical propagator from 0 to `t`, one integrated column per unit input,
/// returned as rows.
pub fn integrate_propagator(
    params: &PhysicalParams,
    n: ManifoldIndex,
    t: f64,
    max_step: f64,
) -> Result<Vec<Vec<C64>>> {
    let d = n.dim();
    let mut rows = vec![vec![C64::default(); d]; d];
    #[allow(clippy::needless_range_loop)] // columns are filled from unit vectors
    for col in 0..d {
        let out = integrate_manifold(params, n, &ManifoldAmplitudes::unit(n, col), t, max_step)?;
        for (r, a) in out.to_vec().into_iter().enumerate() {
            rows[r][col] = a;
        }
    }
    Ok(rows)
}
