//! Closed-form evolution of one excitation manifold of the two-photon
//! Jaynes-Cummings model.
//!
//! The interaction couples `|e,n> <-> |f,n+1> <-> |g,n+2>`, so the joint
//! atom-field space splits into invariant blocks labelled by `n`. For `n >= 0`
//! a block is three-dimensional. The lowest blocks lose the components that
//! would carry a negative photon number: `n = -1` is `{|f,0>, |g,1>}` and
//! `n = -2` is the stationary state `|g,0>`.
//!
//! Amplitudes are in the frame used by the coupled amplitude equations, where
//! the `|f>` component carries the explicit `e^{±iδt}` phases. A consequence
//! is that the propagator from `t = 0` is not a one-parameter group when
//! `δ != 0`; use [`ManifoldPropagator::between`] to evolve from a nonzero
//! start time.

use std::fmt;

use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::protocol::AtomLevel;
use crate::C64;

/// Label of the invariant subspace `{|e,n>, |f,n+1>, |g,n+2>}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ManifoldIndex(i64);

impl ManifoldIndex {
    pub const DARK: ManifoldIndex = ManifoldIndex(-2);

    pub fn new(n: i64) -> Result<Self> {
        if n < -2 {
            return Err(Error::InvalidManifold(n));
        }
        Ok(ManifoldIndex(n))
    }

    /// The manifold containing `|level, photons>`.
    pub fn containing(level: AtomLevel, photons: u32) -> Self {
        ManifoldIndex(photons as i64 + level.excitation() as i64 - 2)
    }

    pub fn value(self) -> i64 {
        self.0
    }

    pub fn dim(self) -> usize {
        match self.0 {
            -2 => 1,
            -1 => 2,
            _ => 3,
        }
    }

    /// Atom levels present in this manifold, in basis order.
    pub fn levels(self) -> &'static [AtomLevel] {
        const ALL: [AtomLevel; 3] = [AtomLevel::E, AtomLevel::F, AtomLevel::G];
        &ALL[3 - self.dim()..]
    }

    /// Photon number paired with `level` inside this manifold.
    pub fn photons_for(self, level: AtomLevel) -> Option<u32> {
        let k = self.0 + 2 - level.excitation() as i64;
        u32::try_from(k).ok()
    }

    /// Position of `level` in the basis, if present.
    pub fn position(self, level: AtomLevel) -> Option<usize> {
        self.levels().iter().position(|&l| l == level)
    }

    // √(n+1) and √(n+2), clamped to zero where the state does not exist.
    fn ladder_factors(self) -> (f64, f64) {
        let n = self.0 as f64;
        ((n + 1.0).max(0.0).sqrt(), (n + 2.0).max(0.0).sqrt())
    }
}

impl fmt::Display for ManifoldIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={}", self.0)
    }
}

impl TryFrom<i64> for ManifoldIndex {
    type Error = Error;

    fn try_from(n: i64) -> Result<Self> {
        ManifoldIndex::new(n)
    }
}

fn coupled(n: ManifoldIndex) -> Result<(f64, f64)> {
    if n == ManifoldIndex::DARK {
        return Err(Error::DarkManifold);
    }
    Ok(n.ladder_factors())
}

/// `α_n = √(g₁²(n+1) + g₂²(n+2))`, in radian frequency.
pub fn alpha_n(params: &PhysicalParams, n: ManifoldIndex) -> Result<f64> {
    let (s1, s2) = coupled(n)?;
    Ok((params.g1() * s1).hypot(params.g2() * s2))
}

/// Rabi frequency `Λ_n = √(δ²/4 + α_n²)`.
pub fn lambda_n(params: &PhysicalParams, n: ManifoldIndex) -> Result<f64> {
    let alpha = alpha_n(params, n)?;
    Ok((0.5 * params.delta()).hypot(alpha))
}

/// `γ_n(t) = [Λ cos(Λt) + i(δ/2) sin(Λt) − Λ e^{iδt/2}] e^{−iδt/2}`.
pub fn gamma_n(params: &PhysicalParams, n: ManifoldIndex, t: f64) -> Result<C64> {
    let lambda = lambda_n(params, n)?;
    Ok(gamma_from(lambda, params.delta(), t))
}

fn gamma_from(lambda: f64, delta: f64, t: f64) -> C64 {
    let (s, c) = (lambda * t).sin_cos();
    let half = C64::from_polar(1.0, 0.5 * delta * t);
    (C64::new(lambda * c, 0.5 * delta * s) - lambda * half) * half.conj()
}

/// Unitary acting on one manifold for an interaction of length `duration`
/// starting at time zero.
///
/// Columns are the images of the unit initial conditions; rows and columns
/// follow [`ManifoldIndex::levels`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldPropagator {
    index: ManifoldIndex,
    duration: f64,
    params: PhysicalParams,
    entries: [[C64; 3]; 3],
}

/// Evaluate the closed-form coefficients for manifold `n` after time `t`.
pub fn manifold_propagator(
    params: &PhysicalParams,
    n: ManifoldIndex,
    t: f64,
) -> Result<ManifoldPropagator> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    let mut entries = identity3();
    if n != ManifoldIndex::DARK {
        let full = closed_form_block(params, n, t);
        let off = 3 - n.dim();
        for (r, row) in entries.iter_mut().enumerate().take(n.dim()) {
            for (c, e) in row.iter_mut().enumerate().take(n.dim()) {
                *e = full[r + off][c + off];
            }
        }
    }
    Ok(ManifoldPropagator { index: n, duration: t, params: *params, entries })
}

// Full 3x3 in (e, f, g) order; rows/columns of absent states are meaningless
// for n = -1 and get sliced away by the caller.
fn closed_form_block(params: &PhysicalParams, n: ManifoldIndex, t: f64) -> [[C64; 3]; 3] {
    let (s1, s2) = n.ladder_factors();
    let a1 = params.g1() * s1;
    let a2 = params.g2() * s2;
    let alpha_sq = a1 * a1 + a2 * a2;
    if alpha_sq == 0.0 {
        // Zero coupling: every entry reduces to its uncoupled limit.
        return identity3();
    }
    let delta = params.delta();
    let lambda = (0.5 * delta).hypot(alpha_sq.sqrt());
    let gamma = gamma_from(lambda, delta, t);
    let (s, c) = (lambda * t).sin_cos();
    let phase = C64::from_polar(1.0, 0.5 * delta * t);
    let i = C64::i();

    let mix = gamma / (lambda * alpha_sq);
    let e_from_f = -i * (a1 / lambda) * s * phase.conj();
    let g_from_f = -i * (a2 / lambda) * s * phase.conj();
    let f_from_e = -i * (a1 / lambda) * s * phase;
    let f_from_g = -i * (a2 / lambda) * s * phase;
    let f_from_f = C64::new(c, -0.5 * delta / lambda * s) * phase;

    [
        [mix * (a1 * a1) + 1.0, e_from_f, mix * (a1 * a2)],
        [f_from_e, f_from_f, f_from_g],
        [mix * (a1 * a2), g_from_f, mix * (a2 * a2) + 1.0],
    ]
}

fn identity3() -> [[C64; 3]; 3] {
    let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    [[o, z, z], [z, o, z], [z, z, o]]
}

impl ManifoldPropagator {
    /// Propagator from `t_start` to `t_end` in the same frame.
    ///
    /// Equal to `R(t_start) U(t_end - t_start) R(t_start)†` with
    /// `R(t) = diag(1, e^{iδt}, 1)` acting on the `|f>` component, so that
    /// `between(t1, t1 + t2) · U(t1) = U(t1 + t2)`.
    pub fn between(
        params: &PhysicalParams,
        n: ManifoldIndex,
        t_start: f64,
        t_end: f64,
    ) -> Result<ManifoldPropagator> {
        if t_start < 0.0 || t_start.is_nan() {
            return Err(Error::NegativeTime(t_start));
        }
        let mut u = manifold_propagator(params, n, t_end - t_start)?;
        if let Some(f) = n.position(AtomLevel::F) {
            let rot = C64::from_polar(1.0, params.delta() * t_start);
            for k in 0..u.dim() {
                if k != f {
                    u.entries[f][k] *= rot;
                    u.entries[k][f] *= rot.conj();
                }
            }
        }
        u.duration = t_end - t_start;
        Ok(u)
    }

    pub fn index(&self) -> ManifoldIndex {
        self.index
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    /// Entry `(row, col)`: amplitude on basis state `row` given unit input on `col`.
    pub fn entry(&self, row: usize, col: usize) -> C64 {
        assert!(row < self.dim() && col < self.dim(), "entry ({row}, {col}) out of range");
        self.entries[row][col]
    }

    /// Entry addressed by atom levels, `None` if either level is absent.
    pub fn coefficient(&self, to: AtomLevel, from: AtomLevel) -> Option<C64> {
        Some(self.entries[self.index.position(to)?][self.index.position(from)?])
    }

    pub fn column(&self, col: usize) -> Vec<C64> {
        (0..self.dim()).map(|r| self.entry(r, col)).collect()
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim(), "vector length does not match manifold dimension");
        (0..self.dim())
            .map(|r| (0..self.dim()).map(|c| self.entries[r][c] * v[c]).sum())
            .collect()
    }

    /// Matrix product `self · rhs`.
    pub fn compose(&self, rhs: &ManifoldPropagator) -> Vec<Vec<C64>> {
        assert_eq!(self.index, rhs.index, "composing propagators of different manifolds");
        let d = self.dim();
        (0..d)
            .map(|r| (0..d).map(|c| (0..d).map(|k| self.entries[r][k] * rhs.entries[k][c]).sum()).collect())
            .collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        (0..self.dim()).map(|r| self.entries[r][..self.dim()].to_vec()).collect()
    }

    /// `max |(U†U − I)_{rc}|`.
    pub fn unitarity_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let dot: C64 = (0..d).map(|k| self.entries[k][r].conj() * self.entries[k][c]).sum();
                let expect = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).norm());
            }
        }
        worst
    }

    /// Copy with `eps` added to entry `(row, col)`. Used as a negative control
    /// by the validation report.
    pub fn perturbed(&self, row: usize, col: usize, eps: C64) -> ManifoldPropagator {
        let mut out = *self;
        assert!(row < self.dim() && col < self.dim());
        out.entries[row][col] += eps;
        out
    }
}

/// Max-norm distance between two dense matrices of equal shape.
pub fn max_abs_diff(a: &[Vec<C64>], b: &[Vec<C64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).norm()))
        .fold(0.0, f64::max)
}
