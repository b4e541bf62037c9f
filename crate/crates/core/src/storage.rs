//! Minimal quadratic storage from finite-horizon value functions.
//!
//! `V(T, x) = inf E ∫₀ᵀ ⟨u, Y⟩ dt = ⟨x, K(T) x⟩` is computed by backward
//! dynamic programming over controls held constant on steps of length `h`.
//! Each step is exact for the sampled-data problem: the cost-to-go of a
//! constant control is the solution of a linear matrix ODE on the augmented
//! state `(x, u)`, integrated over one step with classical Runge–Kutta.
//! `K(T)` is nonincreasing in `T` and `Q_min = −2 lim K(T)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::build_mq;
use crate::linalg::{
    is_neg_semidefinite, pinv_svd, pinv_with_threshold, sym_eigen, symmetrize, SymMatrix,
    TolerancePolicy,
};
use crate::model::{QuadraticStorage, Sltis};

pub const DIVERGENCE_LIMIT: f64 = 1e12;
const MAX_STEPS: f64 = 1e8;
const TRACE_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiConfig {
    pub step: f64,
    pub max_horizon: f64,
    /// Stop when `‖K_{i+1} − K_i‖ / max(1, ‖K_i‖)` falls below this.
    pub convergence_tol: f64,
    /// Added to the control curvature before the pseudoinverse.
    pub eps_reg: f64,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_horizon: 200.0,
            convergence_tol: 1e-8,
            eps_reg: 0.0,
        }
    }
}

impl RiccatiConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.step.is_finite()
            && self.max_horizon > 0.0
            && self.max_horizon.is_finite()
            && self.convergence_tol > 0.0
            && self.eps_reg >= 0.0
            && self.eps_reg.is_finite();
        if !ok {
            return Err(Error::PreconditionFailed(format!(
                "invalid storage configuration {self:?}"
            )));
        }
        if self.max_horizon / self.step > MAX_STEPS {
            return Err(Error::ResourceLimit(format!(
                "horizon/step ratio {:.3e} exceeds {MAX_STEPS:.0e}",
                self.max_horizon / self.step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSample {
    pub horizon: f64,
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageResult {
    pub q_min: SymMatrix,
    /// `K(T)` at roughly evenly spaced horizons, last entry at the final step.
    pub k_trace: Vec<(f64, DMatrix<f64>)>,
    pub riccati_residual: f64,
    /// Largest eigenvalue of `𝔐_{Q_min}`.
    pub lmi_margin: f64,
    pub positive_definite: bool,
    pub converged: bool,
    pub horizon: f64,
    pub steps: usize,
    pub last_relative_change: f64,
}

/// Augmented generator data on `z = (x, u)` with `u` frozen.
struct Augmented {
    drift: DMatrix<f64>,
    noise: Vec<DMatrix<f64>>,
    supply: DMatrix<f64>,
    d: usize,
    n: usize,
}

impl Augmented {
    fn new(sys: &Sltis) -> Self {
        let (d, n) = (sys.state_dim(), sys.input_dim());
        let mut drift = DMatrix::zeros(d + n, d + n);
        drift.view_mut((0, 0), (d, d)).copy_from(sys.a());
        drift.view_mut((0, d), (d, n)).copy_from(sys.b());
        let noise = sys
            .afrak()
            .iter()
            .zip(sys.bfrak())
            .map(|(aj, bj)| {
                let mut g = DMatrix::zeros(d + n, d + n);
                g.view_mut((0, 0), (d, d)).copy_from(aj);
                g.view_mut((0, d), (d, n)).copy_from(bj);
                g
            })
            .collect();
        let mut supply = DMatrix::zeros(d + n, d + n);
        let half_ct = 0.5 * sys.c().transpose();
        supply.view_mut((0, d), (d, n)).copy_from(&half_ct);
        supply.view_mut((d, 0), (n, d)).copy_from(&half_ct.transpose());
        supply
            .view_mut((d, d), (n, n))
            .copy_from(&(0.5 * (sys.d() + sys.d().transpose())));
        Self {
            drift,
            noise,
            supply,
            d,
            n,
        }
    }

    /// `−dΠ/dt` of the backward cost-to-go equation.
    fn rate(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = self.drift.transpose() * p + p * &self.drift + &self.supply;
        for g in &self.noise {
            r += g.transpose() * p * g;
        }
        r
    }

    /// Cost-to-go over one step of length `h` ending in `xᵀKx`.
    fn step(&self, k: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.d + self.n, self.d + self.n);
        p.view_mut((0, 0), (self.d, self.d)).copy_from(k);
        let k1 = self.rate(&p);
        let k2 = self.rate(&(&p + (0.5 * h) * &k1));
        let k3 = self.rate(&(&p + (0.5 * h) * &k2));
        let k4 = self.rate(&(&p + h * &k3));
        symmetrize(&(p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)))
    }
}

/// Minimizes `xᵀPx + 2xᵀLu + uᵀGu` over `u`, returning the quadratic form in `x`.
fn minimize_control(
    pi: &DMatrix<f64>,
    d: usize,
    n: usize,
    eps_reg: f64,
    tol: &TolerancePolicy,
) -> Result<DMatrix<f64>> {
    let pxx = pi.view((0, 0), (d, d)).into_owned();
    if n == 0 {
        return Ok(pxx);
    }
    let l = pi.view((0, d), (d, n)).into_owned();
    let mut g = pi.view((d, d), (n, n)).into_owned();
    for i in 0..n {
        g[(i, i)] += eps_reg;
    }
    let scale = pi.norm();
    let tau_g = tol.rel_tol * g.norm() + 64.0 * f64::EPSILON * scale;
    let (eigs, _) = sym_eigen(&SymMatrix::new(g.clone())?)?;
    if let Some(&min_eig) = eigs.first() {
        if min_eig < -tau_g {
            return Err(Error::Infeasible(format!(
                "control curvature has negative eigenvalue {min_eig:.3e}; the one-step cost is unbounded below"
            )));
        }
    }
    let g_pinv = pinv_with_threshold(&g, tau_g)?;
    let incompat = ((DMatrix::identity(n, n) - &g * &g_pinv) * l.transpose()).norm();
    if incompat > tol.rel_tol * scale + tol.abs_floor {
        return Err(Error::Infeasible(format!(
            "supply has a linear term {incompat:.3e} along a direction of zero control curvature"
        )));
    }
    Ok(symmetrize(&(pxx - &l * g_pinv * l.transpose())))
}

/// Backward value iteration from `K(0) = 0` up to convergence or `max_horizon`.
pub fn value_iteration(
    sys: &Sltis,
    cfg: &RiccatiConfig,
    tol: &TolerancePolicy,
) -> Result<StorageResult> {
    cfg.validate()?;
    let d = sys.state_dim();
    let aug = Augmented::new(sys);
    let h = cfg.step;
    let max_steps = (cfg.max_horizon / h).ceil().max(1.0) as usize;
    let stride = (max_steps / TRACE_SAMPLES).max(1);

    let mut k = DMatrix::zeros(d, d);
    let mut trace = vec![(0.0, k.clone())];
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut steps = 0usize;
    while steps < max_steps {
        let pi = aug.step(&k, h);
        let next = minimize_control(&pi, d, sys.input_dim(), cfg.eps_reg, tol)?;
        steps += 1;
        let norm = next.norm();
        if !norm.is_finite() {
            return Err(Error::NumericalDivergence(format!(
                "value function became non-finite at horizon {:.6}",
                steps as f64 * h
            )));
        }
        if norm > DIVERGENCE_LIMIT {
            return Err(Error::Infeasible(format!(
                "value function diverged (‖K‖ = {norm:.3e}) at horizon {:.6}",
                steps as f64 * h
            )));
        }
        change = (&next - &k).norm() / k.norm().max(1.0);
        k = next;
        if steps.is_multiple_of(stride) {
            trace.push((steps as f64 * h, k.clone()));
        }
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    if trace.last().map(|(t, _)| *t) != Some(steps as f64 * h) {
        trace.push((steps as f64 * h, k.clone()));
    }

    let q_min = SymMatrix::new(-2.0 * &k)?;
    let storage = QuadraticStorage::new(q_min.matrix().clone(), *tol)?;
    let lmi = is_neg_semidefinite(&build_mq(sys, &storage)?, tol)?;
    let residual = riccati_residual(sys, q_min.matrix(), tol)?;
    let (eigs, _) = sym_eigen(&q_min)?;
    let positive_definite = eigs.first().is_none_or(|&e| e > tol.tau(q_min.matrix()));
    Ok(StorageResult {
        q_min,
        k_trace: trace,
        riccati_residual: residual.max(),
        lmi_margin: lmi.extreme_eigenvalue,
        positive_definite,
        converged,
        horizon: steps as f64 * h,
        steps,
        last_relative_change: change,
    })
}

/// The three lines of the generalized algebraic Riccati system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiResidual {
    /// `‖AᵀQ + QA + Σ𝔄ᵀQ𝔄 − 𝒮𝒩†𝒮ᵀ‖_F`
    pub equation: f64,
    /// `max(0, λ_max(𝒩))`
    pub curvature: f64,
    /// `‖𝒮(I − 𝒩𝒩†)‖_F`
    pub range: f64,
}

impl RiccatiResidual {
    pub fn max(&self) -> f64 {
        self.equation.max(self.curvature).max(self.range)
    }
}

/// Residual of `Q` in the generalized Riccati system with
/// `𝒮(Q) = QB + Σ𝔄ᵀQ𝔅 − Cᵀ` and `𝒩(Q) = Σ𝔅ᵀQ𝔅 − (D + Dᵀ)`.
pub fn riccati_residual(
    sys: &Sltis,
    q: &DMatrix<f64>,
    tol: &TolerancePolicy,
) -> Result<RiccatiResidual> {
    let d = sys.state_dim();
    let n = sys.input_dim();
    if q.shape() != (d, d) {
        return Err(Error::shape(format!(
            "Q is {}x{}, expected {d}x{d}",
            q.nrows(),
            q.ncols()
        )));
    }
    let mut lyap = sys.a().transpose() * q + q * sys.a();
    let mut s = q * sys.b() - sys.c().transpose();
    let mut nn = -(sys.d() + sys.d().transpose());
    for (aj, bj) in sys.afrak().iter().zip(sys.bfrak()) {
        let aj_t_q = aj.transpose() * q;
        lyap += &aj_t_q * aj;
        s += &aj_t_q * bj;
        nn += bj.transpose() * q * bj;
    }
    let nn = symmetrize(&nn);
    let n_pinv = pinv_svd(&nn, tol)?;
    let equation = (lyap - &s * &n_pinv * s.transpose()).norm();
    let (eigs, _) = sym_eigen(&SymMatrix::new(nn.clone())?)?;
    let curvature = eigs.last().copied().unwrap_or(0.0).max(0.0);
    let range = (&s * (DMatrix::identity(n, n) - &nn * &n_pinv)).norm();
    Ok(RiccatiResidual {
        equation,
        curvature,
        range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefinitenessCheck {
    pub positive_definite: bool,
    pub min_eigenvalue: f64,
    pub tau: f64,
    pub observable: bool,
    /// Observable but not positive definite: the solver was not accurate enough.
    pub solver_accuracy_failure: bool,
}

/// Checks `Q_min > 0`, which must hold for observable feasible systems.
pub fn check_minimal_storage_positive_definite(
    sys: &Sltis,
    res: &StorageResult,
    tol: &TolerancePolicy,
) -> Result<DefinitenessCheck> {
    let (eigs, _) = sym_eigen(&res.q_min)?;
    let min_eigenvalue = eigs.first().copied().unwrap_or(0.0);
    let tau = tol.tau(res.q_min.matrix());
    let positive_definite = min_eigenvalue > tau;
    let observable = crate::observability::unobservable_subspace(sys, tol)?.observable;
    Ok(DefinitenessCheck {
        positive_definite,
        min_eigenvalue,
        tau,
        observable,
        solver_accuracy_failure: observable && !positive_definite,
    })
}

/// Largest eigenvalue of `K(T₂) − K(T₁)` over consecutive trace samples.
pub fn max_trace_increase(trace: &[(f64, DMatrix<f64>)]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for w in trace.windows(2) {
        let (eigs, _) = sym_eigen(&SymMatrix::new(&w[1].1 - &w[0].1)?)?;
        worst = worst.max(eigs.last().copied().unwrap_or(0.0));
    }
    Ok(if worst.is_finite() { worst } else { 0.0 })
}
