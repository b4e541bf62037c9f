//! Infinitesimal quantities `ℒH` and `Σ` of a storage along a system.
//!
//! Linear systems with quadratic storage are handled in closed form through
//! the block matrix `𝔐_Q`. General systems are described by callbacks and
//! evaluated pointwise, with central finite differences standing in for
//! derivatives that are not supplied.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{block2x2, SymMatrix, TolerancePolicy};
use crate::model::{check_storage_dim, QuadraticStorage, Sltis};

/// Builds the symmetric `(d+n)×(d+n)` matrix `𝔐_Q`.
pub fn build_mq(sys: &Sltis, q: &QuadraticStorage) -> Result<SymMatrix> {
    check_storage_dim(sys, q)?;
    let qm = q.q();
    let qa = qm * sys.a();
    let mut tl = &qa + qa.transpose();
    let mut tr = qm * sys.b() - sys.c().transpose();
    let mut br = -(sys.d() + sys.d().transpose());
    for (aj, bj) in sys.afrak().iter().zip(sys.bfrak()) {
        let aj_t_q = aj.transpose() * qm;
        tl += &aj_t_q * aj;
        tr += &aj_t_q * bj;
        br += bj.transpose() * qm * bj;
    }
    let bl = tr.transpose();
    SymMatrix::new(block2x2(&tl, &tr, &bl, &br))
}

fn check_point(sys: &Sltis, x: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    if x.len() != sys.state_dim() || v.len() != sys.input_dim() {
        return Err(Error::shape(format!(
            "point has state length {} and input length {}, expected {} and {}",
            x.len(),
            v.len(),
            sys.state_dim(),
            sys.input_dim()
        )));
    }
    Ok(())
}

/// `ℒH(x, v) = ½ (x; v)ᵀ 𝔐_Q (x; v)`.
pub fn lh_linear(
    sys: &Sltis,
    q: &QuadraticStorage,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    check_point(sys, x, v)?;
    let mq = build_mq(sys, q)?;
    let z = stack(x, v);
    Ok(0.5 * z.dot(&(mq.matrix() * &z)))
}

/// `Σ_j(x, v) = ⟨x, Q𝔄_j x + Q𝔅_j v⟩`.
pub fn sigma_linear(
    sys: &Sltis,
    q: &QuadraticStorage,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_point(sys, x, v)?;
    check_storage_dim(sys, q)?;
    let qx = q.q() * x;
    Ok(DVector::from_iterator(
        sys.noise_dim(),
        sys.afrak()
            .iter()
            .zip(sys.bfrak())
            .map(|(aj, bj)| qx.dot(&(aj * x + bj * v))),
    ))
}

fn stack(x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + v.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), v.len()).copy_from(v);
    z
}

type VecField = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatField = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type JacField = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
type Scalar = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type Gradient = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type Hessian = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A general system `dX = b dt + σ dW`, `Y = f` with storage `H`.
///
/// Callbacks must be safe to call concurrently. Missing derivatives are
/// replaced by central differences with step `1e-5·max(1, ‖x‖)`.
pub struct NonlinearSystem {
    d: usize,
    n: usize,
    k: usize,
    b: VecField,
    sigma: MatField,
    f: VecField,
    h: Scalar,
    grad_h: Option<Gradient>,
    hess_h: Option<Hessian>,
    sigma_jacobian: Option<JacField>,
}

impl std::fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("d", &self.d)
            .field("n", &self.n)
            .field("k", &self.k)
            .field("grad_h", &self.grad_h.is_some())
            .field("hess_h", &self.hess_h.is_some())
            .field("sigma_jacobian", &self.sigma_jacobian.is_some())
            .finish()
    }
}

const FD_STEP: f64 = 1e-5;
// Second differences of H lose two orders of magnitude to cancellation, so
// they use a wider step.
const FD_STEP_SECOND: f64 = 1e-4;

impl NonlinearSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        n: usize,
        k: usize,
        b: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        sigma: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        h: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::shape("state dimension d must be positive"));
        }
        Ok(Self {
            d,
            n,
            k,
            b: Box::new(b),
            sigma: Box::new(sigma),
            f: Box::new(f),
            h: Box::new(h),
            grad_h: None,
            hess_h: None,
            sigma_jacobian: None,
        })
    }

    pub fn with_grad(
        mut self,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_h = Some(Box::new(g));
        self
    }

    pub fn with_hessian(
        mut self,
        hs: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hess_h = Some(Box::new(hs));
        self
    }

    /// Supplies `∂σʲ/∂x` for each noise channel `j` (k matrices of size d×d).
    pub fn with_sigma_jacobian(
        mut self,
        js: impl Fn(&DVector<f64>, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.sigma_jacobian = Some(Box::new(js));
        self
    }

    /// Callback form of a linear system with `H(x) = ½xᵀQx`, exact derivatives included.
    pub fn from_linear(sys: &Sltis, q: &QuadraticStorage) -> Result<Self> {
        check_storage_dim(sys, q)?;
        let (a, b, c, dd) = (
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
            sys.d().clone(),
        );
        let afrak = sys.afrak().to_vec();
        let bfrak = sys.bfrak().to_vec();
        let afrak_jac = afrak.clone();
        let (q1, q2, q3) = (q.q().clone(), q.q().clone(), q.q().clone());
        let (d, k) = (sys.state_dim(), sys.noise_dim());
        Ok(Self::new(
            d,
            sys.input_dim(),
            k,
            move |x, v| &a * x + &b * v,
            move |x, v| {
                let mut s = DMatrix::zeros(d, k);
                for j in 0..k {
                    s.set_column(j, &(&afrak[j] * x + &bfrak[j] * v));
                }
                s
            },
            move |x, v| &c * x + &dd * v,
            move |x| 0.5 * x.dot(&(&q1 * x)),
        )?
        .with_grad(move |x| &q2 * x)
        .with_hessian(move |_| q3.clone())
        .with_sigma_jacobian(move |_, _| afrak_jac.clone()))
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn noise_dim(&self) -> usize {
        self.k
    }

    fn check_point(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        if x.len() != self.d || v.len() != self.n {
            return Err(Error::shape(format!(
                "point has state length {} and input length {}, expected {} and {}",
                x.len(),
                v.len(),
                self.d,
                self.n
            )));
        }
        Ok(())
    }

    pub fn drift(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        checked_vec("b", (self.b)(x, v), self.d)
    }

    pub fn diffusion(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        checked_mat("sigma", (self.sigma)(x, v), self.d, self.k)
    }

    pub fn output(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        checked_vec("f", (self.f)(x, v), self.n)
    }

    pub fn storage(&self, x: &DVector<f64>) -> Result<f64> {
        let h = (self.h)(x);
        if !h.is_finite() {
            return Err(Error::Callback(format!("H returned non-finite value {h}")));
        }
        Ok(h)
    }

    /// `∇H(x)`, supplied or by central differences of `H`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.grad_h {
            Some(g) => checked_vec("gradH", g(x), self.d),
            None => self.fd_gradient(x),
        }
    }

    /// `D²H(x)`, supplied, or by differences of the gradient when only that is
    /// supplied, or by second differences of `H`.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match (&self.hess_h, &self.grad_h) {
            (Some(hs), _) => checked_mat("hessH", hs(x), self.d, self.d),
            (None, Some(_)) => self.fd_hessian_from_gradient(x),
            (None, None) => self.fd_hessian_from_values(x),
        }
    }

    fn fd_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let h = FD_STEP * x.norm().max(1.0);
        let mut g = DVector::zeros(self.d);
        let mut xp = x.clone();
        for i in 0..self.d {
            xp[i] = x[i] + h;
            let up = self.storage(&xp)?;
            xp[i] = x[i] - h;
            let dn = self.storage(&xp)?;
            xp[i] = x[i];
            g[i] = (up - dn) / (2.0 * h);
        }
        Ok(g)
    }

    fn fd_hessian_from_gradient(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = FD_STEP * x.norm().max(1.0);
        let mut hs = DMatrix::zeros(self.d, self.d);
        let mut xp = x.clone();
        for i in 0..self.d {
            xp[i] = x[i] + h;
            let up = self.gradient(&xp)?;
            xp[i] = x[i] - h;
            let dn = self.gradient(&xp)?;
            xp[i] = x[i];
            hs.set_column(i, &((up - dn) / (2.0 * h)));
        }
        Ok(crate::linalg::symmetrize(&hs))
    }

    fn fd_hessian_from_values(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = FD_STEP_SECOND * x.norm().max(1.0);
        let d = self.d;
        let h0 = self.storage(x)?;
        let mut hs = DMatrix::zeros(d, d);
        let mut xp = x.clone();
        for i in 0..d {
            xp[i] = x[i] + h;
            let up = self.storage(&xp)?;
            xp[i] = x[i] - h;
            let dn = self.storage(&xp)?;
            xp[i] = x[i];
            hs[(i, i)] = (up - 2.0 * h0 + dn) / (h * h);
            for j in 0..i {
                let mut corner = |si: f64, sj: f64| -> Result<f64> {
                    xp[i] = x[i] + si * h;
                    xp[j] = x[j] + sj * h;
                    let val = self.storage(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    val
                };
                let pp = corner(1.0, 1.0)?;
                let pm = corner(1.0, -1.0)?;
                let mp = corner(-1.0, 1.0)?;
                let mm = corner(-1.0, -1.0)?;
                let v = (pp - pm - mp + mm) / (4.0 * h * h);
                hs[(i, j)] = v;
                hs[(j, i)] = v;
            }
        }
        Ok(hs)
    }

    /// `∂σʲ/∂x` for every channel, supplied or by central differences.
    pub fn sigma_jacobians(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<Vec<DMatrix<f64>>> {
        if let Some(js) = &self.sigma_jacobian {
            let out = js(x, v);
            if out.len() != self.k {
                return Err(Error::Callback(format!(
                    "sigma Jacobian callback returned {} matrices, expected {}",
                    out.len(),
                    self.k
                )));
            }
            return out
                .into_iter()
                .map(|m| checked_mat("sigma Jacobian", m, self.d, self.d))
                .collect();
        }
        let h = FD_STEP * x.norm().max(1.0);
        let mut jac = vec![DMatrix::zeros(self.d, self.d); self.k];
        let mut xp = x.clone();
        for i in 0..self.d {
            xp[i] = x[i] + h;
            let up = self.diffusion(&xp, v)?;
            xp[i] = x[i] - h;
            let dn = self.diffusion(&xp, v)?;
            xp[i] = x[i];
            for (j, jm) in jac.iter_mut().enumerate() {
                jm.set_column(i, &((up.column(j) - dn.column(j)) / (2.0 * h)));
            }
        }
        Ok(jac)
    }
}

fn checked_vec(name: &str, v: DVector<f64>, len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Callback(format!(
            "{name} returned length {}, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Callback(format!("{name} returned non-finite values")));
    }
    Ok(v)
}

fn checked_mat(name: &str, m: DMatrix<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if m.shape() != (rows, cols) {
        return Err(Error::Callback(format!(
            "{name} returned shape {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Callback(format!("{name} returned non-finite values")));
    }
    Ok(m)
}

/// `ℒH(x,v) = ⟨∇H, b⟩ + ½ Σⱼ σʲᵀ D²H σʲ − ⟨v, f⟩`.
pub fn lh_nonlinear(sys: &NonlinearSystem, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    sys.check_point(x, v)?;
    let grad = sys.gradient(x)?;
    let hess = sys.hessian(x)?;
    let sigma = sys.diffusion(x, v)?;
    let trace: f64 = sigma
        .column_iter()
        .map(|s| s.dot(&(&hess * s)))
        .sum();
    Ok(grad.dot(&sys.drift(x, v)?) + 0.5 * trace - v.dot(&sys.output(x, v)?))
}

/// `Σ(x,v) = σ(x,v)ᵀ ∇H(x)`.
pub fn sigma_nonlinear(
    sys: &NonlinearSystem,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.check_point(x, v)?;
    Ok(sys.diffusion(x, v)?.transpose() * sys.gradient(x)?)
}

/// Drift of `H(X)` when the noise is read in the Stratonovich sense:
/// `⟨∇H, b − ½ Σⱼ (∂σʲ/∂x) σʲ⟩ − ⟨v, f⟩`.
///
/// Agrees with [`lh_nonlinear`] wherever `Σ` vanishes identically.
pub fn stratonovich_drift(
    sys: &NonlinearSystem,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    sys.check_point(x, v)?;
    let sigma = sys.diffusion(x, v)?;
    let jac = sys.sigma_jacobians(x, v)?;
    let mut corrected = sys.drift(x, v)?;
    for (j, jm) in jac.iter().enumerate() {
        corrected -= 0.5 * (jm * sigma.column(j));
    }
    Ok(sys.gradient(x)?.dot(&corrected) - v.dot(&sys.output(x, v)?))
}

/// Disagreement between supplied and finite-difference derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    /// Largest `‖supplied − fd‖ / max(1, ‖fd‖)` for the gradient, if supplied.
    pub gradient_rel_error: Option<f64>,
    pub hessian_rel_error: Option<f64>,
    pub ok: bool,
}

pub const DERIVATIVE_REL_TOL: f64 = 1e-4;

/// Compares supplied `∇H`/`D²H` against central differences on `probes`.
pub fn validate_derivatives(
    sys: &NonlinearSystem,
    probes: &[DVector<f64>],
) -> Result<DerivativeCheck> {
    let mut grad_err: Option<f64> = None;
    let mut hess_err: Option<f64> = None;
    for x in probes {
        if x.len() != sys.d {
            return Err(Error::shape(format!(
                "probe has length {}, expected {}",
                x.len(),
                sys.d
            )));
        }
        if let Some(g) = &sys.grad_h {
            let supplied = checked_vec("gradH", g(x), sys.d)?;
            let fd = sys.fd_gradient(x)?;
            let e = (supplied - &fd).norm() / fd.norm().max(1.0);
            grad_err = Some(grad_err.map_or(e, |w| w.max(e)));
        }
        if let Some(hs) = &sys.hess_h {
            let supplied = checked_mat("hessH", hs(x), sys.d, sys.d)?;
            let fd = sys.fd_hessian_from_values(x)?;
            let e = (supplied - &fd).norm() / fd.norm().max(1.0);
            hess_err = Some(hess_err.map_or(e, |w| w.max(e)));
        }
    }
    let ok = grad_err.is_none_or(|e| e <= DERIVATIVE_REL_TOL)
        && hess_err.is_none_or(|e| e <= DERIVATIVE_REL_TOL);
    Ok(DerivativeCheck {
        gradient_rel_error: grad_err,
        hessian_rel_error: hess_err,
        ok,
    })
}

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` Halton points in the box `[lower, upper]`, starting from index 0
/// (the lower corner).
pub fn halton_box(lower: &[f64], upper: &[f64], count: usize) -> Result<Vec<DVector<f64>>> {
    if lower.len() != upper.len() {
        return Err(Error::shape("box bounds have different lengths"));
    }
    if lower.len() > PRIMES.len() {
        return Err(Error::ResourceLimit(format!(
            "quasi-random probes support at most {} dimensions",
            PRIMES.len()
        )));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
        return Err(Error::PreconditionFailed(
            "box bounds must be finite with lower <= upper".into(),
        ));
    }
    Ok((0..count as u64)
        .map(|i| {
            DVector::from_iterator(
                lower.len(),
                lower.iter().zip(upper).zip(PRIMES).map(|((l, u), p)| {
                    l + (u - l) * radical_inverse(i, p as u64)
                }),
            )
        })
        .collect())
}

pub const DEFAULT_PROBES: usize = 256;

/// Result of a sampled check of `ℒH ≤ 0` and `Σ = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct SampledConditionReport {
    pub n_probes: usize,
    pub max_lh: f64,
    pub argmax_lh: Vec<f64>,
    pub max_sigma_norm: f64,
    pub argmax_sigma: Vec<f64>,
    pub tau: f64,
    pub lh_violated: bool,
    pub sigma_violated: bool,
    pub evidence: &'static str,
    pub assumptions: &'static str,
}

pub const SAMPLED_EVIDENCE_LABEL: &str = "sampled evidence, not a certificate";
pub const ASSUMPTIONS_LABEL: &str = "assumptions declared by user";

/// Evaluates `ℒH` and `‖Σ‖` at each probe `(x; v)` of length `d + n`.
pub fn check_conditions_sampled(
    sys: &NonlinearSystem,
    probes: &[DVector<f64>],
    tol: &TolerancePolicy,
) -> Result<SampledConditionReport> {
    if probes.is_empty() {
        return Err(Error::PreconditionFailed("probe set is empty".into()));
    }
    let (d, n) = (sys.d, sys.n);
    let mut max_lh = f64::NEG_INFINITY;
    let mut argmax_lh = Vec::new();
    let mut max_sigma = 0.0f64;
    let mut argmax_sigma = probes[0].iter().copied().collect();
    let mut scale = 0.0f64;
    for p in probes {
        if p.len() != d + n {
            return Err(Error::shape(format!(
                "probe has length {}, expected {}",
                p.len(),
                d + n
            )));
        }
        let x = p.rows(0, d).into_owned();
        let v = p.rows(d, n).into_owned();
        let lh = lh_nonlinear(sys, &x, &v)?;
        let s = sigma_nonlinear(sys, &x, &v)?.norm();
        scale = scale.max(lh.abs());
        if lh > max_lh {
            max_lh = lh;
            argmax_lh = p.iter().copied().collect();
        }
        if s > max_sigma {
            max_sigma = s;
            argmax_sigma = p.iter().copied().collect();
        }
    }
    let tau = tol.tau_for_norm(scale);
    Ok(SampledConditionReport {
        n_probes: probes.len(),
        max_lh,
        argmax_lh,
        max_sigma_norm: max_sigma,
        argmax_sigma,
        tau,
        lh_violated: max_lh > tau,
        sigma_violated: max_sigma > tau,
        evidence: SAMPLED_EVIDENCE_LABEL,
        assumptions: ASSUMPTIONS_LABEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use nalgebra::{dmatrix, dvector};

    fn id(d: usize) -> QuadraticStorage {
        QuadraticStorage::identity(d, TolerancePolicy::default())
    }

    #[test]
    fn mq_msd_and_rlc() {
        let msd = demo::msd(&demo::MsdParams::default()).unwrap();
        let mq = build_mq(&msd, &id(2)).unwrap();
        assert!((mq.matrix() - DMatrix::from_diagonal(&dvector![0.0, -1.0, 0.0])).amax() < 1e-15);
        let rlc = demo::rlc(&demo::RlcParams::default()).unwrap();
        assert!(build_mq(&rlc, &id(2)).unwrap().matrix().amax() < 1e-15);
        let zero = Sltis::zeros(2, 1, 1).unwrap();
        let q = QuadraticStorage::new(dmatrix![3.0, 1.0; 1.0, 2.0], TolerancePolicy::default())
            .unwrap();
        assert_eq!(build_mq(&zero, &q).unwrap().matrix().amax(), 0.0);
    }

    #[test]
    fn lh_and_sigma_msd() {
        let msd = demo::msd(&demo::MsdParams::default()).unwrap();
        let q = id(2);
        let v = DVector::zeros(1);
        assert!((lh_linear(&msd, &q, &dvector![0.0, 1.0], &v).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(lh_linear(&msd, &q, &dvector![1.0, 0.0], &v).unwrap(), 0.0);
        assert_eq!(lh_linear(&msd, &q, &dvector![0.0, 0.0], &v).unwrap(), 0.0);
        assert_eq!(sigma_linear(&msd, &q, &dvector![0.0, 1.0], &v).unwrap(), dvector![1.0]);
        assert!(lh_linear(&msd, &q, &dvector![0.0], &v).is_err());
    }

    #[test]
    fn nonlinear_wrap_matches_closed_form() {
        let msd = demo::msd(&demo::MsdParams::default()).unwrap();
        let nl = NonlinearSystem::from_linear(&msd, &id(2)).unwrap();
        let (x, v) = (dvector![0.0, 1.0], dvector![0.0]);
        assert!((lh_nonlinear(&nl, &x, &v).unwrap() + 0.5).abs() < 1e-14);
        assert!((sigma_nonlinear(&nl, &x, &v).unwrap()[0] - 1.0).abs() < 1e-14);
        assert!((stratonovich_drift(&nl, &x, &v).unwrap() + 1.5).abs() < 1e-14);
    }

    #[test]
    fn finite_differences_replace_missing_derivatives() {
        let msd = demo::msd(&demo::MsdParams::default()).unwrap();
        let (a, b) = (msd.a().clone(), msd.b().clone());
        let (af, c) = (msd.afrak()[0].clone(), msd.c().clone());
        let nl = NonlinearSystem::new(
            2,
            1,
            1,
            move |x, v| &a * x + &b * v,
            move |x, _| DMatrix::from_column_slice(2, 1, (&af * x).as_slice()),
            move |x, _| &c * x,
            |x| 0.5 * x.norm_squared(),
        )
        .unwrap();
        let (x, v) = (dvector![0.3, -0.7], dvector![0.2]);
        let exact = lh_linear(&msd, &id(2), &x, &v).unwrap();
        assert!((lh_nonlinear(&nl, &x, &v).unwrap() - exact).abs() < 1e-6);
        let strat = stratonovich_drift(&nl, &dvector![0.0, 1.0], &dvector![0.0]).unwrap();
        assert!((strat + 1.5).abs() < 1e-6);
    }

    #[test]
    fn trivial_nonlinear_cases() {
        let zero = NonlinearSystem::new(
            2,
            1,
            1,
            |_, _| DVector::zeros(2),
            |_, _| DMatrix::zeros(2, 1),
            |_, _| DVector::zeros(1),
            |x| x.norm_squared(),
        )
        .unwrap();
        let (x, v) = (dvector![0.4, 2.0], dvector![1.0]);
        assert_eq!(lh_nonlinear(&zero, &x, &v).unwrap(), 0.0);
        assert_eq!(sigma_nonlinear(&zero, &x, &v).unwrap(), dvector![0.0]);

        let flat = NonlinearSystem::new(
            2,
            1,
            1,
            |x, _| x.clone(),
            |x, _| DMatrix::from_column_slice(2, 1, x.as_slice()),
            |_, _| DVector::zeros(1),
            |_| 7.0,
        )
        .unwrap();
        assert!(lh_nonlinear(&flat, &x, &dvector![0.0]).unwrap().abs() < 1e-9);
        assert!(sigma_nonlinear(&flat, &x, &dvector![0.0]).unwrap().amax() < 1e-9);
    }

    #[test]
    fn non_finite_callbacks_are_errors() {
        let bad = NonlinearSystem::new(
            1,
            0,
            0,
            |_, _| dvector![f64::NAN],
            |_, _| DMatrix::zeros(1, 0),
            |_, _| DVector::zeros(0),
            |x| x.norm_squared(),
        )
        .unwrap();
        assert!(matches!(
            lh_nonlinear(&bad, &dvector![1.0], &DVector::zeros(0)),
            Err(Error::Callback(_))
        ));
    }

    #[test]
    fn sampled_checks() {
        let tol = TolerancePolicy::default();
        let msd = demo::msd(&demo::MsdParams::default()).unwrap();
        let nl = NonlinearSystem::from_linear(&msd, &id(2)).unwrap();
        let probes = halton_box(&[-1.0; 3], &[1.0; 3], DEFAULT_PROBES).unwrap();
        let r = check_conditions_sampled(&nl, &probes, &tol).unwrap();
        assert!(!r.lh_violated);
        assert!(r.sigma_violated);
        assert!(r.max_sigma_norm >= 1.0 - 1e-12);
        assert_eq!(r.evidence, SAMPLED_EVIDENCE_LABEL);

        let zero = NonlinearSystem::from_linear(&Sltis::zeros(2, 1, 1).unwrap(), &id(2)).unwrap();
        let r = check_conditions_sampled(&zero, &probes, &tol).unwrap();
        assert!(!r.lh_violated && !r.sigma_violated);

        let unstable = NonlinearSystem::new(
            2,
            0,
            0,
            |x, _| x.clone(),
            |_, _| DMatrix::zeros(2, 0),
            |_, _| DVector::zeros(0),
            |x| 0.5 * x.norm_squared(),
        )
        .unwrap();
        let probes2 = halton_box(&[-1.0; 2], &[1.0; 2], DEFAULT_PROBES).unwrap();
        let r = check_conditions_sampled(&unstable, &probes2, &tol).unwrap();
        assert!(r.lh_violated);
        assert!((r.max_lh - r.argmax_lh.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-6);
    }

    #[test]
    fn derivative_validation_flags_wrong_gradient() {
        let probes = halton_box(&[-2.0; 2], &[2.0; 2], 32).unwrap();
        let make = || {
            NonlinearSystem::new(
                2,
                0,
                0,
                |_, _| DVector::zeros(2),
                |_, _| DMatrix::zeros(2, 0),
                |_, _| DVector::zeros(0),
                |x| x[0].powi(4) + x[0] * x[1],
            )
            .unwrap()
        };
        let good = make()
            .with_grad(|x| dvector![4.0 * x[0].powi(3) + x[1], x[0]])
            .with_hessian(|x| dmatrix![12.0 * x[0] * x[0], 1.0; 1.0, 0.0]);
        assert!(validate_derivatives(&good, &probes).unwrap().ok);
        let wrong = make().with_grad(|x| dvector![4.0 * x[0].powi(3), x[0]]);
        let r = validate_derivatives(&wrong, &probes).unwrap();
        assert!(!r.ok);
        assert!(r.gradient_rel_error.unwrap() > 1e-2);
    }
}
