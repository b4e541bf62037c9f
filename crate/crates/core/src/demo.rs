//! Stochastic mass-spring-damper and series RLC models, and their coupling.
//!
//! Noise intensities are not bounded here, so refutable systems can be built
//! on purpose.

use nalgebra::{dmatrix, DMatrix};

use crate::error::{Error, Result};
use crate::interconnect::{interconnect, InterconnectSpec};
use crate::linalg::TolerancePolicy;
use crate::model::{PhsForm, PhsParts, Sltis};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsdParams {
    pub m: f64,
    pub c: f64,
    pub kappa: f64,
    pub sigma: f64,
}

impl Default for MsdParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            c: 1.0,
            kappa: 1.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlcParams {
    pub r: f64,
    pub l: f64,
    pub cap: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for RlcParams {
    fn default() -> Self {
        Self {
            r: 1.0,
            l: 1.0,
            cap: 1.0,
            s1: 1.0,
            s2: 1.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::PreconditionFailed(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} = {v}")))
    }
}

/// Storage matrix `diag(κ, 1/m)` of the mass-spring-damper (position, momentum).
pub fn msd_q(p: &MsdParams) -> Result<DMatrix<f64>> {
    positive("m", p.m)?;
    positive("kappa", p.kappa)?;
    Ok(dmatrix![p.kappa, 0.0; 0.0, 1.0 / p.m])
}

/// Storage matrix `diag(1/c, 1/l)` of the RLC circuit (charge, flux).
pub fn rlc_q(p: &RlcParams) -> Result<DMatrix<f64>> {
    positive("l", p.l)?;
    positive("cap", p.cap)?;
    Ok(dmatrix![1.0 / p.cap, 0.0; 0.0, 1.0 / p.l])
}

/// `A = [[0,1],[-1,-c]]Q`, `𝔄 = [[0,0],[0,σ]]Q`, `B = (0,1)ᵀ`, `C = (0,1)Q`, `D = 0`.
pub fn msd(p: &MsdParams) -> Result<Sltis> {
    positive("c", p.c)?;
    finite("sigma", p.sigma)?;
    let q = msd_q(p)?;
    Sltis::new(
        dmatrix![0.0, 1.0; -1.0, -p.c] * &q,
        dmatrix![0.0; 1.0],
        vec![dmatrix![0.0, 0.0; 0.0, p.sigma] * &q],
        vec![dmatrix![0.0; 0.0]],
        dmatrix![0.0, 1.0] * &q,
        dmatrix![0.0],
    )
}

/// `A = [[0,1],[-1,-r]]Q`, `𝔄 = [[0,σ₁],[0,σ₂]]Q`, `B = (0,1)ᵀ`, `C = (0,1)Q`, `D = 0`.
pub fn rlc(p: &RlcParams) -> Result<Sltis> {
    positive("r", p.r)?;
    finite("s1", p.s1)?;
    finite("s2", p.s2)?;
    let q = rlc_q(p)?;
    Sltis::new(
        dmatrix![0.0, 1.0; -1.0, -p.r] * &q,
        dmatrix![0.0; 1.0],
        vec![dmatrix![0.0, p.s1; 0.0, p.s2] * &q],
        vec![dmatrix![0.0; 0.0]],
        dmatrix![0.0, 1.0] * &q,
        dmatrix![0.0],
    )
}

/// Port-Hamiltonian parameters of [`msd`]. Fails unless `σ² ≤ 2mc`.
pub fn msd_phs(p: &MsdParams) -> Result<PhsForm> {
    positive("c", p.c)?;
    let q = msd_q(p)?;
    let mut parts = PhsParts::zeros(2, 1, 1);
    parts.j = dmatrix![0.0, 1.0; -1.0, 0.0];
    parts.r = dmatrix![0.0, 0.0; 0.0, p.c - 0.5 * p.sigma * p.sigma / p.m];
    parts.q = q;
    parts.abar = vec![dmatrix![0.0, 0.0; 0.0, p.sigma]];
    parts.f = dmatrix![0.0; 1.0];
    PhsForm::new(parts, &TolerancePolicy::default())
}

/// Port-Hamiltonian parameters of [`rlc`]. Fails unless `2r ≥ σ₁²/c + σ₂²/l`.
pub fn rlc_phs(p: &RlcParams) -> Result<PhsForm> {
    positive("r", p.r)?;
    let q = rlc_q(p)?;
    let mut parts = PhsParts::zeros(2, 1, 1);
    parts.j = dmatrix![0.0, 1.0; -1.0, 0.0];
    let correction = p.s1 * p.s1 / p.cap + p.s2 * p.s2 / p.l;
    parts.r = dmatrix![0.0, 0.0; 0.0, p.r - 0.5 * correction];
    parts.q = q;
    parts.abar = vec![dmatrix![0.0, p.s1; 0.0, p.s2]];
    parts.f = dmatrix![0.0; 1.0];
    PhsForm::new(parts, &TolerancePolicy::default())
}

/// Gyrator coupling `u₁ = y₂`, `u₂ = −y₁`.
pub fn gyrator() -> InterconnectSpec {
    InterconnectSpec::new(1, dmatrix![0.0, 1.0; -1.0, 0.0])
}

/// MSD and RLC joined through [`gyrator`]: four states, no external ports.
pub fn coupled(m: &MsdParams, r: &RlcParams) -> Result<Sltis> {
    interconnect(&msd(m)?, &rlc(r)?, &gyrator(), &TolerancePolicy::default())
}

/// Storage matrix `blockdiag(Q_msd, Q_rlc)` of [`coupled`].
pub fn coupled_q(m: &MsdParams, r: &RlcParams) -> Result<DMatrix<f64>> {
    Ok(crate::linalg::block_diag(&msd_q(m)?, &rlc_q(r)?))
}
