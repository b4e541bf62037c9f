//! Passivity certificates for linear systems with quadratic storage, and the
//! passage between system matrices and port-Hamiltonian parameters.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::build_mq;
use crate::linalg::{
    block2x2, is_neg_semidefinite, is_pos_semidefinite, kernel_basis, pinv_svd, sqrt_psd,
    SymMatrix, TolerancePolicy,
};
use crate::model::{check_storage_dim, PhsForm, PhsParts, QuadraticStorage, Sltis};

/// The four passivity notions, from strongest to weakest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Notion {
    Passive,
    LocalSupermartingale,
    Supermartingale,
    StochasticallyPassive,
}

impl Notion {
    pub const ALL: [Notion; 4] = [
        Notion::Passive,
        Notion::LocalSupermartingale,
        Notion::Supermartingale,
        Notion::StochasticallyPassive,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Refuted,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Certified
        } else {
            Verdict::Refuted
        }
    }

    pub fn is_certified(self) -> bool {
        self == Verdict::Certified
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdicts {
    pub passive: Verdict,
    pub local_supermartingale: Verdict,
    pub supermartingale: Verdict,
    pub stochastically_passive: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassivityReport {
    /// `𝔐_Q ≤ 0`.
    pub lmi_ok: bool,
    pub lmi_max_eig: f64,
    pub lmi_tau: f64,
    /// `Q𝔄_j` skew and `Q𝔅_j = 0` for every channel.
    pub diffusion_ok: bool,
    pub diffusion_max_violation: f64,
    pub diffusion_tau: f64,
    /// The pathwise block matrix with `−QΣⱼ𝔄ⱼ²` in the corner is `≤ 0`.
    pub pathwise_lmi_ok: bool,
    pub pathwise_max_eig: f64,
    pub pathwise_tau: f64,
    pub verdicts: Verdicts,
}

impl PassivityReport {
    pub fn verdict(&self, notion: Notion) -> Verdict {
        match notion {
            Notion::Passive => self.verdicts.passive,
            Notion::LocalSupermartingale => self.verdicts.local_supermartingale,
            Notion::Supermartingale => self.verdicts.supermartingale,
            Notion::StochasticallyPassive => self.verdicts.stochastically_passive,
        }
    }
}

/// Decides all four notions for `sys` with storage `q`.
pub fn certify(sys: &Sltis, q: &QuadraticStorage) -> Result<PassivityReport> {
    check_storage_dim(sys, q)?;
    let tol = q.tol();
    let qm = q.q();

    let lmi = is_neg_semidefinite(&build_mq(sys, q)?, tol)?;

    let mut violation = 0.0f64;
    let mut scale = 0.0f64;
    let mut a_sq = DMatrix::zeros(sys.state_dim(), sys.state_dim());
    for (aj, bj) in sys.afrak().iter().zip(sys.bfrak()) {
        let qa = qm * aj;
        let qb = qm * bj;
        violation = violation
            .max((&qa + qa.transpose()).norm())
            .max(qb.norm());
        scale = scale.max(qa.norm()).max(qb.norm());
        a_sq += aj * aj;
    }
    let diffusion_tau = tol.tau_for_norm(scale);
    let diffusion_ok = violation <= diffusion_tau;

    let qa = qm * sys.a();
    let tl = &qa + qa.transpose() - qm * a_sq;
    let tr = qm * sys.b() - sys.c().transpose();
    let br = -(sys.d() + sys.d().transpose());
    let pathwise = SymMatrix::new(block2x2(&tl, &tr, &tr.transpose(), &br))?;
    let path = is_neg_semidefinite(&pathwise, tol)?;

    let passive = diffusion_ok && path.holds;
    let weak = Verdict::from_bool(lmi.holds);
    Ok(PassivityReport {
        lmi_ok: lmi.holds,
        lmi_max_eig: lmi.extreme_eigenvalue,
        lmi_tau: lmi.tau,
        diffusion_ok,
        diffusion_max_violation: violation,
        diffusion_tau,
        pathwise_lmi_ok: path.holds,
        pathwise_max_eig: path.extreme_eigenvalue,
        pathwise_tau: path.tau,
        verdicts: Verdicts {
            passive: Verdict::from_bool(passive),
            local_supermartingale: weak,
            supermartingale: weak,
            stochastically_passive: weak,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelCheck {
    pub holds: bool,
    pub worst_violation: f64,
    pub tau: f64,
}

/// `ker Q ⊆ ker A ∩ ker C ∩ ⋂ⱼ ker 𝔄ⱼ`.
pub fn check_kernel_condition(sys: &Sltis, q: &QuadraticStorage) -> Result<KernelCheck> {
    check_storage_dim(sys, q)?;
    let tol = q.tol();
    let mut scale = sys.a().norm().max(sys.c().norm());
    for aj in sys.afrak() {
        scale = scale.max(aj.norm());
    }
    let tau = tol.tau_for_norm(scale);
    let mut worst = 0.0f64;
    for u in kernel_basis(q.q(), tol)? {
        worst = worst.max((sys.a() * &u).norm()).max((sys.c() * &u).norm());
        for aj in sys.afrak() {
            worst = worst.max((aj * &u).norm());
        }
    }
    Ok(KernelCheck {
        holds: worst <= tau,
        worst_violation: worst,
        tau,
    })
}

/// Port-Hamiltonian parameters reproducing `sys` with storage `q`.
///
/// Uses `Ā = AQ†`, `C̄ = CQ†`, `𝔄̄ⱼ = 𝔄ⱼQ†`, and on `ker Q` the branch that
/// sends the input-output coupling through `−Bᵀ`. `R` and `P` vanish on `ker Q`.
pub fn extract_phs(sys: &Sltis, q: &QuadraticStorage) -> Result<PhsForm> {
    check_storage_dim(sys, q)?;
    let tol = q.tol();
    let qm = q.q();
    let psd = is_pos_semidefinite(q.sym(), tol)?;
    if !psd.holds {
        return Err(Error::PreconditionFailed(format!(
            "Q is not positive semidefinite (min eigenvalue {:.3e})",
            psd.extreme_eigenvalue
        )));
    }
    let kernel = check_kernel_condition(sys, q)?;
    if !kernel.holds {
        return Err(Error::PreconditionFailed(format!(
            "kernel condition fails (violation {:.3e})",
            kernel.worst_violation
        )));
    }
    let lmi = is_neg_semidefinite(&build_mq(sys, q)?, tol)?;
    if !lmi.holds {
        return Err(Error::PreconditionFailed(format!(
            "LMI fails (max eigenvalue of M_Q {:.3e})",
            lmi.extreme_eigenvalue
        )));
    }

    let d = sys.state_dim();
    let q_pinv = pinv_svd(qm, tol)?;
    let pi_r = qm * &q_pinv;
    let pi_c = DMatrix::identity(d, d) - &pi_r;

    let abar_a = sys.a() * &q_pinv;
    let cbar = sys.c() * &q_pinv;
    let abar: Vec<DMatrix<f64>> = sys.afrak().iter().map(|aj| aj * &q_pinv).collect();

    let mut g1 = abar_a;
    let mut g3 = -cbar;
    let mut g4 = -sys.d().clone();
    for (abj, bj) in abar.iter().zip(sys.bfrak()) {
        let q_abj = qm * abj;
        g1 += 0.5 * abj.transpose() * &q_abj;
        g3 += bj.transpose() * &q_abj;
        g4 += 0.5 * bj.transpose() * qm * bj;
    }
    // Only (J − R)Q is determined. R is confined to range Q, where it is a
    // congruence of 𝔐_Q; the ker/range coupling of g1 goes into J.
    let sym = &pi_r * (&g1 + g1.transpose()) * &pi_r;
    let cross = &pi_c * &g1 * &pi_r;
    let j = 0.5 * &pi_r * (&g1 - g1.transpose()) * &pi_r + &cross - cross.transpose();
    let g3 = g3 * &pi_r - sys.b().transpose() * &pi_c;
    let g2 = sys.b();

    let parts = PhsParts {
        j,
        r: -0.5 * sym,
        q: qm.clone(),
        abar,
        f: 0.5 * (g2 - g3.transpose()),
        p: -0.5 * (g2 + g3.transpose()),
        bfrak: sys.bfrak().to_vec(),
        s: -0.5 * (&g4 + g4.transpose()),
        n: -0.5 * (&g4 - g4.transpose()),
    };
    PhsForm::new(parts, tol)
}

/// System matrices of a port-Hamiltonian parameter set.
pub fn compile_phs(phs: &PhsForm) -> Result<Sltis> {
    let p = phs.parts();
    let q = &p.q;
    let mut drift_corr = DMatrix::zeros(phs.state_dim(), phs.state_dim());
    let mut out_corr = DMatrix::zeros(phs.state_dim(), phs.input_dim());
    let mut feed_corr = DMatrix::zeros(phs.input_dim(), phs.input_dim());
    for (abj, bj) in p.abar.iter().zip(&p.bfrak) {
        let abj_t_q = abj.transpose() * q;
        drift_corr += &abj_t_q * abj;
        out_corr += &abj_t_q * bj;
        feed_corr += bj.transpose() * q * bj;
    }
    Sltis::new(
        (&p.j - &p.r - 0.5 * drift_corr) * q,
        &p.f - &p.p,
        p.abar.iter().map(|abj| abj * q).collect(),
        p.bfrak.clone(),
        (&p.f + &p.p + out_corr).transpose() * q,
        &p.s + &p.n + 0.5 * feed_corr,
    )
}

/// Equivalent parameters in the coordinates `X̃ = Q^{1/2}X`, where the storage is `½‖x̃‖²`.
pub fn normalize_q(phs: &PhsForm, tol: &TolerancePolicy) -> Result<PhsForm> {
    let p = phs.parts();
    let h = sqrt_psd(&SymMatrix::new(p.q.clone())?, tol)?.into_matrix();
    let d = phs.state_dim();
    let parts = PhsParts {
        j: crate::linalg::antisymmetrize(&(&h * &p.j * &h)),
        r: crate::linalg::symmetrize(&(&h * &p.r * &h)),
        q: DMatrix::identity(d, d),
        abar: p.abar.iter().map(|a| &h * a * &h).collect(),
        f: &h * &p.f,
        p: &h * &p.p,
        bfrak: p.bfrak.iter().map(|b| &h * b).collect(),
        s: p.s.clone(),
        n: p.n.clone(),
    };
    PhsForm::new(parts, tol)
}
