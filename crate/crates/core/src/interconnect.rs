//! Composition of two systems through `(u^c(1); u^c(2)) = K (Y^c(1); Y^c(2))`.
//!
//! The first `n_hat` inputs and outputs of each system are the coupled
//! channels (after an optional input permutation); the rest stay external.
//! Both systems share the Wiener process. A system with fewer noise channels
//! is padded with zero channels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, max_abs, TolerancePolicy};
use crate::model::{matrix_from_rows, matrix_to_rows, PhsForm, QuadraticStorage, Sltis};
use crate::passivity::{compile_phs, extract_phs};

#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectSpec {
    pub n_hat: usize,
    /// `2·n_hat × 2·n_hat` coupling matrix.
    pub k: DMatrix<f64>,
    /// `perm[i]` is the original input index placed at position `i`.
    pub perm1: Option<Vec<usize>>,
    pub perm2: Option<Vec<usize>>,
}

impl InterconnectSpec {
    pub fn new(n_hat: usize, k: DMatrix<f64>) -> Self {
        Self {
            n_hat,
            k,
            perm1: None,
            perm2: None,
        }
    }

    /// Parses `{"n_hat": 1, "K": [[...]], "perm1"?: [...], "perm2"?: [...]}`.
    pub fn from_json(document: &str) -> Result<Self> {
        let doc: CouplingDoc =
            serde_json::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
        let k = matrix_from_rows("K", &doc.k, 2 * doc.n_hat)?;
        Ok(Self {
            n_hat: doc.n_hat,
            k,
            perm1: doc.perm1,
            perm2: doc.perm2,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CouplingDoc {
            n_hat: self.n_hat,
            k: matrix_to_rows(&self.k),
            perm1: self.perm1.clone(),
            perm2: self.perm2.clone(),
        })
        .expect("plain numeric document serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct CouplingDoc {
    n_hat: usize,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perm1: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perm2: Option<Vec<usize>>,
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::shape(format!(
            "input permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::shape("input permutation is not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Reorders the inputs (and matching outputs) of `sys`.
pub fn permute_inputs(sys: &Sltis, perm: &[usize]) -> Result<Sltis> {
    let n = sys.input_dim();
    check_perm(perm, n)?;
    let cols = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), n, |i, j| m[(i, perm[j])]);
    let rows = |m: &DMatrix<f64>| DMatrix::from_fn(n, m.ncols(), |i, j| m[(perm[i], j)]);
    Sltis::new(
        sys.a().clone(),
        cols(sys.b()),
        sys.afrak().to_vec(),
        sys.bfrak().iter().map(cols).collect(),
        rows(sys.c()),
        DMatrix::from_fn(n, n, |i, j| sys.d()[(perm[i], perm[j])]),
    )
}

fn pad_noise(sys: &Sltis, k: usize) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let (d, n) = (sys.state_dim(), sys.input_dim());
    let mut af = sys.afrak().to_vec();
    let mut bf = sys.bfrak().to_vec();
    af.resize(k, DMatrix::zeros(d, d));
    bf.resize(k, DMatrix::zeros(d, n));
    (af, bf)
}

struct Split {
    bc: DMatrix<f64>,
    be: DMatrix<f64>,
    cc: DMatrix<f64>,
    ce: DMatrix<f64>,
    dc: DMatrix<f64>,
    dce: DMatrix<f64>,
    dec: DMatrix<f64>,
    de: DMatrix<f64>,
}

fn split(sys: &Sltis, nh: usize) -> Split {
    let ne = sys.input_dim() - nh;
    Split {
        bc: sys.b().columns(0, nh).into_owned(),
        be: sys.b().columns(nh, ne).into_owned(),
        cc: sys.c().rows(0, nh).into_owned(),
        ce: sys.c().rows(nh, ne).into_owned(),
        dc: sys.d().view((0, 0), (nh, nh)).into_owned(),
        dce: sys.d().view((0, nh), (nh, ne)).into_owned(),
        dec: sys.d().view((nh, 0), (ne, nh)).into_owned(),
        de: sys.d().view((nh, nh), (ne, ne)).into_owned(),
    }
}

/// Condition number `σ_max / σ_min` (infinite when singular).
fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = crate::linalg::singular_values(m);
    let max = sv[0];
    let min = sv[sv.len() - 1];
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// The composed system with state `(X(1), X(2))` and the external channels
/// `(u^e(1), u^e(2))` as input.
pub fn interconnect(
    sys1: &Sltis,
    sys2: &Sltis,
    spec: &InterconnectSpec,
    tol: &TolerancePolicy,
) -> Result<Sltis> {
    let nh = spec.n_hat;
    if nh > sys1.input_dim().min(sys2.input_dim()) {
        return Err(Error::shape(format!(
            "n_hat = {nh} exceeds the input dimensions {} and {}",
            sys1.input_dim(),
            sys2.input_dim()
        )));
    }
    if spec.k.shape() != (2 * nh, 2 * nh) {
        return Err(Error::shape(format!(
            "K is {}x{}, expected {}x{}",
            spec.k.nrows(),
            spec.k.ncols(),
            2 * nh,
            2 * nh
        )));
    }
    crate::linalg::ensure_finite(&spec.k, "K")?;
    let s1 = match &spec.perm1 {
        Some(p) => permute_inputs(sys1, p)?,
        None => sys1.clone(),
    };
    let s2 = match &spec.perm2 {
        Some(p) => permute_inputs(sys2, p)?,
        None => sys2.clone(),
    };

    let p1 = split(&s1, nh);
    let p2 = split(&s2, nh);
    let bc = block_diag(&p1.bc, &p2.bc);
    let be = block_diag(&p1.be, &p2.be);
    let cc = block_diag(&p1.cc, &p2.cc);
    let ce = block_diag(&p1.ce, &p2.ce);
    let dc = block_diag(&p1.dc, &p2.dc);
    let dce = block_diag(&p1.dce, &p2.dce);
    let dec = block_diag(&p1.dec, &p2.dec);
    let de = block_diag(&p1.de, &p2.de);

    let frak_d = DMatrix::identity(2 * nh, 2 * nh) - &spec.k * &dc;
    let cond = condition_number(&frak_d);
    let limit = 1.0 / tol.tau(&frak_d);
    // Negated so that a NaN condition number is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(cond < limit) {
        return Err(Error::SingularCoupling {
            condition: cond,
            limit,
        });
    }
    let m = if nh == 0 {
        DMatrix::zeros(0, 0)
    } else {
        frak_d
            .clone()
            .lu()
            .solve(&spec.k)
            .ok_or(Error::SingularCoupling {
                condition: f64::INFINITY,
                limit,
            })?
    };
    let mcc = &m * &cc;
    let mdce = &m * &dce;

    let k = s1.noise_dim().max(s2.noise_dim());
    let (af1, bf1) = pad_noise(&s1, k);
    let (af2, bf2) = pad_noise(&s2, k);
    let mut afrak = Vec::with_capacity(k);
    let mut bfrak = Vec::with_capacity(k);
    for j in 0..k {
        let a = block_diag(&af1[j], &af2[j]);
        let b1 = &bf1[j];
        let b2 = &bf2[j];
        let bfc = block_diag(&b1.columns(0, nh).into_owned(), &b2.columns(0, nh).into_owned());
        let bfe = block_diag(
            &b1.columns(nh, s1.input_dim() - nh).into_owned(),
            &b2.columns(nh, s2.input_dim() - nh).into_owned(),
        );
        afrak.push(a + &bfc * &mcc);
        bfrak.push(&bfc * &mdce + bfe);
    }

    Sltis::new(
        block_diag(s1.a(), s2.a()) + &bc * &mcc,
        &bc * &mdce + be,
        afrak,
        bfrak,
        ce + &dec * &mcc,
        &dec * &mdce + de,
    )
}

/// Interconnects two port-Hamiltonian systems through a skew coupling and
/// returns port-Hamiltonian parameters of the result with `Q = blockdiag(Q(1), Q(2))`.
pub fn interconnect_phs(
    phs1: &PhsForm,
    phs2: &PhsForm,
    spec: &InterconnectSpec,
    tol: &TolerancePolicy,
) -> Result<PhsForm> {
    let skew = max_abs(&(&spec.k + spec.k.transpose()));
    if skew > tol.tau(&spec.k) {
        return Err(Error::PreconditionFailed(format!(
            "coupling K must be skew-symmetric (‖K + Kᵀ‖ = {skew:.3e})"
        )));
    }
    for (i, phs) in [phs1, phs2].iter().enumerate() {
        let n = &phs.parts().n;
        if max_abs(n) > tol.tau(n) {
            return Err(Error::PreconditionFailed(format!(
                "system {} has nonzero N",
                i + 1
            )));
        }
    }
    let sys = interconnect(&compile_phs(phs1)?, &compile_phs(phs2)?, spec, tol)?;
    let q = block_diag(&phs1.parts().q, &phs2.parts().q);
    extract_phs(&sys, &QuadraticStorage::new(q, *tol)?)
}
