//! System data model: SLTIS matrices, quadratic storage, port-Hamiltonian
//! parameters, control specifications, and the JSON description format.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, block2x2, ensure_finite, is_pos_semidefinite, max_abs, SymMatrix, TolerancePolicy,
};

/// Stochastic linear time-invariant input-state-output system
///
/// ```text
/// dX = (A X + B u) dt + Σ_j (𝔄_j X + 𝔅_j u) dW^j
///  Y = C X + D u
/// ```
///
/// `n` may be zero (uncontrolled system, or a fully interconnected one).
#[derive(Debug, Clone, PartialEq)]
pub struct Sltis {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    afrak: Vec<DMatrix<f64>>,
    bfrak: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Sltis {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        afrak: Vec<DMatrix<f64>>,
        bfrak: Vec<DMatrix<f64>>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let dim = a.nrows();
        if dim == 0 {
            return Err(Error::shape("state dimension d must be positive"));
        }
        let n = b.ncols();
        expect_shape("A", &a, dim, dim)?;
        expect_shape("B", &b, dim, n)?;
        expect_shape("C", &c, n, dim)?;
        expect_shape("D", &d, n, n)?;
        if afrak.len() != bfrak.len() {
            return Err(Error::shape(format!(
                "Afrak has {} entries but Bfrak has {}",
                afrak.len(),
                bfrak.len()
            )));
        }
        for (j, (aj, bj)) in afrak.iter().zip(&bfrak).enumerate() {
            expect_shape(&format!("Afrak[{j}]"), aj, dim, dim)?;
            expect_shape(&format!("Bfrak[{j}]"), bj, dim, n)?;
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            ensure_finite(m, name)?;
        }
        for (j, (aj, bj)) in afrak.iter().zip(&bfrak).enumerate() {
            ensure_finite(aj, &format!("Afrak[{j}]"))?;
            ensure_finite(bj, &format!("Bfrak[{j}]"))?;
        }
        Ok(Self {
            a,
            b,
            afrak,
            bfrak,
            c,
            d,
        })
    }

    /// The all-zero system of the given dimensions.
    pub fn zeros(d: usize, n: usize, k: usize) -> Result<Self> {
        Self::new(
            DMatrix::zeros(d, d),
            DMatrix::zeros(d, n),
            vec![DMatrix::zeros(d, d); k],
            vec![DMatrix::zeros(d, n); k],
            DMatrix::zeros(n, d),
            DMatrix::zeros(n, n),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.afrak.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn afrak(&self) -> &[DMatrix<f64>] {
        &self.afrak
    }

    pub fn bfrak(&self) -> &[DMatrix<f64>] {
        &self.bfrak
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Largest absolute entry-wise difference over all six matrix families.
    pub fn max_abs_diff(&self, other: &Sltis) -> Result<f64> {
        if self.state_dim() != other.state_dim()
            || self.input_dim() != other.input_dim()
            || self.noise_dim() != other.noise_dim()
        {
            return Err(Error::shape("systems have different dimensions"));
        }
        let mut worst = max_abs(&(&self.a - &other.a))
            .max(max_abs(&(&self.b - &other.b)))
            .max(max_abs(&(&self.c - &other.c)))
            .max(max_abs(&(&self.d - &other.d)));
        for j in 0..self.noise_dim() {
            worst = worst
                .max(max_abs(&(&self.afrak[j] - &other.afrak[j])))
                .max(max_abs(&(&self.bfrak[j] - &other.bfrak[j])));
        }
        Ok(worst)
    }
}

fn expect_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::shape(format!(
            "{name} has shape {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Quadratic storage `H(x) = ½⟨Qx, x⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStorage {
    q: SymMatrix,
    tol: TolerancePolicy,
}

impl QuadraticStorage {
    /// Accepts `q` if it is square, finite and symmetric within `tau(q)`.
    pub fn new(q: DMatrix<f64>, tol: TolerancePolicy) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::shape(format!(
                "Q must be square, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        ensure_finite(&q, "Q")?;
        let skew = asymmetry(&q);
        if skew > tol.tau(&q) {
            return Err(Error::structure("Q symmetry", skew));
        }
        Ok(Self {
            q: SymMatrix::new(q)?,
            tol,
        })
    }

    pub fn identity(dim: usize, tol: TolerancePolicy) -> Self {
        Self {
            q: SymMatrix::identity(dim),
            tol,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        self.q.matrix()
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.q
    }

    pub fn tol(&self) -> &TolerancePolicy {
        &self.tol
    }

    pub fn h(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.q() * x))
    }
}

/// Checks that `q` is a usable storage for `sys`.
pub fn validate_storage(
    sys: &Sltis,
    q: &DMatrix<f64>,
    tol: TolerancePolicy,
) -> Result<QuadraticStorage> {
    let storage = QuadraticStorage::new(q.clone(), tol)?;
    check_storage_dim(sys, &storage)?;
    Ok(storage)
}

pub(crate) fn check_storage_dim(sys: &Sltis, q: &QuadraticStorage) -> Result<()> {
    if q.dim() != sys.state_dim() {
        return Err(Error::shape(format!(
            "Q is {}x{} but the state dimension is {}",
            q.dim(),
            q.dim(),
            sys.state_dim()
        )));
    }
    Ok(())
}

/// Raw port-Hamiltonian parameters. Validate with [`PhsForm::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhsParts {
    pub j: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub abar: Vec<DMatrix<f64>>,
    pub f: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub bfrak: Vec<DMatrix<f64>>,
    pub s: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

impl PhsParts {
    pub fn zeros(d: usize, n: usize, k: usize) -> Self {
        Self {
            j: DMatrix::zeros(d, d),
            r: DMatrix::zeros(d, d),
            q: DMatrix::zeros(d, d),
            abar: vec![DMatrix::zeros(d, d); k],
            f: DMatrix::zeros(d, n),
            p: DMatrix::zeros(d, n),
            bfrak: vec![DMatrix::zeros(d, n); k],
            s: DMatrix::zeros(n, n),
            n: DMatrix::zeros(n, n),
        }
    }
}

/// Validated port-Hamiltonian parameter set
/// (`J = -Jᵀ`, `R = Rᵀ`, `Q = Qᵀ ≥ 0`, `S = Sᵀ`, `N = -Nᵀ`, `[[R, P], [Pᵀ, S]] ≥ 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct PhsForm {
    parts: PhsParts,
}

impl PhsForm {
    pub fn new(parts: PhsParts, tol: &TolerancePolicy) -> Result<Self> {
        let d = parts.j.nrows();
        if d == 0 {
            return Err(Error::shape("state dimension d must be positive"));
        }
        let n = parts.s.nrows();
        let k = parts.abar.len();
        expect_shape("J", &parts.j, d, d)?;
        expect_shape("R", &parts.r, d, d)?;
        expect_shape("Q", &parts.q, d, d)?;
        expect_shape("F", &parts.f, d, n)?;
        expect_shape("P", &parts.p, d, n)?;
        expect_shape("S", &parts.s, n, n)?;
        expect_shape("N", &parts.n, n, n)?;
        if parts.bfrak.len() != k {
            return Err(Error::shape(format!(
                "Abar has {k} entries but Bfrak has {}",
                parts.bfrak.len()
            )));
        }
        for j in 0..k {
            expect_shape(&format!("Abar[{j}]"), &parts.abar[j], d, d)?;
            expect_shape(&format!("Bfrak[{j}]"), &parts.bfrak[j], d, n)?;
            ensure_finite(&parts.abar[j], "Abar")?;
            ensure_finite(&parts.bfrak[j], "Bfrak")?;
        }
        for (name, m) in [
            ("J", &parts.j),
            ("R", &parts.r),
            ("Q", &parts.q),
            ("F", &parts.f),
            ("P", &parts.p),
            ("S", &parts.s),
            ("N", &parts.n),
        ] {
            ensure_finite(m, name)?;
        }

        check_skew("J skew-symmetry", &parts.j, tol)?;
        check_sym("R symmetry", &parts.r, tol)?;
        check_sym("Q symmetry", &parts.q, tol)?;
        check_sym("S symmetry", &parts.s, tol)?;
        check_skew("N skew-symmetry", &parts.n, tol)?;

        let q_psd = is_pos_semidefinite(&SymMatrix::new(parts.q.clone())?, tol)?;
        if !q_psd.holds {
            return Err(Error::structure(
                "Q positive semidefiniteness",
                q_psd.extreme_eigenvalue,
            ));
        }
        let block = block2x2(&parts.r, &parts.p, &parts.p.transpose(), &parts.s);
        let block_psd = is_pos_semidefinite(&SymMatrix::new(block)?, tol)?;
        if !block_psd.holds {
            return Err(Error::structure(
                "[[R, P], [P^T, S]] positive semidefiniteness",
                block_psd.extreme_eigenvalue,
            ));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &PhsParts {
        &self.parts
    }

    pub fn into_parts(self) -> PhsParts {
        self.parts
    }

    pub fn state_dim(&self) -> usize {
        self.parts.j.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.parts.s.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.parts.abar.len()
    }
}

fn check_skew(name: &str, m: &DMatrix<f64>, tol: &TolerancePolicy) -> Result<()> {
    let v = max_abs(&(m + m.transpose()));
    if v > tol.tau(m) {
        return Err(Error::structure(name, v));
    }
    Ok(())
}

fn check_sym(name: &str, m: &DMatrix<f64>, tol: &TolerancePolicy) -> Result<()> {
    let v = asymmetry(m);
    if v > tol.tau(m) {
        return Err(Error::structure(name, v));
    }
    Ok(())
}

/// Control processes supported by the simulator.
///
/// `StateFeedback(F)` applies `u = F x` at the left endpoint of every step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpec {
    #[default]
    Zero,
    Constant(Vec<f64>),
    PiecewiseConstant {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    StateFeedback(Vec<Vec<f64>>),
}

impl ControlSpec {
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        match self {
            ControlSpec::Zero => Ok(()),
            ControlSpec::Constant(v) => {
                if v.len() != n {
                    return Err(Error::shape(format!(
                        "constant control has length {}, expected {n}",
                        v.len()
                    )));
                }
                finite_slice(v, "constant control")
            }
            ControlSpec::PiecewiseConstant { times, values } => {
                if times.len() != values.len() || times.is_empty() {
                    return Err(Error::shape(
                        "piecewise-constant control needs one value per breakpoint",
                    ));
                }
                finite_slice(times, "control breakpoints")?;
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::PreconditionFailed(
                        "piecewise-constant breakpoints must be strictly increasing".into(),
                    ));
                }
                for v in values {
                    if v.len() != n {
                        return Err(Error::shape(format!(
                            "piecewise-constant value has length {}, expected {n}",
                            v.len()
                        )));
                    }
                    finite_slice(v, "piecewise-constant value")?;
                }
                Ok(())
            }
            ControlSpec::StateFeedback(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::shape(format!(
                        "state feedback gain must be {n}x{d}"
                    )));
                }
                rows.iter()
                    .try_for_each(|r| finite_slice(r, "state feedback gain"))
            }
        }
    }

    /// Writes `u(t, x)` into `out` (length `n`).
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            ControlSpec::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            ControlSpec::Constant(v) => out.copy_from_slice(v),
            ControlSpec::PiecewiseConstant { times, values } => {
                match times.iter().rposition(|&s| s <= t) {
                    Some(idx) => out.copy_from_slice(&values[idx]),
                    None => out.iter_mut().for_each(|v| *v = 0.0),
                }
            }
            ControlSpec::StateFeedback(rows) => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

fn finite_slice(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} has non-finite entries")))
    }
}

// ---------------------------------------------------------------------------
// JSON description format

/// A parsed model file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Sltis(Sltis),
    Phs(PhsForm),
}

/// A system file: the model plus an optional embedded storage candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDocument {
    pub model: Model,
    pub q: Option<DMatrix<f64>>,
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SltisDoc {
    d: usize,
    n: usize,
    k: usize,
    A: Rows,
    B: Rows,
    Afrak: Vec<Rows>,
    Bfrak: Vec<Rows>,
    C: Rows,
    D: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    Q: Option<Rows>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct PhsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    J: Rows,
    R: Rows,
    Q: Rows,
    Abar: Vec<Rows>,
    F: Rows,
    P: Rows,
    Bfrak: Vec<Rows>,
    S: Rows,
    N: Rows,
}

#[derive(Serialize, Deserialize)]
struct PhsEnvelope {
    phs: PhsDoc,
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(name: &str, rows: &Rows, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::shape(format!(
            "{name} has {} rows, expected {nrows}",
            rows.len()
        )));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::shape(format!(
                "{name} row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Reads a square matrix whose size is given by its number of rows.
pub fn matrix_from_rows(name: &str, rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    from_rows(name, &rows.to_vec(), rows.len(), ncols)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    to_rows(m)
}

/// Parses a system description (SLTIS or `{"phs": ...}`).
pub fn parse_system(document: &str) -> Result<SystemDocument> {
    let value: Value =
        serde_json::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
    let tol = TolerancePolicy::default();
    if value.get("phs").is_some() {
        let env: PhsEnvelope =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        let phs = phs_from_doc(&env.phs, &tol)?;
        Ok(SystemDocument {
            model: Model::Phs(phs),
            q: None,
        })
    } else {
        let doc: SltisDoc =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        let (d, n, k) = (doc.d, doc.n, doc.k);
        if doc.Afrak.len() != k || doc.Bfrak.len() != k {
            return Err(Error::shape(format!(
                "expected k={k} noise matrices, got {} Afrak and {} Bfrak",
                doc.Afrak.len(),
                doc.Bfrak.len()
            )));
        }
        let afrak = doc
            .Afrak
            .iter()
            .enumerate()
            .map(|(j, m)| from_rows(&format!("Afrak[{j}]"), m, d, d))
            .collect::<Result<Vec<_>>>()?;
        let bfrak = doc
            .Bfrak
            .iter()
            .enumerate()
            .map(|(j, m)| from_rows(&format!("Bfrak[{j}]"), m, d, n))
            .collect::<Result<Vec<_>>>()?;
        let sys = Sltis::new(
            from_rows("A", &doc.A, d, d)?,
            from_rows("B", &doc.B, d, n)?,
            afrak,
            bfrak,
            from_rows("C", &doc.C, n, d)?,
            from_rows("D", &doc.D, n, n)?,
        )?;
        let q = doc.Q.as_ref().map(|q| from_rows("Q", q, d, d)).transpose()?;
        Ok(SystemDocument {
            model: Model::Sltis(sys),
            q,
        })
    }
}

fn phs_from_doc(doc: &PhsDoc, tol: &TolerancePolicy) -> Result<PhsForm> {
    let d = doc.d.unwrap_or(doc.J.len());
    let n = doc.n.unwrap_or(doc.S.len());
    let k = doc.k.unwrap_or(doc.Abar.len());
    if doc.Abar.len() != k || doc.Bfrak.len() != k {
        return Err(Error::shape(format!(
            "expected k={k} noise matrices, got {} Abar and {} Bfrak",
            doc.Abar.len(),
            doc.Bfrak.len()
        )));
    }
    let parts = PhsParts {
        j: from_rows("J", &doc.J, d, d)?,
        r: from_rows("R", &doc.R, d, d)?,
        q: from_rows("Q", &doc.Q, d, d)?,
        abar: doc
            .Abar
            .iter()
            .enumerate()
            .map(|(j, m)| from_rows(&format!("Abar[{j}]"), m, d, d))
            .collect::<Result<_>>()?,
        f: from_rows("F", &doc.F, d, n)?,
        p: from_rows("P", &doc.P, d, n)?,
        bfrak: doc
            .Bfrak
            .iter()
            .enumerate()
            .map(|(j, m)| from_rows(&format!("Bfrak[{j}]"), m, d, n))
            .collect::<Result<_>>()?,
        s: from_rows("S", &doc.S, n, n)?,
        n: from_rows("N", &doc.N, n, n)?,
    };
    PhsForm::new(parts, tol)
}

pub fn serialize_sltis(sys: &Sltis, q: Option<&DMatrix<f64>>) -> String {
    let doc = SltisDoc {
        d: sys.state_dim(),
        n: sys.input_dim(),
        k: sys.noise_dim(),
        A: to_rows(sys.a()),
        B: to_rows(sys.b()),
        Afrak: sys.afrak().iter().map(to_rows).collect(),
        Bfrak: sys.bfrak().iter().map(to_rows).collect(),
        C: to_rows(sys.c()),
        D: to_rows(sys.d()),
        Q: q.map(to_rows),
    };
    serde_json::to_string_pretty(&doc).expect("plain numeric document serializes")
}

pub fn serialize_phs(phs: &PhsForm) -> String {
    let p = phs.parts();
    let env = PhsEnvelope {
        phs: PhsDoc {
            d: Some(phs.state_dim()),
            n: Some(phs.input_dim()),
            k: Some(phs.noise_dim()),
            J: to_rows(&p.j),
            R: to_rows(&p.r),
            Q: to_rows(&p.q),
            Abar: p.abar.iter().map(to_rows).collect(),
            F: to_rows(&p.f),
            P: to_rows(&p.p),
            Bfrak: p.bfrak.iter().map(to_rows).collect(),
            S: to_rows(&p.s),
            N: to_rows(&p.n),
        },
    };
    serde_json::to_string_pretty(&env).expect("plain numeric document serializes")
}

pub fn serialize_system(model: &Model) -> String {
    match model {
        Model::Sltis(s) => serialize_sltis(s, None),
        Model::Phs(p) => serialize_phs(p),
    }
}

/// Serializes a bare storage matrix as `{"Q": [[...]]}`.
pub fn serialize_q(q: &DMatrix<f64>) -> String {
    serde_json::json!({ "Q": to_rows(q) }).to_string()
}

/// Accepts either `{"Q": [[...]]}` or a bare array of rows.
pub fn parse_q(document: &str) -> Result<DMatrix<f64>> {
    let value: Value =
        serde_json::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
    let rows_value = value.get("Q").cloned().unwrap_or(value);
    let rows: Rows =
        serde_json::from_value(rows_value).map_err(|e| Error::Parse(e.to_string()))?;
    let ncols = rows.first().map_or(0, |r| r.len());
    from_rows("Q", &rows, rows.len(), ncols)
}
