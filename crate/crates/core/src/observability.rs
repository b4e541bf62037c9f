//! Observability of a stochastic linear system.
//!
//! A state is unobservable iff `C·w·x = 0` for every word `w` over the
//! alphabet `{A, 𝔄_1, …, 𝔄_k}`. The words are explored breadth-first and
//! only rows that raise the rank are extended, which by linearity spans the
//! same row space as the full word set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{kernel_basis, rank_info, rank_svd, TolerancePolicy};
use crate::model::Sltis;

pub const DEFAULT_WORD_CAP: usize = 100_000;

/// A letter of the word alphabet: `0` is `A`, `j ≥ 1` is `𝔄_j`.
pub type Letter = usize;

/// One kept row `e_iᵀ C w` of the observability matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordRow {
    pub output: usize,
    pub word: Vec<Letter>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityMatrix {
    /// `d × N`, columns `(e_iᵀ C w)ᵀ`.
    pub matrix: DMatrix<f64>,
    pub rows: Vec<WordRow>,
    /// Number of word lengths explored after the empty word.
    pub levels: usize,
    /// True when a level added nothing, so longer words cannot add rank.
    pub saturated: bool,
    pub words_evaluated: usize,
}

fn letter_matrix(sys: &Sltis, l: Letter) -> &DMatrix<f64> {
    if l == 0 {
        sys.a()
    } else {
        &sys.afrak()[l - 1]
    }
}

/// Stacks `(C w)ᵀ` over words of length at most `max_word_length`, keeping
/// only rows that increase the rank.
pub fn observability_matrix(
    sys: &Sltis,
    max_word_length: usize,
    tol: &TolerancePolicy,
) -> Result<ObservabilityMatrix> {
    observability_matrix_capped(sys, max_word_length, tol, DEFAULT_WORD_CAP)
}

pub fn observability_matrix_capped(
    sys: &Sltis,
    max_word_length: usize,
    tol: &TolerancePolicy,
    word_cap: usize,
) -> Result<ObservabilityMatrix> {
    let d = sys.state_dim();
    let alphabet = 1 + sys.noise_dim();
    let mut kept: Vec<DVector<f64>> = Vec::new();
    let mut rows: Vec<WordRow> = Vec::new();
    let mut words_evaluated = 0usize;
    let mut rank = 0usize;

    let mut try_add = |v: DVector<f64>, row: WordRow, kept: &mut Vec<DVector<f64>>| -> Result<bool> {
        if rank == d {
            return Ok(false);
        }
        let mut m = DMatrix::zeros(d, kept.len() + 1);
        for (j, c) in kept.iter().enumerate() {
            m.set_column(j, c);
        }
        m.set_column(kept.len(), &v);
        let r = rank_svd(&m, tol)?;
        if r > rank {
            rank = r;
            kept.push(v);
            rows.push(row);
            Ok(true)
        } else {
            Ok(false)
        }
    };

    let mut frontier: Vec<(DVector<f64>, WordRow)> = Vec::new();
    for i in 0..sys.input_dim() {
        words_evaluated += 1;
        let v = sys.c().row(i).transpose();
        let row = WordRow {
            output: i,
            word: Vec::new(),
        };
        if try_add(v.clone(), row.clone(), &mut kept)? {
            frontier.push((v, row));
        }
    }

    let mut levels = 0usize;
    let mut saturated = frontier.is_empty();
    while !saturated && levels < max_word_length {
        levels += 1;
        let mut next = Vec::new();
        for (v, row) in &frontier {
            for l in 0..alphabet {
                words_evaluated += 1;
                if words_evaluated > word_cap {
                    return Err(Error::ResourceLimit(format!(
                        "observability word count exceeded the cap of {word_cap}"
                    )));
                }
                let w = letter_matrix(sys, l).transpose() * v;
                let mut word = row.word.clone();
                word.push(l);
                let nrow = WordRow {
                    output: row.output,
                    word,
                };
                if try_add(w.clone(), nrow.clone(), &mut kept)? {
                    next.push((w, nrow));
                }
            }
        }
        saturated = next.is_empty();
        frontier = next;
    }
    if !saturated && frontier.is_empty() {
        saturated = true;
    }

    let mut matrix = DMatrix::zeros(d, kept.len());
    for (j, c) in kept.iter().enumerate() {
        matrix.set_column(j, c);
    }
    Ok(ObservabilityMatrix {
        matrix,
        rows,
        levels,
        saturated: saturated || rank == d,
        words_evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub observable: bool,
    pub rank: usize,
    pub unobservable_dim: usize,
    /// Orthonormal basis of the unobservable subspace.
    pub unobservable_basis: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Smallest singular value counted in the rank, a margin against misclassification.
    pub smallest_retained_singular_value: Option<f64>,
    pub largest_dropped_singular_value: Option<f64>,
    pub tau: f64,
}

/// Largest subspace inside `ker C` invariant under `A` and every `𝔄_j`.
pub fn unobservable_subspace(sys: &Sltis, tol: &TolerancePolicy) -> Result<ObservabilityReport> {
    let d = sys.state_dim();
    let om = observability_matrix(sys, d.saturating_sub(1), tol)?;
    let stacked = om.matrix.transpose();
    let info = rank_info(&stacked, tol)?;
    let basis = kernel_basis(&stacked, tol)?;
    Ok(ObservabilityReport {
        observable: basis.is_empty(),
        rank: info.rank,
        unobservable_dim: basis.len(),
        unobservable_basis: basis.iter().map(|v| v.iter().copied().collect()).collect(),
        iterations: om.levels,
        smallest_retained_singular_value: info.smallest_retained,
        largest_dropped_singular_value: info.largest_dropped,
        tau: info.tau,
    })
}

/// Classical Kalman matrix `(Cᵀ, AᵀCᵀ, …, (A^{d−1})ᵀCᵀ)` ignoring noise.
pub fn kalman_matrix(sys: &Sltis) -> DMatrix<f64> {
    let d = sys.state_dim();
    let n = sys.input_dim();
    let mut m = DMatrix::zeros(d, n * d);
    let mut block = sys.c().transpose();
    for i in 0..d {
        m.view_mut((0, i * n), (d, n)).copy_from(&block);
        block = sys.a().transpose() * block;
    }
    m
}
