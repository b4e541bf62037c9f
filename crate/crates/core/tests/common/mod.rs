//! Random instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use sphs::{PhsForm, PhsParts, Sltis, TolerancePolicy};

pub fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn orthogonal<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    gaussian(rng, d, d).qr().q()
}

pub fn skew<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = gaussian(rng, d, d);
    &g - g.transpose()
}

/// PSD matrix of the given rank with nonzero eigenvalues in `[0.5, 2]`.
pub fn psd_of_rank<R: Rng>(rng: &mut R, d: usize, rank: usize) -> DMatrix<f64> {
    let u = orthogonal(rng, d);
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |i, _| {
        if i < rank {
            rng.random_range(0.5..2.0)
        } else {
            0.0
        }
    }));
    let m = &u * lambda * u.transpose();
    0.5 * (&m + m.transpose())
}

/// Random valid port-Hamiltonian parameters with `Q` and the dissipation block of mixed rank.
pub fn random_phs<R: Rng>(rng: &mut R) -> PhsForm {
    let d = rng.random_range(1..=4);
    let n = rng.random_range(1..=3);
    let k = rng.random_range(0..=2);
    random_phs_dims(rng, d, n, k, true)
}

pub fn random_phs_dims<R: Rng>(rng: &mut R, d: usize, n: usize, k: usize, with_n: bool) -> PhsForm {
    let q_rank = rng.random_range(0..=d);
    let w_rank = rng.random_range(0..=d + n);
    let w = gaussian(rng, d + n, w_rank);
    let diss = &w * w.transpose();
    let parts = PhsParts {
        j: skew(rng, d),
        r: diss.view((0, 0), (d, d)).into_owned(),
        q: psd_of_rank(rng, d, q_rank),
        abar: (0..k).map(|_| gaussian(rng, d, d)).collect(),
        f: gaussian(rng, d, n),
        p: diss.view((0, d), (d, n)).into_owned(),
        bfrak: (0..k).map(|_| gaussian(rng, d, n)).collect(),
        s: diss.view((d, d), (n, n)).into_owned(),
        n: if with_n { skew(rng, n) } else { DMatrix::zeros(n, n) },
    };
    PhsForm::new(parts, &TolerancePolicy::default()).expect("valid by construction")
}

/// Random system; with `unobservable > 0` a subspace of that dimension is hidden from the output.
pub fn random_sltis<R: Rng>(
    rng: &mut R,
    d: usize,
    n: usize,
    k: usize,
    unobservable: usize,
    with_noise: bool,
) -> Sltis {
    let o = d - unobservable;
    let hide = |m: DMatrix<f64>| {
        let mut m = m;
        for i in 0..o {
            for j in o..d {
                m[(i, j)] = 0.0;
            }
        }
        m
    };
    let t = orthogonal(rng, d);
    let conj = |m: DMatrix<f64>| &t * m * t.transpose();
    let a = conj(hide(gaussian(rng, d, d)));
    let afrak = (0..k)
        .map(|_| {
            if with_noise {
                conj(hide(gaussian(rng, d, d)))
            } else {
                DMatrix::zeros(d, d)
            }
        })
        .collect();
    let mut c = gaussian(rng, n, d);
    for j in o..d {
        c.column_mut(j).fill(0.0);
    }
    let c = c * t.transpose();
    Sltis::new(
        a,
        gaussian(rng, d, n),
        afrak,
        (0..k).map(|_| gaussian(rng, d, n)).collect(),
        c,
        gaussian(rng, n, n),
    )
    .expect("consistent shapes")
}
