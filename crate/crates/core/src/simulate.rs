//! Euler–Maruyama ensembles of the storage-balance process
//! `Z_t = H(X_t) − ∫₀ᵗ ⟨u, Y⟩ ds`, and statistical checks on them.
//!
//! Path `p` draws from the ChaCha stream `p` of the run seed, and paths are
//! reduced in fixed blocks combined in block order, so serial and parallel
//! runs give bit-identical results.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_storage_dim, ControlSpec, QuadraticStorage, Sltis};

pub const STATISTICAL_EVIDENCE_LABEL: &str = "statistical evidence, not a certificate";

const BLOCK_PATHS: usize = 64;
const BLOCKS_PER_ROUND: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub control: ControlSpec,
    /// Evaluate path blocks on the rayon pool. Results do not depend on it.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64, n_paths: usize, seed: u64, x0: Vec<f64>) -> Self {
        Self {
            t_end,
            dt,
            n_paths,
            seed,
            x0,
            control: ControlSpec::Zero,
            parallel: true,
        }
    }

    pub fn validate(&self, sys: &Sltis) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::PreconditionFailed(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(Error::PreconditionFailed(format!(
                "t_end must be at least dt, got t_end={} dt={}",
                self.t_end, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::PreconditionFailed("n_paths must be at least 1".into()));
        }
        if self.x0.len() != sys.state_dim() {
            return Err(Error::shape(format!(
                "x0 has length {}, expected {}",
                self.x0.len(),
                sys.state_dim()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x0 has non-finite entries".into()));
        }
        self.control.validate(sys.input_dim(), sys.state_dim())
    }

    /// Number of Euler steps; the grid is `0, dt, …, n_steps·dt`.
    pub fn n_steps(&self) -> usize {
        ((self.t_end / self.dt) * (1.0 + 1e-12)).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationEnsemble {
    pub times: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub se_z: Vec<f64>,
    pub mean_h: Vec<f64>,
    pub se_h: Vec<f64>,
    /// Per-time mean state.
    pub mean_x: Vec<Vec<f64>>,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimulationEnsemble {
    /// CSV with header `t,mean_Z,se_Z,mean_H,se_H`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_Z,se_Z,mean_H,se_H\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.mean_z[i], self.se_z[i], self.mean_h[i], self.se_h[i]
            );
        }
        out
    }
}

/// Row-major copies of the system matrices for the inner loop.
struct Kernel {
    d: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    af: Vec<Vec<f64>>,
    bf: Vec<Vec<f64>>,
    c: Vec<f64>,
    dm: Vec<f64>,
    q: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn matvec_add(m: &[f64], rows: usize, cols: usize, x: &[f64], scale: f64, out: &mut [f64]) {
    for i in 0..rows {
        let row = &m[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for j in 0..cols {
            s += row[j] * x[j];
        }
        out[i] += scale * s;
    }
}

struct Scratch {
    u: Vec<f64>,
    y: Vec<f64>,
    next: Vec<f64>,
    g: Vec<f64>,
}

impl Kernel {
    fn new(sys: &Sltis, q: &QuadraticStorage) -> Self {
        Self {
            d: sys.state_dim(),
            n: sys.input_dim(),
            a: row_major(sys.a()),
            b: row_major(sys.b()),
            af: sys.afrak().iter().map(row_major).collect(),
            bf: sys.bfrak().iter().map(row_major).collect(),
            c: row_major(sys.c()),
            dm: row_major(sys.d()),
            q: row_major(q.q()),
        }
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            u: vec![0.0; self.n],
            y: vec![0.0; self.n],
            next: vec![0.0; self.d],
            g: vec![0.0; self.d],
        }
    }

    fn storage(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for i in 0..d {
            let row = &self.q[i * d..(i + 1) * d];
            let mut r = 0.0;
            for j in 0..d {
                r += row[j] * x[j];
            }
            s += x[i] * r;
        }
        0.5 * s
    }

    /// One Euler–Maruyama step from `(t, x)`; returns `dt·⟨u, Y⟩`.
    fn step(
        &self,
        t: f64,
        dt: f64,
        control: &ControlSpec,
        x: &mut [f64],
        rng: &mut ChaCha8Rng,
        s: &mut Scratch,
    ) -> f64 {
        let (d, n) = (self.d, self.n);
        control.eval_into(t, x, &mut s.u);
        s.y.iter_mut().for_each(|v| *v = 0.0);
        matvec_add(&self.c, n, d, x, 1.0, &mut s.y);
        matvec_add(&self.dm, n, n, &s.u, 1.0, &mut s.y);
        let supply: f64 = s.u.iter().zip(&s.y).map(|(a, b)| a * b).sum::<f64>() * dt;

        s.next.copy_from_slice(x);
        matvec_add(&self.a, d, d, x, dt, &mut s.next);
        matvec_add(&self.b, d, n, &s.u, dt, &mut s.next);
        let sqrt_dt = dt.sqrt();
        for (afj, bfj) in self.af.iter().zip(&self.bf) {
            let xi: f64 = rng.sample(StandardNormal);
            s.g.iter_mut().for_each(|v| *v = 0.0);
            matvec_add(afj, d, d, x, 1.0, &mut s.g);
            matvec_add(bfj, d, n, &s.u, 1.0, &mut s.g);
            let dw = sqrt_dt * xi;
            for i in 0..d {
                s.next[i] += s.g[i] * dw;
            }
        }
        x.copy_from_slice(&s.next);
        supply
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-time running moments over a set of paths.
#[derive(Clone)]
struct Moments {
    count: usize,
    mean_z: Vec<f64>,
    m2_z: Vec<f64>,
    mean_h: Vec<f64>,
    m2_h: Vec<f64>,
    mean_x: Vec<f64>,
}

impl Moments {
    fn new(times: usize, d: usize) -> Self {
        Self {
            count: 0,
            mean_z: vec![0.0; times],
            m2_z: vec![0.0; times],
            mean_h: vec![0.0; times],
            m2_h: vec![0.0; times],
            mean_x: vec![0.0; times * d],
        }
    }

    /// Chan's pairwise update; `self` covers the earlier paths.
    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let w = nb / n;
        let cross = na * nb / n;
        for i in 0..self.mean_z.len() {
            let dz = other.mean_z[i] - self.mean_z[i];
            self.mean_z[i] += dz * w;
            self.m2_z[i] += other.m2_z[i] + dz * dz * cross;
            let dh = other.mean_h[i] - self.mean_h[i];
            self.mean_h[i] += dh * w;
            self.m2_h[i] += other.m2_h[i] + dh * dh * cross;
        }
        for i in 0..self.mean_x.len() {
            self.mean_x[i] += (other.mean_x[i] - self.mean_x[i]) * w;
        }
        self.count += other.count;
    }
}

fn simulate_block(
    kernel: &Kernel,
    cfg: &SimConfig,
    n_steps: usize,
    first_path: usize,
    paths: usize,
) -> Result<Moments> {
    let d = kernel.d;
    let mut m = Moments::new(n_steps + 1, d);
    let mut scratch = kernel.scratch();
    let mut x = vec![0.0; d];
    for p in 0..paths {
        let path = first_path + p;
        let mut rng = path_rng(cfg.seed, path as u64);
        x.copy_from_slice(&cfg.x0);
        let mut supply = 0.0;
        m.count += 1;
        let k = m.count as f64;
        for i in 0..=n_steps {
            let h = kernel.storage(&x);
            if !h.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "path {path} blew up at t = {}",
                    i as f64 * cfg.dt
                )));
            }
            let z = h - supply;
            let dz = z - m.mean_z[i];
            m.mean_z[i] += dz / k;
            m.m2_z[i] += dz * (z - m.mean_z[i]);
            let dh = h - m.mean_h[i];
            m.mean_h[i] += dh / k;
            m.m2_h[i] += dh * (h - m.mean_h[i]);
            let mx = &mut m.mean_x[i * d..(i + 1) * d];
            for j in 0..d {
                mx[j] += (x[j] - mx[j]) / k;
            }
            if i < n_steps {
                let t = i as f64 * cfg.dt;
                supply += kernel.step(t, cfg.dt, &cfg.control, &mut x, &mut rng, &mut scratch);
            }
        }
    }
    Ok(m)
}

/// Simulates `n_paths` Euler–Maruyama paths of `(X, Z)` on the grid `k·dt`.
pub fn simulate_paths(
    sys: &Sltis,
    q: &QuadraticStorage,
    cfg: &SimConfig,
) -> Result<SimulationEnsemble> {
    check_storage_dim(sys, q)?;
    cfg.validate(sys)?;
    let kernel = Kernel::new(sys, q);
    let n_steps = cfg.n_steps();
    let d = sys.state_dim();
    let n_blocks = cfg.n_paths.div_ceil(BLOCK_PATHS);
    let block = |b: usize| {
        let first = b * BLOCK_PATHS;
        let paths = BLOCK_PATHS.min(cfg.n_paths - first);
        simulate_block(&kernel, cfg, n_steps, first, paths)
    };

    let mut total = Moments::new(n_steps + 1, d);
    let mut start = 0;
    while start < n_blocks {
        let end = (start + BLOCKS_PER_ROUND).min(n_blocks);
        let round: Vec<Result<Moments>> = if cfg.parallel {
            (start..end).into_par_iter().map(block).collect()
        } else {
            (start..end).map(block).collect()
        };
        for m in round {
            total.merge(&m?);
        }
        start = end;
    }

    let n = cfg.n_paths as f64;
    let se = |m2: &[f64]| -> Vec<f64> {
        m2.iter()
            .map(|&v| {
                if cfg.n_paths > 1 {
                    (v / (n - 1.0)).sqrt() / n.sqrt()
                } else {
                    0.0
                }
            })
            .collect()
    };
    Ok(SimulationEnsemble {
        times: (0..=n_steps).map(|i| i as f64 * cfg.dt).collect(),
        se_z: se(&total.m2_z),
        se_h: se(&total.m2_h),
        mean_z: total.mean_z,
        mean_h: total.mean_h,
        mean_x: total.mean_x.chunks(d).map(|c| c.to_vec()).collect(),
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreasingTest {
    pub pass: bool,
    /// Grid indices `(i, i+1)` with the largest normalized increase.
    pub worst_pair: (usize, usize),
    /// `mean_Z[i+1] − mean_Z[i] − m·√(se_i² + se_{i+1}²)` at the worst pair.
    pub worst_excess: f64,
    pub confidence_multiplier: f64,
    pub evidence: &'static str,
}

/// Passes iff `mean_Z` never rises by more than `m` combined standard errors
/// between consecutive grid points.
pub fn decreasing_test(ens: &SimulationEnsemble, confidence_multiplier: f64) -> Result<DecreasingTest> {
    decreasing_series(&ens.mean_z, &ens.se_z, confidence_multiplier)
}

pub fn decreasing_series(
    mean: &[f64],
    se: &[f64],
    confidence_multiplier: f64,
) -> Result<DecreasingTest> {
    if mean.len() < 2 || se.len() != mean.len() {
        return Err(Error::PreconditionFailed(
            "decreasing test needs at least two time points".into(),
        ));
    }
    let mut worst = (0, 1);
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..mean.len() - 1 {
        let excess = mean[i + 1]
            - mean[i]
            - confidence_multiplier * (se[i] * se[i] + se[i + 1] * se[i + 1]).sqrt();
        if excess > worst_excess {
            worst_excess = excess;
            worst = (i, i + 1);
        }
    }
    Ok(DecreasingTest {
        pass: worst_excess <= 0.0,
        worst_pair: worst,
        worst_excess,
        confidence_multiplier,
        evidence: STATISTICAL_EVIDENCE_LABEL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncreasingSegment {
    pub from: usize,
    pub to: usize,
    /// `(mean[to] − mean[from]) / √(se_from² + se_to²)`.
    pub z_score: f64,
}

/// The pair `i < j` (on a grid thinned to at most 512 points) where `mean`
/// rises most significantly, if the rise exceeds `m` combined standard errors.
pub fn increasing_segment(mean: &[f64], se: &[f64], confidence_multiplier: f64) -> Option<IncreasingSegment> {
    let len = mean.len().min(se.len());
    if len < 2 {
        return None;
    }
    let stride = len.div_ceil(512).max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().unwrap() != len - 1 {
        idx.push(len - 1);
    }
    let mut best: Option<IncreasingSegment> = None;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let rise = mean[j] - mean[i];
            let spread = (se[i] * se[i] + se[j] * se[j]).sqrt();
            if rise <= confidence_multiplier * spread {
                continue;
            }
            let z = if spread > 0.0 { rise / spread } else { f64::INFINITY };
            if best.as_ref().is_none_or(|b| z > b.z_score) {
                best = Some(IncreasingSegment {
                    from: i,
                    to: j,
                    z_score: z,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectConfig {
    /// Parent paths whose states at the restart time are branched.
    pub parents: usize,
    /// One-step children per parent.
    pub children: usize,
    pub confidence_multiplier: f64,
}

impl Default for DefectConfig {
    fn default() -> Self {
        Self {
            parents: 16,
            children: 1000,
            confidence_multiplier: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectEstimate {
    pub restart_time: f64,
    /// Largest conditional mean of `Z_{s+dt} − Z_s` over the parent states.
    pub worst_defect: f64,
    /// Standard error of that conditional mean.
    pub worst_se: f64,
    /// Largest `mean − m·se` over parents; positive means a significant rise.
    pub worst_excess: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectReport {
    pub estimates: Vec<DefectEstimate>,
    pub pass: bool,
    pub evidence: &'static str,
}

const CHILD_STREAM_BASE: u64 = 1 << 63;

/// Estimates `E[Z_{s+dt} − Z_s | X_s]` at each restart time `s` by branching
/// parent states into one-step children.
pub fn supermartingale_defect(
    sys: &Sltis,
    q: &QuadraticStorage,
    cfg: &SimConfig,
    restart_times: &[f64],
    dcfg: &DefectConfig,
) -> Result<DefectReport> {
    check_storage_dim(sys, q)?;
    cfg.validate(sys)?;
    if dcfg.parents == 0 || dcfg.children < 2 {
        return Err(Error::PreconditionFailed(
            "defect estimation needs at least one parent and two children".into(),
        ));
    }
    if dcfg.parents >= 1 << 20 || dcfg.children >= 1 << 20 || restart_times.len() >= 1 << 20 {
        return Err(Error::ResourceLimit("defect branching exceeds stream space".into()));
    }
    let kernel = Kernel::new(sys, q);
    let d = kernel.d;
    let mut estimates = Vec::with_capacity(restart_times.len());
    for (r, &s) in restart_times.iter().enumerate() {
        if !(s >= 0.0 && s < cfg.t_end) {
            return Err(Error::PreconditionFailed(format!(
                "restart time {s} outside [0, {})",
                cfg.t_end
            )));
        }
        let steps_to_s = ((s / cfg.dt) * (1.0 + 1e-12)).floor() as usize;
        let t_s = steps_to_s as f64 * cfg.dt;
        let per_parent: Vec<Result<(f64, f64)>> = (0..dcfg.parents)
            .into_par_iter()
            .map(|p| {
                let mut scratch = kernel.scratch();
                let mut rng = path_rng(cfg.seed, p as u64);
                let mut x = cfg.x0.clone();
                for i in 0..steps_to_s {
                    kernel.step(i as f64 * cfg.dt, cfg.dt, &cfg.control, &mut x, &mut rng, &mut scratch);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("parent {p} blew up before t = {t_s}")));
                }
                let h0 = kernel.storage(&x);
                let mut mean = 0.0;
                let mut m2 = 0.0;
                let mut child = vec![0.0; d];
                for c in 0..dcfg.children {
                    let stream = CHILD_STREAM_BASE | ((r as u64) << 40) | ((p as u64) << 20) | c as u64;
                    let mut crng = path_rng(cfg.seed, stream);
                    child.copy_from_slice(&x);
                    let supply =
                        kernel.step(t_s, cfg.dt, &cfg.control, &mut child, &mut crng, &mut scratch);
                    let inc = kernel.storage(&child) - h0 - supply;
                    let k = (c + 1) as f64;
                    let delta = inc - mean;
                    mean += delta / k;
                    m2 += delta * (inc - mean);
                }
                let nc = dcfg.children as f64;
                Ok((mean, (m2 / (nc - 1.0)).sqrt() / nc.sqrt()))
            })
            .collect();
        let mut worst = (f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY);
        for res in per_parent {
            let (mean, se) = res?;
            let excess = mean - dcfg.confidence_multiplier * se;
            if excess > worst.2 {
                worst = (mean, se, excess);
            }
        }
        estimates.push(DefectEstimate {
            restart_time: t_s,
            worst_defect: worst.0,
            worst_se: worst.1,
            worst_excess: worst.2,
            pass: worst.2 <= 0.0,
        });
    }
    Ok(DefectReport {
        pass: estimates.iter().all(|e| e.pass),
        estimates,
        evidence: STATISTICAL_EVIDENCE_LABEL,
    })
}

/// Monte Carlo estimate of the one-step drift `(E[Z_dt] − Z_0) / dt` with its standard error.
pub fn one_step_drift(ens: &SimulationEnsemble) -> Option<(f64, f64)> {
    if ens.times.len() < 2 {
        return None;
    }
    let dt = ens.times[1] - ens.times[0];
    Some(((ens.mean_z[1] - ens.mean_z[0]) / dt, ens.se_z[1] / dt))
}

pub fn mean_state_at(ens: &SimulationEnsemble, i: usize) -> DVector<f64> {
    DVector::from_vec(ens.mean_x[i].clone())
}
