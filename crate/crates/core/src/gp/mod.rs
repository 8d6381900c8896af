//! Gaussian-process surrogate with an RBF kernel and UCB acquisition over a
//! box of parameters.

mod log;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, ExecMode};
use crate::rng::Rng;

pub use log::{OptimizationLog, OptimizationRow};

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("length scale must be positive, got {0}")]
    LengthScale(f64),
    #[error("objective value must be finite, got {0}")]
    NonFinite(f64),
    #[error("Gram matrix is not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),
    #[error("invalid bounds: {0}")]
    Bounds(String),
}

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

pub fn rbf_kernel(x: &[f64], y: &[f64], length_scale: f64) -> Result<f64, GpError> {
    if x.len() != y.len() {
        return Err(GpError::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(length_scale > 0.0) {
        return Err(GpError::LengthScale(length_scale));
    }
    Ok(kernel(x, y, length_scale))
}

fn kernel(x: &[f64], y: &[f64], l: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * l * l)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub length_scale: f64,
    pub noise_variance: f64,
    pub signal_variance: f64,
    /// Exploration constant `c` in `beta_k = c ln(k + 1)`.
    pub ucb_scale: f64,
    /// Grid points per slot; by default 201, 41 or 13 for one, two or three slots.
    pub grid_resolution: Option<usize>,
    pub random_candidates: usize,
    /// Use the mean of the observed targets as the prior mean.
    pub center_targets: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.2,
            noise_variance: 1e-4,
            signal_variance: 1.0,
            ucb_scale: 2.0,
            grid_resolution: None,
            random_candidates: 512,
            center_targets: false,
        }
    }
}

/// GP regression model with a cached Cholesky factor of `K + (noise + jitter) I`.
#[derive(Debug, Clone)]
pub struct GpModel {
    length_scale: f64,
    noise: f64,
    signal: f64,
    center: bool,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    chol: Vec<Vec<f64>>,
    jitter: f64,
    /// Bumped whenever the factor is rebuilt rather than extended.
    generation: u64,
}

impl GpModel {
    pub fn new(length_scale: f64, noise_variance: f64) -> Result<Self, GpError> {
        if !(length_scale > 0.0) {
            return Err(GpError::LengthScale(length_scale));
        }
        Ok(Self {
            length_scale,
            noise: noise_variance.max(0.0),
            signal: 1.0,
            center: false,
            xs: Vec::new(),
            ys: Vec::new(),
            chol: Vec::new(),
            jitter: 0.0,
            generation: 0,
        })
    }

    pub fn from_config(cfg: &GpConfig) -> Result<Self, GpError> {
        let mut m = Self::new(cfg.length_scale, cfg.noise_variance)?;
        m.signal = cfg.signal_variance;
        m.center = cfg.center_targets;
        Ok(m)
    }

    pub fn with_centering(mut self, on: bool) -> Self {
        self.center = on;
        self
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn targets(&self) -> &[f64] {
        &self.ys
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal
    }

    fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        self.signal * kernel(x, y, self.length_scale)
    }

    fn prior_mean(&self) -> f64 {
        if self.center && !self.ys.is_empty() {
            self.ys.iter().sum::<f64>() / self.ys.len() as f64
        } else {
            0.0
        }
    }

    /// Append an observation and extend (or rebuild) the factor.
    pub fn add(&mut self, x: Vec<f64>, y: f64) -> Result<(), GpError> {
        if !y.is_finite() {
            return Err(GpError::NonFinite(y));
        }
        if let Some(first) = self.xs.first() {
            if first.len() != x.len() {
                return Err(GpError::Dimension {
                    expected: first.len(),
                    got: x.len(),
                });
            }
        }
        let row = self.extended_row(&x);
        self.xs.push(x);
        self.ys.push(y);
        match row {
            Some(r) => {
                self.chol.push(r);
                Ok(())
            }
            None => self.refactor(),
        }
    }

    fn extended_row(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.xs.len();
        let mut row = Vec::with_capacity(n + 1);
        for j in 0..n {
            let mut s = self.k(x, &self.xs[j]);
            for (p, &l) in row.iter().zip(&self.chol[j][..j]) {
                s -= p * l;
            }
            row.push(s / self.chol[j][j]);
        }
        let diag = self.signal + self.noise + self.jitter - row.iter().map(|v| v * v).sum::<f64>();
        if diag > 0.0 && diag.is_finite() {
            row.push(diag.sqrt());
            Some(row)
        } else {
            None
        }
    }

    fn refactor(&mut self) -> Result<(), GpError> {
        let mut jitter = self.jitter.max(0.0);
        loop {
            if let Some(l) = cholesky(&self.gram(), self.noise + jitter) {
                self.chol = l;
                self.jitter = jitter;
                self.generation += 1;
                return Ok(());
            }
            jitter = if jitter == 0.0 {
                JITTER_START
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                self.xs.pop();
                self.ys.pop();
                // restore the previous factor
                let restored = cholesky(&self.gram(), self.noise + self.jitter);
                self.chol = restored.unwrap_or_default();
                return Err(GpError::NotPositiveDefinite(JITTER_MAX));
            }
        }
    }

    /// Kernel Gram matrix of the stored inputs (no noise).
    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.xs
            .iter()
            .map(|a| self.xs.iter().map(|b| self.k(a, b)).collect())
            .collect()
    }

    /// L^{-1} k(X, x)
    fn solve_lower(&self, rhs: &[f64]) -> Vec<f64> {
        forward_solve(&self.chol, rhs)
    }

    fn centered_weights(&self) -> Vec<f64> {
        let m = self.prior_mean();
        let r: Vec<f64> = self.ys.iter().map(|y| y - m).collect();
        self.solve_lower(&r)
    }

    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        if let Some(first) = self.xs.first() {
            if first.len() != x.len() {
                return Err(GpError::Dimension {
                    expected: first.len(),
                    got: x.len(),
                });
            }
        }
        if self.xs.is_empty() {
            return Ok((0.0, self.signal));
        }
        let kx: Vec<f64> = self.xs.iter().map(|a| self.k(a, x)).collect();
        let v = self.solve_lower(&kx);
        let w = self.centered_weights();
        let mean = self.prior_mean() + dot(&v, &w);
        let var = (self.signal - dot(&v, &v)).max(0.0);
        Ok((mean, var))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn forward_solve(l: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(rhs.len());
    for (i, row) in l.iter().enumerate() {
        let s = rhs[i] - dot(&row[..i], &out);
        out.push(s / row[i]);
    }
    out
}

/// Lower Cholesky factor of `a + shift I`, or `None` if not positive definite.
fn cholesky(a: &[Vec<f64>], shift: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = vec![0.0; i + 1];
        for j in 0..=i {
            let s = if j < i {
                dot(&row[..j], &l[j][..j])
            } else {
                dot(&row[..i], &row[..i])
            };
            if i == j {
                let d = a[i][i] + shift - s;
                if !(d > 0.0) {
                    return None;
                }
                row[j] = d.sqrt();
            } else {
                row[j] = (a[i][j] - s) / l[j][j];
            }
        }
        l.push(row);
    }
    Some(l)
}

pub fn gp_posterior(model: &GpModel, query: &[f64]) -> Result<(f64, f64), GpError> {
    model.posterior(query)
}

pub fn update_model(model: &mut GpModel, theta: Vec<f64>, j: f64) -> Result<(), GpError> {
    model.add(theta, j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbSchedule {
    pub c: f64,
}

impl Default for UcbSchedule {
    fn default() -> Self {
        Self { c: 2.0 }
    }
}

impl UcbSchedule {
    pub fn beta(&self, k: usize) -> f64 {
        self.c * ((k + 1) as f64).ln()
    }
}

/// Axis-aligned parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds(Vec<(f64, f64)>);

impl Bounds {
    pub fn new(b: Vec<(f64, f64)>) -> Result<Self, GpError> {
        if b.is_empty() {
            return Err(GpError::Bounds("no parameters".into()));
        }
        for &(lo, hi) in &b {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(GpError::Bounds(format!("[{lo}, {hi}]")));
            }
        }
        Ok(Self(b))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn normalize(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.0)
            .map(|(&x, &(lo, hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.0)
            .map(|(&x, &(lo, hi))| lo + x * (hi - lo))
            .collect()
    }
}

/// Candidate points in the unit cube: a full grid for up to three slots,
/// otherwise uniform random samples.
pub fn candidate_set(dim: usize, cfg: &GpConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    if dim <= 3 {
        let res = cfg
            .grid_resolution
            .unwrap_or(match dim {
                1 => 201,
                2 => 41,
                _ => 13,
            })
            .max(2);
        let axis: Vec<f64> = (0..res).map(|i| i as f64 / (res - 1) as f64).collect();
        let mut pts = vec![Vec::new()];
        for _ in 0..dim {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&a| {
                        let mut q = p.clone();
                        q.push(a);
                        q
                    })
                })
                .collect();
        }
        pts
    } else {
        (0..cfg.random_candidates)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect()
    }
}

/// Index and value of the first maximum.
fn first_argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// One-shot UCB proposal: evaluates the posterior directly at every
/// candidate. Returns `(theta, ucb)` with theta in the original units.
pub fn propose_theta(
    model: &GpModel,
    bounds: &Bounds,
    schedule: &UcbSchedule,
    k: usize,
    cfg: &GpConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, f64), GpError> {
    let cands = candidate_set(bounds.dim(), cfg, rng);
    let beta = schedule.beta(k);
    let mut scores = Vec::with_capacity(cands.len());
    for c in &cands {
        let (m, v) = model.posterior(c)?;
        scores.push(m + (beta * v).sqrt());
    }
    let (i, ucb) = first_argmax(&scores);
    Ok((bounds.denormalize(&cands[i]), ucb))
}

/// Sequential optimizer over a fixed candidate set. Keeps `L^{-1} k(X, c)`
/// for every candidate and extends it as observations arrive.
#[derive(Debug, Clone)]
pub struct BayesOpt {
    bounds: Bounds,
    model: GpModel,
    schedule: UcbSchedule,
    candidates: Vec<Vec<f64>>,
    solved: Vec<Vec<f64>>,
    solved_generation: u64,
    mode: ExecMode,
    raw: Vec<(Vec<f64>, f64)>,
}

impl BayesOpt {
    pub fn new(
        bounds: Bounds,
        cfg: &GpConfig,
        mode: ExecMode,
        rng: &mut Rng,
    ) -> Result<Self, GpError> {
        let candidates = candidate_set(bounds.dim(), cfg, rng);
        let model = GpModel::from_config(cfg)?;
        Ok(Self {
            solved: vec![Vec::new(); candidates.len()],
            solved_generation: model.generation,
            bounds,
            model,
            schedule: UcbSchedule { c: cfg.ucb_scale },
            candidates,
            mode,
            raw: Vec::new(),
        })
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn observe(&mut self, theta: &[f64], j: f64) -> Result<(), GpError> {
        if theta.len() != self.bounds.dim() {
            return Err(GpError::Dimension {
                expected: self.bounds.dim(),
                got: theta.len(),
            });
        }
        self.model.add(self.bounds.normalize(theta), j)?;
        self.raw.push((theta.to_vec(), j));
        Ok(())
    }

    /// Best observation so far (earliest on ties).
    pub fn incumbent(&self) -> Option<(&[f64], f64)> {
        let mut best: Option<(&[f64], f64)> = None;
        for (t, j) in &self.raw {
            if best.is_none_or(|(_, b)| *j > b) {
                best = Some((t, *j));
            }
        }
        best
    }

    fn sync_cache(&mut self) {
        let model = &self.model;
        if self.solved_generation != model.generation {
            self.solved.iter_mut().for_each(Vec::clear);
            self.solved_generation = model.generation;
        }
        let n = model.len();
        let done = self.solved.first().map_or(n, Vec::len);
        if done == n {
            return;
        }
        let cands = &self.candidates;
        let old = std::mem::take(&mut self.solved);
        self.solved = par::map_range(self.mode, cands.len(), |i| {
            let mut v = old[i].clone();
            for r in done..n {
                let row = &model.chol[r];
                let s = model.k(&model.xs[r], &cands[i]) - dot(&row[..r], &v);
                v.push(s / row[r]);
            }
            v
        });
    }

    /// UCB argmax over the candidate set at iteration `k`; returns theta in
    /// original units and its acquisition value.
    pub fn propose(&mut self, k: usize) -> (Vec<f64>, f64) {
        self.sync_cache();
        let beta = self.schedule.beta(k);
        let w = self.model.centered_weights();
        let m0 = self.model.prior_mean();
        let signal = self.model.signal;
        let scores: Vec<f64> = par::map(self.mode, &self.solved, |v| {
            let mean = m0 + dot(v, &w);
            let var = (signal - dot(v, v)).max(0.0);
            mean + (beta * var).sqrt()
        });
        let (i, ucb) = first_argmax(&scores);
        (self.bounds.denormalize(&self.candidates[i]), ucb)
    }
}
