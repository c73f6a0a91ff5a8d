//! Sharp constants of the discrete Friedrichs and Hardy inequalities: the
//! supremum of the discrete quotient over all cell vectors.
//!
//! Quotients use the compact gradient, whose `p = 2` stiffness is the
//! five-point form. For `p = 2` the supremum is the largest eigenvalue of
//! the pencil `(B, A)` (weighted mass over stiffness), found by block inverse
//! iteration with banded Cholesky solves. For other `p` a Sobolev
//! preconditioned nonlinear conjugate gradient ascent is run from several
//! starts. Tiny grids have dense oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{generate_test_function, GradientScheme, Grid, ScalarField};
use crate::geometry::GeometryConfig;
use crate::ineq::{friedrichs_quotient_with, hardy_quotient_with, HardyOptions, HardyVariant, Quotient, WeightSpec};

/// Largest grid side accepted by the dense oracles.
pub const ORACLE_LIMIT: usize = 12;
/// Starts of the production ascent.
pub const ASCENT_STARTS: usize = 4;
/// Minimum starts of the oracle ascent.
pub const ORACLE_STARTS: usize = 32;
const BLOCK: usize = 4;
const DEFAULT_SEED: u64 = 0x5eed;

/// Which quotient is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotientKind {
    Friedrichs,
    HardyEps,
    HardyRho,
}

impl QuotientKind {
    pub const ALL: [QuotientKind; 3] = [QuotientKind::Friedrichs, QuotientKind::HardyEps, QuotientKind::HardyRho];

    pub fn as_str(&self) -> &'static str {
        match self {
            QuotientKind::Friedrichs => "friedrichs",
            QuotientKind::HardyEps => "hardy_eps",
            QuotientKind::HardyRho => "hardy_rho",
        }
    }

    /// The discrete quotient on `grid` with the compact gradient.
    pub fn quotient(&self, config: &GeometryConfig, w: &WeightSpec, grid: &Grid) -> Result<Quotient> {
        let scheme = GradientScheme::Compact;
        match self {
            QuotientKind::Friedrichs => Quotient::friedrichs(grid, config, w.p, scheme),
            QuotientKind::HardyEps => Quotient::hardy(grid, config, w, HardyVariant::Eps, scheme),
            QuotientKind::HardyRho => Quotient::hardy(grid, config, w, HardyVariant::Rho, scheme),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eig2,
    GradAscent,
    Oracle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Eig2 => "eig2",
            Method::GradAscent => "grad_ascent",
            Method::Oracle => "oracle",
        }
    }
}

/// Estimated sharp constant with its maximizing field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub value: f64,
    pub iterations: usize,
    /// Last relative change of the quotient.
    pub residual: f64,
    pub grid: Grid,
    pub method: Method,
    #[serde(skip)]
    pub maximizer: Vec<f64>,
    /// Quotient value after each iteration of the best start.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl ConstantEstimate {
    /// The maximizer as a field on the configured rectangle.
    pub fn maximizer_field(&self, config: &GeometryConfig) -> Result<ScalarField> {
        ScalarField::on_domain(self.grid, config, self.maximizer.clone())
    }
}

/// Tuning of [`estimate_sharp_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub starts: usize,
    /// Use the ascent even when `p = 2`.
    pub force_ascent: bool,
}

impl SharpOptions {
    pub fn for_p(p: f64) -> Self {
        Self { tol: default_tol(p), max_iter: 2000, seed: DEFAULT_SEED, starts: ASCENT_STARTS, force_ascent: false }
    }
}

pub fn default_tol(p: f64) -> f64 {
    if p == 2.0 {
        1e-8
    } else {
        1e-6
    }
}

/// Sharp constant of `kind` on `grid`.
pub fn estimate_sharp(
    kind: QuotientKind,
    config: &GeometryConfig,
    w: &WeightSpec,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<ConstantEstimate> {
    let opts = SharpOptions { tol, max_iter, ..SharpOptions::for_p(w.p) };
    estimate_sharp_with(kind, config, w, grid, &opts)
}

pub fn estimate_sharp_with(
    kind: QuotientKind,
    config: &GeometryConfig,
    w: &WeightSpec,
    grid: &Grid,
    opts: &SharpOptions,
) -> Result<ConstantEstimate> {
    if !(opts.tol > 0.0) {
        return Err(LabError::Precondition(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !grid.ny().is_multiple_of(config.n() as usize) {
        return Err(LabError::Config(format!("ny = {} is not a multiple of n = {}", grid.ny(), config.n())));
    }
    let q = kind.quotient(config, w, grid)?;
    check_forms(&q)?;
    let stiffness = SymBand::stiffness(&q);
    let chol = stiffness.cholesky()?;
    if w.p == 2.0 && !opts.force_ascent {
        block_inverse_iteration(&q, &stiffness, &chol, opts)
    } else {
        let starts = start_fields(config, grid, opts.seed, opts.starts);
        let best = starts
            .iter()
            .map(|s| ascend(&q, &chol, s, opts.tol, opts.max_iter))
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .expect("at least one start");
        finish_ascent(best, opts.max_iter, Method::GradAscent, grid)
    }
}

/// Quotient of `kind` re-evaluated on the estimate's maximizer through the
/// public quotient functions.
pub fn reevaluate(
    kind: QuotientKind,
    config: &GeometryConfig,
    w: &WeightSpec,
    est: &ConstantEstimate,
) -> Result<f64> {
    let u = est.maximizer_field(config)?;
    let opts = HardyOptions { scheme: GradientScheme::Compact, c_hl: None };
    Ok(match kind {
        QuotientKind::Friedrichs => friedrichs_quotient_with(&u, config, w.p, GradientScheme::Compact)?.ratio,
        QuotientKind::HardyEps => hardy_quotient_with(&u, config, w, HardyVariant::Eps, opts)?.ratio,
        QuotientKind::HardyRho => hardy_quotient_with(&u, config, w, HardyVariant::Rho, opts)?.ratio,
    })
}

fn check_forms(q: &Quotient) -> Result<()> {
    if q.numerator_weights().iter().all(|&w| w == 0.0) {
        return Err(LabError::Assembly("the numerator form vanishes on this grid".into()));
    }
    Ok(())
}

/// Seeded start vectors: absolute values of generated fields, with random
/// positive vectors when a draw is degenerate on a coarse grid.
fn start_fields(config: &GeometryConfig, grid: &Grid, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s: u64 = rng.random();
            match generate_test_function(s, grid, config, 4) {
                Ok(u) => u.values().iter().map(|v| v.abs()).collect(),
                Err(_) => random_positive(&mut ChaCha8Rng::seed_from_u64(s), grid.len()),
            }
        })
        .collect()
}

fn random_positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.1..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize_p(u: &mut [f64], p: f64) -> f64 {
    let norm = u.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    if norm > 0.0 {
        u.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}

/// Sign and scale: largest entry `+1`.
fn tidy(mut u: Vec<f64>) -> Vec<f64> {
    let peak = u.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    if peak != 0.0 {
        u.iter_mut().for_each(|v| *v /= peak);
    }
    u
}

/// Symmetric banded matrix in a bandwidth-minimizing ordering.
#[derive(Debug, Clone)]
pub struct SymBand {
    n: usize,
    bw: usize,
    /// `perm[original] = banded position`.
    perm: Vec<usize>,
    /// Lower band, row `i` holds columns `i - bw ..= i`.
    data: Vec<f64>,
}

impl SymBand {
    fn from_triplets(grid: &Grid, triplets: &[(usize, usize, f64)]) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let n = nx * ny;
        let perm: Vec<usize> = if nx <= ny {
            (0..n).collect()
        } else {
            (0..n).map(|idx| (idx % nx) * ny + idx / nx).collect()
        };
        let bw = triplets.iter().map(|&(r, c, _)| perm[r].abs_diff(perm[c])).max().unwrap_or(0);
        let mut m = SymBand { n, bw, perm, data: vec![0.0; n * (bw + 1)] };
        for &(r, c, v) in triplets {
            let (i, j) = (m.perm[r], m.perm[c]);
            if j <= i {
                let k = m.slot(i, j);
                m.data[k] += v;
            }
        }
        m
    }

    /// `p = 2` stiffness with the quotient's denominator weights.
    pub fn stiffness(q: &Quotient) -> Self {
        SymBand::from_triplets(q.grid(), &q.op().quadratic_form(q.denominator_weights()))
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// `A x` in the original ordering.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let xp = self.permute(x);
        let mut yp = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[self.slot(i, lo)..=self.slot(i, i)];
            let mut acc = 0.0;
            for (off, &a) in row.iter().enumerate() {
                let j = lo + off;
                acc += a * xp[j];
                if j != i {
                    yp[j] += a * xp[i];
                }
            }
            yp[i] += acc;
        }
        self.unpermute(&yp)
    }

    fn permute(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &v) in x.iter().enumerate() {
            out[self.perm[k]] = v;
        }
        out
    }

    fn unpermute(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&k| x[k]).collect()
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.data.clone();
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // l[i][j] -= sum_k l[i][k] l[j][k], k in max(lo_i, lo_j)..j
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + j + bw - i];
                for k in klo..j {
                    s -= l[i * w + k + bw - i] * l[j * w + k + bw - j];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(LabError::Assembly(
                            "stiffness form is not positive definite (no Dirichlet face on this grid?)".into(),
                        ));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + j + bw - i] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { n, bw, perm: self.perm.clone(), l })
    }
}

/// Lower factor of a [`SymBand`].
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    perm: Vec<usize>,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b` in the original ordering.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = vec![0.0; n];
        for (k, &v) in b.iter().enumerate() {
            y[self.perm[k]] = v;
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + k + bw - i] * y[k];
            }
            y[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.l[i * w + bw];
            let v = y[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                y[k] -= self.l[i * w + k + bw - i] * v;
            }
        }
        self.perm.iter().map(|&k| y[k]).collect()
    }
}

/// Largest eigenvalue of `B x = mu A x` with `B` the numerator diagonal.
fn block_inverse_iteration(q: &Quotient, a: &SymBand, chol: &BandCholesky, opts: &SharpOptions) -> Result<ConstantEstimate> {
    let n = q.grid().len();
    let bdiag = q.numerator_weights();
    let k = BLOCK.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..k).map(|_| random_positive(&mut rng, n)).collect();
    let mut history = Vec::new();
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut y: Vec<Vec<f64>> =
            x.iter().map(|c| chol.solve(&c.iter().zip(bdiag).map(|(v, b)| v * b).collect::<Vec<_>>())).collect();
        a_orthonormalize(&mut y, a, &mut rng);
        let by: Vec<Vec<f64>> = y.iter().map(|c| c.iter().zip(bdiag).map(|(v, b)| v * b).collect()).collect();
        let small = DMatrix::from_fn(k, k, |r, c| 0.5 * (dot(&y[r], &by[c]) + dot(&y[c], &by[r])));
        let eig = SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        x = order
            .iter()
            .map(|&e| {
                let mut col = vec![0.0; n];
                for (r, yr) in y.iter().enumerate() {
                    let c = eig.eigenvectors[(r, e)];
                    col.iter_mut().zip(yr).for_each(|(o, v)| *o += c * v);
                }
                col
            })
            .collect();
        let mu = eig.eigenvalues[order[0]];
        history.push(mu);
        residual = ((mu - prev) / mu).abs();
        prev = mu;
        if residual < opts.tol {
            let u = tidy(x.swap_remove(0));
            return Ok(ConstantEstimate {
                value: q.value(&u),
                iterations: it,
                residual,
                grid: *q.grid(),
                method: Method::Eig2,
                maximizer: u,
                history,
            });
        }
    }
    Err(LabError::Convergence {
        iterations: opts.max_iter,
        best: prev,
        residual,
        best_iterate: tidy(x.swap_remove(0)),
    })
}

/// Modified Gram-Schmidt in the `A` inner product.
fn a_orthonormalize(cols: &mut [Vec<f64>], a: &SymBand, rng: &mut ChaCha8Rng) {
    let n = cols[0].len();
    for c in 0..cols.len() {
        for _ in 0..3 {
            for prev in 0..c {
                let ap = a.matvec(&cols[prev]);
                let proj = dot(&cols[c], &ap);
                let (head, tail) = cols.split_at_mut(c);
                tail[0].iter_mut().zip(&head[prev]).for_each(|(v, p)| *v -= proj * p);
            }
            let norm = dot(&cols[c], &a.matvec(&cols[c])).sqrt();
            if norm > 1e-150 && norm.is_finite() {
                cols[c].iter_mut().for_each(|v| *v /= norm);
                break;
            }
            cols[c] = random_positive(rng, n);
        }
    }
}

/// Outcome of one ascent run.
#[derive(Debug, Clone)]
struct Ascent {
    value: f64,
    u: Vec<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
    history: Vec<f64>,
}

/// Preconditioned Polak-Ribiere ascent with Armijo backtracking and step expansion.
fn ascend(q: &Quotient, precond: &BandCholesky, start: &[f64], tol: f64, max_iter: usize) -> Ascent {
    let p = q.p();
    let mut u = start.to_vec();
    normalize_p(&mut u, p);
    let (mut val, mut g) = q.value_and_gradient(&u);
    let mut z = precond.solve(&g);
    let mut gz = dot(&g, &z);
    let mut d = z.clone();
    let mut history = vec![val];
    let mut step = 1.0;
    let mut small = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let mut slope = dot(&g, &d);
        if !(slope > 0.0) {
            d = z.clone();
            slope = gz;
        }
        if !(slope > 0.0) {
            return Ascent { value: val, u, iterations: it - 1, residual: 0.0, converged: true, history };
        }
        let trial = |t: f64| -> (Vec<f64>, f64) {
            let c: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let v = q.value(&c);
            (c, v)
        };
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let (c, v) = trial(t);
            if v.is_finite() && v >= val + 1e-4 * t * slope {
                accepted = Some((c, v));
                break;
            }
            t *= 0.5;
        }
        let Some((mut cand, mut cv)) = accepted else {
            return Ascent { value: val, u, iterations: it - 1, residual: 0.0, converged: true, history };
        };
        if t == step {
            for _ in 0..8 {
                let (c, v) = trial(2.0 * t);
                if !(v.is_finite() && v > cv) {
                    break;
                }
                t *= 2.0;
                cand = c;
                cv = v;
            }
        }
        step = t;
        let scale = normalize_p(&mut cand, p);
        d.iter_mut().for_each(|v| *v /= scale);
        step *= scale;
        residual = (cv - val) / cv;
        u = cand;
        let (nv, ng) = q.value_and_gradient(&u);
        val = nv.max(val);
        history.push(val);
        let nz = precond.solve(&ng);
        let beta = (dot(&ng, &nz) - dot(&ng, &z)) / gz;
        let beta = beta.max(0.0);
        d.iter_mut().zip(&nz).for_each(|(dv, zv)| *dv = zv + beta * *dv);
        g = ng;
        z = nz;
        gz = dot(&g, &z);
        if residual < tol {
            small += 1;
            if small >= 2 {
                return Ascent { value: val, u, iterations: it, residual, converged: true, history };
            }
        } else {
            small = 0;
        }
    }
    Ascent { value: val, u, iterations: max_iter, residual, converged: false, history }
}

fn finish_ascent(best: Ascent, max_iter: usize, method: Method, grid: &Grid) -> Result<ConstantEstimate> {
    if !best.converged {
        return Err(LabError::Convergence {
            iterations: max_iter,
            best: best.value,
            residual: best.residual,
            best_iterate: tidy(best.u),
        });
    }
    Ok(ConstantEstimate {
        value: best.value,
        iterations: best.iterations,
        residual: best.residual,
        grid: *grid,
        method,
        maximizer: tidy(best.u),
        history: best.history,
    })
}

/// Dense oracle on a tiny grid: full generalized eigensolve for `p = 2`,
/// multistart quasi-Newton ascent with random polishing otherwise.
pub fn oracle_sharp(kind: QuotientKind, config: &GeometryConfig, w: &WeightSpec, grid: &Grid) -> Result<ConstantEstimate> {
    oracle_sharp_seeded(kind, config, w, grid, DEFAULT_SEED)
}

pub fn oracle_sharp_seeded(
    kind: QuotientKind,
    config: &GeometryConfig,
    w: &WeightSpec,
    grid: &Grid,
    seed: u64,
) -> Result<ConstantEstimate> {
    if grid.nx() > ORACLE_LIMIT || grid.ny() > ORACLE_LIMIT {
        return Err(LabError::SizeGuard { nx: grid.nx(), ny: grid.ny(), limit: ORACLE_LIMIT });
    }
    let q = kind.quotient(config, w, grid)?;
    check_forms(&q)?;
    let n = grid.len();
    let mut a = DMatrix::zeros(n, n);
    for (r, c, v) in q.op().quadratic_form(q.denominator_weights()) {
        a[(r, c)] += v;
    }
    let l = a
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::Assembly("stiffness form is not positive definite".into()))?
        .l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| LabError::Assembly("singular stiffness factor".into()))?;
    let b = DMatrix::from_diagonal(&DVector::from_column_slice(q.numerator_weights()));
    let m: DMatrix<f64> = &linv * b * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.imax();
    let eigvec: Vec<f64> = (linv.transpose() * eig.eigenvectors.column(top)).iter().copied().collect();
    if w.p == 2.0 {
        let u = tidy(eigvec);
        return Ok(ConstantEstimate {
            value: q.value(&u),
            iterations: 1,
            residual: 0.0,
            grid: *grid,
            method: Method::Oracle,
            maximizer: u,
            history: vec![eig.eigenvalues[top]],
        });
    }
    let mut starts = start_fields(config, grid, seed, ORACLE_STARTS / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    while starts.len() < ORACLE_STARTS - 1 {
        starts.push(random_positive(&mut rng, n));
    }
    starts.push(eigvec.iter().map(|v| v.abs()).collect());
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut total = 0;
    for s in &starts {
        let (v, u, hist, iters) = bfgs(&q, s, 3000);
        total += iters;
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, u, hist));
        }
    }
    let (mut val, mut u, mut history) = best.expect("oracle starts");
    let gain = polish(&q, &mut u, &mut val, &mut rng);
    history.push(val);
    Ok(ConstantEstimate {
        value: q.value(&u),
        iterations: total,
        residual: gain,
        grid: *grid,
        method: Method::Oracle,
        maximizer: tidy(u),
        history,
    })
}

/// Quasi-Newton maximization of the quotient; returns value, point, history and iterations.
fn bfgs(q: &Quotient, start: &[f64], max_iter: usize) -> (f64, Vec<f64>, Vec<f64>, usize) {
    let n = start.len();
    let p = q.p();
    let mut x = start.to_vec();
    normalize_p(&mut x, p);
    let (mut f, mut g) = q.value_and_gradient(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut history = vec![f];
    let mut flat = 0;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (&h * &gv).iter().copied().collect();
        let mut slope = dot(&g, &d);
        if !(slope > 0.0) {
            h = DMatrix::identity(n, n);
            d = g.clone();
            slope = dot(&g, &g);
        }
        if !(slope > 1e-300) {
            break;
        }
        let mut t = if it == 1 { 0.1 / d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300) } else { 1.0 };
        let mut next = None;
        for _ in 0..60 {
            let c: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let v = q.value(&c);
            if v.is_finite() && v >= f + 1e-4 * t * slope {
                next = Some((c, v));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = next else { break };
        let (_, gn) = q.value_and_gradient(&xn);
        // Ascent on f is descent on -f: s = step, y = -(gn - g).
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
        }
        let change = (fnew - f) / fnew;
        x = xn;
        f = fnew;
        g = gn;
        history.push(f);
        if change < 1e-14 {
            flat += 1;
            if flat >= 3 {
                break;
            }
        } else {
            flat = 0;
        }
    }
    (f, x, history, it)
}

/// Random-direction hill climbing; returns the relative gain.
fn polish(q: &Quotient, u: &mut Vec<f64>, val: &mut f64, rng: &mut ChaCha8Rng) -> f64 {
    let before = *val;
    let n = u.len();
    normalize_p(u, q.p());
    for _ in 0..400 {
        let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = (dot(u, u) / dot(&dir, &dir)).sqrt();
        for t in [1e-2, 1e-3, 1e-4, 1e-5] {
            for sgn in [1.0, -1.0] {
                let c: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + sgn * t * scale * b).collect();
                let v = q.value(&c);
                if v > *val {
                    *val = v;
                    *u = c;
                }
            }
        }
    }
    (*val - before) / *val
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u32, delta: f64) -> GeometryConfig {
        GeometryConfig::new(1.0, 1.0, n, delta).unwrap()
    }

    #[test]
    fn band_cholesky_solves() {
        let c = cfg(2, 0.5);
        for (nx, ny) in [(6, 4), (4, 6), (5, 8)] {
            let g = Grid::for_domain(&c, nx, ny).unwrap();
            let w = WeightSpec::new(2.0, 0.0).unwrap();
            let q = QuotientKind::HardyEps.quotient(&c, &w, &g).unwrap();
            let a = SymBand::stiffness(&q);
            assert_eq!(a.bandwidth(), nx.min(ny));
            let x: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.37).sin()).collect();
            let b = a.matvec(&x);
            let back = a.cholesky().unwrap().solve(&b);
            for (u, v) in x.iter().zip(&back) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eig2_matches_dense_oracle() {
        let g = Grid::for_domain(&cfg(4, 0.5), 8, 8).unwrap();
        let w = WeightSpec::new(2.0, 0.0).unwrap();
        for kind in QuotientKind::ALL {
            let e = estimate_sharp(kind, &cfg(4, 0.5), &w, &g, 1e-10, 2000).unwrap();
            let o = oracle_sharp(kind, &cfg(4, 0.5), &w, &g).unwrap();
            assert!((e.value - o.value).abs() <= 1e-6 * o.value, "{kind:?}: {} vs {}", e.value, o.value);
            assert_eq!(e.method, Method::Eig2);
        }
    }

    #[test]
    fn ascent_at_p2_matches_eig2() {
        let c = cfg(4, 0.5);
        let g = Grid::for_domain(&c, 16, 16).unwrap();
        let w = WeightSpec::new(2.0, 0.0).unwrap();
        let eig = estimate_sharp(QuotientKind::HardyEps, &c, &w, &g, 1e-12, 5000).unwrap();
        let opts = SharpOptions { tol: 1e-12, max_iter: 5000, force_ascent: true, ..SharpOptions::for_p(2.0) };
        let asc = estimate_sharp_with(QuotientKind::HardyEps, &c, &w, &g, &opts).unwrap();
        assert_eq!(asc.method, Method::GradAscent);
        assert!((asc.value - eig.value).abs() <= 1e-6 * eig.value, "{} vs {}", asc.value, eig.value);
    }

    #[test]
    fn ascent_history_is_monotone_and_reevaluates() {
        let c = cfg(4, 0.5);
        let g = Grid::for_domain(&c, 16, 16).unwrap();
        for p in [1.5, 3.0] {
            let w = WeightSpec::new(p, 0.0).unwrap();
            let est = estimate_sharp(QuotientKind::HardyRho, &c, &w, &g, 1e-6, 5000).unwrap();
            assert!(est.history.windows(2).all(|h| h[1] >= h[0]));
            let again = reevaluate(QuotientKind::HardyRho, &c, &w, &est).unwrap();
            assert!((again - est.value).abs() <= 1e-12 * est.value);
        }
    }

    #[test]
    fn oracle_size_guard_and_degenerate_forms() {
        let c = cfg(4, 0.5);
        let w = WeightSpec::new(2.0, 0.0).unwrap();
        let big = Grid::for_domain(&c, 16, 16).unwrap();
        assert!(matches!(oracle_sharp(QuotientKind::HardyEps, &c, &w, &big), Err(LabError::SizeGuard { .. })));
        let full = cfg(4, 1.0);
        let g = Grid::for_domain(&full, 8, 8).unwrap();
        assert!(matches!(estimate_sharp(QuotientKind::Friedrichs, &full, &w, &g, 1e-8, 100), Err(LabError::Assembly(_))));
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let c = cfg(4, 0.5);
        let g = Grid::for_domain(&c, 16, 16).unwrap();
        let w = WeightSpec::new(2.0, 0.0).unwrap();
        match estimate_sharp(QuotientKind::HardyEps, &c, &w, &g, 1e-14, 2) {
            Err(LabError::Convergence { iterations, best_iterate, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(best_iterate.len(), g.len());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hardy_constant_decreases_with_more_dirichlet() {
        let w = WeightSpec::new(2.0, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [0.25, 0.5, 0.75, 1.0] {
            let c = cfg(4, delta);
            let g = Grid::for_domain(&c, 16, 16).unwrap();
            let v = estimate_sharp(QuotientKind::HardyRho, &c, &w, &g, 1e-10, 5000).unwrap().value;
            assert!(v <= prev + 1e-10, "delta {delta}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn friedrichs_constant_below_closed_form() {
        let c = cfg(8, 0.5);
        let g = Grid::for_domain(&c, 32, 32).unwrap();
        let w = WeightSpec::new(2.0, 0.0).unwrap();
        let v = estimate_sharp(QuotientKind::Friedrichs, &c, &w, &g, 1e-8, 5000).unwrap().value;
        assert!(v > 0.0 && v < 12.046875);
    }
}
