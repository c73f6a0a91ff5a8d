//! Both sides of the Friedrichs, Hardy, pointwise and mean-value
//! inequalities on discrete fields, the closed-form constants that bound
//! them, and the Maz'ya capacity-type functional `B`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{gradient_magnitude, DiffOp, GradientScheme, Grid, ScalarField};
use crate::geometry::{distances, GeometryConfig, StripClass};
use crate::maxop::{ball_average, ball_integrals_abs, riesz_about, riesz_potential, MaximalEngine, RadiusSchedule};

/// Calibrated Hardy-Littlewood constant: the measured `||M f||_p / ||f||_p`
/// over generated fields and their gradient magnitudes peaks near 1.274 at
/// `p = 1.5` (1.18 at `p = 2`, 1.09 at `p = 3`), rounded up.
pub const DEFAULT_C_HL: f64 = 1.3;

/// Pointwise constant in the statement of the pointwise inequality.
pub const C_PW_STATEMENT: f64 = 4.0;
/// Pointwise constant produced by the printed proof.
pub const C_PW_PROOF: f64 = 8.0;
/// Pointwise constant from the mean-value bound (`4`) times the Riesz-maximal bound (`4 pi`).
pub const C_PW_CORRECTED: f64 = 16.0 * PI;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeight {
    p: f64,
    #[serde(default)]
    alpha: f64,
}

/// Exponent `p`, its conjugate `q`, weight power `alpha` and `sigma = alpha / p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeight", into = "RawWeight")]
pub struct WeightSpec {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl TryFrom<RawWeight> for WeightSpec {
    type Error = LabError;

    fn try_from(raw: RawWeight) -> Result<Self> {
        WeightSpec::new(raw.p, raw.alpha)
    }
}

impl From<WeightSpec> for RawWeight {
    fn from(w: WeightSpec) -> Self {
        RawWeight { p: w.p, alpha: w.alpha }
    }
}

impl WeightSpec {
    pub fn new(p: f64, alpha: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(LabError::Config(format!("p must exceed 1, got {p}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(LabError::Config(format!("alpha must be non-negative, got {alpha}")));
        }
        Ok(Self { p, q: p / (p - 1.0), alpha, sigma: alpha / p })
    }
}

/// Slack factor on continuum bounds: 5% from 128 cells per side, 10% from
/// 64, 20% below.
pub fn resolution_tolerance(nx: usize, ny: usize) -> f64 {
    match nx.min(ny) {
        n if n >= 128 => 0.05,
        n if n >= 64 => 0.10,
        _ => 0.20,
    }
}

/// `p * C2^(-1/p)`: the largest `alpha` with `1 - C2 (alpha/p)^p > 0`.
pub fn alpha_max(p: f64, c2: f64) -> f64 {
    p * c2.powf(-1.0 / p)
}

/// Closed-form constants for one geometry and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// Friedrichs constant `K(a, eps, delta)`.
    pub k: f64,
    pub c_pw_stmt: f64,
    pub c_pw_proof: f64,
    pub c_pw_corrected: f64,
    /// Hardy-Littlewood constant used below.
    pub c_hl: f64,
    /// Unweighted Hardy constant `8^p c_hl^p`.
    pub c: f64,
    /// `C 2^p (p/2 + 1)`.
    pub c2: f64,
    pub alpha_max: f64,
    /// `C2 / (1 - C2 sigma^p)`; absent when `alpha >= alpha_max`.
    pub c_weighted: Option<f64>,
    /// `2^(alpha/2) (1-delta)^(alpha/2) eps^(alpha/2)` times `c_weighted`.
    pub c1_angle: Option<f64>,
    /// Depends on an angle that is not fixed by the geometry; see [`c2_for_angle`].
    pub c2_angle: Option<f64>,
}

/// Weighted Hardy constant in `rho` for a given angle `gamma` (radians).
pub fn c2_for_angle(config: &GeometryConfig, w: &WeightSpec, c1_angle: f64, gamma: f64) -> f64 {
    c1_angle * (1.0 + config.strip_shift() / gamma.tan()).powf(w.p - w.alpha)
}

pub fn bound_constants(config: &GeometryConfig, w: &WeightSpec, c_hl: f64) -> Result<BoundConstants> {
    let (p, delta) = (w.p, config.delta());
    if delta <= 0.0 {
        return Err(LabError::Config("delta must be positive".into()));
    }
    if !(c_hl > 0.0) {
        return Err(LabError::Config(format!("c_hl must be positive, got {c_hl}")));
    }
    let eps = config.epsilon();
    // p/q + 1 = p
    let k = 2f64.powf(p) * (p + 1.0) * (config.a().powf(p) * (1.0 - delta) / delta + (eps * (1.0 - delta)).powf(p));
    let c = 8f64.powf(p) * c_hl.powf(p);
    let c2 = c * 2f64.powf(p) * (p / 2.0 + 1.0);
    let a_max = alpha_max(p, c2);
    let c_weighted = (w.alpha < a_max).then(|| c2 / (1.0 - c2 * w.sigma.powf(p)));
    let c1_angle = c_weighted.map(|c4| (2.0 * (1.0 - delta) * eps).powf(w.alpha / 2.0) * c4);
    Ok(BoundConstants {
        k,
        c_pw_stmt: C_PW_STATEMENT,
        c_pw_proof: C_PW_PROOF,
        c_pw_corrected: C_PW_CORRECTED,
        c_hl,
        c,
        c2,
        alpha_max: a_max,
        c_weighted,
        c1_angle,
        c2_angle: None,
    })
}

/// Where a report came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Provenance {
    pub nx: usize,
    pub ny: usize,
    pub config: GeometryConfig,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuotientReport {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    pub bound: Option<f64>,
    /// `bound - ratio`.
    pub slack: Option<f64>,
    pub meta: Provenance,
}

impl QuotientReport {
    fn new(numerator: f64, denominator: f64, bound: Option<f64>, meta: Provenance) -> Self {
        let ratio = numerator / denominator;
        Self { numerator, denominator, ratio, bound, slack: bound.map(|b| b - ratio), meta }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }
}

/// Distance used by a Hardy weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardyVariant {
    /// `rho_eps`, shifted on the free strips.
    Eps,
    /// `rho`, the distance to the whole left side.
    Rho,
}

impl HardyVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            HardyVariant::Eps => "eps",
            HardyVariant::Rho => "rho",
        }
    }
}

/// Discrete quotient `sum_cells a_i |u_i|^p / sum_samples b_s |grad_s u|^p`.
#[derive(Debug, Clone)]
pub struct Quotient {
    p: f64,
    op: DiffOp,
    num_w: Vec<f64>,
    den_w: Vec<f64>,
}

impl Quotient {
    /// Friedrichs quotient: `|u|^p` on the free strips over `|grad u|^p` everywhere.
    pub fn friedrichs(grid: &Grid, config: &GeometryConfig, p: f64, scheme: GradientScheme) -> Result<Self> {
        let cell = grid.cell_area();
        Self::assemble(grid, config, p, scheme, |_, x2| {
            let w = if config.strip_of(x2) == StripClass::Pi2 { cell } else { 0.0 };
            Ok((w, cell))
        })
    }

    /// Hardy quotient with weights `d^(alpha-p)` and `d^alpha`.
    pub fn hardy(
        grid: &Grid,
        config: &GeometryConfig,
        w: &WeightSpec,
        variant: HardyVariant,
        scheme: GradientScheme,
    ) -> Result<Self> {
        let cell = grid.cell_area();
        Self::assemble(grid, config, w.p, scheme, |x1, x2| {
            let d = distances(x1, x2, config)?;
            let d = match variant {
                HardyVariant::Eps => d.rho_eps,
                HardyVariant::Rho => d.rho,
            };
            Ok((d.powf(w.alpha - w.p) * cell, d.powf(w.alpha) * cell))
        })
    }

    /// `weights(x1, x2)` gives the numerator and denominator weight at a cell center.
    fn assemble(
        grid: &Grid,
        config: &GeometryConfig,
        p: f64,
        scheme: GradientScheme,
        weights: impl Fn(f64, f64) -> Result<(f64, f64)>,
    ) -> Result<Self> {
        if grid.width() != config.a() || grid.height() != config.b() || grid.origin() != (0.0, 0.0) {
            return Err(LabError::Config("grid does not cover the configured rectangle".into()));
        }
        let op = DiffOp::new(grid, &grid.dirichlet_faces(config), scheme);
        let mut num_w = Vec::with_capacity(grid.len());
        let mut cell_den = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let (i, j) = grid.cell(idx);
            let (x1, x2) = grid.center(i as i64, j as i64);
            let (a, b) = weights(x1, x2)?;
            if !(a.is_finite() && b.is_finite()) {
                return Err(LabError::Quadrature { i, j });
            }
            num_w.push(a);
            cell_den.push(b);
        }
        let den_w = op.samples().iter().map(|s| cell_den[s.cell] * s.share).collect();
        Ok(Self { p, op, num_w, den_w })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn op(&self) -> &DiffOp {
        &self.op
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    /// Per-cell numerator weights.
    pub fn numerator_weights(&self) -> &[f64] {
        &self.num_w
    }

    /// Per-sample denominator weights.
    pub fn denominator_weights(&self) -> &[f64] {
        &self.den_w
    }

    pub fn numerator(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.num_w).map(|(v, w)| w * v.abs().powf(self.p)).sum()
    }

    pub fn denominator(&self, u: &[f64]) -> f64 {
        self.op
            .apply(u)
            .iter()
            .zip(&self.den_w)
            .map(|(g, w)| w * (g[0] * g[0] + g[1] * g[1]).powf(self.p / 2.0))
            .sum()
    }

    pub fn parts(&self, u: &[f64]) -> (f64, f64) {
        (self.numerator(u), self.denominator(u))
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let (n, d) = self.parts(u);
        n / d
    }

    /// Quotient value and its gradient with respect to the cell values.
    pub fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let p = self.p;
        let grads = self.op.apply(u);
        let mut den = 0.0;
        let coeffs: Vec<[f64; 2]> = grads
            .iter()
            .zip(&self.den_w)
            .map(|(g, w)| {
                let m2 = g[0] * g[0] + g[1] * g[1];
                den += w * m2.powf(p / 2.0);
                let s = if m2 > 0.0 { p * w * m2.powf(p / 2.0 - 1.0) } else { 0.0 };
                [s * g[0], s * g[1]]
            })
            .collect();
        let num = self.numerator(u);
        let q = num / den;
        let mut dden = vec![0.0; u.len()];
        self.op.apply_transpose(&coeffs, &mut dden);
        let grad = u
            .iter()
            .zip(&self.num_w)
            .zip(&dden)
            .map(|((v, w), dd)| {
                let dn = if *v != 0.0 { p * w * v.abs().powf(p - 1.0) * v.signum() } else { 0.0 };
                (dn - q * dd) / den
            })
            .collect();
        (q, grad)
    }

    fn report(&self, u: &ScalarField, config: &GeometryConfig, bound: Option<f64>) -> Result<QuotientReport> {
        if u.grid() != self.grid() {
            return Err(LabError::Config("field grid does not match the quotient grid".into()));
        }
        let (n, d) = self.parts(u.values());
        if d == 0.0 {
            return Err(LabError::Degenerate("the gradient integral vanishes".into()));
        }
        let meta = Provenance { nx: u.grid().nx(), ny: u.grid().ny(), config: *config, seed: None };
        Ok(QuotientReport::new(n, d, bound, meta))
    }
}

/// `int_{Pi2} |u|^p / int |grad u|^p` against `K`.
pub fn friedrichs_quotient(u: &ScalarField, config: &GeometryConfig, p: f64) -> Result<QuotientReport> {
    friedrichs_quotient_with(u, config, p, GradientScheme::Central)
}

pub fn friedrichs_quotient_with(
    u: &ScalarField,
    config: &GeometryConfig,
    p: f64,
    scheme: GradientScheme,
) -> Result<QuotientReport> {
    let w = WeightSpec::new(p, 0.0)?;
    let k = bound_constants(config, &w, DEFAULT_C_HL)?.k;
    Quotient::friedrichs(u.grid(), config, p, scheme)?.report(u, config, Some(k))
}

/// Discretization and admissibility options for Hardy quotients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardyOptions {
    pub scheme: GradientScheme,
    /// Hardy-Littlewood constant for the `alpha < alpha_max` check; `None` skips it.
    pub c_hl: Option<f64>,
}

impl Default for HardyOptions {
    fn default() -> Self {
        Self { scheme: GradientScheme::Central, c_hl: Some(DEFAULT_C_HL) }
    }
}

/// `int d^(alpha-p) |u|^p / int d^alpha |grad u|^p`.
pub fn hardy_quotient(
    u: &ScalarField,
    config: &GeometryConfig,
    w: &WeightSpec,
    variant: HardyVariant,
) -> Result<QuotientReport> {
    hardy_quotient_with(u, config, w, variant, HardyOptions::default())
}

pub fn hardy_quotient_with(
    u: &ScalarField,
    config: &GeometryConfig,
    w: &WeightSpec,
    variant: HardyVariant,
    opts: HardyOptions,
) -> Result<QuotientReport> {
    if let Some(c_hl) = opts.c_hl {
        check_admissible(config, w, c_hl)?;
    }
    Quotient::hardy(u.grid(), config, w, variant, opts.scheme)?.report(u, config, None)
}

/// Fails unless `alpha < alpha_max` for the given Hardy-Littlewood constant.
pub fn check_admissible(config: &GeometryConfig, w: &WeightSpec, c_hl: f64) -> Result<()> {
    let pc = bound_constants(config, w, c_hl)?;
    if w.alpha > 0.0 && w.alpha >= pc.alpha_max {
        return Err(LabError::Precondition(format!(
            "alpha = {} is not below alpha_max = {:.6} (p = {}, c_hl = {})",
            w.alpha, pc.alpha_max, w.p, c_hl
        )));
    }
    Ok(())
}

/// Largest pointwise ratio and its comparison with the three constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointwiseReport {
    pub max_ratio: f64,
    pub argmax_cell: (usize, usize),
    pub cells: usize,
    pub slack_stmt: f64,
    pub slack_proof: f64,
    pub slack_corrected: f64,
}

/// Schedule reaching the largest `rho_eps` on the rectangle.
pub fn pointwise_schedule(grid: &Grid, config: &GeometryConfig) -> Result<RadiusSchedule> {
    RadiusSchedule::for_grid(grid, config.a() + config.strip_shift())
}

/// `max_x |u(x)| / (rho_eps(x) M_{rho_eps(x)}(|grad u| chi_B)(x))`, with
/// `B = B(xbar, rho_eps(x))` and `xbar = (0, x2)`, over cells with a positive
/// maximal value.
pub fn pointwise_ratio(u: &ScalarField, config: &GeometryConfig, schedule: &RadiusSchedule) -> Result<PointwiseReport> {
    let grid = *u.grid();
    let (hx, hy) = (grid.hx(), grid.hy());
    let g = gradient_magnitude(u);
    let rho_eps: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let (i, j) = grid.cell(idx);
            let (x1, x2) = grid.center(i as i64, j as i64);
            distances(x1, x2, config).map(|d| d.rho_eps)
        })
        .collect::<Result<_>>()?;
    let needed = rho_eps.iter().copied().fold(0.0, f64::max);
    if schedule.r_max() < needed * (1.0 - 1e-12) {
        return Err(LabError::Precondition(format!(
            "schedule ends at {} but rho_eps reaches {needed}",
            schedule.r_max()
        )));
    }
    let engine = MaximalEngine::new(&grid, schedule)?;
    let padded = engine.pad(&g);
    let mut best = (f64::NEG_INFINITY, (0, 0));
    let mut cells = 0;
    for (idx, &r) in rho_eps.iter().enumerate() {
        let (i, j) = grid.cell(idx);
        let (x1, _) = grid.center(i as i64, j as i64);
        // Cells of row offset dj whose centers lie in B(xbar, r), as absolute column bounds.
        let in_ball = |dj: i64| {
            let dy = dj as f64 * hy;
            let s2 = r * r - dy * dy;
            if s2 < 0.0 {
                return None;
            }
            let s = s2.sqrt() * (1.0 + 1e-12);
            Some(((-s / hx - 0.5).ceil() as i64, (s / hx - 0.5).floor() as i64))
        };
        let m = engine.maximal_at(&padded, i, j, r, in_ball);
        if m <= 0.0 {
            continue;
        }
        debug_assert!(x1 <= r + 1e-12);
        cells += 1;
        let ratio = u.values()[idx].abs() / (r * m);
        if ratio > best.0 {
            best = (ratio, (i, j));
        }
    }
    if cells == 0 {
        return Err(LabError::Degenerate("every maximal value vanishes".into()));
    }
    Ok(PointwiseReport {
        max_ratio: best.0,
        argmax_cell: best.1,
        cells,
        slack_stmt: C_PW_STATEMENT - best.0,
        slack_proof: C_PW_PROOF - best.0,
        slack_corrected: C_PW_CORRECTED - best.0,
    })
}

/// One mean-value check around a sample ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaReport {
    pub center: (f64, f64),
    pub radius: f64,
    /// `|u(x) - u_B|`.
    pub mean_gap: f64,
    /// `2 int_B |grad u(z)| / |x - z| dz`.
    pub riesz_bound: f64,
    /// Smallest Riesz integral over `B` with the pole on sampled points of the left side.
    pub boundary_riesz: Option<f64>,
    /// Riesz integral over `B` with the pole at the center.
    pub center_riesz: f64,
}

impl LemmaReport {
    pub fn mean_value_holds(&self, tol: f64) -> bool {
        self.mean_gap <= self.riesz_bound * (1.0 + tol)
    }

    pub fn boundary_holds(&self, tol: f64) -> Option<bool> {
        self.boundary_riesz.map(|b| b <= self.center_riesz * (1.0 + tol))
    }
}

const BOUNDARY_SAMPLES: usize = 17;

/// Mean-value and boundary-pole Riesz checks at sample balls `(center, radius)`.
///
/// `u(x)` is the value of the cell holding `x`.
pub fn lemma_checks(u: &ScalarField, samples: &[((f64, f64), f64)]) -> Result<Vec<LemmaReport>> {
    let g = gradient_magnitude(u);
    let grid = u.grid();
    samples
        .iter()
        .map(|&(x, r)| {
            let ux = {
                let (i, j) = grid.locate(x.0, x.1);
                u.extended(i, j)
            };
            let mean_gap = (ux - ball_average(u, x, r)?).abs();
            let center_riesz = riesz_potential(&g, x, r)?;
            let boundary_riesz = if x.0 <= r {
                let half = (r * r - x.0 * x.0).sqrt();
                let mut best = f64::INFINITY;
                for k in 0..BOUNDARY_SAMPLES {
                    let t = -half + 2.0 * half * k as f64 / (BOUNDARY_SAMPLES - 1) as f64;
                    let y2 = x.1 + t;
                    if !(0.0..=grid.origin().1 + grid.height()).contains(&y2) {
                        continue;
                    }
                    best = best.min(riesz_about(&g, (0.0, y2), x, r)?);
                }
                best.is_finite().then_some(best)
            } else {
                None
            };
            Ok(LemmaReport { center: x, radius: r, mean_gap, riesz_bound: 2.0 * center_riesz, boundary_riesz, center_riesz })
        })
        .collect()
}

/// `max over centers and radii of R^(1 - 2/p) (int_{B_R(x)} V)^(1/q)`, a
/// grid-restricted lower estimate of the two-dimensional `B` functional.
pub fn mazya_b(v: &ScalarField, p: f64, q: f64, centers: &[(f64, f64)], radii: &RadiusSchedule) -> Result<f64> {
    let applicable = (p == 1.0 && q >= 1.0) || (p > 1.0 && p < 2.0 && q > p);
    if !applicable {
        return Err(LabError::Precondition(format!(
            "the B functional in the plane needs p = 1 <= q or 1 < p < 2, p < q; got p = {p}, q = {q}"
        )));
    }
    if v.values().iter().any(|&x| x < 0.0) {
        return Err(LabError::Precondition("V must be non-negative".into()));
    }
    let mut best: f64 = 0.0;
    for &x in centers {
        let integrals = ball_integrals_abs(v, x, radii)?;
        for (&r, &i) in radii.radii().iter().zip(&integrals) {
            best = best.max(r.powf(1.0 - 2.0 / p) * i.powf(1.0 / q));
        }
    }
    Ok(best)
}
