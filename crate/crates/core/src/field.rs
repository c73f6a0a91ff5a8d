//! Cell-centered scalar fields on the rectangle: discrete gradients,
//! midpoint quadrature, reflection extension and random admissible test
//! functions that vanish near the Dirichlet pieces.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{dirichlet_distance, GeometryConfig, StripClass};

/// Uniform cell-centered grid over `[x0, x0 + width] x [y0, y0 + height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
}

impl Grid {
    pub const MIN_CELLS: usize = 4;

    /// Grid over `[0, width] x [0, height]`.
    pub fn new(nx: usize, ny: usize, width: f64, height: f64) -> Result<Self> {
        Self::window(nx, ny, 0.0, 0.0, width, height)
    }

    /// Grid over an arbitrary window of the plane.
    pub fn window(nx: usize, ny: usize, x0: f64, y0: f64, width: f64, height: f64) -> Result<Self> {
        if nx < Self::MIN_CELLS || ny < Self::MIN_CELLS {
            return Err(LabError::Config(format!(
                "grid {nx}x{ny} is too coarse, need at least {0}x{0} cells",
                Self::MIN_CELLS
            )));
        }
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(LabError::Config("grid window must have positive extent".into()));
        }
        Ok(Self { nx, ny, x0, y0, width, height })
    }

    /// Grid on the rectangle of `config`. Rows must align with period boundaries.
    pub fn for_domain(config: &GeometryConfig, nx: usize, ny: usize) -> Result<Self> {
        if !ny.is_multiple_of(config.n() as usize) {
            return Err(LabError::Config(format!(
                "ny = {ny} must be a multiple of the period count n = {}",
                config.n()
            )));
        }
        Self::new(nx, ny, config.a(), config.b())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.height / self.ny as f64
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.x0, self.y0)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Row-major index, `x` fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Center of cell `(i, j)`; also valid for ghost indices outside the grid.
    #[inline]
    pub fn center(&self, i: i64, j: i64) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.hx(),
            self.y0 + (j as f64 + 0.5) * self.hy(),
        )
    }

    /// Index of the (possibly ghost) cell containing a point.
    pub fn locate(&self, x1: f64, x2: f64) -> (i64, i64) {
        (
            ((x1 - self.x0) / self.hx()).floor() as i64,
            ((x2 - self.y0) / self.hy()).floor() as i64,
        )
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        x1 >= self.x0 && x1 <= self.x0 + self.width && x2 >= self.y0 && x2 <= self.y0 + self.height
    }

    /// Dirichlet flag of every left boundary face: set when the face center
    /// lies on a Dirichlet piece.
    pub fn dirichlet_faces(&self, config: &GeometryConfig) -> Vec<bool> {
        (0..self.ny)
            .map(|j| config.strip_of(self.center(0, j as i64).1) == StripClass::Pi1)
            .collect()
    }
}

/// How a field continues outside its grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Extension {
    /// Mirror across every side; odd across Dirichlet faces of the left side.
    Reflect { dirichlet: Vec<bool> },
    /// Zero outside the window.
    Zero,
}

/// Cellwise constant function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    extension: Extension,
}

impl ScalarField {
    /// Field on the rectangle of `config` with the matching Dirichlet faces.
    pub fn on_domain(grid: Grid, config: &GeometryConfig, values: Vec<f64>) -> Result<Self> {
        let dirichlet = grid.dirichlet_faces(config);
        Self::build(grid, values, Extension::Reflect { dirichlet })
    }

    pub fn from_fn(grid: Grid, config: &GeometryConfig, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|idx| {
                let (i, j) = grid.cell(idx);
                let (x1, x2) = grid.center(i as i64, j as i64);
                f(x1, x2)
            })
            .collect();
        Self::on_domain(grid, config, values)
    }

    /// Field that reflects evenly on every side (no Dirichlet faces).
    pub fn free(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let dirichlet = vec![false; grid.ny()];
        Self::build(grid, values, Extension::Reflect { dirichlet })
    }

    /// Field on a window of the plane, zero outside.
    pub fn window(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, values, Extension::Zero)
    }

    fn build(grid: Grid, values: Vec<f64>, extension: Extension) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::Config(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = grid.cell(idx);
            return Err(LabError::Degenerate(format!("non-finite value at cell ({i}, {j})")));
        }
        Ok(Self { grid, values, extension })
    }

    /// Same grid and extension, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::build(self.grid, values, self.extension.clone())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn extension(&self) -> &Extension {
        &self.extension
    }

    /// Dirichlet flags per left face; empty for windows.
    pub fn dirichlet_mask(&self) -> &[bool] {
        match &self.extension {
            Extension::Reflect { dirichlet } => dirichlet,
            Extension::Zero => &[],
        }
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// `|u|`; its extension is the absolute value of the extension of `u`.
    pub fn abs(&self) -> ScalarField {
        let extension = match &self.extension {
            Extension::Reflect { dirichlet } => Extension::Reflect { dirichlet: vec![false; dirichlet.len()] },
            Extension::Zero => Extension::Zero,
        };
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v.abs()).collect(), extension }
    }

    /// Value of the extended field at a (possibly ghost) cell.
    pub fn extended(&self, i: i64, j: i64) -> f64 {
        match &self.extension {
            Extension::Zero => {
                if i < 0 || j < 0 || i >= self.grid.nx as i64 || j >= self.grid.ny as i64 {
                    0.0
                } else {
                    self.value(i as usize, j as usize)
                }
            }
            Extension::Reflect { dirichlet } => {
                let (fi, flips) = fold(i, self.grid.nx);
                let (fj, _) = fold(j, self.grid.ny);
                let v = self.value(fi, fj);
                if flips % 2 == 1 && dirichlet[fj] {
                    -v
                } else {
                    v
                }
            }
        }
    }

    /// Discrete `l_p` integral `sum |u|^p h_x h_y`.
    pub fn lp_integral(&self, p: f64) -> f64 {
        self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * self.grid.cell_area()
    }

    /// Writes `x1,x2,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_cell_csv(&self.grid, &self.values, out)
    }

    /// Reads a field written by [`ScalarField::write_csv`] on the rectangle of `config`.
    pub fn read_csv<R: Read>(input: R, config: &GeometryConfig) -> Result<Self> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(input).deserialize() {
            let row: CellRow = rec?;
            rows.push(row);
        }
        let axis = |pick: fn(&CellRow) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(pick).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
            v
        };
        let xs = axis(|r| r.x1);
        let ys = axis(|r| r.x2);
        let (nx, ny) = (xs.len(), ys.len());
        if nx * ny != rows.len() {
            return Err(LabError::Config(format!(
                "csv field has {} rows, not a full {nx}x{ny} grid",
                rows.len()
            )));
        }
        let grid = Grid::for_domain(config, nx, ny)?;
        let mut values = vec![f64::NAN; grid.len()];
        for r in &rows {
            let (i, j) = grid.locate(r.x1, r.x2);
            if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                return Err(LabError::Domain { x1: r.x1, x2: r.x2, a: config.a(), b: config.b() });
            }
            let (cx, cy) = grid.center(i, j);
            if (cx - r.x1).abs() > 1e-6 * grid.hx() || (cy - r.x2).abs() > 1e-6 * grid.hy() {
                return Err(LabError::Config(format!(
                    "csv point ({}, {}) is not a cell center of the {nx}x{ny} grid",
                    r.x1, r.x2
                )));
            }
            values[grid.index(i as usize, j as usize)] = r.value;
        }
        Self::on_domain(grid, config, values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRow {
    x1: f64,
    x2: f64,
    value: f64,
}

/// Writes cellwise values as `x1,x2,value` rows.
pub fn write_cell_csv<W: Write>(grid: &Grid, values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (idx, &value) in values.iter().enumerate() {
        let (i, j) = grid.cell(idx);
        let (x1, x2) = grid.center(i as i64, j as i64);
        w.serialize(CellRow { x1, x2, value })?;
    }
    w.flush()?;
    Ok(())
}

/// Maps an arbitrary index onto `0..n` by repeated mirroring; also returns
/// how many mirrors across the lower side were applied.
#[inline]
pub(crate) fn fold(mut i: i64, n: usize) -> (usize, u32) {
    let n = n as i64;
    let mut flips = 0;
    loop {
        if i < 0 {
            i = -1 - i;
            flips += 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return (i as usize, flips);
        }
    }
}

/// Discrete gradient family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientScheme {
    /// Central differences inside, one-sided second order at free sides,
    /// odd ghost across Dirichlet faces. One gradient per cell.
    Central,
    /// Forward and backward face differences, each with weight 1/2. Ghosts
    /// are even on free sides and odd across Dirichlet faces. Its quadratic
    /// form is the five-point stiffness, with no checkerboard null space.
    Compact,
}

/// At most three taps of a difference stencil.
#[derive(Debug, Clone, Copy, Default)]
struct Stencil {
    idx: [u32; 3],
    coef: [f64; 3],
    len: u8,
}

impl Stencil {
    fn new(taps: &[(usize, f64)]) -> Self {
        let mut s = Stencil::default();
        for &(i, c) in taps {
            s.idx[s.len as usize] = i as u32;
            s.coef[s.len as usize] = c;
            s.len += 1;
        }
        s
    }

    #[inline]
    fn apply(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.len as usize {
            acc += self.coef[k] * u[self.idx[k] as usize];
        }
        acc
    }

    #[inline]
    fn scatter(&self, scale: f64, out: &mut [f64]) {
        for k in 0..self.len as usize {
            out[self.idx[k] as usize] += scale * self.coef[k];
        }
    }

    fn taps(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len as usize).map(|k| (self.idx[k] as usize, self.coef[k]))
    }
}

/// One gradient sample: a cell, a quadrature share and the two components.
#[derive(Debug, Clone, Copy)]
pub struct GradSample {
    pub cell: usize,
    pub share: f64,
    gx: Stencil,
    gy: Stencil,
}

/// Linear map from cell values to gradient samples.
#[derive(Debug, Clone)]
pub struct DiffOp {
    grid: Grid,
    scheme: GradientScheme,
    samples: Vec<GradSample>,
}

impl DiffOp {
    /// `dirichlet[j]` marks the left face of row `j`; the other sides are free.
    pub fn new(grid: &Grid, dirichlet: &[bool], scheme: GradientScheme) -> Self {
        assert_eq!(dirichlet.len(), grid.ny(), "one Dirichlet flag per row");
        let samples = match scheme {
            GradientScheme::Central => central_samples(grid, dirichlet),
            GradientScheme::Compact => compact_samples(grid, dirichlet),
        };
        Self { grid: *grid, scheme, samples }
    }

    pub fn for_field(u: &ScalarField, scheme: GradientScheme) -> Self {
        Self::new(u.grid(), u.dirichlet_mask(), scheme)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scheme(&self) -> GradientScheme {
        self.scheme
    }

    pub fn samples(&self) -> &[GradSample] {
        &self.samples
    }

    /// Gradient components at every sample.
    pub fn apply(&self, u: &[f64]) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| [s.gx.apply(u), s.gy.apply(u)]).collect()
    }

    /// Accumulates the adjoint: `out += sum_s (c_s[0] grad_x_s + c_s[1] grad_y_s)`.
    pub fn apply_transpose(&self, coeffs: &[[f64; 2]], out: &mut [f64]) {
        for (s, c) in self.samples.iter().zip(coeffs) {
            s.gx.scatter(c[0], out);
            s.gy.scatter(c[1], out);
        }
    }

    /// Triplets of `sum_s w_s (gx_s gx_s^T + gy_s gy_s^T)` for per-sample weights.
    pub fn quadratic_form(&self, weights: &[f64]) -> Vec<(usize, usize, f64)> {
        assert_eq!(weights.len(), self.samples.len(), "one weight per sample");
        let mut out = Vec::new();
        for (s, &w) in self.samples.iter().zip(weights) {
            for st in [&s.gx, &s.gy] {
                for (r, cr) in st.taps() {
                    for (c, cc) in st.taps() {
                        out.push((r, c, w * cr * cc));
                    }
                }
            }
        }
        out
    }
}

fn central_samples(grid: &Grid, dirichlet: &[bool]) -> Vec<GradSample> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..ny {
        for i in 0..nx {
            let at = |ii: usize, jj: usize| grid.index(ii, jj);
            let gx = if i == 0 {
                if dirichlet[j] {
                    // ghost value -u(0, j)
                    Stencil::new(&[(at(1, j), 0.5 / hx), (at(0, j), 0.5 / hx)])
                } else {
                    Stencil::new(&[(at(0, j), -1.5 / hx), (at(1, j), 2.0 / hx), (at(2, j), -0.5 / hx)])
                }
            } else if i == nx - 1 {
                Stencil::new(&[(at(i, j), 1.5 / hx), (at(i - 1, j), -2.0 / hx), (at(i - 2, j), 0.5 / hx)])
            } else {
                Stencil::new(&[(at(i + 1, j), 0.5 / hx), (at(i - 1, j), -0.5 / hx)])
            };
            let gy = if j == 0 {
                Stencil::new(&[(at(i, 0), -1.5 / hy), (at(i, 1), 2.0 / hy), (at(i, 2), -0.5 / hy)])
            } else if j == ny - 1 {
                Stencil::new(&[(at(i, j), 1.5 / hy), (at(i, j - 1), -2.0 / hy), (at(i, j - 2), 0.5 / hy)])
            } else {
                Stencil::new(&[(at(i, j + 1), 0.5 / hy), (at(i, j - 1), -0.5 / hy)])
            };
            out.push(GradSample { cell: at(i, j), share: 1.0, gx, gy });
        }
    }
    out
}

fn compact_samples(grid: &Grid, dirichlet: &[bool]) -> Vec<GradSample> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut out = Vec::with_capacity(2 * grid.len());
    for j in 0..ny {
        for i in 0..nx {
            let at = |ii: usize, jj: usize| grid.index(ii, jj);
            let diff = |hi: usize, lo: usize, h: f64| Stencil::new(&[(hi, 1.0 / h), (lo, -1.0 / h)]);
            let fwd_x = if i + 1 < nx { diff(at(i + 1, j), at(i, j), hx) } else { Stencil::default() };
            let fwd_y = if j + 1 < ny { diff(at(i, j + 1), at(i, j), hy) } else { Stencil::default() };
            let bwd_x = if i > 0 {
                diff(at(i, j), at(i - 1, j), hx)
            } else if dirichlet[j] {
                Stencil::new(&[(at(0, j), 2.0 / hx)])
            } else {
                Stencil::default()
            };
            let bwd_y = if j > 0 { diff(at(i, j), at(i, j - 1), hy) } else { Stencil::default() };
            out.push(GradSample { cell: at(i, j), share: 0.5, gx: fwd_x, gy: fwd_y });
            out.push(GradSample { cell: at(i, j), share: 0.5, gx: bwd_x, gy: bwd_y });
        }
    }
    out
}

/// Approximate gradient at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[[f64; 2]] {
        &self.components
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        self.components[self.grid.index(i, j)]
    }

    /// Pointwise Euclidean norm.
    pub fn magnitude(&self) -> Vec<f64> {
        self.components.iter().map(|g| g[0].hypot(g[1])).collect()
    }
}

/// Central-difference gradient of a field on the rectangle.
pub fn gradient(u: &ScalarField) -> VectorField {
    let op = DiffOp::for_field(u, GradientScheme::Central);
    VectorField { grid: *u.grid(), components: op.apply(u.values()) }
}

/// `|grad u|` as a field sharing the extension of `u` (magnitudes reflect evenly).
pub fn gradient_magnitude(u: &ScalarField) -> ScalarField {
    let mag = gradient(u).magnitude();
    ScalarField { grid: *u.grid(), values: mag, extension: u.extension().clone() }.abs()
}

/// Midpoint rule `sum w(center) f(center) h_x h_y`.
pub fn integrate_weighted(grid: &Grid, f: &[f64], w: impl Fn(f64, f64) -> f64) -> Result<f64> {
    integrate_cells(grid, f, |_, _| true, w)
}

/// Midpoint rule restricted to cells whose center lies in `strip`.
pub fn integrate_weighted_strip(
    grid: &Grid,
    f: &[f64],
    config: &GeometryConfig,
    strip: StripClass,
    w: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    integrate_cells(grid, f, |_, x2| config.strip_of(x2) == strip, w)
}

fn integrate_cells(
    grid: &Grid,
    f: &[f64],
    keep: impl Fn(f64, f64) -> bool,
    w: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    assert_eq!(f.len(), grid.len());
    let mut acc = 0.0;
    for (idx, &v) in f.iter().enumerate() {
        let (i, j) = grid.cell(idx);
        let (x1, x2) = grid.center(i as i64, j as i64);
        if !keep(x1, x2) {
            continue;
        }
        let wt = w(x1, x2);
        if !wt.is_finite() {
            return Err(LabError::Quadrature { i, j });
        }
        acc += wt * v;
    }
    Ok(acc * grid.cell_area())
}

/// Neighbourhood of the Dirichlet pieces where generated functions vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    /// Distance beyond which the cutoff equals one.
    pub outer: f64,
    /// Distance below which the cutoff is exactly zero.
    pub inner: f64,
}

impl Cutoff {
    /// `outer = eps * delta / 2`, `inner = outer / 4`.
    pub fn for_config(config: &GeometryConfig) -> Self {
        let outer = config.epsilon() * config.delta() / 2.0;
        Self { outer, inner: outer / 4.0 }
    }

    /// Smootherstep in the Dirichlet distance: zero of order three at `inner`,
    /// two continuous derivatives at `outer`.
    pub fn eval(&self, r2: f64) -> f64 {
        let t = ((r2 - self.inner) / (self.outer - self.inner)).clamp(0.0, 1.0);
        t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

const MAX_DRAWS: u64 = 8;

/// Seeded admissible test function: a random smooth separable sum times the cutoff.
pub fn generate_test_function(seed: u64, grid: &Grid, config: &GeometryConfig, modes: usize) -> Result<ScalarField> {
    generate_test_function_with(seed, grid, config, modes, Cutoff::for_config(config))
}

pub fn generate_test_function_with(
    seed: u64,
    grid: &Grid,
    config: &GeometryConfig,
    modes: usize,
    cutoff: Cutoff,
) -> Result<ScalarField> {
    if modes == 0 {
        return Err(LabError::Precondition("test functions need at least one mode".into()));
    }
    if grid.width() != config.a() || grid.height() != config.b() {
        return Err(LabError::Config("grid does not cover the configured rectangle".into()));
    }
    let chi: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let (i, j) = grid.cell(idx);
            let (x1, x2) = grid.center(i as i64, j as i64);
            cutoff.eval(dirichlet_distance(config, x1, x2))
        })
        .collect();
    for attempt in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let terms: Vec<Mode> = (0..modes).map(|m| Mode::draw(&mut rng, m)).collect();
        let values: Vec<f64> = chi
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                if c == 0.0 {
                    return 0.0;
                }
                let (i, j) = grid.cell(idx);
                let (x1, x2) = grid.center(i as i64, j as i64);
                let (s, t) = (x1 / config.a(), x2 / config.b());
                c * terms.iter().map(|m| m.eval(s, t)).sum::<f64>()
            })
            .collect();
        let norm2: f64 = values.iter().map(|v| v * v).sum();
        if norm2 * grid.cell_area() > 1e-20 {
            return ScalarField::on_domain(*grid, config, values);
        }
    }
    Err(LabError::Degenerate(format!(
        "seed {seed} produced an identically zero field in {MAX_DRAWS} draws"
    )))
}

/// `c (1 + beta s^d) cos(pi kx s + phi) cos(pi ky t + psi)` in unit coordinates.
#[derive(Debug, Clone, Copy)]
struct Mode {
    coef: f64,
    beta: f64,
    degree: i32,
    kx: f64,
    ky: f64,
    phi: f64,
    psi: f64,
}

impl Mode {
    fn draw(rng: &mut impl Rng, m: usize) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            coef: rng.random_range(-1.0..1.0) / (1.0 + m as f64),
            beta: rng.random_range(-1.0..1.0),
            degree: rng.random_range(0..=2),
            kx: rng.random_range(0..=3) as f64,
            ky: rng.random_range(0..=3) as f64,
            phi: rng.random_range(0.0..tau),
            psi: rng.random_range(0.0..tau),
        }
    }

    fn eval(&self, s: f64, t: f64) -> f64 {
        let pi = std::f64::consts::PI;
        self.coef
            * (1.0 + self.beta * s.powi(self.degree))
            * (pi * self.kx * s + self.phi).cos()
            * (pi * self.ky * t + self.psi).cos()
    }
}

/// `count` test functions whose seeds derive deterministically from `seed`.
pub fn corpus(seed: u64, count: usize, grid: &Grid, config: &GeometryConfig, modes: usize) -> Result<Vec<(u64, ScalarField)>> {
    corpus_seeds(seed, count)
        .into_iter()
        .map(|s| generate_test_function(s, grid, config, modes).map(|f| (s, f)))
        .collect()
}

/// Seeds of a corpus.
pub fn corpus_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random::<u64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(n: u32, delta: f64) -> GeometryConfig {
        GeometryConfig::new(1.0, 1.0, n, delta).unwrap()
    }

    #[test]
    fn grid_alignment_is_enforced() {
        let c = unit(3, 0.5);
        assert!(Grid::for_domain(&c, 16, 16).is_err());
        assert!(Grid::for_domain(&c, 16, 18).is_ok());
        assert!(Grid::new(3, 8, 1.0, 1.0).is_err());
    }

    #[test]
    fn linear_field_has_unit_gradient() {
        let c = unit(4, 0.5);
        let g = Grid::for_domain(&c, 16, 16).unwrap();
        let u = ScalarField::from_fn(g, &c, |x, _| x).unwrap();
        let grad = gradient(&u);
        for j in 0..16 {
            for i in 1..15 {
                let v = grad.at(i, j);
                assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_free_field_has_zero_gradient() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        let u = ScalarField::free(g, vec![3.0; 64]).unwrap();
        for v in gradient(&u).components() {
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
        }
        // The compact scheme also annihilates constants with no Dirichlet face.
        let op = DiffOp::for_field(&u, GradientScheme::Compact);
        assert!(op.apply(u.values()).iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn bilinear_gradient_is_exact() {
        let c = unit(4, 0.5);
        for n in [16, 32, 64] {
            let g = Grid::for_domain(&c, n, n).unwrap();
            let u = ScalarField::from_fn(g, &c, |x, y| x * y).unwrap();
            let grad = gradient(&u);
            for idx in 0..g.len() {
                let (i, j) = g.cell(idx);
                let (x, y) = g.center(i as i64, j as i64);
                let v = grad.components()[idx];
                assert!((v[0] - y).abs() < 1e-12 && (v[1] - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_converges_at_second_order() {
        // sin(pi x) sin(pi y) vanishes on x1 = 0, so the odd ghost is consistent.
        let c = unit(4, 1.0);
        let pi = std::f64::consts::PI;
        let err = |n: usize| {
            let g = Grid::for_domain(&c, n, n).unwrap();
            let u = ScalarField::from_fn(g, &c, |x, y| (pi * x).sin() * (pi * y).cos()).unwrap();
            let grad = gradient(&u);
            (0..g.len())
                .map(|idx| {
                    let (i, j) = g.cell(idx);
                    let (x, y) = g.center(i as i64, j as i64);
                    let v = grad.components()[idx];
                    let ex = [pi * (pi * x).cos() * (pi * y).cos(), -pi * (pi * x).sin() * (pi * y).sin()];
                    (v[0] - ex[0]).abs().max((v[1] - ex[1]).abs())
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(16), err(32), err(64));
        assert!((e1 / e2).log2() >= 1.9, "order {}", (e1 / e2).log2());
        assert!((e2 / e3).log2() >= 1.9, "order {}", (e2 / e3).log2());
    }

    #[test]
    fn quadrature_examples() {
        let c = unit(2, 0.5);
        let g = Grid::for_domain(&c, 8, 8).unwrap();
        let ones = vec![1.0; g.len()];
        assert_eq!(integrate_weighted(&g, &ones, |_, _| 1.0).unwrap(), 1.0);
        assert!((integrate_weighted(&g, &ones, |x, _| x).unwrap() - 0.5).abs() < 1e-15);
        let pi2 = integrate_weighted_strip(&g, &ones, &c, StripClass::Pi2, |_, _| 1.0).unwrap();
        assert!((pi2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadrature_rejects_singular_weight() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let ones = vec![1.0; 16];
        let err = integrate_weighted(&g, &ones, |x, y| if x > 0.8 && y < 0.2 { f64::INFINITY } else { 1.0 });
        assert!(matches!(err, Err(LabError::Quadrature { i: 3, j: 0 })));
    }

    #[test]
    fn generator_is_deterministic_and_distinct() {
        let c = unit(4, 0.5);
        let g = Grid::for_domain(&c, 32, 32).unwrap();
        let a = generate_test_function(7, &g, &c, 6).unwrap();
        let b = generate_test_function(7, &g, &c, 6).unwrap();
        assert_eq!(a.values(), b.values());
        let d = generate_test_function(8, &g, &c, 6).unwrap();
        let diff: f64 = a.values().iter().zip(d.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * g.cell_area();
        assert!(diff.sqrt() > 1e-6);
        assert!(generate_test_function(7, &g, &c, 0).is_err());
    }

    #[test]
    fn full_dirichlet_cutoff_depends_on_rho_only() {
        let c = unit(4, 1.0);
        let g = Grid::for_domain(&c, 32, 32).unwrap();
        let cut = Cutoff::for_config(&c);
        let u = generate_test_function(3, &g, &c, 4).unwrap();
        for j in 0..32 {
            for i in 0..32 {
                let (x, _) = g.center(i, j);
                if x <= cut.inner {
                    assert_eq!(u.value(i as usize, j as usize), 0.0);
                }
            }
        }
    }

    #[test]
    fn odd_reflection_kills_the_trace() {
        let c = unit(4, 0.5);
        let g = Grid::for_domain(&c, 32, 32).unwrap();
        let u = generate_test_function(11, &g, &c, 5).unwrap();
        for (j, &d) in u.dirichlet_mask().iter().enumerate() {
            let face = 0.5 * (u.value(0, j) + u.extended(-1, j as i64));
            if d {
                assert!(face.abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn reflection_folds() {
        assert_eq!(fold(-1, 4), (0, 1));
        assert_eq!(fold(4, 4), (3, 0));
        assert_eq!(fold(-5, 4), (3, 1));
        assert_eq!(fold(9, 4), (1, 1));
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let u = ScalarField::window(g, (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(u.extended(-1, 0), 0.0);
        assert_eq!(u.extended(2, 1), 6.0);
    }

    #[test]
    fn csv_roundtrip() {
        let c = unit(2, 0.5);
        let g = Grid::for_domain(&c, 8, 6 * 2).unwrap();
        let u = generate_test_function(5, &g, &c, 3).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(buf.as_slice(), &c).unwrap();
        assert_eq!(back.grid(), u.grid());
        assert_eq!(back.dirichlet_mask(), u.dirichlet_mask());
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn compact_form_matches_five_point_stencil() {
        // One Dirichlet row, interior cell: diagonal 2/h^2 + 2/h^2 after halving.
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let op = DiffOp::new(&g, &[true, false, false, false], GradientScheme::Compact);
        let mut a = vec![0.0; 256];
        for (r, c, v) in op.quadratic_form(&op.samples().iter().map(|s| s.share).collect::<Vec<_>>()) {
            a[r * 16 + c] += v;
        }
        let h2 = 16.0;
        let inner = g.index(1, 1);
        assert!((a[inner * 16 + inner] - 4.0 * h2).abs() < 1e-12);
        assert!((a[inner * 16 + g.index(2, 1)] + h2).abs() < 1e-12);
        // Dirichlet face: half of (2/h)^2.
        let corner = g.index(0, 0);
        assert!((a[corner * 16 + corner] - (2.0 * h2 + 2.0 * h2)).abs() < 1e-12);
        let free_corner = g.index(0, 1);
        assert!((a[free_corner * 16 + free_corner] - 3.0 * h2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn generated_fields_vanish_near_dirichlet(seed in any::<u64>(), n in prop::sample::select(vec![2u32, 4, 8]), delta in prop::sample::select(vec![0.25, 0.5, 0.75, 1.0])) {
            let c = unit(n, delta);
            let g = Grid::for_domain(&c, 32, 32).unwrap();
            let cut = Cutoff::for_config(&c);
            let u = generate_test_function(seed, &g, &c, 4).unwrap();
            let mut any_nonzero = false;
            for idx in 0..g.len() {
                let (i, j) = g.cell(idx);
                let (x, y) = g.center(i as i64, j as i64);
                if dirichlet_distance(&c, x, y) < cut.outer / 8.0 {
                    prop_assert!(u.values()[idx].abs() <= 1e-14);
                }
                any_nonzero |= u.values()[idx] != 0.0;
            }
            prop_assert!(any_nonzero);
            let grad = gradient(&u).magnitude();
            prop_assert!(grad.iter().all(|v| v.is_finite()));
            prop_assert!(grad.iter().any(|&v| v > 0.0));
        }

        #[test]
        fn quadrature_is_linear_and_monotone(f in prop::collection::vec(-5.0f64..5.0, 16), g2 in prop::collection::vec(0.0f64..5.0, 16), s in -3.0f64..3.0) {
            let grid = Grid::new(4, 4, 1.0, 2.0).unwrap();
            let w = |x: f64, y: f64| 1.0 + x * y;
            let combo: Vec<f64> = f.iter().zip(&g2).map(|(a, b)| a + s * b).collect();
            let lhs = integrate_weighted(&grid, &combo, w).unwrap();
            let rhs = integrate_weighted(&grid, &f, w).unwrap() + s * integrate_weighted(&grid, &g2, w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let bigger: Vec<f64> = f.iter().zip(&g2).map(|(a, b)| a + b).collect();
            prop_assert!(integrate_weighted(&grid, &bigger, w).unwrap() >= integrate_weighted(&grid, &f, w).unwrap() - 1e-12);
        }
    }
}
