//! Ball averages, Hardy-Littlewood maximal functions and the order-one Riesz
//! potential for cellwise constant fields.
//!
//! Disk integrals use the exact area of each cell inside the disk, so ball
//! averages are exact for cellwise constant data. Balls that leave the grid
//! read the field's extension.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{fold, Grid, ScalarField};

/// `2^(1/4)`, the largest ratio between consecutive scheduled radii.
const GROWTH: f64 = 1.189_207_115_002_721;

/// Area of `[x0, x1] x [y0, y1]` inside the disk of radius `r` centered at the origin.
pub fn rect_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let area = tail(x0, y0, r) - tail(x1, y0, r) - tail(x0, y1, r) + tail(x1, y1, r);
    area.max(0.0).min((x1 - x0) * (y1 - y0))
}

/// Area of the disk part with `X >= x` and `Y >= y`, for `x, y >= 0`.
fn corner(x: f64, y: f64, r: f64) -> f64 {
    if x >= r || y >= r || x * x + y * y >= r * r {
        return 0.0;
    }
    let prim = |t: f64| 0.5 * (t * (r * r - t * t).max(0.0).sqrt() + r * r * (t / r).clamp(-1.0, 1.0).asin());
    let x_end = (r * r - y * y).sqrt();
    prim(x_end) - prim(x) - y * (x_end - x)
}

/// Area of the disk part with `X >= x` and `Y >= y`, any signs.
fn tail(x: f64, y: f64, r: f64) -> f64 {
    let half = |s: f64| 2.0 * corner(s, 0.0, r);
    match (x >= 0.0, y >= 0.0) {
        (true, true) => corner(x, y, r),
        (false, true) => half(y) - corner(-x, y, r),
        (true, false) => half(x) - corner(x, -y, r),
        (false, false) => PI * r * r - half(-x) - half(-y) + corner(-x, -y, r),
    }
}

/// Increasing list of ball radii ending at `R_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSchedule {
    radii: Vec<f64>,
}

impl RadiusSchedule {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(LabError::Config("radius schedule is empty".into()));
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|r| !r.is_finite()) {
            return Err(LabError::Config("radii must be positive, finite and strictly increasing".into()));
        }
        Ok(Self { radii })
    }

    /// Starts at `h`, grows by `2^(1/4)` with steps capped at `h`, ends at `r_max`.
    pub fn geometric(h: f64, r_max: f64) -> Result<Self> {
        if !(h > 0.0 && r_max > 0.0) {
            return Err(LabError::Config("schedule needs positive spacing and R_max".into()));
        }
        let mut radii = Vec::new();
        let mut r = h;
        while r < r_max * (1.0 - 1e-12) {
            radii.push(r);
            r = (r * GROWTH).min(r + h);
        }
        radii.push(r_max);
        Self::new(radii)
    }

    /// Default schedule for a grid: spacing `max(hx, hy)`.
    pub fn for_grid(grid: &Grid, r_max: f64) -> Result<Self> {
        Self::geometric(grid.hx().max(grid.hy()), r_max)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().expect("non-empty schedule")
    }

    /// Radii up to and including `r` (clipped schedule).
    pub fn truncated(&self, r: f64) -> Result<Self> {
        let mut radii: Vec<f64> = self.radii.iter().copied().filter(|&x| x < r).collect();
        radii.push(r);
        Self::new(radii)
    }
}

fn check_radius(grid: &Grid, r: f64) -> Result<()> {
    let h = grid.hx().max(grid.hy());
    if !(r >= h / 4.0) {
        return Err(LabError::Resolution { radius: r, h });
    }
    Ok(())
}

/// Bounding range of extended cell indices touched by a disk.
fn disk_cells(grid: &Grid, cx: f64, cy: f64, r: f64) -> (i64, i64, i64, i64) {
    let (x0, y0) = grid.origin();
    let (hx, hy) = (grid.hx(), grid.hy());
    (
        ((cx - r - x0) / hx).floor() as i64,
        ((cx + r - x0) / hx).floor() as i64,
        ((cy - r - y0) / hy).floor() as i64,
        ((cy + r - y0) / hy).floor() as i64,
    )
}

/// Cell `(i, j)` relative to a point: `(x0, x1, y0, y1)`.
#[inline]
fn rel_cell(grid: &Grid, i: i64, j: i64, cx: f64, cy: f64) -> (f64, f64, f64, f64) {
    let (ox, oy) = grid.origin();
    let (hx, hy) = (grid.hx(), grid.hy());
    let x0 = ox + i as f64 * hx - cx;
    let y0 = oy + j as f64 * hy - cy;
    (x0, x0 + hx, y0, y0 + hy)
}

/// Nearest and farthest distance from the origin to a rectangle.
#[inline]
fn rect_range(x0: f64, x1: f64, y0: f64, y1: f64) -> (f64, f64) {
    let nx = if x0 > 0.0 { x0 } else if x1 < 0.0 { -x1 } else { 0.0 };
    let ny = if y0 > 0.0 { y0 } else if y1 < 0.0 { -y1 } else { 0.0 };
    let fx = x0.abs().max(x1.abs());
    let fy = y0.abs().max(y1.abs());
    (nx.hypot(ny), fx.hypot(fy))
}

/// Area of a cell inside a disk, classified by its distance range first.
#[inline]
fn overlap(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let (dmin, dmax) = rect_range(x0, x1, y0, y1);
    if dmax <= r {
        (x1 - x0) * (y1 - y0)
    } else if dmin >= r {
        0.0
    } else {
        rect_disk_area(x0, x1, y0, y1, r)
    }
}

/// `integral over B(center, r)` of the extended field.
pub fn ball_integral(f: &ScalarField, center: (f64, f64), r: f64) -> Result<f64> {
    let grid = f.grid();
    check_radius(grid, r)?;
    let (i0, i1, j0, j1) = disk_cells(grid, center.0, center.1, r);
    let mut acc = 0.0;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let (x0, x1, y0, y1) = rel_cell(grid, i, j, center.0, center.1);
            let a = overlap(x0, x1, y0, y1, r);
            if a > 0.0 {
                acc += f.extended(i, j) * a;
            }
        }
    }
    Ok(acc)
}

/// Mean of the extended field over `B(center, r)`.
pub fn ball_average(f: &ScalarField, center: (f64, f64), r: f64) -> Result<f64> {
    check_center(f.grid(), center)?;
    Ok(ball_integral(f, center, r)? / (PI * r * r))
}

fn check_center(grid: &Grid, (x1, x2): (f64, f64)) -> Result<()> {
    if grid.contains(x1, x2) {
        Ok(())
    } else {
        let (ox, oy) = grid.origin();
        Err(LabError::Domain { x1, x2, a: ox + grid.width(), b: oy + grid.height() })
    }
}

/// Integrals of `|f|` over `B(center, r_k)` for every scheduled radius, in one pass.
pub fn ball_integrals_abs(f: &ScalarField, center: (f64, f64), schedule: &RadiusSchedule) -> Result<Vec<f64>> {
    let grid = f.grid();
    let radii = schedule.radii();
    check_radius(grid, radii[0])?;
    let r_max = schedule.r_max();
    let (i0, i1, j0, j1) = disk_cells(grid, center.0, center.1, r_max);
    let mut full = vec![0.0; radii.len() + 1];
    let mut part = vec![0.0; radii.len()];
    for j in j0..=j1 {
        for i in i0..=i1 {
            let v = f.extended(i, j).abs();
            if v == 0.0 {
                continue;
            }
            let (x0, x1, y0, y1) = rel_cell(grid, i, j, center.0, center.1);
            let (dmin, dmax) = rect_range(x0, x1, y0, y1);
            if dmin >= r_max {
                continue;
            }
            let first_full = radii.partition_point(|&r| r < dmax);
            full[first_full] += v;
            for (k, &r) in radii.iter().enumerate().take(first_full) {
                if r > dmin {
                    part[k] += v * rect_disk_area(x0, x1, y0, y1, r);
                }
            }
        }
    }
    let cell = grid.cell_area();
    let mut acc = 0.0;
    Ok(radii
        .iter()
        .enumerate()
        .map(|(k, _)| {
            acc += full[k];
            acc * cell + part[k]
        })
        .collect())
}

/// `M_R f (x)`: the largest scheduled ball average of `|f|` around `x`.
pub fn maximal_fn(f: &ScalarField, x: (f64, f64), schedule: &RadiusSchedule) -> Result<f64> {
    check_center(f.grid(), x)?;
    let integrals = ball_integrals_abs(f, x, schedule)?;
    Ok(integrals
        .iter()
        .zip(schedule.radii())
        .map(|(i, r)| i / (PI * r * r))
        .fold(0.0, f64::max))
}

/// `integral over B(x, r) of |f(z)| / |x - z| dz`.
///
/// The cell holding `x` is replaced by the exact integral over the disk of
/// equal area, `2 pi r_eq` per unit density.
pub fn riesz_potential(f: &ScalarField, x: (f64, f64), r: f64) -> Result<f64> {
    riesz_about(f, x, x, r)
}

/// Riesz integral over `B(ball_center, r)` with the kernel singular at `pole`.
pub fn riesz_about(f: &ScalarField, pole: (f64, f64), ball_center: (f64, f64), r: f64) -> Result<f64> {
    let grid = f.grid();
    check_radius(grid, r)?;
    let (hx, hy) = (grid.hx(), grid.hy());
    let r_eq = (hx * hy / PI).sqrt();
    let (pi, pj) = grid.locate(pole.0, pole.1);
    let (i0, i1, j0, j1) = disk_cells(grid, ball_center.0, ball_center.1, r);
    let mut acc = 0.0;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let (x0, x1, y0, y1) = rel_cell(grid, i, j, ball_center.0, ball_center.1);
            let a = overlap(x0, x1, y0, y1, r);
            if a == 0.0 {
                continue;
            }
            let v = f.extended(i, j).abs();
            if i == pi && j == pj {
                acc += v * 2.0 * PI * r_eq * (a / (hx * hy));
            } else {
                let (cx, cy) = grid.center(i, j);
                acc += v * a / (cx - pole.0).hypot(cy - pole.1);
            }
        }
    }
    Ok(acc)
}

/// Extended copy of a field with ghost margins, for fast repeated lookup.
#[derive(Debug, Clone)]
pub struct Padded {
    data: Vec<f64>,
    mi: i64,
    mj: i64,
    stride: i64,
}

impl Padded {
    pub fn new(f: &ScalarField, mi: i64, mj: i64) -> Self {
        let (nx, ny) = (f.grid().nx() as i64, f.grid().ny() as i64);
        let stride = nx + 2 * mi;
        let mut data = Vec::with_capacity((stride * (ny + 2 * mj)) as usize);
        for j in -mj..ny + mj {
            for i in -mi..nx + mi {
                data.push(f.extended(i, j));
            }
        }
        Self { data, mi, mj, stride }
    }

    #[inline]
    pub fn get(&self, i: i64, j: i64) -> f64 {
        self.data[((j + self.mj) * self.stride + i + self.mi) as usize]
    }
}

/// Per-offset disk coverage for one grid spacing and radius schedule.
#[derive(Debug, Clone)]
struct DiskTable {
    hx: f64,
    hy: f64,
    radii: Vec<f64>,
    reach_i: i64,
    reach_j: i64,
    first_full: Vec<u32>,
    dmin: Vec<f64>,
    dmax: Vec<f64>,
    partial_start: Vec<u32>,
    partial: Vec<(u32, f64)>,
}

impl DiskTable {
    fn new(hx: f64, hy: f64, radii: &[f64]) -> Self {
        let r_max = *radii.last().unwrap();
        let reach_i = (r_max / hx + 1.0).ceil() as i64;
        let reach_j = (r_max / hy + 1.0).ceil() as i64;
        let count = ((2 * reach_i + 1) * (2 * reach_j + 1)) as usize;
        let mut t = DiskTable {
            hx,
            hy,
            radii: radii.to_vec(),
            reach_i,
            reach_j,
            first_full: Vec::with_capacity(count),
            dmin: Vec::with_capacity(count),
            dmax: Vec::with_capacity(count),
            partial_start: Vec::with_capacity(count + 1),
            partial: Vec::new(),
        };
        for dj in -reach_j..=reach_j {
            for di in -reach_i..=reach_i {
                let (x0, x1, y0, y1) = t.rect(di, dj);
                let (dmin, dmax) = rect_range(x0, x1, y0, y1);
                let first_full = radii.partition_point(|&r| r < dmax);
                t.partial_start.push(t.partial.len() as u32);
                for (k, &r) in radii.iter().enumerate().take(first_full) {
                    if r > dmin {
                        t.partial.push((k as u32, rect_disk_area(x0, x1, y0, y1, r)));
                    }
                }
                t.first_full.push(first_full as u32);
                t.dmin.push(dmin);
                t.dmax.push(dmax);
            }
        }
        t.partial_start.push(t.partial.len() as u32);
        t
    }

    #[inline]
    fn rect(&self, di: i64, dj: i64) -> (f64, f64, f64, f64) {
        let x0 = (di as f64 - 0.5) * self.hx;
        let y0 = (dj as f64 - 0.5) * self.hy;
        (x0, x0 + self.hx, y0, y0 + self.hy)
    }

    #[inline]
    fn offset(&self, di: i64, dj: i64) -> usize {
        ((dj + self.reach_j) * (2 * self.reach_i + 1) + di + self.reach_i) as usize
    }
}

/// Maximal functions evaluated at cell centers with a shared coverage table.
#[derive(Debug, Clone)]
pub struct MaximalEngine {
    grid: Grid,
    table: DiskTable,
}

impl MaximalEngine {
    pub fn new(grid: &Grid, schedule: &RadiusSchedule) -> Result<Self> {
        check_radius(grid, schedule.radii()[0])?;
        Ok(Self { grid: *grid, table: DiskTable::new(grid.hx(), grid.hy(), schedule.radii()) })
    }

    pub fn r_max(&self) -> f64 {
        *self.table.radii.last().unwrap()
    }

    /// Padding needed around a field for [`MaximalEngine::maximal_at`].
    pub fn pad(&self, f: &ScalarField) -> Padded {
        Padded::new(f, self.table.reach_i + 1, self.table.reach_j + 1)
    }

    /// Supremum over radii `r <= r_cap` (scheduled radii below `r_cap`, and
    /// `r_cap` itself) of the average over `B(x, r)` of the padded values,
    /// where only cells with `allowed(dj)` column range count; `x` is the
    /// center of cell `(i0, j0)` and values are assumed non-negative.
    pub fn maximal_at(
        &self,
        vals: &Padded,
        i0: usize,
        j0: usize,
        r_cap: f64,
        allowed: impl Fn(i64) -> Option<(i64, i64)>,
    ) -> f64 {
        let t = &self.table;
        let r_cap = r_cap.min(self.r_max());
        let k_count = t.radii.partition_point(|&r| r < r_cap);
        let mut full = vec![0.0; k_count + 1];
        let mut part = vec![0.0; k_count];
        let mut last = 0.0;
        let cell = t.hx * t.hy;
        let reach_j = ((r_cap / t.hy) + 1.0).ceil() as i64;
        let (i0, j0) = (i0 as i64, j0 as i64);
        for dj in -reach_j.min(t.reach_j)..=reach_j.min(t.reach_j) {
            let gap = ((dj.abs() as f64 - 0.5).max(0.0)) * t.hy;
            if gap >= r_cap {
                continue;
            }
            let half = ((r_cap * r_cap - gap * gap).sqrt() / t.hx + 0.5).ceil() as i64;
            let (mut lo, mut hi) = (-half.min(t.reach_i), half.min(t.reach_i));
            match allowed(dj) {
                None => continue,
                Some((a, b)) => {
                    lo = lo.max(a - i0);
                    hi = hi.min(b - i0);
                }
            }
            for di in lo..=hi {
                let v = vals.get(i0 + di, j0 + dj);
                if v == 0.0 {
                    continue;
                }
                let off = t.offset(di, dj);
                let (dmin, dmax) = (t.dmin[off], t.dmax[off]);
                if dmin >= r_cap {
                    continue;
                }
                let ff = t.first_full[off] as usize;
                if ff < k_count {
                    full[ff] += v;
                }
                for &(k, a) in &t.partial[t.partial_start[off] as usize..t.partial_start[off + 1] as usize] {
                    if (k as usize) < k_count {
                        part[k as usize] += v * a;
                    }
                }
                if dmax <= r_cap {
                    last += v * cell;
                } else {
                    let (x0, x1, y0, y1) = t.rect(di, dj);
                    last += v * rect_disk_area(x0, x1, y0, y1, r_cap);
                }
            }
        }
        let mut acc = 0.0;
        let mut best = last / (PI * r_cap * r_cap);
        for k in 0..k_count {
            acc += full[k];
            let r = t.radii[k];
            best = best.max((acc * cell + part[k]) / (PI * r * r));
        }
        best
    }

    /// `M_R |f|` at every cell center, `R` the schedule maximum.
    pub fn maximal_map(&self, f: &ScalarField) -> Vec<f64> {
        let vals = self.pad(&f.abs());
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let r = self.r_max();
        (0..nx * ny)
            .map(|idx| self.maximal_at(&vals, idx % nx, idx / nx, r, |_| Some((i64::MIN / 4, i64::MAX / 4))))
            .collect()
    }
}

/// `M_R |f|` at every cell center as a field.
pub fn maximal_field(f: &ScalarField, schedule: &RadiusSchedule) -> Result<ScalarField> {
    let engine = MaximalEngine::new(f.grid(), schedule)?;
    f.with_values(engine.maximal_map(f))
}

/// `||M_R f||_p / ||f||_p` with discrete norms on the grid.
pub fn hl_ratio(f: &ScalarField, p: f64, schedule: &RadiusSchedule) -> Result<f64> {
    if !(p > 1.0) {
        return Err(LabError::Precondition(format!("Hardy-Littlewood ratio needs p > 1, got {p}")));
    }
    let base = f.lp_integral(p);
    if base == 0.0 {
        return Err(LabError::Degenerate("||f||_p vanishes".into()));
    }
    let m = maximal_field(f, schedule)?;
    Ok((m.lp_integral(p) / base).powf(1.0 / p))
}

/// Index of the fold-mapped cell; used by brute-force checks.
pub fn folded_index(grid: &Grid, i: i64, j: i64) -> (usize, usize) {
    (fold(i, grid.nx()).0, fold(j, grid.ny()).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::generate_test_function;
    use crate::geometry::GeometryConfig;

    /// Area of a rectangle inside a disk by midpoint sampling.
    fn sampled_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64, n: usize) -> f64 {
        let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
        let mut hits = 0usize;
        for a in 0..n {
            for b in 0..n {
                let x = x0 + (a as f64 + 0.5) * dx;
                let y = y0 + (b as f64 + 0.5) * dy;
                if x * x + y * y <= r * r {
                    hits += 1;
                }
            }
        }
        hits as f64 * dx * dy
    }

    #[test]
    fn disk_area_pieces() {
        assert!((rect_disk_area(-2.0, 2.0, -2.0, 2.0, 1.0) - PI).abs() < 1e-14);
        assert!((rect_disk_area(0.0, 2.0, 0.0, 2.0, 1.0) - PI / 4.0).abs() < 1e-14);
        assert!((rect_disk_area(-2.0, 2.0, 0.0, 2.0, 1.0) - PI / 2.0).abs() < 1e-14);
        assert_eq!(rect_disk_area(1.0, 2.0, 1.0, 2.0, 1.0), 0.0);
        let cases = [
            (0.3, 0.9, -0.2, 0.4, 0.8),
            (-0.7, -0.1, 0.5, 0.9, 1.0),
            (-0.3, 0.2, -0.95, -0.5, 1.0),
            (0.1, 0.35, 0.6, 0.85, 0.75),
        ];
        for (x0, x1, y0, y1, r) in cases {
            let exact = rect_disk_area(x0, x1, y0, y1, r);
            let approx = sampled_area(x0, x1, y0, y1, r, 2000);
            assert!((exact - approx).abs() < 2e-4 * (x1 - x0) * (y1 - y0) + 1e-6, "{exact} vs {approx}");
        }
    }

    #[test]
    fn geometric_schedule_shape() {
        let s = RadiusSchedule::geometric(0.1, 1.0).unwrap();
        let r = s.radii();
        assert_eq!(r[0], 0.1);
        assert_eq!(s.r_max(), 1.0);
        for w in r.windows(2) {
            assert!(w[1] > w[0] && w[1] - w[0] <= 0.1 + 1e-12 && w[1] / w[0] <= GROWTH + 1e-12);
        }
        assert!(RadiusSchedule::new(vec![0.2, 0.1]).is_err());
        assert!(RadiusSchedule::new(vec![]).is_err());
    }

    fn unit_field(n: usize, delta: f64, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let c = GeometryConfig::new(1.0, 1.0, 2, delta).unwrap();
        let g = Grid::for_domain(&c, n, n).unwrap();
        ScalarField::from_fn(g, &c, f).unwrap()
    }

    #[test]
    fn averages_of_constants_and_linears() {
        let c = GeometryConfig::new(1.0, 1.0, 2, 0.5).unwrap();
        let u = ScalarField::free(Grid::for_domain(&c, 32, 32).unwrap(), vec![2.5; 32 * 32]).unwrap();
        for (c, r) in [((0.5, 0.5), 0.2), ((0.05, 0.9), 0.3), ((1.0, 0.0), 0.7)] {
            assert!((ball_average(&u, c, r).unwrap() - 2.5).abs() < 1e-12);
        }
        let lin = unit_field(32, 1.0, |x, _| x);
        assert!((ball_average(&lin, (0.5, 0.5), 0.2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unresolvable_ball_is_an_error() {
        let u = unit_field(16, 0.5, |_, _| 1.0);
        assert!(matches!(ball_average(&u, (0.5, 0.5), 0.01), Err(LabError::Resolution { .. })));
        assert!(matches!(ball_average(&u, (1.5, 0.5), 0.2), Err(LabError::Domain { .. })));
    }

    #[test]
    fn half_indicator_average() {
        // Brute force with a 16x finer cell-sampled disk.
        let n = 64;
        let u = unit_field(n, 0.5, |x, _| if x < 0.5 { 1.0 } else { 0.0 });
        let (c, r) = ((0.5, 0.5), 0.2);
        let got = ball_average(&u, c, r).unwrap();
        let h = 1.0 / n as f64;
        assert!((got - 0.5).abs() <= 2.0 * h / r);
        let fine = 1024;
        let hf = 1.0 / fine as f64;
        let mut acc = 0.0;
        for a in 0..fine {
            for b in 0..fine {
                let (x, y) = ((a as f64 + 0.5) * hf, (b as f64 + 0.5) * hf);
                if (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r && x < 0.5 {
                    acc += hf * hf;
                }
            }
        }
        assert!((got - acc / (PI * r * r)).abs() < 5e-3);
    }

    #[test]
    fn maximal_of_constant_and_monotone_schedule() {
        let u = unit_field(16, 0.5, |_, _| -3.0);
        let s = RadiusSchedule::geometric(1.0 / 16.0, 0.5).unwrap();
        assert!((maximal_fn(&u, (0.3, 0.6), &s).unwrap() - 3.0).abs() < 1e-12);
        let c = GeometryConfig::new(1.0, 1.0, 2, 0.5).unwrap();
        let g = Grid::for_domain(&c, 16, 16).unwrap();
        let f = generate_test_function(4, &g, &c, 5).unwrap();
        let small = RadiusSchedule::new(vec![0.1, 0.2]).unwrap();
        let big = RadiusSchedule::new(vec![0.1, 0.15, 0.2, 0.4]).unwrap();
        for x in [(0.2, 0.2), (0.7, 0.4), (0.03, 0.97)] {
            assert!(maximal_fn(&f, x, &big).unwrap() >= maximal_fn(&f, x, &small).unwrap());
        }
    }

    #[test]
    fn engine_agrees_with_direct_maximal() {
        let c = GeometryConfig::new(1.0, 1.0, 4, 0.5).unwrap();
        let g = Grid::for_domain(&c, 24, 24).unwrap();
        let f = generate_test_function(21, &g, &c, 6).unwrap();
        let s = RadiusSchedule::for_grid(&g, 0.6).unwrap();
        let fast = maximal_field(&f, &s).unwrap();
        for idx in (0..g.len()).step_by(7) {
            let (i, j) = g.cell(idx);
            let x = g.center(i as i64, j as i64);
            let direct = maximal_fn(&f, x, &s).unwrap();
            assert!((fast.values()[idx] - direct).abs() <= 1e-12 * direct.max(1e-300));
        }
    }

    #[test]
    fn riesz_of_constant_is_two_pi_r() {
        let u = unit_field(128, 0.5, |_, _| 1.0);
        for r in [0.1, 0.2, 0.3] {
            let got = riesz_potential(&u, (0.5 + 1.0 / 256.0, 0.5 + 1.0 / 256.0), r).unwrap();
            assert!((got / (2.0 * PI * r) - 1.0).abs() < 0.03, "{got}");
        }
        let zero = unit_field(32, 0.5, |_, _| 0.0);
        assert_eq!(riesz_potential(&zero, (0.5, 0.5), 0.2).unwrap(), 0.0);
    }

    #[test]
    fn hl_ratio_of_constant_is_one() {
        let u = unit_field(16, 0.5, |_, _| 1.7);
        let s = RadiusSchedule::geometric(1.0 / 16.0, 0.5).unwrap();
        assert!((hl_ratio(&u, 2.0, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!(hl_ratio(&u, 1.0, &s).is_err());
        let z = unit_field(16, 0.5, |_, _| 0.0);
        assert!(matches!(hl_ratio(&z, 2.0, &s), Err(LabError::Degenerate(_))));
    }
}
