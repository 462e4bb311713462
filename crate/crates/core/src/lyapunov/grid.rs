//! Two-user potential on an irregular rectangular grid.
//!
//! Columns of fixed width `w` are laid side by side from the base corner.
//! Inside a column, cells are stacked upward; each cell's height `h` solves
//! the balance equation
//!
//! ```text
//! ∫₀ʷ μ̄₁(X+s, Y) − μ̄₁(X+s, Y+h) ds = ∫₀ʰ μ̄₂(X, Y+t) − μ̄₂(X+w, Y+t) dt,
//! ```
//!
//! i.e. the weight field has zero circulation around the cell. Then line
//! integrals of μ̄ between grid points along grid lines do not depend on the
//! path, which defines `f` on the grid lines, and `V` follows from
//! `∫ f μ̄·ds = ∫ f df = (f² − f₀²)/2`. Inside a cell, `V` is interpolated
//! linearly along lines parallel to the anti-diagonal between two points on
//! the cell's edges.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quadrature::rule64;
use super::Potential;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rng::{self, stream};
use crate::vector::QueueState;

pub const GRID_QUADRATURE_POINTS: usize = 64;
/// A balance value below `DEGENERATE_BALANCE_TOL·(w + h)` counts as zero.
pub const DEGENERATE_BALANCE_TOL: f64 = 1e-12;
const MIN_HEIGHT_RATIO: f64 = 1.0 / 1024.0;
const MAX_HEIGHT_RATIO: f64 = 4096.0;
const MAX_CELLS_PER_COLUMN: usize = 100_000;

/// Where to build the grid and the values at the base corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lower-left corner `Q⁰`.
    pub base: [f64; 2],
    /// Upper-right corner of the region to cover.
    pub extent: [f64; 2],
    /// Fixed column width.
    pub init_cell: f64,
    #[serde(default = "one")]
    pub f0: f64,
    #[serde(default = "one")]
    pub v0: f64,
}

fn one() -> f64 {
    1.0
}

impl GridSpec {
    pub fn new(base: [f64; 2], extent: [f64; 2], init_cell: f64) -> Self {
        Self { base, extent, init_cell, f0: 1.0, v0: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !self.base.iter().chain(&self.extent).all(|&x| ok(x)) {
            return Err(Error::Config("grid base and extent must be finite and nonnegative".into()));
        }
        if self.extent[0] <= self.base[0] || self.extent[1] <= self.base[1] {
            return Err(Error::Config("grid extent must lie above and right of the base".into()));
        }
        if !(self.init_cell.is_finite() && self.init_cell > 0.0) {
            return Err(Error::Config("grid init_cell must be positive".into()));
        }
        if !(self.f0 > 0.0 && self.v0 > 0.0) {
            return Err(Error::Config("grid f0 and v0 must be positive".into()));
        }
        Ok(())
    }
}

/// One column `[x, x + width]` and its stacked cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridColumn {
    pub x: f64,
    pub width: f64,
    /// Cell boundaries, bottom to top.
    pub ys: Vec<f64>,
    /// `f` at `(x, ys[m])`.
    pub f_left: Vec<f64>,
    /// `f` at `(x + width, ys[m])`.
    pub f_right: Vec<f64>,
    pub v_left: Vec<f64>,
    pub v_right: Vec<f64>,
    /// Circulation of μ̄ around each cell, as evaluated by quadrature.
    pub residuals: Vec<f64>,
    /// `f` at each cell's top-right corner via left+top minus via
    /// bottom+right.
    pub two_path: Vec<f64>,
}

impl GridColumn {
    pub fn cells(&self) -> usize {
        self.ys.len() - 1
    }

    pub fn top(&self) -> f64 {
        *self.ys.last().expect("at least the base row")
    }
}

/// Which half of a cell, split by the anti-diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Triangle {
    Lower,
    Upper,
}

/// Finite-difference gradient of the interpolated `V` against `f·μ̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub q: [f64; 2],
    /// Angle between `∇V` and `μ̄(q)` in radians.
    pub angle: f64,
    /// `| ‖∇V‖ − f‖μ̄‖₂ | / (f‖μ̄‖₂)`.
    pub rel_magnitude_error: f64,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct LyapunovGrid2D {
    pub spec: GridSpec,
    pub quadrature: String,
    pub columns: Vec<GridColumn>,
    #[serde(skip)]
    policy: Option<Arc<dyn Policy>>,
}

impl std::fmt::Debug for LyapunovGrid2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovGrid2D")
            .field("spec", &self.spec)
            .field("columns", &self.columns.len())
            .field("has_policy", &self.policy.is_some())
            .finish()
    }
}

/// Weight field evaluation with the policy's errors propagated.
struct Field<'a> {
    policy: &'a dyn Policy,
    /// Longest Gauss–Legendre panel; longer segments are split.
    panel: f64,
}

impl Field<'_> {
    fn mu(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let w = self.policy.weights(&QueueState::new(vec![x.max(0.0), y.max(0.0)])?)?;
        if w.dim() != 2 {
            return Err(Error::Dimension { expected: 2, got: w.dim() });
        }
        Ok([w[0], w[1]])
    }

    /// `∫ μ̄_axis` along the segment from `start` moving `len` along `axis`.
    fn line(&self, start: [f64; 2], axis: usize, len: f64) -> Result<f64> {
        if len == 0.0 {
            return Ok(0.0);
        }
        let (x, w) = rule64();
        let panels = ((len / self.panel).ceil() as usize).max(1);
        let plen = len / panels as f64;
        let half = 0.5 * plen;
        let mut total = 0.0;
        for k in 0..panels {
            let lo = k as f64 * plen;
            let mut acc = 0.0;
            for (xi, wi) in x.iter().zip(w) {
                let s = lo + half + half * xi;
                let p = if axis == 0 { [start[0] + s, start[1]] } else { [start[0], start[1] + s] };
                acc += wi * self.mu(p[0], p[1])?[axis];
            }
            total += acc * half;
        }
        Ok(total)
    }
}

/// Circulation balance of the cells `[x, x+w] × [y, y+h]` for growing `h`,
/// with the vertical integrals accumulated rather than recomputed.
struct Balance<'a, 'b> {
    field: &'a Field<'b>,
    x: f64,
    y: f64,
    w: f64,
    bottom: f64,
}

impl Balance<'_, '_> {
    /// Vertical integrals on both sides over `[y + from.0, y + h]`, added to
    /// the values `from.1` already known at `from.0`.
    fn sides(&self, from: (f64, [f64; 2]), h: f64) -> Result<[f64; 2]> {
        let (h0, [l, r]) = from;
        let len = h - h0;
        Ok([
            l + self.field.line([self.x, self.y + h0], 1, len)?,
            r + self.field.line([self.x + self.w, self.y + h0], 1, len)?,
        ])
    }

    fn value(&self, h: f64, sides: [f64; 2]) -> Result<f64> {
        let top = self.field.line([self.x, self.y + h], 0, self.w)?;
        Ok((self.bottom - top) - (sides[0] - sides[1]))
    }
}

/// Smallest positive root of the balance equation in `h`, or a square cell
/// when the balance vanishes identically. Heights are scanned geometrically
/// up to `w` and in steps of `w/4` beyond, and the first sign change is
/// bisected. Returns the height and the
/// balance value there.
fn solve_height(field: &Field<'_>, x: f64, y: f64, w: f64, column: usize, cell: usize) -> Result<(f64, f64)> {
    let bal = Balance { field, x, y, w, bottom: field.line([x, y], 0, w)? };
    let tol = |h: f64| DEGENERATE_BALANCE_TOL * (w + h);
    let mut prev = (0.0, [0.0, 0.0]);
    // last significant scan point and its sides
    let mut anchor: Option<(f64, [f64; 2], f64)> = None;
    let mut bracket = None;
    let mut h = w * MIN_HEIGHT_RATIO;
    while h <= w * MAX_HEIGHT_RATIO * (1.0 + 1e-12) {
        if anchor.is_none() && h > w {
            // balanced at every height up to w, in particular at w
            break;
        }
        let sides = bal.sides(prev, h)?;
        let g = bal.value(h, sides)?;
        prev = (h, sides);
        if g.abs() > tol(h) {
            match anchor {
                Some((_, _, g0)) if g.signum() != g0.signum() => {
                    bracket = Some((anchor.unwrap(), (h, sides, g)));
                    break;
                }
                _ => anchor = Some((h, sides, g)),
            }
        }
        // geometric below one width, then steps of a quarter width so that
        // narrow sign windows are not jumped over
        h = if h < w { h * std::f64::consts::SQRT_2 } else { h + 0.25 * w };
    }
    let Some(((mut lo, mut lo_sides, mut g_lo), (mut hi, _, mut g_hi))) = bracket else {
        if anchor.is_none() {
            let sides = bal.sides((0.0, [0.0, 0.0]), w)?;
            return Ok((w, bal.value(w, sides)?));
        }
        let s0 = anchor.unwrap().2;
        return Err(Error::GridConstruction {
            column,
            cell,
            corner: [x, y],
            reason: format!(
                "cell circulation keeps sign {} for every height in [{:.3e}, {:.3e}], so no balanced cell \
                 starts at this corner",
                if s0 > 0.0 { "+" } else { "-" },
                w * MIN_HEIGHT_RATIO,
                w * MAX_HEIGHT_RATIO
            ),
        });
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let sides = bal.sides((lo, lo_sides), mid)?;
        let g = bal.value(mid, sides)?;
        if g == 0.0 {
            return Ok((mid, g));
        }
        if g.signum() == g_lo.signum() {
            lo = mid;
            lo_sides = sides;
            g_lo = g;
        } else {
            hi = mid;
            g_hi = g;
        }
    }
    Ok(if g_lo.abs() <= g_hi.abs() { (lo, g_lo) } else { (hi, g_hi) })
}

/// Builds the grid over `[base, extent]`.
pub fn build_grid_2d(policy: Arc<dyn Policy>, spec: GridSpec) -> Result<LyapunovGrid2D> {
    spec.validate()?;
    let field = Field { policy: &*policy, panel: spec.init_cell };
    let [x0, y0] = spec.base;
    let w = spec.init_cell;
    let n_cols = (((spec.extent[0] - x0) / w).ceil() as usize).max(1);
    let v_of = |f: f64| spec.v0 + 0.5 * (f * f - spec.f0 * spec.f0);
    let mut columns = Vec::with_capacity(n_cols);
    let mut f_bottom = spec.f0;
    for k in 0..n_cols {
        let x = x0 + k as f64 * w;
        let f_bottom_right = f_bottom + field.line([x, y0], 0, w)?;
        let mut col = GridColumn {
            x,
            width: w,
            ys: vec![y0],
            f_left: vec![f_bottom],
            f_right: vec![f_bottom_right],
            v_left: vec![v_of(f_bottom)],
            v_right: vec![v_of(f_bottom_right)],
            residuals: Vec::new(),
            two_path: Vec::new(),
        };
        while col.top() < spec.extent[1] {
            let m = col.cells();
            if m >= MAX_CELLS_PER_COLUMN {
                return Err(Error::GridConstruction {
                    column: k,
                    cell: m,
                    corner: [x, col.top()],
                    reason: format!("more than {MAX_CELLS_PER_COLUMN} cells in one column"),
                });
            }
            let y = col.top();
            let (h, residual) = solve_height(&field, x, y, w, k, m)?;
            let fl = col.f_left[m] + field.line([x, y], 1, h)?;
            let fr = col.f_right[m] + field.line([x + w, y], 1, h)?;
            let via_top = fl + field.line([x, y + h], 0, w)?;
            col.ys.push(y + h);
            col.f_left.push(fl);
            col.f_right.push(fr);
            col.v_left.push(v_of(fl));
            col.v_right.push(v_of(fr));
            col.residuals.push(residual);
            col.two_path.push(via_top - fr);
        }
        f_bottom = f_bottom_right;
        columns.push(col);
    }
    Ok(LyapunovGrid2D {
        spec,
        quadrature: format!("gauss-legendre-{GRID_QUADRATURE_POINTS}"),
        columns,
        policy: Some(policy),
    })
}

impl LyapunovGrid2D {
    /// Re-attaches a policy to a grid loaded from JSON, enabling exact edge
    /// evaluation.
    pub fn with_policy(mut self, policy: Arc<dyn Policy>) -> Self {
        self.policy = Some(policy);
        self
    }

    pub fn cell_count(&self) -> usize {
        self.columns.iter().map(GridColumn::cells).sum()
    }

    pub fn max_loop_residual(&self) -> f64 {
        self.columns.iter().flat_map(|c| &c.residuals).fold(0.0, |a, r| a.max(r.abs()))
    }

    pub fn max_two_path_gap(&self) -> f64 {
        self.columns.iter().flat_map(|c| &c.two_path).fold(0.0, |a, r| a.max(r.abs()))
    }

    /// `f` strictly increases along every column edge and along the base row.
    pub fn f_strictly_increasing(&self) -> bool {
        let lines = self.columns.iter().all(|c| {
            c.f_left.windows(2).all(|p| p[1] > p[0]) && c.f_right.windows(2).all(|p| p[1] > p[0])
        });
        let base = self.columns.iter().all(|c| c.f_right[0] > c.f_left[0]);
        lines && base
    }

    fn v_of(&self, f: f64) -> f64 {
        self.spec.v0 + 0.5 * (f * f - self.spec.f0 * self.spec.f0)
    }

    /// Column and cell containing `q`.
    pub fn locate(&self, q: &[f64]) -> Result<(usize, usize)> {
        if q.len() != 2 {
            return Err(Error::Dimension { expected: 2, got: q.len() });
        }
        let (lo, hi) = (self.spec.base, self.spec.extent);
        if q[0] < lo[0] || q[0] > hi[0] || q[1] < lo[1] || q[1] > hi[1] {
            return Err(Error::Domain(format!("point {q:?} outside the grid extent {lo:?}..{hi:?}")));
        }
        let k = self
            .columns
            .partition_point(|c| c.x + c.width <= q[0])
            .min(self.columns.len() - 1);
        let col = &self.columns[k];
        let m = col.ys.partition_point(|&y| y <= q[1]).saturating_sub(1).min(col.cells() - 1);
        Ok((k, m))
    }

    fn field(&self) -> Option<Field<'_>> {
        self.policy.as_deref().map(|policy| Field { policy, panel: self.spec.init_cell })
    }

    /// `f` at a point on the boundary of cell `(k, m)`, integrated from the
    /// nearest lower-left node of that edge.
    fn f_on_edge(&self, k: usize, m: usize, p: [f64; 2]) -> Result<f64> {
        let c = &self.columns[k];
        let (x0, x1, y0, y1) = (c.x, c.x + c.width, c.ys[m], c.ys[m + 1]);
        let field = self.field();
        // (start value, end value, start point, axis, length to p, full length)
        let (fs, fe, start, axis, len, full) = if p[1] == y0 {
            (c.f_left[m], c.f_right[m], [x0, y0], 0, p[0] - x0, x1 - x0)
        } else if p[1] == y1 {
            (c.f_left[m + 1], c.f_right[m + 1], [x0, y1], 0, p[0] - x0, x1 - x0)
        } else if p[0] == x0 {
            (c.f_left[m], c.f_left[m + 1], [x0, y0], 1, p[1] - y0, y1 - y0)
        } else {
            (c.f_right[m], c.f_right[m + 1], [x1, y0], 1, p[1] - y0, y1 - y0)
        };
        match field {
            Some(fd) => Ok(fs + fd.line(start, axis, len)?),
            None => Ok(fs + (fe - fs) * len / full),
        }
    }

    /// Interpolated `(f, V)` in cell `(k, m)` using the given triangle's
    /// formula (or the one `q` falls in).
    pub fn interpolate_in_cell(&self, k: usize, m: usize, q: &[f64], tri: Option<Triangle>) -> Result<(f64, f64)> {
        let c = &self.columns[k];
        let (x, y, w, h) = (c.x, c.ys[m], c.width, c.ys[m + 1] - c.ys[m]);
        let (dx, dy) = (q[0] - x, q[1] - y);
        let s = dx / w + dy / h;
        let tri = tri.unwrap_or(if s < 1.0 { Triangle::Lower } else { Triangle::Upper });
        let (ki, kj, pi, pj) = match tri {
            Triangle::Lower => {
                if dx == 0.0 && dy == 0.0 {
                    let f = c.f_left[m];
                    return Ok((f, c.v_left[m]));
                }
                let d = h * dx + w * dy;
                let ki = h * dx / d;
                let kj = w * dy / d;
                // points on the bottom and left edges
                let pi = [(x + dx + w / h * dy).min(x + w), y];
                let pj = [x, (y + dy + h / w * dx).min(y + h)];
                (ki, kj, pi, pj)
            }
            Triangle::Upper => {
                let d = 2.0 * w * h - h * dx - w * dy;
                if d == 0.0 {
                    let f = c.f_right[m + 1];
                    return Ok((f, c.v_right[m + 1]));
                }
                let ki = (h * w - h * dx) / d;
                let kj = (h * w - w * dy) / d;
                // points on the top and right edges
                let pi = [(x + dx + w / h * dy - w).max(x), y + h];
                let pj = [x + w, (y + dy + h / w * dx - h).max(y)];
                (ki, kj, pi, pj)
            }
        };
        let fi = self.f_on_edge(k, m, pi)?;
        let fj = self.f_on_edge(k, m, pj)?;
        Ok((ki * fi + kj * fj, ki * self.v_of(fi) + kj * self.v_of(fj)))
    }

    pub fn interpolate_v(&self, q: &QueueState) -> Result<f64> {
        let (k, m) = self.locate(q)?;
        self.interpolate_in_cell(k, m, q, None).map(|p| p.1)
    }

    pub fn interpolate_f(&self, q: &QueueState) -> Result<f64> {
        let (k, m) = self.locate(q)?;
        self.interpolate_in_cell(k, m, q, None).map(|p| p.0)
    }

    /// Largest disagreement of `V` between the two sides of `n` random edge
    /// points: shared column lines, stacked cell boundaries, and cell
    /// anti-diagonals.
    pub fn continuity_jumps(&self, n: usize, seed: u64) -> Result<f64> {
        let mut rng = rng::stream_rng(seed, stream::GRID_DIRECTIONS);
        let mut worst: f64 = 0.0;
        let n_cols = self.columns.len();
        for s in 0..n {
            let k = rng.random_range(0..n_cols);
            let col = &self.columns[k];
            let kind = s % 3;
            let jump = if kind == 0 && k > 0 {
                // column line x = col.x between columns k-1 and k
                let left = &self.columns[k - 1];
                let top = left.top().min(col.top()).min(self.spec.extent[1]);
                let y = self.spec.base[1] + rng.random::<f64>() * (top - self.spec.base[1]);
                let ml = left.ys.partition_point(|&v| v <= y).saturating_sub(1).min(left.cells() - 1);
                let mr = col.ys.partition_point(|&v| v <= y).saturating_sub(1).min(col.cells() - 1);
                let p = [col.x, y];
                let a = self.interpolate_in_cell(k - 1, ml, &p, None)?.1;
                let b = self.interpolate_in_cell(k, mr, &p, None)?.1;
                (a - b).abs()
            } else if kind == 1 && col.cells() > 1 {
                let m = rng.random_range(1..col.cells());
                let p = [col.x + rng.random::<f64>() * col.width, col.ys[m]];
                let a = self.interpolate_in_cell(k, m - 1, &p, None)?.1;
                let b = self.interpolate_in_cell(k, m, &p, None)?.1;
                (a - b).abs()
            } else {
                let m = rng.random_range(0..col.cells());
                let t: f64 = rng.random();
                let h = col.ys[m + 1] - col.ys[m];
                let p = [col.x + t * col.width, col.ys[m] + (1.0 - t) * h];
                let a = self.interpolate_in_cell(k, m, &p, Some(Triangle::Lower))?.1;
                let b = self.interpolate_in_cell(k, m, &p, Some(Triangle::Upper))?.1;
                (a - b).abs()
            };
            worst = worst.max(jump);
        }
        Ok(worst)
    }

    /// Central-difference gradient of the interpolated `V` at a point inside
    /// one of a cell's triangles, compared with `f·μ̄`.
    pub fn gradient_check(&self, q: [f64; 2]) -> Result<GradientCheck> {
        let policy = self
            .policy
            .as_deref()
            .ok_or_else(|| Error::Domain("gradient check needs the grid's policy".into()))?;
        let (k, m) = self.locate(&q)?;
        let c = &self.columns[k];
        let h_cell = c.ys[m + 1] - c.ys[m];
        let step = 1e-3 * c.width.min(h_cell);
        let (x, y) = (c.x, c.ys[m]);
        let tri = if (q[0] - x) / c.width + (q[1] - y) / h_cell < 1.0 { Triangle::Lower } else { Triangle::Upper };
        let v = |p: [f64; 2]| self.interpolate_in_cell(k, m, &p, Some(tri)).map(|r| r.1);
        let gx = (v([q[0] + step, q[1]])? - v([q[0] - step, q[1]])?) / (2.0 * step);
        let gy = (v([q[0], q[1] + step])? - v([q[0], q[1] - step])?) / (2.0 * step);
        let f = self.interpolate_in_cell(k, m, &q, Some(tri))?.0;
        let mu = policy.weights(&QueueState::new(q.to_vec())?)?;
        let gn = (gx * gx + gy * gy).sqrt();
        let mn = (mu[0] * mu[0] + mu[1] * mu[1]).sqrt();
        let cos = ((gx * mu[0] + gy * mu[1]) / (gn * mn)).clamp(-1.0, 1.0);
        Ok(GradientCheck { q, angle: cos.acos(), rel_magnitude_error: (gn - f * mn).abs() / (f * mn) })
    }

    /// `n` points strictly inside cell triangles (barycentric coordinates at
    /// least `margin`), cells chosen uniformly among those meeting the
    /// extent.
    pub fn interior_points(&self, n: usize, margin: f64, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = rng::substream_rng(seed, stream::GRID_DIRECTIONS, 1);
        let cells: Vec<(usize, usize)> = self
            .columns
            .iter()
            .enumerate()
            .flat_map(|(k, c)| (0..c.cells()).map(move |m| (k, m)))
            .filter(|&(k, m)| {
                let c = &self.columns[k];
                c.ys[m] < self.spec.extent[1] && c.x < self.spec.extent[0]
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let (k, m) = cells[rng.random_range(0..cells.len())];
            let c = &self.columns[k];
            let (x, y, w, h) = (c.x, c.ys[m], c.width, c.ys[m + 1] - c.ys[m]);
            let b = rng::simplex_point(&mut rng, 3, 1.0);
            if b.iter().any(|&t| t < margin) {
                continue;
            }
            let corners = if rng.random::<bool>() {
                [[x, y], [x + w, y], [x, y + h]]
            } else {
                [[x + w, y], [x, y + h], [x + w, y + h]]
            };
            let p = [
                b[0] * corners[0][0] + b[1] * corners[1][0] + b[2] * corners[2][0],
                b[0] * corners[0][1] + b[1] * corners[1][1] + b[2] * corners[2][1],
            ];
            if p[0] <= self.spec.extent[0] && p[1] <= self.spec.extent[1] {
                out.push(p);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads an exported grid. Without a policy, edge values between nodes
    /// are interpolated linearly.
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Potential for LyapunovGrid2D {
    fn kind(&self) -> &'static str {
        "grid-2d"
    }
    fn f(&self, q: &[f64]) -> Result<f64> {
        let (k, m) = self.locate(q)?;
        self.interpolate_in_cell(k, m, q, None).map(|p| p.0)
    }
    fn v(&self, q: &[f64]) -> Result<f64> {
        let (k, m) = self.locate(q)?;
        self.interpolate_in_cell(k, m, q, None).map(|p| p.1)
    }
    fn base(&self) -> Option<&[f64]> {
        Some(&self.spec.base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::ray_potentials;
    use crate::policies::{Constant, ExpCounterexample, Mwm};
    use crate::vector::WeightVector;

    fn constant(a: f64) -> Arc<dyn Policy> {
        Arc::new(Constant::new(WeightVector::new(vec![a, 1.0 - a]).unwrap()))
    }

    /// A non-integrable field with curl `0.3·sin(y + x/2)`, which changes
    /// sign along every column, so the balance equation has roots everywhere.
    struct Wavy;
    impl Policy for Wavy {
        fn name(&self) -> &str {
            "wavy"
        }
        fn weights(&self, q: &QueueState) -> Result<WeightVector> {
            let a = 0.5 + 0.2 * (q[1] + 0.5 * q[0]).cos();
            WeightVector::new(vec![a, 1.0 - a])
        }
    }

    #[test]
    fn constant_field_gives_square_cells_and_linear_f() {
        let g = build_grid_2d(constant(0.3), GridSpec::new([10.0, 10.0], [15.0, 14.0], 1.0)).unwrap();
        assert_eq!(g.columns.len(), 5);
        for c in &g.columns {
            assert_eq!(c.cells(), 4);
            for (m, y) in c.ys.iter().enumerate() {
                assert!((y - (10.0 + m as f64)).abs() < 1e-12);
                let f = 1.0 + 0.3 * (c.x - 10.0) + 0.7 * (y - 10.0);
                assert!((c.f_left[m] - f).abs() < 1e-12);
            }
        }
        assert!(g.f_strictly_increasing());
        assert_eq!(g.max_loop_residual(), 0.0);
        // interpolated V of a constant field, exact along the anti-diagonal
        // direction and quadratic along edges
        let f_at = |x: f64, y: f64| 1.0 + 0.3 * (x - 10.0) + 0.7 * (y - 10.0);
        let v_at = |x: f64, y: f64| 1.0 + 0.5 * (f_at(x, y).powi(2) - 1.0);
        let q = QueueState::new(vec![12.25, 11.5]).unwrap();
        // lower triangle of cell (2, 1): interpolate between edge points
        let (dx, dy) = (0.25, 0.5);
        let (ki, kj) = (dx / (dx + dy), dy / (dx + dy));
        let expect = ki * v_at(12.0 + dx + dy, 11.0) + kj * v_at(12.0, 11.0 + dy + dx);
        assert!((g.interpolate_v(&q).unwrap() - expect).abs() < 1e-12);
        assert!((g.interpolate_f(&q).unwrap() - f_at(12.25, 11.5)).abs() < 1e-12);
    }

    #[test]
    fn nodes_are_reproduced_exactly() {
        let g = build_grid_2d(Arc::new(Wavy), GridSpec::new([5.0, 5.0], [9.0, 9.0], 1.0)).unwrap();
        for (k, c) in g.columns.iter().enumerate() {
            for m in 0..c.cells() {
                let p = [c.x, c.ys[m]];
                if p[1] > 9.0 {
                    continue;
                }
                assert_eq!(g.interpolate_in_cell(k, m, &p, None).unwrap().1, c.v_left[m]);
                let d = [c.x + c.width, c.ys[m + 1]];
                assert_eq!(g.interpolate_in_cell(k, m, &d, None).unwrap().1, c.v_right[m + 1]);
            }
        }
    }

    #[test]
    fn wavy_field_builds_balanced_irregular_grid() {
        let g = build_grid_2d(Arc::new(Wavy), GridSpec::new([5.0, 5.0], [12.0, 12.0], 1.0)).unwrap();
        assert!(g.max_loop_residual() <= 1e-8, "{}", g.max_loop_residual());
        assert!(g.max_two_path_gap() <= 1e-8, "{}", g.max_two_path_gap());
        assert!(g.f_strictly_increasing());
        let heights: Vec<f64> = g.columns[0].ys.windows(2).map(|p| p[1] - p[0]).collect();
        assert!(heights.iter().any(|&h| (h - 1.0).abs() > 1e-3), "expected irregular cells: {heights:?}");
        assert!(g.continuity_jumps(1000, 3).unwrap() <= 1e-9);
    }

    #[test]
    fn wavy_heights_match_closed_form_roots() {
        // circulation of [x, x+w] × [y, y+h] is ∬ 0.3·sin(t + s/2) dt ds
        let circ = |x: f64, y: f64, w: f64, h: f64| {
            let inner = |yy: f64| 2.0 * ((yy + 0.5 * (x + w)).sin() - (yy + 0.5 * x).sin());
            0.3 * (inner(y) - inner(y + h))
        };
        let g = build_grid_2d(Arc::new(Wavy), GridSpec::new([5.0, 5.0], [8.0, 12.0], 1.0)).unwrap();
        for c in &g.columns {
            for m in 0..c.cells() {
                let (x, y) = (c.x, c.ys[m]);
                let h = c.ys[m + 1] - y;
                // first sign change on a fine scan, then plain bisection
                let g0 = circ(x, y, 1.0, 1e-6);
                let mut lo = 1e-6;
                let mut hi = lo;
                while circ(x, y, 1.0, hi).signum() == g0.signum() {
                    lo = hi;
                    hi += 1e-3;
                }
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if circ(x, y, 1.0, mid).signum() == g0.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                assert!((h - lo).abs() < 1e-9, "column x={x}, cell {m}: {h} vs {lo}");
            }
        }
    }

    #[test]
    fn gradient_follows_the_weights_for_slow_fields() {
        let slow = Arc::new(Constant::new(WeightVector::new(vec![0.3, 0.7]).unwrap()));
        let spec = GridSpec { f0: 50.0, v0: 1250.0, ..GridSpec::new([10.0, 10.0], [20.0, 20.0], 0.5) };
        let g = build_grid_2d(slow, spec).unwrap();
        for p in g.interior_points(100, 0.05, 1) {
            let c = g.gradient_check(p).unwrap();
            assert!(c.angle <= 0.05 && c.rel_magnitude_error <= 0.05, "{c:?}");
        }
        // softmax at temperature 20 is the gradient of a smooth potential
        // and varies slowly on the cell scale
        struct Tempered;
        impl Policy for Tempered {
            fn name(&self) -> &str {
                "tempered"
            }
            fn weights(&self, q: &QueueState) -> Result<WeightVector> {
                let d = ((q[1] - q[0]) / 20.0).exp();
                WeightVector::new(vec![1.0 / (1.0 + d), d / (1.0 + d)])
            }
        }
        let spec = GridSpec { f0: 50.0, v0: 1250.0, ..GridSpec::new([10.0, 10.0], [30.0, 30.0], 1.0) };
        let g = build_grid_2d(Arc::new(Tempered), spec).unwrap();
        let worst = g
            .interior_points(100, 0.05, 2)
            .into_iter()
            .map(|p| g.gradient_check(p).unwrap())
            .fold((0.0f64, 0.0f64), |a, c| (a.0.max(c.angle), a.1.max(c.rel_magnitude_error)));
        assert!(worst.0 <= 0.05 && worst.1 <= 0.05, "{worst:?}");
    }

    #[test]
    fn diagonal_midpoint_agrees_between_triangles() {
        let g = build_grid_2d(Arc::new(Wavy), GridSpec::new([5.0, 5.0], [8.0, 8.0], 1.0)).unwrap();
        let c = &g.columns[1];
        let h = c.ys[1] - c.ys[0];
        let p = [c.x + 0.5 * c.width, c.ys[0] + 0.5 * h];
        let a = g.interpolate_in_cell(1, 0, &p, Some(Triangle::Lower)).unwrap().1;
        let b = g.interpolate_in_cell(1, 0, &p, Some(Triangle::Upper)).unwrap().1;
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn outside_extent_is_domain_error() {
        let g = build_grid_2d(constant(0.5), GridSpec::new([10.0, 10.0], [12.0, 12.0], 1.0)).unwrap();
        let err = g.interpolate_v(&QueueState::new(vec![9.0, 11.0]).unwrap()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn integrable_field_matches_ray_potential() {
        // softmax of (q1, q2) depends on q1 − q2 only, so it has a potential
        let pol: Arc<dyn Policy> = Arc::new(ExpCounterexample);
        let base = [10.0, 10.0];
        let (f0, v0) = ray_potentials(&*pol, &base, 1 << 16).unwrap();
        let spec = GridSpec { f0, v0, ..GridSpec::new(base, [14.0, 14.0], 0.5) };
        let g = build_grid_2d(pol.clone(), spec).unwrap();
        for q in [[10.0, 10.0], [14.0, 14.0], [11.5, 13.0], [13.9, 10.2]] {
            let (_, v_ray) = ray_potentials(&*pol, &q, 1 << 16).unwrap();
            let v_grid = g.v(&q).unwrap();
            // corners are exact; interior points carry the interpolation
            // error of a cell of size 0.5
            assert!((v_grid - v_ray).abs() <= 2e-2 * v_ray, "{q:?}: {v_grid} vs {v_ray}");
        }
        for q in [[10.0, 10.0], [14.0, 14.0], [12.0, 11.0]] {
            let (f_ray, v_ray) = ray_potentials(&*pol, &q, 1 << 16).unwrap();
            let (k, m) = g.locate(&q).unwrap();
            let c = &g.columns[k];
            if c.x == q[0] && c.ys[m] == q[1] {
                assert!((c.f_left[m] - f_ray).abs() < 1e-6, "{q:?}");
                assert!((c.v_left[m] - v_ray).abs() < 1e-5 * v_ray, "{q:?}");
            }
        }
    }

    #[test]
    fn mwm_above_diagonal_has_no_balanced_cell() {
        // normalized max-weight has curl (x − y)/(x + y)², negative above
        // the diagonal, so a fixed-width cell there never balances
        let err = build_grid_2d(Arc::new(Mwm), GridSpec::new([10.0, 10.0], [30.0, 30.0], 1.0)).unwrap_err();
        match err {
            Error::GridConstruction { column, cell, .. } => assert_eq!((column, cell), (0, 1)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn json_roundtrip_keeps_nodes() {
        let g = build_grid_2d(Arc::new(Wavy), GridSpec::new([5.0, 5.0], [7.0, 7.0], 1.0)).unwrap();
        let back = LyapunovGrid2D::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back.columns, g.columns);
        let c = &back.columns[0];
        assert_eq!(back.v(&[c.x, c.ys[0]]).unwrap(), c.v_left[0]);
    }
}
