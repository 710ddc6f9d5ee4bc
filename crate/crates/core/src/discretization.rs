//! Uniform node grids over `[-L, L]²`, grid functions, bilinear interpolation,
//! discrete gradients, and quadrature over balls and circles.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::Point;
use crate::error::{Error, Result};

pub const MIN_NODES: usize = 17;

/// Uniform `n × n` node grid on the square `[-L, L]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    half_width: f64,
    h: f64,
}

impl Grid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::invalid("grid.n", format!("{n} nodes per side, need at least {MIN_NODES}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("grid.L", format!("{half_width} must be positive")));
        }
        Ok(Self {
            n,
            half_width,
            h: 2.0 * half_width / (n - 1) as f64,
        })
    }

    /// Grid on `[-L, L]²` with spacing exactly `h` (`2L/h` must be an integer).
    pub fn with_spacing(half_width: f64, h: f64) -> Result<Self> {
        let cells = 2.0 * half_width / h;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::invalid("grid.h", format!("2L/h = {cells} is not an integer")));
        }
        Self::new(cells.round() as usize + 1, half_width)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.h
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point {
        [self.coord(i), self.coord(j)]
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        [self.coord(i) + 0.5 * self.h, self.coord(j) + 0.5 * self.h]
    }

    pub fn contains(&self, p: Point) -> bool {
        let l = self.half_width * (1.0 + 1e-12);
        p[0].abs() <= l && p[1].abs() <= l
    }

    /// Distance from `p` to the box boundary (negative outside).
    pub fn margin(&self, p: Point) -> f64 {
        self.half_width - p[0].abs().max(p[1].abs())
    }

    pub fn ball_inside(&self, x0: Point, r: f64) -> bool {
        r > 0.0 && self.margin(x0) >= r * (1.0 - 1e-12)
    }

    pub(crate) fn check_ball(&self, x0: Point, r: f64) -> Result<()> {
        if !self.ball_inside(x0, r) {
            return Err(Error::domain(format!(
                "ball B_{r}({}, {}) is not contained in the grid box [-{L}, {L}]^2",
                x0[0],
                x0[1],
                L = self.half_width
            )));
        }
        Ok(())
    }

    /// Index range of cells meeting the bounding square of `B_r(x0)`.
    pub(crate) fn cell_range(&self, x0: Point, r: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let lo = |c: f64| (((c - r + self.half_width) / self.h).floor().max(0.0) as usize).min(self.n - 1);
        let hi = |c: f64| (((c + r + self.half_width) / self.h).ceil().max(0.0) as usize).min(self.n - 1);
        (lo(x0[0])..hi(x0[0]), lo(x0[1])..hi(x0[1]))
    }

    /// Indices `(i, j)` of nodes with `|x - x0| < r`.
    pub fn nodes_in_ball(&self, x0: Point, r: f64) -> Vec<(usize, usize)> {
        let (ri, rj) = self.cell_range(x0, r);
        let mut out = Vec::new();
        for j in rj.start..=rj.end {
            for i in ri.start..=ri.end {
                let p = self.node(i, j);
                if (p[0] - x0[0]).hypot(p[1] - x0[1]) < r {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Nodal values of a function on a [`Grid`], with a Dirichlet mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
    mask: Vec<bool>,
    nonnegative: bool,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            mask: vec![false; grid.len()],
            nonnegative: false,
        }
    }

    pub fn from_fn<F: Fn(Point) -> f64>(grid: Grid, f: F) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.n() {
            for i in 0..grid.n() {
                values.push(f(grid.node(i, j)));
            }
        }
        Self {
            grid,
            values,
            mask: vec![false; grid.len()],
            nonnegative: false,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("values", format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite value at node {k}")));
        }
        Ok(Self {
            grid,
            values,
            mask: vec![false; grid.len()],
            nonnegative: false,
        })
    }

    /// Declares the function one-phase; fails if any value is negative.
    pub fn into_nonnegative(mut self) -> Result<Self> {
        if let Some(k) = self.values.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(
                "values",
                format!("one-phase function is negative ({}) at node {k}", self.values[k]),
            ));
        }
        self.nonnegative = true;
        Ok(self)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn set_nonnegative_flag(&mut self, flag: bool) {
        self.nonnegative = flag;
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup of `|self - other|` over nodes with `|x - x0| ≤ r`.
    pub fn sup_diff_in_ball(&self, other: &GridFunction, x0: Point, r: f64) -> f64 {
        let g = &self.grid;
        let mut m: f64 = 0.0;
        for j in 0..g.n() {
            for i in 0..g.n() {
                let p = g.node(i, j);
                if (p[0] - x0[0]).hypot(p[1] - x0[1]) <= r {
                    m = m.max((self.at(i, j) - other.at(i, j)).abs());
                }
            }
        }
        m
    }

    fn locate(&self, p: Point) -> Result<(usize, usize, f64, f64)> {
        let g = &self.grid;
        if !g.contains(p) || !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::domain(format!("point ({}, {}) outside grid box", p[0], p[1])));
        }
        let sx = (p[0] + g.half_width) / g.h;
        let sy = (p[1] + g.half_width) / g.h;
        let i = (sx.floor().max(0.0) as usize).min(g.n - 2);
        let j = (sy.floor().max(0.0) as usize).min(g.n - 2);
        Ok((i, j, sx - i as f64, sy - j as f64))
    }

    /// Bilinear interpolation of the nodal values.
    pub fn interpolate(&self, p: Point) -> Result<f64> {
        let (i, j, tx, ty) = self.locate(p)?;
        Ok(self.bilinear(i, j, tx, ty))
    }

    #[inline]
    pub(crate) fn bilinear(&self, i: usize, j: usize, tx: f64, ty: f64) -> f64 {
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }

    /// Exact gradient of the bilinear interpolant inside cell `(i, j)`.
    #[inline]
    pub(crate) fn bilinear_gradient(&self, i: usize, j: usize, tx: f64, ty: f64) -> Point {
        let h = self.grid.h;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        [
            ((1.0 - ty) * (v10 - v00) + ty * (v11 - v01)) / h,
            ((1.0 - tx) * (v01 - v00) + tx * (v11 - v10)) / h,
        ]
    }

    /// Central differences (step `h`) of the interpolated values at `p`.
    pub fn gradient_at(&self, p: Point) -> Result<Point> {
        let h = self.grid.h;
        if self.grid.margin(p) < 2.0 * h * (1.0 - 1e-9) {
            return Err(Error::domain(format!(
                "gradient at ({}, {}) needs distance >= 2h from the box boundary",
                p[0], p[1]
            )));
        }
        let fx = self.interpolate([p[0] + h, p[1]])? - self.interpolate([p[0] - h, p[1]])?;
        let fy = self.interpolate([p[0], p[1] + h])? - self.interpolate([p[0], p[1] - h])?;
        Ok([fx / (2.0 * h), fy / (2.0 * h)])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["i", "j", "value"])?;
        let n = self.grid.n();
        for j in 0..n {
            for i in 0..n {
                wtr.write_record([i.to_string(), j.to_string(), format_value(self.at(i, j))])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(grid: Grid, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["i", "j", "value"] {
            return Err(Error::invalid("csv header", "expected `i,j,value`"));
        }
        let mut values = vec![f64::NAN; grid.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<&str> { rec.get(k).ok_or_else(|| Error::invalid("csv", "short row")) };
            let i: usize = parse(0)?.trim().parse().map_err(|_| Error::invalid("csv.i", "not an index"))?;
            let j: usize = parse(1)?.trim().parse().map_err(|_| Error::invalid("csv.j", "not an index"))?;
            let v: f64 = parse(2)?.trim().parse().map_err(|_| Error::invalid("csv.value", "not a number"))?;
            if i >= grid.n() || j >= grid.n() {
                return Err(Error::invalid("csv", format!("node ({i}, {j}) outside a {0}x{0} grid", grid.n())));
            }
            values[grid.idx(i, j)] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("csv", "missing nodes"));
        }
        Self::from_values(grid, values)
    }

    /// Writes `<stem>.csv` and the grid sidecar `<stem>.grid.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let meta = GridMeta {
            n: self.grid.n,
            half_width: self.grid.half_width,
            h: self.grid.h,
            nonnegative: self.nonnegative,
        };
        std::fs::write(dir.join(format!("{stem}.grid.json")), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    /// Loads a function written by [`GridFunction::save`]; `csv_path` names the
    /// value file, the sidecar is found next to it.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let sidecar = csv_path.with_extension("grid.json");
        let meta: GridMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
        let grid = Grid::new(meta.n, meta.half_width)?;
        let u = Self::read_csv(grid, std::fs::File::open(csv_path)?)?;
        if meta.nonnegative {
            u.into_nonnegative()
        } else {
            Ok(u)
        }
    }
}

/// Sidecar metadata for grid function CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub n: usize,
    pub half_width: f64,
    pub h: f64,
    pub nonnegative: bool,
}

/// Shortest round-trip representation; stable across runs.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

/// Two-component integrand for ball quadrature with separate full-cell and
/// point rules. Both components are accumulated in the same pass.
pub trait CellIntegrand {
    /// Approximate mean of the integrand over the full cell `(i, j)`.
    fn full_cell(&self, i: usize, j: usize) -> Result<[f64; 2]>;
    /// Integrand at a point `p` lying in cell `(i, j)`.
    fn at_point(&self, i: usize, j: usize, p: Point) -> Result<[f64; 2]>;
}

struct PointRule<F>(Grid, F);

impl<F: Fn(Point) -> f64> CellIntegrand for PointRule<F> {
    fn full_cell(&self, i: usize, j: usize) -> Result<[f64; 2]> {
        Ok([(self.1)(self.0.cell_center(i, j)), 0.0])
    }
    fn at_point(&self, _i: usize, _j: usize, p: Point) -> Result<[f64; 2]> {
        Ok([(self.1)(p), 0.0])
    }
}

const SUBCELLS: usize = 4;

/// `∫_{B_r(x0)} f`: cells inside the ball use the full-cell rule, cells cut by
/// the circle are sampled on a 4×4 sub-cell lattice restricted to the ball.
pub fn ball_cell_sum<I: CellIntegrand>(grid: &Grid, x0: Point, r: f64, integrand: &I) -> Result<[f64; 2]> {
    grid.check_ball(x0, r)?;
    let h = grid.h();
    let area = h * h;
    let (ri, rj) = grid.cell_range(x0, r);
    let mut total = [0.0, 0.0];
    for j in rj {
        for i in ri.clone() {
            let c0 = grid.node(i, j);
            let (x_lo, x_hi) = (c0[0] - x0[0], c0[0] + h - x0[0]);
            let (y_lo, y_hi) = (c0[1] - x0[1], c0[1] + h - x0[1]);
            let far_x = x_lo.abs().max(x_hi.abs());
            let far_y = y_lo.abs().max(y_hi.abs());
            if far_x.hypot(far_y) <= r {
                let v = integrand.full_cell(i, j)?;
                total[0] += v[0] * area;
                total[1] += v[1] * area;
                continue;
            }
            let near_x = if x_lo > 0.0 { x_lo } else if x_hi < 0.0 { -x_hi } else { 0.0 };
            let near_y = if y_lo > 0.0 { y_lo } else if y_hi < 0.0 { -y_hi } else { 0.0 };
            if near_x.hypot(near_y) >= r {
                continue;
            }
            let sub = h / SUBCELLS as f64;
            let mut acc = [0.0, 0.0];
            for b in 0..SUBCELLS {
                for a in 0..SUBCELLS {
                    let p = [c0[0] + (a as f64 + 0.5) * sub, c0[1] + (b as f64 + 0.5) * sub];
                    if (p[0] - x0[0]).hypot(p[1] - x0[1]) < r {
                        let v = integrand.at_point(i, j, p)?;
                        acc[0] += v[0];
                        acc[1] += v[1];
                    }
                }
            }
            total[0] += acc[0] * sub * sub;
            total[1] += acc[1] * sub * sub;
        }
    }
    Ok(total)
}

/// `∫_{B_r(x0)} f dx` for a point-evaluable `f`.
pub fn ball_quadrature<F: Fn(Point) -> f64>(grid: &Grid, x0: Point, r: f64, f: F) -> Result<f64> {
    Ok(ball_cell_sum(grid, x0, r, &PointRule(*grid, f))?[0])
}

/// A sample of the circle quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellSample {
    pub point: Point,
    pub weight: f64,
    pub normal: Point,
}

/// Midpoint rule on `∂B_r(x0)` with `max(64, ⌈2πr/h⌉)` equally spaced samples.
#[derive(Debug, Clone)]
pub struct ShellQuadrature {
    pub x0: Point,
    pub r: f64,
    pub samples: Vec<ShellSample>,
}

impl ShellQuadrature {
    pub fn new(grid: &Grid, x0: Point, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::domain(format!("shell radius {r} must be positive")));
        }
        let n_theta = ((2.0 * PI * r / grid.h()).ceil() as usize).max(64);
        Self::with_samples(grid, x0, r, n_theta)
    }

    pub fn with_samples(grid: &Grid, x0: Point, r: f64, n_theta: usize) -> Result<Self> {
        let w = 2.0 * PI * r / n_theta as f64;
        let mut samples = Vec::with_capacity(n_theta);
        for k in 0..n_theta {
            let t = 2.0 * PI * (k as f64 + 0.5) / n_theta as f64;
            let normal = [t.cos(), t.sin()];
            let point = [x0[0] + r * normal[0], x0[1] + r * normal[1]];
            if grid.margin(point) <= 0.0 {
                return Err(Error::domain(format!(
                    "shell of radius {r} about ({}, {}) leaves the grid box",
                    x0[0], x0[1]
                )));
            }
            samples.push(ShellSample { point, weight: w, normal });
        }
        Ok(Self { x0, r, samples })
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }
}

/// Integrands available on shells.
#[derive(Clone, Copy)]
pub enum ShellIntegrand<'a> {
    /// `u²`.
    Square,
    /// `|∇_τ u|²`.
    TangentialSq,
    /// `(∂_ν u - c u / r)²`.
    DeficitSq { c: f64 },
    /// `φ(u)` for a pointwise map, e.g. `u₊^γ`.
    Pointwise(&'a dyn Fn(f64) -> f64),
}

/// `Σ wᵢ · integrand(sampleᵢ)` with `∂_ν u = ∇u·ν` and `∇_τ u = ∇u - (∇u·ν)ν`.
pub fn shell_integral(u: &GridFunction, shell: &ShellQuadrature, integrand: ShellIntegrand<'_>) -> Result<f64> {
    let mut total = 0.0;
    for s in &shell.samples {
        let v = match integrand {
            ShellIntegrand::Square => u.interpolate(s.point)?.powi(2),
            ShellIntegrand::Pointwise(f) => f(u.interpolate(s.point)?),
            ShellIntegrand::TangentialSq => {
                let g = u.gradient_at(s.point)?;
                let dn = g[0] * s.normal[0] + g[1] * s.normal[1];
                (g[0] - dn * s.normal[0]).powi(2) + (g[1] - dn * s.normal[1]).powi(2)
            }
            ShellIntegrand::DeficitSq { c } => {
                let g = u.gradient_at(s.point)?;
                let dn = g[0] * s.normal[0] + g[1] * s.normal[1];
                (dn - c * u.interpolate(s.point)? / shell.r).powi(2)
            }
        };
        total += s.weight * v;
    }
    Ok(total)
}
