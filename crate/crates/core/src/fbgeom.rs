//! Free boundary geometry: marching-squares extraction of `{u = τ}`, box
//! counting and covering checks on the extracted segments.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::Point;
use crate::discretization::{format_value, GridFunction};
use crate::error::{Error, Result};

/// Dimension of the free boundary is `D - 1`.
const D: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    fn at(&self, t: f64) -> Point {
        [self.a[0] + t * (self.b[0] - self.a[0]), self.a[1] + t * (self.b[1] - self.a[1])]
    }

    /// Parameter interval `[t0, t1] ⊂ [0, 1]` inside the closed disc, if any.
    fn disc_interval(&self, c: Point, r: f64) -> Option<(f64, f64)> {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let f = [self.a[0] - c[0], self.a[1] - c[1]];
        let qa = d[0] * d[0] + d[1] * d[1];
        let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
        let qc = f[0] * f[0] + f[1] * f[1] - r * r;
        if qa == 0.0 {
            return (qc <= 0.0).then_some((0.0, 1.0));
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let (t0, t1) = ((-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa));
        let (lo, hi) = (t0.max(0.0), t1.min(1.0));
        (lo <= hi).then_some((lo, hi))
    }

    /// Liang–Barsky test against the closed box `[lo, hi]`.
    fn meets_box(&self, lo: Point, hi: Point) -> bool {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..2 {
            for (p, q) in [(-d[k], self.a[k] - lo[k]), (d[k], hi[k] - self.a[k])] {
                if p == 0.0 {
                    if q < 0.0 {
                        return false;
                    }
                } else {
                    let t = q / p;
                    if p < 0.0 {
                        t0 = t0.max(t);
                    } else {
                        t1 = t1.min(t);
                    }
                }
            }
        }
        t0 <= t1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundary {
    pub segments: Vec<Segment>,
    pub tau: f64,
}

impl FreeBoundary {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.segments.iter().flat_map(|s| [s.a, s.b]).collect()
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    pub fn length_in_ball(&self, c: Point, r: f64) -> f64 {
        self.segments
            .iter()
            .filter_map(|s| s.disc_interval(c, r).map(|(a, b)| (b - a) * s.length()))
            .sum()
    }

    /// Segments clipped to the closed disc.
    pub fn clipped(&self, c: Point, r: f64) -> FreeBoundary {
        let segments = self
            .segments
            .iter()
            .filter_map(|s| s.disc_interval(c, r).map(|(a, b)| Segment::new(s.at(a), s.at(b))))
            .collect();
        FreeBoundary { segments, tau: self.tau }
    }

    /// Segment midpoint closest to `p`.
    pub fn nearest_point(&self, p: Point) -> Option<Point> {
        self.segments
            .iter()
            .map(|s| s.at(0.5))
            .min_by(|a, b| {
                let da = (a[0] - p[0]).hypot(a[1] - p[1]);
                let db = (b[0] - p[0]).hypot(b[1] - p[1]);
                da.total_cmp(&db)
            })
    }

    pub fn csv_header() -> &'static str {
        "x1,y1,x2,y2"
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header().split(','))?;
        for s in &self.segments {
            out.write_record([s.a[0], s.a[1], s.b[0], s.b[1]].map(format_value))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `10⁻³ · sup u`.
pub fn default_tau(u: &GridFunction) -> f64 {
    1e-3 * u.values().iter().copied().fold(0.0, f64::max)
}

/// Marching squares on `{u = τ}`. Saddle cells are split by the cell-center value.
pub fn extract_fb(u: &GridFunction, tau: f64) -> Result<FreeBoundary> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau_fb", format!("{tau} must be positive")));
    }
    let g = u.grid();
    let n = g.n();
    let mut segments = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            // corners counterclockwise from (i, j)
            let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v = c.map(|(a, b)| u.at(a, b));
            let inside = v.map(|x| x > tau);
            // edge k joins corner k and k+1
            let cross = |k: usize| -> Option<Point> {
                let (a, b) = (k, (k + 1) % 4);
                if inside[a] == inside[b] {
                    return None;
                }
                let t = (tau - v[a]) / (v[b] - v[a]);
                let (pa, pb) = (g.node(c[a].0, c[a].1), g.node(c[b].0, c[b].1));
                Some([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])])
            };
            let pts: Vec<(usize, Point)> = (0..4).filter_map(|k| cross(k).map(|p| (k, p))).collect();
            match pts.len() {
                2 => segments.push(Segment::new(pts[0].1, pts[1].1)),
                4 => {
                    let center = 0.25 * v.iter().sum::<f64>();
                    // isolate the corners whose side differs from the center;
                    // corner k sits between edges k-1 and k
                    let e: Vec<Point> = pts.iter().map(|&(_, p)| p).collect();
                    let isolated = (0..4).filter(|&k| inside[k] != (center > tau));
                    for k in isolated {
                        segments.push(Segment::new(e[(k + 3) % 4], e[k]));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(FreeBoundary { segments, tau })
}

/// [`extract_fb`] at [`default_tau`]; empty when `u ≤ 0`.
pub fn extract_fb_default(u: &GridFunction) -> Result<FreeBoundary> {
    let tau = default_tau(u);
    if tau > 0.0 {
        extract_fb(u, tau)
    } else {
        Ok(FreeBoundary { segments: Vec::new(), tau })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCount {
    pub epsilons: Vec<f64>,
    pub counts: Vec<u64>,
    /// `N(ε) ε^{d-1}`.
    pub products: Vec<f64>,
}

impl BoxCount {
    pub fn csv_header() -> &'static str {
        "eps,N,product"
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header().split(','))?;
        for k in 0..self.epsilons.len() {
            out.write_record([format_value(self.epsilons[k]), self.counts[k].to_string(), format_value(self.products[k])])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Dyadic scales `2^{-k}` from `eps_max` down to `eps_min`.
pub fn dyadic_epsilons(eps_min: f64, eps_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = 2f64.powi(eps_max.log2().floor() as i32);
    while e >= eps_min * (1.0 - 1e-12) {
        out.push(e);
        e *= 0.5;
    }
    out
}

/// Counts closed boxes of the `ε`-lattice through the origin that meet the
/// part of `fb` inside the ball.
pub fn box_count(fb: &FreeBoundary, center: Point, radius: f64, epsilons: &[f64]) -> Result<BoxCount> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", format!("{radius} must be positive")));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("epsilons", format!("{e} must be positive")));
    }
    let mut epsilons = epsilons.to_vec();
    epsilons.sort_by(|a, b| b.total_cmp(a));
    let clipped = fb.clipped(center, radius);
    let mut counts = Vec::with_capacity(epsilons.len());
    let mut products = Vec::with_capacity(epsilons.len());
    for &eps in &epsilons {
        let mut boxes: HashSet<(i64, i64)> = HashSet::new();
        for s in &clipped.segments {
            let lo = [s.a[0].min(s.b[0]), s.a[1].min(s.b[1])];
            let hi = [s.a[0].max(s.b[0]), s.a[1].max(s.b[1])];
            let (i0, i1) = ((lo[0] / eps).floor() as i64 - 1, (hi[0] / eps).floor() as i64);
            let (j0, j1) = ((lo[1] / eps).floor() as i64 - 1, (hi[1] / eps).floor() as i64);
            for bj in j0..=j1 {
                for bi in i0..=i1 {
                    if boxes.contains(&(bi, bj)) {
                        continue;
                    }
                    let blo = [bi as f64 * eps, bj as f64 * eps];
                    if s.meets_box(blo, [blo[0] + eps, blo[1] + eps]) {
                        boxes.insert((bi, bj));
                    }
                }
            }
        }
        let n = boxes.len() as u64;
        counts.push(n);
        products.push(n as f64 * eps.powi(D - 1));
    }
    Ok(BoxCount { epsilons, counts, products })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    /// Length of `fb ∩ B_μ(x0)` outside the balls.
    pub residual: f64,
    /// `residual / μ^{d-1}`.
    pub ratio: f64,
    pub ball_sum: f64,
}

/// Residual free boundary length in `B_μ(x0)` after removing `balls`; requires
/// `Σ rᵢ^{d-1} ≤ μ^{d-1}/4`.
pub fn covering_check(fb: &FreeBoundary, x0: Point, mu: f64, balls: &[(Point, f64)]) -> Result<CoveringReport> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("mu = {mu} must be positive")));
    }
    if let Some((_, r)) = balls.iter().find(|(_, r)| !(*r >= 0.0 && r.is_finite())) {
        return Err(Error::invalid("balls", format!("radius {r} must be nonnegative")));
    }
    let ball_sum: f64 = balls.iter().map(|(_, r)| r.powi(D - 1)).sum();
    let cap = mu.powi(D - 1) / 4.0;
    if ball_sum > cap {
        return Err(Error::Precondition(format!("sum of radii^(d-1) = {ball_sum} exceeds mu^(d-1)/4 = {cap}")));
    }
    let mut residual = 0.0;
    for s in &fb.segments {
        let Some((a, b)) = s.disc_interval(x0, mu) else { continue };
        let mut cut: Vec<(f64, f64)> = balls
            .iter()
            .filter_map(|&(c, r)| s.disc_interval(c, r))
            .map(|(lo, hi)| (lo.max(a), hi.min(b)))
            .filter(|(lo, hi)| lo < hi)
            .collect();
        cut.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut covered = 0.0;
        let mut reach = a;
        for (lo, hi) in cut {
            let lo = lo.max(reach);
            if hi > lo {
                covered += hi - lo;
                reach = hi;
            }
        }
        residual += ((b - a) - covered).max(0.0) * s.length();
    }
    Ok(CoveringReport {
        residual,
        ratio: residual / mu.powi(D - 1),
        ball_sum,
    })
}

/// Divides `u` by `max(1, sup_{B_{4/3}(x0)} |u|)` so the normalized function
/// has sup at most 1 there; returns the factor used.
pub fn normalize_sup(u: &GridFunction, x0: Point) -> Result<(GridFunction, f64)> {
    let g = u.grid();
    let sup = g
        .nodes_in_ball(x0, 4.0 / 3.0)
        .into_iter()
        .map(|(i, j)| u.at(i, j).abs())
        .fold(0.0, f64::max);
    let scale = sup.max(1.0);
    let v = GridFunction::from_values(*g, u.values().iter().map(|x| x / scale).collect())?;
    let v = if u.is_nonnegative() { v.into_nonnegative()? } else { v };
    Ok((v, scale))
}
