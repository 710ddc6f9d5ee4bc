//! Blow-ups at free boundary points: rescaling, affine normalization, the
//! trivial cones and their Weiss energy, and cone-distance classification.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{EnergySpec, FrozenPotential, Point, Potential, Sym2};
use crate::discretization::{format_value, Grid, GridFunction};
use crate::error::{Error, Result};
use crate::quad::{graded_both, GaussLegendre};
use crate::weiss::{default_tol_disc, geometric_radii, limit_weiss, weiss_profile, weiss_value, DefectEnvelope, LimitInterval, WeissProfile, NORMALIZATION_TOL};

/// `β = 2 / (2 - γ₀)`.
pub fn beta_of(gamma0: f64) -> Result<f64> {
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::domain(format!("gamma0 = {gamma0} not in (0, 1)")));
    }
    Ok(2.0 / (2.0 - gamma0))
}

/// `ϑ = ((β - 1) β / (γ₀ δ₀))^{1/(γ₀ - 2)}`, the coefficient making
/// `ϑ t^β` solve `u'' = δ₀ γ₀ u^{γ₀-1}` on the ray.
pub fn theta_of(delta0: f64, gamma0: f64) -> Result<f64> {
    if !(delta0 > 0.0 && delta0.is_finite()) {
        return Err(Error::domain(format!("delta0 = {delta0} must be positive")));
    }
    let beta = beta_of(gamma0)?;
    Ok(((beta - 1.0) * beta / (gamma0 * delta0)).powf(1.0 / (gamma0 - 2.0)))
}

/// Frozen data of the positive phase that selects the trivial cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConeKind {
    AltPhillips { delta0: f64, gamma0: f64 },
    /// Slope `√(2 Q₀)`.
    AltCaffarelli { q0: f64 },
}

/// `ϑ ((x - x0)·ν)₊^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub x0: Point,
    pub kind: ConeKind,
    pub beta: f64,
    pub theta: f64,
    pub nu: Point,
}

impl ConeParams {
    pub fn alt_phillips(x0: Point, delta0: f64, gamma0: f64, nu: Point) -> Result<Self> {
        Self::build(x0, ConeKind::AltPhillips { delta0, gamma0 }, beta_of(gamma0)?, theta_of(delta0, gamma0)?, nu)
    }

    pub fn alt_caffarelli(x0: Point, q0: f64, nu: Point) -> Result<Self> {
        if !(q0 > 0.0 && q0.is_finite()) {
            return Err(Error::domain(format!("Q0 = {q0} must be positive")));
        }
        Self::build(x0, ConeKind::AltCaffarelli { q0 }, 1.0, (2.0 * q0).sqrt(), nu)
    }

    fn build(x0: Point, kind: ConeKind, beta: f64, theta: f64, nu: Point) -> Result<Self> {
        let n = nu[0].hypot(nu[1]);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::domain("cone direction must be nonzero"));
        }
        Ok(Self {
            x0,
            kind,
            beta,
            theta,
            nu: [nu[0] / n, nu[1] / n],
        })
    }

    /// Positive-phase cone of the functional frozen at `x0`.
    pub fn from_spec(spec: &EnergySpec, x0: Point, nu: Point) -> Result<Self> {
        match spec.potential_at(x0)? {
            FrozenPotential::Ap1 { delta, gamma } => Self::alt_phillips(x0, delta, gamma, nu),
            FrozenPotential::Ap2 { delta1, gamma, .. } => Self::alt_phillips(x0, delta1, gamma, nu),
            FrozenPotential::Ac1 { q } => Self::alt_caffarelli(x0, q, nu),
            FrozenPotential::Ac2 { q1, .. } => Self::alt_caffarelli(x0, q1, nu),
        }
    }

    pub fn with_nu(&self, nu: Point) -> Result<Self> {
        Self::build(self.x0, self.kind, self.beta, self.theta, nu)
    }

    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        let t = (x[0] - self.x0[0]) * self.nu[0] + (x[1] - self.x0[1]) * self.nu[1];
        if t > 0.0 {
            self.theta * t.powf(self.beta)
        } else {
            0.0
        }
    }
}

pub fn cone_function(p: &ConeParams, grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| p.eval(x))
}

/// `𝒱(x0)`: the Weiss energy of the trivial cone, by 1-D slab integrals over `B₁`.
pub fn cone_weiss_energy(p: &ConeParams, frozen: &FrozenPotential) -> Result<f64> {
    let mismatch = |what: &str| Err(Error::invalid("frozen", format!("{what} does not match the cone parameters")));
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    let (beta, theta) = (p.beta, p.theta);
    let rule = GaussLegendre::new(20);
    let chord = |t: f64| 2.0 * (1.0 - t * t).max(0.0).sqrt();
    let potential = match (p.kind, *frozen) {
        (ConeKind::AltPhillips { delta0, gamma0 }, FrozenPotential::Ap1 { delta, gamma })
        | (ConeKind::AltPhillips { delta0, gamma0 }, FrozenPotential::Ap2 { delta1: delta, gamma, .. }) => {
            if !close(delta0, delta) || !close(gamma0, gamma) {
                return mismatch("delta/gamma");
            }
            delta * theta.powf(gamma) * graded_both(&rule, |t| t.powf(beta * gamma) * chord(t), 0.0, 1.0)
        }
        (ConeKind::AltCaffarelli { q0 }, FrozenPotential::Ac1 { q }) | (ConeKind::AltCaffarelli { q0 }, FrozenPotential::Ac2 { q1: q, .. }) => {
            if !close(q0, q) {
                return mismatch("Q");
            }
            q * graded_both(&rule, chord, 0.0, 1.0)
        }
        _ => return mismatch("variant"),
    };
    let dirichlet = 0.5 * theta * theta * beta * beta * graded_both(&rule, |t| t.powf(2.0 * beta - 2.0) * chord(t), 0.0, 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let boundary = theta * theta * graded_both(&rule, |a: f64| a.cos().max(0.0).powf(2.0 * beta), -half_pi, half_pi);
    Ok(dirichlet + potential - 0.5 * beta * boundary)
}

/// Grid value of the cone's Weiss quantity at radius `r`, for cross-checks.
pub fn cone_weiss_on_grid(p: &ConeParams, spec: &EnergySpec, h: f64, r: f64) -> Result<f64> {
    let grid = Grid::with_spacing(1.0, h)?;
    let c = ConeParams { x0: [0.0, 0.0], ..*p };
    weiss_value(&cone_function(&c, grid), spec, [0.0, 0.0], r)
}

/// `L = A(x0)^{1/2}` and the spec in coordinates `y` with `x = x0 + L y`:
/// `Ã(y) = L⁻¹ A(x0 + L y) L⁻¹`, scalar fields composed with the same map.
pub fn affine_normalize(spec: &EnergySpec, x0: Point) -> Result<(Sym2, EnergySpec)> {
    let a0 = spec.a.at(x0)?;
    let l = a0.sqrt_spd()?;
    let lnorm = l.norm();
    let map: Arc<dyn Fn(Point) -> Point + Send + Sync> = Arc::new(move |y: Point| {
        let v = l.apply(y);
        [x0[0] + v[0], x0[1] + v[1]]
    });
    let c = |f: &crate::coefficients::ScalarField| f.compose(map.clone(), lnorm);
    let potential = match &spec.potential {
        Potential::Ap1 { delta, gamma } => Potential::Ap1 {
            delta: c(delta),
            gamma: c(gamma),
        },
        Potential::Ap2 { delta1, delta2, gamma } => Potential::Ap2 {
            delta1: c(delta1),
            delta2: c(delta2),
            gamma: c(gamma),
        },
        Potential::Ac1 { q } => Potential::Ac1 { q: c(q) },
        Potential::Ac2 { q1, q2 } => Potential::Ac2 { q1: c(q1), q2: c(q2) },
    };
    let out = EnergySpec::new(spec.a.normalized(x0, l)?, potential, spec.gauge.scaled(lnorm, 1.0))?;
    Ok((l, out))
}

/// `ũ(y) = u(x0 + L y)` sampled on `grid`; points mapped outside the source
/// box are clamped to it.
pub fn normalize_function(u: &GridFunction, x0: Point, l: Sym2, grid: Grid) -> Result<GridFunction> {
    let src = u.grid();
    let lim = src.half_width();
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.n() {
        for i in 0..grid.n() {
            let v = l.apply(grid.node(i, j));
            let p = [(x0[0] + v[0]).clamp(-lim, lim), (x0[1] + v[1]).clamp(-lim, lim)];
            out.push(u.interpolate(p)?);
        }
    }
    let f = GridFunction::from_values(grid, out)?;
    if u.is_nonnegative() {
        f.into_nonnegative()
    } else {
        Ok(f)
    }
}

/// `u`, `spec` and `x0` unchanged when `A(x0) = I`; otherwise the
/// normalized spec, the resampled function and the origin.
pub fn normalize_at(u: &GridFunction, spec: &EnergySpec, x0: Point) -> Result<(GridFunction, EnergySpec, Point)> {
    if spec.a.at(x0)?.max_abs_diff(&Sym2::IDENTITY) <= NORMALIZATION_TOL {
        return Ok((u.clone(), spec.clone(), x0));
    }
    let (l, nspec) = affine_normalize(spec, x0)?;
    Ok((normalize_function(u, x0, l, *u.grid())?, nspec, [0.0, 0.0]))
}

/// Weiss profile at `x0` after affine normalization; `x0` of the result is
/// the original point.
pub fn normalized_weiss_profile(u: &GridFunction, spec: &EnergySpec, x0: Point, radii: &[f64], c_env: f64) -> Result<WeissProfile> {
    let (v, nspec, origin) = normalize_at(u, spec, x0)?;
    let env = DefectEnvelope::from_spec(&nspec, c_env)?;
    let mut p = weiss_profile(&v, &nspec, origin, radii, &env)?;
    p.x0 = x0;
    Ok(p)
}

/// Default target of [`rescale`]: `[-1, 1]²` with 129 nodes per side.
pub fn unit_grid() -> Grid {
    Grid::new(129, 1.0).expect("valid unit grid")
}

/// `u_r(x) = r^{-β} u(x0 + r x)` on `target` (half-width 1); nodes whose
/// preimage leaves the source box are clamped to it.
pub fn rescale(u: &GridFunction, x0: Point, r: f64, beta: f64, target: Grid) -> Result<GridFunction> {
    let src = u.grid();
    if !src.ball_inside(x0, r) {
        return Err(Error::domain(format!("B_{r}({}, {}) is not inside the grid box", x0[0], x0[1])));
    }
    let lim = src.half_width();
    let scale = r.powf(-beta);
    let mut out = Vec::with_capacity(target.len());
    for j in 0..target.n() {
        for i in 0..target.n() {
            let x = target.node(i, j);
            let p = [(x0[0] + r * x[0]).clamp(-lim, lim), (x0[1] + r * x[1]).clamp(-lim, lim)];
            out.push(scale * u.interpolate(p)?);
        }
    }
    GridFunction::from_values(target, out)
}

/// `min_ν sup_{B₁} |v - ϑ (x·ν)₊^β|` over `n_nu` equally spaced directions;
/// returns the distance and the angle of the best `ν`.
pub fn cone_distance(v: &GridFunction, beta: f64, theta: f64, n_nu: usize) -> Result<(f64, f64)> {
    if n_nu == 0 {
        return Err(Error::invalid("n_nu", "must be positive"));
    }
    let g = v.grid();
    let mut pts = Vec::new();
    for j in 0..g.n() {
        for i in 0..g.n() {
            let p = g.node(i, j);
            if p[0].hypot(p[1]) <= 1.0 + 1e-12 {
                pts.push((p, v.at(i, j)));
            }
        }
    }
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..n_nu {
        let a = 2.0 * std::f64::consts::PI * k as f64 / n_nu as f64;
        let (c, s) = (a.cos(), a.sin());
        let mut sup = 0.0f64;
        for &(p, val) in &pts {
            let t = p[0] * c + p[1] * s;
            let cone = if t > 0.0 { theta * t.powf(beta) } else { 0.0 };
            sup = sup.max((val - cone).abs());
            if sup >= best.0 {
                break;
            }
        }
        if sup < best.0 {
            best = (sup, a);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Regular,
    SingularCandidate,
    Undetermined,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Regular => "regular",
            Classification::SingularCandidate => "singular-candidate",
            Classification::Undetermined => "undetermined",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub n_nu: usize,
    /// Defaults to `10 h^{min(β-1, 1)}`.
    pub dist_threshold: Option<f64>,
    /// Defaults to `5 h / r_min`.
    pub gap_threshold: Option<f64>,
    pub c_env: f64,
    pub target: Grid,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            n_nu: 360,
            dist_threshold: None,
            gap_threshold: None,
            c_env: 1.0,
            target: unit_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub x0: Point,
    /// Decreasing.
    pub radii: Vec<f64>,
    pub cone_dists: Vec<f64>,
    pub nu_angles: Vec<f64>,
    pub classification: Classification,
    /// `None` when the envelope is not Dini.
    pub limit: Option<LimitInterval>,
    pub v_x0: f64,
    pub dist_threshold: f64,
    pub gap_threshold: f64,
}

impl BlowupReport {
    pub fn csv_header() -> &'static str {
        "x,y,r,cone_dist,nu_angle,A_limit_lo,A_limit_hi,V,classification"
    }

    /// Margin of the lower limit bracket above `𝒱`.
    pub fn gap_margin(&self) -> Option<f64> {
        self.limit.map(|l| l.lo - self.v_x0)
    }

    pub fn write_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        let (lo, hi) = self.limit.map_or((f64::NAN, f64::NAN), |l| (l.lo, l.hi));
        for k in 0..self.radii.len() {
            out.write_record([
                format_value(self.x0[0]),
                format_value(self.x0[1]),
                format_value(self.radii[k]),
                format_value(self.cone_dists[k]),
                format_value(self.nu_angles[k]),
                format_value(lo),
                format_value(hi),
                format_value(self.v_x0),
                self.classification.as_str().to_string(),
            ])?;
        }
        Ok(())
    }
}

pub fn write_reports_csv<W: Write>(reports: &[BlowupReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BlowupReport::csv_header().split(','))?;
    for r in reports {
        r.write_rows(&mut out)?;
    }
    out.flush()?;
    Ok(())
}

/// Whether `x0` lies within `2h` of `∂{u ≠ 0}`: the `2h`-ball around it holds
/// both vanishing and non-vanishing nodes.
fn near_free_boundary(u: &GridFunction, x0: Point) -> bool {
    let g = u.grid();
    let tau = 1e-8 * u.sup_abs().max(f64::MIN_POSITIVE);
    let (mut zero, mut pos) = (false, false);
    for (i, j) in g.nodes_in_ball(x0, 2.0 * g.h() * (1.0 + 1e-9)) {
        let v = u.at(i, j);
        zero |= v.abs() <= tau;
        pos |= v > tau;
    }
    zero && pos
}

/// Classifies the blow-up of `u` at `x0` from rescalings at `radii`.
///
/// Cone distances count as decreasing over the last three (smallest) radii
/// when each step grows by less than `0.1 · dist_threshold`.
pub fn classify(u: &GridFunction, spec: &EnergySpec, x0: Point, radii: &[f64], opts: &ClassifyOptions) -> Result<BlowupReport> {
    if radii.len() < 3 {
        return Err(Error::invalid("radii", "need at least 3 radii"));
    }
    if !near_free_boundary(u, x0) {
        return Err(Error::Precondition(format!("({}, {}) is not within 2h of the free boundary", x0[0], x0[1])));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let h = u.grid().h();

    let (v, nspec_at, origin) = normalize_at(u, spec, x0)?;

    let cone = ConeParams::from_spec(&nspec_at, origin, [1.0, 0.0])?;
    let v_x0 = cone_weiss_energy(&cone, &nspec_at.potential_at(origin)?)?;

    let mut cone_dists = Vec::with_capacity(radii.len());
    let mut nu_angles = Vec::with_capacity(radii.len());
    for &r in &radii {
        let ur = rescale(&v, origin, r, cone.beta, opts.target)?;
        let (d, a) = cone_distance(&ur, cone.beta, cone.theta, opts.n_nu)?;
        cone_dists.push(d);
        nu_angles.push(a);
    }

    let r_min = radii[radii.len() - 1];
    let r_max = radii[0];
    let env = DefectEnvelope::from_spec(&nspec_at, opts.c_env)?;
    let profile = weiss_profile(&v, &nspec_at, origin, &geometric_radii(r_min, r_max), &env)?;
    let limit = match limit_weiss(&profile) {
        Ok(l) => Some(l),
        Err(Error::NonDini) => None,
        Err(e) => return Err(e),
    };

    let dist_threshold = opts.dist_threshold.unwrap_or(10.0 * h.powf((cone.beta - 1.0).min(1.0)));
    let gap_threshold = opts.gap_threshold.unwrap_or(default_tol_disc(h, r_min));
    let n = cone_dists.len();
    let floor = 0.1 * dist_threshold;
    let decreasing = cone_dists[n - 3..].windows(2).all(|w| w[1] < w[0] + floor);
    let classification = if decreasing && cone_dists[n - 1] <= dist_threshold {
        Classification::Regular
    } else if limit.is_some_and(|l| l.lo >= v_x0 + gap_threshold) {
        Classification::SingularCandidate
    } else {
        Classification::Undetermined
    };
    Ok(BlowupReport {
        x0,
        radii,
        cone_dists,
        nu_angles,
        classification,
        limit,
        v_x0,
        dist_threshold,
        gap_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{MatrixField, Modulus, ScalarField};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn exponent_examples() {
        assert!((beta_of(0.5).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((beta_of(2.0 / 3.0).unwrap() - 1.5).abs() < 1e-15);
        let b = beta_of(0.37).unwrap();
        assert!((b * 0.37 - 2.0 * (b - 1.0)).abs() < 1e-15);
        assert!(beta_of(0.0).is_err() && beta_of(1.0).is_err());
        assert!((theta_of(9.0 / 8.0, 2.0 / 3.0).unwrap() - 1.0).abs() < 1e-15);
        let t = theta_of(1.0, 0.5).unwrap();
        assert!((t - (8.0f64 / 9.0).powf(-2.0 / 3.0)).abs() < 1e-14);
        assert!((t - 1.081_687).abs() < 1e-6);
        for (d, g) in [(9.0 / 8.0, 2.0 / 3.0), (1.0, 0.5)] {
            let (b, t) = (beta_of(g).unwrap(), theta_of(d, g).unwrap());
            assert!((t * b * (b - 1.0) - d * g * t.powf(g - 1.0)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ray_ode_residual_vanishes(delta in 0.05f64..20.0, gamma in 0.01f64..0.99) {
            let (b, t) = (beta_of(gamma).unwrap(), theta_of(delta, gamma).unwrap());
            prop_assert!(b > 1.0 && b < 2.0);
            prop_assert!((b * gamma - 2.0 * (b - 1.0)).abs() <= 1e-12);
            let lhs = t * b * (b - 1.0);
            prop_assert!((lhs - delta * gamma * t.powf(gamma - 1.0)).abs() <= 1e-12 * lhs.max(1.0));
        }
    }

    #[test]
    fn cone_function_examples() {
        let g = Grid::new(65, 1.0).unwrap();
        let p = ConeParams::alt_caffarelli([0.0, 0.0], 0.5, [1.0, 0.0]).unwrap();
        assert_eq!(p.theta, 1.0);
        let c = cone_function(&p, g);
        for k in 0..g.len() {
            let x = g.node(k % g.n(), k / g.n());
            assert_eq!(c.values()[k], x[0].max(0.0));
        }
        let q = ConeParams::alt_phillips([0.0, 0.0], 1.0, 0.5, [0.6, 0.8]).unwrap();
        assert!((q.eval([0.6, 0.8]) - q.theta).abs() < 1e-15);
        assert_eq!(q.eval([-0.6, 0.1]), 0.0);
        assert!((q.nu[0].hypot(q.nu[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cone_energies() {
        let ac = ConeParams::alt_caffarelli([0.0, 0.0], 1.0, [1.0, 0.0]).unwrap();
        let v = cone_weiss_energy(&ac, &FrozenPotential::Ac1 { q: 1.0 }).unwrap();
        assert!((v - PI / 2.0).abs() < 1e-12, "{v}");
        let ap = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [1.0, 0.0]).unwrap();
        let v = cone_weiss_energy(&ap, &FrozenPotential::Ap1 { delta: 9.0 / 8.0, gamma: 2.0 / 3.0 }).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
        let ap2 = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0 + 1e-3, 2.0 / 3.0, [1.0, 0.0]).unwrap();
        let v2 = cone_weiss_energy(&ap2, &FrozenPotential::Ap1 { delta: 9.0 / 8.0 + 1e-3, gamma: 2.0 / 3.0 }).unwrap();
        assert!((v - v2).abs() <= 1e-2);
        assert!(cone_weiss_energy(&ap, &FrozenPotential::Ap1 { delta: 1.0, gamma: 2.0 / 3.0 }).is_err());
        assert!(cone_weiss_energy(&ap, &FrozenPotential::Ac1 { q: 1.0 }).is_err());
    }

    #[test]
    fn cone_energy_matches_grid_at_two_radii() {
        let ap = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [1.0, 0.0]).unwrap();
        let spec = EnergySpec::ap1_constant(9.0 / 8.0, 2.0 / 3.0).unwrap();
        let ac = ConeParams::alt_caffarelli([0.0, 0.0], 1.0, [0.0, 1.0]).unwrap();
        let ac_spec = EnergySpec::ac1_constant(1.0).unwrap();
        for r in [0.25, 0.5] {
            assert!((cone_weiss_on_grid(&ap, &spec, 1.0 / 256.0, r).unwrap() - 0.5).abs() < 5e-3);
            assert!((cone_weiss_on_grid(&ac, &ac_spec, 1.0 / 256.0, r).unwrap() - PI / 2.0).abs() < 5e-3);
        }
    }

    fn spd(rng: &mut ChaCha8Rng) -> Sym2 {
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        // MᵀM + 0.2 I
        Sym2::new(a * a + b * b + 0.2, a * c, c * c + 0.2)
    }

    #[test]
    fn affine_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a0 = spd(&mut rng);
            let x0 = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let spec = EnergySpec::new(
                MatrixField::constant(a0).unwrap(),
                crate::coefficients::Potential::Ac1 {
                    q: ScalarField::affine("q", 1.0, [0.1, 0.2], 3.0).unwrap(),
                },
                Modulus::Zero,
            )
            .unwrap();
            let (l, ns) = affine_normalize(&spec, x0).unwrap();
            let ll = l.mul(&l);
            let rec = Sym2::new(ll[0][0], ll[0][1], ll[1][1]);
            assert!(rec.max_abs_diff(&a0) < 1e-12 * a0.norm().max(1.0));
            assert!((ll[0][1] - ll[1][0]).abs() < 1e-14);
            assert!(ns.a.at([0.0, 0.0]).unwrap().max_abs_diff(&Sym2::IDENTITY) < 1e-10);
            assert!((ns.potential_at([0.0, 0.0]).unwrap().density(1.0) - spec.potential_at(x0).unwrap().density(1.0)).abs() < 1e-14);
        }
        let (l, _) = affine_normalize(&EnergySpec::ac1_constant(1.0).unwrap(), [0.0, 0.0]).unwrap();
        assert_eq!(l, Sym2::IDENTITY);
        let spec = EnergySpec::new(MatrixField::constant(Sym2::new(4.0, 0.0, 1.0)).unwrap(), EnergySpec::ac1_constant(1.0).unwrap().potential, Modulus::Zero).unwrap();
        let (l, _) = affine_normalize(&spec, [0.0, 0.0]).unwrap();
        assert!(l.max_abs_diff(&Sym2::new(2.0, 0.0, 1.0)) < 1e-15);
    }

    #[test]
    fn normalized_weiss_is_defined() {
        let spec = EnergySpec::new(
            MatrixField::constant(Sym2::new(2.0, 1.0, 2.0)).unwrap(),
            EnergySpec::ap1_constant(1.0, 0.5).unwrap().potential,
            Modulus::Zero,
        )
        .unwrap();
        let g = Grid::new(129, 1.0).unwrap();
        let u = GridFunction::from_fn(g, |x| x[0].max(0.0).powf(4.0 / 3.0));
        assert!(matches!(weiss_value(&u, &spec, [0.0, 0.0], 0.3), Err(Error::NormalizationRequired { .. })));
        let (l, ns) = affine_normalize(&spec, [0.0, 0.0]).unwrap();
        let v = normalize_function(&u, [0.0, 0.0], l, g).unwrap();
        assert!(weiss_value(&v, &ns, [0.0, 0.0], 0.3).unwrap().is_finite());
    }

    #[test]
    fn rescale_examples() {
        let g = Grid::with_spacing(1.0, 1.0 / 128.0).unwrap();
        let p = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [0.6, 0.8]).unwrap();
        let u = cone_function(&p, g);
        let t = unit_grid();
        let ur = rescale(&u, [0.0, 0.0], 0.5, 1.5, t).unwrap();
        assert!(ur.sup_diff_in_ball(&cone_function(&p, t), [0.0, 0.0], 1.0) < 1e-2);

        let f = GridFunction::from_fn(g, |x| (x[0] + 0.3 * x[1] * x[1]).max(0.0).powf(1.5));
        let fine = Grid::new(257, 1.0).unwrap();
        let twice = rescale(&rescale(&f, [0.1, 0.0], 0.8, 1.5, fine).unwrap(), [0.0, 0.0], 0.5, 1.5, t).unwrap();
        let once = rescale(&f, [0.1, 0.0], 0.4, 1.5, t).unwrap();
        assert!(twice.sup_diff_in_ball(&once, [0.0, 0.0], 1.0) < 2e-2);

        let z = rescale(&GridFunction::zeros(g), [0.2, 0.2], 0.3, 1.5, t).unwrap();
        assert_eq!(z.sup_abs(), 0.0);
    }

    #[test]
    fn cone_distance_examples() {
        let t = unit_grid();
        let off = 2.0 * PI * 10.5 / 360.0;
        let p = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [off.cos(), off.sin()]).unwrap();
        let (d, a) = cone_distance(&cone_function(&p, t), p.beta, p.theta, 360).unwrap();
        assert!(d <= p.theta * p.beta * PI / 360.0, "{d}");
        assert!((a - off).abs() <= 2.0 * PI / 360.0);

        let (d, _) = cone_distance(&GridFunction::zeros(t), p.beta, p.theta, 360).unwrap();
        assert!(d <= p.theta && d >= p.theta * (1.0 - 2.0 * t.h()).powf(p.beta), "{d}");

        let base = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [1.0, 0.0]).unwrap();
        let bump = |x: Point| {
            let s = (x[0] + 0.5).hypot(x[1]) / 0.3;
            if s < 1.0 {
                (1.0 - s * s).powi(2)
            } else {
                0.0
            }
        };
        let v = GridFunction::from_fn(t, |x| base.eval(x) + 0.05 * bump(x));
        let (d, a) = cone_distance(&v, base.beta, base.theta, 360).unwrap();
        assert!((d - 0.05).abs() < 1e-3, "{d}");
        assert_eq!(a, 0.0);
    }

    #[test]
    fn exact_cone_is_regular() {
        let g = Grid::with_spacing(1.0, 1.0 / 128.0).unwrap();
        let spec = EnergySpec::ap1_constant(9.0 / 8.0, 2.0 / 3.0).unwrap();
        let p = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [0.0, 1.0]).unwrap();
        let u = cone_function(&p, g);
        let rep = classify(&u, &spec, [0.0, 0.0], &[0.5, 0.25, 0.125], &ClassifyOptions::default()).unwrap();
        assert_eq!(rep.classification, Classification::Regular, "{rep:?}");
        assert!(rep.nu_angles.iter().all(|a| (a - PI / 2.0).abs() <= 2.0 * PI / 360.0));
        assert!((rep.v_x0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn double_cone_is_not_regular() {
        let g = Grid::with_spacing(1.0, 1.0 / 128.0).unwrap();
        let spec = EnergySpec::ap2_constant(9.0 / 8.0, 9.0 / 8.0, 2.0 / 3.0).unwrap();
        let u = GridFunction::from_fn(g, |x| x[0].abs().powf(1.5));
        let rep = classify(&u, &spec, [0.0, 0.0], &[0.5, 0.25, 0.125], &ClassifyOptions::default()).unwrap();
        assert_ne!(rep.classification, Classification::Regular);
        assert!(rep.cone_dists.iter().all(|&d| d > 0.29));
        let l = rep.limit.unwrap();
        assert!(l.lo > rep.v_x0, "{l:?} vs {}", rep.v_x0);
        assert_eq!(rep.classification, Classification::SingularCandidate);
    }

    #[test]
    fn classify_refuses_points_off_the_free_boundary() {
        let g = Grid::with_spacing(1.0, 1.0 / 64.0).unwrap();
        let u = GridFunction::from_fn(g, |x| x[0].max(0.0).powf(1.5));
        let spec = EnergySpec::ap1_constant(9.0 / 8.0, 2.0 / 3.0).unwrap();
        assert!(matches!(
            classify(&u, &spec, [0.3, 0.0], &[0.5, 0.25, 0.125], &ClassifyOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let rep = BlowupReport {
            x0: [0.0, 0.5],
            radii: vec![0.5, 0.25],
            cone_dists: vec![0.1, 0.05],
            nu_angles: vec![0.0, 0.0],
            classification: Classification::Regular,
            limit: Some(LimitInterval { lo: 0.5, hi: 0.5 }),
            v_x0: 0.5,
            dist_threshold: 1.0,
            gap_threshold: 0.1,
        };
        let mut buf = Vec::new();
        write_reports_csv(&[rep], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some(BlowupReport::csv_header()));
        assert_eq!(lines.next(), Some("0.0,0.5,0.5,0.1,0.0,0.5,0.5,0.5,regular"));
        assert_eq!(s.lines().count(), 3);
    }
}
