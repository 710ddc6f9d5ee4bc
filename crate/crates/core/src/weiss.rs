//! Weiss-type monotonicity quantities at free boundary points.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::{dini_integral_to, is_dini, EnergySpec, Modulus, Point, Sym2};
use crate::discretization::{format_value, shell_integral, GridFunction, ShellIntegrand, ShellQuadrature};
use crate::energy::frozen_energy;
use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

/// Space dimension.
const D: f64 = 2.0;
/// Largest admissible deviation of `A(x0)` from the identity.
pub const NORMALIZATION_TOL: f64 = 1e-8;
/// Ratio of consecutive default radii.
pub const RADIUS_RATIO: f64 = 1.189_207_115_002_721; // 2^{1/4}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ExponentSource {
    AltPhillips { gamma: f64 },
    AltCaffarelli,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityExponent {
    pub beta: f64,
    pub source: ExponentSource,
}

impl HomogeneityExponent {
    pub fn alt_phillips(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{gamma} not in (0, 1)")));
        }
        Ok(Self {
            beta: 2.0 / (2.0 - gamma),
            source: ExponentSource::AltPhillips { gamma },
        })
    }

    pub fn alt_caffarelli() -> Self {
        Self {
            beta: 1.0,
            source: ExponentSource::AltCaffarelli,
        }
    }

    pub fn at(spec: &EnergySpec, x0: Point) -> Result<Self> {
        match spec.potential_at(x0)?.gamma() {
            Some(g) => Self::alt_phillips(g),
            None => Ok(Self::alt_caffarelli()),
        }
    }
}

/// `r^{-(d+2(β-1))} J - (β/2) r^{-(d+2β-1)} S`; Alt–Caffarelli is `β = 1`.
#[inline]
pub fn weiss_formula(volume: f64, shell: f64, r: f64, beta: f64) -> f64 {
    r.powf(-(D + 2.0 * (beta - 1.0))) * volume - 0.5 * beta * r.powf(-(D + 2.0 * beta - 1.0)) * shell
}

fn check_normalized(spec: &EnergySpec, x0: Point) -> Result<()> {
    let dev = spec.a.at(x0)?.max_abs_diff(&Sym2::IDENTITY);
    if dev > NORMALIZATION_TOL {
        return Err(Error::NormalizationRequired { deviation: dev });
    }
    Ok(())
}

/// `𝒜_{u,x0}(r)` with the frozen functional.
pub fn weiss_value(u: &GridFunction, spec: &EnergySpec, x0: Point, r: f64) -> Result<f64> {
    check_normalized(spec, x0)?;
    let beta = HomogeneityExponent::at(spec, x0)?.beta;
    let volume = frozen_energy(u, spec, x0, r)?.total;
    let shell = ShellQuadrature::new(u.grid(), x0, r)?;
    let s = shell_integral(u, &shell, ShellIntegrand::Square)?;
    Ok(weiss_formula(volume, s, r, beta))
}

/// `𝓗_r(u) = ½ r^{-(d+2(β-1))} ∫_{∂B_r} (∂_ν u - β u / r)²`.
pub fn homogeneity_deficit(u: &GridFunction, x0: Point, r: f64, beta: f64) -> Result<f64> {
    let shell = ShellQuadrature::new(u.grid(), x0, r)?;
    let s = shell_integral(u, &shell, ShellIntegrand::DeficitSq { c: beta })?;
    Ok(0.5 * r.powf(-(D + 2.0 * (beta - 1.0))) * s)
}

/// `w(x) = (|x - x0| / r)^β u(x0 + r (x - x0)/|x - x0|)` inside `B_r(x0)`,
/// `u` elsewhere.
pub fn homogeneous_extension(u: &GridFunction, x0: Point, r: f64, beta: f64) -> Result<GridFunction> {
    let g = *u.grid();
    let mut w = u.clone();
    for (i, j) in g.nodes_in_ball(x0, r) {
        let p = g.node(i, j);
        let (dx, dy) = (p[0] - x0[0], p[1] - x0[1]);
        let rho = dx.hypot(dy);
        let v = if rho == 0.0 {
            0.0
        } else {
            (rho / r).powf(beta) * u.interpolate([x0[0] + r * dx / rho, x0[1] + r * dy / rho])?
        };
        w.values_mut()[g.idx(i, j)] = v;
    }
    Ok(w)
}

/// `g(r) = C_env (ω_A + ϱ + ω_pot + ω_γ |ln r|) / r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEnvelope {
    pub c_env: f64,
    pub omega_a: Modulus,
    pub rho: Modulus,
    /// `ω_δ` (Alt–Phillips) or `ω_Q` (Alt–Caffarelli), summed over phases.
    pub omega_pot: Modulus,
    /// Log-weighted component; zero for Alt–Caffarelli.
    pub omega_gamma: Modulus,
}

impl DefectEnvelope {
    pub fn from_spec(spec: &EnergySpec, c_env: f64) -> Result<Self> {
        if !(c_env >= 0.0 && c_env.is_finite()) {
            return Err(Error::invalid("c_env", format!("{c_env} must be finite and nonnegative")));
        }
        let gamma = spec.gamma_field();
        let pot: Vec<Modulus> = spec
            .scalar_fields()
            .into_iter()
            .filter(|f| gamma.is_none_or(|g| !std::ptr::eq(*f, g)))
            .map(|f| f.modulus().clone())
            .collect();
        Ok(Self {
            c_env,
            omega_a: spec.a.modulus().clone(),
            rho: spec.gauge.clone(),
            omega_pot: Modulus::sum(pot),
            omega_gamma: gamma.map_or(Modulus::Zero, |g| g.modulus().clone()),
        })
    }

    pub fn with_c_env(&self, c_env: f64) -> Self {
        Self { c_env, ..self.clone() }
    }

    /// `r g(r) / C_env`.
    fn weight(&self, r: f64) -> f64 {
        self.omega_a.eval_extended(r)
            + self.rho.eval_extended(r)
            + self.omega_pot.eval_extended(r)
            + self.omega_gamma.eval_extended(r) * r.ln().abs()
    }

    /// `g(r) / C_env`.
    pub fn unit(&self, r: f64) -> f64 {
        self.weight(r) / r
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.c_env * self.unit(r)
    }

    /// Plain Dini for `ω_A, ϱ, ω_pot`, log-weighted Dini for `ω_γ`.
    pub fn is_dini(&self) -> Result<bool> {
        for m in [&self.omega_a, &self.rho, &self.omega_pot] {
            if !is_dini(m, false)?.converged {
                return Ok(false);
            }
        }
        Ok(is_dini(&self.omega_gamma, true)?.converged)
    }

    /// `∫₀^b g / C_env`.
    pub fn unit_integral_from_zero(&self, b: f64) -> Result<f64> {
        if !self.is_dini()? {
            return Err(Error::NonDini);
        }
        let head = dini_integral_to(|t| self.weight(t), b.min(0.5));
        if !head.converged {
            return Err(Error::NonDini);
        }
        let rest = if b > 0.5 { GaussLegendre::new(20).integrate(|t| self.unit(t), 0.5, b) } else { 0.0 };
        Ok(head.estimate + rest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeissProfile {
    pub x0: Point,
    pub beta: f64,
    pub h: f64,
    pub radii: Vec<f64>,
    pub a_vals: Vec<f64>,
    pub h_vals: Vec<f64>,
    pub g_vals: Vec<f64>,
    /// `∫_{r_0}^{r_k} g` by the trapezoid rule on the sampled radii.
    pub g_cum: Vec<f64>,
    pub envelope: DefectEnvelope,
}

impl WeissProfile {
    /// Radii at or above 1/2, outside the range covered by the theory.
    pub fn outside_range(&self) -> Vec<bool> {
        self.radii.iter().map(|&r| r >= 0.5).collect()
    }

    /// Same profile with a different envelope constant.
    pub fn with_c_env(&self, c_env: f64) -> Self {
        let envelope = self.envelope.with_c_env(c_env);
        let g_vals: Vec<f64> = self.radii.iter().map(|&r| envelope.eval(r)).collect();
        let g_cum = trapezoid_cumulative(&self.radii, &g_vals);
        Self {
            g_vals,
            g_cum,
            envelope,
            ..self.clone()
        }
    }

    pub fn csv_header() -> &'static str {
        "r,A,H,g,G_cum"
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header().split(','))?;
        for k in 0..self.radii.len() {
            out.write_record([
                format_value(self.radii[k]),
                format_value(self.a_vals[k]),
                format_value(self.h_vals[k]),
                format_value(self.g_vals[k]),
                format_value(self.g_cum[k]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn trapezoid_cumulative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for k in 0..x.len() {
        if k > 0 {
            acc += 0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
        }
        out.push(acc);
    }
    out
}

/// Geometric radii with ratio `2^{1/4}` from `r_min` up to at most `r_max`.
pub fn geometric_radii(r_min: f64, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_min;
    while r <= r_max * (1.0 + 1e-12) {
        out.push(r);
        r *= RADIUS_RATIO;
    }
    out
}

pub fn weiss_profile(u: &GridFunction, spec: &EnergySpec, x0: Point, radii: &[f64], envelope: &DefectEnvelope) -> Result<WeissProfile> {
    if radii.is_empty() {
        return Err(Error::invalid("radii", "empty"));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::invalid("radii", "must be positive and strictly increasing"));
    }
    check_normalized(spec, x0)?;
    let beta = HomogeneityExponent::at(spec, x0)?.beta;
    let mut a_vals = Vec::with_capacity(radii.len());
    let mut h_vals = Vec::with_capacity(radii.len());
    for &r in radii {
        a_vals.push(weiss_value(u, spec, x0, r)?);
        h_vals.push(homogeneity_deficit(u, x0, r, beta)?);
    }
    let g_vals: Vec<f64> = radii.iter().map(|&r| envelope.eval(r)).collect();
    let g_cum = trapezoid_cumulative(radii, &g_vals);
    Ok(WeissProfile {
        x0,
        beta,
        h: u.grid().h(),
        radii: radii.to_vec(),
        a_vals,
        h_vals,
        g_vals,
        g_cum,
        envelope: envelope.clone(),
    })
}

/// `5 h / r_min`.
pub fn default_tol_disc(h: f64, r_min: f64) -> f64 {
    5.0 * h / r_min
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub r1: f64,
    pub r2: f64,
    /// `𝒜(r₂) - 𝒜(r₁) + ∫_{r₁}^{r₂} g`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub tol_disc: f64,
    pub pairs_checked: usize,
    pub violations: Vec<Violation>,
    /// Smallest margin over all pairs.
    pub worst_margin: f64,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs checked: {}", self.pairs_checked)?;
        writeln!(f, "tol_disc: {:e}", self.tol_disc)?;
        writeln!(f, "worst margin: {:e}", self.worst_margin)?;
        writeln!(f, "violations: {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  r1={:.6} r2={:.6} margin={:e}", v.r1, v.r2, v.margin)?;
        }
        Ok(())
    }
}

/// Checks `𝒜(r₂) - 𝒜(r₁) + ∫_{r₁}^{r₂} g ≥ -tol_disc` for every pair `r₁ < r₂`.
pub fn almost_monotonicity_check(p: &WeissProfile, tol_disc: f64) -> ViolationReport {
    let n = p.radii.len();
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let margin = p.a_vals[j] - p.a_vals[i] + p.g_cum[j] - p.g_cum[i];
            worst = worst.min(margin);
            if margin < -tol_disc {
                violations.push(Violation {
                    r1: p.radii[i],
                    r2: p.radii[j],
                    margin,
                });
            }
        }
    }
    ViolationReport {
        tol_disc,
        pairs_checked: n * n.saturating_sub(1) / 2,
        violations,
        worst_margin: if n > 1 { worst } else { 0.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitInterval {
    pub lo: f64,
    pub hi: f64,
}

impl LimitInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Bracket for `𝒜(0⁺)`: `𝒜(r_min) - ∫₀^{r_min} g` and `min_r (𝒜(r) + ∫₀^r g)`.
pub fn limit_weiss(p: &WeissProfile) -> Result<LimitInterval> {
    let n = p.radii.len();
    if n < 2 || p.radii[n - 1] < 4.0 * p.radii[0] * (1.0 - 1e-12) {
        return Err(Error::Precondition("profile must cover at least 3 dyadic radii".into()));
    }
    let head = p.envelope.c_env * p.envelope.unit_integral_from_zero(p.radii[0])?;
    let a = p.a_vals[0] - head;
    let b = (0..n)
        .map(|k| p.a_vals[k] + head + p.g_cum[k])
        .fold(f64::INFINITY, f64::min);
    Ok(LimitInterval { lo: a.min(b), hi: a.max(b) })
}

/// Smallest `C_env` for which no training profile has a violation.
pub fn calibrate_c_env(train: &[(WeissProfile, f64)]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for (p, tol) in train {
        let unit = p.with_c_env(1.0);
        let n = p.radii.len();
        for i in 0..n {
            for j in i + 1..n {
                let da = p.a_vals[j] - p.a_vals[i];
                if da >= -tol {
                    continue;
                }
                let u = unit.g_cum[j] - unit.g_cum[i];
                if u <= 0.0 {
                    return Err(Error::Precondition(format!(
                        "violation at r1={}, r2={} cannot be absorbed: envelope vanishes",
                        p.radii[i], p.radii[j]
                    )));
                }
                c = c.max((-tol - da) / u);
            }
        }
    }
    Ok(c)
}
