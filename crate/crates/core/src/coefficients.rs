//! Coefficient data of the energies: the matrix field `A`, the scalar fields
//! `δ`, `γ`, `Q` (and their two-phase counterparts), the gauge `ϱ`, and the
//! moduli of continuity attached to each of them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

pub type Point = [f64; 2];

/// Upper end of the interval on which moduli are evaluated.
pub const MODULUS_RANGE: f64 = 2.0;

/// A modulus of continuity `ω : (0, 2] → [0, ∞)`, nondecreasing with `ω(0⁺) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulus {
    /// `C r^α`.
    Holder { alpha: f64, c: f64 },
    /// `C |ln r|^{-p}` for `r < 1/2`, held at `C (ln 2)^{-p}` beyond.
    LogPower { p: f64, c: f64 },
    /// Piecewise-linear through `(r, ω)` samples, linear to 0 at the origin,
    /// constant past the last sample.
    Tabulated { samples: Vec<(f64, f64)> },
    Zero,
    /// `value · inner(arg · r)`; produced by affine changes of variables.
    Scaled {
        inner: Box<Modulus>,
        arg: f64,
        value: f64,
    },
    Sum { terms: Vec<Modulus> },
}

impl Modulus {
    pub fn holder(alpha: f64, c: f64) -> Self {
        Modulus::Holder { alpha, c }
    }

    pub fn log_power(p: f64, c: f64) -> Self {
        Modulus::LogPower { p, c }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Modulus::Holder { alpha, c } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(Error::invalid("modulus.alpha", format!("{alpha} not in (0, 1]")));
                }
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(Error::invalid("modulus.c", format!("{c} must be finite and >= 0")));
                }
            }
            Modulus::LogPower { p, c } => {
                if !(*p > 0.0 && p.is_finite()) {
                    return Err(Error::invalid("modulus.p", format!("{p} must be positive")));
                }
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(Error::invalid("modulus.c", format!("{c} must be finite and >= 0")));
                }
            }
            Modulus::Tabulated { samples } => {
                if samples.is_empty() {
                    return Err(Error::invalid("modulus.samples", "empty table"));
                }
                let mut prev = (0.0, 0.0);
                for &(r, w) in samples {
                    if !(r > prev.0) {
                        return Err(Error::invalid("modulus.samples", "radii must be strictly increasing and positive"));
                    }
                    if !(w >= prev.1 && w.is_finite()) {
                        return Err(Error::invalid("modulus.samples", "values must be finite and nondecreasing from 0"));
                    }
                    prev = (r, w);
                }
            }
            Modulus::Zero => {}
            Modulus::Scaled { inner, arg, value } => {
                if !(*arg > 0.0 && *value >= 0.0 && arg.is_finite() && value.is_finite()) {
                    return Err(Error::invalid("modulus.scaled", "scale factors must be positive"));
                }
                inner.validate()?;
            }
            Modulus::Sum { terms } => {
                for t in terms {
                    t.validate()?;
                }
            }
        }
        Ok(())
    }

    /// `ω(r)` for `r ∈ (0, 2]`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r <= MODULUS_RANGE) {
            return Err(Error::domain(format!("modulus evaluated at r = {r}, outside (0, 2]")));
        }
        Ok(self.eval_extended(r))
    }

    /// Same formulas without the domain gate; used for `r → 0⁺` integrals and
    /// for scaled arguments that leave (0, 2].
    pub(crate) fn eval_extended(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            Modulus::Holder { alpha, c } => c * r.powf(*alpha),
            Modulus::LogPower { p, c } => c * (-r.min(0.5).ln()).powf(-p),
            Modulus::Tabulated { samples } => {
                let mut prev = (0.0, 0.0);
                for &(sr, sw) in samples {
                    if r <= sr {
                        let t = (r - prev.0) / (sr - prev.0);
                        return prev.1 + t * (sw - prev.1);
                    }
                    prev = (sr, sw);
                }
                prev.1
            }
            Modulus::Zero => 0.0,
            Modulus::Scaled { inner, arg, value } => value * inner.eval_extended(arg * r),
            Modulus::Sum { terms } => terms.iter().map(|t| t.eval_extended(r)).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Modulus::Zero => true,
            Modulus::Holder { c, .. } | Modulus::LogPower { c, .. } => *c == 0.0,
            Modulus::Tabulated { samples } => samples.iter().all(|s| s.1 == 0.0),
            Modulus::Scaled { inner, value, .. } => *value == 0.0 || inner.is_zero(),
            Modulus::Sum { terms } => terms.iter().all(Modulus::is_zero),
        }
    }

    /// `value · ω(arg · r)`, simplified where the closed form allows it.
    pub fn scaled(&self, arg: f64, value: f64) -> Modulus {
        match self {
            Modulus::Zero => Modulus::Zero,
            Modulus::Holder { alpha, c } => Modulus::Holder {
                alpha: *alpha,
                c: value * c * arg.powf(*alpha),
            },
            _ if arg == 1.0 && value == 1.0 => self.clone(),
            other => Modulus::Scaled {
                inner: Box::new(other.clone()),
                arg,
                value,
            },
        }
    }

    pub fn sum(terms: Vec<Modulus>) -> Modulus {
        let terms: Vec<Modulus> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        match terms.len() {
            0 => Modulus::Zero,
            1 => terms.into_iter().next().unwrap(),
            _ => Modulus::Sum { terms },
        }
    }
}

/// Result of a numerical Dini test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiniEstimate {
    pub converged: bool,
    /// Estimate of `∫₀^{1/2} w(t)/t dt` (partial sum when not converged).
    pub estimate: f64,
}

const DINI_T_MIN: f64 = 1e-12;
/// Local power-law exponent of the tail (in `s = |ln t|`) required to accept.
const DINI_MIN_TAIL_EXPONENT: f64 = 1.05;

/// Tests whether `∫₀^{1/2} w(t)/t dt < ∞` with `w(t) = ω(t)` or `|ln t| ω(t)`.
pub fn is_dini(m: &Modulus, log_weighted: bool) -> Result<DiniEstimate> {
    m.validate()?;
    Ok(dini_integral(|t| {
        let w = m.eval_extended(t);
        if log_weighted {
            w * t.ln().abs()
        } else {
            w
        }
    }))
}

/// Numerical `∫₀^{1/2} w(t)/t dt` on the geometric partition `t_k = 2^{-k-1}`
/// down to `t = 1e-12`, followed by a tail test.
///
/// In the variable `s = |ln t|` the integrand is `F(s) = w(e^{-s})` on panels of
/// width `ln 2`. The tail past `S = |ln 1e-12|` is classified from the local
/// log-log slope of `F`: a power law `s^{-q}` is summable only for `q > 1`; a
/// slope that keeps growing indicates exponential decay (Hölder-type moduli).
pub fn dini_integral<F: Fn(f64) -> f64>(w: F) -> DiniEstimate {
    dini_integral_to(w, 0.5)
}

/// `∫₀^b w(t)/t dt` for `b ∈ (0, 1/2]`, same method as [`dini_integral`].
pub fn dini_integral_to<F: Fn(f64) -> f64>(w: F, b: f64) -> DiniEstimate {
    debug_assert!(b > 0.0 && b <= 0.5);
    let rule = GaussLegendre::new(10);
    let ln2 = std::f64::consts::LN_2;
    let s_max = -DINI_T_MIN.ln();
    let big_f = |s: f64| w((-s).exp());

    let mut partial = 0.0;
    let mut s = -b.ln();
    while s < s_max {
        let hi = (s + ln2).min(s_max);
        partial += rule.integrate(big_f, s, hi);
        s = hi;
    }

    let f_end = big_f(s_max);
    if f_end <= 0.0 {
        return DiniEstimate {
            converged: true,
            estimate: partial,
        };
    }
    let f_half = big_f(0.5 * s_max);
    let f_quarter = big_f(0.25 * s_max);
    if !(f_half > 0.0 && f_quarter > 0.0) {
        return DiniEstimate {
            converged: false,
            estimate: partial,
        };
    }
    // local exponents q = -d ln F / d ln s on [S/4, S/2] and [S/2, S]; a power
    // law keeps q fixed, exponential decay doubles it
    let q_near = -(f_half / f_quarter).ln() / ln2;
    let q_far = -(f_end / f_half).ln() / ln2;
    let exponential = q_near > 0.0 && q_far > 1.5 * q_near;
    let tail = if exponential {
        let lambda = -(f_end / f_half).ln() / (0.5 * s_max);
        f_end / lambda
    } else if q_far > DINI_MIN_TAIL_EXPONENT {
        f_end * s_max / (q_far - 1.0)
    } else {
        return DiniEstimate {
            converged: false,
            estimate: partial,
        };
    };
    DiniEstimate {
        converged: true,
        estimate: partial + tail,
    }
}

/// Symmetric 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn quad(&self, v: Point) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    pub fn apply(&self, v: Point) -> Point {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * self.trace();
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - d, m + d)
    }

    pub fn max_abs_diff(&self, other: &Sym2) -> f64 {
        (self.xx - other.xx)
            .abs()
            .max((self.xy - other.xy).abs())
            .max((self.yy - other.yy).abs())
    }

    /// Positive definite square root, `(A + √det I) / √(tr A + 2√det)`.
    pub fn sqrt_spd(&self) -> Result<Sym2> {
        let (lo, _) = self.eigenvalues();
        if !(lo > 0.0) || !self.xx.is_finite() || !self.xy.is_finite() || !self.yy.is_finite() {
            return Err(Error::domain(format!("matrix {self:?} is not symmetric positive definite")));
        }
        let s = self.det().sqrt();
        let t = (self.trace() + 2.0 * s).sqrt();
        Ok(Sym2::new((self.xx + s) / t, self.xy / t, (self.yy + s) / t))
    }

    pub fn inverse(&self) -> Result<Sym2> {
        let d = self.det();
        if d.abs() < 1e-300 {
            return Err(Error::domain("singular matrix"));
        }
        Ok(Sym2::new(self.yy / d, -self.xy / d, self.xx / d))
    }

    /// `self · m · self` for symmetric `self` and `m` (a congruence).
    pub fn congruence(&self, m: &Sym2) -> Sym2 {
        let a = [[self.xx, self.xy], [self.xy, self.yy]];
        let b = [[m.xx, m.xy], [m.xy, m.yy]];
        let mut ab = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                ab[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = ab[i][0] * a[0][j] + ab[i][1] * a[1][j];
            }
        }
        Sym2::new(c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1])
    }

    /// Plain product as a general 2×2 array (rows).
    pub fn mul(&self, other: &Sym2) -> [[f64; 2]; 2] {
        [
            [self.xx * other.xx + self.xy * other.xy, self.xx * other.xy + self.xy * other.yy],
            [self.xy * other.xx + self.yy * other.xy, self.xy * other.xy + self.yy * other.yy],
        ]
    }

    /// Operator (spectral) norm.
    pub fn norm(&self) -> f64 {
        let (lo, hi) = self.eigenvalues();
        lo.abs().max(hi.abs())
    }
}

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(Point) -> Sym2 + Send + Sync>;

/// A scalar coefficient with a declared modulus and validity interval.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    eval: ScalarFn,
    modulus: Modulus,
    bounds: (f64, f64),
    constant: Option<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("modulus", &self.modulus)
            .field("bounds", &self.bounds)
            .field("constant", &self.constant)
            .finish()
    }
}

impl ScalarField {
    pub fn new(name: impl Into<String>, eval: ScalarFn, modulus: Modulus, bounds: (f64, f64)) -> Result<Self> {
        let name = name.into();
        modulus.validate()?;
        if !(bounds.0 <= bounds.1) || bounds.0.is_nan() || bounds.1.is_nan() {
            return Err(Error::invalid(name, format!("invalid bounds [{}, {}]", bounds.0, bounds.1)));
        }
        Ok(Self {
            name,
            eval,
            modulus,
            bounds,
            constant: None,
        })
    }

    pub fn constant(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(move |_| value),
            modulus: Modulus::Zero,
            bounds: (value, value),
            constant: Some(value),
        }
    }

    /// `c0 + g·x`, with modulus `|g| r` and bounds over the disc `|x| ≤ radius`.
    pub fn affine(name: impl Into<String>, c0: f64, grad: Point, radius: f64) -> Result<Self> {
        let g = grad[0].hypot(grad[1]);
        Self::new(
            name,
            Arc::new(move |x: Point| c0 + grad[0] * x[0] + grad[1] * x[1]),
            if g == 0.0 { Modulus::Zero } else { Modulus::Holder { alpha: 1.0, c: g } },
            (c0 - g * radius, c0 + g * radius),
        )
    }

    /// `base + amp |x - center|^α`; modulus `|amp| r^α`.
    pub fn radial_holder(name: impl Into<String>, base: f64, amp: f64, alpha: f64, center: Point, radius: f64) -> Result<Self> {
        let ext = amp * radius.powf(alpha);
        Self::new(
            name,
            Arc::new(move |x: Point| base + amp * (x[0] - center[0]).hypot(x[1] - center[1]).powf(alpha)),
            Modulus::holder(alpha, amp.abs()),
            (base.min(base + ext), base.max(base + ext)),
        )
    }

    /// `base + amp ℓ(|x - center|)` with `ℓ(ρ) = |ln ρ|^{-p}` below `e^{-(p+1)}`
    /// and constant beyond; `ℓ` is concave, so `|amp|·log_power(p)` is a modulus.
    pub fn log_bump(name: impl Into<String>, base: f64, amp: f64, p: f64, center: Point) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::invalid("log_bump.p", "must be positive"));
        }
        let cutoff = (-(p + 1.0)).exp();
        let cap = (p + 1.0).powf(-p);
        let ell = move |rho: f64| {
            if rho <= 0.0 {
                0.0
            } else if rho >= cutoff {
                cap
            } else {
                (-rho.ln()).powf(-p)
            }
        };
        let ext = amp * cap;
        Self::new(
            name,
            Arc::new(move |x: Point| base + amp * ell((x[0] - center[0]).hypot(x[1] - center[1]))),
            Modulus::log_power(p, amp.abs()),
            (base.min(base + ext), base.max(base + ext)),
        )
    }

    /// Bilinear interpolation of samples on a rectangular lattice
    /// (`x,y,value` rows in any order). Queries outside the lattice are rejected.
    pub fn tabulated(name: impl Into<String>, rows: &[(f64, f64, f64)], modulus: Modulus) -> Result<Self> {
        let name = name.into();
        let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        if xs.len() < 2 || ys.len() < 2 || xs.len() * ys.len() != rows.len() {
            return Err(Error::invalid(name, "tabulated samples must form a full rectangular lattice (>= 2x2)"));
        }
        let mut vals = vec![f64::NAN; xs.len() * ys.len()];
        for &(x, y, v) in rows {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("non-finite sample at ({x}, {y})")));
            }
            let i = xs.partition_point(|&a| a < x);
            let j = ys.partition_point(|&a| a < y);
            vals[j * xs.len() + i] = v;
        }
        if vals.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(name, "duplicate lattice samples"));
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let nx = xs.len();
        let eval = move |p: Point| {
            let (x, y) = (p[0], p[1]);
            if x < xs[0] || x > xs[nx - 1] || y < ys[0] || y > ys[ys.len() - 1] {
                return f64::NAN;
            }
            let i = xs.partition_point(|&a| a <= x).clamp(1, nx - 1) - 1;
            let j = ys.partition_point(|&a| a <= y).clamp(1, ys.len() - 1) - 1;
            let tx = (x - xs[i]) / (xs[i + 1] - xs[i]);
            let ty = (y - ys[j]) / (ys[j + 1] - ys[j]);
            let v00 = vals[j * nx + i];
            let v10 = vals[j * nx + i + 1];
            let v01 = vals[(j + 1) * nx + i];
            let v11 = vals[(j + 1) * nx + i + 1];
            (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
        };
        Self::new(name, Arc::new(eval), modulus, (lo, hi))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    /// Replaces the declared validity interval (e.g. `γ ⋐ (0,1)` from config).
    pub fn with_bounds(mut self, bounds: (f64, f64)) -> Result<Self> {
        if !(bounds.0 <= bounds.1) {
            return Err(Error::invalid(&self.name, "invalid bounds"));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn at(&self, x: Point) -> Result<f64> {
        let v = (self.eval)(x);
        if !v.is_finite() {
            return Err(Error::domain(format!("{} is undefined at ({}, {})", self.name, x[0], x[1])));
        }
        let tol = 1e-12 * (1.0 + v.abs());
        if v < self.bounds.0 - tol || v > self.bounds.1 + tol {
            return Err(Error::domain(format!(
                "{} = {v} at ({}, {}) leaves its validity interval [{}, {}]",
                self.name, x[0], x[1], self.bounds.0, self.bounds.1
            )));
        }
        Ok(v)
    }

    /// `x ↦ self(map(x))`, with modulus rescaled by the Lipschitz constant of `map`.
    pub fn compose(&self, map: Arc<dyn Fn(Point) -> Point + Send + Sync>, lipschitz: f64) -> ScalarField {
        let inner = self.eval.clone();
        ScalarField {
            name: self.name.clone(),
            eval: Arc::new(move |x| inner(map(x))),
            modulus: self.modulus.scaled(lipschitz, 1.0),
            bounds: self.bounds,
            constant: self.constant,
        }
    }
}

/// The symmetric uniformly elliptic matrix field `A`.
#[derive(Clone)]
pub struct MatrixField {
    name: String,
    eval: MatrixFn,
    modulus: Modulus,
    ellipticity: f64,
    constant: Option<Sym2>,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("name", &self.name)
            .field("modulus", &self.modulus)
            .field("ellipticity", &self.ellipticity)
            .field("constant", &self.constant)
            .finish()
    }
}

impl MatrixField {
    pub fn new(name: impl Into<String>, eval: MatrixFn, modulus: Modulus, ellipticity: f64) -> Result<Self> {
        let name = name.into();
        modulus.validate()?;
        if !(ellipticity > 0.0 && ellipticity <= 1.0) {
            return Err(Error::invalid(name, format!("ellipticity {ellipticity} not in (0, 1]")));
        }
        Ok(Self {
            name,
            eval,
            modulus,
            ellipticity,
            constant: None,
        })
    }

    pub fn identity() -> Self {
        Self::constant(Sym2::IDENTITY).expect("identity is elliptic")
    }

    pub fn constant(m: Sym2) -> Result<Self> {
        let (lo, hi) = m.eigenvalues();
        if !(lo > 0.0) {
            return Err(Error::invalid("A", format!("constant matrix {m:?} is not positive definite")));
        }
        let lambda = lo.min(1.0 / hi).min(1.0);
        Ok(Self {
            name: "A".into(),
            eval: Arc::new(move |_| m),
            modulus: Modulus::Zero,
            ellipticity: lambda,
            constant: Some(m),
        })
    }

    /// `I + amp |x - center|^α R(φ)` with `R(φ) = [[cos φ, sin φ], [sin φ, -cos φ]]`;
    /// `R(φ)` has unit operator norm so the modulus is `|amp| r^α`.
    pub fn radial_holder(amp: f64, alpha: f64, phase: f64, center: Point, radius: f64) -> Result<Self> {
        let ext = amp.abs() * radius.powf(alpha);
        if ext >= 1.0 {
            return Err(Error::invalid("A.amp", "perturbation destroys ellipticity on the domain"));
        }
        let (c, s) = (phase.cos(), phase.sin());
        let lambda = (1.0 - ext).min(1.0 / (1.0 + ext));
        Self::new(
            "A",
            Arc::new(move |x: Point| {
                let k = amp * (x[0] - center[0]).hypot(x[1] - center[1]).powf(alpha);
                Sym2::new(1.0 + k * c, k * s, 1.0 - k * c)
            }),
            Modulus::holder(alpha, amp.abs()),
            lambda,
        )
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    pub fn constant_value(&self) -> Option<Sym2> {
        self.constant
    }

    /// Evaluates `A(x)`, spot-checking ellipticity along `e₁`, `e₂` and the diagonal.
    pub fn at(&self, x: Point) -> Result<Sym2> {
        let m = (self.eval)(x);
        let lam = self.ellipticity;
        let d = std::f64::consts::FRAC_1_SQRT_2;
        for v in [[1.0, 0.0], [0.0, 1.0], [d, d]] {
            let q = m.quad(v);
            if !q.is_finite() || q < lam * (1.0 - 1e-12) || q > (1.0 + 1e-12) / lam {
                return Err(Error::domain(format!(
                    "A at ({}, {}) violates ellipticity: <A v, v> = {q} outside [{lam}, {}]",
                    x[0],
                    x[1],
                    1.0 / lam
                )));
            }
        }
        Ok(m)
    }

    /// `x ↦ L⁻¹ A(x0 + L x) L⁻¹` for symmetric `L`.
    pub fn normalized(&self, x0: Point, l: Sym2) -> Result<MatrixField> {
        let linv = l.inverse()?;
        let inner = self.eval.clone();
        let lnorm = l.norm();
        let linv_norm = linv.norm();
        // ellipticity of L⁻¹AL⁻¹: eigenvalues scale by at most |L⁻¹|² and at least |L|⁻²
        let lam = (self.ellipticity / (lnorm * lnorm))
            .min(1.0 / ((1.0 / self.ellipticity) * linv_norm * linv_norm))
            .min(1.0);
        let map = move |x: Point| {
            let y = l.apply(x);
            linv.congruence(&inner([x0[0] + y[0], x0[1] + y[1]]))
        };
        Ok(MatrixField {
            name: self.name.clone(),
            eval: Arc::new(map),
            modulus: self.modulus.scaled(lnorm, linv_norm * linv_norm),
            ellipticity: lam,
            constant: self.constant.map(|c| linv.congruence(&c)),
        })
    }
}

/// The potential part of the functional, by variant.
#[derive(Debug, Clone)]
pub enum Potential {
    /// `δ u₊^γ`.
    Ap1 { delta: ScalarField, gamma: ScalarField },
    /// `δ₁ u₊^γ + δ₂ u₋^γ`.
    Ap2 {
        delta1: ScalarField,
        delta2: ScalarField,
        gamma: ScalarField,
    },
    /// `Q χ{u>0}`.
    Ac1 { q: ScalarField },
    /// `Q₁ χ{u>0} + Q₂ χ{u<0}`.
    Ac2 { q1: ScalarField, q2: ScalarField },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ap1,
    Ap2,
    Ac1,
    Ac2,
}

impl Variant {
    pub fn is_alt_phillips(self) -> bool {
        matches!(self, Variant::Ap1 | Variant::Ap2)
    }

    pub fn is_one_phase(self) -> bool {
        matches!(self, Variant::Ap1 | Variant::Ac1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ap1 => "ap1",
            Variant::Ap2 => "ap2",
            Variant::Ac1 => "ac1",
            Variant::Ac2 => "ac2",
        }
    }
}

/// Frozen scalar coefficients at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrozenPotential {
    Ap1 { delta: f64, gamma: f64 },
    Ap2 { delta1: f64, delta2: f64, gamma: f64 },
    Ac1 { q: f64 },
    Ac2 { q1: f64, q2: f64 },
}

impl FrozenPotential {
    /// Pointwise potential density (sharp indicator).
    #[inline]
    pub fn density(&self, u: f64) -> f64 {
        match *self {
            FrozenPotential::Ap1 { delta, gamma } => {
                if u > 0.0 {
                    delta * u.powf(gamma)
                } else {
                    0.0
                }
            }
            FrozenPotential::Ap2 { delta1, delta2, gamma } => {
                if u > 0.0 {
                    delta1 * u.powf(gamma)
                } else if u < 0.0 {
                    delta2 * (-u).powf(gamma)
                } else {
                    0.0
                }
            }
            FrozenPotential::Ac1 { q } => {
                if u > 0.0 {
                    q
                } else {
                    0.0
                }
            }
            FrozenPotential::Ac2 { q1, q2 } => {
                if u > 0.0 {
                    q1
                } else if u < 0.0 {
                    q2
                } else {
                    0.0
                }
            }
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            FrozenPotential::Ap1 { gamma, .. } | FrozenPotential::Ap2 { gamma, .. } => Some(gamma),
            _ => None,
        }
    }
}

/// A functional variant together with all its coefficient fields and gauge.
#[derive(Debug, Clone)]
pub struct EnergySpec {
    pub a: MatrixField,
    pub potential: Potential,
    pub gauge: Modulus,
}

impl EnergySpec {
    pub fn new(a: MatrixField, potential: Potential, gauge: Modulus) -> Result<Self> {
        gauge.validate()?;
        if gauge.eval_extended(1e-300) > 1e-12 {
            return Err(Error::invalid("gauge", "gauge must vanish at 0+"));
        }
        let check_gamma = |g: &ScalarField| -> Result<()> {
            let (lo, hi) = g.bounds();
            if !(lo > 0.0 && hi < 1.0) {
                return Err(Error::invalid(
                    g.name().to_string(),
                    format!("validity interval [{lo}, {hi}] must be a compact subinterval of (0, 1)"),
                ));
            }
            Ok(())
        };
        let check_positive = |f: &ScalarField| -> Result<()> {
            if !(f.bounds().0 > 0.0) {
                return Err(Error::invalid(f.name(), format!("lower bound {} must be positive", f.bounds().0)));
            }
            Ok(())
        };
        let check_nonneg = |f: &ScalarField| -> Result<()> {
            if !(f.bounds().0 >= 0.0) {
                return Err(Error::invalid(f.name(), format!("lower bound {} must be nonnegative", f.bounds().0)));
            }
            Ok(())
        };
        match &potential {
            Potential::Ap1 { delta, gamma } => {
                check_positive(delta)?;
                check_gamma(gamma)?;
            }
            Potential::Ap2 { delta1, delta2, gamma } => {
                check_nonneg(delta1)?;
                check_nonneg(delta2)?;
                check_gamma(gamma)?;
            }
            Potential::Ac1 { q } => check_positive(q)?,
            Potential::Ac2 { q1, q2 } => {
                check_nonneg(q1)?;
                check_nonneg(q2)?;
            }
        }
        Ok(Self { a, potential, gauge })
    }

    /// Constant-coefficient one-phase Alt–Phillips spec.
    pub fn ap1_constant(delta: f64, gamma: f64) -> Result<Self> {
        Self::new(
            MatrixField::identity(),
            Potential::Ap1 {
                delta: ScalarField::constant("delta", delta),
                gamma: ScalarField::constant("gamma", gamma),
            },
            Modulus::Zero,
        )
    }

    /// Constant-coefficient two-phase Alt–Phillips spec.
    pub fn ap2_constant(delta1: f64, delta2: f64, gamma: f64) -> Result<Self> {
        Self::new(
            MatrixField::identity(),
            Potential::Ap2 {
                delta1: ScalarField::constant("delta1", delta1),
                delta2: ScalarField::constant("delta2", delta2),
                gamma: ScalarField::constant("gamma", gamma),
            },
            Modulus::Zero,
        )
    }

    /// Constant-coefficient one-phase Alt–Caffarelli spec.
    pub fn ac1_constant(q: f64) -> Result<Self> {
        Self::new(
            MatrixField::identity(),
            Potential::Ac1 {
                q: ScalarField::constant("Q", q),
            },
            Modulus::Zero,
        )
    }

    pub fn ac2_constant(q1: f64, q2: f64) -> Result<Self> {
        Self::new(
            MatrixField::identity(),
            Potential::Ac2 {
                q1: ScalarField::constant("Q1", q1),
                q2: ScalarField::constant("Q2", q2),
            },
            Modulus::Zero,
        )
    }

    pub fn variant(&self) -> Variant {
        match self.potential {
            Potential::Ap1 { .. } => Variant::Ap1,
            Potential::Ap2 { .. } => Variant::Ap2,
            Potential::Ac1 { .. } => Variant::Ac1,
            Potential::Ac2 { .. } => Variant::Ac2,
        }
    }

    pub fn scalar_fields(&self) -> Vec<&ScalarField> {
        match &self.potential {
            Potential::Ap1 { delta, gamma } => vec![delta, gamma],
            Potential::Ap2 { delta1, delta2, gamma } => vec![delta1, delta2, gamma],
            Potential::Ac1 { q } => vec![q],
            Potential::Ac2 { q1, q2 } => vec![q1, q2],
        }
    }

    pub fn gamma_field(&self) -> Option<&ScalarField> {
        match &self.potential {
            Potential::Ap1 { gamma, .. } | Potential::Ap2 { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    /// All coefficients evaluated at `x`.
    pub fn potential_at(&self, x: Point) -> Result<FrozenPotential> {
        Ok(match &self.potential {
            Potential::Ap1 { delta, gamma } => FrozenPotential::Ap1 {
                delta: delta.at(x)?,
                gamma: gamma.at(x)?,
            },
            Potential::Ap2 { delta1, delta2, gamma } => FrozenPotential::Ap2 {
                delta1: delta1.at(x)?,
                delta2: delta2.at(x)?,
                gamma: gamma.at(x)?,
            },
            Potential::Ac1 { q } => FrozenPotential::Ac1 { q: q.at(x)? },
            Potential::Ac2 { q1, q2 } => FrozenPotential::Ac2 {
                q1: q1.at(x)?,
                q2: q2.at(x)?,
            },
        })
    }

    /// True when every field is constant (all moduli zero).
    pub fn is_constant(&self) -> bool {
        self.a.constant_value().is_some() && self.scalar_fields().iter().all(|f| f.constant_value().is_some())
    }
}

/// Evaluates every field at `x0` and returns the constant-coefficient spec.
pub fn freeze(spec: &EnergySpec, x0: Point) -> Result<EnergySpec> {
    let a = MatrixField::constant(spec.a.at(x0)?)?;
    let potential = match &spec.potential {
        Potential::Ap1 { delta, gamma } => Potential::Ap1 {
            delta: ScalarField::constant(delta.name(), delta.at(x0)?),
            gamma: ScalarField::constant(gamma.name(), gamma.at(x0)?),
        },
        Potential::Ap2 { delta1, delta2, gamma } => Potential::Ap2 {
            delta1: ScalarField::constant(delta1.name(), delta1.at(x0)?),
            delta2: ScalarField::constant(delta2.name(), delta2.at(x0)?),
            gamma: ScalarField::constant(gamma.name(), gamma.at(x0)?),
        },
        Potential::Ac1 { q } => Potential::Ac1 {
            q: ScalarField::constant(q.name(), q.at(x0)?),
        },
        Potential::Ac2 { q1, q2 } => Potential::Ac2 {
            q1: ScalarField::constant(q1.name(), q1.at(x0)?),
            q2: ScalarField::constant(q2.name(), q2.at(x0)?),
        },
    };
    EnergySpec::new(a, potential, Modulus::Zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn modulus_values() {
        assert!((Modulus::holder(0.5, 1.0).eval(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(Modulus::Zero.eval(0.3).unwrap(), 0.0);
        let e2 = (-2.0f64).exp();
        assert!((Modulus::log_power(3.0, 1.0).eval(e2).unwrap() - 0.125).abs() < 1e-14);
        let capped = 2.0 * std::f64::consts::LN_2.powf(-3.0);
        assert!((Modulus::log_power(3.0, 2.0).eval(1.5).unwrap() - capped).abs() < 1e-12);
    }

    #[test]
    fn modulus_domain() {
        for r in [0.0, -1.0, 2.5, f64::NAN] {
            assert!(matches!(Modulus::holder(0.5, 1.0).eval(r), Err(Error::Domain(_))));
        }
        assert!(Modulus::holder(0.5, 1.0).eval(2.0).is_ok());
    }

    #[test]
    fn tabulated_modulus_validation() {
        let ok = Modulus::Tabulated {
            samples: vec![(0.1, 0.05), (1.0, 0.2)],
        };
        ok.validate().unwrap();
        assert!((ok.eval(0.05).unwrap() - 0.025).abs() < 1e-15);
        assert_eq!(ok.eval(1.5).unwrap(), 0.2);
        let decreasing = Modulus::Tabulated {
            samples: vec![(0.1, 0.3), (1.0, 0.2)],
        };
        assert!(decreasing.validate().is_err());
    }

    #[test]
    fn dini_examples() {
        let h = is_dini(&Modulus::holder(0.5, 1.0), false).unwrap();
        assert!(h.converged);
        assert!((h.estimate - 2.0f64 * 0.5f64.sqrt()).abs() < 1e-6, "{}", h.estimate);

        let l1 = is_dini(&Modulus::log_power(1.0, 1.0), false).unwrap();
        assert!(!l1.converged);

        let l3 = is_dini(&Modulus::log_power(3.0, 1.0), true).unwrap();
        assert!(l3.converged);
        let exact = 1.0 / std::f64::consts::LN_2;
        assert!((l3.estimate - exact).abs() < 1e-3 * exact, "{}", l3.estimate);

        // log_power(2) unweighted is Dini, log-weighted it is the borderline case
        assert!(is_dini(&Modulus::log_power(2.0, 1.0), false).unwrap().converged);
        assert!(!is_dini(&Modulus::log_power(2.0, 1.0), true).unwrap().converged);
        assert!(is_dini(&Modulus::Zero, true).unwrap().converged);
    }

    #[test]
    fn holder_dini_estimate_close_to_closed_form() {
        for alpha in [0.1, 0.3, 0.5, 1.0] {
            let d = is_dini(&Modulus::holder(alpha, 2.0), false).unwrap();
            let exact = 2.0 * 0.5f64.powf(alpha) / alpha;
            assert!(d.converged);
            assert!((d.estimate - exact).abs() < 2e-3 * exact, "alpha {alpha}: {} vs {exact}", d.estimate);
        }
    }

    #[test]
    fn sqrt_of_spd() {
        let a = Sym2::new(2.0, 1.0, 2.0);
        let l = a.sqrt_spd().unwrap();
        let p = l.mul(&l);
        assert!((p[0][0] - 2.0).abs() < 1e-12 && (p[0][1] - 1.0).abs() < 1e-12 && (p[1][1] - 2.0).abs() < 1e-12);
        assert!(Sym2::new(1.0, 2.0, 1.0).sqrt_spd().is_err());
    }

    #[test]
    fn freeze_evaluates_fields() {
        let delta = ScalarField::new(
            "delta",
            Arc::new(|x: Point| 1.0 + x[0] * x[0] + x[1] * x[1]),
            Modulus::holder(1.0, 4.0),
            (1.0, 9.0),
        )
        .unwrap();
        let spec = EnergySpec::new(
            MatrixField::identity(),
            Potential::Ap1 {
                delta,
                gamma: ScalarField::constant("gamma", 0.5),
            },
            Modulus::Zero,
        )
        .unwrap();
        let f = freeze(&spec, [0.0, 0.0]).unwrap();
        assert_eq!(f.potential_at([0.7, -0.3]).unwrap(), FrozenPotential::Ap1 { delta: 1.0, gamma: 0.5 });
        assert!(f.is_constant());

        let q = ScalarField::affine("Q", 2.0, [1.0, 0.0], 1.0).unwrap();
        let ac = EnergySpec::new(MatrixField::identity(), Potential::Ac1 { q }, Modulus::Zero).unwrap();
        let f = freeze(&ac, [0.5, 0.0]).unwrap();
        assert_eq!(f.potential_at([0.0, 0.0]).unwrap(), FrozenPotential::Ac1 { q: 2.5 });
    }

    #[test]
    fn freeze_outside_validity_is_domain_error() {
        let delta = ScalarField::radial_holder("delta", 1.0, 0.3, 0.5, [0.0, 0.0], 1.0).unwrap();
        let spec = EnergySpec::new(
            MatrixField::identity(),
            Potential::Ap1 {
                delta,
                gamma: ScalarField::constant("gamma", 0.5),
            },
            Modulus::Zero,
        )
        .unwrap();
        assert!(freeze(&spec, [0.5, 0.0]).is_ok());
        assert!(matches!(freeze(&spec, [3.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma_interval_must_sit_inside_unit_interval() {
        let bad = EnergySpec::ap1_constant(1.0, 1.2);
        assert!(matches!(bad, Err(Error::Validation { .. })));
        assert!(EnergySpec::ap1_constant(0.0, 0.5).is_err());
        assert!(EnergySpec::ac1_constant(-1.0).is_err());
    }

    #[test]
    fn matrix_ellipticity_spot_check() {
        let a = MatrixField::radial_holder(0.3, 0.5, 0.7, [0.0, 0.0], 1.0).unwrap();
        assert!(a.at([0.5, 0.5]).is_ok());
        // outside the declared radius the perturbation exceeds the ellipticity bound
        assert!(a.at([40.0, 0.0]).is_err());
        assert_eq!(a.at([0.0, 0.0]).unwrap(), Sym2::IDENTITY);
    }

    #[test]
    fn log_bump_respects_declared_modulus() {
        let f = ScalarField::log_bump("q", 1.0, 0.5, 1.0, [0.0, 0.0]).unwrap();
        let m = f.modulus().clone();
        let pts = [0.0, 1e-6, 1e-3, 0.05, 0.1, 0.13, 0.2, 0.5, 1.0];
        for &a in &pts {
            for &b in &pts {
                let diff = (f.at([a, 0.0]).unwrap() - f.at([b, 0.0]).unwrap()).abs();
                let r = (a - b).abs();
                if r > 0.0 {
                    assert!(diff <= m.eval(r).unwrap() + 1e-12, "a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn tabulated_field_interpolates() {
        let mut rows = vec![];
        for i in 0..3 {
            for j in 0..3 {
                let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
                rows.push((x, y, 2.0 + x - 0.5 * y));
            }
        }
        let f = ScalarField::tabulated("delta", &rows, Modulus::holder(1.0, 1.2)).unwrap();
        assert!((f.at([0.3, -0.4]).unwrap() - (2.0 + 0.3 + 0.2)).abs() < 1e-14);
        assert!(f.at([1.5, 0.0]).is_err());
        assert!(ScalarField::tabulated("d", &rows[..8], Modulus::Zero).is_err());
    }

    proptest! {
        #[test]
        fn builtin_moduli_are_monotone(r1 in 1e-9f64..2.0, r2 in 1e-9f64..2.0, alpha in 0.01f64..1.0, p in 0.1f64..4.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            for m in [Modulus::holder(alpha, 0.7), Modulus::log_power(p, 1.3), Modulus::Zero] {
                prop_assert!(m.eval(lo).unwrap() <= m.eval(hi).unwrap() + 1e-15);
                prop_assert!(m.eval(lo).unwrap() >= 0.0);
            }
        }

        #[test]
        fn holder_is_always_dini(alpha in 0.05f64..=1.0, c in 0.01f64..10.0) {
            prop_assert!(is_dini(&Modulus::holder(alpha, c), false).unwrap().converged);
        }

        #[test]
        fn log_power_one_is_never_dini(c in 0.01f64..10.0) {
            prop_assert!(!is_dini(&Modulus::log_power(1.0, c), false).unwrap().converged);
        }

        #[test]
        fn freezing_constants_is_identity(delta in 0.1f64..5.0, gamma in 0.05f64..0.95, x in -1.5f64..1.5, y in -1.5f64..1.5) {
            let spec = EnergySpec::ap1_constant(delta, gamma).unwrap();
            let frozen = freeze(&spec, [x, y]).unwrap();
            for p in [[0.0, 0.0], [1.0, -1.0], [x, y]] {
                prop_assert_eq!(spec.potential_at(p).unwrap(), frozen.potential_at(p).unwrap());
                prop_assert_eq!(spec.a.at(p).unwrap(), frozen.a.at(p).unwrap());
            }
        }
    }
}
