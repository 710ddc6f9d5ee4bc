//! Scenario configuration: a TOML document of dotted key paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weisslab_core::blowup::ConeParams;
use weisslab_core::coefficients::{MatrixField, Potential, ScalarField};
use weisslab_core::{EnergySpec, Grid, GridFunction, Modulus, Point, Sym2, Variant};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Minimize,
    Weiss,
    Blowup,
    Fbgeom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Drives the random competitors of the minimize stage.
    pub seed: u64,
    pub stages: Vec<StageName>,
    pub grid: GridCfg,
    pub spec: SpecCfg,
    pub data: DataCfg,
    pub solve: SolveCfg,
    pub weiss: WeissCfg,
    pub blowup: BlowupCfg,
    pub fb: FbCfg,
    pub outputs: OutputsCfg,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 0,
            stages: vec![StageName::Minimize, StageName::Weiss, StageName::Blowup, StageName::Fbgeom],
            grid: GridCfg::default(),
            spec: SpecCfg::default(),
            data: DataCfg::default(),
            solve: SolveCfg::default(),
            weiss: WeissCfg::default(),
            blowup: BlowupCfg::default(),
            fb: FbCfg::default(),
            outputs: OutputsCfg::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCfg {
    pub n: Option<usize>,
    pub h: Option<f64>,
    pub half_width: f64,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self {
            n: None,
            h: Some(1.0 / 64.0),
            half_width: 1.125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldCfg {
    Value(f64),
    Table(FieldTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldTable {
    Constant {
        value: f64,
    },
    Affine {
        c0: f64,
        grad: Point,
        #[serde(default = "default_field_radius")]
        radius: f64,
    },
    RadialHolder {
        base: f64,
        amp: f64,
        alpha: f64,
        #[serde(default)]
        center: Point,
        #[serde(default = "default_field_radius")]
        radius: f64,
    },
    LogBump {
        base: f64,
        amp: f64,
        p: f64,
        #[serde(default)]
        center: Point,
    },
}

fn default_field_radius() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixCfg {
    Identity,
    Constant {
        xx: f64,
        xy: f64,
        yy: f64,
    },
    RadialHolder {
        amp: f64,
        alpha: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        center: Point,
        #[serde(default = "default_field_radius")]
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulusCfg {
    Zero,
    Holder { alpha: f64, c: f64 },
    LogPower { p: f64, c: f64 },
}

impl ModulusCfg {
    fn build(&self) -> Modulus {
        match *self {
            ModulusCfg::Zero => Modulus::Zero,
            ModulusCfg::Holder { alpha, c } => Modulus::holder(alpha, c),
            ModulusCfg::LogPower { p, c } => Modulus::log_power(p, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecCfg {
    pub variant: Variant,
    #[serde(rename = "A")]
    pub a: MatrixCfg,
    pub delta: Option<FieldCfg>,
    pub delta1: Option<FieldCfg>,
    pub delta2: Option<FieldCfg>,
    pub gamma: Option<FieldCfg>,
    pub q: Option<FieldCfg>,
    pub q1: Option<FieldCfg>,
    pub q2: Option<FieldCfg>,
    pub gauge: ModulusCfg,
}

impl Default for SpecCfg {
    fn default() -> Self {
        Self {
            variant: Variant::Ap1,
            a: MatrixCfg::Identity,
            delta: None,
            delta1: None,
            delta2: None,
            gamma: None,
            q: None,
            q1: None,
            q2: None,
            gauge: ModulusCfg::Zero,
        }
    }
}

fn build_field(name: &str, cfg: Option<&FieldCfg>, default: f64) -> Result<ScalarField, CliError> {
    let err = |e: weisslab_core::Error| CliError::Config(e.to_string());
    Ok(match cfg {
        None => ScalarField::constant(name, default),
        Some(FieldCfg::Value(v)) | Some(FieldCfg::Table(FieldTable::Constant { value: v })) => ScalarField::constant(name, *v),
        Some(FieldCfg::Table(FieldTable::Affine { c0, grad, radius })) => ScalarField::affine(name, *c0, *grad, *radius).map_err(err)?,
        Some(FieldCfg::Table(FieldTable::RadialHolder { base, amp, alpha, center, radius })) => {
            ScalarField::radial_holder(name, *base, *amp, *alpha, *center, *radius).map_err(err)?
        }
        Some(FieldCfg::Table(FieldTable::LogBump { base, amp, p, center })) => ScalarField::log_bump(name, *base, *amp, *p, *center).map_err(err)?,
    })
}

impl SpecCfg {
    pub fn build(&self) -> Result<EnergySpec, CliError> {
        let used: &[&str] = match self.variant {
            Variant::Ap1 => &["delta", "gamma"],
            Variant::Ap2 => &["delta1", "delta2", "gamma"],
            Variant::Ac1 => &["q"],
            Variant::Ac2 => &["q1", "q2"],
        };
        let present = [
            ("delta", &self.delta),
            ("delta1", &self.delta1),
            ("delta2", &self.delta2),
            ("gamma", &self.gamma),
            ("q", &self.q),
            ("q1", &self.q1),
            ("q2", &self.q2),
        ];
        for (k, v) in present {
            if v.is_some() && !used.contains(&k) {
                return Err(CliError::Config(format!("spec.{k} is not used by variant {}", self.variant.as_str())));
            }
        }
        let f = |name: &str, cfg: &Option<FieldCfg>, default: f64| build_field(&format!("spec.{name}"), cfg.as_ref(), default);
        let potential = match self.variant {
            Variant::Ap1 => Potential::Ap1 {
                delta: f("delta", &self.delta, 9.0 / 8.0)?,
                gamma: f("gamma", &self.gamma, 2.0 / 3.0)?,
            },
            Variant::Ap2 => Potential::Ap2 {
                delta1: f("delta1", &self.delta1, 9.0 / 8.0)?,
                delta2: f("delta2", &self.delta2, 9.0 / 8.0)?,
                gamma: f("gamma", &self.gamma, 2.0 / 3.0)?,
            },
            Variant::Ac1 => Potential::Ac1 { q: f("q", &self.q, 1.0)? },
            Variant::Ac2 => Potential::Ac2 {
                q1: f("q1", &self.q1, 1.0)?,
                q2: f("q2", &self.q2, 1.0)?,
            },
        };
        let err = |e: weisslab_core::Error| CliError::Config(format!("spec.A: {e}"));
        let a = match self.a {
            MatrixCfg::Identity => MatrixField::identity(),
            MatrixCfg::Constant { xx, xy, yy } => MatrixField::constant(Sym2::new(xx, xy, yy)).map_err(err)?,
            MatrixCfg::RadialHolder { amp, alpha, phase, center, radius } => MatrixField::radial_holder(amp, alpha, phase, center, radius).map_err(err)?,
        };
        let gauge = self.gauge.build();
        gauge.validate().map_err(|e| CliError::Config(format!("spec.gauge: {e}")))?;
        EnergySpec::new(a, potential, gauge).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataCfg {
    /// Trivial cone of the spec frozen at `x0`.
    Cone {
        #[serde(default)]
        x0: Point,
        #[serde(default = "default_nu")]
        nu: Point,
    },
    /// `ϑ |(x - x0)·ν|^β`.
    DoubleCone {
        #[serde(default)]
        x0: Point,
        #[serde(default = "default_nu")]
        nu: Point,
    },
    /// `slope (|x - center| - radius)₊`.
    Radial {
        #[serde(default)]
        center: Point,
        radius: f64,
        #[serde(default = "one")]
        slope: f64,
    },
    /// Grid function CSV with its `grid.json` sidecar.
    File { path: PathBuf },
}

fn default_nu() -> Point {
    [1.0, 0.0]
}

fn one() -> f64 {
    1.0
}

impl Default for DataCfg {
    fn default() -> Self {
        DataCfg::Cone {
            x0: [0.0, 0.0],
            nu: default_nu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveCfg {
    pub center: Point,
    pub radius: f64,
    pub max_iters: usize,
    pub tol_grad: f64,
    /// Random bump competitors tested against the minimizer.
    pub competitors: usize,
}

impl Default for SolveCfg {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            radius: 1.0,
            max_iters: 20_000,
            tol_grad: 1e-6,
            competitors: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadiiCfg {
    /// Ratio `2^{1/4}`.
    Geometric { r_min: f64, r_max: f64 },
    Dyadic { r_min: f64, r_max: f64 },
    List { values: Vec<f64> },
}

impl Default for RadiiCfg {
    fn default() -> Self {
        RadiiCfg::Geometric { r_min: 0.125, r_max: 0.5 }
    }
}

impl RadiiCfg {
    /// Increasing radii.
    pub fn resolve(&self) -> Result<Vec<f64>, CliError> {
        let bad = |m: &str| Err(CliError::Config(format!("weiss.radii: {m}")));
        let mut out = match self {
            RadiiCfg::Geometric { r_min, r_max } | RadiiCfg::Dyadic { r_min, r_max } => {
                if !(*r_min > 0.0 && r_max >= r_min) {
                    return bad("need 0 < r_min <= r_max");
                }
                if matches!(self, RadiiCfg::Geometric { .. }) {
                    weisslab_core::weiss::geometric_radii(*r_min, *r_max)
                } else {
                    let mut v = Vec::new();
                    let mut r = *r_min;
                    while r <= r_max * (1.0 + 1e-12) {
                        v.push(r);
                        r *= 2.0;
                    }
                    v
                }
            }
            RadiiCfg::List { values } => {
                let mut v = values.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        };
        if out.is_empty() || out.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("radii must be positive");
        }
        out.shrink_to_fit();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeissCfg {
    pub x0: Point,
    /// Move `x0` to the nearest extracted free boundary point.
    pub snap_to_fb: bool,
    pub radii: RadiiCfg,
    pub c_env: f64,
    /// Defaults to `5 h / r_min`.
    pub tol_disc: Option<f64>,
}

impl Default for WeissCfg {
    fn default() -> Self {
        Self {
            x0: [0.0, 0.0],
            snap_to_fb: false,
            radii: RadiiCfg::default(),
            c_env: 0.0,
            tol_disc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupCfg {
    pub points: Vec<Point>,
    pub snap_to_fb: bool,
    pub radii: Vec<f64>,
    pub n_nu: usize,
    pub dist_threshold: Option<f64>,
    pub gap_threshold: Option<f64>,
}

impl Default for BlowupCfg {
    fn default() -> Self {
        Self {
            points: vec![[0.0, 0.0]],
            snap_to_fb: true,
            radii: vec![0.5, 0.25, 0.125],
            n_nu: 360,
            dist_threshold: None,
            gap_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringCfg {
    pub x0: Point,
    pub mu: f64,
    /// `[x, y, r]` per ball.
    #[serde(default)]
    pub balls: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbCfg {
    /// Defaults to `10⁻³ sup u`.
    pub tau: Option<f64>,
    /// Defaults to `2h`.
    pub eps_min: Option<f64>,
    pub eps_max: f64,
    pub center: Point,
    pub radius: f64,
    pub covering: Option<CoveringCfg>,
}

impl Default for FbCfg {
    fn default() -> Self {
        Self {
            tau: None,
            eps_min: None,
            eps_max: 0.125,
            center: [0.0, 0.0],
            radius: 1.0,
            covering: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsCfg {
    /// Defaults to `runs/<name>`, or `$WEISSLAB_OUT/<name>` when set.
    pub dir: Option<PathBuf>,
    pub plots: bool,
}

impl Default for OutputsCfg {
    fn default() -> Self {
        Self { dir: None, plots: true }
    }
}

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "WEISSLAB_OUT";

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, reason: String| Err(CliError::Config(format!("{field}: {reason}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", format!("{:?} must be a plain non-empty name", self.name));
        }
        self.grid()?;
        self.spec.build()?;
        self.weiss.radii.resolve()?;
        if !(self.solve.radius > 0.0) {
            return bad("solve.radius", "must be positive".into());
        }
        if !(self.solve.tol_grad > 0.0) {
            return bad("solve.tol_grad", "must be positive".into());
        }
        if !(self.weiss.c_env >= 0.0 && self.weiss.c_env.is_finite()) {
            return bad("weiss.c_env", format!("{} must be nonnegative", self.weiss.c_env));
        }
        if let Some(t) = self.weiss.tol_disc {
            if !(t >= 0.0) {
                return bad("weiss.tol_disc", format!("{t} must be nonnegative"));
            }
        }
        if self.blowup.radii.len() < 3 || self.blowup.radii.iter().any(|r| !(*r > 0.0)) {
            return bad("blowup.radii", "need at least 3 positive radii".into());
        }
        if self.blowup.n_nu == 0 {
            return bad("blowup.n_nu", "must be positive".into());
        }
        if let Some(t) = self.fb.tau {
            if !(t > 0.0) {
                return bad("fb.tau", format!("{t} must be positive"));
            }
        }
        if !(self.fb.eps_max > 0.0) || self.fb.eps_min.is_some_and(|e| !(e > 0.0 && e <= self.fb.eps_max)) {
            return bad("fb.eps_min", "need 0 < eps_min <= eps_max".into());
        }
        if !(self.fb.radius > 0.0) {
            return bad("fb.radius", "must be positive".into());
        }
        if let DataCfg::Radial { radius, .. } = self.data {
            if !(radius >= 0.0) {
                return bad("data.radius", "must be nonnegative".into());
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        let err = |e: weisslab_core::Error| CliError::Config(format!("grid: {e}"));
        match (g.n, g.h) {
            (Some(n), None) => Grid::new(n, g.half_width).map_err(err),
            (None, Some(h)) => Grid::with_spacing(g.half_width, h).map_err(err),
            _ => Err(CliError::Config("grid: set exactly one of grid.n and grid.h".into())),
        }
    }

    pub fn has_stage(&self, s: StageName) -> bool {
        self.stages.contains(&s)
    }

    /// Output directory: `outputs.dir`, else `$WEISSLAB_OUT/<name>`, else `runs/<name>`.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(d) = &self.outputs.dir {
            return d.clone();
        }
        match std::env::var_os(OUT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.name),
            None => PathBuf::from("runs").join(&self.name),
        }
    }

    /// Boundary data sampled on the configured grid.
    pub fn boundary_data(&self, spec: &EnergySpec) -> Result<GridFunction, weisslab_core::Error> {
        let grid = self.grid().map_err(|e| weisslab_core::Error::invalid("grid", e.to_string()))?;
        let one_phase = spec.variant().is_one_phase();
        let f = match &self.data {
            DataCfg::Cone { x0, nu } => {
                let p = ConeParams::from_spec(spec, *x0, *nu)?;
                GridFunction::from_fn(grid, |x| p.eval(x))
            }
            DataCfg::DoubleCone { x0, nu } => {
                let p = ConeParams::from_spec(spec, *x0, *nu)?;
                let q = p.with_nu([-p.nu[0], -p.nu[1]])?;
                GridFunction::from_fn(grid, |x| p.eval(x) + q.eval(x))
            }
            DataCfg::Radial { center, radius, slope } => GridFunction::from_fn(grid, |x| slope * ((x[0] - center[0]).hypot(x[1] - center[1]) - radius).max(0.0)),
            DataCfg::File { path } => return GridFunction::load(path),
        };
        if one_phase {
            f.into_nonnegative()
        } else {
            Ok(f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn dotted_keys_parse() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            name = "holder"
            stages = ["minimize", "weiss"]
            grid.h = 0.0078125
            spec.variant = "ap1"
            spec.delta = { kind = "radial_holder", base = 1.125, amp = -0.3, alpha = 0.5 }
            spec.gamma = 0.6666666666666666
            spec.A = { kind = "radial_holder", amp = 0.3, alpha = 0.5, phase = 1.0 }
            weiss.radii = { policy = "dyadic", r_min = 0.125, r_max = 0.5 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.grid().unwrap().h(), 0.0078125);
        assert_eq!(cfg.weiss.radii.resolve().unwrap(), vec![0.125, 0.25, 0.5]);
        let spec = cfg.spec.build().unwrap();
        assert!(!spec.is_constant());
    }

    #[test]
    fn invalid_gamma_names_the_field() {
        let e = ScenarioConfig::from_toml("spec.gamma = 1.2").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("spec.gamma"), "{e}");
    }

    #[test]
    fn rejections() {
        for text in [
            "spec.q = 1.0",
            "grid.n = 65\ngrid.h = 0.01",
            "unknown = 1",
            "weiss.radii = { policy = \"geometric\", r_min = 0.5, r_max = 0.1 }",
            "blowup.radii = [0.5, 0.25]",
            "spec.A = { kind = \"constant\", xx = 1.0, xy = 2.0, yy = 1.0 }",
            "name = \"a/b\"",
        ] {
            let e = ScenarioConfig::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn boundary_data_kinds() {
        let mut cfg = ScenarioConfig::default();
        let spec = cfg.spec.build().unwrap();
        let u = cfg.boundary_data(&spec).unwrap();
        let g = *u.grid();
        let k = g.idx(g.n() - 1, g.n() / 2);
        assert!((u.values()[k] - 1.125f64.powf(1.5)).abs() < 1e-12);
        cfg.data = DataCfg::DoubleCone { x0: [0.0, 0.0], nu: [1.0, 0.0] };
        let w = cfg.boundary_data(&spec).unwrap();
        assert!((w.values()[g.idx(0, g.n() / 2)] - 1.125f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn out_dir_policy() {
        let mut cfg = ScenarioConfig::default();
        cfg.outputs.dir = Some("x/y".into());
        assert_eq!(cfg.out_dir(), PathBuf::from("x/y"));
    }
}
