//! Scenario execution: minimize → weiss → blowup → fbgeom, with CSV,
//! JSON, summary and plot outputs.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use weisslab_core::blowup::{cone_weiss_energy, normalized_weiss_profile, write_reports_csv, ConeParams};
use weisslab_core::discretization::format_value;
use weisslab_core::energy::EnergyBreakdown;
use weisslab_core::fbgeom::{default_tau, dyadic_epsilons, normalize_sup, CoveringReport};
use weisslab_core::minimizer::CompetitorReport;
use weisslab_core::weiss::{almost_monotonicity_check, default_tol_disc, limit_weiss, LimitInterval, ViolationReport};
use weisslab_core::{
    box_count, classify, competitor_test, covering_check, energy, extract_fb, minimize, BlowupReport, BoxCount, ClassifyOptions, EnergySpec, Error, FreeBoundary,
    GridFunction, Point, Region, SolveConfig, SolveReport, WeissProfile,
};

use crate::config::{ScenarioConfig, StageName};
use crate::error::{CliError, Stage};
use crate::plot;

/// Profile plus its check results; written as `profile.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub profile: WeissProfile,
    pub tol_disc: f64,
    pub violations: ViolationReport,
    /// `None` when fewer than 3 dyadic radii are covered or the envelope is not Dini.
    pub limit: Option<LimitInterval>,
    /// Weiss energy of the trivial cone at `x0`.
    pub v_x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbSummary {
    pub tau: f64,
    /// Divisor applied so that `sup |u| ≤ 1` on `B_{4/3}`.
    pub sup_scale: f64,
    pub segments: usize,
    /// Marching-squares length inside the measurement ball.
    pub length: f64,
    pub boxcount: BoxCount,
    pub covering: Option<CoveringReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub u: GridFunction,
    pub solve: Option<SolveReport>,
    pub energy: Option<EnergyBreakdown>,
    pub competitors: Vec<CompetitorReport>,
    pub profile: Option<ProfileMeta>,
    pub blowups: Vec<BlowupReport>,
    pub fb: Option<FbSummary>,
    pub plots: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Free boundary of `u` at `tau` (default `10⁻³ sup u`); empty for `u ≤ 0`.
pub fn free_boundary(u: &GridFunction, tau: Option<f64>) -> Result<FreeBoundary, Error> {
    let tau = tau.unwrap_or_else(|| default_tau(u));
    if tau > 0.0 && tau.is_finite() {
        extract_fb(u, tau)
    } else {
        Ok(FreeBoundary { segments: Vec::new(), tau })
    }
}

/// Nearest point of `∂{u > 10⁻⁸ sup u}` to `p`.
pub fn snap_to_fb(u: &GridFunction, p: Point) -> Result<Point, Error> {
    free_boundary(u, Some(1e-8 * u.sup_abs()))?
        .nearest_point(p)
        .ok_or_else(|| Error::Precondition("cannot snap to the free boundary: none was extracted".into()))
}

/// Weiss profile at `x0` (normalized when `A(x0) ≠ I`) with its checks.
pub fn weiss_analysis(u: &GridFunction, spec: &EnergySpec, x0: Point, radii: &[f64], c_env: f64, tol_disc: Option<f64>) -> Result<ProfileMeta, Error> {
    let profile = normalized_weiss_profile(u, spec, x0, radii, c_env)?;
    let tol_disc = tol_disc.unwrap_or_else(|| default_tol_disc(u.grid().h(), radii[0]));
    let violations = almost_monotonicity_check(&profile, tol_disc);
    let limit = match limit_weiss(&profile) {
        Ok(l) => Some(l),
        Err(Error::NonDini | Error::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    let v_x0 = cone_weiss_energy(&ConeParams::from_spec(spec, x0, [1.0, 0.0])?, &spec.potential_at(x0)?)?;
    Ok(ProfileMeta {
        profile,
        tol_disc,
        violations,
        limit,
        v_x0,
    })
}

pub fn write_profile(meta: &ProfileMeta, csv_path: &Path) -> Result<(), Error> {
    meta.profile.write_csv(create(csv_path)?)?;
    std::fs::write(csv_path.with_extension("json"), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Box counting and covering on the sup-normalized function.
pub fn fb_analysis(u: &GridFunction, cfg: &crate::config::FbCfg) -> Result<(FreeBoundary, FbSummary), Error> {
    let (un, sup_scale) = normalize_sup(u, cfg.center)?;
    let fb = free_boundary(&un, cfg.tau)?;
    let h = u.grid().h();
    let eps = dyadic_epsilons(cfg.eps_min.unwrap_or(2.0 * h), cfg.eps_max);
    let boxcount = box_count(&fb, cfg.center, cfg.radius, &eps)?;
    let covering = match &cfg.covering {
        Some(c) => {
            let balls: Vec<(Point, f64)> = c.balls.iter().map(|b| ([b[0], b[1]], b[2])).collect();
            Some(covering_check(&fb, c.x0, c.mu, &balls)?)
        }
        None => None,
    };
    let summary = FbSummary {
        tau: fb.tau,
        sup_scale,
        segments: fb.segments.len(),
        length: fb.length_in_ball(cfg.center, cfg.radius),
        boxcount,
        covering,
    };
    Ok((fb, summary))
}

fn random_competitors(u: &GridFunction, spec: &EnergySpec, x0: Point, r: f64, count: usize, seed: u64) -> Result<Vec<(Point, f64, f64, CompetitorReport)>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = u.sup_abs().max(1e-3);
    let one_phase = spec.variant().is_one_phase();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (a, s): (f64, f64) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..0.5));
        let c = [x0[0] + s * r * a.cos(), x0[1] + s * r * a.sin()];
        let rho = rng.gen_range(0.05..0.2) * r;
        let amp = rng.gen_range(-0.1..0.1) * scale;
        let mut v = u.clone();
        let g = *u.grid();
        for (i, j) in g.nodes_in_ball(c, rho) {
            let p = g.node(i, j);
            let t = ((p[0] - c[0]).hypot(p[1] - c[1]) / rho).powi(2);
            let k = g.idx(i, j);
            let w = v.values()[k] + amp * (1.0 - t).powi(2);
            v.values_mut()[k] = if one_phase { w.max(0.0) } else { w };
        }
        out.push((c, rho, amp, competitor_test(u, spec, x0, r, &v)?));
    }
    Ok(out)
}

/// Runs the configured stages and writes all artifacts to `cfg.out_dir()`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let spec = cfg.spec.build()?;
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("outputs.dir {}: {e}", dir.display())))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| CliError::Config(format!("outputs.dir {}: {e}", dir.display())))?;

    let solve_err = CliError::stage(Stage::Solve);
    let data = cfg.boundary_data(&spec).map_err(&solve_err)?;
    let mut out = RunOutcome {
        dir: dir.clone(),
        u: data.clone(),
        solve: None,
        energy: None,
        competitors: Vec::new(),
        profile: None,
        blowups: Vec::new(),
        fb: None,
        plots: Vec::new(),
    };

    if cfg.has_stage(StageName::Minimize) {
        let s = &cfg.solve;
        let solve_cfg = SolveConfig {
            max_iters: s.max_iters,
            tol_grad: s.tol_grad,
            ..SolveConfig::default()
        };
        let (u, report) = minimize(&spec, &data, s.center, s.radius, &solve_cfg).map_err(&solve_err)?;
        let e = energy(&u, &spec, Region::ball(s.center, s.radius)).map_err(&solve_err)?;
        (|| -> Result<(), Error> {
            u.save(&dir, "u")?;
            std::fs::write(dir.join("solve.csv"), format!("{}\n{}\n", SolveReport::csv_header(), report.csv_row()))?;
            let mut w = csv::Writer::from_writer(create(&dir.join("energy.csv"))?);
            w.write_record(["stage", "step", "energy"])?;
            for (k, stage) in report.trace.iter().enumerate() {
                for (step, v) in stage.iter().enumerate() {
                    w.write_record([k.to_string(), step.to_string(), format_value(*v)])?;
                }
            }
            w.flush()?;
            if s.competitors > 0 {
                let comps = random_competitors(&u, &spec, s.center, s.radius, s.competitors, cfg.seed)?;
                let mut w = csv::Writer::from_writer(create(&dir.join("competitors.csv"))?);
                w.write_record(["k", "cx", "cy", "rho", "amp", "energy_u", "energy_v", "slack"])?;
                for (k, (c, rho, amp, rep)) in comps.iter().enumerate() {
                    w.write_record([
                        k.to_string(),
                        format_value(c[0]),
                        format_value(c[1]),
                        format_value(*rho),
                        format_value(*amp),
                        format_value(rep.energy_u),
                        format_value(rep.energy_v),
                        format_value(rep.slack),
                    ])?;
                }
                w.flush()?;
                out.competitors = comps.into_iter().map(|c| c.3).collect();
            }
            Ok(())
        })()
        .map_err(&solve_err)?;
        out.u = u;
        out.solve = Some(report);
        out.energy = Some(e);
    } else {
        data.save(&dir, "u").map_err(&solve_err)?;
    }
    let u = out.u.clone();

    if cfg.has_stage(StageName::Weiss) {
        let w = &cfg.weiss;
        let err = CliError::stage(Stage::Weiss);
        let x0 = if w.snap_to_fb {
            snap_to_fb(&u, w.x0).map_err(&err)?
        } else {
            w.x0
        };
        let radii = w.radii.resolve()?;
        let meta = weiss_analysis(&u, &spec, x0, &radii, w.c_env, w.tol_disc).map_err(&err)?;
        write_profile(&meta, &dir.join("profile.csv")).map_err(&err)?;
        out.profile = Some(meta);
    }

    if cfg.has_stage(StageName::Blowup) {
        let b = &cfg.blowup;
        let err = CliError::stage(Stage::Blowup);
        let opts = ClassifyOptions {
            n_nu: b.n_nu,
            dist_threshold: b.dist_threshold,
            gap_threshold: b.gap_threshold,
            c_env: cfg.weiss.c_env,
            ..ClassifyOptions::default()
        };
        for &p in &b.points {
            let x0 = if b.snap_to_fb { snap_to_fb(&u, p).map_err(&err)? } else { p };
            out.blowups.push(classify(&u, &spec, x0, &b.radii, &opts).map_err(&err)?);
        }
        write_reports_csv(&out.blowups, create(&dir.join("blowup.csv")).map_err(&err)?).map_err(&err)?;
    }

    if cfg.has_stage(StageName::Fbgeom) {
        let err = CliError::stage(Stage::Fbgeom);
        let (fb, summary) = fb_analysis(&u, &cfg.fb).map_err(&err)?;
        (|| -> Result<(), Error> {
            fb.write_csv(create(&dir.join("segments.csv"))?)?;
            summary.boxcount.write_csv(create(&dir.join("boxcount.csv"))?)?;
            if let Some(c) = &summary.covering {
                let cc = cfg.fb.covering.as_ref().expect("covering configured");
                std::fs::write(
                    dir.join("covering.csv"),
                    format!(
                        "mu,ball_sum,residual,ratio\n{},{},{},{}\n",
                        format_value(cc.mu),
                        format_value(c.ball_sum),
                        format_value(c.residual),
                        format_value(c.ratio)
                    ),
                )?;
            }
            Ok(())
        })()
        .map_err(&err)?;
        out.fb = Some(summary);
    }

    std::fs::write(dir.join("summary.md"), summary_markdown(cfg, &out)).map_err(|e| CliError::Stage {
        stage: Stage::Fbgeom,
        source: e.into(),
    })?;
    if cfg.outputs.plots {
        out.plots = plot::render_dir(&dir).map_err(CliError::stage(Stage::Fbgeom))?;
    }
    Ok(out)
}

fn summary_markdown(cfg: &ScenarioConfig, out: &RunOutcome) -> String {
    let f = |v: f64| format!("{v:.6}");
    let mut s = String::new();
    let g = out.u.grid();
    let _ = writeln!(s, "# Scenario `{}`\n", cfg.name);
    let stages: Vec<&str> = cfg
        .stages
        .iter()
        .map(|st| match st {
            StageName::Minimize => "minimize",
            StageName::Weiss => "weiss",
            StageName::Blowup => "blowup",
            StageName::Fbgeom => "fbgeom",
        })
        .collect();
    let _ = writeln!(s, "- variant: {}", cfg.spec.variant.as_str());
    let _ = writeln!(s, "- grid: n = {}, h = {}, half width = {}", g.n(), g.h(), g.half_width());
    let _ = writeln!(s, "- stages: {}", stages.join(", "));
    let _ = writeln!(s, "- seed: {}\n", cfg.seed);
    if let (Some(r), Some(e)) = (&out.solve, &out.energy) {
        let _ = writeln!(s, "## Minimize\n");
        let _ = writeln!(s, "- iterations: {}, converged: {}", r.iterations, r.converged);
        let _ = writeln!(s, "- energy: dirichlet {}, potential {}, total {}", f(e.dirichlet), f(e.potential), f(e.total));
        if !out.competitors.is_empty() {
            let worst = out.competitors.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
            let _ = writeln!(s, "- random competitors: {}, smallest slack {}", out.competitors.len(), f(worst));
        }
        s.push('\n');
    }
    if let Some(m) = &out.profile {
        let p = &m.profile;
        let _ = writeln!(s, "## Weiss profile\n");
        let _ = writeln!(s, "- x0 = ({}, {}), beta = {}, C_env = {}", f(p.x0[0]), f(p.x0[1]), f(p.beta), p.envelope.c_env);
        let _ = writeln!(s, "- radii: {} from {} to {}", p.radii.len(), f(p.radii[0]), f(p.radii[p.radii.len() - 1]));
        let lo = p.a_vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.a_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(s, "- A(r) range: [{}, {}]; cone value V(x0) = {}", f(lo), f(hi), f(m.v_x0));
        let _ = writeln!(
            s,
            "- monotonicity: {} violations over {} pairs at tol_disc = {} (worst margin {})",
            m.violations.violations.len(),
            m.violations.pairs_checked,
            f(m.tol_disc),
            f(m.violations.worst_margin)
        );
        match m.limit {
            Some(l) => {
                let _ = writeln!(s, "- limit bracket: [{}, {}]", f(l.lo), f(l.hi));
            }
            None => {
                let _ = writeln!(s, "- limit bracket: not available");
            }
        }
        s.push('\n');
    }
    if !out.blowups.is_empty() {
        let _ = writeln!(s, "## Blow-ups\n");
        let _ = writeln!(s, "| x0 | classification | final cone distance | threshold |");
        let _ = writeln!(s, "|---|---|---|---|");
        for b in &out.blowups {
            let _ = writeln!(
                s,
                "| ({}, {}) | {} | {} | {} |",
                f(b.x0[0]),
                f(b.x0[1]),
                b.classification,
                f(b.cone_dists[b.cone_dists.len() - 1]),
                f(b.dist_threshold)
            );
        }
        s.push('\n');
    }
    if let Some(fb) = &out.fb {
        let _ = writeln!(s, "## Free boundary\n");
        let _ = writeln!(s, "- tau = {:e}, sup scale = {}, segments = {}", fb.tau, f(fb.sup_scale), fb.segments);
        let _ = writeln!(s, "- marching-squares length in the ball: {}", f(fb.length));
        for k in 0..fb.boxcount.epsilons.len() {
            let _ = writeln!(
                s,
                "- eps = {}: N = {}, N eps = {}",
                fb.boxcount.epsilons[k],
                fb.boxcount.counts[k],
                f(fb.boxcount.products[k])
            );
        }
        if let Some(c) = &fb.covering {
            let _ = writeln!(s, "- covering residual {} (ratio {})", f(c.residual), f(c.ratio));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "## Files\n");
    let _ = writeln!(s, "| file | columns |");
    let _ = writeln!(s, "|---|---|");
    let files: [(&str, &str); 11] = [
        ("config.toml", "resolved configuration"),
        ("u.csv", "i,j,x,y,u (grid in u.grid.json)"),
        ("solve.csv", SolveReport::csv_header()),
        ("energy.csv", "stage,step,energy"),
        ("competitors.csv", "k,cx,cy,rho,amp,energy_u,energy_v,slack"),
        ("profile.csv", WeissProfile::csv_header()),
        ("profile.json", "profile, tol_disc, violations, limit, v_x0"),
        ("blowup.csv", BlowupReport::csv_header()),
        ("segments.csv", FreeBoundary::csv_header()),
        ("boxcount.csv", BoxCount::csv_header()),
        ("covering.csv", "mu,ball_sum,residual,ratio"),
    ];
    for (name, cols) in files {
        if out.dir.join(name).exists() {
            let _ = writeln!(s, "| {name} | `{cols}` |");
        }
    }
    s
}
