use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weisslab_cli::calibrate::{calibrate, load_profiles};
use weisslab_cli::config::{FbCfg, RadiiCfg, StageName};
use weisslab_cli::pipeline::{fb_analysis, snap_to_fb, weiss_analysis, write_profile};
use weisslab_cli::{run_scenario, CliError, ScenarioConfig, Stage};
use weisslab_core::blowup::write_reports_csv;
use weisslab_core::{classify, ClassifyOptions, GridFunction, Point};

#[derive(Parser)]
#[command(name = "weisslab", version, about = "Free boundary energies, Weiss profiles and blow-ups on planar grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage of a scenario file.
    Scenario {
        config: PathBuf,
        /// Output directory (overrides the config and WEISSLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize the energy for a scenario's spec and boundary data.
    Minimize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weiss profile of a saved grid function.
    Weiss {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
        x0: Point,
        /// `geometric`, `dyadic`, or a comma-separated list.
        #[arg(long, default_value = "geometric")]
        radii: String,
        #[arg(long)]
        c_env: Option<f64>,
        #[arg(long)]
        tol_disc: Option<f64>,
        #[arg(long, default_value = "profile.csv")]
        out: PathBuf,
    },
    /// Blow-up classification at one or more points.
    Blowup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "x0", value_parser = parse_point, required = true, allow_hyphen_values = true)]
        points: Vec<Point>,
        /// Use the points as given instead of the nearest free boundary point.
        #[arg(long)]
        no_snap: bool,
        #[arg(long, default_value = "blowup.csv")]
        out: PathBuf,
    },
    /// Free boundary extraction and box counting.
    Fbmeasure {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        eps_min: Option<f64>,
        #[arg(long, default_value_t = 0.125)]
        eps_max: f64,
        #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
        center: Point,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        radius: f64,
        #[arg(long, default_value = "boxcount.csv")]
        out: PathBuf,
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// Fit the smallest envelope constant on saved profiles.
    CalibrateEnv {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        tol_disc: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([a.parse().map_err(|_| format!("bad number {a}"))?, b.parse().map_err(|_| format!("bad number {b}"))?]),
        _ => Err(format!("expected x,y but got {s}")),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ScenarioConfig, CliError> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn load_input(path: &std::path::Path, stage: Stage) -> Result<GridFunction, CliError> {
    GridFunction::load(path).map_err(CliError::stage(stage))
}

fn resolve_radii(spec: &str, cfg: &ScenarioConfig) -> Result<Vec<f64>, CliError> {
    let (lo, hi) = match cfg.weiss.radii {
        RadiiCfg::Geometric { r_min, r_max } | RadiiCfg::Dyadic { r_min, r_max } => (r_min, r_max),
        RadiiCfg::List { .. } => (0.125, 0.5),
    };
    let policy = match spec {
        "geometric" => RadiiCfg::Geometric { r_min: lo, r_max: hi },
        "dyadic" => RadiiCfg::Dyadic { r_min: lo, r_max: hi },
        list => RadiiCfg::List {
            values: list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--radii: bad value {v}"))))
                .collect::<Result<_, _>>()?,
        },
    };
    policy.resolve()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Scenario { config, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if out.is_some() {
                cfg.outputs.dir = out;
            }
            let o = run_scenario(&cfg)?;
            println!("wrote {}", o.dir.display());
        }
        Cmd::Minimize { config, out } => {
            let mut cfg = load_config(&config)?;
            cfg.stages = vec![StageName::Minimize];
            if out.is_some() {
                cfg.outputs.dir = out;
            }
            let o = run_scenario(&cfg)?;
            if let Some(r) = o.solve {
                println!("iterations {} energy {} converged {}", r.iterations, r.energy, r.converged);
            }
            println!("wrote {}", o.dir.display());
        }
        Cmd::Weiss {
            input,
            config,
            x0,
            radii,
            c_env,
            tol_disc,
            out,
        } => {
            let cfg = load_config(&config)?;
            let spec = cfg.spec.build()?;
            let u = load_input(&input, Stage::Weiss)?;
            let radii = resolve_radii(&radii, &cfg)?;
            let err = CliError::stage(Stage::Weiss);
            let meta = weiss_analysis(&u, &spec, x0, &radii, c_env.unwrap_or(cfg.weiss.c_env), tol_disc.or(cfg.weiss.tol_disc)).map_err(&err)?;
            write_profile(&meta, &out).map_err(&err)?;
            print!("{}", meta.violations);
            println!("wrote {}", out.display());
        }
        Cmd::Blowup {
            input,
            config,
            points,
            no_snap,
            out,
        } => {
            let cfg = load_config(&config)?;
            let spec = cfg.spec.build()?;
            let u = load_input(&input, Stage::Blowup)?;
            let err = CliError::stage(Stage::Blowup);
            let b = &cfg.blowup;
            let opts = ClassifyOptions {
                n_nu: b.n_nu,
                dist_threshold: b.dist_threshold,
                gap_threshold: b.gap_threshold,
                c_env: cfg.weiss.c_env,
                ..ClassifyOptions::default()
            };
            let mut reports = Vec::new();
            for p in points {
                let x0 = if no_snap { p } else { snap_to_fb(&u, p).map_err(&err)? };
                let r = classify(&u, &spec, x0, &b.radii, &opts).map_err(&err)?;
                println!("({}, {}): {}", x0[0], x0[1], r.classification);
                reports.push(r);
            }
            let f = std::fs::File::create(&out).map_err(|e| err(e.into()))?;
            write_reports_csv(&reports, f).map_err(&err)?;
            println!("wrote {}", out.display());
        }
        Cmd::Fbmeasure {
            input,
            tau,
            eps_min,
            eps_max,
            center,
            radius,
            out,
            segments,
        } => {
            let u = load_input(&input, Stage::Fbgeom)?;
            let err = CliError::stage(Stage::Fbgeom);
            let cfg = FbCfg {
                tau,
                eps_min,
                eps_max,
                center,
                radius,
                covering: None,
            };
            let (fb, summary) = fb_analysis(&u, &cfg).map_err(&err)?;
            summary
                .boxcount
                .write_csv(std::fs::File::create(&out).map_err(|e| err(e.into()))?)
                .map_err(&err)?;
            if let Some(p) = segments {
                fb.write_csv(std::fs::File::create(&p).map_err(|e| err(e.into()))?).map_err(&err)?;
            }
            println!("length {} over {} segments", summary.length, summary.segments);
            for k in 0..summary.boxcount.epsilons.len() {
                println!("eps {} N {} product {}", summary.boxcount.epsilons[k], summary.boxcount.counts[k], summary.boxcount.products[k]);
            }
        }
        Cmd::CalibrateEnv { train, heldout, tol_disc, out } => {
            let err = CliError::stage(Stage::Weiss);
            let train = load_profiles(&train).map_err(&err)?;
            let held = match heldout {
                Some(d) => load_profiles(&d).map_err(&err)?,
                None => Vec::new(),
            };
            let cal = calibrate(&train, &held, tol_disc).map_err(&err)?;
            println!("C_env = {}", cal.c_env);
            for h in &cal.held_out {
                println!("{}: {} violations (worst margin {}, tol_disc {})", h.name, h.violations, h.worst_margin, h.tol_disc);
            }
            if let Some(p) = out {
                let text = serde_json::to_string_pretty(&cal).map_err(|e| err(e.into()))? + "\n";
                std::fs::write(&p, text).map_err(|e| err(e.into()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
