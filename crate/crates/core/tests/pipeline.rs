use std::f64::consts::PI;

use weisslab_core::blowup::{cone_function, ConeParams};
use weisslab_core::fbgeom::{dyadic_epsilons, extract_fb_default};
use weisslab_core::weiss::{almost_monotonicity_check, default_tol_disc, geometric_radii, DefectEnvelope};
use weisslab_core::{box_count, energy, minimize, weiss_profile, EnergySpec, Grid, GridFunction, Region, SolveConfig};

fn cone_data(g: Grid) -> GridFunction {
    let p = ConeParams::alt_phillips([0.0, 0.0], 9.0 / 8.0, 2.0 / 3.0, [1.0, 0.0]).unwrap();
    cone_function(&p, g).into_nonnegative().unwrap()
}

#[test]
fn coarse_minimizer_end_to_end() {
    let g = Grid::with_spacing(1.125, 1.0 / 32.0).unwrap();
    let spec = EnergySpec::ap1_constant(9.0 / 8.0, 2.0 / 3.0).unwrap();
    let data = cone_data(g);
    let (u, rep) = minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
    assert!(u.values().iter().all(|&v| v >= 0.0));
    assert!(rep.energy.is_finite());

    let err = u.sup_diff_in_ball(&data, [0.0, 0.0], 1.0);
    assert!(err <= 4.0 * g.h(), "{err}");

    // outside the solve ball the data is untouched
    for k in 0..g.len() {
        let x = g.node(k % g.n(), k / g.n());
        if x[0].hypot(x[1]) > 1.0 + 1e-9 {
            assert_eq!(u.values()[k], data.values()[k]);
        }
    }

    let radii = geometric_radii(0.25, 0.5);
    let env = DefectEnvelope::from_spec(&spec, 0.0).unwrap();
    let p = weiss_profile(&u, &spec, [0.0, 0.0], &radii, &env).unwrap();
    assert!(p.a_vals.iter().all(|a| (a - 0.5).abs() < 0.1), "{:?}", p.a_vals);
    assert!(almost_monotonicity_check(&p, default_tol_disc(g.h(), radii[0])).is_clean());

    let fb = extract_fb_default(&u).unwrap();
    let l = fb.length_in_ball([0.0, 0.0], 1.0);
    assert!((l - 2.0).abs() < 0.2, "{l}");
    let bc = box_count(&fb, [0.0, 0.0], 1.0, &dyadic_epsilons(2.0 * g.h(), 0.125)).unwrap();
    assert!(bc.products.iter().all(|&q| q >= l / 4.0 && q <= 4.0 * l), "{:?}", bc.products);
}

#[test]
fn ac_slope_one_data_is_improved() {
    let g = Grid::with_spacing(1.125, 1.0 / 32.0).unwrap();
    let spec = EnergySpec::ac1_constant(1.0).unwrap();
    let data = GridFunction::from_fn(g, |x| x[0].max(0.0)).into_nonnegative().unwrap();
    let (u, _) = minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
    let ball = Region::ball([0.0, 0.0], 1.0);
    let e_u = energy(&u, &spec, ball).unwrap().total;
    let e_d = energy(&data, &spec, ball).unwrap().total;
    assert!(e_u <= e_d, "{e_u} > {e_d}");
}

#[test]
fn saved_functions_round_trip() {
    let g = Grid::with_spacing(1.0, 1.0 / 16.0).unwrap();
    let u = GridFunction::from_fn(g, |x| (PI * x[0]).sin() * x[1].exp() / 3.0);
    let dir = tempfile::tempdir().unwrap();
    u.save(dir.path(), "u").unwrap();
    let v = GridFunction::load(&dir.path().join("u.csv")).unwrap();
    assert_eq!(v.grid(), u.grid());
    assert_eq!(v.values(), u.values());
}

#[test]
fn ac_half_plane_weiss_energy() {
    let g = Grid::with_spacing(1.125, 1.0 / 64.0).unwrap();
    let spec = EnergySpec::ac1_constant(2.0).unwrap();
    let p = ConeParams::alt_caffarelli([0.0, 0.0], 2.0, [0.0, 1.0]).unwrap();
    assert!((p.theta - 2.0).abs() < 1e-15);
    let u = cone_function(&p, g);
    let env = DefectEnvelope::from_spec(&spec, 0.0).unwrap();
    let prof = weiss_profile(&u, &spec, [0.0, 0.0], &[0.25, 0.5], &env).unwrap();
    for a in prof.a_vals {
        assert!((a - PI).abs() < 2e-2, "{a}");
    }
}
