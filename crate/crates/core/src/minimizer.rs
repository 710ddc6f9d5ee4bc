//! Local minimizers of the discrete energies on balls with Dirichlet data.

use serde::{Deserialize, Serialize};

use crate::coefficients::{EnergySpec, Point};
use crate::discretization::{Grid, GridFunction};
use crate::energy::{energy, DiscreteEnergy, Region, RegularizationParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Armijo {
    pub c1: f64,
    pub backtrack: f64,
    pub step0: f64,
}

impl Default for Armijo {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            backtrack: 0.5,
            step0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Iteration budget shared by all continuation stages.
    pub max_iters: usize,
    /// Stop when the sup norm of the projected gradient, divided by `h²`, is below this.
    pub tol_grad: f64,
    pub armijo: Armijo,
    /// Regularization stages, strictly decreasing. Empty means multiples of
    /// [`RegularizationParams::defaults`].
    pub continuation: Vec<RegularizationParams>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tol_grad: 1e-6,
            armijo: Armijo::default(),
            continuation: Vec::new(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_grad > 0.0) {
            return Err(Error::invalid("tol_grad", "must be positive"));
        }
        let a = &self.armijo;
        if !(a.backtrack > 0.0 && a.backtrack < 1.0) {
            return Err(Error::invalid("armijo.backtrack", format!("{} not in (0, 1)", a.backtrack)));
        }
        if !(a.c1 > 0.0 && a.c1 < 1.0) {
            return Err(Error::invalid("armijo.c1", format!("{} not in (0, 1)", a.c1)));
        }
        if !(a.step0 > 0.0) {
            return Err(Error::invalid("armijo.step0", "must be positive"));
        }
        for w in self.continuation.windows(2) {
            if !(w[1].eps_pot < w[0].eps_pot && w[1].eps_ind < w[0].eps_ind) {
                return Err(Error::invalid("continuation", "stages must be strictly decreasing"));
            }
        }
        Ok(())
    }

    /// Alt–Phillips: factors `[4, 2, 1]`. Alt–Caffarelli: halving from the
    /// data scale, since the ramp indicator exerts no pull where `u > eps_ind`.
    fn stages(&self, h: f64, gamma0: Option<f64>, data_scale: f64) -> Vec<RegularizationParams> {
        if !self.continuation.is_empty() {
            return self.continuation.clone();
        }
        let base = RegularizationParams::defaults(h, gamma0);
        let top = if gamma0.is_some() {
            2
        } else {
            (data_scale / base.eps_ind).log2().ceil().clamp(2.0, 30.0) as i32
        };
        (0..=top)
            .rev()
            .map(|k| {
                let f = 2f64.powi(k);
                RegularizationParams {
                    eps_pot: f * base.eps_pot,
                    eps_ind: f * base.eps_ind,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub energy: f64,
    /// Discrete energy after every accepted step, per stage.
    pub trace: Vec<Vec<f64>>,
    pub converged: bool,
}

impl SolveReport {
    pub fn csv_header() -> &'static str {
        "iters,energy,converged"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:?},{}", self.iterations, self.energy, self.converged)
    }
}

/// Iterations between projected-gradient evaluations at the iterate.
const CHECK_EVERY: usize = 8;

/// Free nodes of a ball problem: strictly inside the ball and not masked.
fn free_nodes(u: &GridFunction, x0: Point, r: f64) -> Result<Vec<bool>> {
    let g = u.grid();
    g.check_ball(x0, r)?;
    let mut free = vec![false; g.len()];
    for (i, j) in g.nodes_in_ball(x0, r) {
        let k = g.idx(i, j);
        free[k] = !u.mask()[k];
    }
    Ok(free)
}

fn freeze_outside(mut u: GridFunction, free: &[bool]) -> GridFunction {
    for (m, &f) in u.mask_mut().iter_mut().zip(free) {
        *m = !f;
    }
    u
}

/// Discrete harmonic extension into `B_r(x0)` of the values of `u` outside
/// the ball (five-point Laplacian, conjugate gradients).
pub fn harmonic_replacement(u: &GridFunction, x0: Point, r: f64) -> Result<GridFunction> {
    let free = free_nodes(u, x0, r)?;
    let mut v = u.values().to_vec();
    solve_laplace(u.grid(), &free, &mut v)?;
    let out = GridFunction::from_values(*u.grid(), v)?;
    Ok(freeze_outside(out, &free))
}

fn solve_laplace(g: &Grid, free: &[bool], v: &mut [f64]) -> Result<()> {
    let n = g.n();
    let idx: Vec<usize> = (0..g.len()).filter(|&k| free[k]).collect();
    if idx.is_empty() {
        return Ok(());
    }
    let neighbors = |k: usize| [k - 1, k + 1, k - n, k + n];
    // b = fixed-neighbour sums, unknowns on free nodes only
    let mut b = vec![0.0; idx.len()];
    for (m, &k) in idx.iter().enumerate() {
        b[m] = neighbors(k).iter().filter(|&&q| !free[q]).map(|&q| v[q]).sum();
    }
    let mut full = vec![0.0; g.len()];
    let apply = |x: &[f64], full: &mut [f64], out: &mut [f64]| {
        for (m, &k) in idx.iter().enumerate() {
            full[k] = x[m];
        }
        for (m, &k) in idx.iter().enumerate() {
            out[m] = 4.0 * x[m] - neighbors(k).iter().filter(|&&q| free[q]).map(|&q| full[q]).sum::<f64>();
        }
    };
    let mut x: Vec<f64> = idx.iter().map(|&k| v[k]).collect();
    let mut ax = vec![0.0; idx.len()];
    apply(&x, &mut full, &mut ax);
    let mut res: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = res.clone();
    let mut rr: f64 = res.iter().map(|x| x * x).sum();
    let tol = 1e-10 * b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let cap = 20 * idx.len().max(100);
    let mut ap = vec![0.0; idx.len()];
    let mut it = 0;
    while res.iter().fold(0.0f64, |m, x| m.max(x.abs())) > tol {
        if it >= cap {
            return Err(Error::Solver {
                reason: format!("conjugate gradients did not converge in {cap} iterations"),
                trace: vec![rr.sqrt()],
            });
        }
        apply(&p, &mut full, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for m in 0..x.len() {
            x[m] += alpha * p[m];
            res[m] -= alpha * ap[m];
        }
        let rr_new: f64 = res.iter().map(|x| x * x).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for m in 0..p.len() {
            p[m] = res[m] + beta * p[m];
        }
        it += 1;
    }
    for (m, &k) in idx.iter().enumerate() {
        v[k] = x[m];
    }
    Ok(())
}

/// Accelerated projected gradient on `E_h` with a backtracking line search
/// and a monotone restart, staged over the regularization continuation.
pub fn minimize(spec: &EnergySpec, boundary_data: &GridFunction, x0: Point, r: f64, cfg: &SolveConfig) -> Result<(GridFunction, SolveReport)> {
    cfg.validate()?;
    let one_phase = spec.variant().is_one_phase();
    let g = *boundary_data.grid();
    let free = free_nodes(boundary_data, x0, r)?;
    let data = boundary_data.values();
    if one_phase {
        if let Some(k) = (0..g.len()).find(|&k| !free[k] && data[k] < 0.0) {
            return Err(Error::Precondition(format!("one-phase boundary data is negative at node {k}")));
        }
    }

    let mut u = data.to_vec();
    solve_laplace(&g, &free, &mut u)?;
    let project = |v: &mut [f64]| {
        if one_phase {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    };
    project(&mut u);

    let gamma0 = spec.potential_at(x0)?.gamma();
    let data_scale = (0..g.len()).filter(|&k| !free[k]).map(|k| data[k].abs()).fold(0.0, f64::max);
    let stages = cfg.stages(g.h(), gamma0, data_scale);
    let mut problem = DiscreteEnergy::touching(spec, &g, stages[0], &free)?;
    let free_idx: Vec<usize> = (0..g.len()).filter(|&k| free[k]).collect();
    let h2 = g.h() * g.h();
    let arm = cfg.armijo;

    let mut trace = Vec::with_capacity(stages.len());
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = vec![0.0; g.len()];
    let mut grad_y = vec![0.0; g.len()];
    let mut y = u.clone();
    let mut trial = u.clone();
    let mut prev = u.clone();

    let fail = |reason: &str, trace: &[Vec<f64>]| Error::Solver {
        reason: reason.to_string(),
        trace: trace.iter().flatten().copied().collect(),
    };

    for stage in stages {
        problem.set_reg(stage);
        let mut stage_trace = Vec::new();
        let mut e = problem.value_and_gradient(&u, &mut grad);
        if !e.is_finite() {
            trace.push(stage_trace);
            return Err(fail("non-finite energy", &trace));
        }
        stage_trace.push(e);
        let mut grad_fresh = true;
        let mut step = arm.step0;
        prev.copy_from_slice(&u);
        let mut momentum = 1.0f64;
        let mut since_check = 0;
        converged = false;
        loop {
            if !grad_fresh && since_check >= CHECK_EVERY {
                problem.value_and_gradient(&u, &mut grad);
                grad_fresh = true;
            }
            if grad_fresh {
                since_check = 0;
                let pg = free_idx
                    .iter()
                    .map(|&k| if one_phase && u[k] <= 0.0 && grad[k] > 0.0 { 0.0 } else { grad[k].abs() })
                    .fold(0.0f64, f64::max);
                if pg / h2 <= cfg.tol_grad {
                    converged = true;
                    break;
                }
            }
            if iterations >= cfg.max_iters {
                break;
            }
            iterations += 1;
            since_check += 1;

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let w = (momentum - 1.0) / t_next;
            let mut accepted = None;
            for restart in [false, true] {
                let d_yu = if restart || w == 0.0 {
                    if !grad_fresh {
                        problem.value_and_gradient(&u, &mut grad);
                        grad_fresh = true;
                    }
                    y.copy_from_slice(&u);
                    grad_y.copy_from_slice(&grad);
                    0.0
                } else {
                    for &k in &free_idx {
                        y[k] = u[k] + w * (u[k] - prev[k]);
                    }
                    project(&mut y);
                    problem.gradient_and_difference(&y, &u, &mut grad_y)
                };
                if !d_yu.is_finite() {
                    trace.push(stage_trace);
                    return Err(fail("non-finite energy", &trace));
                }
                let mut t = step;
                let mut found = None;
                for _ in 0..60 {
                    for &k in &free_idx {
                        trial[k] = y[k] - t * grad_y[k];
                    }
                    project(&mut trial);
                    let (mut lin, mut sq) = (0.0, 0.0);
                    for &k in &free_idx {
                        let d = trial[k] - y[k];
                        lin += grad_y[k] * d;
                        sq += d * d;
                    }
                    let d = problem.difference(&trial, &y);
                    // quadratic upper bound together with the Armijo condition
                    if d.is_finite() && d <= lin + 0.5 * sq / t && d <= arm.c1 * lin {
                        found = Some((d, sq));
                        break;
                    }
                    t *= arm.backtrack;
                }
                if let Some((d, sq)) = found {
                    let du = d + d_yu;
                    if du <= 0.0 && sq > 0.0 {
                        step = t;
                        momentum = if restart { 1.0 } else { t_next };
                        accepted = Some(du);
                        break;
                    }
                }
                if w == 0.0 {
                    break;
                }
            }
            let Some(du) = accepted else { break };
            std::mem::swap(&mut prev, &mut u);
            u.copy_from_slice(&trial);
            grad_fresh = false;
            e += du;
            stage_trace.push(e);
            step = (step / arm.backtrack).min(arm.step0);
        }
        trace.push(stage_trace);
    }

    let energy = problem.value(&u);
    let mut out = GridFunction::from_values(g, u)?;
    if one_phase {
        out = out.into_nonnegative()?;
    }
    let out = freeze_outside(out, &free);
    Ok((
        out,
        SolveReport {
            iterations,
            energy,
            trace,
            converged,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitorReport {
    pub energy_u: f64,
    pub energy_v: f64,
    pub rho: f64,
    /// `(1 + ϱ(r)) 𝒥(v) - 𝒥(u)`; nonnegative when `u` beats `v`.
    pub slack: f64,
}

/// Compares `u` against a competitor `v` that agrees with it off the open ball.
pub fn competitor_test(u: &GridFunction, spec: &EnergySpec, x0: Point, r: f64, v: &GridFunction) -> Result<CompetitorReport> {
    if u.grid() != v.grid() {
        return Err(Error::Precondition("u and v live on different grids".into()));
    }
    let g = u.grid();
    let scale = u.sup_abs().max(1.0);
    let (ri, rj) = g.cell_range(x0, r);
    for j in rj.start..=(rj.end + 1).min(g.n() - 1) {
        for i in ri.start..=(ri.end + 1).min(g.n() - 1) {
            let p = g.node(i, j);
            if (p[0] - x0[0]).hypot(p[1] - x0[1]) >= r && (u.at(i, j) - v.at(i, j)).abs() > 1e-12 * scale {
                return Err(Error::Precondition(format!("competitor differs from u at boundary node ({i}, {j})")));
            }
        }
    }
    let region = Region::ball(x0, r);
    let eu = energy(u, spec, region)?.total;
    let ev = energy(v, spec, region)?.total;
    let rho = spec.gauge.eval(r.min(2.0))?;
    Ok(CompetitorReport {
        energy_u: eu,
        energy_v: ev,
        rho,
        slack: (1.0 + rho) * ev - eu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{MatrixField, Modulus, Potential, ScalarField};
    use crate::discretization::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(h: f64) -> Grid {
        Grid::with_spacing(1.125, h).unwrap()
    }

    fn no_potential() -> EnergySpec {
        EnergySpec::new(
            MatrixField::identity(),
            Potential::Ac2 {
                q1: ScalarField::constant("q1", 0.0),
                q2: ScalarField::constant("q2", 0.0),
            },
            Modulus::Zero,
        )
        .unwrap()
    }

    #[test]
    fn config_invariants() {
        assert!(SolveConfig::default().validate().is_ok());
        let c = SolveConfig {
            tol_grad: 0.0,
            ..SolveConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = SolveConfig::default();
        c.armijo.backtrack = 1.0;
        assert!(c.validate().is_err());
        let c = SolveConfig {
            continuation: vec![RegularizationParams::new(1e-3, 1e-2).unwrap(), RegularizationParams::new(1e-3, 5e-3).unwrap()],
            ..SolveConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn harmonic_replacement_examples() {
        let g = grid(1.0 / 32.0);
        let c = GridFunction::from_fn(g, |_| 0.7);
        let phi = harmonic_replacement(&c, [0.0, 0.0], 1.0).unwrap();
        assert!(phi.values().iter().all(|v| (v - 0.7).abs() < 1e-12));

        let noisy = GridFunction::from_fn(g, |x| if x[0].hypot(x[1]) < 1.0 { (17.0 * x[1]).sin() } else { x[0] });
        let phi = harmonic_replacement(&noisy, [0.0, 0.0], 1.0).unwrap();
        for k in 0..g.len() {
            let p = g.node(k % g.n(), k / g.n());
            assert!((phi.values()[k] - p[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_replacement_minimizes_dirichlet_energy() {
        let g = grid(1.0 / 32.0);
        let u = GridFunction::from_fn(g, |x| (2.0 * x[0]).sin() * x[1].exp());
        let phi = harmonic_replacement(&u, [0.1, 0.0], 0.9).unwrap();
        let d = DiscreteEnergy::full(&no_potential(), &g, RegularizationParams::defaults(g.h(), None)).unwrap();
        let e_phi = d.dirichlet_value(phi.values());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut v = phi.values().to_vec();
            for (i, j) in g.nodes_in_ball([0.1, 0.0], 0.9) {
                v[g.idx(i, j)] += rng.gen_range(-0.1..0.1);
            }
            assert!(d.dirichlet_value(&v) >= e_phi);
        }
    }

    #[test]
    fn affine_data_without_potential_is_reproduced() {
        let g = grid(1.0 / 32.0);
        let data = GridFunction::from_fn(g, |x| x[0]);
        let (u, rep) = minimize(&no_potential(), &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
        assert!(rep.converged);
        let err = (0..g.len())
            .map(|k| (u.values()[k] - g.node(k % g.n(), k / g.n())[0]).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
    }

    fn cone_error(h: f64) -> (f64, SolveReport) {
        let g = grid(h);
        let data = GridFunction::from_fn(g, |x| x[0].max(0.0).powf(1.5)).into_nonnegative().unwrap();
        let spec = EnergySpec::ap1_constant(9.0 / 8.0, 2.0 / 3.0).unwrap();
        let (u, rep) = minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
        (u.sup_diff_in_ball(&data, [0.0, 0.0], 1.0), rep)
    }

    #[test]
    fn exact_cone_is_recovered_and_refines() {
        let (e1, r1) = cone_error(1.0 / 32.0);
        let (e2, r2) = cone_error(1.0 / 64.0);
        assert!(r1.converged && r2.converged, "{} {}", r1.iterations, r2.iterations);
        assert!(e1 < 1.0 / 32.0, "{e1}");
        assert!(e2 <= e1, "{e2} > {e1}");
        for stage in r2.trace {
            assert!(stage.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn one_phase_output_is_nonnegative() {
        let g = grid(1.0 / 32.0);
        let data = GridFunction::from_fn(g, |x| 0.05 * (x[0] + 0.3).max(0.0)).into_nonnegative().unwrap();
        let spec = EnergySpec::ap1_constant(2.0, 0.5).unwrap();
        let (u, _) = minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
        assert!(u.values().iter().all(|&v| v >= 0.0));
        assert!(u.is_nonnegative());
        // the strong pull empties part of the ball
        assert!(u.at(g.n() / 2, g.n() / 2) == 0.0);
    }

    #[test]
    fn negative_data_is_rejected_for_one_phase() {
        let g = grid(1.0 / 16.0);
        let data = GridFunction::from_fn(g, |x| x[0]);
        let spec = EnergySpec::ac1_constant(1.0).unwrap();
        assert!(matches!(
            minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn alt_caffarelli_half_plane_beats_its_data() {
        let g = grid(1.0 / 32.0);
        let data = GridFunction::from_fn(g, |x| x[0].max(0.0)).into_nonnegative().unwrap();
        let spec = EnergySpec::ac1_constant(1.0).unwrap();
        let (u, _) = minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
        let rep = competitor_test(&u, &spec, [0.0, 0.0], 1.0, &data).unwrap();
        assert!(rep.slack >= 0.0, "{rep:?}");
    }

    #[test]
    fn competitor_examples() {
        let g = grid(1.0 / 32.0);
        let data = GridFunction::from_fn(g, |x| x[0].max(0.0).powf(1.5)).into_nonnegative().unwrap();
        let spec = EnergySpec::new(
            MatrixField::identity(),
            Potential::Ap1 {
                delta: ScalarField::constant("delta", 9.0 / 8.0),
                gamma: ScalarField::constant("gamma", 2.0 / 3.0),
            },
            Modulus::holder(0.5, 0.2),
        )
        .unwrap();
        let (u, _) = minimize(&spec, &data, [0.0, 0.0], 1.0, &SolveConfig::default()).unwrap();
        let same = competitor_test(&u, &spec, [0.0, 0.0], 1.0, &u).unwrap();
        assert!((same.slack - 0.2 * same.energy_u).abs() < 1e-12);

        let mut bumped = u.clone();
        for (i, j) in g.nodes_in_ball([0.3, 0.1], 0.4) {
            let p = g.node(i, j);
            let d = (p[0] - 0.3).hypot(p[1] - 0.1) / 0.4;
            bumped.values_mut()[g.idx(i, j)] += 0.1 * (1.0 - d * d);
        }
        let rep = competitor_test(&u, &spec, [0.0, 0.0], 1.0, &bumped).unwrap();
        assert!(rep.slack > 0.0);

        let mut bad = u.clone();
        let k = g.idx(g.n() / 2 + 32, g.n() / 2);
        bad.values_mut()[k] += 1.0;
        assert!(matches!(competitor_test(&u, &spec, [0.0, 0.0], 1.0, &bad), Err(Error::Precondition(_))));
    }
}
