//! Primal-dual hybrid gradient iteration for
//! `min_z max_p <Az, p> - i_C(p)` subject to `D*z = mu`.
//!
//! One step is
//!
//! ```text
//! p     <- Proj_C(p + sigma A zbar)
//! z'    <- Proj_{D*z = mu}(z - tau A* p)
//! zbar  <- 2 z' - z
//! ```
//!
//! The primal projection is the spectral one, so every iterate is feasible up
//! to roundoff.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energies::{energy_of_average, primal_energy, project_dual_in_place, EnergySpec};
use crate::error::{Error, Result};
use crate::fields::{
    average, average_adjoint, average_adjoint_into, average_into, divergence_adjoint_into, operator_norm, DualField,
    EdgeField, GridShape, NodeField, OperatorNorm, Stencil,
};
use crate::rototrans::AngleTable;
use crate::spectral::{project_divergence, DivergenceProjector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Primal step; derived from `||A||` and the grid size when absent.
    pub tau: Option<f64>,
    /// Dual step; derived like `tau` when absent.
    pub sigma: Option<f64>,
    pub max_steps: usize,
    /// Diagnostics and the stopping test run every `check_every` steps.
    pub check_every: usize,
    pub feas_tol: f64,
    /// Stop once the relative energy change between two checkpoints falls
    /// below this. Zero runs exactly `max_steps`.
    pub energy_rel_tol: f64,
    /// Carried into run records; the iteration itself draws no random numbers.
    pub seed: u64,
    /// Also evaluate the gap surrogate at checkpoints (one extra projection).
    pub track_gap: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: None,
            sigma: None,
            max_steps: 5000,
            check_every: 100,
            feas_tol: 1e-9,
            energy_rel_tol: 0.0,
            seed: 0,
            track_gap: false,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self { max_steps: steps, ..Self::default() }
    }

    /// Resolve `(tau, sigma)` for a problem on `shape` with operator norm `norm`.
    pub fn step_sizes(&self, shape: GridShape, norm: f64) -> Result<(f64, f64)> {
        let root = (shape.node_count() as f64).powf(0.25);
        let budget = 0.99 / (norm * norm);
        let (tau, sigma) = match (self.tau, self.sigma) {
            (None, None) => (0.99 / (norm * root), root / norm),
            (Some(t), None) => (t, budget / t),
            (None, Some(s)) => (budget / s, s),
            (Some(t), Some(s)) => (t, s),
        };
        if !(tau > 0.0 && sigma > 0.0 && tau.is_finite() && sigma.is_finite()) {
            return Err(Error::Config(format!("step sizes must be positive, got tau={tau}, sigma={sigma}")));
        }
        if tau * sigma * norm * norm > 1.0 {
            return Err(Error::Config(format!("tau*sigma*||A||^2 = {} exceeds 1", tau * sigma * norm * norm)));
        }
        Ok((tau, sigma))
    }

    fn validate(&self) -> Result<()> {
        if self.check_every == 0 {
            return Err(Error::Config("check_every must be at least 1".into()));
        }
        if !(self.feas_tol > 0.0) || !(self.energy_rel_tol >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Iterates of one solve. `z_avg`, `p_avg` are the ergodic means over the
/// `k` steps taken since the state was (re)started.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub z: EdgeField,
    pub p: DualField,
    pub z_bar: EdgeField,
    pub z_avg: EdgeField,
    pub p_avg: DualField,
    pub k: usize,
}

impl SolverState {
    /// `z = Proj(0)`, `p = 0`.
    pub fn cold(mu: &NodeField) -> Result<Self> {
        let shape = mu.shape();
        let z = project_divergence(&EdgeField::zeros(shape), mu)?;
        Ok(Self::from_parts(z, DualField::zeros(shape)))
    }

    fn from_parts(z: EdgeField, p: DualField) -> Self {
        Self { z_bar: z.clone(), z_avg: z.clone(), p_avg: p.clone(), z, p, k: 0 }
    }

    pub fn shape(&self) -> GridShape {
        self.z.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    /// Primal energy of `z` for the plain families; the Lagrangian `<Az, p>`
    /// for the curvature families, whose integrand is infinite off the
    /// fibre direction.
    pub energy: f64,
    /// `||D*z - mu||_inf`
    pub feas: f64,
    /// Gap surrogate at the averaged iterates; NaN when not tracked.
    pub gap: f64,
    pub wallclock_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub checkpoints: Vec<Checkpoint>,
    pub steps: usize,
    pub converged: bool,
    pub tau: f64,
    pub sigma: f64,
    pub norm: f64,
}

impl Diagnostics {
    /// `step energy feas gap wallclock_ms`, one checkpoint per line.
    pub fn to_log(&self) -> String {
        let mut s = String::from("# step energy feas gap wallclock_ms\n");
        for c in &self.checkpoints {
            s.push_str(&format!("{} {:e} {:e} {:e} {:.3}\n", c.step, c.energy, c.feas, c.gap, c.wallclock_ms));
        }
        s
    }

    pub fn last_energy(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.energy)
    }
}

/// `||A||` upper bound for `shape`, computed once per shape and stencil.
pub fn cached_norm(shape: GridShape, stencil: Stencil) -> Result<OperatorNorm> {
    static CACHE: OnceLock<Mutex<HashMap<(GridShape, Stencil), OperatorNorm>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(n) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&(shape, stencil)) {
        return Ok(*n);
    }
    let n = operator_norm(shape, stencil)?;
    cache.lock().unwrap_or_else(|e| e.into_inner()).insert((shape, stencil), n);
    Ok(n)
}

fn feasibility(z: &EdgeField, mu: &NodeField, scratch: &mut NodeField) -> f64 {
    divergence_adjoint_into(z, scratch);
    scratch.values().iter().zip(mu.values()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn running_mean(mean: &mut [f64], x: &[f64], w: f64) {
    for (m, v) in mean.iter_mut().zip(x) {
        *m += w * (v - *m);
    }
}

/// Value reported as "energy" at checkpoints; see [`Checkpoint::energy`].
pub fn diagnostic_energy(az: &DualField, p: &DualField, spec: &EnergySpec) -> f64 {
    if spec.family.is_roto() {
        az.dot(p)
    } else {
        energy_of_average(az, spec)
    }
}

/// Runs the iteration. A warm state keeps its `z` and `p` (with `z`
/// re-projected onto the new constraint) but restarts the averages.
pub fn solve(
    spec: &EnergySpec,
    mu: &NodeField,
    config: &SolverConfig,
    warm: Option<SolverState>,
) -> Result<(SolverState, Diagnostics)> {
    config.validate()?;
    let shape = mu.shape();
    spec.check_shape(shape)?;
    let stencil = spec.family.stencil();
    let norm = cached_norm(shape, stencil)?.bound;
    let (tau, sigma) = config.step_sizes(shape, norm)?;
    let angles = spec.family.is_roto().then(|| AngleTable::new(shape.dim(2)));

    let mut projector = DivergenceProjector::new(shape);
    let mut state = match warm {
        Some(w) => {
            if w.shape() != shape {
                return Err(Error::ShapeMismatch(format!("warm start on {} for a {} problem", w.shape(), shape)));
            }
            let mut z = w.z;
            projector.project_in_place(&mut z, mu)?;
            SolverState::from_parts(z, w.p)
        }
        None => SolverState::cold(mu)?,
    };
    let z_part = if config.track_gap { Some(project_divergence(&EdgeField::zeros(shape), mu)?) } else { None };

    let mut az = DualField::zeros(shape);
    let mut atp = EdgeField::zeros(shape);
    let mut z_new = EdgeField::zeros(shape);
    let mut scratch = NodeField::zeros(shape);
    let mut diag = Diagnostics { tau, sigma, norm, ..Diagnostics::default() };
    let start = Instant::now();
    let mut prev_energy: Option<f64> = None;

    for step in 1..=config.max_steps {
        // dual ascent
        average_into(&state.z_bar, stencil, &mut az);
        for (p, a) in state.p.values_mut().iter_mut().zip(az.values()) {
            *p += sigma * a;
        }
        project_dual_in_place(&mut state.p, spec, angles.as_ref())?;

        // primal descent
        average_adjoint_into(&state.p, stencil, &mut atp);
        for (dst, (a, b)) in z_new.components_mut().iter_mut().zip(state.z.components().iter().zip(atp.components())) {
            for (x, (zi, wi)) in dst.iter_mut().zip(a.iter().zip(b)) {
                *x = zi - tau * wi;
            }
        }
        projector.project_in_place(&mut z_new, mu)?;
        if !z_new.is_finite() || !state.p.is_finite() {
            return Err(Error::NotFinite { step });
        }

        // extrapolation
        for (dst, (a, b)) in
            state.z_bar.components_mut().iter_mut().zip(z_new.components().iter().zip(state.z.components()))
        {
            for (x, (n, o)) in dst.iter_mut().zip(a.iter().zip(b)) {
                *x = 2.0 * n - o;
            }
        }
        std::mem::swap(&mut state.z, &mut z_new);

        state.k += 1;
        let w = 1.0 / state.k as f64;
        for (m, z) in state.z_avg.components_mut().iter_mut().zip(state.z.components()) {
            running_mean(m, z, w);
        }
        running_mean(state.p_avg.values_mut(), state.p.values(), w);
        diag.steps = step;

        if step % config.check_every == 0 || step == config.max_steps {
            average_into(&state.z, stencil, &mut az);
            let energy = diagnostic_energy(&az, &state.p, spec);
            let feas = feasibility(&state.z, mu, &mut scratch);
            let gap = match &z_part {
                Some(zp) => gap_with(&state, spec, zp, &mut projector)?.gap,
                None => f64::NAN,
            };
            diag.checkpoints.push(Checkpoint {
                step,
                energy,
                feas,
                gap,
                wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if let Some(prev) = prev_energy {
                let rel = (energy - prev).abs() / energy.abs().max(f64::MIN_POSITIVE);
                if config.energy_rel_tol > 0.0 && rel <= config.energy_rel_tol && feas <= config.feas_tol {
                    diag.converged = true;
                    break;
                }
            }
            prev_energy = Some(energy);
        }
    }
    Ok((state, diag))
}

/// Optimality estimate at the averaged iterates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSurrogate {
    /// `primal - dual`
    pub gap: f64,
    /// Energy of `z_avg` (the Lagrangian `<A z_avg, p_avg>` for curvature families).
    pub primal: f64,
    /// `<z_part, A* p_avg>` for the fixed feasible `z_part = Proj(0)`.
    pub dual: f64,
    /// `||A* p_avg - P_range(D) A* p_avg||`; the dual value is a true lower
    /// bound only when this vanishes.
    pub defect: f64,
}

/// Surrogate for the partial gap at `(z_avg, p_avg)`.
///
/// Since `z_part` lies in `range(D)`, the dual value does not depend on which
/// feasible field is used: two feasible fields differ by an element of
/// `ker D*`, which is orthogonal to `range(D)`, up to the reported defect.
pub fn gap_surrogate(state: &SolverState, spec: &EnergySpec, mu: &NodeField) -> Result<GapSurrogate> {
    let shape = mu.shape();
    spec.check_shape(shape)?;
    let z_part = project_divergence(&EdgeField::zeros(shape), mu)?;
    let mut projector = DivergenceProjector::new(shape);
    gap_with(state, spec, &z_part, &mut projector)
}

fn gap_with(
    state: &SolverState,
    spec: &EnergySpec,
    z_part: &EdgeField,
    projector: &mut DivergenceProjector,
) -> Result<GapSurrogate> {
    let stencil = spec.family.stencil();
    let primal = if spec.family.is_roto() {
        average(&state.z_avg, stencil).dot(&state.p_avg)
    } else {
        primal_energy(&state.z_avg, spec)?
    };
    let atp = average_adjoint(&state.p_avg, stencil);
    let dual = z_part.dot(&atp);
    let mut rest = atp.clone();
    rest.axpy(-1.0, &projector.range_component(&atp)?);
    Ok(GapSurrogate { gap: primal - dual, primal, dual, defect: rest.norm2() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energies::EnergyFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dipole(shape: GridShape, src: [usize; 3], dst: [usize; 3]) -> NodeField {
        let mut mu = NodeField::zeros(shape);
        mu.set(src, -1.0);
        mu.set(dst, 1.0);
        mu
    }

    fn unit_spec(shape: GridShape, family: EnergyFamily) -> EnergySpec {
        EnergySpec::new(family, NodeField::constant(shape, 1.0), None).unwrap()
    }

    #[test]
    fn zero_rhs_stays_at_zero() {
        let s = GridShape::plane(12, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = NodeField::from_fn(s, |_| rng.gen_range(0.1..1.0));
        for family in [EnergyFamily::L1, EnergyFamily::L2Forward, EnergyFamily::L2Averaged] {
            let spec = EnergySpec::new(family, g.clone(), None).unwrap();
            let (st, diag) = solve(&spec, &NodeField::zeros(s), &SolverConfig::with_steps(200), None).unwrap();
            assert_eq!(st.z.norm_inf(), 0.0);
            assert_eq!(diag.last_energy(), Some(0.0));
        }
    }

    #[test]
    fn manhattan_distance_under_l1() {
        let s = GridShape::plane(16, 16).unwrap();
        let mu = dipole(s, [2, 3, 0], [12, 13, 0]);
        let spec = unit_spec(s, EnergyFamily::L1);
        let cfg = SolverConfig { max_steps: 20_000, check_every: 500, track_gap: true, ..SolverConfig::default() };
        let (st, diag) = solve(&spec, &mu, &cfg, None).unwrap();
        let e = primal_energy(&st.z, &spec).unwrap();
        assert!((e - 20.0).abs() <= 20.0 * 1e-3, "energy {e}");
        for c in &diag.checkpoints {
            assert!(c.feas <= 1e-9, "feasibility {} at {}", c.feas, c.step);
        }
        let gap = gap_surrogate(&st, &spec, &mu).unwrap();
        assert!(gap.gap.abs() <= 1e-3 * e + gap.defect * 40.0, "{gap:?}");
    }

    #[test]
    fn surrogate_at_start_is_primal_energy() {
        let s = GridShape::plane(9, 7).unwrap();
        let mu = dipole(s, [1, 1, 0], [7, 5, 0]);
        let spec = unit_spec(s, EnergyFamily::L2Averaged);
        let st = SolverState::cold(&mu).unwrap();
        let gap = gap_surrogate(&st, &spec, &mu).unwrap();
        assert_eq!(gap.dual, 0.0);
        assert_eq!(gap.defect, 0.0);
        assert!((gap.gap - primal_energy(&st.z, &spec).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn iterates_stay_feasible_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let s = GridShape::plane(rng.gen_range(4..10), rng.gen_range(4..10)).unwrap();
            let g = NodeField::from_fn(s, |_| rng.gen_range(0.05..1.0));
            let family = [EnergyFamily::L1, EnergyFamily::L2Forward, EnergyFamily::L2Averaged][case % 3];
            let spec = EnergySpec::new(family, g, None).unwrap();
            let mut mu = NodeField::zeros(s);
            for _ in 0..3 {
                let a = s.index([rng.gen_range(0..s.dim(0)), rng.gen_range(0..s.dim(1)), 0]);
                let b = s.index([rng.gen_range(0..s.dim(0)), rng.gen_range(0..s.dim(1)), 0]);
                mu.values_mut()[a] -= 1.0;
                mu.values_mut()[b] += 1.0;
            }
            let e0 = primal_energy(&SolverState::cold(&mu).unwrap().z, &spec).unwrap();
            let cfg = SolverConfig { max_steps: 400, check_every: 20, ..SolverConfig::default() };
            let (_, diag) = solve(&spec, &mu, &cfg, None).unwrap();
            for c in diag.checkpoints.iter().filter(|c| c.step >= 100) {
                assert!(c.feas <= 1e-9);
                assert!(c.energy <= 2.0 * e0 + 1e-9, "case {case}: {} vs {e0}", c.energy);
            }
        }
    }

    #[test]
    fn dual_iterate_stays_admissible() {
        let s = GridShape::plane(10, 10).unwrap();
        let mu = dipole(s, [1, 1, 0], [8, 6, 0]);
        let g = NodeField::from_fn(s, |c| 0.2 + 0.07 * c[0] as f64);
        let spec = EnergySpec::new(EnergyFamily::L2Averaged, g.clone(), None).unwrap();
        let (st, _) = solve(&spec, &mu, &SolverConfig::with_steps(300), None).unwrap();
        for (n, v) in st.p.nodes().enumerate() {
            assert!(v[0].hypot(v[1]) <= g.values()[n] + 1e-10);
        }
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let s = GridShape::plane(11, 8).unwrap();
        let mu = dipole(s, [0, 0, 0], [10, 7, 0]);
        let spec = unit_spec(s, EnergyFamily::L2Averaged);
        let cfg = SolverConfig { max_steps: 300, check_every: 30, ..SolverConfig::default() };
        let (a, da) = solve(&spec, &mu, &cfg, None).unwrap();
        let (b, db) = solve(&spec, &mu, &cfg, None).unwrap();
        assert_eq!(a.z, b.z);
        let strip = |d: &Diagnostics| {
            d.checkpoints.iter().map(|c| (c.step, c.energy.to_bits(), c.feas.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(strip(&da), strip(&db));
    }

    #[test]
    fn warm_start_reprojects() {
        let s = GridShape::plane(10, 10).unwrap();
        let spec = unit_spec(s, EnergyFamily::L2Averaged);
        let (st, _) = solve(&spec, &dipole(s, [1, 1, 0], [8, 8, 0]), &SolverConfig::with_steps(200), None).unwrap();
        let mu2 = dipole(s, [1, 2, 0], [8, 8, 0]);
        let cfg = SolverConfig { max_steps: 1, ..SolverConfig::default() };
        let (st2, diag) = solve(&spec, &mu2, &cfg, Some(st)).unwrap();
        assert_eq!(st2.k, 1);
        assert!(diag.checkpoints[0].feas <= 1e-9);
    }

    #[test]
    fn energy_window_stops_early() {
        let s = GridShape::plane(8, 8).unwrap();
        let mu = dipole(s, [1, 1, 0], [6, 6, 0]);
        let spec = unit_spec(s, EnergyFamily::L2Averaged);
        let cfg = SolverConfig { max_steps: 100_000, check_every: 50, energy_rel_tol: 1e-7, ..SolverConfig::default() };
        let (_, diag) = solve(&spec, &mu, &cfg, None).unwrap();
        assert!(diag.converged);
        assert!(diag.steps < 100_000);
    }

    #[test]
    fn step_size_policy() {
        let s = GridShape::plane(16, 16).unwrap();
        let (t, sg) = SolverConfig::default().step_sizes(s, 1.0).unwrap();
        assert!((t - 0.99 / 4.0).abs() < 1e-15 && (sg - 4.0).abs() < 1e-15);
        let cfg = SolverConfig { tau: Some(0.5), sigma: Some(3.0), ..SolverConfig::default() };
        assert!(cfg.step_sizes(s, 1.0).is_err());
        let cfg = SolverConfig { tau: Some(0.5), ..SolverConfig::default() };
        let (_, sg) = cfg.step_sizes(s, 1.0).unwrap();
        assert!((sg - 1.98).abs() < 1e-12);
    }

    #[test]
    fn rejects_incompatible_rhs_and_shapes() {
        let s = GridShape::plane(6, 6).unwrap();
        let mut mu = NodeField::zeros(s);
        mu.set([2, 2, 0], 1.0);
        let spec = unit_spec(s, EnergyFamily::L1);
        assert!(matches!(solve(&spec, &mu, &SolverConfig::default(), None), Err(Error::IncompatibleRhs { .. })));
        let other = GridShape::plane(6, 7).unwrap();
        assert!(solve(&spec, &NodeField::zeros(other), &SolverConfig::default(), None).is_err());
    }

    #[test]
    fn log_has_one_line_per_checkpoint() {
        let s = GridShape::plane(6, 6).unwrap();
        let spec = unit_spec(s, EnergyFamily::L1);
        let cfg = SolverConfig { max_steps: 45, check_every: 10, ..SolverConfig::default() };
        let (_, diag) = solve(&spec, &dipole(s, [0, 0, 0], [5, 5, 0]), &cfg, None).unwrap();
        let log = diag.to_log();
        assert_eq!(log.lines().count(), 1 + 5);
        assert!(log.lines().nth(1).unwrap().starts_with("10 "));
        assert_eq!(log.lines().last().unwrap().split_whitespace().count(), 5);
    }
}
