//! The outer loop: solve, move every mass, merge, repeat.

use serde::{Deserialize, Serialize};

use super::moves::{init_pairs, merge_close_opposites, move_mass, postprocess_merge, update_theta};
use super::tracing::{group_curves, trace_curves, Curve};
use super::{CurveRecord, DiracSet, MassRecord};
use crate::energies::EnergySpec;
use crate::error::{Error, Result};
use crate::fields::{EdgeField, GridMode, GridShape, NodeField};
use crate::pdhg::{solve, Diagnostics, SolverConfig, SolverState};
use crate::rototrans::{marginalize, AngleTable, DEFAULT_ANGLES};

/// Cap on post-processing merge rounds; each round removes at least one pair.
const MAX_MERGE_ROUNDS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilevelConfig {
    pub n_pairs: usize,
    pub gmax: f64,
    /// Solver steps per outer iteration.
    pub inner_steps: usize,
    /// Solver steps of the final solve.
    pub post_steps: usize,
    pub max_outer: usize,
    pub seed: u64,
    /// Net orientation flux at a lifted mass needed to turn it.
    pub theta_flux_threshold: f64,
    /// Orientations of the lifted grid for curvature energies.
    pub angles: usize,
    pub overlap_frac: f64,
    pub angle_tol_deg: f64,
    /// Curves carrying less flux are left out of the result.
    pub min_curve_flux: f64,
    /// After convergence, try shifting each mass one pixel down the gradient
    /// of `g` and keep the shifts that lower the energy.
    pub gradient_probe: bool,
    /// Trace curves for every snapshot, not only at the end.
    pub snapshot_curves: bool,
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            n_pairs: 15,
            gmax: 0.5,
            inner_steps: 60,
            post_steps: 5000,
            max_outer: 100,
            seed: 0,
            theta_flux_threshold: 0.1,
            angles: DEFAULT_ANGLES,
            overlap_frac: 0.5,
            angle_tol_deg: 30.0,
            min_curve_flux: 0.25,
            gradient_probe: false,
            snapshot_curves: true,
            tau: None,
            sigma: None,
        }
    }
}

impl BilevelConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gmax > 0.0 && self.gmax < 1.0) {
            return Err(Error::Config(format!("gmax must lie in (0, 1), got {}", self.gmax)));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("need at least one pair".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_frac) {
            return Err(Error::Config("overlap_frac must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn solver(&self, steps: usize) -> SolverConfig {
        SolverConfig {
            tau: self.tau,
            sigma: self.sigma,
            max_steps: steps,
            check_every: steps.max(1),
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

/// State after one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub masses: Vec<MassRecord>,
    pub curves: Vec<CurveRecord>,
    pub moved: usize,
    pub merged_pairs: usize,
    pub energy: f64,
}

#[derive(Clone, Debug)]
pub struct BilevelResult {
    pub state: SolverState,
    pub masses: DiracSet,
    /// Planar source-to-sink curves of the final field, heaviest first.
    pub curves: Vec<Curve>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Diagnostics,
    pub outer_iterations: usize,
}

fn planar_curves(z: &EdgeField, mu: &NodeField, min_flux: f64) -> Result<Vec<Curve>> {
    let traced = trace_curves(z, mu)?;
    let planar: Vec<Curve> =
        if z.shape().mode() == GridMode::Lifted { traced.iter().map(Curve::to_planar).collect() } else { traced };
    Ok(group_curves(&planar, min_flux))
}

fn records(curves: &[Curve]) -> Vec<CurveRecord> {
    curves.iter().map(|c| CurveRecord::from_curve(c, 2)).collect()
}

fn planar_field(z: &EdgeField) -> Result<EdgeField> {
    if z.shape().mode() == GridMode::Lifted {
        marginalize(z)
    } else {
        Ok(z.clone())
    }
}

/// Alternates `inner_steps` warm-started solver steps with one round of mass
/// moves until no mass moves, then merges overlapping curves and runs a
/// final `post_steps` solve.
pub fn run_bilevel(spec: &EnergySpec, config: &BilevelConfig) -> Result<BilevelResult> {
    config.validate()?;
    let g = &spec.weight;
    if g.shape().mode() != GridMode::Plane {
        return Err(Error::Config("endpoint search runs on planar potentials only".into()));
    }
    let (shape, angles) = if spec.family.is_roto() {
        let t = AngleTable::checked(config.angles)?;
        (GridShape::lifted(g.shape().dim(0), g.shape().dim(1), config.angles)?, Some(t))
    } else {
        (g.shape(), None)
    };

    let mut masses = init_pairs(g, config.n_pairs, config.gmax, config.seed, angles.as_ref())?;
    let mut state: Option<SolverState> = None;
    let mut snapshots = Vec::new();
    let mut outer = 0;

    while outer < config.max_outer && !masses.is_empty() {
        outer += 1;
        let mu = masses.to_measure(shape)?;
        let (st, diag) = solve(spec, &mu, &config.solver(config.inner_steps), state.take())?;
        let planar = planar_field(&st.z)?;
        let mut moved = 0;
        for m in &mut masses.masses {
            let mut changed = false;
            if angles.is_some() {
                let k = update_theta(m, &st.z, config.theta_flux_threshold);
                changed = Some(k) != m.angle;
                m.angle = Some(k);
            }
            let case = move_mass(m, &planar, g, config.gmax);
            if changed || case.moved() {
                moved += 1;
            }
        }
        let merged_pairs = merge_close_opposites(&mut masses);
        let curves = if config.snapshot_curves {
            records(&planar_curves(&st.z, &mu, config.min_curve_flux)?)
        } else {
            Vec::new()
        };
        snapshots.push(Snapshot {
            iteration: outer,
            masses: masses.records(),
            curves,
            moved,
            merged_pairs,
            energy: diag.last_energy().unwrap_or(f64::NAN),
        });
        state = Some(st);
        if moved == 0 && merged_pairs == 0 {
            break;
        }
    }

    // merge curves that retrace each other, using a short solve on the final masses
    // merge curves that retrace each other until no pair superposes any more,
    // with a short solve on the current masses before each round
    for _ in 0..MAX_MERGE_ROUNDS {
        if masses.is_empty() {
            break;
        }
        let mu = masses.to_measure(shape)?;
        let (st, _) = solve(spec, &mu, &config.solver(config.inner_steps), state.take())?;
        let curves = planar_curves(&st.z, &mu, config.min_curve_flux)?;
        let before = masses.len();
        masses = postprocess_merge(&curves, &masses, config.overlap_frac, config.angle_tol_deg.to_radians());
        state = Some(st);
        if masses.len() == before {
            break;
        }
    }

    if config.gradient_probe && !masses.is_empty() {
        state = Some(gradient_probe(spec, config, shape, &mut masses, state.take())?);
    }

    let mu = masses.to_measure(shape)?;
    let (st, diagnostics) = solve(spec, &mu, &config.solver(config.post_steps), state.take())?;
    let curves = planar_curves(&st.z, &mu, config.min_curve_flux)?;
    Ok(BilevelResult { state: st, masses, curves, snapshots, diagnostics, outer_iterations: outer })
}

/// Tries moving each mass one pixel towards lower `g`; keeps a move when
/// the re-solved energy decreases.
fn gradient_probe(
    spec: &EnergySpec,
    config: &BilevelConfig,
    shape: GridShape,
    masses: &mut DiracSet,
    state: Option<SolverState>,
) -> Result<SolverState> {
    let g = &spec.weight;
    let (n, m) = (g.shape().dim(0), g.shape().dim(1));
    let cfg = config.solver(config.inner_steps);
    let (mut base, diag) = solve(spec, &masses.to_measure(shape)?, &cfg, state)?;
    let mut energy = diag.last_energy().unwrap_or(f64::INFINITY);
    for idx in 0..masses.len() {
        let [i, j] = masses.masses[idx].pos;
        let at = |a: usize, b: usize| g.get([a, b, 0]);
        let gi = (at((i + 1).min(n - 1), j) - at(i.saturating_sub(1), j)) / 2.0;
        let gj = (at(i, (j + 1).min(m - 1)) - at(i, j.saturating_sub(1))) / 2.0;
        if gi.hypot(gj) == 0.0 {
            continue;
        }
        let step = |v: f64| {
            if v > 0.0 {
                -1isize
            } else if v < 0.0 {
                1
            } else {
                0
            }
        };
        let (si, sj) = if gi.abs() >= 2.0 * gj.abs() {
            (step(gi), 0)
        } else if gj.abs() >= 2.0 * gi.abs() {
            (0, step(gj))
        } else {
            (step(gi), step(gj))
        };
        let (Some(a), Some(b)) = (i.checked_add_signed(si), j.checked_add_signed(sj)) else { continue };
        if a >= n || b >= m {
            continue;
        }
        let mut trial = masses.clone();
        trial.masses[idx].pos = [a, b];
        let (st, d) = solve(spec, &trial.to_measure(shape)?, &cfg, Some(base.clone()))?;
        let e = d.last_energy().unwrap_or(f64::INFINITY);
        if e < energy {
            *masses = trial;
            energy = e;
            base = st;
        }
    }
    Ok(base)
}
