//! The lifted position-orientation domain: angle tables, lifted Dirac masses,
//! and marginalization of lifted fields back onto the image plane.

use crate::endpoints::{group_curves, trace_curves, Curve};
use crate::energies::EnergySpec;
use crate::error::{Error, Result};
use crate::fields::{EdgeField, GridMode, GridShape, NodeField};
use crate::pdhg::{solve, Diagnostics, SolverConfig, SolverState};

/// Default number of orientations.
pub const DEFAULT_ANGLES: usize = 30;

/// Orientations `theta_k = 2 pi k / K` and their unit vectors, where the
/// first component points along axis 0 (rows) and the second along axis 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleTable {
    dirs: Vec<(f64, f64)>,
}

impl AngleTable {
    pub fn new(k: usize) -> Self {
        let dirs = (0..k)
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / k as f64;
                (th.cos(), th.sin())
            })
            .collect();
        Self { dirs }
    }

    /// Like [`AngleTable::new`] but enforcing `K >= 4`.
    pub fn checked(k: usize) -> Result<Self> {
        if k < 4 {
            return Err(Error::Config(format!("need at least 4 orientations, got {k}")));
        }
        Ok(Self::new(k))
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn angle(&self, k: usize) -> f64 {
        std::f64::consts::TAU * k as f64 / self.dirs.len() as f64
    }

    pub fn direction(&self, k: usize) -> (f64, f64) {
        self.dirs[k]
    }

    /// Index of the orientation closest to the direction `(d0, d1)`.
    pub fn nearest(&self, d0: f64, d1: f64) -> usize {
        let th = d1.atan2(d0).rem_euclid(std::f64::consts::TAU);
        let k = self.dirs.len();
        ((th / std::f64::consts::TAU * k as f64).round() as usize) % k
    }
}

fn require_lifted(shape: GridShape) -> Result<()> {
    if shape.mode() != GridMode::Lifted {
        return Err(Error::ShapeMismatch(format!("expected a lifted grid, got {shape}")));
    }
    Ok(())
}

/// Add `sign` at lifted node `(i, j, k)` of `mu`.
pub fn lifted_dirac(mu: &mut NodeField, node: [usize; 2], k: usize, sign: f64) -> Result<()> {
    let shape = mu.shape();
    require_lifted(shape)?;
    let c = [node[0], node[1], k];
    if !shape.contains(c) {
        return Err(Error::OutOfRange(format!("lifted node {c:?} outside {shape}")));
    }
    let i = shape.index(c);
    mu.values_mut()[i] += sign;
    Ok(())
}

/// Sum a lifted node field over orientations.
pub fn marginalize_nodes(mu: &NodeField) -> Result<NodeField> {
    let shape = mu.shape();
    require_lifted(shape)?;
    let k = shape.dim(2);
    let values = mu.values().chunks_exact(k).map(|c| c.iter().sum()).collect();
    NodeField::from_vec(shape.planar(), values)
}

/// Planar field obtained by summing the two spatial components over
/// orientations. Commutes with the divergence: `D*(marginalize z)` equals the
/// orientation sum of `D* z`.
pub fn marginalize(z: &EdgeField) -> Result<EdgeField> {
    let shape = z.shape();
    require_lifted(shape)?;
    let k = shape.dim(2);
    let planar = shape.planar();
    let comps = (0..2).map(|a| z.component(a).chunks_exact(k).map(|c| c.iter().sum()).collect()).collect();
    EdgeField::from_components(planar, comps)
}

/// Output of a lifted solve.
#[derive(Clone, Debug)]
pub struct LiftedSolution {
    pub state: SolverState,
    pub diagnostics: Diagnostics,
    /// Marginal of the lifted flow on the image plane.
    pub planar: EdgeField,
    /// Paths traced in the lifted graph, so that crossing curves keep their
    /// identity where their planar projections meet.
    pub lifted_curves: Vec<Curve>,
    /// `lifted_curves` projected to the plane and grouped by endpoints.
    pub curves: Vec<Curve>,
}

/// Solves a curvature-penalized problem on the lifted grid of `mu`, then
/// marginalizes and traces the result.
pub fn solve_lifted(
    spec: &EnergySpec,
    mu: &NodeField,
    config: &SolverConfig,
    warm: Option<SolverState>,
) -> Result<LiftedSolution> {
    if !spec.family.is_roto() {
        return Err(Error::Config(format!("{} is not a curvature energy", spec.family.name())));
    }
    require_lifted(mu.shape())?;
    AngleTable::checked(mu.shape().dim(2))?;
    let (state, diagnostics) = solve(spec, mu, config, warm)?;
    let planar = marginalize(&state.z)?;
    let lifted_curves = trace_curves(&state.z, mu)?;
    let projected: Vec<Curve> = lifted_curves.iter().map(Curve::to_planar).collect();
    let curves = group_curves(&projected, 0.0);
    Ok(LiftedSolution { state, diagnostics, planar, lifted_curves, curves })
}

/// For every pair of planar endpoints carrying at least `min_flux` in
/// total, the heaviest lifted path between them.
pub fn dominant_paths(lifted: &[Curve], min_flux: f64) -> Vec<Curve> {
    let key = |c: &Curve| ([c.start()[0], c.start()[1]], [c.end()[0], c.end()[1]]);
    let mut groups: Vec<(([usize; 2], [usize; 2]), Curve, f64)> = Vec::new();
    for c in lifted {
        match groups.iter_mut().find(|g| g.0 == key(c)) {
            Some(g) => {
                g.2 += c.flux;
                if c.flux > g.1.flux {
                    g.1 = c.clone();
                }
            }
            None => groups.push((key(c), c.clone(), c.flux)),
        }
    }
    groups.into_iter().filter(|g| g.2 >= min_flux).map(|g| g.1).collect()
}

/// Largest rotation (radians) a lifted curve performs without moving in the
/// plane: the longest run of consecutive orientation steps at one pixel.
pub fn max_turning(curve: &Curve, k: usize) -> f64 {
    let step = std::f64::consts::TAU / k as f64;
    let mut best = 0usize;
    let mut run = 0isize;
    for w in curve.nodes.windows(2) {
        if w[0][0] == w[1][0] && w[0][1] == w[1][1] {
            let d = if (w[0][2] + 1) % k == w[1][2] { 1 } else { -1 };
            run = if run.signum() == d || run == 0 { run + d } else { d };
        } else {
            run = 0;
        }
        best = best.max(run.unsigned_abs());
    }
    best as f64 * step
}
