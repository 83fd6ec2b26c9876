//! Energy families, their primal evaluation, and the per-node projections
//! onto the dual constraint sets.
//!
//! The curvature families lift a planar curve penalty `g f(kappa)` with
//!
//! * TAC: `f(t) = 1 + alpha |t|`
//! * TRL: `f(t) = sqrt(1 + alpha^2 t^2)`
//! * EL:  `f(t) = 1 + alpha^2 t^2`
//!
//! Each one is the support function of a convex set in the `(a, b)` plane
//! (`a` paired with the tangential flux, `b` with the orientation flux):
//!
//! * TAC: `{a <= 1, |b| <= alpha}`
//! * TRL: `{max(0, a)^2 + (b / alpha)^2 <= 1}`
//! * EL:  `{a + b^2 / (2 alpha)^2 <= 1}`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{average, DualField, EdgeField, GridMode, GridShape, NodeField, Stencil};
use crate::rototrans::AngleTable;

/// Relative tolerance used to decide that a lifted flux is tangent to its fiber.
pub const COLLINEARITY_TOL: f64 = 1e-9;
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 30;
const BISECTION_STEPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnergyFamily {
    /// Weighted l1 norm of the forward stencil: the grid-graph problem.
    L1,
    /// Weighted Euclidean norm of the forward stencil.
    L2Forward,
    /// Weighted Euclidean norm of the averaged stencil.
    L2Averaged,
    RotoTac,
    RotoTrl,
    RotoEl,
}

impl EnergyFamily {
    pub fn is_roto(self) -> bool {
        self.curvature().is_some()
    }

    pub fn curvature(self) -> Option<CurvatureFamily> {
        match self {
            EnergyFamily::RotoTac => Some(CurvatureFamily::Tac),
            EnergyFamily::RotoTrl => Some(CurvatureFamily::Trl),
            EnergyFamily::RotoEl => Some(CurvatureFamily::El),
            _ => None,
        }
    }

    pub fn stencil(self) -> Stencil {
        match self {
            EnergyFamily::L1 | EnergyFamily::L2Forward => Stencil::Forward,
            _ => Stencil::Averaged,
        }
    }

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            EnergyFamily::L1 => "l1",
            EnergyFamily::L2Forward => "l2f",
            EnergyFamily::L2Averaged => "l2a",
            EnergyFamily::RotoTac => "tac",
            EnergyFamily::RotoTrl => "trl",
            EnergyFamily::RotoEl => "el",
        }
    }
}

impl std::str::FromStr for EnergyFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "l1" => EnergyFamily::L1,
            "l2f" => EnergyFamily::L2Forward,
            "l2a" => EnergyFamily::L2Averaged,
            "tac" => EnergyFamily::RotoTac,
            "trl" => EnergyFamily::RotoTrl,
            "el" => EnergyFamily::RotoEl,
            other => return Err(Error::Config(format!("unknown energy `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurvatureFamily {
    Tac,
    Trl,
    El,
}

/// The convex set whose support function is the perspective of `f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlaneSet {
    pub family: CurvatureFamily,
    pub alpha: f64,
}

impl HalfPlaneSet {
    pub fn new(family: CurvatureFamily, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { family, alpha })
    }

    /// Defining inequality `phi(a, b) <= 0`; positive values measure the violation.
    pub fn residual(&self, a: f64, b: f64) -> f64 {
        let al = self.alpha;
        match self.family {
            CurvatureFamily::Tac => (a - 1.0).max(b.abs() - al),
            CurvatureFamily::Trl => a.max(0.0).powi(2) + (b / al).powi(2) - 1.0,
            CurvatureFamily::El => a + b * b / (4.0 * al * al) - 1.0,
        }
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        self.residual(a, b) <= 0.0
    }

    /// The curvature penalty `f`.
    pub fn f(&self, t: f64) -> f64 {
        let al = self.alpha;
        match self.family {
            CurvatureFamily::Tac => 1.0 + al * t.abs(),
            CurvatureFamily::Trl => (1.0 + al * al * t * t).sqrt(),
            CurvatureFamily::El => 1.0 + al * al * t * t,
        }
    }

    /// `f^inf(t) = lim f(s t) / s`.
    pub fn recession(&self, t: f64) -> f64 {
        match self.family {
            CurvatureFamily::Tac | CurvatureFamily::Trl => self.alpha * t.abs(),
            CurvatureFamily::El if t == 0.0 => 0.0,
            CurvatureFamily::El => f64::INFINITY,
        }
    }

    /// Perspective `h(s, t) = s f(t / s)`, `f^inf(t)` at `s = 0`, `+inf` for `s < 0`.
    pub fn perspective(&self, s: f64, t: f64) -> f64 {
        if s > 0.0 {
            s * self.f(t / s)
        } else if s == 0.0 {
            self.recession(t)
        } else {
            f64::INFINITY
        }
    }

    /// Euclidean projection of `(a, b)` onto the set.
    pub fn project(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        project_halfplane_set((a, b), *self, NEWTON_TOL, NEWTON_MAX_ITER)
    }
}

/// Newton on a decreasing convex scalar equation `F(x) = 0` with `F(0) > 0`,
/// falling back to bisection on `[0, hi]` if Newton stalls.
fn monotone_root(f: impl Fn(f64) -> (f64, f64), hi: f64, tol: f64, max_iter: usize) -> Option<f64> {
    let mut x = 0.0;
    for _ in 0..max_iter {
        let (v, dv) = f(x);
        if v.abs() <= tol || dv >= 0.0 {
            if v.abs() <= tol {
                return Some(x);
            }
            break;
        }
        let step = v / dv;
        let next = x - step;
        if !(next.is_finite()) {
            break;
        }
        if (next - x).abs() <= tol * (1.0 + x.abs()) {
            return Some(next);
        }
        x = next;
    }
    let (mut lo, mut hi) = (0.0, hi);
    if f(hi).0 > 0.0 {
        return None;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if f(mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Euclidean projection of `point` onto the curvature set `set`.
///
/// TAC clamps coordinatewise. TRL clamps `b` on the left half plane and
/// otherwise projects onto the ellipse arc, in closed form when `alpha = 1`
/// and by Newton on the multiplier equation otherwise. EL solves the
/// multiplier equation of the parabola `a = 1 - b^2 / (4 alpha^2)` by Newton.
pub fn project_halfplane_set(point: (f64, f64), set: HalfPlaneSet, tol: f64, max_iter: usize) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("projection tolerance must be positive, got {tol}")));
    }
    let (a0, b0) = point;
    let al = set.alpha;
    if set.contains(a0, b0) {
        return Ok(point);
    }
    let fail = |reason: &str| Error::ProjectionFailed { node: [0; 3], reason: reason.into() };
    match set.family {
        CurvatureFamily::Tac => Ok((a0.min(1.0), b0.clamp(-al, al))),
        CurvatureFamily::Trl if a0 <= 0.0 => Ok((a0, b0.clamp(-al, al))),
        CurvatureFamily::Trl if al == 1.0 => {
            let r = a0.hypot(b0);
            Ok((a0 / r, b0 / r))
        }
        CurvatureFamily::Trl => {
            // nearest point of the ellipse a^2 + b^2/alpha^2 = 1:
            // a = a0 / (1 + t), b = alpha^2 b0 / (alpha^2 + t), t >= 0
            let al2 = al * al;
            let f = |t: f64| {
                let ea = a0 / (1.0 + t);
                let eb = al * b0 / (al2 + t);
                let v = ea * ea + eb * eb - 1.0;
                let dv = -2.0 * ea * ea / (1.0 + t) - 2.0 * eb * eb / (al2 + t);
                (v, dv)
            };
            let hi = (a0 * a0 + al2 * b0 * b0).sqrt() + 1.0;
            let t = monotone_root(f, hi, tol, max_iter).ok_or_else(|| fail("TRL multiplier not bracketed"))?;
            let (a, b) = (a0 / (1.0 + t), al2 * b0 / (al2 + t));
            // pull back onto the set if rounding left it a hair outside
            let r = (a * a + (b / al).powi(2)).sqrt();
            Ok(if r > 1.0 { (a / r, b / r) } else { (a, b) })
        }
        CurvatureFamily::El => {
            // a = a0 - l, b = b0 / (1 + 2 c l), with c = 1 / (4 alpha^2)
            let c = 1.0 / (4.0 * al * al);
            let f = |l: f64| {
                let s = 1.0 + 2.0 * c * l;
                let v = a0 - l + c * b0 * b0 / (s * s) - 1.0;
                let dv = -1.0 - 4.0 * c * c * b0 * b0 / (s * s * s);
                (v, dv)
            };
            let hi = (a0 - 1.0 + c * b0 * b0).max(0.0) + 1.0;
            let l = monotone_root(f, hi, tol, max_iter).ok_or_else(|| fail("EL multiplier not bracketed"))?;
            let b = b0 / (1.0 + 2.0 * c * l);
            let a = (a0 - l).min(1.0 - c * b * b);
            Ok((a, b))
        }
    }
}

/// Energy family, weight, and parameters of one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergySpec {
    pub family: EnergyFamily,
    /// `g` with `0 <= g <= 1`; planar for the curvature families.
    pub weight: NodeField,
    pub alpha: Option<f64>,
    pub gmax: Option<f64>,
}

impl EnergySpec {
    pub fn new(family: EnergyFamily, weight: NodeField, alpha: Option<f64>) -> Result<Self> {
        if let Some(v) = weight.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("weights must lie in [0, 1], found {v}")));
        }
        match (family.is_roto(), alpha) {
            (true, Some(a)) if a > 0.0 && a.is_finite() => {}
            (true, _) => return Err(Error::Config("curvature energies need alpha > 0".into())),
            (false, Some(_)) => return Err(Error::Config(format!("alpha is meaningless for {}", family.name()))),
            (false, None) => {}
        }
        if family.is_roto() && weight.shape().mode() != GridMode::Plane {
            return Err(Error::Config("curvature energies take a planar weight".into()));
        }
        Ok(Self { family, weight, alpha, gmax: None })
    }

    pub fn with_gmax(mut self, gmax: f64) -> Result<Self> {
        if !(gmax > 0.0 && gmax < 1.0) {
            return Err(Error::Config(format!("gmax must lie in (0, 1), got {gmax}")));
        }
        self.gmax = Some(gmax);
        Ok(self)
    }

    pub fn halfplane_set(&self) -> Option<HalfPlaneSet> {
        let family = self.family.curvature()?;
        Some(HalfPlaneSet { family, alpha: self.alpha.expect("validated in EnergySpec::new") })
    }

    /// Check that a field on `shape` can be measured with this energy.
    pub fn check_shape(&self, shape: GridShape) -> Result<()> {
        let ok = if self.family.is_roto() {
            shape.mode() == GridMode::Lifted && shape.planar() == self.weight.shape()
        } else {
            shape.mode() != GridMode::Lifted && shape == self.weight.shape()
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} energy with a {} weight cannot act on a {} grid",
                self.family.name(),
                self.weight.shape(),
                shape
            )))
        }
    }

    /// Weight at node `n` of a grid of `shape` (broadcast over orientations).
    #[inline]
    pub fn weight_at(&self, shape: GridShape, n: usize) -> f64 {
        match shape.mode() {
            GridMode::Lifted => self.weight.values()[n / shape.dim(2)],
            _ => self.weight.values()[n],
        }
    }
}

/// Per-node value of the energy integrand for the vector `v = (Az)_n`.
fn node_energy(spec: &EnergySpec, v: &[f64], k_dir: Option<(f64, f64)>) -> f64 {
    match spec.family {
        EnergyFamily::L1 => v.iter().map(|x| x.abs()).sum(),
        EnergyFamily::L2Forward | EnergyFamily::L2Averaged => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        _ => {
            let set = spec.halfplane_set().expect("roto family");
            let (c, s) = k_dir.expect("roto families need an orientation");
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let lambda = v[0] * c + v[1] * s;
            let perp = (v[0] - lambda * c).hypot(v[1] - lambda * s);
            if perp > COLLINEARITY_TOL * norm {
                return f64::INFINITY;
            }
            let lambda = if lambda.abs() <= COLLINEARITY_TOL * norm { 0.0 } else { lambda };
            set.perspective(lambda, v[2])
        }
    }
}

/// `sum_n g_n |(Az)_n|` with the family's norm and stencil. Curvature
/// families return `+inf` as soon as one node has spatial flux off its
/// orientation or flowing backwards.
pub fn primal_energy(z: &EdgeField, spec: &EnergySpec) -> Result<f64> {
    let shape = z.shape();
    spec.check_shape(shape)?;
    let az = average(z, spec.family.stencil());
    Ok(energy_of_average(&az, spec))
}

pub(crate) fn energy_of_average(az: &DualField, spec: &EnergySpec) -> f64 {
    let shape = az.shape();
    let angles = spec.family.is_roto().then(|| AngleTable::new(shape.dim(2)));
    let mut total = 0.0;
    for (n, v) in az.nodes().enumerate() {
        let g = spec.weight_at(shape, n);
        if g == 0.0 {
            continue;
        }
        let dir = angles.as_ref().map(|t| t.direction(n % shape.dim(2)));
        total += g * node_energy(spec, v, dir);
    }
    total
}

/// Projection onto `{p : ||p_n||_* <= g_n}` for the curvature-free families.
pub fn project_dual(p: &DualField, spec: &EnergySpec) -> Result<DualField> {
    let mut q = p.clone();
    project_dual_in_place(&mut q, spec, None)?;
    Ok(q)
}

/// Projection onto the lifted set `C_{g,h}`: the tangential and orientation
/// parts are projected onto `g C`, the part orthogonal to the fiber direction
/// is left untouched.
pub fn project_dual_roto(p: &DualField, spec: &EnergySpec, angles: &AngleTable) -> Result<DualField> {
    let mut q = p.clone();
    project_dual_in_place(&mut q, spec, Some(angles))?;
    Ok(q)
}

/// In-place dual projection for any family. `angles` is required for the
/// curvature families.
pub fn project_dual_in_place(p: &mut DualField, spec: &EnergySpec, angles: Option<&AngleTable>) -> Result<()> {
    let shape = p.shape();
    spec.check_shape(shape)?;
    match spec.family {
        EnergyFamily::L1 => {
            for n in 0..shape.node_count() {
                let g = spec.weight_at(shape, n);
                for x in p.node_mut(n) {
                    *x = x.clamp(-g, g);
                }
            }
        }
        EnergyFamily::L2Forward | EnergyFamily::L2Averaged => {
            for n in 0..shape.node_count() {
                let g = spec.weight_at(shape, n);
                let v = p.node_mut(n);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > g {
                    let s = if norm > 0.0 { g / norm } else { 0.0 };
                    v.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        _ => {
            let set = spec.halfplane_set().expect("roto family");
            let angles = angles.ok_or_else(|| Error::Config("curvature projection needs angles".into()))?;
            let k_count = shape.dim(2);
            if angles.len() != k_count {
                return Err(Error::ShapeMismatch(format!(
                    "{} angles for a grid with {} orientations",
                    angles.len(),
                    k_count
                )));
            }
            for n in 0..shape.node_count() {
                let g = spec.weight_at(shape, n);
                let v = p.node_mut(n);
                let (c, s) = angles.direction(n % k_count);
                let tang = v[0] * c + v[1] * s;
                if g == 0.0 {
                    // the set degenerates to the orthogonal line
                    v[0] -= tang * c;
                    v[1] -= tang * s;
                    v[2] = 0.0;
                    continue;
                }
                let (a, b) = project_halfplane_set((tang / g, v[2] / g), set, NEWTON_TOL, NEWTON_MAX_ITER).map_err(
                    |e| match e {
                        Error::ProjectionFailed { reason, .. } => {
                            Error::ProjectionFailed { node: shape.coords(n), reason }
                        }
                        other => other,
                    },
                )?;
                let shift = g * a - tang;
                v[0] += shift * c;
                v[1] += shift * s;
                v[2] = g * b;
            }
        }
    }
    Ok(())
}
