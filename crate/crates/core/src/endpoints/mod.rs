//! Endpoint search: Dirac masses, their move rules, curve tracing, and the
//! outer loop that alternates flow solves with mass updates.
//!
//! Sign convention, fixed everywhere: a mass of sign `-1` is a source, `+1` a
//! sink, and `D*z = mu` makes a unit flow run from the source to the sink.

mod bilevel;
mod moves;
mod tracing;

pub use bilevel::{run_bilevel, BilevelConfig, BilevelResult, Snapshot};
pub use moves::{
    estimate_orientation, init_pairs, merge_close_opposites, move_mass, postprocess_merge, shortening_direction,
    update_theta, MoveCase,
};
pub use tracing::{group_curves, trace_curves, trace_curves_with_residual, Curve, FLUX_TOL};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GridMode, GridShape, NodeField};

/// Which rules a mass may still use: shortening only happens before the
/// first lengthening or shifting move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Shortening,
    Lengthening,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiracMass {
    pub pos: [usize; 2],
    /// `-1` source, `+1` sink.
    pub sign: i8,
    /// Orientation index on lifted grids.
    pub angle: Option<usize>,
    pub visited: BTreeSet<[usize; 2]>,
    pub stage: Stage,
}

impl DiracMass {
    pub fn new(pos: [usize; 2], sign: i8) -> Self {
        assert!(sign == 1 || sign == -1, "mass sign must be +-1");
        Self { pos, sign, angle: None, visited: BTreeSet::new(), stage: Stage::Shortening }
    }

    pub fn with_angle(mut self, k: usize) -> Self {
        self.angle = Some(k);
        self
    }

    pub fn record(&self) -> MassRecord {
        MassRecord { i: self.pos[0], j: self.pos[1], sign: self.sign, k: self.angle, stage: self.stage }
    }
}

/// Serialized form of a mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub i: usize,
    pub j: usize,
    pub sign: i8,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    pub stage: Stage,
}

/// Serialized form of a curve: `[[i, j], ...]` (or `[i, j, k]` in volumes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub nodes: Vec<Vec<usize>>,
    pub flux: f64,
}

impl CurveRecord {
    pub fn from_curve(c: &Curve, ndim: usize) -> Self {
        Self { nodes: c.nodes.iter().map(|n| n[..ndim].to_vec()).collect(), flux: c.flux }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiracSet {
    pub masses: Vec<DiracMass>,
}

impl DiracSet {
    pub fn new(masses: Vec<DiracMass>) -> Self {
        Self { masses }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_sign(&self) -> i64 {
        self.masses.iter().map(|m| m.sign as i64).sum()
    }

    pub fn records(&self) -> Vec<MassRecord> {
        self.masses.iter().map(DiracMass::record).collect()
    }

    /// The measure `mu` on a planar or lifted grid.
    pub fn to_measure(&self, shape: GridShape) -> Result<NodeField> {
        if shape.mode() == GridMode::Volume {
            return Err(Error::Config("Dirac sets live on planar or lifted grids".into()));
        }
        let mut mu = NodeField::zeros(shape);
        for m in &self.masses {
            let k = match (shape.mode(), m.angle) {
                (GridMode::Lifted, Some(k)) => k,
                (GridMode::Lifted, None) => {
                    return Err(Error::Config(format!("mass at {:?} has no orientation", m.pos)))
                }
                _ => 0,
            };
            let c = [m.pos[0], m.pos[1], k];
            if !shape.contains(c) {
                return Err(Error::OutOfRange(format!("mass at {c:?} outside {shape}")));
            }
            let i = shape.index(c);
            mu.values_mut()[i] += m.sign as f64;
        }
        Ok(mu)
    }
}
