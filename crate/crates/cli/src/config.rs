//! Run configuration: a flat JSON file whose keys mirror the flags. Flags
//! given on the command line win over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chargepath::endpoints::BilevelConfig;
use chargepath::energies::EnergyFamily;
use chargepath::pdhg::SolverConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Energy: l1, l2f, l2a, tac, trl, el
    #[arg(long)]
    pub energy: Option<String>,
    /// Curvature weight of tac/trl/el
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Threshold on g for mass placement and moves
    #[arg(long)]
    pub gmax: Option<f64>,
    /// Initial source/sink pairs (extract)
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub post_steps: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Solver steps (geodesic, roto)
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian blur of the potential, standard deviation in pixels
    #[arg(long)]
    pub blur: Option<f64>,
    /// Number of orientations of the lifted grid
    #[arg(long)]
    pub angles: Option<usize>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `self` with every value set in `flags` replaced.
    pub fn merged(mut self, flags: &RunConfig) -> Self {
        overlay!(self, flags; energy, alpha, gmax, pairs, inner_steps, post_steps, max_outer, steps, tau,
            sigma, seed, blur, angles, out);
        self
    }

    pub fn family(&self, default: EnergyFamily) -> Result<EnergyFamily> {
        match &self.energy {
            Some(e) => Ok(e.parse()?),
            None => Ok(default),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn solver(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(s) = self.steps {
            c.max_steps = s;
        }
        c.tau = self.tau;
        c.sigma = self.sigma;
        c.seed = self.seed.unwrap_or(0);
        c
    }

    pub fn bilevel(&self) -> BilevelConfig {
        let mut c = BilevelConfig::default();
        macro_rules! take {
            ($($src:ident => $dst:ident),*) => { $( if let Some(v) = self.$src { c.$dst = v; } )* };
        }
        take!(pairs => n_pairs, gmax => gmax, inner_steps => inner_steps, post_steps => post_steps,
            max_outer => max_outer, seed => seed, angles => angles);
        c.tau = self.tau;
        c.sigma = self.sigma;
        c
    }

    /// Rejects combinations the solvers cannot run.
    pub fn validate(&self, family: EnergyFamily, lifted_command: bool) -> Result<()> {
        if family.is_roto() && self.alpha.is_none() {
            bail!("--energy {} needs --alpha", family.name());
        }
        if !family.is_roto() && self.alpha.is_some() {
            bail!("--alpha only applies to tac, trl and el");
        }
        if lifted_command && !family.is_roto() {
            bail!("roto needs a curvature energy (tac, trl or el), got {}", family.name());
        }
        if let Some(b) = self.blur {
            if !(b >= 0.0 && b.is_finite()) {
                bail!("--blur must be a finite nonnegative number");
            }
        }
        if matches!(self.angles, Some(k) if k < 4) {
            bail!("--angles must be at least 4");
        }
        Ok(())
    }
}
