mod config;
mod ingest;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use chargepath::endpoints::{
    group_curves, run_bilevel, trace_curves, CurveRecord, DiracMass, DiracSet, MassRecord, Stage,
};
use chargepath::energies::{EnergyFamily, EnergySpec};
use chargepath::fields::{average, read_binary, read_text, voxel_dump, write_binary, write_text};
use chargepath::fields::{EdgeField, FieldData, GridShape, NodeField, Stencil};
use chargepath::fixtures;
use chargepath::pdhg::{solve, Diagnostics};
use chargepath::rototrans::{solve_lifted, AngleTable, DEFAULT_ANGLES};

use config::RunConfig;
use ingest::ingest_potential;
use render::{render, Overlay};

#[derive(Parser)]
#[command(name = "chargepath", version, about = "Curve extraction as a minimal flow between point charges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON file with flat keys named like the flags; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.merged(&self.run))
    }
}

#[derive(clap::Args)]
struct Endpoints {
    /// Source node `i,j` (planar), `i,j,k` (volume, or lifted orientation); repeatable
    #[arg(long = "source", value_name = "I,J[,K]")]
    sources: Vec<String>,
    /// Sink node, same format as --source; repeatable
    #[arg(long = "sink", value_name = "I,J[,K]")]
    sinks: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal flow between fixed endpoints on an image or volume
    Geodesic {
        input: PathBuf,
        #[command(flatten)]
        ends: Endpoints,
        #[command(flatten)]
        common: Common,
    },
    /// Curvature-penalized flow on the lifted grid between fixed endpoints;
    /// a missing orientation of a single pair points from source to sink
    Roto {
        input: PathBuf,
        #[command(flatten)]
        ends: Endpoints,
        #[command(flatten)]
        common: Common,
    },
    /// Endpoint search followed by a final solve
    Extract {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Draw the potential with an optional flow, curves and masses
    Render {
        input: PathBuf,
        /// Flow field dump (text or binary)
        #[arg(long)]
        field: Option<PathBuf>,
        /// JSON list of curves
        #[arg(long)]
        curves: Option<PathBuf>,
        /// JSON list of masses
        #[arg(long)]
        masses: Option<PathBuf>,
        #[arg(long)]
        blur: Option<f64>,
        /// Output image (.png or .ppm)
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Convert a field dump between the text, binary and voxel formats
    Dump {
        input: PathBuf,
        #[arg(long, value_enum)]
        format: DumpFormat,
        /// Voxel format: keep nodes whose |Az| exceeds this
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Write a synthetic potential (PGM/PNG image, or raw volume for tubes)
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of strokes (chromosomes)
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Text,
    Binary,
    Voxel,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Comma,
    Chromosomes,
    Segment,
    Quarter,
    Crossing,
    Tubes,
}

fn parse_node(s: &str) -> Result<Vec<usize>> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad node `{s}`, expected comma separated indices"))?;
    if !(2..=3).contains(&v.len()) {
        bail!("node `{s}` needs 2 or 3 indices");
    }
    Ok(v)
}

/// Endpoints as `(node, sign)`, sources first.
fn parse_endpoints(ends: &Endpoints) -> Result<Vec<(Vec<usize>, i8)>> {
    let mut out = Vec::new();
    for s in &ends.sources {
        out.push((parse_node(s)?, -1));
    }
    for s in &ends.sinks {
        out.push((parse_node(s)?, 1));
    }
    if out.is_empty() {
        bail!("no endpoints given, use --source and --sink");
    }
    let total: i64 = out.iter().map(|e| e.1 as i64).sum();
    if total != 0 {
        bail!("endpoints have total sign {total}; sources and sinks must balance");
    }
    if out.iter().any(|e| e.0.len() != out[0].0.len()) {
        bail!("all endpoints need the same number of indices");
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_field(dir: &Path, stem: &str, field: FieldData) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.cfld")))?);
    write_text(&mut f, &field)?;
    write_binary(&dir.join(format!("{stem}.bin")), &field)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn write_log(dir: &Path, diag: &Diagnostics) -> Result<()> {
    fs::write(dir.join("diagnostics.log"), diag.to_log())?;
    Ok(())
}

fn load_potential(input: &Path, cfg: &RunConfig) -> Result<NodeField> {
    ingest_potential(input, cfg.blur)
}

fn check_node(shape: GridShape, c: [usize; 3]) -> Result<()> {
    if !shape.contains(c) {
        return Err(chargepath::Error::OutOfRange(format!("endpoint {c:?} outside {shape}")).into());
    }
    Ok(())
}

fn geodesic(input: &Path, ends: &Endpoints, cfg: &RunConfig) -> Result<()> {
    let family = cfg.family(EnergyFamily::L2Averaged)?;
    if family.is_roto() {
        return roto(input, ends, cfg);
    }
    cfg.validate(family, false)?;
    let points = parse_endpoints(ends)?;
    let g = load_potential(input, cfg)?;
    let shape = g.shape();
    let mut mu = NodeField::zeros(shape);
    for (p, sign) in &points {
        if p.len() != shape.ndim() {
            bail!("endpoint {p:?} has {} indices, the potential is {}-dimensional", p.len(), shape.ndim());
        }
        let c = [p[0], p[1], p.get(2).copied().unwrap_or(0)];
        check_node(shape, c)?;
        mu.set(c, mu.get(c) + *sign as f64);
    }
    let spec = EnergySpec::new(family, g.clone(), None)?;
    let (state, diag) = solve(&spec, &mu, &cfg.solver(), None)?;
    let curves = group_curves(&trace_curves(&state.z, &mu)?, 0.0);
    let records: Vec<CurveRecord> = curves.iter().map(|c| CurveRecord::from_curve(c, shape.ndim())).collect();
    let masses: Vec<MassRecord> = points
        .iter()
        .map(|(p, s)| MassRecord { i: p[0], j: p[1], sign: *s, k: p.get(2).copied(), stage: Stage::Shortening })
        .collect();

    let dir = prepare_out(cfg)?;
    write_field(&dir, "field", state.z.clone().into())?;
    write_json(&dir.join("curves.json"), &records)?;
    write_json(&dir.join("masses.json"), &masses)?;
    write_log(&dir, &diag)?;
    if shape.ndim() == 3 {
        let p = average(&state.z, Stencil::Averaged);
        fs::write(dir.join("voxels.txt"), voxel_dump(&p, 1e-3))?;
    }
    render(&g, &Overlay { field: Some(&state.z), curves: &records, masses: &masses }, &dir.join("render.png"))?;
    println!(
        "energy {:.6} after {} steps, {} curves",
        diag.last_energy().unwrap_or(f64::NAN),
        diag.steps,
        records.len()
    );
    Ok(())
}

fn roto(input: &Path, ends: &Endpoints, cfg: &RunConfig) -> Result<()> {
    let family = cfg.family(EnergyFamily::RotoEl)?;
    cfg.validate(family, true)?;
    let points = parse_endpoints(ends)?;
    let g = load_potential(input, cfg)?;
    if g.shape().ndim() != 2 {
        bail!("curvature energies need a planar image");
    }
    let k = cfg.angles.unwrap_or(DEFAULT_ANGLES);
    let angles = AngleTable::checked(k)?;
    let d = g.shape().dims();
    let shape = GridShape::lifted(d[0], d[1], k)?;

    let missing = points.iter().filter(|p| p.0.len() == 2).count();
    let inferred = if missing > 0 {
        if points.len() != 2 {
            bail!("orientations can only be inferred for a single pair; give i,j,k for every endpoint");
        }
        let (a, b) = (&points[0].0, &points[1].0);
        Some(angles.nearest(b[0] as f64 - a[0] as f64, b[1] as f64 - a[1] as f64))
    } else {
        None
    };
    let set = DiracSet::new(
        points
            .iter()
            .map(|(p, s)| {
                let k = p.get(2).copied().or(inferred).expect("orientation known");
                check_node(shape, [p[0], p[1], k])?;
                Ok(DiracMass::new([p[0], p[1]], *s).with_angle(k))
            })
            .collect::<Result<_>>()?,
    );
    let mu = set.to_measure(shape)?;
    let spec = EnergySpec::new(family, g.clone(), cfg.alpha)?;
    let sol = solve_lifted(&spec, &mu, &cfg.solver(), None)?;
    let records: Vec<CurveRecord> = sol.curves.iter().map(|c| CurveRecord::from_curve(c, 2)).collect();
    let lifted: Vec<CurveRecord> = sol.lifted_curves.iter().map(|c| CurveRecord::from_curve(c, 3)).collect();
    let masses = set.records();

    let dir = prepare_out(cfg)?;
    write_field(&dir, "field", sol.planar.clone().into())?;
    write_field(&dir, "field_lifted", sol.state.z.clone().into())?;
    let p = average(&sol.state.z, spec.family.stencil());
    fs::write(dir.join("voxels.txt"), voxel_dump(&p, 1e-3))?;
    write_json(&dir.join("curves.json"), &records)?;
    write_json(&dir.join("curves_lifted.json"), &lifted)?;
    write_json(&dir.join("masses.json"), &masses)?;
    write_log(&dir, &sol.diagnostics)?;
    render(&g, &Overlay { field: Some(&sol.planar), curves: &records, masses: &masses }, &dir.join("render.png"))?;
    println!(
        "energy {:.6} after {} steps, {} curves",
        sol.diagnostics.last_energy().unwrap_or(f64::NAN),
        sol.diagnostics.steps,
        records.len()
    );
    Ok(())
}

fn extract(input: &Path, cfg: &RunConfig) -> Result<()> {
    let family = cfg.family(EnergyFamily::L2Averaged)?;
    cfg.validate(family, false)?;
    let g = load_potential(input, cfg)?;
    let bc = cfg.bilevel();
    let spec = EnergySpec::new(family, g.clone(), cfg.alpha)?.with_gmax(bc.gmax)?;
    let res = run_bilevel(&spec, &bc)?;

    let dir = prepare_out(cfg)?;
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    for s in &res.snapshots {
        write_json(&snaps.join(format!("iter_{:04}.json", s.iteration)), s)?;
    }
    let records: Vec<CurveRecord> = res.curves.iter().map(|c| CurveRecord::from_curve(c, 2)).collect();
    let masses = res.masses.records();
    let planar: EdgeField = if family.is_roto() {
        write_field(&dir, "field_lifted", res.state.z.clone().into())?;
        chargepath::rototrans::marginalize(&res.state.z)?
    } else {
        res.state.z.clone()
    };
    write_field(&dir, "field", planar.clone().into())?;
    write_json(&dir.join("curves.json"), &records)?;
    write_json(&dir.join("masses.json"), &masses)?;
    write_log(&dir, &res.diagnostics)?;
    render(&g, &Overlay { field: Some(&planar), curves: &records, masses: &masses }, &dir.join("render.png"))?;
    println!("{} masses, {} curves after {} outer iterations", masses.len(), records.len(), res.outer_iterations);
    Ok(())
}

fn read_field(path: &Path) -> Result<FieldData> {
    let text = path.extension().is_some_and(|e| e == "cfld" || e == "txt");
    let f = if text {
        read_text(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)?
    } else {
        read_binary(path)?
    };
    Ok(f)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Geodesic { input, ends, common } => geodesic(&input, &ends, &common.resolve()?),
        Command::Roto { input, ends, common } => roto(&input, &ends, &common.resolve()?),
        Command::Extract { input, common } => extract(&input, &common.resolve()?),
        Command::Render { input, field, curves, masses, blur, output } => {
            let g = ingest_potential(&input, blur)?;
            let z = match field {
                Some(p) => match read_field(&p)? {
                    FieldData::Edge(z) => Some(z),
                    _ => bail!("{} is not a flow (edge) field", p.display()),
                },
                None => None,
            };
            let curves: Vec<CurveRecord> = curves.map(|p| read_json(&p)).transpose()?.unwrap_or_default();
            let masses: Vec<MassRecord> = masses.map(|p| read_json(&p)).transpose()?.unwrap_or_default();
            render(&g, &Overlay { field: z.as_ref(), curves: &curves, masses: &masses }, &output)
        }
        Command::Dump { input, format, threshold, output } => {
            let field = read_field(&input)?;
            match format {
                DumpFormat::Text => {
                    let mut f = std::io::BufWriter::new(fs::File::create(&output)?);
                    write_text(&mut f, &field)?;
                }
                DumpFormat::Binary => write_binary(&output, &field)?,
                DumpFormat::Voxel => {
                    let p = match field {
                        FieldData::Edge(z) => average(&z, Stencil::Averaged),
                        FieldData::Dual(p) => p,
                        FieldData::Node(_) => bail!("voxel dumps need a flow or dual field"),
                    };
                    fs::write(&output, voxel_dump(&p, threshold))?;
                }
            }
            Ok(())
        }
        Command::Synth { kind, size, noise, seed, count, output } => {
            let fx = match kind {
                SynthKind::Comma => fixtures::comma_fixture(size, noise, seed),
                SynthKind::Chromosomes => fixtures::chromosomes(size, count, seed),
                SynthKind::Segment => fixtures::dark_segment(size, size / 2, size / 4, size / 5, size - size / 5 - 1),
                SynthKind::Quarter => {
                    fixtures::dark_quarter_circle(size, size, [size / 8, size / 8], size as f64 * 0.7)
                }
                SynthKind::Crossing => {
                    fixtures::crossing_curves(size, size * 5 / 8, 45f64.to_radians(), size as f64 / 3.0, 1.5, 0.2)
                }
                SynthKind::Tubes => {
                    let fx = fixtures::tubes_volume(size, size, size * 3 / 7);
                    ingest::write_volume(&output, &fx.g)?;
                    println!("endpoints {:?}", fx.endpoints);
                    return Ok(());
                }
            };
            render::save_gray(&fx.g, &output)?;
            println!("endpoints {:?}", fx.endpoints);
            Ok(())
        }
    }
}

/// 3 for failures of the numerics, 2 for everything the user can fix.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().any(|c| c.downcast_ref::<chargepath::Error>().is_some_and(|e| e.is_numerical()));
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
