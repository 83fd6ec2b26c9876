//! Field dump formats.
//!
//! Text: one or more records, each a header line
//! `CFLD <ndim> <dims...> <component-tag> [periodic:theta]` followed by the
//! values in storage order, whitespace separated. Node fields use the tag
//! `node`, dual fields `dual` (node dims, vectors interleaved per node), and an
//! edge field is written as one `edge:<axis>` record per axis carrying that
//! component's staggered dims.
//!
//! Binary: raw little-endian `f64` values in the same order (edge components
//! concatenated by axis) next to a JSON sidecar `{dims, component, mode}`
//! holding the node dims.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DualField, EdgeField, GridMode, GridShape, NodeField};
use crate::error::{Error, Result};

const MAGIC: &str = "CFLD";
const PERIODIC_TOKEN: &str = "periodic:theta";

#[derive(Clone, Debug, PartialEq)]
pub enum FieldData {
    Node(NodeField),
    Edge(EdgeField),
    Dual(DualField),
}

impl FieldData {
    pub fn shape(&self) -> GridShape {
        match self {
            FieldData::Node(f) => f.shape(),
            FieldData::Edge(f) => f.shape(),
            FieldData::Dual(f) => f.shape(),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            FieldData::Node(_) => "node",
            FieldData::Edge(_) => "edge",
            FieldData::Dual(_) => "dual",
        }
    }

    fn flat_values(&self) -> Vec<f64> {
        match self {
            FieldData::Node(f) => f.values().to_vec(),
            FieldData::Edge(f) => f.values().copied().collect(),
            FieldData::Dual(f) => f.values().to_vec(),
        }
    }
}

impl From<NodeField> for FieldData {
    fn from(f: NodeField) -> Self {
        FieldData::Node(f)
    }
}

impl From<EdgeField> for FieldData {
    fn from(f: EdgeField) -> Self {
        FieldData::Edge(f)
    }
}

impl From<DualField> for FieldData {
    fn from(f: DualField) -> Self {
        FieldData::Dual(f)
    }
}

fn header(shape: GridShape, dims: [usize; 3], tag: &str) -> String {
    let nd = shape.ndim();
    let mut h = format!("{MAGIC} {nd}");
    for d in &dims[..nd] {
        let _ = write!(h, " {d}");
    }
    let _ = write!(h, " {tag}");
    if shape.mode() == GridMode::Lifted {
        let _ = write!(h, " {PERIODIC_TOKEN}");
    }
    h
}

fn write_values(out: &mut impl Write, values: impl Iterator<Item = f64>, per_line: usize) -> Result<()> {
    let mut line = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 && i % per_line == 0 {
            writeln!(out, "{line}")?;
            line.clear();
        } else if i > 0 {
            line.push(' ');
        }
        // `{:?}` on f64 prints the shortest text that parses back to the same bits.
        let _ = write!(line, "{v:?}");
    }
    if !line.is_empty() {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Write `field` in the text format.
pub fn write_text(out: &mut impl Write, field: &FieldData) -> Result<()> {
    let shape = field.shape();
    match field {
        FieldData::Edge(z) => {
            for a in 0..shape.ndim() {
                writeln!(out, "{}", header(shape, shape.edge_dims(a), &format!("edge:{a}")))?;
                write_values(out, z.component(a).iter().copied(), shape.edge_dims(a)[shape.ndim() - 1])?;
            }
        }
        FieldData::Node(_) | FieldData::Dual(_) => {
            writeln!(out, "{}", header(shape, shape.dims(), field.tag()))?;
            let per_line = match field {
                FieldData::Dual(_) => shape.ndim() * shape.dims()[shape.ndim() - 1],
                _ => shape.dims()[shape.ndim() - 1],
            };
            write_values(out, field.flat_values().into_iter(), per_line)?;
        }
    }
    Ok(())
}

struct Record {
    dims: Vec<usize>,
    tag: String,
    periodic: bool,
    values: Vec<f64>,
}

fn parse_records(input: impl BufRead) -> Result<Vec<Record>> {
    let mut records: Vec<Record> = Vec::new();
    for line in input.lines() {
        let line = line?;
        let mut tokens = line.split_whitespace().peekable();
        match tokens.peek() {
            None => continue,
            Some(&MAGIC) => {
                tokens.next();
                let nd: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad ndim in header `{line}`")))?;
                if !(2..=3).contains(&nd) {
                    return Err(Error::Format(format!("ndim must be 2 or 3, got {nd}")));
                }
                let dims = (0..nd)
                    .map(|_| tokens.next().and_then(|t| t.parse().ok()))
                    .collect::<Option<Vec<usize>>>()
                    .ok_or_else(|| Error::Format(format!("bad dims in header `{line}`")))?;
                let tag = tokens
                    .next()
                    .ok_or_else(|| Error::Format(format!("missing component tag in `{line}`")))?
                    .to_string();
                let periodic = tokens.any(|t| t == PERIODIC_TOKEN);
                records.push(Record { dims, tag, periodic, values: Vec::new() });
            }
            Some(_) => {
                let rec = records.last_mut().ok_or_else(|| Error::Format("values before the first header".into()))?;
                for t in tokens {
                    rec.values.push(t.parse().map_err(|_| Error::Format(format!("not a number: `{t}`")))?);
                }
            }
        }
    }
    Ok(records)
}

fn shape_from_dims(dims: &[usize], periodic: bool) -> Result<GridShape> {
    match (dims, periodic) {
        ([r, c], false) => GridShape::plane(*r, *c),
        ([r, c, k], true) => GridShape::lifted(*r, *c, *k),
        ([r, c, d], false) => GridShape::volume(*r, *c, *d),
        _ => Err(Error::Format(format!("cannot build a grid from dims {dims:?}"))),
    }
}

/// Read one field from the text format.
pub fn read_text(input: impl Read) -> Result<FieldData> {
    let records = parse_records(BufReader::new(input))?;
    let first = records.first().ok_or_else(|| Error::Format("empty dump".into()))?;
    match first.tag.as_str() {
        "node" | "dual" => {
            let shape = shape_from_dims(&first.dims, first.periodic)?;
            let values = first.values.clone();
            if first.tag == "node" {
                Ok(FieldData::Node(NodeField::from_vec(shape, values)?))
            } else {
                Ok(FieldData::Dual(DualField::from_vec(shape, values)?))
            }
        }
        t if t.starts_with("edge:") => {
            // node dims follow from the axis-0 record: one more node than edges
            let mut node_dims = first.dims.clone();
            node_dims[0] += 1;
            let shape = shape_from_dims(&node_dims, first.periodic)?;
            let mut comps = Vec::new();
            for (a, rec) in records.iter().enumerate().take(shape.ndim()) {
                if rec.tag != format!("edge:{a}") {
                    return Err(Error::Format(format!("expected edge:{a}, found {}", rec.tag)));
                }
                comps.push(rec.values.clone());
            }
            Ok(FieldData::Edge(EdgeField::from_components(shape, comps)?))
        }
        t => Err(Error::Format(format!("unknown component tag `{t}`"))),
    }
}

/// JSON sidecar of the binary format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub dims: Vec<usize>,
    pub component: String,
    pub mode: GridMode,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write raw little-endian values to `path` and the header to `path.json`.
pub fn write_binary(path: &Path, field: &FieldData) -> Result<()> {
    let shape = field.shape();
    let header = BinaryHeader {
        dims: shape.dims()[..shape.ndim()].to_vec(),
        component: field.tag().to_string(),
        mode: shape.mode(),
    };
    let values = field.flat_values();
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<FieldData> {
    let header: BinaryHeader = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let shape = match (header.dims.as_slice(), header.mode) {
        ([r, c], GridMode::Plane) => GridShape::plane(*r, *c)?,
        ([r, c, d], GridMode::Volume) => GridShape::volume(*r, *c, *d)?,
        ([r, c, k], GridMode::Lifted) => GridShape::lifted(*r, *c, *k)?,
        (d, m) => return Err(Error::Format(format!("dims {d:?} do not fit mode {m:?}"))),
    };
    match header.component.as_str() {
        "node" => Ok(FieldData::Node(NodeField::from_vec(shape, values)?)),
        "dual" => Ok(FieldData::Dual(DualField::from_vec(shape, values)?)),
        "edge" => {
            let mut comps = Vec::new();
            let mut rest = values.as_slice();
            for a in 0..shape.ndim() {
                let n = shape.edge_count(a);
                if rest.len() < n {
                    return Err(Error::Format("edge data too short".into()));
                }
                comps.push(rest[..n].to_vec());
                rest = &rest[n..];
            }
            if !rest.is_empty() {
                return Err(Error::Format("trailing edge data".into()));
            }
            Ok(FieldData::Edge(EdgeField::from_components(shape, comps)?))
        }
        c => Err(Error::Format(format!("unknown component `{c}`"))),
    }
}

/// Lines `i j k value` for every node whose vector norm exceeds `threshold`,
/// for loading into external volume viewers.
pub fn voxel_dump(p: &DualField, threshold: f64) -> String {
    let shape = p.shape();
    let mut out = String::new();
    for (n, v) in p.nodes().enumerate() {
        let m = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if m > threshold {
            let c = shape.coords(n);
            let _ = writeln!(out, "{} {} {} {m:e}", c[0], c[1], c[2]);
        }
    }
    out
}
