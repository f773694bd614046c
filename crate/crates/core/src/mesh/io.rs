//! TetGen `.node`/`.ele` and legacy ASCII VTK readers and writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Frame, TetMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    TetGen,
    Vtk,
}

impl MeshFormat {
    /// Guess the format from a file extension (`.node`, `.ele` or `.vtk`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "node" | "ele" => Some(MeshFormat::TetGen),
            "vtk" => Some(MeshFormat::Vtk),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TetMesh,
    /// Number of tets whose vertex order was swapped to make them positive.
    pub reoriented: usize,
}

pub fn load_mesh(path: &Path, format: Option<MeshFormat>) -> Result<LoadedMesh> {
    let format = format.or_else(|| MeshFormat::from_path(path)).unwrap_or(MeshFormat::TetGen);
    match format {
        MeshFormat::TetGen => load_tetgen(path),
        MeshFormat::Vtk => load_vtk(path),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Non-empty, comment-stripped lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        let tok: Vec<&str> = line.split_whitespace().collect();
        (!tok.is_empty()).then_some((i + 1, tok))
    })
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("cannot parse {what} from {tok:?}")))
}

/// `.node` and `.ele` paths for a stem or for either file.
pub fn tetgen_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("node") | Some("ele") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut node = stem.clone().into_os_string();
    node.push(".node");
    let mut ele = stem.into_os_string();
    ele.push(".ele");
    (node.into(), ele.into())
}

/// Reads `<stem>.node` and `<stem>.ele`. `path` may name either file or the
/// shared stem. The index base (0 or 1) is taken from the first node index.
pub fn load_tetgen(path: &Path) -> Result<LoadedMesh> {
    let (node_path, ele_path) = tetgen_paths(path);

    let text = read_to_string(&node_path)?;
    let mut lines = data_lines(&text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::parse(&node_path, 1, "missing header"))?;
    if header.len() < 2 {
        return Err(Error::parse(&node_path, hl, "header needs at least <#points> <dim>"));
    }
    let n: usize = num(&node_path, hl, header[0], "point count")?;
    let dim: usize = num(&node_path, hl, header[1], "dimension")?;
    if dim != 3 {
        return Err(Error::parse(&node_path, hl, format!("dimension must be 3, got {dim}")));
    }
    let mut base = None;
    let mut vertices = Vec::with_capacity(n);
    for (ln, tok) in lines.by_ref().take(n) {
        if tok.len() < 4 {
            return Err(Error::parse(&node_path, ln, "expected <index> <x> <y> <z>"));
        }
        let idx: usize = num(&node_path, ln, tok[0], "point index")?;
        let b = *base.get_or_insert(idx);
        if b > 1 {
            return Err(Error::parse(&node_path, ln, format!("first index must be 0 or 1, got {b}")));
        }
        if idx != vertices.len() + b {
            return Err(Error::parse(
                &node_path,
                ln,
                format!("expected point index {}, got {idx}", vertices.len() + b),
            ));
        }
        let x: f64 = num(&node_path, ln, tok[1], "x")?;
        let y: f64 = num(&node_path, ln, tok[2], "y")?;
        let z: f64 = num(&node_path, ln, tok[3], "z")?;
        vertices.push(Vec3::new(x, y, z));
    }
    if vertices.len() != n {
        return Err(Error::parse(
            &node_path,
            text.lines().count(),
            format!("header promises {n} points, found {}", vertices.len()),
        ));
    }
    let base = base.unwrap_or(0);

    let text = read_to_string(&ele_path)?;
    let mut lines = data_lines(&text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::parse(&ele_path, 1, "missing header"))?;
    if header.len() < 2 {
        return Err(Error::parse(&ele_path, hl, "header needs <#tets> <nodes per tet>"));
    }
    let k: usize = num(&ele_path, hl, header[0], "tet count")?;
    let per: usize = num(&ele_path, hl, header[1], "nodes per tet")?;
    if per != 4 {
        return Err(Error::parse(&ele_path, hl, format!("only linear tets are supported, got {per} nodes")));
    }
    let mut tets = Vec::with_capacity(k);
    for (ln, tok) in lines.by_ref().take(k) {
        if tok.len() < 5 {
            return Err(Error::parse(&ele_path, ln, "expected <index> <v1> <v2> <v3> <v4>"));
        }
        let mut t = [0usize; 4];
        for (slot, s) in t.iter_mut().zip(&tok[1..5]) {
            let v: usize = num(&ele_path, ln, s, "vertex index")?;
            if v < base || v - base >= n {
                return Err(Error::parse(&ele_path, ln, format!("vertex index {v} out of range")));
            }
            *slot = v - base;
        }
        tets.push(t);
    }
    if tets.len() != k {
        return Err(Error::parse(
            &ele_path,
            text.lines().count(),
            format!("header promises {k} tets, found {}", tets.len()),
        ));
    }

    let (mesh, reoriented) = TetMesh::new(vertices, tets, Frame::Original)?;
    if reoriented > 0 {
        log::info!("reoriented {reoriented} negatively oriented tets");
    }
    Ok(LoadedMesh { mesh, reoriented })
}

/// Writes `<stem>.node` and `<stem>.ele` with 0-based indices and
/// shortest round-trip float formatting.
pub fn write_tetgen(mesh: &TetMesh, path: &Path) -> Result<()> {
    let (node_path, ele_path) = tetgen_paths(path);
    let mut s = String::new();
    let _ = writeln!(s, "# tetflat {:?} frame", mesh.frame());
    let _ = writeln!(s, "{} 3 0 0", mesh.num_vertices());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(s, "{i} {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    write_string(&node_path, &s)?;

    let mut s = String::new();
    let _ = writeln!(s, "{} 4 0", mesh.num_tets());
    for (i, t) in mesh.tets().iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    write_string(&ele_path, &s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldLocation {
    Point,
    Cell,
}

#[derive(Debug, Clone)]
pub struct VtkField {
    pub name: String,
    pub location: FieldLocation,
    pub values: Vec<f64>,
}

impl VtkField {
    pub fn point(name: impl Into<String>, values: Vec<f64>) -> Self {
        VtkField {
            name: name.into(),
            location: FieldLocation::Point,
            values,
        }
    }

    pub fn cell(name: impl Into<String>, values: Vec<f64>) -> Self {
        VtkField {
            name: name.into(),
            location: FieldLocation::Cell,
            values,
        }
    }
}

/// `%.9g`-style formatting.
pub(crate) fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn write_fields(s: &mut String, fields: &[&VtkField], count: usize, header: &str) {
    if fields.is_empty() {
        return;
    }
    let _ = writeln!(s, "{header} {count}");
    for f in fields {
        let name: String = f.name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for v in &f.values {
            let _ = writeln!(s, "{}", fmt_g9(*v));
        }
    }
}

fn check_fields(fields: &[VtkField], n_points: usize, n_cells: usize) -> Result<()> {
    for f in fields {
        let expected = match f.location {
            FieldLocation::Point => n_points,
            FieldLocation::Cell => n_cells,
        };
        if f.values.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "field {:?} has {} values, expected {expected}",
                f.name,
                f.values.len()
            )));
        }
    }
    Ok(())
}

fn write_points(s: &mut String, points: &[Vec3]) {
    let _ = writeln!(s, "POINTS {} double", points.len());
    for p in points {
        let _ = writeln!(s, "{} {} {}", fmt_g9(p.x), fmt_g9(p.y), fmt_g9(p.z));
    }
}

fn split_fields(fields: &[VtkField]) -> (Vec<&VtkField>, Vec<&VtkField>) {
    fields.iter().partition(|f| f.location == FieldLocation::Point)
}

/// Legacy ASCII unstructured grid with optional point and cell scalars.
pub fn write_vtk(mesh: &TetMesh, fields: &[VtkField], path: &Path) -> Result<()> {
    check_fields(fields, mesh.num_vertices(), mesh.num_tets())?;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "tetflat mesh ({:?} frame)", mesh.frame());
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    write_points(&mut s, mesh.vertices());
    let k = mesh.num_tets();
    let _ = writeln!(s, "CELLS {k} {}", 5 * k);
    for t in mesh.tets() {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {k}");
    for _ in 0..k {
        s.push_str("10\n");
    }
    let (point, cell) = split_fields(fields);
    write_fields(&mut s, &cell, k, "CELL_DATA");
    write_fields(&mut s, &point, mesh.num_vertices(), "POINT_DATA");
    write_string(path, &s)
}

/// Legacy ASCII polydata of triangles, for surfaces and 2D embeddings.
pub fn write_vtk_polydata(
    points: &[Vec3],
    triangles: &[[usize; 3]],
    fields: &[VtkField],
    path: &Path,
) -> Result<()> {
    check_fields(fields, points.len(), triangles.len())?;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\ntetflat surface\nASCII\nDATASET POLYDATA\n");
    write_points(&mut s, points);
    let _ = writeln!(s, "POLYGONS {} {}", triangles.len(), 4 * triangles.len());
    for t in triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let (point, cell) = split_fields(fields);
    write_fields(&mut s, &cell, triangles.len(), "CELL_DATA");
    write_fields(&mut s, &point, points.len(), "POINT_DATA");
    write_string(path, &s)
}

struct Tokens<'a> {
    path: &'a Path,
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { path, items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items.get(self.pos).or(self.items.last()).map_or(1, |t| t.0)
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        let t = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.path, self.line(), format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(t.1)
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let line = self.line();
        let tok = self.next(what)?;
        num(self.path, line, tok, what)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        let line = self.line();
        let tok = self.next(kw)?;
        if !tok.eq_ignore_ascii_case(kw) {
            return Err(Error::parse(self.path, line, format!("expected {kw}, found {tok:?}")));
        }
        Ok(())
    }

    fn seek_keyword(&mut self, kw: &str) -> Result<()> {
        while self.pos < self.items.len() {
            if self.items[self.pos].1.eq_ignore_ascii_case(kw) {
                self.pos += 1;
                return Ok(());
            }
            self.pos += 1;
        }
        Err(Error::parse(self.path, self.line(), format!("missing {kw} section")))
    }
}

/// Reads the geometry of a legacy ASCII unstructured grid of tets.
pub fn load_vtk(path: &Path) -> Result<LoadedMesh> {
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if !first.starts_with("# vtk DataFile") {
        return Err(Error::parse(path, 1, "missing '# vtk DataFile' header"));
    }
    lines.next();
    let enc = lines.next().unwrap_or("").trim();
    if !enc.eq_ignore_ascii_case("ASCII") {
        return Err(Error::parse(path, 3, format!("only ASCII encoding is supported, found {enc:?}")));
    }
    // Skip the two header lines; tokenize the rest with original line numbers.
    let body_offset = text.match_indices('\n').nth(2).map_or(text.len(), |(i, _)| i + 1);
    let mut tok = Tokens::new(path, &text[body_offset..]);
    for item in &mut tok.items {
        item.0 += 3;
    }
    tok.expect_keyword("DATASET")?;
    let line = tok.line();
    let kind = tok.next("dataset type")?;
    if !kind.eq_ignore_ascii_case("UNSTRUCTURED_GRID") {
        return Err(Error::parse(path, line, format!("expected UNSTRUCTURED_GRID, found {kind}")));
    }
    tok.seek_keyword("POINTS")?;
    let n: usize = tok.parse("point count")?;
    let line = tok.line();
    let ty = tok.next("point type")?;
    if !matches!(ty, "float" | "double") {
        return Err(Error::parse(path, line, format!("unsupported point type {ty}")));
    }
    let mut vertices = Vec::with_capacity(n);
    for _ in 0..n {
        let x = tok.parse("x")?;
        let y = tok.parse("y")?;
        let z = tok.parse("z")?;
        vertices.push(Vec3::new(x, y, z));
    }
    tok.expect_keyword("CELLS")?;
    let k: usize = tok.parse("cell count")?;
    let _size: usize = tok.parse("cell list size")?;
    let mut tets = Vec::with_capacity(k);
    for c in 0..k {
        let line = tok.line();
        let m: usize = tok.parse("cell size")?;
        if m != 4 {
            return Err(Error::parse(path, line, format!("cell {c} has {m} points; only tets are supported")));
        }
        let mut t = [0usize; 4];
        for slot in &mut t {
            let line = tok.line();
            *slot = tok.parse("vertex index")?;
            if *slot >= n {
                return Err(Error::parse(path, line, format!("vertex index {slot} out of range")));
            }
        }
        tets.push(t);
    }
    tok.expect_keyword("CELL_TYPES")?;
    let kt: usize = tok.parse("cell type count")?;
    if kt != k {
        return Err(Error::parse(path, tok.line(), "CELL_TYPES count differs from CELLS"));
    }
    for _ in 0..k {
        let line = tok.line();
        let ty: u32 = tok.parse("cell type")?;
        if ty != 10 {
            return Err(Error::parse(path, line, format!("cell type {ty} is not a tetrahedron (10)")));
        }
    }
    let (mesh, reoriented) = TetMesh::new(vertices, tets, Frame::Original)?;
    Ok(LoadedMesh { mesh, reoriented })
}
