//! OBJ, PLY (ASCII and binary little-endian) and XYZ readers, plus point
//! cloud writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use grasptransfer_core::{Point3, PointSet, TriangleMesh};

use crate::error::{CliError, Location, Result};

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|e| CliError::parse(path, Location::Byte(e.utf8_error().valid_up_to() as u64), "invalid UTF-8"))
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let (vertices, faces) = match extension(path).as_str() {
        "obj" => parse_obj(&read_text(path)?, path)?,
        "ply" => parse_ply(&read(path)?, path)?,
        other => return Err(CliError::invalid(format!("unsupported mesh format '.{other}' ({})", path.display()))),
    };
    if faces.is_empty() {
        return Err(CliError::parse(path, Location::Line(1), "mesh has no faces"));
    }
    let vertices = PointSet::new(vertices).map_err(|e| CliError::schema(path, e))?;
    Ok(TriangleMesh::new(vertices, faces)?)
}

pub fn load_point_cloud(path: &Path) -> Result<PointSet> {
    let points = match extension(path).as_str() {
        "xyz" | "txt" => parse_xyz(&read_text(path)?, path)?,
        "ply" => parse_ply(&read(path)?, path)?.0,
        "obj" => parse_obj(&read_text(path)?, path)?.0,
        other => return Err(CliError::invalid(format!("unsupported point cloud format '.{other}' ({})", path.display()))),
    };
    if points.is_empty() {
        return Err(CliError::parse(path, Location::Line(1), "file contains no points"));
    }
    PointSet::new(points).map_err(|e| CliError::schema(path, e))
}

/// Writes `.xyz` or ASCII `.ply`. Coordinates use the shortest decimal form
/// that reads back to the same `f64`, so a save/load round trip is exact.
pub fn save_point_cloud(ps: &PointSet, path: &Path) -> Result<()> {
    let text = match extension(path).as_str() {
        "xyz" | "txt" => xyz_string(ps),
        "ply" => ply_string(ps),
        other => return Err(CliError::invalid(format!("unsupported point cloud format '.{other}' ({})", path.display()))),
    };
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn xyz_string(ps: &PointSet) -> String {
    let mut s = String::with_capacity(ps.len() * 48);
    for p in ps {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    s
}

pub fn ply_string(ps: &PointSet) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        ps.len()
    );
    s.push_str(&xyz_string(ps));
    s
}

fn number(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| CliError::parse(path, Location::Line(line), format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::parse(path, Location::Line(line), format!("non-finite coordinate '{tok}'")));
    }
    Ok(v)
}

/// Whitespace-separated `x y z` per line; extra columns are ignored, `#`
/// starts a comment.
pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(CliError::parse(path, Location::Line(i + 1), format!("expected 3 coordinates, found {}", toks.len())));
        }
        points.push(Point3::new(number(toks[0], path, i + 1)?, number(toks[1], path, i + 1)?, number(toks[2], path, i + 1)?));
    }
    Ok(points)
}

/// Vertices and triangles (polygons are fan-triangulated). Supports
/// `v/vt/vn` index forms and negative (relative) indices.
pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(CliError::parse(path, Location::Line(lineno), "vertex needs 3 coordinates"));
                }
                vertices.push(Point3::new(number(c[0], path, lineno)?, number(c[1], path, lineno)?, number(c[2], path, lineno)?));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let v: i64 = head
                            .parse()
                            .map_err(|_| CliError::parse(path, Location::Line(lineno), format!("bad face index '{t}'")))?;
                        let resolved = if v < 0 { vertices.len() as i64 + v } else { v - 1 };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(CliError::parse(path, Location::Line(lineno), format!("face index {v} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(CliError::parse(path, Location::Line(lineno), "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

fn parse_ply_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let mut offset = 0;
    let mut lineno = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CliError::parse(path, Location::Byte(bytes.len() as u64), "PLY header is not terminated by end_header"))?;
        lineno += 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| CliError::parse(path, Location::Line(lineno), "PLY header is not ASCII"))?
            .trim_end_matches('\r')
            .trim();
        offset += end + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| CliError::parse(path, Location::Line(lineno), msg.to_string());
        if lineno == 1 {
            if line != "ply" {
                return Err(bad("missing 'ply' magic"));
            }
            continue;
        }
        match toks.first().copied() {
            Some("format") => {
                format = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(bad(&format!("unsupported PLY format '{other}'"))),
                    None => return Err(bad("format line is incomplete")),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (toks.get(1), toks.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(bad("malformed element line"));
                };
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| bad("property before any element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    match (toks.get(2).and_then(|t| Scalar::parse(t)), toks.get(3).and_then(|t| Scalar::parse(t)), toks.get(4)) {
                        (Some(c), Some(i), Some(n)) => Property::List(n.to_string(), c, i),
                        _ => return Err(bad("malformed list property")),
                    }
                } else {
                    match (toks.get(1).and_then(|t| Scalar::parse(t)), toks.get(2)) {
                        (Some(t), Some(n)) => Property::Scalar(n.to_string(), t),
                        _ => return Err(bad("malformed property")),
                    }
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(bad(&format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| CliError::parse(path, Location::Line(lineno), "PLY header has no format line"))?;
    Ok(Header { format, elements, body_offset: offset, body_line: lineno })
}

/// Source of element values for either encoding.
trait ValueReader {
    fn start_record(&mut self) -> Result<()>;
    fn value(&mut self, t: Scalar) -> Result<f64>;
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl ValueReader for BinaryReader<'_> {
    fn start_record(&mut self) -> Result<()> {
        Ok(())
    }

    fn value(&mut self, t: Scalar) -> Result<f64> {
        let n = t.size();
        if self.offset + n > self.bytes.len() {
            return Err(CliError::parse(
                self.path,
                Location::Byte(self.offset as u64),
                format!("file truncated: needed {n} bytes, {} remain", self.bytes.len() - self.offset),
            ));
        }
        let v = t.decode(&self.bytes[self.offset..self.offset + n]);
        self.offset += n;
        Ok(v)
    }
}

struct AsciiReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    current: std::vec::IntoIter<&'a str>,
    line: usize,
    first_line: usize,
    path: &'a Path,
}

impl ValueReader for AsciiReader<'_> {
    fn start_record(&mut self) -> Result<()> {
        if let Some(tok) = self.current.next() {
            return Err(CliError::parse(self.path, Location::Line(self.line), format!("unexpected trailing value '{tok}'")));
        }
        loop {
            match self.lines.next() {
                Some((i, l)) => {
                    self.line = self.first_line + i + 1;
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    if !toks.is_empty() {
                        self.current = toks.into_iter();
                        return Ok(());
                    }
                }
                None => {
                    return Err(CliError::parse(self.path, Location::Line(self.line + 1), "file truncated: element data ends early"));
                }
            }
        }
    }

    fn value(&mut self, t: Scalar) -> Result<f64> {
        let tok = self
            .current
            .next()
            .ok_or_else(|| CliError::parse(self.path, Location::Line(self.line), "too few values on line"))?;
        let v: f64 = tok.parse().map_err(|_| CliError::parse(self.path, Location::Line(self.line), format!("'{tok}' is not a number")))?;
        if matches!(t, Scalar::F32 | Scalar::F64) {
            Ok(v)
        } else if v.fract() == 0.0 {
            Ok(v)
        } else {
            Err(CliError::parse(self.path, Location::Line(self.line), format!("'{tok}' is not an integer")))
        }
    }
}

fn read_elements(header: &Header, reader: &mut dyn ValueReader, path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let coord_slot = |name: &str| ["x", "y", "z"].iter().position(|c| *c == name);
        if is_vertex && ["x", "y", "z"].iter().any(|c| !el.properties.iter().any(|p| matches!(p, Property::Scalar(n, _) if n == c))) {
            return Err(CliError::parse(path, Location::Line(header.body_line), "vertex element lacks x, y or z"));
        }
        for _ in 0..el.count {
            reader.start_record()?;
            let mut xyz = [0.0; 3];
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, t) => {
                        let v = reader.value(*t)?;
                        if is_vertex {
                            if let Some(slot) = coord_slot(name) {
                                xyz[slot] = v;
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = reader.value(*ct)?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(CliError::parse(path, Location::Line(header.body_line), format!("bad list length {n}")));
                        }
                        let mut idx = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            idx.push(reader.value(*it)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if idx.len() < 3 || idx.iter().any(|v| *v < 0.0) {
                                return Err(CliError::schema(path, format!("face {} is malformed", faces.len())));
                            }
                            let idx: Vec<usize> = idx.iter().map(|v| *v as usize).collect();
                            for k in 1..idx.len() - 1 {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                if xyz.iter().any(|c| !c.is_finite()) {
                    return Err(CliError::schema(path, format!("vertex {} has a non-finite coordinate", vertices.len())));
                }
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
        if is_face && el.properties.iter().all(|p| p.name() != "vertex_indices" && p.name() != "vertex_index") {
            return Err(CliError::schema(path, "face element lacks vertex_indices"));
        }
    }
    if let Some(f) = faces.iter().position(|f| f.iter().any(|&i| i >= vertices.len())) {
        return Err(CliError::schema(path, format!("face {f} references a missing vertex")));
    }
    Ok((vertices, faces))
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let header = parse_ply_header(bytes, path)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::BinaryLittleEndian => {
            let mut r = BinaryReader { bytes, offset: header.body_offset, path };
            read_elements(&header, &mut r, path)
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|e| CliError::parse(path, Location::Byte((header.body_offset + e.valid_up_to()) as u64), "invalid UTF-8"))?;
            let mut r = AsciiReader {
                lines: text.lines().enumerate(),
                current: Vec::new().into_iter(),
                line: header.body_line,
                first_line: header.body_line,
                path,
            };
            read_elements(&header, &mut r, path)
        }
    }
}

/// Binary little-endian PLY with float vertices and `uchar`/`int` faces.
pub fn binary_ply_bytes(vertices: &[Point3], faces: &[[usize; 3]]) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        faces.len()
    )
    .into_bytes();
    for v in vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for f in faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}
