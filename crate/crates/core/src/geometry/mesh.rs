use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::spatial::SpatialIndex;
use super::transform::{RigidTransform, Vec3};
use super::GeometryError;

/// Tolerance on the unit length of stored vertex normals.
pub const NORMAL_TOL: f64 = 1e-6;

/// Triangle mesh with per-vertex unit normals. Faces are counter-clockwise
/// when seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, normals: Vec<Vec3>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if normals.len() != n {
            return Err(GeometryError::LengthMismatch { left: n, right: normals.len() });
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(GeometryError::InvalidMesh(format!("face {f:?} references a vertex >= {n}")));
        }
        if !vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        if let Some(i) = normals.iter().position(|nrm| !((nrm.norm() - 1.0).abs() <= NORMAL_TOL)) {
            return Err(GeometryError::InvalidMesh(format!("normal {i} is not unit length")));
        }
        Ok(Self { vertices, faces, normals })
    }

    /// Builds a mesh with area-weighted vertex normals.
    pub fn from_faces(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let normals = vertex_normals(&vertices, &faces)?;
        Self::new(vertices, faces, normals)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
            normals: self.normals.iter().map(|n| t.rotation * n).collect(),
        }
    }

    /// Same faces with new vertex positions; normals are recomputed.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriMesh, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::LengthMismatch { left: self.vertices.len(), right: vertices.len() });
        }
        TriMesh::from_faces(vertices, self.faces.clone())
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Enclosed volume by the divergence theorem (m³); meaningful for closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Whether every edge is shared by exactly two faces with opposite orientation.
    pub fn is_closed(&self) -> bool {
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a, b)).or_default() += 1;
            }
        }
        edges.iter().all(|(&(a, b), &count)| count == 1 && edges.get(&(b, a)) == Some(&1))
    }

    /// Axis-aligned box of the given half extents, each face split into an
    /// `n × n` grid.
    pub fn cuboid(center: Vec3, half_extents: Vec3, n: usize) -> TriMesh {
        let n = n.max(1);
        let mut index: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut vid = |c: (usize, usize, usize), vertices: &mut Vec<Vec3>| -> usize {
            *index.entry(c).or_insert_with(|| {
                let p = Vec3::new(c.0 as f64, c.1 as f64, c.2 as f64) / n as f64 * 2.0 - Vec3::repeat(1.0);
                vertices.push(center + p.component_mul(&half_extents));
                vertices.len() - 1
            })
        };
        // (fixed axis, fixed value, u axis, v axis) with u × v pointing outward
        let sides = [(0, n, 1, 2), (0, 0, 2, 1), (1, n, 2, 0), (1, 0, 0, 2), (2, n, 0, 1), (2, 0, 1, 0)];
        for &(axis, fixed, ua, va) in &sides {
            for i in 0..n {
                for j in 0..n {
                    let corner = |du: usize, dv: usize| {
                        let mut c = [0usize; 3];
                        c[axis] = fixed;
                        c[ua] = i + du;
                        c[va] = j + dv;
                        (c[0], c[1], c[2])
                    };
                    let a = vid(corner(0, 0), &mut vertices);
                    let b = vid(corner(1, 0), &mut vertices);
                    let c = vid(corner(1, 1), &mut vertices);
                    let d = vid(corner(0, 1), &mut vertices);
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
        }
        TriMesh::from_faces(vertices, faces).expect("cuboid is well formed")
    }

    /// Axis-aligned cube with edge length `size` and minimum corner `min`.
    pub fn cube(min: Vec3, size: f64) -> TriMesh {
        let h = Vec3::repeat(size * 0.5);
        TriMesh::cuboid(min + h, h, 1)
    }

    /// Icosphere with `subdivisions` levels of midpoint subdivision.
    pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize) -> TriMesh {
        TriMesh::ellipsoid(center, Vec3::repeat(radius), subdivisions)
    }

    /// Subdivided icosahedron scaled to the given semi-axes.
    pub fn ellipsoid(center: Vec3, semi_axes: Vec3, subdivisions: usize) -> TriMesh {
        let (unit, faces) = unit_icosphere(subdivisions);
        let vertices = unit.iter().map(|p| center + p.component_mul(&semi_axes)).collect();
        TriMesh::from_faces(vertices, faces).expect("ellipsoid is well formed")
    }

    pub fn read_obj(path: &Path) -> Result<TriMesh, GeometryError> {
        let file = std::fs::File::open(path)?;
        parse_obj(BufReader::new(file))
    }

    pub fn write_obj(&self, path: &Path) -> Result<(), GeometryError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_obj_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_obj_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for n in &self.normals {
            writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
        }
        for f in &self.faces {
            let [a, b, c] = f.map(|i| i + 1);
            writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")?;
        }
        Ok(())
    }

    pub fn read_ply(path: &Path) -> Result<TriMesh, GeometryError> {
        let file = std::fs::File::open(path)?;
        parse_ply(BufReader::new(file))
    }

    pub fn write_ply(&self, path: &Path) -> Result<(), GeometryError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ply_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Binary little-endian PLY with double-precision positions and normals.
    pub fn write_ply_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(
            out,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property double x\nproperty double y\nproperty double z\n\
             property double nx\nproperty double ny\nproperty double nz\n\
             element face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.faces.len()
        )?;
        for (v, n) in self.vertices.iter().zip(&self.normals) {
            for c in v.iter().chain(n.iter()) {
                out.write_all(&c.to_le_bytes())?;
            }
        }
        for f in &self.faces {
            out.write_all(&[3u8])?;
            for &i in f {
                out.write_all(&(i as i32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads OBJ or PLY based on the file extension.
    pub fn load(path: &Path) -> Result<TriMesh, GeometryError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("obj") => TriMesh::read_obj(path),
            Some("ply") => TriMesh::read_ply(path),
            _ => Err(GeometryError::Parse { line: 0, message: format!("unsupported mesh format: {}", path.display()) }),
        }
    }
}

/// A mesh together with a nearest-vertex index over its vertices.
#[derive(Debug, Clone)]
pub struct IndexedMesh {
    pub mesh: TriMesh,
    pub index: SpatialIndex,
}

impl IndexedMesh {
    pub fn new(mesh: TriMesh) -> Self {
        let index = SpatialIndex::build(mesh.vertices());
        Self { mesh, index }
    }
}

fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>, GeometryError> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        if f.iter().any(|&i| i >= vertices.len()) {
            return Err(GeometryError::InvalidMesh(format!("face {f:?} out of range")));
        }
        let [a, b, c] = f.map(|i| vertices[i]);
        // cross product magnitude is twice the area: area weighting
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(GeometryError::InvalidMesh(format!("vertex {i} has no well-defined normal")))
            }
        })
        .collect()
}

fn unit_icosphere(subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn parse_obj<R: BufRead>(reader: R) -> Result<TriMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut normals_in = Vec::new();
    let mut faces = Vec::new();
    let mut vertex_normal: HashMap<usize, usize> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let err = |message: String| GeometryError::Parse { line: line_no, message };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => vertices.push(parse_vec3(&mut tokens).map_err(err)?),
            Some("vn") => normals_in.push(parse_vec3(&mut tokens).map_err(err)?),
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let vi = resolve_obj_index(parts.next().unwrap_or(""), vertices.len()).map_err(err)?;
                    let ni = parts.nth(1).filter(|s| !s.is_empty());
                    if let Some(ni) = ni {
                        let ni = resolve_obj_index(ni, normals_in.len()).map_err(err)?;
                        vertex_normal.insert(vi, ni);
                    }
                    poly.push(vi);
                }
                if poly.len() < 3 {
                    return Err(err(format!("face with {} vertices", poly.len())));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !normals_in.is_empty() && vertex_normal.len() == vertices.len() {
        let normals = (0..vertices.len())
            .map(|i| {
                let n: Vec3 = normals_in[vertex_normal[&i]];
                // leave unit normals untouched so written meshes read back exactly
                if (n.norm_squared() - 1.0).abs() < 1e-12 { n } else { n.normalize() }
            })
            .collect();
        TriMesh::new(vertices, faces, normals)
    } else {
        TriMesh::from_faces(vertices, faces)
    }
}

fn parse_vec3<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Vec3, String> {
    let mut v = Vec3::zeros();
    for i in 0..3 {
        let tok = tokens.next().ok_or_else(|| "expected three coordinates".to_string())?;
        v[i] = tok.parse::<f64>().map_err(|e| format!("bad number {tok:?}: {e}"))?;
    }
    Ok(v)
}

fn resolve_obj_index(tok: &str, count: usize) -> Result<usize, String> {
    let i: i64 = tok.parse().map_err(|e| format!("bad index {tok:?}: {e}"))?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved as usize >= count {
        return Err(format!("index {i} out of range (have {count})"));
    }
    Ok(resolved as usize)
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(s: &str) -> Option<Scalar> {
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

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        let mut buf = [0u8; 8];
        let b = &mut buf[..self.size()];
        r.read_exact(b)?;
        Ok(match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_ply<R: BufRead>(mut reader: R) -> Result<TriMesh, GeometryError> {
    let perr = |line: usize, message: String| GeometryError::Parse { line, message };
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 0;
    let mut header_line = String::new();
    loop {
        header_line.clear();
        if reader.read_line(&mut header_line)? == 0 {
            return Err(perr(line_no, "unexpected end of PLY header".into()));
        }
        line_no += 1;
        let toks: Vec<&str> = header_line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(perr(1, "missing 'ply' magic".into())),
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(perr(line_no, format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| perr(line_no, format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(perr(line_no, "unknown list property type".into()));
                };
                let el = elements.last_mut().ok_or_else(|| perr(line_no, "property before element".into()))?;
                el.properties.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| perr(line_no, format!("unknown property type {ty}")))?;
                let el = elements.last_mut().ok_or_else(|| perr(line_no, "property before element".into()))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(perr(line_no, format!("unrecognised header line {:?}", header_line.trim()))),
        }
    }

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    let mut has_normals = false;
    for el in &elements {
        for _ in 0..el.count {
            let mut pos = Vec3::zeros();
            let mut nrm = Vec3::zeros();
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(&mut reader)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => pos.x = v,
                                "y" => pos.y = v,
                                "z" => pos.z = v,
                                "nx" => {
                                    nrm.x = v;
                                    has_normals = true;
                                }
                                "ny" => nrm.y = v,
                                "nz" => nrm.z = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = ct.read(&mut reader)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(it.read(&mut reader)? as usize);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(perr(line_no, format!("face with {n} vertices")));
                            }
                            for k in 1..n - 1 {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(pos);
                normals.push(nrm);
            }
        }
    }
    if has_normals {
        let normals = normals.into_iter().map(|n| n.normalize()).collect();
        TriMesh::new(vertices, faces, normals)
    } else {
        TriMesh::from_faces(vertices, faces)
    }
}
