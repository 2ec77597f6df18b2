//! Binary model file: magic, little-endian u32 header length, JSON header,
//! then the arrays as consecutive little-endian blobs in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HandError, HandModel, HandSide, NUM_ARTICULATION, NUM_BETAS, NUM_KINEMATIC_JOINTS, NUM_OUTPUT_JOINTS};
use crate::geometry::Vec3;

pub const MODEL_MAGIC: &[u8; 8] = b"HANDMDL1";
const FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Blob {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    side: HandSide,
    num_vertices: usize,
    num_faces: usize,
    num_betas: usize,
    num_joints: usize,
    num_output_joints: usize,
    /// Parent of each kinematic joint, -1 for the root.
    parents: Vec<i64>,
    blobs: Vec<Blob>,
}

fn layout(n: usize, f: usize) -> Vec<Blob> {
    let blob = |name: &str, dtype: &str, shape: &[usize]| Blob { name: name.into(), dtype: dtype.into(), shape: shape.to_vec() };
    vec![
        blob("template", "f32", &[n, 3]),
        blob("shapedirs", "f32", &[n, 3, NUM_BETAS]),
        blob("weights", "f32", &[n, NUM_KINEMATIC_JOINTS]),
        blob("joint_regressor", "f32", &[NUM_KINEMATIC_JOINTS, n]),
        blob("output_regressor", "f32", &[NUM_OUTPUT_JOINTS, n]),
        blob("angle_bounds", "f32", &[NUM_ARTICULATION, 2]),
        blob("faces", "u32", &[f, 3]),
    ]
}

fn parse(msg: impl Into<String>) -> HandError {
    HandError::Parse(msg.into())
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f64>, HandError> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf).map_err(|e| parse(format!("truncated data: {e}")))?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

fn write_f32s<'a>(w: &mut impl Write, values: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

impl HandModel {
    pub fn load(path: &Path) -> Result<HandModel, HandError> {
        HandModel::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), HandError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<HandModel, HandError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| parse("file too short"))?;
        if &magic != MODEL_MAGIC {
            return Err(parse("bad magic"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| parse("missing header length"))?;
        let len = u32::from_le_bytes(len);
        if len > MAX_HEADER_BYTES {
            return Err(parse(format!("header length {len} is implausible")));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header).map_err(|_| parse("truncated header"))?;
        let h: Header = serde_json::from_slice(&header).map_err(|e| parse(format!("header: {e}")))?;
        if h.version != FORMAT_VERSION {
            return Err(parse(format!("unsupported version {}", h.version)));
        }
        if h.num_betas != NUM_BETAS || h.num_joints != NUM_KINEMATIC_JOINTS || h.num_output_joints != NUM_OUTPUT_JOINTS {
            return Err(parse("unsupported joint or shape dimensions"));
        }
        let (n, f) = (h.num_vertices, h.num_faces);
        if h.blobs != layout(n, f) {
            return Err(parse("blob list does not match the expected layout"));
        }
        if h.parents.len() != NUM_KINEMATIC_JOINTS {
            return Err(parse("parents has the wrong length"));
        }
        let mut parents = [None; NUM_KINEMATIC_JOINTS];
        for (slot, &p) in parents.iter_mut().zip(&h.parents) {
            *slot = match p {
                -1 => None,
                p if p >= 0 && (p as usize) < NUM_KINEMATIC_JOINTS => Some(p as usize),
                p => return Err(parse(format!("invalid parent {p}"))),
            };
        }

        let template = read_f32s(r, 3 * n)?.chunks_exact(3).map(Vec3::from_column_slice).collect();
        let shapedirs = read_f32s(r, 3 * NUM_BETAS * n)?
            .chunks_exact(3 * NUM_BETAS)
            .map(|c| std::array::from_fn(|b| Vec3::new(c[b], c[NUM_BETAS + b], c[2 * NUM_BETAS + b])))
            .collect();
        let weights = read_f32s(r, NUM_KINEMATIC_JOINTS * n)?
            .chunks_exact(NUM_KINEMATIC_JOINTS)
            .map(|c| std::array::from_fn(|j| c[j]))
            .collect();
        let joint_regressor = read_f32s(r, NUM_KINEMATIC_JOINTS * n)?;
        let output_regressor = read_f32s(r, NUM_OUTPUT_JOINTS * n)?;
        let bounds = read_f32s(r, 2 * NUM_ARTICULATION)?;
        let mut buf = vec![0u8; 12 * f];
        r.read_exact(&mut buf).map_err(|_| parse("truncated faces"))?;
        let idx: Vec<usize> = buf.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
        let faces = idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(parse("trailing bytes after the last blob"));
        }
        HandModel::new(
            h.side,
            template,
            shapedirs,
            weights,
            joint_regressor,
            output_regressor,
            faces,
            bounds.iter().step_by(2).copied().collect(),
            bounds.iter().skip(1).step_by(2).copied().collect(),
            parents,
        )
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), HandError> {
        let (n, f) = (self.template.len(), self.faces.len());
        let header = Header {
            version: FORMAT_VERSION,
            side: self.side,
            num_vertices: n,
            num_faces: f,
            num_betas: NUM_BETAS,
            num_joints: NUM_KINEMATIC_JOINTS,
            num_output_joints: NUM_OUTPUT_JOINTS,
            parents: self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
            blobs: layout(n, f),
        };
        let json = serde_json::to_vec(&header).map_err(|e| parse(e.to_string()))?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        write_f32s(w, self.template.iter().flat_map(|v| v.as_slice()))?;
        for dirs in &self.shapedirs {
            for c in 0..3 {
                write_f32s(w, dirs.iter().map(|d| &d[c]))?;
            }
        }
        write_f32s(w, self.weights.iter().flatten())?;
        write_f32s(w, &self.joint_regressor)?;
        write_f32s(w, &self.output_regressor)?;
        write_f32s(w, self.lower.iter().zip(&self.upper).flat_map(|(a, b)| [a, b]))?;
        for face in &self.faces {
            for &i in face {
                w.write_all(&(i as u32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}
