//! Procedural right-hand model used when no licensed model file is available.
//!
//! The hand is a union of closed tubes: an elliptical palm and one tube per
//! finger, each built from rings stitched into triangle strips and closed by
//! fan caps. Fingers point along +y, the palm faces −z and the thumb sits on
//! the −x side. Vertex counts are met exactly by growing ring resolution.

use super::{HandError, HandModel, HandSide, NUM_ARTICULATION, NUM_BETAS, NUM_KINEMATIC_JOINTS, NUM_OUTPUT_JOINTS, PARENTS};
use crate::geometry::Vec3;

pub const MIN_SYNTHETIC_VERTICES: usize = 100;

const NUM_TUBES: usize = 6;
const PALM_LENGTH: f64 = 0.08;
const PALM_HALF_WIDTH: f64 = 0.045;
const PALM_HALF_THICKNESS: f64 = 0.013;
const PRE_TIP: f64 = 0.75;

/// Finger tubes in kinematic order: index, middle, pinky, ring, thumb.
struct FingerSpec {
    base: Vec3,
    dir: Vec3,
    lengths: [f64; 3],
    radius: (f64, f64),
}

fn finger_specs() -> [FingerSpec; 5] {
    let straight = |x: f64, lengths: [f64; 3], r0: f64, r1: f64| FingerSpec {
        base: Vec3::new(x, 0.09, 0.0),
        dir: Vec3::y(),
        lengths,
        radius: (r0, r1),
    };
    [
        straight(-0.03, [0.040, 0.025, 0.020], 0.0095, 0.0075),
        straight(-0.01, [0.045, 0.030, 0.022], 0.0100, 0.0080),
        straight(0.03, [0.032, 0.020, 0.018], 0.0080, 0.0065),
        straight(0.01, [0.042, 0.028, 0.020], 0.0095, 0.0075),
        FingerSpec {
            base: Vec3::new(-0.03, 0.015, -0.005),
            dir: Vec3::new(-0.6, 0.8, -0.1).normalize(),
            lengths: [0.035, 0.030, 0.025],
            radius: (0.0115, 0.0085),
        },
    ]
}

fn q(x: f64) -> f64 {
    x as f32 as f64
}

fn qv(v: Vec3) -> Vec3 {
    v.map(q)
}

/// Ring sizes: palm rings, then each finger's rings.
fn ring_layout(vertex_count: usize) -> (usize, Vec<usize>) {
    let rings = |l: usize| 22 + 16 * l;
    let base = |n: usize, l: usize| n * rings(l) + 2 * NUM_TUBES;
    let mut l = 0;
    while base(4 + 2 * (l + 1), l + 1) <= vertex_count {
        l += 1;
    }
    let total = rings(l);
    let n = (vertex_count - 2 * NUM_TUBES) / total;
    let r = vertex_count - 2 * NUM_TUBES - n * total;
    let sizes = (0..total).map(|i| n + ((i + 1) * r / total - i * r / total)).collect();
    (l, sizes)
}

struct VertexInfo {
    /// Finger index, `None` on the palm.
    finger: Option<usize>,
    /// Closest point on the tube axis.
    axis: Vec3,
    /// Distance along the finger from its first joint.
    along: f64,
}

struct Builder {
    vertices: Vec<Vec3>,
    info: Vec<VertexInfo>,
    weights: Vec<[f64; NUM_KINEMATIC_JOINTS]>,
    faces: Vec<[usize; 3]>,
}

fn blend(a: usize, b: usize) -> [f64; NUM_KINEMATIC_JOINTS] {
    let mut w = [0.0; NUM_KINEMATIC_JOINTS];
    w[a] += 0.5;
    w[b] += 0.5;
    w
}

fn hard(j: usize) -> [f64; NUM_KINEMATIC_JOINTS] {
    let mut w = [0.0; NUM_KINEMATIC_JOINTS];
    w[j] = 1.0;
    w
}

struct Ring {
    center: Vec3,
    radii: (f64, f64),
    weights: [f64; NUM_KINEMATIC_JOINTS],
}

impl Builder {
    fn push(&mut self, p: Vec3, info: VertexInfo, w: [f64; NUM_KINEMATIC_JOINTS]) -> usize {
        self.vertices.push(p);
        self.info.push(info);
        self.weights.push(w);
        self.vertices.len() - 1
    }

    /// Adds a closed tube and returns the first vertex index of each ring
    /// and the end cap vertex.
    #[allow(clippy::too_many_arguments)]
    fn tube(
        &mut self,
        finger: Option<usize>,
        origin: Vec3,
        dir: Vec3,
        start_cap: (Vec3, [f64; NUM_KINEMATIC_JOINTS]),
        rings: &[Ring],
        end_cap: (Vec3, [f64; NUM_KINEMATIC_JOINTS]),
        sizes: &[usize],
    ) -> (Vec<usize>, usize) {
        let along = |p: &Vec3| (p - origin).dot(&dir);
        let vz = (Vec3::z() - dir * dir.z).normalize();
        let ux = vz.cross(&dir);
        let start = self.push(start_cap.0, VertexInfo { finger, axis: start_cap.0, along: along(&start_cap.0) }, start_cap.1);
        let mut starts = Vec::with_capacity(rings.len());
        for (ring, &n) in rings.iter().zip(sizes) {
            starts.push(self.vertices.len());
            for k in 0..n {
                let phi = std::f64::consts::TAU * k as f64 / n as f64;
                let p = ring.center + ux * (ring.radii.0 * phi.cos()) + vz * (ring.radii.1 * phi.sin());
                self.push(p, VertexInfo { finger, axis: ring.center, along: along(&ring.center) }, ring.weights);
            }
        }
        let end = self.push(end_cap.0, VertexInfo { finger, axis: end_cap.0, along: along(&end_cap.0) }, end_cap.1);
        for k in 0..sizes[0] {
            self.faces.push([start, starts[0] + (k + 1) % sizes[0], starts[0] + k]);
        }
        for r in 0..rings.len() - 1 {
            self.zip(starts[r], sizes[r], starts[r + 1], sizes[r + 1]);
        }
        let (last, m) = (starts[rings.len() - 1], sizes[rings.len() - 1]);
        for k in 0..m {
            self.faces.push([end, last + k, last + (k + 1) % m]);
        }
        (starts, end)
    }

    /// Stitches two consecutive rings by advancing along whichever ring lags
    /// in angle.
    fn zip(&mut self, a0: usize, na: usize, b0: usize, nb: usize) {
        let (mut i, mut j) = (0, 0);
        while i < na || j < nb {
            let advance_a = j == nb || (i < na && (i + 1) * nb <= (j + 1) * na);
            if advance_a {
                self.faces.push([a0 + i, a0 + (i + 1) % na, b0 + j % nb]);
                i += 1;
            } else {
                self.faces.push([a0 + i % na, b0 + (j + 1) % nb, b0 + j]);
                j += 1;
            }
        }
    }
}

impl HandModel {
    /// Deterministic right-hand model with exactly `vertex_count` vertices.
    pub fn synthetic(vertex_count: usize) -> Result<HandModel, HandError> {
        if vertex_count < MIN_SYNTHETIC_VERTICES {
            return Err(HandError::TooFewVertices(vertex_count));
        }
        let (l, sizes) = ring_layout(vertex_count);
        let mut b = Builder { vertices: vec![], info: vec![], weights: vec![], faces: vec![] };
        let mut joint_rings: Vec<(usize, usize)> = vec![(0, 0); NUM_KINEMATIC_JOINTS];
        let mut tips = vec![];

        let palm: Vec<Ring> = (0..l + 2)
            .map(|i| Ring {
                center: Vec3::new(0.0, PALM_LENGTH * i as f64 / (l + 1) as f64, 0.0),
                radii: (PALM_HALF_WIDTH, PALM_HALF_THICKNESS),
                weights: hard(0),
            })
            .collect();
        let (palm_sizes, mut rest) = sizes.split_at(l + 2);
        let (starts, _) = b.tube(
            None,
            Vec3::zeros(),
            Vec3::y(),
            (Vec3::new(0.0, -0.006, 0.0), hard(0)),
            &palm,
            (Vec3::new(0.0, PALM_LENGTH + 0.006, 0.0), hard(0)),
            palm_sizes,
        );
        joint_rings[0] = (starts[0], palm_sizes[0]);

        let specs = finger_specs();
        for (k, f) in specs.iter().enumerate() {
            let j0 = 1 + 3 * k;
            let total: f64 = f.lengths.iter().sum();
            let radius_at = |s: f64| f.radius.0 + (f.radius.1 - f.radius.0) * (s / total).clamp(0.0, 1.0);
            let mut joints = [f.base; 3];
            for s in 1..3 {
                joints[s] = joints[s - 1] + f.dir * f.lengths[s - 1];
            }
            let tip = joints[2] + f.dir * f.lengths[2];
            let mut rings = vec![];
            let mut joint_ring_index = [0; 3];
            for s in 0..3 {
                let j = j0 + s;
                let parent = PARENTS[j].expect("finger joints have parents");
                let span = if s < 2 { f.lengths[s] } else { PRE_TIP * f.lengths[s] };
                let offset: f64 = f.lengths[..s].iter().sum();
                joint_ring_index[s] = rings.len();
                let r = radius_at(offset);
                rings.push(Ring { center: joints[s], radii: (r, 0.85 * r), weights: blend(parent, j) });
                for i in 1..=l {
                    let d = span * i as f64 / (l + 1) as f64;
                    let r = radius_at(offset + d);
                    rings.push(Ring { center: joints[s] + f.dir * d, radii: (r, 0.85 * r), weights: hard(j) });
                }
            }
            let r = 0.85 * f.radius.1;
            rings.push(Ring {
                center: joints[2] + f.dir * (PRE_TIP * f.lengths[2]),
                radii: (r, 0.85 * r),
                weights: hard(j0 + 2),
            });
            let (finger_sizes, tail) = rest.split_at(rings.len());
            rest = tail;
            let (starts, end) = b.tube(
                Some(k),
                f.base,
                f.dir,
                (f.base - f.dir * (0.5 * f.radius.0), blend(0, j0)),
                &rings,
                (tip, hard(j0 + 2)),
                finger_sizes,
            );
            for s in 0..3 {
                let ri = joint_ring_index[s];
                joint_rings[j0 + s] = (starts[ri], finger_sizes[ri]);
            }
            tips.push(end);
        }
        debug_assert!(rest.is_empty());
        let n = b.vertices.len();
        debug_assert_eq!(n, vertex_count);

        let shapedirs = b
            .vertices
            .iter()
            .zip(&b.info)
            .map(|(v, info)| {
                let radial = v - info.axis;
                let mut d = [Vec3::zeros(); NUM_BETAS];
                d[0] = 0.05 * v;
                d[3] = Vec3::new(0.08 * v.x, 0.0, 0.0);
                d[4] = Vec3::new(0.0, 0.0, 0.1 * v.z);
                d[5] = Vec3::new(0.0, 0.08 * v.y, 0.0);
                if let Some(k) = info.finger {
                    let f = &specs[k];
                    let total: f64 = f.lengths.iter().sum();
                    if k < 4 {
                        d[1] = 0.1 * info.along * f.dir;
                        d[2] = 0.1 * radial;
                        d[8] = Vec3::new(0.15 * f.base.x, 0.0, 0.0);
                    } else {
                        d[6] = 0.1 * info.along * f.dir;
                        d[7] = 0.1 * radial;
                    }
                    d[9] = -0.1 * (info.along / total).clamp(0.0, 1.0) * radial;
                }
                d.map(qv)
            })
            .collect();

        let mut joint_regressor = vec![0.0; NUM_KINEMATIC_JOINTS * n];
        for (j, &(start, size)) in joint_rings.iter().enumerate() {
            for v in start..start + size {
                joint_regressor[j * n + v] = q(1.0 / size as f64);
            }
        }
        let mut output_regressor = joint_regressor.clone();
        output_regressor.resize(NUM_OUTPUT_JOINTS * n, 0.0);
        for (i, &tip) in tips.iter().enumerate() {
            output_regressor[(NUM_KINEMATIC_JOINTS + i) * n + tip] = 1.0;
        }
        let half_pi = q(std::f64::consts::FRAC_PI_2);
        HandModel::new(
            HandSide::Right,
            b.vertices.into_iter().map(qv).collect(),
            shapedirs,
            b.weights,
            joint_regressor,
            output_regressor,
            b.faces,
            vec![-half_pi; NUM_ARTICULATION],
            vec![half_pi; NUM_ARTICULATION],
            PARENTS,
        )
    }
}
