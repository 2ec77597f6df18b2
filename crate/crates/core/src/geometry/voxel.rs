use super::mesh::TriMesh;
use super::transform::Vec3;
use super::GeometryError;

/// Fraction of voxels allowed to disagree between the three axis parity
/// tests before a mesh is declared open.
pub const MAX_INCONSISTENT_FRACTION: f64 = 0.01;

/// Per-axis transverse offsets (in voxel units) applied to the cast rays so
/// they never pass exactly through mesh edges or vertices lying on the grid.
const RAY_JITTER: [[f64; 2]; 3] = [[1.37e-5, 2.91e-5], [2.23e-5, 1.19e-5], [1.71e-5, 2.53e-5]];

/// Regular grid of voxel centres `origin + (i + ½) · voxel`.
#[derive(Debug, Clone, Copy)]
struct Grid {
    origin: Vec3,
    voxel: f64,
    dims: [usize; 3],
}

impl Grid {
    fn center(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.voxel
    }

    fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }
}

/// Inside/outside classification of every voxel centre of a grid.
struct Occupancy {
    inside: Vec<bool>,
    inconsistent: usize,
}

/// Classifies grid centres against a mesh made of one or more closed
/// components. Each connected component is classified on its own and the
/// results are united, so overlapping components do not cancel.
fn occupancy(mesh: &TriMesh, grid: &Grid) -> Occupancy {
    let components = face_components(mesh);
    if components.len() <= 1 {
        return component_occupancy(mesh, mesh.faces(), grid);
    }
    let mut inside = vec![false; grid.len()];
    let mut inconsistent = 0;
    for faces in &components {
        let occ = component_occupancy(mesh, faces, grid);
        inconsistent += occ.inconsistent;
        for (a, b) in inside.iter_mut().zip(occ.inside) {
            *a |= b;
        }
    }
    Occupancy { inside, inconsistent }
}

/// Faces grouped by vertex connectivity.
fn face_components(mesh: &TriMesh) -> Vec<Vec<[usize; 3]>> {
    let n = mesh.vertices().len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for f in mesh.faces() {
        let r0 = find(&mut parent, f[0]);
        for &v in &f[1..] {
            let r = find(&mut parent, v);
            if r != r0 {
                parent[r] = r0;
            }
        }
    }
    let mut slot: std::collections::HashMap<usize, usize> = Default::default();
    let mut groups: Vec<Vec<[usize; 3]>> = Vec::new();
    for f in mesh.faces() {
        let root = find(&mut parent, f[0]);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(*f);
    }
    groups
}

/// Ray-crossing parity along each of the three axes, combined by majority vote.
fn component_occupancy(mesh: &TriMesh, faces: &[[usize; 3]], grid: &Grid) -> Occupancy {
    let mut votes = vec![0u8; grid.len()];
    for axis in 0..3 {
        let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
        let (nu, nv) = (grid.dims[ua], grid.dims[va]);
        let jitter = RAY_JITTER[axis];
        let line_u = |i: usize| grid.center(ua, i) + jitter[0] * grid.voxel;
        let line_v = |j: usize| grid.center(va, j) + jitter[1] * grid.voxel;
        let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); nu * nv];
        for f in faces {
            let [a, b, c] = f.map(|i| mesh.vertices()[i]);
            let umin = a[ua].min(b[ua]).min(c[ua]);
            let umax = a[ua].max(b[ua]).max(c[ua]);
            let vmin = a[va].min(b[va]).min(c[va]);
            let vmax = a[va].max(b[va]).max(c[va]);
            let Some((i0, i1)) = index_range(umin, umax, grid.origin[ua], grid.voxel, jitter[0], nu) else {
                continue;
            };
            let Some((j0, j1)) = index_range(vmin, vmax, grid.origin[va], grid.voxel, jitter[1], nv) else {
                continue;
            };
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let (pu, pv) = (line_u(i), line_v(j));
                    if let Some(s) = ray_hit(&a, &b, &c, axis, ua, va, pu, pv) {
                        crossings[j * nu + i].push(s);
                    }
                }
            }
        }
        for j in 0..nv {
            for i in 0..nu {
                let hits = &mut crossings[j * nu + i];
                hits.sort_by(f64::total_cmp);
                let mut h = 0;
                for k in 0..grid.dims[axis] {
                    let s = grid.center(axis, k);
                    while h < hits.len() && hits[h] < s {
                        h += 1;
                    }
                    let mut idx = [0usize; 3];
                    idx[axis] = k;
                    idx[ua] = i;
                    idx[va] = j;
                    let flat = grid.flat(idx[0], idx[1], idx[2]);
                    if h % 2 == 1 {
                        votes[flat] += 1;
                    }
                }
            }
        }
    }
    let mut inconsistent = 0;
    let inside = votes
        .iter()
        .map(|&v| {
            if v != 0 && v != 3 {
                inconsistent += 1;
            }
            v >= 2
        })
        .collect();
    Occupancy { inside, inconsistent }
}

/// Range of grid line indices whose (jittered) coordinate lies in `[lo, hi]`.
fn index_range(lo: f64, hi: f64, origin: f64, voxel: f64, jitter: f64, n: usize) -> Option<(usize, usize)> {
    let first = ((lo - origin) / voxel - 0.5 - jitter).ceil().max(0.0);
    let last = ((hi - origin) / voxel - 0.5 - jitter).floor().min(n as f64 - 1.0);
    if first > last {
        return None;
    }
    Some((first as usize, last as usize))
}

/// Coordinate along `axis` where the line `(pu, pv)` pierces triangle abc.
#[allow(clippy::too_many_arguments)]
fn ray_hit(a: &Vec3, b: &Vec3, c: &Vec3, axis: usize, ua: usize, va: usize, pu: f64, pv: f64) -> Option<f64> {
    let edge = |p: &Vec3, q: &Vec3| (q[ua] - p[ua]) * (pv - p[va]) - (q[va] - p[va]) * (pu - p[ua]);
    let w0 = edge(b, c);
    let w1 = edge(c, a);
    let w2 = edge(a, b);
    let inside = (w0 > 0.0 && w1 > 0.0 && w2 > 0.0) || (w0 < 0.0 && w1 < 0.0 && w2 < 0.0);
    if !inside {
        return None;
    }
    let sum = w0 + w1 + w2;
    Some((w0 * a[axis] + w1 * b[axis] + w2 * c[axis]) / sum)
}

fn shared_grid(lo: Vec3, hi: Vec3, voxel: f64) -> Option<Grid> {
    // grid aligned to multiples of the voxel size so independent calls agree
    let mut origin = Vec3::zeros();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let first = (lo[a] / voxel - 0.5).ceil();
        let last = (hi[a] / voxel - 0.5).floor();
        if first > last {
            return None;
        }
        origin[a] = first * voxel;
        dims[a] = (last - first) as usize + 1;
    }
    Some(Grid { origin, voxel, dims })
}

fn check_closed(occ: &Occupancy, total: usize) -> Result<(), GeometryError> {
    let fraction = occ.inconsistent as f64 / total.max(1) as f64;
    if fraction > MAX_INCONSISTENT_FRACTION {
        return Err(GeometryError::OpenMesh { inconsistent_fraction: fraction });
    }
    Ok(())
}

/// Volume (cm³) jointly enclosed by two closed meshes, estimated by counting
/// voxel centres that lie inside both.
pub fn voxel_intersection_volume(mesh_a: &TriMesh, mesh_b: &TriMesh, voxel: f64) -> Result<f64, GeometryError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(GeometryError::InvalidVoxel(voxel));
    }
    let (Some((alo, ahi)), Some((blo, bhi))) = (mesh_a.bounds(), mesh_b.bounds()) else {
        return Ok(0.0);
    };
    let lo = alo.sup(&blo);
    let hi = ahi.inf(&bhi);
    if (0..3).any(|i| lo[i] > hi[i]) {
        return Ok(0.0);
    }
    let Some(grid) = shared_grid(lo, hi, voxel) else {
        return Ok(0.0);
    };
    let occ_a = occupancy(mesh_a, &grid);
    check_closed(&occ_a, grid.len())?;
    let occ_b = occupancy(mesh_b, &grid);
    check_closed(&occ_b, grid.len())?;
    let count = occ_a.inside.iter().zip(&occ_b.inside).filter(|(a, b)| **a && **b).count();
    Ok(count as f64 * voxel.powi(3) * 1e6)
}

/// Volume (cm³) enclosed by a single closed mesh, by the same voxel counting.
pub fn voxel_volume(mesh: &TriMesh, voxel: f64) -> Result<f64, GeometryError> {
    voxel_intersection_volume(mesh, mesh, voxel)
}
