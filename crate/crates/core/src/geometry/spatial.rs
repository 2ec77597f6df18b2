use super::transform::Vec3;
use super::GeometryError;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a vertex set answering exact nearest-vertex queries.
///
/// Ties are resolved towards the lowest vertex index, so results are identical
/// to a brute-force scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
}

impl SpatialIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let mut index = Self { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            index.build_node(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn nearest(&self, query: &Vec3) -> Result<Nearest, GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyIndex);
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, query, &mut best);
        Ok(Nearest { index: best.1, distance: best.0.sqrt() })
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && i < best.1) {
                        *best = (d2, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // equality keeps equidistant candidates reachable for tie-breaking
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Linear-scan reference used to check [`SpatialIndex`].
pub fn brute_force_nearest(points: &[Vec3], query: &Vec3) -> Option<Nearest> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if best.is_none_or(|(b, _)| d2 < b) {
            best = Some((d2, i));
        }
    }
    best.map(|(d2, index)| Nearest { index, distance: d2.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_index_errors() {
        let idx = SpatialIndex::build(&[]);
        assert!(matches!(idx.nearest(&Vec3::zeros()), Err(GeometryError::EmptyIndex)));
    }

    #[test]
    fn query_on_vertex() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.0, 0.5)];
        let n = SpatialIndex::build(&pts).nearest(&pts[1]).unwrap();
        assert_eq!(n, Nearest { index: 1, distance: 0.0 });
    }

    #[test]
    fn cube_centre_tie_goes_to_lowest_index() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        // reversed insertion order must still resolve to index 0
        let n = SpatialIndex::build(&pts).nearest(&Vec3::repeat(0.5)).unwrap();
        assert_eq!(n.index, 0);
        assert!((n.distance - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..5000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = SpatialIndex::build(&pts);
        for _ in 0..1000 {
            let q = Vec3::new(rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2));
            assert_eq!(idx.nearest(&q).unwrap(), brute_force_nearest(&pts, &q).unwrap());
        }
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let pts = vec![Vec3::new(0.5, 0.5, 0.5); 40];
        let n = SpatialIndex::build(&pts).nearest(&Vec3::zeros()).unwrap();
        assert_eq!(n.index, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn agrees_with_brute_force(
            // integer grid coordinates produce many exact ties
            pts in prop::collection::vec((0i32..6, 0i32..6, 0i32..6), 1..400),
            q in (0i32..12, 0i32..12, 0i32..12),
        ) {
            let pts: Vec<_> = pts.iter().map(|&(x, y, z)| Vec3::new(x as f64, y as f64, z as f64)).collect();
            let q = Vec3::new(q.0 as f64 * 0.5, q.1 as f64 * 0.5, q.2 as f64 * 0.5);
            let idx = SpatialIndex::build(&pts);
            prop_assert_eq!(idx.nearest(&q).unwrap(), brute_force_nearest(&pts, &q).unwrap());
        }
    }
}
