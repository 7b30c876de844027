//! Static 3D kd-tree for nearest-neighbor distance queries against the
//! stored sample points of a reference measure.

use crate::dynamics::State;

pub struct KdTree3 {
    // Implicit binary tree: node i has children 2i+1, 2i+2; split axis
    // cycles with depth. Points are stored at every node.
    nodes: Vec<State>,
}

impl KdTree3 {
    pub fn build(points: &[State]) -> Self {
        assert!(!points.is_empty(), "kd-tree needs at least one point");
        let n = points.len();
        let mut size = 1usize;
        while size < n + 1 {
            size <<= 1;
        }
        let mut nodes = vec![State::new(f64::NAN, f64::NAN, f64::NAN); size];
        let mut pts: Vec<State> = points.to_vec();
        Self::split(&mut pts, 0, 0, &mut nodes);
        KdTree3 { nodes }
    }

    fn split(pts: &mut [State], node: usize, depth: usize, nodes: &mut [State]) {
        if pts.is_empty() {
            return;
        }
        let axis = depth % 3;
        let mid = pts.len() / 2;
        pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
        nodes[node] = pts[mid];
        let (lo, rest) = pts.split_at_mut(mid);
        let hi = &mut rest[1..];
        Self::split(lo, 2 * node + 1, depth + 1, nodes);
        Self::split(hi, 2 * node + 2, depth + 1, nodes);
    }

    /// Squared Euclidean distance from `q` to the nearest stored point.
    pub fn nearest_dist_sq(&self, q: &State) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, 0, q, &mut best);
        best
    }

    fn search(&self, node: usize, depth: usize, q: &State, best: &mut f64) {
        if node >= self.nodes.len() {
            return;
        }
        let p = &self.nodes[node];
        if p.x.is_nan() {
            return;
        }
        let d = (q - p).norm_squared();
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (2 * node + 1, 2 * node + 2)
        } else {
            (2 * node + 2, 2 * node + 1)
        };
        self.search(near, depth + 1, q, best);
        if delta * delta < *best {
            self.search(far, depth + 1, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = crate::substream(42, "kdtree-test");
        let pts: Vec<State> = (0..300)
            .map(|_| {
                State::new(
                    rng.gen_range(-20.0..20.0),
                    rng.gen_range(-25.0..25.0),
                    rng.gen_range(0.0..50.0),
                )
            })
            .collect();
        let tree = KdTree3::build(&pts);
        for _ in 0..200 {
            let q = State::new(
                rng.gen_range(-25.0..25.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-5.0..55.0),
            );
            let brute = pts
                .iter()
                .map(|p| (q - p).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_dist_sq(&q), brute);
        }
    }

    #[test]
    fn single_point() {
        let tree = KdTree3::build(&[State::new(1.0, 2.0, 3.0)]);
        assert_eq!(tree.nearest_dist_sq(&State::new(1.0, 2.0, 3.0)), 0.0);
        assert_eq!(tree.nearest_dist_sq(&State::new(1.0, 2.0, 5.0)), 4.0);
    }
}
