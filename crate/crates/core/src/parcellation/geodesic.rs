use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTopology, TetMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Item {
    dist: f64,
    node: usize,
}

impl Eq for Item {}

impl Ord for Item {
    // Reversed so that BinaryHeap pops the nearest node first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Edge-weighted shortest paths from a set of sources, over the whole graph.
/// Unreachable nodes get `f64::INFINITY`.
pub fn multi_source_dijkstra(neighbors: &[Vec<usize>], positions: &[Vec3], sources: &[usize]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; neighbors.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Item { dist: 0.0, node: s });
    }
    while let Some(Item { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &v in &neighbors[u] {
            let nd = d + (positions[u] - positions[v]).norm();
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Shortest-path distances from `source` to every node within `hops` edges,
/// using only paths inside that hop neighbourhood. Sorted by node index.
pub fn hop_limited_dijkstra(
    neighbors: &[Vec<usize>],
    positions: &[Vec3],
    source: usize,
    hops: usize,
) -> Vec<(usize, f64)> {
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut nodes = vec![source];
    slot.insert(source, 0);
    let mut frontier = vec![source];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &neighbors[u] {
                if let std::collections::hash_map::Entry::Vacant(e) = slot.entry(v) {
                    e.insert(nodes.len());
                    nodes.push(v);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }

    let mut dist = vec![f64::INFINITY; nodes.len()];
    dist[0] = 0.0;
    let mut heap = BinaryHeap::from([Item { dist: 0.0, node: 0 }]);
    while let Some(Item { dist: d, node: a }) = heap.pop() {
        if d > dist[a] {
            continue;
        }
        let u = nodes[a];
        for &v in &neighbors[u] {
            let Some(&b) = slot.get(&v) else { continue };
            let nd = d + (positions[u] - positions[v]).norm();
            if nd < dist[b] {
                dist[b] = nd;
                heap.push(Item { dist: nd, node: b });
            }
        }
    }
    let mut out: Vec<(usize, f64)> = nodes.into_iter().zip(dist).skip(1).collect();
    out.sort_unstable_by_key(|p| p.0);
    out
}

/// Normalized boundary geodesics between every pair of boundary vertices at
/// most three edges apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesics {
    /// `(i, j, l)` with local indices `i < j` and `l` in `(0, 1]`, sorted.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Largest raw distance (mm) used for normalization.
    pub max_mm: f64,
}

/// Raw (mm) pairwise distances, symmetrized by taking the smaller of the two
/// directed hop-limited searches.
pub fn ring_distances(neighbors: &[Vec<usize>], positions: &[Vec3], hops: usize) -> Vec<(usize, usize, f64)> {
    let per_source: Vec<Vec<(usize, f64)>> = (0..neighbors.len())
        .into_par_iter()
        .map(|s| hop_limited_dijkstra(neighbors, positions, s, hops))
        .collect();
    let mut pairs: HashMap<(usize, usize), f64> = HashMap::new();
    for (s, row) in per_source.iter().enumerate() {
        for &(t, d) in row {
            let key = (s.min(t), s.max(t));
            pairs.entry(key).and_modify(|e| *e = e.min(d)).or_insert(d);
        }
    }
    let mut out: Vec<(usize, usize, f64)> = pairs.into_iter().map(|((i, j), d)| (i, j, d)).collect();
    out.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    out
}

pub fn three_ring_geodesics(mesh: &TetMesh, topo: &BoundaryTopology) -> Result<Geodesics> {
    let components = topo.num_components();
    if components != 1 {
        return Err(Error::DisconnectedBoundary(components));
    }
    let positions = topo.positions(mesh.vertices());
    let mut pairs = ring_distances(&topo.neighbors, &positions, 3);
    let max_mm = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    for p in &mut pairs {
        p.2 /= max_mm;
    }
    Ok(Geodesics { pairs, max_mm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::boundary_topology;
    use crate::synth::axis_box;

    #[test]
    fn chain_distance_is_path_sum() {
        let nb = vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]];
        let pos: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let d = ring_distances(&nb, &pos, 3);
        let get = |i, j| d.iter().find(|p| p.0 == i && p.1 == j).map(|p| p.2);
        assert_eq!(get(0, 3), Some(3.0));
        assert_eq!(get(0, 4), None);
        assert_eq!(get(1, 4), Some(3.0));
    }

    #[test]
    fn farthest_pair_is_one() {
        let b = axis_box(4.0, 3.0, 2.0, [4, 3, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let g = three_ring_geodesics(&b.mesh, &topo).unwrap();
        let max = g.pairs.iter().map(|p| p.2).fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(g.pairs.iter().all(|p| p.2 > 0.0 && p.2 <= 1.0 && p.0 < p.1));
    }

    /// Floyd-Warshall inside each source's three-hop neighbourhood.
    fn oracle(nb: &[Vec<usize>], pos: &[Vec3], s: usize) -> HashMap<usize, f64> {
        let mut set = vec![s];
        let mut frontier = vec![s];
        for _ in 0..3 {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &nb[u] {
                    if !set.contains(&v) {
                        set.push(v);
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        let n = set.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for a in 0..n {
            d[a][a] = 0.0;
            for b in 0..n {
                if nb[set[a]].contains(&set[b]) {
                    d[a][b] = (pos[set[a]] - pos[set[b]]).norm();
                }
            }
        }
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if d[a][k] + d[k][b] < d[a][b] {
                        d[a][b] = d[a][k] + d[k][b];
                    }
                }
            }
        }
        (1..n).map(|b| (set[b], d[0][b])).collect()
    }

    #[test]
    fn box_geodesics_follow_edges() {
        let b = axis_box(3.0, 2.0, 2.0, [3, 2, 2]).unwrap();
        let topo = boundary_topology(&b.mesh).unwrap();
        let pos = topo.positions(b.mesh.vertices());
        let d = ring_distances(&topo.neighbors, &pos, 3);
        let rows: Vec<_> = (0..pos.len()).map(|s| oracle(&topo.neighbors, &pos, s)).collect();
        for &(i, j, dist) in &d {
            let expect = rows[i][&j].min(rows[j][&i]);
            assert!((dist - expect).abs() < 1e-12);
        }
        // Diagonal neighbours on a face not joined by a surface edge are
        // reached through two unit edges, not along the chord.
        let mut checked = 0;
        for &(i, j, dist) in &d {
            let (p, q) = (pos[i], pos[j]);
            let delta = (p - q).abs();
            let on_top = p.z == 1.0 && q.z == 1.0;
            if on_top && delta.x == 1.0 && delta.y == 1.0 && !topo.neighbors[i].contains(&j) {
                assert_eq!(dist, 2.0);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}
