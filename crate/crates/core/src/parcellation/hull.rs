//! 3D convex hull (quickhull).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{bbox_of, Vec3};

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(v: [usize; 3], pts: &[Vec3]) -> Self {
        let normal = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]])).normalize();
        Face {
            v,
            normal,
            offset: normal.dot(&pts[v[0]]),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn dist(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Outward-oriented triangles of the convex hull, as indices into `points`.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub triangles: Vec<[usize; 3]>,
    planes: Vec<(Vec3, f64)>,
}

impl ConvexHull {
    /// Distance from a point inside (or on) the hull to its surface.
    pub fn depth(&self, p: &Vec3) -> f64 {
        self.planes
            .iter()
            .map(|(n, d)| (d - n.dot(p)).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed distance to the farthest supporting plane; positive outside.
    pub fn max_plane_distance(&self, p: &Vec3) -> f64 {
        self.planes.iter().map(|(n, d)| n.dot(p) - d).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn convex_hull(points: &[Vec3]) -> Result<ConvexHull> {
    if points.len() < 4 {
        return Err(Error::DegenerateHull(format!("{} points", points.len())));
    }
    let (lo, hi) = bbox_of(points);
    let scale = (hi - lo).norm();
    let eps = 1e-10 * scale.max(f64::MIN_POSITIVE);

    // Initial simplex from extreme points.
    let mut extremes = Vec::new();
    for axis in 0..3 {
        let (mut imin, mut imax) = (0, 0);
        for (i, p) in points.iter().enumerate() {
            if p[axis] < points[imin][axis] {
                imin = i;
            }
            if p[axis] > points[imax][axis] {
                imax = i;
            }
        }
        extremes.push(imin);
        extremes.push(imax);
    }
    let mut a = extremes[0];
    let mut b = extremes[1];
    let mut best = -1.0;
    for &i in &extremes {
        for &j in &extremes {
            let d = (points[i] - points[j]).norm();
            if d > best {
                best = d;
                a = i;
                b = j;
            }
        }
    }
    if best <= eps {
        return Err(Error::DegenerateHull("all points coincide".into()));
    }
    let dir = (points[b] - points[a]).normalize();
    let line_dist = |p: &Vec3| {
        let w = p - points[a];
        (w - dir * w.dot(&dir)).norm()
    };
    let c = (0..points.len())
        .max_by(|&i, &j| line_dist(&points[i]).total_cmp(&line_dist(&points[j])))
        .unwrap();
    if line_dist(&points[c]) <= eps {
        return Err(Error::DegenerateHull("points are collinear".into()));
    }
    let n = (points[b] - points[a]).cross(&(points[c] - points[a])).normalize();
    let plane_dist = |p: &Vec3| n.dot(&(p - points[a]));
    let d = (0..points.len())
        .max_by(|&i, &j| plane_dist(&points[i]).abs().total_cmp(&plane_dist(&points[j]).abs()))
        .unwrap();
    if plane_dist(&points[d]).abs() <= eps {
        return Err(Error::DegenerateHull("points are coplanar".into()));
    }

    let mut faces: Vec<Face> = Vec::new();
    let simplex = if plane_dist(&points[d]) < 0.0 {
        [[a, b, c], [a, d, b], [b, d, c], [c, d, a]]
    } else {
        [[a, c, b], [a, b, d], [b, c, d], [c, a, d]]
    };
    for f in simplex {
        faces.push(Face::new(f, points));
    }
    let mut edge_face: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            edge_face.insert((f.v[k], f.v[(k + 1) % 3]), fi);
        }
    }

    for (i, p) in points.iter().enumerate() {
        if [a, b, c, d].contains(&i) {
            continue;
        }
        if let Some(fi) = (0..4).find(|&fi| faces[fi].dist(p) > eps) {
            faces[fi].outside.push(i);
        }
    }

    let mut cursor = 0;
    while cursor < faces.len() {
        if !faces[cursor].alive || faces[cursor].outside.is_empty() {
            cursor += 1;
            continue;
        }
        let apex = *faces[cursor]
            .outside
            .iter()
            .max_by(|&&i, &&j| faces[cursor].dist(&points[i]).total_cmp(&faces[cursor].dist(&points[j])))
            .unwrap();
        let p = points[apex];

        // Visible region by flood fill across edges.
        let mut visible = vec![cursor];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(cursor, true)]);
        let mut horizon = Vec::new();
        let mut stack = vec![cursor];
        while let Some(fi) = stack.pop() {
            let v = faces[fi].v;
            for k in 0..3 {
                let (e0, e1) = (v[k], v[(k + 1) % 3]);
                let nb = edge_face[&(e1, e0)];
                let vis = *is_visible.entry(nb).or_insert_with(|| faces[nb].dist(&p) > eps);
                if vis {
                    if !visible.contains(&nb) {
                        visible.push(nb);
                        stack.push(nb);
                    }
                } else {
                    horizon.push((e0, e1));
                }
            }
        }

        let mut orphans = Vec::new();
        for &fi in &visible {
            faces[fi].alive = false;
            orphans.append(&mut faces[fi].outside);
            let v = faces[fi].v;
            for k in 0..3 {
                edge_face.remove(&(v[k], v[(k + 1) % 3]));
            }
        }
        let first_new = faces.len();
        for &(e0, e1) in &horizon {
            let f = Face::new([e0, e1, apex], points);
            let fi = faces.len();
            for k in 0..3 {
                edge_face.insert((f.v[k], f.v[(k + 1) % 3]), fi);
            }
            faces.push(f);
        }
        for i in orphans {
            if i == apex {
                continue;
            }
            if let Some(fi) = (first_new..faces.len()).find(|&fi| faces[fi].dist(&points[i]) > eps) {
                faces[fi].outside.push(i);
            }
        }
    }

    let live: Vec<&Face> = faces.iter().filter(|f| f.alive).collect();
    Ok(ConvexHull {
        triangles: live.iter().map(|f| f.v).collect(),
        planes: live.iter().map(|f| (f.normal, f.offset)).collect(),
    })
}
