//! Convex polygon / polyhedron clipping by halfspaces.
//!
//! Cells are built by intersecting an axis-aligned box with halfspaces
//! `n·p <= c`. Every face remembers the tag of the constraint that produced it,
//! so callers can read off per-constraint face areas (used for Jacobians).

/// Tag used for faces of the initial box.
pub const BOX_TAG: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfSpace {
    pub normal: [f64; 3],
    pub offset: f64,
    pub tag: i64,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn lerp(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Tolerance for classifying a point against a plane.
fn plane_eps(h: &HalfSpace, extent: f64) -> f64 {
    1e-13 * (h.offset.abs() + norm(&h.normal) * extent).max(1e-300)
}

/// Convex polygon in the plane, counter-clockwise. `tags[k]` belongs to the
/// edge from vertex `k` to vertex `k+1`.
#[derive(Clone, Debug, Default)]
pub struct Polygon {
    pub verts: Vec<[f64; 2]>,
    pub tags: Vec<i64>,
}

impl Polygon {
    pub fn rect(lo: [f64; 2], hi: [f64; 2], tags: [i64; 4]) -> Self {
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Self::default();
        }
        // edges: bottom (-y), right (+x), top (+y), left (-x)
        Self {
            verts: vec![[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]],
            tags: tags.to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.verts.len() < 3
    }

    fn extent(&self) -> f64 {
        self.verts.iter().fold(0.0f64, |m, v| m.max(v[0].abs()).max(v[1].abs()))
    }

    /// Sutherland–Hodgman step against `n·p <= c`.
    pub fn clip(&mut self, h: &HalfSpace) {
        if self.is_empty() {
            return;
        }
        let nrm = [h.normal[0], h.normal[1]];
        let eps = plane_eps(h, self.extent());
        let d: Vec<f64> = self.verts.iter().map(|v| nrm[0] * v[0] + nrm[1] * v[1] - h.offset).collect();
        if d.iter().all(|&x| x <= eps) {
            return;
        }
        if d.iter().all(|&x| x >= -eps) {
            *self = Self::default();
            return;
        }
        let k = self.verts.len();
        let mut verts = Vec::with_capacity(k + 1);
        let mut tags = Vec::with_capacity(k + 1);
        for a in 0..k {
            let b = (a + 1) % k;
            let (da, db) = (d[a], d[b]);
            let a_in = da <= eps;
            let b_in = db <= eps;
            if a_in {
                verts.push(self.verts[a]);
                if b_in {
                    tags.push(self.tags[a]);
                } else if da < -eps {
                    // leaving: the edge is cut, then the new edge runs along the plane
                    let t = da / (da - db);
                    let p = [
                        self.verts[a][0] + t * (self.verts[b][0] - self.verts[a][0]),
                        self.verts[a][1] + t * (self.verts[b][1] - self.verts[a][1]),
                    ];
                    tags.push(self.tags[a]);
                    verts.push(p);
                    tags.push(h.tag);
                } else {
                    // a lies on the plane and b is outside
                    tags.push(h.tag);
                }
            } else if b_in && db < -eps {
                // entering
                let t = da / (da - db);
                let p = [
                    self.verts[a][0] + t * (self.verts[b][0] - self.verts[a][0]),
                    self.verts[a][1] + t * (self.verts[b][1] - self.verts[a][1]),
                ];
                verts.push(p);
                tags.push(self.tags[a]);
            }
        }
        *self = Self { verts, tags };
        self.drop_degenerate();
    }

    fn drop_degenerate(&mut self) {
        let ext = self.extent().max(1e-300);
        let mut k = 0;
        while k < self.verts.len() && self.verts.len() >= 3 {
            let next = (k + 1) % self.verts.len();
            let (a, b) = (self.verts[k], self.verts[next]);
            if (a[0] - b[0]).abs() + (a[1] - b[1]).abs() <= 1e-14 * ext {
                // zero-length edge k: drop its start vertex; edge k-1 now ends at `next`
                self.verts.remove(k);
                self.tags.remove(k);
            } else {
                k += 1;
            }
        }
        if self.verts.len() < 3 {
            *self = Self::default();
        }
    }

    pub fn area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let k = self.verts.len();
        let mut s = 0.0;
        for a in 0..k {
            let b = (a + 1) % k;
            s += self.verts[a][0] * self.verts[b][1] - self.verts[b][0] * self.verts[a][1];
        }
        0.5 * s.abs()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let k = self.verts.len();
        let mut c = [0.0; 2];
        let mut a2 = 0.0;
        for a in 0..k {
            let b = (a + 1) % k;
            let cr = self.verts[a][0] * self.verts[b][1] - self.verts[b][0] * self.verts[a][1];
            a2 += cr;
            c[0] += (self.verts[a][0] + self.verts[b][0]) * cr;
            c[1] += (self.verts[a][1] + self.verts[b][1]) * cr;
        }
        if a2.abs() < 1e-300 {
            let m = self.verts.iter().fold([0.0, 0.0], |s, v| [s[0] + v[0], s[1] + v[1]]);
            return [m[0] / k.max(1) as f64, m[1] / k.max(1) as f64];
        }
        [c[0] / (3.0 * a2), c[1] / (3.0 * a2)]
    }

    /// `(tag, length)` of every edge.
    pub fn facets(&self) -> Vec<(i64, f64)> {
        let k = self.verts.len();
        if k < 3 {
            return Vec::new();
        }
        (0..k)
            .map(|a| {
                let b = (a + 1) % k;
                let dx = self.verts[b][0] - self.verts[a][0];
                let dy = self.verts[b][1] - self.verts[a][1];
                (self.tags[a], dx.hypot(dy))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Face {
    verts: Vec<usize>,
    tag: i64,
    normal: [f64; 3],
    offset: f64,
}

/// Convex polyhedron as a face list over a shared vertex array.
#[derive(Clone, Debug, Default)]
pub struct Polyhedron {
    verts: Vec<[f64; 3]>,
    faces: Vec<Face>,
}

impl Polyhedron {
    /// Box `[lo, hi]`; `tags` ordered as (-x, +x, -y, +y, -z, +z).
    pub fn cuboid(lo: [f64; 3], hi: [f64; 3], tags: [i64; 6]) -> Self {
        if !(hi[0] > lo[0] && hi[1] > lo[1] && hi[2] > lo[2]) {
            return Self::default();
        }
        let v = |i: usize| -> [f64; 3] {
            [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ]
        };
        let verts = (0..8).map(v).collect();
        let mk = |vs: [usize; 4], tag: i64, normal: [f64; 3], offset: f64| Face { verts: vs.to_vec(), tag, normal, offset };
        let faces = vec![
            mk([0, 4, 6, 2], tags[0], [-1.0, 0.0, 0.0], -lo[0]),
            mk([1, 3, 7, 5], tags[1], [1.0, 0.0, 0.0], hi[0]),
            mk([0, 1, 5, 4], tags[2], [0.0, -1.0, 0.0], -lo[1]),
            mk([2, 6, 7, 3], tags[3], [0.0, 1.0, 0.0], hi[1]),
            mk([0, 2, 3, 1], tags[4], [0.0, 0.0, -1.0], -lo[2]),
            mk([4, 5, 7, 6], tags[5], [0.0, 0.0, 1.0], hi[2]),
        ];
        Self { verts, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.len() < 4
    }

    fn extent(&self) -> f64 {
        self.verts.iter().fold(0.0f64, |m, v| m.max(v[0].abs()).max(v[1].abs()).max(v[2].abs()))
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.verts
    }

    /// Intersects with `n·p <= c`.
    pub fn clip(&mut self, h: &HalfSpace) {
        if self.is_empty() {
            return;
        }
        let eps = plane_eps(h, self.extent());
        if self.verts.iter().all(|v| dot(&h.normal, v) - h.offset <= eps) {
            return;
        }
        let d: Vec<f64> = self.verts.iter().map(|v| dot(&h.normal, v) - h.offset).collect();
        if d.iter().all(|&x| x >= -eps) {
            *self = Self::default();
            return;
        }
        let mut verts = self.verts.clone();
        // cache of edge intersection vertices keyed by the (sorted) edge
        let mut cuts: Vec<(usize, usize, usize)> = Vec::new();
        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut coplanar_face = false;
        for f in &self.faces {
            if f.verts.iter().all(|&v| d[v].abs() <= eps) {
                coplanar_face = true;
            }
            let k = f.verts.len();
            let mut out = Vec::with_capacity(k + 2);
            for s in 0..k {
                let a = f.verts[s];
                let b = f.verts[(s + 1) % k];
                let (da, db) = (d[a], d[b]);
                if da <= eps {
                    out.push(a);
                }
                if (da < -eps && db > eps) || (da > eps && db < -eps) {
                    let key = (a.min(b), a.max(b));
                    let idx = match cuts.iter().find(|c| c.0 == key.0 && c.1 == key.1) {
                        Some(c) => c.2,
                        None => {
                            let t = da / (da - db);
                            verts.push(lerp(&self.verts[a], &self.verts[b], t));
                            let id = verts.len() - 1;
                            cuts.push((key.0, key.1, id));
                            id
                        }
                    };
                    out.push(idx);
                }
            }
            if out.len() >= 3 {
                faces.push(Face { verts: out, tag: f.tag, normal: f.normal, offset: f.offset });
            }
        }
        if !coplanar_face {
            let old = self.verts.len();
            let mut cap: Vec<usize> = (0..old).filter(|&v| d[v].abs() <= eps).collect();
            cap.extend(cuts.iter().map(|c| c.2));
            // keep only vertices still referenced by a face
            cap.retain(|&v| faces.iter().any(|f| f.verts.contains(&v)));
            if cap.len() >= 3 {
                let c = cap.iter().fold([0.0; 3], |s, &v| {
                    [s[0] + verts[v][0], s[1] + verts[v][1], s[2] + verts[v][2]]
                });
                let m = cap.len() as f64;
                let c = [c[0] / m, c[1] / m, c[2] / m];
                let nn = h.normal;
                let seed = if nn[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let e1 = cross(&nn, &seed);
                let e2 = cross(&nn, &e1);
                let mut ang: Vec<(f64, usize)> = cap
                    .iter()
                    .map(|&v| {
                        let r = sub(&verts[v], &c);
                        (dot(&r, &e2).atan2(dot(&r, &e1)), v)
                    })
                    .collect();
                ang.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut ring: Vec<usize> = ang.into_iter().map(|x| x.1).collect();
                let ext = self.extent().max(1e-300);
                ring.dedup_by(|a, b| norm(&sub(&verts[*a], &verts[*b])) <= 1e-13 * ext);
                if ring.len() >= 3 {
                    faces.push(Face { verts: ring, tag: h.tag, normal: h.normal, offset: h.offset });
                }
            }
        }
        // compact vertices
        let mut remap = vec![usize::MAX; verts.len()];
        let mut new_verts = Vec::with_capacity(verts.len());
        for f in &mut faces {
            for v in &mut f.verts {
                if remap[*v] == usize::MAX {
                    remap[*v] = new_verts.len();
                    new_verts.push(verts[*v]);
                }
                *v = remap[*v];
            }
        }
        self.verts = new_verts;
        self.faces = faces;
        if self.faces.len() < 4 {
            *self = Self::default();
        }
    }

    fn face_area(&self, f: &Face) -> f64 {
        let p0 = self.verts[f.verts[0]];
        let mut acc = [0.0; 3];
        for w in f.verts[1..].windows(2) {
            let c = cross(&sub(&self.verts[w[0]], &p0), &sub(&self.verts[w[1]], &p0));
            acc = [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]];
        }
        0.5 * norm(&acc)
    }

    fn interior_point(&self) -> [f64; 3] {
        let m = self.verts.len().max(1) as f64;
        let s = self.verts.iter().fold([0.0; 3], |s, v| [s[0] + v[0], s[1] + v[1], s[2] + v[2]]);
        [s[0] / m, s[1] / m, s[2] / m]
    }

    /// Volume as a sum of pyramids over faces from an interior point.
    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let c = self.interior_point();
        self.faces
            .iter()
            .map(|f| {
                let nn = norm(&f.normal);
                let h = (f.offset - dot(&f.normal, &c)) / nn;
                self.face_area(f) * h.max(0.0) / 3.0
            })
            .sum()
    }

    pub fn centroid(&self) -> [f64; 3] {
        if self.is_empty() {
            return self.interior_point();
        }
        let c = self.interior_point();
        let mut acc = [0.0; 3];
        let mut vol = 0.0;
        for f in &self.faces {
            let p0 = self.verts[f.verts[0]];
            for w in f.verts[1..].windows(2) {
                let (p1, p2) = (self.verts[w[0]], self.verts[w[1]]);
                let v = dot(&sub(&p0, &c), &cross(&sub(&p1, &c), &sub(&p2, &c))).abs() / 6.0;
                vol += v;
                for k in 0..3 {
                    acc[k] += v * (c[k] + p0[k] + p1[k] + p2[k]) / 4.0;
                }
            }
        }
        if vol <= 0.0 {
            return c;
        }
        [acc[0] / vol, acc[1] / vol, acc[2] / vol]
    }

    /// `(tag, area)` of every face.
    pub fn facets(&self) -> Vec<(i64, f64)> {
        self.faces.iter().map(|f| (f.tag, self.face_area(f))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(n: [f64; 3], c: f64, tag: i64) -> HalfSpace {
        HalfSpace { normal: n, offset: c, tag }
    }

    #[test]
    fn cube_volume_and_facets() {
        let p = Polyhedron::cuboid([0.0; 3], [1.0, 2.0, 3.0], [BOX_TAG; 6]);
        assert!((p.volume() - 6.0).abs() < 1e-14);
        let total: f64 = p.facets().iter().map(|f| f.1).sum();
        assert!((total - 22.0).abs() < 1e-13);
    }

    #[test]
    fn corner_cut() {
        let mut p = Polyhedron::cuboid([0.0; 3], [1.0; 3], [BOX_TAG; 6]);
        p.clip(&hs([1.0, 1.0, 1.0], 1.0, 7));
        assert!((p.volume() - 1.0 / 6.0).abs() < 1e-14);
        let cap: f64 = p.facets().iter().filter(|f| f.0 == 7).map(|f| f.1).sum();
        assert!((cap - 3f64.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn half_cut_through_vertices() {
        let mut p = Polyhedron::cuboid([0.0; 3], [1.0; 3], [BOX_TAG; 6]);
        p.clip(&hs([1.0, -1.0, 0.0], 0.0, 3));
        assert!((p.volume() - 0.5).abs() < 1e-14);
        p.clip(&hs([1.0, -1.0, 0.0], 0.0, 4));
        assert!((p.volume() - 0.5).abs() < 1e-14);
        p.clip(&hs([-1.0, 1.0, 0.0], 0.0, 5));
        assert!(p.volume() < 1e-14);
    }

    #[test]
    fn polygon_clip() {
        let mut p = Polygon::rect([0.0, 0.0], [1.0, 1.0], [BOX_TAG; 4]);
        p.clip(&hs([1.0, 1.0, 0.0], 1.0, 9));
        assert!((p.area() - 0.5).abs() < 1e-15);
        let cut: f64 = p.facets().iter().filter(|f| f.0 == 9).map(|f| f.1).sum();
        assert!((cut - 2f64.sqrt()).abs() < 1e-15);
        p.clip(&hs([-1.0, -1.0, 0.0], -1.0, 10));
        assert!(p.area() < 1e-15);
    }
}
