//! Incremental convex hull in R⁴ for point sets in convex position.
//!
//! Every input point on the unit 3-sphere is a hull vertex, so the facets
//! form a triangulation of S³ (the spherical Delaunay triangulation).

use std::collections::HashMap;

use crate::error::SamplingError;

const VISIBLE_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Facet {
    v: [u32; 4],
    n: [f64; 4],
    d: f64,
    alive: bool,
}

fn sub(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Vector orthogonal to `u`, `v`, `w` (generalised cross product).
fn cross4(u: &[f64; 4], v: &[f64; 4], w: &[f64; 4]) -> [f64; 4] {
    let minor = |skip: usize| {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        let row = |x: &[f64; 4]| [x[cols[0]], x[cols[1]], x[cols[2]]];
        det3([row(u), row(v), row(w)])
    };
    [minor(0), -minor(1), minor(2), -minor(3)]
}

fn ridge_key(mut r: [u32; 3]) -> [u32; 3] {
    r.sort_unstable();
    r
}

struct Hull<'a> {
    pts: &'a [[f64; 4]],
    interior: [f64; 4],
    facets: Vec<Facet>,
    ridges: HashMap<[u32; 3], [u32; 2]>,
}

impl<'a> Hull<'a> {
    fn make_facet(&self, v: [u32; 4]) -> Result<Facet, SamplingError> {
        let p = |i: usize| &self.pts[v[i] as usize];
        let mut n = cross4(&sub(p(1), p(0)), &sub(p(2), p(0)), &sub(p(3), p(0)));
        let len = dot(&n, &n).sqrt();
        if len < 1e-300 {
            return Err(SamplingError::Hull("degenerate facet".into()));
        }
        for c in n.iter_mut() {
            *c /= len;
        }
        let mut d = dot(&n, p(0));
        if dot(&n, &self.interior) > d {
            for c in n.iter_mut() {
                *c = -*c;
            }
            d = -d;
        }
        Ok(Facet { v, n, d, alive: true })
    }

    fn add_facet(&mut self, v: [u32; 4]) -> Result<(), SamplingError> {
        let f = self.make_facet(v)?;
        let id = self.facets.len() as u32;
        for skip in 0..4 {
            let r: Vec<u32> = (0..4).filter(|&i| i != skip).map(|i| v[i]).collect();
            let key = ridge_key([r[0], r[1], r[2]]);
            let e = self.ridges.entry(key).or_insert([u32::MAX, u32::MAX]);
            if e[0] == u32::MAX {
                e[0] = id;
            } else if e[1] == u32::MAX {
                e[1] = id;
            } else {
                return Err(SamplingError::Hull("ridge shared by more than two facets".into()));
            }
        }
        self.facets.push(f);
        Ok(())
    }

    fn remove_facet(&mut self, id: u32) {
        let v = self.facets[id as usize].v;
        self.facets[id as usize].alive = false;
        for skip in 0..4 {
            let r: Vec<u32> = (0..4).filter(|&i| i != skip).map(|i| v[i]).collect();
            let key = ridge_key([r[0], r[1], r[2]]);
            if let Some(e) = self.ridges.get_mut(&key) {
                if e[0] == id {
                    e[0] = e[1];
                    e[1] = u32::MAX;
                } else if e[1] == id {
                    e[1] = u32::MAX;
                }
                if e[0] == u32::MAX {
                    self.ridges.remove(&key);
                }
            }
        }
    }

    fn insert(&mut self, p: u32) -> Result<bool, SamplingError> {
        let x = self.pts[p as usize];
        let visible: Vec<u32> = self
            .facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && dot(&f.n, &x) - f.d > VISIBLE_EPS)
            .map(|(i, _)| i as u32)
            .collect();
        if visible.is_empty() {
            return Ok(false);
        }
        let mut is_visible = vec![false; self.facets.len()];
        for &f in &visible {
            is_visible[f as usize] = true;
        }
        let mut horizon = Vec::new();
        for &f in &visible {
            let v = self.facets[f as usize].v;
            for skip in 0..4 {
                let r: Vec<u32> = (0..4).filter(|&i| i != skip).map(|i| v[i]).collect();
                let key = ridge_key([r[0], r[1], r[2]]);
                let pair = self.ridges[&key];
                let other = if pair[0] == f { pair[1] } else { pair[0] };
                if other == u32::MAX || !is_visible[other as usize] {
                    horizon.push(key);
                }
            }
        }
        for &f in &visible {
            self.remove_facet(f);
        }
        for r in horizon {
            self.add_facet([r[0], r[1], r[2], p])?;
        }
        Ok(true)
    }
}

/// Indices of five affinely independent points, greedily maximising spread.
fn initial_simplex(pts: &[[f64; 4]]) -> Result<[usize; 5], SamplingError> {
    let mut chosen = vec![0usize];
    let mut basis: Vec<[f64; 4]> = Vec::new();
    for _ in 0..4 {
        let origin = pts[chosen[0]];
        let mut best = (0usize, 0.0f64);
        for (i, p) in pts.iter().enumerate() {
            let mut r = sub(p, &origin);
            for b in &basis {
                let c = dot(&r, b);
                for k in 0..4 {
                    r[k] -= c * b[k];
                }
            }
            let len = dot(&r, &r).sqrt();
            if len > best.1 {
                best = (i, len);
            }
        }
        if best.1 < 1e-9 {
            return Err(SamplingError::Hull("points are not full-dimensional".into()));
        }
        let mut r = sub(&pts[best.0], &origin);
        for b in &basis {
            let c = dot(&r, b);
            for k in 0..4 {
                r[k] -= c * b[k];
            }
        }
        let len = dot(&r, &r).sqrt();
        basis.push([r[0] / len, r[1] / len, r[2] / len, r[3] / len]);
        chosen.push(best.0);
    }
    Ok([chosen[0], chosen[1], chosen[2], chosen[3], chosen[4]])
}

/// Tetrahedra (vertex index quadruples) of the convex hull boundary.
///
/// Fails if any point is not a hull vertex or the result is not a closed
/// 3-manifold.
pub fn convex_hull_4d(pts: &[[f64; 4]]) -> Result<Vec<[u32; 4]>, SamplingError> {
    if pts.len() < 5 {
        return Err(SamplingError::Hull("need at least five points".into()));
    }
    let s = initial_simplex(pts)?;
    let mut interior = [0.0; 4];
    for &i in &s {
        for k in 0..4 {
            interior[k] += pts[i][k] / 5.0;
        }
    }
    let mut hull = Hull { pts, interior, facets: Vec::new(), ridges: HashMap::new() };
    for skip in 0..5 {
        let v: Vec<u32> = (0..5).filter(|&i| i != skip).map(|i| s[i] as u32).collect();
        hull.add_facet([v[0], v[1], v[2], v[3]])?;
    }
    for p in 0..pts.len() {
        if s.contains(&p) {
            continue;
        }
        if !hull.insert(p as u32)? {
            return Err(SamplingError::Hull(format!("point {p} is not a hull vertex")));
        }
        if hull.facets.len() > 4 * hull.ridges.len().max(64) {
            compact(&mut hull);
        }
    }
    let tets: Vec<[u32; 4]> = hull.facets.iter().filter(|f| f.alive).map(|f| f.v).collect();
    if hull.ridges.values().any(|p| p[1] == u32::MAX) {
        return Err(SamplingError::Hull("boundary is not closed".into()));
    }
    let mut used = vec![false; pts.len()];
    for t in &tets {
        for &v in t {
            used[v as usize] = true;
        }
    }
    if let Some(p) = used.iter().position(|u| !u) {
        return Err(SamplingError::Hull(format!("point {p} is not a hull vertex")));
    }
    Ok(tets)
}

fn compact(h: &mut Hull) {
    let mut remap = vec![u32::MAX; h.facets.len()];
    let mut kept = Vec::with_capacity(h.facets.len() / 2);
    for (i, f) in h.facets.iter().enumerate() {
        if f.alive {
            remap[i] = kept.len() as u32;
            kept.push(f.clone());
        }
    }
    for pair in h.ridges.values_mut() {
        for id in pair.iter_mut() {
            if *id != u32::MAX {
                *id = remap[*id as usize];
            }
        }
    }
    h.facets = kept;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_is_orthogonal() {
        let u = [1.0, 2.0, 0.5, -1.0];
        let v = [0.3, -1.0, 2.0, 0.0];
        let w = [0.0, 0.4, 1.0, 3.0];
        let n = cross4(&u, &v, &w);
        assert!(dot(&n, &u).abs() < 1e-12);
        assert!(dot(&n, &v).abs() < 1e-12);
        assert!(dot(&n, &w).abs() < 1e-12);
    }

    #[test]
    fn cross_polytope_has_sixteen_facets() {
        let mut pts = Vec::new();
        for k in 0..4 {
            for s in [1.0, -1.0] {
                let mut p = [0.0; 4];
                p[k] = s;
                pts.push(p);
            }
        }
        let t = convex_hull_4d(&pts).unwrap();
        assert_eq!(t.len(), 16);
    }
}
