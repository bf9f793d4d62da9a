//! Uniform SO(3) meshes from an antipodally symmetric S³ node set.
//!
//! The base nodes are triangulated by their convex hull in R⁴; finer meshes
//! come from 1→8 midpoint refinement of every tetrahedron with the midpoints
//! pushed back onto the sphere. Each antipodal pair contributes one rotation,
//! the canonical-sign quaternion.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::hull::convex_hull_4d;
use super::{ManifoldTag, SamplingSet};
use crate::error::SamplingError;
use crate::manifold::{canonical, Rotation};

/// Number of nodes in the bundled S³ design.
pub const BASE_NODE_COUNT: usize = 3642;
/// Seed and iteration count that reproduce the bundled asset.
pub const BASE_NODE_SEED: u64 = 3642;
pub const BASE_NODE_ITERS: usize = 400;

const BUNDLED_NODES: &str = include_str!("../../assets/s3_nodes_3642.txt");

fn add(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

fn norm(a: &[f64; 4]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt()
}

fn chord2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    (0..4).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

fn neg(a: &[f64; 4]) -> [f64; 4] {
    [-a[0], -a[1], -a[2], -a[3]]
}

fn bits(a: &[f64; 4]) -> [u64; 4] {
    // +0.0 and -0.0 must hash alike.
    a.map(|c| if c == 0.0 { 0u64 } else { c.to_bits() })
}

/// Antipodally symmetric node set by Riesz s-energy descent (s = 2).
///
/// Returns `2·n_pairs` unit vectors; entry `i + n_pairs` is the exact
/// negation of entry `i`, and the first half is in canonical sign.
pub fn generate_symmetric_nodes(n_pairs: usize, iters: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<[f64; 4]> = (0..n_pairs)
        .map(|_| loop {
            let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let n = norm(&v);
            if n > 1e-6 {
                break v.map(|c| c / n);
            }
        })
        .collect();
    let spacing = (2.0 * std::f64::consts::PI.powi(2) / (2 * n_pairs) as f64).cbrt();
    for it in 0..iters {
        let step = 0.3 * spacing * 1e-3f64.powf(it as f64 / iters.max(1) as f64);
        let forces: Vec<[f64; 4]> = (0..n_pairs)
            .into_par_iter()
            .map(|i| {
                let xi = x[i];
                let mut f = [0.0; 4];
                for (j, xj) in x.iter().enumerate() {
                    for (sgn, skip) in [(1.0, i == j), (-1.0, false)] {
                        if skip {
                            continue;
                        }
                        let d: [f64; 4] = std::array::from_fn(|k| xi[k] - sgn * xj[k]);
                        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3];
                        let w = 1.0 / (r2 * r2);
                        for k in 0..4 {
                            f[k] += w * d[k];
                        }
                    }
                }
                let radial = (0..4).map(|k| f[k] * xi[k]).sum::<f64>();
                std::array::from_fn(|k| f[k] - radial * xi[k])
            })
            .collect();
        for (xi, f) in x.iter_mut().zip(&forces) {
            let fn_ = norm(f);
            if fn_ > 0.0 {
                let moved: [f64; 4] = std::array::from_fn(|k| xi[k] + step * f[k] / fn_);
                let n = norm(&moved);
                *xi = moved.map(|c| c / n);
            }
        }
    }
    let half: Vec<[f64; 4]> = x.into_iter().map(canonical).collect();
    let mut out = half.clone();
    out.extend(half.iter().map(neg));
    out
}

/// Parses whitespace-separated `w x y z` lines; `#` starts a comment line.
pub fn parse_nodes(text: &str) -> Result<Vec<[f64; 4]>, SamplingError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| SamplingError::MalformedAsset(format!("line {}: {e}", ln + 1)))?;
        if vals.len() != 4 {
            return Err(SamplingError::MalformedAsset(format!("line {}: expected 4 values", ln + 1)));
        }
        out.push([vals[0], vals[1], vals[2], vals[3]]);
    }
    Ok(out)
}

pub fn load_nodes(path: &Path) -> Result<Vec<[f64; 4]>, SamplingError> {
    if !path.exists() {
        return Err(SamplingError::MissingAsset(path.to_path_buf()));
    }
    parse_nodes(&std::fs::read_to_string(path)?)
}

pub fn write_nodes<W: Write>(nodes: &[[f64; 4]], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# antipodally symmetric S3 node set, {} nodes (w x y z)", nodes.len())?;
    for q in nodes {
        writeln!(w, "{:?} {:?} {:?} {:?}", q[0], q[1], q[2], q[3])?;
    }
    Ok(())
}

/// Nodes of the bundled base design.
pub fn bundled_nodes() -> Result<Vec<[f64; 4]>, SamplingError> {
    parse_nodes(BUNDLED_NODES)
}

/// Triangulation of S³ that is closed under q ↦ −q.
#[derive(Clone, Debug)]
pub struct S3Triangulation {
    nodes: Vec<[f64; 4]>,
    antipode: Vec<u32>,
    tets: Vec<[u32; 4]>,
    level: usize,
}

impl S3Triangulation {
    /// Validates unit norm and exact antipodal symmetry, then triangulates.
    pub fn from_nodes(nodes: Vec<[f64; 4]>) -> Result<Self, SamplingError> {
        if nodes.len() < 10 || nodes.len() % 2 != 0 {
            return Err(SamplingError::MalformedAsset(format!("{} nodes; need an even count ≥ 10", nodes.len())));
        }
        for (i, q) in nodes.iter().enumerate() {
            if !q.iter().all(|c| c.is_finite()) || (norm(q) - 1.0).abs() > 1e-12 {
                return Err(SamplingError::MalformedAsset(format!("node {i} is not a unit quaternion")));
            }
        }
        let index: HashMap<[u64; 4], u32> = nodes.iter().enumerate().map(|(i, q)| (bits(q), i as u32)).collect();
        if index.len() != nodes.len() {
            return Err(SamplingError::MalformedAsset("duplicate nodes".into()));
        }
        let antipode = nodes
            .iter()
            .enumerate()
            .map(|(i, q)| {
                index
                    .get(&bits(&neg(q)))
                    .copied()
                    .ok_or_else(|| SamplingError::MalformedAsset(format!("node {i} has no antipode")))
            })
            .collect::<Result<Vec<u32>, _>>()?;
        let tets = convex_hull_4d(&nodes)?;
        Ok(S3Triangulation { nodes, antipode, tets, level: 0 })
    }

    pub fn nodes(&self) -> &[[f64; 4]] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    pub fn antipode(&self) -> &[u32] {
        &self.antipode
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Unique edges in first-encounter order over the tetrahedra.
    fn edges(&self) -> (Vec<[u32; 2]>, HashMap<u64, u32>) {
        let mut map: HashMap<u64, u32> = HashMap::with_capacity(self.tets.len() * 2);
        let mut list = Vec::with_capacity(self.tets.len() * 2);
        for t in &self.tets {
            for (a, b) in EDGE_PAIRS {
                let (u, v) = (t[a].min(t[b]), t[a].max(t[b]));
                let key = ((u as u64) << 32) | v as u64;
                map.entry(key).or_insert_with(|| {
                    list.push([u, v]);
                    (list.len() - 1) as u32
                });
            }
        }
        (list, map)
    }

    /// Vertex set of the next level: old nodes followed by edge midpoints.
    fn refined_vertices(&self) -> Result<(Vec<[f64; 4]>, Vec<u32>, HashMap<u64, u32>), SamplingError> {
        let (edges, map) = self.edges();
        let base = self.nodes.len() as u32;
        let mut nodes = self.nodes.clone();
        nodes.extend(edges.iter().map(|&[u, v]| {
            let s = add(&self.nodes[u as usize], &self.nodes[v as usize]);
            let n = norm(&s);
            s.map(|c| c / n)
        }));
        let mut antipode = self.antipode.clone();
        for &[u, v] in &edges {
            let (a, b) = (self.antipode[u as usize], self.antipode[v as usize]);
            let key = ((a.min(b) as u64) << 32) | a.max(b) as u64;
            let e = map.get(&key).ok_or_else(|| SamplingError::Hull("triangulation is not antipodally symmetric".into()))?;
            antipode.push(base + e);
        }
        let map = map.into_iter().map(|(k, e)| (k, base + e)).collect();
        Ok((nodes, antipode, map))
    }

    /// One level of 1→8 midpoint refinement.
    pub fn refine(&self) -> Result<S3Triangulation, SamplingError> {
        let (nodes, antipode, mid) = self.refined_vertices()?;
        let m = |a: u32, b: u32| mid[&(((a.min(b) as u64) << 32) | a.max(b) as u64)];
        let mut tets = Vec::with_capacity(self.tets.len() * 8);
        for &[a, b, c, d] in &self.tets {
            let (ab, ac, ad, bc, bd, cd) = (m(a, b), m(a, c), m(a, d), m(b, c), m(b, d), m(c, d));
            tets.push([a, ab, ac, ad]);
            tets.push([b, ab, bc, bd]);
            tets.push([c, ac, bc, cd]);
            tets.push([d, ad, bd, cd]);
            // Inner octahedron: opposite pairs (ab,cd), (ac,bd), (ad,bc).
            let pairs = [[ab, cd], [ac, bd], [ad, bc]];
            let len = |p: &[u32; 2]| chord2(&nodes[p[0] as usize], &nodes[p[1] as usize]);
            let k = (0..3).fold(0, |best, k| if len(&pairs[k]) < len(&pairs[best]) { k } else { best });
            let [p, q] = pairs[k];
            let [u1, u2] = pairs[(k + 1) % 3];
            let [w1, w2] = pairs[(k + 2) % 3];
            tets.push([p, q, u1, w1]);
            tets.push([p, q, w1, u2]);
            tets.push([p, q, u2, w2]);
            tets.push([p, q, w2, u1]);
        }
        Ok(S3Triangulation { nodes, antipode, tets, level: self.level + 1 })
    }

    /// Rotations of this triangulation: one canonical representative per
    /// antipodal pair, in node order.
    pub fn rotations(&self) -> SamplingSet<Rotation> {
        rotations_from(&self.nodes, self.level)
    }

    /// Rotations of the next level without building its tetrahedra.
    pub fn refined_rotations(&self) -> Result<SamplingSet<Rotation>, SamplingError> {
        let (nodes, _, _) = self.refined_vertices()?;
        Ok(rotations_from(&nodes, self.level + 1))
    }
}

const EDGE_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn rotations_from(nodes: &[[f64; 4]], level: usize) -> SamplingSet<Rotation> {
    let pts = nodes.iter().filter(|q| canonical(**q) == **q).map(|q| Rotation::from_unit_unchecked(*q)).collect();
    SamplingSet::new(pts, level, ManifoldTag::So3)
}

static BASE: OnceLock<S3Triangulation> = OnceLock::new();

/// Triangulation of the bundled base nodes, built once per process.
pub fn base_triangulation() -> Result<&'static S3Triangulation, SamplingError> {
    if let Some(t) = BASE.get() {
        return Ok(t);
    }
    let t = S3Triangulation::from_nodes(bundled_nodes()?)?;
    Ok(BASE.get_or_init(|| t))
}

/// Level-0 mesh: 1821 rotations from the 3642 bundled S³ nodes.
pub fn so3_base_mesh() -> Result<SamplingSet<Rotation>, SamplingError> {
    Ok(base_triangulation()?.rotations())
}

/// Mesh after `levels` rounds of midpoint refinement of `tri`.
pub fn refine_so3_mesh(tri: &S3Triangulation, levels: usize) -> Result<SamplingSet<Rotation>, SamplingError> {
    if levels == 0 {
        return Ok(tri.rotations());
    }
    let mut cur = std::borrow::Cow::Borrowed(tri);
    for _ in 1..levels {
        cur = std::borrow::Cow::Owned(cur.refine()?);
    }
    cur.refined_rotations()
}

/// Mesh of the given level built from the bundled base nodes.
pub fn so3_mesh(level: usize) -> Result<SamplingSet<Rotation>, SamplingError> {
    refine_so3_mesh(base_triangulation()?, level)
}

#[derive(Default)]
struct CellHasher(u64);

impl std::hash::Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }
    fn write_i32(&mut self, v: i32) {
        self.write_u64(v as u32 as u64);
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
}

type CellMap = HashMap<[i32; 4], (u32, u32), std::hash::BuildHasherDefault<CellHasher>>;

/// Angle to the nearest other rotation, for every rotation in the set.
pub fn nearest_neighbour_angles(points: &[Rotation]) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![f64::INFINITY; n];
    }
    // Both signs go into a uniform 4D grid; chord c and angle θ satisfy
    // c = 2 sin(θ/4) for the closer sign.
    let spacing = (crate::manifold::VOL_SO3 / n as f64).cbrt();
    let h = spacing;
    let cell = |q: &[f64; 4]| q.map(|c| (c / h).floor() as i32);
    let mut entries: Vec<([i32; 4], u32, [f64; 4])> = Vec::with_capacity(2 * n);
    for (i, r) in points.iter().enumerate() {
        let q = r.quaternion();
        entries.push((cell(&q), i as u32, q));
        entries.push((cell(&neg(&q)), i as u32, neg(&q)));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ranges = CellMap::default();
    let mut s = 0;
    while s < entries.len() {
        let mut e = s;
        while e < entries.len() && entries[e].0 == entries[s].0 {
            e += 1;
        }
        ranges.insert(entries[s].0, (s as u32, e as u32));
        s = e;
    }
    let nearest = |c: [i32; 4], i: u32, q: &[f64; 4]| {
        let mut best = f64::INFINITY;
        let mut ring = 1i32;
        loop {
            for d0 in -ring..=ring {
                for d1 in -ring..=ring {
                    for d2 in -ring..=ring {
                        for d3 in -ring..=ring {
                            if ring > 1 && [d0, d1, d2, d3].iter().all(|d| d.abs() < ring) {
                                continue;
                            }
                            let key = [c[0] + d0, c[1] + d1, c[2] + d2, c[3] + d3];
                            if let Some(&(a, b)) = ranges.get(&key) {
                                for (_, j, p) in &entries[a as usize..b as usize] {
                                    if *j != i {
                                        best = best.min(chord2(q, p));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if best.sqrt() <= ring as f64 * h || ring as f64 * h > 2.0 {
                return 4.0 * (0.5 * best.sqrt()).min(1.0).asin();
            }
            ring += 1;
        }
    };
    // Query in cell order for memory locality; one sign per rotation suffices.
    let found: Vec<(u32, f64)> = entries
        .par_iter()
        .filter(|(_, i, q)| points[*i as usize].quaternion() == *q)
        .map(|(c, i, q)| (*i, nearest(*c, *i, q)))
        .collect();
    let mut out = vec![f64::INFINITY; n];
    for (i, d) in found {
        out[i as usize] = d;
    }
    out
}

/// Mean, standard deviation and coefficient of variation.
pub fn spacing_stats(d: &[f64]) -> (f64, f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), var.sqrt() / mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_symmetric_and_deterministic() {
        let a = generate_symmetric_nodes(40, 30, 7);
        let b = generate_symmetric_nodes(40, 30, 7);
        assert_eq!(a, b);
        for i in 0..40 {
            assert_eq!(a[i + 40], neg(&a[i]));
            assert!((norm(&a[i]) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn node_text_round_trips() {
        let nodes = generate_symmetric_nodes(6, 3, 1);
        let mut buf = Vec::new();
        write_nodes(&nodes, &mut buf).unwrap();
        assert_eq!(parse_nodes(std::str::from_utf8(&buf).unwrap()).unwrap(), nodes);
    }

    #[test]
    fn small_mesh_refines_with_antipodes() {
        let tri = S3Triangulation::from_nodes(generate_symmetric_nodes(60, 60, 3)).unwrap();
        let r = tri.refine().unwrap();
        assert_eq!(r.tets().len(), 8 * tri.tets().len());
        for (i, &a) in r.antipode().iter().enumerate() {
            assert_eq!(r.nodes()[a as usize], neg(&r.nodes()[i]));
        }
        assert_eq!(r.rotations().len(), r.nodes().len() / 2);
    }

    #[test]
    fn missing_node_file() {
        let err = load_nodes(Path::new("/nonexistent/nodes.txt")).unwrap_err();
        assert!(matches!(err, SamplingError::MissingAsset(_)));
    }

    #[test]
    fn rejects_asymmetric_nodes() {
        let mut nodes = generate_symmetric_nodes(10, 5, 2);
        nodes.pop();
        nodes.push([1.0, 0.0, 0.0, 0.0]);
        assert!(S3Triangulation::from_nodes(nodes).is_err());
    }
}
