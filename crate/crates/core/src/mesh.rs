//! Structured triangulations of rectangular plate midplanes.
//!
//! The strip `[0, L] x [0, b]` is split into `nx * ny` cells, each cut along
//! the diagonal from its lower-left to its upper-right corner. One side of the
//! rectangle is tagged as clamped and, when an accelerometer is configured,
//! every triangle whose centroid falls inside the accelerometer disk is tagged
//! as carrying its mass.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Side of the rectangle that is bolted to the vibrating stand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClampedSide {
    /// `x = 0`
    Left,
    /// `x = L`
    #[default]
    Right,
    /// `y = 0`
    Bottom,
    /// `y = b`
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accelerometer {
    pub center: Point,
    /// Footprint radius (m).
    pub radius: f64,
    /// Mass (kg).
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    /// Length along x (m).
    pub length: f64,
    /// Width along y (m).
    pub width: f64,
    /// Full plate thickness `h = 2e` (m).
    pub thickness: f64,
    pub nx: usize,
    pub ny: usize,
    pub accelerometer: Option<Accelerometer>,
    /// Point whose displacement ratio is reported (m).
    pub test_point: Point,
    pub clamped_side: ClampedSide,
}

impl GeometryConfig {
    pub fn half_thickness(&self) -> f64 {
        0.5 * self.thickness
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGeometry(msg));
        for (name, v) in [
            ("length", self.length),
            ("width", self.width),
            ("thickness", self.thickness),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.nx == 0 || self.ny == 0 {
            return bad(format!(
                "subdivisions must be positive, got nx={} ny={}",
                self.nx, self.ny
            ));
        }
        let [xt, yt] = self.test_point;
        if !(0.0..=self.length).contains(&xt) || !(0.0..=self.width).contains(&yt) {
            return bad(format!("test point ({xt}, {yt}) outside the plate"));
        }
        if let Some(acc) = &self.accelerometer {
            let [cx, cy] = acc.center;
            let r = acc.radius;
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("accelerometer radius must be positive, got {r}"));
            }
            if !(acc.mass.is_finite() && acc.mass >= 0.0) {
                return bad(format!(
                    "accelerometer mass must be nonnegative, got {}",
                    acc.mass
                ));
            }
            if cx - r < 0.0 || cx + r > self.length || cy - r < 0.0 || cy + r > self.width {
                return bad(format!(
                    "accelerometer disk at ({cx}, {cy}) with radius {r} leaves the plate"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Endpoints, always with `nodes[0] < nodes[1]`.
    pub nodes: [usize; 2],
    pub midpoint: Point,
    /// Unit normal used as the sign reference for the edge DOF. Outward on
    /// the boundary; on interior edges the tangent `nodes[0] -> nodes[1]`
    /// rotated clockwise.
    pub normal: Point,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// `triangle_edges[t][j]` is the edge opposite local vertex `j`.
    pub triangle_edges: Vec<[usize; 3]>,
    /// Sorted edge indices on the clamped part of the boundary.
    pub clamped_edges: Vec<usize>,
    /// Sorted indices of triangles under the accelerometer.
    pub accel_triangles: Vec<usize>,
    pub accel_area: f64,
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn centroid(a: Point, b: Point, c: Point) -> Point {
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

impl Mesh {
    /// Builds edge connectivity and validates a triangulation.
    ///
    /// `clamped` lists clamped edges as node pairs (any order).
    pub fn from_parts(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        clamped: &[[usize; 2]],
        mut accel_triangles: Vec<usize>,
    ) -> Result<Mesh> {
        let invalid = |msg: String| Err(Error::InvalidMesh(msg));
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&n| n >= nodes.len()) {
                return invalid(format!(
                    "triangle {t} references node {bad} of {}",
                    nodes.len()
                ));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return invalid(format!("triangle {t} has nonpositive signed area {area:e}"));
            }
        }

        let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut owners: Vec<Vec<usize>> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for j in 0..3 {
                let (a, b) = (tri[(j + 1) % 3], tri[(j + 2) % 3]);
                let key = [a.min(b), a.max(b)];
                let e = *lookup.entry(key).or_insert_with(|| {
                    let (pa, pb) = (nodes[key[0]], nodes[key[1]]);
                    let (tx, ty) = (pb[0] - pa[0], pb[1] - pa[1]);
                    let len = tx.hypot(ty);
                    edges.push(Edge {
                        nodes: key,
                        midpoint: [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])],
                        normal: [ty / len, -tx / len],
                        boundary: false,
                    });
                    owners.push(Vec::new());
                    edges.len() - 1
                });
                owners[e].push(t);
                local[j] = e;
            }
            triangle_edges.push(local);
        }
        for (e, own) in owners.iter().enumerate() {
            match own.len() {
                1 => {
                    let tri = triangles[own[0]];
                    let c = centroid(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
                    let edge = &mut edges[e];
                    edge.boundary = true;
                    let out = [edge.midpoint[0] - c[0], edge.midpoint[1] - c[1]];
                    if out[0] * edge.normal[0] + out[1] * edge.normal[1] < 0.0 {
                        edge.normal = [-edge.normal[0], -edge.normal[1]];
                    }
                }
                2 => {}
                n => return invalid(format!("edge {:?} shared by {n} triangles", edges[e].nodes)),
            }
        }

        let mut clamped_edges = Vec::with_capacity(clamped.len());
        for pair in clamped {
            let key = [pair[0].min(pair[1]), pair[0].max(pair[1])];
            match lookup.get(&key) {
                Some(&e) if edges[e].boundary => clamped_edges.push(e),
                Some(_) => return invalid(format!("clamped edge {key:?} is not on the boundary")),
                None => return invalid(format!("clamped edge {key:?} is not a mesh edge")),
            }
        }
        clamped_edges.sort_unstable();
        clamped_edges.dedup();

        accel_triangles.sort_unstable();
        accel_triangles.dedup();
        if let Some(&t) = accel_triangles.iter().find(|&&t| t >= triangles.len()) {
            return invalid(format!("accelerometer triangle {t} out of range"));
        }
        let accel_area = accel_triangles
            .iter()
            .map(|&t| {
                let tri = triangles[t];
                signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]])
            })
            .sum();

        Ok(Mesh {
            nodes,
            triangles,
            edges,
            triangle_edges,
            clamped_edges,
            accel_triangles,
            accel_area,
        })
    }

    pub fn triangle_vertices(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Nodes touched by clamped edges, sorted.
    pub fn clamped_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .clamped_edges
            .iter()
            .flat_map(|&e| self.edges[e].nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Triangles containing `p` (within a relative tolerance on barycentric
    /// coordinates), in ascending index order.
    pub fn locate(&self, p: Point) -> Vec<usize> {
        const TOL: f64 = 1e-12;
        (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangle_vertices(t);
                let area = signed_area(a, b, c);
                [
                    signed_area(p, b, c),
                    signed_area(a, p, c),
                    signed_area(a, b, p),
                ]
                .iter()
                .all(|&w| w / area >= -TOL)
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mesh> {
        Mesh::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# plateid triangular mesh\n");
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.16e} {:.16e}", p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "clamped_edges {}", self.clamped_edges.len());
        for &e in &self.clamped_edges {
            let [a, b] = self.edges[e].nodes;
            let _ = writeln!(s, "{a} {b}");
        }
        let _ = writeln!(s, "accel_triangles {}", self.accel_triangles.len());
        for &t in &self.accel_triangles {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .peekable();

        fn err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
            Err(Error::MeshParse {
                line,
                msg: msg.into(),
            })
        }
        fn fields<T: std::str::FromStr>(line: usize, text: &str, n: usize) -> Result<Vec<T>> {
            let parsed: Vec<T> = text
                .split_whitespace()
                .map(|tok| tok.parse::<T>())
                .collect::<std::result::Result<_, _>>()
                .or_else(|_| err(line, format!("cannot parse {text:?}")))?;
            if parsed.len() != n {
                return err(line, format!("expected {n} fields, found {}", parsed.len()));
            }
            Ok(parsed)
        }

        let mut nodes: Option<Vec<Point>> = None;
        let mut triangles: Option<Vec<[usize; 3]>> = None;
        let mut clamped: Vec<[usize; 2]> = Vec::new();
        let mut accel: Vec<usize> = Vec::new();
        let mut last_line = 0;

        while let Some((line, header)) = lines.next() {
            last_line = line;
            let mut parts = header.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let count: usize = match (parts.next().map(str::parse), parts.next()) {
                (Some(Ok(c)), None) => c,
                _ => {
                    return err(
                        line,
                        format!("expected `<section> <count>`, found {header:?}"),
                    )
                }
            };
            let mut records = Vec::with_capacity(count);
            for _ in 0..count {
                match lines.next() {
                    Some(rec) => records.push(rec),
                    None => {
                        return err(line, format!("section {name} ended before {count} records"))
                    }
                }
            }
            match name {
                "nodes" => {
                    let mut v = Vec::with_capacity(count);
                    for (l, r) in records {
                        let f: Vec<f64> = fields(l, r, 2)?;
                        if !f.iter().all(|x| x.is_finite()) {
                            return err(l, "non-finite coordinate");
                        }
                        v.push([f[0], f[1]]);
                    }
                    nodes = Some(v);
                }
                "triangles" => {
                    let n_nodes = match &nodes {
                        Some(n) => n.len(),
                        None => return err(line, "triangles section before nodes"),
                    };
                    let mut v = Vec::with_capacity(count);
                    for (l, r) in records {
                        let f: Vec<usize> = fields(l, r, 3)?;
                        if let Some(bad) = f.iter().find(|&&n| n >= n_nodes) {
                            return err(
                                l,
                                format!("node index {bad} out of range (have {n_nodes})"),
                            );
                        }
                        v.push([f[0], f[1], f[2]]);
                    }
                    triangles = Some(v);
                }
                "clamped_edges" => {
                    for (l, r) in records {
                        let f: Vec<usize> = fields(l, r, 2)?;
                        clamped.push([f[0], f[1]]);
                    }
                }
                "accel_triangles" => {
                    for (l, r) in records {
                        let f: Vec<usize> = fields(l, r, 1)?;
                        accel.push(f[0]);
                    }
                }
                other => return err(line, format!("unknown section {other:?}")),
            }
        }
        let nodes = nodes.map_or_else(|| err(last_line, "missing nodes section"), Ok)?;
        let triangles =
            triangles.map_or_else(|| err(last_line, "missing triangles section"), Ok)?;
        Mesh::from_parts(nodes, triangles, &clamped, accel)
    }
}

/// Structured diagonal-split triangulation of `[0, L] x [0, b]`.
pub fn generate_strip_mesh(cfg: &GeometryConfig) -> Result<Mesh> {
    cfg.validate()?;
    let (nx, ny) = (cfg.nx, cfg.ny);
    let (dx, dy) = (cfg.length / nx as f64, cfg.width / ny as f64);
    let id = |i: usize, j: usize| i * (ny + 1) + j;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            let x = if i == nx { cfg.length } else { i as f64 * dx };
            let y = if j == ny { cfg.width } else { j as f64 * dy };
            nodes.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let clamped: Vec<[usize; 2]> = match cfg.clamped_side {
        ClampedSide::Left => (0..ny).map(|j| [id(0, j), id(0, j + 1)]).collect(),
        ClampedSide::Right => (0..ny).map(|j| [id(nx, j), id(nx, j + 1)]).collect(),
        ClampedSide::Bottom => (0..nx).map(|i| [id(i, 0), id(i + 1, 0)]).collect(),
        ClampedSide::Top => (0..nx).map(|i| [id(i, ny), id(i + 1, ny)]).collect(),
    };

    let mut accel = Vec::new();
    if let Some(acc) = &cfg.accelerometer {
        for (t, tri) in triangles.iter().enumerate() {
            let c = centroid(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if (c[0] - acc.center[0]).hypot(c[1] - acc.center[1]) <= acc.radius {
                accel.push(t);
            }
        }
        if accel.is_empty() && acc.mass > 0.0 {
            return Err(Error::EmptyAccelerometer);
        }
    }
    Mesh::from_parts(nodes, triangles, &clamped, accel)
}
