//! Morley's quadratic nonconforming plate triangle.
//!
//! Six degrees of freedom per element: the values at the three vertices and
//! the normal derivatives at the three edge midpoints. Local edge `j` is the
//! edge opposite vertex `j`. Basis function `i < 3` is one at vertex `i`;
//! basis function `3 + j` has unit derivative along the normal of edge `j`.
//! Shape functions are built by inverting the DOF functionals applied to the
//! monomials `1, s, t, s^2, st, t^2` in centred, scaled coordinates.

use nalgebra::{Matrix6, SymmetricEigen};

use crate::error::{Error, Result};
use crate::material::Modulus;
use crate::mesh::{signed_area, Point};

/// Symmetric 6-point rule exact for polynomials of degree 4
/// (barycentric `(a, a, 1 - 2a)` orbits, weights sum to one).
const QUAD_ORBITS: [(f64, f64); 2] = [
    (0.445_948_490_915_964_9, 0.223_381_589_678_011_47),
    (0.091_576_213_509_770_74, 0.109_951_743_655_321_87),
];

pub fn quadrature_points(v: &[Point; 3]) -> [(Point, f64); 6] {
    let mut out = [([0.0; 2], 0.0); 6];
    let mut k = 0;
    for &(a, w) in &QUAD_ORBITS {
        let b = 1.0 - 2.0 * a;
        for bary in [[b, a, a], [a, b, a], [a, a, b]] {
            let x = bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0];
            let y = bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1];
            out[k] = ([x, y], w);
            k += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MorleyElement {
    vertices: [Point; 3],
    center: Point,
    scale: f64,
    area: f64,
    /// `coeffs[(m, i)]`: coefficient of monomial `m` in basis function `i`.
    coeffs: Matrix6<f64>,
}

/// Local 6x6 element matrices.
#[derive(Debug, Clone)]
pub struct ElementMatrices {
    /// `int h_i h_j`
    pub mass: Matrix6<f64>,
    /// `int grad h_i . grad h_j`
    pub gradient: Matrix6<f64>,
    /// `int V^a(h_i, h_j)`, indexed by [`Modulus`].
    pub stiffness: [Matrix6<f64>; 6],
}

impl MorleyElement {
    /// `normals[j]` is the reference unit normal of the edge opposite vertex `j`.
    pub fn new(vertices: [Point; 3], normals: [Point; 3]) -> Result<Self> {
        let area = signed_area(vertices[0], vertices[1], vertices[2]);
        let diam2 = (0..3)
            .map(|j| {
                let (a, b) = (vertices[(j + 1) % 3], vertices[(j + 2) % 3]);
                (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)
            })
            .fold(0.0, f64::max);
        if !(area.abs() > 1e-12 * diam2) || !area.is_finite() {
            return Err(Error::DegenerateTriangle { area });
        }
        let center = [
            (vertices[0][0] + vertices[1][0] + vertices[2][0]) / 3.0,
            (vertices[0][1] + vertices[1][1] + vertices[2][1]) / 3.0,
        ];
        let scale = diam2.sqrt();
        let mut el = MorleyElement {
            vertices,
            center,
            scale,
            area: area.abs(),
            coeffs: Matrix6::zeros(),
        };

        let mut dofs = Matrix6::zeros();
        for i in 0..3 {
            let mono = el.monomials(vertices[i]);
            for m in 0..6 {
                dofs[(i, m)] = mono[m];
            }
        }
        for j in 0..3 {
            let (a, b) = (vertices[(j + 1) % 3], vertices[(j + 2) % 3]);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let grads = el.monomial_gradients(mid);
            for m in 0..6 {
                dofs[(3 + j, m)] = normals[j][0] * grads[m][0] + normals[j][1] * grads[m][1];
            }
        }
        el.coeffs = dofs
            .try_inverse()
            .ok_or(Error::DegenerateTriangle { area })?;
        Ok(el)
    }

    /// Element with outward edge normals.
    pub fn with_outward_normals(vertices: [Point; 3]) -> Result<Self> {
        let orient = signed_area(vertices[0], vertices[1], vertices[2]).signum();
        let mut normals = [[0.0; 2]; 3];
        for (j, n) in normals.iter_mut().enumerate() {
            let (a, b) = (vertices[(j + 1) % 3], vertices[(j + 2) % 3]);
            let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
            let len = tx.hypot(ty);
            *n = [orient * ty / len, -orient * tx / len];
        }
        Self::new(vertices, normals)
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn vertices(&self) -> &[Point; 3] {
        &self.vertices
    }

    fn local(&self, p: Point) -> (f64, f64) {
        (
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
        )
    }

    fn monomials(&self, p: Point) -> [f64; 6] {
        let (s, t) = self.local(p);
        [1.0, s, t, s * s, s * t, t * t]
    }

    /// Physical-coordinate gradients of the monomials.
    fn monomial_gradients(&self, p: Point) -> [[f64; 2]; 6] {
        let (s, t) = self.local(p);
        let k = 1.0 / self.scale;
        [
            [0.0, 0.0],
            [k, 0.0],
            [0.0, k],
            [2.0 * s * k, 0.0],
            [t * k, s * k],
            [0.0, 2.0 * t * k],
        ]
    }

    pub fn values(&self, p: Point) -> [f64; 6] {
        let mono = self.monomials(p);
        std::array::from_fn(|i| (0..6).map(|m| self.coeffs[(m, i)] * mono[m]).sum())
    }

    pub fn gradients(&self, p: Point) -> [[f64; 2]; 6] {
        let g = self.monomial_gradients(p);
        std::array::from_fn(|i| {
            let mut out = [0.0; 2];
            for m in 0..6 {
                out[0] += self.coeffs[(m, i)] * g[m][0];
                out[1] += self.coeffs[(m, i)] * g[m][1];
            }
            out
        })
    }

    /// Constant second derivatives `(h_xx, h_yy, h_xy)` of every basis function.
    pub fn curvatures(&self) -> [[f64; 3]; 6] {
        let k = 1.0 / (self.scale * self.scale);
        std::array::from_fn(|i| {
            [
                2.0 * self.coeffs[(3, i)] * k,
                2.0 * self.coeffs[(5, i)] * k,
                self.coeffs[(4, i)] * k,
            ]
        })
    }

    pub fn matrices(&self) -> ElementMatrices {
        let mut mass = Matrix6::zeros();
        let mut gradient = Matrix6::zeros();
        for (p, w) in quadrature_points(&self.vertices) {
            let w = w * self.area;
            let h = self.values(p);
            let g = self.gradients(p);
            for i in 0..6 {
                for j in 0..6 {
                    mass[(i, j)] += w * h[i] * h[j];
                    gradient[(i, j)] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        let curv = self.curvatures();
        let stiffness =
            Modulus::ALL.map(|m| Matrix6::from_fn(|i, j| self.area * m.form(curv[i], curv[j])));
        // exact symmetry regardless of quadrature rounding
        let sym = |a: Matrix6<f64>| (a + a.transpose()) * 0.5;
        ElementMatrices {
            mass: sym(mass),
            gradient: sym(gradient),
            stiffness,
        }
    }
}

/// Numerical rank of a symmetric matrix from its spectrum.
pub fn numerical_rank(a: &Matrix6<f64>, rel_tol: f64) -> usize {
    let eig = SymmetricEigen::new(*a);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    eig.eigenvalues
        .iter()
        .filter(|v| v.abs() > rel_tol * max)
        .count()
}
