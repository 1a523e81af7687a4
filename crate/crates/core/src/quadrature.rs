//! Gauss rules on the unit interval and collapsed (Duffy) tensor rules on the
//! reference triangle `(0,0), (1,0), (0,1)`.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    /// Reference coordinates `(x, y)`; for edge rules `y` is zero and `x` is the parameter.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Barycentric coordinates `(1 - x - y, x, y)` of each point.
    pub fn barycentric(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [1.0 - p[0] - p[1], p[0], p[1]]).collect()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

/// `n`-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss rule on `[0, 1]`, exact for polynomials up to `degree`.
pub fn edge_rule(degree: usize) -> QuadRule {
    let n = degree / 2 + 1;
    let (x, w) = gauss_legendre(n);
    QuadRule {
        points: x.iter().map(|&t| [0.5 * (t + 1.0), 0.0]).collect(),
        weights: w.iter().map(|&w| 0.5 * w).collect(),
        degree,
    }
}

/// Collapsed Gauss rule on the reference triangle, exact up to `degree`.
///
/// Uses `x = u`, `y = v (1 - u)` with Jacobian `1 - u`, so the `u`-direction
/// integrand carries one extra power.
pub fn triangle_rule(degree: usize) -> Result<QuadRule> {
    if degree > MAX_DEGREE {
        return Err(Error::OrderOutOfRange {
            what: "quadrature degree",
            order: degree,
            min: 0,
            max: MAX_DEGREE,
        });
    }
    let nu = (degree + 2).div_ceil(2);
    let nv = (degree + 1).div_ceil(2);
    let (xu, wu) = gauss_legendre(nu);
    let (xv, wv) = gauss_legendre(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (a, &su) in xu.iter().enumerate() {
        let u = 0.5 * (su + 1.0);
        for (b, &sv) in xv.iter().enumerate() {
            let v = 0.5 * (sv + 1.0);
            points.push([u, v * (1.0 - u)]);
            weights.push(0.25 * wu[a] * wv[b] * (1.0 - u));
        }
    }
    Ok(QuadRule {
        points,
        weights,
        degree,
    })
}
