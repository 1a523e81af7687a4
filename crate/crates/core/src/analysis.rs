//! Benchmark solutions, error norms and convergence rates.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::triangle_rule;
use crate::spaces::{DiscreteFunction, FeSpace, Quantity};

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
/// Row `c` holds `∇u_c`.
pub type TensorField = Arc<dyn Fn(Point) -> [[f64; 2]; 2] + Send + Sync>;

/// An exact solution of the Stokes or Navier–Stokes equations on the unit square.
#[derive(Clone)]
pub struct ExactSolution {
    pub name: String,
    pub nu_default: f64,
    pub u: VectorField,
    pub grad_u: TensorField,
    pub laplace_u: VectorField,
    pub p: ScalarField,
    pub grad_p: VectorField,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactSolution")
            .field("name", &self.name)
            .field("nu_default", &self.nu_default)
            .finish_non_exhaustive()
    }
}

impl ExactSolution {
    /// `f = -ν Δu + ∇p`.
    pub fn stokes_forcing(&self, nu: f64) -> VectorField {
        let (lap, gp) = (self.laplace_u.clone(), self.grad_p.clone());
        Arc::new(move |x| {
            let (l, g) = (lap(x), gp(x));
            [-nu * l[0] + g[0], -nu * l[1] + g[1]]
        })
    }

    /// `f = -ν Δu + (u·∇)u + ∇p`.
    pub fn navier_stokes_forcing(&self, nu: f64) -> VectorField {
        let s = self.stokes_forcing(nu);
        let (u, gu) = (self.u.clone(), self.grad_u.clone());
        Arc::new(move |x| {
            let (f, v, g) = (s(x), u(x), gu(x));
            [
                f[0] + v[0] * g[0][0] + v[1] * g[0][1],
                f[1] + v[0] * g[1][0] + v[1] * g[1][1],
            ]
        })
    }

    /// Viscous and pressure parts of the Stokes forcing, `f = ν f_visc + f_grad`.
    pub fn stokes_forcing_parts(&self) -> (VectorField, VectorField) {
        let lap = self.laplace_u.clone();
        (Arc::new(move |x| {
            let l = lap(x);
            [-l[0], -l[1]]
        }), self.grad_p.clone())
    }
}

/// Scalar potential `ψ` with its gradient, for gradient-forcing tests.
#[derive(Clone)]
pub struct Potential {
    pub psi: ScalarField,
    pub grad: VectorField,
    pub mean: f64,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential").field("mean", &self.mean).finish_non_exhaustive()
    }
}

/// `ψ = x⁷ + y⁷`.
pub fn septic_potential() -> Potential {
    Potential {
        psi: Arc::new(|x| x[0].powi(7) + x[1].powi(7)),
        grad: Arc::new(|x| [7.0 * x[0].powi(6), 7.0 * x[1].powi(6)]),
        mean: 0.25,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Example1,
    PotentialFlow,
    GradientForcing,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "example1_2d" | "example1" => Ok(Preset::Example1),
            "potential_flow" => Ok(Preset::PotentialFlow),
            "gradient_forcing" => Ok(Preset::GradientForcing),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

pub fn preset(name: &str) -> Result<ExactSolution> {
    Ok(match name.parse::<Preset>()? {
        Preset::Example1 => example1_2d(),
        Preset::PotentialFlow => potential_flow(),
        Preset::GradientForcing => gradient_forcing(&septic_potential()),
    })
}

// a(t) = t²(t-1)² and its derivatives
fn a0(t: f64) -> f64 {
    t * t * (t - 1.0) * (t - 1.0)
}
fn a1(t: f64) -> f64 {
    2.0 * t * (t - 1.0) * (2.0 * t - 1.0)
}
fn a2(t: f64) -> f64 {
    2.0 * (6.0 * t * t - 6.0 * t + 1.0)
}
fn a3(t: f64) -> f64 {
    24.0 * t - 12.0
}

/// `u = curl ζ` with `ζ = x²(x-1)²y²(y-1)²`, `p = x⁷ + y⁷ - 1/4`, `ν = 10⁻³`.
pub fn example1_2d() -> ExactSolution {
    ExactSolution {
        name: "example1_2d".into(),
        nu_default: 1e-3,
        u: Arc::new(|x| [a0(x[0]) * a1(x[1]), -a1(x[0]) * a0(x[1])]),
        grad_u: Arc::new(|x| {
            [
                [a1(x[0]) * a1(x[1]), a0(x[0]) * a2(x[1])],
                [-a2(x[0]) * a0(x[1]), -a1(x[0]) * a1(x[1])],
            ]
        }),
        laplace_u: Arc::new(|x| {
            [
                a2(x[0]) * a1(x[1]) + a0(x[0]) * a3(x[1]),
                -(a3(x[0]) * a0(x[1]) + a1(x[0]) * a2(x[1])),
            ]
        }),
        p: Arc::new(|x| x[0].powi(7) + x[1].powi(7) - 0.25),
        grad_p: Arc::new(|x| [7.0 * x[0].powi(6), 7.0 * x[1].powi(6)]),
    }
}

/// `u = ∇χ`, `χ = x⁵ - 10x³y² + 5xy⁴`, `p = 664/63 - 25/2 (x² + y²)⁴`, `ν = 0.1`.
/// Solves the Navier–Stokes equations with zero forcing.
pub fn potential_flow() -> ExactSolution {
    ExactSolution {
        name: "potential_flow".into(),
        nu_default: 0.1,
        u: Arc::new(|x| {
            let (a, b) = (x[0], x[1]);
            [
                5.0 * a.powi(4) - 30.0 * a * a * b * b + 5.0 * b.powi(4),
                -20.0 * a.powi(3) * b + 20.0 * a * b.powi(3),
            ]
        }),
        grad_u: Arc::new(|x| {
            let (a, b) = (x[0], x[1]);
            let d = 20.0 * a.powi(3) - 60.0 * a * b * b;
            let o = -60.0 * a * a * b + 20.0 * b.powi(3);
            [[d, o], [o, -d]]
        }),
        laplace_u: Arc::new(|_| [0.0, 0.0]),
        p: Arc::new(|x| 664.0 / 63.0 - 12.5 * (x[0] * x[0] + x[1] * x[1]).powi(4)),
        grad_p: Arc::new(|x| {
            let r = (x[0] * x[0] + x[1] * x[1]).powi(3);
            [-100.0 * r * x[0], -100.0 * r * x[1]]
        }),
    }
}

/// Zero velocity with pressure `ψ - mean(ψ)`, i.e. `f = ∇ψ`.
pub fn gradient_forcing(psi: &Potential) -> ExactSolution {
    let (p, g, mean) = (psi.psi.clone(), psi.grad.clone(), psi.mean);
    ExactSolution {
        name: "gradient_forcing".into(),
        nu_default: 1e-3,
        u: Arc::new(|_| [0.0, 0.0]),
        grad_u: Arc::new(|_| [[0.0; 2]; 2]),
        laplace_u: Arc::new(|_| [0.0, 0.0]),
        p: Arc::new(move |x| p(x) - mean),
        grad_p: g,
    }
}

/// Largest deviations found by [`check_consistency`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub grad_u: f64,
    pub laplace_u: f64,
    pub grad_p: f64,
    pub divergence: f64,
    pub passed: bool,
}

/// Cross-checks the hand-derived fields with central differences (step
/// `1e-5`, relative agreement `1e-6`) and `div u = 0` at random points.
pub fn check_consistency(ex: &ExactSolution, samples: usize, seed: u64) -> ConsistencyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hstep = 1e-5;
    let rel = |a: f64, b: f64, s: f64| (a - b).abs() / s.max(1.0);
    let (mut eg, mut el, mut ep, mut ed) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let x = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let shift = |d: usize, s: f64| {
            let mut y = x;
            y[d] += s;
            y
        };
        let g = (ex.grad_u)(x);
        let scale_g = g.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for d in 0..2 {
            let (up, um) = ((ex.u)(shift(d, hstep)), (ex.u)(shift(d, -hstep)));
            for c in 0..2 {
                eg = eg.max(rel((up[c] - um[c]) / (2.0 * hstep), g[c][d], scale_g));
            }
            let (pp, pm) = ((ex.p)(shift(d, hstep)), (ex.p)(shift(d, -hstep)));
            let gp = (ex.grad_p)(x);
            ep = ep.max(rel((pp - pm) / (2.0 * hstep), gp[d], gp[0].abs().max(gp[1].abs())));
        }
        let lap = (ex.laplace_u)(x);
        let mut fd = [0.0; 2];
        for d in 0..2 {
            let (gp, gm) = ((ex.grad_u)(shift(d, hstep)), (ex.grad_u)(shift(d, -hstep)));
            for c in 0..2 {
                fd[c] += (gp[c][d] - gm[c][d]) / (2.0 * hstep);
            }
        }
        let scale_l = lap[0].abs().max(lap[1].abs());
        el = el.max(rel(fd[0], lap[0], scale_l)).max(rel(fd[1], lap[1], scale_l));
        ed = ed.max((g[0][0] + g[1][1]).abs());
    }
    ConsistencyReport {
        grad_u: eg,
        laplace_u: el,
        grad_p: ep,
        divergence: ed,
        passed: eg <= 1e-6 && el <= 1e-6 && ep <= 1e-6 && ed <= 1e-12,
    }
}

/// Default quadrature degree for errors against analytic data.
pub fn error_degree(k: usize) -> usize {
    (2 * k + 10).min(crate::quadrature::MAX_DEGREE)
}

fn integrate_cells(mesh: &Mesh, degree: usize, f: impl Fn(usize, &[Point], &[Point]) -> Vec<f64> + Sync) -> Result<f64> {
    let qr = triangle_rule(degree)?;
    let s: f64 = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let geo = mesh.geometry(c);
            let x: Vec<Point> = qr.points.iter().map(|p| geo.map(*p)).collect();
            let v = f(c, &qr.points, &x);
            v.iter().zip(&qr.weights).map(|(a, w)| a * w * geo.det).sum::<f64>()
        })
        .sum();
    Ok(s)
}

/// `‖∇(u - u_h)‖_{L²}`.
pub fn error_h1(mesh: &Mesh, vel: &FeSpace, uh: &[f64], ex: &ExactSolution, degree: usize) -> Result<f64> {
    let f = DiscreteFunction::new(mesh, vel, 2, uh.to_vec())?;
    let s = integrate_cells(mesh, degree, |c, pr, x| {
        let g = f.evaluate(c, pr, Quantity::Gradient);
        x.iter()
            .zip(&g)
            .map(|(x, gh)| {
                let e = (ex.grad_u)(*x);
                (e[0][0] - gh[0]).powi(2) + (e[0][1] - gh[1]).powi(2) + (e[1][0] - gh[2]).powi(2) + (e[1][1] - gh[3]).powi(2)
            })
            .collect()
    })?;
    Ok(s.max(0.0).sqrt())
}

/// `‖u - u_h‖_{L²}`.
pub fn error_l2(mesh: &Mesh, vel: &FeSpace, uh: &[f64], ex: &ExactSolution, degree: usize) -> Result<f64> {
    let f = DiscreteFunction::new(mesh, vel, 2, uh.to_vec())?;
    let s = integrate_cells(mesh, degree, |c, pr, x| {
        let v = f.evaluate(c, pr, Quantity::Value);
        x.iter()
            .zip(&v)
            .map(|(x, vh)| {
                let e = (ex.u)(*x);
                (e[0] - vh[0]).powi(2) + (e[1] - vh[1]).powi(2)
            })
            .collect()
    })?;
    Ok(s.max(0.0).sqrt())
}

/// `‖p - p_h‖_{L²}` (both have zero mean).
pub fn error_l2_pressure(mesh: &Mesh, pres: &FeSpace, ph: &[f64], ex: &ExactSolution, degree: usize) -> Result<f64> {
    let f = DiscreteFunction::new(mesh, pres, 1, ph.to_vec())?;
    let s = integrate_cells(mesh, degree, |c, pr, x| {
        let v = f.evaluate(c, pr, Quantity::Value);
        x.iter().zip(&v).map(|(x, vh)| ((ex.p)(*x) - vh[0]).powi(2)).collect()
    })?;
    Ok(s.max(0.0).sqrt())
}

/// `‖∇u_h‖_{L²}`.
pub fn h1_seminorm(mesh: &Mesh, vel: &FeSpace, uh: &[f64]) -> Result<f64> {
    let f = DiscreteFunction::new(mesh, vel, 2, uh.to_vec())?;
    let deg = 2 * vel.degree();
    let s = integrate_cells(mesh, deg, |c, pr, _| {
        f.evaluate(c, pr, Quantity::Gradient).iter().map(|g| g.iter().map(|v| v * v).sum()).collect()
    })?;
    Ok(s.max(0.0).sqrt())
}

/// `‖g‖_{L²}` of an analytic vector field.
pub fn l2_norm(mesh: &Mesh, g: &(dyn Fn(Point) -> [f64; 2] + Sync), degree: usize) -> Result<f64> {
    let s = integrate_cells(mesh, degree, |_, _, x| {
        x.iter()
            .map(|x| {
                let v = g(*x);
                v[0] * v[0] + v[1] * v[1]
            })
            .collect()
    })?;
    Ok(s.max(0.0).sqrt())
}

/// Convergence rates `log(e_{i-1}/e_i) / log(h_{i-1}/h_i)`; `None` where an
/// error is not positive.
pub fn eoc(pairs: &[(f64, f64)]) -> Vec<Option<f64>> {
    pairs
        .windows(2)
        .map(|w| {
            let ((h0, e0), (h1, e1)) = (w[0], w[1]);
            if e0 > 0.0 && e1 > 0.0 && h0 > 0.0 && h1 > 0.0 && h0 != h1 {
                Some((e0 / e1).ln() / (h0 / h1).ln())
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_structured;
    use crate::spaces::lagrange_space;

    #[test]
    fn presets_are_consistent() {
        for name in ["example1_2d", "potential_flow", "gradient_forcing"] {
            let ex = preset(name).unwrap();
            let r = check_consistency(&ex, 50, 3);
            assert!(r.passed, "{name}: {r:?}");
        }
        assert!(matches!(preset("cavity"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn example1_vanishes_on_boundary() {
        let ex = example1_2d();
        for i in 0..10 {
            let t = i as f64 / 9.0;
            for x in [[t, 0.0], [t, 1.0], [0.0, t], [1.0, t]] {
                let u = (ex.u)(x);
                assert!(u[0].abs() < 1e-15 && u[1].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn potential_flow_balance() {
        let ex = potential_flow();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = ex.navier_stokes_forcing(0.1);
        for _ in 0..50 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let v = f(x);
            assert!(v[0].abs() < 1e-8 && v[1].abs() < 1e-8);
            // χ harmonic: the divergence of u = ∇χ vanishes
            let g = (ex.grad_u)(x);
            assert!((g[0][0] + g[1][1]).abs() < 1e-10);
        }
    }

    #[test]
    fn interpolation_errors() {
        let ex = example1_2d();
        let mut last = f64::INFINITY;
        for n in [4, 8] {
            let m = generate_structured(n).unwrap();
            let v = lagrange_space(&m, 2, true).unwrap();
            let u = DiscreteFunction::interpolate_vector(&m, &v, |x| (ex.u)(x));
            let e = error_h1(&m, &v, &u.coeffs, &ex, 14).unwrap();
            assert!(e > 0.0 && e < last);
            if last.is_finite() {
                let r = (last / e).log2();
                assert!((r - 2.0).abs() < 0.3, "{r}");
            }
            last = e;
        }
        // polynomial fields in the space are reproduced
        let m = generate_structured(3).unwrap();
        let v = lagrange_space(&m, 4, true).unwrap();
        let p = potential_flow();
        let u = DiscreteFunction::interpolate_vector(&m, &v, |x| (p.u)(x));
        assert!(error_h1(&m, &v, &u.coeffs, &p, 18).unwrap() < 1e-11);
        assert!(error_l2(&m, &v, &u.coeffs, &p, 18).unwrap() < 1e-11);
    }

    #[test]
    fn rates() {
        let r = eoc(&[(1.0, 1.0), (0.5, 0.25), (0.25, 0.25 / 8.0), (0.125, 0.25 / 8.0), (0.0625, 0.0)]);
        assert!((r[0].unwrap() - 2.0).abs() < 1e-14);
        assert!((r[1].unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(r[2].unwrap(), 0.0);
        assert_eq!(r[3], None);
    }
}
