//! Assembled forms and projections against closed-form integrals and
//! independent least-squares solves.

use faer::prelude::*;
use faer::Mat;
use prfem::analysis::potential_flow;
use prfem::assembly::{assemble_div, assemble_laplace, assemble_load, assemble_mean};
use prfem::mesh::{build_patches, generate_structured, perturb, Mesh, Point};
use prfem::projectors::patch_poly_project;
use prfem::quadrature::triangle_rule;
use prfem::spaces::{lagrange_space, DiscreteFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sparse polynomial `Σ c x^a y^b`.
#[derive(Clone, Debug)]
struct P(Vec<(f64, i32, i32)>);

impl P {
    fn eval(&self, x: Point) -> f64 {
        self.0.iter().map(|&(c, a, b)| c * x[0].powi(a) * x[1].powi(b)).sum()
    }
    fn dx(&self) -> P {
        P(self.0.iter().filter(|t| t.1 > 0).map(|&(c, a, b)| (c * a as f64, a - 1, b)).collect())
    }
    fn dy(&self) -> P {
        P(self.0.iter().filter(|t| t.2 > 0).map(|&(c, a, b)| (c * b as f64, a, b - 1)).collect())
    }
    fn mul(&self, o: &P) -> P {
        let mut t = Vec::new();
        for &(c, a, b) in &self.0 {
            for &(d, e, f) in &o.0 {
                t.push((c * d, a + e, b + f));
            }
        }
        P(t)
    }
    fn add(&self, o: &P) -> P {
        P(self.0.iter().chain(&o.0).copied().collect())
    }
    /// Exact integral over the unit square.
    fn integral(&self) -> f64 {
        self.0.iter().map(|&(c, a, b)| c / ((a + 1) as f64 * (b + 1) as f64)).sum()
    }
}

fn velocity(k: i32) -> [P; 2] {
    [
        P(vec![(1.0, k, 0), (-2.0, 1, k - 1), (0.5, 0, 1), (1.0, 0, 0)]),
        P(vec![(1.0, 0, k), (3.0, k - 1, 1), (-1.0, 1, 0)]),
    ]
}

fn other_velocity(k: i32) -> [P; 2] {
    [P(vec![(1.0, k - 1, 1), (-1.0, 0, 0)]), P(vec![(2.0, 1, k - 1), (1.0, 0, 1)])]
}

fn pressure(k: i32) -> P {
    P(vec![(1.0, 0, 0), (1.0, k - 1, 0), (-1.0, 0, k - 1), (0.5, 1, 0)])
}

fn meshes() -> Vec<Mesh> {
    let m = generate_structured(3).unwrap();
    vec![perturb(&m, 0.2, 11).unwrap(), m]
}

fn vector_coeffs(mesh: &Mesh, space: &prfem::spaces::FeSpace, v: &[P; 2]) -> Vec<f64> {
    DiscreteFunction::interpolate_vector(mesh, space, |x| [v[0].eval(x), v[1].eval(x)]).coeffs
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn divergence_form_matches_closed_form() {
    for mesh in meshes() {
        for k in 2..=4 {
            let vel = lagrange_space(&mesh, k as usize, true).unwrap();
            let pres = lagrange_space(&mesh, k as usize - 1, true).unwrap();
            let v = velocity(k);
            let q = pressure(k);
            let uc = vector_coeffs(&mesh, &vel, &v);
            let qc = DiscreteFunction::interpolate_scalar(&mesh, &pres, |x| q.eval(x)).coeffs;
            let b = assemble_div(&mesh, &vel, &pres).unwrap();
            let got: f64 = b.matvec(&uc).iter().zip(&qc).map(|(a, b)| a * b).sum();
            let want = q.mul(&v[0].dx().add(&v[1].dy())).integral();
            assert!(rel(got, want) < 1e-12, "k={k}: {got} vs {want}");
        }
    }
}

#[test]
fn laplace_form_matches_closed_form() {
    for mesh in meshes() {
        for k in 2..=4 {
            let vel = lagrange_space(&mesh, k as usize, true).unwrap();
            let (v, w) = (velocity(k), other_velocity(k));
            let (vc, wc) = (vector_coeffs(&mesh, &vel, &v), vector_coeffs(&mesh, &vel, &w));
            let a = assemble_laplace(&mesh, &vel, 0.37).unwrap();
            let got: f64 = a.matvec(&wc).iter().zip(&vc).map(|(x, y)| x * y).sum();
            let mut want = 0.0;
            for c in 0..2 {
                want += v[c].dx().mul(&w[c].dx()).integral() + v[c].dy().mul(&w[c].dy()).integral();
            }
            assert!(rel(got, 0.37 * want) < 1e-12, "k={k}: {got} vs {}", 0.37 * want);
        }
    }
}

#[test]
fn load_and_mean_match_closed_form() {
    let f = [P(vec![(1.0, 1, 1), (2.0, 0, 0)]), P(vec![(1.0, 0, 0), (-1.0, 2, 0)])];
    for mesh in meshes() {
        for k in 2..=4 {
            let vel = lagrange_space(&mesh, k as usize, true).unwrap();
            let v = velocity(k);
            let vc = vector_coeffs(&mesh, &vel, &v);
            let ff = f.clone();
            let load = assemble_load(&mesh, &vel, &move |x: Point| [ff[0].eval(x), ff[1].eval(x)], k as usize + 2).unwrap();
            let got: f64 = load.iter().zip(&vc).map(|(a, b)| a * b).sum();
            let want = f[0].mul(&v[0]).integral() + f[1].mul(&v[1]).integral();
            assert!(rel(got, want) < 1e-12, "load k={k}: {got} vs {want}");

            let pres = lagrange_space(&mesh, k as usize - 1, true).unwrap();
            let q = pressure(k);
            let qc = DiscreteFunction::interpolate_scalar(&mesh, &pres, |x| q.eval(x)).coeffs;
            let mean: f64 = assemble_mean(&mesh, &pres).unwrap().iter().zip(&qc).map(|(a, b)| a * b).sum();
            assert!(rel(mean, q.integral()) < 1e-12);
        }
    }
}

/// Weighted least squares on an independent rule gives the `L²(ω_V)` projection.
#[test]
fn patch_projection_matches_least_squares() {
    let mesh = perturb(&generate_structured(4).unwrap(), 0.2, 3).unwrap();
    let patches = build_patches(&mesh);
    let g = |x: Point| [(x[0] * 3.0).sin() + x[1] * x[1] * x[0], (x[0] - x[1]).exp()];
    for m in 0..=3usize {
        for patch in patches.iter().step_by(5) {
            let proj = patch_poly_project(&mesh, patch, |_, x| g(x), m, 2 * m + 14).unwrap();

            let qr = triangle_rule(2 * m + 16).unwrap();
            let exps: Vec<(i32, i32)> = (0..=m as i32).flat_map(|d| (0..=d).map(move |b| (d - b, b))).collect();
            let rows = patch.cells.len() * qr.points.len();
            let mut a = Mat::<f64>::zeros(rows, exps.len());
            let mut rhs = Mat::<f64>::zeros(rows, 2);
            let mut r = 0;
            for &c in &patch.cells {
                let geo = mesh.geometry(c);
                for (p, w) in qr.points.iter().zip(&qr.weights) {
                    let x = geo.map(*p);
                    let s = (w * geo.det).sqrt();
                    for (j, &(ea, eb)) in exps.iter().enumerate() {
                        a[(r, j)] = s * x[0].powi(ea) * x[1].powi(eb);
                    }
                    let gv = g(x);
                    rhs[(r, 0)] = s * gv[0];
                    rhs[(r, 1)] = s * gv[1];
                    r += 1;
                }
            }
            let coef = a.qr().solve_lstsq(&rhs);
            for &c in &patch.cells {
                let x = mesh.geometry(c).map([1.0 / 3.0, 1.0 / 3.0]);
                let got = proj.eval(x);
                for comp in 0..2 {
                    let want: f64 = exps
                        .iter()
                        .enumerate()
                        .map(|(j, &(ea, eb))| coef[(j, comp)] * x[0].powi(ea) * x[1].powi(eb))
                        .sum();
                    assert!((got[comp] - want).abs() < 1e-10, "m={m} vertex {}: {} vs {want}", patch.vertex, got[comp]);
                }
            }
        }
    }
}

/// Euler balance of the potential flow with derivatives taken by central differences.
#[test]
fn potential_flow_balance_by_differences() {
    let ex = potential_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    for _ in 0..50 {
        let x = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let u = (ex.u)(x);
        let d = |i: usize| {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            let (ua, ub) = ((ex.u)(a), (ex.u)(b));
            let dp = ((ex.p)(a) - (ex.p)(b)) / (2.0 * h);
            ([(ua[0] - ub[0]) / (2.0 * h), (ua[1] - ub[1]) / (2.0 * h)], dp)
        };
        let ((ux, px), (uy, py)) = (d(0), d(1));
        for c in 0..2 {
            let conv = u[0] * ux[c] + u[1] * uy[c];
            let gp = if c == 0 { px } else { py };
            let scale = 1.0 + gp.abs();
            assert!((conv + gp).abs() / scale < 1e-8, "{x:?}: {conv} + {gp}");
        }
    }
}
