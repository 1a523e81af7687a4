//! Randomized invariant suite for the discrete spaces, projectors, patch
//! problems and the global reconstruction.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_div, assemble_mass};
use crate::element::MixedElement;
use crate::error::Result;
use crate::mesh::{build_patches, generate_structured, perturb, Mesh, VertexPatch};
use crate::projectors::{bubble_project, koszul_decomposition_check, oswald, oswald_tilde};
use crate::quadrature::{triangle_rule, MAX_DEGREE};
use crate::reconstruction::{assemble_patch_system, build_reconstruction, patch_rhs, solve_patch, ReconstructionMap};
use crate::report::Check;
use crate::solver::StokesDiscretization;
use crate::spaces::{lagrange_space, rt_space, DiscreteFunction, FeSpace, Quantity, MAX_RT_ORDER};

pub const VERIFY_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub n: usize,
    pub elements: Vec<MixedElement>,
    pub samples: usize,
    pub seed: u64,
    /// Relative vertex perturbation of the structured mesh.
    pub perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            n: 8,
            elements: vec![
                MixedElement::TaylorHood(2),
                MixedElement::TaylorHood(3),
                MixedElement::TaylorHood(4),
                MixedElement::Mini(1),
            ],
            samples: 20,
            seed: 2024,
            perturbation: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        crate::report::all_passed(&self.checks)
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Runs every invariant; the mesh is the structured `n × n` mesh with
/// randomly displaced interior vertices.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let start = Instant::now();
    let mesh = perturb(&generate_structured(opts.n)?, opts.perturbation, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = vec![quadrature_exactness()?, rt_normal_continuity(&mesh, &mut rng)?];
    checks.extend(bubble_and_oswald(&mesh, &mut rng)?);
    for k in 2..=4 {
        let r = koszul_decomposition_check(k)?;
        checks.push(Check::flag(
            format!("Koszul split k={k}: {} = {} + {}, rank {}", r.dim_full, r.dim_gradients, r.dim_koszul, r.rank),
            r.passed,
            "dimensions add up, full rank",
        ));
    }
    for &e in &opts.elements {
        let vel = e.velocity_space(&mesh)?;
        let map = build_reconstruction(&mesh, &vel, e)?;
        if !e.is_mini() {
            checks.extend(local_properties(&mesh, e, &vel, &mut rng)?);
        }
        checks.extend(global_properties(&mesh, e, &vel, &map, opts.samples, &mut rng)?);
    }
    checks.push(zero_inputs(&mesh)?);
    Ok(VerifyReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Monomials `x^a y^b` against `a! b! / (a + b + 2)!` for every rule.
pub fn quadrature_exactness() -> Result<Check> {
    let mut worst = 0.0f64;
    for deg in 0..=MAX_DEGREE {
        let qr = triangle_rule(deg)?;
        for a in 0..=deg {
            for b in 0..=deg - a {
                let exact = exact_monomial_integral(a, b);
                let got = qr.integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32));
                worst = worst.max((got - exact).abs() / exact);
            }
        }
    }
    Ok(Check::at_most(format!("quadrature exactness, degrees 0..={MAX_DEGREE}"), worst, 1e-13))
}

fn exact_monomial_integral(a: usize, b: usize) -> f64 {
    // a! b! / (a+b+2)! as a product of ratios to avoid overflow
    let mut v = 1.0 / ((a + b + 2) as f64 * (a + b + 1) as f64);
    for i in 1..=b {
        v *= i as f64 / (a + i) as f64;
    }
    v
}

fn rt_normal_continuity(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Result<Check> {
    let mut worst = 0.0f64;
    for r in 0..=MAX_RT_ORDER {
        let s = rt_space(mesh, r, &[])?;
        let f = DiscreteFunction::new(mesh, &s, 2, random(rng, s.n_dofs()))?;
        for e in 0..mesh.n_edges() {
            let (c0, Some(c1)) = mesh.edge_cells(e) else { continue };
            let [a, b] = mesh.edges()[e];
            let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
            let n = [pb[1] - pa[1], pa[0] - pb[0]];
            let pts: Vec<_> = [0.1, 0.3, 0.5, 0.7, 0.9]
                .iter()
                .map(|t| [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])])
                .collect();
            let (g0, g1) = (mesh.geometry(c0), mesh.geometry(c1));
            let v0 = f.evaluate(c0, &pts.iter().map(|x| g0.pullback(*x)).collect::<Vec<_>>(), Quantity::Value);
            let v1 = f.evaluate(c1, &pts.iter().map(|x| g1.pullback(*x)).collect::<Vec<_>>(), Quantity::Value);
            let scale = v0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) * (n[0].abs() + n[1].abs());
            for (a, b) in v0.iter().zip(&v1) {
                let jump = (a[0] - b[0]) * n[0] + (a[1] - b[1]) * n[1];
                worst = worst.max(jump.abs() / scale.max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(Check::at_most(format!("RT normal continuity, orders 0..={MAX_RT_ORDER}"), worst, VERIFY_TOL))
}

fn bubble_and_oswald(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let patches = build_patches(mesh);
    let (mut partition, mut trace, mut ident, mut idem) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let edge_pts: Vec<_> = (1..10).map(|i| [i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
    for m in 1..=5 {
        let s = lagrange_space(mesh, m, false)?;
        let q = random(rng, s.n_dofs());
        let mut sum = vec![0.0; q.len()];
        let tab = s.scalar().tabulate(&edge_pts);
        for p in &patches {
            let b = bubble_project(mesh, &s, p, &q);
            sum.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
            // the edge opposite the vertex, reference edge of local vertex 0
            for &c in &p.cells {
                if mesh.local_vertex(c, p.vertex) != Some(0) {
                    continue;
                }
                for qp in 0..edge_pts.len() {
                    let v: f64 = s.cell_dofs(c).iter().enumerate().map(|(j, &d)| b[d] * tab.value(qp, j)).sum();
                    trace = trace.max(v.abs());
                }
            }
        }
        partition = partition.max(sum.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let cont = lagrange_space(mesh, m, true)?;
        let qc = random(rng, cont.n_dofs());
        let qd = to_discontinuous(mesh, &cont, &qc, &s);
        let back = oswald(mesh, &s, &qd)?;
        ident = ident.max(back.iter().zip(&qc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let once = oswald(mesh, &s, &q)?;
        let twice = oswald(mesh, &s, &to_discontinuous(mesh, &cont, &once, &s))?;
        idem = idem.max(once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(vec![
        Check::at_most("bubble projector partition of unity, orders 1..=5", partition, VERIFY_TOL),
        Check::at_most("bubble projector trace on patch boundary", trace, VERIFY_TOL),
        Check::at_most("Oswald operator is the identity on continuous input", ident, VERIFY_TOL),
        Check::at_most("Oswald operator is idempotent", idem, VERIFY_TOL),
    ])
}

/// Coefficients of a continuous function in the matching discontinuous space.
pub fn to_discontinuous(mesh: &Mesh, cont: &FeSpace, q: &[f64], disc: &FeSpace) -> Vec<f64> {
    let mut out = vec![0.0; disc.n_dofs()];
    for c in 0..mesh.n_cells() {
        for (j, &d) in disc.cell_dofs(c).iter().enumerate() {
            out[d] = q[cont.cell_dofs(c)[j]];
        }
    }
    out
}

/// `∫ a b` over `cells` for two functions given by quantity.
fn pairing(mesh: &Mesh, cells: &[usize], a: (&DiscreteFunction, Quantity), b: (&DiscreteFunction, Quantity), deg: usize) -> Result<f64> {
    let qr = triangle_rule(deg)?;
    let mut s = 0.0;
    for &c in cells {
        let det = mesh.geometry(c).det;
        let va = a.0.evaluate(c, &qr.points, a.1);
        let vb = b.0.evaluate(c, &qr.points, b.1);
        for (i, w) in qr.weights.iter().enumerate() {
            s += w * det * dot(&va[i], &vb[i]);
        }
    }
    Ok(s)
}

/// Local problem on every patch: stability, the extended test property
/// `(div σ^V, q̃) = (div w, P^B_V(q̃ - S q̃))` and orthogonality of `σ^V`
/// to `[Π^{k-2}(ω_V)]²`.
fn local_properties(mesh: &Mesh, e: MixedElement, vel: &FeSpace, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let patches = build_patches(mesh);
    let qs = lagrange_space(mesh, e.q_order(), false)?;
    let cs = lagrange_space(mesh, e.q_order(), true)?;
    let deg = 2 * e.k() + 2;
    let (mut test_res, mut orth_res, mut stab) = (0.0f64, 0.0f64, 0.0f64);
    let qt = random(rng, qs.n_dofs());
    let sq = oswald(mesh, &qs, &qt)?;
    let sq_disc = to_discontinuous(mesh, &cs, &sq, &qs);
    let diff: Vec<f64> = qt.iter().zip(&sq_disc).map(|(a, b)| a - b).collect();
    let qtf = DiscreteFunction::new(mesh, &qs, 1, qt.clone())?;
    let rt_g = rt_space(mesh, e.rt_order(), &[])?;
    for p in &patches {
        let sys = assemble_patch_system(mesh, p, e, vel)?;
        let w = random(rng, 2 * vel.n_dofs());
        let sig = solve_patch(&sys, &patch_rhs(&sys, vel, &w));
        let mut sg = vec![0.0; rt_g.n_dofs()];
        for (a, g) in sys.global_sigma_dofs(&rt_g).into_iter().enumerate() {
            sg[g] = sig[a];
        }
        let wf = DiscreteFunction::new(mesh, vel, 2, w)?;
        let sf = DiscreteFunction::new(mesh, &rt_g, 2, sg)?;
        let pb = DiscreteFunction::new(mesh, &qs, 1, bubble_project(mesh, &qs, p, &diff))?;
        let want = pairing(mesh, &p.cells, (&wf, Quantity::Divergence), (&pb, Quantity::Value), deg)?;
        let got = pairing(mesh, &p.cells, (&sf, Quantity::Divergence), (&qtf, Quantity::Value), deg)?;
        let div_w2 = pairing(mesh, &p.cells, (&wf, Quantity::Divergence), (&wf, Quantity::Divergence), deg)?;
        let q2 = pairing(mesh, &p.cells, (&qtf, Quantity::Value), (&qtf, Quantity::Value), deg)?;
        let scale = (div_w2 * q2).sqrt().max(f64::MIN_POSITIVE);
        test_res = test_res.max((want - got).abs() / scale);
        let s2 = pairing(mesh, &p.cells, (&sf, Quantity::Value), (&sf, Quantity::Value), deg)?;
        let (o, s_scale) = orthogonality(mesh, p, &sf, e.orthogonality_degree(), deg)?;
        orth_res = orth_res.max(o / s_scale.max(p.h * div_w2.sqrt()).max(f64::MIN_POSITIVE));
        if div_w2 > 0.0 {
            stab = stab.max(s2.sqrt() / (p.h * div_w2.sqrt()));
        }
    }
    Ok(vec![
        Check::at_most(format!("{e} local test property, all patches"), test_res, VERIFY_TOL),
        Check::at_most(format!("{e} local orthogonality to degree {}", e.orthogonality_degree()), orth_res, VERIFY_TOL),
        Check::at_most(format!("{e} local stability ‖σ‖ / (h ‖div w‖)"), stab, 1e3),
    ])
}

/// Largest `|(σ, m e_c)|` over scaled monomials `m` of degree `<= deg_o`,
/// and `‖σ‖` on the patch.
fn orthogonality(mesh: &Mesh, p: &VertexPatch, sf: &DiscreteFunction, deg_o: usize, deg: usize) -> Result<(f64, f64)> {
    let qr = triangle_rule(deg)?;
    let xv = mesh.vertices()[p.vertex];
    let exps = crate::poly::exponents(deg_o);
    let mut ip = vec![[0.0f64; 2]; exps.len()];
    let mut norm2 = 0.0;
    for &c in &p.cells {
        let geo = mesh.geometry(c);
        let vals = sf.evaluate(c, &qr.points, Quantity::Value);
        for (i, w) in qr.weights.iter().enumerate() {
            let x = geo.map(qr.points[i]);
            let s = [(x[0] - xv[0]) / p.h, (x[1] - xv[1]) / p.h];
            norm2 += w * geo.det * (vals[i][0].powi(2) + vals[i][1].powi(2));
            for (m, &(a, b)) in exps.iter().enumerate() {
                let mono = s[0].powi(a as i32) * s[1].powi(b as i32);
                ip[m][0] += w * geo.det * vals[i][0] * mono;
                ip[m][1] += w * geo.det * vals[i][1] * mono;
            }
        }
    }
    let worst = ip.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    // monomials are O(1) on the patch, so |(σ, m)| <= ‖σ‖ |ω|^{1/2} ~ ‖σ‖ h
    Ok((worst, norm2.sqrt() * p.h))
}

/// Theorem-level properties of `R_h`: the commuting relation with the Oswald
/// operator, orthogonality of `div(w - R_h w)` to `Q_h`, and pointwise
/// divergence-free reconstructions of discretely divergence-free fields.
fn global_properties(
    mesh: &Mesh,
    e: MixedElement,
    vel: &FeSpace,
    map: &ReconstructionMap,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Check>> {
    let qs = lagrange_space(mesh, e.q_order(), false)?;
    let mass = assemble_mass(mesh, &qs)?;
    let os = lagrange_space(mesh, e.oswald_order(), true)?;
    let os_disc = lagrange_space(mesh, e.oswald_order(), false)?;
    let pres = e.pressure_space(mesh)?;
    let b = assemble_div(mesh, vel, &pres)?;
    let deg = 2 * e.rt_order() + 2;
    let qr = triangle_rule(deg)?;
    let ptab = pres.scalar().tabulate(&qr.points);
    let all: Vec<usize> = (0..mesh.n_cells()).collect();
    let (mut r1, mut r2) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let w = random(rng, 2 * vel.n_dofs());
        let qt = random(rng, qs.n_dofs());
        let (_, div_r) = map.reconstructed_divergence(mesh, vel, &w)?;
        let lhs = dot(&mass.matvec(&div_r), &qt);
        let st = oswald_tilde(mesh, &qs, &qt, e.oswald_order())?;
        let stf = DiscreteFunction::new(mesh, &os_disc, 1, to_discontinuous(mesh, &os, &st, &os_disc))?;
        let wf = DiscreteFunction::new(mesh, vel, 2, w.clone())?;
        let rhs = pairing(mesh, &all, (&wf, Quantity::Divergence), (&stf, Quantity::Value), deg)?;
        let dw = (dot(&mass.matvec(&div_r), &div_r)).sqrt();
        let scale = (dw * dot(&mass.matvec(&qt), &qt).sqrt()).max(rhs.abs()).max(f64::MIN_POSITIVE);
        r1 = r1.max((lhs - rhs).abs() / scale);
        // (div R_h w, q_j) against (div w, q_j) for the pressure basis
        let div_rf = DiscreteFunction::new(mesh, &qs, 1, div_r)?;
        let bw = b.matvec(&w);
        let mut got = vec![0.0; pres.n_dofs()];
        for c in 0..mesh.n_cells() {
            let det = mesh.geometry(c).det;
            let d = div_rf.evaluate(c, &qr.points, Quantity::Value);
            for (j, &g) in pres.cell_dofs(c).iter().enumerate() {
                got[g] += qr.weights.iter().enumerate().map(|(i, wq)| wq * det * d[i][0] * ptab.value(i, j)).sum::<f64>();
            }
        }
        let dev: Vec<f64> = got.iter().zip(&bw).map(|(a, b)| a - b).collect();
        r2 = r2.max(max_abs(&dev) / max_abs(&bw).max(f64::MIN_POSITIVE));
    }
    // discretely divergence-free fields from a Stokes solve with random load
    let disc = StokesDiscretization::new(mesh, e, false)?;
    let factor = disc.stokes_factorization()?;
    let mut r3 = 0.0f64;
    for _ in 0..3 {
        let load = random(rng, 2 * vel.n_dofs());
        let s = disc.solve_scaled(&factor, 1.0, &load, |_| [0.0, 0.0])?;
        r3 = r3.max(map.divergence_defect(mesh, vel, &s.u)?);
    }
    Ok(vec![
        Check::at_most(format!("{e} (div R w, q) = (div w, S q), {samples} samples"), r1, VERIFY_TOL),
        Check::at_most(format!("{e} (div(w - R w), q_h) = 0, {samples} samples"), r2, VERIFY_TOL),
        Check::at_most(format!("{e} div R w = 0 for discretely divergence-free w"), r3, VERIFY_TOL),
    ])
}

fn zero_inputs(mesh: &Mesh) -> Result<Check> {
    let e = MixedElement::TaylorHood(2);
    let vel = e.velocity_space(mesh)?;
    let map = build_reconstruction(mesh, &vel, e)?;
    let z = map.sigma(&vec![0.0; 2 * vel.n_dofs()]);
    Ok(Check::at_most("zero velocity gives zero flux correction", max_abs(&z), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_integrals() {
        assert!((exact_monomial_integral(0, 0) - 0.5).abs() < 1e-16);
        assert!((exact_monomial_integral(1, 0) - 1.0 / 6.0).abs() < 1e-16);
        assert!((exact_monomial_integral(2, 3) - 2.0 * 6.0 / 5040.0).abs() < 1e-18);
    }

    #[test]
    fn small_suite_passes() {
        let opts = VerifyOptions {
            n: 3,
            elements: vec![MixedElement::TaylorHood(2), MixedElement::Mini(1)],
            samples: 3,
            ..Default::default()
        };
        let r = run_verify(&opts).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
