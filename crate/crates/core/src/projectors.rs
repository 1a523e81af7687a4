//! Bubble projector, Oswald averaging, Koszul multiplier fields and
//! patch-global polynomial projections.

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, VertexPatch};
use crate::poly;
use crate::quadrature::triangle_rule;
use crate::spaces::{FeSpace, SpaceKind};

/// Nodal weights `λ_V(x_j)` of the order-`order` Lagrange nodes for local vertex `local_vertex`.
pub fn bubble_weights(order: usize, local_vertex: usize) -> Vec<f64> {
    crate::spaces::lagrange_lattice(order)
        .iter()
        .map(|l| l[local_vertex] as f64 / order as f64)
        .collect()
}

/// `P^B_V q`: on each patch cell the nodal coefficient `q_j` becomes
/// `q_j λ_V(x_j)`; zero elsewhere. `space` must be a discontinuous Lagrange space.
pub fn bubble_project(mesh: &Mesh, space: &FeSpace, patch: &VertexPatch, q: &[f64]) -> Vec<f64> {
    assert_eq!(space.kind, SpaceKind::LagrangeDiscontinuous);
    let mut out = vec![0.0; q.len()];
    for &c in &patch.cells {
        let lv = mesh.local_vertex(c, patch.vertex).expect("patch cell contains its vertex");
        let w = bubble_weights(space.order, lv);
        for (j, &d) in space.cell_dofs(c).iter().enumerate() {
            out[d] = q[d] * w[j];
        }
    }
    out
}

/// Averages a discontinuous function, evaluated at the nodes of `target`
/// (continuous Lagrange), over all cells sharing each node.
///
/// With equal orders this is the classical Oswald operator; with a lower
/// target order it evaluates the higher-degree pieces at the target nodes.
pub fn oswald_to(mesh: &Mesh, source: &FeSpace, q: &[f64], target: &FeSpace) -> Vec<f64> {
    assert_eq!(source.kind, SpaceKind::LagrangeDiscontinuous);
    assert_eq!(target.kind, SpaceKind::LagrangeContinuous);
    let tab = source.scalar().tabulate(&target.scalar().nodes);
    let mut sum = vec![0.0; target.n_dofs()];
    let mut count = vec![0usize; target.n_dofs()];
    for c in 0..mesh.n_cells() {
        let sd = source.cell_dofs(c);
        for (y, &g) in target.cell_dofs(c).iter().enumerate() {
            let v: f64 = sd.iter().enumerate().map(|(j, &d)| q[d] * tab.value(y, j)).sum();
            sum[g] += v;
            count[g] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect()
}

/// Classical Oswald operator of the same order.
pub fn oswald(mesh: &Mesh, source: &FeSpace, q: &[f64]) -> Result<Vec<f64>> {
    let target = crate::spaces::lagrange_space(mesh, source.order, true)?;
    Ok(oswald_to(mesh, source, q, &target))
}

/// Oswald operator of order `target_order` applied to higher-degree input.
pub fn oswald_tilde(mesh: &Mesh, source: &FeSpace, q: &[f64], target_order: usize) -> Result<Vec<f64>> {
    let target = crate::spaces::lagrange_space(mesh, target_order, true)?;
    Ok(oswald_to(mesh, source, q, &target))
}

/// Fields `κ_{x-V}(a) = (-(y - V_y), x - V_x) a / h` with `a` running over the
/// monomials `((x - V) / h)^α` of degree at most `degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoszulBasis {
    pub vertex: usize,
    pub center: Point,
    pub h: f64,
    pub degree: Option<usize>,
}

impl KoszulBasis {
    pub fn new(vertex: usize, center: Point, degree: Option<usize>, h: f64) -> Self {
        Self {
            vertex,
            center,
            h,
            degree,
        }
    }

    pub fn dim(&self) -> usize {
        self.degree.map_or(0, poly::dim)
    }

    /// Values of all basis fields at `x`.
    pub fn eval(&self, x: Point) -> Vec<[f64; 2]> {
        let Some(d) = self.degree else { return Vec::new() };
        let s = [(x[0] - self.center[0]) / self.h, (x[1] - self.center[1]) / self.h];
        poly::monomials(d, s).into_iter().map(|a| [-s[1] * a, s[0] * a]).collect()
    }
}

/// Multiplier basis of the Taylor–Hood patch problem of order `k`:
/// `κ_{x-V}(Π^{k-3})`, unscaled.
pub fn koszul_basis(mesh: &Mesh, patch: &VertexPatch, k: usize) -> KoszulBasis {
    let degree = k.checked_sub(3);
    KoszulBasis::new(patch.vertex, mesh.vertices()[patch.vertex], degree, 1.0)
}

/// A pair of polynomials defined on a whole patch in shifted, scaled monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPolynomial {
    pub center: Point,
    pub h: f64,
    pub degree: usize,
    pub coeffs: [Vec<f64>; 2],
}

impl PatchPolynomial {
    pub fn eval(&self, x: Point) -> [f64; 2] {
        let s = [(x[0] - self.center[0]) / self.h, (x[1] - self.center[1]) / self.h];
        let m = poly::monomials(self.degree, s);
        let dot = |c: &[f64]| c.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
        [dot(&self.coeffs[0]), dot(&self.coeffs[1])]
    }
}

/// `L²(ω_V)` projection of each component of `g` onto `Π^m(ω_V)`.
///
/// `g(cell, x)` receives a cell index and a physical point, so discrete
/// fields can be evaluated cellwise.
pub fn patch_poly_project(
    mesh: &Mesh,
    patch: &VertexPatch,
    g: impl Fn(usize, Point) -> [f64; 2],
    m: usize,
    quad_degree: usize,
) -> Result<PatchPolynomial> {
    let center = mesh.vertices()[patch.vertex];
    let h = patch.h;
    let n = poly::dim(m);
    let qr = triangle_rule(quad_degree.max(2 * m))?;
    let mut gram = Mat::<f64>::zeros(n, n);
    let mut rhs = Mat::<f64>::zeros(n, 2);
    for &c in &patch.cells {
        let geo = mesh.geometry(c);
        for (p, w) in qr.points.iter().zip(&qr.weights) {
            let x = geo.map(*p);
            let wt = w * geo.det;
            let s = [(x[0] - center[0]) / h, (x[1] - center[1]) / h];
            let mv = poly::monomials(m, s);
            let gv = g(c, x);
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] += wt * mv[i] * mv[j];
                }
                rhs[(i, 0)] += wt * mv[i] * gv[0];
                rhs[(i, 1)] += wt * mv[i] * gv[1];
            }
        }
    }
    let scale = (0..n).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let llt = gram
        .llt(faer::Side::Lower)
        .map_err(|_| Error::SingularGram { vertex: patch.vertex })?;
    let min_diag = (0..n).map(|i| llt.L()[(i, i)].powi(2)).fold(f64::INFINITY, f64::min);
    if !(min_diag > 1e-14 * scale) {
        return Err(Error::SingularGram { vertex: patch.vertex });
    }
    let sol = llt.solve(&rhs);
    Ok(PatchPolynomial {
        center,
        h,
        degree: m,
        coeffs: [(0..n).map(|i| sol[(i, 0)]).collect(), (0..n).map(|i| sol[(i, 1)]).collect()],
    })
}

/// Outcome of the dimension and rank check of
/// `[Π^{k-2}]^2 = ∇Π^{k-1} ⊕ κ_{x-V}(Π^{k-3})`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoszulReport {
    pub k: usize,
    pub dim_full: usize,
    pub dim_gradients: usize,
    pub dim_koszul: usize,
    pub rank: usize,
    pub passed: bool,
}

pub fn koszul_decomposition_check(k: usize) -> Result<KoszulReport> {
    if !(2..=6).contains(&k) {
        return Err(Error::OrderOutOfRange {
            what: "Koszul decomposition",
            order: k,
            min: 2,
            max: 6,
        });
    }
    // An off-center vertex exercises the shift invariance.
    let v = [0.3, -0.2];
    let mut fields: Vec<Box<dyn Fn(Point) -> [f64; 2]>> = Vec::new();
    for (a, b) in poly::exponents(k - 1).into_iter().skip(1) {
        fields.push(Box::new(move |x: Point| {
            let s = [x[0] - v[0], x[1] - v[1]];
            let dx = if a > 0 { a as f64 * s[0].powi(a as i32 - 1) * s[1].powi(b as i32) } else { 0.0 };
            let dy = if b > 0 { b as f64 * s[0].powi(a as i32) * s[1].powi(b as i32 - 1) } else { 0.0 };
            [dx, dy]
        }));
    }
    let dim_gradients = fields.len();
    let kb = KoszulBasis::new(0, v, k.checked_sub(3), 1.0);
    for i in 0..kb.dim() {
        let kb = kb.clone();
        fields.push(Box::new(move |x: Point| kb.eval(x)[i]));
    }
    let dim_koszul = kb.dim();
    let n = fields.len();
    let qr = triangle_rule(2 * k)?;
    let mut gram = Mat::<f64>::zeros(n, n);
    for (p, w) in qr.points.iter().zip(&qr.weights) {
        let vals: Vec<[f64; 2]> = fields.iter().map(|f| f(*p)).collect();
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] += w * (vals[i][0] * vals[j][0] + vals[i][1] * vals[j][1]);
            }
        }
    }
    let rank = if n == 0 {
        0
    } else {
        let ev = gram
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::InvalidArgument(format!("eigenvalue solver: {e:?}")))?;
        let max = ev.iter().cloned().fold(0.0, f64::max);
        ev.iter().filter(|&&e| e > 1e-10 * max).count()
    };
    let dim_full = 2 * poly::dim(k - 2);
    Ok(KoszulReport {
        k,
        dim_full,
        dim_gradients,
        dim_koszul,
        rank,
        passed: dim_full == dim_gradients + dim_koszul && rank == dim_full,
    })
}
