//! Local `H(div)` equilibration problems on vertex patches and the global
//! reconstruction `R_h w = w - σ(w)`.
//!
//! On the patch `ω_X` of a vertex `X` the unknowns are ordered
//! `σ | φ | λ | ρ`: Raviart–Thomas fluxes with zero normal trace on `∂ω_X`,
//! discontinuous multipliers `φ`, Koszul multipliers `λ` and one scalar
//! `ρ` enforcing `∫ φ = 0`. The test space for `φ` is the full
//! discontinuous space; the extra multiplier absorbs the constants.
//!
//! The right-hand side is `ℓ(ψ) = (div w, L ψ)` with `L = Λ (I - G) + C`:
//! `Λ` scales nodal values by `λ_X`, `G` is the Oswald average computed with
//! the patch cells only, and `C` collects the terms that make the patch
//! contributions sum to `(div w, ψ - S ψ)` when `S` averages at nodes of a
//! lower order than the multiplier space (mini element). For Taylor–Hood `C`
//! vanishes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::element::MixedElement;
use crate::error::{Error, Result};
use crate::mesh::{build_patches, Mesh, Point, VertexPatch};
use crate::projectors::{patch_poly_project, KoszulBasis};
use crate::quadrature::{triangle_rule, QuadRule};
use crate::sparse::SparseMatrix;
use crate::spaces::{
    lagrange_lattice, lagrange_space, rt_space, DiscreteFunction, FeSpace, Quantity, RtElement, RtTab, ScalarElement,
    ScalarTab,
};

/// Whether the patch right-hand side carries the locality correction `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsMode {
    Corrected,
    /// `Λ (I - G)` only; differs from the corrected form for the mini element.
    Plain,
}

/// Reference tables shared by all patches of one element.
#[derive(Debug)]
pub struct PatchTables {
    pub element: MixedElement,
    pub quad: QuadRule,
    rt: RtTab,
    q_el: ScalarElement,
    q: ScalarTab,
    vel: ScalarTab,
    t_order: usize,
    t_lattice: Vec<[usize; 3]>,
    /// `e[y * nq + i]`: multiplier basis `i` at node `y` of order `t`.
    e: Vec<f64>,
    /// `f[j * nt + y]`: order-`t` basis `y` at multiplier node `j`.
    f: Vec<f64>,
}

impl PatchTables {
    pub fn new(element: MixedElement) -> Result<Self> {
        let element = element.validate()?;
        let m = element.rt_order();
        let qo = element.q_order();
        let t = element.oswald_order();
        let quad = triangle_rule(2 * m + 2)?;
        let rt_el = RtElement::new(m)?;
        let q_el = ScalarElement::lagrange(qo)?;
        let vel_el = match element {
            MixedElement::TaylorHood(k) => ScalarElement::lagrange(k)?,
            MixedElement::Mini(k) => ScalarElement::mini(k)?,
        };
        let t_el = ScalarElement::lagrange(t)?;
        let nq = q_el.n_basis();
        let nt = t_el.n_basis();
        let et = q_el.tabulate(&t_el.nodes);
        let ft = t_el.tabulate(&q_el.nodes);
        let e = (0..nt).flat_map(|y| (0..nq).map(move |i| (y, i))).map(|(y, i)| et.value(y, i)).collect();
        let f = (0..nq).flat_map(|j| (0..nt).map(move |y| (j, y))).map(|(j, y)| ft.value(j, y)).collect();
        Ok(Self {
            element,
            rt: rt_el.tabulate(&quad.points),
            q: q_el.tabulate(&quad.points),
            vel: vel_el.tabulate(&quad.points),
            q_el,
            t_order: t,
            t_lattice: lagrange_lattice(t),
            e,
            f,
            quad,
        })
    }

    fn nq(&self) -> usize {
        self.q_el.n_basis()
    }

    fn nt(&self) -> usize {
        self.t_lattice.len()
    }
}

/// The assembled and factorized saddle-point problem of one vertex patch.
#[derive(Debug)]
pub struct PatchSystem {
    pub vertex: usize,
    pub element: MixedElement,
    pub mode: RhsMode,
    pub h: f64,
    pub area: f64,
    /// Global indices of the patch cells; local cell `c` is `cells[c]`.
    pub cells: Vec<usize>,
    pub local_mesh: Mesh,
    /// Raviart–Thomas space on the patch with the `∂ω_X` dofs removed.
    pub rt: FeSpace,
    /// Discontinuous multiplier space on the patch.
    pub q: FeSpace,
    pub koszul: KoszulBasis,
    pub n_sigma: usize,
    pub n_q: usize,
    pub n_w: usize,
    /// For each free flux dof, its local dof and a `(global cell, position)` owner.
    pub sigma_dofs: Vec<(usize, usize, usize)>,
    /// Velocity scalar dofs supported on the patch (sorted).
    pub velocity_dofs: Vec<usize>,
    pub matrix: Mat<f64>,
    /// `L` acting on multiplier coefficients.
    pub rhs_operator: Mat<f64>,
    /// `(div φ_s e_c, q_j)` for local velocity dofs, columns ordered `c * n + s`.
    pub div_coupling: Mat<f64>,
    pub min_pivot: f64,
    pub max_pivot: f64,
    lu: PartialPivLu<f64>,
    tables: Arc<PatchTables>,
}

impl PatchSystem {
    pub fn size(&self) -> usize {
        self.n_sigma + self.n_q + self.n_w + 1
    }

    pub fn tables(&self) -> &PatchTables {
        &self.tables
    }

    /// Crude condition estimate from the pivots of the factorization.
    pub fn pivot_ratio(&self) -> f64 {
        self.max_pivot / self.min_pivot
    }

    pub fn solve_full(&self, rhs: &Mat<f64>) -> Mat<f64> {
        self.lu.solve(rhs)
    }

    /// Expands free flux coefficients to a coefficient vector of [`Self::rt`].
    pub fn expand_sigma(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rt.n_dofs()];
        for (a, &(d, _, _)) in self.sigma_dofs.iter().enumerate() {
            out[d] = free[a];
        }
        out
    }

    pub fn global_sigma_dofs(&self, global_rt: &FeSpace) -> Vec<usize> {
        self.sigma_dofs.iter().map(|&(_, c, i)| global_rt.cell_dofs(c)[i]).collect()
    }
}

/// Builds the patch mesh with vertices renumbered monotonically, so edge
/// orientations (and hence flux signs) agree with the global mesh.
fn local_mesh(mesh: &Mesh, patch: &VertexPatch) -> Result<Mesh> {
    let mut ids: Vec<usize> = patch.cells.iter().flat_map(|&c| mesh.cells()[c]).collect();
    ids.sort_unstable();
    ids.dedup();
    let pos = |v: usize| ids.binary_search(&v).expect("vertex of a patch cell");
    let verts = ids.iter().map(|&v| mesh.vertices()[v]).collect();
    let cells = patch
        .cells
        .iter()
        .map(|&c| {
            let [a, b, d] = mesh.cells()[c];
            [pos(a), pos(b), pos(d)]
        })
        .collect();
    Mesh::new(verts, cells)
}

pub fn assemble_patch_system(
    mesh: &Mesh,
    patch: &VertexPatch,
    element: MixedElement,
    velocity: &FeSpace,
) -> Result<PatchSystem> {
    let tables = Arc::new(PatchTables::new(element)?);
    assemble_with(mesh, patch, velocity, tables, RhsMode::Corrected)
}

pub fn assemble_with(
    mesh: &Mesh,
    patch: &VertexPatch,
    velocity: &FeSpace,
    tables: Arc<PatchTables>,
    mode: RhsMode,
) -> Result<PatchSystem> {
    let element = tables.element;
    let lm = local_mesh(mesh, patch)?;
    let h = patch.h;
    let area = patch.area(mesh);
    let xv = mesh.vertices()[patch.vertex];

    let all_boundary: Vec<bool> = (0..lm.n_edges()).map(|e| lm.is_boundary_edge(e)).collect();
    let rt = rt_space(&lm, element.rt_order(), &all_boundary)?;
    let q = lagrange_space(&lm, element.q_order(), false)?;
    let koszul = KoszulBasis::new(patch.vertex, xv, element.koszul_degree(), h);

    let n_sigma = rt.n_free();
    let n_q = q.n_dofs();
    let n_w = koszul.dim();
    let n = n_sigma + n_q + n_w + 1;

    let mut sigma_dofs = vec![(0, 0, 0); n_sigma];
    for (cl, &cg) in patch.cells.iter().enumerate() {
        for (i, &d) in rt.cell_dofs(cl).iter().enumerate() {
            if let Some(a) = rt.free_index(d) {
                sigma_dofs[a] = (d, cg, i);
            }
        }
    }

    let mut velocity_dofs: Vec<usize> = patch.cells.iter().flat_map(|&c| velocity.cell_dofs(c).to_vec()).collect();
    velocity_dofs.sort_unstable();
    velocity_dofs.dedup();
    let nvl = velocity_dofs.len();
    let vpos: HashMap<usize, usize> = velocity_dofs.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    let mut a = Mat::<f64>::zeros(n, n);
    let mut cdiv = Mat::<f64>::zeros(n_q, 2 * nvl);
    let (o_q, o_w, o_r) = (n_sigma, n_sigma + n_q, n_sigma + n_q + n_w);
    let nrt = tables.rt.n_basis;
    let nql = tables.nq();
    let mut sv = vec![[0.0; 2]; nrt];
    let mut sd = vec![0.0; nrt];
    for (cl, &cg) in patch.cells.iter().enumerate() {
        let geo = mesh.geometry(cg);
        let rdofs = rt.cell_dofs(cl);
        let signs = rt.cell_signs(cl);
        let free: Vec<Option<usize>> = rdofs.iter().map(|&d| rt.free_index(d)).collect();
        let qd = q.cell_dofs(cl);
        let vd: Vec<usize> = velocity.cell_dofs(cg).iter().map(|d| vpos[d]).collect();
        for (p, (&xr, &wr)) in tables.quad.points.iter().zip(&tables.quad.weights).enumerate() {
            let wt = wr * geo.det;
            let x = geo.map(xr);
            for i in 0..nrt {
                let v = geo.piola(tables.rt.value(p, i));
                sv[i] = [signs[i] * v[0], signs[i] * v[1]];
                sd[i] = signs[i] * tables.rt.div(p, i) / geo.det;
            }
            let kz = koszul.eval(x);
            for i in 0..nrt {
                let Some(fi) = free[i] else { continue };
                for j in 0..nrt {
                    if let Some(fj) = free[j] {
                        a[(fi, fj)] += wt * (sv[i][0] * sv[j][0] + sv[i][1] * sv[j][1]);
                    }
                }
                for (jl, &qj) in qd.iter().enumerate() {
                    let v = wt * sd[i] * tables.q.value(p, jl);
                    a[(o_q + qj, fi)] += v;
                    a[(fi, o_q + qj)] += v;
                }
                for (b, mu) in kz.iter().enumerate() {
                    let v = wt * (sv[i][0] * mu[0] + sv[i][1] * mu[1]) / h;
                    a[(o_w + b, fi)] += v;
                    a[(fi, o_w + b)] += v;
                }
            }
            for (jl, &qj) in qd.iter().enumerate() {
                let qv = tables.q.value(p, jl);
                let v = wt * qv / area;
                a[(o_q + qj, o_r)] += v;
                a[(o_r, o_q + qj)] += v;
                for (s, &vs) in vd.iter().enumerate() {
                    let g = geo.grad(tables.vel.grad(p, s));
                    cdiv[(qj, vs)] += wt * qv * g[0];
                    cdiv[(qj, nvl + vs)] += wt * qv * g[1];
                }
            }
        }
        debug_assert_eq!(qd.len(), nql);
    }

    let lu = a.partial_piv_lu();
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |s, (i, j)| s.max(a[(i, j)].abs()));
    let u = lu.U();
    let (mut min_pivot, mut max_pivot) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        min_pivot = min_pivot.min(u[(i, i)].abs());
        max_pivot = max_pivot.max(u[(i, i)].abs());
    }
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::SingularPatch {
            vertex: patch.vertex,
            pivot: min_pivot,
            scale,
        });
    }

    let rhs_operator = rhs_operator(mesh, patch, &lm, &q, &tables, mode)?;

    Ok(PatchSystem {
        vertex: patch.vertex,
        element,
        mode,
        h,
        area,
        cells: patch.cells.clone(),
        local_mesh: lm,
        rt,
        q,
        koszul,
        n_sigma,
        n_q,
        n_w,
        sigma_dofs,
        velocity_dofs,
        matrix: a,
        rhs_operator,
        div_coupling: cdiv,
        min_pivot,
        max_pivot,
        lu,
        tables,
    })
}

/// The operator `L` with `ℓ(ψ) = (div w, L ψ)` on multiplier coefficients.
fn rhs_operator(
    mesh: &Mesh,
    patch: &VertexPatch,
    lm: &Mesh,
    q: &FeSpace,
    tb: &PatchTables,
    mode: RhsMode,
) -> Result<Mat<f64>> {
    let nql = tb.nq();
    let nt = tb.nt();
    let t = tb.t_order;
    let qo = tb.q_el.order;
    let nc = lm.n_cells();
    let n_q = q.n_dofs();
    let tspace = lagrange_space(lm, t, true)?;
    let xl: Vec<usize> = patch
        .cells
        .iter()
        .map(|&c| mesh.local_vertex(c, patch.vertex).expect("patch cell contains its vertex"))
        .collect();
    let lam = |j: usize, v: usize| tb.q_el.lattice[j][v] as f64 / qo as f64;
    let e = |y: usize, i: usize| tb.e[y * nql + i];
    let f = |j: usize, y: usize| tb.f[j * nt + y];

    // patch-local averages at order-t nodes
    let mut count = vec![0usize; tspace.n_dofs()];
    for c in 0..nc {
        for &g in tspace.cell_dofs(c) {
            count[g] += 1;
        }
    }
    let mut avg = Mat::<f64>::zeros(tspace.n_dofs(), n_q);
    for c in 0..nc {
        let qd = q.cell_dofs(c);
        for (y, &g) in tspace.cell_dofs(c).iter().enumerate() {
            for (i, &qi) in qd.iter().enumerate() {
                avg[(g, qi)] += e(y, i) / count[g] as f64;
            }
        }
    }

    let mut l = Mat::<f64>::zeros(n_q, n_q);
    for c in 0..nc {
        let qd = q.cell_dofs(c);
        let td = tspace.cell_dofs(c);
        for (j, &qj) in qd.iter().enumerate() {
            let s = lam(j, xl[c]);
            if s == 0.0 {
                continue;
            }
            l[(qj, qj)] += s;
            for (y, &g) in td.iter().enumerate() {
                let fy = f(j, y);
                if fy == 0.0 {
                    continue;
                }
                for col in 0..n_q {
                    l[(qj, col)] -= s * fy * avg[(g, col)];
                }
            }
        }
    }
    if mode == RhsMode::Plain || t == qo {
        return Ok(l);
    }

    // vertex terms: g_j (a_UX(X) - a(X))
    let value_at_x = |c: usize| q.cell_dofs(c)[xl[c]];
    let all: Vec<usize> = (0..nc).collect();
    for c in 0..nc {
        let cell = lm.cells()[c];
        let qd = q.cell_dofs(c);
        for (iu, &u) in cell.iter().enumerate() {
            if iu == xl[c] {
                continue;
            }
            let with_u: Vec<usize> = (0..nc).filter(|&c2| lm.cells()[c2].contains(&u)).collect();
            for (j, &qj) in qd.iter().enumerate() {
                let gj = lam(j, iu) * f(j, xl[c]);
                if gj == 0.0 {
                    continue;
                }
                for &c2 in &with_u {
                    l[(qj, value_at_x(c2))] += gj / with_u.len() as f64;
                }
                for &c2 in &all {
                    l[(qj, value_at_x(c2))] -= gj / nc as f64;
                }
            }
        }
    }

    // edge terms on interior patch edges
    for e_loc in 0..lm.n_edges() {
        let (c0, Some(c1)) = lm.edge_cells(e_loc) else { continue };
        for (ct, co) in [(c0, c1), (c1, c0)] {
            let it = lm.cell_edges(ct).iter().position(|&x| x == e_loc).expect("edge of cell");
            let io = lm.cell_edges(co).iter().position(|&x| x == e_loc).expect("edge of cell");
            let tdt = tspace.cell_dofs(ct);
            let tdo = tspace.cell_dofs(co);
            let qt = q.cell_dofs(ct);
            let qo_d = q.cell_dofs(co);
            for y in edge_interior_nodes(t, it) {
                let g = tdt[y];
                let yo = tdo.iter().position(|&x| x == g).expect("shared edge node");
                debug_assert_eq!(tb.t_lattice[yo][io], 0);
                for (j, &qj) in qt.iter().enumerate() {
                    let w = 0.25 * lam(j, it) * f(j, y);
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..nql {
                        l[(qj, qt[i])] += w * e(y, i);
                        l[(qj, qo_d[i])] -= w * e(yo, i);
                    }
                }
            }
        }
    }
    Ok(l)
}

/// Local indices of the order-`t` nodes in the interior of edge `i`.
fn edge_interior_nodes(t: usize, i: usize) -> std::ops::Range<usize> {
    let s = 3 + i * (t - 1);
    s..s + t - 1
}

/// Right-hand side of the patch problem for a velocity field `w`
/// (`2 * n_dofs` coefficients, component-major).
pub fn patch_rhs(system: &PatchSystem, velocity: &FeSpace, w: &[f64]) -> Vec<f64> {
    let nv = velocity.n_dofs();
    let nvl = system.velocity_dofs.len();
    let mut local = vec![0.0; 2 * nvl];
    for (s, &d) in system.velocity_dofs.iter().enumerate() {
        local[s] = w[d];
        local[nvl + s] = w[nv + d];
    }
    let mut d = vec![0.0; system.n_q];
    for (i, di) in d.iter_mut().enumerate() {
        *di = (0..2 * nvl).map(|c| system.div_coupling[(i, c)] * local[c]).sum();
    }
    let mut rhs = vec![0.0; system.size()];
    for j in 0..system.n_q {
        rhs[system.n_sigma + j] = (0..system.n_q).map(|i| system.rhs_operator[(i, j)] * d[i]).sum();
    }
    rhs
}

/// Solves the patch problem and returns the free flux coefficients.
pub fn solve_patch(system: &PatchSystem, rhs: &[f64]) -> Vec<f64> {
    let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = system.lu.solve(&b);
    (0..system.n_sigma).map(|i| x[(i, 0)]).collect()
}

/// Flux blocks of the patch for every local velocity basis function:
/// entry `(a, c * n + s)` is flux dof `a` of `σ^X(φ_s e_c)`.
fn patch_flux_block(system: &PatchSystem) -> Mat<f64> {
    let n = system.size();
    let rhs_q = system.rhs_operator.transpose() * &system.div_coupling;
    let mut rhs = Mat::<f64>::zeros(n, rhs_q.ncols());
    for i in 0..system.n_q {
        for c in 0..rhs_q.ncols() {
            rhs[(system.n_sigma + i, c)] = rhs_q[(i, c)];
        }
    }
    let x = system.lu.solve(&rhs);
    x.subrows(0, system.n_sigma).to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDiagnostics {
    pub vertex: usize,
    pub n_cells: usize,
    pub n_sigma: usize,
    pub n_q: usize,
    pub n_w: usize,
    pub size: usize,
    pub pivot_ratio: f64,
    /// `‖σ^X(w)‖ / (h_X ‖div w‖_{ω_X})` for a pseudo-random `w`.
    pub stability_ratio: f64,
}

/// The linear map `w ↦ σ(w) = Σ_X σ^X(w)`, stored as the transpose: row
/// `c * n_v + i` holds the global flux coefficients of `σ(φ_i e_c)`.
#[derive(Debug, Clone)]
pub struct ReconstructionMap {
    pub element: MixedElement,
    pub mode: RhsMode,
    pub rt_space: FeSpace,
    pub n_velocity: usize,
    pub transpose: SparseMatrix,
    pub diagnostics: Vec<PatchDiagnostics>,
}

pub fn build_reconstruction(mesh: &Mesh, velocity: &FeSpace, element: MixedElement) -> Result<ReconstructionMap> {
    build_reconstruction_with(mesh, velocity, element, RhsMode::Corrected)
}

pub fn build_reconstruction_with(
    mesh: &Mesh,
    velocity: &FeSpace,
    element: MixedElement,
    mode: RhsMode,
) -> Result<ReconstructionMap> {
    let tables = Arc::new(PatchTables::new(element)?);
    let rt_global = rt_space(mesh, element.rt_order(), &[])?;
    let patches = build_patches(mesh);
    let nv = velocity.n_dofs();
    let parts: Vec<(Vec<(usize, usize, f64)>, PatchDiagnostics)> = patches
        .par_iter()
        .map(|patch| {
            let sys = assemble_with(mesh, patch, velocity, tables.clone(), mode)?;
            let x = patch_flux_block(&sys);
            let g = sys.global_sigma_dofs(&rt_global);
            let nvl = sys.velocity_dofs.len();
            let mut trip = Vec::with_capacity(sys.n_sigma * 2 * nvl);
            for c in 0..2 {
                for (s, &d) in sys.velocity_dofs.iter().enumerate() {
                    let row = c * nv + d;
                    for (a, &ga) in g.iter().enumerate() {
                        let v = x[(a, c * nvl + s)];
                        if v != 0.0 {
                            trip.push((row, ga, v));
                        }
                    }
                }
            }
            let diag = diagnostics(&sys, &x);
            Ok((trip, diag))
        })
        .collect::<Result<_>>()?;
    let total = parts.iter().map(|p| p.0.len()).sum();
    let mut trip = Vec::with_capacity(total);
    let mut diagnostics = Vec::with_capacity(parts.len());
    for (t, d) in parts {
        trip.extend(t);
        diagnostics.push(d);
    }
    let transpose = SparseMatrix::from_triplets(2 * nv, rt_global.n_dofs(), trip);
    log::debug!(
        "reconstruction {}: {} patches, {} nonzeros",
        element,
        diagnostics.len(),
        transpose.nnz()
    );
    Ok(ReconstructionMap {
        element,
        mode,
        rt_space: rt_global,
        n_velocity: nv,
        transpose,
        diagnostics,
    })
}

fn diagnostics(sys: &PatchSystem, x: &Mat<f64>) -> PatchDiagnostics {
    let mut rng = ChaCha8Rng::seed_from_u64(sys.vertex as u64);
    let coeffs: Vec<f64> = (0..x.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sigma: Vec<f64> = (0..sys.n_sigma)
        .map(|a| (0..x.ncols()).map(|c| x[(a, c)] * coeffs[c]).sum())
        .collect();
    let mut s2 = 0.0;
    for a in 0..sys.n_sigma {
        for b in 0..sys.n_sigma {
            s2 += sigma[a] * sys.matrix[(a, b)] * sigma[b];
        }
    }
    // ‖div w‖² through the multiplier mass matrix: div w lies in the multiplier space
    let d: Vec<f64> = (0..sys.n_q)
        .map(|i| (0..x.ncols()).map(|c| sys.div_coupling[(i, c)] * coeffs[c]).sum())
        .collect();
    let mass = multiplier_mass(sys);
    let dw2 = mass
        .partial_piv_lu()
        .solve(Mat::from_fn(sys.n_q, 1, |i, _| d[i]))
        .col(0)
        .iter()
        .zip(&d)
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let denom = sys.h * dw2.max(0.0).sqrt();
    PatchDiagnostics {
        vertex: sys.vertex,
        n_cells: sys.cells.len(),
        n_sigma: sys.n_sigma,
        n_q: sys.n_q,
        n_w: sys.n_w,
        size: sys.size(),
        pivot_ratio: sys.pivot_ratio(),
        stability_ratio: if denom > 0.0 { s2.max(0.0).sqrt() / denom } else { 0.0 },
    }
}

fn multiplier_mass(sys: &PatchSystem) -> Mat<f64> {
    let tb = &sys.tables;
    let mut m = Mat::<f64>::zeros(sys.n_q, sys.n_q);
    for (cl, &cg) in sys.cells.iter().enumerate() {
        let det = sys.local_mesh.geometry(cl).det;
        debug_assert!(det > 0.0 && cg < usize::MAX);
        let qd = sys.q.cell_dofs(cl);
        for (p, &w) in tb.quad.weights.iter().enumerate() {
            for (i, &qi) in qd.iter().enumerate() {
                for (j, &qj) in qd.iter().enumerate() {
                    m[(qi, qj)] += w * det * tb.q.value(p, i) * tb.q.value(p, j);
                }
            }
        }
    }
    m
}

impl ReconstructionMap {
    /// Global flux coefficients of `σ(w)`.
    pub fn sigma(&self, w: &[f64]) -> Vec<f64> {
        self.transpose.transpose_matvec(w)
    }

    /// `Rᵀ g` for flux-space moments `g_j = (f, ψ_j)`.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        self.transpose.matvec(g)
    }

    /// Discontinuous order-`q` coefficients of `div R_h w` (nodal per cell).
    pub fn reconstructed_divergence(&self, mesh: &Mesh, velocity: &FeSpace, w: &[f64]) -> Result<(FeSpace, Vec<f64>)> {
        let qs = lagrange_space(mesh, self.element.q_order(), false)?;
        let wf = DiscreteFunction::new(mesh, velocity, 2, w.to_vec())?;
        let sf = DiscreteFunction::new(mesh, &self.rt_space, 2, self.sigma(w))?;
        let nodes = &qs.scalar().nodes;
        let mut out = vec![0.0; qs.n_dofs()];
        for c in 0..mesh.n_cells() {
            let dw = wf.evaluate(c, nodes, Quantity::Divergence);
            let ds = sf.evaluate(c, nodes, Quantity::Divergence);
            for (j, &d) in qs.cell_dofs(c).iter().enumerate() {
                out[d] = dw[j][0] - ds[j][0];
            }
        }
        Ok((qs, out))
    }

    /// `max |div R_h w|` over the nodes of the multiplier space, relative to
    /// the largest nodal entry of `∇w` (absolute when `w` is constant).
    pub fn divergence_defect(&self, mesh: &Mesh, velocity: &FeSpace, w: &[f64]) -> Result<f64> {
        let qs = lagrange_space(mesh, self.element.q_order(), false)?;
        let wf = DiscreteFunction::new(mesh, velocity, 2, w.to_vec())?;
        let (_, dr) = self.reconstructed_divergence(mesh, velocity, w)?;
        let nodes = &qs.scalar().nodes;
        let mut scale = 0.0f64;
        for c in 0..mesh.n_cells() {
            for g in wf.evaluate(c, nodes, Quantity::Gradient) {
                scale = g.iter().fold(scale, |a, v| a.max(v.abs()));
            }
        }
        let d = dr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(if scale > 0.0 { d / scale } else { d })
    }

    /// Load vector `l(R_h φ_i)` for a source term `f`.
    pub fn reconstructed_load(
        &self,
        mesh: &Mesh,
        velocity: &FeSpace,
        f: &(dyn Fn(Point) -> [f64; 2] + Sync),
        degree: usize,
    ) -> Result<Vec<f64>> {
        let mut load = crate::assembly::assemble_load(mesh, velocity, f, degree)?;
        let fs = crate::assembly::assemble_rt_load(mesh, &self.rt_space, f, degree)?;
        for (l, r) in load.iter_mut().zip(self.apply_transpose(&fs)) {
            *l -= r;
        }
        Ok(load)
    }

    /// Diagnostics as CSV: one row per patch.
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("vertex,n_cells,n_sigma,n_q,n_w,size,pivot_ratio,stability_ratio\n");
        for d in &self.diagnostics {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6e},{:.6e}",
                d.vertex, d.n_cells, d.n_sigma, d.n_q, d.n_w, d.size, d.pivot_ratio, d.stability_ratio
            );
        }
        s
    }
}

/// Data oscillation `(Σ_X h_X² ‖g - 𝒫^m_{ω_X} g‖²_{ω_X})^{1/2}`.
pub fn data_oscillation(
    mesh: &Mesh,
    patches: &[VertexPatch],
    g: &(dyn Fn(Point) -> [f64; 2] + Sync),
    m: usize,
    degree: usize,
) -> Result<f64> {
    let qr = triangle_rule(degree.max(2 * m))?;
    let parts: Vec<f64> = patches
        .par_iter()
        .map(|patch| {
            let proj = patch_poly_project(mesh, patch, |_, x| g(x), m, degree)?;
            let mut e2 = 0.0;
            for &c in &patch.cells {
                let geo = mesh.geometry(c);
                for (p, w) in qr.points.iter().zip(&qr.weights) {
                    let x = geo.map(*p);
                    let (gv, pv) = (g(x), proj.eval(x));
                    e2 += w * geo.det * ((gv[0] - pv[0]).powi(2) + (gv[1] - pv[1]).powi(2));
                }
            }
            Ok(patch.h * patch.h * e2)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured, perturb};
    use crate::projectors::{bubble_project, oswald, oswald_tilde};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// `(div w, q)` for a discontinuous `q`, by quadrature on every cell.
    fn div_pairing(mesh: &Mesh, vel: &FeSpace, w: &[f64], qs: &FeSpace, q: &[f64]) -> f64 {
        let wf = DiscreteFunction::new(mesh, vel, 2, w.to_vec()).unwrap();
        let qf = DiscreteFunction::new(mesh, qs, 1, q.to_vec()).unwrap();
        let qr = triangle_rule(14).unwrap();
        let mut s = 0.0;
        for c in 0..mesh.n_cells() {
            let det = mesh.geometry(c).det;
            let d = wf.evaluate(c, &qr.points, Quantity::Divergence);
            let v = qf.evaluate(c, &qr.points, Quantity::Value);
            for (i, w) in qr.weights.iter().enumerate() {
                s += w * det * d[i][0] * v[i][0];
            }
        }
        s
    }

    fn rt_div_pairing(mesh: &Mesh, rt: &FeSpace, sigma: &[f64], qs: &FeSpace, q: &[f64]) -> f64 {
        let sf = DiscreteFunction::new(mesh, rt, 2, sigma.to_vec()).unwrap();
        let qf = DiscreteFunction::new(mesh, qs, 1, q.to_vec()).unwrap();
        let qr = triangle_rule(14).unwrap();
        let mut s = 0.0;
        for c in 0..mesh.n_cells() {
            let det = mesh.geometry(c).det;
            let d = sf.evaluate(c, &qr.points, Quantity::Divergence);
            let v = qf.evaluate(c, &qr.points, Quantity::Value);
            for (i, w) in qr.weights.iter().enumerate() {
                s += w * det * d[i][0] * v[i][0];
            }
        }
        s
    }

    #[test]
    fn corner_patch_sizes() {
        let m = generate_structured(1).unwrap();
        let patches = build_patches(&m);
        let corner = patches.iter().find(|p| p.cells.len() == 1).unwrap();
        let th2 = MixedElement::TaylorHood(2);
        let vel = th2.velocity_space(&m).unwrap();
        let s = assemble_patch_system(&m, corner, th2, &vel).unwrap();
        assert_eq!((s.n_sigma, s.n_q, s.n_w, s.size()), (2, 3, 0, 6));
        let m4 = generate_structured(4).unwrap();
        let p = &build_patches(&m4)[12];
        for (k, nw) in [(2, 0), (3, 1), (4, 3)] {
            let e = MixedElement::TaylorHood(k);
            let vel = e.velocity_space(&m4).unwrap();
            assert_eq!(assemble_patch_system(&m4, p, e, &vel).unwrap().n_w, nw);
        }
        let mini = MixedElement::Mini(1);
        let vel = mini.velocity_space(&m4).unwrap();
        let s = assemble_patch_system(&m4, p, mini, &vel).unwrap();
        assert_eq!((s.rt.order, s.q.order, s.n_w), (2, 2, 0));
        assert_eq!(s.n_q, 6 * p.cells.len());
    }

    #[test]
    fn constants_and_continuous_multipliers_are_annihilated() {
        let m = perturb(&generate_structured(4).unwrap(), 0.2, 3).unwrap();
        let patches = build_patches(&m);
        for e in [MixedElement::TaylorHood(2), MixedElement::TaylorHood(4), MixedElement::Mini(1)] {
            let vel = e.velocity_space(&m).unwrap();
            for p in [&patches[0], &patches[7], &patches[12]] {
                let s = assemble_patch_system(&m, p, e, &vel).unwrap();
                let ones = Mat::<f64>::from_fn(s.n_q, 1, |_, _| 1.0);
                let l1 = &s.rhs_operator * &ones;
                assert!(l1.col(0).iter().all(|v| v.abs() < 1e-13), "{e}");
                if !e.is_mini() {
                    // a patch-continuous multiplier
                    let cs = lagrange_space(&s.local_mesh, e.q_order(), true).unwrap();
                    let cv = random(cs.n_dofs(), 4);
                    let mut psi = Mat::<f64>::zeros(s.n_q, 1);
                    for c in 0..s.local_mesh.n_cells() {
                        for (j, &d) in s.q.cell_dofs(c).iter().enumerate() {
                            psi[(d, 0)] = cv[cs.cell_dofs(c)[j]];
                        }
                    }
                    let lp = &s.rhs_operator * &psi;
                    assert!(lp.col(0).iter().all(|v| v.abs() < 1e-13));
                }
                let rhs = vec![0.0; s.size()];
                assert!(solve_patch(&s, &rhs).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn correction_vanishes_for_taylor_hood() {
        let m = perturb(&generate_structured(3).unwrap(), 0.2, 5).unwrap();
        let patches = build_patches(&m);
        for k in 2..=4 {
            let e = MixedElement::TaylorHood(k);
            let vel = e.velocity_space(&m).unwrap();
            let tb = Arc::new(PatchTables::new(e).unwrap());
            for p in &patches {
                let a = assemble_with(&m, p, &vel, tb.clone(), RhsMode::Corrected).unwrap();
                let b = assemble_with(&m, p, &vel, tb.clone(), RhsMode::Plain).unwrap();
                assert_eq!(a.rhs_operator, b.rhs_operator);
            }
        }
    }

    /// Local problem: extended test property against the global Oswald
    /// operator, and orthogonality to low-order polynomials.
    #[test]
    fn local_properties_taylor_hood() {
        let m = perturb(&generate_structured(4).unwrap(), 0.2, 11).unwrap();
        let patches = build_patches(&m);
        for k in 2..=4 {
            let e = MixedElement::TaylorHood(k);
            let vel = e.velocity_space(&m).unwrap();
            let qs = lagrange_space(&m, e.q_order(), false).unwrap();
            let rt_g = rt_space(&m, e.rt_order(), &[]).unwrap();
            for (trial, p) in [&patches[0], &patches[6], &patches[12], &patches[20]].into_iter().enumerate() {
                let sys = assemble_patch_system(&m, p, e, &vel).unwrap();
                let w = random(2 * vel.n_dofs(), 100 + trial as u64);
                let sig = solve_patch(&sys, &patch_rhs(&sys, &vel, &w));
                let mut sg = vec![0.0; rt_g.n_dofs()];
                for (a, g) in sys.global_sigma_dofs(&rt_g).into_iter().enumerate() {
                    sg[g] = sig[a];
                }
                for seed in 0..3 {
                    let qt = random(qs.n_dofs(), 7 + seed);
                    let sq = oswald(&m, &qs, &qt).unwrap();
                    // S q̃ as a discontinuous function, then q̃ - S q̃
                    let cs = lagrange_space(&m, e.q_order(), true).unwrap();
                    let mut diff = qt.clone();
                    for c in 0..m.n_cells() {
                        for (j, &d) in qs.cell_dofs(c).iter().enumerate() {
                            diff[d] -= sq[cs.cell_dofs(c)[j]];
                        }
                    }
                    let pb = bubble_project(&m, &qs, p, &diff);
                    let want = div_pairing(&m, &vel, &w, &qs, &pb);
                    let got = rt_div_pairing(&m, &rt_g, &sg, &qs, &qt);
                    assert!((want - got).abs() <= 1e-11 * want.abs().max(1.0), "k={k} {want} {got}");
                }
                // orthogonality to [Π^{k-2}(ω_X)]²
                let sf = DiscreteFunction::new(&sys.local_mesh, &sys.rt, 2, sys.expand_sigma(&sig)).unwrap();
                let qr = triangle_rule(12).unwrap();
                let xv = m.vertices()[p.vertex];
                let mut norm = 0.0;
                let mut worst = 0.0f64;
                for (a, b) in crate::poly::exponents(k - 2) {
                    for comp in 0..2 {
                        let mut ip = 0.0;
                        for c in 0..sys.local_mesh.n_cells() {
                            let geo = sys.local_mesh.geometry(c);
                            let vals = sf.evaluate(c, &qr.points, Quantity::Value);
                            for (i, wq) in qr.weights.iter().enumerate() {
                                let x = geo.map(qr.points[i]);
                                let mono = ((x[0] - xv[0]) / p.h).powi(a as i32) * ((x[1] - xv[1]) / p.h).powi(b as i32);
                                ip += wq * geo.det * vals[i][comp] * mono;
                                if a + b == 0 && comp == 0 {
                                    norm += wq * geo.det * (vals[i][0].powi(2) + vals[i][1].powi(2));
                                }
                            }
                        }
                        worst = worst.max(ip.abs());
                    }
                }
                let wf = DiscreteFunction::new(&m, &vel, 2, w.clone()).unwrap();
                let mut dw = 0.0;
                for &c in &p.cells {
                    let det = m.geometry(c).det;
                    let d = wf.evaluate(c, &qr.points, Quantity::Divergence);
                    dw += (0..qr.len()).map(|i| qr.weights[i] * det * d[i][0].powi(2)).sum::<f64>();
                }
                let scale = norm.sqrt().max(p.h * dw.sqrt()) * p.h;
                assert!(worst <= 1e-11 * scale, "k={k} {worst} {scale}");
            }
        }
    }

    fn theorem_one_i_residual(e: MixedElement, mode: RhsMode) -> f64 {
        let m = perturb(&generate_structured(3).unwrap(), 0.2, 21).unwrap();
        let vel = e.velocity_space(&m).unwrap();
        let map = build_reconstruction_with(&m, &vel, e, mode).unwrap();
        let qs = lagrange_space(&m, e.q_order(), false).unwrap();
        let cs = lagrange_space(&m, e.oswald_order(), true).unwrap();
        let cs_disc = lagrange_space(&m, e.oswald_order(), false).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..4 {
            let w = random(2 * vel.n_dofs(), 40 + seed);
            let qt = random(qs.n_dofs(), 50 + seed);
            let (_, div_r) = map.reconstructed_divergence(&m, &vel, &w).unwrap();
            let lhs: f64 = {
                let qf = DiscreteFunction::new(&m, &qs, 1, div_r).unwrap();
                let tf = DiscreteFunction::new(&m, &qs, 1, qt.clone()).unwrap();
                let qr = triangle_rule(12).unwrap();
                (0..m.n_cells())
                    .map(|c| {
                        let det = m.geometry(c).det;
                        let a = qf.evaluate(c, &qr.points, Quantity::Value);
                        let b = tf.evaluate(c, &qr.points, Quantity::Value);
                        (0..qr.len()).map(|i| qr.weights[i] * det * a[i][0] * b[i][0]).sum::<f64>()
                    })
                    .sum()
            };
            let st = oswald_tilde(&m, &qs, &qt, e.oswald_order()).unwrap();
            let mut st_disc = vec![0.0; cs_disc.n_dofs()];
            for c in 0..m.n_cells() {
                for (j, &d) in cs_disc.cell_dofs(c).iter().enumerate() {
                    st_disc[d] = st[cs.cell_dofs(c)[j]];
                }
            }
            let rhs = div_pairing(&m, &vel, &w, &cs_disc, &st_disc);
            worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
        worst
    }

    #[test]
    fn theorem_one_i_all_elements() {
        for e in [MixedElement::TaylorHood(2), MixedElement::TaylorHood(3), MixedElement::Mini(1)] {
            let r = theorem_one_i_residual(e, RhsMode::Corrected);
            assert!(r <= 1e-11, "{e}: {r}");
        }
    }

    #[test]
    fn uncorrected_mini_breaks_theorem_one_i() {
        let r = theorem_one_i_residual(MixedElement::Mini(1), RhsMode::Plain);
        assert!(r > 1e-6, "{r}");
    }

    #[test]
    fn normal_trace_vanishes_on_domain_boundary() {
        let m = generate_structured(3).unwrap();
        let e = MixedElement::TaylorHood(3);
        let vel = e.velocity_space(&m).unwrap();
        let map = build_reconstruction(&m, &vel, e).unwrap();
        let s = map.sigma(&random(2 * vel.n_dofs(), 9));
        let nedge = e.rt_order() + 1;
        for be in m.boundary_edges() {
            for j in 0..nedge {
                assert!(s[be * nedge + j].abs() < 1e-14);
            }
        }
        assert!(map.sigma(&vec![0.0; 2 * vel.n_dofs()]).iter().all(|&v| v == 0.0));
        assert_eq!(map.diagnostics.len(), m.n_vertices());
        assert!(map.diagnostics.iter().all(|d| d.stability_ratio.is_finite() && d.stability_ratio >= 0.0));
        assert!(map.diagnostics_csv().lines().count() == m.n_vertices() + 1);
    }

    #[test]
    fn oscillation_of_polynomials_vanishes() {
        let m = generate_structured(4).unwrap();
        let patches = build_patches(&m);
        let g = |x: Point| [1.0 + x[0] - 2.0 * x[1], x[0] * x[1]];
        let o2 = data_oscillation(&m, &patches, &g, 2, 8).unwrap();
        assert!(o2 < 1e-11);
        let o0 = data_oscillation(&m, &patches, &g, 0, 8).unwrap();
        assert!(o0 > 1e-3);
    }
}
