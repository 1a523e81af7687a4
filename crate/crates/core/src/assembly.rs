//! Global sparse operators of the Stokes and Navier–Stokes systems.
//!
//! Velocities are stored component-major: dof `i` of component `c` has
//! index `c * n + i`, `n` the number of scalar velocity dofs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::triangle_rule;
use crate::reconstruction::ReconstructionMap;
use crate::spaces::{DiscreteFunction, FeSpace, SpaceKind};

pub use crate::sparse::SparseMatrix;

type Triplets = Vec<(usize, usize, f64)>;

/// Runs `f` on every cell and concatenates the produced triplets.
fn cellwise(mesh: &Mesh, f: impl Fn(usize, &mut Triplets) + Sync) -> Triplets {
    const CHUNK: usize = 256;
    let chunks: Vec<Triplets> = (0..mesh.n_cells().div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut t = Vec::new();
            for c in k * CHUNK..((k + 1) * CHUNK).min(mesh.n_cells()) {
                f(c, &mut t);
            }
            t
        })
        .collect();
    chunks.concat()
}

/// `ν (∇u, ∇v)` for both velocity components.
pub fn assemble_laplace(mesh: &Mesh, vel: &FeSpace, nu: f64) -> Result<SparseMatrix> {
    let el = vel.scalar();
    let qr = triangle_rule(2 * (el.degree - 1))?;
    let tab = el.tabulate(&qr.points);
    let n = vel.n_dofs();
    let nb = el.n_basis();
    let t = cellwise(mesh, |c, out| {
        let geo = mesh.geometry(c);
        let dofs = vel.cell_dofs(c);
        let mut local = vec![0.0; nb * nb];
        for (p, &w) in qr.weights.iter().enumerate() {
            let g: Vec<Point> = (0..nb).map(|i| geo.grad(tab.grad(p, i))).collect();
            for i in 0..nb {
                for j in 0..nb {
                    local[i * nb + j] += w * geo.det * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        for comp in 0..2 {
            for i in 0..nb {
                for j in 0..nb {
                    out.push((comp * n + dofs[i], comp * n + dofs[j], nu * local[i * nb + j]));
                }
            }
        }
    });
    Ok(SparseMatrix::from_triplets(2 * n, 2 * n, t))
}

/// `b(v, q) = ∫ q div v`, one row per pressure dof.
pub fn assemble_div(mesh: &Mesh, vel: &FeSpace, pres: &FeSpace) -> Result<SparseMatrix> {
    let ve = vel.scalar();
    let pe = pres.scalar();
    let qr = triangle_rule(ve.degree - 1 + pe.degree)?;
    let vt = ve.tabulate(&qr.points);
    let pt = pe.tabulate(&qr.points);
    let n = vel.n_dofs();
    let t = cellwise(mesh, |c, out| {
        let geo = mesh.geometry(c);
        let vd = vel.cell_dofs(c);
        let pd = pres.cell_dofs(c);
        let mut local = vec![[0.0; 2]; pd.len() * vd.len()];
        for (p, &w) in qr.weights.iter().enumerate() {
            for (s, _) in vd.iter().enumerate() {
                let g = geo.grad(vt.grad(p, s));
                for (j, _) in pd.iter().enumerate() {
                    let v = w * geo.det * pt.value(p, j);
                    local[j * vd.len() + s][0] += v * g[0];
                    local[j * vd.len() + s][1] += v * g[1];
                }
            }
        }
        for (j, &pj) in pd.iter().enumerate() {
            for (s, &vs) in vd.iter().enumerate() {
                let l = local[j * vd.len() + s];
                out.push((pj, vs, l[0]));
                out.push((pj, n + vs, l[1]));
            }
        }
    });
    Ok(SparseMatrix::from_triplets(pres.n_dofs(), 2 * n, t))
}

/// `∫ q_j` for every dof of a scalar space.
pub fn assemble_mean(mesh: &Mesh, space: &FeSpace) -> Result<Vec<f64>> {
    let el = space.scalar();
    let qr = triangle_rule(el.degree)?;
    let tab = el.tabulate(&qr.points);
    let mut out = vec![0.0; space.n_dofs()];
    for c in 0..mesh.n_cells() {
        let det = mesh.geometry(c).det;
        for (j, &d) in space.cell_dofs(c).iter().enumerate() {
            out[d] += qr.weights.iter().enumerate().map(|(p, w)| w * det * tab.value(p, j)).sum::<f64>();
        }
    }
    Ok(out)
}

/// Mass matrix of a scalar space.
pub fn assemble_mass(mesh: &Mesh, space: &FeSpace) -> Result<SparseMatrix> {
    let el = space.scalar();
    let qr = triangle_rule(2 * el.degree)?;
    let tab = el.tabulate(&qr.points);
    let nb = el.n_basis();
    let t = cellwise(mesh, |c, out| {
        let det = mesh.geometry(c).det;
        let d = space.cell_dofs(c);
        for i in 0..nb {
            for j in 0..nb {
                let v: f64 = (0..qr.len()).map(|p| qr.weights[p] * det * tab.value(p, i) * tab.value(p, j)).sum();
                out.push((d[i], d[j], v));
            }
        }
    });
    Ok(SparseMatrix::from_triplets(space.n_dofs(), space.n_dofs(), t))
}

/// `(f, φ_i e_c)` for all velocity basis functions.
pub fn assemble_load(
    mesh: &Mesh,
    vel: &FeSpace,
    f: &(dyn Fn(Point) -> [f64; 2] + Sync),
    degree: usize,
) -> Result<Vec<f64>> {
    let el = vel.scalar();
    let qr = triangle_rule(degree.max(el.degree))?;
    let tab = el.tabulate(&qr.points);
    let n = vel.n_dofs();
    let t = cellwise(mesh, |c, out| {
        let geo = mesh.geometry(c);
        let fx: Vec<[f64; 2]> = qr.points.iter().map(|p| f(geo.map(*p))).collect();
        for (i, &d) in vel.cell_dofs(c).iter().enumerate() {
            let mut s = [0.0; 2];
            for (p, &w) in qr.weights.iter().enumerate() {
                let v = w * geo.det * tab.value(p, i);
                s[0] += v * fx[p][0];
                s[1] += v * fx[p][1];
            }
            out.push((d, 0, s[0]));
            out.push((n + d, 0, s[1]));
        }
    });
    let mut load = vec![0.0; 2 * n];
    for (i, _, v) in t {
        load[i] += v;
    }
    Ok(load)
}

/// `(f, ψ_j)` for all Raviart–Thomas basis functions.
pub fn assemble_rt_load(
    mesh: &Mesh,
    rt: &FeSpace,
    f: &(dyn Fn(Point) -> [f64; 2] + Sync),
    degree: usize,
) -> Result<Vec<f64>> {
    if rt.kind != SpaceKind::RaviartThomas {
        return Err(Error::InvalidArgument("expected a Raviart-Thomas space".into()));
    }
    let el = rt.rt();
    let qr = triangle_rule(degree.max(el.order + 1))?;
    let tab = el.tabulate(&qr.points);
    let t = cellwise(mesh, |c, out| {
        let geo = mesh.geometry(c);
        let fx: Vec<[f64; 2]> = qr.points.iter().map(|p| f(geo.map(*p))).collect();
        for (i, (&d, &sg)) in rt.cell_dofs(c).iter().zip(rt.cell_signs(c)).enumerate() {
            let mut s = 0.0;
            for (p, &w) in qr.weights.iter().enumerate() {
                let v = geo.piola(tab.value(p, i));
                s += w * geo.det * (v[0] * fx[p][0] + v[1] * fx[p][1]);
            }
            out.push((d, 0, sg * s));
        }
    });
    let mut load = vec![0.0; rt.n_dofs()];
    for (i, _, v) in t {
        load[i] += v;
    }
    Ok(load)
}

/// Test functions of the convection form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSide {
    /// Velocity basis functions; square matrix on velocity dofs.
    Standard,
    /// Global Raviart–Thomas basis; rows are flux dofs.
    Rt,
}

/// Matrix of `((u·∇) v_s, t_i)` for the advecting field `u` (velocity
/// coefficients) and trial velocity basis functions `v_s`.
pub fn assemble_convection(
    mesh: &Mesh,
    vel: &FeSpace,
    u: &[f64],
    side: TestSide,
    rt: Option<&FeSpace>,
) -> Result<SparseMatrix> {
    let el = vel.scalar();
    let n = vel.n_dofs();
    let uf = DiscreteFunction::new(mesh, vel, 2, u.to_vec())?;
    let (test_deg, rows) = match side {
        TestSide::Standard => (el.degree, 2 * n),
        TestSide::Rt => {
            let rt = rt.ok_or_else(|| Error::InvalidArgument("Raviart-Thomas test side needs a flux space".into()))?;
            (rt.degree(), rt.n_dofs())
        }
    };
    let qr = triangle_rule(2 * el.degree - 1 + test_deg)?;
    let tab = el.tabulate(&qr.points);
    let rt_tab = rt.map(|s| s.rt().tabulate(&qr.points));
    let nb = el.n_basis();
    let t = cellwise(mesh, |c, out| {
        let geo = mesh.geometry(c);
        let uv = uf.evaluate(c, &qr.points, crate::spaces::Quantity::Value);
        let vd = vel.cell_dofs(c);
        // a[p][s] = u·∇φ_s
        let adv: Vec<f64> = (0..qr.len())
            .flat_map(|p| {
                let g = &tab;
                let geo = &geo;
                let uv = &uv;
                (0..nb).map(move |s| {
                    let gr = geo.grad(g.grad(p, s));
                    uv[p][0] * gr[0] + uv[p][1] * gr[1]
                })
            })
            .collect();
        match side {
            TestSide::Standard => {
                let mut local = vec![0.0; nb * nb];
                for (p, &w) in qr.weights.iter().enumerate() {
                    for i in 0..nb {
                        let v = w * geo.det * tab.value(p, i);
                        for s in 0..nb {
                            local[i * nb + s] += v * adv[p * nb + s];
                        }
                    }
                }
                for comp in 0..2 {
                    for i in 0..nb {
                        for s in 0..nb {
                            out.push((comp * n + vd[i], comp * n + vd[s], local[i * nb + s]));
                        }
                    }
                }
            }
            TestSide::Rt => {
                let rs = rt.expect("checked above");
                let rtab = rt_tab.as_ref().expect("tabulated with the space");
                let nr = rtab.n_basis;
                let mut local = vec![[0.0; 2]; nr * nb];
                for (p, &w) in qr.weights.iter().enumerate() {
                    for i in 0..nr {
                        let psi = geo.piola(rtab.value(p, i));
                        for s in 0..nb {
                            let a = w * geo.det * adv[p * nb + s];
                            local[i * nb + s][0] += a * psi[0];
                            local[i * nb + s][1] += a * psi[1];
                        }
                    }
                }
                for (i, (&g, &sg)) in rs.cell_dofs(c).iter().zip(rs.cell_signs(c)).enumerate() {
                    for s in 0..nb {
                        let l = local[i * nb + s];
                        out.push((g, vd[s], sg * l[0]));
                        out.push((g, n + vd[s], sg * l[1]));
                    }
                }
            }
        }
    });
    Ok(SparseMatrix::from_triplets(rows, 2 * n, t))
}

/// Convection tested with reconstructed test functions: `N - Rᵀ N_Σ`.
pub fn modified_convection(mesh: &Mesh, vel: &FeSpace, u: &[f64], map: &ReconstructionMap) -> Result<SparseMatrix> {
    let n = assemble_convection(mesh, vel, u, TestSide::Standard, None)?;
    let ns = assemble_convection(mesh, vel, u, TestSide::Rt, Some(&map.rt_space))?;
    let rn = map.transpose.matmul(&ns);
    Ok(n.add(1.0, &rn, -1.0))
}

/// Blocks of the discrete Stokes problem
/// `a(u, v) - (p, div v) = F(v)`, `-(q, div u) = G(q)`, `∫ p = 0`.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    /// Viscous block, `2n × 2n`.
    pub a: SparseMatrix,
    /// Rows `-∫ q_j div v`.
    pub b: SparseMatrix,
    /// `∫ q_j`.
    pub mean: Vec<f64>,
    pub load: Vec<f64>,
    pub pressure_load: Vec<f64>,
    /// Constrained velocity dofs and their values.
    pub dirichlet: Vec<(usize, f64)>,
}

impl SaddleSystem {
    pub fn new(a: SparseMatrix, b_div: &SparseMatrix, mean: Vec<f64>, load: Vec<f64>) -> Self {
        let np = b_div.nrows();
        Self {
            a,
            b: b_div.scale(-1.0),
            mean,
            load,
            pressure_load: vec![0.0; np],
            dirichlet: Vec::new(),
        }
    }

    pub fn n_velocity(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_pressure(&self) -> usize {
        self.b.nrows()
    }
}

/// Boundary velocity dofs with the nodal values of `g`.
pub fn dirichlet_values(mesh: &Mesh, vel: &FeSpace, g: impl Fn(Point) -> [f64; 2]) -> Vec<(usize, f64)> {
    let gi = DiscreteFunction::interpolate_vector(mesh, vel, g);
    let n = vel.n_dofs();
    let bd = vel.boundary_dofs();
    let mut out = Vec::with_capacity(2 * bd.len());
    for comp in 0..2 {
        for &d in &bd {
            out.push((comp * n + d, gi.coeffs[comp * n + d]));
        }
    }
    out
}

/// Eliminates constrained velocity dofs symmetrically: their columns move to
/// the right-hand side, rows and columns become identity.
pub fn apply_dirichlet(system: &SaddleSystem, values: &[(usize, f64)]) -> SaddleSystem {
    let nv = system.n_velocity();
    let mut fixed = vec![None; nv];
    for &(d, v) in values {
        fixed[d] = Some(v);
    }
    let mut load = system.load.clone();
    let mut pload = system.pressure_load.clone();
    let mut a_t = Vec::with_capacity(system.a.nnz());
    for (i, j, v) in system.a.iter() {
        match (fixed[i], fixed[j]) {
            (None, None) => a_t.push((i, j, v)),
            (None, Some(g)) => load[i] -= v * g,
            _ => {}
        }
    }
    let mut b_t = Vec::with_capacity(system.b.nnz());
    for (i, j, v) in system.b.iter() {
        match fixed[j] {
            None => b_t.push((i, j, v)),
            Some(g) => pload[i] -= v * g,
        }
    }
    for (d, f) in fixed.iter().enumerate() {
        if let Some(g) = f {
            a_t.push((d, d, 1.0));
            load[d] = *g;
        }
    }
    let mut dirichlet: Vec<(usize, f64)> = system.dirichlet.clone();
    dirichlet.extend_from_slice(values);
    SaddleSystem {
        a: SparseMatrix::from_triplets(nv, nv, a_t),
        b: SparseMatrix::from_triplets(system.n_pressure(), nv, b_t),
        mean: system.mean.clone(),
        load,
        pressure_load: pload,
        dirichlet,
    }
}
