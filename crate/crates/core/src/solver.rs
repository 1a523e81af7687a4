//! Direct solution of the discrete Stokes and Navier–Stokes problems.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::Mat;

use crate::analysis::ExactSolution;
use crate::assembly::{
    apply_dirichlet, assemble_convection, assemble_div, assemble_laplace, assemble_load, assemble_mean,
    dirichlet_values, modified_convection, SaddleSystem, TestSide,
};
use crate::element::MixedElement;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::reconstruction::{build_reconstruction, ReconstructionMap};
use crate::sparse::SparseMatrix;
use crate::spaces::FeSpace;

/// Relative residual required of every saddle-point solve.
pub const SOLVE_TOL: f64 = 1e-12;
const MAX_REFINEMENT: usize = 8;

/// LU factorization of the bordered matrix
/// `[[A, Bᵀ, 0], [B, 0, s m], [0, s mᵀ, 0]]`.
pub struct SaddleFactorization {
    matrix: SparseMatrix,
    lu: Lu<usize, f64>,
    nv: usize,
    np: usize,
    mean_scale: f64,
}

impl std::fmt::Debug for SaddleFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaddleFactorization")
            .field("nv", &self.nv)
            .field("np", &self.np)
            .field("nnz", &self.matrix.nnz())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// Relative residual after each refinement step.
    pub residuals: Vec<f64>,
}

impl SaddleSolution {
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `b - K x` with error-free products and compensated sums, so the residual
/// stays accurate when `|K||x|` is much larger than `b`.
fn compensated_residual(k: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..k.nrows())
        .map(|i| {
            let (cols, vals) = k.row(i);
            let (mut s, mut c) = (b[i], 0.0);
            for (&j, &a) in cols.iter().zip(vals) {
                let p = -a * x[j];
                let pe = (-a).mul_add(x[j], -p);
                let t = s + p;
                let z = t - s;
                c += (s - (t - z)) + (p - z) + pe;
                s = t;
            }
            s + c
        })
        .collect()
}

impl SaddleFactorization {
    pub fn new(system: &SaddleSystem) -> Result<Self> {
        let (nv, np) = (system.n_velocity(), system.n_pressure());
        let mmax = system.mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if mmax == 0.0 {
            return Err(Error::InvalidArgument("pressure mean constraint is zero".into()));
        }
        let scale = system.a.max_abs().max(system.b.max_abs()).max(f64::MIN_POSITIVE);
        let mean_scale = scale / mmax;
        let n = nv + np + 1;
        let mut t = Vec::with_capacity(system.a.nnz() + 2 * system.b.nnz() + 2 * np);
        t.extend(system.a.iter());
        for (i, j, v) in system.b.iter() {
            t.push((nv + i, j, v));
            t.push((j, nv + i, v));
        }
        for (i, &m) in system.mean.iter().enumerate() {
            t.push((nv + i, n - 1, mean_scale * m));
            t.push((n - 1, nv + i, mean_scale * m));
        }
        let matrix = SparseMatrix::from_triplets(n, n, t);
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        log::debug!("saddle factorization: {n} unknowns, {} nonzeros", matrix.nnz());
        Ok(Self {
            matrix,
            lu,
            nv,
            np,
            mean_scale,
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    fn lu_solve(&self, r: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(r.len(), 1, |i, _| r[i]);
        let x = self.lu.solve(&rhs);
        (0..r.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves with iterative refinement until the relative residual is at
    /// most `tol`.
    pub fn solve_with(&self, load: &[f64], pressure_load: &[f64], tol: f64) -> Result<SaddleSolution> {
        assert_eq!((load.len(), pressure_load.len()), (self.nv, self.np));
        let mut rhs = Vec::with_capacity(self.nv + self.np + 1);
        rhs.extend_from_slice(load);
        rhs.extend_from_slice(pressure_load);
        rhs.push(0.0);
        let bn = norm(&rhs);
        if bn == 0.0 {
            return Ok(SaddleSolution {
                u: vec![0.0; self.nv],
                p: vec![0.0; self.np],
                residuals: vec![0.0],
            });
        }
        let mut x = self.lu_solve(&rhs);
        let mut history = Vec::new();
        loop {
            let r = compensated_residual(&self.matrix, &x, &rhs);
            let rel = norm(&r) / bn;
            history.push(rel);
            if rel <= tol {
                break;
            }
            if history.len() > MAX_REFINEMENT || !rel.is_finite() {
                return Err(Error::SolveResidual { history });
            }
            let d = self.lu_solve(&r);
            x.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        let multiplier = x[self.nv + self.np] * self.mean_scale;
        log::trace!("mean multiplier {multiplier:.3e}, residuals {history:?}");
        Ok(SaddleSolution {
            u: x[..self.nv].to_vec(),
            p: x[self.nv..self.nv + self.np].to_vec(),
            residuals: history,
        })
    }

    pub fn solve(&self, system: &SaddleSystem) -> Result<SaddleSolution> {
        self.solve_with(&system.load, &system.pressure_load, SOLVE_TOL)
    }
}

/// Factorizes and solves a (condensed) saddle-point system.
pub fn solve_saddle(system: &SaddleSystem) -> Result<SaddleSolution> {
    SaddleFactorization::new(system)?.solve(system)
}

/// Spaces and ν-independent operators of one discretization.
#[derive(Debug)]
pub struct StokesDiscretization<'m> {
    pub mesh: &'m Mesh,
    pub element: MixedElement,
    pub velocity: FeSpace,
    pub pressure: FeSpace,
    /// `(∇u, ∇v)` without viscosity.
    pub laplace: SparseMatrix,
    /// `+∫ q div v`.
    pub div: SparseMatrix,
    pub mean: Vec<f64>,
    pub reconstruction: Option<ReconstructionMap>,
    pub quad_degree: usize,
}

/// Post-solve checks of a Stokes or Navier–Stokes solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    pub residual: f64,
    pub refinement_steps: usize,
    /// `max_j |b(u_h, q_j)| / ‖∇u_h‖`.
    pub discrete_divergence: f64,
    /// `max |div R_h u_h| / max |div u_h|` at the nodes of the multiplier
    /// space; `None` without reconstruction.
    pub reconstructed_divergence: Option<f64>,
    /// `|∫ p_h|`.
    pub pressure_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StokesSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl<'m> StokesDiscretization<'m> {
    pub fn new(mesh: &'m Mesh, element: MixedElement, reconstruct: bool) -> Result<Self> {
        let element = element.validate()?;
        let velocity = element.velocity_space(mesh)?;
        let pressure = element.pressure_space(mesh)?;
        let laplace = assemble_laplace(mesh, &velocity, 1.0)?;
        let div = assemble_div(mesh, &velocity, &pressure)?;
        let mean = assemble_mean(mesh, &pressure)?;
        let reconstruction = if reconstruct {
            Some(build_reconstruction(mesh, &velocity, element)?)
        } else {
            None
        };
        Ok(Self {
            mesh,
            element,
            velocity,
            pressure,
            laplace,
            div,
            mean,
            reconstruction,
            quad_degree: crate::analysis::error_degree(element.k()),
        })
    }

    pub fn reconstruct(&self) -> bool {
        self.reconstruction.is_some()
    }

    /// `l(v)` or `l(R_h v)` depending on the discretization.
    pub fn load(&self, f: &(dyn Fn(Point) -> [f64; 2] + Sync)) -> Result<Vec<f64>> {
        match &self.reconstruction {
            Some(map) => map.reconstructed_load(self.mesh, &self.velocity, f, self.quad_degree),
            None => assemble_load(self.mesh, &self.velocity, f, self.quad_degree),
        }
    }

    pub fn boundary_values(&self, g: impl Fn(Point) -> [f64; 2]) -> Vec<(usize, f64)> {
        dirichlet_values(self.mesh, &self.velocity, g)
    }

    /// Condensed system with velocity block `a` and the given load.
    pub fn system(&self, a: SparseMatrix, load: Vec<f64>, bc: &[(usize, f64)]) -> SaddleSystem {
        let sys = SaddleSystem::new(a, &self.div, self.mean.clone(), load);
        apply_dirichlet(&sys, bc)
    }

    /// Factorization of the ν = 1 Stokes matrix; reused for every ν.
    pub fn stokes_factorization(&self) -> Result<SaddleFactorization> {
        let bc = self.boundary_values(|_| [0.0, 0.0]);
        let zero = vec![0.0; self.laplace.nrows()];
        SaddleFactorization::new(&self.system(self.laplace.clone(), zero, &bc))
    }

    /// Solves `ν a(u, v) - (p, div v) = load(v)` with `u = g` on the boundary,
    /// by solving the ν = 1 system for `(u, p/ν)`.
    pub fn solve_scaled(
        &self,
        factor: &SaddleFactorization,
        nu: f64,
        load: &[f64],
        g: impl Fn(Point) -> [f64; 2],
    ) -> Result<StokesSolution> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity {nu} must be positive")));
        }
        let bc = self.boundary_values(g);
        let scaled: Vec<f64> = load.iter().map(|v| v / nu).collect();
        let sys = self.system(self.laplace.clone(), scaled, &bc);
        let sol = factor.solve(&sys)?;
        let p: Vec<f64> = sol.p.iter().map(|v| v * nu).collect();
        let diagnostics = self.diagnose(&sol.u, &p, &sol.residuals)?;
        Ok(StokesSolution {
            u: sol.u,
            p,
            diagnostics,
        })
    }

    pub fn solve_stokes(&self, nu: f64, f: &(dyn Fn(Point) -> [f64; 2] + Sync), g: impl Fn(Point) -> [f64; 2]) -> Result<StokesSolution> {
        let factor = self.stokes_factorization()?;
        let load = self.load(f)?;
        self.solve_scaled(&factor, nu, &load, g)
    }

    pub fn diagnose(&self, u: &[f64], p: &[f64], residuals: &[f64]) -> Result<SolveDiagnostics> {
        let au = self.laplace.matvec(u);
        let energy = au.iter().zip(u).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
        let denom = if energy > 0.0 { energy } else { 1.0 };
        let bu = self.div.matvec(u);
        let discrete_divergence = bu.iter().fold(0.0f64, |a, v| a.max(v.abs())) / denom;
        let reconstructed_divergence = match &self.reconstruction {
            Some(map) => Some(map.divergence_defect(self.mesh, &self.velocity, u)?),
            None => None,
        };
        let pressure_mean = p.iter().zip(&self.mean).map(|(a, b)| a * b).sum::<f64>().abs();
        Ok(SolveDiagnostics {
            residual: residuals.last().copied().unwrap_or(0.0),
            refinement_steps: residuals.len().saturating_sub(1),
            discrete_divergence,
            reconstructed_divergence,
            pressure_mean,
        })
    }

    /// `‖∇w‖` through the assembled Laplacian.
    pub fn h1_norm(&self, w: &[f64]) -> f64 {
        let aw = self.laplace.matvec(w);
        aw.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }
}

/// Solves the Stokes problem for the data of `exact` with viscosity `nu`.
pub fn solve_stokes(mesh: &Mesh, element: MixedElement, nu: f64, exact: &ExactSolution, reconstruct: bool) -> Result<StokesSolution> {
    let disc = StokesDiscretization::new(mesh, element, reconstruct)?;
    let f = exact.stokes_forcing(nu);
    disc.solve_stokes(nu, f.as_ref(), |x| (exact.u)(x))
}

/// Picard iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Bound on `‖∇(u_{j+1} - u_j)‖ / max(1, ‖∇u_{j+1}‖)`.
    pub tol: f64,
    pub max_iter: usize,
    pub min_damping: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 50,
            min_damping: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavierStokesSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    /// Relative H¹ increments, one per iteration.
    pub increments: Vec<f64>,
    pub damping: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl<'m> StokesDiscretization<'m> {
    /// Convection matrix linearized at `u`, tested with `v` or `R_h v`.
    pub fn convection(&self, u: &[f64]) -> Result<SparseMatrix> {
        match &self.reconstruction {
            Some(map) => modified_convection(self.mesh, &self.velocity, u, map),
            None => assemble_convection(self.mesh, &self.velocity, u, TestSide::Standard, None),
        }
    }

    /// Picard iteration for `ν a(u, v) + c(u; u, v) - (p, div v) = l(v)`,
    /// started from the Stokes solution. The convection term and the load
    /// use reconstructed test functions when the discretization has them.
    pub fn solve_navier_stokes(
        &self,
        nu: f64,
        f: &(dyn Fn(Point) -> [f64; 2] + Sync),
        g: impl Fn(Point) -> [f64; 2],
        opts: PicardOptions,
    ) -> Result<NavierStokesSolution> {
        let load = self.load(f)?;
        let bc = self.boundary_values(&g);
        let stokes = self.solve_scaled(&self.stokes_factorization()?, nu, &load, &g)?;
        let viscous = self.laplace.scale(nu);
        let mut u = stokes.u;
        let mut p = stokes.p;
        let mut increments = Vec::new();
        let mut damping = Vec::new();
        let mut theta = 1.0f64;
        let mut last = f64::INFINITY;
        for it in 1..=opts.max_iter {
            let a = viscous.add(1.0, &self.convection(&u)?, 1.0);
            let sys = self.system(a, load.clone(), &bc);
            let sol = solve_saddle(&sys)?;
            let delta: Vec<f64> = sol.u.iter().zip(&u).map(|(a, b)| a - b).collect();
            let dn = self.h1_norm(&delta);
            if dn > last && theta > opts.min_damping {
                theta = (theta * 0.5).max(opts.min_damping);
            }
            last = dn;
            for (ui, di) in u.iter_mut().zip(&delta) {
                *ui += theta * di;
            }
            for (pi, si) in p.iter_mut().zip(&sol.p) {
                *pi += theta * (si - *pi);
            }
            let rel = theta * dn / self.h1_norm(&u).max(1.0);
            increments.push(rel);
            damping.push(theta);
            log::debug!("picard {it}: increment {rel:.3e}, damping {theta}");
            if rel <= opts.tol {
                let diagnostics = self.diagnose(&u, &p, &sol.residuals)?;
                return Ok(NavierStokesSolution {
                    u,
                    p,
                    iterations: it,
                    increments,
                    damping,
                    diagnostics,
                });
            }
            if !rel.is_finite() {
                break;
            }
        }
        Err(Error::NonlinearDivergence {
            iterations: increments.len(),
            history: increments,
        })
    }
}

/// Steady Navier–Stokes solve for the data of `exact`.
pub fn solve_navier_stokes(
    mesh: &Mesh,
    element: MixedElement,
    nu: f64,
    exact: &ExactSolution,
    reconstruct: bool,
    opts: PicardOptions,
) -> Result<NavierStokesSolution> {
    let disc = StokesDiscretization::new(mesh, element, reconstruct)?;
    let f = exact.navier_stokes_forcing(nu);
    disc.solve_navier_stokes(nu, f.as_ref(), |x| (exact.u)(x), opts)
}
