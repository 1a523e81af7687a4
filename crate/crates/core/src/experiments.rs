//! Numerical studies: convergence orders, viscosity sweeps, gradient
//! forcing, the potential-flow Navier–Stokes benchmark, data oscillation
//! rates and the consistency bound of the reconstruction.

use std::sync::Arc;

use crate::analysis::{
    eoc, error_degree, error_h1, error_l2, error_l2_pressure, gradient_forcing, l2_norm, potential_flow, septic_potential,
    ExactSolution, VectorField,
};
use crate::assembly::assemble_rt_load;
use crate::element::MixedElement;
use crate::error::Result;
use crate::mesh::{build_patches, generate_structured, Mesh, Point};
use crate::reconstruction::data_oscillation;
use crate::report::{Cell, Check, Table};
use crate::solver::{PicardOptions, StokesDiscretization};
use crate::spaces::DiscreteFunction;

/// Viscosities `10^-8, ..., 10^3`.
pub fn default_viscosities() -> Vec<f64> {
    (-8..=3).map(|e| 10f64.powi(e)).collect()
}

/// Orders `(H¹ velocity, L² velocity, L² pressure)` predicted for the
/// modified method.
pub fn expected_rates(e: MixedElement) -> (f64, f64, f64) {
    let k = e.k() as f64;
    (k, k + 1.0, k)
}

fn label(reconstruct: bool) -> &'static str {
    if reconstruct {
        "modified"
    } else {
        "classical"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelErrors {
    pub n: usize,
    pub h: f64,
    pub velocity_dofs: usize,
    pub pressure_dofs: usize,
    pub h1: f64,
    pub l2: f64,
    pub pressure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub element: MixedElement,
    pub reconstruct: bool,
    pub nu: f64,
    pub levels: Vec<LevelErrors>,
}

impl ConvergenceStudy {
    fn rates(&self, f: impl Fn(&LevelErrors) -> f64) -> Vec<Option<f64>> {
        eoc(&self.levels.iter().map(|l| (l.h, f(l))).collect::<Vec<_>>())
    }
    pub fn eoc_h1(&self) -> Vec<Option<f64>> {
        self.rates(|l| l.h1)
    }
    pub fn eoc_l2(&self) -> Vec<Option<f64>> {
        self.rates(|l| l.l2)
    }
    pub fn eoc_pressure(&self) -> Vec<Option<f64>> {
        self.rates(|l| l.pressure)
    }

    pub fn final_rates(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        let last = |v: Vec<Option<f64>>| v.last().copied().flatten();
        (last(self.eoc_h1()), last(self.eoc_l2()), last(self.eoc_pressure()))
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            format!("{} {} nu={:e}", self.element, label(self.reconstruct), self.nu),
            &["n", "h", "ndof_u", "ndof_p", "h1_error", "eoc_h1", "l2_error", "eoc_l2", "p_error", "eoc_p"],
        );
        let (r1, r2, rp) = (self.eoc_h1(), self.eoc_l2(), self.eoc_pressure());
        for (i, l) in self.levels.iter().enumerate() {
            let rate = |r: &Vec<Option<f64>>| Cell::Rate(if i == 0 { None } else { r[i - 1] });
            t.rows.push(vec![
                l.n.into(),
                Cell::Error(l.h),
                l.velocity_dofs.into(),
                l.pressure_dofs.into(),
                Cell::Error(l.h1),
                rate(&r1),
                Cell::Error(l.l2),
                rate(&r2),
                Cell::Error(l.pressure),
                rate(&rp),
            ]);
        }
        t
    }

    /// Final-level rates against `(k, k+1, k)` with the given tolerances.
    pub fn checks(&self, velocity_tol: f64, pressure_tol: f64) -> Vec<Check> {
        let (e1, e2, ep) = expected_rates(self.element);
        let (r1, r2, rp) = self.final_rates();
        let name = |q: &str| format!("{} {} final eoc {q} (nu={:e})", self.element, label(self.reconstruct), self.nu);
        vec![
            Check::within(name("H1"), r1.unwrap_or(f64::NAN), e1, velocity_tol),
            Check::within(name("L2"), r2.unwrap_or(f64::NAN), e2, velocity_tol),
            Check::within(name("pressure"), rp.unwrap_or(f64::NAN), ep, pressure_tol),
        ]
    }
}

/// Stokes convergence study on structured meshes with `n` cells per side.
pub fn convergence(ex: &ExactSolution, element: MixedElement, reconstruct: bool, levels: &[usize], nu: f64) -> Result<ConvergenceStudy> {
    let f = ex.stokes_forcing(nu);
    let deg = error_degree(element.k());
    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        let mesh = generate_structured(n)?;
        let d = StokesDiscretization::new(&mesh, element, reconstruct)?;
        let s = d.solve_stokes(nu, f.as_ref(), |x| (ex.u)(x))?;
        let row = LevelErrors {
            n,
            h: mesh.max_diameter(),
            velocity_dofs: 2 * d.velocity.n_dofs(),
            pressure_dofs: d.pressure.n_dofs(),
            h1: error_h1(&mesh, &d.velocity, &s.u, ex, deg)?,
            l2: error_l2(&mesh, &d.velocity, &s.u, ex, deg)?,
            pressure: error_l2_pressure(&mesh, &d.pressure, &s.p, ex, deg)?,
        };
        log::info!("{element} {} n={n}: h1 {:.3e} l2 {:.3e} p {:.3e}", label(reconstruct), row.h1, row.l2, row.pressure);
        out.push(row);
    }
    Ok(ConvergenceStudy {
        element,
        reconstruct,
        nu,
        levels: out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuPoint {
    pub nu: f64,
    pub h1_modified: f64,
    pub h1_classical: f64,
    pub l2_modified: f64,
    pub l2_classical: f64,
    /// `‖u_ν - u_{ν_0}‖ / ‖u_{ν_0}‖` for the modified coefficients, `ν_0` the first viscosity.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuSweep {
    pub element: MixedElement,
    pub n: usize,
    pub points: Vec<NuPoint>,
    /// Pairwise relative differences of the modified coefficient vectors.
    pub pairwise: Vec<Vec<f64>>,
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Both methods for every viscosity on one mesh; one factorization per method.
pub fn nu_sweep(ex: &ExactSolution, element: MixedElement, n: usize, nus: &[f64]) -> Result<NuSweep> {
    let mesh = generate_structured(n)?;
    let deg = error_degree(element.k());
    let modified = StokesDiscretization::new(&mesh, element, true)?;
    let classical = StokesDiscretization::new(&mesh, element, false)?;
    let fm = modified.stokes_factorization()?;
    let fc = classical.stokes_factorization()?;
    let mut sols: Vec<Vec<f64>> = Vec::with_capacity(nus.len());
    let mut points = Vec::with_capacity(nus.len());
    for &nu in nus {
        let f = ex.stokes_forcing(nu);
        let sm = modified.solve_scaled(&fm, nu, &modified.load(f.as_ref())?, |x| (ex.u)(x))?;
        let sc = classical.solve_scaled(&fc, nu, &classical.load(f.as_ref())?, |x| (ex.u)(x))?;
        let p = NuPoint {
            nu,
            h1_modified: error_h1(&mesh, &modified.velocity, &sm.u, ex, deg)?,
            h1_classical: error_h1(&mesh, &classical.velocity, &sc.u, ex, deg)?,
            l2_modified: error_l2(&mesh, &modified.velocity, &sm.u, ex, deg)?,
            l2_classical: error_l2(&mesh, &classical.velocity, &sc.u, ex, deg)?,
            deviation: sols.first().map_or(0.0, |u0| rel_diff(&sm.u, u0)),
        };
        log::info!("n={n} nu={nu:e}: modified {:.3e} classical {:.3e}", p.h1_modified, p.h1_classical);
        points.push(p);
        sols.push(sm.u);
    }
    let pairwise = sols
        .iter()
        .map(|a| sols.iter().map(|b| rel_diff(a, b)).collect())
        .collect();
    Ok(NuSweep {
        element,
        n,
        points,
        pairwise,
    })
}

impl NuSweep {
    /// Largest pairwise coefficient difference among viscosities `>= nu_min`.
    pub fn max_pairwise(&self, nu_min: f64) -> f64 {
        let keep: Vec<usize> = (0..self.points.len()).filter(|&i| self.points[i].nu >= nu_min).collect();
        let mut m = 0.0f64;
        for &i in &keep {
            for &j in &keep {
                m = m.max(self.pairwise[i][j]);
            }
        }
        m
    }

    /// Smallest viscosity down to which all coefficient vectors agree within `tol`.
    pub fn agreement_floor(&self, tol: f64) -> Option<f64> {
        let mut nus: Vec<f64> = self.points.iter().map(|p| p.nu).collect();
        nus.sort_by(f64::total_cmp);
        nus.into_iter().find(|&nu| self.max_pairwise(nu) <= tol)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            format!("{} n={} viscosity sweep", self.element, self.n),
            &["nu", "h1_modified", "h1_classical", "l2_modified", "l2_classical", "coeff_deviation"],
        );
        for p in &self.points {
            t.rows.push(vec![
                Cell::Error(p.nu),
                Cell::Error(p.h1_modified),
                Cell::Error(p.h1_classical),
                Cell::Error(p.l2_modified),
                Cell::Error(p.l2_classical),
                Cell::Error(p.deviation),
            ]);
        }
        t
    }

    /// Viscosity where the classical error first exceeds twice the modified
    /// one, interpolated in log-log scale, scanning from large to small ν.
    pub fn transition(&self) -> Option<f64> {
        let ratio = |p: &NuPoint| p.h1_classical / p.h1_modified;
        let mut pts: Vec<&NuPoint> = self.points.iter().collect();
        pts.sort_by(|a, b| b.nu.total_cmp(&a.nu));
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if ratio(a) < 2.0 && ratio(b) >= 2.0 {
                let t = (2f64.ln() - ratio(a).ln()) / (ratio(b).ln() - ratio(a).ln());
                return Some((a.nu.ln() + t * (b.nu.ln() - a.nu.ln())).exp());
            }
        }
        None
    }

    pub fn checks(&self, coefficient_tol: f64) -> Vec<Check> {
        let tag = format!("{} n={}", self.element, self.n);
        let hm: Vec<f64> = self.points.iter().map(|p| p.h1_modified).collect();
        let (lo, hi) = hm.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        let mut checks = vec![
            Check::at_most(
                format!("{tag} modified coefficients, max pairwise rel. difference"),
                self.max_pairwise(0.0),
                coefficient_tol,
            ),
            Check::at_most(format!("{tag} modified H1 error max/min - 1"), hi / lo - 1.0, 1e-6),
        ];
        let mut small: Vec<&NuPoint> = self.points.iter().filter(|p| p.nu <= 1.0001e-2).collect();
        small.sort_by(|a, b| a.nu.total_cmp(&b.nu));
        let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
        for w in small.windows(2) {
            let r = w[0].h1_classical / w[1].h1_classical;
            rmin = rmin.min(r);
            rmax = rmax.max(r);
        }
        checks.push(Check::between(format!("{tag} classical decade ratio (min), nu <= 1e-2"), rmin, 8.0, 12.0));
        checks.push(Check::between(format!("{tag} classical decade ratio (max), nu <= 1e-2"), rmax, 8.0, 12.0));
        checks.push(Check::between(
            format!("{tag} transition viscosity (classical = 2x modified)"),
            self.transition().unwrap_or(f64::NAN),
            0.1,
            10.0,
        ));
        let worst = self
            .points
            .iter()
            .filter(|p| p.nu >= 1.0)
            .map(|p| p.h1_modified / p.h1_classical)
            .fold(0.0f64, f64::max);
        checks.push(Check::at_most(format!("{tag} modified / classical H1 error, nu >= 1"), worst, 3.0));
        checks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientForcingLevel {
    pub n: usize,
    pub h: f64,
    pub grad_modified: f64,
    pub grad_classical: f64,
    pub forcing_norm: f64,
    pub pressure_error_modified: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientForcingStudy {
    pub element: MixedElement,
    pub nu: f64,
    pub levels: Vec<GradientForcingLevel>,
}

/// `f = ∇(x⁷ + y⁷)` with homogeneous boundary data: the exact velocity is zero.
pub fn gradient_forcing_study(element: MixedElement, levels: &[usize], nu: f64) -> Result<GradientForcingStudy> {
    let ex = gradient_forcing(&septic_potential());
    let f = ex.stokes_forcing(nu);
    let deg = error_degree(element.k());
    let mut out = Vec::new();
    for &n in levels {
        let mesh = generate_structured(n)?;
        let m = StokesDiscretization::new(&mesh, element, true)?;
        let c = StokesDiscretization::new(&mesh, element, false)?;
        let sm = m.solve_stokes(nu, f.as_ref(), |_| [0.0, 0.0])?;
        let sc = c.solve_stokes(nu, f.as_ref(), |_| [0.0, 0.0])?;
        out.push(GradientForcingLevel {
            n,
            h: mesh.max_diameter(),
            grad_modified: m.h1_norm(&sm.u),
            grad_classical: c.h1_norm(&sc.u),
            forcing_norm: l2_norm(&mesh, f.as_ref(), deg)?,
            pressure_error_modified: error_l2_pressure(&mesh, &m.pressure, &sm.p, &ex, deg)?,
        });
    }
    Ok(GradientForcingStudy {
        element,
        nu,
        levels: out,
    })
}

impl GradientForcingStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            format!("{} gradient forcing nu={:e}", self.element, self.nu),
            &["n", "grad_uh_modified", "grad_uh_classical", "f_l2", "p_error_modified", "eoc_p"],
        );
        let rates = eoc(&self.levels.iter().map(|l| (l.h, l.pressure_error_modified)).collect::<Vec<_>>());
        for (i, l) in self.levels.iter().enumerate() {
            t.rows.push(vec![
                l.n.into(),
                Cell::Error(l.grad_modified),
                Cell::Error(l.grad_classical),
                Cell::Error(l.forcing_norm),
                Cell::Error(l.pressure_error_modified),
                Cell::Rate(if i == 0 { None } else { rates[i - 1] }),
            ]);
        }
        t
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = self.no_flow_checks();
        out.extend(self.pressure_check());
        out
    }

    /// Modified velocity vanishes; classical velocity is large.
    pub fn no_flow_checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for l in &self.levels {
            let tag = format!("{} n={}", self.element, l.n);
            out.push(Check::at_most(format!("{tag} modified ‖∇u_h‖ / ‖f‖"), l.grad_modified / l.forcing_norm, 1e-9));
            out.push(Check::at_least(
                format!("{tag} classical ‖∇u_h‖ / (1e-9 ‖f‖)"),
                l.grad_classical / (1e-9 * l.forcing_norm),
                1e4,
            ));
            out.push(Check::at_least(
                format!("{tag} classical / modified ‖∇u_h‖"),
                l.grad_classical / l.grad_modified.max(f64::MIN_POSITIVE),
                1e4,
            ));
        }
        out
    }

    /// The modified pressure approximates `ψ - mean(ψ)` at the best-approximation rate.
    pub fn pressure_check(&self) -> Option<Check> {
        if self.levels.len() >= 2 {
            let rates = eoc(&self.levels.iter().map(|l| (l.h, l.pressure_error_modified)).collect::<Vec<_>>());
            Some(Check::within(
                format!("{} modified pressure eoc", self.element),
                rates.last().copied().flatten().unwrap_or(f64::NAN),
                self.element.pressure_order() as f64 + 1.0,
                0.3,
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavierStokesRow {
    pub element: MixedElement,
    pub n: usize,
    pub cells: usize,
    pub reconstruct: bool,
    pub h1: f64,
    pub h1_relative: f64,
    pub l2: f64,
    pub pressure: f64,
    pub iterations: usize,
}

/// Potential flow `u = ∇χ` with the standard or the modified convection term.
pub fn navier_stokes_study(elements: &[MixedElement], levels: &[usize], nu: f64, opts: PicardOptions) -> Result<Vec<NavierStokesRow>> {
    let ex = potential_flow();
    let f = ex.navier_stokes_forcing(nu);
    let mut rows = Vec::new();
    for &n in levels {
        let mesh = generate_structured(n)?;
        for &e in elements {
            let deg = error_degree(e.k());
            for reconstruct in [true, false] {
                let d = StokesDiscretization::new(&mesh, e, reconstruct)?;
                let s = d.solve_navier_stokes(nu, f.as_ref(), |x| (ex.u)(x), opts)?;
                let h1 = error_h1(&mesh, &d.velocity, &s.u, &ex, deg)?;
                let norm = error_h1(&mesh, &d.velocity, &vec![0.0; s.u.len()], &ex, deg)?;
                rows.push(NavierStokesRow {
                    element: e,
                    n,
                    cells: mesh.n_cells(),
                    reconstruct,
                    h1,
                    h1_relative: h1 / norm,
                    l2: error_l2(&mesh, &d.velocity, &s.u, &ex, deg)?,
                    pressure: error_l2_pressure(&mesh, &d.pressure, &s.p, &ex, deg)?,
                    iterations: s.iterations,
                });
                log::info!("{e} n={n} {}: h1 {h1:.3e}, {} iterations", label(reconstruct), s.iterations);
            }
        }
    }
    Ok(rows)
}

pub fn navier_stokes_table(rows: &[NavierStokesRow], nu: f64) -> Table {
    let mut t = Table::new(
        format!("potential flow nu={nu:e}"),
        &["element", "n", "cells", "convection", "h1_error", "h1_relative", "l2_error", "p_error", "iterations"],
    );
    for r in rows {
        t.rows.push(vec![
            Cell::text(r.element.to_string()),
            r.n.into(),
            r.cells.into(),
            Cell::text(label(r.reconstruct)),
            Cell::Error(r.h1),
            Cell::Error(r.h1_relative),
            Cell::Error(r.l2),
            Cell::Error(r.pressure),
            r.iterations.into(),
        ]);
    }
    t
}

/// Checks of the benchmark for the order-4 Taylor–Hood rows.
pub fn navier_stokes_checks(rows: &[NavierStokesRow], max_iter: usize) -> Vec<Check> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.element == MixedElement::TaylorHood(4)) {
        let tag = format!("{} n={} {}", r.element, r.n, label(r.reconstruct));
        if r.reconstruct {
            out.push(Check::at_most(format!("{tag} relative H1 error"), r.h1_relative, 1e-8));
        } else {
            out.push(Check::at_least(format!("{tag} H1 error"), r.h1, 1e-4));
        }
    }
    let worst = rows.iter().map(|r| r.iterations).max().unwrap_or(0);
    out.push(Check::at_most("Picard iterations (all runs)", worst as f64, max_iter as f64));
    out
}

/// A vector field with known Sobolev regularity `l` (`None` for smooth).
#[derive(Clone)]
pub struct TestField {
    pub name: String,
    pub g: VectorField,
    pub regularity: Option<f64>,
}

impl std::fmt::Debug for TestField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestField")
            .field("name", &self.name)
            .field("regularity", &self.regularity)
            .finish_non_exhaustive()
    }
}

pub fn smooth_field() -> TestField {
    TestField {
        name: "smooth".into(),
        g: Arc::new(|x: Point| [(2.0 * x[0] + x[1]).sin(), (x[0] - 3.0 * x[1]).cos()]),
        regularity: None,
    }
}

/// `(max(s, 0)^{3/2}, s)` with `s = x + 0.3 y - 0.55`: a slanted line of
/// reduced smoothness, in `H^l` for every `l < 2`.
pub fn rough_field() -> TestField {
    TestField {
        name: "rough".into(),
        g: Arc::new(|x: Point| {
            let s = x[0] + 0.3 * x[1] - 0.55;
            [s.max(0.0).powf(1.5), s]
        }),
        regularity: Some(2.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillationStudy {
    pub field: String,
    pub m: usize,
    pub expected: f64,
    pub levels: Vec<(usize, f64, f64)>,
}

impl OscillationStudy {
    pub fn rates(&self) -> Vec<Option<f64>> {
        eoc(&self.levels.iter().map(|l| (l.1, l.2)).collect::<Vec<_>>())
    }
}

/// Data oscillation of `field` for polynomial degree `m` on several meshes.
pub fn oscillation_study(field: &TestField, m: usize, levels: &[usize]) -> Result<OscillationStudy> {
    let expected = match field.regularity {
        Some(l) => (m as f64 + 2.0).min(l + 1.0),
        None => m as f64 + 2.0,
    };
    let deg = if field.regularity.is_some() { 24 } else { 2 * m + 10 };
    let mut out = Vec::new();
    for &n in levels {
        let mesh = generate_structured(n)?;
        let patches = build_patches(&mesh);
        let o = data_oscillation(&mesh, &patches, field.g.as_ref(), m, deg)?;
        out.push((n, mesh.max_diameter(), o));
    }
    Ok(OscillationStudy {
        field: field.name.clone(),
        m,
        expected,
        levels: out,
    })
}

pub fn oscillation_table(studies: &[OscillationStudy]) -> Table {
    let mut t = Table::new("data oscillation", &["field", "m", "n", "oscillation", "eoc", "expected"]);
    for s in studies {
        let r = s.rates();
        for (i, l) in s.levels.iter().enumerate() {
            t.rows.push(vec![
                Cell::text(&s.field),
                s.m.into(),
                l.0.into(),
                Cell::Error(l.2),
                Cell::Rate(if i == 0 { None } else { r[i - 1] }),
                Cell::Rate(Some(s.expected)),
            ]);
        }
    }
    t
}

pub fn oscillation_checks(studies: &[OscillationStudy], tol: f64) -> Vec<Check> {
    studies
        .iter()
        .map(|s| {
            let r = s.rates().last().copied().flatten().unwrap_or(f64::NAN);
            Check::within(format!("{} field, m={}: oscillation eoc", s.field, s.m), r, s.expected, tol)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLevel {
    pub n: usize,
    pub defect: f64,
    pub oscillation: f64,
    pub grad_w: f64,
    pub ratio: f64,
}

/// `|(g, w - R_h w)| / (⌊g⌋_m ‖∇w‖)` with `m` the orthogonality degree of the
/// element, for the interpolant `w` of a smooth non-solenoidal field.
pub fn consistency_study(element: MixedElement, field: &TestField, levels: &[usize]) -> Result<Vec<ConsistencyLevel>> {
    let w_field = |x: Point| {
        [
            (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin(),
            x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1]) * (3.0 * x[0]).exp(),
        ]
    };
    let m = element.orthogonality_degree();
    let deg = error_degree(element.k());
    let mut out = Vec::new();
    for &n in levels {
        let mesh: Mesh = generate_structured(n)?;
        let d = StokesDiscretization::new(&mesh, element, true)?;
        let map = d.reconstruction.as_ref().expect("reconstruction requested");
        let w = DiscreteFunction::interpolate_vector(&mesh, &d.velocity, w_field).coeffs;
        let g_rt = assemble_rt_load(&mesh, &map.rt_space, field.g.as_ref(), deg)?;
        let defect: f64 = g_rt.iter().zip(map.sigma(&w)).map(|(a, b)| a * b).sum::<f64>().abs();
        let oscillation = data_oscillation(&mesh, &build_patches(&mesh), field.g.as_ref(), m, deg)?;
        let grad_w = d.h1_norm(&w);
        out.push(ConsistencyLevel {
            n,
            defect,
            oscillation,
            grad_w,
            ratio: defect / (oscillation * grad_w),
        });
    }
    Ok(out)
}

pub fn consistency_table(element: MixedElement, field: &str, levels: &[ConsistencyLevel]) -> Table {
    let mut t = Table::new(
        format!("{element} consistency, {field} field"),
        &["n", "defect", "oscillation", "grad_w", "ratio"],
    );
    for l in levels {
        t.rows.push(vec![
            l.n.into(),
            Cell::Error(l.defect),
            Cell::Error(l.oscillation),
            Cell::Error(l.grad_w),
            Cell::Error(l.ratio),
        ]);
    }
    t
}

/// Bounded with no growth: every successive ratio grows by at most `factor`.
pub fn consistency_checks(element: MixedElement, field: &str, levels: &[ConsistencyLevel], factor: f64) -> Vec<Check> {
    let growth = levels
        .windows(2)
        .map(|w| w[1].ratio / w[0].ratio)
        .fold(0.0f64, f64::max);
    let finite = levels.iter().all(|l| l.ratio.is_finite());
    vec![
        Check::flag(format!("{element} {field}: consistency ratios finite"), finite, "finite"),
        Check::at_most(format!("{element} {field}: consistency ratio growth per level"), growth, factor),
    ]
}
