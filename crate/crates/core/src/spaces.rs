//! Reference elements, degree-of-freedom maps and evaluation for Lagrange,
//! bubble-enriched (mini) and Raviart–Thomas spaces.

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result};
use crate::mesh::{CellGeometry, Mesh, Point};
use crate::poly::{self, Poly};
use crate::quadrature::{edge_rule, triangle_rule};

pub const MAX_LAGRANGE_ORDER: usize = 6;
pub const MAX_RT_ORDER: usize = 5;

/// Inverse of a small dense matrix given row-major.
pub(crate) fn invert(n: usize, a: &[f64]) -> Mat<f64> {
    let m = Mat::from_fn(n, n, |i, j| a[i * n + j]);
    m.partial_piv_lu().solve(Mat::<f64>::identity(n, n))
}

/// Legendre polynomial of degree `j` shifted to `[0, 1]`.
pub fn legendre01(j: usize, t: f64) -> f64 {
    let s = 2.0 * t - 1.0;
    let (mut p0, mut p1) = (1.0, s);
    if j == 0 {
        return 1.0;
    }
    for n in 2..=j {
        let p2 = ((2 * n - 1) as f64 * s * p1 - (n - 1) as f64 * p0) / n as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Barycentric lattice `(i0, i1, i2)` with `i0 + i1 + i2 = k` of the order-`k`
/// Lagrange nodes: vertices, then nodes of edge 0, 1, 2 (counter-clockwise),
/// then interior nodes.
pub fn lagrange_lattice(k: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(poly::dim(k));
    for i in 0..3 {
        let mut l = [0; 3];
        l[i] = k;
        out.push(l);
    }
    for i in 0..3 {
        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
        for j in 1..k {
            let mut l = [0; 3];
            l[a] = k - j;
            l[b] = j;
            out.push(l);
        }
    }
    for i2 in 1..k {
        for i1 in 1..k - i2 {
            out.push([k - i1 - i2, i1, i2]);
        }
    }
    out
}

pub fn lagrange_nodes(k: usize) -> Vec<Point> {
    lagrange_lattice(k)
        .iter()
        .map(|l| [l[1] as f64 / k as f64, l[2] as f64 / k as f64])
        .collect()
}

/// Values and reference gradients of a scalar basis at a set of points,
/// stored point-major.
#[derive(Debug, Clone)]
pub struct ScalarTab {
    pub n_basis: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl ScalarTab {
    #[inline]
    pub fn value(&self, q: usize, i: usize) -> f64 {
        self.values[q * self.n_basis + i]
    }
    #[inline]
    pub fn grad(&self, q: usize, i: usize) -> [f64; 2] {
        self.grads[q * self.n_basis + i]
    }
}

/// Lagrange element of order `k`, optionally enriched with interior bubbles
/// `27 λ0 λ1 λ2 · Π^{k-1}`.
#[derive(Debug, Clone)]
pub struct ScalarElement {
    pub order: usize,
    pub degree: usize,
    pub nodes: Vec<Point>,
    pub lattice: Vec<[usize; 3]>,
    pub n_bubbles: usize,
    bubbles: Vec<Poly>,
    grad_bubbles: Vec<[Poly; 2]>,
}

impl ScalarElement {
    pub fn lagrange(k: usize) -> Result<Self> {
        check_order("Lagrange", k, 1, MAX_LAGRANGE_ORDER)?;
        Ok(Self::build(k, false))
    }

    pub fn mini(k: usize) -> Result<Self> {
        check_order("mini", k, 1, 3)?;
        Ok(Self::build(k, true))
    }

    fn build(k: usize, bubbles: bool) -> Self {
        let lattice = lagrange_lattice(k);
        let nodes = lagrange_nodes(k);
        let mut bubble_basis = Vec::new();
        let mut degree = k;
        if bubbles {
            let [l0, l1, l2] = Poly::barycentric();
            let b = l0.mul(&l1).mul(&l2).scale(27.0);
            for (a, e) in poly::exponents(k - 1) {
                bubble_basis.push(b.mul(&Poly::monomial(a, e)));
            }
            degree = k + 2;
        }
        let grad_bubbles = bubble_basis.iter().map(|p| [p.dx(), p.dy()]).collect();
        Self {
            order: k,
            degree,
            nodes,
            lattice,
            n_bubbles: bubble_basis.len(),
            bubbles: bubble_basis,
            grad_bubbles,
        }
    }

    /// Value and reference gradient of the Lagrange basis function with
    /// lattice index `l` at barycentric point `lam`, via the product formula
    /// `Π_c Π_{s < l_c} (k λ_c - s) / (s + 1)`.
    fn lagrange_eval(k: usize, l: &[usize; 3], lam: [f64; 3]) -> (f64, [f64; 2]) {
        let kf = k as f64;
        let mut f = [1.0; 3];
        let mut df = [0.0; 3];
        for c in 0..3 {
            for s in 0..l[c] {
                let a = (kf * lam[c] - s as f64) / (s + 1) as f64;
                let da = kf / (s + 1) as f64;
                df[c] = df[c] * a + f[c] * da;
                f[c] *= a;
            }
        }
        let v = f[0] * f[1] * f[2];
        let dl = [df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]];
        (v, [dl[1] - dl[0], dl[2] - dl[0]])
    }

    pub fn n_basis(&self) -> usize {
        self.nodes.len() + self.n_bubbles
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tabulate(&self, pts: &[Point]) -> ScalarTab {
        let nb = self.n_basis();
        let mut values = Vec::with_capacity(pts.len() * nb);
        let mut grads = Vec::with_capacity(pts.len() * nb);
        let mut m = Vec::new();
        let mut md = Vec::new();
        for &p in pts {
            let lam = [1.0 - p[0] - p[1], p[0], p[1]];
            for l in &self.lattice {
                let (v, g) = Self::lagrange_eval(self.order, l, lam);
                values.push(v);
                grads.push(g);
            }
            if self.n_bubbles > 0 {
                poly::monomials_into(self.degree, p, &mut m);
                poly::monomials_into(self.degree - 1, p, &mut md);
                for (b, g) in self.bubbles.iter().zip(&self.grad_bubbles) {
                    values.push(dot(&b.coeffs, &m));
                    grads.push([dot(&g[0].coeffs, &md), dot(&g[1].coeffs, &md)]);
                }
            }
        }
        ScalarTab {
            n_basis: nb,
            values,
            grads,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_order(what: &'static str, k: usize, min: usize, max: usize) -> Result<()> {
    if k < min || k > max {
        return Err(Error::OrderOutOfRange {
            what,
            order: k,
            min,
            max,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RtTab {
    pub n_basis: usize,
    pub values: Vec<[f64; 2]>,
    pub div: Vec<f64>,
}

impl RtTab {
    #[inline]
    pub fn value(&self, q: usize, i: usize) -> [f64; 2] {
        self.values[q * self.n_basis + i]
    }
    #[inline]
    pub fn div(&self, q: usize, i: usize) -> f64 {
        self.div[q * self.n_basis + i]
    }
}

/// `L²`-orthonormal basis of `Π^deg` on the reference triangle, in monomials
/// centered at the barycenter (modified Gram–Schmidt, two passes).
pub fn orthonormal_polys(deg: usize) -> Vec<Poly> {
    let tr = triangle_rule(2 * deg).expect("degree in range");
    let c = [1.0 / 3.0, 1.0 / 3.0];
    let ip = |a: &Poly, b: &Poly| {
        tr.integrate(|p| {
            let x = [p[0] - c[0], p[1] - c[1]];
            a.eval(x) * b.eval(x)
        })
    };
    let mut out: Vec<Poly> = Vec::new();
    for (a, b) in poly::exponents(deg) {
        let mut v = Poly::monomial(a, b).raise(deg);
        for _ in 0..2 {
            for q in &out {
                let r = ip(&v, q);
                v = v.add(&q.scale(-r));
            }
        }
        let nrm = ip(&v, &v).sqrt();
        out.push(v.scale(1.0 / nrm));
    }
    out
}

/// Raviart–Thomas element `RT_m = [Π^m]^2 + x Π̃^m` on the reference triangle.
///
/// Degrees of freedom: on each edge `i` (opposite vertex `i`, traversed
/// counter-clockwise) the moments `∫ σ·n L_j ds` against shifted Legendre
/// polynomials `L_j`, `j = 0..=m`; then interior moments `∫ σ_c p` against
/// [`orthonormal_polys`] of degree below `m`, component-major.
///
/// Polynomials are stored in monomials of `x - c`, `c` the barycenter, which
/// keeps the coefficient matrices well conditioned up to `m = 5`.
#[derive(Debug, Clone)]
pub struct RtElement {
    pub order: usize,
    basis: Vec<[Poly; 2]>,
    div_basis: Vec<Poly>,
}

impl RtElement {
    pub fn new(m: usize) -> Result<Self> {
        check_order("Raviart-Thomas", m, 0, MAX_RT_ORDER)?;
        let span = Self::span(m);
        let n = span.len();
        debug_assert_eq!(n, (m + 1) * (m + 3));
        let mut dm = vec![0.0; n * n];
        for (l, s) in span.iter().enumerate() {
            let d = Self::reference_dofs(m, m + 1, |p| {
                let c = Self::centered(p);
                [s[0].eval(c), s[1].eval(c)]
            });
            for (j, v) in d.into_iter().enumerate() {
                dm[j * n + l] = v;
            }
        }
        // basis_i = Σ_l C[l][i] s_l with D C = I
        let c = invert(n, &dm);
        let basis: Vec<[Poly; 2]> = (0..n)
            .map(|i| {
                let mut b = [Poly::zero(m + 1), Poly::zero(m + 1)];
                for (l, s) in span.iter().enumerate() {
                    let w = c[(l, i)];
                    if w != 0.0 {
                        for comp in 0..2 {
                            b[comp] = b[comp].add(&s[comp].scale(w));
                        }
                    }
                }
                b
            })
            .collect();
        let div_basis = basis.iter().map(|b| b[0].dx().add(&b[1].dy())).collect();
        Ok(Self {
            order: m,
            basis,
            div_basis,
        })
    }

    const CENTER: Point = [1.0 / 3.0, 1.0 / 3.0];

    #[inline]
    fn centered(p: Point) -> Point {
        [p[0] - Self::CENTER[0], p[1] - Self::CENTER[1]]
    }

    fn span(m: usize) -> Vec<[Poly; 2]> {
        let mut out = Vec::new();
        for (a, b) in poly::exponents(m) {
            out.push([Poly::monomial(a, b).raise(m + 1), Poly::zero(m + 1)]);
        }
        for (a, b) in poly::exponents(m) {
            out.push([Poly::zero(m + 1), Poly::monomial(a, b).raise(m + 1)]);
        }
        for b in 0..=m {
            let a = m - b;
            out.push([Poly::monomial(a + 1, b), Poly::monomial(a, b + 1)]);
        }
        out
    }

    pub fn n_basis(&self) -> usize {
        self.basis.len()
    }

    pub fn n_edge_dofs(&self) -> usize {
        self.order + 1
    }

    pub fn n_interior_dofs(&self) -> usize {
        self.order * (self.order + 1)
    }

    /// Reference degrees of freedom of a vector field on the reference triangle.
    pub fn reference_dofs(m: usize, degree: usize, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        let verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let er = edge_rule(degree + m);
        let mut out = Vec::with_capacity((m + 1) * (m + 3));
        for i in 0..3 {
            let (a, b) = (verts[(i + 1) % 3], verts[(i + 2) % 3]);
            let t = [b[0] - a[0], b[1] - a[1]];
            let n = [t[1], -t[0]];
            for j in 0..=m {
                let mut s = 0.0;
                for (p, w) in er.points.iter().zip(&er.weights) {
                    let x = [a[0] + p[0] * t[0], a[1] + p[0] * t[1]];
                    let v = f(x);
                    s += w * (v[0] * n[0] + v[1] * n[1]) * legendre01(j, p[0]);
                }
                out.push(s);
            }
        }
        if m > 0 {
            let moments = orthonormal_polys(m - 1);
            let tr = triangle_rule((degree + m).min(crate::quadrature::MAX_DEGREE)).expect("degree in range");
            for c in 0..2 {
                for q in &moments {
                    out.push(tr.integrate(|p| f(p)[c] * q.eval(Self::centered(p))));
                }
            }
        }
        out
    }

    pub fn tabulate(&self, pts: &[Point]) -> RtTab {
        let nb = self.n_basis();
        let deg = self.order + 1;
        let mut values = Vec::with_capacity(pts.len() * nb);
        let mut div = Vec::with_capacity(pts.len() * nb);
        let mut m = Vec::new();
        let mut md = Vec::new();
        for &p in pts {
            let p = Self::centered(p);
            poly::monomials_into(deg, p, &mut m);
            poly::monomials_into(self.order, p, &mut md);
            for (b, d) in self.basis.iter().zip(&self.div_basis) {
                values.push([dot(&b[0].coeffs, &m), dot(&b[1].coeffs, &m)]);
                div.push(dot(&d.coeffs, &md));
            }
        }
        RtTab {
            n_basis: nb,
            values,
            div,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    LagrangeContinuous,
    LagrangeDiscontinuous,
    MiniVelocity,
    RaviartThomas,
}

#[derive(Debug, Clone)]
pub enum Element {
    Scalar(ScalarElement),
    Rt(RtElement),
}

/// A finite element space on a mesh: reference element plus cell-to-global map.
#[derive(Debug, Clone)]
pub struct FeSpace {
    pub kind: SpaceKind,
    pub order: usize,
    pub element: Element,
    n_local: usize,
    dofs: Vec<usize>,
    signs: Vec<f64>,
    n_dofs: usize,
    boundary: Vec<bool>,
    free_index: Vec<Option<usize>>,
    n_free: usize,
}

impl FeSpace {
    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }
    pub fn n_local(&self) -> usize {
        self.n_local
    }
    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        &self.dofs[c * self.n_local..(c + 1) * self.n_local]
    }
    /// Orientation factors of the local basis (all one except Raviart–Thomas edge moments).
    pub fn cell_signs(&self, c: usize) -> &[f64] {
        &self.signs[c * self.n_local..(c + 1) * self.n_local]
    }
    pub fn is_boundary_dof(&self, d: usize) -> bool {
        self.boundary[d]
    }
    pub fn boundary_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs).filter(|&d| self.boundary[d]).collect()
    }
    /// Index among unconstrained dofs, `None` for dofs removed by a zero normal trace.
    pub fn free_index(&self, d: usize) -> Option<usize> {
        self.free_index[d]
    }
    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn scalar(&self) -> &ScalarElement {
        match &self.element {
            Element::Scalar(e) => e,
            Element::Rt(_) => panic!("Raviart-Thomas space has no scalar element"),
        }
    }

    pub fn rt(&self) -> &RtElement {
        match &self.element {
            Element::Rt(e) => e,
            Element::Scalar(_) => panic!("scalar space has no Raviart-Thomas element"),
        }
    }

    /// Highest polynomial degree of the local basis.
    pub fn degree(&self) -> usize {
        match &self.element {
            Element::Scalar(e) => e.degree,
            Element::Rt(e) => e.order + 1,
        }
    }

    fn finish(
        kind: SpaceKind,
        order: usize,
        element: Element,
        n_local: usize,
        dofs: Vec<usize>,
        signs: Vec<f64>,
        n_dofs: usize,
        boundary: Vec<bool>,
        removed: &[bool],
    ) -> Self {
        let mut free_index = vec![None; n_dofs];
        let mut n_free = 0;
        for (d, fi) in free_index.iter_mut().enumerate() {
            if !removed[d] {
                *fi = Some(n_free);
                n_free += 1;
            }
        }
        Self {
            kind,
            order,
            element,
            n_local,
            dofs,
            signs,
            n_dofs,
            boundary,
            free_index,
            n_free,
        }
    }
}

fn continuous_numbering(mesh: &Mesh, el: &ScalarElement) -> (Vec<usize>, usize, Vec<bool>) {
    let k = el.order;
    let nv = mesh.n_vertices();
    let ne = mesh.n_edges();
    let n_int = el.n_nodes() - 3 - 3 * (k - 1);
    let nb = el.n_bubbles;
    let n_local = el.n_basis();
    let n_lag = nv + ne * (k - 1) + mesh.n_cells() * n_int;
    let n_dofs = n_lag + mesh.n_cells() * nb;
    let mut dofs = Vec::with_capacity(mesh.n_cells() * n_local);
    for c in 0..mesh.n_cells() {
        let cell = mesh.cells()[c];
        let edges = mesh.cell_edges(c);
        let aligned = mesh.cell_edge_aligned(c);
        dofs.extend_from_slice(&cell);
        for i in 0..3 {
            for j in 1..k {
                let off = if aligned[i] { j - 1 } else { k - 1 - j };
                dofs.push(nv + edges[i] * (k - 1) + off);
            }
        }
        for l in 0..n_int {
            dofs.push(nv + ne * (k - 1) + c * n_int + l);
        }
        for b in 0..nb {
            dofs.push(n_lag + c * nb + b);
        }
    }
    let mut boundary = vec![false; n_dofs];
    for v in 0..nv {
        boundary[v] = mesh.is_boundary_vertex(v);
    }
    for e in mesh.boundary_edges() {
        for j in 0..k - 1 {
            boundary[nv + e * (k - 1) + j] = true;
        }
    }
    (dofs, n_dofs, boundary)
}

pub fn lagrange_space(mesh: &Mesh, k: usize, continuous: bool) -> Result<FeSpace> {
    let el = ScalarElement::lagrange(k)?;
    let n_local = el.n_basis();
    if continuous {
        let (dofs, n_dofs, boundary) = continuous_numbering(mesh, &el);
        Ok(FeSpace::finish(
            SpaceKind::LagrangeContinuous,
            k,
            Element::Scalar(el),
            n_local,
            dofs,
            vec![1.0; mesh.n_cells() * n_local],
            n_dofs,
            boundary,
            &vec![false; n_dofs],
        ))
    } else {
        let n_dofs = mesh.n_cells() * n_local;
        Ok(FeSpace::finish(
            SpaceKind::LagrangeDiscontinuous,
            k,
            Element::Scalar(el),
            n_local,
            (0..n_dofs).collect(),
            vec![1.0; n_dofs],
            n_dofs,
            vec![false; n_dofs],
            &vec![false; n_dofs],
        ))
    }
}

/// Continuous order-`k` Lagrange space enriched with cell bubbles of degree `k + 2`.
pub fn mini_space(mesh: &Mesh, k: usize) -> Result<FeSpace> {
    let el = ScalarElement::mini(k)?;
    let n_local = el.n_basis();
    let (dofs, n_dofs, boundary) = continuous_numbering(mesh, &el);
    Ok(FeSpace::finish(
        SpaceKind::MiniVelocity,
        k,
        Element::Scalar(el),
        n_local,
        dofs,
        vec![1.0; mesh.n_cells() * n_local],
        n_dofs,
        boundary,
        &vec![false; n_dofs],
    ))
}

/// `RT_m` on the mesh; dofs of edges flagged in `zero_normal_on` are removed
/// from the free numbering.
pub fn rt_space(mesh: &Mesh, m: usize, zero_normal_on: &[bool]) -> Result<FeSpace> {
    let el = RtElement::new(m)?;
    let ne = mesh.n_edges();
    if zero_normal_on.len() != ne && !zero_normal_on.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "edge flag length {} does not match {} edges",
            zero_normal_on.len(),
            ne
        )));
    }
    let nedge = m + 1;
    let nint = el.n_interior_dofs();
    let n_local = el.n_basis();
    let n_dofs = ne * nedge + mesh.n_cells() * nint;
    let mut dofs = Vec::with_capacity(mesh.n_cells() * n_local);
    let mut signs = Vec::with_capacity(mesh.n_cells() * n_local);
    for c in 0..mesh.n_cells() {
        let edges = mesh.cell_edges(c);
        let aligned = mesh.cell_edge_aligned(c);
        for i in 0..3 {
            for j in 0..nedge {
                dofs.push(edges[i] * nedge + j);
                signs.push(if aligned[i] || j % 2 == 1 { 1.0 } else { -1.0 });
            }
        }
        for l in 0..nint {
            dofs.push(ne * nedge + c * nint + l);
            signs.push(1.0);
        }
    }
    let mut boundary = vec![false; n_dofs];
    let mut removed = vec![false; n_dofs];
    for e in 0..ne {
        for j in 0..nedge {
            boundary[e * nedge + j] = mesh.is_boundary_edge(e);
            removed[e * nedge + j] = zero_normal_on.get(e).copied().unwrap_or(false);
        }
    }
    Ok(FeSpace::finish(
        SpaceKind::RaviartThomas,
        m,
        Element::Rt(el),
        n_local,
        dofs,
        signs,
        n_dofs,
        boundary,
        &removed,
    ))
}

/// Quantity requested from [`DiscreteFunction::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Value,
    Gradient,
    Divergence,
}

/// Coefficients over a space. Scalar spaces may carry several components,
/// stored one after another (`comp * n_dofs + i`).
#[derive(Debug, Clone)]
pub struct DiscreteFunction<'a> {
    pub mesh: &'a Mesh,
    pub space: &'a FeSpace,
    pub components: usize,
    pub coeffs: Vec<f64>,
}

impl<'a> DiscreteFunction<'a> {
    pub fn zeros(mesh: &'a Mesh, space: &'a FeSpace, components: usize) -> Self {
        Self {
            mesh,
            space,
            components,
            coeffs: vec![0.0; components * space.n_dofs()],
        }
    }

    pub fn new(mesh: &'a Mesh, space: &'a FeSpace, components: usize, coeffs: Vec<f64>) -> Result<Self> {
        let want = match space.kind {
            SpaceKind::RaviartThomas => space.n_dofs(),
            _ => components * space.n_dofs(),
        };
        if coeffs.len() != want {
            return Err(Error::InvalidArgument(format!(
                "coefficient length {} does not match {want}",
                coeffs.len()
            )));
        }
        Ok(Self {
            mesh,
            space,
            components,
            coeffs,
        })
    }

    /// Nodal interpolation of a scalar field.
    pub fn interpolate_scalar(mesh: &'a Mesh, space: &'a FeSpace, f: impl Fn(Point) -> f64) -> Self {
        let coeffs = interpolate_components::<1>(mesh, space, |x| [f(x)]);
        Self {
            mesh,
            space,
            components: 1,
            coeffs,
        }
    }

    /// Interpolation of a vector field: componentwise nodal for scalar spaces,
    /// moment-based for Raviart–Thomas.
    pub fn interpolate_vector(mesh: &'a Mesh, space: &'a FeSpace, f: impl Fn(Point) -> [f64; 2]) -> Self {
        if space.kind == SpaceKind::RaviartThomas {
            return Self {
                mesh,
                space,
                components: 2,
                coeffs: interpolate_rt(mesh, space, f),
            };
        }
        let coeffs = interpolate_components::<2>(mesh, space, f);
        Self {
            mesh,
            space,
            components: 2,
            coeffs,
        }
    }

    /// Physical values at reference points of a cell. Each entry holds
    /// `components` numbers for values, `2 * components` for gradients
    /// (row-major `∂_j u_c`), and one number for divergences.
    pub fn evaluate(&self, cell: usize, points: &[Point], what: Quantity) -> Vec<Vec<f64>> {
        let geo = self.mesh.geometry(cell);
        let dofs = self.space.cell_dofs(cell);
        let signs = self.space.cell_signs(cell);
        match &self.space.element {
            Element::Scalar(el) => {
                let tab = el.tabulate(points);
                let n = self.space.n_dofs();
                (0..points.len())
                    .map(|q| {
                        let mut val = vec![0.0; self.components];
                        let mut grad = vec![[0.0; 2]; self.components];
                        for (i, &d) in dofs.iter().enumerate() {
                            let g = geo.grad(tab.grad(q, i));
                            for c in 0..self.components {
                                let u = self.coeffs[c * n + d];
                                val[c] += u * tab.value(q, i);
                                grad[c][0] += u * g[0];
                                grad[c][1] += u * g[1];
                            }
                        }
                        match what {
                            Quantity::Value => val,
                            Quantity::Gradient => grad.iter().flat_map(|g| [g[0], g[1]]).collect(),
                            Quantity::Divergence => {
                                vec![grad[0][0] + if self.components > 1 { grad[1][1] } else { 0.0 }]
                            }
                        }
                    })
                    .collect()
            }
            Element::Rt(el) => {
                let tab = el.tabulate(points);
                (0..points.len())
                    .map(|q| {
                        let mut s = [0.0; 2];
                        let mut d = 0.0;
                        for (i, &g) in dofs.iter().enumerate() {
                            let w = signs[i] * self.coeffs[g];
                            let v = tab.value(q, i);
                            s[0] += w * v[0];
                            s[1] += w * v[1];
                            d += w * tab.div(q, i);
                        }
                        match what {
                            Quantity::Value => geo.piola(s).to_vec(),
                            Quantity::Divergence => vec![d / geo.det],
                            Quantity::Gradient => {
                                panic!("gradients of Raviart-Thomas functions are not provided")
                            }
                        }
                    })
                    .collect()
            }
        }
    }
}

fn interpolate_components<const N: usize>(
    mesh: &Mesh,
    space: &FeSpace,
    f: impl Fn(Point) -> [f64; N],
) -> Vec<f64> {
    let el = space.scalar();
    let n = space.n_dofs();
    let mut coeffs = vec![0.0; N * n];
    for c in 0..mesh.n_cells() {
        let geo = mesh.geometry(c);
        let dofs = space.cell_dofs(c);
        for (i, node) in el.nodes.iter().enumerate() {
            let v = f(geo.map(*node));
            for comp in 0..N {
                coeffs[comp * n + dofs[i]] = v[comp];
            }
        }
    }
    coeffs
}

fn interpolate_rt(mesh: &Mesh, space: &FeSpace, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
    let m = space.order;
    let mut coeffs = vec![0.0; space.n_dofs()];
    for c in 0..mesh.n_cells() {
        let geo = mesh.geometry(c);
        let local = rt_reference_dofs_of(&geo, m, &f);
        for (i, (&d, &s)) in space.cell_dofs(c).iter().zip(space.cell_signs(c)).enumerate() {
            coeffs[d] = s * local[i];
        }
    }
    coeffs
}

/// Reference dofs of the Piola pull-back of `f` on one cell.
pub fn rt_reference_dofs_of(geo: &CellGeometry, m: usize, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
    RtElement::reference_dofs(m, m + 14, |xr| geo.piola_inverse(f(geo.map(xr))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured, perturb};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ref_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| loop {
                let p = [rng.gen::<f64>(), rng.gen::<f64>()];
                if p[0] + p[1] < 1.0 {
                    break p;
                }
            })
            .collect()
    }

    #[test]
    fn lagrange_nodal_and_partition_of_unity() {
        for k in 1..=MAX_LAGRANGE_ORDER {
            let el = ScalarElement::lagrange(k).unwrap();
            assert_eq!(el.n_basis(), poly::dim(k));
            let tab = el.tabulate(&el.nodes);
            for q in 0..el.n_basis() {
                for i in 0..el.n_basis() {
                    let want = if q == i { 1.0 } else { 0.0 };
                    assert!((tab.value(q, i) - want).abs() < 1e-11, "k={k}");
                }
            }
            let pts = random_ref_points(10, k as u64);
            let tab = el.tabulate(&pts);
            for q in 0..pts.len() {
                let s: f64 = (0..el.n_basis()).map(|i| tab.value(q, i)).sum();
                let g: [f64; 2] = (0..el.n_basis()).fold([0.0, 0.0], |a, i| {
                    let gi = tab.grad(q, i);
                    [a[0] + gi[0], a[1] + gi[1]]
                });
                assert!((s - 1.0).abs() < 1e-13);
                assert!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10);
            }
        }
        assert!(ScalarElement::lagrange(0).is_err());
        assert!(ScalarElement::lagrange(7).is_err());
    }

    #[test]
    fn dimension_counts() {
        let m1 = generate_structured(1).unwrap();
        assert_eq!(lagrange_space(&m1, 2, true).unwrap().n_dofs(), 9);
        assert_eq!(lagrange_space(&m1, 1, false).unwrap().n_dofs(), 6);
        assert_eq!(mini_space(&m1, 1).unwrap().n_dofs(), 6);
        assert_eq!(ScalarElement::mini(1).unwrap().n_bubbles, 1);
        assert_eq!(RtElement::new(1).unwrap().n_basis(), 8);
        let mut bnd = vec![false; m1.n_edges()];
        for e in m1.boundary_edges() {
            bnd[e] = true;
        }
        assert_eq!(rt_space(&m1, 0, &bnd).unwrap().n_free(), 1);
        let m = generate_structured(3).unwrap();
        for k in 1..=MAX_LAGRANGE_ORDER {
            let s = lagrange_space(&m, k, true).unwrap();
            let want = m.n_vertices() + (k - 1) * m.n_edges() + (k - 1) * (k.saturating_sub(2)) / 2 * m.n_cells();
            assert_eq!(s.n_dofs(), want);
        }
        for r in 0..=MAX_RT_ORDER {
            assert_eq!(RtElement::new(r).unwrap().n_basis(), (r + 1) * (r + 3));
        }
    }

    #[test]
    fn bubble_vanishes_on_boundary() {
        let el = ScalarElement::mini(1).unwrap();
        let mut pts = Vec::new();
        for i in 0..4 {
            let t = (i as f64 + 0.3) / 4.0;
            pts.extend([[t, 0.0], [0.0, t], [t, 1.0 - t]]);
        }
        let tab = el.tabulate(&pts);
        for q in 0..pts.len() {
            assert!(tab.value(q, 3).abs() < 1e-15);
        }
        let c = el.tabulate(&[[1.0 / 3.0, 1.0 / 3.0]]);
        assert!((c.value(0, 3) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rt_reference_duality() {
        for m in 0..=MAX_RT_ORDER {
            let el = RtElement::new(m).unwrap();
            for i in 0..el.n_basis() {
                let d = RtElement::reference_dofs(m, m + 1, |p| el.tabulate(&[p]).value(0, i));
                for (j, v) in d.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-12, "m={m} i={i} j={j} {v}");
                }
            }
        }
    }

    #[test]
    fn lagrange_reproduces_polynomials() {
        let m = perturb(&generate_structured(3).unwrap(), 0.2, 2).unwrap();
        let s = lagrange_space(&m, 2, true).unwrap();
        let f = DiscreteFunction::interpolate_scalar(&m, &s, |x| x[0] * x[0]);
        let pts = random_ref_points(20, 5);
        for c in [0, 7, 13] {
            let geo = m.geometry(c);
            let vals = f.evaluate(c, &pts, Quantity::Value);
            for (p, v) in pts.iter().zip(&vals) {
                let x = geo.map(*p);
                assert!((v[0] - x[0] * x[0]).abs() < 1e-13);
            }
        }
        let ps = lagrange_space(&m, 1, true).unwrap();
        let p = DiscreteFunction::interpolate_scalar(&m, &ps, |x| x[0].powi(7) + x[1].powi(7) - 0.25);
        let err = (0..m.n_cells())
            .flat_map(|c| {
                let geo = m.geometry(c);
                p.evaluate(c, &pts, Quantity::Value)
                    .into_iter()
                    .zip(pts.iter())
                    .map(move |(v, q)| {
                        let x = geo.map(*q);
                        (v[0] - (x[0].powi(7) + x[1].powi(7) - 0.25)).abs()
                    })
            })
            .fold(0.0, f64::max);
        assert!(err > 0.0);
    }

    #[test]
    fn velocity_interpolation_is_exact_on_polynomials() {
        let m = perturb(&generate_structured(4).unwrap(), 0.25, 9).unwrap();
        for k in 1..=4 {
            let s = lagrange_space(&m, k, true).unwrap();
            let u = |x: Point| [x[0].powi(k as i32) - x[1], (x[0] * x[1]).powi((k / 2) as i32)];
            let f = DiscreteFunction::interpolate_vector(&m, &s, u);
            let pts = random_ref_points(20, k as u64);
            for c in 0..m.n_cells() {
                let geo = m.geometry(c);
                for (p, v) in pts.iter().zip(f.evaluate(c, &pts, Quantity::Value)) {
                    let e = u(geo.map(*p));
                    assert!((v[0] - e[0]).abs() < 1e-12 && (v[1] - e[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rt_constants_and_piola_divergence() {
        let m = perturb(&generate_structured(3).unwrap(), 0.2, 4).unwrap();
        let pts = random_ref_points(6, 1);
        for r in 0..=3 {
            let s = rt_space(&m, r, &[]).unwrap();
            let f = DiscreteFunction::interpolate_vector(&m, &s, |_| [1.0, 0.0]);
            for c in 0..m.n_cells() {
                for v in f.evaluate(c, &pts, Quantity::Value) {
                    assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12, "r={r} {v:?}");
                }
            }
        }
        // σ̂ = (x̂, ŷ) has reference divergence 2
        let el = RtElement::new(0).unwrap();
        let x = [0.2, 0.3];
        let tab = el.tabulate(&[x]);
        let d = RtElement::reference_dofs(0, 1, |p| p);
        let mut div = 0.0;
        for i in 0..3 {
            div += d[i] * tab.div(0, i);
        }
        assert!((div - 2.0).abs() < 1e-13);
        for c in 0..m.n_cells() {
            let geo = m.geometry(c);
            // physical divergence of the Piola image is 2 / det
            assert!(((div / geo.det) - 2.0 / geo.det).abs() < 1e-12 / geo.det);
        }
    }

    #[test]
    fn rt_normal_continuity() {
        let m = perturb(&generate_structured(3).unwrap(), 0.2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 0..=4 {
            let s = rt_space(&m, r, &[]).unwrap();
            let coeffs: Vec<f64> = (0..s.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = DiscreteFunction::new(&m, &s, 2, coeffs).unwrap();
            for e in 0..m.n_edges() {
                let (c0, Some(c1)) = m.edge_cells(e) else { continue };
                let [a, b] = m.edges()[e];
                let (pa, pb) = (m.vertices()[a], m.vertices()[b]);
                let n = [pb[1] - pa[1], pa[0] - pb[0]];
                let mut scale = 0.0f64;
                let mut jump = 0.0f64;
                for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
                    let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                    let v0 = f.evaluate(c0, &[m.geometry(c0).pullback(x)], Quantity::Value)[0].clone();
                    let v1 = f.evaluate(c1, &[m.geometry(c1).pullback(x)], Quantity::Value)[0].clone();
                    let f0 = v0[0] * n[0] + v0[1] * n[1];
                    let f1 = v1[0] * n[0] + v1[1] * n[1];
                    scale = scale.max(f0.abs()).max(v0[0].abs()).max(v0[1].abs());
                    jump = jump.max((f0 - f1).abs());
                }
                assert!(jump <= 1e-12 * scale.max(1.0), "r={r} e={e} jump={jump}");
            }
        }
    }

    #[test]
    fn rt_interpolation_preserves_edge_fluxes() {
        let m = perturb(&generate_structured(3).unwrap(), 0.2, 6).unwrap();
        let s = rt_space(&m, 1, &[]).unwrap();
        // gradient of x^2 y + sin(y)
        let g = |x: Point| [2.0 * x[0] * x[1], x[0] * x[0] + x[1].cos()];
        let f = DiscreteFunction::interpolate_vector(&m, &s, g);
        let er = edge_rule(12);
        for e in 0..m.n_edges() {
            let (c, _) = m.edge_cells(e);
            let [a, b] = m.edges()[e];
            let (pa, pb) = (m.vertices()[a], m.vertices()[b]);
            let n = [pb[1] - pa[1], pa[0] - pb[0]];
            let geo = m.geometry(c);
            let (mut exact, mut got) = (0.0, 0.0);
            for (p, w) in er.points.iter().zip(&er.weights) {
                let x = [pa[0] + p[0] * (pb[0] - pa[0]), pa[1] + p[0] * (pb[1] - pa[1])];
                let ge = g(x);
                exact += w * (ge[0] * n[0] + ge[1] * n[1]);
                let v = &f.evaluate(c, &[geo.pullback(x)], Quantity::Value)[0];
                got += w * (v[0] * n[0] + v[1] * n[1]);
            }
            assert!((exact - got).abs() < 1e-12, "edge {e}: {exact} vs {got}");
        }
    }
}
