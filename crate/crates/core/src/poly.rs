//! Bivariate polynomials in the monomial basis, ordered by total degree and
//! then by the power of `y`: `1, x, y, x^2, xy, y^2, ...`.

pub fn dim(deg: usize) -> usize {
    (deg + 1) * (deg + 2) / 2
}

/// Position of `x^a y^b` in the monomial ordering.
#[inline]
pub fn index(a: usize, b: usize) -> usize {
    let t = a + b;
    t * (t + 1) / 2 + b
}

/// Exponent pairs `(a, b)` of all monomials of total degree at most `deg`.
pub fn exponents(deg: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim(deg));
    for t in 0..=deg {
        for b in 0..=t {
            out.push((t - b, b));
        }
    }
    out
}

/// Values of all monomials of degree at most `deg` at `p`.
pub fn monomials(deg: usize, p: [f64; 2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim(deg));
    monomials_into(deg, p, &mut out);
    out
}

pub fn monomials_into(deg: usize, p: [f64; 2], out: &mut Vec<f64>) {
    out.clear();
    let mut xp = vec![1.0; deg + 1];
    let mut yp = vec![1.0; deg + 1];
    for i in 1..=deg {
        xp[i] = xp[i - 1] * p[0];
        yp[i] = yp[i - 1] * p[1];
    }
    for t in 0..=deg {
        for b in 0..=t {
            out.push(xp[t - b] * yp[b]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub deg: usize,
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn zero(deg: usize) -> Self {
        Self {
            deg,
            coeffs: vec![0.0; dim(deg)],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self { deg: 0, coeffs: vec![c] }
    }

    pub fn monomial(a: usize, b: usize) -> Self {
        let mut p = Self::zero(a + b);
        p.coeffs[index(a, b)] = 1.0;
        p
    }

    /// `c0 + cx x + cy y`.
    pub fn affine(c0: f64, cx: f64, cy: f64) -> Self {
        Self {
            deg: 1,
            coeffs: vec![c0, cx, cy],
        }
    }

    /// Barycentric coordinates of the reference triangle as polynomials.
    pub fn barycentric() -> [Poly; 3] {
        [
            Poly::affine(1.0, -1.0, -1.0),
            Poly::affine(0.0, 1.0, 0.0),
            Poly::affine(0.0, 0.0, 1.0),
        ]
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let m = monomials(self.deg, p);
        self.coeffs.iter().zip(&m).map(|(c, v)| c * v).sum()
    }

    pub fn raise(&self, deg: usize) -> Self {
        assert!(deg >= self.deg);
        let mut c = self.coeffs.clone();
        c.resize(dim(deg), 0.0);
        Self { deg, coeffs: c }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let d = self.deg.max(other.deg);
        let mut r = self.raise(d);
        for (i, c) in other.coeffs.iter().enumerate() {
            r.coeffs[i] += c;
        }
        r
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly {
            deg: self.deg,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut r = Poly::zero(self.deg + other.deg);
        let ea = exponents(self.deg);
        let eb = exponents(other.deg);
        for (i, &(a1, b1)) in ea.iter().enumerate() {
            if self.coeffs[i] == 0.0 {
                continue;
            }
            for (j, &(a2, b2)) in eb.iter().enumerate() {
                r.coeffs[index(a1 + a2, b1 + b2)] += self.coeffs[i] * other.coeffs[j];
            }
        }
        r
    }

    pub fn dx(&self) -> Poly {
        let d = self.deg.saturating_sub(1);
        let mut r = Poly::zero(d);
        for (i, &(a, b)) in exponents(self.deg).iter().enumerate() {
            if a > 0 {
                r.coeffs[index(a - 1, b)] += a as f64 * self.coeffs[i];
            }
        }
        r
    }

    pub fn dy(&self) -> Poly {
        let d = self.deg.saturating_sub(1);
        let mut r = Poly::zero(d);
        for (i, &(a, b)) in exponents(self.deg).iter().enumerate() {
            if b > 0 {
                r.coeffs[index(a, b - 1)] += b as f64 * self.coeffs[i];
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering() {
        assert_eq!(exponents(2), vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
        for (i, &(a, b)) in exponents(5).iter().enumerate() {
            assert_eq!(index(a, b), i);
        }
    }

    #[test]
    fn algebra() {
        let [l0, l1, l2] = Poly::barycentric();
        let b = l0.mul(&l1).mul(&l2).scale(27.0);
        assert!((b.eval([1.0 / 3.0, 1.0 / 3.0]) - 1.0).abs() < 1e-14);
        let s = l0.add(&l1).add(&l2);
        assert!((s.eval([0.3, 0.1]) - 1.0).abs() < 1e-15);
        let p = Poly::monomial(3, 2);
        let q = p.dx();
        assert!((q.eval([2.0, 3.0]) - 3.0 * 4.0 * 9.0).abs() < 1e-12);
        assert!((p.dy().eval([2.0, 3.0]) - 2.0 * 8.0 * 3.0).abs() < 1e-12);
        assert_eq!(Poly::constant(2.0).dx().eval([1.0, 1.0]), 0.0);
    }
}
