//! Inf-sup stable velocity/pressure pairs and the orders of their
//! reconstruction spaces.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::spaces::{lagrange_space, mini_space, FeSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixedElement {
    /// Continuous `P_k` velocity, continuous `P_{k-1}` pressure.
    TaylorHood(usize),
    /// Continuous `P_k` velocity with cell bubbles, continuous `P_k` pressure.
    Mini(usize),
}

impl MixedElement {
    pub fn validate(self) -> Result<Self> {
        let (what, k, min, max) = match self {
            MixedElement::TaylorHood(k) => ("Taylor-Hood order", k, 2, 4),
            MixedElement::Mini(k) => ("mini order", k, 1, 3),
        };
        if k < min || k > max {
            return Err(Error::OrderOutOfRange {
                what,
                order: k,
                min,
                max,
            });
        }
        Ok(self)
    }

    pub fn k(self) -> usize {
        match self {
            MixedElement::TaylorHood(k) | MixedElement::Mini(k) => k,
        }
    }

    pub fn is_mini(self) -> bool {
        matches!(self, MixedElement::Mini(_))
    }

    pub fn velocity_space(self, mesh: &Mesh) -> Result<FeSpace> {
        match self.validate()? {
            MixedElement::TaylorHood(k) => lagrange_space(mesh, k, true),
            MixedElement::Mini(k) => mini_space(mesh, k),
        }
    }

    pub fn pressure_space(self, mesh: &Mesh) -> Result<FeSpace> {
        match self.validate()? {
            MixedElement::TaylorHood(k) => lagrange_space(mesh, k - 1, true),
            MixedElement::Mini(k) => lagrange_space(mesh, k, true),
        }
    }

    pub fn pressure_order(self) -> usize {
        match self {
            MixedElement::TaylorHood(k) => k - 1,
            MixedElement::Mini(k) => k,
        }
    }

    /// Order of the Raviart–Thomas space of the patch problems.
    pub fn rt_order(self) -> usize {
        match self {
            MixedElement::TaylorHood(k) => k - 1,
            MixedElement::Mini(k) => k + 1,
        }
    }

    /// Order of the discontinuous multiplier space (contains all velocity divergences).
    pub fn q_order(self) -> usize {
        self.rt_order()
    }

    /// Order of the continuous target of the Oswald operator.
    pub fn oswald_order(self) -> usize {
        self.pressure_order()
    }

    /// Degree `a` of the Koszul multipliers `κ_{x-V}(Π^a)`, `None` when empty.
    pub fn koszul_degree(self) -> Option<usize> {
        match self {
            MixedElement::TaylorHood(k) => k.checked_sub(3),
            MixedElement::Mini(k) => k.checked_sub(2),
        }
    }

    /// Degree of the polynomials the local corrections are orthogonal to;
    /// also the order of the data oscillation in the consistency estimate.
    pub fn orthogonality_degree(self) -> usize {
        match self {
            MixedElement::TaylorHood(k) => k - 2,
            MixedElement::Mini(k) => k - 1,
        }
    }

    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MixedElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixedElement::TaylorHood(k) => write!(f, "TH{k}"),
            MixedElement::Mini(k) => write!(f, "mini{k}"),
        }
    }
}

impl FromStr for MixedElement {
    type Err = Error;

    /// Accepts `TH2`, `th3`, `taylor-hood4`, `mini`, `mini1`, ...
    fn from_str(s: &str) -> Result<Self> {
        let l = s.trim().to_ascii_lowercase().replace(['_', '-'], "");
        let split = |prefix: &str| l.strip_prefix(prefix).map(|r| r.to_string());
        let parse_k = |r: String, default: Option<usize>| -> Result<usize> {
            if r.is_empty() {
                return default.ok_or_else(|| Error::InvalidArgument(format!("element '{s}' needs an order")));
            }
            r.parse()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse element '{s}'")))
        };
        let e = if let Some(r) = split("taylorhood").or_else(|| split("th")) {
            MixedElement::TaylorHood(parse_k(r, None)?)
        } else if let Some(r) = split("mini") {
            MixedElement::Mini(parse_k(r, Some(1))?)
        } else {
            return Err(Error::InvalidArgument(format!("unknown element '{s}'")));
        };
        e.validate()
    }
}
