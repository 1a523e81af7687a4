//! Tables in CSV, markdown and whitespace-separated `.dat` form, and
//! pass/fail records of numerical checks.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    /// Error magnitudes: six significant digits, scientific.
    Error(f64),
    /// Convergence rates: three decimals; `None` prints as `-`.
    Rate(Option<f64>),
    Real(f64),
    Flag(bool),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn render(&self, missing: &str) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Error(v) => format!("{v:.5e}"),
            Cell::Rate(Some(r)) => format!("{r:.3}"),
            Cell::Rate(None) => missing.to_string(),
            Cell::Real(v) => format!("{v}"),
            Cell::Flag(b) => if *b { "pass" } else { "FAIL" }.to_string(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
    Dat,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Markdown => "md",
            Format::Dat => "dat",
        }
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Markdown),
            "dat" => Ok(Format::Dat),
            _ => Err(Error::InvalidArgument(format!("unknown table format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::RaggedTable {
                row: self.rows.len(),
                got: row.len(),
                expected: self.columns.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    fn check(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.columns.len() {
                return Err(Error::RaggedTable {
                    row: i,
                    got: r.len(),
                    expected: self.columns.len(),
                });
            }
        }
        Ok(())
    }

    pub fn emit(&self, format: Format) -> Result<String> {
        self.check()?;
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
                w.write_record(&self.columns).map_err(io)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(|c| c.render(""))).map_err(io)?;
                }
                let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
                String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
            }
            Format::Markdown => {
                let mut s = String::new();
                if !self.title.is_empty() {
                    let _ = writeln!(s, "### {}\n", self.title);
                }
                let _ = writeln!(s, "| {} |", self.columns.join(" | "));
                let _ = writeln!(s, "|{}", "---|".repeat(self.columns.len()));
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(|c| c.render("-").replace('|', "\\|")).collect();
                    let _ = writeln!(s, "| {} |", cells.join(" | "));
                }
                Ok(s)
            }
            Format::Dat => {
                let mut s = String::new();
                if !self.title.is_empty() {
                    let _ = writeln!(s, "# {}", self.title);
                }
                let _ = writeln!(s, "# {}", self.columns.join(" "));
                for r in &self.rows {
                    let cells: Vec<String> = r
                        .iter()
                        .map(|c| c.render("nan").split_whitespace().collect::<Vec<_>>().join("_"))
                        .collect();
                    let _ = writeln!(s, "{}", cells.join(" "));
                }
                Ok(s)
            }
        }
    }
}

/// A numerical check with its measured value and the criterion it was held to.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub criterion: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            criterion: format!("<= {bound:.1e}"),
            passed: value <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            criterion: format!(">= {bound:.1e}"),
            passed: value >= bound,
        }
    }

    pub fn within(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            criterion: format!("{target} +/- {tol}"),
            passed: (value - target).abs() <= tol,
        }
    }

    pub fn between(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            criterion: format!("in [{lo}, {hi}]"),
            passed: value >= lo && value <= hi,
        }
    }

    pub fn flag(name: impl Into<String>, passed: bool, criterion: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: if passed { 1.0 } else { 0.0 },
            criterion: criterion.into(),
            passed,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

pub fn checks_table(title: &str, checks: &[Check]) -> Table {
    let mut t = Table::new(title, &["check", "value", "criterion", "status"]);
    for c in checks {
        t.rows.push(vec![
            Cell::text(&c.name),
            Cell::Error(c.value),
            Cell::text(&c.criterion),
            Cell::Flag(c.passed),
        ]);
    }
    t
}
