use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

pub type VarId = usize;

/// `sum_j coef_j x_{var_j} + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(id: VarId) -> Self {
        Self { terms: vec![(id, 1.0)], constant: 0.0 }
    }

    pub fn term(id: VarId, coef: f64) -> Self {
        Self { terms: vec![(id, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, id: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((id, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &AffineExpr, scale: f64) -> &mut Self {
        self.constant += scale * other.constant;
        for &(id, c) in &other.terms {
            self.add_term(id, scale * c);
        }
        self
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = AffineExpr::constant(0.0);
        out.add_scaled(self, scale);
        out
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(id, c)| c * x[id]).sum::<f64>()
    }

    /// Merges duplicate variables, drops zero coefficients and sorts by id.
    pub fn compact(&mut self) {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(id, c) in &self.terms {
            *merged.entry(id).or_insert(0.0) += c;
        }
        self.terms = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
    }

    pub fn compacted(mut self) -> Self {
        self.compact();
        self
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|(_, c)| c.is_finite())
    }
}

/// Cone membership of a block of affine rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cone {
    /// Every row equals zero.
    Zero,
    /// Every row is non-negative.
    NonNeg,
    /// `(t, x)` with `||x|| <= t`; at least two rows.
    SecondOrder,
    /// `(x, y, z)` with `y exp(x / y) <= z`, `y > 0`; exactly three rows.
    Exponential,
}

impl Cone {
    pub fn tag(&self) -> &'static str {
        match self {
            Cone::Zero => "zero",
            Cone::NonNeg => "nonneg",
            Cone::SecondOrder => "soc",
            Cone::Exponential => "exp",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "zero" => Some(Cone::Zero),
            "nonneg" => Some(Cone::NonNeg),
            "soc" => Some(Cone::SecondOrder),
            "exp" => Some(Cone::Exponential),
            _ => None,
        }
    }

    /// Distance-like violation of `values` with respect to the cone.
    pub fn violation(&self, values: &[f64]) -> f64 {
        match self {
            Cone::Zero => values.iter().map(|v| v.abs()).fold(0.0, f64::max),
            Cone::NonNeg => values.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max),
            Cone::SecondOrder => {
                let norm = values[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                (norm - values[0]).max(0.0)
            }
            Cone::Exponential => {
                let (x, y, z) = (values[0], values[1], values[2]);
                if y > 0.0 {
                    // compare in log space to avoid overflow: x/y <= ln(z/y)
                    if z <= 0.0 {
                        y * (x / y).exp() - z
                    } else {
                        let lhs = y * (x / y).exp();
                        if lhs.is_finite() {
                            (lhs - z).max(0.0)
                        } else {
                            f64::INFINITY
                        }
                    }
                } else {
                    // closure of the cone at y = 0: x <= 0, z >= 0
                    (-y).max(0.0) + x.max(0.0) + (-z).max(0.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeConstraint {
    pub cone: Cone,
    pub rows: Vec<AffineExpr>,
    pub label: String,
}

impl ConeConstraint {
    pub fn new(cone: Cone, rows: Vec<AffineExpr>, label: impl Into<String>) -> Self {
        Self { cone, rows, label: label.into() }
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.eval(x)).collect()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        self.cone.violation(&self.values(x))
    }
}

/// A structural defect found by [`ConicProgram::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Defect {
    UnknownVariable { block: usize, var: VarId },
    ConeArity { block: usize, cone: Cone, rows: usize },
    NonFinite { location: String },
    EmptyBounds { var: VarId },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::UnknownVariable { block, var } => {
                write!(f, "block {block} references undeclared variable {var}")
            }
            Defect::ConeArity { block, cone, rows } => {
                write!(f, "block {block}: {} cone cannot have {rows} rows", cone.tag())
            }
            Defect::NonFinite { location } => write!(f, "non-finite coefficient in {location}"),
            Defect::EmptyBounds { var } => write!(f, "variable {var} has lower bound above upper bound"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostics {
    pub num_vars: usize,
    pub num_blocks: usize,
    pub num_rows: usize,
    pub blocks_by_cone: BTreeMap<Cone, usize>,
}

/// Linear objective over affine rows in cones, plus simple variable bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConicProgram {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pub objective: AffineExpr,
    pub constraints: Vec<ConeConstraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> VarId {
        self.add_bounded_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_bounded_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.len() - 1
    }

    pub fn set_bounds(&mut self, id: VarId, lower: f64, upper: f64) {
        self.lower[id] = lower;
        self.upper[id] = upper;
    }

    pub fn add_constraint(&mut self, constraint: ConeConstraint) {
        self.constraints.push(constraint);
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.names[id]
    }

    pub fn bounds(&self, id: VarId) -> (f64, f64) {
        (self.lower[id], self.upper[id])
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.iter().map(|c| c.rows.len()).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest cone or bound violation of `x`, evaluated row by row.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.num_vars())
            .map(|i| (self.lower[i] - x[i]).max(0.0).max(x[i] - self.upper[i]))
            .fold(0.0, f64::max);
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(bounds, f64::max)
    }

    pub fn validate(&self) -> Result<Diagnostics> {
        let n = self.num_vars();
        let mut defects = Vec::new();
        if !self.objective.is_finite() {
            defects.push(Defect::NonFinite { location: "objective".into() });
        }
        for &(id, _) in &self.objective.terms {
            if id >= n {
                defects.push(Defect::UnknownVariable { block: usize::MAX, var: id });
            }
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() {
                defects.push(Defect::NonFinite { location: format!("bounds of variable {i}") });
            } else if self.lower[i] > self.upper[i] {
                defects.push(Defect::EmptyBounds { var: i });
            }
        }
        let mut blocks_by_cone = BTreeMap::new();
        for (b, c) in self.constraints.iter().enumerate() {
            let rows = c.rows.len();
            let arity_ok = match c.cone {
                Cone::Zero | Cone::NonNeg => rows >= 1,
                Cone::SecondOrder => rows >= 2,
                Cone::Exponential => rows == 3,
            };
            if !arity_ok {
                defects.push(Defect::ConeArity { block: b, cone: c.cone, rows });
            }
            for (r, row) in c.rows.iter().enumerate() {
                if !row.is_finite() {
                    defects.push(Defect::NonFinite { location: format!("block {b} row {r}") });
                }
                for &(id, _) in &row.terms {
                    if id >= n {
                        defects.push(Defect::UnknownVariable { block: b, var: id });
                    }
                }
            }
            *blocks_by_cone.entry(c.cone).or_insert(0) += 1;
        }
        if defects.is_empty() {
            Ok(Diagnostics {
                num_vars: n,
                num_blocks: self.constraints.len(),
                num_rows: self.num_rows(),
                blocks_by_cone,
            })
        } else {
            Err(Error::InvalidProgram(defects))
        }
    }

    fn fmt_expr(&self, f: &mut fmt::Formatter<'_>, e: &AffineExpr) -> fmt::Result {
        let mut first = true;
        for &(id, c) in &e.terms {
            let name = self.names.get(id).map(String::as_str).unwrap_or("?");
            if first {
                write!(f, "{c} {name}")?;
            } else if c < 0.0 {
                write!(f, " - {} {name}", -c)?;
            } else {
                write!(f, " + {c} {name}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", e.constant)
        } else if e.constant != 0.0 {
            write!(f, " + {}", e.constant)
        } else {
            Ok(())
        }
    }
}

/// Human-readable dump for debugging.
impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "minimize")?;
        write!(f, "  ")?;
        self.fmt_expr(f, &self.objective)?;
        writeln!(f)?;
        writeln!(f, "subject to")?;
        for c in &self.constraints {
            writeln!(f, "  [{}] {} ({} rows)", c.label, c.cone.tag(), c.rows.len())?;
            for row in &c.rows {
                write!(f, "    ")?;
                self.fmt_expr(f, row)?;
                writeln!(f)?;
            }
        }
        let bounded: Vec<_> = (0..self.num_vars())
            .filter(|&i| self.lower[i].is_finite() || self.upper[i].is_finite())
            .collect();
        if !bounded.is_empty() {
            writeln!(f, "bounds")?;
            for i in bounded {
                writeln!(f, "  {} <= {} <= {}", self.lower[i], self.names[i], self.upper[i])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_program_is_valid() {
        let d = ConicProgram::new().validate().unwrap();
        assert_eq!(d.num_rows, 0);
        assert_eq!(d.num_vars, 0);
    }

    #[test]
    fn rejects_one_row_soc() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.add_constraint(ConeConstraint::new(Cone::SecondOrder, vec![AffineExpr::var(x)], "bad"));
        match p.validate() {
            Err(Error::InvalidProgram(d)) => {
                assert_eq!(d, vec![Defect::ConeArity { block: 0, cone: Cone::SecondOrder, rows: 1 }])
            }
            other => panic!("expected arity defect, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_variables_and_nan() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        let mut row = AffineExpr::var(x);
        row.add_term(5, 1.0);
        p.add_constraint(ConeConstraint::new(Cone::NonNeg, vec![row], "r"));
        p.add_constraint(ConeConstraint::new(Cone::Zero, vec![AffineExpr::constant(f64::NAN)], "n"));
        p.add_constraint(ConeConstraint::new(Cone::Exponential, vec![AffineExpr::var(x); 2], "e"));
        let Err(Error::InvalidProgram(d)) = p.validate() else { panic!() };
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn compact_merges_terms() {
        let mut e = AffineExpr::var(3);
        e.add_term(1, 2.0).add_term(3, -1.0).add_term(1, 0.5);
        e.compact();
        assert_eq!(e.terms, vec![(1, 2.5)]);
    }

    #[test]
    fn violations() {
        assert_eq!(Cone::NonNeg.violation(&[1.0, -2.0]), 2.0);
        assert_eq!(Cone::SecondOrder.violation(&[5.0, 3.0, 4.0]), 0.0);
        assert!((Cone::SecondOrder.violation(&[4.0, 3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(Cone::Exponential.violation(&[0.0, 1.0, 1.0]), 0.0);
        assert!(Cone::Exponential.violation(&[1.0, 1.0, 1.0]) > 1.0);
    }

    #[test]
    fn display_mentions_labels() {
        let mut p = ConicProgram::new();
        let x = p.add_bounded_var("x", 0.0, f64::INFINITY);
        p.objective = AffineExpr::term(x, 2.0);
        p.add_constraint(ConeConstraint::new(Cone::NonNeg, vec![AffineExpr::var(x)], "pos"));
        let text = p.to_string();
        assert!(text.contains("[pos] nonneg"));
        assert!(text.contains("0 <= x <= inf"));
    }
}
