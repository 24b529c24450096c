//! Problem carrier for linear objective, linear rows, second-order cones and
//! variable bounds, with an optional binary mask.

use serde::{Deserialize, Serialize};

use crate::ConicError;

/// Sparse affine expression `Σ coef·x[idx] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: Vec<(usize, f64)>) -> Self {
        Self { terms, constant: 0.0 }
    }

    pub fn var(idx: usize) -> Self {
        Self::from_terms(vec![(idx, 1.0)])
    }

    pub fn add(mut self, idx: usize, coef: f64) -> Self {
        self.terms.push((idx, coef));
        self
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }
}

/// Linear row `Σ coef·x[idx]` compared against `rhs`. Used for both `= rhs`
/// and `≥ rhs` rows; the container decides which.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { terms, rhs }
    }

    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

/// `‖tail(x)‖₂ ≤ head(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocConstraint {
    pub head: LinExpr,
    pub tail: Vec<LinExpr>,
}

impl SocConstraint {
    /// `head − ‖tail‖`; non-negative when satisfied.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let norm = self.tail.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        self.head.eval(x) - norm
    }
}

/// Minimize `objective·x + objective_constant` subject to equality rows,
/// `≥` rows, cones and bounds. Variables flagged in `binary` must take 0/1
/// values; `sos1` lists groups of binaries known to sum to one, which the
/// branch-and-bound layer uses for partition branching.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub equalities: Vec<Row>,
    pub inequalities: Vec<Row>,
    pub cones: Vec<SocConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub binary: Vec<bool>,
    pub sos1: Vec<Vec<usize>>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Appends a continuous variable and returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.binary.push(false);
        self.objective.len() - 1
    }

    pub fn add_binary(&mut self, cost: f64) -> usize {
        let idx = self.add_var(0.0, 1.0, cost);
        self.binary[idx] = true;
        idx
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.equalities.push(Row::new(terms, rhs));
        self.equalities.len() - 1
    }

    pub fn add_ge(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.inequalities.push(Row::new(terms, rhs));
        self.inequalities.len() - 1
    }

    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        let terms = terms.into_iter().map(|(i, c)| (i, -c)).collect();
        self.add_ge(terms, -rhs)
    }

    pub fn add_cone(&mut self, head: LinExpr, tail: Vec<LinExpr>) -> usize {
        self.cones.push(SocConstraint { head, tail });
        self.cones.len() - 1
    }

    pub fn is_continuous(&self) -> bool {
        !self.binary.iter().any(|&b| b)
    }

    pub fn binaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.binary.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Largest absolute coefficient over all rows and cones.
    pub fn max_abs_coefficient(&self) -> f64 {
        let rows = self
            .equalities
            .iter()
            .chain(&self.inequalities)
            .flat_map(|r| r.terms.iter().map(|t| t.1.abs()));
        let cones = self
            .cones
            .iter()
            .flat_map(|c| std::iter::once(&c.head).chain(&c.tail))
            .flat_map(|e| e.terms.iter().map(|t| t.1.abs()));
        rows.chain(cones).fold(0.0, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.objective_constant
    }

    /// Largest violation of any row, cone or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|r| (r.lhs(x) - r.rhs).abs());
        let ineq = self.inequalities.iter().map(|r| (r.rhs - r.lhs(x)).max(0.0));
        let cones = self.cones.iter().map(|c| (-c.margin(x)).max(0.0));
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(0.0));
        eq.chain(ineq).chain(cones).chain(bounds).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.binary.len() != n {
            return Err(ConicError::Dimension(format!(
                "{n} objective entries but {} lower, {} upper, {} binary flags",
                self.lower.len(),
                self.upper.len(),
                self.binary.len()
            )));
        }
        let check = |what: &str, k: usize, terms: &[(usize, f64)]| -> Result<(), ConicError> {
            match terms.iter().find(|t| t.0 >= n || !t.1.is_finite()) {
                Some(t) => Err(ConicError::Dimension(format!(
                    "{what} {k} references variable {} (coef {}) of {n}",
                    t.0, t.1
                ))),
                None => Ok(()),
            }
        };
        for (k, r) in self.equalities.iter().enumerate() {
            check("equality", k, &r.terms)?;
        }
        for (k, r) in self.inequalities.iter().enumerate() {
            check("inequality", k, &r.terms)?;
        }
        for (k, c) in self.cones.iter().enumerate() {
            if c.tail.is_empty() {
                return Err(ConicError::Dimension(format!("cone {k} has an empty tail")));
            }
            for e in std::iter::once(&c.head).chain(&c.tail) {
                check("cone", k, &e.terms)?;
            }
        }
        for group in &self.sos1 {
            if let Some(&i) = group.iter().find(|&&i| i >= n || !self.binary[i]) {
                return Err(ConicError::Dimension(format!(
                    "sos1 group member {i} is not a binary variable"
                )));
            }
        }
        Ok(())
    }
}

/// Row/column/value triplets, the on-disk debugging format for matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseTriplets {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseTriplets {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a Row>, cols: usize) -> (Self, Vec<f64>) {
        let mut entries = Vec::new();
        let mut rhs = Vec::new();
        for (r, row) in rows.into_iter().enumerate() {
            entries.extend(row.terms.iter().map(|&(c, v)| (r, c, v)));
            rhs.push(row.rhs);
        }
        (Self { rows: rhs.len(), cols, entries }, rhs)
    }
}

#[derive(Serialize)]
struct ConeDump {
    head: LinExpr,
    tail: Vec<LinExpr>,
}

#[derive(Serialize)]
struct ProgramDump {
    n_vars: usize,
    objective: Vec<f64>,
    objective_constant: f64,
    eq: SparseTriplets,
    eq_rhs: Vec<f64>,
    ge: SparseTriplets,
    ge_rhs: Vec<f64>,
    cones: Vec<ConeDump>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
    binary: Vec<usize>,
    sos1: Vec<Vec<usize>>,
}

impl ConicProgram {
    /// Sparse-triplet JSON dump for external cross-checking. Infinite bounds
    /// are written as `null`.
    pub fn to_sparse_json(&self) -> serde_json::Value {
        let n = self.num_vars();
        let (eq, eq_rhs) = SparseTriplets::from_rows(&self.equalities, n);
        let (ge, ge_rhs) = SparseTriplets::from_rows(&self.inequalities, n);
        let finite = |v: &f64| v.is_finite().then_some(*v);
        let dump = ProgramDump {
            n_vars: n,
            objective: self.objective.clone(),
            objective_constant: self.objective_constant,
            eq,
            eq_rhs,
            ge,
            ge_rhs,
            cones: self
                .cones
                .iter()
                .map(|c| ConeDump { head: c.head.clone(), tail: c.tail.clone() })
                .collect(),
            lower: self.lower.iter().map(finite).collect(),
            upper: self.upper.iter().map(finite).collect(),
            binary: self.binaries().collect(),
            sos1: self.sos1.clone(),
        };
        serde_json::to_value(dump).expect("program dump is always serializable")
    }
}
