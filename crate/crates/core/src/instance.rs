//! Test-suite minimization instances: a list of tests plus binary
//! test × statement and test × fault matrices.
//!
//! Instances are stored on disk as a JSON document with explicit dimensions
//! and sparse `[test_index, column_index]` coordinate lists (0-based):
//!
//! ```json
//! {
//!   "num_tests": 3, "num_stmts": 3, "num_faults": 4,
//!   "test_ids": ["t1", "t2", "t3"],
//!   "stmt_edges": [[0, 0], [1, 1], [1, 2], [2, 0], [2, 2]],
//!   "fault_edges": [[0, 3], [1, 0], [1, 1], [1, 2], [2, 0], [2, 1], [2, 2]]
//! }
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Component};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed instance file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid instance: {0}")]
    Validation(Violation),
    #[error("infeasible instance: {kind} column {index} ({label}) is not covered by any test", label = kind.label(*index))]
    ZeroColumn { kind: ColumnKind, index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Statement,
    Fault,
}

impl ColumnKind {
    /// Human label for a column, 1-based: statement 0 is `s1`, fault 3 is `f4`.
    pub fn label(self, index: usize) -> String {
        match self {
            ColumnKind::Statement => format!("s{}", index + 1),
            ColumnKind::Fault => format!("f{}", index + 1),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Statement => f.write_str("statement"),
            ColumnKind::Fault => f.write_str("fault"),
        }
    }
}

/// Dense row-major matrix of small integers. Entries are expected to be 0/1;
/// anything else is reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    /// Builds a matrix from rows of equal length. `cols` is needed for the
    /// zero-row case.
    pub fn from_rows(rows: &[Vec<u8>], cols: usize) -> Result<Self, InstanceError> {
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(InstanceError::Validation(Violation::DimensionMismatch(format!(
                    "row {r} has {} entries, expected {cols}",
                    row.len()
                ))));
            }
            m.data[r * cols..(r + 1) * cols].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: u8) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column indices with a nonzero entry in row `r`, ascending.
    pub fn row_support(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(r)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(c, _)| c)
    }

    pub fn column_has_one(&self, c: usize) -> bool {
        (0..self.rows).any(|r| self.get(r, c) != 0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// A test suite with its coverage and fault-detection matrices.
///
/// Constructed through [`TsmInstance::new`], [`load_instance`] or
/// [`generate_synthetic`], all of which guarantee the invariants checked by
/// [`validate`]. [`TsmInstance::from_parts_unchecked`] skips validation and
/// exists so malformed data can be inspected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsmInstance {
    test_ids: Vec<String>,
    stmt: BinaryMatrix,
    fault: BinaryMatrix,
}

impl TsmInstance {
    pub fn new(
        test_ids: Vec<String>,
        stmt: BinaryMatrix,
        fault: BinaryMatrix,
    ) -> Result<Self, InstanceError> {
        let inst = Self::from_parts_unchecked(test_ids, stmt, fault);
        validate(&inst).into_result()?;
        Ok(inst)
    }

    pub fn from_parts_unchecked(test_ids: Vec<String>, stmt: BinaryMatrix, fault: BinaryMatrix) -> Self {
        Self {
            test_ids,
            stmt,
            fault,
        }
    }

    pub fn num_tests(&self) -> usize {
        self.test_ids.len()
    }

    pub fn num_stmts(&self) -> usize {
        self.stmt.cols()
    }

    pub fn num_faults(&self) -> usize {
        self.fault.cols()
    }

    pub fn test_ids(&self) -> &[String] {
        &self.test_ids
    }

    pub fn stmt_matrix(&self) -> &BinaryMatrix {
        &self.stmt
    }

    pub fn fault_matrix(&self) -> &BinaryMatrix {
        &self.fault
    }

    pub fn covers_stmt(&self, test: usize, stmt: usize) -> bool {
        self.stmt.get(test, stmt) != 0
    }

    pub fn detects_fault(&self, test: usize, fault: usize) -> bool {
        self.fault.get(test, fault) != 0
    }

    pub fn test_index(&self, id: &str) -> Option<usize> {
        self.test_ids.iter().position(|t| t == id)
    }

    /// Number of 1-entries across both matrices (the edge count of the
    /// bipartite view).
    pub fn edge_count(&self) -> usize {
        self.stmt.count_nonzero() + self.fault.count_nonzero()
    }
}

/// The three-test worked example: 3 statements, 4 faults.
///
/// | test | s1 s2 s3 | f1 f2 f3 f4 |
/// |------|----------|-------------|
/// | t1   | 1  0  0  | 0  0  0  1  |
/// | t2   | 0  1  1  | 1  1  1  0  |
/// | t3   | 1  0  1  | 1  1  1  0  |
pub fn three_test_example() -> TsmInstance {
    let stmt = BinaryMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 1], vec![1, 0, 1]], 3).unwrap();
    let fault = BinaryMatrix::from_rows(
        &[vec![0, 0, 0, 1], vec![1, 1, 1, 0], vec![1, 1, 1, 0]],
        4,
    )
    .unwrap();
    TsmInstance::new(vec!["t1".into(), "t2".into(), "t3".into()], stmt, fault).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", content = "detail", rename_all = "snake_case")]
pub enum Violation {
    EmptySuite,
    NoCriteria,
    DuplicateTestId { id: String, first: usize, second: usize },
    DimensionMismatch(String),
    NonBinary { kind: ColumnKind, row: usize, col: usize, value: u8 },
    ZeroColumn { kind: ColumnKind, index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySuite => f.write_str("instance has no tests"),
            Violation::NoCriteria => f.write_str("instance has neither statements nor faults"),
            Violation::DuplicateTestId { id, first, second } => {
                write!(f, "test id {id:?} appears at rows {first} and {second}")
            }
            Violation::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Violation::NonBinary { kind, row, col, value } => write!(
                f,
                "non-binary entry {value} at test {row}, {kind} {col} ({})",
                kind.label(*col)
            ),
            Violation::ZeroColumn { kind, index } => {
                write!(f, "{kind} column {index} ({}) has no covering test", kind.label(*index))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Warning {
    /// A test that covers nothing. Legal, but no solver will pick it.
    EmptyTest { row: usize },
    DuplicateRow { first: usize, duplicate: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
    pub zero_stmt_columns: Vec<usize>,
    pub zero_fault_columns: Vec<usize>,
    pub stmt_density: f64,
    pub fault_density: f64,
}

impl ValidationReport {
    /// First violation as an error; zero columns map to the dedicated
    /// infeasibility error.
    pub fn into_result(self) -> Result<(), InstanceError> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(Violation::ZeroColumn { kind, index }) => Err(InstanceError::ZeroColumn { kind, index }),
            Some(v) => Err(InstanceError::Validation(v)),
        }
    }
}

fn density(m: &BinaryMatrix) -> f64 {
    let cells = m.rows() * m.cols();
    if cells == 0 {
        0.0
    } else {
        m.count_nonzero() as f64 / cells as f64
    }
}

/// Checks every instance invariant. Never fails; problems are listed in the
/// report and `ok` is false iff there is at least one violation.
pub fn validate(inst: &TsmInstance) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let n = inst.test_ids.len();

    if n == 0 {
        violations.push(Violation::EmptySuite);
    }
    if inst.stmt.cols() == 0 && inst.fault.cols() == 0 {
        violations.push(Violation::NoCriteria);
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, id) in inst.test_ids.iter().enumerate() {
        if let Some(&first) = seen.get(id.as_str()) {
            violations.push(Violation::DuplicateTestId {
                id: id.clone(),
                first,
                second: i,
            });
        } else {
            seen.insert(id, i);
        }
    }
    for (kind, m) in [(ColumnKind::Statement, &inst.stmt), (ColumnKind::Fault, &inst.fault)] {
        if m.rows() != n {
            violations.push(Violation::DimensionMismatch(format!(
                "{kind} matrix has {} rows for {n} tests",
                m.rows()
            )));
        }
    }
    let dims_ok = violations.iter().all(|v| !matches!(v, Violation::DimensionMismatch(_)));

    let mut zero_stmt_columns = Vec::new();
    let mut zero_fault_columns = Vec::new();
    if dims_ok {
        for (kind, m) in [(ColumnKind::Statement, &inst.stmt), (ColumnKind::Fault, &inst.fault)] {
            for r in 0..m.rows() {
                for (c, &value) in m.row(r).iter().enumerate() {
                    if value > 1 {
                        violations.push(Violation::NonBinary { kind, row: r, col: c, value });
                    }
                }
            }
            for c in 0..m.cols() {
                if !m.column_has_one(c) {
                    match kind {
                        ColumnKind::Statement => zero_stmt_columns.push(c),
                        ColumnKind::Fault => zero_fault_columns.push(c),
                    }
                    violations.push(Violation::ZeroColumn { kind, index: c });
                }
            }
        }

        let mut row_owner: HashMap<(&[u8], &[u8]), usize> = HashMap::new();
        for r in 0..n {
            let key = (inst.stmt.row(r), inst.fault.row(r));
            if key.0.iter().chain(key.1).all(|&v| v == 0) {
                warnings.push(Warning::EmptyTest { row: r });
            }
            match row_owner.get(&key) {
                Some(&first) => warnings.push(Warning::DuplicateRow { first, duplicate: r }),
                None => {
                    row_owner.insert(key, r);
                }
            }
        }
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
        warnings,
        zero_stmt_columns,
        zero_fault_columns,
        stmt_density: density(&inst.stmt),
        fault_density: density(&inst.fault),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    num_tests: usize,
    num_stmts: usize,
    num_faults: usize,
    test_ids: Vec<String>,
    stmt_edges: Vec<[usize; 2]>,
    fault_edges: Vec<[usize; 2]>,
}

fn fill_edges(
    m: &mut BinaryMatrix,
    edges: &[[usize; 2]],
    kind: ColumnKind,
) -> Result<(), InstanceError> {
    for &[t, c] in edges {
        if t >= m.rows() || c >= m.cols() {
            return Err(InstanceError::Validation(Violation::DimensionMismatch(format!(
                "{kind} edge [{t}, {c}] outside {}x{}",
                m.rows(),
                m.cols()
            ))));
        }
        // A repeated coordinate shows up as a non-binary entry.
        let v = m.get(t, c).saturating_add(1);
        m.set(t, c, v);
    }
    Ok(())
}

/// Parses and validates an instance document.
pub fn parse_instance(text: &str) -> Result<TsmInstance, InstanceError> {
    let file: InstanceFile = serde_json::from_str(text)?;
    if file.test_ids.len() != file.num_tests {
        return Err(InstanceError::Validation(Violation::DimensionMismatch(format!(
            "num_tests is {} but {} test ids given",
            file.num_tests,
            file.test_ids.len()
        ))));
    }
    let mut stmt = BinaryMatrix::zeros(file.num_tests, file.num_stmts);
    let mut fault = BinaryMatrix::zeros(file.num_tests, file.num_faults);
    fill_edges(&mut stmt, &file.stmt_edges, ColumnKind::Statement)?;
    fill_edges(&mut fault, &file.fault_edges, ColumnKind::Fault)?;
    TsmInstance::new(file.test_ids, stmt, fault)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<TsmInstance, InstanceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_instance(&text)
}

/// Serializes an instance; edges are listed row-major.
pub fn instance_to_json(inst: &TsmInstance) -> String {
    let edges = |m: &BinaryMatrix| -> Vec<[usize; 2]> {
        (0..m.rows())
            .flat_map(|r| m.row_support(r).map(move |c| [r, c]))
            .collect()
    };
    let file = InstanceFile {
        num_tests: inst.num_tests(),
        num_stmts: inst.num_stmts(),
        num_faults: inst.num_faults(),
        test_ids: inst.test_ids.clone(),
        stmt_edges: edges(&inst.stmt),
        fault_edges: edges(&inst.fault),
    };
    serde_json::to_string(&file).expect("instance serialization cannot fail")
}

pub fn save_instance(inst: &TsmInstance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let path = path.as_ref();
    std::fs::write(path, instance_to_json(inst) + "\n").map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Random instance with i.i.d. Bernoulli(`density`) entries. Columns left
/// empty by the draw get a 1 in a uniformly chosen row, so the result is
/// always feasible. Test ids are `t1..tN`.
pub fn generate_synthetic(
    num_tests: usize,
    num_stmts: usize,
    num_faults: usize,
    density: f64,
    seed: u64,
) -> Result<TsmInstance, InstanceError> {
    if num_tests == 0 || num_stmts == 0 || num_faults == 0 {
        return Err(InstanceError::InvalidParameter(
            "test, statement and fault counts must be at least 1".into(),
        ));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(InstanceError::InvalidParameter(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    let mut rng = seed::rng_for(seed, Component::InstanceGen);
    let draw = |cols: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut m = BinaryMatrix::zeros(num_tests, cols);
        for r in 0..num_tests {
            for c in 0..cols {
                if rng.random::<f64>() < density {
                    m.set(r, c, 1);
                }
            }
        }
        for c in 0..cols {
            if !m.column_has_one(c) {
                let r = rng.random_range(0..num_tests);
                m.set(r, c, 1);
            }
        }
        m
    };
    let stmt = draw(num_stmts, &mut rng);
    let fault = draw(num_faults, &mut rng);
    let ids = (1..=num_tests).map(|i| format!("t{i}")).collect();
    TsmInstance::new(ids, stmt, fault)
}
