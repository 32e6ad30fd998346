//! Port indexing and port selection on the fluid-antenna grid.
//!
//! A port is addressed by `(n, m)`: `n` runs along the z axis (table rows),
//! `m` along the y axis (table columns). Indices are 0-based internally and
//! 1-based whenever they are reported.
//!
//! Selection follows the moving-port rule: form the real matrix
//! `D[n, m] = sum_i |S_i[n, m] - H_i[n, m]|` over a stack of channel tables and
//! their reference tables, take the row-major argmin and unravel it. Ties go
//! to the lowest flat index.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelTable;

/// Grid coordinate of a fluid-antenna port, stored 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortIndex {
    /// z-axis index (table row), 0-based.
    pub n: usize,
    /// y-axis index (table column), 0-based.
    pub m: usize,
}

impl PortIndex {
    pub const ORIGIN: PortIndex = PortIndex { n: 0, m: 0 };

    pub fn new(n: usize, m: usize) -> Self {
        PortIndex { n, m }
    }

    /// Build from the 1-based `(n, m)` convention; rejects zero indices.
    pub fn from_one_based(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput(format!(
                "1-based port index ({n}, {m}) must be >= 1"
            )));
        }
        Ok(PortIndex { n: n - 1, m: m - 1 })
    }

    /// `(n, m)` in the 1-based reporting convention.
    pub fn one_based(self) -> (usize, usize) {
        (self.n + 1, self.m + 1)
    }

    pub fn check(self, dims: (usize, usize)) -> Result<Self> {
        if self.n < dims.0 && self.m < dims.1 {
            Ok(self)
        } else {
            let (n, m) = self.one_based();
            Err(Error::InvalidInput(format!(
                "port ({n}, {m}) outside {}x{} grid",
                dims.0, dims.1
            )))
        }
    }
}

/// Row-major flat index → port; `dims = (N, M)`.
pub fn unravel_index(p: usize, dims: (usize, usize)) -> Result<PortIndex> {
    let (n, m) = dims;
    if p >= n * m {
        return Err(Error::InvalidInput(format!(
            "flat index {p} out of range for {n}x{m} grid"
        )));
    }
    Ok(PortIndex { n: p / m, m: p % m })
}

/// Inverse of [`unravel_index`].
pub fn ravel_index(port: PortIndex, dims: (usize, usize)) -> Result<usize> {
    let port = port.check(dims)?;
    Ok(port.n * dims.1 + port.m)
}

/// What the stack's leading axis runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackAxis {
    Antenna,
    Time,
}

/// An ordered list of same-shaped channel tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TableStack {
    tables: Vec<ChannelTable>,
    axis: StackAxis,
}

impl TableStack {
    pub fn new(tables: Vec<ChannelTable>, axis: StackAxis) -> Result<Self> {
        if let Some(first) = tables.first() {
            let dims = first.dims();
            if let Some(bad) = tables.iter().position(|t| t.dims() != dims) {
                return Err(Error::InvalidInput(format!(
                    "table {bad} has dims {:?}, expected {:?}",
                    tables[bad].dims(),
                    dims
                )));
            }
        }
        Ok(TableStack { tables, axis })
    }

    pub fn axis(&self) -> StackAxis {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// `(N, M)` of the member tables, `None` for an empty stack.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.tables.first().map(ChannelTable::dims)
    }

    pub fn tables(&self) -> &[ChannelTable] {
        &self.tables
    }

    pub fn get(&self, i: usize) -> Option<&ChannelTable> {
        self.tables.get(i)
    }

    pub fn into_tables(self) -> Vec<ChannelTable> {
        self.tables
    }
}

/// Outcome of a port search: the chosen port and its distance `D_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortChoice {
    pub port: PortIndex,
    pub distance: f64,
}

/// Distance matrix `D[n, m] = sum_i |S_i[n, m] - H_i[n, m]|`, row-major.
pub fn distance_matrix(predicted: &[ChannelTable], reference: &[ChannelTable]) -> Result<Vec<f64>> {
    if predicted.is_empty() || predicted.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "stack lengths differ or are empty: {} vs {}",
            predicted.len(),
            reference.len()
        )));
    }
    let dims = predicted[0].dims();
    for (s, h) in predicted.iter().zip(reference) {
        if s.dims() != dims || h.dims() != dims {
            return Err(Error::InvalidInput(format!(
                "table dims {:?} / {:?} do not match {:?}",
                s.dims(),
                h.dims(),
                dims
            )));
        }
    }
    let mut d = vec![0.0; dims.0 * dims.1];
    for (s, h) in predicted.iter().zip(reference) {
        for ((acc, a), b) in d.iter_mut().zip(s.as_slice()).zip(h.as_slice()) {
            *acc += (a - b).norm();
        }
    }
    Ok(d)
}

fn argmin_first(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_val = values[0];
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    (best, best_val)
}

/// Multi-antenna port choice over a stack of predicted tables and references.
pub fn choose_port_multi(predicted: &[ChannelTable], reference: &[ChannelTable]) -> Result<PortChoice> {
    let d = distance_matrix(predicted, reference)?;
    let (flat, distance) = argmin_first(&d);
    let port = unravel_index(flat, predicted[0].dims())?;
    Ok(PortChoice { port, distance })
}

/// Port minimizing the summed modulus difference across an antenna stack.
pub fn select_port_multi(s_stack: &TableStack, h_stack: &TableStack) -> Result<PortIndex> {
    choose_port_multi(s_stack.tables(), h_stack.tables()).map(|c| c.port)
}

/// Per-step rule on a single predicted table against its reference table.
pub fn select_port_single(s_hat: &ChannelTable, h_ref: &ChannelTable) -> Result<PortIndex> {
    choose_port_multi(std::slice::from_ref(s_hat), std::slice::from_ref(h_ref)).map(|c| c.port)
}

/// One serialized port decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortDecision {
    pub time_step: usize,
    pub choice: PortChoice,
}

/// Write decisions as CSV rows `time_step,n,m,D_min` with 1-based ports.
pub fn write_decisions_csv<W: Write>(mut out: W, decisions: &[PortDecision]) -> Result<()> {
    writeln!(out, "time_step,n,m,D_min")?;
    for d in decisions {
        let (n, m) = d.choice.port.one_based();
        writeln!(out, "{},{},{},{:.9e}", d.time_step, n, m, d.choice.distance)?;
    }
    Ok(())
}
