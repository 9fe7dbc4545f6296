//! Transmission network model and flow sensitivities.
//!
//! The network is a DC approximation: line flows are susceptance-weighted
//! angle differences, losses are ignored, and every flow is a linear function
//! of nodal injections through the injection-shift (PTDF) matrix computed
//! against the slack bus.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{CaseIssue, Error, Result};
use crate::linalg::invert_checked;

/// Injection imbalance tolerance in MW for flow evaluations.
pub const BALANCE_TOL_MW: f64 = 1e-6;

/// A network bus with its day-ahead load.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// Inelastic day-ahead load at this bus, MW.
    pub load_da: f64,
}

/// A transmission line between two buses.
///
/// The (from, to) order fixes the line's orientation: positive flow runs
/// from `from_bus` to `to_bus`, and "congested forward" means the flow sits
/// at `+capacity` along that orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per-unit susceptance, > 0.
    pub susceptance: f64,
    /// Thermal limit in MW, > 0, applied to |flow|.
    pub capacity: f64,
}

/// A validated transmission network: buses, lines, and the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    slack_bus: usize,
}

impl NetworkCase {
    /// Build a network, aggregating every validation problem found.
    ///
    /// Bus and line ids must each cover `0..n` without gaps; buses and lines
    /// are stored sorted by id so that matrix row/column indices coincide
    /// with ids.
    pub fn new(mut buses: Vec<Bus>, mut lines: Vec<Line>, slack_bus: usize) -> Result<Self> {
        let mut issues = Vec::new();

        buses.sort_by_key(|b| b.id);
        let mut contiguous = true;
        for (i, bus) in buses.iter().enumerate() {
            if i > 0 && bus.id == buses[i - 1].id {
                issues.push(CaseIssue::DuplicateBusId(bus.id));
            } else if bus.id != i {
                contiguous = false;
            }
            if bus.load_da < 0.0 {
                issues.push(CaseIssue::NegativeLoad { bus: bus.id });
            }
        }
        if !contiguous {
            issues.push(CaseIssue::NonContiguousBusIds);
        }
        let n = buses.len();

        lines.sort_by_key(|l| l.id);
        let mut contiguous = true;
        for (i, line) in lines.iter().enumerate() {
            if i > 0 && line.id == lines[i - 1].id {
                issues.push(CaseIssue::DuplicateLineId(line.id));
            } else if line.id != i {
                contiguous = false;
            }
            if line.from_bus == line.to_bus {
                issues.push(CaseIssue::SelfLoop { line: line.id });
            }
            if line.susceptance <= 0.0 {
                issues.push(CaseIssue::NonPositiveSusceptance { line: line.id });
            }
            if line.capacity <= 0.0 {
                issues.push(CaseIssue::NonPositiveCapacity { line: line.id });
            }
            for bus in [line.from_bus, line.to_bus] {
                if bus >= n {
                    issues.push(CaseIssue::UnknownBusReference {
                        entity: format!("line {}", line.id),
                        bus,
                    });
                }
            }
        }
        if !contiguous {
            issues.push(CaseIssue::NonContiguousLineIds);
        }

        if slack_bus >= n {
            issues.push(CaseIssue::InvalidSlackBus { bus: slack_bus });
        }

        if issues.is_empty() && !is_connected(n, &lines) {
            issues.push(CaseIssue::DisconnectedGraph);
        }

        if issues.is_empty() {
            Ok(NetworkCase { buses, lines, slack_bus })
        } else {
            Err(Error::InvalidCase(issues))
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    /// Day-ahead nodal load vector, MW.
    pub fn loads(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.load_da))
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.load_da).sum()
    }

    /// Line capacity vector, MW.
    pub fn capacities(&self) -> DVector<f64> {
        DVector::from_iterator(self.lines.len(), self.lines.iter().map(|l| l.capacity))
    }

    /// Copy of the network with replaced nodal loads (used by the
    /// finite-difference price probes).
    pub fn with_loads(&self, loads: &DVector<f64>) -> Result<Self> {
        if loads.len() != self.buses.len() {
            return Err(Error::DimensionMismatch {
                expected: self.buses.len(),
                found: loads.len(),
            });
        }
        let mut out = self.clone();
        for (bus, load) in out.buses.iter_mut().zip(loads.iter()) {
            bus.load_da = *load;
        }
        Ok(out)
    }

    /// Copy of the network with one line's capacity replaced (used by the
    /// shadow-price sensitivity checks).
    pub fn with_line_capacity(&self, line: usize, capacity: f64) -> Result<Self> {
        if line >= self.lines.len() {
            return Err(Error::UnknownLine { line });
        }
        let mut out = self.clone();
        out.lines[line].capacity = capacity;
        Ok(out)
    }
}

fn is_connected(n_buses: usize, lines: &[Line]) -> bool {
    if n_buses <= 1 {
        return true;
    }
    let mut adjacency = vec![Vec::new(); n_buses];
    for line in lines {
        adjacency[line.from_bus].push(line.to_bus);
        adjacency[line.to_bus].push(line.from_bus);
    }
    let mut visited = vec![false; n_buses];
    let mut stack = vec![0usize];
    visited[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adjacency[u] {
            if !visited[v] {
                visited[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n_buses
}

/// Injection-shift factors: entry `(l, u)` is the change in flow on line `l`
/// for one MW injected at bus `u` and withdrawn at the slack bus.
///
/// The slack column is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    values: DMatrix<f64>,
}

impl PtdfMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_lines(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.values.ncols()
    }

    /// Sensitivity row for one line.
    pub fn row(&self, line: usize) -> DVector<f64> {
        self.values.row(line).transpose()
    }
}

/// Compute the PTDF matrix of a connected network.
///
/// The reduced nodal susceptance matrix (slack row and column deleted) is
/// inverted once; each line's row is the branch susceptance times the
/// difference of the endpoint rows of that inverse.
pub fn compute_ptdf(case: &NetworkCase) -> Result<PtdfMatrix> {
    let n = case.n_buses();
    let l = case.n_lines();
    let slack = case.slack_bus();

    if n == 1 {
        return Ok(PtdfMatrix { values: DMatrix::zeros(l, 1) });
    }

    // Reduced index: buses skipping the slack.
    let reduced = |u: usize| -> Option<usize> {
        match u.cmp(&slack) {
            core::cmp::Ordering::Less => Some(u),
            core::cmp::Ordering::Equal => None,
            core::cmp::Ordering::Greater => Some(u - 1),
        }
    };

    let mut b_reduced = DMatrix::zeros(n - 1, n - 1);
    for line in case.lines() {
        let b = line.susceptance;
        let from = reduced(line.from_bus);
        let to = reduced(line.to_bus);
        if let Some(i) = from {
            b_reduced[(i, i)] += b;
        }
        if let Some(j) = to {
            b_reduced[(j, j)] += b;
        }
        if let (Some(i), Some(j)) = (from, to) {
            b_reduced[(i, j)] -= b;
            b_reduced[(j, i)] -= b;
        }
    }

    let x = invert_checked(&b_reduced).ok_or(Error::SingularSusceptance)?;

    // Angle sensitivity of bus u to an injection at bus v (slack rows and
    // columns are zero).
    let angle = |u: Option<usize>, v: usize| -> f64 {
        match u {
            Some(i) => x[(i, v)],
            None => 0.0,
        }
    };

    let mut values = DMatrix::zeros(l, n);
    for line in case.lines() {
        let from = reduced(line.from_bus);
        let to = reduced(line.to_bus);
        for u in 0..n {
            if u == slack {
                continue;
            }
            let v = reduced(u).expect("non-slack bus has a reduced index");
            values[(line.id, u)] = line.susceptance * (angle(from, v) - angle(to, v));
        }
    }

    Ok(PtdfMatrix { values })
}

/// Flow on every line for a balanced injection vector.
///
/// Errors if the injections do not sum to zero within [`BALANCE_TOL_MW`].
pub fn line_flows(ptdf: &PtdfMatrix, injections: &DVector<f64>) -> Result<DVector<f64>> {
    if injections.len() != ptdf.n_buses() {
        return Err(Error::DimensionMismatch {
            expected: ptdf.n_buses(),
            found: injections.len(),
        });
    }
    let residual = injections.sum();
    if residual.abs() > BALANCE_TOL_MW {
        return Err(Error::Imbalance { residual });
    }
    Ok(ptdf.values() * injections)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> NetworkCase {
        NetworkCase::new(
            vec![Bus { id: 0, load_da: 0.0 }, Bus { id: 1, load_da: 10.0 }],
            vec![Line { id: 0, from_bus: 0, to_bus: 1, susceptance: 1.0, capacity: 100.0 }],
            0,
        )
        .unwrap()
    }

    /// Symmetric triangle with unit susceptances: an injection at a non-slack
    /// bus splits 2/3 over the direct line and 1/3 over the two-hop path.
    fn triangle() -> NetworkCase {
        NetworkCase::new(
            vec![
                Bus { id: 0, load_da: 0.0 },
                Bus { id: 1, load_da: 0.0 },
                Bus { id: 2, load_da: 0.0 },
            ],
            vec![
                Line { id: 0, from_bus: 0, to_bus: 1, susceptance: 1.0, capacity: 100.0 },
                Line { id: 1, from_bus: 0, to_bus: 2, susceptance: 1.0, capacity: 100.0 },
                Line { id: 2, from_bus: 1, to_bus: 2, susceptance: 1.0, capacity: 100.0 },
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn single_bus_case_is_valid() {
        let case = NetworkCase::new(vec![Bus { id: 0, load_da: 5.0 }], vec![], 0).unwrap();
        let ptdf = compute_ptdf(&case).unwrap();
        assert_eq!(ptdf.n_lines(), 0);
        assert_eq!(ptdf.n_buses(), 1);
    }

    #[test]
    fn unknown_bus_reference_is_reported() {
        let err = NetworkCase::new(
            vec![Bus { id: 0, load_da: 0.0 }, Bus { id: 1, load_da: 0.0 }],
            vec![Line { id: 0, from_bus: 0, to_bus: 99, susceptance: 1.0, capacity: 1.0 }],
            0,
        )
        .unwrap_err();
        match err {
            Error::InvalidCase(issues) => assert!(issues
                .iter()
                .any(|i| matches!(i, CaseIssue::UnknownBusReference { bus: 99, .. }))),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = NetworkCase::new(
            vec![
                Bus { id: 0, load_da: 0.0 },
                Bus { id: 1, load_da: 0.0 },
                Bus { id: 2, load_da: 0.0 },
            ],
            vec![Line { id: 0, from_bus: 0, to_bus: 1, susceptance: 1.0, capacity: 1.0 }],
            0,
        )
        .unwrap_err();
        match err {
            Error::InvalidCase(issues) => {
                assert!(issues.contains(&CaseIssue::DisconnectedGraph))
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn aggregates_multiple_issues() {
        let err = NetworkCase::new(
            vec![Bus { id: 0, load_da: -1.0 }, Bus { id: 1, load_da: 0.0 }],
            vec![Line { id: 0, from_bus: 0, to_bus: 1, susceptance: -2.0, capacity: 0.0 }],
            7,
        )
        .unwrap_err();
        match err {
            Error::InvalidCase(issues) => assert!(issues.len() >= 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn two_bus_ptdf_row() {
        // Injection at bus 1 flows fully back to the slack: row = [0, -1].
        let ptdf = compute_ptdf(&two_bus()).unwrap();
        assert!((ptdf.values()[(0, 0)] - 0.0).abs() < 1e-12);
        assert!((ptdf.values()[(0, 1)] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn triangle_ptdf_split() {
        // Hand solve of the 2x2 reduced susceptance system:
        //   B_red = [[2,-1],[-1,2]], X = (1/3)[[2,1],[1,2]]
        // giving rows [0,-2/3,-1/3], [0,-1/3,-2/3], [0,1/3,-1/3].
        let ptdf = compute_ptdf(&triangle()).unwrap();
        let expected = [
            [0.0, -2.0 / 3.0, -1.0 / 3.0],
            [0.0, -1.0 / 3.0, -2.0 / 3.0],
            [0.0, 1.0 / 3.0, -1.0 / 3.0],
        ];
        for l in 0..3 {
            for u in 0..3 {
                assert!(
                    (ptdf.values()[(l, u)] - expected[l][u]).abs() < 1e-12,
                    "line {l}, bus {u}"
                );
            }
        }
    }

    #[test]
    fn slack_column_is_exactly_zero() {
        for slack in 0..3 {
            let mut case = triangle();
            case.slack_bus = slack;
            let ptdf = compute_ptdf(&case).unwrap();
            for l in 0..3 {
                assert_eq!(ptdf.values()[(l, slack)], 0.0);
            }
        }
    }

    #[test]
    fn zero_injections_give_zero_flows() {
        let ptdf = compute_ptdf(&triangle()).unwrap();
        let flows = line_flows(&ptdf, &DVector::zeros(3)).unwrap();
        assert_eq!(flows.amax(), 0.0);
    }

    #[test]
    fn two_bus_flow_sign() {
        // +10 at bus 1, -10 at bus 0: 10 MW flows from bus 1 to bus 0, i.e.
        // -10 along the 0->1 orientation.
        let ptdf = compute_ptdf(&two_bus()).unwrap();
        let flows = line_flows(&ptdf, &DVector::from_row_slice(&[-10.0, 10.0])).unwrap();
        assert!((flows[0] - (-10.0)).abs() < 1e-12);
    }

    #[test]
    fn triangle_flow_split() {
        let ptdf = compute_ptdf(&triangle()).unwrap();
        let flows = line_flows(&ptdf, &DVector::from_row_slice(&[-9.0, 9.0, 0.0])).unwrap();
        assert!((flows[0] - (-6.0)).abs() < 1e-9);
        assert!((flows[1] - (-3.0)).abs() < 1e-9);
        assert!((flows[2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn imbalance_is_rejected() {
        let ptdf = compute_ptdf(&two_bus()).unwrap();
        let err = line_flows(&ptdf, &DVector::from_row_slice(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Imbalance { .. }));
    }

    #[test]
    fn flow_conservation_at_each_bus() {
        // Net line flow into each bus equals its injection.
        let case = triangle();
        let ptdf = compute_ptdf(&case).unwrap();
        let inj = DVector::from_row_slice(&[-4.0, 1.5, 2.5]);
        let flows = line_flows(&ptdf, &inj).unwrap();
        let mut net = DVector::<f64>::zeros(3);
        for line in case.lines() {
            net[line.from_bus] -= flows[line.id];
            net[line.to_bus] += flows[line.id];
        }
        for u in 0..3 {
            assert!((net[u] + inj[u]).abs() < 1e-6, "bus {u}");
        }
    }

    #[test]
    fn ptdf_linearity() {
        let ptdf = compute_ptdf(&triangle()).unwrap();
        let a = DVector::from_row_slice(&[-2.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[3.0, -4.0, 1.0]);
        let combined = line_flows(&ptdf, &(2.0 * &a + 0.5 * &b)).unwrap();
        let parts =
            2.0 * line_flows(&ptdf, &a).unwrap() + 0.5 * line_flows(&ptdf, &b).unwrap();
        assert!((combined - parts).amax() < 1e-9);
    }
}
