//! Closed-form affine dispatch and price maps under an assumed congestion
//! pattern.
//!
//! For a fixed set of binding line constraints the stage dispatch is an
//! equality-constrained quadratic program, so its KKT system is linear and
//! the optimal dispatch, the locational prices, and the constraint duals are
//! all affine in the exogenous quantities: day-ahead commitments `c` for the
//! day-ahead stage, `(c, x)` with realized renewable output `x` for the
//! real-time stage. This module assembles those KKT systems, inverts them
//! once per pattern, and extracts the affine maps.
//!
//! The maps are only meaningful when the assumed pattern matches the actual
//! binding set of the inequality-constrained dispatch; [`crate::dispatch`]
//! discovers that set and serves as the independent oracle.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::invert_checked;
use crate::market::{PowerMarket, Stage};

/// Direction in which a line is assumed congested, relative to the line's
/// (from, to) orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowDirection {
    /// Flow pinned at `+capacity`.
    Forward,
    /// Flow pinned at `-capacity`.
    Reverse,
}

impl FlowDirection {
    pub fn sign(self) -> f64 {
        match self {
            FlowDirection::Forward => 1.0,
            FlowDirection::Reverse => -1.0,
        }
    }
}

/// An assumed set of binding lines with directions, for one market stage.
///
/// Entries are kept sorted by line id, so two patterns compare equal exactly
/// when they bind the same lines in the same directions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CongestionPattern {
    stage: Stage,
    entries: Vec<(usize, FlowDirection)>,
}

impl CongestionPattern {
    pub fn new(stage: Stage, mut entries: Vec<(usize, FlowDirection)>) -> Result<Self> {
        entries.sort_by_key(|(line, _)| *line);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicatePatternLine { line: pair[0].0 });
            }
        }
        Ok(CongestionPattern { stage, entries })
    }

    pub fn empty(stage: Stage) -> Self {
        CongestionPattern { stage, entries: Vec::new() }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn entries(&self) -> &[(usize, FlowDirection)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same binding set labelled for the other stage.
    pub fn for_stage(&self, stage: Stage) -> Self {
        CongestionPattern { stage, entries: self.entries.clone() }
    }

    /// True when both patterns bind the same lines in the same directions,
    /// regardless of stage label.
    pub fn same_lines(&self, other: &CongestionPattern) -> bool {
        self.entries == other.entries
    }
}

impl core::fmt::Display for CongestionPattern {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.entries.is_empty() {
            return write!(f, "(none)");
        }
        for (i, (line, dir)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            let arrow = match dir {
                FlowDirection::Forward => "+",
                FlowDirection::Reverse => "-",
            };
            write!(f, "{line}{arrow}")?;
        }
        Ok(())
    }
}

/// Signed flow-constraint rows for a pattern: row `t` is the PTDF row of the
/// binding line, negated for a reverse-direction entry so that the binding
/// equality is always `row . injections = +capacity`.
pub(crate) fn signed_constraints(
    market: &PowerMarket,
    pattern: &CongestionPattern,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n_buses = market.n_buses();
    let n = pattern.len();
    let mut rows = DMatrix::zeros(n, n_buses);
    let mut caps = DVector::zeros(n);
    for (t, (line, dir)) in pattern.entries().iter().enumerate() {
        if *line >= market.n_lines() {
            return Err(Error::UnknownLine { line: *line });
        }
        let ptdf_row = market.ptdf().row(*line);
        rows.row_mut(t).copy_from(&(dir.sign() * ptdf_row.transpose()));
        caps[t] = market.case().lines()[*line].capacity;
    }
    Ok((rows, caps))
}

/// Primal/dual solution of one stage KKT system.
#[derive(Debug, Clone)]
pub struct KktSolution {
    /// Stage generator dispatch, MW.
    pub dispatch: DVector<f64>,
    /// Binding-line shadow prices, one per pattern entry.
    pub gammas: DVector<f64>,
    /// Balance-equation dual.
    pub tau: f64,
}

fn split_solution(sol: DVector<f64>, n_vars: usize, n_binding: usize) -> KktSolution {
    let dispatch = sol.rows(0, n_vars).into_owned();
    let gammas = sol.rows(n_vars, n_binding).into_owned();
    let tau = sol[n_vars + n_binding];
    KktSolution { dispatch, gammas, tau }
}

/// Shared KKT block structure for one stage:
///
/// ```text
///   [ diag(alpha)   A_G^T   1 ]
///   [ A_G           0       0 ]
///   [ 1^T           0       0 ]
/// ```
///
/// where `A_G` projects the signed binding rows onto the stage's generators.
fn stage_kkt_matrix(alphas: &DVector<f64>, a_gen: &DMatrix<f64>) -> DMatrix<f64> {
    let n_vars = alphas.len();
    let n = a_gen.nrows();
    let size = n_vars + n + 1;
    let mut z = DMatrix::zeros(size, size);
    for (i, alpha) in alphas.iter().enumerate() {
        z[(i, i)] = *alpha;
    }
    z.view_mut((n_vars, 0), (n, n_vars)).copy_from(a_gen);
    z.view_mut((0, n_vars), (n_vars, n)).copy_from(&a_gen.transpose());
    for i in 0..n_vars {
        z[(i, size - 1)] = 1.0;
        z[(size - 1, i)] = 1.0;
    }
    z
}

/// Price-lift matrix `[0 | A^T | 1]` mapping KKT-inverse columns to nodal
/// prices.
fn price_lift(n_buses: usize, n_vars: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(n_buses, n_vars + n + 1);
    m.view_mut((0, n_vars), (n_buses, n)).copy_from(&a.transpose());
    for u in 0..n_buses {
        m[(u, n_vars + n)] = 1.0;
    }
    m
}

/// Assembled day-ahead KKT system for an assumed pattern.
///
/// The right-hand side is affine in the commitment vector:
/// `rhs(c) = rhs_commit * c + rhs_const`.
#[derive(Debug, Clone)]
pub struct DaKkt {
    pub z: DMatrix<f64>,
    pub z_inv: DMatrix<f64>,
    /// Signed binding rows over buses.
    pub a: DMatrix<f64>,
    pub rhs_commit: DMatrix<f64>,
    pub rhs_const: DVector<f64>,
    n_vars: usize,
    n_binding: usize,
}

impl DaKkt {
    /// Solve for a numeric commitment vector.
    pub fn solve(&self, commitments: &DVector<f64>) -> KktSolution {
        let rhs = &self.rhs_commit * commitments + &self.rhs_const;
        split_solution(&self.z_inv * rhs, self.n_vars, self.n_binding)
    }
}

/// Assemble (and factor) the day-ahead KKT system for a pattern.
///
/// Fails with [`Error::SingularKkt`] when the assumed binding rows are
/// linearly dependent; such a pattern cannot define a unique optimum and the
/// caller must discard it.
pub fn assemble_da_kkt(market: &PowerMarket, pattern: &CongestionPattern) -> Result<DaKkt> {
    if pattern.stage() != Stage::DayAhead {
        return Err(Error::WrongStage { expected: Stage::DayAhead, found: pattern.stage() });
    }
    let participants = market.participants();
    let n_vars = participants.n_da();
    if n_vars == 0 {
        return Err(Error::NoGenerators { stage: Stage::DayAhead });
    }
    let inc = market.incidence();
    let (a, caps) = signed_constraints(market, pattern)?;
    let a_gen = &a * &inc.e_g_da;
    let z = stage_kkt_matrix(&participants.alphas(Stage::DayAhead), &a_gen);
    let z_inv = invert_checked(&z).ok_or(Error::SingularKkt)?;

    let n = pattern.len();
    let k = participants.n_rpps();
    let loads = market.case().loads();
    let size = n_vars + n + 1;

    let mut rhs_commit = DMatrix::zeros(size, k);
    rhs_commit.view_mut((n_vars, 0), (n, k)).copy_from(&(-(&a * &inc.e_r)));
    for col in 0..k {
        rhs_commit[(size - 1, col)] = -1.0;
    }

    let mut rhs_const = DVector::zeros(size);
    rhs_const.rows_mut(0, n_vars).copy_from(&(-participants.betas(Stage::DayAhead)));
    rhs_const.rows_mut(n_vars, n).copy_from(&(&a * &loads + caps));
    rhs_const[size - 1] = loads.sum();

    Ok(DaKkt { z, z_inv, a, rhs_commit, rhs_const, n_vars, n_binding: n })
}

/// Day-ahead dispatch and prices as affine functions of the commitments.
#[derive(Debug, Clone)]
pub struct DaAffineMaps {
    pattern: CongestionPattern,
    /// Dispatch sensitivity to commitments (generators x producers).
    pub dispatch_commit: DMatrix<f64>,
    /// Dispatch at zero commitments.
    pub dispatch_const: DVector<f64>,
    /// Price sensitivity to commitments (buses x producers).
    pub price_commit: DMatrix<f64>,
    /// Prices at zero commitments.
    pub price_const: DVector<f64>,
    /// First `I` rows of the KKT inverse.
    pub primal_rows: DMatrix<f64>,
    /// Remaining rows of the KKT inverse, recovering the duals.
    pub dual_rows: DMatrix<f64>,
    kkt: DaKkt,
}

impl DaAffineMaps {
    pub fn pattern(&self) -> &CongestionPattern {
        &self.pattern
    }

    pub fn kkt(&self) -> &DaKkt {
        &self.kkt
    }

    /// `q(c)`, MW.
    pub fn dispatch_at(&self, commitments: &DVector<f64>) -> DVector<f64> {
        &self.dispatch_commit * commitments + &self.dispatch_const
    }

    /// `lambda(c)`, $/MWh per bus.
    pub fn prices_at(&self, commitments: &DVector<f64>) -> DVector<f64> {
        &self.price_commit * commitments + &self.price_const
    }

    /// Binding-line shadow prices and balance dual at a commitment vector.
    pub fn duals_at(&self, commitments: &DVector<f64>) -> (DVector<f64>, f64) {
        let sol = self.kkt.solve(commitments);
        (sol.gammas, sol.tau)
    }
}

/// Build the day-ahead affine maps for an assumed pattern.
pub fn build_da_maps(market: &PowerMarket, pattern: &CongestionPattern) -> Result<DaAffineMaps> {
    let kkt = assemble_da_kkt(market, pattern)?;
    let participants = market.participants();
    let n_vars = participants.n_da();
    let n = pattern.len();

    let primal_rows = kkt.z_inv.rows(0, n_vars).into_owned();
    let dual_rows = kkt.z_inv.rows(n_vars, n + 1).into_owned();

    let dispatch_commit = &primal_rows * &kkt.rhs_commit;
    let dispatch_const = &primal_rows * &kkt.rhs_const;

    // lambda = [0 | A^T | 1] W^T (diag(alpha) q + beta), affine in c through q.
    let lift = price_lift(market.n_buses(), n_vars, &kkt.a) * primal_rows.transpose();
    let upsilon = DMatrix::from_diagonal(&participants.alphas(Stage::DayAhead));
    let betas = participants.betas(Stage::DayAhead);
    let price_commit = &lift * &upsilon * &dispatch_commit;
    let price_const = &lift * (&upsilon * &dispatch_const + betas);

    Ok(DaAffineMaps {
        pattern: pattern.clone(),
        dispatch_commit,
        dispatch_const,
        price_commit,
        price_const,
        primal_rows,
        dual_rows,
        kkt,
    })
}

/// Assembled real-time KKT system for an assumed pattern.
///
/// The right-hand side is affine in the day-ahead dispatch, the realized
/// renewable output, and the (normally zero) fictitious real-time load:
/// `rhs = rhs_da_dispatch * q_da + rhs_real * x + rhs_const + rhs_rt_load * l_rt`.
#[derive(Debug, Clone)]
pub struct RtKkt {
    pub z: DMatrix<f64>,
    pub z_inv: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub rhs_da_dispatch: DMatrix<f64>,
    pub rhs_real: DMatrix<f64>,
    pub rhs_const: DVector<f64>,
    pub rhs_rt_load: DMatrix<f64>,
    n_vars: usize,
    n_binding: usize,
}

impl RtKkt {
    /// Solve for numeric day-ahead dispatch and realized output. `rt_load`
    /// is the fictitious real-time load vector, zero in normal operation and
    /// perturbed only by the finite-difference price probes.
    pub fn solve(
        &self,
        q_da: &DVector<f64>,
        realized: &DVector<f64>,
        rt_load: Option<&DVector<f64>>,
    ) -> KktSolution {
        let mut rhs = &self.rhs_da_dispatch * q_da + &self.rhs_real * realized + &self.rhs_const;
        if let Some(l) = rt_load {
            rhs += &self.rhs_rt_load * l;
        }
        split_solution(&self.z_inv * rhs, self.n_vars, self.n_binding)
    }
}

/// Assemble (and factor) the real-time KKT system for a pattern.
pub fn assemble_rt_kkt(market: &PowerMarket, pattern: &CongestionPattern) -> Result<RtKkt> {
    if pattern.stage() != Stage::RealTime {
        return Err(Error::WrongStage { expected: Stage::RealTime, found: pattern.stage() });
    }
    let participants = market.participants();
    let n_vars = participants.n_rt();
    if n_vars == 0 {
        return Err(Error::NoGenerators { stage: Stage::RealTime });
    }
    let inc = market.incidence();
    let (a, caps) = signed_constraints(market, pattern)?;
    let a_gen = &a * &inc.e_g_rt;
    let z = stage_kkt_matrix(&participants.alphas(Stage::RealTime), &a_gen);
    let z_inv = invert_checked(&z).ok_or(Error::SingularKkt)?;

    let n = pattern.len();
    let n_da = participants.n_da();
    let k = participants.n_rpps();
    let n_buses = market.n_buses();
    let loads = market.case().loads();
    let size = n_vars + n + 1;

    // Marginal-cost coupling for units cleared in both stages.
    let link_costs = &inc.e_g_dr * DMatrix::from_diagonal(&participants.alphas(Stage::DayAhead));

    let mut rhs_da_dispatch = DMatrix::zeros(size, n_da);
    rhs_da_dispatch.view_mut((0, 0), (n_vars, n_da)).copy_from(&(-&link_costs));
    rhs_da_dispatch
        .view_mut((n_vars, 0), (n, n_da))
        .copy_from(&(-(&a * &inc.e_g_da)));
    for col in 0..n_da {
        rhs_da_dispatch[(size - 1, col)] = -1.0;
    }

    let mut rhs_real = DMatrix::zeros(size, k);
    rhs_real.view_mut((n_vars, 0), (n, k)).copy_from(&(-(&a * &inc.e_r)));
    for col in 0..k {
        rhs_real[(size - 1, col)] = -1.0;
    }

    let mut rhs_const = DVector::zeros(size);
    rhs_const.rows_mut(0, n_vars).copy_from(&(-participants.betas(Stage::RealTime)));
    rhs_const.rows_mut(n_vars, n).copy_from(&(&a * &loads + caps));
    rhs_const[size - 1] = loads.sum();

    let mut rhs_rt_load = DMatrix::zeros(size, n_buses);
    rhs_rt_load.view_mut((n_vars, 0), (n, n_buses)).copy_from(&a);
    for col in 0..n_buses {
        rhs_rt_load[(size - 1, col)] = 1.0;
    }

    Ok(RtKkt {
        z,
        z_inv,
        a,
        rhs_da_dispatch,
        rhs_real,
        rhs_const,
        rhs_rt_load,
        n_vars,
        n_binding: n,
    })
}

/// Real-time dispatch and prices as affine functions of commitments and
/// realized renewable output, with the day-ahead stage substituted in.
#[derive(Debug, Clone)]
pub struct RtAffineMaps {
    pattern: CongestionPattern,
    /// Dispatch sensitivity to commitments (generators x producers).
    pub dispatch_commit: DMatrix<f64>,
    /// Dispatch sensitivity to realized output (generators x producers).
    pub dispatch_real: DMatrix<f64>,
    pub dispatch_const: DVector<f64>,
    /// Price sensitivity to commitments (buses x producers).
    pub price_commit: DMatrix<f64>,
    /// Price sensitivity to realized output (buses x producers).
    pub price_real: DMatrix<f64>,
    pub price_const: DVector<f64>,
    pub primal_rows: DMatrix<f64>,
    pub dual_rows: DMatrix<f64>,
    kkt: RtKkt,
    da_dispatch_commit: DMatrix<f64>,
    da_dispatch_const: DVector<f64>,
}

impl RtAffineMaps {
    pub fn pattern(&self) -> &CongestionPattern {
        &self.pattern
    }

    pub fn kkt(&self) -> &RtKkt {
        &self.kkt
    }

    pub fn dispatch_at(&self, commitments: &DVector<f64>, realized: &DVector<f64>) -> DVector<f64> {
        &self.dispatch_commit * commitments + &self.dispatch_real * realized + &self.dispatch_const
    }

    pub fn prices_at(&self, commitments: &DVector<f64>, realized: &DVector<f64>) -> DVector<f64> {
        &self.price_commit * commitments + &self.price_real * realized + &self.price_const
    }

    pub fn duals_at(
        &self,
        commitments: &DVector<f64>,
        realized: &DVector<f64>,
    ) -> (DVector<f64>, f64) {
        let q_da = &self.da_dispatch_commit * commitments + &self.da_dispatch_const;
        let sol = self.kkt.solve(&q_da, realized, None);
        (sol.gammas, sol.tau)
    }
}

/// Build the real-time affine maps for an assumed pattern, substituting the
/// day-ahead stage's affine dispatch.
pub fn build_rt_maps(
    market: &PowerMarket,
    pattern: &CongestionPattern,
    da_maps: &DaAffineMaps,
) -> Result<RtAffineMaps> {
    let kkt = assemble_rt_kkt(market, pattern)?;
    let participants = market.participants();
    let n_vars = participants.n_rt();
    let n = pattern.len();

    let primal_rows = kkt.z_inv.rows(0, n_vars).into_owned();
    let dual_rows = kkt.z_inv.rows(n_vars, n + 1).into_owned();

    // q_rt = coupling * q_da + W * (rhs_real x + rhs_const)
    let coupling = &primal_rows * &kkt.rhs_da_dispatch;
    let dispatch_commit = &coupling * &da_maps.dispatch_commit;
    let dispatch_real = &primal_rows * &kkt.rhs_real;
    let dispatch_const = &coupling * &da_maps.dispatch_const + &primal_rows * &kkt.rhs_const;

    let lift = price_lift(market.n_buses(), n_vars, &kkt.a) * primal_rows.transpose();
    let upsilon_rt = DMatrix::from_diagonal(&participants.alphas(Stage::RealTime));
    let link_costs =
        &market.incidence().e_g_dr * DMatrix::from_diagonal(&participants.alphas(Stage::DayAhead));
    let betas_rt = participants.betas(Stage::RealTime);

    let price_commit =
        &lift * (&upsilon_rt * &dispatch_commit + &link_costs * &da_maps.dispatch_commit);
    let price_real = &lift * &upsilon_rt * &dispatch_real;
    let price_const =
        &lift * (&upsilon_rt * &dispatch_const + &link_costs * &da_maps.dispatch_const + betas_rt);

    Ok(RtAffineMaps {
        pattern: pattern.clone(),
        dispatch_commit,
        dispatch_real,
        dispatch_const,
        price_commit,
        price_real,
        price_const,
        primal_rows,
        dual_rows,
        kkt,
        da_dispatch_commit: da_maps.dispatch_commit.clone(),
        da_dispatch_const: da_maps.dispatch_const.clone(),
    })
}

/// Real-time maps conditioned on a fixed numeric day-ahead dispatch, affine
/// in the realized output only. Used when the day-ahead stage has been
/// re-solved exactly rather than represented by its own affine map.
#[derive(Debug, Clone)]
pub struct RtMapsFixedDa {
    pub dispatch_real: DMatrix<f64>,
    pub dispatch_const: DVector<f64>,
    /// Price sensitivity to realized output (buses x producers).
    pub price_real: DMatrix<f64>,
    pub price_const: DVector<f64>,
}

impl RtMapsFixedDa {
    pub fn prices_at(&self, realized: &DVector<f64>) -> DVector<f64> {
        &self.price_real * realized + &self.price_const
    }
}

/// Build real-time maps for a pattern with the day-ahead dispatch held at a
/// numeric value.
pub fn build_rt_maps_fixed_da(
    market: &PowerMarket,
    pattern: &CongestionPattern,
    q_da: &DVector<f64>,
) -> Result<RtMapsFixedDa> {
    let kkt = assemble_rt_kkt(market, pattern)?;
    let participants = market.participants();
    let n_vars = participants.n_rt();

    let primal_rows = kkt.z_inv.rows(0, n_vars).into_owned();
    let dispatch_real = &primal_rows * &kkt.rhs_real;
    let dispatch_const = &primal_rows * (&kkt.rhs_da_dispatch * q_da + &kkt.rhs_const);

    let lift = price_lift(market.n_buses(), n_vars, &kkt.a) * primal_rows.transpose();
    let upsilon_rt = DMatrix::from_diagonal(&participants.alphas(Stage::RealTime));
    let link_costs =
        &market.incidence().e_g_dr * DMatrix::from_diagonal(&participants.alphas(Stage::DayAhead));
    let betas_rt = participants.betas(Stage::RealTime);

    let price_real = &lift * &upsilon_rt * &dispatch_real;
    let price_const =
        &lift * (&upsilon_rt * &dispatch_const + &link_costs * q_da + betas_rt);

    Ok(RtMapsFixedDa { dispatch_real, dispatch_const, price_real, price_const })
}
