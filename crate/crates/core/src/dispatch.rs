//! Exact economic dispatch for both market stages.
//!
//! The stage problems are strictly convex quadratic programs with one
//! balance equality and two-sided line-flow limits. The solver runs a
//! working-set iteration on top of the closed-form KKT assembly: solve the
//! equality-constrained system for the current trial pattern, add the most
//! violated line constraint in its violated direction, drop constraints
//! whose shadow price goes negative, and stop when the iterate is both
//! primal and dual feasible. A repeated working set falls back to exhaustive
//! enumeration over small patterns.
//!
//! Alongside clearing the market, the discovered binding set is what the
//! closed-form maps of [`crate::closedform`] are conditioned on, and the
//! solver doubles as their independent oracle in tests.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::closedform::{
    assemble_da_kkt, assemble_rt_kkt, signed_constraints, CongestionPattern, FlowDirection,
    KktSolution,
};
use crate::error::{Error, Result};
use crate::market::{total_cost, PowerMarket, Stage};

/// Line-flow feasibility tolerance, MW.
pub const FLOW_TOL_MW: f64 = 1e-6;

/// Dual feasibility tolerance; binding lines with shadow prices at or below
/// this are treated as degenerate and excluded from the reported pattern.
pub const DUAL_TOL: f64 = 1e-8;

/// Solver knobs.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Pattern-size cap for the enumeration fallback.
    pub max_pattern_size: usize,
    /// Iteration cap for the working-set loop.
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_pattern_size: 2, max_iterations: 200 }
    }
}

/// A cleared stage: dispatch, prices, binding set, and duals.
#[derive(Debug, Clone)]
pub struct DispatchResult {
    /// Stage generator dispatch, MW.
    pub dispatch: DVector<f64>,
    /// Locational prices, $/MWh per bus.
    pub lmps: DVector<f64>,
    /// Binding lines with strictly positive shadow prices.
    pub pattern: CongestionPattern,
    /// Stage objective value, $.
    pub objective: f64,
    /// Line flows at the optimum, MW.
    pub flows: DVector<f64>,
    /// Shadow prices of the binding lines, aligned with `pattern`.
    pub gammas: DVector<f64>,
    /// Balance-equation dual.
    pub tau: f64,
}

/// One stage dispatch problem seen by the working-set engine.
trait StageProblem {
    fn market(&self) -> &PowerMarket;
    fn stage(&self) -> Stage;
    fn n_vars(&self) -> usize;
    /// Bus incidence of the stage's own generators.
    fn stage_incidence(&self) -> &DMatrix<f64>;
    /// Net injection with the stage dispatch at zero.
    fn injection_base(&self) -> DVector<f64>;
    /// Required total stage dispatch.
    fn balance_target(&self) -> f64;
    fn objective(&self, dispatch: &DVector<f64>) -> f64;
    /// Assemble and solve the KKT system for a trial pattern.
    fn solve_pattern(&self, pattern: &CongestionPattern) -> Result<KktSolution>;
}

struct DaProblem<'a> {
    market: &'a PowerMarket,
    commitments: &'a DVector<f64>,
    base: DVector<f64>,
}

impl<'a> DaProblem<'a> {
    fn new(market: &'a PowerMarket, commitments: &'a DVector<f64>) -> Result<Self> {
        let k = market.participants().n_rpps();
        if commitments.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: commitments.len() });
        }
        let base = &market.incidence().e_r * commitments - market.case().loads();
        Ok(DaProblem { market, commitments, base })
    }
}

impl StageProblem for DaProblem<'_> {
    fn market(&self) -> &PowerMarket {
        self.market
    }

    fn stage(&self) -> Stage {
        Stage::DayAhead
    }

    fn n_vars(&self) -> usize {
        self.market.participants().n_da()
    }

    fn stage_incidence(&self) -> &DMatrix<f64> {
        &self.market.incidence().e_g_da
    }

    fn injection_base(&self) -> DVector<f64> {
        self.base.clone()
    }

    fn balance_target(&self) -> f64 {
        self.market.case().total_load() - self.commitments.sum()
    }

    fn objective(&self, dispatch: &DVector<f64>) -> f64 {
        total_cost(dispatch, self.market.participants().da_generators())
    }

    fn solve_pattern(&self, pattern: &CongestionPattern) -> Result<KktSolution> {
        Ok(assemble_da_kkt(self.market, pattern)?.solve(self.commitments))
    }
}

struct RtProblem<'a> {
    market: &'a PowerMarket,
    q_da: &'a DVector<f64>,
    realized: &'a DVector<f64>,
    rt_load: Option<&'a DVector<f64>>,
    base: DVector<f64>,
}

impl<'a> RtProblem<'a> {
    fn new(
        market: &'a PowerMarket,
        q_da: &'a DVector<f64>,
        realized: &'a DVector<f64>,
        rt_load: Option<&'a DVector<f64>>,
    ) -> Result<Self> {
        let parts = market.participants();
        if q_da.len() != parts.n_da() {
            return Err(Error::DimensionMismatch { expected: parts.n_da(), found: q_da.len() });
        }
        if realized.len() != parts.n_rpps() {
            return Err(Error::DimensionMismatch {
                expected: parts.n_rpps(),
                found: realized.len(),
            });
        }
        let inc = market.incidence();
        let mut base = &inc.e_g_da * q_da + &inc.e_r * realized - market.case().loads();
        if let Some(l) = rt_load {
            base -= l;
        }
        Ok(RtProblem { market, q_da, realized, rt_load, base })
    }
}

impl StageProblem for RtProblem<'_> {
    fn market(&self) -> &PowerMarket {
        self.market
    }

    fn stage(&self) -> Stage {
        Stage::RealTime
    }

    fn n_vars(&self) -> usize {
        self.market.participants().n_rt()
    }

    fn stage_incidence(&self) -> &DMatrix<f64> {
        &self.market.incidence().e_g_rt
    }

    fn injection_base(&self) -> DVector<f64> {
        self.base.clone()
    }

    fn balance_target(&self) -> f64 {
        let rt_load_total = self.rt_load.map_or(0.0, |l| l.sum());
        rt_load_total + self.market.case().total_load() - self.q_da.sum() - self.realized.sum()
    }

    fn objective(&self, dispatch: &DVector<f64>) -> f64 {
        // Units cleared in both stages are costed at their total output.
        let totals = dispatch + &self.market.incidence().e_g_dr * self.q_da;
        total_cost(&totals, self.market.participants().rt_generators())
    }

    fn solve_pattern(&self, pattern: &CongestionPattern) -> Result<KktSolution> {
        Ok(assemble_rt_kkt(self.market, pattern)?.solve(self.q_da, self.realized, self.rt_load))
    }
}

/// Clear the day-ahead market for a commitment vector.
pub fn solve_da(market: &PowerMarket, commitments: &DVector<f64>) -> Result<DispatchResult> {
    solve_da_opts(market, commitments, &SolveOptions::default())
}

pub fn solve_da_opts(
    market: &PowerMarket,
    commitments: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<DispatchResult> {
    let problem = DaProblem::new(market, commitments)?;
    active_set_solve(&problem, opts)
}

/// Clear the real-time market given the day-ahead dispatch and the realized
/// renewable output.
pub fn solve_rt(
    market: &PowerMarket,
    q_da: &DVector<f64>,
    realized: &DVector<f64>,
) -> Result<DispatchResult> {
    solve_rt_opts(market, q_da, realized, &SolveOptions::default())
}

pub fn solve_rt_opts(
    market: &PowerMarket,
    q_da: &DVector<f64>,
    realized: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<DispatchResult> {
    let problem = RtProblem::new(market, q_da, realized, None)?;
    active_set_solve(&problem, opts)
}

/// Real-time clearing with a nonzero fictitious real-time load, used by the
/// finite-difference price probe.
pub fn solve_rt_with_load(
    market: &PowerMarket,
    q_da: &DVector<f64>,
    realized: &DVector<f64>,
    rt_load: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<DispatchResult> {
    let problem = RtProblem::new(market, q_da, realized, Some(rt_load))?;
    active_set_solve(&problem, opts)
}

fn active_set_solve<P: StageProblem>(problem: &P, opts: &SolveOptions) -> Result<DispatchResult> {
    let market = problem.market();
    let stage = problem.stage();
    if problem.n_vars() == 0 {
        return Err(Error::NoGenerators { stage });
    }

    let mut working: Vec<(usize, FlowDirection)> = Vec::new();
    let mut seen: BTreeSet<Vec<(usize, bool)>> = BTreeSet::new();
    let mut stalled = true;

    for _ in 0..opts.max_iterations {
        let key: Vec<(usize, bool)> =
            working.iter().map(|(l, d)| (*l, *d == FlowDirection::Reverse)).collect();
        if !seen.insert(key) {
            // Working set repeated: hand over to enumeration.
            break;
        }

        let pattern = CongestionPattern::new(stage, working.clone())
            .expect("working set holds unique lines");
        let sol = match problem.solve_pattern(&pattern) {
            Ok(sol) => sol,
            Err(Error::SingularKkt) => break,
            Err(e) => return Err(e),
        };
        let flows = market.ptdf().values()
            * (problem.stage_incidence() * &sol.dispatch + problem.injection_base());

        // Violated line constraints outside the working set, worst first,
        // ties broken by lowest line id.
        let mut violations: Vec<(usize, FlowDirection, f64)> = Vec::new();
        for line in market.case().lines() {
            if working.iter().any(|(l, _)| *l == line.id) {
                continue;
            }
            let flow = flows[line.id];
            let (excess, dir) = if flow >= 0.0 {
                (flow - line.capacity, FlowDirection::Forward)
            } else {
                (-flow - line.capacity, FlowDirection::Reverse)
            };
            if excess > FLOW_TOL_MW {
                violations.push((line.id, dir, excess));
            }
        }

        if violations.is_empty() {
            let min_dual = sol.gammas.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_dual >= -DUAL_TOL {
                return finish(problem, working, sol, flows);
            }
            // Drop the most negative shadow price; first index wins ties,
            // which is the lowest line id.
            let mut drop_idx = 0;
            let mut drop_val = f64::INFINITY;
            for (t, g) in sol.gammas.iter().enumerate() {
                if *g < drop_val {
                    drop_val = *g;
                    drop_idx = t;
                }
            }
            working.remove(drop_idx);
            continue;
        }

        violations.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        let mut added = false;
        for (line, dir, _) in violations {
            let mut candidate = working.clone();
            let pos = candidate.partition_point(|(l, _)| *l < line);
            candidate.insert(pos, (line, dir));
            let trial = CongestionPattern::new(stage, candidate.clone())
                .expect("candidate holds unique lines");
            match problem.solve_pattern(&trial) {
                Ok(_) => {
                    working = candidate;
                    added = true;
                    break;
                }
                // Dependent rows: this line cannot join the basis.
                Err(Error::SingularKkt) => continue,
                Err(e) => return Err(e),
            }
        }
        if !added {
            break;
        }
        stalled = false;
    }

    let _ = stalled;
    enumerate_solve(problem, opts)
}

/// Strip degenerate binding lines and package the result.
fn finish<P: StageProblem>(
    problem: &P,
    working: Vec<(usize, FlowDirection)>,
    sol: KktSolution,
    flows: DVector<f64>,
) -> Result<DispatchResult> {
    let stage = problem.stage();
    let stripped: Vec<(usize, FlowDirection)> = working
        .iter()
        .zip(sol.gammas.iter())
        .filter(|(_, g)| **g > DUAL_TOL)
        .map(|((l, d), _)| (*l, *d))
        .collect();

    if stripped.len() != working.len() {
        // Degenerate lines sit exactly at capacity with zero price; the
        // reduced pattern must reproduce the same optimum.
        let pattern = CongestionPattern::new(stage, stripped).expect("subset of unique lines");
        if let Ok(sol2) = problem.solve_pattern(&pattern) {
            let flows2 = problem.market().ptdf().values()
                * (problem.stage_incidence() * &sol2.dispatch + problem.injection_base());
            if feasible(problem.market(), &pattern, &flows2)
                && sol2.gammas.iter().all(|g| *g >= -DUAL_TOL)
            {
                return Ok(package(problem, pattern, sol2, flows2));
            }
        }
    }
    let pattern = CongestionPattern::new(stage, working).expect("working set holds unique lines");
    Ok(package(problem, pattern, sol, flows))
}

fn feasible(market: &PowerMarket, pattern: &CongestionPattern, flows: &DVector<f64>) -> bool {
    market.case().lines().iter().all(|line| {
        pattern.entries().iter().any(|(l, _)| *l == line.id)
            || flows[line.id].abs() <= line.capacity + FLOW_TOL_MW
    })
}

fn package<P: StageProblem>(
    problem: &P,
    pattern: CongestionPattern,
    sol: KktSolution,
    flows: DVector<f64>,
) -> DispatchResult {
    let market = problem.market();
    let n_buses = market.n_buses();
    let (a, _) = signed_constraints(market, &pattern).expect("pattern lines were validated");
    // lambda = -tau 1 - A^T gamma, from the KKT stationarity identity.
    let lmps = DVector::from_element(n_buses, -sol.tau) - a.transpose() * &sol.gammas;
    DispatchResult {
        objective: problem.objective(&sol.dispatch),
        dispatch: sol.dispatch,
        lmps,
        pattern,
        flows,
        gammas: sol.gammas,
        tau: sol.tau,
    }
}

/// Exhaustive certification over all patterns up to the configured size.
fn enumerate_solve<P: StageProblem>(problem: &P, opts: &SolveOptions) -> Result<DispatchResult> {
    let market = problem.market();
    let stage = problem.stage();
    let n_lines = market.n_lines();
    // More binding rows than generators minus one cannot form a regular KKT.
    let cap = opts.max_pattern_size.min(n_lines).min(problem.n_vars().saturating_sub(1));

    for size in 0..=cap {
        for combo in combinations(n_lines, size) {
            for mask in 0u32..(1 << size) {
                let entries: Vec<(usize, FlowDirection)> = combo
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let dir = if mask & (1 << i) == 0 {
                            FlowDirection::Forward
                        } else {
                            FlowDirection::Reverse
                        };
                        (*l, dir)
                    })
                    .collect();
                let pattern =
                    CongestionPattern::new(stage, entries).expect("combination has unique lines");
                let sol = match problem.solve_pattern(&pattern) {
                    Ok(sol) => sol,
                    Err(Error::SingularKkt) => continue,
                    Err(e) => return Err(e),
                };
                if sol.gammas.iter().any(|g| *g < -DUAL_TOL) {
                    continue;
                }
                let flows = market.ptdf().values()
                    * (problem.stage_incidence() * &sol.dispatch + problem.injection_base());
                if !feasible(market, &pattern, &flows) {
                    continue;
                }
                let working = pattern.entries().to_vec();
                return finish(problem, working, sol, flows);
            }
        }
    }

    if probe_feasibility(problem) {
        Err(Error::SolverStalled { stage })
    } else {
        Err(Error::Infeasible { stage })
    }
}

/// Lexicographic k-combinations of `0..n`.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // Advance the rightmost index that can still move.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Decide whether any dispatch satisfies balance and line limits, by
/// minimizing a regularized sum of squared limit violations.
fn probe_feasibility<P: StageProblem>(problem: &P) -> bool {
    const REG: f64 = 1e-9;
    const PEN: f64 = 1.0;
    const EXCESS_TOL: f64 = 1e-5;

    let market = problem.market();
    let n_vars = problem.n_vars();
    let n_lines = market.n_lines();
    let e = problem.stage_incidence();
    let base = problem.injection_base();
    let target = problem.balance_target();
    let ptdf = market.ptdf().values();
    let caps = market.case().capacities();

    // Line rows projected on the stage generators, plus base flows.
    let gen_rows = ptdf * e; // lines x vars
    let base_flows = ptdf * &base;

    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut best_excess = f64::INFINITY;
    let mut seen: BTreeSet<Vec<(usize, bool)>> = BTreeSet::new();

    for _ in 0..100 {
        let key: Vec<(usize, bool)> = active.iter().map(|(l, s)| (*l, *s > 0.0)).collect();
        if !seen.insert(key) {
            break;
        }
        let size = n_vars + 1;
        let mut kkt = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for i in 0..n_vars {
            kkt[(i, i)] = REG;
            kkt[(i, n_vars)] = 1.0;
            kkt[(n_vars, i)] = 1.0;
        }
        rhs[n_vars] = target;
        for (line, sign) in &active {
            let row = gen_rows.row(*line).transpose() * *sign;
            let offset = sign * base_flows[*line] - caps[*line];
            for i in 0..n_vars {
                for j in 0..n_vars {
                    kkt[(i, j)] += 2.0 * PEN * row[i] * row[j];
                }
                rhs[i] -= 2.0 * PEN * offset * row[i];
            }
        }
        let Some(inv) = crate::linalg::invert_checked(&kkt) else {
            break;
        };
        let sol = inv * rhs;
        let q = sol.rows(0, n_vars).into_owned();
        let flows = &gen_rows * &q + &base_flows;
        let mut excess: f64 = 0.0;
        let mut next: Vec<(usize, f64)> = Vec::new();
        for l in 0..n_lines {
            if flows[l] - caps[l] > 0.0 {
                next.push((l, 1.0));
            } else if -flows[l] - caps[l] > 0.0 {
                next.push((l, -1.0));
            }
            excess = excess.max(flows[l].abs() - caps[l]);
        }
        best_excess = best_excess.min(excess);
        if excess <= EXCESS_TOL {
            return true;
        }
        if next == active {
            break;
        }
        active = next;
    }
    best_excess <= EXCESS_TOL
}

/// Finite-difference day-ahead price at one bus: perturb the load there and
/// re-solve. Retries with a ten-times smaller step, at most twice, when the
/// perturbation flips the binding set.
pub fn lmp_finite_difference_da(
    market: &PowerMarket,
    commitments: &DVector<f64>,
    bus: usize,
    epsilon: f64,
    opts: &SolveOptions,
) -> Result<f64> {
    let base = solve_da_opts(market, commitments, opts)?;
    let loads = market.case().loads();
    let mut step = epsilon;
    for _ in 0..3 {
        let mut bumped = loads.clone();
        bumped[bus] += step;
        let perturbed_market = market.with_loads(&bumped)?;
        let perturbed = solve_da_opts(&perturbed_market, commitments, opts)?;
        if perturbed.pattern == base.pattern {
            return Ok((perturbed.objective - base.objective) / step);
        }
        step /= 10.0;
    }
    Err(Error::BindingSetChanged)
}

/// Finite-difference real-time price at one bus: perturb the fictitious
/// real-time load there and re-solve.
pub fn lmp_finite_difference_rt(
    market: &PowerMarket,
    q_da: &DVector<f64>,
    realized: &DVector<f64>,
    bus: usize,
    epsilon: f64,
    opts: &SolveOptions,
) -> Result<f64> {
    let base = solve_rt_opts(market, q_da, realized, opts)?;
    let n_buses = market.n_buses();
    let mut step = epsilon;
    for _ in 0..3 {
        let mut rt_load = DVector::zeros(n_buses);
        rt_load[bus] = step;
        let perturbed = solve_rt_with_load(market, q_da, realized, &rt_load, opts)?;
        if perturbed.pattern == base.pattern {
            return Ok((perturbed.objective - base.objective) / step);
        }
        step /= 10.0;
    }
    Err(Error::BindingSetChanged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::build_da_maps;
    use crate::market::{ConvGenerator, MarketParticipants, RppProfile};
    use crate::network::{Bus, Line, NetworkCase};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn scalar_market(alpha: f64, beta: f64, load: f64) -> PowerMarket {
        let case = NetworkCase::new(vec![Bus { id: 0, load_da: load }], vec![], 0).unwrap();
        let participants = MarketParticipants::new(
            vec![ConvGenerator::day_ahead(0, 0, alpha, beta)],
            vec![ConvGenerator::real_time(0, 0, 0.4, 3.0, None)],
            vec![RppProfile { id: 0, bus: 0, mean: 6.0, std: 1.0 }],
        )
        .unwrap();
        PowerMarket::new(case, participants).unwrap()
    }

    #[test]
    fn scalar_da_dispatch() {
        let market = scalar_market(0.5, 2.0, 10.0);
        let result = solve_da(&market, &DVector::from_row_slice(&[4.0])).unwrap();
        assert!((result.dispatch[0] - 6.0).abs() < 1e-9);
        assert!((result.lmps[0] - (0.5 * 6.0 + 2.0)).abs() < 1e-9);
        assert!(result.pattern.is_empty());
    }

    #[test]
    fn equal_marginal_cost_split() {
        let case = NetworkCase::new(vec![Bus { id: 0, load_da: 9.0 }], vec![], 0).unwrap();
        let participants = MarketParticipants::new(
            vec![
                ConvGenerator::day_ahead(0, 0, 2.0, 0.0),
                ConvGenerator::day_ahead(1, 0, 4.0, 0.0),
            ],
            vec![ConvGenerator::real_time(0, 0, 1.0, 0.0, None)],
            vec![],
        )
        .unwrap();
        let market = PowerMarket::new(case, participants).unwrap();
        let result = solve_da(&market, &DVector::zeros(0)).unwrap();
        assert!((result.dispatch[0] - 6.0).abs() < 1e-9);
        assert!((result.dispatch[1] - 3.0).abs() < 1e-9);
        assert!((result.lmps[0] - 12.0).abs() < 1e-9);
    }

    fn congested_two_bus() -> PowerMarket {
        let case = NetworkCase::new(
            vec![Bus { id: 0, load_da: 0.0 }, Bus { id: 1, load_da: 10.0 }],
            vec![Line { id: 0, from_bus: 0, to_bus: 1, susceptance: 1.0, capacity: 5.0 }],
            0,
        )
        .unwrap();
        let participants = MarketParticipants::new(
            vec![
                ConvGenerator::day_ahead(0, 0, 0.1, 1.0),
                ConvGenerator::day_ahead(1, 1, 0.1, 10.0),
            ],
            vec![ConvGenerator::real_time(0, 1, 0.2, 12.0, None)],
            vec![],
        )
        .unwrap();
        PowerMarket::new(case, participants).unwrap()
    }

    #[test]
    fn congestion_splits_prices() {
        // Hand solve: line binds at 5 MW, each generator covers 5 MW,
        // gamma = 9, prices (1.5, 10.5).
        let market = congested_two_bus();
        let result = solve_da(&market, &DVector::zeros(0)).unwrap();
        assert_eq!(result.pattern.entries(), &[(0, FlowDirection::Forward)]);
        assert!((result.dispatch[0] - 5.0).abs() < 1e-9);
        assert!((result.dispatch[1] - 5.0).abs() < 1e-9);
        assert!((result.lmps[0] - 1.5).abs() < 1e-9);
        assert!((result.lmps[1] - 10.5).abs() < 1e-9);
        assert!((result.gammas[0] - 9.0).abs() < 1e-9);
        assert!((result.flows[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_transfer_is_detected() {
        // All generation behind a 5 MW line, 10 MW of load beyond it.
        let case = NetworkCase::new(
            vec![Bus { id: 0, load_da: 0.0 }, Bus { id: 1, load_da: 10.0 }],
            vec![Line { id: 0, from_bus: 0, to_bus: 1, susceptance: 1.0, capacity: 5.0 }],
            0,
        )
        .unwrap();
        let participants = MarketParticipants::new(
            vec![ConvGenerator::day_ahead(0, 0, 0.1, 1.0)],
            vec![],
            vec![],
        )
        .unwrap();
        let market = PowerMarket::new(case, participants).unwrap();
        let err = solve_da(&market, &DVector::zeros(0)).unwrap_err();
        assert_eq!(err, Error::Infeasible { stage: Stage::DayAhead });
    }

    #[test]
    fn rt_zero_deviation() {
        let market = scalar_market(0.5, 2.0, 10.0);
        let c = DVector::from_row_slice(&[4.0]);
        let da = solve_da(&market, &c).unwrap();
        let rt = solve_rt(&market, &da.dispatch, &c).unwrap();
        assert!(rt.dispatch[0].abs() < 1e-9);
        assert!((rt.lmps[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rt_shortfall_and_surplus() {
        let market = scalar_market(0.5, 2.0, 10.0);
        let c = DVector::from_row_slice(&[4.0]);
        let da = solve_da(&market, &c).unwrap();
        let short = solve_rt(&market, &da.dispatch, &DVector::from_row_slice(&[1.0])).unwrap();
        assert!((short.dispatch[0] - 3.0).abs() < 1e-9);
        assert!((short.lmps[0] - (0.4 * 3.0 + 3.0)).abs() < 1e-9);
        let surplus = solve_rt(&market, &da.dispatch, &DVector::from_row_slice(&[7.0])).unwrap();
        assert!((surplus.dispatch[0] + 3.0).abs() < 1e-9);
        assert!((surplus.lmps[0] - (-0.4 * 3.0 + 3.0)).abs() < 1e-9);
    }

    #[test]
    fn da_objective_monotone_in_commitments_scalar_family() {
        let market = scalar_market(0.5, 2.0, 10.0);
        let mut prev = f64::INFINITY;
        for c in [0.0, 1.0, 2.5, 4.0, 6.0, 8.0] {
            let result = solve_da(&market, &DVector::from_row_slice(&[c])).unwrap();
            assert!(result.objective < prev);
            prev = result.objective;
        }
    }

    #[test]
    fn finite_difference_matches_closed_form_prices() {
        let market = congested_two_bus();
        let c = DVector::zeros(0);
        let result = solve_da(&market, &c).unwrap();
        let maps = build_da_maps(&market, &result.pattern).unwrap();
        let closed = maps.prices_at(&c);
        for bus in 0..2 {
            let fd =
                lmp_finite_difference_da(&market, &c, bus, 1e-4, &SolveOptions::default()).unwrap();
            assert!((fd - closed[bus]).abs() < 1e-5, "bus {bus}: {fd} vs {}", closed[bus]);
            assert!((fd - result.lmps[bus]).abs() < 1e-5);
        }
    }

    #[test]
    fn uncongested_finite_difference_is_uniform() {
        let market = scalar_market(0.5, 2.0, 10.0);
        let c = DVector::from_row_slice(&[4.0]);
        let fd = lmp_finite_difference_da(&market, &c, 0, 1e-4, &SolveOptions::default()).unwrap();
        assert!((fd - 5.0).abs() < 1e-3);
    }

    #[test]
    fn shadow_price_matches_capacity_sensitivity() {
        // Relaxing a binding capacity by eps lowers cost by about gamma*eps.
        let market = congested_two_bus();
        let c = DVector::zeros(0);
        let base = solve_da(&market, &c).unwrap();
        let gamma = base.gammas[0];
        let eps = 1e-4;
        let relaxed = market.with_line_capacity(0, 5.0 + eps).unwrap();
        let bumped = solve_da(&relaxed, &c).unwrap();
        let delta = bumped.objective - base.objective;
        assert!((delta + gamma * eps).abs() < 1e-6, "delta {delta}, gamma {gamma}");
    }

    #[test]
    fn stationarity_and_complementarity_hold() {
        let market = congested_two_bus();
        let result = solve_da(&market, &DVector::zeros(0)).unwrap();
        // Stationarity: alpha q + beta + A_G^T gamma + tau 1 = 0.
        let parts = market.participants();
        let (a, _) = signed_constraints(&market, &result.pattern).unwrap();
        let a_gen = &a * &market.incidence().e_g_da;
        let residual = DMatrix::from_diagonal(&parts.alphas(Stage::DayAhead)) * &result.dispatch
            + parts.betas(Stage::DayAhead)
            + a_gen.transpose() * &result.gammas
            + DVector::from_element(parts.n_da(), result.tau);
        assert!(residual.amax() < 1e-6);
        // Complementary slackness on every line.
        for line in market.case().lines() {
            let slack = line.capacity - result.flows[line.id].abs();
            let gamma = result
                .pattern
                .entries()
                .iter()
                .position(|(l, _)| *l == line.id)
                .map_or(0.0, |t| result.gammas[t]);
            assert!(gamma * slack <= 1e-6);
        }
    }

    /// Random small systems where the working-set result must agree with
    /// exhaustive enumeration.
    #[test]
    fn active_set_agrees_with_enumeration() {
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let mut solved = 0;
        for _ in 0..250 {
            let Some((market, c)) = random_case(&mut rng) else { continue };
            let opts = SolveOptions {
                max_pattern_size: market.n_lines().min(market.participants().n_da()),
                ..Default::default()
            };
            let via_active = solve_da_opts(&market, &c, &opts);
            let problem = DaProblem::new(&market, &c).unwrap();
            let via_enum = enumerate_solve(&problem, &opts);
            match (via_active, via_enum) {
                (Ok(a), Ok(b)) => {
                    let scale = a.objective.abs().max(1.0);
                    assert!(
                        (a.objective - b.objective).abs() / scale < 1e-8,
                        "objectives diverge: {} vs {}",
                        a.objective,
                        b.objective
                    );
                    solved += 1;
                }
                (Err(Error::Infeasible { .. }), Err(Error::Infeasible { .. })) => {}
                (a, b) => panic!("solver disagreement: {a:?} vs {b:?}"),
            }
        }
        assert!(solved > 100, "only {solved} solvable cases generated");
    }

    fn random_case(rng: &mut ChaCha12Rng) -> Option<(PowerMarket, DVector<f64>)> {
        let n_buses = rng.gen_range(2..=4);
        let mut lines = Vec::new();
        for to in 1..n_buses {
            let from = rng.gen_range(0..to);
            lines.push(Line {
                id: lines.len(),
                from_bus: from,
                to_bus: to,
                susceptance: rng.gen_range(0.5..3.0),
                capacity: rng.gen_range(2.0..25.0),
            });
        }
        for _ in 0..rng.gen_range(0..=2) {
            let from = rng.gen_range(0..n_buses);
            let to = rng.gen_range(0..n_buses);
            if from == to {
                continue;
            }
            lines.push(Line {
                id: lines.len(),
                from_bus: from,
                to_bus: to,
                susceptance: rng.gen_range(0.5..3.0),
                capacity: rng.gen_range(2.0..25.0),
            });
        }
        let buses = (0..n_buses)
            .map(|id| Bus { id, load_da: rng.gen_range(0.0..20.0) })
            .collect();
        let case = NetworkCase::new(buses, lines, 0).ok()?;
        let n_da = rng.gen_range(1..=3);
        let da = (0..n_da)
            .map(|id| {
                ConvGenerator::day_ahead(
                    id,
                    rng.gen_range(0..n_buses),
                    rng.gen_range(0.05..0.8),
                    rng.gen_range(0.0..8.0),
                )
            })
            .collect();
        let participants = MarketParticipants::new(da, vec![], vec![]).ok()?;
        let market = PowerMarket::new(case, participants).ok()?;
        Some((market, DVector::zeros(0)))
    }
}
