//! Scenario-based social optimum: the benchmark a single planner with full
//! distributional knowledge would reach.
//!
//! The planner co-optimizes one day-ahead dispatch and a real-time recourse
//! dispatch per renewable scenario, under a per-scenario power balance. Line
//! limits are soft: excess flow in either direction is absorbed by slack
//! variables and charged a quadratic penalty, so the problem is feasible for
//! every scenario draw. Eliminating the slacks analytically turns each
//! penalty into a one-sided quadratic hinge; the solver iterates on the set
//! of active hinges, solving the equality-constrained KKT system exactly at
//! each step via a Schur complement over the (independent) scenario blocks.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::invert_checked;
use crate::market::{
    sample_rpp_outputs, scenario_stream, total_cost, PowerMarket, RppProfile, Stage,
};

/// Default quadratic penalty on excess line flow, $/(MW)^2.
pub const DEFAULT_PENALTY: f64 = 5000.0;

/// One renewable-output scenario with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Realized output per producer, MW.
    pub outputs: DVector<f64>,
    pub probability: f64,
}

/// A weighted scenario collection plus the soft-limit penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
    penalty: f64,
}

impl ScenarioSet {
    /// Probabilities must be positive and sum to one within 1e-9; the
    /// penalty must be positive.
    pub fn new(scenarios: Vec<Scenario>, penalty: f64) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::InvalidScenarioSet { reason: "no scenarios" });
        }
        if scenarios.iter().any(|s| s.probability <= 0.0) {
            return Err(Error::InvalidScenarioSet { reason: "nonpositive probability" });
        }
        let total: f64 = scenarios.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidScenarioSet { reason: "probabilities do not sum to one" });
        }
        if penalty <= 0.0 {
            return Err(Error::InvalidScenarioSet { reason: "nonpositive penalty" });
        }
        Ok(ScenarioSet { scenarios, penalty })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn with_penalty(self, penalty: f64) -> Result<Self> {
        ScenarioSet::new(self.scenarios, penalty)
    }
}

/// Draw `n` equiprobable scenarios from the producers' output distribution.
///
/// Scenario `i` consumes its own RNG stream derived from `(seed, i)`, so the
/// set is reproducible and independent of evaluation order.
pub fn generate_scenarios(rpps: &[RppProfile], n: usize, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::InvalidScenarioSet { reason: "no scenarios" });
    }
    let probability = 1.0 / n as f64;
    let scenarios = (0..n)
        .map(|i| {
            let mut rng = scenario_stream(seed, i as u64);
            Scenario { outputs: sample_rpp_outputs(rpps, &mut rng), probability }
        })
        .collect();
    ScenarioSet::new(scenarios, DEFAULT_PENALTY)
}

/// Solution of the planner problem.
#[derive(Debug, Clone)]
pub struct SocialOptimum {
    /// Day-ahead dispatch, MW.
    pub q_da: DVector<f64>,
    /// Real-time dispatch per scenario (generators x scenarios), MW.
    pub q_rt: DMatrix<f64>,
    /// Excess flow along each line's orientation (lines x scenarios), MW.
    pub slack_forward: DMatrix<f64>,
    /// Excess flow against each line's orientation (lines x scenarios), MW.
    pub slack_reverse: DMatrix<f64>,
    /// Expected generation cost, penalty excluded, $.
    pub expected_cost: f64,
    /// Objective value including penalty terms, $.
    pub expected_cost_with_penalty: f64,
    /// Hinge iterations used.
    pub iterations: usize,
}

struct PlannerData<'a> {
    market: &'a PowerMarket,
    set: &'a ScenarioSet,
    n_da: usize,
    n_rt: usize,
    n_lines: usize,
    ups_da: DVector<f64>,
    beta_da: DVector<f64>,
    ups_rt: DVector<f64>,
    beta_rt: DVector<f64>,
    /// Line-flow sensitivity to day-ahead dispatch (lines x generators).
    rows_da: DMatrix<f64>,
    /// Line-flow sensitivity to real-time dispatch.
    rows_rt: DMatrix<f64>,
    /// Flow offset per scenario with all dispatch at zero (lines x scenarios).
    base_flows: DMatrix<f64>,
    /// Balance target per scenario.
    targets: DVector<f64>,
}

/// Active hinge: (line, +1 for forward excess / -1 for reverse excess).
type HingeSet = Vec<(usize, f64)>;

impl<'a> PlannerData<'a> {
    fn new(market: &'a PowerMarket, set: &'a ScenarioSet) -> Result<Self> {
        let parts = market.participants();
        let n_rt = parts.n_rt();
        if n_rt == 0 {
            return Err(Error::NoGenerators { stage: Stage::RealTime });
        }
        let k = parts.n_rpps();
        for s in set.scenarios() {
            if s.outputs.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: s.outputs.len() });
            }
        }
        let inc = market.incidence();
        let ptdf = market.ptdf().values();
        let loads = market.case().loads();
        let total_load = market.case().total_load();
        let n_scen = set.len();
        let n_lines = market.n_lines();

        let mut base_flows = DMatrix::zeros(n_lines, n_scen);
        let mut targets = DVector::zeros(n_scen);
        for (y, s) in set.scenarios().iter().enumerate() {
            let injections = &inc.e_r * &s.outputs - &loads;
            base_flows.set_column(y, &(ptdf * injections));
            targets[y] = total_load - s.outputs.sum();
        }

        Ok(PlannerData {
            market,
            set,
            n_da: parts.n_da(),
            n_rt,
            n_lines,
            ups_da: parts.alphas(Stage::DayAhead),
            beta_da: parts.betas(Stage::DayAhead),
            ups_rt: parts.alphas(Stage::RealTime),
            beta_rt: parts.betas(Stage::RealTime),
            rows_da: ptdf * &inc.e_g_da,
            rows_rt: ptdf * &inc.e_g_rt,
            base_flows,
            targets,
        })
    }

    /// Flows of one scenario at a given point.
    fn flows(&self, y: usize, q_da: &DVector<f64>, q_rt_y: &DVector<f64>) -> DVector<f64> {
        &self.rows_da * q_da + &self.rows_rt * q_rt_y + self.base_flows.column(y)
    }

    /// True objective: (expected generation cost, total hinge penalty).
    fn objective(&self, q_da: &DVector<f64>, q_rt: &DMatrix<f64>) -> (f64, f64) {
        let parts = self.market.participants();
        let e_dr = &self.market.incidence().e_g_dr;
        let caps = self.market.case().capacities();
        let mut cost = total_cost(q_da, parts.da_generators());
        let mut penalty = 0.0;
        for (y, s) in self.set.scenarios().iter().enumerate() {
            let q_rt_y = q_rt.column(y).into_owned();
            let totals = &q_rt_y + e_dr * q_da;
            cost += s.probability * total_cost(&totals, parts.rt_generators());
            let flows = self.flows(y, q_da, &q_rt_y);
            for l in 0..self.n_lines {
                let excess = flows[l].abs() - caps[l];
                if excess > 0.0 {
                    penalty += self.set.penalty() * excess * excess;
                }
            }
        }
        (cost, penalty)
    }

    /// Hinges active at a point, per scenario.
    fn activation(&self, q_da: &DVector<f64>, q_rt: &DMatrix<f64>) -> Vec<HingeSet> {
        let caps = self.market.case().capacities();
        (0..self.set.len())
            .map(|y| {
                let q_rt_y = q_rt.column(y).into_owned();
                let flows = self.flows(y, q_da, &q_rt_y);
                let mut set = HingeSet::new();
                for l in 0..self.n_lines {
                    if flows[l] - caps[l] > 0.0 {
                        set.push((l, 1.0));
                    } else if -flows[l] - caps[l] > 0.0 {
                        set.push((l, -1.0));
                    }
                }
                set
            })
            .collect()
    }

    /// Solve the equality-constrained KKT system for a fixed hinge set,
    /// eliminating each scenario block through a Schur complement on the
    /// day-ahead variables.
    fn solve_kkt(&self, active: &[HingeSet]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (n_da, n_rt) = (self.n_da, self.n_rt);
        let e_dr = &self.market.incidence().e_g_dr;
        let caps = self.market.case().capacities();
        let psi2 = 2.0 * self.set.penalty();

        // Shared-unit couplings, identical across scenarios.
        let ups_rt_mat = DMatrix::from_diagonal(&self.ups_rt);
        let rd_shared = &ups_rt_mat * e_dr; // J x I
        let dd_shared = e_dr.transpose() * &rd_shared; // I x I
        let beta_shared = e_dr.transpose() * &self.beta_rt; // I

        let mut a_dd = DMatrix::from_diagonal(&self.ups_da);
        let mut rhs_d = -self.beta_da.clone();
        let block = n_rt + 1;

        let mut schur = DMatrix::zeros(n_da, n_da);
        let mut schur_rhs = DVector::zeros(n_da);
        let mut inverses: Vec<DMatrix<f64>> = Vec::with_capacity(self.set.len());
        let mut couplings: Vec<DMatrix<f64>> = Vec::with_capacity(self.set.len());
        let mut rhs_blocks: Vec<DVector<f64>> = Vec::with_capacity(self.set.len());

        for (y, s) in self.set.scenarios().iter().enumerate() {
            let zeta = s.probability;
            a_dd += zeta * &dd_shared;
            rhs_d -= zeta * &beta_shared;

            let mut b = DMatrix::zeros(block, block);
            let mut c = DMatrix::zeros(block, n_da);
            let mut rhs_y = DVector::zeros(block);

            for j in 0..n_rt {
                b[(j, j)] = zeta * self.ups_rt[j];
                b[(j, n_rt)] = 1.0;
                b[(n_rt, j)] = 1.0;
            }
            c.view_mut((0, 0), (n_rt, n_da)).copy_from(&(zeta * &rd_shared));
            for i in 0..n_da {
                c[(n_rt, i)] = 1.0;
            }
            rhs_y.rows_mut(0, n_rt).copy_from(&(-zeta * &self.beta_rt));
            rhs_y[n_rt] = self.targets[y];

            for (l, sign) in &active[y] {
                let row_d = self.rows_da.row(*l);
                let row_r = self.rows_rt.row(*l);
                let offset = sign * self.base_flows[(*l, y)] - caps[*l];
                for i in 0..n_da {
                    for i2 in 0..n_da {
                        a_dd[(i, i2)] += psi2 * row_d[i] * row_d[i2];
                    }
                    // sign^2 = 1 in the quadratic term; the constant keeps one.
                    rhs_d[i] -= psi2 * offset * sign * row_d[i];
                    for j in 0..n_rt {
                        c[(j, i)] += psi2 * row_r[j] * row_d[i];
                    }
                }
                for j in 0..n_rt {
                    for j2 in 0..n_rt {
                        b[(j, j2)] += psi2 * row_r[j] * row_r[j2];
                    }
                    rhs_y[j] -= psi2 * offset * sign * row_r[j];
                }
            }

            let b_inv = invert_checked(&b).ok_or(Error::SingularKkt)?;
            let b_inv_c = &b_inv * &c;
            schur += c.transpose() * &b_inv_c;
            schur_rhs += c.transpose() * (&b_inv * &rhs_y);
            inverses.push(b_inv);
            couplings.push(c);
            rhs_blocks.push(rhs_y);
        }

        let s_mat = a_dd - schur;
        let s_inv = invert_checked(&s_mat).ok_or(Error::SingularKkt)?;
        let q_da = s_inv * (rhs_d - schur_rhs);

        let mut q_rt = DMatrix::zeros(n_rt, self.set.len());
        for y in 0..self.set.len() {
            let block_sol = &inverses[y] * (&rhs_blocks[y] - &couplings[y] * &q_da);
            q_rt.set_column(y, &block_sol.rows(0, n_rt).into_owned());
        }
        Ok((q_da, q_rt))
    }
}

/// Solve the planner problem for a scenario set.
pub fn solve_social_optimum(market: &PowerMarket, set: &ScenarioSet) -> Result<SocialOptimum> {
    let data = PlannerData::new(market, set)?;
    let caps = market.case().capacities();

    let mut active: Vec<HingeSet> = alloc::vec![HingeSet::new(); set.len()];
    let (mut q_da, mut q_rt) = data.solve_kkt(&active)?;
    let mut current = data.objective(&q_da, &q_rt);
    let mut iterations = 1;
    active = data.activation(&q_da, &q_rt);

    loop {
        if iterations > 300 {
            return Err(Error::SocialOptimumStalled);
        }
        let (cand_da, cand_rt) = data.solve_kkt(&active)?;
        iterations += 1;
        let cand_active = data.activation(&cand_da, &cand_rt);
        if cand_active == active {
            // The candidate satisfies the exact optimality system of its own
            // hinge region: global optimum of the convex objective.
            q_da = cand_da;
            q_rt = cand_rt;
            break;
        }
        let cand_obj = data.objective(&cand_da, &cand_rt);
        if cand_obj.0 + cand_obj.1 < current.0 + current.1 - 1e-12 {
            q_da = cand_da;
            q_rt = cand_rt;
            current = cand_obj;
            active = cand_active;
            continue;
        }
        // The full step does not descend: backtrack toward the candidate.
        let mut step = 0.5;
        let mut improved = false;
        for _ in 0..40 {
            let trial_da = &q_da + (&cand_da - &q_da) * step;
            let trial_rt = &q_rt + (&cand_rt - &q_rt) * step;
            let trial_obj = data.objective(&trial_da, &trial_rt);
            if trial_obj.0 + trial_obj.1 < current.0 + current.1 - 1e-12 {
                q_da = trial_da;
                q_rt = trial_rt;
                current = trial_obj;
                active = data.activation(&q_da, &q_rt);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            // No descent toward the candidate at any step length: the
            // current point is optimal to numerical precision.
            break;
        }
    }

    let (expected_cost, penalty) = data.objective(&q_da, &q_rt);
    let n_lines = market.n_lines();
    let mut slack_forward = DMatrix::zeros(n_lines, set.len());
    let mut slack_reverse = DMatrix::zeros(n_lines, set.len());
    for y in 0..set.len() {
        let flows = data.flows(y, &q_da, &q_rt.column(y).into_owned());
        for l in 0..n_lines {
            slack_forward[(l, y)] = (flows[l] - caps[l]).max(0.0);
            slack_reverse[(l, y)] = (-flows[l] - caps[l]).max(0.0);
        }
    }

    Ok(SocialOptimum {
        q_da,
        q_rt,
        slack_forward,
        slack_reverse,
        expected_cost,
        expected_cost_with_penalty: expected_cost + penalty,
        iterations,
    })
}
