//! Market participants, cost functions, and participant-to-bus incidence.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CaseIssue, Error, Result};
use crate::network::{self, NetworkCase, PtdfMatrix};

/// Market stage a generator or congestion pattern belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    DayAhead,
    RealTime,
}

impl core::fmt::Display for Stage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Stage::DayAhead => write!(f, "day-ahead"),
            Stage::RealTime => write!(f, "real-time"),
        }
    }
}

/// A conventional generator with quadratic cost `0.5*alpha*q^2 + beta*q`.
///
/// `alpha` must be strictly positive: the closed-form dispatch maps invert a
/// KKT matrix whose curvature block is `diag(alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGenerator {
    pub id: usize,
    pub bus: usize,
    /// Quadratic cost coefficient, $/MWh^2.
    pub alpha: f64,
    /// Linear cost coefficient, $/MWh.
    pub beta: f64,
    pub stage: Stage,
    /// For a real-time generator that also clears the day-ahead market: the
    /// id of its day-ahead twin. Its real-time cost then applies to the
    /// unit's total output across both stages.
    pub da_link: Option<usize>,
}

impl ConvGenerator {
    pub fn day_ahead(id: usize, bus: usize, alpha: f64, beta: f64) -> Self {
        ConvGenerator { id, bus, alpha, beta, stage: Stage::DayAhead, da_link: None }
    }

    pub fn real_time(id: usize, bus: usize, alpha: f64, beta: f64, da_link: Option<usize>) -> Self {
        ConvGenerator { id, bus, alpha, beta, stage: Stage::RealTime, da_link }
    }
}

/// Ratio of std to mean above which renewable output samples are truncated
/// at zero. Below it the normal's negative mass is negligible (< ~0.04%)
/// and plain normal draws are used.
pub const TRUNCATION_RATIO: f64 = 0.3;

/// A renewable power producer: zero marginal cost, random output.
#[derive(Debug, Clone, PartialEq)]
pub struct RppProfile {
    pub id: usize,
    pub bus: usize,
    /// Forecast mean output, MW.
    pub mean: f64,
    /// Forecast error standard deviation, MW.
    pub std: f64,
}

impl RppProfile {
    /// Draw one realized output.
    ///
    /// Samples are independent normals; when the relative uncertainty
    /// exceeds [`TRUNCATION_RATIO`] the draw is truncated at 0 MW by
    /// rejection so physical output stays nonnegative.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        let normal = Normal::new(self.mean, self.std).expect("std is validated nonnegative");
        let truncate = self.mean <= 0.0 || self.std / self.mean > TRUNCATION_RATIO;
        if !truncate {
            return normal.sample(rng);
        }
        for _ in 0..1000 {
            let draw = normal.sample(rng);
            if draw >= 0.0 {
                return draw;
            }
        }
        0.0
    }
}

/// Draw one joint realization for all producers.
pub fn sample_rpp_outputs(rpps: &[RppProfile], rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(rpps.len(), rpps.iter().map(|r| r.sample(rng)))
}

/// Independent, reproducible RNG stream for one scenario index.
///
/// Streams derived from the same seed never overlap across scenario
/// indices, so scenario evaluations stay deterministic regardless of
/// evaluation order.
pub fn scenario_stream(seed: u64, scenario: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(scenario.wrapping_add(1));
    rng
}

/// The participant side of a case: generators per stage and producers.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParticipants {
    da_generators: Vec<ConvGenerator>,
    rt_generators: Vec<ConvGenerator>,
    rpps: Vec<RppProfile>,
}

impl MarketParticipants {
    /// Build and validate the participant set, aggregating issues.
    pub fn new(
        mut da_generators: Vec<ConvGenerator>,
        mut rt_generators: Vec<ConvGenerator>,
        mut rpps: Vec<RppProfile>,
    ) -> Result<Self> {
        let mut issues = Vec::new();

        fn check_ids<T>(items: &[T], id: impl Fn(&T) -> usize, entity: &'static str, issues: &mut Vec<CaseIssue>) {
            let mut contiguous = true;
            for (i, item) in items.iter().enumerate() {
                if i > 0 && id(item) == id(&items[i - 1]) {
                    issues.push(CaseIssue::DuplicateParticipantId { entity, id: id(item) });
                } else if id(item) != i {
                    contiguous = false;
                }
            }
            if !contiguous {
                issues.push(CaseIssue::NonContiguousParticipantIds { entity });
            }
        }

        da_generators.sort_by_key(|g| g.id);
        rt_generators.sort_by_key(|g| g.id);
        rpps.sort_by_key(|r| r.id);
        check_ids(&da_generators, |g| g.id, "day-ahead generator", &mut issues);
        check_ids(&rt_generators, |g| g.id, "real-time generator", &mut issues);
        check_ids(&rpps, |r| r.id, "renewable producer", &mut issues);

        if da_generators.is_empty() {
            issues.push(CaseIssue::NoDaGenerators);
        }

        for gen in da_generators.iter().chain(rt_generators.iter()) {
            if gen.alpha <= 0.0 {
                issues.push(CaseIssue::NonPositiveAlpha { stage: gen.stage, generator: gen.id });
            }
        }
        for gen in &da_generators {
            debug_assert_eq!(gen.stage, Stage::DayAhead);
        }
        for gen in &rt_generators {
            debug_assert_eq!(gen.stage, Stage::RealTime);
            if let Some(da_id) = gen.da_link {
                match da_generators.iter().find(|d| d.id == da_id) {
                    None => {
                        issues.push(CaseIssue::UnknownDaLink { rt_generator: gen.id, da_id })
                    }
                    // A linked pair is one physical unit; its quadratic
                    // coefficient must agree across stages or the two-stage
                    // cost model is inconsistent.
                    Some(da) if (da.alpha - gen.alpha).abs() > 1e-12 => {
                        issues.push(CaseIssue::LinkedAlphaMismatch { rt_generator: gen.id })
                    }
                    Some(_) => {}
                }
            }
        }
        for rpp in &rpps {
            if rpp.std < 0.0 {
                issues.push(CaseIssue::NegativeStd { rpp: rpp.id });
            }
        }

        if issues.is_empty() {
            Ok(MarketParticipants { da_generators, rt_generators, rpps })
        } else {
            Err(Error::InvalidCase(issues))
        }
    }

    pub fn da_generators(&self) -> &[ConvGenerator] {
        &self.da_generators
    }

    pub fn rt_generators(&self) -> &[ConvGenerator] {
        &self.rt_generators
    }

    pub fn rpps(&self) -> &[RppProfile] {
        &self.rpps
    }

    pub fn n_da(&self) -> usize {
        self.da_generators.len()
    }

    pub fn n_rt(&self) -> usize {
        self.rt_generators.len()
    }

    pub fn n_rpps(&self) -> usize {
        self.rpps.len()
    }

    /// Vector of quadratic coefficients for one stage.
    pub fn alphas(&self, stage: Stage) -> DVector<f64> {
        let gens = self.stage_generators(stage);
        DVector::from_iterator(gens.len(), gens.iter().map(|g| g.alpha))
    }

    /// Vector of linear coefficients for one stage.
    pub fn betas(&self, stage: Stage) -> DVector<f64> {
        let gens = self.stage_generators(stage);
        DVector::from_iterator(gens.len(), gens.iter().map(|g| g.beta))
    }

    /// Producer mean-output vector.
    pub fn rpp_means(&self) -> DVector<f64> {
        DVector::from_iterator(self.rpps.len(), self.rpps.iter().map(|r| r.mean))
    }

    /// Producer output standard deviations.
    pub fn rpp_stds(&self) -> DVector<f64> {
        DVector::from_iterator(self.rpps.len(), self.rpps.iter().map(|r| r.std))
    }

    pub fn stage_generators(&self, stage: Stage) -> &[ConvGenerator] {
        match stage {
            Stage::DayAhead => &self.da_generators,
            Stage::RealTime => &self.rt_generators,
        }
    }

    /// Same participants with every producer's std set to `ratio * mean`.
    pub fn with_std_over_mean(&self, ratio: f64) -> Self {
        let mut out = self.clone();
        for rpp in &mut out.rpps {
            rpp.std = ratio * rpp.mean;
        }
        out
    }

    /// Split every producer into `parts` equal independent producers, each
    /// with `mean/parts` and `std/parts`, keeping the bus assignments.
    /// Producer ids are renumbered consecutively.
    pub fn split_rpps(&self, parts: usize) -> Self {
        assert!(parts >= 1, "cannot split into zero parts");
        let mut rpps = Vec::with_capacity(self.rpps.len() * parts);
        for rpp in &self.rpps {
            for _ in 0..parts {
                rpps.push(RppProfile {
                    id: rpps.len(),
                    bus: rpp.bus,
                    mean: rpp.mean / parts as f64,
                    std: rpp.std / parts as f64,
                });
            }
        }
        MarketParticipants {
            da_generators: self.da_generators.clone(),
            rt_generators: self.rt_generators.clone(),
            rpps,
        }
    }
}

/// Total quadratic generation cost of one stage's dispatch, $.
pub fn total_cost(dispatch: &DVector<f64>, generators: &[ConvGenerator]) -> f64 {
    debug_assert_eq!(dispatch.len(), generators.len());
    dispatch
        .iter()
        .zip(generators)
        .map(|(q, g)| 0.5 * g.alpha * q * q + g.beta * q)
        .sum()
}

/// 0/1 maps from participants to buses.
///
/// Each column of the bus maps carries exactly one 1 (every participant sits
/// on one bus). The stage-link map has at most one 1 per row.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMaps {
    /// Buses x day-ahead generators.
    pub e_g_da: DMatrix<f64>,
    /// Buses x real-time generators.
    pub e_g_rt: DMatrix<f64>,
    /// Buses x renewable producers.
    pub e_r: DMatrix<f64>,
    /// Real-time x day-ahead generators; row j has a 1 in column i when the
    /// real-time generator j is the day-ahead generator i.
    pub e_g_dr: DMatrix<f64>,
}

/// Build the incidence maps for a validated case/participant pair.
pub fn build_incidence(case: &NetworkCase, participants: &MarketParticipants) -> IncidenceMaps {
    let n = case.n_buses();
    let mut e_g_da = DMatrix::zeros(n, participants.n_da());
    for gen in participants.da_generators() {
        e_g_da[(gen.bus, gen.id)] = 1.0;
    }
    let mut e_g_rt = DMatrix::zeros(n, participants.n_rt());
    let mut e_g_dr = DMatrix::zeros(participants.n_rt(), participants.n_da());
    for gen in participants.rt_generators() {
        e_g_rt[(gen.bus, gen.id)] = 1.0;
        if let Some(da_id) = gen.da_link {
            e_g_dr[(gen.id, da_id)] = 1.0;
        }
    }
    let mut e_r = DMatrix::zeros(n, participants.n_rpps());
    for rpp in participants.rpps() {
        e_r[(rpp.bus, rpp.id)] = 1.0;
    }
    IncidenceMaps { e_g_da, e_g_rt, e_r, e_g_dr }
}

/// A validated case bundled with its derived sensitivities.
///
/// Everything inside is immutable after construction, so the model can be
/// shared freely across threads; all solver entry points take `&PowerMarket`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMarket {
    case: NetworkCase,
    participants: MarketParticipants,
    incidence: IncidenceMaps,
    ptdf: PtdfMatrix,
}

impl PowerMarket {
    /// Cross-validate participants against the network and precompute the
    /// PTDF matrix and incidence maps.
    pub fn new(case: NetworkCase, participants: MarketParticipants) -> Result<Self> {
        let mut issues = Vec::new();
        let n = case.n_buses();
        for gen in participants.da_generators().iter().chain(participants.rt_generators()) {
            if gen.bus >= n {
                issues.push(CaseIssue::UnknownBusReference {
                    entity: format!("{} generator {}", gen.stage, gen.id),
                    bus: gen.bus,
                });
            }
        }
        for rpp in participants.rpps() {
            if rpp.bus >= n {
                issues.push(CaseIssue::UnknownBusReference {
                    entity: format!("renewable producer {}", rpp.id),
                    bus: rpp.bus,
                });
            }
        }
        if !issues.is_empty() {
            return Err(Error::InvalidCase(issues));
        }
        let ptdf = network::compute_ptdf(&case)?;
        let incidence = build_incidence(&case, &participants);
        Ok(PowerMarket { case, participants, incidence, ptdf })
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn participants(&self) -> &MarketParticipants {
        &self.participants
    }

    pub fn incidence(&self) -> &IncidenceMaps {
        &self.incidence
    }

    pub fn ptdf(&self) -> &PtdfMatrix {
        &self.ptdf
    }

    pub fn n_buses(&self) -> usize {
        self.case.n_buses()
    }

    pub fn n_lines(&self) -> usize {
        self.case.n_lines()
    }

    /// Same network and sensitivities with replaced nodal loads.
    pub fn with_loads(&self, loads: &DVector<f64>) -> Result<Self> {
        let case = self.case.with_loads(loads)?;
        Ok(PowerMarket {
            case,
            participants: self.participants.clone(),
            incidence: self.incidence.clone(),
            // Loads do not enter the susceptance matrix.
            ptdf: self.ptdf.clone(),
        })
    }

    /// Same network with one line capacity replaced.
    pub fn with_line_capacity(&self, line: usize, capacity: f64) -> Result<Self> {
        let case = self.case.with_line_capacity(line, capacity)?;
        Ok(PowerMarket {
            case,
            participants: self.participants.clone(),
            incidence: self.incidence.clone(),
            ptdf: self.ptdf.clone(),
        })
    }

    /// Same network with a different participant set.
    pub fn with_participants(&self, participants: MarketParticipants) -> Result<Self> {
        PowerMarket::new(self.case.clone(), participants)
    }
}
