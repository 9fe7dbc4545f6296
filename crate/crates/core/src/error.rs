//! Error types shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::market::Stage;

/// A single validation problem found while assembling a market case.
///
/// Case loading aggregates every issue it finds instead of stopping at the
/// first one, so a malformed file is reported in full.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseIssue {
    DuplicateBusId(usize),
    NonContiguousBusIds,
    NegativeLoad { bus: usize },
    DuplicateLineId(usize),
    NonContiguousLineIds,
    SelfLoop { line: usize },
    NonPositiveSusceptance { line: usize },
    NonPositiveCapacity { line: usize },
    UnknownBusReference { entity: String, bus: usize },
    InvalidSlackBus { bus: usize },
    DisconnectedGraph,
    DuplicateParticipantId { entity: &'static str, id: usize },
    NonContiguousParticipantIds { entity: &'static str },
    NonPositiveAlpha { stage: Stage, generator: usize },
    NegativeStd { rpp: usize },
    UnknownDaLink { rt_generator: usize, da_id: usize },
    LinkedAlphaMismatch { rt_generator: usize },
    NoDaGenerators,
}

impl fmt::Display for CaseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseIssue::DuplicateBusId(id) => write!(f, "duplicate bus id {id}"),
            CaseIssue::NonContiguousBusIds => {
                write!(f, "bus ids must cover 0..N-1 without gaps")
            }
            CaseIssue::NegativeLoad { bus } => write!(f, "negative load at bus {bus}"),
            CaseIssue::DuplicateLineId(id) => write!(f, "duplicate line id {id}"),
            CaseIssue::NonContiguousLineIds => {
                write!(f, "line ids must cover 0..L-1 without gaps")
            }
            CaseIssue::SelfLoop { line } => write!(f, "line {line} connects a bus to itself"),
            CaseIssue::NonPositiveSusceptance { line } => {
                write!(f, "nonpositive susceptance on line {line}")
            }
            CaseIssue::NonPositiveCapacity { line } => {
                write!(f, "nonpositive capacity on line {line}")
            }
            CaseIssue::UnknownBusReference { entity, bus } => {
                write!(f, "unknown bus reference: {entity} points at bus {bus}")
            }
            CaseIssue::InvalidSlackBus { bus } => write!(f, "slack bus {bus} does not exist"),
            CaseIssue::DisconnectedGraph => write!(f, "network graph is disconnected"),
            CaseIssue::DuplicateParticipantId { entity, id } => {
                write!(f, "duplicate {entity} id {id}")
            }
            CaseIssue::NonContiguousParticipantIds { entity } => {
                write!(f, "{entity} ids must cover 0..n-1 without gaps")
            }
            CaseIssue::NonPositiveAlpha { stage, generator } => {
                write!(f, "nonpositive quadratic cost on {stage} generator {generator}")
            }
            CaseIssue::NegativeStd { rpp } => {
                write!(f, "negative standard deviation on renewable producer {rpp}")
            }
            CaseIssue::UnknownDaLink { rt_generator, da_id } => write!(
                f,
                "real-time generator {rt_generator} links to unknown day-ahead generator {da_id}"
            ),
            CaseIssue::LinkedAlphaMismatch { rt_generator } => write!(
                f,
                "real-time generator {rt_generator} shares a unit with the day-ahead market \
                 but declares a different quadratic cost"
            ),
            CaseIssue::NoDaGenerators => write!(f, "case has no day-ahead generators"),
        }
    }
}

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// One or more validation problems in the case data.
    InvalidCase(Vec<CaseIssue>),
    /// The reduced nodal susceptance matrix could not be inverted.
    SingularSusceptance,
    /// An injection vector does not sum to zero within tolerance.
    Imbalance { residual: f64 },
    /// A pattern built for one market stage was used in the other.
    WrongStage { expected: Stage, found: Stage },
    /// A congestion pattern references a line the case does not have.
    UnknownLine { line: usize },
    /// A congestion pattern lists the same line twice.
    DuplicatePatternLine { line: usize },
    /// The KKT system for an assumed congestion pattern is singular; the
    /// pattern cannot define a unique optimum and must be discarded.
    SingularKkt,
    /// The requested stage has no dispatchable generators.
    NoGenerators { stage: Stage },
    /// No dispatch satisfies the balance and line constraints.
    Infeasible { stage: Stage },
    /// The active-set iteration and its enumeration fallback both failed to
    /// certify an optimum within the configured pattern budget.
    SolverStalled { stage: Stage },
    /// A finite-difference probe kept changing the binding set even at the
    /// smallest step size.
    BindingSetChanged,
    /// The best-response system for an assumed pattern pair is singular.
    SingularBestResponse,
    /// A producer payoff is not concave under the assumed pattern pair.
    NonConcavePayoff { rpp: usize },
    /// A scenario set violates its invariants.
    InvalidScenarioSet { reason: &'static str },
    /// The penalty-formulation planner failed to settle on a hinge pattern.
    SocialOptimumStalled,
    /// An input vector has the wrong length.
    DimensionMismatch { expected: usize, found: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidCase(issues) => {
                write!(f, "invalid case:")?;
                for issue in issues {
                    write!(f, " [{issue}]")?;
                }
                Ok(())
            }
            Error::SingularSusceptance => {
                write!(f, "singular reduced susceptance matrix (disconnected graph?)")
            }
            Error::Imbalance { residual } => {
                write!(f, "injections do not balance: residual {residual} MW")
            }
            Error::WrongStage { expected, found } => {
                write!(f, "expected a {expected} pattern, got a {found} pattern")
            }
            Error::UnknownLine { line } => write!(f, "pattern references unknown line {line}"),
            Error::DuplicatePatternLine { line } => {
                write!(f, "pattern lists line {line} more than once")
            }
            Error::SingularKkt => write!(f, "singular KKT system for the assumed pattern"),
            Error::NoGenerators { stage } => write!(f, "no {stage} generators to dispatch"),
            Error::Infeasible { stage } => write!(f, "{stage} dispatch is infeasible"),
            Error::SolverStalled { stage } => write!(
                f,
                "{stage} dispatch: no optimum certified within the pattern budget"
            ),
            Error::BindingSetChanged => {
                write!(f, "binding set changed under every finite-difference step tried")
            }
            Error::SingularBestResponse => write!(f, "singular best-response system"),
            Error::NonConcavePayoff { rpp } => {
                write!(f, "payoff of renewable producer {rpp} is not concave")
            }
            Error::InvalidScenarioSet { reason } => write!(f, "invalid scenario set: {reason}"),
            Error::SocialOptimumStalled => {
                write!(f, "social-optimum solver failed to settle on a hinge pattern")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
