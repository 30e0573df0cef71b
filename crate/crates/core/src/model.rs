//! Closed-form single-node delay-jitter model.
//!
//! A single FCFS node with an infinite buffer is fed by Poisson traffic of
//! total rate `lambda` and drains at `capacity` packets per second. The mean
//! absolute delay variation between consecutive packets of a tagged flow is
//! approximated by
//!
//! ```text
//! J = 1/(C - lambda) * (1 - x*exp(-x) - exp(-2x)),   x = (1 - rho)/rho
//! ```
//!
//! which is the non-negative reading of the published expression (see
//! [`FormulaVariant`]). The module also carries the loss/throughput identity
//! `B = (lambda - X)/lambda` and numeric inversions used for planning: the
//! largest load a link can carry under a jitter budget, and the smallest
//! capacity that meets one.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Relative bracket tolerance for the bisection inversions.
pub const INVERSION_REL_TOL: f64 = 1e-9;
/// Hard cap on bisection steps.
pub const INVERSION_MAX_ITER: usize = 200;
/// Grid used to locate monotone segments before bisecting.
pub const INVERSION_GRID_POINTS: usize = 256;
/// Load bracket is `[LOAD_EPS * C, (1 - LOAD_EPS) * C]`.
pub const LOAD_EPS: f64 = 1e-6;
/// Capacity bracket is `[(1 + LOAD_EPS) * lambda, CAPACITY_CEILING_FACTOR * lambda]`.
pub const CAPACITY_CEILING_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("capacity must be positive and finite, got {0}")]
    NonPositiveCapacity(f64),
    #[error("arrival rate must be non-negative and finite, got {0}")]
    InvalidArrivalRate(f64),
    #[error("load rho = {rho} >= 1: the queue is unstable")]
    Unstable { rho: f64 },
    #[error("jitter is undefined without traffic (arrival rate 0)")]
    UndefinedJitter,
    #[error("throughput {throughput} exceeds arrival rate {arrival_rate}")]
    ThroughputExceedsArrivals { arrival_rate: f64, throughput: f64 },
    #[error("throughput must be non-negative and finite, got {0}")]
    InvalidThroughput(f64),
    #[error("loss probability must lie in [0, 1], got {0}")]
    LossOutOfRange(f64),
    #[error("jitter budget must be positive and finite, got {0}")]
    InvalidBudget(f64),
    #[error("jitter budget {budget:e} s is below the smallest attainable jitter {min_jitter:e} s")]
    Infeasible { budget: f64, min_jitter: f64 },
    #[error("load grid entry {index} is {rho}, expected a value in (0, 1)")]
    GridEntryOutOfRange { index: usize, rho: f64 },
    #[error("packet size must be positive, got {0} bits")]
    InvalidPacketSize(f64),
    #[error("unknown formula variant {0:?} (expected nonneg-v1 or printed-literal)")]
    UnknownVariant(String),
}

/// Algebraic reading of the closed-form jitter expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum FormulaVariant {
    /// `(1 - x e^-x - e^-2x) / (C - lambda)`: positive on `0 < rho < 1`, tends
    /// to `1/C` at both ends of the load range.
    #[default]
    #[serde(rename = "nonneg-v1")]
    NonNegV1,
    /// The expression exactly as typeset, `(1 - e^-x (x + e^x)) / (C - lambda)`.
    /// It reduces to `-x e^-x / (C - lambda)`, which is negative; kept only so
    /// the ambiguity can be demonstrated.
    #[serde(rename = "printed-literal")]
    PrintedLiteral,
}

impl FormulaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FormulaVariant::NonNegV1 => "nonneg-v1",
            FormulaVariant::PrintedLiteral => "printed-literal",
        }
    }
}

impl fmt::Display for FormulaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormulaVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nonneg-v1" => Ok(FormulaVariant::NonNegV1),
            "printed-literal" => Ok(FormulaVariant::PrintedLiteral),
            other => Err(ModelError::UnknownVariant(other.to_string())),
        }
    }
}

/// Capacity, total arrival rate and the derived load of one link.
///
/// Both rates are in packets per second. Construction enforces
/// `0 < lambda < C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    capacity: f64,
    arrival_rate: f64,
    load: f64,
}

impl LinkParams {
    pub fn new(capacity: f64, arrival_rate: f64) -> Result<Self, ModelError> {
        let load = offered_load(capacity, arrival_rate)?;
        if arrival_rate == 0.0 {
            return Err(ModelError::UndefinedJitter);
        }
        if load >= 1.0 {
            return Err(ModelError::Unstable { rho: load });
        }
        Ok(Self {
            capacity,
            arrival_rate,
            load,
        })
    }

    pub fn from_load(capacity: f64, rho: f64) -> Result<Self, ModelError> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(ModelError::NonPositiveCapacity(capacity));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(ModelError::InvalidArrivalRate(rho * capacity));
        }
        Self::new(capacity, rho * capacity)
    }

    /// Link bandwidth in bits per second with a mean packet size in bits.
    pub fn from_bandwidth(
        bandwidth_bps: f64,
        mean_packet_bits: f64,
        arrival_rate: f64,
    ) -> Result<Self, ModelError> {
        Self::new(capacity_from_bandwidth(bandwidth_bps, mean_packet_bits)?, arrival_rate)
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn load(&self) -> f64 {
        self.load
    }
}

/// Converts a bit rate into a packet service rate.
pub fn capacity_from_bandwidth(bandwidth_bps: f64, mean_packet_bits: f64) -> Result<f64, ModelError> {
    if !(mean_packet_bits > 0.0 && mean_packet_bits.is_finite()) {
        return Err(ModelError::InvalidPacketSize(mean_packet_bits));
    }
    if !(bandwidth_bps > 0.0 && bandwidth_bps.is_finite()) {
        return Err(ModelError::NonPositiveCapacity(bandwidth_bps));
    }
    Ok(bandwidth_bps / mean_packet_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPrediction {
    /// Mean absolute delay variation in seconds.
    pub jitter_seconds: f64,
    pub params: LinkParams,
    pub formula_variant: FormulaVariant,
}

/// Mean absolute packet delay variation with the default formula variant.
pub fn analytical_jitter(params: &LinkParams) -> JitterPrediction {
    analytical_jitter_with(params, FormulaVariant::default())
}

pub fn analytical_jitter_with(params: &LinkParams, variant: FormulaVariant) -> JitterPrediction {
    JitterPrediction {
        jitter_seconds: jitter_value(params.capacity, params.arrival_rate, params.load, variant),
        params: *params,
        formula_variant: variant,
    }
}

/// Convenience wrapper validating `(capacity, arrival_rate)` first.
pub fn jitter_for(capacity: f64, arrival_rate: f64) -> Result<f64, ModelError> {
    Ok(analytical_jitter(&LinkParams::new(capacity, arrival_rate)?).jitter_seconds)
}

fn jitter_value(capacity: f64, arrival_rate: f64, rho: f64, variant: FormulaVariant) -> f64 {
    let x = (1.0 - rho) / rho;
    let prefactor = 1.0 / (capacity - arrival_rate);
    match variant {
        // exp(-2x) from the doubled argument rather than squaring exp(-x)
        FormulaVariant::NonNegV1 => prefactor * (1.0 - x * (-x).exp() - (-2.0 * x).exp()),
        FormulaVariant::PrintedLiteral => prefactor * (1.0 - (-x).exp() * (x + x.exp())),
    }
}

/// `rho = lambda / C`.
pub fn offered_load(capacity: f64, arrival_rate: f64) -> Result<f64, ModelError> {
    if !(capacity > 0.0 && capacity.is_finite()) {
        return Err(ModelError::NonPositiveCapacity(capacity));
    }
    if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
        return Err(ModelError::InvalidArrivalRate(arrival_rate));
    }
    Ok(arrival_rate / capacity)
}

/// Arrival rate, delivered throughput and the loss probability linking them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossThroughputRecord {
    pub arrival_rate: f64,
    pub throughput: f64,
    pub loss: f64,
}

impl LossThroughputRecord {
    pub fn from_throughput(arrival_rate: f64, throughput: f64) -> Result<Self, ModelError> {
        let loss = loss_from_throughput(arrival_rate, throughput)?;
        Ok(Self {
            arrival_rate,
            throughput,
            loss,
        })
    }
}

/// `B = (lambda - X) / lambda`.
pub fn loss_from_throughput(arrival_rate: f64, throughput: f64) -> Result<f64, ModelError> {
    if !(arrival_rate > 0.0 && arrival_rate.is_finite()) {
        return Err(ModelError::InvalidArrivalRate(arrival_rate));
    }
    if !(throughput >= 0.0 && throughput.is_finite()) {
        return Err(ModelError::InvalidThroughput(throughput));
    }
    if throughput > arrival_rate {
        return Err(ModelError::ThroughputExceedsArrivals {
            arrival_rate,
            throughput,
        });
    }
    Ok((arrival_rate - throughput) / arrival_rate)
}

/// `X = lambda (1 - B)`.
pub fn throughput_from_loss(arrival_rate: f64, loss: f64) -> Result<f64, ModelError> {
    if !(arrival_rate > 0.0 && arrival_rate.is_finite()) {
        return Err(ModelError::InvalidArrivalRate(arrival_rate));
    }
    if !(0.0..=1.0).contains(&loss) {
        return Err(ModelError::LossOutOfRange(loss));
    }
    Ok(arrival_rate * (1.0 - loss))
}

/// Result of a load inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadLimit {
    /// The budget binds: jitter at `arrival_rate` equals the budget.
    Binding { arrival_rate: f64, jitter_seconds: f64 },
    /// The top of the load bracket already meets the budget.
    Unconstrained { arrival_rate: f64, jitter_seconds: f64 },
}

impl LoadLimit {
    pub fn arrival_rate(&self) -> f64 {
        match *self {
            LoadLimit::Binding { arrival_rate, .. } | LoadLimit::Unconstrained { arrival_rate, .. } => {
                arrival_rate
            }
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, LoadLimit::Unconstrained { .. })
    }
}

/// Result of a capacity inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacityLimit {
    Binding { capacity: f64, jitter_seconds: f64 },
    /// Even the smallest capacity in the bracket meets the budget.
    Unconstrained { capacity: f64, jitter_seconds: f64 },
}

impl CapacityLimit {
    pub fn capacity(&self) -> f64 {
        match *self {
            CapacityLimit::Binding { capacity, .. } | CapacityLimit::Unconstrained { capacity, .. } => capacity,
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, CapacityLimit::Unconstrained { .. })
    }
}

fn check_budget(budget: f64) -> Result<(), ModelError> {
    if budget > 0.0 && budget.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidBudget(budget))
    }
}

/// Bisects `f` on `[feasible, infeasible]`, where `f(feasible) <= 0 < f(infeasible)`,
/// and returns the last feasible point.
fn bisect(mut feasible: f64, mut infeasible: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..INVERSION_MAX_ITER {
        if (infeasible - feasible).abs() <= INVERSION_REL_TOL * feasible.abs().max(infeasible.abs()) {
            break;
        }
        let mid = 0.5 * (feasible + infeasible);
        if mid == feasible || mid == infeasible {
            break;
        }
        if f(mid) <= 0.0 {
            feasible = mid;
        } else {
            infeasible = mid;
        }
    }
    feasible
}

/// Largest arrival rate on a link of `capacity` whose predicted jitter stays
/// within `budget` seconds.
///
/// Jitter is not monotone in the load, so the bracket is sampled first; the
/// bisection runs on the cell where the last feasible grid point meets the
/// first infeasible one above it.
pub fn invert_load_for_jitter(capacity: f64, budget: f64) -> Result<LoadLimit, ModelError> {
    if !(capacity > 0.0 && capacity.is_finite()) {
        return Err(ModelError::NonPositiveCapacity(capacity));
    }
    check_budget(budget)?;
    let lo = LOAD_EPS * capacity;
    let hi = (1.0 - LOAD_EPS) * capacity;
    let jitter = |lambda: f64| {
        let rho = lambda / capacity;
        jitter_value(capacity, lambda, rho, FormulaVariant::NonNegV1)
    };

    let n = INVERSION_GRID_POINTS;
    let grid: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let lambda = if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
            (lambda, jitter(lambda))
        })
        .collect();

    let min_jitter = grid.iter().map(|&(_, j)| j).fold(f64::INFINITY, f64::min);
    if budget < min_jitter {
        return Err(ModelError::Infeasible { budget, min_jitter });
    }
    let (top_lambda, top_jitter) = grid[n - 1];
    if top_jitter <= budget {
        return Ok(LoadLimit::Unconstrained {
            arrival_rate: top_lambda,
            jitter_seconds: top_jitter,
        });
    }
    let last_ok = grid
        .iter()
        .rposition(|&(_, j)| j <= budget)
        .expect("budget >= grid minimum");
    let lambda = bisect(grid[last_ok].0, grid[last_ok + 1].0, |l| jitter(l) - budget);
    Ok(LoadLimit::Binding {
        arrival_rate: lambda,
        jitter_seconds: jitter(lambda),
    })
}

/// Smallest capacity carrying `arrival_rate` within a jitter budget.
pub fn invert_capacity_for_jitter(arrival_rate: f64, budget: f64) -> Result<CapacityLimit, ModelError> {
    if arrival_rate == 0.0 {
        return Err(ModelError::UndefinedJitter);
    }
    if !(arrival_rate > 0.0 && arrival_rate.is_finite()) {
        return Err(ModelError::InvalidArrivalRate(arrival_rate));
    }
    check_budget(budget)?;
    let lo = (1.0 + LOAD_EPS) * arrival_rate;
    let hi = CAPACITY_CEILING_FACTOR * arrival_rate;
    let jitter = |capacity: f64| {
        let rho = arrival_rate / capacity;
        jitter_value(capacity, arrival_rate, rho, FormulaVariant::NonNegV1)
    };

    // Geometric grid: the bracket spans six decades.
    let n = INVERSION_GRID_POINTS;
    let ratio = (hi / lo).ln();
    let grid: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let c = match i {
                0 => lo,
                i if i == n - 1 => hi,
                i => lo * (ratio * i as f64 / (n - 1) as f64).exp(),
            };
            (c, jitter(c))
        })
        .collect();

    let min_jitter = grid.iter().map(|&(_, j)| j).fold(f64::INFINITY, f64::min);
    if budget < min_jitter {
        return Err(ModelError::Infeasible { budget, min_jitter });
    }
    let (bottom_c, bottom_jitter) = grid[0];
    if bottom_jitter <= budget {
        return Ok(CapacityLimit::Unconstrained {
            capacity: bottom_c,
            jitter_seconds: bottom_jitter,
        });
    }
    let first_ok = grid
        .iter()
        .position(|&(_, j)| j <= budget)
        .expect("budget >= grid minimum");
    let capacity = bisect(grid[first_ok].0, grid[first_ok - 1].0, |c| jitter(c) - budget);
    Ok(CapacityLimit::Binding {
        capacity,
        jitter_seconds: jitter(capacity),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub rho: f64,
    pub arrival_rate: f64,
    pub jitter_seconds: f64,
}

/// Evaluates the model at each load of `rho_grid`, in input order.
pub fn model_sweep(capacity: f64, rho_grid: &[f64]) -> Result<Vec<ModelRow>, ModelError> {
    model_sweep_with(capacity, rho_grid, FormulaVariant::default())
}

pub fn model_sweep_with(
    capacity: f64,
    rho_grid: &[f64],
    variant: FormulaVariant,
) -> Result<Vec<ModelRow>, ModelError> {
    if !(capacity > 0.0 && capacity.is_finite()) {
        return Err(ModelError::NonPositiveCapacity(capacity));
    }
    rho_grid
        .iter()
        .enumerate()
        .map(|(index, &rho)| {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(ModelError::GridEntryOutOfRange { index, rho });
            }
            let params = LinkParams::from_load(capacity, rho)?;
            Ok(ModelRow {
                rho,
                arrival_rate: params.arrival_rate(),
                jitter_seconds: analytical_jitter_with(&params, variant).jitter_seconds,
            })
        })
        .collect()
}
