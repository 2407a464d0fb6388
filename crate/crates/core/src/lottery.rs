//! Holt-Laury decision sheet and the expected-value / CRRA machinery built on it.
//!
//! Money is held in whole cents so the payoff table is exact; probabilities are
//! held in tenths. Utilities are plain `f64`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of rows in the decision sheet.
pub const DECISIONS: usize = 10;

pub const SAFE_HIGH: Cents = Cents(200);
pub const SAFE_LOW: Cents = Cents(160);
pub const RISKY_HIGH: Cents = Cents(385);
pub const RISKY_LOW: Cents = Cents(10);

/// Default bisection tolerance on `r` for [`crra_interval_for_switch`].
pub const DEFAULT_INTERVAL_TOLERANCE: f64 = 1e-9;
/// Search bounds on `r`; an endpoint not found inside them is reported unbounded.
pub const R_SEARCH_BOUNDS: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LotteryError {
    #[error("utility undefined for non-positive payoff {0}")]
    NonPositivePayoff(f64),
    #[error("relative risk aversion must be finite, got {0}")]
    NonFiniteR(f64),
    #[error("switch point must be in 1..=10, got {0}")]
    SwitchOutOfRange(i64),
    #[error("decision index must be in 1..=10, got {0}")]
    DecisionOutOfRange(usize),
    #[error("interval tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// An amount of money in whole US cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cents(pub u32);

impl Cents {
    pub fn dollars(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// A two-outcome lottery: `payoff_high` with probability `tenths/10`, else `payoff_low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryOption {
    pub high_tenths: u8,
    pub payoff_high: Cents,
    pub payoff_low: Cents,
}

impl LotteryOption {
    pub fn p_high(&self) -> f64 {
        f64::from(self.high_tenths) / 10.0
    }

    pub fn expected_value(&self) -> f64 {
        // exact in cents·tenths before the single division
        let hi = u64::from(self.high_tenths) * u64::from(self.payoff_high.0);
        let lo = u64::from(10 - self.high_tenths) * u64::from(self.payoff_low.0);
        (hi + lo) as f64 / 1000.0
    }

    fn expected(&self, u: impl Fn(f64) -> f64) -> f64 {
        let p = self.p_high();
        p * u(self.payoff_high.dollars()) + (1.0 - p) * u(self.payoff_low.dollars())
    }
}

/// Which side of a decision row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    /// The safe lottery.
    A,
    /// The risky lottery.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotteryDecision {
    pub index: usize,
    pub option_a: LotteryOption,
    pub option_b: LotteryOption,
}

impl LotteryDecision {
    pub fn new(index: usize) -> Result<Self, LotteryError> {
        if !(1..=DECISIONS).contains(&index) {
            return Err(LotteryError::DecisionOutOfRange(index));
        }
        let tenths = index as u8;
        Ok(Self {
            index,
            option_a: LotteryOption {
                high_tenths: tenths,
                payoff_high: SAFE_HIGH,
                payoff_low: SAFE_LOW,
            },
            option_b: LotteryOption {
                high_tenths: tenths,
                payoff_high: RISKY_HIGH,
                payoff_low: RISKY_LOW,
            },
        })
    }

    pub fn option(&self, which: Choice) -> &LotteryOption {
        match which {
            Choice::A => &self.option_a,
            Choice::B => &self.option_b,
        }
    }
}

/// The ten-row sheet, decisions in ascending order.
pub fn build_task_sheet() -> [LotteryDecision; DECISIONS] {
    std::array::from_fn(|i| LotteryDecision::new(i + 1).expect("index in range"))
}

pub fn expected_value(d: &LotteryDecision, which: Choice) -> f64 {
    d.option(which).expected_value()
}

/// CRRA utility `x^(1-r)/(1-r)`, or `ln x` at `r = 1`.
pub fn crra_utility(x: f64, r: f64) -> Result<f64, LotteryError> {
    if x.is_nan() || x <= 0.0 {
        return Err(LotteryError::NonPositivePayoff(x));
    }
    if !r.is_finite() {
        return Err(LotteryError::NonFiniteR(r));
    }
    if r == 1.0 {
        Ok(x.ln())
    } else {
        Ok(x.powf(1.0 - r) / (1.0 - r))
    }
}

/// `(x^(1-r) - 1)/(1-r)`: the CRRA utility shifted by the constant `-1/(1-r)`.
///
/// Same EU ordering and same EU differences as [`crra_utility`], but continuous
/// through `r = 1` and free of the large common offset near it.
fn shifted_crra(x: f64, r: f64) -> f64 {
    let k = 1.0 - r;
    let ln = x.ln();
    if k == 0.0 {
        ln
    } else {
        (k * ln).exp_m1() / k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Switch at the first weak preference for B.
    #[default]
    PreferB,
    /// Switch only at a strict preference for B.
    PreferA,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrraParams {
    pub r: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
}

impl CrraParams {
    pub fn new(r: f64) -> Self {
        Self {
            r,
            tie_break: TieBreak::PreferB,
        }
    }
}

pub fn expected_utility(
    d: &LotteryDecision,
    which: Choice,
    params: &CrraParams,
) -> Result<f64, LotteryError> {
    let opt = d.option(which);
    let p = opt.p_high();
    let hi = crra_utility(opt.payoff_high.dollars(), params.r)?;
    let lo = crra_utility(opt.payoff_low.dollars(), params.r)?;
    Ok(p * hi + (1.0 - p) * lo)
}

/// `EU(B) - EU(A)` for one row, computed in the numerically stable shifted form.
pub fn utility_gap(d: &LotteryDecision, r: f64) -> f64 {
    let u = |x| shifted_crra(x, r);
    d.option_b.expected(u) - d.option_a.expected(u)
}

/// First decision (1-based) at which Option B is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SwitchPoint(u8);

impl SwitchPoint {
    pub fn new(value: i64) -> Result<Self, LotteryError> {
        if (1..=DECISIONS as i64).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(LotteryError::SwitchOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Number of safe (Option A) choices implied by the switch.
    pub fn n_safe(self) -> u8 {
        self.0 - 1
    }

    pub fn all() -> impl Iterator<Item = SwitchPoint> {
        (1..=DECISIONS as u8).map(SwitchPoint)
    }
}

impl TryFrom<u8> for SwitchPoint {
    type Error = LotteryError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(i64::from(v))
    }
}

impl From<SwitchPoint> for u8 {
    fn from(s: SwitchPoint) -> u8 {
        s.0
    }
}

impl fmt::Display for SwitchPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Smallest decision where the CRRA agent weakly (or strictly, under
/// [`TieBreak::PreferA`]) prefers Option B.
pub fn predicted_switch_point(params: &CrraParams) -> SwitchPoint {
    let sheet = build_task_sheet();
    for d in &sheet[..DECISIONS - 1] {
        let gap = utility_gap(d, params.r);
        let takes_b = match params.tie_break {
            TieBreak::PreferB => gap >= 0.0,
            TieBreak::PreferA => gap > 0.0,
        };
        if takes_b {
            return SwitchPoint(d.index as u8);
        }
    }
    // B pays more in every state at decision 10, so any increasing utility switches here.
    SwitchPoint(DECISIONS as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RiskClass {
    RiskSeeking,
    RiskNeutral,
    RiskAverse,
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskClass::RiskSeeking => "risk-seeking",
            RiskClass::RiskNeutral => "risk-neutral",
            RiskClass::RiskAverse => "risk-averse",
        })
    }
}

pub fn classify(switch: SwitchPoint) -> RiskClass {
    match switch.n_safe() {
        0..=3 => RiskClass::RiskSeeking,
        4 => RiskClass::RiskNeutral,
        _ => RiskClass::RiskAverse,
    }
}

/// Range of `r` producing a given switch point.
///
/// Every `r` strictly between `lo` and `hi` maps to the switch point. Infinite
/// endpoints mean no boundary was found inside [`R_SEARCH_BOUNDS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrraInterval {
    pub lo: f64,
    pub hi: f64,
}

impl CrraInterval {
    pub fn is_empty(&self) -> bool {
        self.lo.is_nan() || self.hi.is_nan() || self.lo >= self.hi
    }

    pub fn contains(&self, r: f64) -> bool {
        self.lo < r && r < self.hi
    }

    /// A finite representative point, if the interval is non-empty.
    pub fn midpoint(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let (b_lo, b_hi) = R_SEARCH_BOUNDS;
        Some(match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => 0.5 * (self.lo + self.hi),
            (false, true) => self.hi - 1.0,
            (true, false) => self.lo + 1.0,
            (false, false) => 0.5 * (b_lo + b_hi),
        })
    }
}

/// Invert [`predicted_switch_point`] by bisection on the monotone map `r -> switch`.
///
/// Returned endpoints sit on the inner side of each boundary, within `tolerance`.
/// A switch point that no `r` in the search bounds produces yields an empty interval.
pub fn crra_interval_for_switch(
    switch: SwitchPoint,
    tolerance: f64,
    tie_break: TieBreak,
) -> Result<CrraInterval, LotteryError> {
    if !tolerance.is_finite() || tolerance <= 0.0 {
        return Err(LotteryError::BadTolerance(tolerance));
    }
    let s = |r: f64| predicted_switch_point(&CrraParams { r, tie_break });
    let (b_lo, b_hi) = R_SEARCH_BOUNDS;

    // lo: smallest r with s(r) >= switch
    let lo = if s(b_lo) >= switch {
        f64::NEG_INFINITY
    } else if s(b_hi) < switch {
        return Ok(CrraInterval {
            lo: f64::INFINITY,
            hi: f64::INFINITY,
        });
    } else {
        bisect(b_lo, b_hi, tolerance, |r| s(r) >= switch).1
    };

    // hi: largest r with s(r) <= switch
    let hi = if s(b_hi) <= switch {
        f64::INFINITY
    } else if s(b_lo) > switch {
        return Ok(CrraInterval {
            lo: f64::NEG_INFINITY,
            hi: f64::NEG_INFINITY,
        });
    } else {
        bisect(b_lo, b_hi, tolerance, |r| s(r) > switch).0
    };

    let interval = CrraInterval { lo, hi };
    if let Some(mid) = interval.midpoint() {
        if s(mid) != switch {
            // the map jumps over this switch point
            return Ok(CrraInterval { lo, hi: lo });
        }
    }
    Ok(interval)
}

/// Brackets the point where monotone `pred` flips from false to true, given
/// `pred(lo) == false` and `pred(hi) == true`. Returns `(last_false, first_true)`
/// no more than `tol` apart.
fn bisect(mut lo: f64, mut hi: f64, tol: f64, pred: impl Fn(f64) -> bool) -> (f64, f64) {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Safe-choice indicator per decision: 1 where Option A is chosen.
pub fn switch_to_choice_vector(switch: SwitchPoint) -> [u8; DECISIONS] {
    std::array::from_fn(|d| u8::from(d + 1 < switch.value() as usize))
}
