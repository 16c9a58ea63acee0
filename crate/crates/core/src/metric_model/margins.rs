use crate::datastore::ClassStats;
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN_MIN: f64 = 0.005;
pub const DEFAULT_MARGIN_MAX: f64 = 0.45;
pub const DEFAULT_MARGIN_LAMBDA: f64 = 0.25;

/// Per-class additive angular margins, in radians.
///
/// `margins[c]` belongs to the `c`-th class in sorted label order (the order
/// of [`ClassStats::counts`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSchedule {
    pub m_min: f64,
    pub m_max: f64,
    pub lambda: f64,
    pub margins: Vec<f64>,
}

impl MarginSchedule {
    /// Same margin for every class.
    pub fn constant(n_classes: usize, margin: f64) -> Self {
        MarginSchedule { m_min: margin, m_max: margin, lambda: DEFAULT_MARGIN_LAMBDA, margins: vec![margin; n_classes] }
    }

    pub fn len(&self) -> usize {
        self.margins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.margins.is_empty()
    }
}

/// Margin of a class with `n` samples under `m(n) = a·n^(−λ) + b`, where `a`
/// and `b` pin `m(n_min) = m_max` and `m(n_max) = m_min`.
pub fn margin_for_count(n: usize, n_min: usize, n_max: usize, m_min: f64, m_max: f64, lambda: f64) -> f64 {
    if n_min == n_max {
        return 0.5 * (m_min + m_max);
    }
    if n <= n_min {
        return m_max;
    }
    if n >= n_max {
        return m_min;
    }
    let f = |k: usize| (k as f64).powf(-lambda);
    let a = (m_max - m_min) / (f(n_min) - f(n_max));
    let b = m_min - a * f(n_max);
    (a * f(n) + b).clamp(m_min, m_max)
}

/// Larger margins for rarer classes.
pub fn compute_dynamic_margins(stats: &ClassStats, m_min: f64, m_max: f64, lambda: f64) -> Result<MarginSchedule> {
    if stats.counts.is_empty() {
        return Err(Error::invalid("margin schedule of empty class statistics"));
    }
    if stats.counts.values().any(|&n| n == 0) {
        return Err(Error::invalid("margin schedule needs every count ≥ 1"));
    }
    if !(m_min < m_max) || !m_min.is_finite() || !m_max.is_finite() {
        return Err(Error::invalid(format!("margin bounds must satisfy m_min < m_max, got {m_min}, {m_max}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("margin exponent {lambda} must be > 0")));
    }
    let margins =
        stats.counts.values().map(|&n| margin_for_count(n, stats.n_min, stats.n_max, m_min, m_max, lambda)).collect();
    Ok(MarginSchedule { m_min, m_max, lambda, margins })
}
