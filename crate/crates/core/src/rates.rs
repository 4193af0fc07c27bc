//! Closed-form sup-norm rates and bandwidths.
//!
//! All logarithms are natural. The regime classifier compares `p_min` with
//! the asymptotic thresholds using unit constants, so its label is a
//! heuristic rather than a sharp statement.

use serde::Serialize;

use crate::error::{invalid, Result};

/// Inputs shared by the rate formulas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateInputs {
    pub n: usize,
    /// Per-axis design counts.
    pub p: Vec<usize>,
    pub alpha: f64,
    /// Bandwidth floor constant: admissible `h` start at `c / p_min`.
    pub c: f64,
}

impl RateInputs {
    pub fn new(n: usize, p: Vec<usize>, alpha: f64, c: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if p.is_empty() || p.contains(&0) {
            return Err(invalid("per-axis counts must be positive"));
        }
        if !(alpha > 0.0) || !(c > 0.0) {
            return Err(invalid("alpha and c must be positive"));
        }
        Ok(Self { n, p, alpha, c })
    }

    /// Same count `p` on each of `d` axes.
    pub fn isotropic(n: usize, p: usize, d: usize, alpha: f64, c: f64) -> Result<Self> {
        Self::new(n, vec![p; d], alpha, c)
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn p1(&self) -> f64 {
        self.p.iter().map(|&k| k as f64).product()
    }

    pub fn p_min(&self) -> f64 {
        self.p.iter().copied().min().unwrap_or(0) as f64
    }

    fn n_f(&self) -> f64 {
        self.n as f64
    }
}

/// Which term attains a maximum of several rate terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `p_min^-alpha` or `h^alpha`.
    Discretization,
    /// The noise term.
    Intermediate,
    /// `n^-1/2`.
    Parametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateValue {
    pub value: f64,
    pub terms: [f64; 3],
    pub binding: Branch,
}

fn max_of(terms: [f64; 3]) -> RateValue {
    let mut binding = Branch::Discretization;
    let mut value = terms[0];
    if terms[1] > value {
        value = terms[1];
        binding = Branch::Intermediate;
    }
    if terms[2] > value {
        value = terms[2];
        binding = Branch::Parametric;
    }
    RateValue {
        value,
        terms,
        binding,
    }
}

/// `a_{n,p,h} = max(h^alpha, sqrt(log(1/h) / (n p1 h^d)), n^-1/2)`.
pub fn rate_bound(inputs: &RateInputs, h: f64) -> Result<RateValue> {
    if !(h > 0.0 && h < 1.0) {
        return Err(invalid(format!("rate bound needs 0 < h < 1, got {h}")));
    }
    let d = inputs.dim() as i32;
    let noise = ((1.0 / h).ln() / (inputs.n_f() * inputs.p1() * h.powi(d))).sqrt();
    Ok(max_of([
        h.powf(inputs.alpha),
        noise,
        inputs.n_f().powf(-0.5),
    ]))
}

/// `(log(n p1) / (n p1))^(1/(2 alpha + d))`, the unconstrained optimum.
fn balanced_bandwidth(inputs: &RateInputs) -> f64 {
    let np = inputs.n_f() * inputs.p1();
    (np.ln() / np).powf(1.0 / (2.0 * inputs.alpha + inputs.dim() as f64))
}

/// `h* = max(c / p_min, (log(n p1) / (n p1))^(1/(2 alpha + d)))`.
pub fn optimal_bandwidth(inputs: &RateInputs) -> f64 {
    (inputs.c / inputs.p_min()).max(balanced_bandwidth(inputs))
}

/// True when the floor `c / p_min` is the binding branch of `h*`.
pub fn bandwidth_floor_binds(inputs: &RateInputs) -> bool {
    inputs.c / inputs.p_min() >= balanced_bandwidth(inputs)
}

/// `max(p_min^-alpha, (log(n p1)/(n p1))^(alpha/(2 alpha + d)), n^-1/2)`.
pub fn optimal_rate(inputs: &RateInputs) -> RateValue {
    let np = inputs.n_f() * inputs.p1();
    let d = inputs.dim() as f64;
    max_of([
        inputs.p_min().powf(-inputs.alpha),
        (np.ln() / np).powf(inputs.alpha / (2.0 * inputs.alpha + d)),
        inputs.n_f().powf(-0.5),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Sparse,
    Intermediate,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    /// `(n / log n)^(1/(2 alpha))`.
    pub sparse_threshold: f64,
    /// `(log n)^(1/d) n^(1/(2 alpha))`.
    pub dense_threshold: f64,
    pub heuristic: bool,
}

/// Labels the design as sparse, intermediate or dense by comparing `p_min`
/// with the two regime thresholds (unit constants).
pub fn classify_regime(inputs: &RateInputs) -> RegimeReport {
    let n = inputs.n_f();
    let d = inputs.dim() as f64;
    let sparse_threshold = (n / n.ln()).powf(1.0 / (2.0 * inputs.alpha));
    let dense_threshold = n.ln().powf(1.0 / d) * n.powf(1.0 / (2.0 * inputs.alpha));
    let p = inputs.p_min();
    // for n = 1 the sparse threshold is infinite, so everything is sparse
    let regime = if !(p > sparse_threshold) {
        Regime::Sparse
    } else if p >= dense_threshold {
        Regime::Dense
    } else {
        Regime::Intermediate
    };
    RegimeReport {
        regime,
        sparse_threshold,
        dense_threshold,
        heuristic: true,
    }
}

/// `sigma sqrt(2 log(p1) / n)`, an envelope for `max_j |epsbar_j|` that
/// interpolation estimators cannot avoid.
pub fn interpolation_error_envelope(n: usize, p1: usize, sigma: f64) -> Result<f64> {
    if p1 < 2 {
        return Err(invalid("interpolation envelope needs p1 >= 2"));
    }
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    Ok(sigma * (2.0 * (p1 as f64).ln() / n as f64).sqrt())
}

/// The "slight smoothing" bandwidth `(log n)^(delta/d) / p_min`.
pub fn slight_smoothing(inputs: &RateInputs, delta: f64) -> f64 {
    inputs.n_f().ln().powf(delta / inputs.dim() as f64) / inputs.p_min()
}
