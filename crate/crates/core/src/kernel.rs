//! Compactly supported product kernels on `[-1,1]^d`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};

/// Values below this are flushed to exactly zero.
const FLUSH: f64 = 1e-300;

type KernelFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Epanechnikov,
    Triangular,
    Custom(KernelFn),
}

/// A nonnegative kernel supported on the sup-norm unit ball, together with
/// the constants it is declared to satisfy: `k_min` on `[-delta, delta]^d`,
/// the upper bound `k_max` and a sup-norm Lipschitz constant.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    dim: usize,
    shape: Shape,
    delta: f64,
    k_min: f64,
    k_max: f64,
    lipschitz_const: f64,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("delta", &self.delta)
            .field("k_min", &self.k_min)
            .field("k_max", &self.k_max)
            .field("lipschitz_const", &self.lipschitz_const)
            .finish()
    }
}

impl Kernel {
    /// `K(u) = prod_k max(1 - u_k^2, 0)`.
    pub fn epanechnikov_product(dim: usize) -> Self {
        Self {
            name: "epanechnikov".into(),
            dim,
            shape: Shape::Epanechnikov,
            delta: 0.5,
            k_min: 0.75f64.powi(dim as i32),
            k_max: 1.0,
            lipschitz_const: 2.0 * dim as f64,
        }
    }

    /// `K(u) = prod_k max(1 - |u_k|, 0)`.
    pub fn triangular_product(dim: usize) -> Self {
        Self {
            name: "triangular".into(),
            dim,
            shape: Shape::Triangular,
            delta: 0.5,
            k_min: 0.5f64.powi(dim as i32),
            k_max: 1.0,
            lipschitz_const: dim as f64,
        }
    }

    /// A user-supplied kernel. Whatever `f` returns outside the unit cube is
    /// ignored: evaluation is zero there.
    pub fn custom<F>(
        name: impl Into<String>,
        dim: usize,
        f: F,
        delta: f64,
        k_min: f64,
        k_max: f64,
        lipschitz_const: f64,
    ) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            shape: Shape::Custom(Arc::new(f)),
            delta,
            k_min,
            k_max,
            lipschitz_const,
        }
    }

    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(Self::epanechnikov_product(dim)),
            "triangular" => Ok(Self::triangular_product(dim)),
            other => Err(invalid(format!(
                "unknown kernel '{other}' (expected 'epanechnikov' or 'triangular')"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k_min(&self) -> f64 {
        self.k_min
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn lipschitz_const(&self) -> f64 {
        self.lipschitz_const
    }

    #[inline]
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        if u.iter().any(|x| x.abs() > 1.0) {
            return 0.0;
        }
        let v = match &self.shape {
            Shape::Epanechnikov => u.iter().map(|x| 1.0 - x * x).product(),
            Shape::Triangular => u.iter().map(|x| 1.0 - x.abs()).product(),
            Shape::Custom(f) => f(u).max(0.0),
        };
        if v < FLUSH {
            0.0
        } else {
            v
        }
    }
}

/// Empirical checks of a kernel's declared constants.
#[derive(Debug, Clone, Serialize)]
pub struct KernelDiagnostics {
    /// Largest `|K(u) - K(v)| / |u - v|_inf` over sampled and probe pairs.
    pub empirical_lipschitz: f64,
    pub max_value: f64,
    /// Smallest value seen on `[-delta, delta]^d`.
    pub min_inner_value: f64,
    /// Largest value seen outside the unit cube (must be zero).
    pub max_outside_support: f64,
    pub lipschitz_ok: bool,
    pub upper_ok: bool,
    pub lower_ok: bool,
    pub support_ok: bool,
    pub pass: bool,
}

/// Samples `samples` random points and pairs and compares what it sees with
/// the kernel's declared constants. Pairs straddling each face of the support
/// are always probed, so jumps at the boundary cannot slip through.
pub fn validate_kernel(kernel: &Kernel, samples: usize, seed: u64) -> KernelDiagnostics {
    let samples = samples.max(2);
    let d = kernel.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0; d];
    let mut v = vec![0.0; d];

    let mut lip: f64 = 0.0;
    let mut max_value: f64 = 0.0;
    let mut ratio = |a: &[f64], b: &[f64]| -> f64 {
        let dist = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if dist == 0.0 {
            return 0.0;
        }
        let (ka, kb) = (kernel.evaluate(a), kernel.evaluate(b));
        max_value = max_value.max(ka).max(kb);
        (ka - kb).abs() / dist
    };

    for i in 0..samples {
        for x in u.iter_mut() {
            *x = rng.random_range(-1.25..1.25);
        }
        if i % 2 == 0 {
            let scale = 10f64.powf(-rng.random_range(2.0..6.0));
            for (y, x) in v.iter_mut().zip(&u) {
                *y = x + scale * rng.random_range(-1.0..1.0);
            }
        } else {
            for y in v.iter_mut() {
                *y = rng.random_range(-1.25..1.25);
            }
        }
        lip = lip.max(ratio(&u, &v));
    }
    // probes across every face of the support and of the inner box
    for k in 0..d {
        for &edge in &[1.0, -1.0, kernel.delta(), -kernel.delta()] {
            for &eps in &[1e-4, 1e-7] {
                u.iter_mut().for_each(|x| *x = 0.0);
                v.iter_mut().for_each(|x| *x = 0.0);
                u[k] = edge * (1.0 - eps);
                v[k] = edge * (1.0 + eps);
                lip = lip.max(ratio(&u, &v));
            }
        }
    }

    let mut min_inner = f64::INFINITY;
    u.iter_mut().for_each(|x| *x = 0.0);
    max_value = max_value.max(kernel.evaluate(&u));
    for _ in 0..samples {
        for x in u.iter_mut() {
            *x = rng.random_range(-kernel.delta()..=kernel.delta());
        }
        let val = kernel.evaluate(&u);
        max_value = max_value.max(val);
        min_inner = min_inner.min(val);
    }

    let mut max_outside: f64 = 0.0;
    for _ in 0..samples {
        for x in u.iter_mut() {
            *x = rng.random_range(-2.0..2.0);
        }
        let k = rng.random_range(0..d);
        let mag = 1.0 + rng.random_range(1e-9..1.0);
        u[k] = if rng.random_bool(0.5) { mag } else { -mag };
        max_outside = max_outside.max(kernel.evaluate(&u));
    }

    let lipschitz_ok = lip <= kernel.lipschitz_const() * (1.0 + 1e-6);
    let upper_ok = max_value <= kernel.k_max() * (1.0 + 1e-12);
    let lower_ok = min_inner >= kernel.k_min() * (1.0 - 1e-12);
    let support_ok = max_outside == 0.0;
    KernelDiagnostics {
        empirical_lipschitz: lip,
        max_value,
        min_inner_value: min_inner,
        max_outside_support: max_outside,
        lipschitz_ok,
        upper_ok,
        lower_ok,
        support_ok,
        pass: lipschitz_ok && upper_ok && lower_ok && support_ok,
    }
}
