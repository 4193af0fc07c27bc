use serde::Serialize;

/// Multi-indices `r` with `|r| <= m`, grouped by total degree, in graded
/// lexicographic order (first coordinate descending within a degree). The
/// first entry is always the zero multi-index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiIndexBasis {
    degree: usize,
    dim: usize,
    indices: Vec<Vec<u32>>,
    factorials: Vec<f64>,
}

impl MultiIndexBasis {
    pub fn new(degree: usize, dim: usize) -> Self {
        assert!(dim >= 1, "basis dimension must be positive");
        let mut indices = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0u32; dim];
            push_compositions(total as u32, 0, &mut current, &mut indices);
        }
        let factorials = indices
            .iter()
            .map(|r| r.iter().map(|&k| factorial(k)).product())
            .collect();
        Self {
            degree,
            dim,
            indices,
            factorials,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `binom(d + m, d)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Fills `out` with `(u/h)^r / r!` for every multi-index `r`.
    pub fn eval_into(&self, u: &[f64], h: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for (slot, (r, fact)) in out.iter_mut().zip(self.indices.iter().zip(&self.factorials)) {
            let mut v = 1.0;
            for (&power, &x) in r.iter().zip(u) {
                if power > 0 {
                    v *= (x / h).powi(power as i32);
                }
            }
            *slot = v / fact;
        }
    }

    pub fn basis_vector(&self, u: &[f64], h: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(u, h, &mut out);
        out
    }
}

fn push_compositions(remaining: u32, k: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let d = current.len();
    if k == d - 1 {
        current[k] = remaining;
        out.push(current.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        current[k] = v;
        push_compositions(remaining - v, k + 1, current, out);
    }
    current[k] = 0;
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// `binom(n, k)` as an integer.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
