//! Small shared numerics: order-stable summation, summary statistics,
//! low-discrepancy sequences, seed mixing, and dense linear-algebra helpers
//! for the tiny (d <= 3) matrices that appear in the schemes.

/// Pairwise (cascade) summation. Deterministic for a fixed slice and accurate
/// to O(log n) rounding growth, which keeps Monte Carlo means reproducible
/// bit-for-bit across runs with the same inputs.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean (unbiased variance, pairwise
/// sums in both passes). Returns `(mean, std_error)`; the standard error is
/// zero for fewer than two samples.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    // Degenerate samples (every value bit-identical) have that value as
    // their mean and exactly zero spread; computing them through the sums
    // would pick up spurious ulp-level rounding noise.
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// SplitMix64 finalizer: a well-mixed bijection on u64, used to derive
/// independent stream seeds from (base seed, index) pairs.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a per-index seed from a base seed. Distinct `(base, index)` pairs
/// give (with overwhelming probability) distinct seeds, and the map is
/// platform-independent.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index))
}

/// First eight primes, used as Halton bases (one per coordinate).
pub const HALTON_PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical-inverse (van der Corput) value of `index` in the given base;
/// `index >= 1` gives values in (0, 1).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut result = 0.0;
    while index > 0 {
        result += (index % base) as f64 * inv;
        index /= base;
        inv /= b;
    }
    result
}

/// `dim`-dimensional Halton point with index `index >= 1` (coordinates use
/// prime bases 2, 3, 5, ...). Panics for `dim > 8`, which does not occur for
/// the state dimensions this crate supports.
pub fn halton_point(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= HALTON_PRIMES.len(), "halton_point supports dim <= 8");
    (0..dim)
        .map(|k| radical_inverse(index, HALTON_PRIMES[k]))
        .collect()
}

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// l1 norm.
pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Euclidean distance.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// a - b componentwise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// a + b componentwise.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// a + s * b componentwise.
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Row-major (rows x cols) matrix-vector product.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    (0..rows)
        .map(|i| dot(&m[i * cols..(i + 1) * cols], v))
        .collect()
}

/// For a row-major d x m matrix sigma, returns the d x d product
/// sigma * sigma^T (row-major).
pub fn gram(sigma: &[f64], d: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(sigma.len(), d * m);
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = dot(&sigma[i * m..(i + 1) * m], &sigma[j * m..(j + 1) * m]);
        }
    }
    a
}

/// Frobenius norm of a matrix given as a flat slice.
pub fn frobenius(m: &[f64]) -> f64 {
    norm2(m)
}

/// Attempts a Cholesky factorization of the symmetric row-major d x d matrix
/// `a + shift * I`; success certifies that the minimum eigenvalue of `a` is
/// at least `-shift`.
pub fn is_psd_within(a: &[f64], d: usize, shift: f64) -> bool {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    true
}

/// Monotone cubic interpolant (Fritsch–Carlson) over strictly increasing
/// knots. Evaluation clamps to the knot range endpoints.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant; requires at least two strictly increasing knots.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len());
        let n = xs.len();
        let mut d = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let hx = xs[i + 1] - xs[i];
            assert!(hx > 0.0, "knots must be strictly increasing");
            d[i] = (ys[i + 1] - ys[i]) / hx;
        }
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            m[i] = if d[i - 1] * d[i] <= 0.0 {
                0.0
            } else {
                0.5 * (d[i - 1] + d[i])
            };
        }
        // Fritsch–Carlson clamp keeps the interpolant monotone on each panel.
        for i in 0..n - 1 {
            if d[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
            } else {
                let alpha = m[i] / d[i];
                let beta = m[i + 1] / d[i];
                let s = alpha * alpha + beta * beta;
                if s > 9.0 {
                    let tau = 3.0 / s.sqrt();
                    m[i] = tau * alpha * d[i];
                    m[i + 1] = tau * beta * d[i];
                }
            }
        }
        Self {
            xs,
            ys,
            slopes: m,
        }
    }

    /// Evaluates the interpolant, clamping x to the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // Binary search for the panel containing x.
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let hx = self.xs[lo + 1] - self.xs[lo];
        let t = (x - self.xs[lo]) / hx;
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        h00 * self.ys[lo]
            + h10 * hx * self.slopes[lo]
            + h01 * self.ys[lo + 1]
            + h11 * hx * self.slopes[lo + 1]
    }
}
