//! Small numerical helpers: stable log-sum-exp and compensated summation.

/// Log-sum-exp of a slice, `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let mut acc = LogSumAcc::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Streaming log-sum-exp accumulator.
///
/// Tracks the running maximum and the sum of exponentials rescaled to it, so
/// arbitrarily many terms can be folded in without overflow. Accumulators can
/// be merged, which is how enumeration partitions are combined in a fixed
/// order regardless of how the work was split.
#[derive(Clone, Copy, Debug)]
pub struct LogSumAcc {
    max: f64,
    sum: f64,
}

impl LogSumAcc {
    pub fn new() -> Self {
        LogSumAcc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub fn merge(&mut self, other: &LogSumAcc) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        } else {
            self.sum += other.sum * (other.max - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for LogSumAcc {
    fn default() -> Self {
        Self::new()
    }
}

/// Neumaier-compensated sum; used where many small terms of mixed sign must
/// close an identity to ~1e-9 (enumeration averages, KL decompositions).
#[derive(Clone, Copy, Debug, Default)]
pub struct StableSum {
    sum: f64,
    comp: f64,
}

impl StableSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean and standard error of a set of per-sample Monte Carlo values.
///
/// When the samples were drawn antithetically, the two halves are dependent
/// by construction, so each pair is collapsed to its mean and the pairs are
/// treated as the independent units.
pub fn mc_mean_se(per_sample: &[f64], antithetic: bool) -> (f64, f64) {
    let units: Vec<f64> = if antithetic {
        let half = per_sample.len() / 2;
        (0..half)
            .map(|s| 0.5 * (per_sample[s] + per_sample[s + half]))
            .collect()
    } else {
        per_sample.to_vec()
    };
    let m = units.len() as f64;
    let mut sum = StableSum::new();
    for &b in &units {
        sum.add(b);
    }
    let mean = sum.value() / m;
    let mut var = StableSum::new();
    for &b in &units {
        var.add((b - mean) * (b - mean));
    }
    let se = if units.len() > 1 {
        (var.value() / (m - 1.0) / m).sqrt()
    } else {
        f64::INFINITY
    };
    (mean, se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let xs = [0.3f64, -1.2, 2.5, 0.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_handles_large_inputs() {
        let xs = [1000.0, 1000.0];
        assert!((logsumexp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn merge_agrees_with_sequential_accumulation() {
        let xs = [0.1, -4.0, 7.3, 2.2, -0.5, 3.3];
        let mut whole = LogSumAcc::new();
        for &x in &xs {
            whole.add(x);
        }
        let mut left = LogSumAcc::new();
        let mut right = LogSumAcc::new();
        for &x in &xs[..3] {
            left.add(x);
        }
        for &x in &xs[3..] {
            right.add(x);
        }
        left.merge(&right);
        assert!((whole.value() - left.value()).abs() < 1e-13);
    }

    #[test]
    fn stable_sum_recovers_cancelling_terms() {
        let mut s = StableSum::new();
        s.add(1e16);
        s.add(1.0);
        s.add(-1e16);
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn mc_mean_se_plain_and_antithetic() {
        let xs = [1.0, 3.0, 2.0, 2.0];
        let (mean, se) = mc_mean_se(&xs, false);
        assert!((mean - 2.0).abs() < 1e-15);
        // sample variance 2/3, se = sqrt(2/3/4)
        assert!((se - (2.0 / 3.0 / 4.0f64).sqrt()).abs() < 1e-15);
        // antithetic collapses (1,2) and (3,2) into pair means 1.5, 2.5
        let (mean_a, se_a) = mc_mean_se(&xs, true);
        assert!((mean_a - 2.0).abs() < 1e-15);
        assert!((se_a - (0.5f64 / 2.0).sqrt()).abs() < 1e-15);
    }
}
