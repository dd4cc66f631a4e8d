//! Small numerical-statistics helpers shared across the crate.
//!
//! Reductions over Monte Carlo samples use compensated (Neumaier)
//! summation and always run in index order, so results do not depend on
//! how many worker threads produced the samples.

/// Neumaier compensated accumulator. `total()` adds the carried
/// compensation term, which keeps sums of ~1e9 doubles accurate to a
/// few ulps.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_total(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.total()
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty sample");
    compensated_total(values) / values.len() as f64
}

/// Sample mean and its standard error (sample std / sqrt(n)).
/// Two-pass for accuracy; SE is 0 for n = 1.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = mean(values);
    if n < 2 {
        return (m, 0.0);
    }
    let mut acc = CompensatedSum::new();
    for &v in values {
        let d = v - m;
        acc.add(d * d);
    }
    let var = acc.total() / (n as f64 - 1.0);
    (m, (var / n as f64).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    quantile(&v, 0.5)
}

/// Mean and standard error of the per-index differences `a[i] - b[i]`.
/// The paired form is what a same-ensemble comparison needs: common
/// path-to-path noise cancels instead of inflating the error bar.
pub fn paired_diff_mean_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_and_se(&diffs)
}
