//! Compensated reductions used by the filter statistics and the run report.

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}

/// Mean and population standard deviation (two-pass, compensated).
/// Returns `None` for an empty input.
pub fn mean_and_population_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / n;
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value();
    Some((mean, (ss / n).sqrt()))
}

/// Mean and sample (n - 1) standard deviation. The deviation is 0 for a single value.
pub fn mean_and_sample_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / n;
    if values.len() < 2 {
        return Some((mean, 0.0));
    }
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

/// Half-width of the normal-approximation 95% confidence interval of the mean.
pub fn ci95_half_width(values: &[f64]) -> f64 {
    match mean_and_sample_std(values) {
        Some((_, std)) => 1.96 * std / (values.len() as f64).sqrt(),
        None => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..10 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 10.0);
    }

    #[test]
    fn population_vs_sample_std() {
        assert_eq!(mean_and_population_std(&[0.0, 1.0]), Some((0.5, 0.5)));
        let (_, s) = mean_and_sample_std(&[0.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(mean_and_sample_std(&[3.0]), Some((3.0, 0.0)));
        assert_eq!(mean_and_population_std(&[]), None);
    }

    #[test]
    fn ci_half_width_formula() {
        let v = [0.2, 0.4, 0.6, 0.8];
        let (_, s) = mean_and_sample_std(&v).unwrap();
        assert!((ci95_half_width(&v) - 1.96 * s / 2.0).abs() < 1e-15);
        assert_eq!(ci95_half_width(&[0.5]), 0.0);
    }
}
