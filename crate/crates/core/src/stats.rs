use num_complex::Complex64 as C64;
use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = CompensatedSum::default();
    xs.into_iter().for_each(|x| s.add(x));
    s.value()
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanAccumulator {
    n: usize,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum.value() / self.n as f64
    }

    /// Sample standard deviation over `sqrt(n)`; zero for a single sample.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mean = self.mean();
        let var = ((self.sum_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

impl FromIterator<f64> for MeanAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        iter.into_iter().for_each(|x| acc.push(x));
        acc
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub quantity: String,
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub s_exponent: f64,
    pub z: Option<(f64, f64)>,
    /// Samples dropped because the linear solve failed its residual check.
    pub rejected: usize,
}

impl MomentEstimate {
    pub fn from_samples(quantity: &str, values: &[f64], s: f64, z: Option<C64>) -> Self {
        let acc: MeanAccumulator = values.iter().copied().collect();
        Self {
            quantity: quantity.to_string(),
            value: acc.mean(),
            stderr: acc.stderr(),
            samples: acc.count(),
            s_exponent: s,
            z: z.map(|z| (z.re, z.im)),
            rejected: 0,
        }
    }
}

/// Least-squares fit of `ln y = ln C - rate * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub rate_stderr: f64,
    pub points: usize,
}

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = compensated_sum(xs.iter().copied()) / nf;
    let my = compensated_sum(ys.iter().copied()) / nf;
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let syy = compensated_sum(ys.iter().map(|y| (y - my) * (y - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = compensated_sum(
        xs.iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2)),
    );
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
    })
}

/// Log-linear decay fit on the positive entries of `ys`.
pub fn fit_decay(xs: &[f64], ys: &[f64]) -> Option<DecayFit> {
    let (fx, fy): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0 && y.is_finite())
        .map(|(x, y)| (*x, y.ln()))
        .unzip();
    let fit = linear_fit(&fx, &fy)?;
    Some(DecayFit {
        rate: -fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
        rate_stderr: fit.slope_stderr,
        points: fx.len(),
    })
}

/// Keep points whose estimate clears both the noise floor `10 * stderr` and
/// the absolute floor `1e-14`.
pub fn above_noise_floor(xs: &[f64], values: &[f64], stderrs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    xs.iter()
        .zip(values.iter().zip(stderrs))
        .filter(|(_, (v, e))| **v >= 1e-14 && **v >= 10.0 * **e)
        .map(|(x, (v, _))| (*x, *v))
        .unzip()
}
