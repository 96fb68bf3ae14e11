//! Descriptive statistics and least squares used across the crate.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn std_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Fit of `y = intercept + slope * x` by (optionally weighted) least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    /// Residual standard deviation with n - 2 degrees of freedom.
    pub residual_std: f64,
    pub n: usize,
}

/// Ordinary least squares with intercept. Returns `None` when the regressor
/// has no variation or there are fewer than three points.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    weighted_ols(x, y, None)
}

/// Weighted least squares; weights are inverse variances up to a constant.
pub fn weighted_ols(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Option<LinearFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(weight).sum();
    let mx = (0..n).map(|i| weight(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| weight(i) * y[i]).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        sxx += weight(i) * dx * dx;
        sxy += weight(i) * dx * (y[i] - my);
    }
    let scale = (0..n).map(|i| weight(i) * x[i] * x[i]).sum::<f64>() / sw;
    if !(sxx > 1e-14 * scale * sw) || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut sse = 0.0;
    for i in 0..n {
        let r = y[i] - intercept - slope * x[i];
        sse += weight(i) * r * r;
    }
    // normalise weights to mean one so the residual scale is comparable
    let sigma2 = sse / (sw / n as f64) / (n - 2) as f64;
    let slope_se = (sigma2 / (sxx / (sw / n as f64))).sqrt();
    let intercept_se = (sigma2 * (1.0 / n as f64 + mx * mx / (sxx / (sw / n as f64)))).sqrt();
    Some(LinearFit { intercept, slope, intercept_se, slope_se, residual_std: sigma2.sqrt(), n })
}

/// Ranks with ties sharing their average rank (1-based).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}
