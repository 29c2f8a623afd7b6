//! CSV formatting and small statistical helpers for the experiment
//! reports. All floats print with 9 significant digits so identical
//! runs produce byte-identical files.

/// 9 significant digits, scientific notation; stable across platforms.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.8e}", x)
    }
}

/// Strips characters that would break one-row-per-record CSV.
pub fn sanitize(status: &str) -> String {
    status
        .chars()
        .map(|c| if c == ',' || c == '\n' || c == '\r' { ';' } else { c })
        .collect()
}

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson95(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (f64::NAN, f64::NAN);
    }
    let z = 1.959_963_984_540_054f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Pool-adjacent-violators isotonic regression (nondecreasing).
pub fn pav_nondecreasing(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    if n == 0 {
        return Vec::new();
    }
    // blocks of (sum, count)
    let mut sums: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for &y in ys {
        sums.push(y);
        counts.push(1);
        while sums.len() > 1 {
            let k = sums.len();
            let mean_last = sums[k - 1] / counts[k - 1] as f64;
            let mean_prev = sums[k - 2] / counts[k - 2] as f64;
            if mean_prev <= mean_last {
                break;
            }
            let s = sums.pop().unwrap();
            let c = counts.pop().unwrap();
            *sums.last_mut().unwrap() += s;
            *counts.last_mut().unwrap() += c;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (s, c) in sums.iter().zip(&counts) {
        let m = s / *c as f64;
        for _ in 0..*c {
            out.push(m);
        }
    }
    out
}

/// Least-squares line fit; returns (slope, intercept).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Simple CSV assembly: a header line plus preformatted rows.
pub fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}
