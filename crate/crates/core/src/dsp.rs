//! Numeric signal primitives: resampling, spectral power, peak picking and
//! reversible instance normalization.

use std::f64::consts::PI;

use num_traits::Float;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sinc taps on each side of the interpolation point, in input samples.
pub const RESAMPLE_HALF_TAPS: usize = 32;

/// Default RevIN stabilizer.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Peak picking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakConfig {
    pub min_distance_s: f64,
    pub min_prominence: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            min_distance_s: 0.3,
            min_prominence: 10.0,
        }
    }
}

/// Hann-windowed sinc resampling onto the grid `j / fs_out`.
///
/// Output length is `round(n * fs_out / fs_in)`. When downsampling the sinc
/// cutoff drops to `fs_out / 2`. Samples beyond either end are taken to equal
/// the nearest edge sample, and the kernel weights at each output point are
/// normalized to unit sum so constants are reproduced exactly.
pub fn resample(values: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0 && fs_out > 0.0) {
        return Err(Error::invalid(format!(
            "resample rates must be positive (in {fs_in}, out {fs_out})"
        )));
    }
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "resample needs at least 2 samples, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("resample input contains NaN"));
    }
    if fs_in == fs_out {
        return Ok(values.to_vec());
    }
    let n = values.len();
    let m = (n as f64 * fs_out / fs_in).round() as usize;
    let cutoff = (fs_out / fs_in).min(1.0);
    let step = fs_in / fs_out;
    let half = RESAMPLE_HALF_TAPS as isize;
    let last = n as isize - 1;

    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        // Output time in units of input samples.
        let pos = j as f64 * step;
        let center = pos.floor() as isize;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for k in (center - half + 1)..=(center + half) {
            let u = pos - k as f64;
            let w = windowed_sinc(u, cutoff, RESAMPLE_HALF_TAPS as f64);
            if w == 0.0 {
                continue;
            }
            acc += w * values[k.clamp(0, last) as usize];
            wsum += w;
        }
        out.push(acc / wsum);
    }
    Ok(out)
}

fn windowed_sinc(u: f64, cutoff: f64, half_width: f64) -> f64 {
    if u.abs() >= half_width {
        return 0.0;
    }
    let window = 0.5 * (1.0 + (PI * u / half_width).cos());
    let x = cutoff * u;
    let sinc = if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    cutoff * sinc * window
}

/// Power spectrum over bins `1..=n/2`, as `(frequency, |X_k|^2)` pairs.
fn one_sided_power(values: &[f64], fs_hz: f64) -> Vec<(f64, f64)> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (1..=n / 2)
        .map(|k| (k as f64 * fs_hz / n as f64, buf[k].norm_sqr()))
        .collect()
}

/// Fraction of non-DC power within `[f_lo, f_hi]`.
pub fn band_power_fraction(values: &[f64], fs_hz: f64, f_lo: f64, f_hi: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid("band power needs at least 2 samples"));
    }
    if !(f_lo < f_hi && f_hi <= fs_hz / 2.0) {
        return Err(Error::invalid(format!(
            "band [{f_lo}, {f_hi}] Hz is not inside (0, fs/2 = {}]",
            fs_hz / 2.0
        )));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::invalid("no AC power"));
    }
    let spectrum = one_sided_power(values, fs_hz);
    let total: f64 = spectrum.iter().map(|(_, p)| p).sum();
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(total > 1e-24 * values.len() as f64 * values.len() as f64 * scale * scale) {
        return Err(Error::invalid("no AC power"));
    }
    let inside: f64 = spectrum
        .iter()
        .filter(|(f, _)| *f >= f_lo && *f <= f_hi)
        .map(|(_, p)| p)
        .sum();
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Peak indices in ascending order.
///
/// Candidates are strict local maxima (a plateau contributes its leftmost
/// sample), filtered by topographic prominence and then thinned greedily from
/// the tallest down so kept peaks are at least `round(min_distance_s * fs)`
/// samples apart. NaN samples split the input into independent runs.
pub fn detect_peaks(values: &[f64], fs_hz: f64, cfg: &PeakConfig) -> Vec<usize> {
    let min_dist = ((cfg.min_distance_s * fs_hz).round() as usize).max(1);
    let mut out = Vec::new();
    for (start, end) in finite_runs(values) {
        let run = &values[start..end];
        out.extend(peaks_in_run(run, min_dist, cfg.min_prominence).into_iter().map(|i| i + start));
    }
    out
}

/// Half-open ranges of consecutive non-NaN samples.
pub fn finite_runs(values: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, v) in values.iter().enumerate() {
        match (v.is_nan(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, values.len()));
    }
    runs
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push(i);
                i = ahead;
            }
        }
        i += 1;
    }
    peaks
}

pub(crate) fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if x[i] > h {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = h;
    let mut i = peak;
    while i + 1 < x.len() {
        i += 1;
        if x[i] > h {
            break;
        }
        right_min = right_min.min(x[i]);
    }
    h - left_min.max(right_min)
}

fn peaks_in_run(x: &[f64], min_dist: usize, min_prominence: f64) -> Vec<usize> {
    let candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| prominence(x, p) >= min_prominence)
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // Tallest first; ties keep the earlier sample first.
    order.sort_by(|&a, &b| x[candidates[b]].total_cmp(&x[candidates[a]]).then(a.cmp(&b)));
    let mut removed = vec![false; candidates.len()];
    let mut kept = vec![false; candidates.len()];
    for &c in &order {
        if removed[c] {
            continue;
        }
        kept[c] = true;
        let pos = candidates[c];
        let mut j = c;
        while j > 0 && pos - candidates[j - 1] < min_dist {
            j -= 1;
            removed[j] = true;
        }
        let mut j = c + 1;
        while j < candidates.len() && candidates[j] - pos < min_dist {
            removed[j] = true;
            j += 1;
        }
    }
    candidates
        .iter()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(&p, _)| p)
        .collect()
}

/// Per-segment statistics for reversible instance normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevinStats {
    pub mean: f64,
    /// Population variance (divisor `C`).
    pub var: f64,
    pub eps: f64,
}

impl RevinStats {
    pub fn scale(&self) -> f64 {
        (self.var + self.eps).sqrt()
    }
}

pub fn revin_stats<T: Float>(values: &[T], eps: f64) -> RevinStats {
    let c = values.len() as f64;
    let mean = values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>() / c;
    let var = values
        .iter()
        .map(|v| {
            let d = v.to_f64().unwrap_or(f64::NAN) - mean;
            d * d
        })
        .sum::<f64>()
        / c;
    RevinStats { mean, var, eps }
}

pub fn revin_normalize<T: Float>(values: &[T], stats: &RevinStats) -> Vec<T> {
    let scale = stats.scale();
    values
        .iter()
        .map(|&v| T::from((v.to_f64().unwrap_or(f64::NAN) - stats.mean) / scale).unwrap())
        .collect()
}

pub fn revin_denormalize<T: Float>(model_out: &[T], stats: &RevinStats) -> Vec<T> {
    let scale = stats.scale();
    model_out
        .iter()
        .map(|&y| T::from(scale * y.to_f64().unwrap_or(f64::NAN) + stats.mean).unwrap())
        .collect()
}

/// Crops or edge-pads symmetrically to exactly `len` samples.
pub fn fit_length(values: &[f64], len: usize) -> Vec<f64> {
    let n = values.len();
    if n == len || n == 0 {
        return values.to_vec();
    }
    if n > len {
        let lead = (n - len) / 2;
        values[lead..lead + len].to_vec()
    } else {
        let lead = (len - n) / 2;
        let trail = len - n - lead;
        let mut out = Vec::with_capacity(len);
        out.extend(std::iter::repeat(values[0]).take(lead));
        out.extend_from_slice(values);
        out.extend(std::iter::repeat(values[n - 1]).take(trail));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(f: f64, amp: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    /// Direct O(n^2) DFT, independent of the FFT path.
    fn dft_band_fraction(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mut inside = 0.0;
        let mut total = 0.0;
        for k in 1..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let p = re * re + im * im;
            total += p;
            let f = k as f64 * fs / n as f64;
            if f >= lo && f <= hi {
                inside += p;
            }
        }
        inside / total
    }

    #[test]
    fn resample_constant_stays_constant() {
        let x = vec![87.25; 500];
        for (a, b) in [(125.0, 120.0), (120.0, 50.0), (50.0, 240.0)] {
            let y = resample(&x, a, b).unwrap();
            assert!(y.iter().all(|v| (v - 87.25).abs() < 1e-12), "{a}->{b}");
        }
    }

    #[test]
    fn resample_length_125_to_120() {
        let y = resample(&vec![1.0; 1250], 125.0, 120.0).unwrap();
        assert_eq!(y.len(), 1200);
    }

    #[test]
    fn resample_round_trip_sinusoid() {
        let amp = 20.0;
        let x = tone(1.5, amp, 125.0, 1250);
        let down = resample(&x, 125.0, 120.0).unwrap();
        let back = resample(&down, 120.0, 125.0).unwrap();
        assert_eq!(back.len(), 1250);
        let edge = 63; // ~0.5 s at 125 Hz
        let inner = &back[edge..1250 - edge];
        let mse: f64 = inner
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let t = (i + edge) as f64 / 125.0;
                let truth = amp * (2.0 * PI * 1.5 * t).sin();
                (v - truth).powi(2)
            })
            .sum::<f64>()
            / inner.len() as f64;
        assert!(mse.sqrt() < 0.01 * amp, "rmse {}", mse.sqrt());
    }

    #[test]
    fn resample_rejects_short_input() {
        assert!(resample(&[1.0], 120.0, 125.0).is_err());
    }

    #[test]
    fn band_fraction_single_tones() {
        let fs = 120.0;
        let inband = band_power_fraction(&tone(1.0, 1.0, fs, 1200), fs, 0.5, 3.0).unwrap();
        assert!(inband >= 0.99);
        let out = band_power_fraction(&tone(5.0, 1.0, fs, 1200), fs, 0.5, 3.0).unwrap();
        assert!(out <= 0.01);
    }

    #[test]
    fn band_fraction_equal_split_matches_dft_oracle() {
        let fs = 120.0;
        let x: Vec<f64> = tone(1.0, 1.0, fs, 1200)
            .iter()
            .zip(tone(4.0, 1.0, fs, 1200))
            .map(|(a, b)| a + b)
            .collect();
        let got = band_power_fraction(&x, fs, 0.5, 3.0).unwrap();
        let oracle = dft_band_fraction(&x, fs, 0.5, 3.0);
        assert!((got - 0.5).abs() <= 0.02);
        assert!((got - oracle).abs() < 1e-9);
    }

    #[test]
    fn band_fraction_no_ac_power() {
        let err = band_power_fraction(&[3.0; 64], 32.0, 0.5, 3.0).unwrap_err();
        assert!(err.to_string().contains("no AC power"));
    }

    #[test]
    fn peaks_of_sinusoid() {
        let fs = 120.0;
        let x = tone(1.0, 40.0, fs, 1200);
        let p = detect_peaks(&x, fs, &PeakConfig::default());
        assert_eq!(p.len(), 10);
        // Analytic maxima at t = 0.25 + k s.
        for (k, &i) in p.iter().enumerate() {
            assert_eq!(i, 30 + 120 * k);
        }
    }

    #[test]
    fn constant_has_no_peaks() {
        assert!(detect_peaks(&[5.0; 300], 120.0, &PeakConfig::default()).is_empty());
    }

    #[test]
    fn close_bumps_keep_taller() {
        let fs = 100.0;
        let mut x = vec![0.0; 200];
        // bumps at 50 and 70 (0.2 s apart)
        for (c, h) in [(50usize, 30.0), (70usize, 40.0)] {
            for i in 0..200 {
                let d = i as f64 - c as f64;
                x[i] += h * (-d * d / 8.0).exp();
            }
        }
        let p = detect_peaks(&x, fs, &PeakConfig::default());
        assert_eq!(p, vec![70]);
    }

    #[test]
    fn plateau_reports_leftmost() {
        let x = [0.0, 20.0, 20.0, 20.0, 0.0];
        assert_eq!(detect_peaks(&x, 10.0, &PeakConfig { min_distance_s: 0.1, min_prominence: 10.0 }), vec![1]);
    }

    #[test]
    fn nan_runs_are_independent() {
        let fs = 120.0;
        let mut x = tone(1.0, 40.0, fs, 1200);
        for v in &mut x[400..800] {
            *v = f64::NAN;
        }
        let p = detect_peaks(&x, fs, &PeakConfig::default());
        assert!(p.iter().all(|&i| !(400..800).contains(&i)));
        assert!(!p.is_empty());
    }

    #[test]
    fn revin_examples() {
        let s = revin_stats(&[1.0f64, 2.0, 3.0], DEFAULT_EPS);
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.var - 2.0 / 3.0).abs() < 1e-15);
        let z = revin_normalize(&[1.0f64, 2.0, 3.0], &s);
        let expected = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        assert!((z[0] + expected).abs() < 1e-12 && z[1].abs() < 1e-15 && (z[2] - expected).abs() < 1e-12);
        assert!((z[2] - 1.22473).abs() < 1e-4);

        let c = revin_stats(&[5.0f64; 3], DEFAULT_EPS);
        assert_eq!((c.mean, c.var), (5.0, 0.0));
        assert_eq!(revin_normalize(&[5.0f64; 3], &c), vec![0.0; 3]);
        let single = revin_stats(&[0.0f64], DEFAULT_EPS);
        assert_eq!((single.mean, single.var), (0.0, 0.0));
    }

    #[test]
    fn revin_denormalize_examples() {
        let s = RevinStats { mean: 90.0, var: 100.0, eps: 1e-5 };
        let y = revin_denormalize(&[1.0f64], &s);
        assert!((y[0] - (100.00001f64.sqrt() + 90.0)).abs() < 1e-12);
        assert!((y[0] - 100.0000005).abs() < 1e-9);
        assert_eq!(revin_denormalize(&[0.0f64; 4], &s), vec![90.0; 4]);
    }

    #[test]
    fn fit_length_crops_and_pads() {
        assert_eq!(fit_length(&[1.0, 2.0, 3.0, 4.0], 2), vec![2.0, 3.0]);
        assert_eq!(fit_length(&[1.0, 2.0], 5), vec![1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn revin_round_trip(x in prop::collection::vec(-500.0f64..500.0, 2..64)) {
            let s = revin_stats(&x, DEFAULT_EPS);
            let back = revin_denormalize(&revin_normalize(&x, &s), &s);
            let norm = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + norm));
            }
        }

        #[test]
        fn resampler_is_linear(
            x in prop::collection::vec(-10.0f64..10.0, 40..80),
            y in prop::collection::vec(-10.0f64..10.0, 40..80),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            let mix: Vec<f64> = x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
            let rx = resample(x, 125.0, 120.0).unwrap();
            let ry = resample(y, 125.0, 120.0).unwrap();
            let rm = resample(&mix, 125.0, 120.0).unwrap();
            for i in 0..rm.len() {
                prop_assert!((rm[i] - (a * rx[i] + b * ry[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn band_fraction_scale_and_offset_invariant(
            x in prop::collection::vec(-10.0f64..10.0, 64..128),
            k in 0.01f64..100.0,
            c in -100.0f64..100.0,
        ) {
            prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
            let base = band_power_fraction(&x, 32.0, 0.5, 3.0).unwrap();
            let moved: Vec<f64> = x.iter().map(|v| k * v + c).collect();
            let other = band_power_fraction(&moved, 32.0, 0.5, 3.0).unwrap();
            prop_assert!((base - other).abs() < 1e-9);
        }

        #[test]
        fn peaks_ascending_and_separated(
            x in prop::collection::vec(0.0f64..100.0, 10..400),
            dist in 0.05f64..0.5,
        ) {
            let cfg = PeakConfig { min_distance_s: dist, min_prominence: 5.0 };
            let p = detect_peaks(&x, 100.0, &cfg);
            let d = (dist * 100.0).round() as usize;
            for w in p.windows(2) {
                prop_assert!(w[0] < w[1]);
                prop_assert!(w[1] - w[0] >= d);
            }
        }
    }
}
