//! Random vertical rail irregularity: spectral synthesis, Welch estimation and
//! sampling under moving wheelsets.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};

/// Placeholder spectrum shipped for tests; not a measured track spectrum.
pub const PLACEHOLDER_PSD: &str = include_str!("../../../data/placeholder_psd.txt");

/// Spatial-frequency unit of the first column of a PSD table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyUnit {
    CyclePerMetre,
    RadPerMetre,
}

/// Tabulated one-sided spectral density `S(Ω)` in m²/(rad/m).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdModel {
    /// Ascending angular wavenumbers, rad/m.
    pub omega: Vec<f64>,
    pub density: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub name: String,
}

impl PsdModel {
    pub fn new(omega: Vec<f64>, density: Vec<f64>, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if omega.len() != density.len() || omega.len() < 2 {
            return Err(invalid("PSD table needs at least two rows of equal length"));
        }
        if omega.windows(2).any(|w| !(w[1] > w[0])) || omega[0] < 0.0 {
            return Err(invalid("PSD frequencies must be non-negative and strictly increasing"));
        }
        if density.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("PSD density must be finite and non-negative"));
        }
        let model = Self {
            omega,
            density,
            lambda_min,
            lambda_max,
            name: String::from("table"),
        };
        model.with_band(lambda_min, lambda_max)
    }

    pub fn with_band(mut self, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_max > lambda_min && lambda_max.is_finite()) {
            return Err(invalid(format!(
                "wavelength band [{lambda_min}, {lambda_max}] must satisfy 0 < min < max"
            )));
        }
        self.lambda_min = lambda_min;
        self.lambda_max = lambda_max;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Constant density over the band.
    pub fn flat(level: f64, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        let (lo, hi) = (2.0 * PI / lambda_max, 2.0 * PI / lambda_min);
        Self::new(vec![lo * 0.5, hi * 2.0], vec![level, level], lambda_min, lambda_max)
    }

    /// Parses a two-column table preceded by a `units: <freq> <density>` line.
    ///
    /// Frequency units: `cycle/m`, `rad/m`. Density units: `m^2/(cycle/m)`,
    /// `mm^2/(cycle/m)`, `m^2/(rad/m)`, `mm^2/(rad/m)`.
    pub fn parse(text: &str, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        let mut units: Option<(FrequencyUnit, f64, FrequencyUnit)> = None;
        let (mut omega, mut density) = (Vec::new(), Vec::new());
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("units:") {
                let mut parts = rest.split_whitespace();
                let f = parse_freq_unit(parts.next().unwrap_or(""))?;
                let (scale, per) = parse_density_unit(parts.next().unwrap_or(""))?;
                units = Some((f, scale, per));
                continue;
            }
            let (fu, scale, per) = units
                .ok_or_else(|| Error::Format("PSD file lacks a units header line".into()))?;
            let mut cols = line.split_whitespace().map(str::parse::<f64>);
            let (Some(Ok(x)), Some(Ok(s)), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format(format!("PSD line {}: expected two numbers", lineno + 1)));
            };
            let w = match fu {
                FrequencyUnit::CyclePerMetre => 2.0 * PI * x,
                FrequencyUnit::RadPerMetre => x,
            };
            let s_omega = match per {
                FrequencyUnit::CyclePerMetre => s * scale / (2.0 * PI),
                FrequencyUnit::RadPerMetre => s * scale,
            };
            omega.push(w);
            density.push(s_omega);
        }
        Self::new(omega, density, lambda_min, lambda_max)
    }

    pub fn load(path: impl AsRef<Path>, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text, lambda_min, lambda_max)?.with_name(path.display().to_string()))
    }

    /// The shipped placeholder spectrum over the default 1–120 m band.
    pub fn placeholder() -> Self {
        Self::parse(PLACEHOLDER_PSD, 1.0, 120.0)
            .expect("shipped PSD parses")
            .with_name("placeholder")
    }

    pub fn omega_band(&self) -> (f64, f64) {
        (2.0 * PI / self.lambda_max, 2.0 * PI / self.lambda_min)
    }

    /// S(Ω); log-log interpolation between positive rows, linear otherwise,
    /// zero outside the table.
    pub fn density_at(&self, w: f64) -> f64 {
        let (om, s) = (&self.omega, &self.density);
        if w < om[0] || w > om[om.len() - 1] {
            return 0.0;
        }
        let i = match om.partition_point(|&o| o <= w) {
            0 => 0,
            p if p >= om.len() => om.len() - 2,
            p => p - 1,
        };
        let (x0, x1, y0, y1) = (om[i], om[i + 1], s[i], s[i + 1]);
        if x0 > 0.0 && y0 > 0.0 && y1 > 0.0 {
            let u = (w / x0).ln() / (x1 / x0).ln();
            (y0.ln() + u * (y1 / y0).ln()).exp()
        } else {
            y0 + (y1 - y0) * (w - x0) / (x1 - x0)
        }
    }

    /// ∫ S dΩ over the band by composite Simpson on a log grid.
    pub fn band_variance(&self) -> f64 {
        let (lo, hi) = self.omega_band();
        let n = 4000;
        let (a, b) = (lo.ln(), hi.ln());
        let h = (b - a) / n as f64;
        let f = |u: f64| {
            let w = u.exp();
            self.density_at(w) * w
        };
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }
}

fn parse_freq_unit(s: &str) -> Result<FrequencyUnit> {
    match s {
        "cycle/m" | "1/m" => Ok(FrequencyUnit::CyclePerMetre),
        "rad/m" => Ok(FrequencyUnit::RadPerMetre),
        other => Err(Error::Format(format!("unknown frequency unit {other:?}"))),
    }
}

fn parse_density_unit(s: &str) -> Result<(f64, FrequencyUnit)> {
    let (num, den) = s
        .split_once('/')
        .ok_or_else(|| Error::Format(format!("unknown density unit {s:?}")))?;
    let scale = match num {
        "m^2" => 1.0,
        "mm^2" => 1e-6,
        other => return Err(Error::Format(format!("unknown density numerator {other:?}"))),
    };
    let per = parse_freq_unit(den.trim_start_matches('(').trim_end_matches(')'))?;
    Ok((scale, per))
}

/// Uniformly sampled profile `r(i·dx)`, m.
#[derive(Debug, Clone, PartialEq)]
pub struct IrregularityProfile {
    pub dx: f64,
    pub values: Vec<f64>,
    pub seed: u64,
    pub source: String,
}

impl IrregularityProfile {
    pub fn from_samples(dx: f64, values: Vec<f64>) -> Result<Self> {
        if !(dx > 0.0) || values.len() < 4 {
            return Err(invalid("profile needs dx > 0 and at least four samples"));
        }
        Ok(Self {
            dx,
            values,
            seed: 0,
            source: String::from("samples"),
        })
    }

    pub fn length(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dx
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    /// Catmull-Rom interpolation; end intervals reuse the boundary sample.
    pub fn at(&self, x: f64) -> f64 {
        let n = self.values.len();
        let s = (x / self.dx).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let u = s - i as f64;
        let p = |k: isize| self.values[(i as isize + k).clamp(0, n as isize - 1) as usize];
        let (p0, p1, p2, p3) = (p(-1), p(0), p(1), p(2));
        0.5 * (2.0 * p1
            + (p2 - p0) * u
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
            + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u * u)
    }
}

/// Spectral synthesis `r(x) = Σ √(2 S(Ω_k) ΔΩ) cos(Ω_k x + φ_k)`.
///
/// Bins sit on `Ω_k = k·2π/(N dx)`, so the stored samples span whole periods
/// of every component and the profile mean is zero up to rounding.
pub fn synthesize(psd: &PsdModel, track_length: f64, dx: f64, seed: u64) -> Result<IrregularityProfile> {
    if !(dx > 0.0 && track_length > 0.0) {
        return Err(invalid("track length and dx must be positive"));
    }
    if dx > psd.lambda_min / 4.0 {
        return Err(invalid(format!(
            "dx = {dx} m does not resolve the shortest wavelength {} m (need dx <= λ_min/4)",
            psd.lambda_min
        )));
    }
    let n = (track_length / dx).ceil() as usize + 1;
    let d_omega = 2.0 * PI / (n as f64 * dx);
    let (lo, hi) = psd.omega_band();
    let k_lo = (lo / d_omega).ceil().max(1.0) as usize;
    let k_hi = (hi / d_omega).floor() as usize;
    if k_lo > k_hi {
        return Err(invalid("wavelength band contains no frequency bin for this track length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in k_lo..=k_hi {
        let phase = rng.random::<f64>() * 2.0 * PI;
        let amp = (2.0 * psd.density_at(k as f64 * d_omega) * d_omega).sqrt();
        spec[k] = Complex::from_polar(amp, phase);
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    Ok(IrregularityProfile {
        dx,
        values: spec.iter().map(|c| c.re).collect(),
        seed,
        source: psd.name.clone(),
    })
}

/// Welch averaged periodogram, Hann window, one-sided `S(Ω)` in m²/(rad/m).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPsd {
    pub omega: Vec<f64>,
    pub density: Vec<f64>,
    pub segments: usize,
}

impl EmpiricalPsd {
    pub fn d_omega(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }
}

pub fn estimate_psd(profile: &IrregularityProfile, segment: usize, overlap: f64) -> Result<EmpiricalPsd> {
    if segment < 8 || !(0.0..1.0).contains(&overlap) {
        return Err(invalid("segment must be >= 8 samples and overlap in [0, 1)"));
    }
    let hop = ((segment as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let n = profile.values.len();
    let segments = if n >= segment { (n - segment) / hop + 1 } else { 0 };
    if segments < 8 {
        return Err(invalid(format!(
            "profile of {n} samples holds {segments} segments of {segment}; need at least 8"
        )));
    }
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos())
        .collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let half = segment / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); segment];
    for s in 0..segments {
        let chunk = &profile.values[s * hop..s * hop + segment];
        let mean = chunk.iter().sum::<f64>() / segment as f64;
        for ((b, &v), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let dx = profile.dx;
    let d_omega = 2.0 * PI / (segment as f64 * dx);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (segment % 2 == 0 && k == half) { 1.0 } else { 2.0 };
            one_sided * dx / u * a / segments as f64 / (2.0 * PI)
        })
        .collect();
    Ok(EmpiricalPsd {
        omega: (0..=half).map(|k| k as f64 * d_omega).collect(),
        density,
        segments,
    })
}

/// Ratio of summed estimate to summed target per third-octave band.
///
/// Bands are centred on `2π·10^(m/10)` rad/m (base-ten third octaves in
/// cycle/m) and only those lying entirely inside the wavelength band with at
/// least `min_bins` estimate bins are returned as `(centre, ratio)`.
pub fn third_octave_ratios(estimate: &EmpiricalPsd, psd: &PsdModel, min_bins: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = psd.omega_band();
    let mut out = Vec::new();
    for m in -40..=20 {
        let fc = 10f64.powf(m as f64 / 10.0);
        let (a, b) = (2.0 * PI * fc * 10f64.powf(-0.05), 2.0 * PI * fc * 10f64.powf(0.05));
        if a < lo || b > hi {
            continue;
        }
        let (mut est, mut tgt, mut bins) = (0.0, 0.0, 0);
        for (&w, &s) in estimate.omega.iter().zip(&estimate.density) {
            if w >= a && w < b {
                est += s;
                tgt += psd.density_at(w);
                bins += 1;
            }
        }
        if bins >= min_bins && tgt > 0.0 {
            out.push((2.0 * PI * fc, est / tgt));
        }
    }
    out
}

/// Irregularity seen by each wheelset at time t.
pub trait WheelExcitation {
    fn irregularity(&self, t: f64) -> [f64; 4];
}

/// Perfectly smooth rail.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoIrregularity;

impl WheelExcitation for NoIrregularity {
    fn irregularity(&self, _t: f64) -> [f64; 4] {
        [0.0; 4]
    }
}

/// A profile read under wheels moving at constant speed.
#[derive(Debug, Clone)]
pub struct ProfileExcitation {
    pub profile: IrregularityProfile,
    /// Wheelset positions on the profile at t = 0.
    pub origin: [f64; 4],
    pub speed: f64,
}

impl ProfileExcitation {
    /// Checks that every wheel stays on the profile over `[0, duration]`.
    pub fn new(profile: IrregularityProfile, origin: [f64; 4], speed: f64, duration: f64) -> Result<Self> {
        let len = profile.length();
        for &x0 in &origin {
            let x1 = x0 + speed * duration;
            if x0.min(x1) < 0.0 || x0.max(x1) > len {
                return Err(Error::WindowOutOfRange(format!(
                    "wheel travels over [{}, {}] m but the profile covers [0, {len}] m",
                    x0.min(x1),
                    x0.max(x1)
                )));
            }
        }
        Ok(Self { profile, origin, speed })
    }
}

impl WheelExcitation for ProfileExcitation {
    fn irregularity(&self, t: f64) -> [f64; 4] {
        self.origin.map(|x0| self.profile.at(x0 + self.speed * t))
    }
}

/// Series `Irre_j(t_i) = r(x_wj(0) + v t_i)` for each wheelset, `[4][n]`.
pub fn sample_under_wheels(
    profile: &IrregularityProfile,
    speed: f64,
    origin: [f64; 4],
    times: &[f64],
) -> Result<[Vec<f64>; 4]> {
    let t_end = times.iter().fold(0.0_f64, |m, &t| m.max(t));
    let exc = ProfileExcitation::new(profile.clone(), origin, speed, t_end)?;
    let mut out: [Vec<f64>; 4] = Default::default();
    for &t in times {
        let r = exc.irregularity(t);
        for j in 0..4 {
            out[j].push(r[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_is_continuous_and_positive() {
        let psd = PsdModel::placeholder();
        assert!(psd.density.iter().all(|&s| s > 0.0));
        // 0.0187 cycle/m breakpoint: both segments give ≈7.6 mm²/(cycle/m)
        let w = 2.0 * PI * 0.0187;
        let s = psd.density_at(w) * 2.0 * PI / 1e-6;
        assert!((s - 7.6).abs() < 0.1, "{s}");
    }

    #[test]
    fn units_convert_to_rad_per_metre() {
        let a = PsdModel::parse("units: cycle/m m^2/(cycle/m)\n0.1 2.0\n0.2 2.0\n", 1.0, 100.0).unwrap();
        let b = PsdModel::parse("units: rad/m mm^2/(rad/m)\n0.1 2.0\n0.2 2.0\n", 1.0, 100.0).unwrap();
        assert!((a.omega[0] - 2.0 * PI * 0.1).abs() < 1e-15);
        assert!((a.density[0] - 2.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(b.omega[1], 0.2);
        assert!((b.density[1] - 2e-6).abs() < 1e-20);
        assert!(PsdModel::parse("0.1 2\n", 1.0, 2.0).is_err());
        assert!(PsdModel::parse("units: hz m^2/(rad/m)\n", 1.0, 2.0).is_err());
        assert!(PsdModel::parse("units: rad/m m^2/(rad/m)\n0.1 -1\n0.2 1\n", 1.0, 2.0).is_err());
        assert!(PsdModel::flat(1.0, 5.0, 2.0).is_err());
    }

    #[test]
    fn loglog_interpolation_exact_for_power_law() {
        let om: Vec<f64> = (1..=4).map(|i| i as f64).collect();
        let s: Vec<f64> = om.iter().map(|w| 3.0 / w.powf(2.5)).collect();
        let psd = PsdModel::new(om, s, 1.0, 10.0).unwrap();
        let w = 2.7;
        assert!((psd.density_at(w) - 3.0 / w.powf(2.5)).abs() < 1e-12);
        assert_eq!(psd.density_at(10.0), 0.0);
    }

    #[test]
    fn zero_spectrum_gives_flat_rail() {
        let psd = PsdModel::flat(0.0, 1.0, 50.0).unwrap();
        let p = synthesize(&psd, 500.0, 0.25, 3).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bin_gives_unit_cosine() {
        let (n, dx) = (1000usize, 0.25);
        let track = (n - 1) as f64 * dx;
        let dw = 2.0 * PI / (n as f64 * dx);
        let w0 = 40.0 * dw;
        let level = 0.5 / dw;
        let om = vec![w0 - 0.4 * dw, w0 + 0.4 * dw];
        let psd = PsdModel::new(om, vec![level, level], 2.0 * PI / (w0 + 0.3 * dw), 2.0 * PI / (w0 - 0.3 * dw))
            .unwrap();
        let p = synthesize(&psd, track, dx, 11).unwrap();
        assert_eq!(p.values.len(), n);
        let amp = p.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 1e-3, "{amp}");
        assert!((p.variance() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_coarse_grid_rejected() {
        let psd = PsdModel::placeholder();
        assert!(synthesize(&psd, 1000.0, 0.3, 0).is_err());
    }

    #[test]
    fn single_tone_periodogram_mass() {
        let (n, dx, seg) = (8192usize, 0.5, 512usize);
        let dw = 2.0 * PI / (seg as f64 * dx);
        let w0 = 20.0 * dw;
        let amp = 3e-3;
        let values = (0..n).map(|i| amp * (w0 * i as f64 * dx).cos()).collect();
        let p = IrregularityProfile::from_samples(dx, values).unwrap();
        let est = estimate_psd(&p, seg, 0.5).unwrap();
        let total: f64 = est.density.iter().sum::<f64>() * est.d_omega();
        let near: f64 = est.density[19..=21].iter().sum::<f64>() * est.d_omega();
        assert!((total - amp * amp / 2.0).abs() < 1e-3 * amp * amp);
        assert!(near / total > 0.999);
    }

    #[test]
    fn short_profile_rejected() {
        let p = IrregularityProfile::from_samples(1.0, vec![0.0; 100]).unwrap();
        assert!(estimate_psd(&p, 64, 0.5).is_err());
    }

    #[test]
    fn synthesis_is_deterministic() {
        let psd = PsdModel::placeholder();
        let a = synthesize(&psd, 2000.0, 0.25, 42).unwrap();
        let b = synthesize(&psd, 2000.0, 0.25, 42).unwrap();
        let c = synthesize(&psd, 2000.0, 0.25, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn zero_speed_gives_constant_series() {
        let p = IrregularityProfile::from_samples(0.5, (0..100).map(|i| (i as f64).sin()).collect()).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let s = sample_under_wheels(&p, 0.0, [30.0, 20.0, 12.3, 1.0], &times).unwrap();
        for series in &s {
            assert!(series.iter().all(|&v| v == series[0]));
        }
    }

    #[test]
    fn window_outside_profile_rejected() {
        let p = IrregularityProfile::from_samples(1.0, vec![0.0; 100]).unwrap();
        assert!(matches!(
            sample_under_wheels(&p, 10.0, [95.0, 90.0, 10.0, 0.0], &[0.0, 1.0]),
            Err(Error::WindowOutOfRange(_))
        ));
    }
}
