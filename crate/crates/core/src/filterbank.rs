//! Gammatone and inverse-Gammatone FIR filterbank.
//!
//! Gammatone channels are truncated, sampled impulse responses
//! `t^(n-1) exp(-2 pi b t) cos(2 pi fc t)` with `b = 1.019 ERB(fc)`. Each
//! inverse channel is the linear-phase magnitude complement of its Gammatone
//! partner, designed by frequency sampling on the same `fir_length`-point
//! grid. All taps are scaled to unit l2 norm.
//!
//! Filtered signals are requantized to 16 bits so per-channel PMFs reuse the
//! amplitude histogram machinery. A single bank-wide gain keeps a full-scale
//! white-noise probe from clipping in any channel.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::SampleBuffer;
use crate::container::Writer;

const PROBE_SEED: u64 = 0x6761_6d6d_6174_6f6e;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filterbank spec: {0}")]
    InvalidSpec(String),
    #[error("input buffer is empty")]
    EmptyBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBankSpec {
    pub sample_rate: u32,
    pub n_channels_per_family: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub order: u32,
    pub fir_length: usize,
}

impl FilterBankSpec {
    /// Ten channels per family, ERB-spaced from 70 Hz to 0.45 fs, order 4,
    /// 2048 taps.
    pub fn new(sample_rate: u32) -> Self {
        FilterBankSpec {
            sample_rate,
            n_channels_per_family: 10,
            f_min: 70.0,
            f_max: 0.45 * sample_rate as f64,
            order: 4,
            fir_length: 2048,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let nyquist = self.sample_rate as f64 / 2.0;
        let bad = |m: String| Err(FilterError::InvalidSpec(m));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return bad(format!(
                "need 0 < f_min < f_max <= {nyquist} Hz, got f_min={} f_max={}",
                self.f_min, self.f_max
            ));
        }
        if self.n_channels_per_family == 0 {
            return bad("at least one channel per family is required".into());
        }
        if self.order == 0 {
            return bad("filter order must be at least 1".into());
        }
        if self.fir_length < 64 {
            return bad(format!("fir_length {} is below 64", self.fir_length));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        2 * self.n_channels_per_family
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Gammatone,
    InverseGammatone,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gammatone => "gammatone",
            Family::InverseGammatone => "inverse_gammatone",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterChannel {
    pub family: Family,
    pub center_freq: f64,
    pub coefficients: Vec<f64>,
    pub channel_index: usize,
    /// Group-delay estimate removed by [`apply_channel`], in samples.
    pub delay: usize,
    /// Bank-wide requantization gain.
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct FilterBank {
    pub spec: FilterBankSpec,
    pub gain: f64,
    pub channels: Vec<FilterChannel>,
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (4.37 * f / 1000.0 + 1.0).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// `n` center frequencies evenly spaced on the ERB-rate scale over
/// `[f_min, f_max]`; a single channel sits at the ERB-rate midpoint.
pub fn erb_space(f_min: f64, f_max: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = (hz_to_erb_rate(f_min), hz_to_erb_rate(f_max));
    if n == 1 {
        return vec![erb_rate_to_hz(0.5 * (lo + hi))];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                f_min
            } else if i == n - 1 {
                f_max
            } else {
                erb_rate_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Sampled Gammatone impulse response, truncated to `len` taps and scaled to
/// unit l2 norm.
pub fn gammatone_taps(center_freq: f64, sample_rate: u32, order: u32, len: usize) -> Vec<f64> {
    let fs = sample_rate as f64;
    let b = 1.019 * erb(center_freq);
    let mut taps: Vec<f64> = (0..len)
        .map(|k| {
            let t = k as f64 / fs;
            t.powi(order as i32 - 1) * (-2.0 * PI * b * t).exp() * (2.0 * PI * center_freq * t).cos()
        })
        .collect();
    l2_normalize(&mut taps);
    taps
}

fn l2_normalize(taps: &mut [f64]) {
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > 0.0 {
        taps.iter_mut().for_each(|t| *t /= norm);
    }
}

/// Magnitude of the `taps.len()`-point DFT of `taps`.
pub fn magnitude_response(taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf: Vec<Complex64> = taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
    fft.process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Linear-phase complement of a Gammatone filter by frequency sampling:
/// target magnitude `max(0, 1 - |H_g|/max|H_g|)` on the `n`-point DFT grid.
/// For even `n` the Nyquist sample is forced to zero, as a symmetric
/// even-length filter requires.
pub fn inverse_gammatone_taps(gammatone: &[f64]) -> Vec<f64> {
    let n = gammatone.len();
    let mag = magnitude_response(gammatone);
    let peak = mag.iter().copied().fold(0.0f64, f64::max);
    let target: Vec<f64> = mag
        .iter()
        .map(|&m| if peak > 0.0 { (1.0 - m / peak).max(0.0) } else { 1.0 })
        .collect();

    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 0..=half {
        let mut a = target[k];
        if n.is_multiple_of(2) && k == half {
            a = 0.0;
        }
        let phase = -PI * k as f64 * (n - 1) as f64 / n as f64;
        spectrum[k] = Complex64::from_polar(a, phase);
        if k != 0 && k != n - k {
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    ifft.process(&mut spectrum);
    let mut taps: Vec<f64> = spectrum.iter().map(|c| c.re / n as f64).collect();
    l2_normalize(&mut taps);
    taps
}

pub fn design_bank(spec: &FilterBankSpec) -> Result<FilterBank, FilterError> {
    spec.validate()?;
    let centers = erb_space(spec.f_min, spec.f_max, spec.n_channels_per_family);
    let n = spec.n_channels_per_family;
    let mut channels = Vec::with_capacity(2 * n);

    let gammatones: Vec<Vec<f64>> = centers
        .iter()
        .map(|&fc| gammatone_taps(fc, spec.sample_rate, spec.order, spec.fir_length))
        .collect();
    for (i, (taps, &fc)) in gammatones.iter().zip(&centers).enumerate() {
        let delay = taps
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (j, &t)| if t.abs() > bv { (j, t.abs()) } else { (bi, bv) })
            .0;
        channels.push(FilterChannel {
            family: Family::Gammatone,
            center_freq: fc,
            coefficients: taps.clone(),
            channel_index: i,
            delay,
            gain: 1.0,
        });
    }
    for (i, (taps, &fc)) in gammatones.iter().zip(&centers).enumerate() {
        channels.push(FilterChannel {
            family: Family::InverseGammatone,
            center_freq: fc,
            coefficients: inverse_gammatone_taps(taps),
            channel_index: n + i,
            delay: (spec.fir_length - 1) / 2,
            gain: 1.0,
        });
    }

    let gain = probe_gain(spec, &channels);
    for ch in &mut channels {
        ch.gain = gain;
    }
    Ok(FilterBank {
        spec: spec.clone(),
        gain,
        channels,
    })
}

/// Largest gain (at most 1) that keeps every channel's response to a seeded
/// full-scale uniform white-noise probe inside the 16-bit range.
fn probe_gain(spec: &FilterBankSpec, channels: &[FilterChannel]) -> f64 {
    let len = (spec.sample_rate as usize).max(4 * spec.fir_length);
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let probe: Vec<f64> = (0..len).map(|_| rng.gen_range(i16::MIN..=i16::MAX) as f64).collect();
    let peak = channels
        .iter()
        .map(|ch| {
            convolve_same(&ch.coefficients, &probe, ch.delay)
                .iter()
                .fold(0.0f64, |m, y| m.max(y.abs()))
        })
        .fold(0.0f64, f64::max);
    if peak > 0.0 {
        (i16::MAX as f64 / peak).min(1.0)
    } else {
        1.0
    }
}

/// Full convolution of `taps` with `x`, sliced to `x.len()` outputs starting
/// at `delay`. Overlap-add FFT convolution.
pub fn convolve_same(taps: &[f64], x: &[f64], delay: usize) -> Vec<f64> {
    let full = fft_convolve(taps, x);
    (0..x.len())
        .map(|n| full.get(n + delay).copied().unwrap_or(0.0))
        .collect()
}

fn fft_convolve(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let m = taps.len();
    let out_len = x.len() + m - 1;
    let fft_len = (4 * m).next_power_of_two();
    let block = fft_len - m + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(fft_len);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(fft_len);

    let mut h: Vec<Complex64> = taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
    h.resize(fft_len, Complex64::new(0.0, 0.0));
    fwd.process(&mut h);

    let scale = 1.0 / fft_len as f64;
    let mut out = vec![0.0; out_len];
    let mut seg = vec![Complex64::new(0.0, 0.0); fft_len];
    for start in (0..x.len()).step_by(block) {
        let end = (start + block).min(x.len());
        seg.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (s, &v) in seg.iter_mut().zip(&x[start..end]) {
            s.re = v;
        }
        fwd.process(&mut seg);
        for (s, hk) in seg.iter_mut().zip(&h) {
            *s *= hk;
        }
        inv.process(&mut seg);
        let valid = (end - start + m - 1).min(out_len - start);
        for (o, s) in out[start..start + valid].iter_mut().zip(&seg) {
            *o += s.re * scale;
        }
    }
    out
}

fn requantize(y: f64) -> i16 {
    y.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Filters `buffer` through one channel: delay-compensated convolution,
/// bank gain, rounding and saturation to 16 bits.
pub fn apply_channel(channel: &FilterChannel, buffer: &SampleBuffer) -> Result<SampleBuffer, FilterError> {
    let x: Vec<f64> = buffer.samples().iter().map(|&s| s as f64).collect();
    let samples = apply_to_slice(channel, &x)?;
    SampleBuffer::new(samples, buffer.sample_rate()).map_err(|_| FilterError::EmptyBuffer)
}

pub(crate) fn apply_to_slice(channel: &FilterChannel, x: &[f64]) -> Result<Vec<i16>, FilterError> {
    if x.is_empty() {
        return Err(FilterError::EmptyBuffer);
    }
    Ok(convolve_same(&channel.coefficients, x, channel.delay)
        .into_iter()
        .map(|y| requantize(channel.gain * y))
        .collect())
}

impl FilterBank {
    pub fn channels(&self) -> &[FilterChannel] {
        &self.channels
    }

    /// Filters the buffer through every channel, in channel order.
    pub fn apply_all(&self, buffer: &SampleBuffer) -> Result<Vec<Vec<i16>>, FilterError> {
        let x: Vec<f64> = buffer.samples().iter().map(|&s| s as f64).collect();
        self.channels.iter().map(|ch| apply_to_slice(ch, &x)).collect()
    }

    /// `channel_index  family  center_freq` table.
    pub fn to_tsv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# gain={} fir_length={}", self.gain, self.spec.fir_length);
        out.push_str("channel_index\tfamily\tcenter_freq\n");
        for ch in &self.channels {
            let _ = writeln!(out, "{}\t{}\t{}", ch.channel_index, ch.family.name(), ch.center_freq);
        }
        out
    }

    /// `TAP1` audit dump: channel count, gain, then per channel the index,
    /// family (0 = Gammatone, 1 = inverse), center frequency, delay, tap count
    /// and taps. Little-endian.
    pub fn taps_to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(b"TAP1");
        w.u32(self.channels.len() as u32).f64(self.gain);
        for ch in &self.channels {
            w.u32(ch.channel_index as u32)
                .u32(match ch.family {
                    Family::Gammatone => 0,
                    Family::InverseGammatone => 1,
                })
                .f64(ch.center_freq)
                .u32(ch.delay as u32)
                .u32(ch.coefficients.len() as u32)
                .f64s(&ch.coefficients);
        }
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> FilterBankSpec {
        let mut s = FilterBankSpec::new(16_000);
        s.fir_length = 512;
        s
    }

    #[test]
    fn spec_validation() {
        assert!(FilterBankSpec::new(16_000).validate().is_ok());
        let mut s = FilterBankSpec::new(16_000);
        s.f_max = 9000.0;
        assert!(s.validate().is_err());
        let mut s = FilterBankSpec::new(16_000);
        s.fir_length = 32;
        assert!(s.validate().is_err());
        let mut s = FilterBankSpec::new(16_000);
        s.n_channels_per_family = 0;
        assert!(matches!(design_bank(&s), Err(FilterError::InvalidSpec(_))));
    }

    #[test]
    fn erb_scale_round_trip() {
        for f in [70.0, 440.0, 1000.0, 7200.0] {
            assert!((erb_rate_to_hz(hz_to_erb_rate(f)) - f).abs() < 1e-9);
        }
        assert!((erb(1000.0) - 132.639).abs() < 1e-9);
        let c = erb_space(70.0, 7200.0, 10);
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], 70.0);
        assert_eq!(c[9], 7200.0);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn twenty_channels_with_ordered_indices() {
        let bank = design_bank(&small_spec()).unwrap();
        assert_eq!(bank.channels().len(), 20);
        for (i, ch) in bank.channels().iter().enumerate() {
            assert_eq!(ch.channel_index, i);
            let norm: f64 = ch.coefficients.iter().map(|t| t * t).sum();
            assert!((norm - 1.0).abs() < 1e-9);
            assert_eq!(ch.gain, bank.gain);
        }
        let (g, inv) = bank.channels().split_at(10);
        assert!(g.iter().all(|c| c.family == Family::Gammatone));
        assert!(inv.iter().all(|c| c.family == Family::InverseGammatone));
        assert!(g.windows(2).all(|w| w[0].center_freq < w[1].center_freq));
        assert!(inv.windows(2).all(|w| w[0].center_freq < w[1].center_freq));
        assert!(bank.gain > 0.0 && bank.gain <= 1.0);
    }

    #[test]
    fn inverse_taps_are_symmetric() {
        let g = gammatone_taps(1000.0, 16_000, 4, 256);
        let inv = inverse_gammatone_taps(&g);
        for k in 0..inv.len() {
            assert!((inv[k] - inv[inv.len() - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let taps: Vec<f64> = (0..70).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let x: Vec<f64> = (0..1000).map(|i| ((i * 13) % 17) as f64 - 8.0).collect();
        let fast = fft_convolve(&taps, &x);
        assert_eq!(fast.len(), taps.len() + x.len() - 1);
        for (n, &y) in fast.iter().enumerate() {
            let direct: f64 = (0..taps.len())
                .filter(|&k| n >= k && n - k < x.len())
                .map(|k| taps[k] * x[n - k])
                .sum();
            assert!((y - direct).abs() < 1e-9, "n={n}: {y} vs {direct}");
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let bank = design_bank(&small_spec()).unwrap();
        let buf = SampleBuffer::new(vec![0; 300], 16_000).unwrap();
        for ch in bank.channels() {
            assert!(apply_channel(ch, &buf).unwrap().samples().iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn full_scale_noise_probe_does_not_clip() {
        let bank = design_bank(&small_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let len = 16_000;
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(i16::MIN..=i16::MAX) as f64).collect();
        let mut loudest = 0.0f64;
        for ch in bank.channels() {
            let peak = convolve_same(&ch.coefficients, &x, ch.delay)
                .iter()
                .fold(0.0f64, |m, y| m.max((ch.gain * y).abs()));
            assert!(peak <= i16::MAX as f64 * (1.0 + 1e-12), "channel {}: {peak}", ch.channel_index);
            loudest = loudest.max(peak);
        }
        // The gain is tight: some channel reaches full scale.
        assert!(loudest > 0.999 * i16::MAX as f64);
    }
}
