use std::f64::consts::PI;

use pmfscope::audio::SampleBuffer;
use pmfscope::filterbank::{
    apply_channel, design_bank, erb, gammatone_taps, magnitude_response, Family, FilterBankSpec,
};

fn bank(fir: usize) -> pmfscope::filterbank::FilterBank {
    let mut spec = FilterBankSpec::new(16_000);
    spec.fir_length = fir;
    design_bank(&spec).unwrap()
}

#[test]
fn channels_are_ordered_and_unit_norm() {
    let b = bank(2048);
    assert_eq!(b.channels().len(), 20);
    for (i, ch) in b.channels().iter().enumerate() {
        assert_eq!(ch.channel_index, i);
        let norm: f64 = ch.coefficients.iter().map(|t| t * t).sum();
        assert!((norm - 1.0).abs() <= 1e-9, "channel {i}: {norm}");
        assert_eq!(ch.family, if i < 10 { Family::Gammatone } else { Family::InverseGammatone });
    }
    for fam in b.channels().chunks(10) {
        assert!(fam.windows(2).all(|w| w[1].center_freq > w[0].center_freq));
    }
}

/// Direct DFT magnitude at an arbitrary frequency.
fn dft_mag(taps: &[f64], f: f64, fs: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (k, &t) in taps.iter().enumerate() {
        let w = 2.0 * PI * f * k as f64 / fs;
        re += t * w.cos();
        im -= t * w.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn gammatone_peaks_within_one_erb() {
    let fs = 16_000.0;
    let fc = fs / 4.0;
    let taps = gammatone_taps(fc, 16_000, 4, 2048);
    let (peak_f, _) = (0..=8000)
        .map(|f| (f as f64, dft_mag(&taps, f as f64, fs)))
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    assert!((peak_f - fc).abs() <= erb(fc), "peak {peak_f} Hz vs {fc} Hz");
}

#[test]
fn families_are_complementary_on_the_design_grid() {
    let b = bank(2048);
    let n = 2048;
    for i in 0..10 {
        let g = magnitude_response(&b.channels()[i].coefficients);
        let v = magnitude_response(&b.channels()[10 + i].coefficients);
        let (gmax, vmax) = (
            g.iter().copied().fold(0.0, f64::max),
            v.iter().copied().fold(0.0, f64::max),
        );
        // Bins 0..n/2, Nyquist excluded (forced to zero by linear phase).
        for k in 0..n / 2 {
            let s = g[k] / gmax + v[k] / vmax;
            assert!((s - 1.0).abs() <= 0.05, "channel {i} bin {k}: {s}");
        }
    }
}

fn rms(x: &[i16]) -> f64 {
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn sinusoid_prefers_its_own_channel() {
    let b = bank(2048);
    for i in 0..5 {
        let ch = &b.channels()[i];
        let far = &b.channels()[i + 5];
        let x: Vec<i16> = (0..16_000)
            .map(|k| (10_000.0 * (2.0 * PI * ch.center_freq * k as f64 / 16_000.0).sin()).round() as i16)
            .collect();
        let buf = SampleBuffer::new(x, 16_000).unwrap();
        let own = rms(apply_channel(ch, &buf).unwrap().samples());
        let other = rms(apply_channel(far, &buf).unwrap().samples());
        assert!(own >= 10.0 * other, "channel {i}: {own} vs {other}");
    }
}

#[test]
fn impulse_returns_the_taps() {
    let b = bank(512);
    let len = 2000;
    let at = 700;
    let mut x = vec![0i16; len];
    x[at] = i16::MAX;
    let buf = SampleBuffer::new(x, 16_000).unwrap();
    for ch in b.channels() {
        let y = apply_channel(ch, &buf).unwrap();
        for (n, &got) in y.samples().iter().enumerate() {
            let k = n as i64 + ch.delay as i64 - at as i64;
            let tap = if (0..ch.coefficients.len() as i64).contains(&k) { ch.coefficients[k as usize] } else { 0.0 };
            let want = (ch.gain * i16::MAX as f64 * tap).round().clamp(-32768.0, 32767.0) as i16;
            assert!((got as i32 - want as i32).abs() <= 1, "channel {} n={n}: {got} vs {want}", ch.channel_index);
        }
    }
}

#[test]
fn zero_in_zero_out_and_linearity() {
    let b = bank(512);
    let zero = SampleBuffer::new(vec![0; 1000], 16_000).unwrap();
    let x: Vec<i16> = (0..3000).map(|k| ((k * 7919) % 20001) as i16 - 10000).collect();
    let half: Vec<i16> = x.iter().map(|&v| v / 2).collect();
    for ch in b.channels() {
        assert!(apply_channel(ch, &zero).unwrap().samples().iter().all(|&v| v == 0));
        let y = apply_channel(ch, &SampleBuffer::new(x.clone(), 16_000).unwrap()).unwrap();
        let yh = apply_channel(ch, &SampleBuffer::new(half.clone(), 16_000).unwrap()).unwrap();
        assert_eq!(y, apply_channel(ch, &SampleBuffer::new(x.clone(), 16_000).unwrap()).unwrap());
        // x/2 rounds odd samples, so compare against the filtered halves with a
        // bound covering both requantizations and the rounding of x/2.
        let bound = 2.0 + 0.5 * ch.gain * ch.coefficients.iter().map(|t| t.abs()).sum::<f64>();
        for (a, h) in y.samples().iter().zip(yh.samples()) {
            assert!((*a as f64 / 2.0 - *h as f64).abs() <= bound);
        }
    }
}
