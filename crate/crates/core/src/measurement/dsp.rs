//! Digital down-conversion of the intermediate-frequency record.
//!
//! The record `v[n]` is mixed with a quadrature oscillator at the IF,
//! `I = LPF[2 v cos θₙ]`, `Q = LPF[−2 v sin θₙ]` with `θₙ = ω_if n / f_s`,
//! so that a signal `v = I cos θ − Q sin θ` is returned unchanged. The
//! low-pass is a linear-phase Kaiser-windowed sinc with at least 60 dB
//! stop-band attenuation whose cutoff is tuned so the two-sided equivalent
//! noise bandwidth `f_s Σh² / (Σh)²` equals the measurement bandwidth `B`.
//! Output is decimated by `round(f_s / B)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ChainParams;
use crate::{Error, Result};

const STOPBAND_DB: f64 = 60.0;

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Unit-DC-gain windowed sinc with cutoff `fc` (fraction of the sample rate).
fn windowed_sinc(window: &[f64], fc: f64) -> Vec<f64> {
    let m = (window.len() - 1) as f64 / 2.0;
    let mut h: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let t = n as f64 - m;
            let s = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            s * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= sum);
    h
}

fn enbw_fraction(h: &[f64]) -> f64 {
    let s: f64 = h.iter().sum();
    h.iter().map(|x| x * x).sum::<f64>() / (s * s)
}

/// Distance of `f` from the nearest multiple of `fs` (the frequency at which
/// it appears after sampling).
fn folded(f: f64, fs: f64) -> f64 {
    let r = f.rem_euclid(fs);
    r.min(fs - r)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IqSamples {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl IqSamples {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Scaled quadratures `(X, P)` for the given chain.
    pub fn to_quanta(&self, chain: &ChainParams) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = checked_scale(chain)?;
        Ok((
            self.i.iter().map(|v| v / k).collect(),
            self.q.iter().map(|v| v / k).collect(),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct Downconverter {
    chain: ChainParams,
    taps: Vec<f64>,
    /// Taps premultiplied by the oscillator, `2h[m]cos θₘ` and `2h[m]sin θₘ`.
    taps_cos: Vec<f64>,
    taps_sin: Vec<f64>,
    cutoff: f64,
    decimation: usize,
    enbw: f64,
}

impl Downconverter {
    /// Filter with a transition band of `B/4`.
    pub fn new(chain: &ChainParams) -> Result<Self> {
        Self::with_transition(chain, 0.25 * chain.bandwidth)
    }

    pub fn with_transition(chain: &ChainParams, transition: f64) -> Result<Self> {
        chain.validate()?;
        let fs = chain.sample_rate;
        let b = chain.bandwidth;
        let f_if = chain.if_hz();
        if !(transition > 0.0) || transition >= fs / 2.0 {
            return Err(Error::Configuration(format!(
                "filter transition width {transition} Hz out of range"
            )));
        }
        let edge = 0.5 * b + transition;
        if f_if < edge {
            return Err(Error::Configuration(format!(
                "IF {f_if} Hz overlaps the baseband filter edge {edge} Hz"
            )));
        }
        if folded(2.0 * f_if, fs) < edge {
            return Err(Error::Configuration(format!(
                "mixing image at {} Hz aliases into the pass band",
                folded(2.0 * f_if, fs)
            )));
        }
        let decimation = (fs / b).round() as usize;
        if decimation == 0 {
            return Err(Error::Configuration("decimation factor is zero".into()));
        }

        let dw = 2.0 * PI * transition / fs;
        let mut len = ((STOPBAND_DB - 7.95) / (2.285 * dw)).ceil() as usize + 1;
        if len.is_multiple_of(2) {
            len += 1;
        }
        let beta = kaiser_beta(STOPBAND_DB);
        let i0b = bessel_i0(beta);
        let window: Vec<f64> = (0..len)
            .map(|n| {
                let r = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
                bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
            })
            .collect();

        // ENBW grows monotonically with the cutoff; bisect for ENBW = B.
        let target = b / fs;
        let (mut lo, mut hi) = (0.25 * target, target);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if enbw_fraction(&windowed_sinc(&window, mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * target {
                break;
            }
        }
        let fc = 0.5 * (lo + hi);
        let taps = windowed_sinc(&window, fc);
        let enbw = enbw_fraction(&taps) * fs;
        let w_if = chain.omega_if / fs;
        let taps_cos = taps.iter().enumerate().map(|(m, h)| 2.0 * h * (w_if * m as f64).cos()).collect();
        let taps_sin = taps.iter().enumerate().map(|(m, h)| 2.0 * h * (w_if * m as f64).sin()).collect();
        log::debug!(
            "down-converter: {len} taps, cutoff {:.1} Hz, ENBW {enbw:.3} Hz, decimation {decimation}",
            fc * fs
        );
        Ok(Self {
            chain: *chain,
            taps,
            taps_cos,
            taps_sin,
            cutoff: fc * fs,
            decimation,
            enbw,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn filter_len(&self) -> usize {
        self.taps.len()
    }

    /// −6 dB cutoff of the low-pass (Hz).
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn decimation(&self) -> usize {
        self.decimation
    }

    /// Two-sided equivalent noise bandwidth of the designed filter (Hz).
    pub fn effective_noise_bandwidth(&self) -> f64 {
        self.enbw
    }

    /// Low-pass magnitude response at baseband frequency `f` (Hz).
    pub fn response(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f / self.chain.sample_rate;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, h)| {
                let (s, c) = (w * n as f64).sin_cos();
                (re + h * c, im - h * s)
            });
        re.hypot(im)
    }

    /// Down-converts a record whose first sample has index 0.
    pub fn process(&self, signal: &[f64]) -> Result<IqSamples> {
        self.process_from(signal, 0)
    }

    /// Down-converts a record whose first sample has absolute index
    /// `start`, so consecutive blocks share one oscillator phase. Only
    /// outputs whose filter window lies fully inside the block are produced.
    pub fn process_from(&self, signal: &[f64], start: u64) -> Result<IqSamples> {
        let len = self.taps.len();
        if signal.len() < len {
            return Err(Error::Validation(format!(
                "record of {} samples is shorter than the {len}-tap filter",
                signal.len()
            )));
        }
        let n_out = (signal.len() - len) / self.decimation + 1;
        let ratio = self.chain.if_hz() / self.chain.sample_rate;
        let (i, q): (Vec<f64>, Vec<f64>) = (0..n_out)
            .into_par_iter()
            .map(|k| {
                let offset = k * self.decimation;
                let window = &signal[offset..offset + len];
                let a: f64 = window.iter().zip(&self.taps_cos).map(|(x, h)| x * h).sum();
                let b: f64 = window.iter().zip(&self.taps_sin).map(|(x, h)| x * h).sum();
                let n0 = start + offset as u64;
                let phase = 2.0 * PI * (n0 as f64 * ratio).fract();
                let (s, c) = phase.sin_cos();
                (c * a - s * b, -(s * a + c * b))
            })
            .unzip();
        Ok(IqSamples { i, q })
    }
}

fn checked_scale(chain: &ChainParams) -> Result<f64> {
    let b = chain.bandwidth;
    let r = chain.impedance;
    let g = chain.gain_linear();
    if !(b > 0.0) || !(r > 0.0) || !(g > 0.0) || !g.is_finite() {
        return Err(Error::Domain(format!(
            "bandwidth, impedance and gain must be positive (B = {b}, R = {r}, G = {g})"
        )));
    }
    Ok(chain.quadrature_scale())
}

/// `X = I / √(2ħω_a B R G)`, likewise for `P`.
pub fn scale_to_quanta(i: f64, q: f64, chain: &ChainParams) -> Result<(f64, f64)> {
    let k = checked_scale(chain)?;
    Ok((i / k, q / k))
}

/// Inverse of [`scale_to_quanta`].
pub fn unscale_from_quanta(x: f64, p: f64, chain: &ChainParams) -> Result<(f64, f64)> {
    let k = checked_scale(chain)?;
    Ok((x * k, p * k))
}

/// White Gaussian IF record whose down-converted quadratures carry `quanta`
/// of noise per quadrature. Chunked seeding as in the quadrature sampler.
pub fn synthesize_if_noise(chain: &ChainParams, quanta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    chain.validate()?;
    if !(quanta >= 0.0) {
        return Err(Error::Validation(format!("noise level {quanta} must be ≥ 0")));
    }
    let sigma = chain.if_noise_variance(quanta).sqrt();
    const CHUNK: usize = 1 << 16;
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    Ok(chunks.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::HBAR;

    fn tone(chain: &ChainParams, f: f64, amp: f64, phase: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| amp * (2.0 * PI * f * k as f64 / chain.sample_rate + phase).cos())
            .collect()
    }

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-12);
    }

    #[test]
    fn filter_design() {
        let chain = ChainParams::reference_port1();
        let d = Downconverter::new(&chain).unwrap();
        assert_eq!(d.decimation(), 500);
        assert_eq!(d.filter_len() % 2, 1);
        assert!((d.effective_noise_bandwidth() / 200e3 - 1.0).abs() < 1e-9);
        assert!((d.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Stop band starts at B/2 + transition.
        for f in [150e3, 200e3, 400e3, 1e6] {
            assert!(d.response(f) < 1e-3, "{f}: {}", d.response(f));
        }
        assert!((d.response(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_tone() {
        let chain = ChainParams::reference_port1();
        let d = Downconverter::new(&chain).unwrap();
        let x = tone(&chain, chain.if_hz(), 0.7, 0.0, 30_000);
        let iq = d.process(&x).unwrap();
        assert!(!iq.is_empty());
        for (i, q) in iq.i.iter().zip(&iq.q) {
            assert!((i / 0.7 - 1.0).abs() < 1e-3);
            assert!(q.abs() < 1e-3 * 0.7);
        }
        // v = I cos θ − Q sin θ with (I, Q) = (0, 1).
        let y = tone(&chain, chain.if_hz(), 1.0, PI / 2.0, 30_000);
        let iq = d.process(&y).unwrap();
        assert!(iq.i[0].abs() < 1e-3 && (iq.q[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn streaming_blocks_match_single_pass() {
        let chain = ChainParams::reference_port1();
        let d = Downconverter::new(&chain).unwrap();
        let x = synthesize_if_noise(&chain, 0.5, 40_000, 1).unwrap();
        let whole = d.process(&x).unwrap();
        let split = 10_000;
        let second = d.process_from(&x[split..], split as u64).unwrap();
        let skip = split / d.decimation();
        for (a, b) in whole.i[skip..].iter().zip(&second.i) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1e-30));
        }
    }

    #[test]
    fn out_of_band_tone_suppressed() {
        let chain = ChainParams::reference_port1();
        let d = Downconverter::new(&chain).unwrap();
        let x = tone(&chain, chain.if_hz() + 3.0 * chain.bandwidth, 1.0, 0.3, 30_000);
        let iq = d.process(&x).unwrap();
        let peak = iq.i.iter().zip(&iq.q).map(|(i, q)| i.hypot(*q)).fold(0.0, f64::max);
        assert!(20.0 * peak.log10() < -40.0, "{peak}");
    }

    #[test]
    fn short_record_and_bad_configuration() {
        let chain = ChainParams::reference_port1();
        let d = Downconverter::new(&chain).unwrap();
        assert!(d.process(&[0.0; 10]).is_err());
        let mut c = chain;
        c.omega_if = 2.0 * PI * 50e3;
        assert!(matches!(Downconverter::new(&c), Err(Error::Configuration(_))));
        let mut c = chain;
        c.omega_if = 2.0 * PI * 25e6;
        // 2·IF folds onto 50 MHz, well clear of DC, so this is fine...
        assert!(Downconverter::new(&c).is_ok());
        // ...but at f_s/2 − tiny the image folds back near DC.
        c.omega_if = 2.0 * PI * (50e6 - 10e3);
        assert!(matches!(Downconverter::new(&c), Err(Error::Configuration(_))));
    }

    #[test]
    fn scaling_round_trip() {
        let chain = ChainParams::reference_port1();
        let k = (2.0 * HBAR * chain.omega_a * 200e3 * 50.0 * 10f64.powf(9.922)).sqrt();
        let (x, p) = scale_to_quanta(k, 0.0, &chain).unwrap();
        assert!((x - 1.0).abs() < 1e-12 && p == 0.0);
        assert_eq!(scale_to_quanta(0.0, 0.0, &chain).unwrap(), (0.0, 0.0));
        let (x, _) = scale_to_quanta(1e-6, 0.0, &chain).unwrap();
        assert!((x - 1e-6 / k).abs() < 1e-12 * x);
        let (i, q) = unscale_from_quanta(0.3, -1.7, &chain).unwrap();
        let (x, p) = scale_to_quanta(i, q, &chain).unwrap();
        assert!((x - 0.3).abs() < 1e-12 * 0.3 && (p + 1.7).abs() < 1e-12 * 1.7);
        let mut bad = chain;
        bad.impedance = 0.0;
        assert!(matches!(scale_to_quanta(1.0, 1.0, &bad), Err(Error::Domain(_))));
    }
}
