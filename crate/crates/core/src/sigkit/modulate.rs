use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use super::{GeneratorConfig, ModulationScheme, SigError};
use crate::FRAME_LEN;

/// Bandwidth-time product of the GFSK Gaussian frequency filter.
pub const GFSK_BT: f64 = 0.35;
/// GFSK modulation index.
pub const GFSK_MOD_INDEX: f64 = 1.0;
/// CPFSK modulation index (rectangular frequency pulse).
pub const CPFSK_MOD_INDEX: f64 = 0.5;
/// WBFM peak frequency deviation in cycles per sample at |m| = 1.
const WBFM_DEVIATION: f64 = 0.2;
/// Half-length of the FIR Hilbert transformer used for SSB.
const HILBERT_HALF_TAPS: usize = 63;
const GAUSSIAN_SPAN_SYMBOLS: usize = 4;

/// Modulator input: bits for digital schemes, a real message for analog ones.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// One bit per entry, each 0 or 1.
    Bits(&'a [u8]),
    Message(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationPoint {
    pub symbol: Complex64,
    /// Bits carried by the symbol, MSB first.
    pub bits: u32,
}

fn gray_inverse(g: u32) -> u32 {
    let mut k = g;
    let mut shift = g >> 1;
    while shift != 0 {
        k ^= shift;
        shift >>= 1;
    }
    k
}

/// Gray-mapped PAM amplitude for an `n`-bit label: bit pattern 0 maps to the top level.
fn pam_level(bits: u32, n: u32) -> f64 {
    let levels = 1u32 << n;
    (levels - 1) as f64 - 2.0 * gray_inverse(bits) as f64
}

/// Unit-average-power constellation of a linear scheme, indexed by bit pattern.
pub fn constellation(scheme: ModulationScheme) -> Option<Vec<ConstellationPoint>> {
    let bps = scheme.bits_per_symbol() as u32;
    let point = |bits: u32| -> Complex64 {
        match scheme {
            ModulationScheme::BPSK => Complex64::new(pam_level(bits, 1), 0.0),
            ModulationScheme::PAM4 => Complex64::new(pam_level(bits, 2) / 5f64.sqrt(), 0.0),
            ModulationScheme::QPSK => {
                Complex64::new(pam_level(bits >> 1, 1), pam_level(bits & 1, 1)) / 2f64.sqrt()
            }
            ModulationScheme::QAM16 => {
                Complex64::new(pam_level(bits >> 2, 2), pam_level(bits & 0b11, 2)) / 10f64.sqrt()
            }
            ModulationScheme::QAM64 => {
                Complex64::new(pam_level(bits >> 3, 3), pam_level(bits & 0b111, 3)) / 42f64.sqrt()
            }
            ModulationScheme::PSK8 => {
                Complex64::from_polar(1.0, 2.0 * PI * gray_inverse(bits) as f64 / 8.0)
            }
            _ => unreachable!(),
        }
    };
    if !scheme.is_linear() {
        return None;
    }
    Some(
        (0..1u32 << bps)
            .map(|bits| ConstellationPoint {
                symbol: point(bits),
                bits,
            })
            .collect(),
    )
}

/// Root-raised-cosine taps, `2·span·sps + 1` long, normalized to unit energy.
///
/// With unit energy, a transmit/receive pair has unit gain at symbol centres.
pub fn rrc_taps(samples_per_symbol: usize, rolloff: f64, span_symbols: usize) -> Vec<f64> {
    let sps = samples_per_symbol as f64;
    let len = 2 * span_symbols * samples_per_symbol + 1;
    let mid = (len / 2) as f64;
    let a = rolloff;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let t = (i as f64 - mid) / sps;
            if t.abs() < 1e-12 {
                1.0 + a * (4.0 / PI - 1.0)
            } else if (t.abs() - 1.0 / (4.0 * a)).abs() < 1e-9 {
                a / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * a)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * a)).cos())
            } else {
                let num = (PI * t * (1.0 - a)).sin() + 4.0 * a * t * (PI * t * (1.0 + a)).cos();
                let den = PI * t * (1.0 - (4.0 * a * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    taps
}

/// Gaussian frequency-shaping taps with unit DC gain.
pub fn gaussian_taps(samples_per_symbol: usize, bt: f64, span_symbols: usize) -> Vec<f64> {
    let sps = samples_per_symbol as f64;
    let len = span_symbols * samples_per_symbol + 1;
    let mid = (len / 2) as f64;
    // Standard deviation in symbol periods for the given BT.
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt);
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let t = (i as f64 - mid) / sps;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

fn convolve_full(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); x.len() + taps.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi.re == 0.0 && xi.im == 0.0 {
            continue;
        }
        for (k, &h) in taps.iter().enumerate() {
            out[i + k] += xi * h;
        }
    }
    out
}

fn convolve_same_real(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .filter_map(|(k, &h)| {
                    let idx = n as isize + half as isize - k as isize;
                    (idx >= 0 && (idx as usize) < x.len()).then(|| h * x[idx as usize])
                })
                .sum()
        })
        .collect()
}

fn hilbert_fir(x: &[f64]) -> Vec<f64> {
    let half = HILBERT_HALF_TAPS as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|n| {
            if n % 2 == 0 {
                0.0
            } else {
                let w = 0.42
                    + 0.5 * (PI * n as f64 / (half as f64 + 1.0)).cos()
                    + 0.08 * (2.0 * PI * n as f64 / (half as f64 + 1.0)).cos();
                2.0 / (PI * n as f64) * w
            }
        })
        .collect();
    convolve_same_real(x, &taps)
}

fn bits_to_symbols(bits: &[u8], bps: usize) -> Vec<u32> {
    bits.chunks_exact(bps)
        .map(|c| c.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1)))
        .collect()
}

fn fsk_phase(freq: &[f64], mod_index: f64, sps: usize) -> Vec<Complex64> {
    let mut phase = 0.0f64;
    freq.iter()
        .map(|&f| {
            phase += PI * mod_index * f / sps as f64;
            phase = phase.rem_euclid(2.0 * PI);
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Modulates `source` onto complex baseband.
///
/// Linear digital schemes return the full RRC convolution: symbol `k` peaks at
/// sample `k·sps + span·sps`. FSK schemes return `symbols·sps` constant-envelope
/// samples. Analog schemes return one sample per message sample.
pub fn modulate(
    scheme: ModulationScheme,
    source: Source<'_>,
    config: &GeneratorConfig,
) -> Result<Vec<Complex64>, SigError> {
    config.validate_modulation()?;
    let sps = config.samples_per_symbol;
    match (scheme.is_analog(), source) {
        (false, Source::Bits(bits)) => {
            let bps = scheme.bits_per_symbol();
            let required = config.min_symbols() * bps;
            if bits.len() < required {
                return Err(SigError::SourceTooShort {
                    scheme,
                    required,
                    actual: bits.len(),
                    unit: "bits",
                });
            }
            let symbols = bits_to_symbols(bits, bps);
            if scheme.is_linear() {
                let table = constellation(scheme).expect("linear scheme");
                let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
                for (k, &s) in symbols.iter().enumerate() {
                    up[k * sps] = table[s as usize].symbol;
                }
                let taps = rrc_taps(sps, config.rrc_rolloff, config.rrc_span_symbols);
                Ok(convolve_full(&up, &taps))
            } else {
                let nrz: Vec<f64> = symbols
                    .iter()
                    .flat_map(|&s| std::iter::repeat_n(if s == 0 { 1.0 } else { -1.0 }, sps))
                    .collect();
                let (freq, h) = if scheme == ModulationScheme::GFSK {
                    let taps = gaussian_taps(sps, GFSK_BT, GAUSSIAN_SPAN_SYMBOLS);
                    (convolve_same_real(&nrz, &taps), GFSK_MOD_INDEX)
                } else {
                    (nrz, CPFSK_MOD_INDEX)
                };
                Ok(fsk_phase(&freq, h, sps))
            }
        }
        (true, Source::Message(m)) => {
            if m.len() < FRAME_LEN {
                return Err(SigError::SourceTooShort {
                    scheme,
                    required: FRAME_LEN,
                    actual: m.len(),
                    unit: "message samples",
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(SigError::BadSignal);
            }
            Ok(match scheme {
                ModulationScheme::AmDsb => m.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
                ModulationScheme::AmSsb => {
                    let h = hilbert_fir(m);
                    m.iter().zip(h).map(|(&re, im)| Complex64::new(re, im)).collect()
                }
                ModulationScheme::WBFM => {
                    let mut phase = 0.0f64;
                    m.iter()
                        .map(|&v| {
                            phase = (phase + 2.0 * PI * WBFM_DEVIATION * v).rem_euclid(2.0 * PI);
                            Complex64::from_polar(1.0, phase)
                        })
                        .collect()
                }
                _ => unreachable!(),
            })
        }
        (false, Source::Message(_)) => Err(SigError::WrongSource {
            scheme,
            expected: "bit",
        }),
        (true, Source::Bits(_)) => Err(SigError::WrongSource {
            scheme,
            expected: "message",
        }),
    }
}

/// Band-limited message: three tones with random frequencies in
/// [0.01, 0.1) cycles/sample, random phases, peak amplitude at most 1.
pub fn tone_message<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.01..0.1),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let total: f64 = tones.iter().map(|t| t.2).sum();
    (0..len)
        .map(|n| {
            tones
                .iter()
                .map(|&(f, ph, a)| a * (2.0 * PI * f * n as f64 + ph).cos())
                .sum::<f64>()
                / total
        })
        .collect()
}

/// Matched-filter receiver for linear schemes: filters with the RRC, samples
/// at the `num_symbols` symbol centres, and makes nearest-point decisions.
///
/// `signal` must be aligned as produced by [`modulate`] and carry unit gain.
pub fn demodulate_linear(
    scheme: ModulationScheme,
    signal: &[Complex64],
    num_symbols: usize,
    config: &GeneratorConfig,
) -> Result<Vec<u8>, SigError> {
    let table = constellation(scheme).ok_or(SigError::WrongSource {
        scheme,
        expected: "linear digital",
    })?;
    let sps = config.samples_per_symbol;
    let taps = rrc_taps(sps, config.rrc_rolloff, config.rrc_span_symbols);
    let delay = 2 * config.rrc_span_symbols * sps;
    let bps = scheme.bits_per_symbol();
    let mut bits = Vec::with_capacity(num_symbols * bps);
    for k in 0..num_symbols {
        let centre = k * sps + delay;
        // Matched filter output at one instant: correlate with the time-reversed taps.
        let mut y = Complex64::new(0.0, 0.0);
        for (j, &h) in taps.iter().enumerate() {
            let idx = centre as isize - j as isize;
            if idx >= 0 && (idx as usize) < signal.len() {
                y += signal[idx as usize] * h;
            }
        }
        let best = table
            .iter()
            .min_by(|a, b| {
                (a.symbol - y)
                    .norm_sqr()
                    .partial_cmp(&(b.symbol - y).norm_sqr())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty constellation");
        for b in (0..bps).rev() {
            bits.push(((best.bits >> b) & 1) as u8);
        }
    }
    Ok(bits)
}
