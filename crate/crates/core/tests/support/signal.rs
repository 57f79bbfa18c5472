//! Independent measurements on generated signals.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfadv::sigkit::{
    apply_channel, demodulate_linear, generate_frame_pair, modulate, GeneratorConfig, Source,
};
use rfadv::ModulationScheme;

/// Realized SNR of one (snr, all classes) slice in dB, from the ratio of
/// summed clean power to summed residual (noisy minus clean) power.
pub fn measured_snr_db(config: &GeneratorConfig, snr_db: i32, frames: usize) -> f64 {
    let (mut signal, mut noise) = (0.0f64, 0.0f64);
    for i in 0..frames {
        let scheme = ModulationScheme::ALL[i % ModulationScheme::ALL.len()];
        let pair = generate_frame_pair(config, scheme, snr_db, i).unwrap();
        for (&c, &n) in pair.clean.as_slice().iter().zip(pair.noisy.as_slice()) {
            signal += (c as f64).powi(2);
            noise += (n as f64 - c as f64).powi(2);
        }
    }
    10.0 * (signal / noise).log10()
}

/// Frequency discriminator for continuous-phase FSK: the sign of the phase
/// advance accumulated sample by sample over each symbol period, positive
/// meaning bit 0.
pub fn fsk_discriminate(signal: &[Complex64], sps: usize, num_symbols: usize) -> Vec<u8> {
    let at = |n: usize| if n == 0 { Complex64::new(1.0, 0.0) } else { signal[n - 1] };
    (0..num_symbols)
        .map(|k| {
            let advance: f64 = (k * sps + 1..=(k + 1) * sps)
                .map(|n| (at(n) * at(n - 1).conj()).arg())
                .sum();
            if advance > 0.0 { 0 } else { 1 }
        })
        .collect()
}

pub fn digital_schemes() -> impl Iterator<Item = ModulationScheme> {
    ModulationScheme::ALL.into_iter().filter(|s| !s.is_analog())
}

/// Bit errors after modulating random bits and demodulating them again,
/// optionally through AWGN at `snr_db`.
pub fn round_trip_bit_errors(
    config: &GeneratorConfig,
    scheme: ModulationScheme,
    num_symbols: usize,
    snr_db: Option<f64>,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<u8> = (0..num_symbols * scheme.bits_per_symbol())
        .map(|_| rng.random_range(0..2))
        .collect();
    let mut signal = modulate(scheme, Source::Bits(&bits), config).unwrap();
    if let Some(snr) = snr_db {
        signal = apply_channel(&signal, snr, &mut rng).unwrap();
    }
    let back = if scheme.is_linear() {
        demodulate_linear(scheme, &signal, num_symbols, config).unwrap()
    } else {
        fsk_discriminate(&signal, config.samples_per_symbol, num_symbols)
    };
    back.iter().zip(&bits).filter(|(a, b)| a != b).count()
}
