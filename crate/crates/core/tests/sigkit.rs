mod support;

use std::io::Write;

use num_complex::Complex64;
use proptest::prelude::*;
use rfadv::exec::Execution;
use rfadv::sigkit::{
    apply_channel, constellation, generate_dataset_with, generate_frame_pair, load_dataset,
    mean_power, modulate, save_dataset, write_csv, GeneratorConfig, SigError, Source,
};
use rfadv::{ModulationScheme, FRAME_LEN, NUM_CLASSES};
use support::signal::{digital_schemes, measured_snr_db, round_trip_bit_errors};

fn small(frames: usize, snrs: Vec<i32>, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        frames_per_class_per_snr: frames,
        snr_list: snrs,
        seed,
        ..GeneratorConfig::default()
    }
}

#[test]
fn bpsk_maps_bits_to_antipodal_peaks() {
    let cfg = GeneratorConfig::default();
    let bits: Vec<u8> = (0..cfg.min_symbols()).map(|k| (k % 2) as u8).collect();
    let s = modulate(ModulationScheme::BPSK, Source::Bits(&bits), &cfg).unwrap();
    let table = constellation(ModulationScheme::BPSK).unwrap();
    let zero = table.iter().find(|p| p.bits == 0).unwrap().symbol;
    let one = table.iter().find(|p| p.bits == 1).unwrap().symbol;
    assert!((zero + one).norm() < 1e-12);
    assert!(zero.im.abs() < 1e-12 && (zero.norm() - 1.0).abs() < 1e-12);
    assert!(s.iter().all(|z| z.im.abs() < 1e-12));
}

#[test]
fn qam16_has_unit_average_energy_and_gray_neighbours() {
    let table = constellation(ModulationScheme::QAM16).unwrap();
    assert_eq!(table.len(), 16);
    let energy = table.iter().map(|p| p.symbol.norm_sqr()).sum::<f64>() / 16.0;
    assert!((energy - 1.0).abs() < 1e-12);
    let d_min = 2.0 / 10f64.sqrt();
    for a in &table {
        for b in &table {
            if ((a.symbol - b.symbol).norm() - d_min).abs() < 1e-9 {
                assert_eq!((a.bits ^ b.bits).count_ones(), 1, "{a:?} {b:?}");
            }
        }
    }
}

#[test]
fn continuous_phase_schemes_have_constant_envelope() {
    let cfg = GeneratorConfig::default();
    for scheme in [ModulationScheme::CPFSK, ModulationScheme::GFSK] {
        let bits: Vec<u8> = (0..cfg.min_symbols()).map(|k| ((k * 7) % 3 == 0) as u8).collect();
        let s = modulate(scheme, Source::Bits(&bits), &cfg).unwrap();
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-9), "{scheme}");
    }
}

#[test]
fn noiseless_digital_frames_demodulate_without_errors() {
    let cfg = GeneratorConfig::default();
    for scheme in digital_schemes() {
        assert_eq!(round_trip_bit_errors(&cfg, scheme, 200, None, 3), 0, "{scheme}");
    }
}

#[test]
fn high_snr_digital_frames_demodulate_without_errors() {
    let cfg = GeneratorConfig::default();
    for scheme in digital_schemes() {
        assert_eq!(round_trip_bit_errors(&cfg, scheme, 200, Some(30.0), 4), 0, "{scheme}");
    }
}

#[test]
fn realized_snr_is_within_half_a_db() {
    let cfg = GeneratorConfig::default();
    for snr in [-20, -10, 0, 10, 18] {
        let got = measured_snr_db(&cfg, snr, 220);
        assert!((got - snr as f64).abs() < 0.5, "target {snr} measured {got}");
    }
}

#[test]
fn generated_counts_and_labels_are_balanced() {
    let cfg = small(10, vec![-20, 0, 18], 5);
    let ds = generate_dataset_with(&cfg, Execution::Sequential).unwrap();
    assert_eq!(ds.len(), 10 * NUM_CLASSES * 3);
    let counts = ds.counts();
    assert_eq!(counts.len(), NUM_CLASSES * 3);
    assert!(counts.values().all(|&c| c == 10));
    let ids: Vec<u64> = ds.frames.iter().map(|f| f.id).collect();
    assert_eq!(ids, (0..ds.len() as u64).collect::<Vec<_>>());
}

#[test]
fn one_frame_per_cell_gives_110_frames() {
    let cfg = small(1, (0..10).map(|k| 2 * k).collect(), 0);
    let ds = generate_dataset_with(&cfg, Execution::default()).unwrap();
    assert_eq!(ds.len(), 110);
}

#[test]
fn clean_windows_have_unit_power() {
    let cfg = GeneratorConfig::default();
    for scheme in ModulationScheme::ALL {
        for i in 0..5 {
            let pair = generate_frame_pair(&cfg, scheme, 0, i).unwrap();
            assert!((pair.clean.mean_power() - 1.0).abs() <= 1e-6, "{scheme}");
        }
    }
}

#[test]
fn generation_is_deterministic_and_order_free() {
    let cfg = small(3, vec![-4, 6], 17);
    let a = generate_dataset_with(&cfg, Execution::Sequential).unwrap();
    let b = generate_dataset_with(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let f = &a.frames[7];
    let pair = generate_frame_pair(&cfg, f.label, f.snr_db, 7 % 3).unwrap();
    assert_eq!(pair.noisy, f.frame);
    let other = generate_dataset_with(&small(3, vec![-4, 6], 18), Execution::Sequential).unwrap();
    assert_ne!(a.frames[0].frame, other.frames[0].frame);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_snr = small(1, vec![3], 0);
    assert!(matches!(generate_dataset_with(&bad_snr, Execution::Sequential), Err(SigError::BadSnr(3))));
    let zero = small(0, vec![0], 0);
    assert!(matches!(generate_dataset_with(&zero, Execution::Sequential), Err(SigError::Config(_))));
    let dup = small(1, vec![0, 0], 0);
    assert!(matches!(generate_dataset_with(&dup, Execution::Sequential), Err(SigError::Config(_))));
}

#[test]
fn channel_rejects_empty_and_non_finite_input() {
    let mut rng = rand::rng();
    assert!(matches!(apply_channel(&[], 0.0, &mut rng), Err(SigError::BadSignal)));
    let nan = [Complex64::new(f64::NAN, 0.0)];
    assert!(matches!(apply_channel(&nan, 0.0, &mut rng), Err(SigError::BadSignal)));
}

#[test]
fn short_and_mismatched_sources_are_rejected() {
    let cfg = GeneratorConfig::default();
    let err = modulate(ModulationScheme::QPSK, Source::Bits(&[0, 1]), &cfg).unwrap_err();
    assert!(matches!(err, SigError::SourceTooShort { .. }), "{err}");
    let msg = vec![0.0; FRAME_LEN];
    let err = modulate(ModulationScheme::QPSK, Source::Message(&msg), &cfg).unwrap_err();
    assert!(matches!(err, SigError::WrongSource { .. }), "{err}");
    let err = modulate(ModulationScheme::WBFM, Source::Bits(&[0; 4096]), &cfg).unwrap_err();
    assert!(matches!(err, SigError::WrongSource { .. }), "{err}");
}

#[test]
fn dataset_file_round_trips_and_reports_corruption() {
    let cfg = small(2, vec![-2, 8], 9);
    let ds = generate_dataset_with(&cfg, Execution::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.iqds");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);

    let bytes = std::fs::read(&path).unwrap();
    let corrupt = |name: &str, data: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, data).unwrap();
        load_dataset(&p).unwrap_err()
    };
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(matches!(corrupt("m", &magic), SigError::BadMagic));
    assert!(matches!(corrupt("t", &bytes[..bytes.len() / 2]), SigError::Truncated(_)));
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x01;
    assert!(matches!(corrupt("c", &flipped), SigError::Checksum { .. }));
    assert!(matches!(load_dataset(dir.path().join("missing")), Err(SigError::Io(_))));
}

#[test]
fn csv_has_one_row_per_sample() {
    let ds = generate_dataset_with(&small(1, vec![0], 2), Execution::default()).unwrap();
    let mut out = Vec::new();
    write_csv(&ds, &mut out).unwrap();
    out.flush().unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), ds.len() * FRAME_LEN + 1);
    let columns = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == columns));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn channel_noise_power_tracks_target(snr in -20i32..=18, seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let clean: Vec<Complex64> = (0..20_000)
            .map(|k| Complex64::from_polar(2.0, k as f64 * 0.37))
            .collect();
        let noisy = apply_channel(&clean, snr as f64, &mut rng).unwrap();
        let noise: Vec<Complex64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
        let got = 10.0 * (mean_power(&clean) / mean_power(&noise)).log10();
        prop_assert!((got - snr as f64).abs() < 0.2, "target {} got {}", snr, got);
    }

    #[test]
    fn split_partitions_every_cell(frames in 2usize..6, fraction in 0.1f64..0.9, seed in any::<u64>()) {
        let ds = generate_dataset_with(&small(frames, vec![0, 10], 1), Execution::Sequential).unwrap();
        let (train, test) = ds.split(fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), ds.len());
        let mut ids: Vec<u64> = train.frames.iter().chain(&test.frames).map(|f| f.id).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..ds.len() as u64).collect::<Vec<_>>());
        let want = (fraction * frames as f64).round() as usize;
        for cell in ds.counts().keys() {
            prop_assert_eq!(test.counts().get(cell).copied().unwrap_or(0), want);
        }
    }
}
