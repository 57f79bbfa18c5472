use num_complex::Complex64;
use rand::Rng;

use super::channel::{apply_channel, mean_power};
use super::modulate::{modulate, tone_message, Source};
use super::{Dataset, DatasetMeta, Frame, GeneratorConfig, LabeledFrame, ModulationScheme, SigError};
use crate::exec::Execution;
use crate::{seeds, FRAME_LEN};

/// A generated frame before and after the channel.
#[derive(Debug, Clone)]
pub struct FramePair {
    /// Unit-power window before noise.
    pub clean: Frame,
    pub noisy: Frame,
}

fn to_frame(window: &[Complex64]) -> Frame {
    let i: Vec<f32> = window.iter().map(|z| z.re as f32).collect();
    let q: Vec<f32> = window.iter().map(|z| z.im as f32).collect();
    Frame::from_rows(&i, &q).expect("finite window")
}

/// Synthesizes frame number `index` of the (`scheme`, `snr_db`) cell.
///
/// The random stream depends only on (seed, scheme, snr, index), so frames can
/// be generated in any order or in parallel.
pub fn generate_frame_pair(
    config: &GeneratorConfig,
    scheme: ModulationScheme,
    snr_db: i32,
    index: usize,
) -> Result<FramePair, SigError> {
    let mut rng = seeds::rng(
        config.seed,
        &[scheme.index() as u64, snr_db as i64 as u64, index as u64],
    );
    let sps = config.samples_per_symbol;
    let (signal, margin) = if scheme.is_analog() {
        let margin = 64;
        let msg = tone_message(&mut rng, FRAME_LEN + 2 * margin + 64);
        (modulate(scheme, Source::Message(&msg), config)?, margin)
    } else {
        let margin = 2 * config.rrc_span_symbols * sps;
        let n_sym = FRAME_LEN.div_ceil(sps) + 4 * config.rrc_span_symbols + 8;
        let bits: Vec<u8> = (0..n_sym * scheme.bits_per_symbol())
            .map(|_| rng.random_range(0..2u8))
            .collect();
        (modulate(scheme, Source::Bits(&bits), config)?, margin)
    };
    let last_start = signal.len() - FRAME_LEN - margin;
    let start = rng.random_range(margin..=last_start);
    let window = &signal[start..start + FRAME_LEN];
    let gain = 1.0 / mean_power(window).sqrt();
    let clean: Vec<Complex64> = window.iter().map(|z| z * gain).collect();
    let noisy = apply_channel(&clean, snr_db as f64, &mut rng)?;
    Ok(FramePair {
        clean: to_frame(&clean),
        noisy: to_frame(&noisy),
    })
}

/// Generates `frames_per_class_per_snr` frames for every (snr, class) cell.
///
/// Frames are ordered snr-major, then by class index, then by frame index;
/// ids are positions in that order.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Dataset, SigError> {
    generate_dataset_with(config, Execution::default())
}

pub fn generate_dataset_with(config: &GeneratorConfig, exec: Execution) -> Result<Dataset, SigError> {
    config.validate()?;
    let per = config.frames_per_class_per_snr;
    let per_snr = per * ModulationScheme::ALL.len();
    let total = per_snr * config.snr_list.len();
    let frames = exec.map_range(total, |id| {
        let snr = config.snr_list[id / per_snr];
        let scheme = ModulationScheme::ALL[(id % per_snr) / per];
        let index = id % per;
        generate_frame_pair(config, scheme, snr, index).map(|pair| LabeledFrame {
            id: id as u64,
            frame: pair.noisy,
            label: scheme,
            snr_db: snr,
        })
    });
    let frames = frames.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(
        frames,
        DatasetMeta {
            generator: Some(config.clone()),
            attributes: Default::default(),
        },
    ))
}
