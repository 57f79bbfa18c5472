//! Synthetic IQ dataset generation.
//!
//! Frames are 2×128 windows of complex baseband (row 0 in-phase, row 1
//! quadrature) produced by modulating random source data, normalizing the
//! clean window to unit average power and passing it through an AWGN channel.

mod channel;
mod generate;
mod io;
mod modulate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use channel::{apply_channel, mean_power};
pub use generate::{generate_dataset, generate_dataset_with, generate_frame_pair, FramePair};
pub use io::{export_csv, load_dataset, save_dataset, write_csv, DATASET_MAGIC, DATASET_VERSION};
pub use modulate::{
    constellation, demodulate_linear, gaussian_taps, modulate, rrc_taps, tone_message,
    ConstellationPoint, Source, CPFSK_MOD_INDEX, GFSK_BT, GFSK_MOD_INDEX,
};

use crate::{FRAME_LEN, FRAME_SIZE, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum SigError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("{scheme}: source too short, need at least {required} {unit}, got {actual}")]
    SourceTooShort {
        scheme: ModulationScheme,
        required: usize,
        actual: usize,
        unit: &'static str,
    },
    #[error("{scheme} expects a {expected} source")]
    WrongSource {
        scheme: ModulationScheme,
        expected: &'static str,
    },
    #[error("channel input must be non-empty and finite")]
    BadSignal,
    #[error("frame must have {FRAME_SIZE} finite entries, got {len} entries ({non_finite} non-finite)")]
    BadFrame { len: usize, non_finite: usize },
    #[error("snr {0} dB is not one of -20, -18, ..., 18")]
    BadSnr(i32),
    #[error("not a dataset file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported dataset format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("dataset file truncated: {0}")]
    Truncated(String),
    #[error("dataset checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The eleven modulation classes, ordered by name so the discriminant is the class index.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModulationScheme {
    AmDsb = 0,
    AmSsb = 1,
    BPSK = 2,
    CPFSK = 3,
    GFSK = 4,
    PAM4 = 5,
    PSK8 = 6,
    QAM16 = 7,
    QAM64 = 8,
    QPSK = 9,
    WBFM = 10,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; NUM_CLASSES] = [
        Self::AmDsb,
        Self::AmSsb,
        Self::BPSK,
        Self::CPFSK,
        Self::GFSK,
        Self::PAM4,
        Self::PSK8,
        Self::QAM16,
        Self::QAM64,
        Self::QPSK,
        Self::WBFM,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AmDsb => "AM_DSB",
            Self::AmSsb => "AM_SSB",
            Self::BPSK => "BPSK",
            Self::CPFSK => "CPFSK",
            Self::GFSK => "GFSK",
            Self::PAM4 => "PAM4",
            Self::PSK8 => "PSK8",
            Self::QAM16 => "QAM16",
            Self::QAM64 => "QAM64",
            Self::QPSK => "QPSK",
            Self::WBFM => "WBFM",
        }
    }

    /// Message-driven (analog) schemes take a real waveform instead of bits.
    pub fn is_analog(self) -> bool {
        matches!(self, Self::AmDsb | Self::AmSsb | Self::WBFM)
    }

    /// Pulse-shaped linear digital schemes (constellation + RRC).
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            Self::BPSK | Self::QPSK | Self::PSK8 | Self::PAM4 | Self::QAM16 | Self::QAM64
        )
    }

    /// Bits carried by one symbol; zero for analog schemes.
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Self::BPSK | Self::GFSK | Self::CPFSK => 1,
            Self::QPSK | Self::PAM4 => 2,
            Self::PSK8 => 3,
            Self::QAM16 => 4,
            Self::QAM64 => 6,
            Self::AmDsb | Self::AmSsb | Self::WBFM => 0,
        }
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown modulation scheme {s:?}"))
    }
}

/// One 2×128 IQ window stored row-major: entries `0..128` are I, `128..256` are Q.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    iq: Vec<f32>,
}

impl Frame {
    pub fn new(iq: Vec<f32>) -> Result<Self, SigError> {
        let non_finite = iq.iter().filter(|v| !v.is_finite()).count();
        if iq.len() != FRAME_SIZE || non_finite > 0 {
            return Err(SigError::BadFrame {
                len: iq.len(),
                non_finite,
            });
        }
        Ok(Self { iq })
    }

    pub fn zeros() -> Self {
        Self {
            iq: vec![0.0; FRAME_SIZE],
        }
    }

    pub fn from_rows(i: &[f32], q: &[f32]) -> Result<Self, SigError> {
        let mut iq = Vec::with_capacity(FRAME_SIZE);
        iq.extend_from_slice(i);
        iq.extend_from_slice(q);
        Self::new(iq)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.iq
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.iq
    }

    pub fn i_row(&self) -> &[f32] {
        &self.iq[..FRAME_LEN]
    }

    pub fn q_row(&self) -> &[f32] {
        &self.iq[FRAME_LEN..]
    }

    /// Mean of I² + Q² over the 128 samples.
    pub fn mean_power(&self) -> f64 {
        self.iq.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / FRAME_LEN as f64
    }
}

/// The SNR grid of the dataset: -20, -18, ..., 18 dB.
pub fn standard_snrs() -> Vec<i32> {
    (-20..=18).step_by(2).collect()
}

pub fn is_valid_snr(snr_db: i32) -> bool {
    (-20..=18).contains(&snr_db) && snr_db % 2 == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    /// Position-independent identifier; unique within a dataset.
    pub id: u64,
    pub frame: Frame,
    pub label: ModulationScheme,
    pub snr_db: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub frames_per_class_per_snr: usize,
    pub samples_per_symbol: usize,
    pub rrc_rolloff: f64,
    pub rrc_span_symbols: usize,
    pub seed: u64,
    pub snr_list: Vec<i32>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            frames_per_class_per_snr: 100,
            samples_per_symbol: 8,
            rrc_rolloff: 0.35,
            rrc_span_symbols: 8,
            seed: 0,
            snr_list: standard_snrs(),
        }
    }
}

impl GeneratorConfig {
    /// Checks the parameters that `modulate` depends on.
    pub fn validate_modulation(&self) -> Result<(), SigError> {
        if self.samples_per_symbol < 2 {
            return Err(SigError::Config(format!(
                "samples_per_symbol must be >= 2, got {}",
                self.samples_per_symbol
            )));
        }
        if !(self.rrc_rolloff > 0.0 && self.rrc_rolloff <= 1.0) {
            return Err(SigError::Config(format!(
                "rrc_rolloff must be in (0, 1], got {}",
                self.rrc_rolloff
            )));
        }
        if self.rrc_span_symbols == 0 {
            return Err(SigError::Config("rrc_span_symbols must be >= 1".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SigError> {
        self.validate_modulation()?;
        if self.frames_per_class_per_snr == 0 {
            return Err(SigError::Config(
                "frames_per_class_per_snr must be >= 1".into(),
            ));
        }
        if let Some(&bad) = self.snr_list.iter().find(|&&s| !is_valid_snr(s)) {
            return Err(SigError::BadSnr(bad));
        }
        let mut sorted = self.snr_list.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.snr_list.len() {
            return Err(SigError::Config("snr_list contains duplicates".into()));
        }
        Ok(())
    }

    /// Symbols needed to cover one frame plus the pulse-shaping transient.
    pub fn min_symbols(&self) -> usize {
        FRAME_LEN.div_ceil(self.samples_per_symbol) + self.rrc_span_symbols
    }

    pub(crate) fn to_kv(&self, map: &mut BTreeMap<String, String>) {
        let snrs: Vec<String> = self.snr_list.iter().map(|s| s.to_string()).collect();
        map.insert(
            "generator.frames_per_class_per_snr".into(),
            self.frames_per_class_per_snr.to_string(),
        );
        map.insert(
            "generator.samples_per_symbol".into(),
            self.samples_per_symbol.to_string(),
        );
        map.insert("generator.rrc_rolloff".into(), format!("{:?}", self.rrc_rolloff));
        map.insert(
            "generator.rrc_span_symbols".into(),
            self.rrc_span_symbols.to_string(),
        );
        map.insert("generator.seed".into(), self.seed.to_string());
        map.insert("generator.snr_list".into(), snrs.join(","));
        map.insert("generator.gfsk_bt".into(), format!("{:?}", GFSK_BT));
        map.insert("generator.gfsk_mod_index".into(), format!("{:?}", GFSK_MOD_INDEX));
        map.insert("generator.cpfsk_mod_index".into(), format!("{:?}", CPFSK_MOD_INDEX));
        map.insert("generator.channel".into(), "awgn".into());
    }

    pub(crate) fn from_kv(map: &BTreeMap<String, String>) -> Result<Option<Self>, String> {
        if !map.contains_key("generator.seed") {
            return Ok(None);
        }
        fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, String> {
            map.get(key)
                .ok_or_else(|| format!("missing metadata key {key}"))?
                .parse()
                .map_err(|_| format!("bad value for metadata key {key}"))
        }
        let snr_text: String = get(map, "generator.snr_list")?;
        let snr_list = if snr_text.is_empty() {
            Vec::new()
        } else {
            snr_text
                .split(',')
                .map(|s| s.parse().map_err(|_| format!("bad snr {s:?}")))
                .collect::<Result<Vec<i32>, _>>()?
        };
        Ok(Some(Self {
            frames_per_class_per_snr: get(map, "generator.frames_per_class_per_snr")?,
            samples_per_symbol: get(map, "generator.samples_per_symbol")?,
            rrc_rolloff: get(map, "generator.rrc_rolloff")?,
            rrc_span_symbols: get(map, "generator.rrc_span_symbols")?,
            seed: get(map, "generator.seed")?,
            snr_list,
        }))
    }
}

/// Dataset metadata: the generator echo when the frames were synthesized,
/// plus free-form provenance attributes (substitute databases, adversarial batches).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub generator: Option<GeneratorConfig>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub frames: Vec<LabeledFrame>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(frames: Vec<LabeledFrame>, meta: DatasetMeta) -> Self {
        Self { frames, meta }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Distinct SNR tags in ascending order.
    pub fn snrs(&self) -> Vec<i32> {
        let mut s: Vec<i32> = self.frames.iter().map(|f| f.snr_db).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Frame counts per (class, snr).
    pub fn counts(&self) -> BTreeMap<(ModulationScheme, i32), usize> {
        let mut m = BTreeMap::new();
        for f in &self.frames {
            *m.entry((f.label, f.snr_db)).or_insert(0) += 1;
        }
        m
    }

    /// Global (min, max) over every IQ entry; `None` for an empty dataset.
    pub fn value_range(&self) -> Option<(f32, f32)> {
        let mut it = self.frames.iter().flat_map(|f| f.frame.as_slice().iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Deterministic stratified split: within every (class, snr) cell a seeded
    /// shuffle sends `round(test_fraction × cell)` frames to the test side.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), SigError> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(SigError::Config(format!(
                "test fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        use rand::seq::SliceRandom;
        let mut cells: BTreeMap<(ModulationScheme, i32), Vec<usize>> = BTreeMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            cells.entry((f.label, f.snr_db)).or_default().push(i);
        }
        let mut is_test = vec![false; self.frames.len()];
        for ((label, snr), mut idx) in cells {
            let mut rng = crate::seeds::rng(seed, &[0x5E17, label.index() as u64, snr as i64 as u64]);
            idx.shuffle(&mut rng);
            let n_test = (test_fraction * idx.len() as f64).round() as usize;
            for &i in &idx[..n_test] {
                is_test[i] = true;
            }
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (f, t) in self.frames.iter().zip(is_test) {
            if t {
                test.push(f.clone());
            } else {
                train.push(f.clone());
            }
        }
        Ok((
            Dataset::new(train, self.meta.clone()),
            Dataset::new(test, self.meta.clone()),
        ))
    }

    /// Keeps frames whose SNR satisfies `keep`.
    pub fn filter_snr(&self, keep: impl Fn(i32) -> bool) -> Dataset {
        Dataset::new(
            self.frames.iter().filter(|f| keep(f.snr_db)).cloned().collect(),
            self.meta.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_classes_sorted_by_name() {
        let names: Vec<&str> = ModulationScheme::ALL.iter().map(|m| m.name()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);
        for (i, m) in ModulationScheme::ALL.iter().enumerate() {
            assert_eq!(m.index(), i);
            assert_eq!(ModulationScheme::from_index(i), Some(*m));
            assert_eq!(m.name().parse::<ModulationScheme>().unwrap(), *m);
        }
        assert_eq!(ModulationScheme::from_index(11), None);
    }

    #[test]
    fn frame_shape_is_enforced() {
        assert!(Frame::new(vec![0.0; 255]).is_err());
        let mut v = vec![0.0; 256];
        v[7] = f32::NAN;
        assert!(matches!(
            Frame::new(v),
            Err(SigError::BadFrame { non_finite: 1, .. })
        ));
        assert!(Frame::new(vec![1.0; 256]).is_ok());
    }

    #[test]
    fn snr_grid() {
        let s = standard_snrs();
        assert_eq!(s.len(), 20);
        assert_eq!(s[0], -20);
        assert_eq!(s[19], 18);
        assert!(!is_valid_snr(19));
        assert!(!is_valid_snr(20));
    }

    #[test]
    fn config_validation() {
        let mut c = GeneratorConfig::default();
        assert!(c.validate().is_ok());
        c.rrc_rolloff = 0.0;
        assert!(matches!(c.validate(), Err(SigError::Config(_))));
        c.rrc_rolloff = 1.0;
        c.samples_per_symbol = 1;
        assert!(c.validate().is_err());
        c.samples_per_symbol = 8;
        c.snr_list = vec![3];
        assert!(matches!(c.validate(), Err(SigError::BadSnr(3))));
    }

    #[test]
    fn generator_kv_round_trip() {
        let c = GeneratorConfig {
            seed: u64::MAX,
            rrc_rolloff: 0.1 + 0.2,
            ..Default::default()
        };
        let mut kv = BTreeMap::new();
        c.to_kv(&mut kv);
        assert_eq!(GeneratorConfig::from_kv(&kv).unwrap(), Some(c));
    }
}
