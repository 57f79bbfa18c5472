use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cnn,
    Lstm,
    Mlp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Lstm => "lstm",
            Family::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Family::Cnn),
            "lstm" => Ok(Family::Lstm),
            "mlp" => Ok(Family::Mlp),
            _ => Err(ModelError::Config(format!(
                "unknown model family {s:?} (expected cnn, lstm or mlp)"
            ))),
        }
    }
}

/// Two conv/relu/pool stages over the time axis, then a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSpec {
    pub conv1_filters: usize,
    pub conv1_width: usize,
    pub conv2_filters: usize,
    pub conv2_width: usize,
    pub pool: usize,
    pub dense: usize,
    pub dropout: f32,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            conv1_filters: 64,
            conv1_width: 8,
            conv2_filters: 32,
            conv2_width: 4,
            pool: 2,
            dense: 128,
            dropout: 0.5,
        }
    }
}

/// Single LSTM layer over 128 steps of (I, Q); the last hidden state feeds a
/// dense output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmSpec {
    pub hidden: usize,
}

impl Default for LstmSpec {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

/// Fully connected network over the flattened 256-entry frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub dropout: f32,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            dropout: 0.0,
        }
    }
}

/// Layer description of one classifier. Input is always 2×128 and the output
/// layer always has [`crate::NUM_CLASSES`] units.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchitectureSpec {
    Cnn(CnnSpec),
    Lstm(LstmSpec),
    Mlp(MlpSpec),
}

impl ArchitectureSpec {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Cnn => Self::Cnn(CnnSpec::default()),
            Family::Lstm => Self::Lstm(LstmSpec::default()),
            Family::Mlp => Self::Mlp(MlpSpec::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Self::Cnn(_) => Family::Cnn,
            Self::Lstm(_) => Family::Lstm,
            Self::Mlp(_) => Family::Mlp,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(format!("{} spec: {m}", self.family())));
        let dropout_ok = |p: f32| (0.0..1.0).contains(&p);
        match self {
            Self::Cnn(s) => {
                if s.conv1_filters == 0 || s.conv2_filters == 0 || s.dense == 0 {
                    return bad("layer widths must be positive");
                }
                if s.conv1_width == 0 || s.conv2_width == 0 || s.pool == 0 {
                    return bad("kernel and pool sizes must be positive");
                }
                let after = crate::FRAME_LEN / s.pool / s.pool;
                if after == 0 {
                    return bad("pooling collapses the time axis");
                }
                if !dropout_ok(s.dropout) {
                    return bad("dropout must be in [0, 1)");
                }
            }
            Self::Lstm(s) => {
                if s.hidden == 0 {
                    return bad("hidden size must be positive");
                }
            }
            Self::Mlp(s) => {
                if s.hidden.is_empty() || s.hidden.contains(&0) {
                    return bad("hidden layer widths must be positive");
                }
                if !dropout_ok(s.dropout) {
                    return bad("dropout must be in [0, 1)");
                }
            }
        }
        Ok(())
    }

    /// Canonical one-line description, also used to detect checkpoint mismatches.
    pub fn describe(&self) -> String {
        let kv = self.to_kv();
        kv.iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("arch.{k}"), v);
        };
        put("family", self.family().to_string());
        match self {
            Self::Cnn(s) => {
                put("conv1_filters", s.conv1_filters.to_string());
                put("conv1_width", s.conv1_width.to_string());
                put("conv2_filters", s.conv2_filters.to_string());
                put("conv2_width", s.conv2_width.to_string());
                put("pool", s.pool.to_string());
                put("dense", s.dense.to_string());
                put("dropout", s.dropout.to_string());
            }
            Self::Lstm(s) => put("hidden", s.hidden.to_string()),
            Self::Mlp(s) => {
                let widths: Vec<String> = s.hidden.iter().map(|w| w.to_string()).collect();
                put("hidden", widths.join(" "));
                put("dropout", s.dropout.to_string());
            }
        }
        m
    }

    pub fn from_kv(m: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let get = |k: &str| {
            m.get(&format!("arch.{k}"))
                .ok_or_else(|| ModelError::Checkpoint(format!("missing metadata arch.{k}")))
        };
        fn parse<T: FromStr>(k: &str, v: &str) -> Result<T, ModelError> {
            v.parse()
                .map_err(|_| ModelError::Checkpoint(format!("bad value {v:?} for arch.{k}")))
        }
        let num = |k: &str| -> Result<usize, ModelError> { parse(k, get(k)?) };
        let family: Family = get("family")?.parse()?;
        let spec = match family {
            Family::Cnn => Self::Cnn(CnnSpec {
                conv1_filters: num("conv1_filters")?,
                conv1_width: num("conv1_width")?,
                conv2_filters: num("conv2_filters")?,
                conv2_width: num("conv2_width")?,
                pool: num("pool")?,
                dense: num("dense")?,
                dropout: parse("dropout", get("dropout")?)?,
            }),
            Family::Lstm => Self::Lstm(LstmSpec {
                hidden: num("hidden")?,
            }),
            Family::Mlp => Self::Mlp(MlpSpec {
                hidden: get("hidden")?
                    .split_whitespace()
                    .map(|w| parse("hidden", w))
                    .collect::<Result<_, _>>()?,
                dropout: parse("dropout", get("dropout")?)?,
            }),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}
