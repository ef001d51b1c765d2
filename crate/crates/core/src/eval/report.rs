use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{ClassificationMetrics, ConfusionCounts};
use crate::error::{Error, Result};

/// Marker written in place of a metric that could not be computed.
pub const ABSENT: &str = "absent";

/// A metric value that may be absent. Absence is serialized as the string
/// `"absent"` so it is never mistaken for zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metric(pub Option<f64>);

impl Metric {
    pub fn value(v: f64) -> Self {
        Self(Some(v))
    }

    pub fn absent() -> Self {
        Self(None)
    }

    pub fn get(self) -> Option<f64> {
        self.0
    }
}

impl From<Option<f64>> for Metric {
    fn from(v: Option<f64>) -> Self {
        Self(v)
    }
}

impl From<f64> for Metric {
    fn from(v: f64) -> Self {
        Self(Some(v))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str(ABSENT),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str(ABSENT),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Metric;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a number or \"{ABSENT}\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Metric, E> {
                Ok(Metric(Some(v)))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Metric, E> {
                Ok(Metric(Some(v as f64)))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Metric, E> {
                Ok(Metric(Some(v as f64)))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Metric, E> {
                if v == ABSENT {
                    Ok(Metric(None))
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Classification and detection figures for one slice of the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub samples: u64,
    pub accuracy: Metric,
    pub tpr: Metric,
    pub fpr: Metric,
    pub precision: Metric,
    pub f1: Metric,
    pub ap_050: Metric,
    pub ap_070: Metric,
}

impl SliceMetrics {
    pub fn from_classification(m: &ClassificationMetrics) -> Self {
        Self {
            samples: m.counts.total(),
            accuracy: m.accuracy.into(),
            tpr: m.tpr.into(),
            fpr: m.fpr.into(),
            precision: m.precision.into(),
            f1: m.f1.into(),
            ..Self::default()
        }
    }
}

/// The structured result of one command. Everything here is a function
/// of the config and seed except `fps`; wall-clock times are kept out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub accuracy: Metric,
    pub tpr: Metric,
    pub fpr: Metric,
    pub precision: Metric,
    pub f1: Metric,
    pub ap_050: Metric,
    pub ap_070: Metric,
    pub fps: Metric,
    pub counts: Option<ConfusionCounts>,
    /// Command-specific scalars (baseline FPS, call counts, distances, …).
    pub extra: BTreeMap<String, Metric>,
    /// Per attack type (and "none"), or per held-out fold.
    pub per_attack: BTreeMap<String, SliceMetrics>,
}

impl MetricsReport {
    pub fn new(command: &str, seed: u64, config_digest: &str) -> Self {
        Self { command: command.into(), seed, config_digest: config_digest.into(), ..Self::default() }
    }

    pub fn set_classification(&mut self, m: &ClassificationMetrics) {
        self.accuracy = m.accuracy.into();
        self.tpr = m.tpr.into();
        self.fpr = m.fpr.into();
        self.precision = m.precision.into();
        self.f1 = m.f1.into();
        self.counts = Some(m.counts);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("report parse: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Writes a CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(header).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
