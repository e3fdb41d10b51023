//! On-disk formats: JSON histogram documents, TKDM depth maps and JSON
//! sensor configurations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transient_core::{AcquisitionMode, DepthMapScene, SensorConfig, SpadHistogram, TransientHistogram};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: field `{field}`: {message}")]
    Schema {
        path: PathBuf,
        field: &'static str,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    DepthMap {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        source: transient_core::Error,
    },
}

/// Provenance recorded alongside generated data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// True when the seed was drawn by the tool rather than given.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub seed_generated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missed_rays: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_rays: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramKind {
    Transient,
    Spad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Values {
    Counts(Vec<u64>),
    Flux(Vec<f64>),
}

/// Wire layout of a histogram document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHistogramFile {
    schema_version: u32,
    kind: HistogramKind,
    bin_time_s: f64,
    n_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<AcquisitionMode>,
    values: Values,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<SensorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<Metadata>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HistogramData {
    Transient(TransientHistogram),
    Spad {
        histogram: SpadHistogram,
        bin_time_s: f64,
    },
}

/// A histogram with the configuration and provenance stored next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFile {
    pub data: HistogramData,
    pub config: Option<SensorConfig>,
    pub metadata: Option<Metadata>,
}

impl HistogramFile {
    pub fn transient(hist: TransientHistogram) -> Self {
        Self {
            data: HistogramData::Transient(hist),
            config: None,
            metadata: None,
        }
    }

    pub fn spad(histogram: SpadHistogram, bin_time_s: f64) -> Self {
        Self {
            data: HistogramData::Spad {
                histogram,
                bin_time_s,
            },
            config: None,
            metadata: None,
        }
    }

    pub fn with_config(mut self, config: SensorConfig) -> Self {
        self.config = Some(config);
        self
    }

    pub fn with_metadata(mut self, metadata: Metadata) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn to_json(&self) -> String {
        let (kind, bin_time_s, n_bins, cycles, mode, values) = match &self.data {
            HistogramData::Transient(h) => (
                HistogramKind::Transient,
                h.bin_time_s,
                h.n_bins(),
                None,
                None,
                Values::Flux(h.flux.clone()),
            ),
            HistogramData::Spad {
                histogram,
                bin_time_s,
            } => (
                HistogramKind::Spad,
                *bin_time_s,
                histogram.n_bins(),
                Some(histogram.cycles),
                Some(histogram.mode),
                Values::Counts(histogram.counts.clone()),
            ),
        };
        let raw = RawHistogramFile {
            schema_version: SCHEMA_VERSION,
            kind,
            bin_time_s,
            n_bins,
            cycles,
            mode,
            values,
            config: self.config.clone(),
            metadata: self.metadata.clone(),
        };
        to_json_string(&raw)
    }

    /// Parses a histogram document; `path` only labels errors.
    pub fn from_json(text: &str, path: &Path) -> Result<Self, IoError> {
        let raw: RawHistogramFile = serde_json::from_str(text).map_err(|source| IoError::Json {
            path: path.to_owned(),
            source,
        })?;
        let schema = |field, message: String| IoError::Schema {
            path: path.to_owned(),
            field,
            message,
        };
        let invalid = |source| IoError::Invalid {
            path: path.to_owned(),
            source,
        };
        if raw.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", raw.schema_version),
            ));
        }
        if !(raw.bin_time_s.is_finite() && raw.bin_time_s > 0.0) {
            return Err(schema("bin_time_s", "must be a positive number".into()));
        }
        let data = match raw.kind {
            HistogramKind::Transient => {
                if raw.cycles.is_some() || raw.mode.is_some() {
                    return Err(schema("kind", "transient histograms take no cycles or mode".into()));
                }
                let flux = match raw.values {
                    Values::Flux(v) => v,
                    Values::Counts(v) => v.into_iter().map(|c| c as f64).collect(),
                };
                if flux.len() != raw.n_bins {
                    return Err(schema(
                        "values",
                        format!("expected {} values, found {}", raw.n_bins, flux.len()),
                    ));
                }
                HistogramData::Transient(TransientHistogram::new(flux, raw.bin_time_s).map_err(invalid)?)
            }
            HistogramKind::Spad => {
                let cycles = raw.cycles.ok_or_else(|| schema("cycles", "required for spad histograms".into()))?;
                let mode = raw.mode.ok_or_else(|| schema("mode", "required for spad histograms".into()))?;
                let Values::Counts(counts) = raw.values else {
                    return Err(schema("values", "spad counts must be non-negative integers".into()));
                };
                let expected = match mode {
                    AcquisitionMode::Synchronous => raw.n_bins + 1,
                    AcquisitionMode::Asynchronous => raw.n_bins,
                };
                if counts.len() != expected {
                    return Err(schema(
                        "values",
                        format!("expected {expected} counts for {} bins, found {}", raw.n_bins, counts.len()),
                    ));
                }
                HistogramData::Spad {
                    histogram: SpadHistogram::new(counts, cycles, mode).map_err(invalid)?,
                    bin_time_s: raw.bin_time_s,
                }
            }
        };
        if let Some(config) = &raw.config {
            config.validate().map_err(invalid)?;
        }
        Ok(Self {
            data,
            config: raw.config,
            metadata: raw.metadata,
        })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::from_json(&read_text(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.to_json())
    }
}

/// Serializes with a trailing newline; floats use their shortest exact
/// decimal form.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory JSON serialization");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_owned(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.to_owned(),
        source,
    })
}

pub fn read_config(path: &Path) -> Result<SensorConfig, IoError> {
    let config: SensorConfig = serde_json::from_str(&read_text(path)?).map_err(|source| IoError::Json {
        path: path.to_owned(),
        source,
    })?;
    config.validate().map_err(|source| IoError::Invalid {
        path: path.to_owned(),
        source,
    })?;
    Ok(config)
}

const TKDM_MAGIC: &str = "TKDM";
const TKDM_VERSION: &str = "1";

/// Writes a depth map as text: the header `TKDM 1 <width> <height>
/// <fov_rad>`, `height` rows of `width` depths, then `height` rows of
/// albedos.
pub fn depth_map_to_string(scene: &DepthMapScene) -> String {
    let mut s = format!(
        "{TKDM_MAGIC} {TKDM_VERSION} {} {} {}\n",
        scene.width, scene.height, scene.fov_rad
    );
    for grid in [&scene.depth, &scene.albedo] {
        for row in grid.chunks(scene.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

pub fn parse_depth_map(text: &str, path: &Path) -> Result<DepthMapScene, IoError> {
    let err = |line: usize, message: String| IoError::DepthMap {
        path: path.to_owned(),
        line,
        message,
    };
    // Blank lines are ignored; line numbers refer to the original text.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != TKDM_MAGIC {
        return Err(err(hline, "header must be `TKDM 1 <width> <height> <fov_rad>`".into()));
    }
    if fields[1] != TKDM_VERSION {
        return Err(err(hline, format!("unsupported version {}", fields[1])));
    }
    let dim = |s: &str, name: &str| -> Result<usize, IoError> {
        match s.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(err(hline, format!("{name} must be a positive integer, got `{s}`"))),
        }
    };
    let width = dim(fields[2], "width")?;
    let height = dim(fields[3], "height")?;
    let fov_rad: f64 = fields[4]
        .parse()
        .map_err(|_| err(hline, format!("invalid fov `{}`", fields[4])))?;

    let mut grids: [Vec<f64>; 2] = [Vec::with_capacity(width * height), Vec::with_capacity(width * height)];
    for (g, what) in grids.iter_mut().zip(["depth", "albedo"]) {
        for r in 0..height {
            let (ln, line) = lines.next().ok_or_else(|| {
                err(
                    text.lines().count(),
                    format!("expected {height} {what} rows, found {r} (dimension mismatch)"),
                )
            })?;
            let before = g.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(ln, format!("invalid {what} value `{tok}`")))?;
                if !v.is_finite() {
                    return Err(err(ln, format!("non-finite {what} value `{tok}`")));
                }
                g.push(v);
            }
            let found = g.len() - before;
            if found != width {
                return Err(err(
                    ln,
                    format!("expected {width} {what} values, found {found} (dimension mismatch)"),
                ));
            }
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "unexpected data after albedo rows (dimension mismatch)".into()));
    }
    let [depth, albedo] = grids;
    DepthMapScene::new(width, height, depth, albedo, fov_rad).map_err(|source| IoError::Invalid {
        path: path.to_owned(),
        source,
    })
}

pub fn read_depth_map(path: &Path) -> Result<DepthMapScene, IoError> {
    parse_depth_map(&read_text(path)?, path)
}

pub fn write_depth_map(path: &Path, scene: &DepthMapScene) -> Result<(), IoError> {
    write_text(path, &depth_map_to_string(scene))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn minimal_transient_round_trips() {
        let f = HistogramFile::transient(TransientHistogram::new(vec![0.25], 1e-9).unwrap());
        let text = f.to_json();
        assert_eq!(HistogramFile::from_json(&text, p()).unwrap(), f);
    }

    #[test]
    fn integer_valued_flux_stays_transient() {
        let f = HistogramFile::transient(TransientHistogram::new(vec![0.0, 2.0], 1e-9).unwrap());
        let back = HistogramFile::from_json(&f.to_json(), p()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn spad_round_trips() {
        let h = SpadHistogram::new(vec![3, 1, 6], 10, AcquisitionMode::Synchronous).unwrap();
        let f = HistogramFile::spad(h, 1e-9).with_metadata(Metadata {
            seed: Some(9),
            ..Default::default()
        });
        let text = f.to_json();
        assert!(text.contains("\"mode\": \"synchronous\""));
        assert_eq!(HistogramFile::from_json(&text, p()).unwrap(), f);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = r#"{"schema_version":1,"kind":"transient","bin_time_s":1e-9,"n_bins":2,"values":[1.0]}"#;
        let e = HistogramFile::from_json(bad, p()).unwrap_err().to_string();
        assert!(e.contains("`values`"), "{e}");
        let bad = r#"{"schema_version":2,"kind":"transient","bin_time_s":1e-9,"n_bins":1,"values":[1.0]}"#;
        assert!(HistogramFile::from_json(bad, p()).unwrap_err().to_string().contains("schema_version"));
        let bad = r#"{"schema_version":1,"kind":"spad","bin_time_s":1e-9,"n_bins":1,"cycles":2,"mode":"synchronous","values":[1.5,0.5]}"#;
        assert!(HistogramFile::from_json(bad, p()).is_err());
        let bad = r#"{"schema_version":1,"kind":"spad","bin_time_s":1e-9,"n_bins":2,"cycles":2,"mode":"synchronous","values":[1,1]}"#;
        assert!(HistogramFile::from_json(bad, p()).unwrap_err().to_string().contains("expected 3"));
        let bad = r#"{"schema_version":1,"kind":"transient","bin_time_s":1e-9,"n_bins":1,"values":[1.0],"extra":1}"#;
        let e = HistogramFile::from_json(bad, p()).unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn depth_map_round_trips() {
        let scene = DepthMapScene::new(3, 2, vec![1.0, 1.5, 2.25, 3.0, 0.1, 7.0], vec![0.0, 0.5, 1.0, 0.3, 0.2, 0.1], 0.35).unwrap();
        let text = depth_map_to_string(&scene);
        assert!(text.starts_with("TKDM 1 3 2 0.35\n"));
        let back = parse_depth_map(&text, p()).unwrap();
        assert_eq!(back, scene);
        assert_eq!(depth_map_to_string(&back), text);
    }

    #[test]
    fn depth_map_dimension_mismatch() {
        let text = "TKDM 1 2 2 0.35\n1 1\n1 1\n1 1\n";
        let e = parse_depth_map(text, p()).unwrap_err().to_string();
        assert!(e.contains("dimension mismatch"), "{e}");
        let text = "TKDM 1 2 2 0.35\n1 1\n1\n1 1\n1 1\n";
        let e = parse_depth_map(text, p()).unwrap_err().to_string();
        assert!(e.contains("mem:3:"), "{e}");
        let text = "TKDM 1 1 1 0.35\n1\n1\n1\n";
        assert!(parse_depth_map(text, p()).is_err());
    }

    #[test]
    fn depth_map_rejects_bad_values() {
        assert!(parse_depth_map("TKDM 1 1 1 0.35\nNaN\n1\n", p()).is_err());
        assert!(parse_depth_map("TKDM 1 1 1 0.35\n-1\n1\n", p()).is_err());
        assert!(parse_depth_map("TKDM 1 1 1 0.35\n1\n1.5\n", p()).is_err());
        assert!(parse_depth_map("TKDX 1 1 1 0.35\n1\n1\n", p()).is_err());
    }
}
