//! Dataset and teacher files.
//!
//! * CSV: header `domain_id,label,t_index,f0,…,f{d-1}` plus a JSON sidecar
//!   `{"class_count": C, "dim": d}` sharing the basename.
//! * Grid binary: little-endian `f32` payload (sample, electrode, time
//!   order), JSON sidecar `{"class_count","electrodes","timesteps","count"}`
//!   and a `<base>.index.csv` with `domain_id,label,t_index` per sample.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureLayout, Sample, TeacherRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    GridBinary,
}

impl DataFormat {
    /// `.bin` files are grid binaries, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => DataFormat::GridBinary,
            _ => DataFormat::Csv,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvSidecar {
    class_count: usize,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridSidecar {
    class_count: usize,
    electrodes: usize,
    timesteps: usize,
    count: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn teacher_path(path: &Path) -> PathBuf {
    path.with_extension("teacher.json")
}

fn index_path(path: &Path) -> PathBuf {
    path.with_extension("index.csv")
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

/// Writes `path` (CSV) and its sidecar. Floats use shortest round-trip
/// formatting, so loading returns bitwise-equal features.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let d = dataset.dim();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["domain_id".to_string(), "label".into(), "t_index".into()];
    header.extend((0..d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in dataset.samples() {
        let mut row = vec![
            s.domain_id.to_string(),
            s.label.to_string(),
            s.t_index.to_string(),
        ];
        row.extend(s.features.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &CsvSidecar {
            class_count: dataset.class_count(),
            dim: d,
        },
    )
}

/// Writes a grid dataset as `path` (raw `f32`), sidecar and index CSV.
pub fn save_grid(dataset: &Dataset, path: &Path) -> Result<()> {
    let Some(FeatureLayout::Grid {
        electrodes,
        timesteps,
    }) = dataset.layout()
    else {
        return Err(Error::config("grid-binary output needs grid samples"));
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in dataset.samples() {
        for &v in &s.features {
            out.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let idx = index_path(path);
    let mut w = csv::Writer::from_path(&idx)?;
    w.write_record(["domain_id", "label", "t_index"])?;
    for s in dataset.samples() {
        w.write_record([
            s.domain_id.to_string(),
            s.label.to_string(),
            s.t_index.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&idx, e))?;
    write_json(
        &sidecar_path(path),
        &GridSidecar {
            class_count: dataset.class_count(),
            electrodes,
            timesteps,
            count: dataset.len(),
        },
    )
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::GridBinary => load_grid(path),
    }
}

fn parse_field<F: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<F> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

/// Reads the three index columns shared by both formats.
fn parse_index(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    class_count: usize,
) -> Result<(u32, usize, i64)> {
    let domain = parse_field(path, line, "domain_id", &record[0])?;
    let label: usize = parse_field(path, line, "label", &record[1])?;
    let t_index: i64 = parse_field(path, line, "t_index", &record[2])?;
    if label >= class_count {
        return Err(parse_err(
            path,
            line,
            format!("label {label} not below class_count {class_count}"),
        ));
    }
    if t_index < -1 {
        return Err(parse_err(path, line, format!("t_index {t_index} below -1")));
    }
    Ok((domain, label, t_index))
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header starting {:?}",
                &expected[..expected.len().min(4)]
            ),
        ));
    }
    Ok(())
}

fn finish(path: &Path, samples: Vec<Sample>, class_count: usize) -> Result<Dataset> {
    Dataset::new(samples, class_count).map_err(|e| match e {
        Error::Config(message) => parse_err(path, 0, message),
        other => other,
    })
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let sidecar: CsvSidecar = read_json(&sidecar_path(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 0, format!("{other:?}")),
        })?;
    let mut expected = vec!["domain_id".to_string(), "label".into(), "t_index".into()];
    expected.extend((0..sidecar.dim).map(|i| format!("f{i}")));
    check_header(path, reader.headers()?, &expected)?;

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
        }
        let (domain, label, t_index) = parse_index(path, line, &record, sidecar.class_count)?;
        let features = record
            .iter()
            .skip(3)
            .map(|raw| parse_field::<f64>(path, line, "feature", raw))
            .collect::<Result<Vec<_>>>()?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line, "non-finite feature"));
        }
        samples.push(Sample::flat(features, label, domain, t_index));
    }
    finish(path, samples, sidecar.class_count)
}

fn load_grid(path: &Path) -> Result<Dataset> {
    let sidecar: GridSidecar = read_json(&sidecar_path(path))?;
    let width = sidecar.electrodes * sidecar.timesteps;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != sidecar.count * width * 4 {
        return Err(parse_err(
            path,
            0,
            format!(
                "payload holds {} bytes, sidecar implies {}",
                bytes.len(),
                sidecar.count * width * 4
            ),
        ));
    }
    let idx = index_path(path);
    let mut reader = csv::Reader::from_path(&idx)?;
    check_header(
        &idx,
        reader.headers()?,
        &["domain_id".into(), "label".into(), "t_index".into()],
    )?;
    let mut samples = Vec::with_capacity(sidecar.count);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if i >= sidecar.count {
            return Err(parse_err(&idx, line, "more index rows than samples"));
        }
        let (domain, label, t_index) = parse_index(&idx, line, &record, sidecar.class_count)?;
        let chunk = &bytes[i * width * 4..(i + 1) * width * 4];
        let features = chunk
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        samples.push(Sample {
            features,
            layout: FeatureLayout::Grid {
                electrodes: sidecar.electrodes,
                timesteps: sidecar.timesteps,
            },
            label,
            domain_id: domain,
            t_index,
        });
    }
    if samples.len() != sidecar.count {
        return Err(parse_err(&idx, 0, "fewer index rows than samples"));
    }
    finish(path, samples, sidecar.class_count)
}

pub fn save_teacher(teacher: &TeacherRecord, path: &Path) -> Result<()> {
    write_json(path, teacher)
}

pub fn load_teacher(path: &Path) -> Result<TeacherRecord> {
    read_json(path)
}
