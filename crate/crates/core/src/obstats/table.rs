//! Long-form measurement table: one total-volume record per
//! (subject, observer, repeat, modality), plus CSV I/O.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Us2d,
    Us3d,
    Reference,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Us2d => write!(f, "us2d"),
            Modality::Us3d => write!(f, "us3d"),
            Modality::Reference => write!(f, "reference"),
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "us2d" => Ok(Modality::Us2d),
            "us3d" => Ok(Modality::Us3d),
            "reference" => Ok(Modality::Reference),
            other => Err(Error::Data(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub subject: String,
    pub observer: u32,
    pub repeat: u32,
    pub modality: Modality,
    pub volume_ml: f64,
}

pub const MEASUREMENT_CSV_HEADER: &str = "subject,observer,repeat,modality,volume_ml";

/// Immutable collection of measurements with unique
/// (subject, observer, repeat, modality) keys and positive volumes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementTable {
    records: Vec<Measurement>,
}

impl MeasurementTable {
    pub fn new(records: Vec<Measurement>) -> Result<Self> {
        let mut keys = HashSet::with_capacity(records.len());
        for r in &records {
            if !(r.volume_ml > 0.0) {
                return Err(Error::Data(format!(
                    "volume must be positive: {} observer {} repeat {} {} = {}",
                    r.subject, r.observer, r.repeat, r.modality, r.volume_ml
                )));
            }
            if !keys.insert((r.subject.clone(), r.observer, r.repeat, r.modality)) {
                return Err(Error::Data(format!(
                    "duplicate key ({}, observer {}, repeat {}, {})",
                    r.subject, r.observer, r.repeat, r.modality
                )));
            }
        }
        Ok(MeasurementTable { records })
    }

    pub fn records(&self) -> &[Measurement] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.subject.clone()) {
                out.push(r.subject.clone());
            }
        }
        out
    }

    /// Observer ids, ascending.
    pub fn observers(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .records
            .iter()
            .map(|r| r.observer)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn volume(&self, subject: &str, observer: u32, repeat: u32, modality: Modality) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.subject == subject && r.observer == observer && r.repeat == repeat && r.modality == modality)
            .map(|r| r.volume_ml)
    }

    /// All repeat volumes for one cell, ordered by repeat index.
    pub fn repeat_volumes(&self, subject: &str, observer: u32, modality: Modality) -> Vec<f64> {
        let mut rows: Vec<(u32, f64)> = self
            .records
            .iter()
            .filter(|r| r.subject == subject && r.observer == observer && r.modality == modality)
            .map(|r| (r.repeat, r.volume_ml))
            .collect();
        rows.sort_unstable_by_key(|(rep, _)| *rep);
        rows.into_iter().map(|(_, v)| v).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MEASUREMENT_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.subject, r.observer, r.repeat, r.modality, r.volume_ml
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn from_csv_str(text: &str, path: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MEASUREMENT_CSV_HEADER => {}
            Some((_, h)) => {
                return Err(Error::format(
                    path,
                    Some(1),
                    format!("expected header {MEASUREMENT_CSV_HEADER:?}, got {h:?}"),
                ))
            }
            None => return Err(Error::format(path, Some(1), "empty table".to_string())),
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::format(
                    path,
                    Some(line_no),
                    format!("expected 5 fields, got {}", cols.len()),
                ));
            }
            let observer: u32 = cols[1]
                .trim()
                .parse()
                .map_err(|_| Error::format(path, Some(line_no), format!("bad observer {:?}", cols[1])))?;
            let repeat: u32 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::format(path, Some(line_no), format!("bad repeat {:?}", cols[2])))?;
            let modality: Modality = cols[3]
                .trim()
                .parse()
                .map_err(|e: Error| Error::format(path, Some(line_no), e.to_string()))?;
            let volume_ml: f64 = cols[4]
                .trim()
                .parse()
                .map_err(|_| Error::format(path, Some(line_no), format!("bad volume {:?}", cols[4])))?;
            records.push(Measurement {
                subject: cols[0].trim().to_string(),
                observer,
                repeat,
                modality,
                volume_ml,
            });
        }
        MeasurementTable::new(records).map_err(|e| Error::format(path, None, e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }
}

/// Reference volumes: `subject,volume_ml` CSV.
pub fn write_reference_csv(reference: &[(String, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("subject,volume_ml\n");
    for (subject, v) in reference {
        out.push_str(&format!("{subject},{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_reference_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "subject,volume_ml" => {}
        Some((_, h)) => {
            return Err(Error::format(&name, Some(1), format!("expected header \"subject,volume_ml\", got {h:?}")))
        }
        None => return Err(Error::format(&name, Some(1), "empty reference table".to_string())),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 {
            return Err(Error::format(&name, Some(line_no), format!("expected 2 fields, got {}", cols.len())));
        }
        let v: f64 = cols[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(&name, Some(line_no), format!("bad volume {:?}", cols[1])))?;
        out.push((cols[0].trim().to_string(), v));
    }
    Ok(out)
}
