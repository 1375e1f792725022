//! Data model and file ingestion for right-censored survival outcomes paired
//! with discretely observed functional covariates.
//!
//! Two CSV files describe a dataset: a subjects table
//! (`id,time,status,<scalar columns...>`) and a long-format functional table
//! (`id,s,x`) holding each subject's sampled curve on its own, possibly
//! irregular, strictly increasing grid.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path} row {row}: cannot parse `{value}` as a number")]
    BadNumber {
        path: String,
        row: usize,
        value: String,
    },
    #[error("functional file references id `{id}` absent from the subjects file")]
    UnknownFunctionalId { id: String },
    #[error("subject `{id}`: time must be positive, got {time}")]
    NonPositiveTime { id: String, time: f64 },
    #[error("subject `{id}`: status must be 0 or 1, got `{value}`")]
    BadStatus { id: String, value: String },
    #[error("subject `{id}`: grid is not strictly increasing at s = {s}")]
    NonIncreasingGrid { id: String, s: f64 },
    #[error("subject `{id}`: needs at least 2 functional observations, got {count}")]
    TooFewPoints { id: String, count: usize },
    #[error("subject `{id}`: non-finite functional value at s = {s}")]
    NonFiniteValue { id: String, s: f64 },
    #[error("duplicate subject id `{id}` in subjects file")]
    DuplicateId { id: String },
    #[error("dataset has no subjects")]
    Empty,
    #[error("dataset has no observed events; all subjects are censored")]
    NoEvents,
    #[error("functional domain has zero length")]
    ZeroLengthDomain,
    #[error("centering requires a grid shared by all subjects; subject `{id}` differs")]
    UnsharedGrid { id: String },
}

/// One study participant: outcome, scalar covariates, and a sampled curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Observed time Y = min(T, C); must be positive.
    pub time: f64,
    /// True when the event was observed, false when right-censored.
    pub event: bool,
    pub scalars: Vec<f64>,
    /// Strictly increasing sampling locations of the functional covariate.
    pub grid: Vec<f64>,
    /// Functional covariate values at `grid`, same length.
    pub values: Vec<f64>,
}

impl Subject {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.time > 0.0) {
            return Err(DataError::NonPositiveTime {
                id: self.id.clone(),
                time: self.time,
            });
        }
        if self.grid.len() < 2 {
            return Err(DataError::TooFewPoints {
                id: self.id.clone(),
                count: self.grid.len(),
            });
        }
        debug_assert_eq!(self.grid.len(), self.values.len());
        for w in self.grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(DataError::NonIncreasingGrid {
                    id: self.id.clone(),
                    s: w[1],
                });
            }
        }
        for (s, v) in self.grid.iter().zip(&self.values) {
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    id: self.id.clone(),
                    s: *s,
                });
            }
        }
        Ok(())
    }
}

/// A complete right-censored functional survival dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub subjects: Vec<Subject>,
    pub scalar_names: Vec<String>,
    /// Closed interval covering every subject grid.
    pub domain: (f64, f64),
    /// Original domain before normalization onto [0, 1], if normalized.
    pub source_domain: Option<(f64, f64)>,
}

impl SurvivalDataset {
    /// Assemble and validate a dataset from parts.
    pub fn new(subjects: Vec<Subject>, scalar_names: Vec<String>) -> Result<Self, DataError> {
        if subjects.is_empty() {
            return Err(DataError::Empty);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &subjects {
            s.validate()?;
            lo = lo.min(s.grid[0]);
            hi = hi.max(*s.grid.last().unwrap());
        }
        if !subjects.iter().any(|s| s.event) {
            return Err(DataError::NoEvents);
        }
        Ok(SurvivalDataset {
            subjects,
            scalar_names,
            domain: (lo, hi),
            source_domain: None,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn num_scalars(&self) -> usize {
        self.scalar_names.len()
    }

    /// Affinely map every grid onto [0, 1], retaining the original domain so
    /// coefficient functions can be reported on the input scale. Idempotent.
    pub fn normalize_domain(&self) -> Result<SurvivalDataset, DataError> {
        let (lo, hi) = self.domain;
        let width = hi - lo;
        if !(width > 0.0) {
            return Err(DataError::ZeroLengthDomain);
        }
        if lo == 0.0 && hi == 1.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for subject in &mut out.subjects {
            for s in &mut subject.grid {
                *s = ((*s - lo) / width).clamp(0.0, 1.0);
            }
        }
        out.domain = (0.0, 1.0);
        out.source_domain = Some(self.source_domain.unwrap_or((lo, hi)));
        Ok(out)
    }

    /// Subtract the pointwise mean curve from every subject. Requires a grid
    /// shared by all subjects; returns the mean curve that was removed.
    pub fn center_functional(&self) -> Result<(SurvivalDataset, Vec<f64>), DataError> {
        let reference = &self.subjects[0].grid;
        for s in &self.subjects {
            let shared = s.grid.len() == reference.len()
                && s.grid
                    .iter()
                    .zip(reference)
                    .all(|(a, b)| (a - b).abs() <= 1e-9);
            if !shared {
                return Err(DataError::UnsharedGrid { id: s.id.clone() });
            }
        }
        let n = self.subjects.len() as f64;
        let mut mean = vec![0.0; reference.len()];
        for s in &self.subjects {
            for (m, v) in mean.iter_mut().zip(&s.values) {
                *m += v / n;
            }
        }
        let mut out = self.clone();
        for s in &mut out.subjects {
            for (v, m) in s.values.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        Ok((out, mean))
    }
}

fn parse_f64(raw: &str, path: &str, row: usize) -> Result<f64, DataError> {
    raw.trim().parse::<f64>().map_err(|_| DataError::BadNumber {
        path: path.to_string(),
        row,
        value: raw.to_string(),
    })
}

/// Load a dataset from a subjects CSV (`id,time,status,z...`) and a
/// long-format functional CSV (`id,s,x`).
pub fn load_dataset(
    subjects_path: impl AsRef<Path>,
    functional_path: impl AsRef<Path>,
) -> Result<SurvivalDataset, DataError> {
    let spath = subjects_path.as_ref().display().to_string();
    let fpath = functional_path.as_ref().display().to_string();
    let csv_err = |path: &str| {
        let path = path.to_string();
        move |e: csv::Error| DataError::Csv {
            path,
            source: e,
        }
    };

    let mut reader = csv::Reader::from_path(subjects_path.as_ref()).map_err(csv_err(&spath))?;
    let headers = reader.headers().map_err(csv_err(&spath))?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn {
                path: spath.clone(),
                column: name.to_string(),
            })
    };
    let id_col = col("id")?;
    let time_col = col("time")?;
    let status_col = col("status")?;
    let scalar_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_col && i != time_col && i != status_col)
        .collect();
    let scalar_names: Vec<String> = scalar_cols
        .iter()
        .map(|&i| headers[i].trim().to_string())
        .collect();

    // Subject order in the file is preserved; the map only backs id lookup.
    let mut order: Vec<String> = Vec::new();
    let mut table: BTreeMap<String, (f64, bool, Vec<f64>)> = BTreeMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(&spath))?;
        let row = row_idx + 2; // 1-based, after the header
        let id = record[id_col].trim().to_string();
        if table.contains_key(&id) {
            return Err(DataError::DuplicateId { id });
        }
        let time = parse_f64(&record[time_col], &spath, row)?;
        let event = match record[status_col].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::BadStatus {
                    id,
                    value: other.to_string(),
                })
            }
        };
        let mut scalars = Vec::with_capacity(scalar_cols.len());
        for &c in &scalar_cols {
            scalars.push(parse_f64(&record[c], &spath, row)?);
        }
        order.push(id.clone());
        table.insert(id, (time, event, scalars));
    }

    let mut freader = csv::Reader::from_path(functional_path.as_ref()).map_err(csv_err(&fpath))?;
    let fheaders = freader.headers().map_err(csv_err(&fpath))?.clone();
    let fcol = |name: &str| -> Result<usize, DataError> {
        fheaders
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn {
                path: fpath.clone(),
                column: name.to_string(),
            })
    };
    let fid = fcol("id")?;
    let fs = fcol("s")?;
    let fx = fcol("x")?;

    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (row_idx, record) in freader.records().enumerate() {
        let record = record.map_err(csv_err(&fpath))?;
        let row = row_idx + 2;
        let id = record[fid].trim().to_string();
        if !table.contains_key(&id) {
            return Err(DataError::UnknownFunctionalId { id });
        }
        let s = parse_f64(&record[fs], &fpath, row)?;
        let x = parse_f64(&record[fx], &fpath, row)?;
        curves.entry(id).or_default().push((s, x));
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let (time, event, scalars) = table.remove(&id).expect("id recorded above");
        let mut rows = curves.remove(&id).unwrap_or_default();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let subject = Subject {
            id,
            time,
            event,
            scalars,
            grid: rows.iter().map(|r| r.0).collect(),
            values: rows.iter().map(|r| r.1).collect(),
        };
        subject.validate()?;
        subjects.push(subject);
    }

    SurvivalDataset::new(subjects, scalar_names)
}

/// Write a dataset back to the two-file CSV layout read by [`load_dataset`].
pub fn write_dataset(
    data: &SurvivalDataset,
    subjects_path: impl AsRef<Path>,
    functional_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let io_err = |path: &str| {
        let path = path.to_string();
        move |e: std::io::Error| DataError::Io { path, source: e }
    };
    let spath = subjects_path.as_ref().display().to_string();
    let fpath = functional_path.as_ref().display().to_string();

    let mut sfile =
        std::fs::File::create(subjects_path.as_ref()).map_err(io_err(&spath))?;
    let mut header = String::from("id,time,status");
    for name in &data.scalar_names {
        header.push(',');
        header.push_str(name);
    }
    writeln!(sfile, "{header}").map_err(io_err(&spath))?;
    for s in &data.subjects {
        let mut line = format!("{},{},{}", s.id, s.time, u8::from(s.event));
        for z in &s.scalars {
            line.push(',');
            line.push_str(&z.to_string());
        }
        writeln!(sfile, "{line}").map_err(io_err(&spath))?;
    }

    let mut ffile =
        std::fs::File::create(functional_path.as_ref()).map_err(io_err(&fpath))?;
    writeln!(ffile, "id,s,x").map_err(io_err(&fpath))?;
    for s in &data.subjects {
        for (g, v) in s.grid.iter().zip(&s.values) {
            writeln!(ffile, "{},{},{}", s.id, g, v).map_err(io_err(&fpath))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &std::path::Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_two_subjects_with_three_points_each() {
        let dir = tempfile::tempdir().unwrap();
        let subj = write_file(
            dir.path(),
            "subjects.csv",
            "id,time,status,age\nA,12.5,1,40\nB,30,0,55\n",
        );
        let func = write_file(
            dir.path(),
            "func.csv",
            "id,s,x\nA,0,1.0\nA,2,1.5\nA,4,0.5\nB,4,2.0\nB,0,-1.0\nB,2,0.0\n",
        );
        let data = load_dataset(&subj, &func).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.scalar_names, vec!["age"]);
        assert_eq!(data.domain, (0.0, 4.0));
        for s in &data.subjects {
            assert_eq!(s.grid.len(), 3);
        }
        // Rows were given out of order for B; the loader sorts by s.
        let b = &data.subjects[1];
        assert_eq!(b.id, "B");
        assert_eq!(b.grid, vec![0.0, 2.0, 4.0]);
        assert_eq!(b.values, vec![-1.0, 0.0, 2.0]);
        assert!(!b.event);
    }

    #[test]
    fn zero_time_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let subj = write_file(dir.path(), "s.csv", "id,time,status\nA,0,1\n");
        let func = write_file(dir.path(), "f.csv", "id,s,x\nA,0,1\nA,1,2\n");
        match load_dataset(&subj, &func) {
            Err(DataError::NonPositiveTime { id, .. }) => assert_eq!(id, "A"),
            other => panic!("expected NonPositiveTime, got {other:?}"),
        }
    }

    #[test]
    fn unknown_functional_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let subj = write_file(dir.path(), "s.csv", "id,time,status\nA,1,1\n");
        let func = write_file(dir.path(), "f.csv", "id,s,x\nA,0,1\nA,1,2\nZ,0,1\n");
        match load_dataset(&subj, &func) {
            Err(DataError::UnknownFunctionalId { id }) => assert_eq!(id, "Z"),
            other => panic!("expected UnknownFunctionalId, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_grid_point_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let subj = write_file(dir.path(), "s.csv", "id,time,status\nA,1,1\n");
        let func = write_file(dir.path(), "f.csv", "id,s,x\nA,0,1\nA,0,2\nA,1,3\n");
        assert!(matches!(
            load_dataset(&subj, &func),
            Err(DataError::NonIncreasingGrid { .. })
        ));
    }

    #[test]
    fn loading_never_drops_subjects() {
        let dir = tempfile::tempdir().unwrap();
        let mut subj = String::from("id,time,status\n");
        let mut func = String::from("id,s,x\n");
        for i in 0..17 {
            subj.push_str(&format!("s{i},{},1\n", 1.0 + i as f64));
            func.push_str(&format!("s{i},0,0.5\ns{i},1,1.5\n"));
        }
        let sp = write_file(dir.path(), "s.csv", &subj);
        let fp = write_file(dir.path(), "f.csv", &func);
        assert_eq!(load_dataset(&sp, &fp).unwrap().len(), 17);
    }

    #[test]
    fn normalize_domain_maps_affinely_and_is_idempotent() {
        let subjects = vec![
            Subject {
                id: "a".into(),
                time: 3.0,
                event: true,
                scalars: vec![],
                grid: vec![0.0, 2.0, 4.0],
                values: vec![1.0, 2.0, 3.0],
            },
            Subject {
                id: "b".into(),
                time: 5.0,
                event: false,
                scalars: vec![],
                grid: vec![1.0, 4.0],
                values: vec![0.0, 1.0],
            },
        ];
        let data = SurvivalDataset::new(subjects, vec![]).unwrap();
        let norm = data.normalize_domain().unwrap();
        assert_eq!(norm.subjects[0].grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(norm.subjects[1].grid, vec![0.25, 1.0]);
        assert_eq!(norm.subjects[0].values, data.subjects[0].values);
        assert_eq!(norm.source_domain, Some((0.0, 4.0)));
        let again = norm.normalize_domain().unwrap();
        assert_eq!(again.subjects[0].grid, norm.subjects[0].grid);
        assert_eq!(again.source_domain, Some((0.0, 4.0)));
    }

    #[test]
    fn normalize_maps_endpoints_exactly() {
        let subjects = vec![Subject {
            id: "a".into(),
            time: 3.0,
            event: true,
            scalars: vec![],
            grid: (0..30).map(|i| 27.0 + i as f64).collect(),
            values: vec![1.0; 30],
        }];
        let data = SurvivalDataset::new(subjects, vec![]).unwrap();
        let norm = data.normalize_domain().unwrap();
        let g = &norm.subjects[0].grid;
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!((g[1] - 1.0 / 29.0).abs() < 1e-15);
    }

    #[test]
    fn already_normalized_dataset_is_unchanged() {
        let subjects = vec![Subject {
            id: "a".into(),
            time: 3.0,
            event: true,
            scalars: vec![],
            grid: vec![0.0, 0.5, 1.0],
            values: vec![1.0, 2.0, 3.0],
        }];
        let data = SurvivalDataset::new(subjects, vec![]).unwrap();
        let norm = data.normalize_domain().unwrap();
        assert_eq!(norm.subjects[0].grid, data.subjects[0].grid);
        assert_eq!(norm.source_domain, None);
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let subj = write_file(
            dir.path(),
            "s.csv",
            "id,time,status,bmi,age\nA,12.5,1,22.5,40\nB,480,0,27,61\n",
        );
        let func = write_file(
            dir.path(),
            "f.csv",
            "id,s,x\nA,0,1.25\nA,0.5,1.5\nB,0,-1\nB,0.5,0\nA,1,0.5\nB,1,2\n",
        );
        let data = load_dataset(&subj, &func).unwrap();
        let s2 = dir.path().join("s2.csv");
        let f2 = dir.path().join("f2.csv");
        write_dataset(&data, &s2, &f2).unwrap();
        let reloaded = load_dataset(&s2, &f2).unwrap();
        assert_eq!(reloaded.scalar_names, data.scalar_names);
        assert_eq!(reloaded.len(), data.len());
        for (a, b) in reloaded.subjects.iter().zip(&data.subjects) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.time, b.time);
            assert_eq!(a.event, b.event);
            assert_eq!(a.scalars, b.scalars);
            assert_eq!(a.grid, b.grid);
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn all_censored_is_rejected() {
        let subjects = vec![Subject {
            id: "a".into(),
            time: 3.0,
            event: false,
            scalars: vec![],
            grid: vec![0.0, 1.0],
            values: vec![1.0, 2.0],
        }];
        assert!(matches!(
            SurvivalDataset::new(subjects, vec![]),
            Err(DataError::NoEvents)
        ));
    }

    #[test]
    fn centering_removes_pointwise_mean() {
        let mk = |id: &str, vals: Vec<f64>| Subject {
            id: id.into(),
            time: 2.0,
            event: true,
            scalars: vec![],
            grid: vec![0.0, 0.5, 1.0],
            values: vals,
        };
        let data = SurvivalDataset::new(
            vec![mk("a", vec![1.0, 2.0, 3.0]), mk("b", vec![3.0, 0.0, 1.0])],
            vec![],
        )
        .unwrap();
        let (centered, mean) = data.center_functional().unwrap();
        assert_eq!(mean, vec![2.0, 1.0, 2.0]);
        assert_eq!(centered.subjects[0].values, vec![-1.0, 1.0, 1.0]);
        assert_eq!(centered.subjects[1].values, vec![1.0, -1.0, -1.0]);
    }
}
