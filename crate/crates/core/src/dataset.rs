//! Expression matrices with identifiers, optional labels, and survival data,
//! plus CSV ingestion.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalRecord {
    pub sample_id: String,
    /// Follow-up duration, non-negative.
    pub time: f64,
    /// `true` when death was observed, `false` when censored.
    pub event: bool,
    pub group: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionDataset {
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    /// `N × d`, one profile per row.
    pub values: Matrix,
    pub labels: Option<Vec<String>>,
    /// Aligned with `sample_ids` when present.
    pub survival: Option<Vec<SurvivalRecord>>,
}

impl ExpressionDataset {
    pub fn new(sample_ids: Vec<String>, feature_ids: Vec<String>, values: Matrix) -> Result<Self> {
        if sample_ids.len() != values.rows() || feature_ids.len() != values.cols() {
            return Err(Error::Input(format!(
                "{} sample ids and {} feature ids for a {}x{} matrix",
                sample_ids.len(),
                feature_ids.len(),
                values.rows(),
                values.cols()
            )));
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Input(format!("duplicate sample id `{id}`")));
            }
        }
        Ok(Self {
            sample_ids,
            feature_ids,
            values,
            labels: None,
            survival: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.values.cols()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Input(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Labels mapped to integers in order of first appearance.
    pub fn label_indices(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut map = HashMap::new();
        Some(
            labels
                .iter()
                .map(|l| {
                    let next = map.len();
                    *map.entry(l.as_str()).or_insert(next)
                })
                .collect(),
        )
    }

    /// Standardizes every feature to zero mean and unit (population)
    /// variance. Constant features are only centered.
    pub fn z_score(&mut self) {
        let means = self.values.column_means();
        let n = self.values.rows().max(1) as f64;
        let mut sds = vec![0.0; self.values.cols()];
        for row in self.values.row_iter() {
            for ((s, v), m) in sds.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut sds {
            *s = (*s / n).sqrt();
        }
        for r in 0..self.values.rows() {
            for ((v, m), s) in self.values.row_mut(r).iter_mut().zip(&means).zip(&sds) {
                *v -= m;
                if *s > 0.0 {
                    *v /= s;
                }
            }
        }
    }

    /// Joins survival records by sample id. Records naming unknown samples
    /// are dropped with a warning; the ids of dropped records are returned.
    /// Samples without a record are removed from the dataset.
    pub fn attach_survival(&mut self, records: Vec<SurvivalRecord>) -> Vec<String> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut slots: Vec<Option<SurvivalRecord>> = vec![None; self.len()];
        let mut unmatched = Vec::new();
        for rec in records {
            match index.get(rec.sample_id.as_str()) {
                Some(&i) => slots[i] = Some(rec),
                None => unmatched.push(rec.sample_id),
            }
        }
        if !unmatched.is_empty() {
            warn!("dropping survival records with unknown sample ids: {}", unmatched.join(", "));
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| slots[i].is_some()).collect();
        if keep.len() < self.len() {
            let missing: Vec<&str> = (0..self.len())
                .filter(|&i| slots[i].is_none())
                .map(|i| self.sample_ids[i].as_str())
                .collect();
            warn!("samples without survival data are excluded: {}", missing.join(", "));
            self.values = self.values.select_rows(&keep);
            self.sample_ids = keep.iter().map(|&i| self.sample_ids[i].clone()).collect();
            if let Some(labels) = &self.labels {
                self.labels = Some(keep.iter().map(|&i| labels[i].clone()).collect());
            }
        }
        self.survival = Some(slots.into_iter().flatten().collect());
        unmatched
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

/// Reads a matrix CSV: header row of feature ids (first cell names the id
/// column), then one row per sample with its id first.
pub fn load_expression_csv(path: impl AsRef<Path>, z_score: bool) -> Result<ExpressionDataset> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Input(format!(
            "{}: header needs a sample id column and at least one feature",
            path.display()
        )));
    }
    let feature_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let d = feature_ids.len();
    let mut sample_ids = Vec::new();
    let mut data = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = r + 2;
        if rec.len() != d + 1 {
            return Err(Error::Input(format!(
                "{}: line {line} has {} fields, expected {}",
                path.display(),
                rec.len(),
                d + 1
            )));
        }
        sample_ids.push(rec[0].to_owned());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Input(format!(
                    "{}: non-numeric value `{cell}` at line {line}, column {} ({})",
                    path.display(),
                    c + 2,
                    feature_ids[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "{}: non-finite value at line {line}, column {}",
                    path.display(),
                    c + 2
                )));
            }
            data.push(v);
        }
    }
    if sample_ids.is_empty() {
        return Err(Error::Input(format!("{}: no samples", path.display())));
    }
    let values = Matrix::from_vec(sample_ids.len(), d, data)?;
    let mut ds = ExpressionDataset::new(sample_ids, feature_ids, values)?;
    if z_score {
        ds.z_score();
    }
    Ok(ds)
}

/// Reads `sample_id,time,event` rows. Group labels start at 0 and are
/// assigned later from a clustering.
pub fn load_survival_csv(path: impl AsRef<Path>) -> Result<Vec<SurvivalRecord>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Input(format!("{}: missing `{name}` column", path.display()))
        })
    };
    let (id_col, time_col, event_col) = (col("sample_id")?, col("time")?, col("event")?);
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = r + 2;
        let field = |c: usize| {
            rec.get(c)
                .ok_or_else(|| Error::Input(format!("{}: line {line} is too short", path.display())))
        };
        let time: f64 = field(time_col)?.parse().map_err(|_| {
            Error::Input(format!("{}: line {line}: time is not a number", path.display()))
        })?;
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::Input(format!(
                "{}: line {line}: time must be a non-negative number, got {time}",
                path.display()
            )));
        }
        let event = match field(event_col)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Input(format!(
                    "{}: line {line}: event must be 0 or 1, got `{other}`",
                    path.display()
                )))
            }
        };
        out.push(SurvivalRecord {
            sample_id: field(id_col)?.to_owned(),
            time,
            event,
            group: 0,
        });
    }
    Ok(out)
}

/// Reads `sample_id,label` rows and aligns them with the dataset.
pub fn load_labels_csv(path: impl AsRef<Path>, dataset: &ExpressionDataset) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() < 2 {
            return Err(Error::Input(format!("{}: expected `sample_id,label` rows", path.display())));
        }
        map.insert(rec[0].to_owned(), rec[1].to_owned());
    }
    dataset
        .sample_ids
        .iter()
        .map(|id| {
            map.get(id)
                .cloned()
                .ok_or_else(|| Error::Input(format!("{}: no label for sample `{id}`", path.display())))
        })
        .collect()
}
