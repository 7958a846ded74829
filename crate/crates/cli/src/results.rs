use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::LabError;

/// One measured quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub variant: String,
    pub split: String,
    /// What the value is about: a prompt, a student, a probe target.
    pub subject: String,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub config_hash: String,
}

/// Rows in insertion order. Nothing is ever removed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
}

/// Fills the shared columns of the rows one experiment produces.
#[derive(Clone, Debug)]
pub struct RowSink {
    pub experiment: String,
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
}

impl RowSink {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        Self { experiment: experiment.into(), config_hash: config_hash.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, variant: &str, split: &str, subject: &str, metric: &str, value: f64, stderr: Option<f64>) {
        self.rows.push(ResultRow {
            experiment: self.experiment.clone(),
            variant: variant.into(),
            split: split.into(),
            subject: subject.into(),
            metric: metric.into(),
            value,
            stderr,
            config_hash: self.config_hash.clone(),
        });
    }
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ResultRow>) {
        self.rows.extend(rows);
    }

    /// Rows matching every given column; `None` matches anything.
    pub fn find<'a>(
        &'a self,
        experiment: Option<&'a str>,
        variant: Option<&'a str>,
        split: Option<&'a str>,
        metric: Option<&'a str>,
    ) -> impl Iterator<Item = &'a ResultRow> + 'a {
        let ok = |want: Option<&str>, have: &str| want.is_none_or(|w| w == have);
        self.rows.iter().filter(move |r| {
            ok(experiment, &r.experiment) && ok(variant, &r.variant) && ok(split, &r.split) && ok(metric, &r.metric)
        })
    }

    /// The single value at these coordinates, if exactly one row matches.
    pub fn value(&self, experiment: &str, variant: &str, split: &str, subject: &str, metric: &str) -> Option<f64> {
        let mut hits = self
            .find(Some(experiment), Some(variant), Some(split), Some(metric))
            .filter(|r| r.subject == subject);
        let first = hits.next()?;
        hits.next().is_none().then_some(first.value)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), LabError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, LabError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Appends to an existing CSV, or creates it.
    pub fn append_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), LabError> {
        let path = path.as_ref();
        let existed = path.exists() && std::fs::metadata(path)?.len() > 0;
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::WriterBuilder::new().has_headers(!existed).from_writer(file);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), LabError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &self.rows)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, LabError> {
        let rows = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Ok(Self { rows })
    }
}

impl FromIterator<ResultRow> for ResultTable {
    fn from_iter<I: IntoIterator<Item = ResultRow>>(iter: I) -> Self {
        Self { rows: iter.into_iter().collect() }
    }
}
