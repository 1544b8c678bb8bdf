//! JSON instance files and CSV result tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::model::{Matrix, PortfolioInstance, Vector};

/// On-disk form of a [`PortfolioInstance`]: mean returns `mu`, upper bounds
/// `u` and the covariance `Q` by rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    pub kappa: usize,
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InstanceFile {
    pub fn from_instance(inst: &PortfolioInstance, seed: Option<u64>) -> Self {
        let cov = inst.cov();
        Self {
            n: inst.n(),
            kappa: inst.kappa(),
            mu: inst.mean().iter().copied().collect(),
            u: inst.ubound().iter().copied().collect(),
            q: (0..inst.n())
                .map(|i| cov.row(i).iter().copied().collect())
                .collect(),
            seed,
        }
    }

    pub fn to_instance(&self) -> Result<PortfolioInstance> {
        let n = self.n;
        if self.q.len() != n || self.q.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInstance(format!(
                "covariance must be {n}x{n}"
            )));
        }
        if self.mu.len() != n || self.u.len() != n {
            return Err(Error::InvalidInstance(format!(
                "mu and u must have length {n}"
            )));
        }
        let cov = Matrix::from_row_iterator(n, n, self.q.iter().flatten().copied());
        PortfolioInstance::new(
            Vector::from_column_slice(&self.mu),
            cov,
            Vector::from_column_slice(&self.u),
            self.kappa,
        )
    }
}

fn sci_array(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    format!("[{}]", items.join(", "))
}

impl InstanceFile {
    /// JSON text with every real in scientific notation at 17 significant
    /// digits, enough to read back the same doubles.
    pub fn to_json(&self) -> String {
        let rows: Vec<String> = self
            .q
            .iter()
            .map(|r| format!("    {}", sci_array(r)))
            .collect();
        let mut text = format!("{{\n  \"n\": {},\n  \"kappa\": {},\n", self.n, self.kappa);
        if let Some(seed) = self.seed {
            text += &format!("  \"seed\": {seed},\n");
        }
        text += &format!(
            "  \"mu\": {},\n  \"u\": {},\n  \"Q\": [\n{}\n  ]\n}}\n",
            sci_array(&self.mu),
            sci_array(&self.u),
            rows.join(",\n")
        );
        text
    }
}

pub fn write_instance(path: &Path, inst: &PortfolioInstance, seed: Option<u64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(InstanceFile::from_instance(inst, seed).to_json().as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<PortfolioInstance> {
    let file: InstanceFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    file.to_instance()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<RunRecord>, _>>()
        .map_err(csv_error)
}

pub fn save_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), records)
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    read_records(BufReader::new(File::open(path)?))
}
