use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Simulator runs: one row per `(t, x)` pair with inputs laid out as
/// `[t_1..t_p, x_1..x_d]` and outputs `f_1..f_q`.
#[derive(Clone, Debug)]
pub struct RunTable {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    p: usize,
}

impl RunTable {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, p: usize) -> Result<Self> {
        let n = inputs.nrows();
        if outputs.nrows() != n {
            return Err(Error::dim(format!("{n} input rows but {} output rows", outputs.nrows())));
        }
        if p == 0 || inputs.ncols() <= p {
            return Err(Error::dim(format!(
                "inputs have {} columns; need p = {p} >= 1 parameter columns and at least one location column",
                inputs.ncols()
            )));
        }
        if outputs.ncols() == 0 {
            return Err(Error::dim("run table needs at least one output column"));
        }
        if n < inputs.ncols() + 1 {
            return Err(Error::Fit(format!(
                "{n} runs is too few for {} input dimensions",
                inputs.ncols()
            )));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Fit("run table contains non-finite values".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for i in 0..n {
            let key: Vec<u64> = inputs.row(i).iter().map(|v| v.to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::Fit(format!("duplicate (t, x) input at row {i}")));
            }
        }
        Ok(Self { inputs, outputs, p })
    }

    /// Evaluates `f` at every combination of `thetas` and `locations`.
    pub fn from_product<F>(thetas: &[Vec<f64>], locations: &DMatrix<f64>, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
    {
        let p = thetas.first().map(Vec::len).unwrap_or(0);
        let d = locations.ncols();
        let n = thetas.len() * locations.nrows();
        let mut inputs = DMatrix::zeros(n, p + d);
        let mut rows = Vec::with_capacity(n);
        let mut r = 0;
        for t in thetas {
            for i in 0..locations.nrows() {
                let x: Vec<f64> = locations.row(i).iter().copied().collect();
                for (k, v) in t.iter().chain(&x).enumerate() {
                    inputs[(r, k)] = *v;
                }
                rows.push(f(t, &x)?);
                r += 1;
            }
        }
        let q = rows.first().map(Vec::len).unwrap_or(0);
        let outputs = DMatrix::from_fn(n, q, |i, k| rows[i][k]);
        Self::new(inputs, outputs, p)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.inputs.ncols() - self.p
    }

    pub fn q(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.inputs.select_rows(rows), self.outputs.select_rows(rows), self.p)
    }

    /// SHA-256 over the little-endian bytes of shape, inputs and outputs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for dim in [self.len(), self.p, self.d(), self.q()] {
            h.update((dim as u64).to_le_bytes());
        }
        for v in self.inputs.iter().chain(self.outputs.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Reads the `t_1..t_p, x_1..x_d, f_1..f_q` CSV layout. Columns are
    /// recognized by prefix, so they may appear in any order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut t_cols = Vec::new();
        let mut x_cols = Vec::new();
        let mut f_cols = Vec::new();
        for (col, name) in headers.iter().enumerate() {
            let (kind, idx) = name
                .split_once('_')
                .and_then(|(k, i)| i.parse::<usize>().ok().map(|i| (k, i)))
                .ok_or_else(|| Error::config(format!("unrecognized run-table column '{name}'")))?;
            match kind {
                "t" => t_cols.push((idx, col)),
                "x" => x_cols.push((idx, col)),
                "f" => f_cols.push((idx, col)),
                _ => return Err(Error::config(format!("unrecognized run-table column '{name}'"))),
            }
        }
        for (label, cols) in [("t", &mut t_cols), ("x", &mut x_cols), ("f", &mut f_cols)] {
            cols.sort();
            let expected: Vec<usize> = (1..=cols.len()).collect();
            let got: Vec<usize> = cols.iter().map(|c| c.0).collect();
            if cols.is_empty() || got != expected {
                return Err(Error::config(format!(
                    "run table needs contiguous {label}_1..{label}_k columns, found {got:?}"
                )));
            }
        }
        let in_cols: Vec<usize> = t_cols.iter().chain(&x_cols).map(|c| c.1).collect();
        let out_cols: Vec<usize> = f_cols.iter().map(|c| c.1).collect();
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::config(format!("bad number in data row {} column {c}", line + 1)))
            };
            for &c in &in_cols {
                ins.push(parse(c)?);
            }
            for &c in &out_cols {
                outs.push(parse(c)?);
            }
        }
        let n = ins.len() / in_cols.len().max(1);
        Self::new(
            DMatrix::from_row_slice(n, in_cols.len(), &ins),
            DMatrix::from_row_slice(n, out_cols.len(), &outs),
            t_cols.len(),
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.p).map(|i| format!("t_{i}")).collect();
        header.extend((1..=self.d()).map(|i| format!("x_{i}")));
        header.extend((1..=self.q()).map(|i| format!("f_{i}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .chain(self.outputs.row(i).iter())
                .map(|v| format!("{v:e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunTable {
        let thetas = vec![vec![0.0], vec![0.5], vec![1.0]];
        let xs = DMatrix::from_column_slice(3, 1, &[0.1, 0.4, 0.9]);
        RunTable::from_product(&thetas, &xs, |t, x| Ok(vec![t[0] * x[0], t[0] + x[0]])).unwrap()
    }

    #[test]
    fn csv_round_trip_preserves_values_and_digest() {
        let table = small();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_1,x_1,f_1,f_2"));
        let back = RunTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.digest(), table.digest());
        assert_eq!((back.p(), back.d(), back.q()), (1, 1, 2));
    }

    #[test]
    fn columns_may_be_permuted() {
        let csv = "f_1,x_1,t_1\n1,0.1,0\n2,0.2,0\n3,0.3,1\n4,0.4,1\n";
        let t = RunTable::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.inputs()[(2, 0)], 1.0);
        assert_eq!(t.inputs()[(2, 1)], 0.3);
        assert_eq!(t.outputs()[(3, 0)], 4.0);
    }

    #[test]
    fn rejects_bad_headers_and_duplicates() {
        assert!(RunTable::read_csv("t_1,x_2,f_1\n0,0,0\n".as_bytes()).is_err());
        assert!(RunTable::read_csv("t_1,y,f_1\n0,0,0\n".as_bytes()).is_err());
        let dup = "t_1,x_1,f_1\n0,0,1\n0,0,1\n1,1,1\n";
        assert!(matches!(RunTable::read_csv(dup.as_bytes()), Err(Error::Fit(_))));
    }
}
