//! Time-indexed input/output batches and their CSV layout
//! (`k,u_1..u_nu,y_1..y_ny`, nine significant digits).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub inputs: Vec<Vec<T>>,
    pub outputs: Vec<Vec<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, outputs: Vec<Vec<T>>) -> Result<Self> {
        let d = Self { inputs, outputs };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.outputs.len() {
            return Err(Error::dim(self.inputs.len(), self.outputs.len(), "dataset rows"));
        }
        let (nu, ny) = (self.input_dim(), self.output_dim());
        for (u, y) in self.inputs.iter().zip(&self.outputs) {
            if u.len() != nu {
                return Err(Error::dim(nu, u.len(), "dataset input width"));
            }
            if y.len() != ny {
                return Err(Error::dim(ny, y.len(), "dataset output width"));
            }
            if u.iter().chain(y).any(|v| !v.is_finite()) {
                return Err(Error::InvalidData("non-finite dataset entry".into()));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, u: Vec<T>, y: Vec<T>) {
        self.inputs.push(u);
        self.outputs.push(y);
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            inputs: self.inputs[range.clone()].to_vec(),
            outputs: self.outputs[range].to_vec(),
        }
    }

    /// Index where the reference block ends for a contiguous split.
    pub fn split_point(&self, ratio: f64) -> usize {
        ((self.len() as f64) * ratio).round() as usize
    }

    /// Contiguous `(reference, test)` split: the first `ratio` of the rows, then the rest.
    pub fn split(&self, ratio: f64) -> (Self, Self) {
        let at = self.split_point(ratio).min(self.len());
        (self.slice(0..at), self.slice(at..self.len()))
    }

    pub fn to_f64(&self) -> Dataset<f64> {
        let conv = |rows: &Vec<Vec<T>>| {
            rows.iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect()
        };
        Dataset {
            inputs: conv(&self.inputs),
            outputs: conv(&self.outputs),
        }
    }

    pub fn from_f64(d: &Dataset<f64>) -> Self {
        let conv = |rows: &Vec<Vec<f64>>| {
            rows.iter()
                .map(|r| r.iter().map(|&v| T::lit(v)).collect())
                .collect()
        };
        Self {
            inputs: conv(&d.inputs),
            outputs: conv(&d.outputs),
        }
    }
}

/// Rounds to nine significant digits and prints the shortest decimal that
/// reads back to the rounded value.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

pub fn format_row(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(format_sig9).collect()
}

impl Dataset<f64> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.input_dim()).map(|i| format!("u_{i}")));
        header.extend((1..=self.output_dim()).map(|i| format!("y_{i}")));
        wr.write_record(&header).map_err(csv_err)?;
        for (k, (u, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(format_row(u.iter().chain(y).copied()));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, origin: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| Error::parse(origin, e))?.clone();
        let nu = header.iter().filter(|h| h.starts_with("u_")).count();
        let ny = header.iter().filter(|h| h.starts_with("y_")).count();
        if header.get(0) != Some("k") || nu + ny + 1 != header.len() {
            return Err(Error::parse(origin, "expected header `k,u_1..u_nu,y_1..y_ny`"));
        }
        let mut data = Dataset::default();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(origin, e))?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, format!("row {}: {e}", line + 1)))?;
            if vals.len() != nu + ny {
                return Err(Error::parse(origin, format!("row {} has {} values", line + 1, vals.len())));
            }
            data.push(vals[..nu].to_vec(), vals[nu..].to_vec());
        }
        data.validate()?;
        Ok(data)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::persist::write_atomic(path, &buf)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), path)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse("<csv>", e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(0.1234567891234), "0.123456789");
        assert_eq!(format_sig9(-123456.7891234), "-123456.789");
        assert_eq!(format_sig9(1.5e-12), "0.0000000000015");
    }

    #[test]
    fn csv_roundtrip_is_stable() {
        let d = Dataset::new(
            vec![vec![1.0 / 3.0, 2.0], vec![5.5, -1e-7]],
            vec![vec![100.123456789123], vec![0.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,u_1,u_2,y_1\n0,0.333333333,2,100.123457\n"));
        let back = Dataset::read_csv(&buf[..], Path::new("mem")).unwrap();
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_header() {
        let err = Dataset::read_csv("a,b\n1,2\n".as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn split_is_contiguous() {
        let d = Dataset::<f64>::new(
            (0..10).map(|i| vec![i as f64]).collect(),
            (0..10).map(|i| vec![i as f64]).collect(),
        )
        .unwrap();
        let (r, t) = d.split(0.7);
        assert_eq!(r.len(), 7);
        assert_eq!(t.inputs[0], vec![7.0]);
    }
}
