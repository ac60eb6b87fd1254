//! Measure CSV: header `x1,...,xd,weight`, one row per atom. The weight column is
//! optional on read; uniform weights are assumed when it is absent.

use super::DiscreteMeasure;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub fn read_csv(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv_from(file)
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<DiscreteMeasure> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_weight = names.last().is_some_and(|h| h.eq_ignore_ascii_case("weight"));
    let d = if has_weight { names.len() - 1 } else { names.len() };
    if d == 0 {
        return Err(Error::Parse("measure CSV has no coordinate columns".into()));
    }
    for (k, name) in names.iter().take(d).enumerate() {
        if *name != format!("x{}", k + 1) {
            return Err(Error::Parse(format!("unexpected column header '{name}', expected 'x{}'", k + 1)));
        }
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", line + 1, rec.len(), names.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: '{s}': {e}", line + 1)))
        };
        let p = rec.iter().take(d).map(parse).collect::<Result<Vec<f64>>>()?;
        points.push(p);
        if has_weight {
            weights.push(parse(&rec[d])?);
        }
    }
    if points.is_empty() {
        return Err(Error::Empty);
    }
    if has_weight {
        DiscreteMeasure::new(points, weights)
    } else {
        DiscreteMeasure::empirical(points)
    }
}

pub fn write_csv(path: impl AsRef<Path>, m: &DiscreteMeasure) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(std::io::BufWriter::new(file), m)
}

pub fn write_csv_to<W: Write>(writer: W, m: &DiscreteMeasure) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=m.dim()).map(|k| format!("x{k}")).collect();
    header.push("weight".into());
    wtr.write_record(&header)?;
    for (p, w) in m.iter() {
        let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        row.push(w.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{sample, Family, RngSeed};

    #[test]
    fn roundtrip_is_exact() {
        let pts = sample(&Family::UniformBox { lo: -1.0, hi: 3.0, dim: 3 }, 37, RngSeed(1)).unwrap();
        let m = DiscreteMeasure::empirical(pts).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,weight\n"));
        assert_eq!(read_csv_from(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn weight_column_optional() {
        let m = read_csv_from("x1,x2\n0,0\n1,0\n0.5,2\n".as_bytes()).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.weights().iter().all(|&w| w == 1.0 / 3.0));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(read_csv_from("x1,weight\n0,abc\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_csv_from("a,b\n0,1\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(read_csv_from("x1,weight\n".as_bytes()), Err(Error::Empty)));
        assert!(read_csv_from("x1,weight\n0,0.2\n1,0.2\n".as_bytes()).is_err());
    }
}
