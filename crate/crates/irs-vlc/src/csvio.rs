//! CSV output and input.
//!
//! Every file starts with one `#` line carrying the tool version, the
//! SHA-256 of the resolved configuration and the units of the columns,
//! followed by an RFC 4180 table. Floats are written with 17 significant
//! digits so they round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use irs_vlc_core::Assignment;

use crate::error::{CliError, Result};

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Writer for one output table.
pub struct Table {
    inner: csv::Writer<BufWriter<File>>,
}

impl Table {
    /// Creates `path`, writes the preamble and the header row.
    pub fn create(path: &Path, config_hash: &str, units: &str, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# irs-vlc {} config_sha256={config_hash} units: {units}", env!("CARGO_PKG_VERSION"))?;
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        if !header.is_empty() {
            inner.write_record(header)?;
        }
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).has_headers(has_headers).from_reader(file))
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        t => t.parse().map_err(|_| CliError::Csv(format!("{}: `{t}` is not a number", path.display()))),
    }
}

/// Writes a matrix row-major, one CSV row per matrix row, no header row.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, config_hash: &str, units: &str) -> Result<()> {
    let mut t = Table::create(path, config_hash, &format!("{units}; {}x{} row-major", m.nrows(), m.ncols()), &[])?;
    for i in 0..m.nrows() {
        t.row(m.row(i).iter().map(|x| fmt_f64(*x)))?;
    }
    t.finish()
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader(path, false)?.records() {
        let rec = rec?;
        let row = rec.iter().map(|s| parse_f64(s, path)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::Csv(format!("{}: ragged rows", path.display())));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

/// Writes one `(unit, led, pd)` row per IRS unit, 1-based, 0 when unassigned.
pub fn write_assignment(path: &Path, a: &Assignment, config_hash: &str) -> Result<()> {
    let mut t = Table::create(path, config_hash, "1-based indices, 0 = unassigned", &["unit", "led", "pd"])?;
    for n in 0..a.n_irs() {
        let (led, pd) = a.unit_links(n);
        let idx = |x: Option<usize>| x.map_or(0, |v| v + 1).to_string();
        t.row([(n + 1).to_string(), idx(led), idx(pd)])?;
    }
    t.finish()
}

/// Reads and validates an assignment for `n_t` LEDs and `n_r` PDs.
pub fn read_assignment(path: &Path, n_t: usize, n_r: usize) -> Result<Assignment> {
    let mut entries = Vec::new();
    for rec in reader(path, true)?.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(CliError::Csv(format!("{}: expected unit,led,pd", path.display())));
        }
        let field = |i: usize| -> Result<usize> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| CliError::Csv(format!("{}: `{}` is not an index", path.display(), &rec[i])))
        };
        entries.push((field(0)?, field(1)?, field(2)?));
    }
    let n = entries.len();
    let mut a = Assignment::empty(n, n_t, n_r);
    let mut seen = vec![false; n];
    for (unit, led, pd) in entries {
        if unit == 0 || unit > n || seen[unit - 1] {
            return Err(CliError::Csv(format!("{}: unit {unit} out of range or repeated", path.display())));
        }
        seen[unit - 1] = true;
        if led > n_t || pd > n_r {
            return Err(CliError::Csv(format!(
                "{}: unit {unit} refers to LED {led} / PD {pd} outside 1..={n_t} / 1..={n_r}",
                path.display()
            )));
        }
        if (led == 0) != (pd == 0) {
            return Err(CliError::Csv(format!("{}: unit {unit} is linked on one side only", path.display())));
        }
        if led > 0 {
            a.g[(unit - 1, led - 1)] = 1.0;
            a.f[(unit - 1, pd - 1)] = 1.0;
        }
    }
    let bad = a.validate();
    if !bad.is_empty() {
        return Err(CliError::Csv(irs_vlc_core::association::describe_violations(&bad)));
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        let x = 0.1f64 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s, "3.0000000000000004e-1");
        assert_eq!(s.parse::<f64>().unwrap(), x);
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn matrices_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.0 / 3.0, 2.5e-300, -7.0, 1e-5, 0.0, f64::MAX]);
        write_matrix(&p, &m, "abc", "gain").unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# irs-vlc "));
        assert!(text.contains("config_sha256=abc"));
    }

    #[test]
    fn assignments_round_trip_and_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let a = Assignment::from_pairs(&[(0, 1), (2, 0), (1, 1)], 3, 2).unwrap();
        write_assignment(&p, &a, "h").unwrap();
        assert_eq!(read_assignment(&p, 3, 2).unwrap(), a);
        assert!(read_assignment(&p, 2, 2).is_err());

        std::fs::write(&p, "unit,led,pd\n1,0,0\n2,1,2\n").unwrap();
        let b = read_assignment(&p, 1, 2).unwrap();
        assert_eq!(b.unit_links(0), (None, None));
        assert_eq!(b.unit_links(1), (Some(0), Some(1)));
        for bad in
            ["unit,led,pd\n1,1,0\n", "unit,led,pd\n2,1,1\n", "unit,led,pd\n1,1,1\n1,1,1\n", "unit,led,pd\n1,x,1\n"]
        {
            std::fs::write(&p, bad).unwrap();
            assert!(read_assignment(&p, 1, 2).is_err(), "{bad}");
        }
    }
}
