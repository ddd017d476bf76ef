//! On-disk formats: a little-endian binary container for gridded fields and a
//! deterministic CSV writer for tabular experiment output.
//!
//! Binary layout (all little-endian): an 8-byte magic `ACFIELD1`, `dim` as
//! u32, `n` (cells per axis) as u32, `h` (cell width) as f64, 8 reserved zero
//! bytes, then `n^dim` f64 cell values in row-major order. The 32-byte header
//! makes files self-describing enough to validate against the grid they are
//! loaded into.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ACFIELD1";
const HEADER_LEN: usize = 32;

/// Write a scalar field in the binary container format.
pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let g = field.grid;
    w.write_all(MAGIC)?;
    w.write_all(&(g.dim as u32).to_le_bytes())?;
    w.write_all(&(g.n as u32).to_le_bytes())?;
    w.write_all(&g.h.to_le_bytes())?;
    w.write_all(&[0u8; 8])?;
    for &v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a field written by [`write_field`], validating the header against the
/// expected grid geometry.
pub fn read_field(path: &Path, grid: GridSpec) -> Result<ScalarField> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::MalformedField("file shorter than the 32-byte header".into()))?;
    if &header[0..8] != MAGIC {
        return Err(Error::MalformedField("bad magic; not a field container".into()));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let h = f64::from_le_bytes(header[16..24].try_into().unwrap());
    if dim != grid.dim || n != grid.n {
        return Err(Error::MalformedField(format!(
            "geometry mismatch: file is dim {dim}, n {n}; expected dim {}, n {}",
            grid.dim, grid.n
        )));
    }
    if (h - grid.h).abs() > 1e-12 * grid.h {
        return Err(Error::MalformedField(format!(
            "cell width mismatch: file has h {h}, expected {}",
            grid.h
        )));
    }
    let count = grid.cell_count();
    let mut values = vec![0.0f64; count];
    let mut buf = [0u8; 8];
    for v in values.iter_mut() {
        r.read_exact(&mut buf)
            .map_err(|_| Error::MalformedField("file truncated before all cells were read".into()))?;
        *v = f64::from_le_bytes(buf);
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::MalformedField("trailing bytes after the cell data".into()));
    }
    Ok(ScalarField { grid, values })
}

/// Format a float for CSV: shortest representation that round-trips, always
/// with a `.` decimal separator, never locale-dependent.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Deterministic CSV writer: comma separator, `.` decimals, one header line,
/// `\n` line endings regardless of platform.
pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl CsvWriter<BufWriter<std::fs::File>> {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = BufWriter::new(std::fs::File::create(path)?);
        Self::new(file, header)
    }
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> Result<Self> {
        out.write_all(header.join(",").as_bytes())?;
        out.write_all(b"\n")?;
        Ok(CsvWriter { out, columns: header.len() })
    }

    /// Write one row of float cells; the arity must match the header.
    pub fn row(&mut self, cells: &[f64]) -> Result<()> {
        assert_eq!(cells.len(), self.columns, "csv row arity mismatch");
        let line: Vec<String> = cells.iter().map(|&v| fmt_f64(v)).collect();
        self.out.write_all(line.join(",").as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    /// Write one row of preformatted cells (for mixed text/number tables).
    pub fn raw_row(&mut self, cells: &[String]) -> Result<()> {
        assert_eq!(cells.len(), self.columns, "csv row arity mismatch");
        self.out.write_all(cells.join(",").as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read back a CSV written by [`CsvWriter`] as header + float rows
/// (used by tests and the round-trip checks).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(l) => l?.split(',').map(str::to_owned).collect(),
        None => return Err(Error::MalformedField("empty csv".into())),
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| Error::MalformedField(format!("bad csv number: {e}")))?);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn grid() -> GridSpec {
        GridSpec::cube(8, 0.75, 1.0, 1.5, 3.0).unwrap()
    }

    #[test]
    fn field_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.field");
        let g = grid();
        let f = ScalarField::from_fn(g, |x| (x[0] + 0.3 * x[1]).sin() * (-x[2]).exp());
        write_field(&path, &f).unwrap();
        let back = read_field(&path, g).unwrap();
        assert_eq!(f.values, back.values);
    }

    #[test]
    fn header_is_32_bytes_and_self_describing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.field");
        let g = grid();
        write_field(&path, &ScalarField::zeros(g)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + g.cell_count() * 8);
        assert_eq!(&bytes[0..8], b"ACFIELD1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0.75);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.field");
        write_field(&path, &ScalarField::zeros(grid())).unwrap();
        let other = GridSpec::cube(16, 0.75, 1.0, 1.5, 3.0).unwrap();
        assert!(matches!(read_field(&path, other), Err(Error::MalformedField(_))));
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.field");
        let g = grid();
        write_field(&path, &ScalarField::zeros(g)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_field(&path, g).is_err());

        let mut bad = std::fs::read(&path).unwrap();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(read_field(&path, g).is_err());
    }

    #[test]
    fn csv_uses_commas_dots_and_lf() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut w = CsvWriter::create(&path, &["t_seconds", "value"]).unwrap();
        w.row(&[0.5, 1.0 / 3.0]).unwrap();
        w.row(&[1.0, -2.0]).unwrap();
        w.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("t_seconds,value\n0.5,{}\n1.0,-2.0\n", 1.0f64 / 3.0));
        assert!(!text.contains('\r'));
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["t_seconds", "value"]);
        assert_eq!(rows[0][1], 1.0 / 3.0);
    }

    #[test]
    fn float_formatting_round_trips() {
        for &v in &[0.1, 1.0 / 3.0, 1e-300, -7.25e17, 0.0, 123456.789012345] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            assert!(!s.contains(','));
        }
    }
}
