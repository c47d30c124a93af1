//! Field snapshot files.
//!
//! Binary layout, all little-endian:
//!
//! | bytes | content            |
//! |-------|--------------------|
//! | 6     | magic `PDFLD1`     |
//! | 8     | `N` as `i64`       |
//! | 8     | `a` as `f64`       |
//! | 8     | `b` as `f64`       |
//! | 8     | time as `f64`      |
//! | 8 N^2 | values, row-major  |
//!
//! The CSV export has header `x1,x2,u` and one row per point with 17
//! significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PeridynError, Result};
use crate::grid::{Field, Grid2D};

pub const MAGIC: &[u8; 6] = b"PDFLD1";

pub fn write_field<W: Write>(mut w: W, field: &Field, time: f64) -> Result<()> {
    let g = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&(g.n_points() as i64).to_le_bytes())?;
    w.write_all(&g.a().to_le_bytes())?;
    w.write_all(&g.b().to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Returns the field and its time stamp.
pub fn read_field<R: Read>(mut r: R) -> Result<(Field, f64)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| PeridynError::Format("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(PeridynError::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)
            .map_err(|_| PeridynError::Format("truncated header".into()))?;
        Ok(word)
    };
    let n = i64::from_le_bytes(next(&mut r)?);
    let a = f64::from_le_bytes(next(&mut r)?);
    let b = f64::from_le_bytes(next(&mut r)?);
    let time = f64::from_le_bytes(next(&mut r)?);
    if n < 4 || n > 1 << 16 {
        return Err(PeridynError::Format(format!("implausible point count {n}")));
    }
    let grid = Grid2D::new(a, b, n as usize)?;
    let mut bytes = vec![0u8; grid.len() * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| PeridynError::Format("truncated value block".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(PeridynError::Format("trailing bytes after value block".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((Field::from_values(grid, values)?, time))
}

pub fn save_field(path: impl AsRef<Path>, field: &Field, time: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field, time)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<(Field, f64)> {
    read_field(BufReader::new(File::open(path)?))
}

pub fn write_field_csv<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let g = field.grid();
    writeln!(w, "x1,x2,u")?;
    for i in 0..g.n_points() {
        for j in 0..g.n_points() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                g.coord(i),
                g.coord(j),
                field.get(i, j)
            )?;
        }
    }
    Ok(())
}

pub fn save_field_csv(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field_csv(&mut w, field)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Field {
        let g = Grid2D::new(-0.2, 1.2, 7).unwrap();
        Field::from_fn(g, |x, y| (3.0 * x).sin() * y + 1e-300)
    }

    #[test]
    fn header_layout() {
        let f = sample();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, 2.5).unwrap();
        assert_eq!(&buf[..6], b"PDFLD1");
        assert_eq!(i64::from_le_bytes(buf[6..14].try_into().unwrap()), 7);
        assert_eq!(f64::from_le_bytes(buf[14..22].try_into().unwrap()), -0.2);
        assert_eq!(f64::from_le_bytes(buf[22..30].try_into().unwrap()), 1.2);
        assert_eq!(f64::from_le_bytes(buf[30..38].try_into().unwrap()), 2.5);
        assert_eq!(buf.len(), 38 + 8 * 49);
        assert_eq!(
            f64::from_le_bytes(buf[38 + 8..38 + 16].try_into().unwrap()),
            f.get(0, 1)
        );
    }

    #[test]
    fn rejects_malformed_input() {
        let f = sample();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, 0.0).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(&bad[..]), Err(PeridynError::Format(_))));
        assert!(read_field(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_field(&long[..]).is_err());
        assert!(read_field(&buf[..10]).is_err());
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let g = Grid2D::new(0.0, 1.0, 4).unwrap();
        let f = Field::from_fn(g, |x, y| x + y / 3.0);
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,u");
        assert_eq!(lines.len(), 17);
        let cols: Vec<f64> = lines[2].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols, vec![0.0, 0.25, f.get(0, 1)]);
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.pdfld");
        let f = sample();
        save_field(&path, &f, 1.0).unwrap();
        let (back, t) = load_field(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(t, 1.0);
        save_field_csv(dir.path().join("u.csv"), &f).unwrap();
    }
}
