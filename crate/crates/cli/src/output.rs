//! File output: ScalarField CSV and 8-bit grayscale PGM previews.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use umblt_core::grid::ScalarField;

pub fn write_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    field.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<ScalarField> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ScalarField::read_csv(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Binary PGM with the field's range stretched over 0..=255 and the largest
/// `x2` in the top row.
pub fn write_pgm(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let (lo, hi) = (field.min(), field.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            bytes.push((255.0 * (field.at(i, j) - lo) / span).round() as u8);
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use umblt_core::grid::Grid2D;

    #[test]
    fn pgm_header_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::new(3, 2, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let f = ScalarField::from_fn(g, |_, y| y);
        let path = dir.path().join("f.pgm");
        write_pgm(&path, &f).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[255, 255, 255, 0, 0, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::square(4, 0.0, 0.2).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x * 3.0 - y);
        let path = dir.path().join("f.csv");
        write_csv(&path, &f).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.grid(), f.grid());
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}
