use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Maps `v` in `[lo, hi]` to a byte; values outside are clamped.
fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    (t * 255.0).round() as u8
}

/// Binary 8-bit PGM of a `(rows, cols)` grid, with `lo` black and `hi` white.
pub fn pgm_bytes(grid: &Tensor, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let [rows, cols] = grid.shape() else {
        return Err(Error::ShapeMismatch(format!("raster needs a 2-D grid, got {:?}", grid.shape())));
    };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(grid.data().iter().map(|&v| quantize(v, lo, hi)));
    Ok(out)
}

pub fn write_pgm(path: &Path, grid: &Tensor, lo: f64, hi: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&pgm_bytes(grid, lo, hi)?)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_pixels() {
        let g = Tensor::new(vec![2, 3], vec![0.0, 5.0, 10.0, -1.0, 11.0, 2.5]).unwrap();
        let b = pgm_bytes(&g, 0.0, 10.0).unwrap();
        let head = b"P5\n3 2\n255\n";
        assert_eq!(&b[..head.len()], head);
        assert_eq!(&b[head.len()..], &[0, 128, 255, 0, 255, 64]);
    }
}
