//! Dictionary atoms rendered as a tiled binary PGM (P5) image.

use std::fs;
use std::path::Path;

use kspc_core::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tile value for atoms whose entries are all equal.
pub const CONSTANT_ATOM_GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub atom_rows: usize,
    pub atom_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl GridSpec {
    pub fn capacity(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Tiles plus one-pixel separators between them.
    pub fn width(&self) -> usize {
        self.grid_cols * self.atom_cols + self.grid_cols.saturating_sub(1)
    }

    pub fn height(&self) -> usize {
        self.grid_rows * self.atom_rows + self.grid_rows.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// `P5\n<w> <h>\n255\n` followed by the raw bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Min-max scales one atom to `0..=255`.
pub fn normalize_atom(atom: &[f64]) -> Vec<u8> {
    let (lo, hi) = atom
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![CONSTANT_ATOM_GRAY; atom.len()];
    }
    atom.iter()
        .map(|&v| (255.0 * (v - lo) / range).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Seeded choice of which atoms to show, in display order.
pub fn select_atoms(code_dim: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..code_dim).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(count);
    idx
}

/// Tiles `min(n, capacity)` randomly chosen atoms of `d` row by row.
pub fn render_dictionary_grid(d: &Matrix, grid: GridSpec, seed: u64) -> Result<GrayImage> {
    if grid.atom_rows * grid.atom_cols != d.rows() {
        return Err(Error::Usage(format!(
            "atom shape {}x{} does not match data dimension {}",
            grid.atom_rows,
            grid.atom_cols,
            d.rows()
        )));
    }
    if grid.capacity() == 0 {
        return Err(Error::Usage("grid must have at least one cell".into()));
    }
    let count = grid.capacity().min(d.cols());
    let chosen = select_atoms(d.cols(), count, seed);
    let (width, height) = (grid.width(), grid.height());
    let mut pixels = vec![0u8; width * height];
    for (cell, &atom) in chosen.iter().enumerate() {
        let (gr, gc) = (cell / grid.grid_cols, cell % grid.grid_cols);
        let (y0, x0) = (gr * (grid.atom_rows + 1), gc * (grid.atom_cols + 1));
        let tile = normalize_atom(d.col(atom));
        for r in 0..grid.atom_rows {
            let row = &tile[r * grid.atom_cols..(r + 1) * grid.atom_cols];
            let start = (y0 + r) * width + x0;
            pixels[start..start + grid.atom_cols].copy_from_slice(row);
        }
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

pub fn export_dictionary_grid(
    d: &Matrix,
    grid: GridSpec,
    seed: u64,
    path: &Path,
) -> Result<GrayImage> {
    let img = render_dictionary_grid(d, grid, seed)?;
    fs::write(path, img.to_pgm()).map_err(|e| Error::io(path, e))?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(grid_rows: usize, grid_cols: usize) -> GridSpec {
        GridSpec {
            atom_rows: 2,
            atom_cols: 2,
            grid_rows,
            grid_cols,
        }
    }

    #[test]
    fn constant_atom_is_mid_gray() {
        let d = Matrix::from_rows(&[&[0.3], &[0.3], &[0.3], &[0.3]]).unwrap();
        let img = render_dictionary_grid(&d, spec(1, 1), 0).unwrap();
        assert_eq!(img.pixels, vec![CONSTANT_ATOM_GRAY; 4]);
    }

    #[test]
    fn two_atoms_side_by_side() {
        let d = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0], &[0.5, 0.2], &[0.2, 0.1]]).unwrap();
        let img = render_dictionary_grid(&d, spec(1, 2), 3).unwrap();
        assert_eq!((img.width, img.height), (5, 2));
        // separator column
        assert_eq!((img.get(2, 0), img.get(2, 1)), (0, 0));
        let pgm = img.to_pgm();
        assert!(pgm.starts_with(b"P5\n5 2\n255\n"));
        assert_eq!(pgm.len(), 11 + 10);
    }

    #[test]
    fn identity_atoms_light_one_pixel_each() {
        let img = render_dictionary_grid(&Matrix::identity(4), spec(2, 2), 9).unwrap();
        assert_eq!((img.width, img.height), (5, 5));
        let white = img.pixels.iter().filter(|&&p| p == 255).count();
        assert_eq!(white, 4);
        for (gr, gc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut lit = 0;
            for r in 0..2 {
                for c in 0..2 {
                    if img.get(gc * 3 + c, gr * 3 + r) == 255 {
                        lit += 1;
                    }
                }
            }
            assert_eq!(lit, 1);
        }
    }

    #[test]
    fn dimensions_follow_the_formula() {
        for (ar, ac, gr, gc) in [(28, 28, 10, 10), (3, 5, 1, 7), (1, 1, 4, 1)] {
            let g = GridSpec {
                atom_rows: ar,
                atom_cols: ac,
                grid_rows: gr,
                grid_cols: gc,
            };
            let d = Matrix::identity(ar * ac);
            let img = render_dictionary_grid(&d, g, 0).unwrap();
            assert_eq!(img.width, gc * ac + gc - 1);
            assert_eq!(img.height, gr * ar + gr - 1);
            assert_eq!(img.pixels.len(), img.width * img.height);
        }
    }

    #[test]
    fn shape_mismatch_and_bad_path() {
        let d = Matrix::identity(4);
        let bad = GridSpec {
            atom_rows: 3,
            atom_cols: 2,
            grid_rows: 1,
            grid_cols: 1,
        };
        assert!(render_dictionary_grid(&d, bad, 0).is_err());
        let err = export_dictionary_grid(&d, spec(1, 1), 0, Path::new("/nonexistent/dir/x.pgm"));
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn selection_is_seeded() {
        assert_eq!(select_atoms(50, 10, 7), select_atoms(50, 10, 7));
        assert_ne!(select_atoms(50, 10, 7), select_atoms(50, 10, 8));
        let mut all = select_atoms(5, 5, 1);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }
}
