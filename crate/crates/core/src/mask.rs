//! Binary masks, real-valued image grids, and their PGM (P5) encoding.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Binary segmentation mask stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Mask {}x{} ({} fg)", self.height, self.width, self.count())?;
        for row in self.bits.chunks(self.width) {
            let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidMask(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{} cells for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// All-background mask.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                mask.bits[r * width + c] = f(r, c);
            }
        }
        mask
    }

    /// Parses rows of `#`/`1` (foreground) and `.`/`0` (background).
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut bits = Vec::with_capacity(height * width);
        for row in rows {
            if row.chars().count() != width {
                return Err(Error::InvalidMask("ragged ascii rows".into()));
            }
            for ch in row.chars() {
                bits.push(match ch {
                    '#' | '1' => true,
                    '.' | '0' => false,
                    other => {
                        return Err(Error::InvalidMask(format!("unexpected character {other:?}")))
                    }
                });
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixelwise AND.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(Mask { bits, ..*self })
    }

    /// Pixelwise OR.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.check_shape(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        Ok(Mask { bits, ..*self })
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub(crate) fn check_shape(&self, other: &Mask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    /// Decodes a binary (P5) 8-bit PGM; pixels `>= 128` are foreground.
    pub fn from_pgm_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (width, height, pixels) = decode_pgm(bytes)?;
        let bits = pixels.iter().map(|&p| p >= 128).collect();
        Mask::new(height, width, bits).map_err(|e| e.to_string())
    }

    /// Encodes as binary PGM with foreground 255 and background 0.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let pixels: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_pgm(self.width, self.height, &pixels)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm_bytes(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Row-major real-valued grid: an input image or a probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: (height, width),
                actual: (data.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut g = Self::filled(height, width, T::zero());
        for r in 0..height {
            for c in 0..width {
                g.data[r * width + c] = f(r, c);
            }
        }
        g
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    /// Foreground wherever the value is `>= threshold`.
    pub fn threshold(&self, threshold: T) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.data.iter().map(|&v| v >= threshold).collect(),
        }
    }

    /// Linear map of `[lo, hi]` onto `0..=255` (clamped), encoded as binary PGM.
    pub fn to_pgm_bytes(&self, lo: T, hi: T) -> Vec<u8> {
        let span = (hi - lo).to_f64_lossy();
        let pixels: Vec<u8> = self
            .data
            .iter()
            .map(|&v| {
                let t = ((v - lo).to_f64_lossy() / span).clamp(0.0, 1.0);
                (t * 255.0).round() as u8
            })
            .collect();
        encode_pgm(self.width, self.height, &pixels)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>, lo: T, hi: T) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm_bytes(lo, hi)).map_err(|e| Error::io(path, e))
    }
}

impl<T: Scalar> From<&Mask> for Grid<T> {
    fn from(mask: &Mask) -> Self {
        Grid {
            height: mask.height,
            width: mask.width,
            data: mask
                .bits
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }
}

fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos)?;
    if magic != "P5" {
        return Err(format!("expected P5 magic, found {magic:?}"));
    }
    let num = |pos: &mut usize, what: &str| -> std::result::Result<usize, String> {
        next_token(pos)?
            .parse::<usize>()
            .map_err(|_| format!("bad {what}"))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit PGM is supported (maxval {maxval})"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(format!(
            "raster truncated: need {n} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ));
    }
    Ok((width, height, bytes[pos..pos + n].to_vec()))
}
