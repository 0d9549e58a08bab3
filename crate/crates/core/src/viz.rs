//! Patch-mask rendering to binary PGM (P5).
//!
//! Token `i` of a `W x H` grid sits at column `i % W`, row `i / W`. Kept
//! patches render white (255) and pruned patches grey (128). Over a source
//! image, kept patches keep their pixels and pruned patches are filled grey.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_io::IndexMask;

pub const KEPT: u8 = 255;
pub const PRUNED: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn count(&self, value: u8) -> usize {
        self.pixels.iter().filter(|&&p| p == value).count()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Reads binary PGM with maxval 255; `#` comments in the header are skipped.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    b if b.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format {
                    offset: pos,
                    message: "truncated PGM header".into(),
                });
            }
            fields.push((start, &bytes[start..pos]));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let (_, magic) = fields[0];
        if magic != b"P5" {
            return Err(Error::Format {
                offset: 0,
                message: "not a binary PGM (P5)".into(),
            });
        }
        let mut nums = [0usize; 3];
        for (slot, &(offset, field)) in nums.iter_mut().zip(&fields[1..]) {
            *slot = std::str::from_utf8(field)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format {
                    offset,
                    message: "bad PGM header number".into(),
                })?;
        }
        let [width, height, maxval] = nums;
        if maxval != 255 {
            return Err(Error::Format {
                offset: fields[3].0,
                message: format!("unsupported maxval {maxval}"),
            });
        }
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != width * height {
            return Err(Error::Format {
                offset: pos,
                message: format!(
                    "{width}x{height} image needs {} pixel bytes, found {}",
                    width * height,
                    raster.len()
                ),
            });
        }
        Ok(Self {
            width,
            height,
            pixels: raster.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes)
    }
}

/// Parses `WxH`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("grid '{s}' is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn check_grid(mask: &IndexMask, width: usize, height: usize) -> Result<()> {
    if width * height != mask.total() {
        return Err(Error::DimensionMismatch(format!(
            "grid {width}x{height} has {} cells but the mask covers {} tokens",
            width * height,
            mask.total()
        )));
    }
    Ok(())
}

/// One pixel per patch.
pub fn render_mask(mask: &IndexMask, width: usize, height: usize) -> Result<GrayImage> {
    check_grid(mask, width, height)?;
    let mut img = GrayImage::new(width, height, PRUNED);
    for &i in mask.kept() {
        img.pixels[i] = KEPT;
    }
    Ok(img)
}

/// Greys out pruned patches of `image`, whose sides must be multiples of the grid.
pub fn render_over_image(
    mask: &IndexMask,
    width: usize,
    height: usize,
    image: &GrayImage,
) -> Result<GrayImage> {
    check_grid(mask, width, height)?;
    if !image.width.is_multiple_of(width) || !image.height.is_multiple_of(height) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} does not divide into a {width}x{height} grid",
            image.width, image.height
        )));
    }
    let pw = image.width / width;
    let ph = image.height / height;
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let token = (y / ph) * width + x / pw;
            if !mask.contains(token) {
                out.pixels[y * image.width + x] = PRUNED;
            }
        }
    }
    Ok(out)
}
