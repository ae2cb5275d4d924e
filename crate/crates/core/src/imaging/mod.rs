//! Pixel-level primitives.
//!
//! Every image in the pipeline is a single-channel [`GrayImage`] holding
//! `f64` intensities in `[0, 1]`. Files are decoded once at load time and
//! quantized back to 8 bits on save, so bit-exact comparisons are only
//! meaningful after a save/load round trip.
//!
//! Coordinates are `(x = column, y = row)` with the origin at the top-left.

mod guilloche;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use guilloche::{synth_guilloche, GuillocheParams};

/// Fraction threshold above which a block counts as foreground in
/// [`heuristic_foreground`].
pub const FOREGROUND_OUTLIER_FRACTION: f64 = 0.05;
/// Deviation from the block median that marks a pixel as an outlier.
pub const FOREGROUND_DEVIATION: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("invalid block size {n} for a {width}x{height} image")]
    InvalidBlockSize { n: usize, width: usize, height: usize },
    #[error("source region {src} and destination region {dst} differ in shape")]
    RegionMismatch { src: Region, dst: Region },
    #[error("region {region} does not fit in a {width}x{height} image")]
    OutOfBounds {
        region: Region,
        width: usize,
        height: usize,
    },
    #[error("copy-move source and destination are the same region {0}")]
    DegenerateCopy(Region),
    #[error("invalid pixel data: {0}")]
    InvalidPixels(String),
    #[error("invalid guilloche parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ImagingError {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::FileNotFound(_) => "FileNotFound",
            Self::UnsupportedFormat(_) => "UnsupportedFormat",
            Self::CorruptImage { .. } => "CorruptImage",
            Self::InvalidDimensions { .. } => "InvalidDimensions",
            Self::InvalidBlockSize { .. } => "InvalidBlockSize",
            Self::RegionMismatch { .. } => "RegionMismatch",
            Self::OutOfBounds { .. } => "OutOfBounds",
            Self::DegenerateCopy(_) => "DegenerateCopy",
            Self::InvalidPixels(_) => "InvalidPixels",
            Self::InvalidParams(_) => "InvalidParams",
            Self::Io { .. } => "IoError",
        }
    }
}

/// Single-channel raster with row-major `f64` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImagingError::InvalidPixels(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ImagingError::InvalidPixels(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImagingError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel; values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImagingError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn bounds(&self) -> Region {
        Region::new(0, 0, self.width, self.height)
    }

    /// Copies the pixels of `region` into a new image.
    pub fn crop(&self, region: Region) -> Result<GrayImage, ImagingError> {
        self.check_fits(region)?;
        let mut out = Vec::with_capacity(region.w * region.h);
        for y in region.y..region.y + region.h {
            let row = y * self.width;
            out.extend_from_slice(&self.pixels[row + region.x..row + region.x + region.w]);
        }
        GrayImage::new(region.w, region.h, out)
    }

    /// Paints `region` with a constant intensity (used to draw synthetic foreground).
    pub fn fill_region(&mut self, region: Region, value: f64) -> Result<(), ImagingError> {
        self.check_fits(region)?;
        let value = value.clamp(0.0, 1.0);
        for y in region.y..region.y + region.h {
            let row = y * self.width;
            self.pixels[row + region.x..row + region.x + region.w].fill(value);
        }
        Ok(())
    }

    fn check_fits(&self, region: Region) -> Result<(), ImagingError> {
        if region.fits(self.width, self.height) {
            Ok(())
        } else {
            Err(ImagingError::OutOfBounds {
                region,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// 8-bit quantization used when writing files.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Re-reads the image as it would come back from an 8-bit file.
    pub fn quantized(&self) -> GrayImage {
        let pixels = self.to_u8().into_iter().map(|v| f64::from(v) / 255.0).collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer length matches dimensions");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| ImagingError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(source) => ImagingError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                other => ImagingError::CorruptImage {
                    path: path.to_path_buf(),
                    reason: other.to_string(),
                },
            })
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// True when the two rectangles share at least one pixel.
    pub fn intersects(&self, other: &Region) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Non-overlapping `N×N` tiling of an image. Block indices are 1-based and
/// row-major; partial strips at the right and bottom edges are not part of the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub block_size: usize,
    pub cols: usize,
    pub rows: usize,
    regions: Vec<Region>,
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Region of the 1-based block `index`.
    pub fn region(&self, index: usize) -> Option<Region> {
        index.checked_sub(1).and_then(|i| self.regions.get(i)).copied()
    }

    /// `(col, row)` grid cell of the 1-based block `index`.
    pub fn cell(&self, index: usize) -> Option<(usize, usize)> {
        (index >= 1 && index <= self.len()).then(|| ((index - 1) % self.cols, (index - 1) / self.cols))
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Iterates `(index, region)` with 1-based indices.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Region)> + '_ {
        self.regions.iter().enumerate().map(|(i, r)| (i + 1, *r))
    }
}

/// Decodes an image file and converts it to grayscale.
///
/// RGB input is collapsed with luma weights 0.299/0.587/0.114; 8-bit values
/// are divided by 255.
pub fn load_grayscale(path: &Path) -> Result<GrayImage, ImagingError> {
    let reader = image::ImageReader::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImagingError::FileNotFound(path.to_path_buf()),
        _ => ImagingError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let reader = reader.with_guessed_format().map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // The extension alone is not trusted: the header must carry a known signature.
    let mut header = [0u8; 32];
    let n = std::fs::File::open(path)
        .and_then(|mut f| std::io::Read::read(&mut f, &mut header))
        .map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if reader.format().is_none() || image::guess_format(&header[..n]).is_err() {
        return Err(ImagingError::UnsupportedFormat(path.to_path_buf()));
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(_) => ImagingError::UnsupportedFormat(path.to_path_buf()),
        other => ImagingError::CorruptImage {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f64> = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        image::DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    GrayImage::new(width, height, pixels)
}

fn luma(r: u8, g: u8, b: u8) -> f64 {
    ((0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0).clamp(0.0, 1.0)
}

/// Bilinear resampling with corner-aligned sample positions.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage, ImagingError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::InvalidDimensions {
            width: out_w,
            height: out_h,
        });
    }
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let sx = scale(img.width, out_w);
    let sy = scale(img.height, out_h);
    // Per-column sample positions are shared by every output row.
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|x| split_coord(x as f64 * sx, img.width)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = split_coord(y as f64 * sy, img.height);
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

fn split_coord(pos: f64, len: usize) -> (usize, usize, f64) {
    let i0 = (pos.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Partitions the image into a row-major grid of `n×n` blocks.
pub fn partition_blocks(img: &GrayImage, n: usize) -> Result<BlockGrid, ImagingError> {
    if n == 0 || n > img.width.min(img.height) {
        return Err(ImagingError::InvalidBlockSize {
            n,
            width: img.width,
            height: img.height,
        });
    }
    let cols = img.width / n;
    let rows = img.height / n;
    let regions = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Region::new(c * n, r * n, n, n)))
        .collect();
    Ok(BlockGrid {
        block_size: n,
        cols,
        rows,
        regions,
    })
}

/// Indices (ascending, 1-based) of the blocks that touch no foreground region.
pub fn select_candidate_zones(grid: &BlockGrid, foreground: &[Region]) -> Vec<usize> {
    grid.iter()
        .filter(|(_, block)| !foreground.iter().any(|f| f.intersects(block)))
        .map(|(i, _)| i)
        .collect()
}

/// Blocks that look like foreground when no annotation is available.
///
/// A block is foreground when more than 5% of its pixels deviate from the
/// block median by more than 0.25.
pub fn heuristic_foreground(img: &GrayImage, grid: &BlockGrid) -> Vec<Region> {
    let mut values = Vec::with_capacity(grid.block_size * grid.block_size);
    grid.regions()
        .iter()
        .filter(|block| {
            values.clear();
            for y in block.y..block.y + block.h {
                let row = y * img.width;
                values.extend_from_slice(&img.pixels[row + block.x..row + block.x + block.w]);
            }
            let median = median(&mut values);
            let outliers = values
                .iter()
                .filter(|p| (*p - median).abs() > FOREGROUND_DEVIATION)
                .count();
            outliers as f64 / values.len() as f64 > FOREGROUND_OUTLIER_FRACTION
        })
        .copied()
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Copy-move tampering: returns a new image whose `dst` pixels are the
/// original `src` pixels. Everything outside `dst` is left untouched.
pub fn copy_move(img: &GrayImage, src: Region, dst: Region) -> Result<GrayImage, ImagingError> {
    if src.w != dst.w || src.h != dst.h {
        return Err(ImagingError::RegionMismatch { src, dst });
    }
    img.check_fits(src)?;
    img.check_fits(dst)?;
    if src == dst {
        return Err(ImagingError::DegenerateCopy(src));
    }
    let mut out = img.clone();
    for row in 0..src.h {
        let from = (src.y + row) * img.width + src.x;
        let to = (dst.y + row) * img.width + dst.x;
        out.pixels[to..to + dst.w].copy_from_slice(&img.pixels[from..from + src.w]);
    }
    Ok(out)
}
