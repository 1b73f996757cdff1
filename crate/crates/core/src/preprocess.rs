//! Square model input without distorting the embryo: the shorter axis is
//! padded with black to a square, which is then resized to 448×448.
//!
//! Padding and resizing are fused: the source is resized straight into its
//! content box inside a black canvas, which is the same geometry as
//! pad-then-resize but keeps every padding pixel exactly `(0, 0, 0)` instead
//! of letting the filter blend content into the border. Pixel normalization
//! is left to the model server.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub const TARGET_SIDE: u32 = 448;
/// Resampling algorithm recorded next to every prepared image.
pub const RESAMPLER_ID: &str = "bilinear/image-0.25-triangle";

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("cannot decode image `{source_id}`: {reason}")]
    UndecodableImage { source_id: String, reason: String },
    #[error("image `{0}` has a zero dimension")]
    ZeroDimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot encode image: {0}")]
    Encode(String),
}

/// Padding added to the source, in source pixels, before the resize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PadBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PadBox {
    pub fn is_empty(&self) -> bool {
        *self == PadBox::default()
    }
}

/// Where the source content lands in the output image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl ContentBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

/// Everything needed to reproduce or audit one prepared image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedMeta {
    pub source_id: String,
    pub source_width: u32,
    pub source_height: u32,
    pub pad_box: PadBox,
    pub content_box: ContentBox,
    pub resampler: String,
}

#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub pixels: RgbImage,
    pub meta: PreparedMeta,
}

impl PreparedImage {
    pub fn pad_box(&self) -> PadBox {
        self.meta.pad_box
    }

    pub fn source_id(&self) -> &str {
        &self.meta.source_id
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>, PreprocessError> {
        let mut buf = Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| PreprocessError::Encode(e.to_string()))?;
        Ok(buf.into_inner())
    }

    /// Writes `<stem>.png` and the `<stem>.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, PreprocessError> {
        fs::create_dir_all(dir)?;
        let png = prepared_png_path(dir, &self.meta.source_id);
        fs::write(&png, self.png_bytes()?)?;
        let sidecar = serde_json::to_vec_pretty(&self.meta).expect("metadata serializes");
        fs::write(png.with_extension("json"), sidecar)?;
        Ok(png)
    }
}

/// File name used for a prepared frame; anything outside `[A-Za-z0-9._-]`
/// becomes `_`.
pub fn prepared_png_path(dir: &Path, frame_id: &str) -> PathBuf {
    let stem: String = frame_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(format!("{stem}.png"))
}

/// Padding that squares a `width × height` image; odd remainders go right/bottom.
pub fn square_padding(width: u32, height: u32) -> PadBox {
    let side = width.max(height);
    let (dx, dy) = (side - width, side - height);
    PadBox {
        left: dx / 2,
        right: dx - dx / 2,
        top: dy / 2,
        bottom: dy - dy / 2,
    }
}

/// Content box of a `width × height` source inside the square output.
pub fn content_box(width: u32, height: u32) -> ContentBox {
    let side = width.max(height) as u64;
    let scaled = |len: u32| -> u32 {
        let exact_num = len as u64 * TARGET_SIDE as u64;
        // round half up, never below one pixel
        (((2 * exact_num + side) / (2 * side)) as u32).max(1)
    };
    let (w, h) = (scaled(width), scaled(height));
    ContentBox {
        x: (TARGET_SIDE - w) / 2,
        y: (TARGET_SIDE - h) / 2,
        width: w,
        height: h,
    }
}

pub fn prepare_image(source: &DynamicImage, source_id: &str) -> Result<PreparedImage, PreprocessError> {
    let (width, height) = (source.width(), source.height());
    if width == 0 || height == 0 {
        return Err(PreprocessError::ZeroDimension(source_id.to_string()));
    }
    let rgb = source.to_rgb8();
    let content = content_box(width, height);
    let resized = if (content.width, content.height) == (width, height) {
        rgb
    } else {
        imageops::resize(&rgb, content.width, content.height, FilterType::Triangle)
    };
    let mut canvas = RgbImage::from_pixel(TARGET_SIDE, TARGET_SIDE, Rgb([0, 0, 0]));
    imageops::replace(&mut canvas, &resized, content.x as i64, content.y as i64);
    Ok(PreparedImage {
        pixels: canvas,
        meta: PreparedMeta {
            source_id: source_id.to_string(),
            source_width: width,
            source_height: height,
            pad_box: square_padding(width, height),
            content_box: content,
            resampler: RESAMPLER_ID.to_string(),
        },
    })
}

pub fn prepare_image_bytes(bytes: &[u8], source_id: &str) -> Result<PreparedImage, PreprocessError> {
    let img = image::load_from_memory(bytes).map_err(|e| PreprocessError::UndecodableImage {
        source_id: source_id.to_string(),
        reason: e.to_string(),
    })?;
    prepare_image(&img, source_id)
}

pub fn prepare_file(path: &Path, source_id: &str) -> Result<PreparedImage, PreprocessError> {
    prepare_image_bytes(&fs::read(path)?, source_id)
}

/// Reads back an image written by [`PreparedImage::save`].
pub fn load_prepared(dir: &Path, frame_id: &str) -> Result<PreparedImage, PreprocessError> {
    let png = prepared_png_path(dir, frame_id);
    let pixels = image::open(&png)
        .map_err(|e| PreprocessError::UndecodableImage {
            source_id: frame_id.to_string(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let meta: PreparedMeta = serde_json::from_slice(&fs::read(png.with_extension("json"))?).map_err(|e| {
        PreprocessError::UndecodableImage {
            source_id: frame_id.to_string(),
            reason: format!("bad sidecar: {e}"),
        }
    })?;
    Ok(PreparedImage { pixels, meta })
}
