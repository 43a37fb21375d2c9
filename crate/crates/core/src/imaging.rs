//! RGB / RGBA image values, target isolation, alpha transition and blending,
//! RGBA assembly, and canvas padding.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage, RgbaImage as ImgRgba};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub type Rgb8 = [u8; 3];

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Rgb8) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Image { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb8) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "rgb buffer has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb8 {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, c: Rgb8) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(w, h, |x, y| self.get(x + x0, y + y0)))
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length is an invariant")
    }

    pub fn from_rgb_image(img: &RgbImage) -> Image {
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().clone(),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Image> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Image::from_rgb_image(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        Image::from_png_bytes(&std::fs::read(path)?)
    }

    fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::mismatch(self.dims(), dims));
        }
        Ok(())
    }
}

/// Per-pixel blend weight in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AlphaMap {
    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        assert!((0.0..=1.0).contains(&v), "alpha must lie in [0,1]");
        AlphaMap { width, height, values: vec![v; width * height] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// 8-bit RGBA raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RgbaImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for RgbaImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RgbaImage({}x{})", self.width, self.height)
    }
}

impl RgbaImage {
    pub fn transparent(width: usize, height: usize) -> Self {
        RgbaImage { width, height, data: vec![0; width * height * 4] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn rgb(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            [p[0], p[1], p[2]]
        })
    }

    pub fn alpha_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y)[3] != 0)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = ImgRgba::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length is an invariant");
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<RgbaImage> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgba8();
        Ok(RgbaImage {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }
}

/// The clean background that replaces non-target pixels.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundFill {
    Solid(Rgb8),
    Image(Image),
}

impl Default for BackgroundFill {
    fn default() -> Self {
        BackgroundFill::Solid([127, 127, 127])
    }
}

impl BackgroundFill {
    pub fn solid_color(&self) -> Option<Rgb8> {
        match self {
            BackgroundFill::Solid(c) => Some(*c),
            BackgroundFill::Image(_) => None,
        }
    }

    fn check_canvas(&self, dims: (usize, usize)) -> Result<()> {
        match self {
            BackgroundFill::Solid(_) => Ok(()),
            BackgroundFill::Image(img) => img.check_dims(dims),
        }
    }

    #[inline]
    fn pixel(&self, x: usize, y: usize) -> Rgb8 {
        match self {
            BackgroundFill::Solid(c) => *c,
            BackgroundFill::Image(img) => img.get(x, y),
        }
    }

    /// Adapt the fill to a canvas grown by `margins`; image fills are
    /// extended by edge replication.
    pub fn for_padded(&self, margins: Margins) -> BackgroundFill {
        match self {
            BackgroundFill::Solid(c) => BackgroundFill::Solid(*c),
            BackgroundFill::Image(img) => {
                let (w, h) = img.dims();
                let nw = w + margins.left + margins.right;
                let nh = h + margins.top + margins.bottom;
                BackgroundFill::Image(Image::from_fn(nw, nh, |x, y| {
                    let sx = x.saturating_sub(margins.left).min(w - 1);
                    let sy = y.saturating_sub(margins.top).min(h - 1);
                    img.get(sx, sy)
                }))
            }
        }
    }

    /// `solid:R,G,B` or `image:WxH`; image contents are not serialized.
    pub fn describe(&self) -> String {
        match self {
            BackgroundFill::Solid([r, g, b]) => format!("solid:{r},{g},{b}"),
            BackgroundFill::Image(img) => format!("image:{}x{}", img.width(), img.height()),
        }
    }
}

impl Serialize for BackgroundFill {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.describe())
    }
}

/// Per-edge padding in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Margins {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Margins {
    pub fn is_zero(&self) -> bool {
        *self == Margins::default()
    }

    pub fn offset(&self) -> (usize, usize) {
        (self.left, self.top)
    }

    pub fn padded_dims(&self, dims: (usize, usize)) -> (usize, usize) {
        (dims.0 + self.left + self.right, dims.1 + self.top + self.bottom)
    }
}

/// `fg` where `m` is set, background elsewhere.
pub fn composite(fg: &Image, m: &BinaryMask, bg: &BackgroundFill) -> Result<Image> {
    fg.check_dims(m.dims())?;
    bg.check_canvas(fg.dims())?;
    Ok(Image::from_fn(fg.width, fg.height, |x, y| {
        if m.get(x, y) {
            fg.get(x, y)
        } else {
            bg.pixel(x, y)
        }
    }))
}

/// Blend weights for the visible region: 0 outside, `d / width_px` inside
/// where `d` is the Euclidean distance to the nearest in-canvas unset pixel,
/// saturating at 1.
pub fn alpha_transition(visible: &BinaryMask, width_px: usize) -> Result<AlphaMap> {
    if width_px == 0 {
        return Err(Error::InvalidArgument("transition width must be >= 1".into()));
    }
    let (w, h) = visible.dims();
    let r = width_px as isize;
    let mut values = vec![0.0; w * h];
    for (x, y) in visible.iter_set() {
        let mut best_sq: Option<isize> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                if !visible.get(nx as usize, ny as usize) {
                    let d2 = dx * dx + dy * dy;
                    if best_sq.is_none_or(|b| d2 < b) {
                        best_sq = Some(d2);
                    }
                }
            }
        }
        values[y * w + x] = match best_sq {
            Some(d2) => ((d2 as f64).sqrt() / width_px as f64).min(1.0),
            None => 1.0,
        };
    }
    Ok(AlphaMap { width: w, height: h, values })
}

/// Per-channel `alpha * over + (1 - alpha) * under`, rounded half-up.
pub fn alpha_blend(over: &Image, under: &Image, a: &AlphaMap) -> Result<Image> {
    over.check_dims(under.dims())?;
    over.check_dims(a.dims())?;
    let mut data = Vec::with_capacity(over.data.len());
    for (i, (o, u)) in over.data.iter().zip(&under.data).enumerate() {
        let alpha = a.values[i / 3];
        let v = *u as f64 + alpha * (*o as f64 - *u as f64);
        data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
    }
    Ok(Image { width: over.width, height: over.height, data })
}

/// RGB from `blend` inside `amodal`, zero outside; alpha 255 / 0.
pub fn assemble_rgba(blend: &Image, amodal: &BinaryMask) -> Result<RgbaImage> {
    blend.check_dims(amodal.dims())?;
    let mut data = Vec::with_capacity(blend.width * blend.height * 4);
    for y in 0..blend.height {
        for x in 0..blend.width {
            if amodal.get(x, y) {
                let [r, g, b] = blend.get(x, y);
                data.extend_from_slice(&[r, g, b, 255]);
            } else {
                data.extend_from_slice(&[0, 0, 0, 0]);
            }
        }
    }
    Ok(RgbaImage { width: blend.width, height: blend.height, data })
}

/// Grow the canvas by `margins`; returns the new image and the offset of the
/// original content.
pub fn pad_canvas(img: &Image, margins: Margins, fill: &BackgroundFill) -> Result<(Image, (usize, usize))> {
    let (nw, nh) = margins.padded_dims(img.dims());
    fill.check_canvas((nw, nh))?;
    let (ox, oy) = margins.offset();
    let out = Image::from_fn(nw, nh, |x, y| {
        if x >= ox && y >= oy && x - ox < img.width && y - oy < img.height {
            img.get(x - ox, y - oy)
        } else {
            fill.pixel(x, y)
        }
    });
    Ok((out, (ox, oy)))
}

/// Translate a mask onto a canvas padded by `margins`.
pub fn pad_mask(m: &BinaryMask, margins: Margins) -> Result<BinaryMask> {
    let (nw, nh) = margins.padded_dims(m.dims());
    m.translate_into(nw, nh, margins.left, margins.top)
}

impl From<Rgb8> for BackgroundFill {
    fn from(c: Rgb8) -> Self {
        BackgroundFill::Solid(c)
    }
}
