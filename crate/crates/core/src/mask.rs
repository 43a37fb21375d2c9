//! Dense binary masks and the set / morphological algebra the pipeline is
//! written in.
//!
//! Out-of-canvas pixels are treated as unset everywhere: erosion shrinks
//! masks away from the border, dilation is clipped to the canvas.

use std::collections::VecDeque;
use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel membership set over a `width x height` canvas, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}x{}, area={})", self.width, self.height, self.area())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeShape {
    Square,
    Disk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub shape: SeShape,
    pub radius: usize,
}

impl StructuringElement {
    pub fn square(radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructuringElement { shape: SeShape::Square, radius }
    }

    pub fn disk(radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructuringElement { shape: SeShape::Disk, radius }
    }

    /// All (dx, dy) offsets covered by the element, origin included.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.shape == SeShape::Square || dx * dx + dy * dy <= r * r {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Top, Edge::Bottom, Edge::Left, Edge::Right];

    fn bit(self) -> u8 {
        match self {
            Edge::Top => 1,
            Edge::Bottom => 2,
            Edge::Left => 4,
            Edge::Right => 8,
        }
    }
}

/// Subset of the four canvas edges.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct EdgeSet(u8);

impl EdgeSet {
    pub fn empty() -> Self {
        EdgeSet(0)
    }

    pub fn all() -> Self {
        EdgeSet(0b1111)
    }

    pub fn insert(&mut self, e: Edge) {
        self.0 |= e.bit();
    }

    pub fn contains(&self, e: Edge) -> bool {
        self.0 & e.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Edge> + '_ {
        Edge::ALL.into_iter().filter(|e| self.contains(*e))
    }
}

impl FromIterator<Edge> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = Edge>>(iter: I) -> Self {
        let mut s = EdgeSet::empty();
        for e in iter {
            s.insert(e);
        }
        s
    }
}

impl fmt::Debug for EdgeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for EdgeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for EdgeSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let edges = Vec::<Edge>::deserialize(d)?;
        Ok(edges.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoolOp {
    Union,
    Intersect,
    Subtract,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub area_a: usize,
    pub area_b: usize,
    pub intersection: usize,
    pub iou: f64,
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask buffer has {} entries, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(BinaryMask { width, height, bits })
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but out-of-canvas coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Set pixel coordinates in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::mismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn boolean(op: BoolOp, a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
        a.check_dims(b)?;
        let f: fn(bool, bool) -> bool = match op {
            BoolOp::Union => |x, y| x || y,
            BoolOp::Intersect => |x, y| x && y,
            BoolOp::Subtract => |x, y| x && !y,
        };
        let bits = a.bits.iter().zip(&b.bits).map(|(x, y)| f(*x, *y)).collect();
        Ok(BinaryMask { width: a.width, height: a.height, bits })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        Self::boolean(BoolOp::Union, self, other)
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        Self::boolean(BoolOp::Intersect, self, other)
    }

    pub fn subtract(&self, other: &BinaryMask) -> Result<BinaryMask> {
        Self::boolean(BoolOp::Subtract, self, other)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !*b).collect(),
        }
    }

    pub fn intersects(&self, other: &BinaryMask) -> Result<bool> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b))
    }

    /// Pixel set iff every element offset lands on a set, in-canvas pixel.
    pub fn erode(&self, se: &StructuringElement) -> BinaryMask {
        match se.shape {
            SeShape::Square => {
                let r = se.radius;
                let rows = self.row_pass(r, true);
                rows.col_pass(r, true)
            }
            SeShape::Disk => {
                let offsets = se.offsets();
                BinaryMask::from_fn(self.width, self.height, |x, y| {
                    offsets
                        .iter()
                        .all(|(dx, dy)| self.get_signed(x as isize + dx, y as isize + dy))
                })
            }
        }
    }

    /// Pixel set iff any in-canvas element offset lands on a set pixel.
    pub fn dilate(&self, se: &StructuringElement) -> BinaryMask {
        match se.shape {
            SeShape::Square => {
                let r = se.radius;
                let rows = self.row_pass(r, false);
                rows.col_pass(r, false)
            }
            SeShape::Disk => {
                let offsets = se.offsets();
                let mut out = BinaryMask::new(self.width, self.height);
                for (x, y) in self.iter_set() {
                    for (dx, dy) in &offsets {
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                            out.set(nx as usize, ny as usize, true);
                        }
                    }
                }
                out
            }
        }
    }

    /// dilate then erode
    pub fn close(&self, se: &StructuringElement) -> BinaryMask {
        self.dilate(se).erode(se)
    }

    /// erode then dilate
    pub fn open(&self, se: &StructuringElement) -> BinaryMask {
        self.erode(se).dilate(se)
    }

    // Separable 1-D window pass over rows. `all` selects erosion semantics
    // (window must be fully in-canvas and fully set) vs dilation (any set).
    fn row_pass(&self, r: usize, all: bool) -> BinaryMask {
        let (w, h) = self.dims();
        let mut out = BinaryMask::new(w, h);
        let mut prefix = vec![0usize; w + 1];
        for y in 0..h {
            let row = &self.bits[y * w..(y + 1) * w];
            for x in 0..w {
                prefix[x + 1] = prefix[x] + row[x] as usize;
            }
            for x in 0..w {
                out.bits[y * w + x] = window_hit(&prefix, x, r, w, all);
            }
        }
        out
    }

    fn col_pass(&self, r: usize, all: bool) -> BinaryMask {
        let (w, h) = self.dims();
        let mut out = BinaryMask::new(w, h);
        let mut prefix = vec![0usize; h + 1];
        for x in 0..w {
            for y in 0..h {
                prefix[y + 1] = prefix[y] + self.bits[y * w + x] as usize;
            }
            for y in 0..h {
                out.bits[y * w + x] = window_hit(&prefix, y, r, h, all);
            }
        }
        out
    }

    /// Maximal connected regions, largest first; ties keep row-major order of
    /// each region's first pixel.
    pub fn connected_components(&self, connectivity: Connectivity) -> Vec<BinaryMask> {
        let (w, h) = self.dims();
        let neighbors: &[(isize, isize)] = match connectivity {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        };
        let mut visited = vec![false; w * h];
        let mut comps: Vec<(usize, BinaryMask)> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if !self.bits[start] || visited[start] {
                continue;
            }
            let mut comp = BinaryMask::new(w, h);
            let mut area = 0;
            visited[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                comp.bits[i] = true;
                area += 1;
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                for (dx, dy) in neighbors {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if self.bits[j] && !visited[j] {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            comps.push((area, comp));
        }
        // stable: equal areas keep discovery (row-major) order
        comps.sort_by(|a, b| b.0.cmp(&a.0));
        comps.into_iter().map(|(_, m)| m).collect()
    }

    /// Number of pixels where the two masks disagree.
    pub fn l1_diff(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    pub fn boundary_contacts(&self) -> EdgeSet {
        let (w, h) = self.dims();
        let mut edges = EdgeSet::empty();
        if w == 0 || h == 0 {
            return edges;
        }
        if (0..w).any(|x| self.get(x, 0)) {
            edges.insert(Edge::Top);
        }
        if (0..w).any(|x| self.get(x, h - 1)) {
            edges.insert(Edge::Bottom);
        }
        if (0..h).any(|y| self.get(0, y)) {
            edges.insert(Edge::Left);
        }
        if (0..h).any(|y| self.get(w - 1, y)) {
            edges.insert(Edge::Right);
        }
        edges
    }

    /// The `width_px`-deep strip of canvas pixels along edge `e`.
    pub fn edge_band(width_px: usize, dims: (usize, usize), e: Edge) -> Result<BinaryMask> {
        let (w, h) = dims;
        if width_px == 0 {
            return Err(Error::InvalidArgument("edge band width must be >= 1".into()));
        }
        if width_px >= w.min(h) {
            return Err(Error::InvalidArgument(format!(
                "edge band width {width_px} must be smaller than min canvas dimension of {w}x{h}"
            )));
        }
        Ok(BinaryMask::from_fn(w, h, |x, y| match e {
            Edge::Top => y < width_px,
            Edge::Bottom => y >= h - width_px,
            Edge::Left => x < width_px,
            Edge::Right => x >= w - width_px,
        }))
    }

    pub fn metrics(&self, other: &BinaryMask) -> Result<MaskMetrics> {
        self.check_dims(other)?;
        let mut area_a = 0;
        let mut area_b = 0;
        let mut intersection = 0;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            area_a += *a as usize;
            area_b += *b as usize;
            intersection += (*a && *b) as usize;
        }
        let union = area_a + area_b - intersection;
        let iou = if union == 0 { 1.0 } else { intersection as f64 / union as f64 };
        Ok(MaskMetrics { area_a, area_b, intersection, iou })
    }

    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        Ok(self.metrics(other)?.iou)
    }

    pub fn bounding_box(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for (x, y) in self.iter_set() {
            bb = Some(match bb {
                None => BBox { x0: x, y0: y, x1: x, y1: y },
                Some(b) => BBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            });
        }
        bb
    }

    /// Place this mask into a larger `new_w x new_h` canvas at `(dx, dy)`.
    pub fn translate_into(&self, new_w: usize, new_h: usize, dx: usize, dy: usize) -> Result<BinaryMask> {
        if dx + self.width > new_w || dy + self.height > new_h {
            return Err(Error::InvalidArgument(format!(
                "{}x{} mask at offset ({dx},{dy}) does not fit {new_w}x{new_h}",
                self.width, self.height
            )));
        }
        let mut out = BinaryMask::new(new_w, new_h);
        for y in 0..self.height {
            let src = &self.bits[y * self.width..(y + 1) * self.width];
            let start = (y + dy) * new_w + dx;
            out.bits[start..start + self.width].copy_from_slice(src);
        }
        Ok(out)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<BinaryMask> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} mask",
                self.width, self.height
            )));
        }
        Ok(BinaryMask::from_fn(w, h, |x, y| self.get(x + x0, y + y0)))
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Nonzero luma reads as set.
    pub fn from_gray(img: &GrayImage) -> BinaryMask {
        let (w, h) = (img.width() as usize, img.height() as usize);
        BinaryMask::from_fn(w, h, |x, y| img.get_pixel(x as u32, y as u32).0[0] != 0)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_gray().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<BinaryMask> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(BinaryMask::from_gray(&img.to_luma8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
        BinaryMask::from_png_bytes(&std::fs::read(path)?)
    }
}

#[inline]
fn window_hit(prefix: &[usize], i: usize, r: usize, n: usize, all: bool) -> bool {
    if all {
        if i < r || i + r >= n {
            return false;
        }
        prefix[i + r + 1] - prefix[i - r] == 2 * r + 1
    } else {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(n);
        prefix[hi] - prefix[lo] > 0
    }
}
