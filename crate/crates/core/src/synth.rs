//! Deterministic layered scenes with exact amodal / visible / occlusion
//! ground truth.
//!
//! Shapes live in continuous scene coordinates; a pixel `(x, y)` is covered
//! when its center `(x + 0.5, y + 0.5)` lies inside the shape. Scene
//! coordinates may extend past the canvas, which is how boundary-crossing
//! shapes keep a well-defined appearance outside the original image.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Rgb8};
use crate::mask::{BinaryMask, EdgeSet, StructuringElement};

/// Minimum amodal area of every shape, as a fraction of the canvas.
pub const MIN_AMODAL_FRAC: f64 = 0.04;
/// Minimum visible area of every shape, as a fraction of the canvas.
pub const MIN_VISIBLE_FRAC: f64 = 0.02;
/// Radius used when checking that occluding pairs touch.
pub const ADJACENCY_RADIUS: usize = 2;
/// Deepest a boundary shape reaches past the canvas edge; no deeper than the
/// default outpainting margin.
pub const MAX_CROSSING_DEPTH: u32 = 8;

const NAMES: &[&str] = &[
    "apple", "banana", "kettle", "lamp", "teapot", "vase", "clock", "bottle", "chair", "pillow",
    "bucket", "drum", "kite", "mug", "book", "candle", "shoe", "ball", "plate", "phone", "radio",
    "basket", "helmet", "guitar", "toaster", "camera", "wallet", "lantern", "violin", "anchor",
];

// Every entry has a channel at least 60 away from mid-gray.
const PALETTE: &[Rgb8] = &[
    [220, 40, 40],
    [40, 180, 60],
    [40, 70, 220],
    [235, 200, 30],
    [200, 60, 200],
    [30, 200, 210],
    [240, 130, 20],
    [120, 40, 160],
    [150, 90, 30],
    [20, 20, 20],
    [245, 245, 245],
    [250, 150, 180],
    [100, 200, 120],
    [20, 110, 60],
    [180, 30, 90],
    [60, 40, 110],
    [255, 240, 150],
    [0, 130, 130],
];

const BACKGROUNDS: &[Rgb8] = &[[200, 190, 170], [70, 90, 110], [180, 210, 230], [90, 70, 60]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    /// Half-open box `[x0, x1) x [y0, y1)`.
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Triangle { points: [[f64; 2]; 3] },
}

impl Geometry {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            Geometry::Rectangle { x0, y0, x1, y1 } => px >= *x0 && px < *x1 && py >= *y0 && py < *y1,
            Geometry::Ellipse { cx, cy, rx, ry } => {
                let dx = (px - cx) / rx;
                let dy = (py - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Geometry::Triangle { points } => {
                let [a, b, c] = points;
                let s1 = cross(a, b, px, py);
                let s2 = cross(b, c, px, py);
                let s3 = cross(c, a, px, py);
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Geometry::Rectangle { .. } => "rectangle",
            Geometry::Ellipse { .. } => "ellipse",
            Geometry::Triangle { .. } => "triangle",
        }
    }
}

fn cross(a: &[f64; 2], b: &[f64; 2], px: f64, py: f64) -> f64 {
    (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Fill {
    Solid { color: Rgb8 },
    /// Two-color checkerboard aligned to scene coordinates.
    Checker { a: Rgb8, b: Rgb8, cell: i64 },
}

impl Fill {
    pub fn color_at(&self, sx: i64, sy: i64) -> Rgb8 {
        match self {
            Fill::Solid { color } => *color,
            Fill::Checker { a, b, cell } => {
                if (sx.div_euclid(*cell) + sy.div_euclid(*cell)).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }

    pub fn colors(&self) -> Vec<Rgb8> {
        match self {
            Fill::Solid { color } => vec![*color],
            Fill::Checker { a, b, .. } => vec![*a, *b],
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub name: String,
    pub geometry: Geometry,
    pub fill: Fill,
    /// Higher is nearer the viewer.
    pub z: i32,
    /// Whether mock detectors report this shape; undetected shapes surface
    /// only through background segmentation.
    #[serde(default = "default_true")]
    pub detectable: bool,
}

impl Shape {
    /// Rasterize onto a canvas whose pixel `(x, y)` sits at scene position
    /// `(x - offset.0, y - offset.1)`.
    pub fn rasterize(&self, dims: (usize, usize), offset: (usize, usize)) -> BinaryMask {
        let (ox, oy) = (offset.0 as f64, offset.1 as f64);
        BinaryMask::from_fn(dims.0, dims.1, |x, y| {
            self.geometry.contains(x as f64 - ox + 0.5, y as f64 - oy + 0.5)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub background_color: Rgb8,
    pub shapes: Vec<Shape>,
    /// Designated query: the most occluded shape, or the boundary-crossing one.
    pub target: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub width: usize,
    pub height: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub allow_boundary: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec { width: 256, height: 256, min_shapes: 3, max_shapes: 5, allow_boundary: false }
    }
}

const MAX_ATTEMPTS: usize = 2000;

impl SyntheticScene {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn shape(&self, name: &str) -> Result<&Shape> {
        self.shapes
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownShape(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.shapes.iter().map(|s| s.name.clone()).collect()
    }

    /// Shapes sorted by ascending z.
    pub fn z_sorted(&self) -> Vec<&Shape> {
        let mut v: Vec<&Shape> = self.shapes.iter().collect();
        v.sort_by_key(|s| s.z);
        v
    }

    pub fn amodal_mask(&self, name: &str) -> Result<BinaryMask> {
        Ok(self.shape(name)?.rasterize(self.dims(), (0, 0)))
    }

    pub fn visible_mask(&self, name: &str) -> Result<BinaryMask> {
        self.visible_mask_at(name, self.dims(), (0, 0))
    }

    /// Visible mask on an arbitrary canvas window (see [`Shape::rasterize`]).
    pub fn visible_mask_at(&self, name: &str, dims: (usize, usize), offset: (usize, usize)) -> Result<BinaryMask> {
        let target = self.shape(name)?;
        let mut vis = target.rasterize(dims, offset);
        for s in self.shapes.iter().filter(|s| s.z > target.z) {
            vis = vis.subtract(&s.rasterize(dims, offset))?;
        }
        Ok(vis)
    }

    /// Canvas pixels showing the background color.
    pub fn background_visible(&self) -> BinaryMask {
        let mut bg = BinaryMask::full(self.width, self.height);
        for s in &self.shapes {
            bg = bg.subtract(&s.rasterize(self.dims(), (0, 0))).expect("same canvas");
        }
        bg
    }

    pub fn render(&self) -> Image {
        self.render_at(self.dims(), (0, 0))
    }

    /// Painter's algorithm by ascending z over the background color.
    pub fn render_at(&self, dims: (usize, usize), offset: (usize, usize)) -> Image {
        let mut img = Image::filled(dims.0, dims.1, self.background_color);
        for s in self.z_sorted() {
            let m = s.rasterize(dims, offset);
            for (x, y) in m.iter_set() {
                let sx = x as i64 - offset.0 as i64;
                let sy = y as i64 - offset.1 as i64;
                img.put(x, y, s.fill.color_at(sx, sy));
            }
        }
        img
    }

    /// True iff `candidate` is nearer than `target` and their full extents overlap.
    pub fn occlusion_truth(&self, target: &str, candidate: &str) -> Result<bool> {
        let t = self.shape(target)?;
        let c = self.shape(candidate)?;
        if t.name == c.name {
            return Err(Error::InvalidArgument("occlusion_truth needs two distinct shapes".into()));
        }
        if c.z <= t.z {
            return Ok(false);
        }
        self.amodal_mask(target)?.intersects(&self.amodal_mask(candidate)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Write `scene.json`, `rendered.png` and per-shape `<name>_amodal.png` /
    /// `<name>_visible.png` into `dir`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scene.json"), self.to_json()?)?;
        self.render().save_png(dir.join("rendered.png"))?;
        for s in &self.shapes {
            self.amodal_mask(&s.name)?.save_png(dir.join(format!("{}_amodal.png", s.name)))?;
            self.visible_mask(&s.name)?.save_png(dir.join(format!("{}_visible.png", s.name)))?;
        }
        Ok(())
    }

    pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(dir.as_ref().join("scene.json"))?;
        Self::from_json(&text)
    }
}

/// Generate a scene satisfying every generator invariant, deterministically in `seed`.
pub fn generate(seed: u64, spec: &GenSpec) -> Result<SyntheticScene> {
    if spec.min_shapes < 2 || spec.max_shapes < spec.min_shapes {
        return Err(Error::InvalidArgument(format!(
            "shape range {}..={} must start at 2 or more",
            spec.min_shapes, spec.max_shapes
        )));
    }
    if spec.max_shapes > NAMES.len() || spec.max_shapes * 2 > PALETTE.len() {
        return Err(Error::InvalidArgument("too many shapes for the name/color vocabulary".into()));
    }
    if spec.width < 32 || spec.height < 32 {
        return Err(Error::InvalidArgument("canvas must be at least 32x32".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let scene = propose(&mut rng, seed, spec);
        if let Some(scene) = validate(scene, spec) {
            return Ok(scene);
        }
    }
    Err(Error::Generation(format!("no valid scene for seed {seed} after {MAX_ATTEMPTS} attempts")))
}

fn propose(rng: &mut ChaCha8Rng, seed: u64, spec: &GenSpec) -> SyntheticScene {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let n = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let names: Vec<&str> = NAMES.choose_multiple(rng, n).copied().collect();
    let mut colors: Vec<Rgb8> = PALETTE.to_vec();
    colors.shuffle(rng);
    let mut z: Vec<i32> = (0..n as i32).collect();
    z.shuffle(rng);
    let boundary_idx = if spec.allow_boundary { Some(0) } else { None };
    let margin = 2.0;

    let mut shapes = Vec::with_capacity(n);
    for i in 0..n {
        let fill = if rng.gen_bool(0.3) && colors.len() >= 2 {
            let a = colors.pop().unwrap();
            let b = colors.pop().unwrap();
            Fill::Checker { a, b, cell: rng.gen_range(4..=12) }
        } else {
            Fill::Solid { color: colors.pop().unwrap() }
        };
        let geometry = if boundary_idx == Some(i) {
            boundary_geometry(rng, w, h)
        } else {
            interior_geometry(rng, w, h, margin)
        };
        shapes.push(Shape { name: names[i].to_string(), geometry, fill, z: z[i], detectable: true });
    }
    let background_color = *BACKGROUNDS.choose(rng).unwrap();
    let target = shapes[0].name.clone();
    SyntheticScene { width: spec.width, height: spec.height, seed, background_color, shapes, target }
}

fn interior_geometry(rng: &mut ChaCha8Rng, w: f64, h: f64, margin: f64) -> Geometry {
    match rng.gen_range(0..3) {
        0 => {
            let bw = (rng.gen_range(0.22..0.45) * w).round();
            let bh = (rng.gen_range(0.22..0.45) * h).round();
            let x0 = rng.gen_range(margin..(w - margin - bw)).round();
            let y0 = rng.gen_range(margin..(h - margin - bh)).round();
            Geometry::Rectangle { x0, y0, x1: x0 + bw, y1: y0 + bh }
        }
        1 => {
            let rx = rng.gen_range(0.13..0.25) * w;
            let ry = rng.gen_range(0.13..0.25) * h;
            let cx = rng.gen_range((margin + rx)..(w - margin - rx));
            let cy = rng.gen_range((margin + ry)..(h - margin - ry));
            Geometry::Ellipse { cx, cy, rx, ry }
        }
        _ => {
            let r = rng.gen_range(0.2..0.32) * w.min(h);
            let cx = rng.gen_range((margin + r)..(w - margin - r));
            let cy = rng.gen_range((margin + r)..(h - margin - r));
            let base = rng.gen_range(0.0..2.0 * PI);
            let mut points = [[0.0; 2]; 3];
            for (k, p) in points.iter_mut().enumerate() {
                let a = base + k as f64 * 2.0 * PI / 3.0 + rng.gen_range(-0.4..0.4);
                *p = [cx + r * a.cos(), cy + r * a.sin()];
            }
            Geometry::Triangle { points }
        }
    }
}

// A rectangle or ellipse whose center stays on the canvas but which crosses
// exactly one edge by 3..=MAX_CROSSING_DEPTH pixels.
fn boundary_geometry(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Geometry {
    let edge = rng.gen_range(0..4);
    let depth = rng.gen_range(3..=MAX_CROSSING_DEPTH) as f64;
    let margin = 2.0;
    if rng.gen_bool(0.5) {
        let bw = (rng.gen_range(0.25..0.45) * w).round();
        let bh = (rng.gen_range(0.25..0.45) * h).round();
        let (x0, y0) = match edge {
            0 => (rng.gen_range(margin..(w - margin - bw)).round(), -depth),
            1 => (rng.gen_range(margin..(w - margin - bw)).round(), h + depth - bh),
            2 => (-depth, rng.gen_range(margin..(h - margin - bh)).round()),
            _ => (w + depth - bw, rng.gen_range(margin..(h - margin - bh)).round()),
        };
        Geometry::Rectangle { x0, y0, x1: x0 + bw, y1: y0 + bh }
    } else {
        let rx = rng.gen_range(0.15..0.25) * w;
        let ry = rng.gen_range(0.15..0.25) * h;
        let (cx, cy) = match edge {
            0 => (rng.gen_range((margin + rx)..(w - margin - rx)), ry - depth),
            1 => (rng.gen_range((margin + rx)..(w - margin - rx)), h + depth - ry),
            2 => (rx - depth, rng.gen_range((margin + ry)..(h - margin - ry))),
            _ => (w + depth - rx, rng.gen_range((margin + ry)..(h - margin - ry))),
        };
        Geometry::Ellipse { cx, cy, rx, ry }
    }
}

fn validate(mut scene: SyntheticScene, spec: &GenSpec) -> Option<SyntheticScene> {
    let canvas = (scene.width * scene.height) as f64;
    let names = scene.names();
    let mut amodal = Vec::new();
    let mut visible = Vec::new();
    for n in &names {
        let a = scene.amodal_mask(n).ok()?;
        let v = scene.visible_mask(n).ok()?;
        if (a.area() as f64) < MIN_AMODAL_FRAC * canvas || (v.area() as f64) < MIN_VISIBLE_FRAC * canvas {
            return None;
        }
        amodal.push(a);
        visible.push(v);
    }

    // Boundary contacts: only the designated crossing shape may touch an edge,
    // and its visible part must touch exactly the edge it crosses.
    for (i, a) in amodal.iter().enumerate() {
        let contacts = a.boundary_contacts();
        if spec.allow_boundary && i == 0 {
            if contacts.len() != 1 || visible[i].boundary_contacts() != contacts {
                return None;
            }
            let e = contacts.iter().next().unwrap();
            let band = BinaryMask::edge_band(1, scene.dims(), e).ok()?;
            if visible[i].intersect(&band).ok()?.area() < 8 {
                return None;
            }
        } else if contacts != EdgeSet::empty() {
            return None;
        }
    }

    // Every occluding pair is adjacent, and some pair overlaps.
    let se = StructuringElement::square(ADJACENCY_RADIUS);
    let dilated: Vec<BinaryMask> = visible.iter().map(|v| v.dilate(&se)).collect();
    let mut any_overlap = false;
    for t in 0..names.len() {
        for c in 0..names.len() {
            if t == c {
                continue;
            }
            if amodal[t].intersects(&amodal[c]).ok()? {
                any_overlap = true;
            }
            if scene.occlusion_truth(&names[t], &names[c]).ok()? && !dilated[t].intersects(&dilated[c]).ok()? {
                return None;
            }
        }
    }
    if !any_overlap {
        return None;
    }

    if !spec.allow_boundary {
        let (best, hidden) = (0..names.len())
            .map(|i| (i, amodal[i].area() - visible[i].area()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))?;
        if hidden == 0 {
            return None;
        }
        scene.target = names[best].clone();
    }
    Some(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(name: &str, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb8, z: i32) -> Shape {
        Shape {
            name: name.into(),
            geometry: Geometry::Rectangle { x0, y0, x1, y1 },
            fill: Fill::Solid { color },
            z,
            detectable: true,
        }
    }

    fn two_rects() -> SyntheticScene {
        SyntheticScene {
            width: 40,
            height: 30,
            seed: 0,
            background_color: [200, 190, 170],
            shapes: vec![
                rect("book", 5.0, 5.0, 20.0, 20.0, [220, 40, 40], 0),
                rect("lamp", 15.0, 10.0, 30.0, 25.0, [40, 70, 220], 1),
            ],
            target: "book".into(),
        }
    }

    #[test]
    fn names_are_not_substrings_of_each_other() {
        for a in NAMES {
            for b in NAMES {
                if a != b {
                    assert!(!a.contains(b), "{a} contains {b}");
                }
            }
        }
    }

    #[test]
    fn palette_far_from_mid_gray_and_backgrounds() {
        for c in PALETTE {
            assert!(c.iter().any(|v| (*v as i32 - 127).abs() >= 60), "{c:?}");
            assert!(!BACKGROUNDS.contains(c));
        }
    }

    #[test]
    fn render_examples() {
        let mut s = two_rects();
        let shapes = std::mem::take(&mut s.shapes);
        assert_eq!(s.render(), Image::filled(40, 30, s.background_color));
        s.shapes = vec![shapes[0].clone()];
        let img = s.render();
        assert_eq!(img.get(5, 5), [220, 40, 40]);
        assert_eq!(img.get(19, 19), [220, 40, 40]);
        assert_eq!(img.get(20, 19), s.background_color);
        s.shapes = shapes;
        // overlap shows the higher shape
        assert_eq!(s.render().get(17, 12), [40, 70, 220]);
    }

    #[test]
    fn visible_and_amodal_masks() {
        let s = two_rects();
        assert_eq!(s.visible_mask("lamp").unwrap(), s.amodal_mask("lamp").unwrap());
        let book_vis = s.visible_mask("book").unwrap();
        assert_eq!(book_vis.area(), 15 * 15 - 5 * 10);
        assert!(matches!(s.amodal_mask("nope"), Err(Error::UnknownShape(_))));
        let mut covered = s.clone();
        covered.shapes[1] = rect("lamp", 0.0, 0.0, 40.0, 30.0, [40, 70, 220], 1);
        assert!(covered.visible_mask("book").unwrap().is_empty());
    }

    #[test]
    fn occlusion_truth_examples() {
        let s = two_rects();
        assert!(s.occlusion_truth("book", "lamp").unwrap());
        assert!(!s.occlusion_truth("lamp", "book").unwrap());
        let mut apart = s.clone();
        apart.shapes[1] = rect("lamp", 25.0, 22.0, 35.0, 29.0, [40, 70, 220], 1);
        assert!(!apart.occlusion_truth("book", "lamp").unwrap());
        assert!(s.occlusion_truth("book", "book").is_err());
        assert!(s.occlusion_truth("book", "x").is_err());
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = GenSpec::default();
        assert_eq!(generate(42, &spec).unwrap(), generate(42, &spec).unwrap());
        assert_ne!(generate(42, &spec).unwrap(), generate(43, &spec).unwrap());
    }

    #[test]
    fn generated_scene_invariants() {
        let spec = GenSpec::default();
        for seed in 0..15 {
            let s = generate(seed, &spec).unwrap();
            let canvas = (s.width * s.height) as f64;
            let n = s.shapes.len();
            assert!((3..=5).contains(&n));
            let mut zs: Vec<i32> = s.shapes.iter().map(|x| x.z).collect();
            zs.sort();
            zs.dedup();
            assert_eq!(zs.len(), n);
            let mut union = BinaryMask::new(s.width, s.height);
            for sh in &s.shapes {
                let a = s.amodal_mask(&sh.name).unwrap();
                let v = s.visible_mask(&sh.name).unwrap();
                assert!(a.area() as f64 >= MIN_AMODAL_FRAC * canvas);
                assert!(a.boundary_contacts().is_empty());
                assert!(!v.intersects(&union).unwrap(), "visible masks overlap");
                union = union.union(&v).unwrap();
            }
            assert_eq!(union, s.background_visible().complement());
            assert!(s.names().contains(&s.target));
        }
    }

    #[test]
    fn two_shapes_overlap_exactly_once() {
        let spec = GenSpec { min_shapes: 2, max_shapes: 2, ..GenSpec::default() };
        for seed in 0..5 {
            let s = generate(seed, &spec).unwrap();
            let a = s.amodal_mask(&s.shapes[0].name).unwrap();
            let b = s.amodal_mask(&s.shapes[1].name).unwrap();
            assert!(a.intersects(&b).unwrap());
        }
    }

    #[test]
    fn boundary_scenes_cross_one_edge() {
        let spec = GenSpec { allow_boundary: true, ..GenSpec::default() };
        for seed in 0..10 {
            let s = generate(seed, &spec).unwrap();
            let vis = s.visible_mask(&s.target).unwrap();
            assert_eq!(vis.boundary_contacts().len(), 1);
            for sh in s.shapes.iter().filter(|x| x.name != s.target) {
                assert!(s.amodal_mask(&sh.name).unwrap().boundary_contacts().is_empty());
            }
        }
    }

    #[test]
    fn visible_decomposition_identity() {
        for seed in 0..10 {
            let s = generate(seed, &GenSpec::default()).unwrap();
            for sh in &s.shapes {
                let amodal = s.amodal_mask(&sh.name).unwrap();
                let mut higher = BinaryMask::new(s.width, s.height);
                for o in s.shapes.iter().filter(|o| o.z > sh.z) {
                    higher = higher.union(&s.amodal_mask(&o.name).unwrap()).unwrap();
                }
                let vis = s.visible_mask(&sh.name).unwrap();
                assert_eq!(vis.union(&amodal.intersect(&higher).unwrap()).unwrap(), amodal);
            }
        }
    }

    #[test]
    fn render_matches_visible_fill() {
        for seed in 0..10 {
            let s = generate(seed, &GenSpec::default()).unwrap();
            let img = s.render();
            for sh in &s.shapes {
                for (x, y) in s.visible_mask(&sh.name).unwrap().iter_set() {
                    assert_eq!(img.get(x, y), sh.fill.color_at(x as i64, y as i64));
                }
            }
        }
    }

    #[test]
    fn occlusion_truth_antisymmetric_on_overlaps() {
        for seed in 0..10 {
            let s = generate(seed, &GenSpec::default()).unwrap();
            for a in &s.shapes {
                for b in s.shapes.iter().filter(|b| b.name != a.name) {
                    let overlap = s.amodal_mask(&a.name).unwrap().intersects(&s.amodal_mask(&b.name).unwrap()).unwrap();
                    if overlap {
                        assert_ne!(
                            s.occlusion_truth(&a.name, &b.name).unwrap(),
                            s.occlusion_truth(&b.name, &a.name).unwrap()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn json_roundtrip_and_bundle() {
        let s = generate(7, &GenSpec::default()).unwrap();
        assert_eq!(SyntheticScene::from_json(&s.to_json().unwrap()).unwrap(), s);
        let dir = tempfile::tempdir().unwrap();
        s.write_bundle(dir.path()).unwrap();
        assert_eq!(SyntheticScene::load_bundle(dir.path()).unwrap(), s);
        assert!(dir.path().join("rendered.png").exists());
        let t = &s.shapes[0].name;
        let m = BinaryMask::load_png(dir.path().join(format!("{t}_visible.png"))).unwrap();
        assert_eq!(m, s.visible_mask(t).unwrap());
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = GenSpec { min_shapes: 1, max_shapes: 3, ..GenSpec::default() };
        assert!(generate(1, &spec).is_err());
    }
}
