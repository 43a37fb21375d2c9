//! Deterministic in-process providers backed by a [`SyntheticScene`].
//!
//! Every synthetic fill color is unique within a scene, so the oracle reads
//! layer identity straight off pixel colors. That keeps the mocks pure
//! functions of `(scene, inputs)` and lets them work on any derived image:
//! background-swapped targets, inpainted canvases, padded canvases and crops.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    require, Grounder, Grounding, Inpainter, LabeledMask, OcclusionOracle, OcclusionRelation, ProviderResult, Score,
    SegmentDetector, TagSet, Tagger, TextImageScorer,
};
use crate::imaging::{Image, Rgb8};
use crate::mask::{BinaryMask, Edge, EdgeSet};
use crate::synth::SyntheticScene;

pub const MATCH_SCORE: f64 = 1.0;
pub const MISMATCH_SCORE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layer {
    Shape(usize),
    Background,
}

/// All six roles answered from scene ground truth.
pub struct SceneOracle {
    scene: SyntheticScene,
    /// shape indices by ascending z
    order: Vec<usize>,
    colors: HashMap<Rgb8, Layer>,
    occludes: Vec<Vec<bool>>,
    visible_edges: Vec<EdgeSet>,
}

impl SceneOracle {
    pub fn new(scene: SyntheticScene) -> Self {
        let mut order: Vec<usize> = (0..scene.shapes.len()).collect();
        order.sort_by_key(|i| scene.shapes[*i].z);
        let mut colors = HashMap::new();
        colors.insert(scene.background_color, Layer::Background);
        for (i, s) in scene.shapes.iter().enumerate() {
            for c in s.fill.colors() {
                colors.insert(c, Layer::Shape(i));
            }
        }
        let n = scene.shapes.len();
        let names = scene.names();
        let occludes = (0..n)
            .map(|t| {
                (0..n)
                    .map(|c| t != c && scene.occlusion_truth(&names[t], &names[c]).unwrap_or(false))
                    .collect()
            })
            .collect();
        let visible_edges = names
            .iter()
            .map(|n| scene.visible_mask(n).map(|m| m.boundary_contacts()).unwrap_or_default())
            .collect();
        SceneOracle { scene, order, colors, occludes, visible_edges }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }

    fn shape_color_mask(&self, img: &Image, idx: usize) -> BinaryMask {
        let cs = self.scene.shapes[idx].fill.colors();
        BinaryMask::from_fn(img.width(), img.height(), |x, y| cs.contains(&img.get(x, y)))
    }

    fn layer_counts(&self, img: &Image, within: Option<&BinaryMask>) -> (Vec<usize>, usize) {
        let mut shape_counts = vec![0usize; self.scene.shapes.len()];
        let mut background = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if within.is_some_and(|m| !m.get(x, y)) {
                    continue;
                }
                match self.colors.get(&img.get(x, y)) {
                    Some(Layer::Shape(i)) => shape_counts[*i] += 1,
                    Some(Layer::Background) => background += 1,
                    None => {}
                }
            }
        }
        (shape_counts, background)
    }

    // Layer covering most of the mask; ties favour the lower layer.
    fn owner(&self, img: &Image, mask: &BinaryMask) -> Option<Layer> {
        let (counts, bg) = self.layer_counts(img, Some(mask));
        let mut best = (bg, Layer::Background);
        for &i in &self.order {
            if counts[i] > best.0 {
                best = (counts[i], Layer::Shape(i));
            }
        }
        (best.0 > 0).then_some(best.1)
    }

    /// Shape named by `text`: exact name, else the longest name occurring as a
    /// whole word.
    fn named(&self, text: &str) -> Option<usize> {
        let t = text.trim().to_lowercase();
        if let Some(i) = self.scene.shapes.iter().position(|s| s.name == t) {
            return Some(i);
        }
        let words: Vec<&str> = t.split(|c: char| !c.is_alphanumeric() && c != '-' && c != '_').collect();
        self.order
            .iter()
            .copied()
            .filter(|i| words.contains(&self.scene.shapes[*i].name.as_str()))
            .max_by_key(|i| self.scene.shapes[*i].name.len())
    }

    // Where the scene origin sits on a (possibly padded) canvas, given the
    // edges the pipeline pads for this shape.
    fn scene_offset(&self, idx: usize, dims: (usize, usize)) -> ProviderResult<(usize, usize)> {
        let (w, h) = self.scene.dims();
        require(dims.0 >= w && dims.1 >= h, "image is smaller than the scene canvas")?;
        let e = self.visible_edges[idx];
        let split = |extra: usize, lo: Edge, hi: Edge| match (e.contains(lo), e.contains(hi)) {
            (true, true) => extra / 2,
            (true, false) => extra,
            _ => 0,
        };
        Ok((split(dims.0 - w, Edge::Left, Edge::Right), split(dims.1 - h, Edge::Top, Edge::Bottom)))
    }
}

impl Grounder for SceneOracle {
    fn ground_segment(&self, img: &Image, query: &str) -> ProviderResult<Grounding> {
        require(!query.trim().is_empty(), "query must be non-empty")?;
        let Some(idx) = self.named(query) else {
            return Ok(Grounding::NotFound);
        };
        let m = self.shape_color_mask(img, idx);
        Ok(if m.is_empty() { Grounding::NotFound } else { Grounding::Found(m) })
    }
}

impl Tagger for SceneOracle {
    fn tag_scene(&self, img: &Image) -> ProviderResult<TagSet> {
        let (counts, _) = self.layer_counts(img, None);
        Ok(TagSet::new(
            self.order.iter().filter(|i| counts[**i] > 0).map(|i| self.scene.shapes[*i].name.as_str()),
        ))
    }
}

impl SegmentDetector for SceneOracle {
    fn detect_segments(&self, img: &Image, tags: &TagSet) -> ProviderResult<Vec<LabeledMask>> {
        let mut out = Vec::new();
        for &i in &self.order {
            let s = &self.scene.shapes[i];
            if !s.detectable || !tags.iter().any(|t| *t == s.name) {
                continue;
            }
            let mask = self.shape_color_mask(img, i);
            if !mask.is_empty() {
                out.push(LabeledMask { label: s.name.clone(), mask });
            }
        }
        Ok(out)
    }
}

impl OcclusionOracle for SceneOracle {
    fn occlusion_order(&self, img: &Image, target: &BinaryMask, candidate: &BinaryMask) -> ProviderResult<OcclusionRelation> {
        require(!target.is_empty() && !candidate.is_empty(), "occlusion masks must be non-empty")?;
        require(
            target.dims() == img.dims() && candidate.dims() == img.dims(),
            "occlusion masks must match the image dimensions",
        )?;
        let occludes_target = match (self.owner(img, target), self.owner(img, candidate)) {
            (Some(Layer::Shape(t)), Some(Layer::Shape(c))) => self.occludes[t][c],
            _ => false,
        };
        Ok(OcclusionRelation { occludes_target })
    }
}

impl TextImageScorer for SceneOracle {
    /// [`MATCH_SCORE`] when `text` names the shape whose colors dominate the
    /// image, [`MISMATCH_SCORE`] otherwise.
    fn score_text_image(&self, img: &Image, text: &str) -> ProviderResult<Score> {
        require(!text.trim().is_empty(), "score text must be non-empty")?;
        let (counts, _) = self.layer_counts(img, None);
        let mut isolated: Option<usize> = None;
        for &i in &self.order {
            if counts[i] > 0 && isolated.is_none_or(|b| counts[i] > counts[b]) {
                isolated = Some(i);
            }
        }
        let hit = isolated.is_some_and(|i| self.scene.shapes[i].name == text.trim().to_lowercase());
        Score::new(if hit { MATCH_SCORE } else { MISMATCH_SCORE })
    }
}

impl Inpainter for SceneOracle {
    /// Paints the prompt's shape wherever its full extent covers the region;
    /// other region pixels keep their input value (the clean background of an
    /// isolated target).
    fn inpaint(&self, img: &Image, region: &BinaryMask, prompt: &str, _seed: Option<u64>) -> ProviderResult<Image> {
        require(!region.is_empty(), "inpaint region must be non-empty")?;
        require(region.dims() == img.dims(), "region must match the image dimensions")?;
        let mut out = img.clone();
        let Some(idx) = self.named(prompt) else {
            log::debug!("oracle inpainter: prompt `{prompt}` names no scene shape");
            return Ok(out);
        };
        let (ox, oy) = self.scene_offset(idx, img.dims())?;
        let shape = &self.scene.shapes[idx];
        for (x, y) in region.iter_set() {
            let sx = x as i64 - ox as i64;
            let sy = y as i64 - oy as i64;
            if shape.geometry.contains(sx as f64 + 0.5, sy as f64 + 0.5) {
                out.put(x, y, shape.fill.color_at(sx, sy));
            }
        }
        Ok(out)
    }
}

/// Fills the region with seeded uniform noise; never converges.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoisyInpainter;

impl Inpainter for NoisyInpainter {
    fn inpaint(&self, img: &Image, region: &BinaryMask, _prompt: &str, seed: Option<u64>) -> ProviderResult<Image> {
        require(!region.is_empty(), "inpaint region must be non-empty")?;
        require(region.dims() == img.dims(), "region must match the image dimensions")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        let mut out = img.clone();
        for (x, y) in region.iter_set() {
            out.put(x, y, [rng.gen(), rng.gen(), rng.gen()]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{composite, BackgroundFill};
    use crate::synth::{generate, Fill, GenSpec, Geometry, Shape};

    fn scene() -> SyntheticScene {
        let rect = |name: &str, g: [f64; 4], color: Rgb8, z: i32| Shape {
            name: name.into(),
            geometry: Geometry::Rectangle { x0: g[0], y0: g[1], x1: g[2], y1: g[3] },
            fill: Fill::Solid { color },
            z,
            detectable: true,
        };
        SyntheticScene {
            width: 48,
            height: 40,
            seed: 0,
            background_color: [200, 190, 170],
            shapes: vec![
                rect("book", [5.0, 5.0, 25.0, 25.0], [220, 40, 40], 0),
                rect("lamp", [18.0, 12.0, 38.0, 32.0], [40, 70, 220], 2),
                rect("vase", [30.0, 2.0, 45.0, 10.0], [40, 180, 60], 1),
            ],
            target: "book".into(),
        }
    }

    #[test]
    fn grounding_returns_visible_mask_or_not_found() {
        let s = scene();
        let o = SceneOracle::new(s.clone());
        let img = s.render();
        assert_eq!(o.ground_segment(&img, "book").unwrap(), Grounding::Found(s.visible_mask("book").unwrap()));
        assert_eq!(o.ground_segment(&img, "the Book in this image").unwrap(), Grounding::Found(s.visible_mask("book").unwrap()));
        assert_eq!(o.ground_segment(&img, "unicorn").unwrap(), Grounding::NotFound);
        assert!(o.ground_segment(&img, "  ").is_err());
    }

    #[test]
    fn tags_in_z_order_and_empty_scene() {
        let s = scene();
        let o = SceneOracle::new(s.clone());
        assert_eq!(o.tag_scene(&s.render()).unwrap().as_slice(), &["book", "vase", "lamp"]);
        let mut empty = s.clone();
        empty.shapes.clear();
        let o = SceneOracle::new(empty.clone());
        assert!(o.tag_scene(&empty.render()).unwrap().is_empty());
    }

    #[test]
    fn detection_mirrors_visible_masks() {
        let s = scene();
        let o = SceneOracle::new(s.clone());
        let img = s.render();
        let tags = o.tag_scene(&img).unwrap();
        let segs = o.detect_segments(&img, &tags).unwrap();
        assert_eq!(segs.len(), 3);
        for seg in &segs {
            assert_eq!(seg.mask, s.visible_mask(&seg.label).unwrap());
            assert_eq!(seg.mask.dims(), img.dims());
        }
        assert!(o.detect_segments(&img, &TagSet::default()).unwrap().is_empty());
    }

    #[test]
    fn occlusion_from_z_order() {
        let s = scene();
        let o = SceneOracle::new(s.clone());
        let img = s.render();
        let book = s.visible_mask("book").unwrap();
        let lamp = s.visible_mask("lamp").unwrap();
        let vase = s.visible_mask("vase").unwrap();
        assert!(o.occlusion_order(&img, &book, &lamp).unwrap().occludes_target);
        assert!(!o.occlusion_order(&img, &lamp, &book).unwrap().occludes_target);
        // higher but disjoint
        assert!(!o.occlusion_order(&img, &book, &vase).unwrap().occludes_target);
        assert!(!o.occlusion_order(&img, &book, &book).unwrap().occludes_target);
        assert!(o.occlusion_order(&img, &book, &BinaryMask::new(48, 40)).is_err());
    }

    #[test]
    fn scorer_matches_isolated_shape() {
        let s = scene();
        let o = SceneOracle::new(s.clone());
        let swapped = composite(&s.render(), &s.visible_mask("book").unwrap(), &BackgroundFill::default()).unwrap();
        assert_eq!(o.score_text_image(&swapped, "book").unwrap().value(), 1.0);
        assert_eq!(o.score_text_image(&swapped, "lamp").unwrap().value(), 0.2);
        assert_eq!(o.score_text_image(&swapped, "something").unwrap().value(), 0.2);
        assert_eq!(
            o.score_text_image(&swapped, "book").unwrap(),
            o.score_text_image(&swapped, "book").unwrap()
        );
    }

    #[test]
    fn oracle_inpainter_reconstructs_hidden_part() {
        let s = scene();
        let o = SceneOracle::new(s.clone());
        let fill = BackgroundFill::default();
        let vis = s.visible_mask("book").unwrap();
        let target = composite(&s.render(), &vis, &fill).unwrap();
        let region = s.visible_mask("lamp").unwrap();
        let out = o.inpaint(&target, &region, "a complete photo of book", None).unwrap();
        let amodal = s.amodal_mask("book").unwrap();
        for y in 0..40 {
            for x in 0..48 {
                let expect = if amodal.get(x, y) { [220, 40, 40] } else { [127, 127, 127] };
                assert_eq!(out.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn oracle_inpainter_on_padded_canvas() {
        let spec = GenSpec { allow_boundary: true, ..GenSpec::default() };
        let s = generate(3, &spec).unwrap();
        let o = SceneOracle::new(s.clone());
        let e = s.visible_mask(&s.target).unwrap().boundary_contacts();
        let pad = 8;
        let (ox, oy) = (if e.contains(Edge::Left) { pad } else { 0 }, if e.contains(Edge::Top) { pad } else { 0 });
        let dims = (
            s.width + if e.contains(Edge::Left) || e.contains(Edge::Right) { pad } else { 0 },
            s.height + if e.contains(Edge::Top) || e.contains(Edge::Bottom) { pad } else { 0 },
        );
        let img = Image::filled(dims.0, dims.1, [127, 127, 127]);
        let out = o.inpaint(&img, &BinaryMask::full(dims.0, dims.1), &s.target, None).unwrap();
        let truth = s.shape(&s.target).unwrap().rasterize(dims, (ox, oy));
        let painted = BinaryMask::from_fn(dims.0, dims.1, |x, y| out.get(x, y) != [127, 127, 127]);
        assert_eq!(painted, truth);
    }

    #[test]
    fn noisy_inpainter_is_seeded() {
        let img = Image::filled(16, 16, [127, 127, 127]);
        let region = BinaryMask::from_fn(16, 16, |x, _| x > 8);
        let a = NoisyInpainter.inpaint(&img, &region, "p", Some(5)).unwrap();
        assert_eq!(a, NoisyInpainter.inpaint(&img, &region, "p", Some(5)).unwrap());
        assert_ne!(a, NoisyInpainter.inpaint(&img, &region, "p", Some(6)).unwrap());
        for (x, y) in region.complement().iter_set() {
            assert_eq!(a.get(x, y), img.get(x, y));
        }
    }
}
