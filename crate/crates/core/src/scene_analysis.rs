//! Scene decomposition: the grounded target, detected objects, and the
//! background segments carved from whatever no object claims.

use std::path::Path;

use serde::Serialize;

use crate::completion::PipelineConfig;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mask::{BinaryMask, Connectivity, StructuringElement};
use crate::providers::{Grounding, LabeledMask, ProviderSet, TagSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSegmentation {
    pub tags: TagSet,
    pub objects: Vec<LabeledMask>,
    /// Largest first.
    pub background: Vec<BinaryMask>,
}

impl SceneSegmentation {
    pub fn background_label(index: usize) -> String {
        format!("background-{}", index + 1)
    }

    /// One PNG per mask plus `index.json`.
    pub fn write_debug(&self, dir: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Obj<'a> {
            label: &'a str,
            file: String,
        }
        #[derive(Serialize)]
        struct Index<'a> {
            tags: &'a TagSet,
            objects: Vec<Obj<'a>>,
            background: Vec<String>,
        }
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut objects = Vec::new();
        for (i, o) in self.objects.iter().enumerate() {
            let file = format!("object-{:02}.png", i + 1);
            o.mask.save_png(dir.join(&file))?;
            objects.push(Obj { label: &o.label, file });
        }
        let mut background = Vec::new();
        for (i, b) in self.background.iter().enumerate() {
            let file = format!("{}.png", Self::background_label(i));
            b.save_png(dir.join(&file))?;
            background.push(file);
        }
        let index = Index { tags: &self.tags, objects, background };
        std::fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }
}

/// Ground the query, tag the scene, detect objects, and derive background
/// segments. Grounding runs alongside tagging and detection.
pub fn segment_scene(
    img: &Image,
    providers: &ProviderSet,
    query: &str,
    cfg: &PipelineConfig,
) -> Result<(BinaryMask, SceneSegmentation)> {
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("query must be non-empty".into()));
    }
    let (grounding, detected) = std::thread::scope(|s| {
        let g = s.spawn(|| providers.grounder.ground_segment(img, query));
        let d = (|| {
            let tags = providers.tagger.tag_scene(img)?;
            let objects = providers.detector.detect_segments(img, &tags)?;
            Ok::<_, crate::providers::ProviderError>((tags, objects))
        })();
        (g.join().expect("grounding thread panicked"), d)
    });
    let visible = match grounding? {
        Grounding::Found(m) if !m.is_empty() => m,
        _ => return Err(Error::TargetNotFound(query.to_string())),
    };
    if visible.dims() != img.dims() {
        return Err(Error::mismatch(visible.dims(), img.dims()));
    }
    let (tags, objects) = detected?;
    for o in &objects {
        if o.mask.dims() != img.dims() {
            return Err(Error::mismatch(o.mask.dims(), img.dims()));
        }
    }
    let mut claimed: Vec<&BinaryMask> = objects.iter().map(|o| &o.mask).collect();
    claimed.push(&visible);
    let background = background_segments(img, &claimed, cfg)?;
    Ok((visible, SceneSegmentation { tags, objects, background }))
}

/// Unclaimed pixels after an opening: complement of the union of `objects`,
/// eroded then dilated by `se`.
pub fn unclaimed_region(dims: (usize, usize), objects: &[&BinaryMask], se: &StructuringElement) -> Result<BinaryMask> {
    let mut union = BinaryMask::new(dims.0, dims.1);
    for m in objects {
        union = union.union(m)?;
    }
    Ok(union.complement().open(se))
}

/// Background segments with explicit parameters.
pub fn background_segments_with(
    dims: (usize, usize),
    objects: &[&BinaryMask],
    se: &StructuringElement,
    connectivity: Connectivity,
    min_area: usize,
) -> Result<Vec<BinaryMask>> {
    let region = unclaimed_region(dims, objects, se)?;
    Ok(region
        .connected_components(connectivity)
        .into_iter()
        .filter(|c| c.area() >= min_area)
        .collect())
}

pub fn background_segments(img: &Image, objects: &[&BinaryMask], cfg: &PipelineConfig) -> Result<Vec<BinaryMask>> {
    let (w, h) = img.dims();
    background_segments_with((w, h), objects, &cfg.morph_se(), cfg.connectivity, cfg.min_bg_area(w * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(objects: &[BinaryMask], min_area: usize) -> Vec<BinaryMask> {
        let refs: Vec<&BinaryMask> = objects.iter().collect();
        background_segments_with((30, 30), &refs, &StructuringElement::square(2), Connectivity::Eight, min_area).unwrap()
    }

    #[test]
    fn fully_covered_canvas_has_no_background() {
        assert!(run(&[BinaryMask::full(30, 30)], 1).is_empty());
    }

    #[test]
    fn no_objects_gives_one_canvas_segment() {
        let segs = run(&[], 1);
        assert_eq!(segs, vec![BinaryMask::full(30, 30)]);
        assert!(run(&[], 901).is_empty());
    }

    #[test]
    fn l_shaped_leftover_respects_min_area() {
        // 5-wide column plus a 6-tall foot: 150 + 150 px
        let leftover = BinaryMask::from_fn(30, 30, |x, y| x < 5 || y >= 24);
        assert_eq!(leftover.area(), 300);
        let object = leftover.complement();
        assert_eq!(run(&[object.clone()], 100), vec![leftover]);
        assert!(run(&[object], 500).is_empty());
    }

    #[test]
    fn thin_slivers_are_removed_by_the_opening() {
        // two objects leaving a 2-pixel gap between them
        let a = BinaryMask::from_fn(30, 30, |x, _| x < 14);
        let b = BinaryMask::from_fn(30, 30, |x, _| x >= 16);
        assert!(run(&[a, b], 1).is_empty());
    }
}
