//! Occluder mask construction and boundary-aware expansion.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::completion::PipelineConfig;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mask::{BinaryMask, EdgeSet};
use crate::par::parallel_map;
use crate::providers::{OcclusionOracle, ProviderError};
use crate::scene_analysis::SceneSegmentation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentSource {
    Object { label: String },
    Background { index: usize },
}

impl fmt::Display for SegmentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentSource::Object { label } => write!(f, "{label}"),
            SegmentSource::Background { index } => write!(f, "{}", SceneSegmentation::background_label(*index)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occluder {
    pub source: SegmentSource,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionReport {
    pub occluders: Vec<Occluder>,
    /// Union of occluder masks minus the visible target, before boundary
    /// expansion.
    pub occ_mask: BinaryMask,
    pub boundary_edges: EdgeSet,
    pub queries_made: usize,
    pub queries_skipped: usize,
}

/// Oracle failure with whatever the successful queries established.
#[derive(Debug)]
pub struct OcclusionFailure {
    pub source: ProviderError,
    pub partial: OcclusionReport,
}

impl fmt::Display for OcclusionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} occluder(s) found)", self.source, self.partial.occluders.len())
    }
}

impl std::error::Error for OcclusionFailure {}

impl From<OcclusionFailure> for Error {
    fn from(f: OcclusionFailure) -> Error {
        Error::Provider(f.source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plan {
    Query,
    SelfOverlap,
    NotAdjacent,
}

fn candidates(seg: &SceneSegmentation) -> Vec<(SegmentSource, &BinaryMask)> {
    let objects = seg
        .objects
        .iter()
        .map(|o| (SegmentSource::Object { label: o.label.clone() }, &o.mask));
    let background = seg
        .background
        .iter()
        .enumerate()
        .map(|(i, m)| (SegmentSource::Background { index: i }, m));
    objects.chain(background).collect()
}

fn check_inputs(img: &Image, visible: &BinaryMask, seg: &SceneSegmentation) -> Result<()> {
    if visible.is_empty() {
        return Err(Error::InvalidArgument("visible mask must be non-empty".into()));
    }
    if visible.dims() != img.dims() {
        return Err(Error::mismatch(visible.dims(), img.dims()));
    }
    for (_, m) in candidates(seg) {
        if m.dims() != img.dims() {
            return Err(Error::mismatch(m.dims(), img.dims()));
        }
    }
    Ok(())
}

fn assemble(
    visible: &BinaryMask,
    cands: &[(SegmentSource, &BinaryMask)],
    answers: Vec<Option<std::result::Result<bool, ProviderError>>>,
) -> std::result::Result<OcclusionReport, OcclusionFailure> {
    let (w, h) = visible.dims();
    let mut occluders = Vec::new();
    let mut union = BinaryMask::new(w, h);
    let mut queries_made = 0;
    let mut queries_skipped = 0;
    let mut failure = None;
    for ((source, mask), answer) in cands.iter().zip(answers) {
        match answer {
            None => queries_skipped += 1,
            Some(Ok(hit)) => {
                queries_made += 1;
                if hit {
                    union = union.union(mask).expect("dims checked");
                    occluders.push(Occluder { source: source.clone(), mask: (*mask).clone() });
                }
            }
            Some(Err(e)) => {
                queries_made += 1;
                failure.get_or_insert(e);
            }
        }
    }
    let report = OcclusionReport {
        occluders,
        occ_mask: union.subtract(visible).expect("dims checked"),
        boundary_edges: visible.boundary_contacts(),
        queries_made,
        queries_skipped,
    };
    match failure {
        Some(source) => Err(OcclusionFailure { source, partial: report }),
        None => Ok(report),
    }
}

/// Query the oracle for every segment that could occlude the target and
/// union the positives. Segments that are the target itself (IoU with
/// `visible` at least `cfg.self_overlap_iou`) or that do not touch it after a
/// dilation by the morphology radius are skipped.
pub fn build_occluder_mask(
    img: &Image,
    visible: &BinaryMask,
    seg: &SceneSegmentation,
    oracle: &dyn OcclusionOracle,
    cfg: &PipelineConfig,
) -> Result<std::result::Result<OcclusionReport, OcclusionFailure>> {
    check_inputs(img, visible, seg)?;
    let cands = candidates(seg);
    let se = cfg.morph_se();
    let reach = visible.dilate(&se);
    let plans: Vec<Plan> = cands
        .iter()
        .map(|(_, m)| {
            if m.is_empty() || visible.iou(m).expect("dims checked") >= cfg.self_overlap_iou {
                Plan::SelfOverlap
            } else if !m.dilate(&se).intersects(&reach).expect("dims checked") {
                Plan::NotAdjacent
            } else {
                Plan::Query
            }
        })
        .collect();
    let answers = parallel_map(&cands, cfg.parallelism, |i, (_, m)| {
        (plans[i] == Plan::Query).then(|| oracle.occlusion_order(img, visible, m).map(|r| r.occludes_target))
    });
    Ok(assemble(visible, &cands, answers))
}

/// Reference construction: every non-empty segment is queried, nothing is
/// skipped, and queries run sequentially.
pub fn build_occluder_mask_exhaustive(
    img: &Image,
    visible: &BinaryMask,
    seg: &SceneSegmentation,
    oracle: &dyn OcclusionOracle,
) -> Result<std::result::Result<OcclusionReport, OcclusionFailure>> {
    check_inputs(img, visible, seg)?;
    let cands = candidates(seg);
    let answers = cands
        .iter()
        .map(|(_, m)| (!m.is_empty()).then(|| oracle.occlusion_order(img, visible, m).map(|r| r.occludes_target)))
        .collect();
    Ok(assemble(visible, &cands, answers))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryExpansion {
    pub occ: BinaryMask,
    pub edges: EdgeSet,
    pub rounds: usize,
}

/// Grow `occ` along every canvas edge `visible` touches: the dilated visible
/// mask intersected with a band along each contacted edge, minus `visible`,
/// repeated until stable or `cfg.max_boundary_rounds` rounds have run.
pub fn expand_boundary(occ: &BinaryMask, visible: &BinaryMask, cfg: &PipelineConfig) -> Result<BoundaryExpansion> {
    if occ.dims() != visible.dims() {
        return Err(Error::mismatch(occ.dims(), visible.dims()));
    }
    let edges = visible.boundary_contacts();
    if edges.is_empty() {
        return Ok(BoundaryExpansion { occ: occ.clone(), edges, rounds: 0 });
    }
    let dims = visible.dims();
    let band_width = cfg.band_width.min(dims.0.min(dims.1) - 1).max(1);
    let mut bands = BinaryMask::new(dims.0, dims.1);
    for e in edges.iter() {
        bands = bands.union(&BinaryMask::edge_band(band_width, dims, e)?)?;
    }
    let grow = visible.dilate(&cfg.boundary_se()).intersect(&bands)?.subtract(visible)?;
    let mut current = occ.subtract(visible)?;
    let mut rounds = 0;
    while rounds < cfg.max_boundary_rounds {
        let next = current.union(&grow)?;
        rounds += 1;
        let delta = next.l1_diff(&current)?;
        current = next;
        if delta == 0 {
            break;
        }
    }
    Ok(BoundaryExpansion { occ: current, edges, rounds })
}

impl OcclusionReport {
    /// `occlusion.json` plus one PNG per occluder and the union.
    pub fn write_debug(&self, dir: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            source: &'a SegmentSource,
            file: String,
        }
        #[derive(Serialize)]
        struct Index<'a> {
            occluders: Vec<Entry<'a>>,
            occ_mask: &'static str,
            boundary_edges: EdgeSet,
            queries_made: usize,
            queries_skipped: usize,
        }
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut occluders = Vec::new();
        for (i, o) in self.occluders.iter().enumerate() {
            let file = format!("occluder-{:02}.png", i + 1);
            o.mask.save_png(dir.join(&file))?;
            occluders.push(Entry { source: &o.source, file });
        }
        self.occ_mask.save_png(dir.join("occ_mask.png"))?;
        let index = Index {
            occluders,
            occ_mask: "occ_mask.png",
            boundary_edges: self.boundary_edges,
            queries_made: self.queries_made,
            queries_skipped: self.queries_skipped,
        };
        std::fs::write(dir.join("occlusion.json"), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }
}
