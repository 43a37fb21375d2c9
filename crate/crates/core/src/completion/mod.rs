//! The end-to-end completion pipeline.

mod config;
mod rundir;

use std::fmt;
use std::time::Instant;

use serde::Serialize;

pub use config::{parse_background, PipelineConfig, KEYS as CONFIG_KEYS};
pub use rundir::{trace_json, write_run_dir, Timings};

use crate::error::{Error, Result};
use crate::imaging::{
    alpha_blend, alpha_transition, assemble_rgba, composite, pad_canvas, pad_mask, BackgroundFill, Image, Margins,
    RgbaImage,
};
use crate::mask::{BinaryMask, Edge, EdgeSet, StructuringElement};
use crate::occlusion::{build_occluder_mask, expand_boundary, OcclusionReport};
use crate::prompting::{select_prompt, PromptSelection};
use crate::providers::{inpaint_preserving, Grounder, Grounding, ProviderSet};
use crate::scene_analysis::segment_scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stabilized,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    TargetNotFound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub index: usize,
    pub seed: u64,
    pub occ_mask_before: BinaryMask,
    pub occ_mask_after: BinaryMask,
    pub l1_delta: usize,
    pub inpainted: Image,
    pub amodal: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub query: String,
    pub status: Status,
    pub rgba: RgbaImage,
    pub amodal: BinaryMask,
    /// Grounded visible mask on the output canvas.
    pub visible: BinaryMask,
    pub prompt: Option<PromptSelection>,
    /// The prompt exactly as sent to the inpainter.
    pub rendered_prompt: Option<String>,
    pub occlusion: Option<OcclusionReport>,
    pub boundary_edges: EdgeSet,
    pub boundary_rounds: usize,
    pub iterations: Vec<IterationTrace>,
    pub termination: Option<Termination>,
    /// Position of the input image's origin on the output canvas.
    pub canvas_offset: (usize, usize),
    pub input_dims: (usize, usize),
}

impl CompletionResult {
    pub fn is_completed(&self) -> bool {
        self.status == Status::Completed
    }

    fn not_found(query: &str, dims: (usize, usize)) -> Self {
        CompletionResult {
            query: query.to_string(),
            status: Status::TargetNotFound,
            rgba: RgbaImage::transparent(dims.0, dims.1),
            amodal: BinaryMask::new(dims.0, dims.1),
            visible: BinaryMask::new(dims.0, dims.1),
            prompt: None,
            rendered_prompt: None,
            occlusion: None,
            boundary_edges: EdgeSet::empty(),
            boundary_rounds: 0,
            iterations: Vec::new(),
            termination: None,
            canvas_offset: (0, 0),
            input_dims: dims,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Segmentation,
    Occlusion,
    Boundary,
    Prompt,
    Inpainting,
    Blending,
}

/// A run that aborted; `partial` holds the iterations that finished.
#[derive(Debug)]
pub struct CompletionError {
    pub stage: Stage,
    pub error: Error,
    pub partial: Vec<IterationTrace>,
}

impl CompletionError {
    pub fn is_backend(&self) -> bool {
        matches!(self.error, Error::Provider(_))
    }
}

impl fmt::Display for CompletionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} stage failed: {}", self.stage, self.error)?;
        if !self.partial.is_empty() {
            write!(f, " ({} iteration(s) completed)", self.partial.len())?;
        }
        Ok(())
    }
}

impl std::error::Error for CompletionError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait At<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, CompletionError>;
}

impl<T, E: Into<Error>> At<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> std::result::Result<T, CompletionError> {
        self.map_err(|e| CompletionError { stage, error: e.into(), partial: Vec::new() })
    }
}

/// The background-swapped target: visible pixels kept, everything else fill.
pub fn init_target(img: &Image, visible: &BinaryMask, cfg: &PipelineConfig) -> Result<Image> {
    if visible.is_empty() {
        return Err(Error::InvalidArgument("visible mask must be non-empty".into()));
    }
    composite(img, visible, &cfg.background)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub stop: bool,
    pub reason: Option<Termination>,
    pub l1_delta: usize,
}

/// Stop once the occluder mask moved by fewer than ε pixels, or after the
/// iteration cap; the cap wins when both hold.
pub fn should_terminate(prev: &BinaryMask, next: &BinaryMask, t: usize, cfg: &PipelineConfig) -> Result<Decision> {
    let l1_delta = prev.l1_diff(next)?;
    let eps = cfg.epsilon_pixels(prev.width() * prev.height());
    let reason = if t + 1 >= cfg.max_iterations {
        Some(Termination::MaxIterations)
    } else if l1_delta < eps {
        Some(Termination::Stabilized)
    } else {
        None
    };
    Ok(Decision { stop: reason.is_some(), reason, l1_delta })
}

// Closing whose border handling never drops input pixels.
fn close_keep(m: &BinaryMask) -> BinaryMask {
    m.close(&StructuringElement::square(1)).union(m).expect("same dims")
}

fn keep_touching(candidate: &BinaryMask, visible: &BinaryMask, cfg: &PipelineConfig) -> BinaryMask {
    let (w, h) = visible.dims();
    let mut out = BinaryMask::new(w, h);
    for comp in candidate.connected_components(cfg.connectivity) {
        if comp.intersects(visible).expect("same dims") {
            out = out.union(&comp).expect("same dims");
        }
    }
    out
}

/// Amodal mask of an inpainted canvas: pixels that differ from the solid fill
/// by more than `cfg.amodal_tolerance` in some channel, plus `visible`,
/// restricted to components touching `visible`, then closed.
pub fn update_amodal(inpainted: &Image, visible: &BinaryMask, cfg: &PipelineConfig) -> Result<BinaryMask> {
    if inpainted.dims() != visible.dims() {
        return Err(Error::mismatch(inpainted.dims(), visible.dims()));
    }
    let fill = cfg.background.solid_color().ok_or_else(|| {
        Error::InvalidArgument("threshold amodal update needs a solid background; enable amodal_from_provider".into())
    })?;
    let tol = cfg.amodal_tolerance;
    let differs = BinaryMask::from_fn(inpainted.width(), inpainted.height(), |x, y| {
        let p = inpainted.get(x, y);
        (0..3).any(|c| p[c].abs_diff(fill[c]) > tol)
    });
    let candidate = differs.union(visible)?;
    Ok(close_keep(&keep_touching(&candidate, visible, cfg)))
}

/// Amodal mask by re-grounding `descriptor` on the inpainted canvas.
pub fn update_amodal_by_grounding(
    inpainted: &Image,
    visible: &BinaryMask,
    grounder: &dyn Grounder,
    descriptor: &str,
    cfg: &PipelineConfig,
) -> Result<BinaryMask> {
    if inpainted.dims() != visible.dims() {
        return Err(Error::mismatch(inpainted.dims(), visible.dims()));
    }
    let found = match grounder.ground_segment(inpainted, descriptor)? {
        Grounding::Found(m) if m.dims() == visible.dims() => m,
        Grounding::Found(m) => return Err(Error::mismatch(m.dims(), visible.dims())),
        Grounding::NotFound => BinaryMask::new(visible.width(), visible.height()),
    };
    let candidate = found.union(visible)?;
    Ok(close_keep(&keep_touching(&candidate, visible, cfg)))
}

fn margins_for(edges: EdgeSet, r: usize) -> Margins {
    let side = |e| if edges.contains(e) { r } else { 0 };
    Margins { top: side(Edge::Top), bottom: side(Edge::Bottom), left: side(Edge::Left), right: side(Edge::Right) }
}

// Occluder mask on the padded canvas: the expanded mask translated, plus the
// part of each new strip within reach of the target.
fn padded_occ(occ: &BinaryMask, visible: &BinaryMask, margins: Margins, edges: EdgeSet, cfg: &PipelineConfig) -> Result<BinaryMask> {
    let occ_p = pad_mask(occ, margins)?;
    let reach = pad_mask(&visible.union(occ)?, margins)?.dilate(&cfg.boundary_se());
    let dims = occ_p.dims();
    let mut strips = BinaryMask::new(dims.0, dims.1);
    for e in edges.iter() {
        let (w, h) = dims;
        let strip = match e {
            Edge::Top => BinaryMask::from_fn(w, h, |_, y| y < margins.top),
            Edge::Bottom => BinaryMask::from_fn(w, h, |_, y| y >= h - margins.bottom),
            Edge::Left => BinaryMask::from_fn(w, h, |x, _| x < margins.left),
            Edge::Right => BinaryMask::from_fn(w, h, |x, _| x >= w - margins.right),
        };
        strips = strips.union(&strip)?;
    }
    occ_p.union(&reach.intersect(&strips)?)
}

pub fn run_completion(
    img: &Image,
    query: &str,
    providers: &ProviderSet,
    cfg: &PipelineConfig,
) -> std::result::Result<CompletionResult, CompletionError> {
    run_completion_timed(img, query, providers, cfg).map(|(r, _)| r)
}

/// [`run_completion`] plus wall-clock stage timings.
pub fn run_completion_timed(
    img: &Image,
    query: &str,
    providers: &ProviderSet,
    cfg: &PipelineConfig,
) -> std::result::Result<(CompletionResult, Timings), CompletionError> {
    let mut timings = Timings::default();
    let mut clock = Instant::now();
    let mut lap = |timings: &mut Timings, name: &str| {
        let now = Instant::now();
        timings.push(name, now - clock);
        clock = now;
    };

    cfg.validate().at(Stage::Config)?;
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("query must be non-empty".into())).at(Stage::Config);
    }
    if let BackgroundFill::Image(bg) = &cfg.background {
        if bg.dims() != img.dims() {
            return Err(Error::mismatch(bg.dims(), img.dims())).at(Stage::Config);
        }
    }

    let (visible, seg) = match segment_scene(img, providers, query, cfg) {
        Ok(v) => v,
        Err(Error::TargetNotFound(_)) => {
            log::info!("query `{query}` could not be grounded");
            lap(&mut timings, "segmentation");
            return Ok((CompletionResult::not_found(query, img.dims()), timings));
        }
        Err(e) => return Err(e).at(Stage::Segmentation),
    };
    lap(&mut timings, "segmentation");

    let report = build_occluder_mask(img, &visible, &seg, providers.occlusion.as_ref(), cfg)
        .at(Stage::Occlusion)?
        .at(Stage::Occlusion)?;
    log::debug!(
        "{} occluder(s), {} queries, {} skipped",
        report.occluders.len(),
        report.queries_made,
        report.queries_skipped
    );
    lap(&mut timings, "occlusion");

    let expansion = expand_boundary(&report.occ_mask, &visible, cfg).at(Stage::Boundary)?;
    let margins = margins_for(expansion.edges, cfg.boundary_radius);
    let fill = cfg.background.for_padded(margins);
    let (canvas, offset) = pad_canvas(img, margins, &fill).at(Stage::Boundary)?;
    let visible_c = pad_mask(&visible, margins).at(Stage::Boundary)?;
    let occ0 = if margins.is_zero() {
        expansion.occ.clone()
    } else {
        padded_occ(&expansion.occ, &visible, margins, expansion.edges, cfg).at(Stage::Boundary)?
    };
    lap(&mut timings, "boundary");

    let selection =
        select_prompt(&canvas, &visible_c, &seg.tags, query, providers.scorer.as_ref(), &fill, cfg.parallelism)
            .at(Stage::Prompt)?;
    let rendered = cfg.render_prompt(&selection.prompt);
    lap(&mut timings, "prompt");

    let target = composite(&canvas, &visible_c, &fill).at(Stage::Inpainting)?;
    let work_cfg = PipelineConfig { background: fill.clone(), ..cfg.clone() };
    let mut iterations: Vec<IterationTrace> = Vec::new();
    let mut current = target;
    let mut occ = occ0;
    let mut amodal = visible_c.clone();
    let mut termination = Termination::Stabilized;
    if !occ.is_empty() {
        for t in 0.. {
            let seed = cfg.inpaint_seed.wrapping_add(t as u64);
            let step = (|| -> Result<(Image, BinaryMask, BinaryMask, Decision)> {
                let inpainted = inpaint_preserving(providers.inpainter.as_ref(), &current, &occ, &rendered, Some(seed))?;
                let next_amodal = if cfg.amodal_from_provider || cfg.background.solid_color().is_none() {
                    update_amodal_by_grounding(&inpainted, &visible_c, providers.grounder.as_ref(), &selection.prompt, &work_cfg)?
                } else {
                    update_amodal(&inpainted, &visible_c, &work_cfg)?
                };
                let claimed = next_amodal.subtract(&amodal)?.dilate(&cfg.morph_se()).subtract(&visible_c)?;
                let next_occ = occ.union(&claimed)?;
                let decision = should_terminate(&occ, &next_occ, t, cfg)?;
                Ok((inpainted, next_amodal, next_occ, decision))
            })();
            let (inpainted, next_amodal, next_occ, decision) = match step {
                Ok(v) => v,
                Err(error) => return Err(CompletionError { stage: Stage::Inpainting, error, partial: iterations }),
            };
            log::debug!("iteration {t}: l1 delta {}", decision.l1_delta);
            iterations.push(IterationTrace {
                index: t,
                seed,
                occ_mask_before: occ.clone(),
                occ_mask_after: next_occ.clone(),
                l1_delta: decision.l1_delta,
                inpainted: inpainted.clone(),
                amodal: next_amodal.clone(),
            });
            current = inpainted;
            amodal = next_amodal;
            occ = next_occ;
            if let Some(reason) = decision.reason {
                termination = reason;
                break;
            }
        }
    }
    lap(&mut timings, "inpainting");

    let blend = (|| -> Result<(RgbaImage, BinaryMask, BinaryMask)> {
        let alpha = alpha_transition(&visible_c, cfg.transition_width)?;
        let blended = alpha_blend(&canvas, &current, &alpha)?;
        let rgba = assemble_rgba(&blended, &amodal)?;
        Ok((rgba, amodal.clone(), visible_c.clone()))
    })();
    let (mut rgba, mut amodal, mut visible_out) = match blend {
        Ok(v) => v,
        Err(error) => return Err(CompletionError { stage: Stage::Blending, error, partial: iterations }),
    };
    let mut canvas_offset = offset;
    if !cfg.keep_expanded_canvas && !margins.is_zero() {
        let (w, h) = img.dims();
        let crop = (|| -> Result<(RgbaImage, BinaryMask, BinaryMask)> {
            Ok((crop_rgba(&rgba, offset, (w, h))?, amodal.crop(offset.0, offset.1, w, h)?, visible_out.crop(offset.0, offset.1, w, h)?))
        })();
        (rgba, amodal, visible_out) = match crop {
            Ok(v) => v,
            Err(error) => return Err(CompletionError { stage: Stage::Blending, error, partial: iterations }),
        };
        canvas_offset = (0, 0);
    }
    lap(&mut timings, "blending");

    let result = CompletionResult {
        query: query.to_string(),
        status: Status::Completed,
        rgba,
        amodal,
        visible: visible_out,
        prompt: Some(selection),
        rendered_prompt: Some(rendered),
        occlusion: Some(report),
        boundary_edges: expansion.edges,
        boundary_rounds: expansion.rounds,
        iterations,
        termination: Some(termination),
        canvas_offset,
        input_dims: img.dims(),
    };
    Ok((result, timings))
}

fn crop_rgba(img: &RgbaImage, at: (usize, usize), dims: (usize, usize)) -> Result<RgbaImage> {
    let rgb = img.rgb().crop(at.0, at.1, dims.0, dims.1)?;
    let alpha = img.alpha_mask().crop(at.0, at.1, dims.0, dims.1)?;
    assemble_rgba(&rgb, &alpha)
}
