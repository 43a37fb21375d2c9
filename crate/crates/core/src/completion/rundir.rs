//! Run directory layout: `result.png`, `amodal.png`, `trace.json`,
//! `timings.json`, and per-iteration images with `debug`.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::{CompletionResult, PipelineConfig, Status, Termination};
use crate::error::Result;
use crate::mask::EdgeSet;
use crate::occlusion::SegmentSource;
use crate::prompting::CandidateScore;

/// Wall-clock time per pipeline stage, in milliseconds. Kept out of
/// `trace.json` so traces stay byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn push(&mut self, name: &str, d: Duration) {
        self.stages.push((name.to_string(), d.as_secs_f64() * 1e3));
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|(_, ms)| ms).sum()
    }
}

#[derive(Serialize)]
struct PromptTrace<'a> {
    selected: &'a str,
    rendered: &'a str,
    scores: &'a [CandidateScore],
}

#[derive(Serialize)]
struct OcclusionTrace<'a> {
    occluders: Vec<&'a SegmentSource>,
    queries_made: usize,
    queries_skipped: usize,
    occ_area: usize,
}

#[derive(Serialize)]
struct IterTrace {
    index: usize,
    seed: u64,
    occ_area_before: usize,
    occ_area_after: usize,
    l1_delta: usize,
    amodal_area: usize,
}

#[derive(Serialize)]
struct Trace<'a> {
    query: &'a str,
    status: Status,
    termination: Option<Termination>,
    input_dims: (usize, usize),
    output_dims: (usize, usize),
    canvas_offset: (usize, usize),
    boundary_edges: EdgeSet,
    boundary_rounds: usize,
    visible_area: usize,
    amodal_area: usize,
    config: &'a PipelineConfig,
    prompt: Option<PromptTrace<'a>>,
    occlusion: Option<OcclusionTrace<'a>>,
    iterations: Vec<IterTrace>,
}

/// Deterministic JSON description of a run.
pub fn trace_json(result: &CompletionResult, cfg: &PipelineConfig) -> Result<String> {
    let trace = Trace {
        query: &result.query,
        status: result.status,
        termination: result.termination,
        input_dims: result.input_dims,
        output_dims: result.rgba.dims(),
        canvas_offset: result.canvas_offset,
        boundary_edges: result.boundary_edges,
        boundary_rounds: result.boundary_rounds,
        visible_area: result.visible.area(),
        amodal_area: result.amodal.area(),
        config: cfg,
        prompt: result.prompt.as_ref().map(|p| PromptTrace {
            selected: &p.prompt,
            rendered: result.rendered_prompt.as_deref().unwrap_or_default(),
            scores: &p.scores,
        }),
        occlusion: result.occlusion.as_ref().map(|o| OcclusionTrace {
            occluders: o.occluders.iter().map(|x| &x.source).collect(),
            queries_made: o.queries_made,
            queries_skipped: o.queries_skipped,
            occ_area: o.occ_mask.area(),
        }),
        iterations: result
            .iterations
            .iter()
            .map(|it| IterTrace {
                index: it.index,
                seed: it.seed,
                occ_area_before: it.occ_mask_before.area(),
                occ_area_after: it.occ_mask_after.area(),
                l1_delta: it.l1_delta,
                amodal_area: it.amodal.area(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&trace)?;
    s.push('\n');
    Ok(s)
}

/// Write a run directory. `result.png` and `amodal.png` only exist for
/// completed runs.
pub fn write_run_dir(
    dir: impl AsRef<Path>,
    result: &CompletionResult,
    cfg: &PipelineConfig,
    timings: Option<&Timings>,
    debug: bool,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    if result.status == Status::Completed {
        result.rgba.save_png(dir.join("result.png"))?;
        result.amodal.save_png(dir.join("amodal.png"))?;
    }
    std::fs::write(dir.join("trace.json"), trace_json(result, cfg)?)?;
    if let Some(t) = timings {
        std::fs::write(dir.join("timings.json"), serde_json::to_vec_pretty(t)?)?;
    }
    if debug && result.status == Status::Completed {
        result.visible.save_png(dir.join("visible.png"))?;
        if let Some(p) = &result.prompt {
            p.swapped_target.save_png(dir.join("swapped_target.png"))?;
        }
        if let Some(o) = &result.occlusion {
            o.write_debug(dir.join("occlusion"))?;
        }
        for it in &result.iterations {
            it.inpainted.save_png(dir.join(format!("iter-{:02}-inpainted.png", it.index)))?;
            it.occ_mask_before.save_png(dir.join(format!("iter-{:02}-occ.png", it.index)))?;
            it.amodal.save_png(dir.join(format!("iter-{:02}-amodal.png", it.index)))?;
        }
    }
    Ok(())
}
