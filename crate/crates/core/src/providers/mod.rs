//! Model-role contracts.
//!
//! Each pretrained-model role the pipeline consumes is a trait. Backends are
//! either in-process ([`mock`]) or remote over the JSON wire protocol
//! ([`remote`], served by [`server`]).

pub mod mock;
pub mod remote;
pub mod server;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Image;
use crate::mask::BinaryMask;

pub use mock::{NoisyInpainter, SceneOracle};
pub use remote::{ProviderEndpoint, RemoteProvider};
pub use server::ProviderServer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    /// Transport failure, non-success status or malformed payload.
    #[error("backend unavailable at {endpoint}: {detail} (payload {payload_bytes} bytes)")]
    Unavailable { endpoint: String, detail: String, payload_bytes: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl ProviderError {
    pub fn unavailable(endpoint: impl Into<String>, detail: impl Into<String>, payload_bytes: usize) -> Self {
        ProviderError::Unavailable { endpoint: endpoint.into(), detail: detail.into(), payload_bytes }
    }
}

pub type ProviderResult<T> = std::result::Result<T, ProviderError>;

/// Outcome of query grounding. `NotFound` is the complete-failure path.
#[derive(Debug, Clone, PartialEq)]
pub enum Grounding {
    Found(BinaryMask),
    NotFound,
}

/// Candidate class labels: lowercase, deduplicated, tagger order preserved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSet(Vec<String>);

impl TagSet {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for t in tags {
            let t = t.as_ref().trim().to_lowercase();
            if !t.is_empty() && !out.contains(&t) {
                out.push(t);
            }
        }
        TagSet(out)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    pub label: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionRelation {
    pub occludes_target: bool,
}

/// Finite text-image alignment score; higher is better.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    pub fn new(v: f64) -> ProviderResult<Score> {
        if v.is_finite() {
            Ok(Score(v))
        } else {
            Err(ProviderError::Precondition(format!("score {v} is not finite")))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub trait Grounder: Send + Sync {
    fn ground_segment(&self, img: &Image, query: &str) -> ProviderResult<Grounding>;
}

pub trait Tagger: Send + Sync {
    fn tag_scene(&self, img: &Image) -> ProviderResult<TagSet>;
}

pub trait SegmentDetector: Send + Sync {
    fn detect_segments(&self, img: &Image, tags: &TagSet) -> ProviderResult<Vec<LabeledMask>>;
}

pub trait OcclusionOracle: Send + Sync {
    fn occlusion_order(&self, img: &Image, target: &BinaryMask, candidate: &BinaryMask)
        -> ProviderResult<OcclusionRelation>;
}

pub trait TextImageScorer: Send + Sync {
    fn score_text_image(&self, img: &Image, text: &str) -> ProviderResult<Score>;
}

pub trait Inpainter: Send + Sync {
    fn inpaint(&self, img: &Image, region: &BinaryMask, prompt: &str, seed: Option<u64>) -> ProviderResult<Image>;
}

/// One backend per role.
#[derive(Clone)]
pub struct ProviderSet {
    pub grounder: Arc<dyn Grounder>,
    pub tagger: Arc<dyn Tagger>,
    pub detector: Arc<dyn SegmentDetector>,
    pub occlusion: Arc<dyn OcclusionOracle>,
    pub scorer: Arc<dyn TextImageScorer>,
    pub inpainter: Arc<dyn Inpainter>,
}

impl ProviderSet {
    /// Use one backend for all six roles.
    pub fn uniform<P>(p: Arc<P>) -> Self
    where
        P: Grounder + Tagger + SegmentDetector + OcclusionOracle + TextImageScorer + Inpainter + 'static,
    {
        ProviderSet {
            grounder: p.clone(),
            tagger: p.clone(),
            detector: p.clone(),
            occlusion: p.clone(),
            scorer: p.clone(),
            inpainter: p,
        }
    }

    pub fn with_inpainter(mut self, inpainter: Arc<dyn Inpainter>) -> Self {
        self.inpainter = inpainter;
        self
    }

    pub fn with_scorer(mut self, scorer: Arc<dyn TextImageScorer>) -> Self {
        self.scorer = scorer;
        self
    }
}

pub(crate) fn require(cond: bool, msg: &str) -> ProviderResult<()> {
    if cond {
        Ok(())
    } else {
        Err(ProviderError::Precondition(msg.to_string()))
    }
}

/// Call `inpainter` and restore every pixel outside `region` from `img`.
/// A backend that touched out-of-region pixels is logged, not rejected.
pub fn inpaint_preserving(
    inpainter: &dyn Inpainter,
    img: &Image,
    region: &BinaryMask,
    prompt: &str,
    seed: Option<u64>,
) -> ProviderResult<Image> {
    require(!region.is_empty(), "inpaint region must be non-empty")?;
    let mut out = inpainter.inpaint(img, region, prompt, seed)?;
    if out.dims() != img.dims() {
        return Err(ProviderError::unavailable(
            "inpaint",
            format!("returned {}x{} for a {}x{} input", out.width(), out.height(), img.width(), img.height()),
            out.as_raw().len(),
        ));
    }
    let mut touched = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !region.get(x, y) && out.get(x, y) != img.get(x, y) {
                out.put(x, y, img.get(x, y));
                touched += 1;
            }
        }
    }
    if touched > 0 {
        log::warn!("inpainter modified {touched} pixels outside the region; restored");
    }
    Ok(out)
}
