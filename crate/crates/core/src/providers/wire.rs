//! JSON bodies of the provider protocol. Field names are normative; images
//! and masks travel as base64-encoded PNG.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::imaging::Image;
use crate::mask::BinaryMask;

pub const ROUTE_GROUND: &str = "/v1/ground_segment";
pub const ROUTE_TAGS: &str = "/v1/tags";
pub const ROUTE_DETECT: &str = "/v1/detect_segments";
pub const ROUTE_OCCLUSION: &str = "/v1/occlusion_order";
pub const ROUTE_SCORE: &str = "/v1/score";
pub const ROUTE_INPAINT: &str = "/v1/inpaint";

pub const ALL_ROUTES: [&str; 6] = [ROUTE_GROUND, ROUTE_TAGS, ROUTE_DETECT, ROUTE_OCCLUSION, ROUTE_SCORE, ROUTE_INPAINT];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub image_png_b64: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundResponse {
    pub found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_png_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagsRequest {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagsResponse {
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_png_b64: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSegment {
    pub label: String,
    pub mask_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub segments: Vec<WireSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRequest {
    pub image_png_b64: String,
    pub target_mask_png_b64: String,
    pub candidate_mask_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionResponse {
    pub occludes_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub image_png_b64: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image_png_b64: String,
    pub mask_png_b64: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub image_png_b64: String,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub fn encode_image(img: &Image) -> String {
    STANDARD.encode(img.to_png_bytes().expect("in-memory PNG encoding"))
}

pub fn encode_mask(m: &BinaryMask) -> String {
    STANDARD.encode(m.to_png_bytes().expect("in-memory PNG encoding"))
}

pub fn decode_image(s: &str) -> Result<Image, String> {
    let bytes = STANDARD.decode(s).map_err(|e| format!("bad base64: {e}"))?;
    Image::from_png_bytes(&bytes).map_err(|e| e.to_string())
}

pub fn decode_mask(s: &str) -> Result<BinaryMask, String> {
    let bytes = STANDARD.decode(s).map_err(|e| format!("bad base64: {e}"))?;
    BinaryMask::from_png_bytes(&bytes).map_err(|e| e.to_string())
}
