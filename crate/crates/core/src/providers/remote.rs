//! HTTP client for the provider protocol.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::wire::{self, *};
use super::{
    require, Grounder, Grounding, Inpainter, LabeledMask, OcclusionOracle, OcclusionRelation, ProviderError,
    ProviderResult, Score, SegmentDetector, TagSet, Tagger, TextImageScorer,
};
use crate::imaging::Image;
use crate::mask::BinaryMask;

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    /// Per-attempt timeout in seconds.
    pub timeout: f64,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

impl ProviderEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        ProviderEndpoint { base_url: base_url.into(), timeout: 30.0, retries: 2, auth_token: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(format!("timeout must be positive, got {}", self.timeout));
        }
        if self.base_url.trim().is_empty() {
            return Err("base_url must not be empty".into());
        }
        Ok(())
    }
}

/// Implements every role by POSTing to one protocol server.
pub struct RemoteProvider {
    endpoint: ProviderEndpoint,
    agent: Agent,
}

enum Attempt {
    Retry(String, usize),
    Fail(ProviderError),
}

impl RemoteProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, String> {
        endpoint.validate()?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteProvider { endpoint, agent })
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    fn url(&self, route: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), route)
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, req: &Req) -> ProviderResult<Resp> {
        let url = self.url(route);
        let body = serde_json::to_vec(req).expect("request bodies always serialize");
        let mut last = String::new();
        let mut last_bytes = 0;
        for attempt in 0..=self.endpoint.retries {
            match self.attempt(&url, &body) {
                Ok(bytes) => {
                    return serde_json::from_slice(&bytes).map_err(|e| {
                        ProviderError::unavailable(&url, format!("malformed response: {e}"), bytes.len())
                    });
                }
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(detail, n)) => {
                    log::debug!("{url}: attempt {} failed: {detail}", attempt + 1);
                    last = detail;
                    last_bytes = n;
                }
            }
        }
        Err(ProviderError::unavailable(
            &url,
            format!("{} after {} attempt(s)", last, self.endpoint.retries + 1),
            last_bytes,
        ))
    }

    fn attempt(&self, url: &str, body: &[u8]) -> Result<Vec<u8>, Attempt> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(tok) = &self.endpoint.auth_token {
            req = req.header("Authorization", format!("Bearer {tok}"));
        }
        let mut resp = req.send(body).map_err(|e| Attempt::Retry(e.to_string(), 0))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(|e| Attempt::Retry(e.to_string(), 0))?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        let msg = serde_json::from_slice::<ErrorResponse>(&bytes)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
        match status {
            400 | 422 => Err(Attempt::Fail(ProviderError::Precondition(msg))),
            s if s >= 500 => Err(Attempt::Retry(format!("HTTP {s}: {msg}"), bytes.len())),
            s => Err(Attempt::Fail(ProviderError::unavailable(url, format!("HTTP {s}: {msg}"), bytes.len()))),
        }
    }

    fn decode_mask_for(&self, route: &str, s: &str, img: &Image) -> ProviderResult<BinaryMask> {
        let m = wire::decode_mask(s).map_err(|e| ProviderError::unavailable(self.url(route), e, s.len()))?;
        if m.dims() != img.dims() {
            return Err(ProviderError::unavailable(
                self.url(route),
                format!("mask is {}x{}, image is {}x{}", m.width(), m.height(), img.width(), img.height()),
                s.len(),
            ));
        }
        Ok(m)
    }
}

impl Grounder for RemoteProvider {
    fn ground_segment(&self, img: &Image, query: &str) -> ProviderResult<Grounding> {
        require(!query.trim().is_empty(), "query must be non-empty")?;
        let req = GroundRequest { image_png_b64: encode_image(img), query: query.to_string() };
        let resp: GroundResponse = self.call(ROUTE_GROUND, &req)?;
        match (resp.found, resp.mask_png_b64) {
            (false, _) => Ok(Grounding::NotFound),
            (true, Some(m)) => Ok(Grounding::Found(self.decode_mask_for(ROUTE_GROUND, &m, img)?)),
            (true, None) => Err(ProviderError::unavailable(self.url(ROUTE_GROUND), "found without mask", 0)),
        }
    }
}

impl Tagger for RemoteProvider {
    fn tag_scene(&self, img: &Image) -> ProviderResult<TagSet> {
        let resp: TagsResponse = self.call(ROUTE_TAGS, &TagsRequest { image_png_b64: encode_image(img) })?;
        Ok(TagSet::new(resp.tags))
    }
}

impl SegmentDetector for RemoteProvider {
    fn detect_segments(&self, img: &Image, tags: &TagSet) -> ProviderResult<Vec<LabeledMask>> {
        let req = DetectRequest { image_png_b64: encode_image(img), tags: tags.as_slice().to_vec() };
        let resp: DetectResponse = self.call(ROUTE_DETECT, &req)?;
        resp.segments
            .into_iter()
            .map(|s| Ok(LabeledMask { mask: self.decode_mask_for(ROUTE_DETECT, &s.mask_png_b64, img)?, label: s.label }))
            .collect()
    }
}

impl OcclusionOracle for RemoteProvider {
    fn occlusion_order(&self, img: &Image, target: &BinaryMask, candidate: &BinaryMask) -> ProviderResult<OcclusionRelation> {
        require(!target.is_empty() && !candidate.is_empty(), "occlusion masks must be non-empty")?;
        let req = OcclusionRequest {
            image_png_b64: encode_image(img),
            target_mask_png_b64: encode_mask(target),
            candidate_mask_png_b64: encode_mask(candidate),
        };
        let resp: OcclusionResponse = self.call(ROUTE_OCCLUSION, &req)?;
        Ok(OcclusionRelation { occludes_target: resp.occludes_target })
    }
}

impl TextImageScorer for RemoteProvider {
    fn score_text_image(&self, img: &Image, text: &str) -> ProviderResult<Score> {
        require(!text.trim().is_empty(), "score text must be non-empty")?;
        let req = ScoreRequest { image_png_b64: encode_image(img), text: text.to_string() };
        let resp: ScoreResponse = self.call(ROUTE_SCORE, &req)?;
        Score::new(resp.score).map_err(|e| ProviderError::unavailable(self.url(ROUTE_SCORE), e.to_string(), 0))
    }
}

impl Inpainter for RemoteProvider {
    fn inpaint(&self, img: &Image, region: &BinaryMask, prompt: &str, seed: Option<u64>) -> ProviderResult<Image> {
        require(!region.is_empty(), "inpaint region must be non-empty")?;
        let req = InpaintRequest {
            image_png_b64: encode_image(img),
            mask_png_b64: encode_mask(region),
            prompt: prompt.to_string(),
            seed,
        };
        let resp: InpaintResponse = self.call(ROUTE_INPAINT, &req)?;
        let out = wire::decode_image(&resp.image_png_b64)
            .map_err(|e| ProviderError::unavailable(self.url(ROUTE_INPAINT), e, resp.image_png_b64.len()))?;
        Ok(out)
    }
}
