//! Serve any [`ProviderSet`] over the provider protocol.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::*;
use super::{Grounding, ProviderError, ProviderSet, TagSet};
use crate::error::{Error, Result};

/// A running protocol server. Dropping the handle stops it.
pub struct ProviderServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

struct Reply {
    status: u16,
    body: Vec<u8>,
}

impl Reply {
    fn json<T: Serialize>(v: &T) -> Reply {
        Reply { status: 200, body: serde_json::to_vec(v).expect("responses always serialize") }
    }

    fn error(status: u16, msg: impl Into<String>) -> Reply {
        let body = serde_json::to_vec(&ErrorResponse { error: msg.into() }).expect("error body serializes");
        Reply { status, body }
    }
}

impl From<ProviderError> for Reply {
    fn from(e: ProviderError) -> Reply {
        match e {
            ProviderError::Precondition(m) => Reply::error(400, m),
            e @ ProviderError::Unavailable { .. } => Reply::error(503, e.to_string()),
        }
    }
}

impl ProviderServer {
    /// Bind `addr` (port 0 picks a free port) and answer with `providers`
    /// on `threads` worker threads.
    pub fn start(providers: ProviderSet, addr: &str, threads: usize) -> Result<ProviderServer> {
        let server = Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::InvalidArgument("server is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = server.clone();
                let stop = stop.clone();
                let providers = providers.clone();
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(rq)) => handle(&providers, rq),
                            Ok(None) => {}
                            Err(e) => {
                                log::error!("provider server: {e}");
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        Ok(ProviderServer { addr, stop, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server stops (never, unless another handle stops it).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ProviderServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn handle(providers: &ProviderSet, mut rq: Request) {
    let reply = if *rq.method() != Method::Post {
        Reply::error(405, format!("{} not allowed; use POST", rq.method()))
    } else {
        let mut body = Vec::new();
        match rq.as_reader().read_to_end(&mut body) {
            Err(e) => Reply::error(400, format!("unreadable body: {e}")),
            Ok(_) => dispatch(providers, rq.url(), &body),
        }
    };
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let resp = Response::from_data(reply.body).with_status_code(reply.status).with_header(header);
    if let Err(e) = rq.respond(resp) {
        log::warn!("provider server: failed to respond: {e}");
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> std::result::Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| Reply::error(400, format!("malformed request: {e}")))
}

fn bad<E: std::fmt::Display>(field: &str) -> impl FnOnce(E) -> Reply + '_ {
    move |e| Reply::error(400, format!("{field}: {e}"))
}

fn dispatch(p: &ProviderSet, url: &str, body: &[u8]) -> Reply {
    let path = url.split('?').next().unwrap_or(url);
    let result = match path {
        ROUTE_GROUND => ground(p, body),
        ROUTE_TAGS => tags(p, body),
        ROUTE_DETECT => detect(p, body),
        ROUTE_OCCLUSION => occlusion(p, body),
        ROUTE_SCORE => score(p, body),
        ROUTE_INPAINT => inpaint(p, body),
        other => Err(Reply::error(404, format!("unknown route {other}"))),
    };
    result.unwrap_or_else(|r| r)
}

type Handled = std::result::Result<Reply, Reply>;

fn ground(p: &ProviderSet, body: &[u8]) -> Handled {
    let req: GroundRequest = parse(body)?;
    let img = decode_image(&req.image_png_b64).map_err(bad("image_png_b64"))?;
    Ok(match p.grounder.ground_segment(&img, &req.query)? {
        Grounding::Found(m) => Reply::json(&GroundResponse { found: true, mask_png_b64: Some(encode_mask(&m)) }),
        Grounding::NotFound => Reply::json(&GroundResponse { found: false, mask_png_b64: None }),
    })
}

fn tags(p: &ProviderSet, body: &[u8]) -> Handled {
    let req: TagsRequest = parse(body)?;
    let img = decode_image(&req.image_png_b64).map_err(bad("image_png_b64"))?;
    let tags = p.tagger.tag_scene(&img)?;
    Ok(Reply::json(&TagsResponse { tags: tags.as_slice().to_vec() }))
}

fn detect(p: &ProviderSet, body: &[u8]) -> Handled {
    let req: DetectRequest = parse(body)?;
    let img = decode_image(&req.image_png_b64).map_err(bad("image_png_b64"))?;
    let segs = p.detector.detect_segments(&img, &TagSet::new(req.tags))?;
    let segments = segs
        .iter()
        .map(|s| WireSegment { label: s.label.clone(), mask_png_b64: encode_mask(&s.mask) })
        .collect();
    Ok(Reply::json(&DetectResponse { segments }))
}

fn occlusion(p: &ProviderSet, body: &[u8]) -> Handled {
    let req: OcclusionRequest = parse(body)?;
    let img = decode_image(&req.image_png_b64).map_err(bad("image_png_b64"))?;
    let target = decode_mask(&req.target_mask_png_b64).map_err(bad("target_mask_png_b64"))?;
    let candidate = decode_mask(&req.candidate_mask_png_b64).map_err(bad("candidate_mask_png_b64"))?;
    let rel = p.occlusion.occlusion_order(&img, &target, &candidate)?;
    Ok(Reply::json(&OcclusionResponse { occludes_target: rel.occludes_target }))
}

fn score(p: &ProviderSet, body: &[u8]) -> Handled {
    let req: ScoreRequest = parse(body)?;
    let img = decode_image(&req.image_png_b64).map_err(bad("image_png_b64"))?;
    let s = p.scorer.score_text_image(&img, &req.text)?;
    Ok(Reply::json(&ScoreResponse { score: s.value() }))
}

fn inpaint(p: &ProviderSet, body: &[u8]) -> Handled {
    let req: InpaintRequest = parse(body)?;
    let img = decode_image(&req.image_png_b64).map_err(bad("image_png_b64"))?;
    let region = decode_mask(&req.mask_png_b64).map_err(bad("mask_png_b64"))?;
    if region.dims() != img.dims() {
        return Err(Reply::error(400, "mask_png_b64: dimensions differ from image"));
    }
    let out = p.inpainter.inpaint(&img, &region, &req.prompt, req.seed)?;
    Ok(Reply::json(&InpaintResponse { image_png_b64: encode_image(&out) }))
}
