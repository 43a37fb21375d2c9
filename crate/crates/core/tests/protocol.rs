//! Wire protocol: every role answered over HTTP matches the in-process
//! provider, and bad servers surface as errors, never panics.

use std::sync::Arc;
use std::thread;

use amodal_core::imaging::Image;
use amodal_core::mask::BinaryMask;
use amodal_core::providers::wire::{self, ALL_ROUTES};
use amodal_core::providers::{
    Grounder, Grounding, Inpainter, NoisyInpainter, OcclusionOracle, ProviderEndpoint, ProviderError, ProviderServer,
    ProviderSet, RemoteProvider, SceneOracle, SegmentDetector, Tagger, TextImageScorer,
};
use amodal_core::synth::{generate, GenSpec, SyntheticScene};
use serde_json::{json, Value};

fn scene(seed: u64) -> SyntheticScene {
    generate(seed, &GenSpec::default()).unwrap()
}

struct Pair {
    local: SceneOracle,
    remote: RemoteProvider,
    server: ProviderServer,
}

fn pair(s: &SyntheticScene) -> Pair {
    let server = ProviderServer::start(ProviderSet::uniform(Arc::new(SceneOracle::new(s.clone()))), "127.0.0.1:0", 2)
        .unwrap();
    let remote = RemoteProvider::new(ProviderEndpoint::new(server.base_url())).unwrap();
    Pair { local: SceneOracle::new(s.clone()), remote, server }
}

#[test]
fn all_six_roles_match_in_process() {
    for seed in [3, 11, 29] {
        let s = scene(seed);
        let p = pair(&s);
        let img = s.render();

        let g_local = p.local.ground_segment(&img, &s.target).unwrap();
        assert_eq!(p.remote.ground_segment(&img, &s.target).unwrap(), g_local);
        assert_eq!(p.remote.ground_segment(&img, "unicorn").unwrap(), Grounding::NotFound);

        let tags = p.local.tag_scene(&img).unwrap();
        assert_eq!(p.remote.tag_scene(&img).unwrap(), tags);

        let segs = p.local.detect_segments(&img, &tags).unwrap();
        assert_eq!(p.remote.detect_segments(&img, &tags).unwrap(), segs);

        let Grounding::Found(visible) = g_local else { panic!("target must ground") };
        for seg in &segs {
            assert_eq!(
                p.remote.occlusion_order(&img, &visible, &seg.mask).unwrap(),
                p.local.occlusion_order(&img, &visible, &seg.mask).unwrap()
            );
        }

        for text in tags.iter().chain([&"nothing".to_string()]) {
            assert_eq!(
                p.remote.score_text_image(&img, text).unwrap().value(),
                p.local.score_text_image(&img, text).unwrap().value()
            );
        }

        let region = visible.complement();
        assert_eq!(
            p.remote.inpaint(&img, &region, "a complete photo of x", Some(5)).unwrap(),
            p.local.inpaint(&img, &region, "a complete photo of x", Some(5)).unwrap()
        );
    }
}

#[test]
fn seeded_inpaint_survives_the_wire() {
    let server = ProviderServer::start(
        ProviderSet::uniform(Arc::new(SceneOracle::new(scene(2)))).with_inpainter(Arc::new(NoisyInpainter)),
        "127.0.0.1:0",
        1,
    )
    .unwrap();
    let remote = RemoteProvider::new(ProviderEndpoint::new(server.base_url())).unwrap();
    let img = Image::filled(40, 30, [127; 3]);
    let region = BinaryMask::from_fn(40, 30, |x, y| x > 10 && y < 20);
    for seed in [Some(0), Some(9), None] {
        assert_eq!(remote.inpaint(&img, &region, "p", seed).unwrap(), NoisyInpainter.inpaint(&img, &region, "p", seed).unwrap());
    }
}

fn post(url: &str, body: &str) -> (u16, Value) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.post(url).header("Content-Type", "application/json").send(body).unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap())
}

#[test]
fn response_field_names_and_error_shape() {
    let s = scene(5);
    let p = pair(&s);
    let base = p.server.base_url();
    let img = wire::encode_image(&s.render());

    let (st, v) = post(&format!("{base}/v1/ground_segment"), &json!({"image_png_b64": img, "query": s.target}).to_string());
    assert_eq!(st, 200);
    assert_eq!(v["found"], json!(true));
    assert!(v["mask_png_b64"].is_string());

    let (st, v) = post(&format!("{base}/v1/ground_segment"), &json!({"image_png_b64": img, "query": "ghost"}).to_string());
    assert_eq!(st, 200);
    assert_eq!(v, json!({"found": false}));

    let (st, v) = post(&format!("{base}/v1/tags"), &json!({"image_png_b64": img}).to_string());
    assert_eq!(st, 200);
    assert!(v["tags"].is_array());

    let (st, v) = post(&format!("{base}/v1/score"), &json!({"image_png_b64": img, "text": "x"}).to_string());
    assert_eq!(st, 200);
    assert_eq!(v["score"], json!(0.2));

    // malformed body, undecodable image, unknown route
    for (route, body, code) in [
        ("/v1/tags", "{not json", 400),
        ("/v1/tags", r#"{"image_png_b64": "@@@"}"#, 400),
        ("/v1/nope", "{}", 404),
    ] {
        let (st, v) = post(&format!("{base}{route}"), body);
        assert_eq!(st, code, "{route}");
        assert!(v["error"].is_string(), "{route}: {v}");
        assert_eq!(v.as_object().unwrap().len(), 1);
    }

    // precondition violations are 400s and come back as such
    let err = p.remote.ground_segment(&s.render(), "   ").unwrap_err();
    assert!(matches!(err, ProviderError::Precondition(_)), "{err}");
}

#[test]
fn routes_are_all_served() {
    let s = scene(8);
    let p = pair(&s);
    for route in ALL_ROUTES {
        let (st, v) = post(&format!("{}{route}", p.server.base_url()), "{}");
        assert_eq!(st, 400, "{route} should reject an empty request, got {v}");
    }
}

/// One-route server that answers every request with `status` and `body`.
fn canned(status: u16, body: &'static str) -> (String, thread::JoinHandle<usize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let h = thread::spawn(move || {
        let mut n = 0;
        while let Ok(Some(rq)) = server.recv_timeout(std::time::Duration::from_millis(800)) {
            n += 1;
            let _ = rq.respond(tiny_http::Response::from_string(body).with_status_code(status));
        }
        n
    });
    (url, h)
}

#[test]
fn malformed_payload_is_backend_unavailable_with_context() {
    let (url, h) = canned(200, r#"{"tags": 12}"#);
    let remote = RemoteProvider::new(ProviderEndpoint { retries: 0, ..ProviderEndpoint::new(&url) }).unwrap();
    match remote.tag_scene(&Image::filled(4, 4, [0; 3])).unwrap_err() {
        ProviderError::Unavailable { endpoint, payload_bytes, detail } => {
            assert_eq!(endpoint, format!("{url}/v1/tags"));
            assert_eq!(payload_bytes, 12);
            assert!(detail.contains("malformed"), "{detail}");
        }
        other => panic!("{other}"),
    }
    h.join().unwrap();
}

#[test]
fn wrong_sized_mask_is_rejected() {
    let tiny = wire::encode_mask(&BinaryMask::full(2, 2));
    let body: &'static str = Box::leak(json!({"found": true, "mask_png_b64": tiny}).to_string().into_boxed_str());
    let (url, h) = canned(200, body);
    let remote = RemoteProvider::new(ProviderEndpoint { retries: 0, ..ProviderEndpoint::new(&url) }).unwrap();
    let err = remote.ground_segment(&Image::filled(5, 5, [0; 3]), "x").unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable { .. }), "{err}");
    h.join().unwrap();
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, h) = canned(503, r#"{"error": "warming up"}"#);
    let remote = RemoteProvider::new(ProviderEndpoint { retries: 2, ..ProviderEndpoint::new(&url) }).unwrap();
    let err = remote.score_text_image(&Image::filled(4, 4, [0; 3]), "x").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("warming up") && msg.contains("3 attempt"), "{msg}");
    assert_eq!(h.join().unwrap(), 3);
}

#[test]
fn unreachable_endpoint_is_backend_unavailable() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let remote =
        RemoteProvider::new(ProviderEndpoint { retries: 1, timeout: 2.0, ..ProviderEndpoint::new(format!("http://127.0.0.1:{port}")) })
            .unwrap();
    let err = remote.tag_scene(&Image::filled(4, 4, [0; 3])).unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable { .. }));
}
