use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::{mpsc, Arc};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use hairsynth::imagecore::{decode_png, encode_mask_png, encode_png};
use hairsynth::pipeline::{PipelineState, Schedule, TrainingConfig};
use hairsynth::serve::{serve, SessionStore};
use hairsynth::synthdata::{generate_samples, AnnotationConfig, DatasetSample, Domain};

fn start(store: SessionStore) -> String {
    let (tx, rx) = mpsc::channel::<SocketAddr>();
    let store = Arc::new(store);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(serve(store, "127.0.0.1:0".parse().unwrap(), move |a| tx.send(a).unwrap())).unwrap();
    });
    format!("http://{}", rx.recv().unwrap())
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn get(url: &str) -> (u16, Value) {
    let mut r = agent().get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn post(url: &str, body: &Value) -> (u16, Value) {
    let mut r = agent().post(url).send_json(body).unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

fn trained() -> (PipelineState, Vec<DatasetSample>) {
    let cfg = TrainingConfig {
        size: 32,
        base_width: 4,
        depth: 3,
        batch: 2,
        stage1: Schedule::stage(1),
        stage2: Schedule::stage(1),
        init: Schedule::stage(1),
        ..TrainingConfig::desk()
    };
    let samples = generate_samples(4, 32, 5, Domain::Synthetic, &cfg.annotation).unwrap();
    let mut s = PipelineState::new(cfg).unwrap();
    s.pretrain(&samples).unwrap();
    s.train_init(&samples).unwrap();
    (s, samples)
}

fn create_body(s: &DatasetSample) -> Value {
    json!({
        "image_png": B64.encode(encode_png(&s.image).unwrap()),
        "mask_png": B64.encode(encode_mask_png(&s.mask).unwrap()),
    })
}

#[test]
fn editing_session_round_trip() {
    let (state, samples) = trained();
    let digest = state.digest();
    let base = start(SessionStore::new(Some(state), AnnotationConfig::default(), 1));

    let (code, h) = get(&format!("{base}/healthz"));
    assert_eq!(code, 200);
    assert_eq!(h["status"], "ok");
    assert_eq!(h["checkpoint"], digest.as_str());

    let (code, c) = post(&format!("{base}/sessions"), &create_body(&samples[0]));
    assert_eq!(code, 200, "{c}");
    assert_eq!(c["revision"], 0);
    assert_eq!(c["width"], 32);
    let id = c["id"].as_str().unwrap().to_string();
    let n = c["strokes"].as_u64().unwrap();
    assert!(n > 0);
    let (_, c2) = post(&format!("{base}/sessions"), &create_body(&samples[1]));
    assert_ne!(c2["id"], c["id"]);

    let url = format!("{base}/sessions/{id}");
    let (_, p0) = get(&format!("{url}/preview"));
    assert_eq!(p0["cached"], false);
    assert_eq!(p0["checkpoint"], digest.as_str());
    assert!(p0["timings"]["total_ms"].as_f64().unwrap() > 0.0);
    assert!(p0["timings"]["stage1_ms"].as_f64().unwrap() > 0.0);
    let img = decode_png(&B64.decode(p0["image_png"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(img.extent(), (32, 32));
    let (_, p1) = get(&format!("{url}/preview"));
    assert_eq!(p1["cached"], true);
    assert_eq!(p1["image_png"], p0["image_png"]);

    let (_, before) = get(&url);
    let (code, e) = post(&format!("{url}/edits"), &json!({"op": "stroke-delete"}));
    assert_eq!(code, 200, "{e}");
    assert_eq!(e["revision"], 1);
    assert_eq!(e["strokes"].as_u64().unwrap(), n - 1);
    let (_, p2) = get(&format!("{url}/preview"));
    assert_eq!((p2["cached"].clone(), p2["revision"].clone()), (json!(false), json!(1)));

    let (_, e) = post(&format!("{url}/edits"), &json!({"op": "undo"}));
    assert_eq!(e["revision"], 2);
    let (_, after) = get(&url);
    assert_eq!(after["strokes"], before["strokes"]);
    assert_eq!(after["mask_png"], before["mask_png"]);

    let (code, e) = post(
        &format!("{url}/edits"),
        &json!({"op": "field-brush", "center": [16.0, 16.0], "radius": 6.0, "intensity": 1.0, "angle_deg": 45.0}),
    );
    assert_eq!((code, e["revision"].clone()), (200, json!(3)));
    let (code, e) = post(&format!("{url}/edits"), &json!({"op": "color-brush", "center": [16.0, 16.0], "radius": 5.0, "intensity": 0.5, "color": [0.9, 0.1, 0.1]}));
    assert_eq!((code, e["revision"].clone()), (200, json!(4)));
    let (code, e) = post(&format!("{url}/edits"), &json!({"op": "mask-brush", "center": [5.0, 5.0], "radius": 3.0, "value": true}));
    assert_eq!((code, e["revision"].clone()), (200, json!(5)));
    let (code, e) = post(&format!("{url}/edits"), &json!({"op": "stroke-add", "points": [[10.0, 10.0], [14.0, 12.0]], "color": [0.2, 0.1, 0.0, 1.0]}));
    assert_eq!((code, e["revision"].clone()), (200, json!(6)));
    let (code, e) = post(&format!("{url}/edits"), &json!({"op": "init-fill"}));
    assert_eq!((code, e["revision"].clone()), (200, json!(7)), "{e}");

    // rejected edits leave the revision alone
    let (code, e) = post(&format!("{url}/edits"), &json!({"op": "field-brush", "center": [99.0, 1.0], "radius": 3.0, "intensity": 1.0, "angle_deg": 0.0}));
    assert_eq!(code, 400);
    assert!(e["error"].as_str().unwrap().contains("outside"));
    let (code, _) = post(&format!("{url}/edits"), &json!({"op": "stroke-delete", "index": 100000}));
    assert_eq!(code, 400);
    let (_, now) = get(&url);
    assert_eq!(now["revision"], 7);

    let (code, e) = get(&format!("{base}/sessions/nope/preview"));
    assert_eq!(code, 404);
    assert!(e["error"].as_str().unwrap().contains("nope"));
    let (code, _) = post(&format!("{base}/sessions/nope/edits"), &json!({"op": "undo"}));
    assert_eq!(code, 404);
    let (code, _) = post(&format!("{base}/sessions"), &json!({"image_png": "***"}));
    assert_eq!(code, 400);
    let (code, _) = post(&format!("{base}/sessions"), &json!({"image_png": B64.encode(b"not a png")}));
    assert_eq!(code, 400);
}

#[test]
fn concurrent_edits_are_serialized() {
    let (state, samples) = trained();
    let base = start(SessionStore::new(Some(state), AnnotationConfig::default(), 2));
    let (_, c) = post(&format!("{base}/sessions"), &create_body(&samples[2]));
    let url = format!("{base}/sessions/{}/edits", c["id"].as_str().unwrap());
    let n0 = c["strokes"].as_u64().unwrap();
    let handles: Vec<_> = (0..6)
        .map(|t| {
            let url = url.clone();
            std::thread::spawn(move || {
                (0..5)
                    .map(|i| {
                        let y = 4.0 + (t * 5 + i) as f64 * 0.8;
                        let (code, e) = post(&url, &json!({"op": "stroke-add", "points": [[4.0, y], [20.0, y]], "color": [0.1, 0.1, 0.1, 1.0]}));
                        assert_eq!(code, 200);
                        e["revision"].as_u64().unwrap()
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let revisions: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let unique: HashSet<u64> = revisions.iter().copied().collect();
    assert_eq!(unique.len(), 30);
    assert_eq!(unique, (1..=30).collect());
    let (_, s) = get(&format!("{base}/sessions/{}", c["id"].as_str().unwrap()));
    assert_eq!(s["revision"], 30);
    assert_eq!(s["strokes"]["strokes"].as_array().unwrap().len() as u64, n0 + 30);
}

#[test]
fn preview_needs_a_checkpoint() {
    let samples = generate_samples(1, 32, 5, Domain::Synthetic, &AnnotationConfig::default()).unwrap();
    let base = start(SessionStore::new(None, AnnotationConfig::default(), 3));
    let (_, h) = get(&format!("{base}/healthz"));
    assert_eq!(h["checkpoint"], Value::Null);
    let (code, c) = post(&format!("{base}/sessions"), &create_body(&samples[0]));
    assert_eq!(code, 200);
    let url = format!("{base}/sessions/{}", c["id"].as_str().unwrap());
    let (code, e) = get(&format!("{url}/preview"));
    assert_eq!(code, 409);
    assert!(e["error"].as_str().unwrap().contains("checkpoint"));
    let (code, _) = post(&format!("{url}/edits"), &json!({"op": "init-fill"}));
    assert_eq!(code, 409);
}
