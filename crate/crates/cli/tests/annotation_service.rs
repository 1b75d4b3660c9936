use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cyborg::datasets::{generate_spurious_dataset, SpuriousConfig};
use cyborg::grid::Grid;
use cyborg::io::{encode_gray_png, load_gray_png};
use cyborg::manifest::{load_manifest, Label, ManifestOptions, Split};
use cyborg_cli::annotate::{router, AppState, ServiceConfig, DEFAULT_MIN_REGIONS};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SIZE: usize = 16;

fn fixture(dir: &Path) -> (ServiceConfig, Vec<(String, Label)>) {
    let mut cfg = SpuriousConfig::new(SIZE, 3);
    cfg.per_class.train = 2;
    cfg.per_class.val = 1;
    cfg.per_class.test = 1;
    let ds = generate_spurious_dataset(&cfg).unwrap();
    let manifest = ds.write_to_dir(&dir.join("data")).unwrap();
    let train = ds.train.iter().map(|s| (s.id.clone(), s.label)).collect();
    (
        ServiceConfig {
            manifest,
            store_dir: dir.join("store"),
            min_regions: DEFAULT_MIN_REGIONS,
        },
        train,
    )
}

/// Isolated single pixels on a lattice of pitch 3, `n` of them, offset by `shift`.
fn dotted_mask(n: usize, shift: usize) -> String {
    let mut g = Grid::zeros(SIZE, SIZE);
    let mut placed = 0;
    'outer: for y in (0..SIZE).step_by(3) {
        for x in ((shift % 3)..SIZE).step_by(3) {
            if placed == n {
                break 'outer;
            }
            g.set(x, y, 1.0);
            placed += 1;
        }
    }
    B64.encode(encode_gray_png(&g).unwrap())
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body)
}

async fn post(app: &axum::Router, body: Value) -> StatusCode {
    let req = Request::post("/annotation")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await.0
}

fn decision(label: Label) -> &'static str {
    match label {
        Label::Typical => "typical",
        Label::Atypical => "atypical",
    }
}

fn wrong(label: Label) -> &'static str {
    match label {
        Label::Typical => "atypical",
        Label::Atypical => "typical",
    }
}

#[tokio::test]
async fn task_endpoint_serves_a_training_image() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, train) = fixture(dir.path());
    let app = router(Arc::new(AppState::open(&cfg).unwrap()));
    let (status, body) = call(&app, Request::get("/task").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let task: Value = serde_json::from_slice(&body).unwrap();
    let id = task["image_id"].as_str().unwrap();
    assert!(train.iter().any(|(t, _)| t == id));
    assert_eq!(task["width"], SIZE);
    assert_eq!(task["height"], SIZE);
    let png = B64.decode(task["image"].as_str().unwrap()).unwrap();
    assert!(png.starts_with(b"\x89PNG"));
}

#[tokio::test]
async fn submissions_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, train) = fixture(dir.path());
    let app = router(Arc::new(AppState::open(&cfg).unwrap()));
    let (id, label) = &train[0];

    let three = json!({"image_id": id, "decision": decision(*label), "mask": dotted_mask(3, 0)});
    assert_eq!(post(&app, three).await, StatusCode::BAD_REQUEST);

    let unknown = json!({"image_id": "nope", "decision": "typical", "mask": dotted_mask(6, 0)});
    assert_eq!(post(&app, unknown).await, StatusCode::BAD_REQUEST);

    let garbage = json!({"image_id": id, "decision": "typical", "mask": "AAAA"});
    assert_eq!(post(&app, garbage).await, StatusCode::BAD_REQUEST);

    let small = B64.encode(encode_gray_png(&Grid::zeros(4, 4)).unwrap());
    let wrong_dims = json!({"image_id": id, "decision": "typical", "mask": small});
    assert_eq!(post(&app, wrong_dims).await, StatusCode::BAD_REQUEST);

    let extra = json!({"image_id": id, "decision": "typical", "mask": dotted_mask(6, 0), "x": 1});
    assert_eq!(post(&app, extra).await, StatusCode::BAD_REQUEST);

    let ok = json!({"image_id": id, "decision": decision(*label), "mask": dotted_mask(5, 0)});
    assert_eq!(post(&app, ok.clone()).await, StatusCode::CREATED);
    assert_eq!(post(&app, ok).await, StatusCode::CONFLICT);

    // Same mask under another decision is a distinct submission.
    let other = json!({"image_id": id, "decision": "unsure", "mask": dotted_mask(5, 0)});
    assert_eq!(post(&app, other).await, StatusCode::CREATED);

    let log = std::fs::read_to_string(cfg.store_dir.join("annotations.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["timestamp_ms"].as_u64().unwrap() > 0);
    }
}

#[tokio::test]
async fn export_averages_correct_decisions_only() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, train) = fixture(dir.path());
    let app = router(Arc::new(AppState::open(&cfg).unwrap()));
    let (a, la) = &train[0];
    let (b, lb) = &train[1];

    for shift in [0, 1] {
        let body = json!({"image_id": a, "decision": decision(*la), "mask": dotted_mask(5, shift)});
        assert_eq!(post(&app, body).await, StatusCode::CREATED);
    }
    let misjudged = json!({"image_id": a, "decision": wrong(*la), "mask": dotted_mask(8, 2)});
    assert_eq!(post(&app, misjudged).await, StatusCode::CREATED);
    let only_wrong = json!({"image_id": b, "decision": wrong(*lb), "mask": dotted_mask(5, 0)});
    assert_eq!(post(&app, only_wrong).await, StatusCode::CREATED);

    let (status, body) = call(
        &app,
        Request::get("/export/manifest")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().starts_with("image,"));

    let path = cfg.store_dir.join("export").join("manifest.csv");
    let rows = load_manifest(
        &path,
        ManifestOptions {
            strict_saliency: true,
        },
    )
    .unwrap();
    let train_rows: Vec<_> = rows.iter().filter(|r| r.split == Split::Train).collect();
    assert_eq!(train_rows.len(), 1);
    assert_eq!(
        train_rows[0].image.file_stem().unwrap().to_str().unwrap(),
        a
    );
    assert_eq!(rows.iter().filter(|r| r.split != Split::Train).count(), 4);

    let avg = load_gray_png(train_rows[0].saliency.as_ref().unwrap()).unwrap();
    // Dots at x ≡ 0 and x ≡ 1 (mod 3) each get half weight; x ≡ 2 is from the misjudged mask.
    assert!((avg.get(0, 0) - 0.5).abs() < 0.01);
    assert!((avg.get(1, 0) - 0.5).abs() < 0.01);
    assert_eq!(avg.get(2, 0), 0.0);
}

#[tokio::test]
async fn store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, train) = fixture(dir.path());
    let (id, label) = &train[0];
    let body = json!({"image_id": id, "decision": decision(*label), "mask": dotted_mask(5, 0)});
    {
        let app = router(Arc::new(AppState::open(&cfg).unwrap()));
        assert_eq!(post(&app, body.clone()).await, StatusCode::CREATED);
    }
    let app = router(Arc::new(AppState::open(&cfg).unwrap()));
    assert_eq!(post(&app, body).await, StatusCode::CONFLICT);
    let (_, task) = call(&app, Request::get("/task").body(Body::empty()).unwrap()).await;
    let task: Value = serde_json::from_slice(&task).unwrap();
    assert_ne!(task["image_id"].as_str().unwrap(), id);
}

#[tokio::test]
async fn exported_mask_round_trips_pixel_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, train) = fixture(dir.path());
    let app = router(Arc::new(AppState::open(&cfg).unwrap()));
    let (id, label) = &train[0];

    let four = json!({"image_id": id, "decision": decision(*label), "mask": dotted_mask(4, 0)});
    assert_eq!(post(&app, four).await, StatusCode::BAD_REQUEST);

    // Five blobs painted with anti-aliased edges; the server binarizes at 0.5.
    let mut painted = Grid::zeros(SIZE, SIZE);
    for (i, (cx, cy)) in [(2usize, 2usize), (8, 2), (13, 3), (3, 10), (11, 12)]
        .into_iter()
        .enumerate()
    {
        for y in cy.saturating_sub(1)..=(cy + 1).min(SIZE - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(SIZE - 1) {
                let edge = x != cx && y != cy;
                painted.set(x, y, if edge { 0.3 + 0.05 * i as f64 } else { 0.9 });
            }
        }
    }
    let body = json!({
        "image_id": id,
        "decision": decision(*label),
        "mask": B64.encode(encode_gray_png(&painted).unwrap()),
    });
    assert_eq!(post(&app, body).await, StatusCode::CREATED);
    let (status, _) = call(
        &app,
        Request::get("/export/manifest")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    let rows = load_manifest(
        &cfg.store_dir.join("export").join("manifest.csv"),
        ManifestOptions {
            strict_saliency: true,
        },
    )
    .unwrap();
    let row = rows.iter().find(|r| r.split == Split::Train).unwrap();
    let exported = load_gray_png(row.saliency.as_ref().unwrap()).unwrap();
    let expected = cyborg::ablations::binarize_mask(&load_gray_png_bytes(&painted));
    assert_eq!(exported, expected);
}

/// The painted mask as the server sees it after PNG decoding.
fn load_gray_png_bytes(g: &Grid) -> Grid {
    cyborg::io::decode_gray_png(&encode_gray_png(g).unwrap()).unwrap()
}
