use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

use fundus_core::data::{decode_and_resize, encode_png, fixture_pixel, INPUT_SIZE};
use fundus_core::{forward, init_weights, Label, ModelConfig, ModelWeights};
use fundus_server::{router, ErrorBody, ErrorCode, Health, Metadata, PredictionResponse, ServerConfig};

const BOUNDARY: &str = "fundus-test-boundary";

fn multipart(field: &str, bytes: &[u8]) -> Vec<u8> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"x.png\"\r\n\
         Content-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

fn predict_request(body: Vec<u8>) -> Request<Body> {
    Request::post("/predict")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn fixture_png(index: usize) -> Vec<u8> {
    let size = INPUT_SIZE as u32;
    encode_png(size, size, |x, y| fixture_pixel(index, true, size, x, y))
}

fn standard_weights(seed: u64) -> ModelWeights {
    init_weights(&ModelConfig::standard(), seed).unwrap()
}

fn app(weights: ModelWeights) -> Router {
    router(weights, &ServerConfig::default()).unwrap()
}

#[tokio::test]
async fn healthz_and_metadata() {
    let weights = standard_weights(1);
    let version = fundus_core::model_version(&weights);
    let app = app(weights);

    let (status, body) = call(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.model_version, version);

    let (status, body) = call(&app, Request::get("/metadata").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let meta: Metadata = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta.input_shape, [150, 150, 3]);
    assert_eq!(meta.parameter_count, 229_537);
    assert_eq!(meta.threshold, 0.5);
    assert_eq!(meta.model_version, version);
}

#[tokio::test]
async fn online_score_matches_offline_forward() {
    let weights = standard_weights(7);
    let png = fixture_png(3);
    let offline = f64::from(forward(&weights, &decode_and_resize(&png).unwrap()).unwrap());
    let app = app(weights);

    let (status, body) = call(&app, predict_request(multipart("image", &png))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: PredictionResponse = serde_json::from_slice(&body).unwrap();
    assert!((resp.score - offline).abs() <= 1e-6);
    assert_eq!(resp.label == Label::Diseased, resp.score >= resp.threshold);
    assert!(resp.latency_ms >= 0.0);

    let raw: Value = serde_json::from_slice(&body).unwrap();
    let keys: Vec<&str> = raw.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 5);
    for k in ["label", "score", "threshold", "model_version", "latency_ms"] {
        assert!(keys.contains(&k), "missing {k}");
    }
}

#[tokio::test]
async fn zero_weights_give_half_and_diseased() {
    let app = app(ModelWeights::zeros(&ModelConfig::standard()).unwrap());
    let size = INPUT_SIZE as u32;
    let png = encode_png(size, size, |_, _| [0, 0, 0]);
    let (status, body) = call(&app, predict_request(multipart("image", &png))).await;
    assert_eq!(status, StatusCode::OK);
    let resp: PredictionResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.score, 0.5);
    assert_eq!(resp.label, Label::Diseased);
}

async fn expect_error(app: &Router, req: Request<Body>, status: StatusCode, code: ErrorCode) {
    let (got, body) = call(app, req).await;
    assert_eq!(got, status, "{}", String::from_utf8_lossy(&body));
    let raw: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(raw.as_object().unwrap().len(), 2);
    let err: ErrorBody = serde_json::from_value(raw).unwrap();
    assert_eq!(err.error, code);
    assert!(!err.detail.is_empty());
}

#[tokio::test]
async fn error_codes_follow_schema() {
    let app = app(standard_weights(2));

    // text file
    let req = predict_request(multipart("image", b"just some text\n"));
    expect_error(&app, req, StatusCode::BAD_REQUEST, ErrorCode::DecodeError).await;

    // empty body, no content type
    let req = Request::post("/predict").body(Body::empty()).unwrap();
    expect_error(&app, req, StatusCode::BAD_REQUEST, ErrorCode::MissingImage).await;

    // multipart without the image field
    let req = predict_request(multipart("photo", &fixture_png(0)));
    expect_error(&app, req, StatusCode::BAD_REQUEST, ErrorCode::MissingImage).await;

    // image field with no bytes
    let req = predict_request(multipart("image", b""));
    expect_error(&app, req, StatusCode::BAD_REQUEST, ErrorCode::MissingImage).await;

    // 11 MiB upload
    let big = vec![0u8; 11 * 1024 * 1024];
    let req = predict_request(multipart("image", &big));
    expect_error(&app, req, StatusCode::PAYLOAD_TOO_LARGE, ErrorCode::PayloadTooLarge).await;

    let req = Request::get("/nope").body(Body::empty()).unwrap();
    expect_error(&app, req, StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
}

#[tokio::test]
async fn concurrent_requests_agree_and_leave_weights_untouched() {
    let weights = standard_weights(11);
    let checksum = weights.checksum();
    let app = app(weights);
    let png = fixture_png(5);
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            let body = multipart("image", &png);
            tokio::spawn(async move { call(&app, predict_request(body)).await })
        })
        .collect();
    let mut scores = Vec::new();
    for t in tasks {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        scores.push(serde_json::from_slice::<PredictionResponse>(&body).unwrap().score);
    }
    assert!(scores.windows(2).all(|w| w[0] == w[1]));

    let (_, body) = call(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert!(checksum.starts_with(health.model_version.split('-').nth(1).unwrap()));
}

#[tokio::test]
async fn serves_upload_page_and_ui_dir() {
    let app = app(standard_weights(3));
    let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/predict"));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>bundle</p>").unwrap();
    let config = ServerConfig { ui_dir: Some(dir.path().to_path_buf()), ..ServerConfig::default() };
    let app = router(standard_weights(3), &config).unwrap();
    let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>bundle</p>");
    let (status, _) = call(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);

    let missing = ServerConfig { ui_dir: Some(dir.path().join("absent")), ..ServerConfig::default() };
    assert!(router(standard_weights(3), &missing).is_err());
}

#[test]
fn rejects_bad_threshold_and_input_shape() {
    let bad = ServerConfig { threshold: 1.0, ..ServerConfig::default() };
    assert!(router(standard_weights(0), &bad).is_err());
    let small = init_weights(&ModelConfig::gradcheck_fixture(), 0).unwrap();
    assert!(router(small, &ServerConfig::default()).is_err());
}

#[tokio::test]
async fn real_socket_round_trip() {
    let weights = standard_weights(9);
    let png = fixture_png(1);
    let offline = f64::from(forward(&weights, &decode_and_resize(&png).unwrap()).unwrap());
    let app = app(weights);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let body = multipart("image", &png);
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let head = format!(
        "POST /predict HTTP/1.1\r\nHost: {addr}\r\nContent-Type: multipart/form-data; boundary={BOUNDARY}\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes()).await.unwrap();
    stream.write_all(&body).await.unwrap();
    let mut raw = Vec::new();
    tokio::time::timeout(Duration::from_secs(30), stream.read_to_end(&mut raw)).await.unwrap().unwrap();
    let text = String::from_utf8(raw).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    let json = &text[text.find("\r\n\r\n").unwrap() + 4..];
    let resp: PredictionResponse = serde_json::from_str(json).unwrap();
    assert!((resp.score - offline).abs() <= 1e-6);
}
