use std::sync::Arc;

use avra_core::audio::{encode_wav_pcm16, resample_linear, AudioBuffer};
use avra_core::dataset::{flatten, generate_synthetic_corpus, standardize, synthesize_clip, RegisterLabel, SyntheticCorpusConfig};
use avra_core::image::SpectrogramImage;
use avra_core::svm::{self, SvmTrainConfig};
use avra_core::Svm;
use avra_service::{router, AnalyzeResponse, AppState, ServiceConfig, UploadResponse};
use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use tower::ServiceExt;

fn small_svm() -> Svm {
    let cfg = SyntheticCorpusConfig {
        per_class: 8,
        ..SyntheticCorpusConfig::default()
    };
    let clips = generate_synthetic_corpus::<f64>(&cfg).unwrap();
    let xs: Vec<Vec<f64>> = clips.iter().map(|c| flatten(&standardize(&c.image).unwrap()).unwrap()).collect();
    let ys: Vec<RegisterLabel> = clips.iter().map(|c| c.label).collect();
    svm::train(&xs, &ys, &SvmTrainConfig::default()).unwrap()
}

fn app_with(config: ServiceConfig) -> Router {
    router(Arc::new(AppState::new(config, Some(small_svm()), None).unwrap()))
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

fn clip_wav(label: RegisterLabel, seconds: f64, rate: u32) -> Vec<u8> {
    let cfg = SyntheticCorpusConfig {
        clip_seconds: seconds,
        ..SyntheticCorpusConfig::default()
    };
    let audio = synthesize_clip::<f64>(&cfg, label, 500).unwrap();
    encode_wav_pcm16(&resample_linear(&audio, rate).unwrap())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, ctype, body)
}

async fn upload(app: &Router, wav: Vec<u8>) -> UploadResponse {
    let (status, _, body) = send(app, Request::post("/audio").body(Body::from(wav)).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

fn analyze_req(body: serde_json::Value, accept: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/analyze").header(header::CONTENT_TYPE, "application/json");
    if let Some(a) = accept {
        b = b.header(header::ACCEPT, a);
    }
    b.body(Body::from(body.to_string())).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn error_message(body: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn upload_render_and_analyze() {
    let app = app();
    let up = upload(&app, clip_wav(RegisterLabel::HeadMix, 4.0, 22_050)).await;
    assert_eq!(up.sample_rate, 22_050);
    assert!((up.duration_s - 4.0).abs() < 1e-3);

    let (status, ctype, png) = send(&app, get(&format!("/audio/{}/spectrogram", up.id))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let full = SpectrogramImage::<f64>::from_png(&png).unwrap();
    assert_eq!(full.height(), 128);
    assert!(full.width() > 154);

    let (_, _, part) = send(&app, get(&format!("/audio/{}/spectrogram?start_s=0.5&end_s=3.5", up.id))).await;
    assert_eq!(SpectrogramImage::<f64>::from_png(&part).unwrap().width(), 154);

    let req = serde_json::json!({"id": up.id, "start_s": 0.5, "end_s": 3.5, "model": "svm"});
    let (status, _, body) = send(&app, analyze_req(req.clone(), None)).await;
    assert_eq!(status, StatusCode::OK);
    let a: AnalyzeResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((a.width, a.height, a.tick_spacing), (154, 128, 10));
    let xs: Vec<usize> = a.ticks.iter().map(|t| t.x).collect();
    assert_eq!(xs, (0..154).step_by(10).collect::<Vec<_>>());
    assert!(a.ticks.iter().all(|t| t.label < 4 && (0.0..=1.0).contains(&t.confidence)));
    assert_eq!(a.runs.first().unwrap().start_x, 0);
    assert_eq!(a.runs.len(), a.markers.len() + 1);

    let (_, _, again) = send(&app, analyze_req(req.clone(), None)).await;
    assert_eq!(body, again);

    let (status, ctype, text) = send(&app, analyze_req(req, Some("text/plain"))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.unwrap().starts_with("text/plain"));
    let text = String::from_utf8(text).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), a.ticks.len());
    for (line, t) in lines.iter().zip(&a.ticks) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), t.x);
        assert_eq!(f[1].parse::<u8>().unwrap(), t.label);
        assert!((f[2].parse::<f64>().unwrap() - t.confidence).abs() < 1e-6);
    }

    let (status, ctype, ann) = send(&app, get(&a.annotated)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let (_, _, ann2) = send(&app, get(&a.annotated)).await;
    assert_eq!(ann, ann2);
    assert_ne!(ann, part);
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let up = upload(&app, clip_wav(RegisterLabel::Chest, 1.0, 44_100)).await;

    let (status, _, body) = send(&app, get("/audio/nope/spectrogram")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(error_message(&body).contains("nope"));

    for q in ["start_s=0.8&end_s=0.2", "start_s=-1&end_s=0.5", "start_s=0&end_s=9"] {
        let (status, _, body) = send(&app, get(&format!("/audio/{}/spectrogram?{q}", up.id))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{q}");
        assert!(!error_message(&body).is_empty());
    }

    let (status, _, _) = send(&app, Request::post("/analyze").body(Body::from("{not json")).unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let missing = serde_json::json!({"id": "zz", "start_s": 0.0, "end_s": 1.0, "model": "svm"});
    assert_eq!(send(&app, analyze_req(missing, None)).await.0, StatusCode::NOT_FOUND);

    for model in ["cnn", "forest"] {
        let req = serde_json::json!({"id": up.id, "start_s": 0.0, "end_s": 1.0, "model": model});
        let (status, _, body) = send(&app, analyze_req(req, None)).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert!(error_message(&body).contains(model));
    }

    let bad_range = serde_json::json!({"id": up.id, "start_s": 0.5, "end_s": 0.5, "model": "svm"});
    assert_eq!(send(&app, analyze_req(bad_range, None)).await.0, StatusCode::BAD_REQUEST);

    let (status, _, _) = send(&app, Request::post("/audio").body(Body::from("RIFFjunk")).unwrap()).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _, _) = send(&app, Request::post("/audio").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);

    let (status, _, _) = send(&app, get(&format!("/audio/{}/annotated?start_s=0&end_s=1", up.id))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let app = app_with(ServiceConfig {
        max_body_bytes: 10_000,
        ..ServiceConfig::default()
    });
    let (status, _, _) = send(&app, Request::post("/audio").body(Body::from(clip_wav(RegisterLabel::Mix, 1.0, 44_100))).unwrap()).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn ids_are_distinct_and_evicted() {
    let app = app_with(ServiceConfig {
        store_capacity: 2,
        ..ServiceConfig::default()
    });
    let silence = encode_wav_pcm16(&AudioBuffer::new(vec![0.0f64; 8000], 8000).unwrap());
    let a = upload(&app, silence.clone()).await;
    let b = upload(&app, silence.clone()).await;
    let c = upload(&app, silence).await;
    assert!(a.id != b.id && b.id != c.id && a.id != c.id);
    assert_eq!(send(&app, get(&format!("/audio/{}/spectrogram", a.id))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, get(&format!("/audio/{}/spectrogram", c.id))).await.0, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_agree() {
    let app = app();
    let up = upload(&app, clip_wav(RegisterLabel::Head, 3.0, 44_100)).await;
    let req = serde_json::json!({"id": up.id, "start_s": 0.0, "end_s": 3.0, "model": "svm"});
    let reference = send(&app, analyze_req(req.clone(), None)).await.2;
    let mut handles = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        let req = req.clone();
        let id = up.id.clone();
        handles.push(tokio::spawn(async move {
            if i % 2 == 0 {
                send(&app, analyze_req(req, None)).await
            } else {
                send(&app, get(&format!("/audio/{id}/spectrogram"))).await
            }
        }));
    }
    for (i, h) in handles.into_iter().enumerate() {
        let (status, _, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        if i % 2 == 0 {
            assert_eq!(body, reference);
        }
    }
}
