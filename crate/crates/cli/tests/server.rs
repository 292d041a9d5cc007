use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use nsb_cli::server::router;
use nsb_core::dataset::{generate_samples, DatasetConfig};
use nsb_core::dsis::{DsisEngine, FixedStepClock, PlanConfig, RatingStore, SharedEngine, StimulusPool, RATINGS_FILE};
use nsb_core::evaluate::OraclePipeline;
use nsb_core::stimuli::{build_stimulus_pool, StimuliConfig};

struct Fixture {
    _pool_dir: tempfile::TempDir,
    store_dir: tempfile::TempDir,
    app: Router,
}

fn fixture() -> Fixture {
    let samples = generate_samples(12, 17, &DatasetConfig::default()).unwrap();
    let pool_dir = tempfile::tempdir().unwrap();
    let cfg = StimuliConfig { genuine_per_class: 10, decoys_per_class: 2, seed: 3 };
    build_stimulus_pool(&samples, &OraclePipeline, &cfg, pool_dir.path()).unwrap();
    let pool = StimulusPool::load(pool_dir.path()).unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let store = RatingStore::open(store_dir.path()).unwrap();
    let engine = DsisEngine::new(pool, store, Box::new(FixedStepClock::new(5_000, 1)), PlanConfig::default());
    Fixture { _pool_dir: pool_dir, store_dir, app: router(SharedEngine::new(engine)) }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, bytes, ctype)
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn full_rating_session_over_http() {
    let f = fixture();
    let (status, created) =
        json_call(&f.app, "POST", "/sessions", Some(json!({"rater_id": "anon-7", "cohort": "neurologist", "seed": 4}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created, json!({"session_id": "S0001", "total": 24}));

    for k in 0..24 {
        let (status, next) = json_call(&f.app, "GET", "/sessions/S0001/next", None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(next["progress"], json!({"rated": k, "total": 24}));
        let text = next.to_string();
        assert!(!text.contains("decoy") && !text.contains("glioma") && !text.contains("meningioma"));
        let stim = &next["stimulus"];
        for key in ["reference_url", "processed_url"] {
            let (status, bytes, ctype) = call(&f.app, "GET", stim[key].as_str().unwrap(), None).await;
            assert_eq!(status, StatusCode::OK);
            assert!(bytes.starts_with(b"P5"));
            assert_eq!(ctype.as_deref(), Some("image/x-portable-graymap"));
        }
        let id = stim["stimulus_id"].as_str().unwrap();
        let (status, rec) = json_call(
            &f.app,
            "POST",
            "/sessions/S0001/ratings",
            Some(json!({"stimulus_id": id, "scale": 1 + k % 5, "percent": 4 * k})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED);
        assert_eq!(rec["timestamp"], 5_000 + k);
    }
    let (_, done) = json_call(&f.app, "GET", "/sessions/S0001/next", None).await;
    assert_eq!(done["stimulus"], Value::Null);

    let (status, summary) = json_call(&f.app, "GET", "/results/summary", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["summary"]["total"], 24);
    assert_eq!(summary["summary"]["groups"].as_array().unwrap().len(), 2);
    assert_eq!(summary["decoy_sensitivity"][0]["decoy_count"], 4);

    let (status, csv, ctype) = call(&f.app, "GET", "/results/export", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.unwrap().starts_with("text/csv"));
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 25);
    assert!(csv.starts_with("session_id,stimulus_id,scale,percent,timestamp\n"));
}

#[tokio::test]
async fn error_statuses() {
    let f = fixture();
    json_call(&f.app, "POST", "/sessions", Some(json!({"rater_id": "a", "cohort": "medical_officer", "seed": 1}))).await;
    let (_, next) = json_call(&f.app, "GET", "/sessions/S0001/next", None).await;
    let id = next["stimulus"]["stimulus_id"].as_str().unwrap().to_string();
    let rate = |scale: i64, percent: i64| json!({"stimulus_id": id, "scale": scale, "percent": percent});

    for (scale, percent) in [(0, 50), (6, 50), (3, -1), (3, 101)] {
        let (status, body) = json_call(&f.app, "POST", "/sessions/S0001/ratings", Some(rate(scale, percent))).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{scale} {percent}");
        assert!(body["error"].as_str().unwrap().ends_with("out_of_range"));
        assert!(body["message"].is_string());
    }
    let (status, _) = json_call(&f.app, "POST", "/sessions/S0001/ratings", Some(rate(3, 50))).await;
    assert_eq!(status, StatusCode::CREATED);
    let log = std::fs::read(f.store_dir.path().join(RATINGS_FILE)).unwrap();
    let (status, body) = json_call(&f.app, "POST", "/sessions/S0001/ratings", Some(rate(4, 60))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "duplicate_rating");
    assert_eq!(std::fs::read(f.store_dir.path().join(RATINGS_FILE)).unwrap(), log);

    let (status, body) = json_call(&f.app, "GET", "/sessions/S0404/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_session");
    let (status, _) = json_call(&f.app, "POST", "/sessions/S0001/ratings", Some(json!({"stimulus_id": "x", "scale": 3, "percent": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = json_call(&f.app, "POST", "/sessions", Some(json!({"rater_id": "a", "cohort": "surgeon"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_request");
    let (status, _) = json_call(&f.app, "POST", "/sessions", Some(json!({"rater_id": " ", "cohort": "neurologist"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = json_call(&f.app, "POST", "/sessions/S0001/ratings", Some(json!({"stimulus_id": id, "scale": "five"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn only_listed_stimulus_files_are_served() {
    let f = fixture();
    for uri in ["/stimuli/stimuli.csv", "/stimuli/reference/none.pgm", "/stimuli/../Cargo.toml", "/stimuli/reference"] {
        let (status, _, _) = call(&f.app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
    let (status, _, _) = call(&f.app, "GET", "/stimuli/reference/stim_000.pgm", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn summary_before_any_decoy_rating() {
    let f = fixture();
    let (status, body) = json_call(&f.app, "GET", "/results/summary", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["summary"]["total"], 0);
    assert_eq!(body["decoy_sensitivity"], Value::Null);
    let (_, scale) = json_call(&f.app, "GET", "/scale", None).await;
    assert_eq!(scale.as_array().unwrap().len(), 5);
    assert_eq!(scale[4]["label"], "Accurately localized and segmented");
}
