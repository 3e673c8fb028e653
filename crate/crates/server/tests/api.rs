mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use common::{get, send, Workspace, VIDEO_LEN};
use mmtl_core::timeline::{resample, serialize};
use mmtl_server::store::SessionStore;
use mmtl_sim::builtin;

fn golden() -> Workspace {
    let ws = Workspace::new();
    ws.processed(&builtin::golden());
    ws
}

#[tokio::test]
async fn empty_store_lists_nothing() {
    let ws = Workspace::new();
    let r = get(&ws.router(), "/sessions").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.text(), "[]");
}

#[tokio::test]
async fn sessions_and_students() {
    let ws = golden();
    let router = ws.router();
    assert_eq!(get(&router, "/sessions").await.text(), r#"["golden"]"#);
    assert_eq!(get(&router, "/sessions/golden/students").await.text(), r#"["s1","s2","s3"]"#);
}

#[tokio::test]
async fn timeline_query_equals_the_library_call() {
    let ws = golden();
    let router = ws.router();
    let full = SessionStore::new(ws.root()).timeline("golden").unwrap();

    let r = get(&router, "/sessions/golden/timeline").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[header::CONTENT_TYPE], "application/json");
    assert_eq!(r.text(), serialize(&full));

    let r = get(&router, "/sessions/golden/timeline?resolution=5").await;
    assert_eq!(r.text(), serialize(&resample(&full, 5.0).unwrap()));
}

#[tokio::test]
async fn timeline_selection_and_window() {
    let ws = golden();
    let router = ws.router();
    let r = get(&router, "/sessions/golden/timeline?students=s3,s1&lanes=gaze,affect&from=5&to=20").await;
    assert_eq!(r.status, StatusCode::OK);
    let lanes = r.json()["lanes"].as_array().unwrap().clone();
    let ids: Vec<(String, String)> = lanes
        .iter()
        .map(|l| (l["student"].as_str().unwrap().to_string(), l["lane_id"].as_str().unwrap().to_string()))
        .collect();
    let expect = [("s1", "affect"), ("s1", "gaze"), ("s3", "affect"), ("s3", "gaze")];
    assert_eq!(ids, expect.map(|(a, b)| (a.to_string(), b.to_string())));
    for lane in &lanes {
        for s in lane["segments"].as_array().unwrap() {
            assert!(s["start"].as_f64().unwrap() >= 5.0 && s["end"].as_f64().unwrap() <= 20.0);
        }
    }
    let system = get(&router, "/sessions/golden/timeline?lanes=system").await.json();
    assert_eq!(system["lanes"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn identical_requests_give_identical_bytes() {
    let ws = golden();
    let router = ws.router();
    let uri = "/sessions/golden/timeline?lanes=state,actions&resolution=2.5";
    let a = get(&router, uri).await;
    let b = get(&router, uri).await;
    assert_eq!(a.body, b.body);
}

#[tokio::test]
async fn malformed_queries_are_rejected_with_the_field() {
    let ws = golden();
    let router = ws.router();
    for (query, field) in [
        ("resolution=-1", "resolution"),
        ("resolution=0", "resolution"),
        ("resolution=abc", "resolution"),
        ("from=-2", "from"),
        ("from=10&to=5", "to"),
        ("to=nan", "to"),
        ("lanes=smell", "lanes"),
        ("students=nobody", "students"),
    ] {
        let r = get(&router, &format!("/sessions/golden/timeline?{query}")).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{query}");
        assert_eq!(r.json()["field"], field, "{query}");
        assert!(r.json()["error"].is_string());
    }
    let r = get(&router, "/sessions/golden/timeline?zoom=3").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let ws = golden();
    let router = ws.router();
    for path in ["students", "timeline", "metrics", "video-meta", "video/cam0"] {
        let r = get(&router, &format!("/sessions/nope/{path}")).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{path}");
    }
    assert_eq!(get(&router, "/sessions/golden/video/cam9").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn metrics_are_served_from_disk() {
    let ws = golden();
    let r = get(&ws.router(), "/sessions/golden/metrics").await;
    assert_eq!(r.status, StatusCode::OK);
    let on_disk = std::fs::read_to_string(ws.root().join("golden/metrics.json")).unwrap();
    assert_eq!(r.text(), on_disk.trim_end());
    assert_eq!(r.json()["s1"]["cycles_completed"], 1);
}

#[tokio::test]
async fn video_meta_lists_cameras_and_offsets() {
    let ws = golden();
    let meta = get(&ws.router(), "/sessions/golden/video-meta").await.json();
    assert_eq!(meta["fps"], 30);
    let cam = &meta["cameras"][0];
    assert_eq!(cam["camera_id"], "cam0");
    assert_eq!(cam["file"], "cam0.mp4");
    assert_eq!(cam["start_offset_seconds"], 1.5);
    assert_eq!(cam["url"], "/sessions/golden/video/cam0");
    assert_eq!(meta["streams"][0]["stream_id"], "cam0");
}

#[tokio::test]
async fn video_supports_byte_ranges() {
    let ws = golden();
    let router = ws.router();
    let full = get(&router, "/sessions/golden/video/cam0").await;
    assert_eq!(full.status, StatusCode::OK);
    assert_eq!(full.body.len(), VIDEO_LEN);
    assert_eq!(full.headers[header::ACCEPT_RANGES], "bytes");

    let ranged = |range: &str| Request::get("/sessions/golden/video/cam0").header(header::RANGE, range).body(Body::empty()).unwrap();
    let r = send(&router, ranged("bytes=1000-1009")).await;
    assert_eq!(r.status, StatusCode::PARTIAL_CONTENT);
    assert_eq!(r.headers[header::CONTENT_RANGE], format!("bytes 1000-1009/{VIDEO_LEN}"));
    assert_eq!(r.body, (1000..1010).map(|i| i as u8).collect::<Vec<u8>>());

    let tail = send(&router, ranged("bytes=-16")).await;
    assert_eq!(tail.status, StatusCode::PARTIAL_CONTENT);
    assert_eq!(tail.body.len(), 16);

    let bad = send(&router, ranged(&format!("bytes={}-", VIDEO_LEN + 10))).await;
    assert_eq!(bad.status, StatusCode::RANGE_NOT_SATISFIABLE);
}

#[tokio::test]
async fn serving_does_not_touch_the_store() {
    let ws = golden();
    let before = common::read_dir_files(&ws.root().join("golden"));
    let router = ws.router();
    for uri in ["/sessions", "/sessions/golden/timeline?resolution=3", "/sessions/golden/metrics", "/sessions/golden/video/cam0"] {
        get(&router, uri).await;
    }
    assert_eq!(common::read_dir_files(&ws.root().join("golden")), before);
}
