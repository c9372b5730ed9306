use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use gridmind::board::{Board, BoardDataset};
use gridmind::embeddings::DescriptionCorpus;
use gridmind::env::{heuristic_stats, z_score, EpisodeTrace, RevealEnv};
use gridmind::priors::{generate_prior_corpus, RuleGenerator};
use gridmind_service::{read_log, router, stats_seed, AppState, ServiceConfig, DESCRIBE_PROMPT};

const SEED: u64 = 5;

fn config(dir: &Path) -> ServiceConfig {
    let mut cfg = ServiceConfig::new(dir);
    cfg.seed = SEED;
    let rows = BoardDataset::from_counts(
        "row",
        (0..4).map(|r| Board::from_cells(&[(r, 0), (r, 1), (r, 2), (r, 3)], 4).unwrap()),
    );
    cfg.datasets.insert("rows".into(), rows);
    cfg.datasets
        .insert("priors".into(), generate_prior_corpus(&RuleGenerator::uniform(4), 300, 1).unwrap());
    cfg
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

async fn export(state: &AppState, kind: &str) -> String {
    let req = Request::builder().uri(format!("/api/export/{kind}")).body(Body::empty()).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    String::from_utf8(bytes.to_vec()).unwrap()
}

fn count(view: &Value, colour: &str) -> usize {
    view["board_view"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap())
        .filter(|c| *c == colour)
        .count()
}

async fn play_to_end(state: &AppState) -> (String, Vec<Value>) {
    let (s, v) = call(state, "POST", "/api/session", Some(json!({"mode": "play", "dataset": "rows"}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(count(&v, "red"), 1);
    assert_eq!(count(&v, "grey"), 15);
    let id = v["session_id"].as_str().unwrap().to_string();
    let mut replies = Vec::new();
    // sweep row-major: reveals whites before reaching the red row
    for tile in 0..16 {
        let (s, r) = call(state, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"tile": tile}))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        let reward = r["reward"].as_i64().unwrap();
        assert!([-2, -1, 1, 5].contains(&reward));
        let done = r["done"].as_bool().unwrap();
        assert_eq!(r["z_score"].is_f64(), done);
        replies.push(r);
        if done {
            break;
        }
    }
    (id, replies)
}

#[tokio::test]
async fn play_session_matches_offline_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let state = AppState::open(cfg.clone()).unwrap();
    let (id, replies) = play_to_end(&state).await;
    let last = replies.last().unwrap();
    assert_eq!(last["reward"], 5);

    let (s, _) = call(&state, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"tile": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let body = export(&state, "play-traces").await;
    let traces: Vec<EpisodeTrace> = body
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(traces.len(), 1);
    let t = &traces[0];
    let entry = cfg.datasets["rows"].get(&t.board_id).unwrap();
    let (mut env, _) = RevealEnv::reset(entry.board, t.seed).unwrap();
    let mut rewards = Vec::new();
    for &a in &t.actions {
        rewards.push(env.step(a).unwrap().reward);
    }
    assert!(env.done());
    assert_eq!(rewards, t.rewards);
    let stats = heuristic_stats(&entry.board, &t.board_id, 1000, stats_seed(SEED, &entry.board)).unwrap();
    let z = z_score(f64::from(env.whites_revealed()), &stats);
    assert_eq!(z, t.z);
    assert_eq!(z, last["z_score"].as_f64().unwrap());
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(config(dir.path())).unwrap();
    let (s, _) = call(&state, "POST", "/api/session", Some(json!({"mode": "dance"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&state, "POST", "/api/session", Some(json!({"mode": "play", "dataset": "nope"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&state, "POST", "/api/session", Some(json!({"mode": "play"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&state, "POST", "/api/session/missing/reveal", Some(json!({"tile": 1}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, v) = call(&state, "POST", "/api/session", Some(json!({"mode": "play", "dataset": "rows"}))).await;
    let id = v["session_id"].as_str().unwrap();
    for tile in [-1, 16] {
        let (s, _) = call(&state, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"tile": tile}))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
    }
    let (s, _) = call(&state, "POST", &format!("/api/session/{id}/gsp"), Some(json!({"value": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&state, "GET", "/api/export/secrets", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn gsp_chains_keep_one_grey_tile_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.gsp_chains = 2;
    let state = AppState::open(cfg).unwrap();
    let mut ids = Vec::new();
    for _ in 0..3 {
        let (s, v) = call(&state, "POST", "/api/session", Some(json!({"mode": "gsp"}))).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(count(&v, "grey"), 1);
        ids.push(v["session_id"].as_str().unwrap().to_string());
    }
    let mut trials = 0;
    for (k, id) in ids.iter().enumerate() {
        for t in 0..5 {
            let (s, v) = call(&state, "GET", &format!("/api/session/{id}"), None).await;
            assert_eq!(s, StatusCode::OK);
            let before = v["masked_tile"].as_u64().unwrap();
            let (s, v) =
                call(&state, "POST", &format!("/api/session/{id}/gsp"), Some(json!({"value": (k + t) % 2}))).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            assert_eq!(count(&v, "grey"), 1);
            assert_ne!(v["next_masked_tile"].as_u64().unwrap(), before);
            trials += 1;
        }
    }
    // the third session joined the chain with fewer trials
    let chains: Vec<Value> = {
        let snap = state.snapshot();
        snap["chains"].as_object().unwrap().values().cloned().collect()
    };
    assert_eq!(chains.len(), 2);
    let body = export(&state, "gsp-boards").await;
    let ds = BoardDataset::read_jsonl(body.as_bytes()).unwrap();
    assert_eq!(ds.total_weight(), trials as f64);
    let (s, _) = call(&state, "POST", &format!("/api/session/{}/gsp", ids[0]), Some(json!({"value": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn gsp_log_replays_to_the_same_board() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(config(dir.path())).unwrap();
    let (_, v) = call(&state, "POST", "/api/session", Some(json!({"mode": "gsp"}))).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let chain = v["chain_id"].as_str().unwrap().to_string();
    let mut last = v;
    for t in 0..12 {
        last = call(&state, "POST", &format!("/api/session/{id}/gsp"), Some(json!({"value": t % 2}))).await.1;
    }
    let events = read_log(&dir.path().join("chains").join(format!("{chain}.jsonl"))).unwrap();
    let mut board: Board = serde_json::from_value(events[0].payload["grid"].clone()).unwrap();
    for e in &events[1..] {
        board.set_index(e.payload["tile"].as_u64().unwrap() as usize, e.payload["value"] == 1);
    }
    let masked = last["masked_tile"].as_u64().unwrap() as usize;
    for (i, cell) in last["board_view"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).enumerate() {
        if i != masked {
            assert_eq!(cell == "red", board.is_red(i), "tile {i}");
        }
    }
}

#[tokio::test]
async fn describe_session_collects_twenty_five() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(config(dir.path())).unwrap();
    let (_, v) = call(&state, "POST", "/api/session", Some(json!({"mode": "describe", "dataset": "priors"}))).await;
    assert_eq!(count(&v, "grey"), 0);
    assert_eq!(v["prompt"], DESCRIBE_PROMPT);
    let id = v["session_id"].as_str().unwrap().to_string();
    let uri = format!("/api/session/{id}/description");
    let (s, _) = call(&state, "POST", &uri, Some(json!({"text": "   "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let mut seen = Vec::new();
    let mut board_id = v["board_id"].as_str().unwrap().to_string();
    for k in 0..25 {
        let (s, r) = call(&state, "POST", &uri, Some(json!({"text": format!("pattern {k}"), "board_id": board_id}))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        assert_eq!(r["accepted"], true);
        seen.push(board_id.clone());
        if k < 24 {
            board_id = r["next_board"].as_str().unwrap().to_string();
        } else {
            assert!(r["next_board"].is_null());
            assert_eq!(r["done"], true);
        }
    }
    let (s, _) = call(&state, "POST", &uri, Some(json!({"text": "again", "board_id": seen[3]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&state, "POST", &uri, Some(json!({"text": "extra"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let body = export(&state, "descriptions").await;
    let corpus = DescriptionCorpus::read_jsonl(body.as_bytes()).unwrap();
    let total: usize = corpus.entries.values().map(Vec::len).sum();
    assert_eq!(total, 25);
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 25);
}

#[tokio::test]
async fn restart_replays_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let state = AppState::open(cfg.clone()).unwrap();
    let (play_id, _) = {
        let (_, v) = call(&state, "POST", "/api/session", Some(json!({"mode": "play", "dataset": "rows"}))).await;
        (v["session_id"].as_str().unwrap().to_string(), ())
    };
    for tile in [0, 5] {
        call(&state, "POST", &format!("/api/session/{play_id}/reveal"), Some(json!({"tile": tile}))).await;
    }
    let (_, g) = call(&state, "POST", "/api/session", Some(json!({"mode": "gsp"}))).await;
    let gid = g["session_id"].as_str().unwrap().to_string();
    for v in [1, 0, 1] {
        call(&state, "POST", &format!("/api/session/{gid}/gsp"), Some(json!({"value": v}))).await;
    }
    let (_, d) = call(&state, "POST", "/api/session", Some(json!({"mode": "describe", "dataset": "priors"}))).await;
    let did = d["session_id"].as_str().unwrap().to_string();
    call(&state, "POST", &format!("/api/session/{did}/description"), Some(json!({"text": "a cross"}))).await;

    let before = state.snapshot();
    drop(state);
    // simulate a crash that tore the last write of the play log
    let log = dir.path().join("sessions").join(format!("{play_id}.jsonl"));
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"ts\":1,\"session_id\":");
    std::fs::write(&log, text).unwrap();

    let reopened = AppState::open(cfg).unwrap();
    assert_eq!(reopened.snapshot(), before);
    let (_, a) = call(&reopened, "GET", &format!("/api/session/{gid}"), None).await;
    let (_, b) = call(&reopened, "POST", &format!("/api/session/{gid}/gsp"), Some(json!({"value": 0}))).await;
    assert_eq!(b["trials"], a["trials"].as_u64().unwrap() + 1);
}

#[tokio::test]
async fn static_bundle_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>gridmind</html>").unwrap();
    let mut cfg = config(dir.path());
    cfg.static_dir = Some(web.path().to_path_buf());
    let state = AppState::open(cfg).unwrap();
    let (s, body) = call(&state, "GET", "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(body.as_str().unwrap().contains("gridmind"));
}
