//! Session API for human play, GSP trials and board descriptions.
//!
//! Every state change is first appended to a per-session (or per-chain)
//! JSONL event log and then applied, so restarting the server on the same
//! data directory rebuilds identical state by replay.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use gridmind::board::{Board, BoardDataset};
use gridmind::embeddings::{DescriptionCorpus, DescriptionSource};
use gridmind::env::{heuristic_stats, z_score, EpisodeTrace, HeuristicStats, RevealEnv, DEFAULT_HEURISTIC_RUNS};
use gridmind::rng::{derive_seed, rng_from_seed};

pub const DESCRIBE_PROMPT: &str = "Your goal is to describe this pattern of red squares in words. \
Be as detailed as possible. Someone should be able to reproduce the entire board given your description. \
You may be rewarded based on how detailed your description is.";

pub const GSP_PROMPT: &str = "What should be the underlying color of the covered greyed tile such that \
the board is generated by a very simple rule?";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub datasets: BTreeMap<String, BoardDataset>,
    pub seed: u64,
    pub heuristic_runs: usize,
    pub describe_boards: usize,
    /// Chains kept open before new GSP sessions start sharing them.
    pub gsp_chains: usize,
    pub gsp_side: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            static_dir: None,
            datasets: BTreeMap::new(),
            seed: 0,
            heuristic_runs: DEFAULT_HEURISTIC_RUNS,
            describe_boards: 25,
            gsp_chains: 4,
            gsp_side: 4,
        }
    }
}

/// One line of an event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: u64,
    pub session_id: String,
    pub kind: String,
    pub payload: Value,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn read_log(path: &Path) -> Result<Vec<Event>, ServiceError> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            // a torn final line from a crash mid-write is dropped
            Err(_) if Some(i) == last => break,
            Err(e) => {
                return Err(ServiceError::Log {
                    path: path.into(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn append(path: &Path, e: &Event) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(e).map_err(std::io::Error::other)?;
    f.write_all(format!("{line}\n").as_bytes())?;
    f.sync_data()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Play,
    Gsp,
    Describe,
}

#[derive(Clone, Debug)]
struct Play {
    dataset: String,
    board_id: String,
    seed: u64,
    env: RevealEnv,
    actions: Vec<usize>,
    rewards: Vec<i32>,
    z: Option<f64>,
}

#[derive(Clone, Debug)]
struct Describe {
    dataset: String,
    assignment: Vec<String>,
    submitted: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
enum SessionState {
    Play(Play),
    Gsp { chain_id: String, trials: usize },
    Describe(Describe),
}

#[derive(Clone, Debug)]
struct Session {
    created_at: u64,
    events: usize,
    state: SessionState,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct Chain {
    board: Board,
    masked: usize,
    trials: usize,
    /// Board after each completed trial.
    history: Vec<Board>,
}

struct Store {
    cfg: ServiceConfig,
    sessions: BTreeMap<String, Session>,
    chains: BTreeMap<String, Chain>,
    stats: HashMap<(String, String), HeuristicStats>,
    draws: u64,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

/// Cells as `"red"`, `"white"` or `"grey"` (unknown to the participant).
pub fn board_view(board: &Board, visible: impl Fn(usize) -> bool) -> Vec<Vec<&'static str>> {
    let n = board.n();
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let i = r * n + c;
                    if !visible(i) {
                        "grey"
                    } else if board.is_red(i) {
                        "red"
                    } else {
                        "white"
                    }
                })
                .collect()
        })
        .collect()
}

/// Seed of the heuristic statistics cached for a board.
pub fn stats_seed(service_seed: u64, board: &Board) -> u64 {
    derive_seed(service_seed, board.mask() ^ ((board.n() as u64) << 56))
}

impl Store {
    fn sessions_dir(&self) -> PathBuf {
        self.cfg.data_dir.join("sessions")
    }

    fn chains_dir(&self) -> PathBuf {
        self.cfg.data_dir.join("chains")
    }

    /// Seeds depend only on how many events have been applied, so replay
    /// never disturbs future draws.
    fn seed_for(&self, k: u64) -> u64 {
        derive_seed(self.cfg.seed, self.draws * 16 + k)
    }

    fn dataset(&self, name: &str) -> Result<&BoardDataset, ApiError> {
        self.cfg
            .datasets
            .get(name)
            .ok_or_else(|| bad(format!("unknown dataset {name:?}")))
    }

    fn stats(&mut self, dataset: &str, board_id: &str, board: &Board) -> HeuristicStats {
        let key = (dataset.to_string(), board_id.to_string());
        if let Some(s) = self.stats.get(&key) {
            return s.clone();
        }
        let s = heuristic_stats(board, board_id, self.cfg.heuristic_runs, stats_seed(self.cfg.seed, board))
            .expect("play boards have reds");
        self.stats.insert(key, s.clone());
        s
    }

    fn record(&mut self, dir: PathBuf, id: &str, kind: &str, payload: Value) -> Result<Event, ApiError> {
        let e = Event {
            ts: now_ms(),
            session_id: id.to_string(),
            kind: kind.to_string(),
            payload,
        };
        append(&dir.join(format!("{id}.jsonl")), &e).map_err(internal)?;
        Ok(e)
    }

    fn apply_session(&mut self, e: &Event) -> Result<(), String> {
        let p = &e.payload;
        let s = |k: &str| p[k].as_str().map(str::to_string).ok_or(format!("missing {k}"));
        match e.kind.as_str() {
            "created" => {
                let mode: Mode = serde_json::from_value(p["mode"].clone()).map_err(|x| x.to_string())?;
                let state = match mode {
                    Mode::Play => {
                        let dataset = s("dataset")?;
                        let board_id = s("board_id")?;
                        let seed = p["seed"].as_u64().ok_or("missing seed")?;
                        let board = self
                            .cfg
                            .datasets
                            .get(&dataset)
                            .and_then(|d| d.get(&board_id))
                            .ok_or(format!("unknown board {dataset}/{board_id}"))?
                            .board;
                        let (env, _) = RevealEnv::reset(board, seed).map_err(|x| x.to_string())?;
                        SessionState::Play(Play {
                            dataset,
                            board_id,
                            seed,
                            env,
                            actions: Vec::new(),
                            rewards: Vec::new(),
                            z: None,
                        })
                    }
                    Mode::Gsp => SessionState::Gsp {
                        chain_id: s("chain_id")?,
                        trials: 0,
                    },
                    Mode::Describe => SessionState::Describe(Describe {
                        dataset: s("dataset")?,
                        assignment: serde_json::from_value(p["assignment"].clone()).map_err(|x| x.to_string())?,
                        submitted: Vec::new(),
                    }),
                };
                self.sessions.insert(
                    e.session_id.clone(),
                    Session {
                        created_at: e.ts,
                        events: 0,
                        state,
                    },
                );
            }
            "reveal" => {
                let tile = p["tile"].as_u64().ok_or("missing tile")? as usize;
                let z = p["z"].as_f64();
                let sess = self.sessions.get_mut(&e.session_id).ok_or("unknown session")?;
                let SessionState::Play(play) = &mut sess.state else {
                    return Err("reveal on non-play session".into());
                };
                let r = play.env.step(tile).map_err(|x| x.to_string())?;
                play.actions.push(tile);
                play.rewards.push(r.reward);
                if r.done {
                    play.z = z;
                }
            }
            "gsp" => {
                let sess = self.sessions.get_mut(&e.session_id).ok_or("unknown session")?;
                let SessionState::Gsp { trials, .. } = &mut sess.state else {
                    return Err("gsp on non-gsp session".into());
                };
                *trials += 1;
            }
            "description" => {
                let sess = self.sessions.get_mut(&e.session_id).ok_or("unknown session")?;
                let SessionState::Describe(d) = &mut sess.state else {
                    return Err("description on non-describe session".into());
                };
                d.submitted.push((s("board_id")?, s("text")?));
            }
            other => return Err(format!("unknown event kind {other:?}")),
        }
        self.sessions.get_mut(&e.session_id).unwrap().events += 1;
        self.draws += 1;
        Ok(())
    }

    fn apply_chain(&mut self, e: &Event) -> Result<(), String> {
        let p = &e.payload;
        match e.kind.as_str() {
            "chain-created" => {
                let board: Board = serde_json::from_value(p["grid"].clone()).map_err(|x| x.to_string())?;
                let masked = p["masked"].as_u64().ok_or("missing masked")? as usize;
                self.chains.insert(
                    e.session_id.clone(),
                    Chain {
                        board,
                        masked,
                        trials: 0,
                        history: Vec::new(),
                    },
                );
            }
            "trial" => {
                let chain = self.chains.get_mut(&e.session_id).ok_or("unknown chain")?;
                let tile = p["tile"].as_u64().ok_or("missing tile")? as usize;
                let red = p["value"].as_u64().ok_or("missing value")? == 1;
                if tile != chain.masked {
                    return Err(format!("trial on tile {tile}, chain masks {}", chain.masked));
                }
                chain.board.set_index(tile, red);
                chain.masked = p["next_masked"].as_u64().ok_or("missing next_masked")? as usize;
                chain.trials += 1;
                chain.history.push(chain.board);
            }
            other => return Err(format!("unknown chain event {other:?}")),
        }
        self.draws += 1;
        Ok(())
    }

    fn session(&self, id: &str) -> Result<&Session, ApiError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn view(&self, id: &str) -> Result<Value, ApiError> {
        let sess = self.session(id)?;
        Ok(match &sess.state {
            SessionState::Play(p) => {
                let revealed = p.env.revealed();
                json!({
                    "session_id": id,
                    "mode": Mode::Play,
                    "board_id": p.board_id,
                    "board_view": board_view(p.env.board(), |i| revealed & (1 << i) != 0),
                    "done": p.env.done(),
                    "z_score": p.z,
                })
            }
            SessionState::Gsp { chain_id, trials } => {
                let c = &self.chains[chain_id];
                json!({
                    "session_id": id,
                    "mode": Mode::Gsp,
                    "chain_id": chain_id,
                    "masked_tile": c.masked,
                    "board_view": board_view(&c.board, |i| i != c.masked),
                    "trials": trials,
                    "prompt": GSP_PROMPT,
                })
            }
            SessionState::Describe(d) => {
                let k = d.submitted.len();
                let current = d.assignment.get(k);
                let board_view = current.map(|bid| {
                    let b = self.cfg.datasets[&d.dataset].get(bid).map(|e| e.board).unwrap();
                    board_view(&b, |_| true)
                });
                json!({
                    "session_id": id,
                    "mode": Mode::Describe,
                    "board_id": current,
                    "board_view": board_view,
                    "prompt": DESCRIBE_PROMPT,
                    "progress": { "done": k, "total": d.assignment.len() },
                    "done": current.is_none(),
                })
            }
        })
    }

    fn create(&mut self, mode: &str, dataset: Option<&str>) -> Result<Value, ApiError> {
        let mode: Mode = serde_json::from_value(json!(mode)).map_err(|_| bad(format!("unknown mode {mode:?}")))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let payload = match mode {
            Mode::Play => {
                let name = dataset.ok_or_else(|| bad("play sessions need a dataset"))?;
                let ds = self.dataset(name)?;
                // boards that finish at reset leave nothing to play
                let playable: Vec<(String, f64)> = ds
                    .entries
                    .iter()
                    .filter(|e| e.board.red_count() >= 2 && e.weight > 0.0)
                    .map(|e| (e.id.clone(), e.weight))
                    .collect();
                if playable.is_empty() {
                    return Err(bad(format!("dataset {name:?} has no playable board")));
                }
                let mut rng = rng_from_seed(self.seed_for(0));
                let total: f64 = playable.iter().map(|p| p.1).sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = playable.len() - 1;
                for (i, (_, w)) in playable.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                json!({ "mode": mode, "dataset": name, "board_id": playable[pick].0, "seed": self.seed_for(1) })
            }
            Mode::Describe => {
                let name = dataset.ok_or_else(|| bad("describe sessions need a dataset"))?;
                let ds = self.dataset(name)?;
                let k = self.cfg.describe_boards.min(ds.len());
                let len = ds.len();
                let mut rng = rng_from_seed(self.seed_for(0));
                let ds = self.dataset(name)?;
                let assignment: Vec<String> = sample(&mut rng, len, k)
                    .into_iter()
                    .map(|i| ds.entries[i].id.clone())
                    .collect();
                json!({ "mode": mode, "dataset": name, "assignment": assignment })
            }
            Mode::Gsp => {
                let chain_id = self.attach_chain()?;
                json!({ "mode": mode, "chain_id": chain_id })
            }
        };
        let e = self.record(self.sessions_dir(), &id, "created", payload)?;
        self.apply_session(&e).map_err(internal)?;
        self.view(&id)
    }

    fn attach_chain(&mut self) -> Result<String, ApiError> {
        if self.chains.len() < self.cfg.gsp_chains.max(1) {
            let n = self.cfg.gsp_side;
            let mut rng = rng_from_seed(self.seed_for(2));
            let mut board = Board::empty(n).map_err(internal)?;
            for i in 0..n * n {
                board.set_index(i, rng.random::<bool>());
            }
            let masked = rng.random_range(0..n * n);
            let id = format!("chain-{:03}", self.chains.len());
            let e = self.record(self.chains_dir(), &id, "chain-created", json!({ "grid": board, "masked": masked }))?;
            self.apply_chain(&e).map_err(internal)?;
            return Ok(id);
        }
        Ok(self
            .chains
            .iter()
            .min_by_key(|(id, c)| (c.trials, (*id).clone()))
            .map(|(id, _)| id.clone())
            .unwrap())
    }

    fn reveal(&mut self, id: &str, tile: i64) -> Result<Value, ApiError> {
        let SessionState::Play(play) = &self.session(id)?.state else {
            return Err(bad("not a play session"));
        };
        if play.env.done() {
            return Err(ApiError(StatusCode::CONFLICT, "episode finished".into()));
        }
        let cells = play.env.board().cell_count() as i64;
        if !(0..cells).contains(&tile) {
            return Err(bad(format!("tile {tile} outside 0..{cells}")));
        }
        let tile = tile as usize;
        let mut env = play.env.clone();
        let (dataset, board_id, board) = (play.dataset.clone(), play.board_id.clone(), *play.env.board());
        let r = env.step(tile).map_err(internal)?;
        let z = r.done.then(|| {
            let st = self.stats(&dataset, &board_id, &board);
            z_score(f64::from(env.whites_revealed()), &st)
        });
        let color = if board.is_red(tile) { "red" } else { "white" };
        let payload = json!({ "tile": tile, "color": color, "reward": r.reward, "done": r.done, "z": z });
        let e = self.record(self.sessions_dir(), id, "reveal", payload)?;
        self.apply_session(&e).map_err(internal)?;
        let mut out = self.view(id)?;
        out["color"] = json!(color);
        out["reward"] = json!(r.reward);
        out["z_score"] = json!(z);
        Ok(out)
    }

    fn gsp(&mut self, id: &str, value: i64) -> Result<Value, ApiError> {
        let SessionState::Gsp { chain_id, .. } = &self.session(id)?.state else {
            return Err(bad("not a gsp session"));
        };
        if !(value == 0 || value == 1) {
            return Err(bad("value must be 0 or 1"));
        }
        let chain_id = chain_id.clone();
        let c = &self.chains[&chain_id];
        let cells = c.board.cell_count();
        let tile = c.masked;
        let mut rng = rng_from_seed(self.seed_for(0));
        // a different tile than the one just answered
        let mut next = rng.random_range(0..cells - 1);
        if next >= tile {
            next += 1;
        }
        let e = self.record(
            self.chains_dir(),
            &chain_id,
            "trial",
            json!({ "participant": id, "tile": tile, "value": value, "next_masked": next }),
        )?;
        self.apply_chain(&e).map_err(internal)?;
        let e = self.record(self.sessions_dir(), id, "gsp", json!({ "chain_id": chain_id, "tile": tile, "value": value }))?;
        self.apply_session(&e).map_err(internal)?;
        let mut out = self.view(id)?;
        out["next_masked_tile"] = json!(next);
        Ok(out)
    }

    fn describe(&mut self, id: &str, text: &str, board_id: Option<&str>) -> Result<Value, ApiError> {
        let SessionState::Describe(d) = &self.session(id)?.state else {
            return Err(bad("not a describe session"));
        };
        if text.trim().is_empty() {
            return Err(bad("empty description"));
        }
        if let Some(b) = board_id {
            if d.submitted.iter().any(|(s, _)| s == b) {
                return Err(ApiError(StatusCode::CONFLICT, format!("board {b} already described")));
            }
        }
        let Some(current) = d.assignment.get(d.submitted.len()).cloned() else {
            return Err(ApiError(StatusCode::CONFLICT, "session complete".into()));
        };
        if let Some(b) = board_id {
            if b != current {
                return Err(bad(format!("expected a description of {current}")));
            }
        }
        let e = self.record(self.sessions_dir(), id, "description", json!({ "board_id": current, "text": text }))?;
        self.apply_session(&e).map_err(internal)?;
        let mut out = self.view(id)?;
        out["accepted"] = json!(true);
        out["next_board"] = out["board_id"].clone();
        Ok(out)
    }

    fn export(&self, kind: &str) -> Result<String, ApiError> {
        let mut buf = Vec::new();
        match kind {
            "descriptions" => {
                let mut c = DescriptionCorpus::default();
                for s in self.sessions_in_order() {
                    if let SessionState::Describe(d) = &s.state {
                        for (b, t) in &d.submitted {
                            c.add(b, t.clone(), DescriptionSource::Human);
                        }
                    }
                }
                c.write_jsonl(&mut buf).map_err(internal)?;
            }
            "gsp-boards" => {
                let boards = self.chains.values().flat_map(|c| c.history.iter().copied());
                BoardDataset::from_counts("gsp", boards).write_jsonl(&mut buf).map_err(internal)?;
            }
            "play-traces" => {
                for t in self.play_traces() {
                    writeln!(buf, "{}", serde_json::to_string(&t).map_err(internal)?).map_err(internal)?;
                }
            }
            _ => return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown export {kind:?}"))),
        }
        String::from_utf8(buf).map_err(internal)
    }

    fn sessions_in_order(&self) -> Vec<&Session> {
        let mut v: Vec<(&String, &Session)> = self.sessions.iter().collect();
        v.sort_by(|a, b| (a.1.created_at, a.0).cmp(&(b.1.created_at, b.0)));
        v.into_iter().map(|x| x.1).collect()
    }

    fn play_traces(&self) -> Vec<EpisodeTrace> {
        self.sessions_in_order()
            .into_iter()
            .filter_map(|s| match &s.state {
                SessionState::Play(p) if p.env.done() => Some(EpisodeTrace {
                    board_id: p.board_id.clone(),
                    seed: p.seed,
                    actions: p.actions.clone(),
                    rewards: p.rewards.clone(),
                    whites: p.env.whites_revealed(),
                    z: p.z.unwrap_or(f64::NAN),
                }),
                _ => None,
            })
            .collect()
    }

    /// Deterministic digest of all state, for restart checks.
    fn snapshot(&self) -> Value {
        let sessions: BTreeMap<&String, Value> = self
            .sessions
            .iter()
            .map(|(id, s)| {
                let v = match &s.state {
                    SessionState::Play(p) => json!({
                        "board_id": p.board_id, "seed": p.seed, "revealed": p.env.revealed(),
                        "actions": p.actions, "rewards": p.rewards, "z": p.z, "done": p.env.done(),
                    }),
                    SessionState::Gsp { chain_id, trials } => json!({ "chain": chain_id, "trials": trials }),
                    SessionState::Describe(d) => json!({ "assignment": d.assignment, "submitted": d.submitted }),
                };
                (id, json!({ "events": s.events, "state": v }))
            })
            .collect();
        json!({ "sessions": sessions, "chains": self.chains, "draws": self.draws })
    }
}

/// Shared handle to the server state.
#[derive(Clone)]
pub struct AppState(Arc<Mutex<Store>>);

impl AppState {
    /// Opens (or creates) the data directory and replays every log in it.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let mut store = Store {
            cfg,
            sessions: BTreeMap::new(),
            chains: BTreeMap::new(),
            stats: HashMap::new(),
            draws: 0,
        };
        for dir in [store.sessions_dir(), store.chains_dir()] {
            fs::create_dir_all(dir)?;
        }
        let logs = |dir: PathBuf| -> Result<Vec<PathBuf>, ServiceError> {
            let mut v: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            v.sort();
            Ok(v)
        };
        for path in logs(store.chains_dir())? {
            for e in read_log(&path)? {
                store.apply_chain(&e).map_err(|m| ServiceError::Log {
                    path: path.clone(),
                    line: 0,
                    message: m,
                })?;
            }
        }
        for path in logs(store.sessions_dir())? {
            for e in read_log(&path)? {
                store.apply_session(&e).map_err(|m| ServiceError::Log {
                    path: path.clone(),
                    line: 0,
                    message: m,
                })?;
            }
        }
        Ok(AppState(Arc::new(Mutex::new(store))))
    }

    fn with<T>(&self, f: impl FnOnce(&mut Store) -> T) -> T {
        let mut guard = self.0.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }

    pub fn snapshot(&self) -> Value {
        self.with(|s| s.snapshot())
    }

    pub fn play_traces(&self) -> Vec<EpisodeTrace> {
        self.with(|s| s.play_traces())
    }
}

#[derive(Deserialize)]
struct CreateReq {
    mode: String,
    dataset: Option<String>,
}

#[derive(Deserialize)]
struct RevealReq {
    tile: i64,
}

#[derive(Deserialize)]
struct GspReq {
    value: i64,
}

#[derive(Deserialize)]
struct DescriptionReq {
    text: String,
    board_id: Option<String>,
}

type ApiResult = Result<Json<Value>, ApiError>;

async fn create_session(State(st): State<AppState>, Json(req): Json<CreateReq>) -> ApiResult {
    st.with(|s| s.create(&req.mode, req.dataset.as_deref())).map(Json)
}

async fn get_session(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    st.with(|s| s.view(&id)).map(Json)
}

async fn reveal(State(st): State<AppState>, UrlPath(id): UrlPath<String>, Json(req): Json<RevealReq>) -> ApiResult {
    st.with(|s| s.reveal(&id, req.tile)).map(Json)
}

async fn gsp(State(st): State<AppState>, UrlPath(id): UrlPath<String>, Json(req): Json<GspReq>) -> ApiResult {
    st.with(|s| s.gsp(&id, req.value)).map(Json)
}

async fn description(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<DescriptionReq>,
) -> ApiResult {
    st.with(|s| s.describe(&id, &req.text, req.board_id.as_deref())).map(Json)
}

async fn export(State(st): State<AppState>, UrlPath(kind): UrlPath<String>) -> Result<Response, ApiError> {
    let body = st.with(|s| s.export(&kind))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.with(|s| s.cfg.static_dir.clone());
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/reveal", post(reveal))
        .route("/api/session/{id}/gsp", post(gsp))
        .route("/api/session/{id}/description", post(description))
        .route("/api/export/{kind}", get(export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
