use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use gridmind::agent::{curve_csv, evaluate, train, write_traces, AgentError, PolicyNet, PpoConfig};
use gridmind::analysis::{bootstrap_test, dl_report, mean, pearson, rsa_matrix};
use gridmind::board::BoardDataset;
use gridmind::dsl::{Library, Program};
use gridmind::embeddings::{DescriptionCorpus, EmbeddingError, EmbeddingProvider};
use gridmind::library::compress as compress_programs;
use gridmind::priors::{
    generate_prior_corpus, gibbs_sample, masked_accuracy, train_conditional as fit_model, ConditionalModel, RuleFamily,
    RuleGenerator,
};
use gridmind::synthesis::{wake_sleep, RecognitionNet, Solution, SolutionRecord};

use crate::manifest::{manifest_for, RunRecorder};
use crate::{load_dataset, require_file, runtime, write_file, write_json, CliError, ExperimentConfig};

/// Appends `suffix` to the file name of `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn recorder(command: &str, cfg: &ExperimentConfig, args: Value) -> RunRecorder {
    let config = json!({ "experiment": cfg, "args": args });
    RunRecorder::new(command, config, json!({ "seed": cfg.seed }))
}

fn say(summary: &Value) {
    println!("{summary}");
}

fn agent_error(e: AgentError) -> CliError {
    match e {
        AgentError::Config(_)
        | AgentError::PsiDim { .. }
        | AgentError::MissingBoard(_)
        | AgentError::BoardSize { .. }
        | AgentError::NoProvider => CliError::Validation(e.to_string()),
        other => runtime(other),
    }
}

fn embedding_error(path: &Path, e: EmbeddingError) -> CliError {
    match e {
        EmbeddingError::Io(io) => CliError::Runtime(format!("{}: {io}", path.display())),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

pub fn load_descriptions(path: &Path) -> Result<DescriptionCorpus, CliError> {
    require_file(path)?;
    DescriptionCorpus::load(path).map_err(|e| embedding_error(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingProvider, CliError> {
    require_file(path)?;
    EmbeddingProvider::ingest(path).map_err(|e| embedding_error(path, e))
}

pub fn load_library(path: &Path) -> Result<Library, CliError> {
    require_file(path)?;
    Library::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_solutions(path: &Path, library: &Library) -> Result<Vec<Solution>, CliError> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(runtime)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Validation(format!("{}: line {}: {m}", path.display(), i + 1));
        let rec: SolutionRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        out.push(Solution::from_record(&rec, library).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

fn solutions_jsonl(solutions: &[Solution]) -> Result<String, CliError> {
    let mut s = String::new();
    for sol in solutions {
        s += &serde_json::to_string(&sol.record()).map_err(runtime)?;
        s.push('\n');
    }
    Ok(s)
}

fn save_dataset(ds: &BoardDataset, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).map_err(runtime)?;
    write_file(path, &buf)
}

pub fn gen_priors(cfg: &ExperimentConfig, a: &crate::GenPriorsArgs) -> Result<Value, CliError> {
    let count = a.count.unwrap_or(cfg.prior_count);
    let side = a.side.unwrap_or(cfg.side);
    let gen = match &a.family {
        None => RuleGenerator::uniform(side),
        Some(f) => {
            let fam: RuleFamily = serde_json::from_value(Value::String(f.clone()))
                .map_err(|_| CliError::Validation(format!("unknown rule family {f:?}")))?;
            RuleGenerator::only(side, fam)
        }
    };
    let mut rec = recorder("gen-priors", cfg, json!({ "count": count, "side": side, "family": a.family }));
    let ds = generate_prior_corpus(&gen, count, cfg.seed).map_err(|e| CliError::Validation(e.to_string()))?;
    save_dataset(&ds, &a.out)?;
    rec.output(&a.out);
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({ "out": a.out, "boards": ds.len(), "draws": ds.total_weight() });
    say(&summary);
    Ok(summary)
}

pub fn train_conditional(cfg: &ExperimentConfig, a: &crate::TrainConditionalArgs) -> Result<Value, CliError> {
    let ds = load_dataset(&a.data)?;
    let mut tc = cfg.conditional.clone();
    tc.seed = cfg.seed;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let mut rec = recorder("train-conditional", cfg, json!({ "data": a.data, "train": tc }));
    let (model, losses) = fit_model(&ds, &tc).map_err(runtime)?;
    let accuracy = masked_accuracy(&model, &ds, cfg.accuracy_trials.max(1), gridmind::rng::derive_seed(cfg.seed, 7))
        .map_err(runtime)?;
    model.save(&a.out).map_err(runtime)?;
    let report = json!({ "final_loss": losses.last(), "losses": losses, "masked_accuracy": accuracy });
    let report_path = sibling(&a.out, ".report.json");
    write_json(&report_path, &report)?;
    rec.output(&a.out);
    rec.output(gridmind::nn::checkpoint::manifest_path(&a.out));
    rec.output(&report_path);
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({ "out": a.out, "masked_accuracy": accuracy, "final_loss": losses.last() });
    say(&summary);
    Ok(summary)
}

pub fn gibbs(cfg: &ExperimentConfig, a: &crate::GibbsArgs) -> Result<Value, CliError> {
    require_file(&a.model)?;
    let model = ConditionalModel::load(&a.model).map_err(|e| CliError::Validation(format!("{}: {e}", a.model.display())))?;
    let mut gc = cfg.gibbs.clone();
    gc.seed = cfg.seed;
    if let Some(c) = a.chains {
        gc.chains = c;
    }
    if let Some(s) = a.sweeps {
        gc.sweeps = s;
    }
    gc.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let mut rec = recorder("gibbs", cfg, json!({ "model": a.model, "gibbs": gc }));
    let ds = gibbs_sample(&model, model.side(), &gc).map_err(runtime)?;
    save_dataset(&ds, &a.out)?;
    rec.output(&a.out);
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({ "out": a.out, "boards": ds.len(), "samples": ds.total_weight() });
    say(&summary);
    Ok(summary)
}

pub fn synthesize(cfg: &ExperimentConfig, a: &crate::SynthesizeArgs) -> Result<Value, CliError> {
    let ds = load_dataset(&a.data)?;
    let tasks = ds.without_all_white().top_k(a.tasks.unwrap_or(cfg.synth_tasks));
    if tasks.is_empty() {
        return Err(CliError::Validation(format!("{}: no boards with reds", a.data.display())));
    }
    let mut ws = cfg.wake_sleep.clone();
    ws.seed = cfg.seed;
    if a.no_library {
        ws.library_learning = false;
    }
    if let Some(i) = a.iterations {
        ws.iterations = i;
    }
    if let Some(m) = a.max_nodes {
        ws.budget.max_nodes = m;
    }
    if let Some(l) = a.lambda {
        ws.lambda = l;
    }
    let mut rec = recorder("synthesize", cfg, json!({ "data": a.data, "tasks": tasks.len(), "wake_sleep": ws }));
    let result = wake_sleep(&tasks, &ws, |s| eprintln!("synthesize: iteration {} solved {}", s.iteration, s.solved))
        .map_err(runtime)?;
    let dir = &a.out_dir;
    let sol_path = dir.join("solutions.jsonl");
    let lib_path = dir.join("library.json");
    let net_path = dir.join("recognition.ckpt");
    let hist_path = dir.join("history.json");
    write_file(&sol_path, solutions_jsonl(&result.solutions)?.as_bytes())?;
    write_file(&lib_path, result.library.to_json().as_bytes())?;
    result.recognition.save(&net_path).map_err(runtime)?;
    write_json(&hist_path, &result.history)?;
    for p in [&sol_path, &lib_path, &net_path, &hist_path] {
        rec.output(p);
    }
    rec.output(gridmind::nn::checkpoint::manifest_path(&net_path));
    rec.finish(&manifest_for(dir, true))?;
    let solved = result.solutions.iter().filter(|s| s.solved()).count();
    let summary = json!({ "out_dir": dir, "tasks": tasks.len(), "solved": solved, "library_size": result.library.len() });
    say(&summary);
    Ok(summary)
}

pub fn compress(cfg: &ExperimentConfig, a: &crate::CompressArgs) -> Result<Value, CliError> {
    let library = match &a.library {
        Some(p) => load_library(p)?,
        None => Library::new(),
    };
    let mut solutions = load_solutions(&a.solutions, &library)?;
    let lambda = a.lambda.unwrap_or(cfg.wake_sleep.lambda);
    let mut rec = recorder(
        "compress",
        cfg,
        json!({ "solutions": a.solutions, "library": a.library, "lambda": lambda, "max_new": a.max_new }),
    );
    let idx: Vec<usize> = (0..solutions.len()).filter(|&i| solutions[i].solved()).collect();
    let programs: Vec<Program> = idx.iter().map(|&i| solutions[i].program.clone()).collect();
    let result = compress_programs(&programs, &library, lambda, a.max_new);
    for (&i, p) in idx.iter().zip(&result.rewritten) {
        solutions[i].program = p.clone();
    }
    let sol_path = a.out_dir.join("solutions.jsonl");
    let lib_path = a.out_dir.join("library.json");
    let report_path = a.out_dir.join("report.json");
    write_file(&sol_path, solutions_jsonl(&solutions)?.as_bytes())?;
    write_file(&lib_path, result.library.to_json().as_bytes())?;
    write_json(&report_path, &result.report)?;
    for p in [&sol_path, &lib_path, &report_path] {
        rec.output(p);
    }
    rec.finish(&manifest_for(&a.out_dir, true))?;
    let summary = json!({
        "out_dir": a.out_dir,
        "adopted": result.adopted(),
        "mdl_before": result.report.mdl_before,
        "mdl_after": result.report.mdl_after,
    });
    say(&summary);
    Ok(summary)
}

pub fn describe_synth(cfg: &ExperimentConfig, a: &crate::DescribeArgs) -> Result<Value, CliError> {
    let ds = load_dataset(&a.data)?.without_all_white();
    let per_board = a.per_board.unwrap_or(cfg.describe_per_board);
    if per_board == 0 {
        return Err(CliError::Validation("per-board must be positive".into()));
    }
    let mut rec = recorder("describe-synth", cfg, json!({ "data": a.data, "per_board": per_board }));
    let corpus = DescriptionCorpus::synthetic(&ds, per_board, cfg.seed).map_err(runtime)?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).map_err(runtime)?;
    write_file(&a.out, &buf)?;
    rec.output(&a.out);
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({ "out": a.out, "boards": corpus.entries.len(), "descriptions": corpus.len() });
    say(&summary);
    Ok(summary)
}

pub fn embed(cfg: &ExperimentConfig, a: &crate::EmbedArgs) -> Result<Value, CliError> {
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| CliError::Validation(format!("provider {} needs --{flag}", a.provider)))
    };
    let mut rec = recorder(
        "embed",
        cfg,
        json!({
            "provider": a.provider, "data": a.data, "descriptions": a.descriptions,
            "recognition": a.recognition, "input": a.input, "dim": a.dim, "shuffle": a.shuffle,
        }),
    );
    let provider = match a.provider.as_str() {
        "language" => {
            let corpus = load_descriptions(&need(&a.descriptions, "descriptions")?)?;
            EmbeddingProvider::from_descriptions(&corpus, a.dim.unwrap_or(cfg.text_dim), cfg.seed)
                .map_err(|e| CliError::Validation(e.to_string()))?
        }
        "program" => {
            let path = need(&a.recognition, "recognition")?;
            require_file(&path)?;
            let net = RecognitionNet::load(&path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let ds = load_dataset(&need(&a.data, "data")?)?;
            EmbeddingProvider::from_recognition(&net, &ds).map_err(|e| CliError::Validation(e.to_string()))?
        }
        "autoencoder" => EmbeddingProvider::autoencoder(&load_dataset(&need(&a.data, "data")?)?),
        "ingest" => load_embeddings(&need(&a.input, "input")?)?,
        other => {
            return Err(CliError::Validation(format!(
                "unknown provider {other:?} (expected language, program, autoencoder or ingest)"
            )))
        }
    };
    let provider = if a.shuffle { provider.shuffled(cfg.seed) } else { provider };
    let mut buf = Vec::new();
    provider.write_jsonl(&mut buf).map_err(runtime)?;
    write_file(&a.out, &buf)?;
    rec.output(&a.out);
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({ "out": a.out, "boards": provider.len(), "dim": provider.dim(), "kind": provider.kind });
    say(&summary);
    Ok(summary)
}

pub fn ppo_config(cfg: &ExperimentConfig, preset: Option<&str>, grounded: bool) -> Result<PpoConfig, CliError> {
    match preset {
        Some("grounding") => Ok(cfg.ppo_grounding.clone()),
        Some("no-grounding") => Ok(cfg.ppo_baseline.clone()),
        Some(other) => Err(CliError::Validation(format!(
            "unknown preset {other:?} (expected grounding or no-grounding)"
        ))),
        None if grounded => Ok(cfg.ppo_grounding.clone()),
        None => Ok(cfg.ppo_baseline.clone()),
    }
}

pub fn train_agent(cfg: &ExperimentConfig, a: &crate::TrainAgentArgs) -> Result<Value, CliError> {
    let ds = load_dataset(&a.train)?;
    let provider = a.embeddings.as_deref().map(load_embeddings).transpose()?;
    let mut ppo = ppo_config(cfg, a.preset.as_deref(), provider.is_some())?;
    if let Some(e) = a.episodes {
        ppo.episodes = e;
    }
    if provider.is_none() {
        ppo.c_task = 0.0;
    }
    let mut rec = recorder(
        "train-agent",
        cfg,
        json!({ "train": a.train, "embeddings": a.embeddings, "ppo": ppo }),
    );
    let (net, report) = train(&ds, &ppo, provider.as_ref(), cfg.seed, |row| {
        eprintln!("train-agent: episode {} return {:.3}", row.episode, row.mean_return)
    })
    .map_err(agent_error)?;
    net.save(&a.out).map_err(runtime)?;
    let curve_path = sibling(&a.out, ".curve.csv");
    let report_path = sibling(&a.out, ".report.json");
    write_file(&curve_path, curve_csv(&report.curve).as_bytes())?;
    write_json(&report_path, &report)?;
    rec.output(&a.out);
    rec.output(gridmind::nn::checkpoint::manifest_path(&a.out));
    rec.output(&curve_path);
    rec.output(&report_path);
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({
        "out": a.out, "episodes": report.episodes, "updates": report.updates,
        "final_train_z": report.final_train_z,
        "grounding_mse": [report.initial_grounding_mse, report.final_grounding_mse],
    });
    say(&summary);
    Ok(summary)
}

pub fn eval_agent(cfg: &ExperimentConfig, a: &crate::EvalAgentArgs) -> Result<Value, CliError> {
    require_file(&a.checkpoint)?;
    let net = PolicyNet::load(&a.checkpoint)
        .map_err(|e| CliError::Validation(format!("{}: {e}", a.checkpoint.display())))?;
    let episodes = a.episodes.unwrap_or(cfg.eval_episodes);
    let boards = a.boards.unwrap_or(cfg.eval_boards);
    let mut rec = recorder(
        "eval-agent",
        cfg,
        json!({ "checkpoint": a.checkpoint, "tests": a.tests, "episodes": episodes, "boards": boards }),
    );
    let mut dists = Vec::new();
    let mut all_z: Vec<Vec<f64>> = Vec::new();
    let mut traces = Vec::new();
    for (k, path) in a.tests.iter().enumerate() {
        let ds = load_dataset(path)?.without_all_white().top_k(boards);
        let ev = evaluate(&net, &ds, episodes, cfg.ppo_grounding.env, gridmind::rng::derive_seed(cfg.seed, k as u64))
            .map_err(|e| agent_error(e).context(&path.display().to_string()))?;
        all_z.push(ev.traces.iter().map(|t| t.z).collect());
        traces.extend(ev.traces.iter().cloned());
        dists.push(json!({
            "test": path,
            "boards": ev.boards.len(),
            "episodes": ev.traces.len(),
            "mean_z": ev.mean_z,
            "ci95": [ev.ci95.0, ev.ci95.1],
            "per_board": ev.boards,
        }));
    }
    let mut comparisons = Vec::new();
    for j in 1..all_z.len() {
        let t = bootstrap_test(&all_z[j], &all_z[0], cfg.resamples, gridmind::rng::derive_seed(cfg.seed, 100 + j as u64))
            .map_err(runtime)?;
        comparisons.push(json!({
            "a": a.tests[j], "b": a.tests[0],
            "mean_z_difference": mean(&all_z[j]) - mean(&all_z[0]),
            "test": t,
        }));
    }
    let report = json!({ "checkpoint": a.checkpoint, "seed": cfg.seed, "distributions": dists, "comparisons": comparisons });
    write_json(&a.out, &report)?;
    rec.output(&a.out);
    if let Some(t) = &a.traces {
        write_traces(t, &traces).map_err(runtime)?;
        rec.output(t);
    }
    rec.finish(&manifest_for(&a.out, false))?;
    let summary = json!({
        "out": a.out,
        "mean_z": report["distributions"].as_array().unwrap().iter().map(|d| d["mean_z"].clone()).collect::<Vec<_>>(),
    });
    say(&summary);
    Ok(report)
}

/// Per-board program size of solved tasks.
fn program_lengths(dir: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let library = load_library(&dir.join("library.json"))?;
    let sols = load_solutions(&dir.join("solutions.jsonl"), &library)?;
    Ok(sols
        .into_iter()
        .filter(Solution::solved)
        .map(|s| (s.task_id, s.program.size() as f64))
        .collect())
}

fn restrict(m: &BTreeMap<String, f64>, keep: &[String]) -> BTreeMap<String, f64> {
    keep.iter().map(|k| (k.clone(), m[k])).collect()
}

pub fn analyze(cfg: &ExperimentConfig, a: &crate::AnalyzeArgs) -> Result<Value, CliError> {
    let human = load_descriptions(&a.descriptions)?.mean_lengths();
    let synth = load_descriptions(&a.synthetic)?.mean_lengths();
    let lib = program_lengths(&a.lib_dir)?;
    let nolib = program_lengths(&a.nolib_dir)?;
    let mut rec = recorder(
        "analyze",
        cfg,
        json!({
            "descriptions": a.descriptions, "synthetic": a.synthetic,
            "lib_dir": a.lib_dir, "nolib_dir": a.nolib_dir, "embeddings": a.embeddings,
        }),
    );
    let shared: Vec<String> = human
        .keys()
        .filter(|k| synth.contains_key(*k) && lib.contains_key(*k) && nolib.contains_key(*k))
        .cloned()
        .collect();
    let dl = if shared.len() >= 3 {
        let r = dl_report(
            &restrict(&human, &shared),
            &restrict(&synth, &shared),
            &restrict(&lib, &shared),
            &restrict(&nolib, &shared),
            cfg.resamples,
            cfg.seed,
        );
        match r {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("analyze: description-length report skipped: {e}");
                None
            }
        }
    } else {
        eprintln!("analyze: only {} boards shared by all sources; need 3", shared.len());
        None
    };

    let mut rsa = Vec::new();
    if a.embeddings.len() >= 2 {
        let providers: Vec<EmbeddingProvider> = a.embeddings.iter().map(|p| load_embeddings(p)).collect::<Result<_, _>>()?;
        let ids: Vec<String> = providers[0]
            .ids()
            .filter(|id| providers.iter().all(|p| p.vectors(id).is_some()))
            .map(String::from)
            .collect();
        let mats: Vec<Vec<Vec<f64>>> = providers
            .iter()
            .map(|p| rsa_matrix(&ids.iter().map(|id| p.mean(id).unwrap()).collect::<Vec<_>>()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Validation(format!("rsa: {e}")))?;
        let upper = |m: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..m.len()).flat_map(|i| ((i + 1)..m.len()).map(move |j| m[i][j])).collect()
        };
        for i in 0..mats.len() {
            for j in (i + 1)..mats.len() {
                rsa.push(json!({
                    "a": a.embeddings[i], "b": a.embeddings[j], "boards": ids.len(),
                    "second_order_r": pearson(&upper(&mats[i]), &upper(&mats[j])).ok(),
                }));
            }
        }
        let mat_path = a.out_dir.join("rsa_matrices.json");
        write_json(&mat_path, &json!({ "board_ids": ids, "files": a.embeddings, "matrices": mats }))?;
        rec.output(mat_path);
    }

    let report = json!({ "boards_shared": shared.len(), "dl": dl, "rsa": rsa });
    let json_path = a.out_dir.join("report.json");
    write_json(&json_path, &report)?;
    rec.output(&json_path);
    if let Some(d) = &dl {
        let csv_path = a.out_dir.join("dl.csv");
        write_file(&csv_path, d.to_csv().as_bytes())?;
        rec.output(csv_path);
    }
    rec.finish(&manifest_for(&a.out_dir, true))?;
    let summary = json!({
        "out_dir": a.out_dir,
        "r_human_lib": dl.as_ref().map(|d| d.r_human_lib),
        "r_human_nolib": dl.as_ref().map(|d| d.r_human_nolib),
    });
    say(&summary);
    Ok(report)
}

pub fn serve(cfg: &ExperimentConfig, a: &crate::ServeArgs) -> Result<(), CliError> {
    let mut sc = gridmind_service::ServiceConfig::new(&a.data_dir);
    sc.seed = cfg.seed;
    sc.static_dir = a.static_dir.clone();
    for spec in &a.datasets {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--dataset {spec:?} is not name=path")))?;
        sc.datasets.insert(name.to_string(), load_dataset(Path::new(path))?);
    }
    a.addr
        .parse::<std::net::SocketAddr>()
        .map_err(|_| CliError::Validation(format!("bad address {:?}", a.addr)))?;
    let rec = recorder("serve", cfg, json!({ "data_dir": a.data_dir, "datasets": a.datasets, "addr": a.addr }));
    rec.finish(&manifest_for(&a.data_dir, true))?;
    let state = gridmind_service::AppState::open(sc).map_err(runtime)?;
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    eprintln!("serving on http://{}", a.addr);
    rt.block_on(gridmind_service::serve(state, &a.addr)).map_err(runtime)
}
