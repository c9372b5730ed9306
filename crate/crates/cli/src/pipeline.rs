use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use gridmind::board::BoardDataset;
use gridmind::rng::derive_seed;

use crate::commands::{self, sibling};
use crate::manifest::{manifest_for, RunRecorder};
use crate::{load_dataset, split_by_id, write_file, write_json, CliError, ExperimentConfig};

/// Stage indices feed seed derivation, so they must stay fixed.
const STAGES: [&str; 11] = [
    "gen-priors",
    "split",
    "train-conditional",
    "gibbs",
    "synthesize-lib",
    "synthesize-nolib",
    "describe-synth",
    "embed",
    "train-agent",
    "eval-agent",
    "analyze",
];

fn stage(cfg: &ExperimentConfig, name: &str) -> ExperimentConfig {
    let k = STAGES.iter().position(|s| *s == name).expect("known stage") as u64;
    ExperimentConfig {
        seed: derive_seed(cfg.seed, k),
        ..cfg.clone()
    }
}

fn stage_seed(cfg: &ExperimentConfig, name: &str, sub: u64) -> ExperimentConfig {
    let mut c = stage(cfg, name);
    c.seed = derive_seed(c.seed, sub);
    c
}

fn at(name: &str) -> impl Fn(CliError) -> CliError + '_ {
    move |e| e.context(name)
}

fn save(ds: &BoardDataset, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).map_err(crate::runtime)?;
    write_file(path, &buf)
}

/// One trained agent: name, grounding source (if any).
pub fn agent_plan(providers: &[String]) -> Vec<(String, Option<String>)> {
    let mut v = vec![("baseline".to_string(), None), ("autoencoder".to_string(), Some("autoencoder".to_string()))];
    v.extend(providers.iter().map(|p| (p.clone(), Some(p.clone()))));
    v
}

/// Mean z on the control set minus mean z on held-out prior boards.
pub fn gap(eval_report: &Value) -> f64 {
    let d = &eval_report["distributions"];
    d[1]["mean_z"].as_f64().unwrap_or(f64::NAN) - d[0]["mean_z"].as_f64().unwrap_or(f64::NAN)
}

pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Value, CliError> {
    let out: PathBuf = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.out_dir.clone())
        .ok_or_else(|| CliError::Validation("pipeline needs --out-dir or paths.out_dir".into()))?;
    if cfg.providers.iter().any(|p| p == "human") && cfg.paths.human_embeddings.is_none() {
        return Err(CliError::Validation("provider human needs paths.human_embeddings".into()));
    }
    let mut rec = RunRecorder::new("pipeline", json!({ "experiment": cfg }), json!({ "seed": cfg.seed }));

    // priors
    let priors = out.join("priors.jsonl");
    match &cfg.paths.priors {
        Some(p) => save(&load_dataset(p)?, &priors).map_err(at("gen-priors"))?,
        None => {
            commands::gen_priors(
                &stage(cfg, "gen-priors"),
                &crate::GenPriorsArgs { count: None, side: None, family: None, out: priors.clone() },
            )
            .map_err(at("gen-priors"))?;
        }
    }
    let prior_ds = load_dataset(&priors)?;
    rec.output(&priors);

    // split
    let (train, test) = split_by_id(&prior_ds, cfg.train_fraction, stage(cfg, "split").seed);
    let train_path = out.join("split").join("train.jsonl");
    let test_path = out.join("split").join("test.jsonl");
    save(&train, &train_path)?;
    save(&test, &test_path)?;
    rec.output(&train_path);
    rec.output(&test_path);

    // control boards
    let cond = out.join("conditional.ckpt");
    commands::train_conditional(
        &stage(cfg, "train-conditional"),
        &crate::TrainConditionalArgs { data: priors.clone(), epochs: None, out: cond.clone() },
    )
    .map_err(at("train-conditional"))?;
    let control = out.join("control.jsonl");
    commands::gibbs(
        &stage(cfg, "gibbs"),
        &crate::GibbsArgs { model: cond.clone(), chains: None, sweeps: None, out: control.clone() },
    )
    .map_err(at("gibbs"))?;
    rec.output(&cond);
    rec.output(&control);

    // programs
    let lib_dir = out.join("synth-lib");
    let nolib_dir = out.join("synth-nolib");
    for (name, dir, no_library) in [("synthesize-lib", &lib_dir, false), ("synthesize-nolib", &nolib_dir, true)] {
        commands::synthesize(
            &stage(cfg, name),
            &crate::SynthesizeArgs {
                data: priors.clone(),
                tasks: None,
                iterations: None,
                no_library,
                max_nodes: None,
                lambda: None,
                out_dir: dir.clone(),
            },
        )
        .map_err(at(name))?;
    }

    // descriptions and embeddings
    let descriptions = out.join("descriptions.jsonl");
    commands::describe_synth(
        &stage(cfg, "describe-synth"),
        &crate::DescribeArgs { data: priors.clone(), per_board: None, out: descriptions.clone() },
    )
    .map_err(at("describe-synth"))?;
    let emb_dir = out.join("embeddings");
    let mut emb_paths = Vec::new();
    let mut sources: Vec<String> = vec!["autoencoder".into()];
    sources.extend(cfg.providers.iter().cloned());
    for (k, src) in sources.iter().enumerate() {
        let path = emb_dir.join(format!("{src}.jsonl"));
        let mut args = crate::EmbedArgs {
            provider: String::new(),
            data: Some(priors.clone()),
            descriptions: None,
            recognition: None,
            input: None,
            dim: None,
            shuffle: false,
            out: path.clone(),
        };
        match src.as_str() {
            "autoencoder" => args.provider = "autoencoder".into(),
            "language" => {
                args.provider = "language".into();
                args.descriptions = Some(descriptions.clone());
            }
            "program" => {
                args.provider = "program".into();
                args.recognition = Some(lib_dir.join("recognition.ckpt"));
            }
            "human" => {
                args.provider = "ingest".into();
                args.input = cfg.paths.human_embeddings.clone();
            }
            other => return Err(CliError::Validation(format!("unknown provider {other:?}"))),
        }
        commands::embed(&stage_seed(cfg, "embed", k as u64), &args).map_err(at("embed"))?;
        emb_paths.push((src.clone(), path));
    }

    // held-out evaluation sets
    let train_boards: HashSet<u64> = train.entries.iter().map(|e| e.board.mask()).collect();
    let control_ds = load_dataset(&control)?;
    let control_test = BoardDataset {
        entries: control_ds
            .without_all_white()
            .entries
            .into_iter()
            .filter(|e| !train_boards.contains(&e.board.mask()))
            .collect(),
    }
    .top_k(cfg.eval_boards);
    let eval_dir = out.join("eval");
    let test_priors = eval_dir.join("test-priors.jsonl");
    let test_control = eval_dir.join("test-control.jsonl");
    save(&test.without_all_white().top_k(cfg.eval_boards), &test_priors)?;
    save(&control_test, &test_control)?;

    // agents
    let mut agents = Vec::new();
    for (k, (name, source)) in agent_plan(&cfg.providers).into_iter().enumerate() {
        let ckpt = out.join("agents").join(format!("{name}.ckpt"));
        let embeddings = source.as_ref().map(|s| {
            emb_paths
                .iter()
                .find(|(n, _)| n == s)
                .map(|(_, p)| p.clone())
                .expect("embedding built above")
        });
        let preset = if source.is_some() { "grounding" } else { "no-grounding" };
        let trained = commands::train_agent(
            &stage_seed(cfg, "train-agent", k as u64),
            &crate::TrainAgentArgs {
                train: train_path.clone(),
                embeddings,
                preset: Some(preset.into()),
                episodes: None,
                out: ckpt.clone(),
            },
        )
        .map_err(at(&format!("train-agent {name}")))?;
        let eval_path = eval_dir.join(format!("{name}.json"));
        // one evaluation seed for all agents so they face the same episodes
        let report = commands::eval_agent(
            &stage(cfg, "eval-agent"),
            &crate::EvalAgentArgs {
                checkpoint: ckpt.clone(),
                tests: vec![test_priors.clone(), test_control.clone()],
                episodes: None,
                boards: None,
                traces: None,
                out: eval_path.clone(),
            },
        )
        .map_err(at(&format!("eval-agent {name}")))?;
        rec.output(&ckpt);
        rec.output(&eval_path);
        let d = &report["distributions"];
        agents.push(json!({
            "name": name,
            "grounding": source,
            "checkpoint": ckpt,
            "report": sibling(&ckpt, ".report.json"),
            "train": trained,
            "prior_mean_z": d[0]["mean_z"],
            "prior_ci95": d[0]["ci95"],
            "control_mean_z": d[1]["mean_z"],
            "control_ci95": d[1]["ci95"],
            "gap": gap(&report),
            "gap_test": report["comparisons"][0]["test"],
        }));
    }

    // description-length and representation analyses
    let analysis_dir = out.join("analysis");
    let human = cfg.paths.human_descriptions.clone().unwrap_or_else(|| descriptions.clone());
    let analysis = commands::analyze(
        &stage(cfg, "analyze"),
        &crate::AnalyzeArgs {
            descriptions: human,
            synthetic: descriptions.clone(),
            lib_dir: lib_dir.clone(),
            nolib_dir: nolib_dir.clone(),
            embeddings: emb_paths.iter().filter(|(n, _)| n != "autoencoder").map(|(_, p)| p.clone()).collect(),
            out_dir: analysis_dir.clone(),
        },
    )
    .map_err(at("analyze"))?;

    let report = json!({
        "seed": cfg.seed,
        "split": { "train_boards": train.len(), "test_boards": test.len() },
        "test_sets": { "priors": test_priors, "control": test_control },
        "agents": agents,
        "analysis": analysis,
    });
    let report_path = out.join("report.json");
    write_json(&report_path, &report)?;
    rec.output(&report_path);
    rec.finish(&manifest_for(&out, true))?;
    println!("{}", json!({ "out_dir": out, "agents": report["agents"].as_array().map(Vec::len) }));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_providers_train_four_agents() {
        let plan = agent_plan(&["language".into(), "program".into()]);
        let names: Vec<&str> = plan.iter().map(|p| p.0.as_str()).collect();
        assert_eq!(names, ["baseline", "autoencoder", "language", "program"]);
        assert!(plan[0].1.is_none());
    }

    #[test]
    fn identical_test_sets_have_zero_gap() {
        let d = json!({ "mean_z": -0.4 });
        assert_eq!(gap(&json!({ "distributions": [d.clone(), d] })), 0.0);
    }
}
