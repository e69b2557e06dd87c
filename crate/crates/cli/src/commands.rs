use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

use cnsm_core::eval::{compare_models, metrics_table, scenario_split, GateConfig, SplitMode, SplitSpec};
use cnsm_core::features::DeploymentProfile;
use cnsm_core::ingest::{generate_trace, parse_records, table_to_jsonl, GeneratorConfig, TARGET};
use cnsm_core::kb::{DatasetKind, DatasetMeta, FeedbackEntry, KnowledgeBase};
use cnsm_core::models::{ModelKind, TrainConfig};
use cnsm_core::pcs::fixtures::{self, RuntimeModels};
use cnsm_core::pcs::{run_loop, sla_audit, Controller, EnvConfig, LoopConfig, LoopModels, ScenarioScript};
use cnsm_core::pipeline::{build_features, combine, preprocess_table, train_one, FeatureConfig, PreprocessConfig, TrainedSet};
use cnsm_core::{FeatureMatrix, FeatureSet, ModelArtifact, TrainedModel};

use crate::manifest::RunManifest;
use crate::{Cli, Command, ControllerArg, ModelArg, SplitArg};

const FEATURE_SETS: &str = "feature_sets";
const REPORTS: &str = "reports";
const RUNTIME: &str = "runtime";

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>, m: &mut RunManifest) -> Result<T> {
    match path {
        Some(p) => {
            m.input(p.display().to_string());
            read_json(p)
        }
        None => Ok(T::default()),
    }
}

fn dataset_rel(id: &str) -> String {
    format!("datasets/{id}/data.csv")
}

fn put_dataset(kb: &mut KnowledgeBase, table: &cnsm_core::DataTable, meta: DatasetMeta, m: &mut RunManifest) -> Result<()> {
    let id = kb.put_dataset(table, meta)?;
    let digest = kb.dataset_meta(&id).expect("just stored").checksum.clone();
    m.output(dataset_rel(&id), digest);
    Ok(())
}

fn put_model(kb: &mut KnowledgeBase, art: &ModelArtifact, m: &mut RunManifest) -> Result<()> {
    let rec = kb.put_model(art, None)?;
    m.output(rec.artifact_path.display().to_string(), rec.checksum);
    Ok(())
}

fn put_json<T: serde::Serialize>(kb: &KnowledgeBase, category: &str, id: &str, value: &T, m: &mut RunManifest) -> Result<()> {
    let digest = kb.put_json(category, id, value)?;
    m.output(format!("{category}/{id}.json"), digest);
    Ok(())
}

/// Rebuilds a stored feature matrix in the column order of `fs`.
fn load_matrix(kb: &KnowledgeBase, id: &str, fs: &FeatureSet) -> Result<FeatureMatrix> {
    let table = kb.get_dataset(id)?;
    let names = fs.expanded_names();
    let cols: Vec<&[f64]> = names.iter().map(|n| table.num(n)).collect::<cnsm_core::Result<_>>()?;
    let rows = (0..table.row_count()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Ok(FeatureMatrix::new(names, rows, table.num(TARGET)?.to_vec())?)
}

struct FeatureData {
    set: FeatureSet,
    train: FeatureMatrix,
    validation: FeatureMatrix,
}

fn load_features(kb: &KnowledgeBase, id: &str, m: &mut RunManifest) -> Result<FeatureData> {
    let set: FeatureSet = kb.get_json(FEATURE_SETS, id).with_context(|| format!("feature set `{id}`; run `features` first"))?;
    let train = load_matrix(kb, &format!("{id}-train"), &set)?;
    let validation = load_matrix(kb, &format!("{id}-validation"), &set)?;
    m.input(format!("{FEATURE_SETS}/{id}"));
    Ok(FeatureData { set, train, validation })
}

fn load_env(path: Option<&Path>, m: &mut RunManifest) -> Result<EnvConfig> {
    let env = match path {
        Some(p) => read_json(p)?,
        None => fixtures::env(),
    };
    m.config("env", &env)?;
    Ok(env)
}

fn load_script(name_or_path: &str, m: &mut RunManifest) -> Result<ScenarioScript> {
    let script = if Path::new(name_or_path).is_file() {
        read_json(Path::new(name_or_path))?
    } else {
        fixtures::script(name_or_path)
            .with_context(|| format!("`{name_or_path}` is neither a file nor a bundled scenario"))?
    };
    m.input(format!("scenario:{name_or_path}"));
    m.config("scenario", &script)?;
    Ok(script)
}

fn load_runtime(kb: &KnowledgeBase) -> Result<RuntimeModels> {
    kb.get_json(RUNTIME, "models").context("no runtime models in the KB; run `anomaly --fit` first")
}

/// The feedback log is one clock across runs, so each run's ticks are shifted
/// past the last logged tick.
fn append_feedback(kb: &mut KnowledgeBase, entries: &[FeedbackEntry], m: &mut RunManifest) -> Result<u64> {
    let offset = kb.feedback()?.last().map_or(0, |e| e.tick);
    let shifted: Vec<FeedbackEntry> =
        entries.iter().map(|e| FeedbackEntry { tick: e.tick + offset, ..e.clone() }).collect();
    kb.append_feedback(&shifted)?;
    m.feedback_tick_offset = Some(offset);
    Ok(offset)
}

struct Outcome {
    code: u8,
    manifest: RunManifest,
    kb: Option<PathBuf>,
    default_path: Option<PathBuf>,
}

impl Outcome {
    fn kb(code: u8, manifest: RunManifest, kb: PathBuf) -> Self {
        Self { code, manifest, kb: Some(kb), default_path: None }
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    let o = dispatch(cli.command)?;
    let explicit = cli.manifest.or(o.default_path);
    let path = o.manifest.save(o.kb.as_deref(), explicit.as_deref())?;
    eprintln!("manifest: {}", path.display());
    Ok(o.code)
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Generate { seed, samples, config, out, truth } => {
            let mut m = RunManifest::new("generate");
            let mut cfg = match &config {
                Some(p) => {
                    m.input(p.display().to_string());
                    read_json(p)?
                }
                None => GeneratorConfig::standard(seed, samples),
            };
            cfg.seed = seed;
            m.seed("generator", seed);
            m.config("generator", &cfg)?;
            let trace = generate_trace(&cfg)?;
            m.write_file(out.display().to_string(), &out, table_to_jsonl(&trace.observed)?.as_bytes())?;
            if let Some(t) = &truth {
                m.write_file(t.display().to_string(), t, table_to_jsonl(&trace.ground_truth)?.as_bytes())?;
            }
            println!(
                "generated {} rows, {} corrupted target cells -> {}",
                trace.observed.row_count(),
                trace.corrupted_rows.len(),
                out.display()
            );
            // Without a KB the manifest sits next to the trace.
            let mut side = out.into_os_string();
            side.push(".manifest.json");
            Ok(Outcome { code: 0, manifest: m, kb: None, default_path: Some(side.into()) })
        }
        Command::Ingest { kb, trace, id, scenario } => {
            let mut m = RunManifest::new("ingest");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let text = fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let table = parse_records(&text)?;
            m.input(trace.display().to_string());
            put_dataset(&mut store, &table, DatasetMeta::new(&id, DatasetKind::Raw, scenario), &mut m)?;
            println!("ingested {} rows as `{id}`", table.row_count());
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::Preprocess { kb, input, out, config, report, no_target_repair } => {
            let mut m = RunManifest::new("preprocess");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let mut cfg: PreprocessConfig = config_or_default(config.as_deref(), &mut m)?;
            if no_target_repair {
                cfg.repair_target = false;
            }
            m.config("preprocess", &cfg)?;
            m.input(&input);
            let raw = store.get_dataset(&input)?;
            let scenario = store.dataset_meta(&input).map(|d| d.scenario.clone()).unwrap_or_default();
            let done = preprocess_table(&raw, &cfg)?;
            put_dataset(&mut store, &done.table, DatasetMeta::new(&out, DatasetKind::Processed, scenario).with_parent(&input), &mut m)?;
            put_json(&store, REPORTS, &format!("{out}-repair"), &done.report, &mut m)?;
            if let Some(p) = &report {
                m.write_file(p.display().to_string(), p, serde_json::to_string_pretty(&done.report)?.as_bytes())?;
            }
            println!(
                "`{out}`: {} rows, pruned {:?}, repaired {} cells",
                done.table.row_count(),
                done.pruned,
                done.report.repaired_cells.len()
            );
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::Features { kb, input, id, split, ratio, seed, config } => {
            let mut m = RunManifest::new("features");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let mode = match split {
                SplitArg::Scenario => SplitMode::ScenarioBased,
                SplitArg::Kfold => SplitMode::KFold,
            };
            if matches!(split, SplitArg::Kfold) && seed.is_none() {
                bail!("--seed is required with --split kfold");
            }
            let spec = SplitSpec { mode, train_fraction: ratio, seed: seed.unwrap_or(0), ..SplitSpec::default() };
            let cfg: FeatureConfig = config_or_default(config.as_deref(), &mut m)?;
            if let Some(s) = seed {
                m.seed("split", s);
            }
            m.config("split", &spec)?;
            m.config("features", &cfg)?;
            m.input(&input);
            let table = store.get_dataset(&input)?;
            let parts = scenario_split(&table, &spec)?;
            let (mut set, xt, xv) = build_features(&parts.train, &parts.validation, &cfg)?;
            set.id = id.clone();
            put_json(&store, FEATURE_SETS, &id, &set, &mut m)?;
            for (suffix, x) in [("train", &xt), ("validation", &xv)] {
                let meta = DatasetMeta::new(format!("{id}-{suffix}"), DatasetKind::FeatureMatrix, "mixed").with_parent(&input);
                put_dataset(&mut store, &x.to_table(TARGET)?, meta, &mut m)?;
            }
            println!(
                "`{id}`: bases {:?}; {} train / {} validation rows, {} columns",
                set.base_features,
                xt.rows,
                xv.rows,
                xt.cols()
            );
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::Train { kb, features, model, seed, config, no_select_penalty } => {
            let mut m = RunManifest::new("train");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let mut cfg: TrainConfig = config_or_default(config.as_deref(), &mut m)?;
            cfg.seed = seed;
            m.seed("train", seed);
            m.config("train", &cfg)?;
            let data = load_features(&store, &features, &mut m)?;
            let kinds: Vec<ModelKind> = match model {
                ModelArg::Lasso => vec![ModelKind::Lasso],
                ModelArg::Enet => vec![ModelKind::Elasticnet],
                ModelArg::Forest => vec![ModelKind::Forest],
                ModelArg::Gbt => vec![ModelKind::Gbt],
                ModelArg::All => ModelKind::BASE.to_vec(),
            };
            let validation = (!no_select_penalty).then_some(&data.validation);
            for kind in kinds {
                let art = train_one(kind, &data.train, validation, &data.set, &cfg)?;
                put_model(&mut store, &art, &mut m)?;
                println!("trained `{}`", art.id);
            }
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::Combine { kb, features, step } => {
            let mut m = RunManifest::new("combine");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            m.config("step", &step)?;
            let data = load_features(&store, &features, &mut m)?;
            let mut get = |kind: ModelKind| -> Result<ModelArtifact> {
                m.input(format!("model:{}", kind.as_str()));
                store.get_model(kind.as_str()).with_context(|| format!("model `{}`; run `train` first", kind.as_str()))
            };
            let set = TrainedSet {
                lasso: get(ModelKind::Lasso)?,
                elasticnet: get(ModelKind::Elasticnet)?,
                forest: get(ModelKind::Forest)?,
                gbt: get(ModelKind::Gbt)?,
            };
            let (art, search) = combine(&set, &data.validation, step)?;
            put_model(&mut store, &art, &mut m)?;
            put_json(&store, REPORTS, &format!("{features}-weights"), &search, &mut m)?;
            let w = &search.weights;
            println!(
                "weights lasso {}%, elasticnet {}%, forest {}%, gbt {}%; validation RMSE {:.4} over {} candidates",
                w[0], w[1], w[2], w[3], search.rmse, search.evaluated
            );
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::Evaluate { kb, features, models, profile, gate, out } => {
            let mut m = RunManifest::new("evaluate");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let gate: GateConfig = config_or_default(gate.as_deref(), &mut m)?;
            m.config("gate", &gate)?;
            let profile =
                DeploymentProfile::by_name(&profile).with_context(|| format!("unknown deployment profile `{profile}`"))?;
            let data = load_features(&store, &features, &mut m)?;
            let arts: Vec<ModelArtifact> = models
                .iter()
                .map(|id| {
                    m.input(format!("model:{id}"));
                    store.get_model(id).with_context(|| format!("model `{id}`"))
                })
                .collect::<Result<_>>()?;
            let listed: Vec<(String, &TrainedModel)> = arts.iter().map(|a| (a.id.clone(), &a.model)).collect();
            let report = compare_models(&listed, &data.validation, &data.set, &profile, &gate)?;
            for e in &report.evaluations {
                store.set_model_metrics(&e.model_id, e.metrics.clone())?;
            }
            put_json(&store, REPORTS, &format!("{features}-comparison"), &report, &mut m)?;
            if let Some(p) = &out {
                m.write_file(p.display().to_string(), p, serde_json::to_string_pretty(&report)?.as_bytes())?;
            }
            print!("{}", report.to_text());
            if let Some(first) = report.evaluations.first() {
                println!("\nlargest errors of `{}`:\n{}", first.model_id, first.top_errors.to_text());
            }
            println!("verdict: {}", serde_json::to_string(&report.verdict)?);
            Ok(Outcome::kb(if report.verdict.is_accept() { 0 } else { 2 }, m, kb.kb))
        }
        Command::Anomaly { kb, fit, score: _, k, threshold, seed, env, scenario, ticks } => {
            let mut m = RunManifest::new("anomaly");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let env = load_env(env.as_deref(), &mut m)?;
            let mut cfg = fixtures::loop_config(Controller::Proactive);
            m.seed("anomaly", seed);
            if fit {
                m.config("k", &k)?;
                let rm = fixtures::train_runtime_models_k(&env, cfg.window_ticks, k, seed)?;
                put_json(&store, RUNTIME, "models", &rm, &mut m)?;
                put_model(&mut store, &rm.normal.artifact, &mut m)?;
                put_model(&mut store, &rm.emergency.artifact, &mut m)?;
                let labels = rm.clusters.labels.clone().unwrap_or_default();
                println!(
                    "fitted {} clusters, labels {:?}",
                    rm.clusters.k,
                    labels.iter().map(|l| l.as_str()).collect::<Vec<_>>()
                );
                return Ok(Outcome::kb(0, m, kb.kb));
            }
            cfg.score.threshold = threshold;
            m.config("loop", &cfg)?;
            let script = load_script(&scenario, &mut m)?;
            let rm = load_runtime(&store)?;
            m.input(format!("{RUNTIME}/models"));
            let out = run_loop(&env, &script, &cfg, &rm.loop_models(), seed, ticks, None)?;
            let detections: Vec<FeedbackEntry> =
                out.feedback.iter().filter(|f| f.ue_id.is_none()).cloned().collect();
            let offset = append_feedback(&mut store, &detections, &mut m)?;
            m.output("feedback.jsonl", cnsm_core::kb::sha256_hex(&fs::read(store.root().join("feedback.jsonl"))?));
            for d in &out.detections {
                println!(
                    "{}",
                    serde_json::json!({
                        "tick": d.tick,
                        "logged_tick": d.tick + offset,
                        "score": d.score,
                        "class": d.class.map(|c| c.as_str()),
                        "swapped_to": d.swapped_to,
                    })
                );
            }
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::RunPcs { kb, env, scenario, model, ticks, seed, controller, loop_config, out } => {
            let mut m = RunManifest::new("run-pcs");
            let mut store = KnowledgeBase::init(&kb.kb)?;
            let env = load_env(env.as_deref(), &mut m)?;
            let script = load_script(&scenario, &mut m)?;
            let controller = match controller {
                ControllerArg::Proactive => Controller::Proactive,
                ControllerArg::Reactive => Controller::Reactive,
            };
            let cfg = match &loop_config {
                Some(p) => LoopConfig { controller, ..read_json(p)? },
                None => fixtures::loop_config(controller),
            };
            m.seed("env", seed);
            m.config("loop", &cfg)?;
            let mut models = match controller {
                Controller::Proactive => {
                    m.input(format!("{RUNTIME}/models"));
                    load_runtime(&store)?.loop_models()
                }
                Controller::Reactive => LoopModels::default(),
            };
            if let Some(id) = model {
                if !models.registry.contains_key(&id) {
                    bail!("model `{id}` is not a runtime model; known: {:?}", models.registry.keys().collect::<Vec<_>>());
                }
                models.active = Some(id);
            }
            let run = run_loop(&env, &script, &cfg, &models, seed, ticks, None)?;
            append_feedback(&mut store, &run.feedback, &mut m)?;
            m.output("feedback.jsonl", cnsm_core::kb::sha256_hex(&fs::read(store.root().join("feedback.jsonl"))?));
            let audit = sla_audit(&run.ledger, &env.slas());
            m.write_file("events.jsonl", &out.join("events.jsonl"), run.events_jsonl()?.as_bytes())?;
            m.write_file("ledger.json", &out.join("ledger.json"), serde_json::to_string_pretty(&run.ledger)?.as_bytes())?;
            m.write_file("sla.json", &out.join("sla.json"), serde_json::to_string_pretty(&audit)?.as_bytes())?;
            m.write_file(
                "detections.json",
                &out.join("detections.json"),
                serde_json::to_string_pretty(&run.detections)?.as_bytes(),
            )?;
            for v in &audit {
                println!(
                    "{:<10} {} violation ticks {}/{} penalty {:.1}",
                    v.slice_id,
                    if v.met { "met     " } else { "violated" },
                    v.violation_ticks,
                    v.total_ticks,
                    v.penalty
                );
            }
            println!("detections {}, rejected actions {}", run.detections.len(), run.rejected.len());
            Ok(Outcome::kb(0, m, kb.kb))
        }
        Command::Report { kb } => {
            let m = RunManifest::new("report");
            let store = KnowledgeBase::open(&kb.kb).with_context(|| format!("opening KB at {}", kb.kb.display()))?;
            let rows: Vec<(&str, &cnsm_core::eval::MetricsReport)> =
                store.models().iter().filter_map(|r| r.metrics.as_ref().map(|x| (r.id.as_str(), x))).collect();
            if rows.is_empty() {
                println!("no evaluated models");
            } else {
                print!("{}", metrics_table(rows));
            }
            println!("\ndatasets:");
            for d in store.datasets() {
                println!("  {:<20} {:<15} {:>8} rows", d.id, format!("{:?}", d.kind).to_lowercase(), d.row_count);
            }
            println!("models: {}", store.models().iter().map(|r| r.id.as_str()).collect::<Vec<_>>().join(", "));
            println!("feedback entries: {}", store.feedback()?.len());
            Ok(Outcome::kb(0, m, kb.kb))
        }
    }
}

