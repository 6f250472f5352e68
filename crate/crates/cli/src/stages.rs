//! Stage bodies. Each stage checks its declared inputs, writes its outputs
//! under the work directory and logs what it produced.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use dpa_core::align::{emit_prealigned, emit_sft, sort_records};
use dpa_core::corpus::Corpus;
use dpa_core::eval::{category_report, mean_scores, render_category_table, tag_metrics, Prediction, TagRecord};
use dpa_core::gateway::http::{HttpNli, OpenAiBackend, DEFAULT_API_BASE, ENV_API_BASE, ENV_API_KEY};
use dpa_core::gateway::mock::PromptMock;
use dpa_core::gateway::{fan_out, AuditLog, Backend, Client, LexicalNli, NliScorer};
use dpa_core::jsonl::{read_jsonl, write_jsonl, Mode};
use dpa_core::model::{
    AugmentedQuery, Document, NliStatus, PreferenceLabel, PreferenceSample, QueryRecord, Record, Strategy,
};
use dpa_core::prefdata::{augment_all, extract_preferences, filter_augmented, judge_answer, merge_pref};
use dpa_core::prompts::{sft_prompt, DocView};
use dpa_core::rerank::{load_model, rerank, save_model, train, TrainSets};
use dpa_core::retrieval::dense_retrieve;
use dpa_core::store::{load_store, save_store, EmbeddingStore};
use dpa_core::synthetic::{generate, SyntheticConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, Loaded};
use crate::error::CliError;

/// Pipeline stages in execution order.
pub const STAGES: [&str; 10] = [
    "retrieve",
    "extract-pref",
    "augment",
    "filter",
    "train-reranker",
    "rerank",
    "emit-prealign",
    "emit-sft",
    "eval",
    "report",
];

pub const TRAIN_RETRIEVED: &str = "train.retrieved.jsonl";
pub const TEST_RETRIEVED: &str = "test.retrieved.jsonl";
pub const PREF: &str = "pref.jsonl";
pub const AUGMENTED: &str = "augmented.jsonl";
pub const FILTERED: &str = "augmented.filtered.jsonl";
pub const MODEL: &str = "reranker.dpae";
pub const RERANKED_TRAIN: &str = "reranked.train.jsonl";
pub const RERANKED_TEST: &str = "reranked.test.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";

const INPUT: &str = "the input data";

pub struct Ctx {
    pub loaded: Loaded,
    pub audit: Option<PathBuf>,
}

impl Ctx {
    fn config(&self) -> &Config {
        &self.loaded.config
    }

    fn mode(&self) -> Mode {
        if self.config().shared.lenient {
            Mode::Lenient
        } else {
            Mode::Strict
        }
    }

    fn require(&self, path: PathBuf, producer: &'static str) -> Result<PathBuf, CliError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact { path, producer })
        }
    }

    fn upstream(&self, name: &str, producer: &'static str) -> Result<PathBuf, CliError> {
        self.require(self.loaded.work(name), producer)
    }

    fn input(&self, path: &Path) -> Result<PathBuf, CliError> {
        self.require(self.loaded.resolve(path), INPUT)
    }

    fn read<T: Record>(&self, path: &Path) -> Result<Vec<T>, CliError> {
        Ok(read_jsonl(path, self.mode())?)
    }

    fn out(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.loaded.work(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        Ok(path)
    }

    fn write<T: Record>(&self, name: &str, records: &[T]) -> Result<(), CliError> {
        let path = self.out(name)?;
        write_jsonl(&path, records)?;
        log::info!("wrote {} records to {}", records.len(), path.display());
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out(name)?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("summary serializes") + "\n";
        self.write_text(name, &text)
    }

    fn queries(&self, name: &str, producer: &'static str) -> Result<Vec<QueryRecord>, CliError> {
        self.read(&self.upstream(name, producer)?)
    }

    fn corpus(&self) -> Result<Corpus, CliError> {
        let docs: Vec<Document> = self.read(&self.input(&self.config().shared.corpus)?)?;
        Corpus::new(docs).map_err(|e| CliError::Other(e.to_string()))
    }

    fn store(&self) -> Result<EmbeddingStore, CliError> {
        let path = self.require(self.loaded.resolve(&self.config().shared.store), "build-store")?;
        Ok(load_store(&path)?)
    }

    fn client(&self) -> Result<Client, CliError> {
        let g = &self.config().gateway;
        let backend: Arc<dyn Backend> = if self.config().shared.mock {
            let memory: BTreeMap<String, String> = match &self.config().shared.mock_memory {
                Some(p) => {
                    let path = self.input(p)?;
                    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Format { path, message: e.to_string() })?
                }
                None => BTreeMap::new(),
            };
            Arc::new(PromptMock::with_memory(memory))
        } else {
            Arc::new(OpenAiBackend::from_env(Duration::from_secs(g.timeout_secs)))
        };
        let mut client = Client::new(backend).with_max_in_flight(g.max_in_flight).with_model(
            g.model.clone(),
            g.temperature,
            g.max_tokens,
        );
        if let Some(path) = &self.audit {
            let log = AuditLog::create(path).map_err(|e| CliError::io(path, e))?;
            client = client.with_audit(Arc::new(log));
        }
        Ok(client)
    }

    fn nli(&self) -> Box<dyn NliScorer> {
        if self.config().shared.mock {
            return Box::new(LexicalNli::default());
        }
        let g = &self.config().gateway;
        let base = g
            .nli_base
            .clone()
            .or_else(|| std::env::var(ENV_API_BASE).ok())
            .unwrap_or_else(|| DEFAULT_API_BASE.to_string());
        Box::new(HttpNli::new(base, std::env::var(ENV_API_KEY).ok(), Duration::from_secs(g.timeout_secs)))
    }
}

fn by_id(queries: Vec<QueryRecord>) -> HashMap<String, QueryRecord> {
    queries.into_iter().map(|q| (q.query_id.clone(), q)).collect()
}

fn origin_id(q: &QueryRecord) -> &str {
    q.origin.as_ref().map_or(q.query_id.as_str(), |o| o.query_id.as_str())
}

pub fn run_stage(ctx: &Ctx, stage: &str, strategy: Option<&str>) -> Result<(), CliError> {
    log::info!("stage {stage} config_hash {}", ctx.loaded.hash);
    match stage {
        "retrieve" => retrieve(ctx),
        "extract-pref" => extract_pref(ctx),
        "augment" => augment(ctx, strategy),
        "filter" => filter(ctx),
        "train-reranker" => train_reranker(ctx),
        "rerank" => rerank_stage(ctx),
        "emit-prealign" => emit_prealign(ctx),
        "emit-sft" => emit_sft_stage(ctx),
        "eval" => eval(ctx),
        "report" => report(ctx),
        "build-store" => build_store(ctx),
        other => Err(CliError::Usage(format!("unknown stage {other:?}"))),
    }
}

fn build_store(ctx: &Ctx) -> Result<(), CliError> {
    let docs: Vec<Document> = ctx.read(&ctx.input(&ctx.config().shared.corpus)?)?;
    let dim = docs.first().map(|d| d.embedding.len()).ok_or_else(|| CliError::Other("corpus is empty".into()))?;
    let store = EmbeddingStore::from_documents(dim, &docs)?;
    let path = ctx.loaded.resolve(&ctx.config().shared.store);
    save_store(&store, &path)?;
    log::info!("wrote {} x {} store to {}", store.len(), dim, path.display());
    Ok(())
}

fn retrieve(ctx: &Ctx) -> Result<(), CliError> {
    let store = ctx.store()?;
    let shared = &ctx.config().shared;
    for (src, name) in [(&shared.train_queries, TRAIN_RETRIEVED), (&shared.test_queries, TEST_RETRIEVED)] {
        let mut queries: Vec<QueryRecord> = ctx.read(&ctx.input(src)?)?;
        for q in &mut queries {
            q.retrieved = dense_retrieve(&q.query_id, &q.embedding, &store, ctx.config().retrieve.depth)
                .map_err(|e| CliError::Other(format!("{}: {e}", q.query_id)))?
                .hits;
        }
        ctx.write(name, &queries)?;
    }
    Ok(())
}

fn extract_pref(ctx: &Ctx) -> Result<(), CliError> {
    let queries = ctx.queries(TRAIN_RETRIEVED, "retrieve")?;
    let corpus = ctx.corpus()?;
    let client = ctx.client()?;
    let ex = extract_preferences(&queries, &corpus, &client, &ctx.config().extract_pref);
    ctx.write(PREF, &ex.samples)?;
    ctx.write("pref.failures.jsonl", &ex.failures)?;
    let mut labels: BTreeMap<&str, usize> = PreferenceLabel::ALL.iter().map(|l| (l.as_str(), 0)).collect();
    for e in ex.samples.iter().flat_map(|s| &s.subset) {
        *labels.get_mut(e.label.as_str()).unwrap() += 1;
    }
    ctx.write_json(
        "pref.summary.json",
        &json!({
            "config_hash": ctx.loaded.hash,
            "queries": queries.len(),
            "processed": ex.processed,
            "retained": ex.samples.len(),
            "failed": ex.failures.len(),
            "retention_ratio": ex.retention_ratio(),
            "subset_labels": labels,
        }),
    )
}

fn augment(ctx: &Ctx, strategy: Option<&str>) -> Result<(), CliError> {
    let strategies = match strategy {
        None => ctx.config().augment.strategies.clone(),
        Some(s) if s.eq_ignore_ascii_case("all") => Strategy::ALL.to_vec(),
        Some(s) => vec![Strategy::parse(s).ok_or_else(|| CliError::Usage(format!("unknown strategy {s:?}")))?],
    };
    let samples: Vec<PreferenceSample> = ctx.read(&ctx.upstream(PREF, "extract-pref")?)?;
    let mut queries = by_id(ctx.queries(TRAIN_RETRIEVED, "retrieve")?);
    let selected: Vec<QueryRecord> = samples
        .iter()
        .map(|s| {
            queries.remove(&s.query_id).ok_or_else(|| CliError::Other(format!("no query record for {}", s.query_id)))
        })
        .collect::<Result<_, _>>()?;
    let corpus = ctx.corpus()?;
    let client = ctx.client()?;
    let (augmented, failures) = augment_all(&selected, &corpus, &strategies, &client);
    ctx.write(AUGMENTED, &augmented)?;
    ctx.write("augment.failures.jsonl", &failures)
}

fn filter(ctx: &Ctx) -> Result<(), CliError> {
    let augmented: Vec<AugmentedQuery> = ctx.read(&ctx.upstream(AUGMENTED, "augment")?)?;
    let originals = by_id(ctx.queries(TRAIN_RETRIEVED, "retrieve")?);
    let outcome = filter_augmented(&augmented, &originals, ctx.nli().as_ref());
    ctx.write(FILTERED, &outcome.retained)?;
    ctx.write("augmented.judged.jsonl", &outcome.judged)?;
    ctx.write("filter.failures.jsonl", &outcome.failures)?;
    let mut verdicts: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_strategy: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
    for a in &outcome.judged {
        let v = serde_json::to_value(a.nli_verdict).unwrap().as_str().unwrap().to_string();
        *verdicts.entry(v).or_default() += 1;
        let row = per_strategy.entry(a.strategy.to_string()).or_default();
        *row.entry("judged").or_default() += 1;
        if a.nli_verdict != NliStatus::Contradiction {
            *row.entry("retained").or_default() += 1;
        }
    }
    ctx.write_json(
        "filter.summary.json",
        &json!({
            "config_hash": ctx.loaded.hash,
            "judged": outcome.judged.len(),
            "retained": outcome.retained.len(),
            "failed": outcome.failures.len(),
            "drop_rate": outcome.drop_rate(),
            "verdicts": verdicts,
            "per_strategy": per_strategy,
        }),
    )
}

fn train_reranker(ctx: &Ctx) -> Result<(), CliError> {
    let samples: Vec<PreferenceSample> = ctx.read(&ctx.upstream(PREF, "extract-pref")?)?;
    let queries = by_id(ctx.queries(TRAIN_RETRIEVED, "retrieve")?);
    let store = ctx.store()?;
    let sets = TrainSets::from_samples(&samples, &queries, &store)?;
    let config = ctx.config().train_config();
    let (model, history) = train(config.initial_model(store.dim()), &sets, &config)?;
    save_model(&model, &ctx.loaded.hash, &ctx.out(MODEL)?)?;
    let mut lines = String::new();
    for h in &history {
        lines.push_str(&serde_json::to_string(h).expect("history serializes"));
        lines.push('\n');
    }
    ctx.write_text("history.jsonl", &lines)?;
    log::info!("trained on {} samples in {} steps", samples.len(), history.len());
    Ok(())
}

fn rerank_stage(ctx: &Ctx) -> Result<(), CliError> {
    let (model, header) = load_model(&ctx.upstream(MODEL, "train-reranker")?)?;
    if header.config_hash != ctx.loaded.hash {
        log::warn!("reranker was trained under config {} but this run is {}", header.config_hash, ctx.loaded.hash);
    }
    let store = ctx.store()?;
    for (src, name) in [(TRAIN_RETRIEVED, RERANKED_TRAIN), (TEST_RETRIEVED, RERANKED_TEST)] {
        let mut queries = ctx.queries(src, "retrieve")?;
        for q in &mut queries {
            q.retrieved = rerank(&model, q, &store, ctx.config().rerank.k)?;
        }
        ctx.write(name, &queries)?;
    }
    Ok(())
}

/// Retained rewrites whose origin is among `originals`.
fn filtered_for(ctx: &Ctx, originals: &[QueryRecord]) -> Result<Vec<AugmentedQuery>, CliError> {
    let path = ctx.loaded.work(FILTERED);
    if !path.exists() {
        log::info!("no {FILTERED}; emitting original queries only");
        return Ok(Vec::new());
    }
    let known: std::collections::HashSet<&str> = originals.iter().map(|q| q.query_id.as_str()).collect();
    let all: Vec<AugmentedQuery> = ctx.read(&path)?;
    Ok(all.into_iter().filter(|a| known.contains(a.origin_query_id.as_str())).collect())
}

fn emit_prealign(ctx: &Ctx) -> Result<(), CliError> {
    let samples: Vec<PreferenceSample> = ctx.read(&ctx.upstream(PREF, "extract-pref")?)?;
    let queries = by_id(ctx.queries(TRAIN_RETRIEVED, "retrieve")?);
    let corpus = ctx.corpus()?;
    let originals: Vec<QueryRecord> = samples
        .iter()
        .map(|s| {
            queries
                .get(&s.query_id)
                .cloned()
                .ok_or_else(|| CliError::Other(format!("no query record for {}", s.query_id)))
        })
        .collect::<Result<_, _>>()?;
    let augmented = filtered_for(ctx, &originals)?;
    let merged = merge_pref(&originals, &[augmented])?;
    let sample_of: HashMap<&str, &PreferenceSample> = samples.iter().map(|s| (s.query_id.as_str(), s)).collect();
    let (k, seed) = (ctx.config().emit_prealign.k, ctx.config().shared.seed);
    let mut records = Vec::with_capacity(merged.len());
    for q in &merged {
        let sample = sample_of[origin_id(q)];
        records.push(emit_prealigned(sample, q, &corpus, k, seed).map_err(|e| CliError::Other(e.to_string()))?);
    }
    sort_records(&mut records);
    ctx.write("prealign.jsonl", &records)
}

fn emit_sft_stage(ctx: &Ctx) -> Result<(), CliError> {
    let reranked = ctx.queries(RERANKED_TRAIN, "rerank")?;
    let corpus = ctx.corpus()?;
    let augmented = filtered_for(ctx, &reranked)?;
    let merged = merge_pref(&reranked, &[augmented])?;
    let topk: HashMap<&str, Vec<&str>> = reranked
        .iter()
        .map(|q| (q.query_id.as_str(), q.retrieved.iter().map(|h| h.doc_id.as_str()).collect()))
        .collect();
    let (k, seed) = (ctx.config().emit_sft.k, ctx.config().shared.seed);
    let mut records = Vec::with_capacity(merged.len());
    for q in &merged {
        let ids = &topk[origin_id(q)];
        let ids = &ids[..k.min(ids.len())];
        records.push(emit_sft(q, ids, &corpus, k, seed).map_err(|e| CliError::Other(e.to_string()))?);
    }
    sort_records(&mut records);
    ctx.write("sft.jsonl", &records)
}

fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let test = ctx.queries(TEST_RETRIEVED, "retrieve")?;
    let reranked = by_id(ctx.queries(RERANKED_TEST, "rerank")?);
    let corpus = ctx.corpus()?;
    let client = ctx.client()?;
    let k = ctx.config().eval.k;
    let read = |q: &QueryRecord, hits: &[dpa_core::model::Hit]| -> Result<String, CliError> {
        let ids: Vec<&str> = hits.iter().take(k).map(|h| h.doc_id.as_str()).collect();
        let docs: Vec<DocView<'_>> = corpus.views(&ids).map_err(|e| CliError::Other(e.to_string()))?;
        Ok(client.prompt(sft_prompt(&q.query, &docs))?)
    };
    let results = fan_out(&test, client.max_in_flight(), |q| -> Result<Prediction, CliError> {
        let top = reranked
            .get(&q.query_id)
            .ok_or_else(|| CliError::Other(format!("{} missing from {RERANKED_TEST}", q.query_id)))?;
        Ok(Prediction {
            query_id: q.query_id.clone(),
            gold_answers: q.gold_answers.clone(),
            direct: read(q, &[])?,
            retriever: read(q, &q.retrieved)?,
            reranked: read(q, &top.retrieved)?,
            extra: Default::default(),
        })
    });
    let predictions: Vec<Prediction> = results.into_iter().collect::<Result<_, _>>()?;
    ctx.write(PREDICTIONS, &predictions)?;
    let scores = |f: fn(&Prediction) -> &str| {
        mean_scores(predictions.iter().map(|p| (f(p), p.gold_answers.as_slice())))
            .map_err(|e| CliError::Other(e.to_string()))
    };
    let reranked = scores(|p| &p.reranked)?;
    ctx.write_json(
        "metrics.json",
        &json!({
            "config_hash": ctx.loaded.hash,
            "n": predictions.len(),
            "k": k,
            "hit_at_1": reranked.hit_at_1,
            "f1": reranked.f1,
            "retriever": scores(|p| &p.retriever)?,
            "direct": scores(|p| &p.direct)?,
        }),
    )
}

fn report(ctx: &Ctx) -> Result<(), CliError> {
    let predictions: Vec<Prediction> = ctx.read(&ctx.upstream(PREDICTIONS, "eval")?)?;
    let outcomes: Vec<(bool, bool)> = predictions
        .iter()
        .map(|p| (judge_answer(&p.direct, &p.gold_answers), judge_answer(&p.reranked, &p.gold_answers)))
        .collect();
    let categories = category_report(&outcomes).map_err(|e| CliError::Other(e.to_string()))?;

    let mut tag_rows = Vec::new();
    for (name, path) in &ctx.config().shared.tags {
        let records: Vec<TagRecord> = ctx.read(&ctx.input(path)?)?;
        let tags: Vec<Vec<String>> = records.into_iter().map(|r| r.tags).collect();
        let m = tag_metrics(&tags).map_err(|e| CliError::Other(format!("tags {name}: {e}")))?;
        tag_rows.push((name.as_str(), tags.len(), m));
    }

    let mut text = String::from("preference categories (no documents vs. reranked documents)\n");
    text.push_str(&render_category_table(&categories));
    let mut csv = String::from("section,name,count,percent,complexity,diversity\n");
    for r in &categories.rows {
        csv.push_str(&format!("category,{},{},{},,\n", r.label.as_str(), r.count, r.percent));
    }
    if !tag_rows.is_empty() {
        text.push_str(&format!("\n{:<20} {:>7} {:>10} {:>10}\n", "tag set", "samples", "complexity", "diversity"));
        for (name, n, m) in &tag_rows {
            text.push_str(&format!("{name:<20} {n:>7} {:>10.4} {:>10.4}\n", m.complexity, m.diversity));
            csv.push_str(&format!("tags,{name},{n},,{},{}\n", m.complexity, m.diversity));
        }
    }
    ctx.write_text("report.txt", &text)?;
    ctx.write_text("report.csv", &csv)
}

/// Writes the planted-signal fixture and a mock-mode config next to it.
pub fn synth(dir: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let config = SyntheticConfig { seed, ..Default::default() };
    let data = generate(&config).map_err(|e| CliError::Other(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_jsonl(&dir.join("corpus.jsonl"), &data.docs)?;
    write_jsonl(&dir.join("train.jsonl"), &data.train)?;
    write_jsonl(&dir.join("test.jsonl"), &data.test)?;
    write_jsonl(&dir.join("tags.jsonl"), &data.tags)?;
    let memory = serde_json::to_string_pretty(&data.memory).expect("memory serializes") + "\n";
    let mem_path = dir.join("memory.json");
    fs::write(&mem_path, memory).map_err(|e| CliError::io(&mem_path, e))?;

    let mut pipeline = Config::default();
    pipeline.shared.seed = seed;
    pipeline.shared.mock = true;
    pipeline.shared.mock_memory = Some("memory.json".into());
    pipeline.shared.tags.insert("origin".into(), "tags.jsonl".into());
    pipeline.gateway.max_in_flight = 1;
    pipeline.train_reranker.learning_rate = 0.5;
    pipeline.train_reranker.epochs = 30;
    let path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&pipeline).expect("config serializes") + "\n";
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    log::info!("wrote synthetic fixture ({} docs) to {}", data.docs.len(), dir.display());
    Ok(path)
}
