use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use grouplm_core::embed::{build_social_embedding, EmbedConfig, Recipe, SocialEmbedding};
use grouplm_core::graph::{compute_intersections, MembershipGraph};
use grouplm_core::lm::{Injection, ModelConfig};
use grouplm_core::similarity::build_similarity_matrix;
use grouplm_core::synth::{generate_corpus, generate_memberships, SynthSpec};
use grouplm_core::train::{evaluate, split_datasets, DatasetTag, SplitSpec, TrainConfig, Trainer};

use crate::checkpoint::Checkpoint;
use crate::cli::*;
use crate::error::{CliError, CliResult};
use crate::formats::*;
use crate::manifest::{file_checksum, Artifact, RunManifest};

/// Settings shared by every subcommand.
pub struct Context {
    pub seed: u64,
    pub file_config: Option<Value>,
}

impl Context {
    /// Defaults, overlaid with section `key` of the config file.
    fn section<T: Serialize + DeserializeOwned>(&self, key: &str, default: T) -> CliResult<T> {
        let mut value =
            serde_json::to_value(default).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(patch) = self.file_config.as_ref().and_then(|c| c.get(key)) {
            merge(&mut value, patch);
        }
        serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("config section `{key}`: {e}")))
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// What a subcommand read and wrote, for the manifest.
pub struct Outcome {
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Manifest location when `--manifest` is not given.
    pub manifest: PathBuf,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn load_config_file(path: &Path) -> CliResult<Value> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Usage(format!(
            "{}: expected a JSON object",
            path.display()
        )));
    }
    Ok(value)
}

/// Parses, runs and records one invocation.
pub fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // fails only if a pool already exists, as in tests running several commands
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let file_config = cli.config.as_deref().map(load_config_file).transpose()?;
    let seed = cli
        .seed
        .or_else(|| {
            file_config
                .as_ref()
                .and_then(|c| c.get("seed"))
                .and_then(Value::as_u64)
        })
        .unwrap_or(0);
    let ctx = Context { seed, file_config };
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Synth(a) => synth(&ctx, a)?,
        Command::Ingest(a) => ingest(a)?,
        Command::Intersect(a) => intersect(a)?,
        Command::Similarity(a) => similarity(a)?,
        Command::Embed(a) => embed(&ctx, a)?,
        Command::Train(a) => train(&ctx, a)?,
        Command::Eval(a) => eval(a)?,
        Command::Replay(a) => return replay(a),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: cli.command.name().to_string(),
        argv,
        seed,
        threads: cli.threads,
        deterministic: cli.deterministic,
        config: outcome.config,
        inputs: outcome
            .inputs
            .iter()
            .map(|p| Artifact::of(p))
            .collect::<CliResult<_>>()?,
        outputs: outcome
            .outputs
            .iter()
            .map(|p| Artifact::of(p))
            .collect::<CliResult<_>>()?,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    manifest.save(cli.manifest.as_deref().unwrap_or(&outcome.manifest))
}

fn synth(ctx: &Context, a: &SynthArgs) -> CliResult<Outcome> {
    let mut spec = ctx.section("synth", SynthSpec::default())?;
    set(&mut spec.num_groups, a.groups);
    set(&mut spec.num_users, a.users);
    set(&mut spec.num_topics, a.topics);
    set(&mut spec.p_in, a.p_in);
    set(&mut spec.p_out, a.p_out);
    set(&mut spec.vocab_size, a.vocab_size);
    set(&mut spec.alpha, a.alpha);
    set(&mut spec.docs_per_group, a.docs_per_group);
    set(&mut spec.doc_length, a.doc_length);
    set(&mut spec.zipf_exponent, a.zipf);
    spec.seed = ctx.seed;
    spec.validate()?;

    let edges = generate_memberships(&spec)?;
    let graph = MembershipGraph::ingest(edges.iter().map(|(g, u)| (g.as_str(), u.as_bytes())))?;
    let corpus = generate_corpus(&graph, &spec)?;

    let memberships = a.out_dir.join("memberships.tsv");
    let corpus_path = a.out_dir.join("corpus.tsv");
    let spec_path = a.out_dir.join("synth.json");
    write_text(
        &memberships,
        &format_memberships(edges.iter().map(|(g, u)| (g.as_str(), u.as_str()))),
    )?;
    write_text(&corpus_path, &format_corpus(&corpus))?;
    let meta = json!({ "spec": spec, "entropy_floor_bits": spec.entropy_floor() });
    write_text(
        &spec_path,
        &(serde_json::to_string_pretty(&meta).expect("plain data") + "\n"),
    )?;
    log::info!(
        "{} groups, {} users, {} documents; entropy floor {:.4} bits",
        graph.num_groups(),
        graph.universe_size(),
        corpus.len(),
        spec.entropy_floor()
    );
    Ok(Outcome {
        config: to_value(&spec),
        inputs: vec![],
        outputs: vec![memberships, corpus_path, spec_path],
        manifest: a.out_dir.join("synth.manifest.json"),
    })
}

fn load_graph(input: &GraphInput) -> CliResult<MembershipGraph> {
    let graph = read_memberships(&input.memberships)?;
    if input.min_group_size <= 1 {
        return Ok(graph);
    }
    let kept = graph.filter_groups(input.min_group_size);
    log::info!(
        "kept {} of {} groups with at least {} subscribers",
        kept.num_groups(),
        graph.num_groups(),
        input.min_group_size
    );
    Ok(kept)
}

fn graph_config(input: &GraphInput) -> Value {
    json!({ "min_group_size": input.min_group_size })
}

fn ingest(a: &IngestArgs) -> CliResult<Outcome> {
    let graph = load_graph(&a.input)?;
    let mut out = format!(
        "# groups {} users {} edges {}\n",
        graph.num_groups(),
        graph.universe_size(),
        graph.edges().count()
    );
    for g in graph.groups() {
        out.push_str(&format!("{}\t{}\n", g.group_id, g.size()));
    }
    write_text(&a.out, &out)?;
    Ok(Outcome {
        config: graph_config(&a.input),
        inputs: vec![a.input.memberships.clone()],
        outputs: vec![a.out.clone()],
        manifest: sibling(&a.out, ".manifest.json"),
    })
}

fn intersect(a: &IntersectArgs) -> CliResult<Outcome> {
    let graph = load_graph(&a.input)?;
    let inter = compute_intersections(&graph);
    write_text(&a.out, &format_intersections(&inter))?;
    Ok(Outcome {
        config: graph_config(&a.input),
        inputs: vec![a.input.memberships.clone()],
        outputs: vec![a.out.clone()],
        manifest: sibling(&a.out, ".manifest.json"),
    })
}

fn similarity(a: &SimilarityArgs) -> CliResult<Outcome> {
    let graph = load_graph(&a.input)?;
    let inter = compute_intersections(&graph);
    let sim = build_similarity_matrix(&graph, &inter, a.metric.into())?;
    write_text(&a.out, &format_similarity(&sim))?;
    let mut config = graph_config(&a.input);
    config["metric"] = json!(sim.metric().name());
    Ok(Outcome {
        config,
        inputs: vec![a.input.memberships.clone()],
        outputs: vec![a.out.clone()],
        manifest: sibling(&a.out, ".manifest.json"),
    })
}

fn embed(ctx: &Context, a: &EmbedArgs) -> CliResult<Outcome> {
    let mut cfg = ctx.section("embed", EmbedConfig::default())?;
    if let Some(r) = a.recipe {
        cfg.recipe = r.into();
    }
    if let Some(m) = a.metric {
        cfg.recipe = match m {
            MetricArg::Corr => Recipe::CorrDw,
            MetricArg::Cos => Recipe::CosDw,
            MetricArg::Jac => Recipe::JacDw,
        };
    }
    set(&mut cfg.d_svd, a.d_svd);
    set(&mut cfg.skipgram.dim, a.d_dw);
    set(&mut cfg.walks.walks_per_node, a.walks_per_node);
    set(&mut cfg.walks.walk_length, a.walk_length);
    set(&mut cfg.walks.window, a.window);
    set(&mut cfg.skipgram.epochs, a.epochs);
    let cfg = cfg.with_seed(ctx.seed);

    let graph = load_graph(&a.input)?;
    let emb = build_social_embedding(&graph, &cfg)?;
    write_text(&a.out, &format_embedding(&emb))?;
    let mut config = to_value(&cfg);
    config["min_group_size"] = json!(a.input.min_group_size);
    Ok(Outcome {
        config,
        inputs: vec![a.input.memberships.clone()],
        outputs: vec![a.out.clone()],
        manifest: sibling(&a.out, ".manifest.json"),
    })
}

fn load_embeddings(path: Option<&Path>) -> CliResult<Option<(SocialEmbedding, String)>> {
    path.map(|p| Ok((read_embedding(p)?, file_checksum(p)?)))
        .transpose()
}

fn check_checksum(what: &str, path: &Path, expected: &str, actual: &str) -> CliResult<()> {
    if expected != actual {
        return Err(CliError::Data(format!(
            "{}: {what} differs from the one the checkpoint was trained on",
            path.display()
        )));
    }
    Ok(())
}

fn train(ctx: &Context, a: &TrainArgs) -> CliResult<Outcome> {
    let mut corpus = read_corpus(&a.corpus)?;
    let corpus_sha = file_checksum(&a.corpus)?;
    let mut embeddings = load_embeddings(a.embeddings.as_deref())?;

    let (target, cfg, split, resumed) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            check_checksum("corpus", &a.corpus, &ckpt.header.corpus_sha3, &corpus_sha)?;
            match (&ckpt.header.embeddings_sha3, &embeddings) {
                (Some(want), Some((_, got))) => check_checksum(
                    "embedding file",
                    a.embeddings.as_deref().expect("given"),
                    want,
                    got,
                )?,
                (Some(_), None) => {
                    return Err(CliError::Usage("the resumed run needs --embeddings".into()))
                }
                _ => {}
            }
            let h = ckpt.header.clone();
            (h.target, h.train, h.split, Some(ckpt.state))
        }
        None => {
            let mut model = ctx.section("model", ModelConfig::default())?;
            set(&mut model.num_layers, a.layers);
            set(&mut model.hidden_size, a.hidden);
            set(&mut model.num_heads, a.heads);
            set(&mut model.ffn_size, a.ffn);
            set(&mut model.max_seq_len, a.max_seq_len);
            model.vocab_size = corpus.vocab_size;
            model.injection = match a.injection {
                InjectionArg::None => Injection::None,
                InjectionArg::Zero => Injection::ZeroToken,
                InjectionArg::Sat => {
                    let (layer, channels) = match model.injection {
                        Injection::Sat { layer, channels } => (layer, channels),
                        _ => (model.num_layers, 2),
                    };
                    Injection::Sat {
                        layer: a.sat_layer.unwrap_or(layer),
                        channels: a.channels.unwrap_or(channels),
                    }
                }
            };
            if model.injection == Injection::None && embeddings.is_some() {
                log::warn!("--injection none: the embedding file is ignored");
            }

            let mut cfg = ctx.section("train", TrainConfig::default())?;
            set(&mut cfg.learning_rate, a.lr);
            set(&mut cfg.warmup_steps, a.warmup);
            set(&mut cfg.max_steps, a.max_steps);
            set(&mut cfg.batch_size, a.batch_size);
            set(&mut cfg.mask.rate, a.mask_rate);
            if a.phase1_steps.is_some() {
                cfg.phase1_steps = a.phase1_steps;
            }
            if a.phase2_lr.is_some() {
                cfg.phase2_learning_rate = a.phase2_lr;
            }
            set(&mut cfg.eval_every, a.eval_every);
            set(&mut cfg.patience, a.patience);
            cfg.seed = ctx.seed;

            let mut split = ctx.section("split", SplitSpec::default())?;
            set(&mut split.known_group_fraction, a.known_fraction);
            set(&mut split.val_text_fraction, a.val_fraction);
            split.seed = ctx.seed;
            (model, cfg, split, None)
        }
    };

    let mut target = target;
    if target.injection == Injection::None {
        embeddings = None;
    } else {
        let (emb, _) = embeddings
            .as_ref()
            .ok_or_else(|| CliError::Usage("social injection needs --embeddings".into()))?;
        if resumed.is_none() {
            target.social_dim = emb.dim();
        }
        corpus.check_embeddings(emb)?;
    }
    target.validate()?;
    cfg.validate()?;
    corpus.truncate(target.max_seq_len);
    let splits = split_datasets(&corpus, &split)?;
    let emb = embeddings.as_ref().map(|(e, _)| e);
    let mut trainer = match resumed {
        Some(state) => Trainer::resume(state, &cfg, &splits.train, Some(&splits.val_k), emb)?,
        None => Trainer::new(&target, &cfg, &splits.train, Some(&splits.val_k), emb)?,
    };
    trainer.run(a.stop_after)?;

    let state = trainer.state;
    let mut events = Vec::new();
    if let (Some(at), Injection::Sat { layer, channels }) =
        (state.substituted_at, state.target.injection)
    {
        events.push((
            at,
            format!("step {at}: layer {layer} frozen and replaced by {channels} SAT channels"),
        ));
    }
    if state.stopped_early {
        events.push((
            state.step,
            format!("step {}: early stop on val-k", state.step),
        ));
    }
    let log_path = a.out_dir.join("train_log.tsv");
    write_text(&log_path, &format_train_log(&state.curve, &events))?;
    log::info!(
        "{} of {} steps done ({} train, {} val-k, {} val-u documents)",
        state.step,
        cfg.max_steps,
        splits.train.len(),
        splits.val_k.len(),
        splits.val_u.len()
    );

    let ckpt_path = a.out_dir.join("checkpoint.bin");
    let config =
        json!({ "model": state.target, "train": cfg, "split": split, "stop_after": a.stop_after });
    let emb_sha = embeddings.map(|(_, s)| s);
    Checkpoint::new(state, cfg, split, corpus_sha, emb_sha).save(&ckpt_path)?;

    let mut inputs = vec![a.corpus.clone()];
    if target.injection != Injection::None {
        inputs.extend(a.embeddings.clone());
    }
    inputs.extend(a.resume.clone());
    Ok(Outcome {
        config,
        inputs,
        outputs: vec![ckpt_path, log_path],
        manifest: a.out_dir.join("train.manifest.json"),
    })
}

fn eval(a: &EvalArgs) -> CliResult<Outcome> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let h = &ckpt.header;
    let mut corpus = read_corpus(&a.corpus)?;
    check_checksum(
        "corpus",
        &a.corpus,
        &h.corpus_sha3,
        &file_checksum(&a.corpus)?,
    )?;
    let embeddings = if h.config.injection == Injection::None {
        None
    } else {
        let (emb, sha) = load_embeddings(a.embeddings.as_deref())?
            .ok_or_else(|| CliError::Usage("this checkpoint needs --embeddings".into()))?;
        if let Some(want) = &h.embeddings_sha3 {
            check_checksum(
                "embedding file",
                a.embeddings.as_deref().expect("given"),
                want,
                &sha,
            )?;
        }
        Some(emb)
    };
    corpus.truncate(h.config.max_seq_len);
    let splits = split_datasets(&corpus, &h.split)?;
    let tags: Vec<DatasetTag> = match a.dataset {
        Some(d) => vec![d.into()],
        None => vec![DatasetTag::ValK, DatasetTag::ValU],
    };

    let mut lines = Vec::new();
    for tag in tags {
        let ds = match tag {
            DatasetTag::Train => &splits.train,
            DatasetTag::ValK => &splits.val_k,
            DatasetTag::ValU => &splits.val_u,
        };
        if ds.is_empty() || ds.tag != tag {
            return Err(CliError::Usage(format!(
                "dataset {tag} is empty for this corpus and split"
            )));
        }
        let report = evaluate(
            &ckpt.state.params,
            &h.config,
            ds,
            embeddings.as_ref(),
            &h.train.eval,
        )?;
        lines.push(format_report(&report));
    }
    if let Some(path) = &a.synth_spec {
        let meta: Value = serde_json::from_str(&read_text(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let spec: SynthSpec =
            serde_json::from_value(meta.get("spec").cloned().unwrap_or(Value::Null))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        lines.push(format!("# entropy_floor\t{}", spec.entropy_floor()));
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");

    let mut inputs = vec![a.checkpoint.clone(), a.corpus.clone()];
    if embeddings.is_some() {
        inputs.extend(a.embeddings.clone());
    }
    inputs.extend(a.synth_spec.clone());
    let outputs = match &a.out {
        Some(out) => {
            write_text(out, &text)?;
            vec![out.clone()]
        }
        None => vec![],
    };
    let manifest = match &a.out {
        Some(out) => sibling(out, ".manifest.json"),
        None => sibling(&a.checkpoint, ".eval.manifest.json"),
    };
    Ok(Outcome {
        config: json!({ "dataset": a.dataset.map(|d| DatasetTag::from(d).name()), "all": a.all }),
        inputs,
        outputs,
        manifest,
    })
}

/// Runs the recorded argv again and checks every output against its
/// recorded checksum.
fn replay(a: &ReplayArgs) -> CliResult<()> {
    use clap::Parser;
    let recorded = RunManifest::load(&a.manifest_file)?;
    let cli = Cli::try_parse_from(&recorded.argv).map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    run(cli, recorded.argv.clone())?;
    let mut differing = Vec::new();
    for out in &recorded.outputs {
        if file_checksum(&out.path)? != out.sha3_256 {
            differing.push(out.path.display().to_string());
        }
    }
    if differing.is_empty() {
        println!("replay matched {} outputs", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "replay produced different bytes: {}",
            differing.join(", ")
        )))
    }
}
