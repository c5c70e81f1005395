use std::path::Path;
use std::process::{Command, Output};

use grouplm::checkpoint::Checkpoint;
use grouplm::formats::*;
use grouplm::manifest::RunManifest;
use grouplm_core::embed::SocialEmbedding;
use grouplm_core::graph::{compute_intersections, MembershipGraph};
use grouplm_core::similarity::{build_similarity_matrix, Metric};
use grouplm_core::train::{Corpus, DatasetTag, Document, EvalReport};

fn grouplm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grouplm"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = grouplm(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32) -> String {
    let out = grouplm(dir, args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

const SYNTH: &[&str] = &[
    "synth",
    "--out-dir",
    "data",
    "--groups",
    "6",
    "--users",
    "240",
    "--vocab-size",
    "80",
    "--docs-per-group",
    "24",
];

fn embed_args(out: &str) -> Vec<&str> {
    vec![
        "embed",
        "--memberships",
        "data/memberships.tsv",
        "--d-svd",
        "3",
        "--d-dw",
        "3",
        "--walks-per-node",
        "5",
        "--walk-length",
        "12",
        "--out",
        out,
    ]
}

const TRAIN: &[&str] = &[
    "train",
    "--corpus",
    "data/corpus.tsv",
    "--embeddings",
    "emb.tsv",
    "--injection",
    "sat",
    "--layers",
    "2",
    "--hidden",
    "16",
    "--heads",
    "2",
    "--ffn",
    "32",
    "--max-steps",
    "24",
    "--warmup",
    "4",
    "--batch-size",
    "6",
    "--sat-layer",
    "2",
    "--phase1-steps",
    "10",
];

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), SYNTH);
    ok(dir.path(), &embed_args("emb.tsv"));
    dir
}

#[test]
fn text_formats_round_trip() {
    let edges: Vec<(String, String)> = (0..30)
        .map(|i| (format!("g{}", i % 4), format!("user{}", (i * 7) % 13)))
        .collect();
    let text = format_memberships(edges.iter().map(|(g, u)| (g.as_str(), u.as_str())));
    assert_eq!(parse_memberships(&text, Path::new("m")).unwrap(), edges);

    let graph =
        MembershipGraph::ingest(edges.iter().map(|(g, u)| (g.as_str(), u.as_bytes()))).unwrap();
    let inter = compute_intersections(&graph);
    assert_eq!(
        parse_intersections(&format_intersections(&inter), Path::new("i")).unwrap(),
        inter
    );
    let sim = build_similarity_matrix(&graph, &inter, Metric::Cosine).unwrap();
    assert_eq!(
        parse_similarity(&format_similarity(&sim), Path::new("s")).unwrap(),
        sim
    );

    let emb = SocialEmbedding::new(
        1,
        2,
        vec![
            ("x".into(), vec![0.1, -1.0 / 3.0, 1e-300]),
            ("y".into(), vec![f64::MAX, 0.0, -2.5]),
        ],
    )
    .unwrap();
    assert_eq!(
        parse_embedding(&format_embedding(&emb), Path::new("e")).unwrap(),
        emb
    );

    let corpus = Corpus::new(
        vec![
            Document {
                group_id: "x".into(),
                tokens: vec![4, 5, 9],
            },
            Document {
                group_id: "y".into(),
                tokens: vec![],
            },
        ],
        12,
    )
    .unwrap();
    assert_eq!(
        parse_corpus(&format_corpus(&corpus), Path::new("c")).unwrap(),
        corpus
    );

    let r = EvalReport::from_bits(DatasetTag::ValU, 1.2345678901234567, 99).unwrap();
    let (tag, loss, ppl, count) = parse_report(&format_report(&r)).unwrap();
    assert_eq!(
        (tag.as_str(), loss, ppl, count),
        ("val-u", r.loss, r.perplexity, 99)
    );
}

#[test]
fn malformed_inputs_report_line_numbers() {
    let err = parse_memberships("g\tu\nbroken line\n", Path::new("m.tsv")).unwrap_err();
    assert!(err.to_string().contains("m.tsv:2"), "{err}");
    assert_eq!(err.exit_code(), 3);
    let err = parse_corpus("#vocab_size\t10\ng\t4 5 x\n", Path::new("c.tsv")).unwrap_err();
    assert!(err.to_string().contains("c.tsv:2"), "{err}");
}

#[test]
fn pipeline_outputs_and_replay() {
    let dir = prepared();
    let d = dir.path();
    ok(
        d,
        &[
            "ingest",
            "--memberships",
            "data/memberships.tsv",
            "--out",
            "groups.tsv",
        ],
    );
    assert!(read_text(&d.join("groups.tsv"))
        .unwrap()
        .starts_with("# groups 6 "));
    ok(
        d,
        &[
            "intersect",
            "--memberships",
            "data/memberships.tsv",
            "--out",
            "inter.tsv",
        ],
    );
    ok(
        d,
        &[
            "similarity",
            "--memberships",
            "data/memberships.tsv",
            "--metric",
            "jac",
            "--out",
            "sim.tsv",
        ],
    );
    let sim = parse_similarity(
        &read_text(&d.join("sim.tsv")).unwrap(),
        Path::new("sim.tsv"),
    )
    .unwrap();
    assert_eq!((sim.metric(), sim.order()), (Metric::Jaccard, 6));
    assert_eq!(read_embedding(&d.join("emb.tsv")).unwrap().dim(), 6);

    let mut args = TRAIN.to_vec();
    args.extend(["--out-dir", "run"]);
    ok(d, &args);
    let log = read_text(&d.join("run/train_log.tsv")).unwrap();
    assert!(log.starts_with("step\tloss\tlr\n"));
    assert!(
        log.contains("# step 10: layer 2 frozen and replaced by 2 SAT channels\n11\t"),
        "{log}"
    );

    let out = ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.bin",
            "--corpus",
            "data/corpus.tsv",
            "--embeddings",
            "emb.tsv",
            "--all",
            "--synth-spec",
            "data/synth.json",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    for (line, tag) in lines.iter().zip(["val-k", "val-u"]) {
        let (t, loss, ppl, count) = parse_report(line).unwrap();
        assert_eq!(t, tag);
        assert!(count > 0);
        assert!((ppl - 2f64.powf(loss)).abs() <= 1e-12);
    }
    assert!(lines[2].starts_with("# entropy_floor\t"));

    let manifest = RunManifest::load(&d.join("run/train.manifest.json")).unwrap();
    assert_eq!(manifest.subcommand, "train");
    assert_eq!(manifest.outputs.len(), 2);
    assert!(ok(d, &["replay", "run/train.manifest.json"]).contains("replay matched 2 outputs"));
}

#[test]
fn stopped_and_resumed_training_matches_one_run() {
    let dir = prepared();
    let d = dir.path();
    let mut whole = TRAIN.to_vec();
    whole.extend(["--out-dir", "whole"]);
    ok(d, &whole);
    let mut part = TRAIN.to_vec();
    part.extend(["--out-dir", "part", "--stop-after", "7"]);
    ok(d, &part);
    let ckpt = Checkpoint::load(&d.join("part/checkpoint.bin")).unwrap();
    assert_eq!(ckpt.state.step, 7);
    ok(
        d,
        &[
            "train",
            "--corpus",
            "data/corpus.tsv",
            "--embeddings",
            "emb.tsv",
            "--resume",
            "part/checkpoint.bin",
            "--out-dir",
            "part",
        ],
    );
    let a = Checkpoint::load(&d.join("whole/checkpoint.bin")).unwrap();
    let b = Checkpoint::load(&d.join("part/checkpoint.bin")).unwrap();
    assert_eq!(a.state.step, 24);
    for (x, y) in a
        .state
        .params
        .entries()
        .iter()
        .zip(b.state.params.entries())
    {
        assert_eq!(x.name, y.name);
        for (p, q) in x.tensor.data().iter().zip(y.tensor.data()) {
            assert!((p - q).abs() <= 1e-6, "{}", x.name);
        }
    }
    assert_eq!(
        std::fs::read(d.join("whole/train_log.tsv")).unwrap(),
        std::fs::read(d.join("part/train_log.tsv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = prepared();
    let d = dir.path();
    // invalid configuration
    fails_with(
        d,
        &[
            "synth",
            "--out-dir",
            "bad",
            "--p-in",
            "0.1",
            "--p-out",
            "0.2",
        ],
        2,
    );
    fails_with(
        d,
        &[
            "similarity",
            "--memberships",
            "data/memberships.tsv",
            "--metric",
            "dice",
            "--out",
            "s",
        ],
        2,
    );
    fails_with(
        d,
        &[
            "embed",
            "--memberships",
            "data/memberships.tsv",
            "--d-svd",
            "50",
            "--out",
            "e.tsv",
        ],
        2,
    );
    // missing file
    fails_with(
        d,
        &["ingest", "--memberships", "nope.tsv", "--out", "g.tsv"],
        4,
    );

    // embeddings lacking one corpus group
    let text = read_text(&d.join("emb.tsv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let dropped = lines.pop().unwrap().split('\t').next().unwrap().to_string();
    let header: Vec<&str> = lines[0].split(' ').collect();
    let fixed = format!("{} {} {}", header[0], header[1], lines.len() - 1);
    lines[0] = &fixed;
    std::fs::write(d.join("short.tsv"), lines.join("\n") + "\n").unwrap();
    let mut args = TRAIN.to_vec();
    args[4] = "short.tsv";
    args.extend(["--out-dir", "r"]);
    let err = fails_with(d, &args, 3);
    assert!(err.contains(&dropped), "{err}");

    // resuming against a different corpus
    let mut args = TRAIN.to_vec();
    args.extend(["--out-dir", "r2", "--stop-after", "2"]);
    ok(d, &args);
    let corpus = read_text(&d.join("data/corpus.tsv")).unwrap();
    std::fs::write(
        d.join("other.tsv"),
        corpus
            .replacen("\t4 ", "\t5 ", 1)
            .replacen("\t5 ", "\t6 ", 1),
    )
    .unwrap();
    fails_with(
        d,
        &[
            "train",
            "--corpus",
            "other.tsv",
            "--embeddings",
            "emb.tsv",
            "--resume",
            "r2/checkpoint.bin",
            "--out-dir",
            "r2",
        ],
        3,
    );
}

#[test]
fn plain_training_ignores_embeddings_with_a_warning() {
    let dir = prepared();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_grouplm"))
        .current_dir(d)
        .args([
            "train",
            "--corpus",
            "data/corpus.tsv",
            "--embeddings",
            "emb.tsv",
            "--layers",
            "1",
            "--hidden",
            "8",
            "--heads",
            "1",
            "--ffn",
            "8",
            "--max-steps",
            "3",
            "--warmup",
            "1",
            "--out-dir",
            "plain",
        ])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ignored"));
    let out = ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "plain/checkpoint.bin",
            "--corpus",
            "data/corpus.tsv",
            "--dataset",
            "val-u",
        ],
    );
    assert!(out.starts_with("val-u\t"));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"seed": 3, "synth": {"num_groups": 4, "num_users": 100, "vocab_size": 50, "docs_per_group": 5, "alpha": 0.25}}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "--config",
            "cfg.json",
            "synth",
            "--out-dir",
            "out",
            "--groups",
            "5",
        ],
    );
    let meta: serde_json::Value =
        serde_json::from_str(&read_text(&d.join("out/synth.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["num_groups"], 5);
    assert_eq!(meta["spec"]["alpha"], 0.25);
    assert_eq!(meta["spec"]["seed"], 3);
    assert_eq!(meta["spec"]["p_in"], 0.3);
}
