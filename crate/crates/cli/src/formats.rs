//! Text file formats shared by the subcommands.
//!
//! | file | layout |
//! |------|--------|
//! | memberships | `group_id<TAB>raw_user_id` per line, `#` lines ignored |
//! | intersections | `M N`, then `M` rows of integers |
//! | similarity | `metric M`, then `M` rows of reals |
//! | embeddings | `d_svd d_dw M`, then `group_id<TAB>` followed by `d` reals |
//! | corpus | optional `#vocab_size<TAB>V`, then `group_id<TAB>` and token ids |
//! | training log | `step<TAB>loss<TAB>lr` |
//! | eval report | `tag<TAB>loss<TAB>perplexity<TAB>count` |
//!
//! Matrix and embedding reals carry 17 significant digits, enough to
//! round-trip any `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use grouplm_core::embed::SocialEmbedding;
use grouplm_core::graph::{IntersectionMatrix, MembershipGraph};
use grouplm_core::similarity::{Metric, SimilarityMatrix};
use grouplm_core::train::{Corpus, Document, EvalReport, StepLog};

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}:{line}: {message}", path.display()))
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_memberships(text: &str, path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut edges = Vec::new();
    for (n, line) in content_lines(text) {
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(g), Some(u), None) if !g.is_empty() => edges.push((g.to_string(), u.to_string())),
            _ => return Err(parse_error(path, n, "expected `group_id<TAB>user_id`")),
        }
    }
    Ok(edges)
}

pub fn read_memberships(path: &Path) -> CliResult<MembershipGraph> {
    let edges = parse_memberships(&read_text(path)?, path)?;
    MembershipGraph::ingest(edges).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn format_memberships<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (g, u) in edges {
        let _ = writeln!(out, "{g}\t{u}");
    }
    out
}

pub fn format_intersections(m: &IntersectionMatrix) -> String {
    let mut out = format!("{} {}\n", m.order(), m.universe_size());
    for i in 0..m.order() {
        let row: Vec<String> = m.row(i).iter().map(u32::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_intersections(text: &str, path: &Path) -> CliResult<IntersectionMatrix> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header"))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| parse_error(path, n, e))?;
    let [order, universe] = head[..] else {
        return Err(parse_error(path, n, "header must be `M N`"));
    };
    let mut counts = Vec::with_capacity(order * order);
    for _ in 0..order {
        let (n, line) = lines
            .next()
            .ok_or_else(|| parse_error(path, n, "too few rows"))?;
        let row: Vec<u32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_error(path, n, e))?;
        if row.len() != order {
            return Err(parse_error(path, n, format!("expected {order} entries")));
        }
        counts.extend(row);
    }
    IntersectionMatrix::from_counts(order, counts, universe)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn format_similarity(m: &SimilarityMatrix) -> String {
    let mut out = format!("{} {}\n", m.metric().name(), m.order());
    for i in 0..m.order() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_real(x)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_similarity(text: &str, path: &Path) -> CliResult<SimilarityMatrix> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header"))?;
    let mut head = header.split_whitespace();
    let (Some(metric), Some(order), None) = (head.next(), head.next(), head.next()) else {
        return Err(parse_error(path, n, "header must be `metric M`"));
    };
    let metric: Metric = metric.parse().map_err(|e| parse_error(path, n, e))?;
    let order: usize = order.parse().map_err(|e| parse_error(path, n, e))?;
    let mut values = Vec::with_capacity(order * order);
    for _ in 0..order {
        let (n, line) = lines
            .next()
            .ok_or_else(|| parse_error(path, n, "too few rows"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_error(path, n, e))?;
        if row.len() != order {
            return Err(parse_error(path, n, format!("expected {order} entries")));
        }
        values.extend(row);
    }
    SimilarityMatrix::new(metric, order, values)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn format_embedding(e: &SocialEmbedding) -> String {
    let (d_svd, d_dw) = e.parts();
    let mut out = format!("{d_svd} {d_dw} {}\n", e.len());
    for (g, v) in e.iter() {
        let vals: Vec<String> = v.iter().map(|&x| fmt_real(x)).collect();
        let _ = writeln!(out, "{g}\t{}", vals.join(" "));
    }
    out
}

pub fn parse_embedding(text: &str, path: &Path) -> CliResult<SocialEmbedding> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing header"))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| parse_error(path, n, e))?;
    let [d_svd, d_dw, m] = head[..] else {
        return Err(parse_error(path, n, "header must be `d_svd d_dw M`"));
    };
    let mut rows = Vec::with_capacity(m);
    for (n, line) in lines {
        let (g, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, n, "expected `group_id<TAB>values`"))?;
        let v: Vec<f64> = rest
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_error(path, n, e))?;
        rows.push((g.to_string(), v));
    }
    if rows.len() != m {
        return Err(CliError::Data(format!(
            "{}: header announces {m} groups, found {}",
            path.display(),
            rows.len()
        )));
    }
    SocialEmbedding::new(d_svd, d_dw, rows)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_embedding(path: &Path) -> CliResult<SocialEmbedding> {
    parse_embedding(&read_text(path)?, path)
}

pub fn format_corpus(c: &Corpus) -> String {
    let mut out = format!("#vocab_size\t{}\n", c.vocab_size);
    for d in &c.documents {
        let toks: Vec<String> = d.tokens.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}\t{}", d.group_id, toks.join(" "));
    }
    out
}

/// Without a `#vocab_size` line the vocabulary ends at the largest id seen.
pub fn parse_corpus(text: &str, path: &Path) -> CliResult<Corpus> {
    let mut vocab = None;
    for (n, line) in text.lines().enumerate() {
        if let Some(v) = line.strip_prefix("#vocab_size\t") {
            vocab = Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| parse_error(path, n + 1, e))?,
            );
        }
    }
    let mut documents = Vec::new();
    for (n, line) in content_lines(text) {
        let (g, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, n, "expected `group_id<TAB>tokens`"))?;
        let tokens: Vec<u32> = rest
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_error(path, n, e))?;
        documents.push(Document {
            group_id: g.to_string(),
            tokens,
        });
    }
    let vocab = vocab.unwrap_or_else(|| {
        documents
            .iter()
            .flat_map(|d| d.tokens.iter())
            .max()
            .map_or(grouplm_core::train::vocab::NUM_SPECIAL, |&m| m as usize + 1)
    });
    Corpus::new(documents, vocab).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_corpus(path: &Path) -> CliResult<Corpus> {
    parse_corpus(&read_text(path)?, path)
}

/// Header plus one row per step; `events` become `#` lines placed before
/// the step they precede.
pub fn format_train_log(curve: &[StepLog], events: &[(usize, String)]) -> String {
    let mut out = String::from("step\tloss\tlr\n");
    let mut pending = events.iter().peekable();
    for s in curve {
        while let Some((_, msg)) = pending.next_if(|(at, _)| *at < s.step) {
            let _ = writeln!(out, "# {msg}");
        }
        let _ = writeln!(out, "{}\t{}\t{}", s.step, s.loss, s.lr);
    }
    for (_, msg) in pending {
        let _ = writeln!(out, "# {msg}");
    }
    out
}

/// Shortest round-trip representation of every value.
pub fn format_report(r: &EvalReport) -> String {
    format!("{}\t{}\t{}\t{}", r.tag, r.loss, r.perplexity, r.count)
}

pub fn parse_report(line: &str) -> Option<(String, f64, f64, usize)> {
    let mut f = line.split('\t');
    let out = (
        f.next()?.to_string(),
        f.next()?.parse().ok()?,
        f.next()?.parse().ok()?,
        f.next()?.parse().ok()?,
    );
    f.next().is_none().then_some(out)
}
