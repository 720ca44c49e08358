//! Sentence records and the two on-disk corpus formats.
//!
//! `nyt-text`: one sentence per line,
//! `head_id \t tail_id \t head_surface \t tail_surface \t relation \t sentence ###END###`.
//! `jsonl`: one JSON object per line with the [`SentenceRecord`] fields.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const END_MARKER: &str = "###END###";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub head_id: String,
    pub tail_id: String,
    pub head_surface: String,
    pub tail_surface: String,
    pub relation: String,
    pub tokens: Vec<String>,
    pub head_pos: usize,
    pub tail_pos: usize,
}

impl SentenceRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("empty sentence".into());
        }
        if self.head_pos >= n || self.tail_pos >= n {
            return Err(format!("entity position out of range for {n} tokens"));
        }
        if self.head_pos == self.tail_pos {
            return Err("head and tail at the same token".into());
        }
        if self.tokens[self.head_pos] != self.head_surface {
            return Err(format!("token {} is not the head {:?}", self.head_pos, self.head_surface));
        }
        if self.tokens[self.tail_pos] != self.tail_surface {
            return Err(format!("token {} is not the tail {:?}", self.tail_pos, self.tail_surface));
        }
        Ok(())
    }

    /// Builds a record from raw text, joining multi-word entity surfaces
    /// into single underscore-joined tokens.
    pub fn from_text(
        head_id: &str,
        tail_id: &str,
        head_surface: &str,
        tail_surface: &str,
        relation: &str,
        sentence: &str,
    ) -> std::result::Result<Self, String> {
        let head_parts: Vec<&str> = head_surface.split_whitespace().collect();
        let tail_parts: Vec<&str> = tail_surface.split_whitespace().collect();
        if head_parts.is_empty() || tail_parts.is_empty() {
            return Err("empty entity surface".into());
        }
        let head = head_parts.join("_");
        let tail = tail_parts.join("_");
        if head == tail {
            return Err(format!("head and tail share the surface {head:?}"));
        }
        let mut tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
        join_span(&mut tokens, &head_parts, &head);
        join_span(&mut tokens, &tail_parts, &tail);
        let head_pos = tokens
            .iter()
            .position(|t| *t == head)
            .ok_or_else(|| format!("head {head:?} not found in sentence"))?;
        let tail_pos = tokens
            .iter()
            .position(|t| *t == tail)
            .ok_or_else(|| format!("tail {tail:?} not found in sentence"))?;
        let record = Self {
            head_id: head_id.into(),
            tail_id: tail_id.into(),
            head_surface: head,
            tail_surface: tail,
            relation: relation.into(),
            tokens,
            head_pos,
            tail_pos,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn parse_nyt_line(line: &str) -> std::result::Result<Self, String> {
        let body = line.trim_end();
        let body = body.strip_suffix(END_MARKER).unwrap_or(body).trim_end();
        let fields: Vec<&str> = body.splitn(6, '\t').collect();
        let (h, t, hs, ts, rel, sent) = if fields.len() == 6 {
            (fields[0], fields[1], fields[2], fields[3], fields[4], fields[5])
        } else {
            let mut it = body.split_whitespace();
            let mut next = || it.next().ok_or_else(|| "too few fields".to_string());
            let (h, t, hs, ts, rel) = (next()?, next()?, next()?, next()?, next()?);
            let rest = body
                .splitn(6, char::is_whitespace)
                .nth(5)
                .ok_or_else(|| "missing sentence".to_string())?;
            (h, t, hs, ts, rel, rest)
        };
        if [h, t, rel].iter().any(|f| f.trim().is_empty()) {
            return Err("empty identifier or relation field".into());
        }
        Self::from_text(h.trim(), t.trim(), hs, ts, rel.trim(), sent)
    }

    pub fn to_nyt_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{} {}",
            self.head_id,
            self.tail_id,
            self.head_surface,
            self.tail_surface,
            self.relation,
            self.tokens.join(" "),
            END_MARKER
        )
    }
}

fn join_span(tokens: &mut Vec<String>, parts: &[&str], joined: &str) {
    if parts.len() < 2 {
        return;
    }
    let k = parts.len();
    let mut i = 0;
    while i + k <= tokens.len() {
        if tokens[i..i + k].iter().zip(parts).all(|(a, b)| a == b) {
            tokens.splice(i..i + k, std::iter::once(joined.to_string()));
        }
        i += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    NytText,
    Jsonl,
}

impl CorpusFormat {
    /// `.jsonl`/`.json` files are structured; anything else is nyt-text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::NytText,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nyt-text" => Ok(CorpusFormat::NytText),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::input(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Largest tolerated fraction of malformed lines.
    pub max_malformed: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { max_malformed: 0.01 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<SentenceRecord>,
    pub rejected: Vec<Rejection>,
}

pub fn parse_corpus(reader: impl BufRead, format: CorpusFormat, opts: &LoadOptions) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut total = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::input(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = match format {
            CorpusFormat::NytText => SentenceRecord::parse_nyt_line(&line),
            CorpusFormat::Jsonl => serde_json::from_str::<SentenceRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.validate().map(|_| r)),
        };
        match parsed {
            Ok(r) => report.records.push(r),
            Err(reason) => report.rejected.push(Rejection { line: i + 1, reason }),
        }
    }
    if !report.rejected.is_empty() {
        for r in &report.rejected {
            log::warn!("line {}: {}", r.line, r.reason);
        }
        let fraction = report.rejected.len() as f64 / total as f64;
        if fraction > opts.max_malformed {
            let lines: Vec<String> = report
                .rejected
                .iter()
                .map(|r| format!("line {}: {}", r.line, r.reason))
                .collect();
            return Err(Error::input(format!(
                "{} of {total} lines malformed (limit {:.1}%): {}",
                report.rejected.len(),
                opts.max_malformed * 100.0,
                lines.join("; ")
            )));
        }
    }
    Ok(report)
}

pub fn load_corpus(path: &Path, format: CorpusFormat, opts: &LoadOptions) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), format, opts).map_err(|e| match e {
        Error::Input(msg) => Error::input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_corpus(out: &mut (impl Write + ?Sized), records: &[SentenceRecord], format: CorpusFormat) -> std::io::Result<()> {
    for r in records {
        match format {
            CorpusFormat::NytText => writeln!(out, "{}", r.to_nyt_line())?,
            CorpusFormat::Jsonl => writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?,
        }
    }
    Ok(())
}
