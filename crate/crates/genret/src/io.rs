//! On-disk formats: corpus JSONL/TSV, manifests, identifier maps,
//! embeddings, synthetic queries, run and score files, checkpoints.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use genret_core::corpus::{Corpus, Manifest, ManifestSource, RawCorpus, Split};
use genret_core::decode::{Ranked, RankedList};
use genret_core::docid::{DocIdScheme, EmbeddingMatrix, SchemeKind};
use genret_core::eval::ScoreTable;
use genret_core::model::{Adam, LrSchedule, Matrix, ModelConfig, ModelParams, Tensor};
use genret_core::tasks::SyntheticQuerySet;
use genret_core::tokenizer::Tokenizer;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DOCS_FILE: &str = "docs.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels.tsv";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const MANIFEST_FILE: &str = "corpus.manifest.json";
pub const IDMAP_FILE: &str = "idmap.tsv";
pub const SCHEME_FILE: &str = "scheme.json";

/// Writes through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable value");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        file: path.into(),
        line: e.inner().line(),
        message: format!("{}: {}", e.path(), e.inner()),
    })
}

/// Exclusive marker file inside an output directory, removed on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.into())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(f).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line, text) in open_lines(path)? {
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { file: path.into(), line, message: e.to_string() })?;
        out.push(v);
    }
    Ok(out)
}

fn jsonl_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r).expect("serializable row");
        out.push(b'\n');
    }
    out
}

fn read_tsv(path: &Path, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for (line, text) in open_lines(path)? {
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = text.split('\t').map(str::to_string).collect();
        if cols.len() != columns {
            return Err(Error::Parse {
                file: path.into(),
                line,
                message: format!("expected {columns} tab-separated columns, found {}", cols.len()),
            });
        }
        out.push((line, cols));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRow {
    doc_id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRow {
    query_id: String,
    text: String,
    split: Split,
}

pub fn read_docs(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_jsonl::<DocRow>(path)?.into_iter().map(|r| (r.doc_id, r.text)).collect())
}

pub fn read_queries(path: &Path) -> Result<Vec<(String, String, Split)>> {
    Ok(read_jsonl::<QueryRow>(path)?.into_iter().map(|r| (r.query_id, r.text, r.split)).collect())
}

pub fn read_qrels(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_tsv(path, 2)?.into_iter().map(|(_, mut c)| (c.remove(0), c.remove(0))).collect())
}

pub fn read_raw(docs: &Path, queries: &Path, qrels: &Path) -> Result<RawCorpus> {
    Ok(RawCorpus { docs: read_docs(docs)?, queries: read_queries(queries)?, qrels: read_qrels(qrels)? })
}

fn source_of(docs: &Path, queries: &Path, qrels: &Path) -> ManifestSource {
    let s = |p: &Path| p.to_string_lossy().into_owned();
    ManifestSource { docs: s(docs), queries: s(queries), qrels: s(qrels) }
}

/// Reads the three corpus files and learns a tokenizer with `vocab_size`.
pub fn load_corpus(docs: &Path, queries: &Path, qrels: &Path, vocab_size: usize) -> Result<Corpus> {
    let raw = read_raw(docs, queries, qrels)?;
    Ok(Corpus::build(raw, vocab_size, source_of(docs, queries, qrels))?)
}

/// Writes docs, queries, qrels, tokenizer and manifest into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    write_atomic(
        &dir.join(DOCS_FILE),
        &jsonl_bytes(corpus.documents.values().map(|d| DocRow { doc_id: d.doc_id.clone(), text: d.text.clone() })),
    )?;
    let queries = corpus.train_queries.values().chain(corpus.dev_queries.values());
    write_atomic(
        &dir.join(QUERIES_FILE),
        &jsonl_bytes(queries.map(|q| QueryRow { query_id: q.query_id.clone(), text: q.text.clone(), split: q.split })),
    )?;
    let mut qrels = String::new();
    for (q, d) in corpus.train_qrels.iter().chain(corpus.dev_qrels.iter()) {
        qrels.push_str(&format!("{q}\t{d}\n"));
    }
    write_atomic(&dir.join(QRELS_FILE), qrels.as_bytes())?;
    write_json(&dir.join(TOKENIZER_FILE), &corpus.tokenizer)?;
    write_manifest(&dir.join(MANIFEST_FILE), &corpus.manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_json(path, manifest)
}

/// Loads a corpus directory written by [`write_corpus`], reusing its
/// tokenizer and manifest.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let (d, q, r) = (dir.join(DOCS_FILE), dir.join(QUERIES_FILE), dir.join(QRELS_FILE));
    let raw = read_raw(&d, &q, &r)?;
    let tokenizer: Tokenizer = read_json(&dir.join(TOKENIZER_FILE))?;
    let mut corpus = Corpus::with_tokenizer(raw, tokenizer, source_of(&d, &q, &r))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        corpus.manifest = read_json(&manifest_path)?;
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SchemeMeta {
    kind: SchemeKind,
    vocab_size: usize,
    width: usize,
    count: usize,
}

/// `doc_id \t space-separated tokens` plus a small JSON sidecar with the
/// scheme kind and vocabulary.
pub fn write_scheme(dir: &Path, scheme: &DocIdScheme) -> Result<()> {
    let mut tsv = String::new();
    for (d, toks) in scheme.iter() {
        let t: Vec<String> = toks.iter().map(u32::to_string).collect();
        tsv.push_str(&format!("{d}\t{}\n", t.join(" ")));
    }
    write_atomic(&dir.join(IDMAP_FILE), tsv.as_bytes())?;
    let meta = SchemeMeta { kind: scheme.kind(), vocab_size: scheme.vocab_size(), width: scheme.width(), count: scheme.len() };
    write_json(&dir.join(SCHEME_FILE), &meta)
}

pub fn read_scheme(dir: &Path) -> Result<DocIdScheme> {
    let meta: SchemeMeta = read_json(&dir.join(SCHEME_FILE))?;
    let path = dir.join(IDMAP_FILE);
    let mut map = BTreeMap::new();
    for (line, cols) in read_tsv(&path, 2)? {
        let toks = cols[1]
            .split_whitespace()
            .map(str::parse::<u32>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { file: path.clone(), line, message: e.to_string() })?;
        if map.insert(cols[0].clone(), toks).is_some() {
            return Err(Error::Parse { file: path.clone(), line, message: format!("duplicate doc id {:?}", cols[0]) });
        }
    }
    if map.len() != meta.count {
        return Err(Error::Data(format!("{}: {} rows, scheme declares {}", path.display(), map.len(), meta.count)));
    }
    Ok(DocIdScheme::from_map(meta.kind, meta.vocab_size, meta.width, map)?)
}

/// Header `(count, dim)` as little-endian u32, then row-major f32; doc ids
/// go one per line into `order`.
pub fn write_embeddings(bin: &Path, order: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 4 * emb.data.len());
    bytes.extend_from_slice(&(emb.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(emb.dim as u32).to_le_bytes());
    for x in &emb.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(bin, &bytes)?;
    let mut ids = emb.doc_ids.join("\n");
    ids.push('\n');
    write_atomic(order, ids.as_bytes())
}

pub fn read_embeddings(bin: &Path, order: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    if bytes.len() < 8 {
        return Err(Error::Data(format!("{}: truncated header", bin.display())));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * count * dim {
        return Err(Error::Data(format!("{}: expected {} floats, found {} bytes", bin.display(), count * dim, bytes.len() - 8)));
    }
    let data: Vec<f32> = bytes[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let text = fs::read_to_string(order).map_err(|e| Error::io(order, e))?;
    let ids: Vec<String> = text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
    if ids.len() != count {
        return Err(Error::Data(format!("{}: {} ids for {count} rows", order.display(), ids.len())));
    }
    Ok(EmbeddingMatrix::new(ids, dim, data)?)
}

#[derive(Serialize, Deserialize)]
struct SyntheticRow {
    doc_id: String,
    query: String,
    source: String,
}

pub fn write_synthetic_queries(path: &Path, qset: &SyntheticQuerySet) -> Result<()> {
    let rows = qset.queries.iter().flat_map(|(d, qs)| {
        qs.iter().map(move |q| SyntheticRow { doc_id: d.clone(), query: q.clone(), source: qset.generator.clone() })
    });
    write_atomic(path, &jsonl_bytes(rows))
}

/// Reads `{doc_id, query, source}` lines. The set's generator name is the
/// first row's source.
pub fn read_synthetic_queries(path: &Path, corpus: &Corpus) -> Result<SyntheticQuerySet> {
    let rows: Vec<SyntheticRow> = read_jsonl(path)?;
    let source = rows.first().map(|r| r.source.clone()).unwrap_or_else(|| "external".into());
    Ok(SyntheticQuerySet::from_pairs(corpus, &source, rows.into_iter().map(|r| (r.doc_id, r.query)))?)
}

/// `query_id \t doc_id \t rank \t score`, ranks 1-based. Scores print with
/// a fixed precision so files are stable across platforms.
pub fn run_bytes(runs: &[RankedList]) -> Vec<u8> {
    let mut out = String::new();
    for r in runs {
        for (i, x) in r.results.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", r.query_id, x.doc_id, i + 1, x.score));
        }
    }
    out.into_bytes()
}

pub fn write_run(path: &Path, runs: &[RankedList]) -> Result<()> {
    write_atomic(path, &run_bytes(runs))
}

/// Groups rows by query id and orders each list by rank. Queries with no
/// results do not appear in the file.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let mut lists: BTreeMap<String, Vec<(usize, Ranked)>> = BTreeMap::new();
    for (line, c) in read_tsv(path, 4)? {
        let bad = |m: String| Error::Parse { file: path.into(), line, message: m };
        let rank: usize = c[2].parse().map_err(|e| bad(format!("rank: {e}")))?;
        let score: f64 = c[3].parse().map_err(|e| bad(format!("score: {e}")))?;
        if rank == 0 {
            return Err(bad("ranks are 1-based".into()));
        }
        lists.entry(c[0].clone()).or_default().push((rank, Ranked { doc_id: c[1].clone(), score }));
    }
    Ok(lists
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|(r, _)| *r);
            RankedList { query_id: q, results: v.into_iter().map(|(_, x)| x).collect(), warnings: Vec::new() }
        })
        .collect())
}

/// `doc_id \t query_hash \t score`.
pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let mut out = ScoreTable::new();
    for (line, c) in read_tsv(path, 3)? {
        let s: f64 = c[2].parse().map_err(|e| Error::Parse { file: path.into(), line, message: format!("score: {e}") })?;
        out.insert((c[0].clone(), c[1].clone()), s);
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &ScoreTable) -> Result<()> {
    let mut out = String::new();
    for ((d, h), s) in scores {
        out.push_str(&format!("{d}\t{h}\t{s}\n"));
    }
    write_atomic(path, out.as_bytes())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for &x in &m.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    file: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at + n).ok_or_else(|| Error::Data(format!("{}: truncated", self.file.display())))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Data(e.to_string()))?;
        let ndim = self.u32()?;
        if ndim != 2 {
            return Err(Error::Data(format!("{}: tensor {name} has {ndim} dims", self.file.display())));
        }
        let (rows, cols) = (self.u32()? as usize, self.u32()? as usize);
        let data = self.take(4 * rows * cols)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(Tensor { name, value: Matrix::from_vec(rows, cols, data) })
    }
}

fn tensors_bytes<'a>(tensors: impl ExactSizeIterator<Item = (&'a str, &'a Matrix)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        put_tensor(&mut out, name, m);
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// `config.json` + `weights.bin`, and `optimizer.bin` when `opt` is given.
pub fn write_checkpoint(dir: &Path, params: &ModelParams, opt: Option<&Adam>) -> Result<()> {
    write_json(&dir.join("config.json"), &params.config)?;
    let tensors: Vec<(&str, &Matrix)> = params.tensors().collect();
    write_atomic(&dir.join("weights.bin"), &tensors_bytes(tensors.into_iter()))?;
    if let Some(opt) = opt {
        let mut out = Vec::new();
        out.extend_from_slice(&opt.step.to_le_bytes());
        out.extend_from_slice(&opt.schedule.peak.to_le_bytes());
        out.extend_from_slice(&opt.schedule.warmup_steps.to_le_bytes());
        let (m, v) = opt.moments();
        let names: Vec<&str> = params.tensors().map(|(n, _)| n).collect();
        out.extend(tensors_bytes(names.iter().copied().zip(m.iter())));
        out.extend(tensors_bytes(names.iter().copied().zip(v.iter())));
        write_atomic(&dir.join("optimizer.bin"), &out)?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<(ModelParams, Option<Adam>)> {
    let config: ModelConfig = read_json(&dir.join("config.json"))?;
    let wpath = dir.join("weights.bin");
    let bytes = read_file(&wpath)?;
    let mut cur = Cursor { bytes: &bytes, at: 0, file: &wpath };
    let n = cur.u32()?;
    let tensors = (0..n).map(|_| cur.tensor()).collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_tensors(config, tensors)?;
    let opath = dir.join("optimizer.bin");
    if !opath.exists() {
        return Ok((params, None));
    }
    let bytes = read_file(&opath)?;
    let mut cur = Cursor { bytes: &bytes, at: 0, file: &opath };
    let step = cur.u64()?;
    let schedule = LrSchedule::new(cur.f64()?, cur.u64()?);
    let read_set = |cur: &mut Cursor| -> Result<Vec<Matrix>> {
        let n = cur.u32()?;
        (0..n).map(|_| cur.tensor().map(|t| t.value)).collect()
    };
    let m = read_set(&mut cur)?;
    let v = read_set(&mut cur)?;
    if m.len() != params.tensors().count() || v.len() != m.len() {
        return Err(Error::Data(format!("{}: moment count does not match weights", opath.display())));
    }
    Ok((params, Some(Adam::from_moments(step, schedule, m, v))))
}
