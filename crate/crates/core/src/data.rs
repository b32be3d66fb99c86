//! Synthetic clustered embeddings and the on-disk formats.
//!
//! Formats:
//!
//! - embeddings: one symbol per line, `label v1 v2 … vd`, whitespace separated;
//! - cluster labels: `label<TAB>cluster` per line, `#` lines are comments;
//! - codebook: header `#kd K=<K> D=<D> N=<N>`, then `label<TAB>c1-c2-…-cD`;
//! - checkpoint: binary, magic `KDC1`, little-endian (layout on [`save_checkpoint`]);
//! - report: `key<TAB>value` per line.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::codec::{render_code, CodeBook, CodeLogits, KdSpec};
use crate::composer::{CodeEmbeddingTables, ComposerParams, ComposerVariant, KdModel, LinearComposerParams, LstmComposerParams};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Pretrained vectors with optional unique labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Matrix,
    pub labels: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    pub fn new(vectors: Matrix, labels: Option<Vec<String>>) -> Result<Self> {
        if !vectors.is_finite() {
            return Err(Error::NonFinite("embedding vectors".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != vectors.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} vectors",
                    labels.len(),
                    vectors.rows()
                )));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
                return Err(Error::InvalidArgument(format!("duplicate label {dup:?}")));
            }
        }
        Ok(EmbeddingMatrix { vectors, labels })
    }

    pub fn n(&self) -> usize {
        self.vectors.rows()
    }

    pub fn d(&self) -> usize {
        self.vectors.cols()
    }

    /// Labels, or `0..N` rendered as strings.
    pub fn labels_or_indices(&self) -> Vec<String> {
        self.labels
            .clone()
            .unwrap_or_else(|| (0..self.n()).map(|i| i.to_string()).collect())
    }
}

/// Parameters of the synthetic clustering set.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_points: usize,
    pub num_clusters: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_points: 10_000,
            num_clusters: 100,
            dim: 10,
            center_scale: 10.0,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.num_clusters > self.num_points {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= clusters <= points, got {} clusters for {} points",
                self.num_clusters, self.num_points
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if !(self.center_scale > 0.0) || !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() || !self.center_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "center scale must be positive and noise nonnegative, got {} and {}",
                self.center_scale, self.noise_sigma
            )));
        }
        Ok(())
    }

    /// `center_scale / noise_sigma` (infinite for noiseless data).
    pub fn separation_ratio(&self) -> f64 {
        self.center_scale / self.noise_sigma
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub embeddings: EmbeddingMatrix,
    /// True cluster of each point.
    pub clusters: Vec<usize>,
    pub centers: Matrix,
    pub separation_ratio: f64,
}

/// Gaussian cluster centers, round-robin membership, Gaussian jitter.
pub fn generate_clusters(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let centers = Matrix::gaussian(spec.num_clusters, spec.dim, spec.center_scale, &mut rng);
    let mut vectors = Matrix::zeros(spec.num_points, spec.dim);
    let clusters: Vec<usize> = (0..spec.num_points).map(|i| i % spec.num_clusters).collect();
    for (i, &c) in clusters.iter().enumerate() {
        for (v, center) in vectors.row_mut(i).iter_mut().zip(centers.row(c)) {
            *v = center + spec.noise_sigma * rng.standard_normal();
        }
    }
    let labels = (0..spec.num_points).map(|i| format!("p{i}")).collect();
    Ok(SyntheticData {
        embeddings: EmbeddingMatrix::new(vectors, Some(labels))?,
        clusters,
        centers,
        separation_ratio: spec.separation_ratio(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses the `label v1 … vd` text format. Blank lines are skipped; CRLF is
/// accepted.
pub fn parse_embeddings_text(text: &str, path: &Path) -> Result<EmbeddingMatrix> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line");
        let mut count = 0;
        // Column 1 is the label; values start at column 2.
        for (col, tok) in tokens.enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                parse_err(path, line_no, format!("column {}: not a number: {tok:?}", col + 2))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("column {}: non-finite value {tok:?}", col + 2)));
            }
            values.push(v);
            count += 1;
        }
        if count == 0 {
            return Err(parse_err(path, line_no, "no vector values after label"));
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(path, line_no, format!("{count} values, expected {w}")));
            }
            _ => {}
        }
        if !seen.insert(label.to_string()) {
            return Err(parse_err(path, line_no, format!("duplicate label {label:?}")));
        }
        labels.push(label.to_string());
    }
    let width = width.ok_or_else(|| parse_err(path, 0, "no embeddings in file"))?;
    let vectors = Matrix::from_vec(labels.len(), width, values)?;
    EmbeddingMatrix::new(vectors, Some(labels))
}

pub fn load_embeddings_text(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    parse_embeddings_text(&read_text(path)?, path)
}

/// Writes every value with the shortest representation that parses back
/// to the same `f64`.
pub fn render_embeddings_text(emb: &EmbeddingMatrix) -> String {
    let labels = emb.labels_or_indices();
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        out.push_str(label);
        for v in emb.vectors.row(i) {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings_text(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<()> {
    write_text(path.as_ref(), &render_embeddings_text(emb))
}

/// Writes `label<TAB>cluster` lines after a comment header.
pub fn save_cluster_labels(path: impl AsRef<Path>, labels: &[String], clusters: &[usize], header: &str) -> Result<()> {
    let mut out = String::new();
    for line in header.lines() {
        writeln!(out, "#{line}").unwrap();
    }
    for (l, c) in labels.iter().zip(clusters) {
        writeln!(out, "{l}\t{c}").unwrap();
    }
    write_text(path.as_ref(), &out)
}

/// Reads `label<TAB>cluster` lines; returns them in file order.
pub fn load_cluster_labels(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, cluster) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, idx + 1, "expected label<TAB>cluster"))?;
        out.push((label.to_string(), cluster.trim().to_string()));
    }
    Ok(out)
}

pub fn render_codebook(book: &CodeBook) -> String {
    let spec = book.spec();
    let mut out = format!("#kd K={} D={} N={}\n", spec.k(), spec.d(), spec.n());
    for i in 0..book.len() {
        let label = book.labels().map_or("", |l| l[i].as_str());
        writeln!(out, "{label}\t{}", render_code(book.code(i))).unwrap();
    }
    out
}

pub fn save_codebook(path: impl AsRef<Path>, book: &CodeBook) -> Result<()> {
    write_text(path.as_ref(), &render_codebook(book))
}

fn parse_header(line: &str) -> Option<(usize, usize, usize)> {
    let rest = line.strip_prefix("#kd ")?;
    let mut k = None;
    let mut d = None;
    let mut n = None;
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=')?;
        let value: usize = value.parse().ok()?;
        match key {
            "K" => k = Some(value),
            "D" => d = Some(value),
            "N" => n = Some(value),
            _ => return None,
        }
    }
    Some((k?, d?, n?))
}

pub fn parse_codebook(text: &str, path: &Path) -> Result<CodeBook> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    let header = lines.next().ok_or_else(|| parse_err(path, 1, "empty codebook file"))?;
    let (k, d, n) = parse_header(header)
        .ok_or_else(|| parse_err(path, 1, format!("bad header {header:?}, expected \"#kd K=<K> D=<D> N=<N>\"")))?;
    let spec = KdSpec::allowing_collisions(k, d, n).map_err(|e| parse_err(path, 1, e.to_string()))?;
    let mut labels = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n * d);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let (label, code) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, line_no, "expected label<TAB>code"))?;
        let parts: Vec<&str> = code.split('-').collect();
        if parts.len() != d {
            return Err(parse_err(path, line_no, format!("code {code:?} has {} components, expected D = {d}", parts.len())));
        }
        for p in parts {
            let c: usize = p
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad code component {p:?}")))?;
            if c >= k {
                return Err(parse_err(path, line_no, format!("code component {c} >= K = {k}")));
            }
            codes.push(c);
        }
        labels.push(label.to_string());
    }
    if labels.len() != n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("header declares N = {n} but body has {} symbols", labels.len()),
        });
    }
    let book = CodeBook::new(spec, codes)?;
    if labels.iter().all(|l| l.is_empty()) {
        return Ok(book);
    }
    if let Some(i) = labels.iter().position(|l| l.is_empty()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("symbol {i} has an empty label while others are labeled"),
        });
    }
    book.with_labels(labels)
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<CodeBook> {
    let path = path.as_ref();
    parse_codebook(&read_text(path)?, path)
}

/// Checkpoint magic bytes.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KDC1";

/// Parameters plus optional code logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: KdModel,
    pub logits: Option<CodeLogits>,
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Layout, all integers `u64` and all reals `f64`, little-endian:
///
/// ```text
/// "KDC1"
/// variant (0 linear, 1 lstm), has_logits (0|1), D, K, d′, d, N (0 without logits)
/// tables W¹ … Wᴰ, each K × d′ row-major
/// linear: H (d′ × d)
/// lstm:   U_f, U_i, U_t, U_m (d′ × d′), b_f, b_i, b_t, b_m (d′), H (d′ × d)
/// logits: N × D × K, when present
/// ```
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let tables = &ckpt.model.tables;
    let composer = &ckpt.model.composer;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u64(&mut buf, match composer.variant() {
        ComposerVariant::Linear => 0,
        ComposerVariant::Lstm => 1,
    });
    put_u64(&mut buf, ckpt.logits.is_some() as u64);
    put_u64(&mut buf, tables.dims() as u64);
    put_u64(&mut buf, tables.k() as u64);
    put_u64(&mut buf, tables.width() as u64);
    put_u64(&mut buf, composer.output_dim() as u64);
    put_u64(&mut buf, ckpt.logits.as_ref().map_or(0, |l| l.spec().n() as u64));
    for t in tables.tables() {
        put_f64s(&mut buf, t.as_slice());
    }
    for block in composer.blocks() {
        put_f64s(&mut buf, block);
    }
    if let Some(l) = &ckpt.logits {
        put_f64s(&mut buf, l.as_slice());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        let out = self.bytes[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 8 * n;
        out
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fmt_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    const HEADER: usize = 4 + 7 * 8;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fmt_err(format!(
            "bad magic {:?}, expected \"KDC1\"",
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes.len() < HEADER {
        return Err(fmt_err(format!(
            "truncated header: expected at least {HEADER} bytes, found {}",
            bytes.len()
        )));
    }
    let mut r = Reader { bytes, pos: 4 };
    let variant = match r.u64() {
        0 => ComposerVariant::Linear,
        1 => ComposerVariant::Lstm,
        v => return Err(fmt_err(format!("unknown composer variant tag {v}"))),
    };
    let has_logits = match r.u64() {
        0 => false,
        1 => true,
        v => return Err(fmt_err(format!("bad logits flag {v}"))),
    };
    let dims: Vec<u64> = (0..5).map(|_| r.u64()).collect();
    let as_usize = |v: u64| usize::try_from(v).map_err(|_| fmt_err(format!("dimension {v} too large")));
    let (d, k, w, out, n) = (
        as_usize(dims[0])?,
        as_usize(dims[1])?,
        as_usize(dims[2])?,
        as_usize(dims[3])?,
        as_usize(dims[4])?,
    );
    if d == 0 || k < 2 || w == 0 || out == 0 || (has_logits && n == 0) {
        return Err(fmt_err(format!("invalid dimensions D={d} K={k} d'={w} d={out} N={n}")));
    }
    let composer_len = match variant {
        ComposerVariant::Linear => w.checked_mul(out),
        ComposerVariant::Lstm => w
            .checked_mul(w)
            .and_then(|ww| ww.checked_add(w))
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(w.checked_mul(out)?)),
    };
    let logits_len = if has_logits { n.checked_mul(d).and_then(|v| v.checked_mul(k)) } else { Some(0) };
    let expected = d
        .checked_mul(k)
        .and_then(|v| v.checked_mul(w))
        .zip(composer_len)
        .and_then(|(a, b)| a.checked_add(b))
        .zip(logits_len)
        .and_then(|(a, b)| a.checked_add(b))
        .and_then(|floats| floats.checked_mul(8))
        .and_then(|b| b.checked_add(HEADER))
        .ok_or_else(|| fmt_err("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(fmt_err(format!(
            "{} file: expected {expected} bytes, found {}",
            if bytes.len() < expected { "truncated" } else { "oversized" },
            bytes.len()
        )));
    }
    let tables = (0..d)
        .map(|_| Matrix::from_vec(k, w, r.f64s(k * w)))
        .collect::<Result<Vec<_>>>()?;
    let tables = CodeEmbeddingTables::new(tables)?;
    let composer = match variant {
        ComposerVariant::Linear => ComposerParams::Linear(LinearComposerParams {
            h: Matrix::from_vec(w, out, r.f64s(w * out))?,
        }),
        ComposerVariant::Lstm => {
            let u_f = Matrix::from_vec(w, w, r.f64s(w * w))?;
            let u_i = Matrix::from_vec(w, w, r.f64s(w * w))?;
            let u_t = Matrix::from_vec(w, w, r.f64s(w * w))?;
            let u_m = Matrix::from_vec(w, w, r.f64s(w * w))?;
            let b_f = r.f64s(w);
            let b_i = r.f64s(w);
            let b_t = r.f64s(w);
            let b_m = r.f64s(w);
            let h = Matrix::from_vec(w, out, r.f64s(w * out))?;
            ComposerParams::Lstm(LstmComposerParams { u_f, u_i, u_t, u_m, b_f, b_i, b_t, b_m, h })
        }
    };
    if !composer.is_finite() {
        return Err(fmt_err("non-finite composer parameters".into()));
    }
    let model = KdModel::new(tables, composer)?;
    let logits = if has_logits {
        let spec = KdSpec::allowing_collisions(k, d, n).map_err(|e| fmt_err(e.to_string()))?;
        Some(CodeLogits::from_vec(spec, r.f64s(n * d * k))?)
    } else {
        None
    };
    Ok(Checkpoint { model, logits })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Ordered `key<TAB>value` report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}\t{v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Report {
        let entries = text
            .lines()
            .filter_map(|l| l.trim_end_matches('\r').split_once('\t'))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Report { entries }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.render())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Report> {
        let path = path.as_ref();
        Ok(Report::parse(&read_text(path)?))
    }
}
