//! Caption filtering, the deterministic toy text encoder, `.tpaemb` feature
//! files and mismatched-caption permutations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use tpa3d_autodiff::{Array, Tensor};

use crate::error::{Error, Result};

pub const DEFAULT_PHRASES: [&str; 6] = [
    "in the image",
    "This is a 3D model of",
    "This is a 3D rendering of",
    "in the black background",
    "with a black background",
    "the background is black",
];

/// Stands in for an empty caption so the word sequence always has a valid row.
pub const EMPTY_TOKEN: &str = "<empty>";

pub const TPAEMB_MAGIC: &[u8; 8] = b"TPAEMB01";

fn default_phrases() -> Vec<String> {
    DEFAULT_PHRASES.iter().map(|s| s.to_string()).collect()
}

fn default_vocabulary() -> Vec<String> {
    crate::dataset::toy_vocabulary()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub sentence_dim: usize,
    pub word_dim: usize,
    pub max_tokens: usize,
    /// Adds a sinusoidal position code to each word row.
    pub positional: bool,
    pub position_scale: f64,
    pub phrases: Vec<String>,
    /// Tokens outside this list still encode but raise a warning.
    pub vocabulary: Vec<String>,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            sentence_dim: 32,
            word_dim: 32,
            max_tokens: 16,
            positional: true,
            position_scale: 0.5,
            phrases: default_phrases(),
            vocabulary: default_vocabulary(),
        }
    }
}

impl TextConfig {
    pub fn paper_scale() -> Self {
        Self { sentence_dim: 512, word_dim: 512, max_tokens: 77, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentence_dim == 0 || self.word_dim == 0 || self.max_tokens == 0 {
            return Err(Error::Config("text dims and max_tokens must be positive".into()));
        }
        Ok(())
    }
}

fn phrase_regex(phrase: &str) -> Option<Regex> {
    let words: Vec<String> = phrase.split_whitespace().map(regex::escape).collect();
    if words.is_empty() {
        return None;
    }
    Regex::new(&format!(r"(?i)\b{}\b", words.join(r"\s+"))).ok()
}

fn tidy(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '.' | '-'))
        .to_string()
}

/// Removes every configured phrase (case-insensitive, whole words) and
/// collapses whitespace. Repeats until nothing changes, so it is idempotent.
pub fn filter_caption(raw: &str, phrases: &[String]) -> String {
    let regexes: Vec<Regex> = phrases.iter().filter_map(|p| phrase_regex(p)).collect();
    let mut current = tidy(raw);
    loop {
        let mut next = current.clone();
        for re in &regexes {
            next = re.replace_all(&next, " ").into_owned();
        }
        let next = tidy(&next);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Caption {
    pub raw: String,
    pub filtered: String,
    pub tokens: Vec<String>,
}

impl Caption {
    pub fn new(raw: &str, phrases: &[String]) -> Self {
        let filtered = filter_caption(raw, phrases);
        let tokens = tokenize(&filtered);
        Self { raw: raw.to_string(), filtered, tokens }
    }
}

/// Sentence vector, padded word matrix and validity mask for one caption.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    pub sentence: Vec<f64>,
    /// `[max_tokens x word_dim]`; rows with a false mask are exactly zero.
    pub words: Array,
    pub mask: Vec<bool>,
}

impl TextFeatures {
    pub fn sentence_dim(&self) -> usize {
        self.sentence.len()
    }

    pub fn word_dim(&self) -> usize {
        self.words.shape()[1]
    }

    pub fn max_tokens(&self) -> usize {
        self.mask.len()
    }

    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sentence vector as a `[1 x D_s]` row.
    pub fn sentence_tensor(&self) -> Tensor {
        Tensor::constant(Array::new([1, self.sentence.len()], self.sentence.clone()).expect("nonempty"))
    }

    pub fn words_tensor(&self) -> Tensor {
        Tensor::constant(self.words.clone())
    }

    pub fn check_dims(&self, config: &TextConfig) -> Result<()> {
        if self.sentence_dim() != config.sentence_dim
            || self.word_dim() != config.word_dim
            || self.max_tokens() != config.max_tokens
        {
            return Err(Error::Config(format!(
                "text features are {}/{}/{} but the config expects {}/{}/{}",
                self.sentence_dim(),
                self.word_dim(),
                self.max_tokens(),
                config.sentence_dim,
                config.word_dim,
                config.max_tokens
            )));
        }
        Ok(())
    }

    /// Row-wise linear blend; the mask is the union so no blended row is dropped.
    /// `t = 0` and `t = 1` return exact copies of the endpoints.
    pub fn lerp(a: &TextFeatures, b: &TextFeatures, t: f64) -> Result<TextFeatures> {
        if a.words.shape() != b.words.shape() || a.sentence.len() != b.sentence.len() {
            return Err(Error::Usage("cannot blend text features of different shapes".into()));
        }
        if t == 0.0 {
            return Ok(a.clone());
        }
        if t == 1.0 {
            return Ok(b.clone());
        }
        let mix = |x: f64, y: f64| x + t * (y - x);
        let sentence = a.sentence.iter().zip(&b.sentence).map(|(&x, &y)| mix(x, y)).collect();
        let words = a.words.zip_map(&b.words, mix)?;
        let mask = a.mask.iter().zip(&b.mask).map(|(&x, &y)| x || y).collect();
        Ok(TextFeatures { sentence, words, mask })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TextWarning {
    Truncated { tokens: usize, kept: usize },
    UnknownToken(String),
}

impl std::fmt::Display for TextWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Truncated { tokens, kept } => write!(f, "caption has {tokens} tokens; only the first {kept} are used"),
            Self::UnknownToken(t) => write!(f, "token `{t}` is outside the vocabulary; using its hash embedding"),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Fixed random unit vector for a token; the same token always yields the same
/// vector, and vectors of different lengths share a seed stream.
pub fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
    unit((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
}

/// Sinusoidal code of a token position.
pub fn position_code(position: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let freq = 1.0 / 10000f64.powf((2 * (c / 2)) as f64 / dim as f64);
            let angle = position as f64 * freq;
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Hash-embedding text encoder.
#[derive(Clone, Debug)]
pub struct ToyTextEncoder {
    config: TextConfig,
}

impl ToyTextEncoder {
    pub fn new(config: TextConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &TextConfig {
        &self.config
    }

    pub fn caption(&self, raw: &str) -> Caption {
        Caption::new(raw, &self.config.phrases)
    }

    pub fn encode_str(&self, raw: &str) -> (TextFeatures, Vec<TextWarning>) {
        self.encode(&self.caption(raw))
    }

    pub fn encode(&self, caption: &Caption) -> (TextFeatures, Vec<TextWarning>) {
        let cfg = &self.config;
        let mut warnings = Vec::new();
        let mut tokens: Vec<&str> = caption.tokens.iter().map(String::as_str).collect();
        if tokens.is_empty() {
            tokens.push(EMPTY_TOKEN);
        }
        for t in &tokens {
            if *t != EMPTY_TOKEN && !cfg.vocabulary.is_empty() && !cfg.vocabulary.iter().any(|v| v == t) {
                log::warn!("token `{t}` is outside the toy vocabulary");
                warnings.push(TextWarning::UnknownToken(t.to_string()));
            }
        }
        if tokens.len() > cfg.max_tokens {
            log::warn!("caption truncated from {} to {} tokens", tokens.len(), cfg.max_tokens);
            warnings.push(TextWarning::Truncated { tokens: tokens.len(), kept: cfg.max_tokens });
            tokens.truncate(cfg.max_tokens);
        }

        let mut words = Array::zeros([cfg.max_tokens, cfg.word_dim]);
        let mut mask = vec![false; cfg.max_tokens];
        for (row, token) in tokens.iter().enumerate() {
            let mut v = token_vector(token, cfg.word_dim);
            if cfg.positional {
                for (x, p) in v.iter_mut().zip(position_code(row, cfg.word_dim)) {
                    *x += cfg.position_scale * p;
                }
            }
            words.data_mut()[row * cfg.word_dim..(row + 1) * cfg.word_dim].copy_from_slice(&v);
            mask[row] = true;
        }

        // Summed in sorted order so the sentence vector ignores word order exactly.
        let mut sorted = tokens.clone();
        sorted.sort_unstable();
        let mut acc = vec![0.0; cfg.sentence_dim];
        for token in sorted {
            for (a, x) in acc.iter_mut().zip(token_vector(token, cfg.sentence_dim)) {
                *a += x;
            }
        }
        let sentence = unit(acc);
        (TextFeatures { sentence, words, mask }, warnings)
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

/// Writes features as float32 in the `.tpaemb` layout.
pub fn write_embeddings(mut w: impl Write, entries: &[(String, TextFeatures)]) -> Result<()> {
    let (ds, dw, l) = match entries.first() {
        Some((_, f)) => (f.sentence_dim(), f.word_dim(), f.max_tokens()),
        None => (0, 0, 0),
    };
    w.write_all(TPAEMB_MAGIC)?;
    write_u32(&mut w, entries.len())?;
    write_u32(&mut w, ds)?;
    write_u32(&mut w, dw)?;
    write_u32(&mut w, l)?;
    for (caption, f) in entries {
        if f.sentence_dim() != ds || f.word_dim() != dw || f.max_tokens() != l {
            return Err(Error::Usage("all entries of an embedding file must share dims".into()));
        }
        write_u32(&mut w, caption.len())?;
        w.write_all(caption.as_bytes())?;
        for &x in f.sentence.iter().chain(f.words.data()) {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.write_all(&f.mask.iter().map(|&m| m as u8).collect::<Vec<_>>())?;
    }
    Ok(())
}

pub fn save_embeddings(path: impl AsRef<Path>, entries: &[(String, TextFeatures)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("embedding file is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.bytes(4 * n)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }
}

/// Parses a `.tpaemb` stream in file order. Sentence vectors whose norm is
/// off by more than 1e-6 are re-normalized.
pub fn read_embeddings(r: impl Read) -> Result<Vec<(String, TextFeatures)>> {
    let mut cur = Cursor { inner: r };
    if cur.bytes(8)? != TPAEMB_MAGIC {
        return Err(Error::Format("bad embedding file magic".into()));
    }
    let count = cur.u32()?;
    let (ds, dw, l) = (cur.u32()?, cur.u32()?, cur.u32()?);
    if count > 0 && (ds == 0 || dw == 0 || l == 0) {
        return Err(Error::Format("embedding header has a zero dimension".into()));
    }
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = cur.u32()?;
        let caption = String::from_utf8(cur.bytes(n)?)
            .map_err(|_| Error::Format("caption is not valid UTF-8".into()))?;
        let mut sentence = cur.f32s(ds)?;
        let norm = sentence.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 && norm > 0.0 {
            sentence = unit(sentence);
        }
        let words = Array::new([l, dw], cur.f32s(l * dw)?)?;
        let mask: Vec<bool> = cur.bytes(l)?.into_iter().map(|b| b != 0).collect();
        out.push((caption, TextFeatures { sentence, words, mask }));
    }
    Ok(out)
}

/// Loads an embedding file and checks its dims against `config`.
pub fn load_embeddings(path: impl AsRef<Path>, config: &TextConfig) -> Result<BTreeMap<String, TextFeatures>> {
    let entries = read_embeddings(BufReader::new(File::open(path)?))?;
    let mut map = BTreeMap::new();
    for (caption, f) in entries {
        f.check_dims(config)?;
        map.insert(caption, f);
    }
    Ok(map)
}

/// A seeded permutation `p` with `keys[p[i]] != keys[i]` for every `i`.
/// With distinct keys this is a derangement.
pub fn mismatch_permutation<K: PartialEq>(keys: &[K], seed: u64) -> Result<Vec<usize>> {
    let n = keys.len();
    if n < 2 {
        return Err(Error::Usage("a mismatched batch needs at least two elements".into()));
    }
    let max_mult = keys.iter().map(|k| keys.iter().filter(|o| *o == k).count()).max().unwrap_or(0);
    if 2 * max_mult > n {
        return Err(Error::Usage("more than half of the batch shares one caption; no mismatch exists".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &j)| keys[i] != keys[j]) {
            return Ok(perm);
        }
    }
}

/// Seeded derangement of the batch.
pub fn mismatch_features(batch: &[TextFeatures], seed: u64) -> Result<Vec<TextFeatures>> {
    let ids: Vec<usize> = (0..batch.len()).collect();
    let perm = mismatch_permutation(&ids, seed)?;
    Ok(perm.iter().map(|&j| batch[j].clone()).collect())
}
