//! Line-oriented corpora, UNK-thresholded vocabularies and fixed-length
//! token sequences.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: usize = 4;

const RESERVED_FORMS: [&str; RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Default fixed sequence length (content tokens, BOS excluded).
pub const DEFAULT_FIXED_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabKind {
    /// Natural-language tokens with PAD/BOS/EOS/UNK in ids 0..4.
    Text,
    /// Integer tokens `"0".."n-1"` mapping to the same ids; used by the
    /// synthetic oracle, whose ids 0..4 double as the reserved ids.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
    kind: VocabKind,
}

impl Vocab {
    /// Builds a vocabulary from whitespace-tokenised lines, keeping tokens
    /// that occur at least `min_count` times. Ids are assigned by descending
    /// frequency, ties broken lexicographically.
    pub fn build<I, S>(lines: I, min_count: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::Usage("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_lines = 0usize;
        for line in lines {
            n_lines += 1;
            for tok in line.as_ref().split_whitespace() {
                *counts.entry(tok.to_owned()).or_default() += 1;
            }
        }
        if n_lines == 0 {
            return Err(Error::Ingestion("empty line stream".into()));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED_FORMS.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<String> = RESERVED_FORMS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Vocab::from_tokens(tokens, min_count, VocabKind::Text))
    }

    /// Integer vocabulary of `size` ids whose surface forms are their decimal ids.
    pub fn synthetic(size: usize) -> Vocab {
        let tokens = (0..size).map(|i| i.to_string()).collect();
        Vocab::from_tokens(tokens, 1, VocabKind::Synthetic)
    }

    fn from_tokens(tokens: Vec<String>, min_count: usize, kind: VocabKind) -> Vocab {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index, min_count, kind }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Maps a line to a sequence of exactly `fixed_len` ids: unknown tokens
    /// become UNK, long lines are truncated, short lines get EOS then PAD.
    pub fn encode(&self, line: &str, fixed_len: usize) -> TokenSeq {
        assert!(fixed_len >= 1, "fixed_len must be at least 1");
        let mut ids: Vec<usize> =
            line.split_whitespace().take(fixed_len).map(|t| self.id(t)).collect();
        let len = ids.len();
        if len < fixed_len {
            ids.push(EOS);
            ids.resize(fixed_len, PAD);
        }
        TokenSeq { ids, len }
    }

    /// Surface form of a sequence. Text vocabularies drop BOS/PAD and stop at EOS.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        self.decode_ids(seq.ids())
    }

    pub fn decode_ids(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if self.kind == VocabKind::Text {
                match id {
                    EOS => break,
                    PAD | BOS => continue,
                    _ => {}
                }
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or(RESERVED_FORMS[UNK]));
        }
        out
    }

    /// Writes the vocabulary file: a header line, then one token per line
    /// starting at id 4.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        match self.kind {
            VocabKind::Text => {
                writeln!(s, "#vocab text min_count={}", self.min_count).unwrap();
                for t in &self.tokens[RESERVED..] {
                    writeln!(s, "{t}").unwrap();
                }
            }
            VocabKind::Synthetic => {
                writeln!(s, "#vocab synthetic size={}", self.tokens.len()).unwrap();
            }
        }
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocab> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::Format(format!("bad vocab header `{header}`"));
        let value = |key: &str| -> Result<usize> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)
        };
        match fields.as_slice() {
            ["#vocab", "text", ..] => {
                let min_count = value("min_count")?;
                let tokens = RESERVED_FORMS
                    .iter()
                    .map(|s| s.to_string())
                    .chain(lines.filter(|l| !l.is_empty()).map(str::to_owned))
                    .collect();
                Ok(Vocab::from_tokens(tokens, min_count, VocabKind::Text))
            }
            ["#vocab", "synthetic", ..] => Ok(Vocab::synthetic(value("size")?)),
            _ => Err(bad()),
        }
    }
}

/// A fixed-length sequence of token ids. `len` counts content tokens before
/// any EOS/PAD tail.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq {
    ids: Vec<usize>,
    len: usize,
}

impl TokenSeq {
    /// A sequence whose every position is content (generated or synthetic data).
    pub fn from_ids(ids: Vec<usize>) -> TokenSeq {
        let len = ids.len();
        TokenSeq { ids, len }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Number of content tokens.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fixed_len(&self) -> usize {
        self.ids.len()
    }

    pub fn content(&self) -> &[usize] {
        &self.ids[..self.len]
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    seqs: Vec<TokenSeq>,
    vocab: Arc<Vocab>,
    fixed_len: usize,
}

impl Corpus {
    pub fn new(vocab: Arc<Vocab>, seqs: Vec<TokenSeq>, fixed_len: usize) -> Result<Corpus> {
        for (i, s) in seqs.iter().enumerate() {
            if s.fixed_len() != fixed_len {
                return Err(Error::Dimension(format!(
                    "sequence {i} has length {} instead of {fixed_len}",
                    s.fixed_len()
                )));
            }
            if let Some(&bad) = s.ids().iter().find(|&&id| id >= vocab.len()) {
                return Err(Error::Usage(format!(
                    "sequence {i} holds id {bad} outside a vocabulary of {}",
                    vocab.len()
                )));
            }
        }
        Ok(Corpus { seqs, vocab, fixed_len })
    }

    pub fn from_lines<I, S>(vocab: Arc<Vocab>, lines: I, fixed_len: usize) -> Corpus
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let seqs = lines.into_iter().map(|l| vocab.encode(l.as_ref(), fixed_len)).collect();
        Corpus { seqs, vocab, fixed_len }
    }

    pub fn load(path: impl AsRef<Path>, vocab: Arc<Vocab>, fixed_len: usize) -> Result<Corpus> {
        let lines = read_lines(path)?;
        Ok(Corpus::from_lines(vocab, lines, fixed_len))
    }

    /// One decoded sentence per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        for seq in &self.seqs {
            s.push_str(&self.vocab.decode(seq));
            s.push('\n');
        }
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn seqs(&self) -> &[TokenSeq] {
        &self.seqs
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn fixed_len(&self) -> usize {
        self.fixed_len
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    /// Deterministic shuffled split into `(train, validation)`.
    pub fn split(&self, seed: u64, train_fraction: f64) -> Result<(Corpus, Corpus)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Split(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        let n = self.seqs.len();
        if n < 2 {
            return Err(Error::Split(format!("cannot split a corpus of {n} sequence(s)")));
        }
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[rng::tag::SPLIT]));
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.seqs[i].clone()).collect();
        Ok((
            Corpus { seqs: pick(&order[..n_train]), vocab: self.vocab.clone(), fixed_len: self.fixed_len },
            Corpus { seqs: pick(&order[n_train..]), vocab: self.vocab.clone(), fixed_len: self.fixed_len },
        ))
    }
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(text.lines().map(str::to_owned).collect())
}
