//! Sentence-level BLEU with clipped n-gram precision, epsilon smoothing of
//! zero precisions and a brevity penalty against the closest reference.

use std::collections::HashMap;

use crate::corpus::{TokenSeq, BOS, EOS, PAD};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuSpec {
    /// Highest n-gram order, 1..=4.
    pub max_n: usize,
    /// Value substituted for a zero precision.
    pub epsilon: f64,
    /// Geometric mean over orders `1..=max_n` when true; order-`max_n`
    /// precision alone (times brevity penalty) when false.
    pub cumulative: bool,
    /// Drop BOS/PAD and cut at the first EOS before scoring. Turn off for
    /// synthetic integer vocabularies where those ids are ordinary tokens.
    pub strip_special: bool,
}

impl BleuSpec {
    pub fn new(max_n: usize) -> Result<Self> {
        let s = BleuSpec { max_n, epsilon: DEFAULT_EPSILON, cumulative: true, strip_special: true };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.max_n) {
            return Err(Error::Usage(format!("BLEU order {} outside 1..=4", self.max_n)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Usage(format!("BLEU epsilon {} is negative", self.epsilon)));
        }
        Ok(())
    }

    fn tokens(&self, seq: &TokenSeq) -> Vec<usize> {
        if !self.strip_special {
            return seq.ids().to_vec();
        }
        seq.ids()
            .iter()
            .copied()
            .take_while(|&t| t != EOS)
            .filter(|&t| t != PAD && t != BOS)
            .collect()
    }
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipping tables and lengths for a reference set, built once.
#[derive(Clone, Debug)]
pub struct BleuReferences {
    spec: BleuSpec,
    /// `max_counts[n-1]`: for each n-gram, its largest count in any one reference.
    max_counts: Vec<HashMap<Vec<usize>, usize>>,
    lengths: Vec<usize>,
}

impl BleuReferences {
    pub fn new(references: &[TokenSeq], spec: BleuSpec) -> Result<Self> {
        spec.validate()?;
        if references.is_empty() {
            return Err(Error::Usage("BLEU needs at least one reference".into()));
        }
        let mut max_counts: Vec<HashMap<Vec<usize>, usize>> = vec![HashMap::new(); spec.max_n];
        let mut lengths = Vec::with_capacity(references.len());
        for r in references {
            let toks = spec.tokens(r);
            lengths.push(toks.len());
            for n in 1..=spec.max_n {
                for (g, c) in ngram_counts(&toks, n) {
                    let e = max_counts[n - 1].entry(g.to_vec()).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        lengths.sort_unstable();
        lengths.dedup();
        Ok(BleuReferences { spec, max_counts, lengths })
    }

    pub fn spec(&self) -> &BleuSpec {
        &self.spec
    }

    /// Clipped matches and candidate n-gram totals for each order.
    pub fn clipped_counts(&self, candidate: &TokenSeq) -> Vec<(usize, usize)> {
        let toks = self.spec.tokens(candidate);
        (1..=self.spec.max_n)
            .map(|n| {
                let counts = ngram_counts(&toks, n);
                let total: usize = counts.values().sum();
                let matched = counts
                    .iter()
                    .map(|(g, &c)| c.min(self.max_counts[n - 1].get(*g).copied().unwrap_or(0)))
                    .sum();
                (matched, total)
            })
            .collect()
    }

    /// Reference length closest to `c`; ties go to the shorter reference.
    fn closest_len(&self, c: usize) -> usize {
        *self
            .lengths
            .iter()
            .min_by_key(|&&r| (r.abs_diff(c), r))
            .expect("nonempty references")
    }

    pub fn score(&self, candidate: &TokenSeq) -> Result<f64> {
        let c = self.spec.tokens(candidate).len();
        if c == 0 {
            return Err(Error::Usage("candidate is empty after stripping special tokens".into()));
        }
        let precision = |(m, t): (usize, usize)| {
            if m == 0 || t == 0 {
                self.spec.epsilon
            } else {
                m as f64 / t as f64
            }
        };
        let counts = self.clipped_counts(candidate);
        let r = self.closest_len(c);
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        let score = if self.spec.cumulative {
            let ps: Vec<f64> = counts.iter().map(|&mc| precision(mc)).collect();
            let logs: f64 = ps.iter().map(|p| p.ln()).sum();
            // the geometric mean never exceeds the largest term; the cap removes rounding above it
            let cap = ps.iter().copied().fold(0.0, f64::max);
            bp * (logs / self.spec.max_n as f64).exp().min(cap)
        } else {
            bp * precision(counts[self.spec.max_n - 1])
        };
        Ok(score.clamp(0.0, 1.0))
    }
}

/// BLEU of one candidate against a reference list.
pub fn bleu(candidate: &TokenSeq, references: &[TokenSeq], spec: &BleuSpec) -> Result<f64> {
    BleuReferences::new(references, *spec)?.score(candidate)
}

/// Mean sentence BLEU over `candidates`.
pub fn corpus_bleu(candidates: &[TokenSeq], references: &[TokenSeq], spec: &BleuSpec) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Usage("no candidates to score".into()));
    }
    let refs = BleuReferences::new(references, *spec)?;
    let mut total = 0.0;
    for c in candidates {
        total += refs.score(c)?;
    }
    Ok(total / candidates.len() as f64)
}
