//! Independent oracles for rank scores, rollouts, the policy gradient and
//! BLEU, shared by the focused suites and the acceptance run.

use std::collections::HashMap;

use rand::Rng;
use rankgan::adversarial::pg_gradient;
use rankgan::corpus::TokenSeq;
use rankgan::encoder::EncoderConfig;
use rankgan::generator::{GeneratorDims, GeneratorModel};
use rankgan::metrics::{bleu, BleuSpec};
use rankgan::ranker::{rank_score_from_relevances, ComparisonSet, Polarity, RankerModel, ReferenceSet};
use rankgan::rng::{derive_seed, stream};
use rankgan::rollout::{rollout_value_with, sequence_values, RankReward, Reward, RolloutConfig};
use rankgan::tensor::{Activation, Tensor};

/// `hi` exceeds `lo`, or both are the float 1.0: past roughly `1 - 1e-16`
/// a score is no longer representable below one.
pub fn strictly_above(hi: f64, lo: f64) -> bool {
    hi > lo || (hi == 1.0 && lo == 1.0)
}

/// Failures of each rank-score law over `cases` random configurations:
/// (normalisation, uniformity at vanishing temperature, monotonicity,
/// temperature sharpening).
pub fn rank_law_failures(cases: usize, seed: u64) -> [usize; 4] {
    let mut rng = stream(seed, &[]);
    let mut fails = [0; 4];
    let score_of = |a: &[f64], i: usize, g: f64| {
        let others: Vec<f64> = a.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| *x).collect();
        rank_score_from_relevances(a[i], &others, g)
    };
    let mut done_sharpening = 0;
    for _ in 0..cases {
        let n = rng.random_range(2..12);
        let alphas: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let gamma = 10f64.powf(rng.random_range(-2.0..1.5));

        let total: f64 = (0..n).map(|i| score_of(&alphas, i, gamma)).sum();
        if (total - 1.0).abs() > 1e-9 {
            fails[0] += 1;
        }

        let u = 1.0 / n as f64;
        if (0..n).any(|i| (score_of(&alphas, i, 1e-8) - u).abs() >= 1e-6) {
            fails[1] += 1;
        }

        let bump = rng.random_range(1e-3..1.0);
        let lo = rank_score_from_relevances(alphas[0], &alphas[1..], gamma);
        let hi = rank_score_from_relevances(alphas[0] + bump, &alphas[1..], gamma);
        if !strictly_above(hi, lo) {
            fails[2] += 1;
        }

        let best = (0..n).max_by(|&a, &b| alphas[a].total_cmp(&alphas[b])).unwrap();
        let second = alphas.iter().enumerate().filter(|(j, _)| *j != best).map(|(_, x)| *x).fold(f64::MIN, f64::max);
        if alphas[best] - second > 1e-3 {
            done_sharpening += 1;
            let factor = rng.random_range(1.05..4.0);
            if !strictly_above(score_of(&alphas, best, gamma * factor), score_of(&alphas, best, gamma)) {
                fails[3] += 1;
            }
        }
    }
    assert!(done_sharpening * 2 > cases, "too few configurations with a unique best member");
    fails
}

pub fn toy_ranker(vocab: usize, len: usize, seed: u64) -> RankerModel {
    let cfg = EncoderConfig {
        vocab_size: vocab,
        embed_dim: 3,
        widths: vec![1, 2],
        filters_per_width: 3,
        activation: Activation::Tanh,
        fixed_len: len,
    };
    RankerModel::uniform_init(cfg, 4.0, seed, 1.0).unwrap()
}

/// Ranking reward over a binary vocabulary with fixed reference and
/// comparison sets.
pub struct ToyReward {
    pub ranker: RankerModel,
    pub refs: ReferenceSet,
    pub cmp: ComparisonSet,
}

impl ToyReward {
    pub fn new(len: usize, seed: u64) -> Self {
        let pat = |f: &dyn Fn(usize) -> usize| TokenSeq::from_ids((0..len).map(f).collect());
        ToyReward {
            ranker: toy_ranker(2, len, seed),
            refs: ReferenceSet::new(vec![pat(&|i| i % 2), pat(&|_| 1)]).unwrap(),
            cmp: ComparisonSet::new(vec![pat(&|_| 0)], Polarity::Plus).unwrap(),
        }
    }

    pub fn reward(&self) -> RankReward<'_> {
        RankReward::new(&self.ranker, &self.refs, &self.cmp).unwrap()
    }
}

pub fn all_sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out.into_iter().flat_map(|p| (0..vocab).map(move |v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Exact mean and variance of the reward of a completion of `prefix`, from
/// sequence likelihoods summed over every completion.
pub fn exact_completion_moments(gen: &GeneratorModel, reward: &dyn Reward, prefix: &[usize], len: usize) -> (f64, f64) {
    let tails = all_sequences(gen.vocab_size(), len - prefix.len());
    let seqs: Vec<TokenSeq> = tails.iter().map(|t| TokenSeq::from_ids([prefix, t].concat())).collect();
    let w: Vec<f64> = gen.nll_batch(&seqs).unwrap().iter().map(|n| (-n).exp()).collect();
    let z: f64 = w.iter().sum();
    let r = reward.score(&seqs).unwrap();
    let mean = w.iter().zip(&r).map(|(w, r)| w * r).sum::<f64>() / z;
    let var = w.iter().zip(&r).map(|(w, r)| w * (r - mean).powi(2)).sum::<f64>() / z;
    (mean, var)
}

pub fn toy_generator(vocab: usize, seed: u64) -> GeneratorModel {
    GeneratorModel::uniform_init(GeneratorDims::new(vocab, 3, 3), seed, 1.5).unwrap()
}

/// Largest `|estimate - exact| / σ` over every proper prefix of a binary
/// length-3 sequence, with `n` rollouts per prefix.
pub fn rollout_enumeration_max_z(n: usize, seed: u64) -> f64 {
    let gen = toy_generator(2, seed);
    let toy = ToyReward::new(3, seed ^ 1);
    let reward = toy.reward();
    let mut prefixes = vec![Vec::new()];
    prefixes.extend(all_sequences(2, 1));
    prefixes.extend(all_sequences(2, 2));
    let mut worst: f64 = 0.0;
    for (k, p) in prefixes.iter().enumerate() {
        let (mean, var) = exact_completion_moments(&gen, &reward, p, 3);
        let cfg = RolloutConfig::new(n, derive_seed(seed, &[k as u64])).unwrap();
        let est = rollout_value_with(&gen, &reward, p, 3, &cfg).unwrap();
        let sigma = (var / n as f64).sqrt();
        assert!(sigma > 0.0, "degenerate reward spread for prefix {p:?}");
        worst = worst.max((est - mean).abs() / sigma);
    }
    worst
}

/// Least-squares slope of log variance against log `n` for the rollout
/// value of a one-token prefix, over `trials` seeds per `n`.
pub fn rollout_variance_slope(ns: &[usize], trials: usize, seed: u64) -> f64 {
    let gen = toy_generator(2, seed);
    let toy = ToyReward::new(3, seed ^ 1);
    let reward = toy.reward();
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = (0..trials)
                .map(|i| {
                    let cfg = RolloutConfig::new(n, derive_seed(seed, &[n as u64, i as u64])).unwrap();
                    rollout_value_with(&gen, &reward, &[1], 3, &cfg).unwrap()
                })
                .collect();
            let m = vals.iter().sum::<f64>() / trials as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
            ((n as f64).ln(), v.ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

pub struct PgCheck {
    /// Largest `|mean - exact| / standard error` over coordinates whose
    /// exact value or spread is nonzero.
    pub max_z: f64,
    pub coords: usize,
}

/// Compares the mean of the sampled policy-gradient estimate over
/// `episodes` with the gradient enumerated over every sequence of the
/// binary length-2 toy, under a frozen ranker.
pub fn pg_unbiasedness(episodes: usize, rollouts: usize, seed: u64) -> PgCheck {
    const LEN: usize = 2;
    let gen = toy_generator(2, seed);
    let toy = ToyReward::new(LEN, seed ^ 1);
    let reward = toy.reward();
    let seqs: Vec<TokenSeq> = all_sequences(2, LEN).into_iter().map(TokenSeq::from_ids).collect();

    // Exact: Σ_Y P(Y) Σ_t Q(Y_{1:t}) ∇(-log π(y_t)), where pg_gradient scales by 1/B.
    let probs: Vec<f64> = gen.nll_batch(&seqs).unwrap().iter().map(|n| (-n).exp()).collect();
    let q: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| {
            (1..=LEN)
                .map(|t| exact_completion_moments(&gen, &reward, &s.ids()[..t], LEN).0)
                .collect()
        })
        .collect();
    let b = seqs.len() as f64;
    let adv: Vec<Vec<f64>> = q.iter().zip(&probs).map(|(qs, p)| qs.iter().map(|x| b * p * x).collect()).collect();
    let exact = flatten(&pg_gradient(&gen, &seqs, &adv).unwrap());

    // Per-step score gradients of each distinct sequence: the estimate of
    // one episode is linear in its rollout values.
    let unit: HashMap<Vec<usize>, Vec<Vec<f64>>> = seqs
        .iter()
        .map(|s| {
            let per_t = (0..LEN)
                .map(|t| {
                    let a: Vec<f64> = (0..LEN).map(|k| if k == t { 1.0 } else { 0.0 }).collect();
                    flatten(&pg_gradient(&gen, std::slice::from_ref(s), &[a]).unwrap())
                })
                .collect();
            (s.ids().to_vec(), per_t)
        })
        .collect();

    let sampled = rankgan::oracle_eval::sample_parallel(&gen, episodes, LEN, derive_seed(seed, &[1])).unwrap();
    let values = sequence_values(&gen, &reward, &sampled, rollouts, derive_seed(seed, &[2])).unwrap();
    let dim = exact.len();
    let (mut sum, mut sq) = (vec![0.0; dim], vec![0.0; dim]);
    for (s, v) in sampled.iter().zip(&values) {
        let g = &unit[s.ids()];
        for c in 0..dim {
            let e: f64 = (0..LEN).map(|t| v[t] * g[t][c]).sum();
            sum[c] += e;
            sq[c] += e * e;
        }
    }
    let n = episodes as f64;
    let mut max_z: f64 = 0.0;
    let mut coords = 0;
    for c in 0..dim {
        let mean = sum[c] / n;
        let var = (sq[c] / n - mean * mean) * n / (n - 1.0);
        let se = (var.max(0.0) / n).sqrt();
        if se < 1e-15 {
            assert!((mean - exact[c]).abs() < 1e-12, "coordinate {c} has no spread but differs");
            continue;
        }
        coords += 1;
        max_z = max_z.max((mean - exact[c]).abs() / se);
    }
    PgCheck { max_z, coords }
}

/// One hand-counted BLEU case over word tokens.
pub struct BleuCase {
    pub candidate: &'static str,
    pub references: &'static [&'static str],
    pub max_n: usize,
    pub cumulative: bool,
    pub expected: f64,
}

pub fn bleu_cases() -> Vec<BleuCase> {
    let eps: f64 = 1e-9;
    vec![
        // p1 = 3/4, p2 = 2/3
        BleuCase { candidate: "a b c d", references: &["a b c e"], max_n: 2, cumulative: true, expected: 0.5f64.sqrt() },
        // clipped unigram count 1 of 4; longer than the reference
        BleuCase { candidate: "the the the the", references: &["the cat"], max_n: 1, cumulative: true, expected: 0.25 },
        // brevity penalty exp(1 - 4/2)
        BleuCase { candidate: "a b", references: &["a b c d"], max_n: 1, cumulative: true, expected: (-1.0f64).exp() },
        BleuCase { candidate: "a b c d", references: &["a b c d"], max_n: 4, cumulative: true, expected: 1.0 },
        // clipping against the per-reference maximum: a ≤ 2, b ≤ 1
        BleuCase { candidate: "a a b b", references: &["a b", "a a c"], max_n: 1, cumulative: true, expected: 0.75 },
        // p1 = 3/4, p2 = 2/3 (bigrams "a a" and "a b" matched)
        BleuCase { candidate: "a a b b", references: &["a b", "a a c"], max_n: 2, cumulative: true, expected: 0.5f64.sqrt() },
        // all precisions 1, brevity exp(1 - 5/3)
        BleuCase { candidate: "a b c", references: &["a b c d e"], max_n: 3, cumulative: true, expected: (-2.0f64 / 3.0).exp() },
        // order-2 precision alone
        BleuCase { candidate: "a b c d", references: &["a b c e"], max_n: 2, cumulative: false, expected: 2.0 / 3.0 },
        // zero bigram precision replaced by epsilon
        BleuCase { candidate: "b a", references: &["a b"], max_n: 2, cumulative: true, expected: eps.sqrt() },
        // p1 = 3/5, p2 = 2/4, p3 = 1/3
        BleuCase { candidate: "a b a b a", references: &["a b a c"], max_n: 3, cumulative: true, expected: 0.1f64.cbrt() },
        // closest-length tie goes to the shorter reference, so no penalty; p1 = 2/3, p2 = 1/2
        BleuCase { candidate: "a b e", references: &["a b", "a b c d"], max_n: 2, cumulative: true, expected: (1.0f64 / 3.0).sqrt() },
    ]
}

/// Maps words to ids above the reserved range.
pub fn words(text: &str, table: &mut HashMap<String, usize>) -> TokenSeq {
    TokenSeq::from_ids(
        text.split_whitespace()
            .map(|w| {
                let next = table.len() + rankgan::corpus::RESERVED;
                *table.entry(w.to_string()).or_insert(next)
            })
            .collect(),
    )
}

/// Largest absolute error over the hand-counted table.
pub fn bleu_table_error() -> f64 {
    let mut table = HashMap::new();
    bleu_cases()
        .iter()
        .map(|c| {
            let cand = words(c.candidate, &mut table);
            let refs: Vec<TokenSeq> = c.references.iter().map(|r| words(r, &mut table)).collect();
            let spec = BleuSpec { cumulative: c.cumulative, ..BleuSpec::new(c.max_n).unwrap() };
            (bleu(&cand, &refs, &spec).unwrap() - c.expected).abs()
        })
        .fold(0.0, f64::max)
}

/// (identical score, disjoint score, epsilon) at BLEU-4.
pub fn bleu_extremes() -> (f64, f64, f64) {
    let mut table = HashMap::new();
    let spec = BleuSpec::new(4).unwrap();
    let r = words("the cat sat on the mat", &mut table);
    let d = words("dogs run far away from home", &mut table);
    (bleu(&r, std::slice::from_ref(&r), &spec).unwrap(), bleu(&d, &[r], &spec).unwrap(), spec.epsilon)
}
