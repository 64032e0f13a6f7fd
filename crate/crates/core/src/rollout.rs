//! Monte-Carlo estimates of the value of a partial sequence: complete it
//! `n` times with the current generator and average the reward of the
//! completed sequences.

use rayon::prelude::*;

use crate::corpus::{TokenSeq, BOS};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{BatchState, GeneratorModel, LstmState};
use crate::metrics::BleuReferences;
use crate::ranker::{ComparisonSet, RankContext, RankerModel, ReferenceSet};
use crate::rng::{self, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutConfig {
    pub n_paths: usize,
    /// Path `p` draws from the stream `(seed, ROLLOUT, p)`.
    pub seed: u64,
}

impl RolloutConfig {
    pub fn new(n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Usage("rollouts need at least one path".into()));
        }
        Ok(RolloutConfig { n_paths, seed })
    }
}

/// Scores complete sequences. Implementations are read-only over their models.
pub trait Reward: Sync {
    fn score(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>>;
}

/// Expected rank against a fixed reference set and human comparison set.
pub struct RankReward<'a> {
    ranker: &'a RankerModel,
    ctx: RankContext,
}

impl<'a> RankReward<'a> {
    pub fn new(ranker: &'a RankerModel, refs: &ReferenceSet, cmp_plus: &ComparisonSet) -> Result<Self> {
        Ok(RankReward { ranker, ctx: RankContext::new(ranker, refs, cmp_plus)? })
    }
}

impl Reward for RankReward<'_> {
    fn score(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        self.ctx.expected_rank_batch(self.ranker, seqs)
    }
}

/// Probability-of-real from the binary discriminator.
pub struct BinaryReward<'a>(pub &'a Discriminator);

impl Reward for BinaryReward<'_> {
    fn score(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        self.0.prob_real(seqs)
    }
}

/// Sentence BLEU against sampled human references; sequences that are empty
/// after stripping special tokens score zero.
pub struct BleuReward(pub BleuReferences);

impl Reward for BleuReward {
    fn score(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        Ok(seqs.iter().map(|s| self.0.score(s).unwrap_or(0.0)).collect())
    }
}

/// Generator state ready to continue a prefix: the state before the last
/// prefix token is fed, and that token (BOS for an empty prefix).
fn prefix_state(gen: &GeneratorModel, prefix: &[usize]) -> Result<(LstmState, usize)> {
    match prefix.split_last() {
        None => Ok((LstmState::zeros(gen.hidden_dim()), BOS)),
        Some((&last, head)) => {
            let mut state = LstmState::zeros(gen.hidden_dim());
            for &tok in std::iter::once(&BOS).chain(head) {
                state = gen.step(tok, &state)?.1;
            }
            Ok((state, last))
        }
    }
}

/// Completes `prefix` to `total_len` along `n_paths` sampled paths.
pub fn complete_paths(
    gen: &GeneratorModel,
    prefix: &[usize],
    total_len: usize,
    cfg: &RolloutConfig,
) -> Result<Vec<TokenSeq>> {
    let (state, last) = prefix_state(gen, prefix)?;
    complete_from_state(gen, prefix, &state, last, total_len, cfg)
}

fn complete_from_state(
    gen: &GeneratorModel,
    prefix: &[usize],
    state: &LstmState,
    last: usize,
    total_len: usize,
    cfg: &RolloutConfig,
) -> Result<Vec<TokenSeq>> {
    if prefix.len() >= total_len {
        return Err(Error::Usage(format!(
            "prefix of length {} is already complete (length {total_len}); score it directly",
            prefix.len()
        )));
    }
    let n = cfg.n_paths;
    let mut rngs: Vec<_> =
        (0..n).map(|p| rng::stream(cfg.seed, &[rng::tag::ROLLOUT, p as u64])).collect();
    let tails = gen.continue_batch(
        BatchState::repeat(state, n),
        vec![last; n],
        total_len - prefix.len(),
        &mut rngs,
    )?;
    Ok(tails
        .into_iter()
        .map(|tail| TokenSeq::from_ids(prefix.iter().copied().chain(tail).collect()))
        .collect())
}

/// Mean reward over `n_paths` completions of `prefix`.
pub fn rollout_value_with(
    gen: &GeneratorModel,
    reward: &dyn Reward,
    prefix: &[usize],
    total_len: usize,
    cfg: &RolloutConfig,
) -> Result<f64> {
    let paths = complete_paths(gen, prefix, total_len, cfg)?;
    let scores = reward.score(&paths)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Expected future ranking reward of `prefix`: completions are scored by
/// their expected rank against `refs` with the human comparison set `cmp_plus`.
pub fn rollout_value(
    gen: &GeneratorModel,
    ranker: &RankerModel,
    prefix: &[usize],
    refs: &ReferenceSet,
    cmp_plus: &ComparisonSet,
    cfg: &RolloutConfig,
) -> Result<f64> {
    let reward = RankReward::new(ranker, refs, cmp_plus)?;
    rollout_value_with(gen, &reward, prefix, ranker.encoder.config().fixed_len, cfg)
}

/// Seed of the rollout stream for prefix length `t` of sequence `b` under
/// a batch-level seed.
pub fn prefix_seed(batch_seed: u64, b: usize, t: usize) -> u64 {
    derive_seed(batch_seed, &[b as u64, t as u64])
}

/// Values `V(s_{1:t})` for `t = 1..=T` of every sequence in `seqs`.
/// Entries for `t < T` are rollout estimates seeded by [`prefix_seed`];
/// the last entry is the reward of the complete sequence. Work is spread over
/// the rayon pool and reduced in index order.
pub fn sequence_values(
    gen: &GeneratorModel,
    reward: &dyn Reward,
    seqs: &[TokenSeq],
    n_paths: usize,
    batch_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() {
        return Ok(Vec::new());
    }
    let len = seqs[0].fixed_len();
    let finals = reward.score(seqs)?;
    // states[b][t]: state after feeding BOS and the first t-1 tokens of sequence b
    let states: Vec<Vec<LstmState>> = seqs
        .par_iter()
        .map(|s| {
            let mut out = Vec::with_capacity(len);
            let mut st = LstmState::zeros(gen.hidden_dim());
            st = gen.step(BOS, &st)?.1;
            out.push(st.clone());
            for &tok in &s.ids()[..len.saturating_sub(1)] {
                st = gen.step(tok, &st)?.1;
                out.push(st.clone());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    // one task per prefix length, covering every sequence in the batch
    let per_t: Vec<Vec<f64>> = (1..len)
        .into_par_iter()
        .map(|t| {
            let mut paths = Vec::with_capacity(seqs.len() * n_paths);
            let mut rngs = Vec::with_capacity(seqs.len() * n_paths);
            let mut init = BatchState::zeros(0, gen.hidden_dim());
            let mut last = Vec::with_capacity(seqs.len() * n_paths);
            for (b, s) in seqs.iter().enumerate() {
                let seed = prefix_seed(batch_seed, b, t);
                let st = &states[b][t - 1];
                for p in 0..n_paths {
                    rngs.push(rng::stream(seed, &[rng::tag::ROLLOUT, p as u64]));
                    init.h.extend_from_slice(&st.h);
                    init.c.extend_from_slice(&st.c);
                    last.push(s.ids()[t - 1]);
                }
                paths.push(&s.ids()[..t]);
            }
            init.batch = last.len();
            let tails = gen.continue_batch(init, last, len - t, &mut rngs)?;
            let completed: Vec<TokenSeq> = tails
                .into_iter()
                .enumerate()
                .map(|(i, tail)| {
                    TokenSeq::from_ids(paths[i / n_paths].iter().copied().chain(tail).collect())
                })
                .collect();
            let scores = reward.score(&completed)?;
            Ok(scores
                .chunks(n_paths)
                .map(|c| c.iter().sum::<f64>() / n_paths as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..seqs.len())
        .map(|b| {
            let mut v: Vec<f64> = per_t.iter().map(|row| row[b]).collect();
            v.push(finals[b]);
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::generator::GeneratorDims;
    use crate::ranker::Polarity;
    use crate::tensor::Activation;

    fn setup() -> (GeneratorModel, RankerModel, ReferenceSet, ComparisonSet) {
        let gen = GeneratorModel::uniform_init(GeneratorDims::new(6, 3, 4), 1, 1.0).unwrap();
        let cfg = EncoderConfig {
            vocab_size: 6,
            embed_dim: 3,
            widths: vec![2],
            filters_per_width: 4,
            activation: Activation::Tanh,
            fixed_len: 4,
        };
        let ranker = RankerModel::uniform_init(cfg, 4.0, 2, 0.5).unwrap();
        let refs = ReferenceSet::new(vec![TokenSeq::from_ids(vec![1, 2, 3, 4])]).unwrap();
        let cmp = ComparisonSet::new(vec![TokenSeq::from_ids(vec![5, 4, 3, 2])], Polarity::Plus).unwrap();
        (gen, ranker, refs, cmp)
    }

    #[test]
    fn full_prefix_is_usage_error() {
        let (gen, ranker, refs, cmp) = setup();
        let cfg = RolloutConfig::new(4, 0).unwrap();
        let err = rollout_value(&gen, &ranker, &[1, 2, 3, 4], &refs, &cmp, &cfg).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(RolloutConfig::new(0, 0).is_err());
    }

    #[test]
    fn value_lies_in_unit_interval_and_is_seeded() {
        let (gen, ranker, refs, cmp) = setup();
        let cfg = RolloutConfig::new(8, 3).unwrap();
        let v = rollout_value(&gen, &ranker, &[2], &refs, &cmp, &cfg).unwrap();
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, rollout_value(&gen, &ranker, &[2], &refs, &cmp, &cfg).unwrap());
    }

    #[test]
    fn peaked_generator_value_is_single_completion_rank() {
        let (mut gen, ranker, refs, cmp) = setup();
        gen.b_out.data_mut()[3] = 1e6;
        for n in [1, 5, 17] {
            let cfg = RolloutConfig::new(n, 9).unwrap();
            let v = rollout_value(&gen, &ranker, &[2], &refs, &cmp, &cfg).unwrap();
            let r = ranker
                .expected_rank(&TokenSeq::from_ids(vec![2, 3, 3, 3]), &refs, &cmp)
                .unwrap();
            assert!((v - r).abs() < 1e-15);
        }
    }

    #[test]
    fn batched_values_match_single_prefix_api() {
        let (gen, ranker, refs, cmp) = setup();
        let seqs = vec![TokenSeq::from_ids(vec![1, 5, 0, 2]), TokenSeq::from_ids(vec![3, 3, 4, 4])];
        let reward = RankReward::new(&ranker, &refs, &cmp).unwrap();
        let values = sequence_values(&gen, &reward, &seqs, 6, 77).unwrap();
        for (b, s) in seqs.iter().enumerate() {
            for t in 1..4 {
                let cfg = RolloutConfig::new(6, prefix_seed(77, b, t)).unwrap();
                let v = rollout_value(&gen, &ranker, &s.ids()[..t], &refs, &cmp, &cfg).unwrap();
                assert!((values[b][t - 1] - v).abs() < 1e-14, "b={b} t={t}");
            }
            let full = ranker.expected_rank(s, &refs, &cmp).unwrap();
            assert_eq!(values[b][3], full);
        }
    }
}
