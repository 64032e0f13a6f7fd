use rankgan::corpus::BOS;
use rankgan::generator::{GeneratorDims, GeneratorModel, LstmState};
use rankgan::oracle_eval::{oracle_nll, Oracle, DEFAULT_ORACLE_STD};

const V: usize = 50;
const T: usize = 10;

fn oracle() -> Oracle {
    Oracle::new(7, GeneratorDims::new(V, 8, 16), DEFAULT_ORACLE_STD).unwrap()
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[test]
fn self_nll_is_below_the_uniform_bound() {
    let o = oracle();
    let est = oracle_nll(&o, o.model(), 2000, T, 1).unwrap();
    assert!(est.per_sequence < T as f64 * (V as f64).ln());
    assert!((est.per_token * T as f64 - est.per_sequence).abs() < 1e-12);
}

#[test]
fn protocol_sized_corpus_and_first_token_frequencies() {
    let o = oracle();
    let c = o.generate_synthetic(10_000, 20, 3).unwrap();
    assert_eq!((c.len(), c.fixed_len()), (10_000, 20));
    assert_eq!(c.seqs(), o.generate_synthetic(10_000, 20, 3).unwrap().seqs());
    let (p, _) = o.model().step(BOS, &LstmState::zeros(16)).unwrap();
    let mut counts = vec![0usize; V];
    for s in c.seqs() {
        counts[s.ids()[0]] += 1;
    }
    let n = c.len() as f64;
    for (k, &cnt) in counts.iter().enumerate() {
        let sigma = (n * p[k] * (1.0 - p[k])).sqrt();
        assert!((cnt as f64 - n * p[k]).abs() <= 3.0 * sigma.max(1e-9), "token {k}: {cnt} vs {}", n * p[k]);
    }
}

#[test]
fn independent_self_estimates_agree() {
    let o = oracle();
    let a = oracle_nll(&o, o.model(), 2000, T, 11).unwrap();
    let b = oracle_nll(&o, o.model(), 2000, T, 12).unwrap();
    let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
    assert!((a.per_sequence - b.per_sequence).abs() <= 2.0 * se, "{a:?} vs {b:?}");
}

#[test]
fn uniform_generator_scores_worse_than_the_oracle() {
    let o = oracle();
    let uniform = GeneratorModel::zeros(GeneratorDims::new(V, 4, 4)).unwrap();
    let u = oracle_nll(&o, &uniform, 2000, T, 5).unwrap();
    let s = oracle_nll(&o, o.model(), 2000, T, 5).unwrap();
    assert!(u.per_sequence > s.per_sequence);
    assert!(u.geometric_likelihood() < s.geometric_likelihood());
}

#[test]
fn spread_across_seeds_halves_with_four_times_the_samples() {
    let o = oracle();
    let gen = GeneratorModel::uniform_init(GeneratorDims::new(V, 4, 4), 2, 0.5).unwrap();
    let spread = |n: usize| {
        let xs: Vec<f64> = (0..40).map(|s| oracle_nll(&o, &gen, n, T, 100 + s).unwrap().per_sequence).collect();
        std_dev(&xs)
    };
    let ratio = spread(500) / spread(2000);
    assert!((1.4..=2.8).contains(&ratio), "ratio {ratio}, expected about 2");
}

#[test]
fn lower_nll_means_higher_likelihood() {
    let o = oracle();
    let gens: Vec<GeneratorModel> =
        (0..4).map(|s| GeneratorModel::uniform_init(GeneratorDims::new(V, 4, 4), s, 0.3 * (s + 1) as f64).unwrap()).collect();
    let ests: Vec<_> = gens.iter().map(|g| oracle_nll(&o, g, 300, T, 9).unwrap()).collect();
    for a in &ests {
        assert!((a.geometric_likelihood() - (-a.per_sequence).exp()).abs() <= 1e-300_f64.max(a.geometric_likelihood() * 1e-15));
        for b in &ests {
            assert_eq!(a.per_sequence < b.per_sequence, a.geometric_likelihood() > b.geometric_likelihood());
        }
    }
}

#[test]
fn evaluation_leaves_the_oracle_unchanged() {
    let o = oracle();
    let before = o.checksum();
    let gen = GeneratorModel::uniform_init(GeneratorDims::new(V, 4, 4), 1, 0.5).unwrap();
    oracle_nll(&o, &gen, 200, T, 1).unwrap();
    o.score(&gen.sample_many(10, T, 2).unwrap()).unwrap();
    assert_eq!(o.checksum(), before);
}
