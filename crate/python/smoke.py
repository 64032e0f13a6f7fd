"""Smoke test for the rankgan_py extension module.

Run after `pip install --no-build-isolation -e crates/py`:

    python3 python/smoke.py
"""

import math

import rankgan_py as rg

V, T = 12, 6

oracle = rg.Oracle(seed=3, vocab_size=V, embed_dim=4, hidden_dim=8)
before = oracle.checksum()
corpus = oracle.generate(200, T, seed=1)
assert len(corpus) == 200 and all(len(s) == T for s in corpus)
assert oracle.generate(200, T, seed=1) == corpus

own = oracle.nll_of(oracle.generator(), n_samples=500, length=T, seed=2)
assert own["per_sequence"] < T * math.log(V), own
uniform = oracle.nll_of(rg.Generator(V, 4, 8, seed=0, scale=0.0), n_samples=500, length=T, seed=2)
assert uniform["per_sequence"] > own["per_sequence"]

alphas = [0.1, 0.5, -0.3]
total = sum(rg.rank_score(a, alphas[:i] + alphas[i + 1:], 4.0) for i, a in enumerate(alphas))
assert abs(total - 1.0) < 1e-9, total

assert abs(rg.bleu([5, 6, 7, 8], [[5, 6, 7, 9]], max_n=2) - math.sqrt(0.5)) < 1e-12
assert rg.corpus_bleu(corpus[:5], corpus, max_n=4) == 1.0

vocab = rg.Vocab.build(["the cat sat", "the dog sat"])
ids = vocab.encode("the cat ran", 4)
assert vocab.decode(ids) == "the cat <unk>"

config = {
    "seq_len": T,
    "embed_dim": 4,
    "hidden_dim": 8,
    "ranker_embed_dim": 4,
    "filter_widths": "2,3",
    "filters_per_width": 3,
    "pretrain_epochs": 3,
    "adversarial_rounds": 2,
    "batch_size": 16,
    "pg_batch_size": 4,
    "rollouts": 2,
    "ref_size": 2,
    "cmp_size": 2,
    "critic_pretrain_steps": 2,
    "eval_samples": 200,
}
synthetic = rg.Vocab.synthetic(V)
logs = {}
for mode in ["mle_only", "binary", "pg_bleu", "rankgan"]:
    trainer = rg.Trainer(dict(config, mode=mode), corpus, synthetic, oracle)
    log = trainer.train()
    assert trainer.is_done
    assert [r["epoch"] for r in log] == list(range(6))
    assert log[3]["oracle_nll"] < log[0]["oracle_nll"], log
    logs[mode] = trainer.runlog_csv()
    print(f"{mode:9s} oracle NLL {log[0]['oracle_nll']:.3f} -> {log[-1]['oracle_nll']:.3f}")

again = rg.Trainer(dict(config, mode="rankgan"), corpus, synthetic, oracle)
again.train()
assert again.runlog_csv() == logs["rankgan"]
assert oracle.checksum() == before

try:
    rg.Trainer(dict(config, no_such_key=1), corpus, synthetic, oracle)
except ValueError as e:
    assert "no_such_key" in str(e)
else:
    raise AssertionError("unknown config key accepted")

print("smoke ok")
