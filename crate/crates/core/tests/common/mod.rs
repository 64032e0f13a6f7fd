//! Central finite-difference gradient checks shared by the gradient suite
//! and the acceptance run.

#![allow(dead_code)]

pub mod laws;

use rand::Rng;
use rankgan::corpus::TokenSeq;
use rankgan::discriminator::Discriminator;
use rankgan::encoder::{ConvEncoder, EncoderConfig, EncoderVars};
use rankgan::generator::{GeneratorDims, GeneratorModel, GeneratorVars};
use rankgan::optim::Parameterized;
use rankgan::ranker::{ComparisonSet, Polarity, RankerModel, ReferenceSet};
use rankgan::rng::{stream, StreamRng};
use rankgan::tape::{Tape, Var};
use rankgan::tensor::{Activation, ElemOp, Tensor};
use rankgan::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;

pub type LossFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Below this magnitude a central difference at `STEP` carries roundoff
/// comparable to the gradient itself, so the error there is judged
/// relative to the floor instead.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Relative error `|a - n| / max(|a| + |n|, GRAD_FLOOR)` between analytic and
/// central-difference gradients, maximised over every coordinate of every
/// input.
pub fn fd_rel_err(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&mut tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.param(t)).collect();
        let l = f(&mut tape, &vars).expect("forward");
        tape.value(l).item().expect("scalar")
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn rand_tensor(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, || rng.random_range(lo..hi))
}

/// Values bounded away from zero, so kinks at 0 are never straddled.
fn away_from_zero(rng: &mut StreamRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, || {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Contracts any output with a fixed random tensor to get a scalar.
fn contract(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "mul",
    "sub",
    "add_scalar_broadcast",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "relu",
    "scale",
    "add_const",
    "add_bias",
    "linear",
    "softmax_rows",
    "softmax_cols",
    "log_softmax_rows",
    "log_softmax_cols",
    "gather",
    "reshape",
    "transpose",
    "slice_cols",
    "concat_cols",
    "sum",
    "mean",
    "pick_cols",
    "normalize_rows",
    "conv1d_maxpool_tanh",
    "conv1d_maxpool_relu",
    "conv1d_maxpool_identity",
];

/// A random instance of primitive `name`: inputs plus a scalar loss over them.
pub fn primitive_case(name: &str, rng: &mut StreamRng) -> (Vec<Tensor>, LossFn) {
    let r = rng.random_range(1..5usize);
    let c = rng.random_range(1..5usize);
    let k = rng.random_range(1..5usize);
    let w_rc = rand_tensor(rng, &[r, c], -1.0, 1.0);
    let w_rk = rand_tensor(rng, &[r, k], -1.0, 1.0);
    let a = rand_tensor(rng, &[r, c], -1.5, 1.5);
    let b = rand_tensor(rng, &[r, c], -1.5, 1.5);
    let unary = |t: Tensor, op: fn(&mut Tape, Var) -> Result<Var>, w: Tensor| -> (Vec<Tensor>, LossFn) {
        (vec![t], Box::new(move |tape, v| {
            let o = op(tape, v[0])?;
            contract(tape, o, &w)
        }))
    };
    let binary = |op: ElemOp, w: Tensor| -> (Vec<Tensor>, LossFn) {
        (vec![a.clone(), b.clone()], Box::new(move |tape, v| {
            let o = tape.elementwise(op, &[v[0], v[1]])?;
            contract(tape, o, &w)
        }))
    };
    match name {
        "matmul" => {
            let m = rand_tensor(rng, &[c, k], -1.0, 1.0);
            (vec![a.clone(), m], Box::new(move |tape, v| {
                let o = tape.matmul(v[0], v[1])?;
                contract(tape, o, &w_rk)
            }))
        }
        "add" => binary(ElemOp::Add, w_rc),
        "mul" => binary(ElemOp::Mul, w_rc),
        "sub" => (vec![a, b], Box::new(move |tape, v| {
            let o = tape.sub(v[0], v[1])?;
            contract(tape, o, &w_rc)
        })),
        "add_scalar_broadcast" => {
            let s = rand_tensor(rng, &[1], -1.0, 1.0);
            (vec![a, s], Box::new(move |tape, v| {
                let o = tape.add(v[0], v[1])?;
                contract(tape, o, &w_rc)
            }))
        }
        "tanh" => unary(a, |t, x| Ok(t.tanh(x)), w_rc),
        "sigmoid" => unary(a, |t, x| Ok(t.sigmoid(x)), w_rc),
        "exp" => unary(a, |t, x| Ok(t.exp(x)), w_rc),
        "log" => unary(rand_tensor(rng, &[r, c], 0.3, 2.0), |t, x| t.log(x), w_rc),
        "relu" => unary(away_from_zero(rng, &[r, c]), |t, x| Ok(t.relu(x)), w_rc),
        "scale" => unary(a, |t, x| Ok(t.scale(x, -1.7)), w_rc),
        "add_const" => unary(a, |t, x| Ok(t.add_const(x, 0.3)), w_rc),
        "add_bias" => {
            let bias = rand_tensor(rng, &[c], -1.0, 1.0);
            (vec![a, bias], Box::new(move |tape, v| {
                let o = tape.add_bias(v[0], v[1])?;
                contract(tape, o, &w_rc)
            }))
        }
        "linear" => {
            let m = rand_tensor(rng, &[c, k], -1.0, 1.0);
            let bias = rand_tensor(rng, &[k], -1.0, 1.0);
            (vec![a, m, bias], Box::new(move |tape, v| {
                let o = tape.linear(v[0], v[1], v[2])?;
                contract(tape, o, &w_rk)
            }))
        }
        "softmax_rows" => unary(a, |t, x| t.softmax(x, 1), w_rc),
        "softmax_cols" => unary(a, |t, x| t.softmax(x, 0), w_rc),
        "log_softmax_rows" => unary(a, |t, x| t.log_softmax(x, 1), w_rc),
        "log_softmax_cols" => unary(a, |t, x| t.log_softmax(x, 0), w_rc),
        "gather" => {
            let n = rng.random_range(1..6usize);
            let ids: Vec<usize> = (0..r).map(|_| rng.random_range(0..n)).collect();
            let table = rand_tensor(rng, &[n, c], -1.0, 1.0);
            (vec![table], Box::new(move |tape, v| {
                let o = tape.gather(v[0], &ids)?;
                contract(tape, o, &w_rc)
            }))
        }
        "reshape" => {
            let w = rand_tensor(rng, &[r * c], -1.0, 1.0);
            (vec![a], Box::new(move |tape, v| {
                let o = tape.reshape(v[0], &[r * c])?;
                contract(tape, o, &w)
            }))
        }
        "transpose" => {
            let w = rand_tensor(rng, &[c, r], -1.0, 1.0);
            (vec![a], Box::new(move |tape, v| {
                let o = tape.transpose(v[0])?;
                contract(tape, o, &w)
            }))
        }
        "slice_cols" => {
            let start = rng.random_range(0..c);
            let len = rng.random_range(1..=c - start);
            let w = rand_tensor(rng, &[r, len], -1.0, 1.0);
            (vec![a], Box::new(move |tape, v| {
                let o = tape.slice_cols(v[0], start, len)?;
                contract(tape, o, &w)
            }))
        }
        "concat_cols" => {
            let m = rand_tensor(rng, &[r, k], -1.0, 1.0);
            let w = rand_tensor(rng, &[r, c + k], -1.0, 1.0);
            (vec![a, m], Box::new(move |tape, v| {
                let o = tape.concat_cols(&[v[0], v[1]])?;
                contract(tape, o, &w)
            }))
        }
        "sum" => (vec![a], Box::new(|tape, v| {
            let t = tape.tanh(v[0]);
            Ok(tape.sum(t))
        })),
        "mean" => (vec![a], Box::new(|tape, v| {
            let t = tape.tanh(v[0]);
            Ok(tape.mean(t))
        })),
        "pick_cols" => {
            let cols: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
            let w = rand_tensor(rng, &[r], -1.0, 1.0);
            (vec![a], Box::new(move |tape, v| {
                let o = tape.pick_cols(v[0], &cols)?;
                contract(tape, o, &w)
            }))
        }
        "normalize_rows" => unary(away_from_zero(rng, &[r, c]), |t, x| t.normalize_rows(x), w_rc),
        conv if conv.starts_with("conv1d_maxpool") => {
            let act = match conv {
                "conv1d_maxpool_tanh" => Activation::Tanh,
                "conv1d_maxpool_relu" => Activation::Relu,
                _ => Activation::Identity,
            };
            let batch = rng.random_range(1..4usize);
            let d = rng.random_range(1..4usize);
            let width = rng.random_range(1..4usize);
            let len = width + rng.random_range(0..4usize);
            let x = rand_tensor(rng, &[batch, len, d], -1.0, 1.0);
            let filters = rand_tensor(rng, &[k, width * d], -1.0, 1.0);
            let bias = if act == Activation::Relu {
                // keep every pooled pre-activation clear of the relu kink
                Tensor::full(&[k], 5.0)
            } else {
                rand_tensor(rng, &[k], -0.5, 0.5)
            };
            let w = rand_tensor(rng, &[batch, k], -1.0, 1.0);
            (vec![x, filters, bias], Box::new(move |tape, v| {
                let o = tape.conv1d_maxpool(v[0], v[1], v[2], width, act)?;
                contract(tape, o, &w)
            }))
        }
        other => panic!("unknown primitive {other}"),
    }
}

/// Worst relative error over `instances` random instances of `name`.
pub fn check_primitive(name: &str, instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[name.len() as u64, name.bytes().map(u64::from).sum()]);
    (0..instances)
        .map(|_| {
            let (inputs, f) = primitive_case(name, &mut rng);
            fd_rel_err(&inputs, &*f)
        })
        .fold(0.0, f64::max)
}

fn rand_seqs(rng: &mut StreamRng, n: usize, len: usize, vocab: usize) -> Vec<TokenSeq> {
    (0..n)
        .map(|_| TokenSeq::from_ids((0..len).map(|_| rng.random_range(0..vocab)).collect()))
        .collect()
}

/// Mean-token MLE loss of a random small LSTM on random sequences, checked
/// against all five parameter tensors. `len = 1` isolates a single step.
pub fn check_lstm(instances: usize, seed: u64, len: usize) -> f64 {
    let mut rng = stream(seed, &[101, len as u64]);
    (0..instances)
        .map(|_| {
            let dims = GeneratorDims::new(rng.random_range(2..6), rng.random_range(1..4), rng.random_range(1..4));
            let init = GeneratorModel::uniform_init(dims, rng.random(), 0.8).unwrap();
            let n = rng.random_range(1..4);
            let seqs = rand_seqs(&mut rng, n, len, dims.vocab_size);
            let inputs: Vec<Tensor> = init.named_params().into_iter().map(|(_, t)| t.clone()).collect();
            let f = move |tape: &mut Tape, v: &[Var]| {
                let model = GeneratorModel::zeros(dims)?;
                let vars = GeneratorVars { embedding: v[0], w_gates: v[1], b_gates: v[2], w_out: v[3], b_out: v[4] };
                model.mle_loss(tape, &vars, &seqs)
            };
            fd_rel_err(&inputs, &f)
        })
        .fold(0.0, f64::max)
}

/// Policy-gradient surrogate with random per-step weights.
pub fn check_pg_surrogate(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[102]);
    (0..instances)
        .map(|_| {
            let dims = GeneratorDims::new(rng.random_range(2..5), 2, 3);
            let init = GeneratorModel::uniform_init(dims, rng.random(), 0.8).unwrap();
            let len = rng.random_range(1..4);
            let seqs = rand_seqs(&mut rng, 3, len, dims.vocab_size);
            let weights: Vec<Vec<f64>> = (0..3).map(|_| (0..len).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let inputs: Vec<Tensor> = init.named_params().into_iter().map(|(_, t)| t.clone()).collect();
            let f = move |tape: &mut Tape, v: &[Var]| {
                let model = GeneratorModel::zeros(dims)?;
                let vars = GeneratorVars { embedding: v[0], w_gates: v[1], b_gates: v[2], w_out: v[3], b_out: v[4] };
                let steps = model.forward_log_probs(tape, &vars, &seqs)?;
                let mut acc = None;
                for (t, lp) in steps.into_iter().enumerate() {
                    let w = tape.constant(Tensor::vector(weights.iter().map(|w| w[t]).collect()));
                    let m = tape.mul(w, lp)?;
                    let s = tape.sum(m);
                    acc = Some(match acc {
                        None => s,
                        Some(a) => tape.add(a, s)?,
                    });
                }
                Ok(tape.scale(acc.unwrap(), -1.0 / 3.0))
            };
            fd_rel_err(&inputs, &f)
        })
        .fold(0.0, f64::max)
}

fn rand_encoder_config(rng: &mut StreamRng) -> EncoderConfig {
    let len = rng.random_range(3..6);
    EncoderConfig {
        vocab_size: rng.random_range(3..7),
        embed_dim: rng.random_range(1..4),
        widths: vec![1, rng.random_range(2..=len)],
        filters_per_width: rng.random_range(1..4),
        activation: Activation::Tanh,
        fixed_len: len,
    }
}

fn encoder_vars(v: &[Var], n_widths: usize) -> EncoderVars {
    EncoderVars { embedding: v[0], filters: v[1..1 + n_widths].to_vec(), biases: v[1 + n_widths..1 + 2 * n_widths].to_vec() }
}

fn encoder_inputs(enc: &ConvEncoder) -> Vec<Tensor> {
    enc.params().into_iter().cloned().collect()
}

/// Ranking objective (human vs synthetic against references and both
/// comparison sets) through the convolutional encoder.
pub fn check_ranker_objective(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[103]);
    (0..instances)
        .map(|_| {
            let cfg = rand_encoder_config(&mut rng);
            let ranker = RankerModel::uniform_init(cfg.clone(), rng.random_range(0.5..5.0), rng.random(), 0.8).unwrap();
            let (v, l) = (cfg.vocab_size, cfg.fixed_len);
            let human = rand_seqs(&mut rng, 2, l, v);
            let synth = rand_seqs(&mut rng, 2, l, v);
            let refs = ReferenceSet::new(rand_seqs(&mut rng, 2, l, v)).unwrap();
            let cm = ComparisonSet::new(rand_seqs(&mut rng, 2, l, v), Polarity::Minus).unwrap();
            let cp = ComparisonSet::new(rand_seqs(&mut rng, 1, l, v), Polarity::Plus).unwrap();
            let inputs = encoder_inputs(&ranker.encoder);
            let nw = cfg.widths.len();
            let f = move |tape: &mut Tape, vars: &[Var]| {
                ranker.objective_loss(tape, &encoder_vars(vars, nw), &human, &synth, &refs, &cm, &cp)
            };
            fd_rel_err(&inputs, &f)
        })
        .fold(0.0, f64::max)
}

/// Encoder features contracted with random weights.
pub fn check_encoder(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[104]);
    (0..instances)
        .map(|_| {
            let cfg = rand_encoder_config(&mut rng);
            let enc = ConvEncoder::uniform_init(cfg.clone(), rng.random(), 0.8).unwrap();
            let seqs = rand_seqs(&mut rng, 3, cfg.fixed_len, cfg.vocab_size);
            let w = rand_tensor(&mut rng, &[3, cfg.feature_dim()], -1.0, 1.0);
            let inputs = encoder_inputs(&enc);
            let nw = cfg.widths.len();
            let f = move |tape: &mut Tape, vars: &[Var]| {
                let y = enc.encode_tape(tape, &encoder_vars(vars, nw), &seqs)?;
                contract(tape, y, &w)
            };
            fd_rel_err(&inputs, &f)
        })
        .fold(0.0, f64::max)
}

/// Binary discriminator cross-entropy.
pub fn check_discriminator(instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[105]);
    (0..instances)
        .map(|_| {
            let cfg = rand_encoder_config(&mut rng);
            let d = Discriminator::uniform_init(cfg.clone(), rng.random(), 0.8).unwrap();
            let human = rand_seqs(&mut rng, 2, cfg.fixed_len, cfg.vocab_size);
            let synth = rand_seqs(&mut rng, 2, cfg.fixed_len, cfg.vocab_size);
            let mut inputs = encoder_inputs(&d.encoder);
            inputs.push(d.w_cls.clone());
            inputs.push(d.b_cls.clone());
            let nw = cfg.widths.len();
            let f = move |tape: &mut Tape, vars: &[Var]| {
                let n = vars.len();
                let ev = (encoder_vars(&vars[..n - 2], nw), vars[n - 2], vars[n - 1]);
                d.loss_tape(tape, &ev, &human, &synth)
            };
            fd_rel_err(&inputs, &f)
        })
        .fold(0.0, f64::max)
}
