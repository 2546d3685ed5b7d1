//! Two-layer attention LSTM caption decoder.
//!
//! Per step t: the first LSTM consumes concat(e_{t−1}, z̄, h²_{t−1})
//! where e_{t−1} embeds the previous word and z̄ is the mean of the
//! encoded set Z. Additive attention over Z with query h¹ produces ẑ,
//! the second LSTM consumes concat(h¹, ẑ), and a linear-softmax head
//! over h² gives the next-word distribution.
//!
//! Greedy, beam, and ancestral-sampling decoding are provided. Ties
//! break toward the lowest token id (greedy) or the lexicographically
//! smallest token sequence (beam), so decoding is fully deterministic.

use crate::error::{Error, Result};
use crate::params::{linear, Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Var};
use crate::vocab::{BOS, EOS};

pub const PREFIX: &str = "decoder";

#[derive(Clone, Copy, Debug)]
pub struct DecoderConfig {
    /// Hidden and word-embedding dimension d.
    pub dim: usize,
    /// Width of each encoded vector z_m. The sentence-side decoder uses
    /// d_z = d; the image-side decoder concatenates two streams, d_z = 2d.
    pub d_z: usize,
    /// Word vocabulary size including reserved tokens.
    pub vocab: usize,
    /// Attention hidden width (full scale 512).
    pub attn_dim: usize,
}

/// Register all decoder parameters.
pub fn init_decoder(store: &mut ParamStore, rng: &mut SeededRng, cfg: &DecoderConfig) {
    let d = cfg.dim;
    store.init_matrix(rng, format!("{PREFIX}.w_word"), d, cfg.vocab);
    init_lstm(store, rng, &format!("{PREFIX}.lstm1"), 2 * d + cfg.d_z, d);
    init_lstm(store, rng, &format!("{PREFIX}.lstm2"), d + cfg.d_z, d);
    store.init_matrix(rng, format!("{PREFIX}.attn.w_z"), cfg.attn_dim, cfg.d_z);
    store.init_matrix(rng, format!("{PREFIX}.attn.w_h"), cfg.attn_dim, d);
    let w_a = (0..cfg.attn_dim)
        .map(|_| rng.gaussian_scaled(1.0 / (cfg.attn_dim as f64).sqrt()))
        .collect();
    store.insert(
        format!("{PREFIX}.attn.w_a"),
        crate::tensor::Tensor::vector(w_a).unwrap(),
    );
    store.init_affine(rng, &format!("{PREFIX}.out"), d, cfg.vocab);
}

/// One LSTM layer: a single 4d x (din + d) weight over concat(x, h_prev)
/// plus a 4d bias. Gate layout is [input, forget, output, candidate];
/// the forget-gate bias starts at 1 so early training does not flush the
/// cell state.
fn init_lstm(store: &mut ParamStore, rng: &mut SeededRng, name: &str, din: usize, d: usize) {
    store.init_matrix(rng, format!("{name}.weight"), 4 * d, din + d);
    let mut bias = vec![0.0; 4 * d];
    bias[d..2 * d].fill(1.0);
    store.insert(
        format!("{name}.bias"),
        crate::tensor::Tensor::vector(bias).unwrap(),
    );
}

/// Single LSTM step; returns (h, c).
pub fn lstm_cell(
    tape: &Tape,
    bound: &Bound,
    name: &str,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let d = tape.shape(h_prev)[0];
    let xs = tape.concat(&[x, h_prev])?;
    let pre = tape.add(
        tape.matmul(bound.var(&format!("{name}.weight")), xs)?,
        bound.var(&format!("{name}.bias")),
    )?;
    let i = tape.sigmoid(tape.slice(pre, 0, d)?)?;
    let f = tape.sigmoid(tape.slice(pre, d, d)?)?;
    let o = tape.sigmoid(tape.slice(pre, 2 * d, d)?)?;
    let g = tape.tanh(tape.slice(pre, 3 * d, d)?)?;
    let c = tape.add(tape.mul(f, c_prev)?, tape.mul(i, g)?)?;
    let h = tape.mul(o, tape.tanh(c)?)?;
    Ok((h, c))
}

/// Recurrent state of both layers.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

pub fn init_state(tape: &Tape, d: usize) -> Result<DecoderState> {
    let z = tape.constant_vector(vec![0.0; d])?;
    Ok(DecoderState {
        h1: z,
        c1: z,
        h2: z,
        c2: z,
    })
}

/// Precomputed per-sequence context: the encoded set, its column-stack,
/// and its mean.
pub struct Context {
    pub z: Vec<Var>,
    z_mat: Var,
    z_bar: Var,
}

impl Context {
    pub fn new(tape: &Tape, z: Vec<Var>) -> Result<Context> {
        if z.is_empty() {
            return Err(Error::Contract("decoder needs a non-empty set Z".into()));
        }
        Ok(Context {
            z_mat: tape.stack_cols(&z)?,
            z_bar: tape.mean_rows(&z)?,
            z,
        })
    }
}

pub struct StepOutput {
    /// Next-word distribution (sums to 1).
    pub probs: Var,
    /// Attention weights over Z.
    pub beta: Var,
    pub state: DecoderState,
}

/// One decoding step conditioned on the previous word id.
pub fn step(
    tape: &Tape,
    bound: &Bound,
    ctx: &Context,
    prev_token: u32,
    state: &DecoderState,
) -> Result<StepOutput> {
    let e_prev = tape.col(bound.var(&format!("{PREFIX}.w_word")), prev_token as usize)?;
    let x1 = tape.concat(&[e_prev, ctx.z_bar, state.h2])?;
    let (h1, c1) = lstm_cell(tape, bound, &format!("{PREFIX}.lstm1"), x1, state.h1, state.c1)?;

    let w_z = bound.var(&format!("{PREFIX}.attn.w_z"));
    let w_h = bound.var(&format!("{PREFIX}.attn.w_h"));
    let w_a = bound.var(&format!("{PREFIX}.attn.w_a"));
    let query = tape.matmul(w_h, h1)?;
    let scores: Result<Vec<Var>> = ctx
        .z
        .iter()
        .map(|&zm| {
            let t = tape.tanh(tape.add(tape.matmul(w_z, zm)?, query)?)?;
            tape.dot(w_a, t)
        })
        .collect();
    let beta = tape.softmax(tape.concat(&scores?)?)?;
    let zhat = tape.matmul(ctx.z_mat, beta)?;

    let x2 = tape.concat(&[h1, zhat])?;
    let (h2, c2) = lstm_cell(tape, bound, &format!("{PREFIX}.lstm2"), x2, state.h2, state.c2)?;
    let probs = tape.softmax(linear(tape, bound, &format!("{PREFIX}.out"), h2)?)?;
    Ok(StepOutput {
        probs,
        beta,
        state: DecoderState { h1, c1, h2, c2 },
    })
}

/// A finished decode: token ids (EOS-terminated unless the length cap
/// hit first) and the summed log-probability of the emitted tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from BOS.
pub fn decode_greedy(
    tape: &Tape,
    bound: &Bound,
    ctx: &Context,
    d: usize,
    max_len: usize,
) -> Result<Decoded> {
    let mut state = init_state(tape, d)?;
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let out = step(tape, bound, ctx, prev, &state)?;
        let p = tape.value(out.probs);
        let tok = argmax_lowest(&p) as u32;
        log_prob += p[tok as usize].ln();
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        prev = tok;
        state = out.state;
    }
    Ok(Decoded { tokens, log_prob })
}

/// Ancestral sampling from BOS. Returns the sampled tokens plus one
/// log-probability node per emitted token, still attached to the tape so
/// a policy-gradient loss can backpropagate through them.
pub fn decode_sample(
    tape: &Tape,
    bound: &Bound,
    ctx: &Context,
    d: usize,
    max_len: usize,
    rng: &mut SeededRng,
) -> Result<(Vec<u32>, Vec<Var>)> {
    let mut state = init_state(tape, d)?;
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    for _ in 0..max_len {
        let out = step(tape, bound, ctx, prev, &state)?;
        let tok = rng.multinomial(&tape.value(out.probs)) as u32;
        log_probs.push(tape.ln(tape.pick(out.probs, tok as usize)?)?);
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        prev = tok;
        state = out.state;
    }
    Ok((tokens, log_probs))
}

struct Beam {
    tokens: Vec<u32>,
    log_prob: f64,
    state: DecoderState,
}

/// Length-synchronous beam search. Completed hypotheses accumulate in a
/// pool; search stops when no live beams remain or the cap is reached.
/// Candidates are ranked by summed log-probability (divided by length
/// when `length_norm` is set), ties broken toward the lexicographically
/// smaller token sequence. Returns up to `beam_size` candidates,
/// best first.
pub fn decode_beam(
    tape: &Tape,
    bound: &Bound,
    ctx: &Context,
    d: usize,
    beam_size: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<Decoded>> {
    if beam_size == 0 {
        return Err(Error::Config("beam size must be >= 1".into()));
    }
    let score = |b: &Beam| {
        if length_norm {
            b.log_prob / b.tokens.len().max(1) as f64
        } else {
            b.log_prob
        }
    };
    let mut live = vec![Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init_state(tape, d)?,
    }];
    let mut done: Vec<Beam> = Vec::new();

    for _ in 0..max_len {
        // (source beam, token, new log-prob, next state)
        let mut expansions: Vec<(usize, u32, f64)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (bi, b) in live.iter().enumerate() {
            let prev = *b.tokens.last().unwrap_or(&BOS);
            let out = step(tape, bound, ctx, prev, &b.state)?;
            let p = tape.value(out.probs);
            next_states.push(out.state);
            for (tok, &pv) in p.iter().enumerate() {
                expansions.push((bi, tok as u32, b.log_prob + pv.max(1e-300).ln()));
            }
        }
        expansions.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then_with(|| (live[a.0].tokens.as_slice(), a.1).cmp(&(live[b.0].tokens.as_slice(), b.1)))
        });
        let mut next_live = Vec::with_capacity(beam_size);
        for (bi, tok, lp) in expansions.into_iter().take(beam_size) {
            let mut tokens = live[bi].tokens.clone();
            tokens.push(tok);
            let beam = Beam {
                tokens,
                log_prob: lp,
                state: next_states[bi],
            };
            if tok == EOS {
                done.push(beam);
            } else {
                next_live.push(beam);
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    done.extend(live); // length-capped hypotheses compete too

    done.sort_by(|a, b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(done
        .into_iter()
        .take(beam_size)
        .map(|b| Decoded {
            tokens: b.tokens,
            log_prob: b.log_prob,
        })
        .collect())
}
