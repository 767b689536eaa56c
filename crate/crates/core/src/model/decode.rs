//! Scoring, step-wise decoding, beam search and sampling.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{Encoded, Net, StepOut};
use super::{Conditioning, Model, ModelError};
use crate::numerics::{Graph, NodeId, Scalar, Tensor};
use crate::textdata::{BOS, EOS, PAD, UNK};

/// Decoder hidden and cell state plus the tokens fed so far (bos first).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<T> {
    pub h: Tensor<T>,
    pub m: Tensor<T>,
    pub tokens: Vec<usize>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult<T> {
    pub state: DecoderState<T>,
    /// Next-word distribution over the whole vocabulary.
    pub probs: Tensor<T>,
    /// `[G, G]` attention map.
    pub alpha: Tensor<T>,
    pub z: Tensor<T>,
    pub c: Tensor<T>,
    pub g: Tensor<T>,
}

/// Per-step internals of a teacher-forced pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub alphas: Vec<Vec<f64>>,
    pub contexts: Vec<Vec<f64>>,
    pub attended: Vec<Vec<f64>>,
    pub fused: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Question tokens, eos excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Ended with eos rather than at the length cap.
    pub finished: bool,
}

impl Hypothesis {
    fn emitted(&self) -> Vec<usize> {
        let mut t = self.tokens.clone();
        if self.finished {
            t.push(EOS);
        }
        t
    }
}

/// Higher log-probability first, then lexicographic by emitted ids.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.emitted().cmp(&b.emitted()))
}

/// A batch's training loss as a computation record.
pub struct LossGraph<T> {
    pub graph: Graph<T>,
    pub loss: NodeId,
    /// Parameter leaves in registry order.
    pub params: Vec<NodeId>,
    /// Number of scored target positions.
    pub tokens: usize,
    /// Per-step logits, `[batch, V]`.
    pub logits: Vec<NodeId>,
}

fn row_log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|x| x.as_f64() - lse).collect()
}

fn selectable(token: usize) -> bool {
    !matches!(token, PAD | BOS | UNK)
}

fn to_f64<T: Scalar>(g: &Graph<T>, id: NodeId) -> Vec<Vec<f64>> {
    let v = g.value(id);
    (0..v.rows()).map(|r| v.row(r).iter().map(|x| x.as_f64()).collect()).collect()
}

impl<T: Scalar> Model<T> {
    fn net(&self, trainable: bool) -> Result<Net<T>, ModelError> {
        Net::bind(&self.config, &self.params, trainable)
    }

    fn check_question(&self, q: &[usize]) -> Result<(), ModelError> {
        if q.is_empty() {
            return Err(ModelError::Input("empty question".into()));
        }
        if q.len() + 1 > self.config.max_len {
            return Err(ModelError::Input(format!(
                "question of {} tokens exceeds max_len {} (eos included)",
                q.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = q.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::Input(format!("question token {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Answer code `[h_final ; m_final]` from the answer LSTM.
    pub fn encode_answer(&self, answer: &[usize]) -> Result<Tensor<T>, ModelError> {
        if answer.is_empty() {
            return Err(ModelError::Input("empty answer".into()));
        }
        let mut net = self.net(false)?;
        let a = net.answer_code(&[answer])?;
        Ok(net.g.value(a).clone().reshape(vec![2 * self.config.hidden_size])?)
    }

    /// Initial decoder hidden state for one conditioning.
    pub fn initial_glimpse(&self, cond: &Conditioning<T>) -> Result<Tensor<T>, ModelError> {
        let mut net = self.net(false)?;
        let enc = net.encode(&[cond])?;
        Ok(net.g.value(enc.h0).clone().reshape(vec![self.config.hidden_size])?)
    }

    pub fn begin(&self, cond: &Conditioning<T>) -> Result<DecoderState<T>, ModelError> {
        let h = self.initial_glimpse(cond)?;
        Ok(DecoderState {
            m: Tensor::zeros(h.shape())?,
            h,
            tokens: Vec::new(),
            t: 0,
        })
    }

    /// Feeds `token` and returns the advanced state, the next-word
    /// distribution and the attention map.
    pub fn decoder_step(
        &self,
        state: &DecoderState<T>,
        token: usize,
        cond: &Conditioning<T>,
    ) -> Result<StepResult<T>, ModelError> {
        let hs = self.config.hidden_size;
        if state.t != state.tokens.len() || state.h.len() != hs || state.m.len() != hs {
            return Err(ModelError::Input("inconsistent decoder state".into()));
        }
        if state.t >= self.config.max_len {
            return Err(ModelError::Input(format!("step {} reaches max_len", state.t)));
        }
        if token >= self.config.vocab_size {
            return Err(ModelError::Input(format!("token {token} outside vocabulary")));
        }
        let mut net = self.net(false)?;
        let enc = net.encode(&[cond])?;
        let h = net.g.input(state.h.clone().reshape(vec![1, hs])?);
        let m = net.g.input(state.m.clone().reshape(vec![1, hs])?);
        let out = net.step(&enc, h, m, &[token])?;
        let logits = net.g.value(out.logits).clone().reshape(vec![self.config.vocab_size])?;
        logits.ensure_finite("logits")?;
        let probs = crate::numerics::softmax(&logits)?;
        let mut tokens = state.tokens.clone();
        tokens.push(token);
        let flat = |id: NodeId| net.g.value(id).clone().into_data();
        let [g1, g2, d] = self.config.grid;
        Ok(StepResult {
            state: DecoderState {
                h: Tensor::new(vec![hs], flat(out.h))?,
                m: Tensor::new(vec![hs], flat(out.m))?,
                tokens,
                t: state.t + 1,
            },
            probs,
            alpha: Tensor::new(vec![g1, g2], self.alpha_row(&net, &out, 0))?,
            z: Tensor::new(vec![hs], flat(out.z))?,
            c: match out.c {
                Some(c) => Tensor::new(vec![d], flat(c))?,
                None => Tensor::zeros(&[d])?,
            },
            g: Tensor::new(vec![hs], flat(out.g))?,
        })
    }

    /// Attention weights of one row; uniform when the variant does not attend.
    fn alpha_row(&self, net: &Net<T>, out: &StepOut, row: usize) -> Vec<T> {
        match out.alpha {
            Some(a) => net.g.value(a).row(row).to_vec(),
            None => {
                let l = self.config.locations();
                vec![T::one() / T::from_usize_lossy(l); l]
            }
        }
    }

    /// Teacher-forced log-probabilities: each question token plus the final
    /// eos, starting from bos. `normalize` divides by the number of scored
    /// positions.
    pub fn score_questions(
        &self,
        cond: &Conditioning<T>,
        questions: &[Vec<usize>],
        normalize: bool,
    ) -> Result<Vec<f64>, ModelError> {
        if questions.is_empty() {
            return Ok(Vec::new());
        }
        for q in questions {
            self.check_question(q)?;
        }
        let mut net = self.net(false)?;
        let enc = net.encode(&[cond])?;
        let enc = net.expand(&enc, &vec![0; questions.len()])?;
        let qs: Vec<&[usize]> = questions.iter().map(|q| q.as_slice()).collect();
        let outs = net.unroll(&enc, &qs)?;
        let mut scores = vec![0.0; questions.len()];
        for (t, out) in outs.iter().enumerate() {
            let logits = net.g.value(out.logits);
            logits.ensure_finite("logits")?;
            for (r, q) in questions.iter().enumerate() {
                let target = match t.cmp(&q.len()) {
                    Ordering::Less => q[t],
                    Ordering::Equal => EOS,
                    Ordering::Greater => continue,
                };
                scores[r] += row_log_softmax(logits.row(r))[target];
            }
        }
        if normalize {
            for (s, q) in scores.iter_mut().zip(questions) {
                *s /= (q.len() + 1) as f64;
            }
        }
        Ok(scores)
    }

    pub fn sequence_log_prob(&self, question: &[usize], cond: &Conditioning<T>) -> Result<f64, ModelError> {
        Ok(self.score_questions(cond, &[question.to_vec()], false)?[0])
    }

    /// Attention maps and intermediate vectors of a teacher-forced pass; one
    /// entry per generated token, eos included.
    pub fn trace(&self, question: &[usize], cond: &Conditioning<T>) -> Result<AttentionTrace, ModelError> {
        self.check_question(question)?;
        let mut net = self.net(false)?;
        let enc = net.encode(&[cond])?;
        let outs = net.unroll(&enc, &[question])?;
        let mut trace = AttentionTrace {
            alphas: Vec::new(),
            contexts: Vec::new(),
            attended: Vec::new(),
            fused: Vec::new(),
        };
        for out in &outs {
            trace.alphas.push(self.alpha_row(&net, out, 0).iter().map(|x| x.as_f64()).collect());
            trace.contexts.push(to_f64(&net.g, out.z).remove(0));
            trace.attended.push(match out.c {
                Some(c) => to_f64(&net.g, c).remove(0),
                None => vec![0.0; self.config.depth()],
            });
            trace.fused.push(to_f64(&net.g, out.g).remove(0));
        }
        Ok(trace)
    }

    /// Loss of a batch: mean negative log-likelihood over every question
    /// token and final eos; padded positions carry zero weight.
    pub fn loss_graph(&self, batch: &[(&Conditioning<T>, &[usize])]) -> Result<LossGraph<T>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        for (_, q) in batch {
            self.check_question(q)?;
        }
        let mut net = self.net(true)?;
        let conds: Vec<&Conditioning<T>> = batch.iter().map(|(c, _)| *c).collect();
        let qs: Vec<&[usize]> = batch.iter().map(|(_, q)| *q).collect();
        let enc = net.encode(&conds)?;
        let outs = net.unroll(&enc, &qs)?;
        let tokens: usize = qs.iter().map(|q| q.len() + 1).sum();
        let mut total: Option<NodeId> = None;
        for (t, out) in outs.iter().enumerate() {
            let mut targets = Vec::with_capacity(qs.len());
            let mut weights = Vec::with_capacity(qs.len());
            for q in &qs {
                let (target, w) = match t.cmp(&q.len()) {
                    Ordering::Less => (q[t], 1.0),
                    Ordering::Equal => (EOS, 1.0),
                    Ordering::Greater => (PAD, 0.0),
                };
                targets.push(target);
                weights.push(w);
            }
            let nll = net.g.masked_nll(out.logits, &targets, &weights)?;
            total = Some(match total {
                None => nll,
                Some(acc) => net.g.add(acc, nll)?,
            });
        }
        let loss = net.g.scale(total.expect("at least one step"), 1.0 / tokens as f64);
        let loss_value = net.g.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(ModelError::NonFinite(format!("batch loss {loss_value}")));
        }
        Ok(LossGraph {
            logits: outs.iter().map(|o| o.logits).collect(),
            graph: net.g,
            loss,
            params: net.params,
            tokens,
        })
    }

    /// Beam search over emitted tokens (pad, bos and unk are never emitted).
    ///
    /// Each step keeps the best `beam_width - completed` expansions across
    /// all live beams; an expansion ending in eos, or reaching `max_len`
    /// emitted tokens, moves to the completed set. The completed set is
    /// returned best first.
    pub fn beam_search(
        &self,
        cond: &Conditioning<T>,
        beam_width: usize,
        max_len: usize,
    ) -> Result<Vec<Hypothesis>, ModelError> {
        if beam_width == 0 || max_len == 0 {
            return Err(ModelError::Config("beam width and max_len must be positive".into()));
        }
        let mut net = self.net(false)?;
        let base = net.encode(&[cond])?;
        let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
        let (mut h, mut m) = (base.h0, base.m0);
        let mut completed: Vec<Hypothesis> = Vec::new();
        for t in 0..max_len {
            let width = beam_width.saturating_sub(completed.len());
            if live.is_empty() || width == 0 {
                break;
            }
            let enc: Encoded = net.expand(&base, &vec![0; live.len()])?;
            let inputs: Vec<usize> = live.iter().map(|b| b.tokens.last().copied().unwrap_or(BOS)).collect();
            let out = net.step(&enc, h, m, &inputs)?;
            let logits = net.g.value(out.logits);
            logits.ensure_finite("logits")?;
            let mut cands: Vec<(usize, Hypothesis)> = Vec::new();
            for (r, beam) in live.iter().enumerate() {
                let lp = row_log_softmax(logits.row(r));
                for (v, &l) in lp.iter().enumerate().filter(|(v, _)| selectable(*v)) {
                    let finished = v == EOS;
                    let mut tokens = beam.tokens.clone();
                    if !finished {
                        tokens.push(v);
                    }
                    cands.push((r, Hypothesis { tokens, log_prob: beam.log_prob + l, finished }));
                }
            }
            cands.sort_by(|a, b| rank(&a.1, &b.1));
            cands.truncate(width);
            let mut parents = Vec::new();
            let mut next = Vec::new();
            for (r, hyp) in cands {
                if hyp.finished || t + 1 == max_len {
                    completed.push(hyp);
                } else {
                    parents.push(r);
                    next.push(hyp);
                }
            }
            if !next.is_empty() {
                h = net.g.gather(out.h, &parents)?;
                m = net.g.gather(out.m, &parents)?;
            }
            live = next;
        }
        completed.sort_by(rank);
        Ok(completed)
    }

    pub fn greedy(&self, cond: &Conditioning<T>, max_len: usize) -> Result<Hypothesis, ModelError> {
        Ok(self.beam_search(cond, 1, max_len)?.remove(0))
    }

    /// Ancestral sampling with temperature, renormalized over emittable
    /// tokens. Returns the question tokens without eos.
    pub fn sample_question(
        &self,
        cond: &Conditioning<T>,
        temperature: f64,
        seed: u64,
        max_len: usize,
    ) -> Result<Vec<usize>, ModelError> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(ModelError::Config(format!("temperature {temperature} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = self.net(false)?;
        let enc = net.encode(&[cond])?;
        let (mut h, mut m) = (enc.h0, enc.m0);
        let mut tokens = Vec::new();
        for _ in 0..max_len {
            let input = tokens.last().copied().unwrap_or(BOS);
            let out = net.step(&enc, h, m, &[input])?;
            (h, m) = (out.h, out.m);
            let logits = net.g.value(out.logits);
            logits.ensure_finite("logits")?;
            let probs = tempered(logits.row(0), temperature);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = None;
            for (v, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    choice = Some(v);
                    if u < acc {
                        break;
                    }
                }
            }
            let v = choice.expect("some token is emittable");
            if v == EOS {
                break;
            }
            tokens.push(v);
        }
        Ok(tokens)
    }
}

/// `softmax(logits / temperature)` over emittable tokens; zero elsewhere.
pub(crate) fn tempered<T: Scalar>(logits: &[T], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|x| x.as_f64() / temperature).collect();
    let max = scaled
        .iter()
        .enumerate()
        .filter(|(v, _)| selectable(*v))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(v, &x)| if selectable(v) { (x - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}
