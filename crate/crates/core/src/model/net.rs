//! The network as operations on a computation record, batched over rows.

use std::collections::HashMap;

use super::layout::*;
use super::{Conditioning, ModelConfig, ModelError, Variant};
use crate::numerics::{Graph, NodeId, ParamRegistry, Scalar, Tensor};
use crate::textdata::{AnswerType, BOS, PAD};

#[derive(Clone, Copy)]
struct Lstm {
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
}

#[derive(Clone, Copy)]
struct Attention {
    w_visual: NodeId,
    w_context: NodeId,
    u: NodeId,
    p: NodeId,
}

/// Row-aligned encodings that stay fixed while decoding.
#[derive(Clone, Debug)]
pub(crate) struct Encoded {
    pub rows: usize,
    pub h0: NodeId,
    pub m0: NodeId,
    /// `W_a a + b`, or absent when the answer does not enter `z_t`.
    za: Option<NodeId>,
    /// `[rows*L, D]` grid features.
    visual: Option<NodeId>,
    /// `tanh(W_v v)` per location, computed once.
    visual_proj: Option<NodeId>,
    /// Mean-pooled grid for the no-attention variant.
    pooled: Option<NodeId>,
}

pub(crate) struct StepOut {
    pub h: NodeId,
    pub m: NodeId,
    pub z: NodeId,
    /// `[rows, L]`; absent when the variant has no attention.
    pub alpha: Option<NodeId>,
    /// Attended feature `c_t`, absent without an image.
    pub c: Option<NodeId>,
    pub g: NodeId,
    pub logits: NodeId,
}

pub(crate) struct Net<T> {
    pub g: Graph<T>,
    /// Registry-ordered parameter nodes.
    pub params: Vec<NodeId>,
    config: ModelConfig,
    embed: NodeId,
    answer: Option<Lstm>,
    decoder: Lstm,
    glimpse_image: Option<NodeId>,
    glimpse_answer: Option<NodeId>,
    glimpse_bias: NodeId,
    ctx_hidden: NodeId,
    ctx_answer: Option<NodeId>,
    ctx_bias: NodeId,
    attention: Option<Attention>,
    co_visual: Option<NodeId>,
    co_context: NodeId,
    co_u: NodeId,
    out_w: NodeId,
    out_b: NodeId,
}

impl<T: Scalar> Net<T> {
    /// Loads every parameter into a fresh record, as differentiable leaves
    /// when `trainable`.
    pub fn bind(config: &ModelConfig, params: &ParamRegistry<T>, trainable: bool) -> Result<Self, ModelError> {
        let mut g = Graph::new();
        let mut ids = Vec::with_capacity(params.len());
        let mut by_name = HashMap::new();
        for (name, t) in params.iter() {
            let id = if trainable { g.param(t.clone()) } else { g.input(t.clone()) };
            ids.push(id);
            by_name.insert(name.to_string(), id);
        }
        let opt = |n: &str| by_name.get(n).copied();
        let req = |n: &str| opt(n).ok_or_else(|| ModelError::Config(format!("missing parameter {n}")));
        let lstm = |x: &str, h: &str, b: &str| -> Result<Lstm, ModelError> {
            Ok(Lstm { wx: req(x)?, wh: req(h)?, b: req(b)? })
        };
        let variant = config.variant;
        Ok(Net {
            embed: req(EMBED)?,
            answer: if variant.encodes_answer() {
                Some(lstm(ANSWER_W_INPUT, ANSWER_W_HIDDEN, ANSWER_BIAS)?)
            } else {
                None
            },
            decoder: lstm(DECODER_W_INPUT, DECODER_W_HIDDEN, DECODER_BIAS)?,
            glimpse_image: opt(GLIMPSE_W_IMAGE),
            glimpse_answer: opt(GLIMPSE_W_ANSWER),
            glimpse_bias: req(GLIMPSE_BIAS)?,
            ctx_hidden: req(CONTEXT_W_HIDDEN)?,
            ctx_answer: opt(CONTEXT_W_ANSWER),
            ctx_bias: req(CONTEXT_BIAS)?,
            attention: if variant.uses_attention() {
                Some(Attention {
                    w_visual: req(ATTENTION_W_VISUAL)?,
                    w_context: req(ATTENTION_W_CONTEXT)?,
                    u: req(ATTENTION_U)?,
                    p: req(ATTENTION_P)?,
                })
            } else {
                None
            },
            co_visual: opt(COATTENTION_W_VISUAL),
            co_context: req(COATTENTION_W_CONTEXT)?,
            co_u: req(COATTENTION_U)?,
            out_w: req(OUTPUT_W)?,
            out_b: req(OUTPUT_BIAS)?,
            g,
            params: ids,
            config: config.clone(),
        })
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Result<NodeId, ModelError> {
        Ok(self.g.input(Tensor::zeros(&[rows, cols])?))
    }

    fn lstm_step(&mut self, l: Lstm, x: NodeId, h: NodeId, m: NodeId) -> Result<(NodeId, NodeId), ModelError> {
        let hs = self.config.hidden_size;
        let g = &mut self.g;
        let gx = g.linear(x, l.wx)?;
        let gh = g.linear(h, l.wh)?;
        let pre = g.add(gx, gh)?;
        let pre = g.add_bias(pre, l.b)?;
        let i = g.cols(pre, 0, hs)?;
        let i = g.sigmoid(i);
        let f = g.cols(pre, hs, hs)?;
        let f = g.sigmoid(f);
        let c = g.cols(pre, 2 * hs, hs)?;
        let c = g.tanh(c);
        let o = g.cols(pre, 3 * hs, hs)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, m)?;
        let write = g.mul(i, c)?;
        let m = g.add(keep, write)?;
        let tm = g.tanh(m);
        let h = g.mul(o, tm)?;
        Ok((h, m))
    }

    /// `[h_final ; m_final]` of the answer LSTM for each row.
    pub fn answer_code(&mut self, answers: &[&[usize]]) -> Result<NodeId, ModelError> {
        let lstm = self
            .answer
            .ok_or_else(|| ModelError::Config(format!("variant {} has no answer encoder", self.config.variant)))?;
        let rows = answers.len();
        let steps = answers.iter().map(|a| a.len()).max().unwrap_or(0);
        if steps == 0 || answers.iter().any(|a| a.is_empty()) {
            return Err(ModelError::Input("empty answer".into()));
        }
        let hs = self.config.hidden_size;
        let mut h = self.zeros(rows, hs)?;
        let mut m = self.zeros(rows, hs)?;
        for t in 0..steps {
            let ids: Vec<usize> = answers.iter().map(|a| a.get(t).copied().unwrap_or(PAD)).collect();
            let x = self.g.gather(self.embed, &ids)?;
            let (nh, nm) = self.lstm_step(lstm, x, h, m)?;
            if answers.iter().all(|a| t < a.len()) {
                (h, m) = (nh, nm);
            } else {
                let mask: Vec<bool> = answers.iter().map(|a| t < a.len()).collect();
                h = self.g.select_rows(nh, h, &mask)?;
                m = self.g.select_rows(nm, m, &mask)?;
            }
        }
        Ok(self.g.concat(h, m)?)
    }

    pub fn encode(&mut self, conds: &[&Conditioning<T>]) -> Result<Encoded, ModelError> {
        let rows = conds.len();
        if rows == 0 {
            return Err(ModelError::Input("empty batch".into()));
        }
        for c in conds {
            c.check(&self.config)?;
        }
        let variant = self.config.variant;
        let a = match variant {
            Variant::ImageOnly => None,
            Variant::ImageAnswerType => {
                let n = AnswerType::ALL.len();
                let mut data = vec![T::zero(); rows * n];
                for (r, c) in conds.iter().enumerate() {
                    data[r * n + c.answer_type.index()] = T::one();
                }
                Some(self.g.input(Tensor::new(vec![rows, n], data)?))
            }
            _ => {
                let answers: Vec<&[usize]> = conds.iter().map(|c| c.answer.as_slice()).collect();
                Some(self.answer_code(&answers)?)
            }
        };

        let global = if variant.uses_image() {
            let k = self.config.global_dim;
            let data = conds.iter().flat_map(|c| c.global.data().iter().copied()).collect();
            Some(self.g.input(Tensor::new(vec![rows, k], data)?))
        } else {
            None
        };
        let h0 = self.glimpse(global, a)?;
        let m0 = self.zeros(rows, self.config.hidden_size)?;

        let za = match (a, self.ctx_answer) {
            (Some(a), Some(w)) if variant.answer_in_context() => {
                let za = self.g.linear(a, w)?;
                Some(self.g.add_bias(za, self.ctx_bias)?)
            }
            _ => None,
        };

        let (mut visual, mut visual_proj, mut pooled) = (None, None, None);
        if variant.uses_image() {
            let (l, d) = (self.config.locations(), self.config.depth());
            if let Some(att) = self.attention {
                let data = conds.iter().flat_map(|c| c.grid.data().iter().copied()).collect();
                let v = self.g.input(Tensor::new(vec![rows * l, d], data)?);
                let pv = self.g.linear(v, att.w_visual)?;
                visual_proj = Some(self.g.tanh(pv));
                visual = Some(v);
            } else {
                let inv = T::one() / T::from_usize_lossy(l);
                let mut data = vec![T::zero(); rows * d];
                for (r, c) in conds.iter().enumerate() {
                    for loc in 0..l {
                        for (o, &x) in data[r * d..(r + 1) * d].iter_mut().zip(c.grid.row(loc)) {
                            *o += x * inv;
                        }
                    }
                }
                pooled = Some(self.g.input(Tensor::new(vec![rows, d], data)?));
            }
        }
        Ok(Encoded { rows, h0, m0, za, visual, visual_proj, pooled })
    }

    /// Initial decoder state `tanh(W_ih I_s + W_ah a + b)`, with absent
    /// terms dropped.
    fn glimpse(&mut self, global: Option<NodeId>, a: Option<NodeId>) -> Result<NodeId, ModelError> {
        let mut acc = None;
        for (x, w) in [(global, self.glimpse_image), (a, self.glimpse_answer)] {
            if let (Some(x), Some(w)) = (x, w) {
                let term = self.g.linear(x, w)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => self.g.add(prev, term)?,
                });
            }
        }
        let acc = acc.ok_or_else(|| ModelError::Config("glimpse has no inputs".into()))?;
        let pre = self.g.add_bias(acc, self.glimpse_bias)?;
        Ok(self.g.tanh(pre))
    }

    /// Repeats encoded row `source[i]` into row `i`.
    pub fn expand(&mut self, enc: &Encoded, source: &[usize]) -> Result<Encoded, ModelError> {
        let l = self.config.locations();
        let grid_rows: Vec<usize> = source.iter().flat_map(|&r| (0..l).map(move |j| r * l + j)).collect();
        let mut gather = |id: Option<NodeId>, ids: &[usize]| -> Result<Option<NodeId>, ModelError> {
            id.map(|x| self.g.gather(x, ids)).transpose().map_err(Into::into)
        };
        Ok(Encoded {
            rows: source.len(),
            h0: gather(Some(enc.h0), source)?.unwrap(),
            m0: gather(Some(enc.m0), source)?.unwrap(),
            za: gather(enc.za, source)?,
            visual: gather(enc.visual, &grid_rows)?,
            visual_proj: gather(enc.visual_proj, &grid_rows)?,
            pooled: gather(enc.pooled, source)?,
        })
    }

    /// One decoder step for every row: feeds `tokens`, returns the new state
    /// and next-word logits.
    pub fn step(&mut self, enc: &Encoded, h: NodeId, m: NodeId, tokens: &[usize]) -> Result<StepOut, ModelError> {
        if tokens.len() != enc.rows {
            return Err(ModelError::Input(format!("{} tokens for {} rows", tokens.len(), enc.rows)));
        }
        let x = self.g.gather(self.embed, tokens)?;
        let (h, m) = self.lstm_step(self.decoder, x, h, m)?;

        let zh = self.g.linear(h, self.ctx_hidden)?;
        let zpre = match enc.za {
            Some(za) => self.g.add(zh, za)?,
            None => self.g.add_bias(zh, self.ctx_bias)?,
        };
        let z = self.g.relu(zpre);

        let (mut alpha, mut c) = (None, enc.pooled);
        if let (Some(att), Some(v), Some(pv)) = (self.attention, enc.visual, enc.visual_proj) {
            let l = self.config.locations();
            let g = &mut self.g;
            let tz = g.linear(z, att.w_context)?;
            let tz = g.tanh(tz);
            let joint = g.broadcast_mul(pv, tz, l)?;
            let f = g.linear(joint, att.u)?;
            let f = g.tanh(f);
            let scores = g.group_score(f, att.p, l)?;
            let a = g.softmax_rows(scores);
            c = Some(g.weighted_sum(a, v)?);
            alpha = Some(a);
        }

        let g = &mut self.g;
        let tz = g.linear(z, self.co_context)?;
        let tz = g.tanh(tz);
        let fused = match (c, self.co_visual) {
            (Some(c), Some(w)) => {
                let tc = g.linear(c, w)?;
                let tc = g.tanh(tc);
                g.mul(tc, tz)?
            }
            _ => tz,
        };
        let gt = g.linear(fused, self.co_u)?;
        let gt = g.tanh(gt);
        let logits = g.affine(gt, self.out_w, self.out_b)?;
        Ok(StepOut { h, m, z, alpha, c, g: gt, logits })
    }

    /// Teacher-forced unroll: step `t` feeds bos then `questions[r][t-1]`,
    /// padding rows that have already ended. Runs `max_len + 1` steps.
    pub fn unroll(&mut self, enc: &Encoded, questions: &[&[usize]]) -> Result<Vec<StepOut>, ModelError> {
        let steps = questions.iter().map(|q| q.len()).max().unwrap_or(0) + 1;
        let (mut h, mut m) = (enc.h0, enc.m0);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let tokens: Vec<usize> = questions
                .iter()
                .map(|q| if t == 0 { BOS } else { q.get(t - 1).copied().unwrap_or(PAD) })
                .collect();
            let out = self.step(enc, h, m, &tokens)?;
            (h, m) = (out.h, out.m);
            outs.push(out);
        }
        Ok(outs)
    }
}
