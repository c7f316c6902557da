//! Text encoders: tokenization and a pooled transformer embedding.
//!
//! The same [`TransformerEncoder`] serves both the trainable encoder and the
//! frozen reference encoder; the reference simply reads a snapshot of the
//! parameter store taken before adversarial training.

mod tokenizer;

use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use tokenizer::{split_words, Vocab, CLS, PAD, UNK};

use crate::autodiff::{Mat, ParamId, ParamStore, SeqLayout, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    PretrainedTransformer,
    TinyTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    FirstToken,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden_size: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    /// Serialized encoder weights (pretrained kind only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary file (pretrained kind only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl EncoderConfig {
    /// Two layers, width 32, mean pooling.
    pub fn tiny() -> Self {
        Self {
            kind: EncoderKind::TinyTransformer,
            hidden_size: 32,
            max_len: 50,
            pooling: Pooling::Mean,
            num_layers: 2,
            num_heads: 2,
            ffn_size: 64,
            checkpoint: None,
            vocab: None,
        }
    }

    pub fn pretrained(checkpoint: PathBuf, vocab: PathBuf) -> Self {
        Self {
            kind: EncoderKind::PretrainedTransformer,
            pooling: Pooling::FirstToken,
            checkpoint: Some(checkpoint),
            vocab: Some(vocab),
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden_size == 0 {
            errs.push("encoder hidden_size must be > 0".to_string());
        }
        if self.max_len == 0 {
            errs.push("encoder max_len must be > 0".to_string());
        }
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads.max(1)) {
            errs.push("encoder num_heads must divide hidden_size".to_string());
        }
        if self.kind == EncoderKind::PretrainedTransformer && (self.checkpoint.is_none() || self.vocab.is_none()) {
            errs.push("pretrained encoder needs checkpoint and vocab paths".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Token ids padded with [`PAD`] to `max_len`; `length` counts real tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    pub length: usize,
}

impl TokenSequence {
    pub fn real(&self) -> &[usize] {
        &self.token_ids[..self.length]
    }
}

/// `[CLS]` followed by word ids, truncated to `max_len` and padded.
pub fn tokenize_truncate(text: &str, vocab: &Vocab, config: &EncoderConfig) -> TokenSequence {
    let mut ids = Vec::with_capacity(config.max_len);
    ids.push(CLS);
    ids.extend(split_words(text).iter().map(|w| vocab.id(w)));
    ids.truncate(config.max_len);
    let length = ids.len();
    ids.resize(config.max_len, PAD);
    TokenSequence { token_ids: ids, length }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm transformer encoder with learned positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerEncoder {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerParams>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl TransformerEncoder {
    /// Registers freshly initialized encoder parameters in `store`.
    pub fn init(store: &mut ParamStore, config: EncoderConfig, vocab: Vocab, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let f = config.ffn_size;
        let lin = |rng: &mut _, i: usize, o: usize| normal(rng, i, o, 1.0 / (i as f64).sqrt());
        let tok_emb = store.add("encoder.tok_emb", normal(rng, vocab.len(), h, 1.0));
        let pos_emb = store.add("encoder.pos_emb", normal(rng, config.max_len, h, 0.1));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = |name: &str| format!("encoder.layer{l}.{name}");
            layers.push(LayerParams {
                ln1_g: store.add(p("ln1_g"), Mat::ones((1, h))),
                ln1_b: store.add(p("ln1_b"), Mat::zeros((1, h))),
                wq: store.add(p("wq"), lin(rng, h, h)),
                wk: store.add(p("wk"), lin(rng, h, h)),
                wv: store.add(p("wv"), lin(rng, h, h)),
                wo: store.add(p("wo"), lin(rng, h, h)),
                bo: store.add(p("bo"), Mat::zeros((1, h))),
                ln2_g: store.add(p("ln2_g"), Mat::ones((1, h))),
                ln2_b: store.add(p("ln2_b"), Mat::zeros((1, h))),
                w1: store.add(p("w1"), lin(rng, h, f)),
                b1: store.add(p("b1"), Mat::zeros((1, f))),
                w2: store.add(p("w2"), lin(rng, f, h)),
                b2: store.add(p("b2"), Mat::zeros((1, h))),
            });
        }
        let lnf_g = store.add("encoder.lnf_g", Mat::ones((1, h)));
        let lnf_b = store.add("encoder.lnf_b", Mat::zeros((1, h)));
        Ok(Self {
            config,
            vocab,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
        })
    }

    /// Builds an encoder whose weights come from a saved encoder file.
    pub fn from_pretrained(store: &mut ParamStore, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (ckpt, vocab_path) = match (&config.checkpoint, &config.vocab) {
            (Some(c), Some(v)) => (c.clone(), v.clone()),
            _ => return Err(Error::Config(vec!["pretrained encoder needs checkpoint and vocab".into()])),
        };
        let vocab = Vocab::load(&vocab_path)?;
        let body = std::fs::read_to_string(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let saved: ParamStore = serde_json::from_str(&body)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let enc = Self::init(store, config, vocab, &mut rng)?;
        for id in enc.param_ids() {
            let name = store.name(id).to_string();
            let src = saved
                .find(&name)
                .ok_or_else(|| Error::invalid(format!("{}: missing `{name}`", ckpt.display())))?;
            let value = saved.get(src);
            if value.dim() != store.get(id).dim() {
                let (r, c) = value.dim();
                let (er, ec) = store.get(id).dim();
                return Err(Error::invalid(format!(
                    "{}: `{name}` is {r}x{c}, expected {er}x{ec}",
                    ckpt.display()
                )));
            }
            *store.get_mut(id) = value.clone();
        }
        Ok(enc)
    }

    /// Writes this encoder's weights and vocabulary for later `from_pretrained`.
    pub fn save_pretrained(&self, store: &ParamStore, checkpoint: &Path, vocab: &Path) -> Result<()> {
        let mut out = ParamStore::new();
        for id in self.param_ids() {
            out.add(store.name(id), store.get(id).clone());
        }
        let body = serde_json::to_string(&out)?;
        std::fs::write(checkpoint, body).map_err(|e| Error::io(checkpoint, e))?;
        self.vocab.save(vocab)
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok_emb, self.pos_emb];
        for l in &self.layers {
            ids.extend([
                l.ln1_g, l.ln1_b, l.wq, l.wk, l.wv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2, l.b2,
            ]);
        }
        ids.extend([self.lnf_g, self.lnf_b]);
        ids
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        tokenize_truncate(text, &self.vocab, &self.config)
    }

    fn check_store(&self, store: &ParamStore) -> Result<()> {
        let (v, h) = store.get(self.tok_emb).dim();
        if h != self.config.hidden_size {
            return Err(Error::DimensionMismatch {
                expected: self.config.hidden_size,
                actual: h,
            });
        }
        if v != self.vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vocab.len(),
                actual: v,
            });
        }
        Ok(())
    }

    /// Pooled embeddings for a batch, recorded on `tape`: `batch x H`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, seqs: &[&TokenSequence]) -> Result<Var> {
        self.check_store(store)?;
        let batch = seqs.len();
        let seq = seqs.iter().map(|s| s.length).max().unwrap_or(1).max(1);
        if seq > self.config.max_len {
            return Err(Error::DimensionMismatch {
                expected: self.config.max_len,
                actual: seq,
            });
        }
        let mut ids = Vec::with_capacity(batch * seq);
        let mut positions = Vec::with_capacity(batch * seq);
        let mut mask = Vec::with_capacity(batch * seq);
        for s in seqs {
            for t in 0..seq {
                let real = t < s.length;
                let id = if real { s.token_ids[t] } else { PAD };
                if id >= self.vocab.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.vocab.len(),
                        actual: id + 1,
                    });
                }
                ids.push(id);
                positions.push(t);
                mask.push(real);
            }
        }
        let layout = SeqLayout { batch, seq, mask };
        let heads = self.config.num_heads;

        let tok = tape.param(store, self.tok_emb);
        let pos = tape.param(store, self.pos_emb);
        let te = tape.rows(tok, ids);
        let pe = tape.rows(pos, positions);
        let mut x = tape.add(te, pe);
        for l in &self.layers {
            let g = tape.param(store, l.ln1_g);
            let b = tape.param(store, l.ln1_b);
            let h = tape.layer_norm(x, g, b);
            let wq = tape.param(store, l.wq);
            let wk = tape.param(store, l.wk);
            let wv = tape.param(store, l.wv);
            let q = tape.matmul(h, wq);
            let k = tape.matmul(h, wk);
            let v = tape.matmul(h, wv);
            let a = tape.attention(q, k, v, &layout, heads);
            let wo = tape.param(store, l.wo);
            let bo = tape.param(store, l.bo);
            let a = tape.matmul(a, wo);
            let a = tape.add_bias(a, bo);
            x = tape.add(x, a);

            let g = tape.param(store, l.ln2_g);
            let b = tape.param(store, l.ln2_b);
            let h = tape.layer_norm(x, g, b);
            let w1 = tape.param(store, l.w1);
            let b1 = tape.param(store, l.b1);
            let w2 = tape.param(store, l.w2);
            let b2 = tape.param(store, l.b2);
            let f = tape.matmul(h, w1);
            let f = tape.add_bias(f, b1);
            let f = tape.relu(f);
            let f = tape.matmul(f, w2);
            let f = tape.add_bias(f, b2);
            x = tape.add(x, f);
        }
        let g = tape.param(store, self.lnf_g);
        let b = tape.param(store, self.lnf_b);
        let x = tape.layer_norm(x, g, b);
        let pooled = match self.config.pooling {
            Pooling::Mean => tape.mean_pool(x, &layout),
            Pooling::FirstToken => tape.rows(x, (0..batch).map(|b| b * seq).collect()),
        };
        Ok(pooled)
    }

    /// Evaluation-mode embedding of one sequence.
    pub fn encode(&self, store: &ParamStore, seq: &TokenSequence) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, store, &[seq])?;
        Ok(tape.value(v).row(0).to_owned())
    }

    /// Evaluation-mode embeddings, `n x H`, computed in chunks.
    pub fn encode_all(&self, store: &ParamStore, seqs: &[TokenSequence]) -> Result<Mat> {
        let mut out = Mat::zeros((seqs.len(), self.hidden_size()));
        for (chunk_idx, chunk) in seqs.chunks(128).enumerate() {
            let refs: Vec<&TokenSequence> = chunk.iter().collect();
            let mut tape = Tape::new();
            let v = self.forward(&mut tape, store, &refs)?;
            let base = chunk_idx * 128;
            for (i, row) in tape.value(v).outer_iter().enumerate() {
                out.row_mut(base + i).assign(&row);
            }
        }
        Ok(out)
    }
}

/// Frozen copy of the encoder parameters producing reconstruction targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEncoder {
    snapshot: ParamStore,
}

impl ReferenceEncoder {
    pub fn snapshot(store: &ParamStore) -> Self {
        Self {
            snapshot: store.clone(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.snapshot
    }
}

/// Reference embedding; errors when no snapshot has been taken yet.
pub fn encode_reference(
    encoder: &TransformerEncoder,
    reference: Option<&ReferenceEncoder>,
    seq: &TokenSequence,
) -> Result<Array1<f64>> {
    let reference = reference.ok_or(Error::MissingReference)?;
    encoder.encode(reference.store(), seq)
}
