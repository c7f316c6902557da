//! The DAMF head stack on top of the text encoder: a linear
//! domain-invariant transformation, the moral-foundation classifier, the
//! adversarial domain classifier behind gradient reversal, and the
//! reconstruction head.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{frobenius_to_identity, Mat, ParamId, ParamStore, Tape, Var};
use crate::corpus::NUM_CLASSES;
use crate::encoder::TransformerEncoder;
use crate::error::{Error, Result};

/// Training mode applies dropout with masks drawn from the given RNG.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Dense index over every domain of an experiment, including the target.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRegistry {
    names: Vec<String>,
}

impl DomainRegistry {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn init_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

fn row(x: &Array1<f64>) -> Mat {
    x.clone().insert_axis(ndarray::Axis(0))
}

/// `x_trans = W_trans x`, no bias, no activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformLayer {
    pub w: ParamId,
    pub dim: usize,
}

impl TransformLayer {
    /// Identity plus N(0, noise_std^2) entries.
    pub fn init(store: &mut ParamStore, dim: usize, noise_std: f64, rng: &mut impl Rng) -> Self {
        let w = Mat::eye(dim) + init_normal(rng, dim, dim, noise_std);
        Self {
            w: store.add("transform.w", w),
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        tape.matmul_t(x, w)
    }

    pub fn transform(&self, store: &ParamStore, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(store.get(self.w).dot(x))
    }

    /// `||W_trans - I||_F^2`.
    pub fn regularizer(&self, store: &ParamStore) -> f64 {
        frobenius_to_identity(store.get(self.w))
    }

    pub fn regularizer_var(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let w = tape.param(store, self.w);
        tape.dist_to_identity(w)
    }
}

/// Linear, ReLU, dropout, linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub dropout: f64,
}

impl FeedForwardHead {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), init_normal(rng, input, hidden, 1.0 / (input as f64).sqrt())),
            b1: store.add(format!("{prefix}.b1"), Mat::zeros((1, hidden))),
            w2: store.add(format!("{prefix}.w2"), init_normal(rng, hidden, output, 1.0 / (hidden as f64).sqrt())),
            b2: store.add(format!("{prefix}.b2"), Mat::zeros((1, output))),
            input,
            hidden,
            output,
            dropout,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode<'_>) -> Var {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let h = tape.matmul(x, w1);
        let h = tape.add_bias(h, b1);
        let h = tape.relu(h);
        let h = dropout(tape, h, self.dropout, mode);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let o = tape.matmul(h, w2);
        tape.add_bias(o, b2)
    }
}

/// Inverted dropout; identity in evaluation mode or at rate 0.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode<'_>) -> Var {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let dim = tape.value(x).dim();
            let mask = Mat::from_shape_fn(dim, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

/// `tanh(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionHead {
    pub w: ParamId,
    pub b: ParamId,
    pub dim: usize,
}

impl ReconstructionHead {
    pub fn init(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add("reconstruct.w", init_normal(rng, dim, dim, 1.0 / (dim as f64).sqrt())),
            b: store.add("reconstruct.b", Mat::zeros((1, dim))),
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul_t(x, w);
        let h = tape.add_bias(h, b);
        tape.tanh(h)
    }

    /// Mean over components and rows of `(tanh(W x + b) - tanh(x_orig))^2`.
    pub fn loss_var(&self, tape: &mut Tape, store: &ParamStore, x: Var, x_orig: &Mat) -> Var {
        let r = self.forward(tape, store, x);
        tape.mse(r, x_orig.mapv(f64::tanh))
    }

    pub fn reconstruct(&self, store: &ParamStore, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x.len())?;
        let mut tape = Tape::new();
        let xv = tape.constant(row(x));
        let r = self.forward(&mut tape, store, xv);
        Ok(tape.value(r).row(0).to_owned())
    }

    pub fn reconstruction_loss(&self, store: &ParamStore, x: &Array1<f64>, x_orig: &Array1<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, x_orig.len())?;
        let mut tape = Tape::new();
        let xv = tape.constant(row(x));
        let l = self.loss_var(&mut tape, store, xv, &row(x_orig));
        Ok(tape.scalar_value(l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamfConfig {
    /// Hidden width of both classifier heads; `None` uses the encoder width.
    pub head_hidden: Option<usize>,
    pub dropout: f64,
    /// `false` drops the transformation layer entirely.
    pub use_transform: bool,
    pub transform_init_noise: f64,
}

impl Default for DamfConfig {
    fn default() -> Self {
        Self {
            head_hidden: None,
            dropout: 0.3,
            use_transform: true,
            transform_init_noise: 0.01,
        }
    }
}

/// Encoder plus the four DAMF heads, all parameters in one store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamfModel {
    pub store: ParamStore,
    pub encoder: TransformerEncoder,
    pub transform: Option<TransformLayer>,
    pub mf_head: FeedForwardHead,
    pub domain_head: FeedForwardHead,
    pub recon_head: ReconstructionHead,
    pub domains: DomainRegistry,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    pub x_enc: Var,
    pub x_trans: Var,
}

impl DamfModel {
    /// Adds the heads on top of an initialized encoder.
    pub fn init(
        mut store: ParamStore,
        encoder: TransformerEncoder,
        domains: DomainRegistry,
        config: &DamfConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let h = encoder.hidden_size();
        let k = config.head_hidden.unwrap_or(h);
        let d = domains.len();
        let transform = config
            .use_transform
            .then(|| TransformLayer::init(&mut store, h, config.transform_init_noise, rng));
        let mf_head = FeedForwardHead::init(&mut store, "mf_head", h + d, k, NUM_CLASSES, config.dropout, rng);
        let domain_head = FeedForwardHead::init(&mut store, "domain_head", h, k, d, config.dropout, rng);
        let recon_head = ReconstructionHead::init(&mut store, h, rng);
        Self {
            store,
            encoder,
            transform,
            mf_head,
            domain_head,
            recon_head,
            domains,
        }
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder.hidden_size()
    }

    fn check_domain(&self, index: usize) -> Result<()> {
        if index < self.num_domains() {
            Ok(())
        } else {
            Err(Error::DomainOutOfRange {
                index,
                num_domains: self.num_domains(),
            })
        }
    }

    pub fn one_hot(&self, domains: &[usize]) -> Result<Mat> {
        let d = self.num_domains();
        let mut m = Mat::zeros((domains.len(), d));
        for (i, &idx) in domains.iter().enumerate() {
            self.check_domain(idx)?;
            m[[i, idx]] = 1.0;
        }
        Ok(m)
    }

    /// Applies the transformation layer if present.
    pub fn transform_var(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        match &self.transform {
            Some(t) => t.forward(tape, store, x),
            None => x,
        }
    }

    /// MF logits for rows of `x_trans` tagged with their domain index.
    pub fn mf_forward_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_trans: Var,
        domains: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let onehot = tape.constant(self.one_hot(domains)?);
        let input = tape.concat_cols(x_trans, onehot);
        Ok(self.mf_head.forward(tape, store, input, mode))
    }

    /// Domain logits behind a gradient reversal layer.
    pub fn domain_forward_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_trans: Var,
        lambda_d: f64,
        mode: &mut Mode<'_>,
    ) -> Var {
        let reversed = tape.grad_reverse(x_trans, lambda_d);
        self.domain_head.forward(tape, store, reversed, mode)
    }

    pub fn transform(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_dim(self.hidden_size(), x.len())?;
        match &self.transform {
            Some(t) => t.transform(&self.store, x),
            None => Ok(x.clone()),
        }
    }

    /// Zero when the transformation layer is disabled.
    pub fn transform_regularizer(&self) -> f64 {
        self.transform.as_ref().map_or(0.0, |t| t.regularizer(&self.store))
    }

    /// Evaluation-mode MF logits for one transformed embedding.
    pub fn mf_forward(&self, x_trans: &Array1<f64>, domain: usize) -> Result<[f64; NUM_CLASSES]> {
        check_dim(self.hidden_size(), x_trans.len())?;
        self.check_domain(domain)?;
        let mut tape = Tape::new();
        let x = tape.constant(row(x_trans));
        let out = self.mf_forward_var(&mut tape, &self.store, x, &[domain], &mut Mode::Eval)?;
        let mut logits = [0.0; NUM_CLASSES];
        for (l, v) in logits.iter_mut().zip(tape.value(out).iter()) {
            *l = *v;
        }
        Ok(logits)
    }

    pub fn domain_forward(&self, x_trans: &Array1<f64>, lambda_d: f64) -> Result<Array1<f64>> {
        check_dim(self.hidden_size(), x_trans.len())?;
        let mut tape = Tape::new();
        let x = tape.constant(row(x_trans));
        let out = self.domain_forward_var(&mut tape, &self.store, x, lambda_d, &mut Mode::Eval);
        Ok(tape.value(out).row(0).to_owned())
    }

    pub fn reconstruct(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.recon_head.reconstruct(&self.store, x)
    }

    pub fn reconstruction_loss(&self, x: &Array1<f64>, x_orig: &Array1<f64>) -> Result<f64> {
        self.recon_head.reconstruction_loss(&self.store, x, x_orig)
    }

    /// Encoder and transformation outputs for a batch.
    pub fn encode_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seqs: &[&crate::encoder::TokenSequence],
    ) -> Result<Forward> {
        let x_enc = self.encoder.forward(tape, store, seqs)?;
        let x_trans = self.transform_var(tape, store, x_enc);
        Ok(Forward { x_enc, x_trans })
    }

    /// Evaluation-mode transformed embeddings, `n x H`.
    pub fn features(&self, seqs: &[crate::encoder::TokenSequence]) -> Result<Mat> {
        let enc = self.encoder.encode_all(&self.store, seqs)?;
        Ok(match &self.transform {
            Some(t) => enc.dot(&self.store.get(t.w).t()),
            None => enc,
        })
    }

    /// Evaluation-mode MF logits for a list of sequences sharing one domain.
    pub fn predict_logits(&self, seqs: &[crate::encoder::TokenSequence], domain: usize) -> Result<Mat> {
        self.check_domain(domain)?;
        let mut out = Mat::zeros((seqs.len(), NUM_CLASSES));
        for (chunk_idx, chunk) in seqs.chunks(128).enumerate() {
            let refs: Vec<_> = chunk.iter().collect();
            let mut tape = Tape::new();
            let f = self.encode_var(&mut tape, &self.store, &refs)?;
            let logits = self.mf_forward_var(&mut tape, &self.store, f.x_trans, &vec![domain; chunk.len()], &mut Mode::Eval)?;
            for (i, r) in tape.value(logits).outer_iter().enumerate() {
                out.row_mut(chunk_idx * 128 + i).assign(&r);
            }
        }
        Ok(out)
    }

    pub fn head_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(t) = &self.transform {
            ids.push(t.w);
        }
        ids.extend(self.mf_head.param_ids());
        ids.extend(self.domain_head.param_ids());
        ids.extend([self.recon_head.w, self.recon_head.b]);
        ids
    }
}

/// Encoder with dropout and a single linear prediction layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub store: ParamStore,
    pub encoder: TransformerEncoder,
    pub w: ParamId,
    pub b: ParamId,
    pub dropout: f64,
}

impl BaselineModel {
    pub fn init(mut store: ParamStore, encoder: TransformerEncoder, dropout: f64, rng: &mut impl Rng) -> Self {
        let h = encoder.hidden_size();
        let w = store.add("linear.w", init_normal(rng, h, NUM_CLASSES, 1.0 / (h as f64).sqrt()));
        let b = store.add("linear.b", Mat::zeros((1, NUM_CLASSES)));
        Self {
            store,
            encoder,
            w,
            b,
            dropout,
        }
    }

    pub fn forward_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seqs: &[&crate::encoder::TokenSequence],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let x = self.encoder.forward(tape, store, seqs)?;
        let x = dropout(tape, x, self.dropout, mode);
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let o = tape.matmul(x, w);
        Ok(tape.add_bias(o, b))
    }

    pub fn predict_logits(&self, seqs: &[crate::encoder::TokenSequence]) -> Result<Mat> {
        let mut out = Mat::zeros((seqs.len(), NUM_CLASSES));
        for (chunk_idx, chunk) in seqs.chunks(128).enumerate() {
            let refs: Vec<_> = chunk.iter().collect();
            let mut tape = Tape::new();
            let logits = self.forward_var(&mut tape, &self.store, &refs, &mut Mode::Eval)?;
            for (i, r) in tape.value(logits).outer_iter().enumerate() {
                out.row_mut(chunk_idx * 128 + i).assign(&r);
            }
        }
        Ok(out)
    }

    pub fn features(&self, seqs: &[crate::encoder::TokenSequence]) -> Result<Mat> {
        self.encoder.encode_all(&self.store, seqs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;
    use crate::encoder::{EncoderConfig, Vocab};
    use rand::SeedableRng;

    fn model(h: usize, d: usize) -> DamfModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let config = EncoderConfig {
            hidden_size: h,
            ffn_size: 2 * h,
            max_len: 8,
            num_heads: 1,
            ..EncoderConfig::tiny()
        };
        let encoder = TransformerEncoder::init(&mut store, config, Vocab::build(["a b c d e"]), &mut rng).unwrap();
        let names: Vec<String> = (0..d).map(|i| format!("d{i}")).collect();
        DamfModel::init(store, encoder, DomainRegistry::new(names), &DamfConfig::default(), &mut rng)
    }

    fn set_transform(m: &mut DamfModel, w: Mat) {
        let id = m.transform.as_ref().unwrap().w;
        *m.store.get_mut(id) = w;
    }

    fn zero_head(m: &mut DamfModel, head: &FeedForwardHead) {
        for id in head.param_ids() {
            m.store.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn transform_identity_and_scaling() {
        let mut m = model(4, 2);
        set_transform(&mut m, Mat::eye(4));
        let x = Array1::from(vec![0.3, -1.0, 2.0, 0.5]);
        assert_eq!(m.transform(&x).unwrap(), x);
        set_transform(&mut m, Mat::eye(4) * 2.0);
        let e0 = Array1::from(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.transform(&e0).unwrap(), Array1::from(vec![2.0, 0.0, 0.0, 0.0]));
        assert!(matches!(
            m.transform(&Array1::zeros(3)),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn transform_matches_matvec_oracle() {
        let m = model(6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let w = m.store.get(m.transform.as_ref().unwrap().w);
        let got = m.transform(&x).unwrap();
        for i in 0..6 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += w[[i, j]] * x[j];
            }
            assert!((got[i] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn transform_regularizer_values() {
        let mut m = model(3, 2);
        set_transform(&mut m, Mat::eye(3));
        assert_eq!(m.transform_regularizer(), 0.0);
        let mut w = Mat::eye(3);
        w[[0, 0]] = 1.1;
        set_transform(&mut m, w);
        assert!((m.transform_regularizer() - 0.01).abs() < 1e-12);
        set_transform(&mut m, Mat::zeros((3, 3)));
        assert!((m.transform_regularizer() - 3.0).abs() < 1e-12);
        let mut w = Mat::eye(3);
        w[[2, 1]] = 1e-9;
        set_transform(&mut m, w);
        assert!(m.transform_regularizer() > 0.0);
    }

    #[test]
    fn mf_forward_zero_weights_and_eval_determinism() {
        let mut m = model(4, 3);
        let x = Array1::from(vec![0.2, 0.1, -0.4, 1.0]);
        let a = m.mf_forward(&x, 1).unwrap();
        assert_eq!(a, m.mf_forward(&x, 1).unwrap());
        let head = m.mf_head.clone();
        zero_head(&mut m, &head);
        assert_eq!(m.mf_forward(&x, 2).unwrap(), [0.0; NUM_CLASSES]);
        assert!(matches!(m.mf_forward(&x, 3), Err(Error::DomainOutOfRange { index: 3, num_domains: 3 })));
    }

    #[test]
    fn mf_forward_hand_computed() {
        // Hidden width 1: h = relu(w1 . [x; onehot] + b1); logit_c = w2_c h + b2_c.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = model(2, 2);
        m.mf_head = FeedForwardHead::init(&mut m.store, "mf1", 4, 1, NUM_CLASSES, 0.3, &mut rng);
        let w1 = Mat::from_shape_vec((4, 1), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        *m.store.get_mut(m.mf_head.w1) = w1;
        *m.store.get_mut(m.mf_head.b1) = Mat::from_elem((1, 1), 0.1);
        *m.store.get_mut(m.mf_head.w2) = Mat::from_shape_fn((1, NUM_CLASSES), |(_, c)| c as f64 - 4.0);
        *m.store.get_mut(m.mf_head.b2) = Mat::from_shape_fn((1, NUM_CLASSES), |(_, c)| 0.01 * c as f64);
        let x = Array1::from(vec![1.0, 0.2]);
        // domain 1: 0.5*1 - 1*0.2 + 0.25 + 0.1 = 0.65
        let logits = m.mf_forward(&x, 1).unwrap();
        for (c, l) in logits.iter().enumerate() {
            let expected = (c as f64 - 4.0) * 0.65 + 0.01 * c as f64;
            assert!((l - expected).abs() < 1e-6);
        }
        // domain 0: 0.5 - 0.2 + 2.0 + 0.1 = 2.4
        let logits = m.mf_forward(&x, 0).unwrap();
        assert!((logits[0] - (-4.0 * 2.4)).abs() < 1e-6);
    }

    #[test]
    fn domain_forward_independent_of_lambda() {
        let mut m = model(4, 3);
        let x = Array1::from(vec![0.3, -0.2, 0.7, 0.1]);
        assert_eq!(m.domain_forward(&x, 0.0).unwrap(), m.domain_forward(&x, 1.0).unwrap());
        let head = m.domain_head.clone();
        zero_head(&mut m, &head);
        let logits = m.domain_forward(&x, 0.5).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for v in logits.iter() {
            assert!((v.exp() / z - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_values() {
        let mut m = model(3, 2);
        let x = Array1::from(vec![0.5, 0.5, 0.5]);
        m.store.get_mut(m.recon_head.w).fill(0.0);
        assert_eq!(m.reconstruct(&x).unwrap(), Array1::<f64>::zeros(3));
        *m.store.get_mut(m.recon_head.w) = Mat::eye(3);
        let r = m.reconstruct(&x).unwrap();
        for v in r.iter() {
            assert!((v - 0.46212).abs() < 1e-5);
        }
        assert!(m.reconstruction_loss(&x, &x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn reconstruction_loss_two_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let head = ReconstructionHead::init(&mut store, 2, &mut rng);
        store.get_mut(head.w).fill(0.0);
        // tanh(x_orig) = (1, 1) exactly in floating point for large inputs.
        let x_orig = Array1::from(vec![40.0, 40.0]);
        let loss = head.reconstruction_loss(&store, &Array1::from(vec![3.0, -1.0]), &x_orig).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_bounded() {
        let m = model(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(4, |_| rng.random_range(-50.0..50.0));
            assert!(m.reconstruct(&x).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    fn full_loss(m: &DamfModel, s: &ParamStore, t: &mut Tape, lambda: f64) -> Var {
        let seqs = [m.encoder.tokenize("a b c"), m.encoder.tokenize("d e"), m.encoder.tokenize("a e")];
        let refs: Vec<_> = seqs.iter().collect();
        let f = m.encode_var(t, s, &refs).unwrap();
        let targets = Mat::from_shape_fn((3, NUM_CLASSES), |(i, c)| ((i + c) % 3 == 0) as u8 as f64);
        let logits = m.mf_forward_var(t, s, f.x_trans, &[0, 1, 1], &mut Mode::Eval).unwrap();
        let weights = [2.0; NUM_CLASSES];
        let l_mf = t.weighted_bce(logits, targets, &weights);
        let dl = m.domain_forward_var(t, s, f.x_trans, lambda, &mut Mode::Eval);
        let l_d = t.softmax_ce(dl, vec![0, 1, 0]);
        let x_orig = Mat::from_shape_fn((3, m.hidden_size()), |(i, j)| (i as f64 - j as f64) * 0.1);
        let l_rec = m.recon_head.loss_var(t, s, f.x_enc, &x_orig);
        let l_trans = m.transform.as_ref().unwrap().regularizer_var(t, s);
        t.weighted_sum(&[(l_mf, 1.0), (l_d, 1.0), (l_rec, 0.5), (l_trans, 0.1)])
    }

    #[test]
    fn every_head_matches_finite_differences() {
        // A GRL with lambda = -1 passes gradients through unchanged, so the
        // analytic gradient of the summed loss is directly comparable.
        let m = model(4, 2);
        let mut store = m.store.clone();
        let ids: Vec<ParamId> = store.ids().collect();
        let err = max_rel_error(&mut store, &ids, 1e-4, |s, t| full_loss(&m, s, t, -1.0));
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn grl_flips_encoder_gradient() {
        let m = model(4, 3);
        let seqs = [m.encoder.tokenize("a b"), m.encoder.tokenize("c d e")];
        let refs: Vec<_> = seqs.iter().collect();
        let grads = |lambda: f64| {
            let mut t = Tape::new();
            let f = m.encode_var(&mut t, &m.store, &refs).unwrap();
            let dl = m.domain_forward_var(&mut t, &m.store, f.x_trans, lambda, &mut Mode::Eval);
            let l = t.softmax_ce(dl, vec![0, 2]);
            t.backward(l);
            t.param_grads()
        };
        let pos = grads(0.8);
        let neg = grads(-0.8);
        let plain = grads(-1.0);
        let enc: std::collections::HashSet<ParamId> = m.encoder.param_ids().into_iter().collect();
        for ((id, a), (_, b)) in pos.iter().zip(neg.iter()) {
            if enc.contains(id) || Some(*id) == m.transform.as_ref().map(|t| t.w) {
                assert!((a + b).iter().all(|v| v.abs() < 1e-6));
            } else {
                assert!((a - b).iter().all(|v| v.abs() < 1e-12), "head grads must not depend on lambda");
            }
        }
        // lambda = -1 reverses nothing: GRL(-1) == plain backprop; lambda scales linearly.
        for ((id, a), (_, p)) in pos.iter().zip(plain.iter()) {
            if enc.contains(id) {
                let expected = p * (-0.8);
                assert!((a - &expected).iter().all(|v| v.abs() < 1e-9));
            }
        }
    }

    #[test]
    fn zero_lambda_blocks_adversary_gradient() {
        let m = model(4, 2);
        let seqs = [m.encoder.tokenize("a b")];
        let refs: Vec<_> = seqs.iter().collect();
        let mut t = Tape::new();
        let f = m.encode_var(&mut t, &m.store, &refs).unwrap();
        let dl = m.domain_forward_var(&mut t, &m.store, f.x_trans, 0.0, &mut Mode::Eval);
        let l = t.softmax_ce(dl, vec![1]);
        t.backward(l);
        for (id, g) in t.param_grads() {
            if m.encoder.param_ids().contains(&id) {
                assert!(g.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let m = model(4, 2);
        let seqs = [m.encoder.tokenize("a b c")];
        let refs: Vec<_> = seqs.iter().collect();
        let run = |mode: &mut Mode<'_>| {
            let mut t = Tape::new();
            let f = m.encode_var(&mut t, &m.store, &refs).unwrap();
            let o = m.mf_forward_var(&mut t, &m.store, f.x_trans, &[0], mode).unwrap();
            t.value(o).clone()
        };
        assert_eq!(run(&mut Mode::Eval), run(&mut Mode::Eval));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = run(&mut Mode::Train(&mut rng));
        let b = run(&mut Mode::Train(&mut rng));
        assert_ne!(a, b);
    }
}
