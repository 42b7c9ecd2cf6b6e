//! Echo-training data flow: a pluggable sequence model produces text by
//! greedy decoding, a frozen text-to-codec model re-decodes that text into
//! pseudo-label speech tokens, and one training step evaluates the three
//! objectives and nudges the trainable pieces (denoising adapter plus the
//! unfrozen output heads) by plain gradient descent.
//!
//! The reference `ToyDecoder` replaces attention with a causal
//! mean-of-prefix aggregation; it exists to pin the data-flow contracts
//! (freezing, initialization, determinism), not to model language.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, cross_entropy_with_grad, denoising_loss, AdapterParams, LossBreakdown,
    Reduction, TokenDistribution,
};
use crate::matrix::Matrix;
use crate::unitseq::UnitSequence;

/// Next-step logits plus the hidden-state row that produced them.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Deterministic autoregressive model over a token vocabulary, optionally
/// conditioned on a matrix of external rows.
pub trait SeqModel {
    fn vocab_size(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn is_frozen(&self) -> bool;
    fn step(&self, prefix: &[u32], conditioning: Option<&Matrix>) -> Result<StepOutput>;
    /// Embeds conditioning token IDs through the frozen embedding table.
    fn embed_cond(&self, ids: &[u32]) -> Result<Matrix>;
    /// Fingerprint over every parameter; equal checksums mean equal models.
    fn param_checksum(&self) -> String;
}

#[derive(Debug, Clone, Copy)]
pub struct ToyDecoderConfig {
    pub vocab: usize,
    pub cond_vocab: usize,
    pub hidden: usize,
    pub cond_dim: usize,
}

/// Decoder-only toy model: frozen conditioning embeddings, a projection
/// into model width, one causal mean-of-prefix mixing layer, and a linear
/// output head.
#[derive(Debug, Clone)]
pub struct ToyDecoder {
    cfg: ToyDecoderConfig,
    cond_embed: Matrix,
    proj: Matrix,
    token_embed: Matrix,
    mix: Matrix,
    head: Matrix,
    frozen: bool,
    seed: u64,
}

fn seeded_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).expect("seeded matrix dims are positive")
}

impl ToyDecoder {
    pub fn new(cfg: ToyDecoderConfig, seed: u64) -> Result<Self> {
        if cfg.vocab == 0 || cfg.cond_vocab == 0 || cfg.hidden == 0 || cfg.cond_dim == 0 {
            return Err(Error::InvalidInput("toy decoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / (cfg.hidden as f64).sqrt();
        Ok(Self {
            cond_embed: seeded_matrix(&mut rng, cfg.cond_vocab, cfg.cond_dim, 0.5),
            proj: seeded_matrix(&mut rng, cfg.cond_dim, cfg.hidden, scale),
            token_embed: seeded_matrix(&mut rng, cfg.vocab, cfg.hidden, 0.5),
            mix: seeded_matrix(&mut rng, cfg.hidden, cfg.hidden, scale),
            head: seeded_matrix(&mut rng, cfg.hidden, cfg.vocab, scale),
            cfg,
            frozen: false,
            seed,
        })
    }

    /// Exact parameter copy of `source`, unfrozen so its head can train.
    pub fn initialized_from(source: &ToyDecoder) -> ToyDecoder {
        ToyDecoder { frozen: false, ..source.clone() }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> ToyDecoderConfig {
        self.cfg
    }

    /// One descent step on the output head.
    pub fn apply_head_gradient(&mut self, grad: &Matrix, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenViolation("attempted update of a frozen model".into()));
        }
        if grad.rows() != self.head.rows() || grad.cols() != self.head.cols() {
            return Err(Error::DimensionMismatch(format!(
                "head gradient {}x{} vs head {}x{}",
                grad.rows(),
                grad.cols(),
                self.head.rows(),
                self.head.cols()
            )));
        }
        for (p, &g) in self.head.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
        Ok(())
    }
}

impl SeqModel for ToyDecoder {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn hidden_dim(&self) -> usize {
        self.cfg.hidden
    }

    fn cond_dim(&self) -> usize {
        self.cfg.cond_dim
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn step(&self, prefix: &[u32], conditioning: Option<&Matrix>) -> Result<StepOutput> {
        if let Some(&bad) = prefix.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(Error::InvalidTarget { id: bad, vocab: self.cfg.vocab });
        }
        let mut pre = vec![0.0; self.cfg.hidden];

        if let Some(cond) = conditioning {
            if cond.cols() != self.cfg.cond_dim {
                return Err(Error::DimensionMismatch(format!(
                    "conditioning dim {} vs expected {}",
                    cond.cols(),
                    self.cfg.cond_dim
                )));
            }
            if cond.rows() > 0 {
                let mut mean = vec![0.0; self.cfg.cond_dim];
                for row in cond.iter_rows() {
                    for (m, &x) in mean.iter_mut().zip(row) {
                        *m += x;
                    }
                }
                let inv = 1.0 / cond.rows() as f64;
                for m in &mut mean {
                    *m *= inv;
                }
                for (p, x) in pre.iter_mut().zip(self.proj.vecmat(&mean)) {
                    *p += x;
                }
            }
        }

        if !prefix.is_empty() {
            let inv = 1.0 / prefix.len() as f64;
            for &t in prefix {
                for (p, &e) in pre.iter_mut().zip(self.token_embed.row(t as usize)) {
                    *p += e * inv;
                }
            }
        }

        let hidden: Vec<f64> = self.mix.vecmat(&pre).iter().map(|z| z.tanh()).collect();
        let logits = self.head.vecmat(&hidden);
        Ok(StepOutput { logits, hidden })
    }

    fn embed_cond(&self, ids: &[u32]) -> Result<Matrix> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.cfg.cond_vocab) {
            return Err(Error::InvalidTarget { id: bad, vocab: self.cfg.cond_vocab });
        }
        let mut data = Vec::with_capacity(ids.len() * self.cfg.cond_dim);
        for &t in ids {
            data.extend_from_slice(self.cond_embed.row(t as usize));
        }
        Matrix::new(ids.len(), self.cfg.cond_dim, data)
    }

    fn param_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for m in [&self.cond_embed, &self.proj, &self.token_embed, &self.mix, &self.head] {
            hasher.update((m.rows() as u64).to_le_bytes());
            hasher.update((m.cols() as u64).to_le_bytes());
            for &x in m.data() {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        to_hex(&hasher.finalize())
    }
}

pub fn adapter_checksum(adapter: &AdapterParams) -> String {
    let mut hasher = Sha256::new();
    for &x in &adapter.to_flat() {
        hasher.update(x.to_bits().to_le_bytes());
    }
    to_hex(&hasher.finalize())
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn argmax_lowest(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding: appends the argmax token each step (ties to the lowest
/// ID) until `eos` or `max_len`.
pub fn greedy_decode(
    model: &dyn SeqModel,
    conditioning: Option<&Matrix>,
    max_len: usize,
    eos: u32,
) -> Result<Vec<u32>> {
    Ok(greedy_decode_with_hidden(model, conditioning, max_len, eos)?.0)
}

/// Greedy decoding that also returns the hidden-state row behind each
/// emitted token.
pub fn greedy_decode_with_hidden(
    model: &dyn SeqModel,
    conditioning: Option<&Matrix>,
    max_len: usize,
    eos: u32,
) -> Result<(Vec<u32>, Matrix)> {
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    if eos as usize >= model.vocab_size() {
        return Err(Error::InvalidTarget { id: eos, vocab: model.vocab_size() });
    }
    let mut tokens: Vec<u32> = Vec::new();
    let mut hidden_rows: Vec<Vec<f64>> = Vec::new();
    while tokens.len() < max_len {
        let out = model.step(&tokens, conditioning)?;
        let next = argmax_lowest(&out.logits);
        tokens.push(next);
        hidden_rows.push(out.hidden);
        if next == eos {
            break;
        }
    }
    let hidden = rows_to_matrix(&hidden_rows, model.hidden_dim())?;
    Ok((tokens, hidden))
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    if rows.is_empty() {
        return Matrix::new(0, cols, vec![]);
    }
    Matrix::from_rows(rows)
}

/// One dialogue turn of echo-training data.
#[derive(Debug, Clone)]
pub struct PseudoLabelBatch {
    pub source_units: UnitSequence,
    /// Greedy text output of the sequence-to-text model, end marker removed.
    pub x_prime: Vec<u32>,
    /// Frozen text-to-codec decode of `x_prime`, end marker removed.
    pub y_prime: Vec<u32>,
    /// Hidden-state row per emitted text token.
    pub hidden: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeLimits {
    pub max_text_len: usize,
    pub text_eos: u32,
    pub max_codec_len: usize,
    pub codec_eos: u32,
}

fn strip_trailing(tokens: &mut Vec<u32>, eos: u32) -> bool {
    if tokens.last() == Some(&eos) {
        tokens.pop();
        true
    } else {
        false
    }
}

/// Runs the pseudo-label generation path: greedy text from the S2T model,
/// then a frozen text-to-codec decode of that text. The codec model's
/// checksum is verified unchanged.
pub fn make_pseudo_labels(
    s2t: &dyn SeqModel,
    t2c: &dyn SeqModel,
    input_units: &UnitSequence,
    limits: &DecodeLimits,
) -> Result<PseudoLabelBatch> {
    if !t2c.is_frozen() {
        return Err(Error::FrozenViolation(
            "text-to-codec module must be frozen during pseudo-label generation".into(),
        ));
    }
    let before = t2c.param_checksum();

    let cond = s2t.embed_cond(&input_units.units)?;
    let (mut x_prime, hidden_full) =
        greedy_decode_with_hidden(s2t, Some(&cond), limits.max_text_len, limits.text_eos)?;
    let stripped = strip_trailing(&mut x_prime, limits.text_eos);
    let keep = x_prime.len();
    let hidden = if stripped || keep < hidden_full.rows() {
        let rows: Vec<Vec<f64>> = (0..keep).map(|i| hidden_full.row(i).to_vec()).collect();
        rows_to_matrix(&rows, s2t.hidden_dim())?
    } else {
        hidden_full
    };

    let y_prime = if x_prime.is_empty() {
        Vec::new()
    } else {
        let t2c_cond = t2c.embed_cond(&x_prime)?;
        let mut y =
            greedy_decode(t2c, Some(&t2c_cond), limits.max_codec_len, limits.codec_eos)?;
        strip_trailing(&mut y, limits.codec_eos);
        y
    };

    if t2c.param_checksum() != before {
        return Err(Error::FrozenViolation(
            "text-to-codec parameters changed during pseudo-label generation".into(),
        ));
    }
    Ok(PseudoLabelBatch { source_units: input_units.clone(), x_prime, y_prime, hidden })
}

/// Teacher-forced cross entropy of `targets` under `model`, plus the
/// gradient with respect to the output head.
fn teacher_forced_loss(
    model: &ToyDecoder,
    conditioning: Option<&Matrix>,
    targets: &[u32],
) -> Result<(f64, Matrix)> {
    let vocab = model.vocab_size();
    let hid = model.hidden_dim();
    let mut head_grad = Matrix::zeros(hid, vocab);
    if targets.is_empty() {
        return Ok((0.0, head_grad));
    }
    let mut logit_rows = Vec::with_capacity(targets.len());
    let mut hidden_rows = Vec::with_capacity(targets.len());
    for i in 0..targets.len() {
        let out = model.step(&targets[..i], conditioning)?;
        logit_rows.push(out.logits);
        hidden_rows.push(out.hidden);
    }
    let dist = TokenDistribution::new(Matrix::from_rows(&logit_rows)?)?;
    let (loss, dlogits) = cross_entropy_with_grad(&dist, targets, Reduction::Sum)?;
    for (i, h) in hidden_rows.iter().enumerate() {
        let g = dlogits.row(i);
        for (p, &hp) in h.iter().enumerate() {
            let row = head_grad.row_mut(p);
            for (dst, &gj) in row.iter_mut().zip(g) {
                *dst += hp * gj;
            }
        }
    }
    Ok((loss, head_grad))
}

/// One Stage-III step: evaluates the echo, denoising, and S2T objectives on
/// a batch, then applies a plain gradient-descent update to the adapter
/// (weighted by lambda) and to the two trainable output heads. With
/// `lr == 0` nothing moves and the losses are still reported.
pub fn echo_training_step(
    batch: &PseudoLabelBatch,
    ground_truth_text: &[u32],
    s2t: &mut ToyDecoder,
    echo_decoder: &mut ToyDecoder,
    adapter: &mut AdapterParams,
    lambda: f64,
    lr: f64,
) -> Result<LossBreakdown> {
    if !lambda.is_finite() || !lr.is_finite() {
        return Err(Error::InvalidInput("lambda and lr must be finite".into()));
    }
    if batch.hidden.rows() != batch.x_prime.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} hidden rows vs {} text tokens",
            batch.hidden.rows(),
            batch.x_prime.len()
        )));
    }
    if batch.hidden.rows() > 0 && batch.hidden.cols() != adapter.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "hidden dim {} vs adapter input {}",
            batch.hidden.cols(),
            adapter.input_dim()
        )));
    }
    if adapter.output_dim() != echo_decoder.cond_dim() {
        return Err(Error::DimensionMismatch(format!(
            "adapter output {} vs echo conditioning dim {}",
            adapter.output_dim(),
            echo_decoder.cond_dim()
        )));
    }

    let n = batch.x_prime.len();

    // Echo objective: predict the pseudo-labels conditioned on the adapted
    // hidden states.
    let adapted = adapter.forward_matrix(&batch.hidden)?;
    let (echo, echo_head_grad) =
        teacher_forced_loss(echo_decoder, Some(&adapted), &batch.y_prime)?;

    // Denoising objective: align adapted rows with the frozen embeddings of
    // the text the model actually emitted.
    let (denoising, adapter_grad) = if n > 0 {
        let embeddings = echo_decoder.embed_cond(&batch.x_prime)?;
        denoising_loss(&batch.hidden, adapter, &embeddings, Reduction::Sum)?
    } else {
        (0.0, adapter.zeros_like())
    };

    // S2T objective: ground-truth text under the speech-conditioned model.
    let unit_cond = s2t.embed_cond(&batch.source_units.units)?;
    let (s2t_val, s2t_head_grad) =
        teacher_forced_loss(s2t, Some(&unit_cond), ground_truth_text)?;

    let breakdown = combined_loss(echo, denoising, s2t_val, lambda)?;

    if lr != 0.0 {
        adapter.apply_gradient(&adapter_grad, lr * lambda);
        echo_decoder.apply_head_gradient(&echo_head_grad, lr)?;
        s2t.apply_head_gradient(&s2t_head_grad, lr)?;
    }
    Ok(breakdown)
}

/// Configuration for the self-contained desk-scale run.
#[derive(Debug, Clone, Copy)]
pub struct HarnessConfig {
    pub unit_vocab: usize,
    pub text_vocab: usize,
    pub codec_vocab: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    pub adapter_hidden: usize,
    pub input_len: usize,
    pub ground_truth_len: usize,
    pub max_text_len: usize,
    pub max_codec_len: usize,
    pub lambda: f64,
    pub lr: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            unit_vocab: 24,
            text_vocab: 12,
            codec_vocab: 20,
            hidden: 8,
            cond_dim: 6,
            adapter_hidden: 32,
            input_len: 16,
            ground_truth_len: 6,
            max_text_len: 10,
            max_codec_len: 24,
            lambda: crate::losses::DEFAULT_LAMBDA,
            lr: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChecksumManifest {
    pub s2t: String,
    pub t2c: String,
    pub echo_decoder: String,
    pub adapter: String,
}

/// Bundles the three models, the adapter, and one synthetic dialogue turn.
pub struct StageThreeHarness {
    pub s2t: ToyDecoder,
    pub t2c: ToyDecoder,
    pub echo_decoder: ToyDecoder,
    pub adapter: AdapterParams,
    pub input_units: UnitSequence,
    pub ground_truth_text: Vec<u32>,
    cfg: HarnessConfig,
}

impl StageThreeHarness {
    pub fn new(seed: u64, cfg: HarnessConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next_seed = || rng.random::<u64>();

        let s2t = ToyDecoder::new(
            ToyDecoderConfig {
                vocab: cfg.text_vocab,
                cond_vocab: cfg.unit_vocab,
                hidden: cfg.hidden,
                cond_dim: cfg.cond_dim,
            },
            next_seed(),
        )?;
        let mut t2c = ToyDecoder::new(
            ToyDecoderConfig {
                vocab: cfg.codec_vocab,
                cond_vocab: cfg.text_vocab,
                hidden: cfg.hidden,
                cond_dim: cfg.cond_dim,
            },
            next_seed(),
        )?;
        t2c.freeze();
        let echo_decoder = ToyDecoder::initialized_from(&t2c);

        let adapter_seed = next_seed();
        let mut arng = ChaCha8Rng::seed_from_u64(adapter_seed);
        let adapter = AdapterParams::new(
            seeded_matrix(&mut arng, cfg.hidden, cfg.adapter_hidden, 0.4),
            vec![0.0; cfg.adapter_hidden],
            seeded_matrix(&mut arng, cfg.adapter_hidden, cfg.cond_dim, 0.4),
            vec![0.0; cfg.cond_dim],
        )?;

        let units: Vec<u32> =
            (0..cfg.input_len).map(|_| rng.random_range(0..cfg.unit_vocab as u32)).collect();
        let input_units = UnitSequence::new(units, cfg.unit_vocab as u32)?;
        let ground_truth_text: Vec<u32> = (0..cfg.ground_truth_len)
            .map(|_| rng.random_range(0..cfg.text_vocab as u32))
            .collect();

        Ok(Self { s2t, t2c, echo_decoder, adapter, input_units, ground_truth_text, cfg })
    }

    pub fn limits(&self) -> DecodeLimits {
        DecodeLimits {
            max_text_len: self.cfg.max_text_len,
            text_eos: 0,
            max_codec_len: self.cfg.max_codec_len,
            codec_eos: 0,
        }
    }

    pub fn make_batch(&self) -> Result<PseudoLabelBatch> {
        make_pseudo_labels(&self.s2t, &self.t2c, &self.input_units, &self.limits())
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        let batch = self.make_batch()?;
        let ground_truth = self.ground_truth_text.clone();
        echo_training_step(
            &batch,
            &ground_truth,
            &mut self.s2t,
            &mut self.echo_decoder,
            &mut self.adapter,
            self.cfg.lambda,
            self.cfg.lr,
        )
    }

    pub fn checksum_manifest(&self) -> ChecksumManifest {
        ChecksumManifest {
            s2t: self.s2t.param_checksum(),
            t2c: self.t2c.param_checksum(),
            echo_decoder: self.echo_decoder.param_checksum(),
            adapter: adapter_checksum(&self.adapter),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> ToyDecoder {
        ToyDecoder::new(
            ToyDecoderConfig { vocab: 5, cond_vocab: 7, hidden: 4, cond_dim: 3 },
            seed,
        )
        .unwrap()
    }

    /// Model whose logits always peak at a fixed token.
    struct ConstPeak {
        vocab: usize,
        peak: u32,
    }

    impl SeqModel for ConstPeak {
        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn hidden_dim(&self) -> usize {
            2
        }
        fn cond_dim(&self) -> usize {
            1
        }
        fn is_frozen(&self) -> bool {
            true
        }
        fn step(&self, _prefix: &[u32], _cond: Option<&Matrix>) -> Result<StepOutput> {
            let mut logits = vec![0.0; self.vocab];
            logits[self.peak as usize] = 5.0;
            Ok(StepOutput { logits, hidden: vec![0.0, 0.0] })
        }
        fn embed_cond(&self, ids: &[u32]) -> Result<Matrix> {
            Matrix::new(ids.len(), 1, vec![0.0; ids.len()])
        }
        fn param_checksum(&self) -> String {
            format!("constpeak-{}-{}", self.vocab, self.peak)
        }
    }

    #[test]
    fn eos_peaked_model_emits_single_eos() {
        let model = ConstPeak { vocab: 4, peak: 3 };
        let out = greedy_decode(&model, None, 10, 3).unwrap();
        assert_eq!(out, vec![3]);
    }

    #[test]
    fn constant_logits_tie_break_to_zero() {
        let model = ConstPeak { vocab: 4, peak: 0 };
        // peak at 0 with eos elsewhere: repeats 0 until max_len
        let out = greedy_decode(&model, None, 6, 3).unwrap();
        assert_eq!(out, vec![0; 6]);
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let model = tiny_model(12);
        let cond = model.embed_cond(&[1, 2, 3]).unwrap();
        let (a, ha) = greedy_decode_with_hidden(&model, Some(&cond), 8, 0).unwrap();
        let (b, hb) = greedy_decode_with_hidden(&model, Some(&cond), 8, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(a.len(), ha.rows());
    }

    #[test]
    fn pseudo_labels_match_standalone_redecode() {
        let s2t = tiny_model(3);
        let mut t2c = ToyDecoder::new(
            ToyDecoderConfig { vocab: 6, cond_vocab: 5, hidden: 4, cond_dim: 3 },
            99,
        )
        .unwrap();
        t2c.freeze();
        let units = UnitSequence::new(vec![1, 4, 2], 7).unwrap();
        let limits =
            DecodeLimits { max_text_len: 6, text_eos: 0, max_codec_len: 12, codec_eos: 0 };
        let batch = make_pseudo_labels(&s2t, &t2c, &units, &limits).unwrap();
        assert_eq!(batch.hidden.rows(), batch.x_prime.len());

        if !batch.x_prime.is_empty() {
            let cond = t2c.embed_cond(&batch.x_prime).unwrap();
            let mut y = greedy_decode(&t2c, Some(&cond), 12, 0).unwrap();
            if y.last() == Some(&0) {
                y.pop();
            }
            assert_eq!(y, batch.y_prime);
        }
    }

    #[test]
    fn unfrozen_t2c_is_rejected() {
        let s2t = tiny_model(3);
        let t2c = ToyDecoder::new(
            ToyDecoderConfig { vocab: 6, cond_vocab: 5, hidden: 4, cond_dim: 3 },
            99,
        )
        .unwrap();
        let units = UnitSequence::new(vec![1], 7).unwrap();
        let limits =
            DecodeLimits { max_text_len: 4, text_eos: 0, max_codec_len: 8, codec_eos: 0 };
        let err = make_pseudo_labels(&s2t, &t2c, &units, &limits).unwrap_err();
        assert_eq!(err.kind(), "FrozenViolation");
    }

    #[test]
    fn immediate_eos_yields_empty_batch() {
        // Peak at the eos token: x' strips to empty, y' and H stay empty.
        let s2t = ConstPeak { vocab: 4, peak: 0 };
        let t2c = ConstPeak { vocab: 4, peak: 0 };
        let units = UnitSequence::new(vec![0, 1], 7).unwrap();
        let limits =
            DecodeLimits { max_text_len: 4, text_eos: 0, max_codec_len: 8, codec_eos: 0 };
        let batch = make_pseudo_labels(&s2t, &t2c, &units, &limits).unwrap();
        assert!(batch.x_prime.is_empty());
        assert!(batch.y_prime.is_empty());
        assert_eq!(batch.hidden.rows(), 0);
    }

    #[test]
    fn echo_decoder_initialization_is_exact() {
        let mut t2c = tiny_model(5);
        t2c.freeze();
        let echo = ToyDecoder::initialized_from(&t2c);
        assert_eq!(echo.param_checksum(), t2c.param_checksum());
        assert!(!echo.is_frozen());
    }

    #[test]
    fn frozen_head_rejects_updates() {
        let mut model = tiny_model(1);
        model.freeze();
        let grad = Matrix::zeros(4, 5);
        assert_eq!(model.apply_head_gradient(&grad, 0.1).unwrap_err().kind(), "FrozenViolation");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut harness = StageThreeHarness::new(7, HarnessConfig { lr: 0.0, ..Default::default() }).unwrap();
        let before = harness.checksum_manifest();
        let breakdown = harness.step().unwrap();
        let after = harness.checksum_manifest();
        assert!(breakdown.total.is_finite());
        assert_eq!(before.s2t, after.s2t);
        assert_eq!(before.echo_decoder, after.echo_decoder);
        assert_eq!(before.adapter, after.adapter);
        assert_eq!(before.t2c, after.t2c);
    }

    #[test]
    fn frozen_t2c_survives_many_steps() {
        let mut harness = StageThreeHarness::new(11, HarnessConfig::default()).unwrap();
        let t2c0 = harness.t2c.param_checksum();
        for _ in 0..100 {
            harness.step().unwrap();
        }
        assert_eq!(harness.t2c.param_checksum(), t2c0);
    }

    #[test]
    fn denoising_descends_on_fixed_batch() {
        let mut harness = StageThreeHarness::new(
            21,
            HarnessConfig { input_len: 16, hidden: 8, ..Default::default() },
        )
        .unwrap();
        let batch = harness.make_batch().unwrap();
        assert!(batch.x_prime.len() >= 2, "need a non-trivial batch");
        let gt = harness.ground_truth_text.clone();
        let mut last = f64::INFINITY;
        for step in 0..51 {
            let breakdown = echo_training_step(
                &batch,
                &gt,
                &mut harness.s2t,
                &mut harness.echo_decoder,
                &mut harness.adapter,
                0.2,
                0.01,
            )
            .unwrap();
            assert!(
                breakdown.denoising < last,
                "denoising failed to decrease at step {step}: {} vs {last}",
                breakdown.denoising
            );
            last = breakdown.denoising;
        }
    }

    #[test]
    fn lambda_wiring_matches_breakdown() {
        let mut harness = StageThreeHarness::new(3, HarnessConfig::default()).unwrap();
        let b = harness.step().unwrap();
        assert_eq!(b.lambda, 0.2);
        assert_eq!(b.total.to_bits(), (b.echo + 0.2 * b.denoising + b.s2t).to_bits());
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = |seed: u64| {
            let mut h = StageThreeHarness::new(seed, HarnessConfig::default()).unwrap();
            let mut out = Vec::new();
            for _ in 0..5 {
                let batch = h.make_batch().unwrap();
                out.push((batch.x_prime.clone(), batch.y_prime.clone()));
                let b = h.step().unwrap();
                out.push((vec![b.total.to_bits() as u32], vec![]));
            }
            (out, h.checksum_manifest())
        };
        let (a, ma) = run(42);
        let (b, mb) = run(42);
        assert_eq!(a, b);
        assert_eq!(ma.s2t, mb.s2t);
        assert_eq!(ma.adapter, mb.adapter);
    }
}
