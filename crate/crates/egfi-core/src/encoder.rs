//! Contextual encoder: a small transformer trained jointly with the head.
//! It fills the pretrained-encoder role behind the same interface — per-token
//! states plus a pooled CLS vector — and a checkpoint adapter can swap in
//! externally trained weights of any width.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nninit;
use crate::tape::{Tape, Var};
use crate::tensor_store::{self, Dtype};
use crate::tokenizer::TokenizedInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
}

impl EncoderLayer {
    fn init(rng: &mut ChaCha8Rng, d: usize, ffn: usize) -> Self {
        EncoderLayer {
            wq: nninit::xavier(rng, d, d),
            bq: nninit::zeros(1, d),
            wk: nninit::xavier(rng, d, d),
            bk: nninit::zeros(1, d),
            wv: nninit::xavier(rng, d, d),
            bv: nninit::zeros(1, d),
            wo: nninit::xavier(rng, d, d),
            bo: nninit::zeros(1, d),
            ln1_gain: nninit::ones(1, d),
            ln1_bias: nninit::zeros(1, d),
            w1: nninit::xavier(rng, d, ffn),
            b1: nninit::zeros(1, ffn),
            w2: nninit::xavier(rng, ffn, d),
            b2: nninit::zeros(1, d),
            ln2_gain: nninit::ones(1, d),
            ln2_bias: nninit::zeros(1, d),
        }
    }

    fn tensor_names() -> [&'static str; 16] {
        [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias", "w1", "b1",
            "w2", "b2", "ln2_gain", "ln2_bias",
        ]
    }

    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tok_emb = nninit::uniform(&mut rng, config.vocab_size, config.dim, 0.1);
        let pos_emb = nninit::uniform(&mut rng, config.max_len, config.dim, 0.1);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::init(&mut rng, config.dim, config.ffn_dim))
            .collect();
        Ok(EncoderParams { config, tok_emb, pos_emb, layers })
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> =
            vec![("tok_emb".into(), &self.tok_emb), ("pos_emb".into(), &self.pos_emb)];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, tensor) in layer.tensors() {
                out.push((format!("layer{i}.{name}"), tensor));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> =
            vec![("tok_emb".into(), &mut self.tok_emb), ("pos_emb".into(), &mut self.pos_emb)];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, tensor) in layer.tensors_mut() {
                out.push((format!("layer{i}.{name}"), tensor));
            }
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copy all parameters onto a tape as leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        let vars: Vec<(String, Var)> = self
            .tensors()
            .into_iter()
            .map(|(name, tensor)| (name, tape.leaf(tensor.clone())))
            .collect();
        BoundEncoder { vars, config: self.config }
    }
}

/// Tape handles for every encoder parameter, in `tensors()` order.
pub struct BoundEncoder {
    pub vars: Vec<(String, Var)>,
    config: EncoderConfig,
}

impl BoundEncoder {
    fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("no encoder tensor named '{name}'"))
    }
}

/// Graph outputs of one encoder pass.
pub struct EncoderGraph {
    /// n x d per-token states
    pub h: Var,
    /// 1 x d pooled CLS vector (row 0 after the final layer)
    pub cls: Var,
    /// softmax map of every head of every layer, for inspection
    pub attentions: Vec<Var>,
}

/// Append the encoder forward pass for one sequence to `tape`.
/// `mask[j] == false` marks padding; padded keys are excluded from every
/// attention softmax, so states at real positions do not depend on padding.
pub fn encoder_graph(
    tape: &mut Tape,
    bound: &BoundEncoder,
    ids: &[usize],
    mask: &[bool],
) -> Result<EncoderGraph> {
    let cfg = &bound.config;
    let n = ids.len();
    if n == 0 {
        return Err(Error::Shape("encoder input is empty".into()));
    }
    if n > cfg.max_len {
        return Err(Error::Shape(format!(
            "sequence length {n} exceeds positional table {}",
            cfg.max_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {bad} out of range for vocab size {}",
            cfg.vocab_size
        )));
    }
    if !mask[0] {
        return Err(Error::Shape("first position must be a real token".into()));
    }

    let tok = bound.var("tok_emb");
    let pos_table = bound.var("pos_emb");
    let emb = tape.gather_rows(tok, ids);
    let pos = tape.slice_rows(pos_table, 0, n);
    let mut x = tape.add(emb, pos);

    let head_dim = cfg.dim / cfg.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut attentions = Vec::new();

    for layer in 0..cfg.layers {
        let lv = |name: &str| bound.var(&format!("layer{layer}.{name}"));

        let q = linear(tape, x, lv("wq"), lv("bq"));
        let k = linear(tape, x, lv("wk"), lv("bk"));
        let v = linear(tape, x, lv("wv"), lv("bv"));

        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (c0, c1) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice_cols(q, c0, c1);
            let kh = tape.slice_cols(k, c0, c1);
            let vh = tape.slice_cols(v, c0, c1);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax(scaled, Some(mask), false)?;
            attentions.push(attn);
            heads.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(&heads);
        let attn_out = linear(tape, cat, lv("wo"), lv("bo"));

        let res1 = tape.add(x, attn_out);
        x = layer_norm_affine(tape, res1, lv("ln1_gain"), lv("ln1_bias"));

        let ff1 = linear(tape, x, lv("w1"), lv("b1"));
        let act = tape.gelu(ff1);
        let ff2 = linear(tape, act, lv("w2"), lv("b2"));
        let res2 = tape.add(x, ff2);
        x = layer_norm_affine(tape, res2, lv("ln2_gain"), lv("ln2_bias"));
    }

    let cls = tape.row(x, 0);
    Ok(EncoderGraph { h: x, cls, attentions })
}

pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

pub(crate) fn layer_norm_affine(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Var {
    let normed = tape.layer_norm(x);
    let scaled = tape.mul_row(normed, gain);
    tape.add_row(scaled, bias)
}

/// Per-token states plus the pooled CLS vector.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// n x d; n is the padded length, rows at pad positions carry no signal
    pub h: Array2<f64>,
    pub cls: Array1<f64>,
}

/// Run the encoder over a tokenized (padded) input.
pub fn encoder_forward(input: &TokenizedInput, params: &EncoderParams) -> Result<EncoderOutput> {
    let ids: Vec<usize> = input.ids.iter().map(|&i| i as usize).collect();
    let mask: Vec<bool> = input.attention_mask.iter().map(|&m| m == 1).collect();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let graph = encoder_graph(&mut tape, &bound, &ids, &mask)?;
    Ok(EncoderOutput {
        h: tape.value(graph.h).clone(),
        cls: tape.value(graph.cls).row(0).to_owned(),
    })
}

// ---------------------------------------------------------------------------
// checkpoint adapter

pub fn save_encoder(params: &EncoderParams, dir: &Path, dtype: Dtype) -> Result<()> {
    let cfg = &params.config;
    let mut fields = BTreeMap::new();
    fields.insert("vocab_size".into(), cfg.vocab_size.to_string());
    fields.insert("max_len".into(), cfg.max_len.to_string());
    fields.insert("dim".into(), cfg.dim.to_string());
    fields.insert("layers".into(), cfg.layers.to_string());
    fields.insert("heads".into(), cfg.heads.to_string());
    fields.insert("ffn_dim".into(), cfg.ffn_dim.to_string());
    let tensors: Vec<(String, &Array2<f64>)> = params.tensors();
    tensor_store::write_dir(dir, "encoder", dtype, &fields, &tensors)
}

/// Load encoder weights from a checkpoint directory. A missing directory or
/// descriptor yields `AdapterUnavailable` so callers can fall back to the
/// jointly trained encoder; a present-but-inconsistent checkpoint is an
/// error naming every offending tensor.
pub fn load_pretrained_adapter(dir: &Path) -> Result<EncoderParams> {
    if !dir.join(tensor_store::DESCRIPTOR_FILE).exists() {
        return Err(Error::AdapterUnavailable(format!(
            "no encoder checkpoint at {}",
            dir.display()
        )));
    }
    let (descriptor, mut tensors) = tensor_store::read_dir(dir)?;
    if descriptor.kind != "encoder" {
        return Err(Error::Checkpoint(format!(
            "expected kind 'encoder', found '{}'",
            descriptor.kind
        )));
    }
    let config = EncoderConfig {
        vocab_size: descriptor.usize_field("vocab_size")?,
        max_len: descriptor.usize_field("max_len")?,
        dim: descriptor.usize_field("dim")?,
        layers: descriptor.usize_field("layers")?,
        heads: descriptor.usize_field("heads")?,
        ffn_dim: descriptor.usize_field("ffn_dim")?,
    };
    config.validate()?;

    let mut params = EncoderParams::init(config, 0)?;
    let mut offending = Vec::new();
    for (name, slot) in params.tensors_mut() {
        match tensors.remove(&name) {
            Some(tensor) if tensor.raw_dim() == slot.raw_dim() => *slot = tensor,
            Some(tensor) => offending.push(format!(
                "{name}: expected {}x{}, found {}x{}",
                slot.nrows(),
                slot.ncols(),
                tensor.nrows(),
                tensor.ncols()
            )),
            None => offending.push(format!("{name}: missing")),
        }
    }
    for (extra, _) in tensors {
        offending.push(format!("{extra}: not part of the declared architecture"));
    }
    if !offending.is_empty() {
        return Err(Error::Checkpoint(format!(
            "adapter tensors inconsistent with declared config: {}",
            offending.join("; ")
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::finite_diff_rel_error;
    use crate::tokenizer::{build_vocab, tokenize};

    fn tiny_config(vocab_size: usize) -> EncoderConfig {
        EncoderConfig { vocab_size, max_len: 64, dim: 8, layers: 1, heads: 2, ffn_dim: 16 }
    }

    fn fixture_input(max_len: usize) -> (TokenizedInput, EncoderParams) {
        let vocab = build_vocab(
            ["<e10> drug1 </e10> boosts <e20> drug2 </e20> daily."],
            64,
        )
        .unwrap();
        let input = tokenize(
            "<e10> drug1 </e10> boosts <e20> drug2 </e20> daily.",
            &vocab,
            max_len,
        )
        .unwrap();
        let params = EncoderParams::init(tiny_config(vocab.size()), 11).unwrap();
        (input, params)
    }

    #[test]
    fn output_shapes_follow_config() {
        let (input, params) = fixture_input(40);
        let out = encoder_forward(&input, &params).unwrap();
        assert_eq!(out.h.dim(), (40, 8));
        assert_eq!(out.cls.len(), 8);
        assert!(out.h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_token_attention_is_one() {
        let params = EncoderParams::init(tiny_config(10), 3).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = encoder_graph(&mut tape, &bound, &[2], &[true]).unwrap();
        for attn in &graph.attentions {
            let a = tape.value(*attn);
            assert_eq!(a.dim(), (1, 1));
            assert!((a[[0, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_pads_get_nothing() {
        let (input, params) = fixture_input(30);
        let ids: Vec<usize> = input.ids.iter().map(|&i| i as usize).collect();
        let mask: Vec<bool> = input.attention_mask.iter().map(|&m| m == 1).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = encoder_graph(&mut tape, &bound, &ids, &mask).unwrap();
        for attn in &graph.attentions {
            let a = tape.value(*attn);
            for i in 0..a.nrows() {
                let row_sum: f64 = a.row(i).sum();
                assert!((row_sum - 1.0).abs() < 1e-6, "row {i} sums to {row_sum}");
                for j in input.length..a.ncols() {
                    assert!(a[[i, j]] < 1e-9, "pad column {j} received weight {}", a[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let (short, params) = fixture_input(20);
        let (long, _) = fixture_input(45);
        let out_short = encoder_forward(&short, &params).unwrap();
        let out_long = encoder_forward(&long, &params).unwrap();
        let n = short.length;
        let diff = (&out_short.h.slice(ndarray::s![..n, ..])
            - &out_long.h.slice(ndarray::s![..n, ..]))
            .mapv(f64::abs)
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "padding changed real positions by {diff}");
        let cls_diff = (&out_short.cls - &out_long.cls).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(cls_diff < 1e-6);
    }

    #[test]
    fn forward_is_deterministic() {
        let (input, params) = fixture_input(30);
        let a = encoder_forward(&input, &params).unwrap();
        let b = encoder_forward(&input, &params).unwrap();
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn out_of_range_id_errors() {
        let params = EncoderParams::init(tiny_config(10), 3).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        assert!(encoder_graph(&mut tape, &bound, &[11], &[true]).is_err());
    }

    /// scalar loss for the gradient check: fixed projection of tanh(H)
    fn probe_loss(params: &EncoderParams, ids: &[usize], mask: &[bool]) -> f64 {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = encoder_graph(&mut tape, &bound, ids, mask).unwrap();
        let t = tape.tanh(graph.h);
        let pooled = tape.mean_rows(t);
        let d = tape.value(pooled).ncols();
        let w = tape.leaf(Array2::from_shape_fn((d, 1), |(i, _)| 0.1 * (i as f64 + 1.0)));
        let loss = tape.matmul(pooled, w);
        tape.scalar(loss)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let params = EncoderParams::init(tiny_config(12), 5).unwrap();
        let ids = [2usize, 7, 3, 5, 0, 0];
        let mask = [true, true, true, true, false, false];

        // analytic gradients
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = encoder_graph(&mut tape, &bound, &ids, &mask).unwrap();
        let t = tape.tanh(graph.h);
        let pooled = tape.mean_rows(t);
        let d = tape.value(pooled).ncols();
        let w = tape.leaf(Array2::from_shape_fn((d, 1), |(i, _)| 0.1 * (i as f64 + 1.0)));
        let loss = tape.matmul(pooled, w);
        let grads = tape.backward(loss);

        for (name, var) in &bound.vars {
            let analytic = grads.get(*var, &tape);
            let mut candidate = params
                .tensors()
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .unwrap();
            let err = finite_diff_rel_error(&mut candidate, &analytic, 1e-3, |tensor| {
                let mut p = params.clone();
                p.tensor_mut(name).unwrap().assign(tensor);
                probe_loss(&p, &ids, &mask)
            });
            assert!(err < 1e-4, "tensor '{name}' gradient rel err {err}");
        }
    }

    #[test]
    fn adapter_round_trips_and_reports_shape_mismatch() {
        let params = EncoderParams::init(tiny_config(12), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("encoder");
        save_encoder(&params, &ckpt, Dtype::F64).unwrap();
        let loaded = load_pretrained_adapter(&ckpt).unwrap();
        assert_eq!(loaded.tok_emb, params.tok_emb);
        assert_eq!(loaded.config, params.config);

        // loading twice gives bitwise-equal parameters, hence equal forwards
        let again = load_pretrained_adapter(&ckpt).unwrap();
        for ((_, a), (_, b)) in loaded.tensors().iter().zip(again.tensors().iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        // missing checkpoint -> adapter unavailable
        let missing = dir.path().join("nope");
        match load_pretrained_adapter(&missing) {
            Err(Error::AdapterUnavailable(_)) => {}
            other => panic!("expected AdapterUnavailable, got {other:?}"),
        }

        // corrupt the declared dim -> shape mismatches name tensors
        let desc_path = ckpt.join(tensor_store::DESCRIPTOR_FILE);
        let text = std::fs::read_to_string(&desc_path).unwrap();
        let text = text.replace("field dim 8", "field dim 16").replace("field heads 2", "field heads 4");
        std::fs::write(&desc_path, text).unwrap();
        let err = load_pretrained_adapter(&ckpt).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wq"), "should list offending tensors: {msg}");
    }

    #[test]
    fn f32_adapter_loads_with_widening() {
        let params = EncoderParams::init(tiny_config(12), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("encoder32");
        save_encoder(&params, &ckpt, Dtype::F32).unwrap();
        let loaded = load_pretrained_adapter(&ckpt).unwrap();
        assert_eq!(loaded.config, params.config);
        let drift = (&loaded.tok_emb - &params.tok_emb).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(drift < 1e-6, "f32 quantization drift {drift}");
    }
}
