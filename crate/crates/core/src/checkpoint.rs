//! Architecture config and in-memory weight set of a decoder-only transformer.
//!
//! All tensors are row-major `f32`. Projection matrices are stored input-major
//! (`[in × out]`), so a row vector is projected with [`Matrix::vec_mul`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::Lcg64;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    /// FFN hidden width per layer; entries diverge after neuron pruning.
    pub intermediate_size: Vec<usize>,
    pub rope_theta: f64,
    pub rms_eps: f64,
    pub max_seq_len: usize,
    pub qkv_bias: bool,
    pub tied_embeddings: bool,
    /// Whether the untied output projection carries a bias vector.
    #[serde(default)]
    pub lm_bias: bool,
}

impl TransformerConfig {
    /// Small config with uniform FFN width, untied embeddings and qkv bias on.
    pub fn toy(
        vocab_size: usize,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        n_kv_heads: usize,
        intermediate: usize,
    ) -> Self {
        Self {
            vocab_size,
            d_model,
            n_layers,
            n_heads,
            n_kv_heads,
            head_dim: d_model / n_heads.max(1),
            intermediate_size: vec![intermediate; n_layers],
            rope_theta: 10000.0,
            rms_eps: 1e-6,
            max_seq_len: 256,
            qkv_bias: true,
            tied_embeddings: false,
            lm_bias: false,
        }
    }

    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub bq: Option<Vec<f32>>,
    pub bk: Option<Vec<f32>>,
    pub bv: Option<Vec<f32>>,
    pub wo: Matrix,
    pub ffn_norm: Vec<f32>,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

impl LayerWeights {
    pub fn zeros(config: &TransformerConfig, intermediate: usize) -> Self {
        let d = config.d_model;
        let bias = |n: usize| config.qkv_bias.then(|| vec![0.0; n]);
        Self {
            attn_norm: vec![1.0; d],
            wq: Matrix::zeros(d, config.q_dim()),
            wk: Matrix::zeros(d, config.kv_dim()),
            wv: Matrix::zeros(d, config.kv_dim()),
            bq: bias(config.q_dim()),
            bk: bias(config.kv_dim()),
            bv: bias(config.kv_dim()),
            wo: Matrix::zeros(config.q_dim(), d),
            ffn_norm: vec![1.0; d],
            w_gate: Matrix::zeros(d, intermediate),
            w_up: Matrix::zeros(d, intermediate),
            w_down: Matrix::zeros(intermediate, d),
        }
    }

    pub fn intermediate(&self) -> usize {
        self.w_gate.cols
    }

    pub fn param_count(&self) -> u64 {
        let opt = |b: &Option<Vec<f32>>| b.as_ref().map_or(0, |v| v.len());
        (self.attn_norm.len()
            + self.wq.len()
            + self.wk.len()
            + self.wv.len()
            + opt(&self.bq)
            + opt(&self.bk)
            + opt(&self.bv)
            + self.wo.len()
            + self.ffn_norm.len()
            + self.w_gate.len()
            + self.w_up.len()
            + self.w_down.len()) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TransformerConfig,
    /// Token embeddings, `[vocab_size × d_model]`.
    pub embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    /// Output projection `[d_model × vocab_size]`; `None` when tied to `embed`.
    pub lm_head: Option<Matrix>,
    pub lm_bias: Option<Vec<f32>>,
}

/// A borrowed tensor together with its canonical name and shape.
#[derive(Debug, Clone)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: [usize; 2],
    pub rank: usize,
    pub data: &'a [f32],
}

/// One violated checkpoint invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Checkpoint {
    /// All-zero layers with unit norms; embedding and head are zero too.
    pub fn zeros(config: TransformerConfig) -> Self {
        let d = config.d_model;
        let v = config.vocab_size;
        let layers = config
            .intermediate_size
            .iter()
            .map(|&i| LayerWeights::zeros(&config, i))
            .collect();
        let lm_head = (!config.tied_embeddings).then(|| Matrix::zeros(d, v));
        let lm_bias = (!config.tied_embeddings && config.lm_bias).then(|| vec![0.0; v]);
        Self { embed: Matrix::zeros(v, d), layers, final_norm: vec![1.0; d], lm_head, lm_bias, config }
    }

    /// Deterministic random initialisation, scaled by `1/sqrt(fan_in)`.
    pub fn random(config: TransformerConfig, seed: u64) -> Self {
        let mut rng = Lcg64::new(seed);
        let mut ckpt = Self::zeros(config);
        let fill = |m: &mut Matrix, rng: &mut Lcg64| {
            let scale = 1.0 / libm::sqrtf(m.rows as f32);
            m.data.iter_mut().for_each(|w| *w = rng.symmetric(scale));
        };
        let fill_vec = |v: &mut Vec<f32>, rng: &mut Lcg64, centre: f32, scale: f32| {
            v.iter_mut().for_each(|w| *w = centre + rng.symmetric(scale));
        };
        ckpt.embed.data.iter_mut().for_each(|w| *w = rng.symmetric(1.0));
        for layer in &mut ckpt.layers {
            fill_vec(&mut layer.attn_norm, &mut rng, 1.0, 0.1);
            fill(&mut layer.wq, &mut rng);
            fill(&mut layer.wk, &mut rng);
            fill(&mut layer.wv, &mut rng);
            for b in [&mut layer.bq, &mut layer.bk, &mut layer.bv].into_iter().flatten() {
                fill_vec(b, &mut rng, 0.0, 0.1);
            }
            fill(&mut layer.wo, &mut rng);
            fill_vec(&mut layer.ffn_norm, &mut rng, 1.0, 0.1);
            fill(&mut layer.w_gate, &mut rng);
            fill(&mut layer.w_up, &mut rng);
            fill(&mut layer.w_down, &mut rng);
        }
        fill_vec(&mut ckpt.final_norm, &mut rng, 1.0, 0.1);
        if let Some(head) = ckpt.lm_head.as_mut() {
            fill(head, &mut rng);
        }
        if let Some(b) = ckpt.lm_bias.as_mut() {
            fill_vec(b, &mut rng, 0.0, 0.1);
        }
        ckpt
    }

    /// Number of stored scalars, counting every tensor once.
    pub fn param_count(&self) -> u64 {
        self.tensors().iter().map(|t| t.data.len() as u64).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Tensors in canonical storage order with their manifest names.
    ///
    /// Names: `embed`, `layers.{i}.{attn_norm|wq|wk|wv|wo|bq|bk|bv|ffn_norm|w_gate|w_up|w_down}`,
    /// `final_norm`, `lm_head`, `lm_bias`.
    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|t| t.name).collect()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(3 + 12 * self.layers.len());
        out.push(mat(String::from("embed"), &self.embed));
        for (i, layer) in self.layers.iter().enumerate() {
            let n = |t: &str| format!("layers.{i}.{t}");
            out.push(vector(n("attn_norm"), &layer.attn_norm));
            out.push(mat(n("wq"), &layer.wq));
            out.push(mat(n("wk"), &layer.wk));
            out.push(mat(n("wv"), &layer.wv));
            out.push(mat(n("wo"), &layer.wo));
            for (name, bias) in [("bq", &layer.bq), ("bk", &layer.bk), ("bv", &layer.bv)] {
                if let Some(b) = bias {
                    out.push(vector(n(name), b));
                }
            }
            out.push(vector(n("ffn_norm"), &layer.ffn_norm));
            out.push(mat(n("w_gate"), &layer.w_gate));
            out.push(mat(n("w_up"), &layer.w_up));
            out.push(mat(n("w_down"), &layer.w_down));
        }
        out.push(vector(String::from("final_norm"), &self.final_norm));
        if let Some(h) = &self.lm_head {
            out.push(mat(String::from("lm_head"), h));
        }
        if let Some(b) = &self.lm_bias {
            out.push(vector(String::from("lm_bias"), b));
        }
        out
    }

    /// Lists every violated invariant; an empty list means the checkpoint is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        let mut bad = |field: String, message: String| report.push(Violation { field, message });
        let c = &self.config;

        for (name, value) in [
            ("vocab_size", c.vocab_size),
            ("d_model", c.d_model),
            ("n_layers", c.n_layers),
            ("n_heads", c.n_heads),
            ("n_kv_heads", c.n_kv_heads),
            ("head_dim", c.head_dim),
            ("max_seq_len", c.max_seq_len),
        ] {
            if value == 0 {
                bad(format!("config.{name}"), String::from("must be at least 1"));
            }
        }
        if c.d_model != c.n_heads * c.head_dim {
            bad(
                String::from("config.d_model"),
                format!("d_model {} != n_heads {} x head_dim {}", c.d_model, c.n_heads, c.head_dim),
            );
        }
        if c.n_kv_heads != 0 && !c.n_heads.is_multiple_of(c.n_kv_heads) {
            bad(
                String::from("config.n_kv_heads"),
                format!("n_heads {} is not divisible by n_kv_heads {}", c.n_heads, c.n_kv_heads),
            );
        }
        if c.intermediate_size.len() != c.n_layers {
            bad(
                String::from("config.intermediate_size"),
                format!("{} entries for {} layers", c.intermediate_size.len(), c.n_layers),
            );
        }
        for (l, &i) in c.intermediate_size.iter().enumerate() {
            if i == 0 {
                bad(format!("config.intermediate_size[{l}]"), String::from("must be at least 1"));
            }
        }
        if !(c.rope_theta.is_finite() && c.rope_theta > 0.0) {
            bad(String::from("config.rope_theta"), String::from("must be positive"));
        }
        if !(c.rms_eps.is_finite() && c.rms_eps > 0.0) {
            bad(String::from("config.rms_eps"), String::from("must be positive"));
        }

        let d = c.d_model;
        let shape = |bad: &mut dyn FnMut(String, String), field: String, m: &Matrix, rows, cols| {
            if m.shape() != [rows, cols] || m.data.len() != rows * cols {
                bad(field, format!("shape {:?}, expected [{rows}, {cols}]", m.shape()));
            }
        };
        let length = |bad: &mut dyn FnMut(String, String), field: String, v: &[f32], n: usize| {
            if v.len() != n {
                bad(field, format!("length {}, expected {n}", v.len()));
            }
        };

        shape(&mut bad, String::from("embed"), &self.embed, c.vocab_size, d);
        if self.layers.len() != c.n_layers {
            bad(
                String::from("layers"),
                format!("{} layer entries, config.n_layers = {}", self.layers.len(), c.n_layers),
            );
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let f = |t: &str| format!("layers.{l}.{t}");
            let inter = c.intermediate_size.get(l).copied().unwrap_or(layer.intermediate());
            length(&mut bad, f("attn_norm"), &layer.attn_norm, d);
            shape(&mut bad, f("wq"), &layer.wq, d, c.q_dim());
            shape(&mut bad, f("wk"), &layer.wk, d, c.kv_dim());
            shape(&mut bad, f("wv"), &layer.wv, d, c.kv_dim());
            shape(&mut bad, f("wo"), &layer.wo, c.q_dim(), d);
            for (name, bias, n) in [
                ("bq", &layer.bq, c.q_dim()),
                ("bk", &layer.bk, c.kv_dim()),
                ("bv", &layer.bv, c.kv_dim()),
            ] {
                match (bias, c.qkv_bias) {
                    (Some(b), true) => length(&mut bad, f(name), b, n),
                    (None, false) => {}
                    (Some(_), false) => bad(f(name), String::from("present but config.qkv_bias is false")),
                    (None, true) => bad(f(name), String::from("missing but config.qkv_bias is true")),
                }
            }
            length(&mut bad, f("ffn_norm"), &layer.ffn_norm, d);
            shape(&mut bad, f("w_gate"), &layer.w_gate, d, inter);
            shape(&mut bad, f("w_up"), &layer.w_up, d, inter);
            shape(&mut bad, f("w_down"), &layer.w_down, inter, d);
        }
        length(&mut bad, String::from("final_norm"), &self.final_norm, d);

        match (&self.lm_head, c.tied_embeddings) {
            (Some(_), true) => bad(String::from("lm_head"), String::from("stored although embeddings are tied")),
            (None, false) => bad(String::from("lm_head"), String::from("missing for untied embeddings")),
            (Some(h), false) => shape(&mut bad, String::from("lm_head"), h, d, c.vocab_size),
            (None, true) => {}
        }
        let want_bias = c.lm_bias && !c.tied_embeddings;
        match (&self.lm_bias, want_bias) {
            (Some(b), true) => length(&mut bad, String::from("lm_bias"), b, c.vocab_size),
            (None, false) => {}
            (Some(_), false) => bad(
                String::from("lm_bias"),
                String::from("present but config has no untied output bias"),
            ),
            (None, true) => bad(String::from("lm_bias"), String::from("missing but config.lm_bias is true")),
        }
        report
    }

    /// `Ok(())` when [`Checkpoint::validate`] is clean.
    pub fn ensure_valid(&self) -> crate::Result<()> {
        let report = self.validate();
        if report.is_empty() {
            return Ok(());
        }
        let joined: Vec<String> = report.iter().map(|v| format!("{v}")).collect();
        Err(crate::Error::InvalidCheckpoint(joined.join("; ")))
    }
}

fn mat(name: String, m: &Matrix) -> TensorRef<'_> {
    TensorRef { name, shape: [m.rows, m.cols], rank: 2, data: &m.data }
}

fn vector(name: String, v: &[f32]) -> TensorRef<'_> {
    TensorRef { name, shape: [v.len(), 1], rank: 1, data: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::param_count;

    fn toy() -> Checkpoint {
        Checkpoint::random(TransformerConfig::toy(40, 8, 2, 2, 1, 12), 3)
    }

    fn fields(ckpt: &Checkpoint) -> Vec<String> {
        ckpt.validate().into_iter().map(|v| v.field).collect()
    }

    #[test]
    fn random_and_zero_checkpoints_are_valid() {
        assert!(toy().validate().is_empty());
        assert!(Checkpoint::zeros(TransformerConfig::toy(40, 8, 2, 2, 1, 12)).validate().is_empty());
        let mut tied = TransformerConfig::toy(40, 8, 2, 2, 1, 12);
        tied.tied_embeddings = true;
        tied.qkv_bias = false;
        assert!(Checkpoint::random(tied, 1).validate().is_empty());
        let mut biased = TransformerConfig::toy(40, 8, 2, 2, 1, 12);
        biased.lm_bias = true;
        assert!(Checkpoint::random(biased, 1).validate().is_empty());
    }

    #[test]
    fn each_fault_is_reported_on_its_field() {
        type Fault = fn(&mut Checkpoint);
        let cases: [(Fault, &str); 14] = [
            (|c| c.config.d_model = 9, "config.d_model"),
            (|c| c.config.n_kv_heads = 0, "config.n_kv_heads"),
            (|c| c.config.intermediate_size.push(3), "config.intermediate_size"),
            (|c| c.config.rms_eps = 0.0, "config.rms_eps"),
            (|c| c.config.rope_theta = f64::NAN, "config.rope_theta"),
            (|c| c.embed = Matrix::zeros(39, 8), "embed"),
            (|c| c.layers[1].wk = Matrix::zeros(8, 3), "layers.1.wk"),
            (|c| c.layers[0].bq = None, "layers.0.bq"),
            (|c| c.layers[0].ffn_norm.truncate(7), "layers.0.ffn_norm"),
            (|c| c.layers[1].w_down = Matrix::zeros(11, 8), "layers.1.w_down"),
            (|c| c.final_norm.push(1.0), "final_norm"),
            (|c| c.lm_head = None, "lm_head"),
            (|c| c.lm_bias = Some(vec![0.0; 40]), "lm_bias"),
            (|c| drop(c.layers.pop()), "layers"),
        ];
        for (fault, field) in cases {
            let mut ckpt = toy();
            fault(&mut ckpt);
            let got = fields(&ckpt);
            assert!(got.iter().any(|f| f == field), "{field}: {got:?}");
            assert!(matches!(ckpt.ensure_valid(), Err(crate::Error::InvalidCheckpoint(_))));
        }
    }

    #[test]
    fn tensor_sum_matches_closed_form() {
        for (qkv_bias, tied, lm_bias) in [(true, false, false), (false, true, false), (true, false, true)] {
            let mut cfg = TransformerConfig::toy(50, 12, 3, 4, 2, 20);
            cfg.intermediate_size = vec![20, 7, 13];
            cfg.qkv_bias = qkv_bias;
            cfg.tied_embeddings = tied;
            cfg.lm_bias = lm_bias;
            let ckpt = Checkpoint::random(cfg.clone(), 2);
            assert!(ckpt.validate().is_empty());
            let by_tensor: usize = ckpt.tensors().iter().map(|t| t.data.len()).sum();
            assert_eq!(ckpt.param_count(), by_tensor as u64);
            assert_eq!(ckpt.param_count(), param_count(&cfg));
        }
    }

    #[test]
    fn tensor_listing_is_canonical() {
        let names = toy().tensor_names();
        assert_eq!(names.first().map(String::as_str), Some("embed"));
        assert_eq!(names[1], "layers.0.attn_norm");
        assert_eq!(names.last().map(String::as_str), Some("lm_head"));
        assert_eq!(names.len(), 1 + 2 * 12 + 2);
    }
}
