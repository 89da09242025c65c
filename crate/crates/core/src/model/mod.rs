//! The autoencoder: GIN encoder with edge embeddings, VAE head, and a
//! grammar-masked GRU decoder over production rules.

mod checkpoint;
mod decoder;
mod encoder;
mod loss;

use std::collections::BTreeMap;
use std::fmt;

use mhg_autodiff::rng::{keyed_rng, standard_normal, uniform};
use mhg_autodiff::{AutodiffError, Graph, Tensor, Var};
use thiserror::Error;

use crate::grammar::GrammarError;
use crate::molgraph::{FeatureError, ATOM_FEATURE_CARDINALITIES, BOND_FEATURE_CARDINALITIES};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use decoder::{
    decode_generate, decode_generate_batch, decode_teacher_forced, init_decoder_state, vae_head,
    DecodeMode, DecodeOutcome, TeacherForced, VaeOutput,
};
pub use encoder::{gin_encode, gin_encode_batch};
pub(crate) use loss::{forward, update_running_stats};
pub use loss::{loss, loss_and_gradients, target_steps, LossBreakdown, TargetSteps};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("molecule {index}: {source}")]
    Feature { index: usize, source: FeatureError },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("target sequence {index} does not replay: {reason}")]
    InvalidTarget { index: usize, reason: String },
    #[error("expected a vector of length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub node_dim: usize,
    pub radius: usize,
    pub latent_dim: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub rule_emb: usize,
    /// Decoder vocabulary: the grammar's rule count.
    pub n_rules: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(n_rules: usize) -> Self {
        Self {
            node_dim: 256,
            radius: 5,
            latent_dim: 256,
            gru_hidden: 384,
            gru_layers: 3,
            rule_emb: 128,
            n_rules,
            dropout: 0.1,
        }
    }

    /// Width of the readout `h_G`.
    pub fn readout_dim(&self) -> usize {
        self.node_dim * (self.radius + 1)
    }

    pub fn bos(&self) -> usize {
        self.n_rules
    }

    /// Output class for end-of-sequence.
    pub fn end(&self) -> usize {
        self.n_rules
    }

    pub fn to_text(&self) -> String {
        format!(
            "node_dim = {}\nradius = {}\nlatent_dim = {}\ngru_hidden = {}\ngru_layers = {}\nrule_emb = {}\nn_rules = {}\ndropout = {}\n",
            self.node_dim,
            self.radius,
            self.latent_dim,
            self.gru_hidden,
            self.gru_layers,
            self.rule_emb,
            self.n_rules,
            self.dropout
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| ModelError::Checkpoint(msg);
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("bad config line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let int = |k: &str| -> Result<usize> {
            map.get(k)
                .ok_or_else(|| bad(format!("missing {k}")))?
                .parse()
                .map_err(|_| bad(format!("bad {k}")))
        };
        let cfg = Self {
            node_dim: int("node_dim")?,
            radius: int("radius")?,
            latent_dim: int("latent_dim")?,
            gru_hidden: int("gru_hidden")?,
            gru_layers: int("gru_layers")?,
            rule_emb: int("rule_emb")?,
            n_rules: int("n_rules")?,
            dropout: map
                .get("dropout")
                .ok_or_else(|| bad("missing dropout".into()))?
                .parse()
                .map_err(|_| bad("bad dropout".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.node_dim,
            self.radius,
            self.latent_dim,
            self.gru_hidden,
            self.gru_layers,
            self.rule_emb,
            self.n_rules,
        ];
        if dims.contains(&0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Checkpoint(format!(
                "invalid model config: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GinLayer {
    pub lin1_w: usize,
    pub lin1_b: usize,
    pub bn_gamma: usize,
    pub bn_beta: usize,
    pub lin2_w: usize,
    pub lin2_b: usize,
    pub eps: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GruLayer {
    pub w_input: usize,
    pub w_hidden: usize,
    pub b_input: usize,
    pub b_hidden: usize,
}

/// Indices of every parameter tensor in the store.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub atom_emb: Vec<usize>,
    pub bond_emb: Vec<usize>,
    pub gin: Vec<GinLayer>,
    pub mu_w: usize,
    pub mu_b: usize,
    pub eta_mu: usize,
    pub logvar_w: usize,
    pub logvar_b: usize,
    pub eta_sigma: usize,
    pub adapter_w: usize,
    pub adapter_b: usize,
    pub rule_emb: usize,
    pub gru: Vec<GruLayer>,
    pub out_w: usize,
    pub out_b: usize,
}

/// Kind of initializer for a freshly created tensor.
#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    /// Uniform in `+-1/sqrt(fan)`.
    Uniform(usize),
    Const(f64),
}

/// Batch-norm running statistics for one GIN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.1;

/// All model parameters plus batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    values: Vec<Tensor>,
    pub running: Vec<RunningStats>,
    pub(crate) layout: Layout,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((shape.to_vec(), init));
        self.names.len() - 1
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let d = c.node_dim;
    let atom_emb = ATOM_FEATURE_CARDINALITIES
        .iter()
        .enumerate()
        .map(|(i, &n)| b.add(format!("enc.atom_emb.{i}"), &[n, d], Init::Normal))
        .collect();
    let bond_emb = BOND_FEATURE_CARDINALITIES
        .iter()
        .enumerate()
        .map(|(i, &n)| b.add(format!("enc.bond_emb.{i}"), &[n, d], Init::Normal))
        .collect();
    let gin = (0..c.radius)
        .map(|k| GinLayer {
            lin1_w: b.add(format!("enc.layer{k}.lin1.w"), &[d, d], Init::Uniform(d)),
            lin1_b: b.add(format!("enc.layer{k}.lin1.b"), &[d], Init::Uniform(d)),
            bn_gamma: b.add(format!("enc.layer{k}.bn.gamma"), &[d], Init::Const(1.0)),
            bn_beta: b.add(format!("enc.layer{k}.bn.beta"), &[d], Init::Const(0.0)),
            lin2_w: b.add(format!("enc.layer{k}.lin2.w"), &[d, d], Init::Uniform(d)),
            lin2_b: b.add(format!("enc.layer{k}.lin2.b"), &[d], Init::Uniform(d)),
            eps: b.add(format!("enc.layer{k}.eps"), &[1], Init::Const(1.0)),
        })
        .collect();
    let r = c.readout_dim();
    let (l, h) = (c.latent_dim, c.gru_hidden);
    let mu_w = b.add("vae.mu.w".into(), &[r, l], Init::Uniform(r));
    let mu_b = b.add("vae.mu.b".into(), &[l], Init::Uniform(r));
    let eta_mu = b.add("vae.eta_mu".into(), &[1], Init::Const(0.0));
    let logvar_w = b.add("vae.logvar.w".into(), &[r, l], Init::Uniform(r));
    let logvar_b = b.add("vae.logvar.b".into(), &[l], Init::Uniform(r));
    let eta_sigma = b.add("vae.eta_sigma".into(), &[1], Init::Const(0.0));
    let adapter_w = b.add(
        "vae.adapter.w".into(),
        &[l, c.gru_layers * h],
        Init::Uniform(l),
    );
    let adapter_b = b.add(
        "vae.adapter.b".into(),
        &[c.gru_layers * h],
        Init::Uniform(l),
    );
    let rule_emb = b.add(
        "dec.rule_emb".into(),
        &[c.n_rules + 2, c.rule_emb],
        Init::Normal,
    );
    let gru = (0..c.gru_layers)
        .map(|i| {
            let input = if i == 0 { c.rule_emb } else { h };
            GruLayer {
                w_input: b.add(
                    format!("dec.gru{i}.w_input"),
                    &[input, 3 * h],
                    Init::Uniform(h),
                ),
                w_hidden: b.add(
                    format!("dec.gru{i}.w_hidden"),
                    &[h, 3 * h],
                    Init::Uniform(h),
                ),
                b_input: b.add(format!("dec.gru{i}.b_input"), &[3 * h], Init::Uniform(h)),
                b_hidden: b.add(format!("dec.gru{i}.b_hidden"), &[3 * h], Init::Uniform(h)),
            }
        })
        .collect();
    let out_w = b.add("dec.out.w".into(), &[h, c.n_rules + 1], Init::Uniform(h));
    let out_b = b.add("dec.out.b".into(), &[c.n_rules + 1], Init::Uniform(h));
    let layout = Layout {
        atom_emb,
        bond_emb,
        gin,
        mu_w,
        mu_b,
        eta_mu,
        logvar_w,
        logvar_b,
        eta_sigma,
        adapter_w,
        adapter_b,
        rule_emb,
        gru,
        out_w,
        out_b,
    };
    (layout, b)
}

impl ModelParams {
    /// Fresh parameters: normal embeddings, uniform `+-1/sqrt(fan_in)`
    /// linear maps, unit batch-norm scale, ε = 1 and η = 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, builder) = build_layout(&config);
        let values = builder
            .shapes
            .iter()
            .enumerate()
            .map(|(i, (shape, init))| {
                let mut rng = keyed_rng(seed, 0x1417, i as u64);
                match *init {
                    Init::Normal => standard_normal(&mut rng, shape),
                    Init::Uniform(fan) => uniform(&mut rng, shape, 1.0 / (fan as f64).sqrt()),
                    Init::Const(v) => Tensor::full(shape, v),
                }
            })
            .collect();
        let running = (0..config.radius)
            .map(|_| RunningStats {
                mean: vec![0.0; config.node_dim],
                var: vec![1.0; config.node_dim],
            })
            .collect();
        Ok(Self {
            config,
            names: builder.names,
            values,
            running,
            layout,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.values[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Rounds parameters and running statistics to `f32`, the checkpoint
    /// precision, so a save/load cycle is lossless.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.values {
            t.round_to_f32();
        }
        for s in &mut self.running {
            for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model(node_dim={}, radius={}, latent={}, gru={}x{}, rules={}, params={})",
            self.config.node_dim,
            self.config.radius,
            self.config.latent_dim,
            self.config.gru_layers,
            self.config.gru_hidden,
            self.config.n_rules,
            self.parameter_count()
        )
    }
}

/// Training-time behavior of dropout, batch norm, and noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Deterministic: running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics and dropout, with randomness keyed by `(seed, step)`.
    Train { seed: u64, step: u64 },
}

/// A graph with parameters bound lazily as leaves.
pub(crate) struct Ctx<'a> {
    pub g: Graph,
    pub params: &'a ModelParams,
    vars: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            g: Graph::new(),
            params,
            vars: vec![None; params.values.len()],
        }
    }

    pub fn var(&mut self, idx: usize) -> Var {
        if let Some(v) = self.vars[idx] {
            return v;
        }
        let v = self.g.leaf(self.params.values[idx].clone());
        self.vars[idx] = Some(v);
        v
    }

    pub fn layout(&self) -> &'a Layout {
        &self.params.layout
    }

    /// Gradient for every parameter (zeros where unused).
    pub fn gradients(&self, out: Var) -> Result<Vec<Tensor>> {
        let grads = self.g.backward(out)?;
        Ok(self
            .params
            .values
            .iter()
            .zip(&self.vars)
            .map(|(t, v)| match v {
                Some(v) => grads.get_or_zeros(*v, t),
                None => Tensor::zeros(t.shape()),
            })
            .collect())
    }
}

/// Random-stream identifiers, one per use of noise.
pub(crate) mod streams {
    pub const ENCODER_DROPOUT: u64 = 1;
    pub const DECODER_DROPOUT: u64 = 2;
    pub const REPARAM: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trips() {
        let c = ModelConfig::new(17);
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(ModelConfig::from_text("node_dim = 0").is_err());
    }

    #[test]
    fn paper_initialization() {
        let p = ModelParams::init(
            ModelConfig {
                radius: 2,
                node_dim: 8,
                latent_dim: 4,
                gru_hidden: 6,
                gru_layers: 3,
                rule_emb: 5,
                n_rules: 3,
                dropout: 0.1,
            },
            0,
        )
        .unwrap();
        assert_eq!(p.get("vae.eta_mu").unwrap().data(), &[0.0]);
        assert_eq!(p.get("vae.eta_sigma").unwrap().data(), &[0.0]);
        assert_eq!(p.get("enc.layer1.eps").unwrap().data(), &[1.0]);
        assert_eq!(p.get("dec.rule_emb").unwrap().shape(), &[5, 5]);
        assert_eq!(p.get("vae.adapter.w").unwrap().shape(), &[4, 18]);
        assert_eq!(p.get("dec.out.w").unwrap().shape(), &[6, 4]);
    }
}
