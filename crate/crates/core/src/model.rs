// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-LN decoder-only transformer (GPT-2 block layout) with activation
//! recording and activation overwriting at named sites.
//!
//! Two input/output variants share the same trunk:
//!
//! - **Token**: token embedding table in, logits over the vocabulary out.
//! - **Continuous**: affine projection of 2D points in, affine readout of a
//!   2D point out.
//!
//! Activations are laid out as `[batch · seq_len × width]` with the rows of
//! one sequence contiguous.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{ComputeGraph, Tensor, Var};
use crate::rng;

/// Input/output flavour of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelVariant {
    Token { vocab_size: usize },
    Continuous { input_dim: usize, output_dim: usize },
}

impl ModelVariant {
    pub fn input_width(&self) -> usize {
        match *self {
            ModelVariant::Token { vocab_size } => vocab_size,
            ModelVariant::Continuous { input_dim, .. } => input_dim,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            ModelVariant::Token { vocab_size } => vocab_size,
            ModelVariant::Continuous { output_dim, .. } => output_dim,
        }
    }

    pub fn is_token(&self) -> bool {
        matches!(self, ModelVariant::Token { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub max_seq_len: usize,
    pub ln_eps: f64,
    pub variant: ModelVariant,
}

impl ModelConfig {
    /// Two layers, one head, width 128, MLP width 512.
    pub fn small(variant: ModelVariant, max_seq_len: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 1,
            d_model: 128,
            d_mlp: 512,
            max_seq_len,
            ln_eps: 1e-5,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::InvalidArgument(msg));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_mlp == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        if !(self.ln_eps >= 0.0) {
            return bad("ln_eps must be non-negative".into());
        }
        if self.variant.input_width() == 0 || self.variant.output_width() == 0 {
            return bad("variant widths must be positive".into());
        }
        Ok(())
    }

    /// Width of the activation recorded at `kind`.
    pub fn site_width(&self, kind: SiteKind) -> usize {
        match kind {
            SiteKind::MlpHidden => self.d_mlp,
            _ => self.d_model,
        }
    }
}

/// Weights of one transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

const BLOCK_FIELDS: [&str; 16] = [
    "ln1_gain", "ln1_bias", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "ln2_gain",
    "ln2_bias", "w_in", "b_in", "w_out", "b_out",
];

impl BlockParams {
    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_in,
            &self.b_in,
            &self.w_out,
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

/// Full learned weight set.
///
/// `embed` is the `[vocab × d]` token table (token variant) or the
/// `[input_dim × d]` input projection (continuous variant, with
/// `embed_bias`). The unembedding `head_w`/`head_b` is untied from `embed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embed: Tensor,
    pub embed_bias: Option<Tensor>,
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockParams>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelParams {
    /// GPT-2 style initialization: N(0, 0.02) weights, N(0, 0.01) positions,
    /// residual output projections scaled by `1/√(2·n_layers)`, zero biases,
    /// unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived_rng(seed, rng::stream::INIT, 0);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let normal = |shape: [usize; 2], sd: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let dist = Normal::new(0.0, sd).expect("positive std");
            let data = (0..shape[0] * shape[1]).map(|_| dist.sample(rng)).collect();
            Tensor::from_parts(shape.to_vec(), data)
        };
        let (d, m) = (config.d_model, config.d_mlp);
        let mut params = Self::zeros(config)?;
        params.embed = normal([config.variant.input_width(), d], std, &mut rng);
        params.pos_embed = normal([config.max_seq_len, d], 0.01, &mut rng);
        for block in &mut params.blocks {
            block.w_q = normal([d, d], std, &mut rng);
            block.w_k = normal([d, d], std, &mut rng);
            block.w_v = normal([d, d], std, &mut rng);
            block.w_o = normal([d, d], resid_std, &mut rng);
            block.w_in = normal([d, m], std, &mut rng);
            block.w_out = normal([m, d], resid_std, &mut rng);
            block.ln1_gain = Tensor::full([d], 1.0);
            block.ln2_gain = Tensor::full([d], 1.0);
        }
        params.lnf_gain = Tensor::full([d], 1.0);
        params.head_w = normal([d, config.variant.output_width()], std, &mut rng);
        Ok(params)
    }

    /// All-zero weights (layer-norm gains included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, m) = (config.d_model, config.d_mlp);
        let block = || BlockParams {
            ln1_gain: Tensor::zeros([d]),
            ln1_bias: Tensor::zeros([d]),
            w_q: Tensor::zeros([d, d]),
            b_q: Tensor::zeros([d]),
            w_k: Tensor::zeros([d, d]),
            b_k: Tensor::zeros([d]),
            w_v: Tensor::zeros([d, d]),
            b_v: Tensor::zeros([d]),
            w_o: Tensor::zeros([d, d]),
            b_o: Tensor::zeros([d]),
            ln2_gain: Tensor::zeros([d]),
            ln2_bias: Tensor::zeros([d]),
            w_in: Tensor::zeros([d, m]),
            b_in: Tensor::zeros([m]),
            w_out: Tensor::zeros([m, d]),
            b_out: Tensor::zeros([d]),
        };
        let out = config.variant.output_width();
        Ok(Self {
            embed: Tensor::zeros([config.variant.input_width(), d]),
            embed_bias: (!config.variant.is_token()).then(|| Tensor::zeros([d])),
            pos_embed: Tensor::zeros([config.max_seq_len, d]),
            blocks: (0..config.n_layers).map(|_| block()).collect(),
            lnf_gain: Tensor::zeros([d]),
            lnf_bias: Tensor::zeros([d]),
            head_w: Tensor::zeros([d, out]),
            head_b: Tensor::zeros([out]),
        })
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        if let Some(b) = &self.embed_bias {
            out.push(("embed_bias".into(), b));
        }
        out.push(("pos_embed".into(), &self.pos_embed));
        for (l, block) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_FIELDS.iter().zip(block.tensors()) {
                out.push((format!("blocks.{l}.{name}"), t));
            }
        }
        out.push(("lnf_gain".into(), &self.lnf_gain));
        out.push(("lnf_bias".into(), &self.lnf_bias));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    /// Mutable counterpart of [`named`](Self::named), same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embed".to_string(), &mut self.embed)];
        if let Some(b) = &mut self.embed_bias {
            out.push(("embed_bias".into(), b));
        }
        out.push(("pos_embed".into(), &mut self.pos_embed));
        for (l, block) in self.blocks.iter_mut().enumerate() {
            for (name, t) in BLOCK_FIELDS.iter().zip(block.tensors_mut()) {
                out.push((format!("blocks.{l}.{name}"), t));
            }
        }
        out.push(("lnf_gain".into(), &mut self.lnf_gain));
        out.push(("lnf_bias".into(), &mut self.lnf_bias));
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks shapes against `config` and finiteness of every weight.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let reference = Self::zeros(config)?;
        let mine = self.named();
        let want = reference.named();
        if mine.len() != want.len() {
            return Err(LabError::InvalidArgument(format!(
                "parameter count {} does not match config ({})",
                mine.len(),
                want.len()
            )));
        }
        for ((name, t), (_, w)) in mine.iter().zip(&want) {
            if t.shape() != w.shape() {
                return Err(LabError::Shape {
                    op: "ModelParams::validate",
                    lhs: t.shape().to_vec(),
                    rhs: w.shape().to_vec(),
                });
            }
            t.check_finite("ModelParams::validate")
                .map_err(|_| LabError::InvalidArgument(format!("parameter {name} is not finite")))?;
        }
        Ok(())
    }
}

/// Kind of recorded/patchable activation within a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    /// Attention block output after the output projection, before the
    /// residual addition.
    AttnOut,
    /// MLP hidden layer after the GELU.
    MlpHidden,
    /// MLP output before the residual addition.
    MlpOut,
    /// Residual stream after the whole block.
    ResidPost,
}

impl SiteKind {
    pub const ALL: [SiteKind; 4] = [
        SiteKind::AttnOut,
        SiteKind::MlpHidden,
        SiteKind::MlpOut,
        SiteKind::ResidPost,
    ];

    fn name(self) -> &'static str {
        match self {
            SiteKind::AttnOut => "attn_out",
            SiteKind::MlpHidden => "mlp_hidden",
            SiteKind::MlpOut => "mlp_out",
            SiteKind::ResidPost => "resid_post",
        }
    }
}

/// A named activation: `(layer index from 0, kind)`.
///
/// Text form is `layer{L}.{kind}` with `L` counted from 1, e.g.
/// `layer2.attn_out` for the second block's attention output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub layer: usize,
    pub kind: SiteKind,
}

impl Site {
    pub const fn new(layer: usize, kind: SiteKind) -> Self {
        Self { layer, kind }
    }

    pub const fn attn_out(layer: usize) -> Self {
        Self::new(layer, SiteKind::AttnOut)
    }

    pub const fn mlp_hidden(layer: usize) -> Self {
        Self::new(layer, SiteKind::MlpHidden)
    }

    pub const fn mlp_out(layer: usize) -> Self {
        Self::new(layer, SiteKind::MlpOut)
    }

    pub const fn resid_post(layer: usize) -> Self {
        Self::new(layer, SiteKind::ResidPost)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layer >= config.n_layers {
            return Err(LabError::InvalidSite(format!(
                "{self} refers to layer {} of a {}-layer model",
                self.layer + 1,
                config.n_layers
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer{}.{}", self.layer + 1, self.kind.name())
    }
}

impl FromStr for Site {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || LabError::InvalidSite(format!("cannot parse site {s:?}"));
        let (layer, kind) = s.split_once('.').ok_or_else(bad)?;
        let layer: usize = layer.strip_prefix("layer").and_then(|l| l.parse().ok()).ok_or_else(bad)?;
        if layer == 0 {
            return Err(bad());
        }
        let kind = SiteKind::ALL.into_iter().find(|k| k.name() == kind).ok_or_else(bad)?;
        Ok(Site::new(layer - 1, kind))
    }
}

impl Serialize for Site {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Overwrites `site` at `position` with fixed values.
///
/// `rows` holds either one row (shared by every sequence of the batch) or one
/// row per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Intervention {
    pub site: Site,
    pub position: usize,
    pub rows: Vec<Vec<f64>>,
}

impl Intervention {
    /// Same vector at `position` in every sequence.
    pub fn shared(site: Site, position: usize, vector: Vec<f64>) -> Self {
        Self {
            site,
            position,
            rows: vec![vector],
        }
    }

    pub fn per_sequence(site: Site, position: usize, rows: Vec<Vec<f64>>) -> Self {
        Self {
            site,
            position,
            rows,
        }
    }
}

/// Batch of equal-length model inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput {
    Tokens {
        ids: Vec<usize>,
        batch: usize,
        seq_len: usize,
    },
    Points {
        /// `batch · seq_len · 2` coordinates.
        coords: Vec<f64>,
        batch: usize,
        seq_len: usize,
    },
}

impl ModelInput {
    pub fn tokens(seqs: &[Vec<usize>]) -> Result<Self> {
        let seq_len = uniform_len(seqs.iter().map(Vec::len))?;
        Ok(ModelInput::Tokens {
            ids: seqs.concat(),
            batch: seqs.len(),
            seq_len,
        })
    }

    pub fn points(seqs: &[Vec<[f64; 2]>]) -> Result<Self> {
        let seq_len = uniform_len(seqs.iter().map(Vec::len))?;
        Ok(ModelInput::Points {
            coords: seqs.iter().flatten().flat_map(|p| p.iter().copied()).collect(),
            batch: seqs.len(),
            seq_len,
        })
    }

    pub fn batch(&self) -> usize {
        match self {
            ModelInput::Tokens { batch, .. } | ModelInput::Points { batch, .. } => *batch,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ModelInput::Tokens { seq_len, .. } | ModelInput::Points { seq_len, .. } => *seq_len,
        }
    }

    /// Sub-batch made of the listed sequences.
    pub fn subset(&self, seqs: &[usize]) -> Self {
        match self {
            ModelInput::Tokens { ids, seq_len, .. } => ModelInput::Tokens {
                ids: seqs.iter().flat_map(|&s| ids[s * seq_len..(s + 1) * seq_len].iter().copied()).collect(),
                batch: seqs.len(),
                seq_len: *seq_len,
            },
            ModelInput::Points { coords, seq_len, .. } => {
                let w = seq_len * 2;
                ModelInput::Points {
                    coords: seqs.iter().flat_map(|&s| coords[s * w..(s + 1) * w].iter().copied()).collect(),
                    batch: seqs.len(),
                    seq_len: *seq_len,
                }
            }
        }
    }
}

fn uniform_len(mut lens: impl Iterator<Item = usize>) -> Result<usize> {
    let first = lens
        .next()
        .ok_or_else(|| LabError::InvalidArgument("empty batch".into()))?;
    if lens.any(|l| l != first) {
        return Err(LabError::InvalidArgument("sequences in a batch must share a length".into()));
    }
    Ok(first)
}

/// Activations recorded during a forward pass, each `[batch·seq_len × width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub batch: usize,
    pub seq_len: usize,
    records: BTreeMap<Site, Tensor>,
}

impl ActivationTrace {
    pub fn get(&self, site: Site) -> Option<&Tensor> {
        self.records.get(&site)
    }

    /// Activation of sequence `seq` at `position`.
    pub fn at(&self, site: Site, seq: usize, position: usize) -> Result<&[f64]> {
        let t = self
            .records
            .get(&site)
            .ok_or_else(|| LabError::InvalidSite(format!("{site} was not recorded")))?;
        if seq >= self.batch || position >= self.seq_len {
            return Err(LabError::InvalidArgument(format!(
                "trace index ({seq}, {position}) outside batch {} × seq_len {}",
                self.batch, self.seq_len
            )));
        }
        Ok(t.row(seq * self.seq_len + position))
    }

    /// Rows at `position` for every sequence, in batch order.
    pub fn rows_at(&self, site: Site, position: usize) -> Result<Vec<Vec<f64>>> {
        (0..self.batch).map(|s| self.at(site, s, position).map(<[f64]>::to_vec)).collect()
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.records.keys().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Logits `[batch·seq_len × vocab]` or points `[batch·seq_len × 2]`.
    pub outputs: Tensor,
    pub trace: Option<ActivationTrace>,
}

impl ForwardOutput {
    /// Output row of sequence `seq` at `position`.
    pub fn at(&self, seq_len: usize, seq: usize, position: usize) -> &[f64] {
        self.outputs.row(seq * seq_len + position)
    }
}

/// Graph handles for every parameter, mirroring [`ModelParams::named`].
pub(crate) struct ParamVars {
    pub all: Vec<Var>,
    embed: Var,
    embed_bias: Option<Var>,
    pos_embed: Var,
    blocks: Vec<[Var; 16]>,
    lnf_gain: Var,
    lnf_bias: Var,
    head_w: Var,
    head_b: Var,
}

impl ParamVars {
    pub fn register(g: &mut ComputeGraph, params: &ModelParams, trainable: bool) -> Self {
        let all: Vec<Var> = params
            .named()
            .into_iter()
            .map(|(_, t)| g.leaf(t.clone().with_requires_grad(trainable)))
            .collect();
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("parameter order");
        let embed = next();
        let embed_bias = params.embed_bias.as_ref().map(|_| next());
        let pos_embed = next();
        let blocks = params
            .blocks
            .iter()
            .map(|_| std::array::from_fn(|_| next()))
            .collect();
        Self {
            embed,
            embed_bias,
            pos_embed,
            blocks,
            lnf_gain: next(),
            lnf_bias: next(),
            head_w: next(),
            head_b: next(),
            all,
        }
    }
}

/// Which output rows the head is applied to.
pub(crate) enum HeadRows<'a> {
    All,
    Only(&'a [usize]),
}

fn validate_input(config: &ModelConfig, input: &ModelInput) -> Result<()> {
    let seq_len = input.seq_len();
    if seq_len > config.max_seq_len {
        return Err(LabError::SequenceTooLong {
            len: seq_len,
            max: config.max_seq_len,
        });
    }
    if input.batch() == 0 || seq_len == 0 {
        return Err(LabError::InvalidArgument("empty model input".into()));
    }
    match (input, config.variant) {
        (ModelInput::Tokens { ids, .. }, ModelVariant::Token { vocab_size }) => {
            if let Some(&bad) = ids.iter().find(|&&t| t >= vocab_size) {
                return Err(LabError::InvalidArgument(format!(
                    "token {bad} outside vocabulary of {vocab_size}"
                )));
            }
            Ok(())
        }
        (ModelInput::Points { .. }, ModelVariant::Continuous { input_dim: 2, .. }) => Ok(()),
        _ => Err(LabError::InvalidArgument(
            "model input kind does not match the model variant".into(),
        )),
    }
}

fn validate_interventions(
    config: &ModelConfig,
    input: &ModelInput,
    interventions: &[Intervention],
) -> Result<()> {
    for iv in interventions {
        iv.site.validate(config)?;
        if iv.position >= input.seq_len() {
            return Err(LabError::InvalidSite(format!(
                "intervention at position {} of a length-{} sequence",
                iv.position,
                input.seq_len()
            )));
        }
        if iv.rows.len() != 1 && iv.rows.len() != input.batch() {
            return Err(LabError::InvalidArgument(format!(
                "intervention carries {} rows for a batch of {}",
                iv.rows.len(),
                input.batch()
            )));
        }
        let width = config.site_width(iv.site.kind);
        if let Some(bad) = iv.rows.iter().find(|r| r.len() != width) {
            return Err(LabError::shape("intervention", &[width], &[bad.len()]));
        }
    }
    Ok(())
}

/// Records (after applying any intervention) and returns the possibly
/// overwritten activation.
struct Hooks<'a> {
    seq_len: usize,
    batch: usize,
    record: &'a [Site],
    interventions: &'a [Intervention],
    records: BTreeMap<Site, Tensor>,
}

impl Hooks<'_> {
    fn apply(&mut self, g: &mut ComputeGraph, site: Site, x: Var) -> Result<Var> {
        let mut x = x;
        for iv in self.interventions.iter().filter(|iv| iv.site == site) {
            let rows: Vec<usize> = (0..self.batch).map(|b| b * self.seq_len + iv.position).collect();
            let width = iv.rows[0].len();
            let mut values = Vec::with_capacity(rows.len() * width);
            for b in 0..self.batch {
                let r = if iv.rows.len() == 1 { &iv.rows[0] } else { &iv.rows[b] };
                values.extend_from_slice(r);
            }
            let values = Tensor::new([rows.len(), width], values)?;
            x = g.overwrite_rows(x, &rows, &values)?;
        }
        if self.record.contains(&site) {
            self.records.insert(site, g.value(x).clone());
        }
        Ok(x)
    }
}

/// Builds the forward computation on `g`; returns the head output var.
pub(crate) fn build_forward(
    g: &mut ComputeGraph,
    pv: &ParamVars,
    config: &ModelConfig,
    input: &ModelInput,
    record: &[Site],
    interventions: &[Intervention],
    head_rows: HeadRows<'_>,
) -> Result<(Var, Option<ActivationTrace>)> {
    validate_input(config, input)?;
    validate_interventions(config, input, interventions)?;
    for site in record {
        site.validate(config)?;
    }
    let (batch, seq_len) = (input.batch(), input.seq_len());
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq_len).collect();

    let embedded = match input {
        ModelInput::Tokens { ids, .. } => g.embedding(pv.embed, ids)?,
        ModelInput::Points { coords, .. } => {
            let pts = g.constant(Tensor::new([batch * seq_len, 2], coords.clone())?);
            let proj = g.matmul(pts, pv.embed)?;
            match pv.embed_bias {
                Some(b) => g.add_row(proj, b)?,
                None => proj,
            }
        }
    };
    let pos = g.embedding(pv.pos_embed, &positions)?;
    let mut x = g.add(embedded, pos)?;

    let mut hooks = Hooks {
        seq_len,
        batch,
        record,
        interventions,
        records: BTreeMap::new(),
    };
    let eps = config.ln_eps;
    for (layer, w) in pv.blocks.iter().enumerate() {
        let [ln1_g, ln1_b, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, ln2_g, ln2_b, w_in, b_in, w_out, b_out] =
            *w;
        let h = g.layer_norm(x, ln1_g, ln1_b, eps)?;
        let q = g.matmul(h, w_q)?;
        let q = g.add_row(q, b_q)?;
        let k = g.matmul(h, w_k)?;
        let k = g.add_row(k, b_k)?;
        let v = g.matmul(h, w_v)?;
        let v = g.add_row(v, b_v)?;
        let att = g.causal_attention(q, k, v, seq_len, config.n_heads)?;
        let att = g.matmul(att, w_o)?;
        let att = g.add_row(att, b_o)?;
        let att = hooks.apply(g, Site::attn_out(layer), att)?;
        x = g.add(x, att)?;

        let h = g.layer_norm(x, ln2_g, ln2_b, eps)?;
        let hidden = g.matmul(h, w_in)?;
        let hidden = g.add_row(hidden, b_in)?;
        let hidden = g.gelu(hidden)?;
        let hidden = hooks.apply(g, Site::mlp_hidden(layer), hidden)?;
        let out = g.matmul(hidden, w_out)?;
        let out = g.add_row(out, b_out)?;
        let out = hooks.apply(g, Site::mlp_out(layer), out)?;
        x = g.add(x, out)?;
        x = hooks.apply(g, Site::resid_post(layer), x)?;
    }

    let x = match head_rows {
        HeadRows::All => x,
        HeadRows::Only(rows) => g.select_rows(x, rows)?,
    };
    let x = g.layer_norm(x, pv.lnf_gain, pv.lnf_bias, eps)?;
    let y = g.matmul(x, pv.head_w)?;
    let y = g.add_row(y, pv.head_b)?;

    let trace = (!record.is_empty()).then(|| ActivationTrace {
        batch,
        seq_len,
        records: hooks.records,
    });
    Ok((y, trace))
}

/// Runs the model on a batch.
///
/// `record` lists sites to capture; `interventions` overwrite sites at given
/// positions before the rest of the network consumes them. The output is a
/// pure function of its arguments.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    record: &[Site],
    interventions: &[Intervention],
) -> Result<ForwardOutput> {
    let mut g = ComputeGraph::new();
    let pv = ParamVars::register(&mut g, params, false);
    let (y, trace) = build_forward(&mut g, &pv, config, input, record, interventions, HeadRows::All)?;
    Ok(ForwardOutput {
        outputs: g.value(y).clone(),
        trace,
    })
}

/// Model answer for the final position of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Token { token: usize, logits: Vec<f64> },
    Point([f64; 2]),
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predictions at the last input position of every sequence.
pub fn predict_last(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
) -> Result<Vec<Prediction>> {
    predict_at(params, config, input, input.seq_len().saturating_sub(1), &[])
}

/// Predictions at `position` of every sequence, under optional interventions.
pub fn predict_at(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    position: usize,
    interventions: &[Intervention],
) -> Result<Vec<Prediction>> {
    if position >= input.seq_len() {
        return Err(LabError::InvalidArgument(format!(
            "position {position} outside sequence of length {}",
            input.seq_len()
        )));
    }
    let mut g = ComputeGraph::new();
    let pv = ParamVars::register(&mut g, params, false);
    let rows: Vec<usize> = (0..input.batch()).map(|b| b * input.seq_len() + position).collect();
    let (y, _) = build_forward(&mut g, &pv, config, input, &[], interventions, HeadRows::Only(&rows))?;
    let out = g.value(y);
    Ok((0..input.batch())
        .map(|b| {
            let row = out.row(b);
            if config.variant.is_token() {
                Prediction::Token {
                    token: argmax(row),
                    logits: row.to_vec(),
                }
            } else {
                Prediction::Point([row[0], row[1]])
            }
        })
        .collect())
}

/// Supervision for [`loss_and_grads`]: flat row indices (`seq·seq_len + pos`)
/// and their targets.
#[derive(Clone, Debug, PartialEq)]
pub enum LossTargets {
    /// Cross-entropy against token ids.
    Tokens { rows: Vec<usize>, ids: Vec<usize> },
    /// Mean squared error against 2D points (`rows.len() · 2` coordinates).
    Points { rows: Vec<usize>, coords: Vec<f64> },
}

pub(crate) fn build_loss(
    g: &mut ComputeGraph,
    pv: &ParamVars,
    config: &ModelConfig,
    input: &ModelInput,
    targets: &LossTargets,
) -> Result<Var> {
    match targets {
        LossTargets::Tokens { rows, ids } => {
            let (y, _) = build_forward(g, pv, config, input, &[], &[], HeadRows::Only(rows))?;
            g.cross_entropy(y, ids)
        }
        LossTargets::Points { rows, coords } => {
            let (y, _) = build_forward(g, pv, config, input, &[], &[], HeadRows::Only(rows))?;
            let target = Tensor::new([rows.len(), 2], coords.clone())?;
            g.mse(y, &target)
        }
    }
}

/// Training loss and its gradient for every parameter (in
/// [`ModelParams::named`] order).
pub fn loss_and_grads(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    targets: &LossTargets,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = ComputeGraph::new();
    let pv = ParamVars::register(&mut g, params, true);
    let loss = build_loss(&mut g, &pv, config, input, targets)?;
    g.backward(loss)?;
    let value = g.value(loss).item().expect("scalar loss");
    let grads = pv
        .all
        .iter()
        .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).numel()], <[f64]>::to_vec))
        .collect();
    Ok((value, grads))
}

/// Training loss without gradients.
pub fn loss_value(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    targets: &LossTargets,
) -> Result<f64> {
    let mut g = ComputeGraph::new();
    let pv = ParamVars::register(&mut g, params, false);
    let loss = build_loss(&mut g, &pv, config, input, targets)?;
    Ok(g.value(loss).item().expect("scalar loss"))
}
