//! Pre-LayerNorm transformer blocks assembled into the encoder–fusion–decoder
//! network. Parameter names are dotted paths; everything under `vision.` is
//! the image encoder that the student keeps frozen.

use super::config::ModelConfig;
use super::params::ParamStore;
use super::tape::{MacCategory, NodeId, Tape};
use super::text::PromptTokens;
use super::trajectory::{wrap_coordinates, TrajectoryTokens};
use super::{CompositeImage, ModelError};
use crate::numerics::{RngSeed, SplitMix64, Tensor2D};

pub const VISION_PREFIX: &str = "vision.";

/// How parameters enter a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Everything constant; no gradient bookkeeping.
    Infer,
    Train { freeze_vision: bool },
}

/// Source of the image-encoder output for a graph.
#[derive(Debug, Clone, Copy)]
pub enum VisionInput<'a> {
    Image(&'a CompositeImage),
    /// Precomputed encoder tokens; only valid when the vision encoder is frozen.
    Tokens(&'a Tensor2D),
}

/// Node handles of one forward graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphNodes {
    pub logits: NodeId,
    pub z: NodeId,
    pub h: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `2T × C` next-token logits under teacher forcing.
    pub logits: Tensor2D,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
}

struct Init {
    rng: SplitMix64,
    params: ParamStore,
    d: usize,
    ffn: usize,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor2D {
        let data = (0..rows * cols).map(|_| std * self.rng.normal()).collect();
        Tensor2D::from_vec_unchecked(rows, cols, data)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let w = self.normal(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
        self.params.insert(&format!("{name}.w"), w);
        self.params.insert(&format!("{name}.b"), Tensor2D::zeros(1, fan_out));
    }

    fn table(&mut self, name: &str, rows: usize) {
        let t = self.normal(rows, self.d, 1.0);
        self.params.insert(name, t);
    }

    fn ln(&mut self, name: &str) {
        self.params.insert(&format!("{name}.g"), Tensor2D::filled(1, self.d, 1.0));
        self.params.insert(&format!("{name}.b"), Tensor2D::zeros(1, self.d));
    }

    fn block(&mut self, prefix: &str, norms: &[&str], attns: &[&str]) {
        let d = self.d;
        for n in norms {
            self.ln(&format!("{prefix}.{n}"));
        }
        for a in attns {
            for part in ["q", "k", "v", "o"] {
                self.linear(&format!("{prefix}.{a}.{part}"), d, d);
            }
        }
        self.linear(&format!("{prefix}.ffn.w1"), d, self.ffn);
        self.linear(&format!("{prefix}.ffn.w2"), self.ffn, d);
    }
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    mode: GraphMode,
}

impl Ctx<'_> {
    fn p(&mut self, name: &str) -> NodeId {
        let id = self
            .store
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        let trainable = match self.mode {
            GraphMode::Infer => false,
            GraphMode::Train { freeze_vision } => !(freeze_vision && name.starts_with(VISION_PREFIX)),
        };
        self.tape.param(self.store, id, trainable)
    }

    fn linear(&mut self, x: NodeId, prefix: &str, cat: MacCategory) -> NodeId {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.set_category(cat);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn layer_norm(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.layer_norm(x, g, b)
    }

    fn ffn(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let h = self.linear(x, &format!("{prefix}.w1"), MacCategory::Other);
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{prefix}.w2"), MacCategory::Other)
    }
}

/// Multi-head attention pieces, exposed so the FLOP counter can instrument
/// one block in isolation.
pub(crate) fn attention_kv(tape: &mut Tape, store: &ParamStore, mode: GraphMode, mem: NodeId, prefix: &str) -> (NodeId, NodeId) {
    let mut ctx = Ctx { tape, store, mode };
    let k = ctx.linear(mem, &format!("{prefix}.k"), MacCategory::KProj);
    let v = ctx.linear(mem, &format!("{prefix}.v"), MacCategory::VProj);
    (k, v)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_apply(
    tape: &mut Tape,
    store: &ParamStore,
    mode: GraphMode,
    x: NodeId,
    kv: (NodeId, NodeId),
    prefix: &str,
    heads: usize,
    causal: bool,
) -> NodeId {
    let mut ctx = Ctx { tape, store, mode };
    let q = ctx.linear(x, &format!("{prefix}.q"), MacCategory::QProj);
    let d = ctx.tape.value(q).cols();
    let dh = d / heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = ctx.tape.slice_cols(q, h * dh, dh);
        let kh = ctx.tape.slice_cols(kv.0, h * dh, dh);
        let vh = ctx.tape.slice_cols(kv.1, h * dh, dh);
        ctx.tape.set_category(MacCategory::Scores);
        let s = ctx.tape.matmul_bt(qh, kh);
        let s = ctx.tape.scale(s, inv);
        let p = ctx.tape.softmax(s, causal);
        ctx.tape.set_category(MacCategory::Mix);
        outs.push(ctx.tape.matmul(p, vh));
    }
    let cat = if heads == 1 { outs[0] } else { ctx.tape.concat_cols(&outs) };
    ctx.linear(cat, &format!("{prefix}.o"), MacCategory::OProj)
}

fn sinusoid(pos: usize, width: usize, out: &mut [f64]) {
    for i in 0..width / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / width as f64);
        out[2 * i] = (pos as f64 * freq).sin();
        out[2 * i + 1] = (pos as f64 * freq).cos();
    }
}

fn positions_1d(n: usize, d: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(n, d);
    for p in 0..n {
        sinusoid(p, d, t.row_mut(p));
    }
    t
}

fn positions_2d(gh: usize, gw: usize, d: usize) -> Tensor2D {
    let mut t = Tensor2D::zeros(gh * gw, d);
    for r in 0..gh {
        for c in 0..gw {
            let row = t.row_mut(r * gw + c);
            sinusoid(r, d / 2, &mut row[..d / 2]);
            sinusoid(c, d / 2, &mut row[d / 2..]);
        }
    }
    t
}

/// Row-major patch grid; each row holds one patch's pixels scaled to [−0.5, 0.5].
pub fn patchify(img: &CompositeImage, patch: usize) -> Result<(Tensor2D, usize, usize), ModelError> {
    let im = img.image();
    let (h, w, ch) = (im.height(), im.width(), im.channels());
    if h == 0 || w == 0 || h % patch != 0 || w % patch != 0 {
        return Err(ModelError::IndivisiblePatchGrid { height: h, width: w, patch });
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut t = Tensor2D::zeros(gh * gw, patch * patch * ch);
    for gr in 0..gh {
        for gc in 0..gw {
            let row = t.row_mut(gr * gw + gc);
            let mut i = 0;
            for py in 0..patch {
                for px in 0..patch {
                    for &v in im.pixel(gr * patch + py, gc * patch + px) {
                        row[i] = v as f64 / 255.0 - 0.5;
                        i += 1;
                    }
                }
            }
        }
    }
    Ok((t, gh, gw))
}

impl Model {
    /// Randomly initialized model: weights `N(0, 1/fan_in)`, embedding tables
    /// `N(0, 1)`, biases zero, LayerNorm gains one.
    pub fn init(cfg: ModelConfig, seed: RngSeed) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.d;
        let mut b = Init {
            rng: SplitMix64::new(seed.derive(0x6d6f_64656c)),
            params: ParamStore::default(),
            d,
            ffn: cfg.ffn_mult * d,
        };

        b.linear("vision.patch", cfg.patch * cfg.patch * 3, d);
        for l in 0..cfg.enc_layers {
            b.block(&format!("vision.layer{l}"), &["ln1", "ln2"], &["attn"]);
        }
        b.ln("vision.ln_f");

        b.table("text.embed", cfg.text_vocab);
        for l in 0..cfg.enc_layers {
            b.block(&format!("text.layer{l}"), &["ln1", "ln2"], &["attn"]);
        }
        b.ln("text.ln_f");

        for l in 0..cfg.fusion_layers {
            b.block(&format!("fusion.layer{l}"), &["ln_q", "ln2"], &["attn"]);
        }
        b.ln("fusion.ln_f");

        b.table("decoder.embed", cfg.vocab_coord());
        b.table("decoder.pos", cfg.positions());
        for l in 0..cfg.dec_layers {
            b.block(&format!("decoder.layer{l}"), &["ln1", "ln2", "ln3"], &["self_attn", "cross_attn"]);
        }
        b.ln("decoder.ln_f");
        b.linear("decoder.head", d, cfg.vocab_coord());

        b.linear("align.vision_proj", d, cfg.d_prime);
        b.linear("align.text_proj", d, cfg.d_prime);

        Ok(Self { cfg, params: b.params })
    }

    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        cfg.validate()?;
        let reference = Model::init(cfg, RngSeed(0))?;
        for (_, name, v) in reference.params.iter() {
            match params.id(name) {
                None => return Err(ModelError::ParamMismatch(format!("missing block {name}"))),
                Some(id) if params.value(id).shape() != v.shape() => {
                    return Err(ModelError::ParamMismatch(format!(
                        "block {name} has shape {:?}, expected {:?}",
                        params.value(id).shape(),
                        v.shape()
                    )))
                }
                _ => {}
            }
        }
        if params.len() != reference.params.len() {
            return Err(ModelError::ParamMismatch("unexpected extra blocks".into()));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn check_prompt(&self, prompt: &PromptTokens) -> Result<(), ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        if prompt.len() > self.cfg.max_prompt_len {
            return Err(ModelError::PromptTooLong {
                len: prompt.len(),
                max: self.cfg.max_prompt_len,
            });
        }
        if let Some(&id) = prompt.ids.iter().find(|&&id| id >= self.cfg.text_vocab) {
            return Err(ModelError::UnknownTokenId {
                id,
                vocab: self.cfg.text_vocab,
            });
        }
        Ok(())
    }

    fn vision_encoder(&self, ctx: &mut Ctx, img: &CompositeImage) -> Result<NodeId, ModelError> {
        let (patches, gh, gw) = patchify(img, self.cfg.patch)?;
        let x = ctx.tape.leaf(patches);
        let x = ctx.linear(x, "vision.patch", MacCategory::Other);
        let pos = ctx.tape.leaf(positions_2d(gh, gw, self.cfg.d));
        let mut x = ctx.tape.add(x, pos);
        for l in 0..self.cfg.enc_layers {
            x = self.encoder_layer(ctx, x, &format!("vision.layer{l}"));
        }
        Ok(ctx.layer_norm(x, "vision.ln_f"))
    }

    fn text_encoder(&self, ctx: &mut Ctx, prompt: &PromptTokens) -> Result<NodeId, ModelError> {
        self.check_prompt(prompt)?;
        let table = ctx.p("text.embed");
        let x = ctx.tape.gather(table, &prompt.ids);
        let pos = ctx.tape.leaf(positions_1d(prompt.len(), self.cfg.d));
        let mut x = ctx.tape.add(x, pos);
        for l in 0..self.cfg.enc_layers {
            x = self.encoder_layer(ctx, x, &format!("text.layer{l}"));
        }
        Ok(ctx.layer_norm(x, "text.ln_f"))
    }

    fn encoder_layer(&self, ctx: &mut Ctx, x: NodeId, pre: &str) -> NodeId {
        let h = ctx.layer_norm(x, &format!("{pre}.ln1"));
        let kv = attention_kv(ctx.tape, ctx.store, ctx.mode, h, &format!("{pre}.attn"));
        let a = attention_apply(ctx.tape, ctx.store, ctx.mode, h, kv, &format!("{pre}.attn"), self.cfg.heads, false);
        let x = ctx.tape.add(x, a);
        let h = ctx.layer_norm(x, &format!("{pre}.ln2"));
        let f = ctx.ffn(h, &format!("{pre}.ffn"));
        ctx.tape.add(x, f)
    }

    /// Fused memory rows: cross-attended vision tokens followed by text tokens.
    fn fuse(&self, ctx: &mut Ctx, vision: NodeId, text: NodeId) -> NodeId {
        let mut v = vision;
        for l in 0..self.cfg.fusion_layers {
            let pre = format!("fusion.layer{l}");
            let q = ctx.layer_norm(v, &format!("{pre}.ln_q"));
            let kv = attention_kv(ctx.tape, ctx.store, ctx.mode, text, &format!("{pre}.attn"));
            let a = attention_apply(ctx.tape, ctx.store, ctx.mode, q, kv, &format!("{pre}.attn"), self.cfg.heads, false);
            v = ctx.tape.add(v, a);
            let h = ctx.layer_norm(v, &format!("{pre}.ln2"));
            let f = ctx.ffn(h, &format!("{pre}.ffn"));
            v = ctx.tape.add(v, f);
        }
        let v = ctx.layer_norm(v, "fusion.ln_f");
        ctx.tape.concat_rows(&[v, text])
    }

    fn memory_kv(&self, ctx: &mut Ctx, memory: NodeId) -> Vec<(NodeId, NodeId)> {
        (0..self.cfg.dec_layers)
            .map(|l| attention_kv(ctx.tape, ctx.store, ctx.mode, memory, &format!("decoder.layer{l}.cross_attn")))
            .collect()
    }

    fn decoder(&self, ctx: &mut Ctx, ids: &[usize], mem_kv: &[(NodeId, NodeId)]) -> NodeId {
        let table = ctx.p("decoder.embed");
        let x = ctx.tape.gather(table, ids);
        let pos_table = ctx.p("decoder.pos");
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = ctx.tape.gather(pos_table, &positions);
        let mut x = ctx.tape.add(x, pos);
        for (l, &kv) in mem_kv.iter().enumerate() {
            let pre = format!("decoder.layer{l}");
            let h = ctx.layer_norm(x, &format!("{pre}.ln1"));
            let self_kv = attention_kv(ctx.tape, ctx.store, ctx.mode, h, &format!("{pre}.self_attn"));
            let a = attention_apply(ctx.tape, ctx.store, ctx.mode, h, self_kv, &format!("{pre}.self_attn"), self.cfg.heads, true);
            x = ctx.tape.add(x, a);
            let h = ctx.layer_norm(x, &format!("{pre}.ln2"));
            let c = attention_apply(ctx.tape, ctx.store, ctx.mode, h, kv, &format!("{pre}.cross_attn"), self.cfg.heads, false);
            x = ctx.tape.add(x, c);
            let h = ctx.layer_norm(x, &format!("{pre}.ln3"));
            let f = ctx.ffn(h, &format!("{pre}.ffn"));
            x = ctx.tape.add(x, f);
        }
        let x = ctx.layer_norm(x, "decoder.ln_f");
        ctx.linear(x, "decoder.head", MacCategory::Other)
    }

    /// Records the full teacher-forced graph on `tape`.
    pub fn build_graph(
        &self,
        tape: &mut Tape,
        mode: GraphMode,
        vision: VisionInput,
        prompt: &PromptTokens,
        decoder_input: &[usize],
    ) -> Result<GraphNodes, ModelError> {
        if decoder_input.is_empty() || decoder_input.len() > self.cfg.positions() {
            return Err(ModelError::MalformedTokenSequence(format!(
                "decoder input of length {} (1..={} allowed)",
                decoder_input.len(),
                self.cfg.positions()
            )));
        }
        if let Some(&id) = decoder_input.iter().find(|&&id| id >= self.cfg.vocab_coord()) {
            return Err(ModelError::MalformedTokenSequence(format!("decoder id {id} outside vocabulary")));
        }
        let mut ctx = Ctx {
            tape,
            store: &self.params,
            mode,
        };
        let v = match vision {
            VisionInput::Image(img) => self.vision_encoder(&mut ctx, img)?,
            VisionInput::Tokens(t) => {
                if t.cols() != self.cfg.d || t.rows() == 0 {
                    return Err(ModelError::ParamMismatch(format!("cached vision tokens of shape {:?}", t.shape())));
                }
                ctx.tape.leaf(t.clone())
            }
        };
        let t = self.text_encoder(&mut ctx, prompt)?;
        let pooled_v = ctx.tape.mean_rows(v);
        let z = ctx.linear(pooled_v, "align.vision_proj", MacCategory::Other);
        let pooled_t = ctx.tape.mean_rows(t);
        let h = ctx.linear(pooled_t, "align.text_proj", MacCategory::Other);
        let memory = self.fuse(&mut ctx, v, t);
        let mem_kv = self.memory_kv(&mut ctx, memory);
        let logits = self.decoder(&mut ctx, decoder_input, &mem_kv);
        Ok(GraphNodes { logits, z, h })
    }

    /// Image-encoder tokens and the projected visual embedding `z`.
    pub fn encode_image(&self, img: &CompositeImage) -> Result<(Tensor2D, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            store: &self.params,
            mode: GraphMode::Infer,
        };
        let v = self.vision_encoder(&mut ctx, img)?;
        let pooled = ctx.tape.mean_rows(v);
        let z = ctx.linear(pooled, "align.vision_proj", MacCategory::Other);
        Ok((tape.value(v).clone(), tape.value(z).row(0).to_vec()))
    }

    /// Text-encoder tokens and the projected textual embedding `h`.
    pub fn encode_text(&self, prompt: &PromptTokens) -> Result<(Tensor2D, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            store: &self.params,
            mode: GraphMode::Infer,
        };
        let t = self.text_encoder(&mut ctx, prompt)?;
        let pooled = ctx.tape.mean_rows(t);
        let h = ctx.linear(pooled, "align.text_proj", MacCategory::Other);
        Ok((tape.value(t).clone(), tape.value(h).row(0).to_vec()))
    }

    /// Teacher-forced forward pass over `target` (BOS plus all but the last coordinate).
    pub fn forward(
        &self,
        img: &CompositeImage,
        prompt: &PromptTokens,
        target: &TrajectoryTokens,
    ) -> Result<ForwardOutput, ModelError> {
        self.forward_vision(VisionInput::Image(img), prompt, target.decoder_input())
    }

    pub fn forward_vision(
        &self,
        vision: VisionInput,
        prompt: &PromptTokens,
        decoder_input: &[usize],
    ) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let nodes = self.build_graph(&mut tape, GraphMode::Infer, vision, prompt, decoder_input)?;
        let logits = tape.value(nodes.logits).clone();
        if !logits.is_finite() {
            return Err(ModelError::NonFiniteLogits);
        }
        Ok(ForwardOutput {
            logits,
            z: tape.value(nodes.z).row(0).to_vec(),
            h: tape.value(nodes.h).row(0).to_vec(),
        })
    }

    /// Greedy autoregressive decoding restricted to coordinate bins.
    pub fn greedy_decode(&self, img: &CompositeImage, prompt: &PromptTokens) -> Result<TrajectoryTokens, ModelError> {
        self.greedy_decode_vision(VisionInput::Image(img), prompt)
    }

    pub fn greedy_decode_vision(&self, vision: VisionInput, prompt: &PromptTokens) -> Result<TrajectoryTokens, ModelError> {
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            store: &self.params,
            mode: GraphMode::Infer,
        };
        let v = match vision {
            VisionInput::Image(img) => self.vision_encoder(&mut ctx, img)?,
            VisionInput::Tokens(t) => ctx.tape.leaf(t.clone()),
        };
        let t = self.text_encoder(&mut ctx, prompt)?;
        let memory = self.fuse(&mut ctx, v, t);
        let mem_kv = self.memory_kv(&mut ctx, memory);
        let mut ids = vec![self.cfg.bos()];
        for _ in 0..self.cfg.positions() {
            let logits = self.decoder(&mut ctx, &ids, &mem_kv);
            let row = ctx.tape.value(logits).row(ids.len() - 1);
            if !row.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteLogits);
            }
            let mut best = 0;
            for k in 1..self.cfg.coord_bins {
                if row[k] > row[best] {
                    best = k;
                }
            }
            ids.push(best);
        }
        Ok(wrap_coordinates(&ids[1..], &self.cfg))
    }
}
