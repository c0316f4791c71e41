use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::audio::PatchSequence;
use crate::error::{ensure, Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Every parameter of the network as `(name, shape, init)`, in creation order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let e = &cfg.encoder;
    let dcfg = &cfg.decoder;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    let d = e.d_model;
    push("encoder.patch_embed".into(), vec![e.patch_dim(), d], Init::Normal);
    push("encoder.cls_token".into(), vec![1, d], Init::Normal);
    push("encoder.pos_embed".into(), vec![e.max_patches + 1, d], Init::Normal);
    for l in 0..e.layers {
        let p = format!("encoder.layers.{l}");
        layer_norm(&mut push, &format!("{p}.ln1"), d);
        attention(&mut push, &format!("{p}.attn"), d);
        layer_norm(&mut push, &format!("{p}.ln2"), d);
        feed_forward(&mut push, &format!("{p}.ffn"), d, e.ffn_dim);
    }
    layer_norm(&mut push, "encoder.final_ln", d);
    push("tag_head.weight".into(), vec![d, cfg.num_tags.max(1)], Init::Normal);
    push("tag_head.bias".into(), vec![cfg.num_tags.max(1)], Init::Zeros);

    let dd = dcfg.d_model;
    if d != dd {
        push("decoder.memory_proj.weight".into(), vec![d, dd], Init::Normal);
        push("decoder.memory_proj.bias".into(), vec![dd], Init::Zeros);
    }
    push("decoder.word_embed".into(), vec![cfg.vocab_size, dd], Init::Normal);
    for l in 0..dcfg.layers {
        let p = format!("decoder.layers.{l}");
        layer_norm(&mut push, &format!("{p}.ln1"), dd);
        attention(&mut push, &format!("{p}.self_attn"), dd);
        layer_norm(&mut push, &format!("{p}.ln2"), dd);
        attention(&mut push, &format!("{p}.cross_attn"), dd);
        layer_norm(&mut push, &format!("{p}.ln3"), dd);
        feed_forward(&mut push, &format!("{p}.ffn"), dd, dcfg.ffn_dim);
    }
    layer_norm(&mut push, "decoder.final_ln", dd);
    push("decoder.out_proj.weight".into(), vec![dd, cfg.vocab_size], Init::Normal);
    push("decoder.out_proj.bias".into(), vec![cfg.vocab_size], Init::Zeros);
    out
}

fn layer_norm(push: &mut impl FnMut(String, Vec<usize>, Init), p: &str, d: usize) {
    push(format!("{p}.gamma"), vec![d], Init::Ones);
    push(format!("{p}.beta"), vec![d], Init::Zeros);
}

// No key bias: it shifts every score in a query row equally, so softmax
// cancels it and its gradient is identically zero.
fn attention(push: &mut impl FnMut(String, Vec<usize>, Init), p: &str, d: usize) {
    for w in ["q", "k", "v", "o"] {
        push(format!("{p}.w_{w}"), vec![d, d], Init::Normal);
        if w != "k" {
            push(format!("{p}.b_{w}"), vec![d], Init::Zeros);
        }
    }
}

fn feed_forward(push: &mut impl FnMut(String, Vec<usize>, Init), p: &str, d: usize, f: usize) {
    push(format!("{p}.w1"), vec![d, f], Init::Normal);
    push(format!("{p}.b1"), vec![f], Init::Zeros);
    push(format!("{p}.w2"), vec![f, d], Init::Normal);
    push(format!("{p}.b2"), vec![d], Init::Zeros);
}

#[derive(Clone, Copy, Debug)]
struct LnIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIds {
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayerIds {
    ln1: LnIds,
    attn: AttnIds,
    ln2: LnIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct DecoderLayerIds {
    ln1: LnIds,
    self_attn: AttnIds,
    ln2: LnIds,
    cross_attn: AttnIds,
    ln3: LnIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct Ids {
    patch_embed: ParamId,
    cls: ParamId,
    pos: ParamId,
    enc_layers: Vec<EncoderLayerIds>,
    enc_ln: LnIds,
    tag_w: ParamId,
    tag_b: ParamId,
    mem_proj: Option<(ParamId, ParamId)>,
    word_embed: ParamId,
    dec_layers: Vec<DecoderLayerIds>,
    dec_ln: LnIds,
    out_w: ParamId,
    out_b: ParamId,
}

impl Ids {
    fn resolve(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::validation(format!("missing parameter {name}")))
        };
        let ln = |p: &str| -> Result<LnIds> {
            Ok(LnIds {
                gamma: id(&format!("{p}.gamma"))?,
                beta: id(&format!("{p}.beta"))?,
            })
        };
        let attn = |p: &str| -> Result<AttnIds> {
            Ok(AttnIds {
                w_q: id(&format!("{p}.w_q"))?,
                b_q: id(&format!("{p}.b_q"))?,
                w_k: id(&format!("{p}.w_k"))?,
                w_v: id(&format!("{p}.w_v"))?,
                b_v: id(&format!("{p}.b_v"))?,
                w_o: id(&format!("{p}.w_o"))?,
                b_o: id(&format!("{p}.b_o"))?,
            })
        };
        let ffn = |p: &str| -> Result<FfnIds> {
            Ok(FfnIds {
                w1: id(&format!("{p}.w1"))?,
                b1: id(&format!("{p}.b1"))?,
                w2: id(&format!("{p}.w2"))?,
                b2: id(&format!("{p}.b2"))?,
            })
        };
        let enc_layers = (0..cfg.encoder.layers)
            .map(|l| {
                let p = format!("encoder.layers.{l}");
                Ok(EncoderLayerIds {
                    ln1: ln(&format!("{p}.ln1"))?,
                    attn: attn(&format!("{p}.attn"))?,
                    ln2: ln(&format!("{p}.ln2"))?,
                    ffn: ffn(&format!("{p}.ffn"))?,
                })
            })
            .collect::<Result<_>>()?;
        let dec_layers = (0..cfg.decoder.layers)
            .map(|l| {
                let p = format!("decoder.layers.{l}");
                Ok(DecoderLayerIds {
                    ln1: ln(&format!("{p}.ln1"))?,
                    self_attn: attn(&format!("{p}.self_attn"))?,
                    ln2: ln(&format!("{p}.ln2"))?,
                    cross_attn: attn(&format!("{p}.cross_attn"))?,
                    ln3: ln(&format!("{p}.ln3"))?,
                    ffn: ffn(&format!("{p}.ffn"))?,
                })
            })
            .collect::<Result<_>>()?;
        let mem_proj = if cfg.encoder.d_model != cfg.decoder.d_model {
            Some((id("decoder.memory_proj.weight")?, id("decoder.memory_proj.bias")?))
        } else {
            None
        };
        Ok(Ids {
            patch_embed: id("encoder.patch_embed")?,
            cls: id("encoder.cls_token")?,
            pos: id("encoder.pos_embed")?,
            enc_layers,
            enc_ln: ln("encoder.final_ln")?,
            tag_w: id("tag_head.weight")?,
            tag_b: id("tag_head.bias")?,
            mem_proj,
            word_embed: id("decoder.word_embed")?,
            dec_layers,
            dec_ln: ln("decoder.final_ln")?,
            out_w: id("decoder.out_proj.weight")?,
            out_b: id("decoder.out_proj.bias")?,
        })
    }
}

/// Attention probabilities captured during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    /// e.g. `decoder.layers.0.self_attn`.
    pub site: String,
    /// One `queries × keys` probability matrix per head.
    pub heads: Vec<Var>,
}

/// Per-pass switches: dropout on/off, its random stream, and optional
/// capture of attention weights.
pub struct ForwardCtx {
    pub train: bool,
    rng: ChaCha8Rng,
    record: bool,
    pub attention: Vec<AttentionRecord>,
}

impl ForwardCtx {
    /// Deterministic pass with dropout disabled.
    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            record: false,
            attention: Vec::new(),
        }
    }

    /// Training pass; dropout masks are drawn from a stream seeded by `seed`.
    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: false,
            attention: Vec::new(),
        }
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Result<Var> {
        if self.train && p > 0.0 {
            g.dropout(x, p, &mut self.rng)
        } else {
            Ok(x)
        }
    }
}

/// Optional attention mask.
#[derive(Clone, Debug)]
pub enum AttentionMask {
    /// Query `i` may attend to keys `0..=i`.
    Causal,
    /// Additive `queries × keys` logits offsets (use `-inf` to block).
    Additive(Tensor),
}

impl AttentionMask {
    fn offsets(&self, nq: usize, nk: usize) -> Result<Vec<f64>> {
        match self {
            AttentionMask::Causal => Ok((0..nq)
                .flat_map(|i| (0..nk).map(move |j| if j > i { f64::NEG_INFINITY } else { 0.0 }))
                .collect()),
            AttentionMask::Additive(t) => {
                ensure!(
                    t.shape() == [nq, nk],
                    "mask of shape {:?} does not match {nq}x{nk} attention logits",
                    t.shape()
                );
                Ok(t.data().to_vec())
            }
        }
    }
}

/// The captioning network: patch embedding with class token and learned
/// positions, a pre-norm encoder, a pre-norm decoder with masked self- and
/// cross-attention, a tagging head on the class token and a vocabulary head.
#[derive(Clone, Debug)]
pub struct ActModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
}

impl ActModel {
    /// Fresh weights: N(0, init_std²) for matrices and embeddings, zeros for
    /// biases, ones for layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Normal => Tensor::randn(&shape, config.init_std, &mut rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
            };
            store.insert(name, t);
        }
        let ids = Ids::resolve(&config, &store)?;
        Ok(ActModel {
            config,
            params: store,
            ids,
        })
    }

    /// Wraps an existing store, checking every expected tensor and shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in layout(&config) {
            let t = params
                .by_name(&name)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::validation(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        let ids = Ids::resolve(&config, &params)?;
        Ok(ActModel {
            config,
            params,
            ids,
        })
    }

    /// Names and shapes of every parameter without allocating them.
    pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        layout(config).into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("encoder.")
    }

    pub fn is_tagging_param(name: &str) -> bool {
        name.starts_with("encoder.") || name.starts_with("tag_head.")
    }

    // ---- encoder ----

    /// `[X_cls; X·W_e] + X_pos[0..=N]`, followed by dropout when training.
    pub fn embed_patches(&self, g: &mut Graph, patches: &PatchSequence, ctx: &mut ForwardCtx) -> Result<Var> {
        let e = &self.config.encoder;
        ensure!(
            patches.count <= e.max_patches,
            "{} patches exceed the {} positions of the embedding table",
            patches.count,
            e.max_patches
        );
        ensure!(
            patches.patch_dim() == e.patch_dim(),
            "patch width {} does not match the configured {}",
            patches.patch_dim(),
            e.patch_dim()
        );
        let x = g.constant(patches.to_tensor());
        let we = g.param(&self.params, self.ids.patch_embed);
        let projected = g.matmul(x, we)?;
        let cls = g.param(&self.params, self.ids.cls);
        let seq = g.concat_rows(&[cls, projected])?;
        let pos_table = g.param(&self.params, self.ids.pos);
        let pos = g.slice_rows(pos_table, 0, patches.count + 1)?;
        let out = g.add(seq, pos)?;
        ctx.dropout(g, out, e.dropout)
    }

    /// `N_e` pre-norm blocks and a final layer norm. Row 0 is the class token.
    pub fn encoder_forward(&self, g: &mut Graph, embedded: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let e = &self.config.encoder;
        ensure!(
            g.shape(embedded).len() == 2 && g.shape(embedded)[1] == e.d_model,
            "encoder input must be rows of width {}",
            e.d_model
        );
        let mut x = embedded;
        for (l, ids) in self.ids.enc_layers.iter().enumerate() {
            let h = self.norm(g, x, ids.ln1)?;
            let a = self.multi_head_attention(
                g,
                h,
                h,
                &ids.attn,
                e.heads,
                None,
                ctx,
                &format!("encoder.layers.{l}.attn"),
            )?;
            let a = ctx.dropout(g, a, e.dropout)?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, ids.ln2)?;
            let f = self.feed_forward(g, h, &ids.ffn, e.dropout, ctx)?;
            x = g.add(x, f)?;
        }
        self.norm(g, x, self.ids.enc_ln)
    }

    /// Patch embedding followed by the encoder stack.
    pub fn encode(&self, g: &mut Graph, patches: &PatchSequence, ctx: &mut ForwardCtx) -> Result<Var> {
        let x = self.embed_patches(g, patches, ctx)?;
        self.encoder_forward(g, x, ctx)
    }

    /// Encoder rows computed in evaluation mode, for decoding.
    pub fn encode_memory(&self, patches: &PatchSequence) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let enc = self.encode(&mut g, patches, &mut ctx)?;
        Ok(g.value(enc).clone())
    }

    /// Tagging logits from the class-token row of `encoded`.
    pub fn tagging_logits(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        let cls = g.slice_rows(encoded, 0, 1)?;
        let w = g.param(&self.params, self.ids.tag_w);
        let b = g.param(&self.params, self.ids.tag_b);
        let z = g.matmul(cls, w)?;
        g.add_row(z, b)
    }

    /// Independent per-class probabilities `sigmoid(cls·W + b)`.
    pub fn tagging_head_forward(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        let z = self.tagging_logits(g, encoded)?;
        Ok(g.sigmoid(z))
    }

    // ---- decoder ----

    /// Logits for every position of `tokens` (a prefix starting with `<sos>`)
    /// given encoder rows `memory`. Row `t` depends only on `tokens[..=t]`.
    pub fn decoder_forward(&self, g: &mut Graph, tokens: &[usize], memory: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let dcfg = &self.config.decoder;
        ensure!(!tokens.is_empty(), "decoder needs a non-empty token prefix");
        ensure!(
            g.shape(memory).len() == 2 && g.shape(memory)[1] == self.config.encoder.d_model,
            "memory must be rows of width {}",
            self.config.encoder.d_model
        );
        let memory = match self.ids.mem_proj {
            Some((w, b)) => {
                let w = g.param(&self.params, w);
                let b = g.param(&self.params, b);
                let m = g.matmul(memory, w)?;
                g.add_row(m, b)?
            }
            None => memory,
        };
        let table = g.param(&self.params, self.ids.word_embed);
        let emb = g.gather_rows(table, tokens)?;
        let pos = g.constant(sinusoidal_positions(tokens.len(), dcfg.d_model));
        let x0 = g.add(emb, pos)?;
        let mut x = ctx.dropout(g, x0, dcfg.dropout)?;
        for (l, ids) in self.ids.dec_layers.iter().enumerate() {
            let h = self.norm(g, x, ids.ln1)?;
            let a = self.multi_head_attention(
                g,
                h,
                h,
                &ids.self_attn,
                dcfg.heads,
                Some(&AttentionMask::Causal),
                ctx,
                &format!("decoder.layers.{l}.self_attn"),
            )?;
            let a = ctx.dropout(g, a, dcfg.dropout)?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, ids.ln2)?;
            let c = self.multi_head_attention(
                g,
                h,
                memory,
                &ids.cross_attn,
                dcfg.heads,
                None,
                ctx,
                &format!("decoder.layers.{l}.cross_attn"),
            )?;
            let c = ctx.dropout(g, c, dcfg.dropout)?;
            x = g.add(x, c)?;
            let h = self.norm(g, x, ids.ln3)?;
            let f = self.feed_forward(g, h, &ids.ffn, dcfg.dropout, ctx)?;
            x = g.add(x, f)?;
        }
        let x = self.norm(g, x, self.ids.dec_ln)?;
        let w = g.param(&self.params, self.ids.out_w);
        let b = g.param(&self.params, self.ids.out_b);
        let z = g.matmul(x, w)?;
        g.add_row(z, b)
    }

    /// Next-token log-probabilities after `prefix`, in evaluation mode.
    pub fn next_token_log_probs(&self, memory: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mem = g.constant(memory.clone());
        let mut ctx = ForwardCtx::eval();
        let logits = self.decoder_forward(&mut g, prefix, mem, &mut ctx)?;
        let k = self.config.vocab_size;
        let last = g.value(logits).row(prefix.len() - 1).to_vec();
        Ok(crate::numerics::kernels::log_softmax_rows(&last, k))
    }

    // ---- building blocks ----

    fn norm(&self, g: &mut Graph, x: Var, ids: LnIds) -> Result<Var> {
        let gamma = g.param(&self.params, ids.gamma);
        let beta = g.param(&self.params, ids.beta);
        g.layer_norm(x, gamma, beta, self.config.layer_norm_eps)
    }

    fn linear(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = g.param(&self.params, w);
        let b = g.param(&self.params, b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, ids: &FfnIds, p: f64, ctx: &mut ForwardCtx) -> Result<Var> {
        let h = self.linear(g, x, ids.w1, ids.b1)?;
        let h = g.gelu(h);
        let h = ctx.dropout(g, h, p)?;
        let y = self.linear(g, h, ids.w2, ids.b2)?;
        ctx.dropout(g, y, p)
    }

    /// `Concat(head_1..head_h)·W_o` with `head_i = softmax(Q_i K_iᵀ/√d_k + M) V_i`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn multi_head_attention(
        &self,
        g: &mut Graph,
        xq: Var,
        xkv: Var,
        ids: &AttnIds,
        heads: usize,
        mask: Option<&AttentionMask>,
        ctx: &mut ForwardCtx,
        site: &str,
    ) -> Result<Var> {
        let d = g.shape(xq)[1];
        ensure!(d.is_multiple_of(heads), "width {d} not divisible by {heads} heads");
        let dk = d / heads;
        let nq = g.shape(xq)[0];
        let nk = g.shape(xkv)[0];
        let offsets = mask.map(|m| m.offsets(nq, nk)).transpose()?;
        let q = self.linear(g, xq, ids.w_q, ids.b_q)?;
        let wk = g.param(&self.params, ids.w_k);
        let k = g.matmul(xkv, wk)?;
        let v = self.linear(g, xkv, ids.w_v, ids.b_v)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut probs = Vec::new();
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dk, dk)?,
                    g.slice_cols(k, h * dk, dk)?,
                    g.slice_cols(v, h * dk, dk)?,
                )
            };
            let scores = g.matmul_t(qh, kh, false, true)?;
            let mut scores = g.scale(scores, scale);
            if let Some(off) = &offsets {
                scores = g.add_const(scores, off)?;
            }
            let p = g.softmax(scores, 1)?;
            if ctx.record {
                probs.push(p);
            }
            outs.push(g.matmul(p, vh)?);
        }
        if ctx.record {
            ctx.attention.push(AttentionRecord {
                site: site.to_string(),
                heads: probs,
            });
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.linear(g, cat, ids.w_o, ids.b_o)
    }

    /// Runs one attention block of the given site with explicit inputs; used
    /// to probe the attention primitive in isolation.
    pub fn attention_block(
        &self,
        g: &mut Graph,
        site: &str,
        xq: Var,
        xkv: Var,
        mask: Option<&AttentionMask>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let (ids, heads) = self.attention_ids(site)?;
        self.multi_head_attention(g, xq, xkv, &ids, heads, mask, ctx, site)
    }

    fn attention_ids(&self, site: &str) -> Result<(AttnIds, usize)> {
        let parts: Vec<&str> = site.split('.').collect();
        let bad = || Error::invalid(format!("unknown attention site {site}"));
        if parts.len() != 4 || parts[1] != "layers" {
            return Err(bad());
        }
        let l: usize = parts[2].parse().map_err(|_| bad())?;
        match (parts[0], parts[3]) {
            ("encoder", "attn") => self
                .ids
                .enc_layers
                .get(l)
                .map(|x| (x.attn, self.config.encoder.heads))
                .ok_or_else(bad),
            ("decoder", "self_attn") => self
                .ids
                .dec_layers
                .get(l)
                .map(|x| (x.self_attn, self.config.decoder.heads))
                .ok_or_else(bad),
            ("decoder", "cross_attn") => self
                .ids
                .dec_layers
                .get(l)
                .map(|x| (x.cross_attn, self.config.decoder.heads))
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

/// Fixed sine/cosine position codes for decoder inputs.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![len, d], data)
}
