use std::collections::BTreeSet;

use crate::corpus::{SubjectId, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::nn::layers::pooled_len;
use crate::nn::ops::{add_per_token, mean_tokens, sum_tokens, transpose_last2};
use crate::nn::{Layer, LayerSpec, ParamSet, Sequential, Tape, Tensor};
use crate::rng::SeededRng;

use super::config::{EncoderConfig, Family};
use super::masks::MaskPattern;

/// Scale of the learned mask token at initialisation.
const MASK_TOKEN_INIT_STD: f64 = 0.02;

/// Read-only access used by the attacks.
pub trait Encoder: Sync {
    fn family(&self) -> Family;

    fn embedding_dim(&self) -> usize;

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn reconstruct(&self, x: &[f64], mask: &MaskPattern) -> Result<Vec<f64>> {
        let _ = (x, mask);
        Err(Error::Unsupported(format!(
            "{} encoders have no reconstruction pathway",
            self.family()
        )))
    }
}

/// Pooling path plus projection from the trunk's feature map to an embedding.
#[derive(Clone, Debug)]
struct Head {
    pool: Sequential,
    proj: Layer,
}

#[derive(Clone, Debug)]
struct CnnDecoder {
    token_pool: Sequential,
    out: Layer,
}

#[derive(Clone, Debug)]
struct CnnNet {
    trunk: Sequential,
    heads: Vec<Head>,
    decoder: Option<CnnDecoder>,
}

#[derive(Clone, Debug)]
struct Block {
    norm1: Layer,
    attn: Layer,
    norm2: Layer,
    mlp: Sequential,
}

#[derive(Clone, Debug)]
struct TransformerNet {
    embed: Layer,
    mask_token: usize,
    blocks: Vec<Block>,
    final_norm: Layer,
    decoder: Layer,
}

#[derive(Clone, Debug)]
enum Network {
    Cnn(CnnNet),
    Transformer(TransformerNet),
}

/// Intermediates kept from a forward pass for the matching backward.
#[derive(Clone, Debug)]
pub struct ForwardCache(CacheKind);

#[derive(Clone, Debug)]
enum CacheKind {
    Cnn(CnnCache),
    Transformer(TransformerCache),
}

#[derive(Clone, Debug)]
struct CnnCache {
    trunk: Tape,
    heads: Vec<(Tape, Tensor)>,
    decoder: Option<(Tape, Tensor)>,
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Tensor,
    normed1: Tensor,
    mid: Tensor,
    mlp: Tape,
}

#[derive(Clone, Debug)]
struct TransformerCache {
    input: Tensor,
    masked: Vec<bool>,
    blocks: Vec<BlockCache>,
    final_input: Tensor,
    tokens: Tensor,
}

/// A self-supervised encoder together with its recorded training subjects.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: ParamSet,
    train_subjects: BTreeSet<SubjectId>,
    net: Network,
}

fn window_tensor(xs: &[&[f64]]) -> Result<Tensor> {
    if let Some(x) = xs.iter().find(|x| x.len() != WINDOW_LEN) {
        return Err(Error::Shape {
            layer: "encoder_input",
            expected: format!("window of {WINDOW_LEN} samples"),
            got: vec![x.len()],
        });
    }
    Tensor::new(vec![xs.len(), 1, WINDOW_LEN], xs.concat())
}

/// Splits a batch-leading tensor into one flat row per sample.
fn rows(t: Tensor) -> Vec<Vec<f64>> {
    let width = t.len() / t.shape()[0];
    t.into_data().chunks(width).map(<[f64]>::to_vec).collect()
}

impl EncoderModel {
    /// Freshly initialised model; parameters depend only on the config.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derive(config.seed, &["init", config.family.as_str()]);
        let mut params = ParamSet::new();
        let net = match config.family {
            Family::MaeTransformer => Network::Transformer(build_transformer(config, &mut params, &mut rng)?),
            _ => Network::Cnn(build_cnn(config, &mut params, &mut rng)?),
        };
        Ok(Self {
            config: config.clone(),
            params,
            train_subjects: BTreeSet::new(),
            net,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn train_subjects(&self) -> &BTreeSet<SubjectId> {
        &self.train_subjects
    }

    pub fn set_train_subjects(&mut self, subjects: BTreeSet<SubjectId>) {
        self.train_subjects = subjects;
    }

    pub fn is_member(&self, subject: &SubjectId) -> bool {
        self.train_subjects.contains(subject)
    }

    /// Embeddings for a batch of windows, one row per window.
    pub fn encode_batch(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let input = window_tensor(xs)?;
        let z = match &self.net {
            Network::Cnn(net) => {
                let fm = net.trunk.forward(&self.params, &input)?;
                self.head_forward(&net.heads[0], fm)?.0
            }
            Network::Transformer(net) => {
                let (tokens, _) = self.transformer_forward(net, input, None)?;
                mean_tokens(&tokens)?
            }
        };
        Ok(rows(z))
    }

    /// Reconstructions for a batch of windows under one mask.
    pub fn reconstruct_batch(&self, xs: &[&[f64]], mask: &MaskPattern) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let (y, _) = self.reconstruct_forward_batch(xs, mask)?;
        Ok(rows(y))
    }

    fn check_mask(&self, mask: &MaskPattern) -> Result<()> {
        if mask.patch_len() != self.config.patch_len || mask.patch_count() != self.config.patch_count() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} patches of {} samples, model expects {} of {}",
                mask.patch_count(),
                mask.patch_len(),
                self.config.patch_count(),
                self.config.patch_len
            )));
        }
        Ok(())
    }

    fn head_forward(&self, head: &Head, fm: Tensor) -> Result<(Tensor, Tape, Tensor)> {
        let (pooled, tape) = head.pool.forward_taped(&self.params, fm)?;
        let n = pooled.shape()[0];
        let c = pooled.shape()[1];
        let flat = pooled.reshape(vec![n, c])?;
        let z = head.proj.forward(&self.params, &flat)?;
        Ok((z, tape, flat))
    }

    fn head_backward(
        &self,
        head: &Head,
        tape: &Tape,
        flat: &Tensor,
        grad: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let g_flat = head.proj.backward(&self.params, flat, grad, grads)?;
        let (n, c) = (flat.shape()[0], flat.shape()[1]);
        head.pool.backward(&self.params, tape, g_flat.reshape(vec![n, c, 1])?, grads)
    }

    /// Per-resolution embeddings `(1, D)` of one view, for contrastive training.
    pub(crate) fn contrastive_forward(&self, x: &[f64]) -> Result<(Vec<Tensor>, ForwardCache)> {
        let Network::Cnn(net) = &self.net else {
            return Err(Error::Unsupported("contrastive pass on a transformer".into()));
        };
        let (fm, trunk) = net.trunk.forward_taped(&self.params, window_tensor(&[x])?)?;
        let mut out = Vec::with_capacity(net.heads.len());
        let mut heads = Vec::with_capacity(net.heads.len());
        for head in &net.heads {
            let (z, tape, flat) = self.head_forward(head, fm.clone())?;
            out.push(z);
            heads.push((tape, flat));
        }
        Ok((
            out,
            ForwardCache(CacheKind::Cnn(CnnCache {
                trunk,
                heads,
                decoder: None,
            })),
        ))
    }

    pub(crate) fn contrastive_backward(
        &self,
        cache: &ForwardCache,
        grad_per_head: &[Tensor],
        grads: &mut [Tensor],
    ) -> Result<()> {
        let (Network::Cnn(net), CacheKind::Cnn(cache)) = (&self.net, &cache.0) else {
            return Err(Error::Unsupported("contrastive pass on a transformer".into()));
        };
        let mut g_fm: Option<Tensor> = None;
        for ((head, (tape, flat)), g) in net.heads.iter().zip(&cache.heads).zip(grad_per_head) {
            let g = self.head_backward(head, tape, flat, g, grads)?;
            match &mut g_fm {
                Some(acc) => acc.add_assign(&g)?,
                None => g_fm = Some(g),
            }
        }
        let g_fm = g_fm.ok_or_else(|| Error::InvalidArgument("no head gradients".into()))?;
        net.trunk.backward(&self.params, &cache.trunk, g_fm, grads)?;
        Ok(())
    }

    fn reconstruct_forward_batch(&self, xs: &[&[f64]], mask: &MaskPattern) -> Result<(Tensor, ForwardCache)> {
        if self.config.family.is_contrastive() {
            return Err(Error::Unsupported(format!(
                "{} encoders have no reconstruction pathway",
                self.config.family
            )));
        }
        self.check_mask(mask)?;
        let n = xs.len();
        let (p, plen) = (mask.patch_count(), mask.patch_len());
        match &self.net {
            Network::Cnn(net) => {
                let mut input = window_tensor(xs)?;
                for row in input.data_mut().chunks_mut(WINDOW_LEN) {
                    for (i, v) in row.iter_mut().enumerate() {
                        if mask.is_sample_masked(i) {
                            *v = 0.0;
                        }
                    }
                }
                let (fm, trunk) = net.trunk.forward_taped(&self.params, input)?;
                let (z, head_tape, flat) = self.head_forward(&net.heads[0], fm.clone())?;
                let dec = net.decoder.as_ref().expect("mae_cnn has a decoder");
                let (tok, pool_tape) = dec.token_pool.forward_taped(&self.params, fm)?;
                let h = add_per_token(&transpose_last2(&tok)?, &z)?;
                let y = dec.out.forward(&self.params, &h)?;
                Ok((
                    y.reshape(vec![n, p * plen])?,
                    ForwardCache(CacheKind::Cnn(CnnCache {
                        trunk,
                        heads: vec![(head_tape, flat)],
                        decoder: Some((pool_tape, h)),
                    })),
                ))
            }
            Network::Transformer(net) => {
                let (tokens, mut cache) =
                    self.transformer_forward(net, window_tensor(xs)?, Some(mask))?;
                let y = net.decoder.forward(&self.params, &tokens)?;
                cache.tokens = tokens;
                Ok((
                    y.reshape(vec![n, p * plen])?,
                    ForwardCache(CacheKind::Transformer(cache)),
                ))
            }
        }
    }

    /// Reconstruction of one window, for masked-reconstruction training.
    pub(crate) fn reconstruct_forward(&self, x: &[f64], mask: &MaskPattern) -> Result<(Vec<f64>, ForwardCache)> {
        let (y, cache) = self.reconstruct_forward_batch(&[x], mask)?;
        Ok((y.into_data(), cache))
    }

    pub(crate) fn reconstruct_backward(
        &self,
        cache: &ForwardCache,
        grad: &[f64],
        grads: &mut [Tensor],
    ) -> Result<()> {
        let p = self.config.patch_count();
        let plen = self.config.patch_len;
        let g_y = Tensor::new(vec![1, p, plen], grad.to_vec())?;
        match (&self.net, &cache.0) {
            (Network::Cnn(net), CacheKind::Cnn(cache)) => {
                let dec = net.decoder.as_ref().expect("mae_cnn has a decoder");
                let (pool_tape, h) = cache.decoder.as_ref().expect("cache holds decoder state");
                let g_h = dec.out.backward(&self.params, h, &g_y, grads)?;
                let g_z = sum_tokens(&g_h)?;
                let g_tok = transpose_last2(&g_h)?;
                let mut g_fm = dec.token_pool.backward(&self.params, pool_tape, g_tok, grads)?;
                let (head_tape, flat) = &cache.heads[0];
                g_fm.add_assign(&self.head_backward(&net.heads[0], head_tape, flat, &g_z, grads)?)?;
                net.trunk.backward(&self.params, &cache.trunk, g_fm, grads)?;
                Ok(())
            }
            (Network::Transformer(net), CacheKind::Transformer(cache)) => {
                let g_tokens = net.decoder.backward(&self.params, &cache.tokens, &g_y, grads)?;
                self.transformer_backward(net, cache, g_tokens, grads)
            }
            _ => Err(Error::InvalidArgument("forward cache from another family".into())),
        }
    }

    fn transformer_forward(
        &self,
        net: &TransformerNet,
        input: Tensor,
        mask: Option<&MaskPattern>,
    ) -> Result<(Tensor, TransformerCache)> {
        let mut h = net.embed.forward(&self.params, &input)?;
        let (n, p, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let masked: Vec<bool> = match mask {
            Some(m) => m.patches().to_vec(),
            None => vec![false; p],
        };
        if masked.iter().any(|&m| m) {
            let token = self.params.value(net.mask_token).data().to_vec();
            let pos = self.params.value(net.embed.slots.start + 2).data().to_vec();
            for s in 0..n {
                for (t, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                    let row = &mut h.data_mut()[(s * p + t) * d..(s * p + t + 1) * d];
                    for j in 0..d {
                        row[j] = token[j] + pos[t * d + j];
                    }
                }
            }
        }
        let mut blocks = Vec::with_capacity(net.blocks.len());
        for b in &net.blocks {
            let normed1 = b.norm1.forward(&self.params, &h)?;
            let mut mid = b.attn.forward(&self.params, &normed1)?;
            mid.add_assign(&h)?;
            let normed2 = b.norm2.forward(&self.params, &mid)?;
            let (mut out, mlp) = b.mlp.forward_taped(&self.params, normed2)?;
            out.add_assign(&mid)?;
            blocks.push(BlockCache {
                input: h,
                normed1,
                mid,
                mlp,
            });
            h = out;
        }
        let tokens = net.final_norm.forward(&self.params, &h)?;
        Ok((
            tokens,
            TransformerCache {
                input,
                masked,
                blocks,
                final_input: h,
                tokens: Tensor::zeros(&[0]),
            },
        ))
    }

    fn transformer_backward(
        &self,
        net: &TransformerNet,
        cache: &TransformerCache,
        g_tokens: Tensor,
        grads: &mut [Tensor],
    ) -> Result<()> {
        let mut g = net
            .final_norm
            .backward(&self.params, &cache.final_input, &g_tokens, grads)?;
        for (b, c) in net.blocks.iter().zip(&cache.blocks).rev() {
            let g_n2 = b.mlp.backward(&self.params, &c.mlp, g.clone(), grads)?;
            let mut g_mid = b.norm2.backward(&self.params, &c.mid, &g_n2, grads)?;
            g_mid.add_assign(&g)?;
            let g_n1 = b.attn.backward(&self.params, &c.normed1, &g_mid, grads)?;
            let mut g_in = b.norm1.backward(&self.params, &c.input, &g_n1, grads)?;
            g_in.add_assign(&g_mid)?;
            g = g_in;
        }
        let (n, p, d) = (g.shape()[0], g.shape()[1], g.shape()[2]);
        let pos_slot = net.embed.slots.start + 2;
        for s in 0..n {
            for (t, _) in cache.masked.iter().enumerate().filter(|(_, &m)| m) {
                let row = &mut g.data_mut()[(s * p + t) * d..(s * p + t + 1) * d];
                for j in 0..d {
                    grads[net.mask_token].data_mut()[j] += row[j];
                    grads[pos_slot].data_mut()[t * d + j] += row[j];
                    row[j] = 0.0;
                }
            }
        }
        net.embed.backward(&self.params, &cache.input, &g, grads)?;
        Ok(())
    }
}

impl Encoder for EncoderModel {
    fn family(&self) -> Family {
        self.config.family
    }

    fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[x])?.remove(0))
    }

    fn reconstruct(&self, x: &[f64], mask: &MaskPattern) -> Result<Vec<f64>> {
        Ok(self.reconstruct_forward_batch(&[x], mask)?.0.into_data())
    }
}

fn build_cnn(cfg: &EncoderConfig, params: &mut ParamSet, rng: &mut SeededRng) -> Result<CnnNet> {
    let mut specs = Vec::new();
    let mut in_channels = 1;
    for &out_channels in &cfg.conv_channels {
        specs.push(LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size: cfg.conv_kernel,
            stride: cfg.conv_stride,
        });
        specs.push(LayerSpec::Relu);
        in_channels = out_channels;
    }
    let trunk = Sequential::build(specs, "trunk", params, rng)?;
    let channels = in_channels;
    let len = cfg.trunk_len();
    let levels = if cfg.family == Family::Ts2vec { cfg.resolutions } else { 1 };
    let mut heads = Vec::with_capacity(levels);
    for level in 0..levels {
        let k = 1usize << level;
        let mut pool = Vec::new();
        let mut pooled = len;
        if k > 1 {
            pool.push(LayerSpec::MaxPool1d {
                kernel_size: k,
                stride: k,
            });
            pooled = pooled_len(len, k, k);
        }
        pool.push(LayerSpec::AvgPool1d {
            kernel_size: pooled,
            stride: 1,
        });
        heads.push(Head {
            pool: Sequential::build(pool, &format!("head{level}.pool"), params, rng)?,
            proj: Layer::build(
                LayerSpec::Linear {
                    in_features: channels,
                    out_features: cfg.embedding_dim,
                },
                &format!("head{level}.proj"),
                params,
                rng,
            )?,
        });
    }
    let decoder = if cfg.family == Family::MaeCnn {
        let k = len / cfg.patch_count();
        Some(CnnDecoder {
            token_pool: Sequential::build(
                vec![LayerSpec::AvgPool1d {
                    kernel_size: k,
                    stride: k,
                }],
                "decoder.pool",
                params,
                rng,
            )?,
            out: Layer::build(
                LayerSpec::Linear {
                    in_features: channels,
                    out_features: cfg.patch_len,
                },
                "decoder.out",
                params,
                rng,
            )?,
        })
    } else {
        None
    };
    Ok(CnnNet { trunk, heads, decoder })
}

fn build_transformer(cfg: &EncoderConfig, params: &mut ParamSet, rng: &mut SeededRng) -> Result<TransformerNet> {
    let d = cfg.model_dim;
    let embed = Layer::build(
        LayerSpec::PatchEmbed {
            patch_len: cfg.patch_len,
            patches: cfg.patch_count(),
            dim: d,
        },
        "patch_embed",
        params,
        rng,
    )?;
    let token: Vec<f64> = (0..d).map(|_| MASK_TOKEN_INIT_STD * rng.normal()).collect();
    let mask_token = params.push("mask_token", Tensor::new(vec![d], token)?);
    let mut blocks = Vec::with_capacity(cfg.attention_blocks);
    for i in 0..cfg.attention_blocks {
        let norm = LayerSpec::LayerNorm { dim: d };
        let prefix = format!("block{i}");
        blocks.push(Block {
            norm1: Layer::build(norm.clone(), &format!("{prefix}.norm1"), params, rng)?,
            attn: Layer::build(LayerSpec::Attention { dim: d }, &format!("{prefix}.attn"), params, rng)?,
            norm2: Layer::build(norm, &format!("{prefix}.norm2"), params, rng)?,
            mlp: Sequential::build(
                vec![
                    LayerSpec::Linear {
                        in_features: d,
                        out_features: d,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Linear {
                        in_features: d,
                        out_features: d,
                    },
                ],
                &format!("{prefix}.mlp"),
                params,
                rng,
            )?,
        });
    }
    let final_norm = Layer::build(LayerSpec::LayerNorm { dim: d }, "final_norm", params, rng)?;
    let decoder = Layer::build(
        LayerSpec::Linear {
            in_features: d,
            out_features: cfg.patch_len,
        },
        "decoder",
        params,
        rng,
    )?;
    Ok(TransformerNet {
        embed,
        mask_token,
        blocks,
        final_norm,
        decoder,
    })
}
