//! Forward pass of the policy on a [`Graph`].
//!
//! Per-step quantities are 1-D vectors of length `d`; the box embeddings
//! are an `N x d` matrix.

use binpack_tensor::{Graph, Scalar, Tensor};

use super::params::{Head, Layout, Lin, Mixer, Norm};
use super::PolicyModel;
use crate::error::{contract, Result};

/// Model parameters bound as leaves of one graph.
pub struct Net<'m> {
    model: &'m PolicyModel,
    params: Vec<Tensor>,
}

/// Per-episode encoder output and the decoder keys derived from it.
#[derive(Debug, Clone)]
pub struct EpisodeCtx {
    pub embeddings: Tensor,
    pub n: usize,
    glimpse_k: Vec<Tensor>,
    glimpse_v: Vec<Tensor>,
    logit_k: Option<Tensor>,
}

/// Frontier embedding of the current step, raw and projected.
#[derive(Debug, Clone, Copy)]
pub struct FrontierEmb {
    pub f: Tensor,
    pub projected: Tensor,
}

impl<'m> Net<'m> {
    /// Copies every parameter into `g` as a leaf.
    pub fn bind<T: Scalar>(model: &'m PolicyModel, g: &mut Graph<T>, trainable: bool) -> Result<Self> {
        let params = model
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param_f32(&t.data, &t.shape)
                } else {
                    g.constant_f32(&t.data, &t.shape)
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { model, params })
    }

    /// Uses leaves that are already in the graph, in parameter order.
    pub fn from_handles(model: &'m PolicyModel, params: Vec<Tensor>) -> Result<Self> {
        if params.len() != model.params.len() {
            return Err(contract(format!(
                "{} handles for {} parameters",
                params.len(),
                model.params.len()
            )));
        }
        Ok(Self { model, params })
    }

    pub fn handles(&self) -> &[Tensor] {
        &self.params
    }

    fn layout(&self) -> &'m Layout {
        &self.model.layout
    }

    fn linear<T: Scalar>(&self, g: &mut Graph<T>, x: Tensor, l: Lin) -> Result<Tensor> {
        let y = g.matmul(x, self.params[l.w])?;
        match l.b {
            Some(b) => Ok(g.add_row(y, self.params[b])?),
            None => Ok(y),
        }
    }

    fn norm<T: Scalar>(&self, g: &mut Graph<T>, x: Tensor, n: Norm) -> Result<Tensor> {
        let y = g.layer_norm(x);
        let y = g.mul_row(y, self.params[n.gain])?;
        Ok(g.add_row(y, self.params[n.bias])?)
    }

    fn head<T: Scalar>(&self, g: &mut Graph<T>, x: Tensor, h: &Head) -> Result<Tensor> {
        let x = self.linear(g, x, h.fc1)?;
        let x = self.norm(g, x, h.ln1)?;
        let x = g.relu(x);
        let x = self.linear(g, x, h.fc2)?;
        let x = self.norm(g, x, h.ln2)?;
        let x = g.relu(x);
        self.linear(g, x, h.out)
    }

    /// `C * tanh(x)`, masked entries replaced by the sentinel, then
    /// log-softmax.
    fn clamped_log_softmax<T: Scalar>(&self, g: &mut Graph<T>, x: Tensor, masked: &[bool]) -> Result<Tensor> {
        let x = g.tanh(x);
        let x = g.scale(x, self.model.config.clamp);
        let x = g.masked_fill(x, masked)?;
        Ok(g.log_softmax(x))
    }

    /// Box embeddings from normalized `(l, w, h)` features, plus the
    /// decoder keys and values computed once per episode.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, features: &[[f64; 3]]) -> Result<EpisodeCtx> {
        let cfg = &self.model.config;
        let lay = self.layout();
        let n = features.len();
        if n == 0 {
            return Err(contract("cannot encode an empty box set"));
        }
        let x: Vec<T> = features.iter().flatten().map(|&v| T::of(v)).collect();
        let x = g.constant(x, &[n, 3])?;
        let mut b = self.linear(g, x, lay.embed)?;
        let hd = cfg.head_dim();
        let inv_sqrt_h = 1.0 / (hd as f64).sqrt();
        for block in &lay.blocks {
            let xn = self.norm(g, b, block.ln1)?;
            let mixed = match &block.mixer {
                Mixer::Attention { q, k, v, o } => {
                    let q = self.linear(g, xn, *q)?;
                    let k = self.linear(g, xn, *k)?;
                    let v = self.linear(g, xn, *v)?;
                    let mut heads = Vec::with_capacity(cfg.heads);
                    for m in 0..cfg.heads {
                        let qm = g.slice_cols(q, m * hd, hd)?;
                        let km = g.slice_cols(k, m * hd, hd)?;
                        let vm = g.slice_cols(v, m * hd, hd)?;
                        let s = g.matmul_bt(qm, km)?;
                        let s = g.scale(s, inv_sqrt_h);
                        let a = g.softmax(s);
                        heads.push(g.matmul(a, vm)?);
                    }
                    let cat = g.concat_cols(&heads)?;
                    self.linear(g, cat, *o)?
                }
                Mixer::Residual { up, down } => {
                    let h = self.linear(g, xn, *up)?;
                    let h = g.relu(h);
                    self.linear(g, h, *down)?
                }
            };
            let bt = g.add(b, mixed)?;
            let xn = self.norm(g, bt, block.ln2)?;
            let h = self.linear(g, xn, block.fc1)?;
            let h = g.relu(h);
            let h = self.linear(g, h, block.fc2)?;
            b = g.add(bt, h)?;
        }
        let (mut glimpse_k, mut glimpse_v, mut logit_k) = (Vec::new(), Vec::new(), None);
        if let Some(seq) = &lay.seq {
            let gk = self.linear(g, b, seq.glimpse_k)?;
            let gv = self.linear(g, b, seq.glimpse_v)?;
            for m in 0..cfg.heads {
                glimpse_k.push(g.slice_cols(gk, m * hd, hd)?);
                glimpse_v.push(g.slice_cols(gv, m * hd, hd)?);
            }
            logit_k = Some(self.linear(g, b, seq.logit_k)?);
        }
        Ok(EpisodeCtx {
            embeddings: b,
            n,
            glimpse_k,
            glimpse_v,
            logit_k,
        })
    }

    /// Embeds the stacked frontiers; entries are divided by `scale`.
    pub fn frontier<T: Scalar>(&self, g: &mut Graph<T>, prev: &[u32], cur: &[u32], scale: u32) -> Result<FrontierEmb> {
        let cfg = &self.model.config;
        let lay = self.layout();
        let cells = cfg.width as usize * cfg.height as usize;
        if prev.len() != cells || cur.len() != cells {
            return Err(contract(format!(
                "frontier of {} cells for a {}x{} bin",
                cur.len(),
                cfg.width,
                cfg.height
            )));
        }
        let scale = 1.0 / scale.max(1) as f64;
        let mut data: Vec<T> = Vec::with_capacity(2 * cells);
        if cfg.two_frontiers {
            data.extend(prev.iter().map(|&v| T::of(v as f64 * scale)));
        }
        data.extend(cur.iter().map(|&v| T::of(v as f64 * scale)));
        let c = cfg.frontier_channels();
        let mut x = if cfg.frontier.is_1d() {
            g.constant(data, &[c, cfg.width as usize])?
        } else {
            g.constant(data, &[c, cfg.width as usize, cfg.height as usize])?
        };
        for conv in &lay.convs {
            let (w, b) = (self.params[conv.w], self.params[conv.b]);
            x = if cfg.frontier.is_1d() {
                g.conv1d(x, w, b, conv.stride, conv.pad)?
            } else {
                g.conv2d(x, w, b, conv.stride, conv.pad)?
            };
            let shape = g.shape(x).to_vec();
            let flat = g.reshape(x, &[shape.iter().product()])?;
            let flat = self.norm(g, flat, conv.norm)?;
            let flat = g.relu(flat);
            x = g.reshape(flat, &shape)?;
        }
        let len = g.value(x).len();
        let flat = g.reshape(x, &[len])?;
        let f = self.linear(g, flat, lay.frontier_fc)?;
        let f = self.norm(g, f, lay.frontier_ln)?;
        let f = g.relu(f);
        let projected = self.linear(g, f, lay.w_frontier)?;
        Ok(FrontierEmb { f, projected })
    }

    /// Mean of the projected leftover mean and the projected frontier.
    pub fn sequence_query<T: Scalar>(&self, g: &mut Graph<T>, ctx: &EpisodeCtx, packed: &[bool], fr: &FrontierEmb) -> Result<Tensor> {
        let w = self
            .layout()
            .w_s_leftover
            .ok_or_else(|| contract("model has no sequence query"))?;
        let unpacked: Vec<bool> = packed.iter().map(|p| !p).collect();
        let left = g.mean_rows(ctx.embeddings, Some(&unpacked))?;
        let left = self.linear(g, left, w)?;
        let q = g.add(left, fr.projected)?;
        Ok(g.scale(q, 0.5))
    }

    /// Log-probabilities over the `N` boxes; packed boxes hold the sentinel.
    pub fn sequence_logp<T: Scalar>(&self, g: &mut Graph<T>, ctx: &EpisodeCtx, packed: &[bool], fr: &FrontierEmb) -> Result<Tensor> {
        let cfg = &self.model.config;
        let seq = self
            .layout()
            .seq
            .as_ref()
            .ok_or_else(|| contract("model has no sequence decoder"))?;
        if packed.len() != ctx.n || packed.iter().all(|&p| p) {
            return Err(contract("sequence decoding needs at least one unpacked box"));
        }
        let q = self.sequence_query(g, ctx, packed, fr)?;
        let hd = cfg.head_dim();
        let inv_sqrt_h = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.heads);
        for m in 0..cfg.heads {
            let qm = g.slice_cols(q, m * hd, hd)?;
            let c = g.matmul_bt(qm, ctx.glimpse_k[m])?;
            let c = g.scale(c, inv_sqrt_h);
            let c = g.masked_fill(c, packed)?;
            let a = g.softmax(c);
            heads.push(g.matmul(a, ctx.glimpse_v[m])?);
        }
        let q = g.concat_cols(&heads)?;
        let q = self.linear(g, q, seq.query)?;
        let logit_k = ctx.logit_k.expect("keys exist with the decoder");
        let c = g.matmul_bt(q, logit_k)?;
        let c = g.scale(c, 1.0 / (cfg.d as f64).sqrt());
        self.clamped_log_softmax(g, c, packed)
    }

    /// Log-probabilities over the `O * W` placements of box `s`; `feasible`
    /// is the placement mask and `packed_after` includes `s`.
    pub fn placement_logp<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &EpisodeCtx,
        s: usize,
        packed_after: &[bool],
        fr: &FrontierEmb,
        feasible: &[bool],
    ) -> Result<Tensor> {
        let lay = self.layout();
        let (Some(w_sel), Some(head)) = (lay.w_selected, lay.place.as_ref()) else {
            return Err(contract("model has no placement decoder"));
        };
        if !feasible.iter().any(|&m| m) {
            return Err(contract("placement mask has no feasible entry"));
        }
        let b = g.row(ctx.embeddings, s)?;
        let mut q = self.linear(g, b, w_sel)?;
        let mut terms = 2.0;
        if let Some(w_left) = lay.w_p_leftover {
            let unpacked: Vec<bool> = packed_after.iter().map(|p| !p).collect();
            let left = g.mean_rows(ctx.embeddings, Some(&unpacked))?;
            let left = self.linear(g, left, w_left)?;
            q = g.add(q, left)?;
            terms += 1.0;
        }
        let q = g.add(q, fr.projected)?;
        let q = g.scale(q, 1.0 / terms);
        let logits = self.head(g, q, head)?;
        let masked: Vec<bool> = feasible.iter().map(|m| !m).collect();
        self.clamped_log_softmax(g, logits, &masked)
    }

    /// Log-probabilities over all `N * O * W` joint actions.
    pub fn joint_logp<T: Scalar>(&self, g: &mut Graph<T>, ctx: &EpisodeCtx, packed: &[bool], fr: &FrontierEmb, feasible: &[bool]) -> Result<Tensor> {
        let head = self
            .layout()
            .joint
            .as_ref()
            .ok_or_else(|| contract("model has no joint head"))?;
        if self.model.config.joint_boxes != Some(ctx.n) {
            return Err(contract(format!(
                "joint head is sized for {:?} boxes, instance has {}",
                self.model.config.joint_boxes, ctx.n
            )));
        }
        if !feasible.iter().any(|&m| m) {
            return Err(contract("joint mask has no feasible entry"));
        }
        let q = self.sequence_query(g, ctx, packed, fr)?;
        let len = g.value(ctx.embeddings).len();
        let flat = g.reshape(ctx.embeddings, &[len])?;
        let x = g.concat_cols(&[q, flat])?;
        let logits = self.head(g, x, head)?;
        let masked: Vec<bool> = feasible.iter().map(|m| !m).collect();
        self.clamped_log_softmax(g, logits, &masked)
    }
}
