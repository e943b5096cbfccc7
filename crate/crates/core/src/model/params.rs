//! Named parameter storage and the index layout the network reads it by.

use binpack_tensor::HostTensor;
use rand::Rng;

use super::config::{ModelConfig, SequenceMode};
use crate::error::Result;

/// Affine map `x W + b`, `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: Option<usize>,
}

/// Gain and bias applied after normalization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Mixer {
    Attention { q: Lin, k: Lin, v: Lin, o: Lin },
    /// `d -> 2d -> ReLU -> d`, roughly the parameter count of attention.
    Residual { up: Lin, down: Lin },
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub ln1: Norm,
    pub mixer: Mixer,
    pub ln2: Norm,
    pub fc1: Lin,
    pub fc2: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    pub norm: Norm,
    pub stride: usize,
    pub pad: usize,
}

/// Two hidden layers with normalization, then the logit layer.
#[derive(Debug, Clone)]
pub(crate) struct Head {
    pub fc1: Lin,
    pub ln1: Norm,
    pub fc2: Lin,
    pub ln2: Norm,
    pub out: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct SeqDecoder {
    pub glimpse_k: Lin,
    pub glimpse_v: Lin,
    pub logit_k: Lin,
    pub query: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: Lin,
    pub blocks: Vec<Block>,
    pub convs: Vec<Conv>,
    pub frontier_fc: Lin,
    pub frontier_ln: Norm,
    pub w_frontier: Lin,
    pub w_s_leftover: Option<Lin>,
    pub seq: Option<SeqDecoder>,
    pub w_selected: Option<Lin>,
    pub w_p_leftover: Option<Lin>,
    pub place: Option<Head>,
    pub joint: Option<Head>,
}

/// Builds named tensors in a fixed order; the order is the checkpoint order.
pub(crate) struct Builder<'r, R: Rng> {
    pub params: Vec<(String, HostTensor)>,
    rng: &'r mut R,
}

impl<'r, R: Rng> Builder<'r, R> {
    fn push(&mut self, name: String, t: HostTensor) -> usize {
        self.params.push((name, t));
        self.params.len() - 1
    }

    fn lin(&mut self, name: &str, n_in: usize, n_out: usize, bias: bool) -> Lin {
        let w = HostTensor::uniform_fan_in(&[n_in, n_out], n_in, self.rng);
        let w = self.push(format!("{name}.w"), w);
        let b = bias.then(|| {
            let b = HostTensor::uniform_fan_in(&[n_out], n_in, self.rng);
            self.push(format!("{name}.b"), b)
        });
        Lin { w, b }
    }

    fn norm(&mut self, name: &str, n: usize) -> Norm {
        Norm {
            gain: self.push(format!("{name}.gain"), HostTensor::filled(&[n], 1.0)),
            bias: self.push(format!("{name}.bias"), HostTensor::zeros(&[n])),
        }
    }

    fn head(&mut self, name: &str, n_in: usize, hidden: usize, n_out: usize) -> Head {
        Head {
            fc1: self.lin(&format!("{name}.fc1"), n_in, hidden, true),
            ln1: self.norm(&format!("{name}.ln1"), hidden),
            fc2: self.lin(&format!("{name}.fc2"), hidden, hidden, true),
            ln2: self.norm(&format!("{name}.ln2"), hidden),
            out: self.lin(&format!("{name}.out"), hidden, n_out, true),
        }
    }
}

impl Layout {
    /// Allocates and initializes every parameter for `cfg`.
    pub fn build<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<(Layout, Vec<(String, HostTensor)>)> {
        cfg.validate()?;
        let d = cfg.d;
        let mut b = Builder {
            params: Vec::new(),
            rng,
        };
        let embed = b.lin("embed", 3, d, true);
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("enc{i}");
                let ln1 = b.norm(&format!("{p}.ln1"), d);
                let mixer = if cfg.attention {
                    Mixer::Attention {
                        q: b.lin(&format!("{p}.attn.q"), d, d, true),
                        k: b.lin(&format!("{p}.attn.k"), d, d, true),
                        v: b.lin(&format!("{p}.attn.v"), d, d, true),
                        o: b.lin(&format!("{p}.attn.o"), d, d, true),
                    }
                } else {
                    Mixer::Residual {
                        up: b.lin(&format!("{p}.res.up"), d, 2 * d, true),
                        down: b.lin(&format!("{p}.res.down"), 2 * d, d, true),
                    }
                };
                let ln2 = b.norm(&format!("{p}.ln2"), d);
                let fc1 = b.lin(&format!("{p}.mlp.fc1"), d, cfg.mlp_hidden, true);
                let fc2 = b.lin(&format!("{p}.mlp.fc2"), cfg.mlp_hidden, d, true);
                Block {
                    ln1,
                    mixer,
                    ln2,
                    fc1,
                    fc2,
                }
            })
            .collect();

        let (shapes, flat) = cfg.frontier_shapes()?;
        let mut c_in = cfg.frontier_channels();
        let mut convs = Vec::new();
        for (i, (&(c_out, k, stride, pad), &(_, oh, ow))) in cfg.frontier.layers().iter().zip(&shapes).enumerate() {
            let wshape: Vec<usize> = if cfg.frontier.is_1d() {
                vec![c_out, c_in, k]
            } else {
                vec![c_out, c_in, k, k]
            };
            let fan_in = c_in * if cfg.frontier.is_1d() { k } else { k * k };
            let w = HostTensor::uniform_fan_in(&wshape, fan_in, b.rng);
            let w = b.push(format!("frontier.conv{i}.w"), w);
            let bias = HostTensor::uniform_fan_in(&[c_out], fan_in, b.rng);
            let bias = b.push(format!("frontier.conv{i}.b"), bias);
            let norm = b.norm(&format!("frontier.conv{i}.ln"), c_out * oh * ow);
            convs.push(Conv {
                w,
                b: bias,
                norm,
                stride,
                pad,
            });
            c_in = c_out;
        }
        let frontier_fc = b.lin("frontier.fc", flat, d, true);
        let frontier_ln = b.norm("frontier.ln", d);

        let w_frontier = b.lin("query.frontier", d, d, false);
        let joint = cfg.joint_boxes.is_some();
        let w_s_leftover =
            (joint || cfg.sequence == SequenceMode::Learned).then(|| b.lin("query.s_leftover", d, d, false));
        let seq = (!joint && cfg.sequence == SequenceMode::Learned).then(|| SeqDecoder {
            glimpse_k: b.lin("seq.glimpse_k", d, d, false),
            glimpse_v: b.lin("seq.glimpse_v", d, d, false),
            logit_k: b.lin("seq.logit_k", d, d, false),
            query: b.lin("seq.query", d, d, false),
        });
        let w_selected = (!joint).then(|| b.lin("query.selected", d, d, false));
        let w_p_leftover = (!joint && cfg.leftover).then(|| b.lin("query.p_leftover", d, d, false));
        let place = (!joint).then(|| b.head("place", d, cfg.head_hidden, cfg.placement_actions()));
        let joint = cfg.joint_boxes.map(|n| {
            b.head(
                "joint",
                (n + 1) * d,
                cfg.head_hidden,
                n * cfg.placement_actions(),
            )
        });
        let layout = Layout {
            embed,
            blocks,
            convs,
            frontier_fc,
            frontier_ln,
            w_frontier,
            w_s_leftover,
            seq,
            w_selected,
            w_p_leftover,
            place,
            joint,
        };
        Ok((layout, b.params))
    }
}
