use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::split_pair_mut;
use crate::diffusion::NoiseModel;
use crate::error::{check_len, Error, Result};
use crate::nn::*;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Shape of the conditional noise predictor.
///
/// The network is a shallow encoder–decoder: a 3x3 stem whose channels are
/// shifted by the conditioning embedding, a 2x pooled dense bottleneck that
/// also receives the embedding, a 2x upsample concatenated with the stem
/// features, a 3x3 fusion convolution and a 3x3 output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictorArch {
    pub image_channels: usize,
    pub image_size: usize,
    pub base_channels: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub num_classes: usize,
}

impl PredictorArch {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.image_channels == 0 || self.base_channels == 0 || self.hidden_dim == 0 {
            return bad("channel counts and hidden_dim must be positive");
        }
        if self.image_size < 2 || self.image_size % 2 != 0 {
            return bad("image_size must be even and at least 2");
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad("time_embed_dim must be even and at least 2");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_channels, self.image_size, self.image_size]
    }

    fn pooled_len(&self) -> usize {
        self.base_channels * (self.image_size / 2) * (self.image_size / 2)
    }

    pub fn layout(&self) -> ParamLayout {
        let (c, ch, h, d, p) =
            (self.base_channels, self.image_channels, self.hidden_dim, self.time_embed_dim, self.pooled_len());
        let mut l = ParamLayout::new();
        l.push("stem.weight", &[c, ch, 3, 3]);
        l.push("stem.bias", &[c]);
        l.push("time_proj.weight", &[h, d]);
        l.push("time_proj.bias", &[h]);
        l.push("class_embedding", &[self.num_classes + 1, h]);
        l.push("stem_shift.weight", &[c, h]);
        l.push("stem_shift.bias", &[c]);
        l.push("bottleneck.enc.weight", &[h, p]);
        l.push("bottleneck.enc.bias", &[h]);
        l.push("bottleneck.mid.weight", &[h, h]);
        l.push("bottleneck.mid.bias", &[h]);
        l.push("bottleneck.dec.weight", &[p, h]);
        l.push("bottleneck.dec.bias", &[p]);
        l.push("fuse.weight", &[c, 2 * c, 3, 3]);
        l.push("fuse.bias", &[c]);
        l.push("head.weight", &[ch, c, 3, 3]);
        l.push("head.bias", &[ch]);
        l
    }
}

// Indices into the layout, in push order.
const STEM_W: usize = 0;
const STEM_B: usize = 1;
const TIME_W: usize = 2;
const TIME_B: usize = 3;
const CLASS_EMB: usize = 4;
const SHIFT_W: usize = 5;
const SHIFT_B: usize = 6;
const ENC_W: usize = 7;
const ENC_B: usize = 8;
const MID_W: usize = 9;
const MID_B: usize = 10;
const DEC_W: usize = 11;
const DEC_B: usize = 12;
const FUSE_W: usize = 13;
const FUSE_B: usize = 14;
const HEAD_W: usize = 15;
const HEAD_B: usize = 16;

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PredictorTape<S> {
    x: Vec<S>,
    temb: Vec<S>,
    class_row: usize,
    e: Vec<S>,
    se: Vec<S>,
    h0: Vec<S>,
    pooled: Vec<S>,
    z1_pre: Vec<S>,
    z1: Vec<S>,
    z2_pre: Vec<S>,
    z2: Vec<S>,
    cat: Vec<S>,
    h1: Vec<S>,
    a1: Vec<S>,
}

/// Conditional noise predictor `eps(x_t, t, class)`; the class embedding
/// table has one extra row used for the NULL (unconditional) branch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor<S> {
    arch: PredictorArch,
    layout: ParamLayout,
    params: Vec<S>,
}

impl<S: Scalar> NoisePredictor<S> {
    pub fn init(arch: PredictorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![S::zero(); layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, ch, h, d) = (arch.base_channels, arch.image_channels, arch.hidden_dim, arch.time_embed_dim);
        let fan_ins = [
            (STEM_W, ch * 9),
            (TIME_W, d),
            (SHIFT_W, h),
            (ENC_W, arch.pooled_len()),
            (MID_W, h),
            (DEC_W, h),
            (FUSE_W, 2 * c * 9),
            (HEAD_W, c * 9),
        ];
        for (idx, fan_in) in fan_ins {
            init_fan_in(&mut params[layout.range(idx)], fan_in, &mut rng);
        }
        init_normal(&mut params[layout.range(CLASS_EMB)], 0.5, &mut rng);
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: PredictorArch, params: Vec<S>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        check_len(layout.total(), params.len())?;
        Ok(Self { arch, layout, params })
    }

    pub fn arch(&self) -> &PredictorArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Flat range of the class-embedding table (including the null row).
    pub fn class_embedding_range(&self) -> core::ops::Range<usize> {
        self.layout.range(CLASS_EMB)
    }

    fn p(&self, idx: usize) -> &[S] {
        &self.params[self.layout.range(idx)]
    }

    fn class_row(&self, class: Option<usize>) -> Result<usize> {
        match class {
            None => Ok(self.arch.num_classes),
            Some(c) if c < self.arch.num_classes => Ok(c),
            Some(c) => Err(Error::ClassOutOfRange { class: c, num_classes: self.arch.num_classes }),
        }
    }

    pub fn forward(&self, x_t: &Tensor<S>, t: usize, class: Option<usize>) -> Result<(Tensor<S>, PredictorTape<S>)> {
        let a = &self.arch;
        if x_t.shape() != a.image_shape() {
            return Err(Error::ShapeMismatch { expected: a.image_shape().iter().product(), found: x_t.len() });
        }
        let class_row = self.class_row(class)?;
        let (c, ch, s, h) = (a.base_channels, a.image_channels, a.image_size, a.hidden_dim);
        let plane = s * s;

        let temb = timestep_embedding::<S>(t, a.time_embed_dim);
        let mut e = linear_forward(self.p(TIME_W), self.p(TIME_B), &temb, h);
        let row = &self.p(CLASS_EMB)[class_row * h..(class_row + 1) * h];
        e.iter_mut().zip(row).for_each(|(v, &r)| *v += r);
        let se = silu(&e);
        let shift = linear_forward(self.p(SHIFT_W), self.p(SHIFT_B), &se, c);

        let stem = ConvShape { in_channels: ch, out_channels: c, height: s, width: s };
        let mut h0 = conv3x3_forward(self.p(STEM_W), self.p(STEM_B), x_t.data(), stem);
        for (k, &sh) in shift.iter().enumerate() {
            h0[k * plane..(k + 1) * plane].iter_mut().for_each(|v| *v += sh);
        }
        let a0 = silu(&h0);
        let pooled = avgpool2(&a0, c, s, s);

        let mut z1_pre = linear_forward(self.p(ENC_W), self.p(ENC_B), &pooled, h);
        z1_pre.iter_mut().zip(&e).for_each(|(v, &ev)| *v += ev);
        let z1 = silu(&z1_pre);
        let z2_pre = linear_forward(self.p(MID_W), self.p(MID_B), &z1, h);
        let z2 = silu(&z2_pre);
        let z3 = linear_forward(self.p(DEC_W), self.p(DEC_B), &z2, pooled.len());
        let mut cat = upsample2(&z3, c, s / 2, s / 2);
        cat.extend_from_slice(&a0);

        let fuse = ConvShape { in_channels: 2 * c, out_channels: c, height: s, width: s };
        let h1 = conv3x3_forward(self.p(FUSE_W), self.p(FUSE_B), &cat, fuse);
        let a1 = silu(&h1);
        let head = ConvShape { in_channels: c, out_channels: ch, height: s, width: s };
        let out = conv3x3_forward(self.p(HEAD_W), self.p(HEAD_B), &a1, head);

        let tape = PredictorTape {
            x: x_t.data().to_vec(),
            temb,
            class_row,
            e,
            se,
            h0,
            pooled,
            z1_pre,
            z1,
            z2_pre,
            z2,
            cat,
            h1,
            a1,
        };
        Ok((Tensor::new(&a.image_shape(), out)?, tape))
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, tape: &PredictorTape<S>, grad_out: &[S], grad: &mut [S]) -> Result<()> {
        let a = &self.arch;
        check_len(self.layout.total(), grad.len())?;
        check_len(a.image_shape().iter().product(), grad_out.len())?;
        let (c, ch, s, h) = (a.base_channels, a.image_channels, a.image_size, a.hidden_dim);
        let plane = s * s;
        let l = &self.layout;

        let head = ConvShape { in_channels: c, out_channels: ch, height: s, width: s };
        let (gw, gb) = split_pair_mut(grad, l.range(HEAD_W), l.range(HEAD_B));
        let g_a1 = conv3x3_backward(self.p(HEAD_W), &tape.a1, grad_out, head, gw, gb, true).unwrap_or_default();
        let g_h1 = silu_backward(&tape.h1, &g_a1);

        let fuse = ConvShape { in_channels: 2 * c, out_channels: c, height: s, width: s };
        let (gw, gb) = split_pair_mut(grad, l.range(FUSE_W), l.range(FUSE_B));
        let g_cat = conv3x3_backward(self.p(FUSE_W), &tape.cat, &g_h1, fuse, gw, gb, true).unwrap_or_default();
        let (g_up, g_a0_skip) = g_cat.split_at(c * plane);

        let g_z3 = upsample2_backward(g_up, c, s / 2, s / 2);
        let (gw, gb) = split_pair_mut(grad, l.range(DEC_W), l.range(DEC_B));
        let g_z2 = linear_backward(self.p(DEC_W), &tape.z2, &g_z3, gw, gb, true).unwrap_or_default();
        let g_z2_pre = silu_backward(&tape.z2_pre, &g_z2);
        let (gw, gb) = split_pair_mut(grad, l.range(MID_W), l.range(MID_B));
        let g_z1 = linear_backward(self.p(MID_W), &tape.z1, &g_z2_pre, gw, gb, true).unwrap_or_default();
        let g_z1_pre = silu_backward(&tape.z1_pre, &g_z1);
        let (gw, gb) = split_pair_mut(grad, l.range(ENC_W), l.range(ENC_B));
        let g_pooled =
            linear_backward(self.p(ENC_W), &tape.pooled, &g_z1_pre, gw, gb, true).unwrap_or_default();
        let mut g_e = g_z1_pre;

        let mut g_a0 = avgpool2_backward(&g_pooled, c, s, s);
        g_a0.iter_mut().zip(g_a0_skip).for_each(|(v, &g)| *v += g);
        let g_h0 = silu_backward(&tape.h0, &g_a0);

        let stem = ConvShape { in_channels: ch, out_channels: c, height: s, width: s };
        let (gw, gb) = split_pair_mut(grad, l.range(STEM_W), l.range(STEM_B));
        conv3x3_backward(self.p(STEM_W), &tape.x, &g_h0, stem, gw, gb, false);
        let g_shift: Vec<S> = (0..c).map(|k| g_h0[k * plane..(k + 1) * plane].iter().copied().sum()).collect();

        let (gw, gb) = split_pair_mut(grad, l.range(SHIFT_W), l.range(SHIFT_B));
        let g_se = linear_backward(self.p(SHIFT_W), &tape.se, &g_shift, gw, gb, true).unwrap_or_default();
        g_e.iter_mut().zip(silu_backward(&tape.e, &g_se)).for_each(|(v, g)| *v += g);

        let emb = l.range(CLASS_EMB);
        let row = &mut grad[emb.start + tape.class_row * h..emb.start + (tape.class_row + 1) * h];
        row.iter_mut().zip(&g_e).for_each(|(v, &g)| *v += g);

        let (gw, gb) = split_pair_mut(grad, l.range(TIME_W), l.range(TIME_B));
        linear_backward(self.p(TIME_W), &tape.temb, &g_e, gw, gb, false);
        Ok(())
    }
}

impl<S: Scalar> NoiseModel<S> for NoisePredictor<S> {
    fn image_shape(&self) -> [usize; 3] {
        self.arch.image_shape()
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn predict_eps(&self, x_t: &Tensor<S>, t: usize, class: Option<usize>) -> Result<Tensor<S>> {
        self.forward(x_t, t, class).map(|(out, _)| out)
    }
}
