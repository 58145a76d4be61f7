//! The shared 2D encoder-decoder segmentation network.
//!
//! Plain convolutional U-Net: per stage two (conv 3x3 -> instance norm ->
//! leaky ReLU) blocks, downsampling by the first conv's stride 2, transposed
//! convolutions on the way up, skip concatenation, and 1x1 output heads with
//! deep supervision at up to four scales. The reconstruction variant swaps
//! the segmentation heads for a single 1-channel output convolution and never
//! uses deep supervision. Contrastive and self-distillation heads attach to
//! the pooled bottleneck embedding.

use crate::error::{Error, Result};
use crate::nn::{
    Conv2d, ConvTranspose2d, Gelu, GlobalAvgPool, HasParams, InstanceNorm2d, LeakyRelu, Linear,
    Param, Scalar, WeightNormLinear,
};
use crate::rng;
use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    pub n_stages: usize,
    pub base_features: usize,
    pub feature_cap: usize,
    pub deep_supervision: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 1,
            n_classes: 4,
            n_stages: 7,
            base_features: 32,
            feature_cap: 512,
            deep_supervision: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages < 2 {
            return Err(Error::Validation(format!(
                "n_stages must be >= 2, got {}",
                self.n_stages
            )));
        }
        if self.in_channels == 0 || self.n_classes < 2 || self.base_features == 0 {
            return Err(Error::Validation("degenerate network config".into()));
        }
        Ok(())
    }

    /// Feature count per encoder stage, capped.
    pub fn features(&self) -> Vec<usize> {
        (0..self.n_stages)
            .map(|i| (self.base_features << i).min(self.feature_cap))
            .collect()
    }

    /// Input spatial dimensions must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.n_stages - 1)
    }

    /// Bottleneck embedding width.
    pub fn embed_dim(&self) -> usize {
        *self.features().last().unwrap()
    }

    /// Number of supervised output scales (full, 1/2, 1/4, 1/8 when deep).
    pub fn n_supervision_scales(&self) -> usize {
        if self.deep_supervision {
            4.min(self.n_stages - 1)
        } else {
            1
        }
    }

    /// Ties checkpoints to the architecture that produced them.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
struct ConvBlock<F: Scalar> {
    conv: Conv2d<F>,
    norm: InstanceNorm2d<F>,
    act: LeakyRelu<F>,
}

impl<F: Scalar> ConvBlock<F> {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ConvBlock {
            conv: Conv2d::new(in_ch, out_ch, 3, stride, 1, rng),
            norm: InstanceNorm2d::new(out_ch),
            act: LeakyRelu::default_slope(),
        }
    }

    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let y = self.conv.forward(x, train);
        let y = self.norm.forward(&y, train);
        self.act.forward(&y, train)
    }

    fn backward(&mut self, gy: &Array4<F>) -> Array4<F> {
        let g = self.act.backward(gy);
        let g = self.norm.backward(&g);
        self.conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.norm.visit_params(&format!("{prefix}.norm"), f);
    }
}

#[derive(Debug, Clone)]
struct EncoderStage<F: Scalar> {
    blocks: Vec<ConvBlock<F>>,
}

impl<F: Scalar> EncoderStage<F> {
    fn new(in_ch: usize, out_ch: usize, downsample: bool, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let stride = if downsample { 2 } else { 1 };
        EncoderStage {
            blocks: vec![
                ConvBlock::new(in_ch, out_ch, stride, rng),
                ConvBlock::new(out_ch, out_ch, 1, rng),
            ],
        }
    }

    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let mut h = self.blocks[0].forward(x, train);
        h = self.blocks[1].forward(&h, train);
        h
    }

    fn backward(&mut self, gy: &Array4<F>) -> Array4<F> {
        let g = self.blocks[1].backward(gy);
        self.blocks[0].backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.c{k}"), f);
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage<F: Scalar> {
    up: ConvTranspose2d<F>,
    blocks: Vec<ConvBlock<F>>,
    skip_channels: usize,
}

impl<F: Scalar> DecoderStage<F> {
    fn new(in_ch: usize, out_ch: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        DecoderStage {
            up: ConvTranspose2d::new(in_ch, out_ch, 2, rng),
            blocks: vec![
                ConvBlock::new(2 * out_ch, out_ch, 1, rng),
                ConvBlock::new(out_ch, out_ch, 1, rng),
            ],
            skip_channels: out_ch,
        }
    }

    fn forward(&mut self, x: &Array4<F>, skip: &Array4<F>, train: bool) -> Array4<F> {
        let up = self.up.forward(x, train);
        let cat = ndarray::concatenate(Axis(1), &[up.view(), skip.view()])
            .expect("skip concat shapes agree");
        let mut h = self.blocks[0].forward(&cat, train);
        h = self.blocks[1].forward(&h, train);
        h
    }

    /// Returns (grad wrt stage input, grad wrt skip).
    fn backward(&mut self, gy: &Array4<F>) -> (Array4<F>, Array4<F>) {
        let g = self.blocks[1].backward(gy);
        let g_cat = self.blocks[0].backward(&g);
        let g_up = g_cat
            .slice(ndarray::s![.., ..self.skip_channels, .., ..])
            .to_owned();
        let g_skip = g_cat
            .slice(ndarray::s![.., self.skip_channels.., .., ..])
            .to_owned();
        (self.up.backward(&g_up), g_skip)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.up.visit_params(&format!("{prefix}.up"), f);
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.c{k}"), f);
        }
    }
}

#[derive(Debug, Clone)]
enum Heads<F: Scalar> {
    /// One 1x1 logits conv per supervised scale, full resolution first.
    Segmentation(Vec<Conv2d<F>>),
    /// Single 1-channel reconstruction conv.
    Reconstruction(Conv2d<F>),
}

/// Two-layer MLP over the pooled embedding, for the contrastive objectives.
#[derive(Debug, Clone)]
pub struct ProjectionHead<F: Scalar> {
    fc0: Linear<F>,
    act: LeakyRelu<F>,
    fc1: Linear<F>,
}

impl<F: Scalar> ProjectionHead<F> {
    fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ProjectionHead {
            fc0: Linear::new(in_dim, hidden, rng),
            act: LeakyRelu::default_slope(),
            fc1: Linear::new(hidden, out_dim, rng),
        }
    }

    fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let h = self.fc0.forward(x, train);
        let h = self.act.forward(&h, train);
        self.fc1.forward(&h, train)
    }

    fn backward(&mut self, gy: &Array2<F>) -> Array2<F> {
        let g = self.fc1.backward(gy);
        let g = self.act.backward(&g);
        self.fc0.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.fc0.visit_params(&format!("{prefix}.fc0"), f);
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
    }
}

/// Three-layer MLP with GELU, an L2-normalized bottleneck, and a
/// weight-normalized final projection to the prototype logits.
#[derive(Debug, Clone)]
pub struct DinoHead<F: Scalar> {
    fc0: Linear<F>,
    g0: Gelu<F>,
    fc1: Linear<F>,
    g1: Gelu<F>,
    fc2: Linear<F>,
    last: WeightNormLinear<F>,
    norm_cache: Option<Array2<F>>, // pre-normalization bottleneck
}

impl<F: Scalar> DinoHead<F> {
    fn new(
        in_dim: usize,
        hidden: usize,
        bottleneck: usize,
        out_dim: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        DinoHead {
            fc0: Linear::new(in_dim, hidden, rng),
            g0: Gelu::new(),
            fc1: Linear::new(hidden, hidden, rng),
            g1: Gelu::new(),
            fc2: Linear::new(hidden, bottleneck, rng),
            last: WeightNormLinear::new(bottleneck, out_dim, rng),
            norm_cache: None,
        }
    }

    fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let h = self.fc0.forward(x, train);
        let h = self.g0.forward(&h, train);
        let h = self.fc1.forward(&h, train);
        let h = self.g1.forward(&h, train);
        let b = self.fc2.forward(&h, train);
        let z = l2_normalize_rows(&b);
        if train {
            self.norm_cache = Some(b);
        }
        self.last.forward(&z, train)
    }

    fn backward(&mut self, gy: &Array2<F>) -> Array2<F> {
        let b = self.norm_cache.take().expect("dino head backward state");
        let gz = self.last.backward(gy);
        // through z = b / ||b||: db = (g - (g.z) z) / ||b||
        let mut gb = Array2::zeros(b.raw_dim());
        for i in 0..b.nrows() {
            let row = b.row(i);
            let norm = row.mapv(|v| v * v).sum().sqrt().max(F::from_f64(1e-12));
            let z = row.mapv(|v| v / norm);
            let g = gz.row(i);
            let dot = g.dot(&z);
            for (j, out) in gb.row_mut(i).iter_mut().enumerate() {
                *out = (g[j] - dot * z[j]) / norm;
            }
        }
        let g = self.fc2.backward(&gb);
        let g = self.g1.backward(&g);
        let g = self.fc1.backward(&g);
        let g = self.g0.backward(&g);
        self.fc0.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.fc0.visit_params(&format!("{prefix}.fc0"), f);
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
        self.last.visit_params(&format!("{prefix}.last"), f);
    }
}

fn l2_normalize_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.mapv(|v| v * v).sum().sqrt().max(F::from_f64(1e-12));
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// Which output the network ends in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UNetVariant {
    Segmentation,
    Reconstruction,
}

/// Per-stage decoder activations plus the pooled bottleneck embedding.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<F: Scalar> {
    /// Index j holds the decoder output at 1/2^j resolution (0 = full).
    pub decoder_features: Vec<Array4<F>>,
    pub embedding: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct UNet<F: Scalar> {
    pub config: UNetConfig,
    pub variant: UNetVariant,
    pub seed: u64,
    encoder: Vec<EncoderStage<F>>,
    /// decoder[j] produces the feature map at scale j from scale j+1.
    decoder: Vec<DecoderStage<F>>,
    heads: Heads<F>,
    pool: GlobalAvgPool,
    projection: Option<ProjectionHead<F>>,
    dino: Option<DinoHead<F>>,
}

impl<F: Scalar> UNet<F> {
    pub fn new(config: &UNetConfig, variant: UNetVariant, seed: u64) -> Result<Self> {
        config.validate()?;
        let feats = config.features();
        let s = config.n_stages;
        let mut r = rng::stream(seed, &[100]);

        let mut encoder = Vec::with_capacity(s);
        for i in 0..s {
            let in_ch = if i == 0 { config.in_channels } else { feats[i - 1] };
            encoder.push(EncoderStage::new(in_ch, feats[i], i > 0, &mut r));
        }
        let mut decoder = Vec::with_capacity(s - 1);
        for j in 0..s - 1 {
            decoder.push(DecoderStage::new(feats[j + 1], feats[j], &mut r));
        }
        let heads = match variant {
            UNetVariant::Segmentation => {
                let n_scales = config.n_supervision_scales();
                let mut heads = Vec::with_capacity(n_scales);
                for j in 0..n_scales {
                    heads.push(Conv2d::new(feats[j], config.n_classes, 1, 1, 0, &mut r));
                }
                Heads::Segmentation(heads)
            }
            UNetVariant::Reconstruction => {
                Heads::Reconstruction(Conv2d::new(feats[0], 1, 1, 1, 0, &mut r))
            }
        };

        Ok(UNet {
            config: config.clone(),
            variant,
            seed,
            encoder,
            decoder,
            heads,
            pool: GlobalAvgPool::new(),
            projection: None,
            dino: None,
        })
    }

    pub fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be divisible by {d}"
            )));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }

    fn encode(&mut self, x: &Array4<F>, train: bool) -> Vec<Array4<F>> {
        let mut outs = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for stage in self.encoder.iter_mut() {
            h = stage.forward(&h, train);
            outs.push(h.clone());
        }
        outs
    }

    fn decode(&mut self, enc_outs: &[Array4<F>], train: bool) -> Vec<Array4<F>> {
        let s = self.config.n_stages;
        let mut dec_outs: Vec<Option<Array4<F>>> = vec![None; s - 1];
        let mut current = enc_outs[s - 1].clone();
        for j in (0..s - 1).rev() {
            current = self.decoder[j].forward(&current, &enc_outs[j], train);
            dec_outs[j] = Some(current.clone());
        }
        dec_outs.into_iter().map(|d| d.unwrap()).collect()
    }

    /// Encoder + decoder + pooled embedding.
    pub fn forward_features(&mut self, x: &Array4<F>, train: bool) -> Result<FeaturePyramid<F>> {
        self.check_input(x)?;
        let enc = self.encode(x, train);
        let embedding = self.pool.forward(&enc[self.config.n_stages - 1], train);
        let decoder_features = self.decode(&enc, train);
        Ok(FeaturePyramid {
            decoder_features,
            embedding,
        })
    }

    /// Segmentation logits, full resolution first; one entry per supervised
    /// scale (a single entry without deep supervision).
    pub fn forward_seg(&mut self, x: &Array4<F>, train: bool) -> Result<Vec<Array4<F>>> {
        self.check_input(x)?;
        let enc = self.encode(x, train);
        let dec = self.decode(&enc, train);
        let Heads::Segmentation(heads) = &mut self.heads else {
            return Err(Error::Validation(
                "reconstruction model has no segmentation heads".into(),
            ));
        };
        let mut logits = Vec::with_capacity(heads.len());
        for (j, head) in heads.iter_mut().enumerate() {
            logits.push(head.forward(&dec[j], train));
        }
        Ok(logits)
    }

    /// Backward for [`Self::forward_seg`]; one gradient per logits scale.
    pub fn backward_seg(&mut self, grads: &[Array4<F>]) {
        let s = self.config.n_stages;
        let Heads::Segmentation(heads) = &mut self.heads else {
            panic!("backward_seg on a reconstruction model");
        };
        assert_eq!(grads.len(), heads.len(), "one gradient per head");
        let mut g_dec: Vec<Option<Array4<F>>> = vec![None; s - 1];
        for (j, (head, g)) in heads.iter_mut().zip(grads).enumerate() {
            g_dec[j] = Some(head.backward(g));
        }
        self.backward_through_decoder_and_encoder(g_dec, None);
    }

    /// Reconstruction output (B, 1, H, W).
    pub fn forward_recon(&mut self, x: &Array4<F>, train: bool) -> Result<Array4<F>> {
        self.check_input(x)?;
        let enc = self.encode(x, train);
        let dec = self.decode(&enc, train);
        let Heads::Reconstruction(head) = &mut self.heads else {
            return Err(Error::Validation(
                "segmentation model has no reconstruction head".into(),
            ));
        };
        Ok(head.forward(&dec[0], train))
    }

    pub fn backward_recon(&mut self, grad: &Array4<F>) {
        let s = self.config.n_stages;
        let Heads::Reconstruction(head) = &mut self.heads else {
            panic!("backward_recon on a segmentation model");
        };
        let mut g_dec: Vec<Option<Array4<F>>> = vec![None; s - 1];
        g_dec[0] = Some(head.backward(grad));
        self.backward_through_decoder_and_encoder(g_dec, None);
    }

    /// Pooled bottleneck embedding; runs the encoder only.
    pub fn forward_embed(&mut self, x: &Array4<F>, train: bool) -> Result<Array2<F>> {
        self.check_input(x)?;
        let enc = self.encode(x, train);
        Ok(self.pool.forward(&enc[self.config.n_stages - 1], train))
    }

    pub fn backward_embed(&mut self, grad: &Array2<F>) {
        let g = self.pool.backward(grad);
        self.backward_through_encoder(g, &mut vec![None; self.config.n_stages - 1]);
    }

    /// Embedding -> projection head output (build with
    /// [`attach_projection_head`] first).
    pub fn forward_projection(&mut self, x: &Array4<F>, train: bool) -> Result<Array2<F>> {
        let e = self.forward_embed(x, train)?;
        let head = self
            .projection
            .as_mut()
            .ok_or_else(|| Error::Validation("no projection head attached".into()))?;
        Ok(head.forward(&e, train))
    }

    pub fn backward_projection(&mut self, grad: &Array2<F>) {
        let g = self
            .projection
            .as_mut()
            .expect("projection head attached")
            .backward(grad);
        self.backward_embed(&g);
    }

    /// Embedding -> self-distillation head logits (build with
    /// [`attach_dino_head`] first).
    pub fn forward_dino(&mut self, x: &Array4<F>, train: bool) -> Result<Array2<F>> {
        let e = self.forward_embed(x, train)?;
        let head = self
            .dino
            .as_mut()
            .ok_or_else(|| Error::Validation("no dino head attached".into()))?;
        Ok(head.forward(&e, train))
    }

    pub fn backward_dino(&mut self, grad: &Array2<F>) {
        let g = self.dino.as_mut().expect("dino head attached").backward(grad);
        self.backward_embed(&g);
    }

    fn backward_through_decoder_and_encoder(
        &mut self,
        mut g_dec: Vec<Option<Array4<F>>>,
        g_embed: Option<&Array2<F>>,
    ) {
        let s = self.config.n_stages;
        let mut g_skips: Vec<Option<Array4<F>>> = vec![None; s - 1];
        let mut g_current: Option<Array4<F>> = None;
        for j in 0..s - 1 {
            let mut g = match (g_dec[j].take(), g_current.take()) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => continue,
            };
            let (g_in, g_skip) = self.decoder[j].backward(&mut g).into();
            g_skips[j] = Some(g_skip);
            g_current = Some(g_in);
        }
        let mut g_bottleneck = g_current.expect("decoder produced a bottleneck gradient");
        if let Some(ge) = g_embed {
            g_bottleneck = g_bottleneck + self.pool.backward(ge);
        }
        self.backward_through_encoder(g_bottleneck, &mut g_skips);
    }

    fn backward_through_encoder(
        &mut self,
        g_top: Array4<F>,
        g_skips: &mut Vec<Option<Array4<F>>>,
    ) {
        let s = self.config.n_stages;
        let mut g = g_top;
        for i in (0..s).rev() {
            if i < s - 1 {
                if let Some(gs) = g_skips[i].take() {
                    g = g + gs;
                }
            }
            g = self.encoder[i].backward(&g);
        }
    }
}

impl<F: Scalar> HasParams<F> for UNet<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        for (i, stage) in self.encoder.iter_mut().enumerate() {
            stage.visit_params(&p(&format!("encoder.s{i}")), f);
        }
        for (j, stage) in self.decoder.iter_mut().enumerate() {
            stage.visit_params(&p(&format!("decoder.s{j}")), f);
        }
        match &mut self.heads {
            Heads::Segmentation(heads) => {
                for (j, head) in heads.iter_mut().enumerate() {
                    head.visit_params(&p(&format!("output_heads.s{j}")), f);
                }
            }
            Heads::Reconstruction(head) => {
                head.visit_params(&p("output_heads.recon"), f);
            }
        }
        if let Some(ph) = &mut self.projection {
            ph.visit_params(&p("projection_head"), f);
        }
        if let Some(dh) = &mut self.dino {
            dh.visit_params(&p("dino_head"), f);
        }
    }
}

/// Builds the standard segmentation network.
pub fn build_unet(config: &UNetConfig, seed: u64) -> Result<UNet<f32>> {
    UNet::new(config, UNetVariant::Segmentation, seed)
}

/// Builds the reconstruction variant used for masked-image pretraining:
/// deep-supervision heads removed, single 1-channel output convolution.
pub fn build_mim_unet(config: &UNetConfig, seed: u64) -> Result<UNet<f32>> {
    let cfg = UNetConfig {
        deep_supervision: false,
        ..config.clone()
    };
    UNet::new(&cfg, UNetVariant::Reconstruction, seed)
}

/// Per-image vector: global average pool of the bottleneck features.
pub fn encoder_embed<F: Scalar>(model: &mut UNet<F>, batch: &Array4<F>) -> Result<Array2<F>> {
    model.forward_embed(batch, false)
}

/// Adds the 2-layer contrastive projection head.
pub fn attach_projection_head<F: Scalar>(model: &mut UNet<F>, out_dim: usize, hidden_dim: usize) {
    let mut r = rng::stream(model.seed, &[101]);
    model.projection = Some(ProjectionHead::new(
        model.embed_dim(),
        hidden_dim,
        out_dim,
        &mut r,
    ));
}

/// Adds the self-distillation head (hidden 2048, bottleneck 256 by default).
pub fn attach_dino_head<F: Scalar>(
    model: &mut UNet<F>,
    out_dim: usize,
    hidden_dim: usize,
    bottleneck_dim: usize,
) {
    let mut r = rng::stream(model.seed, &[102]);
    model.dino = Some(DinoHead::new(
        model.embed_dim(),
        hidden_dim,
        bottleneck_dim,
        out_dim,
        &mut r,
    ));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Sgd;

    fn small_config() -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            n_classes: 4,
            n_stages: 3,
            base_features: 4,
            feature_cap: 64,
            deep_supervision: true,
        }
    }

    #[test]
    fn deep_supervision_output_shapes() {
        let cfg = small_config();
        let mut model = build_unet(&cfg, 0).unwrap();
        let x = Array4::<f32>::zeros((2, 1, 16, 16));
        let logits = model.forward_seg(&x, false).unwrap();
        assert_eq!(logits.len(), 2); // min(4, n_stages-1)
        assert_eq!(logits[0].dim(), (2, 4, 16, 16));
        assert_eq!(logits[1].dim(), (2, 4, 8, 8));
        for l in &logits {
            assert!(l.iter().all(|v| v.is_finite()));
            assert_eq!(l.dim().1, 4, "same channel count at every scale");
        }
    }

    #[test]
    fn indivisible_input_names_required_multiple() {
        let cfg = small_config();
        let mut model = build_unet(&cfg, 0).unwrap();
        let x = Array4::<f32>::zeros((1, 1, 10, 10));
        let err = model.forward_seg(&x, false).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = small_config();
        let mut a = build_unet(&cfg, 7).unwrap();
        let mut b = build_unet(&cfg, 7).unwrap();
        let pa = a.param_map();
        let pb = b.param_map();
        assert_eq!(pa.len(), pb.len());
        for (name, t) in &pa {
            assert_eq!(t, &pb[name], "weight mismatch at {name}");
        }
        let mut c = build_unet(&cfg, 8).unwrap();
        assert_ne!(pa, c.param_map());
    }

    #[test]
    fn embedding_dimension_follows_config_arithmetic() {
        let cfg = UNetConfig::default();
        assert_eq!(cfg.embed_dim(), 512);
        assert_eq!(cfg.divisor(), 64);

        let cfg = small_config();
        let mut model = build_unet(&cfg, 0).unwrap();
        let x = Array4::<f32>::ones((3, 1, 16, 16));
        let e = encoder_embed(&mut model, &x).unwrap();
        assert_eq!(e.dim(), (3, 16)); // min(4 << 2, 64)
        // identical inputs give identical vectors
        let e0 = e.row(0).to_owned();
        let e1 = e.row(1).to_owned();
        assert_eq!(e0, e1);
    }

    #[test]
    fn recon_variant_shapes_and_head_separation() {
        let cfg = small_config();
        let mut model = build_mim_unet(&cfg, 0).unwrap();
        let x = Array4::<f32>::zeros((2, 1, 16, 16));
        let y = model.forward_recon(&x, false).unwrap();
        assert_eq!(y.dim(), (2, 1, 16, 16));
        assert!(model.forward_seg(&x, false).is_err());
    }

    #[test]
    fn seg_training_step_decreases_projection_loss() {
        // proxy loss: sum(logits * r); one SGD step must reduce it
        let cfg = small_config();
        let mut model = build_unet(&cfg, 3).unwrap();
        let x = {
            let mut x = Array4::<f32>::zeros((2, 1, 16, 16));
            let mut r = crate::rng::stream(5, &[]);
            use rand::Rng;
            for v in x.iter_mut() {
                *v = r.random_range(-1.0..1.0);
            }
            x
        };
        let logits = model.forward_seg(&x, true).unwrap();
        let grads: Vec<Array4<f32>> = logits.iter().map(|l| l.mapv(|_| 1.0)).collect();
        let loss0: f32 = logits.iter().map(|l| l.sum()).sum();
        model.zero_grads();
        let logits = model.forward_seg(&x, true).unwrap();
        let _ = logits;
        model.backward_seg(&grads);
        let mut opt = Sgd::new(1e-3, 0.0, false, 0.0);
        opt.step(&mut model);
        let logits1 = model.forward_seg(&x, false).unwrap();
        let loss1: f32 = logits1.iter().map(|l| l.sum()).sum();
        assert!(loss1 < loss0, "step did not decrease loss: {loss0} -> {loss1}");
    }

    #[test]
    fn projection_and_dino_paths_run_and_backprop() {
        let cfg = small_config();
        let mut model = build_unet(&cfg, 1).unwrap();
        attach_projection_head(&mut model, 8, 16);
        attach_dino_head(&mut model, 32, 16, 8);
        let x = Array4::<f32>::ones((2, 1, 8, 8));
        let p = model.forward_projection(&x, true).unwrap();
        assert_eq!(p.dim(), (2, 8));
        model.zero_grads();
        model.backward_projection(&p.mapv(|_| 1.0));
        let d = model.forward_dino(&x, true).unwrap();
        assert_eq!(d.dim(), (2, 32));
        model.zero_grads();
        model.backward_dino(&d.mapv(|_| 1.0));
    }
}
