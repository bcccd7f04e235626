//! QuickNAT-style encoder-decoder assembly: four encoder dense blocks with
//! 2x2 max pooling, a bottleneck, four decoder dense blocks fed by
//! index-driven unpooling and concatenation skips, and a softmax classifier.
//!
//! Parameters live in one flat store with a named segment registry; the
//! registry order is the checkpoint blob order. Forward passes never mutate
//! the network: training-mode batch-norm statistics are returned on the tape
//! and folded into the running buffers by an explicit update step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralseg::ops::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, concat_channels,
    conv2d_backward, conv2d_forward, dropout_backward, dropout_forward, maxpool2_backward,
    maxpool2_forward, relu_backward, relu_forward, softmax_channels, split_channels,
    unpool2_backward, unpool2_forward, BnCache, ConvShape, PoolCache,
};
use crate::neuralseg::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub num_encoders: usize,
    /// Feature channels per dense block.
    pub channels: usize,
    pub num_classes: usize,
    pub dropout: f64,
    /// Canvas edge used when slicing volumes for the network.
    pub input_size: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        ArchitectureSpec {
            num_encoders: 4,
            channels: 16,
            num_classes: 2,
            dropout: 0.5,
            input_size: 256,
        }
    }
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_encoders != 4 {
            return Err(Error::Config(format!(
                "architecture uses four encoders and four decoders, got {}",
                self.num_encoders
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "classifier outputs exactly 2 channels, got {}",
                self.num_classes
            )));
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.channels < 1 {
            return Err(Error::Config("channel width must be at least 1".into()));
        }
        let div = 1 << self.num_encoders;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input size must be a positive multiple of {div}, got {}",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Forward stage that owns the segment (for prefix-cached replays).
    pub stage: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub segments: Vec<ParamSegment>,
}

impl ParamStore {
    fn register(&mut self, name: String, len: usize, stage: usize) -> usize {
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.segments.push(ParamSegment { name, offset, len, stage });
        offset
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    shape: ConvShape,
    w_off: usize,
    b_off: usize,
}

impl ConvLayer {
    fn new(store: &mut ParamStore, name: &str, stage: usize, c_in: usize, c_out: usize, k: usize) -> Self {
        let shape = ConvShape { c_in, c_out, k, pad: k / 2 };
        let w_off = store.register(format!("{name}.weight"), shape.weight_len(), stage);
        let b_off = store.register(format!("{name}.bias"), c_out, stage);
        ConvLayer { shape, w_off, b_off }
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.w_off..self.w_off + self.shape.weight_len()]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.b_off..self.b_off + self.shape.c_out]
    }

    fn forward(&self, params: &[f64], x: &Tensor4) -> Tensor4 {
        conv2d_forward(x, self.shape, self.weights(params), self.bias(params))
    }

    fn backward(&self, params: &[f64], input: &Tensor4, dy: &Tensor4, grads: &mut [f64]) -> Tensor4 {
        let g = conv2d_backward(input, self.shape, self.weights(params), dy);
        for (i, v) in g.d_weights.iter().enumerate() {
            grads[self.w_off + i] += v;
        }
        for (i, v) in g.d_bias.iter().enumerate() {
            grads[self.b_off + i] += v;
        }
        g.d_input
    }
}

#[derive(Debug, Clone)]
struct BnLayer {
    c: usize,
    g_off: usize,
    b_off: usize,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

/// Momentum of the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;

impl BnLayer {
    fn new(store: &mut ParamStore, name: &str, stage: usize, c: usize) -> Self {
        let g_off = store.register(format!("{name}.gamma"), c, stage);
        let b_off = store.register(format!("{name}.beta"), c, stage);
        BnLayer {
            c,
            g_off,
            b_off,
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    fn gamma<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.g_off..self.g_off + self.c]
    }

    fn beta<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.b_off..self.b_off + self.c]
    }

    fn forward_train(&self, params: &[f64], x: &Tensor4) -> (Tensor4, BnCache) {
        batchnorm_forward_train(x, self.gamma(params), self.beta(params))
    }

    fn forward_eval(&self, params: &[f64], x: &Tensor4) -> Tensor4 {
        batchnorm_forward_eval(x, self.gamma(params), self.beta(params), &self.running_mean, &self.running_var)
    }

    fn backward(&self, params: &[f64], cache: &BnCache, dy: &Tensor4, grads: &mut [f64]) -> Tensor4 {
        let g = batchnorm_backward(cache, self.gamma(params), dy);
        for (i, v) in g.d_gamma.iter().enumerate() {
            grads[self.g_off + i] += v;
        }
        for (i, v) in g.d_beta.iter().enumerate() {
            grads[self.b_off + i] += v;
        }
        g.d_input
    }

    fn update_running(&mut self, cache: &BnCache) {
        for i in 0..self.c {
            self.running_mean[i] = BN_MOMENTUM * self.running_mean[i] + (1.0 - BN_MOMENTUM) * cache.batch_mean[i];
            self.running_var[i] = BN_MOMENTUM * self.running_var[i] + (1.0 - BN_MOMENTUM) * cache.batch_var[i];
        }
    }
}

/// BN -> ReLU -> conv5, BN -> ReLU -> conv5, BN -> ReLU -> conv1.
#[derive(Debug, Clone)]
struct DenseBlock {
    bns: [BnLayer; 3],
    convs: [ConvLayer; 3],
}

/// Per-sub-layer caches: (bn cache, bn output, relu output).
pub struct DenseTape {
    parts: [(BnCache, Tensor4, Tensor4); 3],
}

impl DenseBlock {
    fn new(store: &mut ParamStore, name: &str, stage: usize, c_in: usize, c: usize) -> Self {
        let bn1 = BnLayer::new(store, &format!("{name}.bn1"), stage, c_in);
        let conv1 = ConvLayer::new(store, &format!("{name}.conv1"), stage, c_in, c, 5);
        let bn2 = BnLayer::new(store, &format!("{name}.bn2"), stage, c);
        let conv2 = ConvLayer::new(store, &format!("{name}.conv2"), stage, c, c, 5);
        let bn3 = BnLayer::new(store, &format!("{name}.bn3"), stage, c);
        let conv3 = ConvLayer::new(store, &format!("{name}.conv3"), stage, c, c, 1);
        DenseBlock { bns: [bn1, bn2, bn3], convs: [conv1, conv2, conv3] }
    }

    fn forward_train(&self, params: &[f64], x: &Tensor4) -> (Tensor4, DenseTape) {
        let mut cur = x.clone();
        let mut parts = Vec::with_capacity(3);
        for (bn, conv) in self.bns.iter().zip(&self.convs) {
            let (bn_out, bn_cache) = bn.forward_train(params, &cur);
            let relu_out = relu_forward(&bn_out);
            let next = conv.forward(params, &relu_out);
            parts.push((bn_cache, bn_out, relu_out));
            cur = next;
        }
        let parts: [(BnCache, Tensor4, Tensor4); 3] = parts.try_into().ok().expect("three parts");
        (cur, DenseTape { parts })
    }

    /// Training-statistics forward without caches (finite-difference replays).
    fn forward_train_nocache(&self, params: &[f64], x: &Tensor4) -> Tensor4 {
        let mut cur = x.clone();
        for (bn, conv) in self.bns.iter().zip(&self.convs) {
            let (bn_out, _) = bn.forward_train(params, &cur);
            cur = conv.forward(params, &relu_forward(&bn_out));
        }
        cur
    }

    fn forward_eval(&self, params: &[f64], x: &Tensor4) -> Tensor4 {
        let mut cur = x.clone();
        for (bn, conv) in self.bns.iter().zip(&self.convs) {
            cur = conv.forward(params, &relu_forward(&bn.forward_eval(params, &cur)));
        }
        cur
    }

    fn backward(&self, params: &[f64], tape: &DenseTape, dy: &Tensor4, grads: &mut [f64]) -> Tensor4 {
        let mut dcur = dy.clone();
        for i in (0..3).rev() {
            let (bn_cache, bn_out, relu_out) = &tape.parts[i];
            let d_relu_out = self.convs[i].backward(params, relu_out, &dcur, grads);
            let d_bn_out = relu_backward(bn_out, &d_relu_out);
            dcur = self.bns[i].backward(params, bn_cache, &d_bn_out, grads);
        }
        dcur
    }

    fn update_running(&mut self, tape: &DenseTape) {
        for (bn, part) in self.bns.iter_mut().zip(&tape.parts) {
            bn.update_running(&part.0);
        }
    }
}

/// Pre-sampled dropout scale masks, one per dense block output.
pub struct DropoutPlan {
    enc: Vec<Vec<f64>>,
    dec: Vec<Vec<f64>>,
}

impl DropoutPlan {
    /// All-pass plan (keeps every activation, no scaling).
    pub fn disabled(net: &QuickNatLite, batch: usize, h: usize, w: usize) -> DropoutPlan {
        let c = net.spec.channels;
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        for i in 0..4 {
            let s = batch * c * (h >> i) * (w >> i);
            enc.push(vec![1.0; s]);
        }
        for j in 0..4 {
            let shift = 3 - j;
            let s = batch * c * (h >> shift) * (w >> shift);
            dec.push(vec![1.0; s]);
        }
        DropoutPlan { enc, dec }
    }
}

/// Everything backward (and running-stat updates) need from one forward pass.
pub struct Tape {
    /// Input to each stage: 4 encoders, bottleneck, 4 decoders, classifier.
    /// The plain training pass keeps only the two backward needs (bottleneck
    /// and classifier inputs); the traced pass keeps all ten for replays.
    stage_inputs: Vec<Option<Tensor4>>,
    enc_tapes: Vec<DenseTape>,
    pools: Vec<PoolCache>,
    skips: Vec<Tensor4>,
    bottleneck_bn: BnCache,
    dec_tapes: Vec<DenseTape>,
    pub probs: Tensor4,
}

pub const STAGE_COUNT: usize = 10;

#[derive(Debug, Clone)]
pub struct QuickNatLite {
    pub spec: ArchitectureSpec,
    store: ParamStore,
    enc: Vec<DenseBlock>,
    bottleneck_conv: ConvLayer,
    bottleneck_bn: BnLayer,
    dec: Vec<DenseBlock>,
    classifier: ConvLayer,
}

impl QuickNatLite {
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let mut store = ParamStore::default();
        let enc: Vec<DenseBlock> = (0..4)
            .map(|i| DenseBlock::new(&mut store, &format!("enc{}", i + 1), i, if i == 0 { 1 } else { c }, c))
            .collect();
        let bottleneck_conv = ConvLayer::new(&mut store, "bottleneck.conv", 4, c, c, 5);
        let bottleneck_bn = BnLayer::new(&mut store, "bottleneck.bn", 4, c);
        let dec: Vec<DenseBlock> = (0..4)
            .map(|j| DenseBlock::new(&mut store, &format!("dec{}", j + 1), 5 + j, 2 * c, c))
            .collect();
        let classifier = ConvLayer::new(&mut store, "classifier", 9, c, spec.num_classes, 1);

        let mut net = QuickNatLite {
            spec,
            store,
            enc,
            bottleneck_conv,
            bottleneck_bn,
            dec,
            classifier,
        };
        net.init_params(seed);
        Ok(net)
    }

    /// Kaiming-style initialization for convolutions; identity batch norm.
    fn init_params(&mut self, seed: u64) {
        let mut rng = crate::rng::stream(seed, &[0x6e65]);
        let convs: Vec<ConvLayer> = self
            .enc
            .iter()
            .chain(self.dec.iter())
            .flat_map(|b| b.convs.iter().cloned())
            .chain([self.bottleneck_conv.clone(), self.classifier.clone()])
            .collect();
        // Gammas default to one; everything else starts at zero except the
        // convolution weights.
        for seg in &self.store.segments {
            if seg.name.ends_with(".gamma") {
                self.store.values[seg.offset..seg.offset + seg.len].fill(1.0);
            }
        }
        for conv in convs {
            let fan_in = (conv.shape.c_in * conv.shape.k * conv.shape.k) as f64;
            let std = (2.0 / fan_in).sqrt();
            for v in &mut self.store.values[conv.w_off..conv.w_off + conv.shape.weight_len()] {
                *v = std * normal_sample(&mut rng);
            }
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.store.values
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.store.values
    }

    pub fn set_params(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.store.values.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.store.values.len()),
                actual: format!("{}", values.len()),
            });
        }
        self.store.values = values;
        Ok(())
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.store.segments
    }

    pub fn param_count(&self) -> usize {
        self.store.values.len()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let div = 1 << self.spec.num_encoders;
        if x.c != 1 || x.h % div != 0 || x.w % div != 0 || x.h == 0 || x.w == 0 {
            return Err(Error::Shape {
                expected: format!("(n, 1, h, w) with h and w positive multiples of {div}"),
                actual: format!("({}, {}, {}, {})", x.n, x.c, x.h, x.w),
            });
        }
        Ok(())
    }

    /// Samples dropout masks for one training forward pass.
    pub fn sample_dropout(&self, rng: &mut ChaCha8Rng, batch: usize, h: usize, w: usize) -> DropoutPlan {
        let p = self.spec.dropout;
        if p == 0.0 {
            return DropoutPlan::disabled(self, batch, h, w);
        }
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let c = self.spec.channels;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                .collect()
        };
        let enc = (0..4).map(|i| draw(batch * c * (h >> i) * (w >> i))).collect();
        let dec = (0..4)
            .map(|j| {
                let shift = 3 - j;
                draw(batch * c * (h >> shift) * (w >> shift))
            })
            .collect();
        DropoutPlan { enc, dec }
    }

    /// Training-mode forward pass (batch statistics, dropout active).
    ///
    /// Does not mutate the network; pass the tape to
    /// [`QuickNatLite::update_running_stats`] to fold batch statistics into
    /// the running buffers.
    pub fn forward_train(&self, x: &Tensor4, plan: &DropoutPlan) -> Result<(Tensor4, Tape)> {
        self.forward_train_impl(x, plan, false)
    }

    /// Like [`QuickNatLite::forward_train`] but keeps every stage input on
    /// the tape so [`QuickNatLite::replay_from_stage`] can start anywhere.
    pub fn forward_train_traced(&self, x: &Tensor4, plan: &DropoutPlan) -> Result<(Tensor4, Tape)> {
        self.forward_train_impl(x, plan, true)
    }

    fn forward_train_impl(&self, x: &Tensor4, plan: &DropoutPlan, keep_all: bool) -> Result<(Tensor4, Tape)> {
        self.check_input(x)?;
        let keep = |stage: usize, t: &Tensor4| -> Option<Tensor4> {
            if keep_all || stage == 4 || stage == 9 {
                Some(t.clone())
            } else {
                None
            }
        };
        let params = &self.store.values;
        let mut stage_inputs = Vec::with_capacity(STAGE_COUNT);
        let mut enc_tapes = Vec::with_capacity(4);
        let mut pools = Vec::with_capacity(4);
        let mut skips = Vec::with_capacity(4);

        let mut cur = x.clone();
        for i in 0..4 {
            stage_inputs.push(keep(i, &cur));
            let (block_out, tape) = self.enc[i].forward_train(params, &cur);
            let dropped = dropout_forward(&block_out, &plan.enc[i]);
            let (pooled, pool) = maxpool2_forward(&dropped);
            enc_tapes.push(tape);
            skips.push(dropped);
            pools.push(pool);
            cur = pooled;
        }

        stage_inputs.push(keep(4, &cur));
        let conv_out = self.bottleneck_conv.forward(params, &cur);
        let (bn_out, bottleneck_bn) = self.bottleneck_bn.forward_train(params, &conv_out);
        cur = bn_out;

        let mut dec_tapes = Vec::with_capacity(4);
        for j in 0..4 {
            stage_inputs.push(keep(5 + j, &cur));
            let enc_idx = 3 - j;
            let up = unpool2_forward(&cur, &pools[enc_idx]);
            let cat = concat_channels(&up, &skips[enc_idx]);
            let (block_out, tape) = self.dec[j].forward_train(params, &cat);
            let dropped = dropout_forward(&block_out, &plan.dec[j]);
            dec_tapes.push(tape);
            cur = dropped;
        }

        stage_inputs.push(keep(9, &cur));
        let logits = self.classifier.forward(params, &cur);
        let probs = softmax_channels(&logits);

        let tape = Tape {
            stage_inputs,
            enc_tapes,
            pools,
            skips,
            bottleneck_bn,
            dec_tapes,
            probs: probs.clone(),
        };
        Ok((probs, tape))
    }

    /// Pure inference: running statistics, dropout disabled.
    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let params = &self.store.values;
        let mut pools = Vec::with_capacity(4);
        let mut skips = Vec::with_capacity(4);
        let mut cur = x.clone();
        for i in 0..4 {
            let block_out = self.enc[i].forward_eval(params, &cur);
            let (pooled, pool) = maxpool2_forward(&block_out);
            skips.push(block_out);
            pools.push(pool);
            cur = pooled;
        }
        let conv_out = self.bottleneck_conv.forward(params, &cur);
        cur = self.bottleneck_bn.forward_eval(params, &conv_out);
        for j in 0..4 {
            let enc_idx = 3 - j;
            let up = unpool2_forward(&cur, &pools[enc_idx]);
            let cat = concat_channels(&up, &skips[enc_idx]);
            cur = self.dec[j].forward_eval(params, &cat);
        }
        let logits = self.classifier.forward(params, &cur);
        Ok(softmax_channels(&logits))
    }

    /// Backpropagation; returns one gradient per parameter (flat layout).
    pub fn backward(&self, tape: &Tape, plan: &DropoutPlan, d_probs: &Tensor4) -> Vec<f64> {
        let params = &self.store.values;
        let mut grads = vec![0.0f64; params.len()];

        let d_logits = crate::neuralseg::ops::softmax_backward(&tape.probs, d_probs);
        let cls_input = tape.stage_inputs[9].as_ref().expect("classifier input kept");
        let mut dcur = self.classifier.backward(params, cls_input, &d_logits, &mut grads);

        let mut d_skips: Vec<Option<Tensor4>> = vec![None, None, None, None];
        for j in (0..4).rev() {
            let enc_idx = 3 - j;
            let d_block_out = dropout_backward(&plan.dec[j], &dcur);
            let d_cat = self.dec[j].backward(params, &tape.dec_tapes[j], &d_block_out, &mut grads);
            let (d_up, d_skip) = split_channels(&d_cat, self.spec.channels);
            d_skips[enc_idx] = Some(d_skip);
            dcur = unpool2_backward(&tape.pools[enc_idx], &d_up);
        }

        let d_conv_out = self.bottleneck_bn.backward(params, &tape.bottleneck_bn, &dcur, &mut grads);
        let bott_input = tape.stage_inputs[4].as_ref().expect("bottleneck input kept");
        dcur = self
            .bottleneck_conv
            .backward(params, bott_input, &d_conv_out, &mut grads);

        for i in (0..4).rev() {
            let mut d_dropped = maxpool2_backward(&tape.pools[i], &dcur);
            if let Some(ds) = &d_skips[i] {
                for (a, b) in d_dropped.data.iter_mut().zip(&ds.data) {
                    *a += b;
                }
            }
            let d_block_out = dropout_backward(&plan.enc[i], &d_dropped);
            dcur = self.enc[i].backward(params, &tape.enc_tapes[i], &d_block_out, &mut grads);
        }
        grads
    }

    /// Visits every batch-norm running buffer in block order
    /// (enc1..enc4, bottleneck, dec1..dec4; bn1..bn3 within a block).
    pub fn visit_running_stats(&self, mut f: impl FnMut(&[f64], &[f64])) {
        for block in &self.enc {
            for bn in &block.bns {
                f(&bn.running_mean, &bn.running_var);
            }
        }
        f(&self.bottleneck_bn.running_mean, &self.bottleneck_bn.running_var);
        for block in &self.dec {
            for bn in &block.bns {
                f(&bn.running_mean, &bn.running_var);
            }
        }
    }

    pub fn visit_running_stats_mut(&mut self, mut f: impl FnMut(&mut [f64], &mut [f64])) {
        for block in &mut self.enc {
            for bn in &mut block.bns {
                f(&mut bn.running_mean, &mut bn.running_var);
            }
        }
        f(&mut self.bottleneck_bn.running_mean, &mut self.bottleneck_bn.running_var);
        for block in &mut self.dec {
            for bn in &mut block.bns {
                f(&mut bn.running_mean, &mut bn.running_var);
            }
        }
    }

    /// Folds the tape's batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (block, t) in self.enc.iter_mut().zip(&tape.enc_tapes) {
            block.update_running(t);
        }
        self.bottleneck_bn.update_running(&tape.bottleneck_bn);
        for (block, t) in self.dec.iter_mut().zip(&tape.dec_tapes) {
            block.update_running(t);
        }
    }

    /// Plain SGD step.
    pub fn apply_gradients(&mut self, grads: &[f64], lr: f64) {
        debug_assert_eq!(grads.len(), self.store.values.len());
        for (p, g) in self.store.values.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }

    /// Replays the forward pass from `stage` onward with substitute
    /// parameters, reusing the tape's cached prefix, and returns the class
    /// probabilities. Used by the finite-difference gradient check.
    pub fn replay_from_stage(&self, stage: usize, params: &[f64], tape: &Tape, plan: &DropoutPlan) -> Tensor4 {
        debug_assert!(stage < STAGE_COUNT);
        let mut pools_local: Vec<Option<PoolCache>> = vec![None, None, None, None];
        let mut skips_local: Vec<Option<Tensor4>> = vec![None, None, None, None];
        let stage_input = |s: usize| -> Tensor4 {
            tape.stage_inputs[s]
                .as_ref()
                .expect("replay requires a traced forward pass")
                .clone()
        };
        let mut cur = stage_input(stage);

        for i in 0..4 {
            if i < stage {
                continue;
            }
            let block_out = self.enc[i].forward_train_nocache(params, &cur);
            let dropped = dropout_forward(&block_out, &plan.enc[i]);
            let (pooled, pool) = maxpool2_forward(&dropped);
            pools_local[i] = Some(pool);
            skips_local[i] = Some(dropped);
            cur = pooled;
        }

        if stage <= 4 {
            let conv_out = self.bottleneck_conv.forward(params, &cur);
            let (bn_out, _) = batchnorm_forward_train(
                &conv_out,
                self.bottleneck_bn.gamma(params),
                self.bottleneck_bn.beta(params),
            );
            cur = bn_out;
        }

        for j in 0..4 {
            let s = 5 + j;
            if s < stage {
                continue;
            }
            if s == stage {
                cur = stage_input(s);
            }
            let enc_idx = 3 - j;
            let pool = pools_local[enc_idx].as_ref().unwrap_or(&tape.pools[enc_idx]);
            let skip = skips_local[enc_idx].as_ref().unwrap_or(&tape.skips[enc_idx]);
            let up = unpool2_forward(&cur, pool);
            let cat = concat_channels(&up, skip);
            let block_out = self.dec[j].forward_train_nocache(params, &cat);
            cur = dropout_forward(&block_out, &plan.dec[j]);
        }

        if stage == 9 {
            cur = stage_input(9);
        }
        let logits = conv2d_forward(
            &cur,
            self.classifier.shape,
            self.classifier.weights(params),
            self.classifier.bias(params),
        );
        softmax_channels(&logits)
    }
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniform draws.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ArchitectureSpec {
        ArchitectureSpec {
            num_encoders: 4,
            channels: 4,
            num_classes: 2,
            dropout: 0.5,
            input_size: 32,
        }
    }

    fn random_input(n: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = crate::rng::stream(seed, &[]);
        let data = (0..n * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor4::from_vec(n, 1, h, w, data).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut net = QuickNatLite::new(tiny_spec(), 1).unwrap();
        let zeros = vec![0.0; net.param_count()];
        // gamma = 1 everywhere keeps batch norm well-defined; conv weights 0.
        let mut params = zeros;
        for seg in net.segments().to_vec() {
            if seg.name.ends_with(".gamma") {
                params[seg.offset..seg.offset + seg.len].fill(1.0);
            }
        }
        net.set_params(params).unwrap();
        let x = random_input(1, 32, 32, 3);
        let plan = DropoutPlan::disabled(&net, 1, 32, 32);
        let (probs, _) = net.forward_train(&x, &plan).unwrap();
        for v in &probs.data {
            assert!((v - 0.5).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn probabilities_normalize_on_random_input() {
        let net = QuickNatLite::new(tiny_spec(), 7).unwrap();
        let x = random_input(2, 32, 32, 4);
        let mut rng = crate::rng::stream(9, &[]);
        let plan = net.sample_dropout(&mut rng, 2, 32, 32);
        let (probs, _) = net.forward_train(&x, &plan).unwrap();
        let plane = 32 * 32;
        for n in 0..2 {
            for i in 0..plane {
                let s = probs.plane(n, 0)[i] + probs.plane(n, 1)[i];
                assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn shape_errors_reported() {
        let net = QuickNatLite::new(tiny_spec(), 7).unwrap();
        let bad = Tensor4::zeros(1, 1, 30, 32);
        assert!(matches!(net.infer(&bad), Err(Error::Shape { .. })));
        let bad_c = Tensor4::zeros(1, 2, 32, 32);
        assert!(matches!(net.infer(&bad_c), Err(Error::Shape { .. })));
    }

    #[test]
    fn inference_deterministic() {
        let net = QuickNatLite::new(tiny_spec(), 7).unwrap();
        let x = random_input(1, 32, 32, 5);
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn replay_from_any_stage_matches_full_forward() {
        let net = QuickNatLite::new(tiny_spec(), 11).unwrap();
        let x = random_input(1, 32, 32, 6);
        let mut rng = crate::rng::stream(13, &[]);
        let plan = net.sample_dropout(&mut rng, 1, 32, 32);
        let (probs, tape) = net.forward_train_traced(&x, &plan).unwrap();
        for stage in 0..STAGE_COUNT {
            let replayed = net.replay_from_stage(stage, net.params(), &tape, &plan);
            for (a, b) in replayed.data.iter().zip(&probs.data) {
                assert!((a - b).abs() <= 1e-12, "stage {stage} differs: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut net = QuickNatLite::new(tiny_spec(), 3).unwrap();
        let before = net.params().to_vec();
        let grads: Vec<f64> = (0..net.param_count()).map(|i| i as f64).collect();
        net.apply_gradients(&grads, 0.0);
        assert_eq!(net.params(), &before[..]);
    }
}
