use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, conv2d_param_grads, dense_backward, dense_forward, dropout_backward,
    dropout_forward, relu_backward, relu_forward, ConvLayer, DenseLayer, DropoutState, ReluMask,
};
use crate::pooling::{
    avg_pool_backward, avg_pool_forward, init_rank_weights, lbpn_backward, lbpn_forward, max_pool_backward,
    max_pool_forward, opn_backward, opn_forward, opn_softmax_backward, opn_softmax_forward, pooling_param_count,
    ArgmaxCache, LocationWeights, PoolSpec, PoolingKind, RankPermutation, RankWeights,
};
use crate::tensor::{Dims, Tensor4};

/// A pooling stage with its learnable state, if any.
#[derive(Clone, Debug, PartialEq)]
pub enum PoolLayer {
    Max,
    Avg,
    Lbpn(LocationWeights),
    Opn(RankWeights),
    /// Holds the logits; the effective weights are their row-wise softmax.
    OpnSoftmax(RankWeights),
}

/// Exportable weights of a learned pooling stage.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    Rank(RankWeights),
    Location(LocationWeights),
}

impl LayerWeights {
    pub fn channels(&self) -> usize {
        match self {
            LayerWeights::Rank(w) => w.channels(),
            LayerWeights::Location(w) => w.channels(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            LayerWeights::Rank(w) => w.k(),
            LayerWeights::Location(w) => w.k(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            LayerWeights::Rank(w) => w.as_slice(),
            LayerWeights::Location(w) => w.as_slice(),
        }
    }
}

enum PoolCache {
    Max(ArgmaxCache),
    Avg,
    Lbpn,
    Opn(RankPermutation),
    OpnSoftmax(RankPermutation, RankWeights),
}

impl PoolLayer {
    fn new(kind: PoolingKind, channels: usize, k: usize) -> Result<Self> {
        Ok(match kind {
            PoolingKind::Max => PoolLayer::Max,
            PoolingKind::Avg => PoolLayer::Avg,
            // uniform location weights start LBPN as average pooling
            PoolingKind::Lbpn => PoolLayer::Lbpn(LocationWeights::uniform(channels, k)?),
            PoolingKind::Opn => PoolLayer::Opn(init_rank_weights(channels, k)),
            PoolingKind::OpnSoftmax => {
                // logits whose softmax is the standard ordinal initialisation
                let w = init_rank_weights(channels, k);
                let logits = w.as_slice().iter().map(|v| v.ln()).collect();
                PoolLayer::OpnSoftmax(RankWeights::new(channels, k, logits)?)
            }
        })
    }

    pub fn kind(&self) -> PoolingKind {
        match self {
            PoolLayer::Max => PoolingKind::Max,
            PoolLayer::Avg => PoolingKind::Avg,
            PoolLayer::Lbpn(_) => PoolingKind::Lbpn,
            PoolLayer::Opn(_) => PoolingKind::Opn,
            PoolLayer::OpnSoftmax(_) => PoolingKind::OpnSoftmax,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            PoolLayer::Max | PoolLayer::Avg => 0,
            PoolLayer::Lbpn(w) => w.param_count(),
            PoolLayer::Opn(w) | PoolLayer::OpnSoftmax(w) => w.param_count(),
        }
    }

    /// Weights as applied to activations (softmax of the logits for the
    /// constrained variant); `None` for parameter-free pooling.
    pub fn effective_weights(&self) -> Option<LayerWeights> {
        match self {
            PoolLayer::Max | PoolLayer::Avg => None,
            PoolLayer::Lbpn(w) => Some(LayerWeights::Location(w.clone())),
            PoolLayer::Opn(w) => Some(LayerWeights::Rank(w.clone())),
            PoolLayer::OpnSoftmax(theta) => Some(LayerWeights::Rank(theta.softmax_rows())),
        }
    }

    fn forward(&self, x: &Tensor4, spec: &PoolSpec) -> Result<(Tensor4, PoolCache)> {
        Ok(match self {
            PoolLayer::Max => {
                let (y, c) = max_pool_forward(x, spec)?;
                (y, PoolCache::Max(c))
            }
            PoolLayer::Avg => (avg_pool_forward(x, spec)?, PoolCache::Avg),
            PoolLayer::Lbpn(w) => (lbpn_forward(x, spec, w)?, PoolCache::Lbpn),
            PoolLayer::Opn(w) => {
                let (y, p) = opn_forward(x, spec, w)?;
                (y, PoolCache::Opn(p))
            }
            PoolLayer::OpnSoftmax(theta) => {
                let (y, p, w) = opn_softmax_forward(x, spec, theta)?;
                (y, PoolCache::OpnSoftmax(p, w))
            }
        })
    }

    /// Returns `dx` and the flat parameter gradient (empty when parameter-free).
    fn backward(&self, dy: &Tensor4, x: &Tensor4, spec: &PoolSpec, cache: &PoolCache) -> Result<(Tensor4, Vec<f64>)> {
        Ok(match (self, cache) {
            (PoolLayer::Max, PoolCache::Max(c)) => (max_pool_backward(dy, c, x.dims())?, vec![]),
            (PoolLayer::Avg, PoolCache::Avg) => (avg_pool_backward(dy, spec, x.dims())?, vec![]),
            (PoolLayer::Lbpn(w), PoolCache::Lbpn) => {
                let (dx, dw) = lbpn_backward(dy, x, spec, w)?;
                (dx, dw.as_slice().to_vec())
            }
            (PoolLayer::Opn(w), PoolCache::Opn(p)) => {
                let (dx, dw) = opn_backward(dy, x, p, w)?;
                (dx, dw.as_slice().to_vec())
            }
            (PoolLayer::OpnSoftmax(theta), PoolCache::OpnSoftmax(p, w)) => {
                let (dx, dt) = opn_softmax_backward(dy, x, p, theta, w)?;
                (dx, dt.as_slice().to_vec())
            }
            _ => return Err(Error::Shape("pooling cache does not match layer kind".into())),
        })
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            PoolLayer::Max | PoolLayer::Avg => &mut [],
            PoolLayer::Lbpn(w) => w.as_mut_slice(),
            PoolLayer::Opn(w) | PoolLayer::OpnSoftmax(w) => w.as_mut_slice(),
        }
    }
}

/// Intermediate values kept from a training-mode forward pass.
struct ForwardCache {
    x: Tensor4,
    relu1: ReluMask,
    pool1_in: Tensor4,
    pool1: PoolCache,
    conv2_in: Tensor4,
    relu2: ReluMask,
    pool2_in: Tensor4,
    pool2: PoolCache,
    fc1_in: Tensor4,
    relu3: ReluMask,
    dropout: DropoutState,
    fc2_in: Tensor4,
}

/// Flat gradients for every parameter block of a [`Network`].
#[derive(Clone, Debug, Default)]
pub(crate) struct Gradients {
    conv1: (Vec<f64>, Vec<f64>),
    pool1: Vec<f64>,
    conv2: (Vec<f64>, Vec<f64>),
    pool2: Vec<f64>,
    fc1: (Vec<f64>, Vec<f64>),
    fc2: (Vec<f64>, Vec<f64>),
}

/// The classifier: two convolution + pooling stages and two dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    spec: PoolSpec,
    pub conv1: ConvLayer,
    pub pool1: PoolLayer,
    pub conv2: ConvLayer,
    pub pool2: PoolLayer,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

impl Network {
    /// Builds and initialises a network from `config`; every random draw comes
    /// from `config.seed`.
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let spec = PoolSpec::default();
        let k = spec.region_size();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c1, c2) = (config.conv1, config.conv2);
        Ok(Network {
            conv1: ConvLayer::init(1, c1.channels, c1.filter, c1.filter, &mut rng),
            pool1: PoolLayer::new(config.pooling, c1.channels, k)?,
            conv2: ConvLayer::init(c1.channels, c2.channels, c2.filter, c2.filter, &mut rng),
            pool2: PoolLayer::new(config.pooling, c2.channels, k)?,
            fc1: DenseLayer::init(config.flat_dim(), config.hidden_dim, &mut rng),
            fc2: DenseLayer::init(config.hidden_dim, config.num_classes, &mut rng),
            config: config.clone(),
            spec,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn pool_spec(&self) -> PoolSpec {
        self.spec
    }

    /// Learnable parameters in the two pooling stages.
    pub fn pooling_param_count(&self) -> usize {
        self.pool1.param_count() + self.pool2.param_count()
    }

    /// What [`pooling_param_count`] predicts for this architecture.
    pub fn expected_pooling_param_count(&self) -> usize {
        pooling_param_count(self.config.pooling, self.config.conv1.channels, &self.spec)
            + pooling_param_count(self.config.pooling, self.config.conv2.channels, &self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
            + self.pooling_param_count()
    }

    /// Effective pooling weights per stage, named `pool1` and `pool2`.
    pub fn pool_weights(&self) -> Vec<(&'static str, LayerWeights)> {
        [("pool1", &self.pool1), ("pool2", &self.pool2)]
            .into_iter()
            .filter_map(|(name, layer)| layer.effective_weights().map(|w| (name, w)))
            .collect()
    }

    fn input_dims(&self, batch: usize) -> Dims {
        Dims::new(batch, 1, self.config.image_size, self.config.image_size)
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.dims() != self.input_dims(x.dims().batch) {
            return Err(Error::Shape(format!(
                "network expects (B, 1, {s}, {s}) input, got {}",
                x.dims(),
                s = self.config.image_size
            )));
        }
        Ok(())
    }

    /// Logits of shape `(B, classes, 1, 1)` with dropout disabled.
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let h = relu_forward(&conv2d_forward(x, &self.conv1)?).0;
        let h = self.pool1.forward(&h, &self.spec)?.0;
        let h = relu_forward(&conv2d_forward(&h, &self.conv2)?).0;
        let h = self.pool2.forward(&h, &self.spec)?.0;
        let h = relu_forward(&dense_forward(&h, &self.fc1)?).0;
        dense_forward(&h, &self.fc2)
    }

    fn forward_train(&self, x: &Tensor4, keep_prob: f64, seed: u64) -> Result<(Tensor4, ForwardCache)> {
        self.check_input(x)?;
        let (pool1_in, relu1) = relu_forward(&conv2d_forward(x, &self.conv1)?);
        let (conv2_in, pool1) = self.pool1.forward(&pool1_in, &self.spec)?;
        let (pool2_in, relu2) = relu_forward(&conv2d_forward(&conv2_in, &self.conv2)?);
        let (fc1_in, pool2) = self.pool2.forward(&pool2_in, &self.spec)?;
        let (hidden, relu3) = relu_forward(&dense_forward(&fc1_in, &self.fc1)?);
        let (fc2_in, dropout) = dropout_forward(&hidden, keep_prob, seed)?;
        let logits = dense_forward(&fc2_in, &self.fc2)?;
        let cache = ForwardCache {
            x: x.clone(),
            relu1,
            pool1_in,
            pool1,
            conv2_in,
            relu2,
            pool2_in,
            pool2,
            fc1_in,
            relu3,
            dropout,
            fc2_in,
        };
        Ok((logits, cache))
    }

    fn backward(&self, cache: &ForwardCache, dlogits: &Tensor4) -> Result<Gradients> {
        let fc2 = dense_backward(dlogits, &cache.fc2_in, &self.fc2)?;
        let d = dropout_backward(&fc2.dx, &cache.dropout)?;
        let d = relu_backward(&d, &cache.relu3)?;
        let fc1 = dense_backward(&d, &cache.fc1_in, &self.fc1)?;
        let (d, pool2) = self.pool2.backward(&fc1.dx, &cache.pool2_in, &self.spec, &cache.pool2)?;
        let d = relu_backward(&d, &cache.relu2)?;
        let conv2 = conv2d_backward(&d, &cache.conv2_in, &self.conv2)?;
        let (d, pool1) = self.pool1.backward(&conv2.dx, &cache.pool1_in, &self.spec, &cache.pool1)?;
        let d = relu_backward(&d, &cache.relu1)?;
        let conv1 = conv2d_param_grads(&d, &cache.x, &self.conv1)?;
        Ok(Gradients {
            conv1,
            pool1,
            conv2: (conv2.d_weights, conv2.d_bias),
            pool2,
            fc1: (fc1.d_weights, fc1.d_bias),
            fc2: (fc2.d_weights, fc2.d_bias),
        })
    }

    /// One forward/backward pass; returns the mean loss and gradients.
    pub(crate) fn loss_and_grads(
        &self,
        x: &Tensor4,
        labels: &[usize],
        keep_prob: f64,
        seed: u64,
    ) -> Result<(f64, Gradients)> {
        let (logits, cache) = self.forward_train(x, keep_prob, seed)?;
        let (loss, probs) = crate::layers::softmax_xent_forward(&logits, labels)?;
        if !loss.is_finite() {
            return Ok((loss, Gradients::default()));
        }
        let dlogits = crate::layers::softmax_xent_backward(&probs, labels)?;
        Ok((loss, self.backward(&cache, &dlogits)?))
    }

    /// `p <- p - lr * g` for every parameter.
    pub(crate) fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        fn step(p: &mut [f64], g: &[f64], lr: f64) {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
        step(&mut self.conv1.weights, &grads.conv1.0, lr);
        step(&mut self.conv1.bias, &grads.conv1.1, lr);
        step(self.pool1.params_mut(), &grads.pool1, lr);
        step(&mut self.conv2.weights, &grads.conv2.0, lr);
        step(&mut self.conv2.bias, &grads.conv2.1, lr);
        step(self.pool2.params_mut(), &grads.pool2, lr);
        step(&mut self.fc1.weights, &grads.fc1.0, lr);
        step(&mut self.fc1.bias, &grads.fc1.1, lr);
        step(&mut self.fc2.weights, &grads.fc2.0, lr);
        step(&mut self.fc2.bias, &grads.fc2.1, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::ConvSpec;

    fn small(pooling: PoolingKind) -> NetworkConfig {
        NetworkConfig {
            pooling,
            conv1: ConvSpec { channels: 3, filter: 3 },
            conv2: ConvSpec { channels: 4, filter: 3 },
            hidden_dim: 8,
            num_classes: 10,
            image_size: 8,
            seed: 3,
        }
    }

    #[test]
    fn default_pooling_parameter_counts() {
        let opn = Network::new(&NetworkConfig::default()).unwrap();
        assert_eq!(opn.pooling_param_count(), 384);
        assert_eq!(opn.expected_pooling_param_count(), 384);
        let max = Network::new(&NetworkConfig::default().with_pooling(PoolingKind::Max)).unwrap();
        assert_eq!(max.pooling_param_count(), 0);
    }

    #[test]
    fn zero_image_gives_finite_logits() {
        let net = Network::new(&NetworkConfig::default().with_pooling(PoolingKind::Max)).unwrap();
        let logits = net.predict(&Tensor4::zeros((1, 1, 28, 28)).unwrap()).unwrap();
        assert_eq!(logits.len(), 10);
        assert!(logits.all_finite());
    }

    #[test]
    fn every_kind_builds_and_runs() {
        for kind in PoolingKind::ALL {
            let net = Network::new(&small(kind)).unwrap();
            assert_eq!(net.pooling_param_count(), net.expected_pooling_param_count());
            let x = Tensor4::new_filled((2, 1, 8, 8), 0.5).unwrap();
            let (loss, grads) = net.loss_and_grads(&x, &[1, 2], 0.9, 5).unwrap();
            assert!(loss.is_finite());
            assert_eq!(grads.pool1.len(), net.pool1.param_count());
        }
    }

    #[test]
    fn softmax_variant_starts_from_ordinal_init() {
        let net = Network::new(&small(PoolingKind::OpnSoftmax)).unwrap();
        let (_, w) = &net.pool_weights()[0];
        for (a, b) in w.as_slice().iter().zip(init_rank_weights(3, 4).as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_rejected() {
        let net = Network::new(&small(PoolingKind::Max)).unwrap();
        assert!(net.predict(&Tensor4::zeros((1, 1, 28, 28)).unwrap()).is_err());
    }
}
