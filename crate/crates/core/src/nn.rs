//! Dense multilayer perceptrons with hand-written forward and backward
//! passes, checkable against finite differences.
//!
//! Hidden layers use softplus, output layers are linear. The input layer is
//! tuned for this crate's state tensors: across one link-state snapshot only
//! the sparse tree channel changes, so the layer-1 response to the static
//! channels is cached per snapshot ([`InputCache`]) and per-state work
//! touches only the tree entries. The cached path and the plain dense path
//! compute the same function.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;

/// One fully connected layer; `w` is row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Dot product with four independent accumulators; the fixed combination
/// order keeps results reproducible while breaking the serial FP dependency.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    let mut i = 0;
    while i < chunks {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    while i < a.len() {
        tail += a[i] * b[i];
        i += 1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl DenseLayer {
    fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = math::sqrt(6.0 / (rows + cols) as f64);
        let w = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        DenseLayer { rows, cols, w, b: vec![0.0; rows] }
    }

    fn matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            out.push(self.b[r] + dot(row, x));
        }
    }
}

/// Layer-1 response to a snapshot's static input, valid for one parameter
/// version of one network.
#[derive(Debug, Clone)]
pub struct InputCache {
    w_dot_static: Vec<f64>,
    version: u64,
}

/// The input of a recorded forward pass.
#[derive(Debug, Clone)]
pub enum TraceInput {
    Dense(Vec<f64>),
    /// Full-length static vector plus the indices that add 1.0 on top of it.
    Composite { static_x: Arc<Vec<f64>>, ones: Vec<usize> },
}

/// Activations recorded by a forward pass, as needed by backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    input: TraceInput,
    /// Pre-activations per layer; the last entry is the network output.
    pre: Vec<Vec<f64>>,
    /// Post-activations of the hidden layers.
    act: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

/// Per-layer gradient accumulator shaped like its network.
#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grads {
    fn zeros_like(net: &Mlp) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for (dw, db) in &self.layers {
            sq += dw.iter().map(|g| g * g).sum::<f64>();
            sq += db.iter().map(|g| g * g).sum::<f64>();
        }
        math::sqrt(sq)
    }

    pub fn scale(&mut self, factor: f64) {
        for (dw, db) in &mut self.layers {
            dw.iter_mut().for_each(|g| *g *= factor);
            db.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Flattened gradient aligned with [`Mlp::params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (dw, db) in &self.layers {
            out.extend_from_slice(dw);
            out.extend_from_slice(db);
        }
        out
    }
}

/// Rescales the gradient so its global norm is at most `max_norm`.
///
/// Returns true when clipping actually triggered.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> bool {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
        true
    } else {
        false
    }
}

/// A small multilayer perceptron over `f64`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    /// Bumped on every parameter change; pairs caches with their network.
    #[serde(skip)]
    version: u64,
}

/// Parameter equality; the cache version counter carries no identity.
impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    /// Glorot-uniform initialization of every layer, biases zero.
    pub fn glorot(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| DenseLayer::glorot(d[1], d[0], rng))
            .collect();
        Mlp { layers, version: 0 }
    }

    /// Zeroes the final layer so the initial output is exactly zero (a
    /// uniform policy under softmax, zero value for a critic head).
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.w.iter_mut().for_each(|w| *w = 0.0);
        last.b.iter_mut().for_each(|b| *b = 0.0);
        self.version += 1;
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        self.version += 1;
    }

    /// Adds `scale * grads` to the parameters (negative scale descends).
    pub fn add_scaled(&mut self, grads: &Grads, scale: f64) {
        assert_eq!(grads.layers.len(), self.layers.len());
        for (l, (dw, db)) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, g) in l.w.iter_mut().zip(dw) {
                *w += scale * g;
            }
            for (b, g) in l.b.iter_mut().zip(db) {
                *b += scale * g;
            }
        }
        self.version += 1;
    }

    /// Plain dense forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.matvec(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|z| *z = math::softplus(*z));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Precomputes the layer-1 response to a static input (bias excluded).
    pub fn input_cache(&self, static_x: &[f64]) -> InputCache {
        let l = &self.layers[0];
        debug_assert_eq!(static_x.len(), l.cols);
        let mut w_dot_static = Vec::with_capacity(l.rows);
        for r in 0..l.rows {
            let row = &l.w[r * l.cols..(r + 1) * l.cols];
            w_dot_static.push(dot(row, static_x));
        }
        InputCache { w_dot_static, version: self.version }
    }

    fn layer1_pre_cached(&self, cache: &InputCache, ones: &[usize]) -> Vec<f64> {
        assert_eq!(
            cache.version, self.version,
            "input cache is stale for this network version"
        );
        let l = &self.layers[0];
        let mut z: Vec<f64> = cache
            .w_dot_static
            .iter()
            .zip(&l.b)
            .map(|(s, b)| s + b)
            .collect();
        for &i in ones {
            for (r, zr) in z.iter_mut().enumerate() {
                *zr += l.w[r * l.cols + i];
            }
        }
        z
    }

    /// Forward pass over a composite input using a per-snapshot cache.
    pub fn forward_cached(&self, cache: &InputCache, ones: &[usize]) -> Vec<f64> {
        let mut cur = self.layer1_pre_cached(cache, ones);
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if i == 0 {
                if self.layers.len() > 1 {
                    cur.iter_mut().for_each(|z| *z = math::softplus(*z));
                }
                continue;
            }
            layer.matvec(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|z| *z = math::softplus(*z));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass recording everything backpropagation needs.
    pub fn forward_trace(&self, input: TraceInput, cache: Option<&InputCache>) -> Trace {
        let n_layers = self.layers.len();
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);

        let z0 = match (&input, cache) {
            (TraceInput::Composite { ones, .. }, Some(c)) => self.layer1_pre_cached(c, ones),
            (TraceInput::Composite { static_x, ones }, None) => {
                let mut x = static_x.as_ref().clone();
                for &i in ones {
                    x[i] += 1.0;
                }
                let mut z = Vec::new();
                self.layers[0].matvec(&x, &mut z);
                z
            }
            (TraceInput::Dense(x), _) => {
                let mut z = Vec::new();
                self.layers[0].matvec(x, &mut z);
                z
            }
        };
        pre.push(z0);

        for i in 1..n_layers {
            let a: Vec<f64> = pre[i - 1].iter().map(|&z| math::softplus(z)).collect();
            let mut z = Vec::new();
            self.layers[i].matvec(&a, &mut z);
            act.push(a);
            pre.push(z);
        }
        Trace { input, pre, act }
    }

    /// Accumulates parameter gradients over traced samples given each
    /// sample's gradient at the network output.
    ///
    /// Composite inputs sharing a static vector contribute their layer-1
    /// outer product once per distinct vector instead of once per sample.
    pub fn backward_batch(&self, items: &[(Trace, Vec<f64>)]) -> Grads {
        let mut grads = Grads::zeros_like(self);
        let n_layers = self.layers.len();
        // Deferred dense outer products, grouped by static-input identity.
        let mut groups: Vec<(Arc<Vec<f64>>, Vec<f64>)> = Vec::new();

        for (trace, dout) in items {
            let mut delta = dout.clone();
            for l in (0..n_layers).rev() {
                let (dw, db) = &mut grads.layers[l];
                for (g, d) in db.iter_mut().zip(&delta) {
                    *g += d;
                }
                let cols = self.layers[l].cols;
                if l > 0 {
                    let a_in = &trace.act[l - 1];
                    for (r, d) in delta.iter().enumerate() {
                        let row = &mut dw[r * cols..(r + 1) * cols];
                        for (g, a) in row.iter_mut().zip(a_in) {
                            *g += d * a;
                        }
                    }
                    // delta for the layer below, through the softplus.
                    let w = &self.layers[l].w;
                    let mut prev = vec![0.0; cols];
                    for (r, d) in delta.iter().enumerate() {
                        let row = &w[r * cols..(r + 1) * cols];
                        for (p, wi) in prev.iter_mut().zip(row) {
                            *p += d * wi;
                        }
                    }
                    let z_in = &trace.pre[l - 1];
                    for (p, z) in prev.iter_mut().zip(z_in) {
                        *p *= math::sigmoid(*z);
                    }
                    delta = prev;
                } else {
                    match &trace.input {
                        TraceInput::Dense(x) => {
                            for (r, d) in delta.iter().enumerate() {
                                let row = &mut dw[r * cols..(r + 1) * cols];
                                for (g, xi) in row.iter_mut().zip(x) {
                                    *g += d * xi;
                                }
                            }
                        }
                        TraceInput::Composite { static_x, ones } => {
                            for &i in ones {
                                for (r, d) in delta.iter().enumerate() {
                                    dw[r * cols + i] += d;
                                }
                            }
                            match groups.iter_mut().find(|(s, _)| Arc::ptr_eq(s, static_x)) {
                                Some((_, sum)) => {
                                    for (g, d) in sum.iter_mut().zip(&delta) {
                                        *g += d;
                                    }
                                }
                                None => groups.push((static_x.clone(), delta.clone())),
                            }
                        }
                    }
                }
            }
        }

        let cols = self.layers[0].cols;
        let (dw0, _) = &mut grads.layers[0];
        for (static_x, dsum) in groups {
            for (r, d) in dsum.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut dw0[r * cols..(r + 1) * cols];
                for (g, xi) in row.iter_mut().zip(static_x.iter()) {
                    *g += d * xi;
                }
            }
        }
        grads
    }
}

/// Gradient stepper with optional heavy-ball velocity.
///
/// The default `beta = 0` takes plain gradient steps; that is the shipped
/// training configuration. Velocity accumulation (`beta > 0`) buys roughly
/// a 1/(1-beta) effective rate but, under the trainer's repeated passes
/// over one batch, eventually saturates the policy into an inescapable
/// all-penalty loop, so it stays off there.
#[derive(Debug, Clone)]
pub struct Momentum {
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
    pub beta: f64,
}

impl Momentum {
    pub fn new_like(net: &Mlp) -> Self {
        Momentum { velocity: Grads::zeros_like(net).layers, beta: 0.0 }
    }

    /// One momentum step along `grads`; `sign` is +1.0 to ascend, -1.0 to
    /// descend. A zero gradient on a fresh state moves nothing.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64, sign: f64) {
        let mut delta = Grads::zeros_like(net);
        for (l, (gw, gb)) in grads.layers.iter().enumerate() {
            let (vw, vb) = &mut self.velocity[l];
            let (dw, db) = &mut delta.layers[l];
            for i in 0..gw.len() {
                vw[i] = self.beta * vw[i] + gw[i];
                dw[i] = sign * lr * vw[i];
            }
            for i in 0..gb.len() {
                vb[i] = self.beta * vb[i] + gb[i];
                db[i] = sign * lr * vb[i];
            }
        }
        net.add_scaled(&delta, 1.0);
    }
}

/// Caches layer-1 responses per distinct static input for one network.
#[derive(Debug, Default)]
pub struct CacheSet {
    entries: Vec<(Arc<Vec<f64>>, InputCache)>,
}

impl CacheSet {
    pub fn new() -> Self {
        CacheSet { entries: Vec::new() }
    }

    /// Cache for `static_x`, rebuilt if the network has changed since.
    pub fn cache(&mut self, net: &Mlp, static_x: &Arc<Vec<f64>>) -> &InputCache {
        let pos = self.entries.iter().position(|(s, _)| Arc::ptr_eq(s, static_x));
        match pos {
            Some(i) => {
                if self.entries[i].1.version != net.version() {
                    self.entries[i].1 = net.input_cache(static_x);
                }
                &self.entries[i].1
            }
            None => {
                let cache = net.input_cache(static_x);
                self.entries.push((static_x.clone(), cache));
                &self.entries.last().unwrap().1
            }
        }
    }
}

/// Maximum relative error between an analytic gradient and central finite
/// differences of `loss`, per parameter: `|a - fd| / (|a| + 1e-8)`.
pub fn gradcheck(net: &Mlp, mut loss: impl FnMut(&Mlp) -> f64, analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(analytic.len(), net.param_count());
    let mut probe = net.clone();
    let base = net.params();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_params(&p);
        let up = loss(&probe);
        p[i] = base[i] - eps;
        probe.set_params(&p);
        let down = loss(&probe);
        let fd = (up - down) / (2.0 * eps);
        let rel = math::abs(a - fd) / (math::abs(a) + 1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_final_layer_outputs_zero() {
        let mut net = Mlp::glorot(&[5, 8, 3], &mut rng(1));
        net.zero_final_layer();
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.2).collect();
        assert!(net.forward(&x).iter().all(|&y| y == 0.0));
    }

    #[test]
    fn cached_forward_matches_dense() {
        let net = Mlp::glorot(&[10, 6, 4], &mut rng(2));
        let static_x: Arc<Vec<f64>> =
            Arc::new((0..10).map(|i| (i as f64 * 0.37).sin_approx()).collect());
        let ones = vec![3usize, 7, 8];
        let mut dense = static_x.as_ref().clone();
        for &i in &ones {
            dense[i] += 1.0;
        }
        let cache = net.input_cache(&static_x);
        let got = net.forward_cached(&cache, &ones);
        let want = net.forward(&dense);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    // Deterministic pseudo-values without pulling in trig.
    trait SinApprox {
        fn sin_approx(self) -> f64;
    }
    impl SinApprox for f64 {
        fn sin_approx(self) -> f64 {
            let t = self - libm::floor(self);
            4.0 * t * (1.0 - t) - 0.5
        }
    }

    #[test]
    fn composite_backward_matches_dense_backward() {
        let net = Mlp::glorot(&[8, 5, 2], &mut rng(3));
        let static_x: Arc<Vec<f64>> =
            Arc::new((0..8).map(|i| (i as f64 * 0.61).sin_approx()).collect());
        let ones = vec![1usize, 6];
        let mut dense = static_x.as_ref().clone();
        for &i in &ones {
            dense[i] += 1.0;
        }
        let dout = vec![0.3, -1.1];

        let cache = net.input_cache(&static_x);
        let t_comp = net.forward_trace(
            TraceInput::Composite { static_x: static_x.clone(), ones: ones.clone() },
            Some(&cache),
        );
        let t_dense = net.forward_trace(TraceInput::Dense(dense), None);
        let g_comp = net.backward_batch(&[(t_comp, dout.clone())]);
        let g_dense = net.backward_batch(&[(t_dense, dout)]);
        for (a, b) in g_comp.to_flat().iter().zip(g_dense.to_flat()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gradcheck_linear_layer_is_tight() {
        let net = Mlp::glorot(&[4, 2], &mut rng(4));
        let x: Vec<f64> = vec![0.8, -0.4, 0.1, 1.3];
        let coef = [0.7, -1.2];
        let trace = net.forward_trace(TraceInput::Dense(x.clone()), None);
        let grads = net.backward_batch(&[(trace, coef.to_vec())]);
        let worst = gradcheck(
            &net,
            |m| m.forward(&x).iter().zip(coef).map(|(y, c)| y * c).sum(),
            &grads.to_flat(),
            1e-5,
        );
        assert!(worst < 1e-7, "max relative error {worst}");
    }

    #[test]
    fn gradcheck_catches_perturbed_gradients() {
        let net = Mlp::glorot(&[6, 5, 3], &mut rng(5));
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.23).sin_approx()).collect();
        let coef = [1.0, -0.5, 0.25];
        let trace = net.forward_trace(TraceInput::Dense(x.clone()), None);
        let grads = net.backward_batch(&[(trace, coef.to_vec())]);
        let loss =
            |m: &Mlp| m.forward(&x).iter().zip(coef).map(|(y, c)| y * c).sum::<f64>();

        let honest = gradcheck(&net, loss, &grads.to_flat(), 1e-5);
        assert!(honest < 1e-6, "honest gradient flagged: {honest}");

        let mut crooked = grads.to_flat();
        // 1% error on the largest component must be caught.
        let top = crooked
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        crooked[top] *= 1.01;
        let caught = gradcheck(&net, loss, &crooked, 1e-5);
        assert!(caught > 1e-3, "perturbation went unnoticed: {caught}");
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let net = Mlp::glorot(&[3, 2], &mut rng(6));
        let x = vec![10.0, -10.0, 10.0];
        let trace = net.forward_trace(TraceInput::Dense(x), None);
        let mut grads = net.backward_batch(&[(trace, vec![100.0, 100.0])]);
        assert!(clip_global_norm(&mut grads, 5.0));
        assert!((grads.global_norm() - 5.0).abs() < 1e-9);
        assert!(!clip_global_norm(&mut grads, 5.0));
    }

    #[test]
    fn params_round_trip_and_bump_version() {
        let mut net = Mlp::glorot(&[4, 3, 2], &mut rng(7));
        let before = net.params();
        let v = net.version();
        net.set_params(&before);
        assert_eq!(net.params(), before);
        assert!(net.version() > v);
    }

    #[test]
    fn cache_set_rebuilds_after_updates() {
        let mut net = Mlp::glorot(&[5, 4, 2], &mut rng(8));
        let static_x: Arc<Vec<f64>> = Arc::new(vec![0.1; 5]);
        let mut caches = CacheSet::new();
        let before = net.forward_cached(&caches.cache(&net, &static_x).clone(), &[2]);

        let trace = net.forward_trace(
            TraceInput::Composite { static_x: static_x.clone(), ones: vec![2] },
            Some(caches.cache(&net, &static_x)),
        );
        let grads = net.backward_batch(&[(trace, vec![1.0, 1.0])]);
        net.add_scaled(&grads, -0.1);

        let after = net.forward_cached(&caches.cache(&net, &static_x).clone(), &[2]);
        assert_ne!(before, after);
    }
}
