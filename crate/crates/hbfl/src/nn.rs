//! Deep feed-forward binary classifier: Relu hidden layers, a single sigmoid
//! output neuron, binary cross-entropy loss, and mini-batch Adam training.
//!
//! Parameters live in one flat vector so they can be exchanged and averaged by
//! the federation roles without knowing the layer structure. The layout is,
//! per layer: weight matrix in row-major order with shape `(out, in)`, then
//! the bias vector of length `out`.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Fixed hidden-layer widths of the classifier.
pub const HIDDEN_SIZES: [usize; 4] = [32, 16, 8, 4];

/// Epsilon used to clamp predictions away from {0,1} before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Ordered layer widths: input dim, the four hidden widths, then 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    sizes: Vec<usize>,
}

impl LayerSpec {
    /// Builds the standard classifier shape `[d, 32, 16, 8, 4, 1]`.
    pub fn dff(input_dim: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(6);
        sizes.push(input_dim);
        sizes.extend_from_slice(&HIDDEN_SIZES);
        sizes.push(1);
        Self::from_sizes(sizes)
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() != HIDDEN_SIZES.len() + 2 {
            return Err(Error::Shape(format!(
                "layer spec must have {} sizes, got {}",
                HIDDEN_SIZES.len() + 2,
                sizes.len()
            )));
        }
        if sizes[0] < 1 {
            return Err(Error::Shape("input dimension must be >= 1".into()));
        }
        if sizes[1..5] != HIDDEN_SIZES {
            return Err(Error::Shape(format!(
                "hidden sizes must be {:?}, got {:?}",
                HIDDEN_SIZES,
                &sizes[1..5]
            )));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::Shape("output size must be exactly 1".into()));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Number of affine layers.
    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Closed-form flat parameter count: per layer `in*out + out`.
    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat parameter vector plus the shape needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    spec: LayerSpec,
    values: Vec<f64>,
}

impl ModelParameters {
    pub fn new(spec: LayerSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters for spec {:?}, got {}",
                spec.param_count(),
                spec.sizes(),
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: LayerSpec) -> Self {
        let n = spec.param_count();
        Self { spec, values: vec![0.0; n] }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// L2 norm of the flat vector.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Offsets of (weights, biases) for each layer within the flat vector.
    fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.spec.layer_count());
        let mut off = 0;
        for w in self.spec.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            out.push((off, n_in, n_out, off + n_in * n_out));
            off += n_in * n_out + n_out;
        }
        out
    }
}

/// Training hyperparameters, defaults taken from the experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Argument("batch size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Argument("learning rate must be > 0".into()));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::Argument(format!("adam {name} must be in (0,1)")));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Result of one local training pass on an endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedUpdate {
    pub params: ModelParameters,
    pub sample_count: usize,
    pub final_loss: f64,
}

/// Deterministic fan-in-scaled uniform initialization (He/Kaiming limits, so
/// activation variance survives the Relu stack); biases start at zero.
pub fn init_model(spec: &LayerSpec, seed: u64) -> ModelParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let limit = (6.0 / n_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        for _ in 0..n_in * n_out {
            values.push(dist.sample(&mut rng));
        }
        // biases
        values.extend(std::iter::repeat(0.0).take(n_out));
    }
    ModelParameters { spec: spec.clone(), values }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass over a batch; hidden activations are Relu, the output is a
/// single sigmoid. Returns one score in (0,1) per input row.
pub fn forward(params: &ModelParameters, features: &Matrix) -> Result<Vec<f64>> {
    if features.cols() != params.spec.input_dim() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match input dim {}",
            features.cols(),
            params.spec.input_dim()
        )));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let offsets = params.layer_offsets();
    let last = offsets.len() - 1;
    let mut out = Vec::with_capacity(features.rows());
    let mut act = Vec::new();
    let mut next = Vec::new();
    for row in features.iter_rows() {
        act.clear();
        act.extend_from_slice(row);
        for (li, &(w_off, n_in, n_out, b_off)) in offsets.iter().enumerate() {
            next.clear();
            for o in 0..n_out {
                let w = &params.values[w_off + o * n_in..w_off + (o + 1) * n_in];
                let mut z = params.values[b_off + o];
                for (wi, ai) in w.iter().zip(act.iter()) {
                    z += wi * ai;
                }
                next.push(if li == last { sigmoid(z) } else { z.max(0.0) });
            }
            std::mem::swap(&mut act, &mut next);
        }
        out.push(act[0]);
    }
    Ok(out)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1-eps]`.
pub fn bce_loss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Argument("empty inputs to bce_loss".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Argument("prediction/label length mismatch".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in preds.iter().zip(labels.iter()) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / preds.len() as f64)
}

/// Analytic gradient of the mean BCE loss over a batch, in the same flat
/// layout as the parameters.
pub fn gradient(params: &ModelParameters, features: &Matrix, labels: &[u8]) -> Result<Vec<f64>> {
    if features.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::Shape("feature/label row count mismatch".into()));
    }
    if features.cols() != params.spec.input_dim() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match input dim {}",
            features.cols(),
            params.spec.input_dim()
        )));
    }
    let offsets = params.layer_offsets();
    let last = offsets.len() - 1;
    let n = features.rows() as f64;
    let mut grad = vec![0.0; params.values.len()];

    // per-row forward with cached post-activations, then backprop
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(offsets.len() + 1);
    for (row, &y) in features.iter_rows().zip(labels.iter()) {
        acts.clear();
        acts.push(row.to_vec());
        for (li, &(w_off, n_in, n_out, b_off)) in offsets.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut a = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let w = &params.values[w_off + o * n_in..w_off + (o + 1) * n_in];
                let mut z = params.values[b_off + o];
                for (wi, pi) in w.iter().zip(prev.iter()) {
                    z += wi * pi;
                }
                a.push(if li == last { sigmoid(z) } else { z.max(0.0) });
            }
            acts.push(a);
        }
        // sigmoid + BCE collapses to (p - y) at the output pre-activation
        let p = acts.last().unwrap()[0];
        let mut delta = vec![(p - y as f64) / n];
        for (li, &(w_off, n_in, n_out, b_off)) in offsets.iter().enumerate().rev() {
            let prev = &acts[li];
            for o in 0..n_out {
                let d = delta[o];
                grad[b_off + o] += d;
                let g = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (gi, pi) in g.iter_mut().zip(prev.iter()) {
                    *gi += d * pi;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let w = &params.values[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (pd, wi) in prev_delta.iter_mut().zip(w.iter()) {
                    *pd += d * wi;
                }
            }
            // Relu derivative of the previous hidden layer
            for (pd, a) in prev_delta.iter_mut().zip(prev.iter()) {
                if *a <= 0.0 {
                    *pd = 0.0;
                }
            }
            delta = prev_delta;
        }
    }
    Ok(grad)
}

/// Adam state; reset at the start of every local training pass.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], step: 0 }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], hp: &Hyperparameters) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - hp.adam_beta1.powf(t);
        let bc2 = 1.0 - hp.adam_beta2.powf(t);
        for i in 0..params.len() {
            self.m[i] = hp.adam_beta1 * self.m[i] + (1.0 - hp.adam_beta1) * grad[i];
            self.v[i] = hp.adam_beta2 * self.v[i] + (1.0 - hp.adam_beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.adam_epsilon);
        }
    }
}

/// Runs `epochs` of shuffled mini-batch Adam on the BCE loss, starting from
/// `start`. Deterministic given `hp.seed`.
pub fn train_local(
    start: &ModelParameters,
    features: &Matrix,
    labels: &[u8],
    hp: &Hyperparameters,
) -> Result<TrainedUpdate> {
    hp.validate()?;
    if features.rows() == 0 {
        return Err(Error::Data("empty training partition".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::Shape("feature/label row count mismatch".into()));
    }
    if features.cols() != start.spec.input_dim() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match input dim {}",
            features.cols(),
            start.spec.input_dim()
        )));
    }

    let mut params = start.clone();
    let mut adam = Adam::new(params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut indices: Vec<usize> = (0..features.rows()).collect();

    for epoch in 0..hp.epochs {
        indices.shuffle(&mut rng);
        for (batch_idx, chunk) in indices.chunks(hp.batch_size).enumerate() {
            let batch = features.select_rows(chunk);
            let batch_labels: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let grad = gradient(&params, &batch, &batch_labels)?;
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {epoch}, batch {batch_idx}"
                )));
            }
            adam.apply(&mut params.values, &grad, hp);
        }
    }

    let preds = forward(&params, features)?;
    let final_loss = bce_loss(&preds, labels)?;
    Ok(TrainedUpdate { params, sample_count: features.rows(), final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize) -> LayerSpec {
        LayerSpec::dff(d).unwrap()
    }

    #[test]
    fn param_count_matches_closed_form() {
        // hand loop over layers: sum of in*out + out
        let s = spec(39);
        let mut expected = 0;
        for w in s.sizes().windows(2) {
            expected += w[0] * w[1] + w[1];
        }
        assert_eq!(expected, 1985);
        assert_eq!(s.param_count(), 1985);
        assert_eq!(init_model(&s, 7).values().len(), 1985);
    }

    #[test]
    fn init_biases_are_zero() {
        let s = spec(1);
        let params = init_model(&s, 0);
        let mut off = 0;
        for w in s.sizes().windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            for i in 0..n_out {
                assert_eq!(params.values()[off + n_in * n_out + i], 0.0);
            }
            off += n_in * n_out + n_out;
        }
    }

    #[test]
    fn init_is_deterministic() {
        let s = spec(39);
        assert_eq!(init_model(&s, 7), init_model(&s, 7));
        assert_ne!(init_model(&s, 7), init_model(&s, 8));
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(LayerSpec::dff(0).is_err());
        assert!(LayerSpec::from_sizes(vec![4, 32, 16, 8, 2, 1]).is_err());
        assert!(LayerSpec::from_sizes(vec![4, 32, 16, 8, 4, 2]).is_err());
    }

    #[test]
    fn forward_zero_params_gives_half() {
        let s = spec(3);
        let params = ModelParameters::zeros(s);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0]]).unwrap();
        let out = forward(&params, &x).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_outputs_in_open_unit_interval() {
        let s = spec(5);
        let params = init_model(&s, 3);
        let x = Matrix::from_rows(&[vec![0.1, 0.9, 0.3, 0.0, 1.0]]).unwrap();
        let out = forward(&params, &x).unwrap();
        assert!(out[0] > 0.0 && out[0] < 1.0);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let s = spec(3);
        let params = ModelParameters::zeros(s);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(forward(&params, &x), Err(Error::Shape(_))));
    }

    /// Straight-line reference forward for a [1,32,16,8,4,1] net, independent
    /// of the layout bookkeeping in `forward`.
    fn reference_forward(params: &ModelParameters, x: f64) -> f64 {
        let sizes = params.spec().sizes().to_vec();
        let vals = params.values();
        let mut act = vec![x];
        let mut off = 0;
        for li in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[li], sizes[li + 1]);
            let mut next = Vec::new();
            for o in 0..n_out {
                let mut z = vals[off + n_in * n_out + o];
                for i in 0..n_in {
                    z += vals[off + o * n_in + i] * act[i];
                }
                if li == sizes.len() - 2 {
                    next.push(1.0 / (1.0 + (-z).exp()));
                } else {
                    next.push(if z > 0.0 { z } else { 0.0 });
                }
            }
            off += n_in * n_out + n_out;
            act = next;
        }
        act[0]
    }

    #[test]
    fn forward_matches_reference_computation() {
        let s = spec(1);
        let params = init_model(&s, 11);
        for &x in &[0.0, 0.3, -1.7, 2.5] {
            let got = forward(&params, &Matrix::from_rows(&[vec![x]]).unwrap()).unwrap()[0];
            let want = reference_forward(&params, x);
            assert!((got - want).abs() < 1e-10, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn forward_rows_are_independent() {
        let s = spec(2);
        let params = init_model(&s, 5);
        let rows = vec![vec![0.2, 0.8], vec![0.9, 0.1], vec![0.5, 0.5]];
        let batch = forward(&params, &Matrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(batch.len(), 3);
        for (i, r) in rows.iter().enumerate() {
            let single = forward(&params, &Matrix::from_rows(&[r.clone()]).unwrap()).unwrap();
            assert_eq!(batch[i], single[0]);
        }
    }

    #[test]
    fn bce_known_values() {
        // -ln(0.5)
        let l = bce_loss(&[0.5], &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        // perfect prediction limit
        assert!(bce_loss(&[1.0 - 1e-9], &[1]).unwrap() < 1e-6);
        // mean of -ln(0.9) twice = 0.10536...
        let l = bce_loss(&[0.9, 0.1], &[1, 0]).unwrap();
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-9);
        assert!(matches!(bce_loss(&[], &[]), Err(Error::Argument(_))));
    }

    /// Central finite differences of the mean BCE loss, step 1e-5.
    fn fd_gradient(params: &ModelParameters, x: &Matrix, y: &[u8], coords: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        coords
            .iter()
            .map(|&i| {
                let mut plus = params.clone();
                plus.values_mut()[i] += h;
                let mut minus = params.clone();
                minus.values_mut()[i] -= h;
                let lp = bce_loss(&forward(&plus, x).unwrap(), y).unwrap();
                let lm = bce_loss(&forward(&minus, x).unwrap(), y).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn output_bias_gradient_at_half() {
        // zero params, all-zero labels: p = 0.5, so d loss / d out-bias = 0.5
        let s = spec(2);
        let params = ModelParameters::zeros(s);
        let x = Matrix::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let grad = gradient(&params, &x, &[0]).unwrap();
        let out_bias_idx = params.values().len() - 1;
        assert!((grad[out_bias_idx] - 0.5).abs() < 1e-12);
        let fd = fd_gradient(&params, &x, &[0], &[out_bias_idx]);
        assert!((fd[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = spec(4);
        let params = init_model(&s, 1);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<u8> = (0..6).map(|_| rng.gen_range(0..2)).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let grad = gradient(&params, &x, &y).unwrap();
        let coords: Vec<usize> =
            (0..120).map(|_| rng.gen_range(0..params.values().len())).collect();
        let fd = fd_gradient(&params, &x, &y, &coords);
        for (&c, &f) in coords.iter().zip(fd.iter()) {
            let denom = f.abs().max(grad[c].abs()).max(1e-6);
            assert!(
                (grad[c] - f).abs() / denom < 1e-4,
                "coord {c}: analytic {} vs fd {f}",
                grad[c]
            );
        }
    }

    #[test]
    fn gradient_invariant_under_batch_duplication() {
        let s = spec(3);
        let params = init_model(&s, 2);
        let rows = vec![vec![0.1, 0.2, 0.3], vec![0.9, 0.8, 0.7]];
        let mut doubled = rows.clone();
        doubled.extend(rows.clone());
        let g1 = gradient(&params, &Matrix::from_rows(&rows).unwrap(), &[1, 0]).unwrap();
        let g2 = gradient(&params, &Matrix::from_rows(&doubled).unwrap(), &[1, 0, 1, 0]).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn separable_set(n_per_class: usize, seed: u64) -> (Matrix, Vec<u8>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n_per_class {
            rows.push(vec![rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)]);
            labels.push(0);
            rows.push(vec![rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0)]);
            labels.push(1);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let s = spec(2);
        let params = init_model(&s, 0);
        let (x, y) = separable_set(4, 0);
        let hp = Hyperparameters { epochs: 0, ..Default::default() };
        assert!(matches!(train_local(&params, &x, &y, &hp), Err(Error::Argument(_))));
    }

    #[test]
    fn train_rejects_empty_partition() {
        let s = spec(2);
        let params = init_model(&s, 0);
        let x = Matrix::zeros(0, 2);
        assert!(matches!(
            train_local(&params, &x, &[], &Hyperparameters::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn train_separates_linearly_separable_data() {
        let s = spec(2);
        let start = init_model(&s, 0);
        // enough rows that the default batch size yields a useful step count
        let (x, y) = separable_set(25_000, 9);
        let hp = Hyperparameters::default();
        let update = train_local(&start, &x, &y, &hp).unwrap();
        assert_eq!(update.sample_count, 50_000);
        assert!(update.final_loss < 0.1, "final loss {}", update.final_loss);
        assert!(update.params.is_finite());
        let preds = forward(&update.params, &x).unwrap();
        assert!(preds.iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn train_is_deterministic() {
        let s = spec(2);
        let start = init_model(&s, 0);
        let (x, y) = separable_set(50, 3);
        let hp = Hyperparameters { epochs: 2, ..Default::default() }.with_seed(17);
        let a = train_local(&start, &x, &y, &hp).unwrap();
        let b = train_local(&start, &x, &y, &hp).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.final_loss, b.final_loss);
    }
}
