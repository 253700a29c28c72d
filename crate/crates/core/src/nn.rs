//! Dense feed-forward critic network with exact reverse-mode gradients.
//!
//! The network maps a batch of row vectors to a batch of scalar scores. Hidden
//! layers use ReLU, the output layer is the identity. Layer `l` stores a weight
//! matrix of shape `(size[l + 1], size[l])` and a bias of length `size[l + 1]`.
//!
//! Gradients are available with respect to the parameters ([`ParamGrads`]) and
//! the inputs, the latter being needed for pathwise design gradients.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Multi-layer perceptron with a scalar output.
#[derive(Debug)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    // Changes whenever parameters change; caches carry it to detect staleness.
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            version: fresh_version(),
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.weights == other.weights
            && self.biases == other.biases
    }
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "layer_sizes needs at least an input and an output entry, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "critic output size must be 1, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                dist.sample(&mut rng)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            version: fresh_version(),
        })
    }

    /// Builds a network from explicit tensors, validating every shape.
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_sizes.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer {l}: weight has {} columns, expected {}",
                    w.ncols(),
                    layer_sizes.last().unwrap()
                )));
            }
            if b.len() != w.nrows() {
                return Err(Error::Shape(format!(
                    "layer {l}: bias length {} does not match {} rows",
                    b.len(),
                    w.nrows()
                )));
            }
            layer_sizes.push(w.nrows());
        }
        validate_layer_sizes(&layer_sizes)?;
        if weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(biases.iter().flat_map(|b| b.iter()))
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            version: fresh_version(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Mutable access to parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        self.version = fresh_version();
        (&mut self.weights, &mut self.biases)
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Scores a batch (rows are samples). Returns scores and the cache needed
    /// by [`Mlp::backward`].
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_inputs(inputs)?;
        let mut activations = Vec::with_capacity(self.num_layers());
        let mut current = inputs.to_owned();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let mut z = current.dot(&self.weights[l].t());
            z += &self.biases[l];
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(current);
            current = z;
        }
        let scores = current.index_axis_move(Axis(1), 0);
        Ok((
            scores,
            ForwardCache {
                activations,
                version: self.version,
            },
        ))
    }

    /// Scores only; no cache is retained.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_inputs(inputs)?;
        let mut current = inputs.dot(&self.weights[0].t());
        current += &self.biases[0];
        for l in 1..self.num_layers() {
            current.mapv_inplace(|v| v.max(0.0));
            let mut z = current.dot(&self.weights[l].t());
            z += &self.biases[l];
            current = z;
        }
        Ok(current.index_axis_move(Axis(1), 0))
    }

    fn check_inputs(&self, inputs: ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input rows have {} features, network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        if let Some(bad) = inputs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite network input {bad}")));
        }
        Ok(())
    }

    /// Backpropagates `output_grads` (d loss / d score, one per row) through
    /// the pass recorded in `cache`.
    ///
    /// ReLU uses a zero subgradient at exactly zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grads: &[f64],
    ) -> Result<(ParamGrads, Array2<f64>)> {
        if cache.version != self.version || cache.activations.len() != self.num_layers() {
            return Err(Error::Contract(
                "forward cache does not belong to the current network parameters".into(),
            ));
        }
        let rows = cache.activations[0].nrows();
        if output_grads.len() != rows {
            return Err(Error::Contract(format!(
                "{} output gradients for a batch of {rows}",
                output_grads.len()
            )));
        }
        let mut delta = Array2::from_shape_vec((rows, 1), output_grads.to_vec())
            .expect("column vector shape");
        let mut grad_w = vec![Array2::zeros((0, 0)); self.num_layers()];
        let mut grad_b = vec![Array1::zeros(0); self.num_layers()];
        for l in (0..self.num_layers()).rev() {
            let a_in = &cache.activations[l];
            grad_w[l] = delta.t().dot(a_in);
            grad_b[l] = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&self.weights[l]);
            if l > 0 {
                // a_in = relu(z_{l-1}); a_in > 0 exactly where z > 0.
                Zip::from(&mut upstream)
                    .and(a_in)
                    .for_each(|g, &a| {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = upstream;
        }
        Ok((
            ParamGrads {
                weights: grad_w,
                biases: grad_b,
            },
            delta,
        ))
    }

    /// Writes the network as text: a header, the layer sizes, then each
    /// tensor row-major with shortest round-trip float formatting.
    pub fn write_text(&self, out: &mut String) {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let _ = write!(out, "w {} {}", w.nrows(), w.ncols());
            for v in w.iter() {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
            let _ = write!(out, "b {}", b.len());
            for v in b.iter() {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
    }

    fn read_text<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let (ln, layers) = next_line(lines, "layers")?;
        let sizes: Vec<usize> = parse_list(layers, ln)?;
        validate_layer_sizes(&sizes).map_err(|e| Error::CriticFormat(e.to_string()))?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for _ in 0..sizes.len() - 1 {
            let (ln, w_line) = next_line(lines, "w")?;
            let values: Vec<f64> = parse_list(w_line, ln)?;
            if values.len() < 2 {
                return Err(Error::CriticFormat(format!("line {ln}: truncated weight")));
            }
            let (r, c) = (values[0] as usize, values[1] as usize);
            let w = Array2::from_shape_vec((r, c), values[2..].to_vec()).map_err(|_| {
                Error::CriticFormat(format!("line {ln}: weight does not hold {r}x{c} values"))
            })?;
            let (ln, b_line) = next_line(lines, "b")?;
            let values: Vec<f64> = parse_list(b_line, ln)?;
            if values.is_empty() || values.len() - 1 != values[0] as usize {
                return Err(Error::CriticFormat(format!("line {ln}: bias length mismatch")));
            }
            weights.push(w);
            biases.push(Array1::from(values[1..].to_vec()));
        }
        let mlp =
            Mlp::from_parts(weights, biases).map_err(|e| Error::CriticFormat(e.to_string()))?;
        if mlp.layer_sizes != sizes {
            return Err(Error::CriticFormat(format!(
                "declared layers {sizes:?} but tensors describe {:?}",
                mlp.layer_sizes
            )));
        }
        Ok(mlp)
    }
}

fn next_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    tag: &str,
) -> Result<(usize, &'a str)> {
    let (ln, line) = lines
        .next()
        .ok_or_else(|| Error::CriticFormat(format!("unexpected end of file, expected `{tag}`")))?;
    let rest = line
        .strip_prefix(tag)
        .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some(r) } else { None }))
        .ok_or_else(|| Error::CriticFormat(format!("line {}: expected `{tag}`", ln + 1)))?;
    Ok((ln + 1, rest))
}

fn parse_list<T: std::str::FromStr>(s: &str, ln: usize) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::CriticFormat(format!("line {ln}: cannot parse `{tok}`")))
        })
        .collect()
}

/// Activations recorded by [`Mlp::forward`]: the input to every layer.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
    version: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Gradients mirroring the parameter shapes of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn matches(&self, mlp: &Mlp) -> bool {
        self.weights.len() == mlp.weights.len()
            && self
                .weights
                .iter()
                .zip(&mlp.weights)
                .all(|(g, w)| g.dim() == w.dim())
            && self
                .biases
                .iter()
                .zip(&mlp.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}

/// Adam optimizer moments and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(mlp: &Mlp) -> Self {
        let zeros = ParamGrads::zeros_like(mlp);
        Self {
            m_w: zeros.weights.clone(),
            v_w: zeros.weights,
            m_b: zeros.biases.clone(),
            v_b: zeros.biases,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update. With `maximize` the step ascends `grads`.
pub fn adam_step(
    mlp: &mut Mlp,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
    maximize: bool,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.matches(mlp) || state.m_w.len() != mlp.weights.len() {
        return Err(Error::Contract(
            "gradient or optimizer state shapes differ from the network".into(),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let sign = if maximize { 1.0 } else { -1.0 };
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p += sign * lr * m_hat / (v_hat.sqrt() + eps);
    };
    let (weights, biases) = mlp.params_mut();
    for l in 0..weights.len() {
        Zip::from(&mut weights[l])
            .and(&grads.weights[l])
            .and(&mut state.m_w[l])
            .and(&mut state.v_w[l])
            .for_each(|p, &g, m, v| update(p, g, m, v));
        Zip::from(&mut biases[l])
            .and(&grads.biases[l])
            .and(&mut state.m_b[l])
            .and(&mut state.v_b[l])
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

/// Per-feature affine standardization, fitted once and then frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and standard deviations of `rows`; degenerate columns
    /// keep unit scale.
    pub fn fit(rows: ArrayView2<'_, f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean: Vec<f64> = rows.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
        let scale = rows
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_inplace(&self, rows: &mut Array2<f64>) {
        for mut row in rows.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// The critic `T(θ, y)`: a frozen input standardization followed by an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub mlp: Mlp,
    pub scaler: InputScaler,
}

const CRITIC_HEADER: &str = "sagabed-critic 1";

impl Critic {
    pub fn new(mlp: Mlp, scaler: InputScaler) -> Result<Self> {
        if scaler.dim() != mlp.input_dim() {
            return Err(Error::Shape(format!(
                "scaler covers {} features, network expects {}",
                scaler.dim(),
                mlp.input_dim()
            )));
        }
        Ok(Self { mlp, scaler })
    }

    /// Standardized copy of raw inputs.
    pub fn prepare(&self, raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.scaler.dim() {
            return Err(Error::Shape(format!(
                "critic input has {} features, expected {}",
                raw.ncols(),
                self.scaler.dim()
            )));
        }
        let mut x = raw.to_owned();
        self.scaler.apply_inplace(&mut x);
        Ok(x)
    }

    pub fn score(&self, raw: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let x = self.prepare(raw)?;
        self.mlp.predict(x.view())
    }

    /// Converts gradients with respect to standardized inputs back to raw units.
    pub fn raw_input_grads(&self, mut grads: Array2<f64>) -> Array2<f64> {
        for mut row in grads.rows_mut() {
            for (g, s) in row.iter_mut().zip(&self.scaler.scale) {
                *g /= s;
            }
        }
        grads
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CRITIC_HEADER);
        out.push('\n');
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "scaler_mean {}", fmt(&self.scaler.mean));
        let _ = writeln!(out, "scaler_scale {}", fmt(&self.scaler.scale));
        self.mlp.write_text(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == CRITIC_HEADER => {}
            _ => return Err(Error::CriticFormat(format!("missing `{CRITIC_HEADER}` header"))),
        }
        let (ln, mean) = next_line(&mut lines, "scaler_mean")?;
        let mean: Vec<f64> = parse_list(mean, ln)?;
        let (ln, scale) = next_line(&mut lines, "scaler_scale")?;
        let scale: Vec<f64> = parse_list(scale, ln)?;
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mean.len() != scale.len() {
            return Err(Error::CriticFormat("invalid input scaler".into()));
        }
        let mlp = Mlp::read_text(&mut lines)?;
        if let Some((ln, _)) = lines.next() {
            return Err(Error::CriticFormat(format!("line {}: trailing content", ln + 1)));
        }
        Critic::new(mlp, InputScaler { mean, scale }).map_err(|e| Error::CriticFormat(e.to_string()))
    }
}
