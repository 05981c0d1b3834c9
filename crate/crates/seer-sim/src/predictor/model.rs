//! The violation-prediction network: one input and one output neuron per
//! active microservice, five hidden ReLU layers, logistic outputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SeerError};
use crate::trace::{MetricKind, NormalizationStats};

pub const MODEL_FILE_VERSION: &str = "# seer-sim model v1";

/// Scores are kept strictly inside (0, 1); also stabilizes the loss.
pub const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Hyperparams {
    /// Base learning rate (the ADAGRAD numerator).
    pub learning_rate: f64,
    /// ADAGRAD denominator stabilizer.
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_layers: usize,
    /// 0 selects the default width clamp(4N, 16, 256).
    pub hidden_width: usize,
    pub seed: u64,
    pub fire_threshold: f64,
    /// Positives are oversampled to this fraction of each epoch.
    pub oversample_fraction: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 30,
            hidden_layers: 5,
            hidden_width: 0,
            seed: 1,
            fire_threshold: 0.5,
            oversample_fraction: 0.25,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(SeerError::Config("learning rate must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(SeerError::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(SeerError::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.fire_threshold) || self.fire_threshold <= 0.0 {
            return Err(SeerError::Config(format!(
                "fire threshold {} outside (0, 1)",
                self.fire_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.oversample_fraction) {
            return Err(SeerError::Config("oversample fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn width_for(&self, n_services: usize) -> usize {
        if self.hidden_width > 0 {
            self.hidden_width
        } else {
            (4 * n_services).clamp(16, 256)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layer_dims: Vec<usize>,
    /// weights[l] has shape (layer_dims[l], layer_dims[l+1]).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// ADAGRAD accumulated squared gradients, same shapes as the parameters.
    pub accum_w: Vec<Array2<f64>>,
    pub accum_b: Vec<Array1<f64>>,
    pub input_metric: MetricKind,
    pub norm: NormalizationStats,
    pub horizon: u64,
}

pub fn logistic(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

impl Model {
    /// Fresh model: Glorot-uniform weights from the seeded generator,
    /// zero biases, zero accumulators. Featurization metadata starts as
    /// the identity and is attached during training.
    pub fn init(n_services: usize, hyper: &Hyperparams) -> Result<Model> {
        if n_services == 0 {
            return Err(SeerError::Model("need at least one microservice".into()));
        }
        hyper.validate()?;
        let width = hyper.width_for(n_services);
        let mut layer_dims = vec![n_services];
        layer_dims.extend(std::iter::repeat(width).take(hyper.hidden_layers));
        layer_dims.push(n_services);

        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut accum_w = Vec::new();
        let mut accum_b = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((fan_in, fan_out));
            for i in 0..fan_in {
                for j in 0..fan_out {
                    w[[i, j]] = rng.gen_range(-bound..bound);
                }
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
            accum_w.push(Array2::zeros((fan_in, fan_out)));
            accum_b.push(Array1::zeros(fan_out));
        }

        Ok(Model {
            layer_dims,
            weights,
            biases,
            accum_w,
            accum_b,
            input_metric: MetricKind::QueueDepth,
            norm: NormalizationStats {
                kind: MetricKind::QueueDepth,
                mean: vec![0.0; n_services],
                std: vec![1.0; n_services],
            },
            horizon: 50,
        })
    }

    pub fn n_services(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Pure single-snapshot forward pass: ReLU hidden layers, logistic
    /// outputs strictly inside (0, 1).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_services() {
            return Err(SeerError::Model(format!(
                "input length {} does not match N={}",
                input.len(),
                self.n_services()
            )));
        }
        let mut act = Array1::from_vec(input.to_vec());
        let last = self.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = act.dot(w) + b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                z.mapv_inplace(logistic);
            }
            act = z;
        }
        Ok(act.to_vec())
    }

    /// Batch forward returning all post-activation layers; row per sample.
    /// Used by training and the gradient checks.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut activations = Vec::with_capacity(self.n_layers() + 1);
        activations.push(inputs.clone());
        let last = self.n_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations.last().unwrap().dot(w) + b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                z.mapv_inplace(logistic);
            }
            activations.push(z);
        }
        activations
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| SeerError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "{MODEL_FILE_VERSION}")?;
            writeln!(w, "metric {}", self.input_metric.name())?;
            writeln!(w, "horizon {}", self.horizon)?;
            write!(w, "dims")?;
            for d in &self.layer_dims {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            write_vec(&mut w, "norm_mean", &self.norm.mean)?;
            write_vec(&mut w, "norm_std", &self.norm.std)?;
            for l in 0..self.n_layers() {
                writeln!(w, "layer {l}")?;
                write_matrix(&mut w, &self.weights[l])?;
                write_vec(&mut w, "bias", self.biases[l].as_slice().unwrap())?;
                write_matrix(&mut w, &self.accum_w[l])?;
                write_vec(&mut w, "accum_bias", self.accum_b[l].as_slice().unwrap())?;
            }
            w.flush()
        };
        emit().map_err(|e| SeerError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file = File::open(path).map_err(|e| SeerError::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| SeerError::Model("model file truncated".into()))?
                .map_err(|e| SeerError::io(path, e))
        };

        let version = next_line()?;
        if version != MODEL_FILE_VERSION {
            return Err(SeerError::Model(format!(
                "version mismatch: expected `{MODEL_FILE_VERSION}`, found `{version}`"
            )));
        }
        let metric_line = next_line()?;
        let metric = MetricKind::parse(
            metric_line
                .strip_prefix("metric ")
                .ok_or_else(|| SeerError::Model("missing metric line".into()))?,
        )?;
        let horizon_line = next_line()?;
        let horizon: u64 = horizon_line
            .strip_prefix("horizon ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SeerError::Model("missing or invalid horizon line".into()))?;
        let dims_line = next_line()?;
        let layer_dims: Vec<usize> = dims_line
            .strip_prefix("dims")
            .ok_or_else(|| SeerError::Model("missing dims line".into()))?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| SeerError::Model("invalid dims line".into()))?;
        if layer_dims.len() < 2 || layer_dims[0] != layer_dims[layer_dims.len() - 1] {
            return Err(SeerError::Model("dims must start and end with N".into()));
        }
        let n = layer_dims[0];
        let mean = read_vec(&mut next_line, "norm_mean", n)?;
        let std = read_vec(&mut next_line, "norm_std", n)?;

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut accum_w = Vec::new();
        let mut accum_b = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let header = next_line()?;
            if header != format!("layer {l}") {
                return Err(SeerError::Model(format!(
                    "shape corruption: expected `layer {l}`, found `{header}`"
                )));
            }
            let (rows, cols) = (layer_dims[l], layer_dims[l + 1]);
            weights.push(read_matrix(&mut next_line, rows, cols)?);
            biases.push(Array1::from_vec(read_vec(&mut next_line, "bias", cols)?));
            accum_w.push(read_matrix(&mut next_line, rows, cols)?);
            accum_b.push(Array1::from_vec(read_vec(&mut next_line, "accum_bias", cols)?));
        }

        Ok(Model {
            layer_dims,
            weights,
            biases,
            accum_w,
            accum_b,
            input_metric: metric,
            norm: NormalizationStats { kind: metric, mean, std },
            horizon,
        })
    }
}

fn write_vec<W: Write>(w: &mut W, tag: &str, values: &[f64]) -> std::io::Result<()> {
    write!(w, "{tag}")?;
    for v in values {
        write!(w, " {v}")?;
    }
    writeln!(w)
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    writeln!(w, "matrix {} {}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if first {
                write!(w, "{v}")?;
                first = false;
            } else {
                write!(w, " {v}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_vec(
    next_line: &mut impl FnMut() -> Result<String>,
    tag: &str,
    len: usize,
) -> Result<Vec<f64>> {
    let line = next_line()?;
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| SeerError::Model(format!("expected `{tag}` line")))?;
    let values: Vec<f64> = rest
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| SeerError::Model(format!("invalid value in `{tag}`")))?;
    if values.len() != len {
        return Err(SeerError::Model(format!(
            "shape corruption: `{tag}` has {} values, expected {len}",
            values.len()
        )));
    }
    Ok(values)
}

fn read_matrix(
    next_line: &mut impl FnMut() -> Result<String>,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>> {
    let header = next_line()?;
    if header != format!("matrix {rows} {cols}") {
        return Err(SeerError::Model(format!(
            "shape corruption: expected `matrix {rows} {cols}`, found `{header}`"
        )));
    }
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        let line = next_line()?;
        let mut count = 0;
        for (j, tok) in line.split_whitespace().enumerate() {
            if j >= cols {
                return Err(SeerError::Model("shape corruption: row too long".into()));
            }
            m[[i, j]] = tok
                .parse::<f64>()
                .map_err(|_| SeerError::Model("invalid weight value".into()))?;
            count += 1;
        }
        if count != cols {
            return Err(SeerError::Model(format!(
                "shape corruption: row has {count} values, expected {cols}"
            )));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let hyper = Hyperparams { seed: 99, ..Default::default() };
        let a = Model::init(3, &hyper).unwrap();
        let b = Model::init(3, &hyper).unwrap();
        assert_eq!(a.layer_dims, vec![3, 16, 16, 16, 16, 16, 3]);
        for l in 0..a.n_layers() {
            assert_eq!(a.weights[l], b.weights[l]);
            assert!(a.biases[l].iter().all(|&v| v == 0.0));
            assert!(a.accum_w[l].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_service_dims() {
        let m = Model::init(1, &Hyperparams::default()).unwrap();
        assert_eq!(m.layer_dims.first(), Some(&1));
        assert_eq!(m.layer_dims.last(), Some(&1));
        assert_eq!(m.layer_dims.len(), 7);
    }

    #[test]
    fn zero_weights_give_half_scores() {
        let mut m = Model::init(4, &Hyperparams::default()).unwrap();
        for w in &mut m.weights {
            w.fill(0.0);
        }
        let out = m.forward(&[0.3, -1.0, 2.0, 0.0]).unwrap();
        assert!(out.iter().all(|&p| (p - 0.5).abs() < 1e-15), "{out:?}");
    }

    #[test]
    fn hand_computed_1_2_1_network() {
        // x=2, W1=[[0.5, -0.25]], b1=[0.1, -0.2], ReLU
        // h = (relu(1.1), relu(-0.7)) = (1.1, 0)
        // W2=[[0.3], [0.7]], b2=[0.05] -> z = 1.1*0.3 + 0.05 = 0.38
        // p = 1 / (1 + e^-0.38)
        let mut m = Model::init(1, &Hyperparams { hidden_layers: 1, hidden_width: 2, ..Default::default() })
            .unwrap();
        m.weights[0] = ndarray::arr2(&[[0.5, -0.25]]);
        m.biases[0] = ndarray::arr1(&[0.1, -0.2]);
        m.weights[1] = ndarray::arr2(&[[0.3], [0.7]]);
        m.biases[1] = ndarray::arr1(&[0.05]);
        let out = m.forward(&[2.0]).unwrap();
        let expected = 1.0 / (1.0 + (-0.38f64).exp());
        assert!((out[0] - expected).abs() < 1e-15, "{} vs {expected}", out[0]);
    }

    #[test]
    fn forward_is_pure_and_in_open_unit_interval() {
        let m = Model::init(5, &Hyperparams { seed: 3, ..Default::default() }).unwrap();
        let input = vec![1.5, -0.5, 0.0, 3.0, -2.0];
        let a = m.forward(&input).unwrap();
        let b = m.forward(&input).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let m = Model::init(3, &Hyperparams::default()).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(SeerError::Model(_))));
    }

    #[test]
    fn save_load_roundtrip_reproduces_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let mut m = Model::init(4, &Hyperparams { seed: 12, ..Default::default() }).unwrap();
        m.norm.mean = vec![1.0, 2.0, 3.0, 4.0];
        m.norm.std = vec![0.5, 0.25, 1.0, 2.0];
        m.horizon = 42;
        m.input_metric = MetricKind::LatencyRate;
        m.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        let input = vec![0.7, -1.3, 2.9, 0.01];
        let a = m.forward(&input).unwrap();
        let b = loaded.forward(&input).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(loaded.horizon, 42);
        assert_eq!(loaded.input_metric, MetricKind::LatencyRate);
    }

    #[test]
    fn truncated_model_file_is_corruption_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let m = Model::init(3, &Hyperparams::default()).unwrap();
        m.save(&path).unwrap();
        let contents = std::fs::read_to_string(&path).unwrap();
        let truncated: String = contents.lines().take(10).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(Model::load(&path), Err(SeerError::Model(_))));
    }
}
