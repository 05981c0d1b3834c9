//! Offline training: mini-batch SGD with per-parameter ADAGRAD scaling on
//! a mean binary cross-entropy loss (multi-label: several culprits may
//! co-occur).

use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SeerError};
use crate::predictor::model::{Hyperparams, Model};
use crate::trace::LabeledSample;

/// Mean binary cross-entropy of a batch (mean over samples and outputs).
pub fn batch_loss(model: &Model, inputs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let activations = model.forward_batch(inputs);
    bce_sum(activations.last().unwrap(), targets) / targets.len() as f64
}

fn bce_sum(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    Zip::from(p).and(y).for_each(|&p, &y| {
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    });
    sum
}

/// Backpropagated gradients of `batch_loss` with respect to every weight
/// and bias. Verified against central finite differences in the test
/// suite.
pub fn batch_gradients(
    model: &Model,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let activations = model.forward_batch(inputs);
    backward(model, &activations, targets)
}

fn backward(
    model: &Model,
    activations: &[Array2<f64>],
    targets: &Array2<f64>,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let layers = model.n_layers();
    let scale = 1.0 / targets.len() as f64;
    let mut grad_w = vec![Array2::zeros((0, 0)); layers];
    let mut grad_b = vec![Array1::zeros(0); layers];

    // d(loss)/d(logit) of the logistic + BCE head is (p - y).
    let mut dz = (activations[layers].clone() - targets) * scale;
    for l in (0..layers).rev() {
        grad_w[l] = activations[l].t().dot(&dz);
        grad_b[l] = dz.sum_axis(Axis(0));
        if l > 0 {
            let mut da = dz.dot(&model.weights[l].t());
            // ReLU gate: activations[l] is the post-ReLU output of layer l-1.
            Zip::from(&mut da).and(&activations[l]).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = da;
        }
    }
    (grad_w, grad_b)
}

fn adagrad_step(
    model: &mut Model,
    grad_w: &[Array2<f64>],
    grad_b: &[Array1<f64>],
    hyper: &Hyperparams,
) {
    let a = hyper.learning_rate;
    let eps = hyper.epsilon;
    for l in 0..model.n_layers() {
        Zip::from(&mut model.accum_w[l])
            .and(&grad_w[l])
            .for_each(|acc, &g| *acc += g * g);
        Zip::from(&mut model.weights[l])
            .and(&grad_w[l])
            .and(&model.accum_w[l])
            .for_each(|w, &g, &acc| *w -= a * g / (acc.sqrt() + eps));
        Zip::from(&mut model.accum_b[l])
            .and(&grad_b[l])
            .for_each(|acc, &g| *acc += g * g);
        Zip::from(&mut model.biases[l])
            .and(&grad_b[l])
            .and(&model.accum_b[l])
            .for_each(|b, &g, &acc| *b -= a * g / (acc.sqrt() + eps));
    }
}

fn stack_batch(dataset: &[LabeledSample], indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let n = dataset[indices[0]].input.len();
    let mut x = Array2::zeros((indices.len(), n));
    let mut y = Array2::zeros((indices.len(), n));
    for (row, &idx) in indices.iter().enumerate() {
        let sample = &dataset[idx];
        for (col, &v) in sample.input.iter().enumerate() {
            x[[row, col]] = v;
        }
        for (col, &lab) in sample.label.iter().enumerate() {
            y[[row, col]] = if lab { 1.0 } else { 0.0 };
        }
    }
    (x, y)
}

/// Train in place, returning the per-epoch loss curve. Violations are
/// rare, so each epoch oversamples positive snapshots (any true label)
/// up to the configured fraction before shuffling.
pub fn train(
    model: &mut Model,
    dataset: &[LabeledSample],
    hyper: &Hyperparams,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(SeerError::Model("training dataset is empty".into()));
    }
    let n = model.n_services();
    for sample in dataset {
        if sample.input.len() != n || sample.label.len() != n {
            return Err(SeerError::Model(format!(
                "sample at tick {} has inconsistent width (N={n})",
                sample.tick
            )));
        }
    }
    hyper.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(0x7ea1);
    let positives: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].label.iter().any(|&l| l))
        .collect();

    let mut curve = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut indices: Vec<usize> = (0..dataset.len()).collect();
        if !positives.is_empty() && hyper.oversample_fraction > 0.0 {
            let f = hyper.oversample_fraction;
            let deficit = f * dataset.len() as f64 - positives.len() as f64;
            if deficit > 0.0 {
                let extra = (deficit / (1.0 - f)).ceil() as usize;
                for _ in 0..extra {
                    indices.push(positives[rng.gen_range(0..positives.len())]);
                }
            }
        }
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut loss_terms = 0usize;
        for batch in indices.chunks(hyper.batch_size) {
            let (x, y) = stack_batch(dataset, batch);
            let activations = model.forward_batch(&x);
            loss_sum += bce_sum(activations.last().unwrap(), &y);
            loss_terms += y.len();
            let (gw, gb) = backward(model, &activations, &y);
            adagrad_step(model, &gw, &gb, hyper);
        }
        let epoch_loss = loss_sum / loss_terms as f64;
        if !epoch_loss.is_finite() {
            return Err(SeerError::TrainingDiverged {
                epoch,
                msg: format!("loss {epoch_loss}"),
            });
        }
        curve.push(epoch_loss);
    }
    Ok(curve)
}
