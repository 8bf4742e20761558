//! Finite-difference validation of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over every compared element.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Elements whose one-sided differences disagree (non-differentiable
    /// points such as ReLU at 0); excluded from the comparison.
    pub skipped_kinks: usize,
}

/// Compares the analytic gradient of `op` against central differences for
/// every element of every input.
///
/// The scalar loss is a fixed pseudo-random weighting of all outputs, which
/// keeps gradients non-degenerate for ops whose plain output sum is constant
/// (softmax, normalization).
pub fn gradient_check<F>(op: F, inputs: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(Error::NonFinite("gradient_check input".into()));
    }

    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    if !g.value(out).all_finite() {
        return Err(Error::NonFinite("gradient_check output".into()));
    }
    let mut wrng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let weights: Vec<f64> = (0..g.value(out).len()).map(|_| wrng.random_range(0.5..1.5)).collect();
    let loss = g.weighted_sum(out, weights.clone())?;
    let grads = g.backward(loss);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        let v: f64 = g.data(out).iter().zip(&weights).map(|(a, b)| a * b).sum();
        if !v.is_finite() {
            return Err(Error::NonFinite("gradient_check loss".into()));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let base = eval(&work)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        compared: 0,
        skipped_kinks: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let fwd = (plus - base) / epsilon;
            let bwd = (base - minus) / epsilon;
            if (fwd - bwd).abs() > 0.1 * fwd.abs().max(bwd.abs()) + 1e-4 {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.compared += 1;
        }
    }
    Ok(report)
}

/// One row of a gradient-check suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub op: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// Gradient checks of every layer op on small random instances, including
/// masked (padded) samples.
pub fn layer_suite(epsilon: f64) -> Result<Vec<SuiteRow>> {
    use super::{
        activation, batch_norm_1d, conv1d, depthwise_conv1d, dropout, eca, ffn, layer_norm, lstm_layer,
        masked_pool, mhsa, Activation, BatchNormStats, LstmWeights, MhsaWeights, Mode, PoolKind,
        SequenceMask,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let (b, len, ch) = (2, 4, 4);
    let mask = SequenceMask::from_lengths(&[4, 2], len)?;
    let x = rand_tensor(&mut rng, &[b, len, ch], 1.0);
    let mut rows = Vec::new();
    let mut run = |name: &str, op: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: Vec<Tensor<f64>>| -> Result<()> {
        let report = gradient_check(op, &inputs, epsilon)?;
        rows.push(SuiteRow {
            op: name.to_string(),
            report,
        });
        Ok(())
    };

    run(
        "dense",
        &|g, v| g.linear(v[0], v[1], Some(v[2])),
        vec![rand_tensor(&mut rng, &[3, 4], 1.0), rand_tensor(&mut rng, &[4, 5], 1.0), rand_tensor(&mut rng, &[5], 1.0)],
    )?;
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
        ("softmax", Activation::Softmax),
    ] {
        run(name, &|g, v| activation(g, v[0], kind), vec![rand_tensor(&mut rng, &[3, 5], 2.0)])?;
    }
    run(
        "layer_norm",
        &|g, v| layer_norm(g, v[0], v[1], v[2], 1e-5),
        vec![x.clone(), rand_tensor(&mut rng, &[ch], 1.5), rand_tensor(&mut rng, &[ch], 1.0)],
    )?;
    for (name, mode) in [("batch_norm_1d/train", Mode::Train), ("batch_norm_1d/infer", Mode::Infer)] {
        let running = BatchNormStats {
            mean: vec![0.1, -0.2, 0.3, 0.0],
            var: vec![1.5, 0.7, 1.0, 2.0],
        };
        let m = mask.clone();
        run(
            name,
            &move |g, v| Ok(batch_norm_1d(g, v[0], v[1], v[2], &running, &m, mode, 1e-3)?.0),
            vec![x.clone(), rand_tensor(&mut rng, &[ch], 1.5), rand_tensor(&mut rng, &[ch], 1.0)],
        )?;
    }
    let drop_seed = rng.random::<u64>();
    run(
        "dropout",
        &|g, v| dropout(g, v[0], 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(drop_seed)),
        vec![x.clone()],
    )?;
    {
        let m = mask.clone();
        run(
            "conv1d",
            &move |g, v| conv1d(g, v[0], v[1], Some(v[2]), &m),
            vec![x.clone(), rand_tensor(&mut rng, &[3, ch, 3], 1.0), rand_tensor(&mut rng, &[3], 1.0)],
        )?;
        let m = mask.clone();
        run(
            "depthwise_conv1d",
            &move |g, v| depthwise_conv1d(g, v[0], v[1], Some(v[2]), &m),
            vec![x.clone(), rand_tensor(&mut rng, &[5, ch], 1.0), rand_tensor(&mut rng, &[ch], 1.0)],
        )?;
        let m = mask.clone();
        run("masked_pool/avg", &move |g, v| masked_pool(g, v[0], &m, PoolKind::GlobalAvg), vec![x.clone()])?;
        let m = mask.clone();
        run("masked_pool/max", &move |g, v| masked_pool(g, v[0], &m, PoolKind::GlobalMax), vec![x.clone()])?;
        let m = mask.clone();
        run(
            "eca",
            &move |g, v| eca(g, v[0], v[1], &m),
            vec![x.clone(), rand_tensor(&mut rng, &[3], 1.0)],
        )?;
    }
    {
        let m = SequenceMask::from_lengths(&[3], 3)?;
        run(
            "mhsa",
            &move |g, v| {
                mhsa(
                    g,
                    v[0],
                    2,
                    MhsaWeights {
                        wq: v[1],
                        wk: v[2],
                        wv: v[3],
                        wo: v[4],
                    },
                    &m,
                )
            },
            vec![
                rand_tensor(&mut rng, &[1, 3, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
            ],
        )?;
        let m = mask.clone();
        run(
            "mhsa/masked",
            &move |g, v| {
                mhsa(
                    g,
                    v[0],
                    2,
                    MhsaWeights {
                        wq: v[1],
                        wk: v[2],
                        wv: v[3],
                        wo: v[4],
                    },
                    &m,
                )
            },
            vec![
                x.clone(),
                rand_tensor(&mut rng, &[4, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
                rand_tensor(&mut rng, &[4, 4], 1.0),
            ],
        )?;
    }
    run(
        "ffn",
        &|g, v| ffn(g, v[0], v[1], v[2], v[3], v[4], Activation::Tanh),
        vec![
            x.clone(),
            rand_tensor(&mut rng, &[ch, 6], 1.0),
            rand_tensor(&mut rng, &[6], 1.0),
            rand_tensor(&mut rng, &[6, ch], 1.0),
            rand_tensor(&mut rng, &[ch], 1.0),
        ],
    )?;
    {
        let m = mask.clone();
        let units = 3;
        run(
            "lstm_layer",
            &move |g, v| {
                lstm_layer(
                    g,
                    v[0],
                    LstmWeights {
                        input: v[1],
                        recurrent: v[2],
                        bias: v[3],
                    },
                    units,
                    &m,
                )
            },
            vec![
                x.clone(),
                rand_tensor(&mut rng, &[ch, 4 * units], 0.8),
                rand_tensor(&mut rng, &[units, 4 * units], 0.8),
                rand_tensor(&mut rng, &[4 * units], 0.5),
            ],
        )?;
    }
    let labels = [2usize, 0, 1];
    run(
        "cross_entropy",
        &move |g, v| g.cross_entropy(v[0], &labels),
        vec![rand_tensor(&mut rng, &[3, 4], 2.0)],
    )?;
    Ok(rows)
}
