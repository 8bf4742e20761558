//! Loss, optimizers, schedules, weight averaging, checkpoints and the fit
//! loop.

pub mod checkpoint;
pub mod config;
pub mod fit;
pub mod optim;
pub mod schedule;

pub use checkpoint::{load_checkpoint, load_into, save_checkpoint, Checkpoint};
pub use config::{EarlyStopPolicy, TrainConfig};
pub use fit::{early_stop_check, fit, fit_with, loss_and_accuracy, train_step, Decision, FitOutcome, StopReason, TrainLogRow};
pub use optim::{radam_step, Lookahead, OptimizerState, RadamConfig, SwaState};
pub use schedule::{lr_schedule, DecayType, Schedule};

use crate::autograd::Graph;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Mean `-ln softmax(logits)[label]` over the batch, from `[batch, classes]`
/// logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::inference();
    let x = g.constant(logits.clone());
    let l = g.cross_entropy(x, labels)?;
    Ok(g.data(l)[0].as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rng::stream;
    use rand::Rng;

    #[test]
    fn cross_entropy_examples() {
        let confident = Tensor::<f64>::from_f64(&[1, 3], &[0.0, 800.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&confident, &[1]).unwrap(), 0.0);
        let uniform = Tensor::<f64>::zeros(&[2, 50]);
        assert!((cross_entropy(&uniform, &[0, 49]).unwrap() - 50f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&uniform, &[50, 0]).is_err());

        let mut rng = stream(4, "ce");
        let z: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels = [2, 0, 1, 1];
        let mut want = 0.0;
        for (row, &l) in z.chunks(3).zip(&labels) {
            let p = row[l].exp() / row.iter().map(|v| v.exp()).sum::<f64>();
            want -= p.ln() / 4.0;
        }
        let got = cross_entropy(&Tensor::new(&[4, 3], z).unwrap(), &labels).unwrap();
        assert!((got - want).abs() < 1e-6);
    }
}
