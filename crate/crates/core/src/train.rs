//! Minibatch gradient plumbing shared by every trained model.

use log::debug;
use rand::seq::SliceRandom;
use tensorcore::{adam_step, AdamConfig, AdamState, Bindings, Graph, ParamSet, Var};

use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, Domain};

/// Items whose graphs are alive at once; bounds memory for large batches.
const CHUNK: usize = 8;

/// Mean loss and mean gradient over `items`.
///
/// Each item gets its own graph (built in parallel when enabled); gradients
/// are summed strictly in item order, so the result does not depend on the
/// execution mode.
pub fn mean_gradients<I, F>(
    params: &ParamSet,
    trainable: &(dyn Fn(&str) -> bool + Sync),
    items: &[I],
    loss_fn: F,
) -> Result<(f64, ParamSet)>
where
    I: Sync,
    F: Fn(&mut Graph, &Bindings, &I) -> Result<Var> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::contract("mean_gradients: empty batch"));
    }
    let mut total = 0.0f64;
    let mut sum: Option<ParamSet> = None;
    for chunk in items.chunks(CHUNK) {
        let results = par::map(chunk, |item| -> Result<(f64, ParamSet)> {
            let mut g = Graph::new();
            let b = g.bind(params, trainable);
            let loss = loss_fn(&mut g, &b, item)?;
            let value = g.value(loss).data()[0] as f64;
            g.backward(loss)?;
            Ok((value, g.param_grads(&b)))
        });
        for r in results {
            let (loss, grads) = r?;
            total += loss;
            match &mut sum {
                None => sum = Some(grads),
                Some(s) => s.add_scaled(&grads, 1.0)?,
            }
        }
    }
    let n = items.len() as f32;
    let mut grads = sum.expect("non-empty");
    for (_, t) in grads.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / items.len() as f64, grads))
}

/// Mean loss over `items` without gradients.
pub fn mean_loss<I, F>(params: &ParamSet, items: &[I], loss_fn: F) -> Result<f64>
where
    I: Sync,
    F: Fn(&mut Graph, &Bindings, &I) -> Result<Var> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::contract("mean_loss: empty set"));
    }
    let losses = par::map(items, |item| -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind(params, |_| false);
        let loss = loss_fn(&mut g, &b, item)?;
        Ok(g.value(loss).data()[0] as f64)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / items.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-item loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    /// Running minimum of the epoch losses.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.epoch_losses
            .iter()
            .scan(f64::INFINITY, |m, &l| {
                *m = m.min(l);
                Some(*m)
            })
            .collect()
    }
}

/// Shuffled minibatch Adam over item indices `0..n`.
pub fn fit<F>(
    params: &mut ParamSet,
    trainable: &(dyn Fn(&str) -> bool + Sync),
    n: usize,
    cfg: &FitConfig,
    tag: &str,
    loss_fn: F,
) -> Result<TrainLog>
where
    F: Fn(&mut Graph, &Bindings, usize) -> Result<Var> + Sync + Send,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::contract(format!("{tag}: no training items")));
    }
    let mut state = AdamState::for_params(params);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::stream(cfg.seed, Domain::Shuffle, epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = mean_gradients(params, trainable, batch, |g, b, &i| loss_fn(g, b, i))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            adam_step(params, &grads, &mut state, &cfg.adam)?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        let mean = total / n as f64;
        debug!("{tag} epoch {epoch}: loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensorcore::Tensor;

    fn quad(g: &mut Graph, b: &Bindings, &target: &f32) -> tensorcore::Result<Var> {
        let w = b.get("w")?;
        let t = g.constant(Tensor::from_vec(vec![target]));
        g.mse_loss(w, t)
    }

    #[test]
    fn mean_gradient_of_quadratic() {
        let params: ParamSet = [("w".to_string(), Tensor::from_vec(vec![1.0f32]))].into_iter().collect();
        let (loss, grads) = mean_gradients(&params, &|_| true, &[0.0f32, 2.0, 4.0], |g, b, t| Ok(quad(g, b, t)?)).unwrap();
        // d/dw (w - t)^2 averaged over t = 0, 2, 4 at w = 1
        assert!((loss - (1.0 + 1.0 + 9.0) / 3.0).abs() < 1e-6);
        assert!((grads.get("w").unwrap().data()[0] - (2.0 - 2.0 - 6.0) / 3.0).abs() < 1e-6);
    }

    #[test]
    fn fit_reduces_loss_and_is_mode_independent() {
        let run = || {
            let mut params: ParamSet = [("w".to_string(), Tensor::from_vec(vec![5.0f32]))].into_iter().collect();
            let cfg = FitConfig { epochs: 30, batch_size: 2, adam: AdamConfig { lr: 0.1, ..Default::default() }, seed: 1 };
            let targets = [1.0f32, 2.0, 3.0];
            let log = fit(&mut params, &|_| true, 3, &cfg, "quad", |g, b, i| Ok(quad(g, b, &targets[i])?)).unwrap();
            (params, log)
        };
        let prev = par::set_parallel(false);
        let (pa, la) = run();
        par::set_parallel(true);
        let (pb, lb) = run();
        par::set_parallel(prev);
        assert_eq!(pa, pb);
        assert_eq!(la, lb);
        assert!(la.epoch_losses.last().unwrap() < &la.epoch_losses[0]);
        assert!(la.best_so_far().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_epochs_leave_params_untouched() {
        let mut params: ParamSet = [("w".to_string(), Tensor::from_vec(vec![5.0f32]))].into_iter().collect();
        let before = params.clone();
        let cfg = FitConfig { epochs: 0, batch_size: 1, adam: AdamConfig::default(), seed: 0 };
        fit(&mut params, &|_| true, 1, &cfg, "noop", |g, b, _| Ok(quad(g, b, &0.0)?)).unwrap();
        assert_eq!(params, before);
    }
}
