//! Temporal-difference objectives. Both losses build one tape per batch
//! element, average over the batch and return the loss together with the
//! gradient of every online parameter.

use super::replay::Transition;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{argmax, column_means, Model, PolicyInput};
use crate::params::Binder;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grads: Vec<Tensor<T>>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(())
}

fn check_pair<T: Scalar>(online: &Model<T>, target: &Model<T>) -> Result<()> {
    if online.config() != target.config() {
        return Err(Error::Config("online and target networks differ in configuration".into()));
    }
    Ok(())
}

fn accumulate<T: Scalar>(acc: &mut [Tensor<T>], grads: Vec<Tensor<T>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y);
    }
}

fn zero_grads<T: Scalar>(model: &Model<T>) -> Vec<Tensor<T>> {
    model
        .params()
        .iter()
        .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
        .collect()
}

/// One-step bootstrap target `r + (1 − done)·γ·max_a' Q_target(s', a')`.
pub fn dqn_target<T: Scalar>(target: &Model<T>, t: &Transition, gamma: f64) -> Result<T> {
    let r = T::lit(t.reward as f64);
    if t.done {
        return Ok(r);
    }
    let next = target.forward_policy(&PolicyInput::from_bundle(&t.next_obs), false)?;
    let best = next.scores.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(r + T::lit(gamma) * best)
}

/// Mean squared error between `Q_online(s, a)` and the bootstrap target.
pub fn dqn_loss<T: Scalar>(batch: &[&Transition], online: &Model<T>, target: &Model<T>, gamma: f64) -> Result<LossOutput<T>> {
    check_gamma(gamma)?;
    check_pair(online, target)?;
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut grads = zero_grads(online);
    let mut total = T::zero();
    for t in batch {
        let y = dqn_target(target, t, gamma)?;
        let mut tape = Tape::new();
        let mut binder = Binder::new(online.params(), true);
        let g = online.graph(&mut tape, &mut binder, &PolicyInput::from_bundle(&t.obs), None)?;
        let q = tape.select_col(g.values, t.action)?;
        let y = tape.constant(Tensor::new(vec![1, 1], vec![y])?);
        let diff = tape.sub(q, y)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.scale(sq, scale)?;
        tape.backward(loss)?;
        total += tape.value(loss).data()[0];
        accumulate(&mut grads, binder.gradients(&tape));
    }
    Ok(LossOutput { loss: total, grads })
}

/// Quantile fractions drawn for one batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileDraw<T> {
    /// τ for the online prediction (N).
    pub online: Vec<T>,
    /// τ' for the bootstrap target (N').
    pub target: Vec<T>,
}

/// `|τ − 1{u < 0}| · L_κ(u) / κ`.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> f64 {
    let huber = if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    };
    (tau - if u < 0.0 { 1.0 } else { 0.0 }).abs() * huber / kappa
}

/// Target quantiles `r + (1 − done)·γ·Z_target(s', a*, τ'_j)` with
/// `a*` greedy on the target network's mean over τ'.
pub fn iqn_targets<T: Scalar>(target: &Model<T>, t: &Transition, gamma: f64, taus: &[T]) -> Result<Vec<T>> {
    let r = T::lit(t.reward as f64);
    if t.done {
        return Ok(vec![r; taus.len()]);
    }
    let mut tape = Tape::new();
    let mut binder = Binder::new(target.params(), false);
    let g = target.graph(&mut tape, &mut binder, &PolicyInput::from_bundle(&t.next_obs), Some(taus))?;
    let z = tape.value(g.values);
    let best = argmax(&column_means(z));
    Ok((0..taus.len()).map(|j| r + T::lit(gamma) * z.at(j, best)).collect())
}

/// Quantile-regression Huber loss averaged over all τ×τ' pairs and
/// over the batch.
pub fn iqn_quantile_huber_loss<T: Scalar>(
    batch: &[&Transition],
    online: &Model<T>,
    target: &Model<T>,
    gamma: f64,
    draws: &[QuantileDraw<T>],
    kappa: f64,
) -> Result<LossOutput<T>> {
    check_gamma(gamma)?;
    check_pair(online, target)?;
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::Contract("one quantile draw per batch element required".into()));
    }
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut grads = zero_grads(online);
    let mut total = T::zero();
    for (t, draw) in batch.iter().zip(draws) {
        let (n, n_t) = (draw.online.len(), draw.target.len());
        if n == 0 || n_t == 0 {
            return Err(Error::Contract("empty quantile set".into()));
        }
        let targets = iqn_targets(target, t, gamma, &draw.target)?;
        let mut tape = Tape::new();
        let mut binder = Binder::new(online.params(), true);
        let g = online.graph(&mut tape, &mut binder, &PolicyInput::from_bundle(&t.obs), Some(&draw.online))?;
        let z = tape.select_col(g.values, t.action)?;
        let ones = tape.constant(Tensor::full(vec![1, n_t], T::one()));
        let z_rep = tape.matmul(z, ones)?;
        let target_mat = tape.constant(Tensor::new(
            vec![n, n_t],
            (0..n).flat_map(|_| targets.iter().copied()).collect(),
        )?);
        let u = tape.sub(target_mat, z_rep)?;
        let weights: Vec<T> = tape
            .value(u)
            .data()
            .iter()
            .enumerate()
            .map(|(k, &uv)| {
                let tau = draw.online[k / n_t];
                let below = if uv < T::zero() { T::one() } else { T::zero() };
                (tau - below).abs()
            })
            .collect();
        let weights = tape.constant(Tensor::new(vec![n, n_t], weights)?);
        let h = tape.huber(u, T::lit(kappa))?;
        let rho = tape.mul(h, weights)?;
        let rho = tape.scale(rho, T::one() / T::lit(kappa))?;
        let mean = tape.mean(rho)?;
        let loss = tape.scale(mean, scale)?;
        tape.backward(loss)?;
        total += tape.value(loss).data()[0];
        accumulate(&mut grads, binder.gradients(&tape));
    }
    Ok(LossOutput { loss: total, grads })
}
