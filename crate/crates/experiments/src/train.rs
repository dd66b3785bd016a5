use gnh_core::mlp::{forward, loss_and_gradient, mean_loss, Batch, MlpNetwork};
use gnh_core::GnhError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct WarmupOutcome {
    pub net: MlpNetwork<f64>,
    pub steps: usize,
    /// Full-batch loss before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mini-batch loss seen at each step.
    pub step_losses: Vec<f64>,
    pub warning: Option<String>,
}

pub fn full_loss(net: &MlpNetwork<f64>, batch: &Batch<f64>) -> gnh_core::Result<f64> {
    let trace = forward(net, batch)?;
    Ok(mean_loss(net, &trace, batch))
}

/// Plain SGD on the mean loss.
///
/// Mini-batches walk through a seeded shuffle of the points, reshuffled every
/// epoch; a batch size of at least `n` takes full gradient steps in the
/// original order.
pub fn warmup_train(
    net: &MlpNetwork<f64>,
    batch: &Batch<f64>,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> gnh_core::Result<WarmupOutcome> {
    let n = batch.len();
    let bs = batch_size.clamp(1, n);
    let initial_loss = full_loss(net, batch)?;
    if !initial_loss.is_finite() {
        return Err(GnhError::Training(format!(
            "initial loss is {initial_loss}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n;
    let mut cur = net.clone();
    let mut w = net.weights_flat();
    let mut step_losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, g) = if bs == n {
            loss_and_gradient(&cur, batch)?
        } else {
            if pos + bs > n {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let sub = batch.subset(&order[pos..pos + bs])?;
            pos += bs;
            loss_and_gradient(&cur, &sub)?
        };
        if !loss.is_finite() {
            return Err(GnhError::Training(format!("loss is {loss} at step {step}")));
        }
        for (wi, gi) in w.iter_mut().zip(g.flatten()) {
            *wi -= lr * gi;
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(GnhError::Training(format!(
                "weights became non-finite at step {step}"
            )));
        }
        cur.set_weights_flat(&w)?;
        step_losses.push(loss);
    }
    let final_loss = full_loss(&cur, batch)?;
    if !final_loss.is_finite() {
        return Err(GnhError::Training(format!("final loss is {final_loss}")));
    }
    let warning = (final_loss > initial_loss)
        .then(|| format!("loss rose from {initial_loss} to {final_loss} over {steps} steps"));
    Ok(WarmupOutcome {
        net: cur,
        steps,
        initial_loss,
        final_loss,
        step_losses,
        warning,
    })
}
