use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tl::{NetParams, TlExample, TlLosses, TlModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many parameter updates if set.
    pub max_steps: Option<usize>,
    pub w_z: f64,
    pub w_mesh: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            lr_decay: 0.99,
            weight_decay: 5e-5,
            batch_size: 16,
            epochs: 200,
            max_steps: None,
            w_z: 5.0,
            w_mesh: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Mean batch losses (dropout active) for every update.
    pub losses: Vec<TlLosses>,
    pub steps: usize,
}

/// Momentum gradient descent on the embedding loss with both decoder paths
/// supervised. Batches are visited in a seeded shuffle and their gradients
/// summed in example order.
pub fn train_toy(model: &TlModel, data: &[TlExample], init: &NetParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    model.check_params(init)?;
    let mut params = init.clone();
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = cfg.lr;
    let mut losses = Vec::new();
    let mut steps = 0;
    'outer: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break 'outer;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grad = params.zeros_like();
            let mut mean = TlLosses::default();
            for &i in batch {
                let l = model.example_loss(&params, &data[i], cfg.w_z, cfg.w_mesh, Some(&mut rng), Some((&mut grad, scale)))?;
                mean.z += l.z * scale;
                mean.mesh_gt += l.mesh_gt * scale;
                mean.mesh_pred += l.mesh_pred * scale;
                mean.total += l.total * scale;
            }
            if !mean.total.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at step {steps} (epoch {epoch}): z {}, mesh_gt {}, mesh_pred {}",
                    mean.z, mean.mesh_gt, mean.mesh_pred
                )));
            }
            if cfg.weight_decay != 0.0 {
                grad.add_scaled(&params, cfg.weight_decay);
            }
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&grad, 1.0);
            params.add_scaled(&velocity, -lr);
            losses.push(mean);
            steps += 1;
        }
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { params, losses, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::mesh::{uv_sphere, Part};
    use crate::meshnet::TlConfig;
    use crate::skeleton::{Frame, Pose3D};
    use alloc::vec;

    fn setup() -> (TlModel, Vec<TlExample>, NetParams) {
        let cfg = TlConfig {
            pose_in: 6,
            pose_hidden: 8,
            latent: 4,
            enc_channels: [3, 4, 4, 4],
            dec_channels: [4, 4, 3, 3, 3],
            spiral_len: 5,
            ds_factors: [2, 1, 1, 1],
            dropout: 0.0,
            ..TlConfig::default()
        };
        let m = uv_sphere(Vec3::zeros(), 0.3, 4, 6, Part::Head);
        let model = TlModel::new(cfg, &m).unwrap();
        let ex = TlExample {
            pose: Pose3D::new(vec![Vec3::zeros(), Vec3::new(0.1, 0.2, 0.0)], Frame::RootRelative),
            rest: m.vertices.clone(),
            posed: m.vertices.iter().map(|v| v * 1.3).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = model.init_params(&mut rng);
        (model, vec![ex], p)
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (model, data, p) = setup();
        let cfg = TrainConfig { lr: 0.0, weight_decay: 0.0, epochs: 3, ..Default::default() };
        let out = train_toy(&model, &data, &p, &cfg).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.steps, 3);
    }

    #[test]
    fn small_steps_descend() {
        let (model, data, p) = setup();
        let cfg = TrainConfig {
            lr: 1e-5,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 30,
            ..Default::default()
        };
        let out = train_toy(&model, &data, &p, &cfg).unwrap();
        let curve: Vec<f64> = out.losses.iter().map(|l| l.total).collect();
        assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{curve:?}");
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty() {
        let (model, data, p) = setup();
        let cfg = TrainConfig { epochs: 4, ..Default::default() };
        let a = train_toy(&model, &data, &p, &cfg).unwrap();
        let b = train_toy(&model, &data, &p, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(train_toy(&model, &[], &p, &cfg).is_err());
    }
}
