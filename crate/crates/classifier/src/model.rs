//! A network plus its weights, bound to one classification task.

use dwiqa_core::dataset::TaskSpec;
use dwiqa_core::types::{TARGET_COLS, TARGET_ROWS};
use dwiqa_core::Plane;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Network};
use crate::loss::{argmax, cross_entropy, softmax};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: Network,
    pub task: TaskSpec,
    pub params: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f32>,
    /// Argmax class; ties resolve to the lower index.
    pub class: usize,
}

impl Model {
    /// Freshly initialised model for `128 x 160` slices.
    pub fn new(spec: &ArchSpec, task: TaskSpec, seed: u64) -> Result<Self> {
        Self::with_input(spec, task, TARGET_ROWS, TARGET_COLS, seed)
    }

    pub fn with_input(spec: &ArchSpec, task: TaskSpec, rows: usize, cols: usize, seed: u64) -> Result<Self> {
        let net = Network::build(spec, task.class_count(), rows, cols)?;
        let params = net.init_params(seed);
        Ok(Self { net, task, params })
    }

    pub fn from_params(spec: &ArchSpec, task: TaskSpec, rows: usize, cols: usize, params: Vec<f32>) -> Result<Self> {
        let net = Network::build(spec, task.class_count(), rows, cols)?;
        if params.len() != net.param_count() {
            return Err(Error::Shape(format!(
                "{} weights for a network with {} parameters",
                params.len(),
                net.param_count()
            )));
        }
        Ok(Self { net, task, params })
    }

    /// `(rows, cols)` of accepted images.
    pub fn input_size(&self) -> (usize, usize) {
        let s = self.net.graph.input_shape();
        (s.h, s.w)
    }

    pub fn check_input(&self, image: &Plane<f32>) -> Result<()> {
        let (rows, cols) = self.input_size();
        if (image.height, image.width) != (rows, cols) {
            return Err(Error::Shape(format!(
                "image is {}x{}, model expects {rows}x{cols}",
                image.height, image.width
            )));
        }
        Ok(())
    }

    pub fn logits(&self, image: &Plane<f32>) -> Result<Vec<f32>> {
        self.check_input(image)?;
        Ok(self.net.graph.forward(&self.params, &image.data).output().to_vec())
    }

    /// Logits for a batch; each row depends only on its own image.
    pub fn forward_batch(&self, batch: &[Plane<f32>]) -> Result<Vec<Vec<f32>>> {
        batch.par_iter().map(|img| self.logits(img)).collect()
    }

    pub fn predict(&self, batch: &[Plane<f32>]) -> Result<Vec<Prediction>> {
        Ok(self
            .forward_batch(batch)?
            .into_iter()
            .map(|z| {
                let probs = softmax(&z);
                Prediction {
                    class: argmax(&probs),
                    probs,
                }
            })
            .collect())
    }

    /// Cross-entropy of one sample; its parameter gradient is added to `grad`.
    pub fn loss_and_grad(&self, image: &Plane<f32>, target: usize, grad: &mut [f32]) -> Result<f32> {
        self.check_input(image)?;
        let g = &self.net.graph;
        let tape = g.forward(&self.params, &image.data);
        let (loss, dlogits) = cross_entropy(tape.output(), target)?;
        g.backward(&self.params, &tape, &dlogits, grad);
        Ok(loss)
    }

    pub fn loss(&self, image: &Plane<f32>, target: usize) -> Result<f32> {
        Ok(cross_entropy(&self.logits(image)?, target)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Family;
    use dwiqa_core::dataset::TaskMode;
    use dwiqa_core::Artifact;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn task() -> TaskSpec {
        TaskSpec::new(Artifact::Hyper, TaskMode::Binary)
    }

    fn random_image(rows: usize, cols: usize, seed: u64) -> Plane<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::new(cols, rows, (0..rows * cols).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = ArchSpec::new(Family::MiniDense);
        let mut m = Model::with_input(&spec, task(), 64, 64, 0).unwrap();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(m.logits(&random_image(64, 64, 1)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn batch_rows_are_independent() {
        for family in [Family::MiniDense, Family::MiniRes, Family::MiniSe] {
            let m = Model::with_input(&ArchSpec::new(family), task(), 64, 80, 3).unwrap();
            let batch: Vec<Plane<f32>> = (0..8).map(|s| random_image(64, 80, s)).collect();
            let all = m.forward_batch(&batch).unwrap();
            assert_eq!(all.len(), 8);
            assert!(all.iter().flatten().all(|v| v.is_finite()));
            assert_eq!(m.forward_batch(&batch[5..6]).unwrap()[0], all[5]);
        }
    }

    #[test]
    fn predictions_are_deterministic_and_shaped() {
        let t5 = TaskSpec::new(Artifact::Hypo, TaskMode::Multiclass);
        let m = Model::with_input(&ArchSpec::new(Family::MiniRes), t5, 64, 64, 4).unwrap();
        let img = random_image(64, 64, 9);
        let p = m.predict(&[img.clone(), img]).unwrap();
        assert_eq!(p[0], p[1]);
        assert_eq!(p[0].probs.len(), 5);
        assert!(m.logits(&random_image(32, 64, 0)).is_err());
    }
}
