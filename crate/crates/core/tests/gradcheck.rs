//! Whole-network gradients against central finite differences.

use ladderseg::grid::LabelMap;
use ladderseg::losses::total_loss;
use ladderseg::model::{Model, ModelConfig};
use ladderseg::trainer::compute_step;
use ladderseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

fn small_config() -> ModelConfig {
    ModelConfig {
        encoder_stage_widths: vec![4, 6, 8, 8, 8],
        dense_layers: 1,
        growth_rate: 2,
        decoder_width: 6,
        num_classes: 4,
        spp_grid: vec![1],
        spp_branch_width: 3,
        init_seed: 3,
    }
}

fn loss(model: &Model, images: &Tensor, labels: &[LabelMap]) -> f64 {
    let out = model.forward(images, true).unwrap();
    total_loss(&out, labels, 0.4, 255).unwrap().total
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = Model::new(small_config()).unwrap();
    let images = Tensor::from_fn([2, 3, 64, 64], |_| rng.random_range(0.0..1.0));
    let labels: Vec<LabelMap> = (0..2)
        .map(|_| LabelMap::from_fn(64, 64, |y, x| if (y / 16 + x / 16) % 5 == 4 { 255 } else { ((y / 8 + x / 16) % 4) as u8 }))
        .collect();
    let step = compute_step(&model, images.clone(), &labels, 0.4, 255).unwrap();

    let mut checked = 0;
    let mut worst: (f64, String) = (0.0, String::new());
    for index in 0..model.params().params.len() {
        let Some(grad) = step.grads.get(index).cloned() else { continue };
        let n = grad.len();
        for _ in 0..2 {
            let i = rng.random_range(0..n);
            let original = model.params().params[index].value.data()[i];
            model.params_mut().params[index].value.data_mut()[i] = original + STEP;
            let up = loss(&model, &images, &labels);
            model.params_mut().params[index].value.data_mut()[i] = original - STEP;
            let down = loss(&model, &images, &labels);
            model.params_mut().params[index].value.data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grad.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}]: analytic {analytic:e}, numeric {numeric:e}", model.params().params[index].name));
            }
            checked += 1;
        }
    }
    assert!(checked > 50, "only {checked} entries checked");
    assert!(worst.0 <= REL_TOL, "worst relative error {:.3e} at {}", worst.0, worst.1);
}
