//! WebAssembly bindings for the static demo page in `www/`.

use signseq::data::{synth_generate, SynthConfig};
use signseq::training::optim::rectification;
use signseq::training::{lr_schedule, DecayType, Schedule};
use wasm_bindgen::prelude::*;

fn js_err(e: signseq::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Learning rate at every step `0..=steps` for `decay` ("cosine" or
/// "onecycle").
#[wasm_bindgen]
pub fn lr_curve(decay: &str, lr_start: f64, lr_min: f64, steps: usize) -> Result<Vec<f64>, JsValue> {
    let s = Schedule {
        decay: decay.parse::<DecayType>().map_err(js_err)?,
        lr_start,
        lr_min,
    };
    (0..=steps).map(|t| lr_schedule(t, steps, &s).map_err(js_err)).collect()
}

/// One synthetic sample as a row-major `frames x features` array.
#[wasm_bindgen]
pub fn synth_sample(
    class: usize,
    sample: usize,
    classes: usize,
    frames: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<f32>, JsValue> {
    if class >= classes {
        return Err(JsValue::from_str("class index out of range"));
    }
    let ds = synth_generate(&SynthConfig {
        num_classes: classes,
        samples_per_class: sample + 1,
        frames,
        features,
        seed,
        noise_sigma: noise,
        ..SynthConfig::default()
    })
    .map_err(js_err)?;
    ds.samples
        .iter()
        .filter(|s| s.label == class)
        .nth(sample)
        .map(|s| s.values.clone())
        .ok_or_else(|| JsValue::from_str("sample not generated"))
}

/// RAdam variance rectification factor for steps `1..=steps`; 0 marks the
/// steps that fall back to the unadapted momentum update.
#[wasm_bindgen]
pub fn rectification_trace(beta2: f64, steps: u32) -> Vec<f64> {
    (1..=u64::from(steps)).map(|t| rectification(t, beta2).unwrap_or(0.0)).collect()
}
