//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`Demo`] holds one small model (three beliefs, three steps, a synthetic
//! embedding table and planted parameters). The page calls it to recompute
//! Gibbs marginals from slider values, attention maps for chosen marginals,
//! and belief trajectories for a chosen observation sequence. Results cross
//! the boundary as JSON strings.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use beliefgraph::action_model::action_log_probs_with_attention;
use beliefgraph::belief_graph::{GibbsDistribution, TransitionPotentials};
use beliefgraph::embeddings::{synth_table, EmbeddingTable};
use beliefgraph::harness::{random_planted_params, PlantedSpec};
use beliefgraph::trainer::{rollout, ParamSet, RolloutOptions};
use beliefgraph::{BeliefMarginals, ModelConfig};

const K: usize = 3;
const STEPS: usize = 3;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    cfg: ModelConfig,
    table: EmbeddingTable,
    params: ParamSet,
}

#[wasm_bindgen]
impl Demo {
    /// Draws the embedding table and planted parameters from `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, strength: f64) -> Result<Demo, JsError> {
        let cfg = ModelConfig::with_survey_masks(K, STEPS, 16, 8);
        let mut spec = PlantedSpec::new(cfg.clone(), 1, u64::from(seed));
        spec.strength = strength;
        let vocab = spec.vocab();
        let table = synth_table(&cfg, &vocab, spec.seed);
        let params = random_planted_params(&cfg, &table, &vocab, strength, spec.seed).map_err(js_err)?;
        Ok(Demo { cfg, table, params })
    }

    pub fn beliefs(&self) -> usize {
        self.cfg.k
    }

    /// Joint distribution and marginals for hand-set potentials.
    /// `upper` lists `ψ_ij` for `i < j` in lexicographic order.
    pub fn gibbs(&self, unary: Vec<f64>, upper: Vec<f64>) -> Result<String, JsError> {
        let pot = TransitionPotentials::from_upper(unary, &upper).map_err(js_err)?;
        let mut cfg = self.cfg.clone();
        cfg.k = pot.k();
        let g = GibbsDistribution::new(&pot, &cfg).map_err(js_err)?;
        Ok(json!({
            "probs": g.probs(),
            "marginals": g.marginals().as_slice(),
            "log_partition": g.log_partition(),
        })
        .to_string())
    }

    /// Action probabilities and per-action attention at step `t` for the
    /// given belief marginals.
    pub fn attention(&self, marginals: Vec<f64>, t: usize) -> Result<String, JsError> {
        let m = BeliefMarginals::new(marginals).map_err(js_err)?;
        let (lp, att) =
            action_log_probs_with_attention(&m, t, &self.table, &self.params.attention, &self.cfg).map_err(js_err)?;
        let mask = self.cfg.mask(t).map_err(js_err)?;
        let maps: Vec<Value> = att
            .iter()
            .map(|a| {
                let rows: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
                json!(rows)
            })
            .collect();
        Ok(json!({
            "actions": mask,
            "probs": lp.iter().map(|v| v.exp()).collect::<Vec<f64>>(),
            "attention": maps,
        })
        .to_string())
    }

    /// Prior marginals and argmax actions along an observation sequence.
    pub fn rollout(&self, observations: Vec<u32>) -> Result<String, JsError> {
        let r = rollout(&self.params, &self.table, &self.cfg, &observations, &RolloutOptions::default())
            .map_err(js_err)?;
        let marginals: Vec<&[f64]> = r.steps.iter().map(|s| s.marginals.as_slice()).collect();
        Ok(json!({ "marginals": marginals, "actions": r.actions() }).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_round_trips_json() {
        let d = Demo::new(3, 1.0).unwrap();
        let g: Value = serde_json::from_str(&d.gibbs(vec![0.5, -1.0, 2.0], vec![1.0, 0.0, -0.5]).unwrap()).unwrap();
        let total: f64 = g["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let a: Value = serde_json::from_str(&d.attention(vec![0.2, 0.5, 0.9], 0).unwrap()).unwrap();
        assert_eq!(a["attention"][0].as_array().unwrap().len(), K);
        let r: Value = serde_json::from_str(&d.rollout(vec![0, 1, 2]).unwrap()).unwrap();
        assert_eq!(r["marginals"].as_array().unwrap().len(), STEPS);
    }
}
