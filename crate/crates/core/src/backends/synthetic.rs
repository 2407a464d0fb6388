//! CRRA agents that answer the elicitation from expected utility.
//!
//! Without noise the answer is [`predicted_switch_point`] under the context's
//! risk parameter. With a logit scale `λ > 0`, each row is sampled with
//! `P(B) = 1 / (1 + exp(-(EU_B - EU_A) / λ))` and the first sampled B is the
//! answer. Row 10 is never sampled: B pays more in both states there.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    estimate_prompt_tokens, estimate_tokens, BackendError, CallKey, CallKind, CompletionBackend,
    CompletionParams, CompletionResult,
};
use crate::contexts::PromptBundle;
use crate::lottery::{
    build_task_sheet, predicted_switch_point, utility_gap, CrraParams, DECISIONS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAgentSpec {
    pub model: String,
    /// Risk parameters keyed by context id.
    #[serde(default)]
    pub context_r: BTreeMap<String, CrraParams>,
    /// Used for contexts missing from `context_r`; when absent those contexts are a config error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_r: Option<CrraParams>,
    /// Logit choice-noise scale λ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SyntheticAgentSpec {
    pub fn deterministic(model: &str, context_r: &[(&str, f64)]) -> Self {
        Self {
            model: model.to_owned(),
            context_r: context_r
                .iter()
                .map(|(c, r)| ((*c).to_owned(), CrraParams::new(*r)))
                .collect(),
            default_r: None,
            noise: None,
            rng_seed: 0,
        }
    }

    pub fn params_for(&self, context_id: &str) -> Option<&CrraParams> {
        self.context_r.get(context_id).or(self.default_r.as_ref())
    }
}

pub struct SyntheticBackend {
    spec: SyntheticAgentSpec,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticAgentSpec) -> Result<Self, BackendError> {
        if let Some(l) = spec.noise {
            if !l.is_finite() || l < 0.0 {
                return Err(BackendError::Config(format!(
                    "synthetic noise must be finite and >= 0, got {l}"
                )));
            }
        }
        for (ctx, p) in spec
            .context_r
            .iter()
            .map(|(c, p)| (c.as_str(), p))
            .chain(spec.default_r.iter().map(|p| ("<default>", p)))
        {
            if !p.r.is_finite() {
                return Err(BackendError::Config(format!(
                    "synthetic r for {ctx} must be finite"
                )));
            }
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &SyntheticAgentSpec {
        &self.spec
    }

    fn rng_for(&self, key: &CallKey<'_>) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.spec.rng_seed.to_le_bytes());
        h.update(self.spec.model.as_bytes());
        h.update([0]);
        h.update(key.context_id.as_bytes());
        h.update([0]);
        h.update(key.trial.to_le_bytes());
        h.update(key.ask.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn answer(&self, params: &CrraParams, key: &CallKey<'_>) -> u8 {
        match self.spec.noise {
            Some(lambda) if lambda > 0.0 => {
                let mut rng = self.rng_for(key);
                let sheet = build_task_sheet();
                for d in &sheet[..DECISIONS - 1] {
                    let p_b = logistic(utility_gap(d, params.r) / lambda);
                    if rng.gen::<f64>() < p_b {
                        return d.index as u8;
                    }
                }
                DECISIONS as u8
            }
            _ => predicted_switch_point(params).value(),
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl CompletionBackend for SyntheticBackend {
    fn model(&self) -> &str {
        &self.spec.model
    }

    fn complete(
        &self,
        key: &CallKey<'_>,
        bundle: &PromptBundle,
        _params: &CompletionParams,
    ) -> Result<CompletionResult, BackendError> {
        let params = self.spec.params_for(&bundle.context_id).ok_or_else(|| {
            BackendError::Config(format!(
                "synthetic agent {} has no r for context {}",
                self.spec.model, bundle.context_id
            ))
        })?;
        let text = match key.kind {
            CallKind::Elicit => self.answer(params, key).to_string(),
            CallKind::Followup => format!(
                "I maximise expected CRRA utility with r = {}; I switch to Option B at the first \
decision where its expected utility is at least that of Option A.",
                params.r
            ),
        };
        Ok(CompletionResult {
            input_tokens: estimate_prompt_tokens(bundle),
            output_tokens: estimate_tokens(&text),
            tokens_estimated: true,
            text,
            latency_ms: 0,
            attempt: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contexts::{catalog, find, render_prompt, BASELINE, RISK_AVOIDING, RISK_LOVING};

    fn ask(b: &SyntheticBackend, ctx: &str, trial: u32) -> String {
        let bundle = render_prompt(find(&catalog(), ctx).unwrap());
        let key = CallKey {
            context_id: ctx,
            trial,
            ask: 0,
            kind: CallKind::Elicit,
        };
        b.complete(&key, &bundle, &CompletionParams::default())
            .unwrap()
            .text
    }

    #[test]
    fn risk_neutral_answers_five() {
        let b = SyntheticBackend::new(SyntheticAgentSpec::deterministic("s", &[(BASELINE, 0.0)]))
            .unwrap();
        assert_eq!(ask(&b, BASELINE, 1), "5");
        assert_eq!(ask(&b, BASELINE, 2), "5");
    }

    #[test]
    fn manipulation_pair() {
        let b = SyntheticBackend::new(SyntheticAgentSpec::deterministic(
            "s",
            &[(RISK_AVOIDING, 1.2), (RISK_LOVING, -0.5)],
        ))
        .unwrap();
        let avoid: u8 = ask(&b, RISK_AVOIDING, 1).parse().unwrap();
        let love: u8 = ask(&b, RISK_LOVING, 1).parse().unwrap();
        assert_eq!((avoid, love), (9, 3));
    }

    #[test]
    fn unknown_context_is_config_error() {
        let b = SyntheticBackend::new(SyntheticAgentSpec::deterministic("s", &[(BASELINE, 0.0)]))
            .unwrap();
        let bundle = render_prompt(find(&catalog(), RISK_LOVING).unwrap());
        let key = CallKey {
            context_id: RISK_LOVING,
            trial: 1,
            ask: 0,
            kind: CallKind::Elicit,
        };
        assert!(matches!(
            b.complete(&key, &bundle, &CompletionParams::default()),
            Err(BackendError::Config(_))
        ));
    }

    #[test]
    fn noisy_agent_is_seeded_and_in_range() {
        let mut spec = SyntheticAgentSpec::deterministic("s", &[(BASELINE, 0.3)]);
        spec.noise = Some(0.2);
        spec.rng_seed = 42;
        let a = SyntheticBackend::new(spec.clone()).unwrap();
        let b = SyntheticBackend::new(spec).unwrap();
        let xs: Vec<String> = (1..=35).map(|t| ask(&a, BASELINE, t)).collect();
        let ys: Vec<String> = (1..=35).map(|t| ask(&b, BASELINE, t)).collect();
        assert_eq!(xs, ys);
        let vals: Vec<u8> = xs.iter().map(|s| s.parse().unwrap()).collect();
        assert!(vals.iter().all(|v| (1..=10).contains(v)));
        assert!(
            vals.iter().any(|v| *v != vals[0]),
            "noise should vary answers"
        );
    }

    #[test]
    fn bad_noise_rejected() {
        let mut spec = SyntheticAgentSpec::deterministic("s", &[(BASELINE, 0.3)]);
        spec.noise = Some(-1.0);
        assert!(SyntheticBackend::new(spec).is_err());
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-1000.0) >= 0.0);
        assert!(logistic(1000.0) <= 1.0);
    }
}
