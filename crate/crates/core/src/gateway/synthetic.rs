use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{truncate_at_stop, Backend, FinishReason, GatewayError, GenerationRequest, RawGeneration};
use crate::corpus::{render_label, Example, Label, Polarity, SentimentTuple};
use crate::tuple_syntax::TupleStyle;

fn require_example(request: &GenerationRequest, backend: &str) -> Result<usize, GatewayError> {
    request
        .context
        .example_id
        .ok_or_else(|| GatewayError::InvalidRequest(format!("{backend} backend needs an example id")))
}

fn finish(text: &str, request: &GenerationRequest, backend: &str) -> RawGeneration {
    let (text, _) = truncate_at_stop(text, &request.stop_sequence);
    RawGeneration {
        text,
        finish_reason: FinishReason::Stop,
        latency: Duration::ZERO,
        backend: backend.to_string(),
        seed_forwarded: false,
    }
}

/// Answers every request with the gold label of its example, serialized the
/// way shot labels appear in prompts.
pub struct ReplayGoldBackend {
    gold: HashMap<usize, Label>,
}

impl ReplayGoldBackend {
    pub fn new(corpus: &[Example]) -> Self {
        ReplayGoldBackend {
            gold: corpus.iter().map(|e| (e.id, e.gold.clone())).collect(),
        }
    }
}

impl Backend for ReplayGoldBackend {
    fn name(&self) -> &str {
        "replay_gold"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RawGeneration, GatewayError> {
        request.validate()?;
        let id = require_example(request, "replay_gold")?;
        let gold = self
            .gold
            .get(&id)
            .ok_or_else(|| GatewayError::InvalidRequest(format!("no gold label for example {id}")))?;
        Ok(finish(&render_label(gold, TupleStyle::Parens), request, "replay_gold"))
    }
}

pub fn flip_polarity(p: Polarity) -> Polarity {
    match p {
        Polarity::Positive => Polarity::Negative,
        Polarity::Negative => Polarity::Positive,
        Polarity::Neutral => Polarity::Positive,
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stateless choice of which tuples to corrupt: a tuple is corrupted when a
/// hash of (backend seed, request seed, example id, tuple index) maps below
/// `rate` on [0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSelector {
    pub rate: f64,
    pub seed: u64,
}

impl PerturbSelector {
    pub fn unit(&self, request_seed: u64, example_id: usize, tuple_index: usize) -> f64 {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ request_seed);
        h = splitmix64(h ^ example_id as u64);
        h = splitmix64(h ^ tuple_index as u64);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn is_corrupted(&self, request_seed: u64, example_id: usize, tuple_index: usize) -> bool {
        self.unit(request_seed, example_id, tuple_index) < self.rate
    }

    /// Gold with the selected tuples' polarity flipped. `tuple_index` is the
    /// position in the label's canonical order.
    pub fn apply(&self, gold: &Label, request_seed: u64, example_id: usize) -> Label {
        gold.iter()
            .enumerate()
            .map(|(i, t)| {
                if self.is_corrupted(request_seed, example_id, i) {
                    SentimentTuple {
                        polarity: flip_polarity(t.polarity),
                        ..t.clone()
                    }
                } else {
                    t.clone()
                }
            })
            .collect()
    }
}

pub struct PerturbBackend {
    gold: HashMap<usize, Label>,
    selector: PerturbSelector,
}

impl PerturbBackend {
    pub fn new(corpus: &[Example], rate: f64, seed: u64) -> Result<Self, GatewayError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(GatewayError::Params(format!("corruption rate must be in [0, 1], got {rate}")));
        }
        Ok(PerturbBackend {
            gold: corpus.iter().map(|e| (e.id, e.gold.clone())).collect(),
            selector: PerturbSelector { rate, seed },
        })
    }

    pub fn selector(&self) -> PerturbSelector {
        self.selector
    }
}

impl Backend for PerturbBackend {
    fn name(&self) -> &str {
        "perturb"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RawGeneration, GatewayError> {
        request.validate()?;
        let id = require_example(request, "perturb")?;
        let gold = self
            .gold
            .get(&id)
            .ok_or_else(|| GatewayError::InvalidRequest(format!("no gold label for example {id}")))?;
        let label = self.selector.apply(gold, request.seed, id);
        Ok(finish(&render_label(&label, TupleStyle::Parens), request, "perturb"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub text: String,
    #[serde(default = "stop")]
    pub finish_reason: FinishReason,
}

fn stop() -> FinishReason {
    FinishReason::Stop
}

impl ScriptStep {
    pub fn stop(text: impl Into<String>) -> Self {
        ScriptStep {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    default: Vec<ScriptStep>,
    #[serde(default)]
    examples: BTreeMap<usize, Vec<ScriptStep>>,
}

/// Plays back responses by attempt number: attempt `n` gets step `n - 1`
/// of its example's script (or the default script), and the last step
/// repeats once the script runs out. Answers depend only on the request, so
/// they are independent of call interleaving.
pub struct ScriptedBackend {
    default: Vec<ScriptStep>,
    per_example: BTreeMap<usize, Vec<ScriptStep>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(default: Vec<ScriptStep>) -> Self {
        ScriptedBackend {
            default,
            per_example: BTreeMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_example(mut self, id: usize, steps: Vec<ScriptStep>) -> Self {
        self.per_example.insert(id, steps);
        self
    }

    /// `{"default": [steps], "examples": {"7": [steps]}}` where a step is
    /// `{"text": "...", "finish_reason": "stop" | "length"}`.
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let file: ScriptFile =
            serde_json::from_str(text).map_err(|e| GatewayError::Params(format!("bad script: {e}")))?;
        Ok(ScriptedBackend {
            default: file.default,
            per_example: file.examples,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RawGeneration, GatewayError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let steps = request
            .context
            .example_id
            .and_then(|id| self.per_example.get(&id))
            .unwrap_or(&self.default);
        let idx = (request.context.attempt.max(1) as usize - 1).min(steps.len().saturating_sub(1));
        let step = steps
            .get(idx)
            .ok_or_else(|| GatewayError::Protocol("script has no steps for this request".into()))?;
        let mut out = finish(&step.text, request, "scripted");
        if step.finish_reason != FinishReason::Stop {
            out.text = step.text.clone();
            out.finish_reason = step.finish_reason;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{make_backend, BackendSpec, RequestContext};

    fn corpus(n: usize, tuples_per: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                id: i,
                sentence: format!("sentence {i}"),
                gold: (0..tuples_per)
                    .map(|j| {
                        SentimentTuple::quad(format!("a{j}"), "food quality", Polarity::ALL[j % 3], format!("o{j}"))
                    })
                    .collect(),
            })
            .collect()
    }

    fn request(id: usize, seed: u64) -> GenerationRequest {
        let mut r = GenerationRequest::new("prompt", "m", seed);
        r.context = RequestContext {
            example_id: Some(id),
            generation_seed: seed,
            attempt: 1,
        };
        r
    }

    #[test]
    fn replay_emits_gold_without_stop() {
        let c = vec![Example {
            id: 7,
            sentence: "Great pizza".into(),
            gold: [SentimentTuple::quad("pizza", "food quality", Polarity::Positive, "Great")]
                .into_iter()
                .collect(),
        }];
        let b = ReplayGoldBackend::new(&c);
        let g = b.generate(&request(7, 0)).unwrap();
        assert_eq!(g.text, "[('pizza', 'food quality', 'positive', 'Great')");
        assert_eq!(g.finish_reason, FinishReason::Stop);
        assert_eq!(g.latency, Duration::ZERO);
        assert!(b.generate(&request(8, 0)).is_err());
        assert!(b.generate(&GenerationRequest::new("p", "m", 0)).is_err());
    }

    #[test]
    fn perturb_degenerate_rates() {
        let c = corpus(20, 3);
        let replay = ReplayGoldBackend::new(&c);
        let zero = make_backend(&BackendSpec::Perturb { rate: 0.0, seed: 1 }, &c).unwrap();
        let one = PerturbBackend::new(&c, 1.0, 1).unwrap();
        for ex in &c {
            let r = request(ex.id, 3);
            assert_eq!(zero.generate(&r).unwrap().text, replay.generate(&r).unwrap().text);
            let text = one.generate(&r).unwrap().text + "]";
            let emitted = crate::tuple_syntax::parse_tuple_list(&text).unwrap();
            assert_eq!(emitted.len(), ex.gold.len());
            for fields in emitted {
                let t = SentimentTuple::from_fields(&fields, crate::corpus::Task::Asqp).unwrap();
                let orig = ex.gold.iter().find(|g| g.aspect == t.aspect).unwrap();
                assert_eq!(t.polarity, flip_polarity(orig.polarity));
            }
        }
    }

    #[test]
    fn perturb_is_deterministic() {
        let c = corpus(50, 2);
        let a = PerturbBackend::new(&c, 0.3, 5).unwrap();
        let b = PerturbBackend::new(&c, 0.3, 5).unwrap();
        for ex in c.iter().rev() {
            assert_eq!(
                a.generate(&request(ex.id, 2)).unwrap().text,
                b.generate(&request(ex.id, 2)).unwrap().text
            );
        }
    }

    #[test]
    fn scripted_by_attempt() {
        let b = ScriptedBackend::new(vec![ScriptStep::stop("hello")]).with_example(
            2,
            vec![
                ScriptStep::stop("bad"),
                ScriptStep {
                    text: "[('x'".into(),
                    finish_reason: FinishReason::Length,
                },
            ],
        );
        let g = b.generate(&request(0, 0)).unwrap();
        assert_eq!((g.text.as_str(), g.finish_reason), ("hello", FinishReason::Stop));
        let mut r = request(2, 0);
        assert_eq!(b.generate(&r).unwrap().text, "bad");
        r.context.attempt = 2;
        assert_eq!(b.generate(&r).unwrap().finish_reason, FinishReason::Length);
        r.context.attempt = 9;
        assert_eq!(b.generate(&r).unwrap().finish_reason, FinishReason::Length);
        assert_eq!(b.calls(), 4);
    }

    #[test]
    fn scripted_truncates_at_stop() {
        let b = ScriptedBackend::new(vec![ScriptStep::stop("[('a', 'b', 'c')] trailing")]);
        assert_eq!(b.generate(&request(0, 0)).unwrap().text, "[('a', 'b', 'c')");
    }

    #[test]
    fn script_json() {
        let b = ScriptedBackend::from_json(
            r#"{"default": [{"text": "x"}], "examples": {"3": [{"text": "y", "finish_reason": "length"}]}}"#,
        )
        .unwrap();
        assert_eq!(b.generate(&request(3, 0)).unwrap().text, "y");
        assert_eq!(b.generate(&request(1, 0)).unwrap().text, "x");
        assert!(ScriptedBackend::from_json("{oops").is_err());
    }
}
