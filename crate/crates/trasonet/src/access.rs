//! Distributed automatic access engine: fuzzification, the 16-rule inference,
//! defuzzification, knowledge-base updates, recommender trust and hysteresis
//! handover decisions.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ahp::{NetworkChoice, Service};
use crate::error::{Error, Result};

pub const SPEED_MAX_KMH: f64 = 80.0;
pub const KNOWLEDGE_CAPACITY_PER_PAIR: usize = 1_000;

pub const LEVEL_HIGH: f64 = 0.9;
pub const LEVEL_MEDIUM: f64 = 0.6;
pub const LEVEL_LOW: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeedLevel {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyInputs {
    pub speed_kmh: f64,
    pub application: Service,
    pub current_option: NetworkChoice,
    pub recommendation: NetworkChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyRule {
    pub speed: SpeedLevel,
    pub app: Service,
    pub option: NetworkChoice,
    pub rec: NetworkChoice,
    pub level: f64,
}

/// Complete rulebase: exactly one rule per (speed, app, option, rec) premise.
#[derive(Debug, Clone, PartialEq)]
pub struct Rulebase {
    rules: Vec<FuzzyRule>,
}

impl Rulebase {
    pub fn new(rules: Vec<FuzzyRule>) -> Result<Self> {
        if rules.len() != 16 {
            return Err(Error::Rulebase(format!("expected 16 rules, got {}", rules.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for rule in &rules {
            if !(0.0..=1.0).contains(&rule.level) {
                return Err(Error::Rulebase(format!("output level {} outside [0,1]", rule.level)));
            }
            if !seen.insert((rule.speed, rule.app, rule.option, rule.rec)) {
                return Err(Error::Rulebase(format!("duplicate premise {rule:?}")));
            }
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[FuzzyRule] {
        &self.rules
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Vec<FuzzyRule> = serde_json::from_str(text)?;
        Self::new(rules)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rulebase serializes")
    }

    pub fn level(&self, speed: SpeedLevel, app: Service, option: NetworkChoice, rec: NetworkChoice) -> f64 {
        self.rules
            .iter()
            .find(|r| r.speed == speed && r.app == app && r.option == option && r.rec == rec)
            .map(|r| r.level)
            .expect("rulebase is complete")
    }
}

/// Shipped default rulebase. Cellular carries voice well at any speed; VANET
/// quality falls with speed; video strains the cellular link.
pub fn default_rulebase() -> Rulebase {
    use NetworkChoice::{Cellular, Vanet};
    use Service::{Video, Voice};
    use SpeedLevel::{High, Low};
    let table = [
        (Low, Voice, Cellular, Cellular, LEVEL_HIGH),
        (Low, Voice, Cellular, Vanet, LEVEL_HIGH),
        (Low, Voice, Vanet, Cellular, LEVEL_LOW),
        (Low, Voice, Vanet, Vanet, LEVEL_MEDIUM),
        (High, Voice, Cellular, Cellular, LEVEL_HIGH),
        (High, Voice, Cellular, Vanet, LEVEL_HIGH),
        (High, Voice, Vanet, Cellular, LEVEL_LOW),
        (High, Voice, Vanet, Vanet, LEVEL_LOW),
        (Low, Video, Cellular, Cellular, LEVEL_MEDIUM),
        (Low, Video, Cellular, Vanet, LEVEL_LOW),
        (Low, Video, Vanet, Cellular, LEVEL_MEDIUM),
        (Low, Video, Vanet, Vanet, LEVEL_HIGH),
        (High, Video, Cellular, Cellular, LEVEL_MEDIUM),
        (High, Video, Cellular, Vanet, LEVEL_MEDIUM),
        (High, Video, Vanet, Cellular, LEVEL_LOW),
        (High, Video, Vanet, Vanet, LEVEL_LOW),
    ];
    Rulebase::new(
        table
            .into_iter()
            .map(|(speed, app, option, rec, level)| FuzzyRule {
                speed,
                app,
                option,
                rec,
                level,
            })
            .collect(),
    )
    .expect("default rulebase is complete")
}

/// Complementary triangular memberships over 0..80 km/h.
pub fn fuzzify_speed(speed_kmh: f64) -> (f64, f64) {
    let s = speed_kmh.clamp(0.0, SPEED_MAX_KMH);
    let mu_high = s / SPEED_MAX_KMH;
    (1.0 - mu_high, mu_high)
}

/// Weighted-average defuzzification over the singleton rule outputs. The
/// speed premise fires its two levels by membership; application and option
/// are singleton matches; the recommendation premise is weighted by trust
/// (matching rules) or 1 - trust (the rest).
pub fn infer(inputs: &FuzzyInputs, rulebase: &Rulebase, trust: f64) -> f64 {
    let (mu_low, mu_high) = fuzzify_speed(inputs.speed_kmh);
    let trust = trust.clamp(0.0, 1.0);
    let mut weighted = 0.0;
    let mut total = 0.0;
    for rule in rulebase.rules() {
        if rule.app != inputs.application || rule.option != inputs.current_option {
            continue;
        }
        let mu_speed = match rule.speed {
            SpeedLevel::Low => mu_low,
            SpeedLevel::High => mu_high,
        };
        let mu_rec = if rule.rec == inputs.recommendation {
            trust
        } else {
            1.0 - trust
        };
        let strength = mu_speed * mu_rec;
        weighted += strength * rule.level;
        total += strength;
    }
    if total <= 0.0 {
        // no rule fires: neutral default
        return 0.5;
    }
    weighted / total
}

/// Achievable QoS on the other network, for the handover comparison.
pub fn evaluate_candidate(inputs: &FuzzyInputs, rulebase: &Rulebase, trust: f64) -> f64 {
    let swapped = FuzzyInputs {
        current_option: match inputs.current_option {
            NetworkChoice::Cellular => NetworkChoice::Vanet,
            NetworkChoice::Vanet => NetworkChoice::Cellular,
        },
        ..*inputs
    };
    infer(&swapped, rulebase, trust)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoverPolicy {
    pub qos_improvement_threshold: f64,
    pub dwell_threshold_cycles: usize,
    pub trust_smoothing: f64,
}

impl Default for HandoverPolicy {
    fn default() -> Self {
        Self {
            qos_improvement_threshold: 0.15,
            dwell_threshold_cycles: 3,
            trust_smoothing: 0.2,
        }
    }
}

/// Hysteresis rule: hand over only when the improvement has exceeded the QoS
/// threshold for at least the dwell threshold of consecutive cycles.
/// `consecutive_cycles_above` counts cycles up to and including this one.
pub fn decide_handover(
    level_l: f64,
    level_c: f64,
    policy: &HandoverPolicy,
    consecutive_cycles_above: usize,
) -> bool {
    level_l - level_c > policy.qos_improvement_threshold
        && consecutive_cycles_above >= policy.dwell_threshold_cycles
}

/// Trust moves toward the prediction accuracy of the last cycle.
pub fn adapt_trust(trust: f64, smoothing: f64, predicted_qos: f64, achieved_qos: f64) -> f64 {
    let accuracy = 1.0 - (predicted_qos - achieved_qos).abs();
    ((1.0 - smoothing) * trust + smoothing * accuracy).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub speed_kmh: f64,
    pub application: Service,
    pub option: NetworkChoice,
    pub achieved_qos: f64,
    pub recommendation: NetworkChoice,
    pub cycle_index: usize,
}

/// Per-(application, option) ring buffers of achieved-QoS history.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    records: HashMap<(Service, NetworkChoice), VecDeque<KnowledgeRecord>>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, record: KnowledgeRecord) {
        debug_assert!((0.0..=1.0).contains(&record.achieved_qos));
        let buffer = self
            .records
            .entry((record.application, record.option))
            .or_default();
        if buffer.len() == KNOWLEDGE_CAPACITY_PER_PAIR {
            buffer.pop_front();
        }
        buffer.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.values().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean achieved QoS over records matching the speed level, application
    /// and option. Speeds at or below the midpoint count as Low.
    pub fn mean_qos(&self, speed: SpeedLevel, app: Service, option: NetworkChoice) -> Option<f64> {
        let buffer = self.records.get(&(app, option))?;
        let matching: Vec<f64> = buffer
            .iter()
            .filter(|r| speed_level(r.speed_kmh) == speed)
            .map(|r| r.achieved_qos)
            .collect();
        if matching.is_empty() {
            return None;
        }
        Some(matching.iter().sum::<f64>() / matching.len() as f64)
    }

    pub fn records(&self) -> impl Iterator<Item = &KnowledgeRecord> {
        self.records.values().flatten()
    }
}

pub fn speed_level(speed_kmh: f64) -> SpeedLevel {
    if speed_kmh <= SPEED_MAX_KMH / 2.0 {
        SpeedLevel::Low
    } else {
        SpeedLevel::High
    }
}

/// Per-vehicle engine state: rulebase, knowledge base, trust and the dwell
/// counter behind the ping-pong guard.
#[derive(Debug, Clone)]
pub struct AccessEngine {
    rulebase: Rulebase,
    policy: HandoverPolicy,
    pub knowledge: KnowledgeBase,
    trust: f64,
    consecutive_above: usize,
    pub handover_count: usize,
}

impl AccessEngine {
    pub fn new(rulebase: Rulebase, policy: HandoverPolicy) -> Self {
        Self {
            rulebase,
            policy,
            knowledge: KnowledgeBase::new(),
            trust: 0.5,
            consecutive_above: 0,
            handover_count: 0,
        }
    }

    pub fn trust(&self) -> f64 {
        self.trust
    }

    pub fn predict(&self, inputs: &FuzzyInputs) -> f64 {
        infer(inputs, &self.rulebase, self.trust)
    }

    pub fn predict_candidate(&self, inputs: &FuzzyInputs) -> f64 {
        evaluate_candidate(inputs, &self.rulebase, self.trust)
    }

    /// One decision step: compare achievable QoS on the alternative network
    /// with the achieved QoS on the current one, run the hysteresis rule and
    /// return the network to use next cycle.
    pub fn step(
        &mut self,
        inputs: &FuzzyInputs,
        achieved_qos: f64,
        cycle_index: usize,
    ) -> NetworkChoice {
        let level_c = achieved_qos.clamp(0.0, 1.0);
        let level_l = self.predict_candidate(inputs);

        let predicted = self.predict(inputs);
        self.trust = adapt_trust(self.trust, self.policy.trust_smoothing, predicted, level_c);
        self.knowledge.update(KnowledgeRecord {
            speed_kmh: inputs.speed_kmh,
            application: inputs.application,
            option: inputs.current_option,
            achieved_qos: level_c,
            recommendation: inputs.recommendation,
            cycle_index,
        });

        if level_l - level_c > self.policy.qos_improvement_threshold {
            self.consecutive_above += 1;
        } else {
            self.consecutive_above = 0;
        }
        if decide_handover(level_l, level_c, &self.policy, self.consecutive_above) {
            self.consecutive_above = 0;
            self.handover_count += 1;
            match inputs.current_option {
                NetworkChoice::Cellular => NetworkChoice::Vanet,
                NetworkChoice::Vanet => NetworkChoice::Cellular,
            }
        } else {
            inputs.current_option
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use NetworkChoice::{Cellular, Vanet};
    use Service::{Video, Voice};

    #[test]
    fn speed_memberships_are_complementary() {
        assert_eq!(fuzzify_speed(0.0), (1.0, 0.0));
        assert_eq!(fuzzify_speed(80.0), (0.0, 1.0));
        assert_eq!(fuzzify_speed(40.0), (0.5, 0.5));
        let (lo, hi) = fuzzify_speed(130.0); // clamped
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn rule_one_fires_exactly() {
        let rb = default_rulebase();
        let inputs = FuzzyInputs {
            speed_kmh: 0.0,
            application: Voice,
            current_option: Cellular,
            recommendation: Cellular,
        };
        assert_eq!(infer(&inputs, &rb, 1.0), LEVEL_HIGH);
    }

    #[test]
    fn rule_sixteen_fires_exactly() {
        let rb = default_rulebase();
        let inputs = FuzzyInputs {
            speed_kmh: 80.0,
            application: Video,
            current_option: Vanet,
            recommendation: Vanet,
        };
        assert_eq!(infer(&inputs, &rb, 1.0), LEVEL_LOW);
    }

    #[test]
    fn inference_is_a_convex_combination_of_fired_levels() {
        let rb = default_rulebase();
        for speed in [0.0, 13.0, 40.0, 79.0] {
            for trust in [0.0, 0.3, 0.7, 1.0] {
                let inputs = FuzzyInputs {
                    speed_kmh: speed,
                    application: Video,
                    current_option: Cellular,
                    recommendation: Vanet,
                };
                let out = infer(&inputs, &rb, trust);
                assert!((0.0..=1.0).contains(&out));
                assert!((LEVEL_LOW..=LEVEL_HIGH).contains(&out));
            }
        }
    }

    #[test]
    fn zero_trust_discounts_matching_rules() {
        let rb = default_rulebase();
        let inputs = FuzzyInputs {
            speed_kmh: 0.0,
            application: Video,
            current_option: Cellular,
            recommendation: Vanet,
        };
        // with trust 0 the R=Vanet rules vanish; only (Low, Video, Cellular,
        // R=Cellular) fires
        assert_eq!(infer(&inputs, &rb, 0.0), LEVEL_MEDIUM);
    }

    #[test]
    fn candidate_evaluation_swaps_the_option() {
        let rb = default_rulebase();
        let inputs = FuzzyInputs {
            speed_kmh: 0.0,
            application: Video,
            current_option: Cellular,
            recommendation: Vanet,
        };
        // candidate = (Low, Video, Vanet, R=Vanet) at trust 1
        assert_eq!(evaluate_candidate(&inputs, &rb, 1.0), LEVEL_HIGH);
    }

    #[test]
    fn incomplete_rulebase_is_rejected() {
        let mut rules = default_rulebase().rules().to_vec();
        rules.pop();
        assert!(Rulebase::new(rules).is_err());
        let mut rules = default_rulebase().rules().to_vec();
        rules[0] = rules[1];
        assert!(Rulebase::new(rules).is_err());
    }

    #[test]
    fn rulebase_json_round_trip() {
        let rb = default_rulebase();
        let parsed = Rulebase::from_json(&rb.to_json()).unwrap();
        assert_eq!(parsed, rb);
    }

    #[test]
    fn handover_needs_both_improvement_and_dwell() {
        let policy = HandoverPolicy {
            qos_improvement_threshold: 0.1,
            dwell_threshold_cycles: 3,
            trust_smoothing: 0.2,
        };
        assert!(decide_handover(0.8, 0.5, &policy, 5));
        assert!(!decide_handover(0.8, 0.5, &policy, 1));
        assert!(!decide_handover(0.55, 0.5, &policy, 5));
    }

    #[test]
    fn alternating_improvement_never_hands_over() {
        let rb = default_rulebase();
        let policy = HandoverPolicy {
            qos_improvement_threshold: 0.1,
            dwell_threshold_cycles: 3,
            trust_smoothing: 0.0,
        };
        let mut engine = AccessEngine::new(rb, policy);
        // achieved QoS alternates so the improvement changes sign every cycle
        for cycle in 0..50 {
            let inputs = FuzzyInputs {
                speed_kmh: 10.0,
                application: Video,
                current_option: Cellular,
                recommendation: Vanet,
            };
            let achieved = if cycle % 2 == 0 { 0.2 } else { 0.95 };
            let next = engine.step(&inputs, achieved, cycle);
            assert_eq!(next, Cellular);
        }
        assert_eq!(engine.handover_count, 0);
    }

    #[test]
    fn sustained_improvement_hands_over_once() {
        let rb = default_rulebase();
        let mut engine = AccessEngine::new(rb, HandoverPolicy::default());
        let inputs = FuzzyInputs {
            speed_kmh: 0.0,
            application: Video,
            current_option: Cellular,
            recommendation: Vanet,
        };
        let mut switched_at = None;
        for cycle in 0..6 {
            if engine.step(&inputs, 0.3, cycle) == Vanet {
                switched_at = Some(cycle);
                break;
            }
        }
        assert_eq!(switched_at, Some(2)); // third consecutive cycle above
        assert_eq!(engine.handover_count, 1);
    }

    #[test]
    fn knowledge_base_capacity_and_mean() {
        let mut kb = KnowledgeBase::new();
        let record = |qos, speed| KnowledgeRecord {
            speed_kmh: speed,
            application: Voice,
            option: Cellular,
            achieved_qos: qos,
            recommendation: Cellular,
            cycle_index: 0,
        };
        kb.update(record(0.4, 10.0));
        assert_eq!(kb.len(), 1);
        kb.update(record(0.8, 20.0));
        let mean = kb.mean_qos(SpeedLevel::Low, Voice, Cellular).unwrap();
        assert!((mean - 0.6).abs() < 1e-12);
        assert_eq!(kb.mean_qos(SpeedLevel::High, Voice, Cellular), None);

        for _ in 0..KNOWLEDGE_CAPACITY_PER_PAIR {
            kb.update(record(1.0, 70.0));
        }
        assert_eq!(kb.len(), KNOWLEDGE_CAPACITY_PER_PAIR);
        // the two oldest Low records were evicted
        assert_eq!(kb.mean_qos(SpeedLevel::Low, Voice, Cellular), None);
    }

    #[test]
    fn trust_formula_and_bounds() {
        assert_eq!(adapt_trust(1.0, 0.5, 1.0, 0.0), 0.5);
        let mut trust: f64 = 0.1;
        let mut last = trust;
        for _ in 0..100 {
            trust = adapt_trust(trust, 0.3, 0.7, 0.7);
            assert!(trust >= last);
            assert!((0.0..=1.0).contains(&trust));
            last = trust;
        }
        assert!(trust > 0.99);
    }
}
