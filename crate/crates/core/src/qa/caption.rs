//! Templated questions whose answers are read straight off the diagram.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::clause::{Clause, CountKind};
use super::{Category, Format, Grounding, QaError, QaPair};
use crate::seed;
use crate::textgen::DescriptionBundle;
use crate::trace::TimingDiagram;

const DEFAULT_TEMPLATES: &str = include_str!("../../assets/caption_templates.json");

/// Phrasings per category. `{signal}` and `{cycle}` are substituted; the
/// first phrasing of each category is the canonical one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaptionTemplates(BTreeMap<Category, Vec<String>>);

impl Default for CaptionTemplates {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl CaptionTemplates {
    pub fn from_json(text: &str) -> Result<Self, QaError> {
        let t: CaptionTemplates = serde_json::from_str(text).map_err(|e| QaError::Templates(e.to_string()))?;
        for c in Category::ANALYTIC {
            let list = t.get(c);
            if list.is_empty() {
                return Err(QaError::Templates(format!("no phrasings for {c}")));
            }
            if let Some(bad) = list.iter().find(|p| !p.contains("{signal}")) {
                return Err(QaError::Templates(format!("{c} phrasing lacks {{signal}}: {bad}")));
            }
        }
        if let Some(bad) = t.get(Category::Value).iter().find(|p| !p.contains("{cycle}")) {
            return Err(QaError::Templates(format!("Value phrasing lacks {{cycle}}: {bad}")));
        }
        for c in [Category::Description, Category::Caption, Category::Summary, Category::UseCase] {
            if t.get(c).is_empty() {
                return Err(QaError::Templates(format!("no phrasing for {c}")));
            }
        }
        Ok(t)
    }

    pub fn get(&self, category: Category) -> &[String] {
        self.0.get(&category).map_or(&[], Vec::as_slice)
    }
}

/// Number of questions per analytic category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CaptionQuota {
    pub value: usize,
    pub sequence: usize,
    pub transitions: usize,
    pub rising_edges: usize,
    pub falling_edges: usize,
}

/// Share of value-at-cycle questions in the reference corpus
/// (4,306,008 of 9,915,694 pairs).
pub const VALUE_SHARE: f64 = 4_306_008.0 / 9_915_694.0;

impl CaptionQuota {
    /// Splits `total` with the value share above and equal shares for the
    /// other four categories (largest-remainder rounding, sums to `total`).
    pub fn split(total: usize) -> Self {
        let rest = (1.0 - VALUE_SHARE) / 4.0;
        let shares = [VALUE_SHARE, rest, rest, rest, rest];
        let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let missing = total - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        CaptionQuota {
            value: counts[0],
            sequence: counts[1],
            transitions: counts[2],
            rising_edges: counts[3],
            falling_edges: counts[4],
        }
    }

    pub fn total(&self) -> usize {
        self.value + self.sequence + self.transitions + self.rising_edges + self.falling_edges
    }

    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Value => self.value,
            Category::Sequence => self.sequence,
            Category::Transitions => self.transitions,
            Category::RisingEdges => self.rising_edges,
            Category::FallingEdges => self.falling_edges,
            _ => 0,
        }
    }

    /// A quota of one question in category `c`.
    pub fn single(c: Category) -> Self {
        let mut q = CaptionQuota::default();
        match c {
            Category::Value => q.value = 1,
            Category::Sequence => q.sequence = 1,
            Category::Transitions => q.transitions = 1,
            Category::RisingEdges => q.rising_edges = 1,
            Category::FallingEdges => q.falling_edges = 1,
            _ => {}
        }
        q
    }
}

fn fill(template: &str, signal: &str, cycle: Option<usize>) -> String {
    let s = template.replace("{signal}", signal);
    match cycle {
        Some(c) => s.replace("{cycle}", &(c + 1).to_string()),
        None => s,
    }
}

/// Emits `quota` analytic pairs for `td`, categories in a fixed order.
pub fn generate_caption_qas(
    td: &TimingDiagram,
    source_td: &str,
    seed: u64,
    quota: &CaptionQuota,
    templates: &CaptionTemplates,
) -> Result<Vec<QaPair>, QaError> {
    let mut rng = seed::rng(seed);
    let all: Vec<&str> = td.data_signals().map(|s| s.name.as_str()).collect();
    let scalars: Vec<&str> = td.data_signals().filter(|s| s.is_scalar()).map(|s| s.name.as_str()).collect();
    let n = td.num_cycles();
    let last = n - 1;
    let mut out = Vec::with_capacity(quota.total());
    for category in Category::ANALYTIC {
        let k = quota.get(category);
        if k == 0 {
            continue;
        }
        let pool = if matches!(category, Category::Value | Category::Sequence) {
            &all
        } else {
            &scalars
        };
        if pool.is_empty() {
            return Err(QaError::QuotaInfeasible(category));
        }
        let phrasings = templates.get(category);
        for _ in 0..k {
            let signal = *pool.choose(&mut rng).expect("non-empty pool");
            let phrasing = phrasings.choose(&mut rng).expect("validated templates");
            let s = signal.to_string();
            let count = |kind, count| Clause::Count {
                signal: s.clone(),
                kind,
                from: 0,
                to: last,
                count,
            };
            // answers come from the diagram queries; the grounding restates them
            let (cycle, key) = match category {
                Category::Value => {
                    let cycle = rng.gen_range(0..n);
                    let value = td.value_at_cycle(signal, cycle).expect("in range").to_string();
                    (Some(cycle), Clause::ValueAt { signal: s.clone(), cycle, value })
                }
                Category::Sequence => {
                    let values = td.value_sequence(signal).expect("known").iter().map(ToString::to_string).collect();
                    (None, Clause::Sequence { signal: s.clone(), start: 0, values })
                }
                Category::Transitions => (None, count(CountKind::Changes, td.count_transitions(signal).expect("scalar"))),
                Category::RisingEdges => (None, count(CountKind::Rising, td.count_rising_edges(signal).expect("scalar"))),
                _ => (None, count(CountKind::Falling, td.count_falling_edges(signal).expect("scalar"))),
            };
            out.push(QaPair {
                question: fill(phrasing, signal, cycle),
                answer: key.bare(),
                category,
                format: Format::Statement,
                source_td: source_td.to_string(),
                template: None,
                grounding: Some(Grounding {
                    facts: vec![key.clone()],
                    key,
                    choices: vec![],
                    answer_index: None,
                    refuted: None,
                }),
            });
        }
    }
    Ok(out)
}

/// The four open-ended pairs backed by a text-service description.
/// The bundle is expected to be complete (see [`DescriptionBundle::is_complete`]).
pub fn generate_description_qas(bundle: &DescriptionBundle, source_td: &str, templates: &CaptionTemplates) -> Vec<QaPair> {
    [
        (Category::Description, &bundle.description),
        (Category::Caption, &bundle.caption),
        (Category::Summary, &bundle.summary),
        (Category::UseCase, &bundle.use_cases),
    ]
    .into_iter()
    .map(|(category, text)| QaPair {
        question: templates.get(category)[0].clone(),
        answer: text.trim().to_string(),
        category,
        format: Format::Statement,
        source_td: source_td.to_string(),
        template: None,
        grounding: None,
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{CycleValue, SignalTrace};

    fn td() -> TimingDiagram {
        TimingDiagram::new(
            vec![
                SignalTrace::scalar("clk", &[1, 1, 1, 1]),
                SignalTrace::scalar("a", &[0, 1, 1, 0]),
                SignalTrace::new("bus", 8, [1, 2, 3, 4].map(CycleValue::num).to_vec()),
            ],
            "clk",
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn direct_reads() {
        let t = CaptionTemplates::default();
        let d = td();
        for seed in 0..40 {
            let qs = generate_caption_qas(&d, "td0", seed, &CaptionQuota::single(Category::Value), &t).unwrap();
            let q = &qs[0];
            if q.question.contains(" a ") && q.question.contains("cycle 3") {
                assert_eq!(q.answer, "1");
            }
        }
        let qs = generate_caption_qas(&d, "td0", 1, &CaptionQuota::single(Category::Transitions), &t).unwrap();
        assert_eq!(qs[0].answer, "2");
        let qs = generate_caption_qas(&d, "td0", 1, &CaptionQuota::single(Category::RisingEdges), &t).unwrap();
        assert_eq!(qs[0].answer, "1");
    }

    #[test]
    fn canonical_phrasing_first_and_pool_sizes() {
        let t = CaptionTemplates::default();
        assert_eq!(t.get(Category::Value)[0], "What is the value of signal {signal} at clock cycle {cycle}?");
        for c in Category::ANALYTIC {
            assert!(t.get(c).len() >= 3);
        }
    }

    #[test]
    fn quotas_are_exact_and_deterministic() {
        let t = CaptionTemplates::default();
        let q = CaptionQuota::split(103);
        assert_eq!(q.total(), 103);
        let a = generate_caption_qas(&td(), "x", 5, &q, &t).unwrap();
        assert_eq!(a.len(), 103);
        for c in Category::ANALYTIC {
            assert_eq!(a.iter().filter(|p| p.category == c).count(), q.get(c));
        }
        assert_eq!(a, generate_caption_qas(&td(), "x", 5, &q, &t).unwrap());
    }

    #[test]
    fn split_matches_shares() {
        let q = CaptionQuota::split(10_000);
        assert_eq!(q.total(), 10_000);
        assert_eq!(q.value, 4343);
        assert!(q.sequence.abs_diff(q.falling_edges) <= 1);
        assert_eq!(CaptionQuota::split(0).total(), 0);
    }

    #[test]
    fn infeasible_edge_questions_without_scalars() {
        let d = TimingDiagram::new(
            vec![
                SignalTrace::scalar("clk", &[1, 1]),
                SignalTrace::new("bus", 4, vec![CycleValue::num(1), CycleValue::num(2)]),
            ],
            "clk",
            vec![],
        )
        .unwrap();
        let t = CaptionTemplates::default();
        assert_eq!(
            generate_caption_qas(&d, "x", 0, &CaptionQuota::single(Category::RisingEdges), &t),
            Err(QaError::QuotaInfeasible(Category::RisingEdges))
        );
        assert!(generate_caption_qas(&d, "x", 0, &CaptionQuota::single(Category::Value), &t).is_ok());
    }

    #[test]
    fn description_pairs() {
        let b = DescriptionBundle {
            description: "A 2-to-1 negative multiplexer.".into(),
            caption: "c".into(),
            summary: "s".into(),
            use_cases: "u".into(),
        };
        let qs = generate_description_qas(&b, "maxv_nmux21", &CaptionTemplates::default());
        assert_eq!(qs.len(), 4);
        assert!(qs[0].answer.contains("2-to-1 negative multiplexer"));
        assert!(qs.iter().all(|q| q.grounding.is_none()));
    }

    #[test]
    fn template_file_validation() {
        assert!(CaptionTemplates::from_json(r#"{"Value": ["no placeholders"]}"#).is_err());
        assert!(CaptionTemplates::from_json("[]").is_err());
    }
}
