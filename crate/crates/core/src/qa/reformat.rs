//! True/false and multiple-choice variants of grounded pairs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::clause::{Clause, SignalLookup};
use super::{Format, QaError, QaPair, LETTERS};
use crate::seed;

fn option_text(pair: &QaPair, c: &Clause) -> String {
    if pair.category.is_analytic() {
        c.bare()
    } else {
        capitalize(&c.describe())
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Rewrites `pair` into `target` format. Distractors and negations are
/// perturbations of the key fact that `lookup` confirms to be false.
pub fn reformat(pair: &QaPair, target: Format, seed: u64, lookup: &dyn SignalLookup) -> Result<QaPair, QaError> {
    let grounding = pair.grounding.as_ref().ok_or(QaError::UngroundedPair)?;
    let mut rng = seed::rng(seed);
    let key = &grounding.key;
    let wrong: Vec<Clause> = key.perturbations(lookup).into_iter().filter(|c| !c.check(lookup)).collect();
    let mut out = pair.clone();
    out.format = target;
    let g = out.grounding.as_mut().expect("checked above");
    match target {
        Format::Statement => {}
        Format::TrueFalse => {
            let shown = if rng.gen_bool(0.5) {
                let p = wrong.choose(&mut rng).ok_or(QaError::InsufficientDistractors { found: 0 })?;
                g.refuted = Some(p.clone());
                out.answer = "False".into();
                p
            } else {
                out.answer = "True".into();
                key
            };
            out.question = format!("True or False: {}.", shown.describe());
        }
        Format::MultipleChoice => {
            let key_text = option_text(pair, key);
            let mut seen: HashSet<String> = [key_text.clone()].into_iter().collect();
            let mut options: Vec<(Clause, String)> = vec![(key.clone(), key_text)];
            for c in wrong {
                let t = option_text(pair, &c);
                if seen.insert(t.clone()) {
                    options.push((c, t));
                }
                if options.len() == 4 {
                    break;
                }
            }
            if options.len() < 4 {
                return Err(QaError::InsufficientDistractors { found: options.len() - 1 });
            }
            options.shuffle(&mut rng);
            let index = options.iter().position(|(c, _)| c == key).expect("key is an option");
            let listing: Vec<String> = options.iter().zip(LETTERS).map(|((_, t), l)| format!("{l}. {t}")).collect();
            let lead = if pair.category.is_analytic() {
                pair.question.clone()
            } else {
                format!("{} Which of the following statements is correct?", pair.question)
            };
            out.question = format!("{lead}\n{}", listing.join("\n"));
            out.answer = format!("{}. {}", LETTERS[index], options[index].1);
            g.choices = options.into_iter().map(|(c, _)| c).collect();
            g.answer_index = Some(index);
        }
    }
    Ok(out)
}
