//! Synthetic datasets: key-value recall, counterfactual edits and one-hop
//! rule reasoning.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::KnowledgeSample;
use crate::rng::{self, StdRng};
use crate::{Error, Result};

fn letters(rng: &mut StdRng, n: usize, base: u8) -> String {
    (0..n).map(|_| (base + rng.gen_range(0..26u8)) as char).collect()
}

/// `n_entities` distinct three-letter upper-case keys, each bound to a
/// random three-letter lower-case value. Each sample asks for one key; the
/// knowledge holds its fact plus `n_distractors` facts about keys that are
/// never asked. Entities are split 80/10/10.
pub fn gen_kv_dataset(
    n_entities: usize,
    n_distractors: usize,
    seed: u64,
) -> Result<(Vec<KnowledgeSample>, Vec<KnowledgeSample>, Vec<KnowledgeSample>)> {
    if n_entities < 3 {
        return Err(Error::Invalid(format!("need at least 3 entities for three splits, got {n_entities}")));
    }
    if n_entities + n_distractors > 26 * 26 * 26 / 2 {
        return Err(Error::Invalid("not enough distinct three-letter keys".into()));
    }
    let mut r = rng::stream(seed, "data.kv", 0);
    let mut seen = BTreeSet::new();
    let mut fresh_key = |r: &mut StdRng| loop {
        let k = letters(r, 3, b'A');
        if seen.insert(k.clone()) {
            break k;
        }
    };
    let keys: Vec<String> = (0..n_entities).map(|_| fresh_key(&mut r)).collect();
    let decoys: Vec<String> = (0..n_distractors.max(1) * 8).map(|_| fresh_key(&mut r)).collect();
    let mut samples = Vec::with_capacity(n_entities);
    for key in &keys {
        let value = letters(&mut r, 3, b'a');
        let mut knowledge = Vec::with_capacity(1 + n_distractors);
        knowledge.push(format!("{key} is {value}"));
        for d in decoys.choose_multiple(&mut r, n_distractors) {
            knowledge.push(format!("{d} is {}", letters(&mut r, 3, b'a')));
        }
        knowledge.shuffle(&mut r);
        samples.push(KnowledgeSample::new(knowledge, format!("what is {key}?"), value));
    }
    let n_train = (n_entities * 8 / 10).max(1);
    let n_val = ((n_entities - n_train) / 2).max(1);
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok((samples, val, test))
}

/// A counterfactual edit over a synthetic world of subjects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSample {
    pub subject: String,
    pub relation: String,
    pub true_object: String,
    pub counter_object: String,
    /// The prompt the edit is trained on.
    pub prompt: String,
    pub paraphrases: Vec<String>,
    /// Prompts about other subjects whose answer is `true_object`.
    pub neighborhood: Vec<String>,
}

impl EditSample {
    /// The edit as a training sample with empty knowledge.
    pub fn edit_sample(&self) -> KnowledgeSample {
        KnowledgeSample::new(Vec::new(), self.prompt.clone(), self.counter_object.clone())
    }

    /// Every prompt of the record paired with the unedited answer.
    pub fn true_facts(&self) -> Vec<KnowledgeSample> {
        core::iter::once(&self.prompt)
            .chain(&self.paraphrases)
            .chain(&self.neighborhood)
            .map(|p| KnowledgeSample::new(Vec::new(), p.clone(), self.true_object.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Invalid(format!("edit for {}: {why}", self.subject)));
        if self.counter_object == self.true_object {
            return bad("counter object equals true object");
        }
        if self.paraphrases.is_empty() || self.neighborhood.is_empty() {
            return bad("empty prompt list");
        }
        if self.neighborhood.iter().any(|p| p.split(' ').any(|w| w == self.subject)) {
            return bad("neighborhood prompt mentions the edited subject");
        }
        Ok(())
    }
}

struct Relation {
    name: &'static str,
    templates: [&'static str; 3],
    objects: &'static [&'static str],
}

const RELATIONS: [Relation; 4] = [
    Relation {
        name: "lives_in",
        templates: ["{} lives in", "The home of {} is", "{} resides in"],
        objects: &["Oslo", "Lima", "Pune", "Kiev", "Rome", "Nice"],
    },
    Relation {
        name: "speaks",
        templates: ["{} speaks", "The language of {} is", "{} talks in"],
        objects: &["Dutch", "Hindi", "Greek", "Malay", "Czech", "Tamil"],
    },
    Relation {
        name: "plays",
        templates: ["{} plays", "The sport of {} is", "{} competes in"],
        objects: &["golf", "polo", "judo", "chess", "rugby", "darts"],
    },
    Relation {
        name: "works_as",
        templates: ["{} works as a", "The job of {} is", "{} is employed as a"],
        objects: &["baker", "nurse", "pilot", "judge", "miner", "tutor"],
    },
];

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ren", "to", "sa", "vi", "dor", "na", "pe", "ju", "bel", "fa", "qui", "zo", "han"];

fn name(r: &mut StdRng) -> String {
    let n = r.gen_range(2..4);
    let mut s: String = (0..n).map(|_| *SYLLABLES.choose(r).unwrap()).collect();
    s[..1].make_ascii_uppercase();
    s
}

/// `n_edits` edits; every subject, including neighbours, is distinct.
pub fn gen_counterfact_dataset(n_edits: usize, seed: u64) -> Result<Vec<EditSample>> {
    let mut r = rng::stream(seed, "data.counterfact", 0);
    let mut used = BTreeSet::new();
    let mut fresh = |r: &mut StdRng| loop {
        let s = name(r);
        if used.insert(s.clone()) {
            break s;
        }
    };
    let mut out = Vec::with_capacity(n_edits);
    for i in 0..n_edits {
        let rel = &RELATIONS[i % RELATIONS.len()];
        let subject = fresh(&mut r);
        let true_object = rel.objects.choose(&mut r).unwrap().to_string();
        let counter_object = loop {
            let o = *rel.objects.choose(&mut r).unwrap();
            if o != true_object {
                break o.to_string();
            }
        };
        let fill = |t: &str, s: &str| t.replace("{}", s);
        let neighborhood = (0..2).map(|j| fill(rel.templates[j], &fresh(&mut r))).collect();
        let edit = EditSample {
            prompt: fill(rel.templates[0], &subject),
            paraphrases: rel.templates[1..].iter().map(|t| fill(t, &subject)).collect(),
            subject,
            relation: rel.name.to_string(),
            true_object,
            counter_object,
            neighborhood,
        };
        edit.validate()?;
        out.push(edit);
    }
    Ok(out)
}

pub const LABELS: [&str; 3] = ["True", "False", "Unknown"];

const PEOPLE: [&str; 12] = ["Anne", "Bob", "Carl", "Dave", "Erin", "Fay", "Gus", "Hal", "Ivy", "Jon", "Kim", "Lou"];
const ATTRIBUTES: [&str; 10] = ["red", "big", "kind", "cold", "young", "quiet", "round", "rough", "smart", "blue"];

/// One-hop rule reasoning. Knowledge holds two facts and two rules;
/// labels cycle through True, False, Unknown before shuffling, so the
/// classes are balanced up to one sample.
pub fn gen_rules_dataset(n_samples: usize, seed: u64) -> Result<Vec<KnowledgeSample>> {
    let mut r = rng::stream(seed, "data.rules", 0);
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let people: Vec<&str> = PEOPLE.choose_multiple(&mut r, 3).copied().collect();
        let attrs: Vec<&str> = ATTRIBUTES.choose_multiple(&mut r, 5).copied().collect();
        let (x, y, stranger) = (people[0], people[1], people[2]);
        let (a, b, c, d, e) = (attrs[0], attrs[1], attrs[2], attrs[3], attrs[4]);
        // x is a; y is not c; if someone is a then they are b;
        // if someone is c then they are not d.
        let knowledge = alloc::vec![
            format!("{x} is {a}."),
            format!("{y} is not {c}."),
            format!("If someone is {a} then they are {b}."),
            format!("If someone is {c} then they are not {d}."),
        ];
        let label = LABELS[i % 3];
        let pick = r.gen_range(0..3);
        let source = match (label, pick) {
            ("True", 0) => format!("{x} is {a}."),
            ("True", 1) => format!("{x} is {b}."),
            ("True", _) => format!("{y} is not {c}."),
            ("False", 0) => format!("{x} is not {a}."),
            ("False", 1) => format!("{x} is not {b}."),
            ("False", _) => format!("{y} is {c}."),
            (_, 0) => format!("{stranger} is {a}."),
            (_, 1) => format!("{x} is {e}."),
            _ => format!("{y} is {d}."),
        };
        let mut knowledge = knowledge;
        knowledge.shuffle(&mut r);
        out.push(KnowledgeSample::new(knowledge, source, label));
    }
    out.shuffle(&mut r);
    Ok(out)
}

/// Sidecar manifest lines (`key=value`) describing a generator run.
pub fn seed_manifest(entries: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_facts_and_disjoint_splits() {
        let (train, val, test) = gen_kv_dataset(50, 0, 3).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (40, 5, 5));
        for s in train.iter().chain(&val).chain(&test) {
            assert_eq!(s.knowledge.len(), 1);
            assert!(s.knowledge[0].ends_with(&format!(" is {}", s.target)));
        }
        let keys = |v: &[KnowledgeSample]| -> BTreeSet<String> { v.iter().map(|s| s.source.clone()).collect() };
        assert!(keys(&train).is_disjoint(&keys(&val)));
        assert!(keys(&train).is_disjoint(&keys(&test)));
        assert!(keys(&val).is_disjoint(&keys(&test)));
        let (t2, _, _) = gen_kv_dataset(50, 0, 3).unwrap();
        assert_eq!(train, t2);
    }

    #[test]
    fn kv_distractors_never_queried() {
        let (train, _, _) = gen_kv_dataset(30, 2, 1).unwrap();
        for s in &train {
            assert_eq!(s.knowledge.len(), 3);
            let key = &s.source[8..11];
            assert_eq!(s.knowledge.iter().filter(|k| k.starts_with(key)).count(), 1);
            assert!(s.knowledge.iter().any(|k| *k == format!("{key} is {}", s.target)));
        }
    }

    #[test]
    fn counterfacts_are_well_formed() {
        let edits = gen_counterfact_dataset(20, 7).unwrap();
        assert_eq!(edits.len(), 20);
        for e in &edits {
            e.validate().unwrap();
            assert!(e.paraphrases.len() >= 2 && e.neighborhood.len() >= 2);
            let rel = RELATIONS.iter().find(|r| r.name == e.relation).unwrap();
            assert!(rel.objects.contains(&e.counter_object.as_str()));
            assert!(e.prompt.contains(&e.subject));
        }
    }

    #[test]
    fn rules_labels_are_balanced_and_consistent() {
        let data = gen_rules_dataset(300, 11).unwrap();
        for label in LABELS {
            let n = data.iter().filter(|s| s.target == label).count();
            assert!((n as f64 / 300.0 - 1.0 / 3.0).abs() < 0.05, "{label}: {n}");
        }
        for s in &data {
            if s.knowledge.contains(&s.source) {
                assert_eq!(s.target, "True");
            }
            let subject = s.source.split(' ').next().unwrap();
            if !s.knowledge.iter().any(|k| k.starts_with(subject)) {
                assert_eq!(s.target, "Unknown");
            }
        }
    }
}
