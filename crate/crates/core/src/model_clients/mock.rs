//! Deterministic offline backend.
//!
//! Embeddings are a hashed bag of words: every content token (or registered
//! synonym phrase) owns a unit vector drawn from ChaCha8 seeded with
//! SHA-256(`seed` ‖ key), and a text embeds to the normalized sum of its token
//! vectors. Members of a synonym group share a group direction:
//! `cos θ · group + sin θ · own` with `sin θ = 0.1`, so any two members have
//! cosine near 0.99. Registered crops embed as their caption perturbed the
//! same way.
//!
//! The completer reads the facts back out of the prompt and answers counting,
//! relation, location, and superlative questions by rule; planning prompts get
//! the fixed find/navigate/grasp/place sequence for a "verb the X prep the Y"
//! instruction.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    split_crop_ref, ClientError, Completer, EmbeddingVector, Encoder, LabelReply, LabelRequest, Labeler,
    PairContext, RelationRanker, RelationReply,
};
use crate::rag_tasks::prompt::{AttributeFact, GroundedPrompt, GROUND_TEMPLATE, PLAN_TEMPLATE, QA_TEMPLATE};
use crate::relations::{spatial_relation, RelationRules};
use crate::text::{content_tokens, singular, words};

pub const DEFAULT_MOCK_DIM: usize = 384;
pub const NOT_FOUND_ANSWER: &str = "The scene does not contain that object.";

const SYNONYM_SIN: f64 = 0.1;
const DEFAULT_FIXTURE: &str = include_str!("../../fixtures/mock_models.json");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockLabel {
    pub label: String,
    pub description: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockCrop {
    pub caption: String,
}

/// Contents of `mock_models.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixture {
    pub synonyms: Vec<Vec<String>>,
    /// Labeler replies keyed by crop reference.
    pub labels: BTreeMap<String, MockLabel>,
    /// Image fixtures keyed by crop reference.
    pub crops: BTreeMap<String, MockCrop>,
    /// Relation overrides keyed `"<subject label>|<object label>"`.
    pub predicates: BTreeMap<String, Vec<String>>,
    /// Completer overrides keyed by the exact question or instruction.
    pub completions: BTreeMap<String, String>,
    pub not_found: Option<String>,
}

impl MockFixture {
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_FIXTURE).expect("bundled fixture parses")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    /// Adds `other`'s entries; on key collisions `other` wins.
    pub fn merge(&mut self, other: MockFixture) {
        self.synonyms.extend(other.synonyms);
        self.labels.extend(other.labels);
        self.crops.extend(other.crops);
        self.predicates.extend(other.predicates);
        self.completions.extend(other.completions);
        if other.not_found.is_some() {
            self.not_found = other.not_found;
        }
    }
}

#[derive(Clone, Debug)]
pub struct MockModels {
    fixture: MockFixture,
    seed: u64,
    dim: usize,
    rules: RelationRules,
    image_root: Option<PathBuf>,
    /// Token phrase (space joined) → synonym group key.
    synonym_of: HashMap<String, String>,
    longest_phrase: usize,
}

impl MockModels {
    pub fn new(fixture: MockFixture, seed: u64) -> Self {
        let mut synonym_of = HashMap::new();
        let mut longest_phrase = 1;
        for group in &fixture.synonyms {
            let mut members: Vec<String> = group.iter().map(|m| phrase_key(m)).filter(|k| !k.is_empty()).collect();
            members.sort();
            members.dedup();
            let key = members.join("|");
            for m in members {
                longest_phrase = longest_phrase.max(m.split(' ').count());
                synonym_of.insert(m, key.clone());
            }
        }
        Self {
            fixture,
            seed,
            dim: DEFAULT_MOCK_DIM,
            rules: RelationRules::default(),
            image_root: None,
            synonym_of,
            longest_phrase,
        }
    }

    pub fn with_builtin_fixture(seed: u64) -> Self {
        Self::new(MockFixture::builtin(), seed)
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    pub fn with_rules(mut self, rules: RelationRules) -> Self {
        self.rules = rules;
        self
    }

    /// Directory against which relative crop image paths resolve.
    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    pub fn not_found(&self) -> &str {
        self.fixture.not_found.as_deref().unwrap_or(NOT_FOUND_ANSWER)
    }

    fn unit(&self, key: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(b"osgrag-mock\0");
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn blend(&self, shared: &[f64], own_key: &str) -> Vec<f64> {
        let cos = (1.0 - SYNONYM_SIN * SYNONYM_SIN).sqrt();
        let own = self.unit(own_key);
        shared.iter().zip(&own).map(|(g, o)| cos * g + SYNONYM_SIN * o).collect()
    }

    fn token_vector(&self, phrase: &str) -> Vec<f64> {
        match self.synonym_of.get(phrase) {
            Some(group) => self.blend(&self.unit(&format!("group:{group}")), &format!("tok:{phrase}")),
            None => self.unit(&format!("tok:{phrase}")),
        }
    }

    /// Content tokens with registered multi-word synonyms joined greedily
    /// (longest first).
    fn units(&self, text: &str) -> Vec<String> {
        let mut toks = content_tokens(text);
        if toks.is_empty() {
            toks = words(text).iter().map(|w| singular(w)).collect();
        }
        let mut out = Vec::with_capacity(toks.len());
        let mut i = 0;
        while i < toks.len() {
            let mut taken = 1;
            for len in (2..=self.longest_phrase.min(toks.len() - i)).rev() {
                if self.synonym_of.contains_key(&toks[i..i + len].join(" ")) {
                    taken = len;
                    break;
                }
            }
            out.push(toks[i..i + taken].join(" "));
            i += taken;
        }
        out
    }

    fn text_vector(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let units = self.units(text);
        if units.is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let mut acc = vec![0.0; self.dim];
        for u in &units {
            for (a, x) in acc.iter_mut().zip(self.token_vector(u)) {
                *a += x;
            }
        }
        Ok(acc)
    }

    fn resolve_path(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        match &self.image_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p,
        }
    }
}

/// Space-joined content tokens used as synonym keys.
fn phrase_key(s: &str) -> String {
    let toks = content_tokens(s);
    if toks.is_empty() {
        words(s).iter().map(|w| singular(w)).collect::<Vec<_>>().join(" ")
    } else {
        toks.join(" ")
    }
}

fn normalized(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::normalize_from(v)
}

impl Encoder for MockModels {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        Ok(normalized(&self.text_vector(text)?))
    }

    fn embed_image(&self, crop: &str) -> Result<EmbeddingVector, ClientError> {
        if crop.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let caption = if let Some(c) = self.fixture.crops.get(crop) {
            Some(c.caption.clone())
        } else {
            self.fixture
                .labels
                .get(crop)
                .map(|l| format!("{}: {}", l.label, l.description))
        };
        if let Some(caption) = caption {
            let shared = normalized(&self.text_vector(&caption)?);
            let shared: Vec<f64> = shared.values.iter().map(|&x| x as f64).collect();
            return Ok(normalized(&self.blend(&shared, &format!("crop:{crop}"))));
        }
        let (path, bbox) = split_crop_ref(crop);
        let bytes = std::fs::read(self.resolve_path(path))
            .map_err(|_| ClientError::UnresolvableReference(crop.to_string()))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(normalized(&self.unit(&format!("image:{hex}:{bbox:?}"))))
    }

    fn model_name(&self) -> String {
        format!("mock-bow-{}-seed{}", self.dim, self.seed)
    }
}

impl Labeler for MockModels {
    fn label(&self, request: &LabelRequest) -> Result<LabelReply, ClientError> {
        if let Some(l) = self.fixture.labels.get(&request.crop) {
            return Ok(LabelReply {
                label: l.label.clone(),
                description: l.description.clone(),
            });
        }
        match request.proposed_label.as_deref().map(str::trim) {
            Some(label) if !label.is_empty() => {
                let label = label.to_lowercase();
                Ok(LabelReply {
                    description: crate::text::with_article(&label),
                    label,
                })
            }
            _ => Err(ClientError::MalformedReply(format!("no label known for crop {:?}", request.crop))),
        }
    }
}

impl RelationRanker for MockModels {
    fn rank_predicates(&self, pair: &PairContext) -> Result<RelationReply, ClientError> {
        let (s, o) = (&pair.subject.label, &pair.object.label);
        if let Some(p) = self.fixture.predicates.get(&format!("{s}|{o}")) {
            return Ok(RelationReply {
                predicates: p.clone(),
                reversed: false,
            });
        }
        if let Some(p) = self.fixture.predicates.get(&format!("{o}|{s}")) {
            return Ok(RelationReply {
                predicates: p.clone(),
                reversed: true,
            });
        }
        Ok(match spatial_relation(&pair.subject.obb, &pair.object.obb, &self.rules) {
            Some(rel) => RelationReply {
                predicates: rel.predicates,
                reversed: rel.reversed,
            },
            None => RelationReply {
                predicates: vec!["far from".into()],
                reversed: false,
            },
        })
    }
}

impl Completer for MockModels {
    fn complete(&self, prompt: &GroundedPrompt) -> Result<String, ClientError> {
        if let Some(reply) = self.fixture.completions.get(prompt.question.trim()) {
            return Ok(reply.clone());
        }
        let ctx = Context::parse(&prompt.context_facts);
        match prompt.template_id.as_str() {
            QA_TEMPLATE | GROUND_TEMPLATE => Ok(ctx.answer(&prompt.question).unwrap_or_else(|| self.not_found().into())),
            PLAN_TEMPLATE => Ok(ctx.plan(&prompt.question)),
            other => Err(ClientError::MalformedReply(format!("unsupported template {other:?}"))),
        }
    }
}

/// Relation keywords in priority order.
const KEYWORDS: &[&str] = &[
    "left", "right", "front", "behind", "under", "below", "above", "near", "next", "beside", "on",
];
const PREPOSITIONS: &[&str] = &["on", "onto", "to", "into", "in", "inside", "at", "near", "under", "beside"];

struct Relation {
    subject: Vec<String>,
    predicate: Vec<String>,
    object: Vec<String>,
}

/// Facts decoded from a prompt.
struct Context {
    attributes: Vec<AttributeFact>,
    relations: Vec<Relation>,
    /// Facts that fit neither sentence shape, as singular word lists.
    free: Vec<Vec<String>>,
    /// Every label mentioned, as singular word lists, longest first.
    labels: Vec<Vec<String>>,
}

fn sing_words(s: &str) -> Vec<String> {
    words(s).iter().map(|w| singular(w)).collect()
}

fn find_at(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}

impl Context {
    fn parse(facts: &[String]) -> Self {
        let mut attributes = Vec::new();
        let mut rest = Vec::new();
        for f in facts {
            match AttributeFact::parse(f) {
                Some(a) => attributes.push(a),
                None => rest.push(f.as_str()),
            }
        }
        let mut labels: Vec<Vec<String>> = attributes.iter().map(|a| sing_words(&a.label)).collect();
        let mut relations = Vec::new();
        let mut free = Vec::new();
        for f in rest {
            if let Some((left, obj)) = f.rsplit_once(" the ") {
                let lw = sing_words(left);
                let known = labels
                    .iter()
                    .filter(|l| lw.len() > l.len() && lw.starts_with(l))
                    .max_by_key(|l| l.len())
                    .cloned();
                let subject = known.unwrap_or_else(|| lw.iter().take(1).cloned().collect());
                if !subject.is_empty() && lw.len() > subject.len() {
                    relations.push(Relation {
                        predicate: lw[subject.len()..].to_vec(),
                        object: sing_words(obj),
                        subject,
                    });
                    continue;
                }
            }
            free.push(sing_words(f));
        }
        for r in &relations {
            labels.push(r.subject.clone());
            labels.push(r.object.clone());
        }
        for f in &free {
            if let Some(first) = content_tokens(&f.join(" ")).into_iter().next() {
                labels.push(vec![first]);
            }
        }
        labels.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        labels.dedup();
        Self {
            attributes,
            relations,
            free,
            labels,
        }
    }

    /// Longest mentioned label occurring in `q`, with its position.
    fn anchor(&self, q: &[String]) -> Option<(Vec<String>, usize)> {
        self.labels
            .iter()
            .find_map(|l| find_at(q, l).map(|i| (l.clone(), i)))
    }

    fn volume_of(&self, label: &[String]) -> f64 {
        self.attributes
            .iter()
            .filter(|a| sing_words(&a.label) == label)
            .map(AttributeFact::volume)
            .fold(0.0, f64::max)
    }

    fn answer(&self, question: &str) -> Option<String> {
        let q = sing_words(question);
        let has = |w: &str| q.iter().any(|x| x == w);
        if has("many") {
            let (label, _) = self.anchor(&q)?;
            let n = self.attributes.iter().filter(|a| sing_words(&a.label) == label).count();
            return (n > 0).then(|| n.to_string());
        }
        let superlative = if has("largest") || has("biggest") {
            Some(true)
        } else if has("smallest") {
            Some(false)
        } else {
            None
        };
        let keyword = KEYWORDS.iter().find(|k| has(k)).copied();
        let anchor = self.anchor(&q);
        if let Some(kw) = keyword {
            let (label, at) = anchor?;
            let kpos = q.iter().position(|w| w == kw).unwrap_or(0);
            let anchor_is_object = kpos < at;
            let mut found: Vec<Vec<String>> = Vec::new();
            for r in &self.relations {
                if !r.predicate.iter().any(|w| w == kw) {
                    continue;
                }
                let hit = if anchor_is_object && r.object == label {
                    Some(&r.subject)
                } else if !anchor_is_object && r.subject == label {
                    Some(&r.object)
                } else {
                    None
                };
                if let Some(h) = hit {
                    if !found.contains(h) {
                        found.push(h.clone());
                    }
                }
            }
            for f in &self.free {
                if f.iter().any(|w| w == kw) && find_at(f, &label).is_none() {
                    if let Some(noun) = content_tokens(&f.join(" ")).into_iter().next() {
                        let noun = vec![noun];
                        if !found.contains(&noun) {
                            found.push(noun);
                        }
                    }
                }
            }
            if found.is_empty() {
                return None;
            }
            if let Some(largest) = superlative {
                return self.pick_by_volume(&found, largest).map(|l| l.join(" "));
            }
            return Some(found.iter().map(|l| l.join(" ")).collect::<Vec<_>>().join(" and "));
        }
        if let Some(largest) = superlative {
            let mut all: Vec<Vec<String>> = self.attributes.iter().map(|a| sing_words(&a.label)).collect();
            all.dedup();
            return self.pick_by_volume(&all, largest).map(|l| l.join(" "));
        }
        let (label, _) = anchor?;
        if has("where") {
            if let Some(r) = self.relations.iter().find(|r| r.subject == label) {
                return Some(format!("{} {} the {}", r.subject.join(" "), r.predicate.join(" "), r.object.join(" ")));
            }
        }
        if let Some(a) = self.attributes.iter().find(|a| sing_words(&a.label) == label) {
            return Some(a.description.clone());
        }
        self.free.iter().find(|f| find_at(f, &label).is_some()).map(|f| f.join(" "))
    }

    fn pick_by_volume<'a>(&self, labels: &'a [Vec<String>], largest: bool) -> Option<&'a Vec<String>> {
        let mut best: Option<(&Vec<String>, f64)> = None;
        for l in labels {
            let v = self.volume_of(l);
            let better = match best {
                None => true,
                Some((_, bv)) => (largest && v > bv) || (!largest && v < bv),
            };
            if better {
                best = Some((l, v));
            }
        }
        best.map(|(l, _)| l)
    }

    /// `<verb> [the] <modifiers> <target> <prep> [the] <destination>`.
    fn plan(&self, instruction: &str) -> String {
        let ws = sing_words(instruction);
        let body: Vec<String> = ws.iter().skip(1).filter(|w| *w != "up").cloned().collect();
        let split = body.iter().position(|w| PREPOSITIONS.contains(&w.as_str()));
        let strip = |p: &[String]| -> Vec<String> {
            p.iter().filter(|w| !matches!(w.as_str(), "a" | "an" | "the")).cloned().collect()
        };
        let (target_phrase, dest_phrase) = match split {
            Some(i) => (strip(&body[..i]), strip(&body[i + 1..])),
            None => (strip(&body), Vec::new()),
        };
        let (target, modifiers) = self.head_noun(&target_phrase);
        if target.is_empty() {
            return String::new();
        }
        let mut steps = Vec::new();
        if modifiers {
            steps.push(format!("find({target})"));
        }
        steps.push(format!("navigate({target})"));
        steps.push(format!("grasp({target})"));
        let (dest, _) = self.head_noun(&dest_phrase);
        if !dest.is_empty() {
            steps.push(format!("navigate({dest})"));
            steps.push(format!("place({target})"));
        }
        steps.join(", ")
    }

    /// Known label inside the phrase (else its last word) and whether other
    /// words qualify it.
    fn head_noun(&self, phrase: &[String]) -> (String, bool) {
        if phrase.is_empty() {
            return (String::new(), false);
        }
        for l in &self.labels {
            if let Some(i) = find_at(phrase, l) {
                return (l.join(" "), phrase.len() > l.len() || i > 0);
            }
        }
        (phrase[phrase.len() - 1].clone(), phrase.len() > 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Obb;
    use crate::model_clients::PairObject;
    use nalgebra::Vector3;

    fn mock() -> MockModels {
        MockModels::with_builtin_fixture(7)
    }

    fn prompt(template: &str, facts: &[&str], q: &str) -> GroundedPrompt {
        GroundedPrompt::render(template, facts.iter().map(|s| s.to_string()).collect(), q).unwrap()
    }

    #[test]
    fn text_embeddings_are_deterministic_and_normalized() {
        let m = mock();
        let a = m.embed_text("chair").unwrap();
        let b = m.embed_text("chair").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-6);
        assert_eq!(m.embed_text(""), Err(ClientError::EmptyInput));
        assert_eq!(m.embed_text("chairs"), Ok(a));
    }

    #[test]
    fn synonyms_are_close_and_strangers_are_not() {
        let m = mock();
        let sofa = m.embed_text("sofa").unwrap();
        let couch = m.embed_text("couch").unwrap();
        assert!(sofa.cosine(&couch) >= 0.97);
        let lamp = m.embed_text("lamp").unwrap();
        assert!(sofa.cosine(&lamp) < 0.5);
        assert!(m.embed_text("trash bin").unwrap().cosine(&m.embed_text("garbage can").unwrap()) >= 0.97);
    }

    #[test]
    fn seed_changes_vectors() {
        let a = MockModels::with_builtin_fixture(1).embed_text("chair").unwrap();
        let b = MockModels::with_builtin_fixture(2).embed_text("chair").unwrap();
        assert!(a.cosine(&b) < 0.5);
    }

    #[test]
    fn registered_crop_matches_caption() {
        let m = mock();
        let img = m.embed_image("chair_crop_0").unwrap();
        assert_eq!(img, m.embed_image("chair_crop_0").unwrap());
        let cap = m.embed_text(&m.fixture().crops["chair_crop_0"].caption).unwrap();
        assert!(img.cosine(&cap) >= 0.97);
        assert!(matches!(
            m.embed_image("/no/such/file.png"),
            Err(ClientError::UnresolvableReference(_))
        ));
    }

    #[test]
    fn labeler_uses_fixture_then_hint() {
        let m = mock();
        let r = m
            .label(&LabelRequest {
                crop: "box_red_0".into(),
                proposed_label: None,
            })
            .unwrap();
        assert_eq!((r.label.as_str(), r.description.as_str()), ("box", "a red box"));
        let r = m
            .label(&LabelRequest {
                crop: "frame_000001.color.png#0,0,4,4".into(),
                proposed_label: Some("Mug".into()),
            })
            .unwrap();
        assert_eq!(r.label, "mug");
        assert!(m
            .label(&LabelRequest {
                crop: "unknown".into(),
                proposed_label: None
            })
            .is_err());
    }

    #[test]
    fn relator_puts_on_first_for_stacked_boxes() {
        let m = mock();
        let obj = |id, label: &str, c: [f64; 3], e: [f64; 3]| PairObject {
            id,
            label: label.into(),
            description: String::new(),
            crop: None,
            obb: Obb::axis_aligned(Vector3::from(c), Vector3::from(e)).unwrap(),
        };
        let ctx = PairContext {
            subject: obj(1, "box", [0.0, 0.0, 0.6], [0.2, 0.2, 0.2]),
            object: obj(2, "crate", [0.0, 0.0, 0.25], [0.5, 0.5, 0.5]),
            distance: 0.35,
        };
        let r = m.rank_predicates(&ctx).unwrap();
        assert_eq!(r.predicates, vec!["on", "above", "near", "next to", "touching"]);
        assert!(!r.reversed);
    }

    #[test]
    fn completer_counts_and_relates() {
        let m = mock();
        let p = prompt(QA_TEMPLATE, &["chair at center", "table on left"], "What is to the left of the chair?");
        assert_eq!(m.complete(&p).unwrap(), "table");
        let facts = [
            "chair #1: a red chair; center (0.000, 0.000, 0.400) m; extent (0.500, 0.500, 0.800) m",
            "chair #2: a blue chair; center (1.000, 0.000, 0.400) m; extent (0.500, 0.500, 0.800) m",
            "mug #3: a white mug; center (2.000, 0.000, 0.800) m; extent (0.100, 0.100, 0.100) m",
            "table #4: a wooden table; center (2.000, 0.000, 0.350) m; extent (1.000, 0.800, 0.700) m",
            "mug on the table",
        ];
        let p = prompt(QA_TEMPLATE, &facts, "How many chairs are there in the room?");
        assert_eq!(m.complete(&p).unwrap(), "2");
        let p = prompt(QA_TEMPLATE, &facts, "What is the mug on?");
        assert_eq!(m.complete(&p).unwrap(), "table");
        let p = prompt(QA_TEMPLATE, &facts, "What is the largest object?");
        assert_eq!(m.complete(&p).unwrap(), "table");
        let p = prompt(QA_TEMPLATE, &facts, "How many sofas are there?");
        assert_eq!(m.complete(&p).unwrap(), NOT_FOUND_ANSWER);
    }

    #[test]
    fn completer_plans() {
        let m = mock();
        let facts = [
            "mug #1: a mug; center (0.000, 0.000, 0.800) m; extent (0.100, 0.100, 0.100) m",
            "shelf #2: a shelf; center (1.000, 0.000, 0.800) m; extent (0.800, 0.300, 1.600) m",
            "book #3: a book with a blue cover; center (2.000, 0.000, 0.800) m; extent (0.200, 0.150, 0.040) m",
        ];
        let p = prompt(PLAN_TEMPLATE, &facts, "Put the mug on the shelf");
        assert_eq!(m.complete(&p).unwrap(), "navigate(mug), grasp(mug), navigate(shelf), place(mug)");
        let p = prompt(PLAN_TEMPLATE, &facts, "Move the blue cover book to the shelf");
        assert_eq!(
            m.complete(&p).unwrap(),
            "find(book), navigate(book), grasp(book), navigate(shelf), place(book)"
        );
    }

    #[test]
    fn completion_override_wins() {
        let m = mock();
        let p = prompt(PLAN_TEMPLATE, &[], "Jump on the mug");
        assert_eq!(m.complete(&p).unwrap(), "jump(mug)");
    }
}
