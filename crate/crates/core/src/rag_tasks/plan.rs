//! Action plans over the grammar `find(x) | navigate(x) | grasp(x) | place(x)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scene_model::{NodeId, SceneGraph};
use crate::text::{singular, words};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Find,
    Navigate,
    Grasp,
    Place,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Find => "find",
            Action::Navigate => "navigate",
            Action::Grasp => "grasp",
            Action::Place => "place",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "find" => Some(Action::Find),
            "navigate" => Some(Action::Navigate),
            "grasp" => Some(Action::Grasp),
            "place" => Some(Action::Place),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    /// Normalized object argument.
    pub target: String,
}

impl Step {
    pub fn new(action: Action, target: &str) -> Self {
        Self {
            action,
            target: normalize_target(target),
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.action.as_str(), self.target)
    }
}

/// Lowercase singular words joined by single spaces, articles dropped.
pub fn normalize_target(s: &str) -> String {
    words(s)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .map(|w| singular(&w))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<Step>,
    /// Action argument → bound node.
    pub target_bindings: BTreeMap<String, NodeId>,
}

impl Plan {
    pub fn render(&self) -> String {
        render_steps(&self.steps)
    }
}

pub fn render_steps(steps: &[Step]) -> String {
    steps.iter().map(Step::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan does not follow the action grammar: {0}")]
    PlanParseFailure(String),
    #[error("plan argument {0:?} matches no scene object")]
    UnboundTarget(String),
}

/// Strict parse of `action(arg)` items separated by commas, arrows (`→`,
/// `->`), or newlines.
pub fn parse_plan(text: &str) -> Result<Vec<Step>, PlanError> {
    let unified = text.replace("->", ",").replace(['→', '\n'], ",");
    let mut steps = Vec::new();
    for item in unified.split(',') {
        let item = item.trim().trim_end_matches('.').trim();
        if item.is_empty() {
            continue;
        }
        let fail = || PlanError::PlanParseFailure(item.to_string());
        let (verb, rest) = item.split_once('(').ok_or_else(fail)?;
        let arg = rest.strip_suffix(')').ok_or_else(fail)?;
        if arg.contains('(') || arg.contains(')') {
            return Err(fail());
        }
        let action = Action::parse(verb).ok_or_else(fail)?;
        let target = normalize_target(arg);
        if target.is_empty() {
            return Err(fail());
        }
        steps.push(Step { action, target });
    }
    if steps.is_empty() {
        return Err(PlanError::PlanParseFailure(text.trim().to_string()));
    }
    Ok(steps)
}

/// Ordering rules: each `grasp(x)` follows a `navigate(x)` with no other
/// navigation in between; each `place(x)` follows a `grasp(x)` with no other
/// placement in between.
pub fn follows_grammar(steps: &[Step]) -> bool {
    for (i, s) in steps.iter().enumerate() {
        let before = &steps[..i];
        match s.action {
            Action::Grasp => {
                let last_nav = before.iter().rev().find(|p| p.action == Action::Navigate);
                if last_nav.is_none_or(|p| p.target != s.target) {
                    return false;
                }
            }
            Action::Place => {
                let last = before
                    .iter()
                    .rev()
                    .find(|p| p.action == Action::Place || (p.action == Action::Grasp && p.target == s.target));
                if last.is_none_or(|p| p.action != Action::Grasp) {
                    return false;
                }
            }
            Action::Find | Action::Navigate => {}
        }
    }
    true
}

fn label_candidates(target: &str, graph: &SceneGraph) -> Vec<NodeId> {
    let exact: Vec<NodeId> = graph
        .nodes
        .values()
        .filter(|n| normalize_target(&n.label) == target)
        .map(|n| n.id)
        .collect();
    if !exact.is_empty() {
        return exact;
    }
    // "coffee mug" still binds to a node labeled "mug"
    graph
        .nodes
        .values()
        .filter(|n| {
            let l = normalize_target(&n.label);
            !l.is_empty() && target.ends_with(&format!(" {l}"))
        })
        .map(|n| n.id)
        .collect()
}

/// Binds every distinct argument to a node. Among several nodes with the
/// label, the one whose description shares most words with `instruction`
/// wins, then the lowest id.
pub fn bind_plan(steps: Vec<Step>, graph: &SceneGraph, instruction: &str) -> Result<Plan, PlanError> {
    let cue: Vec<String> = words(instruction).iter().map(|w| singular(w)).collect();
    let mut bindings = BTreeMap::new();
    for s in &steps {
        if bindings.contains_key(&s.target) {
            continue;
        }
        let cands = label_candidates(&s.target, graph);
        let best = cands
            .iter()
            .map(|id| {
                let desc: Vec<String> = words(&graph.nodes[id].description).iter().map(|w| singular(w)).collect();
                let overlap = desc.iter().filter(|w| cue.contains(w)).count();
                (std::cmp::Reverse(overlap), *id)
            })
            .min()
            .map(|(_, id)| id)
            .ok_or_else(|| PlanError::UnboundTarget(s.target.clone()))?;
        bindings.insert(s.target.clone(), best);
    }
    Ok(Plan {
        steps,
        target_bindings: bindings,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReport {
    /// Step sequence equals the reference (false without a reference).
    pub correct: bool,
    pub executable: bool,
    /// Steps absent from the reference (multiset difference).
    pub wrong_actions: usize,
    /// Reference steps absent from the plan (multiset difference).
    pub missing_actions: usize,
    /// Reference length, 0 without a reference.
    pub reference_steps: usize,
}

fn multiset(steps: &[Step]) -> BTreeMap<&Step, usize> {
    let mut m = BTreeMap::new();
    for s in steps {
        *m.entry(s).or_insert(0) += 1;
    }
    m
}

fn excess(a: &BTreeMap<&Step, usize>, b: &BTreeMap<&Step, usize>) -> usize {
    a.iter().map(|(s, &n)| n.saturating_sub(b.get(s).copied().unwrap_or(0))).sum()
}

pub fn validate_plan(steps: &[Step], graph: &SceneGraph, reference: Option<&[Step]>) -> PlanReport {
    let binds = steps.iter().all(|s| !label_candidates(&s.target, graph).is_empty());
    let executable = !steps.is_empty() && follows_grammar(steps) && binds;
    match reference {
        None => PlanReport {
            correct: false,
            executable,
            wrong_actions: 0,
            missing_actions: 0,
            reference_steps: 0,
        },
        Some(r) => {
            let (mp, mr) = (multiset(steps), multiset(r));
            PlanReport {
                correct: steps == r,
                executable,
                wrong_actions: excess(&mp, &mr),
                missing_actions: excess(&mr, &mp),
                reference_steps: r.len(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Obb;
    use crate::scene_model::{Confidence, ObjectNode};
    use nalgebra::Vector3;

    fn scene(labels: &[(&str, &str)]) -> SceneGraph {
        let mut g = SceneGraph::empty(0);
        for (i, (label, desc)) in labels.iter().enumerate() {
            let id = i as NodeId + 1;
            g.nodes.insert(
                id,
                ObjectNode {
                    id,
                    label: label.to_string(),
                    description: desc.to_string(),
                    feature: vec![],
                    obb: Obb::axis_aligned(Vector3::new(i as f64, 0.0, 0.5), Vector3::new(0.3, 0.3, 0.3)).unwrap(),
                    best_view: None,
                    confidence: Confidence { alpha: 1.0, beta: 1.0 },
                    node_category: "object".into(),
                    point_count: 1,
                },
            );
        }
        g
    }

    #[test]
    fn parses_all_separators() {
        let a = parse_plan("navigate(mug), grasp(mug), navigate(shelf), place(mug)").unwrap();
        let b = parse_plan("navigate(mug) → grasp(mug) -> navigate(shelf)\nplace(Mugs).").unwrap();
        assert_eq!(a, b);
        assert_eq!(render_steps(&a), "navigate(mug), grasp(mug), navigate(shelf), place(mug)");
        assert!(matches!(parse_plan("jump(mug)"), Err(PlanError::PlanParseFailure(_))));
        assert!(parse_plan("navigate mug").is_err());
        assert!(parse_plan("").is_err());
    }

    #[test]
    fn grammar_ordering() {
        let ok = parse_plan("find(book), navigate(book), grasp(book), navigate(shelf), place(book)").unwrap();
        assert!(follows_grammar(&ok));
        assert!(!follows_grammar(&parse_plan("navigate(mug), place(mug)").unwrap()));
        assert!(!follows_grammar(&parse_plan("grasp(mug)").unwrap()));
        assert!(!follows_grammar(&parse_plan("navigate(cup), grasp(mug)").unwrap()));
        assert!(!follows_grammar(
            &parse_plan("navigate(mug), grasp(mug), place(mug), place(mug)").unwrap()
        ));
    }

    #[test]
    fn binding_prefers_described_instance() {
        let g = scene(&[("book", "a red book"), ("book", "a book with a blue cover"), ("shelf", "a shelf")]);
        let steps = parse_plan("find(book), navigate(book), grasp(book), navigate(shelf), place(book)").unwrap();
        let plan = bind_plan(steps, &g, "Move the blue cover book to the shelf").unwrap();
        assert_eq!(plan.target_bindings["book"], 2);
        assert_eq!(plan.target_bindings["shelf"], 3);
        let bad = parse_plan("navigate(lamp)").unwrap();
        assert_eq!(bind_plan(bad, &g, ""), Err(PlanError::UnboundTarget("lamp".into())));
        let coffee = parse_plan("navigate(coffee book)").unwrap();
        assert!(bind_plan(coffee, &g, "").is_ok());
    }

    #[test]
    fn validation_against_reference() {
        let g = scene(&[("mug", "a mug"), ("shelf", "a shelf")]);
        let reference = parse_plan("navigate(mug), grasp(mug), navigate(shelf), place(mug)").unwrap();
        let r = validate_plan(&reference, &g, Some(&reference));
        assert!(r.correct && r.executable);
        assert_eq!((r.wrong_actions, r.missing_actions), (0, 0));
        let no_grasp = parse_plan("navigate(mug), navigate(shelf), place(mug)").unwrap();
        let r = validate_plan(&no_grasp, &g, Some(&reference));
        assert!(!r.correct && !r.executable);
        assert_eq!((r.wrong_actions, r.missing_actions), (0, 1));
    }
}
