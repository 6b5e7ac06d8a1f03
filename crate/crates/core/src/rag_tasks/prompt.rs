//! Grounded prompt templates and the fact sentences they carry.
//!
//! Templates are versioned by id. The exact wording:
//!
//! `qa/v1` and `ground/v1`:
//! ```text
//! Scene facts:
//! - <fact>
//! ...
//!
//! Answer the question using only the scene facts above. If the facts do not
//! mention the object asked about, say so.
//! Question: <question>
//! Answer:
//! ```
//! (`ground/v1` additionally asks for the single object the question refers to.)
//!
//! `plan/v1`:
//! ```text
//! Scene facts:
//! - <fact>
//! ...
//!
//! Write a plan for the instruction as a comma-separated list of actions.
//! Allowed actions: find(x), navigate(x), grasp(x), place(x), where x is an
//! object label from the scene facts. Reply with the actions only.
//! Instruction: <instruction>
//! Plan:
//! ```
//!
//! Fact sentences:
//! * attribute: `<label> #<id>: <description>; center (x, y, z) m; extent (a, b, c) m`
//! * relation: `<subject label> <predicate> the <object label>`

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scene_model::NodeId;

pub const QA_TEMPLATE: &str = "qa/v1";
pub const GROUND_TEMPLATE: &str = "ground/v1";
pub const PLAN_TEMPLATE: &str = "plan/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedPrompt {
    pub context_facts: Vec<String>,
    pub question: String,
    pub template_id: String,
    pub rendered: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown prompt template {0:?}")]
pub struct UnknownTemplate(pub String);

impl GroundedPrompt {
    pub fn render(template_id: &str, context_facts: Vec<String>, question: &str) -> Result<Self, UnknownTemplate> {
        let mut out = String::from("Scene facts:\n");
        for f in &context_facts {
            out.push_str("- ");
            out.push_str(f);
            out.push('\n');
        }
        out.push('\n');
        match template_id {
            QA_TEMPLATE | GROUND_TEMPLATE => {
                out.push_str(
                    "Answer the question using only the scene facts above. If the facts do not\n\
                     mention the object asked about, say so.\n",
                );
                if template_id == GROUND_TEMPLATE {
                    out.push_str("Describe the single object the question refers to.\n");
                }
                out.push_str("Question: ");
                out.push_str(question);
                out.push_str("\nAnswer:");
            }
            PLAN_TEMPLATE => {
                out.push_str(
                    "Write a plan for the instruction as a comma-separated list of actions.\n\
                     Allowed actions: find(x), navigate(x), grasp(x), place(x), where x is an\n\
                     object label from the scene facts. Reply with the actions only.\n",
                );
                out.push_str("Instruction: ");
                out.push_str(question);
                out.push_str("\nPlan:");
            }
            other => return Err(UnknownTemplate(other.to_string())),
        }
        Ok(Self {
            context_facts,
            question: question.to_string(),
            template_id: template_id.to_string(),
            rendered: out,
        })
    }
}

/// One object instance as stated in an attribute fact.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeFact {
    pub label: String,
    pub id: NodeId,
    pub description: String,
    pub center: Vector3<f64>,
    pub extent: Vector3<f64>,
}

fn fmt_m(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn fmt_vec(v: &Vector3<f64>) -> String {
    format!("({}, {}, {})", fmt_m(v.x), fmt_m(v.y), fmt_m(v.z))
}

impl AttributeFact {
    pub fn render(&self) -> String {
        format!(
            "{} #{}: {}; center {} m; extent {} m",
            self.label,
            self.id,
            self.description,
            fmt_vec(&self.center),
            fmt_vec(&self.extent)
        )
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (head, rest) = s.split_once(": ")?;
        let (label, id) = head.rsplit_once(" #")?;
        let id: NodeId = id.parse().ok()?;
        let mut parts = rest.rsplitn(3, "; ");
        let extent = parse_vec(parts.next()?.strip_prefix("extent ")?.strip_suffix(" m")?)?;
        let center = parse_vec(parts.next()?.strip_prefix("center ")?.strip_suffix(" m")?)?;
        let description = parts.next()?.to_string();
        Some(Self {
            label: label.to_string(),
            id,
            description,
            center,
            extent,
        })
    }

    pub fn volume(&self) -> f64 {
        self.extent.x * self.extent.y * self.extent.z
    }
}

fn parse_vec(s: &str) -> Option<Vector3<f64>> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let xs: Vec<f64> = inner.split(", ").map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (xs.len() == 3).then(|| Vector3::new(xs[0], xs[1], xs[2]))
}

pub fn relation_fact(subject_label: &str, predicate: &str, object_label: &str) -> String {
    format!("{subject_label} {predicate} the {object_label}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_prompt_contains_facts_and_question() {
        let facts = vec!["chair at center".to_string(), "table on left".to_string()];
        let p = GroundedPrompt::render(QA_TEMPLATE, facts.clone(), "What is to the left of the chair?").unwrap();
        for f in &facts {
            assert!(p.rendered.contains(f.as_str()));
        }
        assert!(p.rendered.contains("What is to the left of the chair?"));
        assert!(GroundedPrompt::render("qa/v9", vec![], "x").is_err());
    }

    #[test]
    fn attribute_facts_round_trip() {
        let f = AttributeFact {
            label: "trash bin".into(),
            id: 7,
            description: "a grey bin; plastic".into(),
            center: Vector3::new(1.0, -2.5, 0.25),
            extent: Vector3::new(0.3, 0.3, -0.0),
        };
        let s = f.render();
        assert_eq!(s, "trash bin #7: a grey bin; plastic; center (1.000, -2.500, 0.250) m; extent (0.300, 0.300, 0.000) m");
        let back = AttributeFact::parse(&s).unwrap();
        assert_eq!(back.label, "trash bin");
        assert_eq!(back.id, 7);
        assert_eq!(back.description, "a grey bin; plastic");
        assert_eq!(back.center, f.center);
        assert!(AttributeFact::parse("mug on the table").is_none());
    }
}
