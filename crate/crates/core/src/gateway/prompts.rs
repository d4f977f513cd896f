//! Judge prompt templates. Templates are tunable data, not code: defaults are
//! embedded at compile time and a TOML file can override any of them.

use serde::Deserialize;

use super::{GatewayError, RubricSpec};
use crate::datamodel::{Message, Role};

/// The four judge templates the gateway renders. Placeholders are literal
/// brace tokens (`{gold}`, `{candidate}`, `{transcript}`, `{context}`,
/// `{dimensions}`) substituted verbatim — no escaping rules.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub equivalence_system: String,
    pub equivalence_user: String,
    pub rubric_system: String,
    pub rubric_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            equivalence_system: include_str!("../../assets/judge_equivalence_system.txt")
                .trim_end()
                .to_string(),
            equivalence_user: include_str!("../../assets/judge_equivalence_user.txt")
                .trim_end()
                .to_string(),
            rubric_system: include_str!("../../assets/judge_rubric_system.txt").trim_end().to_string(),
            rubric_user: include_str!("../../assets/judge_rubric_user.txt").trim_end().to_string(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct TemplateOverrides {
    equivalence_system: Option<String>,
    equivalence_user: Option<String>,
    rubric_system: Option<String>,
    rubric_user: Option<String>,
}

impl PromptTemplates {
    /// Loads overrides from a TOML file; keys omitted there keep the embedded
    /// defaults.
    pub fn from_file(path: &std::path::Path) -> Result<PromptTemplates, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let ov: TemplateOverrides = toml::from_str(&raw)
            .map_err(|e| GatewayError::InvalidConfig(format!("bad template file {}: {e}", path.display())))?;
        let mut t = PromptTemplates::default();
        if let Some(v) = ov.equivalence_system {
            t.equivalence_system = v;
        }
        if let Some(v) = ov.equivalence_user {
            t.equivalence_user = v;
        }
        if let Some(v) = ov.rubric_system {
            t.rubric_system = v;
        }
        if let Some(v) = ov.rubric_user {
            t.rubric_user = v;
        }
        Ok(t)
    }

    pub(crate) fn render_equivalence(&self, candidate: &str, gold: &str) -> Vec<Message> {
        let user = self
            .equivalence_user
            .replace("{gold}", gold)
            .replace("{candidate}", candidate);
        vec![Message::system(self.equivalence_system.clone()), Message::user(user)]
    }

    pub(crate) fn render_rubric(
        &self,
        transcript: &[Message],
        context: Option<&str>,
        rubric: &RubricSpec,
    ) -> Vec<Message> {
        let rendered: Vec<String> = transcript
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                format!("{role}: {}", m.content)
            })
            .collect();
        let dims: Vec<String> = rubric
            .dimensions
            .iter()
            .map(|d| format!("- {} ({}..{}): {}", d.name, d.min, d.max, d.description))
            .collect();
        let user = self
            .rubric_user
            .replace("{transcript}", &rendered.join("\n"))
            .replace("{context}", context.unwrap_or("(none)"))
            .replace("{dimensions}", &dims.join("\n"));
        vec![Message::system(self.rubric_system.clone()), Message::user(user)]
    }
}
