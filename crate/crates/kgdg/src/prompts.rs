//! Stage prompt templates. The five templates ship as UTF-8 assets under
//! `prompts/` at the repository root and are also compiled in as defaults.
//! Placeholder syntax is `{NAME}`.

use std::path::Path;

use crate::error::PromptError;

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let body = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".to_string());
        Ok(PromptTemplate { name, body })
    }

    /// Substitute every `(name, value)` pair into the template. Every named
    /// placeholder must exist in the body, and no `{NAME}` placeholder may
    /// survive rendering.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = self.body.clone();
        for (name, value) in vars {
            let needle = format!("{{{name}}}");
            if !out.contains(&needle) {
                return Err(PromptError::UnboundPlaceholder((*name).to_string()));
            }
            out = out.replace(&needle, value);
        }
        if let Some(stray) = find_placeholder(&out) {
            return Err(PromptError::UnreplacedPlaceholder(stray));
        }
        Ok(out)
    }
}

/// First `{UPPER_SNAKE}` placeholder left in a rendered prompt, if any.
fn find_placeholder(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                return Some(text[i + 1..j].to_string());
            }
        }
        i += 1;
    }
    None
}

/// The five stage templates used by the pipeline.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub sampling: PromptTemplate,
    pub writer: PromptTemplate,
    pub ref_fixer: PromptTemplate,
    pub reason_fixer: PromptTemplate,
    pub verifier: PromptTemplate,
}

impl PromptSet {
    /// Compiled-in copies of the shipped `prompts/` assets.
    pub fn builtin() -> Self {
        PromptSet {
            sampling: PromptTemplate::new("sampling", include_str!("../../../prompts/sampling.txt")),
            writer: PromptTemplate::new("writer", include_str!("../../../prompts/writer.txt")),
            ref_fixer: PromptTemplate::new(
                "ref_fixer",
                include_str!("../../../prompts/ref_fixer.txt"),
            ),
            reason_fixer: PromptTemplate::new(
                "reason_fixer",
                include_str!("../../../prompts/reason_fixer.txt"),
            ),
            verifier: PromptTemplate::new("verifier", include_str!("../../../prompts/verifier.txt")),
        }
    }

    /// Load `sampling.txt`, `writer.txt`, `ref_fixer.txt`, `reason_fixer.txt`
    /// and `verifier.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        Ok(PromptSet {
            sampling: PromptTemplate::load(&dir.join("sampling.txt"))?,
            writer: PromptTemplate::load(&dir.join("writer.txt"))?,
            ref_fixer: PromptTemplate::load(&dir.join("ref_fixer.txt"))?,
            reason_fixer: PromptTemplate::load(&dir.join("reason_fixer.txt"))?,
            verifier: PromptTemplate::load(&dir.join("verifier.txt"))?,
        })
    }
}
