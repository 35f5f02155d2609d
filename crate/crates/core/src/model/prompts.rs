use serde::{Deserialize, Serialize};

use crate::dataset::METHOD_CLASS_NAMES;
use crate::error::{Error, Result};

pub const UNKNOWN_CLASS: &str = "Unknown";
pub const PROMPT_TEMPLATE: &str = "The forgery type of this fake face is";

const GENERIC_FAKE_PROMPTS: [&str; 16] = [
    "A manipulated face",
    "A forged face",
    "A fake face",
    "A synthetic face",
    "A tampered face",
    "An altered face",
    "A doctored face image",
    "A face edited by software",
    "A computer generated face",
    "A face with artificial artifacts",
    "A face swapped onto another head",
    "A face with fabricated expressions",
    "A deepfake portrait",
    "A counterfeit facial image",
    "A face that has been retouched",
    "An inauthentic face photo",
];

/// Class-conditioned prompts plus the generic fake descriptions used for
/// similarity scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTable {
    /// `(class name, prompt)` in a fixed order ending with `Unknown`.
    pub class_prompts: Vec<(String, String)>,
    pub fake_prompts: Vec<String>,
}

impl PromptTable {
    /// The four method classes, `Unknown`, and the first `num_fake` generic
    /// phrases (cycled with a numeric suffix past 16).
    pub fn standard(num_fake: usize) -> Self {
        let class_prompts = METHOD_CLASS_NAMES
            .iter()
            .copied()
            .chain([UNKNOWN_CLASS])
            .map(|c| (c.to_string(), format!("{PROMPT_TEMPLATE} {c}")))
            .collect();
        let fake_prompts = (0..num_fake)
            .map(|i| {
                let base = GENERIC_FAKE_PROMPTS[i % GENERIC_FAKE_PROMPTS.len()];
                if i < GENERIC_FAKE_PROMPTS.len() {
                    base.to_string()
                } else {
                    format!("{base} {}", i / GENERIC_FAKE_PROMPTS.len())
                }
            })
            .collect();
        PromptTable {
            class_prompts,
            fake_prompts,
        }
    }

    pub fn validate(&self, num_fake: usize) -> Result<()> {
        if self.class_prompts.len() != METHOD_CLASS_NAMES.len() + 1 {
            return Err(Error::invalid(format!(
                "expected {} class prompts, got {}",
                METHOD_CLASS_NAMES.len() + 1,
                self.class_prompts.len()
            )));
        }
        if self.fake_prompts.len() != num_fake {
            return Err(Error::invalid(format!(
                "expected {num_fake} fake prompts, got {}",
                self.fake_prompts.len()
            )));
        }
        if self.class_index(UNKNOWN_CLASS).is_none() {
            return Err(Error::invalid("prompt table lacks the Unknown class"));
        }
        let empty = self
            .class_prompts
            .iter()
            .map(|(_, p)| p)
            .chain(&self.fake_prompts)
            .any(|p| p.trim().is_empty());
        if empty {
            return Err(Error::invalid("prompt strings must be nonempty"));
        }
        Ok(())
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.class_prompts.iter().position(|(c, _)| c == class)
    }

    pub fn unknown_index(&self) -> usize {
        self.class_index(UNKNOWN_CLASS).expect("validated table has Unknown")
    }

    /// Prompt index for a forgery method, by class name.
    pub fn method_index(&self, method: usize) -> Option<usize> {
        METHOD_CLASS_NAMES.get(method).and_then(|c| self.class_index(c))
    }

    pub fn prompt(&self, index: usize) -> &str {
        &self.class_prompts[index].1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_table() {
        let t = PromptTable::standard(16);
        t.validate(16).unwrap();
        assert_eq!(t.class_prompts.len(), 5);
        assert_eq!(t.prompt(t.unknown_index()), "The forgery type of this fake face is Unknown");
        assert_eq!(t.fake_prompts[0], "A manipulated face");
        assert_eq!(t.method_index(3), t.class_index("NeuralTextures"));
        let mut u = t.fake_prompts.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 16);
        assert!(t.validate(4).is_err());
        let long = PromptTable::standard(20);
        assert_eq!(long.fake_prompts[16], "A manipulated face 1");
    }
}
