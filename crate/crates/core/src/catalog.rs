//! The expanded action space: vocabulary tokens, one routing action per
//! external environment, and each environment's local action set.
//!
//! Global action indices are laid out as
//! `[vocab tokens | route actions | env 1 actions | env 2 actions | ...]`,
//! so the support of every environment is a contiguous index range.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of a token in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub usize);

/// Environment identifier. `EnvId::LANGUAGE` (0) is the language environment,
/// external environments are numbered `1..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvId(pub usize);

impl EnvId {
    pub const LANGUAGE: EnvId = EnvId(0);

    pub fn is_language(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dynamics family of an external environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Calculator,
    Compare,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActionKind {
    Vocab { token: TokenId },
    Route { env: EnvId },
    Env { env: EnvId, local: usize },
}

/// A member of the expanded action space together with its global index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionId {
    pub kind: ActionKind,
    pub global: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvActionSpec {
    pub local: usize,
    pub label: String,
    pub desc: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub name: String,
    pub kind: EnvKind,
    pub route_desc: Vec<TokenId>,
    pub actions: Vec<EnvActionSpec>,
}

/// Vocabulary plus external environments, with precomputed index offsets.
#[derive(Debug, Clone)]
pub struct ActionCatalog {
    vocab: Vec<String>,
    token_index: HashMap<String, TokenId>,
    envs: Vec<EnvSpec>,
    env_offsets: Vec<usize>,
    n_actions: usize,
}

/// Tokens of the standard vocabulary shared by every task family.
pub const LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];
pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
pub const PLUS: &str = "+";
pub const MINUS: &str = "−";
pub const TIMES: &str = "×";
pub const DIVIDE: &str = "÷";
pub const EQUALS: &str = "=";
pub const FRACTION_BAR: &str = "/";
pub const ERR: &str = "ERR";
pub const ANSWER: &str = "answer";
pub const END: &str = ".";
pub const DONE: &str = "done";

const STANDARD_WORDS: &[&str] = &[
    // connective language
    "the", "so", "first", "then", "to", "solve", "it", "what", "is", "?", ",", ANSWER, END, DONE,
    // calculator surface
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", PLUS, MINUS, TIMES, DIVIDE, EQUALS,
    FRACTION_BAR, ERR, "calculate",
    // number and operator words
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    "hundred", "thousand", "plus", "minus", "times", "divided", "by",
    // paraphrase templates
    "compute", "evaluate", "find", "value", "of", "tell", "me", "result", "please",
    // countdown and count
    "make", "using", "numbers", "target", "count", "in", "x", "y", "z", "w",
    // sorting and ordering
    "sort", "order", "relation", "ascending", "descending", "compare", "swap", "swapped", "<",
    ">", "A", "B", "C", "D", "E",
];

/// Calculator buttons in local-index order.
pub const CALCULATOR_BUTTONS: [&str; 15] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", PLUS, MINUS, TIMES, DIVIDE, EQUALS,
];

impl ActionCatalog {
    /// Build a catalog. Environments receive ids `1..=K` in the given order;
    /// description token sequences are resolved against `vocab`.
    pub fn new(vocab: Vec<String>, envs: Vec<EnvDefinition>) -> Result<Self> {
        let mut token_index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if token_index.insert(tok.clone(), TokenId(i)).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        let lookup = |s: &str| -> Result<TokenId> {
            token_index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Config(format!("description token {s:?} is not in the vocabulary")))
        };
        let mut specs = Vec::with_capacity(envs.len());
        for (i, def) in envs.into_iter().enumerate() {
            let route_desc = def.route_desc.iter().map(|s| lookup(s)).collect::<Result<Vec<_>>>()?;
            if route_desc.is_empty() {
                return Err(Error::Config(format!("environment {} has an empty description", def.name)));
            }
            let mut actions = Vec::with_capacity(def.actions.len());
            for (local, (label, desc)) in def.actions.into_iter().enumerate() {
                let desc = desc.iter().map(|s| lookup(s)).collect::<Result<Vec<_>>>()?;
                if desc.is_empty() {
                    return Err(Error::Config(format!("action {label} has an empty description")));
                }
                actions.push(EnvActionSpec { local, label, desc });
            }
            specs.push(EnvSpec { id: EnvId(i + 1), name: def.name, kind: def.kind, route_desc, actions });
        }
        let k = specs.len();
        let mut env_offsets = Vec::with_capacity(k);
        let mut next = vocab.len() + k;
        for spec in &specs {
            env_offsets.push(next);
            next += spec.actions.len();
        }
        Ok(Self { vocab, token_index, envs: specs, env_offsets, n_actions: next })
    }

    /// The catalog used throughout the crate: the standard vocabulary, a
    /// calculator, and compare/swap environments over labels A..E.
    pub fn standard() -> Self {
        let vocab = STANDARD_WORDS.iter().map(|s| s.to_string()).collect();
        let labels = || LABELS.iter().map(|l| (l.to_string(), vec![l.to_string()])).collect::<Vec<_>>();
        let envs = vec![
            EnvDefinition {
                name: "calculator".into(),
                kind: EnvKind::Calculator,
                route_desc: vec!["calculate".into()],
                actions: CALCULATOR_BUTTONS.iter().map(|b| (b.to_string(), vec![b.to_string()])).collect(),
            },
            EnvDefinition {
                name: "compare".into(),
                kind: EnvKind::Compare,
                route_desc: vec!["compare".into()],
                actions: labels(),
            },
            EnvDefinition { name: "swap".into(), kind: EnvKind::Swap, route_desc: vec!["swap".into()], actions: labels() },
        ];
        Self::new(vocab, envs).expect("standard catalog is well formed")
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Number of external environments (K).
    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    /// Total number of actions N = |V| + K + Σ|E_i|.
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn envs(&self) -> &[EnvSpec] {
        &self.envs
    }

    pub fn env(&self, id: EnvId) -> Result<&EnvSpec> {
        if id.is_language() || id.0 > self.envs.len() {
            return Err(Error::InvalidState(format!("unknown external environment {id}")));
        }
        Ok(&self.envs[id.0 - 1])
    }

    pub fn env_by_name(&self, name: &str) -> Option<&EnvSpec> {
        self.envs.iter().find(|e| e.name == name)
    }

    pub fn env_by_kind(&self, kind: EnvKind) -> Option<&EnvSpec> {
        self.envs.iter().find(|e| e.kind == kind)
    }

    pub fn token(&self, s: &str) -> Option<TokenId> {
        self.token_index.get(s).copied()
    }

    /// Token id for a word that is known to be in the vocabulary.
    pub fn tok(&self, s: &str) -> TokenId {
        self.token(s).unwrap_or_else(|| panic!("token {s:?} missing from vocabulary"))
    }

    pub fn token_str(&self, t: TokenId) -> &str {
        &self.vocab[t.0]
    }

    pub fn tokens(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| self.token(w).ok_or_else(|| Error::Config(format!("token {w:?} is not in the vocabulary"))))
            .collect()
    }

    pub fn render(&self, tokens: &[TokenId]) -> Vec<String> {
        tokens.iter().map(|t| self.vocab[t.0].clone()).collect()
    }

    pub fn route_index(&self, env: EnvId) -> usize {
        debug_assert!(!env.is_language() && env.0 <= self.envs.len());
        self.vocab.len() + env.0 - 1
    }

    pub fn env_action_index(&self, env: EnvId, local: usize) -> usize {
        self.env_offsets[env.0 - 1] + local
    }

    /// Contiguous range of global indices available in environment `env`
    /// (vocabulary plus routes for the language environment).
    pub fn support(&self, env: EnvId) -> Result<Range<usize>> {
        if env.is_language() {
            return Ok(0..self.vocab.len() + self.envs.len());
        }
        let spec = self.env(env)?;
        let start = self.env_offsets[env.0 - 1];
        Ok(start..start + spec.actions.len())
    }

    pub fn action(&self, global: usize) -> ActionId {
        assert!(global < self.n_actions, "action index {global} out of range");
        let v = self.vocab.len();
        let kind = if global < v {
            ActionKind::Vocab { token: TokenId(global) }
        } else if global < v + self.envs.len() {
            ActionKind::Route { env: EnvId(global - v + 1) }
        } else {
            let e = self.env_offsets.partition_point(|&o| o <= global) - 1;
            ActionKind::Env { env: EnvId(e + 1), local: global - self.env_offsets[e] }
        };
        ActionId { kind, global }
    }

    pub fn vocab_action(&self, token: TokenId) -> ActionId {
        ActionId { kind: ActionKind::Vocab { token }, global: token.0 }
    }

    pub fn route_action(&self, env: EnvId) -> ActionId {
        ActionId { kind: ActionKind::Route { env }, global: self.route_index(env) }
    }

    pub fn env_action(&self, env: EnvId, local: usize) -> ActionId {
        ActionId { kind: ActionKind::Env { env, local }, global: self.env_action_index(env, local) }
    }

    /// Description tokens of an expanded action; `None` for vocabulary tokens.
    pub fn desc(&self, action: ActionId) -> Option<&[TokenId]> {
        match action.kind {
            ActionKind::Vocab { .. } => None,
            ActionKind::Route { env } => Some(&self.envs[env.0 - 1].route_desc),
            ActionKind::Env { env, local } => Some(&self.envs[env.0 - 1].actions[local].desc),
        }
    }

    /// Human-readable label of an action: the token string, the environment
    /// name for routes, and the button/label for environment actions.
    pub fn label(&self, action: ActionId) -> String {
        match action.kind {
            ActionKind::Vocab { token } => self.vocab[token.0].clone(),
            ActionKind::Route { env } => format!("<{}>", self.envs[env.0 - 1].name),
            ActionKind::Env { env, local } => self.envs[env.0 - 1].actions[local].label.clone(),
        }
    }

    /// Stable digest of the vocabulary and environment layout, used to guard
    /// checkpoints against being loaded into a different action space.
    pub fn hash(&self) -> String {
        let doc = serde_json::json!({ "vocab": self.vocab, "envs": self.envs });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Input to [`ActionCatalog::new`]: descriptions given as token strings.
#[derive(Debug, Clone)]
pub struct EnvDefinition {
    pub name: String,
    pub kind: EnvKind,
    pub route_desc: Vec<String>,
    pub actions: Vec<(String, Vec<String>)>,
}
