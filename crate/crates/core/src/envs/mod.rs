//! External environments: a stateless calculator and compare/swap selectors
//! over a hidden value array.
//!
//! Every environment follows the same step contract: it consumes one local
//! action, may mutate its latent state, and returns observation tokens plus
//! an exit flag. Exactly one step per invocation returns `exit = true`.

pub mod expr;

use serde::{Deserialize, Serialize};

use crate::catalog::{ActionCatalog, EnvId, EnvKind, EQUALS, ERR, LABELS};
use crate::error::Result;

pub use expr::{evaluate_expression, render_number, FlatExpr, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascending,
    Descending,
}

impl Direction {
    pub fn word(self) -> &'static str {
        match self {
            Direction::Ascending => "ascending",
            Direction::Descending => "descending",
        }
    }

    /// Whether `a` may precede `b` in a sorted arrangement.
    pub fn in_order(self, a: i64, b: i64) -> bool {
        match self {
            Direction::Ascending => a < b,
            Direction::Descending => a > b,
        }
    }
}

/// Hidden values behind position labels A, B, ... .
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenArray {
    pub labels: Vec<String>,
    pub values: Vec<i64>,
    pub direction: Direction,
}

impl HiddenArray {
    pub fn new(values: Vec<i64>, direction: Direction) -> Self {
        assert!(values.len() <= LABELS.len(), "at most {} positions", LABELS.len());
        let labels = LABELS[..values.len()].iter().map(|s| s.to_string()).collect();
        Self { labels, values, direction }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.values.windows(2).all(|w| self.direction.in_order(w[0], w[1]))
    }

    pub fn distinct(&self) -> bool {
        let mut v = self.values.clone();
        v.sort_unstable();
        v.windows(2).all(|w| w[0] != w[1])
    }

    /// Target position of every current position in the requested direction:
    /// `perm[i]` is where the value currently at `i` belongs.
    pub fn target_permutation(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            let (x, y) = (self.values[a], self.values[b]);
            match self.direction {
                Direction::Ascending => x.cmp(&y),
                Direction::Descending => y.cmp(&x),
            }
        });
        let mut perm = vec![0; self.len()];
        for (rank, &pos) in idx.iter().enumerate() {
            perm[pos] = rank;
        }
        perm
    }
}

/// Buttons pressed since the calculator was entered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalcState {
    pub buffer: Vec<String>,
}

/// First label picked in the current compare/swap invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorState {
    pub first_pick: Option<usize>,
}

/// Per-invocation micro state of one external environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MicroState {
    Calc(CalcState),
    Selector(SelectorState),
}

/// Latent state z: per-environment micro states plus the shared hidden array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentState {
    pub micro: Vec<MicroState>,
    pub array: Option<HiddenArray>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub observation: Vec<String>,
    pub exit: bool,
}

impl StepOutcome {
    fn stay(observation: Vec<String>) -> Self {
        Self { observation, exit: false }
    }

    fn exit(observation: Vec<String>) -> Self {
        Self { observation, exit: true }
    }

    fn error() -> Self {
        Self::exit(vec![ERR.to_string()])
    }
}

#[derive(Debug, Clone)]
pub struct Calculator {
    buttons: Vec<String>,
}

impl Calculator {
    pub fn new(buttons: Vec<String>) -> Self {
        Self { buttons }
    }

    pub fn buttons(&self) -> &[String] {
        &self.buttons
    }

    /// Press one button. `=` evaluates the buffer and exits; everything else
    /// echoes the button.
    pub fn step(&self, state: &mut CalcState, button: usize) -> StepOutcome {
        let b = &self.buttons[button];
        if b != EQUALS {
            state.buffer.push(b.clone());
            return StepOutcome::stay(vec![b.clone()]);
        }
        let mut obs = vec![EQUALS.to_string()];
        match evaluate_expression(&state.buffer) {
            Ok(q) => obs.extend(render_number(&q)),
            Err(_) => obs.push(ERR.to_string()),
        }
        state.buffer.clear();
        StepOutcome::exit(obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorMode {
    Compare,
    Swap,
}

/// Two-pick protocol over position labels: the first pick is echoed, the
/// second completes the comparison or swap and exits.
#[derive(Debug, Clone)]
pub struct Selector {
    mode: SelectorMode,
}

impl Selector {
    pub fn new(mode: SelectorMode) -> Self {
        Self { mode }
    }

    pub fn step(&self, state: &mut SelectorState, z: Option<&mut HiddenArray>, pick: usize) -> StepOutcome {
        let Some(z) = z else {
            return StepOutcome::error();
        };
        if pick >= z.len() {
            return StepOutcome::error();
        }
        let Some(first) = state.first_pick else {
            state.first_pick = Some(pick);
            return StepOutcome::stay(vec![z.labels[pick].clone()]);
        };
        state.first_pick = None;
        if first == pick {
            return StepOutcome::error();
        }
        // The observation opens with the second label so the history reads
        // "compare A B A < B" / "swap A B swapped".
        let x = z.labels[pick].clone();
        match self.mode {
            SelectorMode::Compare => {
                let y = z.labels[first].clone();
                let rel = if z.values[first] < z.values[pick] { "<" } else { ">" };
                StepOutcome::exit(vec![x.clone(), y, rel.to_string(), x])
            }
            SelectorMode::Swap => {
                z.values.swap(first, pick);
                StepOutcome::exit(vec![x, "swapped".to_string()])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Environment {
    Calculator(Calculator),
    Selector(Selector),
}

/// Step dynamics for every external environment of a catalog, indexed by
/// environment id.
#[derive(Debug, Clone)]
pub struct EnvRegistry {
    envs: Vec<Environment>,
}

impl EnvRegistry {
    pub fn from_catalog(catalog: &ActionCatalog) -> Self {
        let envs = catalog
            .envs()
            .iter()
            .map(|spec| match spec.kind {
                EnvKind::Calculator => {
                    Environment::Calculator(Calculator::new(spec.actions.iter().map(|a| a.label.clone()).collect()))
                }
                EnvKind::Compare => Environment::Selector(Selector::new(SelectorMode::Compare)),
                EnvKind::Swap => Environment::Selector(Selector::new(SelectorMode::Swap)),
            })
            .collect();
        Self { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    /// Latent state at the start of an episode.
    pub fn initial_latent(&self, array: Option<HiddenArray>) -> LatentState {
        let micro = self.envs.iter().map(Self::fresh).collect();
        LatentState { micro, array }
    }

    fn fresh(env: &Environment) -> MicroState {
        match env {
            Environment::Calculator(_) => MicroState::Calc(CalcState::default()),
            Environment::Selector(_) => MicroState::Selector(SelectorState::default()),
        }
    }

    /// Reset the micro state of `env` for a fresh invocation.
    pub fn enter(&self, env: EnvId, z: &mut LatentState) {
        z.micro[env.0 - 1] = Self::fresh(&self.envs[env.0 - 1]);
    }

    pub fn step(&self, env: EnvId, z: &mut LatentState, local: usize) -> Result<StepOutcome> {
        let idx = env.0 - 1;
        let out = match (&self.envs[idx], &mut z.micro[idx]) {
            (Environment::Calculator(c), MicroState::Calc(s)) => c.step(s, local),
            (Environment::Selector(sel), MicroState::Selector(s)) => sel.step(s, z.array.as_mut(), local),
            _ => {
                return Err(crate::error::Error::InvalidState(format!("micro state of env {env} has the wrong type")))
            }
        };
        Ok(out)
    }
}
