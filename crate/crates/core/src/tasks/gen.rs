//! Seeded dataset generators. Each instance draws from its own generator
//! seeded by a value taken from the master stream, so an instance can be
//! regenerated from its recorded seed alone.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::words::{self, MAX_WORD_NUMBER, TEMPLATES};
use super::{Metadata, Target, TaskInstance, TaskKind};
use crate::catalog::LABELS;
use crate::envs::{render_number, Direction, FlatExpr, HiddenArray, Op};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArithmeticConfig {
    pub max_digits: u32,
    pub min_ops: usize,
    pub max_ops: usize,
    #[serde(default)]
    pub paraphrase_fraction: f64,
    #[serde(default = "default_ops")]
    pub ops: Vec<String>,
    pub n_instances: usize,
}

fn default_ops() -> Vec<String> {
    [Op::Add, Op::Sub, Op::Mul, Op::Div].iter().map(|o| o.token().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountdownConfig {
    pub max_digits: u32,
    pub max_ops: usize,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    pub max_len: usize,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SortingConfig {
    /// Fraction of instances per array length.
    #[serde(deserialize_with = "length_keys")]
    pub mix: BTreeMap<usize, f64>,
    #[serde(default = "default_value_range")]
    pub value_range: (i64, i64),
    pub n_instances: usize,
}

/// Mix keys arrive as strings inside tagged configs.
fn length_keys<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<usize, f64>, D::Error> {
    BTreeMap::<String, f64>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| k.parse().map(|n| (n, v)).map_err(|_| serde::de::Error::custom(format!("bad array length {k:?}"))))
        .collect()
}

fn default_value_range() -> (i64, i64) {
    (0, 99)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingConfig {
    #[serde(default = "default_order_fraction")]
    pub order_fraction: f64,
    #[serde(default = "default_item_mix", deserialize_with = "length_keys")]
    pub item_mix: BTreeMap<usize, f64>,
    #[serde(default = "default_value_range")]
    pub value_range: (i64, i64),
    pub n_instances: usize,
}

fn default_order_fraction() -> f64 {
    0.95
}

fn default_item_mix() -> BTreeMap<usize, f64> {
    BTreeMap::from([(2, 0.3), (3, 0.3), (4, 0.2), (5, 0.2)])
}

impl SortingConfig {
    /// 10% Sort-2, 20% Sort-3, 30% Sort-4, 40% Sort-5.
    pub fn paper_mix(n_instances: usize) -> Self {
        Self {
            mix: BTreeMap::from([(2, 0.1), (3, 0.2), (4, 0.3), (5, 0.4)]),
            value_range: default_value_range(),
            n_instances,
        }
    }
}

impl OrderingConfig {
    pub fn paper_mix(n_instances: usize) -> Self {
        Self {
            order_fraction: default_order_fraction(),
            item_mix: default_item_mix(),
            value_range: default_value_range(),
            n_instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Arithmetic(ArithmeticConfig),
    Countdown(CountdownConfig),
    Count(CountConfig),
    Sort(SortingConfig),
    Order(OrderingConfig),
}

impl GeneratorConfig {
    pub fn n_instances(&self) -> usize {
        match self {
            GeneratorConfig::Arithmetic(c) => c.n_instances,
            GeneratorConfig::Countdown(c) => c.n_instances,
            GeneratorConfig::Count(c) => c.n_instances,
            GeneratorConfig::Sort(c) => c.n_instances,
            GeneratorConfig::Order(c) => c.n_instances,
        }
    }

    pub fn with_n_instances(&self, n: usize) -> Self {
        let mut c = self.clone();
        match &mut c {
            GeneratorConfig::Arithmetic(c) => c.n_instances = n,
            GeneratorConfig::Countdown(c) => c.n_instances = n,
            GeneratorConfig::Count(c) => c.n_instances = n,
            GeneratorConfig::Sort(c) => c.n_instances = n,
            GeneratorConfig::Order(c) => c.n_instances = n,
        }
        c
    }
}

/// Dispatch on the generator kind.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    match cfg {
        GeneratorConfig::Arithmetic(c) => gen_arithmetic(c, seed),
        GeneratorConfig::Countdown(c) => gen_countdown(c, seed),
        GeneratorConfig::Count(c) => gen_count(c, seed),
        GeneratorConfig::Sort(c) => gen_sorting(c, seed),
        GeneratorConfig::Order(c) => gen_ordering(c, seed),
    }
}

fn instances<F>(n: usize, seed: u64, mut make: F) -> Vec<TaskInstance>
where
    F: FnMut(&mut ChaCha8Rng, u64) -> TaskInstance,
{
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s: u64 = master.gen();
            make(&mut ChaCha8Rng::seed_from_u64(s), s)
        })
        .collect()
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")))
    }
}

fn check_mix(mix: &BTreeMap<usize, f64>) -> Result<()> {
    if mix.is_empty() {
        return Err(Error::Config("empty length mix".into()));
    }
    for (&n, &f) in mix {
        if !(2..=LABELS.len()).contains(&n) {
            return Err(Error::Config(format!("array length {n} outside 2..={}", LABELS.len())));
        }
        check_fraction("mix fraction", f)?;
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mix fractions sum to {total}, not 1")));
    }
    Ok(())
}

fn check_range(range: (i64, i64), mix: &BTreeMap<usize, f64>) -> Result<()> {
    let largest = mix.keys().max().copied().unwrap_or(0) as i64;
    if range.1 < range.0 || range.1 - range.0 + 1 < largest {
        return Err(Error::Config(format!("value range {range:?} cannot hold {largest} distinct values")));
    }
    Ok(())
}

fn pick_from_mix(mix: &BTreeMap<usize, f64>, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (&n, &f) in mix {
        acc += f;
        if u < acc {
            return n;
        }
    }
    *mix.keys().next_back().expect("non-empty mix")
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn digits(n: &BigInt) -> Vec<String> {
    n.to_string().chars().map(|c| c.to_string()).collect()
}

fn sample_operand(rng: &mut impl Rng, max_digits: u32) -> u64 {
    let d = rng.gen_range(1..=max_digits);
    let lo = if d == 1 { 1 } else { 10u64.pow(d - 1) };
    rng.gen_range(lo..10u64.pow(d))
}

/// Random flat expression with `n_ops` operators whose divisions are all
/// exact, so every intermediate term stays integral.
fn sample_expression(rng: &mut impl Rng, n_ops: usize, max_digits: u32, allowed: &[Op]) -> FlatExpr {
    let max_operand = 10u64.pow(max_digits) - 1;
    let first = sample_operand(rng, max_digits);
    let mut numbers = vec![BigInt::from(first)];
    let mut ops = Vec::with_capacity(n_ops);
    let mut term = BigInt::from(first);
    for _ in 0..n_ops {
        let mut op = *allowed.choose(rng).expect("at least one operator");
        if op == Op::Div {
            let bound = max_operand.min(999);
            let mut divisors: Vec<u64> = (2..=bound).filter(|&d| (&term % d).is_zero()).collect();
            if let Some(t) = term.to_u64() {
                if t > bound && t <= max_operand {
                    divisors.push(t);
                }
            }
            match divisors.choose(rng) {
                Some(&d) => {
                    term /= d;
                    numbers.push(d.into());
                    ops.push(Op::Div);
                    continue;
                }
                None => {
                    let fallback: Vec<Op> = allowed.iter().copied().filter(|&o| o != Op::Div).collect();
                    op = fallback.choose(rng).copied().unwrap_or(Op::Div);
                    if op == Op::Div {
                        // only division allowed and no divisor exists: divide by one
                        numbers.push(BigInt::one());
                        ops.push(Op::Div);
                        continue;
                    }
                }
            }
        }
        let n = BigInt::from(sample_operand(rng, max_digits));
        match op {
            Op::Mul => term *= &n,
            _ => term = n.clone(),
        }
        numbers.push(n);
        ops.push(op);
    }
    FlatExpr { numbers, ops }
}

fn parse_ops(ops: &[String]) -> Result<Vec<Op>> {
    let out: Vec<Op> = ops
        .iter()
        .map(|s| Op::from_token(s).ok_or_else(|| Error::Config(format!("unknown operator {s:?}"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("no operators allowed".into()));
    }
    Ok(out)
}

pub fn gen_arithmetic(cfg: &ArithmeticConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    if cfg.min_ops < 1 || cfg.min_ops > cfg.max_ops {
        return Err(Error::Config("need 1 <= min_ops <= max_ops".into()));
    }
    if cfg.max_digits < 1 || 10u64.pow(cfg.max_digits) - 1 > MAX_WORD_NUMBER {
        return Err(Error::Config(format!("max_digits must lie in 1..=5, got {}", cfg.max_digits)));
    }
    check_fraction("paraphrase_fraction", cfg.paraphrase_fraction)?;
    let allowed = parse_ops(&cfg.ops)?;
    Ok(instances(cfg.n_instances, seed, |rng, s| {
        let n_ops = rng.gen_range(cfg.min_ops..=cfg.max_ops);
        let expr = sample_expression(rng, n_ops, cfg.max_digits, &allowed);
        let value = expr.eval().expect("generated expressions are valid");
        let paraphrased = rng.gen_bool(cfg.paraphrase_fraction);
        let prompt = if paraphrased {
            words::paraphrase(&expr, rng.gen_range(0..TEMPLATES.len()))
        } else {
            let mut p = words("what is");
            p.extend(expr.tokens());
            p.push("?".into());
            p
        };
        TaskInstance {
            kind: TaskKind::Arithmetic,
            prompt,
            target: Target { tokens: Some(render_number(&value)), hidden: None },
            metadata: Metadata {
                numbers: Some(expr.numbers.iter().map(|n| n.to_i64().expect("operand fits")).collect()),
                operand_count: Some(expr.numbers.len()),
                paraphrased: Some(paraphrased),
                expression: Some(expr.tokens()),
                ..Default::default()
            },
            seed: s,
        }
    }))
}

pub fn gen_countdown(cfg: &CountdownConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    if cfg.max_ops < 1 || cfg.max_digits < 1 || cfg.max_digits > 9 {
        return Err(Error::Config("countdown needs max_ops >= 1 and 1 <= max_digits <= 9".into()));
    }
    let allowed = [Op::Add, Op::Sub, Op::Mul, Op::Div];
    Ok(instances(cfg.n_instances, seed, |rng, s| {
        let n_ops = rng.gen_range(1..=cfg.max_ops);
        let expr = sample_expression(rng, n_ops, cfg.max_digits, &allowed);
        let value = expr.eval().expect("generated expressions are valid");
        let target = value.to_integer();
        let mut numbers: Vec<i64> = expr.numbers.iter().map(|n| n.to_i64().expect("operand fits")).collect();
        numbers.shuffle(rng);
        let mut prompt = vec!["make".to_string()];
        prompt.extend(render_number(&value));
        prompt.push("using".into());
        for (i, n) in numbers.iter().enumerate() {
            if i > 0 {
                prompt.push(",".into());
            }
            prompt.extend(digits(&BigInt::from(*n)));
        }
        TaskInstance {
            kind: TaskKind::Countdown,
            prompt,
            target: Target { tokens: Some(expr.tokens()), hidden: None },
            metadata: Metadata {
                operand_count: Some(numbers.len()),
                numbers: Some(numbers),
                expression: Some(expr.tokens()),
                target_value: Some(target.to_i64().expect("target fits in i64")),
                ..Default::default()
            },
            seed: s,
        }
    }))
}

/// Symbols used by the Count task.
pub const COUNT_ALPHABET: [&str; 4] = ["x", "y", "z", "w"];

pub fn gen_count(cfg: &CountConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    if cfg.max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    Ok(instances(cfg.n_instances, seed, |rng, s| {
        let len = rng.gen_range(1..=cfg.max_len);
        let seq: Vec<&str> = (0..len).map(|_| *COUNT_ALPHABET.choose(rng).unwrap()).collect();
        let symbol = *COUNT_ALPHABET.choose(rng).unwrap();
        let count = seq.iter().filter(|&&c| c == symbol).count();
        let mut prompt = vec!["count".to_string(), symbol.to_string(), "in".to_string()];
        prompt.extend(seq.iter().map(|s| s.to_string()));
        prompt.push("?".into());
        TaskInstance {
            kind: TaskKind::Count,
            prompt,
            target: Target { tokens: Some(digits(&BigInt::from(count))), hidden: None },
            metadata: Metadata { n: Some(len), ..Default::default() },
            seed: s,
        }
    }))
}

fn sample_array(rng: &mut impl Rng, n: usize, range: (i64, i64)) -> HiddenArray {
    let span = (range.1 - range.0 + 1) as usize;
    let values = rand::seq::index::sample(rng, span, n).into_iter().map(|i| range.0 + i as i64).collect();
    let direction = if rng.gen_bool(0.5) { Direction::Ascending } else { Direction::Descending };
    HiddenArray::new(values, direction)
}

pub fn gen_sorting(cfg: &SortingConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    check_mix(&cfg.mix)?;
    check_range(cfg.value_range, &cfg.mix)?;
    Ok(instances(cfg.n_instances, seed, |rng, s| {
        let n = pick_from_mix(&cfg.mix, rng);
        TaskInstance::sorting(sample_array(rng, n, cfg.value_range), s)
    }))
}

/// Labels of `z` listed in sorted order.
pub fn sorted_labels(z: &HiddenArray) -> Vec<String> {
    let perm = z.target_permutation();
    let mut out = vec![String::new(); z.len()];
    for (pos, &rank) in perm.iter().enumerate() {
        out[rank] = z.labels[pos].clone();
    }
    out
}

pub fn gen_ordering(cfg: &OrderingConfig, seed: u64) -> Result<Vec<TaskInstance>> {
    check_mix(&cfg.item_mix)?;
    check_range(cfg.value_range, &cfg.item_mix)?;
    check_fraction("order_fraction", cfg.order_fraction)?;
    Ok(instances(cfg.n_instances, seed, |rng, s| {
        let n = pick_from_mix(&cfg.item_mix, rng);
        let z = sample_array(rng, n, cfg.value_range);
        let order = rng.gen_bool(cfg.order_fraction);
        let (prompt, answer, question) = if order {
            let mut p = vec!["order".to_string()];
            p.extend(z.labels.iter().cloned());
            p.push(z.direction.word().into());
            (p, sorted_labels(&z), "order")
        } else {
            let pair = rand::seq::index::sample(rng, n, 2);
            let (i, j) = (pair.index(0), pair.index(1));
            let rel = if z.values[i] < z.values[j] { "<" } else { ">" };
            let p = vec!["relation".to_string(), z.labels[i].clone(), z.labels[j].clone(), "?".to_string()];
            (p, vec![z.labels[i].clone(), rel.to_string(), z.labels[j].clone()], "compare")
        };
        TaskInstance {
            kind: TaskKind::Order,
            prompt,
            target: Target { tokens: Some(answer), hidden: Some(z) },
            metadata: Metadata { n: Some(n), question: Some(question.into()), ..Default::default() },
            seed: s,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ActionCatalog;
    use crate::envs::evaluate_expression;

    #[test]
    fn arithmetic_targets_match_evaluation() {
        let cfg = ArithmeticConfig {
            max_digits: 5,
            min_ops: 2,
            max_ops: 6,
            paraphrase_fraction: 0.7,
            ops: default_ops(),
            n_instances: 500,
        };
        let c = ActionCatalog::standard();
        let tasks = gen_arithmetic(&cfg, 1).unwrap();
        let mut para = 0;
        for t in &tasks {
            t.validate(&c).unwrap();
            let expr = t.metadata.expression.as_ref().unwrap();
            let v = evaluate_expression(expr).unwrap();
            assert!(v.is_integer());
            assert_eq!(render_number(&v), *t.target.tokens.as_ref().unwrap());
            let ops = t.metadata.operand_count.unwrap() - 1;
            assert!((2..=6).contains(&ops));
            if t.metadata.paraphrased == Some(true) {
                para += 1;
                assert_eq!(words::detemplate(&t.prompt).unwrap().tokens(), *expr);
            }
        }
        assert!((250..450).contains(&para), "{para}");
    }

    #[test]
    fn two_digit_single_op_example() {
        let cfg = ArithmeticConfig {
            max_digits: 2,
            min_ops: 1,
            max_ops: 1,
            paraphrase_fraction: 0.0,
            ops: vec!["+".into()],
            n_instances: 50,
        };
        for t in gen_arithmetic(&cfg, 3).unwrap() {
            let nums = t.metadata.numbers.clone().unwrap();
            assert_eq!(nums.len(), 2);
            assert!(nums.iter().all(|&n| (1..100).contains(&n)));
            let want: Vec<String> = (nums[0] + nums[1]).to_string().chars().map(|c| c.to_string()).collect();
            assert_eq!(t.target.tokens.unwrap(), want);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = GeneratorConfig::Countdown(CountdownConfig { max_digits: 4, max_ops: 3, n_instances: 100 });
        assert_eq!(generate(&cfg, 5).unwrap(), generate(&cfg, 5).unwrap());
        assert_ne!(generate(&cfg, 5).unwrap(), generate(&cfg, 6).unwrap());
    }

    #[test]
    fn count_examples() {
        let tasks = gen_count(&CountConfig { max_len: 20, n_instances: 300 }, 2).unwrap();
        for t in tasks {
            let sym = &t.prompt[1];
            let body = &t.prompt[3..t.prompt.len() - 1];
            let n = body.iter().filter(|s| *s == sym).count();
            assert_eq!(t.target.tokens.unwrap(), [n.to_string()].iter().flat_map(|s| s.chars().map(|c| c.to_string())).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sorting_prompts_name_labels_only() {
        let tasks = gen_sorting(&SortingConfig::paper_mix(200), 4).unwrap();
        for t in tasks {
            let z = t.hidden().unwrap();
            assert!(z.distinct());
            assert_eq!(&t.prompt[1..=z.len()], &z.labels[..]);
            assert_eq!(t.prompt.len(), z.len() + 2);
        }
    }

    #[test]
    fn bad_mix_is_rejected() {
        let mut cfg = SortingConfig::paper_mix(10);
        cfg.mix.insert(2, 0.3);
        assert!(matches!(gen_sorting(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = SortingConfig::paper_mix(10);
        cfg.value_range = (0, 2);
        assert!(gen_sorting(&cfg, 0).is_err());
    }

    #[test]
    fn ordering_answers() {
        let tasks = gen_ordering(&OrderingConfig::paper_mix(300), 9).unwrap();
        for t in tasks {
            let z = t.hidden().unwrap();
            let ans = t.target.tokens.as_ref().unwrap();
            if t.metadata.question.as_deref() == Some("order") {
                let pos = |l: &String| z.labels.iter().position(|x| x == l).unwrap();
                for w in ans.windows(2) {
                    assert!(z.direction.in_order(z.values[pos(&w[0])], z.values[pos(&w[1])]));
                }
            } else {
                assert_eq!(ans.len(), 3);
            }
        }
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let ok = r#"{"kind":"count","max_len":20,"n_instances":5}"#;
        assert!(serde_json::from_str::<GeneratorConfig>(ok).is_ok());
        let bad = r#"{"kind":"count","max_len":20,"n_instances":5,"colour":1}"#;
        assert!(serde_json::from_str::<GeneratorConfig>(bad).is_err());
    }
}
