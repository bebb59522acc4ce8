use expa::catalog::{CALCULATOR_BUTTONS, EQUALS};
use expa::envs::{EnvRegistry, LatentState};
use expa::rollout::{apply_action, available_actions, initial_state, Provenance};
use expa::tasks::{generate, verify_countdown_answer, GeneratorConfig, TaskInstance};
use expa::{ActionCatalog, ActionKind, EnvId, EnvKind};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gen(json: &str, seed: u64) -> Vec<TaskInstance> {
    let cfg: GeneratorConfig = serde_json::from_str(json).unwrap();
    generate(&cfg, seed).unwrap()
}

#[test]
fn random_play_respects_the_state_machine() {
    let c = ActionCatalog::standard();
    let r = EnvRegistry::from_catalog(&c);
    let mut tasks = gen(r#"{"kind": "sort", "mix": {"2": 0.25, "3": 0.25, "4": 0.25, "5": 0.25}, "n_instances": 200}"#, 1);
    tasks.extend(gen(r#"{"kind": "arithmetic", "max_digits": 2, "min_ops": 1, "max_ops": 2, "n_instances": 200}"#, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut steps = 0;
    while steps < 100_000 {
        let task = tasks.choose(&mut rng).unwrap();
        let stop = c.tok(task.stop_token());
        let mut s = initial_state(task, &c, &r).unwrap();
        assert!(s.tags().iter().all(|t| *t == Provenance::Observation));
        for _ in 0..40 {
            let avail = available_actions(&s, &c).unwrap();
            let support = c.support(s.active_env).unwrap();
            let g = rng.gen_range(support);
            let a = c.action(g);
            assert!(avail.contains(&a));
            let env_before = s.active_env;
            let before = s.history().len();
            let out = apply_action(&mut s, a, &c, &r).unwrap();
            steps += 1;
            let want = match a.kind {
                ActionKind::Vocab { .. } => {
                    assert!(env_before.is_language());
                    Provenance::Agent
                }
                ActionKind::Route { env } => {
                    assert!(env_before.is_language());
                    assert_eq!(s.active_env, env);
                    Provenance::RouteDesc
                }
                ActionKind::Env { env, .. } => {
                    assert_eq!(env_before, env);
                    Provenance::Observation
                }
            };
            assert!(s.tags()[before..].iter().all(|t| *t == want));
            assert_eq!(out.observation_positions.len(), if want == Provenance::Observation { s.history().len() - before } else { 0 });
            if out.exit {
                assert_eq!(s.active_env, EnvId::LANGUAGE);
            } else if matches!(a.kind, ActionKind::Env { .. }) {
                assert_eq!(s.active_env, env_before);
            }
            assert_eq!(s.history().len(), s.tags().len());
            if matches!(a.kind, ActionKind::Vocab { token } if token == stop) {
                break;
            }
        }
    }
}

/// Shunting-yard evaluation with a separate rational type.
fn reference_eval(tokens: &[&str]) -> Option<BigRational> {
    let prec = |op: &str| if op == "×" || op == "÷" { 2 } else { 1 };
    let mut output: Vec<BigRational> = Vec::new();
    let mut ops: Vec<&str> = Vec::new();
    let apply = |out: &mut Vec<BigRational>, op: &str| -> Option<()> {
        let b = out.pop()?;
        let a = out.pop()?;
        out.push(match op {
            "+" => a + b,
            "−" => a - b,
            "×" => a * b,
            _ => {
                if b.is_zero() {
                    return None;
                }
                a / b
            }
        });
        Some(())
    };
    let mut num: Option<BigInt> = None;
    let mut expect_operand = true;
    for &t in tokens {
        if let Some(d) = t.chars().next().and_then(|ch| ch.to_digit(10)).filter(|_| t.len() == 1) {
            num = Some(num.unwrap_or_default() * 10 + d);
            expect_operand = false;
        } else if ["+", "−", "×", "÷"].contains(&t) {
            if expect_operand {
                return None;
            }
            output.push(BigRational::from_integer(num.take()?));
            while let Some(&top) = ops.last() {
                if prec(top) >= prec(t) {
                    apply(&mut output, ops.pop().unwrap())?;
                } else {
                    break;
                }
            }
            ops.push(t);
            expect_operand = true;
        } else {
            return None;
        }
    }
    output.push(BigRational::from_integer(num?));
    while let Some(op) = ops.pop() {
        apply(&mut output, op)?;
    }
    output.pop()
}

fn reference_render(q: &BigRational) -> Vec<String> {
    let mut s = String::new();
    if q.is_negative() {
        s.push('−');
    }
    s += &q.numer().abs().to_string();
    if *q.denom() != BigInt::from(1) {
        s.push('/');
        s += &q.denom().to_string();
    }
    s.chars().map(|c| c.to_string()).collect()
}

#[test]
fn calculator_matches_a_reference_evaluator() {
    let c = ActionCatalog::standard();
    let r = EnvRegistry::from_catalog(&c);
    let calc = c.env_by_kind(EnvKind::Calculator).unwrap().id;
    let digits: Vec<&str> = CALCULATOR_BUTTONS.iter().copied().filter(|b| b.len() == 1 && b.chars().all(|ch| ch.is_ascii_digit())).collect();
    let ops = ["+", "−", "×", "÷"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut errors = 0;
    for case in 0..10_000 {
        // mostly well-formed expressions, some arbitrary key sequences
        let keys: Vec<&str> = if case % 5 == 0 {
            let pool: Vec<&str> = CALCULATOR_BUTTONS.iter().copied().filter(|b| *b != EQUALS).collect();
            (0..rng.gen_range(0..8)).map(|_| *pool.choose(&mut rng).unwrap()).collect()
        } else {
            let mut k = Vec::new();
            for i in 0..rng.gen_range(1..=4) {
                if i > 0 {
                    k.push(*ops.choose(&mut rng).unwrap());
                }
                for _ in 0..rng.gen_range(1..=3) {
                    k.push(*digits.choose(&mut rng).unwrap());
                }
            }
            k
        };
        let mut z: LatentState = r.initial_latent(None);
        r.enter(calc, &mut z);
        let mut observed = Vec::new();
        let mut exited = false;
        for k in keys.iter().chain([&EQUALS]) {
            let local = CALCULATOR_BUTTONS.iter().position(|b| b == k).unwrap();
            let out = r.step(calc, &mut z, local).unwrap();
            if *k != EQUALS {
                assert_eq!(out.observation, vec![k.to_string()]);
                assert!(!out.exit);
            } else {
                observed = out.observation;
                exited = out.exit;
            }
        }
        assert!(exited);
        let mut want = vec![EQUALS.to_string()];
        match reference_eval(&keys) {
            Some(q) => want.extend(reference_render(&q)),
            None => {
                errors += 1;
                want.push("ERR".into());
            }
        }
        assert_eq!(observed, want, "{keys:?}");
    }
    assert!(errors > 100 && errors < 5000, "{errors}");
}

/// Every flat expression over a permutation of `numbers`, valued exactly.
fn reachable(numbers: &[i64], target: i64) -> bool {
    let mut perm = numbers.to_vec();
    perm.sort();
    let k = perm.len() - 1;
    loop {
        for code in 0..4usize.pow(k as u32) {
            let ops: Vec<usize> = (0..k).map(|i| code / 4usize.pow(i as u32) % 4).collect();
            if flat_value(&perm, &ops) == Some(Ratio::from_integer(target as i128)) {
                return true;
            }
        }
        if !next_permutation(&mut perm) {
            return false;
        }
    }
}

fn flat_value(nums: &[i64], ops: &[usize]) -> Option<Ratio<i128>> {
    // fold products and quotients into terms, then sum the terms
    let mut terms: Vec<Ratio<i128>> = vec![Ratio::from_integer(nums[0] as i128)];
    for (op, &n) in ops.iter().zip(&nums[1..]) {
        let n = Ratio::from_integer(n as i128);
        match op {
            0 => terms.push(n),
            1 => terms.push(-n),
            2 => *terms.last_mut().unwrap() *= n,
            _ => {
                if n.is_zero() {
                    return None;
                }
                *terms.last_mut().unwrap() /= n;
            }
        }
    }
    Some(terms.into_iter().sum())
}

fn next_permutation(v: &mut [i64]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[test]
fn generated_countdown_instances_are_solvable() {
    let tasks = gen(r#"{"kind": "countdown", "max_digits": 2, "max_ops": 3, "n_instances": 1000}"#, 5);
    assert_eq!(tasks.len(), 1000);
    for t in &tasks {
        let numbers = t.metadata.numbers.clone().unwrap();
        let target = t.metadata.target_value.unwrap();
        assert!(reachable(&numbers, target), "{:?}", t.prompt);
        assert!(verify_countdown_answer(t.target.tokens.as_ref().unwrap(), &numbers, target));
    }
}

#[test]
fn countdown_verifier_rejects_reuse_and_omission() {
    let numbers = [3i64, 5, 7];
    let pool = [3i64, 5, 7];
    let ops = ["+", "−", "×", "÷"];
    let target = 3 + 5 * 7;
    let mut accepted = 0;
    for len in 1..=4usize {
        for pick in 0..3usize.pow(len as u32) {
            let operands: Vec<i64> = (0..len).map(|i| pool[pick / 3usize.pow(i as u32) % 3]).collect();
            for code in 0..4usize.pow(len as u32 - 1) {
                let op_idx: Vec<usize> = (0..len - 1).map(|i| code / 4usize.pow(i as u32) % 4).collect();
                let mut toks: Vec<String> = vec![operands[0].to_string()];
                for (o, n) in op_idx.iter().zip(&operands[1..]) {
                    toks.push(ops[*o].to_string());
                    toks.push(n.to_string());
                }
                let mut multiset = operands.clone();
                multiset.sort();
                let want = multiset == numbers && flat_value(&operands, &op_idx) == Some(Ratio::from_integer(target as i128));
                assert_eq!(verify_countdown_answer(&toks, &numbers, target), want, "{toks:?}");
                accepted += want as usize;
            }
        }
    }
    assert!(accepted >= 2);
    for bad in [vec!["3", "+", "5"], vec!["3", "+", "5", "×", "7", "+"], vec!["+", "3"], vec!["3", "x", "5"], vec![]] {
        assert!(!verify_countdown_answer(&bad, &numbers, target), "{bad:?}");
    }
}
