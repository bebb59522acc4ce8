//! One line per acceptance criterion. Exits nonzero if any fails.

use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use expa::catalog::{CALCULATOR_BUTTONS, EQUALS};
use expa::envs::{Direction, EnvRegistry, HiddenArray};
use expa::optim::{
    counterfactual_rollout, cpo_advantages, intervention_weights, ppo_surrogate, Branch, MetricsRow, TrainConfig, Trainer,
    UpdateConfig,
};
use expa::policy::{action_distribution, kl_vocab, kl_vocab_grad, PolicyConfig, PolicyParameters};
use expa::rollout::{apply_action, available_actions, initial_state, rollout, Provenance, RolloutOptions, UniformPolicy};
use expa::sortlab::{
    extract_decision_tree, min_swap, optimal_comparison_tree, permutations, pivot_sort4, pivot_tree, prune_redundant,
    Objective, TreePolicy,
};
use expa::tasks::{generate, verify_countdown_answer, GeneratorConfig, TaskInstance};
use expa::{ActionCatalog, ActionKind, EnvId, EnvKind, TokenId};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn setup() -> (ActionCatalog, EnvRegistry) {
    let c = ActionCatalog::standard();
    let r = EnvRegistry::from_catalog(&c);
    (c, r)
}

fn gen(json: &str, seed: u64) -> Vec<TaskInstance> {
    generate(&serde_json::from_str::<GeneratorConfig>(json).unwrap(), seed).unwrap()
}

// 1
fn min_swap_oracle() -> Outcome {
    let mut cases = 0;
    for n in 1..=6 {
        let start: Vec<usize> = (0..n).collect();
        let mut dist = HashMap::from([(start.clone(), 0usize)]);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let d = dist[&p];
            for i in 0..n {
                for j in i + 1..n {
                    let mut q = p.clone();
                    q.swap(i, j);
                    if !dist.contains_key(&q) {
                        dist.insert(q.clone(), d + 1);
                        queue.push_back(q);
                    }
                }
            }
        }
        for p in permutations(n) {
            let s = min_swap(&p);
            let mut q = p.clone();
            for &(a, b) in &s {
                q.swap(a, b);
            }
            ensure(q.iter().enumerate().all(|(i, &v)| i == v), || format!("{p:?} not sorted"))?;
            ensure(s.len() == dist[&p], || format!("{p:?}: {} swaps, BFS {}", s.len(), dist[&p]))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} permutations match BFS"))
}

/// Can `set` be resolved with at most k comparisons?
fn solvable(perms: &[Vec<usize>], set: u128, k: usize, memo: &mut HashMap<(u128, usize), bool>) -> bool {
    let size = set.count_ones() as u64;
    if size <= 1 {
        return true;
    }
    if k == 0 || size > 1u64 << k.min(63) {
        return false;
    }
    if let Some(&v) = memo.get(&(set, k)) {
        return v;
    }
    let n = perms[0].len();
    let mut ok = false;
    'outer: for x in 0..n {
        for y in x + 1..n {
            let (mut l, mut g) = (0u128, 0u128);
            for (i, p) in perms.iter().enumerate() {
                if set >> i & 1 == 1 {
                    if p[x] < p[y] {
                        l |= 1 << i;
                    } else {
                        g |= 1 << i;
                    }
                }
            }
            if l != 0 && g != 0 && solvable(perms, l, k - 1, memo) && solvable(perms, g, k - 1, memo) {
                ok = true;
                break 'outer;
            }
        }
    }
    memo.insert((set, k), ok);
    ok
}

// 2
fn optimal_trees() -> Outcome {
    let mut got = Vec::new();
    for (n, want) in [(2usize, 1usize), (3, 3), (4, 5), (5, 7)] {
        let perms = permutations(n);
        let full = if perms.len() == 128 { u128::MAX } else { (1u128 << perms.len()) - 1 };
        let mut memo = HashMap::new();
        let brute = (0..).find(|&k| solvable(&perms, full, k, &mut memo)).unwrap();
        let tree = optimal_comparison_tree(n, Objective::WorstCase, Direction::Ascending).map_err(|e| e.to_string())?;
        tree.check().map_err(|e| e.to_string())?;
        let st = tree.stats();
        ensure(st.worst_comparisons == want && brute == want, || {
            format!("n={n}: tree {} brute force {brute}, expected {want}", st.worst_comparisons)
        })?;
        ensure(st.accuracy() == 1.0, || format!("n={n}: tree does not sort"))?;
        got.push(st.worst_comparisons);
    }
    Ok(format!("worst-case comparisons {got:?} for n = 2..5"))
}

// 3
fn pivot_properties() -> Outcome {
    let (mut total, mut insertion, mut worst) = (0, 0, 0);
    for p in permutations(4) {
        let arr = RefCell::new(p.clone());
        let t = pivot_sort4(Direction::Ascending, |x, y| arr.borrow()[x] < arr.borrow()[y], |x, y| arr.borrow_mut().swap(x, y))
            .map_err(|e| e.to_string())?;
        let arr = arr.into_inner();
        ensure(arr.windows(2).all(|w| w[0] < w[1]), || format!("{p:?} not sorted"))?;
        let mut seen = [false; 4];
        let mut cycles = 0;
        for i in 0..4 {
            if !seen[i] {
                cycles += 1;
                let mut j = i;
                while !seen[j] {
                    seen[j] = true;
                    j = p[j];
                }
            }
        }
        ensure(t.swaps.len() == 4 - cycles, || format!("{p:?}: {} swaps, n - cycles = {}", t.swaps.len(), 4 - cycles))?;
        worst = worst.max(t.comparisons.len());
        total += t.comparisons.len();
        let mut a = p.clone();
        for i in 1..4 {
            let mut j = i;
            while j > 0 {
                insertion += 1;
                if a[j - 1] < a[j] {
                    break;
                }
                a.swap(j - 1, j);
                j -= 1;
            }
        }
    }
    ensure(worst <= 5, || format!("worst case {worst}"))?;
    ensure(total < insertion, || format!("average comparisons {total}/24 not below insertion {insertion}/24"))?;
    Ok(format!("24/24 sorted with n - cycles swaps, worst {worst}, avg comparisons {total}/24 < insertion {insertion}/24"))
}

// 4
fn state_machine() -> Outcome {
    let (c, r) = setup();
    let mut tasks = gen(r#"{"kind": "sort", "mix": {"2": 0.25, "3": 0.25, "4": 0.25, "5": 0.25}, "n_instances": 200}"#, 1);
    tasks.extend(gen(r#"{"kind": "arithmetic", "max_digits": 2, "min_ops": 1, "max_ops": 2, "n_instances": 200}"#, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut steps, mut violations) = (0, 0);
    while steps < 100_000 {
        let task = tasks.choose(&mut rng).unwrap();
        let stop = c.tok(task.stop_token());
        let mut s = initial_state(task, &c, &r).map_err(|e| e.to_string())?;
        for _ in 0..40 {
            let avail = available_actions(&s, &c).map_err(|e| e.to_string())?;
            let a = *avail.choose(&mut rng).unwrap();
            if !c.support(s.active_env).unwrap().contains(&a.global) {
                violations += 1;
            }
            let before = s.history().len();
            let out = apply_action(&mut s, a, &c, &r).map_err(|e| e.to_string())?;
            steps += 1;
            let decision = !matches!(a.kind, ActionKind::Env { .. });
            for t in &s.tags()[before..] {
                // decision tokens and observations never overlap
                if (*t == Provenance::Observation) == decision {
                    violations += 1;
                }
            }
            if out.exit && s.active_env != EnvId::LANGUAGE {
                violations += 1;
            }
            if matches!(a.kind, ActionKind::Vocab { token } if token == stop) {
                break;
            }
        }
    }
    ensure(violations == 0, || format!("{violations} violations in {steps} steps"))?;
    Ok(format!("{steps} steps, 0 violations"))
}

// 5
fn init_identity() -> Outcome {
    let (c, _) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut p = PolicyParameters::new(PolicyConfig::default(), &c, &mut rng).unwrap();
    p.init_expanded_actions(&c).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.gen_range(1..24);
        let h: Vec<TokenId> = (0..len).map(|_| TokenId(rng.gen_range(0..c.vocab_len()))).collect();
        let d = action_distribution(&p, &h, EnvId::LANGUAGE, &c).map_err(|e| e.to_string())?;
        for env in c.envs() {
            worst = worst.max((d.prob(c.route_index(env.id)) - d.prob(env.route_desc[0].0)).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max |Δ| = {worst:e}"))?;
    Ok(format!("100 histories, max |Δ| = {worst:e}"))
}

fn noisy(p: &PolicyParameters, scale: f64, seed: u64, fill_zeros: bool) -> PolicyParameters {
    let mut q = p.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scale).unwrap();
    for v in q.data.iter_mut() {
        if !fill_zeros || *v == 0.0 {
            *v += noise.sample(&mut rng);
        }
    }
    q
}

fn max_rel_error<F: Fn(&PolicyParameters) -> f64>(p: &PolicyParameters, grad: &[f64], f: F, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(30);
    let mut by_size: Vec<usize> = (0..p.len()).collect();
    by_size.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    idx.extend(&by_size[..15]);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in idx {
        let mut q = p.clone();
        q.data[i] += h;
        let up = f(&q);
        q.data[i] -= 2.0 * h;
        let numeric = (up - f(&q)) / (2.0 * h);
        let scale = grad[i].abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((grad[i] - numeric).abs() / scale);
        }
    }
    worst
}

// 6
fn gradients() -> Outcome {
    let (c, r) = setup();
    let cfg = PolicyConfig { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 12, max_positions: 64, init_std: 0.3 };
    let arith = gen(r#"{"kind": "arithmetic", "max_digits": 2, "min_ops": 1, "max_ops": 1, "n_instances": 10}"#, 3);
    let mut worst: f64 = 0.0;
    for case in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let old = noisy(&PolicyParameters::new(cfg, &c, &mut rng).unwrap(), 0.3, case, true);
        let reference = noisy(&old, 0.05, 100 + case, false);
        let new = noisy(&old, 0.03, 200 + case, false);
        let task = if case % 2 == 0 {
            TaskInstance::sorting(HiddenArray::new(vec![4, 1, 3], Direction::Descending), 0)
        } else {
            arith[case as usize].clone()
        };
        let ro = rollout(&UniformPolicy, &task, &c, &r, &RolloutOptions::new(10), &mut rng).map_err(|e| e.to_string())?;
        let ucfg = UpdateConfig { beta: 0.04, ..UpdateConfig::default() };
        let adv = if case % 2 == 0 { 1.3 } else { -0.7 };
        let (_, g) = ppo_surrogate(&new, &old, &reference, &ro, adv, &ucfg, &c).map_err(|e| e.to_string())?;
        worst = worst.max(max_rel_error(&new, &g, |q| ppo_surrogate(q, &old, &reference, &ro, adv, &ucfg, &c).unwrap().0, case));
        let h: Vec<TokenId> = (0..rng.gen_range(1..12)).map(|_| TokenId(rng.gen_range(0..c.vocab_len()))).collect();
        let mut g = vec![0.0; new.len()];
        kl_vocab_grad(&new, &reference, &h, &mut g);
        worst = worst.max(max_rel_error(&new, &g, |q| kl_vocab(q, &reference, &h), case));
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("10 configurations, max relative error {worst:.1e}"))
}

// 7
fn update_semantics() -> Outcome {
    let (b, a) = cpo_advantages(&[-1.0, 0.0, -0.5, 0.0], Some(&[1.0, 0.0, 0.5, -1.0]), 1e-6).map_err(|e| e.to_string())?;
    ensure(b == Branch::Counterfactual && a == vec![2.0, 0.0, 1.0, -1.0], || format!("counterfactual case gave {b:?} {a:?}"))?;
    let (b, a) = cpo_advantages(&[1.0, 0.0, 0.0, 1.0], None, 1e-6).map_err(|e| e.to_string())?;
    ensure(b == Branch::Factual && a == vec![1.0, -1.0, -1.0, 1.0], || format!("[1,0,0,1] gave {b:?} {a:?}"))?;
    let (b, a) = cpo_advantages(&[0.5, -0.5, 0.0, 0.0], Some(&[5.0; 4]), 1e-6).map_err(|e| e.to_string())?;
    ensure(b == Branch::Factual && a.iter().sum::<f64>() == 0.0, || format!("mixed case gave {b:?} {a:?}"))?;
    Ok("counterfactual r' - r, standardized [1,0,0,1] -> [1,-1,-1,1], exact zero mean".into())
}

// 8
fn counterfactual_construction() -> Outcome {
    let (c, r) = setup();
    let cfg = PolicyConfig { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32, max_positions: 128, init_std: 0.2 };
    let mut p = PolicyParameters::new(cfg, &c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    p.init_expanded_actions(&c).unwrap();
    let task = TaskInstance::sorting(HiddenArray::new(vec![5, 2, 8], Direction::Ascending), 0);
    let opts = RolloutOptions::new(14);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let factual = rollout(&UniformPolicy, &task, &c, &r, &opts, &mut rng).map_err(|e| e.to_string())?;
    let route = c.env_by_kind(EnvKind::Swap).unwrap().id;
    let desc = c.env(route).unwrap().route_desc[0];
    let hist = factual.final_state.history();
    // independent weights: π(desc | h_t) at each language step
    let weights: Vec<(usize, f64)> = factual
        .records
        .iter()
        .enumerate()
        .filter(|(_, rec)| rec.env.is_language())
        .map(|(t, rec)| (t, action_distribution(&p, &hist[..rec.pre_history_len], EnvId::LANGUAGE, &c).unwrap().prob(desc.0)))
        .collect();
    let lib = intervention_weights(&p, &factual, route, &c).map_err(|e| e.to_string())?;
    ensure(lib.len() == weights.len() && lib.iter().zip(&weights).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-12), || {
        "intervention weights differ from π(desc | h_t)".into()
    })?;
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let draws = 10_000;
    let mut counts = vec![0usize; factual.records.len()];
    for _ in 0..draws {
        let pair = counterfactual_rollout(&p, &factual, route, &task, &c, &r, &opts, &mut rng).map_err(|e| e.to_string())?;
        let t = pair.intervention_step;
        counts[t] += 1;
        let cf = &pair.counterfactual;
        let pre = factual.records[t].pre_history_len;
        ensure(cf.records[..t].iter().zip(&factual.records[..t]).all(|(a, b)| a.action == b.action), || "prefix actions differ".into())?;
        ensure(cf.final_state.history()[..pre] == hist[..pre], || "prefix history differs".into())?;
        ensure(cf.records[t].action == c.route_action(route) && cf.records[t].forced, || "route not forced at t'".into())?;
    }
    let mut worst: f64 = 0.0;
    for &(t, w) in &weights {
        let q = w / total;
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        let z = (counts[t] as f64 - draws as f64 * q).abs() / sigma.max(1e-12);
        worst = worst.max(z);
    }
    ensure(worst <= 3.0, || format!("max deviation {worst:.2} sigma"))?;
    Ok(format!("{} language steps, {draws} draws, max deviation {worst:.2} sigma", weights.len()))
}

fn train(json: &str, seed: u64) -> Result<Vec<MetricsRow>, String> {
    let mut cfg: TrainConfig = serde_json::from_str(json).map_err(|e| e.to_string())?;
    cfg.seed = seed;
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    t.run(std::io::sink(), None).map_err(|e| e.to_string())
}

const CURRICULUM: &str = r#"{"phases": [
  {"train": {"generate": {"kind": "sort", "mix": {"2": 1.0}, "n_instances": 2000}}, "episodes": 10000, "advance_at": 1.0, "max_steps": 16},
  {"train": {"generate": {"kind": "sort", "mix": {"3": 1.0}, "n_instances": 2000}}, "episodes": 10000, "advance_at": 0.95, "max_steps": 24}],
  "pretrain": {"transcripts": 4000}}"#;

// 9
fn end_to_end() -> Outcome {
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 1..=3 {
        let rows = train(CURRICULUM, seed)?;
        let sort2 = rows.iter().find(|r| r.phase == 0 && r.probe_accuracy == Some(1.0));
        let sort3 = rows.iter().find(|r| r.phase == 1 && r.probe_accuracy.is_some_and(|a| a >= 0.95));
        match (sort2, sort3) {
            (Some(a), Some(b)) if b.episodes <= 20_000 => {
                passed += 1;
                notes.push(format!("seed {seed}: Sort-2 at {} episodes, Sort-3 at {}", a.episodes, b.episodes));
            }
            _ => {
                let best = rows.iter().filter(|r| r.phase == 1).filter_map(|r| r.probe_accuracy).fold(0.0, f64::max);
                notes.push(format!("seed {seed}: failed (best Sort-3 probe {best:.3})"));
            }
        }
    }
    ensure(passed >= 2, || format!("{passed}/3 seeds; {}", notes.join("; ")))?;
    Ok(format!("{passed}/3 seeds; {}", notes.join("; ")))
}

fn micro_arithmetic(mode: &str) -> String {
    format!(
        r#"{{"phases": [{{"train": {{"generate": {{"kind": "arithmetic", "max_digits": 2, "min_ops": 1, "max_ops": 1, "ops": ["×"], "n_instances": 2000}}}}, "episodes": 10000}}],
            "pretrain": {{"transcripts": 2000}}, "update": {{"advantage_mode": "{mode}"}}}}"#
    )
}

// 10
fn exploration() -> Outcome {
    let mean = |rows: &[MetricsRow]| {
        let n = rows.len() as f64;
        (rows.iter().map(|r| r.mean_reward).sum::<f64>() / n, rows.iter().map(|r| r.tool_invocations_per_rollout).sum::<f64>() / n)
    };
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 1..=3 {
        let (cr, ct) = mean(&train(&micro_arithmetic("cpo"), seed)?);
        let (gr, gt) = mean(&train(&micro_arithmetic("grpo"), seed)?);
        if cr > gr && ct > gt {
            wins += 1;
        }
        notes.push(format!("seed {seed}: reward {cr:.3} vs {gr:.3}, tools {ct:.3} vs {gt:.3}"));
    }
    ensure(wins >= 2, || format!("CPO ahead on both metrics in {wins}/3 seeds; {}", notes.join("; ")))?;
    Ok(format!("CPO ahead on both in {wins}/3 seeds; {}", notes.join("; ")))
}

fn flat_value(nums: &[i64], ops: &[usize]) -> Option<Ratio<i128>> {
    let mut terms = vec![Ratio::from_integer(nums[0] as i128)];
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
        let Some(i) = (1..perm.len()).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return false;
        };
        let j = (i..perm.len()).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Two-stack evaluation of calculator keys.
fn reference_eval(tokens: &[&str]) -> Option<BigRational> {
    let prec = |op: &str| if op == "×" || op == "÷" { 2 } else { 1 };
    let apply = |out: &mut Vec<BigRational>, op: &str| -> Option<()> {
        let b = out.pop()?;
        let a = out.pop()?;
        out.push(match op {
            "+" => a + b,
            "−" => a - b,
            "×" => a * b,
            _ if b.is_zero() => return None,
            _ => a / b,
        });
        Some(())
    };
    let (mut output, mut ops): (Vec<BigRational>, Vec<&str>) = (Vec::new(), Vec::new());
    let mut num: Option<BigInt> = None;
    for &t in tokens {
        if let Some(d) = t.parse::<u32>().ok().filter(|_| t.len() == 1) {
            num = Some(num.unwrap_or_default() * 10 + d);
        } else if ["+", "−", "×", "÷"].contains(&t) {
            output.push(BigRational::from_integer(num.take()?));
            while ops.last().is_some_and(|top| prec(top) >= prec(t)) {
                apply(&mut output, ops.pop().unwrap())?;
            }
            ops.push(t);
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

fn render(q: &BigRational) -> Vec<String> {
    let mut s = if q.is_negative() { "−".to_string() } else { String::new() };
    s += &q.numer().abs().to_string();
    if !q.is_integer() {
        s += &format!("/{}", q.denom());
    }
    s.chars().map(|c| c.to_string()).collect()
}

// 11
fn generators_and_validators() -> Outcome {
    let (c, r) = setup();
    let tasks = gen(r#"{"kind": "countdown", "max_digits": 2, "max_ops": 3, "n_instances": 1000}"#, 5);
    for t in &tasks {
        let nums = t.metadata.numbers.clone().unwrap();
        let target = t.metadata.target_value.unwrap();
        ensure(reachable(&nums, target), || format!("unsolvable: {:?}", t.prompt))?;
    }
    let numbers = [3i64, 5, 7];
    let target = 3 + 5 * 7;
    let ops = ["+", "−", "×", "÷"];
    let mut fixtures = 0;
    for len in 1..=4usize {
        for pick in 0..3usize.pow(len as u32) {
            let operands: Vec<i64> = (0..len).map(|i| numbers[pick / 3usize.pow(i as u32) % 3]).collect();
            for code in 0..4usize.pow(len as u32 - 1) {
                let op_idx: Vec<usize> = (0..len - 1).map(|i| code / 4usize.pow(i as u32) % 4).collect();
                let mut toks = vec![operands[0].to_string()];
                for (o, n) in op_idx.iter().zip(&operands[1..]) {
                    toks.push(ops[*o].to_string());
                    toks.push(n.to_string());
                }
                let mut ms = operands.clone();
                ms.sort();
                let want = ms == numbers && flat_value(&operands, &op_idx) == Some(Ratio::from_integer(target as i128));
                ensure(verify_countdown_answer(&toks, &numbers, target) == want, || format!("verifier wrong on {toks:?}"))?;
                fixtures += 1;
            }
        }
    }
    let calc = c.env_by_kind(EnvKind::Calculator).unwrap().id;
    let keys_pool: Vec<&str> = CALCULATOR_BUTTONS.iter().copied().filter(|b| *b != EQUALS).collect();
    let digits: Vec<&str> = keys_pool.iter().copied().filter(|b| b.len() == 1 && b.as_bytes()[0].is_ascii_digit()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..10_000 {
        let keys: Vec<&str> = if case % 5 == 0 {
            (0..rng.gen_range(0..8)).map(|_| *keys_pool.choose(&mut rng).unwrap()).collect()
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
        let mut z = r.initial_latent(None);
        r.enter(calc, &mut z);
        let mut last = Vec::new();
        for k in keys.iter().chain([&EQUALS]) {
            let local = CALCULATOR_BUTTONS.iter().position(|b| b == k).unwrap();
            last = r.step(calc, &mut z, local).map_err(|e| e.to_string())?.observation;
        }
        let mut want = vec![EQUALS.to_string()];
        match reference_eval(&keys) {
            Some(q) => want.extend(render(&q)),
            None => want.push("ERR".into()),
        }
        ensure(last == want, || format!("calculator {keys:?}: {last:?} vs {want:?}"))?;
    }
    Ok(format!("1000 countdown instances solvable, {fixtures} verifier fixtures, 10000 calculator expressions"))
}

// 12
fn tree_pipeline() -> Outcome {
    let (c, r) = setup();
    let tree = pivot_tree(Direction::Ascending);
    let got = extract_decision_tree(&TreePolicy { tree: tree.clone() }, 4, Direction::Ascending, &c, &r, 64)
        .map_err(|e| e.to_string())?;
    for p in permutations(4) {
        ensure(got.schedule(&p) == tree.schedule(&p), || format!("schedule differs on {p:?}"))?;
    }
    let pruned = prune_redundant(&got);
    ensure(prune_redundant(&pruned) == pruned, || "pruning is not idempotent".into())?;
    ensure(pruned.stats().accuracy() == 1.0, || "pruned tree does not sort every input".into())?;
    ensure(pruned.node_count() <= got.node_count(), || "pruning added nodes".into())?;
    Ok(format!("24 schedules round-trip, {} nodes after pruning, accuracy 1.0", pruned.node_count()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("min_swap agrees with BFS for n <= 6", min_swap_oracle),
        ("optimal comparison trees 1, 3, 5, 7", optimal_trees),
        ("pivot sorter properties", pivot_properties),
        ("state-machine properties", state_machine),
        ("initialization identity", init_identity),
        ("gradient correctness", gradients),
        ("update-rule semantics", update_semantics),
        ("counterfactual construction", counterfactual_construction),
        ("end-to-end Sort-2/3 curriculum", end_to_end),
        ("CPO vs GRPO exploration", exploration),
        ("generator and validator correctness", generators_and_validators),
        ("decision-tree pipeline", tree_pipeline),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = f();
        let secs = t0.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
