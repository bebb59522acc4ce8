//! English number words and the paraphrase templates for arithmetic prompts.

use crate::envs::{FlatExpr, Op};
use crate::error::{Error, Result};

const SMALL: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];

const TENS: [&str; 10] = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

/// Largest value `number_words` can spell.
pub const MAX_WORD_NUMBER: u64 = 99_999;

fn below_hundred(n: u64, out: &mut Vec<&'static str>) {
    if n < 20 {
        out.push(SMALL[n as usize]);
    } else {
        out.push(TENS[(n / 10) as usize]);
        if !n.is_multiple_of(10) {
            out.push(SMALL[(n % 10) as usize]);
        }
    }
}

fn below_thousand(n: u64, out: &mut Vec<&'static str>) {
    if n >= 100 {
        out.push(SMALL[(n / 100) as usize]);
        out.push("hundred");
        if !n.is_multiple_of(100) {
            below_hundred(n % 100, out);
        }
    } else {
        below_hundred(n, out);
    }
}

/// "12345" -> twelve thousand three hundred forty five.
pub fn number_words(n: u64) -> Vec<&'static str> {
    assert!(n <= MAX_WORD_NUMBER, "{n} is too large to spell");
    let mut out = Vec::new();
    if n >= 1000 {
        below_thousand(n / 1000, &mut out);
        out.push("thousand");
        if !n.is_multiple_of(1000) {
            below_thousand(n % 1000, &mut out);
        }
    } else {
        below_thousand(n, &mut out);
    }
    out
}

fn word_value(w: &str) -> Option<u64> {
    SMALL
        .iter()
        .position(|s| *s == w)
        .map(|p| p as u64)
        .or_else(|| TENS.iter().position(|s| !s.is_empty() && *s == w).map(|p| 10 * p as u64))
}

/// Inverse of [`number_words`].
pub fn parse_number_words<S: AsRef<str>>(words: &[S]) -> Result<u64> {
    if words.is_empty() {
        return Err(Error::Eval("empty number".into()));
    }
    let (mut total, mut current) = (0u64, 0u64);
    for w in words {
        match w.as_ref() {
            "hundred" => current *= 100,
            "thousand" => {
                total += current * 1000;
                current = 0;
            }
            other => current += word_value(other).ok_or_else(|| Error::Eval(format!("not a number word: {other}")))?,
        }
    }
    Ok(total + current)
}

fn op_words(op: Op) -> &'static [&'static str] {
    match op {
        Op::Add => &["plus"],
        Op::Sub => &["minus"],
        Op::Mul => &["times"],
        Op::Div => &["divided", "by"],
    }
}

/// Prefix and suffix words of each paraphrase template.
pub const TEMPLATES: [(&[&str], &[&str]); 10] = [
    (&["what", "is"], &["?"]),
    (&["compute"], &[]),
    (&["evaluate"], &[]),
    (&["find"], &[]),
    (&["find", "the", "value", "of"], &[]),
    (&["what", "is", "the", "value", "of"], &["?"]),
    (&["tell", "me"], &[]),
    (&["please", "compute"], &[]),
    (&["what", "is", "the", "result", "of"], &["?"]),
    (&["compute", "the", "value", "of"], &[]),
];

/// Natural-language rendering of `expr` with template `template`.
pub fn paraphrase(expr: &FlatExpr, template: usize) -> Vec<String> {
    let (pre, post) = TEMPLATES[template];
    let mut out: Vec<String> = pre.iter().map(|s| s.to_string()).collect();
    let spell = |n: &num_bigint::BigInt| -> Vec<String> {
        let v: u64 = n.try_into().expect("operand fits in u64");
        number_words(v).into_iter().map(String::from).collect()
    };
    out.extend(spell(&expr.numbers[0]));
    for (op, n) in expr.ops.iter().zip(&expr.numbers[1..]) {
        out.extend(op_words(*op).iter().map(|s| s.to_string()));
        out.extend(spell(n));
    }
    out.extend(post.iter().map(|s| s.to_string()));
    out
}

/// Recover the symbolic expression from a paraphrased prompt.
pub fn detemplate<S: AsRef<str>>(prompt: &[S]) -> Result<FlatExpr> {
    let words: Vec<&str> = prompt.iter().map(|s| s.as_ref()).collect();
    let (pre, post) = TEMPLATES
        .iter()
        .filter(|(pre, post)| words.starts_with(pre) && words.ends_with(post))
        .max_by_key(|(pre, post)| pre.len() + post.len())
        .ok_or_else(|| Error::Eval("prompt matches no template".into()))?;
    let body = &words[pre.len()..words.len() - post.len()];
    let mut numbers = Vec::new();
    let mut ops = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        let op = match body[i] {
            "plus" => Some((Op::Add, 1)),
            "minus" => Some((Op::Sub, 1)),
            "times" => Some((Op::Mul, 1)),
            "divided" if body.get(i + 1) == Some(&"by") => Some((Op::Div, 2)),
            _ => None,
        };
        match op {
            Some((op, width)) => {
                numbers.push(parse_number_words(&current)?.into());
                current.clear();
                ops.push(op);
                i += width;
            }
            None => {
                current.push(body[i]);
                i += 1;
            }
        }
    }
    numbers.push(parse_number_words(&current)?.into());
    Ok(FlatExpr { numbers, ops })
}
