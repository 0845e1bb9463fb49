//! Value perturbations that turn exact joins into fuzzy ones: keyboard
//! typos and alternative formats for dates, money and street suffixes.

use std::sync::OnceLock;

use rand::Rng;
use regex::{Captures, Regex};

use crate::repo::is_missing;

const KEY_ROWS: [&str; 4] = ["1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"];

/// Physical neighbors of a key on a QWERTY layout: same-row left/right plus
/// the two touching keys in the rows above and below (rows are staggered so
/// key `i` touches `i, i+1` above and `i-1, i` below).
pub fn keyboard_neighbors(c: char) -> Vec<char> {
    let lower = c.to_ascii_lowercase();
    let Some((row, col)) = KEY_ROWS
        .iter()
        .enumerate()
        .find_map(|(r, keys)| keys.find(lower).map(|i| (r, i)))
    else {
        return Vec::new();
    };
    let at = |r: usize, i: isize| -> Option<char> {
        if i < 0 {
            return None;
        }
        KEY_ROWS[r].chars().nth(i as usize)
    };
    let col = col as isize;
    let mut out = Vec::new();
    out.extend(at(row, col - 1));
    out.extend(at(row, col + 1));
    if row > 0 {
        out.extend(at(row - 1, col));
        out.extend(at(row - 1, col + 1));
    }
    if row + 1 < KEY_ROWS.len() {
        out.extend(at(row + 1, col - 1));
        out.extend(at(row + 1, col));
    }
    if c.is_ascii_uppercase() {
        out.iter_mut().for_each(|k| *k = k.to_ascii_uppercase());
    }
    out
}

fn has_neighbors(c: char) -> bool {
    !keyboard_neighbors(c).is_empty()
}

/// One keyboard-proximity edit: substitute, insert or delete a character.
/// Deletion is never chosen for single-character values.
pub fn keyboard_typo(v: &str, rng: &mut impl Rng) -> String {
    let chars: Vec<char> = v.chars().collect();
    let mappable: Vec<usize> = (0..chars.len()).filter(|&i| has_neighbors(chars[i])).collect();
    let mut ops: Vec<u8> = vec![1];
    if !mappable.is_empty() {
        ops.push(0);
    }
    if chars.len() > 1 {
        ops.push(2);
    }
    ops.sort_unstable();
    let mut out = chars.clone();
    match ops[rng.gen_range(0..ops.len())] {
        0 => {
            let i = mappable[rng.gen_range(0..mappable.len())];
            let nbrs = keyboard_neighbors(chars[i]);
            out[i] = nbrs[rng.gen_range(0..nbrs.len())];
        }
        1 => {
            let pos = rng.gen_range(0..=chars.len());
            // a neighbor of the key next to the insertion point, when there is one
            let anchor = [pos.checked_sub(1), Some(pos)]
                .into_iter()
                .flatten()
                .find(|&i| i < chars.len() && has_neighbors(chars[i]));
            let ch = match anchor {
                Some(i) => {
                    let nbrs = keyboard_neighbors(chars[i]);
                    nbrs[rng.gen_range(0..nbrs.len())]
                }
                None => char::from(b'a' + rng.gen_range(0..26u8)),
            };
            out.insert(pos, ch);
        }
        _ => {
            out.remove(rng.gen_range(0..chars.len()));
        }
    }
    out.into_iter().collect()
}

fn iso_date() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d{4})-(\d{2})-(\d{2})$").unwrap())
}

fn us_date() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{4})$").unwrap())
}

fn dollar_amount() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\$(\d{1,3}(?:,\d{3})+|\d+)(\.\d+)?$").unwrap())
}

fn usd_amount() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)(\.\d+)? USD$").unwrap())
}

fn street_word() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(street|st|avenue|ave|road|rd|boulevard|blvd)\b").unwrap())
}

const STREET_PAIRS: [(&str, &str); 4] = [
    ("street", "st"),
    ("avenue", "ave"),
    ("road", "rd"),
    ("boulevard", "blvd"),
];

fn match_case(template: &str, word: &str) -> String {
    if template.chars().all(|c| c.is_uppercase()) && template.chars().count() > 1 {
        word.to_uppercase()
    } else if template.chars().next().is_some_and(char::is_uppercase) {
        let mut cs = word.chars();
        cs.next()
            .map(|f| f.to_uppercase().chain(cs).collect())
            .unwrap_or_default()
    } else {
        word.to_owned()
    }
}

fn group_thousands(digits: &str) -> String {
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn valid_date(month: u32, day: u32) -> bool {
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// Alternative rendering of a value with a recognized format, if any.
pub fn format_variant(v: &str) -> Option<String> {
    if let Some(c) = iso_date().captures(v) {
        let (m, d): (u32, u32) = (c[2].parse().ok()?, c[3].parse().ok()?);
        return valid_date(m, d).then(|| format!("{}/{}/{}", &c[2], &c[3], &c[1]));
    }
    if let Some(c) = us_date().captures(v) {
        let (m, d): (u32, u32) = (c[1].parse().ok()?, c[2].parse().ok()?);
        return valid_date(m, d).then(|| format!("{}-{m:02}-{d:02}", &c[3]));
    }
    if let Some(c) = dollar_amount().captures(v) {
        let digits = c[1].replace(',', "");
        let frac = c.get(2).map_or("", |m| m.as_str());
        return Some(format!("{digits}{frac} USD"));
    }
    if let Some(c) = usd_amount().captures(v) {
        let frac = c.get(2).map_or("", |m| m.as_str());
        return Some(format!("${}{frac}", group_thousands(&c[1])));
    }
    let replaced = street_word().replace_all(v, |c: &Captures| {
        let word = &c[0];
        let lower = word.to_lowercase();
        let target = STREET_PAIRS
            .iter()
            .find_map(|&(full, short)| {
                if lower == full {
                    Some(short)
                } else if lower == short {
                    Some(full)
                } else {
                    None
                }
            })
            .unwrap_or(word);
        match_case(word, target)
    });
    (replaced != v).then(|| replaced.into_owned())
}

/// Either a format variant or a keyboard typo, with equal probability; the
/// typo is the fallback when no format applies. Never yields a missing marker.
pub fn perturb_value(v: &str, rng: &mut impl Rng) -> String {
    let use_format = rng.gen_bool(0.5);
    if use_format {
        if let Some(f) = format_variant(v) {
            if !is_missing(&f) {
                return f;
            }
        }
    }
    for _ in 0..8 {
        let t = keyboard_typo(v, rng);
        if !is_missing(&t) {
            return t;
        }
    }
    v.to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn qwerty_neighbors() {
        let c = keyboard_neighbors('c');
        for k in ['x', 'v', 'd', 'f'] {
            assert!(c.contains(&k), "{k}");
        }
        assert_eq!(keyboard_neighbors('C')[0], 'X');
        assert!(keyboard_neighbors('q').contains(&'1'));
        assert!(keyboard_neighbors('-').is_empty());
    }

    #[test]
    fn science_becomes_scienxe() {
        let mut found = false;
        for seed in 0..500 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if keyboard_typo("science", &mut rng) == "scienxe" {
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn typo_is_one_edit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = keyboard_typo("boston", &mut rng);
            let diff = t.chars().count() as isize - 6;
            assert!(diff.abs() <= 1);
            assert_ne!(t, "boston");
        }
    }

    #[test]
    fn single_char_never_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t = keyboard_typo("a", &mut rng);
            assert!(!t.is_empty());
            assert!(!perturb_value("x", &mut rng).is_empty());
        }
    }

    #[test]
    fn perturbation_never_produces_missing_marker() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in ["nan", "non", "nulk", "a", "n/b", "nome", "1"] {
            for _ in 0..300 {
                assert!(!is_missing(&perturb_value(v, &mut rng)), "{v}");
            }
        }
    }

    #[test]
    fn street_variants() {
        assert_eq!(format_variant("170 Amsterdam Avenue").unwrap(), "170 Amsterdam Ave");
        assert_eq!(format_variant("55 Broadway St").unwrap(), "55 Broadway Street");
        assert_eq!(format_variant("9 ELM ROAD").unwrap(), "9 ELM RD");
        assert_eq!(format_variant("1 sunset blvd").unwrap(), "1 sunset boulevard");
        assert_eq!(format_variant("Stanford"), None);
        assert_eq!(format_variant("hello"), None);
    }

    fn parse_date(s: &str) -> Option<(u32, u32, u32)> {
        if let Some((y, rest)) = s.split_once('-') {
            let (m, d) = rest.split_once('-')?;
            return Some((y.parse().ok()?, m.parse().ok()?, d.parse().ok()?));
        }
        let mut it = s.split('/');
        let (m, d, y) = (it.next()?, it.next()?, it.next()?);
        Some((y.parse().ok()?, m.parse().ok()?, d.parse().ok()?))
    }

    #[test]
    fn date_variants_preserve_the_date() {
        assert_eq!(format_variant("2021-05-03").unwrap(), "05/03/2021");
        for v in ["2021-05-03", "1999-12-31", "5/3/2021", "12/31/1999"] {
            let f = format_variant(v).unwrap();
            assert_eq!(parse_date(&f), parse_date(v), "{v} -> {f}");
        }
        assert_eq!(format_variant("2021-13-03"), None);
    }

    fn parse_money(s: &str) -> f64 {
        s.trim_start_matches('$').trim_end_matches(" USD").replace(',', "").parse().unwrap()
    }

    #[test]
    fn money_variants_preserve_the_amount() {
        assert_eq!(format_variant("$5,000.00").unwrap(), "5000.00 USD");
        assert_eq!(format_variant("1234.56 USD").unwrap(), "$1,234.56");
        assert_eq!(format_variant("$1,234.56").unwrap(), "1234.56 USD");
        for v in ["$5,000.00", "$12", "1000000 USD", "999.5 USD"] {
            let f = format_variant(v).unwrap();
            assert_eq!(parse_money(&f), parse_money(v), "{v} -> {f}");
        }
    }
}
