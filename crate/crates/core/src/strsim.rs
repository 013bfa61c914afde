//! Character-level similarity kernels and the per-pair string features.
//!
//! All kernels work on Unicode scalar values. ASCII inputs take a byte
//! path; strings up to 64 characters use bitmasks for the Jaro match
//! flags and Hyyrö's bit-parallel Levenshtein.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::AuthorIdentity;

/// Feature value used when either side of a comparison is empty.
pub const MISSING: f64 = -1.0;

#[derive(Debug, Error, PartialEq)]
pub enum StrSimError {
    #[error("winkler scaling factor {0} outside [0, 0.25]")]
    ScalingFactor(f64),
}

/// Jaro-Winkler prefix parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winkler {
    pub p: f64,
    pub l_max: usize,
}

impl Default for Winkler {
    fn default() -> Self {
        Self { p: 0.1, l_max: 4 }
    }
}

impl Winkler {
    pub fn new(p: f64, l_max: usize) -> Result<Self, StrSimError> {
        if !(0.0..=0.25).contains(&p) {
            return Err(StrSimError::ScalingFactor(p));
        }
        Ok(Self { p, l_max })
    }
}

fn jaro_slices<T: Copy + Eq>(a: &[T], b: &[T]) -> f64 {
    let (l1, l2) = (a.len(), b.len());
    if l1 == 0 || l2 == 0 {
        return 0.0;
    }
    let window = (l1.max(l2) / 2).saturating_sub(1);

    let mut matches = 0usize;
    let mut transposed = 0usize;
    if l1 <= 64 && l2 <= 64 {
        let mut a_flags = 0u64;
        let mut b_flags = 0u64;
        for (i, &ca) in a.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(l2);
            for (j, &cb) in b.iter().enumerate().take(hi).skip(lo) {
                if b_flags & (1 << j) == 0 && ca == cb {
                    a_flags |= 1 << i;
                    b_flags |= 1 << j;
                    matches += 1;
                    break;
                }
            }
        }
        if matches == 0 {
            return 0.0;
        }
        let mut bf = b_flags;
        let mut af = a_flags;
        while af != 0 {
            let i = af.trailing_zeros() as usize;
            let j = bf.trailing_zeros() as usize;
            if a[i] != b[j] {
                transposed += 1;
            }
            af &= af - 1;
            bf &= bf - 1;
        }
    } else {
        let mut a_flags = vec![false; l1];
        let mut b_flags = vec![false; l2];
        for (i, &ca) in a.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(l2);
            for j in lo..hi {
                if !b_flags[j] && ca == b[j] {
                    a_flags[i] = true;
                    b_flags[j] = true;
                    matches += 1;
                    break;
                }
            }
        }
        if matches == 0 {
            return 0.0;
        }
        let mut k = 0;
        for (i, _) in a_flags.iter().enumerate().filter(|(_, f)| **f) {
            while !b_flags[k] {
                k += 1;
            }
            if a[i] != b[k] {
                transposed += 1;
            }
            k += 1;
        }
    }
    let m = matches as f64;
    let t = transposed as f64 / 2.0;
    (m / l1 as f64 + m / l2 as f64 + (m - t) / m) / 3.0
}

/// Jaro similarity; 0 when no characters match (including empty input).
pub fn jaro(s1: &str, s2: &str) -> f64 {
    if s1.is_ascii() && s2.is_ascii() {
        jaro_slices(s1.as_bytes(), s2.as_bytes())
    } else {
        let a: Vec<char> = s1.chars().collect();
        let b: Vec<char> = s2.chars().collect();
        jaro_slices(&a, &b)
    }
}

fn common_prefix(s1: &str, s2: &str, cap: usize) -> usize {
    s1.chars()
        .zip(s2.chars())
        .take(cap)
        .take_while(|(a, b)| a == b)
        .count()
}

/// Jaro-Winkler similarity: `jaro + l * p * (1 - jaro)` with `l` the
/// common prefix length capped at `l_max`.
pub fn jaro_winkler(s1: &str, s2: &str, p: f64, l_max: usize) -> Result<f64, StrSimError> {
    Ok(jaro_winkler_with(s1, s2, Winkler::new(p, l_max)?))
}

/// Jaro-Winkler with pre-validated parameters.
pub fn jaro_winkler_with(s1: &str, s2: &str, w: Winkler) -> f64 {
    let sim = jaro(s1, s2);
    if sim == 0.0 {
        return 0.0;
    }
    let l = common_prefix(s1, s2, w.l_max) as f64;
    sim + l * w.p * (1.0 - sim)
}

fn levenshtein_dp<T: Copy + Eq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(up).min(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

/// Hyyrö's bit-parallel edit distance; `a` must have 1..=64 elements.
fn levenshtein_bits<T: Copy + Eq>(a: &[T], b: &[T], peq: impl Fn(T) -> u64) -> usize {
    let m = a.len();
    let last = 1u64 << (m - 1);
    let mut vp = if m == 64 { !0 } else { (1u64 << m) - 1 };
    let mut vn = 0u64;
    let mut dist = m;
    for &c in b {
        let pm = peq(c);
        let d0 = (((pm & vp).wrapping_add(vp)) ^ vp) | pm | vn;
        let hp = vn | !(d0 | vp);
        let hn = d0 & vp;
        if hp & last != 0 {
            dist += 1;
        }
        if hn & last != 0 {
            dist -= 1;
        }
        let hp = (hp << 1) | 1;
        let hn = hn << 1;
        vp = hn | !(d0 | hp);
        vn = hp & d0;
    }
    dist
}

/// Levenshtein edit distance in characters.
pub fn levenshtein(s1: &str, s2: &str) -> usize {
    if s1.is_ascii() && s2.is_ascii() {
        let (a, b) = (s1.as_bytes(), s2.as_bytes());
        let (a, b) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        if a.is_empty() {
            return b.len();
        }
        if a.len() <= 64 {
            let mut table = [0u64; 128];
            for (i, &c) in a.iter().enumerate() {
                table[c as usize] |= 1 << i;
            }
            return levenshtein_bits(a, b, |c| table[c as usize]);
        }
        levenshtein_dp(a, b)
    } else {
        let a: Vec<char> = s1.chars().collect();
        let b: Vec<char> = s2.chars().collect();
        let (a, b) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        if a.is_empty() {
            return b.len();
        }
        if a.len() <= 64 {
            let mut table: Vec<(char, u64)> = Vec::with_capacity(a.len());
            for (i, &c) in a.iter().enumerate() {
                match table.iter_mut().find(|(k, _)| *k == c) {
                    Some((_, mask)) => *mask |= 1 << i,
                    None => table.push((c, 1 << i)),
                }
            }
            return levenshtein_bits(&a, &b, |c| {
                table.iter().find(|(k, _)| *k == c).map_or(0, |(_, m)| *m)
            });
        }
        levenshtein_dp(&a, &b)
    }
}

/// `1 - distance / max(len)`; 1.0 for two empty strings.
pub fn levenshtein_similarity(s1: &str, s2: &str) -> f64 {
    let longest = s1.chars().count().max(s2.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(s1, s2) as f64 / longest as f64
}

/// The six Jaro-Winkler features of a pair. Each value is in `[0, 1]` or
/// [`MISSING`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringFeatureSet {
    pub jw_name: f64,
    pub jw_email: f64,
    pub jw_first: f64,
    pub jw_last: f64,
    pub jw_user: f64,
    pub jw_inverse_first: f64,
}

impl StringFeatureSet {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.jw_name,
            self.jw_email,
            self.jw_first,
            self.jw_last,
            self.jw_user,
            self.jw_inverse_first,
        ]
    }
}

/// Lower-cases both sides and compares; [`MISSING`] if either is empty.
fn compare(a: &str, b: &str, w: Winkler) -> f64 {
    if a.is_empty() || b.is_empty() {
        return MISSING;
    }
    jaro_winkler_with(&a.to_lowercase(), &b.to_lowercase(), w)
}

/// Case-insensitive Jaro-Winkler.
pub fn jaro_winkler_ci(a: &str, b: &str, w: Winkler) -> f64 {
    jaro_winkler_with(&a.to_lowercase(), &b.to_lowercase(), w)
}

/// Jaro-Winkler over name, email, first, last and user name, plus the
/// inverse first name: the better of first-vs-last in either direction.
pub fn pair_string_features(a1: &AuthorIdentity, a2: &AuthorIdentity, w: Winkler) -> StringFeatureSet {
    let cross1 = compare(&a1.first_name, &a2.last_name, w);
    let cross2 = compare(&a1.last_name, &a2.first_name, w);
    StringFeatureSet {
        jw_name: compare(&a1.name, &a2.name, w),
        jw_email: compare(&a1.email, &a2.email, w),
        jw_first: compare(&a1.first_name, &a2.first_name, w),
        jw_last: compare(&a1.last_name, &a2.last_name, w),
        jw_user: compare(&a1.user_name, &a2.user_name, w),
        jw_inverse_first: cross1.max(cross2),
    }
}

/// Levenshtein similarity of name and email, lower-cased, with the same
/// missing-value convention.
pub fn pair_levenshtein_features(a1: &AuthorIdentity, a2: &AuthorIdentity) -> [f64; 2] {
    let lev = |a: &str, b: &str| {
        if a.is_empty() || b.is_empty() {
            MISSING
        } else {
            levenshtein_similarity(&a.to_lowercase(), &b.to_lowercase())
        }
    };
    [lev(&a1.name, &a2.name), lev(&a1.email, &a2.email)]
}
