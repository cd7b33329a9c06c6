//! Free-semigroup words over the alphabet {1..n} and graded-lexicographic
//! indexing of the truncated Fock basis, together with creation-operator
//! matrices and coefficient-space ampliations.

use crate::numsub::CMat;
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A word in the free semigroup on {1..n}; the empty word is the identity.
///
/// Words order graded-lexicographically (shorter first, then letterwise), the
/// same order used by [`FockIndex`], so sorted maps over words iterate in
/// basis order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word(Vec<u8>);

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.len(), &self.0).cmp(&(other.0.len(), &other.0))
    }
}

impl Word {
    /// The empty word.
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Build a word from letters, validating that each lies in 1..=n.
    pub fn new(letters: &[u8], n: usize) -> Result<Self> {
        for &l in letters {
            if l == 0 || l as usize > n {
                return Err(Error::Invalid(format!(
                    "letter {l} outside alphabet 1..={n}"
                )));
            }
        }
        Ok(Word(letters.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    /// Concatenation a·b (letters of `self` followed by letters of `b`).
    pub fn concat(&self, b: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&b.0);
        Word(v)
    }

    /// Serialize as a digit string: "" for the empty word, "121" for 1·2·1.
    pub fn to_digits(&self) -> String {
        self.0.iter().map(|l| l.to_string()).collect()
    }

    /// Parse a digit string produced by `to_digits`.
    pub fn from_digits(s: &str, n: usize) -> Result<Self> {
        let mut letters = Vec::with_capacity(s.len());
        for c in s.chars() {
            let d = c
                .to_digit(10)
                .ok_or_else(|| Error::Parse(format!("bad word digit {c:?}")))?;
            letters.push(d as u8);
        }
        Word::new(&letters, n)
    }
}

/// Graded-lexicographic enumeration of all words of length <= N over {1..n}.
///
/// Positions are grade-monotone: shorter words come first, and words of equal
/// length are ordered lexicographically with 1 < 2 < ... < n.
#[derive(Debug, Clone)]
pub struct FockIndex {
    n: usize,
    cap: usize,
    words: Vec<Word>,
    /// grade_offsets[g] = position of the first word of length g; has cap+2 entries
    /// so that grade_offsets[cap+1] = total word count.
    grade_offsets: Vec<usize>,
}

/// Total number of words of length <= cap over an n-letter alphabet,
/// with an overflow guard for absurd sizes.
fn word_count(n: usize, cap: usize) -> Result<usize> {
    let mut total: usize = 0;
    let mut grade: usize = 1;
    for _ in 0..=cap {
        total = total
            .checked_add(grade)
            .ok_or_else(|| Error::Sizing("word count overflows".into()))?;
        grade = grade
            .checked_mul(n)
            .ok_or_else(|| Error::Sizing("word count overflows".into()))?;
        if total > 100_000_000 {
            return Err(Error::Sizing(format!(
                "truncated basis too large (n={n}, N={cap})"
            )));
        }
    }
    Ok(total)
}

impl FockIndex {
    /// Enumerate the truncated Fock basis for alphabet size n and truncation
    /// degree cap.
    pub fn new(n: usize, cap: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Sizing("alphabet size must be >= 1".into()));
        }
        let total = word_count(n, cap)?;
        let mut words = Vec::with_capacity(total);
        let mut grade_offsets = Vec::with_capacity(cap + 2);
        words.push(Word::empty());
        grade_offsets.push(0);
        let mut prev_grade: Vec<Word> = vec![Word::empty()];
        for _ in 1..=cap {
            grade_offsets.push(words.len());
            let mut cur = Vec::with_capacity(prev_grade.len() * n);
            // Lexicographic order within a grade: extend on the right, outer
            // loop over the prefix keeps prefixes sorted, inner loop appends
            // letters in increasing order... but left-lex requires the FIRST
            // letter to vary slowest, so prepend instead.
            for first in 1..=n as u8 {
                for w in &prev_grade {
                    let mut letters = Vec::with_capacity(w.len() + 1);
                    letters.push(first);
                    letters.extend_from_slice(w.letters());
                    cur.push(Word(letters));
                }
            }
            words.extend(cur.iter().cloned());
            prev_grade = cur;
        }
        grade_offsets.push(words.len());
        debug_assert_eq!(words.len(), total);
        Ok(FockIndex {
            n,
            cap,
            words,
            grade_offsets,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Total number of basis words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, pos: usize) -> &Word {
        &self.words[pos]
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    /// Position of the first word of grade g (g <= cap+1; the latter returns len()).
    pub fn grade_offset(&self, g: usize) -> usize {
        self.grade_offsets[g]
    }

    /// Number of words of length <= g.
    pub fn dim_up_to_grade(&self, g: usize) -> usize {
        if g >= self.cap {
            self.len()
        } else {
            self.grade_offsets[g + 1]
        }
    }

    /// Position of a word, or None if it is longer than the truncation.
    pub fn position(&self, w: &Word) -> Option<usize> {
        let g = w.len();
        if g > self.cap {
            return None;
        }
        // Within grade g the words are ordered lexicographically, i.e. as
        // base-n numerals with the leading letter most significant.
        let mut idx = 0usize;
        for &l in w.letters() {
            idx = idx * self.n + (l as usize - 1);
        }
        Some(self.grade_offsets[g] + idx)
    }
}

/// Matrix of the left creation operator S_i on the truncated Fock space:
/// e_α ↦ e_{iα} for |α| < N, and 0 on the top grade (truncation convention).
pub fn creation_matrix(i: usize, idx: &FockIndex) -> Result<CMat> {
    if i == 0 || i > idx.n() {
        return Err(Error::Invalid(format!(
            "creation index {i} outside 1..={}",
            idx.n()
        )));
    }
    let l = idx.len();
    let mut m = CMat::zeros(l, l);
    let letter = Word(vec![i as u8]);
    for (col, w) in idx.words().iter().enumerate() {
        if w.len() < idx.cap() {
            let target = letter.concat(w);
            let row = idx.position(&target).expect("within truncation");
            m[(row, col)] = Complex64::new(1.0, 0.0);
        }
    }
    Ok(m)
}

/// Matrix of the right creation operator e_α ↦ e_{αi}; mirrored constructor
/// kept for completeness tests only.
pub fn right_creation_matrix(i: usize, idx: &FockIndex) -> Result<CMat> {
    if i == 0 || i > idx.n() {
        return Err(Error::Invalid(format!(
            "creation index {i} outside 1..={}",
            idx.n()
        )));
    }
    let l = idx.len();
    let mut m = CMat::zeros(l, l);
    let letter = Word(vec![i as u8]);
    for (col, w) in idx.words().iter().enumerate() {
        if w.len() < idx.cap() {
            let target = w.concat(&letter);
            let row = idx.position(&target).expect("within truncation");
            m[(row, col)] = Complex64::new(1.0, 0.0);
        }
    }
    Ok(m)
}

/// Matrix of the product S_α = S_{α_1}···S_{α_m} acting e_β ↦ e_{αβ},
/// assembled directly from the word action (cheaper than multiplying the
/// individual creation matrices).
pub fn word_creation_matrix(alpha: &Word, idx: &FockIndex) -> CMat {
    let l = idx.len();
    let mut m = CMat::zeros(l, l);
    for (col, w) in idx.words().iter().enumerate() {
        if alpha.len() + w.len() <= idx.cap() {
            let row = idx.position(&alpha.concat(w)).expect("within truncation");
            m[(row, col)] = Complex64::new(1.0, 0.0);
        }
    }
    m
}

/// Ampliation A ⊗ I_m with the repo-wide index convention: position of the
/// basis vector e_α ⊗ δ_c is pos(α)·m + c (word-major, coefficient-minor).
pub fn ampliate(a: &CMat, m: usize) -> CMat {
    let (r, c) = a.shape();
    let mut out = CMat::zeros(r * m, c * m);
    for i in 0..r {
        for j in 0..c {
            let v = a[(i, j)];
            if v != Complex64::new(0.0, 0.0) {
                for k in 0..m {
                    out[(i * m + k, j * m + k)] = v;
                }
            }
        }
    }
    out
}

/// Projection onto the span of e_α ⊗ C^m over words with g_lo <= |α| <= g_hi.
pub fn grade_band_projector(idx: &FockIndex, m: usize, g_lo: usize, g_hi: usize) -> CMat {
    let l = idx.len();
    let mut p = CMat::zeros(l * m, l * m);
    let hi = g_hi.min(idx.cap());
    if g_lo > hi {
        return p;
    }
    let start = idx.grade_offset(g_lo) * m;
    let end = idx.dim_up_to_grade(hi) * m;
    for t in start..end {
        p[(t, t)] = Complex64::new(1.0, 0.0);
    }
    p
}
