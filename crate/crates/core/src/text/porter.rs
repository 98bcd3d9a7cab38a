//! The Porter suffix-stripping algorithm, following the rule tables of the
//! original 1980 description (not the later "Porter2"/Snowball revision).
//!
//! Words of two letters or fewer are returned unchanged, as in the reference
//! C implementation. Input is expected to be lowercase ASCII letters; any
//! other character is treated as a consonant.

/// Runs a single pass of steps 1a through 5b.
///
/// The algorithm is not idempotent on its own (`agreed -> agre -> agr`), which
/// is why [`stem`] iterates this to a fixpoint.
pub fn stem_once(word: &str) -> String {
    if word.len() <= 2 || !word.is_ascii() {
        return word.to_string();
    }
    let mut w = Word(word.as_bytes().to_vec());
    w.step1a();
    w.step1b();
    w.step1c();
    w.step2();
    w.step3();
    w.step4();
    w.step5a();
    w.step5b();
    // Input was ASCII and every rule writes ASCII.
    String::from_utf8(w.0).expect("ascii")
}

/// Stems a token, re-applying the Porter passes until the output is stable.
///
/// Each pass never lengthens the word and same-length rewrites only move
/// `y -> i -> e`, so the loop terminates.
pub fn stem(word: &str) -> String {
    let mut current = stem_once(word);
    loop {
        let next = stem_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

struct Word(Vec<u8>);

impl Word {
    fn is_consonant(&self, i: usize) -> bool {
        match self.0[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.is_consonant(i - 1),
            _ => true,
        }
    }

    /// Measure m of the prefix `[0, end)`: the number of VC sequences in
    /// `[C](VC){m}[V]`.
    fn measure(&self, end: usize) -> usize {
        let mut i = 0;
        while i < end && self.is_consonant(i) {
            i += 1;
        }
        let mut m = 0;
        loop {
            while i < end && !self.is_consonant(i) {
                i += 1;
            }
            if i >= end {
                return m;
            }
            while i < end && self.is_consonant(i) {
                i += 1;
            }
            m += 1;
        }
    }

    fn has_vowel(&self, end: usize) -> bool {
        (0..end).any(|i| !self.is_consonant(i))
    }

    /// `*d`: prefix ends with a double consonant.
    fn double_consonant(&self, end: usize) -> bool {
        end >= 2 && self.0[end - 1] == self.0[end - 2] && self.is_consonant(end - 1)
    }

    /// `*o`: prefix ends consonant-vowel-consonant, last not w, x or y.
    fn cvc(&self, end: usize) -> bool {
        if end < 3 {
            return false;
        }
        let last = self.0[end - 1];
        self.is_consonant(end - 3)
            && !self.is_consonant(end - 2)
            && self.is_consonant(end - 1)
            && !matches!(last, b'w' | b'x' | b'y')
    }

    fn ends_with(&self, suffix: &str) -> bool {
        self.0.ends_with(suffix.as_bytes())
    }

    /// Length of the stem left when `suffix` is stripped.
    fn stem_len(&self, suffix: &str) -> usize {
        self.0.len() - suffix.len()
    }

    fn replace(&mut self, suffix: &str, with: &str) {
        let n = self.stem_len(suffix);
        self.0.truncate(n);
        self.0.extend_from_slice(with.as_bytes());
    }

    fn step1a(&mut self) {
        if self.ends_with("sses") {
            self.replace("sses", "ss");
        } else if self.ends_with("ies") {
            self.replace("ies", "i");
        } else if self.ends_with("ss") {
        } else if self.ends_with("s") {
            self.replace("s", "");
        }
    }

    fn step1b(&mut self) {
        if self.ends_with("eed") {
            if self.measure(self.stem_len("eed")) > 0 {
                self.replace("eed", "ee");
            }
            return;
        }
        let stripped = if self.ends_with("ed") && self.has_vowel(self.stem_len("ed")) {
            self.replace("ed", "");
            true
        } else if self.ends_with("ing") && self.has_vowel(self.stem_len("ing")) {
            self.replace("ing", "");
            true
        } else {
            false
        };
        if !stripped {
            return;
        }
        let len = self.0.len();
        if self.ends_with("at") || self.ends_with("bl") || self.ends_with("iz") {
            self.0.push(b'e');
        } else if self.double_consonant(len) && !matches!(self.0[len - 1], b'l' | b's' | b'z') {
            self.0.pop();
        } else if self.measure(len) == 1 && self.cvc(len) {
            self.0.push(b'e');
        }
    }

    fn step1c(&mut self) {
        if self.ends_with("y") && self.has_vowel(self.stem_len("y")) {
            self.replace("y", "i");
        }
    }

    /// Applies the rule with the longest matching suffix, if its stem has
    /// measure above `min_measure` and passes `extra`. Only that rule is
    /// considered even when its condition fails.
    fn apply_longest(
        &mut self,
        rules: &[(&str, &str)],
        min_measure: usize,
        extra: impl Fn(&Word, usize) -> bool,
    ) {
        let Some(&(suffix, with)) = rules
            .iter()
            .filter(|(s, _)| self.ends_with(s))
            .max_by_key(|(s, _)| s.len())
        else {
            return;
        };
        let stem_len = self.stem_len(suffix);
        if self.measure(stem_len) > min_measure && extra(self, stem_len) {
            self.replace(suffix, with);
        }
    }

    fn step2(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("ational", "ate"),
            ("tional", "tion"),
            ("enci", "ence"),
            ("anci", "ance"),
            ("izer", "ize"),
            ("abli", "able"),
            ("alli", "al"),
            ("entli", "ent"),
            ("eli", "e"),
            ("ousli", "ous"),
            ("ization", "ize"),
            ("ation", "ate"),
            ("ator", "ate"),
            ("alism", "al"),
            ("iveness", "ive"),
            ("fulness", "ful"),
            ("ousness", "ous"),
            ("aliti", "al"),
            ("iviti", "ive"),
            ("biliti", "ble"),
        ];
        self.apply_longest(RULES, 0, |_, _| true);
    }

    fn step3(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ];
        self.apply_longest(RULES, 0, |_, _| true);
    }

    fn step4(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("al", ""),
            ("ance", ""),
            ("ence", ""),
            ("er", ""),
            ("ic", ""),
            ("able", ""),
            ("ible", ""),
            ("ant", ""),
            ("ement", ""),
            ("ment", ""),
            ("ent", ""),
            ("ion", ""),
            ("ou", ""),
            ("ism", ""),
            ("ate", ""),
            ("iti", ""),
            ("ous", ""),
            ("ive", ""),
            ("ize", ""),
        ];
        let ends_ion = self.ends_with("ion");
        self.apply_longest(RULES, 1, |w, stem_len| {
            !ends_ion || (stem_len > 0 && matches!(w.0[stem_len - 1], b's' | b't'))
        });
    }

    fn step5a(&mut self) {
        if !self.ends_with("e") {
            return;
        }
        let stem_len = self.stem_len("e");
        let m = self.measure(stem_len);
        if m > 1 || (m == 1 && !self.cvc(stem_len)) {
            self.0.pop();
        }
    }

    fn step5b(&mut self) {
        let len = self.0.len();
        if self.measure(len) > 1 && self.double_consonant(len) && self.0[len - 1] == b'l' {
            self.0.pop();
        }
    }
}
