//! Deterministic byte-pair subwords over camelCase / snake_case pieces.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::mir::Instruction;
use crate::{invalid, Error, Result};

pub const UNK: u32 = 0;
pub const PAD: u32 = 1;
const UNK_TOKEN: &str = "<unk>";
const PAD_TOKEN: &str = "<pad>";

/// Merge table plus the dense token-id mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocab {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

/// Splits source text into atoms: identifier/number runs and operator
/// symbols. Two-character relational operators stay whole.
pub fn atoms(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
            if matches!(two.as_str(), "<=" | ">=" | "==" | "!=") {
                out.push(two);
                i += 2;
            } else {
                out.push(c.to_string());
                i += 1;
            }
        }
    }
    out
}

/// Splits an identifier on `_`, lower→upper transitions, acronym boundaries
/// (`HTTPServer` → `HTTP`, `Server`) and letter/digit transitions.
pub fn split_identifier(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in word.split('_').filter(|p| !p.is_empty()) {
        let chars: Vec<char> = part.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && cur.is_uppercase())
                || (prev.is_uppercase() && cur.is_uppercase() && next.is_some_and(char::is_lowercase))
                || (prev.is_alphabetic() && cur.is_ascii_digit())
                || (prev.is_ascii_digit() && cur.is_alphabetic());
            if boundary {
                out.push(chars[start..i].iter().collect());
                start = i;
            }
        }
        out.push(chars[start..].iter().collect());
    }
    out
}

/// Lowercased pieces of an instruction text, before any merges.
pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for atom in atoms(text) {
        if atom.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_') {
            out.extend(split_identifier(&atom).into_iter().map(|p| p.to_lowercase()));
        } else {
            out.push(atom);
        }
    }
    out
}

fn symbols(piece: &str) -> Vec<String> {
    piece.chars().map(String::from).collect()
}

/// Learns merges until the vocabulary holds `target_size` ids or no adjacent
/// pair occurs at least twice. Ties go to the lexicographically smaller pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<SubwordVocab> {
    if corpus.is_empty() {
        return invalid("train_bpe: empty corpus");
    }
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for p in pieces(text.as_ref()) {
            *words.entry(p).or_default() += 1;
        }
    }
    let mut alphabet: Vec<String> = words.keys().flat_map(|w| symbols(w)).collect();
    alphabet.sort();
    alphabet.dedup();
    if target_size < alphabet.len() + 2 {
        return invalid(format!(
            "train_bpe: target size {target_size} below alphabet size {} + 2 specials",
            alphabet.len()
        ));
    }
    let mut vocab = SubwordVocab::empty();
    for s in alphabet {
        vocab.push_token(s);
    }
    let mut segmented: Vec<(Vec<String>, usize)> = words.into_iter().map(|(w, c)| (symbols(&w), c)).collect();
    while vocab.len() < target_size {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, c) in &segmented {
            for w in syms.windows(2) {
                *counts.entry((&w[0], &w[1])).or_default() += c;
            }
        }
        // BTreeMap iterates pairs in ascending order, so the first maximum wins ties.
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, c) in counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in segmented.iter_mut() {
            apply_merge(syms, &l, &r);
        }
        vocab.push_merge(l, r);
    }
    Ok(vocab)
}

fn apply_merge(syms: &mut Vec<String>, l: &str, r: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == l && syms[i + 1] == r {
            let merged = format!("{l}{r}");
            syms[i] = merged;
            syms.remove(i + 1);
        }
        i += 1;
    }
}

impl SubwordVocab {
    fn empty() -> Self {
        let mut v = SubwordVocab {
            merges: Vec::new(),
            ranks: HashMap::new(),
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        v.push_token(UNK_TOKEN.into());
        v.push_token(PAD_TOKEN.into());
        v
    }

    fn push_token(&mut self, t: String) {
        if !self.ids.contains_key(&t) {
            self.ids.insert(t.clone(), self.tokens.len() as u32);
            self.tokens.push(t);
        }
    }

    fn push_merge(&mut self, l: String, r: String) {
        self.ranks.insert((l.clone(), r.clone()), self.merges.len());
        self.push_token(format!("{l}{r}"));
        self.merges.push((l, r));
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Subword strings of one piece after greedy lowest-rank merging.
    pub fn segment(&self, piece: &str) -> Vec<String> {
        let mut syms = symbols(piece);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = self.merges[rank].clone();
            apply_merge(&mut syms, &l, &r);
        }
        syms
    }

    /// Ids for one piece; a piece with any unknown symbol becomes one `UNK`.
    pub fn encode_piece(&self, piece: &str) -> Vec<u32> {
        let segs = self.segment(piece);
        let ids: Option<Vec<u32>> = segs.iter().map(|s| self.id(s)).collect();
        ids.unwrap_or_else(|| vec![UNK])
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        let out: Vec<u32> = pieces(text).iter().flat_map(|p| self.encode_piece(p)).collect();
        if out.is_empty() {
            vec![UNK]
        } else {
            out
        }
    }

    /// Vocabulary serialization: merges as `rank\tleft\tright`, then the token
    /// table as `id\ttoken`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (rank, (l, r)) in self.merges.iter().enumerate() {
            writeln!(s, "{rank}\t{l}\t{r}").unwrap();
        }
        for (id, t) in self.tokens.iter().enumerate() {
            writeln!(s, "{id}\t{t}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Invalid(format!("vocab line {}: malformed `{line}`", n + 1));
            let index: usize = fields[0].parse().map_err(|_| bad())?;
            match fields.len() {
                3 if tokens.is_empty() && index == merges.len() => {
                    merges.push((fields[1].to_string(), fields[2].to_string()))
                }
                2 if index == tokens.len() => tokens.push(fields[1].to_string()),
                _ => return Err(bad()),
            }
        }
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(PAD_TOKEN)
        {
            return invalid("vocab: missing special tokens");
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Ok(SubwordVocab {
            merges,
            ranks,
            tokens,
            ids,
        })
    }
}

/// Subword ids of an instruction's canonical text; never empty, never `PAD`.
pub fn tokenize_instruction(instr: &Instruction, vocab: &SubwordVocab) -> Vec<u32> {
    vocab.encode_text(&instr.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camel_case_pieces() {
        assert_eq!(
            pieces("getFunctionalInterfaceMethodSignature"),
            ["get", "functional", "interface", "method", "signature"]
        );
        assert_eq!(pieces("max_value = HTTPServer2"), ["max", "value", "=", "http", "server", "2"]);
        assert_eq!(pieces("if a <= b goto L1"), ["if", "a", "<=", "b", "goto", "l", "1"]);
    }

    #[test]
    fn abab_learns_single_merge() {
        let v = train_bpe(&["abab"], 5).unwrap();
        assert_eq!(v.merges(), &[("a".to_string(), "b".to_string())]);
        for t in ["a", "b", "ab", "<unk>", "<pad>"] {
            assert!(v.id(t).is_some(), "{t}");
        }
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn alphabet_sized_target_learns_nothing() {
        let v = train_bpe(&["abab cd"], 6).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        // (c,d) and (a,b) both occur twice; (a,b) is smaller.
        let v = train_bpe(&["cd cd ab ab"], 8).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "b".to_string()));
        assert_eq!(v.merges()[1], ("c".to_string(), "d".to_string()));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let v = train_bpe(&["ab cd"], 50).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn errors() {
        let empty: [&str; 0] = [];
        assert!(train_bpe(&empty, 10).is_err());
        assert!(train_bpe(&["abc"], 4).is_err());
    }

    #[test]
    fn single_char_atoms_and_unknowns() {
        let v = train_bpe(&["r = a + b", "r = a + b"], 9).unwrap();
        let ids = v.encode_text("r = a + b");
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["r", "=", "a", "+", "b"]);
        assert_eq!(v.encode_piece("xyz"), vec![UNK]);
    }

    #[test]
    fn serialization_round_trip() {
        let v = train_bpe(&["getValue setValue value = getValue"], 30).unwrap();
        let back = SubwordVocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(v.to_text().lines().next().unwrap().starts_with("0\t"));
    }
}
