//! Deterministic desk-scale corpora built from small method templates.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mir::{parse_program, write_corpus, CorpusError, CorpusRecord, Program};
use crate::numerics::stream_key;
use crate::{invalid, Result};

/// A method template: `$x` words are variables, `#k` words are small
/// constants, statements are separated by `;`.
#[derive(Clone, Copy, Debug)]
pub struct Template {
    pub name: &'static str,
    pub params: &'static [&'static str],
    pub body: &'static str,
    pub hoistable: bool,
}

pub const TEMPLATES: &[Template] = &[
    Template {
        name: "sumRange",
        params: &["$n"],
        body: "$s = 0; $i = 0; L1: if $i >= $n goto L2; $s = $s + $i; $i = $i + 1; goto L1; L2: return $s",
        hoistable: true,
    },
    Template {
        name: "maxTriple",
        params: &["$a", "$b", "$c"],
        body: "$m = $a; if $b <= $m goto L1; $m = $b; L1: if $c <= $m goto L2; $m = $c; L2: return $m",
        hoistable: false,
    },
    Template {
        name: "factorial",
        params: &["$n"],
        body: "$r = 1; L1: if $n <= 1 goto L2; $r = $r * $n; $n = $n - 1; goto L1; L2: return $r",
        hoistable: true,
    },
    Template {
        name: "gcdPair",
        params: &["$a", "$b"],
        body: "L1: if $b == 0 goto L2; $t = $a % $b; $a = $b; $b = $t; goto L1; L2: return $a",
        hoistable: true,
    },
    Template {
        name: "absDiff",
        params: &["$a", "$b"],
        body: "if $a < $b goto L1; $d = $a - $b; return $d; L1: $d = $b - $a; return $d",
        hoistable: false,
    },
    Template {
        name: "sumSquares",
        params: &["$n"],
        body: "$s = 0; $i = 1; L1: if $i > $n goto L2; $q = $i * $i; $s = $s + $q; $i = $i + 1; goto L1; L2: return $s",
        hoistable: true,
    },
    Template {
        name: "powerOf",
        params: &["$b", "$e"],
        body: "$r = 1; $k = 0; L1: if $k >= $e goto L2; $r = $r * $b; $k = $k + 1; goto L1; L2: return $r",
        hoistable: true,
    },
    Template {
        name: "maxPair",
        params: &["$a", "$b"],
        body: "if $a < $b goto L1; return $a; L1: return $b",
        hoistable: false,
    },
    Template {
        name: "minPair",
        params: &["$a", "$b"],
        body: "if $a > $b goto L1; return $a; L1: return $b",
        hoistable: false,
    },
    Template {
        name: "countDigits",
        params: &["$n"],
        body: "$c = 0; L1: if $n == 0 goto L2; $n = $n / 10; $c = $c + 1; goto L1; L2: return $c",
        hoistable: true,
    },
    Template {
        name: "fibNumber",
        params: &["$n"],
        body: "$x = 0; $y = 1; $i = 0; L1: if $i >= $n goto L2; $t = $x + $y; $x = $y; $y = $t; $i = $i + 1; goto L1; L2: return $x",
        hoistable: true,
    },
    Template {
        name: "clampValue",
        params: &["$v", "$lo", "$hi"],
        body: "if $v >= $lo goto L1; return $lo; L1: if $v <= $hi goto L2; return $hi; L2: return $v",
        hoistable: false,
    },
    Template {
        name: "isEven",
        params: &["$n"],
        body: "$r = $n % 2; if $r == 0 goto L1; return 0; L1: return 1",
        hoistable: false,
    },
    Template {
        name: "countDown",
        params: &["$n"],
        body: "$c = 0; L1: if $n <= 0 goto L2; $n = $n - #k; $c = $c + 1; goto L1; L2: return $c",
        hoistable: true,
    },
    Template {
        name: "averagePair",
        params: &["$a", "$b"],
        body: "$s = $a + $b; $m = $s / 2; return $m",
        hoistable: false,
    },
    Template {
        name: "signOf",
        params: &["$x"],
        body: "if $x < 0 goto L1; if $x == 0 goto L2; return 1; L1: $r = 0 - 1; return $r; L2: return 0",
        hoistable: false,
    },
    Template {
        name: "scaleOffset",
        params: &["$x", "$a", "$b"],
        body: "$y = $a * $x; $z = $y + $b; return $z",
        hoistable: false,
    },
    Template {
        name: "sumDigits",
        params: &["$n"],
        body: "$s = 0; L1: if $n == 0 goto L2; $d = $n % 10; $s = $s + $d; $n = $n / 10; goto L1; L2: return $s",
        hoistable: true,
    },
    Template {
        name: "sumDivisors",
        params: &["$n"],
        body: "$s = 0; $d = 1; L1: if $d > $n goto L3; $r = $n % $d; if $r != 0 goto L2; $s = $s + $d; L2: $d = $d + 1; goto L1; L3: return $s",
        hoistable: true,
    },
    Template {
        name: "isPrime",
        params: &["$n"],
        body: "if $n < 2 goto L2; $d = 2; L1: $q = $d * $d; if $q > $n goto L3; $r = $n % $d; if $r == 0 goto L2; $d = $d + 1; goto L1; L2: return 0; L3: return 1",
        hoistable: false,
    },
    Template {
        name: "polyEval",
        params: &["$x", "$a", "$b", "$c"],
        body: "$t = $x * $x; $u = $t * $a; $v = $x * $b; $w = $u + $v; $y = $w + $c; $z = $y * #k; $r = $z - $x; return $r",
        hoistable: false,
    },
    Template {
        name: "gridCount",
        params: &["$n", "$m"],
        body: "$s = 0; $i = 0; L1: if $i >= $n goto L4; $j = 0; L2: if $j >= $m goto L3; $s = $s + $i; $j = $j + 1; goto L2; L3: $i = $i + 1; goto L1; L4: return $s",
        hoistable: true,
    },
    Template {
        name: "collatzSteps",
        params: &["$n"],
        body: "$c = 0; L1: if $n <= 1 goto L4; $r = $n % 2; if $r == 0 goto L2; $t = $n * 3; $n = $t + 1; goto L3; L2: $n = $n / 2; L3: $c = $c + 1; goto L1; L4: return $c",
        hoistable: true,
    },
    Template {
        name: "medianThree",
        params: &["$a", "$b", "$c"],
        body: "if $a > $b goto L3; if $b > $c goto L1; return $b; L1: if $a > $c goto L2; return $c; L2: return $a; L3: if $a > $c goto L4; return $a; L4: if $b > $c goto L5; return $c; L5: return $b",
        hoistable: false,
    },
];

/// Templates of the solution-classification set, one class each.
pub const SOLUTION_CLASSES: [&str; 5] = ["sumRange", "maxTriple", "factorial", "gcdPair", "absDiff"];

/// Structurally distinct templates; no two control methods are near copies
/// of each other (as `maxPair` and `minPair` are).
pub const CONTROL_TEMPLATES: [&str; 10] = [
    "factorial",
    "maxTriple",
    "scaleOffset",
    "signOf",
    "sumDivisors",
    "isPrime",
    "polyEval",
    "gridCount",
    "collatzSteps",
    "medianThree",
];

const NAME_POOL: &[&str] = &[
    "x", "y", "z", "a", "b", "c", "n", "m", "k", "i", "j", "t", "u", "v", "w", "p", "q", "acc", "tmp", "val", "cnt",
    "total", "idx", "res", "lo", "hi", "cur", "num", "left", "right", "step", "prev", "next", "base", "out", "arg",
    "item", "limit", "part", "aux",
];

/// Identifier vocabularies of the token-probing classes.
pub const TOKEN_DOMAINS: [(&str, &[&str]); 4] = [
    ("finance", &["balance", "deposit", "rate", "interest", "loan", "payment", "credit", "fee", "amount", "budget"]),
    ("geometry", &["width", "height", "area", "radius", "angle", "length", "side", "volume", "perimeter", "depth"]),
    ("grading", &["score", "grade", "exam", "points", "rank", "student", "mark", "bonus", "quiz", "credits"]),
    ("stock", &["item", "price", "quantity", "order", "supply", "demand", "cost", "unit", "batch", "stock"]),
];

fn template(name: &str) -> &'static Template {
    TEMPLATES.iter().find(|t| t.name == name).expect("known template")
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Line {
    label: Option<String>,
    words: Vec<String>,
}

/// A method with placeholder variables, rendered under a name assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Skeleton {
    name: String,
    params: Vec<String>,
    lines: Vec<Line>,
    wrapper: bool,
    fresh: usize,
}

impl Skeleton {
    fn new(t: &Template, rng: &mut ChaCha8Rng) -> Skeleton {
        let lines = t
            .body
            .split(';')
            .map(|stmt| {
                let stmt = stmt.trim();
                let (label, rest) = match stmt.split_once(": ") {
                    Some((l, r)) => (Some(l.to_string()), r),
                    None => (None, stmt),
                };
                let words = rest
                    .split_whitespace()
                    .map(|w| if w.starts_with('#') { rng.random_range(1..=9).to_string() } else { w.to_string() })
                    .collect();
                Line { label, words }
            })
            .collect();
        Skeleton {
            name: t.name.to_string(),
            params: t.params.iter().map(|p| p.to_string()).collect(),
            lines,
            wrapper: false,
            fresh: 0,
        }
    }

    fn fresh(&mut self) -> String {
        self.fresh += 1;
        format!("$z{}", self.fresh)
    }

    /// Inserts `count` unused definitions from parameters at random points.
    fn add_noise(&mut self, count: usize, rng: &mut ChaCha8Rng) {
        for _ in 0..count {
            let dst = self.fresh();
            let src = self.params.choose(rng).expect("templates have parameters").clone();
            let words: Vec<String> = if rng.random_bool(0.5) {
                vec![dst, "=".into(), src]
            } else {
                let op = ["+", "*", "-"].choose(rng).unwrap();
                vec![dst, "=".into(), src, op.to_string(), rng.random_range(1..=9).to_string()]
            };
            let at = rng.random_range(0..self.lines.len());
            self.lines.insert(at, Line { label: None, words });
        }
    }

    fn placeholders(&self) -> Vec<String> {
        let mut seen = Vec::new();
        let words = self
            .params
            .iter()
            .chain(self.lines.iter().flat_map(|l| l.words.iter()));
        for w in words {
            if w.starts_with('$') && !seen.contains(w) {
                seen.push(w.clone());
            }
        }
        if self.wrapper {
            for i in 0..=self.params.len() {
                seen.push(format!("$w{i}"));
            }
        }
        seen
    }

    fn render(&self, names: &BTreeMap<String, String>) -> String {
        let sub = |w: &str| names.get(w).cloned().unwrap_or_else(|| w.to_string());
        let params: Vec<String> = self.params.iter().map(|p| sub(p)).collect();
        let mut out = format!("method {}({}) {{\n", self.name, params.join(", "));
        for l in &self.lines {
            let text: Vec<String> = l.words.iter().map(|w| sub(w)).collect();
            match &l.label {
                Some(label) => out.push_str(&format!("  {label}: {};\n", text.join(" "))),
                None => out.push_str(&format!("  {};\n", text.join(" "))),
            }
        }
        out.push_str("}\n");
        if self.wrapper {
            let args: Vec<String> = (0..self.params.len()).map(|i| sub(&format!("$w{}", i + 1))).collect();
            let r = sub("$w0");
            out.push_str(&format!(
                "\nmethod run({}) {{\n  {r} = call {}({});\n  return {r};\n}}\n",
                args.join(", "),
                self.name,
                args.join(", ")
            ));
        }
        out
    }

    /// Replaces one arithmetic statement with a temporary and a copy, and
    /// mirrors one comparison. Semantics are unchanged.
    fn refactor(&mut self, rng: &mut ChaCha8Rng) {
        let arith: Vec<usize> = (0..self.lines.len())
            .filter(|&i| {
                let w = &self.lines[i].words;
                w.len() == 5 && w[1] == "=" && ["+", "-", "*", "/", "%"].contains(&w[3].as_str())
            })
            .collect();
        let branches: Vec<usize> = (0..self.lines.len())
            .filter(|&i| self.lines[i].words.first().map(String::as_str) == Some("if"))
            .collect();
        if let Some(&i) = branches.choose(rng) {
            let w = &mut self.lines[i].words;
            let mirrored = match w[2].as_str() {
                "<" => ">",
                ">" => "<",
                "<=" => ">=",
                ">=" => "<=",
                other => other,
            }
            .to_string();
            w.swap(1, 3);
            w[2] = mirrored;
        }
        if let Some(&i) = arith.choose(rng) {
            let tmp = self.fresh();
            let dst = std::mem::replace(&mut self.lines[i].words[0], tmp.clone());
            self.lines.insert(
                i + 1,
                Line {
                    label: None,
                    words: vec![dst, "=".into(), tmp],
                },
            );
        }
    }

    /// Mirrors every comparison and swaps the operands of every commutative
    /// operation. Dependences are unchanged; only instruction text moves.
    fn rewrite(&mut self) {
        for line in &mut self.lines {
            let w = &mut line.words;
            if w.first().map(String::as_str) == Some("if") {
                let mirrored = match w[2].as_str() {
                    "<" => ">",
                    ">" => "<",
                    "<=" => ">=",
                    ">=" => "<=",
                    other => other,
                }
                .to_string();
                w.swap(1, 3);
                w[2] = mirrored;
            } else if w.len() == 5 && w[1] == "=" && ["+", "*"].contains(&w[3].as_str()) {
                w.swap(2, 4);
            }
        }
    }

    /// Moves the first loop-body statement above the loop header, keeping
    /// every instruction text and label.
    fn hoist(&mut self) -> bool {
        for h in 0..self.lines.len() {
            let Some(label) = self.lines[h].label.clone() else {
                continue;
            };
            let is_header = self.lines[h].words.first().map(String::as_str) == Some("if");
            let closes = self.lines[h + 1..]
                .iter()
                .any(|l| l.words == ["goto".to_string(), label.clone()]);
            let body = self.lines.get(h + 1);
            let movable = body.is_some_and(|b| b.label.is_none() && b.words.get(1).map(String::as_str) == Some("="));
            if is_header && closes && movable {
                let line = self.lines.remove(h + 1);
                self.lines.insert(h, line);
                return true;
            }
        }
        false
    }
}

fn assign_names(sk: &Skeleton, pool: &[&str], rng: &mut ChaCha8Rng) -> BTreeMap<String, String> {
    let holders = sk.placeholders();
    let mut names: Vec<&str> = pool.to_vec();
    names.shuffle(rng);
    let mut extra = 0;
    holders
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            let name = match names.get(i) {
                Some(n) => n.to_string(),
                None => {
                    extra += 1;
                    format!("v{extra}")
                }
            };
            (h, name)
        })
        .collect()
}

fn random_variant(t: &Template, rng: &mut ChaCha8Rng) -> Skeleton {
    let mut sk = Skeleton::new(t, rng);
    let noise = rng.random_range(0..=2);
    sk.add_noise(noise, rng);
    sk.wrapper = rng.random_bool(0.25);
    sk
}

fn record(id: String, code: String, label: Option<String>, group: Option<String>) -> CorpusRecord {
    CorpusRecord { id, code, label, group }
}

/// One clone family: the original, a consistently renamed copy, a refactored
/// copy and a program from a different template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CloneTriple {
    pub original: CorpusRecord,
    pub rename: CorpusRecord,
    pub refactor: CorpusRecord,
    pub unrelated: CorpusRecord,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeskCorpora {
    pub pretrain: Vec<CorpusRecord>,
    /// Five templates, 40 variants each; label is the template name.
    pub solution: Vec<CorpusRecord>,
    pub clone_triples: Vec<CloneTriple>,
    /// Ten methods from the ten control templates.
    pub clone_control: Vec<CorpusRecord>,
    /// Single-method programs; label is the method name.
    pub names: Vec<CorpusRecord>,
    /// Same templates, class-specific identifier vocabularies.
    pub token_probe: Vec<CorpusRecord>,
    /// Loop programs labeled `original` and their hoisted `mutant` copies.
    pub structure_probe: Vec<CorpusRecord>,
}

pub const PRETRAIN_SIZE: usize = 50;
pub const VARIANTS_PER_CLASS: usize = 40;
pub const CLONE_TRIPLES: usize = 30;
pub const NAME_VARIANTS: usize = 8;
pub const TOKEN_PROBE_PER_CLASS: usize = 30;
pub const STRUCTURE_PROBE_PAIRS: usize = 60;

pub fn generate_desk_corpora(seed: u64) -> DeskCorpora {
    let rng_for = |part: u64| ChaCha8Rng::seed_from_u64(stream_key(&[seed, 0x6465_736b, part]));

    let mut rng = rng_for(0);
    let pretrain = (0..PRETRAIN_SIZE)
        .map(|i| {
            let t = TEMPLATES.choose(&mut rng).unwrap();
            let mut sk = random_variant(t, &mut rng);
            if rng.random_bool(0.3) {
                sk.refactor(&mut rng);
            }
            let names = assign_names(&sk, NAME_POOL, &mut rng);
            record(format!("pre-{i:03}"), sk.render(&names), None, None)
        })
        .collect();

    let mut rng = rng_for(1);
    let mut solution = Vec::new();
    for class in SOLUTION_CLASSES {
        for v in 0..VARIANTS_PER_CLASS {
            let mut sk = random_variant(template(class), &mut rng);
            if rng.random_bool(0.5) {
                sk.refactor(&mut rng);
            }
            let names = assign_names(&sk, NAME_POOL, &mut rng);
            solution.push(record(format!("sol-{class}-{v:02}"), sk.render(&names), Some(class.to_string()), None));
        }
    }

    let mut rng = rng_for(2);
    let mut clone_triples = Vec::new();
    for i in 0..CLONE_TRIPLES {
        let t = &TEMPLATES[i % TEMPLATES.len()];
        let base = random_variant(t, &mut rng);
        let group = format!("clone-{i:02}");
        let names = assign_names(&base, NAME_POOL, &mut rng);
        let renamed = assign_names(&base, NAME_POOL, &mut rng);
        let mut refactored = base.clone();
        refactored.rewrite();
        let refactor_names = assign_names(&refactored, NAME_POOL, &mut rng);
        let other = loop {
            let o = TEMPLATES.choose(&mut rng).unwrap();
            if o.name != t.name {
                break o;
            }
        };
        let unrelated = random_variant(other, &mut rng);
        let unrelated_names = assign_names(&unrelated, NAME_POOL, &mut rng);
        let g = Some(group.clone());
        clone_triples.push(CloneTriple {
            original: record(format!("{group}-original"), base.render(&names), None, g.clone()),
            rename: record(format!("{group}-rename"), base.render(&renamed), None, g.clone()),
            refactor: record(format!("{group}-refactor"), refactored.render(&refactor_names), None, g),
            unrelated: record(
                format!("{group}-unrelated"),
                unrelated.render(&unrelated_names),
                None,
                Some(format!("{group}-u")),
            ),
        });
    }

    let mut rng = rng_for(3);
    let clone_control = CONTROL_TEMPLATES
        .iter()
        .map(|n| template(n))
        .enumerate()
        .map(|(i, t)| {
            let sk = Skeleton::new(t, &mut rng);
            let names = assign_names(&sk, NAME_POOL, &mut rng);
            record(format!("control-{i:02}"), sk.render(&names), None, Some(format!("control-{i:02}")))
        })
        .collect();

    let mut rng = rng_for(4);
    let mut names_set = Vec::new();
    for t in TEMPLATES {
        for v in 0..NAME_VARIANTS {
            let mut sk = Skeleton::new(t, &mut rng);
            let noise = rng.random_range(0..=2);
            sk.add_noise(noise, &mut rng);
            if rng.random_bool(0.5) {
                sk.refactor(&mut rng);
            }
            let names = assign_names(&sk, NAME_POOL, &mut rng);
            names_set.push(record(format!("name-{}-{v}", t.name), sk.render(&names), Some(t.name.to_string()), None));
        }
    }

    let mut rng = rng_for(5);
    let mut token_probe = Vec::new();
    for (domain, pool) in TOKEN_DOMAINS {
        for v in 0..TOKEN_PROBE_PER_CLASS {
            let t = TEMPLATES.choose(&mut rng).unwrap();
            let sk = random_variant(t, &mut rng);
            let names = assign_names(&sk, pool, &mut rng);
            token_probe.push(record(format!("tok-{domain}-{v:02}"), sk.render(&names), Some(domain.to_string()), None));
        }
    }

    let mut rng = rng_for(6);
    let hoistable: Vec<&Template> = TEMPLATES.iter().filter(|t| t.hoistable).collect();
    let mut structure_probe = Vec::new();
    for i in 0..STRUCTURE_PROBE_PAIRS {
        let t = hoistable[i % hoistable.len()];
        let mut sk = Skeleton::new(t, &mut rng);
        let noise = rng.random_range(0..=2);
        sk.add_noise(noise, &mut rng);
        let names = assign_names(&sk, NAME_POOL, &mut rng);
        let mut mutant = sk.clone();
        assert!(mutant.hoist(), "loop template `{}` has a hoistable statement", t.name);
        structure_probe.push(record(format!("struct-{i:02}-original"), sk.render(&names), Some("original".into()), None));
        structure_probe.push(record(format!("struct-{i:02}-mutant"), mutant.render(&names), Some("mutant".into()), None));
    }

    DeskCorpora {
        pretrain,
        solution,
        clone_triples,
        clone_control,
        names: names_set,
        token_probe,
        structure_probe,
    }
}

/// Sorted instruction texts of every method.
pub fn instruction_multiset(p: &Program) -> Vec<String> {
    let mut v: Vec<String> = p
        .methods
        .iter()
        .flat_map(|m| m.instructions.iter().map(|i| i.text.clone()))
        .collect();
    v.sort();
    v
}

impl DeskCorpora {
    pub fn clone_records(&self) -> Vec<CorpusRecord> {
        self.clone_triples
            .iter()
            .flat_map(|t| [t.original.clone(), t.rename.clone(), t.refactor.clone(), t.unrelated.clone()])
            .collect()
    }

    /// Checks generator invariants: every record parses, mutants keep their
    /// source's instruction multiset, the solution set is balanced.
    pub fn check(&self) -> Result<()> {
        let all = self
            .pretrain
            .iter()
            .chain(&self.solution)
            .chain(&self.clone_control)
            .chain(&self.names)
            .chain(&self.token_probe)
            .chain(&self.structure_probe)
            .cloned()
            .chain(self.clone_records());
        for r in all {
            parse_program(&r.code)?;
        }
        for pair in self.structure_probe.chunks(2) {
            let a = parse_program(&pair[0].code)?;
            let b = parse_program(&pair[1].code)?;
            if instruction_multiset(&a) != instruction_multiset(&b) {
                return invalid(format!("mutant `{}` changes the instruction multiset", pair[1].id));
            }
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.solution {
            *counts.entry(r.label.as_deref().unwrap_or("")).or_default() += 1;
        }
        if counts.len() != SOLUTION_CLASSES.len() || counts.values().any(|&c| c != VARIANTS_PER_CLASS) {
            return invalid(format!("solution set is unbalanced: {counts:?}"));
        }
        Ok(())
    }

    /// Writes one JSON-Lines file per corpus into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>, CorpusError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let files: [(&str, Vec<CorpusRecord>); 7] = [
            ("pretrain.jsonl", self.pretrain.clone()),
            ("solution.jsonl", self.solution.clone()),
            ("clones.jsonl", self.clone_records()),
            ("clone_control.jsonl", self.clone_control.clone()),
            ("names.jsonl", self.names.clone()),
            ("token_probe.jsonl", self.token_probe.clone()),
            ("structure_probe.jsonl", self.structure_probe.clone()),
        ];
        let mut written = Vec::new();
        for (name, records) in files {
            write_corpus(dir.join(name), &records)?;
            written.push(name.to_string());
        }
        Ok(written)
    }
}
