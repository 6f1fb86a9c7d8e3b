//! Deterministic English-like byte text for smoke runs when no corpus is at hand.
//!
//! Words are built from syllables, drawn from a Zipf law, and chained by a
//! sparse per-word successor table, so there is structure at the character,
//! word and sentence level. Articles come with section headings.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::numkernel::rng;

const ONSETS: [&str; 18] = [
    "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w", "st", "th", "pr",
];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ea", "ou"];
const CODAS: [&str; 8] = ["", "", "n", "r", "s", "t", "l", "nd"];
const FUNCTION_WORDS: [&str; 12] = [
    "the", "of", "and", "in", "to", "a", "was", "is", "for", "on", "with", "by",
];

struct Lexicon {
    words: Vec<String>,
    zipf: WeightedIndex<f64>,
    successors: Vec<Vec<usize>>,
}

impl Lexicon {
    fn build(r: &mut rng::Rng, size: usize) -> Lexicon {
        let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
        while words.len() < size {
            let syllables = r.gen_range(1..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(r).expect("nonempty"));
                w.push_str(VOWELS.choose(r).expect("nonempty"));
                w.push_str(CODAS.choose(r).expect("nonempty"));
            }
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let zipf = WeightedIndex::new((0..size).map(|k| 1.0 / (k as f64 + 2.0))).expect("weights");
        let successors = (0..size).map(|_| (0..6).map(|_| zipf.sample(r)).collect()).collect();
        Lexicon {
            words,
            zipf,
            successors,
        }
    }

    fn next(&self, r: &mut rng::Rng, prev: Option<usize>) -> usize {
        match prev {
            Some(p) if r.gen::<f64>() < 0.6 => *self.successors[p].choose(r).expect("nonempty"),
            _ => self.zipf.sample(r),
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn sentence(lex: &Lexicon, r: &mut rng::Rng, out: &mut String) {
    let len = r.gen_range(5..18);
    let mut prev = None;
    for i in 0..len {
        let k = lex.next(r, prev);
        prev = Some(k);
        let w = &lex.words[k];
        if i == 0 {
            out.push_str(&capitalize(w));
        } else {
            out.push(' ');
            if r.gen::<f64>() < 0.03 {
                out.push_str(&r.gen_range(1800..2020).to_string());
                continue;
            }
            out.push_str(w);
        }
        if i + 1 < len && r.gen::<f64>() < 0.07 {
            out.push(',');
        }
    }
    out.push_str(". ");
}

/// About `n_bytes` bytes of text; identical for identical `(n_bytes, seed)`.
pub fn synthetic_corpus(n_bytes: usize, seed: u64) -> Vec<u8> {
    let mut r = rng::named_stream(seed, "synthetic-corpus");
    let lex = Lexicon::build(&mut r, 600);
    let mut out = String::with_capacity(n_bytes + 512);
    while out.len() < n_bytes {
        let title = lex.words[lex.zipf.sample(&mut r)].clone();
        out.push_str(&format!(" = {} = \n\n", capitalize(&title)));
        for _ in 0..r.gen_range(2..6) {
            out.push(' ');
            for _ in 0..r.gen_range(2..7) {
                sentence(&lex, &mut r, &mut out);
            }
            out.push_str("\n\n");
        }
    }
    out.truncate(n_bytes);
    out.into_bytes()
}
