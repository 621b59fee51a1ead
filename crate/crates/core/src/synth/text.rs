use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Historical,
    Scientific,
    Geographic,
    Mathematical,
}

const DOMAINS: [Domain; 4] =
    [Domain::Historical, Domain::Scientific, Domain::Geographic, Domain::Mathematical];

/// A factual statement and its hallucinated twin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPairTemplate {
    pub domain: Domain,
    #[serde(rename = "factual")]
    pub factual_text: String,
    #[serde(rename = "hallucinated")]
    pub hallucinated_text: String,
}

/// A sentence with one `{}` slot, its true filler, and wrong fillers to pick from.
struct Slot {
    sentence: &'static str,
    truth: &'static str,
    wrong: &'static [&'static str],
}

const EXEMPLARS: [(Domain, &str, &str); 4] = [
    (Domain::Historical, "The French Revolution began in 1789", "The French Revolution began in 1812"),
    (Domain::Scientific, "Water boils at 100°C at sea level", "Water boils at 150°C at sea level"),
    (
        Domain::Geographic,
        "Mount Everest is the tallest mountain",
        "Mount Kilimanjaro is the tallest mountain",
    ),
    (Domain::Mathematical, "A triangle has three sides", "A triangle has four sides"),
];

const HISTORICAL: &[(&str, i32)] = &[
    ("The French Revolution began in {}", 1789),
    ("The First World War began in {}", 1914),
    ("The Berlin Wall fell in {}", 1989),
    ("Columbus first reached the Americas in {}", 1492),
    ("The Magna Carta was sealed in {}", 1215),
    ("The first Moon landing took place in {}", 1969),
    ("The Second World War ended in {}", 1945),
    ("The American Declaration of Independence was signed in {}", 1776),
];

const YEAR_SHIFTS: [i32; 8] = [-50, -23, -11, -3, 4, 17, 23, 41];

const SCIENTIFIC: &[Slot] = &[
    Slot { sentence: "Water boils at {}°C at sea level", truth: "100", wrong: &["150", "80", "120", "90"] },
    Slot { sentence: "Water freezes at {}°C at sea level", truth: "0", wrong: &["10", "-15", "4", "32"] },
    Slot {
        sentence: "An adult human skeleton has {} bones",
        truth: "206",
        wrong: &["180", "250", "312", "196"],
    },
    Slot {
        sentence: "Light travels about {} kilometres per second in a vacuum",
        truth: "300,000",
        wrong: &["30,000", "3,000", "150,000", "1,000,000"],
    },
    Slot {
        sentence: "A water molecule contains {} hydrogen atoms",
        truth: "two",
        wrong: &["three", "one", "four"],
    },
    Slot {
        sentence: "Normal human body temperature is about {}°C",
        truth: "37",
        wrong: &["40", "33", "42", "35"],
    },
];

const GEOGRAPHIC: &[Slot] = &[
    Slot {
        sentence: "{} is the tallest mountain",
        truth: "Mount Everest",
        wrong: &["Mount Kilimanjaro", "Mont Blanc", "Mount Fuji", "K2"],
    },
    Slot {
        sentence: "{} is the capital of France",
        truth: "Paris",
        wrong: &["Lyon", "Marseille", "Brussels"],
    },
    Slot {
        sentence: "{} is the capital of Australia",
        truth: "Canberra",
        wrong: &["Sydney", "Melbourne", "Perth"],
    },
    Slot {
        sentence: "The {} is the largest ocean",
        truth: "Pacific",
        wrong: &["Atlantic", "Indian", "Arctic"],
    },
    Slot {
        sentence: "{} is the largest country by area",
        truth: "Russia",
        wrong: &["Canada", "China", "Brazil"],
    },
    Slot {
        sentence: "The Sahara Desert is in {}",
        truth: "Africa",
        wrong: &["Asia", "South America", "Australia"],
    },
];

const MATHEMATICAL: &[Slot] = &[
    Slot { sentence: "A triangle has {} sides", truth: "three", wrong: &["four", "five", "two"] },
    Slot { sentence: "A square has {} corners", truth: "four", wrong: &["three", "five", "six"] },
    Slot { sentence: "A hexagon has {} sides", truth: "six", wrong: &["five", "seven", "eight"] },
    Slot { sentence: "A week has {} days", truth: "seven", wrong: &["six", "eight", "five"] },
    Slot { sentence: "A cube has {} faces", truth: "six", wrong: &["four", "eight", "twelve"] },
    Slot { sentence: "An octagon has {} sides", truth: "eight", wrong: &["six", "seven", "ten"] },
];

fn fill(sentence: &str, value: &str) -> String {
    sentence.replacen("{}", value, 1)
}

fn from_slot(domain: Domain, slots: &[Slot], k: usize, rng: &mut Rng) -> TextPairTemplate {
    let slot = &slots[k % slots.len()];
    let wrong = slot.wrong[rng.below(slot.wrong.len())];
    TextPairTemplate {
        domain,
        factual_text: fill(slot.sentence, slot.truth),
        hallucinated_text: fill(slot.sentence, wrong),
    }
}

fn templated(domain: Domain, k: usize, rng: &mut Rng) -> TextPairTemplate {
    match domain {
        Domain::Historical => {
            let (sentence, year) = HISTORICAL[k % HISTORICAL.len()];
            let shifted = year + YEAR_SHIFTS[rng.below(YEAR_SHIFTS.len())];
            TextPairTemplate {
                domain,
                factual_text: fill(sentence, &year.to_string()),
                hallucinated_text: fill(sentence, &shifted.to_string()),
            }
        }
        Domain::Scientific => from_slot(domain, SCIENTIFIC, k, rng),
        Domain::Geographic => from_slot(domain, GEOGRAPHIC, k, rng),
        Domain::Mathematical => from_slot(domain, MATHEMATICAL, k, rng),
    }
}

/// `n` pairs, round-robin over the four domains. The first four are the
/// canonical exemplars; later ones fill templates with a perturbed slot.
pub fn gen_text_pairs(n: usize, seed: u64) -> Vec<TextPairTemplate> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let domain = DOMAINS[i % 4];
            if i < EXEMPLARS.len() {
                let (d, f, h) = EXEMPLARS[i];
                TextPairTemplate { domain: d, factual_text: f.to_owned(), hallucinated_text: h.to_owned() }
            } else {
                // Offset by one so the exemplar sentence is not the first repeat.
                templated(domain, i / 4 + 1, &mut rng)
            }
        })
        .collect()
}

fn write_lines<T: Serialize>(items: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// JSON lines of `{"domain", "factual", "hallucinated"}`.
pub fn write_text_pairs(pairs: &[TextPairTemplate], path: impl AsRef<Path>) -> Result<()> {
    write_lines(pairs, path.as_ref())
}

#[derive(Serialize)]
struct ExtractorLine<'a> {
    id: String,
    text: &'a str,
    label: Label,
}

/// Extractor input: two `{"id", "text", "label"}` lines per pair, ids `pair-NNNNN-f` / `-h`.
pub fn write_extractor_input(pairs: &[TextPairTemplate], path: impl AsRef<Path>) -> Result<()> {
    let lines = pairs.iter().enumerate().flat_map(|(i, p)| {
        [
            ExtractorLine { id: format!("pair-{i:05}-f"), text: &p.factual_text, label: Label::Factual },
            ExtractorLine {
                id: format!("pair-{i:05}-h"),
                text: &p.hallucinated_text,
                label: Label::Hallucinated,
            },
        ]
    });
    write_lines(lines, path.as_ref())
}
