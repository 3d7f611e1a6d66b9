use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveTime};

use super::{plant_model, write_truth, Planted, PlantedSpec};
use crate::error::Result;
use crate::ingest::{
    IndexMaps, LocationIndex, Place, TimeAxis, Tweet, Vocabulary, BinWidth, DEFAULT_STOPWORDS,
};
use crate::io;
use crate::tensor::{CpModel, FactorMatrix, SparseTensor3};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const KEYWORD: &str = "covid";
const TOKENS_PER_TWEET: usize = 20;
/// Every this-many-th tweet names its place in the text instead of the profile.
const MENTION_EVERY: usize = 4;

pub const TWEETS_FILE: &str = "tweets.jsonl";
pub const GAZETTEER_FILE: &str = "gazetteer.csv";
pub const STOPWORDS_FILE: &str = "stopwords.txt";
pub const KEYWORDS_FILE: &str = "keywords.txt";
pub const EXPECTED_DIR: &str = "expected";

fn syllables(mut k: usize, count: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::with_capacity(2 * count);
    for _ in 0..count {
        let s = k % base;
        k /= base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}

/// `count` distinct alphabetic words that are not built-in stopwords.
fn term_names(count: usize) -> Vec<String> {
    let syl = if count <= 70 * 70 { 3 } else { 4 };
    (0..)
        .map(|k| syllables(k, syl))
        .filter(|w| !DEFAULT_STOPWORDS.contains(&w.as_str()))
        .take(count)
        .collect()
}

fn place_names(count: usize) -> Vec<String> {
    let syl = if count <= 70 * 70 { 2 } else { 3 };
    (0..count).map(|k| format!("{}ton", syllables(k, syl))).collect()
}

fn coordinates(n: usize) -> (f64, f64) {
    let lat = -60.0 + ((n * 37) % 120) as f64 + 0.5;
    let lon = -170.0 + ((n * 71) % 340) as f64 + 0.25;
    (lat, lon)
}

/// What ingest must produce from the generated files.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCorpus {
    pub tensor: SparseTensor3,
    pub maps: IndexMaps,
    /// Ground truth restricted and reordered to the ingest indices.
    pub truth: CpModel,
    pub retained_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerRow {
    pub name: String,
    pub canonical: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub planted: Planted,
    pub tweets: Vec<Tweet>,
    pub gazetteer: Vec<GazetteerRow>,
    pub stopwords: Vec<String>,
    pub keywords: Vec<String>,
    /// `None` when every count rounds to zero and no tweet is emitted.
    pub expected: Option<ExpectedCorpus>,
}

/// Day 0 of every synthetic corpus.
pub fn synthetic_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

/// Turns `round(count_scale · observation)` into tweets: each count becomes
/// that many occurrences of the term in tweets at that place and day, and
/// every tweet carries the query keyword.
pub fn plant_corpus(spec: &PlantedSpec) -> Result<PlantedCorpus> {
    let planted = plant_model(spec)?;
    let [m_len, n_len, _] = spec.dims;
    let terms = term_names(m_len);
    let places = place_names(n_len);

    // (o, n) -> [(m, count)] in ascending m.
    let mut cells: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for e in planted.observation.entries() {
        let count = (spec.count_scale * e.value).round();
        if count >= 1.0 {
            let [m, n, o] = e.coord;
            cells.entry((o, n)).or_default().push((m, count as usize));
        }
    }
    for tokens in cells.values_mut() {
        tokens.sort_unstable();
    }

    let origin = synthetic_origin();
    let noon = NaiveTime::from_hms_opt(12, 0, 0).expect("valid time");
    let mut tweets = Vec::new();
    let mut vocab = Vocabulary::default();
    let mut locations = LocationIndex::default();
    let mut term_rows = Vec::new();
    let mut place_rows = Vec::new();
    let mut counts: Vec<([usize; 3], f64)> = Vec::new();
    let mut retained_tokens = 0u64;
    let first_day = cells.keys().next().map(|&(o, _)| o);
    let last_day = cells.keys().next_back().map(|&(o, _)| o);
    let mut day_seq = (usize::MAX, 0usize);

    for (&(o, n), entries) in &cells {
        let stream: Vec<usize> = entries.iter().flat_map(|&(m, c)| std::iter::repeat_n(m, c)).collect();
        for chunk in stream.chunks(TOKENS_PER_TWEET) {
            if day_seq.0 != o {
                day_seq = (o, 0);
            }
            let seq = day_seq.1;
            day_seq.1 += 1;
            let k = tweets.len();
            let words: Vec<&str> = chunk.iter().map(|&m| terms[m].as_str()).collect();
            let mut text = format!("{KEYWORD} {}", words.join(" "));
            let user_location = if k % MENTION_EVERY == MENTION_EVERY - 1 {
                text.push_str(&format!(" in {}", places[n]));
                None
            } else {
                Some(format!("{}, Synthland", places[n].to_uppercase()))
            };
            let day = origin + Duration::days(o as i64);
            let created_at = day.and_time(noon).and_utc() + Duration::seconds((seq % 43_200) as i64);
            tweets.push(Tweet {
                id: format!("synth-{k}"),
                text,
                created_at,
                user_location,
            });

            let before = locations.len();
            let (lat, lon) = coordinates(n);
            let loc = locations.intern(&Place {
                canonical: places[n].clone(),
                lat,
                lon,
            });
            if locations.len() > before {
                place_rows.push(n);
            }
            for &m in chunk {
                let before = vocab.len();
                let idx = vocab.intern(&terms[m]);
                if vocab.len() > before {
                    term_rows.push(m);
                }
                counts.push(([idx, loc, o - first_day.unwrap_or(0)], 1.0));
            }
            retained_tokens += chunk.len() as u64;
        }
    }

    let gazetteer = places
        .iter()
        .enumerate()
        .map(|(n, name)| {
            let (lat, lon) = coordinates(n);
            GazetteerRow {
                name: name.clone(),
                canonical: name.clone(),
                lat,
                lon,
            }
        })
        .collect();
    let mut stopwords = vec![KEYWORD.to_string(), "in".to_string()];
    stopwords.extend(places.iter().cloned());

    let expected = match (first_day, last_day) {
        (Some(first), Some(last)) => {
            let bins = last - first + 1;
            let time_axis = TimeAxis::new(origin + Duration::days(first as i64), BinWidth::Day.seconds(), bins)?;
            let tensor = SparseTensor3::build([vocab.len(), locations.len(), bins], counts)?;
            let truth = restrict(&planted.truth, &term_rows, &place_rows, first..last + 1)?;
            Some(ExpectedCorpus {
                tensor,
                maps: IndexMaps {
                    vocab,
                    locations,
                    time_axis,
                },
                truth,
                retained_tokens,
            })
        }
        _ => None,
    };

    Ok(PlantedCorpus {
        planted,
        tweets,
        gazetteer,
        stopwords,
        keywords: vec![KEYWORD.to_string()],
        expected,
    })
}

fn take_rows(f: &FactorMatrix, rows: impl Iterator<Item = usize>) -> Result<FactorMatrix> {
    let mut values = Vec::new();
    let mut count = 0;
    for i in rows {
        values.extend_from_slice(f.row(i));
        count += 1;
    }
    FactorMatrix::new(count, f.rank(), values)
}

fn restrict(truth: &CpModel, terms: &[usize], places: &[usize], days: std::ops::Range<usize>) -> Result<CpModel> {
    CpModel::new(
        truth.weights().to_vec(),
        take_rows(truth.u(), terms.iter().copied())?,
        take_rows(truth.l(), places.iter().copied())?,
        take_rows(truth.t(), days)?,
    )
}

impl PlantedCorpus {
    /// Writes the generator inputs for ingest next to the planted model and,
    /// under `expected/`, the tensor and index maps ingest should reproduce.
    pub fn write(&self, dir: &Path, spec: &PlantedSpec) -> Result<()> {
        self.planted.write(dir, spec)?;
        let lines: Vec<String> = self.tweets.iter().map(Tweet::to_json_line).collect();
        io::write_lines(&dir.join(TWEETS_FILE), &lines)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "canonical_id", "lat", "lon"])?;
        for row in &self.gazetteer {
            w.write_record([row.name.clone(), row.canonical.clone(), io::fmt_f64(row.lat), io::fmt_f64(row.lon)])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Input(e.to_string()))?;
        io::write_atomic(&dir.join(GAZETTEER_FILE), &bytes)?;
        io::write_lines(&dir.join(STOPWORDS_FILE), &self.stopwords)?;
        io::write_lines(&dir.join(KEYWORDS_FILE), &self.keywords)?;
        if let Some(expected) = &self.expected {
            let out = dir.join(EXPECTED_DIR);
            io::ensure_dir(&out)?;
            io::write_tensor(&out.join(crate::ingest::TENSOR_FILE), &expected.tensor)?;
            expected.maps.write(&out)?;
            write_truth(&out.join(super::TRUTH_DIR), &expected.truth, spec.seed)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_corpus_from_tweets, CorpusStats, Gazetteer, IngestConfig};
    use crate::synth::{Overlaps, SupportSizes, Supports};
    use crate::Error;

    fn ingest(pc: &PlantedCorpus) -> Result<crate::ingest::Corpus> {
        let mut gaz = Gazetteer::default();
        for row in &pc.gazetteer {
            gaz.insert(&row.name, &row.canonical, row.lat, row.lon)?;
        }
        let config = IngestConfig {
            stopwords: pc.stopwords.clone(),
            keywords: pc.keywords.clone(),
            ..IngestConfig::default()
        };
        build_corpus_from_tweets(&pc.tweets, &gaz, &config, CorpusStats::default())
    }

    fn tiny() -> PlantedSpec {
        PlantedSpec {
            dims: [3, 1, 1],
            rank: 1,
            supports: Supports {
                term: SupportSizes::Uniform(3),
                location: SupportSizes::Uniform(1),
                time: SupportSizes::Uniform(1),
            },
            overlap: Overlaps::default(),
            noise: 0.0,
            density: 1.0,
            seed: 3,
            count_scale: 2.0,
            value_range: [1.0, 1.0],
        }
    }

    #[test]
    fn three_nonzeros_round_trip() {
        let pc = plant_corpus(&tiny()).unwrap();
        let expected = pc.expected.as_ref().unwrap();
        assert_eq!(expected.tensor.nnz(), 3);
        let corpus = ingest(&pc).unwrap();
        assert_eq!(corpus.tensor, expected.tensor);
        assert_eq!(corpus.index_maps(), expected.maps);
        assert_eq!(corpus.stats.retained_tokens, expected.retained_tokens);
    }

    #[test]
    fn acceptance_spec_round_trips() {
        let pc = plant_corpus(&PlantedSpec::default_acceptance()).unwrap();
        let expected = pc.expected.as_ref().unwrap();
        let corpus = ingest(&pc).unwrap();
        assert_eq!(corpus.tensor, expected.tensor);
        assert_eq!(corpus.index_maps(), expected.maps);
        assert_eq!(corpus.tensor.total_mass(), corpus.stats.retained_tokens as f64);
        assert!(pc.tweets.iter().any(|t| t.user_location.is_none()));
    }

    #[test]
    fn all_zero_counts_give_an_empty_corpus() {
        let mut spec = tiny();
        spec.count_scale = 0.0;
        let pc = plant_corpus(&spec).unwrap();
        assert!(pc.tweets.is_empty() && pc.expected.is_none());
        assert!(matches!(ingest(&pc), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn names_are_distinct_words() {
        let terms = term_names(6000);
        let mut sorted = terms.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 6000);
        assert!(terms.iter().all(|t| t.chars().all(|c| c.is_ascii_lowercase())));
    }
}
