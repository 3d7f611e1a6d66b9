//! Tweet corpus to (term × location × time) count tensor.
//!
//! A tweet contributes when its raw text matches a query keyword, a
//! gazetteer place resolves from its profile location (or, failing that,
//! from its text), and its timestamp falls on the time axis. Each retained
//! token then increments its (term, location, bin) cell.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::SparseTensor3;

/// Query keywords used to collect the Covid-19 corpus.
pub const DEFAULT_KEYWORDS: [&str; 8] = [
    "coronavirus",
    "covid19",
    "covid-19",
    "covid_19",
    "coronovirusoutbreak",
    "covid2019",
    "covid",
    "coronaoutbreak",
];

/// Built-in English stopwords, used when no stopword file is given.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can",
    "could", "did", "do", "does", "doing", "don", "down", "during", "each", "few", "for", "from",
    "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only",
    "or", "other", "our", "ours", "ourselves", "out", "over", "own", "rt", "same", "she", "should",
    "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Lowercases, drops URLs and @mentions, strips `#` from hashtags and
/// splits the rest into alphabetic runs. Runs shorter than two characters
/// and stopwords are dropped; order and duplicates are kept.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        if is_url(word) || word.starts_with('@') {
            continue;
        }
        let lower = word.to_lowercase();
        for run in lower.split(|c: char| !c.is_alphabetic()) {
            if run.chars().count() >= 2 && !stopwords.contains(run) {
                tokens.push(run.to_string());
            }
        }
    }
    tokens
}

/// True iff the lowercased raw text contains a keyword delimited on both
/// sides by a non-alphanumeric character or the text boundary. Matching is
/// on raw text so hyphen and underscore variants survive.
pub fn matches_keywords(raw: &str, keywords: &[String]) -> bool {
    let text = raw.to_lowercase();
    keywords.iter().filter(|k| !k.is_empty()).any(|kw| {
        text.match_indices(kw.as_str()).any(|(start, m)| {
            let before = text[..start].chars().next_back();
            let after = text[start + m.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        })
    })
}

/// NFKC, lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize_place(name: &str) -> String {
    let folded: String = name
        .nfkc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub canonical: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Deserialize)]
struct GazetteerRow {
    name: String,
    canonical_id: String,
    lat: f64,
    lon: f64,
}

/// Place-name lookup table: normalized alias → canonical place.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    places: Vec<Place>,
    by_canonical: HashMap<String, usize>,
    by_name: HashMap<String, usize>,
    max_words: usize,
}

impl Gazetteer {
    /// Adds an alias. The first row seen for a canonical id fixes its coordinates.
    pub fn insert(&mut self, name: &str, canonical: &str, lat: f64, lon: f64) -> Result<()> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Value(format!("{canonical}: coordinates ({lat}, {lon}) out of range")));
        }
        let key = normalize_place(name);
        if key.is_empty() {
            return Err(Error::Value(format!("gazetteer name {name:?} is empty after normalization")));
        }
        let idx = match self.by_canonical.get(canonical) {
            Some(&i) => i,
            None => {
                self.places.push(Place {
                    canonical: canonical.to_string(),
                    lat,
                    lon,
                });
                self.by_canonical.insert(canonical.to_string(), self.places.len() - 1);
                self.places.len() - 1
            }
        };
        self.max_words = self.max_words.max(key.split(' ').count());
        self.by_name.entry(key).or_insert(idx);
        Ok(())
    }

    /// Reads a CSV with header `name,canonical_id,lat,lon`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut gaz = Gazetteer::default();
        for row in reader.deserialize() {
            let row: GazetteerRow = row?;
            gaz.insert(&row.name, &row.canonical_id, row.lat, row.lon)?;
        }
        if gaz.is_empty() {
            return Err(Error::Input(format!("gazetteer {} has no rows", path.display())));
        }
        Ok(gaz)
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }

    pub fn place(&self, idx: usize) -> &Place {
        &self.places[idx]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.by_name.get(&normalize_place(name)).copied()
    }

    /// Longest word n-gram of `text` that names a place; leftmost on ties.
    pub fn longest_match(&self, text: &str) -> Option<usize> {
        let norm = normalize_place(text);
        let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
        for len in (1..=self.max_words.min(words.len())).rev() {
            for window in words.windows(len) {
                if let Some(&idx) = self.by_name.get(&window.join(" ")) {
                    return Some(idx);
                }
            }
        }
        None
    }

    /// First place named by a two-word or one-word window of `text`,
    /// scanning left to right and preferring the longer window.
    pub fn first_mention(&self, text: &str) -> Option<usize> {
        let words: Vec<String> = text
            .split_whitespace()
            .filter(|w| !is_url(w) && !w.starts_with('@'))
            .map(normalize_place)
            .filter(|w| !w.is_empty())
            .collect();
        for i in 0..words.len() {
            if i + 1 < words.len() {
                if let Some(&idx) = self.by_name.get(&format!("{} {}", words[i], words[i + 1])) {
                    return Some(idx);
                }
            }
            if let Some(&idx) = self.by_name.get(&words[i]) {
                return Some(idx);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub user_location: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TweetRecord {
    id: String,
    text: String,
    created_at: String,
    #[serde(default)]
    user_location: Option<String>,
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Some(ts.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .map(|naive| naive.and_utc())
}

impl Tweet {
    /// Parses one JSON-lines record; unknown fields are ignored.
    pub fn parse_line(line: &str) -> std::result::Result<Tweet, String> {
        let rec: TweetRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let created_at =
            parse_timestamp(&rec.created_at).ok_or_else(|| format!("bad created_at {:?}", rec.created_at))?;
        if rec.text.trim().is_empty() {
            return Err("empty text".into());
        }
        Ok(Tweet {
            id: rec.id,
            text: rec.text,
            created_at,
            user_location: rec.user_location.filter(|s| !s.trim().is_empty()),
        })
    }

    pub fn to_json_line(&self) -> String {
        let rec = TweetRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            created_at: self.created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            user_location: self.user_location.clone(),
        };
        serde_json::to_string(&rec).expect("tweet serializes")
    }
}

/// Gazetteer place for a tweet: longest match in the profile location,
/// else the first place mentioned in the text.
pub fn resolve_location(tweet: &Tweet, gazetteer: &Gazetteer) -> Option<usize> {
    tweet
        .user_location
        .as_deref()
        .and_then(|loc| gazetteer.longest_match(loc))
        .or_else(|| gazetteer.first_mention(&tweet.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinWidth {
    Day,
    Week,
}

impl BinWidth {
    pub fn seconds(self) -> i64 {
        match self {
            BinWidth::Day => 86_400,
            BinWidth::Week => 7 * 86_400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub origin: NaiveDate,
    pub bin_width_seconds: i64,
    pub bin_count: usize,
}

impl TimeAxis {
    pub fn new(origin: NaiveDate, bin_width_seconds: i64, bin_count: usize) -> Result<Self> {
        if bin_width_seconds <= 0 || bin_count == 0 {
            return Err(Error::Input(format!(
                "time axis needs positive width and count, got {bin_width_seconds}s × {bin_count}"
            )));
        }
        Ok(Self {
            origin,
            bin_width_seconds,
            bin_count,
        })
    }

    fn origin_time(&self) -> DateTime<Utc> {
        self.origin.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
    }

    /// Raw bin offset from the origin, possibly negative or past the end.
    fn offset(&self, ts: DateTime<Utc>) -> i64 {
        (ts - self.origin_time()).num_seconds().div_euclid(self.bin_width_seconds)
    }

    /// `floor((ts − origin) / width)` when it lies in `[0, bin_count)`.
    pub fn bin(&self, ts: DateTime<Utc>) -> Option<usize> {
        let k = self.offset(ts);
        (k >= 0 && (k as usize) < self.bin_count).then_some(k as usize)
    }

    /// ISO-8601 start of bin `k`: a date for whole-day widths, else a timestamp.
    pub fn bin_start(&self, k: usize) -> String {
        let start = self.origin_time() + TimeDelta::seconds(self.bin_width_seconds * k as i64);
        if self.bin_width_seconds % 86_400 == 0 {
            start.format("%Y-%m-%d").to_string()
        } else {
            start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Every token occurrence counts.
    Occurrence,
    /// A term counts at most once per tweet.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub stopwords: Vec<String>,
    pub keywords: Vec<String>,
    pub bin: BinWidth,
    pub count_mode: CountMode,
    /// Fixed axis origin; derived from the earliest kept tweet when absent.
    pub origin: Option<NaiveDate>,
    /// Fixed bin count; derived from the latest kept tweet when absent.
    pub bin_count: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            bin: BinWidth::Day,
            count_mode: CountMode::Occurrence,
            origin: None,
            bin_count: None,
        }
    }
}

/// Dense term index in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for t in terms {
            if vocab.index.contains_key(&t) {
                return Err(Error::Input(format!("duplicate term {t:?}")));
            }
            vocab.intern(&t);
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, term: &str) -> usize {
        if let Some(&i) = self.index.get(term) {
            return i;
        }
        self.terms.push(term.to_string());
        self.index.insert(term.to_string(), self.terms.len() - 1);
        self.terms.len() - 1
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Dense location index over canonical places, first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocationIndex {
    places: Vec<Place>,
    index: HashMap<String, usize>,
}

impl LocationIndex {
    pub fn intern(&mut self, place: &Place) -> usize {
        if let Some(&i) = self.index.get(&place.canonical) {
            return i;
        }
        self.places.push(place.clone());
        self.index.insert(place.canonical.clone(), self.places.len() - 1);
        self.places.len() - 1
    }

    pub fn get(&self, canonical: &str) -> Option<usize> {
        self.index.get(canonical).copied()
    }

    pub fn place(&self, i: usize) -> &Place {
        &self.places[i]
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn len(&self) -> usize {
        self.places.len()
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records_read: usize,
    pub dropped_unreadable: usize,
    pub dropped_no_keyword: usize,
    pub dropped_no_location: usize,
    pub dropped_out_of_range: usize,
    pub dropped_no_terms: usize,
    pub kept: usize,
    /// Sum of all increments made to the tensor.
    pub retained_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub tensor: SparseTensor3,
    pub vocab: Vocabulary,
    pub locations: LocationIndex,
    pub time_axis: TimeAxis,
    pub stats: CorpusStats,
}

/// Builds the count tensor from a JSON-lines tweet stream.
pub fn build_corpus<R: BufRead>(input: R, gazetteer: &Gazetteer, config: &IngestConfig) -> Result<Corpus> {
    let mut stats = CorpusStats::default();
    let mut tweets = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::Input(format!("reading tweets: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.records_read += 1;
        match Tweet::parse_line(&line) {
            Ok(t) => tweets.push(t),
            Err(detail) => {
                log::debug!("skipping record {}: {detail}", stats.records_read);
                stats.dropped_unreadable += 1;
            }
        }
    }
    build_corpus_from_tweets(&tweets, gazetteer, config, stats)
}

/// Builds the count tensor from parsed tweets, continuing `stats`.
pub fn build_corpus_from_tweets(
    tweets: &[Tweet],
    gazetteer: &Gazetteer,
    config: &IngestConfig,
    mut stats: CorpusStats,
) -> Result<Corpus> {
    if gazetteer.is_empty() {
        return Err(Error::Input("gazetteer is empty".into()));
    }
    let stopwords: HashSet<String> = config.stopwords.iter().map(|s| s.to_lowercase()).collect();
    let keywords: Vec<String> = config.keywords.iter().map(|s| s.to_lowercase()).collect();

    let mut candidates = Vec::new();
    for tweet in tweets {
        if !matches_keywords(&tweet.text, &keywords) {
            stats.dropped_no_keyword += 1;
            continue;
        }
        match resolve_location(tweet, gazetteer) {
            Some(place) => candidates.push((tweet, place)),
            None => stats.dropped_no_location += 1,
        }
    }

    let width = config.bin.seconds();
    let origin = match config.origin {
        Some(o) => o,
        None => match candidates.iter().map(|(t, _)| t.created_at).min() {
            Some(ts) => ts.date_naive(),
            None => return Err(empty_corpus(&stats)),
        },
    };
    let bin_count = match config.bin_count {
        Some(n) => n,
        None => {
            let probe = TimeAxis::new(origin, width, 1)?;
            let last = candidates
                .iter()
                .map(|(t, _)| probe.offset(t.created_at))
                .max()
                .unwrap_or(0);
            (last.max(0) as usize) + 1
        }
    };
    let time_axis = TimeAxis::new(origin, width, bin_count)?;

    let mut vocab = Vocabulary::default();
    let mut locations = LocationIndex::default();
    let mut counts: Vec<([usize; 3], f64)> = Vec::new();
    for (tweet, place) in candidates {
        let Some(bin) = time_axis.bin(tweet.created_at) else {
            stats.dropped_out_of_range += 1;
            continue;
        };
        let mut tokens = tokenize(&tweet.text, &stopwords);
        if config.count_mode == CountMode::Binary {
            let mut seen = HashSet::new();
            tokens.retain(|t| seen.insert(t.clone()));
        }
        if tokens.is_empty() {
            stats.dropped_no_terms += 1;
            continue;
        }
        let loc = locations.intern(gazetteer.place(place));
        for token in &tokens {
            counts.push(([vocab.intern(token), loc, bin], 1.0));
        }
        stats.kept += 1;
        stats.retained_tokens += tokens.len() as u64;
    }

    if stats.kept == 0 {
        return Err(empty_corpus(&stats));
    }
    let tensor = SparseTensor3::build([vocab.len(), locations.len(), bin_count], counts)?;
    Ok(Corpus {
        tensor,
        vocab,
        locations,
        time_axis,
        stats,
    })
}

fn empty_corpus(stats: &CorpusStats) -> Error {
    Error::EmptyCorpus(format!(
        "{} read, {} unreadable, {} without keyword, {} without location, {} out of range, {} without terms",
        stats.records_read,
        stats.dropped_unreadable,
        stats.dropped_no_keyword,
        stats.dropped_no_location,
        stats.dropped_out_of_range,
        stats.dropped_no_terms
    ))
}

pub const TENSOR_FILE: &str = "tensor.coo";
pub const TERMS_FILE: &str = "terms.txt";
pub const LOCATIONS_FILE: &str = "locations.csv";
pub const TIME_AXIS_FILE: &str = "timeaxis.json";
pub const STATS_FILE: &str = "stats.json";

/// The index maps that give tensor coordinates their meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMaps {
    pub vocab: Vocabulary,
    pub locations: LocationIndex,
    pub time_axis: TimeAxis,
}

impl IndexMaps {
    pub fn dims(&self) -> [usize; 3] {
        [self.vocab.len(), self.locations.len(), self.time_axis.bin_count]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_lines(&dir.join(TERMS_FILE), self.vocab.terms())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "canonical", "lat", "lon"])?;
        for (i, p) in self.locations.places().iter().enumerate() {
            w.write_record([i.to_string(), p.canonical.clone(), io::fmt_f64(p.lat), io::fmt_f64(p.lon)])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        io::write_atomic(&dir.join(LOCATIONS_FILE), &bytes)?;
        io::write_json(&dir.join(TIME_AXIS_FILE), &self.time_axis)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::from_terms(io::read_lines(&dir.join(TERMS_FILE))?)?;
        let path = dir.join(LOCATIONS_FILE);
        let mut reader = csv::Reader::from_path(&path)?;
        let mut locations = LocationIndex::default();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::parse(&path, row + 2, "missing column"));
            let index: usize = field(0)?
                .parse()
                .map_err(|_| Error::parse(&path, row + 2, "bad index"))?;
            let lat: f64 = field(2)?.parse().map_err(|_| Error::parse(&path, row + 2, "bad lat"))?;
            let lon: f64 = field(3)?.parse().map_err(|_| Error::parse(&path, row + 2, "bad lon"))?;
            let place = Place {
                canonical: field(1)?.to_string(),
                lat,
                lon,
            };
            if locations.intern(&place) != index {
                return Err(Error::parse(&path, row + 2, "location indices must be dense and ordered"));
            }
        }
        let time_axis: TimeAxis = io::read_json(&dir.join(TIME_AXIS_FILE))?;
        TimeAxis::new(time_axis.origin, time_axis.bin_width_seconds, time_axis.bin_count)?;
        Ok(Self {
            vocab,
            locations,
            time_axis,
        })
    }
}

impl Corpus {
    pub fn index_maps(&self) -> IndexMaps {
        IndexMaps {
            vocab: self.vocab.clone(),
            locations: self.locations.clone(),
            time_axis: self.time_axis.clone(),
        }
    }

    /// Writes the tensor, index maps and stats into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_tensor(&dir.join(TENSOR_FILE), &self.tensor)?;
        self.index_maps().write(dir)?;
        io::write_json(&dir.join(STATS_FILE), &self.stats)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let tensor = io::read_tensor(&dir.join(TENSOR_FILE))?;
        let maps = IndexMaps::read(dir)?;
        if maps.dims() != tensor.dims() {
            return Err(Error::Shape(format!(
                "index maps cover {:?}, tensor is {:?}",
                maps.dims(),
                tensor.dims()
            )));
        }
        Ok(Corpus {
            tensor,
            vocab: maps.vocab,
            locations: maps.locations,
            time_axis: maps.time_axis,
            stats: io::read_json(&dir.join(STATS_FILE))?,
        })
    }
}
