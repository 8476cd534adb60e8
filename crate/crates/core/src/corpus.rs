//! Viewing-log ingestion and start/end block extraction.
//!
//! Raw [`ViewEvent`]s are filtered to "watched" events (duration at or above a
//! threshold), grouped per user into time-ordered [`WatchedHistory`]s, and
//! each eligible history yields a [`BlockPair`]: the first `n` and last `n`
//! views after registration-day views and a warm-up prefix are removed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One playback record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEvent {
    pub user_id: String,
    pub content_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub start_time: i64,
    pub watch_seconds: f64,
}

impl ViewEvent {
    /// UTC calendar day the view started on.
    pub fn day(&self) -> NaiveDate {
        utc_day(self.start_time)
    }
}

pub(crate) fn utc_day(epoch_seconds: i64) -> NaiveDate {
    DateTime::<Utc>::from_timestamp(epoch_seconds, 0)
        .map(|t| t.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub registration_date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl InputFormat {
    /// Picks a format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => InputFormat::Jsonl,
            _ => InputFormat::Csv,
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "ndjson" => Ok(InputFormat::Jsonl),
            other => Err(Error::InvalidParameter(format!("unknown input format `{other}`"))),
        }
    }
}

/// A row that could not be turned into a [`ViewEvent`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

/// Parsed events plus every row that failed validation.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub events: Vec<ViewEvent>,
    pub malformed: Vec<MalformedRow>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// How `start_time` values are encoded. Decided once per file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeEncoding {
    Epoch,
    Iso,
}

fn detect_encoding(raw: &str) -> TimeEncoding {
    let raw = raw.trim();
    let digits = raw.strip_prefix('-').unwrap_or(raw);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        TimeEncoding::Epoch
    } else {
        TimeEncoding::Iso
    }
}

fn parse_time(raw: &str, encoding: TimeEncoding) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    match encoding {
        TimeEncoding::Epoch => raw
            .parse::<i64>()
            .map_err(|_| format!("start_time `{raw}` is not integer epoch seconds like the rest of the file")),
        TimeEncoding::Iso => {
            if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
                return Ok(t.timestamp());
            }
            for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
                if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
                    return Ok(t.and_utc().timestamp());
                }
            }
            Err(format!("start_time `{raw}` is not ISO-8601 like the rest of the file"))
        }
    }
}

fn validate_fields(
    user_id: &str,
    content_id: &str,
    watch_seconds: &str,
) -> std::result::Result<f64, String> {
    if user_id.trim().is_empty() {
        return Err("empty user_id".into());
    }
    if content_id.trim().is_empty() {
        return Err("empty content_id".into());
    }
    let secs: f64 = watch_seconds
        .trim()
        .parse()
        .map_err(|_| format!("watch_seconds `{watch_seconds}` is not a number"))?;
    if !secs.is_finite() || secs < 0.0 {
        return Err(format!("watch_seconds `{watch_seconds}` must be a non-negative number"));
    }
    Ok(secs)
}

const EVENT_FIELDS: [&str; 4] = ["user_id", "content_id", "start_time", "watch_seconds"];

/// Reads an events file. With `strict`, any malformed row is an error naming
/// the first offending line; otherwise malformed rows are collected in
/// [`EventLog::malformed`].
pub fn load_events(path: &Path, format: InputFormat, strict: bool) -> Result<EventLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_events(BufReader::new(file), format, strict, path)
}

/// Like [`load_events`] but over any reader; `label` names the source in errors.
pub fn read_events<R: Read>(
    reader: R,
    format: InputFormat,
    strict: bool,
    label: &Path,
) -> Result<EventLog> {
    let log = match format {
        InputFormat::Csv => read_events_csv(reader, label)?,
        InputFormat::Jsonl => read_events_jsonl(reader, label)?,
    };
    if let Some(first) = log.malformed.first() {
        if strict {
            return Err(Error::parse(
                label,
                first.line,
                format!("{} ({} malformed row(s) in total)", first.reason, log.malformed.len()),
            ));
        }
        log::warn!(
            "{}: skipped {} malformed row(s); first at line {}: {}",
            label.display(),
            log.malformed.len(),
            first.line,
            first.reason
        );
    }
    Ok(log)
}

fn header_indices<const N: usize>(
    headers: &csv::StringRecord,
    wanted: [&str; N],
    label: &Path,
) -> Result<[usize; N]> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(wanted) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(label, 1, format!("missing column `{name}`")))?;
    }
    Ok(out)
}

fn read_events_csv<R: Read>(reader: R, label: &Path) -> Result<EventLog> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(label, 1, e.to_string()))?
        .clone();
    let [iu, ic, it, iw] = header_indices(&headers, EVENT_FIELDS, label)?;

    let mut log = EventLog::default();
    let mut encoding = None;
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                log.malformed.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let time_raw = field(it);
        let enc = *encoding.get_or_insert_with(|| detect_encoding(time_raw));
        let parsed = validate_fields(field(iu), field(ic), field(iw))
            .and_then(|secs| parse_time(time_raw, enc).map(|t| (t, secs)));
        match parsed {
            Ok((start_time, watch_seconds)) => log.events.push(ViewEvent {
                user_id: field(iu).trim().to_string(),
                content_id: field(ic).trim().to_string(),
                start_time,
                watch_seconds,
            }),
            Err(reason) => log.malformed.push(MalformedRow { line, reason }),
        }
    }
    Ok(log)
}

fn json_text(value: Option<&serde_json::Value>) -> String {
    match value {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => String::new(),
    }
}

fn read_events_jsonl<R: Read>(reader: R, label: &Path) -> Result<EventLog> {
    let mut log = EventLog::default();
    let mut encoding = None;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(label, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(&line) {
            Ok(o) => o,
            Err(e) => {
                log.malformed.push(MalformedRow {
                    line: line_no,
                    reason: format!("not a JSON object: {e}"),
                });
                continue;
            }
        };
        let user = json_text(obj.get("user_id"));
        let content = json_text(obj.get("content_id"));
        let time_raw = json_text(obj.get("start_time"));
        let secs_raw = json_text(obj.get("watch_seconds"));
        let enc = *encoding.get_or_insert_with(|| detect_encoding(&time_raw));
        let parsed = validate_fields(&user, &content, &secs_raw)
            .and_then(|secs| parse_time(&time_raw, enc).map(|t| (t, secs)));
        match parsed {
            Ok((start_time, watch_seconds)) => log.events.push(ViewEvent {
                user_id: user.trim().to_string(),
                content_id: content.trim().to_string(),
                start_time,
                watch_seconds,
            }),
            Err(reason) => log.malformed.push(MalformedRow {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(log)
}

/// Reads user profiles (`user_id,registration_date`) keyed by user id.
pub fn load_profiles(path: &Path, format: InputFormat) -> Result<BTreeMap<String, UserProfile>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, String, String)> = Vec::new();
    match format {
        InputFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(BufReader::new(file));
            let headers = rdr
                .headers()
                .map_err(|e| Error::parse(path, 1, e.to_string()))?
                .clone();
            let [iu, id] = header_indices(&headers, ["user_id", "registration_date"], path)?;
            for record in rdr.records() {
                let record = record.map_err(|e| {
                    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                    Error::parse(path, line, e.to_string())
                })?;
                let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
                rows.push((
                    line,
                    record.get(iu).unwrap_or("").trim().to_string(),
                    record.get(id).unwrap_or("").trim().to_string(),
                ));
            }
        }
        InputFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
                rows.push((
                    idx + 1,
                    json_text(obj.get("user_id")),
                    json_text(obj.get("registration_date")),
                ));
            }
        }
    }

    let mut profiles = BTreeMap::new();
    for (line, user_id, date) in rows {
        if user_id.is_empty() {
            return Err(Error::parse(path, line, "empty user_id"));
        }
        let registration_date = NaiveDate::parse_from_str(&date, "%Y-%m-%d")
            .map_err(|_| Error::parse(path, line, format!("registration_date `{date}` is not YYYY-MM-DD")))?;
        let profile = UserProfile {
            user_id: user_id.clone(),
            registration_date,
        };
        if profiles.insert(user_id.clone(), profile).is_some() {
            return Err(Error::parse(path, line, format!("duplicate profile for `{user_id}`")));
        }
    }
    Ok(profiles)
}

/// A user's watched events in canonical order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WatchedHistory {
    pub user_id: String,
    pub events: Vec<ViewEvent>,
}

impl WatchedHistory {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Distinct UTC calendar days with at least one watched view.
    pub fn active_days(&self) -> BTreeSet<NaiveDate> {
        self.events.iter().map(ViewEvent::day).collect()
    }

    pub fn distinct_contents(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.content_id.as_str()).collect()
    }
}

fn canonical_order(a: &ViewEvent, b: &ViewEvent) -> std::cmp::Ordering {
    a.start_time
        .cmp(&b.start_time)
        .then_with(|| a.content_id.cmp(&b.content_id))
}

/// Groups events by user, keeping those watched for at least
/// `min_watch_seconds`. Every user present in `events` gets an entry, possibly
/// empty. Events are ordered by start time, ties by content id.
pub fn derive_watched(
    events: &[ViewEvent],
    min_watch_seconds: f64,
) -> Result<BTreeMap<String, WatchedHistory>> {
    if !(min_watch_seconds > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "min_watch_seconds must be > 0, got {min_watch_seconds}"
        )));
    }
    let mut out: BTreeMap<String, WatchedHistory> = BTreeMap::new();
    for ev in events {
        let entry = out.entry(ev.user_id.clone()).or_insert_with(|| WatchedHistory {
            user_id: ev.user_id.clone(),
            events: Vec::new(),
        });
        if ev.watch_seconds >= min_watch_seconds {
            entry.events.push(ev.clone());
        }
    }
    for history in out.values_mut() {
        history.events.sort_by(canonical_order);
    }
    Ok(out)
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateWindow {
    pub fn contains(&self, day: NaiveDate) -> bool {
        self.from <= day && day <= self.to
    }
}

/// Activity requirements a user must meet to be analysed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityCriteria {
    /// Required number of distinct active days. Zero disables the check.
    pub min_active_days: u32,
    /// When set, a user needs strictly more than `min_active_days` days.
    pub strictly_more: bool,
    /// The user must have a watched view inside this window.
    pub active_in: Option<DateWindow>,
}

impl Default for EligibilityCriteria {
    fn default() -> Self {
        EligibilityCriteria {
            min_active_days: 0,
            strictly_more: true,
            active_in: None,
        }
    }
}

impl EligibilityCriteria {
    pub fn accepts(&self, history: &WatchedHistory) -> bool {
        if self.min_active_days > 0 {
            let days = history.active_days().len();
            let needed = self.min_active_days as usize;
            let ok = if self.strictly_more { days > needed } else { days >= needed };
            if !ok {
                return false;
            }
        }
        if let Some(window) = &self.active_in {
            if !history.events.iter().any(|e| window.contains(e.day())) {
                return false;
            }
        }
        true
    }
}

pub fn filter_eligible(
    histories: &BTreeMap<String, WatchedHistory>,
    criteria: &EligibilityCriteria,
) -> BTreeMap<String, WatchedHistory> {
    histories
        .iter()
        .filter(|(_, h)| criteria.accepts(h))
        .map(|(k, h)| (k.clone(), h.clone()))
        .collect()
}

/// A user's start and end blocks. Positions index into the user's
/// [`WatchedHistory::events`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPair {
    pub user_id: String,
    pub start_block: Vec<String>,
    pub end_block: Vec<String>,
    pub start_positions: Vec<usize>,
    pub end_positions: Vec<usize>,
}

impl BlockPair {
    /// History position of the first end-block view.
    pub fn end_boundary(&self) -> usize {
        self.end_positions.first().copied().unwrap_or(0)
    }

    pub fn block(&self, which: Block) -> &[String] {
        match which {
            Block::Start => &self.start_block,
            Block::End => &self.end_block,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Start,
    End,
}

impl Block {
    pub fn as_str(self) -> &'static str {
        match self {
            Block::Start => "start",
            Block::End => "end",
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(Block::Start),
            "end" => Ok(Block::End),
            other => Err(Error::Invalid(format!("unknown block `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockOutcome {
    Pair(BlockPair),
    /// Too few eligible views for two disjoint blocks.
    Excluded { user_id: String, eligible_len: usize },
}

/// Extracts start/end blocks from one history.
///
/// Views on the registration day are dropped first, then the next
/// `warmup_skip` views. The remaining sequence must hold at least `2n` views
/// so the blocks do not overlap.
pub fn extract_blocks(
    history: &WatchedHistory,
    profile: Option<&UserProfile>,
    n: usize,
    warmup_skip: usize,
) -> Result<BlockOutcome> {
    if n == 0 {
        return Err(Error::InvalidParameter("block size n must be >= 1".into()));
    }
    let registration = profile.map(|p| p.registration_date);
    let eligible: Vec<usize> = history
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| Some(e.day()) != registration)
        .map(|(i, _)| i)
        .skip(warmup_skip)
        .collect();

    if eligible.len() < 2 * n {
        return Ok(BlockOutcome::Excluded {
            user_id: history.user_id.clone(),
            eligible_len: eligible.len(),
        });
    }
    let start_positions = eligible[..n].to_vec();
    let end_positions = eligible[eligible.len() - n..].to_vec();
    let contents = |positions: &[usize]| -> Vec<String> {
        positions
            .iter()
            .map(|&i| history.events[i].content_id.clone())
            .collect()
    };
    Ok(BlockOutcome::Pair(BlockPair {
        user_id: history.user_id.clone(),
        start_block: contents(&start_positions),
        end_block: contents(&end_positions),
        start_positions,
        end_positions,
    }))
}

/// Blocks for a whole population, sorted by user id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockSet {
    pub pairs: Vec<BlockPair>,
    pub excluded: Vec<(String, usize)>,
}

/// Runs [`extract_blocks`] for every history. Users without a profile keep
/// all their views (no registration-day removal).
pub fn extract_all_blocks(
    histories: &BTreeMap<String, WatchedHistory>,
    profiles: &BTreeMap<String, UserProfile>,
    n: usize,
    warmup_skip: usize,
) -> Result<BlockSet> {
    let list: Vec<&WatchedHistory> = histories.values().collect();
    let outcomes = list
        .par_iter()
        .map(|h| extract_blocks(h, profiles.get(&h.user_id), n, warmup_skip))
        .collect::<Result<Vec<_>>>()?;
    let mut set = BlockSet::default();
    for outcome in outcomes {
        match outcome {
            BlockOutcome::Pair(p) => set.pairs.push(p),
            BlockOutcome::Excluded {
                user_id,
                eligible_len,
            } => set.excluded.push((user_id, eligible_len)),
        }
    }
    Ok(set)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::parse(path, line, e.to_string())
    }
}

/// Writes `user_id,block,position,content_id`; `position` is the view's index
/// in the user's watched history.
pub fn write_blocks(path: &Path, pairs: &[BlockPair]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["user_id", "block", "position", "content_id"])
        .map_err(&err)?;
    for pair in pairs {
        for (block, positions, contents) in [
            (Block::Start, &pair.start_positions, &pair.start_block),
            (Block::End, &pair.end_positions, &pair.end_block),
        ] {
            for (pos, content) in positions.iter().zip(contents) {
                w.write_record([
                    pair.user_id.as_str(),
                    block.as_str(),
                    &pos.to_string(),
                    content.as_str(),
                ])
                .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct BlockRow {
    user_id: String,
    block: String,
    position: usize,
    content_id: String,
}

pub fn read_blocks(path: &Path) -> Result<Vec<BlockPair>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut by_user: BTreeMap<String, BlockPair> = BTreeMap::new();
    for (idx, row) in rdr.deserialize::<BlockRow>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let block: Block = row
            .block
            .parse()
            .map_err(|e: Error| Error::parse(path, idx + 2, e.to_string()))?;
        let pair = by_user.entry(row.user_id.clone()).or_insert_with(|| BlockPair {
            user_id: row.user_id.clone(),
            start_block: Vec::new(),
            end_block: Vec::new(),
            start_positions: Vec::new(),
            end_positions: Vec::new(),
        });
        match block {
            Block::Start => {
                pair.start_block.push(row.content_id);
                pair.start_positions.push(row.position);
            }
            Block::End => {
                pair.end_block.push(row.content_id);
                pair.end_positions.push(row.position);
            }
        }
    }
    for pair in by_user.values() {
        if pair.start_block.len() != pair.end_block.len() || pair.start_block.is_empty() {
            return Err(Error::parse(
                path,
                0,
                format!("user `{}` has unequal or empty blocks", pair.user_id),
            ));
        }
    }
    Ok(by_user.into_values().collect())
}

/// Writes histories as `user_id,position,content_id,start_time,watch_seconds`,
/// users in id order.
pub fn write_histories(path: &Path, histories: &BTreeMap<String, WatchedHistory>) -> Result<()> {
    let mut w = create(path)?;
    write_histories_to(&mut w, histories).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_histories_to<W: Write>(
    out: &mut W,
    histories: &BTreeMap<String, WatchedHistory>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "position", "content_id", "start_time", "watch_seconds"])?;
    for h in histories.values() {
        for (i, e) in h.events.iter().enumerate() {
            w.write_record([
                h.user_id.as_str(),
                &i.to_string(),
                e.content_id.as_str(),
                &e.start_time.to_string(),
                &crate::fmt_float(e.watch_seconds),
            ])?;
        }
    }
    w.flush()
}

#[derive(Debug, Deserialize)]
struct HistoryRow {
    user_id: String,
    position: usize,
    content_id: String,
    start_time: i64,
    watch_seconds: f64,
}

pub fn read_histories(path: &Path) -> Result<BTreeMap<String, WatchedHistory>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out: BTreeMap<String, WatchedHistory> = BTreeMap::new();
    for (idx, row) in rdr.deserialize::<HistoryRow>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let h = out.entry(row.user_id.clone()).or_insert_with(|| WatchedHistory {
            user_id: row.user_id.clone(),
            events: Vec::new(),
        });
        if row.position != h.events.len() {
            return Err(Error::parse(
                path,
                idx + 2,
                format!("position {} out of sequence for `{}`", row.position, row.user_id),
            ));
        }
        h.events.push(ViewEvent {
            user_id: row.user_id,
            content_id: row.content_id,
            start_time: row.start_time,
            watch_seconds: row.watch_seconds,
        });
    }
    Ok(out)
}

/// Writes events in the ingest CSV schema with epoch-second timestamps.
pub fn write_events(path: &Path, events: &[ViewEvent]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(EVENT_FIELDS).map_err(&err)?;
    for e in events {
        w.write_record([
            e.user_id.as_str(),
            e.content_id.as_str(),
            &e.start_time.to_string(),
            &crate::fmt_float(e.watch_seconds),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_profiles(path: &Path, profiles: &BTreeMap<String, UserProfile>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["user_id", "registration_date"]).map_err(&err)?;
    for p in profiles.values() {
        w.write_record([p.user_id.as_str(), &p.registration_date.format("%Y-%m-%d").to_string()])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
