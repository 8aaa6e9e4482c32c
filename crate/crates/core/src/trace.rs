//! Contact traces: proximity-log parsing, synthetic generation, and the
//! canonical link-event stream consumed by the simulation engine.
//!
//! Raw Bluetooth discovery logs record *sightings* (one device seeing
//! another at an instant). Sightings of a pair separated by at most a
//! configurable gap threshold are coalesced into one contact interval that
//! ends one threshold after the last sighting. The canonical form is a
//! time-sorted stream of `LinkUp`/`LinkDown` events, rebased so the first
//! event happens at t = 0.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Node identifier. Scenarios number nodes densely from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Link transition kind. `Down` sorts before `Up` at equal timestamps so
/// that back-to-back contacts of one pair keep alternating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkKind {
    Down,
    Up,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkKind::Up => write!(f, "UP"),
            LinkKind::Down => write!(f, "DOWN"),
        }
    }
}

/// A link-up or link-down between two nodes. Pairs are unordered and
/// stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub time: f64,
    pub kind: LinkKind,
    pub a: NodeId,
    pub b: NodeId,
}

impl ContactEvent {
    pub fn up(time: f64, x: NodeId, y: NodeId) -> Self {
        Self::new(time, LinkKind::Up, x, y)
    }

    pub fn down(time: f64, x: NodeId, y: NodeId) -> Self {
        Self::new(time, LinkKind::Down, x, y)
    }

    fn new(time: f64, kind: LinkKind, x: NodeId, y: NodeId) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        ContactEvent { time, kind, a, b }
    }

    pub fn pair(&self) -> (NodeId, NodeId) {
        (self.a, self.b)
    }

    /// Canonical stream order: time, then kind (down before up), then pair.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

/// A closed contact interval `[start, end)` between two nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactInterval {
    pub a: NodeId,
    pub b: NodeId,
    pub start: f64,
    pub end: f64,
}

/// Sorted, link-balanced event stream with the node universe it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTrace {
    pub events: Vec<ContactEvent>,
    pub node_count: usize,
    pub duration: f64,
}

impl CanonicalTrace {
    pub fn empty() -> Self {
        CanonicalTrace {
            events: Vec::new(),
            node_count: 0,
            duration: 0.0,
        }
    }

    /// Checks every stream invariant: pair normalization, sort order,
    /// strict up/down alternation per pair, balance, and time bounds.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut open: BTreeMap<(NodeId, NodeId), bool> = BTreeMap::new();
        let mut prev: Option<&ContactEvent> = None;
        for ev in &self.events {
            if ev.a == ev.b {
                return Err(TraceError::Invalid(format!(
                    "self-contact on node {} at t={}",
                    ev.a, ev.time
                )));
            }
            if ev.a > ev.b {
                return Err(TraceError::Invalid(format!(
                    "pair ({}, {}) not stored with a < b",
                    ev.a, ev.b
                )));
            }
            if ev.b.0 as usize >= self.node_count {
                return Err(TraceError::Invalid(format!(
                    "node {} outside node count {}",
                    ev.b, self.node_count
                )));
            }
            if !(0.0..=self.duration).contains(&ev.time) {
                return Err(TraceError::Invalid(format!(
                    "event at t={} outside [0, {}]",
                    ev.time, self.duration
                )));
            }
            if let Some(p) = prev {
                if p.canonical_cmp(ev) == std::cmp::Ordering::Greater {
                    return Err(TraceError::Invalid(format!(
                        "events out of order at t={}",
                        ev.time
                    )));
                }
            }
            let state = open.entry(ev.pair()).or_insert(false);
            match ev.kind {
                LinkKind::Up if !*state => *state = true,
                LinkKind::Down if *state => *state = false,
                _ => {
                    return Err(TraceError::Invalid(format!(
                        "pair ({}, {}) does not alternate at t={}",
                        ev.a, ev.b, ev.time
                    )))
                }
            }
            prev = Some(ev);
        }
        if let Some((pair, _)) = open.iter().find(|(_, up)| **up) {
            return Err(TraceError::Invalid(format!(
                "pair ({}, {}) left open at end of trace",
                pair.0, pair.1
            )));
        }
        Ok(())
    }

    /// Pairs up/down events into intervals. Assumes a valid stream.
    pub fn contacts(&self) -> Vec<ContactInterval> {
        let mut open: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
        let mut out = Vec::new();
        for ev in &self.events {
            match ev.kind {
                LinkKind::Up => {
                    open.insert(ev.pair(), ev.time);
                }
                LinkKind::Down => {
                    if let Some(start) = open.remove(&ev.pair()) {
                        out.push(ContactInterval {
                            a: ev.a,
                            b: ev.b,
                            start,
                            end: ev.time,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time,kind,a,b")?;
        for ev in &self.events {
            writeln!(w, "{},{},{},{}", ev.time, ev.kind, ev.a, ev.b)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// One interest with the nodes that declared it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterestMembership {
    pub interest_id: u32,
    pub members: BTreeSet<NodeId>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("node id {node} out of declared range 0..{limit}")]
    NodeOutOfRange { node: u32, limit: usize },
    #[error("trace invariant violated: {0}")]
    Invalid(String),
    #[error("synthetic trace needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("contact rate for pair ({0}, {1}) must be positive")]
    NonPositiveRate(u32, u32),
    #[error("sighting gap threshold must be positive")]
    NonPositiveThreshold,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Declared layout of a proximity log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceFormat {
    /// Discovery sightings (`timestamp;observer;observed`), coalesced into
    /// contacts with the given gap threshold in seconds.
    Sightings { gap_threshold: f64 },
    /// Already-canonical events (`time,kind,a,b` with kind UP or DOWN).
    Canonical,
}

/// Parse result plus non-fatal normalization warnings.
#[derive(Debug)]
pub struct ParsedTrace {
    pub trace: CanonicalTrace,
    pub warnings: Vec<String>,
}

/// Reads a proximity log in the declared format and returns the canonical
/// event stream. Lines starting with `#` and blank lines are skipped;
/// `;` and `,` delimiters are both accepted.
pub fn parse_proximity_log(
    reader: impl BufRead,
    format: &TraceFormat,
) -> Result<ParsedTrace, TraceError> {
    match format {
        TraceFormat::Sightings { gap_threshold } => parse_sightings(reader, *gap_threshold),
        TraceFormat::Canonical => parse_canonical(reader),
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    let delim = if line.contains(';') { ';' } else { ',' };
    line.split(delim).map(str::trim).collect()
}

fn data_lines(
    reader: impl BufRead,
) -> impl Iterator<Item = Result<(usize, String), TraceError>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let lineno = idx + 1;
        match line {
            Err(e) => Some(Err(TraceError::Io(e))),
            Ok(l) => {
                let t = l.trim().to_string();
                if t.is_empty() || t.starts_with('#') {
                    None
                } else {
                    Some(Ok((lineno, t)))
                }
            }
        }
    })
}

fn malformed(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn parse_sightings(reader: impl BufRead, gap_threshold: f64) -> Result<ParsedTrace, TraceError> {
    if !(gap_threshold > 0.0) {
        return Err(TraceError::NonPositiveThreshold);
    }
    let mut sightings: BTreeMap<(NodeId, NodeId), Vec<f64>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    let mut unsorted = false;
    let mut max_node = None::<u32>;
    for item in data_lines(reader) {
        let (lineno, line) = item?;
        let fields = split_fields(&line);
        if fields.len() != 3 {
            return Err(malformed(lineno, "expected timestamp, observer, observed"));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad timestamp `{}`", fields[0])))?;
        let obs: u32 = fields[1]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad observer id `{}`", fields[1])))?;
        let seen: u32 = fields[2]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad observed id `{}`", fields[2])))?;
        if obs == seen {
            return Err(malformed(lineno, format!("node {obs} sighted itself")));
        }
        if !time.is_finite() || time < 0.0 {
            return Err(malformed(lineno, format!("non-finite or negative time {time}")));
        }
        if time < last_time {
            unsorted = true;
        }
        last_time = time;
        max_node = Some(max_node.map_or(obs.max(seen), |m| m.max(obs).max(seen)));
        let ev = ContactEvent::up(time, NodeId(obs), NodeId(seen));
        sightings.entry(ev.pair()).or_default().push(time);
    }
    if unsorted {
        warnings.push("input sightings were not time-sorted; events re-sorted".to_string());
    }

    let mut events = Vec::new();
    for ((a, b), mut times) in sightings {
        times.sort_by(f64::total_cmp);
        for (start, end) in coalesce_sightings(&times, gap_threshold) {
            events.push(ContactEvent::up(start, a, b));
            events.push(ContactEvent::down(end, a, b));
        }
    }
    Ok(ParsedTrace {
        trace: finish_stream(events, max_node),
        warnings,
    })
}

/// Coalesces a sorted sighting list into contact intervals: sightings at
/// most `gap` apart share a contact, and each contact extends one `gap`
/// past its last sighting.
fn coalesce_sightings(times: &[f64], gap: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut iter = times.iter().copied();
    let Some(first) = iter.next() else {
        return out;
    };
    let (mut start, mut last) = (first, first);
    for t in iter {
        if t - last <= gap {
            last = t;
        } else {
            out.push((start, last + gap));
            start = t;
            last = t;
        }
    }
    out.push((start, last + gap));
    out
}

fn parse_canonical(reader: impl BufRead) -> Result<ParsedTrace, TraceError> {
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut max_node = None::<u32>;
    for item in data_lines(reader) {
        let (lineno, line) = item?;
        if line.starts_with("time") {
            continue; // header
        }
        let fields = split_fields(&line);
        if fields.len() != 4 {
            return Err(malformed(lineno, "expected time, kind, a, b"));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad time `{}`", fields[0])))?;
        let kind = match fields[1] {
            "UP" | "up" => LinkKind::Up,
            "DOWN" | "down" => LinkKind::Down,
            other => return Err(malformed(lineno, format!("bad kind `{other}`"))),
        };
        let a: u32 = fields[2]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad node id `{}`", fields[2])))?;
        let b: u32 = fields[3]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad node id `{}`", fields[3])))?;
        if a == b {
            return Err(malformed(lineno, format!("self-contact on node {a}")));
        }
        if !time.is_finite() {
            return Err(malformed(lineno, "non-finite time"));
        }
        max_node = Some(max_node.map_or(a.max(b), |m| m.max(a).max(b)));
        events.push(ContactEvent::new(time, kind, NodeId(a), NodeId(b)));
    }

    events.sort_by(ContactEvent::canonical_cmp);
    // Close any link the log leaves open at the end of the stream.
    let mut open: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut intervals: Vec<(f64, f64, NodeId, NodeId)> = Vec::new();
    for ev in &events {
        match ev.kind {
            LinkKind::Up => {
                if open.insert(ev.pair(), ev.time).is_some() {
                    return Err(TraceError::Invalid(format!(
                        "pair ({}, {}) opened twice at t={}",
                        ev.a, ev.b, ev.time
                    )));
                }
            }
            LinkKind::Down => match open.remove(&ev.pair()) {
                Some(start) => intervals.push((start, ev.time, ev.a, ev.b)),
                None => {
                    return Err(TraceError::Invalid(format!(
                        "pair ({}, {}) closed while down at t={}",
                        ev.a, ev.b, ev.time
                    )))
                }
            },
        }
    }
    let end = events.last().map_or(0.0, |e| e.time);
    for ((a, b), start) in open {
        if start < end {
            warnings.push(format!(
                "pair ({a}, {b}) left open; synthesized link-down at t={end}"
            ));
            intervals.push((start, end, a, b));
        } else {
            warnings.push(format!(
                "pair ({a}, {b}) opened at end of log; zero-length contact dropped"
            ));
        }
    }
    let mut rebuilt = Vec::with_capacity(intervals.len() * 2);
    for (start, stop, a, b) in intervals {
        rebuilt.push(ContactEvent::up(start, a, b));
        rebuilt.push(ContactEvent::down(stop, a, b));
    }
    Ok(ParsedTrace {
        trace: finish_stream(rebuilt, max_node),
        warnings,
    })
}

/// Sorts, rebases to t = 0, and wraps an event list into a trace.
fn finish_stream(mut events: Vec<ContactEvent>, max_node: Option<u32>) -> CanonicalTrace {
    events.sort_by(ContactEvent::canonical_cmp);
    if let Some(first) = events.first() {
        let offset = first.time;
        if offset != 0.0 {
            for ev in &mut events {
                ev.time -= offset;
            }
        }
    }
    let duration = events.last().map_or(0.0, |e| e.time);
    CanonicalTrace {
        events,
        node_count: max_node.map_or(0, |m| m as usize + 1),
        duration,
    }
}

/// Reads `node_id,interest_id` records into an inverted index
/// interest -> member set, ordered by interest id. Interests with
/// identical member sets are kept separate here; merging is a
/// tree-construction concern.
pub fn parse_interest_lists(
    reader: impl BufRead,
    declared_nodes: Option<usize>,
) -> Result<Vec<InterestMembership>, TraceError> {
    let mut by_interest: BTreeMap<u32, BTreeSet<NodeId>> = BTreeMap::new();
    for item in data_lines(reader) {
        let (lineno, line) = item?;
        if line.starts_with("node") {
            continue; // header
        }
        let fields = split_fields(&line);
        if fields.len() != 2 {
            return Err(malformed(lineno, "expected node_id, interest_id"));
        }
        let node: u32 = fields[0]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad node id `{}`", fields[0])))?;
        let interest: u32 = fields[1]
            .parse()
            .map_err(|_| malformed(lineno, format!("bad interest id `{}`", fields[1])))?;
        if let Some(limit) = declared_nodes {
            if node as usize >= limit {
                return Err(TraceError::NodeOutOfRange { node, limit });
            }
        }
        by_interest.entry(interest).or_default().insert(NodeId(node));
    }
    Ok(by_interest
        .into_iter()
        .map(|(interest_id, members)| InterestMembership {
            interest_id,
            members,
        })
        .collect())
}

/// Mean inter-contact gap in seconds for every unordered node pair.
#[derive(Debug, Clone)]
pub struct PairRates {
    node_count: usize,
    mean_gap: Vec<f64>,
}

impl PairRates {
    pub fn uniform(node_count: usize, mean_gap: f64) -> Self {
        let pairs = node_count * node_count.saturating_sub(1) / 2;
        PairRates {
            node_count,
            mean_gap: vec![mean_gap; pairs],
        }
    }

    /// Community-clustered rates: pairs sharing a group contact with mean
    /// gap `within_gap`, all other pairs with `cross_gap`.
    pub fn clustered(group_of: &[usize], within_gap: f64, cross_gap: f64) -> Self {
        let n = group_of.len();
        let mut rates = PairRates::uniform(n, cross_gap);
        for a in 0..n {
            for b in (a + 1)..n {
                if group_of[a] == group_of[b] {
                    rates.set(a, b, within_gap);
                }
            }
        }
        rates
    }

    fn index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < b && b < self.node_count);
        // row-major upper triangle
        a * self.node_count - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn set(&mut self, a: usize, b: usize, mean_gap: f64) {
        let i = self.index(a.min(b), a.max(b));
        self.mean_gap[i] = mean_gap;
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.mean_gap[self.index(a.min(b), a.max(b))]
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn sample_exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.gen();
    -mean * (1.0 - u).ln()
}

const MIN_CONTACT_LEN: f64 = 1e-6;

/// Generates a contact process directly: per-pair exponential inter-contact
/// gaps and exponential contact lengths, clamped to `duration`. Deterministic
/// for a fixed seed regardless of pair iteration order.
pub fn generate_synthetic_trace(
    node_count: usize,
    duration: f64,
    rates: &PairRates,
    mean_contact_len: f64,
    seed: u64,
) -> Result<CanonicalTrace, TraceError> {
    if node_count < 2 {
        return Err(TraceError::TooFewNodes(node_count));
    }
    if rates.node_count() != node_count {
        return Err(TraceError::Invalid(format!(
            "rate matrix covers {} nodes, trace wants {}",
            rates.node_count(),
            node_count
        )));
    }
    if !(mean_contact_len > 0.0) {
        return Err(TraceError::Invalid(
            "mean contact length must be positive".to_string(),
        ));
    }
    let mut events = Vec::new();
    for a in 0..node_count {
        for b in (a + 1)..node_count {
            let gap_mean = rates.get(a, b);
            if !(gap_mean > 0.0) {
                return Err(TraceError::NonPositiveRate(a as u32, b as u32));
            }
            let pair_seed = splitmix64(seed ^ ((a as u64) << 32 | b as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
            let mut t = 0.0;
            loop {
                let start = t + sample_exp(&mut rng, gap_mean);
                if start >= duration {
                    break;
                }
                let len = sample_exp(&mut rng, mean_contact_len).max(MIN_CONTACT_LEN);
                let end = (start + len).min(duration);
                if end > start {
                    events.push(ContactEvent::up(start, NodeId(a as u32), NodeId(b as u32)));
                    events.push(ContactEvent::down(end, NodeId(a as u32), NodeId(b as u32)));
                }
                t = end;
            }
        }
    }
    events.sort_by(ContactEvent::canonical_cmp);
    let trace = CanonicalTrace {
        events,
        node_count,
        duration,
    };
    debug_assert!(trace.validate().is_ok());
    Ok(trace)
}
