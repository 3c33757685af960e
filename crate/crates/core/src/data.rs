//! Interaction events, the canonical event CSV and dataset converters.
//!
//! Canonical CSV header: `user_id,item_id,timestamp,u_attrs,i_attrs`, with
//! attribute vectors written as `;`-joined reals (empty when absent). Rows are
//! sorted by timestamp, ties kept in input order.
//!
//! Converters:
//!
//! * `generic`: `user_id,item_id,timestamp[,u_attr...][,i_attr...]` with a
//!   header row; attribute columns are named `u_*` / `i_*` in the header.
//! * `movielens-100k`: a directory holding `u.data`, and optionally `u.user`
//!   and `u.item`.
//! * `movielens-1m`: a directory holding `ratings.dat`, and optionally
//!   `users.dat` and `movies.dat`.
//! * `recbole`: a directory holding `<name>.inter` with optional `<name>.user`
//!   / `<name>.item` atomic files (MovieLens layout).
//! * `jodie`: `user_id,item_id,timestamp,state_label,features...` CSVs
//!   (Wikipedia, LastFM). Features are ignored.
//!
//! MovieLens user attributes are one-hot gender (2), age and one-hot
//! occupation (21). ML-100K ages are real ages and become one column min-max
//! scaled to [0, 1]; ML-1M ages are bucket codes (1/18/25/35/45/50/56) and
//! become a one-hot of width 7.
//! Item attributes are the multi-hot genre vector (18 genres).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One interaction `(user, user_attrs, item, item_attrs, timestamp)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: f64,
    pub user_attrs: Option<Vec<f64>>,
    pub item_attrs: Option<Vec<f64>>,
}

impl EventRecord {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: f64) -> Self {
        EventRecord {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
            user_attrs: None,
            item_attrs: None,
        }
    }

    pub fn with_attrs(mut self, user_attrs: Option<Vec<f64>>, item_attrs: Option<Vec<f64>>) -> Self {
        self.user_attrs = user_attrs;
        self.item_attrs = item_attrs;
        self
    }
}

/// A chronologically sorted event stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub events: Vec<EventRecord>,
}

impl Dataset {
    /// Sorts stably by timestamp and validates attribute widths.
    pub fn new(mut events: Vec<EventRecord>) -> Result<Self> {
        if let Some(bad) = events.iter().position(|e| !e.timestamp.is_finite()) {
            return Err(Error::Invalid(format!("event {bad} has a non-finite timestamp")));
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let ds = Dataset { events };
        ds.attr_widths()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// `(p, q)`; an error when widths differ between events.
    pub fn attr_widths(&self) -> Result<(usize, usize)> {
        let mut p = None;
        let mut q = None;
        for (idx, e) in self.events.iter().enumerate() {
            for (slot, attrs, what) in [(&mut p, &e.user_attrs, "user"), (&mut q, &e.item_attrs, "item")] {
                if let Some(a) = attrs {
                    if a.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Invalid(format!("event {idx}: non-finite {what} attribute")));
                    }
                    match slot {
                        None => *slot = Some(a.len()),
                        Some(w) if *w != a.len() => {
                            return Err(Error::Invalid(format!(
                                "event {idx}: {what} attribute width {} differs from {w}",
                                a.len()
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok((p.unwrap_or(0), q.unwrap_or(0)))
    }

    /// Shifts timestamps so the first event sits at zero.
    pub fn shift_to_origin(&mut self) {
        if let Some(first) = self.events.first().map(|e| e.timestamp) {
            for e in &mut self.events {
                e.timestamp -= first;
            }
        }
    }

    pub fn strip_attrs(&mut self) {
        for e in &mut self.events {
            e.user_attrs = None;
            e.item_attrs = None;
        }
    }

    /// Drops items with fewer than `min_count` interactions.
    pub fn filter_min_item_count(&mut self, min_count: usize) {
        if min_count <= 1 {
            return;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in &self.events {
            *counts.entry(e.item_id.as_str()).or_default() += 1;
        }
        let keep: Vec<bool> = self
            .events
            .iter()
            .map(|e| counts[e.item_id.as_str()] >= min_count)
            .collect();
        let mut it = keep.into_iter();
        self.events.retain(|_| it.next().unwrap_or(false));
    }

    pub fn user_count(&self) -> usize {
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for e in &self.events {
            seen.insert(e.user_id.as_str(), ());
        }
        seen.len()
    }

    pub fn item_count(&self) -> usize {
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for e in &self.events {
            seen.insert(e.item_id.as_str(), ());
        }
        seen.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Generic,
    Canonical,
    MovieLens100k,
    MovieLens1m,
    Recbole,
    Jodie,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "generic" => InputFormat::Generic,
            "canonical" => InputFormat::Canonical,
            "movielens-100k" | "ml-100k" => InputFormat::MovieLens100k,
            "movielens-1m" | "ml-1m" => InputFormat::MovieLens1m,
            "recbole" => InputFormat::Recbole,
            "jodie" => InputFormat::Jodie,
            other => {
                return Err(Error::Invalid(format!(
                    "unknown format `{other}` (expected generic, canonical, movielens-100k, movielens-1m, recbole or jodie)"
                )))
            }
        })
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path)?;
    BufReader::new(file).lines().map(|l| l.map_err(Error::from)).collect()
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} `{field}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite {what}")));
    }
    Ok(v)
}

fn parse_attr_list(path: &Path, line: usize, field: &str) -> Result<Option<Vec<f64>>> {
    if field.trim().is_empty() {
        return Ok(None);
    }
    field
        .split(';')
        .map(|x| parse_f64(path, line, x, "attribute"))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Reads any supported input into a sorted [`Dataset`].
pub fn load(path: &Path, format: InputFormat) -> Result<Dataset> {
    match format {
        InputFormat::Canonical => read_canonical(path),
        InputFormat::Generic => read_generic(path),
        InputFormat::MovieLens100k => read_movielens_100k(path),
        InputFormat::MovieLens1m => read_movielens_1m(path),
        InputFormat::Recbole => read_recbole(path),
        InputFormat::Jodie => read_jodie(path),
    }
}

pub const CANONICAL_HEADER: &str = "user_id,item_id,timestamp,u_attrs,i_attrs";

pub fn read_canonical(path: &Path) -> Result<Dataset> {
    let lines = read_lines(path)?;
    let mut events = Vec::with_capacity(lines.len());
    for (idx, line) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != CANONICAL_HEADER {
                return Err(parse_err(path, lineno, format!("expected header `{CANONICAL_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 fields, found {}", fields.len())));
        }
        let t = parse_f64(path, lineno, fields[2], "timestamp")?;
        events.push(
            EventRecord::new(fields[0], fields[1], t).with_attrs(
                parse_attr_list(path, lineno, fields[3])?,
                parse_attr_list(path, lineno, fields[4])?,
            ),
        );
    }
    Dataset::new(events)
}

pub fn write_canonical(ds: &Dataset, out: &mut impl Write) -> Result<()> {
    let join = |a: &Option<Vec<f64>>| {
        a.as_ref()
            .map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default()
    };
    writeln!(out, "{CANONICAL_HEADER}")?;
    for e in &ds.events {
        if e.user_id.contains(',') || e.item_id.contains(',') {
            return Err(Error::Invalid(format!(
                "ids may not contain commas: `{}` / `{}`",
                e.user_id, e.item_id
            )));
        }
        writeln!(
            out,
            "{},{},{},{},{}",
            e.user_id,
            e.item_id,
            e.timestamp,
            join(&e.user_attrs),
            join(&e.item_attrs)
        )?;
    }
    Ok(())
}

pub fn save_canonical(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_canonical(ds, &mut f)?;
    f.flush()?;
    Ok(())
}

fn read_generic(path: &Path) -> Result<Dataset> {
    let lines = read_lines(path)?;
    let Some(header) = lines.first() else {
        return Err(parse_err(path, 1, "empty file"));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 {
        return Err(parse_err(path, 1, "need at least user_id,item_id,timestamp"));
    }
    let u_cols: Vec<usize> = (3..cols.len()).filter(|&c| cols[c].starts_with("u_")).collect();
    let i_cols: Vec<usize> = (3..cols.len()).filter(|&c| !cols[c].starts_with("u_")).collect();
    let mut events = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(parse_err(path, lineno, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let t = parse_f64(path, lineno, f[2], "timestamp")?;
        let attrs = |which: &[usize]| -> Result<Option<Vec<f64>>> {
            if which.is_empty() {
                return Ok(None);
            }
            which
                .iter()
                .map(|&c| parse_f64(path, lineno, f[c], "attribute"))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        events.push(EventRecord::new(f[0].trim(), f[1].trim(), t).with_attrs(attrs(&u_cols)?, attrs(&i_cols)?));
    }
    Dataset::new(events)
}

fn read_jodie(path: &Path) -> Result<Dataset> {
    let lines = read_lines(path)?;
    let mut events = Vec::with_capacity(lines.len());
    for (idx, line) in lines.iter().enumerate() {
        let lineno = idx + 1;
        if idx == 0 && line.starts_with("user_id") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.splitn(4, ',');
        let (Some(u), Some(i), Some(t)) = (f.next(), f.next(), f.next()) else {
            return Err(parse_err(path, lineno, "expected user_id,item_id,timestamp,..."));
        };
        let t = parse_f64(path, lineno, t, "timestamp")?;
        events.push(EventRecord::new(u.trim(), i.trim(), t));
    }
    Dataset::new(events)
}

const AGE_BUCKETS: [f64; 6] = [18.0, 25.0, 35.0, 45.0, 50.0, 56.0];
pub const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];
const OCCUPATIONS_100K: [&str; 21] = [
    "administrator",
    "artist",
    "doctor",
    "educator",
    "engineer",
    "entertainment",
    "executive",
    "healthcare",
    "homemaker",
    "lawyer",
    "librarian",
    "marketing",
    "none",
    "other",
    "programmer",
    "retired",
    "salesman",
    "scientist",
    "student",
    "technician",
    "writer",
];

/// Width of ML-1M user attribute vectors.
pub const ML1M_USER_ATTRS: usize = 2 + 7 + 21;
/// Width of ML-100K user attribute vectors.
pub const ML100K_USER_ATTRS: usize = 2 + 1 + 21;

fn ml1m_user_vector(gender: &str, age: f64, occupation: usize) -> Vec<f64> {
    let mut v = vec![0.0; ML1M_USER_ATTRS];
    v[if gender.trim() == "M" { 0 } else { 1 }] = 1.0;
    let bucket = AGE_BUCKETS.iter().filter(|&&b| age >= b).count();
    v[2 + bucket] = 1.0;
    v[9 + occupation.min(20)] = 1.0;
    v
}

/// Raw ML-100K user rows `(id, gender, age, occupation)`; ages are min-max
/// scaled over all users.
fn ml100k_user_vectors(rows: Vec<(String, String, f64, usize)>) -> HashMap<String, Vec<f64>> {
    let lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    rows.into_iter()
        .map(|(id, gender, age, occ)| {
            let mut v = vec![0.0; ML100K_USER_ATTRS];
            v[if gender.trim() == "M" { 0 } else { 1 }] = 1.0;
            v[2] = if hi > lo { (age - lo) / (hi - lo) } else { 0.0 };
            v[3 + occ.min(20)] = 1.0;
            (id, v)
        })
        .collect()
}

fn genre_vector<'a>(names: impl Iterator<Item = &'a str>) -> Vec<f64> {
    let mut v = vec![0.0; GENRES.len()];
    for n in names {
        if let Some(g) = GENRES.iter().position(|g| *g == n.trim()) {
            v[g] = 1.0;
        }
    }
    v
}

fn attach_attrs(
    events: &mut [EventRecord],
    users: &HashMap<String, Vec<f64>>,
    items: &HashMap<String, Vec<f64>>,
) {
    let width = users.values().next().map_or(0, Vec::len);
    for e in events {
        if !users.is_empty() {
            e.user_attrs = Some(users.get(&e.user_id).cloned().unwrap_or_else(|| vec![0.0; width]));
        }
        if !items.is_empty() {
            e.item_attrs = Some(items.get(&e.item_id).cloned().unwrap_or_else(|| vec![0.0; GENRES.len()]));
        }
    }
}

fn read_movielens_100k(dir: &Path) -> Result<Dataset> {
    let ratings = dir.join("u.data");
    let mut events = Vec::new();
    for (idx, line) in read_lines(&ratings)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 4 {
            return Err(parse_err(&ratings, idx + 1, "expected user\\titem\\trating\\ttimestamp"));
        }
        let t = parse_f64(&ratings, idx + 1, f[3], "timestamp")?;
        events.push(EventRecord::new(f[0], f[1], t));
    }
    let mut rows = Vec::new();
    let user_file = dir.join("u.user");
    if user_file.exists() {
        for (idx, line) in read_lines(&user_file)?.iter().enumerate() {
            let f: Vec<&str> = line.split('|').collect();
            if f.len() < 4 {
                return Err(parse_err(&user_file, idx + 1, "expected id|age|gender|occupation|zip"));
            }
            let age = parse_f64(&user_file, idx + 1, f[1], "age")?;
            let occ = OCCUPATIONS_100K.iter().position(|o| *o == f[3].trim()).unwrap_or(13);
            rows.push((f[0].to_string(), f[2].to_string(), age, occ));
        }
    }
    let users = ml100k_user_vectors(rows);
    let mut items = HashMap::new();
    let item_file = dir.join("u.item");
    if item_file.exists() {
        // latin-1 titles: read raw bytes and split on '|'
        let raw = fs::read(&item_file)?;
        for (idx, line) in raw.split(|&b| b == b'\n').enumerate() {
            let text: String = line.iter().map(|&b| b as char).collect();
            if text.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = text.trim_end().split('|').collect();
            if f.len() < 24 {
                return Err(parse_err(&item_file, idx + 1, "expected 24 fields"));
            }
            // field 5 is the "unknown" genre; the remaining 18 follow GENRES order
            let v: Vec<f64> = f[6..24].iter().map(|x| if x.trim() == "1" { 1.0 } else { 0.0 }).collect();
            items.insert(f[0].to_string(), v);
        }
    }
    attach_attrs(&mut events, &users, &items);
    Dataset::new(events)
}

fn read_movielens_1m(dir: &Path) -> Result<Dataset> {
    let ratings = dir.join("ratings.dat");
    let mut events = Vec::new();
    for (idx, line) in read_lines(&ratings)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() < 4 {
            return Err(parse_err(&ratings, idx + 1, "expected user::movie::rating::timestamp"));
        }
        let t = parse_f64(&ratings, idx + 1, f[3], "timestamp")?;
        events.push(EventRecord::new(f[0], f[1], t));
    }
    let mut users = HashMap::new();
    let user_file = dir.join("users.dat");
    if user_file.exists() {
        for (idx, line) in read_lines(&user_file)?.iter().enumerate() {
            let f: Vec<&str> = line.split("::").collect();
            if f.len() < 4 {
                return Err(parse_err(&user_file, idx + 1, "expected id::gender::age::occupation::zip"));
            }
            let age = parse_f64(&user_file, idx + 1, f[2], "age")?;
            let occ = parse_f64(&user_file, idx + 1, f[3], "occupation")? as usize;
            users.insert(f[0].to_string(), ml1m_user_vector(f[1], age, occ));
        }
    }
    let mut items = HashMap::new();
    let item_file = dir.join("movies.dat");
    if item_file.exists() {
        let raw = fs::read(&item_file)?;
        for line in raw.split(|&b| b == b'\n') {
            let text: String = line.iter().map(|&b| b as char).collect();
            let f: Vec<&str> = text.trim_end().split("::").collect();
            if f.len() < 3 {
                continue;
            }
            items.insert(f[0].to_string(), genre_vector(f[2].split('|')));
        }
    }
    attach_attrs(&mut events, &users, &items);
    Dataset::new(events)
}

/// RecBole atomic files: tab-separated with typed headers such as
/// `user_id:token`.
fn read_recbole(dir: &Path) -> Result<Dataset> {
    let inter = find_with_ext(dir, "inter")?;
    let lines = read_lines(&inter)?;
    let header: Vec<String> = lines
        .first()
        .ok_or_else(|| parse_err(&inter, 1, "empty file"))?
        .split('\t')
        .map(|h| h.split(':').next().unwrap_or("").to_string())
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(&inter, 1, format!("missing column `{name}`")))
    };
    let (cu, ci, ct) = (col("user_id")?, col("item_id")?, col("timestamp")?);
    let mut events = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < header.len() {
            return Err(parse_err(&inter, idx + 1, "short row"));
        }
        let t = parse_f64(&inter, idx + 1, f[ct], "timestamp")?;
        events.push(EventRecord::new(f[cu], f[ci], t));
    }

    let mut rows = Vec::new();
    if let Ok(user_file) = find_with_ext(dir, "user") {
        let lines = read_lines(&user_file)?;
        let header: Vec<&str> = lines[0].split('\t').map(|h| h.split(':').next().unwrap_or("")).collect();
        let pos = |n: &str| header.iter().position(|h| *h == n);
        if let (Some(cid), Some(cage), Some(cg), Some(co)) = (pos("user_id"), pos("age"), pos("gender"), pos("occupation")) {
            for (idx, line) in lines.iter().enumerate().skip(1) {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() <= cid.max(cage).max(cg).max(co) {
                    continue;
                }
                let age = parse_f64(&user_file, idx + 1, f[cage], "age")?;
                let occ = OCCUPATIONS_100K.iter().position(|o| *o == f[co].trim()).unwrap_or(13);
                rows.push((f[cid].to_string(), f[cg].to_string(), age, occ));
            }
        }
    }
    let users = ml100k_user_vectors(rows);
    let mut items = HashMap::new();
    if let Ok(item_file) = find_with_ext(dir, "item") {
        let lines = read_lines(&item_file)?;
        let header: Vec<&str> = lines[0].split('\t').map(|h| h.split(':').next().unwrap_or("")).collect();
        let pos = |n: &str| header.iter().position(|h| *h == n);
        if let (Some(cid), Some(cc)) = (pos("item_id"), pos("class")) {
            for line in lines.iter().skip(1) {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() <= cid.max(cc) {
                    continue;
                }
                items.insert(f[cid].to_string(), genre_vector(f[cc].split(' ')));
            }
        }
    }
    attach_attrs(&mut events, &users, &items);
    Dataset::new(events)
}

fn find_with_ext(dir: &Path, ext: &str) -> Result<PathBuf> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    hits.sort();
    hits.into_iter().next().ok_or_else(|| {
        Error::Invalid(format!("no *.{ext} file in {}", dir.display()))
    })
}
