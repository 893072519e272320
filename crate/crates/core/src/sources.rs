//! Record containers: SIP archives, SIP folders and CSV files.
//!
//! A SIP item is a directory holding `metadata.json` (an object of field ->
//! list of values) and an optional `assets/` directory. Items are read in
//! lexicographic order of their directory path.

use std::collections::{BTreeMap, HashSet};
use std::hash::{Hash, Hasher};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::sanitize_handle;
use crate::record::MetadataRecord;
use crate::runconfig::{ResolvedConfig, SourceType};
use crate::schema::HANDLE_FIELD;

pub const METADATA_FILE: &str = "metadata.json";
pub const ASSETS_DIR: &str = "assets";

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("no Handle_ID column in `{}` and no handleIdFormat configured", .0.display())]
    MissingHandleNoFormat(PathBuf),
    #[error("handle template `{0}` expanded to an empty handle")]
    EmptyHandleAfterExpansion(String),
    #[error("malformed item `{path}`: {message}")]
    MalformedItem { path: String, message: String },
    #[error("no items found under `{0}`")]
    EmptyDataPath(String),
    #[error("cannot read `{}`: {source}", .path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write `{}`: {source}", .path.display())]
    WriteFailure { path: PathBuf, source: io::Error },
    #[error("two records map to the same item name `{0}`")]
    DuplicateItem(String),
}

fn read_err(path: &Path) -> impl FnOnce(io::Error) -> SourceError + '_ {
    move |source| SourceError::Read { path: path.to_path_buf(), source }
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> SourceError + '_ {
    move |source| SourceError::WriteFailure { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssetData {
    File(PathBuf),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Asset {
    pub name: String,
    pub data: AssetData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPackage {
    pub handle: String,
    pub metadata: MetadataRecord,
    pub assets: Vec<Asset>,
}

/// Package directory name for a handle.
pub fn item_name(handle: &str) -> String {
    sanitize_handle(handle)
}

// ---------------------------------------------------------------------------
// handle templates

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Seq,
    Field(String),
}

/// `${seq}` expands to the 1-based record number, `${field:name}` to the
/// first value of `name` with every run of non-alphanumerics turned into `_`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandleTemplate {
    source: String,
    pieces: Vec<Piece>,
}

impl HandleTemplate {
    pub fn parse(template: &str) -> HandleTemplate {
        let mut pieces = Vec::new();
        let mut lit = String::new();
        let mut rest = template;
        while let Some(start) = rest.find("${") {
            let Some(len) = rest[start..].find('}') else { break };
            let token = &rest[start + 2..start + len];
            let piece = if token == "seq" {
                Some(Piece::Seq)
            } else {
                token.strip_prefix("field:").map(|f| Piece::Field(f.to_string()))
            };
            match piece {
                Some(p) => {
                    lit.push_str(&rest[..start]);
                    if !lit.is_empty() {
                        pieces.push(Piece::Lit(std::mem::take(&mut lit)));
                    }
                    pieces.push(p);
                }
                None => lit.push_str(&rest[..start + len + 1]),
            }
            rest = &rest[start + len + 1..];
        }
        lit.push_str(rest);
        if !lit.is_empty() {
            pieces.push(Piece::Lit(lit));
        }
        HandleTemplate {
            source: template.to_string(),
            pieces,
        }
    }

    pub fn expand(&self, record: &MetadataRecord, seq: usize) -> Result<String, SourceError> {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Lit(s) => out.push_str(s),
                Piece::Seq => out.push_str(&seq.to_string()),
                Piece::Field(f) => {
                    if let Some(v) = record.first_value(f) {
                        out.push_str(&collapse_non_alnum(v));
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(SourceError::EmptyHandleAfterExpansion(self.source.clone()));
        }
        Ok(out)
    }
}

fn collapse_non_alnum(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut gap = false;
    for c in s.chars() {
        if c.is_alphanumeric() {
            out.push(c);
            gap = false;
        } else if !gap {
            out.push('_');
            gap = true;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// readers

fn parse_item(path: &str, text: &str) -> Result<MetadataRecord, SourceError> {
    let malformed = |message: String| SourceError::MalformedItem { path: path.to_string(), message };
    let rec = MetadataRecord::from_json_text(text).map_err(|e| malformed(e.to_string()))?;
    rec.require_handle().map_err(|e| malformed(e.to_string()))?;
    Ok(rec)
}

fn package(path: &str, text: &str, assets: Vec<Asset>) -> Result<ItemPackage, SourceError> {
    let metadata = parse_item(path, text)?;
    Ok(ItemPackage {
        handle: metadata.handle().unwrap().to_string(),
        metadata,
        assets,
    })
}

pub type PackageIter = Box<dyn Iterator<Item = Result<ItemPackage, SourceError>> + Send>;

/// Item directories of a folder tree, sorted.
fn folder_items(root: &Path) -> Result<Vec<PathBuf>, SourceError> {
    let mut items = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| SourceError::Read {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && entry.file_name() == METADATA_FILE {
            if let Some(parent) = entry.path().parent() {
                items.push(parent.to_path_buf());
            }
        }
    }
    items.sort_by(|a, b| rel_key(root, a).cmp(&rel_key(root, b)));
    Ok(items)
}

fn rel_key(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn folder_assets(item: &Path) -> Result<Vec<Asset>, SourceError> {
    let dir = item.join(ASSETS_DIR);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut assets = Vec::new();
    for entry in walkdir::WalkDir::new(&dir).sort_by_file_name() {
        let entry = entry.map_err(|e| SourceError::Read { path: dir.clone(), source: e.into() })?;
        if entry.file_type().is_file() {
            assets.push(Asset {
                name: rel_key(&dir, entry.path()),
                data: AssetData::File(entry.path().to_path_buf()),
            });
        }
    }
    Ok(assets)
}

/// Read a SIP folder; `read_path` narrows the walk to a sub-directory.
pub fn read_folder(root: &Path, read_path: Option<&str>) -> Result<PackageIter, SourceError> {
    let base = match read_path {
        Some(p) => root.join(p),
        None => root.to_path_buf(),
    };
    let items = if base.is_dir() { folder_items(&base)? } else { Vec::new() };
    if items.is_empty() {
        return Err(SourceError::EmptyDataPath(base.display().to_string()));
    }
    Ok(Box::new(items.into_iter().map(|item| {
        let meta = item.join(METADATA_FILE);
        let text = fs::read_to_string(&meta).map_err(read_err(&meta))?;
        package(&meta.display().to_string(), &text, folder_assets(&item)?)
    })))
}

fn open_tar(path: &Path) -> Result<tar::Archive<Box<dyn Read + Send>>, SourceError> {
    let mut f = BufReader::new(File::open(path).map_err(read_err(path))?);
    let gz = f.fill_buf().map_err(read_err(path))?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn Read + Send> = if gz { Box::new(GzDecoder::new(f)) } else { Box::new(f) };
    Ok(tar::Archive::new(reader))
}

fn entry_path(e: &tar::Entry<impl Read>) -> Option<String> {
    let p = e.path().ok()?;
    let s = p.to_string_lossy().replace('\\', "/");
    let s = s.trim_start_matches("./").trim_end_matches('/').to_string();
    Some(s)
}

fn under_prefix<'a>(path: &'a str, prefix: Option<&str>) -> Option<&'a str> {
    match prefix {
        None => Some(path),
        Some(p) => path.strip_prefix(p)?.strip_prefix('/'),
    }
}

/// The item directory an archive member belongs to, and the asset name
/// when the member is an asset. Members that are neither are ignored.
fn owner(rel: &str) -> Option<(&str, Option<&str>)> {
    if rel == METADATA_FILE {
        return Some(("", None));
    }
    if let Some(dir) = rel.strip_suffix(METADATA_FILE).and_then(|d| d.strip_suffix('/')) {
        return Some((dir, None));
    }
    let marker = format!("{ASSETS_DIR}/");
    if let Some(name) = rel.strip_prefix(&marker) {
        return Some(("", Some(name)));
    }
    let i = rel.find(&format!("/{marker}"))?;
    Some((&rel[..i], Some(&rel[i + marker.len() + 1..])))
}

/// Number of items in an archive and whether its members are grouped by
/// item in sorted order.
fn scan_tar(path: &Path, prefix: Option<&str>) -> Result<(usize, bool), SourceError> {
    let mut ar = open_tar(path)?;
    let mut items = 0;
    let mut last: Option<String> = None;
    let mut streamable = true;
    for e in ar.entries().map_err(read_err(path))? {
        let e = e.map_err(read_err(path))?;
        if !e.header().entry_type().is_file() {
            continue;
        }
        let Some(p) = entry_path(&e) else { continue };
        let Some(rel) = under_prefix(&p, prefix) else { continue };
        let Some((dir, asset)) = owner(rel) else { continue };
        if asset.is_none() {
            items += 1;
        }
        match &last {
            Some(l) if l == dir => {}
            Some(l) if l.as_str() > dir => streamable = false,
            _ => last = Some(dir.to_string()),
        }
    }
    Ok((items, streamable))
}

/// Walk a grouped archive, sending one package per item.
fn stream_tar(
    path: &Path,
    prefix: Option<&str>,
    tx: &mpsc::SyncSender<Result<ItemPackage, SourceError>>,
) -> Result<(), SourceError> {
    let label = |dir: &str| format!("{}:{dir}", path.display());
    // asset groups without metadata.json are not items
    let finish = |cur: (String, Option<String>, Vec<Asset>)| cur.1.map(|text| package(&label(&cur.0), &text, cur.2));
    let mut ar = open_tar(path)?;
    let mut current: Option<(String, Option<String>, Vec<Asset>)> = None;
    for e in ar.entries().map_err(read_err(path))? {
        let mut e = e.map_err(read_err(path))?;
        if !e.header().entry_type().is_file() {
            continue;
        }
        let Some(p) = entry_path(&e) else { continue };
        let Some(rel) = under_prefix(&p, prefix) else { continue };
        let Some((dir, asset)) = owner(rel) else { continue };
        let mut buf = Vec::new();
        e.read_to_end(&mut buf).map_err(read_err(path))?;
        if current.as_ref().is_some_and(|c| c.0 != dir) {
            if let Some(item) = finish(current.take().unwrap()) {
                if tx.send(item).is_err() {
                    return Ok(());
                }
            }
        }
        let cur = current.get_or_insert_with(|| (dir.to_string(), None, Vec::new()));
        match asset {
            None => {
                let text = String::from_utf8(buf).map_err(|_| SourceError::MalformedItem {
                    path: label(dir),
                    message: "metadata.json is not UTF-8".into(),
                })?;
                cur.1 = Some(text);
            }
            Some(name) => cur.2.push(Asset { name: name.to_string(), data: AssetData::Bytes(buf) }),
        }
    }
    if let Some(item) = current.and_then(finish) {
        let _ = tx.send(item);
    }
    Ok(())
}

/// Read a SIP archive (gzip or plain tar). Archives whose members are
/// grouped per item in sorted order are streamed; others are unpacked to a
/// temporary directory first.
pub fn read_tar(path: &Path, read_path: Option<&str>) -> Result<PackageIter, SourceError> {
    let (items, streamable) = scan_tar(path, read_path)?;
    if items == 0 {
        return Err(SourceError::EmptyDataPath(match read_path {
            Some(p) => format!("{}:{p}", path.display()),
            None => path.display().to_string(),
        }));
    }
    if streamable {
        let (tx, rx) = mpsc::sync_channel(256);
        let path = path.to_path_buf();
        let prefix = read_path.map(str::to_string);
        std::thread::spawn(move || {
            if let Err(e) = stream_tar(&path, prefix.as_deref(), &tx) {
                let _ = tx.send(Err(e));
            }
        });
        return Ok(Box::new(rx.into_iter()));
    }
    log::info!("{}: members not grouped by item, unpacking to a temporary directory", path.display());
    let tmp = tempfile::tempdir().map_err(read_err(path))?;
    let mut ar = open_tar(path)?;
    for e in ar.entries().map_err(read_err(path))? {
        let mut e = e.map_err(read_err(path))?;
        if !e.header().entry_type().is_file() {
            continue;
        }
        let Some(p) = entry_path(&e) else { continue };
        let Some(rel) = under_prefix(&p, read_path) else { continue };
        if owner(rel).is_none() {
            continue;
        }
        let dest = tmp.path().join(rel);
        if rel.split('/').any(|c| c == "..") {
            continue;
        }
        fs::create_dir_all(dest.parent().unwrap()).map_err(read_err(&dest))?;
        let mut out = File::create(&dest).map_err(read_err(&dest))?;
        io::copy(&mut e, &mut out).map_err(read_err(&dest))?;
    }
    let inner = read_folder(tmp.path(), None)?;
    // keep the directory alive until the iterator is dropped
    Ok(Box::new(KeepAlive { _dir: tmp, inner }))
}

struct KeepAlive {
    _dir: tempfile::TempDir,
    inner: PackageIter,
}

impl Iterator for KeepAlive {
    type Item = Result<ItemPackage, SourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        // folder assets point into the temp dir; load them before it can go away
        self.inner.next().map(|r| {
            r.and_then(|mut p| {
                for a in &mut p.assets {
                    if let AssetData::File(f) = &a.data {
                        a.data = AssetData::Bytes(fs::read(f).map_err(read_err(f))?);
                    }
                }
                Ok(p)
            })
        })
    }
}

/// Read a CSV source. Returns the header alongside the records.
pub fn read_csv(
    path: &Path,
    field_sep: char,
    multi_sep: char,
    handle_format: Option<&str>,
) -> Result<(Vec<String>, PackageIter), SourceError> {
    let file = File::open(path).map_err(read_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(field_sep as u8)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .enumerate()
        .map(|(i, h)| if i == 0 { h.trim_start_matches('\u{feff}') } else { h }.to_string())
        .collect();
    let has_handle = header.iter().any(|h| h == HANDLE_FIELD);
    let template = match (has_handle, handle_format) {
        (true, _) => None,
        (false, Some(f)) => Some(HandleTemplate::parse(f)),
        (false, None) => return Err(SourceError::MissingHandleNoFormat(path.to_path_buf())),
    };
    let path = path.to_path_buf();
    let cols = header.clone();
    let iter = reader.into_records().enumerate().map(move |(i, row)| {
        let row = row.map_err(|e| csv_err(&path, e))?;
        let mut rec = MetadataRecord::new();
        for (name, cell) in cols.iter().zip(row.iter()) {
            for part in cell.split(multi_sep).filter(|p| !p.is_empty()) {
                rec.push(name.clone(), part);
            }
        }
        if let Some(t) = &template {
            let handle = t.expand(&rec, i + 1)?;
            rec.entries.insert(0, (HANDLE_FIELD.to_string(), handle));
        }
        let label = format!("{}:{}", path.display(), i + 2);
        let handle = rec
            .require_handle()
            .map_err(|e| SourceError::MalformedItem { path: label, message: e.to_string() })?
            .to_string();
        Ok(ItemPackage { handle, metadata: rec, assets: Vec::new() })
    });
    Ok((header, Box::new(iter)))
}

fn csv_err(path: &Path, e: csv::Error) -> SourceError {
    SourceError::Read {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, e.to_string()),
    }
}

/// An opened source: the records plus, for CSV, the original header.
pub struct Source {
    pub header: Option<Vec<String>>,
    pub packages: PackageIter,
}

pub fn read_source(cfg: &ResolvedConfig) -> Result<Source, SourceError> {
    let p = &cfg.props;
    let read_path = p.data_read_path.as_deref();
    match p.source_type {
        SourceType::SipTar => Ok(Source { header: None, packages: read_tar(&cfg.source_path, read_path)? }),
        SourceType::SipFolder => Ok(Source { header: None, packages: read_folder(&cfg.source_path, read_path)? }),
        SourceType::Csv => {
            let (header, packages) = read_csv(
                &cfg.source_path,
                p.csv_field_sep,
                p.csv_multi_value_sep,
                p.handle_id_format.as_deref(),
            )?;
            Ok(Source { header: Some(header), packages })
        }
    }
}

// ---------------------------------------------------------------------------
// spill

#[derive(Serialize, Deserialize)]
struct SpillLine {
    name: String,
    record: Vec<(String, String)>,
    assets: Vec<(String, PathBuf)>,
}

/// Curated records parked on disk between curation and writing.
pub struct Spill {
    dir: tempfile::TempDir,
    out: BufWriter<File>,
    count: usize,
    /// Hashes of item names seen so far, for duplicate detection.
    names: HashSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpilledItem {
    pub name: String,
    pub record: MetadataRecord,
    pub assets: Vec<(String, PathBuf)>,
}

impl Spill {
    pub fn new() -> io::Result<Spill> {
        let dir = tempfile::Builder::new().prefix("adct-spill").tempdir()?;
        let out = BufWriter::new(File::create(dir.path().join("records.jsonl"))?);
        Ok(Spill { dir, out, count: 0, names: HashSet::new() })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Park one record. In-memory assets are written out; file assets are
    /// referenced where they are.
    pub fn push(&mut self, record: &MetadataRecord, assets: &[Asset]) -> Result<(), SourceError> {
        let handle = record.handle().unwrap_or_default();
        let name = item_name(handle);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        name.hash(&mut h);
        if !self.names.insert(h.finish()) {
            return Err(SourceError::DuplicateItem(name));
        }
        let mut refs = Vec::with_capacity(assets.len());
        for (i, a) in assets.iter().enumerate() {
            let path = match &a.data {
                AssetData::File(p) => p.clone(),
                AssetData::Bytes(b) => {
                    let p = self.dir.path().join(format!("{}-{i}", self.count));
                    fs::write(&p, b).map_err(write_err(&p))?;
                    p
                }
            };
            refs.push((a.name.clone(), path));
        }
        let line = SpillLine { name, record: record.entries.clone(), assets: refs };
        let path = self.dir.path().join("records.jsonl");
        serde_json::to_writer(&mut self.out, &line).map_err(|e| write_err(&path)(e.into()))?;
        self.out.write_all(b"\n").map_err(write_err(&path))?;
        self.count += 1;
        Ok(())
    }

    pub fn iter(&mut self) -> Result<impl Iterator<Item = Result<SpilledItem, SourceError>> + '_, SourceError> {
        let path = self.dir.path().join("records.jsonl");
        self.out.flush().map_err(write_err(&path))?;
        let f = File::open(&path).map_err(read_err(&path))?;
        Ok(BufReader::new(f).lines().map(move |line| {
            let line = line.map_err(read_err(&path))?;
            let s: SpillLine = serde_json::from_str(&line).map_err(|e| read_err(&path)(e.into()))?;
            Ok(SpilledItem { name: s.name, record: MetadataRecord { entries: s.record }, assets: s.assets })
        }))
    }
}

// ---------------------------------------------------------------------------
// writers

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    TarGz,
    Csv,
    Directory,
}

impl TargetKind {
    pub fn for_path(path: &Path) -> TargetKind {
        let name = path.file_name().map(|n| n.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
        if name.ends_with(".tar.gz") || name.ends_with(".tgz") {
            TargetKind::TarGz
        } else if name.ends_with(".csv") {
            TargetKind::Csv
        } else {
            TargetKind::Directory
        }
    }
}

fn tar_header(size: u64) -> tar::Header {
    let mut h = tar::Header::new_gnu();
    h.set_size(size);
    h.set_mode(0o644);
    h.set_mtime(0);
    h.set_uid(0);
    h.set_gid(0);
    h.set_entry_type(tar::EntryType::Regular);
    h
}

/// Sequential item writer for archive and directory targets.
pub enum ItemWriter {
    Tar(tar::Builder<GzEncoder<BufWriter<File>>>, PathBuf),
    Dir(PathBuf),
}

impl ItemWriter {
    pub fn create(path: &Path) -> Result<ItemWriter, SourceError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(write_err(parent))?;
        }
        match TargetKind::for_path(path) {
            TargetKind::TarGz => {
                let f = File::create(path).map_err(write_err(path))?;
                let gz = GzEncoder::new(BufWriter::new(f), Compression::default());
                let mut b = tar::Builder::new(gz);
                b.mode(tar::HeaderMode::Deterministic);
                Ok(ItemWriter::Tar(b, path.to_path_buf()))
            }
            _ => {
                fs::create_dir_all(path).map_err(write_err(path))?;
                Ok(ItemWriter::Dir(path.to_path_buf()))
            }
        }
    }

    pub fn write(&mut self, item: &SpilledItem) -> Result<(), SourceError> {
        let meta = item.record.to_json_bytes();
        match self {
            ItemWriter::Tar(b, path) => {
                let name = format!("{}/{METADATA_FILE}", item.name);
                b.append_data(&mut tar_header(meta.len() as u64), &name, meta.as_slice())
                    .map_err(write_err(path))?;
                for (asset, src) in &item.assets {
                    let f = File::open(src).map_err(read_err(src))?;
                    let len = f.metadata().map_err(read_err(src))?.len();
                    let name = format!("{}/{ASSETS_DIR}/{asset}", item.name);
                    b.append_data(&mut tar_header(len), &name, f).map_err(write_err(path))?;
                }
            }
            ItemWriter::Dir(root) => {
                let dir = root.join(&item.name);
                fs::create_dir_all(&dir).map_err(write_err(&dir))?;
                let m = dir.join(METADATA_FILE);
                fs::write(&m, &meta).map_err(write_err(&m))?;
                for (asset, src) in &item.assets {
                    let dest = dir.join(ASSETS_DIR).join(asset);
                    fs::create_dir_all(dest.parent().unwrap()).map_err(write_err(&dest))?;
                    fs::copy(src, &dest).map_err(write_err(&dest))?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), SourceError> {
        if let ItemWriter::Tar(b, path) = self {
            let gz = b.into_inner().map_err(write_err(&path))?;
            let mut w = gz.finish().map_err(write_err(&path))?;
            w.flush().map_err(write_err(&path))?;
        }
        Ok(())
    }
}

/// Union of fields over `records`, starting from `seed` and adding new
/// fields in first-appearance order.
pub fn union_header<'a>(seed: &[String], records: impl IntoIterator<Item = &'a MetadataRecord>) -> Vec<String> {
    let mut header: Vec<String> = seed.to_vec();
    let mut seen: HashSet<String> = header.iter().cloned().collect();
    for r in records {
        for f in r.fields() {
            if seen.insert(f.to_string()) {
                header.push(f.to_string());
            }
        }
    }
    header
}

pub fn csv_row(header: &[String], record: &MetadataRecord, multi_sep: char) -> Vec<String> {
    let mut cells: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (f, v) in &record.entries {
        cells.entry(f.as_str()).or_default().push(v.as_str());
    }
    let sep = multi_sep.to_string();
    header
        .iter()
        .map(|h| cells.get(h.as_str()).map(|v| v.join(&sep)).unwrap_or_default())
        .collect()
}

/// Write all spilled records as one CSV file.
pub fn write_csv(
    path: &Path,
    spill: &mut Spill,
    seed: &[String],
    field_sep: char,
    multi_sep: char,
) -> Result<usize, SourceError> {
    let mut header = seed.to_vec();
    let mut seen: HashSet<String> = header.iter().cloned().collect();
    for item in spill.iter()? {
        for f in item?.record.fields() {
            if seen.insert(f.to_string()) {
                header.push(f.to_string());
            }
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(write_err(parent))?;
    }
    let f = File::create(path).map_err(write_err(path))?;
    let mut w = csv::WriterBuilder::new().delimiter(field_sep as u8).from_writer(BufWriter::new(f));
    let werr = |e: csv::Error| SourceError::WriteFailure {
        path: path.to_path_buf(),
        source: io::Error::other(e.to_string()),
    };
    w.write_record(&header).map_err(werr)?;
    let mut n = 0;
    for item in spill.iter()? {
        w.write_record(csv_row(&header, &item?.record, multi_sep)).map_err(werr)?;
        n += 1;
    }
    w.flush().map_err(write_err(path))?;
    Ok(n)
}
