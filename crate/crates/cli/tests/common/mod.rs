#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

pub type Rec = Vec<(String, String)>;

pub fn rec(pairs: &[(&str, &str)]) -> Rec {
    pairs.iter().map(|(f, v)| (f.to_string(), v.to_string())).collect()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Expected `metadata.json` text: fields in first-appearance order, two
/// space indent, trailing newline.
pub fn render(record: &Rec) -> String {
    let mut order: Vec<&str> = Vec::new();
    let mut values: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (f, v) in record {
        if !values.contains_key(f.as_str()) {
            order.push(f);
        }
        values.entry(f).or_default().push(v);
    }
    if order.is_empty() {
        return "{}\n".into();
    }
    let mut out = String::from("{\n");
    for (i, f) in order.iter().enumerate() {
        out.push_str(&format!("  {}: [\n", escape(f)));
        let vs = &values[f];
        for (j, v) in vs.iter().enumerate() {
            out.push_str(&format!("    {}{}\n", escape(v), if j + 1 < vs.len() { "," } else { "" }));
        }
        out.push_str(if i + 1 < order.len() { "  ],\n" } else { "  ]\n" });
    }
    out.push_str("}\n");
    out
}

pub fn item_dir(handle: &str) -> String {
    handle.replace(['/', '\\'], "_")
}

pub fn handle_of(record: &Rec) -> &str {
    &record.iter().find(|(f, _)| f == "Handle_ID").expect("fixture has a handle").1
}

pub struct Bundle {
    pub dir: TempDir,
}

pub struct RunResult {
    pub code: i32,
    pub stderr: String,
}

impl Bundle {
    pub fn new() -> Bundle {
        Bundle { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) {
        let p = self.path(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, contents).unwrap();
    }

    /// One item directory per record, named after its handle.
    pub fn sip_folder(&self, rel: &str, records: &[Rec]) {
        for r in records {
            self.write(&format!("{rel}/{}/metadata.json", item_dir(handle_of(r))), render(r));
        }
    }

    pub fn command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_adct"));
        cmd.args(args).current_dir(self.dir.path());
        cmd
    }

    pub fn run_with_input(&self, args: &[&str], stdin: &str) -> RunResult {
        let mut child = self
            .command(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
        let out: Output = child.wait_with_output().unwrap();
        RunResult {
            code: out.status.code().unwrap_or(-1),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        }
    }

    /// Run non-interactively.
    pub fn run(&self, flag: &str, runfile: &str) -> RunResult {
        self.run_with_input(&[flag, runfile, "--yes", "--quiet"], "")
    }

    /// `item -> metadata.json` of a directory target.
    pub fn items(&self, rel: &str) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let Ok(entries) = fs::read_dir(self.path(rel)) else { return out };
        for e in entries {
            let e = e.unwrap();
            let m = e.path().join("metadata.json");
            if m.is_file() {
                out.insert(e.file_name().to_string_lossy().into_owned(), fs::read_to_string(m).unwrap());
            }
        }
        out
    }
}

/// Every file below `root` except the report tree, with its bytes.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel == "data-report" {
                continue;
            }
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.is_dir() {
        walk(root, root, &mut out);
    }
    out
}

/// Compare produced items against expected records, byte for byte.
pub fn compare_items(actual: &BTreeMap<String, String>, expected: &[Rec]) -> Result<(), String> {
    let want: BTreeMap<String, String> = expected.iter().map(|r| (item_dir(handle_of(r)), render(r))).collect();
    let a: Vec<&String> = actual.keys().collect();
    let w: Vec<&String> = want.keys().collect();
    if a != w {
        return Err(format!("item set differs: got {a:?}, want {w:?}"));
    }
    for (k, v) in &want {
        if &actual[k] != v {
            return Err(format!("{k}: got\n{}\nwant\n{v}", actual[k]));
        }
    }
    Ok(())
}
