use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use adct_core::record::MetadataRecord;
use adct_core::sources::{
    item_name, read_csv, read_folder, read_tar, write_csv, Asset, AssetData, ItemPackage, ItemWriter, SourceError, Spill,
    SpilledItem,
};
use proptest::prelude::*;

fn rec(pairs: &[(&str, &str)]) -> MetadataRecord {
    MetadataRecord::from_pairs(pairs.iter().copied())
}

fn write_items(target: &Path, records: &[MetadataRecord]) {
    let mut w = ItemWriter::create(target).unwrap();
    let mut sorted: Vec<_> = records.to_vec();
    sorted.sort_by_key(|r| item_name(r.handle().unwrap()));
    for record in sorted {
        let name = item_name(record.handle().unwrap());
        w.write(&SpilledItem { name, record, assets: vec![] }).unwrap();
    }
    w.finish().unwrap();
}

fn collect(iter: impl Iterator<Item = Result<ItemPackage, SourceError>>) -> BTreeMap<String, MetadataRecord> {
    iter.map(|p| {
        let p = p.unwrap();
        (p.handle, p.metadata)
    })
    .collect()
}

fn asset_bytes(a: &Asset) -> Vec<u8> {
    match &a.data {
        AssetData::File(p) => fs::read(p).unwrap(),
        AssetData::Bytes(b) => b.clone(),
    }
}

#[test]
fn folder_items_and_assets() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("src");
    fs::create_dir_all(root.join("a_1/assets")).unwrap();
    fs::write(root.join("a_1/metadata.json"), r#"{"Handle_ID":["a/1"],"dc.title":["T"]}"#).unwrap();
    fs::write(root.join("a_1/assets/page.txt"), "p").unwrap();
    fs::create_dir_all(root.join("nested/a_2")).unwrap();
    fs::write(root.join("nested/a_2/metadata.json"), r#"{"Handle_ID":["a/2"]}"#).unwrap();

    let got: Vec<_> = read_folder(&root, None).unwrap().map(Result::unwrap).collect();
    assert_eq!(got.len(), 2);
    let first = got.iter().find(|p| p.handle == "a/1").unwrap();
    assert_eq!(first.metadata.first_value("dc.title"), Some("T"));
    assert_eq!(first.assets.len(), 1);
    assert_eq!(asset_bytes(&first.assets[0]), b"p");

    let only: Vec<_> = read_folder(&root, Some("nested")).unwrap().map(Result::unwrap).collect();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0].handle, "a/2");
}

#[test]
fn empty_read_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let r = read_folder(dir.path(), Some("empty")).map(|it| it.count());
    assert!(matches!(r, Err(SourceError::EmptyDataPath(_))), "{r:?}");
}

#[test]
fn unsorted_tar_is_still_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.tar");
    let mut b = tar::Builder::new(fs::File::create(&path).unwrap());
    let mut add = |name: &str, body: &[u8]| {
        let mut h = tar::Header::new_gnu();
        h.set_size(body.len() as u64);
        h.set_mode(0o644);
        h.set_cksum();
        b.append_data(&mut h, name, body).unwrap();
    };
    add("z_1/metadata.json", br#"{"Handle_ID":["z/1"]}"#);
    add("a_1/metadata.json", br#"{"Handle_ID":["a/1"]}"#);
    add("z_1/assets/late.bin", b"late");
    b.finish().unwrap();
    drop(b);

    let got: Vec<_> = read_tar(&path, None).unwrap().map(Result::unwrap).collect();
    let handles: Vec<_> = got.iter().map(|p| p.handle.as_str()).collect();
    assert_eq!(handles.len(), 2);
    let z = got.iter().find(|p| p.handle == "z/1").unwrap();
    assert_eq!(z.assets.len(), 1);
    assert_eq!(asset_bytes(&z.assets[0]), b"late");
}

#[test]
fn csv_splits_multi_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.csv");
    fs::write(&path, "\u{feff}Handle_ID,dc.subject\nc/1,a;;b\nc/2,\n").unwrap();
    let (header, it) = read_csv(&path, ',', ';', None).unwrap();
    assert_eq!(header, ["Handle_ID", "dc.subject"]);
    let got = collect(it);
    assert_eq!(got["c/1"], rec(&[("Handle_ID", "c/1"), ("dc.subject", "a"), ("dc.subject", "b")]));
    assert_eq!(got["c/2"], rec(&[("Handle_ID", "c/2")]));
}

#[test]
fn csv_without_handle_needs_a_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.csv");
    fs::write(&path, "dc.title\nOne\n").unwrap();
    assert!(matches!(read_csv(&path, ',', ';', None), Err(SourceError::MissingHandleNoFormat(_))));
    let (_, it) = read_csv(&path, ',', ';', Some("col/${seq}")).unwrap();
    let got = collect(it);
    assert_eq!(got["col/1"].first_value("dc.title"), Some("One"));
}

fn arb_records() -> impl Strategy<Value = Vec<MetadataRecord>> {
    let field = prop::sample::select(vec!["dc.title", "dc.subject", "dc.date", "lrmi.type"]);
    let value = "[a-zA-Z0-9 ,.\"'é]{1,8}";
    prop::collection::vec(prop::collection::vec((field, value), 0..6), 1..6).prop_map(|recs| {
        recs.into_iter()
            .enumerate()
            .map(|(i, pairs)| {
                let mut r = MetadataRecord::new();
                r.push("Handle_ID", format!("p/{i}"));
                // metadata.json groups values by field
                let mut order: Vec<&str> = Vec::new();
                for (f, _) in &pairs {
                    if !order.contains(f) {
                        order.push(f);
                    }
                }
                for f in order {
                    for (_, v) in pairs.iter().filter(|(pf, _)| *pf == f) {
                        r.push(f, v.clone());
                    }
                }
                r
            })
            .collect()
    })
}

/// CSV flattens a record to one cell per field.
fn grouped(r: &MetadataRecord) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (f, v) in &r.entries {
        out.entry(f.clone()).or_default().push(v.clone());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn folder_round_trip(records in arb_records()) {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        write_items(&out, &records);
        let got = collect(read_folder(&out, None).unwrap());
        let want: BTreeMap<_, _> = records.iter().map(|r| (r.handle().unwrap().to_string(), r.clone())).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn tar_round_trip(records in arb_records()) {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.tar.gz");
        write_items(&out, &records);
        let got = collect(read_tar(&out, None).unwrap());
        let want: BTreeMap<_, _> = records.iter().map(|r| (r.handle().unwrap().to_string(), r.clone())).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn csv_round_trip(records in arb_records()) {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.csv");
        let mut spill = Spill::new().unwrap();
        for r in &records {
            spill.push(r, &[]).unwrap();
        }
        let n = write_csv(&out, &mut spill, &["Handle_ID".to_string()], ',', ';').unwrap();
        prop_assert_eq!(n, records.len());
        let (_, it) = read_csv(&out, ',', ';', None).unwrap();
        let got: BTreeMap<_, _> = collect(it).into_iter().map(|(h, r)| (h, grouped(&r))).collect();
        let want: BTreeMap<_, _> = records.iter().map(|r| (r.handle().unwrap().to_string(), grouped(r))).collect();
        prop_assert_eq!(got, want);
    }
}
