use std::path::Path;
use std::process::{Command, Output};

fn debris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debris")).args(args).output().expect("spawn debris")
}

fn fixtures(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("data");
    let o = debris(&["write-fixtures", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixtures(dir.path());
    let scenario = data.join("v-channel");
    let hold = scenario.join("hold.jsonl");
    let (s, h) = (scenario.to_str().unwrap(), hold.to_str().unwrap());

    let ok = debris(&["replay", "--scenario", s, "--commands", h, "--until", "0.2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&ok.stdout).expect("json summary");
    let hash = summary["state_hash"].as_str().unwrap().to_string();

    let same = debris(&["replay", "--scenario", s, "--commands", h, "--until", "0.2", "--expect-hash", &hash]);
    assert_eq!(same.status.code(), Some(0));
    let wrong = debris(&["replay", "--scenario", s, "--commands", h, "--until", "0.2", "--expect-hash", "00"]);
    assert_eq!(wrong.status.code(), Some(1));

    let missing = debris(&["replay", "--scenario", "/nonexistent/s.json", "--commands", h]);
    assert_eq!(missing.status.code(), Some(2));
    let no_args = debris(&["replay"]);
    assert_eq!(no_args.status.code(), Some(2));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    let bad = debris(&["replay", "--scenario", broken.to_str().unwrap(), "--commands", h]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("debris: "));

    let bad_log = dir.path().join("bad.jsonl");
    std::fs::write(&bad_log, "{\"seq\":1,\"t\":0,\"type\":\"start\"}\n{\"seq\":1,\"t\":0,\"type\":\"pause\"}\n")
        .unwrap();
    let dup = debris(&["replay", "--scenario", s, "--commands", bad_log.to_str().unwrap()]);
    assert_eq!(dup.status.code(), Some(2));

    let bad_pace = debris(&["serve", "--scenario", s, "--pace", "-1"]);
    assert_eq!(bad_pace.status.code(), Some(2));
}

#[test]
fn fabricate_writes_tiles_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixtures(dir.path());
    let out = dir.path().join("tiles");
    let island = data.join("island");
    let o = debris(&[
        "fabricate",
        "--scenario",
        island.to_str().unwrap(),
        "--rows",
        "2",
        "--cols",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut stls: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "stl"))
        .collect();
    stls.sort();
    assert_eq!(stls.len(), 4);
    for p in &stls {
        let bytes = std::fs::read(p).unwrap();
        let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 84 + 50 * n);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.is_object());
}

#[test]
fn export_layers_and_compare_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixtures(dir.path());
    let s = data.join("v-channel");
    let hold = s.join("hold.jsonl");
    let layers = dir.path().join("layers");
    let o = debris(&[
        "export-layers",
        "--scenario",
        s.to_str().unwrap(),
        "--commands",
        hold.to_str().unwrap(),
        "--until",
        "1.0",
        "--out",
        layers.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_dir(&layers).unwrap().count() >= 5);

    let cmp = dir.path().join("cmp");
    let o = debris(&[
        "compare",
        "--scenario",
        s.to_str().unwrap(),
        "--commands",
        hold.to_str().unwrap(),
        "--until",
        "1.0",
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["area_delta"].is_number());
}

#[test]
fn shipped_data_matches_the_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = fixtures(dir.path());
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let files = |root: &Path| -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        out.sort();
        out
    };
    let want = files(&fresh);
    assert_eq!(files(&shipped), want, "regenerate with `debris write-fixtures --out data`");
    for f in &want {
        assert!(
            std::fs::read(fresh.join(f)).unwrap() == std::fs::read(shipped.join(f)).unwrap(),
            "{} is stale",
            f.display()
        );
    }
}
