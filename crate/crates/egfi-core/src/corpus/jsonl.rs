//! JSONL persistence for pair instances: one record per line, UTF-8,
//! whole-file atomic writes (temp file + rename).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::PairInstance;
use crate::error::{Error, Result};

pub fn write_jsonl(path: &Path, instances: &[PairInstance]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
    ));
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for inst in instances {
            let line = serde_json::to_string(inst)
                .map_err(|e| Error::Validation(format!("serialize {}: {e}", inst.instance_id)))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PairInstance>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: PairInstance = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_pair_instances, Partition};

    fn sample_instances() -> Vec<PairInstance> {
        let record = crate::corpus::tests::simple_record();
        let mut v = make_pair_instances(&record, Partition::Train).unwrap();
        v.extend(make_pair_instances(&record, Partition::Dev).unwrap());
        v.extend(make_pair_instances(&record, Partition::Test).unwrap());
        v
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        let instances = sample_instances();
        write_jsonl(&path, &instances).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(instances, back);
    }

    #[test]
    fn empty_list_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_jsonl(&path, &[]).unwrap();
        assert!(read_jsonl(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_label_field_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let inst = &sample_instances()[0];
        let mut value: serde_json::Value = serde_json::to_value(inst).unwrap();
        value.as_object_mut().unwrap().remove("label");
        fs::write(&path, format!("{value}\n")).unwrap();
        let err = read_jsonl(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("label"), "{msg}");
    }

    #[test]
    fn schema_field_names_match_documented_layout() {
        let inst = &sample_instances()[0];
        let value = serde_json::to_value(inst).unwrap();
        let obj = value.as_object().unwrap();
        for key in [
            "instance_id", "sentence_id", "text", "enriched_text", "e1", "e2", "label", "partition",
        ] {
            assert!(obj.contains_key(key), "missing documented field {key}");
        }
        let e1 = obj["e1"].as_object().unwrap();
        for key in ["surface", "type", "start", "end"] {
            assert!(e1.contains_key(key), "missing documented e1 field {key}");
        }
        assert_eq!(obj["label"], "effect");
        assert_eq!(obj["partition"], "train");
    }
}
