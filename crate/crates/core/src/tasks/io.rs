use std::path::Path;

use super::{Label, TaskKind};
use crate::error::{Error, Result};

/// One row of an instance audit file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub session_id: String,
    pub kind: TaskKind,
    pub decision_frame: usize,
    pub floor_holder: usize,
    pub label: Label,
}

const HEADER: [&str; 5] = ["session_id", "kind", "decision_frame", "floor_holder", "label"];

pub fn write_instances(path: &Path, records: &[InstanceRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    w.write_record(HEADER).map_err(wrap)?;
    for r in records {
        w.write_record([
            r.session_id.as_str(),
            r.kind.name(),
            &r.decision_frame.to_string(),
            &r.floor_holder.to_string(),
            r.label.name(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_instances(path: &Path) -> Result<Vec<InstanceRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().ne(HEADER) {
        return Err(Error::data(format!(
            "{}: expected header {}",
            path.display(),
            HEADER.join("\t")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let bad = |what: &str| Error::data(format!("{}:{line}: {what}", path.display()));
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        let kind = TaskKind::parse(&rec[1]).ok_or_else(|| bad(&format!("unknown kind {:?}", &rec[1])))?;
        let decision_frame = rec[2]
            .parse()
            .map_err(|_| bad(&format!("bad decision_frame {:?}", &rec[2])))?;
        let floor_holder: usize = rec[3]
            .parse()
            .ok()
            .filter(|&s| s < 2)
            .ok_or_else(|| bad(&format!("bad floor_holder {:?}", &rec[3])))?;
        let label = Label::parse(&rec[4]).ok_or_else(|| bad(&format!("unknown label {:?}", &rec[4])))?;
        let consistent = match kind {
            TaskKind::Onset => matches!(label, Label::Short | Label::Long),
            _ => matches!(label, Label::Hold | Label::Shift),
        };
        if !consistent {
            return Err(bad(&format!("label {} does not belong to {}", label.name(), kind.name())));
        }
        out.push(InstanceRecord {
            session_id: rec[0].to_string(),
            kind,
            decision_frame,
            floor_holder,
            label,
        });
    }
    Ok(out)
}
