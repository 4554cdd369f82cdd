//! Assessment datasets: one JSON record per file plus a `manifest.json`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;
/// Tag carried by records whose grades are placeholders.
pub const NON_AUTHORITATIVE_TAG: &str = "non-authoritative";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("record `{id}`: field `{field}` {problem}")]
    Invalid {
        id: String,
        field: &'static str,
        problem: String,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("manifest lists `{0}` but no record file has that id")]
    MissingRecord(String),
    #[error("record `{0}` is not listed in the manifest")]
    Unlisted(String),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("record `{id}` has no `{which}` grade")]
    MissingGrade { id: String, which: GradeSource },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeSource {
    GraderA,
    GraderB,
    Reconciled,
}

impl fmt::Display for GradeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradeSource::GraderA => "grader_a",
            GradeSource::GraderB => "grader_b",
            GradeSource::Reconciled => "reconciled",
        })
    }
}

impl std::str::FromStr for GradeSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grader_a" => Ok(GradeSource::GraderA),
            "grader_b" => Ok(GradeSource::GraderB),
            "reconciled" => Ok(GradeSource::Reconciled),
            other => Err(format!("unknown grade source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grader_a: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grader_b: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconciled: Option<i64>,
}

impl GradeSet {
    pub fn get(&self, which: GradeSource) -> Option<i64> {
        match which {
            GradeSource::GraderA => self.grader_a,
            GradeSource::GraderB => self.grader_b,
            GradeSource::Reconciled => self.reconciled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub submission: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_feedback: Option<String>,
    #[serde(default)]
    pub grades: GradeSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl AssessmentRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |field, problem: &str| DatasetError::Invalid {
            id: self.id.clone(),
            field,
            problem: problem.to_string(),
        };
        if !is_valid_id(&self.id) {
            return Err(invalid(
                "id",
                "must be non-empty and use only letters, digits, `-`, `_` or `.`",
            ));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("question", "is empty"));
        }
        if self.submission.trim().is_empty() {
            return Err(invalid("submission", "is empty"));
        }
        for (field, grade) in [
            ("grades.grader_a", self.grades.grader_a),
            ("grades.grader_b", self.grades.grader_b),
            ("grades.reconciled", self.grades.reconciled),
        ] {
            if let Some(g) = grade {
                if !(0..=5).contains(&g) {
                    return Err(invalid(field, &format!("is {g}, outside 0..=5")));
                }
            }
        }
        Ok(())
    }

    pub fn is_authoritative(&self) -> bool {
        !self.tags.iter().any(|t| t == NON_AUTHORITATIVE_TAG)
    }
}

/// Ids double as file names, so they are restricted to a portable alphabet.
fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub ids: Vec<String>,
}

fn malformed(path: &Path, message: impl fmt::Display) -> DatasetError {
    DatasetError::Malformed {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse one record, reporting grades that are not integers by field name.
pub fn parse_record(raw: &str, path: &Path) -> Result<AssessmentRecord, DatasetError> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| malformed(path, e))?;
    let id = value
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| malformed(path, "missing string field `id`"))?
        .to_string();
    if let Some(grades) = value.get("grades").and_then(|g| g.as_object()) {
        for (name, grade) in grades {
            if !grade.is_null() && !grade.is_i64() {
                return Err(DatasetError::Invalid {
                    id,
                    field: match name.as_str() {
                        "grader_a" => "grades.grader_a",
                        "grader_b" => "grades.grader_b",
                        "reconciled" => "grades.reconciled",
                        _ => "grades",
                    },
                    problem: format!("is {grade}, not an integer"),
                });
            }
        }
    }
    let record: AssessmentRecord = serde_json::from_value(value).map_err(|e| DatasetError::Invalid {
        id: id.clone(),
        field: "record",
        problem: e.to_string(),
    })?;
    record.validate()?;
    Ok(record)
}

/// Load every `*.json` record in `dir` (the manifest excluded), sorted by id.
/// When a manifest is present its id list must match the records exactly.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<AssessmentRecord>, DatasetError> {
    let dir = dir.as_ref();
    let mut records = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_record = path.extension().is_some_and(|e| e == "json")
            && path.file_name().is_some_and(|n| n != MANIFEST_FILE);
        if !is_record {
            continue;
        }
        let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
        records.push(parse_record(&raw, &path)?);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(dup) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(DatasetError::DuplicateId(dup[0].id.clone()));
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| malformed(&manifest_path, e))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersion(manifest.schema_version));
        }
        let listed: BTreeSet<&str> = manifest.ids.iter().map(String::as_str).collect();
        if listed.len() != manifest.ids.len() {
            let mut seen = BTreeSet::new();
            let dup = manifest.ids.iter().find(|id| !seen.insert(id.as_str())).unwrap();
            return Err(DatasetError::DuplicateId(dup.clone()));
        }
        let present: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        if let Some(id) = listed.difference(&present).next() {
            return Err(DatasetError::MissingRecord(id.to_string()));
        }
        if let Some(id) = present.difference(&listed).next() {
            return Err(DatasetError::Unlisted(id.to_string()));
        }
    }
    Ok(records)
}

/// Write `records` as `<id>.json` files plus a manifest. Existing record files
/// in `dir` that are not part of `records` are left alone.
pub fn write_dataset(dir: impl AsRef<Path>, records: &[AssessmentRecord]) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    let mut ids = BTreeSet::new();
    for record in records {
        record.validate()?;
        if !ids.insert(record.id.as_str()) {
            return Err(DatasetError::DuplicateId(record.id.clone()));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for record in records {
        let path = dir.join(format!("{}.json", record.id));
        let body = serde_json::to_string_pretty(record).expect("record serialization") + "\n";
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        ids: ids.into_iter().map(str::to_string).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serialization") + "\n";
    fs::write(&path, body).map_err(io_err(&path))
}

pub fn grade_vector(records: &[AssessmentRecord], which: GradeSource) -> Result<Vec<i64>, DatasetError> {
    records
        .iter()
        .map(|r| {
            r.grades.get(which).ok_or_else(|| DatasetError::MissingGrade {
                id: r.id.clone(),
                which,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, reconciled: Option<i64>) -> AssessmentRecord {
        AssessmentRecord {
            id: id.to_string(),
            question: "Show that 2+2=4.".into(),
            context: None,
            submission: "It follows from the definition.".into(),
            human_feedback: None,
            grades: GradeSet {
                grader_a: Some(4),
                grader_b: Some(5),
                reconciled,
            },
            tags: vec![],
        }
    }

    fn small_fixture() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/datasets/small")
    }

    #[test]
    fn loads_fixture_in_id_order() {
        let records = load_dataset(small_fixture()).unwrap();
        let ids: Vec<_> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["q01", "q02", "q03"]);
    }

    #[test]
    fn empty_directory_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_grade_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("bad.json"),
            r#"{"id": "bad", "question": "q", "submission": "s", "grades": {"reconciled": 6}}"#,
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid { ref id, field: "grades.reconciled", .. } if id == "bad"));
    }

    #[test]
    fn non_integer_grade_is_rejected() {
        let err = parse_record(
            r#"{"id": "x", "question": "q", "submission": "s", "grades": {"grader_a": 2.5}}"#,
            Path::new("x.json"),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Invalid { field: "grades.grader_a", .. }));
    }

    #[test]
    fn missing_required_field_is_rejected() {
        let err = parse_record(r#"{"id": "x", "question": "q"}"#, Path::new("x.json")).unwrap_err();
        assert!(err.to_string().contains("submission"), "{err}");
        let err = parse_record(r#"{"id": "x", "question": " ", "submission": "s"}"#, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid { field: "question", .. }));
    }

    #[test]
    fn duplicate_ids_across_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id": "same", "question": "q", "submission": "s"}"#;
        fs::write(dir.path().join("a.json"), body).unwrap();
        fs::write(dir.path().join("b.json"), body).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::DuplicateId(id)) if id == "same"));
    }

    #[test]
    fn manifest_must_match_records() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[record("a", Some(1))]).unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"schema_version": 1, "ids": ["a", "b"]}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::MissingRecord(id)) if id == "b"));
        fs::write(dir.path().join(MANIFEST_FILE), r#"{"schema_version": 9, "ids": ["a"]}"#).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::SchemaVersion(9))));
    }

    #[test]
    fn grade_vector_requires_every_grade() {
        let records = vec![record("a", Some(5))];
        assert_eq!(grade_vector(&records, GradeSource::Reconciled).unwrap(), [5]);
        let records = vec![record("a", Some(5)), record("b", None)];
        let err = grade_vector(&records, GradeSource::Reconciled).unwrap_err();
        assert!(matches!(err, DatasetError::MissingGrade { ref id, .. } if id == "b"));
    }

    fn arb_record() -> impl Strategy<Value = AssessmentRecord> {
        let grade = prop::option::of(0i64..=5);
        (
            "[a-z0-9_-]{1,12}",
            "\\PC{1,40}",
            prop::option::of("\\PC{0,20}"),
            "\\PC{1,40}",
            prop::option::of("\\PC{0,40}"),
            (grade.clone(), grade.clone(), grade),
            prop::collection::vec("[a-z]{1,8}", 0..3),
        )
            .prop_filter("non-blank text", |(_, q, _, s, ..)| !q.trim().is_empty() && !s.trim().is_empty())
            .prop_map(|(id, question, context, submission, human_feedback, (a, b, r), tags)| AssessmentRecord {
                id,
                question,
                context,
                submission,
                human_feedback,
                grades: GradeSet {
                    grader_a: a,
                    grader_b: b,
                    reconciled: r,
                },
                tags,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn write_then_load_is_identity(records in prop::collection::vec(arb_record(), 0..8)) {
            let mut records = records;
            records.sort_by(|a, b| a.id.cmp(&b.id));
            records.dedup_by(|a, b| a.id == b.id);
            let dir = tempfile::tempdir().unwrap();
            write_dataset(dir.path(), &records).unwrap();
            prop_assert_eq!(load_dataset(dir.path()).unwrap(), records);
        }

        #[test]
        fn grade_vectors_are_aligned(records in prop::collection::vec(arb_record(), 1..8)) {
            let mut records = records;
            for r in &mut records {
                r.grades.grader_a.get_or_insert(0);
                r.grades.grader_b.get_or_insert(0);
            }
            let a = grade_vector(&records, GradeSource::GraderA).unwrap();
            let b = grade_vector(&records, GradeSource::GraderB).unwrap();
            prop_assert_eq!(a.len(), records.len());
            prop_assert_eq!(b.len(), records.len());
            for (i, r) in records.iter().enumerate() {
                prop_assert_eq!(Some(a[i]), r.grades.grader_a);
                prop_assert_eq!(Some(b[i]), r.grades.grader_b);
            }
        }
    }
}
