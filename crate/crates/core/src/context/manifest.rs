use serde::{Deserialize, Serialize};

use super::segment::{Provenance, SegmentKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub segment_id: String,
    pub kind: SegmentKind,
    pub provenance: Provenance,
    pub score: f64,
    pub token_count: usize,
}

/// Event recorded against an assembly after selection, e.g. a refresh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestAnnotation {
    pub annotation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<String>,
}

/// One line of the serialized manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestLine {
    Row(ManifestRow),
    Annotation(ManifestAnnotation),
}

/// Rows in selection order (mandatory segments first, then optional picks),
/// one per segment of the assembly, plus annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<ManifestAnnotation>,
}

impl Manifest {
    pub fn annotate(&mut self, annotation: &str, segment_id: Option<&str>) {
        self.annotations.push(ManifestAnnotation {
            annotation: annotation.to_string(),
            segment_id: segment_id.map(str::to_string),
        });
    }

    pub fn row(&self, segment_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.segment_id == segment_id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("manifest rows serialize"));
            out.push('\n');
        }
        for note in &self.annotations {
            out.push_str(&serde_json::to_string(note).expect("annotations serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut manifest = Manifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                ManifestLine::Row(row) => manifest.rows.push(row),
                ManifestLine::Annotation(a) => manifest.annotations.push(a),
            }
        }
        Ok(manifest)
    }
}
