use std::io::Read;

use atlas_core::grading::ScoringSpec;
use atlas_core::orchestrator::CompetitionMetadata;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Media type that marks an attachment as an entity manifest.
pub const MANIFEST_MEDIA_TYPE: &str = "application/x-entity-manifest";

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];
const TAR_MAGIC_OFFSET: usize = 257;

/// Structured goal. Every field is optional on the wire; what is present
/// decides the domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Goal {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Inline entity manifest text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units_per_meter: Option<f64>,
    /// Kept raw so a malformed spec still classifies and fails in the
    /// handler with a readable reason.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub competition: Option<CompetitionMetadata>,
}

impl Goal {
    fn has_question(&self) -> bool {
        self.question.as_deref().is_some_and(|q| !q.trim().is_empty())
    }

    pub fn scoring_spec(&self) -> Option<Result<ScoringSpec, String>> {
        self.scoring
            .clone()
            .map(|v| serde_json::from_value(v).map_err(|e| e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Attachment {
    pub name: String,
    #[serde(default)]
    pub media_type: String,
    #[serde(with = "b64")]
    pub data: Vec<u8>,
}

impl Attachment {
    pub fn new(name: impl Into<String>, media_type: impl Into<String>, data: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            media_type: media_type.into(),
            data,
        }
    }

    /// Gzip magic bytes followed by a tar header once inflated. The
    /// filename and declared media type are ignored.
    pub fn is_tar_gz(&self) -> bool {
        if !self.data.starts_with(&GZIP_MAGIC) {
            return false;
        }
        let mut head = [0u8; TAR_MAGIC_OFFSET + 5];
        let mut dec = flate2::read::GzDecoder::new(self.data.as_slice());
        let mut filled = 0;
        while filled < head.len() {
            match dec.read(&mut head[filled..]) {
                Ok(0) | Err(_) => return false,
                Ok(n) => filled += n,
            }
        }
        &head[TAR_MAGIC_OFFSET..] == b"ustar"
    }

    pub fn is_manifest(&self) -> bool {
        self.media_type.eq_ignore_ascii_case(MANIFEST_MEDIA_TYPE) || self.name.ends_with(".manifest")
    }
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(data: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(data))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// A submitted task. `id` is assigned by the server; whatever id the client
/// sent is kept in `client_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskEnvelope {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Goal>,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("envelope has neither a goal nor attachments")]
pub struct EmptyEnvelope;

impl TaskEnvelope {
    pub fn new(id: impl Into<String>, goal: Option<Goal>, attachments: Vec<Attachment>) -> Result<Self, EmptyEnvelope> {
        if goal.is_none() && attachments.is_empty() {
            return Err(EmptyEnvelope);
        }
        Ok(Self {
            id: id.into(),
            client_id: None,
            goal,
            attachments,
        })
    }

    pub fn archive(&self) -> Option<&Attachment> {
        self.attachments.iter().find(|a| a.is_tar_gz())
    }

    /// Manifest text: inline in the goal, else the first manifest attachment.
    pub fn manifest_text(&self) -> Option<String> {
        if let Some(m) = self.goal.as_ref().and_then(|g| g.manifest.clone()) {
            return Some(m);
        }
        self.attachments
            .iter()
            .find(|a| a.is_manifest())
            .map(|a| String::from_utf8_lossy(&a.data).into_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainClass {
    Fieldwork,
    Mle,
    Unknown,
}

impl DomainClass {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fieldwork => "fieldwork",
            Self::Mle => "mle",
            Self::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for DomainClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic and model-free. The archive rule is checked first, so an
/// envelope that satisfies both rules is an ML task.
pub fn classify_domain(env: &TaskEnvelope) -> DomainClass {
    if env.archive().is_some() {
        return DomainClass::Mle;
    }
    match &env.goal {
        Some(g) if g.has_question() && g.scoring.is_some() => DomainClass::Fieldwork,
        _ => DomainClass::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn tar_gz(files: &[(&str, &[u8])]) -> Vec<u8> {
        let enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        let mut b = tar::Builder::new(enc);
        for (name, body) in files {
            let mut h = tar::Header::new_gnu();
            h.set_size(body.len() as u64);
            h.set_mode(0o644);
            h.set_cksum();
            b.append_data(&mut h, name, *body).unwrap();
        }
        b.into_inner().unwrap().finish().unwrap()
    }

    fn gz(body: &[u8]) -> Vec<u8> {
        use std::io::Write;
        let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        e.write_all(body).unwrap();
        e.finish().unwrap()
    }

    fn fieldwork_goal() -> Goal {
        Goal {
            question: Some("How many pallets?".into()),
            scoring: Some(json!({"function": "numerical_match", "gold": 2})),
            ..Goal::default()
        }
    }

    #[test]
    fn archive_detected_by_content_not_name() {
        let env = TaskEnvelope::new("t", None, vec![Attachment::new("notes.txt", "text/plain", tar_gz(&[("a.csv", b"x\n")]))]).unwrap();
        assert_eq!(classify_domain(&env), DomainClass::Mle);

        let fake = TaskEnvelope::new("t", None, vec![Attachment::new("data.tar.gz", "application/gzip", b"not gzip".to_vec())]).unwrap();
        assert_eq!(classify_domain(&fake), DomainClass::Unknown);

        // gzip but not a tar inside
        let plain_gz = TaskEnvelope::new("t", None, vec![Attachment::new("d.tar.gz", "application/gzip", gz(&[b'a'; 600]))]).unwrap();
        assert_eq!(classify_domain(&plain_gz), DomainClass::Unknown);
    }

    #[test]
    fn goal_rules_and_precedence() {
        let fw = TaskEnvelope::new("t", Some(fieldwork_goal()), vec![]).unwrap();
        assert_eq!(classify_domain(&fw), DomainClass::Fieldwork);

        let both = TaskEnvelope::new("t", Some(fieldwork_goal()), vec![Attachment::new("d", "", tar_gz(&[("x", b"1")]))]).unwrap();
        assert_eq!(classify_domain(&both), DomainClass::Mle);

        let no_scoring = Goal {
            scoring: None,
            ..fieldwork_goal()
        };
        let env = TaskEnvelope::new("t", Some(no_scoring), vec![]).unwrap();
        assert_eq!(classify_domain(&env), DomainClass::Unknown);

        let text_only = TaskEnvelope::new("t", None, vec![Attachment::new("a.txt", "text/plain", b"hello".to_vec())]).unwrap();
        assert_eq!(classify_domain(&text_only), DomainClass::Unknown);
        assert!(TaskEnvelope::new("t", None, vec![]).is_err());
    }

    #[test]
    fn attachments_round_trip_as_base64() {
        let a = Attachment::new("m.manifest", "", b"entities:\n".to_vec());
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v, json!({"name": "m.manifest", "mediaType": "", "data": "ZW50aXRpZXM6Cg=="}));
        assert_eq!(serde_json::from_value::<Attachment>(v).unwrap(), a);
        assert!(a.is_manifest());
    }
}
