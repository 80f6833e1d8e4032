use serde::{Deserialize, Serialize};

use super::VlmError;
use crate::segmenter::{Decomposition, DecompositionSource, InteractionPhase, PhaseKind};

/// One entry of the phase response schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub start: i64,
    pub end: i64,
    #[serde(default)]
    pub reason: String,
}

/// Returns the contents of the first markdown code fence, or the whole body.
fn strip_fence(body: &str) -> &str {
    let trimmed = body.trim();
    let Some(open) = trimmed.find("```") else {
        return trimmed;
    };
    let rest = &trimmed[open + 3..];
    let rest = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    match rest.rfind("```") {
        Some(end) => rest[..end].trim(),
        None => rest.trim(),
    }
}

/// Parses and validates a phase response against a trajectory of `trajectory_len` frames.
///
/// In lenient mode a gap of exactly one frame between consecutive phases is
/// closed by extending the earlier phase; every other violation is an error.
pub fn parse_response(
    body: &[u8],
    trajectory_len: usize,
    lenient: bool,
) -> Result<Decomposition, VlmError> {
    let text = std::str::from_utf8(body).map_err(|e| VlmError::MalformedJson(e.to_string()))?;
    let records: Vec<StageRecord> =
        serde_json::from_str(strip_fence(text)).map_err(|e| VlmError::MalformedJson(e.to_string()))?;
    validate_records(&records, trajectory_len, lenient)
}

pub fn validate_records(
    records: &[StageRecord],
    trajectory_len: usize,
    lenient: bool,
) -> Result<Decomposition, VlmError> {
    if records.is_empty() || trajectory_len == 0 {
        return Err(VlmError::RangeMismatch);
    }
    let last_frame = trajectory_len as i64 - 1;
    let mut phases: Vec<InteractionPhase> = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        let kind = PhaseKind::from_stage_name(rec.stage.trim())
            .ok_or_else(|| VlmError::UnknownStageName { index: k, name: rec.stage.clone() })?;
        if kind != PhaseKind::at_cycle_position(k) {
            return Err(VlmError::CycleOrder(k));
        }
        if rec.start > rec.end {
            return Err(VlmError::InvertedRange(k));
        }
        if rec.start < 0 || rec.end > last_frame {
            return Err(VlmError::RangeMismatch);
        }
        match phases.last_mut() {
            None if rec.start != 0 => return Err(VlmError::RangeMismatch),
            None => {}
            Some(prev) => {
                let prev_end = prev.end as i64;
                if rec.start <= prev_end {
                    return Err(VlmError::Overlap(k));
                }
                if rec.start > prev_end + 1 {
                    if lenient && rec.start == prev_end + 2 {
                        prev.end += 1;
                    } else {
                        return Err(VlmError::Gap(k));
                    }
                }
            }
        }
        phases.push(InteractionPhase::new(kind, rec.start as u32, rec.end as u32));
    }
    if phases.last().map(|p| p.end as i64) != Some(last_frame) {
        return Err(VlmError::RangeMismatch);
    }
    if phases.len() % 3 != 0 {
        return Err(VlmError::IncompleteCycle(phases.len()));
    }
    Ok(Decomposition {
        phases,
        source: DecompositionSource::Vlm,
    })
}

/// Converts a decomposition into schema records.
pub fn to_stage_records(d: &Decomposition) -> Vec<StageRecord> {
    let reason = match d.source {
        DecompositionSource::RuleBased => "rule-based",
        DecompositionSource::Vlm => "vlm",
    };
    d.phases
        .iter()
        .map(|p| StageRecord {
            stage: p.kind.stage_name().to_string(),
            start: p.start as i64,
            end: p.end as i64,
            reason: reason.to_string(),
        })
        .collect()
}

pub fn to_response_json(d: &Decomposition) -> String {
    serde_json::to_string_pretty(&to_stage_records(d)).expect("records serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = include_str!("../../testdata/phase_response.json");

    fn rec(stage: &str, start: i64, end: i64) -> StageRecord {
        StageRecord { stage: stage.into(), start, end, reason: String::new() }
    }

    fn body(records: &[StageRecord]) -> Vec<u8> {
        serde_json::to_vec(records).unwrap()
    }

    #[test]
    fn reference_response_parses_into_six_phases() {
        let d = parse_response(EXAMPLE.as_bytes(), 61, false).unwrap();
        let got: Vec<(PhaseKind, u32, u32)> = d.phases.iter().map(|p| (p.kind, p.start, p.end)).collect();
        use PhaseKind::*;
        assert_eq!(
            got,
            vec![
                (PreContact, 0, 14),
                (Grasping, 15, 17),
                (PostContact, 18, 40),
                (PreContact, 41, 45),
                (Grasping, 46, 48),
                (PostContact, 49, 60),
            ]
        );
        assert_eq!(d.source, DecompositionSource::Vlm);
    }

    #[test]
    fn fenced_block_is_accepted() {
        let fenced = format!("Here you go:\n```json\n{EXAMPLE}\n```\nDone.");
        assert_eq!(parse_response(fenced.as_bytes(), 61, false).unwrap().phases.len(), 6);
        let fenced = format!("```json\n{EXAMPLE}\n```");
        assert_eq!(parse_response(fenced.as_bytes(), 61, false).unwrap().phases.len(), 6);
        let bare = format!("```\n{EXAMPLE}```");
        assert_eq!(parse_response(bare.as_bytes(), 61, false).unwrap().phases.len(), 6);
    }

    #[test]
    fn overlap_is_reported_at_second_record() {
        let b = body(&[rec("pre-contact", 0, 10), rec("grasping", 8, 20)]);
        assert_eq!(parse_response(&b, 21, false), Err(VlmError::Overlap(1)));
    }

    #[test]
    fn wrong_cycle_start() {
        let b = body(&[rec("grasping", 0, 10)]);
        assert_eq!(parse_response(&b, 11, false), Err(VlmError::CycleOrder(0)));
    }

    #[test]
    fn other_failures() {
        assert!(matches!(parse_response(b"not json", 5, false), Err(VlmError::MalformedJson(_))));
        assert!(matches!(parse_response(b"{}", 5, false), Err(VlmError::MalformedJson(_))));
        assert!(matches!(parse_response(&[0xff, 0xfe], 5, false), Err(VlmError::MalformedJson(_))));
        assert_eq!(parse_response(b"[]", 5, false), Err(VlmError::RangeMismatch));

        let b = body(&[rec("approach", 0, 4)]);
        assert!(matches!(
            parse_response(&b, 5, false),
            Err(VlmError::UnknownStageName { index: 0, .. })
        ));

        let b = body(&[rec("pre-contact", 1, 2), rec("grasping", 3, 3), rec("post-contact", 4, 4)]);
        assert_eq!(parse_response(&b, 5, false), Err(VlmError::RangeMismatch));

        let b = body(&[rec("pre-contact", 0, 2), rec("grasping", 3, 3), rec("post-contact", 4, 4)]);
        assert_eq!(parse_response(&b, 7, false), Err(VlmError::RangeMismatch));
        assert_eq!(parse_response(&b, 4, false), Err(VlmError::RangeMismatch));

        let b = body(&[rec("pre-contact", 0, 2), rec("grasping", 5, 6), rec("post-contact", 7, 8)]);
        assert_eq!(parse_response(&b, 9, false), Err(VlmError::Gap(1)));
        assert_eq!(parse_response(&b, 9, true), Err(VlmError::Gap(1)));

        let b = body(&[rec("pre-contact", 0, 2), rec("grasping", 2, 1)]);
        assert_eq!(parse_response(&b, 9, false), Err(VlmError::InvertedRange(1)));

        let b = body(&[rec("pre-contact", 0, 2), rec("grasping", 3, 4)]);
        assert_eq!(parse_response(&b, 5, false), Err(VlmError::IncompleteCycle(2)));
    }

    #[test]
    fn lenient_mode_closes_single_frame_gaps() {
        let b = body(&[rec("pre-contact", 0, 2), rec("grasping", 4, 5), rec("post-contact", 6, 8)]);
        assert_eq!(parse_response(&b, 9, false), Err(VlmError::Gap(1)));
        let d = parse_response(&b, 9, true).unwrap();
        assert_eq!(d.phases[0].end, 3);
        assert!(d.is_well_formed());
    }

    #[test]
    fn round_trip_of_rule_based_decomposition() {
        let d = Decomposition {
            phases: vec![
                InteractionPhase::new(PhaseKind::PreContact, 0, 9),
                InteractionPhase::new(PhaseKind::Grasping, 10, 12),
                InteractionPhase::new(PhaseKind::PostContact, 13, 20),
            ],
            source: DecompositionSource::RuleBased,
        };
        let json = to_response_json(&d);
        let back = parse_response(json.as_bytes(), 21, false).unwrap();
        assert_eq!(back.phases, d.phases);
    }
}
