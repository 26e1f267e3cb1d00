//! Mission outcome and scored metrics.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::localizer::LocalizedObject;
use crate::mission::Phase;
use crate::sim::Artifact;

use super::config::SpeedProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Crash,
    Timeout,
    Stopped,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "SUCCESS",
            Outcome::Crash => "CRASH",
            Outcome::Timeout => "TIMEOUT",
            Outcome::Stopped => "STOPPED",
        }
    }
}

/// Distance within which a reported object counts as the artifact, m.
pub const MATCH_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactScore {
    pub class_id: u8,
    pub truth: [f64; 3],
    /// Matched object position, if any object of the class lies within
    /// [`MATCH_RADIUS`].
    pub localized: Option<[f64; 3]>,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSummary {
    pub ground_truth: usize,
    pub localized: usize,
    /// Reported objects not matched to a ground-truth artifact.
    pub false_positives: usize,
    pub reported: usize,
    pub per_artifact: Vec<ArtifactScore>,
}

/// Greedy one-to-one matching by class, closest pairs first.
pub fn score_artifacts(truth: &[Artifact], objects: &[LocalizedObject]) -> ArtifactSummary {
    let mut pairs = vec![];
    for (i, a) in truth.iter().enumerate() {
        for (j, o) in objects.iter().enumerate() {
            let d = (o.position - a.position).norm();
            if o.class_id == a.class_id && d <= MATCH_RADIUS {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut truth_match = vec![None; truth.len()];
    let mut used = vec![false; objects.len()];
    for (d, i, j) in pairs {
        if truth_match[i].is_none() && !used[j] {
            truth_match[i] = Some((j, d));
            used[j] = true;
        }
    }
    let per_artifact: Vec<ArtifactScore> = truth
        .iter()
        .zip(&truth_match)
        .map(|(a, m)| ArtifactScore {
            class_id: a.class_id,
            truth: arr(&a.position),
            localized: m.map(|(j, _)| arr(&objects[j].position)),
            error: m.map(|(_, d)| d),
        })
        .collect();
    ArtifactSummary {
        ground_truth: truth.len(),
        localized: truth_match.iter().filter(|m| m.is_some()).count(),
        false_positives: used.iter().filter(|u| !**u).count(),
        reported: objects.len(),
        per_artifact,
    }
}

/// Thin-post visibility: a sighting is one scan taken while a post is within
/// the sighting range, a hit is a sighting with at least one return on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThinPostStats {
    pub sightings: usize,
    pub hits: usize,
    /// Scans with any post in range, and those with a return on every post in range.
    pub scans_in_range: usize,
    pub scans_all_hit: usize,
}

/// Speed and position weight inside the narrowest section against the rest
/// of the exploration (after the start transient).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NarrowStats {
    pub mean_speed_narrow: f64,
    pub mean_speed_elsewhere: f64,
    pub mean_q_p_narrow: f64,
    pub mean_q_p_elsewhere: f64,
    pub samples_narrow: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub preset: String,
    pub seed: u64,
    pub profile: SpeedProfile,
    pub outcome: Outcome,
    pub final_phase: Phase,
    pub sim_time: f64,
    /// Horizontal path length while airborne, m; speeds are horizontal too.
    pub distance: f64,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub explore_duration: f64,
    pub explore_distance: f64,
    pub explore_mean_speed: f64,
    /// Minimum speed during exploration after the start transient and before
    /// the end region.
    pub post_transient_min_speed: Option<f64>,
    /// Minimum clearance during exploration and return, m.
    pub min_clearance: Option<f64>,
    /// Minimum clearance from take-off to touchdown, m.
    pub min_clearance_flight: Option<f64>,
    pub max_progress: f64,
    /// Whether exploration reached the end region, for worlds that define one.
    pub reached_end: Option<bool>,
    /// Horizontal distance between the final position and the take-off point, m.
    pub return_error: f64,
    pub artifacts: ArtifactSummary,
    pub thin_posts: ThinPostStats,
    pub narrow: Option<NarrowStats>,
    /// Largest input-rate violation of any NMPC solution and of the applied
    /// command sequence.
    pub max_rate_violation: f64,
    pub max_applied_rate_violation: f64,
    pub degraded_solves: usize,
    pub lidar_scans: usize,
    pub depth_frames: usize,
    pub control_ticks: usize,
    pub rejected_detections: usize,
    /// Trace file name when one was written.
    pub trace: Option<String>,
    pub diagnostic: Option<String>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn art(class_id: u8, x: f64) -> Artifact {
        Artifact { class_id, position: Vec3::new(x, 0.0, 0.0), half: Vec3::new(0.1, 0.1, 0.1), yaw: 0.0 }
    }

    fn obj(class_id: u8, x: f64) -> LocalizedObject {
        LocalizedObject { class_id, position: Vec3::new(x, 0.0, 0.0), support_count: 5, first_seen: 0.0, last_seen: 1.0 }
    }

    #[test]
    fn matching_is_one_to_one_and_class_aware() {
        let truth = [art(1, 0.0), art(1, 1.5), art(2, 5.0)];
        let objects = [obj(1, 0.2), obj(1, 0.3), obj(2, 6.5), obj(3, 0.0)];
        let s = score_artifacts(&truth, &objects);
        assert_eq!(s.localized, 1);
        assert_eq!(s.false_positives, 3);
        assert_eq!(s.per_artifact[0].error, Some(0.2));
        assert!(s.per_artifact[2].localized.is_none());
    }
}
