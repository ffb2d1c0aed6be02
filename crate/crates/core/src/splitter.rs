//! Leakage-safe dataset construction: identity-consistency and multimodal-consistency
//! filtering, near-duplicate removal, group-disjoint split assignment, conflict repair and
//! validation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEmbeddings {
    pub img: Vec<f64>,
    pub text: Vec<f64>,
    pub aud: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    /// Reference-identity group; the unit kept whole within one split.
    pub group_id: String,
    pub emotion_label: String,
    pub modality_embeddings: ModalityEmbeddings,
    #[serde(default)]
    pub source_tag: String,
}

impl SampleRecord {
    pub fn has_all_modalities(&self) -> bool {
        let e = &self.modality_embeddings;
        !(e.img.is_empty() || e.text.is_empty() || e.aud.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitterConfig {
    pub w_img_text: f64,
    pub w_img_aud: f64,
    pub w_text_aud: f64,
    pub tau_cons: f64,
    pub tau_dup: f64,
    pub tau_id: f64,
    /// Train / val / test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            w_img_text: 0.4,
            w_img_aud: 0.3,
            w_text_aud: 0.3,
            tau_cons: 0.2,
            tau_dup: 0.95,
            tau_id: 0.3,
            ratios: [0.70, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitterConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_img_text, self.w_img_aud, self.w_text_aud];
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("consistency weights must be >= 0 and sum to 1, got {w:?}")));
        }
        if self.ratios.iter().any(|x| !(*x >= 0.0)) || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("ratios must be >= 0 and sum to 1, got {:?}", self.ratios)));
        }
        for (name, t) in [("tau_cons", self.tau_cons), ("tau_id", self.tau_id)] {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [-1, 1], got {t}")));
            }
        }
        // values above 1 switch duplicate removal off
        if self.tau_dup.is_nan() || self.tau_dup < -1.0 {
            return Err(Error::Config(format!("tau_dup must be >= -1, got {}", self.tau_dup)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RemovalReason {
    MissingModality,
    /// Zero-norm embedding, so no similarity can be scored.
    DegenerateEmbedding,
    IdentityInconsistent { cosine_to_centroid: f64 },
    LowConsistency { score: f64 },
    NearDuplicate { of: String, cosine: f64 },
    /// Group spanned splits with no majority.
    SplitConflict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub sample_id: String,
    #[serde(flatten)]
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Groups present in more than one split; must be 0.
    pub group_overlap: usize,
    /// Sample pairs in different splits whose image cosine exceeds `tau_dup`.
    pub cross_split_near_duplicates: usize,
    pub missing_modality: usize,
    /// Assigned ids absent from the sample list.
    pub unknown_samples: usize,
    pub split_sizes: BTreeMap<Split, usize>,
    pub achieved_ratios: BTreeMap<Split, f64>,
    pub emotion_histograms: BTreeMap<Split, BTreeMap<String, usize>>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.group_overlap == 0
            && self.cross_split_near_duplicates == 0
            && self.missing_modality == 0
            && self.unknown_samples == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub removal_log: Vec<Removal>,
    pub warnings: Vec<String>,
    pub validation: ValidationReport,
}

impl SplitAssignment {
    pub fn split_of(&self, sample_id: &str) -> Option<Split> {
        self.assignments.get(sample_id).copied()
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("embedding lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

fn sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    cosine(a, b)
}

/// Weighted sum of the three pairwise modality cosines.
pub fn consistency_score(s: &SampleRecord, cfg: &SplitterConfig) -> Result<f64> {
    let e = &s.modality_embeddings;
    Ok(cfg.w_img_text * sim(&e.img, &e.text)?
        + cfg.w_img_aud * sim(&e.img, &e.aud)?
        + cfg.w_text_aud * sim(&e.text, &e.aud)?)
}

/// Greedy scan in `sample_id` order: a sample is dropped when its image embedding is more
/// similar than `tau_dup` to any sample already kept.
pub fn remove_duplicates(samples: &[SampleRecord], tau_dup: f64) -> Result<(Vec<SampleRecord>, Vec<Removal>)> {
    let mut order: Vec<&SampleRecord> = samples.iter().collect();
    order.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut kept: Vec<SampleRecord> = Vec::new();
    let mut removed = Vec::new();
    for s in order {
        let mut dup = None;
        for k in &kept {
            let c = sim(&s.modality_embeddings.img, &k.modality_embeddings.img)?;
            if c > tau_dup {
                dup = Some((k.sample_id.clone(), c));
                break;
            }
        }
        match dup {
            Some((of, cosine)) => removed.push(Removal {
                sample_id: s.sample_id.clone(),
                reason: RemovalReason::NearDuplicate { of, cosine },
            }),
            None => kept.push(s.clone()),
        }
    }
    Ok((kept, removed))
}

/// Drops samples whose image embedding has cosine below `tau_id` to their group's mean
/// image embedding.
pub fn filter_identity_consistency(samples: &[SampleRecord], tau_id: f64) -> Result<(Vec<SampleRecord>, Vec<Removal>)> {
    let mut centroids: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for s in samples {
        let img = &s.modality_embeddings.img;
        let entry = centroids
            .entry(s.group_id.as_str())
            .or_insert_with(|| (vec![0.0; img.len()], 0));
        check_dims(&entry.0, img)?;
        entry.0.iter_mut().zip(img).for_each(|(c, x)| *c += x);
        entry.1 += 1;
    }
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for s in samples {
        let (sum, _) = &centroids[s.group_id.as_str()];
        let c = sim(&s.modality_embeddings.img, sum)?;
        if c < tau_id {
            removed.push(Removal {
                sample_id: s.sample_id.clone(),
                reason: RemovalReason::IdentityInconsistent { cosine_to_centroid: c },
            });
        } else {
            kept.push(s.clone());
        }
    }
    Ok((kept, removed))
}

/// Keeps samples with consistency score strictly above `tau_cons`.
pub fn filter_consistency(samples: &[SampleRecord], cfg: &SplitterConfig) -> Result<(Vec<SampleRecord>, Vec<Removal>)> {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for s in samples {
        let score = consistency_score(s, cfg)?;
        if score > cfg.tau_cons {
            kept.push(s.clone());
        } else {
            removed.push(Removal {
                sample_id: s.sample_id.clone(),
                reason: RemovalReason::LowConsistency { score },
            });
        }
    }
    Ok((kept, removed))
}

/// Group-disjoint assignment of already-filtered samples.
///
/// Groups are shuffled by `cfg.seed` and each goes wholly to the split with the largest
/// sample deficit against its target (lowest split on ties). A single group goes to
/// train with a warning; two groups cannot fill three splits.
pub fn assign_splits(samples: &[SampleRecord], cfg: &SplitterConfig) -> Result<SplitAssignment> {
    cfg.validate()?;
    let mut groups: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.group_id.as_str()).or_default().push(s);
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = samples.iter().find(|s| !ids.insert(s.sample_id.as_str())) {
        return Err(Error::Validation(format!("duplicate sample id {:?}", dup.sample_id)));
    }
    let mut out = SplitAssignment::default();
    match groups.len() {
        1 => {
            out.warnings
                .push("only one reference-identity group: every sample assigned to train".into());
            for s in samples {
                out.assignments.insert(s.sample_id.clone(), Split::Train);
            }
        }
        n if n < 3 => return Err(Error::TooFewGroups(n)),
        _ => {
            let mut order: Vec<(&str, Vec<&SampleRecord>)> = groups.into_iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            order.shuffle(&mut rng);
            let total = samples.len() as f64;
            let mut counts = [0usize; 3];
            for (_, members) in order {
                let deficit = |k: usize| cfg.ratios[k] * total - counts[k] as f64;
                let k = (0..3)
                    .reduce(|best, k| if deficit(k) > deficit(best) { k } else { best })
                    .expect("three splits");
                counts[k] += members.len();
                for s in members {
                    out.assignments.insert(s.sample_id.clone(), Split::ALL[k]);
                }
            }
        }
    }
    out.validation = validate_splits(&out, samples, cfg.tau_dup)?;
    Ok(out)
}

/// Moves every group that spans splits wholly into the split holding most of its
/// samples; a tie removes the group. Returns the number of groups repaired.
pub fn repair_conflicts(assignment: &mut SplitAssignment, samples: &[SampleRecord]) -> usize {
    let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in samples {
        if assignment.assignments.contains_key(&s.sample_id) {
            by_group.entry(s.group_id.as_str()).or_default().push(s.sample_id.as_str());
        }
    }
    let mut repaired = 0;
    for members in by_group.values() {
        let mut tally = [0usize; 3];
        for id in members {
            tally[assignment.assignments[*id].index()] += 1;
        }
        if tally.iter().filter(|&&c| c > 0).count() <= 1 {
            continue;
        }
        repaired += 1;
        let max = *tally.iter().max().expect("three splits");
        let winners: Vec<usize> = (0..3).filter(|&k| tally[k] == max).collect();
        if let [k] = winners[..] {
            for id in members {
                assignment.assignments.insert(id.to_string(), Split::ALL[k]);
            }
        } else {
            for id in members {
                assignment.assignments.remove(*id);
                assignment.removal_log.push(Removal {
                    sample_id: id.to_string(),
                    reason: RemovalReason::SplitConflict,
                });
            }
        }
    }
    repaired
}

/// Leakage, duplicate and coverage checks of an assignment against its samples.
pub fn validate_splits(assignment: &SplitAssignment, samples: &[SampleRecord], tau_dup: f64) -> Result<ValidationReport> {
    let by_id: BTreeMap<&str, &SampleRecord> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut report = ValidationReport::default();
    let mut group_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    let mut placed: Vec<(&SampleRecord, Split)> = Vec::new();
    for split in Split::ALL {
        report.split_sizes.insert(split, 0);
        report.emotion_histograms.insert(split, BTreeMap::new());
    }
    for (id, &split) in &assignment.assignments {
        let Some(s) = by_id.get(id.as_str()) else {
            report.unknown_samples += 1;
            continue;
        };
        group_splits.entry(s.group_id.as_str()).or_default().insert(split);
        *report.split_sizes.get_mut(&split).expect("split") += 1;
        *report
            .emotion_histograms
            .get_mut(&split)
            .expect("split")
            .entry(s.emotion_label.clone())
            .or_default() += 1;
        if !s.has_all_modalities() {
            report.missing_modality += 1;
        }
        placed.push((s, split));
    }
    report.group_overlap = group_splits.values().filter(|set| set.len() > 1).count();
    for (i, (a, sa)) in placed.iter().enumerate() {
        for (b, sb) in &placed[i + 1..] {
            if sa != sb
                && !a.modality_embeddings.img.is_empty()
                && sim(&a.modality_embeddings.img, &b.modality_embeddings.img)? > tau_dup
            {
                report.cross_split_near_duplicates += 1;
            }
        }
    }
    let total = placed.len().max(1) as f64;
    for (&split, &n) in &report.split_sizes {
        report.achieved_ratios.insert(split, n as f64 / total);
    }
    Ok(report)
}

/// Full pipeline: modality coverage, identity consistency, multimodal consistency,
/// duplicate removal, assignment, repair and validation. Every input sample ends up either
/// assigned or in the removal log.
pub fn build_splits(samples: &[SampleRecord], cfg: &SplitterConfig) -> Result<SplitAssignment> {
    cfg.validate()?;
    let mut log = Vec::new();
    let mut usable = Vec::new();
    for s in samples {
        let e = &s.modality_embeddings;
        if !s.has_all_modalities() {
            log.push(Removal {
                sample_id: s.sample_id.clone(),
                reason: RemovalReason::MissingModality,
            });
        } else if [&e.img, &e.text, &e.aud].iter().any(|v| v.iter().all(|x| *x == 0.0)) {
            log.push(Removal {
                sample_id: s.sample_id.clone(),
                reason: RemovalReason::DegenerateEmbedding,
            });
        } else {
            usable.push(s.clone());
        }
    }
    let (usable, removed) = filter_identity_consistency(&usable, cfg.tau_id)?;
    log.extend(removed);
    let (usable, removed) = filter_consistency(&usable, cfg)?;
    log.extend(removed);
    let (usable, removed) = remove_duplicates(&usable, cfg.tau_dup)?;
    log.extend(removed);
    let mut out = assign_splits(&usable, cfg)?;
    if repair_conflicts(&mut out, &usable) > 0 {
        out.warnings.push("cross-split group conflicts repaired".into());
    }
    out.removal_log.splice(0..0, log);
    out.validation = validate_splits(&out, &usable, cfg.tau_dup)?;
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, samples: &[SampleRecord]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
