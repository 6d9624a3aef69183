use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AudioError, ClipManifest};

/// Shares of speakers and scripts assigned to the clean, mix and test
/// segments.
pub const DEFAULT_PROPORTIONS: [f64; 3] = [0.4, 0.3, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Clean,
    Mix,
    Test,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Clean, Segment::Mix, Segment::Test];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Clean => "clean",
            Segment::Mix => "mix",
            Segment::Test => "test",
        }
    }
}

/// Speakers and scripts partitioned into three disjoint segments, and the
/// (speaker, script) pairs of the manifest that fall inside each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub speakers: [Vec<String>; 3],
    pub scripts: [Vec<String>; 3],
    pub clean_set: Vec<(String, String)>,
    pub mix_set: Vec<(String, String)>,
    pub test_set: Vec<(String, String)>,
}

impl SplitAssignment {
    pub fn pairs(&self, seg: Segment) -> &[(String, String)] {
        match seg {
            Segment::Clean => &self.clean_set,
            Segment::Mix => &self.mix_set,
            Segment::Test => &self.test_set,
        }
    }

    /// Entries of `manifest` whose speaker and script both belong to `seg`.
    pub fn segment_manifest(&self, manifest: &ClipManifest, seg: Segment) -> ClipManifest {
        let i = seg as usize;
        let speakers: BTreeSet<&str> = self.speakers[i].iter().map(String::as_str).collect();
        let scripts: BTreeSet<&str> = self.scripts[i].iter().map(String::as_str).collect();
        ClipManifest {
            entries: manifest
                .entries
                .iter()
                .filter(|e| speakers.contains(e.speaker_id.as_str()) && scripts.contains(e.script_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

pub fn split_dataset(manifest: &ClipManifest, seed: u64) -> Result<SplitAssignment, AudioError> {
    split_dataset_with(manifest, seed, DEFAULT_PROPORTIONS)
}

/// Seeded three-way partition of speakers and scripts. When every speaker
/// carries gender metadata, speakers are interleaved by gender before the
/// segments are filled so each segment stays balanced.
pub fn split_dataset_with(
    manifest: &ClipManifest,
    seed: u64,
    proportions: [f64; 3],
) -> Result<SplitAssignment, AudioError> {
    let mut genders: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    let mut scripts = BTreeSet::new();
    for e in &manifest.entries {
        let g = genders.entry(e.speaker_id.as_str()).or_insert(None);
        if g.is_none() {
            *g = e.gender.as_deref();
        }
        scripts.insert(e.script_id.as_str());
    }
    if genders.len() < 3 {
        return Err(AudioError::TooFewSpeakers(genders.len()));
    }
    if scripts.len() < 3 {
        return Err(AudioError::TooFewScripts(scripts.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speaker_order: Vec<&str> = if genders.values().all(Option::is_some) {
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (&s, g) in &genders {
            groups.entry(g.unwrap()).or_default().push(s);
        }
        for members in groups.values_mut() {
            members.shuffle(&mut rng);
        }
        round_robin(groups.into_values().collect())
    } else {
        let mut all: Vec<&str> = genders.keys().copied().collect();
        all.shuffle(&mut rng);
        all
    };
    let mut script_order: Vec<&str> = scripts.into_iter().collect();
    script_order.shuffle(&mut rng);

    let speakers = fill_segments(&speaker_order, proportions);
    let scripts = fill_segments(&script_order, proportions);

    let mut sets: [Vec<(String, String)>; 3] = Default::default();
    let mut placed = BTreeSet::new();
    for e in &manifest.entries {
        let pair = (e.speaker_id.clone(), e.script_id.clone());
        if !placed.insert(pair.clone()) {
            continue;
        }
        for i in 0..3 {
            if speakers[i].contains(&pair.0) && scripts[i].contains(&pair.1) {
                sets[i].push(pair.clone());
            }
        }
    }
    let [clean_set, mix_set, test_set] = sets;
    Ok(SplitAssignment {
        seed,
        speakers,
        scripts,
        clean_set,
        mix_set,
        test_set,
    })
}

fn round_robin<'a>(mut groups: Vec<Vec<&'a str>>) -> Vec<&'a str> {
    let mut out = Vec::new();
    for g in &mut groups {
        g.reverse();
    }
    loop {
        let mut any = false;
        for g in &mut groups {
            if let Some(s) = g.pop() {
                out.push(s);
                any = true;
            }
        }
        if !any {
            return out;
        }
    }
}

/// Segment sizes by largest remainder, every segment non-empty.
pub(crate) fn segment_sizes(n: usize, proportions: [f64; 3]) -> [usize; 3] {
    let total: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions.iter().map(|p| p / total * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        while sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

fn fill_segments(order: &[&str], proportions: [f64; 3]) -> [Vec<String>; 3] {
    let sizes = segment_sizes(order.len(), proportions);
    let mut out: [Vec<String>; 3] = Default::default();
    let mut it = order.iter();
    for (seg, &n) in out.iter_mut().zip(&sizes) {
        seg.extend(it.by_ref().take(n).map(|s| s.to_string()));
    }
    out
}
