//! Few-shot and zero-shot partitions of an annotated corpus.
//!
//! Sentences are routed by the kinds of mentions they carry: base-only
//! sentences train the model, mixed base/novel sentences form the dev set,
//! novel-only sentences supply the few-shot samples and the test set, and
//! sentences without mentions are spread over the four sets in proportion to
//! their mention-bearing sizes. Mentions of types outside the base and novel
//! sets are not part of the task and are stripped before routing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Corpus};
use crate::error::{Error, Result};

pub const DEFAULT_SHOTS: usize = 10;
pub const DEFAULT_MIN_INSTANCES: usize = 15;
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Supervised,
    FewShot,
    ZeroShot,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::FewShot => "few_shot",
            Regime::ZeroShot => "zero_shot",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "supervised" => Ok(Regime::Supervised),
            "few_shot" => Ok(Regime::FewShot),
            "zero_shot" => Ok(Regime::ZeroShot),
            _ => Err(Error::Config(format!(
                "unknown regime `{s}` (expected supervised, few_shot or zero_shot)"
            ))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub base_ids: BTreeSet<String>,
    pub novel_ids: BTreeSet<String>,
    pub shots_per_novel_type: usize,
    pub min_instances: usize,
    pub rng_seed: u64,
}

impl SplitSpec {
    pub fn new(
        base_ids: impl IntoIterator<Item = String>,
        novel_ids: impl IntoIterator<Item = String>,
        rng_seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            base_ids: base_ids.into_iter().collect(),
            novel_ids: novel_ids.into_iter().collect(),
            shots_per_novel_type: DEFAULT_SHOTS,
            min_instances: DEFAULT_MIN_INSTANCES,
            rng_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_shots(mut self, shots: usize) -> Result<Self> {
        self.shots_per_novel_type = shots;
        self.validate()?;
        Ok(self)
    }

    pub fn with_min_instances(mut self, min_instances: usize) -> Result<Self> {
        self.min_instances = min_instances;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let overlap: Vec<&str> = self
            .base_ids
            .intersection(&self.novel_ids)
            .map(String::as_str)
            .collect();
        if !overlap.is_empty() {
            return Err(Error::Validation(format!(
                "base and novel types overlap: {}",
                overlap.join(", ")
            )));
        }
        if self.shots_per_novel_type == 0 || self.min_instances == 0 {
            return Err(Error::Validation(
                "shots per novel type and minimum instances must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, type_id: &str) -> bool {
        self.base_ids.contains(type_id) || self.novel_ids.contains(type_id)
    }

    /// Base types followed by novel types.
    pub fn all_types(&self) -> Vec<String> {
        self.base_ids
            .iter()
            .chain(&self.novel_ids)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeRole {
    Base,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCheck {
    pub type_id: String,
    pub role: TypeRole,
    pub instances: usize,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub min_instances: usize,
    pub rows: Vec<TypeCheck>,
}

impl PartitionReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.passes)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TypeCheck> {
        self.rows.iter().filter(|r| !r.passes)
    }
}

/// Instance counts per base and novel type against `min_instances`.
pub fn validate_type_partition(corpus: &Corpus, spec: &SplitSpec) -> PartitionReport {
    let counts = corpus.mention_counts();
    let row = |t: &String, role| {
        let instances = counts.get(t).copied().unwrap_or(0);
        TypeCheck {
            type_id: t.clone(),
            role,
            instances,
            passes: instances >= spec.min_instances,
        }
    };
    let rows = spec
        .base_ids
        .iter()
        .map(|t| row(t, TypeRole::Base))
        .chain(spec.novel_ids.iter().map(|t| row(t, TypeRole::Novel)))
        .collect();
    PartitionReport {
        min_instances: spec.min_instances,
        rows,
    }
}

/// Types ordered by mention count, most frequent first, ties by id.
pub fn rank_types_by_frequency(corpus: &Corpus) -> Vec<(String, usize)> {
    let mut ranked: Vec<(String, usize)> = corpus.mention_counts().into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// The `n_base` most frequent types as base, the rest as novel.
pub fn partition_by_frequency(corpus: &Corpus, n_base: usize) -> (Vec<String>, Vec<String>) {
    let ranked: Vec<String> = rank_types_by_frequency(corpus)
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    let n = n_base.min(ranked.len());
    (ranked[..n].to_vec(), ranked[n..].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub regime: Regime,
    pub spec: SplitSpec,
    pub train_base: Vec<AnnotatedSentence>,
    pub train_novel: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

/// Membership lists of a bundle, enough to rebuild it from its corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub version: u32,
    pub regime: Regime,
    pub spec: SplitSpec,
    pub train_base: Vec<String>,
    pub train_novel: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetBundle {
    /// Training sentences of the regime (base plus novel samples).
    pub fn train(&self) -> impl Iterator<Item = &AnnotatedSentence> {
        self.train_base.iter().chain(&self.train_novel)
    }

    pub fn train_len(&self) -> usize {
        self.train_base.len() + self.train_novel.len()
    }

    pub fn sets(&self) -> [(&'static str, &[AnnotatedSentence]); 4] {
        [
            ("train_base", &self.train_base),
            ("train_novel", &self.train_novel),
            ("dev", &self.dev),
            ("test", &self.test),
        ]
    }

    /// Types the detector is trained and evaluated on.
    pub fn type_universe(&self) -> Vec<String> {
        self.spec.all_types()
    }

    pub fn manifest(&self) -> BundleManifest {
        let ids = |s: &[AnnotatedSentence]| s.iter().map(|x| x.sent_id.clone()).collect();
        BundleManifest {
            version: BUNDLE_FORMAT_VERSION,
            regime: self.regime,
            spec: self.spec.clone(),
            train_base: ids(&self.train_base),
            train_novel: ids(&self.train_novel),
            dev: ids(&self.dev),
            test: ids(&self.test),
        }
    }

    /// Reassembles a bundle from its manifest and the source corpus.
    pub fn from_manifest(manifest: &BundleManifest, corpus: &Corpus) -> Result<Self> {
        if manifest.version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported bundle format version {}",
                manifest.version
            )));
        }
        manifest.spec.validate()?;
        let pick = |ids: &[String]| -> Result<Vec<AnnotatedSentence>> {
            ids.iter()
                .map(|id| {
                    corpus
                        .get(id)
                        .map(|s| restrict(s, &manifest.spec))
                        .ok_or_else(|| {
                            Error::Validation(format!("sentence `{id}` is not in the corpus"))
                        })
                })
                .collect()
        };
        let bundle = Self {
            regime: manifest.regime,
            spec: manifest.spec.clone(),
            train_base: pick(&manifest.train_base)?,
            train_novel: pick(&manifest.train_novel)?,
            dev: pick(&manifest.dev)?,
            test: pick(&manifest.test)?,
        };
        bundle.check_invariants()?;
        Ok(bundle)
    }

    /// Disjointness and leakage checks that every bundle satisfies.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, set) in self.sets() {
            for s in set {
                if !seen.insert(s.sent_id.as_str()) {
                    return Err(Error::Validation(format!(
                        "sentence `{}` appears twice (second time in {name})",
                        s.sent_id
                    )));
                }
            }
        }
        if self.regime == Regime::Supervised {
            return Ok(());
        }
        let has = |s: &AnnotatedSentence, ids: &BTreeSet<String>| {
            s.mentions.iter().any(|m| ids.contains(&m.type_id))
        };
        if let Some(s) = self.test.iter().find(|s| has(s, &self.spec.base_ids)) {
            return Err(Error::Validation(format!(
                "test sentence `{}` carries a base-type mention",
                s.sent_id
            )));
        }
        if let Some(s) = self
            .train_base
            .iter()
            .find(|s| has(s, &self.spec.novel_ids))
        {
            return Err(Error::Validation(format!(
                "base training sentence `{}` carries a novel-type mention",
                s.sent_id
            )));
        }
        if self.regime == Regime::ZeroShot && !self.train_novel.is_empty() {
            return Err(Error::Validation(
                "zero-shot bundle has novel training data".into(),
            ));
        }
        Ok(())
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.manifest_json()).map_err(|e| Error::io(path, e))
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes") + "\n"
    }
}

impl BundleManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Copy of `s` keeping only mentions of types in the split.
fn restrict(s: &AnnotatedSentence, spec: &SplitSpec) -> AnnotatedSentence {
    let mut out = s.clone();
    out.mentions.retain(|m| spec.contains(&m.type_id));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Base,
    Mixed,
    Novel,
    Empty,
}

/// Splits `total` items over `weights` by largest remainder; ties go to
/// the earlier slot.
pub fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let total = total as u128;
    let sum = sum as u128;
    let mut out: Vec<usize> = weights
        .iter()
        .map(|&w| (total * w as u128 / sum) as usize)
        .collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = total * weights[a] as u128 % sum;
        let rb = total * weights[b] as u128 % sum;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total as usize - assigned) {
        out[i] += 1;
    }
    out
}

/// Builds the few-shot or zero-shot bundle. Both regimes share dev and test;
/// the zero-shot training set is the few-shot one minus the novel samples.
pub fn make_split(corpus: &Corpus, spec: &SplitSpec, regime: Regime) -> Result<DatasetBundle> {
    spec.validate()?;
    if regime == Regime::Supervised {
        return Err(Error::Validation(
            "make_split builds few-shot and zero-shot bundles; use supervised_split".into(),
        ));
    }
    let report = validate_type_partition(corpus, spec);
    if !report.passes() {
        let failing: Vec<String> = report
            .failures()
            .map(|r| format!("{} ({} < {})", r.type_id, r.instances, spec.min_instances))
            .collect();
        return Err(Error::Validation(format!(
            "types below the minimum instance count: {}",
            failing.join(", ")
        )));
    }

    let sentences: Vec<AnnotatedSentence> =
        corpus.sentences.iter().map(|s| restrict(s, spec)).collect();
    let routes: Vec<Route> = sentences
        .iter()
        .map(|s| {
            let base = s
                .mentions
                .iter()
                .any(|m| spec.base_ids.contains(&m.type_id));
            let novel = s
                .mentions
                .iter()
                .any(|m| spec.novel_ids.contains(&m.type_id));
            match (base, novel) {
                (true, true) => Route::Mixed,
                (true, false) => Route::Base,
                (false, true) => Route::Novel,
                (false, false) => Route::Empty,
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let novel_pool: Vec<usize> = (0..sentences.len())
        .filter(|&i| routes[i] == Route::Novel)
        .collect();
    let sampled = sample_shots(&sentences, &novel_pool, spec, &mut rng)?;

    // slots: 0 train_base, 1 train_novel, 2 dev, 3 test
    let mut slot = vec![usize::MAX; sentences.len()];
    for (i, r) in routes.iter().enumerate() {
        slot[i] = match r {
            Route::Base => 0,
            Route::Mixed => 2,
            Route::Novel if sampled.contains(&i) => 1,
            Route::Novel => 3,
            Route::Empty => usize::MAX,
        };
    }
    let mut weights = [0usize; 4];
    for &s in slot.iter().filter(|&&s| s != usize::MAX) {
        weights[s] += 1;
    }
    let mut negatives: Vec<usize> = (0..sentences.len())
        .filter(|&i| routes[i] == Route::Empty)
        .collect();
    negatives.shuffle(&mut rng);
    let quotas = largest_remainder(negatives.len(), &weights);
    let mut cursor = negatives.into_iter();
    for (s, &q) in quotas.iter().enumerate() {
        for i in cursor.by_ref().take(q) {
            // in zero-shot the novel samples are dropped, their negatives kept
            slot[i] = if regime == Regime::ZeroShot && s == 1 {
                0
            } else {
                s
            };
        }
    }

    let mut sets: [Vec<AnnotatedSentence>; 4] = Default::default();
    for (i, s) in sentences.into_iter().enumerate() {
        let target = slot[i];
        if regime == Regime::ZeroShot && target == 1 {
            continue;
        }
        sets[target].push(s);
    }
    let [train_base, train_novel, dev, test] = sets;
    let bundle = DatasetBundle {
        regime,
        spec: spec.clone(),
        train_base,
        train_novel,
        dev,
        test,
    };
    bundle.check_invariants()?;
    Ok(bundle)
}

/// Indices of the few-shot samples. Types are served in ascending order of
/// supply; a sentence counts toward every novel type it carries and is only
/// taken if no type would exceed its quota.
fn sample_shots(
    sentences: &[AnnotatedSentence],
    pool: &[usize],
    spec: &SplitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<usize>> {
    let shots = spec.shots_per_novel_type;
    let types_of = |i: usize| -> BTreeSet<&str> {
        sentences[i]
            .mentions
            .iter()
            .map(|m| m.type_id.as_str())
            .filter(|t| spec.novel_ids.contains(*t))
            .collect()
    };
    let mut supply: BTreeMap<&str, Vec<usize>> = spec
        .novel_ids
        .iter()
        .map(|t| (t.as_str(), Vec::new()))
        .collect();
    for &i in pool {
        for t in types_of(i) {
            supply.get_mut(t).expect("novel type").push(i);
        }
    }
    let mut order: Vec<&str> = supply.keys().copied().collect();
    order.sort_by_key(|t| (supply[t].len(), *t));

    let mut taken = BTreeSet::new();
    let mut filled: BTreeMap<&str, usize> = BTreeMap::new();
    for t in order {
        let available = supply[t].len();
        if available < shots {
            return Err(Error::InsufficientShots {
                type_id: t.to_string(),
                available,
                required: shots,
            });
        }
        let mut candidates = supply[t].clone();
        candidates.shuffle(rng);
        for i in candidates {
            if filled.get(t).copied().unwrap_or(0) >= shots {
                break;
            }
            if taken.contains(&i) {
                continue;
            }
            let carried = types_of(i);
            if carried
                .iter()
                .all(|u| filled.get(u).copied().unwrap_or(0) < shots)
            {
                for u in carried {
                    *filled.entry(u).or_default() += 1;
                }
                taken.insert(i);
            }
        }
        let got = filled.get(t).copied().unwrap_or(0);
        if got < shots {
            return Err(Error::InsufficientShots {
                type_id: t.to_string(),
                available: got,
                required: shots,
            });
        }
    }
    Ok(taken)
}

/// Random sentence-level train/dev/test split over all types.
pub fn supervised_split(
    corpus: &Corpus,
    type_ids: impl IntoIterator<Item = String>,
    dev_fraction: f64,
    test_fraction: f64,
    rng_seed: u64,
) -> Result<DatasetBundle> {
    if !(0.0..1.0).contains(&dev_fraction)
        || !(0.0..1.0).contains(&test_fraction)
        || dev_fraction + test_fraction >= 1.0
    {
        return Err(Error::Validation(format!(
            "dev ({dev_fraction}) and test ({test_fraction}) fractions must be in [0, 1) and sum below 1"
        )));
    }
    let spec = SplitSpec {
        base_ids: type_ids.into_iter().collect(),
        novel_ids: BTreeSet::new(),
        shots_per_novel_type: DEFAULT_SHOTS,
        min_instances: 1,
        rng_seed,
    };
    let n = corpus.sentences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let n_dev = (n as f64 * dev_fraction).round() as usize;
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n - n_dev);
    let mut slot = vec![0u8; n];
    for &i in &order[..n_dev] {
        slot[i] = 2;
    }
    for &i in &order[n_dev..n_dev + n_test] {
        slot[i] = 3;
    }
    let mut bundle = DatasetBundle {
        regime: Regime::Supervised,
        spec: spec.clone(),
        train_base: Vec::new(),
        train_novel: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in corpus.sentences.iter().enumerate() {
        let s = restrict(s, &spec);
        match slot[i] {
            2 => bundle.dev.push(s),
            3 => bundle.test.push(s),
            _ => bundle.train_base.push(s),
        }
    }
    Ok(bundle)
}
