//! Frame manifest: ingestion, stratified train/test split and nested
//! training subsets.
//!
//! The manifest file is line-delimited UTF-8. A block of `#key=value` header
//! lines comes first, then a tab-separated column header and one row per
//! frame in the fixed column order `frame_id, image_ref, ecc, mv, split,
//! subset_tags, gt_caption`. Fields are escaped with
//! [`artifact::escape_field`](crate::artifact::escape_field), so captions may
//! contain commas, tabs or newlines.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::{escape_field, sha256_hex, unescape_field, FORMAT_VERSION};
use crate::labels::{EccLabel, MorphokineticVariable};
use crate::rng::{SeededRng, PRNG_ID};

const MAGIC: &str = "#embryocap-manifest";
const COLUMNS: [&str; 7] = [
    "frame_id",
    "image_ref",
    "ecc",
    "mv",
    "split",
    "subset_tags",
    "gt_caption",
];
const SOURCE_COLUMNS: [&str; 5] = ["frame_id", "image_ref", "gt_caption", "ecc", "mv"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("duplicate frame id `{0}`")]
    DuplicateFrameId(String),
    #[error("image `{path}` for frame `{frame_id}` does not exist")]
    MissingImage { frame_id: String, path: PathBuf },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("malformed manifest header: {0}")]
    MalformedHeader(String),
    #[error("invalid split spec: {0}")]
    InvalidSplitSpec(String),
    #[error("stratum `{stratum}` has {available} frames but must contribute {required} to the test set")]
    StratumTooSmall {
        stratum: String,
        available: usize,
        required: usize,
    },
    #[error("manifest invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Training-subset tag `s<size>`, e.g. `s400`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SubsetTag(pub usize);

impl fmt::Display for SubsetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl FromStr for SubsetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('s')
            .and_then(|n| n.parse().ok())
            .filter(|&n| n > 0)
            .map(SubsetTag)
            .ok_or_else(|| format!("bad subset tag `{s}`"))
    }
}

impl TryFrom<String> for SubsetTag {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SubsetTag> for String {
    fn from(t: SubsetTag) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub image_ref: String,
    pub gt_caption: String,
    pub ecc: EccLabel,
    pub mv: MorphokineticVariable,
    pub split: Split,
    pub subset_tags: BTreeSet<SubsetTag>,
}

impl FrameRecord {
    pub fn new(
        frame_id: impl Into<String>,
        image_ref: impl Into<String>,
        gt_caption: impl Into<String>,
        ecc: EccLabel,
        mv: MorphokineticVariable,
    ) -> Self {
        Self {
            frame_id: frame_id.into(),
            image_ref: image_ref.into(),
            gt_caption: gt_caption.into(),
            ecc,
            mv,
            split: Split::Unassigned,
            subset_tags: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StratifyBy {
    #[default]
    Ecc,
    Mv,
}

impl StratifyBy {
    pub fn as_str(self) -> &'static str {
        match self {
            StratifyBy::Ecc => "ecc",
            StratifyBy::Mv => "mv",
        }
    }

    fn key(self, frame: &FrameRecord) -> String {
        match self {
            StratifyBy::Ecc => frame.ecc.as_str().to_string(),
            StratifyBy::Mv => frame.mv.as_str().to_string(),
        }
    }
}

impl FromStr for StratifyBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ecc" => Ok(StratifyBy::Ecc),
            "mv" => Ok(StratifyBy::Mv),
            other => Err(format!("unknown stratification key `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_count: usize,
    /// Strictly ascending; each becomes a nested `s<size>` tag over the train set.
    pub subset_sizes: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub stratify_by: StratifyBy,
}

/// Header block of a manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ManifestHeader {
    pub producer: String,
    /// Digest of the ingested source table.
    pub source_sha256: Option<String>,
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub header: ManifestHeader,
    frames: Vec<FrameRecord>,
}

impl Manifest {
    /// Builds a manifest, checking id uniqueness and tag invariants.
    pub fn from_frames(header: ManifestHeader, frames: Vec<FrameRecord>) -> Result<Self, DatasetError> {
        let manifest = Self { header, frames };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn with_tag(&self, tag: SubsetTag) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.subset_tags.contains(&tag))
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::with_capacity(self.frames.len());
        let mut tag_sizes = BTreeSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(DatasetError::DuplicateFrameId(f.frame_id.clone()));
            }
            if !f.subset_tags.is_empty() && f.split != Split::Train {
                return Err(DatasetError::Invariant(format!(
                    "frame `{}` carries subset tags but is not in the train split",
                    f.frame_id
                )));
            }
            tag_sizes.extend(f.subset_tags.iter().copied());
        }
        // Nesting: a frame in a smaller subset belongs to every larger one.
        for f in &self.frames {
            if let Some(smallest) = f.subset_tags.iter().next() {
                if tag_sizes.range(smallest..).any(|t| !f.subset_tags.contains(t)) {
                    return Err(DatasetError::Invariant(format!(
                        "frame `{}` breaks subset nesting",
                        f.frame_id
                    )));
                }
            }
        }
        for t in &tag_sizes {
            let count = self.with_tag(*t).count();
            if count != t.0 {
                return Err(DatasetError::Invariant(format!("subset {t} has {count} frames")));
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("#format_version={FORMAT_VERSION}\n"));
        out.push_str(&format!("#producer={}\n", self.header.producer));
        if let Some(d) = &self.header.source_sha256 {
            out.push_str(&format!("#source_sha256={d}\n"));
        }
        if let Some(spec) = &self.header.split {
            out.push_str(&format!("#seed={}\n", spec.seed));
            out.push_str(&format!("#prng={PRNG_ID}\n"));
            out.push_str(&format!("#stratify_by={}\n", spec.stratify_by.as_str()));
            out.push_str(&format!("#test_count={}\n", spec.test_count));
            let sizes: Vec<String> = spec.subset_sizes.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!("#subset_sizes={}\n", sizes.join(",")));
        }
        out.push_str(&COLUMNS.join("\t"));
        out.push('\n');
        for f in &self.frames {
            let tags: Vec<String> = f.subset_tags.iter().map(|t| t.to_string()).collect();
            let fields = [
                escape_field(&f.frame_id),
                escape_field(&f.image_ref),
                f.ecc.as_str().to_string(),
                f.mv.as_str().to_string(),
                f.split.as_str().to_string(),
                tags.join(","),
                escape_field(&f.gt_caption),
            ];
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(DatasetError::MalformedHeader("missing manifest marker".into())),
        }
        let mut kv = BTreeMap::new();
        while let Some((_, line)) = lines.peek() {
            let Some(entry) = line.strip_prefix('#') else { break };
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| DatasetError::MalformedHeader(format!("bad header line `{line}`")))?;
            kv.insert(k.to_string(), v.to_string());
            lines.next();
        }
        let version: u32 = kv
            .get("format_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DatasetError::MalformedHeader("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(DatasetError::MalformedHeader(format!(
                "unsupported format version {version}"
            )));
        }
        let split = match kv.get("seed") {
            None => None,
            Some(seed) => {
                let bad = |what: &str| DatasetError::MalformedHeader(format!("bad {what}"));
                let sizes = kv.get("subset_sizes").map(String::as_str).unwrap_or("");
                Some(SplitSpec {
                    seed: seed.parse().map_err(|_| bad("seed"))?,
                    test_count: kv
                        .get("test_count")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("test_count"))?,
                    subset_sizes: sizes
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|_| bad("subset_sizes")))
                        .collect::<Result<_, _>>()?,
                    stratify_by: kv
                        .get("stratify_by")
                        .map(|s| s.parse())
                        .transpose()
                        .map_err(|_| bad("stratify_by"))?
                        .unwrap_or_default(),
                })
            }
        };
        let header = ManifestHeader {
            producer: kv.get("producer").cloned().unwrap_or_default(),
            source_sha256: kv.get("source_sha256").cloned(),
            split,
        };

        match lines.next() {
            Some((_, cols)) if cols.split('\t').eq(COLUMNS) => {}
            _ => return Err(DatasetError::MalformedHeader("unexpected column header".into())),
        }
        let mut frames = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            frames.push(parse_manifest_row(idx + 1, line)?);
        }
        Self::from_frames(header, frames)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

fn parse_manifest_row(line_no: usize, line: &str) -> Result<FrameRecord, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedRow { line: line_no, reason };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != COLUMNS.len() {
        return Err(malformed(format!(
            "expected {} fields, found {}",
            COLUMNS.len(),
            fields.len()
        )));
    }
    let subset_tags = fields[5]
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<SubsetTag>())
        .collect::<Result<_, _>>()
        .map_err(malformed)?;
    Ok(FrameRecord {
        frame_id: unescape_field(fields[0]),
        image_ref: unescape_field(fields[1]),
        ecc: fields[2]
            .parse()
            .map_err(|e: crate::labels::UnknownLabel| malformed(e.to_string()))?,
        mv: fields[3]
            .parse()
            .map_err(|e: crate::labels::UnknownLabel| malformed(e.to_string()))?,
        split: fields[4].parse().map_err(malformed)?,
        subset_tags,
        gt_caption: unescape_field(fields[6]),
    })
}

/// Parses a source table without touching the filesystem.
///
/// The first line names the columns (any order; extra columns are ignored);
/// `frame_id`, `image_ref`, `gt_caption`, `ecc` and `mv` are required and
/// must be nonempty on every row.
pub fn parse_source(source: &str) -> Result<Vec<FrameRecord>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(false)
        .from_reader(source.as_bytes());
    let mut rows = reader.records();
    let header = match rows.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(|e| DatasetError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?,
    };
    let mut positions = [0usize; 5];
    for (slot, name) in positions.iter_mut().zip(SOURCE_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MalformedRow {
                line: 1,
                reason: format!("missing column `{name}`"),
            })?;
    }
    let [id_at, image_at, caption_at, ecc_at, mv_at] = positions;

    let mut frames = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedRow { line, reason };
        let field = |at: usize, name: &str| -> Result<&str, DatasetError> {
            match row.get(at).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(malformed(format!("missing `{name}`"))),
            }
        };
        let frame = FrameRecord::new(
            field(id_at, "frame_id")?,
            field(image_at, "image_ref")?,
            row.get(caption_at)
                .filter(|c| !c.trim().is_empty())
                .ok_or_else(|| malformed("missing `gt_caption`".into()))?,
            field(ecc_at, "ecc")?
                .parse()
                .map_err(|e: crate::labels::UnknownLabel| malformed(e.to_string()))?,
            field(mv_at, "mv")?
                .parse()
                .map_err(|e: crate::labels::UnknownLabel| malformed(e.to_string()))?,
        );
        if !seen.insert(frame.frame_id.clone()) {
            return Err(DatasetError::DuplicateFrameId(frame.frame_id));
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Parses a source table and checks that each `image_ref` exists under `root`.
pub fn ingest(source: &str, root: &Path) -> Result<Manifest, DatasetError> {
    let frames = parse_source(source)?;
    for f in &frames {
        let path = root.join(&f.image_ref);
        if !path.is_file() {
            return Err(DatasetError::MissingImage {
                frame_id: f.frame_id.clone(),
                path,
            });
        }
    }
    let header = ManifestHeader {
        producer: "ingest".into(),
        source_sha256: Some(sha256_hex(source.as_bytes())),
        split: None,
    };
    Manifest::from_frames(header, frames)
}

/// Largest-remainder apportionment of `total` across strata of the given sizes.
///
/// Ties in the remainder go to the earlier stratum. Every quota is within one
/// frame of its exact proportional share.
pub fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let assigned: usize = quotas.iter().sum();
    let mut by_remainder: Vec<usize> = (0..sizes.len()).collect();
    // Stable sort keeps stratum order among equal remainders.
    by_remainder.sort_by_key(|&i| std::cmp::Reverse(sizes[i] * total % n));
    for &i in by_remainder.iter().take(total - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Assigns train/test membership stratum by stratum and tags nested training
/// subsets. The result depends only on the frames (not their order) and `spec`.
pub fn split(manifest: &Manifest, spec: &SplitSpec) -> Result<Manifest, DatasetError> {
    let n = manifest.len();
    if n == 0 || spec.test_count >= n {
        return Err(DatasetError::InvalidSplitSpec(format!(
            "test_count {} must be smaller than the manifest size {n}",
            spec.test_count
        )));
    }
    let train_size = n - spec.test_count;
    if spec.subset_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::InvalidSplitSpec(
            "subset sizes must be strictly ascending".into(),
        ));
    }
    if spec.subset_sizes.first() == Some(&0) {
        return Err(DatasetError::InvalidSplitSpec("subset sizes must be positive".into()));
    }
    if let Some(&largest) = spec.subset_sizes.last() {
        if largest > train_size {
            return Err(DatasetError::InvalidSplitSpec(format!(
                "subset of {largest} exceeds the train set of {train_size}"
            )));
        }
    }

    // Canonical order: strata by key, frames by id.
    let mut strata: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for f in manifest.frames() {
        strata.entry(spec.stratify_by.key(f)).or_default().push(&f.frame_id);
    }
    for ids in strata.values_mut() {
        ids.sort_unstable();
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let quotas = apportion(&sizes, spec.test_count);

    let mut rng = SeededRng::new(spec.seed);
    let mut test: HashSet<&str> = HashSet::with_capacity(spec.test_count);
    for ((stratum, ids), quota) in strata.iter_mut().zip(quotas) {
        if quota > ids.len() {
            return Err(DatasetError::StratumTooSmall {
                stratum: stratum.clone(),
                available: ids.len(),
                required: quota,
            });
        }
        rng.shuffle(ids);
        test.extend(ids[..quota].iter().copied());
    }

    let mut train: Vec<&str> = manifest
        .frames()
        .iter()
        .map(|f| f.frame_id.as_str())
        .filter(|id| !test.contains(id))
        .collect();
    train.sort_unstable();
    rng.shuffle(&mut train);
    let rank: BTreeMap<&str, usize> = train.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let frames = manifest
        .frames()
        .iter()
        .map(|f| {
            let mut f = f.clone();
            f.subset_tags.clear();
            match rank.get(f.frame_id.as_str()) {
                Some(&r) => {
                    f.split = Split::Train;
                    f.subset_tags = spec
                        .subset_sizes
                        .iter()
                        .filter(|&&s| r < s)
                        .map(|&s| SubsetTag(s))
                        .collect();
                }
                None => f.split = Split::Test,
            }
            f
        })
        .collect();

    let header = ManifestHeader {
        producer: "split".into(),
        source_sha256: manifest.header.source_sha256.clone(),
        split: Some(spec.clone()),
    };
    Manifest::from_frames(header, frames)
}
