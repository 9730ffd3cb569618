//! Unified cross-dataset class universe.
//!
//! Every dataset keeps its own native label encoding on disk. In memory all
//! labels live in one unified id space: driving classes first, indoor classes
//! next, then the per-dataset negative classes ("Void", "Ignore"). A single
//! `ignore_id` marks pixels that carry no supervision at all.
//!
//! The class universe is declared in a tab-separated table (see
//! `data/rob_labels.tsv`) so experiments can swap it without touching code.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// The built-in table: 19 Cityscapes driving classes and 20 ScanNet indoor classes.
pub const DEFAULT_TABLE: &str = include_str!("../data/rob_labels.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Driving,
    Indoor,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Driving => "driving",
            Group::Indoor => "indoor",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "driving" => Ok(Group::Driving),
            "indoor" => Ok(Group::Indoor),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

/// Coarse categories used by category IoU. The first seven are the
/// Cityscapes driving categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Flat,
    Construction,
    Object,
    Nature,
    Sky,
    Human,
    Vehicle,
    IndoorOther,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Flat,
        Category::Construction,
        Category::Object,
        Category::Nature,
        Category::Sky,
        Category::Human,
        Category::Vehicle,
        Category::IndoorOther,
    ];

    pub const DRIVING: [Category; 7] = [
        Category::Flat,
        Category::Construction,
        Category::Object,
        Category::Nature,
        Category::Sky,
        Category::Human,
        Category::Vehicle,
    ];

    /// Id of the category in a category map.
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Flat => "flat",
            Category::Construction => "construction",
            Category::Object => "object",
            Category::Nature => "nature",
            Category::Sky => "sky",
            Category::Human => "human",
            Category::Vehicle => "vehicle",
            Category::IndoorOther => "indoor_other",
        }
    }

    /// Categories whose members are countable objects with instance ids.
    pub fn has_instances(self) -> bool {
        matches!(self, Category::Human | Category::Vehicle)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
    pub group: Group,
    pub category: Category,
    pub has_instances: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeClass {
    pub id: u8,
    pub name: String,
}

/// Native encoding of one dataset.
#[derive(Clone, Debug)]
pub struct DatasetMap {
    id: String,
    group: Group,
    to_unified: Box<[Option<u8>; 256]>,
    to_native: Box<[Option<u8>; 256]>,
    negative: Option<(NegativeClass, u8)>,
    native_ignore: u8,
}

impl DatasetMap {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn native_ignore(&self) -> u8 {
        self.native_ignore
    }

    /// Negative class (unified) and its native code.
    pub fn negative(&self) -> Option<(&NegativeClass, u8)> {
        self.negative.as_ref().map(|(n, native)| (n, *native))
    }

    pub fn unified(&self, native: u8) -> Option<u8> {
        self.to_unified[native as usize]
    }

    pub fn native(&self, unified: u8) -> Option<u8> {
        self.to_native[unified as usize]
    }

    /// Unified ids of this dataset's own object classes, ascending.
    pub fn classes(&self) -> Vec<u8> {
        let negative = self.negative.as_ref().map(|(n, _)| n.id);
        (0..=255u8)
            .filter(|&u| self.to_native[u as usize].is_some() && Some(u) != negative)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemapKind {
    Identity,
    AutoVoid,
    ToClass,
}

/// How predictions of classes foreign to a benchmark are exported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapStrategy {
    pub kind: RemapKind,
    pub target: Option<u8>,
}

impl RemapStrategy {
    pub fn identity() -> Self {
        Self {
            kind: RemapKind::Identity,
            target: None,
        }
    }

    pub fn auto_void() -> Self {
        Self {
            kind: RemapKind::AutoVoid,
            target: None,
        }
    }

    pub fn to_class(target: u8) -> Self {
        Self {
            kind: RemapKind::ToClass,
            target: Some(target),
        }
    }

    /// Parses `identity`, `auto_void` or `to_class:<class>`, where the class is
    /// a unified id or a name qualified as `<group>/<name>` when ambiguous.
    pub fn parse(text: &str, space: &LabelSpace) -> Result<Self> {
        match text.trim() {
            "identity" => Ok(Self::identity()),
            "auto_void" | "auto-void" => Ok(Self::auto_void()),
            other => {
                let Some(target) = other.strip_prefix("to_class:") else {
                    return Err(Error::config(
                        "strategy",
                        format!("expected identity, auto_void or to_class:<class>, got `{other}`"),
                    ));
                };
                Ok(Self::to_class(space.lookup(target)?))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabelSpace {
    version: u32,
    classes: Vec<ClassInfo>,
    negatives: Vec<NegativeClass>,
    datasets: BTreeMap<String, DatasetMap>,
    ignore_id: u8,
}

/// Builds the default ROB configuration: 19 driving and 20 indoor classes.
pub fn build_default_space() -> LabelSpace {
    LabelSpace::parse(DEFAULT_TABLE).expect("built-in label table is valid")
}

impl LabelSpace {
    /// Parses a label table. See `data/rob_labels.tsv` for the format.
    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::LabelTable { line, message };

        let mut version = None;
        let mut ignore_id = None;
        let mut native_ignore = None;
        let mut dataset_ids: Option<Vec<String>> = None;
        let mut classes = Vec::new();
        let mut negatives = Vec::new();
        // per dataset: (native, unified) pairs
        let mut pairs: Vec<Vec<(u8, u8)>> = Vec::new();
        let mut negative_natives: Vec<Option<(usize, u8)>> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if let Some(directive) = fields[0].strip_prefix('@') {
                let value = fields
                    .get(1)
                    .ok_or_else(|| err(line_no, format!("directive @{directive} needs a value")))?;
                match directive {
                    "version" => {
                        version = Some(value.parse::<u32>().map_err(|e| err(line_no, e.to_string()))?)
                    }
                    "ignore_id" => {
                        ignore_id = Some(value.parse::<u8>().map_err(|e| err(line_no, e.to_string()))?)
                    }
                    "native_ignore" => {
                        native_ignore =
                            Some(value.parse::<u8>().map_err(|e| err(line_no, e.to_string()))?)
                    }
                    other => return Err(err(line_no, format!("unknown directive @{other}"))),
                }
                continue;
            }
            if fields[0] == "unified_id" {
                const FIXED: [&str; 5] = ["unified_id", "name", "group", "category", "instances"];
                if fields.len() <= FIXED.len() || fields[..FIXED.len()] != FIXED {
                    return Err(err(
                        line_no,
                        "header must start with unified_id, name, group, category, instances \
                         followed by at least one dataset column"
                            .into(),
                    ));
                }
                let ids: Vec<String> = fields[FIXED.len()..].iter().map(|s| s.to_string()).collect();
                for (i, id) in ids.iter().enumerate() {
                    if id.is_empty() || ids[..i].contains(id) {
                        return Err(err(line_no, format!("bad or duplicate dataset column `{id}`")));
                    }
                }
                pairs = vec![Vec::new(); ids.len()];
                negative_natives = vec![None; ids.len()];
                dataset_ids = Some(ids);
                continue;
            }
            let Some(ids) = dataset_ids.as_ref() else {
                return Err(err(line_no, "class record before the header line".into()));
            };
            if fields.len() != 5 + ids.len() {
                return Err(err(
                    line_no,
                    format!("expected {} columns, found {}", 5 + ids.len(), fields.len()),
                ));
            }
            let unified: u8 = fields[0]
                .parse()
                .map_err(|_| err(line_no, format!("bad unified id `{}`", fields[0])))?;
            let name = fields[1].to_string();
            if name.is_empty() {
                return Err(err(line_no, "empty class name".into()));
            }
            let natives = fields[5..]
                .iter()
                .map(|f| match *f {
                    "-" => Ok(None),
                    v => v
                        .parse::<u8>()
                        .map(Some)
                        .map_err(|_| err(line_no, format!("bad native id `{v}`"))),
                })
                .collect::<Result<Vec<_>>>()?;

            if fields[2] == "negative" {
                let slot = negatives.len();
                negatives.push(NegativeClass { id: unified, name });
                for (d, native) in natives.iter().enumerate() {
                    if let Some(native) = native {
                        if negative_natives[d].is_some() {
                            return Err(err(line_no, format!("dataset `{}` has two negative classes", ids[d])));
                        }
                        negative_natives[d] = Some((slot, *native));
                        pairs[d].push((*native, unified));
                    }
                }
                continue;
            }

            let group: Group = fields[2].parse().map_err(|e| err(line_no, e))?;
            let category: Category = fields[3].parse().map_err(|e| err(line_no, e))?;
            let has_instances = match fields[4] {
                "yes" => true,
                "no" => false,
                other => return Err(err(line_no, format!("instances must be yes/no, got `{other}`"))),
            };
            classes.push(ClassInfo {
                id: unified,
                name,
                group,
                category,
                has_instances,
            });
            for (d, native) in natives.iter().enumerate() {
                if let Some(native) = native {
                    pairs[d].push((*native, unified));
                }
            }
        }

        let ids = dataset_ids.ok_or_else(|| err(0, "missing header line".into()))?;
        let ignore_id = ignore_id.ok_or_else(|| err(0, "missing @ignore_id".into()))?;
        let native_ignore = native_ignore.unwrap_or(ignore_id);

        let mut datasets = BTreeMap::new();
        for (d, id) in ids.iter().enumerate() {
            let mut to_unified = Box::new([None; 256]);
            let mut to_native = Box::new([None; 256]);
            for &(native, unified) in &pairs[d] {
                if native == native_ignore {
                    return Err(err(0, format!("dataset `{id}` maps its ignore code {native}")));
                }
                if to_unified[native as usize].replace(unified).is_some() {
                    return Err(err(0, format!("dataset `{id}` uses native id {native} twice")));
                }
                to_native[unified as usize] = Some(native);
            }
            let own_groups: Vec<Group> = classes
                .iter()
                .filter(|c| to_native[c.id as usize].is_some())
                .map(|c| c.group)
                .collect();
            let group = *own_groups
                .first()
                .ok_or_else(|| err(0, format!("dataset `{id}` has no object classes")))?;
            if own_groups.iter().any(|&g| g != group) {
                return Err(err(0, format!("dataset `{id}` mixes driving and indoor classes")));
            }
            let negative = negative_natives[d].map(|(slot, native)| (negatives[slot].clone(), native));
            datasets.insert(
                id.clone(),
                DatasetMap {
                    id: id.clone(),
                    group,
                    to_unified,
                    to_native,
                    negative,
                    native_ignore,
                },
            );
        }

        let space = LabelSpace {
            version: version.unwrap_or(1),
            classes,
            negatives,
            datasets,
            ignore_id,
        };
        space.validate()?;
        Ok(space)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLabelSpace(m));
        for (i, class) in self.classes.iter().enumerate() {
            if class.id as usize != i {
                return bad(format!("object class ids must be contiguous from 0, found {} at position {i}", class.id));
            }
            if class.group == Group::Driving && class.category == Category::IndoorOther {
                return bad(format!("driving class `{}` needs a driving category", class.name));
            }
            if class.group == Group::Indoor && class.category != Category::IndoorOther {
                return bad(format!("indoor class `{}` must use category indoor_other", class.name));
            }
        }
        let n = self.classes.len();
        for (i, negative) in self.negatives.iter().enumerate() {
            if negative.id as usize != n + i {
                return bad(format!("negative `{}` must follow the object classes contiguously", negative.name));
            }
        }
        if (self.ignore_id as usize) < self.num_labels() {
            return bad(format!("ignore_id {} collides with a class id", self.ignore_id));
        }
        Ok(())
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn ignore_id(&self) -> u8 {
        self.ignore_id
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn negatives(&self) -> &[NegativeClass] {
        &self.negatives
    }

    /// Number of object classes (the model's output width).
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Object classes plus negative classes.
    pub fn num_labels(&self) -> usize {
        self.classes.len() + self.negatives.len()
    }

    pub fn class(&self, id: u8) -> Option<&ClassInfo> {
        self.classes.get(id as usize)
    }

    pub fn is_object(&self, id: u8) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn is_negative(&self, id: u8) -> bool {
        self.negatives.iter().any(|n| n.id == id)
    }

    pub fn group_of(&self, id: u8) -> Option<Group> {
        self.class(id).map(|c| c.group)
    }

    pub fn category_of(&self, id: u8) -> Option<Category> {
        self.class(id).map(|c| c.category)
    }

    pub fn group_classes(&self, group: Group) -> Vec<u8> {
        self.classes.iter().filter(|c| c.group == group).map(|c| c.id).collect()
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetMap> {
        self.datasets.get(id).ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }

    /// Resolves a class reference: a unified id, a unique name, or `<group>/<name>`.
    pub fn lookup(&self, reference: &str) -> Result<u8> {
        let reference = reference.trim();
        if let Ok(id) = reference.parse::<u8>() {
            if (id as usize) < self.num_labels() {
                return Ok(id);
            }
            return Err(Error::UnknownClass(reference.to_string()));
        }
        let (group, name) = match reference.split_once('/') {
            Some((g, n)) => (
                Some(g.parse::<Group>().map_err(|_| Error::UnknownClass(reference.to_string()))?),
                n,
            ),
            None => (None, reference),
        };
        let mut hits = self
            .classes
            .iter()
            .filter(|c| c.name.eq_ignore_ascii_case(name) && group.is_none_or(|g| g == c.group))
            .map(|c| c.id)
            .chain(
                self.negatives
                    .iter()
                    .filter(|n| group.is_none() && n.name.eq_ignore_ascii_case(name))
                    .map(|n| n.id),
            );
        match (hits.next(), hits.next()) {
            (Some(id), None) => Ok(id),
            (Some(_), Some(_)) => Err(Error::UnknownClass(format!(
                "`{reference}` is ambiguous; qualify it as <group>/<name>"
            ))),
            _ => Err(Error::UnknownClass(reference.to_string())),
        }
    }

    /// Converts a native label map of `dataset_id` into unified ids.
    ///
    /// The dataset's native ignore code and its negative class both become
    /// `ignore_id`: ground-truth "Void" carries no supervision.
    pub fn encode(&self, dataset_id: &str, native: &LabelMap) -> Result<LabelMap> {
        let map = self.dataset(dataset_id)?;
        native.try_map(|v| self.encode_pixel(dataset_id, map, v))
    }

    /// Like [`encode`](Self::encode) but keeps the dataset's negative class as
    /// its unified id, for scoring negative images.
    pub fn encode_keep_negative(&self, dataset_id: &str, native: &LabelMap) -> Result<LabelMap> {
        let map = self.dataset(dataset_id)?;
        let negative = map.negative().map(|(n, native)| (n.id, native));
        native.try_map(|v| match negative {
            Some((id, n)) if v == n => Ok(id),
            _ => self.encode_pixel(dataset_id, map, v),
        })
    }

    fn encode_pixel(&self, dataset_id: &str, map: &DatasetMap, v: u8) -> Result<u8> {
        if v == map.native_ignore || map.negative().is_some_and(|(_, n)| n == v) {
            return Ok(self.ignore_id);
        }
        map.unified(v).ok_or_else(|| Error::UnknownNativeId {
            dataset: dataset_id.to_string(),
            id: v,
        })
    }

    fn check_strategy(&self, dest: &DatasetMap, strategy: &RemapStrategy) -> Result<()> {
        if strategy.kind == RemapKind::ToClass {
            let target = strategy.target.ok_or(Error::MissingTarget)?;
            if dest.native(target).is_none() || !self.is_object(target) {
                return Err(Error::InvalidTarget {
                    dataset: dest.id.clone(),
                    target,
                });
            }
        }
        Ok(())
    }

    /// Replaces predictions foreign to `dest_dataset` according to `strategy`,
    /// staying in unified ids.
    pub fn resolve_foreign(
        &self,
        pred: &LabelMap,
        dest_dataset: &str,
        strategy: &RemapStrategy,
    ) -> Result<LabelMap> {
        let dest = self.dataset(dest_dataset)?;
        self.check_strategy(dest, strategy)?;
        let void = dest.negative().map(|(n, _)| n.id);
        pred.try_map(|v| {
            if v == self.ignore_id || dest.native(v).is_some() {
                return Ok(v);
            }
            match strategy.kind {
                RemapKind::Identity => Ok(v),
                RemapKind::AutoVoid => void.ok_or_else(|| {
                    Error::InvalidLabelSpace(format!("dataset `{dest_dataset}` has no negative class"))
                }),
                RemapKind::ToClass => Ok(strategy.target.expect("checked above")),
            }
        })
    }

    /// Exports a unified prediction map in the native encoding of `dest_dataset`.
    ///
    /// Foreign predictions are resolved by `strategy`; under `identity` they
    /// are written unchanged for benchmarks that map unknown ids themselves.
    pub fn remap_for_benchmark(
        &self,
        pred: &LabelMap,
        dest_dataset: &str,
        strategy: &RemapStrategy,
    ) -> Result<LabelMap> {
        let resolved = self.resolve_foreign(pred, dest_dataset, strategy)?;
        let dest = self.dataset(dest_dataset)?;
        Ok(resolved.map(|v| {
            if v == self.ignore_id {
                dest.native_ignore
            } else {
                dest.native(v).unwrap_or(v)
            }
        }))
    }

    /// Maps object classes to their category index; negatives and ignore pass through.
    pub fn class_to_category(&self, pred: &LabelMap) -> LabelMap {
        pred.map(|v| self.category_of(v).map_or(v, Category::index))
    }

    /// Renders the space back into the declarative table format.
    pub fn to_table(&self) -> String {
        let ids: Vec<&String> = self.datasets.keys().collect();
        let mut out = String::new();
        out.push_str(&format!("@version\t{}\n@ignore_id\t{}\n", self.version, self.ignore_id));
        if let Some(first) = self.datasets.values().next() {
            out.push_str(&format!("@native_ignore\t{}\n", first.native_ignore));
        }
        out.push_str("unified_id\tname\tgroup\tcategory\tinstances");
        for id in &ids {
            out.push('\t');
            out.push_str(id);
        }
        out.push('\n');
        let natives = |unified: u8| {
            ids.iter()
                .map(|id| {
                    self.datasets[*id]
                        .native(unified)
                        .map_or_else(|| "-".to_string(), |n| n.to_string())
                })
                .collect::<Vec<_>>()
                .join("\t")
        };
        for c in &self.classes {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                c.id,
                c.name,
                c.group,
                c.category,
                if c.has_instances { "yes" } else { "no" },
                natives(c.id)
            ));
        }
        for n in &self.negatives {
            out.push_str(&format!("{}\t{}\tnegative\t-\t-\t{}\n", n.id, n.name, natives(n.id)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_keep_negative_scores_void() {
        let s = build_default_space();
        let native = LabelMap::new(1, 3, vec![0, 7, 255]).unwrap();
        assert_eq!(s.encode("wilddash", &native).unwrap().data(), &[255, 0, 255]);
        assert_eq!(s.encode_keep_negative("wilddash", &native).unwrap().data(), &[39, 0, 255]);
        let scan = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        assert_eq!(s.encode_keep_negative("scannet", &scan).unwrap().data(), &[40, 19]);
    }

    fn space() -> LabelSpace {
        build_default_space()
    }

    #[test]
    fn default_space_has_39_object_classes() {
        let s = space();
        assert_eq!(s.num_classes(), 39);
        assert_eq!(s.group_classes(Group::Driving).len(), 19);
        assert_eq!(s.group_classes(Group::Indoor).len(), 20);
    }

    #[test]
    fn groups_are_disjoint_and_negatives_separate() {
        let s = space();
        let driving = s.group_classes(Group::Driving);
        let indoor = s.group_classes(Group::Indoor);
        assert!(driving.iter().all(|d| !indoor.contains(d)));
        for n in s.negatives() {
            assert!(!s.is_object(n.id));
            assert_ne!(n.id, s.ignore_id());
        }
        assert!(!s.is_object(s.ignore_id()));
        assert_eq!(s.dataset("cityscapes").unwrap().negative().unwrap().0.name, "Void");
        assert_eq!(s.dataset("scannet").unwrap().negative().unwrap().0.name, "Ignore");
    }

    #[test]
    fn driving_classes_use_seven_categories() {
        let s = space();
        let mut seen: Vec<Category> = s
            .classes()
            .iter()
            .filter(|c| c.group == Group::Driving)
            .map(|c| c.category)
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, Category::DRIVING.to_vec());
    }

    #[test]
    fn dataset_groups() {
        let s = space();
        for id in ["cityscapes", "wilddash", "kitti"] {
            assert_eq!(s.dataset(id).unwrap().group(), Group::Driving);
        }
        assert_eq!(s.dataset("scannet").unwrap().group(), Group::Indoor);
        assert_eq!(s.dataset("scannet").unwrap().classes().len(), 20);
    }

    #[test]
    fn encode_all_ignore() {
        let s = space();
        let native = LabelMap::filled(3, 4, 255);
        let unified = s.encode("cityscapes", &native).unwrap();
        assert!(unified.data().iter().all(|&v| v == s.ignore_id()));
    }

    #[test]
    fn encode_known_ids_by_hand() {
        let s = space();
        // cityscapes labelId 7 = road (unified 0), 26 = car (unified 13)
        let native = LabelMap::new(2, 2, vec![7, 26, 26, 7]).unwrap();
        let unified = s.encode("cityscapes", &native).unwrap();
        assert_eq!(unified.data(), &[0, 13, 13, 0]);
        // scannet nyu40 1 = wall (unified 19), 39 = otherfurniture (unified 38)
        let native = LabelMap::new(2, 2, vec![1, 39, 1, 39]).unwrap();
        assert_eq!(s.encode("scannet", &native).unwrap().data(), &[19, 38, 19, 38]);
    }

    #[test]
    fn encode_unknown_native_id() {
        let s = space();
        let native = LabelMap::new(1, 2, vec![7, 250]).unwrap();
        match s.encode("cityscapes", &native) {
            Err(Error::UnknownNativeId { dataset, id }) => {
                assert_eq!(dataset, "cityscapes");
                assert_eq!(id, 250);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn remap_native_only_is_plain_inverse() {
        let s = space();
        let pred = LabelMap::new(1, 3, vec![0, 10, 13]).unwrap();
        for strategy in [RemapStrategy::identity(), RemapStrategy::auto_void(), RemapStrategy::to_class(3)] {
            let out = s.remap_for_benchmark(&pred, "cityscapes", &strategy).unwrap();
            assert_eq!(out.data(), &[7, 23, 26]);
        }
    }

    #[test]
    fn remap_indoor_pixel_to_void() {
        let s = space();
        let pred = LabelMap::new(1, 2, vec![0, 25]).unwrap();
        let out = s.remap_for_benchmark(&pred, "cityscapes", &RemapStrategy::auto_void()).unwrap();
        assert_eq!(out.data(), &[7, 0]);
    }

    #[test]
    fn remap_indoor_pixel_to_wall() {
        let s = space();
        let wall = s.lookup("driving/wall").unwrap();
        assert_eq!(wall, 3);
        let pred = LabelMap::new(1, 2, vec![0, 25]).unwrap();
        let out = s
            .remap_for_benchmark(&pred, "cityscapes", &RemapStrategy::to_class(wall))
            .unwrap();
        assert_eq!(out.data(), &[7, 12]);
    }

    #[test]
    fn remap_identity_keeps_foreign_ids() {
        let s = space();
        let pred = LabelMap::new(1, 2, vec![2, 25]).unwrap();
        let out = s.remap_for_benchmark(&pred, "cityscapes", &RemapStrategy::identity()).unwrap();
        assert_eq!(out.data(), &[11, 25]);
    }

    #[test]
    fn remap_missing_target() {
        let s = space();
        let pred = LabelMap::filled(1, 1, 0);
        let strategy = RemapStrategy {
            kind: RemapKind::ToClass,
            target: None,
        };
        assert!(matches!(
            s.remap_for_benchmark(&pred, "cityscapes", &strategy),
            Err(Error::MissingTarget)
        ));
        // target must belong to the destination dataset
        assert!(matches!(
            s.remap_for_benchmark(&pred, "cityscapes", &RemapStrategy::to_class(20)),
            Err(Error::InvalidTarget { .. })
        ));
    }

    #[test]
    fn categories() {
        let s = space();
        let road = LabelMap::filled(2, 2, 0);
        assert!(s.class_to_category(&road).data().iter().all(|&c| c == Category::Flat.index()));
        let vehicles = LabelMap::new(1, 2, vec![13, 14]).unwrap();
        assert_eq!(
            s.class_to_category(&vehicles).data(),
            &[Category::Vehicle.index(), Category::Vehicle.index()]
        );
        let with_ignore = LabelMap::new(1, 3, vec![255, 39, 11]).unwrap();
        assert_eq!(
            s.class_to_category(&with_ignore).data(),
            &[255, 39, Category::Human.index()]
        );
    }

    #[test]
    fn lookup_names() {
        let s = space();
        assert!(s.lookup("wall").is_err());
        assert_eq!(s.lookup("indoor/wall").unwrap(), 19);
        assert_eq!(s.lookup("Void").unwrap(), 39);
        assert_eq!(s.lookup("car").unwrap(), 13);
        assert_eq!(s.lookup("13").unwrap(), 13);
        assert!(s.lookup("200").is_err());
    }

    #[test]
    fn strategy_parse() {
        let s = space();
        assert_eq!(RemapStrategy::parse("auto_void", &s).unwrap(), RemapStrategy::auto_void());
        assert_eq!(
            RemapStrategy::parse("to_class:driving/wall", &s).unwrap(),
            RemapStrategy::to_class(3)
        );
        assert!(RemapStrategy::parse("nearest", &s).is_err());
    }

    #[test]
    fn table_round_trip() {
        let s = space();
        let again = LabelSpace::parse(&s.to_table()).unwrap();
        assert_eq!(again.to_table(), s.to_table());
        assert_eq!(again.classes(), s.classes());
    }

    #[test]
    fn table_errors() {
        assert!(LabelSpace::parse("").is_err());
        let dup = "@ignore_id\t255\nunified_id\tname\tgroup\tcategory\tinstances\td\n\
                   0\ta\tdriving\tflat\tno\t1\n1\tb\tdriving\tflat\tno\t1\n";
        assert!(matches!(LabelSpace::parse(dup), Err(Error::LabelTable { .. })));
        let gap = "@ignore_id\t255\nunified_id\tname\tgroup\tcategory\tinstances\td\n\
                   0\ta\tdriving\tflat\tno\t1\n2\tb\tdriving\tflat\tno\t2\n";
        assert!(matches!(LabelSpace::parse(gap), Err(Error::InvalidLabelSpace(_))));
    }
}
