//! Label hierarchy: eleven leaf weather classes, three coarse groups and
//! three safety levels.
//!
//! Leaf indices follow alphabetical order of the identifiers so one-hot
//! positions never move between runs or files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shipped default taxonomy config.
pub const DEFAULT_TAXONOMY_TOML: &str = include_str!("../config/taxonomy.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafClass {
    Dew,
    FogSmog,
    Frost,
    Glaze,
    Hail,
    Lightning,
    Rain,
    Rainbow,
    Rime,
    Sandstorm,
    Snow,
}

impl LeafClass {
    pub const COUNT: usize = 11;

    pub const ALL: [LeafClass; 11] = [
        LeafClass::Dew,
        LeafClass::FogSmog,
        LeafClass::Frost,
        LeafClass::Glaze,
        LeafClass::Hail,
        LeafClass::Lightning,
        LeafClass::Rain,
        LeafClass::Rainbow,
        LeafClass::Rime,
        LeafClass::Sandstorm,
        LeafClass::Snow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or(Error::Index {
            index,
            len: Self::COUNT,
        })
    }

    pub fn id(self) -> &'static str {
        match self {
            LeafClass::Dew => "dew",
            LeafClass::FogSmog => "fog_smog",
            LeafClass::Frost => "frost",
            LeafClass::Glaze => "glaze",
            LeafClass::Hail => "hail",
            LeafClass::Lightning => "lightning",
            LeafClass::Rain => "rain",
            LeafClass::Rainbow => "rainbow",
            LeafClass::Rime => "rime",
            LeafClass::Sandstorm => "sandstorm",
            LeafClass::Snow => "snow",
        }
    }
}

impl fmt::Display for LeafClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Accepts the canonical identifier case-insensitively, plus `fog/smog`,
/// `fog-smog` and `fogsmog` for the fog class (the dataset's folder names).
impl FromStr for LeafClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        let norm = match norm.as_str() {
            "fog/smog" | "fog-smog" | "fogsmog" | "fog smog" => "fog_smog".to_string(),
            _ => norm,
        };
        LeafClass::ALL
            .iter()
            .copied()
            .find(|l| l.id() == norm)
            .ok_or_else(|| Error::UnknownLabel(s.trim().to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseGroup {
    Rainy,
    Dusty,
    Cold,
}

impl CoarseGroup {
    pub const COUNT: usize = 3;
    pub const ALL: [CoarseGroup; 3] = [CoarseGroup::Rainy, CoarseGroup::Dusty, CoarseGroup::Cold];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or(Error::Index {
            index,
            len: Self::COUNT,
        })
    }

    pub fn id(self) -> &'static str {
        match self {
            CoarseGroup::Rainy => "Rainy",
            CoarseGroup::Dusty => "Dusty",
            CoarseGroup::Cold => "Cold",
        }
    }
}

impl fmt::Display for CoarseGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for CoarseGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CoarseGroup::ALL
            .iter()
            .copied()
            .find(|g| g.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown group `{}`", s.trim())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SafetyLevel {
    Safe,
    PotentiallyHazardous,
    Dangerous,
}

impl SafetyLevel {
    pub const COUNT: usize = 3;
    pub const ALL: [SafetyLevel; 3] = [
        SafetyLevel::Safe,
        SafetyLevel::PotentiallyHazardous,
        SafetyLevel::Dangerous,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or(Error::Index {
            index,
            len: Self::COUNT,
        })
    }

    pub fn id(self) -> &'static str {
        match self {
            SafetyLevel::Safe => "Safe",
            SafetyLevel::PotentiallyHazardous => "PotentiallyHazardous",
            SafetyLevel::Dangerous => "Dangerous",
        }
    }
}

impl fmt::Display for SafetyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for SafetyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| *c != '_' && *c != ' ')
            .collect();
        SafetyLevel::ALL
            .iter()
            .copied()
            .find(|l| l.id().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::Validation(format!("unknown safety level `{}`", s.trim())))
    }
}

/// Total maps from leaf classes to groups and to safety levels.
///
/// Both maps are stored as arrays indexed by [`LeafClass::index`], so
/// totality holds by construction; [`Taxonomy::new`] additionally requires
/// every group to own at least one leaf.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    leaf_to_group: [CoarseGroup; 11],
    leaf_to_safety: [SafetyLevel; 11],
    version: String,
}

impl Taxonomy {
    pub fn new(
        leaf_to_group: [CoarseGroup; 11],
        leaf_to_safety: [SafetyLevel; 11],
        version: impl Into<String>,
    ) -> Result<Self> {
        for g in CoarseGroup::ALL {
            if !leaf_to_group.contains(&g) {
                return Err(Error::Validation(format!("group {g} has no leaves")));
            }
        }
        let version = version.into();
        if version.trim().is_empty() {
            return Err(Error::Validation("empty version tag".into()));
        }
        Ok(Self {
            leaf_to_group,
            leaf_to_safety,
            version,
        })
    }

    pub fn group_of(&self, leaf: LeafClass) -> CoarseGroup {
        self.leaf_to_group[leaf.index()]
    }

    pub fn safety_of(&self, leaf: LeafClass) -> SafetyLevel {
        self.leaf_to_safety[leaf.index()]
    }

    /// Pre-image of `group`, sorted by leaf index.
    pub fn leaves_of(&self, group: CoarseGroup) -> Vec<LeafClass> {
        LeafClass::ALL
            .iter()
            .copied()
            .filter(|l| self.group_of(*l) == group)
            .collect()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Renders the config document accepted by [`load_taxonomy`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "version = {}\n\n[groups]\n",
            toml_string(&self.version)
        ));
        for leaf in LeafClass::ALL {
            out.push_str(&format!("{} = \"{}\"\n", leaf.id(), self.group_of(leaf)));
        }
        out.push_str("\n[safety]\n");
        for leaf in LeafClass::ALL {
            out.push_str(&format!("{} = \"{}\"\n", leaf.id(), self.safety_of(leaf)));
        }
        out
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

pub fn default_taxonomy() -> Taxonomy {
    use CoarseGroup::*;
    use SafetyLevel::*;
    // dew, fog_smog, frost, glaze, hail, lightning, rain, rainbow, rime, sandstorm, snow
    let groups = [
        Cold, Dusty, Cold, Cold, Rainy, Rainy, Rainy, Rainy, Cold, Dusty, Cold,
    ];
    let safety = [
        Safe,
        Safe,
        PotentiallyHazardous,
        Dangerous,
        PotentiallyHazardous,
        Dangerous,
        Safe,
        Safe,
        PotentiallyHazardous,
        Dangerous,
        Safe,
    ];
    Taxonomy::new(groups, safety, "default-1").expect("default taxonomy is valid")
}

pub fn group_of(leaf: LeafClass, t: &Taxonomy) -> CoarseGroup {
    t.group_of(leaf)
}

pub fn leaves_of(group: CoarseGroup, t: &Taxonomy) -> Vec<LeafClass> {
    t.leaves_of(group)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    version: String,
    groups: BTreeMap<String, String>,
    safety: BTreeMap<String, String>,
}

/// Parses and validates a taxonomy config.
///
/// Grammar (TOML subset):
///
/// ```text
/// version = "<tag>"
/// [groups]
/// <leaf> = "Rainy" | "Dusty" | "Cold"        # one line per leaf, all 11 required
/// [safety]
/// <leaf> = "Safe" | "PotentiallyHazardous" | "Dangerous"
/// ```
///
/// Unknown top-level keys are parse errors. Unknown, missing or duplicated
/// leaves (for example `fog_smog` and `"fog/smog"` in one section) and
/// unknown targets are validation errors.
pub fn load_taxonomy(bytes: &[u8]) -> Result<Taxonomy> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(format!("not UTF-8: {e}")))?;
    let doc: TaxonomyDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let groups = section_map(&doc.groups, "groups", |s| s.parse::<CoarseGroup>())?;
    let safety = section_map(&doc.safety, "safety", |s| s.parse::<SafetyLevel>())?;
    Taxonomy::new(groups, safety, doc.version)
}

fn section_map<V: Copy>(
    raw: &BTreeMap<String, String>,
    section: &str,
    parse: impl Fn(&str) -> Result<V>,
) -> Result<[V; 11]> {
    let mut slots: [Option<V>; 11] = [None; 11];
    for (key, value) in raw {
        let leaf: LeafClass = key
            .parse()
            .map_err(|_| Error::Validation(format!("[{section}] unknown leaf `{key}`")))?;
        if slots[leaf.index()].is_some() {
            return Err(Error::Validation(format!(
                "[{section}] duplicate leaf `{leaf}`"
            )));
        }
        slots[leaf.index()] = Some(parse(value)?);
    }
    let mut out = Vec::with_capacity(11);
    for leaf in LeafClass::ALL {
        match slots[leaf.index()] {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Validation(format!(
                    "[{section}] missing leaf `{leaf}`"
                )));
            }
        }
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_indices_are_alphabetical_bijection() {
        let ids: Vec<&str> = LeafClass::ALL.iter().map(|l| l.id()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        for (i, l) in LeafClass::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(LeafClass::from_index(i).unwrap(), *l);
        }
        assert!(LeafClass::from_index(11).is_err());
    }

    #[test]
    fn default_groups() {
        let t = default_taxonomy();
        assert_eq!(group_of(LeafClass::Rain, &t), CoarseGroup::Rainy);
        assert_eq!(group_of(LeafClass::Lightning, &t), CoarseGroup::Rainy);
        assert_eq!(group_of(LeafClass::Sandstorm, &t), CoarseGroup::Dusty);
        assert_eq!(group_of(LeafClass::FogSmog, &t), CoarseGroup::Dusty);
        assert_eq!(group_of(LeafClass::Dew, &t), CoarseGroup::Cold);
        assert_eq!(group_of(LeafClass::Rime, &t), CoarseGroup::Cold);
    }

    #[test]
    fn leaves_of_groups() {
        use LeafClass::*;
        let t = default_taxonomy();
        assert_eq!(
            leaves_of(CoarseGroup::Rainy, &t),
            vec![Hail, Lightning, Rain, Rainbow]
        );
        assert_eq!(leaves_of(CoarseGroup::Dusty, &t), vec![FogSmog, Sandstorm]);
        assert_eq!(
            leaves_of(CoarseGroup::Cold, &t),
            vec![Dew, Frost, Glaze, Rime, Snow]
        );
    }

    #[test]
    fn partition_and_membership() {
        let t = default_taxonomy();
        let total: usize = CoarseGroup::ALL.iter().map(|g| t.leaves_of(*g).len()).sum();
        assert_eq!(total, 11);
        for leaf in LeafClass::ALL {
            assert!(t.leaves_of(t.group_of(leaf)).contains(&leaf));
        }
    }

    #[test]
    fn shipped_config_matches_default() {
        let loaded = load_taxonomy(DEFAULT_TAXONOMY_TOML.as_bytes()).unwrap();
        assert_eq!(loaded, default_taxonomy());
    }

    #[test]
    fn serialize_round_trip() {
        let t = default_taxonomy();
        let again = load_taxonomy(t.to_config_string().as_bytes()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn missing_leaf_rejected() {
        let text: String = DEFAULT_TAXONOMY_TOML
            .lines()
            .filter(|l| !l.starts_with("snow"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            load_taxonomy(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn remapping_is_data() {
        let text = DEFAULT_TAXONOMY_TOML.replacen("rain = \"Rainy\"", "rain = \"Cold\"", 1);
        let t = load_taxonomy(text.as_bytes()).unwrap();
        assert_eq!(t.group_of(LeafClass::Rain), CoarseGroup::Cold);
    }

    #[test]
    fn duplicate_leaf_via_alias_rejected() {
        let text =
            DEFAULT_TAXONOMY_TOML.replacen("[safety]", "\"fog/smog\" = \"Dusty\"\n\n[safety]", 1);
        assert!(matches!(
            load_taxonomy(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unknown_identifier_rejected() {
        let text = DEFAULT_TAXONOMY_TOML.replacen("[safety]", "tornado = \"Cold\"\n\n[safety]", 1);
        assert!(matches!(
            load_taxonomy(text.as_bytes()),
            Err(Error::Validation(_))
        ));
        let text = DEFAULT_TAXONOMY_TOML.replacen("dew = \"Cold\"", "dew = \"Wet\"", 1);
        assert!(matches!(
            load_taxonomy(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn unknown_section_is_parse_error() {
        let text = format!("{DEFAULT_TAXONOMY_TOML}\n[extra]\nfoo = \"bar\"\n");
        assert!(matches!(
            load_taxonomy(text.as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(load_taxonomy(b"version = "), Err(Error::Parse(_))));
    }

    #[test]
    fn empty_group_rejected() {
        let text = DEFAULT_TAXONOMY_TOML
            .replacen("sandstorm = \"Dusty\"", "sandstorm = \"Cold\"", 1)
            .replacen("fog_smog = \"Dusty\"", "fog_smog = \"Cold\"", 1);
        assert!(matches!(
            load_taxonomy(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn leaf_aliases_parse() {
        assert_eq!("fog/smog".parse::<LeafClass>().unwrap(), LeafClass::FogSmog);
        assert_eq!("Rain".parse::<LeafClass>().unwrap(), LeafClass::Rain);
        assert!(matches!(
            "tornado".parse::<LeafClass>(),
            Err(Error::UnknownLabel(_))
        ));
    }
}
