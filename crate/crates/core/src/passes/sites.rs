use serde::{Deserialize, Serialize};

/// What an inserted instruction sequence is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    /// `unreachable` in a stack-canary postamble.
    StackCanary,
    /// `unreachable` guarding a heap chunk's underflow canary.
    HeapUnderflow,
    /// `unreachable` guarding a heap chunk's overflow canary.
    HeapOverflow,
    /// First instruction of a coverage shim.
    Coverage,
}

impl SiteKind {
    pub fn is_oracle(self) -> bool {
        !matches!(self, SiteKind::Coverage)
    }
}

/// One inserted location. `id` is the canary value for oracle sites and the
/// branch id (`cur_location`) for coverage sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub function: u32,
    pub offset: u32,
    pub kind: SiteKind,
    pub id: u64,
}

/// Locations of inserted code, keyed by (function index, instruction offset).
///
/// Serialized as a flat JSON array of `{function, offset, kind, id}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteTable {
    sites: Vec<Site>,
}

impl SiteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, site: Site) {
        self.sites.push(site);
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Site> {
        self.sites.iter()
    }

    pub fn count(&self, kind: SiteKind) -> usize {
        self.sites.iter().filter(|s| s.kind == kind).count()
    }

    /// The oracle whose `unreachable` sits at this location, if any.
    pub fn oracle_at(&self, function: u32, offset: u32) -> Option<SiteKind> {
        self.sites
            .iter()
            .find(|s| s.function == function && s.offset == offset && s.kind.is_oracle())
            .map(|s| s.kind)
    }

    /// Moves every site of `function` through an old-offset → new-offset map
    /// produced by a later rewrite of that function.
    pub fn remap(&mut self, function: u32, map: &[u32]) {
        for s in self.sites.iter_mut().filter(|s| s.function == function) {
            s.offset = map[s.offset as usize];
        }
    }

    pub fn extend(&mut self, other: SiteTable) {
        self.sites.extend(other.sites);
    }

    pub fn sort(&mut self) {
        self.sites.sort_by_key(|s| (s.function, s.offset));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("site table serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

impl FromIterator<Site> for SiteTable {
    fn from_iter<T: IntoIterator<Item = Site>>(iter: T) -> Self {
        SiteTable {
            sites: iter.into_iter().collect(),
        }
    }
}
