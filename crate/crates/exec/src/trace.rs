use std::ops::Deref;

pub const MAP_SIZE: usize = 65536;

/// Snapshot of the 64 KiB edge-count map.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TraceMap(Box<[u8]>);

impl TraceMap {
    pub fn zeroed() -> Self {
        TraceMap(vec![0; MAP_SIZE].into_boxed_slice())
    }

    pub fn from_slice(bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), MAP_SIZE);
        TraceMap(bytes.into())
    }

    /// (index, count) for every non-zero counter.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.0.iter().enumerate().filter(|(_, c)| **c != 0).map(|(i, c)| (i, *c))
    }

    pub fn edges_hit(&self) -> usize {
        self.0.iter().filter(|c| **c != 0).count()
    }
}

impl Deref for TraceMap {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for TraceMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TraceMap({} edges)", self.edges_hit())
    }
}
